//! Reading PhysioNet-style ECG records.
//!
//! A record consists of a text header (`<id>.hea`), a binary sample file
//! (format 16 or 212) and per-minute apnea labels, either as an MIT
//! annotation file (`<id>.apn`) or a line-per-minute text file
//! (`<id>.apn.txt`). Only the first signal of a multi-signal record is read.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::Label;

/// Gain used when a header omits it (or gives 0), in adu per mV.
pub const DEFAULT_GAIN: f64 = 200.0;

#[derive(Debug, Error)]
pub enum EcgIoError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported sample format {0} (only 16 and 212 are supported)")]
    UnsupportedFormat(u32),
    #[error("sample file size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("annotation file truncated at byte {0}")]
    TruncatedFile(usize),
    #[error("unknown annotation code {code} at byte {offset}")]
    UnknownCode { code: u8, offset: usize },
    #[error("bad label character on line {0}")]
    BadLabelChar(usize),
    #[error("bad annotation code map entry `{0}`")]
    BadCodeMap(String),
    #[error("no minute labels found for record {0}")]
    MissingLabels(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EcgIoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EcgIoError + '_ {
    move |source| EcgIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Storage description of one signal, from a header signal line.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub file_name: String,
    pub format_code: u32,
    /// adu per mV
    pub gain: f64,
    /// adu value corresponding to 0 mV
    pub baseline: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordHeader {
    pub record_id: String,
    pub num_signals: usize,
    pub sampling_rate: f64,
    pub num_samples: usize,
    /// Signal lines in header order. May be empty when the header only has a
    /// record line, in which case [`RecordHeader::first_signal`] falls back
    /// to format 16 with the default gain.
    pub signals: Vec<SignalSpec>,
}

impl RecordHeader {
    pub fn first_signal(&self) -> SignalSpec {
        self.signals.first().cloned().unwrap_or_else(|| SignalSpec {
            file_name: format!("{}.dat", self.record_id),
            format_code: 16,
            gain: DEFAULT_GAIN,
            baseline: 0,
        })
    }

    /// Number of interleaved signals stored in the first signal's file.
    fn frame_width(&self) -> usize {
        match self.signals.first() {
            None => 1,
            Some(first) => self
                .signals
                .iter()
                .filter(|s| s.file_name == first.file_name)
                .count()
                .max(1),
        }
    }

    /// Renders the header in WFDB text form.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {} {}\n",
            self.record_id,
            self.num_signals,
            fmt_number(self.sampling_rate),
            self.num_samples
        );
        for s in &self.signals {
            out.push_str(&format!(
                "{} {} {}({})/mV 16 0 0 0 0 ECG\n",
                s.file_name,
                s.format_code,
                fmt_number(s.gain),
                s.baseline
            ));
        }
        out
    }
}

fn fmt_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    /// First-signal samples in mV.
    pub samples: Vec<f64>,
    pub sampling_rate: f64,
    pub minute_labels: Vec<Label>,
}

impl EcgRecord {
    pub fn samples_per_minute(&self) -> usize {
        (60.0 * self.sampling_rate).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    AnnotationFile,
    TextFile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinuteLabels {
    pub labels: Vec<Label>,
    pub source: LabelSource,
}

/// Mapping from MIT annotation codes to minute labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMap(BTreeMap<u8, Label>);

impl Default for CodeMap {
    /// `1 → N`, `8 → A`: the WFDB codes for the `N` and `A` mnemonics.
    fn default() -> Self {
        CodeMap(BTreeMap::from([(1, Label::N), (8, Label::A)]))
    }
}

impl CodeMap {
    pub fn get(&self, code: u8) -> Option<Label> {
        self.0.get(&code).copied()
    }

    /// Parses `"1:N,8:A"`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for entry in s.split(',').map(str::trim).filter(|e| !e.is_empty()) {
            let (code, label) = entry
                .split_once(':')
                .ok_or_else(|| EcgIoError::BadCodeMap(entry.to_string()))?;
            let code: u8 = code
                .trim()
                .parse()
                .map_err(|_| EcgIoError::BadCodeMap(entry.to_string()))?;
            let mut chars = label.trim().chars();
            let label = match (chars.next(), chars.next()) {
                (Some(c), None) => Label::from_char(c),
                _ => None,
            }
            .ok_or_else(|| EcgIoError::BadCodeMap(entry.to_string()))?;
            if code >= 59 {
                return Err(EcgIoError::BadCodeMap(entry.to_string()));
            }
            map.insert(code, label);
        }
        if map.is_empty() {
            return Err(EcgIoError::BadCodeMap(s.to_string()));
        }
        Ok(CodeMap(map))
    }

    pub fn to_config_string(&self) -> String {
        self.0
            .iter()
            .map(|(c, l)| format!("{c}:{l}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub fn read_header(path: &Path) -> Result<RecordHeader> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_header(&text)
}

/// Parses the text of a `.hea` file.
pub fn parse_header(text: &str) -> Result<RecordHeader> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let record_line = lines
        .next()
        .ok_or_else(|| EcgIoError::MalformedHeader("empty header".into()))?;
    let tokens: Vec<&str> = record_line.split_whitespace().collect();
    if tokens.len() < 4 {
        return Err(EcgIoError::MalformedHeader(format!(
            "record line needs at least 4 fields, found {}",
            tokens.len()
        )));
    }
    // "name/segments" marks a multi-segment record; only the name is kept.
    let record_id = tokens[0].split('/').next().unwrap_or(tokens[0]).to_string();
    let num_signals: usize = tokens[1]
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| EcgIoError::MalformedHeader(format!("bad signal count `{}`", tokens[1])))?;
    // Sampling frequency may carry "/counter_freq(base)" suffixes.
    let fs_token = tokens[2].split(['/', '(']).next().unwrap_or("");
    let sampling_rate: f64 = fs_token
        .parse()
        .ok()
        .filter(|&f: &f64| f > 0.0 && f.is_finite())
        .ok_or_else(|| EcgIoError::MalformedHeader(format!("bad sampling rate `{}`", tokens[2])))?;
    let num_samples: usize = tokens[3]
        .parse()
        .map_err(|_| EcgIoError::MalformedHeader(format!("bad sample count `{}`", tokens[3])))?;

    let mut signals = Vec::new();
    for line in lines.take(num_signals) {
        signals.push(parse_signal_line(line)?);
    }
    if let Some(first) = signals.first() {
        if first.format_code != 16 && first.format_code != 212 {
            return Err(EcgIoError::UnsupportedFormat(first.format_code));
        }
    }
    Ok(RecordHeader {
        record_id,
        num_signals,
        sampling_rate,
        num_samples,
        signals,
    })
}

fn parse_signal_line(line: &str) -> Result<SignalSpec> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() < 2 {
        return Err(EcgIoError::MalformedHeader(format!("short signal line `{line}`")));
    }
    // Format may carry "x<skew>" / ":<skew>" / "+<offset>" suffixes.
    let fmt_digits: String = tokens[1].chars().take_while(char::is_ascii_digit).collect();
    let format_code: u32 = fmt_digits
        .parse()
        .map_err(|_| EcgIoError::MalformedHeader(format!("bad format `{}`", tokens[1])))?;
    if format_code != 16 && format_code != 212 {
        return Err(EcgIoError::UnsupportedFormat(format_code));
    }
    let mut gain = DEFAULT_GAIN;
    let mut baseline = 0;
    let mut baseline_set = false;
    if let Some(g) = tokens.get(2) {
        // "200", "200/mV", "200(0)/mV"
        let g = g.split('/').next().unwrap_or("");
        let (gain_str, base_str) = match g.split_once('(') {
            Some((a, b)) => (a, Some(b.trim_end_matches(')'))),
            None => (g, None),
        };
        let parsed: f64 = gain_str
            .parse()
            .map_err(|_| EcgIoError::MalformedHeader(format!("bad gain `{}`", tokens[2])))?;
        if parsed > 0.0 {
            gain = parsed;
        }
        if let Some(b) = base_str {
            baseline = b
                .parse()
                .map_err(|_| EcgIoError::MalformedHeader(format!("bad baseline `{}`", tokens[2])))?;
            baseline_set = true;
        }
    }
    // Without an explicit baseline, WFDB uses the ADC zero (5th field).
    if !baseline_set {
        if let Some(z) = tokens.get(4) {
            baseline = z
                .parse()
                .map_err(|_| EcgIoError::MalformedHeader(format!("bad adc zero `{z}`")))?;
        }
    }
    Ok(SignalSpec {
        file_name: tokens[0].to_string(),
        format_code,
        gain,
        baseline,
    })
}

pub fn read_samples(header: &RecordHeader, path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_samples(header, &bytes)
}

/// Decodes the first signal of a sample file into mV.
pub fn decode_samples(header: &RecordHeader, bytes: &[u8]) -> Result<Vec<f64>> {
    let spec = header.first_signal();
    let width = header.frame_width();
    let n = header.num_samples;
    let total = n * width;
    let to_mv = |adu: i32| (adu - spec.baseline) as f64 / spec.gain;
    match spec.format_code {
        16 => {
            let expected = 2 * total;
            if bytes.len() != expected {
                return Err(EcgIoError::SizeMismatch {
                    expected,
                    actual: bytes.len(),
                });
            }
            Ok((0..n)
                .map(|i| {
                    let o = 2 * i * width;
                    to_mv(i16::from_le_bytes([bytes[o], bytes[o + 1]]) as i32)
                })
                .collect())
        }
        212 => {
            let expected = (3 * total).div_ceil(2);
            if bytes.len() != expected {
                return Err(EcgIoError::SizeMismatch {
                    expected,
                    actual: bytes.len(),
                });
            }
            Ok((0..n).map(|i| to_mv(unpack_212(bytes, i * width))).collect())
        }
        other => Err(EcgIoError::UnsupportedFormat(other)),
    }
}

/// Reads the `idx`-th 12-bit value of a format-212 stream.
fn unpack_212(bytes: &[u8], idx: usize) -> i32 {
    let base = 3 * (idx / 2);
    let raw = if idx.is_multiple_of(2) {
        bytes[base] as i32 | ((bytes[base + 1] as i32 & 0x0F) << 8)
    } else {
        bytes[base + 2] as i32 | ((bytes[base + 1] as i32 & 0xF0) << 4)
    };
    if raw & 0x800 != 0 {
        raw - 0x1000
    } else {
        raw
    }
}

/// Encodes mV samples as a single-signal format-16 byte stream.
pub fn encode_format16(samples: &[f64], gain: f64, baseline: i32) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * 2);
    for &v in samples {
        let adu = (v * gain).round() + baseline as f64;
        let adu = adu.clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        out.write_i16::<LittleEndian>(adu).expect("write to Vec");
    }
    out
}

pub fn write_samples(samples: &[f64], gain: f64, baseline: i32, path: &Path) -> Result<()> {
    fs::write(path, encode_format16(samples, gain, baseline)).map_err(io_err(path))
}

pub fn read_annotations(path: &Path, sampling_rate: f64, code_map: &CodeMap) -> Result<MinuteLabels> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_annotations(&bytes, sampling_rate, code_map)
}

/// A decoded MIT annotation: absolute time in samples and its label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinuteAnnotation {
    pub time: u64,
    pub minute: usize,
    pub label: Label,
}

const SKIP: u8 = 59;
const NUM: u8 = 60;
const SUB: u8 = 61;
const CHN: u8 = 62;
const AUX: u8 = 63;

/// Decodes an MIT annotation stream into timed minute labels.
pub fn decode_annotation_events(
    bytes: &[u8],
    sampling_rate: f64,
    code_map: &CodeMap,
) -> Result<Vec<MinuteAnnotation>> {
    let samples_per_minute = 60.0 * sampling_rate;
    let mut cur = Cursor::new(bytes);
    let mut time: u64 = 0;
    let mut events = Vec::new();
    loop {
        let offset = cur.position() as usize;
        let word = match cur.read_u16::<LittleEndian>() {
            Ok(w) => w,
            // A missing terminator is tolerated at an even boundary.
            Err(_) if offset == bytes.len() => break,
            Err(_) => return Err(EcgIoError::TruncatedFile(offset)),
        };
        if word == 0 {
            break;
        }
        let code = (word >> 10) as u8;
        let data = (word & 0x03FF) as u64;
        match code {
            SKIP => {
                // 32-bit interval stored as two little-endian words, high word first.
                let hi = cur
                    .read_u16::<LittleEndian>()
                    .map_err(|_| EcgIoError::TruncatedFile(offset))? as u32;
                let lo = cur
                    .read_u16::<LittleEndian>()
                    .map_err(|_| EcgIoError::TruncatedFile(offset))? as u32;
                let interval = ((hi << 16) | lo) as i32;
                time = (time as i64 + interval as i64).max(0) as u64;
            }
            AUX => {
                let len = data as usize;
                let mut skip = vec![0u8; len + (len & 1)];
                cur.read_exact(&mut skip)
                    .map_err(|_| EcgIoError::TruncatedFile(offset))?;
            }
            NUM | SUB | CHN => {}
            0 => time += data,
            _ => {
                time += data;
                let label = code_map
                    .get(code)
                    .ok_or(EcgIoError::UnknownCode { code, offset })?;
                let minute = (time as f64 / samples_per_minute).round() as usize;
                events.push(MinuteAnnotation {
                    time,
                    minute,
                    label,
                });
            }
        }
    }
    events.sort_by_key(|e| e.time);
    Ok(events)
}

pub fn decode_annotations(bytes: &[u8], sampling_rate: f64, code_map: &CodeMap) -> Result<MinuteLabels> {
    let events = decode_annotation_events(bytes, sampling_rate, code_map)?;
    Ok(MinuteLabels {
        labels: events.into_iter().map(|e| e.label).collect(),
        source: LabelSource::AnnotationFile,
    })
}

/// Encodes labels, one per minute starting at time 0, as an MIT annotation stream.
pub fn encode_annotations(labels: &[Label], sampling_rate: f64, code_map: &CodeMap) -> Vec<u8> {
    let code_of = |l: Label| {
        code_map
            .0
            .iter()
            .find(|(_, v)| **v == l)
            .map(|(c, _)| *c)
            .expect("code map covers both labels")
    };
    let step = (60.0 * sampling_rate).round() as u64;
    let mut out = Vec::new();
    let mut prev = 0u64;
    for (i, &l) in labels.iter().enumerate() {
        let t = i as u64 * step;
        let mut delta = t - prev;
        if delta > 0x03FF {
            out.write_u16::<LittleEndian>((SKIP as u16) << 10).unwrap();
            out.write_u16::<LittleEndian>((delta >> 16) as u16).unwrap();
            out.write_u16::<LittleEndian>((delta & 0xFFFF) as u16).unwrap();
            delta = 0;
        }
        out.write_u16::<LittleEndian>(((code_of(l) as u16) << 10) | delta as u16)
            .unwrap();
        prev = t;
    }
    out.write_u16::<LittleEndian>(0).unwrap();
    out
}

pub fn read_text_labels(path: &Path) -> Result<MinuteLabels> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_text_labels(&text)
}

pub fn parse_text_labels(text: &str) -> Result<MinuteLabels> {
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut chars = line.chars();
        let label = match (chars.next(), chars.next()) {
            (Some(c), None) => Label::from_char(c),
            _ => None,
        };
        labels.push(label.ok_or(EcgIoError::BadLabelChar(i + 1))?);
    }
    Ok(MinuteLabels {
        labels,
        source: LabelSource::TextFile,
    })
}

pub fn text_labels(labels: &[Label]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

/// Record ids in `dir`, one per `.hea` file, sorted.
pub fn list_records(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e == "hea") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Loads header, samples and labels for `record_id` from `dir`.
///
/// Labels come from `<id>.apn.txt` when present, otherwise from `<id>.apn`.
/// Labels extending more than one minute past the end of the signal are
/// truncated.
pub fn read_record(dir: &Path, record_id: &str, code_map: &CodeMap) -> Result<EcgRecord> {
    let header = read_header(&dir.join(format!("{record_id}.hea")))?;
    let dat = dir.join(header.first_signal().file_name);
    let samples = read_samples(&header, &dat)?;
    let txt = dir.join(format!("{record_id}.apn.txt"));
    let apn = dir.join(format!("{record_id}.apn"));
    let labels = if txt.exists() {
        read_text_labels(&txt)?
    } else if apn.exists() {
        read_annotations(&apn, header.sampling_rate, code_map)?
    } else {
        return Err(EcgIoError::MissingLabels(record_id.to_string()));
    };
    let per_minute = (60.0 * header.sampling_rate).round() as usize;
    let max_minutes = if per_minute == 0 {
        0
    } else {
        samples.len().div_ceil(per_minute)
    };
    let mut minute_labels = labels.labels;
    minute_labels.truncate(max_minutes);
    Ok(EcgRecord {
        record_id: header.record_id,
        samples,
        sampling_rate: header.sampling_rate,
        minute_labels,
    })
}

/// Writes `<id>.hea`, `<id>.dat` (format 16) and `<id>.apn.txt`.
pub fn write_record(dir: &Path, record: &EcgRecord, gain: f64) -> Result<()> {
    let header = RecordHeader {
        record_id: record.record_id.clone(),
        num_signals: 1,
        sampling_rate: record.sampling_rate,
        num_samples: record.samples.len(),
        signals: vec![SignalSpec {
            file_name: format!("{}.dat", record.record_id),
            format_code: 16,
            gain,
            baseline: 0,
        }],
    };
    let hea = dir.join(format!("{}.hea", record.record_id));
    fs::write(&hea, header.to_text()).map_err(io_err(&hea))?;
    write_samples(
        &record.samples,
        gain,
        0,
        &dir.join(format!("{}.dat", record.record_id)),
    )?;
    let txt = dir.join(format!("{}.apn.txt", record.record_id));
    fs::write(&txt, text_labels(&record.minute_labels)).map_err(io_err(&txt))
}
