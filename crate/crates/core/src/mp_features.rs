//! Distance-profile features over fiducial-anchored subsequences.
//!
//! For a window `T` and anchors `P_1..P_k` (P peaks, or Q points derived
//! from R peaks), the subsequences `T[P_i .. P_i + m]` are stacked into a
//! k x m matrix and their pairwise Euclidean distances form a symmetric
//! k x k matrix `D`. Each column of `D`, excluding the diagonal, is reduced
//! to its minimum, maximum and mean, giving the MinDP, MaxDP and MeanDP
//! channels. Each channel is min-max normalised and resampled with a natural
//! cubic spline to a fixed length (900 by default).
//!
//! Distances are computed on the raw subsequences. Unlike the classic matrix
//! profile there is no z-normalisation, so amplitude differences between
//! beats show up in the features.

use std::fmt;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::beat_detection::BeatIndices;
use crate::exec::Execution;
use crate::preprocess::AnalysisWindow;
use crate::Label;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("only {0} subsequences fit in the window (need at least 2)")]
    TooFewSubsequences(usize),
    #[error("invalid window configuration: {0}")]
    BadWindowConfig(String),
    #[error("unknown channel `{0}` (expected min, max or mean)")]
    UnknownChannel(String),
    #[error("empty channel selection")]
    NoChannels,
    #[error("feature file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// k subsequences of length m, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsequenceMatrix {
    pub rows: Vec<f64>,
    pub start_indices: Vec<usize>,
    pub m: usize,
}

impl SubsequenceMatrix {
    pub fn k(&self) -> usize {
        self.start_indices.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.m..(i + 1) * self.m]
    }

    /// Builds a matrix directly from rows (all of equal length).
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let m = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == m));
        Self {
            rows: rows.concat(),
            start_indices: (0..rows.len()).collect(),
            m,
        }
    }
}

/// Copies `samples[s .. s + m]` for every anchor `s` that fits.
pub fn build_subsequences(
    samples: &[f64],
    anchors: &[usize],
    m: usize,
) -> Result<SubsequenceMatrix, FeatureError> {
    if m < 2 {
        return Err(FeatureError::BadWindowConfig(format!("subsequence length {m} < 2")));
    }
    let start_indices: Vec<usize> = anchors
        .iter()
        .copied()
        .filter(|&s| s + m <= samples.len())
        .collect();
    if start_indices.len() < 2 {
        return Err(FeatureError::TooFewSubsequences(start_indices.len()));
    }
    let rows = start_indices
        .iter()
        .flat_map(|&s| samples[s..s + m].iter().copied())
        .collect();
    Ok(SubsequenceMatrix { rows, start_indices, m })
}

/// Symmetric k x k Euclidean distance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub k: usize,
    pub d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.k + j]
    }
}

pub fn distance_profile(a: &SubsequenceMatrix) -> DistanceMatrix {
    distance_profile_with(a, Execution::default())
}

/// Upper triangle computed row by row (in parallel when enabled), then mirrored.
pub fn distance_profile_with(a: &SubsequenceMatrix, exec: Execution) -> DistanceMatrix {
    let k = a.k();
    let upper: Vec<Vec<f64>> = exec.map_range(k, |i| {
        let ri = a.row(i);
        (i + 1..k)
            .map(|j| {
                ri.iter()
                    .zip(a.row(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    });
    let mut d = vec![0.0; k * k];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            d[i * k + j] = v;
            d[j * k + i] = v;
        }
    }
    DistanceMatrix { k, d }
}

/// Column-wise minimum, maximum and mean of `D` off the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
}

pub fn reduce_profiles(d: &DistanceMatrix) -> Profiles {
    let k = d.k;
    assert!(k >= 2, "need at least two subsequences");
    let mut out = Profiles {
        min: vec![f64::INFINITY; k],
        max: vec![f64::NEG_INFINITY; k],
        mean: vec![0.0; k],
    };
    for j in 0..k {
        let mut sum = 0.0;
        for i in (0..k).filter(|&i| i != j) {
            let v = d.get(i, j);
            out.min[j] = out.min[j].min(v);
            out.max[j] = out.max[j].max(v);
            sum += v;
        }
        out.mean[j] = sum / (k - 1) as f64;
    }
    out
}

/// Maps `v` onto [0, 1]; a constant vector maps to all zeros.
pub fn minmax_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / span).collect()
}

/// Natural cubic spline through `(j / (k-1), v[j])`, sampled at `len` uniform
/// points on [0, 1]. With two or three knots this is linear interpolation.
pub fn cubic_spline_resample(v: &[f64], len: usize) -> Vec<f64> {
    let k = v.len();
    assert!(k >= 2, "need at least two knots");
    let h = 1.0 / (k - 1) as f64;
    let abscissa = |i: usize| {
        if len == 1 {
            0.0
        } else {
            i as f64 / (len - 1) as f64
        }
    };
    let locate = |x: f64| {
        let seg = ((x / h).floor() as usize).min(k - 2);
        (seg, x - seg as f64 * h)
    };

    if k <= 3 {
        return (0..len)
            .map(|i| {
                let (seg, t) = locate(abscissa(i));
                v[seg] + (v[seg + 1] - v[seg]) * t / h
            })
            .collect();
    }

    // Second derivatives at the knots; M[0] = M[k-1] = 0. With uniform
    // spacing the interior system is  M[i-1] + 4 M[i] + M[i+1] = r[i],
    // r[i] = 6 (v[i+1] - 2 v[i] + v[i-1]) / h^2, solved by the Thomas algorithm.
    let n = k - 2;
    let rhs: Vec<f64> = (1..k - 1)
        .map(|i| 6.0 * (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h))
        .collect();
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    c_prime[0] = 1.0 / 4.0;
    d_prime[0] = rhs[0] / 4.0;
    for i in 1..n {
        let denom = 4.0 - c_prime[i - 1];
        c_prime[i] = 1.0 / denom;
        d_prime[i] = (rhs[i] - d_prime[i - 1]) / denom;
    }
    let mut m2 = vec![0.0; k];
    m2[n] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        m2[i + 1] = d_prime[i] - c_prime[i] * m2[i + 2];
    }

    (0..len)
        .map(|i| {
            let (seg, t) = locate(abscissa(i));
            let a = (h - t) / h;
            let b = t / h;
            a * v[seg]
                + b * v[seg + 1]
                + ((a * a * a - a) * m2[seg] + (b * b * b - b) * m2[seg + 1]) * h * h / 6.0
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    MinDp,
    MaxDp,
    MeanDp,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::MinDp, Channel::MaxDp, Channel::MeanDp];

    fn bit(self) -> u8 {
        match self {
            Channel::MinDp => 1,
            Channel::MaxDp => 2,
            Channel::MeanDp => 4,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Channel::MinDp => "min",
            Channel::MaxDp => "max",
            Channel::MeanDp => "mean",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::MinDp => "MinDP",
            Channel::MaxDp => "MaxDP",
            Channel::MeanDp => "MeanDP",
        })
    }
}

/// Non-empty subset of channels; iteration order is always MinDP, MaxDP, MeanDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelSet(u8);

impl ChannelSet {
    pub const ALL: ChannelSet = ChannelSet(0b111);

    pub fn from_bits(bits: u8) -> Result<Self, FeatureError> {
        if bits == 0 || bits & !0b111 != 0 {
            return Err(FeatureError::NoChannels);
        }
        Ok(ChannelSet(bits))
    }

    pub fn from_channels(channels: &[Channel]) -> Result<Self, FeatureError> {
        Self::from_bits(channels.iter().fold(0, |b, c| b | c.bit()))
    }

    /// Parses `"min,max,mean"` (any non-empty subset, any order).
    pub fn parse(s: &str) -> Result<Self, FeatureError> {
        let mut bits = 0;
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let c = Channel::ALL
                .into_iter()
                .find(|c| c.short_name().eq_ignore_ascii_case(tok) || c.to_string().eq_ignore_ascii_case(tok))
                .ok_or_else(|| FeatureError::UnknownChannel(tok.to_string()))?;
            bits |= c.bit();
        }
        Self::from_bits(bits)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, c: Channel) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn is_subset_of(self, other: ChannelSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Channel> {
        Channel::ALL.into_iter().filter(move |c| self.contains(*c))
    }

    /// The seven non-empty subsets in ablation order M1..M7.
    pub fn ablation_order() -> [ChannelSet; 7] {
        [0b001, 0b010, 0b100, 0b011, 0b110, 0b101, 0b111].map(ChannelSet)
    }

    pub fn to_config_string(self) -> String {
        self.iter().map(Channel::short_name).collect::<Vec<_>>().join(",")
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.iter().map(|c| c.to_string()).collect();
        f.write_str(&names.join("+"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fiducial {
    P,
    /// `R - q_offset`
    Q,
}

/// Where subsequences start and how long they are.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub start_fiducial: Fiducial,
    pub m: usize,
    pub q_offset: usize,
}

impl WindowConfig {
    pub fn new(start_fiducial: Fiducial, m: usize, q_offset: usize) -> Result<Self, FeatureError> {
        if m < 2 {
            return Err(FeatureError::BadWindowConfig(format!("subsequence length {m} < 2")));
        }
        Ok(Self {
            start_fiducial,
            m,
            q_offset,
        })
    }

    /// P peak to end of ST segment.
    pub const T1: WindowConfig = WindowConfig { start_fiducial: Fiducial::P, m: 55, q_offset: 5 };
    /// P peak to end of QRS.
    pub const T2: WindowConfig = WindowConfig { start_fiducial: Fiducial::P, m: 25, q_offset: 5 };
    /// Q to end of ST segment.
    pub const T3: WindowConfig = WindowConfig { start_fiducial: Fiducial::Q, m: 40, q_offset: 5 };
    /// QRS only.
    pub const T4: WindowConfig = WindowConfig { start_fiducial: Fiducial::Q, m: 15, q_offset: 5 };

    pub fn anchors(&self, beats: &BeatIndices) -> Vec<usize> {
        let mut a: Vec<usize> = match self.start_fiducial {
            Fiducial::P => beats.p_peaks.clone(),
            Fiducial::Q => beats
                .r_peaks
                .iter()
                .filter_map(|&r| r.checked_sub(self.q_offset))
                .collect(),
        };
        a.sort_unstable();
        a
    }
}

/// L x C feature tensor for one analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSegment {
    /// Channel-major: `values[c * length + t]`.
    pub values: Vec<f32>,
    pub length: usize,
    pub channels: ChannelSet,
    pub label: Label,
    pub record_id: String,
    pub center_minute: u32,
}

impl FeatureSegment {
    pub fn channel(&self, c: usize) -> &[f32] {
        &self.values[c * self.length..(c + 1) * self.length]
    }

    /// Keeps only `subset` (which must be contained in this segment's channels).
    pub fn select(&self, subset: ChannelSet) -> FeatureSegment {
        assert!(subset.is_subset_of(self.channels));
        let mut values = Vec::with_capacity(subset.len() * self.length);
        for (ci, c) in self.channels.iter().enumerate() {
            if subset.contains(c) {
                values.extend_from_slice(self.channel(ci));
            }
        }
        FeatureSegment {
            values,
            channels: subset,
            ..self.clone()
        }
    }
}

/// Full feature pipeline for one window.
pub fn extract_features(
    window: &AnalysisWindow,
    beats: &BeatIndices,
    wc: &WindowConfig,
    channels: ChannelSet,
    length: usize,
) -> Result<FeatureSegment, FeatureError> {
    extract_features_with(window, beats, wc, channels, length, Execution::Sequential)
}

pub fn extract_features_with(
    window: &AnalysisWindow,
    beats: &BeatIndices,
    wc: &WindowConfig,
    channels: ChannelSet,
    length: usize,
    exec: Execution,
) -> Result<FeatureSegment, FeatureError> {
    let a = build_subsequences(&window.samples, &wc.anchors(beats), wc.m)?;
    let d = distance_profile_with(&a, exec);
    let p = reduce_profiles(&d);
    let mut values = Vec::with_capacity(channels.len() * length);
    for c in channels.iter() {
        let raw = match c {
            Channel::MinDp => &p.min,
            Channel::MaxDp => &p.max,
            Channel::MeanDp => &p.mean,
        };
        // spline overshoot between knots is clipped back into [0, 1]
        values.extend(
            cubic_spline_resample(&minmax_normalize(raw), length)
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0) as f32),
        );
    }
    Ok(FeatureSegment {
        values,
        length,
        channels,
        label: window.label,
        record_id: window.record_id.clone(),
        center_minute: window.center_minute as u32,
    })
}

const MPF_MAGIC: &[u8; 4] = b"MPF1";
const RECORD_ID_BYTES: usize = 8;

/// Contents of an `.mpf` feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub length: usize,
    pub channels: ChannelSet,
    pub segments: Vec<FeatureSegment>,
}

impl FeatureFile {
    pub fn encode(&self) -> Result<Vec<u8>, FeatureError> {
        let fmt_err = |m: String| FeatureError::Format(m);
        let mut out = Vec::new();
        out.extend_from_slice(MPF_MAGIC);
        out.write_u32::<LittleEndian>(self.length as u32).unwrap();
        out.write_u8(self.channels.len() as u8).unwrap();
        out.write_u8(self.channels.bits()).unwrap();
        out.write_u32::<LittleEndian>(self.segments.len() as u32).unwrap();
        for s in &self.segments {
            if s.length != self.length || s.channels != self.channels {
                return Err(fmt_err(format!(
                    "segment {}:{} has shape {}x{} but the file is {}x{}",
                    s.record_id,
                    s.center_minute,
                    s.length,
                    s.channels.len(),
                    self.length,
                    self.channels.len()
                )));
            }
            let id = s.record_id.as_bytes();
            if id.len() > RECORD_ID_BYTES {
                return Err(fmt_err(format!("record id `{}` longer than 8 bytes", s.record_id)));
            }
            let mut padded = [b' '; RECORD_ID_BYTES];
            padded[..id.len()].copy_from_slice(id);
            out.extend_from_slice(&padded);
            out.write_u32::<LittleEndian>(s.center_minute).unwrap();
            out.write_u8(s.label.index() as u8).unwrap();
            for &v in &s.values {
                out.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FeatureError> {
        let trunc = |_| FeatureError::Format("truncated file".into());
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(trunc)?;
        if &magic != MPF_MAGIC {
            return Err(FeatureError::Format("bad magic".into()));
        }
        let length = cur.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let c = cur.read_u8().map_err(trunc)? as usize;
        let channels = ChannelSet::from_bits(cur.read_u8().map_err(trunc)?)?;
        if channels.len() != c {
            return Err(FeatureError::Format(format!(
                "channel count {c} disagrees with bitmask {:#05b}",
                channels.bits()
            )));
        }
        let count = cur.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let per_segment = RECORD_ID_BYTES + 4 + 1 + 4 * length * c;
        let remaining = bytes.len() - cur.position() as usize;
        if remaining != count * per_segment {
            return Err(FeatureError::Format(format!(
                "expected {} bytes of segment data, found {remaining}",
                count * per_segment
            )));
        }
        let mut segments = Vec::with_capacity(count);
        for _ in 0..count {
            let mut id = [0u8; RECORD_ID_BYTES];
            cur.read_exact(&mut id).map_err(trunc)?;
            let record_id = String::from_utf8_lossy(&id).trim_end_matches(' ').to_string();
            let center_minute = cur.read_u32::<LittleEndian>().map_err(trunc)?;
            let label = match cur.read_u8().map_err(trunc)? {
                0 => Label::N,
                1 => Label::A,
                other => return Err(FeatureError::Format(format!("bad label byte {other}"))),
            };
            let mut values = vec![0f32; length * c];
            cur.read_f32_into::<LittleEndian>(&mut values).map_err(trunc)?;
            segments.push(FeatureSegment {
                values,
                length,
                channels,
                label,
                record_id,
                center_minute,
            });
        }
        Ok(FeatureFile {
            length,
            channels,
            segments,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), FeatureError> {
        let bytes = self.encode()?;
        let mut f = fs::File::create(path).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        f.write_all(&bytes).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, FeatureError> {
        let bytes = fs::read(path).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn dm(rows: &[Vec<f64>]) -> DistanceMatrix {
        distance_profile(&SubsequenceMatrix::from_rows(rows))
    }

    #[test]
    fn subsequence_bounds() {
        let s: Vec<f64> = (0..10).map(f64::from).collect();
        let a = build_subsequences(&s, &[0, 5, 8], 3).unwrap();
        assert_eq!(a.k(), 2);
        assert_eq!(a.start_indices, vec![0, 5]);
        assert_eq!(a.row(1), &s[5..8]);
        assert!(matches!(build_subsequences(&s, &[], 3), Err(FeatureError::TooFewSubsequences(0))));
        assert!(matches!(build_subsequences(&s, &[0, 9], 3), Err(FeatureError::TooFewSubsequences(1))));
    }

    #[test]
    fn three_four_five() {
        let d = dm(&[vec![0.0, 0.0], vec![3.0, 4.0], vec![6.0, 8.0]]);
        assert_eq!(d.d, vec![0.0, 5.0, 10.0, 5.0, 0.0, 5.0, 10.0, 5.0, 0.0]);
        let p = reduce_profiles(&d);
        assert_eq!(p.min, vec![5.0, 5.0, 5.0]);
        assert_eq!(p.max, vec![10.0, 5.0, 10.0]);
        assert_eq!(p.mean, vec![7.5, 5.0, 7.5]);
    }

    #[test]
    fn identical_rows() {
        let d = dm(&vec![vec![1.0, 2.0]; 4]);
        assert!(d.d.iter().all(|&v| v == 0.0));
        let p = reduce_profiles(&d);
        assert!(p.min.iter().chain(&p.max).chain(&p.mean).all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[7.0, 7.0, 7.0]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn spline_small_k_is_linear() {
        let y = cubic_spline_resample(&[0.0, 1.0], 5);
        assert_eq!(y, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let y = cubic_spline_resample(&[0.0, 1.0, 0.0], 5);
        assert_eq!(y, vec![0.0, 0.5, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn parallel_distances_match() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..20).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let a = SubsequenceMatrix::from_rows(&rows);
        assert_eq!(
            distance_profile_with(&a, Execution::Sequential),
            distance_profile_with(&a, Execution::Parallel)
        );
    }

    #[test]
    fn channel_sets() {
        assert_eq!(ChannelSet::parse("min,max,mean").unwrap(), ChannelSet::ALL);
        assert_eq!(ChannelSet::parse("mean, min").unwrap().bits(), 0b101);
        assert!(matches!(ChannelSet::parse("median"), Err(FeatureError::UnknownChannel(_))));
        assert!(matches!(ChannelSet::parse(""), Err(FeatureError::NoChannels)));
        let order: Vec<String> = ChannelSet::ablation_order().iter().map(|c| c.to_string()).collect();
        assert_eq!(
            order,
            ["MinDP", "MaxDP", "MeanDP", "MinDP+MaxDP", "MaxDP+MeanDP", "MinDP+MeanDP", "MinDP+MaxDP+MeanDP"]
        );
    }

    fn window_from(samples: Vec<f64>) -> AnalysisWindow {
        AnalysisWindow {
            record_id: "w".into(),
            center_minute: 2,
            samples,
            label: Label::A,
            fs: 100.0,
        }
    }

    #[test]
    fn two_subsequences_give_a_constant_channel() {
        let s: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
        let beats = BeatIndices {
            r_peaks: vec![30, 70],
            p_peaks: vec![10, 50],
        };
        let wc = WindowConfig::new(Fiducial::P, 20, 5).unwrap();
        let f = extract_features(&window_from(s), &beats, &wc, ChannelSet::parse("min").unwrap(), 900).unwrap();
        assert_eq!(f.values.len(), 900);
        assert!(f.values.iter().all(|&v| v == f.values[0]));
    }

    #[test]
    fn q_anchors_and_shape() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let s: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<usize> = (1..29).map(|i| i * 100 + 3).collect();
        let beats = BeatIndices {
            p_peaks: r.iter().map(|x| x - 15).collect(),
            r_peaks: r,
        };
        assert_eq!(WindowConfig::T3.anchors(&beats)[0], 98);
        for wc in [WindowConfig::T1, WindowConfig::T2, WindowConfig::T3, WindowConfig::T4] {
            let f = extract_features(&window_from(s.clone()), &beats, &wc, ChannelSet::ALL, 900).unwrap();
            assert_eq!((f.length, f.channels.len(), f.values.len()), (900, 3, 2700));
            assert!(f.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn anchor_order_does_not_matter() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let s: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p: Vec<usize> = (0..18).map(|i| i * 100 + rng.random_range(0..40)).collect();
        let beats = BeatIndices { r_peaks: vec![], p_peaks: p.clone() };
        let mut shuffled = p.clone();
        shuffled.reverse();
        shuffled.swap(2, 7);
        let beats2 = BeatIndices { r_peaks: vec![], p_peaks: shuffled };
        let w = window_from(s);
        let a = extract_features(&w, &beats, &WindowConfig::T1, ChannelSet::ALL, 900).unwrap();
        let b = extract_features(&w, &beats2, &WindowConfig::T1, ChannelSet::ALL, 900).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn select_keeps_channel_order() {
        let seg = FeatureSegment {
            values: (0..6).map(|v| v as f32).collect(),
            length: 2,
            channels: ChannelSet::ALL,
            label: Label::N,
            record_id: "x".into(),
            center_minute: 0,
        };
        let s = seg.select(ChannelSet::parse("min,mean").unwrap());
        assert_eq!(s.values, vec![0.0, 1.0, 4.0, 5.0]);
    }

    #[test]
    fn mpf_layout() {
        let seg = FeatureSegment {
            values: vec![0.5, 1.0],
            length: 2,
            channels: ChannelSet::parse("max").unwrap(),
            label: Label::A,
            record_id: "a01".into(),
            center_minute: 7,
        };
        let file = FeatureFile { length: 2, channels: seg.channels, segments: vec![seg] };
        let bytes = file.encode().unwrap();
        let mut expected = b"MPF1".to_vec();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&[1, 0b010]);
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(b"a01     ");
        expected.extend_from_slice(&7u32.to_le_bytes());
        expected.push(1);
        expected.extend_from_slice(&0.5f32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(FeatureFile::decode(&bytes).unwrap(), file);
        assert!(FeatureFile::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(FeatureFile::decode(b"MPF2").is_err());
    }

    proptest! {
        #[test]
        fn distances_invariant_to_global_offset(
            seed in any::<u64>(), k in 2usize..12, m in 2usize..8, offset in -50.0f64..50.0
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v + offset).collect()).collect();
            let a = dm(&rows);
            let b = dm(&shifted);
            for (x, y) in a.d.iter().zip(&b.d) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + offset.abs()));
            }
        }

        #[test]
        fn profile_order_statistics(seed in any::<u64>(), k in 2usize..12, m in 1usize..8) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..m.max(2)).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
            let d = dm(&rows);
            let p = reduce_profiles(&d);
            for j in 0..k {
                prop_assert_eq!(d.get(j, j), 0.0);
                prop_assert!(p.min[j] <= p.mean[j] + 1e-12 && p.mean[j] <= p.max[j] + 1e-12);
                for i in 0..k {
                    prop_assert_eq!(d.get(i, j), d.get(j, i));
                }
            }
        }

        #[test]
        fn normalize_spans_unit_interval(v in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
            let out = minmax_normalize(&v);
            let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if v.iter().any(|x| *x != v[0]) {
                prop_assert_eq!(lo, 0.0);
                prop_assert_eq!(hi, 1.0);
            } else {
                prop_assert!(out.iter().all(|&x| x == 0.0));
            }
        }
    }
}
