//! Record → filtered signal → windows → beats → features.

use std::fmt::Write as _;
use std::ops::AddAssign;
use std::path::Path;

use mpcnn::beat_detection::{detect_beats, BeatError};
use mpcnn::ecg_io::{list_records, read_record};
use mpcnn::exec::Execution;
use mpcnn::mp_features::{extract_features, ChannelSet, FeatureError, FeatureSegment, WindowConfig};
use mpcnn::preprocess::{beat_rate_valid, design_fir_bandpass, filter_zero_phase_with, window_at, window_bounds, PreprocessError};

use crate::config::PipelineConfig;
use crate::error::CliError;

/// Per-reason counts of labeled minutes that did not become segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RejectionReport {
    pub records: usize,
    pub labeled_minutes: usize,
    /// Not enough signal on one side for the full window span.
    pub boundary: usize,
    /// Whole record shorter than the filter allows.
    pub short_record: usize,
    /// Window too short for the R-peak detector.
    pub detector: usize,
    /// Mean heart rate outside the configured range.
    pub rate: usize,
    /// Fewer than two subsequences fit in the window.
    pub too_few_beats: usize,
    pub admitted: usize,
}

impl AddAssign for RejectionReport {
    fn add_assign(&mut self, o: Self) {
        self.records += o.records;
        self.labeled_minutes += o.labeled_minutes;
        self.boundary += o.boundary;
        self.short_record += o.short_record;
        self.detector += o.detector;
        self.rate += o.rate;
        self.too_few_beats += o.too_few_beats;
        self.admitted += o.admitted;
    }
}

impl RejectionReport {
    pub fn rejected(&self) -> usize {
        self.boundary + self.short_record + self.detector + self.rate + self.too_few_beats
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "records = {}", self.records);
        let _ = writeln!(s, "labeled_minutes = {}", self.labeled_minutes);
        let _ = writeln!(s, "admitted = {}", self.admitted);
        let _ = writeln!(s, "rejected.boundary = {}", self.boundary);
        let _ = writeln!(s, "rejected.short_record = {}", self.short_record);
        let _ = writeln!(s, "rejected.detector = {}", self.detector);
        let _ = writeln!(s, "rejected.rate = {}", self.rate);
        let _ = writeln!(s, "rejected.too_few_beats = {}", self.too_few_beats);
        s
    }
}

fn process_record(
    dir: &Path,
    id: &str,
    cfg: &PipelineConfig,
    wc: &WindowConfig,
    channels: ChannelSet,
) -> Result<(Vec<FeatureSegment>, RejectionReport), CliError> {
    let mut record = read_record(dir, id, &cfg.code_map).map_err(|source| CliError::Record {
        record: id.to_string(),
        source,
    })?;
    let mut report = RejectionReport {
        records: 1,
        labeled_minutes: record.minute_labels.len(),
        ..Default::default()
    };
    let filter = design_fir_bandpass(cfg.filter_low_hz, cfg.filter_high_hz, cfg.filter_taps, record.sampling_rate)?;
    match filter_zero_phase_with(&record.samples, &filter, Execution::Sequential) {
        Ok(y) => record.samples = y,
        Err(PreprocessError::SignalTooShort { .. }) => {
            report.short_record = report.labeled_minutes;
            return Ok((Vec::new(), report));
        }
        Err(e) => return Err(CliError::signal(id, e)),
    }

    let bounds = window_bounds(&record, cfg.span_minutes);
    report.boundary = report.labeled_minutes - bounds.len();
    let mut segments = Vec::with_capacity(bounds.len());
    for (minute, range) in bounds {
        let window = window_at(&record, minute, range);
        let beats = match detect_beats(&window.samples, window.fs, &cfg.rpeak, cfg.ppeak_w1, cfg.ppeak_w2) {
            Ok(b) => b,
            Err(BeatError::SignalTooShort { .. }) => {
                report.detector += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if !beat_rate_valid(&beats.r_peaks, window.duration_secs(), cfg.reject_min_bpm, cfg.reject_max_bpm) {
            report.rate += 1;
            continue;
        }
        match extract_features(&window, &beats, wc, channels, cfg.feature_length) {
            Ok(seg) => segments.push(seg),
            Err(FeatureError::TooFewSubsequences(_)) => report.too_few_beats += 1,
            Err(e) => return Err(e.into()),
        }
    }
    report.admitted = segments.len();
    Ok((segments, report))
}

/// Features for every record in `dir`, records in id order. Records are
/// processed concurrently; output order does not depend on scheduling.
pub fn extract_corpus(
    dir: &Path,
    cfg: &PipelineConfig,
    wc: &WindowConfig,
    channels: ChannelSet,
) -> Result<(Vec<FeatureSegment>, RejectionReport), CliError> {
    let ids = list_records(dir).map_err(|e| match e {
        mpcnn::ecg_io::EcgIoError::Io { path, source } => CliError::Io(format!("{}: {source}", path.display())),
        other => other.into(),
    })?;
    if ids.is_empty() {
        return Err(CliError::NoRecords(dir.to_path_buf()));
    }
    let results = Execution::default().map(&ids, |id| process_record(dir, id, cfg, wc, channels));
    let mut segments = Vec::new();
    let mut report = RejectionReport::default();
    for r in results {
        let (segs, rep) = r?;
        segments.extend(segs);
        report += rep;
    }
    Ok((segments, report))
}
