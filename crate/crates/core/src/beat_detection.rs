//! R-peak detection (Hamilton-style adaptive thresholding) and P-peak search.

use thiserror::Error;

use crate::exec::Execution;
use crate::preprocess::{design_fir_bandpass, filter_zero_phase_with, PreprocessError};

#[derive(Debug, Error, PartialEq)]
pub enum BeatError {
    #[error("signal of {len} samples is shorter than 2 s at {fs} Hz")]
    SignalTooShort { len: usize, fs: f64 },
    #[error("invalid detector configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Filter(#[from] PreprocessError),
}

/// Tunables of the R-peak detector. Defaults follow Hamilton's published
/// description of the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct RPeakConfig {
    /// QRS emphasis band, Hz.
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// Width of the envelope moving average, ms.
    pub ma_ms: f64,
    /// th = noise_mean + coef * (qrs_mean - noise_mean)
    pub threshold_coef: f64,
    /// Length of the running QRS / noise / RR histories.
    pub history: usize,
    pub refractory_ms: f64,
    /// Search back once the gap since the last beat exceeds this many mean RRs.
    pub searchback_factor: f64,
    /// Fraction of the threshold a search-back candidate must exceed.
    pub searchback_scale: f64,
    /// Half-width of the window used to snap onto the signal maximum, ms.
    pub snap_ms: f64,
}

impl Default for RPeakConfig {
    fn default() -> Self {
        Self {
            band_low_hz: 8.0,
            band_high_hz: 16.0,
            ma_ms: 80.0,
            threshold_coef: 0.45,
            history: 8,
            refractory_ms: 200.0,
            searchback_factor: 1.5,
            searchback_scale: 0.5,
            snap_ms: 40.0,
        }
    }
}

/// Detected fiducials of one analysis window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BeatIndices {
    pub r_peaks: Vec<usize>,
    pub p_peaks: Vec<usize>,
}

struct History {
    values: Vec<f64>,
    cap: usize,
}

impl History {
    fn new(cap: usize) -> Self {
        Self {
            values: Vec::with_capacity(cap),
            cap,
        }
    }

    fn push(&mut self, v: f64) {
        if self.values.len() == self.cap {
            self.values.remove(0);
        }
        self.values.push(v);
    }

    fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.iter().sum::<f64>() / self.values.len() as f64)
        }
    }
}

fn odd_taps(fs: f64) -> usize {
    let t = (0.5 * fs).round() as usize;
    (t | 1).max(31)
}

/// QRS-emphasised envelope: band-pass, absolute first difference, centred
/// moving average.
pub fn qrs_envelope(signal: &[f64], fs: f64, cfg: &RPeakConfig) -> Result<Vec<f64>, BeatError> {
    let bp = design_fir_bandpass(cfg.band_low_hz, cfg.band_high_hz, odd_taps(fs), fs)?;
    let filtered = filter_zero_phase_with(signal, &bp, Execution::Sequential)?;
    let mut diff = vec![0.0; filtered.len()];
    for i in 1..filtered.len() {
        diff[i] = (filtered[i] - filtered[i - 1]).abs();
    }
    let w = ((cfg.ma_ms / 1000.0 * fs).round() as usize).max(1);
    let half = w / 2;
    let mut prefix = vec![0.0; diff.len() + 1];
    for (i, d) in diff.iter().enumerate() {
        prefix[i + 1] = prefix[i] + d;
    }
    let n = diff.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (lo + w).min(n);
            (prefix[hi] - prefix[lo]) / w as f64
        })
        .collect())
}

/// Detects R peaks, returned as strictly increasing sample indices.
pub fn detect_r_peaks(signal: &[f64], fs: f64) -> Result<Vec<usize>, BeatError> {
    detect_r_peaks_with(signal, fs, &RPeakConfig::default())
}

pub fn detect_r_peaks_with(signal: &[f64], fs: f64, cfg: &RPeakConfig) -> Result<Vec<usize>, BeatError> {
    if !(fs > 0.0) {
        return Err(BeatError::BadConfig(format!("sampling rate {fs}")));
    }
    if cfg.history == 0 || !(0.0..=1.0).contains(&cfg.threshold_coef) {
        return Err(BeatError::BadConfig("history must be >= 1 and coef in [0, 1]".into()));
    }
    if (signal.len() as f64) < 2.0 * fs {
        return Err(BeatError::SignalTooShort { len: signal.len(), fs });
    }
    let env = qrs_envelope(signal, fs, cfg)?;
    let n = env.len();
    let refractory = (cfg.refractory_ms / 1000.0 * fs).round() as usize;
    let snap = (cfg.snap_ms / 1000.0 * fs).round() as usize;

    let candidates: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| env[i] > 0.0 && env[i] > env[i - 1] && env[i] >= env[i + 1])
        .collect();
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    // Seed the QRS history with the envelope maximum of each of the first
    // (up to) `history` one-second blocks.
    let second = fs.round().max(1.0) as usize;
    let mut qrs = History::new(cfg.history);
    for b in 0..cfg.history {
        let lo = b * second;
        if lo >= n {
            break;
        }
        let hi = (lo + second).min(n);
        qrs.push(env[lo..hi].iter().cloned().fold(0.0, f64::max));
    }
    let mut noise = History::new(cfg.history);
    let mut rr = History::new(cfg.history);
    let threshold = |qrs: &History, noise: &History| {
        let q = qrs.mean().unwrap_or(0.0);
        let nm = noise.mean().unwrap_or(0.0);
        nm + cfg.threshold_coef * (q - nm)
    };

    let mut beats: Vec<usize> = Vec::new();
    // noise peaks seen since the last accepted beat, for search-back
    let mut pending: Vec<usize> = Vec::new();

    for &i in &candidates {
        if let (Some(&last), Some(mean_rr)) = (beats.last(), rr.mean()) {
            if (i - last) as f64 > cfg.searchback_factor * mean_rr {
                let th = threshold(&qrs, &noise);
                let best = pending
                    .iter()
                    .copied()
                    .filter(|&p| p - last >= refractory && i - p >= refractory)
                    .max_by(|&a, &b| env[a].total_cmp(&env[b]).then(b.cmp(&a)));
                if let Some(p) = best.filter(|&p| env[p] > cfg.searchback_scale * th) {
                    qrs.push(env[p]);
                    rr.push((p - last) as f64);
                    beats.push(p);
                    pending.retain(|&q| q > p);
                }
            }
        }

        let th = threshold(&qrs, &noise);
        let outside_refractory = beats.last().is_none_or(|&last| i - last >= refractory);
        if env[i] > th && outside_refractory {
            qrs.push(env[i]);
            if let Some(&last) = beats.last() {
                rr.push((i - last) as f64);
            }
            beats.push(i);
            pending.clear();
        } else if outside_refractory {
            noise.push(env[i]);
            pending.push(i);
        }
    }

    // Snap onto the signal maximum and re-impose the refractory period.
    let mut out: Vec<usize> = Vec::with_capacity(beats.len());
    for b in beats {
        let lo = b.saturating_sub(snap);
        let hi = (b + snap + 1).min(signal.len());
        let peak = argmax_first(&signal[lo..hi]).map(|j| lo + j).unwrap_or(b);
        match out.last_mut() {
            Some(last) if peak <= *last || peak - *last < refractory => {
                if peak > *last && signal[peak] > signal[*last] {
                    *last = peak;
                }
            }
            _ => out.push(peak),
        }
    }
    Ok(out)
}

/// Index of the first maximum of `x`.
fn argmax_first(x: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in x.iter().enumerate() {
        match best {
            Some(b) if *v <= x[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// For each R peak `r`, the argmax of `signal` over `[max(0, r-w1), max(0, r-w2))`;
/// R peaks whose window is empty contribute nothing.
pub fn find_p_peaks(signal: &[f64], r_peaks: &[usize], w1: usize, w2: usize) -> Vec<usize> {
    assert!(w1 > w2, "w1 must exceed w2");
    r_peaks
        .iter()
        .filter_map(|&r| {
            let d1 = r.saturating_sub(w1);
            let d2 = r.saturating_sub(w2).min(signal.len());
            if d1 < d2 {
                argmax_first(&signal[d1..d2]).map(|j| d1 + j)
            } else {
                None
            }
        })
        .collect()
}

/// R peaks followed by P peaks for one window.
pub fn detect_beats(
    signal: &[f64],
    fs: f64,
    cfg: &RPeakConfig,
    w1: usize,
    w2: usize,
) -> Result<BeatIndices, BeatError> {
    let r_peaks = detect_r_peaks_with(signal, fs, cfg)?;
    let p_peaks = find_p_peaks(signal, &r_peaks, w1, w2);
    Ok(BeatIndices { r_peaks, p_peaks })
}

/// Beat-matching counts between detections and ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl MatchCounts {
    pub fn sensitivity(&self) -> f64 {
        self.true_positives as f64 / (self.true_positives + self.false_negatives).max(1) as f64
    }

    pub fn positive_predictivity(&self) -> f64 {
        self.true_positives as f64 / (self.true_positives + self.false_positives).max(1) as f64
    }
}

/// Greedy one-to-one matching of sorted `detected` against sorted `truth`
/// within `tolerance` samples.
pub fn match_beats(detected: &[usize], truth: &[usize], tolerance: usize) -> MatchCounts {
    let (mut i, mut j, mut tp) = (0, 0, 0);
    while i < detected.len() && j < truth.len() {
        let (d, t) = (detected[i], truth[j]);
        if d.abs_diff(t) <= tolerance {
            tp += 1;
            i += 1;
            j += 1;
        } else if d < t {
            i += 1;
        } else {
            j += 1;
        }
    }
    MatchCounts {
        true_positives: tp,
        false_positives: detected.len() - tp,
        false_negatives: truth.len() - tp,
    }
}
