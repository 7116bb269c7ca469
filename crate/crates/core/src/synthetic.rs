//! Deterministic synthetic single-lead ECG with known fiducials.
//!
//! Each beat is a sum of Gaussian lobes (P, Q, R, S, T) placed at integer
//! sample offsets from its R peak. Minutes labeled apnea get a cyclic
//! heart-rate modulation plus a matching R-amplitude modulation, mimicking
//! the cyclic variation of heart rate seen during obstructive events. The
//! T wave moves with the RR interval, so the distance-profile features see
//! the modulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::beat_detection::BeatIndices;
use crate::ecg_io::{EcgRecord, LabelSource, MinuteLabels};
use crate::Label;

pub const SYNTH_FS: f64 = 100.0;

/// Offset of the generated P peak before the R peak, samples.
pub const P_OFFSET: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("bad synthetic config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub record_id: String,
    pub duration_minutes: usize,
    pub base_bpm: f64,
    /// Peak heart-rate deviation during apnea minutes, bpm.
    pub modulation_bpm: f64,
    /// Period of the apnea modulation, seconds.
    pub modulation_period_s: f64,
    /// `None` disables additive noise.
    pub noise_snr_db: Option<f64>,
    /// Expected fraction of apnea minutes; labels come in runs.
    pub apnea_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            record_id: "s01".into(),
            duration_minutes: 10,
            base_bpm: 60.0,
            modulation_bpm: 15.0,
            modulation_period_s: 30.0,
            noise_snr_db: Some(20.0),
            apnea_fraction: 0.4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::BadConfig(m.to_string()));
        if !(30.0..=180.0).contains(&self.base_bpm) {
            return bad("base_bpm must lie in [30, 180]");
        }
        if self.duration_minutes < 1 {
            return bad("duration must be at least one minute");
        }
        if !(0.0..=1.0).contains(&self.apnea_fraction) {
            return bad("apnea_fraction must lie in [0, 1]");
        }
        if self.modulation_bpm < 0.0 || self.base_bpm - self.modulation_bpm < 20.0 {
            return bad("modulation must keep the rate above 20 bpm");
        }
        if !(self.modulation_period_s > 0.0) {
            return bad("modulation period must be positive");
        }
        Ok(())
    }
}

pub struct SynthOutput {
    pub record: EcgRecord,
    pub truth: BeatIndices,
    pub labels: MinuteLabels,
}

/// Gaussian lobe: offset from R (samples), amplitude (mV), width (samples).
struct Lobe {
    offset: f64,
    amplitude: f64,
    sigma: f64,
}

fn beat_lobes(rr_samples: f64, r_amplitude: f64) -> [Lobe; 5] {
    // QT scales with sqrt(RR) (Bazett); T peak sits ~0.3 s after R at 60 bpm.
    let t_offset = 30.0 * (rr_samples / SYNTH_FS).sqrt();
    [
        Lobe { offset: -(P_OFFSET as f64), amplitude: 0.15, sigma: 2.5 },
        Lobe { offset: -3.0, amplitude: -0.12, sigma: 1.0 },
        Lobe { offset: 0.0, amplitude: r_amplitude, sigma: 1.0 },
        Lobe { offset: 3.0, amplitude: -0.25, sigma: 1.0 },
        Lobe { offset: t_offset, amplitude: 0.3, sigma: 4.0 },
    ]
}

/// Minute labels in runs: each run has 2-8 minutes, apnea with the
/// configured probability.
fn draw_labels(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Label> {
    let mut labels = Vec::with_capacity(cfg.duration_minutes);
    while labels.len() < cfg.duration_minutes {
        let run = rng.random_range(2..=8);
        let l = if rng.random::<f64>() < cfg.apnea_fraction {
            Label::A
        } else {
            Label::N
        };
        labels.extend(std::iter::repeat_n(l, run));
    }
    labels.truncate(cfg.duration_minutes);
    labels
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels = draw_labels(cfg, &mut rng);
    let per_minute = (60.0 * SYNTH_FS) as usize;
    let n = cfg.duration_minutes * per_minute;

    let label_at = |t: f64| labels[((t / 60.0) as usize).min(labels.len() - 1)];
    let phase = |t: f64| (2.0 * std::f64::consts::PI * t / cfg.modulation_period_s).sin();

    // Beat times: integrate the instantaneous rate from half an RR in.
    let mut r_peaks = Vec::new();
    let mut rrs = Vec::new();
    let mut t = 0.5 * 60.0 / cfg.base_bpm;
    loop {
        let r = (t * SYNTH_FS).round() as usize;
        if r >= n {
            break;
        }
        let bpm = match label_at(t) {
            Label::A => cfg.base_bpm + cfg.modulation_bpm * phase(t),
            Label::N => cfg.base_bpm,
        };
        let rr = 60.0 / bpm;
        r_peaks.push(r);
        rrs.push(rr * SYNTH_FS);
        t += rr;
    }

    let mut samples = vec![0.0; n];
    for (&r, &rr) in r_peaks.iter().zip(&rrs) {
        let tr = r as f64 / SYNTH_FS;
        let amp = match label_at(tr) {
            Label::A => 1.0 + 0.15 * phase(tr),
            Label::N => 1.0,
        };
        for lobe in beat_lobes(rr, amp) {
            let centre = r as f64 + lobe.offset;
            let reach = 5.0 * lobe.sigma;
            let lo = (centre - reach).floor().max(0.0) as usize;
            let hi = ((centre + reach).ceil() as usize).min(n - 1);
            for (i, s) in samples.iter_mut().enumerate().take(hi + 1).skip(lo) {
                let d = (i as f64 - centre) / lobe.sigma;
                *s += lobe.amplitude * (-0.5 * d * d).exp();
            }
        }
    }

    if let Some(snr_db) = cfg.noise_snr_db {
        let power = samples.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for s in &mut samples {
            *s += normal.sample(&mut rng);
        }
    }

    let p_peaks = r_peaks.iter().filter_map(|r| r.checked_sub(P_OFFSET)).collect();
    Ok(SynthOutput {
        record: EcgRecord {
            record_id: cfg.record_id.clone(),
            samples,
            sampling_rate: SYNTH_FS,
            minute_labels: labels.clone(),
        },
        truth: BeatIndices { r_peaks, p_peaks },
        labels: MinuteLabels {
            labels,
            source: LabelSource::TextFile,
        },
    })
}

/// Configs for a small corpus of `records` recordings with apnea burdens
/// spread between mostly-normal and mostly-apneic.
pub fn corpus_configs(records: usize, minutes: usize, seed: u64) -> Vec<SynthConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..records)
        .map(|i| {
            let frac = if records == 1 {
                0.5
            } else {
                0.1 + 0.8 * i as f64 / (records - 1) as f64
            };
            SynthConfig {
                record_id: format!("s{:02}", i + 1),
                duration_minutes: minutes,
                base_bpm: rng.random_range(55.0..80.0),
                apnea_fraction: frac,
                seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                ..SynthConfig::default()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_dev(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn regular_rhythm_at_60_bpm() {
        let cfg = SynthConfig {
            duration_minutes: 2,
            apnea_fraction: 0.0,
            noise_snr_db: None,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        assert_eq!(out.truth.r_peaks.len(), 120);
        assert!(out.truth.r_peaks.windows(2).all(|w| w[1] - w[0] == 100));
        assert_eq!(out.record.samples.len(), 12000);
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig { seed: 42, ..SynthConfig::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn r_peaks_are_local_maxima() {
        let cfg = SynthConfig {
            noise_snr_db: None,
            apnea_fraction: 0.5,
            seed: 9,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        let x = &out.record.samples;
        for &r in &out.truth.r_peaks {
            if r > 0 && r + 1 < x.len() {
                assert!(x[r] > x[r - 1] && x[r] > x[r + 1], "R at {r}");
            }
        }
    }

    #[test]
    fn apnea_minutes_have_more_rr_variability() {
        let cfg = SynthConfig {
            duration_minutes: 30,
            noise_snr_db: None,
            apnea_fraction: 0.5,
            seed: 4,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        let labels = &out.record.minute_labels;
        assert!(labels.contains(&Label::A) && labels.contains(&Label::N));
        let mut rr_a = Vec::new();
        let mut rr_n = Vec::new();
        for w in out.truth.r_peaks.windows(2) {
            let minute = w[0] / 6000;
            // skip intervals straddling a label change
            if w[1] / 6000 != minute {
                continue;
            }
            let rr = (w[1] - w[0]) as f64;
            match labels[minute] {
                Label::A => rr_a.push(rr),
                Label::N => rr_n.push(rr),
            }
        }
        assert!(std_dev(&rr_a) > std_dev(&rr_n));
    }

    #[test]
    fn config_validation() {
        let bad = SynthConfig { base_bpm: 200.0, ..SynthConfig::default() };
        assert!(generate(&bad).is_err());
        let bad = SynthConfig { duration_minutes: 0, ..SynthConfig::default() };
        assert!(generate(&bad).is_err());
    }
}
