//! Band-pass filtering, analysis-window extraction and heart-rate rejection.

use std::f64::consts::PI;
use std::ops::Range;

use thiserror::Error;

use crate::ecg_io::EcgRecord;
use crate::exec::Execution;
use crate::Label;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("invalid band {low_cut}-{high_cut} Hz at fs={fs} Hz")]
    BadBand { low_cut: f64, high_cut: f64, fs: f64 },
    #[error("filter needs an odd tap count >= 31, got {0}")]
    EvenTaps(usize),
    #[error("signal of {len} samples is too short for a {taps}-tap filter")]
    SignalTooShort { len: usize, taps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirDesign {
    HammingWindowedSinc,
}

/// Linear-phase FIR band-pass filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    pub taps: Vec<f64>,
    pub low_cut: f64,
    pub high_cut: f64,
    pub design: FirDesign,
}

impl FirFilter {
    pub fn num_taps(&self) -> usize {
        self.taps.len()
    }

    /// Magnitude of the frequency response at `freq` Hz.
    pub fn gain_at(&self, freq: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq / fs;
        let (re, im) = self
            .taps
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (n, &h)| {
                (re + h * (w * n as f64).cos(), im - h * (w * n as f64).sin())
            });
        re.hypot(im)
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Hamming-windowed ideal band-pass, scaled to unit gain at the band centre.
pub fn design_fir_bandpass(
    low_cut: f64,
    high_cut: f64,
    num_taps: usize,
    fs: f64,
) -> Result<FirFilter, PreprocessError> {
    if !(low_cut > 0.0 && low_cut < high_cut && high_cut < fs / 2.0) {
        return Err(PreprocessError::BadBand { low_cut, high_cut, fs });
    }
    if num_taps.is_multiple_of(2) || num_taps < 31 {
        return Err(PreprocessError::EvenTaps(num_taps));
    }
    let centre = (num_taps - 1) as f64 / 2.0;
    let f1 = low_cut / fs;
    let f2 = high_cut / fs;
    let window: Vec<f64> = (0..num_taps)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (num_taps - 1) as f64).cos())
        .collect();
    let mut taps: Vec<f64> = (0..num_taps)
        .map(|n| {
            let x = n as f64 - centre;
            let ideal = 2.0 * f2 * sinc(2.0 * f2 * x) - 2.0 * f1 * sinc(2.0 * f1 * x);
            ideal * window[n]
        })
        .collect();
    // Truncation leaves a small DC leak; cancel it with a window-shaped
    // (very low-pass) correction so the filter is exactly zero at 0 Hz.
    let leak = taps.iter().sum::<f64>() / window.iter().sum::<f64>();
    taps.iter_mut().zip(&window).for_each(|(t, w)| *t -= leak * w);
    // Mirror so symmetry is exact regardless of rounding in the trig calls.
    for i in 0..num_taps / 2 {
        taps[num_taps - 1 - i] = taps[i];
    }
    let mut filter = FirFilter {
        taps,
        low_cut,
        high_cut,
        design: FirDesign::HammingWindowedSinc,
    };
    let g = filter.gain_at((low_cut + high_cut) / 2.0, fs);
    filter.taps.iter_mut().for_each(|t| *t /= g);
    Ok(filter)
}

/// Output chunk size for parallel convolution.
const CONV_CHUNK: usize = 8192;

/// Causal convolution `y[n] = sum_k h[k] x[n-k]`, zero history before `x[0]`.
fn convolve_causal(x: &[f64], h: &[f64], exec: Execution) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    exec.for_each_chunk(&mut y, CONV_CHUNK, |ci, out| {
        let start = ci * CONV_CHUNK;
        for (j, o) in out.iter_mut().enumerate() {
            let n = start + j;
            let kmax = h.len().min(n + 1);
            let mut acc = 0.0;
            for (k, hk) in h[..kmax].iter().enumerate() {
                acc += hk * x[n - k];
            }
            *o = acc;
        }
    });
    y
}

/// Forward-backward application of `f` with reflect padding of `num_taps`
/// samples at each edge. Output has the same length as `signal` and no net
/// phase shift.
pub fn filter_zero_phase(signal: &[f64], f: &FirFilter) -> Result<Vec<f64>, PreprocessError> {
    filter_zero_phase_with(signal, f, Execution::default())
}

pub fn filter_zero_phase_with(
    signal: &[f64],
    f: &FirFilter,
    exec: Execution,
) -> Result<Vec<f64>, PreprocessError> {
    let taps = f.num_taps();
    let n = signal.len();
    if n <= 3 * taps {
        return Err(PreprocessError::SignalTooShort { len: n, taps });
    }
    let pad = taps;
    let mut padded = Vec::with_capacity(n + 2 * pad);
    padded.extend((1..=pad).rev().map(|i| signal[i]));
    padded.extend_from_slice(signal);
    padded.extend((1..=pad).map(|i| signal[n - 1 - i]));

    let mut y = convolve_causal(&padded, &f.taps, exec);
    y.reverse();
    let mut y = convolve_causal(&y, &f.taps, exec);
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}

/// Five-minute (by default) slice of filtered signal centred on a labeled minute.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisWindow {
    pub record_id: String,
    pub center_minute: usize,
    pub samples: Vec<f64>,
    pub label: Label,
    pub fs: f64,
}

impl AnalysisWindow {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

/// `(center_minute, sample_range)` of every window whose full `span_minutes`
/// context lies inside the signal. `span_minutes` must be odd.
pub fn window_bounds(record: &EcgRecord, span_minutes: usize) -> Vec<(usize, Range<usize>)> {
    assert!(span_minutes % 2 == 1, "span_minutes must be odd");
    let h = (span_minutes - 1) / 2;
    let per_minute = record.samples_per_minute();
    (0..record.minute_labels.len())
        .filter(|&i| i >= h && (i + h + 1) * per_minute <= record.samples.len())
        .map(|i| (i, (i - h) * per_minute..(i + h + 1) * per_minute))
        .collect()
}

/// The window centred on `center_minute` covering `range`.
pub fn window_at(record: &EcgRecord, center_minute: usize, range: Range<usize>) -> AnalysisWindow {
    AnalysisWindow {
        record_id: record.record_id.clone(),
        center_minute,
        samples: record.samples[range].to_vec(),
        label: record.minute_labels[center_minute],
        fs: record.sampling_rate,
    }
}

/// One window per labeled minute whose full `span_minutes` context lies
/// inside the signal. Boundary minutes are dropped. `span_minutes` must be odd.
pub fn extract_windows(record: &EcgRecord, span_minutes: usize) -> Vec<AnalysisWindow> {
    window_bounds(record, span_minutes)
        .into_iter()
        .map(|(i, r)| window_at(record, i, r))
        .collect()
}

/// True iff the mean heart rate implied by `r_peaks` lies in `[min_bpm, max_bpm]`.
pub fn beat_rate_valid(r_peaks: &[usize], window_duration: f64, min_bpm: f64, max_bpm: f64) -> bool {
    assert!(window_duration > 0.0);
    let bpm = 60.0 * r_peaks.len() as f64 / window_duration;
    (min_bpm..=max_bpm).contains(&bpm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    /// Peak amplitude over the central half, away from edge transients.
    fn central_amplitude(x: &[f64]) -> f64 {
        let q = x.len() / 4;
        x[q..3 * q].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn design_errors() {
        assert!(matches!(design_fir_bandpass(0.0, 45.0, 401, 100.0), Err(PreprocessError::BadBand { .. })));
        assert!(matches!(design_fir_bandpass(10.0, 5.0, 401, 100.0), Err(PreprocessError::BadBand { .. })));
        assert!(matches!(design_fir_bandpass(0.5, 50.0, 401, 100.0), Err(PreprocessError::BadBand { .. })));
        assert_eq!(design_fir_bandpass(0.5, 45.0, 400, 100.0), Err(PreprocessError::EvenTaps(400)));
        assert_eq!(design_fir_bandpass(0.5, 45.0, 29, 100.0), Err(PreprocessError::EvenTaps(29)));
    }

    #[test]
    fn taps_symmetric_and_dc_free() {
        let f = design_fir_bandpass(0.5, 45.0, 401, 100.0).unwrap();
        let n = f.num_taps();
        assert_eq!(n, 401);
        for i in 0..n {
            assert_eq!(f.taps[i], f.taps[n - 1 - i]);
        }
        assert!(f.taps.iter().sum::<f64>().abs() < 1e-3);
    }

    #[test]
    fn midband_gain_by_filtering_a_sine() {
        let fs = 100.0;
        let f = design_fir_bandpass(0.5, 45.0, 401, fs).unwrap();
        let mid = (0.5 + 45.0) / 2.0;
        let x = sine(mid, fs, 6000);
        // single causal pass: steady-state amplitude is |H(mid)|
        let y = convolve_causal(&x, &f.taps, Execution::Sequential);
        let amp = central_amplitude(&y);
        assert!((0.95..=1.05).contains(&amp), "mid-band gain {amp}");
    }

    #[test]
    fn dc_is_removed() {
        let fs = 100.0;
        let f = design_fir_bandpass(0.5, 45.0, 401, fs).unwrap();
        let x = vec![1.0; 6000];
        let y = convolve_causal(&x, &f.taps, Execution::Sequential);
        assert!(central_amplitude(&y) < 0.01);
    }

    #[test]
    fn zero_phase_response() {
        let fs = 100.0;
        let f = design_fir_bandpass(0.5, 45.0, 401, fs).unwrap();
        let y = filter_zero_phase(&sine(20.0, fs, 12000), &f).unwrap();
        let amp = central_amplitude(&y);
        assert!((0.90..=1.05).contains(&amp), "20 Hz ratio {amp}");

        let y = filter_zero_phase(&sine(0.1, fs, 60000), &f).unwrap();
        let db = 20.0 * central_amplitude(&y).log10();
        assert!(db <= -20.0, "0.1 Hz attenuation {db} dB");
    }

    #[test]
    fn zero_phase_keeps_pulse_position() {
        let fs = 100.0;
        let f = design_fir_bandpass(0.5, 45.0, 401, fs).unwrap();
        let c = 1500;
        let x: Vec<f64> = (0..3000)
            .map(|i| (-0.5 * ((i as f64 - c as f64) / 3.0).powi(2)).exp())
            .collect();
        let y = filter_zero_phase(&x, &f).unwrap();
        let argmax = (0..y.len()).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
        assert!(argmax.abs_diff(c) <= 1);
        assert_eq!(y.len(), x.len());
    }

    #[test]
    fn too_short_signal() {
        let f = design_fir_bandpass(0.5, 45.0, 31, 100.0).unwrap();
        assert_eq!(
            filter_zero_phase(&[0.0; 93], &f),
            Err(PreprocessError::SignalTooShort { len: 93, taps: 31 })
        );
        assert!(filter_zero_phase(&[0.0; 94], &f).is_ok());
    }

    #[test]
    fn filter_is_linear() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let f = design_fir_bandpass(0.5, 45.0, 101, 100.0).unwrap();
        let x: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (2.5, -0.75);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = filter_zero_phase(&combo, &f).unwrap();
        let fx = filter_zero_phase(&x, &f).unwrap();
        let fy = filter_zero_phase(&y, &f).unwrap();
        let scale = lhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..lhs.len() {
            let rhs = a * fx[i] + b * fy[i];
            assert!((lhs[i] - rhs).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn parallel_filter_matches_sequential() {
        let f = design_fir_bandpass(0.5, 45.0, 401, 100.0).unwrap();
        let x: Vec<f64> = (0..40_000).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
        let a = filter_zero_phase_with(&x, &f, Execution::Sequential).unwrap();
        let b = filter_zero_phase_with(&x, &f, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    fn record(minutes: usize, labeled: usize) -> EcgRecord {
        EcgRecord {
            record_id: "r".into(),
            samples: (0..minutes * 6000).map(|i| i as f64).collect(),
            sampling_rate: 100.0,
            minute_labels: (0..labeled)
                .map(|i| if i % 3 == 0 { Label::A } else { Label::N })
                .collect(),
        }
    }

    #[test]
    fn window_boundaries() {
        let rec = record(10, 10);
        let w = extract_windows(&rec, 5);
        assert_eq!(w.iter().map(|w| w.center_minute).collect::<Vec<_>>(), vec![2, 3, 4, 5, 6, 7]);
        for win in &w {
            assert_eq!(win.samples.len(), 5 * 6000);
            assert_eq!(win.samples[0], ((win.center_minute - 2) * 6000) as f64);
            assert_eq!(win.label, rec.minute_labels[win.center_minute]);
        }
        assert_eq!(extract_windows(&rec, 1).len(), 10);
        // labels past the signal end get no window
        let rec = record(10, 11);
        assert_eq!(extract_windows(&rec, 1).len(), 10);
        assert!(extract_windows(&record(3, 3), 5).is_empty());
    }

    #[test]
    fn rate_rule() {
        let peaks = |n: usize| (0..n).collect::<Vec<_>>();
        assert!(beat_rate_valid(&peaks(300), 300.0, 20.0, 200.0));
        assert!(!beat_rate_valid(&peaks(50), 300.0, 20.0, 200.0));
        assert!(!beat_rate_valid(&peaks(1200), 300.0, 20.0, 200.0));
        assert!(beat_rate_valid(&peaks(100), 300.0, 20.0, 200.0));
        assert!(beat_rate_valid(&peaks(1000), 300.0, 20.0, 200.0));
    }
}
