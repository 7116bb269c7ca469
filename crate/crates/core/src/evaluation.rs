//! Per-segment and per-recording metrics.
//!
//! The positive class is apnea (`A`). Ratios with a zero denominator are
//! reported as `None`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::Label;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no minutes to score")]
    EmptyInput,
    #[error("length mismatch: {0} predictions vs {1} references")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least two recordings, got {0}")]
    NeedTwoRecordings(usize),
    #[error("correlation undefined for a constant series")]
    ConstantInput,
}

/// AHI at or above which a recording is diagnosed as apnea.
pub const AHI_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_labels(predicted: &[Label], reference: &[Label]) -> Result<Self, EvalError> {
        if predicted.len() != reference.len() {
            return Err(EvalError::LengthMismatch(predicted.len(), reference.len()));
        }
        let mut c = Self::default();
        for (p, r) in predicted.iter().zip(reference) {
            c.add(p.is_apnea(), r.is_apnea());
        }
        Ok(c)
    }

    pub fn add(&mut self, predicted_positive: bool, actual_positive: bool) {
        match (predicted_positive, actual_positive) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// 2x2 table, rows = reference, columns = prediction.
    pub fn table(&self) -> String {
        let w = [self.tp, self.tn, self.fp, self.fn_]
            .iter()
            .map(|v| v.to_string().len())
            .max()
            .unwrap_or(1)
            .max(6);
        format!(
            "{:>8} {:>w$} {:>w$}\n{:>8} {:>w$} {:>w$}\n{:>8} {:>w$} {:>w$}\n",
            "ref\\pred", "pred_N", "pred_A", "ref_N", self.tn, self.fp, "ref_A", self.fn_, self.tp
        )
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentMetrics {
    pub acc: Option<f64>,
    pub sens: Option<f64>,
    pub spec: Option<f64>,
    pub f1: Option<f64>,
}

pub fn segment_metrics(c: &ConfusionCounts) -> SegmentMetrics {
    SegmentMetrics {
        acc: ratio(c.tp + c.tn, c.total()),
        sens: ratio(c.tp, c.tp + c.fn_),
        spec: ratio(c.tn, c.tn + c.fp),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

/// Mann-Whitney AUC of `scores` for the positive class, ties by midrank.
/// `None` when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<Option<f64>, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|l| l.is_apnea()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k].is_apnea()).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok(Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n)))
}

/// Apnea minutes per hour.
pub fn compute_ahi(minutes: &[Label]) -> Result<f64, EvalError> {
    if minutes.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let a = minutes.iter().filter(|l| l.is_apnea()).count();
    Ok(60.0 * a as f64 / minutes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagnosis {
    Normal,
    Apnea,
}

impl Diagnosis {
    pub fn from_ahi(ahi: f64) -> Self {
        if ahi >= AHI_THRESHOLD {
            Diagnosis::Apnea
        } else {
            Diagnosis::Normal
        }
    }

    pub fn is_apnea(self) -> bool {
        self == Diagnosis::Apnea
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Diagnosis::Normal => "normal",
            Diagnosis::Apnea => "apnea",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingReport {
    pub record_id: String,
    pub minutes: usize,
    pub predicted_ahi: f64,
    pub reference_ahi: f64,
    pub predicted_diagnosis: Diagnosis,
    pub reference_diagnosis: Diagnosis,
}

impl RecordingReport {
    /// Scores one recording from its retained minutes.
    pub fn new(record_id: &str, predicted: &[Label], reference: &[Label]) -> Result<Self, EvalError> {
        if predicted.len() != reference.len() {
            return Err(EvalError::LengthMismatch(predicted.len(), reference.len()));
        }
        let predicted_ahi = compute_ahi(predicted)?;
        let reference_ahi = compute_ahi(reference)?;
        Ok(Self {
            record_id: record_id.to_string(),
            minutes: predicted.len(),
            predicted_ahi,
            reference_ahi,
            predicted_diagnosis: Diagnosis::from_ahi(predicted_ahi),
            reference_diagnosis: Diagnosis::from_ahi(reference_ahi),
        })
    }
}

/// Groups per-segment predictions by record id, in id order.
pub fn group_by_record(record_ids: &[&str], predicted: &[Label], reference: &[Label]) -> Result<Vec<RecordingReport>, EvalError> {
    if record_ids.len() != predicted.len() || predicted.len() != reference.len() {
        return Err(EvalError::LengthMismatch(predicted.len(), reference.len()));
    }
    let mut groups: BTreeMap<&str, (Vec<Label>, Vec<Label>)> = BTreeMap::new();
    for ((id, p), r) in record_ids.iter().zip(predicted).zip(reference) {
        let g = groups.entry(id).or_default();
        g.0.push(*p);
        g.1.push(*r);
    }
    groups
        .into_iter()
        .map(|(id, (p, r))| RecordingReport::new(id, &p, &r))
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::NeedTwoRecordings(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingMetrics {
    pub counts: ConfusionCounts,
    pub metrics: SegmentMetrics,
    pub auc: Option<f64>,
    pub pearson: Result<f64, EvalError>,
}

/// Diagnosis confusion over recordings, AUC with predicted AHI as score,
/// and Pearson r between predicted and reference AHI.
pub fn recording_metrics(reports: &[RecordingReport]) -> RecordingMetrics {
    let mut counts = ConfusionCounts::default();
    for r in reports {
        counts.add(r.predicted_diagnosis.is_apnea(), r.reference_diagnosis.is_apnea());
    }
    let scores: Vec<f64> = reports.iter().map(|r| r.predicted_ahi).collect();
    let truth: Vec<Label> = reports
        .iter()
        .map(|r| if r.reference_diagnosis.is_apnea() { Label::A } else { Label::N })
        .collect();
    let reference: Vec<f64> = reports.iter().map(|r| r.reference_ahi).collect();
    RecordingMetrics {
        counts,
        metrics: segment_metrics(&counts),
        auc: roc_auc(&scores, &truth).expect("equal lengths"),
        pearson: pearson(&scores, &reference),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

/// `key=value` lines for a metrics block.
pub fn metrics_block(title: &str, counts: &ConfusionCounts, m: &SegmentMetrics, auc: Option<f64>) -> String {
    let mut s = format!("[{title}]\n");
    let _ = writeln!(s, "count={}", counts.total());
    let _ = writeln!(s, "tp={}\ntn={}\nfp={}\nfn={}", counts.tp, counts.tn, counts.fp, counts.fn_);
    let _ = writeln!(s, "acc={}\nsens={}\nspec={}\nf1={}\nauc={}", opt(m.acc), opt(m.sens), opt(m.spec), opt(m.f1), opt(auc));
    s.push_str(&counts.table());
    s
}

pub fn recording_block(r: &RecordingReport) -> String {
    format!(
        "[recording {}]\nminutes={}\npredicted_ahi={:.4}\nreference_ahi={:.4}\npredicted_diagnosis={}\nreference_diagnosis={}\n",
        r.record_id, r.minutes, r.predicted_ahi, r.reference_ahi, r.predicted_diagnosis, r.reference_diagnosis
    )
}

pub fn recording_summary_block(m: &RecordingMetrics) -> String {
    let mut s = metrics_block("per_recording", &m.counts, &m.metrics, m.auc);
    match &m.pearson {
        Ok(r) => {
            let _ = writeln!(s, "pearson={r:.6}");
        }
        Err(e) => {
            let _ = writeln!(s, "pearson=undefined\npearson_error={e}");
        }
    }
    s
}
