use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mpcnn::ecg_io::{write_record, DEFAULT_GAIN};
use mpcnn::evaluation::{
    group_by_record, metrics_block, recording_block, recording_metrics, recording_summary_block, roc_auc,
    segment_metrics, ConfusionCounts, RecordingMetrics, SegmentMetrics,
};
use mpcnn::mp_features::{ChannelSet, FeatureFile, FeatureSegment};
use mpcnn::neural_net::{load_model, predict, save_model, train, Model, TrainOutcome};
use mpcnn::synthetic::{corpus_configs, generate};
use mpcnn::Label;

use crate::config::{PipelineConfig, WindowChoice};
use crate::error::CliError;
use crate::pipeline::{extract_corpus, RejectionReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_err(path))
}

/// Provenance header shared by every text artifact.
pub fn provenance(command: &str, cfg: &PipelineConfig) -> String {
    format!("# mpcnn {VERSION} {command}\n[config]\n{}", cfg.to_text())
}

/// `path` with `suffix` appended to the full file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// `m.mpnn` → `m.<ext>`.
pub fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

#[derive(Debug, Clone)]
pub struct PreprocessOutcome {
    pub file: FeatureFile,
    pub report: RejectionReport,
}

/// Writes `out` (`.mpf`) and `out.meta` with the effective config and
/// rejection counts.
pub fn cmd_preprocess(data_dir: &Path, out: &Path, cfg: &PipelineConfig) -> Result<PreprocessOutcome, CliError> {
    let wc = cfg.window_config(cfg.window);
    let (segments, report) = extract_corpus(data_dir, cfg, &wc, cfg.channels)?;
    let file = FeatureFile {
        length: cfg.feature_length,
        channels: cfg.channels,
        segments,
    };
    file.write(out)?;
    let meta = format!("{}[rejections]\n{}", provenance("preprocess", cfg), report.to_text());
    write_text(&sidecar(out, ".meta"), &meta)?;
    Ok(PreprocessOutcome { file, report })
}

pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub model_path: PathBuf,
    pub best_path: PathBuf,
    pub history_path: PathBuf,
}

fn history_text(cfg: &PipelineConfig, outcome: &TrainOutcome) -> String {
    format!(
        "{}[split]\ntrain_segments = {}\nval_segments = {}\nbest_epoch = {}\n[history]\n{}",
        provenance("train", cfg),
        outcome.train_indices.len(),
        outcome.val_indices.len(),
        outcome.best_epoch,
        outcome.history.to_table()
    )
}

/// Trains on an `.mpf` file. Writes the final model to `out`, the best
/// validation checkpoint to `<out stem>.best.mpnn` and the history table to
/// `<out stem>.history.txt`.
pub fn cmd_train(features: &Path, out: &Path, cfg: &PipelineConfig) -> Result<TrainArtifacts, CliError> {
    let file = FeatureFile::read(features)?;
    if file.segments.is_empty() {
        return Err(CliError::Config("feature file holds no segments".into()));
    }
    let outcome = train(&file.segments, &cfg.train_config())?;
    let meta = format!(
        "{}[training]\nsegments = {}\nlength = {}\nchannels = {}\ntrain_segments = {}\nval_segments = {}\nbest_epoch = {}\n",
        provenance("train", cfg),
        file.segments.len(),
        file.length,
        file.channels.to_config_string(),
        outcome.train_indices.len(),
        outcome.val_indices.len(),
        outcome.best_epoch
    );
    let best_path = sibling(out, "best.mpnn");
    let history_path = sibling(out, "history.txt");
    save_model(out, &outcome.final_model, &format!("{meta}checkpoint = final\n"))?;
    save_model(&best_path, &outcome.best_model, &format!("{meta}checkpoint = best\n"))?;
    write_text(&history_path, &history_text(cfg, &outcome))?;
    Ok(TrainArtifacts {
        outcome,
        model_path: out.to_path_buf(),
        best_path,
        history_path,
    })
}

/// Argmax labels and `P(A)` scores.
pub fn classify(model: &Model, segments: &[FeatureSegment]) -> Result<(Vec<Label>, Vec<f64>), CliError> {
    let probs = predict(model, segments, 128)?;
    let labels = probs
        .iter()
        .map(|p| if p[Label::A.index()] > p[Label::N.index()] { Label::A } else { Label::N })
        .collect();
    let scores = probs.iter().map(|p| p[Label::A.index()]).collect();
    Ok((labels, scores))
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub counts: ConfusionCounts,
    pub metrics: SegmentMetrics,
    pub auc: Option<f64>,
    pub recordings: Option<RecordingMetrics>,
    pub report: String,
}

pub fn evaluate_segments(model: &Model, segments: &[FeatureSegment]) -> Result<(ConfusionCounts, Vec<Label>, Vec<f64>), CliError> {
    let (predicted, scores) = classify(model, segments)?;
    let reference: Vec<Label> = segments.iter().map(|s| s.label).collect();
    let counts = ConfusionCounts::from_labels(&predicted, &reference)?;
    Ok((counts, predicted, scores))
}

pub fn cmd_eval(
    features: &Path,
    model_path: &Path,
    per_recording: bool,
    report_path: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<EvalOutcome, CliError> {
    let file = FeatureFile::read(features)?;
    let (model, model_meta) = load_model(model_path)?;
    let (counts, predicted, scores) = evaluate_segments(&model, &file.segments)?;
    let reference: Vec<Label> = file.segments.iter().map(|s| s.label).collect();
    let metrics = segment_metrics(&counts);
    let auc = roc_auc(&scores, &reference)?;

    let mut report = provenance("eval", cfg);
    report.push_str("[model]\n");
    for line in model_meta.lines().filter(|l| !l.starts_with('#') && !l.starts_with('[')) {
        let _ = writeln!(report, "model.{line}");
    }
    report.push_str(&metrics_block("per_segment", &counts, &metrics, auc));

    let recordings = if per_recording {
        let ids: Vec<&str> = file.segments.iter().map(|s| s.record_id.as_str()).collect();
        let reports = group_by_record(&ids, &predicted, &reference)?;
        for r in &reports {
            report.push_str(&recording_block(r));
        }
        let m = recording_metrics(&reports);
        report.push_str(&recording_summary_block(&m));
        Some(m)
    } else {
        None
    };
    if let Some(p) = report_path {
        write_text(p, &report)?;
    }
    Ok(EvalOutcome {
        counts,
        metrics,
        auc,
        recordings,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Features,
    Window,
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }

    /// Percentages with two decimals, e.g. `91.76±0.13`.
    pub fn percent(&self) -> String {
        format!("{:.2}±{:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

fn fmt_cell(v: Option<MeanStd>) -> String {
    v.map_or_else(|| "n/a".to_string(), |m| m.percent())
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub setting: String,
    pub acc: Option<MeanStd>,
    pub sens: Option<MeanStd>,
    pub spec: Option<MeanStd>,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub study: Study,
    pub repeats: usize,
    pub evaluated_on: &'static str,
    pub rows: Vec<AblationRow>,
    pub text: String,
}

fn run_condition(
    name: String,
    setting: String,
    train_segs: &[FeatureSegment],
    test_segs: Option<&[FeatureSegment]>,
    cfg: &PipelineConfig,
    repeats: usize,
) -> Result<AblationRow, CliError> {
    let (mut acc, mut sens, mut spec) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..repeats {
        let mut tc = cfg.train_config();
        tc.seed = cfg.seed.wrapping_add(r as u64);
        let outcome = train(train_segs, &tc)?;
        let eval_owned: Vec<FeatureSegment>;
        let eval_segs = match test_segs {
            Some(t) => t,
            None => {
                eval_owned = outcome.val_indices.iter().map(|&i| train_segs[i].clone()).collect();
                &eval_owned
            }
        };
        let (counts, _, _) = evaluate_segments(&outcome.final_model, eval_segs)?;
        let m = segment_metrics(&counts);
        acc.extend(m.acc);
        sens.extend(m.sens);
        spec.extend(m.spec);
    }
    let summarise = |v: &[f64]| if v.len() == repeats { MeanStd::of(v) } else { None };
    Ok(AblationRow {
        name,
        setting,
        acc: summarise(&acc),
        sens: summarise(&sens),
        spec: summarise(&spec),
    })
}

/// Runs the channel-subset (M1..M7) or window (T1..T4) study. Each condition
/// trains `repeats` times with seeds `seed, seed+1, ...` and is scored on
/// `test_dir` when given, otherwise on each run's validation split.
pub fn cmd_ablate(
    study: Study,
    data_dir: &Path,
    test_dir: Option<&Path>,
    repeats: Option<usize>,
    cfg: &PipelineConfig,
) -> Result<AblationTable, CliError> {
    let repeats = repeats.unwrap_or(cfg.repeats);
    if repeats < 1 {
        return Err(CliError::Config("repeats must be at least 1".into()));
    }
    let mut rows = Vec::new();
    match study {
        Study::Features => {
            let wc = cfg.window_config(cfg.window);
            let (all, _) = extract_corpus(data_dir, cfg, &wc, ChannelSet::ALL)?;
            let test = test_dir
                .map(|d| extract_corpus(d, cfg, &wc, ChannelSet::ALL).map(|r| r.0))
                .transpose()?;
            for (i, set) in ChannelSet::ablation_order().into_iter().enumerate() {
                let train_segs: Vec<FeatureSegment> = all.iter().map(|s| s.select(set)).collect();
                let test_segs: Option<Vec<FeatureSegment>> =
                    test.as_ref().map(|t| t.iter().map(|s| s.select(set)).collect());
                rows.push(run_condition(
                    format!("M{}", i + 1),
                    set.to_string(),
                    &train_segs,
                    test_segs.as_deref(),
                    cfg,
                    repeats,
                )?);
            }
        }
        Study::Window => {
            for choice in WindowChoice::ALL {
                let wc = cfg.window_config(choice);
                let (train_segs, _) = extract_corpus(data_dir, cfg, &wc, cfg.channels)?;
                let test = test_dir
                    .map(|d| extract_corpus(d, cfg, &wc, cfg.channels).map(|r| r.0))
                    .transpose()?;
                let fid = match wc.start_fiducial {
                    mpcnn::mp_features::Fiducial::P => "P",
                    mpcnn::mp_features::Fiducial::Q => "Q",
                };
                rows.push(run_condition(
                    choice.name().to_string(),
                    format!("{fid}:{}", wc.m),
                    &train_segs,
                    test.as_deref(),
                    cfg,
                    repeats,
                )?);
            }
        }
    }
    let evaluated_on = if test_dir.is_some() { "test" } else { "validation" };
    let study_name = match study {
        Study::Features => "features",
        Study::Window => "window",
    };
    let mut text = provenance("ablate", cfg);
    let _ = writeln!(text, "[ablation]\nstudy = {study_name}\nrepeats = {repeats}\nevaluated_on = {evaluated_on}");
    let _ = writeln!(text, "{:<5} {:<22} {:>13} {:>13} {:>13}", "cond", "setting", "acc(%)", "sens(%)", "spec(%)");
    for r in &rows {
        let _ = writeln!(
            text,
            "{:<5} {:<22} {:>13} {:>13} {:>13}",
            r.name,
            r.setting,
            fmt_cell(r.acc),
            fmt_cell(r.sens),
            fmt_cell(r.spec)
        );
    }
    Ok(AblationTable {
        study,
        repeats,
        evaluated_on,
        rows,
        text,
    })
}

/// Writes `records` synthetic recordings of `minutes` minutes to `out`.
pub fn cmd_synth(out: &Path, records: usize, minutes: usize, seed: u64, snr_db: Option<f64>) -> Result<Vec<String>, CliError> {
    if records == 0 {
        return Err(CliError::Config("records must be at least 1".into()));
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut ids = Vec::with_capacity(records);
    for mut sc in corpus_configs(records, minutes, seed) {
        if let Some(snr) = snr_db {
            sc.noise_snr_db = Some(snr);
        }
        let generated = generate(&sc)?;
        write_record(out, &generated.record, DEFAULT_GAIN)?;
        ids.push(sc.record_id);
    }
    Ok(ids)
}
