use std::path::Path;
use std::process::Command;

use mpcnn::ecg_io::{list_records, read_record};
use mpcnn::evaluation::EvalError;
use mpcnn::Label;
use mpcnn::mp_features::{ChannelSet, FeatureFile};
use mpcnn::neural_net::load_model;
use mpcnn_cli::commands::{cmd_ablate, cmd_eval, cmd_preprocess, cmd_synth, cmd_train, Study};
use mpcnn_cli::config::PipelineConfig;
use mpcnn_cli::error::CliError;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_mpcnn");

fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    for kv in ["features.length=240", "train.epochs=4", "train.batch_size=16", "seed=11"] {
        cfg.apply_override(kv).unwrap();
    }
    cfg
}

fn corpus(dir: &Path, records: usize, minutes: usize, seed: u64) {
    cmd_synth(dir, records, minutes, seed, None).unwrap();
}

#[test]
fn preprocess_count_matches_direct_recount() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 4, 16, 5);
    let cfg = small_config();
    let out = tmp.path().join("f.mpf");
    let r = cmd_preprocess(&data, &out, &cfg).unwrap();

    let file = FeatureFile::read(&out).unwrap();
    assert_eq!(file.segments.len(), r.report.admitted);
    assert_eq!(r.report.records, 4);
    assert_eq!(r.report.admitted + r.report.rejected(), r.report.labeled_minutes);

    let h = (cfg.span_minutes - 1) / 2;
    let mut labeled = 0;
    let mut boundary = 0;
    for id in list_records(&data).unwrap() {
        let rec = read_record(&data, &id, &cfg.code_map).unwrap();
        let n = rec.minute_labels.len();
        labeled += n;
        let per_min = rec.samples_per_minute();
        let inside = (0..n).filter(|&i| i >= h && (i + h + 1) * per_min <= rec.samples.len()).count();
        boundary += n - inside;
        let segs: Vec<_> = file.segments.iter().filter(|s| s.record_id == id).collect();
        assert!(segs.len() <= inside);
        for w in segs.windows(2) {
            assert!(w[0].center_minute < w[1].center_minute);
        }
        for s in segs {
            let m = s.center_minute as usize;
            assert!(m >= h && m + h < n);
            assert_eq!(s.label, rec.minute_labels[m]);
        }
    }
    assert_eq!(r.report.labeled_minutes, labeled);
    assert_eq!(r.report.boundary, boundary);
    assert!(tmp.path().join("f.mpf.meta").exists());
}

#[test]
fn preprocess_empty_dir_is_no_records() {
    let tmp = TempDir::new().unwrap();
    let err = cmd_preprocess(tmp.path(), &tmp.path().join("f.mpf"), &small_config()).unwrap_err();
    assert!(matches!(err, CliError::NoRecords(_)), "{err:?}");
    assert_eq!(err.category(), "data");
}

#[test]
fn preprocess_min_channel_writes_one_channel() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 2, 12, 1);
    let mut cfg = small_config();
    cfg.apply_override("features.channels=min").unwrap();
    let out = tmp.path().join("f.mpf");
    cmd_preprocess(&data, &out, &cfg).unwrap();
    let file = FeatureFile::read(&out).unwrap();
    assert_eq!(file.channels.len(), 1);
    assert_eq!(file.channels, ChannelSet::parse("min").unwrap());
    assert!(file.segments.iter().all(|s| s.values.len() == 240));
}

#[test]
fn train_history_and_split_sizes() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 4, 20, 2);
    let cfg = small_config();
    let feats = tmp.path().join("f.mpf");
    let n = cmd_preprocess(&data, &feats, &cfg).unwrap().file.segments.len();
    let a = cmd_train(&feats, &tmp.path().join("m.mpnn"), &cfg).unwrap();

    assert_eq!(a.outcome.history.rows.len(), 4);
    let n_val = a.outcome.val_indices.len();
    assert_eq!(n_val + a.outcome.train_indices.len(), n);
    assert!(((n_val as f64) - 0.3 * n as f64).abs() <= 1.0, "{n_val} of {n}");

    let history = std::fs::read_to_string(&a.history_path).unwrap();
    assert!(history.contains(&format!("val_segments = {n_val}")));
    let rows = history.lines().skip_while(|l| !l.trim_start().starts_with("epoch")).skip(1).count();
    assert_eq!(rows, 4);
    assert!(a.best_path.exists());
    let (_, meta) = load_model(&a.best_path).unwrap();
    assert!(meta.contains("checkpoint = best"));
}

#[test]
fn preprocess_and_train_are_byte_deterministic() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 3, 14, 9);
    let cfg = small_config();
    let run = |tag: &str| {
        let f = tmp.path().join(format!("{tag}.mpf"));
        let m = tmp.path().join(format!("{tag}.mpnn"));
        cmd_preprocess(&data, &f, &cfg).unwrap();
        cmd_train(&f, &m, &cfg).unwrap();
        (std::fs::read(f).unwrap(), std::fs::read(m).unwrap())
    };
    let (f1, m1) = run("a");
    let (f2, m2) = run("b");
    assert_eq!(f1, f2);
    assert_eq!(m1, m2);
}

#[test]
fn eval_on_training_features_is_consistent() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 4, 20, 4);
    let mut cfg = small_config();
    cfg.apply_override("train.epochs=12").unwrap();
    let feats = tmp.path().join("f.mpf");
    cmd_preprocess(&data, &feats, &cfg).unwrap();
    let model = tmp.path().join("m.mpnn");
    let a = cmd_train(&feats, &model, &cfg).unwrap();
    let e = cmd_eval(&feats, &model, true, Some(&tmp.path().join("r.txt")), &cfg).unwrap();

    let final_train_acc = a.outcome.history.rows.last().unwrap().train_acc;
    let acc = e.metrics.acc.unwrap();
    assert!(acc >= final_train_acc - 0.02, "eval {acc} vs train {final_train_acc}");
    let c = e.counts;
    assert_eq!(acc, (c.tp + c.tn) as f64 / c.total() as f64);

    let report = std::fs::read_to_string(tmp.path().join("r.txt")).unwrap();
    assert_eq!(report, e.report);
    for (k, v) in cfg.entries() {
        assert!(report.contains(&format!("{k} = {v}\n")), "missing {k}");
    }
    let rm = e.recordings.unwrap();
    assert_eq!(rm.counts.total(), 4);
    assert!(rm.pearson.is_ok() || rm.pearson == Err(EvalError::ConstantInput));
}

#[test]
fn eval_single_recording_reports_pearson_error() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 3, 16, 6);
    let cfg = small_config();
    let feats = tmp.path().join("f.mpf");
    cmd_preprocess(&data, &feats, &cfg).unwrap();
    let model = tmp.path().join("m.mpnn");
    cmd_train(&feats, &model, &cfg).unwrap();

    let mut file = FeatureFile::read(&feats).unwrap();
    let first = file.segments[0].record_id.clone();
    file.segments.retain(|s| s.record_id == first);
    let single = tmp.path().join("one.mpf");
    file.write(&single).unwrap();

    let e = cmd_eval(&single, &model, true, None, &cfg).unwrap();
    let rm = e.recordings.unwrap();
    assert_eq!(rm.pearson, Err(EvalError::NeedTwoRecordings(1)));
    assert_eq!(rm.counts.total(), 1);
    assert!(e.metrics.acc.is_some());
    assert!(e.report.contains("[per_segment]"));
    assert!(e.report.contains(&format!("[recording {first}]")));
}

#[test]
fn ablate_row_counts_with_single_repeat() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 3, 14, 8);
    let mut cfg = small_config();
    cfg.apply_override("train.epochs=2").unwrap();

    let t = cmd_ablate(Study::Features, &data, None, Some(1), &cfg).unwrap();
    let names: Vec<_> = t.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["M1", "M2", "M3", "M4", "M5", "M6", "M7"]);
    assert_eq!(t.evaluated_on, "validation");
    for r in &t.rows {
        if let Some(a) = r.acc {
            assert_eq!(a.std, 0.0);
            assert_eq!(a.n, 1);
        }
    }

    let t = cmd_ablate(Study::Window, &data, Some(&data), Some(1), &cfg).unwrap();
    let names: Vec<_> = t.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["T1", "T2", "T3", "T4"]);
    assert_eq!(t.evaluated_on, "test");
    assert!(t.text.contains("study = window"));
}

#[test]
fn labels_come_from_annotations() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 4, 30, 12);
    let cfg = small_config();
    let r = cmd_preprocess(&data, &tmp.path().join("f.mpf"), &cfg).unwrap();
    let labels: Vec<Label> = r.file.segments.iter().map(|s| s.label).collect();
    assert!(labels.contains(&Label::A));
    assert!(labels.contains(&Label::N));
}

fn bin(args: &[&str], cwd: &Path) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).current_dir(cwd).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn binary_rejects_unknown_config_key() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("c.cfg"), "seed = 1\nnot.a.key = 3\n").unwrap();
    let (code, _, err) = bin(&["--config", "c.cfg", "synth", "--out", "d"], tmp.path());
    assert_ne!(code, 0);
    assert!(err.starts_with("error[config]:"), "{err}");
    assert!(err.contains("not.a.key"));
    assert!(!tmp.path().join("d").exists());
}

#[test]
fn binary_exit_codes_by_category() {
    let tmp = TempDir::new().unwrap();
    let (code, _, err) = bin(&["preprocess", "--data-dir", ".", "--out", "f.mpf"], tmp.path());
    assert_eq!(code, 4);
    assert!(err.starts_with("error[data]:"), "{err}");

    let (code, _, err) = bin(&["eval", "--features", "x.mpf", "--model", "m.mpnn"], tmp.path());
    assert_eq!(code, 3);
    assert!(err.starts_with("error[io]:"), "{err}");

    let (code, _, err) = bin(&["--threads", "0", "synth", "--out", "d"], tmp.path());
    assert_eq!(code, 2);
    assert!(err.starts_with("error[config]:"), "{err}");

    let (code, _, err) = bin(&["--set", "train.epochs=zero", "synth", "--out", "d"], tmp.path());
    assert_eq!(code, 2, "{err}");
}

#[test]
fn binary_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path();
    let cfg = "features.length = 240\ntrain.epochs = 2\ntrain.batch_size = 16\n";
    std::fs::write(p.join("c.cfg"), cfg).unwrap();
    let run = |args: &[&str]| {
        let mut v = vec!["--config", "c.cfg", "--seed", "4", "--threads", "2"];
        v.extend_from_slice(args);
        let (code, out, err) = bin(&v, p);
        assert_eq!(code, 0, "{args:?}: {err}");
        out
    };
    run(&["synth", "--out", "data", "--records", "2", "--minutes", "12"]);
    let out = run(&["preprocess", "--data-dir", "data", "--out", "f.mpf"]);
    assert!(out.contains("admitted = "));
    let out = run(&["train", "--features", "f.mpf", "--out", "m.mpnn"]);
    assert!(out.contains("best_epoch = "));
    let out = run(&["eval", "--features", "f.mpf", "--model", "m.mpnn", "--per-recording"]);
    assert!(out.contains("seed = 4\n"));
    assert!(out.contains("pearson"));
}
