//! Pipeline configuration: `key = value` text with `#` comments.
//!
//! Defaults are overridden by a config file, then by `--set key=value` flags,
//! then by `--seed`. Unknown and duplicate keys are errors.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use mpcnn::beat_detection::RPeakConfig;
use mpcnn::ecg_io::CodeMap;
use mpcnn::mp_features::{ChannelSet, Fiducial, WindowConfig};
use mpcnn::neural_net::{Adam, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowChoice {
    T1,
    T2,
    T3,
    T4,
}

impl WindowChoice {
    pub const ALL: [WindowChoice; 4] = [WindowChoice::T1, WindowChoice::T2, WindowChoice::T3, WindowChoice::T4];

    pub fn name(self) -> &'static str {
        match self {
            WindowChoice::T1 => "T1",
            WindowChoice::T2 => "T2",
            WindowChoice::T3 => "T3",
            WindowChoice::T4 => "T4",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for WindowChoice {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        WindowChoice::ALL
            .into_iter()
            .find(|w| w.name().eq_ignore_ascii_case(s))
            .ok_or(())
    }
}

/// Anatomical start point and subsequence length of one window option.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub start: Fiducial,
    pub m: usize,
}

impl WindowSpec {
    fn parse(s: &str) -> Option<Self> {
        let (f, m) = s.split_once(':')?;
        let start = match f.trim() {
            "P" | "p" => Fiducial::P,
            "Q" | "q" => Fiducial::Q,
            _ => return None,
        };
        let m = m.trim().parse().ok().filter(|&m| m >= 2)?;
        Some(Self { start, m })
    }

    fn render(self) -> String {
        let f = match self.start {
            Fiducial::P => "P",
            Fiducial::Q => "Q",
        };
        format!("{f}:{}", self.m)
    }
}

impl From<WindowConfig> for WindowSpec {
    fn from(w: WindowConfig) -> Self {
        Self {
            start: w.start_fiducial,
            m: w.m,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub filter_low_hz: f64,
    pub filter_high_hz: f64,
    pub filter_taps: usize,
    pub span_minutes: usize,
    pub reject_min_bpm: f64,
    pub reject_max_bpm: f64,
    pub ppeak_w1: usize,
    pub ppeak_w2: usize,
    pub rpeak: RPeakConfig,
    pub channels: ChannelSet,
    pub feature_length: usize,
    pub window: WindowChoice,
    pub windows: [WindowSpec; 4],
    pub q_offset: usize,
    pub train: TrainConfig,
    pub code_map: CodeMap,
    pub repeats: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            filter_low_hz: 0.5,
            filter_high_hz: 45.0,
            filter_taps: 401,
            span_minutes: 5,
            reject_min_bpm: 20.0,
            reject_max_bpm: 200.0,
            ppeak_w1: 20,
            ppeak_w2: 5,
            rpeak: RPeakConfig::default(),
            channels: ChannelSet::ALL,
            feature_length: 900,
            window: WindowChoice::T1,
            windows: [WindowConfig::T1, WindowConfig::T2, WindowConfig::T3, WindowConfig::T4].map(WindowSpec::from),
            q_offset: 5,
            train: TrainConfig::default(),
            code_map: CodeMap::default(),
            repeats: 5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse `{value}`")))
}

impl PipelineConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let r = &self.rpeak;
        let t = &self.train;
        vec![
            ("seed", self.seed.to_string()),
            ("filter.low_hz", self.filter_low_hz.to_string()),
            ("filter.high_hz", self.filter_high_hz.to_string()),
            ("filter.taps", self.filter_taps.to_string()),
            ("window.span_minutes", self.span_minutes.to_string()),
            ("reject.min_bpm", self.reject_min_bpm.to_string()),
            ("reject.max_bpm", self.reject_max_bpm.to_string()),
            ("ppeak.w1", self.ppeak_w1.to_string()),
            ("ppeak.w2", self.ppeak_w2.to_string()),
            ("rpeak.band_low_hz", r.band_low_hz.to_string()),
            ("rpeak.band_high_hz", r.band_high_hz.to_string()),
            ("rpeak.ma_ms", r.ma_ms.to_string()),
            ("rpeak.threshold_coef", r.threshold_coef.to_string()),
            ("rpeak.history", r.history.to_string()),
            ("rpeak.refractory_ms", r.refractory_ms.to_string()),
            ("rpeak.searchback_factor", r.searchback_factor.to_string()),
            ("rpeak.searchback_scale", r.searchback_scale.to_string()),
            ("rpeak.snap_ms", r.snap_ms.to_string()),
            ("features.channels", self.channels.to_config_string()),
            ("features.length", self.feature_length.to_string()),
            ("features.window", self.window.name().to_string()),
            ("features.t1", self.windows[0].render()),
            ("features.t2", self.windows[1].render()),
            ("features.t3", self.windows[2].render()),
            ("features.t4", self.windows[3].render()),
            ("features.q_offset", self.q_offset.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr0", t.schedule.lr0.to_string()),
            ("train.lr_hold_epochs", t.schedule.hold.to_string()),
            ("train.lr_decay", t.schedule.factor.to_string()),
            ("train.lr_decay_every", t.schedule.every.to_string()),
            ("train.adam_beta1", t.adam.beta1.to_string()),
            ("train.adam_beta2", t.adam.beta2.to_string()),
            ("train.adam_eps", t.adam.eps.to_string()),
            ("train.val_fraction", t.val_fraction.to_string()),
            ("train.dropout", t.dropout.to_string()),
            ("train.bn_eps", t.bn_eps.to_string()),
            ("train.bn_momentum", t.bn_momentum.to_string()),
            ("annotations.code_map", self.code_map.to_config_string()),
            ("ablate.repeats", self.repeats.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        let window_slot = |s: &str| {
            WindowSpec::parse(s).ok_or_else(|| CliError::Config(format!("{key}: expected `P:<m>` or `Q:<m>`, got `{s}`")))
        };
        match key {
            "seed" => self.seed = parse(key, v)?,
            "filter.low_hz" => self.filter_low_hz = parse(key, v)?,
            "filter.high_hz" => self.filter_high_hz = parse(key, v)?,
            "filter.taps" => self.filter_taps = parse(key, v)?,
            "window.span_minutes" => self.span_minutes = parse(key, v)?,
            "reject.min_bpm" => self.reject_min_bpm = parse(key, v)?,
            "reject.max_bpm" => self.reject_max_bpm = parse(key, v)?,
            "ppeak.w1" => self.ppeak_w1 = parse(key, v)?,
            "ppeak.w2" => self.ppeak_w2 = parse(key, v)?,
            "rpeak.band_low_hz" => self.rpeak.band_low_hz = parse(key, v)?,
            "rpeak.band_high_hz" => self.rpeak.band_high_hz = parse(key, v)?,
            "rpeak.ma_ms" => self.rpeak.ma_ms = parse(key, v)?,
            "rpeak.threshold_coef" => self.rpeak.threshold_coef = parse(key, v)?,
            "rpeak.history" => self.rpeak.history = parse(key, v)?,
            "rpeak.refractory_ms" => self.rpeak.refractory_ms = parse(key, v)?,
            "rpeak.searchback_factor" => self.rpeak.searchback_factor = parse(key, v)?,
            "rpeak.searchback_scale" => self.rpeak.searchback_scale = parse(key, v)?,
            "rpeak.snap_ms" => self.rpeak.snap_ms = parse(key, v)?,
            "features.channels" => {
                self.channels = ChannelSet::parse(v).map_err(|e| CliError::Config(format!("{key}: {e}")))?
            }
            "features.length" => self.feature_length = parse(key, v)?,
            "features.window" => {
                self.window = v
                    .parse()
                    .map_err(|_| CliError::Config(format!("{key}: expected T1, T2, T3 or T4, got `{v}`")))?
            }
            "features.t1" => self.windows[0] = window_slot(v)?,
            "features.t2" => self.windows[1] = window_slot(v)?,
            "features.t3" => self.windows[2] = window_slot(v)?,
            "features.t4" => self.windows[3] = window_slot(v)?,
            "features.q_offset" => self.q_offset = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr0" => self.train.schedule.lr0 = parse(key, v)?,
            "train.lr_hold_epochs" => self.train.schedule.hold = parse(key, v)?,
            "train.lr_decay" => self.train.schedule.factor = parse(key, v)?,
            "train.lr_decay_every" => self.train.schedule.every = parse(key, v)?,
            "train.adam_beta1" => self.train.adam.beta1 = parse(key, v)?,
            "train.adam_beta2" => self.train.adam.beta2 = parse(key, v)?,
            "train.adam_eps" => self.train.adam.eps = parse(key, v)?,
            "train.val_fraction" => self.train.val_fraction = parse(key, v)?,
            "train.dropout" => self.train.dropout = parse(key, v)?,
            "train.bn_eps" => self.train.bn_eps = parse(key, v)?,
            "train.bn_momentum" => self.train.bn_momentum = parse(key, v)?,
            "annotations.code_map" => {
                self.code_map = CodeMap::parse(v).map_err(|e| CliError::Config(format!("{key}: {e}")))?
            }
            "ablate.repeats" => self.repeats = parse(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            self.set(key, value)
                .map_err(|e| CliError::Config(format!("line {}: {}", n + 1, e.message())))?;
        }
        Ok(())
    }

    pub fn apply_override(&mut self, kv: &str) -> Result<(), CliError> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{kv}` is not `key=value`")))?;
        self.set(key.trim(), value)
    }

    /// Defaults, then `path`, then `overrides`, then `seed`; validated.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            cfg.apply_text(&text)?;
        }
        for kv in overrides {
            cfg.apply_override(kv)?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.span_minutes.is_multiple_of(2) {
            return bad(format!("window.span_minutes must be odd, got {}", self.span_minutes));
        }
        if self.filter_taps.is_multiple_of(2) || self.filter_taps < 31 {
            return bad(format!("filter.taps must be odd and at least 31, got {}", self.filter_taps));
        }
        if !(self.filter_low_hz > 0.0 && self.filter_low_hz < self.filter_high_hz) {
            return bad("filter.low_hz must be positive and below filter.high_hz".into());
        }
        if !(self.reject_min_bpm <= self.reject_max_bpm) {
            return bad("reject.min_bpm must not exceed reject.max_bpm".into());
        }
        if self.ppeak_w1 <= self.ppeak_w2 {
            return bad("ppeak.w1 must exceed ppeak.w2".into());
        }
        if self.feature_length < 2 {
            return bad("features.length must be at least 2".into());
        }
        if self.repeats < 1 {
            return bad("ablate.repeats must be at least 1".into());
        }
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn window_config(&self, choice: WindowChoice) -> WindowConfig {
        let s = self.windows[choice.index()];
        WindowConfig {
            start_fiducial: s.start,
            m: s.m,
            q_offset: self.q_offset,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            adam: Adam { t: 0, ..self.train.adam },
            ..self.train
        }
    }

    /// The effective configuration as `key = value` lines.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text("seed = 9\nfeatures.channels = mean,min\nfeatures.t3 = P:30\ntrain.lr0 = 0.01")
            .unwrap();
        let mut back = PipelineConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn every_key_is_settable() {
        let cfg = PipelineConfig::default();
        for (k, v) in cfg.entries() {
            let mut c = PipelineConfig::default();
            c.set(k, &v).unwrap_or_else(|e| panic!("{k}: {e}"));
            assert_eq!(c, cfg, "{k}");
        }
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        let mut cfg = PipelineConfig::default();
        assert!(matches!(cfg.apply_text("filter.lowhz = 1"), Err(CliError::Config(_))));
        assert!(cfg.apply_text("seed = 1\nseed = 2").is_err());
        assert!(cfg.apply_text("no equals sign").is_err());
        assert!(cfg.set("features.window", "T9").is_err());
        assert!(cfg.set("features.t1", "R:10").is_err());
        assert!(cfg.set("train.epochs", "many").is_err());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text("# header\n\n  train.epochs = 3  # short run\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
    }

    #[test]
    fn validation() {
        let mut cfg = PipelineConfig::default();
        cfg.span_minutes = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.train.val_fraction = 0.0;
        assert!(cfg.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }

    #[test]
    fn default_windows_match_library_presets() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.window_config(WindowChoice::T1), WindowConfig::T1);
        assert_eq!(cfg.window_config(WindowChoice::T4), WindowConfig::T4);
    }
}
