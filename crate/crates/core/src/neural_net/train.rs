use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{softmax, softmax_cross_entropy, Mode};
use super::model::{ArchConfig, Model};
use super::optim::{Adam, LrSchedule};
use super::{NnError, Tensor3};
use crate::exec::Execution;
use crate::mp_features::FeatureSegment;
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: Adam,
    pub val_fraction: f64,
    pub dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            schedule: LrSchedule::default(),
            adam: Adam::default(),
            val_fraction: 0.30,
            dropout: 0.5,
            bn_eps: 1e-3,
            bn_momentum: 0.99,
            seed: 0,
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::BadConfig(m.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if !(self.schedule.lr0 > 0.0 && self.schedule.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::BadRate(self.dropout));
        }
        Ok(())
    }

    pub fn arch(&self, input_len: usize, input_channels: usize) -> ArchConfig {
        ArchConfig {
            input_len,
            input_channels,
            dropout: self.dropout,
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub rows: Vec<EpochRecord>,
}

impl History {
    /// Whitespace-aligned text table, one row per epoch.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:>5} {:>10} {:>10} {:>9} {:>10} {:>9}\n",
            "epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>5} {:>10.3e} {:>10.6} {:>9.4} {:>10.6} {:>9.4}",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_model: Model,
    pub best_model: Model,
    pub best_epoch: u32,
    pub history: History,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Stratified seeded split. The validation total is `round(n * fraction)`,
/// shared between classes by largest remainder, with at least one sample of
/// each class on both sides whenever the class has two or more.
pub fn stratified_split(labels: &[Label], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = [Label::N, Label::A];
    let mut groups: Vec<Vec<usize>> = classes
        .iter()
        .map(|c| (0..labels.len()).filter(|&i| labels[i] == *c).collect())
        .collect();

    let total = (labels.len() as f64 * fraction).round() as usize;
    let exact: Vec<f64> = groups.iter().map(|g| g.len() as f64 * fraction).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(quota.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if quota[c] < groups[c].len() {
            quota[c] += 1;
            left -= 1;
        }
    }
    for (q, g) in quota.iter_mut().zip(&groups) {
        if g.len() >= 2 {
            *q = (*q).clamp(1, g.len() - 1);
        }
    }

    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (g, &q) in groups.iter_mut().zip(&quota) {
        g.shuffle(&mut rng);
        val.extend_from_slice(&g[..q]);
        train.extend_from_slice(&g[q..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Packs segments into a `(batch, length, channels)` tensor.
pub fn batch_tensor(segments: &[&FeatureSegment], len: usize, channels: usize) -> Result<Tensor3, NnError> {
    let mut t = Tensor3::zeros(segments.len(), len, channels);
    for (b, seg) in segments.iter().enumerate() {
        if seg.length != len || seg.channels.len() != channels || seg.values.len() != len * channels {
            return Err(NnError::ShapeMismatch(format!(
                "segment {}:{} is {}x{}, model expects {}x{}",
                seg.record_id,
                seg.center_minute,
                seg.length,
                seg.channels.len(),
                len,
                channels
            )));
        }
        for c in 0..channels {
            for i in 0..len {
                let k = t.idx(b, i, c);
                t.data[k] = seg.values[c * len + i] as f64;
            }
        }
    }
    Ok(t)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// One optimiser step on a minibatch. Returns the training-mode loss and the
/// number of correct predictions in that pass.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    x: &Tensor3,
    labels: &[usize],
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize), NnError> {
    let logits = model.forward(x, &mut Mode::Train(rng))?;
    let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
    if !loss.is_finite() {
        return Err(NnError::NonFinite("training loss".into()));
    }
    let correct = (0..logits.batch)
        .filter(|&b| argmax(logits.sample(b)) == labels[b])
        .count();
    model.backward(&grad);
    adam.step(&mut model.params_mut(), lr);
    model.round_to_storage();
    Ok((loss, correct))
}

/// Mean loss and accuracy in inference mode.
pub fn evaluate_loss(model: &Model, segments: &[&FeatureSegment], batch_size: usize) -> Result<(f64, f64), NnError> {
    if segments.is_empty() {
        return Ok((0.0, 0.0));
    }
    let (mut loss, mut correct) = (0.0, 0);
    for chunk in segments.chunks(batch_size.max(1)) {
        let x = batch_tensor(chunk, model.input_len, model.input_channels)?;
        let labels: Vec<usize> = chunk.iter().map(|s| s.label.index()).collect();
        let logits = model.infer(&x)?;
        let (l, _) = softmax_cross_entropy(&logits, &labels)?;
        loss += l * chunk.len() as f64;
        correct += (0..logits.batch)
            .filter(|&b| argmax(logits.sample(b)) == labels[b])
            .count();
    }
    let n = segments.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains a fresh model on `segments` with a stratified train/validation split.
pub fn train(segments: &[FeatureSegment], cfg: &TrainConfig) -> Result<TrainOutcome, NnError> {
    cfg.validate()?;
    for class in [Label::N, Label::A] {
        if segments.iter().filter(|s| s.label == class).count() < 2 {
            return Err(NnError::EmptyClass(class));
        }
    }
    let (len, channels) = (segments[0].length, segments[0].channels.len());
    let labels: Vec<Label> = segments.iter().map(|s| s.label).collect();
    let (train_idx, val_idx) = stratified_split(&labels, cfg.val_fraction, cfg.seed);

    let mut model = Model::lenet5(&cfg.arch(len, channels), cfg.seed)?;
    model.exec = cfg.exec;
    model.round_to_storage();
    let mut adam = Adam { t: 0, ..cfg.adam };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed0f_7a1e);
    let val: Vec<&FeatureSegment> = val_idx.iter().map(|&i| &segments[i]).collect();

    let mut order = train_idx.clone();
    let mut history = History::default();
    let mut best: Option<(f64, u32, Model)> = None;
    for epoch in 1..=cfg.epochs {
        let lr = cfg.schedule.lr(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&FeatureSegment> = chunk.iter().map(|&i| &segments[i]).collect();
            let x = batch_tensor(&batch, len, channels)?;
            let y: Vec<usize> = batch.iter().map(|s| s.label.index()).collect();
            let (loss, ok) = train_step(&mut model, &mut adam, &x, &y, lr, &mut rng)?;
            loss_sum += loss * chunk.len() as f64;
            correct += ok;
            seen += chunk.len();
        }
        let (val_loss, val_acc) = evaluate_loss(&model, &val, cfg.batch_size)?;
        let seen_f = seen.max(1) as f64;
        history.rows.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / seen_f,
            train_acc: correct as f64 / seen_f,
            val_loss,
            val_acc,
        });
        if best.as_ref().is_none_or(|b| val_acc > b.0) {
            best = Some((val_acc, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        best_epoch,
        history,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

/// Class probabilities per segment, in inference mode.
pub fn predict(model: &Model, segments: &[FeatureSegment], batch_size: usize) -> Result<Vec<Vec<f64>>, NnError> {
    let refs: Vec<&FeatureSegment> = segments.iter().collect();
    let mut out = Vec::with_capacity(segments.len());
    for chunk in refs.chunks(batch_size.max(1)) {
        let x = batch_tensor(chunk, model.input_len, model.input_channels)?;
        let logits = model.infer(&x)?;
        out.extend((0..logits.batch).map(|b| softmax(logits.sample(b))));
    }
    Ok(out)
}
