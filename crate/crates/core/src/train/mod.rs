//! Optimization, the epoch loop with regularizer gating, evaluation and
//! checkpoints.

mod adam;
mod checkpoint;
mod word;

pub use adam::{clip_grad_norm, grad_norm, Adam};
pub use checkpoint::Checkpoint;
pub use word::{cross_entropy, evaluate_words, train_word_loop, word_labels};

use std::time::Instant;

use crate::config::KeyValues;
use crate::data::{epoch_batches, Dataset, DatasetKind, PreprocessConfig};
use crate::error::{Error, Result};
use crate::loss::{argmax_paths, combined_loss, ctc_loss, greedy_decode, kl_regularizer, regularizer_active, CtcTarget, KlFlow, LossReport};
use crate::metrics::{corpus_counts, EditCounts};
use crate::model::{meta_frame_count, ModelConfig, SfNet};
use crate::nn::Module;
use crate::tensor::no_grad;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Epochs are numbered from 1.
    pub epochs: usize,
    /// The regularizer joins at epochs strictly after this one.
    pub e_start: usize,
    pub regularizer: bool,
    pub kl_weight: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    /// Save a checkpoint every this many epochs; 0 keeps only the last.
    pub checkpoint_every: usize,
    /// Evaluate the held-out split every this many epochs; 0 only at the end.
    pub eval_every: usize,
    /// Stop once the eval-mode training WER reaches this value; negative disables.
    pub early_stop_wer: f64,
    pub dataset_kind: DatasetKind,
    pub crop_fraction: f64,
    pub decimation: usize,
    pub fixed_frames: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-5,
            epochs: 60,
            e_start: 25,
            regularizer: true,
            kl_weight: 1.0,
            batch_size: 2,
            seed: 1,
            shuffle: true,
            clip_norm: 5.0,
            checkpoint_every: 0,
            eval_every: 1,
            early_stop_wer: -1.0,
            dataset_kind: DatasetKind::Csl,
            crop_fraction: 1.0,
            decimation: 1,
            fixed_frames: 0,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "lr",
    "weight_decay",
    "epochs",
    "e_start",
    "regularizer",
    "kl_weight",
    "batch_size",
    "seed",
    "shuffle",
    "clip_norm",
    "checkpoint_every",
    "eval_every",
    "early_stop_wer",
    "dataset_kind",
    "crop_fraction",
    "decimation",
    "fixed_frames",
];

impl TrainConfig {
    /// Settings for the desk-scale synthetic corpus.
    pub fn desk() -> Self {
        TrainConfig { lr: 1e-3, epochs: 40, e_start: 15, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.decimation == 0 {
            return Err(Error::config("epochs, batch_size and decimation must be at least 1"));
        }
        if self.e_start > self.epochs {
            return Err(Error::config(format!("e_start {} exceeds epochs {}", self.e_start, self.epochs)));
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0 && self.clip_norm >= 0.0 && self.kl_weight >= 0.0) {
            return Err(Error::config("lr, weight_decay, clip_norm and kl_weight must be non-negative"));
        }
        Ok(())
    }

    pub fn preprocess(&self, model: &ModelConfig) -> PreprocessConfig {
        PreprocessConfig {
            kind: self.dataset_kind,
            size: model.input_size,
            crop_fraction: self.crop_fraction,
            decimation: self.decimation,
            fixed_frames: self.fixed_frames,
        }
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("lr", self.lr);
        kv.set("weight_decay", self.weight_decay);
        kv.set("epochs", self.epochs);
        kv.set("e_start", self.e_start);
        kv.set("regularizer", self.regularizer);
        kv.set("kl_weight", self.kl_weight);
        kv.set("batch_size", self.batch_size);
        kv.set("seed", self.seed);
        kv.set("shuffle", self.shuffle);
        kv.set("clip_norm", self.clip_norm);
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("eval_every", self.eval_every);
        kv.set("early_stop_wer", self.early_stop_wer);
        kv.set("dataset_kind", self.dataset_kind);
        kv.set("crop_fraction", self.crop_fraction);
        kv.set("decimation", self.decimation);
        kv.set("fixed_frames", self.fixed_frames);
        kv
    }

    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.read("lr", &mut self.lr)?;
        kv.read("weight_decay", &mut self.weight_decay)?;
        kv.read("epochs", &mut self.epochs)?;
        kv.read("e_start", &mut self.e_start)?;
        kv.read("regularizer", &mut self.regularizer)?;
        kv.read("kl_weight", &mut self.kl_weight)?;
        kv.read("batch_size", &mut self.batch_size)?;
        kv.read("seed", &mut self.seed)?;
        kv.read("shuffle", &mut self.shuffle)?;
        kv.read("clip_norm", &mut self.clip_norm)?;
        kv.read("checkpoint_every", &mut self.checkpoint_every)?;
        kv.read("eval_every", &mut self.eval_every)?;
        kv.read("early_stop_wer", &mut self.early_stop_wer)?;
        kv.read("dataset_kind", &mut self.dataset_kind)?;
        kv.read("crop_fraction", &mut self.crop_fraction)?;
        kv.read("decimation", &mut self.decimation)?;
        kv.read("fixed_frames", &mut self.fixed_frames)?;
        Ok(())
    }
}

/// Single halving after the midpoint: `lr` for `E <= epochs / 2`, else `lr / 2`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch <= cfg.epochs / 2 {
        cfg.lr
    } else {
        cfg.lr * 0.5
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub ctc: f64,
    /// Mean KL over batches where the regularizer was active.
    pub kl: Option<f64>,
    pub total: f64,
    pub regularizer_active: bool,
    /// WER of the training-mode predictions made while fitting this epoch.
    pub running_wer: f64,
    pub eval_wer: Option<f64>,
    pub clipped_batches: usize,
    pub seconds: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        format!(
            "epoch {}\tlr {:e}\tctc {:.6}\tkl {}\ttotal {:.6}\treg {}\ttrain_wer {:.4}\teval_wer {}\tclipped {}\tsecs {:.1}",
            self.epoch,
            self.lr,
            self.ctc,
            opt(self.kl),
            self.total,
            u8::from(self.regularizer_active),
            self.running_wer,
            opt(self.eval_wer),
            self.clipped_batches,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLog>,
    pub stopped_early: bool,
    /// Eval-mode training WER checked at the stopping epoch, if any.
    pub final_train_wer: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub ids: Vec<String>,
    pub references: Vec<Vec<usize>>,
    pub hypotheses: Vec<Vec<usize>>,
    /// Per-step argmax over the CTC alphabet, before collapsing.
    pub paths: Vec<Vec<usize>>,
    pub counts: EditCounts,
}

impl EvalResult {
    pub fn wer(&self) -> f64 {
        self.counts.wer()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[usize], &[usize])> {
        self.ids
            .iter()
            .zip(&self.references)
            .zip(&self.hypotheses)
            .map(|((i, r), h)| (i.as_str(), r.as_slice(), h.as_slice()))
    }
}

fn min_frames(model: &ModelConfig) -> usize {
    if model.no_framing {
        1
    } else {
        model.window
    }
}

/// Every sample must frame into enough steps for its CTC target; returns all
/// offenders at once.
pub fn check_feasible(model: &ModelConfig, data: &Dataset) -> Result<()> {
    let mut bad = Vec::new();
    for (i, s) in data.samples().iter().enumerate() {
        let t = data.frames_of(i);
        let steps = if model.no_framing { Some(t) } else { meta_frame_count(t, model.window, model.stride) };
        let target = CtcTarget::new(s.glosses.clone(), model.alphabet_size())
            .map_err(|e| Error::Sample { sample: s.id.clone(), detail: e.to_string() })?;
        match steps {
            None => bad.push(format!("{} ({t} frames < window {})", s.id, model.window)),
            Some(f) if f < target.min_steps() => {
                bad.push(format!("{} ({f} steps, needs {})", s.id, target.min_steps()))
            }
            _ => {}
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::InfeasibleTarget { sample: bad.join(", "), detail: format!("{} samples cannot be aligned", bad.len()) })
    }
}

/// Greedy-decoded predictions for a whole dataset in eval mode.
pub fn evaluate(model: &mut SfNet, data: &Dataset, batch_size: usize) -> Result<EvalResult> {
    let _guard = no_grad();
    let mut res = EvalResult {
        ids: Vec::new(),
        references: Vec::new(),
        hypotheses: Vec::new(),
        paths: Vec::new(),
        counts: EditCounts::default(),
    };
    let min = min_frames(model.config());
    for idx in epoch_batches(data.len(), batch_size, false, 0, 0) {
        let batch = data.batch(&idx, min, false, 0, 0)?;
        let out = model.forward_full(&batch, false)?;
        res.paths.extend(argmax_paths(&out.logits_sl, out.lengths())?);
        res.hypotheses.extend(greedy_decode(&out.logits_sl, out.lengths())?);
        res.references.extend(batch.targets);
        res.ids.extend(batch.ids);
    }
    res.counts = corpus_counts(res.references.iter().map(Vec::as_slice).zip(res.hypotheses.iter().map(Vec::as_slice)))?;
    Ok(res)
}

/// Result of one optimization step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub loss: LossReport,
    pub grad_norm: f64,
    pub clipped: bool,
    pub hypotheses: Vec<Vec<usize>>,
}

/// Forward, loss, backward, clip and Adam update on one batch.
pub fn train_step(
    model: &mut SfNet,
    adam: &mut Adam,
    batch: &crate::data::VideoBatch,
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
) -> Result<StepReport> {
    let alphabet = model.config().alphabet_size();
    let out = model.forward_full(batch, true)?;
    let targets = batch
        .targets
        .iter()
        .map(|t| CtcTarget::new(t.clone(), alphabet))
        .collect::<Result<Vec<_>>>()?;
    let ctc = ctc_loss(&out.logits_sl, &targets, out.lengths(), Some(&batch.ids)).map_err(|e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch}, batch [{}]", batch.ids.join(","))),
        other => other,
    })?;
    let active = cfg.regularizer && regularizer_active(epoch, cfg.e_start);
    let kl = match (&out.logits_gl, active) {
        (Some(gl), true) => Some(kl_regularizer(&gl.softmax(), &out.logits_sl.softmax(), out.lengths(), KlFlow::GlossOnly)?),
        _ => None,
    };
    let (loss, report) = combined_loss(&ctc, kl.as_ref(), epoch, cfg.e_start, cfg.kl_weight)?;
    let diag = |what: &str| {
        format!(
            "{what} at epoch {epoch}, batch [{}]: ctc {}, kl {:?}, total {}",
            batch.ids.join(","),
            report.ctc,
            report.kl,
            report.total
        )
    };
    if !report.total.is_finite() {
        return Err(Error::NonFinite(diag("non-finite loss")));
    }
    loss.backward().map_err(|e| Error::NonFinite(format!("{}; {e}", diag("non-finite gradient"))))?;
    let mut params = model.params_mut();
    let norm = clip_grad_norm(&mut params, cfg.clip_norm);
    adam.step(params, lr);
    Ok(StepReport {
        loss: report,
        grad_norm: norm,
        clipped: cfg.clip_norm > 0.0 && norm > cfg.clip_norm,
        hypotheses: greedy_decode(&out.logits_sl.detach(), out.lengths())?,
    })
}

/// Runs the epoch loop. `on_epoch` sees each epoch's log together with the
/// model and optimizer after that epoch (for checkpointing or printing).
pub fn train_loop(
    model: &mut SfNet,
    adam: &mut Adam,
    train: &Dataset,
    held_out: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &SfNet, &Adam) -> Result<()>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    check_feasible(model.config(), train)?;
    if let Some(h) = held_out {
        check_feasible(model.config(), h)?;
    }
    let min = min_frames(model.config());
    let mut history = TrainHistory { epochs: Vec::new(), stopped_early: false, final_train_wer: None };
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let lr = lr_at_epoch(epoch, cfg);
        let (mut ctc, mut kl, mut kl_batches, mut total, mut clipped, mut nb) = (0.0, 0.0, 0usize, 0.0, 0usize, 0usize);
        let mut pairs: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        let mut any_active = false;
        for idx in epoch_batches(train.len(), cfg.batch_size, cfg.shuffle, cfg.seed, epoch) {
            let batch = train.batch(&idx, min, true, cfg.seed, epoch)?;
            let step = train_step(model, adam, &batch, cfg, epoch, lr)?;
            ctc += step.loss.ctc;
            total += step.loss.total;
            if let (Some(k), true) = (step.loss.kl, step.loss.regularizer_active) {
                kl += k;
                kl_batches += 1;
            }
            any_active |= step.loss.regularizer_active;
            clipped += usize::from(step.clipped);
            nb += 1;
            pairs.extend(batch.targets.into_iter().zip(step.hypotheses));
        }
        let running = corpus_counts(pairs.iter().map(|(r, h)| (r.as_slice(), h.as_slice())))?.wer();
        let mut stop = false;
        if cfg.early_stop_wer >= 0.0 && running <= cfg.early_stop_wer {
            let w = evaluate(model, train, cfg.batch_size)?.wer();
            if w <= cfg.early_stop_wer {
                stop = true;
                history.final_train_wer = Some(w);
            }
        }
        let last = epoch == cfg.epochs || stop;
        let eval_now = last || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
        let eval_wer = match held_out {
            Some(h) if eval_now => Some(evaluate(model, h, cfg.batch_size)?.wer()),
            _ => None,
        };
        let log = EpochLog {
            epoch,
            lr,
            ctc: ctc / nb as f64,
            kl: (kl_batches > 0).then(|| kl / kl_batches as f64),
            total: total / nb as f64,
            regularizer_active: any_active,
            running_wer: running,
            eval_wer,
            clipped_batches: clipped,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log, model, adam)?;
        history.epochs.push(log);
        if stop {
            history.stopped_early = true;
            break;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests;
