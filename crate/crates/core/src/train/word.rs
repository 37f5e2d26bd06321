//! Isolated-word training: one gloss per clip, cross-entropy on the single
//! meta frame's word classifier.

use std::time::Instant;

use super::{clip_grad_norm, lr_at_epoch, Adam, EpochLog, TrainConfig, TrainHistory};
use crate::data::{epoch_batches, Dataset};
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{no_grad, Tensor};

/// Class index of each sample: its single gloss id minus one.
pub fn word_labels(data: &Dataset, classes: usize) -> Result<Vec<usize>> {
    data.samples()
        .iter()
        .map(|s| match s.glosses.as_slice() {
            [g] if *g >= 1 && *g <= classes => Ok(g - 1),
            other => Err(Error::Sample {
                sample: s.id.clone(),
                detail: format!("word-level sample needs one gloss id in 1..={classes}, has {other:?}"),
            }),
        })
        .collect()
}

/// Mean negative log-likelihood of `labels` under `[B, C]` logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let &[b, c] = logits.shape() else {
        return Err(Error::shape("cross_entropy", "expected [B, C] logits"));
    };
    if labels.len() != b || labels.iter().any(|&l| l >= c) {
        return Err(Error::shape("cross_entropy", "one in-range label per row required"));
    }
    let picked = logits.log_softmax().gather(&[b], labels.iter().enumerate().map(|(i, &l)| i * c + l).collect())?;
    Ok(picked.mean().neg())
}

/// Classification error and predictions over a dataset in eval mode.
pub fn evaluate_words(model: &mut crate::model::SfNet, data: &Dataset, batch_size: usize) -> Result<(f64, Vec<usize>)> {
    let _g = no_grad();
    let labels = word_labels(data, model.config().word_classes)?;
    let window = model.config().window;
    let mut preds = Vec::with_capacity(data.len());
    for idx in epoch_batches(data.len(), batch_size, false, 0, 0) {
        let batch = data.batch(&idx, window, false, 0, 0)?;
        let logits = model.forward_word_level(&batch.frames, &batch.lengths, Some(&batch.ids), false)?;
        let c = logits.shape()[1];
        for row in logits.data().chunks(c) {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            preds.push(best);
        }
    }
    let wrong = preds.iter().zip(&labels).filter(|(p, l)| p != l).count();
    Ok((wrong as f64 / labels.len().max(1) as f64, preds))
}

/// Word-level epoch loop. Logged `ctc` and `total` hold the cross-entropy;
/// `running_wer` and `eval_wer` hold classification errors.
pub fn train_word_loop(
    model: &mut crate::model::SfNet,
    adam: &mut Adam,
    train: &Dataset,
    held_out: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &crate::model::SfNet, &Adam) -> Result<()>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let classes = model.config().word_classes;
    let labels = word_labels(train, classes)?;
    if let Some(h) = held_out {
        word_labels(h, classes)?;
    }
    let window = model.config().window;
    let mut history = TrainHistory { epochs: Vec::new(), stopped_early: false, final_train_wer: None };
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let lr = lr_at_epoch(epoch, cfg);
        let (mut total, mut wrong, mut clipped, mut nb) = (0.0, 0usize, 0usize, 0usize);
        for idx in epoch_batches(train.len(), cfg.batch_size, cfg.shuffle, cfg.seed, epoch) {
            let batch = train.batch(&idx, window, true, cfg.seed, epoch)?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let logits = model.forward_word_level(&batch.frames, &batch.lengths, Some(&batch.ids), true)?;
            wrong += (crate::metrics::classification_error(&logits, &y)? * y.len() as f64).round() as usize;
            let loss = cross_entropy(&logits, &y)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "cross-entropy {value} at epoch {epoch}, batch [{}]",
                    batch.ids.join(",")
                )));
            }
            loss.backward()?;
            let mut params = model.params_mut();
            let norm = clip_grad_norm(&mut params, cfg.clip_norm);
            clipped += usize::from(cfg.clip_norm > 0.0 && norm > cfg.clip_norm);
            adam.step(params, lr);
            total += value;
            nb += 1;
        }
        let last = epoch == cfg.epochs;
        let eval_now = last || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
        let eval_wer = match held_out {
            Some(h) if eval_now => Some(evaluate_words(model, h, cfg.batch_size)?.0),
            _ => None,
        };
        let log = EpochLog {
            epoch,
            lr,
            ctc: total / nb as f64,
            kl: None,
            total: total / nb as f64,
            regularizer_active: false,
            running_wer: wrong as f64 / train.len() as f64,
            eval_wer,
            clipped_batches: clipped,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log, model, adam)?;
        history.epochs.push(log);
    }
    Ok(history)
}
