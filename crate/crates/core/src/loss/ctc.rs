//! Connectionist temporal classification in log space.

use crate::error::{Error, Result};
use crate::tensor::ops::log_softmax_rows;
use crate::tensor::Tensor;

/// Alphabet index reserved for the CTC blank; glosses use `1..=N`.
pub const BLANK: usize = 0;

/// A label sequence without blanks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtcTarget {
    labels: Vec<usize>,
}

impl CtcTarget {
    /// Validates that every id lies in `1..alphabet`.
    pub fn new(labels: Vec<usize>, alphabet: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l == BLANK || l >= alphabet) {
            return Err(Error::config(format!(
                "target id {bad} outside gloss range 1..={}",
                alphabet - 1
            )));
        }
        Ok(CtcTarget { labels })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Labels interleaved with blanks: `[blank, y1, blank, y2, ..., blank]`.
    pub fn extended(&self) -> Vec<usize> {
        let mut ext = Vec::with_capacity(2 * self.labels.len() + 1);
        ext.push(BLANK);
        for &l in &self.labels {
            ext.push(l);
            ext.push(BLANK);
        }
        ext
    }

    /// Shortest input length admitting an alignment: one step per label plus
    /// a separating blank between equal neighbours.
    pub fn min_steps(&self) -> usize {
        let repeats = self.labels.windows(2).filter(|w| w[0] == w[1]).count();
        self.labels.len() + repeats
    }
}

const NEG_INF: f64 = f64::NEG_INFINITY;

fn lse2(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Forward variables `alpha[t][s]` (including the emission at `t`) over an
/// extended label sequence, given per-step log-probabilities `[steps, A]`.
fn forward_vars(log_probs: &[f64], alphabet: usize, steps: usize, ext: &[usize]) -> Vec<f64> {
    let s_len = ext.len();
    let mut alpha = vec![NEG_INF; steps * s_len];
    alpha[0] = log_probs[ext[0]];
    if s_len > 1 {
        alpha[1] = log_probs[ext[1]];
    }
    for t in 1..steps {
        let lp = &log_probs[t * alphabet..(t + 1) * alphabet];
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = lse2(acc, prev[s - 1]);
            }
            if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                acc = lse2(acc, prev[s - 2]);
            }
            alpha[t * s_len + s] = if acc == NEG_INF { NEG_INF } else { acc + lp[ext[s]] };
        }
    }
    alpha
}

/// Backward variables `beta[t][s]`: log-probability of completing the label
/// sequence from state `s` at step `t`, excluding the emission at `t`.
fn backward_vars(log_probs: &[f64], alphabet: usize, steps: usize, ext: &[usize]) -> Vec<f64> {
    let s_len = ext.len();
    let mut beta = vec![NEG_INF; steps * s_len];
    beta[(steps - 1) * s_len + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[(steps - 1) * s_len + s_len - 2] = 0.0;
    }
    for t in (0..steps - 1).rev() {
        let lp = &log_probs[(t + 1) * alphabet..(t + 2) * alphabet];
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut acc = next[s] + lp[ext[s]];
            if s + 1 < s_len {
                acc = lse2(acc, next[s + 1] + lp[ext[s + 1]]);
            }
            if s + 2 < s_len && ext[s + 2] != BLANK && ext[s + 2] != ext[s] {
                acc = lse2(acc, next[s + 2] + lp[ext[s + 2]]);
            }
            beta[t * s_len + s] = acc;
        }
    }
    beta
}

fn final_log_prob(alpha: &[f64], steps: usize, s_len: usize) -> f64 {
    let last = &alpha[(steps - 1) * s_len..steps * s_len];
    if s_len > 1 {
        lse2(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    }
}

/// `log P(y | x)` for one sample from raw per-step log-probabilities.
pub fn log_likelihood(log_probs: &[f64], alphabet: usize, target: &CtcTarget) -> f64 {
    let steps = log_probs.len() / alphabet;
    let ext = target.extended();
    let alpha = forward_vars(log_probs, alphabet, steps, &ext);
    final_log_prob(&alpha, steps, ext.len())
}

/// Mean over the batch of `-log P(y_b | x_b)`, from unnormalized logits
/// `[B, F, A]`. Only the first `lengths[b]` steps of sample `b` are used.
///
/// `names` labels samples in the infeasibility error; indices are used when
/// it is `None`.
pub fn ctc_loss(logits: &Tensor, targets: &[CtcTarget], lengths: &[usize], names: Option<&[String]>) -> Result<Tensor> {
    let &[batch, frames, alphabet] = logits.shape() else {
        return Err(Error::shape("ctc_loss", format!("expected [B,F,A], got {:?}", logits.shape())));
    };
    if targets.len() != batch || lengths.len() != batch {
        return Err(Error::shape(
            "ctc_loss",
            format!("{} targets and {} lengths for batch {batch}", targets.len(), lengths.len()),
        ));
    }
    let name = |b: usize| names.and_then(|n| n.get(b).cloned()).unwrap_or_else(|| format!("#{b}"));
    for (b, (tgt, &len)) in targets.iter().zip(lengths).enumerate() {
        if len > frames || len == 0 {
            return Err(Error::shape("ctc_loss", format!("length {len} with {frames} steps")));
        }
        if tgt.labels().iter().any(|&l| l >= alphabet) {
            return Err(Error::shape("ctc_loss", format!("sample {} has id outside alphabet {alphabet}", name(b))));
        }
        if tgt.min_steps() > len {
            return Err(Error::InfeasibleTarget {
                sample: name(b),
                detail: format!(
                    "{} output steps cannot align {} labels (needs at least {})",
                    len,
                    tgt.labels().len(),
                    tgt.min_steps()
                ),
            });
        }
    }

    let log_probs = log_softmax_rows(logits.data(), alphabet);
    let mut total = 0.0;
    let mut grad = vec![0.0; logits.numel()];
    let inv_b = 1.0 / batch as f64;
    for (b, (tgt, &len)) in targets.iter().zip(lengths).enumerate() {
        let lp = &log_probs[b * frames * alphabet..(b * frames + len) * alphabet];
        let ext = tgt.extended();
        let s_len = ext.len();
        let alpha = forward_vars(lp, alphabet, len, &ext);
        let beta = backward_vars(lp, alphabet, len, &ext);
        let log_p = final_log_prob(&alpha, len, s_len);
        if !log_p.is_finite() {
            return Err(Error::NonFinite(format!("CTC likelihood of sample {}", name(b))));
        }
        total -= log_p;
        let g = &mut grad[b * frames * alphabet..(b * frames + len) * alphabet];
        for t in 0..len {
            let row = &mut g[t * alphabet..(t + 1) * alphabet];
            for (k, r) in row.iter_mut().enumerate() {
                *r = lp[t * alphabet + k].exp();
            }
            for s in 0..s_len {
                let occ = alpha[t * s_len + s] + beta[t * s_len + s] - log_p;
                if occ > NEG_INF {
                    row[ext[s]] -= occ.exp();
                }
            }
            row.iter_mut().for_each(|v| *v *= inv_b);
        }
    }
    Ok(Tensor::from_op(
        "ctc_loss",
        vec![1],
        vec![total * inv_b],
        vec![logits.clone()],
        Box::new(move |g, _| vec![Some(grad.iter().map(|v| v * g[0]).collect())]),
    ))
}

/// Collapses consecutive repeats, then removes blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}
