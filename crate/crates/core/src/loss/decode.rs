use super::ctc::collapse;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-step argmax over `[B, F, A]` scores, truncated to each length.
/// Ties go to the lowest index.
pub fn argmax_paths(scores: &Tensor, lengths: &[usize]) -> Result<Vec<Vec<usize>>> {
    let &[batch, frames, alphabet] = scores.shape() else {
        return Err(Error::shape("greedy_decode", format!("expected [B,F,A], got {:?}", scores.shape())));
    };
    if lengths.len() != batch || lengths.iter().any(|&l| l > frames) {
        return Err(Error::shape("greedy_decode", "lengths do not fit the batch"));
    }
    Ok((0..batch)
        .map(|b| {
            (0..lengths[b])
                .map(|t| {
                    let row = &scores.data()[(b * frames + t) * alphabet..(b * frames + t + 1) * alphabet];
                    let mut best = 0;
                    for (k, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = k;
                        }
                    }
                    best
                })
                .collect()
        })
        .collect())
}

/// Greedy CTC decoding: argmax per step, collapse repeats, drop blanks.
///
/// Accepts probabilities or logits alike since argmax is invariant to the
/// softmax and to positive scaling.
pub fn greedy_decode(scores: &Tensor, lengths: &[usize]) -> Result<Vec<Vec<usize>>> {
    Ok(argmax_paths(scores, lengths)?.iter().map(|p| collapse(p)).collect())
}
