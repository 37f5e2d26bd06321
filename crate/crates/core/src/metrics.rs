//! Word error rate and word-level classification error.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Edit counts of a minimum-cost alignment of hypothesis to reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(S + D + I) / N`; larger than 1 when insertions dominate.
    pub fn wer(&self) -> f64 {
        self.errors() as f64 / self.reference_len as f64
    }

    fn add(&mut self, o: &EditCounts) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.reference_len += o.reference_len;
    }
}

pub type WerBreakdown = EditCounts;

/// Unit-cost Levenshtein alignment.
///
/// Among minimum-cost alignments the one with the most substitutions (the
/// fewest insertions plus deletions) is chosen, then deletions are preferred
/// over insertions along the backtrace. This makes the breakdown unique, so
/// swapping reference and hypothesis swaps deletions with insertions.
pub fn wer(reference: &[usize], hypothesis: &[usize]) -> Result<EditCounts> {
    if reference.is_empty() {
        return Err(Error::config("word error rate needs a non-empty reference"));
    }
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    // (edits, insertions + deletions), compared lexicographically
    let mut cost = vec![(0usize, 0usize); (n + 1) * w];
    for i in 0..=n {
        cost[i * w] = (i, i);
    }
    for j in 0..=m {
        cost[j] = (j, j);
    }
    let step = |c: (usize, usize), edit: usize, indel: usize| (c.0 + edit, c.1 + indel);
    for i in 1..=n {
        for j in 1..=m {
            let diag = step(cost[(i - 1) * w + j - 1], usize::from(reference[i - 1] != hypothesis[j - 1]), 0);
            let del = step(cost[(i - 1) * w + j], 1, 1);
            let ins = step(cost[i * w + j - 1], 1, 1);
            cost[i * w + j] = diag.min(del).min(ins);
        }
    }
    let mut counts = EditCounts {
        reference_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let sub = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if step(cost[(i - 1) * w + j - 1], sub, 0) == here {
                counts.substitutions += sub;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && step(cost[(i - 1) * w + j], 1, 1) == here {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    Ok(counts)
}

/// Pooled counts over a corpus of `(reference, hypothesis)` pairs.
pub fn corpus_counts<'a, I>(pairs: I) -> Result<EditCounts>
where
    I: IntoIterator<Item = (&'a [usize], &'a [usize])>,
{
    let mut total = EditCounts::default();
    let mut any = false;
    for (r, h) in pairs {
        total.add(&wer(r, h)?);
        any = true;
    }
    if !any {
        return Err(Error::config("corpus WER of an empty corpus"));
    }
    Ok(total)
}

/// Total edits over total reference words (not a mean of sentence WERs).
pub fn corpus_wer<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [usize], &'a [usize])>,
{
    Ok(corpus_counts(pairs)?.wer())
}

/// Fraction of rows of `[B, C]` logits whose argmax differs from the label.
pub fn classification_error(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let &[batch, classes] = logits.shape() else {
        return Err(Error::shape("classification_error", "expected [B, C] logits"));
    };
    if labels.len() != batch {
        return Err(Error::shape("classification_error", "one label per row required"));
    }
    let wrong = logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best != label
        })
        .count();
    Ok(wrong as f64 / batch as f64)
}

/// Line-oriented evaluation report: `id TAB wer TAB S,D,I` per sample, then
/// `pooled TAB wer TAB S,D,I TAB ref_words` for the corpus.
pub fn format_report<'a, I>(rows: I) -> Result<String>
where
    I: IntoIterator<Item = (&'a str, &'a [usize], &'a [usize])>,
{
    let mut out = String::new();
    let mut total = EditCounts::default();
    let mut any = false;
    for (id, r, h) in rows {
        let c = wer(r, h)?;
        writeln!(out, "{id}\t{:.6}\t{},{},{}", c.wer(), c.substitutions, c.deletions, c.insertions).unwrap();
        total.add(&c);
        any = true;
    }
    if !any {
        return Err(Error::config("evaluation report of an empty corpus"));
    }
    writeln!(
        out,
        "pooled\t{:.6}\t{},{},{}\t{}",
        total.wer(),
        total.substitutions,
        total.deletions,
        total.insertions,
        total.reference_len
    )
    .unwrap();
    Ok(out)
}
