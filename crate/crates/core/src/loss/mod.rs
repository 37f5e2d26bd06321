//! Training objectives and decoding: CTC, the gloss-level KL regularizer,
//! the epoch-gated combination of both, and greedy CTC decoding.

mod ctc;
mod decode;
mod kl;

pub use ctc::{collapse, ctc_loss, log_likelihood, CtcTarget, BLANK};
pub use decode::{argmax_paths, greedy_decode};
pub use kl::{kl_regularizer, KlFlow, PROB_FLOOR};

use crate::error::Result;
use crate::tensor::Tensor;

/// Values of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub ctc: f64,
    /// `None` when no regularizer term was computed.
    pub kl: Option<f64>,
    pub total: f64,
    pub regularizer_active: bool,
}

/// Whether the regularizer contributes at 1-based epoch `epoch`:
/// strictly after `e_start`.
pub fn regularizer_active(epoch: usize, e_start: usize) -> bool {
    epoch > e_start
}

/// `L = L_s + [epoch > e_start] * weight * L_g`.
pub fn combined_loss(
    ctc: &Tensor,
    kl: Option<&Tensor>,
    epoch: usize,
    e_start: usize,
    weight: f64,
) -> Result<(Tensor, LossReport)> {
    let active = kl.is_some() && regularizer_active(epoch, e_start);
    let total = match kl {
        Some(kl) if active => ctc.add(&kl.scale(weight))?,
        _ => ctc.clone(),
    };
    let report = LossReport {
        ctc: ctc.item(),
        kl: kl.map(Tensor::item),
        total: total.item(),
        regularizer_active: active,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_is_strict() {
        let ls = Tensor::scalar(2.0);
        let lg = Tensor::scalar(0.5);
        let (_, r) = combined_loss(&ls, Some(&lg), 5, 5, 1.0).unwrap();
        assert!(!r.regularizer_active);
        assert_eq!(r.total, 2.0);
        let (_, r) = combined_loss(&ls, Some(&lg), 6, 5, 1.0).unwrap();
        assert!(r.regularizer_active);
        assert_eq!(r.total, 2.5);
    }

    #[test]
    fn zero_start_is_always_on() {
        assert!((1..=60).all(|e| regularizer_active(e, 0)));
        let (_, r) = combined_loss(&Tensor::scalar(1.0), Some(&Tensor::scalar(0.25)), 1, 0, 1.0).unwrap();
        assert_eq!(r.total, 1.25);
    }

    #[test]
    fn missing_regularizer_is_ctc_only() {
        let (_, r) = combined_loss(&Tensor::scalar(3.0), None, 10, 0, 1.0).unwrap();
        assert!(!r.regularizer_active);
        assert_eq!(r.total, 3.0);
        assert_eq!(r.kl, None);
    }
}
