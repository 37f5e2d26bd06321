//! Finite-difference checks of every layer and both losses on small random
//! instances.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check, random_tensor, weighted_sum, GradCheckReport, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::error::{Error, Result};
use crate::loss::{ctc_loss, kl_regularizer, CtcTarget, KlFlow};
use crate::nn::{batch_norm_masked, conv_video, linear, lstm_sequence, reverse_within_lengths, NormLayout};
use crate::tensor::Tensor;

pub const SCOPES: &[&str] = &["conv2d", "conv3d", "mict", "bn", "seq_bn", "lstm", "bilstm", "fc", "ctc", "kl"];

/// Runs the checks in `scope` (`"all"` or one of [`SCOPES`]).
pub fn run_suite(scope: &str, seed: u64) -> Result<Vec<GradCheckReport>> {
    let selected: Vec<&str> = match scope {
        "all" => SCOPES.to_vec(),
        s if SCOPES.contains(&s) => vec![s],
        s => return Err(Error::config(format!("unknown gradcheck scope {s:?}; expected all or one of {}", SCOPES.join(", ")))),
    };
    selected.into_iter().map(|s| run_one(s, seed)).collect()
}

fn run_one(name: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize], scale: f64| random_tensor(&mut rng, shape, scale);
    let (h, tol) = (DEFAULT_STEP, DEFAULT_TOLERANCE);
    match name {
        "conv2d" => {
            let inputs = [r(&[2, 2, 2, 5, 5], 1.0), r(&[3, 2, 3, 3], 0.5), r(&[3], 0.5)];
            check(name, &inputs, |p| weighted_sum(&conv_video(&p[0], &p[1], &p[2], 2)?, 1), h, tol)
        }
        "conv3d" => {
            let inputs = [r(&[1, 4, 2, 4, 4], 1.0), r(&[2, 2, 3, 3, 3], 0.5), r(&[2], 0.5)];
            check(name, &inputs, |p| weighted_sum(&conv_video(&p[0], &p[1], &p[2], 1)?, 2), h, tol)
        }
        "mict" => {
            let inputs = [
                r(&[1, 3, 2, 5, 5], 1.0),
                r(&[2, 2, 3, 3], 0.5),
                r(&[2], 0.5),
                r(&[2, 2, 3, 3, 3], 0.5),
                r(&[2], 0.5),
            ];
            check(
                name,
                &inputs,
                |p| {
                    let y = conv_video(&p[0], &p[3], &p[4], 2)?.add(&conv_video(&p[0], &p[1], &p[2], 2)?)?;
                    weighted_sum(&y, 3)
                },
                h,
                tol,
            )
        }
        "bn" => {
            let inputs = [r(&[2, 3, 2, 2, 2], 1.0), r(&[2], 1.0), r(&[2], 1.0)];
            check(
                name,
                &inputs,
                |p| {
                    let layout = NormLayout::frames(p[0].shape())?;
                    let (y, ..) = batch_norm_masked(&p[0], &p[1], &p[2], layout, &[3, 2], None, 1e-5)?;
                    weighted_sum(&y, 4)
                },
                h,
                tol,
            )
        }
        "seq_bn" => {
            let inputs = [r(&[3, 4, 3], 1.0), r(&[3], 1.0), r(&[3], 1.0)];
            check(
                name,
                &inputs,
                |p| {
                    let layout = NormLayout::sequence(p[0].shape())?;
                    let (y, ..) = batch_norm_masked(&p[0], &p[1], &p[2], layout, &[4, 2, 3], None, 1e-5)?;
                    weighted_sum(&y, 5)
                },
                h,
                tol,
            )
        }
        "lstm" => {
            let (d, hid) = (3, 4);
            let inputs = [r(&[2, 5, d], 1.0), r(&[4 * hid, d], 0.5), r(&[4 * hid, hid], 0.5), r(&[4 * hid], 0.5)];
            check(
                name,
                &inputs,
                |p| weighted_sum(&lstm_sequence(&p[0], &p[1], &p[2], &p[3], &[5, 3], None)?, 6),
                h,
                tol,
            )
        }
        "bilstm" => {
            let (d, hid) = (2, 3);
            let inputs = [
                r(&[2, 4, d], 1.0),
                r(&[4 * hid, d], 0.5),
                r(&[4 * hid, hid], 0.5),
                r(&[4 * hid], 0.5),
                r(&[4 * hid, d], 0.5),
                r(&[4 * hid, hid], 0.5),
                r(&[4 * hid], 0.5),
            ];
            check(
                name,
                &inputs,
                |p| {
                    let lengths = [4, 2];
                    let fwd = lstm_sequence(&p[0], &p[1], &p[2], &p[3], &lengths, None)?;
                    let rev = reverse_within_lengths(&p[0], &lengths)?;
                    let bwd = lstm_sequence(&rev, &p[4], &p[5], &p[6], &lengths, None)?;
                    let y = Tensor::concat_last(&[fwd, reverse_within_lengths(&bwd, &lengths)?])?;
                    weighted_sum(&y, 7)
                },
                h,
                tol,
            )
        }
        "fc" => {
            let inputs = [r(&[2, 3, 4], 1.0), r(&[5, 4], 0.5), r(&[5], 0.5)];
            check(name, &inputs, |p| weighted_sum(&linear(&p[0], &p[1], &p[2])?, 8), h, tol)
        }
        "ctc" => {
            let targets = vec![CtcTarget::new(vec![1, 2], 4)?, CtcTarget::new(vec![3, 3], 4)?];
            let inputs = [r(&[2, 6, 4], 2.0)];
            check(name, &inputs, |p| ctc_loss(&p[0], &targets, &[6, 5], None), h, tol)
        }
        "kl" => {
            let inputs = [r(&[2, 3, 4], 2.0), r(&[2, 3, 4], 2.0)];
            check(
                name,
                &inputs,
                |p| kl_regularizer(&p[0].softmax(), &p[1].softmax(), &[3, 2], KlFlow::Both),
                h,
                tol,
            )
        }
        _ => unreachable!("scope filtered above"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_scope_passes() {
        for r in run_suite("all", 11).unwrap() {
            assert!(r.passed(), "{} rel err {:e}", r.name, r.max_rel_error);
            assert!(r.checked > 0);
        }
    }

    #[test]
    fn single_scope() {
        let r = run_suite("ctc", 0).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].name, "ctc");
        assert!(run_suite("nope", 0).is_err());
    }
}
