//! Central finite-difference gradient checks.
//!
//! The numerical side only ever evaluates the forward pass, so it stays
//! independent of every hand-written backward rule it is used to verify.

mod suite;

pub use suite::{run_suite, SCOPES};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error; gradients below it are
/// effectively compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the gradient of `f` with respect to each of `inputs` against
/// central differences with step `h`.
pub fn check<F>(name: &str, inputs: &[Tensor], f: F, h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let params: Vec<Tensor> = inputs
        .iter()
        .map(|t| Tensor::param(t.shape(), t.data().to_vec()))
        .collect();
    f(&params)?.backward()?;
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for (i, p) in params.iter().enumerate() {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let numeric = {
                let _guard = no_grad();
                let eval = |delta: f64| -> Result<f64> {
                    let perturbed: Vec<Tensor> = params
                        .iter()
                        .enumerate()
                        .map(|(k, q)| {
                            if k == i {
                                let mut d = q.data().to_vec();
                                d[j] += delta;
                                Tensor::new(q.shape(), d)
                            } else {
                                q.detach()
                            }
                        })
                        .collect();
                    Ok(f(&perturbed)?.item())
                };
                (eval(h)? - eval(-h)?) / (2.0 * h)
            };
            max_rel = max_rel.max(relative_error(a, numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_error: max_rel,
        checked,
        tolerance,
    })
}

/// Reduces an arbitrary output to a scalar with fixed pseudo-random weights
/// so that every output element contributes a distinct sensitivity.
pub fn weighted_sum(out: &Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..out.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Ok(out.mul_const(&w)?.sum())
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
}
