use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Which distributions receive gradient from the regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlFlow {
    /// The sentence-level distribution is a fixed target; only the gloss
    /// level is pulled toward it.
    #[default]
    GlossOnly,
    /// Gradient reaches both distributions.
    Both,
}

/// `KL(P_sl || P_gl) = sum_n P_sl,n * ln(P_sl,n / P_gl,n)` per meta frame,
/// averaged over each sample's first `lengths[b]` frames, then over the batch.
///
/// Both inputs are `[B, F, A]` probability tensors.
pub fn kl_regularizer(p_gl: &Tensor, p_sl: &Tensor, lengths: &[usize], flow: KlFlow) -> Result<Tensor> {
    let &[batch, frames, alphabet] = p_gl.shape() else {
        return Err(Error::shape("kl", format!("expected [B,F,A], got {:?}", p_gl.shape())));
    };
    if p_sl.shape() != p_gl.shape() {
        return Err(Error::shape("kl", format!("{:?} vs {:?}", p_gl.shape(), p_sl.shape())));
    }
    crate::nn::check_lengths("kl", lengths, batch, frames)?;
    let ln = |p: f64| p.max(PROB_FLOOR).ln();
    let (q, p) = (p_gl.data(), p_sl.data());
    let mut total = 0.0;
    let mut gq = vec![0.0; q.len()];
    let mut gp = vec![0.0; p.len()];
    let mut used = 0usize;
    for (b, &len) in lengths.iter().enumerate() {
        if len == 0 {
            continue;
        }
        used += 1;
        let w = 1.0 / len as f64;
        let mut sample = 0.0;
        for i in b * frames * alphabet..(b * frames + len) * alphabet {
            if p[i] > 0.0 {
                sample += p[i] * (ln(p[i]) - ln(q[i]));
            }
            gq[i] = if q[i] > PROB_FLOOR { -w * p[i] / q[i] } else { 0.0 };
            let dself = if p[i] > PROB_FLOOR { 1.0 } else { 0.0 };
            gp[i] = w * (ln(p[i]) + dself - ln(q[i]));
        }
        total += sample * w;
    }
    if used == 0 {
        return Err(Error::shape("kl", "no valid meta frames"));
    }
    let inv = 1.0 / used as f64;
    let both = flow == KlFlow::Both;
    Ok(Tensor::from_op(
        "kl",
        vec![1],
        vec![total * inv],
        vec![p_gl.clone(), p_sl.clone()],
        Box::new(move |g, _| {
            let s = g[0] * inv;
            let dq = Some(gq.iter().map(|v| v * s).collect());
            let dp = both.then(|| gp.iter().map(|v| v * s).collect());
            vec![dq, dp]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check, random_tensor, DEFAULT_STEP, DEFAULT_TOLERANCE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_distributions_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = random_tensor(&mut rng, &[2, 3, 4], 2.0).softmax();
        let v = kl_regularizer(&p, &p, &[3, 2], KlFlow::GlossOnly).unwrap().item();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn two_class_value() {
        let p_sl = Tensor::new(&[1, 1, 2], vec![0.5, 0.5]);
        let p_gl = Tensor::new(&[1, 1, 2], vec![0.25, 0.75]);
        let v = kl_regularizer(&p_gl, &p_sl, &[1], KlFlow::GlossOnly).unwrap().item();
        let want = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((v - want).abs() < 1e-15);
        assert!((v - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn gradient_blocked_through_sentence_level() {
        let p_sl = Tensor::param(&[1, 1, 2], vec![0.5, 0.5]);
        let p_gl = Tensor::param(&[1, 1, 2], vec![0.25, 0.75]);
        kl_regularizer(&p_gl, &p_sl, &[1], KlFlow::GlossOnly).unwrap().backward().unwrap();
        assert!(p_sl.grad().is_none());
        assert!(p_gl.grad().is_some());
    }

    #[test]
    fn masked_frames_do_not_count() {
        let p = Tensor::new(&[1, 2, 2], vec![0.5, 0.5, 0.9, 0.1]);
        let q = Tensor::new(&[1, 2, 2], vec![0.5, 0.5, 0.1, 0.9]);
        let v = kl_regularizer(&q, &p, &[1], KlFlow::GlossOnly).unwrap().item();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn gradients_through_softmax_both_ways() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_tensor(&mut rng, &[2, 3, 3], 1.5);
        let b = random_tensor(&mut rng, &[2, 3, 3], 1.5);
        let r = check(
            "kl",
            &[a, b],
            |x| kl_regularizer(&x[0].softmax(), &x[1].softmax(), &[3, 2], KlFlow::Both),
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
