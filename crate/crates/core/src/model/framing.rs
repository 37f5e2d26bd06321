use crate::error::{Error, Result};
use crate::tensor::{ops::GATHER_ZERO, Tensor};

/// Number of meta frames, `floor((T - L) / S) + 1`, or `None` when `T < L`.
pub fn meta_frame_count(frames: usize, window: usize, stride: usize) -> Option<usize> {
    (frames >= window && window > 0 && stride > 0).then(|| (frames - window) / stride + 1)
}

/// Meta-frame counts per sample; a sample shorter than the window is an
/// error naming it.
pub fn meta_frame_counts(lengths: &[usize], window: usize, stride: usize, ids: Option<&[String]>) -> Result<Vec<usize>> {
    lengths
        .iter()
        .enumerate()
        .map(|(b, &t)| {
            meta_frame_count(t, window, stride).ok_or_else(|| Error::Sample {
                sample: ids.map_or_else(|| format!("#{b}"), |ids| ids[b].clone()),
                detail: format!("{t} valid frames is shorter than the framing window {window}"),
            })
        })
        .collect()
}

/// All valid windows of `[B, T, K]` stacked as `[P, L, K]`, `P = sum F_b`,
/// sample-major. Window `f` of sample `b` holds frames `[f*S, f*S + L)`.
pub fn pack_windows(features: &Tensor, window: usize, stride: usize, counts: &[usize]) -> Result<Tensor> {
    let &[batch, time, k] = features.shape() else {
        return Err(Error::shape("framing", "expected [B, T, K] features"));
    };
    if counts.len() != batch {
        return Err(Error::shape("framing", "one meta-frame count per sample required"));
    }
    let total: usize = counts.iter().sum();
    let mut idx = Vec::with_capacity(total * window * k);
    for (b, &f_count) in counts.iter().enumerate() {
        for f in 0..f_count {
            let start = f * stride;
            if start + window > time {
                return Err(Error::shape("framing", format!("window {f} of sample {b} exceeds {time} frames")));
            }
            let base = (b * time + start) * k;
            idx.extend(base..base + window * k);
        }
    }
    features.gather(&[total, window, k], idx)
}

/// Scatters packed per-window rows `[P, D]` into `[B, F_max, D]`, zero-padded.
pub fn unpack_windows(packed: &Tensor, counts: &[usize]) -> Result<Tensor> {
    let &[total, d] = packed.shape() else {
        return Err(Error::shape("unpack_windows", "expected [P, D]"));
    };
    if counts.iter().sum::<usize>() != total {
        return Err(Error::shape("unpack_windows", "counts do not sum to the packed rows"));
    }
    let f_max = counts.iter().copied().max().unwrap_or(0);
    let mut idx = vec![GATHER_ZERO; counts.len() * f_max * d];
    let mut p = 0;
    for (b, &f_count) in counts.iter().enumerate() {
        for f in 0..f_count {
            let dst = (b * f_max + f) * d;
            for q in 0..d {
                idx[dst + q] = p * d + q;
            }
            p += 1;
        }
    }
    packed.gather(&[counts.len(), f_max, d], idx)
}

/// Slides a window of `L` frames with stride `S` over `[B, T, K]` features,
/// producing `[B, F_max, L, K]` (zero beyond each sample's count) and the
/// per-sample counts computed from valid lengths.
pub fn framing(features: &Tensor, window: usize, stride: usize, lengths: &[usize], ids: Option<&[String]>) -> Result<(Tensor, Vec<usize>)> {
    let &[_, _, k] = features.shape() else {
        return Err(Error::shape("framing", "expected [B, T, K] features"));
    };
    let counts = meta_frame_counts(lengths, window, stride, ids)?;
    let packed = pack_windows(features, window, stride, &counts)?;
    let total = packed.shape()[0];
    let flat = packed.reshape(&[total, window * k])?;
    let un = unpack_windows(&flat, &counts)?;
    let f_max = un.shape()[1];
    Ok((un.reshape(&[lengths.len(), f_max, window, k])?, counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(meta_frame_count(24, 12, 3), Some(5));
        assert_eq!(meta_frame_count(12, 12, 7), Some(1));
        assert_eq!(meta_frame_count(10, 4, 2), Some(4));
        assert_eq!(meta_frame_count(11, 12, 3), None);
    }

    #[test]
    fn window_contents() {
        // T=10, K=1, feature value = frame index
        let x = Tensor::new(&[1, 10, 1], (0..10).map(f64::from).collect());
        let (w, c) = framing(&x, 4, 2, &[10], None).unwrap();
        assert_eq!(c, vec![4]);
        assert_eq!(w.shape(), &[1, 4, 4, 1]);
        assert_eq!(&w.data()[8..12], &[4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn padded_meta_frames_are_zero_and_lengths_respected() {
        let x = Tensor::new(&[2, 6, 1], (1..=12).map(f64::from).collect());
        // second sample has only 4 valid frames: padding values must not be used
        let (w, c) = framing(&x, 2, 2, &[6, 4], None).unwrap();
        assert_eq!(c, vec![3, 2]);
        assert_eq!(w.shape(), &[2, 3, 2, 1]);
        assert_eq!(&w.data()[6..], &[7.0, 8.0, 9.0, 10.0, 0.0, 0.0]);
    }

    #[test]
    fn short_sample_is_named() {
        let x = Tensor::zeros(&[2, 8, 1]);
        let ids = vec!["a".to_string(), "b".to_string()];
        let err = framing(&x, 6, 1, &[8, 5], Some(&ids)).unwrap_err().to_string();
        assert!(err.contains("b"), "{err}");
    }
}
