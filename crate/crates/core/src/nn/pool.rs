use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over the spatial axes: `[B, T, K, H, W] -> [B, T, K]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let &[b, t, k, h, w] = x.shape() else {
        return Err(Error::shape("global_avg_pool", format!("expected rank 5, got {:?}", x.shape())));
    };
    let plane = h * w;
    let inv = 1.0 / plane as f64;
    let data = x.data().chunks(plane).map(|p| p.iter().sum::<f64>() * inv).collect();
    Ok(Tensor::from_op(
        "global_avg_pool",
        vec![b, t, k],
        data,
        vec![x.clone()],
        Box::new(move |g, _| {
            let gx = g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, plane)).collect();
            vec![Some(gx)]
        }),
    ))
}

/// Zeroes every time step at or beyond each sample's valid length.
/// Works on any tensor whose first two axes are `[B, T]`.
pub fn mask_frames(x: &Tensor, lengths: &[usize]) -> Result<Tensor> {
    let (b, t) = match x.shape() {
        [b, t, ..] => (*b, *t),
        _ => return Err(Error::shape("mask_frames", "need at least [B, T]")),
    };
    super::check_lengths("mask_frames", lengths, b, t)?;
    if lengths.iter().all(|&l| l == t) {
        return Ok(x.clone());
    }
    let per_step = x.numel() / (b * t);
    let mut mask = vec![0.0; x.numel()];
    for (bi, &len) in lengths.iter().enumerate() {
        let start = bi * t * per_step;
        mask[start..start + len * per_step].iter_mut().for_each(|v| *v = 1.0);
    }
    x.mul_const(&mask)
}
