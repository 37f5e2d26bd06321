use super::{check_lengths, Module, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Flat layout `[batch, time, channels, inner]` of a normalized tensor;
/// statistics are per channel over valid `(batch, time)` pairs and `inner`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormLayout {
    pub batch: usize,
    pub time: usize,
    pub channels: usize,
    pub inner: usize,
}

impl NormLayout {
    /// `[B, T, C, H, W]` frames.
    pub fn frames(shape: &[usize]) -> Result<Self> {
        match *shape {
            [batch, time, channels, h, w] => Ok(NormLayout { batch, time, channels, inner: h * w }),
            _ => Err(Error::shape("batch_norm", format!("expected [B,T,C,H,W], got {shape:?}"))),
        }
    }

    /// `[B, T, D]` sequences.
    pub fn sequence(shape: &[usize]) -> Result<Self> {
        match *shape {
            [batch, time, channels] => Ok(NormLayout { batch, time, channels, inner: 1 }),
            _ => Err(Error::shape("seq_batch_norm", format!("expected [B,T,D], got {shape:?}"))),
        }
    }

    fn for_each_valid(&self, lengths: &[usize], mut f: impl FnMut(usize, usize)) {
        // f(channel, flat offset of the inner run)
        for (b, &len) in lengths.iter().enumerate() {
            for t in 0..len {
                for c in 0..self.channels {
                    f(c, ((b * self.time + t) * self.channels + c) * self.inner);
                }
            }
        }
    }
}

/// Per-channel normalization with padding excluded from statistics and
/// zeroed in the output.
///
/// With `running = Some((mean, var))` the map is the fixed affine transform
/// given by those statistics; otherwise batch statistics are computed and
/// returned alongside the output as `(mean, biased var, count)`.
pub fn batch_norm_masked(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    layout: NormLayout,
    lengths: &[usize],
    running: Option<(&[f64], &[f64])>,
    eps: f64,
) -> Result<(Tensor, Vec<f64>, Vec<f64>, usize)> {
    let NormLayout { batch, time, channels: ch, inner } = layout;
    check_lengths("batch_norm", lengths, batch, time)?;
    if gamma.shape() != [ch] || beta.shape() != [ch] {
        return Err(Error::shape("batch_norm", format!("affine parameters must be [{ch}]")));
    }
    let count: usize = lengths.iter().sum::<usize>() * inner;
    let xd = x.data();
    let (mean, var) = match running {
        Some((m, v)) => (m.to_vec(), v.to_vec()),
        None => {
            if count == 0 {
                return Err(Error::shape("batch_norm", "no valid time steps in batch"));
            }
            let mut sum = vec![0.0; ch];
            layout.for_each_valid(lengths, |c, off| sum[c] += xd[off..off + inner].iter().sum::<f64>());
            let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
            let mut sq = vec![0.0; ch];
            layout.for_each_valid(lengths, |c, off| {
                sq[c] += xd[off..off + inner].iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            });
            (mean, sq.iter().map(|s| s / count as f64).collect())
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let (gd, bd) = (gamma.data(), beta.data());
    let mut xhat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    layout.for_each_valid(lengths, |c, off| {
        for i in off..off + inner {
            xhat[i] = (xd[i] - mean[c]) * inv_std[c];
            out[i] = gd[c] * xhat[i] + bd[c];
        }
    });
    let training = running.is_none();
    let lengths_owned = lengths.to_vec();
    let gamma_c = gamma.clone();
    let inv_std_c = inv_std.clone();
    let y = Tensor::from_op(
        "batch_norm",
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, _| {
            let gd = gamma_c.data();
            let mut dgamma = vec![0.0; ch];
            let mut dbeta = vec![0.0; ch];
            layout.for_each_valid(&lengths_owned, |c, off| {
                for i in off..off + inner {
                    dgamma[c] += g[i] * xhat[i];
                    dbeta[c] += g[i];
                }
            });
            let mut dx = vec![0.0; g.len()];
            if training {
                let n = count as f64;
                // dx = gamma*inv_std/n * (n*g - sum(g) - xhat*sum(g*xhat))
                layout.for_each_valid(&lengths_owned, |c, off| {
                    let k = gd[c] * inv_std_c[c] / n;
                    for i in off..off + inner {
                        dx[i] = k * (n * g[i] - dbeta[c] - xhat[i] * dgamma[c]);
                    }
                });
            } else {
                layout.for_each_valid(&lengths_owned, |c, off| {
                    let k = gd[c] * inv_std_c[c];
                    for i in off..off + inner {
                        dx[i] = k * g[i];
                    }
                });
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
    );
    Ok((y, mean, var, count))
}

/// Batch normalization with running statistics; used per channel on frame
/// features and per feature on sequences (sequence-wise normalization).
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize, eps: f64, momentum: f64) -> Self {
        BatchNorm {
            gamma: Param::trainable(format!("{name}.gamma"), &[channels], vec![1.0; channels]),
            beta: Param::trainable(format!("{name}.beta"), &[channels], vec![0.0; channels]),
            running_mean: Param::buffer(format!("{name}.running_mean"), &[channels], vec![0.0; channels]),
            running_var: Param::buffer(format!("{name}.running_var"), &[channels], vec![1.0; channels]),
            eps,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[0]
    }

    fn run(&mut self, x: &Tensor, layout: NormLayout, lengths: &[usize], train: bool) -> Result<Tensor> {
        if layout.channels != self.channels() {
            return Err(Error::shape(
                "batch_norm",
                format!("{} channels, layer has {}", layout.channels, self.channels()),
            ));
        }
        if !train {
            let rm = self.running_mean.data().to_vec();
            let rv = self.running_var.data().to_vec();
            let (y, ..) = batch_norm_masked(
                x,
                self.gamma.tensor(),
                self.beta.tensor(),
                layout,
                lengths,
                Some((&rm, &rv)),
                self.eps,
            )?;
            return Ok(y);
        }
        let (y, mean, var, count) =
            batch_norm_masked(x, self.gamma.tensor(), self.beta.tensor(), layout, lengths, None, self.eps)?;
        let m = self.momentum;
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        let rm: Vec<f64> = self
            .running_mean
            .data()
            .iter()
            .zip(&mean)
            .map(|(r, b)| (1.0 - m) * r + m * b)
            .collect();
        let rv: Vec<f64> = self
            .running_var
            .data()
            .iter()
            .zip(&var)
            .map(|(r, b)| (1.0 - m) * r + m * b * unbias)
            .collect();
        self.running_mean.set_data(rm);
        self.running_var.set_data(rv);
        Ok(y)
    }

    /// Normalizes `[B, T, C, H, W]` frame features.
    pub fn forward_frames(&mut self, x: &Tensor, lengths: &[usize], train: bool) -> Result<Tensor> {
        self.run(x, NormLayout::frames(x.shape())?, lengths, train)
    }

    /// Normalizes `[B, T, D]` over the joint batch-and-valid-time axis.
    pub fn forward_seq(&mut self, x: &Tensor, lengths: &[usize], train: bool) -> Result<Tensor> {
        self.run(x, NormLayout::sequence(x.shape())?, lengths, train)
    }
}

impl Module for BatchNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}
