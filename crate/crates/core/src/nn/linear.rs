use rand::Rng;

use super::{Module, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `y = x W^T + b` applied to the last axis of `x`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let &[out_f, in_f] = weight.shape() else {
        return Err(Error::shape("linear", format!("weight must be rank 2, got {:?}", weight.shape())));
    };
    if x.shape().last() != Some(&in_f) {
        return Err(Error::shape(
            "linear",
            format!("input {:?} does not end in {in_f} features", x.shape()),
        ));
    }
    if bias.shape() != [out_f] {
        return Err(Error::shape("linear", format!("bias {:?} for {out_f} outputs", bias.shape())));
    }
    let rows = x.numel() / in_f;
    let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
    let mut out = vec![0.0; rows * out_f];
    for r in 0..rows {
        let xr = &xd[r * in_f..(r + 1) * in_f];
        for (j, o) in out[r * out_f..(r + 1) * out_f].iter_mut().enumerate() {
            let wr = &wd[j * in_f..(j + 1) * in_f];
            *o = bd[j] + xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_f;
    let (xc, wc) = (x.clone(), weight.clone());
    Ok(Tensor::from_op(
        "linear",
        shape,
        out,
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(move |g, _| {
            let (xd, wd) = (xc.data(), wc.data());
            let mut gx = vec![0.0; rows * in_f];
            let mut gw = vec![0.0; out_f * in_f];
            let mut gb = vec![0.0; out_f];
            for r in 0..rows {
                let xr = &xd[r * in_f..(r + 1) * in_f];
                let gxr = &mut gx[r * in_f..(r + 1) * in_f];
                for j in 0..out_f {
                    let gj = g[r * out_f + j];
                    if gj == 0.0 {
                        continue;
                    }
                    gb[j] += gj;
                    let wr = &wd[j * in_f..(j + 1) * in_f];
                    let gwr = &mut gw[j * in_f..(j + 1) * in_f];
                    for i in 0..in_f {
                        gxr[i] += gj * wr[i];
                        gwr[i] += gj * xr[i];
                    }
                }
            }
            vec![Some(gx), Some(gw), Some(gb)]
        }),
    ))
}

/// Fully connected layer.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, in_f: usize, out_f: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: Param::uniform(format!("{name}.weight"), &[out_f, in_f], in_f, rng),
            bias: Param::trainable(format!("{name}.bias"), &[out_f], vec![0.0; out_f]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear(x, self.weight.tensor(), self.bias.tensor())
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
