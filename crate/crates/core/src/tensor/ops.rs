use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Index value for [`Tensor::gather`] that produces a zero instead of
/// reading from the source.
pub const GATHER_ZERO: usize = usize::MAX;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tensor {
    fn unary(
        &self,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        // derivative from (input, output)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let input = self.clone();
        Tensor::from_op(
            name,
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, out| {
                let gx = input
                    .data()
                    .iter()
                    .zip(out)
                    .zip(g)
                    .map(|((&x, &y), &g)| g * df(x, y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                let ga = g.iter().zip(b.data()).map(|(g, b)| g * b).collect();
                let gb = g.iter().zip(a.data()).map(|(g, a)| g * a).collect();
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.unary("scale", |x| x * factor, move |_, _| factor)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary("add_scalar", |x| x + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, y| y)
    }

    /// Natural log with inputs floored at `floor` (gradient zero below it).
    pub fn ln_floored(&self, floor: f64) -> Tensor {
        self.unary(
            "ln",
            move |x| x.max(floor).ln(),
            move |x, _| if x > floor { 1.0 / x } else { 0.0 },
        )
    }

    /// Element-wise product with a constant (non-differentiable) buffer.
    pub fn mul_const(&self, factors: &[f64]) -> Result<Tensor> {
        if factors.len() != self.numel() {
            return Err(Error::shape(
                "mul_const",
                format!("{} factors for {} elements", factors.len(), self.numel()),
            ));
        }
        let data = self.data().iter().zip(factors).map(|(a, b)| a * b).collect();
        let factors = factors.to_vec();
        Ok(Tensor::from_op(
            "mul_const",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.iter().zip(&factors).map(|(g, f)| g * f).collect())]),
        ))
    }

    /// Sum of all elements in flat-index order.
    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape()),
            ));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(Error::shape(
                "matmul",
                format!("expected rank-2 operands, got {:?} and {:?}", self.shape(), other.shape()),
            ));
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions differ: {:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let out = matmul_raw(self.data(), other.data(), m, k, n);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "matmul",
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                // dA = G B^T, dB = A^T G
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        let brow = b.data();
                        for p in 0..k {
                            ga[i * k + p] += gij * brow[p * n + j];
                        }
                    }
                }
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = a.data()[i * k + p];
                        let row = &mut gb[p * n..(p + 1) * n];
                        for (r, gv) in row.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                            *r += aip * gv;
                        }
                    }
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Tensor {
        let c = *self.shape().last().unwrap();
        let data = softmax_rows(self.data(), c);
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, y| {
                let mut gx = vec![0.0; y.len()];
                for ((gr, yr), out) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gi), yi) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yi * (gi - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Tensor {
        let c = *self.shape().last().unwrap();
        let data = log_softmax_rows(self.data(), c);
        Tensor::from_op(
            "log_softmax",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, y| {
                let mut gx = vec![0.0; y.len()];
                for ((gr, yr), out) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)) {
                    let gsum: f64 = gr.iter().sum();
                    for ((o, gi), yi) in out.iter_mut().zip(gr).zip(yr) {
                        *o = gi - yi.exp() * gsum;
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Concatenates tensors along their last axis; leading axes must agree.
    pub fn concat_last(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let lead = &first.shape()[..first.rank() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            if p.rank() != first.rank() || &p.shape()[..p.rank() - 1] != lead {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?}", first.shape(), p.shape()),
                ));
            }
            widths.push(*p.shape().last().unwrap());
        }
        let rows = numel(lead);
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(Tensor::from_op(
            "concat",
            shape,
            data,
            parts.to_vec(),
            Box::new(move |g, _| {
                let mut grads: Vec<Vec<f64>> =
                    widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for (gp, &w) in grads.iter_mut().zip(&widths) {
                        gp.extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Builds a tensor of `shape` whose element `i` is `self[indices[i]]`
    /// (flat indexing), or zero where the index is [`GATHER_ZERO`].
    /// The backward pass scatter-adds.
    pub fn gather(&self, shape: &[usize], indices: Vec<usize>) -> Result<Tensor> {
        if numel(shape) != indices.len() {
            return Err(Error::shape(
                "gather",
                format!("{} indices for shape {shape:?}", indices.len()),
            ));
        }
        let n = self.numel();
        if let Some(bad) = indices.iter().find(|&&i| i != GATHER_ZERO && i >= n) {
            return Err(Error::shape("gather", format!("index {bad} out of range {n}")));
        }
        let src = self.data();
        let data = indices
            .iter()
            .map(|&i| if i == GATHER_ZERO { 0.0 } else { src[i] })
            .collect();
        Ok(Tensor::from_op(
            "gather",
            shape.to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n];
                for (&i, &gv) in indices.iter().zip(g) {
                    if i != GATHER_ZERO {
                        gx[i] += gv;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// Dot product with four interleaved partial sums combined in a fixed order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (qa, qb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = qa.remainder().iter().zip(qb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in qa.zip(qb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_rows(x: &[f64], c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(c).zip(out.chunks_mut(c)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = (xi - m).exp();
            z += *oi;
        }
        o.iter_mut().for_each(|v| *v /= z);
    }
    out
}

pub(crate) fn log_softmax_rows(x: &[f64], c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(c).zip(out.chunks_mut(c)) {
        let lse = log_sum_exp(row);
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = xi - lse;
        }
    }
    out
}
