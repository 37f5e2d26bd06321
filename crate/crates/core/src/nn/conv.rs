use rand::Rng;

use super::{Module, Param};
use crate::error::{Error, Result};
use crate::tensor::ops::dot;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    time: usize,
    in_ch: usize,
    height: usize,
    width: usize,
    out_ch: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn pad_h(&self) -> usize {
        self.kh / 2
    }
    fn pad_w(&self) -> usize {
        self.kw / 2
    }
    fn pad_t(&self) -> usize {
        self.kt / 2
    }

    /// Output columns `ox` for which `ox * stride + dx - pad` lands inside the input.
    fn valid_range(out: usize, input: usize, d: usize, pad: usize, stride: usize) -> (usize, usize) {
        // need 0 <= ox*s + d - pad <= input-1
        let lo = if d >= pad { 0 } else { (pad - d).div_ceil(stride) };
        let hi_num = input as isize - 1 + pad as isize - d as isize;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = ((hi_num as usize) / stride + 1).min(out);
        (lo.min(hi), hi)
    }
}

/// Video convolution over `[B, T, C, H, W]` with "same" zero padding in time
/// and space, spatial stride `stride`, temporal stride 1.
///
/// `weight` is `[K, C, kt, kh, kw]`; a `[K, C, kh, kw]` weight is treated as
/// `kt = 1`, which is exactly the per-frame 2D convolution.
pub fn conv_video(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let &[batch, time, in_ch, height, width] = x.shape() else {
        return Err(Error::shape("conv", format!("input must be [B,T,C,H,W], got {:?}", x.shape())));
    };
    let (out_ch, wc, kt, kh, kw) = match *weight.shape() {
        [k, c, kh, kw] => (k, c, 1, kh, kw),
        [k, c, kt, kh, kw] => (k, c, kt, kh, kw),
        _ => return Err(Error::shape("conv", format!("bad kernel shape {:?}", weight.shape()))),
    };
    if wc != in_ch {
        return Err(Error::shape(
            "conv",
            format!("input has {in_ch} channels, kernel expects {wc}"),
        ));
    }
    if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape("conv", "same padding needs odd kernel extents"));
    }
    if bias.shape() != [out_ch] {
        return Err(Error::shape("conv", format!("bias {:?} for {out_ch} channels", bias.shape())));
    }
    if stride == 0 {
        return Err(Error::shape("conv", "stride must be positive"));
    }
    let g = Geometry {
        batch,
        time,
        in_ch,
        height,
        width,
        out_ch,
        kt,
        kh,
        kw,
        stride,
        out_h: (height - 1) / stride + 1,
        out_w: (width - 1) / stride + 1,
    };
    let out = conv_forward(&g, x.data(), weight.data(), bias.data());
    let (xc, wc) = (x.clone(), weight.clone());
    Ok(Tensor::from_op(
        if kt == 1 { "conv2d" } else { "conv3d" },
        vec![batch, time, out_ch, g.out_h, g.out_w],
        out,
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(move |grad, _| {
            let (gx, gw, gb) = conv_backward(&g, xc.data(), wc.data(), grad, xc.requires_grad());
            vec![gx, Some(gw), Some(gb)]
        }),
    ))
}

/// Columns per im2col chunk; whole frames are grouped until about this many.
const CHUNK_COLUMNS: usize = 512;

impl Geometry {
    fn patch(&self) -> usize {
        self.in_ch * self.kt * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn chunks(&self) -> impl Iterator<Item = std::ops::Range<usize>> {
        let frames = self.batch * self.time;
        let step = (CHUNK_COLUMNS / self.out_plane()).max(1);
        (0..frames).step_by(step).map(move |f| f..(f + step).min(frames))
    }
}

/// Unfolds the receptive fields of frames `fr` into `col` as a
/// `[patch, n]` matrix, `n = |fr| * out_plane`. Row `j` follows the kernel
/// layout `(c, dt, dy, dx)`, so row `j` pairs with `weight[k, j]`.
fn im2col(g: &Geometry, x: &[f64], fr: std::ops::Range<usize>, col: &mut [f64]) {
    let p = g.out_plane();
    let n = fr.len() * p;
    let in_plane = g.height * g.width;
    for c in 0..g.in_ch {
        for dt in 0..g.kt {
            for dy in 0..g.kh {
                let (oy0, oy1) = Geometry::valid_range(g.out_h, g.height, dy, g.pad_h(), g.stride);
                for dx in 0..g.kw {
                    let (ox0, ox1) = Geometry::valid_range(g.out_w, g.width, dx, g.pad_w(), g.stride);
                    let j = ((c * g.kt + dt) * g.kh + dy) * g.kw + dx;
                    let row = &mut col[j * n..(j + 1) * n];
                    row.iter_mut().for_each(|v| *v = 0.0);
                    for (fi, f) in fr.clone().enumerate() {
                        let (bi, t) = (f / g.time, f % g.time);
                        let ti = t as isize + dt as isize - g.pad_t() as isize;
                        if ti < 0 || ti >= g.time as isize {
                            continue;
                        }
                        let plane = &x[((bi * g.time + ti as usize) * g.in_ch + c) * in_plane..][..in_plane];
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + dy - g.pad_h();
                            let irow = &plane[iy * g.width..(iy + 1) * g.width];
                            let orow = &mut row[fi * p + oy * g.out_w..fi * p + (oy + 1) * g.out_w];
                            for ox in ox0..ox1 {
                                orow[ox] = irow[ox * g.stride + dx - g.pad_w()];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a `[patch, n]` column gradient into `gx`.
fn col2im(g: &Geometry, gcol: &[f64], fr: std::ops::Range<usize>, gx: &mut [f64]) {
    let p = g.out_plane();
    let n = fr.len() * p;
    let in_plane = g.height * g.width;
    for c in 0..g.in_ch {
        for dt in 0..g.kt {
            for dy in 0..g.kh {
                let (oy0, oy1) = Geometry::valid_range(g.out_h, g.height, dy, g.pad_h(), g.stride);
                for dx in 0..g.kw {
                    let (ox0, ox1) = Geometry::valid_range(g.out_w, g.width, dx, g.pad_w(), g.stride);
                    let j = ((c * g.kt + dt) * g.kh + dy) * g.kw + dx;
                    let row = &gcol[j * n..(j + 1) * n];
                    for (fi, f) in fr.clone().enumerate() {
                        let (bi, t) = (f / g.time, f % g.time);
                        let ti = t as isize + dt as isize - g.pad_t() as isize;
                        if ti < 0 || ti >= g.time as isize {
                            continue;
                        }
                        let base = ((bi * g.time + ti as usize) * g.in_ch + c) * in_plane;
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + dy - g.pad_h();
                            let grow = &row[fi * p + oy * g.out_w..fi * p + (oy + 1) * g.out_w];
                            let xrow = &mut gx[base + iy * g.width..base + (iy + 1) * g.width];
                            for ox in ox0..ox1 {
                                xrow[ox * g.stride + dx - g.pad_w()] += grow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(g: &Geometry, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let (p, kk) = (g.out_plane(), g.patch());
    let mut out = vec![0.0; g.batch * g.time * g.out_ch * p];
    let mut col = Vec::new();
    let mut acc = Vec::new();
    for fr in g.chunks() {
        let n = fr.len() * p;
        col.resize(kk * n, 0.0);
        im2col(g, x, fr.clone(), &mut col);
        acc.clear();
        acc.resize(n, 0.0);
        for k in 0..g.out_ch {
            acc.iter_mut().for_each(|v| *v = b[k]);
            let wk = &w[k * kk..(k + 1) * kk];
            for (j, &wv) in wk.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                for (a, &cv) in acc.iter_mut().zip(&col[j * n..(j + 1) * n]) {
                    *a += wv * cv;
                }
            }
            for (fi, f) in fr.clone().enumerate() {
                out[(f * g.out_ch + k) * p..][..p].copy_from_slice(&acc[fi * p..(fi + 1) * p]);
            }
        }
    }
    out
}

/// `need_gx = false` skips the input gradient (e.g. for raw frames).
fn conv_backward(g: &Geometry, x: &[f64], w: &[f64], grad: &[f64], need_gx: bool) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (p, kk) = (g.out_plane(), g.patch());
    let mut gx = if need_gx { vec![0.0; x.len()] } else { Vec::new() };
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; g.out_ch];
    let (mut col, mut gcol, mut go) = (Vec::new(), Vec::new(), Vec::new());
    for fr in g.chunks() {
        let n = fr.len() * p;
        col.resize(kk * n, 0.0);
        im2col(g, x, fr.clone(), &mut col);
        gcol.clear();
        gcol.resize(kk * n, 0.0);
        go.resize(n, 0.0);
        for k in 0..g.out_ch {
            for (fi, f) in fr.clone().enumerate() {
                go[fi * p..(fi + 1) * p].copy_from_slice(&grad[(f * g.out_ch + k) * p..][..p]);
            }
            gb[k] += go.iter().sum::<f64>();
            let wk = &w[k * kk..(k + 1) * kk];
            let gwk = &mut gw[k * kk..(k + 1) * kk];
            for j in 0..kk {
                let crow = &col[j * n..(j + 1) * n];
                gwk[j] += dot(crow, &go);
                let wv = wk[j];
                if need_gx && wv != 0.0 {
                    for (gc, &gv) in gcol[j * n..(j + 1) * n].iter_mut().zip(&go) {
                        *gc += wv * gv;
                    }
                }
            }
        }
        if need_gx {
            col2im(g, &gcol, fr, &mut gx);
        }
    }
    (need_gx.then_some(gx), gw, gb)
}

/// Per-frame 2D convolution; kernel `[K, C, kh, kw]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            weight: Param::uniform(format!("{name}.weight"), &[out_ch, in_ch, kernel, kernel], fan_in, rng),
            bias: Param::trainable(format!("{name}.bias"), &[out_ch], vec![0.0; out_ch]),
            stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv_video(x, self.weight.tensor(), self.bias.tensor(), self.stride)
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Spatio-temporal convolution; kernel `[K, C, kt, kh, kw]`, output length
/// equals input length.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
}

impl Conv3d {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        temporal: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * temporal * kernel * kernel;
        Conv3d {
            weight: Param::uniform(
                format!("{name}.weight"),
                &[out_ch, in_ch, temporal, kernel, kernel],
                fan_in,
                rng,
            ),
            bias: Param::trainable(format!("{name}.bias"), &[out_ch], vec![0.0; out_ch]),
            stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv_video(x, self.weight.tensor(), self.bias.tensor(), self.stride)
    }

    /// Zeroes kernel and bias, reducing the branch to a constant zero output.
    pub fn zero(&mut self) {
        let n = self.weight.data().len();
        self.weight.set_data(vec![0.0; n]);
        let k = self.bias.data().len();
        self.bias.set_data(vec![0.0; k]);
    }
}

impl Module for Conv3d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// A 2D branch and an optional 3D branch with identical output geometry,
/// merged by element-wise summation.
#[derive(Debug, Clone)]
pub struct MixedBlock {
    pub spatial: Conv2d,
    pub temporal: Option<Conv3d>,
}

impl MixedBlock {
    pub fn new(spatial: Conv2d, temporal: Option<Conv3d>) -> Result<Self> {
        if let Some(t) = &temporal {
            let s = spatial.weight.shape();
            let w = t.weight.shape();
            if t.out_channels() != spatial.out_channels()
                || t.stride != spatial.stride
                || s[1] != w[1]
                || s[2] != w[3]
                || s[3] != w[4]
            {
                return Err(Error::config(format!(
                    "mixed block branches disagree: 2D kernel {s:?} stride {}, 3D kernel {w:?} stride {}",
                    spatial.stride, t.stride
                )));
            }
        }
        Ok(MixedBlock { spatial, temporal })
    }

    /// Sum of the 3D and 2D branch outputs.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y2 = self.spatial.forward(x)?;
        match &self.temporal {
            Some(t) => t.forward(x)?.add(&y2),
            None => Ok(y2),
        }
    }
}

impl Module for MixedBlock {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.spatial.params();
        if let Some(t) = &self.temporal {
            p.extend(t.params());
        }
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.spatial.params_mut();
        if let Some(t) = &mut self.temporal {
            p.extend(t.params_mut());
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check, random_tensor, weighted_sum, DEFAULT_STEP, DEFAULT_TOLERANCE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation of the definition, one output element at a time.
    fn naive_conv(
        x: &[f64],
        xs: [usize; 5],
        w: &[f64],
        ws: [usize; 5],
        b: &[f64],
        stride: usize,
    ) -> (Vec<f64>, [usize; 5]) {
        let [bn, tn, cn, hn, wn] = xs;
        let [kn, _, ktn, khn, kwn] = ws;
        let (ho, wo) = ((hn - 1) / stride + 1, (wn - 1) / stride + 1);
        let mut out = Vec::new();
        for bi in 0..bn {
            for t in 0..tn {
                for k in 0..kn {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut s = b[k];
                            for c in 0..cn {
                                for dt in 0..ktn {
                                    for dy in 0..khn {
                                        for dx in 0..kwn {
                                            let ti = t as isize + dt as isize - (ktn / 2) as isize;
                                            let iy = (oy * stride) as isize + dy as isize - (khn / 2) as isize;
                                            let ix = (ox * stride) as isize + dx as isize - (kwn / 2) as isize;
                                            if ti < 0 || iy < 0 || ix < 0 || ti >= tn as isize || iy >= hn as isize || ix >= wn as isize {
                                                continue;
                                            }
                                            let xv = x[(((bi * tn + ti as usize) * cn + c) * hn + iy as usize) * wn + ix as usize];
                                            let wv = w[(((k * cn + c) * ktn + dt) * khn + dy) * kwn + dx];
                                            s += xv * wv;
                                        }
                                    }
                                }
                            }
                            out.push(s);
                        }
                    }
                }
            }
        }
        (out, [bn, tn, kn, ho, wo])
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_tensor(&mut rng, &[1, 2, 1, 4, 4], 1.0);
        let w = Tensor::new(&[1, 1, 1, 1], vec![1.0]);
        let y = conv_video(&x, &w, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn ones_kernel_interior_is_nine() {
        let x = Tensor::full(&[1, 1, 1, 5, 5], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv_video(&x, &w, &Tensor::zeros(&[1]), 1).unwrap();
        for yy in 1..4 {
            for xx in 1..4 {
                assert_eq!(y.data()[yy * 5 + xx], 9.0);
            }
        }
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn conv2d_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for stride in [1, 2] {
            let x = random_tensor(&mut rng, &[1, 2, 3, 5, 5], 1.0);
            let w = random_tensor(&mut rng, &[4, 3, 3, 3], 1.0);
            let b = random_tensor(&mut rng, &[4], 1.0);
            let y = conv_video(&x, &w, &b, stride).unwrap();
            let (want, shape) = naive_conv(x.data(), [1, 2, 3, 5, 5], w.data(), [4, 3, 1, 3, 3], b.data(), stride);
            assert_eq!(y.shape(), shape);
            for (a, e) in y.data().iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv3d_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for stride in [1, 2] {
            let x = random_tensor(&mut rng, &[2, 4, 2, 5, 6], 1.0);
            let w = random_tensor(&mut rng, &[3, 2, 3, 3, 3], 1.0);
            let b = random_tensor(&mut rng, &[3], 1.0);
            let y = conv_video(&x, &w, &b, stride).unwrap();
            let (want, shape) = naive_conv(x.data(), [2, 4, 2, 5, 6], w.data(), [3, 2, 3, 3, 3], b.data(), stride);
            assert_eq!(y.shape(), shape);
            assert_eq!(y.shape()[1], 4);
            for (a, e) in y.data().iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_temporal_extent_equals_conv2d_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, &[1, 3, 2, 6, 6], 1.0);
        let w2 = random_tensor(&mut rng, &[2, 2, 3, 3], 1.0);
        let w3 = Tensor::new(&[2, 2, 1, 3, 3], w2.data().to_vec());
        let b = random_tensor(&mut rng, &[2], 1.0);
        let a = conv_video(&x, &w2, &b, 2).unwrap();
        let c = conv_video(&x, &w3, &b, 2).unwrap();
        assert_eq!(a.data(), c.data());
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&mut rng, &[1, 3, 2, 4, 4], 1.0);
        let y = conv_video(&x, &Tensor::zeros(&[2, 2, 3, 3, 3]), &Tensor::zeros(&[2]), 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::zeros(&[1, 1, 3, 4, 4]);
        let w = Tensor::zeros(&[2, 2, 3, 3]);
        assert!(conv_video(&x, &w, &Tensor::zeros(&[2]), 1).is_err());
    }

    #[test]
    fn mixed_block_is_sum_of_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = Conv2d::new("s", 2, 3, 3, 2, &mut rng);
        let t = Conv3d::new("t", 2, 3, 3, 3, 2, &mut rng);
        let block = MixedBlock::new(s.clone(), Some(t.clone())).unwrap();
        let x = random_tensor(&mut rng, &[1, 4, 2, 6, 6], 1.0);
        let y = block.forward(&x).unwrap();
        let y2 = s.forward(&x).unwrap();
        let y3 = t.forward(&x).unwrap();
        for ((a, b), c) in y.data().iter().zip(y2.data()).zip(y3.data()) {
            assert!((a - (b + c)).abs() < 1e-12);
        }
        let mut zeroed = block.clone();
        zeroed.temporal.as_mut().unwrap().zero();
        assert_eq!(zeroed.forward(&x).unwrap().data(), y2.data());
        let mut no_spatial = block.clone();
        let n = no_spatial.spatial.weight.data().len();
        no_spatial.spatial.weight.set_data(vec![0.0; n]);
        assert_eq!(no_spatial.forward(&x).unwrap().data(), y3.data());
    }

    #[test]
    fn mismatched_branches_fail_at_build() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = Conv2d::new("s", 2, 3, 3, 2, &mut rng);
        let t = Conv3d::new("t", 2, 4, 3, 3, 2, &mut rng);
        assert!(MixedBlock::new(s.clone(), Some(t)).is_err());
        let t = Conv3d::new("t", 2, 3, 3, 3, 1, &mut rng);
        assert!(MixedBlock::new(s, Some(t)).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (wshape, stride) in [(vec![2, 2, 3, 3], 1), (vec![2, 2, 3, 3, 3], 2)] {
            let x = random_tensor(&mut rng, &[1, 3, 2, 5, 5], 1.0);
            let w = random_tensor(&mut rng, &wshape, 1.0);
            let b = random_tensor(&mut rng, &[2], 1.0);
            let r = check(
                "conv",
                &[x, w, b],
                |p| weighted_sum(&conv_video(&p[0], &p[1], &p[2], stride)?, 9),
                DEFAULT_STEP,
                DEFAULT_TOLERANCE,
            )
            .unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }
}
