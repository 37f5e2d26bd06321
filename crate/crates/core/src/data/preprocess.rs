//! Crop and resize frame blobs into model input.

use rand::Rng;

use super::FrameBlob;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetKind {
    /// Central crop, then resize to the model size.
    #[default]
    Csl,
    /// Resize to `size * 8 / 7`, then crop `size`: random in train, central in eval.
    Rwth,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csl" => Ok(DatasetKind::Csl),
            "rwth" => Ok(DatasetKind::Rwth),
            _ => Err(Error::config(format!("unknown dataset kind {s:?} (csl or rwth)"))),
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetKind::Csl => "csl",
            DatasetKind::Rwth => "rwth",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub kind: DatasetKind,
    /// Output side length.
    pub size: usize,
    /// Side of the CSL central crop as a fraction of the shorter image side.
    pub crop_fraction: f64,
    /// Keep every `decimation`-th frame.
    pub decimation: usize,
    /// Resample to exactly this many frames (uniform nearest indices); 0 keeps
    /// the decimated length.
    pub fixed_frames: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { kind: DatasetKind::Csl, size: 224, crop_fraction: 1.0, decimation: 1, fixed_frames: 0 }
    }
}

/// Preprocessed frames as `[T, C, size, size]` values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub frames: usize,
    pub channels: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

/// Resamples one plane. Downscaling averages the covered source area and
/// upscaling is bilinear; equal sizes copy exactly.
pub fn resize_plane(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let axis = |n: usize, on: usize| -> Vec<Vec<(usize, f64)>> {
        (0..on)
            .map(|o| {
                if on <= n {
                    let scale = n as f64 / on as f64;
                    let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
                    let mut taps = Vec::new();
                    let mut i = lo.floor() as usize;
                    while (i as f64) < hi && i < n {
                        let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)) / scale;
                        if overlap > 0.0 {
                            taps.push((i, overlap));
                        }
                        i += 1;
                    }
                    taps
                } else {
                    let pos = ((o as f64 + 0.5) * n as f64 / on as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                    let i0 = pos.floor() as usize;
                    let i1 = (i0 + 1).min(n - 1);
                    let a = pos - i0 as f64;
                    if i1 == i0 { vec![(i0, 1.0)] } else { vec![(i0, 1.0 - a), (i1, a)] }
                }
            })
            .collect()
    };
    let (ry, rx) = (axis(h, oh), axis(w, ow));
    let mut out = Vec::with_capacity(oh * ow);
    for ty in &ry {
        for tx in &rx {
            let mut acc = 0.0;
            for &(y, wy) in ty {
                for &(x, wx) in tx {
                    acc += wy * wx * src[y * w + x];
                }
            }
            out.push(acc);
        }
    }
    out
}

fn crop_plane(src: &[f64], w: usize, top: usize, left: usize, ch: usize, cw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(ch * cw);
    for y in top..top + ch {
        out.extend_from_slice(&src[y * w + left..y * w + left + cw]);
    }
    out
}

/// Source frame indices after decimation and optional fixed-length resampling.
pub fn kept_frames(frames: usize, cfg: &PreprocessConfig) -> Vec<usize> {
    let decimated: Vec<usize> = (0..frames).step_by(cfg.decimation.max(1)).collect();
    if cfg.fixed_frames == 0 {
        return decimated;
    }
    let n = decimated.len();
    (0..cfg.fixed_frames).map(|i| decimated[i * n / cfg.fixed_frames]).collect()
}

/// Draws the train-mode crop offset for an `rwth` resize of side `big`.
pub fn random_offset(big: usize, size: usize, rng: &mut impl Rng) -> (usize, usize) {
    let slack = big - size;
    (rng.gen_range(0..=slack), rng.gen_range(0..=slack))
}

/// `train` selects random cropping for the `rwth` kind; `rng` is only
/// consulted in that case.
pub fn preprocess(blob: &FrameBlob, cfg: &PreprocessConfig, train: bool, rng: &mut impl Rng) -> Result<Frames> {
    if cfg.size == 0 || cfg.decimation == 0 || !(cfg.crop_fraction > 0.0 && cfg.crop_fraction <= 1.0) {
        return Err(Error::config("preprocess needs size >= 1, decimation >= 1, crop fraction in (0, 1]"));
    }
    let (h, w, c) = (blob.height, blob.width, blob.channels);
    if h == 0 || w == 0 {
        return Err(Error::format("frame blob", "zero spatial extent"));
    }
    let s = cfg.size;
    let big = (s * 8 + 3) / 7;
    let offset = match cfg.kind {
        DatasetKind::Rwth if train => random_offset(big, s, rng),
        DatasetKind::Rwth => ((big - s) / 2, (big - s) / 2),
        DatasetKind::Csl => (0, 0),
    };
    let kept = kept_frames(blob.frames, cfg);
    let mut data = Vec::with_capacity(kept.len() * c * s * s);
    let mut plane = vec![0.0; h * w];
    for &t in &kept {
        let frame = blob.frame(t);
        for ci in 0..c {
            for (p, &v) in plane.iter_mut().zip(&frame[ci * h * w..(ci + 1) * h * w]) {
                *p = v as f64 / 255.0;
            }
            let out = match cfg.kind {
                DatasetKind::Csl => {
                    let side = ((h.min(w) as f64 * cfg.crop_fraction).round() as usize).max(1);
                    let (top, left) = ((h - side) / 2, (w - side) / 2);
                    let cropped = crop_plane(&plane, w, top, left, side, side);
                    resize_plane(&cropped, side, side, s, s)
                }
                DatasetKind::Rwth => {
                    let resized = resize_plane(&plane, h, w, big, big);
                    crop_plane(&resized, big, offset.0, offset.1, s, s)
                }
            };
            data.extend(out);
        }
    }
    Ok(Frames { frames: kept.len(), channels: c, size: s, data })
}
