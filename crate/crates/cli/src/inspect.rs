//! Channel-mean activation maps of one sample, written as binary PGM strips
//! (one tile per frame, left to right).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sfnet::data::{Dataset, GlossVocabulary, Manifest};
use sfnet::tensor::{no_grad, Tensor};
use sfnet::train::{Checkpoint, TrainConfig};

use crate::{CliError, InspectArgs};

/// Channel mean of `[1, T, K, h, w]` as `T` planes of `h * w`.
fn channel_mean(map: &Tensor) -> (usize, usize, usize, Vec<f64>) {
    let s = map.shape();
    let (t, k, h, w) = (s[1], s[2], s[3], s[4]);
    let plane = h * w;
    let mut out = vec![0.0; t * plane];
    for (ti, dst) in out.chunks_mut(plane).enumerate() {
        for c in 0..k {
            let src = &map.data()[(ti * k + c) * plane..][..plane];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v / k as f64;
            }
        }
    }
    (t, h, w, out)
}

/// Tiles `t` planes horizontally and maps `[lo, hi]` to `[0, 255]`; a constant
/// map becomes mid-grey.
pub fn pgm_strip(t: usize, h: usize, w: usize, planes: &[f64]) -> Vec<u8> {
    let lo = planes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = planes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = t * w;
    let mut out = format!("P5\n{width} {h}\n255\n").into_bytes();
    for y in 0..h {
        for ti in 0..t {
            for x in 0..w {
                let v = planes[ti * h * w + y * w + x];
                let g = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() } else { 128.0 };
                out.push(g as u8);
            }
        }
    }
    out
}

pub fn inspect(a: &InspectArgs) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut model = ckpt.restore_model()?;
    let vocab = GlossVocabulary::parse(&ckpt.vocab)?;
    let mut cfg = TrainConfig::default();
    cfg.apply(&ckpt.config)?;
    let manifest = Manifest::load(&a.manifest)?;
    manifest.validate(vocab.len())?;
    let data = Dataset::from_manifest(&manifest, &vocab, cfg.preprocess(model.config()))?;
    let Some(index) = data.index_of(&a.sample) else {
        return Err(CliError::Data(format!("sample {} not found in {}", a.sample, a.manifest.display())));
    };

    let _g = no_grad();
    let batch = data.batch(&[index], 1, false, 0, 0)?;
    let frames = if a.zero_input { batch.frames.zeros_like() } else { batch.frames.clone() };
    let (_, maps) = model.frame_features(&frames, &batch.lengths, false)?;

    fs::create_dir_all(&a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;
    let mut summary = String::new();
    writeln!(summary, "sample\t{}", a.sample).unwrap();
    writeln!(summary, "zero_input\t{}", u8::from(a.zero_input)).unwrap();
    writeln!(summary, "map\tframes\tchannels\theight\twidth\tmean\tstd\tmin\tmax").unwrap();
    for (i, map) in maps.iter().enumerate() {
        let name = if i == 0 { "stem".to_string() } else { format!("block{i}") };
        let (t, h, w, planes) = channel_mean(map);
        write_file(&a.out.join(format!("{name}.pgm")), &pgm_strip(t, h, w, &planes))?;
        let n = planes.len() as f64;
        let mean = planes.iter().sum::<f64>() / n;
        let std = (planes.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let lo = planes.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = planes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        writeln!(summary, "{name}\t{t}\t{}\t{h}\t{w}\t{mean:.6}\t{std:.6}\t{lo:.6}\t{hi:.6}", map.shape()[2]).unwrap();
    }
    write_file(&a.out.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
