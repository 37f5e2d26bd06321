//! Deterministic synthetic continuous-gesture corpus.
//!
//! Each gloss is a moving-shape motif: one of five shapes travelling in one of
//! four directions, with a speed variant once the vocabulary exceeds twenty.
//! Glosses sharing a shape differ only in motion, so single frames are
//! ambiguous and temporal modelling is required. Signer styles vary colors,
//! scale and vertical placement; the last `test_styles` styles only appear in
//! the test split.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FrameBlob, GlossVocabulary, Manifest, ManifestEntry};
use crate::error::{Error, Result};

const SHAPES: usize = 5;
const DIRECTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub vocab_size: usize,
    pub sentences: usize,
    /// Inclusive range of glosses per sentence.
    pub sentence_len: (usize, usize),
    /// Inclusive range of frames per gloss clip.
    pub frames_per_gloss: (usize, usize),
    pub image_size: usize,
    pub channels: usize,
    pub styles: usize,
    pub test_styles: usize,
    pub transition_frames: usize,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            vocab_size: 20,
            sentences: 200,
            sentence_len: (2, 5),
            frames_per_gloss: (12, 30),
            image_size: 64,
            channels: 3,
            styles: 5,
            test_styles: 1,
            transition_frames: 3,
            fps: 25.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("synthetic corpus: {m}")));
        if self.vocab_size < 2 {
            return bad("vocabulary size must be at least 2");
        }
        if self.sentences == 0 {
            return bad("at least one sentence is required");
        }
        let (lo, hi) = self.sentence_len;
        if lo == 0 || lo > hi {
            return bad("sentence length range must satisfy 1 <= min <= max");
        }
        let (lo, hi) = self.frames_per_gloss;
        if lo < 2 || lo > hi {
            return bad("frames-per-gloss range must satisfy 2 <= min <= max");
        }
        if self.image_size < 8 {
            return bad("image size must be at least 8");
        }
        if self.channels != 1 && self.channels != 3 {
            return bad("channels must be 1 or 3");
        }
        if self.styles < 2 || self.test_styles == 0 || self.test_styles >= self.styles {
            return bad("need at least one train style and one held-out style");
        }
        if self.fps <= 0.0 {
            return bad("fps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub style: usize,
    pub glosses: Vec<usize>,
    pub blob: FrameBlob,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub spec: SynthSpec,
    pub vocab: GlossVocabulary,
    pub train: Vec<SynthSample>,
    pub test: Vec<SynthSample>,
}

#[derive(Debug, Clone, Copy)]
struct Style {
    background: [f64; 3],
    foreground: [f64; 3],
    scale: f64,
    shift_y: f64,
}

#[derive(Debug, Clone, Copy)]
struct Motif {
    shape: usize,
    direction: usize,
    travel: f64,
}

fn motif(id: usize) -> Motif {
    let i = id - 1;
    let variant = i / (SHAPES * DIRECTIONS);
    Motif {
        shape: i % SHAPES,
        direction: (i / SHAPES) % DIRECTIONS,
        // faster variants cover more ground in the same time
        travel: (0.5 + 0.15 * variant as f64).min(0.8),
    }
}

fn inside(shape: usize, dx: f64, dy: f64, r: f64) -> bool {
    let d = (dx * dx + dy * dy).sqrt();
    match shape {
        0 => d <= r,
        1 => dx.abs().max(dy.abs()) <= 0.8 * r,
        // upward triangle
        2 => dy <= 0.8 * r && dy >= -r && dx.abs() <= (dy + r) * 0.6,
        3 => d <= r && d >= 0.55 * r,
        _ => (dx.abs() <= 0.3 * r && dy.abs() <= r) || (dy.abs() <= 0.3 * r && dx.abs() <= r),
    }
}

fn render_clip(m: Motif, style: &Style, frames: usize, size: usize, channels: usize, jitter: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<u8> {
    let s = size as f64;
    let r = 0.2 * s * style.scale;
    let mut out = Vec::with_capacity(frames * channels * size * size);
    for f in 0..frames {
        let p = f as f64 / (frames - 1) as f64;
        let along = 0.5 - m.travel / 2.0 + m.travel * p;
        let (u, v) = match m.direction {
            0 => (along, 0.5),
            1 => (1.0 - along, 0.5),
            2 => (0.5, along),
            _ => (0.5, 1.0 - along),
        };
        let cx = (u + jitter.0) * s;
        let cy = (v + jitter.1 + style.shift_y) * s;
        for c in 0..channels {
            for y in 0..size {
                for x in 0..size {
                    let on = inside(m.shape, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r);
                    let base = if on { style.foreground[c] } else { style.background[c] };
                    let noise: f64 = rng.gen_range(-6.0..6.0);
                    out.push((base + noise).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    out
}

/// Generates the corpus. Identical specs give identical corpora.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let styles: Vec<Style> = (0..spec.styles)
        .map(|_| {
            let mut bg = [0.0; 3];
            let mut fg = [0.0; 3];
            for c in 0..3 {
                bg[c] = rng.gen_range(20.0..80.0);
                fg[c] = rng.gen_range(170.0..250.0);
            }
            Style {
                background: bg,
                foreground: fg,
                scale: rng.gen_range(0.85..1.15),
                shift_y: rng.gen_range(-0.05..0.05),
            }
        })
        .collect();
    let glosses: Vec<String> = (1..=spec.vocab_size)
        .map(|id| {
            let m = motif(id);
            let shape = ["disc", "square", "triangle", "ring", "cross"][m.shape];
            let dir = ["right", "left", "down", "up"][m.direction];
            let variant = (id - 1) / (SHAPES * DIRECTIONS);
            if variant == 0 {
                format!("{shape}-{dir}")
            } else {
                format!("{shape}-{dir}-{variant}")
            }
        })
        .collect();
    let vocab = GlossVocabulary::new(glosses)?;
    let (train_styles, size, ch) = (spec.styles - spec.test_styles, spec.image_size, spec.channels);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for n in 0..spec.sentences {
        let style = n % spec.styles;
        let len = rng.gen_range(spec.sentence_len.0..=spec.sentence_len.1);
        let mut ids: Vec<usize> = Vec::with_capacity(len);
        while ids.len() < len {
            let g = rng.gen_range(1..=spec.vocab_size);
            // no immediate repeats
            if ids.last() != Some(&g) {
                ids.push(g);
            }
        }
        let jitter = (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
        let frame_len = ch * size * size;
        let mut pixels: Vec<u8> = Vec::new();
        for (k, &g) in ids.iter().enumerate() {
            let frames = rng.gen_range(spec.frames_per_gloss.0..=spec.frames_per_gloss.1);
            let clip = render_clip(motif(g), &styles[style], frames, size, ch, jitter, &mut rng);
            if k > 0 {
                let prev = pixels[pixels.len() - frame_len..].to_vec();
                let next = &clip[..frame_len];
                for t in 1..=spec.transition_frames {
                    let a = t as f64 / (spec.transition_frames + 1) as f64;
                    pixels.extend(prev.iter().zip(next).map(|(&p, &q)| ((1.0 - a) * p as f64 + a * q as f64).round() as u8));
                }
            }
            pixels.extend_from_slice(&clip);
        }
        let frames = pixels.len() / frame_len;
        let sample = SynthSample {
            id: format!("s{n:04}"),
            style,
            glosses: ids,
            blob: FrameBlob::new(frames, ch, size, size, pixels)?,
        };
        if style < train_styles {
            train.push(sample);
        } else {
            test.push(sample);
        }
    }
    Ok(SynthCorpus { spec: spec.clone(), vocab, train, test })
}

impl SynthCorpus {
    /// Writes `vocab.txt`, `train.tsv`, `test.tsv` and `blobs/<id>.blob`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let blobs = dir.join("blobs");
        std::fs::create_dir_all(&blobs).map_err(|e| Error::io(&blobs, e))?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        for (name, split) in [("train.tsv", &self.train), ("test.tsv", &self.test)] {
            let mut manifest = Manifest { entries: Vec::new(), root: dir.to_path_buf() };
            for s in split {
                let rel = Path::new("blobs").join(format!("{}.blob", s.id));
                s.blob.write(&dir.join(&rel))?;
                manifest.entries.push(ManifestEntry {
                    id: s.id.clone(),
                    blob_path: rel,
                    frames: s.blob.frames,
                    fps: self.spec.fps,
                    glosses: s.glosses.clone(),
                });
            }
            manifest.save(&dir.join(name))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            vocab_size: 4,
            sentences: 6,
            sentence_len: (1, 3),
            frames_per_gloss: (4, 6),
            image_size: 16,
            styles: 3,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(synth_generate(&small()).unwrap(), synth_generate(&small()).unwrap());
        let mut other = small();
        other.seed += 1;
        assert_ne!(synth_generate(&small()).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn distinct_motifs_differ() {
        let spec = small();
        let style = Style { background: [40.0; 3], foreground: [200.0; 3], scale: 1.0, shift_y: 0.0 };
        for (a, b) in [(1, 2), (1, 6), (2, 7)] {
            let mut r1 = ChaCha8Rng::seed_from_u64(0);
            let mut r2 = ChaCha8Rng::seed_from_u64(0);
            let ca = render_clip(motif(a), &style, 5, spec.image_size, 3, (0.0, 0.0), &mut r1);
            let cb = render_clip(motif(b), &style, 5, spec.image_size, 3, (0.0, 0.0), &mut r2);
            assert_ne!(ca, cb, "glosses {a} and {b}");
        }
    }

    #[test]
    fn style_split_is_disjoint() {
        let c = synth_generate(&small()).unwrap();
        assert!(c.train.iter().all(|s| s.style < 2));
        assert!(c.test.iter().all(|s| s.style == 2));
        assert_eq!(c.train.len() + c.test.len(), 6);
    }

    #[test]
    fn frame_counts_include_transitions() {
        let c = synth_generate(&small()).unwrap();
        for s in c.train.iter().chain(&c.test) {
            let k = s.glosses.len();
            assert!(s.blob.frames >= 4 * k + 3 * (k - 1) && s.blob.frames <= 6 * k + 3 * (k - 1));
            assert!(s.glosses.windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn rejects_tiny_vocabulary() {
        let spec = SynthSpec { vocab_size: 1, ..small() };
        assert!(synth_generate(&spec).is_err());
    }
}
