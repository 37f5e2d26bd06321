use std::cell::RefCell;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{preprocess, DatasetKind, FrameBlob, Frames, GlossVocabulary, Manifest, PreprocessConfig, SynthSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub id: String,
    pub blob: FrameBlob,
    pub glosses: Vec<usize>,
}

impl From<&SynthSample> for RawSample {
    fn from(s: &SynthSample) -> Self {
        RawSample { id: s.id.clone(), blob: s.blob.clone(), glosses: s.glosses.clone() }
    }
}

/// A padded batch ready for the model.
#[derive(Debug, Clone)]
pub struct VideoBatch {
    /// `[B, T_max, C, H, W]`, zero beyond each sample's length.
    pub frames: Tensor,
    pub lengths: Vec<usize>,
    pub targets: Vec<Vec<usize>>,
    pub ids: Vec<String>,
}

impl VideoBatch {
    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.frames.shape()[1]
    }
}

/// Samples plus their preprocessing; deterministic preprocessing is cached.
pub struct Dataset {
    samples: Vec<RawSample>,
    config: PreprocessConfig,
    cache: RefCell<Vec<Option<Rc<Frames>>>>,
}

impl Dataset {
    pub fn new(samples: Vec<RawSample>, config: PreprocessConfig) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.blob.channels != samples[0].blob.channels) {
            return Err(Error::Sample { sample: s.id.clone(), detail: "channel count differs from the rest of the dataset".into() });
        }
        let n = samples.len();
        Ok(Dataset { samples, config, cache: RefCell::new(vec![None; n]) })
    }

    pub fn from_synth(samples: &[SynthSample], config: PreprocessConfig) -> Result<Self> {
        Self::new(samples.iter().map(RawSample::from).collect(), config)
    }

    /// Loads every blob named by the manifest and checks ids against `vocab`.
    pub fn from_manifest(manifest: &Manifest, vocab: &GlossVocabulary, config: PreprocessConfig) -> Result<Self> {
        manifest.validate(vocab.len())?;
        let mut samples = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let path = manifest.resolve(e);
            let blob = FrameBlob::read(&path).map_err(|err| Error::Sample { sample: e.id.clone(), detail: err.to_string() })?;
            if blob.frames != e.frames {
                return Err(Error::Sample {
                    sample: e.id.clone(),
                    detail: format!("manifest says {} frames, blob holds {}", e.frames, blob.frames),
                });
            }
            samples.push(RawSample { id: e.id.clone(), blob, glosses: e.glosses.clone() });
        }
        Self::new(samples, config)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[RawSample] {
        &self.samples
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.config
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.id == id)
    }

    /// Frame count after decimation.
    pub fn frames_of(&self, i: usize) -> usize {
        super::kept_frames(self.samples[i].blob.frames, &self.config).len()
    }

    /// Preprocessed frames of sample `i`. Random crops are seeded by
    /// `(seed, epoch, i)` so a training run replays exactly.
    pub fn prepared(&self, i: usize, train: bool, seed: u64, epoch: usize) -> Result<Rc<Frames>> {
        let random = train && self.config.kind == DatasetKind::Rwth;
        if !random {
            if let Some(f) = &self.cache.borrow()[i] {
                return Ok(f.clone());
            }
        }
        let s = &self.samples[i];
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64, i as u64));
        let frames = Rc::new(
            preprocess(&s.blob, &self.config, train, &mut rng)
                .map_err(|e| Error::Sample { sample: s.id.clone(), detail: e.to_string() })?,
        );
        if !random {
            self.cache.borrow_mut()[i] = Some(frames.clone());
        }
        Ok(frames)
    }

    /// Pads the given samples into one batch. Any sample shorter than
    /// `min_frames` is rejected by id.
    pub fn batch(&self, indices: &[usize], min_frames: usize, train: bool, seed: u64, epoch: usize) -> Result<VideoBatch> {
        if indices.is_empty() {
            return Err(Error::config("empty batch"));
        }
        let mut prepared = Vec::with_capacity(indices.len());
        for &i in indices {
            let f = self.prepared(i, train, seed, epoch)?;
            if f.frames < min_frames {
                return Err(Error::Sample {
                    sample: self.samples[i].id.clone(),
                    detail: format!("{} frames is shorter than the framing window {min_frames}", f.frames),
                });
            }
            prepared.push(f);
        }
        let (c, s) = (prepared[0].channels, prepared[0].size);
        let t_max = prepared.iter().map(|f| f.frames).max().unwrap();
        let per_sample = t_max * c * s * s;
        let mut data = vec![0.0; indices.len() * per_sample];
        for (b, f) in prepared.iter().enumerate() {
            data[b * per_sample..b * per_sample + f.data.len()].copy_from_slice(&f.data);
        }
        Ok(VideoBatch {
            frames: Tensor::new(&[indices.len(), t_max, c, s, s], data),
            lengths: prepared.iter().map(|f| f.frames).collect(),
            targets: indices.iter().map(|&i| self.samples[i].glosses.clone()).collect(),
            ids: indices.iter().map(|&i| self.samples[i].id.clone()).collect(),
        })
    }
}

fn mix(seed: u64, epoch: u64, i: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch.wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ i.wrapping_mul(0x1656_67B1_9E37_79F9)
}

/// Sample order for one epoch, chunked into batches. The permutation depends
/// only on `(seed, epoch)`.
pub fn epoch_batches(n: usize, batch_size: usize, shuffle: bool, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64, u64::MAX)));
    }
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
