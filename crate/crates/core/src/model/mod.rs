//! The three-level network: a frame-level convolution stack, gloss-level
//! framing with an LSTM and a gloss classifier, and a sentence-level BiLSTM
//! with a CTC projection. Ablation switches remove the 3D branches, the
//! framing, or the gloss LSTM; word-level mode keeps only the first two
//! levels with a word classifier.

mod config;
mod framing;

pub use config::{ModelConfig, MODEL_KEYS};
pub use framing::{framing, meta_frame_count, meta_frame_counts, pack_windows, unpack_windows};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::VideoBatch;
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, BatchNorm, BiLstm, Conv2d, Conv3d, Linear, Lstm, MixedBlock, Module, Param};
use crate::tensor::Tensor;

/// Per-meta-frame features `M` and the valid count of meta frames per sample.
#[derive(Debug, Clone)]
pub struct MetaFrameFeatures {
    /// `[B, F_max, H]`, zero beyond each count.
    pub m: Tensor,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[B, F_max, N + 1]` sentence-level logits.
    pub logits_sl: Tensor,
    /// `[B, F_max, N + 1]` gloss-level logits; absent without framing.
    pub logits_gl: Option<Tensor>,
    pub features: MetaFrameFeatures,
}

impl ForwardOutput {
    /// Valid output steps per sample.
    pub fn lengths(&self) -> &[usize] {
        &self.features.counts
    }
}

#[derive(Debug, Clone)]
struct FrameBlock {
    conv: MixedBlock,
    bn: BatchNorm,
}

#[derive(Debug, Clone)]
pub struct SfNet {
    config: ModelConfig,
    stem: Conv2d,
    stem_bn: BatchNorm,
    blocks: Vec<FrameBlock>,
    frame_bn: BatchNorm,
    gloss_lstm: Option<Lstm>,
    gloss_head: Option<Linear>,
    sentence_bn: Option<BatchNorm>,
    bilstm: Option<BiLstm>,
    sentence_head: Option<Linear>,
    word_head: Option<Linear>,
}

/// Each layer draws from its own stream, so adding or removing a layer never
/// changes the initial weights of the others.
fn layer_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

impl SfNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let seed = c.init_seed;
        let bn = |name: &str, ch| BatchNorm::new(name, ch, c.bn_eps, c.bn_momentum);
        let stem = Conv2d::new(
            "frame.stem.conv",
            c.input_channels,
            c.stem_channels,
            c.stem_kernel,
            c.stem_stride,
            &mut layer_rng(seed, "frame.stem.conv"),
        );
        let mut blocks = Vec::new();
        let mut ch = c.stem_channels;
        for (i, (&out, &stride)) in c.block_channels.iter().zip(&c.block_strides).enumerate() {
            let n2 = format!("frame.block{}.conv2d", i + 1);
            let n3 = format!("frame.block{}.conv3d", i + 1);
            let spatial = Conv2d::new(&n2, ch, out, c.block_kernel, stride, &mut layer_rng(seed, &n2));
            let temporal = c.has_3d(i).then(|| {
                Conv3d::new(&n3, ch, out, c.temporal_kernel, c.block_kernel, stride, &mut layer_rng(seed, &n3))
            });
            blocks.push(FrameBlock {
                conv: MixedBlock::new(spatial, temporal)?,
                bn: bn(&format!("frame.block{}.bn", i + 1), out),
            });
            ch = out;
        }
        let k = c.feature_dim();
        let gloss_lstm = (!c.no_framing && !c.no_gloss_lstm)
            .then(|| Lstm::new("gloss.lstm", k, c.gloss_hidden, &mut layer_rng(seed, "gloss.lstm")));
        let meta_dim = if c.no_framing {
            k
        } else if c.no_gloss_lstm {
            c.window * k
        } else {
            c.gloss_hidden
        };
        let sentence = !c.word_level_mode;
        let gloss_head = (sentence && !c.no_framing)
            .then(|| Linear::new("gloss.head", meta_dim, c.alphabet_size(), &mut layer_rng(seed, "gloss.head")));
        let sentence_bn = sentence.then(|| bn("sentence.seq_bn", meta_dim));
        let bilstm = sentence
            .then(|| BiLstm::new("sentence.bilstm", meta_dim, c.sentence_hidden, &mut layer_rng(seed, "sentence.bilstm")));
        let sentence_head = sentence.then(|| {
            Linear::new("sentence.head", 2 * c.sentence_hidden, c.alphabet_size(), &mut layer_rng(seed, "sentence.head"))
        });
        let word_head = c
            .word_level_mode
            .then(|| Linear::new("word.head", meta_dim, c.word_classes, &mut layer_rng(seed, "word.head")));
        Ok(SfNet {
            stem_bn: bn("frame.stem.bn", c.stem_channels),
            frame_bn: bn("frame.seq_bn", k),
            config,
            stem,
            blocks,
            gloss_lstm,
            gloss_head,
            sentence_bn,
            bilstm,
            sentence_head,
            word_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Zeroes every 3D branch in place.
    pub fn zero_3d(&mut self) {
        for b in &mut self.blocks {
            if let Some(t) = &mut b.conv.temporal {
                t.zero();
            }
        }
    }

    /// Frame-level stack on `[B, T, C, H, W]`; returns the pooled `[B, T, K]`
    /// features (after sequence normalization) and each block's activation map.
    pub fn frame_features(&mut self, frames: &Tensor, lengths: &[usize], train: bool) -> Result<(Tensor, Vec<Tensor>)> {
        let shape = frames.shape();
        if shape.len() != 5 || shape[2] != self.config.input_channels {
            return Err(Error::shape(
                "frame_features",
                format!("expected [B, T, {}, H, W] frames, got {shape:?}", self.config.input_channels),
            ));
        }
        let mut maps = Vec::with_capacity(self.blocks.len() + 1);
        let mut x = self.stem.forward(frames)?;
        x = self.stem_bn.forward_frames(&x, lengths, train)?.relu();
        maps.push(x.clone());
        for b in &mut self.blocks {
            x = b.conv.forward(&x)?;
            x = b.bn.forward_frames(&x, lengths, train)?.relu();
            maps.push(x.clone());
        }
        let pooled = global_avg_pool(&x)?;
        let pooled = self.frame_bn.forward_seq(&pooled, lengths, train)?;
        Ok((pooled, maps))
    }

    /// Meta-frame features from pooled `[B, T, K]` frame features.
    fn gloss_level(&self, pooled: &Tensor, lengths: &[usize], ids: Option<&[String]>) -> Result<MetaFrameFeatures> {
        let c = &self.config;
        if c.no_framing {
            return Ok(MetaFrameFeatures { m: pooled.clone(), counts: lengths.to_vec() });
        }
        let counts = meta_frame_counts(lengths, c.window, c.stride, ids)?;
        let packed = pack_windows(pooled, c.window, c.stride, &counts)?;
        let rows = match &self.gloss_lstm {
            Some(lstm) => {
                let p = packed.shape()[0];
                lstm.forward(&packed, &vec![c.window; p], None)?.last_hidden
            }
            None => {
                let s = packed.shape();
                packed.reshape(&[s[0], s[1] * s[2]])?
            }
        };
        Ok(MetaFrameFeatures { m: unpack_windows(&rows, &counts)?, counts })
    }

    /// Full sentence-level forward pass.
    pub fn forward(&mut self, frames: &Tensor, lengths: &[usize], ids: Option<&[String]>, train: bool) -> Result<ForwardOutput> {
        if self.config.word_level_mode {
            return Err(Error::config("a word-level model has no sentence level"));
        }
        let (pooled, _) = self.frame_features(frames, lengths, train)?;
        let features = self.gloss_level(&pooled, lengths, ids)?;
        let logits_gl = self.gloss_head.as_ref().map(|h| h.forward(&features.m)).transpose()?;
        let normed = self.sentence_bn.as_mut().unwrap().forward_seq(&features.m, &features.counts, train)?;
        let hidden = self.bilstm.as_ref().unwrap().forward(&normed, &features.counts)?;
        let logits_sl = self.sentence_head.as_ref().unwrap().forward(&hidden)?;
        Ok(ForwardOutput { logits_sl, logits_gl, features })
    }

    pub fn forward_full(&mut self, batch: &VideoBatch, train: bool) -> Result<ForwardOutput> {
        self.forward(&batch.frames, &batch.lengths, Some(&batch.ids), train)
    }

    /// Word-level classification of clips that frame into exactly one meta
    /// frame; returns `[B, word_classes]` logits.
    pub fn forward_word_level(&mut self, frames: &Tensor, lengths: &[usize], ids: Option<&[String]>, train: bool) -> Result<Tensor> {
        let Some(head) = self.word_head.clone() else {
            return Err(Error::config("forward_word_level needs word_level_mode"));
        };
        let (pooled, _) = self.frame_features(frames, lengths, train)?;
        let features = self.gloss_level(&pooled, lengths, ids)?;
        if let Some((b, &f)) = features.counts.iter().enumerate().find(|(_, &f)| f != 1) {
            return Err(Error::Sample {
                sample: ids.map_or_else(|| format!("#{b}"), |ids| ids[b].clone()),
                detail: format!("word-level clip frames into {f} meta frames, expected 1"),
            });
        }
        let s = features.m.shape();
        head.forward(&features.m.reshape(&[s[0], s[2]])?)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params().into_iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params_mut().into_iter().find(|p| p.name == name)
    }

    pub fn num_trainable(&self) -> usize {
        self.params().iter().filter(|p| p.is_trainable()).map(|p| p.data().len()).sum()
    }
}

impl Module for SfNet {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.stem.params();
        p.extend(self.stem_bn.params());
        for b in &self.blocks {
            p.extend(b.conv.params());
            p.extend(b.bn.params());
        }
        p.extend(self.frame_bn.params());
        p.extend(self.gloss_lstm.iter().flat_map(Module::params));
        p.extend(self.gloss_head.iter().flat_map(Module::params));
        p.extend(self.sentence_bn.iter().flat_map(Module::params));
        p.extend(self.bilstm.iter().flat_map(Module::params));
        p.extend(self.sentence_head.iter().flat_map(Module::params));
        p.extend(self.word_head.iter().flat_map(Module::params));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.stem.params_mut();
        p.extend(self.stem_bn.params_mut());
        for b in &mut self.blocks {
            p.extend(b.conv.params_mut());
            p.extend(b.bn.params_mut());
        }
        p.extend(self.frame_bn.params_mut());
        p.extend(self.gloss_lstm.iter_mut().flat_map(Module::params_mut));
        p.extend(self.gloss_head.iter_mut().flat_map(Module::params_mut));
        p.extend(self.sentence_bn.iter_mut().flat_map(Module::params_mut));
        p.extend(self.bilstm.iter_mut().flat_map(Module::params_mut));
        p.extend(self.sentence_head.iter_mut().flat_map(Module::params_mut));
        p.extend(self.word_head.iter_mut().flat_map(Module::params_mut));
        p
    }
}

/// Whether a parameter belongs to the frame or gloss level shared between
/// word-level and sentence-level models.
pub fn is_transferable(name: &str) -> bool {
    name.starts_with("frame.") || name.starts_with("gloss.lstm.")
}

/// Copies frame-level and gloss-LSTM tensors (including normalization
/// statistics) from `source` into `target`; other layers keep their values.
/// Returns the copied names. Any missing or differently shaped tensor is an
/// error listing all offenders, and nothing is copied.
pub fn transfer_parameters(source: &SfNet, target: &mut SfNet) -> Result<Vec<String>> {
    let mut problems = Vec::new();
    let mut copies = Vec::new();
    for p in source.params().into_iter().filter(|p| is_transferable(&p.name)) {
        match target.param(&p.name) {
            None => problems.push(format!("{} missing in target", p.name)),
            Some(t) if t.shape() != p.shape() => {
                problems.push(format!("{} source {:?} target {:?}", p.name, p.shape(), t.shape()))
            }
            Some(_) => copies.push((p.name.clone(), p.data().to_vec())),
        }
    }
    for t in target.params().into_iter().filter(|p| is_transferable(&p.name)) {
        if source.param(&t.name).is_none() {
            problems.push(format!("{} missing in source", t.name));
        }
    }
    if !problems.is_empty() {
        return Err(Error::config(format!("parameter transfer shape mismatch: {}", problems.join("; "))));
    }
    for (name, data) in &copies {
        target.param_mut(name).unwrap().set_data(data.clone());
    }
    Ok(copies.into_iter().map(|(n, _)| n).collect())
}

#[cfg(test)]
mod tests;
