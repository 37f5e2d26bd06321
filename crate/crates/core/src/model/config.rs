use crate::config::{join, KeyValues};
use crate::error::{Error, Result};

/// Architecture and ablation switches.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Side length of preprocessed frames.
    pub input_size: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub block_channels: Vec<usize>,
    pub block_strides: Vec<usize>,
    /// Per block: whether the 3D branch is present.
    pub block_3d: Vec<bool>,
    pub block_kernel: usize,
    pub temporal_kernel: usize,
    /// Framing window `L` in frames.
    pub window: usize,
    /// Framing stride `S` in frames.
    pub stride: usize,
    pub gloss_hidden: usize,
    /// Per direction.
    pub sentence_hidden: usize,
    /// Glosses `N`, excluding the blank.
    pub vocab_size: usize,
    /// Output classes of the word-level classifier.
    pub word_classes: usize,
    pub no_3d: bool,
    pub no_framing: bool,
    pub no_gloss_lstm: bool,
    pub word_level_mode: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 3,
            input_size: 224,
            stem_channels: 32,
            stem_kernel: 7,
            stem_stride: 2,
            block_channels: vec![32, 64, 128, 256],
            block_strides: vec![2, 2, 2, 2],
            block_3d: vec![true; 4],
            block_kernel: 3,
            temporal_kernel: 3,
            window: 12,
            stride: 3,
            gloss_hidden: 512,
            sentence_hidden: 256,
            vocab_size: 20,
            word_classes: 20,
            no_3d: false,
            no_framing: false,
            no_gloss_lstm: false,
            word_level_mode: false,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            init_seed: 1,
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "input_channels",
    "input_size",
    "stem_channels",
    "stem_kernel",
    "stem_stride",
    "block_channels",
    "block_strides",
    "block_3d",
    "block_kernel",
    "temporal_kernel",
    "window",
    "stride",
    "gloss_hidden",
    "sentence_hidden",
    "vocab_size",
    "word_classes",
    "no_3d",
    "no_framing",
    "no_gloss_lstm",
    "word_level_mode",
    "bn_eps",
    "bn_momentum",
    "init_seed",
];

impl ModelConfig {
    /// A small network that trains in minutes on one CPU core.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            input_channels: 3,
            input_size: 24,
            stem_channels: 8,
            stem_kernel: 3,
            stem_stride: 2,
            block_channels: vec![16, 24],
            block_strides: vec![2, 2],
            block_3d: vec![true, true],
            gloss_hidden: 32,
            sentence_hidden: 32,
            vocab_size,
            word_classes: vocab_size,
            ..Default::default()
        }
    }

    pub fn alphabet_size(&self) -> usize {
        self.vocab_size + 1
    }

    /// Width `K` of per-frame features.
    pub fn feature_dim(&self) -> usize {
        self.block_channels.last().copied().unwrap_or(self.stem_channels)
    }

    pub fn has_3d(&self, block: usize) -> bool {
        !self.no_3d && self.block_3d[block]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        let n = self.block_channels.len();
        if self.block_strides.len() != n || self.block_3d.len() != n {
            return bad(format!(
                "block lists differ in length: {} channels, {} strides, {} 3D flags",
                n,
                self.block_strides.len(),
                self.block_3d.len()
            ));
        }
        for (name, k) in [("stem_kernel", self.stem_kernel), ("block_kernel", self.block_kernel), ("temporal_kernel", self.temporal_kernel)] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        let positive = [
            ("input_channels", self.input_channels),
            ("input_size", self.input_size),
            ("stem_channels", self.stem_channels),
            ("stem_stride", self.stem_stride),
            ("window", self.window),
            ("stride", self.stride),
            ("gloss_hidden", self.gloss_hidden),
            ("sentence_hidden", self.sentence_hidden),
            ("vocab_size", self.vocab_size),
            ("word_classes", self.word_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.block_channels.contains(&0) || self.block_strides.contains(&0) {
            return bad("block channels and strides must be at least 1".into());
        }
        if self.word_level_mode && self.no_framing {
            return bad("word_level_mode needs framing".into());
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("input_channels", self.input_channels);
        kv.set("input_size", self.input_size);
        kv.set("stem_channels", self.stem_channels);
        kv.set("stem_kernel", self.stem_kernel);
        kv.set("stem_stride", self.stem_stride);
        kv.set("block_channels", join(&self.block_channels));
        kv.set("block_strides", join(&self.block_strides));
        kv.set("block_3d", join(&self.block_3d));
        kv.set("block_kernel", self.block_kernel);
        kv.set("temporal_kernel", self.temporal_kernel);
        kv.set("window", self.window);
        kv.set("stride", self.stride);
        kv.set("gloss_hidden", self.gloss_hidden);
        kv.set("sentence_hidden", self.sentence_hidden);
        kv.set("vocab_size", self.vocab_size);
        kv.set("word_classes", self.word_classes);
        kv.set("no_3d", self.no_3d);
        kv.set("no_framing", self.no_framing);
        kv.set("no_gloss_lstm", self.no_gloss_lstm);
        kv.set("word_level_mode", self.word_level_mode);
        kv.set("bn_eps", self.bn_eps);
        kv.set("bn_momentum", self.bn_momentum);
        kv.set("init_seed", self.init_seed);
        kv
    }

    /// Applies the model keys present in `kv` on top of `self`.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.read("input_channels", &mut self.input_channels)?;
        kv.read("input_size", &mut self.input_size)?;
        kv.read("stem_channels", &mut self.stem_channels)?;
        kv.read("stem_kernel", &mut self.stem_kernel)?;
        kv.read("stem_stride", &mut self.stem_stride)?;
        kv.read_list("block_channels", &mut self.block_channels)?;
        kv.read_list("block_strides", &mut self.block_strides)?;
        kv.read_list("block_3d", &mut self.block_3d)?;
        kv.read("block_kernel", &mut self.block_kernel)?;
        kv.read("temporal_kernel", &mut self.temporal_kernel)?;
        kv.read("window", &mut self.window)?;
        kv.read("stride", &mut self.stride)?;
        kv.read("gloss_hidden", &mut self.gloss_hidden)?;
        kv.read("sentence_hidden", &mut self.sentence_hidden)?;
        kv.read("vocab_size", &mut self.vocab_size)?;
        kv.read("word_classes", &mut self.word_classes)?;
        kv.read("no_3d", &mut self.no_3d)?;
        kv.read("no_framing", &mut self.no_framing)?;
        kv.read("no_gloss_lstm", &mut self.no_gloss_lstm)?;
        kv.read("word_level_mode", &mut self.word_level_mode)?;
        kv.read("bn_eps", &mut self.bn_eps)?;
        kv.read("bn_momentum", &mut self.bn_momentum)?;
        kv.read("init_seed", &mut self.init_seed)?;
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = ModelConfig::default();
        c.apply(kv)?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut c = ModelConfig::desk(7);
        c.no_gloss_lstm = true;
        c.block_3d = vec![false, true];
        let back = ModelConfig::from_kv(&KeyValues::parse(&c.to_kv().to_text()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation() {
        let mut c = ModelConfig::default();
        c.block_strides.pop();
        assert!(c.validate().is_err());
        let c = ModelConfig { window: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { stem_kernel: 4, ..Default::default() };
        assert!(c.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
