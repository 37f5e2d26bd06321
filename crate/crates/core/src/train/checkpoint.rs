//! Checkpoint container.
//!
//! Layout (little-endian): magic `SFNETCK1`, `u32` version, then three
//! length-prefixed UTF-8 sections (config key-values, vocabulary, free-form
//! note), `u64` epoch, `u64` optimizer step, `u64` entry count, and per entry
//! a length-prefixed name followed by a serialized tensor. Parameters and
//! normalization buffers use their layer names; optimizer moments are stored
//! as `adam.m.<name>` and `adam.v.<name>`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::Adam;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SfNet};
use crate::nn::Module;
use crate::tensor::serialize::{read_tensor, read_u64, write_tensor};

const MAGIC: &[u8; 8] = b"SFNETCK1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Model and training keys as a single key-value snapshot.
    pub config: KeyValues,
    pub vocab: String,
    pub note: String,
    pub epoch: u64,
    pub optimizer_step: u64,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u64(r)? as usize;
    if n > 1 << 30 {
        return Err(Error::format("checkpoint", "implausible string length"));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|_| Error::format("checkpoint", "truncated string"))?;
    String::from_utf8(buf).map_err(|_| Error::format("checkpoint", "string is not UTF-8"))
}

impl Checkpoint {
    /// Snapshot of a model, its optimizer and run metadata.
    pub fn capture(model: &SfNet, adam: &Adam, epoch: u64, extra: &KeyValues, vocab: &str) -> Self {
        let mut config = extra.clone();
        config.merge(&model.config().to_kv());
        let mut tensors = BTreeMap::new();
        for p in model.params() {
            tensors.insert(p.name.clone(), (p.shape().to_vec(), p.data().to_vec()));
        }
        for (name, (m, v)) in &adam.moments {
            let shape = tensors.get(name).map_or_else(|| vec![m.len()], |t| t.0.clone());
            tensors.insert(format!("adam.m.{name}"), (shape.clone(), m.clone()));
            tensors.insert(format!("adam.v.{name}"), (shape, v.clone()));
        }
        let mut config_with_adam = config;
        config_with_adam.set("adam_weight_decay", adam.weight_decay);
        config_with_adam.set("adam_beta1", adam.beta1);
        config_with_adam.set("adam_beta2", adam.beta2);
        config_with_adam.set("adam_eps", adam.eps);
        Checkpoint {
            config: config_with_adam,
            vocab: vocab.to_string(),
            note: String::new(),
            epoch,
            optimizer_step: adam.step,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        write_str(&mut out, &self.config.to_text()).unwrap();
        write_str(&mut out, &self.vocab).unwrap();
        write_str(&mut out, &self.note).unwrap();
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.optimizer_step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, (shape, data)) in &self.tensors {
            write_str(&mut out, name).unwrap();
            write_tensor(&mut out, shape, data).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::format("checkpoint", "truncated header"))?;
        if &magic != MAGIC {
            return Err(Error::format("checkpoint", "not a checkpoint file"));
        }
        let mut ver = [0u8; 4];
        r.read_exact(&mut ver).map_err(|_| Error::format("checkpoint", "truncated header"))?;
        if u32::from_le_bytes(ver) != VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {}", u32::from_le_bytes(ver))));
        }
        let config = KeyValues::parse(&read_str(&mut r)?)?;
        let vocab = read_str(&mut r)?;
        let note = read_str(&mut r)?;
        let epoch = read_u64(&mut r)?;
        let optimizer_step = read_u64(&mut r)?;
        let count = read_u64(&mut r)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let t = read_tensor(&mut r)?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::format("checkpoint", format!("duplicate entry {name}")));
            }
        }
        if !r.is_empty() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Checkpoint { config, vocab, note, epoch, optimizer_step, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut c = ModelConfig::default();
        c.apply(&self.config)?;
        c.validate()?;
        Ok(c)
    }

    /// Rebuilds the model; every parameter must be present with its shape.
    pub fn restore_model(&self) -> Result<SfNet> {
        let mut model = SfNet::new(self.model_config()?)?;
        self.load_into(&mut model)?;
        Ok(model)
    }

    pub fn load_into(&self, model: &mut SfNet) -> Result<()> {
        let mut problems = Vec::new();
        for p in model.params_mut() {
            match self.tensors.get(&p.name) {
                Some((shape, data)) if shape == p.shape() => p.set_data(data.clone()),
                Some((shape, _)) => problems.push(format!("{}: stored {shape:?}, model {:?}", p.name, p.shape())),
                None => problems.push(format!("{} missing", p.name)),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::format("checkpoint", problems.join("; ")))
        }
    }

    pub fn restore_optimizer(&self) -> Result<Adam> {
        let mut adam = Adam::new(0.0);
        self.config.read("adam_weight_decay", &mut adam.weight_decay)?;
        self.config.read("adam_beta1", &mut adam.beta1)?;
        self.config.read("adam_beta2", &mut adam.beta2)?;
        self.config.read("adam_eps", &mut adam.eps)?;
        adam.step = self.optimizer_step;
        for (name, (_, m)) in &self.tensors {
            if let Some(param) = name.strip_prefix("adam.m.") {
                let Some((_, v)) = self.tensors.get(&format!("adam.v.{param}")) else {
                    return Err(Error::format("checkpoint", format!("second moment of {param} missing")));
                };
                adam.moments.insert(param.to_string(), (m.clone(), v.clone()));
            }
        }
        Ok(adam)
    }
}
