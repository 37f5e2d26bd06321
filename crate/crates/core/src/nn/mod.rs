//! Layer library: convolutions, the mixed 2D/3D block, normalization,
//! recurrent layers, fully connected layers and pooling.

mod conv;
mod linear;
mod lstm;
mod norm;
mod pool;

pub use conv::{conv_video, Conv2d, Conv3d, MixedBlock};
pub use linear::{linear, Linear};
pub use lstm::{lstm_sequence, reverse_within_lengths, select_last_valid, BiLstm, Lstm, LstmOutput};
pub use norm::{batch_norm_masked, BatchNorm, NormLayout};
pub use pool::{global_avg_pool, mask_frames};

use rand::Rng;

use crate::tensor::Tensor;

/// A named tensor owned by a layer.
///
/// Trainable parameters are gradient-collecting leaves; buffers (running
/// statistics) are plain constants updated in place between steps.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    value: Tensor,
    trainable: bool,
}

impl Param {
    pub fn trainable(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Self {
        Param {
            name: name.into(),
            value: Tensor::param(shape, data),
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Self {
        Param {
            name: name.into(),
            value: Tensor::new(shape, data),
            trainable: false,
        }
    }

    /// Uniform in `[-a, a]` with `a = 1 / sqrt(fan_in)`.
    pub fn uniform(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-a..=a)).collect();
        Self::trainable(name, shape, data)
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn tensor(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.value.grad()
    }

    /// Replaces the value with a fresh leaf; any accumulated gradient is dropped.
    pub fn set_data(&mut self, data: Vec<f64>) {
        let shape = self.value.shape().to_vec();
        self.value = if self.trainable {
            Tensor::param(&shape, data)
        } else {
            Tensor::new(&shape, data)
        };
    }

    pub fn zero_grad(&self) {
        self.value.zero_grad();
    }
}

/// Anything that owns parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
}

/// Sample-wise valid lengths along the time axis of a padded batch.
pub(crate) fn check_lengths(op: &'static str, lengths: &[usize], batch: usize, time: usize) -> crate::Result<()> {
    use crate::error::Error;
    if lengths.len() != batch {
        return Err(Error::shape(op, format!("{} lengths for batch of {batch}", lengths.len())));
    }
    if let Some(&l) = lengths.iter().find(|&&l| l > time) {
        return Err(Error::shape(op, format!("length {l} exceeds time axis {time}")));
    }
    Ok(())
}
