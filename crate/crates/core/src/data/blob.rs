//! Frame blobs: `T, C, H, W` as little-endian `u32`, then `T*C*H*W` raw
//! 8-bit pixels in row-major `[T, C, H, W]` order.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameBlob {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl FrameBlob {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if frames * channels * height * width != pixels.len() || frames == 0 || channels == 0 {
            return Err(Error::format(
                "frame blob",
                format!("{} pixels for {frames}x{channels}x{height}x{width}", pixels.len()),
            ));
        }
        Ok(FrameBlob { frames, channels, height, width, pixels })
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_len();
        &self.pixels[t * n..(t + 1) * n]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for d in [self.frames, self.channels, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::format("frame blob", "shorter than header"));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
        let (t, c, h, w) = (dim(0), dim(1), dim(2), dim(3));
        Self::new(t, c, h, w, bytes[16..].to_vec())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}
