//! Little-endian tensor blobs: `rank: u64`, `rank` extents as `u64`, then
//! the elements as raw `f64` in row-major order.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub fn write_tensor<W: Write>(w: &mut W, shape: &[usize], data: &[f64]) -> std::io::Result<()> {
    w.write_all(&(shape.len() as u64).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::format("tensor blob", e.to_string()))?;
    Ok(u64::from_le_bytes(b))
}

/// Reads one blob; returns `(shape, data)`.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<(Vec<usize>, Vec<f64>)> {
    let rank = read_u64(r)?;
    if rank == 0 || rank > 16 {
        return Err(Error::format("tensor blob", format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        let d = read_u64(r)?;
        if d == 0 || d > (1 << 40) {
            return Err(Error::format("tensor blob", format!("implausible extent {d}")));
        }
        shape.push(d as usize);
    }
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw)
        .map_err(|e| Error::format("tensor blob", format!("truncated data: {e}")))?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((shape, data))
}

impl Tensor {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_tensor(&mut out, self.shape(), self.data()).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Tensor> {
        let (shape, data) = read_tensor(&mut bytes)?;
        if !bytes.is_empty() {
            return Err(Error::format("tensor blob", "trailing bytes"));
        }
        Tensor::try_new(&shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2, 1], vec![1.0, -0.5]);
        let b = t.to_bytes();
        assert_eq!(b.len(), 8 * (1 + 2 + 2));
        assert_eq!(&b[..8], &2u64.to_le_bytes());
        assert_eq!(&b[8..16], &2u64.to_le_bytes());
        assert_eq!(&b[16..24], &1u64.to_le_bytes());
        assert_eq!(&b[24..32], &1.0f64.to_le_bytes());
    }

    #[test]
    fn truncated_blob_is_an_error() {
        let b = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).to_bytes();
        assert!(Tensor::from_bytes(&b[..b.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(shape in prop::collection::vec(1usize..4, 1..4), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2)).collect();
            let t = Tensor::new(&shape, data);
            let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
