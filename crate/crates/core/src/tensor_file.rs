//! `.vgt` tensor files: `VGOT`, version byte, rank byte, `u32` LE dims,
//! then row-major `f32` LE values.

use std::fs;
use std::path::Path;

use crate::diffusion::FrameLatent;
use crate::error::{Result, VgotError};

pub const MAGIC: [u8; 4] = *b"VGOT";
pub const VERSION: u8 = 0x01;
pub const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.len() > MAX_RANK {
            return Err(VgotError::Format(format!("rank {} exceeds {MAX_RANK}", dims.len())));
        }
        if let Some(d) = dims.iter().find(|&&d| u32::try_from(d).is_err()) {
            return Err(VgotError::Format(format!("dimension {d} does not fit in 32 bits")));
        }
        let expected = dims.iter().product::<usize>();
        if expected != data.len() {
            return Err(VgotError::Length {
                expected,
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    /// Stacks equally shaped frames into `[F, h, w, d]`.
    pub fn from_frames(frames: &[FrameLatent]) -> Result<Self> {
        let shape = frames.first().map(FrameLatent::shape).unwrap_or_default();
        let mut data = Vec::with_capacity(frames.len() * shape.len());
        for f in frames {
            if f.shape() != shape {
                return Err(VgotError::Shape {
                    expected: shape.dims(),
                    actual: f.shape().dims(),
                });
            }
            data.extend(f.data().iter().map(|&v| v as f32));
        }
        let mut dims = vec![frames.len()];
        dims.extend(shape.dims());
        Self::new(dims, data)
    }

    pub fn from_frame(frame: &FrameLatent) -> Result<Self> {
        Self::new(frame.shape().dims(), frame.data().iter().map(|&v| v as f32).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Splits a `[F, h, w, d]` tensor back into frames.
    pub fn to_frames(&self) -> Result<Vec<FrameLatent>> {
        let &[_, h, w, d] = self.dims.as_slice() else {
            return Err(VgotError::Format(format!(
                "expected a rank-4 frame stack, got dims {:?}",
                self.dims
            )));
        };
        let shape = crate::diffusion::LatentShape::new(h, w, d);
        if shape.is_empty() {
            return Ok(Vec::new());
        }
        self.data
            .chunks_exact(shape.len())
            .map(|c| FrameLatent::from_vec(shape, c.iter().map(|&v| f64::from(v)).collect()))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = |expected: usize| VgotError::Length {
            expected,
            found: bytes.len(),
        };
        if bytes.len() < 6 {
            return Err(short(6));
        }
        if bytes[..4] != MAGIC {
            return Err(VgotError::Format(format!("bad magic {:02X?}", &bytes[..4])));
        }
        if bytes[4] != VERSION {
            return Err(VgotError::Format(format!("unsupported version {:#04x}", bytes[4])));
        }
        let rank = bytes[5] as usize;
        if rank > MAX_RANK {
            return Err(VgotError::Format(format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let header = 6 + 4 * rank;
        if bytes.len() < header {
            return Err(short(header));
        }
        let dims: Vec<usize> = bytes[6..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| VgotError::Format("element count overflows".into()))?;
        let total = count
            .checked_mul(4)
            .and_then(|n| n.checked_add(header))
            .ok_or_else(|| VgotError::Format("element count overflows".into()))?;
        if bytes.len() != total {
            return Err(short(total));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }
}

pub fn write_tensor_file(path: &Path, tensor: &Tensor) -> Result<()> {
    fs::write(path, tensor.to_bytes()).map_err(|e| VgotError::io(path, e))
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| VgotError::io(path, e))?;
    Tensor::from_bytes(&bytes)
}
