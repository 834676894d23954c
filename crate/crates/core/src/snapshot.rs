//! Field snapshot files.
//!
//! Layout, all little-endian:
//!
//! | bytes  | content                                  |
//! |--------|------------------------------------------|
//! | 0..8   | magic `NSKFLD01`                         |
//! | 8..20  | points per axis, three `u32`             |
//! | 20..44 | box length per axis, three `f64`         |
//! | 44..64 | quantity tag, ASCII, NUL padded          |
//! | 64..   | samples as `f64`, x fastest              |

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NskError, Result};
use crate::grid::Grid;

pub const MAGIC: &[u8; 8] = b"NSKFLD01";
pub const HEADER_LEN: usize = 64;
pub const TAG_LEN: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub n: [usize; 3],
    pub len: [f64; 3],
    pub quantity: String,
    pub data: Vec<f64>,
}

impl Snapshot {
    pub fn new(grid: &Grid, quantity: &str, data: &[f64]) -> Result<Snapshot> {
        if data.len() != grid.size() {
            return Err(NskError::Snapshot(format!(
                "{} samples for a grid of {}",
                data.len(),
                grid.size()
            )));
        }
        if quantity.len() > TAG_LEN || !quantity.is_ascii() {
            return Err(NskError::Snapshot(format!("quantity tag {quantity:?} is not short ASCII")));
        }
        Ok(Snapshot { n: grid.n(), len: grid.len(), quantity: quantity.into(), data: data.to_vec() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        for n in self.n {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for l in self.len {
            out.extend_from_slice(&l.to_le_bytes());
        }
        let mut tag = [0u8; TAG_LEN];
        tag[..self.quantity.len()].copy_from_slice(self.quantity.as_bytes());
        out.extend_from_slice(&tag);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Snapshot> {
        if bytes.len() < HEADER_LEN {
            return Err(NskError::Snapshot("shorter than the header".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(NskError::Snapshot("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let n = [u32_at(8), u32_at(12), u32_at(16)];
        let len = [f64_at(20), f64_at(28), f64_at(36)];
        let tag = &bytes[44..64];
        let end = tag.iter().position(|&b| b == 0).unwrap_or(TAG_LEN);
        let quantity = std::str::from_utf8(&tag[..end])
            .map_err(|_| NskError::Snapshot("tag is not ASCII".into()))?
            .to_string();
        let count = n[0] * n[1] * n[2];
        if bytes.len() != HEADER_LEN + 8 * count {
            return Err(NskError::Snapshot(format!(
                "expected {} data bytes, found {}",
                8 * count,
                bytes.len() - HEADER_LEN
            )));
        }
        let data = (0..count).map(|i| f64_at(HEADER_LEN + 8 * i)).collect();
        Ok(Snapshot { n, len, quantity, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Snapshot> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Snapshot::from_bytes(&buf)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n, self.len)
    }
}
