//! Binary state files.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `GPST` |
//! | 4     | format version (u32, currently 1) |
//! | 8     | half-width `Lx` (f64) |
//! | 8     | half-width `Ly` (f64) |
//! | 4     | subdivisions `n` (u32) |
//! | 4     | diagonal split tag (u32, 1 = right diagonals) |
//! | 8     | coefficient count `2N` (u64) |
//! | 8 * 2N | coefficients (f64) |
//!
//! Coefficients follow the interior nodes row by row (y outer, x inner),
//! real part then imaginary part per node.

use std::fs;
use std::path::Path;

use rgpe_core::mesh::DiagonalSplit;
use rgpe_core::{Mesh, State};

use crate::error::CliError;

pub const MAGIC: &[u8; 4] = b"GPST";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct StateFile {
    pub lx: f64,
    pub ly: f64,
    pub n: u32,
    pub split: u32,
    pub coeffs: Vec<f64>,
}

impl StateFile {
    pub fn new(mesh: &Mesh, state: &State) -> Self {
        Self {
            lx: mesh.half_widths.0,
            ly: mesh.half_widths.1,
            n: mesh.subdivisions as u32,
            split: mesh.split.tag(),
            coeffs: state.coeffs().to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(HEADER_LEN + 8 * self.coeffs.len());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&self.lx.to_le_bytes());
        b.extend_from_slice(&self.ly.to_le_bytes());
        b.extend_from_slice(&self.n.to_le_bytes());
        b.extend_from_slice(&self.split.to_le_bytes());
        b.extend_from_slice(&(self.coeffs.len() as u64).to_le_bytes());
        for c in &self.coeffs {
            b.extend_from_slice(&c.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, String> {
        if b.len() < HEADER_LEN {
            return Err(format!("truncated header ({} bytes)", b.len()));
        }
        if &b[0..4] != MAGIC {
            return Err("bad magic, not a state file".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let lx = f64_at(8);
        let ly = f64_at(16);
        let n = u32_at(24);
        let split = u32_at(28);
        let count = u64::from_le_bytes(b[32..40].try_into().unwrap()) as usize;
        let payload = &b[HEADER_LEN..];
        if payload.len() != 8 * count {
            return Err(format!(
                "payload holds {} bytes, header announces {count} coefficients",
                payload.len()
            ));
        }
        let coeffs = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            lx,
            ly,
            n,
            split,
            coeffs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_bytes()).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes).map_err(|reason| CliError::StateFile {
            path: path.to_path_buf(),
            reason,
        })
    }

    /// Checks the header against `mesh` and returns the state.
    pub fn into_state(self, mesh: &Mesh, path: &Path) -> Result<State, CliError> {
        let fail = |reason: String| CliError::StateFile {
            path: path.to_path_buf(),
            reason,
        };
        let expect = StateFile::new(mesh, &State::zeros(0));
        if self.lx != expect.lx || self.ly != expect.ly || self.n != expect.n {
            return Err(fail(format!(
                "mesh mismatch: file has Lx={}, Ly={}, n={}, run uses Lx={}, Ly={}, n={}",
                self.lx, self.ly, self.n, expect.lx, expect.ly, expect.n
            )));
        }
        if self.split != expect.split {
            let name = DiagonalSplit::from_tag(self.split).map_or("unknown", |s| s.name());
            return Err(fail(format!(
                "diagonal split mismatch: file has tag {} ({name}), run uses {}",
                self.split,
                mesh.split.name()
            )));
        }
        if self.coeffs.len() != mesh.n_dofs() {
            return Err(fail(format!(
                "{} coefficients, mesh has {} unknowns",
                self.coeffs.len(),
                mesh.n_dofs()
            )));
        }
        Ok(State::from_coeffs(self.coeffs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_corrupt_input() {
        assert!(StateFile::from_bytes(b"GPS").is_err());
        let mut b = StateFile {
            lx: 1.0,
            ly: 1.0,
            n: 2,
            split: 1,
            coeffs: vec![0.5, -0.25],
        }
        .to_bytes();
        assert!(StateFile::from_bytes(&b).is_ok());
        b.pop();
        assert!(StateFile::from_bytes(&b).is_err());
        b[0] = b'X';
        assert!(StateFile::from_bytes(&b).is_err());
    }
}
