//! Binary checkpoint container.
//!
//! ```text
//! magic        8 bytes   "MPLSTMDL"
//! version      u32 LE
//! cell type    u32 LE    0 = LSTM
//! K            u32 LE
//! hidden size  u32 LE
//! num layers   u32 LE
//! param count  u64 LE
//! params       f64 LE x param count, in Weights::slices() order
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{LstmMdl, ModelConfig, Weights};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MPLSTMDL";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Recurrent cell family recorded in the checkpoint header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum CellType {
    Lstm = 0,
}

impl LstmMdl {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.config();
        let n = self.weights().len();
        let mut out = Vec::with_capacity(36 + 8 * n);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(CellType::Lstm as u32).to_le_bytes());
        for v in [cfg.num_components, cfg.hidden_size, cfg.num_layers] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for s in self.weights().slices() {
            for v in s {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut cur, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut cur)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let cell = read_u32(&mut cur)?;
        if cell != CellType::Lstm as u32 {
            return Err(Error::Checkpoint(format!("unsupported cell type {cell}")));
        }
        let config = ModelConfig {
            num_components: read_u32(&mut cur)? as usize,
            hidden_size: read_u32(&mut cur)? as usize,
            num_layers: read_u32(&mut cur)? as usize,
        };
        config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let count = read_u64(&mut cur)? as usize;
        let mut weights = Weights::zeros(&config);
        if count != weights.len() {
            return Err(Error::Checkpoint(format!(
                "header declares {count} parameters, config implies {}",
                weights.len()
            )));
        }
        for s in weights.slices_mut() {
            for v in s.iter_mut() {
                let mut b = [0u8; 8];
                read_exact(&mut cur, &mut b)?;
                *v = f64::from_le_bytes(b);
            }
        }
        if !cur.is_empty() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        LstmMdl::from_weights(config, weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn read_exact(cur: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    cur.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated file".into()))
}

fn read_u32(cur: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(cur, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cur: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(cur, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let model = LstmMdl::init(
            ModelConfig {
                num_components: 2,
                hidden_size: 5,
                num_layers: 2,
            },
            7,
        )
        .unwrap();
        let back = LstmMdl::from_bytes(&model.to_bytes()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn header_layout() {
        let model = LstmMdl::zeros(ModelConfig::default()).unwrap();
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..8], b"MPLSTMDL");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 6);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 32);
        assert_eq!(bytes.len(), 36 + 8 * model.weights().len());
    }

    #[test]
    fn rejects_other_versions_and_corruption() {
        let model = LstmMdl::zeros(ModelConfig::default()).unwrap();
        let mut bytes = model.to_bytes();
        bytes[8] = 2;
        assert!(matches!(LstmMdl::from_bytes(&bytes), Err(Error::Checkpoint(_))));

        let mut bytes = model.to_bytes();
        bytes[0] = b'X';
        assert!(LstmMdl::from_bytes(&bytes).is_err());

        let bytes = model.to_bytes();
        assert!(LstmMdl::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
