//! Parameter checkpoints: a versioned little-endian blob plus a one-line
//! text sidecar `name, epoch, seed, descriptor`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ADPCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub name: String,
    pub epoch: usize,
    pub seed: u64,
    pub descriptor: String,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.params.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn params_from_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
        let bad = |m: &str| Error::Backend(format!("checkpoint blob: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() != n * 8 {
            return Err(bad("truncated"));
        }
        Ok(body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn sidecar(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\n",
            self.name, self.epoch, self.seed, self.descriptor
        )
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let meta = Self::sidecar_path(path);
        fs::write(&meta, self.sidecar()).map_err(|e| Error::io(meta, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let params = Self::params_from_bytes(&bytes)?;
        let meta_path = Self::sidecar_path(path);
        let meta = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let fields: Vec<&str> = meta.trim_end().split('\t').collect();
        let [name, epoch, seed, descriptor] = fields[..] else {
            return Err(Error::Backend(format!(
                "{}: expected 4 sidecar fields",
                meta_path.display()
            )));
        };
        let num_err = |f: &str| Error::Backend(format!("{}: bad {f}", meta_path.display()));
        Ok(Checkpoint {
            name: name.to_string(),
            epoch: epoch.parse().map_err(|_| num_err("epoch"))?,
            seed: seed.parse().map_err(|_| num_err("seed"))?,
            descriptor: descriptor.to_string(),
            params,
        })
    }
}
