//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "FRCK"
//! version    u16      1
//! kind       u8       1 = model, 2 = fuser
//! header     u32 len + UTF-8 JSON
//! digests    u8 count + count * 32 bytes (config digests, fuser only)
//! blocks     u32 count, then per block:
//!              u16 len + UTF-8 name, u8 ndim, ndim * u32 dims,
//!              product(dims) * f64
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::model::{ModelWeights, TransformerModel};
use crate::error::{Error, Result};
use crate::nncore::{Parameters, Tensor};

pub const MAGIC: &[u8; 4] = b"FRCK";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Model = 1,
    Fuser = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: Kind,
    pub header: String,
    pub digests: Vec<[u8; 32]>,
    pub blocks: Vec<(String, Tensor)>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.header.len() as u32).to_le_bytes());
        out.extend_from_slice(self.header.as_bytes());
        out.push(self.digests.len() as u8);
        for d in &self.digests {
            out.extend_from_slice(d);
        }
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, t) in &self.blocks {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = u16::from_le_bytes(take(&mut r)?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = match take::<1>(&mut r)?[0] {
            1 => Kind::Model,
            2 => Kind::Fuser,
            k => return Err(Error::Checkpoint(format!("unknown kind {k}"))),
        };
        let hlen = u32::from_le_bytes(take(&mut r)?) as usize;
        let header = read_string(&mut r, hlen)?;
        let n_dig = take::<1>(&mut r)?[0] as usize;
        let digests = (0..n_dig).map(|_| take::<32>(&mut r)).collect::<Result<Vec<_>>>()?;
        let n_blocks = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut blocks = Vec::with_capacity(n_blocks.min(1 << 16));
        for _ in 0..n_blocks {
            let nlen = u16::from_le_bytes(take(&mut r)?) as usize;
            let name = read_string(&mut r, nlen)?;
            let ndim = take::<1>(&mut r)?[0] as usize;
            let shape = (0..ndim)
                .map(|_| take::<4>(&mut r).map(|b| u32::from_le_bytes(b) as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            if r.len() < n * 8 {
                return Err(Error::Checkpoint(format!("block {name} truncated")));
            }
            let data = (0..n).map(|_| take::<8>(&mut r).map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
            blocks.push((name, Tensor::new(shape, data)?));
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { kind, header, digests, blocks })
    }

    /// Blocks named `p0, p1, ...` in visiting order.
    pub fn blocks_of<P: Parameters>(params: &P) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        params.visit(&mut |t| out.push((format!("p{}", out.len()), t.clone())));
        out
    }

    /// Loads blocks into `target`, requiring the declared shapes to equal
    /// the target's shapes one for one.
    pub fn load_into<P: Parameters>(&self, target: &mut P) -> Result<()> {
        let want = target.shapes();
        if want.len() != self.blocks.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} weight blocks, found {}",
                want.len(),
                self.blocks.len()
            )));
        }
        for (i, (w, (name, t))) in want.iter().zip(&self.blocks).enumerate() {
            if w.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "block {i} ({name}) declares shape {:?}, config implies {w:?}",
                    t.shape()
                )));
            }
        }
        let mut i = 0;
        target.visit_mut(&mut |t| {
            t.data_mut().copy_from_slice(self.blocks[i].1.data());
            i += 1;
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        match fs::File::open(path) {
            Ok(mut f) => f.read_to_end(&mut bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingArtifact {
                    path: path.to_path_buf(),
                    hint: "checkpoint not found; run `fedrefine train` first".into(),
                })
            }
            Err(e) => return Err(e.into()),
        };
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Checkpoint("unexpected end of data".into()))
}

fn take<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_exact(r, &mut b)?;
    Ok(b)
}

fn read_string(r: &mut &[u8], len: usize) -> Result<String> {
    if r.len() < len {
        return Err(Error::Checkpoint("unexpected end of data".into()));
    }
    let (s, rest) = r.split_at(len);
    *r = rest;
    String::from_utf8(s.to_vec()).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))
}

pub fn model_to_container(m: &TransformerModel) -> Result<Container> {
    Ok(Container {
        kind: Kind::Model,
        header: serde_json::to_string(&m.config)?,
        digests: Vec::new(),
        blocks: Container::blocks_of(&m.weights),
    })
}

pub fn model_from_container(c: &Container) -> Result<TransformerModel> {
    if c.kind != Kind::Model {
        return Err(Error::Checkpoint("container does not hold a model".into()));
    }
    let config: ModelConfig = serde_json::from_str(&c.header)?;
    config.validate()?;
    let mut weights = ModelWeights::zeros(&config);
    c.load_into(&mut weights)?;
    Ok(TransformerModel { config, weights })
}

pub fn save_model(m: &TransformerModel, path: &Path) -> Result<()> {
    model_to_container(m)?.write(path)
}

pub fn load_model(path: &Path) -> Result<TransformerModel> {
    model_from_container(&Container::read(path)?)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn model() -> TransformerModel {
        let cfg = ModelConfig::new("ck", 2, 2, 1, 4, 9, 8);
        TransformerModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn roundtrip_bytes() {
        let m = model();
        let c = model_to_container(&m).unwrap();
        let back = model_from_container(&Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn shape_validation_on_load() {
        let m = model();
        let mut c = model_to_container(&m).unwrap();
        let mut cfg = m.config.clone();
        cfg.d_ff += 2;
        c.header = serde_json::to_string(&cfg).unwrap();
        let err = model_from_container(&Container::from_bytes(&c.to_bytes()).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn corrupt_input_rejected() {
        let bytes = model_to_container(&model()).unwrap().to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Container::from_bytes(&extra).is_err());
    }

    #[test]
    fn missing_file_is_missing_artifact() {
        let err = load_model(Path::new("/nonexistent/fedrefine/model.frck")).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}
