//! Binary checkpoints.
//!
//! Layout (little endian): magic `SDNETCKP`, `u32` version, model config as
//! length-prefixed JSON, SHA-256 of that JSON, frozen-input digests (word
//! table, contextual embedder), `u64` epoch, named parameters, Adamax state,
//! and a trailing SHA-256 of every preceding byte.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use sdnet_core::model::{ModelConfig, SdnetModel};
use sdnet_core::tensor::{AdamaxState, Tensor};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"SDNETCKP";
pub const VERSION: u32 = 1;

/// Digests of everything that must stay fixed during a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrozenDigests {
    pub word_vectors: u64,
    /// Zero when the model has no contextual embedder.
    pub embedder: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub frozen: FrozenDigests,
    pub epoch: u64,
    pub params: Vec<(String, bool, Tensor)>,
    pub optimizer: AdamaxState,
}

/// Canonical JSON of a model config and its SHA-256.
pub fn config_digest(config: &ModelConfig) -> (String, [u8; 32]) {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes()).into();
    (json, digest)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn capture(model: &SdnetModel, optimizer: &AdamaxState, frozen: FrozenDigests, epoch: u64) -> Self {
        Self {
            config: model.config.clone(),
            frozen,
            epoch,
            params: model
                .store
                .iter()
                .map(|(_, p)| {
                    let values = Tensor::new(p.tensor.shape().to_vec(), p.tensor.data().to_vec()).expect("valid shape");
                    (p.name.clone(), p.frozen, values)
                })
                .collect(),
            optimizer: optimizer.clone(),
        }
    }

    /// Rebuilds the model with the stored parameter values.
    pub fn to_model(&self) -> CliResult<SdnetModel> {
        let mut model = SdnetModel::new(self.config.clone(), 0)?;
        let values: Vec<(String, Tensor)> = self.params.iter().map(|(n, _, t)| (n.clone(), t.clone())).collect();
        model
            .load_values(&values)
            .map_err(|e| CliError::Usage(format!("checkpoint does not fit its own config: {e}")))?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        self.write_body(&mut w).expect("writing to memory");
        let tail = Sha256::digest(&w);
        w.extend_from_slice(&tail);
        w
    }

    fn write_body(&self, w: &mut Vec<u8>) -> std::io::Result<()> {
        let (json, digest) = config_digest(&self.config);
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        write_bytes(w, json.as_bytes())?;
        w.write_all(&digest)?;
        w.write_u64::<LE>(self.frozen.word_vectors)?;
        w.write_u64::<LE>(self.frozen.embedder)?;
        w.write_u64::<LE>(self.epoch)?;
        w.write_u64::<LE>(self.params.len() as u64)?;
        for (name, frozen, t) in &self.params {
            write_bytes(w, name.as_bytes())?;
            w.write_u8(*frozen as u8)?;
            w.write_u32::<LE>(t.shape().len() as u32)?;
            for &d in t.shape() {
                w.write_u64::<LE>(d as u64)?;
            }
            write_f64s(w, t.data())?;
        }
        let o = &self.optimizer;
        w.write_u64::<LE>(o.step_count)?;
        for v in [o.lr, o.beta1, o.beta2, o.eps] {
            w.write_f64::<LE>(v)?;
        }
        w.write_u64::<LE>(o.first_moment.len() as u64)?;
        for (m, u) in o.first_moment.iter().zip(&o.inf_norm) {
            w.write_u64::<LE>(m.len() as u64)?;
            write_f64s(w, m)?;
            write_f64s(w, u)?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let bad = |m: String| CliError::Data(format!("corrupt checkpoint: {m}"));
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("missing SDNETCKP header".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != tail {
            return Err(bad("checksum mismatch".into()));
        }
        let mut r = Cursor::new(&body[8..]);
        let io = |e: std::io::Error| bad(e.to_string());
        let version = r.read_u32::<LE>().map_err(io)?;
        if version != VERSION {
            return Err(CliError::Usage(format!("checkpoint format version {version}, this build reads {VERSION}")));
        }
        let json = String::from_utf8(read_bytes(&mut r).map_err(io)?).map_err(|e| bad(e.to_string()))?;
        let mut stored = [0u8; 32];
        r.read_exact(&mut stored).map_err(io)?;
        let config: ModelConfig = serde_json::from_str(&json).map_err(|e| bad(format!("config: {e}")))?;
        if <[u8; 32]>::from(Sha256::digest(json.as_bytes())) != stored {
            return Err(bad("config digest does not match the stored config".into()));
        }
        let frozen =
            FrozenDigests { word_vectors: r.read_u64::<LE>().map_err(io)?, embedder: r.read_u64::<LE>().map_err(io)? };
        let epoch = r.read_u64::<LE>().map_err(io)?;
        let n = r.read_u64::<LE>().map_err(io)? as usize;
        let mut params = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name = String::from_utf8(read_bytes(&mut r).map_err(io)?).map_err(|e| bad(e.to_string()))?;
            let frozen = r.read_u8().map_err(io)? != 0;
            let rank = r.read_u32::<LE>().map_err(io)? as usize;
            let shape = (0..rank)
                .map(|_| r.read_u64::<LE>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(io)?;
            let numel = shape.iter().product();
            let data = read_f64s(&mut r, numel).map_err(io)?;
            params.push((name, frozen, Tensor::new(shape, data)?));
        }
        let step_count = r.read_u64::<LE>().map_err(io)?;
        let mut hyper = [0.0; 4];
        for h in &mut hyper {
            *h = r.read_f64::<LE>().map_err(io)?;
        }
        let slots = r.read_u64::<LE>().map_err(io)? as usize;
        let (mut first_moment, mut inf_norm) = (Vec::new(), Vec::new());
        for _ in 0..slots {
            let len = r.read_u64::<LE>().map_err(io)? as usize;
            first_moment.push(read_f64s(&mut r, len).map_err(io)?);
            inf_norm.push(read_f64s(&mut r, len).map_err(io)?);
        }
        if r.position() as usize != body.len() - 8 {
            return Err(bad("trailing bytes".into()));
        }
        let [lr, beta1, beta2, eps] = hyper;
        let optimizer = AdamaxState { step_count, first_moment, inf_norm, lr, beta1, beta2, eps };
        Ok(Self { config, frozen, epoch, params, optimizer })
    }

    /// Writes to a temporary file next to `path`, then renames it into place.
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp =
            tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io("cannot create checkpoint in", dir, e))?;
        tmp.write_all(&self.to_bytes()).map_err(|e| CliError::io("cannot write checkpoint", path, e))?;
        tmp.as_file().sync_all().map_err(|e| CliError::io("cannot sync checkpoint", path, e))?;
        tmp.persist(path).map_err(|e| CliError::io("cannot rename checkpoint to", path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::unreadable("checkpoint", path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(&path.display().to_string()))
    }
}

fn write_bytes(w: &mut Vec<u8>, b: &[u8]) -> std::io::Result<()> {
    w.write_u64::<LE>(b.len() as u64)?;
    w.write_all(b)
}

fn read_bytes(r: &mut Cursor<&[u8]>) -> std::io::Result<Vec<u8>> {
    let n = r.read_u64::<LE>()? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if n > remaining {
        return Err(std::io::ErrorKind::UnexpectedEof.into());
    }
    let mut b = vec![0; n];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn write_f64s(w: &mut Vec<u8>, v: &[f64]) -> std::io::Result<()> {
    for &x in v {
        w.write_f64::<LE>(x)?;
    }
    Ok(())
}

fn read_f64s(r: &mut Cursor<&[u8]>, n: usize) -> std::io::Result<Vec<f64>> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if n.saturating_mul(8) > remaining {
        return Err(std::io::ErrorKind::UnexpectedEof.into());
    }
    (0..n).map(|_| r.read_f64::<LE>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use sdnet_core::synthetic::tiny_model_config;

    fn sample() -> Checkpoint {
        let model = SdnetModel::new(tiny_model_config(5, 2, 3), 3).unwrap();
        let mut opt = AdamaxState::new(&model.store, 0.002, 0.9, 0.999, 1e-8);
        opt.step_count = 7;
        opt.first_moment[0][0] = -0.25;
        opt.inf_norm[1][0] = f64::MIN_POSITIVE;
        Checkpoint::capture(&model, &opt, FrozenDigests { word_vectors: 11, embedder: 12 }, 4)
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        let m = back.to_model().unwrap();
        assert_eq!(m.store.iter().count(), c.params.len());
        for ((_, p), (n, _, t)) in m.store.iter().zip(&c.params) {
            assert_eq!((&p.name, p.tensor.shape(), p.tensor.data()), (n, t.shape(), t.data()));
        }
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        let k = bytes.len() / 2;
        bytes[k] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CliError::Data(_))));
        assert!(Checkpoint::from_bytes(b"SDNETCKP").is_err());
        assert!(Checkpoint::from_bytes(&[]).is_err());
    }

    #[test]
    fn save_replaces_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("last.ckpt");
        let mut c = sample();
        c.save(&path).unwrap();
        c.epoch = 5;
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap().epoch, 5);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let missing = Checkpoint::load(&dir.path().join("nope.ckpt")).unwrap_err();
        assert_eq!(missing.exit_code(), 2);
    }
}
