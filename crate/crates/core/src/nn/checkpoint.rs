//! Binary parameter checkpoints. All integers are little-endian.
//!
//! ```text
//! magic        4 bytes  "FDCK"
//! version      u32      1
//! dtype width  u8       4 (f32) or 8 (f64)
//! config len   u32      byte length of the JSON detector config
//! config       bytes    UTF-8 JSON of DetectorConfig (includes the arch)
//! tensor count u32
//! per tensor, in NetworkParams::named_tensors order:
//!   name len   u16
//!   name       bytes    UTF-8, e.g. "backbone.0.weight"
//!   ndim       u8
//!   dims       u32 x ndim
//!   data       width x prod(dims) bytes, IEEE-754 little-endian
//! ```
//!
//! Loading rejects trailing bytes, unknown versions, a dtype width other than
//! the requested one, and any tensor whose name or shape differs from the
//! layout the stored arch implies.

use std::path::Path;

use super::{DetectorConfig, NetError, NetworkParams, Real};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub detector: DetectorConfig,
    pub params: NetworkParams<T>,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(detector: DetectorConfig, params: NetworkParams<T>) -> Result<Self, NetError> {
        if detector.arch != params.arch {
            return Err(NetError::Checkpoint("detector arch differs from parameter arch".into()));
        }
        Ok(Self { detector, params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::WIDTH);
        let config = serde_json::to_vec(&self.detector).expect("config serializes");
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        let tensors = self.params.named_tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let width = r.take(1)?[0];
        if width != T::WIDTH {
            return Err(bad(format!("stored {width}-byte floats, expected {}", T::WIDTH)));
        }
        let len = r.u32()? as usize;
        let detector: DetectorConfig = serde_json::from_slice(r.take(len)?).map_err(|e| bad(format!("config: {e}")))?;
        detector.validate()?;
        let mut params = NetworkParams::<T>::zeros(&detector.arch)?;
        let expected: Vec<(String, Vec<usize>)> =
            params.named_tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(bad(format!("{count} tensors, arch implies {}", expected.len())));
        }
        for ((name, shape), t) in expected.iter().zip(params.tensors_mut()) {
            let n = r.u16()? as usize;
            let stored = std::str::from_utf8(r.take(n)?).map_err(|_| bad("tensor name is not UTF-8"))?;
            if stored != name {
                return Err(bad(format!("tensor {stored:?} where {name:?} was expected")));
            }
            let ndim = r.take(1)?[0] as usize;
            let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            if &dims != shape {
                return Err(bad(format!("{name}: shape {dims:?}, arch implies {shape:?}")));
            }
            let w = T::WIDTH as usize;
            let raw = r.take(t.len() * w)?;
            for (v, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(w)) {
                *v = T::read_le(chunk);
            }
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { detector, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| NetError::Io { path: path.into(), source })
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let bytes = std::fs::read(path).map_err(|source| NetError::Io { path: path.into(), source })?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            NetError::Checkpoint(m) => NetError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn bad(message: impl Into<String>) -> NetError {
    NetError::Checkpoint(message.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, NetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
