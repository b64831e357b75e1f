//! Versioned binary checkpoint of a policy / value pair plus string metadata.

use std::collections::BTreeMap;
use std::path::Path;

use super::mlp::Mlp;
use super::policy::{Head, Policy};
use crate::error::{write_bytes, Error, Result};

pub const CKPT_MAGIC: &[u8; 8] = b"HPCKPT\0\0";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub policy: Policy,
    pub value: Mlp,
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_mlp(b: &mut Vec<u8>, m: &Mlp) {
    put_u32(b, m.sizes().len() as u32);
    for s in m.sizes() {
        put_u32(b, *s as u32);
    }
    for p in m.params() {
        b.extend_from_slice(&p.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CheckpointMismatch("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn mlp(&mut self) -> Result<Mlp> {
        let n = self.u32()? as usize;
        if n > 64 {
            return Err(Error::CheckpointMismatch("implausible layer count".into()));
        }
        let sizes = (0..n).map(|_| self.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let params = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Mlp::from_params(&sizes, params)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(CKPT_MAGIC);
        put_u32(&mut b, CKPT_VERSION);
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        put_u32(&mut b, meta.len() as u32);
        b.extend_from_slice(&meta);
        match &self.policy.head {
            Head::Gaussian { log_std } => {
                b.push(0);
                put_u32(&mut b, log_std.len() as u32);
                for v in log_std {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
            Head::Categorical => b.push(1),
        }
        put_mlp(&mut b, &self.policy.net);
        put_mlp(&mut b, &self.value);
        b
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != CKPT_MAGIC {
            return Err(Error::CheckpointMismatch("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::CheckpointMismatch(format!("unsupported checkpoint version {version}")));
        }
        let mlen = r.u32()? as usize;
        let meta: BTreeMap<String, String> = serde_json::from_slice(r.take(mlen)?)?;
        let head = match r.take(1)?[0] {
            0 => {
                let n = r.u32()? as usize;
                Head::Gaussian {
                    log_std: (0..n).map(|_| r.f64()).collect::<Result<_>>()?,
                }
            }
            1 => Head::Categorical,
            k => return Err(Error::CheckpointMismatch(format!("unknown head kind {k}"))),
        };
        let net = r.mlp()?;
        let value = r.mlp()?;
        if r.pos != buf.len() {
            return Err(Error::CheckpointMismatch("trailing bytes".into()));
        }
        Ok(Checkpoint {
            meta,
            policy: Policy { net, head },
            value,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless `meta[key] == expected`.
    pub fn require(&self, key: &str, expected: &str) -> Result<()> {
        match self.meta.get(key) {
            Some(v) if v == expected => Ok(()),
            Some(v) => Err(Error::CheckpointMismatch(format!("{key}: checkpoint has {v}, expected {expected}"))),
            None => Err(Error::CheckpointMismatch(format!("{key}: missing from checkpoint"))),
        }
    }
}
