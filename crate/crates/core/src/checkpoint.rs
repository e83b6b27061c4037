//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SQRL"  u32 version  u32 len + config text (key=value lines)
//! u8 kind (0 = meta-learner, 1 = per-task policies)
//! meta:     f64 log_alpha  u64 updates  encoder  policy  q
//! per-task: u32 count, then (u64 task_id, policy) pairs in task order
//! ```
//!
//! Each network is written as its role dimensions, head, activation, layer
//! sizes and then its flat parameter array as f64.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::baselines::{StandardBcModels, Trained};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::squirl::{Models, PolicyHead, SoftQ, TaskEncoder, TaskPolicy};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SQRL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub trained: Trained,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn mlp(&mut self, net: &Mlp) {
        self.str(net.activation().name());
        self.u32(net.layer_sizes().len());
        for &s in net.layer_sizes() {
            self.u32(s);
        }
        self.u64(net.param_count() as u64);
        for &p in net.params() {
            self.f64(p);
        }
    }
    fn encoder(&mut self, e: &TaskEncoder) {
        self.u32(e.state_dim);
        self.u32(e.action_dim);
        self.u32(e.z_dim);
        self.mlp(&e.net);
    }
    fn policy(&mut self, p: &TaskPolicy) {
        self.str(p.head.name());
        self.u32(p.state_dim);
        self.u32(p.z_dim);
        self.u32(p.action_dim);
        self.f64(p.log_std_min);
        self.f64(p.log_std_max);
        self.mlp(&p.net);
    }
    fn q(&mut self, q: &SoftQ) {
        self.u32(q.state_dim);
        self.u32(q.action_dim);
        self.u32(q.z_dim);
        self.mlp(&q.net);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Contract(format!("corrupt checkpoint: {}", msg.into()))
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("string is not UTF-8"))
    }
    fn mlp(&mut self) -> Result<Mlp> {
        let act = self.str()?;
        let act = Activation::parse(&act).ok_or_else(|| corrupt(format!("unknown activation `{act}`")))?;
        let n = self.u32()?;
        let sizes = (0..n).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let count = self.u64()? as usize;
        if count > self.bytes.len() / 8 {
            return Err(corrupt("parameter count exceeds file size"));
        }
        let params = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Mlp::from_params(&sizes, act, params)
    }
    fn encoder(&mut self) -> Result<TaskEncoder> {
        Ok(TaskEncoder {
            state_dim: self.u32()?,
            action_dim: self.u32()?,
            z_dim: self.u32()?,
            net: self.mlp()?,
        })
    }
    fn policy(&mut self) -> Result<TaskPolicy> {
        let head = self.str()?;
        let head = PolicyHead::parse(&head).ok_or_else(|| corrupt(format!("unknown policy head `{head}`")))?;
        Ok(TaskPolicy {
            head,
            state_dim: self.u32()?,
            z_dim: self.u32()?,
            action_dim: self.u32()?,
            log_std_min: self.f64()?,
            log_std_max: self.f64()?,
            net: self.mlp()?,
        })
    }
    fn q(&mut self) -> Result<SoftQ> {
        Ok(SoftQ {
            state_dim: self.u32()?,
            action_dim: self.u32()?,
            z_dim: self.u32()?,
            net: self.mlp()?,
        })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        w.str(&self.config.to_text());
        match &self.trained {
            Trained::Meta(m) => {
                w.u8(0);
                w.f64(m.log_alpha);
                w.u64(m.updates);
                w.encoder(&m.encoder);
                w.policy(&m.policy);
                w.q(&m.q);
            }
            Trained::PerTask(p) => {
                w.u8(1);
                w.u32(p.policies.len());
                for (&id, pol) in &p.policies {
                    w.u64(id as u64);
                    w.policy(pol);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(&CHECKPOINT_MAGIC[..]) {
            return Err(corrupt("missing SQRL magic"));
        }
        let version = r.u32()? as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION.to_string(),
                found: version.to_string(),
            });
        }
        let config = RunConfig::from_text(&r.str()?)?;
        let trained = match r.u8()? {
            0 => Trained::Meta(Models {
                log_alpha: r.f64()?,
                updates: r.u64()?,
                encoder: r.encoder()?,
                policy: r.policy()?,
                q: r.q()?,
            }),
            1 => {
                let n = r.u32()?;
                let mut policies = BTreeMap::new();
                for _ in 0..n {
                    let id = r.u64()? as usize;
                    policies.insert(id, r.policy()?);
                }
                Trained::PerTask(StandardBcModels { policies })
            }
            k => return Err(corrupt(format!("unknown model kind {k}"))),
        };
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { config, trained })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
