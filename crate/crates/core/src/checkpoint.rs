//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "P3HFCKPT"
//! version    u32      1
//! config     32 bytes SHA-256 of the model config JSON
//! epoch      u64      epoch the snapshot was taken after (0-based)
//! best_wf1   f64      validation w-F1 at that epoch
//! main_step  u64      optimizer steps taken by the main group
//! disc_step  u64      optimizer steps taken by the discriminator group
//! count      u32      number of parameter records
//! records    count × {
//!     name_len u32, name utf-8,
//!     group    u8 (0 main, 1 discriminator),
//!     ndim     u32, dims ndim × u64,
//!     value    n × f64, first moment n × f64, second moment n × f64
//! }
//! ```

use std::path::Path;

use crate::config::ModelConfig;
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::optim::Optimizer;
use crate::params::{Group, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"P3HFCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub epoch: u64,
    pub best_weighted_f1: f64,
    pub store: ParamStore,
    pub main_opt: Optimizer,
    pub disc_opt: Optimizer,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn group_slot(store: &ParamStore, group: Group, index: usize) -> usize {
    store.entries()[..index].iter().filter(|e| e.group == group).count()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.best_weighted_f1.to_le_bytes());
        out.extend_from_slice(&self.main_opt.step.to_le_bytes());
        out.extend_from_slice(&self.disc_opt.step.to_le_bytes());
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for (i, e) in self.store.entries().iter().enumerate() {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(match e.group {
                Group::Main => 0,
                Group::Discriminator => 1,
            });
            out.extend_from_slice(&(e.value.shape().len() as u32).to_le_bytes());
            for &d in e.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            let opt = self.optimizer(e.group);
            let slot = group_slot(&self.store, e.group, i);
            for t in [&e.value, &opt.m[slot], &opt.v[slot]] {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    fn optimizer(&self, group: Group) -> &Optimizer {
        match group {
            Group::Main => &self.main_opt,
            Group::Discriminator => &self.disc_opt,
        }
    }

    /// Parses a container; `config` supplies the optimizer kind and weight
    /// decay and must hash to the stored config hash.
    pub fn from_bytes(bytes: &[u8], config: &ModelConfig) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        if config_hash != config.hash() {
            return Err(Error::Checkpoint(
                "config hash does not match the supplied config".into(),
            ));
        }
        let epoch = r.u64()?;
        let best_weighted_f1 = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let main_step = r.u64()?;
        let disc_step = r.u64()?;
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        let mut moments = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?
                .to_string();
            let group = match r.take(1)?[0] {
                0 => Group::Main,
                1 => Group::Discriminator,
                g => return Err(Error::Checkpoint(format!("unknown group tag {g}"))),
            };
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut tensor = || -> Result<Tensor> {
                Tensor::new(shape.clone(), r.f64s(n)?).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))
            };
            let value = tensor()?;
            let m = tensor()?;
            let v = tensor()?;
            if store.find(&name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
            }
            store.add(name, group, value);
            let slot = usize::from(group == Group::Discriminator);
            moments[slot].0.push(m);
            moments[slot].1.push(v);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let [(mm, mv), (dm, dv)] = moments;
        let opt = |step, m, v| Optimizer {
            kind: config.optimizer,
            weight_decay: config.weight_decay,
            step,
            m,
            v,
        };
        Ok(Checkpoint {
            config_hash,
            epoch,
            best_weighted_f1,
            store,
            main_opt: opt(main_step, mm, mv),
            disc_opt: opt(disc_step, dm, dv),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path, config: &ModelConfig) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, config)
    }
}
