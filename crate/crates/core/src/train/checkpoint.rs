//! `XGCK` binary container: magic, version, config text, named f32 tensors.
//! All integers are little-endian u32.

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

use super::adam::Adam;
use super::config::TrainConfig;

pub const MAGIC: &[u8; 4] = b"XGCK";
pub const FORMAT_VERSION: u32 = 1;
const MOMENT_M: &str = "adam.m.";
const MOMENT_V: &str = "adam.v.";
const ITERATION_KEY: &str = "iteration";

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub iteration: u64,
    /// `gen.*` tensors.
    pub generator: ParamStore<f32>,
    /// `disc_i.*` and `disc_p.*` tensors.
    pub discriminators: ParamStore<f32>,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
}

impl Checkpoint {
    pub fn master_seed(&self) -> u64 {
        self.config.master_seed
    }

    /// Parameter scalars, excluding optimizer moments.
    pub fn parameter_count(&self) -> usize {
        self.generator.scalar_count() + self.discriminators.scalar_count()
    }

    fn header_text(&self) -> String {
        format!("{}{ITERATION_KEY}={}\n", self.config.to_text(), self.iteration)
    }

    fn tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out: Vec<(String, &Tensor<f32>)> = Vec::new();
        for store in [&self.generator, &self.discriminators] {
            out.extend(store.iter().map(|(k, t)| (k.to_string(), t)));
        }
        for opt in [&self.gen_opt, &self.disc_opt] {
            out.extend(opt.m.iter().map(|(k, t)| (format!("{MOMENT_M}{k}"), t)));
            out.extend(opt.v.iter().map(|(k, t)| (format!("{MOMENT_V}{k}"), t)));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, FORMAT_VERSION);
        put_str(&mut buf, &self.header_text());
        let tensors = self.tensors();
        put_u32(&mut buf, tensors.len() as u32);
        for (name, t) in tensors {
            put_str(&mut buf, &name);
            put_u32(&mut buf, t.shape().len() as u32);
            for &d in t.shape() {
                put_u32(&mut buf, d as u32);
            }
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(r.error_at(0, format!("bad magic {magic:?}, expected \"XGCK\"")));
        }
        let at = r.pos;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(r.error_at(at, format!("unsupported version {version}, expected {FORMAT_VERSION}")));
        }
        let at = r.pos;
        let header = r.string()?;
        let mut iteration = None;
        let mut cfg_text = String::new();
        for line in header.lines() {
            match line.split_once('=') {
                Some((k, v)) if k.trim() == ITERATION_KEY => {
                    iteration = Some(v.trim().parse::<u64>().map_err(|e| r.error_at(at, format!("iteration: {e}")))?)
                }
                _ => {
                    cfg_text.push_str(line);
                    cfg_text.push('\n');
                }
            }
        }
        let config = TrainConfig::parse(&cfg_text).map_err(|e| r.error_at(at, e.to_string()))?;
        let iteration = iteration.ok_or_else(|| r.error_at(at, "header has no iteration".into()))?;

        let count = r.u32()?;
        let mut generator = ParamStore::new();
        let mut discriminators = ParamStore::new();
        let (mut gm, mut gv, mut dm, mut dv) = (ParamStore::new(), ParamStore::new(), ParamStore::new(), ParamStore::new());
        for _ in 0..count {
            let at = r.pos;
            let name = r.string()?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(r.error_at(at, format!("tensor {name:?} has implausible rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            let numel: usize = dims.iter().product();
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| r.error_at(at, "tensor too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::new(&dims, data).map_err(|e| r.error_at(at, e.to_string()))?;
            let (store, key) = if let Some(k) = name.strip_prefix(MOMENT_M) {
                (if k.starts_with("gen.") { &mut gm } else { &mut dm }, k.to_string())
            } else if let Some(k) = name.strip_prefix(MOMENT_V) {
                (if k.starts_with("gen.") { &mut gv } else { &mut dv }, k.to_string())
            } else if name.starts_with("gen.") {
                (&mut generator, name)
            } else if name.starts_with("disc_") {
                (&mut discriminators, name)
            } else {
                return Err(r.error_at(at, format!("unrecognized tensor name {name:?}")));
            };
            if store.contains(&key) {
                return Err(r.error_at(at, format!("duplicate tensor {key:?}")));
            }
            store.insert(key, t);
        }
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let opt = |m: ParamStore<f32>, v: ParamStore<f32>| Adam {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            step: iteration,
            m,
            v,
        };
        let ck = Checkpoint {
            gen_opt: opt(gm, gv),
            disc_opt: opt(dm, dv),
            config,
            iteration,
            generator,
            discriminators,
        };
        ck.check_moments().map_err(|msg| r.error_at(bytes.len(), msg))?;
        Ok(ck)
    }

    fn check_moments(&self) -> std::result::Result<(), String> {
        for (params, opt) in [(&self.generator, &self.gen_opt), (&self.discriminators, &self.disc_opt)] {
            for (k, t) in params.iter() {
                for moments in [&opt.m, &opt.v] {
                    match moments.get(k) {
                        Some(m) if m.shape() == t.shape() => {}
                        _ => return Err(format!("optimizer moments missing or misshaped for {k:?}")),
                    }
                }
            }
            if opt.m.len() != params.len() || opt.v.len() != params.len() {
                return Err("optimizer moments for unknown parameters".into());
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, msg: String) -> Error {
        Error::Checkpoint { offset, msg }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error_at(
                self.pos,
                format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let at = self.pos;
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|e| self.error_at(at, format!("invalid UTF-8: {e}")))
    }
}
