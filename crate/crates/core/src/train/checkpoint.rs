//! `.mdck` checkpoint files.
//!
//! ```text
//! "MDCK" | u32 version | u32 len + UTF-8 key=value config echo
//! u64 epoch | u64 adam step | u32 block count
//! per block: u32 len + UTF-8 name | u32 ndim | u64 dims... | f64 data...
//! ```
//!
//! All integers and floats are little-endian. Blocks are the CNN tensors in
//! canonical order, then `dc.theta` for unrolled models, then `adam.m.*` and
//! `adam.v.*` for every trainable tensor in the same order.

use std::path::Path;

use crate::config::KvConfig;
use crate::dc::DcParams;
use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic};
use crate::model::{Model, ModelConfig, ResNetParams};
use crate::numcore::Tensor;
use crate::train::adam::AdamState;

pub const MAGIC: &[u8; 4] = b"MDCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Echo of the settings that produced this state. Must contain the model
    /// keys `n_iterations`, `n_filters` and `n_blocks`.
    pub config: KvConfig,
    pub model: Model,
    pub adam: AdamState,
    /// Number of completed epochs.
    pub epoch: u64,
}

pub fn model_config_to_kv(cfg: &ModelConfig, kv: &mut KvConfig) {
    kv.set("n_iterations", cfg.n_iterations);
    kv.set("n_filters", cfg.n_filters);
    kv.set("n_blocks", cfg.n_blocks);
}

pub fn model_config_from_kv(kv: &KvConfig) -> Result<ModelConfig> {
    let need = |k: &str| {
        kv.get_parsed::<usize>(k)?
            .ok_or_else(|| Error::InvalidArgument(format!("config echo lacks {k}")))
    };
    Ok(ModelConfig {
        n_iterations: need("n_iterations")?,
        n_filters: need("n_filters")?,
        n_blocks: need("n_blocks")?,
    })
}

/// Parameter names in checkpoint order, including `dc.theta` if present.
pub fn trainable_names(model: &Model) -> Vec<String> {
    let mut names = model.resnet.tensor_names();
    if model.dc.is_some() {
        names.push("dc.theta".into());
    }
    names
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_block(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_str(out, name);
    put_u32(out, t.shape().len() as u32);
    for d in t.shape() {
        put_u64(out, *d as u64);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let names = trainable_names(&self.model);
        let mut tensors: Vec<Tensor> = self.model.resnet.tensors().into_iter().cloned().collect();
        if let Some(dc) = self.model.dc {
            tensors.push(Tensor::scalar(dc.theta));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_str(&mut out, &self.config.render());
        put_u64(&mut out, self.epoch);
        put_u64(&mut out, self.adam.step);
        put_u32(&mut out, (3 * names.len()) as u32);
        for (n, t) in names.iter().zip(&tensors) {
            put_block(&mut out, n, t);
        }
        for (n, t) in names.iter().zip(&self.adam.m) {
            put_block(&mut out, &format!("adam.m.{n}"), t);
        }
        for (n, t) in names.iter().zip(&self.adam.v) {
            put_block(&mut out, &format!("adam.v.{n}"), t);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(4)? != MAGIC {
            return Err(Error::format(origin, "bad magic, expected MDCK"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(origin, format!("unsupported version {version}")));
        }
        let config_text = r.string()?;
        let config = KvConfig::parse(&config_text, origin)?;
        let model_cfg =
            model_config_from_kv(&config).map_err(|e| Error::format(origin, e.to_string()))?;
        model_cfg
            .validate()
            .map_err(|e| Error::format(origin, e.to_string()))?;
        let epoch = r.u64()?;
        let step = r.u64()?;
        let n_blocks = r.u32()? as usize;

        let mut model = Model {
            config: model_cfg,
            resnet: ResNetParams::zeros(model_cfg.n_filters, model_cfg.n_blocks),
            dc: model_cfg.is_unrolled().then(DcParams::default),
        };
        let names = trainable_names(&model);
        if n_blocks != 3 * names.len() {
            return Err(Error::format(
                origin,
                format!("expected {} blocks, found {n_blocks}", 3 * names.len()),
            ));
        }
        let mut expected_shapes: Vec<Vec<usize>> = model
            .resnet
            .tensors()
            .iter()
            .map(|t| t.shape().to_vec())
            .collect();
        if model.dc.is_some() {
            expected_shapes.push(vec![1]);
        }

        let mut read_group = |prefix: &str| -> Result<Vec<Tensor>> {
            names
                .iter()
                .zip(&expected_shapes)
                .map(|(n, shape)| r.block(&format!("{prefix}{n}"), shape))
                .collect()
        };
        let params = read_group("")?;
        let m = read_group("adam.m.")?;
        let v = read_group("adam.v.")?;
        if r.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after last block"));
        }

        let n_cnn = model.resnet.tensors().len();
        for (dst, src) in model.resnet.tensors_mut().into_iter().zip(&params[..n_cnn]) {
            *dst = src.clone();
        }
        if let Some(dc) = model.dc.as_mut() {
            dc.theta = params[n_cnn].item();
        }
        Ok(Self {
            config,
            model,
            adam: AdamState { step, m, v },
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.origin, "unexpected end of file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(self.origin, "invalid UTF-8"))
    }

    fn block(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let got = self.string()?;
        if got != name {
            return Err(Error::format(
                self.origin,
                format!("expected block {name}, found {got}"),
            ));
        }
        let ndim = self.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            dims.push(self.u64()? as usize);
        }
        if dims != shape {
            return Err(Error::format(
                self.origin,
                format!("block {name} has shape {dims:?}, expected {shape:?}"),
            ));
        }
        let n: usize = dims.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::format(self.origin, format!("block {name} too large"))
        })?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(dims, data).map_err(|e| Error::format(self.origin, e.to_string()))
    }
}
