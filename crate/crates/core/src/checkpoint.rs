//! Self-describing binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LRCN"                      magic
//! u16                         format version (1)
//! u32 + bytes                 model configuration as JSON
//! u32                         number of parameter groups
//! per group:
//!   u16 + bytes               name (UTF-8)
//!   u8                        rank
//!   u32 × rank                shape
//!   f32 × prod(shape)         row-major values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BaselineConfig, BaselineModel, LrcnConfig, LrcnModel, Regressor};
use crate::nn::ParamView;

pub const MAGIC: &[u8; 4] = b"LRCN";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Lrcn(LrcnConfig),
    Baseline(BaselineConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub groups: Vec<NamedTensor>,
}

/// A loaded model of either architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Lrcn(LrcnModel<f32>),
    Baseline(BaselineModel<f32>),
}

impl AnyModel {
    pub fn conv(&self) -> &crate::nn::ConvStack<f32> {
        match self {
            AnyModel::Lrcn(m) => &m.conv,
            AnyModel::Baseline(m) => &m.conv,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_checkpoint_file(path)?.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            AnyModel::Lrcn(m) => save_lrcn(m, path),
            AnyModel::Baseline(m) => save_baseline(m, path),
        }
    }
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn write_checkpoint<W: Write>(mut w: W, config: &ModelConfig, params: &[ParamView<'_, f32>]) -> Result<()> {
    let io = |e| Error::io("<checkpoint>", e);
    let cfg = serde_json::to_vec(config)?;
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(cfg.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&cfg).map_err(io)?;
    w.write_all(&(params.len() as u32).to_le_bytes()).map_err(io)?;
    for p in params {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(name).map_err(io)?;
        w.write_all(&[p.shape.len() as u8]).map_err(io)?;
        for &d in &p.shape {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        let mut buf = Vec::with_capacity(p.data.len() * 4);
        for v in p.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| fmt_err(format!("checkpoint truncated while reading {what}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4, what)?.try_into().unwrap()))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    if read_exact(&mut r, 4, "magic")? != MAGIC {
        return Err(fmt_err("not a model checkpoint (bad magic)"));
    }
    let version = u16::from_le_bytes(read_exact(&mut r, 2, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(fmt_err(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = read_u32(&mut r, "config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(&read_exact(&mut r, cfg_len, "config")?)?;
    let n = read_u32(&mut r, "group count")? as usize;
    let mut groups = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = u16::from_le_bytes(read_exact(&mut r, 2, "name length")?.try_into().unwrap());
        let name = String::from_utf8(read_exact(&mut r, name_len as usize, "name")?)
            .map_err(|_| fmt_err("group name is not UTF-8"))?;
        let rank = read_exact(&mut r, 1, "rank")?[0] as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut r, "shape").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = read_exact(&mut r, len * 4, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        groups.push(NamedTensor { name, shape, data });
    }
    Ok(Checkpoint { config, groups })
}

pub fn read_checkpoint_file(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}

fn fill_params<M: Regressor<f32>>(model: &mut M, groups: &[NamedTensor]) -> Result<()> {
    let expected: Vec<(String, Vec<usize>)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.shape.clone()))
        .collect();
    if expected.len() != groups.len() {
        return Err(fmt_err(format!(
            "checkpoint holds {} parameter groups, configuration implies {}",
            groups.len(),
            expected.len()
        )));
    }
    for ((slot, (name, shape)), g) in model.params_mut().into_iter().zip(&expected).zip(groups) {
        if &g.name != name || &g.shape != shape {
            return Err(fmt_err(format!(
                "group {} {:?} does not match expected {} {:?}",
                g.name, g.shape, name, shape
            )));
        }
        slot.clone_from(&g.data);
    }
    Ok(())
}

impl Checkpoint {
    pub fn into_model(self) -> Result<AnyModel> {
        match self.config {
            ModelConfig::Lrcn(ref c) => {
                let mut m = LrcnModel::zeros(c.clone())?;
                fill_params(&mut m, &self.groups)?;
                Ok(AnyModel::Lrcn(m))
            }
            ModelConfig::Baseline(ref c) => {
                let mut m = BaselineModel::zeros(c.clone())?;
                fill_params(&mut m, &self.groups)?;
                Ok(AnyModel::Baseline(m))
            }
        }
    }
}

fn save_with(config: ModelConfig, params: &[ParamView<'_, f32>], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(f), &config, params)
}

pub fn save_lrcn(model: &LrcnModel<f32>, path: &Path) -> Result<()> {
    save_with(ModelConfig::Lrcn(model.config.clone()), &model.params(), path)
}

pub fn save_baseline(model: &BaselineModel<f32>, path: &Path) -> Result<()> {
    save_with(ModelConfig::Baseline(model.config.clone()), &model.params(), path)
}

pub fn load_lrcn(path: &Path) -> Result<LrcnModel<f32>> {
    match AnyModel::load(path)? {
        AnyModel::Lrcn(m) => Ok(m),
        AnyModel::Baseline(_) => Err(Error::Config(format!(
            "{} holds a single-image baseline, not a sequence model",
            path.display()
        ))),
    }
}
