//! Checkpoint directories:
//!
//! - `config.json`: the model config; its SHA-256 identifies the checkpoint.
//! - `weights.bin`: `S2CW` magic, little-endian u32 format version, u32 tensor
//!   count, then per tensor (name-sorted) its name, rank, dims and f32 data.
//! - `state.json`: stage, completed epochs and the optimizer/regime used.
//! - `log.jsonl`: one record per trained epoch.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use candle_nn::VarMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sketch2cad_core::dataset::NoiseConfig;

use crate::config::{ConstraintModelConfig, OptimConfig, PrimitiveModelConfig, Regime};
use crate::constraint::ConstraintNet;
use crate::error::{Error, Result};
use crate::primitive::PrimitiveNet;
use crate::train::EpochRecord;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"S2CW";
pub const WEIGHTS_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const STATE_FILE: &str = "state.json";
pub const LOG_FILE: &str = "log.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Primitive,
    Constraint,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Primitive => "primitive",
            Stage::Constraint => "constraint",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub stage: Stage,
    pub epochs_done: usize,
    pub regime: Regime,
    pub optim: OptimConfig,
    pub noise: NoiseConfig,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes via a temporary sibling and a rename so readers never see partial files.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Short content hash identifying a checkpoint by its config.
pub fn checkpoint_id(config_json: &[u8]) -> String {
    hex::encode(&Sha256::digest(config_json)[..8])
}

fn sorted_vars(vars: &VarMap) -> Vec<(String, candle_core::Var)> {
    let data = vars.data().lock().expect("var map poisoned");
    let mut v: Vec<_> = data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v
}

pub fn save_weights(path: &Path, vars: &VarMap) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = BufWriter::new(&mut out);
        let all = sorted_vars(vars);
        let mut put = |b: &[u8]| w.write_all(b).expect("in-memory write");
        put(WEIGHTS_MAGIC);
        put(&WEIGHTS_VERSION.to_le_bytes());
        put(&(all.len() as u32).to_le_bytes());
        for (name, var) in &all {
            put(&(name.len() as u32).to_le_bytes());
            put(name.as_bytes());
            let dims = var.dims();
            put(&(dims.len() as u32).to_le_bytes());
            for &d in dims {
                put(&(d as u64).to_le_bytes());
            }
            for x in var.as_tensor().flatten_all()?.to_vec1::<f32>()? {
                put(&x.to_le_bytes());
            }
        }
    }
    write_atomic(path, &out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(Error::checkpoint(self.path, "truncated weights file"));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Loads weights into an already-built model; names and shapes must match exactly.
pub fn load_weights(path: &Path, vars: &VarMap) -> Result<()> {
    let bytes = read(path)?;
    let mut c = Cursor { buf: &bytes, path };
    if c.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::checkpoint(path, "not a weights file (bad magic)"));
    }
    let version = c.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::checkpoint(path, format!("unsupported weights version {version}")));
    }
    let count = c.u32()? as usize;
    let model = sorted_vars(vars);
    if count != model.len() {
        return Err(Error::checkpoint(
            path,
            format!("{count} tensors stored, model has {}", model.len()),
        ));
    }
    for (name, var) in &model {
        let len = c.u32()? as usize;
        let stored = String::from_utf8_lossy(c.take(len)?).into_owned();
        if &stored != name {
            return Err(Error::checkpoint(path, format!("expected tensor {name}, found {stored}")));
        }
        let rank = c.u32()? as usize;
        let dims = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if dims != var.dims() {
            return Err(Error::checkpoint(
                path,
                format!("{name}: stored shape {dims:?}, model {:?}", var.dims()),
            ));
        }
        let n: usize = dims.iter().product();
        let data: Vec<f32> = c
            .take(n * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        var.set(&Tensor::from_vec(data, dims, &Device::Cpu)?)?;
    }
    if !c.buf.is_empty() {
        return Err(Error::checkpoint(path, "trailing bytes after last tensor"));
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("config serializes");
    s.push(b'\n');
    s
}

fn parse_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(|e| Error::checkpoint(path, e.to_string()))
}

/// Handle on a checkpoint directory.
#[derive(Debug, Clone)]
pub struct CheckpointDir {
    pub path: PathBuf,
}

impl CheckpointDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn exists(&self) -> bool {
        self.file(CONFIG_FILE).is_file() && self.file(WEIGHTS_FILE).is_file()
    }

    fn save<C: Serialize>(&self, config: &C, vars: &VarMap, state: &TrainState) -> Result<()> {
        fs::create_dir_all(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let cfg = to_json(config);
        let cfg_path = self.file(CONFIG_FILE);
        match fs::read(&cfg_path) {
            Ok(old) if old == cfg => {}
            _ => write_atomic(&cfg_path, &cfg)?,
        }
        save_weights(&self.file(WEIGHTS_FILE), vars)?;
        write_atomic(&self.file(STATE_FILE), &to_json(state))
    }

    pub fn save_primitive(&self, net: &PrimitiveNet, state: &TrainState) -> Result<()> {
        self.save(net.config(), net.vars(), state)
    }

    pub fn save_constraint(&self, net: &ConstraintNet, state: &TrainState) -> Result<()> {
        self.save(net.config(), net.vars(), state)
    }

    pub fn state(&self) -> Result<Option<TrainState>> {
        let p = self.file(STATE_FILE);
        if !p.is_file() {
            return Ok(None);
        }
        parse_json(&p).map(Some)
    }

    fn check_stage(&self, stage: Stage) -> Result<()> {
        if let Some(s) = self.state()? {
            if s.stage != stage {
                return Err(Error::checkpoint(
                    &self.path,
                    format!("holds a {} checkpoint, expected {stage}", s.stage),
                ));
            }
        }
        Ok(())
    }

    pub fn id(&self) -> Result<String> {
        Ok(checkpoint_id(&read(&self.file(CONFIG_FILE))?))
    }

    pub fn primitive_config(&self) -> Result<PrimitiveModelConfig> {
        self.check_stage(Stage::Primitive)?;
        parse_json(&self.file(CONFIG_FILE))
    }

    pub fn constraint_config(&self) -> Result<ConstraintModelConfig> {
        self.check_stage(Stage::Constraint)?;
        parse_json(&self.file(CONFIG_FILE))
    }

    pub fn load_primitive(&self) -> Result<PrimitiveNet> {
        let net = PrimitiveNet::new(&self.primitive_config()?)?;
        load_weights(&self.file(WEIGHTS_FILE), net.vars())?;
        Ok(net)
    }

    pub fn load_constraint(&self) -> Result<ConstraintNet> {
        let net = ConstraintNet::new(&self.constraint_config()?)?;
        load_weights(&self.file(WEIGHTS_FILE), net.vars())?;
        Ok(net)
    }

    pub fn append_log(&self, record: &EpochRecord) -> Result<()> {
        let p = self.file(LOG_FILE);
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(|e| Error::io(&p, e))?;
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        f.write_all(&line).map_err(|e| Error::io(&p, e))
    }

    pub fn read_log(&self) -> Result<Vec<EpochRecord>> {
        let p = self.file(LOG_FILE);
        let mut s = String::new();
        match fs::File::open(&p) {
            Ok(mut f) => f.read_to_string(&mut s).map_err(|e| Error::io(&p, e))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&p, e)),
        };
        s.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::checkpoint(&p, e.to_string())))
            .collect()
    }
}
