//! Binary checkpoint container. All integers and floats are little-endian.
//!
//! ```text
//! "DSFC"                    magic
//! u16                       format version (1)
//! u8                        stage tag (1 or 2)
//! u32                       tensor count
//! per tensor, in name order:
//!   u16 + UTF-8             name
//!   u8                      rank
//!   u32 * rank              dims
//!   f32 * prod(dims)        values
//! u8                        classifier present (0 or 1)
//!   f64, f64                slope a, inflection b (only when present)
//! u32 + UTF-8               config echo, `key = value` lines
//! ```
//!
//! Loading rebuilds the architecture from the config echo and checks every
//! tensor against it, so a loaded checkpoint always re-saves to the same bytes.

use std::path::Path;

use dsfcn::cascade::Stage;
use dsfcn::classifier::SigmoidClassifier;
use dsfcn::grad::{ParamSet, Tensor};
use dsfcn::model::{FcnConfig, FcnModel};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"DSFC";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint is malformed: {0}")]
    Malformed(String),
    #[error("tensor '{name}' has dims {actual:?}, the config needs {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub config: FcnConfig,
    pub params: ParamSet<f32>,
    pub classifier: Option<SigmoidClassifier>,
}

fn config_echo(c: &FcnConfig) -> String {
    format!(
        "in_channels = {}\nnum_classes = {}\nbase_channels = {}\nnum_scales = {}\nblocks_per_scale = {}\n",
        c.in_channels, c.num_classes, c.base_channels, c.num_scales, c.blocks_per_scale
    )
}

fn parse_echo(text: &str) -> Result<FcnConfig> {
    let mut vals = [None; 5];
    const KEYS: [&str; 5] = ["in_channels", "num_classes", "base_channels", "num_scales", "blocks_per_scale"];
    for line in text.lines() {
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| CheckpointError::Malformed(format!("config line '{line}'")))?;
        let i = KEYS
            .iter()
            .position(|&key| key == k)
            .ok_or_else(|| CheckpointError::Malformed(format!("unknown config key '{k}'")))?;
        vals[i] = Some(
            v.parse::<usize>()
                .map_err(|e| CheckpointError::Malformed(format!("config value for {k}: {e}")))?,
        );
    }
    let get = |i: usize| vals[i].ok_or_else(|| CheckpointError::Malformed(format!("config lacks {}", KEYS[i])));
    let cfg = FcnConfig {
        in_channels: get(0)?,
        num_classes: get(1)?,
        base_channels: get(2)?,
        num_scales: get(3)?,
        blocks_per_scale: get(4)?,
    };
    cfg.validate().map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if config_echo(&cfg) != text {
        return Err(CheckpointError::Malformed("config echo is not in canonical form".into()));
    }
    Ok(cfg)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn utf8(&mut self, n: usize, what: &'static str) -> Result<&'a str> {
        std::str::from_utf8(self.take(n, what)?).map_err(|e| CheckpointError::Malformed(format!("{what}: {e}")))
    }
}

impl Checkpoint {
    pub fn from_model(model: &FcnModel, stage: Stage) -> Self {
        Self {
            stage,
            config: model.config,
            params: model.params.clone(),
            classifier: None,
        }
    }

    pub fn model(&self) -> FcnModel {
        FcnModel {
            config: self.config,
            params: self.params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.stage.index());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dims().len() as u8);
            for &d in t.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        match self.classifier {
            Some(c) => {
                out.push(1);
                out.extend_from_slice(&c.a.to_le_bytes());
                out.extend_from_slice(&c.b.to_le_bytes());
            }
            None => out.push(0),
        }
        let echo = config_echo(&self.config);
        out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
        out.extend_from_slice(echo.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if &r.array::<4>("magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let stage = Stage::from_index(r.u8("stage")?).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u16("tensor name length")? as usize;
            let name = r.utf8(len, "tensor name")?.to_string();
            let rank = r.u8("tensor rank")? as usize;
            let dims = (0..rank)
                .map(|_| r.u32("tensor dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let n = n
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.buf.len()))
                .ok_or(CheckpointError::Truncated("tensor values"))?;
            let raw = r.take(4 * n, "tensor values")?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push((name, dims, values));
        }
        let classifier = match r.u8("classifier flag")? {
            0 => None,
            1 => Some(SigmoidClassifier {
                a: r.f64("classifier slope")?,
                b: r.f64("classifier inflection")?,
            }),
            f => return Err(CheckpointError::Malformed(format!("classifier flag {f}"))),
        };
        let len = r.u32("config length")? as usize;
        let config = parse_echo(r.utf8(len, "config echo")?)?;
        if !r.buf.is_empty() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", r.buf.len())));
        }
        if config.in_channels != stage.in_channels() {
            return Err(CheckpointError::Malformed(format!(
                "stage {} checkpoint with {} input channels",
                stage.index(),
                config.in_channels
            )));
        }

        let mut specs = config.param_specs();
        specs.sort_by(|a, b| a.name.cmp(&b.name));
        if specs.len() != tensors.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} tensors stored, the config needs {}",
                tensors.len(),
                specs.len()
            )));
        }
        let mut params = ParamSet::new();
        for (spec, (name, dims, values)) in specs.into_iter().zip(tensors) {
            if spec.name != name {
                return Err(CheckpointError::Malformed(format!(
                    "expected tensor '{}', found '{name}'",
                    spec.name
                )));
            }
            if spec.dims != dims {
                return Err(CheckpointError::Shape {
                    name,
                    expected: spec.dims,
                    actual: dims,
                });
            }
            let t = Tensor::new(&dims, values).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            params.insert(name, t).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        }
        Ok(Self {
            stage,
            config,
            params,
            classifier,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| CheckpointError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        std::fs::write(path, self.to_bytes()).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }
}
