//! Checkpoint container: a text header naming every field and parameter
//! shape, then the parameters as raw little-endian `f32` in declared order.

use std::fmt::Write as _;
use std::path::Path;

use afinet_autograd::Tensor;

use super::{AfinetModel, ModelConfig, ModelMeta};
use crate::error::{Error, Result};
use crate::TOOL_VERSION;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "AFINET-CHECKPOINT";

fn dims(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

impl AfinetModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let config = serde_json::to_string(&self.config).expect("serializable config");
        let mut h = String::new();
        let m = &self.meta;
        let _ = writeln!(h, "{MAGIC}");
        let _ = writeln!(h, "version {CHECKPOINT_VERSION}");
        let _ = writeln!(h, "tool {TOOL_VERSION}");
        let _ = writeln!(h, "num_classes {}", self.config.num_classes);
        let _ = writeln!(h, "seed {}", m.seed);
        let _ = writeln!(h, "dataset_digest {}", m.dataset_digest);
        let _ = writeln!(h, "config_digest {}", m.config_digest);
        let _ = writeln!(h, "input_mean {:?}", m.input_mean);
        let _ = writeln!(h, "input_std {:?}", m.input_std);
        let _ = writeln!(h, "config {config}");
        let _ = writeln!(h, "params {}", self.params.len());
        for (spec, p) in self.config.param_specs().iter().zip(&self.params) {
            let _ = writeln!(h, "param {} {}", spec.name, dims(p.shape()));
        }
        let _ = writeln!(h, "end");
        let mut out = h.into_bytes();
        for p in &self.params {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut lines = Header { bytes, pos: 0 };
        if lines.next("magic")? != MAGIC {
            return Err(Error::checkpoint("magic", "not an afinet checkpoint"));
        }
        let version: u32 = lines.field("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::checkpoint(
                "version",
                format!("version {version}, this build reads {CHECKPOINT_VERSION}"),
            ));
        }
        lines.raw_field("tool")?;
        let num_classes: usize = lines.field("num_classes")?;
        let seed: u64 = lines.field("seed")?;
        let dataset_digest = lines.raw_field("dataset_digest")?.to_string();
        let config_digest = lines.raw_field("config_digest")?.to_string();
        let input_mean: f64 = lines.field("input_mean")?;
        let input_std: f64 = lines.field("input_std")?;
        let config: ModelConfig = serde_json::from_str(lines.raw_field("config")?)
            .map_err(|e| Error::checkpoint("config", e.to_string()))?;
        if config.num_classes != num_classes {
            return Err(Error::checkpoint(
                "num_classes",
                format!(
                    "{num_classes} disagrees with config value {}",
                    config.num_classes
                ),
            ));
        }
        config
            .validate()
            .map_err(|e| Error::checkpoint("config", e.to_string()))?;
        let specs = config.param_specs();
        let count: usize = lines.field("params")?;
        if count != specs.len() {
            return Err(Error::checkpoint(
                "params",
                format!("{count} parameters, configuration declares {}", specs.len()),
            ));
        }
        for spec in &specs {
            let line = lines.raw_field("param")?;
            let expected = format!("{} {}", spec.name, dims(&spec.shape));
            if line != expected {
                return Err(Error::checkpoint(
                    format!("param {}", spec.name),
                    format!("found `{line}`, expected `{expected}`"),
                ));
            }
        }
        if lines.next("end")? != "end" {
            return Err(Error::checkpoint("end", "missing header terminator"));
        }
        let body = &bytes[lines.pos..];
        let total: usize = specs
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum();
        if body.len() != 4 * total {
            return Err(Error::checkpoint(
                "body",
                format!("{} bytes, expected {}", body.len(), 4 * total),
            ));
        }
        let mut values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let params = specs
            .iter()
            .map(|s| {
                let n = s.shape.iter().product();
                Tensor::from_vec(values.by_ref().take(n).collect(), &s.shape).expect("spec shape")
            })
            .collect();
        Ok(Self {
            config,
            params,
            meta: ModelMeta {
                seed,
                dataset_digest,
                config_digest,
                input_mean,
                input_std,
            },
        })
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn next(&mut self, field: &str) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::checkpoint(field, "truncated header"))?;
        let line =
            std::str::from_utf8(&rest[..nl]).map_err(|_| Error::checkpoint(field, "not UTF-8"))?;
        self.pos += nl + 1;
        Ok(line)
    }

    fn raw_field(&mut self, field: &str) -> Result<&'a str> {
        let line = self.next(field)?;
        match line.split_once(' ') {
            Some((key, value)) if key == field => Ok(value),
            _ => Err(Error::checkpoint(
                field,
                format!("expected `{field} ...`, found `{line}`"),
            )),
        }
    }

    fn field<V: std::str::FromStr>(&mut self, field: &str) -> Result<V> {
        let raw = self.raw_field(field)?;
        raw.parse()
            .map_err(|_| Error::checkpoint(field, format!("cannot parse `{raw}`")))
    }
}

/// Writes the checkpoint through a temporary file and a rename, so readers
/// never observe a partial file.
pub fn save_checkpoint(model: &AfinetModel, path: &Path) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, model.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<AfinetModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    AfinetModel::from_bytes(&bytes)
}
