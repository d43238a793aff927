//! Self-describing checkpoint files.
//!
//! A UTF-8 header of `key value` lines ending in `END`, followed by every
//! parameter array as little-endian f64 in header order. The header carries
//! the architecture, class names, the training config and a SHA-256 digest of
//! the parameters, which is verified on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use flint_core::models::{BundleSpec, DecoderSpec, InterpreterSpec, ModelBundle, PredictorSpec, TapConfig};
use flint_core::nn::{format_layers, parse_layers, Owner};

use crate::error::{CliError, CliResult};

pub const MAGIC: &str = "FLINT-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;
pub const FILE_NAME: &str = "checkpoint.flint";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    pub class_names: Vec<String>,
    /// Number of completed training epochs.
    pub epoch: usize,
    /// Canonical config text the checkpoint was trained with.
    pub config: String,
    pub config_digest: String,
}

fn join_usize(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn split_usize(s: &str) -> CliResult<Vec<usize>> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.parse().map_err(|_| bad(format!("bad integer list {s:?}"))))
        .collect()
}

fn bad(msg: String) -> CliError {
    CliError::Checkpoint(msg)
}

fn owner_from(s: &str) -> CliResult<Owner> {
    Owner::ALL
        .into_iter()
        .find(|o| o.as_str() == s)
        .ok_or_else(|| bad(format!("unknown owner {s:?}")))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let spec = self.bundle.spec();
        let p = &spec.predictor;
        let mut h = String::new();
        h.push_str(&format!("{MAGIC}\nformat_version {FORMAT_VERSION}\nepoch {}\n", self.epoch));
        h.push_str(&format!("classes {}\n", serde_json::to_string(&self.class_names)?));
        h.push_str(&format!("param_digest {}\n", self.bundle.params().digest()));
        h.push_str(&format!("config_digest {}\n", self.config_digest));
        h.push_str(&format!("predictor_layers {}\n", format_layers(&p.layers)));
        h.push_str(&format!("input_shape {}\n", join_usize(&p.input_shape)));
        h.push_str(&format!("taps {}\n", join_usize(&spec.taps.indices)));
        match &spec.taps.dims {
            Some(d) => h.push_str(&format!("tap_dims {}\n", join_usize(d))),
            None => h.push_str("tap_dims -\n"),
        }
        h.push_str(&format!("attributes {}\n", spec.interpreter.attributes));
        h.push_str(&format!("psi_layers {}\n", format_layers(&spec.interpreter.psi_layers)));
        h.push_str(&format!("decoder_layers {}\n", format_layers(&spec.decoder.layers)));
        for line in self.config.lines() {
            h.push_str(&format!("config {line}\n"));
        }
        for t in self.bundle.params().tensors() {
            h.push_str(&format!(
                "array {} {} {} f64 {}\n",
                t.name,
                t.owner,
                t.trainable,
                join_usize(&t.shape)
            ));
        }
        h.push_str("END\n");
        let mut out = h.into_bytes();
        for t in self.bundle.params().tensors() {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Checkpoint> {
        let end = bytes
            .windows(5)
            .position(|w| w == b"\nEND\n")
            .ok_or_else(|| bad("missing END marker".into()))?
            + 1;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
        let payload = &bytes[end + 4..];
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a FLINT checkpoint".into()));
        }

        let mut fields: std::collections::BTreeMap<&str, &str> = Default::default();
        let mut config = String::new();
        let mut arrays = Vec::new();
        for line in lines {
            let (key, value) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "config" => {
                    config.push_str(value);
                    config.push('\n');
                }
                "array" => {
                    let parts: Vec<&str> = value.split(' ').collect();
                    if parts.len() != 5 || parts[3] != "f64" {
                        return Err(bad(format!("bad array line {line:?}")));
                    }
                    let trainable = parts[2].parse::<bool>().map_err(|_| bad(format!("bad flag in {line:?}")))?;
                    arrays.push((parts[0], owner_from(parts[1])?, trainable, split_usize(parts[4])?));
                }
                _ => {
                    if fields.insert(key, value).is_some() {
                        return Err(bad(format!("duplicate header field {key:?}")));
                    }
                }
            }
        }
        let field = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing header field {k:?}")));
        let version: u32 = field("format_version")?
            .parse()
            .map_err(|_| bad("bad format_version".into()))?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let layers = |k: &str| -> CliResult<_> { parse_layers(field(k)?).map_err(|e| bad(format!("{k}: {e}"))) };
        let class_names: Vec<String> = serde_json::from_str(field("classes")?)?;
        let shape = split_usize(field("input_shape")?)?;
        let input_shape: [usize; 3] = shape
            .try_into()
            .map_err(|_| bad("input_shape must have three entries".into()))?;
        let tap_dims = match field("tap_dims")? {
            "-" => None,
            s => Some(split_usize(s)?),
        };
        let spec = BundleSpec {
            predictor: PredictorSpec {
                layers: layers("predictor_layers")?,
                input_shape,
                classes: class_names.len(),
            },
            taps: TapConfig {
                indices: split_usize(field("taps")?)?,
                dims: tap_dims,
            },
            interpreter: InterpreterSpec {
                attributes: field("attributes")?.parse().map_err(|_| bad("bad attributes".into()))?,
                psi_layers: layers("psi_layers")?,
            },
            decoder: DecoderSpec {
                layers: layers("decoder_layers")?,
            },
        };
        let mut bundle = ModelBundle::build(spec, 0).map_err(|e| bad(format!("architecture: {e}")))?;

        let store = bundle.params_mut();
        if store.tensors().len() != arrays.len() {
            return Err(bad(format!(
                "header lists {} arrays, architecture has {}",
                arrays.len(),
                store.tensors().len()
            )));
        }
        let mut offset = 0;
        for (t, (name, owner, trainable, shape)) in store.tensors_mut().iter_mut().zip(arrays) {
            if t.name != name || t.owner != owner || t.shape != shape {
                return Err(bad(format!("array {name} does not match architecture tensor {}", t.name)));
            }
            let n = t.values.len() * 8;
            let chunk = payload
                .get(offset..offset + n)
                .ok_or_else(|| bad("payload truncated".into()))?;
            for (v, b) in t.values.iter_mut().zip(chunk.chunks_exact(8)) {
                *v = f64::from_le_bytes(b.try_into().unwrap());
            }
            t.trainable = trainable;
            offset += n;
        }
        if offset != payload.len() {
            return Err(bad(format!("{} trailing payload bytes", payload.len() - offset)));
        }
        let digest = bundle.params().digest();
        if digest != field("param_digest")? {
            return Err(bad("parameter digest mismatch".into()));
        }
        Ok(Checkpoint {
            bundle,
            class_names,
            epoch: field("epoch")?.parse().map_err(|_| bad("bad epoch".into()))?,
            config,
            config_digest: field("config_digest")?.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
