//! Text manifest of `key = value` lines plus a blob of little-endian f32
//! values, tensors concatenated in manifest order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use diffcore::{Scalar, Tensor};

use super::{Model, ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

const FORMAT: &str = "taanp-checkpoint/1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    /// Scalar metadata; keys must not start with `tensor `.
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

impl Checkpoint {
    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Integrity(format!("checkpoint lacks `{key}`")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Integrity(format!("checkpoint `{key}` has bad value `{raw}`")))
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.push((name.into(), t));
    }

    /// Write `path` (manifest) and its `.bin` sibling.
    pub fn save(&self, path: &Path) -> Result<Vec<PathBuf>> {
        let blob = blob_path(path);
        let mut manifest = format!("format = {FORMAT}\n");
        let _ = writeln!(
            manifest,
            "blob = {}",
            blob.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
        );
        for (k, v) in &self.meta {
            let _ = writeln!(manifest, "{k} = {v}");
        }
        let mut bytes = Vec::new();
        for (name, t) in &self.tensors {
            let (r, c) = t.dims2()?;
            let _ = writeln!(manifest, "tensor {name} = {r}x{c}");
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_atomic(&blob, &bytes)?;
        write_atomic(path, manifest.as_bytes())?;
        Ok(vec![path.to_path_buf(), blob])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let blob = blob_path(path);
        let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
        let mut ck = Checkpoint::default();
        let mut offset = 0usize;
        let mut format_ok = false;
        let file = path.display().to_string();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: file.clone(),
                line: i + 1,
                column: 1,
                message: "expected `key = value`".into(),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if let Some(name) = k.strip_prefix("tensor ") {
                let bad_shape = || Error::Parse {
                    file: file.clone(),
                    line: i + 1,
                    column: k.len() + 3,
                    message: format!("bad tensor shape `{v}`"),
                };
                let (r, c) = v.split_once('x').ok_or_else(bad_shape)?;
                let r: usize = r.parse().map_err(|_| bad_shape())?;
                let c: usize = c.parse().map_err(|_| bad_shape())?;
                let n = r * c;
                let end = offset + 4 * n;
                if end > bytes.len() {
                    return Err(Error::Integrity(format!("blob too short for tensor {name}")));
                }
                let data = bytes[offset..end]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                offset = end;
                ck.tensors.push((name.to_string(), Tensor::matrix(r, c, data)?));
            } else if k == "format" {
                format_ok = v == FORMAT;
            } else if k != "blob" {
                ck.meta.insert(k.to_string(), v.to_string());
            }
        }
        if !format_ok {
            return Err(Error::Integrity(format!("{file} is not a {FORMAT} manifest")));
        }
        if offset != bytes.len() {
            return Err(Error::Integrity("blob has trailing bytes".into()));
        }
        Ok(ck)
    }
}

impl<S: Scalar> Model<S> {
    /// Architecture metadata and parameters (stored as f32).
    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = self.config();
        let mut ck = Checkpoint::default();
        ck.set("variant", c.variant);
        ck.set("hidden", c.hidden);
        ck.set("rep_dim", c.rep_dim);
        ck.set("latent_dim", c.latent_dim);
        ck.set("heads", c.heads);
        ck.set("dropout", c.dropout);
        ck.set("sigma_floor", c.sigma_floor);
        ck.set(
            "fixed_sigma",
            c.fixed_sigma.map_or("none".to_string(), |s| s.to_string()),
        );
        ck.set("x_dim", self.x_dim());
        ck.set("y_scale", self.y_scale());
        for (_, name, t) in self.params().iter() {
            ck.push_tensor(name, t.cast());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let variant: Variant = ck.get("variant")?.parse()?;
        let fixed = match ck.get("fixed_sigma")? {
            "none" => None,
            _ => Some(ck.parse("fixed_sigma")?),
        };
        let config = ModelConfig {
            variant,
            hidden: ck.parse("hidden")?,
            rep_dim: ck.parse("rep_dim")?,
            latent_dim: ck.parse("latent_dim")?,
            heads: ck.parse("heads")?,
            dropout: ck.parse("dropout")?,
            sigma_floor: ck.parse("sigma_floor")?,
            fixed_sigma: fixed,
        };
        let mut model = Model::<S>::new(config, ck.parse("x_dim")?, ck.parse("y_scale")?, 0)?;
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            let name = model.params().name(id).to_string();
            let t = ck
                .tensor(&name)
                .ok_or_else(|| Error::Integrity(format!("checkpoint lacks tensor {name}")))?;
            let slot = model.params_mut().get_mut(id);
            if slot.shape() != t.shape() {
                return Err(Error::Integrity(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.cast();
        }
        Ok(model)
    }
}
