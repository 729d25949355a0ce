//! Versioned JSON container of named parameter arrays.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::trainer::{ModelDims, ModelParameters};

pub const CHECKPOINT_FORMAT: &str = "nocsim-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedArray {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub dims: ModelDims,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParameters, config_hash: &str) -> Self {
        let mut arrays = Vec::new();
        params.visit("", &mut |name, values| {
            arrays.push(NamedArray {
                name: name.to_string(),
                values: values.to_vec(),
            })
        });
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.into(),
            dims: params.dims(),
            arrays,
        }
    }

    /// Rebuilds parameters; every array must match by name and length, in order.
    pub fn to_params(&self) -> std::result::Result<ModelParameters, String> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(format!("unknown format {:?}", self.format));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(format!("unsupported version {}", self.version));
        }
        self.dims.validate().map_err(|e| e.to_string())?;
        let mut params = ModelParameters::zeros(&self.dims);
        let mut next = self.arrays.iter();
        let mut problem = None;
        params.visit_mut("", &mut |name, values| {
            if problem.is_some() {
                return;
            }
            match next.next() {
                Some(a) if a.name == name && a.values.len() == values.len() => {
                    values.copy_from_slice(&a.values)
                }
                Some(a) => {
                    problem = Some(format!(
                        "array {:?} ({} values) where {name:?} ({} values) was expected",
                        a.name,
                        a.values.len(),
                        values.len()
                    ))
                }
                None => problem = Some(format!("missing array {name:?}")),
            }
        });
        if let Some(p) = problem {
            return Err(p);
        }
        if let Some(extra) = next.next() {
            return Err(format!("unexpected array {:?}", extra.name));
        }
        if !params.all_finite() {
            return Err("non-finite parameter values".into());
        }
        Ok(params)
    }
}

pub fn save_checkpoint(params: &ModelParameters, config_hash: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&Checkpoint::from_params(params, config_hash))
        .map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParameters, Checkpoint)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let params = ck.to_params().map_err(|r| Error::format(path, r))?;
    Ok((params, ck))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nsm::NsmDims;
    use crate::semcodec::CodecDims;

    fn dims() -> ModelDims {
        ModelDims {
            codec: CodecDims {
                pixels: 64,
                hidden: 8,
                feature: 8,
            },
            nsm: NsmDims {
                channels: 4,
                latent: 3,
                code_len: 4,
                depth: 2,
                tokens: 2,
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let p = ModelParameters::init(&dims(), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&p, "abc", &path).unwrap();
        let (q, ck) = load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(ck.config_hash, "abc");
    }

    #[test]
    fn renamed_or_truncated_arrays_are_rejected() {
        let p = ModelParameters::init(&dims(), 1).unwrap();
        let mut ck = Checkpoint::from_params(&p, "h");
        ck.arrays[0].values.pop();
        assert!(ck.to_params().is_err());
        let mut ck = Checkpoint::from_params(&p, "h");
        ck.arrays[1].name = "nope".into();
        assert!(ck.to_params().is_err());
        let mut ck = Checkpoint::from_params(&p, "h");
        ck.arrays.pop();
        assert!(ck.to_params().is_err());
        let mut ck = Checkpoint::from_params(&p, "h");
        ck.version = 9;
        assert!(ck.to_params().is_err());
    }
}
