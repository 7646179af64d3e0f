//! Parameter checkpoints: a versioned JSON map `name -> {shape, values}`.
//! Floats are written shortest-round-trip, so save/load is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::Parameter;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub meta: serde_json::Value,
    pub params: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn from_params<'a>(meta: serde_json::Value, params: impl IntoIterator<Item = &'a Parameter>) -> Self {
        let params = params
            .into_iter()
            .map(|p| {
                (
                    p.name.clone(),
                    TensorRecord {
                        shape: p.value.shape().to_vec(),
                        values: p.value.data().to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            meta,
            params,
        }
    }

    /// Copies stored values into `params`, matching by name and checking
    /// shapes. Every parameter must be present.
    pub fn restore_into<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter>) -> Result<()> {
        for p in params {
            let rec = self
                .params
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("parameter `{}` missing from checkpoint", p.name)))?;
            if rec.shape != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}`: checkpoint shape {:?} but model expects {:?}",
                    p.name,
                    rec.shape,
                    p.value.shape()
                )));
            }
            p.value = Tensor::from_vec(&rec.shape, rec.values.clone())?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Writes to a sibling temp file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ckpt: Checkpoint = crate::json::from_str(&text, &path.display().to_string())?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        for (name, rec) in &ckpt.params {
            if rec.shape.iter().product::<usize>() != rec.values.len() {
                return Err(Error::Checkpoint(format!("parameter `{name}` has inconsistent shape")));
            }
        }
        Ok(ckpt)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Parameter::new("a", Tensor::uniform(&[3, 7], 1.0, &mut rng));
        let mut b = Parameter::new("b", Tensor::uniform(&[5], 1e-3, &mut rng));
        b.value.data_mut()[0] = 1.0 / 3.0;
        b.value.data_mut()[1] = -5e-300;
        let ckpt = Checkpoint::from_params(serde_json::json!({"k": 1}), [&a, &b]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);

        let mut a2 = Parameter::new("a", Tensor::zeros(&[3, 7]));
        let mut b2 = Parameter::new("b", Tensor::zeros(&[5]));
        back.restore_into([&mut a2, &mut b2]).unwrap();
        assert_eq!(a2.value, a.value);
        assert_eq!(b2.value, b.value);
    }

    #[test]
    fn shape_mismatch_is_diagnosed() {
        let a = Parameter::new("a", Tensor::zeros(&[3, 7]));
        let ckpt = Checkpoint::from_params(serde_json::Value::Null, [&a]);
        let mut wrong = Parameter::new("a", Tensor::zeros(&[3, 8]));
        let err = ckpt.restore_into([&mut wrong]).unwrap_err().to_string();
        assert!(err.contains("[3, 7]") && err.contains("[3, 8]"), "{err}");
        let mut missing = Parameter::new("z", Tensor::zeros(&[1]));
        assert!(ckpt.restore_into([&mut missing]).is_err());
    }
}
