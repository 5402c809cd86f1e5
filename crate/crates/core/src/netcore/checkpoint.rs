//! Self-describing JSON checkpoint container.
//!
//! Holds every named array with its shape and Adam moments, the dtype tag,
//! the optimizer step counter, a flat copy of the run configuration and
//! free-form model metadata. Floats are written in shortest round-trip form
//! and parsed with exact round-tripping, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{AdamState, Param, ParamStore};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "genreg-checkpoint";
pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u64,
    pub dtype: String,
    pub step: u64,
    pub config: BTreeMap<String, String>,
    pub meta: BTreeMap<String, serde_json::Value>,
    pub arrays: Vec<ArrayRecord>,
}

impl Checkpoint {
    pub fn from_store(
        store: &ParamStore,
        config: BTreeMap<String, String>,
        meta: BTreeMap<String, serde_json::Value>,
    ) -> Self {
        let adam = store.adam_state();
        let arrays = store
            .params()
            .iter()
            .enumerate()
            .map(|(i, p)| ArrayRecord {
                name: p.name.clone(),
                shape: p.shape.clone(),
                values: p.values.clone(),
                adam_m: adam.m[i].clone(),
                adam_v: adam.v[i].clone(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dtype: "f64".into(),
            step: adam.step,
            config,
            meta,
            arrays,
        }
    }

    pub fn to_store(&self) -> Result<ParamStore> {
        let mut params = Vec::with_capacity(self.arrays.len());
        let mut adam = AdamState {
            step: self.step,
            ..AdamState::default()
        };
        for a in &self.arrays {
            let len: usize = a.shape.iter().product();
            if a.values.len() != len || a.adam_m.len() != len || a.adam_v.len() != len {
                return Err(Error::ShapeMismatch(format!(
                    "array `{}` has shape {:?} but {} values",
                    a.name,
                    a.shape,
                    a.values.len()
                )));
            }
            if a.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("array `{}` holds non-finite values", a.name)));
            }
            params.push(Param {
                name: a.name.clone(),
                shape: a.shape.clone(),
                values: a.values.clone(),
            });
            adam.m.push(a.adam_m.clone());
            adam.v.push(a.adam_v.clone());
        }
        Ok(ParamStore::from_raw(params, adam))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::format(origin, "missing `version` field"))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                path: origin.to_path_buf(),
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ckpt: Checkpoint =
            serde_json::from_value(value).map_err(|e| Error::format(origin, e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::format(origin, format!("unexpected format tag `{}`", ckpt.format)));
        }
        if ckpt.dtype != "f64" {
            return Err(Error::format(origin, format!("unsupported dtype `{}`", ckpt.dtype)));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{adam_step, AdamConfig, Gradients};
    use crate::pointcloud::seeded_rng;
    use rand::Rng;

    fn trained_store() -> ParamStore {
        let mut rng = seeded_rng(9);
        let mut s = ParamStore::new();
        let a = s.add_kaiming("a", 4, 3, &mut rng);
        let b = s.add_zeros("b", vec![3]);
        let mut g = Gradients::zeros_like(&s);
        for id in [a, b] {
            for v in g.get_mut(id).iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        adam_step(&mut s, &g, &AdamConfig::default()).unwrap();
        s
    }

    #[test]
    fn store_round_trip_is_bit_exact() {
        let s = trained_store();
        let ck = Checkpoint::from_store(&s, BTreeMap::from([("k".into(), "v".into())]), BTreeMap::new());
        let back = Checkpoint::from_json(&ck.to_json(), Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_store().unwrap(), s);
    }

    #[test]
    fn version_is_mandatory_and_checked() {
        let s = trained_store();
        let ck = Checkpoint::from_store(&s, BTreeMap::new(), BTreeMap::new());
        let mut v: serde_json::Value = serde_json::from_str(&ck.to_json()).unwrap();
        v["version"] = 99.into();
        assert!(matches!(
            Checkpoint::from_json(&v.to_string(), Path::new("mem")),
            Err(Error::Version { found: 99, .. })
        ));
        v.as_object_mut().unwrap().remove("version");
        assert!(matches!(Checkpoint::from_json(&v.to_string(), Path::new("mem")), Err(Error::Format { .. })));
    }
}
