//! Model bundle directory: run config, vocabulary, canonical gripper cloud
//! and one checkpoint per trained model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Preprocessing;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flowgen::{Variant, VelocityModel};
use crate::netcore::Checkpoint;
use crate::pointcloud::{read_cloud, write_cloud, PointCloud};
use crate::synthtasks::Vocabulary;

pub const BUNDLE_FORMAT: &str = "genreg-bundle";
pub const BUNDLE_VERSION: u64 = 1;

const INDEX: &str = "bundle.json";
const CONFIG: &str = "config.txt";
const VOCABULARY: &str = "vocabulary.txt";
const GRIPPER: &str = "gripper.txt";
const PICK: &str = "pick.json";
const PLACE: &str = "place.json";

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    format: String,
    version: u64,
    task: String,
    models: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PolicyBundle {
    pub config: RunConfig,
    /// Task the bundle was trained on, as named in the dataset.
    pub task: String,
    pub vocabulary: Vocabulary,
    /// Preprocessed canonical gripper, in its own (uncentered) frame.
    pub gripper: PointCloud,
    pub pick: Option<VelocityModel>,
    pub place: Option<VelocityModel>,
}

impl PolicyBundle {
    pub fn preprocessing(&self) -> Preprocessing {
        Preprocessing::from_config(&self.config)
    }

    pub fn pick_model(&self) -> Result<&VelocityModel> {
        self.pick
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("bundle has no pick model".into()))
    }

    pub fn place_model(&self) -> Result<&VelocityModel> {
        self.place
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("bundle has no place model".into()))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut models = Vec::new();
        let ckpt_config = self
            .config
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        for (name, file, model) in [("pick", PICK, &self.pick), ("place", PLACE, &self.place)] {
            if let Some(m) = model {
                m.to_checkpoint(std::collections::BTreeMap::clone(&ckpt_config)).save(dir.join(file))?;
                models.push(name.to_string());
            }
        }
        self.config.save(dir.join(CONFIG))?;
        let vocab_path = dir.join(VOCABULARY);
        let mut vocab_text = self.vocabulary.phrases().join("\n");
        vocab_text.push('\n');
        std::fs::write(&vocab_path, vocab_text).map_err(|e| Error::io(&vocab_path, e))?;
        write_cloud(dir.join(GRIPPER), &self.gripper)?;
        let index = Index {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            task: self.task.clone(),
            models,
        };
        let index_path = dir.join(INDEX);
        let text = serde_json::to_string_pretty(&index).expect("index serializes");
        std::fs::write(&index_path, text + "\n").map_err(|e| Error::io(&index_path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let index_path = dir.join(INDEX);
        let text = std::fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let index: Index = serde_json::from_str(&text).map_err(|e| Error::format(&index_path, e.to_string()))?;
        if index.format != BUNDLE_FORMAT {
            return Err(Error::format(&index_path, format!("not a model bundle (format `{}`)", index.format)));
        }
        if index.version != BUNDLE_VERSION {
            return Err(Error::Version {
                path: index_path,
                found: index.version,
                expected: BUNDLE_VERSION,
            });
        }
        let config = RunConfig::load(dir.join(CONFIG))?;
        let vocab_path = dir.join(VOCABULARY);
        let vocab_text = std::fs::read_to_string(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?;
        let vocabulary = Vocabulary::from_phrases(vocab_text.lines().map(str::to_string).collect())
            .map_err(|e| Error::format(&vocab_path, e.to_string()))?;
        let gripper = read_cloud(dir.join(GRIPPER))?;
        let load_model = |name: &str, file: &str, variant: Variant| -> Result<Option<VelocityModel>> {
            if !index.models.iter().any(|m| m == name) {
                return Ok(None);
            }
            let path = dir.join(file);
            let model = VelocityModel::from_checkpoint(&Checkpoint::load(&path)?, &path)?;
            if model.variant() != variant {
                return Err(Error::format(&path, format!("expected a {} model", variant.name())));
            }
            if model.dims().vocab != vocabulary.len() {
                return Err(Error::format(
                    &path,
                    format!("model vocabulary {} != bundle vocabulary {}", model.dims().vocab, vocabulary.len()),
                ));
            }
            Ok(Some(model))
        };
        let pick = load_model("pick", PICK, Variant::Single)?;
        let place = load_model("place", PLACE, Variant::Pair)?;
        Ok(Self {
            config,
            task: index.task,
            vocabulary,
            gripper,
            pick,
            place,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowgen::ModelSettings;
    use crate::synthtasks::canonical_gripper;

    fn model(variant: Variant, vocab: usize) -> VelocityModel {
        let c = RunConfig {
            feature_dim: 4,
            language_dim: 4,
            time_dim: 4,
            mask_dim: 4,
            encoder_hidden: 4,
            hidden: 4,
            ..RunConfig::desk()
        };
        VelocityModel::new(
            ModelSettings {
                dims: c.model_dims(vocab),
                variant,
                sigma: 0.02,
                coord_scale: 20.0,
                time_scale: 100.0,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let vocab = Vocabulary::standard();
        let bundle = PolicyBundle {
            config: RunConfig::desk(),
            task: "peg-in-slot".into(),
            gripper: super::super::prepare_gripper(&canonical_gripper(600, 0).unwrap(), 32, 0.004, 0).unwrap(),
            pick: Some(model(Variant::Single, vocab.len())),
            place: Some(model(Variant::Pair, vocab.len())),
            vocabulary: vocab,
        };
        let dir = tempfile::tempdir().unwrap();
        bundle.save(dir.path()).unwrap();
        let back = PolicyBundle::load(dir.path()).unwrap();
        assert_eq!(back.config, bundle.config);
        assert_eq!(back.vocabulary, bundle.vocabulary);
        assert_eq!(back.gripper, bundle.gripper);
        assert_eq!(back.pick.unwrap().store.params(), bundle.pick.as_ref().unwrap().store.params());
        assert_eq!(back.place.unwrap().settings, bundle.place.as_ref().unwrap().settings);
        assert_eq!(back.task, "peg-in-slot");

        // Saving again gives identical bytes.
        let dir2 = tempfile::tempdir().unwrap();
        bundle.save(dir2.path()).unwrap();
        for f in [INDEX, CONFIG, VOCABULARY, GRIPPER, PICK, PLACE] {
            assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(dir2.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn missing_or_mismatched_models_are_reported() {
        let vocab = Vocabulary::standard();
        let bundle = PolicyBundle {
            config: RunConfig::desk(),
            task: "x".into(),
            gripper: canonical_gripper(600, 0).unwrap(),
            pick: None,
            place: Some(model(Variant::Pair, vocab.len() + 1)),
            vocabulary: vocab,
        };
        let dir = tempfile::tempdir().unwrap();
        bundle.save(dir.path()).unwrap();
        match PolicyBundle::load(dir.path()) {
            Err(Error::Format { path, .. }) => assert!(path.ends_with(PLACE)),
            other => panic!("{:?}", other.map(|_| ())),
        }
        assert!(PolicyBundle::load(dir.path().join("nope")).is_err());
    }
}
