//! The learnable generator: two point encoders, instruction and membership
//! embedding tables, and the per-point velocity network with one max-pool
//! context injection.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use serde_json::json;

use super::{ConditionBundle, FlowState, TrainingPair, Variant};
use crate::error::{Error, Result};
use crate::netcore::{
    max_pool, max_pool_backward, sinusoidal_embed, Checkpoint, EmbeddingTable, EncoderCache,
    Gradients, Mlp, MlpCache, ParamStore, PointEncoder, SharedTail,
};
use crate::pointcloud::{seeded_rng, PointCloud};

/// Widths of every learned component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub feature: usize,
    pub language: usize,
    pub time: usize,
    pub mask: usize,
    pub encoder_hidden: usize,
    pub hidden: usize,
    pub vocab: usize,
}

impl ModelDims {
    /// Per-point generator input: position + feature + instruction + time + mask.
    pub fn generator_input_dim(&self) -> usize {
        3 + self.feature + self.language + self.time + self.mask
    }
}

/// Non-learned settings stored alongside the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSettings {
    pub dims: ModelDims,
    pub variant: Variant,
    /// Noise standard deviation per axis, meters.
    pub sigma: f64,
    /// Positions are multiplied by this before entering any network; drift
    /// leaving the network is divided by it.
    pub coord_scale: f64,
    /// Multiplier on `t` inside the sinusoidal time embedding.
    pub time_scale: f64,
}

#[derive(Debug, Clone)]
pub struct VelocityModel {
    pub store: ParamStore,
    pub settings: ModelSettings,
    encoder_a: PointEncoder,
    encoder_b: PointEncoder,
    language: EmbeddingTable,
    mask: EmbeddingTable,
    trunk: Mlp,
    head: Mlp,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardTrace {
    pub drift: Array2<f64>,
    trunk: MlpCache,
    head: MlpCache,
    argmax: Vec<usize>,
}

impl VelocityModel {
    pub fn new(settings: ModelSettings, seed: u64) -> Result<Self> {
        let d = settings.dims;
        for (name, v) in [
            ("dims.feature", d.feature),
            ("dims.language", d.language),
            ("dims.time", d.time),
            ("dims.mask", d.mask),
            ("net.encoder_hidden", d.encoder_hidden),
            ("net.hidden", d.hidden),
            ("vocabulary", d.vocab),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if !d.time.is_multiple_of(2) || !d.mask.is_multiple_of(2) {
            return Err(Error::config("dims.time/dims.mask", "must be even"));
        }
        if !(settings.sigma > 0.0 && settings.coord_scale > 0.0) {
            return Err(Error::InvalidArgument("sigma and coord_scale must be positive".into()));
        }
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let encoder_a = PointEncoder::new(&mut store, "encoder_a", d.encoder_hidden, d.feature, &mut rng);
        let encoder_b = PointEncoder::new(&mut store, "encoder_b", d.encoder_hidden, d.feature, &mut rng);
        let language = EmbeddingTable::new(&mut store, "language", d.vocab, d.language, &mut rng);
        let mask_rows = vec![
            sinusoidal_embed(0.0, d.mask, 1.0)?,
            sinusoidal_embed(1.0, d.mask, 1.0)?,
        ];
        let mask = EmbeddingTable::from_rows(&mut store, "mask", &mask_rows);
        let h = d.hidden;
        let trunk = Mlp::new(&mut store, "field.trunk", &[d.generator_input_dim(), h, h], true, &mut rng);
        let head = Mlp::new(&mut store, "field.head", &[2 * h, h, h, 3], false, &mut rng);
        Ok(Self {
            store,
            settings,
            encoder_a,
            encoder_b,
            language,
            mask,
            trunk,
            head,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.settings.dims
    }

    pub fn variant(&self) -> Variant {
        self.settings.variant
    }

    /// Zeroes the output layer so the model emits zero drift everywhere.
    pub fn zero_head(&mut self) {
        let last = *self.head.layers.last().expect("head has layers");
        self.store.values_mut(last.weight).fill(0.0);
        self.store.values_mut(last.bias).fill(0.0);
    }

    pub fn encode_a(&self, cloud: &PointCloud) -> Result<Array2<f64>> {
        self.encoder_a.forward(&self.store, cloud, self.settings.coord_scale)
    }

    pub fn encode_b(&self, cloud: &PointCloud) -> Result<Array2<f64>> {
        self.encoder_b.forward(&self.store, cloud, self.settings.coord_scale)
    }

    /// Encodes both clouds and looks up the instruction and mask embeddings.
    pub fn condition(&self, cloud_a: &PointCloud, cloud_b: &PointCloud, instruction: usize) -> Result<ConditionBundle> {
        let features_a = self.encode_a(cloud_a)?;
        let features_b = self.encode_b(cloud_b)?;
        self.condition_from_features(features_a, features_b, instruction)
    }

    pub fn condition_from_features(
        &self,
        features_a: Array2<f64>,
        features_b: Array2<f64>,
        instruction: usize,
    ) -> Result<ConditionBundle> {
        let d = self.settings.dims;
        if features_a.ncols() != d.feature || features_b.ncols() != d.feature {
            return Err(Error::ShapeMismatch(format!(
                "feature width {} / {} but model expects {}",
                features_a.ncols(),
                features_b.ncols(),
                d.feature
            )));
        }
        let instruction_embedding = self.language.lookup(&self.store, instruction)?.to_vec();
        Ok(ConditionBundle {
            features_a,
            features_b,
            instruction,
            instruction_embedding,
            mask_embeddings: [
                self.mask.lookup(&self.store, 0)?.to_vec(),
                self.mask.lookup(&self.store, 1)?.to_vec(),
            ],
            time_dim: d.time,
        })
    }

    /// Per-point generator input rows, `[pos·scale | feature | instruction | time | mask]`.
    pub fn input_rows(&self, positions: &ArrayView2<'_, f64>, time: f64, cond: &ConditionBundle) -> Result<Array2<f64>> {
        let (head, tails) = self.split_input(positions, time, cond)?;
        let k = head.ncols();
        let mut x = Array2::zeros((head.nrows(), self.settings.dims.generator_input_dim()));
        x.slice_mut(s![.., ..k]).assign(&head);
        for t in &tails {
            for mut row in x.slice_mut(s![t.rows.clone(), k..]).rows_mut() {
                row.assign(&t.values);
            }
        }
        Ok(x)
    }

    /// The generator input as per-point columns `[pos·scale | feature]` plus
    /// the `[instruction | time | mask]` tail shared by all rows of each object.
    fn split_input(&self, positions: &ArrayView2<'_, f64>, time: f64, cond: &ConditionBundle) -> Result<(Array2<f64>, Vec<SharedTail>)> {
        let d = self.settings.dims;
        let (n, m) = (cond.features_a.nrows(), cond.features_b.nrows());
        if positions.nrows() != n + m || positions.ncols() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "state has {:?} rows/cols but conditioning covers {} points",
                positions.dim(),
                n + m
            )));
        }
        if cond.time_dim != d.time
            || cond.instruction_embedding.len() != d.language
            || cond.mask_embeddings.iter().any(|e| e.len() != d.mask)
        {
            return Err(Error::ShapeMismatch("conditioning widths do not match the model".into()));
        }
        let time_emb = sinusoidal_embed(time, d.time, self.settings.time_scale)?;
        let mut head = Array2::zeros((n + m, 3 + d.feature));
        head.slice_mut(s![.., 0..3]).assign(&(positions * self.settings.coord_scale));
        head.slice_mut(s![..n, 3..]).assign(&cond.features_a);
        head.slice_mut(s![n.., 3..]).assign(&cond.features_b);
        let tail = |mask: &[f64]| -> Array1<f64> {
            cond.instruction_embedding.iter().chain(&time_emb).chain(mask).copied().collect()
        };
        let tails = vec![
            SharedTail { rows: 0..n, values: tail(&cond.mask_embeddings[0]) },
            SharedTail { rows: n..n + m, values: tail(&cond.mask_embeddings[1]) },
        ];
        Ok((head, tails))
    }

    /// Drift for every row of `state`, meters per unit time.
    pub fn velocity(&self, state: &FlowState, cond: &ConditionBundle) -> Result<Array2<f64>> {
        self.velocity_at(&state.positions.view(), state.time, cond)
    }

    pub fn velocity_at(&self, positions: &ArrayView2<'_, f64>, time: f64, cond: &ConditionBundle) -> Result<Array2<f64>> {
        let (x, tails) = self.split_input(positions, time, cond)?;
        let h = self.trunk.forward_shared(&self.store, x.view(), &tails)?;
        let (g, _) = max_pool(&h.view());
        let pooled = SharedTail { rows: 0..h.nrows(), values: g };
        let out = self.head.forward_shared(&self.store, h.view(), &[pooled])?;
        Ok(out / self.settings.coord_scale)
    }

    fn velocity_traced(&self, state: &FlowState, cond: &ConditionBundle) -> Result<ForwardTrace> {
        let (x, tails) = self.split_input(&state.positions.view(), state.time, cond)?;
        let (h, trunk) = self.trunk.forward_cached_shared(&self.store, x, tails)?;
        let (g, argmax) = max_pool(&h.view());
        let pooled = SharedTail { rows: 0..h.nrows(), values: g };
        let (out, head) = self.head.forward_cached_shared(&self.store, h, vec![pooled])?;
        Ok(ForwardTrace {
            drift: out / self.settings.coord_scale,
            trunk,
            head,
            argmax,
        })
    }

    /// Flow-matching loss for one training pair with encoder inputs
    /// `enc_a` / `enc_b`; accumulates `∂loss/∂θ` into `grads` end to end
    /// (velocity network, embeddings and both encoders).
    pub fn loss_and_grad(
        &self,
        enc_a: &PointCloud,
        enc_b: &PointCloud,
        instruction: usize,
        pair: &TrainingPair,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let scale = self.settings.coord_scale;
        let (fa, cache_a) = self.encoder_a.forward_cached(&self.store, enc_a, scale)?;
        let (fb, cache_b) = self.encoder_b.forward_cached(&self.store, enc_b, scale)?;
        let cond = self.condition_from_features(fa, fb, instruction)?;
        let trace = self.velocity_traced(&pair.state, &cond)?;
        let loss = super::flow_loss(&trace.drift, pair)?;
        let ddrift = super::flow_loss_grad(&trace.drift, pair)?;
        self.backward(&cond, &trace, (&cache_a, &cache_b), ddrift, grads);
        Ok(loss)
    }

    fn backward(
        &self,
        cond: &ConditionBundle,
        trace: &ForwardTrace,
        encoder_caches: (&EncoderCache, &EncoderCache),
        ddrift: Array2<f64>,
        grads: &mut Gradients,
    ) {
        let d = self.settings.dims;
        let n = cond.features_a.nrows();
        let dout = ddrift / self.settings.coord_scale;
        let (mut dh, dpooled) = self.head.backward_shared(&self.store, &trace.head, dout, grads);
        max_pool_backward(&mut dh, &dpooled[0], &trace.argmax);
        let (dx, dtails) = self.trunk.backward_shared(&self.store, &trace.trunk, dh, grads);

        let dfa = dx.slice(s![..n, 3..]).to_owned();
        let dfb = dx.slice(s![n.., 3..]).to_owned();
        let (ta, tb) = (&dtails[0], &dtails[1]);
        let (lang, mask) = (0..d.language, d.language + d.time..);
        let dlang = &ta.slice(s![lang.clone()]) + &tb.slice(s![lang]);
        self.language.backward(cond.instruction, dlang.as_slice().expect("contiguous"), grads);
        self.mask.backward(0, &ta.as_slice().expect("contiguous")[mask.clone()], grads);
        self.mask.backward(1, &tb.as_slice().expect("contiguous")[mask], grads);

        self.encoder_a.backward(&self.store, encoder_caches.0, dfa, grads);
        self.encoder_b.backward(&self.store, encoder_caches.1, dfb, grads);
    }

    pub fn metadata(&self) -> BTreeMap<String, serde_json::Value> {
        let st = &self.settings;
        let d = st.dims;
        BTreeMap::from([
            ("variant".to_string(), json!(st.variant.name())),
            ("sigma".to_string(), json!(st.sigma)),
            ("coord_scale".to_string(), json!(st.coord_scale)),
            ("time_scale".to_string(), json!(st.time_scale)),
            (
                "dims".to_string(),
                json!({
                    "feature": d.feature, "language": d.language, "time": d.time, "mask": d.mask,
                    "encoder_hidden": d.encoder_hidden, "hidden": d.hidden, "vocab": d.vocab,
                }),
            ),
        ])
    }

    pub fn to_checkpoint(&self, config: BTreeMap<String, String>) -> Checkpoint {
        Checkpoint::from_store(&self.store, config, self.metadata())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, origin: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(origin, msg.to_string());
        let meta = &ckpt.meta;
        let num = |key: &str| meta.get(key).and_then(serde_json::Value::as_f64).ok_or_else(|| bad(&format!("missing meta `{key}`")));
        let variant = meta
            .get("variant")
            .and_then(serde_json::Value::as_str)
            .and_then(Variant::parse)
            .ok_or_else(|| bad("missing or unknown meta `variant`"))?;
        let dims = meta.get("dims").ok_or_else(|| bad("missing meta `dims`"))?;
        let dim = |key: &str| {
            dims.get(key)
                .and_then(serde_json::Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| bad(&format!("missing dims `{key}`")))
        };
        let settings = ModelSettings {
            dims: ModelDims {
                feature: dim("feature")?,
                language: dim("language")?,
                time: dim("time")?,
                mask: dim("mask")?,
                encoder_hidden: dim("encoder_hidden")?,
                hidden: dim("hidden")?,
                vocab: dim("vocab")?,
            },
            variant,
            sigma: num("sigma")?,
            coord_scale: num("coord_scale")?,
            time_scale: num("time_scale")?,
        };
        let mut model = Self::new(settings, 0)?;
        let store = ckpt.to_store().map_err(|e| Error::format(origin, e.to_string()))?;
        model
            .store
            .load_from(&store)
            .map_err(|e| Error::format(origin, e.to_string()))?;
        Ok(model)
    }
}
