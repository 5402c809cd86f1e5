//! Permutation-aware per-point encoder.
//!
//! shared per-point map over `(xyz, rgb)` → max-pool → concatenate the pooled
//! vector to every row → second shared per-point map. Row `i` of the output
//! therefore depends only on point `i` and the pooled global vector.

use ndarray::Array2;
use rand::Rng;

use super::layers::{max_pool, max_pool_backward, Mlp, MlpCache, SharedTail};
use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Per-point features, row `i` belongs to point `i` of the encoded cloud.
pub type FeatureMatrix = Array2<f64>;

#[derive(Debug, Clone)]
pub struct PointEncoder {
    local: Mlp,
    fuse: Mlp,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    local: MlpCache,
    fuse: MlpCache,
    argmax: Vec<usize>,
}

impl PointEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        feature_dim: usize,
        rng: &mut R,
    ) -> Self {
        let local = Mlp::new(store, &format!("{name}.local"), &[6, hidden, hidden], true, rng);
        let fuse = Mlp::new(store, &format!("{name}.fuse"), &[2 * hidden, hidden, feature_dim], false, rng);
        Self { local, fuse }
    }

    pub fn feature_dim(&self) -> usize {
        self.fuse.out_dim()
    }

    /// `[x·scale, y·scale, z·scale, r, g, b]` rows; missing colors are neutral gray.
    pub fn input_rows(cloud: &PointCloud, coord_scale: f64) -> Array2<f64> {
        let mut x = Array2::zeros((cloud.len(), 6));
        for (i, p) in cloud.points().iter().enumerate() {
            let c = cloud.color(i);
            for k in 0..3 {
                x[[i, k]] = p[k] * coord_scale;
                x[[i, 3 + k]] = c[k];
            }
        }
        x
    }

    pub fn forward(&self, store: &ParamStore, cloud: &PointCloud, coord_scale: f64) -> Result<FeatureMatrix> {
        Ok(self.forward_cached(store, cloud, coord_scale)?.0)
    }

    pub fn forward_cached(
        &self,
        store: &ParamStore,
        cloud: &PointCloud,
        coord_scale: f64,
    ) -> Result<(FeatureMatrix, EncoderCache)> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let x = Self::input_rows(cloud, coord_scale);
        let (h, local) = self.local.forward_cached(store, x)?;
        let (g, argmax) = max_pool(&h.view());
        let pooled = SharedTail { rows: 0..h.nrows(), values: g };
        let (f, fuse) = self.fuse.forward_cached_shared(store, h, vec![pooled])?;
        Ok((f, EncoderCache { local, fuse, argmax }))
    }

    pub fn backward(&self, store: &ParamStore, cache: &EncoderCache, dfeat: Array2<f64>, grads: &mut Gradients) {
        let (mut dh, dpooled) = self.fuse.backward_shared(store, &cache.fuse, dfeat, grads);
        max_pool_backward(&mut dh, &dpooled[0], &cache.argmax);
        self.local.backward(store, &cache.local, dh, grads);
    }
}
