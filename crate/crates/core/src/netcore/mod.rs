//! Small differentiable substrate: dense layers with hand-written reverse
//! passes, a max-pool point encoder, embeddings, MSE, Adam, checkpoints.
//!
//! Everything runs in `f64`. Shape errors on user-facing entry points are
//! reported as [`Error::ShapeMismatch`](crate::Error::ShapeMismatch).

mod adam;
mod checkpoint;
mod embed;
mod encoder;
mod layers;
mod params;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{ArrayRecord, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use embed::{sinusoidal_embed, EmbeddingTable};
pub use encoder::{EncoderCache, FeatureMatrix, PointEncoder};
pub use layers::{concat_global, max_pool, max_pool_backward, silu, silu_grad, Dense, Mlp, MlpCache, SharedTail};
pub use params::{AdamState, Gradients, Param, ParamId, ParamStore};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Mean squared error over all entries and its gradient.
pub fn mse(pred: &ArrayView2<'_, f64>, target: &ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty MSE input".into()));
    }
    let diff = pred - target;
    let n = diff.len() as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite-difference oracle shared by the gradient tests.

    use super::*;

    pub const STEP: f64 = 1e-5;
    pub const REL_TOL: f64 = 1e-4;

    pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
        let scale = analytic.abs().max(numeric.abs()).max(1e-7);
        (analytic - numeric).abs() / scale
    }

    /// Worst relative error over every scalar of every parameter.
    pub fn check_all<F>(store: &mut ParamStore, grads: &Gradients, mut loss: F) -> (f64, String)
    where
        F: FnMut(&ParamStore) -> f64,
    {
        let mut worst = (0.0, String::new());
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            for i in 0..store.values(id).len() {
                let orig = store.values(id)[i];
                store.values_mut(id)[i] = orig + STEP;
                let up = loss(store);
                store.values_mut(id)[i] = orig - STEP;
                let down = loss(store);
                store.values_mut(id)[i] = orig;
                let numeric = (up - down) / (2.0 * STEP);
                let err = relative_error(grads.get(id)[i], numeric);
                if err > worst.0 {
                    worst = (err, format!("{}[{i}]", store.param(id).name));
                }
            }
        }
        worst
    }
}
