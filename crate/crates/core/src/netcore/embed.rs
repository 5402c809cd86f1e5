use rand::Rng;

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Interleaved `(sin(a·ωₖ), cos(a·ωₖ))` pairs with `ωₖ = 10000^(−2k/dim)` and
/// `a = t · scale`. `scale` stretches the unit time interval over the
/// frequency range (1000 maps it onto a step index).
pub fn sinusoidal_embed(t: f64, dim: usize, scale: f64) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension must be even and positive, got {dim}"
        )));
    }
    let a = t * scale;
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let w = 10000f64.powf(-2.0 * k as f64 / dim as f64);
        out.push((a * w).sin());
        out.push((a * w).cos());
    }
    Ok(out)
}

/// Learnable lookup table, one row per id.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingTable {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    /// Rows drawn from `N(0, 1)`-like uniform noise of unit variance.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, rows: usize, dim: usize, rng: &mut R) -> Self {
        let bound = 3f64.sqrt();
        let values = (0..rows * dim).map(|_| rng.random_range(-bound..bound)).collect();
        let table = store.add(format!("{name}.table"), vec![rows, dim], values);
        Self { table, rows, dim }
    }

    /// Table initialized from explicit rows.
    pub fn from_rows(store: &mut ParamStore, name: &str, rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let values = rows.iter().flatten().copied().collect();
        let table = store.add(format!("{name}.table"), vec![rows.len(), dim], values);
        Self {
            table,
            rows: rows.len(),
            dim,
        }
    }

    pub fn lookup<'a>(&self, store: &'a ParamStore, id: usize) -> Result<&'a [f64]> {
        if id >= self.rows {
            return Err(Error::InstructionOutOfRange { id, size: self.rows });
        }
        Ok(&store.values(self.table)[id * self.dim..(id + 1) * self.dim])
    }

    pub fn backward(&self, id: usize, d: &[f64], grads: &mut Gradients) {
        let g = &mut grads.get_mut(self.table)[id * self.dim..(id + 1) * self.dim];
        for (gi, di) in g.iter_mut().zip(d) {
            *gi += di;
        }
    }
}
