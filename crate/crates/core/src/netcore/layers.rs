use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// SiLU, `x · σ(x)`.
#[inline]
pub fn silu(x: f64) -> f64 {
    // Same expression as the cached forward pass, so both agree bitwise.
    x * (1.0 / (1.0 + (-x).exp()))
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Trailing input columns shared by a contiguous block of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedTail {
    pub rows: Range<usize>,
    pub values: Array1<f64>,
}

/// Fully connected layer `y = x·W + b` with `W: [in, out]`, rows are samples.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_kaiming(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = store.add_zeros(format!("{name}.bias"), vec![out_dim]);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward_shared(store, x, &[])
    }

    /// Rows are `[xᵢ | tail]` where every row block shares its tail. The
    /// tail product is computed once per block instead of once per row.
    /// Blocks must cover all rows in order; no blocks means no tail.
    pub fn forward_shared(&self, store: &ParamStore, x: &ArrayView2<'_, f64>, tails: &[SharedTail]) -> Result<Array2<f64>> {
        let k = x.ncols();
        let tail_width = tails.first().map_or(0, |t| t.values.len());
        if k + tail_width != self.in_dim || tails.iter().any(|t| t.values.len() != tail_width) {
            return Err(Error::ShapeMismatch(format!(
                "dense layer expects {} inputs, got {} + {}",
                self.in_dim, k, tail_width
            )));
        }
        let mut next = 0;
        for t in tails {
            if t.rows.start != next {
                return Err(Error::ShapeMismatch(format!("row blocks leave a gap before row {}", t.rows.start)));
            }
            next = t.rows.end;
        }
        if !tails.is_empty() && next != x.nrows() {
            return Err(Error::ShapeMismatch(format!("row blocks cover {next} of {} rows", x.nrows())));
        }
        let w = store.matrix(self.weight);
        let bias = ArrayView1::from(store.values(self.bias));
        let mut y = Array2::zeros((x.nrows(), self.out_dim));
        if tails.is_empty() {
            y.rows_mut().into_iter().for_each(|mut r| r.assign(&bias));
        }
        for t in tails {
            let shared = t.values.dot(&w.slice(s![k.., ..])) + bias;
            y.slice_mut(s![t.rows.clone(), ..]).rows_mut().into_iter().for_each(|mut r| r.assign(&shared));
        }
        general_mat_mul(1.0, x, &w.slice(s![..k, ..]), 1.0, &mut y);
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(
        &self,
        store: &ParamStore,
        x: &ArrayView2<'_, f64>,
        dy: &ArrayView2<'_, f64>,
        grads: &mut Gradients,
    ) -> Array2<f64> {
        self.backward_shared(store, x, &[], dy, grads).0
    }

    /// Backward of [`Dense::forward_shared`]: `∂L/∂x` and one `∂L/∂tail`
    /// per block.
    pub fn backward_shared(
        &self,
        store: &ParamStore,
        x: &ArrayView2<'_, f64>,
        tails: &[SharedTail],
        dy: &ArrayView2<'_, f64>,
        grads: &mut Gradients,
    ) -> (Array2<f64>, Vec<Array1<f64>>) {
        let k = x.ncols();
        let w = store.matrix(self.weight);
        let block_sums: Vec<Array1<f64>> = tails.iter().map(|t| dy.slice(s![t.rows.clone(), ..]).sum_axis(Axis(0))).collect();
        {
            let mut gw = grads.matrix_mut(self.weight, self.in_dim, self.out_dim);
            general_mat_mul(1.0, &x.t(), dy, 1.0, &mut gw.slice_mut(s![..k, ..]));
            for (t, sum) in tails.iter().zip(&block_sums) {
                for (i, &v) in t.values.iter().enumerate() {
                    gw.row_mut(k + i).scaled_add(v, sum);
                }
            }
        }
        let gb = grads.get_mut(self.bias);
        for row in dy.rows() {
            for (g, d) in gb.iter_mut().zip(row.iter()) {
                *g += d;
            }
        }
        let dx = dy.dot(&w.slice(s![..k, ..]).t());
        let dtails = block_sums.iter().map(|sum| w.slice(s![k.., ..]).dot(sum)).collect();
        (dx, dtails)
    }
}

/// Dense layers with SiLU between them (and optionally after the last one).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activate_last: bool,
}

/// Per-layer inputs and activation slopes retained for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    /// Shared tails of the first layer's input.
    tails: Vec<SharedTail>,
    /// `silu'(z)` for activated layers, empty otherwise.
    slopes: Vec<Array2<f64>>,
}

impl Mlp {
    /// `widths = [in, h1, …, out]`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activate_last: bool,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self {
            layers,
            activate_last,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.activate_last
    }

    pub fn forward(&self, store: &ParamStore, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward_shared(store, x, &[])
    }

    /// As [`Mlp::forward`] with the first layer's input split as in
    /// [`Dense::forward_shared`].
    pub fn forward_shared(&self, store: &ParamStore, x: ArrayView2<'_, f64>, tails: &[SharedTail]) -> Result<Array2<f64>> {
        let mut h = self.layers[0].forward_shared(store, &x, tails)?;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = layer.forward(store, &h.view())?;
            }
            if self.activated(i) {
                h.mapv_inplace(silu);
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, store: &ParamStore, x: Array2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.forward_cached_shared(store, x, Vec::new())
    }

    pub fn forward_cached_shared(
        &self,
        store: &ParamStore,
        x: Array2<f64>,
        tails: Vec<SharedTail>,
    ) -> Result<(Array2<f64>, MlpCache)> {
        let mut cache = MlpCache {
            tails,
            ..MlpCache::default()
        };
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let first_tails: &[SharedTail] = if i == 0 { &cache.tails } else { &[] };
            let mut z = layer.forward_shared(store, &h.view(), first_tails)?;
            cache.inputs.push(h);
            if self.activated(i) {
                // One exponential per entry serves both the value and the slope.
                let mut slope = Array2::zeros(z.dim());
                ndarray::Zip::from(&mut z).and(&mut slope).for_each(|v, d| {
                    let s = 1.0 / (1.0 + (-*v).exp());
                    *d = s * (1.0 + *v * (1.0 - s));
                    *v *= s;
                });
                cache.slopes.push(slope);
            } else {
                cache.slopes.push(Array2::zeros((0, 0)));
            }
            h = z;
        }
        Ok((h, cache))
    }

    /// Reverse pass: accumulates into `grads`, returns `∂L/∂input`.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &MlpCache,
        dout: Array2<f64>,
        grads: &mut Gradients,
    ) -> Array2<f64> {
        self.backward_shared(store, cache, dout, grads).0
    }

    /// Reverse pass that also returns `∂L/∂tail` for each shared tail.
    pub fn backward_shared(
        &self,
        store: &ParamStore,
        cache: &MlpCache,
        dout: Array2<f64>,
        grads: &mut Gradients,
    ) -> (Array2<f64>, Vec<Array1<f64>>) {
        let mut d = dout;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if self.activated(i) {
                d *= &cache.slopes[i];
            }
            if i == 0 {
                return layer.backward_shared(store, &cache.inputs[0].view(), &cache.tails, &d.view(), grads);
            }
            d = layer.backward(store, &cache.inputs[i].view(), &d.view(), grads);
        }
        unreachable!("an MLP has at least one layer")
    }
}

/// Column-wise max over rows, with the winning row of every column.
pub fn max_pool(h: &ArrayView2<'_, f64>) -> (Array1<f64>, Vec<usize>) {
    let cols = h.ncols();
    let mut best = Array1::from_elem(cols, f64::NEG_INFINITY);
    let mut arg = vec![0usize; cols];
    for (r, row) in h.rows().into_iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                arg[c] = r;
            }
        }
    }
    (best, arg)
}

/// `[h | g]` with the pooled vector `g` repeated on every row.
pub fn concat_global(h: &ArrayView2<'_, f64>, g: &Array1<f64>) -> Array2<f64> {
    let (n, w) = h.dim();
    let mut out = Array2::zeros((n, w + g.len()));
    out.slice_mut(s![.., ..w]).assign(h);
    out.slice_mut(s![.., w..]).assign(&g.broadcast((n, g.len())).expect("broadcast"));
    out
}

/// Adds the gradient of the pooled vector to the winning rows.
pub fn max_pool_backward(dh: &mut Array2<f64>, dg: &Array1<f64>, argmax: &[usize]) {
    for (c, &r) in argmax.iter().enumerate() {
        dh[[r, c]] += dg[c];
    }
}
