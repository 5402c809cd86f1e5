use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Adam moments, one array per parameter, plus the shared step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

/// Named, shaped `f64` arrays with a parallel Adam state.
///
/// Parameters are registered once at model construction; their shapes never
/// change afterwards.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    pub(crate) adam: AdamState,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> ParamId {
        let name = name.into();
        let len: usize = shape.iter().product();
        assert_eq!(len, values.len(), "parameter `{name}`: shape/value length mismatch");
        assert!(self.find(&name).is_none(), "duplicate parameter `{name}`");
        self.params.push(Param { name, shape, values });
        self.adam.m.push(vec![0.0; len]);
        self.adam.v.push(vec![0.0; len]);
        ParamId(self.params.len() - 1)
    }

    /// Uniform `±sqrt(6 / fan_in)` initialization for a `[fan_in, fan_out]` weight.
    pub fn add_kaiming<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let values = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(name, vec![fan_in, fan_out], values)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        let len = shape.iter().product();
        self.add(name, shape, vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].values
    }

    /// 2-D view of a matrix parameter.
    pub fn matrix(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let p = &self.params[id.0];
        ArrayView2::from_shape((p.shape[0], p.shape[1]), &p.values).expect("matrix parameter")
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    /// Replaces values and optimizer state from another store with identical
    /// names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "store has {} parameters, source {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (dst, src) in self.params.iter().zip(&other.params) {
            if dst.name != src.name || dst.shape != src.shape {
                return Err(Error::ShapeMismatch(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    dst.name, dst.shape, src.name, src.shape
                )));
            }
        }
        *self = other.clone();
        Ok(())
    }

    pub(crate) fn split_mut(&mut self) -> (&mut [Param], &mut AdamState) {
        (&mut self.params, &mut self.adam)
    }

    pub(crate) fn from_raw(params: Vec<Param>, adam: AdamState) -> Self {
        Self { params, adam }
    }
}

/// Gradient buffers laid out exactly like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            values: store.params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub(crate) fn matrix_mut(&mut self, id: ParamId, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((rows, cols), &mut self.values[id.0]).expect("matrix gradient")
    }

    pub fn all(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn zero(&mut self) {
        for v in &mut self.values {
            v.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            v.iter_mut().for_each(|x| *x *= factor);
        }
    }
}
