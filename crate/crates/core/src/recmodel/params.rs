use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{dot, Scalar};

/// Dense affine layer `y = W x + b`, `W` stored row-major as `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, weight: vec![T::zero(); rows * cols], bias: vec![T::zero(); rows] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.weight.iter().chain(&self.bias)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }

    /// Inner product of all weights and biases of two equally shaped layers.
    pub fn inner(&self, other: &Layer<T>) -> T {
        dot(&self.weight, &other.weight) + dot(&self.bias, &other.bias)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Layer<T>) {
        for (a, &b) in self.values_mut().zip(other.values()) {
            *a += alpha * b;
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.weight[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Base,
    Finetuned,
    Merged,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Base => "base",
            Role::Finetuned => "finetuned",
            Role::Merged => "merged",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Role::Base),
            "finetuned" => Ok(Role::Finetuned),
            "merged" => Ok(Role::Merged),
            other => Err(Error::invalid(format!("unknown model role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metadata {
    pub role: Role,
    pub domain_id: Option<String>,
    pub seed: u64,
    /// Free-form provenance (config hash, version) carried into checkpoints.
    pub notes: BTreeMap<String, String>,
}

impl Metadata {
    pub fn new(role: Role, domain_id: Option<String>, seed: u64) -> Self {
        Self { role, domain_id, seed, notes: BTreeMap::new() }
    }
}

/// Layer widths of the encoder: `input -> hidden x (layers - 1) -> output`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub layers: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { input: 64, hidden: 32, output: 16, layers: 3 }
    }
}

impl ModelDims {
    /// `(rows, cols)` of every layer, input side first.
    pub fn shapes(&self) -> Result<Vec<(usize, usize)>> {
        if self.layers == 0 || self.input == 0 || self.output == 0 || (self.layers > 1 && self.hidden == 0) {
            return Err(Error::invalid(format!("degenerate model dims {self:?}")));
        }
        Ok((0..self.layers)
            .map(|l| {
                let cols = if l == 0 { self.input } else { self.hidden };
                let rows = if l + 1 == self.layers { self.output } else { self.hidden };
                (rows, cols)
            })
            .collect())
    }
}

/// The parameters of one encoder; the unit of checkpointing and merging.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub layers: Vec<Layer<T>>,
    pub meta: Metadata,
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(dims: &ModelDims, meta: Metadata) -> Result<Self> {
        Ok(Self { layers: dims.shapes()?.into_iter().map(|(r, c)| Layer::zeros(r, c)).collect(), meta })
    }

    /// Glorot-uniform weights and zero biases from a seed-derived stream.
    pub fn random(dims: &ModelDims, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(dims, Metadata::new(Role::Base, None, seed))?;
        let mut r = rng::stream(seed, "init");
        for layer in &mut p.layers {
            let a = (6.0 / (layer.rows + layer.cols) as f64).sqrt();
            for w in &mut layer.weight {
                *w = T::lit(r.random_range(-a..a));
            }
        }
        Ok(p)
    }

    /// Builds a parameter set from explicit layers, checking that they chain.
    pub fn from_layers(layers: Vec<Layer<T>>, meta: Metadata) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("a model needs at least one layer"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.weight.len() != layer.rows * layer.cols || layer.bias.len() != layer.rows {
                return Err(Error::shape(format!("layer {l} storage does not match {:?}", layer.shape())));
            }
            if l > 0 && layers[l - 1].rows != layer.cols {
                return Err(Error::shape(format!(
                    "layer {l} expects {} inputs but layer {} emits {}",
                    layer.cols,
                    l - 1,
                    layers[l - 1].rows
                )));
            }
        }
        Ok(Self { layers, meta })
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect(), meta: self.meta.clone() }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(Layer::shape).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(Layer::values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(Layer::values_mut)
    }

    pub fn is_compatible(&self, other: &Self) -> bool {
        self.shapes() == other.shapes()
    }

    pub fn check_compatible(&self, other: &Self, what: &str) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(Error::shape(format!("{what}: layer shapes {:?} vs {:?}", self.shapes(), other.shapes())))
        }
    }

    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.axpy(alpha, b);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Largest coordinate-wise absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.values().zip(other.values()).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn with_meta(mut self, meta: Metadata) -> Self {
        self.meta = meta;
        self
    }
}
