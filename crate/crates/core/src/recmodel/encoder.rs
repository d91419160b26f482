use super::params::ParamSet;
use crate::corpus::Catalog;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Inputs of every layer recorded during a forward pass: `inputs[0]` is the
/// raw feature vector, `inputs[l]` the tanh output feeding layer `l`.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    inputs: Vec<Vec<T>>,
}

fn affine<T: Scalar>(params: &ParamSet<T>, l: usize, x: &[T]) -> Vec<T> {
    let layer = &params.layers[l];
    (0..layer.rows).map(|r| layer.row(r).iter().zip(x).fold(layer.bias[r], |acc, (&w, &v)| acc + w * v)).collect()
}

fn check_input<T: Scalar>(params: &ParamSet<T>, x: &[T]) -> Result<()> {
    if x.len() != params.input_dim() {
        return Err(Error::shape(format!("encoder expects {} input features, got {}", params.input_dim(), x.len())));
    }
    Ok(())
}

/// `W_L tanh(... tanh(W_1 x + b_1) ...) + b_L`; the output layer is linear.
pub fn encode<T: Scalar>(params: &ParamSet<T>, x: &[T]) -> Result<Vec<T>> {
    check_input(params, x)?;
    let last = params.num_layers() - 1;
    let mut h = x.to_vec();
    for l in 0..last {
        h = affine(params, l, &h).into_iter().map(T::tanh).collect();
    }
    Ok(affine(params, last, &h))
}

/// Forward pass that keeps what the reverse pass needs.
pub fn encode_with_tape<T: Scalar>(params: &ParamSet<T>, x: &[T]) -> Result<(Vec<T>, Tape<T>)> {
    check_input(params, x)?;
    let last = params.num_layers() - 1;
    let mut inputs = Vec::with_capacity(params.num_layers());
    inputs.push(x.to_vec());
    for l in 0..last {
        let h = affine(params, l, &inputs[l]).into_iter().map(T::tanh).collect();
        inputs.push(h);
    }
    let out = affine(params, last, &inputs[last]);
    Ok((out, Tape { inputs }))
}

/// Accumulates `d loss / d params` into `grad`, given `d loss / d output`.
pub fn backward<T: Scalar>(params: &ParamSet<T>, tape: &Tape<T>, grad_out: &[T], grad: &mut ParamSet<T>) {
    let mut g = grad_out.to_vec();
    for l in (0..params.num_layers()).rev() {
        let layer = &params.layers[l];
        let input = &tape.inputs[l];
        let gl = &mut grad.layers[l];
        for (r, &gr) in g.iter().enumerate() {
            if gr == T::zero() {
                continue;
            }
            gl.bias[r] += gr;
            for (gw, &x) in gl.weight[r * layer.cols..(r + 1) * layer.cols].iter_mut().zip(input) {
                *gw += gr * x;
            }
        }
        if l == 0 {
            break;
        }
        // Back through W, then through the tanh that produced `input`.
        let mut below = vec![T::zero(); layer.cols];
        for (r, &gr) in g.iter().enumerate() {
            if gr == T::zero() {
                continue;
            }
            for (b, &w) in below.iter_mut().zip(layer.row(r)) {
                *b += gr * w;
            }
        }
        for (b, &h) in below.iter_mut().zip(input) {
            *b *= T::one() - h * h;
        }
        g = below;
    }
}

/// Recency-weighted mean of item features: item `j` of an `n`-item sequence
/// gets weight `gamma^(n-1-j)`, so the most recent item has weight one.
pub fn pool_sequence<T: Scalar>(catalog: &Catalog<T>, sequence: &[usize], gamma: T) -> Result<Vec<T>> {
    let Some((&last, rest)) = sequence.split_last() else {
        return Err(Error::invalid("cannot represent an empty sequence"));
    };
    if let Some(&bad) = sequence.iter().find(|&&i| i >= catalog.len()) {
        return Err(Error::invalid(format!("item index {bad} outside catalog of {}", catalog.len())));
    }
    if rest.is_empty() {
        return Ok(catalog.feature(last).to_vec());
    }
    let n = sequence.len();
    let mut pooled = vec![T::zero(); catalog.dim()];
    let mut total = T::zero();
    for (j, &item) in sequence.iter().enumerate() {
        let w = gamma.powi((n - 1 - j) as i32);
        total += w;
        for (p, &f) in pooled.iter_mut().zip(catalog.feature(item)) {
            *p += w * f;
        }
    }
    for p in &mut pooled {
        *p /= total;
    }
    Ok(pooled)
}

pub fn user_representation<T: Scalar>(
    params: &ParamSet<T>,
    sequence: &[usize],
    catalog: &Catalog<T>,
    gamma: T,
) -> Result<Vec<T>> {
    encode(params, &pool_sequence(catalog, sequence, gamma)?)
}

/// Representations of every catalog item under `params`.
pub fn item_representations<T: Scalar>(params: &ParamSet<T>, catalog: &Catalog<T>) -> Result<Vec<Vec<T>>> {
    (0..catalog.len()).map(|i| encode(params, catalog.feature(i))).collect()
}
