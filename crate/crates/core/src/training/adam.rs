use crate::error::{Error, Result};
use crate::recmodel::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamConfig<T> {
    pub fn with_lr(lr: T) -> Self {
        Self { lr, beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8) }
    }
}

/// Bias-corrected Adam update over parallel slices; `step` is the 1-based
/// index of the step being taken.
pub fn adam_update<T: Scalar>(cfg: &AdamConfig<T>, step: u64, params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T]) {
    let t = step as i32;
    let c1 = T::one() - cfg.beta1.powi(t);
    let c2 = T::one() - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = cfg.beta1 * *m + (T::one() - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (T::one() - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

fn check_finite<T: Scalar>(grads: impl Iterator<Item = T>) -> Result<()> {
    let mut bad = 0usize;
    let mut first = None;
    for (i, g) in grads.enumerate() {
        if !g.is_finite() {
            bad += 1;
            first.get_or_insert(i);
        }
    }
    match first {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite(format!("{bad} non-finite gradient coordinate(s), first at flat index {i}"))),
    }
}

/// Adam moments mirroring a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig<T>,
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(like: &ParamSet<T>, config: AdamConfig<T>) -> Self {
        Self { config, m: like.zeros_like(), v: like.zeros_like(), step: 0 }
    }
}

pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    params.check_compatible(grads, "adam gradient")?;
    params.check_compatible(&state.m, "adam state")?;
    check_finite(grads.values().copied())?;
    state.step += 1;
    for (l, layer) in params.layers.iter_mut().enumerate() {
        let (g, m, v) = (&grads.layers[l], &mut state.m.layers[l], &mut state.v.layers[l]);
        adam_update(&state.config, state.step, &mut layer.weight, &g.weight, &mut m.weight, &mut v.weight);
        adam_update(&state.config, state.step, &mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
    }
    Ok(())
}

/// Adam over a flat vector, as used for merging weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorAdam<T> {
    pub config: AdamConfig<T>,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Scalar> VectorAdam<T> {
    pub fn new(len: usize, config: AdamConfig<T>) -> Self {
        Self { config, m: vec![T::zero(); len], v: vec![T::zero(); len], step: 0 }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam over {} values got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        check_finite(grads.iter().copied())?;
        self.step += 1;
        adam_update(&self.config, self.step, params, grads, &mut self.m, &mut self.v);
        Ok(())
    }
}
