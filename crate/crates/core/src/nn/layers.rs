//! Dense layers with explicit forward/backward passes.
//!
//! Each `forward` returns its output plus whatever the matching `backward`
//! needs. `backward` accumulates parameter gradients into the store (it never
//! overwrites them) and returns the gradient with respect to the input.

use rand::Rng;

use super::params::{Initializer, ParamId, ParameterStore};
use super::tensor::{gemm, lit, Real, Tensor};
use crate::error::{Error, Result};

/// `y = x W + b` over the last dimension; `W` is `[d_in, d_out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<S: Real>(
        store: &mut ParameterStore<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init.normal(&[d_in, d_out]))?;
        let bias = store.add(format!("{name}.bias"), init.constant(&[d_out], 0.0))?;
        Ok(Self { weight, bias: Some(bias), d_in, d_out })
    }

    pub fn without_bias<S: Real>(
        store: &mut ParameterStore<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init.normal(&[d_in, d_out]))?;
        Ok(Self { weight, bias: None, d_in, d_out })
    }

    pub fn forward<S: Real>(&self, store: &ParameterStore<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.cols() != self.d_in {
            return Err(Error::ShapeMismatch(format!(
                "linear expects last dim {}, got {:?}",
                self.d_in,
                x.shape()
            )));
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = self.d_out;
        let mut y = Tensor::zeros(&shape);
        if let Some(bias) = self.bias {
            let bias = store.value(bias).data();
            for r in 0..y.rows() {
                y.row_mut(r).copy_from_slice(bias);
            }
        }
        gemm(S::one(), x.mat(), store.value(self.weight).mat(), S::one(), y.mat_mut());
        Ok(y)
    }

    pub fn backward<S: Real>(
        &self,
        store: &mut ParameterStore<S>,
        x: &Tensor<S>,
        dy: &Tensor<S>,
    ) -> Tensor<S> {
        let (values, grads) = store.split_mut();
        gemm(S::one(), x.mat().t(), dy.mat(), S::one(), grads[self.weight.index()].mat_mut());
        if let Some(bias) = self.bias {
            let db = grads[bias.index()].data_mut();
            for r in 0..dy.rows() {
                for (g, &d) in db.iter_mut().zip(dy.row(r)) {
                    *g += d;
                }
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(S::one(), dy.mat(), values[self.weight.index()].mat().t(), S::zero(), dx.mat_mut());
        dx
    }
}

/// Normalization over the last dimension followed by a per-feature affine map.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
    pub eps: f64,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<S> {
    /// Normalized input before the affine map.
    pub normalized: Tensor<S>,
    inv_std: Vec<S>,
}

impl LayerNorm {
    pub fn new<S: Real>(
        store: &mut ParameterStore<S>,
        name: &str,
        dim: usize,
        eps: f64,
        init: &mut Initializer,
    ) -> Result<Self> {
        let gain = store.add(format!("{name}.gain"), init.constant(&[dim], 1.0))?;
        let shift = store.add(format!("{name}.shift"), init.constant(&[dim], 0.0))?;
        Ok(Self { gain, shift, eps, dim })
    }

    pub fn forward<S: Real>(
        &self,
        store: &ParameterStore<S>,
        x: &Tensor<S>,
    ) -> Result<(Tensor<S>, LayerNormCache<S>)> {
        if x.cols() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "layer norm over {} features, got {:?}",
                self.dim,
                x.shape()
            )));
        }
        let n = lit::<S>(self.dim as f64);
        let eps = lit::<S>(self.eps);
        let gain = store.value(self.gain).data();
        let shift = store.value(self.shift).data();
        let mut normalized = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let istd = S::one() / (var + eps).sqrt();
            inv_std.push(istd);
            let xn = normalized.row_mut(r);
            for (o, &v) in xn.iter_mut().zip(row) {
                *o = (v - mean) * istd;
            }
            for (((o, &h), &g), &b) in y.row_mut(r).iter_mut().zip(normalized.row(r)).zip(gain).zip(shift) {
                *o = h * g + b;
            }
        }
        Ok((y, LayerNormCache { normalized, inv_std }))
    }

    pub fn backward<S: Real>(
        &self,
        store: &mut ParameterStore<S>,
        cache: &LayerNormCache<S>,
        dy: &Tensor<S>,
    ) -> Tensor<S> {
        let (values, grads) = store.split_mut();
        let gain = values[self.gain.index()].data();
        let n = lit::<S>(self.dim as f64);
        let mut dx = Tensor::zeros(dy.shape());
        let mut dxhat = vec![S::zero(); self.dim];
        for r in 0..dy.rows() {
            let xhat = cache.normalized.row(r);
            let d = dy.row(r);
            {
                let dg = grads[self.gain.index()].data_mut();
                for ((g, &dd), &h) in dg.iter_mut().zip(d).zip(xhat) {
                    *g += dd * h;
                }
            }
            {
                let ds = grads[self.shift.index()].data_mut();
                for (s, &dd) in ds.iter_mut().zip(d) {
                    *s += dd;
                }
            }
            for ((o, &dd), &g) in dxhat.iter_mut().zip(d).zip(gain) {
                *o = dd * g;
            }
            let mean_d = dxhat.iter().copied().sum::<S>() / n;
            let mean_dx = dxhat.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<S>() / n;
            let istd = cache.inv_std[r];
            for ((o, &a), &h) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xhat) {
                *o = istd * (a - mean_d - h * mean_dx);
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<S: Real>(x: S) -> S {
    let c = lit::<S>(GELU_C);
    let a = lit::<S>(GELU_A);
    let half = lit::<S>(0.5);
    half * x * (S::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<S: Real>(x: S) -> S {
    let c = lit::<S>(GELU_C);
    let a = lit::<S>(GELU_A);
    let half = lit::<S>(0.5);
    let three = lit::<S>(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + three * a * x * x)
}

/// Inverted dropout. Holds the per-element scale (0 or 1/(1-p)) for backward.
#[derive(Debug, Clone)]
pub struct DropoutMask<S>(Option<Vec<S>>);

impl<S: Real> DropoutMask<S> {
    pub fn identity() -> Self {
        Self(None)
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, len: usize, rate: f64) -> Self {
        if rate <= 0.0 {
            return Self(None);
        }
        let keep = lit::<S>(1.0 / (1.0 - rate));
        Self(Some(
            (0..len)
                .map(|_| if rng.random::<f64>() < rate { S::zero() } else { keep })
                .collect(),
        ))
    }

    pub fn apply(&self, x: &mut Tensor<S>) {
        if let Some(m) = &self.0 {
            for (v, &s) in x.data_mut().iter_mut().zip(m) {
                *v *= s;
            }
        }
    }
}
