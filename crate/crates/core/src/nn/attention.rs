//! Multi-head scaled dot-product self-attention over a padded batch.

use super::layers::Linear;
use super::params::{Initializer, ParameterStore};
use super::tensor::{gemm, lit, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub hidden: usize,
    pub heads: usize,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache<S> {
    x: Tensor<S>,
    q: Tensor<S>,
    k: Tensor<S>,
    v: Tensor<S>,
    context: Tensor<S>,
    /// `[B, A, N, N]`; rows over padded keys are exactly zero.
    pub probs: Tensor<S>,
}

impl MultiHeadAttention {
    pub fn new<S: Real>(
        store: &mut ParameterStore<S>,
        name: &str,
        hidden: usize,
        heads: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        if heads == 0 || !hidden.is_multiple_of(heads) {
            return Err(Error::ShapeMismatch(format!(
                "hidden size {hidden} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.wq"), hidden, hidden, init)?,
            // a key bias shifts every logit of a query equally, so softmax ignores it
            key: Linear::without_bias(store, &format!("{name}.wk"), hidden, hidden, init)?,
            value: Linear::new(store, &format!("{name}.wv"), hidden, hidden, init)?,
            output: Linear::new(store, &format!("{name}.wo"), hidden, hidden, init)?,
            hidden,
            heads,
        })
    }

    fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// `x` is `[B, N, H]`; `valid[b * N + n]` is false for padding.
    pub fn forward<S: Real>(
        &self,
        store: &ParameterStore<S>,
        x: &Tensor<S>,
        valid: &[bool],
    ) -> Result<(Tensor<S>, AttentionCache<S>)> {
        let (b, n) = batch_dims(x, self.hidden)?;
        if valid.len() != b * n {
            return Err(Error::ShapeMismatch(format!(
                "attention mask has {} entries for batch {b} x {n}",
                valid.len()
            )));
        }
        let q = self.query.forward(store, x)?;
        let k = self.key.forward(store, x)?;
        let v = self.value.forward(store, x)?;
        let dh = self.head_dim();
        let scale = lit::<S>(1.0 / (dh as f64).sqrt());
        let mut probs = Tensor::zeros(&[b, self.heads, n, n]);
        let mut context = Tensor::zeros(x.shape());
        for bi in 0..b {
            let keys_valid = &valid[bi * n..(bi + 1) * n];
            for h in 0..self.heads {
                let off = (bi * self.heads + h) * n * n;
                let p = &mut probs.data_mut()[off..off + n * n];
                gemm(
                    scale,
                    q.mat().block(bi * n, h * dh, n, dh),
                    k.mat().block(bi * n, h * dh, n, dh).t(),
                    S::zero(),
                    super::tensor::MatMut::new(p, n, n),
                );
                for row in p.chunks_mut(n) {
                    masked_softmax(row, keys_valid);
                }
                gemm(
                    S::one(),
                    super::tensor::MatRef::new(&probs.data()[off..off + n * n], n, n),
                    v.mat().block(bi * n, h * dh, n, dh),
                    S::zero(),
                    context.mat_mut().block(bi * n, h * dh, n, dh),
                );
            }
        }
        let y = self.output.forward(store, &context)?;
        Ok((
            y,
            AttentionCache { x: x.clone(), q, k, v, context, probs },
        ))
    }

    pub fn backward<S: Real>(
        &self,
        store: &mut ParameterStore<S>,
        cache: &AttentionCache<S>,
        dy: &Tensor<S>,
    ) -> Tensor<S> {
        let b = cache.probs.shape()[0];
        let n = cache.probs.shape()[2];
        let dh = self.head_dim();
        let scale = lit::<S>(1.0 / (dh as f64).sqrt());
        let dcontext = self.output.backward(store, &cache.context, dy);
        let mut dq = Tensor::zeros(cache.q.shape());
        let mut dk = Tensor::zeros(cache.k.shape());
        let mut dv = Tensor::zeros(cache.v.shape());
        let mut dp = vec![S::zero(); n * n];
        for bi in 0..b {
            for h in 0..self.heads {
                let off = (bi * self.heads + h) * n * n;
                let p = super::tensor::MatRef::new(&cache.probs.data()[off..off + n * n], n, n);
                let dctx = dcontext.mat().block(bi * n, h * dh, n, dh);
                // dV = P^T dC, dP = dC V^T
                gemm(S::one(), p.t(), dctx, S::zero(), dv.mat_mut().block(bi * n, h * dh, n, dh));
                gemm(
                    S::one(),
                    dctx,
                    cache.v.mat().block(bi * n, h * dh, n, dh).t(),
                    S::zero(),
                    super::tensor::MatMut::new(&mut dp, n, n),
                );
                // softmax backward, row by row: dS = P * (dP - <dP, P>)
                let pd = &cache.probs.data()[off..off + n * n];
                for (drow, prow) in dp.chunks_mut(n).zip(pd.chunks(n)) {
                    let dot = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum::<S>();
                    for (d, &pv) in drow.iter_mut().zip(prow) {
                        *d = pv * (*d - dot);
                    }
                }
                let ds = super::tensor::MatRef::new(&dp, n, n);
                gemm(
                    scale,
                    ds,
                    cache.k.mat().block(bi * n, h * dh, n, dh),
                    S::zero(),
                    dq.mat_mut().block(bi * n, h * dh, n, dh),
                );
                gemm(
                    scale,
                    ds.t(),
                    cache.q.mat().block(bi * n, h * dh, n, dh),
                    S::zero(),
                    dk.mat_mut().block(bi * n, h * dh, n, dh),
                );
            }
        }
        let mut dx = self.query.backward(store, &cache.x, &dq);
        dx.add_assign(&self.key.backward(store, &cache.x, &dk));
        dx.add_assign(&self.value.backward(store, &cache.x, &dv));
        dx
    }
}

pub(crate) fn batch_dims<S: Real>(x: &Tensor<S>, hidden: usize) -> Result<(usize, usize)> {
    match *x.shape() {
        [b, n, h] if h == hidden => Ok((b, n)),
        _ => Err(Error::ShapeMismatch(format!(
            "expected [B, N, {hidden}], got {:?}",
            x.shape()
        ))),
    }
}

/// Softmax over the valid entries of `row`; invalid entries become exactly 0.
fn masked_softmax<S: Real>(row: &mut [S], valid: &[bool]) {
    let max = row
        .iter()
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v)
        .fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        row.iter_mut().for_each(|v| *v = S::zero());
        return;
    }
    let mut total = S::zero();
    for (v, &ok) in row.iter_mut().zip(valid) {
        *v = if ok { (*v - max).exp() } else { S::zero() };
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(hidden: usize, heads: usize) -> (ParameterStore<f64>, MultiHeadAttention) {
        let mut store = ParameterStore::new();
        let mut init = Initializer::new(11, 0.3);
        let attn = MultiHeadAttention::new(&mut store, "attn", hidden, heads, &mut init).unwrap();
        (store, attn)
    }

    #[test]
    fn single_token_attends_to_itself() {
        let (store, attn) = setup(4, 2);
        let x: Tensor<f64> = Initializer::new(2, 1.0).normal(&[1, 1, 4]);
        let (y, cache) = attn.forward(&store, &x, &[true]).unwrap();
        assert!(cache.probs.data().iter().all(|&p| p == 1.0));
        let v = attn.value.forward(&store, &x).unwrap();
        let expected = attn.output.forward(&store, &v).unwrap();
        for (a, b) in y.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_sum_to_one_and_padding_gets_zero() {
        let (store, attn) = setup(8, 2);
        let x: Tensor<f64> = Initializer::new(5, 1.0).normal(&[2, 5, 8]);
        let valid = [true, true, true, false, false, true, true, true, true, true];
        let (_, cache) = attn.forward(&store, &x, &valid).unwrap();
        for (i, row) in cache.probs.data().chunks(5).enumerate() {
            let bi = i / (2 * 5);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for (j, &p) in row.iter().enumerate() {
                if !valid[bi * 5 + j] {
                    assert_eq!(p, 0.0);
                }
            }
        }
    }

    #[test]
    fn permutation_equivariant() {
        let (store, attn) = setup(8, 4);
        let x: Tensor<f64> = Initializer::new(9, 1.0).normal(&[1, 6, 8]);
        let perm = [3, 0, 5, 1, 4, 2];
        let mut px = Tensor::zeros(x.shape());
        for (i, &p) in perm.iter().enumerate() {
            px.row_mut(i).copy_from_slice(x.row(p));
        }
        let valid = [true; 6];
        let (y, _) = attn.forward(&store, &x, &valid).unwrap();
        let (py, _) = attn.forward(&store, &px, &valid).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for (a, b) in py.row(i).iter().zip(y.row(p)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut store = ParameterStore::<f32>::new();
        let mut init = Initializer::new(0, 0.02);
        assert!(MultiHeadAttention::new(&mut store, "a", 10, 3, &mut init).is_err());
    }
}
