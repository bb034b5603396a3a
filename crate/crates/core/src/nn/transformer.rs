//! Post-LN transformer layers and the stacked encoder.

use rand::RngCore;

use super::attention::{batch_dims, AttentionCache, MultiHeadAttention};
use super::layers::{gelu, gelu_grad, DropoutMask, LayerNorm, LayerNormCache, Linear};
use super::params::{Initializer, ParameterStore};
use super::tensor::{Real, Tensor};
use crate::error::Result;

pub const LN_EPS: f64 = 1e-12;

/// `LN(x + Attn(x))`, then `LN(h + W2 GELU(W1 h))`.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub attention: MultiHeadAttention,
    pub attn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ffn_norm: LayerNorm,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct LayerCache<S> {
    pub attention: AttentionCache<S>,
    attn_drop: DropoutMask<S>,
    attn_norm: LayerNormCache<S>,
    h1: Tensor<S>,
    pre_act: Tensor<S>,
    act: Tensor<S>,
    ffn_drop: DropoutMask<S>,
    ffn_norm: LayerNormCache<S>,
}

impl TransformerLayer {
    pub fn new<S: Real>(
        store: &mut ParameterStore<S>,
        name: &str,
        hidden: usize,
        heads: usize,
        ffn: usize,
        dropout: f64,
        init: &mut Initializer,
    ) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), hidden, heads, init)?,
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_ln"), hidden, LN_EPS, init)?,
            ffn_in: Linear::new(store, &format!("{name}.ffn1"), hidden, ffn, init)?,
            ffn_out: Linear::new(store, &format!("{name}.ffn2"), ffn, hidden, init)?,
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_ln"), hidden, LN_EPS, init)?,
            dropout,
        })
    }

    pub fn forward<S: Real, R: RngCore + ?Sized>(
        &self,
        store: &ParameterStore<S>,
        x: &Tensor<S>,
        valid: &[bool],
        mut rng: Option<&mut R>,
    ) -> Result<(Tensor<S>, LayerCache<S>)> {
        let mut drop = |len: usize| match rng.as_deref_mut() {
            Some(r) if self.dropout > 0.0 => DropoutMask::sample(r, len, self.dropout),
            _ => DropoutMask::identity(),
        };
        let (mut a, attention) = self.attention.forward(store, x, valid)?;
        let attn_drop = drop(a.len());
        attn_drop.apply(&mut a);
        a.add_assign(x);
        let (h1, attn_norm) = self.attn_norm.forward(store, &a)?;
        let pre_act = self.ffn_in.forward(store, &h1)?;
        let act = pre_act.map(gelu);
        let mut f = self.ffn_out.forward(store, &act)?;
        let ffn_drop = drop(f.len());
        ffn_drop.apply(&mut f);
        f.add_assign(&h1);
        let (out, ffn_norm) = self.ffn_norm.forward(store, &f)?;
        Ok((
            out,
            LayerCache { attention, attn_drop, attn_norm, h1, pre_act, act, ffn_drop, ffn_norm },
        ))
    }

    pub fn backward<S: Real>(
        &self,
        store: &mut ParameterStore<S>,
        cache: &LayerCache<S>,
        dy: &Tensor<S>,
    ) -> Tensor<S> {
        let mut df = self.ffn_norm.backward(store, &cache.ffn_norm, dy);
        // residual branch into h1
        let mut dh1 = df.clone();
        cache.ffn_drop.apply(&mut df);
        let mut dact = self.ffn_out.backward(store, &cache.act, &df);
        for (d, &z) in dact.data_mut().iter_mut().zip(cache.pre_act.data()) {
            *d *= gelu_grad(z);
        }
        dh1.add_assign(&self.ffn_in.backward(store, &cache.h1, &dact));
        let mut da = self.attn_norm.backward(store, &cache.attn_norm, &dh1);
        let mut dx = da.clone();
        cache.attn_drop.apply(&mut da);
        dx.add_assign(&self.attention.backward(store, &cache.attention, &da));
        dx
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub layers: Vec<TransformerLayer>,
    pub hidden: usize,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real>(
        store: &mut ParameterStore<S>,
        name: &str,
        num_layers: usize,
        hidden: usize,
        heads: usize,
        ffn: usize,
        dropout: f64,
        init: &mut Initializer,
    ) -> Result<Self> {
        let layers = (0..num_layers)
            .map(|i| {
                TransformerLayer::new(store, &format!("{name}.layer{i}"), hidden, heads, ffn, dropout, init)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers, hidden })
    }

    pub fn forward<S: Real, R: RngCore + ?Sized>(
        &self,
        store: &ParameterStore<S>,
        x: &Tensor<S>,
        valid: &[bool],
        mut rng: Option<&mut R>,
    ) -> Result<(Tensor<S>, Vec<LayerCache<S>>)> {
        batch_dims(x, self.hidden)?;
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(store, &h, valid, rng.as_deref_mut())?;
            caches.push(cache);
            h = next;
        }
        Ok((h, caches))
    }

    pub fn backward<S: Real>(
        &self,
        store: &mut ParameterStore<S>,
        caches: &[LayerCache<S>],
        dy: &Tensor<S>,
    ) -> Tensor<S> {
        let mut d = dy.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            d = layer.backward(store, cache, &d);
        }
        d
    }
}
