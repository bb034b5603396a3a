//! The single-stream image-text encoder: embedders, transformer stack, and
//! the pre-training heads.

use std::ops::Range;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{CLS_ID, FIRST_WORD_ID, SEP_ID};
use crate::nn::layers::{gelu, gelu_grad};
use crate::nn::transformer::LN_EPS;
use crate::nn::{
    gemm, lit, Encoder, Initializer, LayerCache, LayerNorm, LayerNormCache, Linear, ParamId,
    ParameterStore, Real, Tensor,
};
use crate::tasks::masking::SequenceInput;

pub const LOCATION_DIM: usize = 7;
const TEXT_MODALITY: usize = 0;
const IMAGE_MODALITY: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Embedding table size, special tokens included.
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub max_regions: usize,
    pub visual_dim: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            hidden: 64,
            heads: 4,
            ffn_dim: 256,
            vocab_size: 64,
            max_tokens: 32,
            max_regions: 16,
            visual_dim: 16,
            num_classes: 8,
            dropout: 0.0,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_layers", self.num_layers),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("max_tokens", self.max_tokens),
            ("max_regions", self.max_regions),
            ("visual_dim", self.visual_dim),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.vocab_size <= FIRST_WORD_ID as usize {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no room past the special tokens",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.init_std > 0.0) {
            return Err(Error::Config("dropout must be in [0, 1) and init_std positive".into()));
        }
        Ok(())
    }

    pub fn max_positions(&self) -> usize {
        self.max_tokens + 2
    }
}

/// Where each segment sits in `[CLS] text [SEP] regions`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentLayout {
    pub num_tokens: usize,
    pub num_regions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Cls,
    Text,
    Sep,
    Region,
}

impl Segment {
    pub fn name(self) -> &'static str {
        match self {
            Segment::Cls => "cls",
            Segment::Text => "text",
            Segment::Sep => "sep",
            Segment::Region => "region",
        }
    }
}

impl SegmentLayout {
    pub const CLS: usize = 0;

    pub fn text(&self) -> Range<usize> {
        1..1 + self.num_tokens
    }

    pub fn sep(&self) -> usize {
        self.num_tokens + 1
    }

    pub fn regions(&self) -> Range<usize> {
        self.num_tokens + 2..self.len()
    }

    pub fn len(&self) -> usize {
        self.num_tokens + self.num_regions + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn segment(&self, pos: usize) -> Segment {
        if pos == Self::CLS {
            Segment::Cls
        } else if self.text().contains(&pos) {
            Segment::Text
        } else if pos == self.sep() {
            Segment::Sep
        } else {
            Segment::Region
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub word_embedding: ParamId,
    pub position_embedding: ParamId,
    pub modality_embedding: ParamId,
    pub text_norm: LayerNorm,
    pub visual_fc: Linear,
    pub location_fc: Linear,
    pub region_norm: LayerNorm,
    pub encoder: Encoder,
    pub mlm_transform: Linear,
    pub mlm_norm: LayerNorm,
    pub mlm_bias: ParamId,
    pub itm_head: Linear,
    pub mrfr_head: Linear,
    pub mrc_head: Linear,
}

/// Text-side embedding cache.
#[derive(Debug, Clone)]
pub struct TextCache<S> {
    ids: Vec<(u32, usize)>,
    norm: LayerNormCache<S>,
}

#[derive(Debug, Clone)]
pub struct RegionCache<S> {
    visual: Tensor<S>,
    location: Tensor<S>,
    norm: LayerNormCache<S>,
}

#[derive(Debug, Clone)]
pub struct ModelForward<S> {
    /// `[B, N, H]` contextualized outputs.
    pub hidden: Tensor<S>,
    /// `[B, N, H]` encoder inputs.
    pub embedded: Tensor<S>,
    pub seq_len: usize,
    pub layouts: Vec<SegmentLayout>,
    pub valid: Vec<bool>,
    pub layers: Vec<LayerCache<S>>,
    text: TextCache<S>,
    text_rows: Vec<usize>,
    region: RegionCache<S>,
    region_rows: Vec<usize>,
}

impl<S: Real> ModelForward<S> {
    /// Joint-sequence row of position `pos` in batch item `b`.
    pub fn row(&self, b: usize, pos: usize) -> usize {
        b * self.seq_len + pos
    }

    pub fn gather(&self, rows: &[usize]) -> Tensor<S> {
        gather_rows(&self.hidden, rows)
    }

    /// Attention weights of `layer`, `[B, A, N, N]`.
    pub fn attention(&self, layer: usize) -> &Tensor<S> {
        &self.layers[layer].attention.probs
    }
}

#[derive(Debug, Clone)]
pub struct MlmCache<S> {
    input: Tensor<S>,
    pre_act: Tensor<S>,
    norm: LayerNormCache<S>,
    transformed: Tensor<S>,
}

pub fn gather_rows<S: Real>(t: &Tensor<S>, rows: &[usize]) -> Tensor<S> {
    let h = t.cols();
    let mut out = Tensor::zeros(&[rows.len(), h]);
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(t.row(r));
    }
    out
}

pub fn scatter_add_rows<S: Real>(t: &mut Tensor<S>, rows: &[usize], src: &Tensor<S>) {
    for (i, &r) in rows.iter().enumerate() {
        for (a, &b) in t.row_mut(r).iter_mut().zip(src.row(i)) {
            *a += b;
        }
    }
}

impl Model {
    /// Fresh model with seeded N(0, init_std) weights, unit LN gains and zero biases.
    pub fn new<S: Real>(config: ModelConfig, seed: u64) -> Result<(Self, ParameterStore<S>)> {
        config.validate()?;
        let mut store = ParameterStore::new();
        let mut init = Initializer::new(seed, config.init_std);
        let c = &config;
        let h = c.hidden;
        let word_embedding = store.add("embed.word", init.normal(&[c.vocab_size, h]))?;
        let position_embedding = store.add("embed.position", init.normal(&[c.max_positions(), h]))?;
        let modality_embedding = store.add("embed.modality", init.normal(&[2, h]))?;
        let text_norm = LayerNorm::new(&mut store, "embed.text_ln", h, LN_EPS, &mut init)?;
        let visual_fc = Linear::new(&mut store, "embed.visual_fc", c.visual_dim, h, &mut init)?;
        let location_fc = Linear::new(&mut store, "embed.location_fc", LOCATION_DIM, h, &mut init)?;
        let region_norm = LayerNorm::new(&mut store, "embed.region_ln", h, LN_EPS, &mut init)?;
        let encoder = Encoder::new(&mut store, "encoder", c.num_layers, h, c.heads, c.ffn_dim, c.dropout, &mut init)?;
        let mlm_transform = Linear::new(&mut store, "heads.mlm.transform", h, h, &mut init)?;
        let mlm_norm = LayerNorm::new(&mut store, "heads.mlm.ln", h, LN_EPS, &mut init)?;
        let mlm_bias = store.add("heads.mlm.bias", init.constant(&[c.vocab_size], 0.0))?;
        let itm_head = Linear::new(&mut store, "heads.itm", h, 1, &mut init)?;
        let mrfr_head = Linear::new(&mut store, "heads.mrfr", h, c.visual_dim, &mut init)?;
        let mrc_head = Linear::new(&mut store, "heads.mrc", h, c.num_classes, &mut init)?;
        let model = Self {
            config,
            word_embedding,
            position_embedding,
            modality_embedding,
            text_norm,
            visual_fc,
            location_fc,
            region_norm,
            encoder,
            mlm_transform,
            mlm_norm,
            mlm_bias,
            itm_head,
            mrfr_head,
            mrc_head,
        };
        Ok((model, store))
    }

    fn check_input(&self, input: &SequenceInput) -> Result<()> {
        let c = &self.config;
        let (t, k) = (input.num_tokens(), input.num_regions());
        if t == 0 || k == 0 {
            return Err(Error::ShapeMismatch(format!(
                "need at least one token and one region, got {t} and {k}"
            )));
        }
        if t > c.max_tokens || k > c.max_regions {
            return Err(Error::SequenceTooLong {
                tokens: t,
                regions: k,
                max_tokens: c.max_tokens,
                max_regions: c.max_regions,
            });
        }
        if input.visual_dim != c.visual_dim {
            return Err(Error::ShapeMismatch(format!(
                "visual features of size {}, model expects {}",
                input.visual_dim, c.visual_dim
            )));
        }
        if let Some(&bad) = input.tokens.iter().find(|&&t| t as usize >= c.vocab_size) {
            return Err(Error::VocabOutOfRange { token: bad as usize, vocab_size: c.vocab_size });
        }
        Ok(())
    }

    /// `LN(word[id] + position[pos] + modality[text])` for each `(id, pos)`.
    pub fn embed_tokens<S: Real>(
        &self,
        store: &ParameterStore<S>,
        ids: &[(u32, usize)],
    ) -> Result<(Tensor<S>, TextCache<S>)> {
        let h = self.config.hidden;
        let words = store.value(self.word_embedding);
        let positions = store.value(self.position_embedding);
        let modality = store.value(self.modality_embedding).row(TEXT_MODALITY);
        let mut pre = Tensor::zeros(&[ids.len(), h]);
        for (r, &(id, pos)) in ids.iter().enumerate() {
            if id as usize >= self.config.vocab_size {
                return Err(Error::VocabOutOfRange { token: id as usize, vocab_size: self.config.vocab_size });
            }
            if pos >= self.config.max_positions() {
                return Err(Error::ShapeMismatch(format!("position {pos} beyond table")));
            }
            let row = pre.row_mut(r);
            for (((o, &w), &p), &m) in row.iter_mut().zip(words.row(id as usize)).zip(positions.row(pos)).zip(modality) {
                *o = w + p + m;
            }
        }
        let (out, norm) = self.text_norm.forward(store, &pre)?;
        Ok((out, TextCache { ids: ids.to_vec(), norm }))
    }

    pub fn embed_tokens_backward<S: Real>(
        &self,
        store: &mut ParameterStore<S>,
        cache: &TextCache<S>,
        dy: &Tensor<S>,
    ) {
        let dpre = self.text_norm.backward(store, &cache.norm, dy);
        let mut dmod = vec![S::zero(); self.config.hidden];
        {
            let dw = store.grad_mut(self.word_embedding);
            for (r, &(id, _)) in cache.ids.iter().enumerate() {
                for (g, &d) in dw.row_mut(id as usize).iter_mut().zip(dpre.row(r)) {
                    *g += d;
                }
            }
        }
        {
            let dp = store.grad_mut(self.position_embedding);
            for (r, &(_, pos)) in cache.ids.iter().enumerate() {
                for ((g, &d), m) in dp.row_mut(pos).iter_mut().zip(dpre.row(r)).zip(dmod.iter_mut()) {
                    *g += d;
                    *m += d;
                }
            }
        }
        for (g, d) in store.grad_mut(self.modality_embedding).row_mut(TEXT_MODALITY).iter_mut().zip(dmod) {
            *g += d;
        }
    }

    /// `LN(FC(feature) + FC(location) + modality[image])`, one row per region.
    pub fn embed_regions<S: Real>(
        &self,
        store: &ParameterStore<S>,
        feats: &[f32],
        locations: &[[f64; 7]],
    ) -> Result<(Tensor<S>, RegionCache<S>)> {
        let k = locations.len();
        let dv = self.config.visual_dim;
        if feats.len() != k * dv {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {k} regions of size {dv}",
                feats.len()
            )));
        }
        let visual = Tensor::new(vec![k, dv], feats.iter().map(|&v| lit(f64::from(v))).collect())?;
        let location = Tensor::new(
            vec![k, LOCATION_DIM],
            locations.iter().flatten().map(|&v| lit(v)).collect(),
        )?;
        let mut pre = self.visual_fc.forward(store, &visual)?;
        pre.add_assign(&self.location_fc.forward(store, &location)?);
        let modality = store.value(self.modality_embedding).row(IMAGE_MODALITY);
        for r in 0..k {
            for (o, &m) in pre.row_mut(r).iter_mut().zip(modality) {
                *o += m;
            }
        }
        let (out, norm) = self.region_norm.forward(store, &pre)?;
        Ok((out, RegionCache { visual, location, norm }))
    }

    pub fn embed_regions_backward<S: Real>(
        &self,
        store: &mut ParameterStore<S>,
        cache: &RegionCache<S>,
        dy: &Tensor<S>,
    ) {
        let dpre = self.region_norm.backward(store, &cache.norm, dy);
        self.visual_fc.backward(store, &cache.visual, &dpre);
        self.location_fc.backward(store, &cache.location, &dpre);
        let dm = store.grad_mut(self.modality_embedding).row_mut(IMAGE_MODALITY);
        for r in 0..dpre.rows() {
            for (g, &d) in dm.iter_mut().zip(dpre.row(r)) {
                *g += d;
            }
        }
    }

    /// Embeds a padded batch of `[CLS] text [SEP] regions` sequences.
    #[allow(clippy::type_complexity)]
    fn embed_batch<S: Real>(
        &self,
        store: &ParameterStore<S>,
        inputs: &[SequenceInput],
    ) -> Result<(Tensor<S>, usize, Vec<SegmentLayout>, Vec<bool>, TextCache<S>, Vec<usize>, RegionCache<S>, Vec<usize>)>
    {
        if inputs.is_empty() {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        for input in inputs {
            self.check_input(input)?;
        }
        let layouts: Vec<SegmentLayout> = inputs
            .iter()
            .map(|i| SegmentLayout { num_tokens: i.num_tokens(), num_regions: i.num_regions() })
            .collect();
        let n = layouts.iter().map(SegmentLayout::len).max().unwrap();
        let b = inputs.len();
        let mut ids = Vec::new();
        let mut text_rows = Vec::new();
        let mut feats = Vec::new();
        let mut locations = Vec::new();
        let mut region_rows = Vec::new();
        let mut valid = vec![false; b * n];
        for (bi, (input, layout)) in inputs.iter().zip(&layouts).enumerate() {
            let base = bi * n;
            valid[base..base + layout.len()].fill(true);
            ids.push((CLS_ID, 0));
            text_rows.push(base);
            for (p, &t) in input.tokens.iter().enumerate() {
                ids.push((t, p + 1));
                text_rows.push(base + p + 1);
            }
            ids.push((SEP_ID, layout.sep()));
            text_rows.push(base + layout.sep());
            feats.extend_from_slice(&input.feats);
            locations.extend_from_slice(&input.locations);
            region_rows.extend(layout.regions().map(|p| base + p));
        }
        let (text_emb, text) = self.embed_tokens(store, &ids)?;
        let (region_emb, region) = self.embed_regions(store, &feats, &locations)?;
        let mut x = Tensor::zeros(&[b, n, self.config.hidden]);
        scatter_add_rows(&mut x, &text_rows, &text_emb);
        scatter_add_rows(&mut x, &region_rows, &region_emb);
        Ok((x, n, layouts, valid, text, text_rows, region, region_rows))
    }

    /// Embeds one sequence without running the encoder. Returns `[N, H]`.
    pub fn build_joint_sequence<S: Real>(
        &self,
        store: &ParameterStore<S>,
        input: &SequenceInput,
    ) -> Result<(Tensor<S>, SegmentLayout)> {
        let (x, n, layouts, ..) = self.embed_batch(store, std::slice::from_ref(input))?;
        Ok((x.reshape(vec![n, self.config.hidden])?, layouts[0]))
    }

    pub fn forward<S: Real, R: RngCore + ?Sized>(
        &self,
        store: &ParameterStore<S>,
        inputs: &[SequenceInput],
        rng: Option<&mut R>,
    ) -> Result<ModelForward<S>> {
        let (embedded, seq_len, layouts, valid, text, text_rows, region, region_rows) =
            self.embed_batch(store, inputs)?;
        let (hidden, layers) = self.encoder.forward(store, &embedded, &valid, rng)?;
        Ok(ModelForward { hidden, embedded, seq_len, layouts, valid, layers, text, text_rows, region, region_rows })
    }

    /// Deterministic forward pass (no dropout).
    pub fn infer<S: Real>(&self, store: &ParameterStore<S>, inputs: &[SequenceInput]) -> Result<ModelForward<S>> {
        self.forward::<S, dyn RngCore>(store, inputs, None)
    }

    /// Backpropagates `d_hidden` (`[B, N, H]`) through encoder and embedders.
    pub fn backward<S: Real>(&self, store: &mut ParameterStore<S>, fwd: &ModelForward<S>, d_hidden: &Tensor<S>) {
        let dx = self.encoder.backward(store, &fwd.layers, d_hidden);
        let dtext = gather_rows(&dx, &fwd.text_rows);
        let dregion = gather_rows(&dx, &fwd.region_rows);
        self.embed_tokens_backward(store, &fwd.text, &dtext);
        self.embed_regions_backward(store, &fwd.region, &dregion);
    }

    /// Vocabulary logits `[M, V]` for encoder rows `h` (`[M, H]`); the output
    /// projection is the word embedding table.
    pub fn mlm_logits<S: Real>(&self, store: &ParameterStore<S>, h: &Tensor<S>) -> Result<(Tensor<S>, MlmCache<S>)> {
        let pre_act = self.mlm_transform.forward(store, h)?;
        let act = pre_act.map(gelu);
        let (transformed, norm) = self.mlm_norm.forward(store, &act)?;
        let mut logits = Tensor::zeros(&[h.rows(), self.config.vocab_size]);
        let bias = store.value(self.mlm_bias).data();
        for r in 0..logits.rows() {
            logits.row_mut(r).copy_from_slice(bias);
        }
        gemm(S::one(), transformed.mat(), store.value(self.word_embedding).mat().t(), S::one(), logits.mat_mut());
        Ok((logits, MlmCache { input: h.clone(), pre_act, norm, transformed }))
    }

    pub fn mlm_backward<S: Real>(&self, store: &mut ParameterStore<S>, cache: &MlmCache<S>, dlogits: &Tensor<S>) -> Tensor<S> {
        {
            let (_, grads) = store.split_mut();
            gemm(S::one(), dlogits.mat().t(), cache.transformed.mat(), S::one(), grads[self.word_embedding.index()].mat_mut());
            let db = grads[self.mlm_bias.index()].data_mut();
            for r in 0..dlogits.rows() {
                for (g, &d) in db.iter_mut().zip(dlogits.row(r)) {
                    *g += d;
                }
            }
        }
        let mut dt = Tensor::zeros(cache.transformed.shape());
        gemm(S::one(), dlogits.mat(), store.value(self.word_embedding).mat(), S::zero(), dt.mat_mut());
        let mut dact = self.mlm_norm.backward(store, &cache.norm, &dt);
        for (d, &z) in dact.data_mut().iter_mut().zip(cache.pre_act.data()) {
            *d *= gelu_grad(z);
        }
        self.mlm_transform.backward(store, &cache.input, &dact)
    }
}
