//! Central finite-difference checks of every hand-written backward pass.
//!
//! All checks run in `f64`. Inputs of layer-level checks are stored as an
//! extra entry of the parameter store so that parameters and inputs are
//! perturbed through the same path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vlpre_ot::{IpotConfig, TransportPlan};

use crate::error::{Error, Result};
use crate::instance::{RegionInput, TrainingInstance};
use crate::model::{Model, ModelConfig};
use crate::nn::attention::MultiHeadAttention;
use crate::nn::layers::{gelu, gelu_grad, LayerNorm, Linear};
use crate::nn::loss::{l2_loss, sigmoid_bce, softmax, softmax_cross_entropy, softmax_kl};
use crate::nn::transformer::{Encoder, TransformerLayer, LN_EPS};
use crate::nn::{Initializer, ParamId, ParameterStore, Tensor};
use crate::tasks::masking::{MaskAction, MaskModality, MaskPlan, MaskSet};
use crate::tasks::negatives::ItmSample;
use crate::tasks::objectives::{
    itm_loss, mlm_loss, mrc_kl_loss, mrc_loss, mrfr_loss, wra_loss, MaskedExample, Pass,
};

pub const STEP: f64 = 1e-5;
pub const POINTWISE_TOL: f64 = 1e-4;
pub const STACKED_TOL: f64 = 1e-3;
/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are not judged on rounding noise alone.
pub const REL_FLOOR: f64 = 1e-6;
/// At most this many entries of one tensor are probed.
const MAX_ENTRIES_PER_TENSOR: usize = 96;

pub const OPS: [&str; 18] = [
    "linear",
    "layer_norm",
    "gelu",
    "attention",
    "transformer_layer",
    "encoder",
    "embed_tokens",
    "embed_regions",
    "softmax_cross_entropy",
    "kl_divergence",
    "l2_loss",
    "sigmoid_bce",
    "mlm",
    "itm",
    "wra",
    "mrfr",
    "mrc",
    "mrc_kl",
];

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub op: String,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub worst_entry: String,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient produced by `loss(store, true)` with
/// central differences of `loss(store, false)` over every stored tensor.
pub fn check_store(
    op: &str,
    tolerance: f64,
    store: &mut ParameterStore<f64>,
    mut loss: impl FnMut(&mut ParameterStore<f64>, bool) -> Result<f64>,
) -> Result<GradCheckReport> {
    store.zero_grads();
    loss(store, true)?;
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).data().to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9c);
    let mut checked = 0;
    let mut worst = (0.0f64, String::new());
    let ids: Vec<ParamId> = store.ids().collect();
    for (pi, &id) in ids.iter().enumerate() {
        let n = store.value(id).len();
        let entries: Vec<usize> = if n <= MAX_ENTRIES_PER_TENSOR {
            (0..n).collect()
        } else {
            (0..MAX_ENTRIES_PER_TENSOR).map(|_| rng.random_range(0..n)).collect()
        };
        for e in entries {
            let orig = store.value(id).data()[e];
            store.value_mut(id).data_mut()[e] = orig + STEP;
            let plus = loss(store, false)?;
            store.value_mut(id).data_mut()[e] = orig - STEP;
            let minus = loss(store, false)?;
            store.value_mut(id).data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(analytic[pi][e], numeric);
            checked += 1;
            if err > worst.0 || worst.1.is_empty() {
                worst = (err, format!("{}[{e}]", store.name(id)));
            }
        }
    }
    store.zero_grads();
    Ok(GradCheckReport {
        op: op.to_string(),
        entries_checked: checked,
        max_rel_error: worst.0,
        worst_entry: worst.1,
        tolerance,
        passed: worst.0 <= tolerance,
    })
}

fn add_input(store: &mut ParameterStore<f64>, init: &mut Initializer, shape: &[usize]) -> Result<ParamId> {
    store.add("input", init.normal(shape))
}

/// `sum(r * y)` for a fixed random `r`, whose gradient w.r.t. `y` is `r`.
fn projection(shape: &[usize], seed: u64) -> Tensor<f64> {
    Initializer::new(seed, 1.0).normal(shape)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn check_linear() -> Result<GradCheckReport> {
    let mut store = ParameterStore::new();
    let mut init = Initializer::new(1, 0.5);
    let lin = Linear::new(&mut store, "fc", 4, 5, &mut init)?;
    store.value_mut(lin.bias.unwrap()).data_mut().iter_mut().for_each(|b| *b = 0.1);
    let x = add_input(&mut store, &mut init, &[2, 3, 4])?;
    let r = projection(&[2, 3, 5], 2);
    check_store("linear", POINTWISE_TOL, &mut store, |s, backward| {
        let input = s.value(x).clone();
        let y = lin.forward(s, &input)?;
        if backward {
            let dx = lin.backward(s, &input, &r);
            s.grad_mut(x).add_assign(&dx);
        }
        Ok(dot(&y, &r))
    })
}

fn check_layer_norm() -> Result<GradCheckReport> {
    let mut store = ParameterStore::new();
    let mut init = Initializer::new(3, 0.5);
    let ln = LayerNorm::new(&mut store, "ln", 6, LN_EPS, &mut init)?;
    let g: Tensor<f64> = init.normal(&[6]);
    store.value_mut(ln.gain).data_mut().iter_mut().zip(g.data()).for_each(|(v, d)| *v += d);
    let x = add_input(&mut store, &mut init, &[3, 6])?;
    let r = projection(&[3, 6], 4);
    check_store("layer_norm", POINTWISE_TOL, &mut store, |s, backward| {
        let input = s.value(x).clone();
        let (y, cache) = ln.forward(s, &input)?;
        if backward {
            let dx = ln.backward(s, &cache, &r);
            s.grad_mut(x).add_assign(&dx);
        }
        Ok(dot(&y, &r))
    })
}

fn check_gelu() -> Result<GradCheckReport> {
    let mut store = ParameterStore::new();
    let mut init = Initializer::new(5, 1.5);
    let x = add_input(&mut store, &mut init, &[40])?;
    let r = projection(&[40], 6);
    check_store("gelu", POINTWISE_TOL, &mut store, |s, backward| {
        let input = s.value(x).clone();
        let y = input.map(gelu);
        if backward {
            let dx = Tensor::new(
                vec![40],
                input.data().iter().zip(r.data()).map(|(&v, &d)| d * gelu_grad(v)).collect(),
            )?;
            s.grad_mut(x).add_assign(&dx);
        }
        Ok(dot(&y, &r))
    })
}

fn check_attention() -> Result<GradCheckReport> {
    let mut store = ParameterStore::new();
    let mut init = Initializer::new(7, 0.4);
    let attn = MultiHeadAttention::new(&mut store, "attn", 8, 2, &mut init)?;
    let x = add_input(&mut store, &mut init, &[2, 4, 8])?;
    let valid = [true, true, true, true, true, true, false, false];
    let mut r = projection(&[2, 4, 8], 8);
    // padded query rows do not feed any loss
    for row in 6..8 {
        r.row_mut(row).fill(0.0);
    }
    check_store("attention", STACKED_TOL, &mut store, |s, backward| {
        let input = s.value(x).clone();
        let (y, cache) = attn.forward(s, &input, &valid)?;
        if backward {
            let dx = attn.backward(s, &cache, &r);
            s.grad_mut(x).add_assign(&dx);
        }
        Ok(dot(&y, &r))
    })
}

fn check_transformer_layer() -> Result<GradCheckReport> {
    let mut store = ParameterStore::new();
    let mut init = Initializer::new(9, 0.4);
    let layer = TransformerLayer::new(&mut store, "layer", 8, 2, 16, 0.0, &mut init)?;
    let x = add_input(&mut store, &mut init, &[1, 5, 8])?;
    let r = projection(&[1, 5, 8], 10);
    check_store("transformer_layer", STACKED_TOL, &mut store, |s, backward| {
        let input = s.value(x).clone();
        let (y, cache) = layer.forward::<f64, dyn rand::RngCore>(s, &input, &[true; 5], None)?;
        if backward {
            let dx = layer.backward(s, &cache, &r);
            s.grad_mut(x).add_assign(&dx);
        }
        Ok(dot(&y, &r))
    })
}

fn check_encoder() -> Result<GradCheckReport> {
    let mut store = ParameterStore::new();
    let mut init = Initializer::new(11, 0.4);
    let enc = Encoder::new(&mut store, "enc", 2, 8, 2, 16, 0.0, &mut init)?;
    let x = add_input(&mut store, &mut init, &[2, 4, 8])?;
    let valid = [true, true, true, true, true, true, true, false];
    let mut r = projection(&[2, 4, 8], 12);
    r.row_mut(7).fill(0.0);
    check_store("encoder", STACKED_TOL, &mut store, |s, backward| {
        let input = s.value(x).clone();
        let (y, caches) = enc.forward::<f64, dyn rand::RngCore>(s, &input, &valid, None)?;
        if backward {
            let dx = enc.backward(s, &caches, &r);
            s.grad_mut(x).add_assign(&dx);
        }
        Ok(dot(&y, &r))
    })
}

/// Two-layer, H=8, A=2 model in `f64` with weights large enough that every
/// path carries signal.
pub fn tiny_model() -> Result<(Model, ParameterStore<f64>)> {
    let config = ModelConfig {
        num_layers: 2,
        hidden: 8,
        heads: 2,
        ffn_dim: 16,
        vocab_size: 14,
        max_tokens: 6,
        max_regions: 4,
        visual_dim: 5,
        num_classes: 4,
        dropout: 0.0,
        init_std: 0.3,
    };
    Model::new(config, 17)
}

/// Small deterministic instances matching [`tiny_model`].
pub fn tiny_instances() -> Vec<TrainingInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    [(4, 3), (3, 2)]
        .into_iter()
        .enumerate()
        .map(|(n, (t, k))| TrainingInstance {
            id: format!("g{n}"),
            tokens: (0..t).map(|_| rng.random_range(3..14)).collect(),
            regions: (0..k)
                .map(|_| {
                    let mut p: Vec<f32> = (0..4).map(|_| rng.random::<f32>() + 0.05).collect();
                    let sum: f32 = p.iter().sum();
                    p.iter_mut().for_each(|v| *v /= sum);
                    let x1 = rng.random_range(0.0..40.0f32);
                    let y1 = rng.random_range(0.0..40.0f32);
                    RegionInput {
                        feat: (0..5).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect(),
                        bbox: [x1, y1, x1 + rng.random_range(5.0..50.0f32), y1 + rng.random_range(5.0..50.0f32)],
                        img_w: 100,
                        img_h: 100,
                        cls_probs: p,
                    }
                })
                .collect(),
        })
        .collect()
}

fn check_embed_tokens() -> Result<GradCheckReport> {
    let (model, mut store) = tiny_model()?;
    let ids = [(0u32, 0usize), (5, 1), (5, 2), (9, 3), (1, 4)];
    let r = projection(&[ids.len(), 8], 13);
    check_store("embed_tokens", POINTWISE_TOL, &mut store, |s, backward| {
        let (y, cache) = model.embed_tokens(s, &ids)?;
        if backward {
            model.embed_tokens_backward(s, &cache, &r);
        }
        Ok(dot(&y, &r))
    })
}

fn check_embed_regions() -> Result<GradCheckReport> {
    let (model, mut store) = tiny_model()?;
    let data = tiny_instances();
    let input = crate::tasks::masking::SequenceInput::from_instance(&data[0])?;
    let r = projection(&[input.num_regions(), 8], 14);
    check_store("embed_regions", POINTWISE_TOL, &mut store, |s, backward| {
        let (y, cache) = model.embed_regions(s, &input.feats, &input.locations)?;
        if backward {
            model.embed_regions_backward(s, &cache, &r);
        }
        Ok(dot(&y, &r))
    })
}

fn logits_store(n: usize, seed: u64) -> Result<(ParameterStore<f64>, ParamId)> {
    let mut store = ParameterStore::new();
    let mut init = Initializer::new(seed, 1.0);
    let x = add_input(&mut store, &mut init, &[n])?;
    Ok((store, x))
}

fn check_softmax_ce() -> Result<GradCheckReport> {
    let (mut store, x) = logits_store(7, 31)?;
    check_store("softmax_cross_entropy", POINTWISE_TOL, &mut store, |s, backward| {
        let (l, g) = softmax_cross_entropy(s.value(x).data(), 3);
        if backward {
            s.grad_mut(x).data_mut().copy_from_slice(&g);
        }
        Ok(l)
    })
}

fn check_kl() -> Result<GradCheckReport> {
    let (mut store, x) = logits_store(6, 32)?;
    let target = softmax(&[0.3, -0.2, 1.1, 0.0, -1.0, 0.5]);
    check_store("kl_divergence", POINTWISE_TOL, &mut store, |s, backward| {
        let (l, g) = softmax_kl(&target, s.value(x).data())?;
        if backward {
            s.grad_mut(x).data_mut().copy_from_slice(&g);
        }
        Ok(l)
    })
}

fn check_l2() -> Result<GradCheckReport> {
    let (mut store, x) = logits_store(9, 33)?;
    let target: Tensor<f64> = Initializer::new(34, 1.0).normal(&[9]);
    check_store("l2_loss", POINTWISE_TOL, &mut store, |s, backward| {
        let (l, g) = l2_loss(s.value(x).data(), target.data());
        if backward {
            s.grad_mut(x).data_mut().copy_from_slice(&g);
        }
        Ok(l)
    })
}

fn check_bce() -> Result<GradCheckReport> {
    let (mut store, x) = logits_store(8, 35)?;
    check_store("sigmoid_bce", POINTWISE_TOL, &mut store, |s, backward| {
        let mut total = 0.0;
        let mut grads = Vec::new();
        for (i, &z) in s.value(x).data().iter().enumerate() {
            let (l, g) = sigmoid_bce(z, i % 2 == 0);
            total += l;
            grads.push(g);
        }
        if backward {
            s.grad_mut(x).data_mut().copy_from_slice(&grads);
        }
        Ok(total)
    })
}

fn text_plans(data: &[TrainingInstance]) -> Vec<MaskSet> {
    data.iter()
        .map(|inst| {
            let t = inst.tokens.len();
            let actions = vec![(0, MaskAction::MaskToken), (t - 1, MaskAction::RandomToken(4))];
            MaskSet::single(MaskPlan::new(MaskModality::Text, actions, t).expect("valid plan"))
        })
        .collect()
}

fn region_plans(data: &[TrainingInstance]) -> Vec<MaskSet> {
    data.iter()
        .map(|inst| {
            let actions = vec![(inst.regions.len() - 1, MaskAction::ZeroFeature)];
            MaskSet::single(MaskPlan::new(MaskModality::Region, actions, inst.regions.len()).expect("valid plan"))
        })
        .collect()
}

fn check_masked_task(op: &str) -> Result<GradCheckReport> {
    let (model, mut store) = tiny_model()?;
    let data = tiny_instances();
    let masks = if op == "mlm" { text_plans(&data) } else { region_plans(&data) };
    let batch: Vec<MaskedExample<'_>> = data
        .iter()
        .zip(masks)
        .map(|(instance, masks)| MaskedExample { instance, masks })
        .collect();
    check_store(op, POINTWISE_TOL, &mut store, |s, backward| {
        let pass = if backward { Pass::grad() } else { Pass::eval() };
        match op {
            "mlm" => mlm_loss(&model, s, &batch, pass),
            "mrfr" => mrfr_loss(&model, s, &batch, pass),
            "mrc" => mrc_loss(&model, s, &batch, pass),
            _ => mrc_kl_loss(&model, s, &batch, pass),
        }
    })
}

fn check_itm() -> Result<GradCheckReport> {
    let (model, mut store) = tiny_model()?;
    let data = tiny_instances();
    let swapped = TrainingInstance {
        id: "neg".into(),
        tokens: data[1].tokens.clone(),
        regions: data[0].regions.clone(),
    };
    let batch = vec![
        ItmSample::positive(data[0].clone()),
        ItmSample { instance: swapped, label: false, provenance: crate::tasks::Provenance::NegativeTextSwap },
    ];
    check_store("itm", POINTWISE_TOL, &mut store, |s, backward| {
        let pass = if backward { Pass::grad() } else { Pass::eval() };
        itm_loss(&model, s, &batch, pass)
    })
}

fn check_wra() -> Result<GradCheckReport> {
    let (model, mut store) = tiny_model()?;
    let data = tiny_instances();
    let refs: Vec<&TrainingInstance> = data.iter().collect();
    let ipot = IpotConfig::default();
    let plans: Vec<TransportPlan> = wra_loss(&model, &mut store, &refs, &ipot, None, Pass::eval())?.plans;
    check_store("wra", STACKED_TOL, &mut store, |s, backward| {
        let pass = if backward { Pass::grad() } else { Pass::eval() };
        Ok(wra_loss(&model, s, &refs, &ipot, Some(&plans), pass)?.loss)
    })
}

pub fn run(op: &str) -> Result<GradCheckReport> {
    match op {
        "linear" => check_linear(),
        "layer_norm" => check_layer_norm(),
        "gelu" => check_gelu(),
        "attention" => check_attention(),
        "transformer_layer" => check_transformer_layer(),
        "encoder" => check_encoder(),
        "embed_tokens" => check_embed_tokens(),
        "embed_regions" => check_embed_regions(),
        "softmax_cross_entropy" => check_softmax_ce(),
        "kl_divergence" => check_kl(),
        "l2_loss" => check_l2(),
        "sigmoid_bce" => check_bce(),
        "mlm" | "mrfr" | "mrc" | "mrc_kl" => check_masked_task(op),
        "itm" => check_itm(),
        "wra" => check_wra(),
        other => Err(Error::Config(format!("unknown gradcheck op `{other}`"))),
    }
}

pub fn run_all() -> Result<Vec<GradCheckReport>> {
    OPS.iter().map(|op| run(op)).collect()
}
