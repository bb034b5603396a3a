//! The six pre-training losses. Each runs one forward pass over a batch,
//! returns the mean loss, and (when asked) accumulates gradients into the
//! parameter store.

use ndarray::Array2;
use rand::RngCore;
use vlpre_ot::{cosine_cost, ipot_solve, uniform_weights, IpotConfig, TransportPlan};

use super::masking::{MaskModality, MaskPlan, MaskSet, SequenceInput};
use super::negatives::ItmSample;
use crate::error::{Error, Result};
use crate::instance::TrainingInstance;
use crate::model::{scatter_add_rows, Model, ModelForward};
use crate::nn::loss::{l2_loss, sigmoid, sigmoid_bce, softmax_cross_entropy, softmax_kl};
use crate::nn::{lit, ParameterStore, Real, Tensor};

/// An instance together with the masks for one forward pass.
#[derive(Debug, Clone)]
pub struct MaskedExample<'a> {
    pub instance: &'a TrainingInstance,
    pub masks: MaskSet,
}

/// How a loss call should run.
pub struct Pass<'r> {
    pub backward: bool,
    pub dropout_rng: Option<&'r mut dyn RngCore>,
}

impl Pass<'_> {
    /// Forward only, no dropout.
    pub fn eval() -> Self {
        Pass { backward: false, dropout_rng: None }
    }

    /// Forward and backward, no dropout.
    pub fn grad() -> Self {
        Pass { backward: true, dropout_rng: None }
    }
}

impl<'r> Pass<'r> {
    pub fn train(rng: &'r mut dyn RngCore) -> Self {
        Pass { backward: true, dropout_rng: Some(rng) }
    }
}

fn to_f64<S: Real>(v: S) -> f64 {
    v.to_f64().expect("finite scalar")
}

fn plan_for<'e>(ex: &'e MaskedExample<'_>, modality: MaskModality) -> Result<&'e MaskPlan> {
    let plan = match modality {
        MaskModality::Text => ex.masks.text(),
        MaskModality::Region => ex.masks.region(),
    };
    let plan = plan.ok_or(Error::InvalidPlanModality {
        expected: match modality {
            MaskModality::Text => "text",
            MaskModality::Region => "region",
        },
    })?;
    if ex.masks.is_dual() && !ex.masks.is_ablation() {
        return Err(Error::DualModalityMask);
    }
    Ok(plan)
}

/// Forward pass over masked inputs, returning the rows of the masked
/// positions of `modality` alongside the matching `(batch, index)` pairs.
fn masked_forward<S: Real>(
    model: &Model,
    store: &ParameterStore<S>,
    batch: &[MaskedExample<'_>],
    modality: MaskModality,
    rng: Option<&mut dyn RngCore>,
) -> Result<(ModelForward<S>, Vec<usize>, Vec<(usize, usize)>)> {
    let mut inputs = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    for (b, ex) in batch.iter().enumerate() {
        let plan = plan_for(ex, modality)?;
        inputs.push(SequenceInput::masked(ex.instance, &ex.masks)?);
        targets.extend(plan.indices().map(|i| (b, i)));
    }
    let fwd = model.forward(store, &inputs, rng)?;
    let rows = targets
        .iter()
        .map(|&(b, i)| {
            let layout = fwd.layouts[b];
            let pos = match modality {
                MaskModality::Text => layout.text().start + i,
                MaskModality::Region => layout.regions().start + i,
            };
            fwd.row(b, pos)
        })
        .collect();
    Ok((fwd, rows, targets))
}

fn backprop_rows<S: Real>(
    model: &Model,
    store: &mut ParameterStore<S>,
    fwd: &ModelForward<S>,
    rows: &[usize],
    d_rows: &Tensor<S>,
) {
    let mut d_hidden = Tensor::zeros(fwd.hidden.shape());
    scatter_add_rows(&mut d_hidden, rows, d_rows);
    model.backward(store, fwd, &d_hidden);
}

/// Mean negative log-likelihood of the original words at masked text positions.
pub fn mlm_loss<S: Real>(
    model: &Model,
    store: &mut ParameterStore<S>,
    batch: &[MaskedExample<'_>],
    pass: Pass<'_>,
) -> Result<f64> {
    let (fwd, rows, targets) = masked_forward(model, store, batch, MaskModality::Text, pass.dropout_rng)?;
    let h = fwd.gather(&rows);
    let (logits, cache) = model.mlm_logits(store, &h)?;
    let scale = lit::<S>(1.0 / rows.len() as f64);
    let mut total = S::zero();
    let mut dlogits = Tensor::zeros(logits.shape());
    for (r, &(b, i)) in targets.iter().enumerate() {
        let word = batch[b].instance.tokens[i] as usize;
        let (l, g) = softmax_cross_entropy(logits.row(r), word);
        total += l;
        for (d, gv) in dlogits.row_mut(r).iter_mut().zip(g) {
            *d = gv * scale;
        }
    }
    if pass.backward {
        let dh = model.mlm_backward(store, &cache, &dlogits);
        backprop_rows(model, store, &fwd, &rows, &dh);
    }
    Ok(to_f64(total * scale))
}

/// Argmax word and true word for every masked text position.
pub fn mlm_predictions<S: Real>(
    model: &Model,
    store: &ParameterStore<S>,
    batch: &[MaskedExample<'_>],
) -> Result<Vec<(usize, usize)>> {
    let (fwd, rows, targets) = masked_forward(model, store, batch, MaskModality::Text, None)?;
    let (logits, _) = model.mlm_logits(store, &fwd.gather(&rows))?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(r, &(b, i))| (argmax(logits.row(r)), batch[b].instance.tokens[i] as usize))
        .collect())
}

pub(crate) fn argmax<S: Real>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

enum RegionTarget {
    Features,
    HardClass,
    SoftClass,
}

fn region_loss<S: Real>(
    model: &Model,
    store: &mut ParameterStore<S>,
    batch: &[MaskedExample<'_>],
    pass: Pass<'_>,
    target: RegionTarget,
) -> Result<f64> {
    let (fwd, rows, targets) = masked_forward(model, store, batch, MaskModality::Region, pass.dropout_rng)?;
    let h = fwd.gather(&rows);
    let head = match target {
        RegionTarget::Features => &model.mrfr_head,
        RegionTarget::HardClass | RegionTarget::SoftClass => &model.mrc_head,
    };
    let out = head.forward(store, &h)?;
    let scale = lit::<S>(1.0 / rows.len() as f64);
    let mut total = S::zero();
    let mut dout = Tensor::zeros(out.shape());
    for (r, &(b, j)) in targets.iter().enumerate() {
        let region = &batch[b].instance.regions[j];
        let (l, g) = match target {
            RegionTarget::Features => {
                let t: Vec<S> = region.feat.iter().map(|&v| lit(f64::from(v))).collect();
                l2_loss(out.row(r), &t)
            }
            RegionTarget::HardClass => softmax_cross_entropy(out.row(r), region.class_id()),
            RegionTarget::SoftClass => {
                let t: Vec<S> = region.cls_probs.iter().map(|&v| lit(f64::from(v))).collect();
                softmax_kl(&t, out.row(r))?
            }
        };
        total += l;
        for (d, gv) in dout.row_mut(r).iter_mut().zip(g) {
            *d = gv * scale;
        }
    }
    if pass.backward {
        let dh = head.backward(store, &h, &dout);
        backprop_rows(model, store, &fwd, &rows, &dh);
    }
    Ok(to_f64(total * scale))
}

/// Mean squared L2 error between regressed and original features of masked regions.
pub fn mrfr_loss<S: Real>(
    model: &Model,
    store: &mut ParameterStore<S>,
    batch: &[MaskedExample<'_>],
    pass: Pass<'_>,
) -> Result<f64> {
    region_loss(model, store, batch, pass, RegionTarget::Features)
}

/// Mean cross-entropy against the detector's most confident class.
pub fn mrc_loss<S: Real>(
    model: &Model,
    store: &mut ParameterStore<S>,
    batch: &[MaskedExample<'_>],
    pass: Pass<'_>,
) -> Result<f64> {
    region_loss(model, store, batch, pass, RegionTarget::HardClass)
}

/// Mean `KL(detector distribution || predicted distribution)`.
pub fn mrc_kl_loss<S: Real>(
    model: &Model,
    store: &mut ParameterStore<S>,
    batch: &[MaskedExample<'_>],
    pass: Pass<'_>,
) -> Result<f64> {
    region_loss(model, store, batch, pass, RegionTarget::SoftClass)
}

/// Argmax class and detector class for every masked region.
pub fn mrc_predictions<S: Real>(
    model: &Model,
    store: &ParameterStore<S>,
    batch: &[MaskedExample<'_>],
) -> Result<Vec<(usize, usize)>> {
    let (fwd, rows, targets) = masked_forward(model, store, batch, MaskModality::Region, None)?;
    let logits = model.mrc_head.forward(store, &fwd.gather(&rows))?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(r, &(b, j))| (argmax(logits.row(r)), batch[b].instance.regions[j].class_id()))
        .collect())
}

fn unmasked_forward<S: Real>(
    model: &Model,
    store: &ParameterStore<S>,
    instances: &[&TrainingInstance],
    rng: Option<&mut dyn RngCore>,
) -> Result<ModelForward<S>> {
    let inputs = instances
        .iter()
        .map(|i| SequenceInput::from_instance(i))
        .collect::<Result<Vec<_>>>()?;
    model.forward(store, &inputs, rng)
}

/// Matching logits read off the `[CLS]` output.
pub fn itm_logits<S: Real>(
    model: &Model,
    store: &ParameterStore<S>,
    instances: &[&TrainingInstance],
) -> Result<Vec<f64>> {
    let fwd = unmasked_forward(model, store, instances, None)?;
    let rows: Vec<usize> = (0..instances.len()).map(|b| fwd.row(b, 0)).collect();
    let logits = model.itm_head.forward(store, &fwd.gather(&rows))?;
    Ok(logits.data().iter().map(|&v| to_f64(v)).collect())
}

/// Match probabilities in `(0, 1)`.
pub fn itm_score<S: Real>(
    model: &Model,
    store: &ParameterStore<S>,
    instances: &[&TrainingInstance],
) -> Result<Vec<f64>> {
    Ok(itm_logits(model, store, instances)?.into_iter().map(sigmoid).collect())
}

/// Mean binary cross-entropy of the matching score.
pub fn itm_loss<S: Real>(
    model: &Model,
    store: &mut ParameterStore<S>,
    batch: &[ItmSample],
    pass: Pass<'_>,
) -> Result<f64> {
    let instances: Vec<&TrainingInstance> = batch.iter().map(|s| &s.instance).collect();
    let fwd = unmasked_forward(model, store, &instances, pass.dropout_rng)?;
    let rows: Vec<usize> = (0..batch.len()).map(|b| fwd.row(b, 0)).collect();
    let h = fwd.gather(&rows);
    let logits = model.itm_head.forward(store, &h)?;
    let scale = lit::<S>(1.0 / batch.len() as f64);
    let mut total = S::zero();
    let mut dlogits = Tensor::zeros(logits.shape());
    for (r, sample) in batch.iter().enumerate() {
        let (l, g) = sigmoid_bce(logits.data()[r], sample.label);
        total += l;
        dlogits.data_mut()[r] = g * scale;
    }
    if pass.backward {
        let dh = model.itm_head.backward(store, &h, &dlogits);
        backprop_rows(model, store, &fwd, &rows, &dh);
    }
    Ok(to_f64(total * scale))
}

#[derive(Debug, Clone)]
pub struct WraOutput {
    /// Mean transport distance over the batch.
    pub loss: f64,
    pub distances: Vec<f64>,
    pub plans: Vec<TransportPlan>,
}

fn rows_f64<S: Real>(t: &Tensor<S>, rows: impl Iterator<Item = usize>) -> Array2<f64> {
    let rows: Vec<usize> = rows.collect();
    let h = t.cols();
    Array2::from_shape_fn((rows.len(), h), |(i, c)| to_f64(t.row(rows[i])[c]))
}

/// Transport distance between contextualized word and region outputs under
/// cosine cost and uniform marginals. The plan comes from IPOT (or from
/// `frozen_plans`) and is treated as a constant in the backward pass.
pub fn wra_loss<S: Real>(
    model: &Model,
    store: &mut ParameterStore<S>,
    instances: &[&TrainingInstance],
    ipot: &IpotConfig,
    frozen_plans: Option<&[TransportPlan]>,
    pass: Pass<'_>,
) -> Result<WraOutput> {
    let (out, grad) = wra_forward(model, store, instances, ipot, frozen_plans, pass.backward, pass.dropout_rng)?;
    if let Some((fwd, d_hidden)) = grad {
        model.backward(store, &fwd, &d_hidden);
    }
    Ok(out)
}

/// Forward-only [`wra_loss`] against a shared store.
pub fn wra_distances<S: Real>(
    model: &Model,
    store: &ParameterStore<S>,
    instances: &[&TrainingInstance],
    ipot: &IpotConfig,
) -> Result<WraOutput> {
    Ok(wra_forward(model, store, instances, ipot, None, false, None)?.0)
}

#[allow(clippy::type_complexity)]
fn wra_forward<S: Real>(
    model: &Model,
    store: &ParameterStore<S>,
    instances: &[&TrainingInstance],
    ipot: &IpotConfig,
    frozen_plans: Option<&[TransportPlan]>,
    backward: bool,
    rng: Option<&mut dyn RngCore>,
) -> Result<(WraOutput, Option<(ModelForward<S>, Tensor<S>)>)> {
    if let Some(p) = frozen_plans {
        if p.len() != instances.len() {
            return Err(Error::ShapeMismatch(format!("{} plans for {} instances", p.len(), instances.len())));
        }
    }
    let fwd = unmasked_forward(model, store, instances, rng)?;
    let inv_b = 1.0 / instances.len() as f64;
    let mut d_hidden = Tensor::<S>::zeros(if backward { fwd.hidden.shape() } else { &[1] });
    let mut distances = Vec::with_capacity(instances.len());
    let mut plans = Vec::with_capacity(instances.len());
    for (b, layout) in fwd.layouts.iter().enumerate() {
        let text_rows: Vec<usize> = layout.text().map(|p| fwd.row(b, p)).collect();
        let region_rows: Vec<usize> = layout.regions().map(|p| fwd.row(b, p)).collect();
        let words = rows_f64(&fwd.hidden, text_rows.iter().copied());
        let regions = rows_f64(&fwd.hidden, region_rows.iter().copied());
        let cost = cosine_cost(words.view(), regions.view())?;
        let plan = match frozen_plans {
            Some(p) => {
                let p = p[b].clone();
                if (p.rows(), p.cols()) != (cost.rows(), cost.cols()) {
                    return Err(Error::ShapeMismatch("frozen plan shape".into()));
                }
                p
            }
            None => {
                let a = uniform_weights(cost.rows());
                let bw = uniform_weights(cost.cols());
                ipot_solve(&cost, &a, &bw, ipot)?.plan
            }
        };
        distances.push(plan.inner(&cost));
        if backward {
            // dC/dw = -(v_hat - cos w_hat) / |w|, and symmetrically for v.
            let wn: Vec<f64> = words.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
            let vn: Vec<f64> = regions.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
            let h = words.ncols();
            let mut dw = Array2::<f64>::zeros(words.raw_dim());
            let mut dv = Array2::<f64>::zeros(regions.raw_dim());
            for i in 0..words.nrows() {
                for j in 0..regions.nrows() {
                    let weight = plan.get(i, j) * inv_b;
                    if weight == 0.0 {
                        continue;
                    }
                    let cos = 1.0 - cost.get(i, j);
                    for c in 0..h {
                        let w_hat = words[[i, c]] / wn[i];
                        let v_hat = regions[[j, c]] / vn[j];
                        dw[[i, c]] -= weight * (v_hat - cos * w_hat) / wn[i];
                        dv[[j, c]] -= weight * (w_hat - cos * v_hat) / vn[j];
                    }
                }
            }
            for (i, &r) in text_rows.iter().enumerate() {
                for (d, &g) in d_hidden.row_mut(r).iter_mut().zip(dw.row(i)) {
                    *d += lit(g);
                }
            }
            for (j, &r) in region_rows.iter().enumerate() {
                for (d, &g) in d_hidden.row_mut(r).iter_mut().zip(dv.row(j)) {
                    *d += lit(g);
                }
            }
        }
        plans.push(plan);
    }
    let loss = distances.iter().sum::<f64>() * inv_b;
    let out = WraOutput { loss, distances, plans };
    Ok((out, backward.then_some((fwd, d_hidden))))
}
