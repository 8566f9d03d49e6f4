//! Analytic gradients of the combined objective and the central
//! finite-difference checker that validates them.
//!
//! TopK masks and argmax picks are frozen per forward pass, so the analytic
//! gradient is the straight-through-on-support gradient. The checker skips
//! any parameter whose perturbation flips a mask, detected by comparing path
//! signatures.

use crate::error::{Error, Result};
use crate::sae::forward::{Selection, TokenForward};
use crate::sae::loss::{evaluate_batch, BatchEval, BatchLayout, SimMode};
use crate::sae::train::{TrainConfig, TrainingPair};
use crate::sae::SaeModel;

#[derive(Debug, Clone)]
pub(crate) struct GradBuffers {
    pub w_enc: Vec<f64>,
    pub w_dec: Vec<f64>,
    pub b_pre: Vec<f64>,
    pub b_enc: Vec<f64>,
}

impl GradBuffers {
    fn zeros(model: &SaeModel) -> Self {
        GradBuffers {
            w_enc: vec![0.0; model.w_enc().len()],
            w_dec: vec![0.0; model.w_dec().len()],
            b_pre: vec![0.0; model.b_pre().len()],
            b_enc: vec![0.0; model.b_enc().len()],
        }
    }

    fn flat_get(&self, flat: usize) -> f64 {
        let mut rest = flat;
        for tensor in [&self.w_enc, &self.w_dec, &self.b_pre, &self.b_enc] {
            if rest < tensor.len() {
                return tensor[rest];
            }
            rest -= tensor.len();
        }
        panic!("gradient index {flat} out of range");
    }
}

/// Gradient of a reconstruction-style pass `out = W_dec z (+ b_pre)` given
/// `v = dL/d(out)`, chained through the frozen support into every parameter.
fn recon_pass_backward(
    model: &SaeModel,
    fwd: &TokenForward,
    sel: &Selection,
    v: &[f64],
    with_bias: bool,
    grads: &mut GradBuffers,
) {
    let d = model.input_dim();
    let h = model.hidden_dim();
    for (idx, &u) in sel.ids.iter().enumerate() {
        let u = u as usize;
        let zu = sel.values[idx];
        let mut gz = 0.0;
        for i in 0..d {
            grads.w_dec[i * h + u] += v[i] * zu;
            gz += v[i] * model.w_dec()[i * h + u];
        }
        grads.b_enc[u] += gz;
        for j in 0..d {
            grads.w_enc[u * d + j] += gz * fwd.centered[j];
        }
        for j in 0..d {
            grads.b_pre[j] -= gz * model.w_enc()[u * d + j];
        }
    }
    if with_bias {
        for i in 0..d {
            grads.b_pre[i] += v[i];
        }
    }
}

/// Gradient of a code used purely through its values: given `gz` aligned with
/// the support, chain through the pre-activation.
fn code_backward(
    model: &SaeModel,
    fwd: &TokenForward,
    sel: &Selection,
    gz: &[f64],
    grads: &mut GradBuffers,
) {
    let d = model.input_dim();
    for (idx, &u) in sel.ids.iter().enumerate() {
        let g = gz[idx];
        if g == 0.0 {
            continue;
        }
        let u = u as usize;
        grads.b_enc[u] += g;
        for j in 0..d {
            grads.w_enc[u * d + j] += g * fwd.centered[j];
        }
        for j in 0..d {
            grads.b_pre[j] -= g * model.w_enc()[u * d + j];
        }
    }
}

/// Adds `coef * (b restricted to supp(a))` into `gz_a`.
fn add_restricted(gz_a: &mut [f64], a: &Selection, b: &Selection, coef: f64) {
    let mut i = 0;
    let mut j = 0;
    while i < a.ids.len() && j < b.ids.len() {
        match a.ids[i].cmp(&b.ids[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                gz_a[i] += coef * b.values[j];
                i += 1;
                j += 1;
            }
        }
    }
}

pub(crate) fn backward(
    model: &SaeModel,
    layout: &BatchLayout,
    config: &TrainConfig,
    eval: &BatchEval,
) -> GradBuffers {
    let d = model.input_dim();
    let h = model.hidden_dim();
    let mut grads = GradBuffers::zeros(model);
    let n_tokens = eval.fwds.len();
    let inv_t = 1.0 / n_tokens as f64;

    let mut v = vec![0.0; d];
    for fwd in &eval.fwds {
        // Main reconstruction pass.
        for i in 0..d {
            v[i] = 2.0 * inv_t * (fwd.recon_main[i] - fwd.x[i]);
        }
        recon_pass_backward(model, fwd, &fwd.main, &v, true, &mut grads);
        // Wide (4K) pass, weighted by 1/8.
        for i in 0..d {
            v[i] = 0.25 * inv_t * (fwd.recon_wide[i] - fwd.x[i]);
        }
        recon_pass_backward(model, fwd, &fwd.wide, &v, true, &mut grads);
        // Auxiliary residual pass.
        if let (Some(aux_sel), Some(aux_recon)) = (&fwd.aux, &fwd.aux_recon) {
            let wa = config.alpha * inv_t;
            if wa != 0.0 {
                for i in 0..d {
                    let s = (fwd.x[i] - fwd.recon_main[i]) - aux_recon[i];
                    v[i] = -2.0 * wa * s;
                }
                recon_pass_backward(model, fwd, &fwd.main, &v, true, &mut grads);
                recon_pass_backward(model, fwd, aux_sel, &v, false, &mut grads);
            }
        }
    }

    // Code-level gradients from the contrastive terms accumulate per token
    // before chaining through the encoder once.
    let mut gz: Vec<Vec<f64>> = eval.fwds.iter().map(|f| vec![0.0; f.main.nnz()]).collect();

    if let Some(coef) = &eval.cl_coef {
        if config.beta != 0.0 {
            let n = n_tokens;
            let mut scratch = vec![0.0; h];
            let mut touched: Vec<usize> = Vec::new();
            for m in 0..n {
                for (j, fwd_j) in eval.fwds.iter().enumerate() {
                    let q = coef[m * n + j] + coef[j * n + m];
                    if q == 0.0 {
                        continue;
                    }
                    for (idx, &u) in fwd_j.main.ids.iter().enumerate() {
                        let u = u as usize;
                        if scratch[u] == 0.0 {
                            touched.push(u);
                        }
                        scratch[u] += q * fwd_j.main.values[idx];
                    }
                }
                let sel = &eval.fwds[m].main;
                for (idx, &u) in sel.ids.iter().enumerate() {
                    gz[m][idx] += config.beta * scratch[u as usize];
                }
                for &u in &touched {
                    scratch[u] = 0.0;
                }
                touched.clear();
            }
        }
    }

    if config.gamma != 0.0 && !layout.pairs.is_empty() {
        let pair_w = config.gamma / layout.pairs.len() as f64;
        for (p, cache) in eval.sup.iter().enumerate() {
            let query = layout.pairs[p].query.clone();
            match config.supervised_mode {
                SimMode::Token => {
                    for (doc_idx, doc) in cache.docs.iter().enumerate() {
                        let coef = pair_w * cache.weights[doc_idx];
                        if coef == 0.0 {
                            continue;
                        }
                        for (qi_off, qt) in query.clone().enumerate() {
                            let winner = doc.start + cache.argmax[doc_idx][qi_off];
                            // Split to satisfy the borrow checker: qt != winner
                            // is guaranteed because query and doc ranges are
                            // disjoint in the layout.
                            let (q_sel, w_sel) = (&eval.fwds[qt].main, &eval.fwds[winner].main);
                            {
                                let gq = &mut gz[qt];
                                add_restricted(gq, q_sel, w_sel, coef);
                            }
                            {
                                let gw = &mut gz[winner];
                                add_restricted(gw, w_sel, q_sel, coef);
                            }
                        }
                    }
                }
                SimMode::Cls => {
                    let qt = query.start;
                    let a = &eval.fwds[qt].main;
                    let na = a.norm();
                    for (doc_idx, doc) in cache.docs.iter().enumerate() {
                        let coef = pair_w * cache.weights[doc_idx];
                        if coef == 0.0 {
                            continue;
                        }
                        let dt = doc.start;
                        let b = &eval.fwds[dt].main;
                        let nb = b.norm();
                        if na == 0.0 || nb == 0.0 {
                            continue;
                        }
                        let dot = crate::sae::forward::selection_dot(a, b);
                        let cos = dot / (na * nb);
                        {
                            let gq = &mut gz[qt];
                            add_restricted(gq, a, b, coef / (na * nb));
                            for (idx, &va) in a.values.iter().enumerate() {
                                gq[idx] -= coef * cos * va / (na * na);
                            }
                        }
                        {
                            let gd = &mut gz[dt];
                            add_restricted(gd, b, a, coef / (na * nb));
                            for (idx, &vb) in b.values.iter().enumerate() {
                                gd[idx] -= coef * cos * vb / (nb * nb);
                            }
                        }
                    }
                }
            }
        }
    }

    for (t, fwd) in eval.fwds.iter().enumerate() {
        code_backward(model, fwd, &fwd.main, &gz[t], &mut grads);
    }

    grads
}

/// Compares analytic gradients of the combined objective against central
/// finite differences, returning the maximum relative error over all
/// parameters whose masks stay fixed under the perturbation.
pub fn grad_check(
    model: &SaeModel,
    batch: &[TrainingPair],
    config: &TrainConfig,
    epsilon: f64,
) -> Result<f64> {
    if epsilon <= 0.0 || epsilon.is_nan() {
        return Err(Error::invalid_argument("epsilon must be > 0"));
    }
    let layout = BatchLayout::build(model, batch.iter())?;
    let base = evaluate_batch(model, &layout, config)?;
    let grads = backward(model, &layout, config, &base);

    let mut scratch = model.clone();
    let mut max_rel: f64 = 0.0;
    for flat in 0..model.param_count() {
        let original = scratch.param_get(flat);

        scratch.param_set(flat, original + epsilon);
        let plus = evaluate_batch(&scratch, &layout, config)?;
        scratch.param_set(flat, original - epsilon);
        let minus = evaluate_batch(&scratch, &layout, config)?;
        scratch.param_set(flat, original);

        if plus.signature != base.signature || minus.signature != base.signature {
            continue;
        }
        let fd = (plus.breakdown.total - minus.breakdown.total) / (2.0 * epsilon);
        let analytic = grads.flat_get(flat);
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
