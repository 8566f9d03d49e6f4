//! The hybrid training objective: Multi-TopK reconstruction, dead-neuron
//! auxiliary reconstruction, sparse contrastive, and supervised contrastive
//! terms, combined as `L = L_mt + alpha*L_aux + beta*L_cl + gamma*L_ce`.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::sae::forward::{
    forward_token, selection_dot, squared_distance, token_signature, PathSignature, Selection,
    TokenForward,
};
use crate::sae::train::{TrainConfig, TrainingPair};
use crate::sae::SaeModel;
use crate::sparse::{sparse_cosine, DenseVector, SparseVector, TokenBag};

/// How the supervised term measures query/document similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    /// Sum over query tokens of the best sparse dot against any doc token.
    Token,
    /// Cosine similarity of the global codes.
    Cls,
}

/// Per-term values of the combined objective. `total` is the weighted sum
/// `reconstruction + alpha*auxiliary + beta*contrastive + gamma*supervised`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub auxiliary: f64,
    pub contrastive: f64,
    pub supervised: f64,
    pub total: f64,
}

/// Squared L2 reconstruction error.
pub fn recon_loss(x: &DenseVector, x_hat: &DenseVector) -> Result<f64> {
    if x.dim() != x_hat.dim() {
        return Err(Error::invalid_argument(format!(
            "recon_loss length mismatch: {} vs {}",
            x.dim(),
            x_hat.dim()
        )));
    }
    Ok(squared_distance(x.values(), x_hat.values()))
}

/// Reconstruction at sparsity K plus one eighth of the reconstruction at 4K.
pub fn multi_topk_recon(model: &SaeModel, x: &DenseVector) -> Result<f64> {
    check_multi_topk(model)?;
    check_input(model, x)?;
    let fwd = forward_token(model, x.values(), model.sparsity(), None, 0);
    Ok(multi_topk_from_forward(&fwd))
}

fn multi_topk_from_forward(fwd: &TokenForward) -> f64 {
    squared_distance(&fwd.x, &fwd.recon_main) + squared_distance(&fwd.x, &fwd.recon_wide) / 8.0
}

/// Residual reconstruction through the top `k_aux` dead neurons; 0 when no
/// neuron has been inactive for `dead_threshold` tokens.
pub fn aux_loss(
    model: &SaeModel,
    x: &DenseVector,
    k_aux: usize,
    dead_threshold: u64,
) -> Result<f64> {
    check_input(model, x)?;
    let dead = model.dead_neurons(dead_threshold);
    if dead.is_empty() {
        return Ok(0.0);
    }
    let fwd = forward_token(model, x.values(), model.sparsity(), Some(&dead), k_aux);
    Ok(aux_from_forward(&fwd))
}

fn aux_from_forward(fwd: &TokenForward) -> f64 {
    match &fwd.aux_recon {
        Some(recon) => {
            let mut acc = 0.0;
            for i in 0..fwd.x.len() {
                let residual = fwd.x[i] - fwd.recon_main[i];
                let e = residual - recon[i];
                acc += e * e;
            }
            acc
        }
        None => 0.0,
    }
}

/// Sparse contrastive loss over a batch of codes, each token paired with
/// itself in the numerator, stabilized by log-sum-exp.
pub fn sparse_cl_loss(batch_codes: &[SparseVector]) -> Result<f64> {
    if batch_codes.len() < 2 {
        return Err(Error::invalid_argument(
            "sparse_cl_loss needs a batch of at least 2 codes",
        ));
    }
    let dim = batch_codes[0].dim();
    if batch_codes.iter().any(|c| c.dim() != dim) {
        return Err(Error::invalid_argument("batch codes must share one dim"));
    }
    let slices: Vec<(&[u32], &[f64])> = batch_codes.iter().map(|c| (c.ids(), c.values())).collect();
    Ok(cl_from_slices(&slices).0)
}

/// Returns (loss, softmax coefficient matrix `c_ij = (p_ij - delta_ij)/n`).
pub(crate) fn cl_from_slices(codes: &[(&[u32], &[f64])]) -> (f64, Vec<f64>) {
    let n = codes.len();
    let mut sims = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = merge_dot_slices(codes[i], codes[j]);
            sims[i * n + j] = s;
            sims[j * n + i] = s;
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut coef = vec![0.0; n * n];
    for i in 0..n {
        let row = &sims[i * n..(i + 1) * n];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|s| (s - m).exp()).sum();
        let lse = m + sum_exp.ln();
        loss += lse - row[i];
        for j in 0..n {
            let p = (row[j] - lse).exp();
            coef[i * n + j] = inv_n * if i == j { p - 1.0 } else { p };
        }
    }
    (loss * inv_n, coef)
}

fn merge_dot_slices(a: (&[u32], &[f64]), b: (&[u32], &[f64])) -> f64 {
    let mut i = 0;
    let mut j = 0;
    let mut acc = 0.0;
    while i < a.0.len() && j < b.0.len() {
        match a.0[i].cmp(&b.0[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a.1[i] * b.1[j];
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Late interaction over slice views with argmax bookkeeping (ties toward the
/// lower doc-token index).
pub(crate) fn li_with_argmax(
    query: &[(&[u32], &[f64])],
    doc: &[(&[u32], &[f64])],
) -> (f64, Vec<usize>) {
    let mut total = 0.0;
    let mut winners = Vec::with_capacity(query.len());
    for q in query {
        let mut best = merge_dot_slices(*q, doc[0]);
        let mut win = 0;
        for (j, d) in doc.iter().enumerate().skip(1) {
            let s = merge_dot_slices(*q, *d);
            if s > best {
                best = s;
                win = j;
            }
        }
        total += best;
        winners.push(win);
    }
    (total, winners)
}

/// Cross-entropy over documents from raw similarity values. Returns the loss
/// and the per-document gradient weights `(softmax_d - [d == pos]) / tau`.
pub(crate) fn ce_from_sims(
    sims: &[f64],
    positive_index: usize,
    temperature: f64,
) -> (f64, Vec<f64>) {
    let logits: Vec<f64> = sims.iter().map(|s| s / temperature).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let lse = m + sum_exp.ln();
    let loss = lse - logits[positive_index];
    let weights = logits
        .iter()
        .enumerate()
        .map(|(d, l)| {
            let p = (l - lse).exp();
            (p - if d == positive_index { 1.0 } else { 0.0 }) / temperature
        })
        .collect();
    (loss, weights)
}

/// Supervised contrastive loss: softmax cross-entropy over candidate
/// documents at the given temperature, scored by late interaction (token
/// mode) or global-code cosine (cls mode).
pub fn supervised_ce_loss(
    query: &TokenBag,
    docs: &[TokenBag],
    positive_index: usize,
    mode: SimMode,
    temperature: f64,
) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::invalid_argument(
            "supervised_ce_loss needs documents",
        ));
    }
    if positive_index >= docs.len() {
        return Err(Error::invalid_argument(format!(
            "positive index {positive_index} out of range for {} docs",
            docs.len()
        )));
    }
    if temperature <= 0.0 || temperature.is_nan() {
        return Err(Error::invalid_argument("temperature must be > 0"));
    }
    let mut sims = Vec::with_capacity(docs.len());
    match mode {
        SimMode::Token => {
            let q: Vec<(&[u32], &[f64])> = query
                .vectors()
                .iter()
                .map(|v| (v.ids(), v.values()))
                .collect();
            for doc in docs {
                if doc.dim() != query.dim() {
                    return Err(Error::invalid_argument("doc dim differs from query dim"));
                }
                let d: Vec<(&[u32], &[f64])> = doc
                    .vectors()
                    .iter()
                    .map(|v| (v.ids(), v.values()))
                    .collect();
                sims.push(li_with_argmax(&q, &d).0);
            }
        }
        SimMode::Cls => {
            let qg = query
                .global()
                .ok_or_else(|| Error::invalid_argument("cls mode requires a query global code"))?;
            for doc in docs {
                let dg = doc.global().ok_or_else(|| {
                    Error::invalid_argument("cls mode requires document global codes")
                })?;
                sims.push(sparse_cosine(qg, dg)?);
            }
        }
    }
    Ok(ce_from_sims(&sims, positive_index, temperature).0)
}

/// Combined objective over a batch of training pairs.
///
/// Token ordering (which fixes the contrastive batch and all means) is: for
/// each pair in order, query tokens, then positive tokens, then each
/// negative's tokens. The supervised term for pair `p` ranks its own positive
/// (index 0) against its own negatives followed by the other pairs' positives
/// in batch order. Reconstruction and auxiliary terms are means over tokens;
/// the supervised term is a mean over pairs. The contrastive term is 0 when
/// the batch holds fewer than two tokens.
pub fn total_loss(
    model: &SaeModel,
    batch: &[TrainingPair],
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    let layout = BatchLayout::build(model, batch.iter())?;
    let eval = evaluate_batch(model, &layout, config)?;
    Ok(eval.breakdown)
}

fn check_input(model: &SaeModel, x: &DenseVector) -> Result<()> {
    if x.dim() != model.input_dim() {
        return Err(Error::invalid_argument(format!(
            "input length {} does not match d={}",
            x.dim(),
            model.input_dim()
        )));
    }
    Ok(())
}

fn check_multi_topk(model: &SaeModel) -> Result<()> {
    if 4 * model.sparsity() > model.hidden_dim() {
        return Err(Error::invalid_config(format!(
            "Multi-TopK needs 4K <= h; got K={}, h={}",
            model.sparsity(),
            model.hidden_dim()
        )));
    }
    Ok(())
}

/// Flattened batch: token values plus the index ranges that carve out each
/// pair's query, positive, and negatives.
pub(crate) struct BatchLayout {
    pub tokens: Vec<Vec<f64>>,
    pub pairs: Vec<PairRanges>,
}

pub(crate) struct PairRanges {
    pub query: Range<usize>,
    pub positive: Range<usize>,
    pub negatives: Vec<Range<usize>>,
}

impl BatchLayout {
    pub fn build<'a, I>(model: &SaeModel, batch: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a TrainingPair>,
    {
        let d = model.input_dim();
        let mut tokens = Vec::new();
        let mut pairs = Vec::new();
        let push_bag = |tokens: &mut Vec<Vec<f64>>,
                        bag: &crate::sparse::DenseTokenBag|
         -> Result<Range<usize>> {
            if bag.dim() != d {
                return Err(Error::invalid_argument(format!(
                    "training token length {} does not match d={d}",
                    bag.dim()
                )));
            }
            let start = tokens.len();
            for v in bag.vectors() {
                tokens.push(v.values().to_vec());
            }
            Ok(start..tokens.len())
        };
        for pair in batch {
            let query = push_bag(&mut tokens, &pair.query)?;
            let positive = push_bag(&mut tokens, &pair.positive)?;
            let mut negatives = Vec::with_capacity(pair.negatives.len());
            for neg in &pair.negatives {
                negatives.push(push_bag(&mut tokens, neg)?);
            }
            pairs.push(PairRanges {
                query,
                positive,
                negatives,
            });
        }
        if pairs.is_empty() {
            return Err(Error::invalid_argument("batch must be non-empty"));
        }
        Ok(BatchLayout { tokens, pairs })
    }

    /// Documents ranked by pair `p`: own positive, own negatives, then the
    /// other pairs' positives in batch order. The positive sits at index 0.
    pub fn docs_for_pair(&self, p: usize) -> Vec<Range<usize>> {
        let mut docs = vec![self.pairs[p].positive.clone()];
        docs.extend(self.pairs[p].negatives.iter().cloned());
        for (q, other) in self.pairs.iter().enumerate() {
            if q != p {
                docs.push(other.positive.clone());
            }
        }
        docs
    }
}

/// Cached per-pair supervised state for the backward pass.
pub(crate) struct SupCache {
    pub docs: Vec<Range<usize>>,
    pub weights: Vec<f64>,
    /// Token mode only: per doc, per query token, the winning doc-token
    /// offset within the doc range.
    pub argmax: Vec<Vec<usize>>,
}

pub(crate) struct BatchEval {
    pub fwds: Vec<TokenForward>,
    pub breakdown: LossBreakdown,
    pub cl_coef: Option<Vec<f64>>,
    pub sup: Vec<SupCache>,
    pub signature: PathSignature,
}

pub(crate) fn evaluate_batch(
    model: &SaeModel,
    layout: &BatchLayout,
    config: &TrainConfig,
) -> Result<BatchEval> {
    config.validate(model)?;
    let dead = model.dead_neurons(config.dead_threshold);
    let dead_opt = if dead.is_empty() {
        None
    } else {
        Some(dead.as_slice())
    };

    let fwds: Vec<TokenForward> = layout
        .tokens
        .iter()
        .map(|x| forward_token(model, x, config.k, dead_opt, config.k_aux))
        .collect();

    let n_tokens = fwds.len();
    let inv_t = 1.0 / n_tokens as f64;
    let mut recon_sum = 0.0;
    let mut aux_sum = 0.0;
    for fwd in &fwds {
        recon_sum += multi_topk_from_forward(fwd);
        aux_sum += aux_from_forward(fwd);
    }
    let reconstruction = recon_sum * inv_t;
    let auxiliary = aux_sum * inv_t;

    let (contrastive, cl_coef) = if n_tokens >= 2 {
        let slices: Vec<(&[u32], &[f64])> = fwds
            .iter()
            .map(|f| (f.main.ids.as_slice(), f.main.values.as_slice()))
            .collect();
        let (loss, coef) = cl_from_slices(&slices);
        (loss, Some(coef))
    } else {
        (0.0, None)
    };

    let mut sup = Vec::with_capacity(layout.pairs.len());
    let mut sup_sum = 0.0;
    for p in 0..layout.pairs.len() {
        let docs = layout.docs_for_pair(p);
        let query_sel: Vec<(&[u32], &[f64])> = layout.pairs[p]
            .query
            .clone()
            .map(|t| (fwds[t].main.ids.as_slice(), fwds[t].main.values.as_slice()))
            .collect();
        let mut sims = Vec::with_capacity(docs.len());
        let mut argmax = Vec::with_capacity(docs.len());
        for doc in &docs {
            match config.supervised_mode {
                SimMode::Token => {
                    let doc_sel: Vec<(&[u32], &[f64])> = doc
                        .clone()
                        .map(|t| (fwds[t].main.ids.as_slice(), fwds[t].main.values.as_slice()))
                        .collect();
                    let (sim, winners) = li_with_argmax(&query_sel, &doc_sel);
                    sims.push(sim);
                    argmax.push(winners);
                }
                SimMode::Cls => {
                    // Single-token bags stand in for the global vector when
                    // training a cls-side model.
                    let q = &fwds[layout.pairs[p].query.start].main;
                    let d = &fwds[doc.start].main;
                    sims.push(selection_cosine(q, d));
                    argmax.push(Vec::new());
                }
            }
        }
        let (loss, weights) = ce_from_sims(&sims, 0, config.temperature);
        sup_sum += loss;
        sup.push(SupCache {
            docs,
            weights,
            argmax,
        });
    }
    let supervised = sup_sum / layout.pairs.len() as f64;

    let total = reconstruction
        + config.alpha * auxiliary
        + config.beta * contrastive
        + config.gamma * supervised;

    let mut signature = PathSignature::new();
    for fwd in &fwds {
        token_signature(&mut signature, fwd);
    }
    for cache in &sup {
        for winners in &cache.argmax {
            signature.push(winners.len() as u64);
            for &w in winners {
                signature.push(w as u64);
            }
        }
    }

    Ok(BatchEval {
        fwds,
        breakdown: LossBreakdown {
            reconstruction,
            auxiliary,
            contrastive,
            supervised,
            total,
        },
        cl_coef,
        sup,
        signature,
    })
}

pub(crate) fn selection_cosine(a: &Selection, b: &Selection) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    selection_dot(a, b) / (na * nb)
}
