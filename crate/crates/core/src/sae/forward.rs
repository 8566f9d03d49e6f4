//! Shared forward pass for the loss terms and their gradients.
//!
//! TopK selections are frozen per forward pass; gradients flow only through
//! the surviving supports. Every discrete choice made here (supports, aux
//! selections, per-pair argmax picks) is folded into a path signature so the
//! finite-difference checker can detect and skip mask flips.

use crate::sae::SaeModel;
use crate::sparse::topk_indices;

/// A frozen TopK selection: sorted support ids and their (positive) values.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Selection {
    pub ids: Vec<u32>,
    pub values: Vec<f64>,
}

impl Selection {
    pub fn nnz(&self) -> usize {
        self.ids.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Merge-join dot over two frozen selections.
pub(crate) fn selection_dot(a: &Selection, b: &Selection) -> f64 {
    let mut i = 0;
    let mut j = 0;
    let mut acc = 0.0;
    while i < a.ids.len() && j < b.ids.len() {
        match a.ids[i].cmp(&b.ids[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a.values[i] * b.values[j];
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Per-token cached forward state.
#[derive(Debug, Clone)]
pub(crate) struct TokenForward {
    pub x: Vec<f64>,
    pub centered: Vec<f64>,
    /// Support at sparsity K.
    pub main: Selection,
    /// Support at sparsity min(4K, h) (second reconstruction pass).
    pub wide: Selection,
    /// Dead-neuron selection, present only when dead neurons exist.
    pub aux: Option<Selection>,
    pub recon_main: Vec<f64>,
    pub recon_wide: Vec<f64>,
    /// Decoded dead-neuron pass, without the pre-bias.
    pub aux_recon: Option<Vec<f64>>,
}

/// Select the top `k` positive pre-activations, ties toward lower index.
pub(crate) fn select_topk(pre: &[f64], k: usize) -> Selection {
    let mut picked: Vec<usize> = topk_indices(pre, k)
        .into_iter()
        .filter(|&u| pre[u] > 0.0)
        .collect();
    picked.sort_unstable();
    Selection {
        ids: picked.iter().map(|&u| u as u32).collect(),
        values: picked.iter().map(|&u| pre[u]).collect(),
    }
}

/// Select the top `k_aux` dead neurons by pre-activation (positive only).
fn select_dead(pre: &[f64], dead: &[u32], k_aux: usize) -> Selection {
    let dead_pre: Vec<f64> = dead.iter().map(|&u| pre[u as usize]).collect();
    let take = k_aux.min(dead.len());
    let mut picked: Vec<u32> = topk_indices(&dead_pre, take)
        .into_iter()
        .filter(|&i| dead_pre[i] > 0.0)
        .map(|i| dead[i])
        .collect();
    picked.sort_unstable();
    Selection {
        values: picked.iter().map(|&u| pre[u as usize]).collect(),
        ids: picked,
    }
}

/// Decode a selection: `W_dec z (+ b_pre)`.
pub(crate) fn decode_selection(model: &SaeModel, sel: &Selection, with_bias: bool) -> Vec<f64> {
    let d = model.input_dim();
    let h = model.hidden_dim();
    let mut out = if with_bias {
        model.b_pre().to_vec()
    } else {
        vec![0.0; d]
    };
    for (idx, &u) in sel.ids.iter().enumerate() {
        let v = sel.values[idx];
        let u = u as usize;
        for (i, o) in out.iter_mut().enumerate() {
            *o += model.w_dec()[i * h + u] * v;
        }
    }
    out
}

/// Full forward pass for one token: main (K) and wide (4K) reconstruction
/// passes plus the optional dead-neuron pass.
pub(crate) fn forward_token(
    model: &SaeModel,
    x: &[f64],
    k: usize,
    dead: Option<&[u32]>,
    k_aux: usize,
) -> TokenForward {
    let d = model.input_dim();
    let centered: Vec<f64> = (0..d).map(|i| x[i] - model.b_pre()[i]).collect();
    let mut pre = model.b_enc().to_vec();
    for (u, p) in pre.iter_mut().enumerate() {
        let row = &model.w_enc()[u * d..(u + 1) * d];
        *p += crate::sparse::dot(row, &centered);
    }
    let main = select_topk(&pre, k);
    let wide = select_topk(&pre, 4 * k);
    let recon_main = decode_selection(model, &main, true);
    let recon_wide = decode_selection(model, &wide, true);
    let (aux, aux_recon) = match dead {
        Some(dead) if !dead.is_empty() => {
            let sel = select_dead(&pre, dead, k_aux);
            let recon = decode_selection(model, &sel, false);
            (Some(sel), Some(recon))
        }
        _ => (None, None),
    };
    TokenForward {
        x: x.to_vec(),
        centered,
        main,
        wide,
        aux,
        recon_main,
        recon_wide,
        aux_recon,
    }
}

/// Squared L2 distance, the per-pass reconstruction objective.
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let e = x - y;
            e * e
        })
        .sum()
}

/// FNV-1a accumulator for path signatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PathSignature(u64);

impl PathSignature {
    pub fn new() -> Self {
        PathSignature(0xcbf2_9ce4_8422_2325)
    }

    pub fn push(&mut self, v: u64) {
        let mut s = self.0;
        for b in v.to_le_bytes() {
            s ^= b as u64;
            s = s.wrapping_mul(0x1000_0000_01b3);
        }
        self.0 = s;
    }

    pub fn push_ids(&mut self, ids: &[u32]) {
        self.push(ids.len() as u64);
        for &id in ids {
            self.push(id as u64);
        }
    }
}

pub(crate) fn token_signature(sig: &mut PathSignature, fwd: &TokenForward) {
    sig.push_ids(&fwd.main.ids);
    sig.push_ids(&fwd.wide.ids);
    match &fwd.aux {
        Some(sel) => sig.push_ids(&sel.ids),
        None => sig.push(u64::MAX),
    }
}
