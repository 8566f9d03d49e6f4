//! TopK sparse autoencoder: encode/decode, the hybrid training objective,
//! a deterministic gradient-descent loop, and finite-difference validation.

mod forward;
mod grad;
mod io;
mod loss;
mod train;

pub use grad::grad_check;
pub use loss::{
    aux_loss, multi_topk_recon, recon_loss, sparse_cl_loss, supervised_ce_loss, total_loss,
    LossBreakdown, SimMode,
};
pub use train::{train, EpochStats, TrainConfig, TrainingPair};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::{DenseVector, SparseVector};

/// TopK sparse autoencoder parameters plus per-neuron activity counters.
///
/// `w_enc` is `h x d` row-major, `w_dec` is `d x h` row-major, so column `u`
/// of the decoder (the dictionary direction of neuron `u`) is strided.
/// `activity[u]` counts tokens seen since neuron `u` last appeared in a
/// TopK selection; it only changes inside the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    d: usize,
    h: usize,
    k: usize,
    w_enc: Vec<f64>,
    w_dec: Vec<f64>,
    b_pre: Vec<f64>,
    b_enc: Vec<f64>,
    activity: Vec<u64>,
}

impl SaeModel {
    /// Tied initialization: decoder columns sampled uniformly on the unit
    /// sphere, encoder set to the decoder transpose, biases zero.
    pub fn init(d: usize, h: usize, k: usize, seed: u64) -> Result<Self> {
        if d == 0 || h == 0 || k == 0 || k > h {
            return Err(Error::invalid_config(format!(
                "need d >= 1, h >= k >= 1; got d={d}, h={h}, k={k}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w_dec = vec![0.0; d * h];
        let mut col = vec![0.0; d];
        for u in 0..h {
            loop {
                for c in col.iter_mut() {
                    *c = gaussian(&mut rng);
                }
                let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    for c in col.iter_mut() {
                        *c /= norm;
                    }
                    break;
                }
            }
            for i in 0..d {
                w_dec[i * h + u] = col[i];
            }
        }
        let mut w_enc = vec![0.0; h * d];
        for u in 0..h {
            for i in 0..d {
                w_enc[u * d + i] = w_dec[i * h + u];
            }
        }
        Ok(SaeModel {
            d,
            h,
            k,
            w_enc,
            w_dec,
            b_pre: vec![0.0; d],
            b_enc: vec![0.0; h],
            activity: vec![0; h],
        })
    }

    /// Builds a model from explicit parameter tensors.
    pub fn from_parts(
        d: usize,
        h: usize,
        k: usize,
        w_enc: Vec<f64>,
        w_dec: Vec<f64>,
        b_pre: Vec<f64>,
        b_enc: Vec<f64>,
    ) -> Result<Self> {
        if d == 0 || h == 0 || k == 0 || k > h {
            return Err(Error::invalid_config(format!(
                "need d >= 1, h >= k >= 1; got d={d}, h={h}, k={k}"
            )));
        }
        if w_enc.len() != h * d || w_dec.len() != d * h || b_pre.len() != d || b_enc.len() != h {
            return Err(Error::invalid_config("parameter tensor shape mismatch"));
        }
        let finite = w_enc
            .iter()
            .chain(w_dec.iter())
            .chain(b_pre.iter())
            .chain(b_enc.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid_config("parameters must be finite"));
        }
        Ok(SaeModel {
            d,
            h,
            k,
            w_enc,
            w_dec,
            b_pre,
            b_enc,
            activity: vec![0; h],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn hidden_dim(&self) -> usize {
        self.h
    }

    pub fn sparsity(&self) -> usize {
        self.k
    }

    pub fn w_enc(&self) -> &[f64] {
        &self.w_enc
    }

    pub fn w_dec(&self) -> &[f64] {
        &self.w_dec
    }

    pub fn b_pre(&self) -> &[f64] {
        &self.b_pre
    }

    pub fn b_enc(&self) -> &[f64] {
        &self.b_enc
    }

    pub fn activity(&self) -> &[u64] {
        &self.activity
    }

    /// Marks neurons as dead/alive directly; used by tests and by callers
    /// that restore training state.
    pub fn set_activity(&mut self, activity: Vec<u64>) -> Result<()> {
        if activity.len() != self.h {
            return Err(Error::invalid_argument("activity length must equal h"));
        }
        self.activity = activity;
        Ok(())
    }

    /// Neuron ids whose activity counter has reached `dead_threshold`.
    pub fn dead_neurons(&self, dead_threshold: u64) -> Vec<u32> {
        self.activity
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a >= dead_threshold)
            .map(|(u, _)| u as u32)
            .collect()
    }

    /// Pre-activation `W_enc (x - b_pre) + b_enc`.
    pub fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::invalid_argument(format!(
                "input length {} does not match d={}",
                x.len(),
                self.d
            )));
        }
        let centered: Vec<f64> = x
            .iter()
            .zip(self.b_pre.iter())
            .map(|(a, b)| a - b)
            .collect();
        let mut pre = self.b_enc.clone();
        for u in 0..self.h {
            let row = &self.w_enc[u * self.d..(u + 1) * self.d];
            pre[u] += crate::sparse::dot(row, &centered);
        }
        Ok(pre)
    }

    /// Encodes a token into its TopK-sparse code.
    ///
    /// Emitted values are rounded to f32 precision so in-memory codes match
    /// the on-disk code representation exactly; entries that round to zero
    /// are dropped from the support.
    pub fn encode(&self, x: &DenseVector, k: usize) -> Result<SparseVector> {
        let raw = self.encode_exact(x, k)?;
        let pairs: Vec<(u32, f64)> = raw
            .entries()
            .map(|(u, v)| (u, f64::from(v as f32)))
            .filter(|&(_, v)| v > 0.0)
            .collect();
        SparseVector::from_pairs(self.h as u32, pairs)
    }

    /// Encodes at full f64 precision (no storage rounding); this is the code
    /// the loss terms and gradients operate on.
    pub fn encode_exact(&self, x: &DenseVector, k: usize) -> Result<SparseVector> {
        if k == 0 || k > self.h {
            return Err(Error::invalid_argument(format!(
                "encode sparsity k={k} out of range 1..={}",
                self.h
            )));
        }
        let pre = self.pre_activation(x.values())?;
        crate::sparse::topk_select(&pre, k, self.h as u32)
    }

    /// Decodes a sparse code: `W_dec z + b_pre` over the active columns.
    pub fn decode(&self, z: &SparseVector) -> Result<DenseVector> {
        if z.dim() as usize != self.h {
            return Err(Error::invalid_argument(format!(
                "code dim {} does not match h={}",
                z.dim(),
                self.h
            )));
        }
        let mut out = self.b_pre.clone();
        for (u, v) in z.entries() {
            let u = u as usize;
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.w_dec[i * self.h + u] * v;
            }
        }
        DenseVector::new(out)
    }

    pub(crate) fn params(&self) -> [&Vec<f64>; 4] {
        [&self.w_enc, &self.w_dec, &self.b_pre, &self.b_enc]
    }

    pub(crate) fn param_count(&self) -> usize {
        self.w_enc.len() + self.w_dec.len() + self.b_pre.len() + self.b_enc.len()
    }

    pub(crate) fn param_get(&self, flat: usize) -> f64 {
        let (tensor, off) = self.param_locate(flat);
        self.params()[tensor][off]
    }

    pub(crate) fn param_set(&mut self, flat: usize, value: f64) {
        let (tensor, off) = self.param_locate(flat);
        match tensor {
            0 => self.w_enc[off] = value,
            1 => self.w_dec[off] = value,
            2 => self.b_pre[off] = value,
            _ => self.b_enc[off] = value,
        }
    }

    fn param_locate(&self, flat: usize) -> (usize, usize) {
        let mut rest = flat;
        for (t, p) in self.params().into_iter().enumerate() {
            if rest < p.len() {
                return (t, rest);
            }
            rest -= p.len();
        }
        panic!("parameter index {flat} out of range");
    }

    pub(crate) fn apply_gradients(&mut self, grads: &grad::GradBuffers, lr: f64) {
        for (p, g) in self.w_enc.iter_mut().zip(grads.w_enc.iter()) {
            *p -= lr * g;
        }
        for (p, g) in self.w_dec.iter_mut().zip(grads.w_dec.iter()) {
            *p -= lr * g;
        }
        for (p, g) in self.b_pre.iter_mut().zip(grads.b_pre.iter()) {
            *p -= lr * g;
        }
        for (p, g) in self.b_enc.iter_mut().zip(grads.b_enc.iter()) {
            *p -= lr * g;
        }
    }

    pub(crate) fn bump_activity(&mut self, active: &[bool], tokens_seen: u64) {
        for (u, act) in active.iter().enumerate() {
            if *act {
                self.activity[u] = 0;
            } else {
                self.activity[u] += tokens_seen;
            }
        }
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller on two open-interval uniforms.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub use io::{load_model, save_model};
