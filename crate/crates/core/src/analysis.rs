//! Empirical distortion verification: measures the reconstruction error,
//! norm bounds, and restricted decoder Gram deviation of a model on sampled
//! data, then checks the token-level and late-interaction distortion bounds
//! pair by pair. With measured (not assumed) constants both bounds are
//! unconditional, so any violation beyond float slack is a bug.
//!
//! When the model carries a nonzero pre-bias, dense comparisons use the
//! centered embeddings `x - b_pre` — the decoder reconstructs the centered
//! vector, and every record notes this.

use crate::error::{Error, Result};
use crate::sae::SaeModel;
use crate::sparse::{DenseTokenBag, DenseVector, SparseVector, TokenBag};

/// Absolute slack granted to the bound comparisons for float noise.
pub const BOUND_SLACK: f64 = 1e-9;

/// The per-token distortion bound `2*B*eps + eps^2 + delta*C^2`.
pub fn eta(b: f64, epsilon: f64, delta: f64, c: f64) -> f64 {
    2.0 * b * epsilon + epsilon * epsilon + delta * c * c
}

/// Max reconstruction error `||x - decode(encode(x, k))||_2` over tokens.
pub fn measure_epsilon(model: &SaeModel, tokens: &[DenseVector], k: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for x in tokens {
        worst = worst.max(recon_error(model, x, k)?);
    }
    Ok(worst)
}

fn recon_error(model: &SaeModel, x: &DenseVector, k: usize) -> Result<f64> {
    let z = model.encode(x, k)?;
    let back = model.decode(&z)?;
    let err = x
        .values()
        .iter()
        .zip(back.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(err)
}

/// Spectral norm of `G_S - I` where `G_S` is the decoder Gram matrix
/// restricted to the support: power iteration on the squared matrix, which
/// handles paired `±λ` spectra, with relative tolerance 1e-10.
pub fn measure_delta(model: &SaeModel, support: &[u32]) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::invalid_argument(
            "measure_delta requires a non-empty support",
        ));
    }
    let h = model.hidden_dim();
    let d = model.input_dim();
    for &u in support {
        if u as usize >= h {
            return Err(Error::invalid_argument(format!(
                "support neuron {u} out of range for h={h}"
            )));
        }
    }
    let n = support.len();
    // m = G_S - I, symmetric n x n.
    let mut m = vec![0.0; n * n];
    let mut zero = true;
    for i in 0..n {
        for j in i..n {
            let (ui, uj) = (support[i] as usize, support[j] as usize);
            let mut dot = 0.0;
            for row in 0..d {
                dot += model.w_dec()[row * h + ui] * model.w_dec()[row * h + uj];
            }
            let v = if i == j { dot - 1.0 } else { dot };
            m[i * n + j] = v;
            m[j * n + i] = v;
            if v != 0.0 {
                zero = false;
            }
        }
    }
    if zero {
        return Ok(0.0);
    }

    // Deterministic start vector with mild asymmetry.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
    normalize(&mut v);
    let mut scratch = vec![0.0; n];
    let mut squared = vec![0.0; n];
    let mut lambda_prev = f64::MAX;
    for _ in 0..5000 {
        mat_vec(&m, &v, &mut scratch);
        mat_vec(&m, &scratch, &mut squared);
        let lambda: f64 = v.iter().zip(squared.iter()).map(|(a, b)| a * b).sum();
        let norm = normalize(&mut squared);
        if norm == 0.0 {
            return Ok(0.0);
        }
        std::mem::swap(&mut v, &mut squared);
        if (lambda - lambda_prev).abs() <= 1e-10 * lambda.abs().max(1e-300) {
            return Ok(lambda.max(0.0).sqrt());
        }
        lambda_prev = lambda;
    }
    Ok(lambda_prev.max(0.0).sqrt())
}

fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += m[i * n + j] * v[j];
        }
        out[i] = acc;
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// One token-pair bound check.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBoundRecord {
    pub dense_dot: f64,
    pub sparse_dot: f64,
    pub epsilon: f64,
    pub b: f64,
    pub delta: f64,
    pub code_norms: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// Checks `|x~.y~ - z_x.z_y| <= 2*B*eps + eps^2 + delta*|z_x||z_y|` with all
/// constants measured on the pair (delta on the union support).
pub fn check_token_bound(
    model: &SaeModel,
    x: &DenseVector,
    y: &DenseVector,
    k: usize,
) -> Result<TokenBoundRecord> {
    let zx = model.encode(x, k)?;
    let zy = model.encode(y, k)?;
    let cx = centered(model, x);
    let cy = centered(model, y);
    let dense_dot = dot(&cx, &cy);
    let sparse = zx.dot_unchecked(&zy);
    let eps = recon_error(model, x, k)?.max(recon_error(model, y, k)?);
    let b = norm(&cx).max(norm(&cy));
    let union = support_union(&zx, &zy);
    let delta = if union.is_empty() {
        0.0
    } else {
        measure_delta(model, &union)?
    };
    let code_norms = zx.norm() * zy.norm();
    let lhs = (dense_dot - sparse).abs();
    let rhs = 2.0 * b * eps + eps * eps + delta * code_norms;
    Ok(TokenBoundRecord {
        dense_dot,
        sparse_dot: sparse,
        epsilon: eps,
        b,
        delta,
        code_norms,
        lhs,
        rhs,
        satisfied: lhs <= rhs + BOUND_SLACK,
    })
}

/// One query/document late-interaction bound check.
#[derive(Debug, Clone, PartialEq)]
pub struct LiBoundRecord {
    pub s_dense: f64,
    pub s_sparse: f64,
    pub query_tokens: usize,
    pub epsilon: f64,
    pub b: f64,
    pub c: f64,
    pub delta: f64,
    pub eta: f64,
    pub bound: f64,
    pub satisfied: bool,
}

/// Checks `|S_dense - S_sparse| <= N * eta` with constants measured
/// uniformly over all tokens of both bags and delta maximized over all
/// query/document support unions.
pub fn check_li_bound(
    model: &SaeModel,
    query: &DenseTokenBag,
    doc: &DenseTokenBag,
    k: usize,
) -> Result<LiBoundRecord> {
    let centered_query = centered_bag(model, query)?;
    let centered_doc = centered_bag(model, doc)?;
    let s_dense = crate::sparse::dense_maxsim(&centered_query, &centered_doc)?;

    let zq: Vec<SparseVector> = query
        .vectors()
        .iter()
        .map(|x| model.encode(x, k))
        .collect::<Result<_>>()?;
    let zd: Vec<SparseVector> = doc
        .vectors()
        .iter()
        .map(|x| model.encode(x, k))
        .collect::<Result<_>>()?;
    let qb = TokenBag::new(zq.clone(), None)?;
    let db = TokenBag::new(zd.clone(), None)?;
    let s_sparse = crate::sparse::sparse_late_interaction(&qb, &db)?;

    let mut eps = 0.0f64;
    let mut b = 0.0f64;
    let mut c = 0.0f64;
    for x in query.vectors().iter().chain(doc.vectors().iter()) {
        eps = eps.max(recon_error(model, x, k)?);
        b = b.max(norm(&centered(model, x)));
    }
    for z in zq.iter().chain(zd.iter()) {
        c = c.max(z.norm());
    }
    let mut delta = 0.0f64;
    for q in &zq {
        for d in &zd {
            let union = support_union(q, d);
            if !union.is_empty() {
                delta = delta.max(measure_delta(model, &union)?);
            }
        }
    }
    let e = eta(b, eps, delta, c);
    let bound = query.len() as f64 * e;
    let lhs = (s_dense - s_sparse).abs();
    Ok(LiBoundRecord {
        s_dense,
        s_sparse,
        query_tokens: query.len(),
        epsilon: eps,
        b,
        c,
        delta,
        eta: e,
        bound,
        satisfied: lhs <= bound + BOUND_SLACK,
    })
}

/// Aggregated bound verification over sampled pairs and bag pairs.
#[derive(Debug, Clone)]
pub struct DistortionReport {
    pub epsilon: f64,
    pub b: f64,
    pub c: f64,
    pub delta: f64,
    pub eta: f64,
    pub centered: bool,
    pub token_records: Vec<TokenBoundRecord>,
    pub li_records: Vec<LiBoundRecord>,
}

impl DistortionReport {
    pub fn build(
        model: &SaeModel,
        token_pairs: &[(DenseVector, DenseVector)],
        bag_pairs: &[(DenseTokenBag, DenseTokenBag)],
        k: usize,
    ) -> Result<DistortionReport> {
        let mut token_records = Vec::with_capacity(token_pairs.len());
        for (x, y) in token_pairs {
            token_records.push(check_token_bound(model, x, y, k)?);
        }
        let mut li_records = Vec::with_capacity(bag_pairs.len());
        for (q, d) in bag_pairs {
            li_records.push(check_li_bound(model, q, d, k)?);
        }
        let fold = |f: fn(&TokenBoundRecord) -> f64, records: &[TokenBoundRecord]| {
            records.iter().map(f).fold(0.0f64, f64::max)
        };
        let epsilon = fold(|r| r.epsilon, &token_records)
            .max(li_records.iter().map(|r| r.epsilon).fold(0.0, f64::max));
        let b =
            fold(|r| r.b, &token_records).max(li_records.iter().map(|r| r.b).fold(0.0, f64::max));
        let c = li_records.iter().map(|r| r.c).fold(0.0, f64::max);
        let delta = fold(|r| r.delta, &token_records)
            .max(li_records.iter().map(|r| r.delta).fold(0.0, f64::max));
        Ok(DistortionReport {
            epsilon,
            b,
            c,
            delta,
            eta: eta(b, epsilon, delta, c),
            centered: model.b_pre().iter().any(|&v| v != 0.0),
            token_records,
            li_records,
        })
    }

    pub fn all_satisfied(&self) -> bool {
        self.token_records.iter().all(|r| r.satisfied)
            && self.li_records.iter().all(|r| r.satisfied)
    }

    pub fn violations(&self) -> usize {
        self.token_records.iter().filter(|r| !r.satisfied).count()
            + self.li_records.iter().filter(|r| !r.satisfied).count()
    }

    /// Plain-text summary table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "distortion report ({} comparisons{})\n",
            self.token_records.len() + self.li_records.len(),
            if self.centered {
                "; dense dots centered by b_pre"
            } else {
                ""
            }
        ));
        out.push_str(&format!(
            "constants: epsilon={:.6e} B={:.6e} C={:.6e} delta={:.6e} eta={:.6e}\n",
            self.epsilon, self.b, self.c, self.delta, self.eta
        ));
        out.push_str(&format!(
            "token bounds: {}/{} satisfied\n",
            self.token_records.iter().filter(|r| r.satisfied).count(),
            self.token_records.len()
        ));
        out.push_str(&format!(
            "late-interaction bounds: {}/{} satisfied\n",
            self.li_records.iter().filter(|r| r.satisfied).count(),
            self.li_records.len()
        ));
        out
    }

    /// CSV rows: kind,index,dense,sparse,epsilon,b,delta,extent,bound,satisfied
    /// where extent is |z_x||z_y| for token rows and N*eta inputs C for li rows.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("kind,index,dense,sparse,epsilon,b,delta,extent,bound,satisfied\n");
        for (i, r) in self.token_records.iter().enumerate() {
            out.push_str(&format!(
                "token,{i},{},{},{},{},{},{},{},{}\n",
                r.dense_dot,
                r.sparse_dot,
                r.epsilon,
                r.b,
                r.delta,
                r.code_norms,
                r.rhs,
                r.satisfied
            ));
        }
        for (i, r) in self.li_records.iter().enumerate() {
            out.push_str(&format!(
                "li,{i},{},{},{},{},{},{},{},{}\n",
                r.s_dense, r.s_sparse, r.epsilon, r.b, r.delta, r.c, r.bound, r.satisfied
            ));
        }
        out
    }
}

fn centered(model: &SaeModel, x: &DenseVector) -> Vec<f64> {
    x.values()
        .iter()
        .zip(model.b_pre().iter())
        .map(|(a, b)| a - b)
        .collect()
}

fn centered_bag(model: &SaeModel, bag: &DenseTokenBag) -> Result<DenseTokenBag> {
    DenseTokenBag::new(
        bag.vectors()
            .iter()
            .map(|v| DenseVector::new(centered(model, v)))
            .collect::<Result<_>>()?,
    )
}

fn support_union(a: &SparseVector, b: &SparseVector) -> Vec<u32> {
    let mut union: Vec<u32> = a.ids().iter().chain(b.ids().iter()).copied().collect();
    union.sort_unstable();
    union.dedup();
    union
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
