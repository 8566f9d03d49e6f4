//! Sparse and dense vector types plus the late-interaction scoring primitives.
//!
//! Sparse codes are stored as parallel `(neuron id, value)` arrays sorted by
//! neuron id, so intersections reduce to a linear merge. All stored values are
//! strictly positive: the TopK operator clamps non-positive activations away,
//! which keeps posting-list impacts positive and makes block upper-bound
//! pruning sound.

use crate::error::{Error, Result};

/// Dense token embedding of fixed length `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    values: Vec<f64>,
}

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid_argument("dense vector must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_argument(
                "dense vector contains a non-finite entry",
            ));
        }
        Ok(DenseVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// TopK-sparse code in `R^h`, stored as sorted `(neuron id, value)` pairs.
///
/// Invariants: ids strictly increasing and below `dim`, values finite and
/// strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    dim: u32,
    ids: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Builds a sparse vector from pre-sorted entries, validating invariants.
    pub fn new(dim: u32, ids: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if ids.len() != values.len() {
            return Err(Error::invalid_argument(format!(
                "sparse vector: {} ids vs {} values",
                ids.len(),
                values.len()
            )));
        }
        let mut prev: Option<u32> = None;
        for (&id, &v) in ids.iter().zip(values.iter()) {
            if id >= dim {
                return Err(Error::invalid_argument(format!(
                    "neuron id {id} out of range for dim {dim}"
                )));
            }
            if let Some(p) = prev {
                if id <= p {
                    return Err(Error::invalid_argument(
                        "sparse vector ids must be strictly increasing",
                    ));
                }
            }
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid_argument(format!(
                    "sparse vector value at neuron {id} must be finite and > 0, got {v}"
                )));
            }
            prev = Some(id);
        }
        Ok(SparseVector { dim, ids, values })
    }

    /// Builds from unsorted `(id, value)` pairs; entries with value <= 0 are dropped.
    pub fn from_pairs(dim: u32, mut pairs: Vec<(u32, f64)>) -> Result<Self> {
        pairs.sort_by_key(|&(id, _)| id);
        pairs.retain(|&(_, v)| v > 0.0);
        let ids: Vec<u32> = pairs.iter().map(|&(id, _)| id).collect();
        let values: Vec<f64> = pairs.iter().map(|&(_, v)| v).collect();
        SparseVector::new(dim, ids, values)
    }

    pub fn empty(dim: u32) -> Self {
        SparseVector {
            dim,
            ids: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn entries(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.ids.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scatters the code into a dense length-`dim` buffer.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim as usize];
        for (id, v) in self.entries() {
            out[id as usize] = v;
        }
        out
    }

    /// Merge-join dot product without a dimension check (callers validate bags up front).
    pub fn dot_unchecked(&self, other: &SparseVector) -> f64 {
        merge_dot(&self.ids, &self.values, &other.ids, &other.values)
    }
}

fn merge_dot(a_ids: &[u32], a_vals: &[f64], b_ids: &[u32], b_vals: &[f64]) -> f64 {
    let mut i = 0;
    let mut j = 0;
    let mut acc = 0.0;
    while i < a_ids.len() && j < b_ids.len() {
        match a_ids[i].cmp(&b_ids[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a_vals[i] * b_vals[j];
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Ordered collection of sparse token codes plus an optional global code.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBag {
    vectors: Vec<SparseVector>,
    global: Option<SparseVector>,
}

impl TokenBag {
    pub fn new(vectors: Vec<SparseVector>, global: Option<SparseVector>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::invalid_argument("token bag must be non-empty"));
        }
        let dim = vectors[0].dim();
        if vectors.iter().any(|v| v.dim() != dim) {
            return Err(Error::invalid_argument(
                "token bag members must share one dim",
            ));
        }
        if let Some(g) = &global {
            if g.dim() != dim {
                return Err(Error::invalid_argument(
                    "global code dim differs from token dim",
                ));
            }
        }
        Ok(TokenBag { vectors, global })
    }

    pub fn dim(&self) -> u32 {
        self.vectors[0].dim()
    }

    pub fn vectors(&self) -> &[SparseVector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn global(&self) -> Option<&SparseVector> {
        self.global.as_ref()
    }
}

/// Ordered collection of dense token embeddings sharing one length.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTokenBag {
    vectors: Vec<DenseVector>,
}

impl DenseTokenBag {
    pub fn new(vectors: Vec<DenseVector>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::invalid_argument("dense token bag must be non-empty"));
        }
        let d = vectors[0].dim();
        if vectors.iter().any(|v| v.dim() != d) {
            return Err(Error::invalid_argument(
                "dense token bag members must share one length",
            ));
        }
        Ok(DenseTokenBag { vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }

    pub fn vectors(&self) -> &[DenseVector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Keeps the `k` largest entries of a pre-activation, then drops entries <= 0.
///
/// Ties are broken toward the lower index so that repeated encodings of the
/// same input produce identical codes. The support size is therefore at most
/// `k` and may be smaller when fewer than `k` entries are positive.
pub fn topk_select(pre_activation: &[f64], k: usize, dim: u32) -> Result<SparseVector> {
    if k == 0 {
        return Err(Error::invalid_argument("topk_select requires k >= 1"));
    }
    if pre_activation.len() != dim as usize {
        return Err(Error::invalid_argument(format!(
            "pre-activation length {} does not match dim {dim}",
            pre_activation.len()
        )));
    }
    if pre_activation.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid_argument("pre-activation contains NaN"));
    }
    let selected = topk_indices(pre_activation, k);
    let mut pairs: Vec<(u32, f64)> = selected
        .into_iter()
        .filter(|&i| pre_activation[i] > 0.0)
        .map(|i| (i as u32, pre_activation[i]))
        .collect();
    pairs.sort_by_key(|&(id, _)| id);
    let ids = pairs.iter().map(|&(id, _)| id).collect();
    let values = pairs.iter().map(|&(_, v)| v).collect();
    SparseVector::new(dim, ids, values)
}

/// Indices of the `k` largest entries, ties broken toward lower index.
pub(crate) fn topk_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if k < values.len() {
        // Larger value first; on equal values the lower index wins.
        idx.sort_by(|&a, &b| {
            values[b]
                .partial_cmp(&values[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx.truncate(k);
    }
    idx
}

/// Inner product over the intersection of two sparse supports.
pub fn sparse_dot(a: &SparseVector, b: &SparseVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid_argument(format!(
            "sparse_dot dim mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(a.dot_unchecked(b))
}

/// Late-interaction score over sparse codes: for each query token, the best
/// dot against any document token, summed over query tokens.
pub fn sparse_late_interaction(query: &TokenBag, doc: &TokenBag) -> Result<f64> {
    if query.dim() != doc.dim() {
        return Err(Error::invalid_argument(format!(
            "late interaction dim mismatch: {} vs {}",
            query.dim(),
            doc.dim()
        )));
    }
    Ok(late_interaction_unchecked(query.vectors(), doc.vectors()))
}

pub(crate) fn late_interaction_unchecked(query: &[SparseVector], doc: &[SparseVector]) -> f64 {
    let mut score = 0.0;
    for q in query {
        let mut best = 0.0;
        for d in doc {
            let s = q.dot_unchecked(d);
            if s > best {
                best = s;
            }
        }
        score += best;
    }
    score
}

/// Dense MaxSim: the distortion baseline the sparse score is measured against.
pub fn dense_maxsim(query: &DenseTokenBag, doc: &DenseTokenBag) -> Result<f64> {
    if query.dim() != doc.dim() {
        return Err(Error::invalid_argument(format!(
            "dense_maxsim dim mismatch: {} vs {}",
            query.dim(),
            doc.dim()
        )));
    }
    let mut score = 0.0;
    for q in query.vectors() {
        let mut best = f64::NEG_INFINITY;
        for d in doc.vectors() {
            let s = dot(q.values(), d.values());
            if s > best {
                best = s;
            }
        }
        score += best;
    }
    Ok(score)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two sparse codes; 0 when either code is empty.
pub fn sparse_cosine(a: &SparseVector, b: &SparseVector) -> Result<f64> {
    let d = sparse_dot(a, b)?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(d / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(dim: u32, pairs: &[(u32, f64)]) -> SparseVector {
        SparseVector::from_pairs(dim, pairs.to_vec()).unwrap()
    }

    #[test]
    fn topk_keeps_two_largest() {
        let z = topk_select(&[3.0, 1.0, 2.0], 2, 3).unwrap();
        assert_eq!(z.ids(), &[0, 2]);
        assert_eq!(z.values(), &[3.0, 2.0]);
    }

    #[test]
    fn topk_clamps_negatives() {
        let z = topk_select(&[-1.0, 2.0, -3.0], 2, 3).unwrap();
        assert_eq!(z.ids(), &[1]);
        assert_eq!(z.values(), &[2.0]);
    }

    #[test]
    fn topk_tie_breaks_toward_lower_index() {
        let z = topk_select(&[5.0, 5.0, 1.0], 1, 3).unwrap();
        assert_eq!(z.ids(), &[0]);
        assert_eq!(z.values(), &[5.0]);
    }

    #[test]
    fn topk_rejects_zero_k_and_nan() {
        assert!(topk_select(&[1.0], 0, 1).is_err());
        assert!(topk_select(&[f64::NAN, 1.0], 1, 2).is_err());
    }

    #[test]
    fn topk_idempotent_on_own_output() {
        let pre = vec![0.3, -1.0, 2.5, 0.0, 2.5, 7.0];
        let z = topk_select(&pre, 3, 6).unwrap();
        let again = topk_select(&z.to_dense(), 3, 6).unwrap();
        assert_eq!(z, again);
    }

    #[test]
    fn sparse_dot_disjoint_is_zero() {
        let a = sv(8, &[(0, 1.0), (3, 2.0)]);
        let b = sv(8, &[(5, 4.0), (7, 1.0)]);
        assert_eq!(sparse_dot(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn sparse_dot_single_overlap() {
        let a = sv(8, &[(0, 1.0), (3, 2.0)]);
        let b = sv(8, &[(3, 4.0), (7, 1.0)]);
        assert_eq!(sparse_dot(&a, &b).unwrap(), 8.0);
    }

    #[test]
    fn sparse_dot_self_is_sum_of_squares() {
        let a = sv(8, &[(1, 2.0), (4, 3.0)]);
        assert_eq!(sparse_dot(&a, &a).unwrap(), 13.0);
    }

    #[test]
    fn sparse_dot_rejects_dim_mismatch() {
        let a = sv(8, &[(1, 2.0)]);
        let b = sv(9, &[(1, 2.0)]);
        assert!(sparse_dot(&a, &b).is_err());
    }

    #[test]
    fn late_interaction_single_pair_reduces_to_dot() {
        let q = TokenBag::new(vec![sv(4, &[(0, 1.0)])], None).unwrap();
        let d = TokenBag::new(vec![sv(4, &[(0, 2.0)])], None).unwrap();
        assert_eq!(sparse_late_interaction(&q, &d).unwrap(), 2.0);
    }

    #[test]
    fn late_interaction_matches_enumeration() {
        // Oracle: enumerate all four dots, take row maxima, sum.
        let q = vec![sv(4, &[(0, 1.0)]), sv(4, &[(1, 1.0)])];
        let d = vec![sv(4, &[(0, 3.0)]), sv(4, &[(1, 5.0)])];
        let mut expected = 0.0;
        for qi in &q {
            let mut best = 0.0f64;
            for dj in &d {
                best = best.max(qi.dot_unchecked(dj));
            }
            expected += best;
        }
        assert_eq!(expected, 8.0);
        let qb = TokenBag::new(q, None).unwrap();
        let db = TokenBag::new(d, None).unwrap();
        assert_eq!(sparse_late_interaction(&qb, &db).unwrap(), expected);
    }

    #[test]
    fn late_interaction_no_overlap_anywhere() {
        let q = TokenBag::new(vec![sv(4, &[(2, 1.0)])], None).unwrap();
        let d = TokenBag::new(vec![sv(4, &[(0, 1.0)]), sv(4, &[(1, 1.0)])], None).unwrap();
        assert_eq!(sparse_late_interaction(&q, &d).unwrap(), 0.0);
    }

    #[test]
    fn dense_maxsim_orthogonal() {
        let q = DenseTokenBag::new(vec![DenseVector::new(vec![1.0, 0.0]).unwrap()]).unwrap();
        let d = DenseTokenBag::new(vec![DenseVector::new(vec![0.0, 1.0]).unwrap()]).unwrap();
        assert_eq!(dense_maxsim(&q, &d).unwrap(), 0.0);
    }

    #[test]
    fn dense_maxsim_picks_best_token() {
        let q = DenseTokenBag::new(vec![DenseVector::new(vec![1.0, 0.0]).unwrap()]).unwrap();
        let d = DenseTokenBag::new(vec![
            DenseVector::new(vec![1.0, 0.0]).unwrap(),
            DenseVector::new(vec![0.5, 0.0]).unwrap(),
        ])
        .unwrap();
        assert_eq!(dense_maxsim(&q, &d).unwrap(), 1.0);
    }

    #[test]
    fn dense_maxsim_matches_double_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| {
            DenseTokenBag::new(
                (0..n)
                    .map(|_| {
                        DenseVector::new((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                            .unwrap()
                    })
                    .collect(),
            )
            .unwrap()
        };
        let q = mk(&mut rng, 2);
        let d = mk(&mut rng, 3);
        let mut expected = 0.0;
        for qi in q.vectors() {
            let mut best = f64::NEG_INFINITY;
            for dj in d.vectors() {
                let mut s = 0.0;
                for (a, b) in qi.values().iter().zip(dj.values()) {
                    s += a * b;
                }
                best = best.max(s);
            }
            expected += best;
        }
        assert!((dense_maxsim(&q, &d).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_bags_rejected() {
        assert!(TokenBag::new(vec![], None).is_err());
        assert!(DenseTokenBag::new(vec![]).is_err());
    }

    #[test]
    fn cosine_of_empty_code_is_zero() {
        let a = SparseVector::empty(4);
        let b = sv(4, &[(0, 1.0)]);
        assert_eq!(sparse_cosine(&a, &b).unwrap(), 0.0);
    }
}
