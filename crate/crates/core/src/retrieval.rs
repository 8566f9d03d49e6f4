//! Query pipelines over the inverted index.
//!
//! `retrieve_exact` traverses every posting list touched by the query's
//! active neurons and scores each candidate against its full stored codes.
//! `retrieve_ssrpp` first runs a coarse document-at-a-time pass over each
//! token's top `k_coarse` neurons, pruning with block upper bounds, then
//! refines the capped candidate set exactly. The coarse stage is required to
//! produce exactly the candidate set an exhaustive (no-skipping) pass would:
//! bounds are only ever used to skip, never to score, and bound sums carry a
//! deterministic inflation factor so floating-point fold error can never
//! cause a wrongful skip.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::index::{InvertedIndex, PostingList, StoredDoc};
use crate::sparse::{sparse_cosine, TokenBag};

/// Relative inflation applied to every pruning bound; absorbs fold-order
/// rounding so bound <= threshold implies the true score cannot win.
const BOUND_INFLATION: f64 = 1.0 + 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrievalMode {
    Exact,
    CoarseFine,
}

/// Query-length buckets mapping to sparsity levels: the first entry whose
/// `max_len` covers the token count wins, otherwise `fallback`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveTable {
    pub entries: Vec<(usize, usize)>,
    pub fallback: usize,
}

impl Default for AdaptiveTable {
    fn default() -> Self {
        AdaptiveTable {
            entries: vec![(3, 16), (7, 32)],
            fallback: 64,
        }
    }
}

/// Sparsity for a query of `token_count` tokens under the adaptive table.
pub fn adaptive_query_k(token_count: usize, table: &AdaptiveTable) -> usize {
    for &(max_len, k) in &table.entries {
        if token_count <= max_len {
            return k;
        }
    }
    table.fallback
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    /// Query sparsity (documents are encoded at the index-time K).
    pub k: usize,
    /// Principal neurons per query token in the coarse stage.
    pub k_coarse: usize,
    /// Candidate set size kept by the coarse stage.
    pub candidate_cap: usize,
    pub top_k: usize,
    pub adaptive: Option<AdaptiveTable>,
    /// Weight of the global-code cosine in cls fusion.
    pub cls_weight: f64,
    pub mode: RetrievalMode,
    pub block_skipping: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 32,
            k_coarse: 4,
            candidate_cap: 2000,
            top_k: 10,
            adaptive: None,
            cls_weight: 1.0,
            mode: RetrievalMode::CoarseFine,
            block_skipping: true,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid_config("k must be >= 1"));
        }
        if self.k_coarse == 0 || self.k_coarse > self.k {
            return Err(Error::invalid_config(format!(
                "need 1 <= k_coarse <= k; got k_coarse={}, k={}",
                self.k_coarse, self.k
            )));
        }
        if self.top_k == 0 {
            return Err(Error::invalid_config("top_k must be >= 1"));
        }
        if self.candidate_cap < self.top_k {
            return Err(Error::invalid_config(format!(
                "candidate_cap {} must be >= top_k {}",
                self.candidate_cap, self.top_k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: u64,
    pub score: f64,
    pub coarse_score: Option<f64>,
}

/// Per-query work counters. Counter semantics: a posting counts as scanned
/// when the traversal moves past it; a block counts as scanned when its
/// first posting is examined and as skipped when it is jumped wholesale.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalTrace {
    pub candidates_examined: u64,
    pub postings_scanned: u64,
    pub blocks_scanned: u64,
    pub blocks_skipped: u64,
    pub refinement_dots: u64,
    pub empty_query: bool,
    pub stage1_nanos: u64,
    pub stage2_nanos: u64,
}

#[derive(Debug, Clone)]
pub struct RetrievalOutput {
    pub results: Vec<ScoredDoc>,
    pub trace: RetrievalTrace,
}

fn check_query(index: &InvertedIndex, query: &TokenBag) -> Result<()> {
    if query.dim() != index.h() {
        return Err(Error::invalid_argument(format!(
            "query dim {} does not match index h {}",
            query.dim(),
            index.h()
        )));
    }
    Ok(())
}

fn query_slices(query: &TokenBag) -> Vec<(&[u32], &[f64])> {
    query
        .vectors()
        .iter()
        .map(|v| (v.ids(), v.values()))
        .collect()
}

/// Late-interaction score of a stored document against the query, plus the
/// number of token-pair dots performed. Scoring order matches
/// `sparse_late_interaction` exactly.
fn score_stored_doc(query: &[(&[u32], &[f64])], doc: &StoredDoc) -> (f64, u64) {
    let mut total = 0.0;
    for (ids, values) in query {
        let mut best = 0.0;
        for token in &doc.tokens {
            let s = token.dot_query(ids, values);
            if s > best {
                best = s;
            }
        }
        total += best;
    }
    (total, (query.len() * doc.tokens.len()) as u64)
}

fn rank(mut scored: Vec<ScoredDoc>, top_k: usize) -> Vec<ScoredDoc> {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc_id.cmp(&b.doc_id)));
    scored.truncate(top_k);
    scored
}

/// Exact single-stage retrieval: traverse the union of posting lists for all
/// activated query neurons, then score every candidate with full codes.
pub fn retrieve_exact(
    index: &InvertedIndex,
    query: &TokenBag,
    cfg: &RetrievalConfig,
) -> Result<RetrievalOutput> {
    cfg.validate()?;
    check_query(index, query)?;
    let start = Instant::now();
    let mut trace = RetrievalTrace::default();

    let mut neurons: Vec<u32> = query
        .vectors()
        .iter()
        .flat_map(|v| v.ids().iter().copied())
        .collect();
    neurons.sort_unstable();
    neurons.dedup();
    if neurons.is_empty() {
        trace.empty_query = true;
        trace.stage1_nanos = start.elapsed().as_nanos() as u64;
        return Ok(RetrievalOutput {
            results: Vec::new(),
            trace,
        });
    }

    let mut candidates: Vec<u64> = Vec::new();
    for &u in &neurons {
        if let Some(list) = index.list(u) {
            trace.postings_scanned += list.len() as u64;
            trace.blocks_scanned += list.blocks().len() as u64;
            candidates.extend(list.postings().map(|p| p.doc_id));
        }
    }
    candidates.sort_unstable();
    candidates.dedup();
    trace.candidates_examined = candidates.len() as u64;
    trace.stage1_nanos = start.elapsed().as_nanos() as u64;

    let refine = Instant::now();
    let q = query_slices(query);
    let mut scored = Vec::with_capacity(candidates.len());
    for doc_id in candidates {
        let doc = index
            .store()
            .get(doc_id)
            .expect("posting doc ids exist in the store");
        let (score, dots) = score_stored_doc(&q, doc);
        trace.refinement_dots += dots;
        scored.push(ScoredDoc {
            doc_id,
            score,
            coarse_score: None,
        });
    }
    trace.stage2_nanos = refine.elapsed().as_nanos() as u64;
    index
        .counters()
        .record(trace.postings_scanned, trace.blocks_skipped);
    Ok(RetrievalOutput {
        results: rank(scored, cfg.top_k),
        trace,
    })
}

/// The coarse query: per-neuron weights merged across query tokens, in
/// ascending neuron order.
fn coarse_terms(query: &TokenBag, k_coarse: usize) -> BTreeMap<u32, f64> {
    let mut weights: BTreeMap<u32, f64> = BTreeMap::new();
    for token in query.vectors() {
        let values = token.values();
        let take = k_coarse.min(values.len());
        if take == 0 {
            continue;
        }
        // Top k_coarse by value; on ties the lower position (= lower neuron
        // id, since supports are id-sorted) wins.
        let picked = crate::sparse::topk_indices(values, take);
        for i in picked {
            *weights.entry(token.ids()[i]).or_insert(0.0) += values[i];
        }
    }
    weights
}

struct Cursor<'a> {
    neuron: u32,
    weight: f64,
    list: &'a PostingList,
    block: usize,
    offset: usize,
    /// Inflated weight x max block bound; static, sound for any doc.
    cap: f64,
}

impl<'a> Cursor<'a> {
    fn new(neuron: u32, weight: f64, list: &'a PostingList) -> Self {
        let cap = weight * f64::from(list.max_upper_bound()) * BOUND_INFLATION;
        Cursor {
            neuron,
            weight,
            list,
            block: 0,
            offset: 0,
            cap,
        }
    }

    fn exhausted(&self) -> bool {
        self.block >= self.list.blocks().len()
    }

    fn current_doc(&self) -> u64 {
        self.list.blocks()[self.block].postings()[self.offset].doc_id
    }

    fn current_mu(&self) -> f32 {
        self.list.blocks()[self.block].postings()[self.offset].mu
    }

    fn current_block_bound(&self) -> f64 {
        self.weight * f64::from(self.list.blocks()[self.block].upper_bound())
    }

    fn current_block_last(&self) -> u64 {
        self.list.blocks()[self.block].last_doc()
    }

    /// Moves past the current posting.
    fn advance(&mut self, trace: &mut RetrievalTrace) {
        if self.offset == 0 {
            trace.blocks_scanned += 1;
        }
        trace.postings_scanned += 1;
        self.offset += 1;
        if self.offset >= self.list.blocks()[self.block].postings().len() {
            self.block += 1;
            self.offset = 0;
        }
    }

    /// Advances to the first posting with doc id >= target, skipping whole
    /// untouched blocks.
    fn seek(&mut self, target: u64, trace: &mut RetrievalTrace) {
        while !self.exhausted() {
            let block = &self.list.blocks()[self.block];
            if block.last_doc() < target {
                if self.offset == 0 {
                    trace.blocks_skipped += 1;
                } else {
                    // Partially consumed block abandoned: already counted as
                    // scanned when its first posting was examined.
                }
                self.block += 1;
                self.offset = 0;
                continue;
            }
            while self.current_doc() < target {
                self.advance(trace);
            }
            return;
        }
    }
}

/// Min-heap entry ordered so the weakest candidate pops first: lowest score,
/// ties resolved against the larger doc id (documents arrive in ascending id
/// order, so equal scores keep the earlier id).
#[derive(Debug, PartialEq)]
struct HeapEntry {
    score: f64,
    doc_id: u64,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.score
            .total_cmp(&other.score)
            .then(other.doc_id.cmp(&self.doc_id))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Coarse stage: upper-bound scores over each token's principal neurons,
/// keeping the top `candidate_cap` documents. Returns candidates sorted by
/// (coarse score desc, doc id asc). With or without block skipping the
/// result set is identical.
pub fn coarse_score_all(
    index: &InvertedIndex,
    query: &TokenBag,
    cfg: &RetrievalConfig,
) -> Result<(Vec<ScoredDoc>, RetrievalTrace)> {
    cfg.validate()?;
    check_query(index, query)?;
    let mut trace = RetrievalTrace::default();
    let terms = coarse_terms(query, cfg.k_coarse);
    if terms.is_empty() {
        trace.empty_query = true;
        return Ok((Vec::new(), trace));
    }

    let candidates = if cfg.block_skipping {
        coarse_block_max(index, &terms, cfg.candidate_cap, &mut trace)
    } else {
        coarse_exhaustive(index, &terms, cfg.candidate_cap, &mut trace)
    };
    index
        .counters()
        .record(trace.postings_scanned, trace.blocks_skipped);
    Ok((candidates, trace))
}

/// Reference coarse scorer: accumulate every posting of every selected list.
fn coarse_exhaustive(
    index: &InvertedIndex,
    terms: &BTreeMap<u32, f64>,
    cap: usize,
    trace: &mut RetrievalTrace,
) -> Vec<ScoredDoc> {
    let mut scores: HashMap<u64, f64> = HashMap::new();
    // Ascending neuron order fixes each document's accumulation order.
    for (&u, &w) in terms {
        if let Some(list) = index.list(u) {
            trace.postings_scanned += list.len() as u64;
            trace.blocks_scanned += list.blocks().len() as u64;
            for p in list.postings() {
                *scores.entry(p.doc_id).or_insert(0.0) += w * f64::from(p.mu);
            }
        }
    }
    let mut scored: Vec<ScoredDoc> = scores
        .into_iter()
        .map(|(doc_id, score)| ScoredDoc {
            doc_id,
            score,
            coarse_score: Some(score),
        })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc_id.cmp(&b.doc_id)));
    scored.truncate(cap);
    scored
}

/// Document-at-a-time merge with block-max pruning. Exact with respect to
/// the exhaustive scorer: per-document scores are identical (same terms,
/// same ascending-neuron accumulation order) and pruning bounds are
/// conservative.
fn coarse_block_max(
    index: &InvertedIndex,
    terms: &BTreeMap<u32, f64>,
    cap: usize,
    trace: &mut RetrievalTrace,
) -> Vec<ScoredDoc> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let mut cursors: Vec<Cursor> = terms
        .iter()
        .filter_map(|(&u, &w)| index.list(u).map(|list| Cursor::new(u, w, list)))
        .filter(|c| !c.exhausted())
        .collect();
    let mut heap: BinaryHeap<Reverse<HeapEntry>> = BinaryHeap::with_capacity(cap + 1);
    let mut threshold = f64::NEG_INFINITY;

    let mut order: Vec<usize> = (0..cursors.len()).collect();
    let mut parts: Vec<(u32, f64)> = Vec::new();
    loop {
        order.retain(|&i| !cursors[i].exhausted());
        if order.is_empty() {
            break;
        }
        order.sort_by_key(|&i| cursors[i].current_doc());

        // Pivot: first prefix whose combined caps could beat the threshold.
        let mut acc = 0.0;
        let mut pivot = None;
        for (rank, &i) in order.iter().enumerate() {
            acc += cursors[i].cap;
            if acc > threshold {
                pivot = Some(rank);
                break;
            }
        }
        let Some(pivot) = pivot else { break };
        let pivot_doc = cursors[order[pivot]].current_doc();

        if cursors[order[0]].current_doc() < pivot_doc {
            for &i in &order[..pivot] {
                if cursors[i].current_doc() < pivot_doc {
                    cursors[i].seek(pivot_doc, trace);
                }
            }
            continue;
        }

        // Every cursor at the pivot document (there may be more past the
        // pivot rank).
        let mut at_doc = pivot + 1;
        while at_doc < order.len() && cursors[order[at_doc]].current_doc() == pivot_doc {
            at_doc += 1;
        }

        // Refined bound from the blocks containing the pivot doc, summed in
        // ascending neuron order like real scores.
        parts.clear();
        for &i in &order[..at_doc] {
            parts.push((cursors[i].neuron, cursors[i].current_block_bound()));
        }
        parts.sort_unstable_by_key(|&(u, _)| u);
        let bound: f64 = parts.iter().map(|&(_, b)| b).sum::<f64>() * BOUND_INFLATION;

        if bound > threshold {
            parts.clear();
            for &i in &order[..at_doc] {
                parts.push((
                    cursors[i].neuron,
                    cursors[i].weight * f64::from(cursors[i].current_mu()),
                ));
            }
            parts.sort_unstable_by_key(|&(u, _)| u);
            let score: f64 = parts.iter().map(|&(_, s)| s).sum();
            for &i in &order[..at_doc] {
                cursors[i].advance(trace);
            }
            if heap.len() < cap {
                heap.push(Reverse(HeapEntry {
                    score,
                    doc_id: pivot_doc,
                }));
                if heap.len() == cap {
                    threshold = heap.peek().map(|e| e.0.score).unwrap_or(f64::NEG_INFINITY);
                }
            } else if score > threshold {
                heap.pop();
                heap.push(Reverse(HeapEntry {
                    score,
                    doc_id: pivot_doc,
                }));
                threshold = heap.peek().map(|e| e.0.score).unwrap_or(f64::NEG_INFINITY);
            }
        } else {
            // The whole id range [pivot_doc, skip_to] is bounded by the same
            // blocks; no document inside can beat the threshold.
            let mut skip_to = u64::MAX;
            for &i in &order[..at_doc] {
                skip_to = skip_to.min(cursors[i].current_block_last());
            }
            if at_doc < order.len() {
                skip_to = skip_to.min(cursors[order[at_doc]].current_doc() - 1);
            }
            for &i in &order[..at_doc] {
                cursors[i].seek(skip_to + 1, trace);
            }
        }
    }

    let mut scored: Vec<ScoredDoc> = heap
        .into_iter()
        .map(|Reverse(e)| ScoredDoc {
            doc_id: e.doc_id,
            score: e.score,
            coarse_score: Some(e.score),
        })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc_id.cmp(&b.doc_id)));
    scored
}

/// Two-stage retrieval: coarse candidate generation under the cap, then
/// exact late-interaction refinement of the candidates.
pub fn retrieve_ssrpp(
    index: &InvertedIndex,
    query: &TokenBag,
    cfg: &RetrievalConfig,
) -> Result<RetrievalOutput> {
    let start = Instant::now();
    let (candidates, mut trace) = coarse_score_all(index, query, cfg)?;
    trace.stage1_nanos = start.elapsed().as_nanos() as u64;
    trace.candidates_examined = candidates.len() as u64;
    if candidates.is_empty() {
        return Ok(RetrievalOutput {
            results: Vec::new(),
            trace,
        });
    }

    let refine = Instant::now();
    let q = query_slices(query);
    // Candidates are rescored in ascending doc order, the canonical order.
    let mut by_id: Vec<(u64, f64)> = candidates.iter().map(|c| (c.doc_id, c.score)).collect();
    by_id.sort_unstable_by_key(|&(id, _)| id);
    let mut scored = Vec::with_capacity(by_id.len());
    for (doc_id, coarse) in by_id {
        let doc = index
            .store()
            .get(doc_id)
            .expect("coarse candidates exist in the store");
        let (score, dots) = score_stored_doc(&q, doc);
        trace.refinement_dots += dots;
        scored.push(ScoredDoc {
            doc_id,
            score,
            coarse_score: Some(coarse),
        });
    }
    trace.stage2_nanos = refine.elapsed().as_nanos() as u64;
    Ok(RetrievalOutput {
        results: rank(scored, cfg.top_k),
        trace,
    })
}

/// SSR++ with global-code fusion: the candidate set's exact token scores are
/// combined with `cls_weight * cosine(query global, doc global)`; documents
/// without a global code contribute zero cosine.
pub fn retrieve_with_cls(
    index: &InvertedIndex,
    query: &TokenBag,
    cfg: &RetrievalConfig,
) -> Result<RetrievalOutput> {
    let query_global = query
        .global()
        .ok_or_else(|| Error::invalid_argument("cls retrieval requires a query global code"))?
        .clone();
    let start = Instant::now();
    let (candidates, mut trace) = coarse_score_all(index, query, cfg)?;
    trace.stage1_nanos = start.elapsed().as_nanos() as u64;
    trace.candidates_examined = candidates.len() as u64;
    if candidates.is_empty() {
        return Ok(RetrievalOutput {
            results: Vec::new(),
            trace,
        });
    }
    let refine = Instant::now();
    let q = query_slices(query);
    let mut by_id: Vec<(u64, f64)> = candidates.iter().map(|c| (c.doc_id, c.score)).collect();
    by_id.sort_unstable_by_key(|&(id, _)| id);
    let mut scored = Vec::with_capacity(by_id.len());
    for (doc_id, coarse) in by_id {
        let doc = index
            .store()
            .get(doc_id)
            .expect("coarse candidates exist in the store");
        let (token_score, dots) = score_stored_doc(&q, doc);
        trace.refinement_dots += dots;
        let cosine = match &doc.global {
            Some(g) => {
                let g = g.to_sparse(index.h());
                sparse_cosine(&query_global, &g)?
            }
            None => 0.0,
        };
        scored.push(ScoredDoc {
            doc_id,
            score: token_score + cfg.cls_weight * cosine,
            coarse_score: Some(coarse),
        });
    }
    trace.stage2_nanos = refine.elapsed().as_nanos() as u64;
    Ok(RetrievalOutput {
        results: rank(scored, cfg.top_k),
        trace,
    })
}

/// Reference ranking: exhaustive late interaction over every stored
/// document, keeping positive scores only. Used by the verification command;
/// the test suites carry their own independent implementations.
pub fn oracle_rank(
    index: &InvertedIndex,
    query: &TokenBag,
    top_k: usize,
) -> Result<Vec<ScoredDoc>> {
    check_query(index, query)?;
    let q = query_slices(query);
    let mut scored = Vec::new();
    for doc in index.store().docs() {
        let (score, _) = score_stored_doc(&q, doc);
        if score > 0.0 {
            scored.push(ScoredDoc {
                doc_id: doc.doc_id,
                score,
                coarse_score: None,
            });
        }
    }
    Ok(rank(scored, top_k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_index;
    use crate::sparse::{sparse_late_interaction, SparseVector};

    fn sv(dim: u32, pairs: &[(u32, f64)]) -> SparseVector {
        SparseVector::from_pairs(dim, pairs.to_vec()).unwrap()
    }

    fn bag(dim: u32, tokens: &[&[(u32, f64)]]) -> TokenBag {
        TokenBag::new(tokens.iter().map(|t| sv(dim, t)).collect(), None).unwrap()
    }

    fn cfg(k: usize, k_coarse: usize, cap: usize, top_k: usize) -> RetrievalConfig {
        RetrievalConfig {
            k,
            k_coarse,
            candidate_cap: cap,
            top_k,
            ..RetrievalConfig::default()
        }
    }

    #[test]
    fn exact_single_shared_neuron() {
        let doc = bag(16, &[&[(3, 2.0), (7, 1.0)]]);
        let index = build_index(16, vec![(42, doc.clone())], 4).unwrap();
        let query = bag(16, &[&[(3, 1.5)]]);
        let out = retrieve_exact(&index, &query, &cfg(8, 2, 10, 5)).unwrap();
        assert_eq!(out.results.len(), 1);
        assert_eq!(out.results[0].doc_id, 42);
        let expected = sparse_late_interaction(&query, &doc).unwrap();
        assert_eq!(out.results[0].score, expected);
    }

    #[test]
    fn exact_disjoint_query_returns_empty() {
        let index = build_index(16, vec![(0, bag(16, &[&[(1, 1.0)]]))], 4).unwrap();
        let query = bag(16, &[&[(9, 1.0)]]);
        let out = retrieve_exact(&index, &query, &cfg(8, 2, 10, 5)).unwrap();
        assert!(out.results.is_empty());
        assert!(!out.trace.empty_query);
    }

    #[test]
    fn exact_empty_query_flags_trace() {
        let index = build_index(16, vec![(0, bag(16, &[&[(1, 1.0)]]))], 4).unwrap();
        let query = TokenBag::new(vec![SparseVector::empty(16)], None).unwrap();
        let out = retrieve_exact(&index, &query, &cfg(8, 2, 10, 5)).unwrap();
        assert!(out.results.is_empty());
        assert!(out.trace.empty_query);
    }

    #[test]
    fn coarse_single_token_single_neuron_scales_mu() {
        // q = [{0:2, 5:1}], k_coarse = 1 selects neuron 0; docs A: mu=3,
        // B: mu=1 -> coarse scores 6 and 2.
        let doc_a = bag(16, &[&[(0, 3.0)]]);
        let doc_b = bag(16, &[&[(0, 1.0), (5, 10.0)]]);
        let index = build_index(16, vec![(1, doc_a), (2, doc_b)], 4).unwrap();
        let query = bag(16, &[&[(0, 2.0), (5, 1.0)]]);
        let c = cfg(8, 1, 10, 5);
        let (candidates, _) = coarse_score_all(&index, &query, &c).unwrap();
        assert_eq!(candidates.len(), 2);
        assert_eq!(candidates[0].doc_id, 1);
        assert_eq!(candidates[0].score, 6.0);
        assert_eq!(candidates[1].doc_id, 2);
        assert_eq!(candidates[1].score, 2.0);
    }

    #[test]
    fn coarse_skipping_matches_exhaustive_on_random_corpora() {
        use rand::{Rng, SeedableRng};
        for seed in 0..30 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let h = 24u32;
            let docs: Vec<(u64, TokenBag)> = (0..rng.gen_range(5..120))
                .map(|i| {
                    let n_tokens = rng.gen_range(1..4);
                    let tokens: Vec<SparseVector> = (0..n_tokens)
                        .map(|_| {
                            let mut pairs = Vec::new();
                            for u in 0..h {
                                if rng.gen_bool(0.2) {
                                    pairs.push((u, f64::from(rng.gen_range(0.05f32..3.0))));
                                }
                            }
                            if pairs.is_empty() {
                                pairs.push((u32::from(rng.gen_range(0u8..24)), 1.0));
                            }
                            SparseVector::from_pairs(h, pairs).unwrap()
                        })
                        .collect();
                    (i as u64, TokenBag::new(tokens, None).unwrap())
                })
                .collect();
            let index = build_index(h, docs, 4).unwrap();
            let mut q_pairs = Vec::new();
            for u in 0..h {
                if rng.gen_bool(0.3) {
                    q_pairs.push((u, f64::from(rng.gen_range(0.05f32..2.0))));
                }
            }
            if q_pairs.is_empty() {
                q_pairs.push((0, 1.0));
            }
            let query =
                TokenBag::new(vec![SparseVector::from_pairs(h, q_pairs).unwrap()], None).unwrap();
            let cap = rng.gen_range(1..12);
            let mut with = cfg(8, 2, cap, 1.min(cap));
            with.block_skipping = true;
            let mut without = with.clone();
            without.block_skipping = false;
            let (a, _) = coarse_score_all(&index, &query, &with).unwrap();
            let (b, _) = coarse_score_all(&index, &query, &without).unwrap();
            let ids_a: Vec<u64> = a.iter().map(|s| s.doc_id).collect();
            let ids_b: Vec<u64> = b.iter().map(|s| s.doc_id).collect();
            assert_eq!(ids_a, ids_b, "seed {seed} cap {cap}");
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.score, y.score, "seed {seed}");
            }
        }
    }

    #[test]
    fn ssrpp_equals_exact_when_cap_covers_corpus() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let h = 24u32;
        let docs: Vec<(u64, TokenBag)> = (0..60)
            .map(|i| {
                let mut pairs = Vec::new();
                for u in 0..h {
                    if rng.gen_bool(0.25) {
                        pairs.push((u, f64::from(rng.gen_range(0.05f32..3.0))));
                    }
                }
                if pairs.is_empty() {
                    pairs.push((0, 1.0));
                }
                (
                    i as u64,
                    TokenBag::new(vec![SparseVector::from_pairs(h, pairs).unwrap()], None).unwrap(),
                )
            })
            .collect();
        let index = build_index(h, docs, 4).unwrap();
        let query = bag(h, &[&[(0, 1.0), (3, 0.5)], &[(7, 2.0)]]);
        // k_coarse = k: the coarse stage touches every activated neuron, so
        // an uncapped candidate set covers the exact candidate universe.
        let c = cfg(8, 8, 100, 10);
        let exact = retrieve_exact(&index, &query, &c).unwrap();
        let ssrpp = retrieve_ssrpp(&index, &query, &c).unwrap();
        assert_eq!(exact.results.len(), ssrpp.results.len());
        for (a, b) in exact.results.iter().zip(ssrpp.results.iter()) {
            assert_eq!(a.doc_id, b.doc_id);
            assert_eq!(a.score, b.score);
        }
    }

    #[test]
    fn coarse_upper_bounds_token_score_at_full_k() {
        // With k_coarse = k, the coarse score dominates the true late
        // interaction per query token.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let h = 16u32;
        for _ in 0..50 {
            let doc_tokens: Vec<SparseVector> = (0..rng.gen_range(1..4))
                .map(|_| {
                    let mut pairs = Vec::new();
                    for u in 0..h {
                        if rng.gen_bool(0.3) {
                            pairs.push((u, f64::from(rng.gen_range(0.05f32..2.0))));
                        }
                    }
                    if pairs.is_empty() {
                        pairs.push((0, 1.0));
                    }
                    SparseVector::from_pairs(h, pairs).unwrap()
                })
                .collect();
            let doc = TokenBag::new(doc_tokens, None).unwrap();
            let index = build_index(h, vec![(0, doc.clone())], 4).unwrap();
            let mut q_pairs = Vec::new();
            for u in 0..h {
                if rng.gen_bool(0.4) {
                    q_pairs.push((u, f64::from(rng.gen_range(0.05f32..2.0))));
                }
            }
            if q_pairs.is_empty() {
                q_pairs.push((1, 1.0));
            }
            let query =
                TokenBag::new(vec![SparseVector::from_pairs(h, q_pairs).unwrap()], None).unwrap();
            let k = query.vectors()[0].nnz();
            let c = cfg(k.max(1), k.max(1), 10, 5);
            let (candidates, _) = coarse_score_all(&index, &query, &c).unwrap();
            let exact = sparse_late_interaction(&query, &doc).unwrap();
            if exact > 0.0 {
                assert_eq!(candidates.len(), 1);
                assert!(
                    candidates[0].score >= exact - 1e-12,
                    "coarse {} < exact {exact}",
                    candidates[0].score
                );
            }
        }
    }

    #[test]
    fn adaptive_table_reproduces_length_buckets() {
        let table = AdaptiveTable::default();
        let expect = |n: usize| {
            if n <= 3 {
                16
            } else if n <= 7 {
                32
            } else {
                64
            }
        };
        for n in 1..=16 {
            assert_eq!(adaptive_query_k(n, &table), expect(n), "length {n}");
        }
    }

    #[test]
    fn cls_fusion_tie_breaks_by_doc_id() {
        // Token scores (9,4,2); cosines (0,1,1); weight 5 -> finals (9,9,7)
        // with the 9-9 tie resolved toward the lower doc id. All values are
        // exactly representable so the tie is bit-exact.
        let h = 8u32;
        let mk_doc = |token_val: f64, global: &[(u32, f64)]| {
            TokenBag::new(vec![sv(h, &[(0, token_val)])], Some(sv(h, global))).unwrap()
        };
        let g_query = sv(h, &[(6, 1.0)]);
        let d1 = mk_doc(9.0, &[(7, 1.0)]); // cosine 0
        let d2 = mk_doc(4.0, &[(6, 2.0)]); // cosine 1
        let d3 = mk_doc(2.0, &[(6, 3.0)]); // cosine 1
        let index = build_index(h, vec![(1, d1), (2, d2), (3, d3)], 4).unwrap();
        let query = TokenBag::new(vec![sv(h, &[(0, 1.0)])], Some(g_query)).unwrap();
        let mut c = cfg(4, 4, 10, 3);
        c.cls_weight = 5.0;
        let out = retrieve_with_cls(&index, &query, &c).unwrap();
        let scored: Vec<(u64, f64)> = out.results.iter().map(|r| (r.doc_id, r.score)).collect();
        assert_eq!(scored, vec![(1, 9.0), (2, 9.0), (3, 7.0)]);
    }

    #[test]
    fn cls_weight_zero_matches_ssrpp_ranking() {
        let h = 8u32;
        let docs = vec![
            (
                1,
                TokenBag::new(vec![sv(h, &[(0, 2.0)])], Some(sv(h, &[(5, 1.0)]))).unwrap(),
            ),
            (
                2,
                TokenBag::new(vec![sv(h, &[(0, 1.0)])], Some(sv(h, &[(6, 1.0)]))).unwrap(),
            ),
        ];
        let index = build_index(h, docs, 4).unwrap();
        let query = TokenBag::new(vec![sv(h, &[(0, 1.0)])], Some(sv(h, &[(5, 1.0)]))).unwrap();
        let mut c = cfg(4, 4, 10, 2);
        c.cls_weight = 0.0;
        let fused = retrieve_with_cls(&index, &query, &c).unwrap();
        let plain = retrieve_ssrpp(&index, &query, &c).unwrap();
        let f: Vec<(u64, f64)> = fused.results.iter().map(|r| (r.doc_id, r.score)).collect();
        let p: Vec<(u64, f64)> = plain.results.iter().map(|r| (r.doc_id, r.score)).collect();
        assert_eq!(f, p);
    }

    #[test]
    fn cls_requires_query_global() {
        let index = build_index(8, vec![(0, bag(8, &[&[(0, 1.0)]]))], 4).unwrap();
        let query = bag(8, &[&[(0, 1.0)]]);
        assert!(retrieve_with_cls(&index, &query, &cfg(4, 4, 10, 2)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(8, 9, 10, 5).validate().is_err()); // k_coarse > k
        assert!(cfg(8, 0, 10, 5).validate().is_err());
        assert!(cfg(8, 2, 3, 5).validate().is_err()); // cap < top_k
        assert!(cfg(8, 2, 10, 5).validate().is_ok());
    }
}
