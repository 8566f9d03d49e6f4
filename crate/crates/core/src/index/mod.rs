//! Neuron-level inverted index: per-neuron posting lists of (doc id, max
//! impact) pairs partitioned into fixed-size blocks with upper bounds, plus a
//! document store holding every document's full sparse codes for exact
//! refinement.
//!
//! Postings are kept in doc-id order (not impact order) so append-only
//! updates extend tail blocks and traversal is a merge join. Stored values
//! are 32-bit floats; the encoder already rounds code values to f32, so
//! scores computed from the store equal scores computed from fresh codes.

mod io;

pub use io::{load_index, save_index};

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::sparse::{SparseVector, TokenBag};

/// One posting: a document and the neuron's maximum activation within it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posting {
    pub doc_id: u64,
    pub mu: f32,
}

/// Fixed-size run of postings with the maximum impact among its members.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    postings: Vec<Posting>,
    upper_bound: f32,
}

impl Block {
    pub fn postings(&self) -> &[Posting] {
        &self.postings
    }

    pub fn upper_bound(&self) -> f32 {
        self.upper_bound
    }

    pub fn first_doc(&self) -> u64 {
        self.postings[0].doc_id
    }

    pub fn last_doc(&self) -> u64 {
        self.postings[self.postings.len() - 1].doc_id
    }
}

/// All postings for one neuron, cut into blocks; doc ids strictly increase
/// across the whole list and every block except the last is full.
#[derive(Debug, Clone, PartialEq)]
pub struct PostingList {
    neuron_id: u32,
    blocks: Vec<Block>,
}

impl PostingList {
    pub fn neuron_id(&self) -> u32 {
        self.neuron_id
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.postings.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn postings(&self) -> impl Iterator<Item = &Posting> + '_ {
        self.blocks.iter().flat_map(|b| b.postings.iter())
    }

    pub fn max_upper_bound(&self) -> f32 {
        self.blocks
            .iter()
            .map(|b| b.upper_bound)
            .fold(0.0, f32::max)
    }

    fn push(&mut self, posting: Posting, block_size: usize) {
        match self.blocks.last_mut() {
            Some(tail) if tail.postings.len() < block_size => {
                tail.postings.push(posting);
                if posting.mu > tail.upper_bound {
                    tail.upper_bound = posting.mu;
                }
            }
            _ => self.blocks.push(Block {
                postings: vec![posting],
                upper_bound: posting.mu,
            }),
        }
    }
}

/// Compact per-token sparse code: parallel 32-bit neuron ids and values.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredCode {
    ids: Vec<u32>,
    values: Vec<f32>,
}

impl StoredCode {
    /// Quantizes a code to f32 values, dropping entries that round to zero.
    pub fn from_sparse(code: &SparseVector) -> StoredCode {
        let mut ids = Vec::with_capacity(code.nnz());
        let mut values = Vec::with_capacity(code.nnz());
        for (id, v) in code.entries() {
            let q = v as f32;
            if q > 0.0 {
                ids.push(id);
                values.push(q);
            }
        }
        StoredCode { ids, values }
    }

    pub(crate) fn from_raw(ids: Vec<u32>, values: Vec<f32>) -> StoredCode {
        StoredCode { ids, values }
    }

    pub fn to_sparse(&self, dim: u32) -> SparseVector {
        SparseVector::new(
            dim,
            self.ids.clone(),
            self.values.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("stored codes uphold sparse-vector invariants")
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.ids.len()
    }

    /// Merge-join dot against a query code, accumulated in f64 in neuron-id
    /// order (the canonical order every scoring path uses).
    pub fn dot_query(&self, q_ids: &[u32], q_values: &[f64]) -> f64 {
        let mut i = 0;
        let mut j = 0;
        let mut acc = 0.0;
        while i < self.ids.len() && j < q_ids.len() {
            match self.ids[i].cmp(&q_ids[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += f64::from(self.values[i]) * q_values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// One stored document: its token codes plus an optional global code.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDoc {
    pub doc_id: u64,
    pub tokens: Vec<StoredCode>,
    pub global: Option<StoredCode>,
}

/// Documents in ascending id order with an id lookup.
#[derive(Debug, Clone, Default)]
pub struct DocStore {
    docs: Vec<StoredDoc>,
    by_id: HashMap<u64, usize>,
}

impl DocStore {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: u64) -> Option<&StoredDoc> {
        self.by_id.get(&doc_id).map(|&i| &self.docs[i])
    }

    pub fn docs(&self) -> &[StoredDoc] {
        &self.docs
    }

    pub fn max_doc_id(&self) -> Option<u64> {
        self.docs.last().map(|d| d.doc_id)
    }

    /// Reconstructs the document's token bag from stored codes.
    pub fn token_bag(&self, doc_id: u64, dim: u32) -> Option<TokenBag> {
        let doc = self.get(doc_id)?;
        let vectors = doc.tokens.iter().map(|t| t.to_sparse(dim)).collect();
        let global = doc.global.as_ref().map(|g| g.to_sparse(dim));
        Some(TokenBag::new(vectors, global).expect("stored docs hold at least one token"))
    }

    fn push(&mut self, doc: StoredDoc) {
        self.by_id.insert(doc.doc_id, self.docs.len());
        self.docs.push(doc);
    }
}

/// Cumulative traversal counters, reset-able through `index_stats`.
#[derive(Debug, Default)]
pub struct TraversalCounters {
    pub postings_scanned: AtomicU64,
    pub blocks_skipped: AtomicU64,
}

impl TraversalCounters {
    pub fn record(&self, postings: u64, blocks_skipped: u64) {
        self.postings_scanned.fetch_add(postings, Ordering::Relaxed);
        self.blocks_skipped
            .fetch_add(blocks_skipped, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> (u64, u64) {
        (
            self.postings_scanned.load(Ordering::Relaxed),
            self.blocks_skipped.load(Ordering::Relaxed),
        )
    }

    pub fn reset(&self) {
        self.postings_scanned.store(0, Ordering::Relaxed);
        self.blocks_skipped.store(0, Ordering::Relaxed);
    }
}

impl Clone for TraversalCounters {
    fn clone(&self) -> Self {
        let (p, b) = self.snapshot();
        TraversalCounters {
            postings_scanned: AtomicU64::new(p),
            blocks_skipped: AtomicU64::new(b),
        }
    }
}

pub const DEFAULT_BLOCK_SIZE: u32 = 64;

/// The inverted index: sparse map of posting lists plus the document store.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    h: u32,
    block_size: u32,
    lists: BTreeMap<u32, PostingList>,
    store: DocStore,
    counters: TraversalCounters,
}

impl InvertedIndex {
    pub fn new(h: u32, block_size: u32) -> Result<Self> {
        if h == 0 {
            return Err(Error::invalid_argument("h must be >= 1"));
        }
        if block_size == 0 {
            return Err(Error::invalid_argument("block_size must be >= 1"));
        }
        Ok(InvertedIndex {
            h,
            block_size,
            lists: BTreeMap::new(),
            store: DocStore::default(),
            counters: TraversalCounters::default(),
        })
    }

    pub fn h(&self) -> u32 {
        self.h
    }

    pub fn block_size(&self) -> u32 {
        self.block_size
    }

    pub fn doc_count(&self) -> u64 {
        self.store.len() as u64
    }

    pub fn list(&self, neuron_id: u32) -> Option<&PostingList> {
        self.lists.get(&neuron_id)
    }

    pub fn lists(&self) -> impl Iterator<Item = &PostingList> + '_ {
        self.lists.values()
    }

    pub fn store(&self) -> &DocStore {
        &self.store
    }

    pub fn counters(&self) -> &TraversalCounters {
        &self.counters
    }

    /// Appends one document; ids must strictly increase.
    pub fn append_doc(&mut self, doc_id: u64, bag: &TokenBag) -> Result<()> {
        if bag.dim() != self.h {
            return Err(Error::invalid_argument(format!(
                "bag dim {} does not match index h {}",
                bag.dim(),
                self.h
            )));
        }
        if let Some(last) = self.store.max_doc_id() {
            if doc_id <= last {
                return Err(Error::AppendOrderViolation { last, got: doc_id });
            }
        }
        let tokens: Vec<StoredCode> = bag.vectors().iter().map(StoredCode::from_sparse).collect();
        let global = bag.global().map(StoredCode::from_sparse);

        // Per-neuron max impact across the document's tokens.
        let mut impacts: BTreeMap<u32, f32> = BTreeMap::new();
        for token in &tokens {
            for (i, &u) in token.ids.iter().enumerate() {
                let v = token.values[i];
                impacts
                    .entry(u)
                    .and_modify(|m| {
                        if v > *m {
                            *m = v;
                        }
                    })
                    .or_insert(v);
            }
        }
        let block_size = self.block_size as usize;
        for (u, mu) in impacts {
            self.lists
                .entry(u)
                .or_insert_with(|| PostingList {
                    neuron_id: u,
                    blocks: Vec::new(),
                })
                .push(Posting { doc_id, mu }, block_size);
        }
        self.store.push(StoredDoc {
            doc_id,
            tokens,
            global,
        });
        Ok(())
    }

    /// Structural invariants: posting order, block fullness and bounds,
    /// store consistency, and the witness property tying every posting's
    /// impact to a stored token. Returns human-readable violations.
    pub fn verify(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for list in self.lists.values() {
            let mut prev: Option<u64> = None;
            for (bi, block) in list.blocks.iter().enumerate() {
                if block.postings.is_empty() {
                    problems.push(format!("neuron {}: block {bi} is empty", list.neuron_id));
                    continue;
                }
                if bi + 1 < list.blocks.len() && block.postings.len() != self.block_size as usize {
                    problems.push(format!(
                        "neuron {}: non-tail block {bi} holds {} postings, expected {}",
                        list.neuron_id,
                        block.postings.len(),
                        self.block_size
                    ));
                }
                let mut max_mu = f32::NEG_INFINITY;
                for p in &block.postings {
                    if let Some(prev) = prev {
                        if p.doc_id <= prev {
                            problems.push(format!(
                                "neuron {}: doc ids not strictly increasing at {}",
                                list.neuron_id, p.doc_id
                            ));
                        }
                    }
                    prev = Some(p.doc_id);
                    if p.mu <= 0.0 || p.mu.is_nan() {
                        problems.push(format!(
                            "neuron {}: non-positive impact {} for doc {}",
                            list.neuron_id, p.mu, p.doc_id
                        ));
                    }
                    max_mu = max_mu.max(p.mu);
                    match self.store.get(p.doc_id) {
                        None => problems.push(format!(
                            "neuron {}: posting references missing doc {}",
                            list.neuron_id, p.doc_id
                        )),
                        Some(doc) => {
                            let mut witness = f32::NEG_INFINITY;
                            for token in &doc.tokens {
                                if let Ok(pos) = token.ids.binary_search(&list.neuron_id) {
                                    witness = witness.max(token.values[pos]);
                                }
                            }
                            if witness != p.mu {
                                problems.push(format!(
                                    "neuron {} doc {}: impact {} not witnessed (best token value {})",
                                    list.neuron_id, p.doc_id, p.mu, witness
                                ));
                            }
                        }
                    }
                }
                if block.upper_bound != max_mu {
                    problems.push(format!(
                        "neuron {} block {bi}: upper bound {} != max impact {}",
                        list.neuron_id, block.upper_bound, max_mu
                    ));
                }
            }
        }
        // Each stored doc's active neurons must be covered by postings.
        for doc in self.store.docs() {
            let mut impacts: HashMap<u32, f32> = HashMap::new();
            for token in &doc.tokens {
                for (i, &u) in token.ids.iter().enumerate() {
                    match impacts.entry(u) {
                        Entry::Occupied(mut e) => {
                            if token.values[i] > *e.get() {
                                e.insert(token.values[i]);
                            }
                        }
                        Entry::Vacant(e) => {
                            e.insert(token.values[i]);
                        }
                    }
                }
            }
            for (u, mu) in impacts {
                let found = self
                    .lists
                    .get(&u)
                    .and_then(|l| l.postings().find(|p| p.doc_id == doc.doc_id).map(|p| p.mu));
                if found != Some(mu) {
                    problems.push(format!(
                        "doc {} neuron {u}: store impact {mu} has no matching posting ({found:?})",
                        doc.doc_id
                    ));
                }
            }
        }
        problems
    }

    /// Serialized size in bytes (the SSRI layout, checksum included).
    pub fn byte_size(&self) -> u64 {
        let mut bytes = 4 + 4 + 4 + 4 + 8 + 4; // magic, version, h, block_size, doc_count, list_count
        for list in self.lists.values() {
            bytes += 4 + 4;
            for block in &list.blocks {
                bytes += 4 + 4 + 12 * block.postings.len() as u64;
            }
        }
        for doc in self.store.docs() {
            bytes += 8 + 4 + 1;
            for token in &doc.tokens {
                bytes += 4 + 8 * token.nnz() as u64;
            }
            if let Some(g) = &doc.global {
                bytes += 4 + 8 * g.nnz() as u64;
            }
        }
        bytes + 4 // crc footer
    }

    pub fn stats(&self) -> IndexStatsReport {
        let lengths: Vec<usize> = self.lists.values().map(|l| l.len()).collect();
        let total_postings: usize = lengths.iter().sum();
        let nonempty = lengths.iter().filter(|&&l| l > 0).count();
        let (postings_scanned, blocks_skipped) = self.counters.snapshot();
        IndexStatsReport {
            doc_count: self.doc_count(),
            nonempty_lists: nonempty as u64,
            total_postings: total_postings as u64,
            mean_posting_length: if nonempty > 0 {
                total_postings as f64 / nonempty as f64
            } else {
                0.0
            },
            max_posting_length: lengths.iter().copied().max().unwrap_or(0) as u64,
            block_count: self.lists.values().map(|l| l.blocks.len() as u64).sum(),
            bytes: self.byte_size(),
            postings_scanned,
            blocks_skipped,
        }
    }

    pub fn reset_counters(&self) {
        self.counters.reset();
    }

    pub(crate) fn from_parts(
        h: u32,
        block_size: u32,
        lists: BTreeMap<u32, PostingList>,
        store: DocStore,
    ) -> Self {
        InvertedIndex {
            h,
            block_size,
            lists,
            store,
            counters: TraversalCounters::default(),
        }
    }
}

/// Builds an index in one pass over encoded documents (any id order,
/// duplicates rejected).
pub fn build_index(
    h: u32,
    encoded_docs: Vec<(u64, TokenBag)>,
    block_size: u32,
) -> Result<InvertedIndex> {
    let mut index = InvertedIndex::new(h, block_size)?;
    let mut docs = encoded_docs;
    docs.sort_by_key(|(id, _)| *id);
    for w in docs.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::invalid_argument(format!(
                "duplicate doc id {}",
                w[0].0
            )));
        }
    }
    for (doc_id, bag) in &docs {
        index.append_doc(*doc_id, bag)?;
    }
    Ok(index)
}

/// Aggregate statistics plus the traversal counters.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexStatsReport {
    pub doc_count: u64,
    pub nonempty_lists: u64,
    pub total_postings: u64,
    pub mean_posting_length: f64,
    pub max_posting_length: u64,
    pub block_count: u64,
    pub bytes: u64,
    pub postings_scanned: u64,
    pub blocks_skipped: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(dim: u32, pairs: &[(u32, f64)]) -> SparseVector {
        SparseVector::from_pairs(dim, pairs.to_vec()).unwrap()
    }

    fn bag(dim: u32, tokens: &[&[(u32, f64)]]) -> TokenBag {
        TokenBag::new(tokens.iter().map(|t| sv(dim, t)).collect(), None).unwrap()
    }

    #[test]
    fn impacts_take_max_over_tokens() {
        let b = bag(8, &[&[(0, 1.0)], &[(0, 3.0), (2, 1.0)]]);
        let index = build_index(8, vec![(7, b)], 64).unwrap();
        let l0 = index.list(0).unwrap();
        assert_eq!(
            l0.postings().collect::<Vec<_>>(),
            vec![&Posting { doc_id: 7, mu: 3.0 }]
        );
        let l2 = index.list(2).unwrap();
        assert_eq!(
            l2.postings().collect::<Vec<_>>(),
            vec![&Posting { doc_id: 7, mu: 1.0 }]
        );
        assert!(index.list(1).is_none());
        assert!(index.verify().is_empty());
    }

    #[test]
    fn blocks_partition_as_expected() {
        let docs: Vec<(u64, TokenBag)> = (0..130)
            .map(|i| (i as u64, bag(8, &[&[(5, 1.0 + i as f64)]])))
            .collect();
        let index = build_index(8, docs, 64).unwrap();
        let list = index.list(5).unwrap();
        let sizes: Vec<usize> = list.blocks().iter().map(|b| b.postings().len()).collect();
        assert_eq!(sizes, vec![64, 64, 2]);
        assert!(index.verify().is_empty());
    }

    #[test]
    fn witness_property_on_random_corpus() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(40);
        let h = 32u32;
        let docs: Vec<(u64, TokenBag)> = (0..50)
            .map(|i| {
                let n_tokens = rng.gen_range(1..5);
                let tokens: Vec<SparseVector> = (0..n_tokens)
                    .map(|_| {
                        let mut pairs = Vec::new();
                        for u in 0..h {
                            if rng.gen_bool(0.2) {
                                pairs.push((u, rng.gen_range(0.1..4.0)));
                            }
                        }
                        if pairs.is_empty() {
                            pairs.push((0, 1.0));
                        }
                        SparseVector::from_pairs(h, pairs).unwrap()
                    })
                    .collect();
                (i as u64, TokenBag::new(tokens, None).unwrap())
            })
            .collect();
        let index = build_index(h, docs.clone(), 8).unwrap();
        // Brute-force witness: every posting equals the max stored token value.
        for (doc_id, bag) in &docs {
            for u in 0..h {
                let expected = bag
                    .vectors()
                    .iter()
                    .flat_map(|t| t.entries())
                    .filter(|&(id, _)| id == u)
                    .map(|(_, v)| v as f32)
                    .fold(f32::NEG_INFINITY, f32::max);
                let posting = index
                    .list(u)
                    .and_then(|l| l.postings().find(|p| p.doc_id == *doc_id).map(|p| p.mu));
                if expected.is_finite() {
                    assert_eq!(posting, Some(expected));
                } else {
                    assert_eq!(posting, None);
                }
            }
        }
        assert!(index.verify().is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let docs = vec![(3, bag(8, &[&[(0, 1.0)]])), (3, bag(8, &[&[(1, 1.0)]]))];
        assert!(build_index(8, docs, 64).is_err());
    }

    #[test]
    fn append_matches_single_doc_build() {
        let b = bag(8, &[&[(1, 2.0), (4, 0.5)]]);
        let built = build_index(8, vec![(0, b.clone())], 64).unwrap();
        let mut appended = InvertedIndex::new(8, 64).unwrap();
        appended.append_doc(0, &b).unwrap();
        assert_eq!(built.lists, appended.lists);
        assert_eq!(built.store.docs(), appended.store.docs());
    }

    #[test]
    fn append_requires_increasing_ids() {
        let mut index = InvertedIndex::new(8, 64).unwrap();
        index.append_doc(5, &bag(8, &[&[(0, 1.0)]])).unwrap();
        match index.append_doc(5, &bag(8, &[&[(0, 1.0)]])) {
            Err(Error::AppendOrderViolation { last: 5, got: 5 }) => {}
            other => panic!("expected append-order violation, got {other:?}"),
        }
    }

    #[test]
    fn empty_code_doc_is_stored_without_postings() {
        let empty = TokenBag::new(vec![SparseVector::empty(8)], None).unwrap();
        let mut index = InvertedIndex::new(8, 64).unwrap();
        index.append_doc(0, &empty).unwrap();
        assert_eq!(index.doc_count(), 1);
        assert_eq!(index.lists.len(), 0);
        assert!(index.verify().is_empty());
    }

    #[test]
    fn stats_on_empty_index_are_zero() {
        let index = InvertedIndex::new(8, 64).unwrap();
        let stats = index.stats();
        assert_eq!(stats.doc_count, 0);
        assert_eq!(stats.nonempty_lists, 0);
        assert_eq!(stats.mean_posting_length, 0.0);
        assert_eq!(stats.block_count, 0);
    }

    #[test]
    fn stats_mean_length_matches_recount() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let h = 16u32;
        let docs: Vec<(u64, TokenBag)> = (0..30)
            .map(|i| {
                let mut pairs = Vec::new();
                for u in 0..h {
                    if rng.gen_bool(0.3) {
                        pairs.push((u, rng.gen_range(0.1..2.0)));
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
        let stats = index.stats();
        let total: u64 = index.lists().map(|l| l.len() as u64).sum();
        let nonempty = index.lists().filter(|l| !l.is_empty()).count() as u64;
        assert_eq!(stats.total_postings, total);
        assert_eq!(stats.mean_posting_length, total as f64 / nonempty as f64);
        assert_eq!(stats.doc_count, 30);
    }
}
