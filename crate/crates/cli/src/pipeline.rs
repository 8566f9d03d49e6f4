//! Shared pipeline steps: config decoding, corpus encoding, training-pair
//! assembly, and the relevance metric used by bench and verify.

use std::collections::HashMap;
use std::path::Path;

use ssr_core::config::KvConfig;
use ssr_core::corpus::Corpus;
use ssr_core::retrieval::{adaptive_query_k, AdaptiveTable};
use ssr_core::sae::{SaeModel, SimMode, TrainConfig, TrainingPair};
use ssr_core::sparse::{DenseTokenBag, SparseVector, TokenBag};
use ssr_core::synth::SynthConfig;
use ssr_core::{Error, Result};

pub fn synth_config_from(cfg: &KvConfig) -> Result<SynthConfig> {
    let defaults = SynthConfig::default();
    let seed = cfg.require_u64("seed")?;
    Ok(SynthConfig {
        d: cfg.get_usize("d")?.unwrap_or(defaults.d),
        topics: cfg.get_usize("topics")?.unwrap_or(defaults.topics),
        docs: cfg.get_u64("docs")?.unwrap_or(defaults.docs),
        queries: cfg.get_u64("queries")?.unwrap_or(defaults.queries),
        doc_tokens: (
            cfg.get_usize("doc_tokens_min")?
                .unwrap_or(defaults.doc_tokens.0),
            cfg.get_usize("doc_tokens_max")?
                .unwrap_or(defaults.doc_tokens.1),
        ),
        query_tokens: (
            cfg.get_usize("query_tokens_min")?
                .unwrap_or(defaults.query_tokens.0),
            cfg.get_usize("query_tokens_max")?
                .unwrap_or(defaults.query_tokens.1),
        ),
        noise: cfg.get_f64("noise")?.unwrap_or(defaults.noise),
        mean_scale: cfg.get_f64("mean_scale")?.unwrap_or(defaults.mean_scale),
        orthogonal_topics: cfg
            .get_bool("orthogonal_topics")?
            .unwrap_or(defaults.orthogonal_topics),
        seed,
    })
}

pub fn train_config_from(cfg: &KvConfig) -> Result<TrainConfig> {
    let defaults = TrainConfig::default();
    let seed = cfg.require_u64("seed")?;
    let supervised_mode = match cfg.raw("supervised_mode") {
        None | Some("token") => SimMode::Token,
        Some("cls") => SimMode::Cls,
        Some(other) => {
            return Err(Error::invalid_config(format!(
                "supervised_mode must be token or cls, got {other:?}"
            )))
        }
    };
    Ok(TrainConfig {
        k: cfg.get_usize("k")?.unwrap_or(defaults.k),
        k_aux: cfg.get_usize("k_aux")?.unwrap_or(defaults.k_aux),
        alpha: cfg.get_f64("alpha")?.unwrap_or(defaults.alpha),
        beta: cfg.get_f64("beta")?.unwrap_or(defaults.beta),
        gamma: cfg.get_f64("gamma")?.unwrap_or(defaults.gamma),
        learning_rate: cfg
            .get_f64("learning_rate")?
            .unwrap_or(defaults.learning_rate),
        batch_size: cfg.get_usize("batch_size")?.unwrap_or(defaults.batch_size),
        epochs: cfg.get_usize("epochs")?.unwrap_or(defaults.epochs),
        warmup_steps: cfg
            .get_usize("warmup_steps")?
            .unwrap_or(defaults.warmup_steps),
        dead_threshold: cfg
            .get_u64("dead_threshold")?
            .unwrap_or(defaults.dead_threshold),
        temperature: cfg.get_f64("temperature")?.unwrap_or(defaults.temperature),
        seed,
        supervised_mode,
    })
}

pub struct EncodeOptions<'a> {
    pub k: usize,
    /// Treat the first token as the global vector, encoded by `cls_model`.
    pub cls: bool,
    pub cls_model: Option<&'a SaeModel>,
}

/// Encodes every document of a corpus into sparse token bags.
pub fn encode_corpus(
    model: &SaeModel,
    corpus: &Corpus,
    opts: &EncodeOptions,
) -> Result<Vec<(u64, TokenBag)>> {
    corpus
        .docs
        .iter()
        .map(|(id, bag)| Ok((*id, encode_bag(model, bag, opts)?)))
        .collect()
}

pub fn encode_bag(model: &SaeModel, bag: &DenseTokenBag, opts: &EncodeOptions) -> Result<TokenBag> {
    let vectors: Vec<SparseVector> = bag
        .vectors()
        .iter()
        .map(|x| model.encode(x, opts.k))
        .collect::<Result<_>>()?;
    let global = if opts.cls {
        let cls_model = opts.cls_model.unwrap_or(model);
        Some(cls_model.encode(&bag.vectors()[0], opts.k)?)
    } else {
        None
    };
    TokenBag::new(vectors, global)
}

/// Query sparsity under the optional adaptive table.
pub fn query_sparsity(default_k: usize, adaptive: Option<&AdaptiveTable>, tokens: usize) -> usize {
    match adaptive {
        Some(table) => adaptive_query_k(tokens, table),
        None => default_k,
    }
}

/// Builds training pairs. With queries and labels: each query pairs with its
/// first relevant document plus `negatives` seeded non-relevant documents.
/// Without: each document serves as its own query and positive (in-batch
/// negatives supply the contrast).
pub fn build_training_pairs(
    corpus: &Corpus,
    queries: Option<&Corpus>,
    labels: Option<&[(u64, u64)]>,
    negatives: usize,
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    match (queries, labels) {
        (Some(queries), Some(labels)) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x7061_6972);
            let by_id: HashMap<u64, &DenseTokenBag> =
                corpus.docs.iter().map(|(id, bag)| (*id, bag)).collect();
            let mut relevant: HashMap<u64, Vec<u64>> = HashMap::new();
            for (q, d) in labels {
                relevant.entry(*q).or_default().push(*d);
            }
            let all_ids: Vec<u64> = corpus.docs.iter().map(|(id, _)| *id).collect();
            let mut pairs = Vec::new();
            for (query_id, query_bag) in &queries.docs {
                let Some(rel) = relevant.get(query_id) else {
                    continue;
                };
                let Some(positive) = rel.first().and_then(|d| by_id.get(d)) else {
                    continue;
                };
                let rel_set: std::collections::HashSet<u64> = rel.iter().copied().collect();
                let mut negs = Vec::with_capacity(negatives);
                let mut candidates: Vec<u64> = all_ids
                    .iter()
                    .copied()
                    .filter(|id| !rel_set.contains(id))
                    .collect();
                candidates.shuffle(&mut rng);
                for id in candidates.into_iter().take(negatives) {
                    negs.push(by_id[&id].clone());
                }
                pairs.push(TrainingPair {
                    query: query_bag.clone(),
                    positive: (*positive).clone(),
                    negatives: negs,
                });
            }
            if pairs.is_empty() {
                return Err(Error::invalid_argument(
                    "no training pairs: labels reference no corpus documents",
                ));
            }
            Ok(pairs)
        }
        (None, None) => Ok(corpus
            .docs
            .iter()
            .map(|(_, bag)| TrainingPair {
                query: bag.clone(),
                positive: bag.clone(),
                negatives: Vec::new(),
            })
            .collect()),
        _ => Err(Error::invalid_config(
            "supervised training needs both --queries and --labels",
        )),
    }
}

pub fn load_model_arg(path: &Path) -> Result<SaeModel> {
    ssr_core::sae::load_model(path)
}

pub fn load_corpus_arg(path: &Path) -> Result<Corpus> {
    ssr_core::corpus::read_corpus(path)
}
