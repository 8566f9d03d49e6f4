use std::path::Path;
use std::process::ExitCode;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssr_core::analysis::DistortionReport;
use ssr_core::corpus::Corpus;
use ssr_core::index::{build_index, load_index, save_index, InvertedIndex};
use ssr_core::retrieval::{
    coarse_score_all, oracle_rank, retrieve_exact, RetrievalConfig, RetrievalMode,
};
use ssr_core::sae::{load_model, save_model, SaeModel};
use ssr_core::sparse::{DenseTokenBag, DenseVector};
use ssr_core::{Error, Result};

use crate::pipeline::{encode_corpus, load_corpus_arg, EncodeOptions};

struct Checker {
    failures: usize,
}

impl Checker {
    fn report(&mut self, name: &str, outcome: std::result::Result<(), String>) {
        match outcome {
            Ok(()) => println!("ok: {name}"),
            Err(detail) => {
                println!("FAIL: {name}: {detail}");
                self.failures += 1;
            }
        }
    }
}

pub fn run(
    model_path: Option<&Path>,
    index_path: Option<&Path>,
    corpus_path: Option<&Path>,
    seed: u64,
    report_csv: Option<&Path>,
) -> Result<ExitCode> {
    if model_path.is_none() && index_path.is_none() && corpus_path.is_none() {
        return Err(Error::invalid_config(
            "verify needs at least one of --model, --index, --corpus",
        ));
    }
    let mut checker = Checker { failures: 0 };
    let model = model_path.map(load_model).transpose()?;
    let index = index_path.map(load_index).transpose()?;
    let corpus = corpus_path.map(load_corpus_arg).transpose()?;

    if let Some(model) = &model {
        check_model(&mut checker, model, model_path.unwrap())?;
    }
    if let Some(index) = &index {
        check_index(&mut checker, index, seed);
    }
    if let (Some(model), Some(corpus)) = (&model, &corpus) {
        check_distortion(&mut checker, model, corpus, seed, report_csv)?;
        if let Some(index) = &index {
            check_append_rebuild(&mut checker, model, corpus, index, seed)?;
        }
    }

    if checker.failures == 0 {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{} check(s) failed", checker.failures);
        Ok(ExitCode::from(1))
    }
}

fn check_model(checker: &mut Checker, model: &SaeModel, path: &Path) -> Result<()> {
    // Round trip reproduces the file byte for byte.
    let dir = std::env::temp_dir();
    let tmp = dir.join(format!("ssr-verify-{}.ssae", std::process::id()));
    save_model(model, &tmp)?;
    let original = std::fs::read(path)?;
    let rewritten = std::fs::read(&tmp)?;
    let _ = std::fs::remove_file(&tmp);
    checker.report(
        "model round trip is byte-identical",
        if original == rewritten {
            Ok(())
        } else {
            Err("reserialized bytes differ".to_string())
        },
    );

    let zero = model
        .decode(&ssr_core::sparse::SparseVector::empty(
            model.hidden_dim() as u32
        ))
        .map_err(|e| e.to_string());
    checker.report(
        "decode of empty code equals pre-bias",
        zero.and_then(|x| {
            if x.values() == model.b_pre() {
                Ok(())
            } else {
                Err("decode(empty) != b_pre".to_string())
            }
        }),
    );
    Ok(())
}

fn check_index(checker: &mut Checker, index: &InvertedIndex, seed: u64) {
    let problems = index.verify();
    checker.report(
        "index witness, block-bound, and ordering invariants",
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        },
    );

    // Oracle equivalence and pruning soundness on queries sampled from the
    // stored documents themselves.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let doc_ids: Vec<u64> = index.store().docs().iter().map(|d| d.doc_id).collect();
    if doc_ids.is_empty() {
        return;
    }
    let samples: Vec<u64> = doc_ids
        .choose_multiple(&mut rng, doc_ids.len().min(20))
        .copied()
        .collect();
    let cfg = RetrievalConfig {
        k: 64,
        k_coarse: 4,
        candidate_cap: (index.doc_count() as usize).max(10),
        top_k: 10,
        adaptive: None,
        cls_weight: 1.0,
        mode: RetrievalMode::Exact,
        block_skipping: true,
    };
    let mut oracle_ok = Ok(());
    let mut skip_ok = Ok(());
    for doc_id in samples {
        let query = index
            .store()
            .token_bag(doc_id, index.h())
            .expect("sampled ids exist");
        match (
            retrieve_exact(index, &query, &cfg),
            oracle_rank(index, &query, cfg.top_k),
        ) {
            (Ok(got), Ok(want)) => {
                let g: Vec<(u64, f64)> = got.results.iter().map(|r| (r.doc_id, r.score)).collect();
                let w: Vec<(u64, f64)> = want.iter().map(|r| (r.doc_id, r.score)).collect();
                if g != w {
                    oracle_ok = Err(format!("query from doc {doc_id}: {g:?} != {w:?}"));
                }
            }
            (Err(e), _) | (_, Err(e)) => oracle_ok = Err(e.to_string()),
        }
        let mut no_skip = cfg.clone();
        no_skip.block_skipping = false;
        match (
            coarse_score_all(index, &query, &cfg),
            coarse_score_all(index, &query, &no_skip),
        ) {
            (Ok((a, _)), Ok((b, _))) => {
                let ga: Vec<u64> = a.iter().map(|s| s.doc_id).collect();
                let gb: Vec<u64> = b.iter().map(|s| s.doc_id).collect();
                if ga != gb {
                    skip_ok = Err(format!("query from doc {doc_id}: candidate sets differ"));
                }
            }
            (Err(e), _) | (_, Err(e)) => skip_ok = Err(e.to_string()),
        }
    }
    checker.report("exact retrieval equals the brute-force oracle", oracle_ok);
    checker.report("coarse stage with and without skipping agrees", skip_ok);
}

fn check_distortion(
    checker: &mut Checker,
    model: &SaeModel,
    corpus: &Corpus,
    seed: u64,
    report_csv: Option<&Path>,
) -> Result<()> {
    if corpus.d as usize != model.input_dim() {
        checker.report(
            "corpus dimension matches the model",
            Err(format!(
                "corpus d={} but model d={}",
                corpus.d,
                model.input_dim()
            )),
        );
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x64697374);
    let mut tokens: Vec<DenseVector> = Vec::new();
    for (_, bag) in &corpus.docs {
        tokens.extend(bag.vectors().iter().cloned());
    }
    if tokens.len() < 2 {
        return Ok(());
    }
    let k = model.sparsity();
    let pairs: Vec<(DenseVector, DenseVector)> = (0..200.min(tokens.len() * (tokens.len() - 1)))
        .map(|_| {
            let a = tokens[rng.gen_range(0..tokens.len())].clone();
            let b = tokens[rng.gen_range(0..tokens.len())].clone();
            (a, b)
        })
        .collect();
    let bags: Vec<(DenseTokenBag, DenseTokenBag)> = (0..50.min(corpus.docs.len()))
        .map(|_| {
            let a = corpus.docs[rng.gen_range(0..corpus.docs.len())].1.clone();
            let b = corpus.docs[rng.gen_range(0..corpus.docs.len())].1.clone();
            (a, b)
        })
        .collect();
    let report = DistortionReport::build(model, &pairs, &bags, k)?;
    print!("{}", report.to_text());
    if let Some(csv_path) = report_csv {
        std::fs::write(csv_path, report.to_csv())?;
        println!("distortion rows -> {}", csv_path.display());
    }
    checker.report(
        "token and late-interaction distortion bounds",
        if report.all_satisfied() {
            Ok(())
        } else {
            Err(format!("{} violation(s)", report.violations()))
        },
    );
    Ok(())
}

fn check_append_rebuild(
    checker: &mut Checker,
    model: &SaeModel,
    corpus: &Corpus,
    index: &InvertedIndex,
    seed: u64,
) -> Result<()> {
    if corpus.d as usize != model.input_dim() {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x73706c69);
    let opts = EncodeOptions {
        k: model.sparsity(),
        cls: false,
        cls_model: None,
    };
    let encoded = encode_corpus(model, corpus, &opts)?;
    let split = rng.gen_range(0..=encoded.len());
    let batch = build_index(
        model.hidden_dim() as u32,
        encoded.clone(),
        index.block_size(),
    )?;
    let mut incremental = build_index(
        model.hidden_dim() as u32,
        encoded[..split].to_vec(),
        index.block_size(),
    )?;
    for (id, bag) in &encoded[split..] {
        incremental.append_doc(*id, bag)?;
    }

    let dir = std::env::temp_dir();
    let p1 = dir.join(format!("ssr-verify-batch-{}.ssri", std::process::id()));
    let p2 = dir.join(format!("ssr-verify-incr-{}.ssri", std::process::id()));
    save_index(&batch, &p1)?;
    save_index(&incremental, &p2)?;
    let same = std::fs::read(&p1)? == std::fs::read(&p2)?;
    let _ = std::fs::remove_file(&p1);
    let _ = std::fs::remove_file(&p2);

    let mut outcome = if same {
        Ok(())
    } else {
        Err(format!("split at {split}: serialized indexes differ"))
    };
    if outcome.is_ok() {
        let cfg = RetrievalConfig {
            k: model.sparsity(),
            k_coarse: model.sparsity().min(4),
            candidate_cap: (encoded.len()).max(10),
            top_k: 10,
            adaptive: None,
            cls_weight: 1.0,
            mode: RetrievalMode::Exact,
            block_skipping: true,
        };
        for _ in 0..50.min(encoded.len()) {
            let (_, query) = &encoded[rng.gen_range(0..encoded.len())];
            let a = retrieve_exact(&batch, query, &cfg)?;
            let b = retrieve_exact(&incremental, query, &cfg)?;
            let ga: Vec<(u64, f64)> = a.results.iter().map(|r| (r.doc_id, r.score)).collect();
            let gb: Vec<(u64, f64)> = b.results.iter().map(|r| (r.doc_id, r.score)).collect();
            if ga != gb {
                outcome = Err(format!("split at {split}: query answers differ"));
                break;
            }
        }
    }
    checker.report("append-only updates equal a fresh rebuild", outcome);
    Ok(())
}
