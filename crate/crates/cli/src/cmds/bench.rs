use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ssr_core::index::load_index;
use ssr_core::retrieval::{retrieve_exact, retrieve_ssrpp, RetrievalConfig, RetrievalMode};
use ssr_core::sparse::TokenBag;
use ssr_core::Result;

use crate::pipeline::{encode_bag, load_corpus_arg, load_model_arg, EncodeOptions};

struct ModeStats {
    latencies_ns: Vec<u64>,
    candidates: u64,
    postings: u64,
    blocks_skipped: u64,
    dots: u64,
}

impl ModeStats {
    fn new() -> ModeStats {
        ModeStats {
            latencies_ns: Vec::new(),
            candidates: 0,
            postings: 0,
            blocks_skipped: 0,
            dots: 0,
        }
    }

    fn record(&mut self, nanos: u64, trace: &ssr_core::retrieval::RetrievalTrace) {
        self.latencies_ns.push(nanos);
        self.candidates += trace.candidates_examined;
        self.postings += trace.postings_scanned;
        self.blocks_skipped += trace.blocks_skipped;
        self.dots += trace.refinement_dots;
    }

    fn report(&mut self, label: &str) {
        let n = self.latencies_ns.len().max(1) as f64;
        self.latencies_ns.sort_unstable();
        let pct = |p: f64| -> f64 {
            if self.latencies_ns.is_empty() {
                return 0.0;
            }
            let idx = ((self.latencies_ns.len() - 1) as f64 * p).round() as usize;
            self.latencies_ns[idx] as f64 / 1000.0
        };
        let mean_us: f64 = self.latencies_ns.iter().sum::<u64>() as f64 / n / 1000.0;
        println!(
            "{label}\tmean={mean_us:.1}us\tp50={:.1}us\tp95={:.1}us\tcandidates={:.1}\tpostings={:.1}\tblocks_skipped={:.1}\trefine_dots={:.1}",
            pct(0.50),
            pct(0.95),
            self.candidates as f64 / n,
            self.postings as f64 / n,
            self.blocks_skipped as f64 / n,
            self.dots as f64 / n,
        );
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    index_path: &Path,
    queries_path: &Path,
    model_path: &Path,
    k: Option<usize>,
    kcoarse: usize,
    cap: usize,
    topk: usize,
    warmup: usize,
) -> Result<ExitCode> {
    let model = load_model_arg(model_path)?;
    let index = load_index(index_path)?;
    let queries = load_corpus_arg(queries_path)?;
    let k = k.unwrap_or_else(|| model.sparsity());
    let cfg = RetrievalConfig {
        k,
        k_coarse: kcoarse.min(k),
        candidate_cap: cap,
        top_k: topk,
        adaptive: None,
        cls_weight: 1.0,
        mode: RetrievalMode::CoarseFine,
        block_skipping: true,
    };

    let encoded: Vec<(u64, TokenBag)> = queries
        .docs
        .iter()
        .map(|(id, bag)| {
            Ok((
                *id,
                encode_bag(
                    &model,
                    bag,
                    &EncodeOptions {
                        k,
                        cls: false,
                        cls_model: None,
                    },
                )?,
            ))
        })
        .collect::<Result<_>>()?;

    if encoded.is_empty() {
        println!("no queries; nothing to benchmark");
        return Ok(ExitCode::SUCCESS);
    }

    for i in 0..warmup {
        let (_, bag) = &encoded[i % encoded.len()];
        let _ = retrieve_ssrpp(&index, bag, &cfg)?;
        let _ = retrieve_exact(&index, bag, &cfg)?;
    }

    let mut exact = ModeStats::new();
    let mut ssrpp = ModeStats::new();
    for (_, bag) in &encoded {
        let t0 = Instant::now();
        let a = retrieve_exact(&index, bag, &cfg)?;
        exact.record(t0.elapsed().as_nanos() as u64, &a.trace);
        let t1 = Instant::now();
        let b = retrieve_ssrpp(&index, bag, &cfg)?;
        ssrpp.record(t1.elapsed().as_nanos() as u64, &b.trace);
    }
    println!(
        "benchmark: {} queries (warmup {warmup}), k={k}, kcoarse={}, cap={cap}, topk={topk}",
        encoded.len(),
        cfg.k_coarse
    );
    println!("mode\tlatency\t\t\tper-query means");
    exact.report("exact");
    ssrpp.report("ssrpp");
    Ok(ExitCode::SUCCESS)
}
