use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ssr_core::index::load_index;
use ssr_core::retrieval::{
    retrieve_exact, retrieve_ssrpp, retrieve_with_cls, AdaptiveTable, RetrievalConfig,
    RetrievalMode, RetrievalOutput,
};
use ssr_core::{Error, Result};

use crate::manifest::Manifest;
use crate::pipeline::{encode_bag, load_corpus_arg, load_model_arg, query_sparsity, EncodeOptions};
use crate::ModeArg;

pub struct QueryArgs<'a> {
    pub index: &'a Path,
    pub queries: &'a Path,
    pub model: &'a Path,
    pub mode: ModeArg,
    pub k: Option<usize>,
    pub kcoarse: usize,
    pub cap: usize,
    pub topk: usize,
    pub adaptive: bool,
    pub cls_weight: f64,
    pub cls: bool,
    pub cls_model: Option<&'a Path>,
    pub no_skip: bool,
    pub out: &'a Path,
    pub trace_out: Option<&'a Path>,
}

pub fn run(args: QueryArgs) -> Result<ExitCode> {
    if args.cls && args.mode == ModeArg::Exact {
        return Err(Error::invalid_config(
            "--cls fuses global scores over ssrpp candidates; use --mode ssrpp",
        ));
    }
    let model = load_model_arg(args.model)?;
    let cls_model = args.cls_model.map(load_model_arg).transpose()?;
    let index = load_index(args.index)?;
    let queries = load_corpus_arg(args.queries)?;
    let base_k = args.k.unwrap_or_else(|| model.sparsity());
    let table = args.adaptive.then(AdaptiveTable::default);

    let mut manifest = Manifest::new("query");
    manifest.config(
        "mode",
        match args.mode {
            ModeArg::Exact => "exact",
            ModeArg::Ssrpp => "ssrpp",
        },
    );
    manifest.config("k", base_k);
    manifest.config("kcoarse", args.kcoarse);
    manifest.config("cap", args.cap);
    manifest.config("topk", args.topk);
    manifest.config("adaptive", args.adaptive);
    manifest.input(args.index)?;
    manifest.input(args.queries)?;
    manifest.input(args.model)?;

    let start = Instant::now();
    let mut results = String::new();
    let mut traces = String::from(
        "query_id\tcandidates\tpostings_scanned\tblocks_scanned\tblocks_skipped\trefinement_dots\tempty_query\n",
    );
    for (query_id, dense_bag) in &queries.docs {
        let k = query_sparsity(base_k, table.as_ref(), dense_bag.len());
        let cfg = RetrievalConfig {
            k,
            k_coarse: args.kcoarse.min(k),
            candidate_cap: args.cap,
            top_k: args.topk,
            adaptive: table.clone(),
            cls_weight: args.cls_weight,
            mode: match args.mode {
                ModeArg::Exact => RetrievalMode::Exact,
                ModeArg::Ssrpp => RetrievalMode::CoarseFine,
            },
            block_skipping: !args.no_skip,
        };
        let encoded = encode_bag(
            &model,
            dense_bag,
            &EncodeOptions {
                k,
                cls: args.cls,
                cls_model: cls_model.as_ref(),
            },
        )?;
        let output: RetrievalOutput = match (args.mode, args.cls) {
            (ModeArg::Exact, _) => retrieve_exact(&index, &encoded, &cfg)?,
            (ModeArg::Ssrpp, false) => retrieve_ssrpp(&index, &encoded, &cfg)?,
            (ModeArg::Ssrpp, true) => retrieve_with_cls(&index, &encoded, &cfg)?,
        };
        for (rank, doc) in output.results.iter().enumerate() {
            let _ = writeln!(
                results,
                "{query_id}\t{}\t{}\t{:.6}",
                rank + 1,
                doc.doc_id,
                doc.score
            );
        }
        let t = &output.trace;
        let _ = writeln!(
            traces,
            "{query_id}\t{}\t{}\t{}\t{}\t{}\t{}",
            t.candidates_examined,
            t.postings_scanned,
            t.blocks_scanned,
            t.blocks_skipped,
            t.refinement_dots,
            t.empty_query
        );
    }
    manifest.stage("retrieve", start.elapsed().as_millis());

    std::fs::write(args.out, results)?;
    manifest.output(args.out)?;
    if let Some(trace_path) = args.trace_out {
        std::fs::write(trace_path, traces)?;
        manifest.output(trace_path)?;
    }
    manifest.write(args.out)?;
    println!(
        "ran {} queries -> {}",
        queries.docs.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}
