//! Operator CLI wiring the pipeline end to end: synthetic data generation,
//! SAE training, corpus encoding and indexing, append-only updates, querying,
//! benchmarking, and artifact verification.
//!
//! Exit codes: 0 success, 1 verification or contract failure, 2 usage error,
//! 3 I/O or corrupt-file error.

mod cmds;
mod manifest;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ssr", version, about = "Sparse multi-vector retrieval engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Ssrpp,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-topic synthetic corpus, queries, and labels.
    Gen {
        /// key=value config file (seed required).
        #[arg(long)]
        config: PathBuf,
        /// Output corpus embedding file (SSRE).
        #[arg(long)]
        out: PathBuf,
        /// Output query embedding file (SSRE).
        #[arg(long)]
        queries_out: PathBuf,
        /// Output relevance labels (query_id<TAB>doc_id lines).
        #[arg(long)]
        labels_out: PathBuf,
    },
    /// Train a sparse autoencoder on a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// key=value config file (seed and h required).
        #[arg(long)]
        config: PathBuf,
        /// Output model file (SSAE).
        #[arg(long)]
        out: PathBuf,
        /// Optional query embeddings for supervised pairs.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Relevance labels pairing queries with positive docs.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Encode a corpus and build the inverted index.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sparsity for document encoding; defaults to the model's K.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 64)]
        block_size: u32,
        /// Store each document's first token as its global code.
        #[arg(long)]
        cls: bool,
        /// Separate model for global codes (defaults to --model).
        #[arg(long)]
        cls_model: Option<PathBuf>,
    },
    /// Append new documents to an existing index (ids must increase).
    Append {
        #[arg(long)]
        index: PathBuf,
        /// Corpus delta (SSRE) holding only the new documents.
        #[arg(long)]
        delta: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        cls: bool,
        #[arg(long)]
        cls_model: Option<PathBuf>,
    },
    /// Run queries against an index.
    Query {
        #[arg(long)]
        index: PathBuf,
        /// Query embeddings (SSRE).
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Ssrpp)]
        mode: ModeArg,
        /// Query sparsity; defaults to the model's K.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 4)]
        kcoarse: usize,
        /// Candidate cap for the coarse stage.
        #[arg(long, default_value_t = 2000)]
        cap: usize,
        #[arg(long, default_value_t = 10)]
        topk: usize,
        /// Choose query sparsity from the query length table.
        #[arg(long)]
        adaptive: bool,
        /// Weight of the global-code cosine term.
        #[arg(long, default_value_t = 1.0)]
        cls_weight: f64,
        /// Fuse global-code cosine scores (requires ssrpp mode).
        #[arg(long)]
        cls: bool,
        #[arg(long)]
        cls_model: Option<PathBuf>,
        /// Disable block skipping in the coarse stage.
        #[arg(long)]
        no_skip: bool,
        /// Ranked results (query_id, rank, doc_id, score).
        #[arg(long)]
        out: PathBuf,
        /// Per-query trace counters.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Paired latency/work benchmark of exact vs ssrpp retrieval.
    Bench {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 4)]
        kcoarse: usize,
        #[arg(long, default_value_t = 2000)]
        cap: usize,
        #[arg(long, default_value_t = 10)]
        topk: usize,
        /// Warmup queries before timing starts.
        #[arg(long, default_value_t = 100)]
        warmup: usize,
    },
    /// Verify invariants of the supplied artifacts.
    Verify {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Seed for sampled checks.
        #[arg(long)]
        seed: u64,
        /// Write the distortion report rows as CSV (needs model + corpus).
        #[arg(long)]
        report_csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen {
            config,
            out,
            queries_out,
            labels_out,
        } => cmds::gen::run(&config, &out, &queries_out, &labels_out),
        Command::Train {
            corpus,
            config,
            out,
            queries,
            labels,
        } => cmds::train::run(
            &corpus,
            &config,
            &out,
            queries.as_deref(),
            labels.as_deref(),
        ),
        Command::Index {
            corpus,
            model,
            out,
            k,
            block_size,
            cls,
            cls_model,
        } => cmds::index::run(
            &corpus,
            &model,
            &out,
            k,
            block_size,
            cls,
            cls_model.as_deref(),
        ),
        Command::Append {
            index,
            delta,
            model,
            out,
            k,
            cls,
            cls_model,
        } => cmds::append::run(&index, &delta, &model, &out, k, cls, cls_model.as_deref()),
        Command::Query {
            index,
            queries,
            model,
            mode,
            k,
            kcoarse,
            cap,
            topk,
            adaptive,
            cls_weight,
            cls,
            cls_model,
            no_skip,
            out,
            trace_out,
        } => cmds::query::run(cmds::query::QueryArgs {
            index: &index,
            queries: &queries,
            model: &model,
            mode,
            k,
            kcoarse,
            cap,
            topk,
            adaptive,
            cls_weight,
            cls,
            cls_model: cls_model.as_deref(),
            no_skip,
            out: &out,
            trace_out: trace_out.as_deref(),
        }),
        Command::Bench {
            index,
            queries,
            model,
            k,
            kcoarse,
            cap,
            topk,
            warmup,
        } => cmds::bench::run(&index, &queries, &model, k, kcoarse, cap, topk, warmup),
        Command::Verify {
            model,
            index,
            corpus,
            seed,
            report_csv,
        } => cmds::verify::run(
            model.as_deref(),
            index.as_deref(),
            corpus.as_deref(),
            seed,
            report_csv.as_deref(),
        ),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

fn exit_code_for(err: &ssr_core::Error) -> ExitCode {
    use ssr_core::Error;
    match err {
        Error::Io(_) | Error::CorruptFile { .. } => ExitCode::from(3),
        Error::InvalidConfig(_) => ExitCode::from(2),
        Error::InvalidArgument(_)
        | Error::TrainingDiverged { .. }
        | Error::AppendOrderViolation { .. } => ExitCode::from(1),
    }
}
