use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ssr_core::index::{build_index, save_index};
use ssr_core::Result;

use crate::manifest::Manifest;
use crate::pipeline::{encode_corpus, load_corpus_arg, load_model_arg, EncodeOptions};

#[allow(clippy::too_many_arguments)]
pub fn run(
    corpus_path: &Path,
    model_path: &Path,
    out: &Path,
    k: Option<usize>,
    block_size: u32,
    cls: bool,
    cls_model_path: Option<&Path>,
) -> Result<ExitCode> {
    let model = load_model_arg(model_path)?;
    let cls_model = cls_model_path.map(load_model_arg).transpose()?;
    let corpus = load_corpus_arg(corpus_path)?;
    let k = k.unwrap_or_else(|| model.sparsity());

    let mut manifest = Manifest::new("index");
    manifest.config("k", k);
    manifest.config("block_size", block_size);
    manifest.config("cls", cls);
    manifest.input(corpus_path)?;
    manifest.input(model_path)?;
    if let Some(p) = cls_model_path {
        manifest.input(p)?;
    }

    let encode = Instant::now();
    let encoded = encode_corpus(
        &model,
        &corpus,
        &EncodeOptions {
            k,
            cls,
            cls_model: cls_model.as_ref(),
        },
    )?;
    let encode_ms = encode.elapsed().as_millis();
    manifest.stage("encode", encode_ms);

    let build = Instant::now();
    let index = build_index(model.hidden_dim() as u32, encoded, block_size)?;
    let build_ms = build.elapsed().as_millis();
    manifest.stage("build_lists", build_ms);

    let persist = Instant::now();
    save_index(&index, out)?;
    let persist_ms = persist.elapsed().as_millis();
    manifest.stage("write", persist_ms);
    manifest.output(out)?;
    manifest.write(out)?;

    let stats = index.stats();
    println!(
        "indexed {} docs: {} lists, {} postings (mean length {:.2}), {} blocks, {} bytes",
        stats.doc_count,
        stats.nonempty_lists,
        stats.total_postings,
        stats.mean_posting_length,
        stats.block_count,
        stats.bytes
    );
    println!("stage timings: encode={encode_ms}ms build={build_ms}ms write={persist_ms}ms");
    Ok(ExitCode::SUCCESS)
}
