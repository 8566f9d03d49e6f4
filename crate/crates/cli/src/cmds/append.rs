use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ssr_core::index::{load_index, save_index};
use ssr_core::Result;

use crate::manifest::Manifest;
use crate::pipeline::{encode_corpus, load_corpus_arg, load_model_arg, EncodeOptions};

pub fn run(
    index_path: &Path,
    delta_path: &Path,
    model_path: &Path,
    out: &Path,
    k: Option<usize>,
    cls: bool,
    cls_model_path: Option<&Path>,
) -> Result<ExitCode> {
    let model = load_model_arg(model_path)?;
    let cls_model = cls_model_path.map(load_model_arg).transpose()?;
    let delta = load_corpus_arg(delta_path)?;
    let mut index = load_index(index_path)?;
    let k = k.unwrap_or_else(|| model.sparsity());

    let mut manifest = Manifest::new("append");
    manifest.config("k", k);
    manifest.input(index_path)?;
    manifest.input(delta_path)?;
    manifest.input(model_path)?;

    let encode = Instant::now();
    let encoded = encode_corpus(
        &model,
        &delta,
        &EncodeOptions {
            k,
            cls,
            cls_model: cls_model.as_ref(),
        },
    )?;
    manifest.stage("encode", encode.elapsed().as_millis());

    let appended = encoded.len();
    let extend = Instant::now();
    for (doc_id, bag) in &encoded {
        index.append_doc(*doc_id, bag)?;
    }
    manifest.stage("append", extend.elapsed().as_millis());

    let persist = Instant::now();
    save_index(&index, out)?;
    manifest.stage("write", persist.elapsed().as_millis());
    manifest.output(out)?;
    manifest.write(out)?;
    println!(
        "appended {appended} docs -> {} ({} total)",
        out.display(),
        index.doc_count()
    );
    Ok(ExitCode::SUCCESS)
}
