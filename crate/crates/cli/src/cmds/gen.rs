use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ssr_core::config::KvConfig;
use ssr_core::corpus::{write_corpus, write_labels, Corpus};
use ssr_core::synth;
use ssr_core::Result;

use crate::manifest::Manifest;
use crate::pipeline::synth_config_from;

pub fn run(config: &Path, out: &Path, queries_out: &Path, labels_out: &Path) -> Result<ExitCode> {
    let kv = KvConfig::load(config)?;
    let synth_config = synth_config_from(&kv)?;
    let mut manifest = Manifest::new("gen");
    manifest.seed(synth_config.seed);
    manifest.config("d", synth_config.d);
    manifest.config("topics", synth_config.topics);
    manifest.config("docs", synth_config.docs);
    manifest.config("queries", synth_config.queries);
    manifest.config("noise", synth_config.noise);
    manifest.input(config)?;

    let start = Instant::now();
    let output = synth::generate(&synth_config)?;
    manifest.stage("generate", start.elapsed().as_millis());

    let write = Instant::now();
    write_corpus(
        &Corpus {
            d: synth_config.d as u32,
            docs: output.docs,
        },
        out,
    )?;
    write_corpus(
        &Corpus {
            d: synth_config.d as u32,
            docs: output.queries,
        },
        queries_out,
    )?;
    write_labels(&output.labels, labels_out)?;
    manifest.stage("write", write.elapsed().as_millis());
    manifest.output(out)?;
    manifest.output(queries_out)?;
    manifest.output(labels_out)?;
    manifest.write(out)?;
    println!(
        "generated {} docs, {} queries, {} labels (d={}, topics={})",
        synth_config.docs,
        synth_config.queries,
        std::fs::read_to_string(labels_out)?.lines().count(),
        synth_config.d,
        synth_config.topics
    );
    Ok(ExitCode::SUCCESS)
}
