use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ssr_core::config::KvConfig;
use ssr_core::corpus::read_labels;
use ssr_core::sae::{save_model, train, SaeModel};
use ssr_core::{Error, Result};

use crate::manifest::Manifest;
use crate::pipeline::{build_training_pairs, load_corpus_arg, train_config_from};

pub fn run(
    corpus_path: &Path,
    config: &Path,
    out: &Path,
    queries: Option<&Path>,
    labels: Option<&Path>,
) -> Result<ExitCode> {
    let kv = KvConfig::load(config)?;
    let train_config = train_config_from(&kv)?;
    let h = kv.require_usize("h")?;
    let negatives = kv.get_usize("negatives")?.unwrap_or(1);

    let corpus = load_corpus_arg(corpus_path)?;
    if corpus.docs.is_empty() {
        return Err(Error::invalid_argument("cannot train on an empty corpus"));
    }
    let d = corpus.d as usize;

    let query_corpus = queries.map(load_corpus_arg).transpose()?;
    let label_pairs = labels.map(read_labels).transpose()?;

    let mut manifest = Manifest::new("train");
    manifest.seed(train_config.seed);
    manifest.config("d", d);
    manifest.config("h", h);
    manifest.config("k", train_config.k);
    manifest.config("alpha", train_config.alpha);
    manifest.config("beta", train_config.beta);
    manifest.config("gamma", train_config.gamma);
    manifest.config("learning_rate", train_config.learning_rate);
    manifest.config("batch_size", train_config.batch_size);
    manifest.config("epochs", train_config.epochs);
    manifest.config("warmup_steps", train_config.warmup_steps);
    manifest.input(corpus_path)?;
    manifest.input(config)?;
    if let Some(q) = queries {
        manifest.input(q)?;
    }
    if let Some(l) = labels {
        manifest.input(l)?;
    }

    let assemble = Instant::now();
    let pairs = build_training_pairs(
        &corpus,
        query_corpus.as_ref(),
        label_pairs.as_deref(),
        negatives,
        train_config.seed,
    )?;
    manifest.stage("assemble_pairs", assemble.elapsed().as_millis());

    let init = SaeModel::init(d, h, train_config.k, train_config.seed)?;
    let fit = Instant::now();
    let (model, stats) = train(&init, &pairs, &train_config)?;
    manifest.stage("train", fit.elapsed().as_millis());
    for epoch in &stats {
        println!(
            "epoch {}: steps={} total={:.6} recon={:.6} aux={:.6} cl={:.6} sup={:.6}",
            epoch.epoch,
            epoch.steps,
            epoch.mean.total,
            epoch.mean.reconstruction,
            epoch.mean.auxiliary,
            epoch.mean.contrastive,
            epoch.mean.supervised
        );
    }

    save_model(&model, out)?;
    manifest.output(out)?;
    manifest.write(out)?;
    println!(
        "trained model d={d} h={h} k={} on {} pairs -> {}",
        train_config.k,
        pairs.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}
