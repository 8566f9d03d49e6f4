//! End-to-end command-line tests: artifact generation, pipeline wiring,
//! exit codes, and the planted-fault behaviors.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ssr_core::corpus::{read_corpus, read_labels, write_corpus, Corpus};

fn ssr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ssr"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn ssr");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().expect("spawn ssr");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).to_string(),
    )
}

fn write_gen_config(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
}

struct Artifacts {
    dir: tempfile::TempDir,
    corpus: PathBuf,
    queries: PathBuf,
    labels: PathBuf,
    model: PathBuf,
    index: PathBuf,
}

/// Generates, trains, and indexes a small two-topic zero-noise corpus.
fn orthogonal_pipeline() -> Artifacts {
    let dir = tempfile::tempdir().unwrap();
    let gen_cfg = dir.path().join("gen.cfg");
    write_gen_config(
        &gen_cfg,
        "d = 8\ntopics = 2\ndocs = 60\nqueries = 8\ndoc_tokens_min = 2\ndoc_tokens_max = 4\n\
         query_tokens_min = 2\nquery_tokens_max = 3\nnoise = 0.0\northogonal_topics = true\nseed = 5\n",
    );
    let train_cfg = dir.path().join("train.cfg");
    std::fs::write(
        &train_cfg,
        "h = 32\nk = 4\nk_aux = 8\nlearning_rate = 0.05\nbatch_size = 8\nepochs = 3\n\
         warmup_steps = 10\nseed = 9\n",
    )
    .unwrap();
    let corpus = dir.path().join("corpus.ssre");
    let queries = dir.path().join("queries.ssre");
    let labels = dir.path().join("labels.tsv");
    let model = dir.path().join("model.ssae");
    let index = dir.path().join("index.ssri");
    run_ok(
        ssr()
            .arg("gen")
            .args(["--config", gen_cfg.to_str().unwrap()])
            .args(["--out", corpus.to_str().unwrap()])
            .args(["--queries-out", queries.to_str().unwrap()])
            .args(["--labels-out", labels.to_str().unwrap()]),
    );
    run_ok(
        ssr()
            .arg("train")
            .args(["--corpus", corpus.to_str().unwrap()])
            .args(["--config", train_cfg.to_str().unwrap()])
            .args(["--out", model.to_str().unwrap()])
            .args(["--queries", queries.to_str().unwrap()])
            .args(["--labels", labels.to_str().unwrap()]),
    );
    run_ok(
        ssr()
            .arg("index")
            .args(["--corpus", corpus.to_str().unwrap()])
            .args(["--model", model.to_str().unwrap()])
            .args(["--out", index.to_str().unwrap()])
            .args(["--block-size", "8"]),
    );
    Artifacts {
        dir,
        corpus,
        queries,
        labels,
        model,
        index,
    }
}

fn parse_results(path: &Path) -> Vec<(u64, usize, u64, f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| {
            let mut f = line.split('\t');
            (
                f.next().unwrap().parse().unwrap(),
                f.next().unwrap().parse().unwrap(),
                f.next().unwrap().parse().unwrap(),
                f.next().unwrap().parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn gen_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.cfg");
    write_gen_config(
        &cfg,
        "d = 8\ntopics = 3\ndocs = 30\nqueries = 4\nnoise = 0.2\nseed = 42\n",
    );
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let corpus = dir.path().join(format!("{tag}.ssre"));
        let queries = dir.path().join(format!("{tag}-q.ssre"));
        let labels = dir.path().join(format!("{tag}-l.tsv"));
        run_ok(
            ssr()
                .arg("gen")
                .args(["--config", cfg.to_str().unwrap()])
                .args(["--out", corpus.to_str().unwrap()])
                .args(["--queries-out", queries.to_str().unwrap()])
                .args(["--labels-out", labels.to_str().unwrap()]),
        );
        outputs.push((
            std::fs::read(&corpus).unwrap(),
            std::fs::read(&queries).unwrap(),
            std::fs::read(&labels).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn gen_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.cfg");
    write_gen_config(&cfg, "d = 8\ntopics = 2\ndocs = 10\nqueries = 2\n");
    let (code, stderr) = exit_code(
        ssr()
            .arg("gen")
            .args(["--config", cfg.to_str().unwrap()])
            .args(["--out", dir.path().join("c.ssre").to_str().unwrap()])
            .args(["--queries-out", dir.path().join("q.ssre").to_str().unwrap()])
            .args(["--labels-out", dir.path().join("l.tsv").to_str().unwrap()]),
    );
    assert_eq!(code, 2, "stderr: {stderr}");
    assert!(stderr.contains("seed"));
}

#[test]
fn orthogonal_zero_noise_pipeline_retrieves_perfectly() {
    let a = orthogonal_pipeline();
    let results = a.dir.path().join("results.tsv");
    run_ok(
        ssr()
            .arg("query")
            .args(["--index", a.index.to_str().unwrap()])
            .args(["--queries", a.queries.to_str().unwrap()])
            .args(["--model", a.model.to_str().unwrap()])
            .args(["--mode", "exact"])
            .args(["--topk", "10"])
            .args(["--out", results.to_str().unwrap()]),
    );
    let labels = read_labels(&a.labels).unwrap();
    let mut relevant: std::collections::HashMap<u64, HashSet<u64>> = Default::default();
    for (q, d) in labels {
        relevant.entry(q).or_default().insert(d);
    }
    let rows = parse_results(&results);
    assert!(!rows.is_empty());
    let mut seen_queries = HashSet::new();
    for (query_id, _, doc_id, _) in rows {
        seen_queries.insert(query_id);
        assert!(
            relevant[&query_id].contains(&doc_id),
            "query {query_id} returned off-topic doc {doc_id}"
        );
    }
    assert_eq!(seen_queries.len(), 8);
}

#[test]
fn exact_and_ssrpp_agree_when_coarse_covers_everything() {
    let a = orthogonal_pipeline();
    let exact = a.dir.path().join("exact.tsv");
    let ssrpp = a.dir.path().join("ssrpp.tsv");
    run_ok(
        ssr()
            .arg("query")
            .args(["--index", a.index.to_str().unwrap()])
            .args(["--queries", a.queries.to_str().unwrap()])
            .args(["--model", a.model.to_str().unwrap()])
            .args(["--mode", "exact"])
            .args(["--out", exact.to_str().unwrap()]),
    );
    run_ok(
        ssr()
            .arg("query")
            .args(["--index", a.index.to_str().unwrap()])
            .args(["--queries", a.queries.to_str().unwrap()])
            .args(["--model", a.model.to_str().unwrap()])
            .args(["--mode", "ssrpp"])
            .args(["--cap", "500"])
            .args(["--kcoarse", "4"])
            .args(["--k", "4"])
            .args(["--out", ssrpp.to_str().unwrap()]),
    );
    assert_eq!(
        std::fs::read(&exact).unwrap(),
        std::fs::read(&ssrpp).unwrap()
    );
}

#[test]
fn append_empty_delta_is_identity_and_split_equals_full() {
    let a = orthogonal_pipeline();
    let corpus = read_corpus(&a.corpus).unwrap();

    // Empty delta leaves the index bytes unchanged.
    let empty = a.dir.path().join("empty.ssre");
    write_corpus(
        &Corpus {
            d: corpus.d,
            docs: vec![],
        },
        &empty,
    )
    .unwrap();
    let unchanged = a.dir.path().join("unchanged.ssri");
    run_ok(
        ssr()
            .arg("append")
            .args(["--index", a.index.to_str().unwrap()])
            .args(["--delta", empty.to_str().unwrap()])
            .args(["--model", a.model.to_str().unwrap()])
            .args(["--out", unchanged.to_str().unwrap()]),
    );
    assert_eq!(
        std::fs::read(&a.index).unwrap(),
        std::fs::read(&unchanged).unwrap()
    );

    // Indexing a prefix then appending the rest equals the full build.
    let split = corpus.docs.len() / 2;
    let head = a.dir.path().join("head.ssre");
    let tail = a.dir.path().join("tail.ssre");
    write_corpus(
        &Corpus {
            d: corpus.d,
            docs: corpus.docs[..split].to_vec(),
        },
        &head,
    )
    .unwrap();
    write_corpus(
        &Corpus {
            d: corpus.d,
            docs: corpus.docs[split..].to_vec(),
        },
        &tail,
    )
    .unwrap();
    let partial = a.dir.path().join("partial.ssri");
    let merged = a.dir.path().join("merged.ssri");
    run_ok(
        ssr()
            .arg("index")
            .args(["--corpus", head.to_str().unwrap()])
            .args(["--model", a.model.to_str().unwrap()])
            .args(["--out", partial.to_str().unwrap()])
            .args(["--block-size", "8"]),
    );
    run_ok(
        ssr()
            .arg("append")
            .args(["--index", partial.to_str().unwrap()])
            .args(["--delta", tail.to_str().unwrap()])
            .args(["--model", a.model.to_str().unwrap()])
            .args(["--out", merged.to_str().unwrap()]),
    );
    assert_eq!(
        std::fs::read(&a.index).unwrap(),
        std::fs::read(&merged).unwrap()
    );
}

#[test]
fn append_out_of_order_ids_exits_1() {
    let a = orthogonal_pipeline();
    let corpus = read_corpus(&a.corpus).unwrap();
    // Re-append the first doc: its id is below the current maximum.
    let dup = a.dir.path().join("dup.ssre");
    write_corpus(
        &Corpus {
            d: corpus.d,
            docs: corpus.docs[..1].to_vec(),
        },
        &dup,
    )
    .unwrap();
    let (code, stderr) = exit_code(
        ssr()
            .arg("append")
            .args(["--index", a.index.to_str().unwrap()])
            .args(["--delta", dup.to_str().unwrap()])
            .args(["--model", a.model.to_str().unwrap()])
            .args(["--out", a.dir.path().join("x.ssri").to_str().unwrap()]),
    );
    assert_eq!(code, 1, "stderr: {stderr}");
    assert!(stderr.contains("append-order"));
}

#[test]
fn missing_corpus_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "h = 16\nk = 2\nseed = 1\n").unwrap();
    let (code, _) = exit_code(
        ssr()
            .arg("train")
            .args([
                "--corpus",
                dir.path().join("missing.ssre").to_str().unwrap(),
            ])
            .args(["--config", cfg.to_str().unwrap()])
            .args(["--out", dir.path().join("m.ssae").to_str().unwrap()]),
    );
    assert_eq!(code, 3);
}

#[test]
fn unknown_flag_exits_2() {
    let (code, _) = exit_code(ssr().arg("query").arg("--definitely-not-a-flag"));
    assert_eq!(code, 2);
}

#[test]
fn corrupt_model_file_exits_3() {
    let a = orthogonal_pipeline();
    let mut bytes = std::fs::read(&a.model).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x20;
    let broken = a.dir.path().join("broken.ssae");
    std::fs::write(&broken, &bytes).unwrap();
    let (code, stderr) = exit_code(
        ssr()
            .arg("index")
            .args(["--corpus", a.corpus.to_str().unwrap()])
            .args(["--model", broken.to_str().unwrap()])
            .args(["--out", a.dir.path().join("x.ssri").to_str().unwrap()]),
    );
    assert_eq!(code, 3, "stderr: {stderr}");
    assert!(stderr.contains("corrupt"));
}

#[test]
fn zero_epoch_train_persists_initialized_model() {
    let dir = tempfile::tempdir().unwrap();
    let gen_cfg = dir.path().join("gen.cfg");
    write_gen_config(
        &gen_cfg,
        "d = 8\ntopics = 2\ndocs = 12\nqueries = 2\nnoise = 0.1\nseed = 2\n",
    );
    let corpus = dir.path().join("c.ssre");
    run_ok(
        ssr()
            .arg("gen")
            .args(["--config", gen_cfg.to_str().unwrap()])
            .args(["--out", corpus.to_str().unwrap()])
            .args(["--queries-out", dir.path().join("q.ssre").to_str().unwrap()])
            .args(["--labels-out", dir.path().join("l.tsv").to_str().unwrap()]),
    );
    let train_cfg = dir.path().join("t.cfg");
    std::fs::write(&train_cfg, "h = 16\nk = 2\nepochs = 0\nseed = 33\n").unwrap();
    let model_path = dir.path().join("m.ssae");
    run_ok(
        ssr()
            .arg("train")
            .args(["--corpus", corpus.to_str().unwrap()])
            .args(["--config", train_cfg.to_str().unwrap()])
            .args(["--out", model_path.to_str().unwrap()]),
    );
    let loaded = ssr_core::sae::load_model(&model_path).unwrap();
    let fresh = ssr_core::sae::SaeModel::init(8, 16, 2, 33).unwrap();
    // Same initialization, quantized to f32 on save.
    let dir2 = tempfile::tempdir().unwrap();
    let fresh_path = dir2.path().join("fresh.ssae");
    ssr_core::sae::save_model(&fresh, &fresh_path).unwrap();
    assert_eq!(
        std::fs::read(&model_path).unwrap(),
        std::fs::read(&fresh_path).unwrap()
    );
    assert_eq!(loaded.sparsity(), 2);
}

#[test]
fn verify_passes_on_fresh_artifacts() {
    let a = orthogonal_pipeline();
    let out = run_ok(
        ssr()
            .arg("verify")
            .args(["--model", a.model.to_str().unwrap()])
            .args(["--index", a.index.to_str().unwrap()])
            .args(["--corpus", a.corpus.to_str().unwrap()])
            .args(["--seed", "17"]),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("all checks passed"), "stdout: {stdout}");
}

#[test]
fn verify_without_artifacts_is_usage_error() {
    let (code, _) = exit_code(ssr().arg("verify").args(["--seed", "1"]));
    assert_eq!(code, 2);
}

/// CRC32 (IEEE), reimplemented here so the test can forge a valid checksum
/// after planting a fault inside the file body.
fn crc32(bytes: &[u8]) -> u32 {
    let mut state = 0xFFFF_FFFFu32;
    for &b in bytes {
        state ^= b as u32;
        for _ in 0..8 {
            let mask = (state & 1).wrapping_neg();
            state = (state >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !state
}

#[test]
fn corrupted_block_bound_is_reported_by_name() {
    let a = orthogonal_pipeline();
    let mut bytes = std::fs::read(&a.index).unwrap();
    // Header is 24 bytes, then u32 list count, u32 neuron id, u32 block
    // count, u32 block length; the first block's upper bound lives at 40.
    let ub_offset = 24 + 4 + 4 + 4 + 4;
    let old = f32::from_le_bytes(bytes[ub_offset..ub_offset + 4].try_into().unwrap());
    let forged = (old * 2.0 + 1.0).to_le_bytes();
    bytes[ub_offset..ub_offset + 4].copy_from_slice(&forged);
    // Re-seal the checksum so the fault reaches the structural validator.
    let body = bytes.len() - 4;
    let seal = crc32(&bytes[..body]).to_le_bytes();
    bytes[body..].copy_from_slice(&seal);
    let forged_path = a.dir.path().join("forged.ssri");
    std::fs::write(&forged_path, &bytes).unwrap();
    let (code, stderr) = exit_code(
        ssr()
            .arg("verify")
            .args(["--index", forged_path.to_str().unwrap()])
            .args(["--seed", "1"]),
    );
    assert_eq!(code, 3, "stderr: {stderr}");
    assert!(
        stderr.contains("block") && stderr.contains("upper bound"),
        "stderr: {stderr}"
    );
}

#[test]
fn query_with_empty_query_file_writes_empty_results() {
    let a = orthogonal_pipeline();
    let corpus = read_corpus(&a.corpus).unwrap();
    let empty = a.dir.path().join("noqueries.ssre");
    write_corpus(
        &Corpus {
            d: corpus.d,
            docs: vec![],
        },
        &empty,
    )
    .unwrap();
    let results = a.dir.path().join("empty-results.tsv");
    run_ok(
        ssr()
            .arg("query")
            .args(["--index", a.index.to_str().unwrap()])
            .args(["--queries", empty.to_str().unwrap()])
            .args(["--model", a.model.to_str().unwrap()])
            .args(["--out", results.to_str().unwrap()]),
    );
    assert_eq!(std::fs::read_to_string(&results).unwrap(), "");
}

#[test]
fn bench_runs_with_zero_warmup_and_empty_queries() {
    let a = orthogonal_pipeline();
    run_ok(
        ssr()
            .arg("bench")
            .args(["--index", a.index.to_str().unwrap()])
            .args(["--queries", a.queries.to_str().unwrap()])
            .args(["--model", a.model.to_str().unwrap()])
            .args(["--warmup", "0"]),
    );
    let corpus = read_corpus(&a.corpus).unwrap();
    let empty = a.dir.path().join("nq.ssre");
    write_corpus(
        &Corpus {
            d: corpus.d,
            docs: vec![],
        },
        &empty,
    )
    .unwrap();
    let out = run_ok(
        ssr()
            .arg("bench")
            .args(["--index", a.index.to_str().unwrap()])
            .args(["--queries", empty.to_str().unwrap()])
            .args(["--model", a.model.to_str().unwrap()]),
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("nothing to benchmark"));
}

#[test]
fn manifests_accompany_artifacts() {
    let a = orthogonal_pipeline();
    for artifact in [&a.corpus, &a.model, &a.index] {
        let manifest = artifact.with_extension(format!(
            "{}.manifest",
            artifact.extension().unwrap().to_string_lossy()
        ));
        let text = std::fs::read_to_string(&manifest)
            .unwrap_or_else(|_| panic!("missing manifest for {}", artifact.display()));
        assert!(text.contains("tool = ssr"));
        assert!(text.contains("crc32="));
        assert!(text.contains("timing.total_ms"));
    }
}
