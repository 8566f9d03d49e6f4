//! Run manifests: a text record written next to each produced artifact,
//! capturing the tool version, command, seed, config snapshot, input and
//! output digests, and per-stage timings.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ssr_core::Result;

pub struct Manifest {
    command: String,
    seed: Option<u64>,
    config: Vec<(String, String)>,
    inputs: Vec<(String, String)>,
    outputs: Vec<(String, String)>,
    timings: Vec<(String, u128)>,
    started: Instant,
}

impl Manifest {
    pub fn new(command: &str) -> Manifest {
        Manifest {
            command: command.to_string(),
            seed: None,
            config: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn config(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = ssr_core::crc32_file(path)?;
        self.inputs
            .push((path.display().to_string(), format!("{digest:08x}")));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let digest = ssr_core::crc32_file(path)?;
        self.outputs
            .push((path.display().to_string(), format!("{digest:08x}")));
        Ok(())
    }

    pub fn stage(&mut self, name: &str, elapsed_ms: u128) {
        self.timings.push((name.to_string(), elapsed_ms));
    }

    /// Writes `<artifact>.manifest` next to the primary artifact.
    pub fn write(mut self, primary_artifact: &Path) -> Result<()> {
        let total = self.started.elapsed().as_millis();
        self.timings.push(("total".to_string(), total));
        let mut text = String::new();
        let _ = writeln!(text, "tool = ssr {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(text, "command = {}", self.command);
        if let Some(seed) = self.seed {
            let _ = writeln!(text, "seed = {seed}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(text, "config.{k} = {v}");
        }
        for (p, digest) in &self.inputs {
            let _ = writeln!(text, "input = {p} crc32={digest}");
        }
        for (p, digest) in &self.outputs {
            let _ = writeln!(text, "output = {p} crc32={digest}");
        }
        for (name, ms) in &self.timings {
            let _ = writeln!(text, "timing.{name}_ms = {ms}");
        }
        let manifest_path = primary_artifact.with_extension(format!(
            "{}manifest",
            primary_artifact
                .extension()
                .map(|e| format!("{}.", e.to_string_lossy()))
                .unwrap_or_default()
        ));
        std::fs::write(manifest_path, text)?;
        Ok(())
    }
}
