use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use coa_core::chain::{ChainConfig, ChainRunner, ImageFailure};
use coa_core::config::{fingerprint, HarnessConfig};
use coa_core::datasets::{Manifest, MissingImagePolicy};
use coa_core::metrics::LatencyStats;
use coa_core::{ChainState, ImageRecord};
use log::info;
use serde::{Deserialize, Serialize};

use crate::io::{by_id, load_config, open_manifest, read_transcripts, write_bytes, write_json, write_transcripts};
use crate::{BackendArgs, CliError, CliResult, ConfigArgs, EXIT_RUN, EXIT_USAGE};

pub const TRANSCRIPTS: &str = "transcripts.jsonl";
pub const FAILURES: &str = "failures.jsonl";
pub const RUN_META: &str = "run_meta.json";

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Manifest (JSONL) listing the images to label.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for transcripts, failures and run metadata.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep transcripts already in `--out` and only run the missing images.
    #[arg(long)]
    pub resume: bool,
    /// Exit 0 even when some images failed.
    #[arg(long)]
    pub keep_going: bool,
    /// Warn about manifest entries whose image file is missing instead of refusing to start.
    #[arg(long)]
    pub allow_missing_images: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_fingerprint: String,
    pub mode: String,
    pub chat_model: String,
    pub template_hashes: BTreeMap<String, String>,
    pub manifest: String,
    pub n_images: usize,
    pub n_succeeded: usize,
    pub n_failed: usize,
    pub n_resumed: usize,
    pub wall_ms: u64,
    pub latency_ms: LatencyStats,
    pub mean_calls: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub states: Vec<ChainState>,
    pub failures: Vec<ImageFailure>,
    pub meta: RunMeta,
}

/// Runs `chain` over `records`, reusing `done` transcripts, and writes the
/// three output files into `out`. Returned states follow manifest order.
pub(crate) fn execute(
    harness: &HarnessConfig,
    chain: ChainConfig,
    backend: &BackendArgs,
    manifest: &Manifest,
    out: &Path,
    cache: PathBuf,
    done: BTreeMap<String, ChainState>,
) -> CliResult<RunSummary> {
    let metric = harness.metric_config()?;
    let todo: Vec<ImageRecord> = manifest.entries().iter().filter(|r| !done.contains_key(&r.id)).cloned().collect();
    let n_resumed = manifest.len() - todo.len();
    if n_resumed > 0 {
        info!("resuming: {n_resumed} images already done, {} to run", todo.len());
    }

    let client = backend.build(harness, Some(cache))?;
    let runner = ChainRunner::new(chain.clone(), client).map_err(|e| CliError::new(crate::EXIT_CONFIG, e))?;
    let outcome = runner.run_batch(&todo);

    let mut fresh = by_id(outcome.states);
    let mut old = done;
    let states: Vec<ChainState> =
        manifest.entries().iter().filter_map(|r| old.remove(&r.id).or_else(|| fresh.remove(&r.id))).collect();

    write_transcripts(&out.join(TRANSCRIPTS), &states)?;
    let mut failures_buf = Vec::new();
    for f in &outcome.failures {
        serde_json::to_writer(&mut failures_buf, f).map_err(anyhow::Error::from)?;
        failures_buf.push(b'\n');
    }
    write_bytes(&out.join(FAILURES), &failures_buf)?;

    let lat: Vec<f64> = states.iter().map(|s| s.total_latency_ms as f64).collect();
    let calls: Vec<f64> = states.iter().map(|s| s.transcript.len() as f64).collect();
    let meta = RunMeta {
        config_fingerprint: fingerprint(&chain, &metric),
        mode: chain.mode.label(),
        chat_model: chain.chat_model.clone(),
        template_hashes: chain.templates.hashes(),
        manifest: manifest.source().to_string(),
        n_images: manifest.len(),
        n_succeeded: states.len(),
        n_failed: outcome.failures.len(),
        n_resumed,
        wall_ms: outcome.wall_ms,
        latency_ms: LatencyStats::from_samples(&lat),
        mean_calls: if calls.is_empty() { 0.0 } else { calls.iter().sum::<f64>() / calls.len() as f64 },
    };
    write_json(&out.join(RUN_META), &meta)?;
    info!(
        "{}: {} ok, {} failed, wall {} ms, chat latency {} ms",
        meta.mode,
        meta.n_succeeded,
        meta.n_failed,
        meta.wall_ms,
        meta.latency_ms.display()
    );
    Ok(RunSummary { states, failures: outcome.failures, meta })
}

pub fn cmd_run(args: &RunArgs) -> CliResult<RunSummary> {
    let (harness, chain) = load_config(&args.config)?;
    let policy = if args.allow_missing_images { MissingImagePolicy::Warn } else { MissingImagePolicy::Fail };
    let manifest = open_manifest(&args.manifest, policy)?;

    let transcripts = args.out.join(TRANSCRIPTS);
    let done = match (transcripts.is_file(), args.resume) {
        (true, false) => {
            return Err(CliError::usage(format!(
                "{} already exists; pass --resume to continue it or choose another --out",
                transcripts.display()
            )))
        }
        (true, true) => {
            let ids: std::collections::HashSet<&str> = manifest.entries().iter().map(|r| r.id.as_str()).collect();
            let prior = read_transcripts(&transcripts)?;
            if let Some(s) = prior.iter().find(|s| s.config != chain.mode.label()) {
                return Err(CliError::new(
                    EXIT_USAGE,
                    anyhow::anyhow!(
                        "cannot resume: {} was produced by config {} but this run uses {}",
                        transcripts.display(),
                        s.config,
                        chain.mode.label()
                    ),
                ));
            }
            by_id(prior.into_iter().filter(|s| ids.contains(s.image_id.as_str())).collect())
        }
        (false, _) => BTreeMap::new(),
    };

    let summary = execute(&harness, chain, &args.backend, &manifest, &args.out, args.out.join("cache"), done)?;
    if !summary.failures.is_empty() && !args.keep_going {
        return Err(CliError::new(
            EXIT_RUN,
            anyhow::anyhow!(
                "{} of {} images failed (see {}); first: {}: {}",
                summary.failures.len(),
                manifest.len(),
                args.out.join(FAILURES).display(),
                summary.failures[0].image_id,
                summary.failures[0].error
            ),
        ));
    }
    Ok(summary)
}
