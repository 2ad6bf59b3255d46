use std::path::PathBuf;

use clap::Args;
use coa_core::chain::{ChainMode, ChainRunner};
use coa_core::datasets::MissingImagePolicy;
use coa_core::metrics::LatencyStats;
use serde::{Deserialize, Serialize};

use crate::io::{load_config, open_manifest, write_json};
use crate::{BackendArgs, CliError, CliResult, ConfigArgs, ExitContext, EXIT_CONFIG, EXIT_RUN, EXIT_USAGE};

#[derive(Debug, Clone, Args)]
pub struct TimeArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Methods to time, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "coa,baseline_vqa,baseline_caption")]
    pub methods: Vec<String>,
    /// Only time the first N manifest images.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Write the measurements as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: String,
    pub mode: String,
    pub n_images: usize,
    pub mean_calls: f64,
    pub latency_ms: LatencyStats,
}

pub fn render_timings(rows: &[MethodTiming]) -> String {
    let w = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max("Method".len());
    let mut out = format!("{:<w$} | {:>11} | {}\n", "Method", "calls/image", "chat ms/image");
    for r in rows {
        out.push_str(&format!("{:<w$} | {:>11.2} | {}\n", r.method, r.mean_calls, r.latency_ms.display()));
    }
    out
}

/// Per-image chat latency of each method, measured without the response
/// cache so every call reaches the backend.
pub fn cmd_time(args: &TimeArgs) -> CliResult<Vec<MethodTiming>> {
    let (harness, base) = load_config(&args.config)?;
    let manifest = open_manifest(&args.manifest, MissingImagePolicy::Fail)?;
    let n = args.limit.unwrap_or(manifest.len()).min(manifest.len());
    let records = &manifest.entries()[..n];

    let mut rows = Vec::new();
    for method in &args.methods {
        let mode: ChainMode = method.parse().exit_code(EXIT_USAGE)?;
        let runner = ChainRunner::new(base.with_mode(mode.clone()), args.backend.build_uncached(&harness)?)
            .exit_code(EXIT_CONFIG)?;
        let outcome = runner.run_batch(records);
        if let Some(f) = outcome.failures.first() {
            return Err(CliError::new(
                EXIT_RUN,
                anyhow::anyhow!(
                    "{method}: {} images failed; first: {}: {}",
                    outcome.failures.len(),
                    f.image_id,
                    f.error
                ),
            ));
        }
        let lat: Vec<f64> = outcome.states.iter().map(|s| s.total_latency_ms as f64).collect();
        let calls: usize = outcome.states.iter().map(|s| s.transcript.len()).sum();
        rows.push(MethodTiming {
            method: method.clone(),
            mode: mode.label(),
            n_images: outcome.states.len(),
            mean_calls: if lat.is_empty() { 0.0 } else { calls as f64 / lat.len() as f64 },
            latency_ms: LatencyStats::from_samples(&lat),
        });
    }
    print!("{}", render_timings(&rows));
    if let Some(out) = &args.out {
        write_json(out, &rows)?;
    }
    Ok(rows)
}
