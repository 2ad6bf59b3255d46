use std::collections::HashSet;
use std::path::PathBuf;

use clap::Args;
use coa_core::backends::Backend;
use coa_core::chain::{ChainConfig, ChainMode};
use coa_core::config::fingerprint;
use coa_core::datasets::{Manifest, MissingImagePolicy};
use coa_core::metrics::{
    aggregate, render_table, score_batch, Averaging, Coverage, MetricConfig, MetricReport, ScoreInput, TableRow,
};
use coa_core::ChainState;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::io::{load_config, open_manifest, read_transcripts, write_bytes, write_json};
use crate::{AveragingArg, BackendArgs, CliError, CliResult, ConfigArgs, ExitContext, EXIT_SCORE};

pub const REPORT: &str = "report.json";
pub const TABLE: &str = "table.txt";

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Transcripts written by `coa run`.
    #[arg(long)]
    pub transcripts: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for report.json and table.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also score predictions after dropping labels the tagger does not confirm.
    #[arg(long)]
    pub ram_filter: bool,
    /// Score whatever is available instead of failing on missing or unscorable images.
    #[arg(long)]
    pub partial: bool,
    /// Row label in the table (defaults to the action config).
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, value_enum)]
    pub averaging: Option<AveragingArg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRow {
    pub label: String,
    pub report: MetricReport,
}

impl ScoredRow {
    pub fn table_row(&self) -> TableRow {
        TableRow::new(self.label.clone(), self.report.clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreFile {
    pub rows: Vec<ScoredRow>,
}

pub(crate) fn table(rows: &[ScoredRow]) -> String {
    render_table(&rows.iter().map(ScoredRow::table_row).collect::<Vec<_>>())
}

/// What scoring needs besides the predictions themselves.
pub(crate) struct Scorer<'a> {
    pub manifest: &'a Manifest,
    pub backend: &'a dyn Backend,
    pub metric: &'a MetricConfig,
    /// Score what is available instead of failing on missing or unscorable images.
    pub partial: bool,
    pub parallelism: usize,
}

impl Scorer<'_> {
    /// Scores `states` against every manifest entry. Missing predictions and
    /// per-image errors fail with exit 4 unless `partial` is set.
    pub(crate) fn score(
        &self,
        states: &[ChainState],
        apply_filter: bool,
        fingerprint: &str,
    ) -> CliResult<MetricReport> {
        let manifest = self.manifest;
        let by_id = manifest.by_id();
        let have: HashSet<&str> = states.iter().map(|s| s.image_id.as_str()).collect();
        let stray: Vec<&str> =
            states.iter().map(|s| s.image_id.as_str()).filter(|id| !by_id.contains_key(id)).collect();
        if !stray.is_empty() {
            warn!("{} transcripts are not in the manifest and are ignored (first: {})", stray.len(), stray[0]);
        }
        let missing: Vec<&str> =
            manifest.entries().iter().map(|r| r.id.as_str()).filter(|id| !have.contains(id)).collect();
        if !missing.is_empty() && !self.partial {
            return Err(CliError::new(
                EXIT_SCORE,
                anyhow::anyhow!(
                    "{} of {} manifest images have no transcript (first: {}); pass --partial to score the rest",
                    missing.len(),
                    manifest.len(),
                    missing[0]
                ),
            ));
        }

        let inputs: Vec<ScoreInput> = states
            .iter()
            .filter_map(|s| {
                let rec = by_id.get(s.image_id.as_str())?;
                Some(ScoreInput {
                    id: s.image_id.clone(),
                    split: rec.split,
                    image_ref: rec.image_ref.clone(),
                    pred: s.final_labels.clone(),
                    gold: rec.gold_labels.clone(),
                    latency_ms: Some(s.total_latency_ms as f64),
                })
            })
            .collect();
        let batch =
            score_batch(&inputs, self.backend, self.metric, apply_filter, self.parallelism).exit_code(EXIT_SCORE)?;
        if !batch.errors.is_empty() && !self.partial {
            let e = &batch.errors[0];
            return Err(CliError::new(
                EXIT_SCORE,
                anyhow::anyhow!(
                    "{} images could not be scored; first: {}: {}",
                    batch.errors.len(),
                    e.image_id,
                    e.error
                ),
            ));
        }
        let mut report = aggregate(&batch.scored, self.metric.averaging, fingerprint);
        report.coverage = Coverage { scored: batch.scored.len(), expected: manifest.len() };
        report.errors = batch.errors;
        Ok(report)
    }

    /// One row for the predictions as they are, plus one for the
    /// tag-filtered predictions when `with_filter` is set.
    pub(crate) fn rows(
        &self,
        states: &[ChainState],
        chain: &ChainConfig,
        label: &str,
        with_filter: bool,
    ) -> CliResult<Vec<ScoredRow>> {
        let mut rows = Vec::new();
        let plain = ChainConfig { ram_filter: false, ..chain.clone() };
        let report = self.score(states, false, &fingerprint(&plain, self.metric))?;
        rows.push(ScoredRow { label: label.to_string(), report });
        if with_filter {
            let filtered = ChainConfig { ram_filter: true, ..chain.clone() };
            let report = self.score(states, true, &fingerprint(&filtered, self.metric))?;
            rows.push(ScoredRow { label: format!("{label} + tag filter"), report });
        }
        Ok(rows)
    }
}

/// The mode recorded in the transcripts, which must be uniform.
fn transcript_mode(states: &[ChainState], fallback: &ChainMode) -> CliResult<ChainMode> {
    let labels: HashSet<&str> = states.iter().map(|s| s.config.as_str()).collect();
    match labels.len() {
        0 => Ok(fallback.clone()),
        1 => Ok(labels.into_iter().next().unwrap().parse().exit_code(EXIT_SCORE)?),
        _ => Err(CliError::new(EXIT_SCORE, anyhow::anyhow!("transcripts mix action configs: {labels:?}"))),
    }
}

pub fn cmd_score(args: &ScoreArgs) -> CliResult<Vec<ScoredRow>> {
    let (harness, chain) = load_config(&args.config)?;
    let mut metric = harness.metric_config()?;
    if let Some(a) = args.averaging {
        metric.averaging = match a {
            AveragingArg::Splits => Averaging::Splits,
            AveragingArg::Images => Averaging::Images,
        };
    }
    let manifest = open_manifest(&args.manifest, MissingImagePolicy::Warn)?;
    let states = read_transcripts(&args.transcripts)?;
    let chain = chain.with_mode(transcript_mode(&states, &chain.mode)?);
    let label = args.label.clone().unwrap_or_else(|| chain.mode.label());

    let backend = args.backend.build(&harness, args.out.as_ref().map(|o| o.join("cache")))?;
    let scorer = Scorer {
        manifest: &manifest,
        backend: &backend,
        metric: &metric,
        partial: args.partial,
        parallelism: chain.parallelism,
    };
    let rows = scorer.rows(&states, &chain, &label, args.ram_filter || harness.ram_filter)?;

    let text = table(&rows);
    print!("{text}");
    for r in &rows {
        if r.report.coverage.scored < r.report.coverage.expected {
            println!("{}: scored {} of {} images", r.label, r.report.coverage.scored, r.report.coverage.expected);
        }
    }
    if let Some(out) = &args.out {
        write_json(&out.join(REPORT), &ScoreFile { rows: rows.clone() })?;
        write_bytes(&out.join(TABLE), text.as_bytes())?;
    }
    Ok(rows)
}
