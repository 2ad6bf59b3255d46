use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use coa_core::chain::ChainMode;
use coa_core::datasets::MissingImagePolicy;
use coa_core::metrics::render_delta_table;
use log::info;
use serde::{Deserialize, Serialize};

use crate::io::{load_config, open_manifest, write_bytes, write_json};
use crate::run::execute;
use crate::score::{ScoredRow, Scorer};
use crate::{BackendArgs, CliError, CliResult, ConfigArgs, EXIT_RUN};

pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_TABLE: &str = "ablation.txt";

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Each config writes into `<out>/<config>/`; the tables go in `<out>`.
    #[arg(long)]
    pub out: PathBuf,
    /// Score what succeeded even if some images failed in some config.
    #[arg(long)]
    pub keep_going: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationFile {
    /// Row label of the reference every delta is taken against.
    pub baseline: String,
    pub rows: Vec<ScoredRow>,
    pub failures: BTreeMap<String, usize>,
}

/// Runs and scores every ablation config over one manifest, sharing one
/// response cache, and writes a table of deltas against the first config.
pub fn cmd_ablate(args: &AblateArgs) -> CliResult<AblationFile> {
    let (harness, base) = load_config(&args.config)?;
    let metric = harness.metric_config()?;
    let manifest = open_manifest(&args.manifest, MissingImagePolicy::Fail)?;
    let cache = args.backend.cache_dir.clone().unwrap_or_else(|| args.out.join("cache"));
    let client = args.backend.build(&harness, Some(cache.clone()))?;
    let scorer = Scorer {
        manifest: &manifest,
        backend: &client,
        metric: &metric,
        partial: args.keep_going,
        parallelism: base.parallelism,
    };

    let mut rows = Vec::new();
    let mut failures = BTreeMap::new();
    for mode in ChainMode::ablation_suite() {
        let label = mode.label();
        let chain = base.with_mode(mode);
        let dir = args.out.join(&label);
        info!("ablation: running {label}");
        let run = execute(&harness, chain.clone(), &args.backend, &manifest, &dir, cache.clone(), BTreeMap::new())?;
        if !run.failures.is_empty() {
            if !args.keep_going {
                return Err(CliError::new(
                    EXIT_RUN,
                    anyhow::anyhow!(
                        "config {label}: {} images failed (see {}); pass --keep-going to score the rest",
                        run.failures.len(),
                        dir.join(crate::run::FAILURES).display()
                    ),
                ));
            }
            failures.insert(label.clone(), run.failures.len());
        }
        let mut scored = scorer.rows(&run.states, &chain, &label, false)?;
        rows.append(&mut scored);
    }

    let text = render_delta_table(&rows.iter().map(ScoredRow::table_row).collect::<Vec<_>>());
    print!("{text}");
    let file = AblationFile { baseline: rows[0].label.clone(), rows, failures };
    write_json(&args.out.join(ABLATION_JSON), &file)?;
    write_bytes(&args.out.join(ABLATION_TABLE), text.as_bytes())?;
    Ok(file)
}
