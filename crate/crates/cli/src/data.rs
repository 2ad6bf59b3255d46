use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Subcommand};
use coa_core::datasets::{
    convert_coco, verify_split_counts, write_manifest, ExpectedCounts, MissingImagePolicy, SplitReport,
};
use log::info;

use crate::io::open_manifest;
use crate::{CliError, CliResult, EXIT_USAGE, EXIT_VERIFY};

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    #[command(subcommand)]
    pub source: ConvertSource,
}

#[derive(Debug, Clone, Subcommand)]
pub enum ConvertSource {
    /// COCO-style instance annotations plus a split file (`<image id> <split>` per line).
    Coco {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        split_spec: PathBuf,
        /// Manifest to write.
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn cmd_convert(args: &ConvertArgs) -> CliResult<()> {
    match &args.source {
        ConvertSource::Coco { annotations, images, split_spec, out } => {
            for p in [annotations, split_spec] {
                if !p.is_file() {
                    return Err(CliError::usage(format!("{} does not exist", p.display())));
                }
            }
            let manifest = convert_coco(annotations, images, split_spec).context("converting annotations")?;
            write_manifest(&manifest, out).with_context(|| format!("writing {}", out.display()))?;
            let counts: Vec<String> = manifest.split_counts().iter().map(|(s, n)| format!("{s}:{n}")).collect();
            info!("wrote {} images to {} (splits {})", manifest.len(), out.display(), counts.join(" "));
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Expected counts preset: voc, coco or nus.
    #[arg(long, conflicts_with = "counts", required_unless_present = "counts")]
    pub dataset: Option<String>,
    /// Explicit expected counts for splits 0..3.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
}

pub fn cmd_verify_splits(args: &VerifyArgs) -> CliResult<SplitReport> {
    let expected = match (&args.dataset, &args.counts) {
        (Some(name), _) => ExpectedCounts::preset(name)
            .ok_or_else(|| CliError::usage(format!("unknown dataset {name:?}; expected voc, coco or nus")))?,
        (None, Some(c)) if c.len() == 4 => ExpectedCounts { name: "custom".into(), counts: [c[0], c[1], c[2], c[3]] },
        _ => return Err(CliError::new(EXIT_USAGE, anyhow::anyhow!("pass --dataset or four --counts"))),
    };
    let manifest = open_manifest(&args.manifest, MissingImagePolicy::Warn)?;
    let report = verify_split_counts(&manifest, &expected);
    println!("{report}");
    if !report.pass {
        let bad: Vec<String> = report.failing().iter().map(u8::to_string).collect();
        return Err(CliError::new(EXIT_VERIFY, anyhow::anyhow!("split count mismatch in split(s) {}", bad.join(", "))));
    }
    Ok(report)
}
