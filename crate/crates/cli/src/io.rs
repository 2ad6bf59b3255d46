use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use coa_core::chain::{ChainConfig, ChainMode};
use coa_core::config::HarnessConfig;
use coa_core::datasets::{load_manifest, Manifest, MissingImagePolicy};
use coa_core::ChainState;
use serde::Serialize;

use crate::{CliError, CliResult, ConfigArgs, ExitContext, EXIT_USAGE};

pub(crate) fn load_config(args: &ConfigArgs) -> CliResult<(HarnessConfig, ChainConfig)> {
    let mut harness = match &args.config {
        Some(p) if !p.is_file() => return Err(CliError::usage(format!("config file {} does not exist", p.display()))),
        Some(p) => HarnessConfig::load(p)?,
        None => HarnessConfig::default(),
    };
    if let Some(a) = &args.actions {
        harness.actions = a.parse::<ChainMode>().exit_code(EXIT_USAGE)?;
    }
    if let Some(p) = args.parallelism {
        harness.parallelism = p;
    }
    let chain = harness.chain_config()?;
    Ok((harness, chain))
}

pub(crate) fn open_manifest(path: &Path, missing: MissingImagePolicy) -> CliResult<Manifest> {
    if !path.is_file() {
        return Err(CliError::usage(format!("manifest {} does not exist", path.display())));
    }
    Ok(load_manifest(path, missing).with_context(|| format!("loading manifest {}", path.display()))?)
}

pub(crate) fn read_transcripts(path: &Path) -> CliResult<Vec<ChainState>> {
    if !path.is_file() {
        return Err(CliError::usage(format!("transcripts {} do not exist", path.display())));
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let st: ChainState = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: invalid transcript line", path.display(), i + 1))?;
        out.push(st);
    }
    Ok(out)
}

pub(crate) fn write_transcripts(path: &Path, states: &[ChainState]) -> CliResult<()> {
    let mut buf = Vec::new();
    for st in states {
        serde_json::to_writer(&mut buf, st).context("serializing transcript")?;
        buf.push(b'\n');
    }
    write_bytes(path, &buf)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut buf = serde_json::to_vec_pretty(value).context("serializing report")?;
    buf.push(b'\n');
    write_bytes(path, &buf)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub(crate) fn by_id(states: Vec<ChainState>) -> BTreeMap<String, ChainState> {
    states.into_iter().map(|s| (s.image_id.clone(), s)).collect()
}
