//! Config-driven scenario runner with reproducible on-disk artifacts.
//!
//! A run directory holds `meta.json` (written first, rewritten on
//! completion), one CSV per table, and `summary.json`.

mod config;
mod output;
mod scenarios;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

pub use config::{Init, RunConfig, SCENARIOS};
pub use output::{
    read_header, run_id, sha256_hex, Cell, Meta, RunDir, RunStatus, Table, FIELD_REGISTRY, META_SCHEMA,
    SERIES_SCHEMA, SUMMARY_SCHEMA, TABLE_SCHEMA, VERSION,
};
pub use scenarios::ScenarioOutput;

use crate::error::{Error, Result};

/// Command-line style overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Outcome of a completed run.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub meta: Meta,
}

/// Resolves `cfg` with `ov`, then executes it into its run directory. The
/// config is fully validated before anything touches the disk.
pub fn run_scenario(cfg: &RunConfig, ov: &Overrides) -> Result<RunReport> {
    let mut raw = cfg.clone();
    if let Some(s) = ov.seed {
        raw.seed = Some(s);
    }
    if let Some(t) = ov.threads {
        raw.threads = Some(t);
    }
    let resolved = raw.resolve()?;
    let id = run_id(&resolved);
    let dir = ov
        .out_dir
        .clone()
        .or_else(|| resolved.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{id}", resolved.scenario)));
    execute(resolved, id, &dir)
}

fn execute(cfg: RunConfig, id: String, dir: &Path) -> Result<RunReport> {
    let threads = cfg.threads.unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    let out = RunDir::create(dir)?;
    let mut meta = Meta {
        schema: META_SCHEMA.into(),
        run_id: id.clone(),
        version: VERSION.into(),
        seed: cfg.seed(),
        threads,
        config: cfg.clone(),
        status: RunStatus::Running,
        flags: vec![],
        notes: Default::default(),
        wall_time_s: None,
        outputs: Default::default(),
        error: None,
    };
    out.write_meta(&meta)?;
    let start = Instant::now();
    let result = pool.install(|| scenarios::run(&cfg, &id));
    let produced = match result {
        Ok(p) => p,
        Err(e) => {
            meta.status = RunStatus::Failed;
            meta.error = Some(e.to_string());
            meta.wall_time_s = Some(start.elapsed().as_secs_f64());
            out.write_meta(&meta)?;
            return Err(e);
        }
    };
    for t in &produced.tables {
        let h = out.write_table(t)?;
        meta.outputs.insert(t.file_name(), h);
    }
    let mut summary = serde_json::Map::new();
    summary.insert("schema".into(), json!(SUMMARY_SCHEMA));
    summary.insert("scenario".into(), json!(cfg.scenario));
    summary.insert("run_id".into(), json!(id));
    summary.insert("seed".into(), json!(cfg.seed()));
    summary.insert("trials".into(), json!(cfg.trials));
    summary.extend(produced.summary);
    out.write_summary(&summary.into())?;
    meta.flags = produced.flags;
    meta.notes = produced.notes;
    meta.status = RunStatus::Complete;
    meta.wall_time_s = Some(start.elapsed().as_secs_f64());
    out.write_meta(&meta)?;
    Ok(RunReport {
        dir: dir.to_path_buf(),
        meta,
    })
}

#[derive(Clone, Debug, Default)]
pub struct ReplayOptions {
    /// Re-run with a different seed; outputs are then expected to differ
    /// and only their schemas are compared.
    pub seed: Option<u64>,
    /// Keep the replayed run here instead of a temporary directory.
    pub out_dir: Option<PathBuf>,
    /// Continue (with a warning) when the recorded version differs.
    pub allow_version_mismatch: bool,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct ReplayReport {
    pub compared: Vec<String>,
    pub differing: Vec<String>,
    pub version_warning: Option<String>,
    pub dir: Option<PathBuf>,
}

/// Re-executes the run recorded in `meta_path` and compares CSV hashes.
pub fn replay(meta_path: &Path, opts: &ReplayOptions) -> Result<ReplayReport> {
    let recorded = Meta::load(meta_path)?;
    if recorded.status != RunStatus::Complete {
        return Err(Error::config("status", "recorded run did not complete"));
    }
    let mut version_warning = None;
    if recorded.version != VERSION {
        let e = Error::VersionMismatch {
            recorded: recorded.version.clone(),
            current: VERSION.into(),
        };
        if !opts.allow_version_mismatch {
            return Err(e);
        }
        version_warning = Some(e.to_string());
    }
    let mut cfg = recorded.config.clone();
    cfg.out_dir = None;
    if let Some(s) = opts.seed {
        cfg.seed = Some(s);
    }
    if let Some(t) = opts.threads {
        cfg.threads = Some(t);
    }
    let cfg = cfg.resolve()?;
    let tmp;
    let dir = match &opts.out_dir {
        Some(d) => d.clone(),
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path().join("replay")
        }
    };
    let id = run_id(&cfg);
    let fresh = execute(cfg, id, &dir)?;
    let mut differing = Vec::new();
    for (name, hash) in &recorded.outputs {
        match fresh.meta.outputs.get(name) {
            Some(h) if h == hash => {}
            Some(_) if opts.seed.is_some() => {
                let orig = meta_path.parent().unwrap_or(Path::new(".")).join(name);
                if orig.exists() && read_header(&orig)? != read_header(&dir.join(name))? {
                    return Err(Error::ReplayMismatch(format!("{name}: schema differs")));
                }
                differing.push(name.clone());
            }
            _ => differing.push(name.clone()),
        }
    }
    if fresh.meta.outputs.len() != recorded.outputs.len() {
        return Err(Error::ReplayMismatch("set of output files differs".into()));
    }
    if opts.seed.is_none() && !differing.is_empty() {
        return Err(Error::ReplayMismatch(format!("outputs differ: {}", differing.join(", "))));
    }
    Ok(ReplayReport {
        compared: recorded.outputs.keys().cloned().collect(),
        differing,
        version_warning,
        dir: opts.out_dir.clone(),
    })
}
