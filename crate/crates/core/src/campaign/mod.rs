// SPDX-License-Identifier: Apache-2.0

//! Corpus-level driver: one reflection loop per contract model, aggregated
//! into a versioned report.

mod cli;
mod report;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

pub use cli::{cli_main, Cli};
pub use report::{
    emit_report, read_report, round_histogram, ContractReport, DetectionPoint, ErroredFile, Finding, ReportFormat,
    Totals, VulnerabilityReport, SCHEMA_VERSION,
};

use crate::agents::{HeuristicBackend, LlmBackend, LlmConfig, PolicyBackend};
use crate::clock::{Clock, SystemClock};
use crate::crp::{run_crp_with_clock, CrpConfig, CrpOutcome};
use crate::txmodel::{ProgramContext, SeedPool};
use crate::vm::{load_model, ContractModel};

pub const DEFAULT_TOTAL_BUDGET: Duration = Duration::from_secs(1800);

#[derive(Clone, Debug, PartialEq)]
pub enum BackendConfig {
    Heuristic,
    Llm(LlmConfig),
}

impl BackendConfig {
    pub fn name(&self) -> &'static str {
        match self {
            BackendConfig::Heuristic => "heuristic",
            BackendConfig::Llm(_) => "llm",
        }
    }

    pub fn build(&self) -> Box<dyn PolicyBackend> {
        match self {
            BackendConfig::Heuristic => Box::new(HeuristicBackend::new()),
            BackendConfig::Llm(cfg) => Box::new(LlmBackend::new(cfg.clone())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignConfig {
    pub corpus: Vec<PathBuf>,
    pub crp: CrpConfig,
    pub backend: BackendConfig,
    pub total_budget: Duration,
    pub jobs: usize,
    pub output: Option<PathBuf>,
}

impl CampaignConfig {
    pub fn new(corpus: Vec<PathBuf>) -> Self {
        CampaignConfig {
            corpus,
            crp: CrpConfig::default(),
            backend: BackendConfig::Heuristic,
            total_budget: DEFAULT_TOTAL_BUDGET,
            jobs: 1,
            output: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no loadable contract models: {}", list(.0))]
    Corpus(Vec<ErroredFile>),
    #[error("cannot read corpus {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn list(files: &[ErroredFile]) -> String {
    files.iter().map(|f| format!("{} ({})", f.file, f.error)).collect::<Vec<_>>().join(", ")
}

/// Expands a corpus argument: a file is taken as is, a directory yields its
/// top-level `*.json` files in name order.
pub fn discover_corpus(path: &Path) -> Result<Vec<PathBuf>, CampaignError> {
    let io = |source| CampaignError::Io { path: path.to_path_buf(), source };
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).map_err(io)? {
        let p = entry.map_err(io)?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "json") {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CampaignError::EmptyCorpus);
    }
    Ok(files)
}

/// A loaded corpus entry.
pub struct Target {
    pub file: PathBuf,
    pub model: ContractModel,
    pub ctx: ProgramContext,
}

pub fn load_target(path: &Path) -> Result<Target, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let model = load_model(&text).map_err(|e| e.to_string())?;
    let ctx = ProgramContext::new(text, model.interface(), SeedPool::default());
    Ok(Target { file: path.to_path_buf(), model, ctx })
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<VulnerabilityReport, CampaignError> {
    run_campaign_with_clock(cfg, &SystemClock::start())
}

pub fn run_campaign_with_clock(cfg: &CampaignConfig, clock: &dyn Clock) -> Result<VulnerabilityReport, CampaignError> {
    if cfg.corpus.is_empty() {
        return Err(CampaignError::EmptyCorpus);
    }
    let mut targets = Vec::new();
    let mut errored = Vec::new();
    for path in &cfg.corpus {
        match load_target(path) {
            Ok(t) => targets.push(t),
            Err(error) => {
                log::error!("{}: {error}", path.display());
                errored.push(ErroredFile { file: path.display().to_string(), error });
            }
        }
    }
    if targets.is_empty() {
        return Err(CampaignError::Corpus(errored));
    }

    let start = clock.elapsed();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<(Duration, CrpOutcome)>>> = Mutex::new((0..targets.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..cfg.jobs.clamp(1, targets.len()) {
            s.spawn(|| {
                let mut backend = cfg.backend.build();
                loop {
                    if clock.elapsed().saturating_sub(start) > cfg.total_budget {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(t) = targets.get(i) else { break };
                    let began = clock.elapsed().saturating_sub(start);
                    log::info!("{}: fuzzing", t.model.name);
                    let out = run_crp_with_clock(&t.model, &t.ctx, backend.as_mut(), &cfg.crp, clock);
                    log::info!("{}: {} after {} rounds", t.model.name, out.status.name(), out.rounds_used());
                    results.lock().expect("no worker panics while holding the lock")[i] = Some((began, out));
                }
            });
        }
    });

    let results = results.into_inner().expect("workers joined");
    let mut contracts = Vec::new();
    let mut skipped = Vec::new();
    for (t, r) in targets.iter().zip(results) {
        match r {
            Some((began, out)) => contracts.push(ContractReport::new(&t.model, &t.file, began, out)),
            None => skipped.push(t.file.display().to_string()),
        }
    }
    Ok(VulnerabilityReport::new(cfg, contracts, errored, skipped, clock.elapsed().saturating_sub(start)))
}
