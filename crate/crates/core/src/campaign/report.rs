// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::CampaignConfig;
use crate::crp::{CrpOutcome, CrpStatus, DraftRecord, ReflectionRecord};
use crate::oracles::{run_all, Severity, Verdict, VulnClass};
use crate::txmodel::{SeedPool, TransactionSequence};
use crate::vm::{execute_sequence, ContractModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub class: VulnClass,
    pub severity: Severity,
    /// Function whose transaction completed the exploit.
    pub function: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractReport {
    pub name: String,
    pub file: String,
    pub status: String,
    pub primary: Option<VulnClass>,
    pub findings: Vec<Finding>,
    pub witness: Option<TransactionSequence>,
    pub rounds_used: usize,
    pub started_at_secs: f64,
    pub wall_time_secs: f64,
    pub detected_at_secs: Option<f64>,
    pub fallbacks: usize,
    pub draft: Option<DraftRecord>,
    pub history: Vec<ReflectionRecord>,
}

impl ContractReport {
    pub fn new(model: &ContractModel, file: &Path, began: Duration, out: CrpOutcome) -> Self {
        let rounds_used = out.rounds_used();
        let wall = out.wall_time;
        let (primary, findings, witness) = match &out.status {
            CrpStatus::VulnerabilityFound { class, classes, witness, .. } => {
                (Some(*class), locate(model, witness, classes), Some(witness.clone()))
            }
            _ => (None, vec![], None),
        };
        ContractReport {
            name: model.name.clone(),
            file: file.display().to_string(),
            status: out.status.name().to_string(),
            primary,
            detected_at_secs: primary.map(|_| (began + wall).as_secs_f64()),
            findings,
            witness,
            rounds_used,
            started_at_secs: began.as_secs_f64(),
            wall_time_secs: wall.as_secs_f64(),
            fallbacks: out.fallbacks,
            draft: out.draft,
            history: out.history,
        }
    }

    pub fn found_classes(&self) -> impl Iterator<Item = VulnClass> + '_ {
        self.findings.iter().map(|f| f.class)
    }
}

fn locate(model: &ContractModel, witness: &TransactionSequence, classes: &[VulnClass]) -> Vec<Finding> {
    let pool = SeedPool::default();
    let trace = execute_sequence(model, &pool, witness);
    let report = run_all(model, &trace, &pool, &[]);
    classes
        .iter()
        .map(|&class| {
            let function = match report.verdicts.get(&class) {
                Some(Verdict::Found { witness }) => witness.last().and_then(|&i| trace.function_at(i)).map(str::to_string),
                _ => None,
            };
            Finding { class, severity: class.severity(), function }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErroredFile {
    pub file: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionPoint {
    pub time_secs: f64,
    pub cumulative: usize,
    pub contract: String,
    pub class: VulnClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub contracts: usize,
    pub found: usize,
    pub per_class: BTreeMap<VulnClass, usize>,
    /// Contracts found per reflection round.
    pub round_histogram: BTreeMap<usize, usize>,
    pub detections: Vec<DetectionPoint>,
}

impl Totals {
    pub fn from_contracts(contracts: &[ContractReport]) -> Self {
        let mut per_class: BTreeMap<VulnClass, usize> = VulnClass::ALL.into_iter().map(|c| (c, 0)).collect();
        for c in contracts {
            for class in c.found_classes() {
                *per_class.entry(class).or_default() += 1;
            }
        }
        let found: Vec<&ContractReport> = contracts.iter().filter(|c| c.primary.is_some()).collect();
        let mut order: Vec<&ContractReport> = found.clone();
        order.sort_by(|a, b| a.detected_at_secs.partial_cmp(&b.detected_at_secs).unwrap_or(std::cmp::Ordering::Equal));
        let detections = order
            .iter()
            .enumerate()
            .map(|(i, c)| DetectionPoint {
                time_secs: c.detected_at_secs.unwrap_or_default(),
                cumulative: i + 1,
                contract: c.name.clone(),
                class: c.primary.expect("filtered on found"),
            })
            .collect();
        Totals {
            contracts: contracts.len(),
            found: found.len(),
            per_class,
            round_histogram: round_histogram(found.iter().map(|c| c.rounds_used)),
            detections,
        }
    }
}

pub fn round_histogram(rounds: impl IntoIterator<Item = usize>) -> BTreeMap<usize, usize> {
    let mut bins = BTreeMap::new();
    for r in rounds {
        *bins.entry(r).or_default() += 1;
    }
    bins
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub backend: String,
    pub max_rounds: usize,
    pub max_seq_len: usize,
    pub contract_budget_secs: f64,
    pub total_budget_secs: f64,
    pub seed: u64,
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityReport {
    pub schema_version: u32,
    pub config: ReportConfig,
    pub contracts: Vec<ContractReport>,
    pub errored: Vec<ErroredFile>,
    /// Corpus files never started because the total budget ran out.
    pub skipped: Vec<String>,
    pub totals: Totals,
    pub wall_time_secs: f64,
}

impl VulnerabilityReport {
    pub fn new(
        cfg: &CampaignConfig,
        contracts: Vec<ContractReport>,
        errored: Vec<ErroredFile>,
        skipped: Vec<String>,
        wall: Duration,
    ) -> Self {
        VulnerabilityReport {
            schema_version: SCHEMA_VERSION,
            config: ReportConfig {
                backend: cfg.backend.name().to_string(),
                max_rounds: cfg.crp.max_reflection_rounds,
                max_seq_len: cfg.crp.max_sequence_len,
                contract_budget_secs: cfg.crp.per_contract_budget.as_secs_f64(),
                total_budget_secs: cfg.total_budget.as_secs_f64(),
                seed: cfg.crp.rng_seed,
                jobs: cfg.jobs,
            },
            totals: Totals::from_contracts(&contracts),
            contracts,
            errored,
            skipped,
            wall_time_secs: wall.as_secs_f64(),
        }
    }

    pub fn contract(&self, name: &str) -> Option<&ContractReport> {
        self.contracts.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Document,
    Table,
}

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const OVER_TIME_FILE: &str = "detections_over_time.csv";
pub const PER_ROUND_FILE: &str = "detections_per_round.csv";

/// Writes the report into directory `dir`; returns the files written.
pub fn emit_report(report: &VulnerabilityReport, format: ReportFormat, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    match format {
        ReportFormat::Document => {
            let path = dir.join(REPORT_FILE);
            std::fs::write(&path, report.to_json())?;
            Ok(vec![path])
        }
        ReportFormat::Table => {
            let summary = dir.join(SUMMARY_FILE);
            let mut w = csv::Writer::from_path(&summary)?;
            w.write_record(["contract", "file", "status", "classes", "severities", "functions", "rounds_used", "wall_time_secs", "witness_len"])?;
            for c in &report.contracts {
                let join = |f: &dyn Fn(&Finding) -> String| c.findings.iter().map(f).collect::<Vec<_>>().join(";");
                w.write_record([
                    c.name.clone(),
                    c.file.clone(),
                    c.status.clone(),
                    join(&|f| f.class.code().to_string()),
                    join(&|f| format!("{:?}", f.severity)),
                    join(&|f| f.function.clone().unwrap_or_default()),
                    c.rounds_used.to_string(),
                    format!("{:.6}", c.wall_time_secs),
                    c.witness.as_ref().map_or(String::new(), |s| s.len().to_string()),
                ])?;
            }
            w.flush()?;

            let over_time = dir.join(OVER_TIME_FILE);
            let mut w = csv::Writer::from_path(&over_time)?;
            w.write_record(["time_secs", "cumulative", "contract", "class"])?;
            for p in &report.totals.detections {
                w.write_record([format!("{:.6}", p.time_secs), p.cumulative.to_string(), p.contract.clone(), p.class.code().to_string()])?;
            }
            w.flush()?;

            let per_round = dir.join(PER_ROUND_FILE);
            let mut w = csv::Writer::from_path(&per_round)?;
            w.write_record(["round", "detections", "cumulative"])?;
            let mut cumulative = 0;
            for round in 0..=report.config.max_rounds {
                let n = report.totals.round_histogram.get(&round).copied().unwrap_or(0);
                cumulative += n;
                w.write_record([round.to_string(), n.to_string(), cumulative.to_string()])?;
            }
            w.flush()?;
            Ok(vec![summary, over_time, per_round])
        }
    }
}

/// Reads a report from a `report.json` file or a directory holding one.
pub fn read_report(path: &Path) -> Result<VulnerabilityReport, String> {
    let file = if path.is_dir() { path.join(REPORT_FILE) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
    let report: VulnerabilityReport = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", file.display()))?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(format!("{}: unsupported schema_version {}", file.display(), report.schema_version));
    }
    Ok(report)
}
