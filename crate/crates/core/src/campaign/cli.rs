// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{discover_corpus, emit_report, load_target, read_report, run_campaign, BackendConfig, CampaignConfig, ReportFormat};
use crate::agents::LlmConfig;
use crate::crp::CrpConfig;
use crate::oracles::run_all;
use crate::txmodel::{decode_sequence, validate_sequence, TransactionSequence};
use crate::vm::execute_sequence;

pub const ENDPOINT_ENV: &str = "REFLECT_FUZZ_LLM_ENDPOINT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CORPUS: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "reflect-fuzz", version, about = "Reflective multi-agent fuzzer for smart contract models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a fuzzing campaign over a corpus of contract models.
    Fuzz(FuzzArgs),
    /// Execute an encoded sequence and print the trace and oracle report.
    Exec(SequenceArgs),
    /// Statically validate an encoded sequence against a model.
    Validate(SequenceArgs),
    /// Re-run the witnesses of a report and confirm their classes.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Heuristic,
    Llm,
}

#[derive(Debug, Args)]
pub struct FuzzArgs {
    /// Contract model file or directory of `*.json` models.
    #[arg(long, required = true, num_args = 1..)]
    pub corpus: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = BackendKind::Heuristic)]
    pub backend: BackendKind,
    #[arg(long)]
    pub llm_endpoint: Option<String>,
    #[arg(long, default_value = "llama3")]
    pub llm_model: String,
    #[arg(long, default_value_t = 60)]
    pub llm_timeout_secs: u64,
    #[arg(long, default_value_t = 10)]
    pub max_rounds: usize,
    #[arg(long, default_value_t = 10)]
    pub max_seq_len: usize,
    #[arg(long, default_value_t = 600)]
    pub contract_budget_secs: u64,
    #[arg(long, default_value_t = 1800)]
    pub total_budget_secs: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory for the report files.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SequenceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub sequence: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Report file or the directory it was emitted into.
    #[arg(long)]
    pub report: PathBuf,
    /// Only replay this contract.
    #[arg(long)]
    pub contract: Option<String>,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match cli.command {
        Command::Fuzz(a) => fuzz(a),
        Command::Exec(a) => exec(a),
        Command::Validate(a) => validate(a),
        Command::Replay(a) => replay(a),
    }
}

fn usage(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_USAGE
}

fn campaign_config(a: &FuzzArgs) -> Result<CampaignConfig, String> {
    if a.contract_budget_secs == 0 {
        return Err("--contract-budget-secs must be positive".into());
    }
    if a.total_budget_secs == 0 {
        return Err("--total-budget-secs must be positive".into());
    }
    if a.max_seq_len == 0 {
        return Err("--max-seq-len must be positive".into());
    }
    if a.jobs == 0 {
        return Err("--jobs must be positive".into());
    }
    let backend = match a.backend {
        BackendKind::Heuristic => BackendConfig::Heuristic,
        BackendKind::Llm => {
            let endpoint = a
                .llm_endpoint
                .clone()
                .or_else(|| std::env::var(ENDPOINT_ENV).ok())
                .ok_or_else(|| format!("--backend llm needs --llm-endpoint or {ENDPOINT_ENV}"))?;
            let mut cfg = LlmConfig::new(endpoint, a.llm_model.clone());
            cfg.timeout = Duration::from_secs(a.llm_timeout_secs);
            BackendConfig::Llm(cfg)
        }
    };
    Ok(CampaignConfig {
        corpus: vec![],
        crp: CrpConfig {
            max_reflection_rounds: a.max_rounds,
            max_sequence_len: a.max_seq_len,
            per_contract_budget: Duration::from_secs(a.contract_budget_secs),
            rng_seed: a.seed,
            ..CrpConfig::default()
        },
        backend,
        total_budget: Duration::from_secs(a.total_budget_secs),
        jobs: a.jobs,
        output: Some(a.out.clone()),
    })
}

fn fuzz(a: FuzzArgs) -> i32 {
    let mut cfg = match campaign_config(&a) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    for path in &a.corpus {
        match discover_corpus(path) {
            Ok(files) => cfg.corpus.extend(files),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CORPUS;
            }
        }
    }
    let report = match run_campaign(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CORPUS;
        }
    };
    for format in [ReportFormat::Document, ReportFormat::Table] {
        if let Err(e) = emit_report(&report, format, &a.out) {
            eprintln!("error: writing report to {}: {e}", a.out.display());
            return EXIT_USAGE;
        }
    }
    for c in &report.contracts {
        let classes: Vec<&str> = c.found_classes().map(|k| k.code()).collect();
        println!("{}: {} {} rounds={} time={:.3}s", c.name, c.status, classes.join(","), c.rounds_used, c.wall_time_secs);
    }
    for f in &report.errored {
        eprintln!("error: {}: {}", f.file, f.error);
    }
    println!("found {}/{}; report written to {}", report.totals.found, report.totals.contracts, a.out.display());
    if report.errored.is_empty() {
        EXIT_OK
    } else {
        EXIT_CORPUS
    }
}

fn load_sequence(path: &Path) -> Result<TransactionSequence, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    decode_sequence(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn exec(a: SequenceArgs) -> i32 {
    let target = match load_target(&a.model) {
        Ok(t) => t,
        Err(e) => return usage(format!("{}: {e}", a.model.display())),
    };
    let seq = match load_sequence(&a.sequence) {
        Ok(s) => s,
        Err(e) => return usage(e),
    };
    let trace = execute_sequence(&target.model, &target.ctx.seed_pool, &seq);
    let report = run_all(&target.model, &trace, &target.ctx.seed_pool, &[]);
    let doc = serde_json::json!({ "trace": trace, "oracles": report });
    println!("{}", serde_json::to_string_pretty(&doc).expect("trace serializes"));
    EXIT_OK
}

fn validate(a: SequenceArgs) -> i32 {
    let target = match load_target(&a.model) {
        Ok(t) => t,
        Err(e) => return usage(format!("{}: {e}", a.model.display())),
    };
    let seq = match load_sequence(&a.sequence) {
        Ok(s) => s,
        Err(e) => return usage(e),
    };
    let faults = validate_sequence(&seq, &target.ctx);
    println!("{}", serde_json::to_string_pretty(&faults).expect("faults serialize"));
    EXIT_OK
}

fn replay(a: ReplayArgs) -> i32 {
    let report = match read_report(&a.report) {
        Ok(r) => r,
        Err(e) => return usage(e),
    };
    let selected: Vec<_> = report.contracts.iter().filter(|c| a.contract.as_ref().is_none_or(|n| *n == c.name)).collect();
    if selected.is_empty() {
        return usage(format!("no contract {} in report", a.contract.unwrap_or_default()));
    }
    let mut code = EXIT_OK;
    for c in selected {
        let (Some(class), Some(witness)) = (c.primary, &c.witness) else {
            println!("{}: {} (nothing to replay)", c.name, c.status);
            continue;
        };
        let target = match load_target(Path::new(&c.file)) {
            Ok(t) => t,
            Err(e) => return usage(format!("{}: {e}", c.file)),
        };
        let trace = execute_sequence(&target.model, &target.ctx.seed_pool, witness);
        let found = run_all(&target.model, &trace, &target.ctx.seed_pool, &[]).found();
        if found.contains(&class) {
            println!("{}: {} reproduced", c.name, class.code());
        } else {
            println!("{}: {} NOT reproduced", c.name, class.code());
            code = EXIT_USAGE;
        }
    }
    code
}
