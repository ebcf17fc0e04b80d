// SPDX-License-Identifier: Apache-2.0

//! The reflection loop: draft, test, revise globally, revise per element.

mod apply;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use apply::{apply, apply_action, Applied, BadIndex};

use crate::agents::{enforce_permissions, profile, AgentAction, AgentId, PolicyBackend, PolicyError, PolicyInput};
use crate::clock::{Clock, SystemClock};
use crate::feedback::{translate_with_summary, Feedback, DEFAULT_SUMMARY_CAP};
use crate::oracles::{run_all, OracleReport, VulnClass};
use crate::txmodel::{ProgramContext, TransactionSequence};
use crate::vm::{ContractModel, ExecutionTrace, Executor, TraceEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Drafting,
    Testing,
    GlobalReflection,
    LocalReflection,
}

/// Phases of a reflection round with the agents bound to each, in order.
pub fn round_schedule() -> Vec<(Phase, Vec<AgentId>)> {
    vec![
        (Phase::Testing, vec![]),
        (Phase::GlobalReflection, vec![AgentId::TxSeqRefiner]),
        (Phase::LocalReflection, AgentId::CHECKERS.to_vec()),
    ]
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrpConfig {
    pub max_reflection_rounds: usize,
    pub max_sequence_len: usize,
    pub per_contract_budget: Duration,
    pub rng_seed: u64,
    pub summary_cap: usize,
}

impl Default for CrpConfig {
    fn default() -> Self {
        CrpConfig {
            max_reflection_rounds: 10,
            max_sequence_len: 10,
            per_contract_budget: Duration::from_secs(600),
            rng_seed: 0,
            summary_cap: DEFAULT_SUMMARY_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    pub round: usize,
    pub state_before: TransactionSequence,
    pub actions: Vec<AgentAction>,
    pub feedback: Feedback,
    pub state_after: TransactionSequence,
    /// Edits stripped by permission enforcement this round.
    pub violations: usize,
    pub bad_indices: Vec<BadIndex>,
    /// Set when no agent changed anything.
    pub no_repair: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CrpStatus {
    VulnerabilityFound { class: VulnClass, classes: Vec<VulnClass>, witness: TransactionSequence, round: usize },
    ExhaustedRounds,
    BudgetExceeded,
    NoRepair,
}

impl CrpStatus {
    pub fn name(&self) -> &'static str {
        match self {
            CrpStatus::VulnerabilityFound { .. } => "vulnerability_found",
            CrpStatus::ExhaustedRounds => "exhausted_rounds",
            CrpStatus::BudgetExceeded => "budget_exceeded",
            CrpStatus::NoRepair => "no_repair",
        }
    }
}

/// Round 0: the drafted sequence and its test feedback.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftRecord {
    pub seq: TransactionSequence,
    pub feedback: Feedback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrpOutcome {
    pub status: CrpStatus,
    pub draft: Option<DraftRecord>,
    pub history: Vec<ReflectionRecord>,
    pub wall_time: Duration,
    pub fallbacks: usize,
}

impl CrpOutcome {
    /// Reflection rounds that ran before the loop stopped.
    pub fn rounds_used(&self) -> usize {
        match &self.status {
            CrpStatus::VulnerabilityFound { round, .. } => *round,
            _ => self.history.len(),
        }
    }
}

/// Result of one Testing phase.
pub struct Tested {
    pub trace: ExecutionTrace,
    pub report: OracleReport,
    pub feedback: Feedback,
}

/// Runs `seq` from a fresh deployment, evaluates the oracles and translates.
pub fn test_sequence(
    model: &ContractModel,
    ctx: &ProgramContext,
    seq: &TransactionSequence,
    history: &[ExecutionTrace],
    summary_cap: usize,
) -> Tested {
    let trace = Executor::new(model, &ctx.seed_pool).execute_sequence(seq);
    let report = run_all(model, &trace, &ctx.seed_pool, history);
    let feedback = translate_with_summary(&trace.raw_signals, &report, seq, summary_cap);
    Tested { trace, report, feedback }
}

/// Everything a loop accumulates while testing.
#[derive(Default)]
struct Tests {
    seqs: Vec<TransactionSequence>,
    traces: Vec<ExecutionTrace>,
}

impl Tests {
    fn run(&mut self, model: &ContractModel, ctx: &ProgramContext, seq: &TransactionSequence, cap: usize) -> Tested {
        let t = test_sequence(model, ctx, seq, &self.traces, cap);
        self.seqs.push(seq.clone());
        self.traces.push(t.trace.clone());
        t
    }

    /// Sequence that reproduces `class` on its own.
    fn witness(&self, class: VulnClass, current: &TransactionSequence, trace: &ExecutionTrace) -> TransactionSequence {
        let deposits = |t: &ExecutionTrace| t.events.iter().any(|e| matches!(e, TraceEvent::EtherIn { amount, .. } if *amount > 0));
        if class == VulnClass::EF && !deposits(trace) {
            if let Some(i) = self.traces.iter().position(deposits) {
                return self.seqs[i].clone();
            }
        }
        current.clone()
    }
}

fn found_status(tests: &Tests, t: &Tested, seq: &TransactionSequence, round: usize) -> Option<CrpStatus> {
    let class = t.feedback.found_class()?;
    Some(CrpStatus::VulnerabilityFound {
        class,
        classes: t.report.found(),
        witness: tests.witness(class, seq, &t.trace),
        round,
    })
}

fn ask(
    backend: &mut dyn PolicyBackend,
    agent: AgentId,
    input: &PolicyInput<'_>,
) -> Option<AgentAction> {
    let result = match agent {
        AgentId::TxSeqRefiner => backend.reflect_global(input),
        _ => backend.check_element(agent, input),
    };
    match result {
        Ok(a) => Some(a),
        Err(PolicyError::NoRepairAvailable) => None,
        Err(e) => {
            log::warn!("{agent}: {e}");
            None
        }
    }
}

/// Reflection round `round` on `seq`, given the feedback of testing it.
fn reflect(
    round: usize,
    seq: &TransactionSequence,
    feedback: Feedback,
    ctx: &ProgramContext,
    model: &ContractModel,
    backend: &mut dyn PolicyBackend,
    cfg: &CrpConfig,
) -> ReflectionRecord {
    let mut actions: Vec<AgentAction> = Vec::new();
    let mut violations = 0;
    let mut bad_indices = Vec::new();
    let mut current = seq.clone();
    let mut local_feedback = feedback.clone();
    let mut refined = false;

    for (phase, agents) in round_schedule() {
        for agent in agents {
            let input = PolicyInput {
                ctx,
                model,
                seq: &current,
                feedback: &local_feedback,
                round,
                seed: cfg.rng_seed,
                max_len: cfg.max_sequence_len,
                refined,
            };
            let Some(raw) = ask(backend, agent, &input) else { continue };
            let enforced = enforce_permissions(raw, &profile(agent));
            violations += enforced.violations;
            if enforced.action.is_noop() {
                continue;
            }
            let applied = apply_action(&current, &enforced.action, cfg.max_sequence_len);
            bad_indices.extend(applied.bad);
            if phase == Phase::GlobalReflection {
                refined = applied.seq.txs != current.txs;
                let map = applied.index_map.clone();
                local_feedback = local_feedback.remap(|i| map.get(i).copied().flatten());
            }
            current = applied.seq;
            actions.push(enforced.action);
        }
    }

    let no_repair = actions.is_empty();
    ReflectionRecord {
        round,
        state_before: seq.clone(),
        actions,
        feedback,
        state_after: current,
        violations,
        bad_indices,
        no_repair,
    }
}

/// One full round: test `seq`; stop on a finding, else reflect.
pub fn run_round(
    round: usize,
    seq: &TransactionSequence,
    ctx: &ProgramContext,
    model: &ContractModel,
    backend: &mut dyn PolicyBackend,
    cfg: &CrpConfig,
) -> ReflectionRecord {
    let t = test_sequence(model, ctx, seq, &[], cfg.summary_cap);
    if t.feedback.is_stop() {
        return stop_record(round, seq, t.feedback);
    }
    reflect(round, seq, t.feedback, ctx, model, backend, cfg)
}

fn stop_record(round: usize, seq: &TransactionSequence, feedback: Feedback) -> ReflectionRecord {
    ReflectionRecord {
        round,
        state_before: seq.clone(),
        actions: vec![],
        feedback,
        state_after: seq.clone(),
        violations: 0,
        bad_indices: vec![],
        no_repair: false,
    }
}

pub fn run_crp(model: &ContractModel, ctx: &ProgramContext, backend: &mut dyn PolicyBackend, cfg: &CrpConfig) -> CrpOutcome {
    run_crp_with_clock(model, ctx, backend, cfg, &SystemClock::start())
}

pub fn run_crp_with_clock(
    model: &ContractModel,
    ctx: &ProgramContext,
    backend: &mut dyn PolicyBackend,
    cfg: &CrpConfig,
    clock: &dyn Clock,
) -> CrpOutcome {
    let fallbacks_before = backend.fallback_count();
    let start = clock.elapsed();
    let mut history = Vec::new();
    let mut tests = Tests::default();
    let finish = |status, draft, history, backend: &dyn PolicyBackend| CrpOutcome {
        status,
        draft,
        history,
        wall_time: clock.elapsed().saturating_sub(start),
        fallbacks: backend.fallback_count() - fallbacks_before,
    };

    let mut seq = match backend.draft(ctx, model, cfg.rng_seed, cfg.max_sequence_len) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("{}: drafting failed: {e}", model.name);
            return finish(CrpStatus::NoRepair, None, history, backend);
        }
    };
    let t = tests.run(model, ctx, &seq, cfg.summary_cap);
    let draft = Some(DraftRecord { seq: seq.clone(), feedback: t.feedback.clone() });
    if let Some(status) = found_status(&tests, &t, &seq, 0) {
        return finish(status, draft, history, backend);
    }

    let mut pending = Some(t);
    for round in 1..=cfg.max_reflection_rounds {
        if clock.elapsed().saturating_sub(start) > cfg.per_contract_budget {
            return finish(CrpStatus::BudgetExceeded, draft, history, backend);
        }
        let t = match pending.take() {
            Some(t) => t,
            None => tests.run(model, ctx, &seq, cfg.summary_cap),
        };
        if let Some(status) = found_status(&tests, &t, &seq, round) {
            history.push(stop_record(round, &seq, t.feedback));
            return finish(status, draft, history, backend);
        }
        let record = reflect(round, &seq, t.feedback, ctx, model, backend, cfg);
        let no_repair = record.no_repair;
        seq = record.state_after.clone();
        history.push(record);
        if no_repair {
            return finish(CrpStatus::NoRepair, draft, history, backend);
        }
    }

    if cfg.max_reflection_rounds > 0 {
        let t = tests.run(model, ctx, &seq, cfg.summary_cap);
        if let Some(status) = found_status(&tests, &t, &seq, cfg.max_reflection_rounds) {
            return finish(status, draft, history, backend);
        }
    }
    finish(CrpStatus::ExhaustedRounds, draft, history, backend)
}
