// SPDX-License-Identifier: Apache-2.0

mod common;

use std::time::Duration;

use proptest::prelude::*;
use reflect_fuzz::agents::{
    AgentAction, AgentId, FieldChange, FieldEdit, HeuristicBackend, PolicyBackend, PolicyError, PolicyInput,
    StructuralEdit,
};
use reflect_fuzz::clock::TickClock;
use reflect_fuzz::crp::{apply, apply_action, run_crp, run_crp_with_clock, run_round, CrpConfig, CrpStatus};
use reflect_fuzz::feedback::FeedbackKind;
use reflect_fuzz::oracles::{run_all, VulnClass};
use reflect_fuzz::txmodel::{Address, Origin, ProgramContext, SeedPool, Transaction, TransactionSequence, Value};
use reflect_fuzz::vm::{execute_sequence, ContractModel, TraceEvent};

const USER: u64 = 0x2001;
const ATTACKER: u64 = 0xa001;

fn addr(n: u64) -> Address {
    Address::from_low_u64(n)
}

fn seq(txs: Vec<Transaction>) -> TransactionSequence {
    TransactionSequence::new(txs, Origin::Drafted)
}

#[test]
fn refiner_inserts_phase_setter_before_withdraw() {
    let (model, ctx) = common::ctx("crowdsale");
    let s = seq(vec![
        Transaction::new("invest", vec![], addr(USER), 1000),
        Transaction::new("withdraw", vec![], addr(ATTACKER), 0),
    ]);
    let r = run_round(1, &s, &ctx, &model, &mut HeuristicBackend::new(), &CrpConfig::default());
    let names: Vec<&str> = r.state_after.txs.iter().map(|t| t.function.as_str()).collect();
    let phase = names.iter().position(|n| *n == "setPhase").expect("setPhase inserted");
    let withdraw = names.iter().rposition(|n| *n == "withdraw").unwrap();
    assert!(phase < withdraw, "{names:?}");
    assert_eq!(r.state_after.txs[phase].args, vec![Value::Uint(1)]);
    assert_eq!(r.actions[0].agent, AgentId::TxSeqRefiner);
}

#[test]
fn stop_round_records_nothing() {
    let (model, ctx) = common::ctx("crowdsale");
    let attack = common::attack("crowdsale");
    let r = run_round(1, &attack, &ctx, &model, &mut HeuristicBackend::new(), &CrpConfig::default());
    assert!(r.feedback.is_stop());
    assert!(r.actions.is_empty());
    assert_eq!(r.state_after, r.state_before);
}

#[test]
fn misspelled_function_only_changes_that_field() {
    let (model, ctx) = common::ctx("crowdsale");
    let s = seq(vec![Transaction::new("withdrw", vec![], addr(ATTACKER), 0)]);
    let r = run_round(1, &s, &ctx, &model, &mut HeuristicBackend::new(), &CrpConfig::default());
    assert_eq!(r.feedback.at(0), [FeedbackKind::FunctionNotFound]);
    assert_eq!(r.state_after.len(), 1);
    let mut expected = s.txs[0].clone();
    expected.function = "withdraw".into();
    assert_eq!(r.state_after.txs[0], expected);
}

#[test]
fn crowdsale_run_is_replayable_and_ordered() {
    let (model, ctx) = common::ctx("crowdsale");
    let cfg = CrpConfig::default();
    let out = run_crp(&model, &ctx, &mut HeuristicBackend::new(), &cfg);
    let CrpStatus::VulnerabilityFound { class, witness, round, .. } = &out.status else { panic!("{:?}", out.status) };
    assert_eq!(*class, VulnClass::EL);
    assert!(*round <= cfg.max_reflection_rounds);
    let trace = execute_sequence(&model, &SeedPool::default(), witness);
    assert_eq!(run_all(&model, &trace, &SeedPool::default(), &[]).primary(), Some(VulnClass::EL));

    assert!(out.history.len() <= cfg.max_reflection_rounds);
    for (k, r) in out.history.iter().enumerate() {
        assert_eq!(r.round, k + 1);
        assert_eq!(apply(&r.state_before, &r.actions, cfg.max_sequence_len).seq, r.state_after);
        let order: Vec<usize> = r.actions.iter().map(|a| phase_rank(a.agent)).collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]), "{order:?}");
        if r.feedback.is_stop() {
            assert!(r.actions.is_empty());
            assert_eq!(k + 1, out.history.len());
        }
    }
}

fn phase_rank(a: AgentId) -> usize {
    match a {
        AgentId::TxSeqDrafter => 0,
        AgentId::TxSeqRefiner => 1,
        AgentId::FunChecker => 2,
        AgentId::ArgChecker => 3,
        AgentId::SNDChecker => 4,
        AgentId::AMTChecker => 5,
    }
}

#[test]
fn outcome_is_deterministic() {
    let (model, ctx) = common::ctx("crowdsale");
    let cfg = CrpConfig::default();
    let mut a = run_crp(&model, &ctx, &mut HeuristicBackend::new(), &cfg);
    let mut b = run_crp(&model, &ctx, &mut HeuristicBackend::new(), &cfg);
    a.wall_time = Duration::ZERO;
    b.wall_time = Duration::ZERO;
    assert_eq!(a, b);
}

#[test]
fn never_vulnerable_fixture_honours_round_bound() {
    let (model, ctx) = common::ctx("el_negative");
    for rounds in [0, 1, 3, 10] {
        let cfg = CrpConfig { max_reflection_rounds: rounds, ..CrpConfig::default() };
        let out = run_crp(&model, &ctx, &mut HeuristicBackend::new(), &cfg);
        assert_eq!(out.status, CrpStatus::ExhaustedRounds);
        assert_eq!(out.history.len(), rounds);
    }
}

#[test]
fn tiny_budget_is_exceeded() {
    let (model, ctx) = common::ctx("el_negative");
    let cfg = CrpConfig { per_contract_budget: Duration::from_millis(1), ..CrpConfig::default() };
    let clock = TickClock::new(Duration::from_micros(400));
    let out = run_crp_with_clock(&model, &ctx, &mut HeuristicBackend::new(), &cfg, &clock);
    assert_eq!(out.status, CrpStatus::BudgetExceeded);
    assert!(out.history.len() < cfg.max_reflection_rounds);
}

/// Drafts one call and then never proposes anything.
struct Idle;

impl PolicyBackend for Idle {
    fn name(&self) -> &'static str {
        "idle"
    }

    fn draft(&mut self, ctx: &ProgramContext, _: &ContractModel, _: u64, _: usize) -> Result<TransactionSequence, PolicyError> {
        let f = ctx.interface.first().ok_or(PolicyError::EmptyInterface)?;
        Ok(seq(vec![Transaction::new(f.name.clone(), vec![], addr(USER), 0)]))
    }

    fn reflect_global(&mut self, _: &PolicyInput<'_>) -> Result<AgentAction, PolicyError> {
        Err(PolicyError::NoRepairAvailable)
    }

    fn check_element(&mut self, agent: AgentId, _: &PolicyInput<'_>) -> Result<AgentAction, PolicyError> {
        Ok(AgentAction::noop(agent, "nothing to do"))
    }
}

/// Asks every checker to edit every field, and the Refiner to restructure.
struct Greedy;

impl PolicyBackend for Greedy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn draft(&mut self, ctx: &ProgramContext, m: &ContractModel, s: u64, n: usize) -> Result<TransactionSequence, PolicyError> {
        Idle.draft(ctx, m, s, n)
    }

    fn reflect_global(&mut self, input: &PolicyInput<'_>) -> Result<AgentAction, PolicyError> {
        let mut a = AgentAction::noop(AgentId::TxSeqRefiner, "");
        a.structure.push(StructuralEdit::Insert { at: input.seq.len(), tx: input.seq.txs[0].clone() });
        Ok(a)
    }

    fn check_element(&mut self, agent: AgentId, _: &PolicyInput<'_>) -> Result<AgentAction, PolicyError> {
        let mut a = AgentAction::noop(agent, "");
        a.edits = vec![
            FieldEdit::new(0, FieldChange::Function("ghost".into())),
            FieldEdit::new(0, FieldChange::Args(vec![])),
            FieldEdit::new(0, FieldChange::Sender(addr(ATTACKER))),
            FieldEdit::new(0, FieldChange::Amount(0)),
        ];
        a.structure.push(StructuralEdit::Delete { index: 0 });
        Ok(a)
    }
}

#[test]
fn idle_backend_ends_with_no_repair() {
    let (model, ctx) = common::ctx("el_negative");
    let out = run_crp(&model, &ctx, &mut Idle, &CrpConfig::default());
    assert_eq!(out.status, CrpStatus::NoRepair);
    assert_eq!(out.history.len(), 1);
    assert!(out.history[0].no_repair);
}

#[test]
fn empty_interface_is_no_repair() {
    let model = reflect_fuzz::vm::load_model(r#"{"name": "Empty", "functions": []}"#).unwrap();
    let ctx = ProgramContext::new("", vec![], SeedPool::default());
    let out = run_crp(&model, &ctx, &mut HeuristicBackend::new(), &CrpConfig::default());
    assert_eq!(out.status, CrpStatus::NoRepair);
    assert!(out.draft.is_none());
}

#[test]
fn checker_edits_are_confined_to_their_field() {
    let (model, ctx) = common::ctx("el_negative");
    let cfg = CrpConfig { max_reflection_rounds: 1, ..CrpConfig::default() };
    let out = run_crp(&model, &ctx, &mut Greedy, &cfg);
    let r = &out.history[0];
    // Each checker tried three foreign edits plus one structural edit.
    assert_eq!(r.violations, 4 * 4);
    for a in &r.actions {
        if a.agent != AgentId::TxSeqRefiner {
            assert!(a.structure.is_empty());
            assert_eq!(a.edits.len(), 1);
        }
    }
    assert_eq!(r.state_after.len(), 2);
    assert_eq!(r.state_after.txs[0].function, "ghost");
}

fn tx(n: u8) -> Transaction {
    Transaction::new(format!("t{n}"), vec![], addr(USER), 0)
}

fn arb_action(max_index: usize) -> impl Strategy<Value = AgentAction> {
    let edit = (0..max_index + 2, 0u8..4, any::<u8>()).prop_map(|(i, f, v)| {
        let change = match f {
            0 => FieldChange::Function(format!("e{v}")),
            1 => FieldChange::Args(vec![Value::Uint(v as u128)]),
            2 => FieldChange::Sender(addr(v as u64)),
            _ => FieldChange::Amount(v as u128),
        };
        FieldEdit::new(i, change)
    });
    let structural = prop_oneof![
        4 => (0..max_index + 2, any::<u8>()).prop_map(|(at, v)| StructuralEdit::Insert { at, tx: tx(100 + v % 100) }),
        4 => (0..max_index + 2).prop_map(|index| StructuralEdit::Delete { index }),
        4 => (0..max_index + 2, 0..max_index + 2).prop_map(|(from, to)| StructuralEdit::Move { from, to }),
        1 => prop::collection::vec(any::<u8>(), 0..4).prop_map(|v| StructuralEdit::Replace { txs: v.into_iter().map(tx).collect() }),
    ];
    (prop::collection::vec(edit, 0..4), prop::collection::vec(structural, 0..4), prop::sample::select(AgentId::ALL.to_vec()))
        .prop_map(|(edits, structure, agent)| AgentAction { agent, edits, structure, rationale: String::new() })
}

/// Sequential reference: each element carries a label naming its input
/// position; every structural edit looks its anchor up by label.
fn reference(input: &[Transaction], action: &AgentAction, max_len: usize) -> (Vec<Transaction>, usize, Vec<Option<usize>>) {
    let n = input.len();
    let mut items: Vec<(Option<usize>, Transaction)> = input.iter().cloned().enumerate().map(|(i, t)| (Some(i), t)).collect();
    let mut bad = 0;
    for e in &action.edits {
        if e.tx < n {
            e.change.apply_to(&mut items[e.tx].1);
        } else {
            bad += 1;
        }
    }
    let find = |items: &Vec<(Option<usize>, Transaction)>, label: usize| items.iter().position(|(l, _)| *l == Some(label));
    for s in &action.structure {
        match s {
            StructuralEdit::Insert { at, tx } => {
                let pos = if *at == n { Some(items.len()) } else { find(&items, *at) };
                match pos {
                    None => bad += 1,
                    Some(p) => {
                        if items.len() < max_len {
                            items.insert(p, (None, tx.clone()));
                        }
                    }
                }
            }
            StructuralEdit::Delete { index } => match find(&items, *index) {
                Some(p) => {
                    items.remove(p);
                }
                None => bad += 1,
            },
            StructuralEdit::Move { from, to } => match find(&items, *from) {
                None => bad += 1,
                Some(p) => {
                    let moving = items.remove(p);
                    let target = if *to == n {
                        Some(items.len())
                    } else if to == from {
                        Some(p)
                    } else {
                        find(&items, *to)
                    };
                    match target {
                        Some(q) => items.insert(q, moving),
                        None => {
                            bad += 1;
                            items.insert(p, moving);
                        }
                    }
                }
            },
            StructuralEdit::Replace { txs } => {
                items = txs.iter().take(max_len).cloned().map(|t| (None, t)).collect();
            }
        }
    }
    let mut map = vec![None; n];
    for (k, (l, _)) in items.iter().enumerate() {
        if let Some(l) = l {
            map[*l] = Some(k);
        }
    }
    (items.into_iter().map(|(_, t)| t).collect(), bad, map)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn apply_matches_reference(
        input in prop::collection::vec(any::<u8>(), 0..6),
        actions in prop::collection::vec(arb_action(6), 0..4),
        max_len in 1usize..9,
    ) {
        let input: Vec<Transaction> = input.into_iter().map(tx).collect();
        let start = seq(input.clone());
        let mut cur = input;
        let mut total_bad = 0;
        let mut map: Vec<Option<usize>> = (0..start.len()).map(Some).collect();
        for a in &actions {
            let single = apply_action(&seq(cur.clone()), a, max_len);
            let (want, bad, step_map) = reference(&cur, a, max_len);
            prop_assert_eq!(&single.seq.txs, &want);
            prop_assert_eq!(single.bad.len(), bad);
            prop_assert_eq!(&single.index_map, &step_map);
            map = map.iter().map(|m| m.and_then(|k| step_map[k])).collect();
            total_bad += bad;
            cur = want;
        }
        let folded = apply(&start, &actions, max_len);
        prop_assert_eq!(&folded.seq.txs, &cur);
        prop_assert_eq!(folded.bad.len(), total_bad);
        prop_assert_eq!(&folded.index_map, &map);
        if start.len() <= max_len {
            prop_assert!(folded.seq.len() <= max_len);
        }
    }
}

#[test]
fn fresh_genesis_each_round() {
    let (model, ctx) = common::ctx("crowdsale");
    let out = run_crp(&model, &ctx, &mut HeuristicBackend::new(), &CrpConfig::default());
    let genesis = reflect_fuzz::vm::deploy(&model, &ctx.seed_pool);
    for r in &out.history {
        let trace = execute_sequence(&model, &ctx.seed_pool, &r.state_before);
        assert_eq!(trace.genesis.to_bytes(), genesis.to_bytes());
        assert!(matches!(trace.events.first(), None | Some(TraceEvent::TxBegin { .. })));
    }
}
