// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use reflect_fuzz::feedback::RawSignalKind;
use reflect_fuzz::txmodel::{Origin, SeedPool, Transaction, TransactionSequence, Value};
use reflect_fuzz::vm::{
    deploy, execute_sequence, load_model, Executor, TraceEvent, TxStatus, DEFAULT_REENTRY_BOUND,
    GENESIS_BLOCK,
};

use common::{addr, ATTACKER, DEPLOYER, USER};

fn seq(txs: Vec<Transaction>) -> TransactionSequence {
    TransactionSequence::new(txs, Origin::Drafted)
}

#[test]
fn crowdsale_loads_with_its_interface() {
    let m = common::model("crowdsale");
    let names: Vec<&str> = m.functions.iter().map(|f| f.name()).collect();
    assert_eq!(names, ["invest", "setPhase", "setOwner", "withdraw", "refund"]);
}

#[test]
fn empty_function_list_is_a_valid_model() {
    let m = load_model(r#"{"name": "Empty", "functions": []}"#).unwrap();
    assert!(m.interface().is_empty());
}

#[test]
fn undeclared_slot_is_rejected() {
    let doc = r#"{"name": "Bad", "functions": [{"descriptor": {"name": "f"},
        "body": [{"assign": {"slot": "ghost", "value": {"lit": {"type": "uint", "value": "1"}}}}]}]}"#;
    let err = load_model(doc).unwrap_err();
    assert!(err.to_string().contains("ghost"), "{err}");
}

#[test]
fn deploy_binds_the_deployer() {
    let m = common::model("crowdsale");
    let s = deploy(&m, &SeedPool::default());
    assert_eq!(s.scalar("owner"), Some(&Value::Address(addr(DEPLOYER))));
    assert_eq!(s.scalar("phase"), Some(&Value::Uint(0)));
    assert_eq!(s.scalar("raised"), Some(&Value::Uint(0)));
    assert_eq!(s.block_number, GENESIS_BLOCK);
    assert_eq!(s, deploy(&m, &SeedPool::default()));
}

#[test]
fn deploy_uses_custom_funding() {
    let m = common::model("crowdsale");
    let overrides = BTreeMap::from([(addr(USER), 7u128), (addr(ATTACKER), 11u128)]);
    let pool = SeedPool::new(addr(DEPLOYER), vec![addr(USER)], vec![addr(ATTACKER)], vec![0, 1], 500, overrides).unwrap();
    let s = deploy(&m, &pool);
    assert_eq!(s.balance_of(addr(DEPLOYER)), 500);
    assert_eq!(s.balance_of(addr(USER)), 7);
    assert_eq!(s.balance_of(addr(ATTACKER)), 11);
    assert_eq!(s.balances.values().sum::<u128>(), 518);
}

#[test]
fn invest_with_goal_amount_raises_goal() {
    let m = common::model("crowdsale");
    let pool = SeedPool::default();
    let trace = execute_sequence(&m, &pool, &seq(vec![Transaction::new("invest", vec![], addr(USER), 1000)]));
    assert_eq!(trace.statuses, [TxStatus::Committed]);
    assert_eq!(trace.final_state.scalar("raised"), Some(&Value::Uint(1000)));
    assert_eq!(trace.final_state.contract_balance, 1000);
    assert!(trace.events.contains(&TraceEvent::EtherIn { from: addr(USER), amount: 1000 }));
}

#[test]
fn set_owner_writes_slot() {
    let m = common::model("crowdsale");
    let tx = Transaction::new("setOwner", vec![Value::Address(addr(ATTACKER))], addr(ATTACKER), 0);
    let trace = execute_sequence(&m, &SeedPool::default(), &seq(vec![tx]));
    assert_eq!(trace.statuses, [TxStatus::Committed]);
    assert!(trace.events.contains(&TraceEvent::StorageWrite {
        slot: "owner".into(),
        old: addr(DEPLOYER).to_string(),
        new: addr(ATTACKER).to_string(),
    }));
}

#[test]
fn withdraw_before_phase_reverts_and_rolls_back() {
    let m = common::model("crowdsale");
    let pool = SeedPool::default();
    let ex = Executor::new(&m, &pool);
    let invested = ex.execute_transaction(&ex.deploy(), 0, &Transaction::new("invest", vec![], addr(USER), 1000));
    let before = invested.state;
    let out = ex.execute_transaction(&before, 1, &Transaction::new("withdraw", vec![], addr(ATTACKER), 0));
    assert_eq!(out.status, TxStatus::Reverted);
    assert_eq!(out.state.to_bytes(), before.to_bytes());
    assert!(out.signals.iter().any(|s| matches!(s.kind, RawSignalKind::RequireFailed { .. })));
}

#[test]
fn crowdsale_attack_pays_the_attacker() {
    let m = common::model("crowdsale");
    let trace = execute_sequence(&m, &SeedPool::default(), &common::attack("crowdsale"));
    let last_out = trace.events.iter().rev().find(|e| matches!(e, TraceEvent::EtherOut { .. }));
    assert!(matches!(last_out, Some(TraceEvent::EtherOut { to, amount: 1000, .. }) if *to == addr(ATTACKER)));
}

#[test]
fn empty_sequence_is_identity() {
    let m = common::model("crowdsale");
    let trace = execute_sequence(&m, &SeedPool::default(), &seq(vec![]));
    assert!(!trace.events.iter().any(|e| matches!(e, TraceEvent::TxBegin { .. })));
    assert_eq!(trace.final_state, trace.genesis);
}

#[test]
fn nonce_advances_per_committed_tx() {
    let m = common::model("crowdsale");
    let tx = Transaction::new("invest", vec![], addr(USER), 10);
    let trace = execute_sequence(&m, &SeedPool::default(), &seq(vec![tx.clone(), tx]));
    let n = |s: &reflect_fuzz::vm::ChainState| s.nonces.get(&addr(USER)).copied().unwrap_or(0);
    assert_eq!(n(&trace.final_state), n(&trace.genesis) + 2);
}

#[test]
fn dead_contract_answers_function_not_found() {
    let m = common::model("sc_positive");
    let attack = common::attack("sc_positive");
    let mut txs = attack.txs.clone();
    txs.push(txs[txs.len() - 1].clone());
    let trace = execute_sequence(&m, &SeedPool::default(), &seq(txs));
    assert!(!trace.final_state.alive);
    let last = trace.raw_signals.iter().filter(|s| s.tx_index == trace.tx_count() - 1).collect::<Vec<_>>();
    assert!(last.iter().any(|s| matches!(s.kind, RawSignalKind::UnknownFunction)), "{last:?}");
}

#[test]
fn reentry_depth_is_bounded() {
    let m = common::model("re_positive");
    let trace = execute_sequence(&m, &SeedPool::default(), &common::attack("re_positive"));
    let depths: Vec<u32> = trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::ReenteredCall { depth, .. } => Some(*depth),
            _ => None,
        })
        .collect();
    assert!(!depths.is_empty());
    assert!(depths.iter().all(|d| *d <= DEFAULT_REENTRY_BOUND));
}

#[test]
fn execution_is_deterministic_and_pure() {
    for m in common::all_models() {
        let copy = m.clone();
        let s = seq(m.functions.iter().map(|f| Transaction::new(f.name(), vec![], addr(ATTACKER), 0)).collect());
        let a = execute_sequence(&m, &SeedPool::default(), &s);
        let b = execute_sequence(&m, &SeedPool::default(), &s);
        assert_eq!(a.to_bytes(), b.to_bytes(), "{}", m.name);
        assert_eq!(m, copy);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ether_is_conserved_and_failures_are_atomic((mi, txs) in common::arb_case()) {
        let models = common::all_models();
        let m = &models[mi];
        let pool = SeedPool::default();
        let ex = Executor::new(m, &pool);
        let mut state = ex.deploy();
        let total = state.total_ether();
        for (i, tx) in txs.iter().enumerate() {
            let out = ex.execute_transaction(&state, i, tx);
            prop_assert_eq!(out.state.total_ether(), total);
            if out.status != TxStatus::Committed {
                prop_assert_eq!(out.state.to_bytes(), state.to_bytes());
                let closed = matches!(out.events.last(), Some(TraceEvent::Reverted { .. }));
                prop_assert!(closed);
            }
            state = out.state;
        }
        let trace = ex.execute_sequence(&seq(txs));
        prop_assert_eq!(trace.final_state.total_ether(), total);
        prop_assert_eq!(trace.final_state.to_bytes(), state.to_bytes());
    }
}
