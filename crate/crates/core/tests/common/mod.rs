// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

use std::path::PathBuf;

use proptest::prelude::*;
use reflect_fuzz::txmodel::{decode_sequence, Address, ProgramContext, SeedPool, Transaction, TransactionSequence, Value, ValueType};
use reflect_fuzz::vm::{load_model, ContractModel};

pub const DEPLOYER: u64 = 0x1000;
pub const USER: u64 = 0x2001;
pub const ATTACKER: u64 = 0xa001;

pub fn addr(n: u64) -> Address {
    Address::from_low_u64(n)
}

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn model(name: &str) -> ContractModel {
    load_model(&std::fs::read_to_string(fixtures().join(format!("{name}.json"))).unwrap()).unwrap()
}

pub fn ctx(name: &str) -> (ContractModel, ProgramContext) {
    let text = std::fs::read_to_string(fixtures().join(format!("{name}.json"))).unwrap();
    let model = load_model(&text).unwrap();
    let ctx = ProgramContext::new(text, model.interface(), SeedPool::default());
    (model, ctx)
}

pub fn attack(name: &str) -> TransactionSequence {
    decode_sequence(&std::fs::read_to_string(fixtures().join(format!("attacks/{name}.json"))).unwrap()).unwrap()
}

/// Every model fixture, including the toys.
pub fn all_models() -> Vec<ContractModel> {
    let mut names: Vec<String> = vec!["crowdsale".into()];
    for class in ["el", "sc", "bd", "ue", "ud", "ef", "re", "to"] {
        names.push(format!("{class}_positive"));
        names.push(format!("{class}_negative"));
    }
    for toy in ["toy_latch", "toy_vault", "toy_bank"] {
        names.push(format!("toys/{toy}"));
    }
    names.iter().map(|n| model(n)).collect()
}

pub fn arb_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        prop::sample::select(vec![0u128, 1, 2, 100, 1000, u128::MAX]).prop_map(Value::Uint),
        prop::sample::select(vec![0i128, -1, 1]).prop_map(Value::Int),
        any::<bool>().prop_map(Value::Bool),
        prop::sample::select(vec![DEPLOYER, USER, ATTACKER, 0xa002, 0]).prop_map(|n| Value::Address(addr(n))),
    ]
}

/// Typed arguments most of the time so that bodies actually run.
pub fn args_for(m: &ContractModel, f: usize) -> BoxedStrategy<Vec<Value>> {
    let Some(func) = m.functions.get(f) else {
        return prop::collection::vec(arb_value(), 0..2).boxed();
    };
    let typed: Vec<BoxedStrategy<Value>> = func
        .descriptor
        .params
        .iter()
        .map(|p| match p.ty {
            ValueType::Uint => prop::sample::select(vec![0u128, 1, 2, 10, 100, 1000]).prop_map(Value::Uint).boxed(),
            ValueType::Address => prop::sample::select(vec![DEPLOYER, USER, ATTACKER]).prop_map(|n| Value::Address(addr(n))).boxed(),
            ValueType::Bool => any::<bool>().prop_map(Value::Bool).boxed(),
            _ => arb_value().boxed(),
        })
        .collect();
    prop_oneof![9 => typed, 1 => prop::collection::vec(arb_value(), 0..3)].boxed()
}

pub fn arb_case() -> impl Strategy<Value = (usize, Vec<Transaction>)> {
    let models = all_models();
    let n = models.len();
    (0..n).prop_flat_map(move |mi| {
        let m = models[mi].clone();
        let nf = m.functions.len();
        let tx = (0..nf + 1).prop_flat_map(move |f| {
            let name = m.functions.get(f).map_or("ghost".to_string(), |func| func.name().to_string());
            (
                Just(name),
                args_for(&m, f),
                prop::sample::select(vec![DEPLOYER, USER, 0x2002, ATTACKER, 0xa002, 0xdead]),
                prop::sample::select(vec![0u128, 0, 1, 10, 100, 1000, 10_000, 5_000_000]),
            )
                .prop_map(|(name, args, s, amount)| Transaction::new(name, args, addr(s), amount))
        });
        (Just(mi), prop::collection::vec(tx, 0..8))
    })
}
