// SPDX-License-Identifier: Apache-2.0

mod common;

use proptest::prelude::*;
use reflect_fuzz::feedback::RawSignalKind;
use reflect_fuzz::txmodel::{
    decode_sequence, encode_sequence, validate_sequence, Address, FaultKind, Origin, ProgramContext, SeedPool,
    Transaction, TransactionSequence, Value,
};
use reflect_fuzz::vm::execute_sequence;

fn arb_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<u128>().prop_map(Value::Uint),
        any::<i128>().prop_map(Value::Int),
        any::<bool>().prop_map(Value::Bool),
        any::<[u8; 20]>().prop_map(|b| Value::Address(Address(b))),
        prop::collection::vec(any::<u8>(), 0..8).prop_map(Value::Bytes),
        ".{0,12}".prop_map(Value::Str),
    ]
}

fn arb_tx() -> impl Strategy<Value = Transaction> {
    ("[a-zA-Z_][a-zA-Z0-9_]{0,10}", prop::collection::vec(arb_value(), 0..4), any::<[u8; 20]>(), any::<u128>())
        .prop_map(|(f, args, s, amount)| Transaction::new(f, args, Address(s), amount))
}

fn arb_origin() -> impl Strategy<Value = Origin> {
    prop::sample::select(vec![Origin::Drafted, Origin::GloballyReflected, Origin::LocallyReflected])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn codec_round_trips(txs in prop::collection::vec(arb_tx(), 0..6), origin in arb_origin()) {
        let s = TransactionSequence::new(txs, origin);
        let text = encode_sequence(&s);
        prop_assert_eq!(decode_sequence(&text).unwrap(), s);
    }
}

#[test]
fn decode_rejects_bad_records() {
    let neg = r#"{"txs": [{"function": "f", "args": [], "sender": "0x0000000000000000000000000000000000002001", "amount": "-5"}]}"#;
    assert!(decode_sequence(neg).is_err());
    let unknown = r#"{"txs": [{"function": "f", "args": [{"type": "float", "value": "1"}], "sender": "0x0000000000000000000000000000000000002001", "amount": "0"}]}"#;
    assert!(decode_sequence(unknown).is_err());
    let missing = r#"{"txs": [{"function": "f", "args": [], "amount": "0"}]}"#;
    assert!(decode_sequence(missing).is_err());
}

fn runtime_kind_matches(fault: &FaultKind, kind: &RawSignalKind) -> bool {
    match fault {
        FaultKind::UnknownFunction { .. } => *kind == RawSignalKind::UnknownFunction,
        FaultKind::ArgArityMismatch { .. } | FaultKind::ArgTypeMismatch { .. } => *kind == RawSignalKind::ArityOrTypeMismatch,
        FaultKind::SenderNotInPool => *kind == RawSignalKind::BadNonce,
        FaultKind::ValueToNonPayable => *kind == RawSignalKind::ValueToNonpayable,
        FaultKind::AmountNotInPool { .. } => false,
    }
}

fn crowdsale_tx() -> impl Strategy<Value = Transaction> {
    let fns = vec!["invest", "setPhase", "setOwner", "withdraw", "refund", "mintGold"];
    let arg = prop_oneof![
        prop::sample::select(vec![0u128, 1, 2]).prop_map(Value::Uint),
        Just(Value::Address(Address::from_low_u64(0xa001))),
        Just(Value::Str("abc".into())),
    ];
    (
        prop::sample::select(fns),
        prop::collection::vec(arg, 0..2),
        prop::sample::select(vec![0x1000u64, 0x2001, 0xa001, 0xbeef]),
        prop::sample::select(vec![0u128, 1, 1000, 7]),
    )
        .prop_map(|(f, args, s, amount)| Transaction::new(f, args, Address::from_low_u64(s), amount))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// A statically faulty transaction is rejected at runtime by one of its
    /// own faults (the pool-amount check has no runtime counterpart).
    #[test]
    fn validation_is_sound(txs in prop::collection::vec(crowdsale_tx(), 1..5)) {
        let (model, ctx): (_, ProgramContext) = common::ctx("crowdsale");
        let seq = TransactionSequence::new(txs, Origin::Drafted);
        let faults = validate_sequence(&seq, &ctx);
        let trace = execute_sequence(&model, &SeedPool::default(), &seq);
        for i in 0..seq.len() {
            let mine: Vec<&FaultKind> = faults
                .iter()
                .filter(|f| f.index == i && !matches!(f.kind, FaultKind::AmountNotInPool { .. }))
                .map(|f| &f.kind)
                .collect();
            if mine.is_empty() {
                continue;
            }
            let signals: Vec<&RawSignalKind> = trace.raw_signals.iter().filter(|s| s.tx_index == i).map(|s| &s.kind).collect();
            let matched = signals.iter().any(|k| mine.iter().any(|f| runtime_kind_matches(f, k)));
            prop_assert!(matched, "tx {} faults {:?} signals {:?}", i, mine, signals);
        }
    }
}
