// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::{ProgramContext, TransactionSequence, ValueType};

/// A static defect in one element of one transaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementFault {
    pub index: usize,
    pub kind: FaultKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "snake_case")]
pub enum FaultKind {
    UnknownFunction { name: String },
    ArgArityMismatch { expected: usize, found: usize },
    ArgTypeMismatch { position: usize, expected: ValueType, found: ValueType },
    SenderNotInPool,
    AmountNotInPool { amount: u128 },
    ValueToNonPayable,
}

impl FaultKind {
    pub fn touches_function(&self) -> bool {
        matches!(self, FaultKind::UnknownFunction { .. })
    }

    pub fn touches_args(&self) -> bool {
        matches!(self, FaultKind::ArgArityMismatch { .. } | FaultKind::ArgTypeMismatch { .. })
    }

    pub fn touches_sender(&self) -> bool {
        matches!(self, FaultKind::SenderNotInPool)
    }

    pub fn touches_amount(&self) -> bool {
        matches!(self, FaultKind::AmountNotInPool { .. } | FaultKind::ValueToNonPayable)
    }
}

/// Statically checks every transaction against the callable interface and
/// the seed pool. An empty result means the sequence is well formed.
pub fn validate_sequence(seq: &TransactionSequence, ctx: &ProgramContext) -> Vec<ElementFault> {
    let mut faults = Vec::new();
    for (index, tx) in seq.txs.iter().enumerate() {
        let mut push = |kind| faults.push(ElementFault { index, kind });
        match ctx.descriptor(&tx.function) {
            None => push(FaultKind::UnknownFunction { name: tx.function.clone() }),
            Some(d) => {
                if d.params.len() != tx.args.len() {
                    push(FaultKind::ArgArityMismatch { expected: d.params.len(), found: tx.args.len() });
                } else {
                    for (position, (p, a)) in d.params.iter().zip(&tx.args).enumerate() {
                        if p.ty != a.value_type() {
                            push(FaultKind::ArgTypeMismatch { position, expected: p.ty, found: a.value_type() });
                        }
                    }
                }
                if tx.amount > 0 && !d.payable {
                    push(FaultKind::ValueToNonPayable);
                }
            }
        }
        if !ctx.seed_pool.contains_sender(tx.sender) {
            push(FaultKind::SenderNotInPool);
        }
        if !ctx.seed_pool.amounts().contains(&tx.amount) {
            push(FaultKind::AmountNotInPool { amount: tx.amount });
        }
    }
    faults
}
