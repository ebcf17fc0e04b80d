// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::model::BlockField;
use super::state::ChainState;
use crate::feedback::RawSignal;
use crate::txmodel::Address;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    Send,
    Call,
    Selfdestruct,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    TxBegin { tx: usize, sender: Address, function: String, amount: u128 },
    Committed { tx: usize },
    Reverted { tx: usize, cause: String },
    EtherIn { from: Address, amount: u128 },
    EtherOut { to: Address, amount: u128, via: TransferKind },
    StorageWrite { slot: String, old: String, new: String },
    SelfDestructed { beneficiary: Address },
    DelegateCalled { target: Address, target_tainted_by_input: bool },
    LowLevelCallFailed { result_captured: bool },
    BlockFieldRead { field: BlockField },
    /// An `if` condition read a slot loaded from a block field in this tx.
    BranchOnBlockField { field: BlockField },
    TxOriginRead { in_guard: bool },
    ReenteredCall { depth: u32, caller: Address },
    ReentryReturned { depth: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Committed,
    /// Rejected before the body ran (unknown function, bad args, sender, payability).
    Rejected,
    /// The body reverted.
    Reverted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub genesis: ChainState,
    pub events: Vec<TraceEvent>,
    pub final_state: ChainState,
    pub raw_signals: Vec<RawSignal>,
    pub statuses: Vec<TxStatus>,
}

impl ExecutionTrace {
    pub fn tx_count(&self) -> usize {
        self.statuses.len()
    }

    /// Per event, the sender of the enclosing top-level transaction.
    pub fn tx_senders(&self) -> Vec<Option<Address>> {
        let mut current = None;
        self.events
            .iter()
            .map(|e| {
                if let TraceEvent::TxBegin { sender, .. } = e {
                    current = Some(*sender);
                }
                current
            })
            .collect()
    }

    /// Function of the top-level transaction enclosing event `i`.
    pub fn function_at(&self, i: usize) -> Option<&str> {
        self.events.get(..=i)?.iter().rev().find_map(|e| match e {
            TraceEvent::TxBegin { function, .. } => Some(function.as_str()),
            _ => None,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("trace serializes")
    }
}
