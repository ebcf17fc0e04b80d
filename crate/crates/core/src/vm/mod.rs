// SPDX-License-Identifier: Apache-2.0

//! Deterministic interpreter for contract models.

mod exec;
mod model;
mod state;
mod trace;

pub use exec::{
    deploy, execute_sequence, execute_transaction, Executor, Frame, RevertCause, TxOutcome, BLOCK_INTERVAL,
    DEFAULT_REENTRY_BOUND, GENESIS_BLOCK, GENESIS_TIMESTAMP,
};
pub use model::{
    load_model, BinOp, BlockField, CallbackCall, ContractFunction, ContractModel, Expr, ModelError, SlotType,
    Statement, StorageSlot,
};
pub use state::{ChainState, StorageValue};
pub use trace::{ExecutionTrace, TraceEvent, TransferKind, TxStatus};
