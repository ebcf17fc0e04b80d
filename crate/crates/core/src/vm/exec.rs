// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt;

use super::model::{BinOp, BlockField, ContractFunction, ContractModel, Expr, SlotType, Statement};
use super::state::{ChainState, StorageValue};
use super::trace::{ExecutionTrace, TraceEvent, TransferKind, TxStatus};
use crate::feedback::{RawSignal, RawSignalKind};
use crate::txmodel::{Address, SeedPool, Transaction, TransactionSequence, Value};

pub const DEFAULT_REENTRY_BOUND: u32 = 2;
pub const GENESIS_BLOCK: u64 = 1;
pub const GENESIS_TIMESTAMP: u64 = 1_700_000_000;
/// Seconds added to the timestamp by every committed transaction.
pub const BLOCK_INTERVAL: u64 = 15;

/// Why a body stopped early. Every cause rolls back the transaction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RevertCause {
    Require { guard: String, on_value: bool },
    Explicit,
    TransferFailed,
    Arithmetic(&'static str),
}

impl fmt::Display for RevertCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RevertCause::Require { guard, .. } => write!(f, "require failed: {guard}"),
            RevertCause::Explicit => f.write_str("explicit revert"),
            RevertCause::TransferFailed => f.write_str("transfer failed: insufficient contract balance"),
            RevertCause::Arithmetic(what) => write!(f, "arithmetic error: {what}"),
        }
    }
}

/// Call-frame view used when evaluating expressions.
#[derive(Clone, Debug)]
pub struct Frame<'f> {
    pub function: &'f ContractFunction,
    pub args: &'f [Value],
    pub sender: Address,
    pub value: u128,
    pub origin: Address,
    pub depth: u32,
}

impl Frame<'_> {
    fn param(&self, name: &str) -> Option<&Value> {
        self.function
            .descriptor
            .params
            .iter()
            .position(|p| p.name == name)
            .and_then(|i| self.args.get(i))
    }
}

/// Result of running one transaction against a state.
#[derive(Clone, Debug)]
pub struct TxOutcome {
    pub state: ChainState,
    pub events: Vec<TraceEvent>,
    pub signals: Vec<RawSignal>,
    pub status: TxStatus,
}

/// Deterministic interpreter for one contract model and one seed pool.
///
/// This is the executor seam: a backend running real bytecode would expose
/// the same `deploy` / `execute_transaction` / `execute_sequence` surface.
#[derive(Clone, Copy, Debug)]
pub struct Executor<'a> {
    model: &'a ContractModel,
    pool: &'a SeedPool,
    reentry_bound: u32,
}

impl<'a> Executor<'a> {
    pub fn new(model: &'a ContractModel, pool: &'a SeedPool) -> Self {
        Executor { model, pool, reentry_bound: DEFAULT_REENTRY_BOUND }
    }

    pub fn with_reentry_bound(mut self, bound: u32) -> Self {
        self.reentry_bound = bound;
        self
    }

    pub fn model(&self) -> &'a ContractModel {
        self.model
    }

    pub fn pool(&self) -> &'a SeedPool {
        self.pool
    }

    /// Fresh genesis state.
    pub fn deploy(&self) -> ChainState {
        let mut storage = BTreeMap::new();
        for slot in &self.model.storage {
            let value = match slot.ty {
                SlotType::Map => StorageValue::Map(BTreeMap::new()),
                SlotType::Scalar(t) => StorageValue::Scalar(slot.init.clone().unwrap_or_else(|| Value::zero(t))),
            };
            storage.insert(slot.name.clone(), value);
        }
        if let Some(slot) = &self.model.deployer_slot {
            storage.insert(slot.clone(), StorageValue::Scalar(Value::Address(self.pool.deployer())));
        }
        ChainState {
            storage,
            contract_balance: self.model.balance,
            balances: self.pool.funding().clone(),
            nonces: self.pool.funding().keys().map(|a| (*a, 0)).collect(),
            block_number: GENESIS_BLOCK,
            timestamp: GENESIS_TIMESTAMP,
            alive: true,
        }
    }

    pub fn execute_transaction(&self, state: &ChainState, index: usize, tx: &Transaction) -> TxOutcome {
        let begin = TraceEvent::TxBegin {
            tx: index,
            sender: tx.sender,
            function: tx.function.clone(),
            amount: tx.amount,
        };
        let reject = |kind: RawSignalKind, detail: String| TxOutcome {
            state: state.clone(),
            events: vec![begin.clone(), TraceEvent::Reverted { tx: index, cause: detail.clone() }],
            signals: vec![RawSignal { tx_index: index, kind, detail }],
            status: TxStatus::Rejected,
        };

        let function = match self.model.callable_function(&tx.function) {
            Some(f) if state.alive => f,
            Some(_) => return reject(RawSignalKind::UnknownFunction, "contract has self-destructed".into()),
            None => {
                return reject(RawSignalKind::UnknownFunction, format!("no callable function `{}`", tx.function))
            }
        };
        let d = &function.descriptor;
        if d.params.len() != tx.args.len() {
            return reject(
                RawSignalKind::ArityOrTypeMismatch,
                format!("`{}` takes {} arguments, got {}", d.name, d.params.len(), tx.args.len()),
            );
        }
        if let Some((i, (p, a))) =
            d.params.iter().zip(&tx.args).enumerate().find(|(_, (p, a))| p.ty != a.value_type())
        {
            return reject(
                RawSignalKind::ArityOrTypeMismatch,
                format!("argument {i} of `{}` must be {}, got {}", d.name, p.ty, a.value_type()),
            );
        }
        if !state.nonces.contains_key(&tx.sender) {
            return reject(RawSignalKind::BadNonce, format!("unknown sender account {}", tx.sender));
        }
        if state.balance_of(tx.sender) < tx.amount {
            return reject(
                RawSignalKind::InsufficientBalance,
                format!("sender {} holds {} < {}", tx.sender, state.balance_of(tx.sender), tx.amount),
            );
        }
        if tx.amount > 0 && !d.payable {
            return reject(RawSignalKind::ValueToNonpayable, format!("`{}` is not payable", d.name));
        }

        let mut m = Machine { exec: self, state: state.clone(), events: vec![begin.clone()], taint: BTreeMap::new() };
        if tx.amount > 0 {
            *m.state.balances.get_mut(&tx.sender).expect("sender checked") -= tx.amount;
            m.state.contract_balance += tx.amount;
            m.events.push(TraceEvent::EtherIn { from: tx.sender, amount: tx.amount });
        }
        let frame = Frame {
            function,
            args: &tx.args,
            sender: tx.sender,
            value: tx.amount,
            origin: tx.sender,
            depth: 0,
        };
        match m.exec_block(&function.body, &frame) {
            Ok(_) => {
                let mut state = m.state;
                *state.nonces.get_mut(&tx.sender).expect("sender checked") += 1;
                state.block_number += 1;
                state.timestamp += BLOCK_INTERVAL;
                m.events.push(TraceEvent::Committed { tx: index });
                TxOutcome { state, events: m.events, signals: vec![], status: TxStatus::Committed }
            }
            Err(cause) => {
                let (kind, detail) = match &cause {
                    RevertCause::Require { guard, on_value: true } if d.payable => {
                        (RawSignalKind::ValueConstraintViolation, guard.clone())
                    }
                    RevertCause::Require { guard, .. } => {
                        (RawSignalKind::RequireFailed { guard: guard.clone() }, guard.clone())
                    }
                    other => (RawSignalKind::Reverted, other.to_string()),
                };
                TxOutcome {
                    state: state.clone(),
                    events: vec![begin, TraceEvent::Reverted { tx: index, cause: cause.to_string() }],
                    signals: vec![RawSignal { tx_index: index, kind, detail }],
                    status: TxStatus::Reverted,
                }
            }
        }
    }

    /// Deploys a fresh genesis and folds every transaction over it.
    pub fn execute_sequence(&self, seq: &TransactionSequence) -> ExecutionTrace {
        self.execute_prefix(&seq.txs)
    }

    pub fn execute_prefix(&self, txs: &[Transaction]) -> ExecutionTrace {
        let genesis = self.deploy();
        let mut state = genesis.clone();
        let mut events = Vec::new();
        let mut raw_signals = Vec::new();
        let mut statuses = Vec::with_capacity(txs.len());
        for (i, tx) in txs.iter().enumerate() {
            let out = self.execute_transaction(&state, i, tx);
            state = out.state;
            events.extend(out.events);
            raw_signals.extend(out.signals);
            statuses.push(out.status);
        }
        ExecutionTrace { genesis, events, final_state: state, raw_signals, statuses }
    }

    /// Side-effect free evaluation of `expr` in `frame` over `state`.
    pub fn evaluate(&self, state: &ChainState, frame: &Frame<'_>, expr: &Expr) -> Result<Value, RevertCause> {
        let mut m = Machine { exec: self, state: state.clone(), events: Vec::new(), taint: BTreeMap::new() };
        m.eval(expr, frame, false)
    }
}

pub fn deploy(model: &ContractModel, pool: &SeedPool) -> ChainState {
    Executor::new(model, pool).deploy()
}

pub fn execute_transaction(
    state: &ChainState,
    index: usize,
    tx: &Transaction,
    model: &ContractModel,
    pool: &SeedPool,
) -> TxOutcome {
    Executor::new(model, pool).execute_transaction(state, index, tx)
}

pub fn execute_sequence(model: &ContractModel, pool: &SeedPool, seq: &TransactionSequence) -> ExecutionTrace {
    Executor::new(model, pool).execute_sequence(seq)
}

enum Flow {
    Next,
    Halt,
}

struct Machine<'e, 'a> {
    exec: &'e Executor<'a>,
    state: ChainState,
    events: Vec<TraceEvent>,
    /// Slots holding block-derived values in the current transaction.
    taint: BTreeMap<String, BlockField>,
}

impl Machine<'_, '_> {
    fn eval(&mut self, e: &Expr, fr: &Frame<'_>, in_guard: bool) -> Result<Value, RevertCause> {
        Ok(match e {
            Expr::Lit(v) => v.clone(),
            Expr::Slot(s) => self.state.scalar(s).cloned().expect("slot resolved at load"),
            Expr::Param(p) => fr.param(p).cloned().expect("param resolved at load"),
            Expr::MapGet { slot, key } => {
                let key = self.eval(key, fr, in_guard)?.as_address().expect("typed at load");
                Value::Uint(self.state.map_entry(slot, key))
            }
            Expr::MsgSender => Value::Address(fr.sender),
            Expr::MsgValue => Value::Uint(fr.value),
            Expr::TxOrigin => {
                self.events.push(TraceEvent::TxOriginRead { in_guard });
                Value::Address(fr.origin)
            }
            Expr::SelfBalance => Value::Uint(self.state.contract_balance),
            Expr::Not(inner) => Value::Bool(!self.eval(inner, fr, in_guard)?.as_bool().expect("typed at load")),
            Expr::Bin { op: BinOp::And, lhs, rhs } => {
                let l = self.eval(lhs, fr, in_guard)?.as_bool().expect("typed at load");
                Value::Bool(l && self.eval(rhs, fr, in_guard)?.as_bool().expect("typed at load"))
            }
            Expr::Bin { op: BinOp::Or, lhs, rhs } => {
                let l = self.eval(lhs, fr, in_guard)?.as_bool().expect("typed at load");
                Value::Bool(l || self.eval(rhs, fr, in_guard)?.as_bool().expect("typed at load"))
            }
            Expr::Bin { op, lhs, rhs } => {
                let l = self.eval(lhs, fr, in_guard)?;
                let r = self.eval(rhs, fr, in_guard)?;
                binary(*op, &l, &r)?
            }
        })
    }

    fn eval_address(&mut self, e: &Expr, fr: &Frame<'_>) -> Result<Address, RevertCause> {
        Ok(self.eval(e, fr, false)?.as_address().expect("typed at load"))
    }

    fn eval_uint(&mut self, e: &Expr, fr: &Frame<'_>) -> Result<u128, RevertCause> {
        Ok(self.eval(e, fr, false)?.as_uint().expect("typed at load"))
    }

    fn tainted_by(&self, e: &Expr) -> Option<BlockField> {
        e.slots_read().iter().find_map(|s| self.taint.get(s).copied())
    }

    fn write_scalar(&mut self, slot: &str, new: Value) {
        let old = self.state.scalar(slot).map(Value::to_text).unwrap_or_default();
        self.events.push(TraceEvent::StorageWrite { slot: slot.to_string(), old, new: new.to_text() });
        self.state.storage.insert(slot.to_string(), StorageValue::Scalar(new));
    }

    fn transfer_out(&mut self, to: Address, amount: u128, via: TransferKind) {
        self.state.contract_balance -= amount;
        *self.state.balances.entry(to).or_insert(0) += amount;
        if amount > 0 {
            self.events.push(TraceEvent::EtherOut { to, amount, via });
        }
    }

    fn exec_block(&mut self, stmts: &[Statement], fr: &Frame<'_>) -> Result<Flow, RevertCause> {
        for s in stmts {
            if let Flow::Halt = self.exec_statement(s, fr)? {
                return Ok(Flow::Halt);
            }
        }
        Ok(Flow::Next)
    }

    fn exec_statement(&mut self, s: &Statement, fr: &Frame<'_>) -> Result<Flow, RevertCause> {
        match s {
            Statement::Require(cond) => {
                if !self.eval(cond, fr, true)?.as_bool().expect("typed at load") {
                    return Err(RevertCause::Require { guard: cond.to_string(), on_value: cond.reads_msg_value() });
                }
            }
            Statement::Assign { slot, value } => {
                let v = self.eval(value, fr, false)?;
                match self.tainted_by(value) {
                    Some(field) => self.taint.insert(slot.clone(), field),
                    None => self.taint.remove(slot),
                };
                self.write_scalar(slot, v);
            }
            Statement::MapSet { slot, key, value } => {
                let key = self.eval_address(key, fr)?;
                let v = self.eval_uint(value, fr)?;
                let old = self.state.map_entry(slot, key);
                self.events.push(TraceEvent::StorageWrite {
                    slot: format!("{slot}[{key}]"),
                    old: old.to_string(),
                    new: v.to_string(),
                });
                if let Some(StorageValue::Map(m)) = self.state.storage.get_mut(slot) {
                    m.insert(key, v);
                }
            }
            Statement::Send { to, amount } => {
                let to = self.eval_address(to, fr)?;
                let amount = self.eval_uint(amount, fr)?;
                if amount > self.state.contract_balance {
                    return Err(RevertCause::TransferFailed);
                }
                self.transfer_out(to, amount, TransferKind::Send);
            }
            Statement::LowLevelCall { to, amount, capture } => {
                let to = self.eval_address(to, fr)?;
                let amount = self.eval_uint(amount, fr)?;
                let ok = amount <= self.state.contract_balance;
                if ok {
                    self.transfer_out(to, amount, TransferKind::Call);
                    self.maybe_reenter(to, fr);
                } else {
                    self.events.push(TraceEvent::LowLevelCallFailed { result_captured: capture.is_some() });
                }
                if let Some(slot) = capture {
                    self.taint.remove(slot);
                    self.write_scalar(slot, Value::Bool(ok));
                }
            }
            Statement::DelegateCall { target } => {
                let addr = self.eval_address(target, fr)?;
                self.events.push(TraceEvent::DelegateCalled {
                    target: addr,
                    target_tainted_by_input: target.reads_param(),
                });
            }
            Statement::SelfDestruct { beneficiary } => {
                let to = self.eval_address(beneficiary, fr)?;
                let all = self.state.contract_balance;
                self.transfer_out(to, all, TransferKind::Selfdestruct);
                self.events.push(TraceEvent::SelfDestructed { beneficiary: to });
                self.state.alive = false;
                return Ok(Flow::Halt);
            }
            Statement::If { cond, then_branch, else_branch } => {
                let taken = self.eval(cond, fr, true)?.as_bool().expect("typed at load");
                if let Some(field) = self.tainted_by(cond) {
                    self.events.push(TraceEvent::BranchOnBlockField { field });
                }
                let branch = if taken { then_branch } else { else_branch };
                return self.exec_block(branch, fr);
            }
            Statement::ReadBlockField { field, into } => {
                let v = match field {
                    BlockField::Timestamp => self.state.timestamp,
                    BlockField::Number => self.state.block_number,
                };
                self.events.push(TraceEvent::BlockFieldRead { field: *field });
                self.write_scalar(into, Value::Uint(v as u128));
                self.taint.insert(into.clone(), *field);
            }
            Statement::Revert => return Err(RevertCause::Explicit),
        }
        Ok(Flow::Next)
    }

    /// Runs the attacker callback when ether reaches an attacker account.
    /// A reverting callback rolls back only its own effects.
    fn maybe_reenter(&mut self, to: Address, fr: &Frame<'_>) {
        let model = self.exec.model;
        if !self.exec.pool.is_attacker(to) || model.attacker_callback.is_empty() || fr.depth >= self.exec.reentry_bound {
            return;
        }
        let depth = fr.depth + 1;
        self.events.push(TraceEvent::ReenteredCall { depth, caller: to });
        for cb in &model.attacker_callback {
            if !self.state.alive {
                break;
            }
            let Some(function) = model.callable_function(&cb.function) else { continue };
            let saved = (self.state.clone(), self.events.len(), self.taint.clone());
            let inner = Frame { function, args: &cb.args, sender: to, value: 0, origin: fr.origin, depth };
            if self.exec_block(&function.body, &inner).is_err() {
                self.state = saved.0;
                self.events.truncate(saved.1);
                self.taint = saved.2;
            }
        }
        self.events.push(TraceEvent::ReentryReturned { depth });
    }
}

fn binary(op: BinOp, l: &Value, r: &Value) -> Result<Value, RevertCause> {
    use Value::{Bool, Int, Uint};
    let overflow = RevertCause::Arithmetic("overflow");
    let by_zero = RevertCause::Arithmetic("division by zero");
    Ok(match (op, l, r) {
        (BinOp::Eq, a, b) => Bool(a == b),
        (BinOp::Ne, a, b) => Bool(a != b),
        (BinOp::Lt, Uint(a), Uint(b)) => Bool(a < b),
        (BinOp::Le, Uint(a), Uint(b)) => Bool(a <= b),
        (BinOp::Gt, Uint(a), Uint(b)) => Bool(a > b),
        (BinOp::Ge, Uint(a), Uint(b)) => Bool(a >= b),
        (BinOp::Lt, Int(a), Int(b)) => Bool(a < b),
        (BinOp::Le, Int(a), Int(b)) => Bool(a <= b),
        (BinOp::Gt, Int(a), Int(b)) => Bool(a > b),
        (BinOp::Ge, Int(a), Int(b)) => Bool(a >= b),
        (BinOp::Add, Uint(a), Uint(b)) => Uint(a.checked_add(*b).ok_or(overflow)?),
        (BinOp::Sub, Uint(a), Uint(b)) => Uint(a.checked_sub(*b).ok_or(overflow)?),
        (BinOp::Mul, Uint(a), Uint(b)) => Uint(a.checked_mul(*b).ok_or(overflow)?),
        (BinOp::Div, Uint(a), Uint(b)) => Uint(a.checked_div(*b).ok_or(by_zero)?),
        (BinOp::Mod, Uint(a), Uint(b)) => Uint(a.checked_rem(*b).ok_or(by_zero)?),
        (BinOp::Add, Int(a), Int(b)) => Int(a.checked_add(*b).ok_or(overflow)?),
        (BinOp::Sub, Int(a), Int(b)) => Int(a.checked_sub(*b).ok_or(overflow)?),
        (BinOp::Mul, Int(a), Int(b)) => Int(a.checked_mul(*b).ok_or(overflow)?),
        (BinOp::Div, Int(a), Int(b)) => {
            if *b == 0 {
                return Err(by_zero);
            }
            Int(a.checked_div(*b).ok_or(overflow)?)
        }
        (BinOp::Mod, Int(a), Int(b)) => {
            if *b == 0 {
                return Err(by_zero);
            }
            Int(a.checked_rem(*b).ok_or(overflow)?)
        }
        (BinOp::And, Bool(a), Bool(b)) => Bool(*a && *b),
        (BinOp::Or, Bool(a), Bool(b)) => Bool(*a || *b),
        _ => unreachable!("operand types checked at load"),
    })
}
