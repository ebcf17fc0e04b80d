// SPDX-License-Identifier: Apache-2.0

//! Guard-directed sequence construction by simulation.
//!
//! To make a call go through, the planner first varies the call's own knobs
//! (arguments, amount) for the preferred sender, then tries prepending calls
//! to functions that write the slots the call's guards read, and finally
//! falls back to other senders. Every candidate is checked by replaying it.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::txmodel::{Address, FunctionDescriptor, SeedPool, Transaction, Value, ValueType};
use crate::vm::{ContractFunction, ContractModel, Executor, Expr, Statement, TxStatus};

const MAX_ARG_COMBOS: usize = 48;
const DEFAULT_SIM_BUDGET: usize = 4000;

/// Boundary-value argument source, plus literals found in the model.
#[derive(Clone, Debug)]
pub struct ArgGenerator {
    deployer: Address,
    attackers: Vec<Address>,
    others: Vec<Address>,
    literals: BTreeSet<Value>,
}

impl ArgGenerator {
    pub fn new(model: &ContractModel, pool: &SeedPool) -> Self {
        let mut literals = BTreeSet::new();
        for f in &model.functions {
            f.walk(|s| for_each_expr(s, &mut |e| {
                e.visit(&mut |e| {
                    if let Expr::Lit(v) = e {
                        literals.insert(v.clone());
                    }
                })
            }));
        }
        let mut others: Vec<Address> = vec![pool.deployer()];
        others.extend_from_slice(pool.users());
        ArgGenerator { deployer: pool.deployer(), attackers: pool.attackers().to_vec(), others, literals }
    }

    pub fn boundary(&self, ty: ValueType) -> Vec<Value> {
        match ty {
            ValueType::Uint => vec![Value::Uint(0), Value::Uint(1), Value::Uint(u128::MAX)],
            ValueType::Int => vec![Value::Int(0), Value::Int(1), Value::Int(-1), Value::Int(i128::MAX), Value::Int(i128::MIN)],
            ValueType::Bool => vec![Value::Bool(false), Value::Bool(true)],
            ValueType::Address => vec![Value::Address(self.deployer), Value::Address(self.attackers[0])],
            ValueType::Bytes => vec![Value::Bytes(vec![]), Value::Bytes(vec![0xff])],
            ValueType::String => vec![Value::Str(String::new()), Value::Str("a".into())],
        }
    }

    /// Every value worth trying for `ty`, in preference order.
    pub fn candidates(&self, ty: ValueType) -> Vec<Value> {
        let mut out: Vec<Value> = match ty {
            ValueType::Address => {
                self.attackers.iter().chain(&self.others).map(|a| Value::Address(*a)).collect()
            }
            _ => {
                let mut v = self.boundary(ty);
                let max = v.iter().position(|x| matches!(x, Value::Uint(u128::MAX) | Value::Int(i128::MAX)));
                let lits = self.literals.iter().filter(|l| l.value_type() == ty).cloned();
                match max {
                    Some(at) => {
                        let tail = v.split_off(at);
                        v.extend(lits);
                        v.extend(tail);
                    }
                    None => v.extend(lits),
                }
                v
            }
        };
        let mut seen = BTreeSet::new();
        out.retain(|v| seen.insert(v.clone()));
        out
    }

    pub fn sample(&self, ty: ValueType, rng: &mut ChaCha8Rng) -> Value {
        self.boundary(ty).choose(rng).cloned().expect("boundary sets are non-empty")
    }

    pub fn sample_args(&self, d: &FunctionDescriptor, rng: &mut ChaCha8Rng) -> Vec<Value> {
        d.param_types().map(|t| self.sample(t, rng)).collect()
    }

    /// Argument lists for `d`: the seeded sample first, then the product of
    /// per-type candidates, capped.
    pub fn arg_combos(&self, d: &FunctionDescriptor, seed: u64) -> Vec<Vec<Value>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = self.sample_args(d, &mut rng);
        let mut out = vec![first.clone()];
        let mut combos: Vec<Vec<Value>> = vec![vec![]];
        for ty in d.param_types() {
            let cands = self.candidates(ty);
            let mut next = Vec::new();
            'outer: for prefix in &combos {
                for c in &cands {
                    let mut p = prefix.clone();
                    p.push(c.clone());
                    next.push(p);
                    if next.len() >= MAX_ARG_COMBOS {
                        break 'outer;
                    }
                }
            }
            combos = next;
        }
        out.extend(combos.into_iter().filter(|c| *c != first));
        out
    }
}

fn for_each_expr(s: &Statement, f: &mut impl FnMut(&Expr)) {
    match s {
        Statement::Require(e) => f(e),
        Statement::Assign { value, .. } => f(value),
        Statement::MapSet { key, value, .. } => {
            f(key);
            f(value)
        }
        Statement::Send { to, amount } | Statement::LowLevelCall { to, amount, .. } => {
            f(to);
            f(amount)
        }
        Statement::DelegateCall { target } => f(target),
        Statement::SelfDestruct { beneficiary } => f(beneficiary),
        Statement::If { cond, .. } => f(cond),
        Statement::ReadBlockField { .. } | Statement::Revert => {}
    }
}

/// Slots a function's guards depend on, looking through top-level
/// assignments that precede each guard.
pub fn guard_slots(f: &ContractFunction) -> BTreeSet<String> {
    let mut subst: BTreeMap<String, Expr> = BTreeMap::new();
    let mut slots = BTreeSet::new();
    fn visit(stmts: &[Statement], subst: &mut BTreeMap<String, Expr>, slots: &mut BTreeSet<String>) {
        for s in stmts {
            match s {
                Statement::Require(e) => slots.extend(e.substitute(subst).slots_read()),
                Statement::If { cond, then_branch, else_branch } => {
                    slots.extend(cond.substitute(subst).slots_read());
                    visit(then_branch, &mut subst.clone(), slots);
                    visit(else_branch, &mut subst.clone(), slots);
                }
                Statement::Assign { slot, value } => {
                    let v = value.substitute(subst);
                    subst.insert(slot.clone(), v);
                }
                _ => {}
            }
        }
    }
    visit(&f.body, &mut subst, &mut slots);
    slots
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Intent {
    /// The call we ultimately want to land.
    Target,
    /// A call made to put state in place for a later call.
    Setter,
}

pub struct Planner<'a> {
    exec: Executor<'a>,
    model: &'a ContractModel,
    pool: &'a SeedPool,
    gen: ArgGenerator,
    seed: u64,
    sims: Cell<usize>,
    budget: usize,
}

impl<'a> Planner<'a> {
    pub fn new(model: &'a ContractModel, pool: &'a SeedPool, seed: u64) -> Self {
        Planner {
            exec: Executor::new(model, pool),
            model,
            pool,
            gen: ArgGenerator::new(model, pool),
            seed,
            sims: Cell::new(0),
            budget: DEFAULT_SIM_BUDGET,
        }
    }

    pub fn generator(&self) -> &ArgGenerator {
        &self.gen
    }

    pub fn simulations(&self) -> usize {
        self.sims.get()
    }

    /// Status of the last transaction after replaying `txs` from genesis.
    pub fn last_status(&self, txs: &[Transaction]) -> Option<TxStatus> {
        self.sims.set(self.sims.get() + 1);
        self.exec.execute_prefix(txs).statuses.last().copied()
    }

    fn commits(&self, prefix: &[Transaction], tx: &Transaction) -> bool {
        if self.sims.get() >= self.budget {
            return false;
        }
        let mut txs = prefix.to_vec();
        txs.push(tx.clone());
        self.last_status(&txs) == Some(TxStatus::Committed)
    }

    fn senders(&self, f: &ContractFunction, intent: Intent) -> Vec<Address> {
        let p = self.pool;
        let mut out = Vec::new();
        if intent == Intent::Setter && f.descriptor.payable {
            out.extend_from_slice(p.users());
            out.extend_from_slice(p.attackers());
        } else {
            out.extend_from_slice(p.attackers());
            out.extend_from_slice(p.users());
        }
        out.push(p.deployer());
        out
    }

    fn amounts(&self, f: &ContractFunction) -> Vec<u128> {
        if !f.descriptor.payable {
            return vec![0];
        }
        let mut v: Vec<u128> = self.pool.amounts().iter().copied().filter(|a| *a > 0).collect();
        v.push(0);
        v
    }

    /// Candidate calls to `f` from the given senders, in preference order.
    fn combos(&self, f: &ContractFunction, senders: &[Address]) -> Vec<Transaction> {
        let args = self.gen.arg_combos(&f.descriptor, self.seed);
        let amounts = self.amounts(f);
        let mut out = Vec::new();
        for s in senders {
            for amt in &amounts {
                for a in &args {
                    out.push(Transaction::new(f.name(), a.clone(), *s, *amt));
                }
            }
        }
        out
    }

    /// Default call to `f`: seeded arguments, preferred sender and amount.
    pub fn default_call(&self, f: &ContractFunction, intent: Intent) -> Transaction {
        let sender = self.senders(f, intent)[0];
        let amount = self.amounts(f)[0];
        let args = self.gen.arg_combos(&f.descriptor, self.seed).swap_remove(0);
        Transaction::new(f.name(), args, sender, amount)
    }

    /// Calls that, appended to `prefix`, end with a committed call to
    /// `function`. The last element is the call itself.
    pub fn plan(&self, prefix: &[Transaction], function: &str, intent: Intent, depth: usize) -> Option<Vec<Transaction>> {
        let f = self.model.callable_function(function)?;
        self.solve(prefix, f, intent, depth)
    }

    fn solve(&self, prefix: &[Transaction], f: &ContractFunction, intent: Intent, depth: usize) -> Option<Vec<Transaction>> {
        let senders = self.senders(f, intent);
        let primary = &senders[..1];
        if let Some(tx) = self.combos(f, primary).into_iter().find(|tx| self.commits(prefix, tx)) {
            return Some(vec![tx]);
        }
        if depth > 0 {
            let slots = guard_slots(f);
            let setters: Vec<&ContractFunction> = self
                .model
                .callable_functions()
                .filter(|g| g.name() != f.name() && slots.iter().any(|s| g.writes_slot(s)))
                .collect();
            for g in setters {
                for chain in self.setter_chains(prefix, g, depth - 1) {
                    let mut next = prefix.to_vec();
                    next.extend(chain.iter().cloned());
                    if let Some(tx) = self.combos(f, primary).into_iter().find(|tx| self.commits(&next, tx)) {
                        let mut out = chain;
                        out.push(tx);
                        return Some(out);
                    }
                }
            }
        }
        self.combos(f, &senders[1..]).into_iter().find(|tx| self.commits(prefix, tx)).map(|tx| vec![tx])
    }

    fn setter_chains(&self, prefix: &[Transaction], g: &ContractFunction, depth: usize) -> Vec<Vec<Transaction>> {
        let senders = self.senders(g, Intent::Setter);
        let direct: Vec<Vec<Transaction>> = self
            .combos(g, &senders)
            .into_iter()
            .filter(|tx| self.commits(prefix, tx))
            .map(|tx| vec![tx])
            .collect();
        if !direct.is_empty() || depth == 0 {
            return direct;
        }
        self.solve(prefix, g, Intent::Setter, depth).into_iter().collect()
    }

    /// A call to a function writing the scalar `slot` that leaves it equal to
    /// `want`, appended after `prefix`.
    pub fn set_slot(&self, prefix: &[Transaction], slot: &str, want: &Value) -> Option<Transaction> {
        for g in self.model.callable_functions().filter(|g| g.writes_slot(slot)) {
            for tx in self.combos(g, &self.senders(g, Intent::Target)) {
                if self.sims.get() >= self.budget {
                    return None;
                }
                let mut txs = prefix.to_vec();
                txs.push(tx.clone());
                self.sims.set(self.sims.get() + 1);
                let trace = self.exec.execute_prefix(&txs);
                if trace.statuses.last() == Some(&TxStatus::Committed) && trace.final_state.scalar(slot) == Some(want) {
                    return Some(tx);
                }
            }
        }
        None
    }

    /// Slot values after replaying `prefix`.
    pub fn state_after(&self, prefix: &[Transaction]) -> crate::vm::ChainState {
        self.sims.set(self.sims.get() + 1);
        self.exec.execute_prefix(prefix).final_state
    }
}
