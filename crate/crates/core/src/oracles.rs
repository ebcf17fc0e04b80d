// SPDX-License-Identifier: Apache-2.0

//! Vulnerability predicates over execution traces.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::txmodel::{Address, SeedPool};
use crate::vm::{ContractModel, ExecutionTrace, Statement, TraceEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VulnClass {
    /// Ether leaking to an account that paid in less.
    EL,
    /// Self-destruct reachable by a non-deployer.
    SC,
    /// Payout decided by a branch on a block field.
    BD,
    /// Failed low-level call whose result is ignored.
    UE,
    /// Delegate call to an input-controlled target.
    UD,
    /// Ether can enter but never leave.
    EF,
    /// Re-entrant payout beyond what the caller paid in.
    RE,
    /// Authorization through `tx.origin`.
    TO,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    High,
    Medium,
}

impl VulnClass {
    pub const ALL: [VulnClass; 8] = [
        VulnClass::EL,
        VulnClass::SC,
        VulnClass::BD,
        VulnClass::UE,
        VulnClass::UD,
        VulnClass::EF,
        VulnClass::RE,
        VulnClass::TO,
    ];

    /// Priority used when several classes fire at once.
    pub const PRIORITY: [VulnClass; 8] = [
        VulnClass::EL,
        VulnClass::SC,
        VulnClass::RE,
        VulnClass::UD,
        VulnClass::UE,
        VulnClass::BD,
        VulnClass::TO,
        VulnClass::EF,
    ];

    pub fn code(self) -> &'static str {
        match self {
            VulnClass::EL => "EL",
            VulnClass::SC => "SC",
            VulnClass::BD => "BD",
            VulnClass::UE => "UE",
            VulnClass::UD => "UD",
            VulnClass::EF => "EF",
            VulnClass::RE => "RE",
            VulnClass::TO => "TO",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            VulnClass::EL | VulnClass::SC | VulnClass::RE | VulnClass::UD => Severity::High,
            VulnClass::BD | VulnClass::EF | VulnClass::UE | VulnClass::TO => Severity::Medium,
        }
    }
}

impl fmt::Display for VulnClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for VulnClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VulnClass::ALL
            .into_iter()
            .find(|c| c.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown vulnerability class `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    /// Witness holds indices into the trace's event list.
    Found { witness: Vec<usize> },
    NotFound,
}

impl Verdict {
    pub fn is_found(&self) -> bool {
        matches!(self, Verdict::Found { .. })
    }

    fn from_witness(w: Option<Vec<usize>>) -> Verdict {
        match w {
            Some(witness) => Verdict::Found { witness },
            None => Verdict::NotFound,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleReport {
    pub verdicts: BTreeMap<VulnClass, Verdict>,
    pub any_found: bool,
}

impl OracleReport {
    pub fn from_verdicts(verdicts: BTreeMap<VulnClass, Verdict>) -> Self {
        let any_found = verdicts.values().any(Verdict::is_found);
        OracleReport { verdicts, any_found }
    }

    pub fn none() -> Self {
        Self::from_verdicts(VulnClass::ALL.into_iter().map(|c| (c, Verdict::NotFound)).collect())
    }

    /// Found classes in declaration order.
    pub fn found(&self) -> Vec<VulnClass> {
        self.verdicts.iter().filter(|(_, v)| v.is_found()).map(|(c, _)| *c).collect()
    }

    /// Highest-priority found class.
    pub fn primary(&self) -> Option<VulnClass> {
        VulnClass::PRIORITY.into_iter().find(|c| self.verdicts.get(c).is_some_and(Verdict::is_found))
    }
}

pub fn check_el(trace: &ExecutionTrace, pool: &SeedPool) -> Verdict {
    let mut paid_in: HashMap<Address, u128> = HashMap::new();
    for (i, e) in trace.events.iter().enumerate() {
        match e {
            TraceEvent::EtherIn { from, amount } => *paid_in.entry(*from).or_default() += amount,
            TraceEvent::EtherOut { to, amount, .. }
                if pool.is_attacker(*to) && *amount > paid_in.get(to).copied().unwrap_or(0) =>
            {
                return Verdict::Found { witness: vec![i] };
            }
            _ => {}
        }
    }
    Verdict::NotFound
}

pub fn check_sc(trace: &ExecutionTrace, pool: &SeedPool) -> Verdict {
    let senders = trace.tx_senders();
    Verdict::from_witness(trace.events.iter().enumerate().find_map(|(i, e)| {
        let by_other = senders[i].is_some_and(|s| s != pool.deployer());
        (matches!(e, TraceEvent::SelfDestructed { .. }) && by_other).then(|| vec![i])
    }))
}

pub fn check_bd(trace: &ExecutionTrace) -> Verdict {
    let mut branch = None;
    for (i, e) in trace.events.iter().enumerate() {
        match e {
            TraceEvent::TxBegin { .. } => branch = None,
            TraceEvent::BranchOnBlockField { .. } => branch = branch.or(Some(i)),
            TraceEvent::EtherOut { .. } => {
                if let Some(b) = branch {
                    return Verdict::Found { witness: vec![b, i] };
                }
            }
            _ => {}
        }
    }
    Verdict::NotFound
}

pub fn check_ue(trace: &ExecutionTrace) -> Verdict {
    Verdict::from_witness(
        trace
            .events
            .iter()
            .position(|e| matches!(e, TraceEvent::LowLevelCallFailed { result_captured: false }))
            .map(|i| vec![i]),
    )
}

pub fn check_ud(trace: &ExecutionTrace, pool: &SeedPool) -> Verdict {
    let senders = trace.tx_senders();
    Verdict::from_witness(trace.events.iter().enumerate().find_map(|(i, e)| {
        let tainted = matches!(e, TraceEvent::DelegateCalled { target_tainted_by_input: true, .. });
        (tainted && senders[i].is_some_and(|s| s != pool.deployer())).then(|| vec![i])
    }))
}

pub fn check_re(trace: &ExecutionTrace) -> Verdict {
    let mut paid_in: HashMap<Address, u128> = HashMap::new();
    let mut paid_out: HashMap<Address, u128> = HashMap::new();
    // Open re-entered frames: (event index, caller).
    let mut frames: Vec<(usize, Address)> = Vec::new();
    for (i, e) in trace.events.iter().enumerate() {
        match e {
            TraceEvent::TxBegin { .. } => frames.clear(),
            TraceEvent::EtherIn { from, amount } => *paid_in.entry(*from).or_default() += amount,
            TraceEvent::ReenteredCall { caller, .. } => frames.push((i, *caller)),
            TraceEvent::ReentryReturned { .. } => {
                frames.pop();
            }
            TraceEvent::EtherOut { to, amount, .. } => {
                let out = paid_out.entry(*to).or_default();
                *out += amount;
                let gain = *out > paid_in.get(to).copied().unwrap_or(0);
                if let Some((open, _)) = frames.iter().find(|(_, c)| c == to) {
                    if gain {
                        return Verdict::Found { witness: vec![*open, i] };
                    }
                }
            }
            _ => {}
        }
    }
    Verdict::NotFound
}

pub fn check_to(trace: &ExecutionTrace) -> Verdict {
    let mut guard = None;
    for (i, e) in trace.events.iter().enumerate() {
        match e {
            TraceEvent::TxBegin { .. } => guard = None,
            TraceEvent::TxOriginRead { in_guard: true } => guard = guard.or(Some(i)),
            TraceEvent::StorageWrite { .. } | TraceEvent::EtherOut { .. } => {
                if let Some(g) = guard {
                    return Verdict::Found { witness: vec![g, i] };
                }
            }
            _ => {}
        }
    }
    Verdict::NotFound
}

/// Static half of the ether-freezing check: ether can come in but no
/// statement can ever move it out.
pub fn can_freeze_ether(model: &ContractModel) -> bool {
    let payable = model.callable_functions().any(|f| f.descriptor.payable);
    let outflow = model.functions.iter().any(|f| {
        f.any_statement(|s| {
            matches!(s, Statement::Send { .. } | Statement::LowLevelCall { .. } | Statement::SelfDestruct { .. })
        })
    });
    payable && !outflow
}

pub fn check_ef(model: &ContractModel, trace: &ExecutionTrace, history: &[ExecutionTrace]) -> Verdict {
    if !can_freeze_ether(model) {
        return Verdict::NotFound;
    }
    let deposits = |t: &ExecutionTrace| -> Vec<usize> {
        t.events
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e, TraceEvent::EtherIn { amount, .. } if *amount > 0))
            .map(|(i, _)| i)
            .collect()
    };
    let here = deposits(trace);
    if !here.is_empty() {
        return Verdict::Found { witness: here };
    }
    if history.iter().any(|t| !deposits(t).is_empty()) {
        return Verdict::Found { witness: vec![] };
    }
    Verdict::NotFound
}

/// Evaluates all eight predicates. `history` holds earlier traces of the
/// same contract and only feeds the ether-freezing check.
pub fn run_all(model: &ContractModel, trace: &ExecutionTrace, pool: &SeedPool, history: &[ExecutionTrace]) -> OracleReport {
    let verdicts = VulnClass::ALL
        .into_iter()
        .map(|c| {
            let v = match c {
                VulnClass::EL => check_el(trace, pool),
                VulnClass::SC => check_sc(trace, pool),
                VulnClass::BD => check_bd(trace),
                VulnClass::UE => check_ue(trace),
                VulnClass::UD => check_ud(trace, pool),
                VulnClass::EF => check_ef(model, trace, history),
                VulnClass::RE => check_re(trace),
                VulnClass::TO => check_to(trace),
            };
            (c, v)
        })
        .collect();
    OracleReport::from_verdicts(verdicts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vm::{ChainState, TransferKind};

    fn trace(events: Vec<TraceEvent>) -> ExecutionTrace {
        let state = ChainState {
            storage: Default::default(),
            contract_balance: 0,
            balances: Default::default(),
            nonces: Default::default(),
            block_number: 1,
            timestamp: 0,
            alive: true,
        };
        ExecutionTrace { genesis: state.clone(), events, final_state: state, raw_signals: vec![], statuses: vec![] }
    }

    fn begin(sender: Address) -> TraceEvent {
        TraceEvent::TxBegin { tx: 0, sender, function: "f".into(), amount: 0 }
    }

    #[test]
    fn empty_trace_fires_nothing() {
        let pool = SeedPool::default();
        let model = crate::vm::load_model(r#"{"name":"E","storage":[],"balance":"0","functions":[]}"#).unwrap();
        let report = run_all(&model, &trace(vec![]), &pool, &[]);
        assert!(!report.any_found);
        assert_eq!(report.primary(), None);
    }

    #[test]
    fn el_needs_strict_net_gain() {
        let pool = SeedPool::default();
        let a = pool.primary_attacker();
        let out = |amount| TraceEvent::EtherOut { to: a, amount, via: TransferKind::Send };
        let refund = trace(vec![begin(a), TraceEvent::EtherIn { from: a, amount: 10 }, out(10)]);
        assert_eq!(check_el(&refund, &pool), Verdict::NotFound);
        let steal = trace(vec![begin(a), TraceEvent::EtherIn { from: a, amount: 10 }, out(11)]);
        assert_eq!(check_el(&steal, &pool), Verdict::Found { witness: vec![2] });
    }

    #[test]
    fn removing_witness_flips_el_and_re() {
        let pool = SeedPool::default();
        let a = pool.primary_attacker();
        let events = vec![
            begin(a),
            TraceEvent::EtherIn { from: a, amount: 5 },
            TraceEvent::EtherOut { to: a, amount: 5, via: TransferKind::Call },
            TraceEvent::ReenteredCall { depth: 1, caller: a },
            TraceEvent::EtherOut { to: a, amount: 6, via: TransferKind::Call },
            TraceEvent::ReentryReturned { depth: 1 },
        ];
        let t = trace(events.clone());
        let Verdict::Found { witness } = check_re(&t) else { panic!("RE expected") };
        let mut cut = events.clone();
        cut.remove(*witness.last().unwrap());
        assert_eq!(check_re(&trace(cut)), Verdict::NotFound);

        let Verdict::Found { witness } = check_el(&t, &pool) else { panic!("EL expected") };
        let mut cut = events;
        cut.remove(witness[0]);
        assert_eq!(check_el(&trace(cut), &pool), Verdict::NotFound);
    }

    #[test]
    fn sc_ignores_deployer() {
        let pool = SeedPool::default();
        let d = pool.deployer();
        let ev = TraceEvent::SelfDestructed { beneficiary: d };
        assert_eq!(check_sc(&trace(vec![begin(d), ev.clone()]), &pool), Verdict::NotFound);
        assert!(check_sc(&trace(vec![begin(pool.primary_attacker()), ev]), &pool).is_found());
    }

    #[test]
    fn bd_and_to_scoped_to_one_tx() {
        let a = SeedPool::default().primary_attacker();
        let out = TraceEvent::EtherOut { to: a, amount: 1, via: TransferKind::Send };
        let branch = TraceEvent::BranchOnBlockField { field: crate::vm::BlockField::Timestamp };
        assert_eq!(check_bd(&trace(vec![begin(a), branch.clone(), begin(a), out.clone()])), Verdict::NotFound);
        assert!(check_bd(&trace(vec![begin(a), branch, out])).is_found());

        let read = TraceEvent::TxOriginRead { in_guard: true };
        let write = TraceEvent::StorageWrite { slot: "s".into(), old: "0".into(), new: "1".into() };
        assert_eq!(check_to(&trace(vec![begin(a), write.clone(), read.clone()])), Verdict::NotFound);
        assert!(check_to(&trace(vec![begin(a), read, write])).is_found());
        assert_eq!(check_to(&trace(vec![begin(a), TraceEvent::TxOriginRead { in_guard: false }])), Verdict::NotFound);
    }

    #[test]
    fn class_codes_round_trip() {
        for c in VulnClass::ALL {
            assert_eq!(c.code().parse::<VulnClass>().unwrap(), c);
        }
        assert_eq!(VulnClass::PRIORITY.len(), 8);
        assert!("XX".parse::<VulnClass>().is_err());
    }
}
