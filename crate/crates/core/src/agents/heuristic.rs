// SPDX-License-Identifier: Apache-2.0

//! Deterministic rule-based policy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::planner::{Intent, Planner};
use super::{derive_seed, AgentAction, AgentId, FieldChange, FieldEdit, PolicyBackend, PolicyError, PolicyInput, StructuralEdit};
use crate::feedback::FeedbackKind;
use crate::txmodel::{sample_sender, Origin, ProgramContext, Role, Transaction, TransactionSequence, Value};
use crate::vm::{ContractFunction, ContractModel, Expr, SlotType, Statement};

const PLAN_DEPTH: usize = 2;

fn weight(model: &ContractModel, f: &ContractFunction) -> u8 {
    let mut w = 0;
    f.walk(|s| {
        let sw = match s {
            Statement::SelfDestruct { .. } => 4,
            Statement::Send { .. } | Statement::LowLevelCall { .. } => 3,
            Statement::DelegateCall { .. } => 2,
            Statement::Assign { slot, .. } if model.deployer_slot.as_deref() == Some(slot) => 1,
            _ => 0,
        };
        w = w.max(sw);
    });
    w
}

/// Callable functions ranked by how likely they are to matter: self-destruct,
/// then ether transfers, delegate calls, owner writes, then everything else.
/// Ties keep declaration order.
pub fn pick_vuln_funcs(model: &ContractModel) -> Vec<&ContractFunction> {
    let mut ranked: Vec<(u8, usize, &ContractFunction)> =
        model.callable_functions().enumerate().map(|(i, f)| (weight(model, f), i, f)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().map(|(_, _, f)| f).collect()
}

/// Closest interface name by edit distance, ties broken lexicographically.
fn nearest_name<'n>(name: &str, names: impl Iterator<Item = &'n str>) -> Option<&'n str> {
    names.min_by(|a, b| strsim::levenshtein(name, a).cmp(&strsim::levenshtein(name, b)).then(a.cmp(b)))
}

fn truncate_front(mut txs: Vec<Transaction>, max_len: usize) -> Vec<Transaction> {
    if txs.len() > max_len {
        txs.drain(..txs.len() - max_len);
    }
    txs
}

#[derive(Clone, Debug, Default)]
pub struct HeuristicBackend;

impl HeuristicBackend {
    pub fn new() -> Self {
        HeuristicBackend
    }

    fn plan_target(model: &ContractModel, ctx: &ProgramContext, f: &ContractFunction, seed: u64, max_len: usize) -> Vec<Transaction> {
        let planner = Planner::new(model, &ctx.seed_pool, seed);
        let txs = planner
            .plan(&[], f.name(), Intent::Target, PLAN_DEPTH)
            .unwrap_or_else(|| vec![planner.default_call(f, Intent::Target)]);
        truncate_front(txs, max_len)
    }

    fn refine(&self, input: &PolicyInput<'_>) -> Option<AgentAction> {
        let seq = &input.seq.txs;
        let fb = input.feedback;
        let seed = derive_seed(input.seed, input.round, AgentId::TxSeqRefiner);
        let planner = Planner::new(input.model, &input.ctx.seed_pool, seed);
        let mut action = AgentAction::noop(AgentId::TxSeqRefiner, "");

        if let Some((i, FeedbackKind::RequireFailed(guard))) = fb.first_where(|k| matches!(k, FeedbackKind::RequireFailed(_))) {
            let i = i.min(seq.len().saturating_sub(1));
            let room = input.max_len.saturating_sub(seq.len());
            if let Some(chain) = planner.plan(&seq[..i], &seq[i].function, Intent::Target, PLAN_DEPTH) {
                let (fixed, setters) = chain.split_last().expect("plans end with the call");
                if setters.len() <= room {
                    for change in field_diff(&seq[i], fixed) {
                        action.edits.push(FieldEdit::new(i, change));
                    }
                    for tx in setters {
                        action.structure.push(StructuralEdit::Insert { at: i, tx: tx.clone() });
                    }
                    if !action.is_noop() {
                        action.rationale = format!("satisfy `{guard}` at tx {i} with {} setter call(s)", setters.len());
                        return Some(action);
                    }
                }
            }
            let f = input.model.callable_function(&seq[i].function);
            let read = f.map(super::planner::guard_slots).unwrap_or_default();
            if let Some(j) = (i + 1..seq.len()).find(|&j| {
                input.model.callable_function(&seq[j].function).is_some_and(|g| read.iter().any(|s| g.writes_slot(s)))
            }) {
                action.structure.push(StructuralEdit::Move { from: j, to: i });
                action.rationale = format!("move writer tx {j} ahead of failing tx {i}");
                return Some(action);
            }
            if i + 1 < seq.len() {
                action.structure.push(StructuralEdit::Delete { index: i });
                action.rationale = format!("drop tx {i}, its guard `{guard}` cannot be met");
                return Some(action);
            }
        }

        if !fb.is_clean() || fb.is_stop() {
            return None;
        }

        // Redirect payouts that currently go to someone else.
        let attacker = input.ctx.seed_pool.primary_attacker();
        for (t, tx) in seq.iter().enumerate() {
            let Some(f) = input.model.callable_function(&tx.function) else { continue };
            let mut recipients = Vec::new();
            f.walk(|s| {
                if let Statement::Send { to: Expr::Slot(slot), .. } | Statement::LowLevelCall { to: Expr::Slot(slot), .. } = s {
                    recipients.push(slot.clone());
                }
            });
            for slot in recipients {
                let state = planner.state_after(&seq[..t]);
                let want = Value::Address(attacker);
                if state.scalar(&slot) == Some(&want) || seq.len() >= input.max_len {
                    continue;
                }
                if input.model.slot(&slot).map(|s| s.ty) != Some(SlotType::Scalar(crate::txmodel::ValueType::Address)) {
                    continue;
                }
                if let Some(setter) = planner.set_slot(&seq[..t], &slot, &want) {
                    action.structure.push(StructuralEdit::Insert { at: t, tx: setter });
                    action.rationale = format!("point `{slot}` at the attacker before tx {t}");
                    return Some(action);
                }
            }
        }

        // Nothing left to try on this target: move on to the next one.
        let ranked = pick_vuln_funcs(input.model);
        let current = seq.last().map(|t| t.function.as_str());
        let pos = ranked.iter().position(|f| Some(f.name()) == current);
        let next = match pos {
            Some(p) => ranked[(p + 1) % ranked.len()],
            None => *ranked.first()?,
        };
        let txs = Self::plan_target(input.model, input.ctx, next, seed, input.max_len);
        if txs == *seq {
            return None;
        }
        action.structure.push(StructuralEdit::Replace { txs });
        action.rationale = format!("switch target to `{}`", next.name());
        Some(action)
    }

    fn check(&self, agent: AgentId, input: &PolicyInput<'_>) -> Option<AgentAction> {
        let ctx = input.ctx;
        let pool = &ctx.seed_pool;
        let fb = input.feedback;
        let seq = &input.seq.txs;
        let seed = derive_seed(input.seed, input.round, agent);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planner = Planner::new(input.model, pool, seed);
        let gen = planner.generator();
        let explore = fb.is_clean() && !fb.is_stop() && !input.refined;
        let mut action = AgentAction::noop(agent, "");

        for (i, tx) in seq.iter().enumerate() {
            let d = ctx.descriptor(&tx.function);
            let kinds = fb.at(i);
            let change = match agent {
                AgentId::FunChecker => match d {
                    Some(_) => None,
                    None => nearest_name(&tx.function, ctx.interface.iter().map(|d| d.name.as_str()))
                        .map(|n| FieldChange::Function(n.to_string())),
                },
                AgentId::ArgChecker => d.and_then(|d| {
                    let well_typed = d.params.len() == tx.args.len() && d.param_types().zip(&tx.args).all(|(t, a)| a.value_type() == t);
                    (!well_typed || kinds.contains(&FeedbackKind::ArgumentMismatch))
                        .then(|| FieldChange::Args(gen.sample_args(d, &mut rng)))
                        .filter(|c| *c != FieldChange::Args(tx.args.clone()) || !well_typed)
                }),
                AgentId::SNDChecker => {
                    let bad = !pool.contains_sender(tx.sender) || kinds.contains(&FeedbackKind::SenderError);
                    bad.then(|| {
                        let mut s = sample_sender(pool, Role::Attacker, seed.wrapping_add(i as u64)).expect("attackers exist");
                        if s == tx.sender {
                            let all = pool.senders();
                            let at = all.iter().position(|a| *a == s).unwrap_or(0);
                            s = all[(at + 1) % all.len()];
                        }
                        FieldChange::Sender(s)
                    })
                }
                AgentId::AMTChecker => {
                    let amounts = pool.amounts();
                    if d.is_some_and(|d| !d.payable) && tx.amount > 0 || kinds.contains(&FeedbackKind::NonPayableFunction) {
                        Some(FieldChange::Amount(0))
                    } else if kinds.contains(&FeedbackKind::IncorrectTransactionValue) {
                        Some(FieldChange::Amount(next_amount(amounts, tx.amount)))
                    } else if !amounts.contains(&tx.amount) {
                        let nearest = *amounts.iter().min_by_key(|a| a.abs_diff(tx.amount)).expect("amounts non-empty");
                        Some(FieldChange::Amount(nearest))
                    } else {
                        None
                    }
                }
                _ => None,
            };
            if let Some(change) = change {
                action.edits.push(FieldEdit::new(i, change));
            }
        }

        if action.is_noop() && explore {
            if let Some((i, tx)) = seq.iter().enumerate().next_back() {
                if let Some(d) = ctx.descriptor(&tx.function) {
                    let change = match agent {
                        AgentId::ArgChecker if !d.params.is_empty() => {
                            let combos = gen.arg_combos(d, seed);
                            let at = combos.iter().position(|c| *c == tx.args).map_or(0, |p| p + 1);
                            Some(FieldChange::Args(combos[at % combos.len()].clone())).filter(|c| *c != FieldChange::Args(tx.args.clone()))
                        }
                        AgentId::AMTChecker if d.payable => Some(FieldChange::Amount(next_amount(pool.amounts(), tx.amount))),
                        _ => None,
                    };
                    if let Some(change) = change {
                        action.edits.push(FieldEdit::new(i, change));
                        action.rationale = "explore a new value for the target call".into();
                    }
                }
            }
        } else if !action.is_noop() {
            action.rationale = format!("fix {} flagged element(s)", action.edits.len());
        }
        (!action.is_noop()).then_some(action)
    }
}

/// Next positive pool amount after `current`, wrapping around.
fn next_amount(amounts: &[u128], current: u128) -> u128 {
    let positive: Vec<u128> = amounts.iter().copied().filter(|a| *a > 0).collect();
    positive.iter().copied().find(|a| *a > current).or_else(|| positive.first().copied()).unwrap_or(0)
}

fn field_diff(old: &Transaction, new: &Transaction) -> Vec<FieldChange> {
    let mut out = Vec::new();
    if old.function != new.function {
        out.push(FieldChange::Function(new.function.clone()));
    }
    if old.args != new.args {
        out.push(FieldChange::Args(new.args.clone()));
    }
    if old.sender != new.sender {
        out.push(FieldChange::Sender(new.sender));
    }
    if old.amount != new.amount {
        out.push(FieldChange::Amount(new.amount));
    }
    out
}

impl PolicyBackend for HeuristicBackend {
    fn name(&self) -> &'static str {
        "heuristic"
    }

    fn draft(
        &mut self,
        ctx: &ProgramContext,
        model: &ContractModel,
        seed: u64,
        max_len: usize,
    ) -> Result<TransactionSequence, PolicyError> {
        let ranked = pick_vuln_funcs(model);
        let target = ranked.first().ok_or(PolicyError::EmptyInterface)?;
        let seed = derive_seed(seed, 0, AgentId::TxSeqDrafter);
        let txs = Self::plan_target(model, ctx, target, seed, max_len.max(1));
        Ok(TransactionSequence::new(txs, Origin::Drafted))
    }

    fn reflect_global(&mut self, input: &PolicyInput<'_>) -> Result<AgentAction, PolicyError> {
        self.refine(input).ok_or(PolicyError::NoRepairAvailable)
    }

    fn check_element(&mut self, agent: AgentId, input: &PolicyInput<'_>) -> Result<AgentAction, PolicyError> {
        match agent {
            AgentId::TxSeqDrafter | AgentId::TxSeqRefiner => self.reflect_global(input),
            _ => self.check(agent, input).ok_or(PolicyError::NoRepairAvailable),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::{translate, Feedback};
    use crate::oracles::OracleReport;
    use crate::txmodel::{FunctionDescriptor, SeedPool, Visibility};
    use crate::vm::load_model;

    fn fixture(name: &str) -> ContractModel {
        let path = format!("{}/../../fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"));
        load_model(&std::fs::read_to_string(path).unwrap()).unwrap()
    }

    fn ctx(model: &ContractModel) -> ProgramContext {
        ProgramContext::new("", model.interface(), SeedPool::default())
    }

    fn input<'a>(ctx: &'a ProgramContext, model: &'a ContractModel, seq: &'a TransactionSequence, fb: &'a Feedback) -> PolicyInput<'a> {
        PolicyInput { ctx, model, seq, feedback: fb, round: 1, seed: 0, max_len: 10, refined: false }
    }

    #[test]
    fn ranking_follows_weights() {
        let m = fixture("crowdsale");
        let names: Vec<&str> = pick_vuln_funcs(&m).iter().map(|f| f.name()).collect();
        assert_eq!(names, ["withdraw", "refund", "setOwner", "invest", "setPhase"]);
    }

    #[test]
    fn crowdsale_draft_funds_then_targets_withdraw() {
        let m = fixture("crowdsale");
        let c = ctx(&m);
        let draft = HeuristicBackend.draft(&c, &m, 0, 10).unwrap();
        let names: Vec<&str> = draft.txs.iter().map(|t| t.function.as_str()).collect();
        assert_eq!(names, ["invest", "setPhase", "withdraw"]);
        assert!(draft.txs[0].amount >= 1000);
        assert_eq!(draft, HeuristicBackend.draft(&c, &m, 0, 10).unwrap());
        assert!(crate::txmodel::validate_sequence(&draft, &c).is_empty());
    }

    #[test]
    fn single_function_draft() {
        let m = load_model(r#"{"name":"One","functions":[{"descriptor":{"name":"f"},"body":[]}]}"#).unwrap();
        let draft = HeuristicBackend.draft(&ctx(&m), &m, 3, 10).unwrap();
        assert_eq!(draft.txs.len(), 1);
        assert_eq!(draft.txs[0].function, "f");
    }

    #[test]
    fn empty_interface_is_an_error() {
        let m = load_model(r#"{"name":"None","functions":[]}"#).unwrap();
        assert_eq!(HeuristicBackend.draft(&ctx(&m), &m, 0, 10), Err(PolicyError::EmptyInterface));
    }

    #[test]
    fn nonpayable_amount_zeroed() {
        let m = fixture("crowdsale");
        let c = ctx(&m);
        let a = c.seed_pool.primary_attacker();
        let seq = TransactionSequence::new(
            vec![Transaction::new("invest", vec![], a, 10), Transaction::new("withdraw", vec![], a, 1)],
            Origin::Drafted,
        );
        let fb = Feedback {
            per_tx: [(1, vec![FeedbackKind::NonPayableFunction])].into(),
            vulnerability: FeedbackKind::VulnerabilityNotFound,
            summary_text: String::new(),
        };
        let action = HeuristicBackend.check_element(AgentId::AMTChecker, &input(&c, &m, &seq, &fb)).unwrap();
        assert_eq!(action.edits, vec![FieldEdit::new(1, FieldChange::Amount(0))]);
    }

    #[test]
    fn misspelled_function_renamed() {
        let m = fixture("crowdsale");
        let c = ctx(&m);
        let a = c.seed_pool.primary_attacker();
        let seq = TransactionSequence::new(vec![Transaction::new("withdrw", vec![], a, 0)], Origin::Drafted);
        let fb = translate(&[], &OracleReport::none());
        let action = HeuristicBackend.check_element(AgentId::FunChecker, &input(&c, &m, &seq, &fb)).unwrap();
        assert_eq!(action.edits, vec![FieldEdit::new(0, FieldChange::Function("withdraw".into()))]);
    }

    #[test]
    fn nearest_name_ties_are_lexicographic() {
        let names = ["bb", "ab", "zz"];
        assert_eq!(nearest_name("cb", names.iter().copied()), Some("ab"));
        let d = FunctionDescriptor { name: "x".into(), params: vec![], payable: false, visibility: Visibility::Public };
        assert_eq!(nearest_name("y", std::iter::once(d.name.as_str())), Some("x"));
    }
}
