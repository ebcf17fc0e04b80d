// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::agents::{AgentAction, AgentId, StructuralEdit};
use crate::txmodel::{Origin, Transaction, TransactionSequence};

/// An edit that pointed at a transaction that does not exist (anymore).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BadIndex {
    pub agent: AgentId,
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Applied {
    pub seq: TransactionSequence,
    pub bad: Vec<BadIndex>,
    /// Inserts dropped because the sequence was already at its length bound.
    pub dropped_for_length: usize,
    /// For each input position, its position in the output, if it survived.
    pub index_map: Vec<Option<usize>>,
}

fn origin_for(agent: AgentId) -> Origin {
    match agent {
        AgentId::TxSeqDrafter => Origin::Drafted,
        AgentId::TxSeqRefiner => Origin::GloballyReflected,
        _ => Origin::LocallyReflected,
    }
}

/// Applies one action. Indices refer to `seq` as given; field edits go
/// first, then structural edits in order.
pub fn apply_action(seq: &TransactionSequence, action: &AgentAction, max_len: usize) -> Applied {
    let n = seq.len();
    // Each element remembers the input position it came from.
    let mut work: Vec<(Option<usize>, Transaction)> = seq.txs.iter().cloned().enumerate().map(|(i, t)| (Some(i), t)).collect();
    let mut bad = Vec::new();
    let mut dropped_for_length = 0;
    let mut flag = |index: usize, reason: &str| {
        log::warn!("{}: dropped edit at index {index}: {reason}", action.agent);
        bad.push(BadIndex { agent: action.agent, index, reason: reason.to_string() });
    };

    for e in &action.edits {
        match work.get_mut(e.tx) {
            Some((_, tx)) => e.change.apply_to(tx),
            None => flag(e.tx, "field edit out of range"),
        }
    }

    let pos = |work: &[(Option<usize>, Transaction)], orig: usize| work.iter().position(|(o, _)| *o == Some(orig));
    for s in &action.structure {
        match s {
            StructuralEdit::Insert { at, tx } => {
                let place = if *at == n { Some(work.len()) } else { pos(&work, *at) };
                match place {
                    None => flag(*at, "insert anchor missing"),
                    Some(_) if work.len() >= max_len => dropped_for_length += 1,
                    Some(p) => work.insert(p, (None, tx.clone())),
                }
            }
            StructuralEdit::Delete { index } => match pos(&work, *index) {
                Some(p) => {
                    work.remove(p);
                }
                None => flag(*index, "delete of missing transaction"),
            },
            StructuralEdit::Move { from, to } => {
                let Some(p) = pos(&work, *from) else {
                    flag(*from, "move of missing transaction");
                    continue;
                };
                let item = work.remove(p);
                let place = if *to == n {
                    Some(work.len())
                } else if to == from {
                    Some(p)
                } else {
                    pos(&work, *to)
                };
                match place {
                    Some(q) => work.insert(q, item),
                    None => {
                        work.insert(p, item);
                        flag(*to, "move anchor missing");
                    }
                }
            }
            StructuralEdit::Replace { txs } => {
                work = txs.iter().take(max_len).cloned().map(|t| (None, t)).collect();
                dropped_for_length += txs.len().saturating_sub(max_len);
            }
        }
    }

    let mut index_map = vec![None; n];
    for (k, (orig, _)) in work.iter().enumerate() {
        if let Some(o) = orig {
            index_map[*o] = Some(k);
        }
    }
    let origin = if action.is_noop() { seq.origin } else { origin_for(action.agent) };
    Applied {
        seq: TransactionSequence::new(work.into_iter().map(|(_, t)| t).collect(), origin),
        bad,
        dropped_for_length,
        index_map,
    }
}

/// Folds `actions` over `seq` in order; each action's indices refer to the
/// output of the previous one.
pub fn apply(seq: &TransactionSequence, actions: &[AgentAction], max_len: usize) -> Applied {
    let mut out = Applied {
        seq: seq.clone(),
        bad: vec![],
        dropped_for_length: 0,
        index_map: (0..seq.len()).map(Some).collect(),
    };
    for a in actions {
        let step = apply_action(&out.seq, a, max_len);
        out.index_map = out.index_map.iter().map(|m| m.and_then(|k| step.index_map[k])).collect();
        out.seq = step.seq;
        out.bad.extend(step.bad);
        out.dropped_for_length += step.dropped_for_length;
    }
    out
}
