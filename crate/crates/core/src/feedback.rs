// SPDX-License-Identifier: Apache-2.0

//! Turns VM signals and oracle verdicts into the feedback agents act on.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::oracles::{OracleReport, VulnClass};
use crate::txmodel::TransactionSequence;

pub const SUMMARY_VERSION: &str = "feedback v1";
pub const DEFAULT_SUMMARY_CAP: usize = 2000;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawSignalKind {
    UnknownFunction,
    ArityOrTypeMismatch,
    InsufficientBalance,
    BadNonce,
    ValueToNonpayable,
    ValueConstraintViolation,
    RequireFailed { guard: String },
    Reverted,
}

impl RawSignalKind {
    /// One instance of every kind, for exhaustive checks.
    pub fn samples() -> Vec<RawSignalKind> {
        vec![
            RawSignalKind::UnknownFunction,
            RawSignalKind::ArityOrTypeMismatch,
            RawSignalKind::InsufficientBalance,
            RawSignalKind::BadNonce,
            RawSignalKind::ValueToNonpayable,
            RawSignalKind::ValueConstraintViolation,
            RawSignalKind::RequireFailed { guard: "x > 0".into() },
            RawSignalKind::Reverted,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawSignal {
    pub tx_index: usize,
    #[serde(flatten)]
    pub kind: RawSignalKind,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail")]
pub enum FeedbackKind {
    FunctionNotFound,
    ArgumentMismatch,
    SenderError,
    NonPayableFunction,
    IncorrectTransactionValue,
    /// Carries the failing guard, or the revert cause.
    RequireFailed(String),
    VulnerabilityFound(VulnClass),
    VulnerabilityNotFound,
}

impl FeedbackKind {
    pub fn from_signal(kind: &RawSignalKind, detail: &str) -> FeedbackKind {
        match kind {
            RawSignalKind::UnknownFunction => FeedbackKind::FunctionNotFound,
            RawSignalKind::ArityOrTypeMismatch => FeedbackKind::ArgumentMismatch,
            RawSignalKind::InsufficientBalance | RawSignalKind::BadNonce => FeedbackKind::SenderError,
            RawSignalKind::ValueToNonpayable => FeedbackKind::NonPayableFunction,
            RawSignalKind::ValueConstraintViolation => FeedbackKind::IncorrectTransactionValue,
            RawSignalKind::RequireFailed { guard } => FeedbackKind::RequireFailed(guard.clone()),
            RawSignalKind::Reverted => FeedbackKind::RequireFailed(detail.to_string()),
        }
    }

    pub fn is_verdict(&self) -> bool {
        matches!(self, FeedbackKind::VulnerabilityFound(_) | FeedbackKind::VulnerabilityNotFound)
    }
}

impl fmt::Display for FeedbackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeedbackKind::FunctionNotFound => f.write_str("FunctionNotFound"),
            FeedbackKind::ArgumentMismatch => f.write_str("ArgumentMismatch"),
            FeedbackKind::SenderError => f.write_str("SenderError"),
            FeedbackKind::NonPayableFunction => f.write_str("NonPayableFunction"),
            FeedbackKind::IncorrectTransactionValue => f.write_str("IncorrectTransactionValue"),
            FeedbackKind::RequireFailed(guard) => write!(f, "RequireFailed({guard})"),
            FeedbackKind::VulnerabilityFound(c) => write!(f, "VulnerabilityFound({c})"),
            FeedbackKind::VulnerabilityNotFound => f.write_str("VulnerabilityNotFound"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub per_tx: BTreeMap<usize, Vec<FeedbackKind>>,
    pub vulnerability: FeedbackKind,
    pub summary_text: String,
}

impl Feedback {
    pub fn is_stop(&self) -> bool {
        matches!(self.vulnerability, FeedbackKind::VulnerabilityFound(_))
    }

    pub fn found_class(&self) -> Option<VulnClass> {
        match self.vulnerability {
            FeedbackKind::VulnerabilityFound(c) => Some(c),
            _ => None,
        }
    }

    /// True when no transaction produced a runtime signal.
    pub fn is_clean(&self) -> bool {
        self.per_tx.values().all(Vec::is_empty)
    }

    pub fn at(&self, index: usize) -> &[FeedbackKind] {
        self.per_tx.get(&index).map(Vec::as_slice).unwrap_or(&[])
    }

    /// First transaction index carrying a signal matching `pred`.
    pub fn first_where(&self, pred: impl Fn(&FeedbackKind) -> bool) -> Option<(usize, &FeedbackKind)> {
        self.per_tx.iter().find_map(|(i, ks)| ks.iter().find(|k| pred(k)).map(|k| (*i, k)))
    }

    /// Same feedback with transaction indices rewritten through `map`;
    /// entries mapping to `None` are dropped.
    pub fn remap(&self, map: impl Fn(usize) -> Option<usize>) -> Feedback {
        let mut per_tx: BTreeMap<usize, Vec<FeedbackKind>> = BTreeMap::new();
        for (i, ks) in &self.per_tx {
            if let Some(j) = map(*i) {
                let slot = per_tx.entry(j).or_default();
                for k in ks {
                    if !slot.contains(k) {
                        slot.push(k.clone());
                    }
                }
            }
        }
        Feedback { per_tx, vulnerability: self.vulnerability.clone(), summary_text: self.summary_text.clone() }
    }
}

/// Total mapping of raw signals and the oracle report to feedback.
/// `summary_text` is left empty; see [`summarize`].
pub fn translate(raw: &[RawSignal], report: &OracleReport) -> Feedback {
    let mut per_tx: BTreeMap<usize, Vec<FeedbackKind>> = BTreeMap::new();
    for s in raw {
        let kind = FeedbackKind::from_signal(&s.kind, &s.detail);
        let slot = per_tx.entry(s.tx_index).or_default();
        if !slot.contains(&kind) {
            slot.push(kind);
        }
    }
    let vulnerability = match report.primary() {
        Some(c) => FeedbackKind::VulnerabilityFound(c),
        None => FeedbackKind::VulnerabilityNotFound,
    };
    Feedback { per_tx, vulnerability, summary_text: String::new() }
}

/// Translates and fills in the digest with the given cap.
pub fn translate_with_summary(raw: &[RawSignal], report: &OracleReport, seq: &TransactionSequence, cap: usize) -> Feedback {
    let mut fb = translate(raw, report);
    fb.summary_text = summarize_capped(&fb, seq, cap);
    fb
}

pub fn summarize(feedback: &Feedback, seq: &TransactionSequence) -> String {
    summarize_capped(feedback, seq, DEFAULT_SUMMARY_CAP)
}

/// Line-oriented digest: a version header, one line per transaction, then
/// the verdict. Transaction lines are dropped from the end to fit `cap`.
pub fn summarize_capped(feedback: &Feedback, seq: &TransactionSequence, cap: usize) -> String {
    let verdict = format!("verdict: {}", feedback.vulnerability);
    let tx_lines: Vec<String> = seq
        .txs
        .iter()
        .enumerate()
        .map(|(i, tx)| {
            let kinds = feedback.at(i);
            let status = if kinds.is_empty() {
                "ok".to_string()
            } else {
                kinds.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
            };
            format!("tx {i}: {} -> {status}", tx.call_signature())
        })
        .collect();

    let assemble = |kept: usize| {
        let mut out = String::from(SUMMARY_VERSION);
        out.push('\n');
        for line in &tx_lines[..kept] {
            out.push_str(line);
            out.push('\n');
        }
        if kept < tx_lines.len() {
            out.push_str(&format!("... {} more transactions omitted\n", tx_lines.len() - kept));
        }
        out.push_str(&verdict);
        out
    };

    let mut kept = tx_lines.len();
    let mut text = assemble(kept);
    while text.chars().count() > cap && kept > 0 {
        kept -= 1;
        text = assemble(kept);
    }
    if text.chars().count() > cap {
        // Degenerate cap: keep as much of the verdict as fits.
        text = verdict.chars().take(cap).collect();
    }
    text
}
