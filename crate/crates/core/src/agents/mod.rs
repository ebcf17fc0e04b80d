// SPDX-License-Identifier: Apache-2.0

//! The six reflection agents, their permissions, and the policy interface.

mod heuristic;
mod llm;
mod planner;
mod transcript;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::Feedback;
use crate::txmodel::{Address, ProgramContext, Transaction, TransactionSequence, Value};
use crate::vm::ContractModel;

pub use heuristic::{pick_vuln_funcs, HeuristicBackend};
pub use llm::{
    build_prompt, parse_action_record, parse_sequence_record, prompt_template, BackendEvent, ChatMessage, ChatRequest,
    LlmBackend, LlmConfig, DEFAULT_LLM_TIMEOUT, DEFAULT_PARSE_RETRIES, PROMPT_VERSION,
};
pub use planner::{ArgGenerator, Planner};
pub use transcript::{request_digest, MockReply, MockServer, Transcript, TranscriptRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentId {
    TxSeqDrafter,
    TxSeqRefiner,
    FunChecker,
    ArgChecker,
    SNDChecker,
    AMTChecker,
}

impl AgentId {
    pub const ALL: [AgentId; 6] = [
        AgentId::TxSeqDrafter,
        AgentId::TxSeqRefiner,
        AgentId::FunChecker,
        AgentId::ArgChecker,
        AgentId::SNDChecker,
        AgentId::AMTChecker,
    ];

    /// Element checkers in schedule order.
    pub const CHECKERS: [AgentId; 4] = [AgentId::FunChecker, AgentId::ArgChecker, AgentId::SNDChecker, AgentId::AMTChecker];

    pub fn name(self) -> &'static str {
        match self {
            AgentId::TxSeqDrafter => "TxSeqDrafter",
            AgentId::TxSeqRefiner => "TxSeqRefiner",
            AgentId::FunChecker => "FunChecker",
            AgentId::ArgChecker => "ArgChecker",
            AgentId::SNDChecker => "SNDChecker",
            AgentId::AMTChecker => "AMTChecker",
        }
    }

    pub fn index(self) -> u64 {
        AgentId::ALL.iter().position(|a| *a == self).expect("listed") as u64
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentId::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| format!("unknown agent `{s}`"))
    }
}

/// Something an agent may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Function,
    Args,
    Sender,
    Amount,
    Structure,
}

impl Field {
    pub const ALL: [Field; 5] = [Field::Function, Field::Args, Field::Sender, Field::Amount, Field::Structure];
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentProfile {
    pub id: AgentId,
    pub goal_text: &'static str,
    pub permissions: &'static [Field],
    pub actions: &'static [&'static str],
}

impl AgentProfile {
    pub fn permits(&self, field: Field) -> bool {
        self.permissions.contains(&field)
    }
}

pub fn profile(id: AgentId) -> AgentProfile {
    const ALL_FIELDS: &[Field] = &Field::ALL;
    let (goal_text, permissions, actions): (&str, &[Field], &[&str]) = match id {
        AgentId::TxSeqDrafter => (
            "Draft a complete transaction sequence that is likely to expose a vulnerability.",
            ALL_FIELDS,
            &["findFuncs", "pickVulFuncs", "orderCalls", "draftSequence"],
        ),
        AgentId::TxSeqRefiner => (
            "Revise the whole sequence so that failing guards pass and funds reach the attacker.",
            ALL_FIELDS,
            &["insertSetter", "reorderCalls", "redirectPayout", "swapTarget"],
        ),
        AgentId::FunChecker => (
            "Make sure every transaction calls a function the contract actually exposes.",
            &[Field::Function],
            &["checkCallable", "renameFunction"],
        ),
        AgentId::ArgChecker => (
            "Make sure every argument list matches the function's parameter count and types.",
            &[Field::Args],
            &["checkTypes", "regenerateArgs"],
        ),
        AgentId::SNDChecker => (
            "Pick sender addresses from the seed pool that can afford and are allowed to make each call.",
            &[Field::Sender],
            &["checkSender", "resampleSender"],
        ),
        AgentId::AMTChecker => (
            "Pick ether amounts that respect payability and value constraints.",
            &[Field::Amount],
            &["checkAmount", "zeroAmount", "nextAmount"],
        ),
    };
    AgentProfile { id, goal_text, permissions, actions }
}

pub fn profiles() -> Vec<AgentProfile> {
    AgentId::ALL.into_iter().map(profile).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "field", content = "value", rename_all = "snake_case")]
pub enum FieldChange {
    Function(String),
    Args(Vec<Value>),
    Sender(Address),
    Amount(#[serde(with = "amount_text")] u128),
}

impl FieldChange {
    pub fn field(&self) -> Field {
        match self {
            FieldChange::Function(_) => Field::Function,
            FieldChange::Args(_) => Field::Args,
            FieldChange::Sender(_) => Field::Sender,
            FieldChange::Amount(_) => Field::Amount,
        }
    }

    pub fn apply_to(&self, tx: &mut Transaction) {
        match self {
            FieldChange::Function(f) => tx.function = f.clone(),
            FieldChange::Args(a) => tx.args = a.clone(),
            FieldChange::Sender(s) => tx.sender = *s,
            FieldChange::Amount(a) => tx.amount = *a,
        }
    }
}

mod amount_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldEdit {
    pub tx: usize,
    #[serde(flatten)]
    pub change: FieldChange,
}

impl FieldEdit {
    pub fn new(tx: usize, change: FieldChange) -> Self {
        FieldEdit { tx, change }
    }
}

/// Indices refer to positions in the sequence the action was computed on.
/// `at`/`to` equal to the sequence length mean "at the end".
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StructuralEdit {
    Insert { at: usize, tx: Transaction },
    Delete { index: usize },
    Move { from: usize, to: usize },
    /// Replaces the whole sequence.
    Replace { txs: Vec<Transaction> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAction {
    pub agent: AgentId,
    #[serde(default)]
    pub edits: Vec<FieldEdit>,
    #[serde(default)]
    pub structure: Vec<StructuralEdit>,
    #[serde(default)]
    pub rationale: String,
}

impl AgentAction {
    pub fn noop(agent: AgentId, rationale: impl Into<String>) -> Self {
        AgentAction { agent, edits: vec![], structure: vec![], rationale: rationale.into() }
    }

    pub fn is_noop(&self) -> bool {
        self.edits.is_empty() && self.structure.is_empty()
    }

    /// Fields this action touches, with `Structure` for structural edits.
    pub fn touched_fields(&self) -> Vec<Field> {
        let mut fields: Vec<Field> = self.edits.iter().map(|e| e.change.field()).collect();
        if !self.structure.is_empty() {
            fields.push(Field::Structure);
        }
        fields.sort();
        fields.dedup();
        fields
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Enforced {
    pub action: AgentAction,
    pub violations: usize,
}

/// Strips every edit the profile does not permit. Each stripped edit counts
/// as one violation.
pub fn enforce_permissions(action: AgentAction, profile: &AgentProfile) -> Enforced {
    let before = action.edits.len() + action.structure.len();
    let edits: Vec<FieldEdit> = action.edits.into_iter().filter(|e| profile.permits(e.change.field())).collect();
    let structure = if profile.permits(Field::Structure) { action.structure } else { vec![] };
    let violations = before - edits.len() - structure.len();
    if violations > 0 {
        log::warn!("{}: stripped {violations} edit(s) outside its permissions", profile.id);
    }
    Enforced {
        action: AgentAction { agent: profile.id, edits, structure, rationale: action.rationale },
        violations,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("contract exposes no callable function")]
    EmptyInterface,
    #[error("no repair rule applies")]
    NoRepairAvailable,
    #[error("policy backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no parsable record after {attempts} attempt(s)")]
    ParseExhausted { attempts: usize },
}

/// What an agent sees when asked to act.
#[derive(Clone, Copy, Debug)]
pub struct PolicyInput<'a> {
    pub ctx: &'a ProgramContext,
    pub model: &'a ContractModel,
    pub seq: &'a TransactionSequence,
    pub feedback: &'a Feedback,
    pub round: usize,
    pub seed: u64,
    pub max_len: usize,
    /// Whether global reflection already changed the sequence this round.
    pub refined: bool,
}

/// Decision procedure shared by all agents.
pub trait PolicyBackend: Send {
    fn name(&self) -> &'static str;

    fn draft(
        &mut self,
        ctx: &ProgramContext,
        model: &ContractModel,
        seed: u64,
        max_len: usize,
    ) -> Result<TransactionSequence, PolicyError>;

    fn reflect_global(&mut self, input: &PolicyInput<'_>) -> Result<AgentAction, PolicyError>;

    fn check_element(&mut self, agent: AgentId, input: &PolicyInput<'_>) -> Result<AgentAction, PolicyError>;

    /// Calls answered by the fallback path since the backend was created.
    fn fallback_count(&self) -> usize {
        0
    }

    fn events(&self) -> Vec<BackendEvent> {
        vec![]
    }
}

/// Mixes the configured seed with round and agent so every call draws from
/// its own stream.
pub fn derive_seed(seed: u64, round: usize, agent: AgentId) -> u64 {
    let mut x = seed ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ agent.index().wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 31;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 29)
}
