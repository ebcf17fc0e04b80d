// SPDX-License-Identifier: Apache-2.0

//! Chat-completion backed policy with heuristic fallback.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::heuristic::HeuristicBackend;
use super::{enforce_permissions, profile, AgentAction, AgentId, FieldEdit, PolicyBackend, PolicyError, PolicyInput, StructuralEdit};
use crate::txmodel::{codec, encode_sequence, Origin, ProgramContext, TransactionSequence};
use crate::vm::ContractModel;

pub const PROMPT_VERSION: &str = "v1";
pub const DEFAULT_LLM_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_PARSE_RETRIES: usize = 2;

const RETRY_NOTE: &str = "\n\nYour previous reply could not be parsed. Reply with only the JSON object.";

pub fn prompt_template(agent: AgentId) -> &'static str {
    match agent {
        AgentId::TxSeqDrafter => include_str!("../../prompts/v1/TxSeqDrafter.txt"),
        AgentId::TxSeqRefiner => include_str!("../../prompts/v1/TxSeqRefiner.txt"),
        AgentId::FunChecker => include_str!("../../prompts/v1/FunChecker.txt"),
        AgentId::ArgChecker => include_str!("../../prompts/v1/ArgChecker.txt"),
        AgentId::SNDChecker => include_str!("../../prompts/v1/SNDChecker.txt"),
        AgentId::AMTChecker => include_str!("../../prompts/v1/AMTChecker.txt"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    pub parse_retries: usize,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        LlmConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.0,
            timeout: DEFAULT_LLM_TIMEOUT,
            parse_retries: DEFAULT_PARSE_RETRIES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatOptions {
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub stream: bool,
    pub options: ChatOptions,
}

impl ChatRequest {
    pub fn to_body(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("chat requests serialize")
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    message: ChatMessage,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum BackendEvent {
    Retry { agent: AgentId, attempt: usize },
    Fallback { agent: AgentId, reason: String },
    Stripped { agent: AgentId, violations: usize },
}

fn render_interface(ctx: &ProgramContext) -> String {
    ctx.interface
        .iter()
        .map(|d| format!("- {}{}", d.signature(), if d.payable { " payable" } else { "" }))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Fills an agent's template. `seq`/`feedback` are empty for drafting.
pub fn build_prompt(agent: AgentId, ctx: &ProgramContext, seq: Option<&TransactionSequence>, feedback: &str, max_len: usize) -> String {
    let pool = serde_json::to_string_pretty(&ctx.seed_pool).expect("pool serializes");
    let sequence = seq.map(encode_sequence).unwrap_or_default();
    prompt_template(agent)
        .replace("{{goal}}", profile(agent).goal_text)
        .replace("{{source}}", &ctx.source_text)
        .replace("{{interface}}", &render_interface(ctx))
        .replace("{{pool}}", &pool)
        .replace("{{sequence}}", &sequence)
        .replace("{{feedback}}", feedback)
        .replace("{{max_len}}", &max_len.to_string())
}

/// JSON objects embedded in free text, in order of appearance.
fn embedded_objects(text: &str) -> impl Iterator<Item = Json> + '_ {
    text.char_indices().filter(|(_, c)| *c == '{').filter_map(move |(i, _)| {
        serde_json::Deserializer::from_str(&text[i..]).into_iter::<Json>().next().and_then(Result::ok)
    })
}

pub fn parse_sequence_record(text: &str) -> Option<TransactionSequence> {
    embedded_objects(text)
        .filter(|j| j.get("txs").is_some())
        .find_map(|j| codec::from_record(&j).ok())
        .filter(|s| !s.is_empty())
}

#[derive(Deserialize)]
struct ActionRecord {
    #[serde(default)]
    edits: Vec<FieldEdit>,
    #[serde(default)]
    structure: Vec<StructuralEdit>,
    #[serde(default)]
    rationale: String,
}

pub fn parse_action_record(text: &str, agent: AgentId) -> Option<AgentAction> {
    embedded_objects(text)
        .filter(|j| j.get("edits").is_some() || j.get("structure").is_some())
        .find_map(|j| serde_json::from_value::<ActionRecord>(j).ok())
        .map(|r| AgentAction { agent, edits: r.edits, structure: r.structure, rationale: r.rationale })
}

pub struct LlmBackend {
    cfg: LlmConfig,
    http: ureq::Agent,
    fallback: HeuristicBackend,
    events: Vec<BackendEvent>,
    fallbacks: usize,
}

impl LlmBackend {
    pub fn new(cfg: LlmConfig) -> Self {
        let http: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(cfg.timeout)).build().into();
        LlmBackend { cfg, http, fallback: HeuristicBackend::new(), events: Vec::new(), fallbacks: 0 }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    /// The exact request sent for `prompt`; its digest keys transcripts.
    pub fn chat_request(&self, agent: AgentId, prompt: &str) -> ChatRequest {
        ChatRequest {
            model: self.cfg.model.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: format!("You are {agent}, one agent in a smart contract fuzzing team. Prompt {PROMPT_VERSION}."),
                },
                ChatMessage { role: "user".into(), content: prompt.to_string() },
            ],
            stream: false,
            options: ChatOptions { temperature: self.cfg.temperature },
        }
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, PolicyError> {
        let unavailable = |e: ureq::Error| PolicyError::BackendUnavailable(e.to_string());
        let mut resp = self
            .http
            .post(&self.cfg.endpoint)
            .header("content-type", "application/json")
            .send(&req.to_body()[..])
            .map_err(unavailable)?;
        let parsed: ChatResponse = resp.body_mut().read_json().map_err(unavailable)?;
        Ok(parsed.message.content)
    }

    /// Sends the prompt, re-asking on unparsable replies.
    fn ask<T>(&mut self, agent: AgentId, prompt: String, parse: impl Fn(&str) -> Option<T>) -> Result<T, PolicyError> {
        let mut prompt = prompt;
        for attempt in 0..=self.cfg.parse_retries {
            if attempt > 0 {
                self.events.push(BackendEvent::Retry { agent, attempt });
                prompt.push_str(RETRY_NOTE);
            }
            let reply = self.complete(&self.chat_request(agent, &prompt))?;
            if let Some(v) = parse(&reply) {
                return Ok(v);
            }
        }
        Err(PolicyError::ParseExhausted { attempts: self.cfg.parse_retries + 1 })
    }

    fn note_fallback(&mut self, agent: AgentId, err: &PolicyError) {
        log::warn!("{agent}: falling back to heuristic policy ({err})");
        self.fallbacks += 1;
        self.events.push(BackendEvent::Fallback { agent, reason: err.to_string() });
    }

    fn finish(&mut self, action: AgentAction) -> AgentAction {
        let p = profile(action.agent);
        let enforced = enforce_permissions(action, &p);
        if enforced.violations > 0 {
            self.events.push(BackendEvent::Stripped { agent: enforced.action.agent, violations: enforced.violations });
        }
        enforced.action
    }

    fn reflect(&mut self, agent: AgentId, input: &PolicyInput<'_>) -> Result<AgentAction, PolicyError> {
        let prompt = build_prompt(agent, input.ctx, Some(input.seq), &input.feedback.summary_text, input.max_len);
        let max_len = input.max_len;
        let asked = self.ask(agent, prompt, |reply| {
            parse_action_record(reply, agent).or_else(|| {
                (agent == AgentId::TxSeqRefiner).then(|| parse_sequence_record(reply)).flatten().map(|s| {
                    let mut txs = s.txs;
                    txs.truncate(max_len);
                    AgentAction {
                        agent,
                        edits: vec![],
                        structure: vec![StructuralEdit::Replace { txs }],
                        rationale: "sequence proposed by model".into(),
                    }
                })
            })
        });
        match asked {
            Ok(action) => Ok(self.finish(action)),
            Err(e) => {
                self.note_fallback(agent, &e);
                match agent {
                    AgentId::TxSeqRefiner | AgentId::TxSeqDrafter => self.fallback.reflect_global(input),
                    _ => self.fallback.check_element(agent, input),
                }
            }
        }
    }
}

impl PolicyBackend for LlmBackend {
    fn name(&self) -> &'static str {
        "llm"
    }

    fn draft(
        &mut self,
        ctx: &ProgramContext,
        model: &ContractModel,
        seed: u64,
        max_len: usize,
    ) -> Result<TransactionSequence, PolicyError> {
        let agent = AgentId::TxSeqDrafter;
        let prompt = build_prompt(agent, ctx, None, "", max_len);
        match self.ask(agent, prompt, parse_sequence_record) {
            Ok(mut seq) => {
                seq.txs.truncate(max_len);
                seq.origin = Origin::Drafted;
                Ok(seq)
            }
            Err(e) => {
                self.note_fallback(agent, &e);
                self.fallback.draft(ctx, model, seed, max_len)
            }
        }
    }

    fn reflect_global(&mut self, input: &PolicyInput<'_>) -> Result<AgentAction, PolicyError> {
        self.reflect(AgentId::TxSeqRefiner, input)
    }

    fn check_element(&mut self, agent: AgentId, input: &PolicyInput<'_>) -> Result<AgentAction, PolicyError> {
        self.reflect(agent, input)
    }

    fn fallback_count(&self) -> usize {
        self.fallbacks
    }

    fn events(&self) -> Vec<BackendEvent> {
        self.events.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{FieldChange, Field};
    use crate::txmodel::SeedPool;

    #[test]
    fn sequence_found_inside_prose() {
        let a = SeedPool::default().primary_attacker();
        let reply = format!(
            "Sure! Here it is:\n```json\n{{\"txs\": [{{\"function\": \"withdraw\", \"args\": [], \"sender\": \"{a}\", \"amount\": \"0\"}}]}}\n```"
        );
        let seq = parse_sequence_record(&reply).unwrap();
        assert_eq!(seq.txs[0].function, "withdraw");
        assert!(parse_sequence_record("no json here { at all").is_none());
    }

    #[test]
    fn action_record_parsed_and_tagged() {
        let reply = r#"I would change the amount. {"edits": [{"tx": 1, "field": "amount", "value": "0"}], "rationale": "nonpayable"}"#;
        let action = parse_action_record(reply, AgentId::AMTChecker).unwrap();
        assert_eq!(action.agent, AgentId::AMTChecker);
        assert_eq!(action.edits, vec![FieldEdit::new(1, FieldChange::Amount(0))]);
        assert_eq!(action.touched_fields(), vec![Field::Amount]);
    }

    #[test]
    fn every_template_names_its_role() {
        let ctx = ProgramContext::new("contract C {}", vec![], SeedPool::default());
        for agent in AgentId::ALL {
            let p = build_prompt(agent, &ctx, None, "", 10);
            assert!(p.starts_with(&format!("Role: {agent}\n")));
            assert!(!p.contains("{{"), "{agent} left a placeholder");
        }
    }
}
