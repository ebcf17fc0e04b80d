// SPDX-License-Identifier: Apache-2.0

//! Canonical sequence record:
//!
//! ```json
//! {"origin": "drafted",
//!  "txs": [{"function": "setPhase",
//!           "args": [{"type": "uint", "value": "1"}],
//!           "sender": "0x…",
//!           "amount": "0"}]}
//! ```
//!
//! `origin` is optional on input and defaults to `drafted`. Every other field
//! is required and decoding rejects unknown keys.

use serde_json::{json, Map, Value as Json};
use thiserror::Error;

use super::{Address, Origin, Transaction, TransactionSequence, Value, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("decode error at {position}: {cause}")]
pub struct DecodeError {
    pub position: String,
    pub cause: String,
}

impl DecodeError {
    fn new(position: impl Into<String>, cause: impl Into<String>) -> Self {
        DecodeError { position: position.into(), cause: cause.into() }
    }
}

pub fn encode_sequence(seq: &TransactionSequence) -> String {
    serde_json::to_string(&to_record(seq)).expect("records are plain JSON")
}

pub fn decode_sequence(text: &str) -> Result<TransactionSequence, DecodeError> {
    let json: Json = serde_json::from_str(text)
        .map_err(|e| DecodeError::new(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    from_record(&json)
}

pub(crate) fn to_record(seq: &TransactionSequence) -> Json {
    let txs: Vec<Json> = seq.txs.iter().map(tx_to_record).collect();
    json!({"origin": seq.origin.name(), "txs": txs})
}

pub(crate) fn tx_to_record(tx: &Transaction) -> Json {
    json!({
        "function": tx.function,
        "args": tx.args.iter().map(|a| json!({"type": a.value_type().name(), "value": a.to_text()})).collect::<Vec<_>>(),
        "sender": tx.sender.to_string(),
        "amount": tx.amount.to_string(),
    })
}

fn object<'a>(json: &'a Json, at: &str) -> Result<&'a Map<String, Json>, DecodeError> {
    json.as_object().ok_or_else(|| DecodeError::new(at, "expected an object"))
}

fn only_keys(map: &Map<String, Json>, allowed: &[&str], at: &str) -> Result<(), DecodeError> {
    match map.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(DecodeError::new(format!("{at}.{k}"), "unknown field")),
        None => Ok(()),
    }
}

fn field<'a>(map: &'a Map<String, Json>, key: &str, at: &str) -> Result<&'a Json, DecodeError> {
    map.get(key).ok_or_else(|| DecodeError::new(format!("{at}.{key}"), "missing field"))
}

fn string<'a>(json: &'a Json, at: &str) -> Result<&'a str, DecodeError> {
    json.as_str().ok_or_else(|| DecodeError::new(at, "expected a string"))
}

pub(crate) fn from_record(json: &Json) -> Result<TransactionSequence, DecodeError> {
    let root = object(json, "$")?;
    only_keys(root, &["origin", "txs"], "$")?;
    let origin = match root.get("origin") {
        None => Origin::Drafted,
        Some(o) => match string(o, "$.origin")? {
            "drafted" => Origin::Drafted,
            "globally-reflected" => Origin::GloballyReflected,
            "locally-reflected" => Origin::LocallyReflected,
            other => return Err(DecodeError::new("$.origin", format!("unknown origin `{other}`"))),
        },
    };
    let txs = field(root, "txs", "$")?
        .as_array()
        .ok_or_else(|| DecodeError::new("$.txs", "expected a list"))?
        .iter()
        .enumerate()
        .map(|(i, tx)| decode_tx(tx, &format!("$.txs[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TransactionSequence { txs, origin })
}

pub(crate) fn decode_tx(json: &Json, at: &str) -> Result<Transaction, DecodeError> {
    let map = object(json, at)?;
    only_keys(map, &["function", "args", "sender", "amount"], at)?;
    let function = string(field(map, "function", at)?, &format!("{at}.function"))?.to_string();
    if function.is_empty() {
        return Err(DecodeError::new(format!("{at}.function"), "empty function name"));
    }
    let args = field(map, "args", at)?
        .as_array()
        .ok_or_else(|| DecodeError::new(format!("{at}.args"), "expected a list"))?
        .iter()
        .enumerate()
        .map(|(j, a)| decode_arg(a, &format!("{at}.args[{j}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let sender_at = format!("{at}.sender");
    let sender: Address = string(field(map, "sender", at)?, &sender_at)?
        .parse()
        .map_err(|e: super::ValueError| DecodeError::new(&sender_at, e.to_string()))?;
    let amount = decode_amount(field(map, "amount", at)?, &format!("{at}.amount"))?;
    Ok(Transaction { function, args, sender, amount })
}

fn decode_arg(json: &Json, at: &str) -> Result<Value, DecodeError> {
    let map = object(json, at)?;
    only_keys(map, &["type", "value"], at)?;
    let ty_text = string(field(map, "type", at)?, &format!("{at}.type"))?;
    let ty: ValueType = ty_text
        .parse()
        .map_err(|_| DecodeError::new(format!("{at}.type"), format!("unknown value-type `{ty_text}`")))?;
    let text = string(field(map, "value", at)?, &format!("{at}.value"))?;
    Value::parse(ty, text).map_err(|e| DecodeError::new(format!("{at}.value"), e.to_string()))
}

fn decode_amount(json: &Json, at: &str) -> Result<u128, DecodeError> {
    let negative = match json {
        Json::Number(n) => n.as_f64().is_some_and(|f| f < 0.0),
        Json::String(s) => s.starts_with('-'),
        _ => false,
    };
    if negative {
        return Err(DecodeError::new(at, "negative amount"));
    }
    let text = json
        .as_str()
        .ok_or_else(|| DecodeError::new(at, "amount must be a decimal string"))?;
    Value::parse(ValueType::Uint, text)
        .ok()
        .and_then(|v| v.as_uint())
        .ok_or_else(|| DecodeError::new(at, format!("invalid amount `{text}`")))
}
