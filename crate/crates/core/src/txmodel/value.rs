// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The six argument and storage value kinds understood by the VM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Uint,
    Int,
    Bool,
    Address,
    Bytes,
    String,
}

impl ValueType {
    pub const ALL: [ValueType; 6] = [
        ValueType::Uint,
        ValueType::Int,
        ValueType::Bool,
        ValueType::Address,
        ValueType::Bytes,
        ValueType::String,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ValueType::Uint => "uint",
            ValueType::Int => "int",
            ValueType::Bool => "bool",
            ValueType::Address => "address",
            ValueType::Bytes => "bytes",
            ValueType::String => "string",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ValueType::Uint | ValueType::Int)
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ValueType {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ValueType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| ValueError::UnknownType(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValueError {
    #[error("unknown value type `{0}`")]
    UnknownType(String),
    #[error("invalid {ty} literal `{text}`")]
    BadLiteral { ty: ValueType, text: String },
    #[error("invalid address `{0}`")]
    BadAddress(String),
}

/// A 20-byte account address.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Address(pub [u8; 20]);

impl Address {
    pub const ZERO: Address = Address([0; 20]);

    /// Address whose low 8 bytes hold `n` big-endian.
    pub const fn from_low_u64(n: u64) -> Self {
        let b = n.to_be_bytes();
        let mut out = [0u8; 20];
        let mut i = 0;
        while i < 8 {
            out[12 + i] = b[i];
            i += 1;
        }
        Address(out)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Address {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .strip_prefix("0x")
            .ok_or_else(|| ValueError::BadAddress(s.to_string()))?;
        if digits.len() != 40 {
            return Err(ValueError::BadAddress(s.to_string()));
        }
        let mut out = [0u8; 20];
        hex::decode_to_slice(digits, &mut out).map_err(|_| ValueError::BadAddress(s.to_string()))?;
        Ok(Address(out))
    }
}

impl Serialize for Address {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A typed runtime value. Serialized as `{"type": ..., "value": ...}` with the
/// value stringly encoded.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "TypedText", into = "TypedText")]
pub enum Value {
    Uint(u128),
    Int(i128),
    Bool(bool),
    Address(Address),
    Bytes(Vec<u8>),
    Str(String),
}

impl Value {
    pub fn value_type(&self) -> ValueType {
        match self {
            Value::Uint(_) => ValueType::Uint,
            Value::Int(_) => ValueType::Int,
            Value::Bool(_) => ValueType::Bool,
            Value::Address(_) => ValueType::Address,
            Value::Bytes(_) => ValueType::Bytes,
            Value::Str(_) => ValueType::String,
        }
    }

    /// Zero value of a type, used for uninitialized storage.
    pub fn zero(ty: ValueType) -> Value {
        match ty {
            ValueType::Uint => Value::Uint(0),
            ValueType::Int => Value::Int(0),
            ValueType::Bool => Value::Bool(false),
            ValueType::Address => Value::Address(Address::ZERO),
            ValueType::Bytes => Value::Bytes(Vec::new()),
            ValueType::String => Value::Str(String::new()),
        }
    }

    pub fn parse(ty: ValueType, text: &str) -> Result<Value, ValueError> {
        let bad = || ValueError::BadLiteral { ty, text: text.to_string() };
        Ok(match ty {
            ValueType::Uint => {
                if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(bad());
                }
                Value::Uint(text.parse().map_err(|_| bad())?)
            }
            ValueType::Int => Value::Int(text.parse().map_err(|_| bad())?),
            ValueType::Bool => match text {
                "true" => Value::Bool(true),
                "false" => Value::Bool(false),
                _ => return Err(bad()),
            },
            ValueType::Address => Value::Address(text.parse()?),
            ValueType::Bytes => {
                let digits = text.strip_prefix("0x").ok_or_else(bad)?;
                Value::Bytes(hex::decode(digits).map_err(|_| bad())?)
            }
            ValueType::String => Value::Str(text.to_string()),
        })
    }

    /// Text form used inside records; inverse of [`Value::parse`].
    pub fn to_text(&self) -> String {
        match self {
            Value::Uint(v) => v.to_string(),
            Value::Int(v) => v.to_string(),
            Value::Bool(v) => v.to_string(),
            Value::Address(a) => a.to_string(),
            Value::Bytes(b) => format!("0x{}", hex::encode(b)),
            Value::Str(s) => s.clone(),
        }
    }

    pub fn as_uint(&self) -> Option<u128> {
        match self {
            Value::Uint(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_address(&self) -> Option<Address> {
        match self {
            Value::Address(a) => Some(*a),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => write!(f, "{s:?}"),
            other => f.write_str(&other.to_text()),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TypedText {
    #[serde(rename = "type")]
    ty: String,
    value: String,
}

impl TryFrom<TypedText> for Value {
    type Error = ValueError;

    fn try_from(t: TypedText) -> Result<Self, Self::Error> {
        Value::parse(t.ty.parse()?, &t.value)
    }
}

impl From<Value> for TypedText {
    fn from(v: Value) -> Self {
        TypedText { ty: v.value_type().name().to_string(), value: v.to_text() }
    }
}
