// SPDX-License-Identifier: Apache-2.0

//! Transactions, sequences, seed pools and interface descriptors shared by
//! every other part of the fuzzer.

pub(crate) mod codec;
mod pool;
mod validate;
mod value;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use codec::{decode_sequence, encode_sequence, DecodeError};
pub use pool::{sample_sender, PoolError, Role, SeedPool};
pub use validate::{validate_sequence, ElementFault, FaultKind};
pub use value::{Address, Value, ValueError, ValueType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    External,
    Internal,
    Private,
}

impl Visibility {
    pub fn is_callable(self) -> bool {
        matches!(self, Visibility::Public | Visibility::External)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Param {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ValueType,
}

/// ABI-level description of one contract function.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDescriptor {
    pub name: String,
    #[serde(default)]
    pub params: Vec<Param>,
    #[serde(default)]
    pub payable: bool,
    #[serde(default = "default_visibility")]
    pub visibility: Visibility,
}

fn default_visibility() -> Visibility {
    Visibility::Public
}

impl FunctionDescriptor {
    pub fn is_callable(&self) -> bool {
        self.visibility.is_callable()
    }

    pub fn param_types(&self) -> impl Iterator<Item = ValueType> + '_ {
        self.params.iter().map(|p| p.ty)
    }

    /// `name(type,type)` form.
    pub fn signature(&self) -> String {
        let tys: Vec<_> = self.params.iter().map(|p| p.ty.name()).collect();
        format!("{}({})", self.name, tys.join(","))
    }
}

/// One call: function, typed arguments, sender and attached wei.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transaction {
    pub function: String,
    pub args: Vec<Value>,
    pub sender: Address,
    pub amount: u128,
}

impl Transaction {
    pub fn new(function: impl Into<String>, args: Vec<Value>, sender: Address, amount: u128) -> Self {
        Transaction { function: function.into(), args, sender, amount }
    }

    /// `f(uint:1) from 0x.. value 10`, used in digests and prompts.
    pub fn call_signature(&self) -> String {
        let args: Vec<_> = self
            .args
            .iter()
            .map(|a| format!("{}:{}", a.value_type(), a))
            .collect();
        format!("{}({}) from {} value {}", self.function, args.join(", "), self.sender, self.amount)
    }
}

/// Which phase last produced a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    #[default]
    Drafted,
    GloballyReflected,
    LocallyReflected,
}

impl Origin {
    pub fn name(self) -> &'static str {
        match self {
            Origin::Drafted => "drafted",
            Origin::GloballyReflected => "globally-reflected",
            Origin::LocallyReflected => "locally-reflected",
        }
    }
}

/// The fuzzing state: an ordered list of transactions replayed from genesis.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct TransactionSequence {
    pub txs: Vec<Transaction>,
    pub origin: Origin,
}

impl TransactionSequence {
    pub fn new(txs: Vec<Transaction>, origin: Origin) -> Self {
        TransactionSequence { txs, origin }
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }
}

impl fmt::Display for TransactionSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, tx) in self.txs.iter().enumerate() {
            writeln!(f, "{i}: {}", tx.call_signature())?;
        }
        Ok(())
    }
}

impl Serialize for TransactionSequence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        codec::to_record(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for TransactionSequence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let record = serde_json::Value::deserialize(d)?;
        codec::from_record(&record).map_err(serde::de::Error::custom)
    }
}

impl Serialize for Transaction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        codec::tx_to_record(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Transaction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let record = serde_json::Value::deserialize(d)?;
        codec::decode_tx(&record, "$").map_err(serde::de::Error::custom)
    }
}

/// Everything an agent may look at: contract text, callable surface, seed pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProgramContext {
    pub source_text: String,
    pub interface: Vec<FunctionDescriptor>,
    pub seed_pool: SeedPool,
}

impl ProgramContext {
    pub fn new(source_text: impl Into<String>, interface: Vec<FunctionDescriptor>, seed_pool: SeedPool) -> Self {
        let interface = interface.into_iter().filter(|d| d.is_callable()).collect();
        ProgramContext { source_text: source_text.into(), interface, seed_pool }
    }

    pub fn descriptor(&self, name: &str) -> Option<&FunctionDescriptor> {
        self.interface.iter().find(|d| d.name == name)
    }
}
