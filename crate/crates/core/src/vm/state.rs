// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::txmodel::{Address, Value};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageValue {
    Scalar(Value),
    Map(BTreeMap<Address, u128>),
}

impl StorageValue {
    pub fn as_scalar(&self) -> Option<&Value> {
        match self {
            StorageValue::Scalar(v) => Some(v),
            StorageValue::Map(_) => None,
        }
    }
}

/// Storage, balances and block context of one deployment.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChainState {
    pub storage: BTreeMap<String, StorageValue>,
    pub contract_balance: u128,
    pub balances: BTreeMap<Address, u128>,
    pub nonces: BTreeMap<Address, u64>,
    pub block_number: u64,
    pub timestamp: u64,
    pub alive: bool,
}

impl ChainState {
    pub fn scalar(&self, slot: &str) -> Option<&Value> {
        self.storage.get(slot).and_then(StorageValue::as_scalar)
    }

    pub fn map_entry(&self, slot: &str, key: Address) -> u128 {
        match self.storage.get(slot) {
            Some(StorageValue::Map(m)) => m.get(&key).copied().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn balance_of(&self, a: Address) -> u128 {
        self.balances.get(&a).copied().unwrap_or(0)
    }

    /// Contract balance plus every external balance.
    pub fn total_ether(&self) -> u128 {
        self.balances.values().fold(self.contract_balance, |acc, b| acc + b)
    }

    /// Canonical byte encoding, used for equality checks across runs.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("chain state serializes")
    }
}
