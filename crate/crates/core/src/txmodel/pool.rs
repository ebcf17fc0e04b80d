// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Address;

pub const DEFAULT_ACCOUNT_FUNDING: u128 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Deployer,
    User,
    Attacker,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("seed pool has no {0:?} addresses")]
    EmptyPartition(Role),
    #[error("seed pool amounts must be non-empty and include 0")]
    BadAmounts,
    #[error("address {0} appears in more than one partition")]
    DuplicateAddress(Address),
}

/// Candidate senders (partitioned by role), candidate wei amounts and the
/// genesis funding of every sender account.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PoolDoc", into = "PoolDoc")]
pub struct SeedPool {
    deployer: Address,
    users: Vec<Address>,
    attackers: Vec<Address>,
    amounts: Vec<u128>,
    funding: BTreeMap<Address, u128>,
}

impl SeedPool {
    /// Builds a pool, funding every listed account with `funding` unless an
    /// explicit entry exists in `overrides`.
    pub fn new(
        deployer: Address,
        users: Vec<Address>,
        attackers: Vec<Address>,
        amounts: Vec<u128>,
        funding: u128,
        overrides: BTreeMap<Address, u128>,
    ) -> Result<Self, PoolError> {
        if attackers.is_empty() {
            return Err(PoolError::EmptyPartition(Role::Attacker));
        }
        let mut amounts = amounts;
        amounts.sort_unstable();
        amounts.dedup();
        if amounts.first() != Some(&0) {
            return Err(PoolError::BadAmounts);
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in std::iter::once(&deployer).chain(&users).chain(&attackers) {
            if !seen.insert(*a) {
                return Err(PoolError::DuplicateAddress(*a));
            }
        }
        let funding = seen
            .into_iter()
            .map(|a| (a, overrides.get(&a).copied().unwrap_or(funding)))
            .collect();
        Ok(SeedPool { deployer, users, attackers, amounts, funding })
    }

    pub fn deployer(&self) -> Address {
        self.deployer
    }

    pub fn users(&self) -> &[Address] {
        &self.users
    }

    pub fn attackers(&self) -> &[Address] {
        &self.attackers
    }

    /// Sorted ascending, always starting with 0.
    pub fn amounts(&self) -> &[u128] {
        &self.amounts
    }

    pub fn funding(&self) -> &BTreeMap<Address, u128> {
        &self.funding
    }

    pub fn partition(&self, role: Role) -> &[Address] {
        match role {
            Role::Deployer => std::slice::from_ref(&self.deployer),
            Role::User => &self.users,
            Role::Attacker => &self.attackers,
        }
    }

    pub fn contains_sender(&self, a: Address) -> bool {
        self.funding.contains_key(&a)
    }

    pub fn is_attacker(&self, a: Address) -> bool {
        self.attackers.contains(&a)
    }

    pub fn role_of(&self, a: Address) -> Option<Role> {
        if a == self.deployer {
            Some(Role::Deployer)
        } else if self.users.contains(&a) {
            Some(Role::User)
        } else if self.attackers.contains(&a) {
            Some(Role::Attacker)
        } else {
            None
        }
    }

    /// All senders in partition order: deployer, users, attackers.
    pub fn senders(&self) -> Vec<Address> {
        std::iter::once(self.deployer)
            .chain(self.users.iter().copied())
            .chain(self.attackers.iter().copied())
            .collect()
    }

    pub fn primary_attacker(&self) -> Address {
        self.attackers[0]
    }

    /// First user, or the deployer when no users are configured.
    pub fn primary_user(&self) -> Address {
        self.users.first().copied().unwrap_or(self.deployer)
    }
}

impl Default for SeedPool {
    /// One deployer, three users, two attackers; amounts span 0 to 10^4 wei.
    fn default() -> Self {
        SeedPool::new(
            Address::from_low_u64(0x1000),
            vec![Address::from_low_u64(0x2001), Address::from_low_u64(0x2002), Address::from_low_u64(0x2003)],
            vec![Address::from_low_u64(0xa001), Address::from_low_u64(0xa002)],
            vec![0, 1, 10, 100, 1_000, 10_000],
            DEFAULT_ACCOUNT_FUNDING,
            BTreeMap::new(),
        )
        .expect("default pool is well formed")
    }
}

/// Deterministically picks an address of `role` for a given seed.
pub fn sample_sender(pool: &SeedPool, role: Role, rng_seed: u64) -> Result<Address, PoolError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    pool.partition(role)
        .choose(&mut rng)
        .copied()
        .ok_or(PoolError::EmptyPartition(role))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolDoc {
    deployer: Address,
    users: Vec<Address>,
    attackers: Vec<Address>,
    amounts: Vec<String>,
    funding: BTreeMap<Address, String>,
}

impl TryFrom<PoolDoc> for SeedPool {
    type Error = String;

    fn try_from(doc: PoolDoc) -> Result<Self, Self::Error> {
        let amounts = doc
            .amounts
            .iter()
            .map(|a| a.parse::<u128>().map_err(|_| format!("bad amount `{a}`")))
            .collect::<Result<Vec<_>, _>>()?;
        let overrides = doc
            .funding
            .iter()
            .map(|(k, v)| v.parse::<u128>().map(|v| (*k, v)).map_err(|_| format!("bad funding `{v}`")))
            .collect::<Result<BTreeMap<_, _>, _>>()?;
        SeedPool::new(doc.deployer, doc.users, doc.attackers, amounts, DEFAULT_ACCOUNT_FUNDING, overrides)
            .map_err(|e| e.to_string())
    }
}

impl From<SeedPool> for PoolDoc {
    fn from(p: SeedPool) -> Self {
        PoolDoc {
            deployer: p.deployer,
            users: p.users,
            attackers: p.attackers,
            amounts: p.amounts.iter().map(u128::to_string).collect(),
            funding: p.funding.iter().map(|(k, v)| (*k, v.to_string())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deployer_partition_is_singleton() {
        let pool = SeedPool::default();
        for seed in 0..20 {
            assert_eq!(sample_sender(&pool, Role::Deployer, seed).unwrap(), pool.deployer());
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let pool = SeedPool::default();
        let a = sample_sender(&pool, Role::Attacker, 7).unwrap();
        let b = sample_sender(&pool, Role::Attacker, 7).unwrap();
        assert_eq!(a, b);
        assert!(pool.is_attacker(a));
    }

    #[test]
    fn three_attackers_all_reached() {
        let attackers: Vec<_> = (1..=3).map(|i| Address::from_low_u64(0xa000 + i)).collect();
        let pool = SeedPool::new(
            Address::from_low_u64(1),
            vec![],
            attackers.clone(),
            vec![0, 5],
            100,
            BTreeMap::new(),
        )
        .unwrap();
        let mut tally = BTreeMap::new();
        for seed in 0..100 {
            *tally.entry(sample_sender(&pool, Role::Attacker, seed).unwrap()).or_insert(0) += 1;
        }
        assert_eq!(tally.len(), 3);
        assert!(tally.keys().all(|a| attackers.contains(a)));
    }

    #[test]
    fn empty_user_partition_is_reported() {
        let pool = SeedPool::new(
            Address::from_low_u64(1),
            vec![],
            vec![Address::from_low_u64(2)],
            vec![0],
            1,
            BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(sample_sender(&pool, Role::User, 0), Err(PoolError::EmptyPartition(Role::User)));
    }

    #[test]
    fn invariants_enforced_on_construction() {
        let d = Address::from_low_u64(1);
        assert_eq!(
            SeedPool::new(d, vec![], vec![], vec![0], 1, BTreeMap::new()),
            Err(PoolError::EmptyPartition(Role::Attacker))
        );
        assert_eq!(
            SeedPool::new(d, vec![], vec![Address::from_low_u64(2)], vec![5], 1, BTreeMap::new()),
            Err(PoolError::BadAmounts)
        );
        assert_eq!(
            SeedPool::new(d, vec![], vec![d], vec![0], 1, BTreeMap::new()),
            Err(PoolError::DuplicateAddress(d))
        );
    }

    #[test]
    fn pool_document_round_trip() {
        let pool = SeedPool::default();
        let text = serde_json::to_string(&pool).unwrap();
        assert_eq!(serde_json::from_str::<SeedPool>(&text).unwrap(), pool);
    }
}
