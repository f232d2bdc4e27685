//! Fleet domain model: replica identities, statuses, and the state table
//! every other component manipulates.

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;

use crate::config::{ConfigError, SystemConfig};
use crate::fixed::RollingSum;

/// Identity of one replica: pool index and replica index, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReplicaRef {
    pub pool: u32,
    pub replica: u32,
}

impl ReplicaRef {
    pub fn new(pool: u32, replica: u32) -> ReplicaRef {
        ReplicaRef { pool, replica }
    }
}

impl fmt::Display for ReplicaRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.pool, self.replica)
    }
}

/// Loopback address uniquely naming a replica: pool in the second octet,
/// replica index split across the last two. Bindable on Linux loopback, so
/// socket transports can use it as a real source address.
pub fn replica_address(r: ReplicaRef) -> Ipv4Addr {
    Ipv4Addr::new(
        127,
        r.pool as u8,
        (r.replica >> 8) as u8,
        (r.replica & 0xff) as u8,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplicaStatus {
    Available,
    /// Scheduled for refresh; still draining its in-flight requests.
    MarkedForRefresh { since: u64 },
    /// Offline until the given time.
    Refreshing { until: u64 },
}

impl ReplicaStatus {
    pub fn is_available(self) -> bool {
        matches!(self, ReplicaStatus::Available)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicaState {
    pub status: ReplicaStatus,
    pub in_flight: u32,
    pub served_since_refresh: u64,
}

impl ReplicaState {
    fn fresh() -> ReplicaState {
        ReplicaState {
            status: ReplicaStatus::Available,
            in_flight: 0,
            served_since_refresh: 0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("serving-set count m^n overflows: m={m}, n={n}")]
    ServingSetOverflow { n: u32, m: u32 },
    #[error("replica {0} does not exist")]
    UnknownReplica(ReplicaRef),
}

/// Status table of all n*m replicas plus the two pieces of shared counter
/// state: the refresh rolling sum and the wrapping request-id counter.
#[derive(Debug, Clone)]
pub struct FleetState {
    n: u32,
    m: u32,
    replicas: Vec<ReplicaState>,
    by_address: HashMap<Ipv4Addr, ReplicaRef>,
    pub rolling_sum: RollingSum,
    pub id_counter: u32,
}

impl FleetState {
    pub fn new(config: &SystemConfig) -> Result<FleetState, ConfigError> {
        config.validate()?;
        let total = (config.n * config.m) as usize;
        let mut by_address = HashMap::with_capacity(total);
        for pool in 1..=config.n {
            for replica in 1..=config.m {
                let r = ReplicaRef::new(pool, replica);
                by_address.insert(replica_address(r), r);
            }
        }
        Ok(FleetState {
            n: config.n,
            m: config.m,
            replicas: vec![ReplicaState::fresh(); total],
            by_address,
            rolling_sum: RollingSum::new(config.k),
            id_counter: 0,
        })
    }

    pub fn pools(&self) -> u32 {
        self.n
    }

    pub fn replicas_per_pool(&self) -> u32 {
        self.m
    }

    pub fn total_replicas(&self) -> u32 {
        self.n * self.m
    }

    fn index(&self, r: ReplicaRef) -> Option<usize> {
        if r.pool >= 1 && r.pool <= self.n && r.replica >= 1 && r.replica <= self.m {
            Some(((r.pool - 1) * self.m + (r.replica - 1)) as usize)
        } else {
            None
        }
    }

    pub fn contains(&self, r: ReplicaRef) -> bool {
        self.index(r).is_some()
    }

    pub fn get(&self, r: ReplicaRef) -> Result<&ReplicaState, ModelError> {
        self.index(r)
            .map(|i| &self.replicas[i])
            .ok_or(ModelError::UnknownReplica(r))
    }

    pub fn get_mut(&mut self, r: ReplicaRef) -> Result<&mut ReplicaState, ModelError> {
        self.index(r)
            .map(|i| &mut self.replicas[i])
            .ok_or(ModelError::UnknownReplica(r))
    }

    pub fn address_of(&self, r: ReplicaRef) -> Ipv4Addr {
        replica_address(r)
    }

    pub fn replica_at(&self, address: Ipv4Addr) -> Option<ReplicaRef> {
        self.by_address.get(&address).copied()
    }

    pub fn refs(&self) -> impl Iterator<Item = ReplicaRef> + '_ {
        (1..=self.n).flat_map(move |pool| (1..=self.m).map(move |replica| ReplicaRef { pool, replica }))
    }

    pub fn pool_refs(&self, pool: u32) -> impl Iterator<Item = ReplicaRef> + '_ {
        (1..=self.m).map(move |replica| ReplicaRef { pool, replica })
    }

    /// Available replicas of one pool, replica index ascending.
    pub fn available_in_pool(&self, pool: u32) -> Vec<ReplicaRef> {
        self.pool_refs(pool)
            .filter(|&r| self.get(r).map(|s| s.status.is_available()).unwrap_or(false))
            .collect()
    }
}

/// Number of distinct serving sets, m^n, as an explicit error on overflow.
pub fn count_serving_sets(config: &SystemConfig) -> Result<u128, ModelError> {
    u128::from(config.m)
        .checked_pow(config.n)
        .ok_or(ModelError::ServingSetOverflow {
            n: config.n,
            m: config.m,
        })
}
