//! Scheduling proxy: serving-set selection, request admission, and the
//! refresh controller.
//!
//! All fleet mutation funnels through one `Scheduler` value, so every
//! transition is serialized and the state machine can uphold its safety
//! rules: a selection never includes a marked or refreshing replica, and a
//! refreshing replica never has requests in flight.

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, SystemConfig};
use crate::model::{FleetState, ModelError, ReplicaRef, ReplicaStatus};
use crate::tag::{make_tag, RequestTag, TagKey};

/// One replica per pool, pool index ascending.
pub type ServingSet = Vec<ReplicaRef>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Admission {
    pub id: u32,
    pub serving_set: ServingSet,
    /// Serving-set addresses in pool order; the byte string the tag binds.
    pub addresses: Vec<Ipv4Addr>,
    pub tag: RequestTag,
    pub admitted_at: u64,
}

/// No serving set exists: some pool has zero available replicas. Maps to
/// HTTP 503 at the interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no available replica in at least one pool")]
pub struct Unavailable;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("request {0} is not in flight (already completed or aborted)")]
    UnknownRequest(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshCause {
    /// Rolling-sum mark whose replica finished draining (or was idle).
    Periodic,
    /// Marked replica forced down at the deferred timeout.
    Deferred,
    /// Verifier-triggered immediate refresh.
    Detection,
}

impl fmt::Display for RefreshCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefreshCause::Periodic => "periodic",
            RefreshCause::Deferred => "deferred",
            RefreshCause::Detection => "detection",
        })
    }
}

/// One fleet transition, loggable as a CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Admit { at: u64, id: u32 },
    Unavailable { at: u64 },
    Complete { at: u64, id: u32 },
    Abort { at: u64, id: u32 },
    Mark { at: u64, replica: ReplicaRef },
    RefreshStart { at: u64, replica: ReplicaRef, until: u64, cause: RefreshCause },
    Restore { at: u64, replica: ReplicaRef },
}

impl Event {
    pub fn csv_header() -> &'static str {
        "at,kind,id,pool,replica,cause,until"
    }

    pub fn to_csv(&self) -> String {
        match *self {
            Event::Admit { at, id } => format!("{at},admit,{id},,,,"),
            Event::Unavailable { at } => format!("{at},unavailable,,,,,"),
            Event::Complete { at, id } => format!("{at},complete,{id},,,,"),
            Event::Abort { at, id } => format!("{at},abort,{id},,,,"),
            Event::Mark { at, replica } => {
                format!("{at},mark,,{},{},,", replica.pool, replica.replica)
            }
            Event::RefreshStart { at, replica, until, cause } => format!(
                "{at},refresh,,{},{},{cause},{until}",
                replica.pool, replica.replica
            ),
            Event::Restore { at, replica } => {
                format!("{at},restore,,{},{},,", replica.pool, replica.replica)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub admitted: u64,
    pub unavailable: u64,
    pub completed: u64,
    pub aborted: u64,
    /// Whole units debited from the rolling sum.
    pub marks_issued: u64,
    /// Marks that found an eligible replica; the shortfall is dropped.
    pub marks_applied: u64,
    pub refreshes_periodic: u64,
    pub refreshes_detection: u64,
    pub restores: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TickReport {
    pub restored: Vec<ReplicaRef>,
    pub forced: Vec<ReplicaRef>,
    pub aborted: Vec<u32>,
}

#[derive(Debug)]
pub struct Scheduler {
    config: SystemConfig,
    fleet: FleetState,
    key: TagKey,
    rng: ChaCha8Rng,
    live: HashMap<u32, ServingSet>,
    events: Vec<Event>,
    counters: Counters,
}

impl Scheduler {
    pub fn new(config: SystemConfig, key: TagKey, seed: u64) -> Result<Scheduler, ConfigError> {
        let fleet = FleetState::new(&config)?;
        Ok(Scheduler {
            config,
            fleet,
            key,
            rng: ChaCha8Rng::seed_from_u64(seed),
            live: HashMap::new(),
            events: Vec::new(),
            counters: Counters::default(),
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn fleet(&self) -> &FleetState {
        &self.fleet
    }

    pub fn request_counter(&self) -> u32 {
        self.fleet.id_counter
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn in_flight_requests(&self) -> usize {
        self.live.len()
    }

    pub fn serving_set_of(&self, id: u32) -> Option<&ServingSet> {
        self.live.get(&id)
    }

    pub fn drain_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    /// Draws one available replica per pool, uniformly and independently.
    /// Consumes no randomness when some pool is exhausted.
    pub fn select_serving_set(&mut self) -> Result<ServingSet, Unavailable> {
        let mut per_pool = Vec::with_capacity(self.config.n as usize);
        for pool in 1..=self.config.n {
            let available = self.fleet.available_in_pool(pool);
            if available.is_empty() {
                return Err(Unavailable);
            }
            per_pool.push(available);
        }
        Ok(per_pool
            .into_iter()
            .map(|candidates| candidates[self.rng.gen_range(0..candidates.len())])
            .collect())
    }

    /// Admits one request: selects a serving set, consumes the next request
    /// id, and binds the two with a tag. A failed selection consumes no id.
    pub fn admit(&mut self, now: u64) -> Result<Admission, Unavailable> {
        let serving_set = match self.select_serving_set() {
            Ok(set) => set,
            Err(unavailable) => {
                self.events.push(Event::Unavailable { at: now });
                self.counters.unavailable += 1;
                return Err(unavailable);
            }
        };
        let id = self.fleet.id_counter;
        self.fleet.id_counter = self.fleet.id_counter.wrapping_add(1);
        let addresses: Vec<Ipv4Addr> =
            serving_set.iter().map(|&r| self.fleet.address_of(r)).collect();
        let tag = make_tag(&self.key, id, &addresses).expect("serving set is never empty");
        for &r in &serving_set {
            let state = self.fleet.get_mut(r).expect("selected replica exists");
            state.in_flight += 1;
            state.served_since_refresh += 1;
        }
        self.live.insert(id, serving_set.clone());
        self.events.push(Event::Admit { at: now, id });
        self.counters.admitted += 1;
        self.debug_check();
        Ok(Admission { id, serving_set, addresses, tag, admitted_at: now })
    }

    /// Adds one request's worth of refresh budget and marks the whole units
    /// now due. Candidates are drawn uniformly over the entire fleet, pools
    /// ignored; replicas already marked or refreshing, or that have not
    /// served since their last refresh, are not eligible. If eligible
    /// replicas run out, the remainder of the due marks is dropped.
    pub fn accumulate_refresh(&mut self, now: u64) -> Vec<ReplicaRef> {
        let due = self.fleet.rolling_sum.advance();
        self.counters.marks_issued += due;
        let mut marked = Vec::new();
        if due == 0 {
            return marked;
        }
        let mut eligible: Vec<ReplicaRef> = self
            .fleet
            .refs()
            .filter(|&r| {
                let s = self.fleet.get(r).expect("fleet ref");
                s.status.is_available() && s.served_since_refresh >= 1
            })
            .collect();
        for _ in 0..due {
            if eligible.is_empty() {
                break;
            }
            let victim = eligible.swap_remove(self.rng.gen_range(0..eligible.len()));
            self.mark(victim, now);
            marked.push(victim);
        }
        self.counters.marks_applied += marked.len() as u64;
        self.debug_check();
        marked
    }

    fn mark(&mut self, r: ReplicaRef, now: u64) {
        self.events.push(Event::Mark { at: now, replica: r });
        let state = self.fleet.get_mut(r).expect("marked replica exists");
        if state.in_flight == 0 {
            self.start_refresh(r, now, RefreshCause::Periodic);
        } else {
            state.status = ReplicaStatus::MarkedForRefresh { since: now };
        }
    }

    fn start_refresh(&mut self, r: ReplicaRef, now: u64, cause: RefreshCause) {
        let until = now + self.config.refresh_duration;
        let state = self.fleet.get_mut(r).expect("refreshing replica exists");
        debug_assert_eq!(state.in_flight, 0, "refresh of a busy replica");
        state.status = ReplicaStatus::Refreshing { until };
        self.events.push(Event::RefreshStart { at: now, replica: r, until, cause });
        match cause {
            RefreshCause::Detection => self.counters.refreshes_detection += 1,
            _ => self.counters.refreshes_periodic += 1,
        }
    }

    /// Finishes one request: releases its replicas, and any marked member
    /// that just drained goes down for refresh.
    pub fn complete(&mut self, id: u32, now: u64) -> Result<(), SchedulerError> {
        let set = self.live.remove(&id).ok_or(SchedulerError::UnknownRequest(id))?;
        self.release_members(&set, now);
        self.events.push(Event::Complete { at: now, id });
        self.counters.completed += 1;
        self.debug_check();
        Ok(())
    }

    fn release_members(&mut self, set: &[ReplicaRef], now: u64) {
        for &r in set {
            let state = self.fleet.get_mut(r).expect("member exists");
            state.in_flight = state.in_flight.checked_sub(1).expect("in_flight underflow");
            if state.in_flight == 0 && matches!(state.status, ReplicaStatus::MarkedForRefresh { .. })
            {
                self.start_refresh(r, now, RefreshCause::Periodic);
            }
        }
    }

    /// Aborts one request without refreshing anything: the client gets an
    /// error, members are released (draining any marked ones).
    pub fn cancel(&mut self, id: u32, now: u64) -> Result<(), SchedulerError> {
        if !self.live.contains_key(&id) {
            return Err(SchedulerError::UnknownRequest(id));
        }
        self.abort_request(id, now, &[]);
        self.debug_check();
        Ok(())
    }

    fn abort_request(&mut self, id: u32, now: u64, spare: &[ReplicaRef]) {
        let Some(set) = self.live.remove(&id) else { return };
        for &r in &set {
            let state = self.fleet.get_mut(r).expect("member exists");
            state.in_flight = state.in_flight.checked_sub(1).expect("in_flight underflow");
            // Members in `spare` are about to be force-refreshed by the
            // caller; draining them here would double the transition.
            if state.in_flight == 0
                && !spare.contains(&r)
                && matches!(state.status, ReplicaStatus::MarkedForRefresh { .. })
            {
                self.start_refresh(r, now, RefreshCause::Periodic);
            }
        }
        self.events.push(Event::Abort { at: now, id });
        self.counters.aborted += 1;
    }

    /// Immediately refreshes every given replica, aborting any request that
    /// was being served by one of them. Members already refreshing are left
    /// alone. Returns the aborted request ids.
    pub fn refresh_now(
        &mut self,
        members: &[ReplicaRef],
        now: u64,
    ) -> Result<Vec<u32>, SchedulerError> {
        let mut targets: Vec<ReplicaRef> = Vec::new();
        for &r in members {
            self.fleet.get(r)?;
            if !targets.contains(&r) {
                targets.push(r);
            }
        }
        let mut victims: Vec<u32> = self
            .live
            .iter()
            .filter(|(_, set)| set.iter().any(|r| targets.contains(r)))
            .map(|(&id, _)| id)
            .collect();
        victims.sort_unstable();
        for id in &victims {
            self.abort_request(*id, now, &targets);
        }
        for &r in &targets {
            let state = self.fleet.get(r).expect("validated above");
            if !matches!(state.status, ReplicaStatus::Refreshing { .. }) {
                self.start_refresh(r, now, RefreshCause::Detection);
            }
        }
        self.debug_check();
        Ok(victims)
    }

    /// Advances time-driven transitions: refreshing replicas whose window
    /// has elapsed come back clean, and marked replicas that exceeded the
    /// deferred timeout are forced down, aborting whatever they still carry.
    pub fn tick(&mut self, now: u64) -> TickReport {
        let mut report = TickReport::default();
        for r in self.fleet.refs().collect::<Vec<_>>() {
            let state = self.fleet.get_mut(r).expect("fleet ref");
            if let ReplicaStatus::Refreshing { until } = state.status {
                if until <= now {
                    state.status = ReplicaStatus::Available;
                    state.served_since_refresh = 0;
                    self.events.push(Event::Restore { at: now, replica: r });
                    self.counters.restores += 1;
                    report.restored.push(r);
                }
            }
        }
        let overdue: Vec<ReplicaRef> = self
            .fleet
            .refs()
            .filter(|&r| {
                let s = self.fleet.get(r).expect("fleet ref");
                matches!(s.status, ReplicaStatus::MarkedForRefresh { since }
                    if now.saturating_sub(since) >= self.config.deferred_timeout)
            })
            .collect();
        if !overdue.is_empty() {
            let mut victims: Vec<u32> = self
                .live
                .iter()
                .filter(|(_, set)| set.iter().any(|r| overdue.contains(r)))
                .map(|(&id, _)| id)
                .collect();
            victims.sort_unstable();
            for id in &victims {
                self.abort_request(*id, now, &overdue);
            }
            report.aborted = victims;
            for &r in &overdue {
                let state = self.fleet.get(r).expect("fleet ref");
                if !matches!(state.status, ReplicaStatus::Refreshing { .. }) {
                    self.start_refresh(r, now, RefreshCause::Deferred);
                }
                report.forced.push(r);
            }
        }
        self.debug_check();
        report
    }

    #[cfg(debug_assertions)]
    fn debug_check(&self) {
        for r in self.fleet.refs() {
            let s = self.fleet.get(r).expect("fleet ref");
            if matches!(s.status, ReplicaStatus::Refreshing { .. }) {
                debug_assert_eq!(s.in_flight, 0, "refreshing replica {r} has work in flight");
            }
        }
    }

    #[cfg(not(debug_assertions))]
    fn debug_check(&self) {}
}
