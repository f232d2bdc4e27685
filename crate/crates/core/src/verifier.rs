//! Verification proxy: groups each replica's SQL stream by request id,
//! votes position by position, and forwards exactly one copy of each
//! unanimously matched query. Any divergence, bad tag, or double-speak
//! tears the serving set down instead.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::Ipv4Addr;

use crate::config::SystemConfig;
use crate::model::ReplicaRef;
use crate::scheduler::{Scheduler, SchedulerError};
use crate::sql::{leads_with_select, normalize, parse_sql, NormalizationPolicy};
use crate::tag::{id_in_window, verify_tag, RequestTag, TagCheck, TagKey};

/// One replica's copy of one SQL query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryEnvelope {
    pub source_address: Ipv4Addr,
    pub tag: RequestTag,
    pub sql_text: String,
    /// Arrival timestamp; doubles as the verifier's clock during ingest.
    pub arrival: u64,
    /// Per-connection ordinal: which of the request's queries this is.
    /// Voting pairs equal ordinals across replicas.
    pub sequence: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteDecision {
    /// All replicas sent the same normalized write.
    Match,
    Mismatch,
    /// All replicas sent reads; reads are forwarded without comparison.
    SelectSkip,
}

/// Compares one vote position's texts. Reads (every text leading with
/// SELECT) skip parsing entirely. Writes must all parse, normalize, and
/// agree byte for byte; a write that cannot be parsed can never match.
pub fn match_queries(texts: &[String], policy: &NormalizationPolicy) -> VoteDecision {
    if texts.iter().all(|t| leads_with_select(t)) {
        return VoteDecision::SelectSkip;
    }
    let mut normalized = Vec::with_capacity(texts.len());
    for text in texts {
        match parse_sql(text).and_then(|stmt| normalize(&stmt, policy)) {
            Ok(canon) => normalized.push(canon),
            Err(_) => return VoteDecision::Mismatch,
        }
    }
    if normalized.windows(2).all(|w| w[0] == w[1]) {
        VoteDecision::Match
    } else {
        VoteDecision::Mismatch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionReason {
    /// Some envelope's MAC did not bind its id to the collected sources.
    ForgedTag,
    /// Valid MAC but the id had left the accept window by vote time.
    StaleTag,
    /// Write texts disagreed after normalization (or failed to parse).
    Mismatch,
    /// A replica sent two envelopes for the same vote position.
    DuplicateEnvelope,
}

/// A query released to storage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardedQuery {
    pub id: u32,
    pub position: u32,
    /// Raw text of the pool-1 replica's copy; non-deterministic literals in
    /// storage are therefore pool-1's values.
    pub sql_text: String,
    pub is_write: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestOutcome {
    /// These positions reached unanimity and went to storage.
    Forwarded(Vec<ForwardedQuery>),
    /// Queued; other replicas' copies still pending.
    Held,
    /// Divergence or tag failure: serving set sent for immediate refresh,
    /// nothing forwarded from the offending position onward.
    Detected {
        reason: DetectionReason,
        refreshed: Vec<ReplicaRef>,
        aborted_requests: Vec<u32>,
    },
    /// Tombstoned or out-of-window id; dropped without effect.
    DroppedStale,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum VerifierError {
    #[error("envelope source {0} is not a fleet replica")]
    UnknownSource(Ipv4Addr),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VerifierCounters {
    pub enqueued: u64,
    pub forwarded_writes: u64,
    pub select_skips: u64,
    pub detections: u64,
    pub dropped_stale: u64,
    pub expired_queues: u64,
}

#[derive(Debug)]
struct VoteQueue {
    created_at: u64,
    /// Next position to vote; earlier positions are already decided.
    cursor: u32,
    /// position -> one slot per pool (index = pool - 1).
    positions: BTreeMap<u32, Vec<Option<QueryEnvelope>>>,
}

impl VoteQueue {
    fn new(created_at: u64, pools: usize) -> VoteQueue {
        let _ = pools;
        VoteQueue { created_at, cursor: 0, positions: BTreeMap::new() }
    }
}

#[derive(Debug)]
pub struct Verifier {
    key: TagKey,
    policy: NormalizationPolicy,
    pools: u32,
    queue_timeout: u64,
    tag_window: u32,
    queues: HashMap<u32, VoteQueue>,
    /// Ids whose serving set was detected: everything later from them drops.
    tombstones: HashSet<u32>,
    /// Forwards not yet collected by the storage driver.
    pending_forward: Vec<ForwardedQuery>,
    /// Every forward ever made, for audit.
    forward_log: Vec<ForwardedQuery>,
    counters: VerifierCounters,
}

impl Verifier {
    pub fn new(config: &SystemConfig, key: TagKey, policy: NormalizationPolicy) -> Verifier {
        Verifier {
            key,
            policy,
            pools: config.n,
            queue_timeout: config.queue_timeout,
            tag_window: config.tag_window,
            queues: HashMap::new(),
            tombstones: HashSet::new(),
            pending_forward: Vec::new(),
            forward_log: Vec::new(),
            counters: VerifierCounters::default(),
        }
    }

    pub fn counters(&self) -> &VerifierCounters {
        &self.counters
    }

    pub fn open_queues(&self) -> usize {
        self.queues.len()
    }

    pub fn forward_log(&self) -> &[ForwardedQuery] {
        &self.forward_log
    }

    /// Takes the forwards the storage driver has not applied yet.
    pub fn drain_forwarded(&mut self) -> Vec<ForwardedQuery> {
        std::mem::take(&mut self.pending_forward)
    }

    /// Processes one replica's query. The scheduler is consulted for the
    /// current id counter and, on detection, told to refresh the set.
    pub fn ingest(
        &mut self,
        envelope: QueryEnvelope,
        scheduler: &mut Scheduler,
    ) -> Result<IngestOutcome, VerifierError> {
        let now = envelope.arrival;
        let source = scheduler
            .fleet()
            .replica_at(envelope.source_address)
            .ok_or(VerifierError::UnknownSource(envelope.source_address))?;
        let id = envelope.tag.id;
        if self.tombstones.contains(&id)
            || !id_in_window(id, scheduler.request_counter(), self.tag_window)
        {
            self.counters.dropped_stale += 1;
            return Ok(IngestOutcome::DroppedStale);
        }
        let pools = self.pools as usize;
        let queue = self
            .queues
            .entry(id)
            .or_insert_with(|| VoteQueue::new(now, pools));
        let position = envelope.sequence;
        if position < queue.cursor {
            // that position already voted: a replica is speaking twice
            return self.detect(id, DetectionReason::DuplicateEnvelope, &[source], scheduler, now);
        }
        let slots = queue
            .positions
            .entry(position)
            .or_insert_with(|| vec![None; pools]);
        let slot = &mut slots[(source.pool - 1) as usize];
        if slot.is_some() {
            return self.detect(id, DetectionReason::DuplicateEnvelope, &[source], scheduler, now);
        }
        *slot = Some(envelope);
        self.counters.enqueued += 1;
        self.drain(id, scheduler, now)
    }

    /// Votes every consecutive fully-filled position starting at the cursor.
    fn drain(
        &mut self,
        id: u32,
        scheduler: &mut Scheduler,
        now: u64,
    ) -> Result<IngestOutcome, VerifierError> {
        let mut released = Vec::new();
        loop {
            let queue = self.queues.get_mut(&id).expect("queue exists while draining");
            let cursor = queue.cursor;
            let full = queue
                .positions
                .get(&cursor)
                .map(|slots| slots.iter().all(Option::is_some))
                .unwrap_or(false);
            if !full {
                break;
            }
            let slots = queue.positions.remove(&cursor).expect("checked above");
            queue.cursor += 1;
            let envelopes: Vec<QueryEnvelope> =
                slots.into_iter().map(|s| s.expect("full position")).collect();
            let sources: Vec<Ipv4Addr> = envelopes.iter().map(|e| e.source_address).collect();
            let source_refs: Vec<ReplicaRef> = sources
                .iter()
                .filter_map(|&a| scheduler.fleet().replica_at(a))
                .collect();
            for envelope in &envelopes {
                match verify_tag(
                    &envelope.tag,
                    &sources,
                    &self.key,
                    scheduler.request_counter(),
                    self.tag_window,
                ) {
                    TagCheck::Accept => {}
                    TagCheck::RejectForged => {
                        return self.detect(
                            id,
                            DetectionReason::ForgedTag,
                            &source_refs,
                            scheduler,
                            now,
                        );
                    }
                    TagCheck::RejectStale => {
                        return self.detect(
                            id,
                            DetectionReason::StaleTag,
                            &source_refs,
                            scheduler,
                            now,
                        );
                    }
                }
            }
            let texts: Vec<String> = envelopes.iter().map(|e| e.sql_text.clone()).collect();
            let decision = match_queries(&texts, &self.policy);
            let is_write = match decision {
                VoteDecision::Match => true,
                VoteDecision::SelectSkip => false,
                VoteDecision::Mismatch => {
                    return self.detect(
                        id,
                        DetectionReason::Mismatch,
                        &source_refs,
                        scheduler,
                        now,
                    );
                }
            };
            if is_write {
                self.counters.forwarded_writes += 1;
            } else {
                self.counters.select_skips += 1;
            }
            let forwarded = ForwardedQuery {
                id,
                position: cursor,
                sql_text: envelopes[0].sql_text.clone(),
                is_write,
            };
            self.pending_forward.push(forwarded.clone());
            self.forward_log.push(forwarded.clone());
            released.push(forwarded);
        }
        if released.is_empty() {
            Ok(IngestOutcome::Held)
        } else {
            Ok(IngestOutcome::Forwarded(released))
        }
    }

    fn detect(
        &mut self,
        id: u32,
        reason: DetectionReason,
        evidence: &[ReplicaRef],
        scheduler: &mut Scheduler,
        now: u64,
    ) -> Result<IngestOutcome, VerifierError> {
        self.tombstones.insert(id);
        self.queues.remove(&id);
        // the admitted serving set is authoritative; fall back to the
        // replicas actually observed when the request is no longer live
        let targets: Vec<ReplicaRef> = match scheduler.serving_set_of(id) {
            Some(set) => set.clone(),
            None => evidence.to_vec(),
        };
        let aborted_requests = scheduler.refresh_now(&targets, now)?;
        self.counters.detections += 1;
        Ok(IngestOutcome::Detected { reason, refreshed: targets, aborted_requests })
    }

    /// Drops queues that have waited longer than the queue timeout. Nothing
    /// is forwarded and nothing is refreshed: silence is not evidence.
    pub fn expire(&mut self, now: u64) -> Vec<u32> {
        let timeout = self.queue_timeout;
        let mut dropped: Vec<u32> = self
            .queues
            .iter()
            .filter(|(_, q)| now.saturating_sub(q.created_at) >= timeout)
            .map(|(&id, _)| id)
            .collect();
        dropped.sort_unstable();
        for id in &dropped {
            self.queues.remove(id);
            self.counters.expired_queues += 1;
        }
        dropped
    }

    /// Deletes a completed request's queue; late stragglers for the id will
    /// open a fresh queue and age out through `expire`.
    pub fn finish(&mut self, id: u32) -> bool {
        self.queues.remove(&id).is_some()
    }
}
