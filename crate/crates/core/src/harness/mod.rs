//! End-to-end scenario runner: binds the scheduler, tagging, verifier, a
//! fleet of scriptable mock replicas, and a mock store, then drives timed
//! client requests and behavior injections over a deterministic virtual
//! clock and reports what happened.

pub mod script;
pub mod wire;

use std::collections::{BinaryHeap, HashMap, HashSet};
use std::cmp::Reverse;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, SystemConfig};
use crate::fixed::Fixed;
use crate::model::ReplicaRef;
use crate::scheduler::{Admission, Counters as SchedulerCounters, Scheduler, SchedulerError};
use crate::sql::{leads_with_select, NormalizationPolicy};
use crate::tag::TagKey;
use crate::verifier::{
    ForwardedQuery, IngestOutcome, QueryEnvelope, Verifier, VerifierCounters, VerifierError,
};

pub use script::{Action, Scenario, ScriptError, TimedEvent};

/// Simulated time between a request's admission and its response when the
/// pipeline is healthy.
pub const SERVICE_TIME_MS: u64 = 5;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("no replica at pool {pool}, replica {replica}")]
    UnknownReplica { pool: u32, replica: u32 },
    #[error("bad load shape: {0}")]
    InvalidLoad(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
}

/// What a mock replica does with the requests it serves. Anything other
/// than `Honest` models a compromised machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Behavior {
    Honest,
    /// Replaces every write with this SQL text; reads stay honest.
    DivergentWrite(String),
    /// Emits honest SQL under a corrupted MAC.
    ForgedTag,
    /// Emits honest SQL under the first tag this replica ever received.
    ReplayTag,
    /// Emits nothing, starving the vote.
    Silent,
}

#[derive(Debug)]
struct MockReplica {
    reference: ReplicaRef,
    behavior: Behavior,
    /// Feeds nondeterministic template slots; per replica so honest
    /// replicas disagree on them reproducibly.
    fill_counter: u64,
    first_tag: Option<crate::tag::RequestTag>,
}

impl MockReplica {
    fn fill(&mut self, template: &str) -> String {
        let mut out = String::new();
        let mut rest = template;
        while let Some(at) = rest.find("{ts}") {
            out.push_str(&rest[..at]);
            out.push_str(&format!(
                "ts-p{}r{}-c{}",
                self.reference.pool, self.reference.replica, self.fill_counter
            ));
            self.fill_counter += 1;
            rest = &rest[at + 4..];
        }
        out.push_str(rest);
        out
    }

    fn respond(
        &mut self,
        admission: &Admission,
        templates: &[String],
        arrival: u64,
    ) -> Vec<QueryEnvelope> {
        if self.first_tag.is_none() {
            self.first_tag = Some(admission.tag);
        }
        if self.behavior == Behavior::Silent {
            return Vec::new();
        }
        let source = admission.addresses[(self.reference.pool - 1) as usize];
        templates
            .iter()
            .enumerate()
            .map(|(i, template)| {
                let honest = self.fill(template);
                let (tag, sql_text) = match &self.behavior {
                    Behavior::Honest => (admission.tag, honest),
                    Behavior::DivergentWrite(payload) => {
                        if leads_with_select(&honest) {
                            (admission.tag, honest)
                        } else {
                            (admission.tag, payload.clone())
                        }
                    }
                    Behavior::ForgedTag => {
                        let mut tag = admission.tag;
                        tag.mac[0] ^= 1;
                        (tag, honest)
                    }
                    Behavior::ReplayTag => {
                        (self.first_tag.expect("stored above"), honest)
                    }
                    Behavior::Silent => unreachable!("handled above"),
                };
                QueryEnvelope {
                    source_address: source,
                    tag,
                    sql_text,
                    arrival,
                    sequence: i as u32,
                }
            })
            .collect()
    }
}

/// The mock replica fleet, indexed like the scheduler's.
#[derive(Debug)]
pub struct MockFleet {
    m: u32,
    replicas: Vec<MockReplica>,
}

impl MockFleet {
    pub fn new(config: &SystemConfig) -> MockFleet {
        let mut replicas = Vec::with_capacity((config.n * config.m) as usize);
        for pool in 1..=config.n {
            for replica in 1..=config.m {
                replicas.push(MockReplica {
                    reference: ReplicaRef { pool, replica },
                    behavior: Behavior::Honest,
                    fill_counter: 0,
                    first_tag: None,
                });
            }
        }
        MockFleet { m: config.m, replicas }
    }

    fn index(&self, r: ReplicaRef) -> Option<usize> {
        if r.pool == 0 || r.replica == 0 || r.replica > self.m {
            return None;
        }
        let idx = ((r.pool - 1) * self.m + (r.replica - 1)) as usize;
        (idx < self.replicas.len()).then_some(idx)
    }

    /// Replaces a replica's behavior until its next refresh.
    pub fn inject(&mut self, r: ReplicaRef, behavior: Behavior) -> Result<(), HarnessError> {
        let idx = self
            .index(r)
            .ok_or(HarnessError::UnknownReplica { pool: r.pool, replica: r.replica })?;
        self.replicas[idx].behavior = behavior;
        Ok(())
    }

    /// Rejuvenation restores a known-good image.
    pub fn reset(&mut self, r: ReplicaRef) {
        if let Some(idx) = self.index(r) {
            self.replicas[idx].behavior = Behavior::Honest;
        }
    }

    pub fn behavior_of(&self, r: ReplicaRef) -> Option<&Behavior> {
        self.index(r).map(|idx| &self.replicas[idx].behavior)
    }

    fn respond(
        &mut self,
        r: ReplicaRef,
        admission: &Admission,
        templates: &[String],
        arrival: u64,
    ) -> Vec<QueryEnvelope> {
        let idx = self.index(r).expect("serving set member exists");
        self.replicas[idx].respond(admission, templates, arrival)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreEntry {
    pub id: u32,
    pub position: u32,
    pub sql_text: String,
}

/// Mock storage backend: records every forwarded write in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Store {
    log: Vec<StoreEntry>,
}

impl Store {
    fn apply(&mut self, q: &ForwardedQuery) {
        if q.is_write {
            self.log.push(StoreEntry {
                id: q.id,
                position: q.position,
                sql_text: q.sql_text.clone(),
            });
        }
    }

    pub fn log(&self) -> &[StoreEntry] {
        &self.log
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScenarioMetrics {
    pub requests_sent: u64,
    pub ok_responses: u64,
    pub unavailable_503: u64,
    pub aborted: u64,
    /// Requests still open when the scenario ended.
    pub in_flight: u64,
    pub detections: u64,
    pub forwarded_writes: u64,
    pub refreshes_periodic: u64,
    pub refreshes_detection: u64,
}

pub const METRICS_CSV_HEADER: &str = "requests_sent,ok_responses,unavailable_503,aborted,\
in_flight,detections,forwarded_writes,refreshes_periodic,refreshes_detection";

impl ScenarioMetrics {
    /// Every request ends in exactly one bucket.
    pub fn conserved(&self) -> bool {
        self.ok_responses + self.unavailable_503 + self.aborted + self.in_flight
            == self.requests_sent
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.requests_sent,
            self.ok_responses,
            self.unavailable_503,
            self.aborted,
            self.in_flight,
            self.detections,
            self.forwarded_writes,
            self.refreshes_periodic,
            self.refreshes_detection
        )
    }
}

impl fmt::Display for ScenarioMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "requests sent        {}", self.requests_sent)?;
        writeln!(f, "ok responses         {}", self.ok_responses)?;
        writeln!(f, "unavailable (503)    {}", self.unavailable_503)?;
        writeln!(f, "aborted              {}", self.aborted)?;
        writeln!(f, "in flight at end     {}", self.in_flight)?;
        writeln!(f, "detections           {}", self.detections)?;
        writeln!(f, "forwarded writes     {}", self.forwarded_writes)?;
        writeln!(f, "periodic refreshes   {}", self.refreshes_periodic)?;
        write!(f, "detection refreshes  {}", self.refreshes_detection)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub metrics: ScenarioMetrics,
    pub store: Store,
    pub scheduler: SchedulerCounters,
    pub verifier: VerifierCounters,
}

#[derive(Debug)]
enum Task {
    Request { path: String },
    Inject { pool: u32, replica: u32, behavior: Behavior },
    Complete { id: u32 },
    Wakeup,
}

struct Pending {
    at: u64,
    seq: u64,
    task: Task,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

struct OpenRequest {
    admitted_at: u64,
    expected: u32,
    forwarded: u32,
}

/// Shared-worker cost model for throughput sweeps: every admitted request
/// costs n * per_copy_ms of a single worker's time, modeling the fixed
/// hardware that must execute all n duplicates.
#[derive(Debug, Clone, Copy)]
struct WorkModel {
    per_copy_ms: u64,
}

/// Runs a scenario to completion and returns metrics, the store log, and
/// both proxies' counters. Deterministic for a fixed (scenario, seed).
pub fn run_scenario(
    config: &SystemConfig,
    scenario: &Scenario,
    seed: u64,
) -> Result<ScenarioReport, HarnessError> {
    run_with(config, scenario, seed, None)
}

fn note_abort(
    id: u32,
    cancelled: &mut HashSet<u32>,
    metrics: &mut ScenarioMetrics,
    verifier: &mut Verifier,
    open: &mut HashMap<u32, OpenRequest>,
) {
    if cancelled.insert(id) {
        metrics.aborted += 1;
        verifier.finish(id);
        open.remove(&id);
    }
}

fn run_with(
    config: &SystemConfig,
    scenario: &Scenario,
    seed: u64,
    work: Option<WorkModel>,
) -> Result<ScenarioReport, HarnessError> {
    // reject bad injections before any event runs
    for event in &scenario.events {
        if let Action::Inject { pool, replica, .. } = &event.action {
            if *pool == 0 || *pool > config.n || *replica == 0 || *replica > config.m {
                return Err(HarnessError::UnknownReplica { pool: *pool, replica: *replica });
            }
        }
    }

    let mut key_rng = ChaCha8Rng::seed_from_u64(seed);
    key_rng.set_stream(u64::MAX);
    let key = TagKey::from_rng(&mut key_rng);
    let mut sched = Scheduler::new(config.clone(), key.clone(), seed)?;
    let mut verifier = Verifier::new(config, key, scenario.policy.clone());
    let mut mocks = MockFleet::new(config);
    let mut store = Store::default();
    let mut metrics = ScenarioMetrics::default();

    let mut heap: BinaryHeap<Reverse<Pending>> = BinaryHeap::new();
    let mut seq: u64 = 0;
    let push = |heap: &mut BinaryHeap<Reverse<Pending>>, seq: &mut u64, at: u64, task: Task| {
        heap.push(Reverse(Pending { at, seq: *seq, task }));
        *seq += 1;
    };
    for event in &scenario.events {
        match &event.action {
            Action::Request { path, count, spacing } => {
                for i in 0..*count {
                    push(
                        &mut heap,
                        &mut seq,
                        event.at + i as u64 * spacing,
                        Task::Request { path: path.clone() },
                    );
                }
            }
            Action::Inject { pool, replica, behavior } => push(
                &mut heap,
                &mut seq,
                event.at,
                Task::Inject { pool: *pool, replica: *replica, behavior: behavior.clone() },
            ),
        }
    }

    let mut open: HashMap<u32, OpenRequest> = HashMap::new();
    let mut cancelled: HashSet<u32> = HashSet::new();
    // the shared worker's schedule, when a work model is active
    let mut busy_until: u64 = 0;

    while let Some(Reverse(Pending { at: now, task, .. })) = heap.pop() {
        let refreshes_before = {
            let c = sched.counters();
            c.refreshes_periodic + c.refreshes_detection
        };

        // time-driven transitions first
        let report = sched.tick(now);
        for &r in &report.restored {
            mocks.reset(r);
        }
        for &id in &report.aborted {
            note_abort(id, &mut cancelled, &mut metrics, &mut verifier, &mut open);
        }
        verifier.expire(now);
        // tear down requests that outlived the vote window
        let mut stale: Vec<u32> = open
            .iter()
            .filter(|(_, o)| now.saturating_sub(o.admitted_at) >= config.queue_timeout)
            .map(|(&id, _)| id)
            .collect();
        stale.sort_unstable();
        for id in stale {
            sched.cancel(id, now)?;
            note_abort(id, &mut cancelled, &mut metrics, &mut verifier, &mut open);
        }

        match task {
            Task::Request { path } => {
                metrics.requests_sent += 1;
                match sched.admit(now) {
                    Err(_) => metrics.unavailable_503 += 1,
                    Ok(admission) => {
                        let marked = sched.accumulate_refresh(now);
                        let templates = scenario.app.get(&path).expect("validated path");
                        open.insert(
                            admission.id,
                            OpenRequest {
                                admitted_at: now,
                                expected: templates.len() as u32,
                                forwarded: 0,
                            },
                        );
                        'replicas: for &member in &admission.serving_set {
                            let envelopes = mocks.respond(member, &admission, templates, now);
                            for envelope in envelopes {
                                if cancelled.contains(&admission.id) {
                                    break 'replicas;
                                }
                                let outcome = verifier.ingest(envelope, &mut sched)?;
                                if let IngestOutcome::Detected { aborted_requests, .. } = outcome
                                {
                                    metrics.detections += 1;
                                    for id in aborted_requests {
                                        note_abort(
                                            id,
                                            &mut cancelled,
                                            &mut metrics,
                                            &mut verifier,
                                            &mut open,
                                        );
                                    }
                                }
                            }
                        }
                        for q in verifier.drain_forwarded() {
                            if let Some(o) = open.get_mut(&q.id) {
                                o.forwarded += 1;
                            }
                            if q.is_write {
                                metrics.forwarded_writes += 1;
                            }
                            store.apply(&q);
                        }
                        if !cancelled.contains(&admission.id) {
                            let complete_at = match work {
                                Some(model) => {
                                    busy_until =
                                        busy_until.max(now) + config.n as u64 * model.per_copy_ms;
                                    busy_until.max(now + SERVICE_TIME_MS)
                                }
                                None => now + SERVICE_TIME_MS,
                            };
                            push(&mut heap, &mut seq, complete_at, Task::Complete {
                                id: admission.id,
                            });
                            push(&mut heap, &mut seq, now + config.queue_timeout, Task::Wakeup);
                            if !marked.is_empty() {
                                push(
                                    &mut heap,
                                    &mut seq,
                                    now + config.deferred_timeout,
                                    Task::Wakeup,
                                );
                            }
                        }
                    }
                }
            }
            Task::Inject { pool, replica, behavior } => {
                mocks.inject(ReplicaRef { pool, replica }, behavior)?;
            }
            Task::Complete { id } => {
                if !cancelled.contains(&id) {
                    if let Some(o) = open.get(&id) {
                        if o.forwarded == o.expected {
                            sched.complete(id, now)?;
                            verifier.finish(id);
                            open.remove(&id);
                            metrics.ok_responses += 1;
                        }
                        // short of the vote: queue expiry will tear it down
                    }
                }
            }
            Task::Wakeup => {}
        }

        let refreshes_after = {
            let c = sched.counters();
            c.refreshes_periodic + c.refreshes_detection
        };
        if refreshes_after > refreshes_before {
            // something went down; wake to restore it
            push(&mut heap, &mut seq, now + config.refresh_duration, Task::Wakeup);
        }
    }

    metrics.in_flight = sched.in_flight_requests() as u64;
    metrics.refreshes_periodic = sched.counters().refreshes_periodic;
    metrics.refreshes_detection = sched.counters().refreshes_detection;
    debug_assert!(metrics.conserved(), "request conservation failed: {metrics:?}");
    debug_assert_eq!(metrics.detections, verifier.counters().detections);
    debug_assert_eq!(metrics.forwarded_writes, verifier.counters().forwarded_writes);
    Ok(ScenarioReport {
        metrics,
        store,
        scheduler: *sched.counters(),
        verifier: *verifier.counters(),
    })
}

/// One uniform write-request stream, for throughput sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadSpec {
    pub requests: u32,
    /// Milliseconds between consecutive requests.
    pub spacing: u64,
    /// Worker milliseconds each replica copy of a request costs.
    pub per_copy_work: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoodputPoint {
    pub n: u32,
    pub m: u32,
    pub k: Fixed,
    pub k_over_n: f64,
    pub requests: u32,
    pub ok_responses: u64,
    /// Completed requests per second of offered-load window.
    pub goodput_per_sec: f64,
}

fn load_scenario(load: &LoadSpec) -> Scenario {
    let mut app = std::collections::BTreeMap::new();
    app.insert(
        "/load".to_string(),
        vec!["INSERT INTO audit (entry) VALUES ('{ts}')".to_string()],
    );
    let policy = NormalizationPolicy::with_flags(&[("audit", "entry")]);
    let events = vec![TimedEvent {
        at: 0,
        action: Action::Request {
            path: "/load".to_string(),
            count: load.requests,
            spacing: load.spacing,
        },
    }];
    Scenario::new(app, policy, events).expect("static scenario is valid")
}

/// Runs the same load against each configuration and reports the goodput
/// (only completed responses count).
pub fn goodput_trend(
    configs: &[SystemConfig],
    load: &LoadSpec,
    seed: u64,
) -> Result<Vec<GoodputPoint>, HarnessError> {
    if load.requests == 0 {
        return Err(HarnessError::InvalidLoad("requests must be at least 1"));
    }
    if load.spacing == 0 {
        return Err(HarnessError::InvalidLoad("spacing must be at least 1 ms"));
    }
    let scenario = load_scenario(load);
    let mut points = Vec::with_capacity(configs.len());
    for config in configs {
        let report = run_with(
            config,
            &scenario,
            seed,
            Some(WorkModel { per_copy_ms: load.per_copy_work }),
        )?;
        let span_ms = load.requests as u64 * load.spacing;
        points.push(GoodputPoint {
            n: config.n,
            m: config.m,
            k: config.k,
            k_over_n: config.k.to_f64() / config.n as f64,
            requests: load.requests,
            ok_responses: report.metrics.ok_responses,
            goodput_per_sec: report.metrics.ok_responses as f64 * 1000.0 / span_ms as f64,
        });
    }
    Ok(points)
}
