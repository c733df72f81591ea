//! Runtime-verification engine: evaluates the requirement catalog against
//! simulation traces and emits verdicts with evidence.
//!
//! Monitors are pure functions of (trace, scenario context). Thresholds use
//! strict comparison exactly as the requirement text states them, so
//! boundary values fail "<" requirements. A requirement whose triggering
//! entity class is absent from the scenario yields a vacuous pass, flagged
//! as such rather than silently counted. Whole-run windows ("a day",
//! "1000 seconds") are tiled and non-overlapping; a trace shorter than one
//! full window produces an inconclusive verdict.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::fault::FaultKind;
use crate::geom::Vec2;
use crate::sim::{AgentId, ArenaConfig, HumanId, HumanRole, ImpactClass, EPS_MOVE_M};
use crate::trace::{Record, Trace};

/// Stationary definition: no displacement beyond epsilon for more than this
/// many seconds.
pub const STATIONARY_AFTER_S: f64 = 10.0;
/// Denominator floor for percentage-increase checks whose baseline is zero.
pub const DEGRADATION_BASELINE_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Performance,
    Adaptability,
    HumanSafety,
    Environment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeTag {
    Faultless,
    GracefulDegradation,
    WorstCase,
}

/// Which campaign cells a requirement is checked on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    FaultlessCells,
    FaultyCells,
    AllCells,
    /// Evaluated over a (baseline, faulty) pair of aggregate stats.
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// One operational day; resolved from the scenario's day length.
    Day,
    Seconds(f64),
    WholeRun,
    /// Configuration-level check; no trace window involved.
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    LessThan(f64),
    AtMost(f64),
    WithinInclusive(f64, f64),
}

impl Comparison {
    pub fn satisfied_by(&self, measured: f64) -> bool {
        match *self {
            Comparison::LessThan(t) => measured < t,
            Comparison::AtMost(t) => measured <= t,
            Comparison::WithinInclusive(lo, hi) => measured >= lo && measured <= hi,
        }
    }

    /// Signed distance to the boundary; positive means pass with room.
    pub fn margin(&self, measured: f64) -> f64 {
        match *self {
            Comparison::LessThan(t) | Comparison::AtMost(t) => t - measured,
            Comparison::WithinInclusive(lo, hi) => (measured - lo).min(hi - measured),
        }
    }

    /// The primary threshold number for display.
    pub fn threshold(&self) -> f64 {
        match *self {
            Comparison::LessThan(t) | Comparison::AtMost(t) => t,
            Comparison::WithinInclusive(_, hi) => hi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationMetric {
    HighImpactCollisions,
    MaxStationaryCount,
    StationaryTimeS,
    HumanEncounters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorKind {
    HighImpactCollisions {
        speed_threshold: f64,
    },
    DegradationIncrease {
        metric: DegradationMetric,
    },
    AgentEnvelope {
        max_mass_kg: f64,
        max_accel: f64,
    },
    BoxWeightEnvelope,
    StationaryFraction {
        no_move_s: f64,
    },
    NoMoveInterval,
    Density,
    EnvIncline,
    EnvFloorDry,
    EnvStepHeight,
    EnvLocators,
    HumanProximitySpeed {
        role: HumanRole,
        distance_m: f64,
    },
    HumanEncounters {
        distance_m: f64,
    },
    InterventionRequesters,
    MonitoringRatio,
    InputRequesters,
    InformedPerAttendee {
        comm_range_m: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultContext {
    pub kind: FaultKind,
    pub fraction: f64,
}

impl FaultContext {
    pub fn matches(&self, other: &FaultContext) -> bool {
        self.kind == other.kind && (self.fraction - other.fraction).abs() < 1e-9
    }
}

/// One machine-checkable safety requirement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementSpec {
    pub id: String,
    pub category: Category,
    pub mode: ModeTag,
    pub scope: Scope,
    /// Requirement text as shipped in the catalog, echoed in reports.
    pub text: String,
    pub kind: MonitorKind,
    pub comparison: Comparison,
    pub window: Window,
    #[serde(default)]
    pub fault_context: Option<FaultContext>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct CatalogFile {
    version: String,
    requirements: Vec<RequirementSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub version: String,
    pub requirements: Vec<RequirementSpec>,
}

static BUILTIN_CATALOG: OnceLock<Catalog> = OnceLock::new();

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("catalog parse error: {0}")]
    CatalogParse(String),
    #[error("cannot read catalog {path}: {source}")]
    CatalogIo {
        path: String,
        source: std::io::Error,
    },
    #[error("unknown requirement id `{0}`")]
    UnknownRequirement(String),
    #[error("mismatched degradation inputs: {0}")]
    MismatchedStats(String),
}

impl Catalog {
    pub fn builtin() -> &'static Catalog {
        BUILTIN_CATALOG.get_or_init(|| {
            Catalog::parse(include_str!("../data/requirements.toml"))
                .expect("builtin catalog parses")
        })
    }

    pub fn parse(text: &str) -> Result<Catalog, MonitorError> {
        let file: CatalogFile =
            toml::from_str(text).map_err(|e| MonitorError::CatalogParse(e.to_string()))?;
        Ok(Catalog {
            version: file.version,
            requirements: file.requirements,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Catalog, MonitorError> {
        let text = std::fs::read_to_string(path).map_err(|source| MonitorError::CatalogIo {
            path: path.display().to_string(),
            source,
        })?;
        Catalog::parse(&text)
    }

    pub fn get(&self, id: &str) -> Result<&RequirementSpec, MonitorError> {
        self.requirements
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| MonitorError::UnknownRequirement(id.to_string()))
    }

    pub fn digest(&self) -> String {
        crate::util::sha256_hex(
            serde_json::to_string(&self.requirements)
                .expect("catalog serializes")
                .as_bytes(),
        )
    }
}

/// Verdict qualifier beyond plain pass/fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictFlag {
    /// Triggering entity class absent from the scenario.
    Vacuous,
    /// Trace shorter than one full evaluation window.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub tick: u64,
    pub label: String,
    pub value: f64,
    pub entities: Vec<String>,
}

/// Pass/fail with the measured value, margin, and contributing events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub requirement_id: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub margin: f64,
    #[serde(default)]
    pub flag: Option<VerdictFlag>,
    pub evidence: Vec<Evidence>,
    pub detail: String,
}

impl MonitorVerdict {
    fn from_measurement(req: &RequirementSpec, measured: f64, detail: String) -> MonitorVerdict {
        MonitorVerdict {
            requirement_id: req.id.clone(),
            passed: req.comparison.satisfied_by(measured),
            measured,
            threshold: req.comparison.threshold(),
            comparison: req.comparison,
            margin: req.comparison.margin(measured),
            flag: None,
            evidence: Vec::new(),
            detail,
        }
    }

    fn vacuous(req: &RequirementSpec, detail: &str) -> MonitorVerdict {
        MonitorVerdict {
            requirement_id: req.id.clone(),
            passed: true,
            measured: 0.0,
            threshold: req.comparison.threshold(),
            comparison: req.comparison,
            margin: req.comparison.margin(0.0),
            flag: Some(VerdictFlag::Vacuous),
            evidence: Vec::new(),
            detail: format!("vacuous: {detail}"),
        }
    }

    fn inconclusive(req: &RequirementSpec, detail: String) -> MonitorVerdict {
        MonitorVerdict {
            requirement_id: req.id.clone(),
            passed: true,
            measured: 0.0,
            threshold: req.comparison.threshold(),
            comparison: req.comparison,
            margin: 0.0,
            flag: Some(VerdictFlag::Inconclusive),
            evidence: Vec::new(),
            detail,
        }
    }

    pub fn is_failure(&self) -> bool {
        !self.passed && self.flag.is_none()
    }
}

/// Scenario facts the monitors need besides the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioContext {
    pub arena: ArenaConfig,
    pub n_agents: usize,
    pub n_boxes: usize,
    pub n_trained: usize,
    pub n_attendees: usize,
    pub agent_mass_kg: f64,
    pub accel_limit: f64,
    pub box_weights_kg: Vec<f64>,
    pub dt: f64,
    pub day_s: f64,
}

impl ScenarioContext {
    pub fn from_config(cfg: &ScenarioConfig) -> ScenarioContext {
        ScenarioContext {
            arena: cfg.arena.clone(),
            n_agents: cfg.swarm.agents,
            n_boxes: cfg.boxes.count,
            n_trained: cfg.humans.trained,
            n_attendees: cfg.humans.attendees,
            agent_mass_kg: cfg.swarm.agent_mass_kg,
            accel_limit: cfg.swarm.accel_limit,
            box_weights_kg: vec![cfg.boxes.weight_kg; cfg.boxes.count],
            dt: cfg.dt,
            day_s: cfg.day_s,
        }
    }

    pub fn n_humans(&self) -> usize {
        self.n_trained + self.n_attendees
    }

    fn resolve_window(&self, w: Window) -> Option<f64> {
        match w {
            Window::Day => Some(self.day_s),
            Window::Seconds(s) => Some(s),
            Window::WholeRun | Window::Config => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Trace index: one linear scan shared by all monitors.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct AgentSample {
    tick: u64,
    position: Vec2,
    speed: f64,
    requesting_intervention: bool,
    requesting_attendee_input: bool,
}

#[derive(Debug, Clone)]
struct HumanTrack {
    role: HumanRole,
    samples: Vec<(u64, Vec2)>,
}

#[derive(Debug)]
pub struct TraceIndex {
    dt: f64,
    last_tick: u64,
    agents: BTreeMap<AgentId, Vec<AgentSample>>,
    humans: BTreeMap<HumanId, HumanTrack>,
    collisions: Vec<(u64, f64, ImpactClass, String, String)>,
    deliveries: Vec<(u64, u32, Option<u64>)>,
    pickups: u64,
    distance_total: f64,
}

impl TraceIndex {
    pub fn build(trace: &Trace) -> TraceIndex {
        let dt = trace.meta.dt;
        let mut agents: BTreeMap<AgentId, Vec<AgentSample>> = BTreeMap::new();
        let mut humans: BTreeMap<HumanId, HumanTrack> = BTreeMap::new();
        let mut collisions = Vec::new();
        let mut deliveries = Vec::new();
        let mut pickups = 0;
        let mut last_tick = 0;
        for r in &trace.records {
            last_tick = last_tick.max(r.tick());
            match r {
                Record::Kine {
                    tick,
                    agent,
                    x,
                    y,
                    speed,
                    requesting_intervention,
                    requesting_attendee_input,
                    ..
                } => {
                    agents.entry(*agent).or_default().push(AgentSample {
                        tick: *tick,
                        position: Vec2::new(*x, *y),
                        speed: *speed,
                        requesting_intervention: *requesting_intervention,
                        requesting_attendee_input: *requesting_attendee_input,
                    });
                }
                Record::Human {
                    tick,
                    human,
                    role,
                    x,
                    y,
                } => {
                    humans
                        .entry(*human)
                        .or_insert_with(|| HumanTrack {
                            role: *role,
                            samples: Vec::new(),
                        })
                        .samples
                        .push((*tick, Vec2::new(*x, *y)));
                }
                Record::Collision {
                    tick,
                    a,
                    b,
                    impact_speed,
                    classification,
                } => collisions.push((
                    *tick,
                    *impact_speed,
                    *classification,
                    a.to_string(),
                    b.to_string(),
                )),
                Record::Delivery {
                    tick,
                    box_id,
                    completion_ticks,
                } => deliveries.push((*tick, box_id.0, *completion_ticks)),
                Record::Pickup { .. } => pickups += 1,
                _ => {}
            }
        }
        let mut distance_total = 0.0;
        for samples in agents.values() {
            for w in samples.windows(2) {
                distance_total += w[0].position.distance(w[1].position);
            }
        }
        TraceIndex {
            dt,
            last_tick,
            agents,
            humans,
            collisions,
            deliveries,
            pickups,
            distance_total,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.last_tick as f64 * self.dt
    }

    fn human_position_at(&self, track: &HumanTrack, tick: u64) -> Option<Vec2> {
        // Humans are logged every tick, so the search is exact; carry the
        // last known position forward for sparse synthetic traces.
        match track.samples.binary_search_by_key(&tick, |(t, _)| *t) {
            Ok(i) => Some(track.samples[i].1),
            Err(0) => None,
            Err(i) => Some(track.samples[i - 1].1),
        }
    }

    /// Per-agent stationarity series: (tick, currently stationary, seconds
    /// of continuous no-move outside the delivery site).
    fn stationary_series(
        &self,
        arena: &ArenaConfig,
        no_move_s: f64,
    ) -> BTreeMap<AgentId, Vec<(u64, bool, f64)>> {
        let mut out = BTreeMap::new();
        for (id, samples) in &self.agents {
            let mut series = Vec::with_capacity(samples.len());
            let mut last_move_tick = samples.first().map(|s| s.tick).unwrap_or(0);
            let mut no_move_interval_s = 0.0;
            for w in samples.windows(2) {
                let (prev, cur) = (&w[0], &w[1]);
                let moved = cur.position.distance(prev.position) > EPS_MOVE_M;
                if moved {
                    last_move_tick = cur.tick;
                }
                let in_delivery = arena.in_delivery_zone(cur.position);
                let since_move = (cur.tick - last_move_tick) as f64 * self.dt;
                let stationary = !in_delivery && since_move > no_move_s;
                // The "move at least every N seconds outside the site"
                // counter resets when the agent moves or enters the site.
                if moved || in_delivery {
                    no_move_interval_s = 0.0;
                } else {
                    no_move_interval_s += self.dt;
                }
                series.push((cur.tick, stationary, no_move_interval_s));
            }
            out.insert(*id, series);
        }
        out
    }

    /// Encounter episodes: maximal continuous stretches of an (agent, human)
    /// pair within the distance. Returns (onset tick, agent, human).
    fn encounter_episodes(&self, distance_m: f64) -> Vec<(u64, AgentId, HumanId)> {
        let mut episodes = Vec::new();
        for (aid, samples) in &self.agents {
            for (hid, track) in &self.humans {
                let mut inside = false;
                for s in samples {
                    let hpos = match self.human_position_at(track, s.tick) {
                        Some(p) => p,
                        None => continue,
                    };
                    let now = s.position.distance(hpos) <= distance_m;
                    if now && !inside {
                        episodes.push((s.tick, *aid, *hid));
                    }
                    inside = now;
                }
            }
        }
        episodes.sort();
        episodes
    }
}

// ---------------------------------------------------------------------------
// Aggregate statistics for degradation comparisons and metrics.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    /// Digest of the scenario configuration with fault blocks and seed
    /// stripped; degradation pairs must agree on it.
    pub layout_digest: String,
    pub duration_s: f64,
    pub high_impact_collisions: u64,
    pub collisions_total: u64,
    pub human_encounters: u64,
    pub max_stationary_count: u64,
    pub stationary_time_s: f64,
    pub max_stationary_fraction_pct: f64,
    pub max_no_move_interval_s: f64,
    pub deliveries: u64,
    pub pickups: u64,
    pub distance_total_m: f64,
    pub mean_completion_s: Option<f64>,
}

impl AggregateStats {
    pub fn metric(&self, m: DegradationMetric) -> f64 {
        match m {
            DegradationMetric::HighImpactCollisions => self.high_impact_collisions as f64,
            DegradationMetric::MaxStationaryCount => self.max_stationary_count as f64,
            DegradationMetric::StationaryTimeS => self.stationary_time_s,
            DegradationMetric::HumanEncounters => self.human_encounters as f64,
        }
    }

    /// Fold another run of the same layout into this aggregate: counts and
    /// durations add, maxima take the worst case.
    pub fn merge(&mut self, other: &AggregateStats) {
        self.duration_s += other.duration_s;
        self.high_impact_collisions += other.high_impact_collisions;
        self.collisions_total += other.collisions_total;
        self.human_encounters += other.human_encounters;
        self.max_stationary_count = self.max_stationary_count.max(other.max_stationary_count);
        self.stationary_time_s += other.stationary_time_s;
        self.max_stationary_fraction_pct = self
            .max_stationary_fraction_pct
            .max(other.max_stationary_fraction_pct);
        self.max_no_move_interval_s =
            self.max_no_move_interval_s.max(other.max_no_move_interval_s);
        self.deliveries += other.deliveries;
        self.pickups += other.pickups;
        self.distance_total_m += other.distance_total_m;
        self.mean_completion_s = match (self.mean_completion_s, other.mean_completion_s) {
            (Some(a), Some(b)) => Some((a + b) / 2.0),
            (a, b) => a.or(b),
        };
    }
}

/// Single-scan aggregate statistics over a trace.
pub fn aggregate_stats(
    trace: &Trace,
    ctx: &ScenarioContext,
    layout_digest: &str,
) -> AggregateStats {
    let index = TraceIndex::build(trace);
    let series = index.stationary_series(&ctx.arena, STATIONARY_AFTER_S);

    let mut per_tick_counts: BTreeMap<u64, u64> = BTreeMap::new();
    let mut stationary_time_s = 0.0;
    let mut max_no_move = 0.0f64;
    for samples in series.values() {
        for (tick, stationary, interval) in samples {
            if *stationary {
                *per_tick_counts.entry(*tick).or_default() += 1;
                stationary_time_s += index.dt;
            }
            max_no_move = max_no_move.max(*interval);
        }
    }
    let max_stationary_count = per_tick_counts.values().copied().max().unwrap_or(0);
    let n_agents = index.agents.len().max(1);
    let max_fraction = max_stationary_count as f64 / n_agents as f64 * 100.0;

    let completions: Vec<f64> = index
        .deliveries
        .iter()
        .filter_map(|(_, _, c)| c.map(|t| t as f64 * index.dt))
        .collect();
    AggregateStats {
        layout_digest: layout_digest.to_string(),
        duration_s: index.duration_s(),
        high_impact_collisions: index
            .collisions
            .iter()
            .filter(|(_, _, c, _, _)| *c == ImpactClass::High)
            .count() as u64,
        collisions_total: index.collisions.len() as u64,
        human_encounters: index.encounter_episodes(2.0).len() as u64,
        max_stationary_count,
        stationary_time_s,
        max_stationary_fraction_pct: max_fraction,
        max_no_move_interval_s: max_no_move,
        deliveries: index.deliveries.len() as u64,
        pickups: index.pickups,
        distance_total_m: index.distance_total,
        mean_completion_s: if completions.is_empty() {
            None
        } else {
            Some(completions.iter().sum::<f64>() / completions.len() as f64)
        },
    }
}

// ---------------------------------------------------------------------------
// Individual monitors.
// ---------------------------------------------------------------------------

/// Count collisions above the impact-speed threshold per tiled window; the
/// measured value is the worst window's count.
pub fn monitor_collisions(
    trace: &Trace,
    ctx: &ScenarioContext,
    req: &RequirementSpec,
    speed_threshold: f64,
) -> MonitorVerdict {
    let index = TraceIndex::build(trace);
    collisions_from_index(&index, ctx, req, speed_threshold)
}

fn collisions_from_index(
    index: &TraceIndex,
    ctx: &ScenarioContext,
    req: &RequirementSpec,
    speed_threshold: f64,
) -> MonitorVerdict {
    let window_s = ctx.resolve_window(req.window);
    let duration = index.duration_s();
    let (n_windows, window_s) = match window_s {
        Some(w) => ((duration / w).floor() as u64, w),
        None => (1, duration.max(index.dt)),
    };
    if n_windows == 0 {
        return MonitorVerdict::inconclusive(
            req,
            format!("trace covers {duration:.1}s, shorter than one {window_s:.0}s window"),
        );
    }
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    let mut evidence = Vec::new();
    for (tick, impact, _class, a, b) in &index.collisions {
        if *impact > speed_threshold {
            let w = ((*tick as f64 * index.dt) / window_s).floor() as u64;
            if w < n_windows {
                *counts.entry(w).or_default() += 1;
                if evidence.len() < 32 {
                    evidence.push(Evidence {
                        tick: *tick,
                        label: "high_impact_collision".to_string(),
                        value: *impact,
                        entities: vec![a.clone(), b.clone()],
                    });
                }
            }
        }
    }
    let measured = counts.values().copied().max().unwrap_or(0) as f64;
    let mut verdict = MonitorVerdict::from_measurement(
        req,
        measured,
        format!(
            "worst window count {measured} over {n_windows} window(s) of {window_s:.0}s, impact > {speed_threshold} m/s"
        ),
    );
    verdict.evidence = evidence;
    verdict
}

/// Stationary-agent monitors: the RQ2.1/RQ2.7 fraction caps and the RQ2.2
/// no-move interval bound, all excluding the delivery site.
pub fn monitor_stationary(
    trace: &Trace,
    ctx: &ScenarioContext,
    catalog: &Catalog,
) -> Vec<MonitorVerdict> {
    let index = TraceIndex::build(trace);
    ["RQ2.1", "RQ2.2", "RQ2.7"]
        .iter()
        .filter_map(|id| catalog.get(id).ok())
        .map(|req| stationary_from_index(&index, ctx, req))
        .collect()
}

fn stationary_from_index(
    index: &TraceIndex,
    ctx: &ScenarioContext,
    req: &RequirementSpec,
) -> MonitorVerdict {
    let no_move_s = match &req.kind {
        MonitorKind::StationaryFraction { no_move_s } => *no_move_s,
        _ => STATIONARY_AFTER_S,
    };
    let series = index.stationary_series(&ctx.arena, no_move_s);
    let n_agents = index.agents.len().max(1);
    match &req.kind {
        MonitorKind::StationaryFraction { .. } => {
            let mut per_tick: BTreeMap<u64, Vec<AgentId>> = BTreeMap::new();
            for (id, samples) in &series {
                for (tick, stationary, _) in samples {
                    if *stationary {
                        per_tick.entry(*tick).or_default().push(*id);
                    }
                }
            }
            let worst = per_tick
                .iter()
                .max_by_key(|(_, v)| v.len())
                .map(|(t, v)| (*t, v.clone()));
            let measured = worst
                .as_ref()
                .map(|(_, v)| v.len() as f64 / n_agents as f64 * 100.0)
                .unwrap_or(0.0);
            let mut verdict = MonitorVerdict::from_measurement(
                req,
                measured,
                format!(
                    "worst simultaneous stationary fraction {measured:.2}% of {n_agents} agents (outside delivery site)"
                ),
            );
            if let Some((tick, agents)) = worst {
                verdict.evidence.push(Evidence {
                    tick,
                    label: "max_stationary_set".to_string(),
                    value: agents.len() as f64,
                    entities: agents.iter().map(|a| a.to_string()).collect(),
                });
            }
            verdict
        }
        MonitorKind::NoMoveInterval => {
            let mut measured = 0.0f64;
            let mut worst: Option<(u64, AgentId)> = None;
            for (id, samples) in &series {
                for (tick, _, interval) in samples {
                    if *interval > measured {
                        measured = *interval;
                        worst = Some((*tick, *id));
                    }
                }
            }
            let mut verdict = MonitorVerdict::from_measurement(
                req,
                measured,
                format!("longest no-move interval outside delivery site: {measured:.1}s"),
            );
            if let Some((tick, id)) = worst {
                if measured > 0.0 {
                    verdict.evidence.push(Evidence {
                        tick,
                        label: "longest_no_move_interval".to_string(),
                        value: measured,
                        entities: vec![id.to_string()],
                    });
                }
            }
            verdict
        }
        other => unreachable!("stationary monitor got kind {other:?}"),
    }
}

/// Human-proximity monitors: speed caps near humans and encounter budgets.
pub fn monitor_human_proximity(
    trace: &Trace,
    ctx: &ScenarioContext,
    catalog: &Catalog,
) -> Vec<MonitorVerdict> {
    let index = TraceIndex::build(trace);
    ["RQ4.1", "RQ4.2", "RQ4.3", "RQ4.10"]
        .iter()
        .filter_map(|id| catalog.get(id).ok())
        .map(|req| human_proximity_from_index(&index, ctx, req))
        .collect()
}

fn human_proximity_from_index(
    index: &TraceIndex,
    ctx: &ScenarioContext,
    req: &RequirementSpec,
) -> MonitorVerdict {
    match &req.kind {
        MonitorKind::HumanProximitySpeed { role, distance_m } => {
            let class_present = index.humans.values().any(|h| h.role == *role);
            if !class_present {
                return MonitorVerdict::vacuous(req, &format!("no {role} humans in the scenario"));
            }
            let mut measured = 0.0f64;
            let mut worst: Option<(u64, AgentId, HumanId)> = None;
            for (aid, samples) in &index.agents {
                for s in samples {
                    for (hid, track) in &index.humans {
                        if track.role != *role {
                            continue;
                        }
                        let hpos = match index.human_position_at(track, s.tick) {
                            Some(p) => p,
                            None => continue,
                        };
                        if s.position.distance(hpos) <= *distance_m && s.speed > measured {
                            measured = s.speed;
                            worst = Some((s.tick, *aid, *hid));
                        }
                    }
                }
            }
            let mut verdict = MonitorVerdict::from_measurement(
                req,
                measured,
                format!(
                    "max agent speed within {distance_m} m of a {role} human: {measured:.3} m/s"
                ),
            );
            if let Some((tick, aid, hid)) = worst {
                verdict.evidence.push(Evidence {
                    tick,
                    label: "max_speed_near_human".to_string(),
                    value: measured,
                    entities: vec![aid.to_string(), hid.to_string()],
                });
            }
            verdict
        }
        MonitorKind::HumanEncounters { distance_m } => {
            if index.humans.is_empty() && ctx.n_humans() == 0 {
                return MonitorVerdict::vacuous(req, "no humans in the scenario");
            }
            let window_s = ctx.resolve_window(req.window).unwrap_or(f64::INFINITY);
            let duration = index.duration_s();
            let n_windows = if window_s.is_finite() {
                (duration / window_s).floor() as u64
            } else {
                1
            };
            if n_windows == 0 {
                return MonitorVerdict::inconclusive(
                    req,
                    format!("trace covers {duration:.1}s, shorter than one {window_s:.0}s window"),
                );
            }
            let episodes = index.encounter_episodes(*distance_m);
            let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
            let mut evidence = Vec::new();
            for (tick, aid, hid) in &episodes {
                let w = if window_s.is_finite() {
                    ((*tick as f64 * index.dt) / window_s).floor() as u64
                } else {
                    0
                };
                if w < n_windows {
                    *counts.entry(w).or_default() += 1;
                    if evidence.len() < 32 {
                        evidence.push(Evidence {
                            tick: *tick,
                            label: "encounter_episode".to_string(),
                            value: 1.0,
                            entities: vec![aid.to_string(), hid.to_string()],
                        });
                    }
                }
            }
            let measured = counts.values().copied().max().unwrap_or(0) as f64;
            let mut verdict = MonitorVerdict::from_measurement(
                req,
                measured,
                format!(
                    "worst window encounter count {measured} over {n_windows} window(s), within {distance_m} m"
                ),
            );
            verdict.evidence = evidence;
            verdict
        }
        other => unreachable!("human proximity monitor got kind {other:?}"),
    }
}

/// Interaction caps: simultaneous intervention/input requesters, the
/// monitoring ratio, and the per-attendee information bound.
pub fn monitor_interaction_caps(
    trace: &Trace,
    ctx: &ScenarioContext,
    catalog: &Catalog,
) -> Vec<MonitorVerdict> {
    let index = TraceIndex::build(trace);
    ["RQ4.4", "RQ4.5", "RQ4.6", "RQ4.7"]
        .iter()
        .filter_map(|id| catalog.get(id).ok())
        .map(|req| interaction_from_index(&index, ctx, req))
        .collect()
}

fn interaction_from_index(
    index: &TraceIndex,
    ctx: &ScenarioContext,
    req: &RequirementSpec,
) -> MonitorVerdict {
    match &req.kind {
        MonitorKind::InterventionRequesters => {
            if ctx.n_humans() == 0 {
                return MonitorVerdict::vacuous(req, "no humans in the scenario");
            }
            let (measured, worst) = max_simultaneous(index, |s| s.requesting_intervention);
            let mut verdict = MonitorVerdict::from_measurement(
                req,
                measured,
                format!("max simultaneous intervention requesters: {measured}"),
            );
            if let Some((tick, agents)) = worst {
                if measured > 0.0 {
                    verdict.evidence.push(Evidence {
                        tick,
                        label: "max_intervention_requesters".to_string(),
                        value: measured,
                        entities: agents,
                    });
                }
            }
            verdict
        }
        MonitorKind::InputRequesters => {
            if ctx.n_attendees == 0 {
                return MonitorVerdict::vacuous(req, "no attendees in the scenario");
            }
            let (measured, worst) = max_simultaneous(index, |s| s.requesting_attendee_input);
            let mut verdict = MonitorVerdict::from_measurement(
                req,
                measured,
                format!("max simultaneous attendee-input requesters: {measured}"),
            );
            if let Some((tick, agents)) = worst {
                if measured > 0.0 {
                    verdict.evidence.push(Evidence {
                        tick,
                        label: "max_input_requesters".to_string(),
                        value: measured,
                        entities: agents,
                    });
                }
            }
            verdict
        }
        MonitorKind::MonitoringRatio => {
            if ctx.n_humans() == 0 {
                return MonitorVerdict::vacuous(req, "no humans in the scenario");
            }
            if ctx.n_trained == 0 {
                let mut v = MonitorVerdict::from_measurement(
                    req,
                    f64::INFINITY,
                    format!(
                        "{} agents but zero trained humans to monitor them",
                        ctx.n_agents
                    ),
                );
                v.passed = false;
                return v;
            }
            let ratio = ctx.n_agents as f64 / ctx.n_trained as f64;
            MonitorVerdict::from_measurement(
                req,
                ratio,
                format!(
                    "{} agents per trained human ({} agents, {} trained)",
                    ratio, ctx.n_agents, ctx.n_trained
                ),
            )
        }
        MonitorKind::InformedPerAttendee { comm_range_m } => {
            if ctx.n_attendees == 0 {
                return MonitorVerdict::vacuous(req, "no attendees in the scenario");
            }
            // An agent informs an attendee when it broadcasts an input
            // request within communication range of that attendee.
            let mut per_key: BTreeMap<(u64, HumanId), Vec<AgentId>> = BTreeMap::new();
            for (aid, samples) in &index.agents {
                for s in samples {
                    if !s.requesting_attendee_input {
                        continue;
                    }
                    for (hid, track) in &index.humans {
                        if track.role != HumanRole::Attendee {
                            continue;
                        }
                        if let Some(hpos) = index.human_position_at(track, s.tick) {
                            if s.position.distance(hpos) <= *comm_range_m {
                                per_key.entry((s.tick, *hid)).or_default().push(*aid);
                            }
                        }
                    }
                }
            }
            let worst = per_key.iter().max_by_key(|(_, v)| v.len());
            let measured = worst.map(|(_, v)| v.len() as f64).unwrap_or(0.0);
            let mut verdict = MonitorVerdict::from_measurement(
                req,
                measured,
                format!("max agents informing one attendee at a time: {measured}"),
            );
            if let Some(((tick, hid), agents)) = worst {
                if measured > 0.0 {
                    verdict.evidence.push(Evidence {
                        tick: *tick,
                        label: "max_informers".to_string(),
                        value: measured,
                        entities: std::iter::once(hid.to_string())
                            .chain(agents.iter().map(|a| a.to_string()))
                            .collect(),
                    });
                }
            }
            verdict
        }
        other => unreachable!("interaction monitor got kind {other:?}"),
    }
}

fn max_simultaneous(
    index: &TraceIndex,
    pred: impl Fn(&AgentSample) -> bool,
) -> (f64, Option<(u64, Vec<String>)>) {
    let mut per_tick: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for (aid, samples) in &index.agents {
        for s in samples {
            if pred(s) {
                per_tick.entry(s.tick).or_default().push(aid.to_string());
            }
        }
    }
    match per_tick.into_iter().max_by_key(|(_, v)| v.len()) {
        Some((tick, v)) => (v.len() as f64, Some((tick, v))),
        None => (0.0, None),
    }
}

/// Environmental envelope checks against the arena configuration.
pub fn monitor_environment(ctx: &ScenarioContext, catalog: &Catalog) -> Vec<MonitorVerdict> {
    ["RQ3.1", "RQ3.2", "RQ3.3", "RQ3.4", "RQ3.5"]
        .iter()
        .filter_map(|id| catalog.get(id).ok())
        .map(|req| environment_check(ctx, req))
        .collect()
}

fn environment_check(ctx: &ScenarioContext, req: &RequirementSpec) -> MonitorVerdict {
    let arena = &ctx.arena;
    match &req.kind {
        MonitorKind::Density => {
            let p_o = (ctx.n_boxes + ctx.n_agents) as f64 / arena.area_m2();
            MonitorVerdict::from_measurement(
                req,
                p_o,
                format!(
                    "p_o = ({} boxes + {} agents) / {:.2} m^2 = {:.3}",
                    ctx.n_boxes,
                    ctx.n_agents,
                    arena.area_m2(),
                    p_o
                ),
            )
        }
        MonitorKind::EnvIncline => MonitorVerdict::from_measurement(
            req,
            arena.incline_deg,
            format!("floor incline {} degrees", arena.incline_deg),
        ),
        MonitorKind::EnvFloorDry => {
            let measured = if arena.floor == crate::sim::Floor::Dry {
                1.0
            } else {
                0.0
            };
            MonitorVerdict::from_measurement(req, measured, format!("floor is {:?}", arena.floor))
        }
        MonitorKind::EnvStepHeight => MonitorVerdict::from_measurement(
            req,
            arena.max_step_height_cm,
            format!("max step height {} cm", arena.max_step_height_cm),
        ),
        MonitorKind::EnvLocators => {
            if ctx.n_humans() == 0 {
                return MonitorVerdict::vacuous(req, "no humans in the scenario");
            }
            let measured = if arena.humans_have_locators { 1.0 } else { 0.0 };
            MonitorVerdict::from_measurement(
                req,
                measured,
                format!("humans_have_locators = {}", arena.humans_have_locators),
            )
        }
        other => unreachable!("environment monitor got kind {other:?}"),
    }
}

/// Mass and carried-weight envelope checks (RQ1.5, RQ1.6).
pub fn weight_envelope(ctx: &ScenarioContext, catalog: &Catalog) -> Vec<MonitorVerdict> {
    ["RQ1.5", "RQ1.6"]
        .iter()
        .filter_map(|id| catalog.get(id).ok())
        .map(|req| weight_check(ctx, req))
        .collect()
}

fn weight_check(ctx: &ScenarioContext, req: &RequirementSpec) -> MonitorVerdict {
    match &req.kind {
        MonitorKind::AgentEnvelope {
            max_mass_kg,
            max_accel,
        } => {
            let mass_ok = ctx.agent_mass_kg < *max_mass_kg;
            let accel_ok = ctx.accel_limit < *max_accel;
            let mut verdict = MonitorVerdict::from_measurement(
                req,
                ctx.agent_mass_kg,
                format!(
                    "agent mass {} kg (< {} required), acceleration capability {} m/s^2 (< {} required)",
                    ctx.agent_mass_kg, max_mass_kg, ctx.accel_limit, max_accel
                ),
            );
            verdict.passed = mass_ok && accel_ok;
            verdict.margin = (max_mass_kg - ctx.agent_mass_kg).min(max_accel - ctx.accel_limit);
            verdict.evidence.push(Evidence {
                tick: 0,
                label: "configured_accel_limit".to_string(),
                value: ctx.accel_limit,
                entities: vec![],
            });
            verdict
        }
        MonitorKind::BoxWeightEnvelope => {
            if ctx.box_weights_kg.is_empty() {
                return MonitorVerdict::vacuous(req, "no boxes in the scenario");
            }
            let heaviest = ctx
                .box_weights_kg
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            MonitorVerdict::from_measurement(req, heaviest, format!("heaviest box {heaviest} kg"))
        }
        other => unreachable!("weight envelope got kind {other:?}"),
    }
}

/// Percentage-increase check between a baseline and a faulty aggregate.
///
/// The relative increase uses a baseline floor of one metric unit so the
/// comparison stays defined when the baseline is zero. Inputs must share a
/// layout digest and duration.
pub fn degradation_check(
    baseline: &AggregateStats,
    faulty: &AggregateStats,
    req: &RequirementSpec,
) -> Result<MonitorVerdict, MonitorError> {
    let metric = match &req.kind {
        MonitorKind::DegradationIncrease { metric } => *metric,
        other => {
            return Err(MonitorError::MismatchedStats(format!(
                "requirement {} is not a degradation check (kind {other:?})",
                req.id
            )))
        }
    };
    if baseline.layout_digest != faulty.layout_digest {
        return Err(MonitorError::MismatchedStats(format!(
            "layout digests differ: {} vs {}",
            baseline.layout_digest, faulty.layout_digest
        )));
    }
    if (baseline.duration_s - faulty.duration_s).abs() > 1e-6 {
        return Err(MonitorError::MismatchedStats(format!(
            "durations differ: {} s vs {} s",
            baseline.duration_s, faulty.duration_s
        )));
    }
    let b = baseline.metric(metric);
    let f = faulty.metric(metric);
    let increase_pct = (f - b) / b.max(DEGRADATION_BASELINE_FLOOR) * 100.0;
    let mut verdict = MonitorVerdict::from_measurement(
        req,
        increase_pct,
        format!(
            "{metric:?}: baseline {b}, faulty {f}, increase {increase_pct:.3}% (baseline floor {DEGRADATION_BASELINE_FLOOR})"
        ),
    );
    verdict.evidence.push(Evidence {
        tick: 0,
        label: "baseline_vs_faulty".to_string(),
        value: f - b,
        entities: vec![format!("baseline={b}"), format!("faulty={f}")],
    });
    Ok(verdict)
}

/// Whether this cell kind is in scope for a requirement.
pub fn in_scope(req: &RequirementSpec, faulty_cell: bool) -> bool {
    match req.scope {
        Scope::AllCells => true,
        Scope::FaultlessCells => !faulty_cell,
        Scope::FaultyCells => faulty_cell,
        Scope::Paired => false,
    }
}

/// Evaluate every in-scope, non-paired requirement of the catalog against
/// one trace. Re-evaluation of the same inputs yields identical verdicts.
pub fn evaluate_trace(
    trace: &Trace,
    ctx: &ScenarioContext,
    catalog: &Catalog,
    faulty_cell: bool,
) -> Vec<MonitorVerdict> {
    let index = TraceIndex::build(trace);
    let mut out = Vec::new();
    for req in &catalog.requirements {
        if !in_scope(req, faulty_cell) {
            continue;
        }
        let verdict = match &req.kind {
            MonitorKind::HighImpactCollisions { speed_threshold } => {
                collisions_from_index(&index, ctx, req, *speed_threshold)
            }
            MonitorKind::StationaryFraction { .. } | MonitorKind::NoMoveInterval => {
                stationary_from_index(&index, ctx, req)
            }
            MonitorKind::HumanProximitySpeed { .. } | MonitorKind::HumanEncounters { .. } => {
                human_proximity_from_index(&index, ctx, req)
            }
            MonitorKind::InterventionRequesters
            | MonitorKind::InputRequesters
            | MonitorKind::MonitoringRatio
            | MonitorKind::InformedPerAttendee { .. } => interaction_from_index(&index, ctx, req),
            MonitorKind::Density
            | MonitorKind::EnvIncline
            | MonitorKind::EnvFloorDry
            | MonitorKind::EnvStepHeight
            | MonitorKind::EnvLocators => environment_check(ctx, req),
            MonitorKind::AgentEnvelope { .. } | MonitorKind::BoxWeightEnvelope => {
                weight_check(ctx, req)
            }
            MonitorKind::DegradationIncrease { .. } => continue,
        };
        out.push(verdict);
    }
    out
}

// ---------------------------------------------------------------------------
// Failure-condition chains (agent -> neighbourhood -> swarm).
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureLevel {
    Agent,
    Neighbourhood,
    Swarm,
}

/// A node in a failure-condition chain; `causal_parent` indexes into the
/// owning list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub level: FailureLevel,
    pub tick: u64,
    pub description: String,
    pub causal_parent: Option<usize>,
}
