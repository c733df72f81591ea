//! Test-matrix generation, batch execution, degradation pairing, evaluation
//! validation, and deployment scenarios.
//!
//! A matrix is the cross product environments x (faultless + fault specs) x
//! repetitions. Each faulty cell shares its layout seed with a faultless
//! baseline cell of the same environment and repetition, so degradation
//! comparisons differ only in the fault. Cells run independently (optionally
//! in parallel); the log orders entries canonically by cell id, never by
//! completion order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{CampaignConfig, FaultConfig, ScenarioConfig};
use crate::monitors::{
    aggregate_stats, degradation_check, evaluate_trace, AggregateStats, Catalog, FailureEvent,
    FailureLevel, FaultContext, MonitorError, MonitorVerdict, ScenarioContext, Scope,
};
use crate::runner::{run_scenario_seeded, RunnerError};
use crate::trace::Record;
use crate::util::{hash_u64, sha256_hex, unix_time_s};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("matrix needs at least one environment")]
    NoEnvironments,
    #[error("matrix needs at least one repetition")]
    NoReps,
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("deployment scenario not deployment-grade: {0}")]
    NotDeploymentGrade(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("log parse error at line {line}: {message}")]
    LogParse { line: usize, message: String },
    #[error("environment `{0}` not found in campaign config")]
    UnknownEnvironment(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Test matrix.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub cell_id: String,
    pub env_name: String,
    /// `None` is a faultless baseline cell.
    pub fault: Option<FaultConfig>,
    pub rep: usize,
    /// Shared between a faulty cell and its baseline: controls placement and
    /// all behavioural noise.
    pub layout_seed: u64,
}

impl Cell {
    pub fn is_faulty(&self) -> bool {
        self.fault.is_some()
    }

    pub fn fault_context(&self) -> Option<FaultContext> {
        self.fault.as_ref().map(|f| FaultContext {
            kind: f.kind,
            fraction: f.fraction,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMatrix {
    pub id: String,
    pub campaign: String,
    pub master_seed: u64,
    pub cell_duration_s: f64,
    pub environments: Vec<String>,
    pub reps_per_cell: usize,
    pub cells: Vec<Cell>,
}

impl TestMatrix {
    pub fn digest(&self) -> String {
        sha256_hex(
            serde_json::to_string(&self.cells)
                .expect("matrix serializes")
                .as_bytes(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), CampaignError> {
        let text = toml::to_string(self).expect("matrix serializes");
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<TestMatrix, CampaignError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| CampaignError::LogParse {
            line: 0,
            message: e.to_string(),
        })
    }
}

/// Cross product environments x (faultless + fault specs) x repetitions,
/// with fresh, pairwise-distinct seeds. The per-environment cell counts are
/// equal by construction; every fault kind appears equally often.
pub fn generate_matrix(campaign: &CampaignConfig) -> Result<TestMatrix, CampaignError> {
    if campaign.environments.is_empty() {
        return Err(CampaignError::NoEnvironments);
    }
    if campaign.reps == 0 {
        return Err(CampaignError::NoReps);
    }
    let mut cells = Vec::new();
    let mut idx = 0usize;
    for (ei, env) in campaign.environments.iter().enumerate() {
        for rep in 0..campaign.reps {
            let layout_seed = hash_u64(campaign.master_seed, ei as u64 + 1, rep as u64 + 1);
            let mut variants: Vec<Option<FaultConfig>> = vec![None];
            variants.extend(campaign.faults.iter().cloned().map(Some));
            for (fi, fault) in variants.into_iter().enumerate() {
                let fault = fault.map(|mut f| {
                    // Fault membership draws from its own per-cell seed;
                    // layout stays shared with the baseline.
                    f.seed = hash_u64(
                        campaign.master_seed ^ 0xFA17,
                        (ei * 1000 + rep) as u64,
                        fi as u64,
                    );
                    f
                });
                let label = fault
                    .as_ref()
                    .map(|f| f.kind.label().to_string())
                    .unwrap_or_else(|| "faultless".to_string());
                cells.push(Cell {
                    cell_id: format!("c{idx:04}-{}-{}-r{rep:02}", env.name, label),
                    env_name: env.name.clone(),
                    fault,
                    rep,
                    layout_seed,
                });
                idx += 1;
            }
        }
    }
    // Layout seeds must be distinct across (env, rep) groups, and fault
    // seeds distinct everywhere.
    let mut layout_seeds = BTreeSet::new();
    for c in cells.iter().filter(|c| c.fault.is_none()) {
        if !layout_seeds.insert(c.layout_seed) {
            return Err(CampaignError::LogParse {
                line: 0,
                message: "layout seed collision in generated matrix".to_string(),
            });
        }
    }
    let mut fault_seeds = BTreeSet::new();
    for c in cells.iter().filter_map(|c| c.fault.as_ref()) {
        if !fault_seeds.insert(c.seed) {
            return Err(CampaignError::LogParse {
                line: 0,
                message: "fault seed collision in generated matrix".to_string(),
            });
        }
    }
    let mut matrix = TestMatrix {
        id: String::new(),
        campaign: campaign.name.clone(),
        master_seed: campaign.master_seed,
        cell_duration_s: campaign.cell_duration_s,
        environments: campaign
            .environments
            .iter()
            .map(|e| e.name.clone())
            .collect(),
        reps_per_cell: campaign.reps,
        cells,
    };
    matrix.id = matrix.digest();
    Ok(matrix)
}

/// The concrete scenario a cell runs: the environment config with the
/// cell's seed, duration, and fault block substituted.
pub fn cell_scenario(
    campaign: &CampaignConfig,
    cell: &Cell,
) -> Result<ScenarioConfig, CampaignError> {
    let env = campaign
        .environments
        .iter()
        .find(|e| e.name == cell.env_name)
        .ok_or_else(|| CampaignError::UnknownEnvironment(cell.env_name.clone()))?;
    let mut cfg = env.clone();
    cfg.seed = cell.layout_seed;
    cfg.duration_s = campaign.cell_duration_s;
    // Requirement windows phrased per day evaluate over the cell length;
    // long runs set cell_duration_s to a full day.
    cfg.day_s = campaign.cell_duration_s;
    cfg.faults = cell.fault.iter().cloned().collect();
    Ok(cfg)
}

fn layout_digest(cfg: &ScenarioConfig, layout_seed: u64) -> String {
    sha256_hex(format!("{}:{}", cfg.digest_sans_faults(), layout_seed).as_bytes())
}

// ---------------------------------------------------------------------------
// Performance metrics.
// ---------------------------------------------------------------------------

/// Task-performance metrics for one run. A delivery counts only when all
/// four box feet are inside a delivery zone and no agent is in contact with
/// the box; the engine enforces both before emitting the event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub deliveries: u64,
    pub delivery_rate_per_hour: f64,
    pub mean_task_completion_s: Option<f64>,
    pub distance_traveled_m: f64,
    pub pickups: u64,
    pub collisions_total: u64,
    pub high_impact_collisions: u64,
    pub human_encounters: u64,
    pub max_stored_bytes: u64,
}

pub fn performance_metrics(stats: &AggregateStats, max_stored_bytes: u64) -> MetricsRecord {
    let hours = (stats.duration_s / 3600.0).max(1e-9);
    MetricsRecord {
        deliveries: stats.deliveries,
        delivery_rate_per_hour: stats.deliveries as f64 / hours,
        mean_task_completion_s: stats.mean_completion_s,
        distance_traveled_m: stats.distance_total_m,
        pickups: stats.pickups,
        collisions_total: stats.collisions_total,
        high_impact_collisions: stats.high_impact_collisions,
        human_encounters: stats.human_encounters,
        max_stored_bytes,
    }
}

// ---------------------------------------------------------------------------
// Verification log.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub kind: String,
    pub tool_version: String,
    pub campaign: String,
    pub matrix_id: String,
    pub master_seed: u64,
    pub catalog_version: String,
    pub catalog_digest: String,
    pub created_unix_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationLogEntry {
    pub kind: String,
    pub cell_id: String,
    pub env_name: String,
    pub rep: usize,
    pub fault: Option<FaultConfig>,
    pub layout_seed: u64,
    pub config_digest: String,
    pub layout_digest: String,
    pub trace_digest: String,
    pub crashed: Option<String>,
    pub verdicts: Vec<MonitorVerdict>,
    pub metrics: Option<MetricsRecord>,
    pub stats: Option<AggregateStats>,
    pub timestamp_unix_s: u64,
}

/// A graceful-degradation verdict over per-environment aggregates; every
/// contributing faulty cell is paired with its layout-seed-matched baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationEntry {
    pub kind: String,
    pub requirement_id: String,
    pub env_name: String,
    pub verdict: MonitorVerdict,
    /// (faulty cell id, baseline cell id) pairs, matched by layout seed.
    pub pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationLog {
    pub header: LogHeader,
    pub entries: Vec<VerificationLogEntry>,
    pub degradations: Vec<DegradationEntry>,
}

impl VerificationLog {
    /// Count of non-vacuous failing verdicts across cells and pairings;
    /// crashed cells count as failures.
    pub fn failure_count(&self) -> usize {
        self.entries
            .iter()
            .flat_map(|e| e.verdicts.iter())
            .filter(|v| v.is_failure())
            .count()
            + self
                .degradations
                .iter()
                .filter(|d| d.verdict.is_failure())
                .count()
            + self.entries.iter().filter(|e| e.crashed.is_some()).count()
    }

    pub fn verdicts_for(&self, requirement_id: &str) -> Vec<(&str, &MonitorVerdict)> {
        let mut out: Vec<(&str, &MonitorVerdict)> = Vec::new();
        for e in &self.entries {
            for v in &e.verdicts {
                if v.requirement_id == requirement_id {
                    out.push((e.cell_id.as_str(), v));
                }
            }
        }
        for d in &self.degradations {
            if d.requirement_id == requirement_id {
                out.push((d.env_name.as_str(), &d.verdict));
            }
        }
        out
    }

    /// Append-only line-delimited persistence: header line, then one line
    /// per entry and per degradation verdict.
    pub fn save(&self, path: &Path) -> Result<(), CampaignError> {
        let mut f = std::fs::File::create(path).map_err(io_err(path))?;
        let mut line = serde_json::to_string(&self.header).expect("header serializes");
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(io_err(path))?;
        for e in &self.entries {
            let mut line = serde_json::to_string(e).expect("entry serializes");
            line.push('\n');
            f.write_all(line.as_bytes()).map_err(io_err(path))?;
        }
        for d in &self.degradations {
            let mut line = serde_json::to_string(d).expect("degradation serializes");
            line.push('\n');
            f.write_all(line.as_bytes()).map_err(io_err(path))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<VerificationLog, CampaignError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut header: Option<LogHeader> = None;
        let mut entries = Vec::new();
        let mut degradations = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(line).map_err(|e| CampaignError::LogParse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let parse_err = |e: serde_json::Error| CampaignError::LogParse {
                line: i + 1,
                message: e.to_string(),
            };
            match value.get("kind").and_then(|k| k.as_str()) {
                Some("header") => header = Some(serde_json::from_value(value).map_err(parse_err)?),
                Some("entry") => entries.push(serde_json::from_value(value).map_err(parse_err)?),
                Some("degradation") => {
                    degradations.push(serde_json::from_value(value).map_err(parse_err)?)
                }
                other => {
                    return Err(CampaignError::LogParse {
                        line: i + 1,
                        message: format!("unknown record kind {other:?}"),
                    })
                }
            }
        }
        Ok(VerificationLog {
            header: header.ok_or(CampaignError::LogParse {
                line: 0,
                message: "missing header line".to_string(),
            })?,
            entries,
            degradations,
        })
    }
}

// ---------------------------------------------------------------------------
// Campaign runner.
// ---------------------------------------------------------------------------

/// Run every cell of the matrix, evaluate the catalog per cell, and compute
/// graceful-degradation verdicts over seed-matched pairs. Deterministic for
/// a given matrix regardless of the worker count.
pub fn run_campaign(
    campaign: &CampaignConfig,
    matrix: &TestMatrix,
    catalog: &Catalog,
    workers: Option<usize>,
) -> Result<VerificationLog, CampaignError> {
    let run_cell = |cell: &Cell| -> VerificationLogEntry {
        match run_one_cell(campaign, cell, catalog) {
            Ok(entry) => entry,
            // A crashed trial is recorded, never silently dropped.
            Err(e) => VerificationLogEntry {
                kind: "entry".to_string(),
                cell_id: cell.cell_id.clone(),
                env_name: cell.env_name.clone(),
                rep: cell.rep,
                fault: cell.fault.clone(),
                layout_seed: cell.layout_seed,
                config_digest: String::new(),
                layout_digest: String::new(),
                trace_digest: String::new(),
                crashed: Some(e.to_string()),
                verdicts: Vec::new(),
                metrics: None,
                stats: None,
                timestamp_unix_s: unix_time_s(),
            },
        }
    };

    let mut entries: Vec<VerificationLogEntry> = match workers {
        Some(n) if n > 1 => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("worker pool builds");
            pool.install(|| matrix.cells.par_iter().map(run_cell).collect())
        }
        _ => matrix.cells.iter().map(run_cell).collect(),
    };
    entries.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));

    let degradations = pair_degradations(matrix, catalog, &entries);

    Ok(VerificationLog {
        header: LogHeader {
            kind: "header".to_string(),
            tool_version: crate::TOOL_VERSION.to_string(),
            campaign: campaign.name.clone(),
            matrix_id: matrix.id.clone(),
            master_seed: matrix.master_seed,
            catalog_version: catalog.version.clone(),
            catalog_digest: catalog.digest(),
            created_unix_s: unix_time_s(),
        },
        entries,
        degradations,
    })
}

fn run_one_cell(
    campaign: &CampaignConfig,
    cell: &Cell,
    catalog: &Catalog,
) -> Result<VerificationLogEntry, CampaignError> {
    let cfg = cell_scenario(campaign, cell)?;
    let ctx = ScenarioContext::from_config(&cfg);
    let out = run_scenario_seeded(&cfg, cell.layout_seed)?;
    let ld = layout_digest(&cfg, cell.layout_seed);
    let stats = aggregate_stats(&out.trace, &ctx, &ld);
    let verdicts = evaluate_trace(&out.trace, &ctx, catalog, cell.is_faulty());
    let max_stored = out
        .final_world
        .agents
        .iter()
        .map(|a| a.stored_bytes)
        .max()
        .unwrap_or(0);
    Ok(VerificationLogEntry {
        kind: "entry".to_string(),
        cell_id: cell.cell_id.clone(),
        env_name: cell.env_name.clone(),
        rep: cell.rep,
        fault: cell.fault.clone(),
        layout_seed: cell.layout_seed,
        config_digest: cfg.digest(),
        layout_digest: ld,
        trace_digest: out.trace.digest(),
        crashed: None,
        verdicts,
        metrics: Some(performance_metrics(&stats, max_stored)),
        stats: Some(stats),
        timestamp_unix_s: unix_time_s(),
    })
}

/// Merge stats across matched cells and evaluate every paired requirement,
/// one verdict per (requirement, environment).
fn pair_degradations(
    matrix: &TestMatrix,
    catalog: &Catalog,
    entries: &[VerificationLogEntry],
) -> Vec<DegradationEntry> {
    let by_id: BTreeMap<&str, &VerificationLogEntry> =
        entries.iter().map(|e| (e.cell_id.as_str(), e)).collect();
    let mut out = Vec::new();
    for req in catalog
        .requirements
        .iter()
        .filter(|r| r.scope == Scope::Paired)
    {
        let ctx_wanted = match &req.fault_context {
            Some(c) => c,
            None => continue,
        };
        for env in &matrix.environments {
            let mut pairs: Vec<(String, String)> = Vec::new();
            let mut merged: Option<(AggregateStats, AggregateStats)> = None;
            for cell in matrix.cells.iter().filter(|c| {
                c.env_name == *env
                    && c.fault_context()
                        .map(|fc| fc.matches(ctx_wanted))
                        .unwrap_or(false)
            }) {
                let baseline_cell = matrix
                    .cells
                    .iter()
                    .find(|c| c.env_name == *env && c.rep == cell.rep && c.fault.is_none());
                let (Some(bc), Some(fe)) = (baseline_cell, by_id.get(cell.cell_id.as_str()))
                else {
                    continue;
                };
                let Some(be) = by_id.get(bc.cell_id.as_str()) else {
                    continue;
                };
                let (Some(bs), Some(fs)) = (&be.stats, &fe.stats) else {
                    continue;
                };
                pairs.push((cell.cell_id.clone(), bc.cell_id.clone()));
                match &mut merged {
                    None => merged = Some((bs.clone(), fs.clone())),
                    Some((mb, mf)) => {
                        mb.merge(bs);
                        mf.merge(fs);
                    }
                }
            }
            let Some((mut mb, mut mf)) = merged else {
                continue;
            };
            // The merged aggregates span the same (env, rep) set on both
            // sides; collapse the digests to a common pairing key.
            let key = sha256_hex(
                pairs
                    .iter()
                    .map(|(f, b)| format!("{f}|{b}"))
                    .collect::<Vec<_>>()
                    .join(",")
                    .as_bytes(),
            );
            mb.layout_digest = key.clone();
            mf.layout_digest = key;
            if let Ok(verdict) = degradation_check(&mb, &mf, req) {
                out.push(DegradationEntry {
                    kind: "degradation".to_string(),
                    requirement_id: req.id.clone(),
                    env_name: env.clone(),
                    verdict,
                    pairs,
                });
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Evaluation validation (data requirements).
// ---------------------------------------------------------------------------

/// The data-requirement catalog applied by `validate_evaluation`.
pub const DATA_REQUIREMENTS: &[(&str, &str)] = &[
    (
        "RQ5.1",
        "All simulations shall include environments with ranges of incline between 0-20 degrees.",
    ),
    (
        "RQ5.2",
        "All simulations shall be conducted in a dry environment.",
    ),
    (
        "RQ6.1",
        "All simulations shall be repeated to include occurrences of faults representative of full communication faults.",
    ),
    (
        "RQ6.2",
        "All simulations shall be repeated a sufficient number of times to ensure results are representative of typical use.",
    ),
    (
        "RQ6.3",
        "All simulations shall be repeated in multiple environments representative of those expected in real-world use of the system.",
    ),
    (
        "RQ7.1",
        "All boxes shall only be considered 'delivered', if all four of the boxes' feet are positioned within the delivery zone.",
    ),
    (
        "RQ7.2",
        "All boxes shall only be considered 'delivered', once they are no longer in direct contact with a swarm agent.",
    ),
    (
        "RQ8.1",
        "All simulations shall be repeated so as to obtain representative evaluations for each possible mode of failure (defined under performance, adaptability, and human-safety requirements in Stage 2).",
    ),
    (
        "RQ8.2",
        "All simulations shall be repeated equally across all test environments.",
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataReqCheck {
    pub id: String,
    pub text: String,
    pub satisfied: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub id: String,
    pub detail: String,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationValidationResult {
    pub matrix_id: String,
    pub checks: Vec<DataReqCheck>,
    pub discrepancies: Vec<Discrepancy>,
}

impl EvaluationValidationResult {
    pub fn compliant(&self) -> bool {
        self.discrepancies.is_empty()
    }
}

/// Check the matrix against the data requirements: relevance (environment
/// envelope), completeness (fault kinds, repetitions, environment count),
/// accuracy (delivery definition), and balance (equal cells per environment
/// and per failure mode). Discrepancies are results, not failures; unmet
/// checks carry the configured justification or a visible placeholder.
pub fn validate_evaluation(
    campaign: &CampaignConfig,
    matrix: &TestMatrix,
    catalog: &Catalog,
) -> EvaluationValidationResult {
    let mut checks = Vec::new();
    let mut discrepancies = Vec::new();
    let mut push = |id: &str, satisfied: bool, detail: String| {
        let text = DATA_REQUIREMENTS
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, t)| t.to_string())
            .unwrap_or_default();
        checks.push(DataReqCheck {
            id: id.to_string(),
            text,
            satisfied,
            detail: detail.clone(),
        });
        if !satisfied {
            let justification = campaign
                .discrepancy_justifications
                .get(id)
                .cloned()
                .unwrap_or_else(|| {
                    "no justification provided; add one to the campaign config".to_string()
                });
            discrepancies.push(Discrepancy {
                id: id.to_string(),
                detail,
                justification,
            });
        }
    };

    let bad_incline: Vec<&str> = campaign
        .environments
        .iter()
        .filter(|e| !(0.0..=20.0).contains(&e.arena.incline_deg))
        .map(|e| e.name.as_str())
        .collect();
    push(
        "RQ5.1",
        bad_incline.is_empty(),
        if bad_incline.is_empty() {
            "all environment inclines within 0-20 degrees".to_string()
        } else {
            format!("environments outside 0-20 degree incline: {bad_incline:?}")
        },
    );

    let wet: Vec<&str> = campaign
        .environments
        .iter()
        .filter(|e| e.arena.floor != crate::sim::Floor::Dry)
        .map(|e| e.name.as_str())
        .collect();
    push(
        "RQ5.2",
        wet.is_empty(),
        if wet.is_empty() {
            "all environments dry".to_string()
        } else {
            format!("wet-floor environments: {wet:?}")
        },
    );

    // Completeness: every fault kind referenced by a graceful-degradation
    // requirement must appear in the matrix.
    let wanted: BTreeSet<crate::fault::FaultKind> = catalog
        .requirements
        .iter()
        .filter_map(|r| r.fault_context.as_ref().map(|c| c.kind))
        .collect();
    let present: BTreeSet<crate::fault::FaultKind> = matrix
        .cells
        .iter()
        .filter_map(|c| c.fault.as_ref().map(|f| f.kind))
        .collect();
    let missing: Vec<String> = wanted
        .difference(&present)
        .map(|k| k.label().to_string())
        .collect();
    push(
        "RQ6.1",
        missing.is_empty(),
        if missing.is_empty() {
            format!("fault kinds covered: {present:?}")
        } else {
            format!("catalog fault kinds missing from the matrix: {missing:?}")
        },
    );

    push(
        "RQ6.2",
        matrix.reps_per_cell >= campaign.min_reps_typical,
        format!(
            "{} repetitions per cell (configured minimum for typicality: {})",
            matrix.reps_per_cell, campaign.min_reps_typical
        ),
    );

    push(
        "RQ6.3",
        matrix.environments.len() >= 2,
        format!("{} distinct environments", matrix.environments.len()),
    );

    // Accuracy: the engine's delivery definition tracks all four feet inside
    // the zone and requires the box to be contact-free; both are fixed
    // engine rules, recorded here as evidence of measurement accuracy.
    push(
        "RQ7.1",
        true,
        "delivery events require all four box feet inside a delivery zone".to_string(),
    );
    push(
        "RQ7.2",
        true,
        "delivery events require the box to be free of agent contact".to_string(),
    );

    // Balance: equal cells per failure mode, and per environment (exact).
    let mut per_mode: BTreeMap<String, usize> = BTreeMap::new();
    for c in &matrix.cells {
        let label = c
            .fault
            .as_ref()
            .map(|f| f.kind.label().to_string())
            .unwrap_or_else(|| "faultless".to_string());
        *per_mode.entry(label).or_default() += 1;
    }
    let mode_counts: BTreeSet<usize> = per_mode.values().copied().collect();
    push(
        "RQ8.1",
        mode_counts.len() <= 1 && !per_mode.is_empty(),
        format!("cells per failure mode: {per_mode:?}"),
    );

    let mut per_env: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &matrix.cells {
        *per_env.entry(c.env_name.as_str()).or_default() += 1;
    }
    let env_counts: BTreeSet<usize> = per_env.values().copied().collect();
    let all_envs_present = matrix
        .environments
        .iter()
        .all(|e| per_env.contains_key(e.as_str()));
    push(
        "RQ8.2",
        env_counts.len() <= 1 && all_envs_present,
        format!("cells per environment: {per_env:?}"),
    );

    EvaluationValidationResult {
        matrix_id: matrix.id.clone(),
        checks,
        discrepancies,
    }
}

// ---------------------------------------------------------------------------
// Deployment scenarios (integration testing).
// ---------------------------------------------------------------------------

/// Anticipated gaps between the test environment and deployment, seeded into
/// the erroneous-behaviour log before any run; observed violations matching
/// a related requirement are marked anticipated.
pub const ANTICIPATED_GAPS: &[(&str, &[&str])] = &[
    (
        "Congestion at zone entrances can strand agents long enough to raise simultaneous intervention requests",
        &["RQ4.4", "RQ2.1", "RQ2.2", "RQ2.7"],
    ),
    (
        "Crowd layouts differing from test placements can increase human encounters",
        &["RQ4.3", "RQ4.10", "RQ4.8", "RQ4.9"],
    ),
    (
        "Real floors may exceed the incline and step envelope validated in testing",
        &["RQ3.2", "RQ3.4"],
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErroneousBehaviourEntry {
    pub scenario: String,
    pub description: String,
    pub anticipated: bool,
    pub related_requirements: Vec<String>,
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationResults {
    pub kind: String,
    pub scenario: String,
    pub config_digest: String,
    pub trace_digest: String,
    pub aborted: bool,
    pub verdicts: Vec<MonitorVerdict>,
    pub metrics: MetricsRecord,
    pub failures: usize,
    pub timestamp_unix_s: u64,
}

#[derive(Debug)]
pub struct DeploymentOutcome {
    pub results: IntegrationResults,
    pub erroneous: Vec<ErroneousBehaviourEntry>,
    pub failure_chains: Vec<Vec<FailureEvent>>,
    pub trace: crate::trace::Trace,
}

/// Run an operational scenario end to end and report performance against the
/// safety requirements, appending anticipated-vs-observed gaps to the
/// erroneous-behaviour log. An emergency stop terminates the run cleanly
/// with partial results flagged aborted.
pub fn run_deployment_scenario(
    cfg: &ScenarioConfig,
    catalog: &Catalog,
) -> Result<DeploymentOutcome, CampaignError> {
    if cfg.n_humans() == 0 {
        return Err(CampaignError::NotDeploymentGrade(
            "deployment scenarios must include humans".to_string(),
        ));
    }
    if cfg.duration_s + 1e-9 < cfg.day_s {
        return Err(CampaignError::NotDeploymentGrade(format!(
            "duration {} s is shorter than the operational day of {} s",
            cfg.duration_s, cfg.day_s
        )));
    }
    let ctx = ScenarioContext::from_config(cfg);
    let out = run_scenario_seeded(cfg, cfg.seed)?;
    let faulty = !cfg.faults.is_empty();
    let verdicts = evaluate_trace(&out.trace, &ctx, catalog, faulty);
    let ld = layout_digest(cfg, cfg.seed);
    let stats = aggregate_stats(&out.trace, &ctx, &ld);
    let max_stored = out
        .final_world
        .agents
        .iter()
        .map(|a| a.stored_bytes)
        .max()
        .unwrap_or(0);
    let failures = verdicts.iter().filter(|v| v.is_failure()).count();

    let mut erroneous = Vec::new();
    for v in verdicts.iter().filter(|v| v.is_failure()) {
        let anticipated = ANTICIPATED_GAPS
            .iter()
            .any(|(_, reqs)| reqs.contains(&v.requirement_id.as_str()));
        erroneous.push(ErroneousBehaviourEntry {
            scenario: cfg.name.clone(),
            description: format!(
                "requirement {} violated in deployment: {}",
                v.requirement_id, v.detail
            ),
            anticipated,
            related_requirements: vec![v.requirement_id.clone()],
            evidence: v
                .evidence
                .iter()
                .map(|e| format!("tick {} {} = {}", e.tick, e.label, e.value))
                .collect(),
        });
    }
    if out.aborted {
        erroneous.push(ErroneousBehaviourEntry {
            scenario: cfg.name.clone(),
            description: "run terminated by emergency stop; results are partial".to_string(),
            anticipated: true,
            related_requirements: vec![],
            evidence: vec![format!("stop at tick {}", out.final_world.tick)],
        });
    }

    let failure_chains = build_failure_chains(&out.trace, &verdicts);

    Ok(DeploymentOutcome {
        results: IntegrationResults {
            kind: "integration_results".to_string(),
            scenario: cfg.name.clone(),
            config_digest: cfg.digest(),
            trace_digest: out.trace.digest(),
            aborted: out.aborted,
            verdicts,
            metrics: performance_metrics(&stats, max_stored),
            failures,
            timestamp_unix_s: unix_time_s(),
        },
        erroneous,
        failure_chains,
        trace: out.trace,
    })
}

/// Reconstruct agent -> neighbourhood -> swarm chains for the hazard report:
/// a fault onset or blocked agent seeds the chain, local propagation is the
/// neighbourhood link, and each violated requirement is the swarm-level
/// condition.
fn build_failure_chains(
    trace: &crate::trace::Trace,
    verdicts: &[MonitorVerdict],
) -> Vec<Vec<FailureEvent>> {
    let mut chains = Vec::new();
    let first_fault = trace.records.iter().find_map(|r| match r {
        Record::FaultOn { tick, agent, kind } => Some((*tick, *agent, *kind)),
        _ => None,
    });
    let first_intervention = trace.records.iter().find_map(|r| match r {
        Record::Kine {
            tick,
            agent,
            requesting_intervention: true,
            ..
        } => Some((*tick, *agent)),
        _ => None,
    });
    for v in verdicts.iter().filter(|v| v.is_failure()) {
        let mut chain = Vec::new();
        if let Some((tick, agent, kind)) = first_fault {
            chain.push(FailureEvent {
                level: FailureLevel::Agent,
                tick,
                description: format!("{kind} fault active on {agent}"),
                causal_parent: None,
            });
        } else if let Some((tick, agent)) = first_intervention {
            chain.push(FailureEvent {
                level: FailureLevel::Agent,
                tick,
                description: format!("{agent} blocked and requesting intervention"),
                causal_parent: None,
            });
        }
        if !chain.is_empty() {
            let parent = Some(chain.len() - 1);
            chain.push(FailureEvent {
                level: FailureLevel::Neighbourhood,
                tick: v.evidence.first().map(|e| e.tick).unwrap_or(0),
                description: "local interaction pattern propagated the condition".to_string(),
                causal_parent: parent,
            });
        }
        let parent = if chain.is_empty() {
            None
        } else {
            Some(chain.len() - 1)
        };
        chain.push(FailureEvent {
            level: FailureLevel::Swarm,
            tick: v.evidence.first().map(|e| e.tick).unwrap_or(0),
            description: format!(
                "swarm-level violation of {}: {}",
                v.requirement_id, v.detail
            ),
            causal_parent: parent,
        });
        chains.push(chain);
    }
    chains
}

/// Stage-level internal test: drive the candidate controller through the
/// first environment faultlessly and check the performance metrics clear
/// their thresholds. Produces the evidence behind the tested-algorithm
/// artefact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalTestResults {
    pub scenario: String,
    pub config_digest: String,
    pub metrics: MetricsRecord,
    pub min_deliveries: u64,
    pub max_high_impact: u64,
    pub passed: bool,
}

pub fn run_internal_test(campaign: &CampaignConfig) -> Result<InternalTestResults, CampaignError> {
    let env = campaign
        .environments
        .first()
        .ok_or(CampaignError::NoEnvironments)?;
    let mut cfg = env.clone();
    cfg.duration_s = campaign.cell_duration_s;
    cfg.day_s = campaign.cell_duration_s;
    cfg.faults.clear();
    let ctx = ScenarioContext::from_config(&cfg);
    let out = run_scenario_seeded(&cfg, cfg.seed)?;
    let stats = aggregate_stats(&out.trace, &ctx, &layout_digest(&cfg, cfg.seed));
    let metrics = performance_metrics(&stats, 0);
    let min_deliveries = 1;
    let max_high_impact = 0;
    let passed =
        metrics.deliveries >= min_deliveries && metrics.high_impact_collisions <= max_high_impact;
    Ok(InternalTestResults {
        scenario: cfg.name.clone(),
        config_digest: cfg.digest(),
        metrics,
        min_deliveries,
        max_high_impact,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::ControllerKind;

    fn small_campaign() -> CampaignConfig {
        let mut c = CampaignConfig::desk_default();
        c.reps = 2;
        c.cell_duration_s = 60.0;
        c.environments.truncate(2);
        c.deployment = None;
        c
    }

    #[test]
    fn matrix_counts_match_cross_product() {
        // 3 environments, 2 fault kinds, 5 reps: 3 * 3 * 5 = 45 cells, each
        // environment in 15 of them.
        let c = CampaignConfig::desk_default();
        let m = generate_matrix(&c).unwrap();
        assert_eq!(m.cells.len(), 45);
        for env in &m.environments {
            let n = m.cells.iter().filter(|c| &c.env_name == env).count();
            assert_eq!(n, 15);
        }
    }

    #[test]
    fn single_env_no_faults_single_rep_is_one_cell() {
        let mut c = CampaignConfig::desk_default();
        c.environments.truncate(1);
        c.faults.clear();
        c.reps = 1;
        let m = generate_matrix(&c).unwrap();
        assert_eq!(m.cells.len(), 1);
        assert!(m.cells[0].fault.is_none());
    }

    #[test]
    fn empty_environments_rejected() {
        let mut c = CampaignConfig::desk_default();
        c.environments.clear();
        assert!(matches!(
            generate_matrix(&c),
            Err(CampaignError::NoEnvironments)
        ));
    }

    #[test]
    fn baseline_and_faulty_cells_share_layout_seed() {
        let c = CampaignConfig::desk_default();
        let m = generate_matrix(&c).unwrap();
        for cell in m.cells.iter().filter(|c| c.is_faulty()) {
            let baseline = m
                .cells
                .iter()
                .find(|b| b.env_name == cell.env_name && b.rep == cell.rep && !b.is_faulty())
                .expect("baseline exists");
            assert_eq!(baseline.layout_seed, cell.layout_seed);
        }
        // Layout seeds distinct across (env, rep) groups.
        let baseline_seeds: BTreeSet<u64> = m
            .cells
            .iter()
            .filter(|c| !c.is_faulty())
            .map(|c| c.layout_seed)
            .collect();
        assert_eq!(baseline_seeds.len(), m.environments.len() * m.reps_per_cell);
    }

    #[test]
    fn validation_flags_missing_fault_kind() {
        let mut c = CampaignConfig::desk_default();
        c.faults
            .retain(|f| f.kind != crate::fault::FaultKind::HalfWheelsMotor);
        let m = generate_matrix(&c).unwrap();
        let v = validate_evaluation(&c, &m, Catalog::builtin());
        let rq61 = v.checks.iter().find(|c| c.id == "RQ6.1").unwrap();
        assert!(!rq61.satisfied);
        assert!(v.discrepancies.iter().any(|d| d.id == "RQ6.1"));
    }

    #[test]
    fn validation_flags_wet_floor() {
        let mut c = CampaignConfig::desk_default();
        c.environments[1].arena.floor = crate::sim::Floor::Wet;
        let m = generate_matrix(&c).unwrap();
        let v = validate_evaluation(&c, &m, Catalog::builtin());
        assert!(v.discrepancies.iter().any(|d| d.id == "RQ5.2"));
    }

    #[test]
    fn compliant_matrix_validates_clean() {
        let c = CampaignConfig::desk_default();
        let m = generate_matrix(&c).unwrap();
        let v = validate_evaluation(&c, &m, Catalog::builtin());
        assert!(v.compliant(), "discrepancies: {:?}", v.discrepancies);
    }

    #[test]
    fn unbalanced_matrix_flagged_under_rq82() {
        let c = CampaignConfig::desk_default();
        let mut m = generate_matrix(&c).unwrap();
        m.cells.pop();
        let v = validate_evaluation(&c, &m, Catalog::builtin());
        assert!(v.discrepancies.iter().any(|d| d.id == "RQ8.2"));
    }

    #[test]
    fn small_campaign_runs_and_pairs() {
        let c = small_campaign();
        let m = generate_matrix(&c).unwrap();
        let log = run_campaign(&c, &m, Catalog::builtin(), None).unwrap();
        assert_eq!(log.entries.len(), m.cells.len());
        assert!(log.entries.iter().all(|e| e.crashed.is_none()));
        // Degradation verdicts exist and reference seed-matched pairs.
        assert!(!log.degradations.is_empty());
        for d in &log.degradations {
            assert!(!d.pairs.is_empty());
            for (faulty_id, baseline_id) in &d.pairs {
                let f = log
                    .entries
                    .iter()
                    .find(|e| &e.cell_id == faulty_id)
                    .unwrap();
                let b = log
                    .entries
                    .iter()
                    .find(|e| &e.cell_id == baseline_id)
                    .unwrap();
                assert_eq!(f.layout_seed, b.layout_seed);
                assert_eq!(f.env_name, b.env_name);
                assert!(f.fault.is_some() && b.fault.is_none());
            }
        }
    }

    #[test]
    fn empty_matrix_empty_log() {
        let c = small_campaign();
        let mut m = generate_matrix(&c).unwrap();
        m.cells.clear();
        let log = run_campaign(&c, &m, Catalog::builtin(), None).unwrap();
        assert!(log.entries.is_empty());
        assert!(log.degradations.is_empty());
    }

    #[test]
    fn campaign_reruns_identically() {
        let c = small_campaign();
        let m = generate_matrix(&c).unwrap();
        let log1 = run_campaign(&c, &m, Catalog::builtin(), None).unwrap();
        let log2 = run_campaign(&c, &m, Catalog::builtin(), Some(4)).unwrap();
        let strip = |log: &VerificationLog| -> Vec<(String, String, Vec<MonitorVerdict>)> {
            log.entries
                .iter()
                .map(|e| {
                    (
                        e.cell_id.clone(),
                        e.trace_digest.clone(),
                        e.verdicts.clone(),
                    )
                })
                .collect()
        };
        assert_eq!(strip(&log1), strip(&log2));
        assert_eq!(log1.degradations, log2.degradations);
    }

    #[test]
    fn log_round_trips_through_jsonl() {
        let c = small_campaign();
        let m = generate_matrix(&c).unwrap();
        let log = run_campaign(&c, &m, Catalog::builtin(), None).unwrap();
        let dir = std::env::temp_dir().join(format!("swarmassure-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("log.jsonl");
        log.save(&path).unwrap();
        let loaded = VerificationLog::load(&path).unwrap();
        assert_eq!(log, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn uncapped_controller_fails_speed_caps_in_every_cell() {
        let mut c = small_campaign();
        for env in &mut c.environments {
            env.behavior.controller = ControllerKind::Uncapped;
        }
        c.cell_duration_s = 120.0;
        let m = generate_matrix(&c).unwrap();
        let log = run_campaign(&c, &m, Catalog::builtin(), None).unwrap();
        for e in &log.entries {
            let rq41_or_42_failed = e.verdicts.iter().any(|v| {
                (v.requirement_id == "RQ4.1" || v.requirement_id == "RQ4.2") && v.is_failure()
            });
            assert!(
                rq41_or_42_failed,
                "cell {} should fail a speed cap",
                e.cell_id
            );
        }
    }

    #[test]
    fn deployment_requires_humans_and_full_day() {
        let cat = Catalog::builtin();
        let mut cfg = ScenarioConfig::desk_default();
        cfg.duration_s = 100.0;
        cfg.day_s = 1000.0;
        assert!(matches!(
            run_deployment_scenario(&cfg, cat),
            Err(CampaignError::NotDeploymentGrade(_))
        ));
        cfg.humans.trained = 0;
        cfg.humans.attendees = 0;
        cfg.humans.placements.clear();
        cfg.duration_s = 1000.0;
        assert!(matches!(
            run_deployment_scenario(&cfg, cat),
            Err(CampaignError::NotDeploymentGrade(_))
        ));
    }

    #[test]
    fn deployment_emergency_stop_flags_aborted() {
        let cat = Catalog::builtin();
        let mut cfg = ScenarioConfig::desk_default();
        cfg.duration_s = 300.0;
        cfg.day_s = 300.0;
        cfg.emergency_stop_s = Some(100.0);
        let out = run_deployment_scenario(&cfg, cat).unwrap();
        assert!(out.results.aborted);
        assert!(out
            .erroneous
            .iter()
            .any(|e| e.description.contains("emergency stop")));
    }

    #[test]
    fn internal_test_passes_on_default_environment() {
        let mut c = CampaignConfig::desk_default();
        c.cell_duration_s = 300.0;
        let r = run_internal_test(&c).unwrap();
        assert!(r.passed, "metrics: {:?}", r.metrics);
    }
}
