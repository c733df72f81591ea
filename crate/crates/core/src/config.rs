//! Scenario and campaign configuration: keyed TOML files with validation.
//!
//! A scenario file describes one run (arena, swarm, boxes, humans, behaviour
//! parameters, faults, seed, duration). A campaign file holds several named
//! environments plus the matrix settings. Digests of the resolved structs
//! identify configurations in logs and make runs reproducible.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{BehaviorParams, ControllerKind};
use crate::fault::{FaultKind, FaultSpec};
use crate::geom::{Rect, Vec2};
use crate::sim::{ArenaConfig, Floor, HumanRole, SimParams};
use crate::util::sha256_hex;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Length of one operational day for day-windowed requirements.
    #[serde(default = "default_day")]
    pub day_s: f64,
    /// Optional scripted emergency stop, simulated seconds from start.
    #[serde(default)]
    pub emergency_stop_s: Option<f64>,
    pub arena: ArenaConfig,
    pub swarm: SwarmConfig,
    #[serde(default)]
    pub boxes: BoxesConfig,
    #[serde(default)]
    pub humans: HumansConfig,
    #[serde(default)]
    pub behavior: BehaviorConfig,
    #[serde(default)]
    pub faults: Vec<FaultConfig>,
}

fn default_seed() -> u64 {
    0
}
fn default_duration() -> f64 {
    1000.0
}
fn default_dt() -> f64 {
    0.1
}
fn default_day() -> f64 {
    28_800.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmConfig {
    pub agents: usize,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(default = "default_agent_radius")]
    pub agent_radius: f64,
    #[serde(default = "default_agent_mass")]
    pub agent_mass_kg: f64,
    /// Platform acceleration capability, m/s^2.
    #[serde(default = "default_accel")]
    pub accel_limit: f64,
}

fn default_v_max() -> f64 {
    1.0
}
fn default_agent_radius() -> f64 {
    0.15
}
fn default_agent_mass() -> f64 {
    2.9
}
fn default_accel() -> f64 {
    3.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxesConfig {
    #[serde(default = "default_box_count")]
    pub count: usize,
    #[serde(default = "default_box_weight")]
    pub weight_kg: f64,
    #[serde(default = "default_box_half")]
    pub half_size: f64,
    #[serde(default = "default_respawn")]
    pub respawn_delay_s: f64,
}

impl Default for BoxesConfig {
    fn default() -> Self {
        BoxesConfig {
            count: default_box_count(),
            weight_kg: default_box_weight(),
            half_size: default_box_half(),
            respawn_delay_s: default_respawn(),
        }
    }
}

fn default_box_count() -> usize {
    6
}
fn default_box_weight() -> f64 {
    1.5
}
fn default_box_half() -> f64 {
    0.10
}
fn default_respawn() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanPlacement {
    pub x: f64,
    pub y: f64,
    pub role: HumanRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumansConfig {
    #[serde(default)]
    pub trained: usize,
    #[serde(default)]
    pub attendees: usize,
    /// Explicit placements; when present must cover trained + attendees.
    #[serde(default)]
    pub placements: Vec<HumanPlacement>,
    #[serde(default)]
    pub wander_speed: f64,
    #[serde(default = "default_human_radius")]
    pub human_radius: f64,
}

impl Default for HumansConfig {
    fn default() -> Self {
        HumansConfig {
            trained: 0,
            attendees: 0,
            placements: Vec::new(),
            wander_speed: 0.0,
            human_radius: default_human_radius(),
        }
    }
}

fn default_human_radius() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BehaviorConfig {
    pub controller: ControllerKind,
    pub sense_radius: f64,
    pub avoid_distance: f64,
    pub slow_distance: f64,
    pub slow_speed: f64,
    pub avoid_speed: f64,
    pub docking_distance: f64,
    pub docking_speed: f64,
    pub human_keepaway: f64,
    pub human_margin: f64,
    pub cap_headroom: f64,
    pub stuck_timeout_s: f64,
    pub intervention_wait_s: f64,
    pub stuck_cooldown_s: f64,
    pub input_request_range: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        let b = BehaviorParams::default();
        BehaviorConfig {
            controller: ControllerKind::Compliant,
            sense_radius: 3.0,
            avoid_distance: b.avoid_distance,

            slow_distance: b.slow_distance,
            slow_speed: b.slow_speed,
            avoid_speed: b.avoid_speed,
            docking_distance: b.docking_distance,
            docking_speed: b.docking_speed,
            human_keepaway: b.human_keepaway,
            human_margin: b.human_margin,
            cap_headroom: b.cap_headroom,
            stuck_timeout_s: b.stuck_timeout_s,
            intervention_wait_s: b.intervention_wait_s,
            stuck_cooldown_s: b.stuck_cooldown_s,
            input_request_range: b.input_request_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    pub kind: FaultKind,
    pub fraction: f64,
    #[serde(default)]
    pub onset_s: f64,
    /// Zero or absent means the fault persists to the end of the run.
    #[serde(default)]
    pub duration_s: f64,
    pub seed: u64,
}

impl FaultConfig {
    pub fn to_spec(&self, dt: f64) -> FaultSpec {
        FaultSpec {
            kind: self.kind,
            fraction: self.fraction,
            onset_tick: (self.onset_s / dt).round() as u64,
            duration_ticks: if self.duration_s > 0.0 {
                Some((self.duration_s / dt).round() as u64)
            } else {
                None
            },
            seed: self.seed,
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<ScenarioConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ScenarioConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<ScenarioConfig, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ticks(&self) -> u64 {
        (self.duration_s / self.dt).round() as u64
    }

    pub fn n_humans(&self) -> usize {
        self.humans.trained + self.humans.attendees
    }

    /// Stable content digest of the resolved configuration.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Digest with fault blocks and seed removed: identifies the layout a
    /// degradation baseline must share with its faulty counterpart.
    pub fn digest_sans_faults(&self) -> String {
        let mut c = self.clone();
        c.faults.clear();
        c.seed = 0;
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            v_max: self.swarm.v_max,
            accel_limit: self.swarm.accel_limit,
            agent_radius: self.swarm.agent_radius,
            agent_mass_kg: self.swarm.agent_mass_kg,
            box_half_size: self.boxes.half_size,
            human_radius: self.humans.human_radius,
            sense_radius: self.behavior.sense_radius,
            human_range: crate::sim::COMM_RANGE_M,
            human_wander_speed: self.humans.wander_speed,
            respawn_delay_ticks: (self.boxes.respawn_delay_s / self.dt).round() as u64,
            stored_bytes_per_tick: 320,
        }
    }

    pub fn behavior_params(&self, noise_seed: u64) -> BehaviorParams {
        let defaults = BehaviorParams::default();
        BehaviorParams {
            controller: self.behavior.controller,
            noise_seed,
            avoid_distance: self.behavior.avoid_distance,
            slow_distance: self.behavior.slow_distance,
            slow_speed: self.behavior.slow_speed,
            avoid_speed: self.behavior.avoid_speed,
            box_avoid_distance: defaults.box_avoid_distance,
            box_slow_distance: defaults.box_slow_distance,
            box_slow_speed: defaults.box_slow_speed,
            docking_distance: self.behavior.docking_distance,
            docking_speed: self.behavior.docking_speed,
            human_keepaway: self.behavior.human_keepaway,
            human_margin: self.behavior.human_margin,
            cap_headroom: self.behavior.cap_headroom,
            stuck_timeout_s: self.behavior.stuck_timeout_s,
            intervention_wait_s: self.behavior.intervention_wait_s,
            stuck_cooldown_s: self.behavior.stuck_cooldown_s,
            input_request_range: self.behavior.input_request_range,
            box_half_size: self.boxes.half_size,
            stall_nudge_s: defaults.stall_nudge_s,
            nudge_speed: defaults.nudge_speed,
            staging_inner: defaults.staging_inner,
            staging_outer: defaults.staging_outer,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let a = &self.arena;
        if !(a.width > 0.0) || !(a.height > 0.0) {
            return Err(invalid(format!(
                "arena must have positive area, got {} x {}",
                a.width, a.height
            )));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("dt must be positive"));
        }
        if !(self.duration_s > 0.0) {
            return Err(invalid("duration_s must be positive"));
        }
        if !(self.day_s > 0.0) {
            return Err(invalid("day_s must be positive"));
        }
        let bounds = a.bounds();
        let all_zones: Vec<(&str, &Rect)> = a
            .delivery_zones
            .iter()
            .map(|z| ("delivery", z))
            .chain(a.deposit_zones.iter().map(|z| ("deposit", z)))
            .collect();
        for (kind, z) in &all_zones {
            if !z.is_valid() {
                return Err(invalid(format!("{kind} zone {z:?} has non-positive extent")));
            }
            if !bounds.contains_rect(z) {
                return Err(invalid(format!("{kind} zone {z:?} lies outside the arena")));
            }
        }
        for i in 0..all_zones.len() {
            for j in (i + 1)..all_zones.len() {
                if all_zones[i].1.overlaps(all_zones[j].1) {
                    return Err(invalid(format!(
                        "zones overlap: {:?} and {:?}",
                        all_zones[i].1, all_zones[j].1
                    )));
                }
            }
        }
        if self.arena.delivery_zones.is_empty() {
            return Err(invalid("at least one delivery zone is required"));
        }
        if self.swarm.agents == 0 {
            return Err(invalid("swarm.agents must be at least 1"));
        }
        if !(self.swarm.v_max > 0.0) {
            return Err(invalid("swarm.v_max must be positive"));
        }
        if !(self.swarm.agent_radius > 0.0) {
            return Err(invalid("swarm.agent_radius must be positive"));
        }
        if !(self.swarm.agent_mass_kg > 0.0) {
            return Err(invalid("swarm.agent_mass_kg must be positive"));
        }
        if !(self.swarm.accel_limit > 0.0) {
            return Err(invalid("swarm.accel_limit must be positive"));
        }
        if !(self.boxes.half_size > 0.0) || !(self.boxes.weight_kg > 0.0) {
            return Err(invalid("boxes need positive half_size and weight_kg"));
        }
        if self.n_humans() > 0 && !a.humans_have_locators {
            return Err(invalid(
                "humans present but arena.humans_have_locators is false: \
                 the swarm only operates where humans carry locator devices",
            ));
        }
        if !self.humans.placements.is_empty() {
            if self.humans.placements.len() != self.n_humans() {
                return Err(invalid(format!(
                    "placements list has {} entries but trained + attendees = {}",
                    self.humans.placements.len(),
                    self.n_humans()
                )));
            }
            let troles = self
                .humans
                .placements
                .iter()
                .filter(|p| p.role == HumanRole::Trained)
                .count();
            if troles != self.humans.trained {
                return Err(invalid(format!(
                    "placements contain {} trained humans, config says {}",
                    troles, self.humans.trained
                )));
            }
            for p in &self.humans.placements {
                if !bounds.contains(Vec2::new(p.x, p.y)) {
                    return Err(invalid(format!(
                        "human placement ({}, {}) outside the arena",
                        p.x, p.y
                    )));
                }
            }
        }
        for f in &self.faults {
            if !(0.0..=1.0).contains(&f.fraction) {
                return Err(invalid(format!(
                    "fault fraction {} outside [0, 1]",
                    f.fraction
                )));
            }
            if f.onset_s < 0.0 || f.duration_s < 0.0 {
                return Err(invalid("fault onset_s/duration_s must be non-negative"));
            }
        }
        if let Some(t) = self.emergency_stop_s {
            if !(t > 0.0) {
                return Err(invalid("emergency_stop_s must be positive when set"));
            }
        }
        let b = &self.behavior;
        for (name, v) in [
            ("sense_radius", b.sense_radius),
            ("avoid_distance", b.avoid_distance),
            ("slow_distance", b.slow_distance),
            ("stuck_timeout_s", b.stuck_timeout_s),
            ("intervention_wait_s", b.intervention_wait_s),
            ("cap_headroom", b.cap_headroom),
        ] {
            if !(v > 0.0) {
                return Err(invalid(format!("behavior.{name} must be positive")));
            }
        }
        if b.cap_headroom >= 1.0 {
            return Err(invalid("behavior.cap_headroom must be below 1"));
        }
        Ok(())
    }

    /// The default desk-scale compliant scenario: 4 m x 4 m arena, traffic
    /// corridor on the left, humans well clear on the right.
    pub fn desk_default() -> ScenarioConfig {
        ScenarioConfig {
            name: "desk-default".to_string(),
            seed: 7,
            duration_s: 1000.0,
            dt: 0.1,
            day_s: 1000.0,
            emergency_stop_s: None,
            arena: ArenaConfig {
                width: 4.0,
                height: 4.0,
                incline_deg: 0.0,
                floor: Floor::Dry,
                max_step_height_cm: 0.4,
                delivery_zones: vec![Rect::new(0.0, 2.8, 1.2, 4.0)],
                deposit_zones: vec![
                    Rect::new(0.0, 0.0, 1.2, 1.2),
                    Rect::new(0.0, 1.4, 1.2, 2.6),
                ],
                humans_have_locators: true,
            },
            swarm: SwarmConfig {
                agents: 10,
                v_max: 1.0,
                agent_radius: 0.15,
                agent_mass_kg: 2.9,
                accel_limit: 3.9,
            },
            boxes: BoxesConfig::default(),
            humans: HumansConfig {
                trained: 1,
                attendees: 2,
                placements: vec![
                    HumanPlacement {
                        x: 3.8,
                        y: 2.0,
                        role: HumanRole::Trained,
                    },
                    HumanPlacement {
                        x: 3.8,
                        y: 0.4,
                        role: HumanRole::Attendee,
                    },
                    HumanPlacement {
                        x: 3.8,
                        y: 3.6,
                        role: HumanRole::Attendee,
                    },
                ],
                wander_speed: 0.0,
                human_radius: 0.2,
            },
            behavior: BehaviorConfig::default(),
            faults: Vec::new(),
        }
    }
}

/// Campaign-level settings and environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub name: String,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_cell_duration")]
    pub cell_duration_s: f64,
    /// Minimum repetitions considered representative of typical use.
    #[serde(default = "default_min_reps")]
    pub min_reps_typical: usize,
    #[serde(default)]
    pub workers: Option<usize>,
    pub environments: Vec<ScenarioConfig>,
    #[serde(default)]
    pub faults: Vec<FaultConfig>,
    /// Optional deployment scenario run at the end of the pipeline.
    #[serde(default)]
    pub deployment: Option<ScenarioConfig>,
    /// Justifications for known data-requirement discrepancies, keyed by id.
    #[serde(default)]
    pub discrepancy_justifications: std::collections::BTreeMap<String, String>,
}

fn default_master_seed() -> u64 {
    42
}
fn default_reps() -> usize {
    5
}
fn default_cell_duration() -> f64 {
    1000.0
}
fn default_min_reps() -> usize {
    3
}

impl CampaignConfig {
    pub fn load(path: &Path) -> Result<CampaignConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: CampaignConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.environments.is_empty() {
            return Err(invalid("campaign needs at least one environment"));
        }
        if self.reps == 0 {
            return Err(invalid("campaign reps must be at least 1"));
        }
        if !(self.cell_duration_s > 0.0) {
            return Err(invalid("cell_duration_s must be positive"));
        }
        let mut names = BTreeSet::new();
        for env in &self.environments {
            env.validate()?;
            if !names.insert(env.name.clone()) {
                return Err(invalid(format!("duplicate environment name `{}`", env.name)));
            }
        }
        for f in &self.faults {
            if !(0.0..=1.0).contains(&f.fraction) {
                return Err(invalid(format!(
                    "fault fraction {} outside [0, 1]",
                    f.fraction
                )));
            }
        }
        if let Some(dep) = &self.deployment {
            dep.validate()?;
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Default desk-scale campaign: three environments, both fault kinds at
    /// their catalog fractions, five repetitions.
    pub fn desk_default() -> CampaignConfig {
        let base = ScenarioConfig::desk_default();
        let mut env_a = base.clone();
        env_a.name = "env-a".into();
        let mut env_b = base.clone();
        env_b.name = "env-b".into();
        env_b.arena.incline_deg = 5.0;
        env_b.swarm.agents = 8;
        let mut env_c = base.clone();
        env_c.name = "env-c".into();
        env_c.arena.incline_deg = 12.0;
        env_c.boxes.count = 6;
        let mut deployment = base;
        deployment.name = "deployment".into();
        CampaignConfig {
            name: "desk".into(),
            master_seed: 42,
            reps: 5,
            cell_duration_s: 1000.0,
            min_reps_typical: 3,
            workers: None,
            environments: vec![env_a, env_b, env_c],
            faults: vec![
                FaultConfig {
                    kind: FaultKind::FullCommunication,
                    fraction: 0.10,
                    onset_s: 0.0,
                    duration_s: 0.0,
                    seed: 9001,
                },
                FaultConfig {
                    kind: FaultKind::HalfWheelsMotor,
                    fraction: 0.50,
                    onset_s: 0.0,
                    duration_s: 0.0,
                    seed: 9002,
                },
            ],
            deployment: Some(deployment),
            discrepancy_justifications: std::collections::BTreeMap::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_default_validates() {
        ScenarioConfig::desk_default().validate().unwrap();
        CampaignConfig::desk_default().validate().unwrap();
    }

    #[test]
    fn zero_area_arena_rejected() {
        let mut c = ScenarioConfig::desk_default();
        c.arena.width = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn humans_without_locators_rejected() {
        let mut c = ScenarioConfig::desk_default();
        c.arena.humans_have_locators = false;
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("locator"));
    }

    #[test]
    fn no_humans_without_locators_is_fine() {
        let mut c = ScenarioConfig::desk_default();
        c.arena.humans_have_locators = false;
        c.humans.trained = 0;
        c.humans.attendees = 0;
        c.humans.placements.clear();
        c.validate().unwrap();
    }

    #[test]
    fn overlapping_zones_rejected() {
        let mut c = ScenarioConfig::desk_default();
        c.arena.deposit_zones = vec![Rect::new(0.0, 2.0, 1.2, 3.2)];
        assert!(c.validate().is_err());
    }

    #[test]
    fn zone_outside_arena_rejected() {
        let mut c = ScenarioConfig::desk_default();
        c.arena.deposit_zones = vec![Rect::new(3.5, 3.5, 4.5, 4.5)];
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip_preserves_digest() {
        let c = ScenarioConfig::desk_default();
        let text = toml::to_string(&c).unwrap();
        let c2 = ScenarioConfig::from_toml_str(&text, "inline").unwrap();
        assert_eq!(c.digest(), c2.digest());
    }

    #[test]
    fn parse_error_carries_location() {
        let err = ScenarioConfig::from_toml_str("name = \"x\"\nseed = \"oops\"\n", "inline")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "diagnostic should cite a line: {msg}");
    }

    #[test]
    fn digest_sans_faults_matches_across_fault_variants() {
        let mut a = ScenarioConfig::desk_default();
        let mut b = a.clone();
        b.seed = 1234;
        b.faults.push(FaultConfig {
            kind: FaultKind::FullCommunication,
            fraction: 0.1,
            onset_s: 0.0,
            duration_s: 0.0,
            seed: 1,
        });
        a.faults.clear();
        assert_eq!(a.digest_sans_faults(), b.digest_sans_faults());
        assert_ne!(a.digest(), b.digest());
    }
}
