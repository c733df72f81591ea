//! Scenario execution: seeded world construction and the per-tick loop
//! (faults, sensing, control, actuation, physics, trace capture).

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::behavior::{self, BehaviorParams};
use crate::config::ScenarioConfig;
use crate::fault::{self, FaultError, FaultSpec};
use crate::geom::Vec2;
use crate::sim::{
    self, AgentId, AgentState, BoxId, BoxState, HumanId, HumanRole, HumanState, SimError,
    SimEvent, WorldState,
};
use crate::trace::{Trace, TraceMeta};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error("placement failed: {0}")]
    Placement(String),
}

pub struct RunOutput {
    pub trace: Trace,
    pub final_world: WorldState,
    pub aborted: bool,
}

/// Deterministic box slots inside the deposit zones: a grid with a safety
/// pitch, filled zone by zone.
fn box_slots(cfg: &ScenarioConfig) -> Vec<Vec2> {
    let r = cfg.boxes.half_size * std::f64::consts::SQRT_2;
    let margin = r + 0.02;
    // Lanes between boxes must pass a whole agent, not just its centre.
    let pitch = 2.0 * r + 0.40;
    let mut slots = Vec::new();
    for z in &cfg.arena.deposit_zones {
        let nx = ((z.width() - 2.0 * margin) / pitch).floor() as i64 + 1;
        let ny = ((z.height() - 2.0 * margin) / pitch).floor() as i64 + 1;
        for iy in 0..ny.max(0) {
            for ix in 0..nx.max(0) {
                slots.push(Vec2::new(
                    z.x0 + margin + ix as f64 * pitch,
                    z.y0 + margin + iy as f64 * pitch,
                ));
            }
        }
    }
    slots
}

/// Build the initial world for a scenario under a layout seed. The layout
/// seed controls every placement and all wander noise, so runs that differ
/// only in their fault blocks share an identical environment.
pub fn build_world(cfg: &ScenarioConfig, layout_seed: u64) -> Result<WorldState, RunnerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);
    let params = cfg.sim_params();

    let slots = box_slots(cfg);
    if slots.len() < cfg.boxes.count {
        return Err(RunnerError::Placement(format!(
            "deposit zones provide {} box slots, scenario wants {}",
            slots.len(),
            cfg.boxes.count
        )));
    }
    let boxes: Vec<BoxState> = slots
        .iter()
        .take(cfg.boxes.count)
        .enumerate()
        .map(|(i, &pos)| BoxState::at(BoxId(i as u32), pos, cfg.boxes.half_size, cfg.boxes.weight_kg))
        .collect();

    // Humans: explicit placements, else best-of-N seeded placement keeping
    // clear of the task zones.
    let mut humans: Vec<HumanState> = Vec::new();
    let roles: Vec<HumanRole> = std::iter::repeat(HumanRole::Trained)
        .take(cfg.humans.trained)
        .chain(std::iter::repeat(HumanRole::Attendee).take(cfg.humans.attendees))
        .collect();
    if !cfg.humans.placements.is_empty() {
        let mut placements = cfg.humans.placements.clone();
        placements.sort_by(|a, b| {
            (b.role == HumanRole::Trained)
                .cmp(&(a.role == HumanRole::Trained))
                .then(a.x.partial_cmp(&b.x).unwrap())
        });
        for (i, p) in placements.iter().enumerate() {
            humans.push(HumanState {
                id: HumanId(i as u32),
                role: p.role,
                position: Vec2::new(p.x, p.y),
                has_locator: cfg.arena.humans_have_locators,
            });
        }
    } else {
        for (i, role) in roles.iter().enumerate() {
            let mut best: Option<(Vec2, f64)> = None;
            for _ in 0..64 {
                let p = Vec2::new(
                    rng.gen_range(cfg.humans.human_radius..cfg.arena.width - cfg.humans.human_radius),
                    rng.gen_range(cfg.humans.human_radius..cfg.arena.height - cfg.humans.human_radius),
                );
                let zone_clearance = cfg
                    .arena
                    .delivery_zones
                    .iter()
                    .chain(cfg.arena.deposit_zones.iter())
                    .map(|z| z.distance_to(p))
                    .fold(f64::INFINITY, f64::min);
                let peer_clearance = humans
                    .iter()
                    .map(|h| h.position.distance(p))
                    .fold(f64::INFINITY, f64::min);
                let score = zone_clearance.min(peer_clearance);
                if best.map(|(_, s)| score > s).unwrap_or(true) {
                    best = Some((p, score));
                }
            }
            let (pos, _) = best.unwrap();
            humans.push(HumanState {
                id: HumanId(i as u32),
                role: *role,
                position: pos,
                has_locator: cfg.arena.humans_have_locators,
            });
        }
    }

    // Agents: rejection-sampled free positions clear of boxes and humans.
    // The human clearance relaxes stepwise when the arena is too tight to
    // spawn everyone outside the keep-away rings.
    let mut agents: Vec<AgentState> = Vec::new();
    let r = cfg.swarm.agent_radius;
    let clearance_ladder = [cfg.behavior.human_keepaway + 0.3, 2.1, 1.2, 0.6];
    for i in 0..cfg.swarm.agents {
        let mut placed = false;
        'ladder: for human_clearance in clearance_ladder {
            for _attempt in 0..2000 {
                let pos = Vec2::new(
                    rng.gen_range(r..cfg.arena.width - r),
                    rng.gen_range(r..cfg.arena.height - r),
                );
                let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                let clear_agents = agents
                    .iter()
                    .all(|a| a.position.distance(pos) > 2.0 * r + 0.1);
                let clear_boxes = boxes
                    .iter()
                    .all(|b| b.position.distance(pos) > r + params.box_radius() + 0.1);
                let clear_humans = humans
                    .iter()
                    .all(|h| h.position.distance(pos) > human_clearance);
                if clear_agents && clear_boxes && clear_humans {
                    agents.push(AgentState::at(AgentId(i as u32), pos, heading));
                    placed = true;
                    break 'ladder;
                }
            }
        }
        if !placed {
            return Err(RunnerError::Placement(format!(
                "no free spot for agent {i}: arena too crowded"
            )));
        }
    }

    Ok(WorldState::new(
        cfg.arena.clone(),
        params,
        cfg.dt,
        layout_seed,
        agents,
        boxes,
        humans,
    ))
}

/// Fault schedule: per spec, the member set drawn from the spec's own seed.
pub fn fault_schedule(
    cfg: &ScenarioConfig,
) -> Result<Vec<(FaultSpec, BTreeSet<AgentId>)>, RunnerError> {
    cfg.faults
        .iter()
        .map(|f| {
            let spec = f.to_spec(cfg.dt);
            let members = fault::assign_faults(cfg.swarm.agents, &spec)?;
            Ok((spec, members))
        })
        .collect()
}

/// Drive a prepared world for `ticks` steps under the given controller
/// parameters and fault schedule.
pub fn run_world(
    mut world: WorldState,
    bparams: &BehaviorParams,
    schedule: &[(FaultSpec, BTreeSet<AgentId>)],
    ticks: u64,
    stop_tick: Option<u64>,
    meta: TraceMeta,
) -> Result<RunOutput, RunnerError> {
    let dt = world.dt;
    let mut trace = Trace::new(meta);
    let ev0 = sim::apply_fault_schedule(&mut world, schedule, 0);
    trace.push_tick(&world, &ev0);
    let mut aborted = false;

    for t in 1..=ticks {
        let fault_events = sim::apply_fault_schedule(&mut world, schedule, t);

        let mut commands = BTreeMap::new();
        let mut next_states = BTreeMap::new();
        for a in &world.agents {
            let perception = sim::sense(&world, a.id)?;
            let (cmd, next) = behavior::decide(&perception, &a.controller_state, bparams);
            let (cmd, _comm_view) = fault::apply_fault(a, cmd, Vec::new(), dt);
            commands.insert(a.id, cmd);
            next_states.insert(a.id, next);
        }
        for a in &mut world.agents {
            a.controller_state = next_states.remove(&a.id).expect("state for every agent");
        }

        let (next_world, mut events) = sim::step(&world, &commands)?;
        world = next_world;
        let mut all_events = fault_events;
        all_events.append(&mut events);

        if stop_tick == Some(t) {
            all_events.push(SimEvent::EmergencyStop { tick: t });
            trace.push_tick(&world, &all_events);
            aborted = true;
            break;
        }
        trace.push_tick(&world, &all_events);
    }

    Ok(RunOutput {
        trace,
        final_world: world,
        aborted,
    })
}

/// Run a scenario end to end with its own seed as the layout seed.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, RunnerError> {
    run_scenario_seeded(cfg, cfg.seed)
}

/// Run a scenario under an explicit layout seed (campaign cells pair faulty
/// and baseline runs through a shared layout seed).
pub fn run_scenario_seeded(cfg: &ScenarioConfig, layout_seed: u64) -> Result<RunOutput, RunnerError> {
    let world = build_world(cfg, layout_seed)?;
    let schedule = fault_schedule(cfg)?;
    let bparams = cfg.behavior_params(layout_seed);
    let stop_tick = cfg
        .emergency_stop_s
        .map(|s| (s / cfg.dt).round() as u64)
        .filter(|t| *t > 0);
    let meta = TraceMeta {
        scenario: cfg.name.clone(),
        config_digest: cfg.digest(),
        seed: layout_seed,
        dt: cfg.dt,
        tool_version: crate::TOOL_VERSION.to_string(),
    };
    run_world(world, &bparams, &schedule, cfg.ticks(), stop_tick, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rect;
    use crate::sim::{ArenaConfig, Floor, SimParams};
    use crate::trace::{meta_for_tests, Record};

    fn open_arena() -> ArenaConfig {
        ArenaConfig {
            width: 8.0,
            height: 4.0,
            incline_deg: 0.0,
            floor: Floor::Dry,
            max_step_height_cm: 0.4,
            delivery_zones: vec![Rect::new(0.0, 3.0, 1.0, 4.0)],
            deposit_zones: vec![Rect::new(7.0, 0.0, 8.0, 1.0)],
            humans_have_locators: true,
        }
    }

    #[test]
    fn head_on_agents_avoid_each_other() {
        // Two agents facing each other across open floor: the controller must
        // steer them apart without a single collision event.
        let mut a = AgentState::at(AgentId(0), Vec2::new(1.0, 2.0), 0.0);
        a.controller_state.target_box = None;
        let b = AgentState::at(AgentId(1), Vec2::new(7.0, 2.0), std::f64::consts::PI);
        let world = WorldState::new(
            open_arena(),
            SimParams::default(),
            0.1,
            3,
            vec![a, b],
            vec![],
            vec![],
        );
        let out = run_world(
            world,
            &BehaviorParams::default(),
            &[],
            400,
            None,
            meta_for_tests(0.1),
        )
        .unwrap();
        let collisions = out
            .trace
            .records
            .iter()
            .filter(|r| matches!(r, Record::Collision { .. }))
            .count();
        assert_eq!(collisions, 0, "head-on approach must be resolved");
    }

    #[test]
    fn desk_scenario_runs_and_delivers() {
        let mut cfg = ScenarioConfig::desk_default();
        cfg.duration_s = 400.0;
        let out = run_scenario(&cfg).unwrap();
        let deliveries = out
            .trace
            .records
            .iter()
            .filter(|r| matches!(r, Record::Delivery { .. }))
            .count();
        assert!(deliveries > 0, "desk scenario should deliver at least one box");
        assert!(!out.aborted);
    }

    #[test]
    fn identical_seeds_identical_digests() {
        let mut cfg = ScenarioConfig::desk_default();
        cfg.duration_s = 120.0;
        let d1 = run_scenario(&cfg).unwrap().trace.digest();
        let d2 = run_scenario(&cfg).unwrap().trace.digest();
        assert_eq!(d1, d2);
        cfg.seed = 8;
        let d3 = run_scenario(&cfg).unwrap().trace.digest();
        assert_ne!(d1, d3);
    }

    #[test]
    fn emergency_stop_truncates_run() {
        let mut cfg = ScenarioConfig::desk_default();
        cfg.duration_s = 300.0;
        cfg.emergency_stop_s = Some(10.0);
        let out = run_scenario(&cfg).unwrap();
        assert!(out.aborted);
        assert_eq!(out.final_world.tick, 100);
        assert!(out.trace.was_aborted());
    }

    #[test]
    fn fault_onset_events_logged() {
        let mut cfg = ScenarioConfig::desk_default();
        cfg.duration_s = 30.0;
        cfg.faults.push(crate::config::FaultConfig {
            kind: crate::fault::FaultKind::HalfWheelsMotor,
            fraction: 0.5,
            onset_s: 1.0,
            duration_s: 5.0,
            seed: 77,
        });
        let out = run_scenario(&cfg).unwrap();
        let on = out
            .trace
            .records
            .iter()
            .filter(|r| matches!(r, Record::FaultOn { .. }))
            .count();
        let off = out
            .trace
            .records
            .iter()
            .filter(|r| matches!(r, Record::FaultOff { .. }))
            .count();
        assert_eq!(on, 5);
        assert_eq!(off, 5);
    }

    #[test]
    fn comm_fault_containment_at_onset() {
        // At the onset tick the only difference a healthy agent can see is
        // the faulted agent vanishing from its comm view.
        let mut cfg = ScenarioConfig::desk_default();
        cfg.duration_s = 5.0;
        let world_plain = build_world(&cfg, cfg.seed).unwrap();
        let mut world_faulty = world_plain.clone();
        world_faulty.agents[0]
            .active_faults
            .insert(crate::fault::FaultKind::FullCommunication);

        for probe in 1..cfg.swarm.agents {
            let id = AgentId(probe as u32);
            let p_plain = sim::sense(&world_plain, id).unwrap();
            let p_faulty = sim::sense(&world_faulty, id).unwrap();
            let mut p_plain_neighbors = p_plain.neighbors.clone();
            p_plain_neighbors.retain(|n| n.id != AgentId(0));
            assert_eq!(p_plain_neighbors, p_faulty.neighbors);
            assert_eq!(p_plain.obstacles, p_faulty.obstacles);
            assert_eq!(p_plain.boxes, p_faulty.boxes);
            assert_eq!(p_plain.humans, p_faulty.humans);
        }
    }
}
