//! Per-agent finite-state controller.
//!
//! Each tick an agent turns its local perception into an actuation command
//! through a small FSM: explore for work, acquire a box, transport it to a
//! delivery zone, release, repeat. Obstacle avoidance pre-empts task
//! progress, humans are given a wide berth, and commanded speed never
//! exceeds the regulatory caps near humans. `decide` is a pure function of
//! its inputs; the only pseudo-randomness is counter-hashed wander noise.

use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Rect, Vec2};
use crate::sim::{BoxId, HumanRole, Perception};
use crate::util::hash01;

/// Regulatory speed caps near humans, m/s and metres.
pub const TRAINED_SPEED_CAP: f64 = 0.5;
pub const TRAINED_CAP_DISTANCE: f64 = 2.0;
pub const ATTENDEE_SPEED_CAP: f64 = 0.25;
pub const ATTENDEE_CAP_DISTANCE: f64 = 3.0;

/// Behaviour-state of the controller FSM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Explore,
    Acquire,
    Transport,
    Deliver,
    Avoid,
    AwaitIntervention,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Explore => "explore",
            Mode::Acquire => "acquire",
            Mode::Transport => "transport",
            Mode::Deliver => "deliver",
            Mode::Avoid => "avoid",
            Mode::AwaitIntervention => "await_intervention",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "explore" => Mode::Explore,
            "acquire" => Mode::Acquire,
            "transport" => Mode::Transport,
            "deliver" => Mode::Deliver,
            "avoid" => Mode::Avoid,
            "await_intervention" => Mode::AwaitIntervention,
            other => return Err(format!("unknown mode `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub mode: Mode,
    pub target_box: Option<BoxId>,
    /// Tick at which the current mode was entered.
    pub mode_since_tick: u64,
    /// Tick at which an intervention wait began.
    pub await_since_tick: u64,
    /// Stuck detection is suppressed until this tick after a recovery.
    pub cooldown_until_tick: u64,
}

impl Default for ControllerState {
    fn default() -> Self {
        ControllerState {
            mode: Mode::Explore,
            target_box: None,
            mode_since_tick: 0,
            await_since_tick: 0,
            cooldown_until_tick: 0,
        }
    }
}

impl ControllerState {
    fn with_mode(&self, mode: Mode, tick: u64) -> ControllerState {
        let mut s = self.clone();
        if s.mode != mode {
            s.mode_since_tick = tick;
        }
        s.mode = mode;
        s
    }
}

/// Per-tick actuation request produced by the controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuationCommand {
    pub desired_speed: f64,
    pub desired_heading: f64,
    pub request_intervention: bool,
    pub request_attendee_input: bool,
}

impl ActuationCommand {
    pub fn stop(heading: f64) -> Self {
        ActuationCommand {
            desired_speed: 0.0,
            desired_heading: heading,
            request_intervention: false,
            request_attendee_input: false,
        }
    }
}

/// Which controller variant drives the swarm.
///
/// `Uncapped` is the harness's seeded defect: identical task logic with the
/// human speed caps and keep-away removed. It exists so campaigns can prove
/// the monitors catch a non-compliant swarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Compliant,
    Uncapped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorParams {
    pub controller: ControllerKind,
    /// Seed for wander noise; shared with the world layout seed.
    pub noise_seed: u64,
    /// Hard-turn distance to the nearest obstruction surface.
    pub avoid_distance: f64,
    /// Obstruction distance below which speed is capped for braking room.
    pub slow_distance: f64,
    /// Speed cap while an obstruction is within `slow_distance`.
    pub slow_speed: f64,
    /// Speed while executing a hard avoid turn.
    pub avoid_speed: f64,
    /// Shorter reaction thresholds for static loose boxes.
    pub box_avoid_distance: f64,
    pub box_slow_distance: f64,
    pub box_slow_speed: f64,
    /// Surface distance to the current target under which docking speed applies.
    pub docking_distance: f64,
    pub docking_speed: f64,
    /// Preferred minimum clearance to any human.
    pub human_keepaway: f64,
    /// Anticipatory band added to the regulatory cap distances.
    pub human_margin: f64,
    /// Fraction of a regulatory cap actually commanded (stays strictly below).
    pub cap_headroom: f64,
    pub stuck_timeout_s: f64,
    /// How long to wait in AWAIT_INTERVENTION before a self-recovery attempt.
    pub intervention_wait_s: f64,
    /// Stuck detection grace period after leaving AWAIT_INTERVENTION.
    pub stuck_cooldown_s: f64,
    /// Attendee distance band inside which an idle agent may solicit input.
    pub input_request_range: f64,
    /// Carried-box half size, for the feet-in-zone check.
    pub box_half_size: f64,
    /// Seconds without movement before the anti-stall shuffle kicks in;
    /// well below the 10 s stationary definition.
    pub stall_nudge_s: f64,
    pub nudge_speed: f64,
    /// Idle agents hold a staging band this far outside the deposit zones.
    pub staging_inner: f64,
    pub staging_outer: f64,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        BehaviorParams {
            controller: ControllerKind::Compliant,
            noise_seed: 0,
            avoid_distance: 0.3,
            slow_distance: 0.8,
            slow_speed: 0.22,
            avoid_speed: 0.22,
            box_avoid_distance: 0.15,
            box_slow_distance: 0.5,
            box_slow_speed: 0.35,
            docking_distance: 0.8,
            docking_speed: 0.3,
            human_keepaway: 2.3,
            human_margin: 0.5,
            cap_headroom: 0.98,
            stuck_timeout_s: 60.0,
            intervention_wait_s: 30.0,
            stuck_cooldown_s: 20.0,
            input_request_range: 3.0,
            box_half_size: 0.10,
            stall_nudge_s: 4.0,
            nudge_speed: 0.25,
            staging_inner: 0.35,
            staging_outer: 0.9,
        }
    }
}

/// The regulatory speed cap implied by perceived humans: the minimum over
/// v_max, 0.5 m/s if any trained human is within 2 m, and 0.25 m/s if any
/// attendee is within 3 m.
pub fn speed_limit(p: &Perception) -> f64 {
    let mut cap = p.v_max;
    for h in &p.humans {
        match h.role {
            HumanRole::Trained if h.distance <= TRAINED_CAP_DISTANCE => {
                cap = cap.min(TRAINED_SPEED_CAP);
            }
            HumanRole::Attendee if h.distance <= ATTENDEE_CAP_DISTANCE => {
                cap = cap.min(ATTENDEE_SPEED_CAP);
            }
            _ => {}
        }
    }
    cap
}

/// Anticipatory cap: the regulatory caps applied over a widened band and
/// scaled by the headroom factor, so the commanded speed sits strictly below
/// the cap before the regulatory distance is even reached.
fn precautionary_cap(p: &Perception, params: &BehaviorParams) -> f64 {
    let mut cap = p.v_max;
    for h in &p.humans {
        match h.role {
            HumanRole::Trained if h.distance <= TRAINED_CAP_DISTANCE + params.human_margin => {
                cap = cap.min(TRAINED_SPEED_CAP * params.cap_headroom);
            }
            HumanRole::Attendee if h.distance <= ATTENDEE_CAP_DISTANCE + params.human_margin => {
                cap = cap.min(ATTENDEE_SPEED_CAP * params.cap_headroom);
            }
            _ => {}
        }
    }
    cap
}

/// A repulsive source for local steering: a physical body or, for the
/// compliant controller, the keep-away ring around a human.
struct Pressure {
    position: Vec2,
    /// Distance from our centre at which the surface is considered reached.
    surface_offset: f64,
    /// Hard-turn threshold on the surface distance.
    avoid_d: f64,
    /// Slow-down threshold on the surface distance.
    slow_d: f64,
    /// Speed cap applied inside the slow-down band.
    slow_speed: f64,
}

impl Pressure {
    fn surface_distance(&self, from: Vec2) -> f64 {
        from.distance(self.position) - self.surface_offset
    }
}

/// Pressure sources around one agent: other agents, loose boxes (minus the
/// current docking target), humans, and — compliant controller only — the
/// human keep-away rings. Boxes are static and any contact with them happens
/// at docking speeds, so they carry much shorter reaction distances.
fn pressures(
    p: &Perception,
    params: &BehaviorParams,
    exclude_box: Option<BoxId>,
    agent_radius: f64,
) -> Vec<Pressure> {
    let mut out = Vec::new();
    for o in &p.obstacles {
        match o.kind {
            crate::sim::ObstacleKind::Agent => out.push(Pressure {
                position: o.position,
                surface_offset: agent_radius + o.radius,
                avoid_d: params.avoid_distance,
                slow_d: params.slow_distance,
                slow_speed: params.slow_speed,
            }),
            crate::sim::ObstacleKind::LooseBox => {
                // The target box must stay approachable for docking.
                if let Some(tb) = exclude_box {
                    if p.boxes.iter().any(|b| b.id == tb && b.position == o.position) {
                        continue;
                    }
                }
                out.push(Pressure {
                    position: o.position,
                    surface_offset: agent_radius + o.radius,
                    avoid_d: params.box_avoid_distance,
                    slow_d: params.box_slow_distance,
                    slow_speed: params.box_slow_speed,
                });
            }
        }
    }
    for h in &p.humans {
        out.push(Pressure {
            position: h.position,
            surface_offset: agent_radius + 0.2,
            avoid_d: params.avoid_distance,
            slow_d: params.slow_distance,
            slow_speed: params.slow_speed,
        });
        if params.controller == ControllerKind::Compliant {
            // Keep-away ring, measured centre to centre like the
            // proximity requirements themselves.
            out.push(Pressure {
                position: h.position,
                surface_offset: params.human_keepaway,
                avoid_d: 0.15,
                slow_d: 0.45,
                slow_speed: 0.22,
            });
        }
    }
    out
}

/// Free distance along a direction before hitting an arena wall.
fn wall_distance_along(p: &Perception, heading: f64, agent_radius: f64) -> f64 {
    let dir = Vec2::from_heading(heading);
    let mut wall = f64::INFINITY;
    if dir.x > 1e-9 {
        wall = wall.min((p.arena.width - agent_radius - p.me.position.x) / dir.x);
    }
    if dir.x < -1e-9 {
        wall = wall.min((agent_radius - p.me.position.x) / dir.x);
    }
    if dir.y > 1e-9 {
        wall = wall.min((p.arena.height - agent_radius - p.me.position.y) / dir.y);
    }
    if dir.y < -1e-9 {
        wall = wall.min((agent_radius - p.me.position.y) / dir.y);
    }
    wall.max(0.0)
}

/// Escape heading for a hard avoid: score eight candidate directions by the
/// frontal pressure they would face (plus wall proximity), with a mild
/// preference for the task heading, and take the calmest.
fn choose_escape_heading(
    p: &Perception,
    prs: &[Pressure],
    task_heading: f64,
    agent_radius: f64,
) -> (f64, f64) {
    let me = p.me.position;
    let mut best = (f64::INFINITY, p.me.heading);
    for k in 0..8 {
        let h = wrap_angle(p.me.heading + k as f64 * std::f64::consts::FRAC_PI_4);
        let hv = Vec2::from_heading(h);
        let mut score = 0.0;
        for pr in prs {
            let sd = pr.surface_distance(me);
            let reach = pr.avoid_d + pr.slow_d;
            let weight = (1.0 - sd / reach).max(0.0);
            let toward = hv.dot((pr.position - me).normalized()).max(0.0);
            score += weight * toward;
        }
        let wd = wall_distance_along(p, h, agent_radius);
        score += (1.0 - wd / 1.2).max(0.0);
        score -= 0.25 * (wrap_angle(h - task_heading)).cos();
        if score < best.0 - 1e-12 {
            best = (score, h);
        }
    }
    (best.1, best.0)
}

/// Nearest point of `zones` reachable with an inset margin, as (target,
/// distance). With `slot` set, the in-zone target is that fixed fractional
/// point instead of the nearest edge point, which spreads concurrent
/// arrivals across the zone. `None` when no zone can absorb the inset.
fn nearest_zone_target(
    zones: &[Rect],
    pos: Vec2,
    inset: f64,
    slot: Option<(f64, f64)>,
) -> Option<(Vec2, f64)> {
    let mut best: Option<(Vec2, f64)> = None;
    for z in zones {
        if z.width() <= 2.0 * inset || z.height() <= 2.0 * inset {
            continue;
        }
        let target = match slot {
            Some((fx, fy)) => Vec2::new(
                z.x0 + inset + fx * (z.width() - 2.0 * inset),
                z.y0 + inset + fy * (z.height() - 2.0 * inset),
            ),
            None => Vec2::new(
                pos.x.clamp(z.x0 + inset, z.x1 - inset),
                pos.y.clamp(z.y0 + inset, z.y1 - inset),
            ),
        };
        let d = pos.distance(target);
        if best.map(|(_, bd)| d < bd).unwrap_or(true) {
            best = Some((target, d));
        }
    }
    best
}

fn feet_inside_some_zone(zones: &[Rect], pos: Vec2, half_size: f64) -> bool {
    let feet = [
        pos + Vec2::new(-half_size, -half_size),
        pos + Vec2::new(half_size, -half_size),
        pos + Vec2::new(half_size, half_size),
        pos + Vec2::new(-half_size, half_size),
    ];
    zones.iter().any(|z| feet.iter().all(|f| z.contains(*f)))
}

/// Pure controller step: perception in, command and successor state out.
///
/// Degenerate perception yields a stop command. Avoidance has priority over
/// task progress; `request_intervention` is raised only while the state is
/// AWAIT_INTERVENTION.
pub fn decide(
    p: &Perception,
    state: &ControllerState,
    params: &BehaviorParams,
) -> (ActuationCommand, ControllerState) {
    if !p.me.position.is_finite() || !p.me.heading.is_finite() {
        return (ActuationCommand::stop(0.0), state.clone());
    }
    let tick = p.tick;
    let agent_key = p.me.id.0 as u64;
    let agent_radius = 0.15;

    // Intervention handling comes first: a stuck agent stops and asks for a
    // trained human until serviced or a self-recovery retry.
    let seconds_since_move = (tick.saturating_sub(p.me.last_move_tick)) as f64 * p.dt;
    if state.mode == Mode::AwaitIntervention {
        let waited = (tick.saturating_sub(state.await_since_tick)) as f64 * p.dt;
        let serviced = p
            .humans
            .iter()
            .any(|h| h.role == HumanRole::Trained && h.distance <= 2.0);
        if serviced || waited >= params.intervention_wait_s {
            let mut s = state.with_mode(Mode::Explore, tick);
            s.target_box = None;
            s.cooldown_until_tick = tick + (params.stuck_cooldown_s / p.dt) as u64;
            let escape = hash01(params.noise_seed, agent_key, tick) * std::f64::consts::TAU;
            let cmd = ActuationCommand {
                desired_speed: task_speed_cap(p, params, f64::INFINITY),
                desired_heading: wrap_angle(escape),
                request_intervention: false,
                request_attendee_input: false,
            };
            return (cmd, s);
        }
        let mut cmd = ActuationCommand::stop(p.me.heading);
        cmd.request_intervention = true;
        return (cmd, state.clone());
    }
    if seconds_since_move > params.stuck_timeout_s && tick >= state.cooldown_until_tick {
        let mut s = state.with_mode(Mode::AwaitIntervention, tick);
        s.await_since_tick = tick;
        let mut cmd = ActuationCommand::stop(p.me.heading);
        cmd.request_intervention = true;
        return (cmd, s);
    }

    // Task selection.
    let carried = p.me.carried_box;
    let mut s = state.clone();
    let mut target_heading;
    let mut target_speed = p.v_max;
    let mut request_input = false;

    if let Some(_box_id) = carried {
        // Transport toward the nearest point where all four feet fit in a
        // delivery zone; stop to release once they do.
        let inset = params.box_half_size + 0.05;
        if feet_inside_some_zone(&p.arena.delivery_zones, p.me.position, params.box_half_size) {
            s = s.with_mode(Mode::Deliver, tick);
            s.target_box = None;
            let cmd = ActuationCommand::stop(p.me.heading);
            return (cmd, s);
        }
        s = s.with_mode(Mode::Transport, tick);
        let slot = (
            hash01(params.noise_seed, agent_key.wrapping_add(211), 0),
            hash01(params.noise_seed, agent_key.wrapping_add(409), 0),
        );
        match nearest_zone_target(&p.arena.delivery_zones, p.me.position, inset, Some(slot)) {
            Some((target, dist)) => {
                target_heading = (target - p.me.position).angle();
                if dist < params.docking_distance {
                    target_speed = target_speed.min(params.docking_speed);
                }
            }
            None => {
                // No usable delivery zone: hold position.
                return (ActuationCommand::stop(p.me.heading), s);
            }
        }
    } else {
        if s.mode == Mode::Deliver {
            // Just released: head away from the zone and resume exploring.
            s = s.with_mode(Mode::Explore, tick);
            s.target_box = None;
        }
        // Collectible boxes: loose, not delivery-pending, not already in a
        // delivery zone.
        let collectible: Vec<_> = p
            .boxes
            .iter()
            .filter(|b| !b.delivery_pending && !b.in_delivery_zone)
            .collect();
        // Claim discipline: only chase a box when no other sensed agent is
        // meaningfully closer to it. Needs vision only, no communication,
        // and keeps the swarm from mobbing the same box.
        let claimable = |b: &crate::sim::BoxView| {
            let my_d = b.position.distance(p.me.position);
            !p.obstacles.iter().any(|o| {
                matches!(o.kind, crate::sim::ObstacleKind::Agent)
                    && o.position.distance(b.position) + 0.05 < my_d
            })
        };
        let current_valid = s
            .target_box
            .map(|t| collectible.iter().any(|b| b.id == t))
            .unwrap_or(false);
        if !current_valid {
            // Nearest claimable collectible, ties broken by lowest box id.
            s.target_box = collectible
                .iter()
                .filter(|b| claimable(b))
                .map(|b| {
                    let d = b.position.distance(p.me.position);
                    (d, b.id)
                })
                .min_by(|(da, ia), (db, ib)| {
                    da.partial_cmp(db)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(ia.cmp(ib))
                })
                .map(|(_, id)| id);
        }
        if let Some(target) = s.target_box {
            let b = collectible.iter().find(|b| b.id == target).unwrap();
            s = s.with_mode(Mode::Acquire, tick);
            target_heading = (b.position - p.me.position).angle();
            let surface = b.position.distance(p.me.position) - agent_radius;
            if surface < params.docking_distance {
                target_speed = target_speed.min(params.docking_speed);
            }
        } else {
            // Explore: stage near (not inside) the closest deposit zone and
            // wait for collectible work, keeping the zones clear for boxes
            // and active carriers.
            s = s.with_mode(Mode::Explore, tick);
            let zone_d = p
                .arena
                .deposit_zones
                .iter()
                .map(|z| z.distance_to(p.me.position))
                .fold(f64::INFINITY, f64::min);
            let in_deposit = zone_d == 0.0;
            let bucket = tick / 20;
            let noise = (hash01(params.noise_seed, agent_key, bucket) - 0.5) * 1.6;
            let toward_zone =
                nearest_zone_target(&p.arena.deposit_zones, p.me.position, agent_radius, None);
            // Wander headings are filtered through the pressure field so an
            // idle agent never drifts toward a human ring or a wall.
            let drift_prs = pressures(p, params, None, agent_radius);
            match toward_zone {
                Some((target, _)) if zone_d > params.staging_outer => {
                    target_heading = (target - p.me.position).angle() + noise;
                }
                Some((target, _)) if in_deposit || zone_d < params.staging_inner => {
                    // Back out of the zone to the staging band.
                    let out = wrap_angle((target - p.me.position).angle() + std::f64::consts::PI);
                    target_heading = choose_escape_heading(p, &drift_prs, out, agent_radius).0;
                    target_speed = target_speed.min(0.5 * p.v_max);
                }
                _ => {
                    // Inside the staging band: drift along slowly.
                    let whim = hash01(params.noise_seed, agent_key.wrapping_add(97), bucket)
                        * std::f64::consts::TAU;
                    target_heading = choose_escape_heading(p, &drift_prs, whim, agent_radius).0;
                    target_speed = target_speed.min(0.4 * p.v_max);
                }
            }
            // Solicit an attendee deposit when staging near an attendee in
            // the service band, deferring to any neighbour already
            // requesting or with a lower id in the same situation.
            if params.controller == ControllerKind::Compliant && in_deposit {
                if let Some(att) = p
                    .humans
                    .iter()
                    .filter(|h| h.role == HumanRole::Attendee)
                    .min_by(|a, b| a.distance.partial_cmp(&b.distance).unwrap())
                {
                    let in_band = att.distance >= params.human_keepaway
                        && att.distance <= params.input_request_range;
                    let neighbour_requesting =
                        p.neighbors.iter().any(|n| n.requesting_attendee_input);
                    let lower_peer = p.neighbors.iter().any(|n| {
                        n.id.0 < p.me.id.0
                            && n.mode == Mode::Explore
                            && n.position.distance(att.position) <= params.input_request_range
                    });
                    if in_band && !neighbour_requesting && !lower_peer {
                        request_input = true;
                    }
                }
            }
        }
    }

    // Local steering: obstacle avoidance pre-empts task progress. An
    // obstruction only matters when it lies in the frontal cone of the
    // intended direction of travel.
    let mode_before_avoid = s.mode;
    let prs = pressures(
        p,
        params,
        if s.mode == Mode::Acquire {
            s.target_box
        } else {
            None
        },
        agent_radius,
    );
    let cone = 100f64.to_radians();
    let mut hard = false;
    let mut slow_cap = f64::INFINITY;
    for pr in &prs {
        let sd = pr.surface_distance(p.me.position);
        let bearing = wrap_angle((pr.position - p.me.position).angle() - target_heading);
        if bearing.abs() > cone {
            continue;
        }
        if sd < pr.avoid_d {
            hard = true;
        } else if sd < pr.slow_d {
            slow_cap = slow_cap.min(pr.slow_speed);
        }
    }
    let wall_ahead = wall_distance_along(p, target_heading, agent_radius);
    if wall_ahead < params.avoid_distance {
        hard = true;
    } else if wall_ahead < params.slow_distance {
        slow_cap = slow_cap.min(params.slow_speed);
    }
    if hard {
        s = s.with_mode(Mode::Avoid, tick);
        let (escape, congestion) = choose_escape_heading(p, &prs, target_heading, agent_radius);
        target_heading = escape;
        // Boxed in on all sides: stand and wait for the jam to drain rather
        // than grind against neighbours.
        target_speed = if congestion > 1.5 {
            0.0
        } else {
            target_speed.min(params.avoid_speed)
        };
    } else {
        target_speed = target_speed.min(slow_cap);
        if s.mode == Mode::Avoid {
            s = s.with_mode(mode_before_avoid, tick);
        }
    }

    // Anti-stall shuffle: an agent that has not displaced for a while forces
    // a move in a low-pressure direction (wobbled so repeated attempts probe
    // different gaps), long before the 10 s stationary definition bites.
    if seconds_since_move > params.stall_nudge_s {
        let (escape, _) = choose_escape_heading(p, &prs, target_heading, agent_radius);
        // The probe spread widens the longer the stall lasts, so a bad
        // escape estimate cannot pin an agent: by ~10 s the whole circle
        // has been sampled.
        let stalled_over = seconds_since_move - params.stall_nudge_s;
        let spread = (std::f64::consts::FRAC_PI_4
            + stalled_over * 0.5 * std::f64::consts::FRAC_PI_2)
            .min(std::f64::consts::PI);
        let wobble =
            (hash01(params.noise_seed, agent_key.wrapping_add(31), tick / 5) - 0.5) * 2.0 * spread;
        target_heading = wrap_angle(escape + wobble);
        target_speed = target_speed.max(params.nudge_speed);
    }

    let final_speed = task_speed_cap(p, params, target_speed);
    let cmd = ActuationCommand {
        desired_speed: final_speed,
        desired_heading: wrap_angle(target_heading),
        request_intervention: false,
        request_attendee_input: request_input,
    };
    (cmd, s)
}

/// Clamp a requested task speed by v_max and, for the compliant controller,
/// by the precautionary human caps. The result never exceeds
/// [`speed_limit`] for the compliant controller.
fn task_speed_cap(p: &Perception, params: &BehaviorParams, requested: f64) -> f64 {
    let base = requested.min(p.v_max).max(0.0);
    match params.controller {
        ControllerKind::Compliant => base.min(precautionary_cap(p, params)),
        ControllerKind::Uncapped => base,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{
        AgentId, ArenaView, BoxView, HumanId, HumanView, ObstacleView, SelfView,
    };

    fn arena_view() -> ArenaView {
        ArenaView {
            width: 4.0,
            height: 4.0,
            delivery_zones: vec![Rect::new(0.0, 2.8, 1.2, 4.0)],
            deposit_zones: vec![Rect::new(0.0, 0.0, 1.2, 1.2)],
        }
    }

    fn empty_perception(pos: Vec2, heading: f64) -> Perception {
        Perception {
            tick: 100,
            dt: 0.1,
            v_max: 1.0,
            me: SelfView {
                id: AgentId(0),
                position: pos,
                heading,
                speed: 0.5,
                carried_box: None,
                last_move_tick: 100,
            },
            boxes: vec![],
            obstacles: vec![],
            humans: vec![],
            neighbors: vec![],
            arena: arena_view(),
        }
    }

    fn human(role: HumanRole, distance: f64, from: Vec2) -> HumanView {
        HumanView {
            id: HumanId(0),
            role,
            position: from + Vec2::new(distance, 0.0),
            distance,
        }
    }

    #[test]
    fn speed_limit_trained_within_two_metres() {
        let mut p = empty_perception(Vec2::new(2.0, 2.0), 0.0);
        p.humans
            .push(human(HumanRole::Trained, 1.9, p.me.position));
        assert_eq!(speed_limit(&p), 0.5);
    }

    #[test]
    fn speed_limit_unconstrained_without_humans() {
        let p = empty_perception(Vec2::new(2.0, 2.0), 0.0);
        assert_eq!(speed_limit(&p), 1.0);
    }

    #[test]
    fn speed_limit_takes_minimum_of_applicable_caps() {
        let mut p = empty_perception(Vec2::new(2.0, 2.0), 0.0);
        p.humans
            .push(human(HumanRole::Trained, 1.5, p.me.position));
        p.humans.push(HumanView {
            id: HumanId(1),
            role: HumanRole::Attendee,
            position: p.me.position + Vec2::new(0.0, 2.8),
            distance: 2.8,
        });
        assert_eq!(speed_limit(&p), 0.25);
    }

    #[test]
    fn explore_acquires_visible_box_in_deposit_zone() {
        let mut p = empty_perception(Vec2::new(2.0, 2.0), 0.0);
        p.boxes.push(BoxView {
            id: BoxId(3),
            position: Vec2::new(0.8, 0.8),
            delivery_pending: false,
            in_delivery_zone: false,
            in_deposit_zone: true,
        });
        let (cmd, s) = decide(&p, &ControllerState::default(), &BehaviorParams::default());
        assert_eq!(s.mode, Mode::Acquire);
        assert_eq!(s.target_box, Some(BoxId(3)));
        let expected = (Vec2::new(0.8, 0.8) - p.me.position).angle();
        assert!((wrap_angle(cmd.desired_heading - expected)).abs() < 1e-9);
    }

    #[test]
    fn equidistant_boxes_tie_break_on_lowest_id() {
        let mut p = empty_perception(Vec2::new(2.0, 2.0), 0.0);
        for id in [7u32, 2u32] {
            p.boxes.push(BoxView {
                id: BoxId(id),
                position: Vec2::new(2.0 + if id == 7 { 1.0 } else { -1.0 }, 2.0),
                delivery_pending: false,
                in_delivery_zone: false,
                in_deposit_zone: false,
            });
        }
        let (_, s) = decide(&p, &ControllerState::default(), &BehaviorParams::default());
        assert_eq!(s.target_box, Some(BoxId(2)));
    }

    #[test]
    fn obstacle_dead_ahead_triggers_avoid() {
        // Idle agent at (2, 2) heads for the deposit zone (down-left); an
        // obstacle dead ahead on that path within 0.5 m forces an avoid.
        let mut p = empty_perception(Vec2::new(2.0, 2.0), -2.356);
        let task_dir = (Vec2::new(1.05, 1.05) - p.me.position).normalized();
        let obstacle_pos = p.me.position + task_dir.scale(0.4);
        p.obstacles.push(ObstacleView {
            position: obstacle_pos,
            radius: 0.15,
            kind: crate::sim::ObstacleKind::Agent,
        });
        let (cmd, s) = decide(&p, &ControllerState::default(), &BehaviorParams::default());
        assert_eq!(s.mode, Mode::Avoid);
        assert!(cmd.desired_speed <= BehaviorParams::default().avoid_speed + 1e-12);
        let away = wrap_angle(cmd.desired_heading - task_dir.angle()).abs();
        assert!(away > 0.5, "heading turned away from the obstruction: {away}");
    }

    #[test]
    fn carried_box_with_feet_in_zone_enters_deliver() {
        let mut p = empty_perception(Vec2::new(0.6, 3.4), 0.0);
        p.me.carried_box = Some(BoxId(0));
        let (cmd, s) = decide(&p, &ControllerState::default(), &BehaviorParams::default());
        assert_eq!(s.mode, Mode::Deliver);
        assert_eq!(cmd.desired_speed, 0.0);
    }

    #[test]
    fn carried_box_outside_zone_transports() {
        let mut p = empty_perception(Vec2::new(2.5, 1.0), 0.0);
        p.me.carried_box = Some(BoxId(0));
        let (_, s) = decide(&p, &ControllerState::default(), &BehaviorParams::default());
        assert_eq!(s.mode, Mode::Transport);
    }

    #[test]
    fn decide_is_stateless() {
        let mut p = empty_perception(Vec2::new(1.3, 2.2), 0.7);
        p.humans
            .push(human(HumanRole::Attendee, 2.4, p.me.position));
        p.obstacles.push(ObstacleView {
            position: Vec2::new(1.9, 2.2),
            radius: 0.15,
            kind: crate::sim::ObstacleKind::Agent,
        });
        let s = ControllerState::default();
        let params = BehaviorParams::default();
        assert_eq!(decide(&p, &s, &params), decide(&p, &s, &params));
    }

    #[test]
    fn stuck_agent_enters_await_and_requests_intervention() {
        let mut p = empty_perception(Vec2::new(2.0, 2.0), 0.0);
        p.tick = 10_000;
        p.me.last_move_tick = 1_000; // 900 s without movement
        let (cmd, s) = decide(&p, &ControllerState::default(), &BehaviorParams::default());
        assert_eq!(s.mode, Mode::AwaitIntervention);
        assert!(cmd.request_intervention);
        assert_eq!(cmd.desired_speed, 0.0);
    }

    #[test]
    fn trained_human_nearby_services_await() {
        let mut p = empty_perception(Vec2::new(2.0, 2.0), 0.0);
        p.tick = 10_000;
        p.me.last_move_tick = 1_000;
        p.humans
            .push(human(HumanRole::Trained, 1.5, p.me.position));
        let mut s = ControllerState::default();
        s.mode = Mode::AwaitIntervention;
        s.await_since_tick = 9_990;
        let (cmd, s2) = decide(&p, &s, &BehaviorParams::default());
        assert_eq!(s2.mode, Mode::Explore);
        assert!(!cmd.request_intervention);
        assert!(s2.cooldown_until_tick > p.tick);
    }

    #[test]
    fn intervention_flag_only_from_await_state() {
        // Randomized sweep: whenever the command requests intervention, the
        // successor state is AWAIT_INTERVENTION.
        let params = BehaviorParams::default();
        for i in 0..2000u64 {
            let mut p = empty_perception(
                Vec2::new(
                    0.2 + 3.6 * hash01(1, i, 0),
                    0.2 + 3.6 * hash01(2, i, 0),
                ),
                hash01(3, i, 0) * 6.28 - 3.14,
            );
            p.tick = (hash01(4, i, 0) * 20_000.0) as u64;
            p.me.last_move_tick = (p.tick as f64 * hash01(5, i, 0)) as u64;
            let mut s = ControllerState::default();
            if hash01(6, i, 0) < 0.3 {
                s.mode = Mode::AwaitIntervention;
                s.await_since_tick = p.tick.saturating_sub((hash01(7, i, 0) * 400.0) as u64);
            }
            let (cmd, s2) = decide(&p, &s, &params);
            if cmd.request_intervention {
                assert_eq!(s2.mode, Mode::AwaitIntervention);
            }
        }
    }

    #[test]
    fn compliant_commands_never_exceed_speed_limit_sample() {
        let params = BehaviorParams::default();
        for i in 0..2000u64 {
            let me = Vec2::new(0.2 + 3.6 * hash01(11, i, 0), 0.2 + 3.6 * hash01(12, i, 1));
            let mut p = empty_perception(me, hash01(13, i, 2) * 6.28 - 3.14);
            let n_humans = (hash01(14, i, 3) * 3.0) as usize;
            for k in 0..n_humans {
                let d = 0.3 + 4.0 * hash01(15, i, k as u64);
                let role = if hash01(16, i, k as u64) < 0.5 {
                    HumanRole::Trained
                } else {
                    HumanRole::Attendee
                };
                p.humans.push(HumanView {
                    id: HumanId(k as u32),
                    role,
                    position: me + Vec2::from_heading(hash01(17, i, k as u64) * 6.28).scale(d),
                    distance: d,
                });
            }
            let (cmd, _) = decide(&p, &ControllerState::default(), &params);
            assert!(
                cmd.desired_speed <= speed_limit(&p) + 1e-12,
                "commanded {} > cap {}",
                cmd.desired_speed,
                speed_limit(&p)
            );
        }
    }
}
