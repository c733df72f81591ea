//! Deterministic discrete-time 2D simulator of the cloakroom floor.
//!
//! Agents are discs, boxes are squares (feet at the corners) approximated by
//! their circumscribed disc for contact purposes, humans are discs. Each
//! `step` advances the world by one fixed `dt`: explicit Euler integration
//! under an acceleration cap, carried-box transport, contact detection with
//! per-episode collision events, overlap removal, and delivery bookkeeping.
//! Everything is a pure function of (world, commands, seed); two runs with
//! identical inputs produce identical event streams.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{ActuationCommand, ControllerState, Mode};
use crate::fault::FaultKind;
use crate::geom::{wrap_angle, Rect, Vec2};
use crate::util::{hash01, hash_u64};

/// Communication range between agents and to operator terminals, metres.
pub const COMM_RANGE_M: f64 = 5.0;
/// Relative impact speed above which a collision is classified high-impact.
pub const HIGH_IMPACT_THRESHOLD_M_S: f64 = 0.5;
/// Displacement below which an agent is considered not to have moved in a tick.
pub const EPS_MOVE_M: f64 = 0.01;
/// Hysteresis margin before a contact episode is considered over, metres.
const CONTACT_RELEASE_MARGIN_M: f64 = 0.05;
/// Post-separation clearance inserted when removing overlap, metres.
const SEPARATION_CLEARANCE_M: f64 = 0.002;

macro_rules! entity_id {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        pub struct $name(pub u32);

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}{}", $prefix, self.0)
            }
        }
    };
}

entity_id!(AgentId, "a");
entity_id!(BoxId, "b");
entity_id!(HumanId, "h");

/// Any entity participating in contact detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityId {
    Agent(AgentId),
    Box(BoxId),
    Human(HumanId),
}

impl std::fmt::Display for EntityId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EntityId::Agent(a) => a.fmt(f),
            EntityId::Box(b) => b.fmt(f),
            EntityId::Human(h) => h.fmt(f),
        }
    }
}

impl std::str::FromStr for EntityId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (prefix, rest) = s.split_at(1.min(s.len()));
        let n: u32 = rest.parse().map_err(|_| format!("bad entity id `{s}`"))?;
        match prefix {
            "a" => Ok(EntityId::Agent(AgentId(n))),
            "b" => Ok(EntityId::Box(BoxId(n))),
            "h" => Ok(EntityId::Human(HumanId(n))),
            _ => Err(format!("bad entity id `{s}`")),
        }
    }
}

/// Canonically ordered pair for contact-episode tracking.
pub fn pair_key(a: EntityId, b: EntityId) -> (EntityId, EntityId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Floor {
    Dry,
    Wet,
}

/// The operating arena and its environmental envelope attributes.
///
/// Incline, floor state, and step height are envelope metadata checked
/// against the environmental requirements; they are not physically modeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArenaConfig {
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub incline_deg: f64,
    #[serde(default = "default_floor")]
    pub floor: Floor,
    #[serde(default = "default_step_height")]
    pub max_step_height_cm: f64,
    pub delivery_zones: Vec<Rect>,
    pub deposit_zones: Vec<Rect>,
    #[serde(default = "default_true")]
    pub humans_have_locators: bool,
}

fn default_floor() -> Floor {
    Floor::Dry
}
fn default_step_height() -> f64 {
    0.4
}
fn default_true() -> bool {
    true
}

impl ArenaConfig {
    pub fn bounds(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width, self.height)
    }

    pub fn area_m2(&self) -> f64 {
        self.width * self.height
    }

    pub fn in_delivery_zone(&self, p: Vec2) -> bool {
        self.delivery_zones.iter().any(|z| z.contains(p))
    }

    pub fn in_deposit_zone(&self, p: Vec2) -> bool {
        self.deposit_zones.iter().any(|z| z.contains(p))
    }
}

/// Physical and accounting parameters shared by every entity in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub v_max: f64,
    /// Acceleration cap, m/s^2; applied symmetrically to speed-up and braking.
    pub accel_limit: f64,
    pub agent_radius: f64,
    pub agent_mass_kg: f64,
    pub box_half_size: f64,
    pub human_radius: f64,
    /// Vision radius for obstacle and box sensing.
    pub sense_radius: f64,
    /// Locator-device range at which humans are sensed with role and distance.
    pub human_range: f64,
    pub human_wander_speed: f64,
    pub respawn_delay_ticks: u64,
    /// Flat per-tick growth of the on-board storage accounting counter.
    pub stored_bytes_per_tick: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            v_max: 1.0,
            accel_limit: 3.9,
            agent_radius: 0.15,
            agent_mass_kg: 2.9,
            box_half_size: 0.10,
            human_radius: 0.2,
            sense_radius: 3.0,
            human_range: COMM_RANGE_M,
            human_wander_speed: 0.0,
            respawn_delay_ticks: 200,
            stored_bytes_per_tick: 320,
        }
    }
}

impl SimParams {
    pub fn box_radius(&self) -> f64 {
        self.box_half_size * std::f64::consts::SQRT_2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub carried_box: Option<BoxId>,
    pub controller_state: ControllerState,
    pub last_move_tick: u64,
    pub active_faults: BTreeSet<FaultKind>,
    /// On-board storage accounting, bytes. Tracked, never enforced.
    pub stored_bytes: u64,
    pub requesting_intervention: bool,
    pub requesting_attendee_input: bool,
}

impl AgentState {
    pub fn at(id: AgentId, position: Vec2, heading: f64) -> Self {
        AgentState {
            id,
            position,
            heading,
            speed: 0.0,
            carried_box: None,
            controller_state: ControllerState::default(),
            last_move_tick: 0,
            active_faults: BTreeSet::new(),
            stored_bytes: 0,
            requesting_intervention: false,
            requesting_attendee_input: false,
        }
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_heading(self.heading).scale(self.speed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxState {
    pub id: BoxId,
    pub position: Vec2,
    /// Offsets of the four feet from the centre; always the square's corners.
    pub foot_offsets: [Vec2; 4],
    pub weight_kg: f64,
    pub carried_by: Option<AgentId>,
    /// Released inside a delivery zone, waiting for agent contact to clear.
    pub delivery_pending: bool,
    pub picked_tick: Option<u64>,
    pub last_carrier: Option<AgentId>,
    pub respawn_at: Option<u64>,
}

impl BoxState {
    pub fn at(id: BoxId, position: Vec2, half_size: f64, weight_kg: f64) -> Self {
        BoxState {
            id,
            position,
            foot_offsets: [
                Vec2::new(-half_size, -half_size),
                Vec2::new(half_size, -half_size),
                Vec2::new(half_size, half_size),
                Vec2::new(-half_size, half_size),
            ],
            weight_kg,
            carried_by: None,
            delivery_pending: false,
            picked_tick: None,
            last_carrier: None,
            respawn_at: None,
        }
    }

    pub fn feet(&self) -> [Vec2; 4] {
        [
            self.position + self.foot_offsets[0],
            self.position + self.foot_offsets[1],
            self.position + self.foot_offsets[2],
            self.position + self.foot_offsets[3],
        ]
    }

    /// All four feet inside a single delivery zone.
    pub fn feet_in_delivery_zone(&self, arena: &ArenaConfig) -> bool {
        arena
            .delivery_zones
            .iter()
            .any(|z| self.feet().iter().all(|f| z.contains(*f)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanRole {
    /// A worker who has received relevant training.
    Trained,
    /// A member of the public.
    Attendee,
}

impl std::fmt::Display for HumanRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HumanRole::Trained => f.write_str("trained"),
            HumanRole::Attendee => f.write_str("attendee"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanState {
    pub id: HumanId,
    pub role: HumanRole,
    pub position: Vec2,
    pub has_locator: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactClass {
    Low,
    High,
}

/// One newly-begun contact episode between two entities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub tick: u64,
    pub a: EntityId,
    pub b: EntityId,
    /// Magnitude of the relative velocity at contact, m/s.
    pub impact_speed: f64,
    pub classification: ImpactClass,
}

impl CollisionEvent {
    pub fn classify(impact_speed: f64) -> ImpactClass {
        if impact_speed > HIGH_IMPACT_THRESHOLD_M_S {
            ImpactClass::High
        } else {
            ImpactClass::Low
        }
    }
}

/// Events produced by a single step, in deterministic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SimEvent {
    Collision(CollisionEvent),
    Pickup {
        tick: u64,
        agent: AgentId,
        box_id: BoxId,
    },
    Release {
        tick: u64,
        agent: AgentId,
        box_id: BoxId,
        feet_in_zone: bool,
    },
    Delivery {
        tick: u64,
        box_id: BoxId,
        completion_ticks: Option<u64>,
    },
    Respawn {
        tick: u64,
        box_id: BoxId,
        position: Vec2,
    },
    FaultOn {
        tick: u64,
        agent: AgentId,
        kind: FaultKind,
    },
    FaultOff {
        tick: u64,
        agent: AgentId,
        kind: FaultKind,
    },
    EmergencyStop {
        tick: u64,
    },
}

/// Full simulation state at a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u64,
    pub dt: f64,
    pub arena: ArenaConfig,
    pub params: SimParams,
    pub agents: Vec<AgentState>,
    pub boxes: Vec<BoxState>,
    pub humans: Vec<HumanState>,
    pub rng_seed: u64,
    /// Contact episodes currently in progress, canonical pair keys.
    pub active_contacts: BTreeSet<(EntityId, EntityId)>,
    /// Events emitted by the step that produced this state.
    pub event_log: Vec<SimEvent>,
}

impl WorldState {
    pub fn new(
        arena: ArenaConfig,
        params: SimParams,
        dt: f64,
        rng_seed: u64,
        agents: Vec<AgentState>,
        boxes: Vec<BoxState>,
        humans: Vec<HumanState>,
    ) -> Self {
        WorldState {
            tick: 0,
            dt,
            arena,
            params,
            agents,
            boxes,
            humans,
            rng_seed,
            active_contacts: BTreeSet::new(),
            event_log: Vec::new(),
        }
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentState> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn agent_mut(&mut self, id: AgentId) -> Option<&mut AgentState> {
        self.agents.iter_mut().find(|a| a.id == id)
    }

    pub fn box_state(&self, id: BoxId) -> Option<&BoxState> {
        self.boxes.iter().find(|b| b.id == id)
    }

    fn radius_of(&self, e: EntityId) -> f64 {
        match e {
            EntityId::Agent(_) => self.params.agent_radius,
            EntityId::Box(_) => self.params.box_radius(),
            EntityId::Human(_) => self.params.human_radius,
        }
    }

    fn position_of(&self, e: EntityId) -> Option<Vec2> {
        match e {
            EntityId::Agent(a) => self.agent(a).map(|x| x.position),
            EntityId::Box(b) => self.box_state(b).map(|x| x.position),
            EntityId::Human(h) => self.humans.iter().find(|x| x.id == h).map(|x| x.position),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("command for unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("no command supplied for agent {0}")]
    MissingCommand(AgentId),
    #[error("non-finite command value for agent {0}")]
    NonFiniteCommand(AgentId),
    #[error("unknown agent id {0}")]
    NoSuchAgent(AgentId),
}

/// Entities eligible for contact checks: agents always; humans always;
/// boxes only while uncarried. The pair carrying-agent/carried-box is the
/// transport mechanism, not a collision.
fn collidable_pairs(world: &WorldState) -> Vec<(EntityId, EntityId)> {
    let mut ids: Vec<EntityId> = Vec::new();
    for a in &world.agents {
        ids.push(EntityId::Agent(a.id));
    }
    for b in &world.boxes {
        if b.carried_by.is_none() {
            ids.push(EntityId::Box(b.id));
        }
    }
    for h in &world.humans {
        ids.push(EntityId::Human(h.id));
    }
    let mut pairs = Vec::new();
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len() {
            let (a, b) = pair_key(ids[i], ids[j]);
            // Box-box and human-human contacts are not tracked: boxes are
            // static while uncarried and humans are environment.
            let agent_involved =
                matches!(a, EntityId::Agent(_)) || matches!(b, EntityId::Agent(_));
            if agent_involved {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

fn contact_distance(world: &WorldState, a: EntityId, b: EntityId) -> f64 {
    world.radius_of(a) + world.radius_of(b)
}

/// Pairs currently overlapping (distance strictly below contact distance).
fn overlapping_pairs(world: &WorldState) -> Vec<(EntityId, EntityId)> {
    collidable_pairs(world)
        .into_iter()
        .filter(|&(a, b)| {
            let (pa, pb) = (world.position_of(a).unwrap(), world.position_of(b).unwrap());
            pa.distance(pb) < contact_distance(world, a, b)
        })
        .collect()
}

fn velocity_of(world: &WorldState, e: EntityId, human_velocities: &BTreeMap<HumanId, Vec2>) -> Vec2 {
    match e {
        EntityId::Agent(a) => world.agent(a).map(|x| x.velocity()).unwrap_or(Vec2::ZERO),
        EntityId::Box(_) => Vec2::ZERO,
        EntityId::Human(h) => human_velocities.get(&h).copied().unwrap_or(Vec2::ZERO),
    }
}

/// Newly-begun contact episodes for the world as given, without mutating it.
///
/// Contact persisting across ticks is not re-counted: a pair already in
/// `active_contacts` produces no event until the episode ends (distance
/// exceeding the contact distance plus a release margin) and begins again.
pub fn detect_collisions(world: &WorldState) -> Vec<CollisionEvent> {
    let human_velocities = BTreeMap::new();
    overlapping_pairs(world)
        .into_iter()
        .filter(|p| !world.active_contacts.contains(p))
        .map(|(a, b)| {
            let rel = velocity_of(world, a, &human_velocities)
                - velocity_of(world, b, &human_velocities);
            let impact_speed = rel.length();
            CollisionEvent {
                tick: world.tick,
                a,
                b,
                impact_speed,
                classification: CollisionEvent::classify(impact_speed),
            }
        })
        .collect()
}

/// All agents within communication range of `agent_id`, excluding itself.
/// A full-communication fault on either side severs the link.
pub fn neighborhood(world: &WorldState, agent_id: AgentId) -> Result<Vec<AgentId>, SimError> {
    let me = world
        .agent(agent_id)
        .ok_or(SimError::NoSuchAgent(agent_id))?;
    if me.active_faults.contains(&FaultKind::FullCommunication) {
        return Ok(Vec::new());
    }
    Ok(world
        .agents
        .iter()
        .filter(|a| {
            a.id != agent_id
                && !a.active_faults.contains(&FaultKind::FullCommunication)
                && a.position.distance(me.position) <= COMM_RANGE_M
        })
        .map(|a| a.id)
        .collect())
}

/// What one agent can see and hear this tick. Never any global state:
/// contents are limited to the sensing radius, the locator range, and the
/// communication range, plus the static floor plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Perception {
    pub tick: u64,
    pub dt: f64,
    pub v_max: f64,
    pub me: SelfView,
    pub boxes: Vec<BoxView>,
    pub obstacles: Vec<ObstacleView>,
    pub humans: Vec<HumanView>,
    pub neighbors: Vec<NeighborView>,
    pub arena: ArenaView,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfView {
    pub id: AgentId,
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub carried_box: Option<BoxId>,
    pub last_move_tick: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxView {
    pub id: BoxId,
    pub position: Vec2,
    pub delivery_pending: bool,
    pub in_delivery_zone: bool,
    pub in_deposit_zone: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObstacleKind {
    Agent,
    LooseBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleView {
    pub position: Vec2,
    pub radius: f64,
    pub kind: ObstacleKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanView {
    pub id: HumanId,
    pub role: HumanRole,
    pub position: Vec2,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborView {
    pub id: AgentId,
    pub position: Vec2,
    pub mode: Mode,
    pub requesting_intervention: bool,
    pub requesting_attendee_input: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArenaView {
    pub width: f64,
    pub height: f64,
    pub delivery_zones: Vec<Rect>,
    pub deposit_zones: Vec<Rect>,
}

/// Local sensing for one agent: nearby boxes and obstacles by vision,
/// humans by locator device, neighbour agents by communication (subject to
/// communication faults).
pub fn sense(world: &WorldState, agent_id: AgentId) -> Result<Perception, SimError> {
    let me = world
        .agent(agent_id)
        .ok_or(SimError::NoSuchAgent(agent_id))?;
    let p = world.params.clone();

    let boxes = world
        .boxes
        .iter()
        .filter(|b| b.carried_by.is_none() && b.position.distance(me.position) <= p.sense_radius)
        .map(|b| BoxView {
            id: b.id,
            position: b.position,
            delivery_pending: b.delivery_pending,
            in_delivery_zone: world.arena.in_delivery_zone(b.position),
            in_deposit_zone: world.arena.in_deposit_zone(b.position),
        })
        .collect();

    let mut obstacles: Vec<ObstacleView> = world
        .agents
        .iter()
        .filter(|a| a.id != agent_id && a.position.distance(me.position) <= p.sense_radius)
        .map(|a| ObstacleView {
            position: a.position,
            radius: p.agent_radius,
            kind: ObstacleKind::Agent,
        })
        .collect();
    obstacles.extend(
        world
            .boxes
            .iter()
            .filter(|b| {
                b.carried_by.is_none() && b.position.distance(me.position) <= p.sense_radius
            })
            .map(|b| ObstacleView {
                position: b.position,
                radius: p.box_radius(),
                kind: ObstacleKind::LooseBox,
            }),
    );

    let humans = world
        .humans
        .iter()
        .filter(|h| h.position.distance(me.position) <= p.human_range)
        .map(|h| HumanView {
            id: h.id,
            role: h.role,
            position: h.position,
            distance: h.position.distance(me.position),
        })
        .collect();

    let neighbors = neighborhood(world, agent_id)?
        .into_iter()
        .filter_map(|id| world.agent(id))
        .map(|a| NeighborView {
            id: a.id,
            position: a.position,
            mode: a.controller_state.mode,
            requesting_intervention: a.requesting_intervention,
            requesting_attendee_input: a.requesting_attendee_input,
        })
        .collect();

    Ok(Perception {
        tick: world.tick,
        dt: world.dt,
        v_max: p.v_max,
        me: SelfView {
            id: me.id,
            position: me.position,
            heading: me.heading,
            speed: me.speed,
            carried_box: me.carried_box,
            last_move_tick: me.last_move_tick,
        },
        boxes,
        obstacles,
        humans,
        neighbors,
        arena: ArenaView {
            width: world.arena.width,
            height: world.arena.height,
            delivery_zones: world.arena.delivery_zones.clone(),
            deposit_zones: world.arena.deposit_zones.clone(),
        },
    })
}

fn clamp_to_arena(arena: &ArenaConfig, radius: f64, p: Vec2) -> Vec2 {
    Vec2::new(
        p.x.clamp(radius, (arena.width - radius).max(radius)),
        p.y.clamp(radius, (arena.height - radius).max(radius)),
    )
}

/// Advance the world by one tick.
///
/// Deterministic given (world, commands, seed). Exactly one command per
/// agent; unknown ids and non-finite values are rejected.
pub fn step(
    world: &WorldState,
    commands: &BTreeMap<AgentId, ActuationCommand>,
) -> Result<(WorldState, Vec<SimEvent>), SimError> {
    for id in commands.keys() {
        if world.agent(*id).is_none() {
            return Err(SimError::UnknownAgent(*id));
        }
    }
    for a in &world.agents {
        let cmd = commands.get(&a.id).ok_or(SimError::MissingCommand(a.id))?;
        if !cmd.desired_speed.is_finite() || !cmd.desired_heading.is_finite() {
            return Err(SimError::NonFiniteCommand(a.id));
        }
    }

    let mut w = world.clone();
    w.tick = world.tick + 1;
    w.event_log.clear();
    let tick = w.tick;
    let dt = w.dt;
    let params = w.params.clone();
    let mut events: Vec<SimEvent> = Vec::new();

    // Humans wander (deterministic, counter-hashed), bounded by the arena.
    let mut human_velocities: BTreeMap<HumanId, Vec2> = BTreeMap::new();
    if params.human_wander_speed > 0.0 {
        for h in &mut w.humans {
            let bucket = tick / 30;
            let angle =
                hash01(w.rng_seed, 0x4855_4D00 + h.id.0 as u64, bucket) * std::f64::consts::TAU;
            let old = h.position;
            let target = old + Vec2::from_heading(angle).scale(params.human_wander_speed * dt);
            h.position = clamp_to_arena(&w.arena, params.human_radius, target);
            human_velocities.insert(h.id, (h.position - old).scale(1.0 / dt));
        }
    }

    // Agent kinematics: acceleration-capped speed tracking, instant heading,
    // explicit Euler position update, wall clamp.
    let old_positions: BTreeMap<AgentId, Vec2> =
        w.agents.iter().map(|a| (a.id, a.position)).collect();
    for a in &mut w.agents {
        let cmd = &commands[&a.id];
        let desired = cmd.desired_speed.clamp(0.0, params.v_max);
        let dv_max = params.accel_limit * dt;
        a.speed = desired.clamp(a.speed - dv_max, a.speed + dv_max).max(0.0);
        a.heading = wrap_angle(cmd.desired_heading);
        let target = a.position + Vec2::from_heading(a.heading).scale(a.speed * dt);
        a.position = clamp_to_arena(&w.arena, params.agent_radius, target);
        a.requesting_intervention = cmd.request_intervention;
        a.requesting_attendee_input = cmd.request_attendee_input;
        a.stored_bytes = a.stored_bytes.saturating_add(params.stored_bytes_per_tick);
    }

    // Carried boxes ride on their carrier.
    let agent_positions: BTreeMap<AgentId, Vec2> =
        w.agents.iter().map(|a| (a.id, a.position)).collect();
    for b in &mut w.boxes {
        if let Some(agent) = b.carried_by {
            if let Some(p) = agent_positions.get(&agent) {
                b.position = *p;
            }
        }
    }

    // Pickups: an acquiring agent attaches to its target box on contact.
    // Contested boxes go to the lowest agent id.
    let pickup_range = params.agent_radius + params.box_radius();
    let mut pickups: Vec<(AgentId, BoxId)> = Vec::new();
    for a in &w.agents {
        if a.carried_box.is_some() || a.controller_state.mode != Mode::Acquire {
            continue;
        }
        if let Some(target) = a.controller_state.target_box {
            if let Some(b) = w.boxes.iter().find(|b| b.id == target) {
                if b.carried_by.is_none()
                    && !b.delivery_pending
                    && b.position.distance(a.position) <= pickup_range
                {
                    pickups.push((a.id, target));
                }
            }
        }
    }
    pickups.sort();
    let mut taken: BTreeSet<BoxId> = BTreeSet::new();
    for (agent, box_id) in pickups {
        if taken.contains(&box_id) {
            continue;
        }
        taken.insert(box_id);
        let pos = agent_positions[&agent];
        {
            let b = w.boxes.iter_mut().find(|b| b.id == box_id).unwrap();
            b.carried_by = Some(agent);
            b.position = pos;
            b.picked_tick = Some(tick);
        }
        let a = w.agent_mut(agent).unwrap();
        a.carried_box = Some(box_id);
        events.push(SimEvent::Pickup {
            tick,
            agent,
            box_id,
        });
    }

    // Releases: a delivering agent drops its box once all four feet are
    // inside a delivery zone. The box stays delivery-pending until no agent
    // is in contact with it.
    let mut releases: Vec<(AgentId, BoxId, bool)> = Vec::new();
    for a in &w.agents {
        if a.controller_state.mode != Mode::Deliver {
            continue;
        }
        if let Some(box_id) = a.carried_box {
            if let Some(b) = w.boxes.iter().find(|b| b.id == box_id) {
                let ok = b.feet_in_delivery_zone(&w.arena);
                if ok {
                    releases.push((a.id, box_id, ok));
                }
            }
        }
    }
    releases.sort();
    for (agent, box_id, feet_in_zone) in releases {
        {
            let b = w.boxes.iter_mut().find(|b| b.id == box_id).unwrap();
            b.carried_by = None;
            b.delivery_pending = true;
            b.last_carrier = Some(agent);
        }
        let a = w.agent_mut(agent).unwrap();
        a.carried_box = None;
        events.push(SimEvent::Release {
            tick,
            agent,
            box_id,
            feet_in_zone,
        });
    }

    // Contact detection on post-move positions: one event per newly-begun
    // episode, computed before overlap removal.
    let onsets: Vec<CollisionEvent> = {
        let overlaps = overlapping_pairs(&w);
        overlaps
            .iter()
            .filter(|p| !w.active_contacts.contains(p))
            .map(|&(a, b)| {
                let rel = velocity_of(&w, a, &human_velocities)
                    - velocity_of(&w, b, &human_velocities);
                let impact_speed = rel.length();
                CollisionEvent {
                    tick,
                    a,
                    b,
                    impact_speed,
                    classification: CollisionEvent::classify(impact_speed),
                }
            })
            .collect()
    };
    // Episode bookkeeping with a release-margin hysteresis so the positional
    // separation below does not end (and restart) episodes spuriously.
    let mut next_contacts: BTreeSet<(EntityId, EntityId)> = BTreeSet::new();
    for pair in collidable_pairs(&w) {
        let (pa, pb) = (
            w.position_of(pair.0).unwrap(),
            w.position_of(pair.1).unwrap(),
        );
        let d = pa.distance(pb);
        let cd = contact_distance(&w, pair.0, pair.1);
        let begins = d < cd;
        let persists = w.active_contacts.contains(&pair) && d <= cd + CONTACT_RELEASE_MARGIN_M;
        if begins || persists {
            next_contacts.insert(pair);
        }
    }
    w.active_contacts = next_contacts;
    events.extend(onsets.into_iter().map(SimEvent::Collision));

    // Overlap removal: push overlapping pairs to just-touching. Agents split
    // the correction; boxes and humans do not move.
    for _ in 0..3 {
        let overlaps = overlapping_pairs(&w);
        if overlaps.is_empty() {
            break;
        }
        for (ea, eb) in overlaps {
            let pa = w.position_of(ea).unwrap();
            let pb = w.position_of(eb).unwrap();
            let cd = contact_distance(&w, ea, eb) + SEPARATION_CLEARANCE_M;
            let d = pa.distance(pb);
            let dir = if d < 1e-9 {
                // Coincident centres: deterministic push direction.
                let bits = hash_u64(w.rng_seed, u64::from(w.tick), 0xC011);
                Vec2::from_heading((bits >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU)
            } else {
                (pa - pb).normalized()
            };
            let push = cd - d;
            let (ma, mb) = (
                matches!(ea, EntityId::Agent(_)),
                matches!(eb, EntityId::Agent(_)),
            );
            let (fa, fb) = match (ma, mb) {
                (true, true) => (0.5, 0.5),
                (true, false) => (1.0, 0.0),
                (false, true) => (0.0, 1.0),
                (false, false) => (0.0, 0.0),
            };
            if fa > 0.0 {
                if let EntityId::Agent(id) = ea {
                    let arena = w.arena.clone();
                    let r = w.params.agent_radius;
                    let a = w.agent_mut(id).unwrap();
                    a.position = clamp_to_arena(&arena, r, a.position + dir.scale(push * fa));
                }
            }
            if fb > 0.0 {
                if let EntityId::Agent(id) = eb {
                    let arena = w.arena.clone();
                    let r = w.params.agent_radius;
                    let a = w.agent_mut(id).unwrap();
                    a.position = clamp_to_arena(&arena, r, a.position - dir.scale(push * fb));
                }
            }
        }
    }
    // Carried boxes follow any separation correction.
    let agent_positions: BTreeMap<AgentId, Vec2> =
        w.agents.iter().map(|a| (a.id, a.position)).collect();
    for b in &mut w.boxes {
        if let Some(agent) = b.carried_by {
            b.position = agent_positions[&agent];
        }
    }

    // Delivery completes once a pending box is free of agent contact.
    let contact_clear = |w: &WorldState, b: &BoxState| {
        w.agents.iter().all(|a| {
            a.position.distance(b.position)
                > w.params.agent_radius + w.params.box_radius() + SEPARATION_CLEARANCE_M
        })
    };
    let mut delivered: Vec<BoxId> = Vec::new();
    for b in &w.boxes {
        if b.delivery_pending && b.respawn_at.is_none() && contact_clear(&w, b) {
            delivered.push(b.id);
        }
    }
    for box_id in delivered {
        let respawn_delay = params.respawn_delay_ticks;
        let b = w.boxes.iter_mut().find(|b| b.id == box_id).unwrap();
        let completion = b.picked_tick.map(|t0| tick.saturating_sub(t0));
        b.respawn_at = Some(tick + respawn_delay);
        events.push(SimEvent::Delivery {
            tick,
            box_id,
            completion_ticks: completion,
        });
    }

    // Respawn delivered boxes at a free deposit slot (a fresh task).
    let due: Vec<BoxId> = w
        .boxes
        .iter()
        .filter(|b| b.respawn_at.map(|t| t <= tick).unwrap_or(false))
        .map(|b| b.id)
        .collect();
    for box_id in due {
        if let Some(pos) = free_deposit_slot(&w, box_id, tick) {
            let b = w.boxes.iter_mut().find(|b| b.id == box_id).unwrap();
            b.position = pos;
            b.delivery_pending = false;
            b.picked_tick = None;
            b.last_carrier = None;
            b.respawn_at = None;
            events.push(SimEvent::Respawn {
                tick,
                box_id,
                position: pos,
            });
        }
        // No free slot this tick: retried next tick.
    }

    // Movement accounting for stationarity monitors.
    for a in &mut w.agents {
        let moved = a.position.distance(old_positions[&a.id]) > EPS_MOVE_M;
        if moved {
            a.last_move_tick = tick;
        }
    }

    w.event_log = events.clone();
    Ok((w, events))
}

/// Deterministic choice of a free deposit-zone slot for a respawning box.
fn free_deposit_slot(world: &WorldState, box_id: BoxId, tick: u64) -> Option<Vec2> {
    let margin = world.params.box_radius() + 0.02;
    let clearance = world.params.box_radius() * 2.0 + 0.38;
    for attempt in 0..24u64 {
        for (zi, zone) in world.arena.deposit_zones.iter().enumerate() {
            let key = hash_u64(
                world.rng_seed,
                0xB0B0 + box_id.0 as u64,
                tick.wrapping_mul(31) + attempt * 7 + zi as u64,
            );
            let fx = (key >> 11) as f64 / (1u64 << 53) as f64;
            let fy = ((key.wrapping_mul(0x9E37_79B9_7F4A_7C15)) >> 11) as f64 / (1u64 << 53) as f64;
            if zone.width() <= 2.0 * margin || zone.height() <= 2.0 * margin {
                continue;
            }
            let pos = Vec2::new(
                zone.x0 + margin + fx * (zone.width() - 2.0 * margin),
                zone.y0 + margin + fy * (zone.height() - 2.0 * margin),
            );
            let clear = world
                .boxes
                .iter()
                .filter(|b| b.id != box_id && b.carried_by.is_none() && b.respawn_at.is_none())
                .all(|b| b.position.distance(pos) > clearance)
                && world.agents.iter().all(|a| {
                    a.position.distance(pos)
                        > world.params.agent_radius + world.params.box_radius() + 0.05
                });
            if clear {
                return Some(pos);
            }
        }
    }
    None
}

/// Update fault membership for this tick; emits onset/clear events.
pub fn apply_fault_schedule(
    world: &mut WorldState,
    schedule: &[(crate::fault::FaultSpec, BTreeSet<AgentId>)],
    tick: u64,
) -> Vec<SimEvent> {
    let mut events = Vec::new();
    for (spec, members) in schedule {
        let active = spec.active_at(tick);
        for agent_id in members {
            if let Some(a) = world.agent_mut(*agent_id) {
                let has = a.active_faults.contains(&spec.kind);
                if active && !has {
                    a.active_faults.insert(spec.kind);
                    events.push(SimEvent::FaultOn {
                        tick,
                        agent: *agent_id,
                        kind: spec.kind,
                    });
                } else if !active && has {
                    a.active_faults.remove(&spec.kind);
                    events.push(SimEvent::FaultOff {
                        tick,
                        agent: *agent_id,
                        kind: spec.kind,
                    });
                }
            }
        }
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::ActuationCommand;

    fn arena_4x4() -> ArenaConfig {
        ArenaConfig {
            width: 4.0,
            height: 4.0,
            incline_deg: 0.0,
            floor: Floor::Dry,
            max_step_height_cm: 0.4,
            delivery_zones: vec![Rect::new(0.0, 2.8, 1.2, 4.0)],
            deposit_zones: vec![Rect::new(0.0, 0.0, 1.2, 1.2)],
            humans_have_locators: true,
        }
    }

    fn world_with_agents(agents: Vec<AgentState>) -> WorldState {
        WorldState::new(
            arena_4x4(),
            SimParams::default(),
            0.1,
            7,
            agents,
            vec![],
            vec![],
        )
    }

    fn cmd(speed: f64, heading: f64) -> ActuationCommand {
        ActuationCommand {
            desired_speed: speed,
            desired_heading: heading,
            request_intervention: false,
            request_attendee_input: false,
        }
    }

    fn commands_for(world: &WorldState, c: ActuationCommand) -> BTreeMap<AgentId, ActuationCommand> {
        world.agents.iter().map(|a| (a.id, c.clone())).collect()
    }

    #[test]
    fn euler_integration_moves_agent() {
        let mut a = AgentState::at(AgentId(0), Vec2::new(1.0, 1.0), 0.0);
        a.speed = 1.0;
        let w = world_with_agents(vec![a]);
        let (w2, _) = step(&w, &commands_for(&w, cmd(1.0, 0.0))).unwrap();
        let p = w2.agents[0].position;
        assert!((p.x - 1.1).abs() < 1e-12, "x = {}", p.x);
        assert!((p.y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn acceleration_cap_limits_speed_change() {
        // From rest, commanded 10 m/s with a 4 m/s^2 cap and dt = 0.1:
        // achieved speed is min(10, 0 + 4 * 0.1) = 0.4.
        let a = AgentState::at(AgentId(0), Vec2::new(2.0, 2.0), 0.0);
        let mut w = world_with_agents(vec![a]);
        w.params.v_max = 10.0;
        w.params.accel_limit = 4.0;
        let (w2, _) = step(&w, &commands_for(&w, cmd(10.0, 0.0))).unwrap();
        assert!((w2.agents[0].speed - 0.4).abs() < 1e-12);
    }

    #[test]
    fn head_on_contact_is_high_impact() {
        let mut a = AgentState::at(AgentId(0), Vec2::new(1.80, 2.0), 0.0);
        a.speed = 0.3;
        let mut b = AgentState::at(AgentId(1), Vec2::new(2.14, 2.0), std::f64::consts::PI);
        b.speed = 0.3;
        let w = world_with_agents(vec![a, b]);
        let mut cmds = BTreeMap::new();
        cmds.insert(AgentId(0), cmd(0.3, 0.0));
        cmds.insert(AgentId(1), cmd(0.3, std::f64::consts::PI));
        let (_, events) = step(&w, &cmds).unwrap();
        let collisions: Vec<_> = events
            .iter()
            .filter_map(|e| match e {
                SimEvent::Collision(c) => Some(c),
                _ => None,
            })
            .collect();
        assert_eq!(collisions.len(), 1);
        assert!((collisions[0].impact_speed - 0.6).abs() < 1e-9);
        assert_eq!(collisions[0].classification, ImpactClass::High);
    }

    #[test]
    fn detect_collisions_empty_when_apart() {
        let a = AgentState::at(AgentId(0), Vec2::new(1.0, 1.0), 0.0);
        let b = AgentState::at(AgentId(1), Vec2::new(3.0, 3.0), 0.0);
        let w = world_with_agents(vec![a, b]);
        assert!(detect_collisions(&w).is_empty());
    }

    #[test]
    fn rest_struck_at_low_speed_is_low_impact() {
        let mut a = AgentState::at(AgentId(0), Vec2::new(2.0, 2.0), 0.0);
        a.speed = 0.4;
        let b = AgentState::at(AgentId(1), Vec2::new(2.25, 2.0), 0.0);
        let w = world_with_agents(vec![a, b]);
        let evs = detect_collisions(&w);
        assert_eq!(evs.len(), 1);
        assert!((evs[0].impact_speed - 0.4).abs() < 1e-12);
        assert_eq!(evs[0].classification, ImpactClass::Low);
    }

    #[test]
    fn rear_end_above_threshold_is_high_impact() {
        let mut a = AgentState::at(AgentId(0), Vec2::new(2.0, 2.0), 0.0);
        a.speed = 0.6;
        let b = AgentState::at(AgentId(1), Vec2::new(2.25, 2.0), 0.0);
        let w = world_with_agents(vec![a, b]);
        let evs = detect_collisions(&w);
        assert_eq!(evs.len(), 1);
        assert!((evs[0].impact_speed - 0.6).abs() < 1e-12);
        assert_eq!(evs[0].classification, ImpactClass::High);
    }

    #[test]
    fn persisting_contact_not_recounted() {
        let mut a = AgentState::at(AgentId(0), Vec2::new(2.0, 2.0), 0.0);
        a.speed = 0.4;
        let b = AgentState::at(AgentId(1), Vec2::new(2.25, 2.0), 0.0);
        let mut w = world_with_agents(vec![a, b]);
        w.active_contacts.insert(pair_key(
            EntityId::Agent(AgentId(0)),
            EntityId::Agent(AgentId(1)),
        ));
        assert!(detect_collisions(&w).is_empty());
    }

    #[test]
    fn neighborhood_range_and_faults() {
        let a = AgentState::at(AgentId(0), Vec2::new(0.2, 0.2), 0.0);
        let b = AgentState::at(AgentId(1), Vec2::new(0.2 + 4.9, 0.2), 0.0);
        let mut w = world_with_agents(vec![a, b]);
        w.arena.width = 12.0;
        w.arena.height = 4.0;
        assert_eq!(neighborhood(&w, AgentId(0)).unwrap(), vec![AgentId(1)]);
        assert_eq!(neighborhood(&w, AgentId(1)).unwrap(), vec![AgentId(0)]);

        // 5.1 m apart: out of range.
        w.agent_mut(AgentId(1)).unwrap().position = Vec2::new(0.2 + 5.1, 0.2);
        assert!(neighborhood(&w, AgentId(0)).unwrap().is_empty());

        // Comm-faulted neighbour is excluded even at 1 m, both directions.
        w.agent_mut(AgentId(1)).unwrap().position = Vec2::new(1.2, 0.2);
        w.agent_mut(AgentId(1))
            .unwrap()
            .active_faults
            .insert(FaultKind::FullCommunication);
        assert!(neighborhood(&w, AgentId(0)).unwrap().is_empty());
        assert!(neighborhood(&w, AgentId(1)).unwrap().is_empty());

        assert_eq!(
            neighborhood(&w, AgentId(9)),
            Err(SimError::NoSuchAgent(AgentId(9)))
        );
    }

    #[test]
    fn sense_lists_attendee_with_distance() {
        let a = AgentState::at(AgentId(0), Vec2::new(1.0, 1.0), 0.0);
        let mut w = world_with_agents(vec![a]);
        w.humans.push(HumanState {
            id: HumanId(0),
            role: HumanRole::Attendee,
            position: Vec2::new(3.5, 1.0),
            has_locator: true,
        });
        let p = sense(&w, AgentId(0)).unwrap();
        assert_eq!(p.humans.len(), 1);
        assert_eq!(p.humans[0].role, HumanRole::Attendee);
        assert!((p.humans[0].distance - 2.5).abs() < 1e-12);
    }

    #[test]
    fn sense_empty_arena_gives_empty_lists() {
        let a = AgentState::at(AgentId(0), Vec2::new(2.0, 2.0), 0.0);
        let w = world_with_agents(vec![a]);
        let p = sense(&w, AgentId(0)).unwrap();
        assert!(p.boxes.is_empty());
        assert!(p.obstacles.is_empty());
        assert!(p.humans.is_empty());
        assert!(p.neighbors.is_empty());
    }

    #[test]
    fn sense_locality_ignores_far_entities() {
        let a = AgentState::at(AgentId(0), Vec2::new(1.0, 1.0), 0.0);
        let far = AgentState::at(AgentId(1), Vec2::new(10.0, 10.0), 0.0);
        let mut w = world_with_agents(vec![a, far]);
        w.arena.width = 12.0;
        w.arena.height = 12.0;
        w.boxes
            .push(BoxState::at(BoxId(0), Vec2::new(11.0, 11.0), 0.14, 1.5));
        let before = sense(&w, AgentId(0)).unwrap();
        // Mutate the far-away entities; the perception must not change.
        w.agent_mut(AgentId(1)).unwrap().position = Vec2::new(9.0, 9.5);
        w.boxes[0].position = Vec2::new(10.5, 10.0);
        let after = sense(&w, AgentId(0)).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn step_rejects_bad_commands() {
        let a = AgentState::at(AgentId(0), Vec2::new(2.0, 2.0), 0.0);
        let w = world_with_agents(vec![a]);
        let mut cmds = commands_for(&w, cmd(0.5, 0.0));
        cmds.insert(AgentId(5), cmd(0.5, 0.0));
        assert_eq!(step(&w, &cmds), Err(SimError::UnknownAgent(AgentId(5))));

        let cmds = commands_for(&w, cmd(f64::NAN, 0.0));
        assert_eq!(step(&w, &cmds), Err(SimError::NonFiniteCommand(AgentId(0))));

        let cmds = BTreeMap::new();
        assert_eq!(step(&w, &cmds), Err(SimError::MissingCommand(AgentId(0))));
    }

    #[test]
    fn speed_cap_and_accel_bound_hold_over_random_run() {
        let mut w = world_with_agents(vec![
            AgentState::at(AgentId(0), Vec2::new(1.0, 2.0), 0.0),
            AgentState::at(AgentId(1), Vec2::new(3.0, 2.0), 1.5),
        ]);
        w.params.v_max = 0.9;
        let mut prev: BTreeMap<AgentId, f64> = w.agents.iter().map(|a| (a.id, a.speed)).collect();
        for t in 0..400u64 {
            let cmds: BTreeMap<AgentId, ActuationCommand> = w
                .agents
                .iter()
                .map(|a| {
                    (
                        a.id,
                        cmd(
                            hash01(11, a.id.0 as u64, t) * 2.0,
                            hash01(13, a.id.0 as u64, t) * 6.28 - 3.14,
                        ),
                    )
                })
                .collect();
            let (w2, _) = step(&w, &cmds).unwrap();
            for a in &w2.agents {
                assert!(a.speed <= w.params.v_max + 1e-12);
                let dv = (a.speed - prev[&a.id]).abs();
                assert!(dv <= w.params.accel_limit * w.dt + 1e-9, "dv = {dv}");
            }
            prev = w2.agents.iter().map(|a| (a.id, a.speed)).collect();
            w = w2;
        }
    }

    #[test]
    fn last_move_tick_tracks_displacement_epsilon() {
        let a = AgentState::at(AgentId(0), Vec2::new(2.0, 2.0), 0.0);
        let w = world_with_agents(vec![a]);
        // Stationary command: no movement, last_move_tick stays 0.
        let (w2, _) = step(&w, &commands_for(&w, cmd(0.0, 0.0))).unwrap();
        assert_eq!(w2.agents[0].last_move_tick, 0);
        // Fast command: displacement exceeds epsilon.
        let (w3, _) = step(&w2, &commands_for(&w2, cmd(1.0, 0.0))).unwrap();
        assert_eq!(w3.agents[0].last_move_tick, 2);
    }

    #[test]
    fn determinism_identical_runs() {
        let mk = || {
            let mut w = world_with_agents(vec![
                AgentState::at(AgentId(0), Vec2::new(1.0, 1.0), 0.3),
                AgentState::at(AgentId(1), Vec2::new(3.0, 3.0), 2.0),
            ]);
            w.boxes
                .push(BoxState::at(BoxId(0), Vec2::new(0.6, 0.6), 0.14, 1.5));
            let mut log = Vec::new();
            for t in 0..200u64 {
                let cmds: BTreeMap<AgentId, ActuationCommand> = w
                    .agents
                    .iter()
                    .map(|a| {
                        (
                            a.id,
                            cmd(
                                hash01(5, a.id.0 as u64, t),
                                hash01(6, a.id.0 as u64, t) * 6.0,
                            ),
                        )
                    })
                    .collect();
                let (w2, evs) = step(&w, &cmds).unwrap();
                log.push((w2.clone(), evs));
                w = w2;
            }
            log
        };
        assert_eq!(mk(), mk());
    }
}
