//! Fault models applied to configured fractions of the swarm.
//!
//! Two fault kinds are modeled: full loss of inter-agent communication, and
//! a half-of-wheels motor fault rendered as halved achievable speed plus a
//! constant turn-rate bias. Fault membership is drawn once per spec from its
//! own seed, so a faulty run differs from its baseline only in the fault.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::ActuationCommand;
use crate::sim::{AgentId, AgentState, NeighborView};

/// Heading drift applied by the motor fault, radians per second.
pub const MOTOR_FAULT_TURN_BIAS: f64 = 0.2;
/// Fraction of commanded speed achievable under the motor fault.
pub const MOTOR_FAULT_SPEED_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Agent can neither send nor receive on the swarm channel.
    FullCommunication,
    /// Half of the wheel motors are dead: top speed halved, constant drift.
    HalfWheelsMotor,
}

impl FaultKind {
    pub fn label(self) -> &'static str {
        match self {
            FaultKind::FullCommunication => "full_communication",
            FaultKind::HalfWheelsMotor => "half_wheels_motor",
        }
    }
}

impl std::fmt::Display for FaultKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for FaultKind {
    type Err = FaultError;
    fn from_str(s: &str) -> Result<Self, FaultError> {
        match s {
            "full_communication" => Ok(FaultKind::FullCommunication),
            "half_wheels_motor" => Ok(FaultKind::HalfWheelsMotor),
            other => Err(FaultError::UnknownKind(other.to_string())),
        }
    }
}

/// A fault model applied to a fraction of the swarm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    /// Fraction of the swarm affected, in [0, 1].
    pub fraction: f64,
    pub onset_tick: u64,
    /// Ticks the fault persists; `None` means until the end of the run.
    pub duration_ticks: Option<u64>,
    pub seed: u64,
}

impl FaultSpec {
    pub fn persistent(kind: FaultKind, fraction: f64, seed: u64) -> Self {
        FaultSpec {
            kind,
            fraction,
            onset_tick: 0,
            duration_ticks: None,
            seed,
        }
    }

    /// True when the fault is active at `tick`.
    pub fn active_at(&self, tick: u64) -> bool {
        if tick < self.onset_tick {
            return false;
        }
        match self.duration_ticks {
            Some(d) => tick < self.onset_tick + d,
            None => true,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FaultError {
    #[error("fault fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("unknown fault kind `{0}`")]
    UnknownKind(String),
}

/// Number of agents a fraction maps to: round half up.
pub fn round_half_up(x: f64) -> u64 {
    (x + 0.5).floor() as u64
}

/// Choose the affected agents: exactly `round_half_up(fraction * n)` distinct
/// ids, uniform under the spec's seed.
pub fn assign_faults(n_agents: usize, spec: &FaultSpec) -> Result<BTreeSet<AgentId>, FaultError> {
    if !(0.0..=1.0).contains(&spec.fraction) || !spec.fraction.is_finite() {
        return Err(FaultError::FractionOutOfRange(spec.fraction));
    }
    let count = round_half_up(spec.fraction * n_agents as f64) as usize;
    let count = count.min(n_agents);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Partial Fisher-Yates over the id range.
    let mut ids: Vec<u32> = (0..n_agents as u32).collect();
    for i in 0..count {
        let j = rng.gen_range(i..n_agents);
        ids.swap(i, j);
    }
    Ok(ids[..count].iter().map(|&i| AgentId(i)).collect())
}

/// Apply the agent's active faults to its actuation command and its incoming
/// neighbourhood view.
///
/// Full-communication faults empty the view in both directions (the outgoing
/// side is enforced by `sim::neighborhood`) and suppress the agent's request
/// broadcasts. Motor faults halve the achievable speed and add a constant
/// heading drift.
pub fn apply_fault(
    agent: &AgentState,
    mut command: ActuationCommand,
    mut comm_view: Vec<NeighborView>,
    dt: f64,
) -> (ActuationCommand, Vec<NeighborView>) {
    if agent.active_faults.contains(&FaultKind::FullCommunication) {
        comm_view.clear();
        command.request_intervention = false;
        command.request_attendee_input = false;
    }
    if agent.active_faults.contains(&FaultKind::HalfWheelsMotor) {
        command.desired_speed *= MOTOR_FAULT_SPEED_FACTOR;
        command.desired_heading =
            crate::geom::wrap_angle(command.desired_heading + MOTOR_FAULT_TURN_BIAS * dt);
    }
    (command, comm_view)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;

    fn agent_with(faults: &[FaultKind]) -> AgentState {
        let mut a = AgentState::at(AgentId(0), Vec2::ZERO, 0.0);
        a.active_faults = faults.iter().copied().collect();
        a
    }

    fn cmd(speed: f64, heading: f64) -> ActuationCommand {
        ActuationCommand {
            desired_speed: speed,
            desired_heading: heading,
            request_intervention: false,
            request_attendee_input: false,
        }
    }

    #[test]
    fn fraction_ten_percent_of_ten_is_one() {
        let spec = FaultSpec::persistent(FaultKind::FullCommunication, 0.10, 7);
        assert_eq!(assign_faults(10, &spec).unwrap().len(), 1);
    }

    #[test]
    fn fraction_zero_is_empty() {
        let spec = FaultSpec::persistent(FaultKind::FullCommunication, 0.0, 7);
        assert!(assign_faults(10, &spec).unwrap().is_empty());
    }

    #[test]
    fn seven_agents_half_rounds_up_to_four() {
        let spec = FaultSpec::persistent(FaultKind::HalfWheelsMotor, 0.5, 7);
        assert_eq!(assign_faults(7, &spec).unwrap().len(), 4);
    }

    #[test]
    fn cardinality_exact_over_sweep() {
        for n in 1..=1000usize {
            for &fraction in &[0.0, 0.1, 0.5, 1.0] {
                let spec = FaultSpec::persistent(FaultKind::HalfWheelsMotor, fraction, 99);
                let got = assign_faults(n, &spec).unwrap().len() as u64;
                assert_eq!(
                    got,
                    round_half_up(fraction * n as f64).min(n as u64),
                    "n={n} fraction={fraction}"
                );
            }
        }
    }

    #[test]
    fn equal_seeds_equal_sets() {
        let spec = FaultSpec::persistent(FaultKind::FullCommunication, 0.3, 1234);
        assert_eq!(
            assign_faults(50, &spec).unwrap(),
            assign_faults(50, &spec).unwrap()
        );
        let other = FaultSpec {
            seed: 1235,
            ..spec.clone()
        };
        // Overwhelmingly likely to differ for 15 of 50 ids.
        assert_ne!(
            assign_faults(50, &spec).unwrap(),
            assign_faults(50, &other).unwrap()
        );
    }

    #[test]
    fn fraction_out_of_range_rejected() {
        let spec = FaultSpec::persistent(FaultKind::FullCommunication, 1.2, 7);
        assert_eq!(
            assign_faults(10, &spec),
            Err(FaultError::FractionOutOfRange(1.2))
        );
    }

    #[test]
    fn faultless_agent_command_unchanged() {
        let a = agent_with(&[]);
        let c = cmd(0.5, 1.0);
        let (out, view) = apply_fault(&a, c.clone(), vec![], 0.1);
        assert_eq!(out, c);
        assert!(view.is_empty());
    }

    #[test]
    fn motor_fault_halves_speed_and_drifts() {
        let a = agent_with(&[FaultKind::HalfWheelsMotor]);
        let (out, _) = apply_fault(&a, cmd(0.5, 1.0), vec![], 0.1);
        assert!(out.desired_speed <= 0.25 + 1e-12);
        assert!((out.desired_heading - (1.0 + 0.2 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn comm_fault_empties_view_and_mutes_requests() {
        let a = agent_with(&[FaultKind::FullCommunication]);
        let mut c = cmd(0.5, 1.0);
        c.request_intervention = true;
        c.request_attendee_input = true;
        let view = vec![NeighborView {
            id: AgentId(1),
            position: Vec2::new(1.0, 0.0),
            mode: crate::behavior::Mode::Explore,
            requesting_intervention: false,
            requesting_attendee_input: false,
        }];
        let (out, view) = apply_fault(&a, c, view, 0.1);
        assert!(view.is_empty());
        assert!(!out.request_intervention);
        assert!(!out.request_attendee_input);
    }

    #[test]
    fn fault_window_activity() {
        let spec = FaultSpec {
            kind: FaultKind::HalfWheelsMotor,
            fraction: 1.0,
            onset_tick: 10,
            duration_ticks: Some(5),
            seed: 0,
        };
        assert!(!spec.active_at(9));
        assert!(spec.active_at(10));
        assert!(spec.active_at(14));
        assert!(!spec.active_at(15));
    }
}
