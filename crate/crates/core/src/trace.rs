//! Simulation traces: line-delimited, tab-separated event records.
//!
//! One event per line: tick, event kind, entity ids, numeric payload. The
//! serialization is bit-exact across platforms for identical configurations,
//! so trace digests double as reproducibility checks. Per-tick kinematic
//! records carry everything the monitors need to re-derive their verdicts
//! from raw data.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::Mode;
use crate::fault::FaultKind;
use crate::sim::{AgentId, BoxId, EntityId, HumanId, HumanRole, ImpactClass, SimEvent, WorldState};
use crate::util::{fmt_f64, sha256_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scenario: String,
    pub config_digest: String,
    pub seed: u64,
    pub dt: f64,
    pub tool_version: String,
}

/// One record in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Record {
    /// Per-tick agent kinematics and request flags.
    Kine {
        tick: u64,
        agent: AgentId,
        x: f64,
        y: f64,
        speed: f64,
        heading: f64,
        carried: Option<BoxId>,
        last_move_tick: u64,
        requesting_intervention: bool,
        requesting_attendee_input: bool,
        mode: Mode,
    },
    /// Per-tick human position.
    Human {
        tick: u64,
        human: HumanId,
        role: HumanRole,
        x: f64,
        y: f64,
    },
    /// Box position when it (re)enters the loose state.
    BoxAt {
        tick: u64,
        box_id: BoxId,
        x: f64,
        y: f64,
    },
    Collision {
        tick: u64,
        a: EntityId,
        b: EntityId,
        impact_speed: f64,
        classification: ImpactClass,
    },
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
        x: f64,
        y: f64,
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

impl Record {
    pub fn tick(&self) -> u64 {
        match self {
            Record::Kine { tick, .. }
            | Record::Human { tick, .. }
            | Record::BoxAt { tick, .. }
            | Record::Collision { tick, .. }
            | Record::Pickup { tick, .. }
            | Record::Release { tick, .. }
            | Record::Delivery { tick, .. }
            | Record::Respawn { tick, .. }
            | Record::FaultOn { tick, .. }
            | Record::FaultOff { tick, .. }
            | Record::EmergencyStop { tick } => *tick,
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            Record::Kine {
                tick,
                agent,
                x,
                y,
                speed,
                heading,
                carried,
                last_move_tick,
                requesting_intervention,
                requesting_attendee_input,
                mode,
            } => {
                let carried = carried.map(|b| b.to_string()).unwrap_or_else(|| "-".into());
                format!(
                    "{tick}\tKINE\t{agent}\t{}\t{}\t{}\t{}\t{carried}\t{last_move_tick}\t{}\t{}\t{mode}",
                    fmt_f64(*x),
                    fmt_f64(*y),
                    fmt_f64(*speed),
                    fmt_f64(*heading),
                    u8::from(*requesting_intervention),
                    u8::from(*requesting_attendee_input),
                )
            }
            Record::Human {
                tick,
                human,
                role,
                x,
                y,
            } => format!("{tick}\tHUM\t{human}\t{role}\t{}\t{}", fmt_f64(*x), fmt_f64(*y)),
            Record::BoxAt { tick, box_id, x, y } => {
                format!("{tick}\tBOX\t{box_id}\t{}\t{}", fmt_f64(*x), fmt_f64(*y))
            }
            Record::Collision {
                tick,
                a,
                b,
                impact_speed,
                classification,
            } => {
                let class = match classification {
                    ImpactClass::Low => "low",
                    ImpactClass::High => "high",
                };
                format!("{tick}\tCOLL\t{a}\t{b}\t{}\t{class}", fmt_f64(*impact_speed))
            }
            Record::Pickup {
                tick,
                agent,
                box_id,
            } => format!("{tick}\tPICK\t{agent}\t{box_id}"),
            Record::Release {
                tick,
                agent,
                box_id,
                feet_in_zone,
            } => format!(
                "{tick}\tREL\t{agent}\t{box_id}\t{}",
                u8::from(*feet_in_zone)
            ),
            Record::Delivery {
                tick,
                box_id,
                completion_ticks,
            } => {
                let c = completion_ticks
                    .map(|t| t.to_string())
                    .unwrap_or_else(|| "-".into());
                format!("{tick}\tDLV\t{box_id}\t{c}")
            }
            Record::Respawn { tick, box_id, x, y } => {
                format!("{tick}\tRSP\t{box_id}\t{}\t{}", fmt_f64(*x), fmt_f64(*y))
            }
            Record::FaultOn { tick, agent, kind } => format!("{tick}\tFLT+\t{agent}\t{kind}"),
            Record::FaultOff { tick, agent, kind } => format!("{tick}\tFLT-\t{agent}\t{kind}"),
            Record::EmergencyStop { tick } => format!("{tick}\tSTOP"),
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("cannot read trace: {0}")]
    Io(#[from] std::io::Error),
}

/// A full simulation trace with header metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub meta: TraceMeta,
    pub records: Vec<Record>,
}

impl Trace {
    pub fn new(meta: TraceMeta) -> Self {
        Trace {
            meta,
            records: Vec::new(),
        }
    }

    /// Ticks covered, i.e. the maximum tick index seen.
    pub fn last_tick(&self) -> u64 {
        self.records.last().map(|r| r.tick()).unwrap_or(0)
    }

    pub fn duration_s(&self) -> f64 {
        self.last_tick() as f64 * self.meta.dt
    }

    pub fn was_aborted(&self) -> bool {
        self.records
            .iter()
            .any(|r| matches!(r, Record::EmergencyStop { .. }))
    }

    /// Append one tick's worth of records: agent kinematics in id order,
    /// human positions, then events in emission order.
    pub fn push_tick(&mut self, world: &WorldState, events: &[SimEvent]) {
        let tick = world.tick;
        for a in &world.agents {
            self.records.push(Record::Kine {
                tick,
                agent: a.id,
                x: a.position.x,
                y: a.position.y,
                speed: a.speed,
                heading: a.heading,
                carried: a.carried_box,
                last_move_tick: a.last_move_tick,
                requesting_intervention: a.requesting_intervention,
                requesting_attendee_input: a.requesting_attendee_input,
                mode: a.controller_state.mode,
            });
        }
        for h in &world.humans {
            self.records.push(Record::Human {
                tick,
                human: h.id,
                role: h.role,
                x: h.position.x,
                y: h.position.y,
            });
        }
        if tick == 0 {
            for b in &world.boxes {
                self.records.push(Record::BoxAt {
                    tick,
                    box_id: b.id,
                    x: b.position.x,
                    y: b.position.y,
                });
            }
        }
        for e in events {
            self.records.push(match e {
                SimEvent::Collision(c) => Record::Collision {
                    tick: c.tick,
                    a: c.a,
                    b: c.b,
                    impact_speed: c.impact_speed,
                    classification: c.classification,
                },
                SimEvent::Pickup {
                    tick,
                    agent,
                    box_id,
                } => Record::Pickup {
                    tick: *tick,
                    agent: *agent,
                    box_id: *box_id,
                },
                SimEvent::Release {
                    tick,
                    agent,
                    box_id,
                    feet_in_zone,
                } => Record::Release {
                    tick: *tick,
                    agent: *agent,
                    box_id: *box_id,
                    feet_in_zone: *feet_in_zone,
                },
                SimEvent::Delivery {
                    tick,
                    box_id,
                    completion_ticks,
                } => Record::Delivery {
                    tick: *tick,
                    box_id: *box_id,
                    completion_ticks: *completion_ticks,
                },
                SimEvent::Respawn {
                    tick,
                    box_id,
                    position,
                } => Record::Respawn {
                    tick: *tick,
                    box_id: *box_id,
                    x: position.x,
                    y: position.y,
                },
                SimEvent::FaultOn { tick, agent, kind } => Record::FaultOn {
                    tick: *tick,
                    agent: *agent,
                    kind: *kind,
                },
                SimEvent::FaultOff { tick, agent, kind } => Record::FaultOff {
                    tick: *tick,
                    agent: *agent,
                    kind: *kind,
                },
                SimEvent::EmergencyStop { tick } => Record::EmergencyStop { tick: *tick },
            });
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 48 + 256);
        out.push_str("#trace-v1\n");
        out.push_str(&format!("#scenario\t{}\n", self.meta.scenario));
        out.push_str(&format!("#config\t{}\n", self.meta.config_digest));
        out.push_str(&format!("#seed\t{}\n", self.meta.seed));
        out.push_str(&format!("#dt\t{}\n", fmt_f64(self.meta.dt)));
        out.push_str(&format!("#tool\t{}\n", self.meta.tool_version));
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_tsv().as_bytes())
    }

    pub fn write_to(&self, path: &std::path::Path) -> Result<(), TraceError> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn read_from(path: &std::path::Path) -> Result<Trace, TraceError> {
        let text = std::fs::read_to_string(path)?;
        Trace::parse_tsv(&text)
    }

    pub fn parse_tsv(text: &str) -> Result<Trace, TraceError> {
        let mut meta = TraceMeta {
            scenario: String::new(),
            config_digest: String::new(),
            seed: 0,
            dt: 0.1,
            tool_version: String::new(),
        };
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split('\t');
                match (it.next(), it.next()) {
                    (Some("scenario"), Some(v)) => meta.scenario = v.to_string(),
                    (Some("config"), Some(v)) => meta.config_digest = v.to_string(),
                    (Some("seed"), Some(v)) => {
                        meta.seed = v.parse().map_err(|_| bad(lineno, "seed"))?
                    }
                    (Some("dt"), Some(v)) => {
                        meta.dt = v.parse().map_err(|_| bad(lineno, "dt"))?
                    }
                    (Some("tool"), Some(v)) => meta.tool_version = v.to_string(),
                    _ => {}
                }
                continue;
            }
            records.push(parse_line(line, lineno)?);
        }
        Ok(Trace { meta, records })
    }
}

fn bad(line: usize, what: &str) -> TraceError {
    TraceError::Malformed {
        line,
        message: format!("bad {what}"),
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<Record, TraceError> {
    let fields: Vec<&str> = line.split('\t').collect();
    let err = |msg: &str| TraceError::Malformed {
        line: lineno,
        message: msg.to_string(),
    };
    let tick: u64 = fields
        .first()
        .ok_or_else(|| err("empty line"))?
        .parse()
        .map_err(|_| err("bad tick"))?;
    let kind = *fields.get(1).ok_or_else(|| err("missing kind"))?;
    let f = |i: usize| -> Result<&str, TraceError> {
        fields.get(i).copied().ok_or_else(|| err("missing field"))
    };
    let fx = |i: usize| -> Result<f64, TraceError> {
        f(i)?.parse().map_err(|_| err("bad float"))
    };
    let agent = |i: usize| -> Result<AgentId, TraceError> {
        match EntityId::from_str(f(i)?) {
            Ok(EntityId::Agent(a)) => Ok(a),
            _ => Err(err("expected agent id")),
        }
    };
    let box_id = |i: usize| -> Result<BoxId, TraceError> {
        match EntityId::from_str(f(i)?) {
            Ok(EntityId::Box(b)) => Ok(b),
            _ => Err(err("expected box id")),
        }
    };
    match kind {
        "KINE" => Ok(Record::Kine {
            tick,
            agent: agent(2)?,
            x: fx(3)?,
            y: fx(4)?,
            speed: fx(5)?,
            heading: fx(6)?,
            carried: match f(7)? {
                "-" => None,
                s => match EntityId::from_str(s) {
                    Ok(EntityId::Box(b)) => Some(b),
                    _ => return Err(err("bad carried box")),
                },
            },
            last_move_tick: f(8)?.parse().map_err(|_| err("bad last_move"))?,
            requesting_intervention: f(9)? == "1",
            requesting_attendee_input: f(10)? == "1",
            mode: Mode::from_str(f(11)?).map_err(|_| err("bad mode"))?,
        }),
        "HUM" => Ok(Record::Human {
            tick,
            human: match EntityId::from_str(f(2)?) {
                Ok(EntityId::Human(h)) => h,
                _ => return Err(err("expected human id")),
            },
            role: match f(3)? {
                "trained" => HumanRole::Trained,
                "attendee" => HumanRole::Attendee,
                _ => return Err(err("bad role")),
            },
            x: fx(4)?,
            y: fx(5)?,
        }),
        "BOX" => Ok(Record::BoxAt {
            tick,
            box_id: box_id(2)?,
            x: fx(3)?,
            y: fx(4)?,
        }),
        "COLL" => Ok(Record::Collision {
            tick,
            a: EntityId::from_str(f(2)?).map_err(|e| err(&e))?,
            b: EntityId::from_str(f(3)?).map_err(|e| err(&e))?,
            impact_speed: fx(4)?,
            classification: match f(5)? {
                "low" => ImpactClass::Low,
                "high" => ImpactClass::High,
                _ => return Err(err("bad classification")),
            },
        }),
        "PICK" => Ok(Record::Pickup {
            tick,
            agent: agent(2)?,
            box_id: box_id(3)?,
        }),
        "REL" => Ok(Record::Release {
            tick,
            agent: agent(2)?,
            box_id: box_id(3)?,
            feet_in_zone: f(4)? == "1",
        }),
        "DLV" => Ok(Record::Delivery {
            tick,
            box_id: box_id(2)?,
            completion_ticks: match f(3)? {
                "-" => None,
                s => Some(s.parse().map_err(|_| err("bad completion"))?),
            },
        }),
        "RSP" => Ok(Record::Respawn {
            tick,
            box_id: box_id(2)?,
            x: fx(3)?,
            y: fx(4)?,
        }),
        "FLT+" => Ok(Record::FaultOn {
            tick,
            agent: agent(2)?,
            kind: f(3)?.parse().map_err(|_| err("bad fault kind"))?,
        }),
        "FLT-" => Ok(Record::FaultOff {
            tick,
            agent: agent(2)?,
            kind: f(3)?.parse().map_err(|_| err("bad fault kind"))?,
        }),
        "STOP" => Ok(Record::EmergencyStop { tick }),
        other => Err(err(&format!("unknown record kind `{other}`"))),
    }
}

/// Convenience for synthesized traces in tests and fixtures.
pub fn meta_for_tests(dt: f64) -> TraceMeta {
    TraceMeta {
        scenario: "fixture".to_string(),
        config_digest: "fixture".to_string(),
        seed: 0,
        dt,
        tool_version: crate::TOOL_VERSION.to_string(),
    }
}
