// Temporary diagnostics for tuning; removed before release.

use swarmassure_core::config::ScenarioConfig;
use swarmassure_core::runner::run_scenario;
use swarmassure_core::trace::Record;

#[test]
fn diag_desk_scenario_stats() {
    let mut cfg = ScenarioConfig::desk_default();
    cfg.duration_s = 1000.0;
    let t0 = std::time::Instant::now();
    let out = run_scenario(&cfg).unwrap();
    let wall = t0.elapsed().as_secs_f64();
    let mut coll_low = 0;
    let mut coll_high = 0;
    let mut deliveries = 0;
    let mut pickups = 0;
    let mut await_ticks = 0;
    let mut max_await_simul = 0u64;
    let mut cur_tick = u64::MAX;
    let mut cur_await = 0u64;
    let mut human_close_ticks = 0u64;
    let mut humans: Vec<(f64, f64)> = vec![];
    for r in &out.trace.records {
        match r {
            Record::Human { x, y, .. } => humans.push((*x, *y)),
            _ => {}
        }
    }
    humans.truncate(3);
    let mut speeding_near_human = 0u64;
    for r in &out.trace.records {
        match r {
            Record::Collision { classification, .. } => {
                if matches!(classification, swarmassure_core::sim::ImpactClass::High) {
                    coll_high += 1;
                } else {
                    coll_low += 1;
                }
            }
            Record::Delivery { .. } => deliveries += 1,
            Record::Pickup { .. } => pickups += 1,
            Record::Kine {
                tick,
                x,
                y,
                speed,
                requesting_intervention,
                ..
            } => {
                if *requesting_intervention {
                    await_ticks += 1;
                    if *tick == cur_tick {
                        cur_await += 1;
                    } else {
                        cur_tick = *tick;
                        cur_await = 1;
                    }
                    max_await_simul = max_await_simul.max(cur_await);
                }
                for (hx, hy) in &humans {
                    let d = ((x - hx).powi(2) + (y - hy).powi(2)).sqrt();
                    if d <= 2.0 {
                        human_close_ticks += 1;
                        if *speed >= 0.25 {
                            speeding_near_human += 1;
                        }
                    }
                }
            }
            _ => {}
        }
    }
    // Episode counting: one per continuous (agent, human) within-2m stretch.
    use std::collections::BTreeMap;
    let mut inside: BTreeMap<(u32, usize), bool> = BTreeMap::new();
    let mut episodes = 0u64;
    let mut episode_modes: BTreeMap<String, u64> = BTreeMap::new();
    for r in &out.trace.records {
        if let Record::Kine {
            agent, x, y, mode, ..
        } = r
        {
            for (hi, (hx, hy)) in humans.iter().enumerate() {
                let d = ((x - hx).powi(2) + (y - hy).powi(2)).sqrt();
                let key = (agent.0, hi);
                let was = inside.get(&key).copied().unwrap_or(false);
                let now = d <= 2.0;
                if now && !was {
                    episodes += 1;
                    *episode_modes.entry(mode.to_string()).or_default() += 1;
                }
                inside.insert(key, now);
            }
        }
    }
    println!("wall time: {wall:.2}s for {} ticks", out.final_world.tick);
    println!("collisions: low={coll_low} high={coll_high}");
    println!("pickups={pickups} deliveries={deliveries}");
    println!("await ticks={await_ticks} max simultaneous requesters={max_await_simul}");
    println!("agent-ticks within 2m of a human: {human_close_ticks}, speeding among them: {speeding_near_human}");
    println!("encounter episodes: {episodes} (modes at onset: {episode_modes:?})");

    // Where do intervention requests happen, and which agents idle in rings?
    let mut await_spots: Vec<(u64, u32, f64, f64)> = vec![];
    let mut ring_time: BTreeMap<u32, u64> = BTreeMap::new();
    for r in &out.trace.records {
        if let Record::Kine {
            tick,
            agent,
            x,
            y,
            requesting_intervention,
            ..
        } = r
        {
            if *requesting_intervention {
                await_spots.push((*tick, agent.0, *x, *y));
            }
            for (hx, hy) in &humans {
                if ((x - hx).powi(2) + (y - hy).powi(2)).sqrt() <= 2.0 {
                    *ring_time.entry(agent.0).or_default() += 1;
                }
            }
        }
    }
    println!("ring residence (agent -> ticks): {ring_time:?}");
    for w in await_spots.windows(1).step_by(600).take(12) {
        println!("await sample: {w:?}");
    }
    println!("final modes: {:?}",
        out.final_world.agents.iter().map(|a| (a.id.0, a.controller_state.mode, a.position)).collect::<Vec<_>>());
}

fn quick_stats(label: &str, out: &swarmassure_core::runner::RunOutput) {
    let mut coll_high = 0;
    let mut deliveries = 0;
    let mut speeding = 0u64;
    let mut humans: Vec<(f64, f64)> = vec![];
    for r in &out.trace.records {
        if let Record::Human { x, y, .. } = r {
            if humans.len() < 3 {
                humans.push((*x, *y));
            }
        }
    }
    use std::collections::BTreeMap;
    let mut inside: BTreeMap<(u32, usize), bool> = BTreeMap::new();
    let mut episodes = 0u64;
    let mut stationary_time = 0u64;
    for r in &out.trace.records {
        match r {
            Record::Collision { classification, .. } => {
                if matches!(classification, swarmassure_core::sim::ImpactClass::High) {
                    coll_high += 1;
                }
            }
            Record::Delivery { .. } => deliveries += 1,
            Record::Kine {
                tick,
                agent,
                x,
                y,
                speed,
                last_move_tick,
                ..
            } => {
                let in_delivery = (0.0..=1.2).contains(x) && (2.8..=4.0).contains(y);
                if (tick - last_move_tick) as f64 * 0.1 > 10.0 && !in_delivery {
                    stationary_time += 1;
                    if stationary_time % 200 == 1 {
                        println!("  stationary sample: t={tick} a{} at ({x:.2},{y:.2})", agent.0);
                    }
                }
                for (hi, (hx, hy)) in humans.iter().enumerate() {
                    let d = ((x - hx).powi(2) + (y - hy).powi(2)).sqrt();
                    let key = (agent.0, hi);
                    let was = inside.get(&key).copied().unwrap_or(false);
                    let now = d <= 2.0;
                    if now && !was {
                        episodes += 1;
                    }
                    if now && *speed >= 0.25 {
                        speeding += 1;
                    }
                    inside.insert(key, now);
                }
            }
            _ => {}
        }
    }
    println!(
        "{label}: high={coll_high} deliveries={deliveries} episodes={episodes} speeding-ticks={speeding} stationary-agent-ticks={stationary_time}"
    );
}

#[test]
fn diag_seed_sweep() {
    use swarmassure_core::config::FaultConfig;
    use swarmassure_core::fault::FaultKind;
    for seed in [1u64, 2, 3, 11, 29, 77, 101, 555, 9999, 123456] {
        let mut base = ScenarioConfig::desk_default();
        base.duration_s = 1000.0;
        base.seed = seed;
        quick_stats(&format!("seed {seed} base "), &run_scenario(&base).unwrap());
        let mut motor = base.clone();
        motor.faults.push(FaultConfig {
            kind: FaultKind::HalfWheelsMotor,
            fraction: 0.50,
            onset_s: 0.0,
            duration_s: 0.0,
            seed: seed + 1,
        });
        quick_stats(&format!("seed {seed} motor"), &run_scenario(&motor).unwrap());
    }
}

#[test]
fn diag_faulty_and_uncapped() {
    use swarmassure_core::config::FaultConfig;
    use swarmassure_core::fault::FaultKind;

    let mut base = ScenarioConfig::desk_default();
    base.duration_s = 1000.0;
    quick_stats("baseline ", &run_scenario(&base).unwrap());

    let mut comm = base.clone();
    comm.faults.push(FaultConfig {
        kind: FaultKind::FullCommunication,
        fraction: 0.10,
        onset_s: 0.0,
        duration_s: 0.0,
        seed: 9001,
    });
    quick_stats("comm-10% ", &run_scenario(&comm).unwrap());

    let mut motor = base.clone();
    motor.faults.push(FaultConfig {
        kind: FaultKind::HalfWheelsMotor,
        fraction: 0.50,
        onset_s: 0.0,
        duration_s: 0.0,
        seed: 9002,
    });
    quick_stats("motor-50%", &run_scenario(&motor).unwrap());

    let mut uncapped = base.clone();
    uncapped.behavior.controller = swarmassure_core::behavior::ControllerKind::Uncapped;
    quick_stats("uncapped ", &run_scenario(&uncapped).unwrap());
}

#[test]
fn diag_trap_probe() {
    use swarmassure_core::config::FaultConfig;
    use swarmassure_core::fault::FaultKind;
    let mut cfg = ScenarioConfig::desk_default();
    cfg.duration_s = 1000.0;
    cfg.seed = 77;
    cfg.faults.push(FaultConfig {
        kind: FaultKind::HalfWheelsMotor,
        fraction: 0.50,
        onset_s: 0.0,
        duration_s: 0.0,
        seed: 78,
    });
    let out = run_scenario(&cfg).unwrap();
    // Reconstruct the neighbourhood of agent 6 around tick 7000.
    let mut frames: std::collections::BTreeMap<u64, Vec<(String, f64, f64, String)>> = Default::default();
    for r in &out.trace.records {
        match r {
            Record::Kine { tick, agent, x, y, mode, speed, .. } => {
                if (6900..=6905).contains(tick) {
                    frames.entry(*tick).or_default().push((format!("a{}", agent.0), *x, *y, format!("{mode} v={speed:.2}")));
                }
            }
            Record::BoxAt { tick, box_id, x, y } | Record::Respawn { tick, box_id, x, y } => {
                println!("boxmove t={tick} b{} ({x:.2},{y:.2})", box_id.0);
            }
            Record::Pickup { tick, agent, box_id } => {
                if (6000..=8000).contains(tick) {
                    println!("pickup t={tick} a{} b{}", agent.0, box_id.0);
                }
            }
            _ => {}
        }
    }
    for (t, rows) in frames {
        println!("t={t}");
        for (id, x, y, m) in rows {
            println!("   {id} ({x:.2},{y:.2}) {m}");
        }
    }
    // fault membership
    for r in out.trace.records.iter().take(200) {
        if let Record::FaultOn { agent, kind, .. } = r {
            println!("fault: a{} {kind:?}", agent.0);
        }
    }
}
