//! Benchmark scoring: route completion, infraction multiplier, driving
//! score, episode termination rules, and the closed-loop benchmark runner.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::VehicleControl;
use crate::episode::{
    EndRecord, EpisodeLog, LogHeader, TerminationReason, TickRecord, EPISODE_SCHEMA,
};
use crate::sim::{InfractionEvent, InfractionKind, SimConfig, World};
use crate::town::{Route, TownMap};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("driving score of an empty route set")]
    EmptyRouteSet,
    #[error("penalty coefficient {0} outside (0, 1]")]
    BadPenalty(f64),
    #[error("no checkpoint produced a score")]
    NoCheckpointSelected,
}

/// Per-infraction penalty coefficients.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PenaltyTable {
    pub pedestrian: f64,
    pub vehicle: f64,
    pub static_collision: f64,
    pub red_light: f64,
}

impl Default for PenaltyTable {
    fn default() -> Self {
        PenaltyTable {
            pedestrian: 0.50,
            vehicle: 0.60,
            static_collision: 0.65,
            red_light: 0.70,
        }
    }
}

impl PenaltyTable {
    pub fn coefficient(&self, kind: InfractionKind) -> f64 {
        match kind {
            InfractionKind::PedestrianCollision => self.pedestrian,
            InfractionKind::VehicleCollision => self.vehicle,
            InfractionKind::StaticCollision => self.static_collision,
            InfractionKind::RedLight => self.red_light,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for c in [
            self.pedestrian,
            self.vehicle,
            self.static_collision,
            self.red_light,
        ] {
            if !(c > 0.0 && c <= 1.0) {
                return Err(EvalError::BadPenalty(c));
            }
        }
        Ok(())
    }
}

/// Arc-length progress over the route, discounted by the fraction of the
/// driven distance spent off-route (lateral distance beyond half a lane
/// width). Works from the log alone.
pub fn route_completion(log: &EpisodeLog) -> f64 {
    let length = log.header.route_length_m.max(1e-9);
    let progress = log
        .ticks
        .iter()
        .map(|t| t.route_progress_m)
        .fold(0.0f64, f64::max)
        .min(length);
    let percent = progress / length * 100.0;

    let half_lane = log.header.lane_width / 2.0;
    let mut driven = 0.0;
    let mut off_driven = 0.0;
    for w in log.ticks.windows(2) {
        let dx = w[1].x - w[0].x;
        let dy = w[1].y - w[0].y;
        let step = (dx * dx + dy * dy).sqrt();
        driven += step;
        if w[1].off_route_m > half_lane {
            off_driven += step;
        }
    }
    let multiplier = if driven > 0.0 {
        1.0 - off_driven / driven
    } else {
        1.0
    };
    percent * multiplier
}

/// IM = Π coefficient^count, starting from the ideal base of 1.0.
pub fn infraction_multiplier(events: &[InfractionEvent], table: &PenaltyTable) -> f64 {
    events
        .iter()
        .fold(1.0, |acc, e| acc * table.coefficient(e.kind))
}

/// DS = mean over routes of RC · IM.
pub fn driving_score(results: &[(f64, f64)]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyRouteSet);
    }
    Ok(results.iter().map(|(rc, im)| rc * im).sum::<f64>() / results.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub route_id: String,
    pub rc_percent: f64,
    pub infractions: BTreeMap<InfractionKind, usize>,
    pub im: f64,
    pub ds: f64,
    pub termination: TerminationReason,
    /// Set when the agent raised an error mid-route.
    pub agent_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub results: Vec<EpisodeResult>,
    pub avg_ds: f64,
    pub avg_rc: f64,
    pub seed: u64,
    pub fingerprint: String,
}

impl BenchmarkReport {
    pub fn from_results(results: Vec<EpisodeResult>, seed: u64, fingerprint: String) -> Self {
        let n = results.len().max(1) as f64;
        let avg_ds = results.iter().map(|r| r.ds).sum::<f64>() / n;
        let avg_rc = results.iter().map(|r| r.rc_percent).sum::<f64>() / n;
        BenchmarkReport {
            results,
            avg_ds,
            avg_rc,
            seed,
            fingerprint,
        }
    }

    /// Aligned text table: per-route rows plus the averages headline.
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>10} {:>10} {:>8} {:>5} {:>5} {:>5} {:>5}  {}\n",
            "Route", "DS \u{2191}", "RC \u{2191}", "IM", "Ped", "Veh", "Stat", "Red", "End"
        ));
        for r in &self.results {
            let c = |k: InfractionKind| r.infractions.get(&k).copied().unwrap_or(0);
            out.push_str(&format!(
                "{:<16} {:>10.3} {:>10.3} {:>8.3} {:>5} {:>5} {:>5} {:>5}  {:?}{}\n",
                r.route_id,
                r.ds,
                r.rc_percent,
                r.im,
                c(InfractionKind::PedestrianCollision),
                c(InfractionKind::VehicleCollision),
                c(InfractionKind::StaticCollision),
                c(InfractionKind::RedLight),
                r.termination,
                if r.agent_error.is_some() { " [flagged]" } else { "" },
            ));
        }
        out.push_str(&format!(
            "{:<16} {:>10.3} {:>10.3}\n",
            "Average", self.avg_ds, self.avg_rc
        ));
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Terminate when the lateral deviation from the route exceeds this.
    pub deviation_limit_m: f64,
    /// Terminate when displacement over this window stays under the floor.
    pub no_action_window_s: f64,
    pub no_action_displacement_m: f64,
    /// Route counts as finished within this distance of its end.
    pub goal_radius_m: f64,
    /// Hard wall-clock cap per episode (reported as a no-action timeout).
    pub max_episode_s: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        // desk-scale limits; the full-scale reference values are 30 m / 180 s
        EvalConfig {
            deviation_limit_m: 15.0,
            no_action_window_s: 30.0,
            no_action_displacement_m: 0.1,
            goal_radius_m: 3.0,
            max_episode_s: 240.0,
        }
    }
}

/// Closed-loop agent interface for the benchmark runner.
pub trait Driver {
    /// Decide the control for the upcoming sensor period.
    fn act(&mut self, world: &World, route: &Route) -> Result<VehicleControl, String>;
}

/// Expert wrapped as a benchmark driver.
pub struct ExpertDriver {
    pub config: crate::expert::ExpertConfig,
}

impl Driver for ExpertDriver {
    fn act(&mut self, world: &World, route: &Route) -> Result<VehicleControl, String> {
        let (control, _done) = crate::expert::expert_step(world, route, &self.config);
        Ok(control)
    }
}

pub struct BenchmarkTask {
    pub town: TownMap,
    pub route: Route,
}

/// Run one closed-loop episode: sensor ticks at 2 FPS, physics at the sim
/// tick, full logging, termination per the configured rules.
pub fn run_route<D: Driver>(
    task: &BenchmarkTask,
    driver: &mut D,
    sim: &SimConfig,
    eval_cfg: &EvalConfig,
    penalties: &PenaltyTable,
    seed: u64,
    fingerprint: &str,
) -> (EpisodeResult, EpisodeLog) {
    let route = &task.route;
    let mut world = World::new(task.town.clone(), sim.clone(), route.start_pose(), seed);
    let mut log = EpisodeLog::new(LogHeader {
        schema: EPISODE_SCHEMA.into(),
        route_id: route.spec.id.clone(),
        town: task.town.name.clone(),
        route_length_m: route.length(),
        lane_width: task.town.lane_width,
        seed,
        fingerprint: fingerprint.to_string(),
    });

    let ticks_per_sensor = (sim.sensor_dt / sim.dt).round() as usize;
    let max_ticks = (eval_cfg.max_episode_s / sim.dt) as usize;
    let window_ticks = (eval_cfg.no_action_window_s / sim.sensor_dt).round() as usize;

    let mut control = VehicleControl::idle();
    let mut agent_error = None;
    let mut pending_infractions: Vec<InfractionEvent> = Vec::new();
    let mut all_events: Vec<InfractionEvent> = Vec::new();
    let mut progress = 0.0f64;
    let mut positions: Vec<crate::geom::Vec2> = Vec::new();
    let mut termination = TerminationReason::TimeoutNoAction;

    for tick in 0..=max_ticks {
        if tick % ticks_per_sensor == 0 {
            let (s, lat) = route.path.project(world.ego.pose.position);
            progress = progress.max(s);
            positions.push(world.ego.pose.position);

            if agent_error.is_none() {
                match driver.act(&world, route) {
                    Ok(c) => control = c,
                    Err(e) => {
                        agent_error = Some(e);
                        control = VehicleControl {
                            steer: 0.0,
                            throttle: 0.0,
                            brake: true,
                        };
                    }
                }
            }

            log.ticks.push(TickRecord {
                t: world.time,
                x: world.ego.pose.position.x,
                y: world.ego.pose.position.y,
                yaw: world.ego.pose.yaw,
                speed: world.ego.speed,
                control,
                infractions: std::mem::take(&mut pending_infractions),
                route_progress_m: progress,
                off_route_m: lat,
            });

            // termination rules, checked at the sensor rate
            let dist_to_end = world.ego.pose.position.dist(route.end());
            if dist_to_end < eval_cfg.goal_radius_m
                || progress >= route.length() - eval_cfg.goal_radius_m.min(2.0)
            {
                termination = TerminationReason::Finished;
                // reaching the final goal counts as full arc-length progress
                if let Some(last) = log.ticks.last_mut() {
                    last.route_progress_m = route.length();
                }
                break;
            }
            if lat > eval_cfg.deviation_limit_m {
                termination = TerminationReason::Deviation;
                break;
            }
            if positions.len() > window_ticks {
                let old = positions[positions.len() - 1 - window_ticks];
                if old.dist(world.ego.pose.position) < eval_cfg.no_action_displacement_m {
                    termination = TerminationReason::TimeoutNoAction;
                    break;
                }
            }
            if agent_error.is_some() && world.ego.speed < 0.01 {
                termination = TerminationReason::TimeoutNoAction;
                break;
            }
        }
        world.step(&control, sim.dt);
        let events = world.detect_infractions();
        all_events.extend(events.iter().copied());
        pending_infractions.extend(events);
    }

    log.end = Some(EndRecord {
        t: world.time,
        reason: termination,
    });
    if !pending_infractions.is_empty() {
        if let Some(last) = log.ticks.last_mut() {
            last.infractions.extend(pending_infractions.drain(..));
        }
    }

    let rc = route_completion(&log);
    let im = infraction_multiplier(&all_events, penalties);
    let mut counts = BTreeMap::new();
    for e in &all_events {
        *counts.entry(e.kind).or_insert(0usize) += 1;
    }
    let result = EpisodeResult {
        route_id: route.spec.id.clone(),
        rc_percent: rc,
        infractions: counts,
        im,
        ds: rc * im,
        termination,
        agent_error,
    };
    (result, log)
}

/// Evaluate every task, optionally across threads; results aggregate in
/// task order so the report is identical for any worker count.
pub fn run_benchmark<D, F>(
    tasks: &[BenchmarkTask],
    make_driver: F,
    sim: &SimConfig,
    eval_cfg: &EvalConfig,
    penalties: &PenaltyTable,
    seed: u64,
    fingerprint: &str,
    workers: usize,
) -> (BenchmarkReport, Vec<EpisodeLog>)
where
    D: Driver,
    F: Fn() -> D + Sync,
{
    let workers = workers.max(1);
    let mut slots: Vec<Option<(EpisodeResult, EpisodeLog)>> =
        (0..tasks.len()).map(|_| None).collect();

    if workers == 1 {
        for (i, task) in tasks.iter().enumerate() {
            let mut driver = make_driver();
            slots[i] = Some(run_route(
                task,
                &mut driver,
                sim,
                eval_cfg,
                penalties,
                seed.wrapping_add(i as u64),
                fingerprint,
            ));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots_mutex: Vec<std::sync::Mutex<Option<(EpisodeResult, EpisodeLog)>>> =
            (0..tasks.len()).map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers.min(tasks.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= tasks.len() {
                        break;
                    }
                    let mut driver = make_driver();
                    let out = run_route(
                        &tasks[i],
                        &mut driver,
                        sim,
                        eval_cfg,
                        penalties,
                        seed.wrapping_add(i as u64),
                        fingerprint,
                    );
                    *slots_mutex[i].lock().unwrap() = Some(out);
                });
            }
        });
        for (slot, m) in slots.iter_mut().zip(slots_mutex) {
            *slot = m.into_inner().unwrap();
        }
    }

    let mut results = Vec::with_capacity(tasks.len());
    let mut logs = Vec::with_capacity(tasks.len());
    for s in slots {
        let (r, l) = s.expect("every task ran");
        results.push(r);
        logs.push(l);
    }
    (
        BenchmarkReport::from_results(results, seed, fingerprint.to_string()),
        logs,
    )
}

/// Highest-driving-score selection with ties broken toward the later entry.
pub fn select_best_checkpoint(scores: &[f64]) -> Result<usize, EvalError> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            Some(b) if scores[b] > s => {}
            _ => best = Some(i),
        }
    }
    best.ok_or(EvalError::NoCheckpointSelected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::LogHeader;
    use proptest::prelude::*;

    fn header(len: f64) -> LogHeader {
        LogHeader {
            schema: EPISODE_SCHEMA.into(),
            route_id: "r".into(),
            town: "t".into(),
            route_length_m: len,
            lane_width: 3.5,
            seed: 0,
            fingerprint: String::new(),
        }
    }

    fn tick(x: f64, progress: f64, off: f64) -> TickRecord {
        TickRecord {
            t: 0.0,
            x,
            y: 0.0,
            yaw: 0.0,
            speed: 0.0,
            control: VehicleControl::idle(),
            infractions: vec![],
            route_progress_m: progress,
            off_route_m: off,
        }
    }

    #[test]
    fn rc_full_route_on_route() {
        let mut log = EpisodeLog::new(header(100.0));
        for i in 0..=10 {
            log.ticks.push(tick(i as f64 * 10.0, i as f64 * 10.0, 0.0));
        }
        assert!((route_completion(&log) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn rc_half_route() {
        let mut log = EpisodeLog::new(header(100.0));
        for i in 0..=5 {
            log.ticks.push(tick(i as f64 * 10.0, i as f64 * 10.0, 0.0));
        }
        assert!((route_completion(&log) - 50.0).abs() < 1e-9);
    }

    #[test]
    fn rc_off_route_discount() {
        // full route with exactly 10% of the driven distance off-route
        let mut log = EpisodeLog::new(header(100.0));
        log.ticks.push(tick(0.0, 0.0, 0.0));
        for i in 1..=9 {
            log.ticks.push(tick(i as f64 * 10.0, i as f64 * 10.0, 0.0));
        }
        // final 10 m arrive off-route
        log.ticks.push(tick(100.0, 100.0, 5.0));
        let rc = route_completion(&log);
        assert!((rc - 90.0).abs() < 1e-9, "rc {rc}");
    }

    #[test]
    fn im_paper_coefficients() {
        let t = PenaltyTable::default();
        t.validate().unwrap();
        assert_eq!(infraction_multiplier(&[], &t), 1.0);
        let ped = [InfractionEvent {
            kind: InfractionKind::PedestrianCollision,
            sim_time: 0.0,
        }];
        assert!((infraction_multiplier(&ped, &t) - 0.50).abs() < 1e-12);
        let mixed = [
            InfractionEvent {
                kind: InfractionKind::VehicleCollision,
                sim_time: 0.0,
            },
            InfractionEvent {
                kind: InfractionKind::RedLight,
                sim_time: 1.0,
            },
            InfractionEvent {
                kind: InfractionKind::RedLight,
                sim_time: 2.0,
            },
        ];
        let im = infraction_multiplier(&mixed, &t);
        assert!((im - 0.294).abs() < 1e-12, "im {im}");
    }

    #[test]
    fn ds_examples() {
        assert!((driving_score(&[(100.0, 1.0)]).unwrap() - 100.0).abs() < 1e-12);
        let ds = driving_score(&[(80.0, 0.5), (60.0, 1.0)]).unwrap();
        assert!((ds - 50.0).abs() < 1e-12);
        assert_eq!(driving_score(&[(77.0, 0.0)]).unwrap(), 0.0);
        assert!(matches!(driving_score(&[]), Err(EvalError::EmptyRouteSet)));
    }

    #[test]
    fn report_rows_satisfy_ds_identity() {
        let results = vec![
            EpisodeResult {
                route_id: "a".into(),
                rc_percent: 80.0,
                infractions: BTreeMap::new(),
                im: 0.5,
                ds: 40.0,
                termination: TerminationReason::Finished,
                agent_error: None,
            },
            EpisodeResult {
                route_id: "b".into(),
                rc_percent: 60.0,
                infractions: BTreeMap::new(),
                im: 1.0,
                ds: 60.0,
                termination: TerminationReason::Deviation,
                agent_error: None,
            },
        ];
        let report = BenchmarkReport::from_results(results, 1, "f".into());
        for r in &report.results {
            assert!((r.ds - r.rc_percent * r.im).abs() < 1e-9);
        }
        assert!((report.avg_ds - 50.0).abs() < 1e-12);
        assert!((report.avg_rc - 70.0).abs() < 1e-12);
        let table = report.format_table();
        assert!(table.contains("Average"));
        assert!(table.contains("DS"));
    }

    #[test]
    fn best_checkpoint_tie_goes_to_later() {
        assert_eq!(select_best_checkpoint(&[10.0]).unwrap(), 0);
        assert_eq!(select_best_checkpoint(&[10.0, 30.0, 30.0]).unwrap(), 2);
        assert!(select_best_checkpoint(&[]).is_err());
    }

    proptest! {
        #[test]
        fn im_is_order_independent_and_multiplicative(
            kinds in proptest::collection::vec(0usize..4, 0..12),
            split in 0usize..12,
        ) {
            let all = [
                InfractionKind::PedestrianCollision,
                InfractionKind::VehicleCollision,
                InfractionKind::StaticCollision,
                InfractionKind::RedLight,
            ];
            let t = PenaltyTable::default();
            let events: Vec<InfractionEvent> = kinds
                .iter()
                .map(|&k| InfractionEvent { kind: all[k], sim_time: 0.0 })
                .collect();
            let mut reversed = events.clone();
            reversed.reverse();
            let a = infraction_multiplier(&events, &t);
            let b = infraction_multiplier(&reversed, &t);
            prop_assert!((a - b).abs() < 1e-12);

            let cut = split.min(events.len());
            let c = infraction_multiplier(&events[..cut], &t)
                * infraction_multiplier(&events[cut..], &t);
            prop_assert!((a - c).abs() < 1e-12);
        }

        #[test]
        fn rc_monotone_in_progress(p1 in 0.0f64..100.0, p2 in 0.0f64..100.0) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let mk = |p: f64| {
                let mut log = EpisodeLog::new(header(100.0));
                log.ticks.push(tick(0.0, 0.0, 0.0));
                log.ticks.push(tick(p, p, 0.0));
                route_completion(&log)
            };
            prop_assert!(mk(lo) <= mk(hi) + 1e-9);
        }
    }
}
