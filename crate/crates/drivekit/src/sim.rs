//! Deterministic 2D driving world: kinematic-bicycle ego, scripted NPC
//! vehicles and pedestrians, fixed-cycle traffic lights, and infraction
//! detection with per-contact-episode deduplication.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::VehicleControl;
use crate::geom::{Obb, Polyline, Pose, Vec2};
use crate::town::{LightState, TownMap, LANE_WIDTH};

pub const EGO_HALF_LENGTH: f64 = 2.25;
pub const EGO_HALF_WIDTH: f64 = 0.9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Physics tick.
    pub dt: f64,
    /// Sensor/agent tick (2 FPS).
    pub sensor_dt: f64,
    /// Full steer command maps to this wheel angle (radians).
    pub max_steer: f64,
    /// Full throttle acceleration (m/s²).
    pub max_accel: f64,
    /// Brake deceleration (m/s²).
    pub brake_decel: f64,
    pub max_speed: f64,
    pub num_npc_vehicles: usize,
    pub num_pedestrians: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.05,
            sensor_dt: 0.5,
            max_steer: 0.6,
            max_accel: 3.0,
            brake_decel: 6.0,
            max_speed: 20.0,
            num_npc_vehicles: 10,
            num_pedestrians: 6,
        }
    }
}

/// Controlled vehicle state in world coordinates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose,
    pub speed: f64,
    pub wheelbase: f64,
}

impl EgoState {
    pub fn at(pose: Pose) -> Self {
        EgoState {
            pose,
            speed: 0.0,
            wheelbase: 2.9,
        }
    }

    pub fn obb(&self) -> Obb {
        Obb::new(
            self.pose.position,
            self.pose.yaw,
            EGO_HALF_LENGTH,
            EGO_HALF_WIDTH,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NpcKind {
    Pedestrian,
    Car,
    Bicycle,
    Truck,
    Motorbike,
}

impl NpcKind {
    pub fn half_extents(self) -> (f64, f64) {
        match self {
            NpcKind::Pedestrian => (0.3, 0.3),
            NpcKind::Car => (2.25, 0.9),
            NpcKind::Bicycle => (0.9, 0.35),
            NpcKind::Truck => (3.5, 1.25),
            NpcKind::Motorbike => (1.1, 0.4),
        }
    }

    pub fn is_vehicle(self) -> bool {
        !matches!(self, NpcKind::Pedestrian)
    }
}

#[derive(Debug, Clone)]
enum NpcScript {
    LaneFollow { lane: usize, s: f64, cruise: f64 },
    SidewalkWalk { sidewalk: usize, s: f64, dir: f64 },
    Hold,
}

#[derive(Debug, Clone)]
pub struct Npc {
    pub kind: NpcKind,
    pub pose: Pose,
    pub speed: f64,
    script: NpcScript,
}

impl Npc {
    pub fn obb(&self) -> Obb {
        let (hl, hw) = self.kind.half_extents();
        Obb::new(self.pose.position, self.pose.yaw, hl, hw)
    }

    /// Stationary actor; stays exactly where placed.
    pub fn parked(kind: NpcKind, pose: Pose) -> Npc {
        Npc {
            kind,
            pose,
            speed: 0.0,
            script: NpcScript::Hold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfractionKind {
    PedestrianCollision,
    VehicleCollision,
    StaticCollision,
    RedLight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfractionEvent {
    pub kind: InfractionKind,
    pub sim_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum ContactKey {
    Npc(usize),
    Static(usize),
}

pub struct World {
    pub town: TownMap,
    pub config: SimConfig,
    pub ego: EgoState,
    pub npcs: Vec<Npc>,
    pub time: f64,
    lane_paths: Vec<Polyline>,
    prev_ego_pos: Vec2,
    active_contacts: BTreeSet<ContactKey>,
    fired_lights: BTreeSet<u32>,
}

impl World {
    /// Build a world with the ego at `start` and NPCs spawned
    /// deterministically from the seed. NPCs never spawn within 15 m of the
    /// ego start.
    pub fn new(town: TownMap, config: SimConfig, start: Pose, seed: u64) -> World {
        let lane_paths: Vec<Polyline> = town
            .lanes
            .iter()
            .map(|l| Polyline::new(l.centerline.clone()))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xda7a);
        let mut npcs = Vec::new();

        let vehicle_kinds = [
            NpcKind::Car,
            NpcKind::Truck,
            NpcKind::Bicycle,
            NpcKind::Motorbike,
        ];
        let mut attempts = 0;
        while npcs.iter().filter(|n: &&Npc| n.kind.is_vehicle()).count()
            < config.num_npc_vehicles
            && attempts < config.num_npc_vehicles * 20
        {
            attempts += 1;
            let lane = rng.gen_range(0..lane_paths.len());
            let s = rng.gen_range(0.0..lane_paths[lane].length());
            let pos = lane_paths[lane].at(s);
            if pos.dist(start.position) < 15.0 {
                continue;
            }
            if npcs
                .iter()
                .any(|n: &Npc| n.pose.position.dist(pos) < 12.0)
            {
                continue;
            }
            let t = lane_paths[lane].tangent(s);
            let kind = vehicle_kinds[rng.gen_range(0..vehicle_kinds.len())];
            npcs.push(Npc {
                kind,
                pose: Pose::new(pos.x, pos.y, t.y.atan2(t.x)),
                speed: 0.0,
                script: NpcScript::LaneFollow {
                    lane,
                    s,
                    cruise: 4.0,
                },
            });
        }

        let mut attempts = 0;
        let mut placed = 0;
        while placed < config.num_pedestrians && attempts < config.num_pedestrians * 20 {
            attempts += 1;
            if town.sidewalks.is_empty() {
                break;
            }
            let sw = rng.gen_range(0..town.sidewalks.len());
            let band = &town.sidewalks[sw];
            let s = rng.gen_range(-band.half_length..band.half_length);
            let axis = Vec2::new(band.yaw.cos(), band.yaw.sin());
            let pos = band.center.add(axis.scale(s));
            if pos.dist(start.position) < 15.0 {
                continue;
            }
            let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            npcs.push(Npc {
                kind: NpcKind::Pedestrian,
                pose: Pose::new(pos.x, pos.y, band.yaw),
                speed: 1.2,
                script: NpcScript::SidewalkWalk {
                    sidewalk: sw,
                    s,
                    dir,
                },
            });
            placed += 1;
        }

        World {
            prev_ego_pos: start.position,
            ego: EgoState::at(start),
            town,
            config,
            npcs,
            time: 0.0,
            lane_paths,
            active_contacts: BTreeSet::new(),
            fired_lights: BTreeSet::new(),
        }
    }

    pub fn ego_obb(&self) -> Obb {
        self.ego.obb()
    }

    /// Hazard zone used by scripted drivers: a rectangle `length` meters
    /// ahead, `width` wide, anchored at the actor's front.
    pub fn hazard_zone(pose: &Pose, length: f64, width: f64) -> Obb {
        let center = pose.position.add(pose.forward().scale(length / 2.0 + 1.0));
        Obb::new(center, pose.yaw, length / 2.0, width / 2.0)
    }

    /// Whether any actor box (NPC or ego-excluded list) or, optionally, a
    /// red stop line falls inside the zone.
    pub fn zone_blocked(&self, zone: &Obb, skip_npc: Option<usize>, include_ego: bool) -> bool {
        for (i, npc) in self.npcs.iter().enumerate() {
            if Some(i) == skip_npc {
                continue;
            }
            if zone.overlaps(&npc.obb()) {
                return true;
            }
        }
        if include_ego && zone.overlaps(&self.ego.obb()) {
            return true;
        }
        false
    }

    /// Non-green stop line inside the zone (the rule scripted drivers
    /// obey). Yellow counts: a line crossed as yellow flips to red scores
    /// an infraction, so scripted drivers stop for both.
    pub fn red_light_in_zone(&self, zone: &Obb, heading: Vec2) -> bool {
        for light in &self.town.lights {
            if light.state_at(self.time) == LightState::Green {
                continue;
            }
            let c = light.stop_line_center();
            // only lines roughly facing the driver count
            let along = light.stop_line[1].sub(light.stop_line[0]).normalized();
            if heading.dot(along).abs() > 0.5 {
                continue;
            }
            if zone.contains(c)
                || zone.contains(light.stop_line[0])
                || zone.contains(light.stop_line[1])
            {
                return true;
            }
        }
        false
    }

    /// Advance the world one physics tick: bicycle-model ego update, NPC
    /// scripts, light cycles (implicit in time).
    pub fn step(&mut self, control: &VehicleControl, dt: f64) {
        assert!(dt > 0.0, "dt must be positive");
        self.prev_ego_pos = self.ego.pose.position;

        // ego kinematic bicycle; positive steer command turns right,
        // which is clockwise (negative yaw rate) in this CCW world frame
        let v = self.ego.speed;
        let yaw = self.ego.pose.yaw;
        self.ego.pose.position.x += v * yaw.cos() * dt;
        self.ego.pose.position.y += v * yaw.sin() * dt;
        let steer_angle = -self.config.max_steer * control.steer.clamp(-1.0, 1.0);
        self.ego.pose.yaw += (v / self.ego.wheelbase) * steer_angle.tan() * dt;
        let accel = if control.brake {
            -self.config.brake_decel
        } else {
            control.throttle.clamp(0.0, 1.0) * self.config.max_accel
        };
        self.ego.speed = (v + accel * dt).clamp(0.0, self.config.max_speed);

        // NPC scripts
        for i in 0..self.npcs.len() {
            let mut npc = self.npcs[i].clone();
            match &mut npc.script {
                NpcScript::LaneFollow { lane, s, cruise } => {
                    let path = &self.lane_paths[*lane];
                    // narrow zone: one lane width, 7 m ahead
                    let zone = World::hazard_zone(&npc.pose, 7.0, LANE_WIDTH);
                    let blocked = self.zone_blocked(&zone, Some(i), true)
                        || self.red_light_in_zone(&zone, npc.pose.forward());
                    let target = if blocked { 0.0 } else { *cruise };
                    let rate = if target < npc.speed { 6.0 } else { 2.0 };
                    if npc.speed < target {
                        npc.speed = (npc.speed + rate * dt).min(target);
                    } else {
                        npc.speed = (npc.speed - rate * dt).max(target);
                    }
                    *s += npc.speed * dt;
                    if *s >= path.length() {
                        // wrap to the lane start when the area is clear
                        let start = path.at(0.0);
                        let clear = !self
                            .npcs
                            .iter()
                            .enumerate()
                            .any(|(j, o)| j != i && o.pose.position.dist(start) < 10.0)
                            && self.ego.pose.position.dist(start) > 15.0;
                        if clear {
                            *s = 0.0;
                        } else {
                            *s = path.length();
                            npc.speed = 0.0;
                        }
                    }
                    let p = path.at(*s);
                    let t = path.tangent(*s);
                    npc.pose = Pose::new(p.x, p.y, t.y.atan2(t.x));
                }
                NpcScript::Hold => {}
                NpcScript::SidewalkWalk { sidewalk, s, dir } => {
                    let band = &self.town.sidewalks[*sidewalk];
                    *s += *dir * npc.speed * dt;
                    if *s > band.half_length {
                        *s = band.half_length;
                        *dir = -1.0;
                    } else if *s < -band.half_length {
                        *s = -band.half_length;
                        *dir = 1.0;
                    }
                    let axis = Vec2::new(band.yaw.cos(), band.yaw.sin());
                    let pos = band.center.add(axis.scale(*s));
                    let yaw = if *dir > 0.0 {
                        band.yaw
                    } else {
                        band.yaw + std::f64::consts::PI
                    };
                    npc.pose = Pose::new(pos.x, pos.y, yaw);
                }
            }
            self.npcs[i] = npc;
        }

        self.time += dt;
    }

    /// Emit infraction events for this tick. Box overlaps are deduplicated
    /// per contact episode; a red-light crossing fires once per light.
    pub fn detect_infractions(&mut self) -> Vec<InfractionEvent> {
        let mut events = Vec::new();
        let ego_box = self.ego.obb();
        let mut now_touching = BTreeSet::new();

        for (i, npc) in self.npcs.iter().enumerate() {
            if ego_box.overlaps(&npc.obb()) {
                now_touching.insert(ContactKey::Npc(i));
                if !self.active_contacts.contains(&ContactKey::Npc(i)) {
                    let kind = if npc.kind.is_vehicle() {
                        InfractionKind::VehicleCollision
                    } else {
                        InfractionKind::PedestrianCollision
                    };
                    events.push(InfractionEvent {
                        kind,
                        sim_time: self.time,
                    });
                }
            }
        }
        for (i, obb) in self.town.statics.iter().enumerate() {
            if ego_box.overlaps(obb) {
                now_touching.insert(ContactKey::Static(i));
                if !self.active_contacts.contains(&ContactKey::Static(i)) {
                    events.push(InfractionEvent {
                        kind: InfractionKind::StaticCollision,
                        sim_time: self.time,
                    });
                }
            }
        }
        self.active_contacts = now_touching;

        let moved = self.prev_ego_pos;
        let cur = self.ego.pose.position;
        if moved.dist(cur) > 1e-9 {
            for light in &self.town.lights {
                if self.fired_lights.contains(&light.id) {
                    continue;
                }
                if light.state_at(self.time) != LightState::Red {
                    continue;
                }
                if crate::geom::segments_intersect(
                    moved,
                    cur,
                    light.stop_line[0],
                    light.stop_line[1],
                ) {
                    self.fired_lights.insert(light.id);
                    events.push(InfractionEvent {
                        kind: InfractionKind::RedLight,
                        sim_time: self.time,
                    });
                }
            }
        }
        events
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::town::{generate_town, TownGenConfig, TrafficLight};

    fn quiet_world() -> World {
        let cfg = TownGenConfig::default();
        let town = generate_town(42, &cfg);
        let sim = SimConfig {
            num_npc_vehicles: 0,
            num_pedestrians: 0,
            ..SimConfig::default()
        };
        World::new(town, sim, Pose::new(2.0, 20.0, std::f64::consts::FRAC_PI_2), 1)
    }

    #[test]
    fn rest_state_is_fixed_point() {
        let mut w = quiet_world();
        let p0 = w.ego.pose;
        w.step(&VehicleControl::idle(), 0.05);
        assert_eq!(w.ego.pose.position.x, p0.position.x);
        assert_eq!(w.ego.pose.position.y, p0.position.y);
        assert_eq!(w.ego.speed, 0.0);
    }

    #[test]
    fn straight_line_displacement() {
        let mut w = quiet_world();
        w.ego.speed = 2.0;
        w.step(
            &VehicleControl {
                steer: 0.0,
                throttle: 0.0,
                brake: false,
            },
            0.5,
        );
        let moved = w.ego.pose.position.dist(Vec2::new(2.0, 20.0));
        assert!((moved - 1.0).abs() < 1e-12, "moved {moved}");
        // energy-free: no throttle, no brake → speed unchanged
        assert_eq!(w.ego.speed, 2.0);
    }

    #[test]
    fn constant_steer_traces_circle() {
        let mut w = quiet_world();
        w.ego.speed = 2.0;
        let steer = 1.0;
        let delta = w.config.max_steer * steer;
        let radius = w.ego.wheelbase / delta.tan();
        let ctrl = VehicleControl {
            steer,
            throttle: 0.0,
            brake: false,
        };
        let mut pts = Vec::new();
        let dt = 0.01;
        let period = 2.0 * std::f64::consts::PI * radius / 2.0;
        let steps = (period / dt) as usize + 1;
        for _ in 0..steps {
            w.step(&ctrl, dt);
            pts.push(w.ego.pose.position);
        }
        let cx = pts.iter().map(|p| p.x).sum::<f64>() / pts.len() as f64;
        let cy = pts.iter().map(|p| p.y).sum::<f64>() / pts.len() as f64;
        let center = Vec2::new(cx, cy);
        for p in &pts {
            let r = p.dist(center);
            assert!(
                (r - radius).abs() / radius < 0.01,
                "radius {r} expected {radius}"
            );
        }
    }

    #[test]
    fn throttle_accelerates_brake_stops() {
        let mut w = quiet_world();
        let go = VehicleControl {
            steer: 0.0,
            throttle: 0.5,
            brake: false,
        };
        for _ in 0..20 {
            w.step(&go, 0.05);
        }
        // 1 s at 1.5 m/s² → 1.5 m/s
        assert!((w.ego.speed - 1.5).abs() < 1e-9);
        let stop = VehicleControl {
            steer: 0.0,
            throttle: 0.0,
            brake: true,
        };
        for _ in 0..20 {
            w.step(&stop, 0.05);
        }
        assert_eq!(w.ego.speed, 0.0);
    }

    #[test]
    fn world_is_deterministic() {
        let cfg = TownGenConfig::default();
        let run = || {
            let town = generate_town(9, &cfg);
            let mut w = World::new(
                town,
                SimConfig::default(),
                Pose::new(2.0, 10.0, std::f64::consts::FRAC_PI_2),
                33,
            );
            let ctrl = VehicleControl {
                steer: 0.1,
                throttle: 0.4,
                brake: false,
            };
            for _ in 0..200 {
                w.step(&ctrl, 0.05);
                w.detect_infractions();
            }
            let mut sig = vec![w.ego.pose.position.x, w.ego.pose.position.y, w.ego.pose.yaw];
            for n in &w.npcs {
                sig.push(n.pose.position.x);
                sig.push(n.pose.position.y);
                sig.push(n.speed);
            }
            sig
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn collision_dedup_within_contact_episode() {
        let mut w = quiet_world();
        w.npcs.push(Npc {
            kind: NpcKind::Pedestrian,
            pose: Pose::new(2.0, 21.0, 0.0),
            speed: 0.0,
            script: NpcScript::SidewalkWalk {
                sidewalk: 0,
                s: 0.0,
                dir: 0.0,
            },
        });
        // overlapping from the start; stay in contact for 10 ticks
        let mut total = 0;
        for _ in 0..10 {
            w.prev_ego_pos = w.ego.pose.position;
            w.time += 0.05;
            total += w.detect_infractions().len();
        }
        assert_eq!(total, 1, "contact episode must deduplicate");

        // separate, then touch again → a new event
        w.npcs[0].pose.position.x += 50.0;
        w.detect_infractions();
        w.npcs[0].pose.position.x -= 50.0;
        let again = w.detect_infractions();
        assert_eq!(again.len(), 1);
        assert_eq!(again[0].kind, InfractionKind::PedestrianCollision);
    }

    #[test]
    fn no_overlap_no_events() {
        let mut w = quiet_world();
        for _ in 0..5 {
            w.step(&VehicleControl::idle(), 0.05);
            assert!(w.detect_infractions().is_empty());
        }
    }

    #[test]
    fn red_light_crossing_fires_once_per_light() {
        let mut w = quiet_world();
        // a light that is always red, directly across the ego's path
        w.town.lights.push(TrafficLight {
            id: 900,
            stop_line: [Vec2::new(0.0, 25.0), Vec2::new(4.0, 25.0)],
            pole: Vec2::new(4.5, 25.0),
            green_s: 0.0,
            yellow_s: 0.0,
            red_s: 10.0,
            phase_offset_s: 0.0,
        });
        w.ego.speed = 5.0;
        let ctrl = VehicleControl {
            steer: 0.0,
            throttle: 0.0,
            brake: false,
        };
        let mut reds = 0;
        for _ in 0..60 {
            w.step(&ctrl, 0.05);
            reds += w
                .detect_infractions()
                .iter()
                .filter(|e| e.kind == InfractionKind::RedLight)
                .count();
        }
        assert!(w.ego.pose.position.y > 25.0, "ego must have crossed");
        assert_eq!(reds, 1);
    }

    #[test]
    fn vehicle_collision_kind() {
        let mut w = quiet_world();
        w.npcs.push(Npc {
            kind: NpcKind::Truck,
            pose: Pose::new(2.0, 21.0, 1.0),
            speed: 0.0,
            script: NpcScript::LaneFollow {
                lane: 0,
                s: 0.0,
                cruise: 0.0,
            },
        });
        let events = w.detect_infractions();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, InfractionKind::VehicleCollision);
    }

    #[test]
    fn npc_vehicle_stops_behind_blocker() {
        let cfg = TownGenConfig::default();
        let town = generate_town(42, &cfg);
        let sim = SimConfig {
            num_npc_vehicles: 0,
            num_pedestrians: 0,
            ..SimConfig::default()
        };
        // ego parked on lane 0 (x = 2) at y = 40, far from lights
        let mut w = World::new(town, sim, Pose::new(2.0, 40.0, std::f64::consts::FRAC_PI_2), 1);
        // NPC on the same lane behind the ego
        w.npcs.push(Npc {
            kind: NpcKind::Car,
            pose: Pose::new(2.0, 20.0, std::f64::consts::FRAC_PI_2),
            speed: 4.0,
            script: NpcScript::LaneFollow {
                lane: 0,
                s: 50.0, // lane 0 starts at y = -30
                cruise: 4.0,
            },
        });
        for _ in 0..200 {
            w.step(&VehicleControl::idle(), 0.05);
        }
        let npc = &w.npcs[0];
        assert!(npc.speed < 0.5, "npc should brake behind ego, speed {}", npc.speed);
        assert!(
            npc.pose.position.y < 40.0 - EGO_HALF_LENGTH,
            "npc must not rear-end the parked ego (y = {})",
            npc.pose.position.y
        );
        assert!(w.detect_infractions().is_empty());
    }
}
