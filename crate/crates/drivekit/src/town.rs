//! Town maps: lane graph, traffic lights, sidewalks and static obstacles,
//! plus the seeded procedural generator and the route builder.
//!
//! Generated towns are rectangular street grids. Each street carries one
//! lane per direction (right-hand traffic, centers ±2.0 m from the street
//! axis), a painted median line, and flanking sidewalks.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{bezier_arc, Obb, Polyline, Vec2};

pub const LANE_WIDTH: f64 = 3.5;
/// Lane centers sit this far from the street axis (small median gap keeps
/// oncoming traffic out of hazard zones).
pub const LANE_OFFSET: f64 = 2.0;
pub const ROAD_HALF_WIDTH: f64 = LANE_OFFSET + LANE_WIDTH / 2.0;
pub const SIDEWALK_WIDTH: f64 = 1.5;
pub const MEDIAN_LINE_HALF: f64 = 0.15;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lane {
    pub id: u32,
    pub centerline: Vec<Vec2>,
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LightState {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrafficLight {
    pub id: u32,
    /// Stop line across the approach lane; crossing it on red is an
    /// infraction.
    pub stop_line: [Vec2; 2],
    /// Where the light pole stands (roadside, at the stop line).
    pub pole: Vec2,
    pub green_s: f64,
    pub yellow_s: f64,
    pub red_s: f64,
    pub phase_offset_s: f64,
}

impl TrafficLight {
    pub fn cycle(&self) -> f64 {
        self.green_s + self.yellow_s + self.red_s
    }

    pub fn state_at(&self, time: f64) -> LightState {
        let phase = (time + self.phase_offset_s).rem_euclid(self.cycle());
        if phase < self.green_s {
            LightState::Green
        } else if phase < self.green_s + self.yellow_s {
            LightState::Yellow
        } else {
            LightState::Red
        }
    }

    pub fn stop_line_center(&self) -> Vec2 {
        self.stop_line[0].add(self.stop_line[1]).scale(0.5)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Intersection {
    pub id: u32,
    pub center: Vec2,
    pub radius: f64,
}

/// Axis-aligned street segment used for fast ground classification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Street {
    pub a: Vec2,
    pub b: Vec2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TownMap {
    pub name: String,
    pub seed: u64,
    pub lane_width: f64,
    pub streets: Vec<Street>,
    pub lanes: Vec<Lane>,
    pub intersections: Vec<Intersection>,
    pub lights: Vec<TrafficLight>,
    /// Sidewalk rectangles stored as oriented boxes.
    pub sidewalks: Vec<Obb>,
    /// Static obstacles (planters, poles) placed off the road.
    pub statics: Vec<Obb>,
}

impl TownMap {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("town serializes")
    }

    pub fn from_json(text: &str) -> Result<TownMap, serde_json::Error> {
        let town: TownMap = serde_json::from_str(text)?;
        Ok(town)
    }

    /// Basic structural validation after deserialization.
    pub fn validate(&self) -> Result<(), String> {
        for lane in &self.lanes {
            if lane.centerline.len() < 2 {
                return Err(format!("lane {} has fewer than two points", lane.id));
            }
            if !(lane.width > 0.0) {
                return Err(format!("lane {} has non-positive width", lane.id));
            }
        }
        for light in &self.lights {
            if !(light.cycle() > 0.0) {
                return Err(format!("light {} has a degenerate cycle", light.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighLevelCommand {
    Follow,
    Left,
    Right,
    Straight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteCategory {
    Tiny,
    Short,
    Long,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteSpec {
    pub id: String,
    pub category: RouteCategory,
    /// Ordered world-frame goal points handed to the agent one at a time.
    pub goals: Vec<Vec2>,
    pub commands: Vec<HighLevelCommand>,
}

/// A route: its spec plus dense centerline geometry for the expert and
/// the evaluator.
#[derive(Debug, Clone)]
pub struct Route {
    pub spec: RouteSpec,
    pub path: Polyline,
}

impl Route {
    pub fn start_pose(&self) -> crate::geom::Pose {
        let p = self.path.at(0.0);
        let t = self.path.tangent(0.0);
        crate::geom::Pose::new(p.x, p.y, t.y.atan2(t.x))
    }

    pub fn end(&self) -> Vec2 {
        self.path.at(self.path.length())
    }

    pub fn length(&self) -> f64 {
        self.path.length()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TownGenConfig {
    pub grid_x: usize,
    pub grid_y: usize,
    pub spacing: f64,
    pub light_fraction: f64,
    pub num_statics: usize,
}

impl Default for TownGenConfig {
    fn default() -> Self {
        TownGenConfig {
            grid_x: 3,
            grid_y: 3,
            spacing: 80.0,
            light_fraction: 0.5,
            num_statics: 6,
        }
    }
}

/// Deterministic town from a seed.
pub fn generate_town(seed: u64, cfg: &TownGenConfig) -> TownMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 30.0;
    let x_max = (cfg.grid_x - 1) as f64 * cfg.spacing;
    let y_max = (cfg.grid_y - 1) as f64 * cfg.spacing;

    let mut streets = Vec::new();
    let mut lanes = Vec::new();
    let mut sidewalks = Vec::new();
    let mut lane_id = 0u32;

    let mut push_lane = |lanes: &mut Vec<Lane>, a: Vec2, b: Vec2| {
        lanes.push(Lane {
            id: {
                let id = lane_id;
                lane_id += 1;
                id
            },
            centerline: vec![a, b],
            width: LANE_WIDTH,
        });
    };

    // vertical streets
    for i in 0..cfg.grid_x {
        let x = i as f64 * cfg.spacing;
        let a = Vec2::new(x, -margin);
        let b = Vec2::new(x, y_max + margin);
        streets.push(Street { a, b });
        // northbound keeps the east side, southbound the west side
        push_lane(
            &mut lanes,
            Vec2::new(x + LANE_OFFSET, -margin),
            Vec2::new(x + LANE_OFFSET, y_max + margin),
        );
        push_lane(
            &mut lanes,
            Vec2::new(x - LANE_OFFSET, y_max + margin),
            Vec2::new(x - LANE_OFFSET, -margin),
        );
        for side in [-1.0, 1.0] {
            let off = side * (ROAD_HALF_WIDTH + SIDEWALK_WIDTH / 2.0);
            sidewalks.push(Obb::new(
                Vec2::new(x + off, (y_max) / 2.0),
                std::f64::consts::FRAC_PI_2,
                (y_max + 2.0 * margin) / 2.0,
                SIDEWALK_WIDTH / 2.0,
            ));
        }
    }
    // horizontal streets
    for j in 0..cfg.grid_y {
        let y = j as f64 * cfg.spacing;
        let a = Vec2::new(-margin, y);
        let b = Vec2::new(x_max + margin, y);
        streets.push(Street { a, b });
        // eastbound keeps the south side, westbound the north side
        push_lane(
            &mut lanes,
            Vec2::new(-margin, y - LANE_OFFSET),
            Vec2::new(x_max + margin, y - LANE_OFFSET),
        );
        push_lane(
            &mut lanes,
            Vec2::new(x_max + margin, y + LANE_OFFSET),
            Vec2::new(-margin, y + LANE_OFFSET),
        );
        for side in [-1.0, 1.0] {
            let off = side * (ROAD_HALF_WIDTH + SIDEWALK_WIDTH / 2.0);
            sidewalks.push(Obb::new(
                Vec2::new(x_max / 2.0, y + off),
                0.0,
                (x_max + 2.0 * margin) / 2.0,
                SIDEWALK_WIDTH / 2.0,
            ));
        }
    }

    let mut intersections = Vec::new();
    let mut lights = Vec::new();
    let mut light_id = 0u32;
    let stop_dist = 8.0;
    for i in 0..cfg.grid_x {
        for j in 0..cfg.grid_y {
            let center = Vec2::new(i as f64 * cfg.spacing, j as f64 * cfg.spacing);
            let inter_id = (i * cfg.grid_y + j) as u32;
            intersections.push(Intersection {
                id: inter_id,
                center,
                radius: stop_dist,
            });
            if rng.gen_range(0.0..1.0) >= cfg.light_fraction {
                continue;
            }
            // four approaches; north-south pair shares phase 0,
            // east-west runs on the opposite phase
            let approaches = [
                // (approach direction unit, lane offset sign for incoming lane)
                (Vec2::new(0.0, 1.0), Vec2::new(LANE_OFFSET, 0.0), 0.0), // northbound
                (Vec2::new(0.0, -1.0), Vec2::new(-LANE_OFFSET, 0.0), 0.0), // southbound
                (Vec2::new(1.0, 0.0), Vec2::new(0.0, -LANE_OFFSET), 10.0), // eastbound
                (Vec2::new(-1.0, 0.0), Vec2::new(0.0, LANE_OFFSET), 10.0), // westbound
            ];
            for (dir, lane_off, phase) in approaches {
                let stop_center = center.sub(dir.scale(stop_dist)).add(lane_off);
                let across = Vec2::new(-dir.y, dir.x);
                let half = LANE_WIDTH / 2.0;
                lights.push(TrafficLight {
                    id: light_id,
                    stop_line: [
                        stop_center.sub(across.scale(half)),
                        stop_center.add(across.scale(half)),
                    ],
                    pole: stop_center.add(across.scale(half + 0.8)),
                    green_s: 8.0,
                    yellow_s: 2.0,
                    red_s: 10.0,
                    phase_offset_s: phase,
                });
                light_id += 1;
            }
        }
    }

    let mut statics = Vec::new();
    for _ in 0..cfg.num_statics {
        let sx = rng.gen_range(-margin..x_max + margin);
        let sy = rng.gen_range(-margin..y_max + margin);
        // keep obstacles off the roads
        let clear = streets.iter().all(|s| {
            let (d, _) = crate::geom::point_segment(Vec2::new(sx, sy), s.a, s.b);
            d > ROAD_HALF_WIDTH + 2.5
        });
        if clear {
            statics.push(Obb::new(
                Vec2::new(sx, sy),
                rng.gen_range(0.0..std::f64::consts::PI),
                0.6,
                0.6,
            ));
        }
    }

    TownMap {
        name: format!("town_{seed}"),
        seed,
        lane_width: LANE_WIDTH,
        streets,
        lanes,
        intersections,
        lights,
        sidewalks,
        statics,
    }
}

/// Maneuvers available when building a route across one intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Maneuver {
    Straight,
    Left,
    Right,
}

/// Directions indexed 0..4: +y, -y, +x, -x.
const DIRS: [Vec2; 4] = [
    Vec2 { x: 0.0, y: 1.0 },
    Vec2 { x: 0.0, y: -1.0 },
    Vec2 { x: 1.0, y: 0.0 },
    Vec2 { x: -1.0, y: 0.0 },
];

fn lane_offset_for(dir: Vec2) -> Vec2 {
    // right-hand traffic: lane center sits to the right of travel
    Vec2::new(dir.y, -dir.x).scale(LANE_OFFSET)
}

fn turn_direction(incoming: Vec2, maneuver: Maneuver) -> Vec2 {
    match maneuver {
        Maneuver::Straight => incoming,
        // left turn rotates the heading +90° (counter-clockwise)
        Maneuver::Left => Vec2::new(-incoming.y, incoming.x),
        Maneuver::Right => Vec2::new(incoming.y, -incoming.x),
    }
}

/// Build a route through the grid: drive `approach` meters toward an
/// intersection, perform the maneuvers one intersection at a time, then
/// continue `exit` meters. Returns None if the geometry leaves the grid.
pub fn build_route(
    town: &TownMap,
    cfg: &TownGenConfig,
    id: &str,
    category: RouteCategory,
    start_inter: (usize, usize),
    start_dir: usize,
    maneuvers: &[Maneuver],
    approach: f64,
    exit: f64,
) -> Option<Route> {
    let spacing = cfg.spacing;
    let inter_of = |ix: i64, iy: i64| -> Option<Vec2> {
        if ix < 0 || iy < 0 || ix >= cfg.grid_x as i64 || iy >= cfg.grid_y as i64 {
            None
        } else {
            Some(Vec2::new(ix as f64 * spacing, iy as f64 * spacing))
        }
    };

    let (mut ix, mut iy) = (start_inter.0 as i64, start_inter.1 as i64);
    let mut dir = DIRS[start_dir];
    let mut center = inter_of(ix, iy)?;
    let turn_r = 8.0;

    let mut pts: Vec<Vec2> = Vec::new();
    let mut commands = Vec::new();
    let start = center.sub(dir.scale(approach)).add(lane_offset_for(dir));
    pts.push(start);
    commands.push(HighLevelCommand::Follow);

    for (mi, m) in maneuvers.iter().enumerate() {
        // entry point on the approach lane
        let entry = center.sub(dir.scale(turn_r)).add(lane_offset_for(dir));
        pts.push(entry);
        let out_dir = turn_direction(dir, *m);
        let exit_pt = center.add(out_dir.scale(turn_r)).add(lane_offset_for(out_dir));
        match m {
            Maneuver::Straight => {
                pts.push(exit_pt);
                commands.push(HighLevelCommand::Straight);
            }
            Maneuver::Left | Maneuver::Right => {
                // corner = crossing of the entry lane line and the exit lane line
                let corner = entry.add(dir.scale(exit_pt.sub(entry).dot(dir)));
                pts.extend(bezier_arc(entry, corner, exit_pt, 8));
                commands.push(if matches!(m, Maneuver::Left) {
                    HighLevelCommand::Left
                } else {
                    HighLevelCommand::Right
                });
            }
        }
        dir = out_dir;
        if mi + 1 < maneuvers.len() {
            ix += dir.x as i64;
            iy += dir.y as i64;
            center = inter_of(ix, iy)?;
        }
    }

    let last = pts[pts.len() - 1];
    let end = last.add(dir.scale(exit));
    pts.push(end);
    commands.push(HighLevelCommand::Follow);

    // keep the whole route on mapped roads
    for p in [start, end] {
        let on_road = town.streets.iter().any(|s| {
            let (d, _) = crate::geom::point_segment(p, s.a, s.b);
            d <= ROAD_HALF_WIDTH
        });
        if !on_road {
            return None;
        }
    }

    // goal points: sampled roughly every 35 m along the path, plus the end
    let path = Polyline::new(pts);
    let mut goals = Vec::new();
    let mut s = 35.0;
    while s < path.length() - 10.0 {
        goals.push(path.at(s));
        s += 35.0;
    }
    goals.push(path.at(path.length()));
    if goals.len() < 2 {
        goals.insert(0, path.at(path.length() / 2.0));
    }

    Some(Route {
        spec: RouteSpec {
            id: id.to_string(),
            category,
            goals,
            commands,
        },
        path,
    })
}

/// The five seeded tiny benchmark routes: one straight and four single
/// turns spread over the grid.
pub fn tiny_routes(town: &TownMap, cfg: &TownGenConfig, seed: u64) -> Vec<Route> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x71a2);
    let mut routes = Vec::new();
    let plans: [(&str, &[Maneuver]); 5] = [
        ("tiny_straight", &[Maneuver::Straight]),
        ("tiny_right_a", &[Maneuver::Right]),
        ("tiny_left_a", &[Maneuver::Left]),
        ("tiny_right_b", &[Maneuver::Right]),
        ("tiny_left_b", &[Maneuver::Left]),
    ];
    for (name, maneuvers) in plans {
        // retry with fresh samples until the route fits the grid
        for _ in 0..64 {
            let ix = rng.gen_range(0..cfg.grid_x);
            let iy = rng.gen_range(0..cfg.grid_y);
            let dir = rng.gen_range(0..4usize);
            if let Some(r) = build_route(
                town,
                cfg,
                name,
                RouteCategory::Tiny,
                (ix, iy),
                dir,
                maneuvers,
                30.0,
                30.0,
            ) {
                routes.push(r);
                break;
            }
        }
    }
    routes
}

/// Randomized routes for data collection: single and double maneuvers with
/// varied leg lengths.
pub fn training_routes(
    town: &TownMap,
    cfg: &TownGenConfig,
    seed: u64,
    count: usize,
) -> Vec<Route> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e51);
    let mut routes = Vec::new();
    let menu = [
        vec![Maneuver::Straight],
        vec![Maneuver::Left],
        vec![Maneuver::Right],
        vec![Maneuver::Straight, Maneuver::Left],
        vec![Maneuver::Right, Maneuver::Straight],
        vec![Maneuver::Left, Maneuver::Right],
    ];
    let mut i = 0usize;
    let mut guard = 0usize;
    while routes.len() < count && guard < count * 64 {
        guard += 1;
        let maneuvers = &menu[rng.gen_range(0..menu.len())];
        let ix = rng.gen_range(0..cfg.grid_x);
        let iy = rng.gen_range(0..cfg.grid_y);
        let dir = rng.gen_range(0..4usize);
        let approach = rng.gen_range(22.0..40.0);
        let exit = rng.gen_range(22.0..40.0);
        let id = format!("train_{}_{i}", town.seed);
        if let Some(r) = build_route(
            town,
            cfg,
            &id,
            RouteCategory::Tiny,
            (ix, iy),
            dir,
            maneuvers,
            approach,
            exit,
        ) {
            routes.push(r);
            i += 1;
        }
    }
    routes
}

/// Single-maneuver routes with longer legs (≈60–100 m).
pub fn short_routes(town: &TownMap, cfg: &TownGenConfig, seed: u64, count: usize) -> Vec<Route> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5047);
    let menu = [Maneuver::Straight, Maneuver::Left, Maneuver::Right];
    let mut routes = Vec::new();
    let mut guard = 0;
    while routes.len() < count && guard < count * 64 {
        guard += 1;
        let m = menu[rng.gen_range(0..menu.len())];
        let ix = rng.gen_range(0..cfg.grid_x);
        let iy = rng.gen_range(0..cfg.grid_y);
        let dir = rng.gen_range(0..4usize);
        if let Some(r) = build_route(
            town,
            cfg,
            &format!("short_{}", routes.len()),
            RouteCategory::Short,
            (ix, iy),
            dir,
            &[m],
            38.0,
            42.0,
        ) {
            routes.push(r);
        }
    }
    routes
}

/// Multi-intersection routes (≥4 maneuvers, ≈250–400 m).
pub fn long_routes(town: &TownMap, cfg: &TownGenConfig, seed: u64, count: usize) -> Vec<Route> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x10f6);
    let menu = [Maneuver::Straight, Maneuver::Left, Maneuver::Right];
    let mut routes = Vec::new();
    let mut guard = 0;
    while routes.len() < count && guard < count * 256 {
        guard += 1;
        let maneuvers: Vec<Maneuver> =
            (0..4).map(|_| menu[rng.gen_range(0..menu.len())]).collect();
        let ix = rng.gen_range(0..cfg.grid_x);
        let iy = rng.gen_range(0..cfg.grid_y);
        let dir = rng.gen_range(0..4usize);
        if let Some(r) = build_route(
            town,
            cfg,
            &format!("long_{}", routes.len()),
            RouteCategory::Long,
            (ix, iy),
            dir,
            &maneuvers,
            30.0,
            30.0,
        ) {
            routes.push(r);
        }
    }
    routes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn town() -> (TownMap, TownGenConfig) {
        let cfg = TownGenConfig::default();
        (generate_town(77, &cfg), cfg)
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = TownGenConfig::default();
        let a = generate_town(5, &cfg);
        let b = generate_town(5, &cfg);
        assert_eq!(a.to_json(), b.to_json());
        let c = generate_town(6, &cfg);
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn json_roundtrip() {
        let (town, _) = town();
        let json = town.to_json();
        let back = TownMap::from_json(&json).unwrap();
        assert!(back.validate().is_ok());
        assert_eq!(town.lanes.len(), back.lanes.len());
        assert_eq!(json, back.to_json());
    }

    #[test]
    fn light_cycle_states() {
        let light = TrafficLight {
            id: 0,
            stop_line: [Vec2::ZERO, Vec2::new(1.0, 0.0)],
            pole: Vec2::ZERO,
            green_s: 8.0,
            yellow_s: 2.0,
            red_s: 10.0,
            phase_offset_s: 0.0,
        };
        assert_eq!(light.state_at(0.0), LightState::Green);
        assert_eq!(light.state_at(7.9), LightState::Green);
        assert_eq!(light.state_at(8.5), LightState::Yellow);
        assert_eq!(light.state_at(10.1), LightState::Red);
        assert_eq!(light.state_at(20.1), LightState::Green); // wraps
    }

    #[test]
    fn stop_lines_pair_with_exactly_one_light() {
        let (town, _) = town();
        for (i, a) in town.lights.iter().enumerate() {
            for b in town.lights.iter().skip(i + 1) {
                assert!(
                    a.stop_line_center().dist(b.stop_line_center()) > 1.0,
                    "two lights share a stop line"
                );
            }
        }
    }

    #[test]
    fn straight_route_is_straight() {
        let (town, cfg) = town();
        let r = build_route(
            &town,
            &cfg,
            "s",
            RouteCategory::Tiny,
            (1, 1),
            0,
            &[Maneuver::Straight],
            30.0,
            30.0,
        )
        .unwrap();
        assert!(r.length() > 60.0);
        // start and end share the same x (northbound lane on a vertical street)
        assert!((r.path.at(0.0).x - r.end().x).abs() < 1e-9);
        assert!(!r.spec.goals.is_empty());
    }

    #[test]
    fn turn_route_changes_heading() {
        let (town, cfg) = town();
        let r = build_route(
            &town,
            &cfg,
            "t",
            RouteCategory::Tiny,
            (1, 1),
            0,
            &[Maneuver::Right],
            30.0,
            30.0,
        )
        .unwrap();
        let t0 = r.path.tangent(0.0);
        let t1 = r.path.tangent(r.length());
        assert!(t0.dot(t1).abs() < 1e-6, "headings should be perpendicular");
        assert!(r.spec.commands.contains(&HighLevelCommand::Right));
    }

    #[test]
    fn tiny_routes_exist_and_fit() {
        let (town, cfg) = town();
        let routes = tiny_routes(&town, &cfg, 3);
        assert_eq!(routes.len(), 5);
        for r in &routes {
            assert!(r.length() > 50.0, "{} too short", r.spec.id);
            assert_eq!(r.spec.category, RouteCategory::Tiny);
        }
    }
}
