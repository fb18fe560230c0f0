//! Expert dataset: 2 FPS recording of camera/BEV frames with future-pose
//! waypoint labels, the on-disk layout and manifest, loading, and the
//! rotation + noise augmentation.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::VehicleControl;
use crate::expert::{expert_step, ExpertConfig};
use crate::geom::Pose;
use crate::io;
use crate::perception::{SensorBundle, INPUT_SIDE};
use crate::render::{
    palette_to_rgb, render_cameras, render_semantic_bev, Weather, BEV_EXTENT_M, BEV_RES,
    METERS_PER_PIXEL,
};
use crate::scalar::Real;
use crate::sim::{SimConfig, World};
use crate::tensor::Tensor;
use crate::town::{Route, TownMap};
use crate::util::fnv1a64;
use crate::waypoint::{GoalPoint, WaypointPlan, NUM_WAYPOINTS};

pub const DATASET_SCHEMA: &str = "DKDS1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        source: crate::io::ImageError,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unsupported dataset schema {0:?}")]
    BadSchema(String),
    #[error("frame index {index} out of range for route {route_id} ({frames} frames)")]
    FrameOutOfRange {
        route_id: String,
        index: usize,
        frames: usize,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One training sample as stored on disk.
#[derive(Debug, Clone)]
pub struct Frame {
    pub rgb_center: Vec<u8>,
    pub rgb_right: Vec<u8>,
    pub rgb_left: Vec<u8>,
    pub sem_bev: Vec<u8>,
    pub speed: f64,
    pub goal: GoalPoint,
    pub expert_waypoints: WaypointPlan,
    pub expert_control: VehicleControl,
    pub route_id: String,
    pub timestamp: f64,
}

/// Per-frame metadata record in meta.jsonl.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameMeta {
    pub index: usize,
    pub t: f64,
    pub speed: f64,
    pub goal: GoalPoint,
    pub waypoints: [[f64; 2]; NUM_WAYPOINTS],
    pub control: VehicleControl,
    pub weather: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteRecord {
    pub route_id: String,
    pub town: String,
    pub weather: String,
    pub frames: usize,
    pub complete: bool,
    pub infractions: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub seed: u64,
    pub fingerprint: String,
    pub total_frames: usize,
    pub routes: Vec<RouteRecord>,
}

impl DatasetManifest {
    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    pub fn read(dir: &Path) -> Result<DatasetManifest, DatasetError> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|source| {
            DatasetError::Json {
                path: path.clone(),
                source,
            }
        })?;
        if m.schema != DATASET_SCHEMA {
            return Err(DatasetError::BadSchema(m.schema));
        }
        Ok(m)
    }
}

/// Index of the goal the agent is currently driving toward: the first goal
/// whose arc position lies ahead of the ego's projection.
pub fn current_goal(route: &Route, goal_arcs: &[f64], ego: Pose) -> GoalPoint {
    let (s_ego, _) = route.path.project(ego.position);
    let idx = goal_arcs
        .iter()
        .position(|&s| s > s_ego + 1.0)
        .unwrap_or(route.spec.goals.len() - 1);
    let g = route.spec.goals[idx];
    let (u, v) = ego.world_to_ego(g);
    GoalPoint { u, v }
}

pub fn goal_arc_positions(route: &Route) -> Vec<f64> {
    route
        .spec
        .goals
        .iter()
        .map(|g| route.path.project(*g).0)
        .collect()
}

struct PendingFrame {
    rgb: [Vec<f32>; 3],
    sem: Vec<u8>,
    speed: f64,
    goal: GoalPoint,
    control: VehicleControl,
    pose: Pose,
    t: f64,
}

pub struct RouteRollout {
    pub record: RouteRecord,
    pub frames: Vec<Frame>,
}

/// Roll the expert out on one route at 2 FPS, producing labeled frames.
/// Waypoint labels are the ego-frame positions of the poses 0.5–2.0 s
/// ahead; trailing frames reuse the final (stopped) pose.
pub fn record_route(
    town: &TownMap,
    route: &Route,
    sim: &SimConfig,
    expert: &ExpertConfig,
    weather: Weather,
    seed: u64,
    max_seconds: f64,
) -> RouteRollout {
    let world_seed = seed ^ fnv1a64(route.spec.id.as_bytes());
    let mut world = World::new(town.clone(), sim.clone(), route.start_pose(), world_seed);
    let goal_arcs = goal_arc_positions(route);
    let ticks_per_sensor = (sim.sensor_dt / sim.dt).round() as usize;
    let max_ticks = (max_seconds / sim.dt) as usize;

    let mut pending: Vec<PendingFrame> = Vec::new();
    let mut poses: Vec<Pose> = Vec::new();
    let mut infractions = 0usize;
    let mut complete = false;
    let mut control = VehicleControl::idle();

    for tick in 0..max_ticks {
        if tick % ticks_per_sensor == 0 {
            let (c, done) = expert_step(&world, route, expert);
            control = c;
            if done {
                complete = true;
                break;
            }
            let rgb = render_cameras(&world, weather);
            let sem = render_semantic_bev(&world);
            let goal = current_goal(route, &goal_arcs, world.ego.pose);
            pending.push(PendingFrame {
                rgb,
                sem,
                speed: world.ego.speed,
                goal,
                control,
                pose: world.ego.pose,
                t: world.time,
            });
            poses.push(world.ego.pose);
        }
        world.step(&control, sim.dt);
        infractions += world.detect_infractions().len();
    }
    // final pose closes out the trailing labels
    poses.push(world.ego.pose);

    let last_pose = *poses.last().unwrap();
    let frames: Vec<Frame> = pending
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut points = [[0.0f64; 2]; NUM_WAYPOINTS];
            for (k, point) in points.iter_mut().enumerate() {
                let future = poses.get(i + k + 1).copied().unwrap_or(last_pose);
                let (u, v) = p.pose.world_to_ego(future.position);
                *point = [u, v];
            }
            Frame {
                rgb_center: io::chw_to_rgb8(&p.rgb[0], INPUT_SIDE, INPUT_SIDE),
                rgb_right: io::chw_to_rgb8(&p.rgb[1], INPUT_SIDE, INPUT_SIDE),
                rgb_left: io::chw_to_rgb8(&p.rgb[2], INPUT_SIDE, INPUT_SIDE),
                sem_bev: p.sem,
                speed: p.speed,
                goal: p.goal,
                expert_waypoints: WaypointPlan::new(points),
                expert_control: p.control,
                route_id: route.spec.id.clone(),
                timestamp: p.t,
            }
        })
        .collect();

    RouteRollout {
        record: RouteRecord {
            route_id: route.spec.id.clone(),
            town: town.name.clone(),
            weather: weather.name().to_string(),
            frames: frames.len(),
            complete,
            infractions,
        },
        frames,
    }
}

/// Write one rollout under `out_dir/route_<id>/`.
pub fn write_route(out_dir: &Path, rollout: &RouteRollout) -> Result<(), DatasetError> {
    let dir = out_dir.join(format!("route_{}", rollout.record.route_id));
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut meta = String::new();
    for (i, f) in rollout.frames.iter().enumerate() {
        for (suffix, data) in [
            ("center", &f.rgb_center),
            ("right", &f.rgb_right),
            ("left", &f.rgb_left),
        ] {
            let path = dir.join(format!("frame_{i}.{suffix}.ppm"));
            io::write_ppm(&path, INPUT_SIDE, INPUT_SIDE, data).map_err(|source| {
                DatasetError::Image {
                    path: path.clone(),
                    source,
                }
            })?;
        }
        let sem_path = dir.join(format!("frame_{i}.sem.pgm"));
        io::write_pgm(&sem_path, BEV_RES, BEV_RES, &f.sem_bev).map_err(|source| {
            DatasetError::Image {
                path: sem_path.clone(),
                source,
            }
        })?;
        let rec = FrameMeta {
            index: i,
            t: f.timestamp,
            speed: f.speed,
            goal: f.goal,
            waypoints: f.expert_waypoints.points,
            control: f.expert_control,
            weather: rollout.record.weather.clone(),
        };
        meta.push_str(&serde_json::to_string(&rec).unwrap());
        meta.push('\n');
    }
    let meta_path = dir.join("meta.jsonl");
    std::fs::write(&meta_path, meta).map_err(|e| io_err(&meta_path, e))
}

/// Load one frame from disk.
pub fn load_frame(root: &Path, route: &RouteRecord, index: usize) -> Result<Frame, DatasetError> {
    if index >= route.frames {
        return Err(DatasetError::FrameOutOfRange {
            route_id: route.route_id.clone(),
            index,
            frames: route.frames,
        });
    }
    let dir = root.join(format!("route_{}", route.route_id));
    let meta_path = dir.join("meta.jsonl");
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let line = meta_text.lines().nth(index).ok_or_else(|| {
        DatasetError::FrameOutOfRange {
            route_id: route.route_id.clone(),
            index,
            frames: route.frames,
        }
    })?;
    let meta: FrameMeta = serde_json::from_str(line).map_err(|source| DatasetError::Json {
        path: meta_path.clone(),
        source,
    })?;

    let read_rgb = |suffix: &str| -> Result<Vec<u8>, DatasetError> {
        let path = dir.join(format!("frame_{index}.{suffix}.ppm"));
        let (w, h, data) = io::read_ppm(&path).map_err(|source| DatasetError::Image {
            path: path.clone(),
            source,
        })?;
        if (w, h) != (INPUT_SIDE, INPUT_SIDE) {
            return Err(DatasetError::Image {
                path,
                source: crate::io::ImageError::Dims(w, h),
            });
        }
        Ok(data)
    };
    let rgb_center = read_rgb("center")?;
    let rgb_right = read_rgb("right")?;
    let rgb_left = read_rgb("left")?;
    let sem_path = dir.join(format!("frame_{index}.sem.pgm"));
    let (w, h, sem_bev) = io::read_pgm(&sem_path).map_err(|source| DatasetError::Image {
        path: sem_path.clone(),
        source,
    })?;
    if (w, h) != (BEV_RES, BEV_RES) {
        return Err(DatasetError::Image {
            path: sem_path,
            source: crate::io::ImageError::Dims(w, h),
        });
    }

    Ok(Frame {
        rgb_center,
        rgb_right,
        rgb_left,
        sem_bev,
        speed: meta.speed,
        goal: meta.goal,
        expert_waypoints: WaypointPlan::new(meta.waypoints),
        expert_control: meta.control,
        route_id: route.route_id.clone(),
        timestamp: meta.t,
    })
}

/// Flat index over every frame in a manifest, in manifest order.
pub fn frame_index(manifest: &DatasetManifest) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(manifest.total_frames);
    for (ri, r) in manifest.routes.iter().enumerate() {
        for fi in 0..r.frames {
            out.push((ri, fi));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Yaw rotation bound in degrees.
    pub max_rotation_deg: f64,
    /// Gaussian pixel-noise σ in [0,1] units.
    pub noise_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_rotation_deg: 5.0,
            noise_sigma: 0.02,
        }
    }
}

/// Rotate an ego-frame point by `theta`: (0, d) → (−d·sinθ, d·cosθ).
pub fn rotate_label(p: [f64; 2], theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [p[0] * c - p[1] * s, p[0] * s + p[1] * c]
}

fn rotate_bev_nearest(sem: &[u8], theta: f64) -> Vec<u8> {
    let mut out = vec![0u8; BEV_RES * BEV_RES];
    let (s, c) = (-theta).sin_cos();
    for row in 0..BEV_RES {
        let v = BEV_EXTENT_M / 2.0 - (row as f64 + 0.5) * METERS_PER_PIXEL;
        for col in 0..BEV_RES {
            let u = (col as f64 + 0.5) * METERS_PER_PIXEL - BEV_EXTENT_M / 2.0;
            // source location rotated by −θ
            let us = u * c - v * s;
            let vs = u * s + v * c;
            let sc = ((us + BEV_EXTENT_M / 2.0) / METERS_PER_PIXEL - 0.5).round() as i64;
            let sr = ((BEV_EXTENT_M / 2.0 - vs) / METERS_PER_PIXEL - 0.5).round() as i64;
            if (0..BEV_RES as i64).contains(&sc) && (0..BEV_RES as i64).contains(&sr) {
                out[row * BEV_RES + col] = sem[sr as usize * BEV_RES + sc as usize];
            }
        }
    }
    out
}

/// Horizontal shift approximating a camera yaw of `theta` (content moves
/// left for positive θ); vacated columns are black.
fn shift_camera(rgb: &[u8], theta: f64) -> Vec<u8> {
    let focal = INPUT_SIDE as f64 / 2.0 / (45.0f64.to_radians()).tan();
    let dx = (-theta * focal).round() as i64;
    let w = INPUT_SIDE as i64;
    let mut out = vec![0u8; rgb.len()];
    for row in 0..INPUT_SIDE as i64 {
        for col in 0..w {
            let src = col - dx;
            if (0..w).contains(&src) {
                let d = 3 * (row * w + col) as usize;
                let s = 3 * (row * w + src) as usize;
                out[d..d + 3].copy_from_slice(&rgb[s..s + 3]);
            }
        }
    }
    out
}

fn add_noise(rgb: &mut [u8], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma <= 0.0 {
        return;
    }
    let sigma = sigma as f32;
    // Box-Muller, consuming both draws of each pair
    let mut i = 0;
    while i < rgb.len() {
        let u1: f32 = rng.gen_range(1e-12f32..1.0);
        let u2: f32 = rng.gen_range(0.0f32..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f32::consts::PI * u2).sin_cos();
        for z in [r * c, r * s] {
            if i >= rgb.len() {
                break;
            }
            let x = rgb[i] as f32 / 255.0 + sigma * z;
            rgb[i] = (x.clamp(0.0, 1.0) * 255.0).round() as u8;
            i += 1;
        }
    }
}

/// Apply the yaw-rotation + noise augmentation with the given draw.
pub fn augment_frame(frame: &Frame, theta: f64, sigma: f64, rng: &mut ChaCha8Rng) -> Frame {
    let mut out = frame.clone();
    if theta != 0.0 {
        out.sem_bev = rotate_bev_nearest(&frame.sem_bev, theta);
        out.rgb_center = shift_camera(&frame.rgb_center, theta);
        out.rgb_right = shift_camera(&frame.rgb_right, theta);
        out.rgb_left = shift_camera(&frame.rgb_left, theta);
        let mut points = frame.expert_waypoints.points;
        for p in points.iter_mut() {
            *p = rotate_label(*p, theta);
        }
        out.expert_waypoints = WaypointPlan::new(points);
        let g = rotate_label([frame.goal.u, frame.goal.v], theta);
        out.goal = GoalPoint { u: g[0], v: g[1] };
    }
    add_noise(&mut out.rgb_center, sigma, rng);
    add_noise(&mut out.rgb_right, sigma, rng);
    add_noise(&mut out.rgb_left, sigma, rng);
    out
}

/// Load a batch by flat indices; when `augment` is set, each frame gets an
/// independent rotation and noise draw from the stream.
pub fn load_batch(
    root: &Path,
    manifest: &DatasetManifest,
    index: &[(usize, usize)],
    picks: &[usize],
    augment: Option<(&AugmentConfig, &mut ChaCha8Rng)>,
) -> Result<Vec<Frame>, DatasetError> {
    let mut frames = Vec::with_capacity(picks.len());
    for &p in picks {
        let (ri, fi) = index[p];
        frames.push(load_frame(root, &manifest.routes[ri], fi)?);
    }
    if let Some((cfg, rng)) = augment {
        let bound = cfg.max_rotation_deg.to_radians();
        for f in frames.iter_mut() {
            let theta = if bound > 0.0 {
                rng.gen_range(-bound..bound)
            } else {
                0.0
            };
            *f = augment_frame(f, theta, cfg.noise_sigma, rng);
        }
    }
    Ok(frames)
}

/// Convert a frame into the network input bundle (palette-coded BEV,
/// [0,1] camera floats) plus its label.
pub fn frame_to_sample(frame: &Frame) -> (SensorBundle<Real>, GoalPoint, WaypointPlan) {
    let to_tensor = |rgb: &[u8]| {
        Tensor::new(
            vec![3, INPUT_SIDE, INPUT_SIDE],
            io::rgb8_to_chw(rgb, INPUT_SIDE, INPUT_SIDE),
        )
    };
    let sem_rgb = palette_to_rgb(&frame.sem_bev);
    let bundle = SensorBundle::new(
        to_tensor(&frame.rgb_center),
        to_tensor(&frame.rgb_right),
        to_tensor(&frame.rgb_left),
        Tensor::new(vec![3, INPUT_SIDE, INPUT_SIDE], sem_rgb),
        frame.speed,
    )
    .expect("recorded frames are well-formed");
    (bundle, frame.goal, frame.expert_waypoints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use crate::town::{build_route, generate_town, Maneuver, RouteCategory, TownGenConfig};

    fn small_rollout() -> (TownMap, Route, RouteRollout) {
        let gen = TownGenConfig::default();
        let town = generate_town(11, &gen);
        let route = build_route(
            &town,
            &gen,
            "r1",
            RouteCategory::Tiny,
            (1, 1),
            0,
            &[Maneuver::Straight],
            25.0,
            25.0,
        )
        .unwrap();
        let sim = SimConfig {
            num_npc_vehicles: 2,
            num_pedestrians: 2,
            ..SimConfig::default()
        };
        let rollout = record_route(
            &town,
            &route,
            &sim,
            &ExpertConfig::default(),
            Weather::ClearNoon,
            7,
            60.0,
        );
        (town, route, rollout)
    }

    #[test]
    fn rollout_produces_consistent_frames() {
        let (_, _, rollout) = small_rollout();
        assert!(rollout.record.complete, "expert should finish the route");
        assert_eq!(rollout.record.infractions, 0);
        assert!(rollout.frames.len() > 10);
        // timestamps strictly increasing at the sensor period
        for w in rollout.frames.windows(2) {
            let dt = w[1].timestamp - w[0].timestamp;
            assert!((dt - 0.5).abs() < 1e-9, "spacing {dt}");
        }
        // moving frames: first waypoint sits ahead of the ego
        let moving = rollout
            .frames
            .iter()
            .find(|f| f.speed > 3.0)
            .expect("expert reaches speed");
        assert!(moving.expert_waypoints.points[0][1] > 0.5);
        assert!(moving.goal.v > 0.0, "goal should be ahead");
    }

    #[test]
    fn first_label_is_half_second_lookahead() {
        let (_, _, rollout) = small_rollout();
        // at constant speed v the first waypoint is ≈ v · 0.5 s ahead
        let f = rollout
            .frames
            .iter()
            .filter(|f| f.speed > 4.0)
            .nth(2)
            .expect("cruise frames exist");
        let d = (f.expert_waypoints.points[0][0].powi(2)
            + f.expert_waypoints.points[0][1].powi(2))
        .sqrt();
        let expect = f.speed * 0.5;
        assert!(
            (d - expect).abs() < 0.6,
            "first waypoint at {d:.2} m, expected ≈{expect:.2} m"
        );
    }

    #[test]
    fn write_load_roundtrip() {
        let (_, _, rollout) = small_rollout();
        let dir = tempfile::tempdir().unwrap();
        write_route(dir.path(), &rollout).unwrap();
        let manifest = DatasetManifest {
            schema: DATASET_SCHEMA.into(),
            seed: 7,
            fingerprint: "x".into(),
            total_frames: rollout.frames.len(),
            routes: vec![rollout.record.clone()],
        };
        manifest.write(dir.path()).unwrap();

        let back = DatasetManifest::read(dir.path()).unwrap();
        assert_eq!(back.total_frames, rollout.frames.len());
        let f = load_frame(dir.path(), &back.routes[0], 3).unwrap();
        assert_eq!(f.rgb_center, rollout.frames[3].rgb_center);
        assert_eq!(f.sem_bev, rollout.frames[3].sem_bev);
        assert_eq!(f.expert_waypoints, rollout.frames[3].expert_waypoints);
        assert_eq!(f.speed, rollout.frames[3].speed);

        // out-of-range is a typed error naming the frame
        let err = load_frame(dir.path(), &back.routes[0], 10_000).unwrap_err();
        assert!(matches!(err, DatasetError::FrameOutOfRange { .. }));
    }

    #[test]
    fn recording_is_deterministic() {
        let (_, _, a) = small_rollout();
        let (_, _, b) = small_rollout();
        assert_eq!(a.frames.len(), b.frames.len());
        assert_eq!(a.frames[5].rgb_center, b.frames[5].rgb_center);
        assert_eq!(a.frames[5].expert_waypoints, b.frames[5].expert_waypoints);
    }

    #[test]
    fn label_rotation_matches_rotation_matrix() {
        // θ = +5°: (0, d) → (−d·sin5°, d·cos5°)
        let theta = 5.0f64.to_radians();
        let p = rotate_label([0.0, 2.0], theta);
        assert!((p[0] + 2.0 * theta.sin()).abs() < 1e-12);
        assert!((p[1] - 2.0 * theta.cos()).abs() < 1e-12);
    }

    #[test]
    fn rotation_roundtrips_labels() {
        let theta = 3.3f64.to_radians();
        let orig = [1.25, 7.5];
        let back = rotate_label(rotate_label(orig, theta), -theta);
        assert!((back[0] - orig[0]).abs() < 1e-9);
        assert!((back[1] - orig[1]).abs() < 1e-9);
    }

    #[test]
    fn identity_augmentation_is_identity() {
        let (_, _, rollout) = small_rollout();
        let f = &rollout.frames[2];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment_frame(f, 0.0, 0.0, &mut rng);
        assert_eq!(out.rgb_center, f.rgb_center);
        assert_eq!(out.sem_bev, f.sem_bev);
        assert_eq!(out.expert_waypoints, f.expert_waypoints);
        assert_eq!(out.goal.u, f.goal.u);
    }

    #[test]
    fn augmentation_rotates_bev_content() {
        let (_, _, rollout) = small_rollout();
        let f = &rollout.frames[2];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment_frame(f, 5.0f64.to_radians(), 0.0, &mut rng);
        assert_ne!(out.sem_bev, f.sem_bev);
        assert_ne!(out.rgb_center, f.rgb_center);
        // rotating back recovers most of the raster (border loss aside)
        let back = rotate_bev_nearest(&out.sem_bev, -5.0f64.to_radians());
        let same = back
            .iter()
            .zip(f.sem_bev.iter())
            .filter(|(a, b)| a == b)
            .count();
        assert!(same as f64 / back.len() as f64 > 0.93);
    }

    #[test]
    fn sample_conversion_shapes() {
        let (_, _, rollout) = small_rollout();
        let (bundle, goal, plan) = frame_to_sample(&rollout.frames[0]);
        assert_eq!(bundle.image_center.shape, vec![3, 256, 256]);
        assert!(bundle.semantic_bev.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(goal.v.is_finite());
        assert!(plan.is_finite());
    }
}
