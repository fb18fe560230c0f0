//! Waypoint head: an MLP lifts the 16-dim scene code into the initial GRU
//! hidden state, then four autoregressive GRU steps each emit a 2D delta
//! that accumulates into the next waypoint.

use serde::{Deserialize, Serialize};

use crate::nn::{register_gru, register_linear, FwdCtx, ParamStore};
use crate::scalar::Scalar;
use crate::tape::NodeId;
use crate::tensor::{Tensor, TensorError};

/// Prediction horizon.
pub const NUM_WAYPOINTS: usize = 4;
/// GRU hidden width (MLP output).
pub const GRU_HIDDEN: usize = 64;
/// GRU input: (current point, goal) concatenated.
pub const GRU_INPUT: usize = 4;
/// Point/goal coordinates are fed to the GRU in units of 10 m; raw meters
/// (goals reach ±35) would saturate the ±1/√64-initialized gates.
pub const GRU_INPUT_SCALE: f64 = 0.1;
const MLP_DIMS: [usize; 4] = [16, 256, 128, GRU_HIDDEN];

/// Ego-frame waypoint plan: u is meters lateral-right, v meters forward,
/// with the BEV centered on the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaypointPlan {
    pub points: [[f64; 2]; NUM_WAYPOINTS],
}

impl WaypointPlan {
    pub fn new(points: [[f64; 2]; NUM_WAYPOINTS]) -> Self {
        WaypointPlan { points }
    }

    pub fn origin() -> Self {
        WaypointPlan {
            points: [[0.0; 2]; NUM_WAYPOINTS],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }

    /// Flat [u0, v0, u1, v1, ...] layout, for loss computation.
    pub fn flat(&self) -> [f64; 2 * NUM_WAYPOINTS] {
        let mut out = [0.0; 2 * NUM_WAYPOINTS];
        for (i, p) in self.points.iter().enumerate() {
            out[2 * i] = p[0];
            out[2 * i + 1] = p[1];
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        assert_eq!(flat.len(), 2 * NUM_WAYPOINTS);
        let mut points = [[0.0; 2]; NUM_WAYPOINTS];
        for (i, p) in points.iter_mut().enumerate() {
            p[0] = flat[2 * i];
            p[1] = flat[2 * i + 1];
        }
        WaypointPlan { points }
    }
}

/// Route goal expressed in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalPoint {
    pub u: f64,
    pub v: f64,
}

pub fn register_waypoint_head(store: &mut ParamStore, seed: u64) {
    for (i, pair) in MLP_DIMS.windows(2).enumerate() {
        register_linear(store, &format!("head.mlp.fc{i}"), pair[0], pair[1], seed);
    }
    register_gru(store, "head.gru", GRU_INPUT, GRU_HIDDEN, seed);
    // zero-initialized output head: the untrained policy emits the origin
    // plan instead of amplifying the unnormalized scene-code scale
    store.register(
        "head.delta.weight",
        vec![GRU_HIDDEN, 2],
        crate::nn::Init::Zeros,
        seed,
    );
    store.register("head.delta.bias", vec![2], crate::nn::Init::Zeros, seed);
}

/// Decode the scene code into the waypoint node (shape [8], flat u/v pairs).
/// The first GRU step starts from the origin; each step's input is the
/// current point concatenated with the goal.
pub fn decode_waypoints<S: Scalar>(
    ctx: &mut FwdCtx<'_, S>,
    scene_code: NodeId,
    goal: GoalPoint,
    trace: Option<&mut Vec<NodeId>>,
) -> Result<NodeId, TensorError> {
    let code = ctx.tape.reshape(scene_code, vec![1, MLP_DIMS[0]]);
    let mut h = code;
    for i in 0..MLP_DIMS.len() - 1 {
        h = ctx.linear(h, &format!("head.mlp.fc{i}"))?;
        h = ctx.tape.relu(h);
    }

    let scale = S::from_f64(GRU_INPUT_SCALE);
    let goal_node = ctx.tape.constant(Tensor::new(
        vec![1, 2],
        vec![S::from_f64(goal.u), S::from_f64(goal.v)],
    ));
    let goal_scaled = ctx.tape.scale(goal_node, scale);
    let mut point = ctx.tape.constant(Tensor::zeros(vec![1, 2]));
    let mut emitted = Vec::with_capacity(NUM_WAYPOINTS);
    for _ in 0..NUM_WAYPOINTS {
        let point_scaled = ctx.tape.scale(point, scale);
        let point_and_goal = ctx.tape.concat_cols(&[point_scaled, goal_scaled]);
        h = ctx.gru_cell(point_and_goal, h, "head.gru")?;
        let delta = ctx.linear(h, "head.delta")?;
        point = ctx.tape.add(point, delta)?;
        emitted.push(point);
    }
    if let Some(t) = trace {
        t.extend_from_slice(&emitted);
    }
    Ok(ctx.tape.concat_flat(&emitted))
}

/// Read a decoded waypoint node back into a plan.
pub fn plan_from_node<S: Scalar>(tape: &crate::tape::Tape<S>, node: NodeId) -> WaypointPlan {
    let data = tape.data(node);
    assert_eq!(data.len(), 2 * NUM_WAYPOINTS);
    let flat: Vec<f64> = data.iter().map(|v| v.to_f64()).collect();
    WaypointPlan::from_flat(&flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{bind_params, Mode};
    use crate::tape::Tape;

    fn head_store(seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        register_waypoint_head(&mut store, seed);
        store
    }

    /// The delta head ships zero-initialized; give it generic weights so
    /// sensitivity probes see a live path.
    fn randomize_delta(store: &mut ParamStore, scale: f32) {
        let w = store.get_mut("head.delta.weight");
        for (i, v) in w.data.iter_mut().enumerate() {
            *v = ((i as f32 * 0.7129).sin()) * scale;
        }
    }

    fn decode(store: &ParamStore, code: Vec<f64>, goal: GoalPoint) -> WaypointPlan {
        let mut tape: Tape<f64> = Tape::new();
        let bound = bind_params(&mut tape, store, false);
        let c = tape.constant(Tensor::new(vec![16], code));
        let mut ctx = FwdCtx::new(&mut tape, store, &bound, Mode::Eval);
        let node = decode_waypoints(&mut ctx, c, goal, None).unwrap();
        plan_from_node(&tape, node)
    }

    #[test]
    fn zero_delta_head_keeps_origin() {
        let mut store = head_store(3);
        store.get_mut("head.delta.weight").data.iter_mut().for_each(|v| *v = 0.0);
        store.get_mut("head.delta.bias").data.iter_mut().for_each(|v| *v = 0.0);
        let plan = decode(&store, vec![0.3; 16], GoalPoint { u: 1.0, v: 9.0 });
        assert_eq!(plan.points, [[0.0, 0.0]; 4]);
    }

    #[test]
    fn constant_delta_accumulates() {
        // force the delta head to emit (1, 0) each step
        let mut store = head_store(3);
        store.get_mut("head.delta.weight").data.iter_mut().for_each(|v| *v = 0.0);
        let b = store.get_mut("head.delta.bias");
        b.data[0] = 1.0;
        b.data[1] = 0.0;
        let plan = decode(&store, vec![0.1; 16], GoalPoint { u: 0.0, v: 5.0 });
        let expect = [[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]];
        for (p, e) in plan.points.iter().zip(expect.iter()) {
            assert!((p[0] - e[0]).abs() < 1e-9 && (p[1] - e[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn always_four_points() {
        let mut store = head_store(17);
        randomize_delta(&mut store, 0.2);
        let plan = decode(&store, (0..16).map(|i| i as f64 * 0.05).collect(), GoalPoint { u: 2.0, v: 8.0 });
        assert_eq!(plan.points.len(), 4);
        assert!(plan.is_finite());
    }

    #[test]
    fn goal_perturbation_changes_plan() {
        let mut store = head_store(23);
        randomize_delta(&mut store, 0.2);
        let code: Vec<f64> = (0..16).map(|i| (i as f64 * 0.4).sin()).collect();
        let a = decode(&store, code.clone(), GoalPoint { u: 0.0, v: 10.0 });
        let b = decode(&store, code, GoalPoint { u: 1.0, v: 10.0 });
        assert_ne!(a.points, b.points, "plan ignored the goal");
    }

    #[test]
    fn points_are_prefix_sums_of_deltas() {
        let mut store = head_store(29);
        randomize_delta(&mut store, 0.2);
        let mut tape: Tape<f64> = Tape::new();
        let bound = bind_params(&mut tape, &store, false);
        let c = tape.constant(Tensor::new(vec![16], vec![0.2; 16]));
        let mut ctx = FwdCtx::new(&mut tape, &store, &bound, Mode::Eval);
        let mut emitted = Vec::new();
        let node = decode_waypoints(&mut ctx, c, GoalPoint { u: 1.0, v: 4.0 }, Some(&mut emitted))
            .unwrap();
        let plan = plan_from_node(&tape, node);
        // each emitted point node is the running sum; consecutive differences
        // are the per-step deltas, and the final point equals their total
        let mut prev = [0.0f64; 2];
        let mut total = [0.0f64; 2];
        for (i, &p) in emitted.iter().enumerate() {
            let cur = tape.data(p);
            let delta = [cur[0] - prev[0], cur[1] - prev[1]];
            total[0] += delta[0];
            total[1] += delta[1];
            assert_eq!(plan.points[i], [cur[0], cur[1]]);
            prev = [cur[0], cur[1]];
        }
        assert!((total[0] - plan.points[3][0]).abs() < 1e-12);
        assert!((total[1] - plan.points[3][1]).abs() < 1e-12);
    }
}
