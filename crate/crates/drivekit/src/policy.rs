//! Full driving policy: perception encoder plus waypoint head over one
//! shared parameter store, with one-call forward passes for training and
//! inference.

use crate::nn::{bind_params, BoundParams, FwdCtx, Mode, ParamStore};
use crate::perception::{encode_scene, register_perception, EncodeTrace, EncoderConfig, SensorBundle};
use crate::scalar::{Real, Scalar};
use crate::tape::{BnBatchStats, NodeId, Tape};
use crate::tensor::TensorError;
use crate::waypoint::{
    decode_waypoints, plan_from_node, register_waypoint_head, GoalPoint, WaypointPlan,
};

pub struct PolicyNet {
    pub store: ParamStore,
    pub encoder: EncoderConfig,
}

/// Handles into one completed forward pass.
pub struct PolicyForward {
    pub bound: BoundParams,
    pub scene_code: NodeId,
    pub waypoints: NodeId,
    pub trace: EncodeTrace,
}

impl PolicyNet {
    pub fn new(encoder: EncoderConfig, seed: u64) -> Result<Self, TensorError> {
        encoder.validate()?;
        let mut store = ParamStore::new();
        register_perception(&mut store, &encoder, seed);
        register_waypoint_head(&mut store, seed);
        Ok(PolicyNet { store, encoder })
    }

    pub fn from_parts(store: ParamStore, encoder: EncoderConfig) -> Result<Self, TensorError> {
        encoder.validate()?;
        Ok(PolicyNet { store, encoder })
    }

    /// encode_scene → decode_waypoints on a fresh tape. Batch-norm batch
    /// statistics from training-mode passes are returned for the caller to
    /// fold into the running averages.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bundle: &SensorBundle<S>,
        goal: GoalPoint,
        mode: Mode,
        requires_grad: bool,
    ) -> Result<(PolicyForward, Vec<(String, BnBatchStats<S>)>), TensorError> {
        let bound = bind_params(tape, &self.store, requires_grad);
        let mut trace = EncodeTrace::default();
        let mut ctx = FwdCtx::new(tape, &self.store, &bound, mode);
        let scene_code = encode_scene(&mut ctx, bundle, &self.encoder, &mut trace)?;
        let waypoints = decode_waypoints(&mut ctx, scene_code, goal, None)?;
        let bn_updates = ctx.bn_updates;
        Ok((
            PolicyForward {
                bound,
                scene_code,
                waypoints,
                trace,
            },
            bn_updates,
        ))
    }

    /// Inference at working precision with running batch-norm statistics.
    pub fn predict(
        &self,
        bundle: &SensorBundle<Real>,
        goal: GoalPoint,
    ) -> Result<WaypointPlan, TensorError> {
        let mut tape: Tape<Real> = Tape::new();
        let (fwd, _) = self.forward(&mut tape, bundle, goal, Mode::Eval, false)?;
        Ok(plan_from_node(&tape, fwd.waypoints))
    }
}

impl BoundParams {
    /// No-op marker so callers can see the binding is parameter-complete.
    pub fn assert_contains(&self, name: &str) {
        let _ = self.node(name);
    }
}
