//! The trained policy wrapped as a closed-loop driver: render sensors,
//! encode the scene, decode waypoints, run the PID controllers.

use crate::control::{control_step, ControllerConfig, ControllerState, VehicleControl};
use crate::dataset::current_goal;
use crate::eval::Driver;
use crate::io::{chw_to_rgb8, rgb8_to_chw};
use crate::perception::{SensorBundle, INPUT_SIDE};
use crate::policy::PolicyNet;
use crate::render::{palette_to_rgb, render_cameras, render_semantic_bev, Weather};
use crate::scalar::Real;
use crate::sim::World;
use crate::tensor::Tensor;
use crate::town::Route;

pub struct PolicyAgent<'a> {
    net: &'a PolicyNet,
    controller: ControllerState,
    weather: Weather,
}

impl<'a> PolicyAgent<'a> {
    pub fn new(net: &'a PolicyNet, controller: ControllerConfig, weather: Weather) -> Self {
        PolicyAgent {
            net,
            controller: ControllerState::new(controller),
            weather,
        }
    }
}

/// Sensor synthesis shared by the agent and the recorder: rasters pass
/// through the same 8-bit quantization the dataset uses, so closed-loop
/// inputs match the training distribution.
pub fn sense(world: &World, weather: Weather) -> SensorBundle<Real> {
    let rgb = render_cameras(world, weather);
    let quantize = |chw: &[f32]| {
        let bytes = chw_to_rgb8(chw, INPUT_SIDE, INPUT_SIDE);
        Tensor::new(
            vec![3, INPUT_SIDE, INPUT_SIDE],
            rgb8_to_chw(&bytes, INPUT_SIDE, INPUT_SIDE),
        )
    };
    let sem = render_semantic_bev(world);
    SensorBundle::new(
        quantize(&rgb[0]),
        quantize(&rgb[1]),
        quantize(&rgb[2]),
        Tensor::new(vec![3, INPUT_SIDE, INPUT_SIDE], palette_to_rgb(&sem)),
        world.ego.speed,
    )
    .expect("rendered bundle is well-formed")
}

impl Driver for PolicyAgent<'_> {
    fn act(&mut self, world: &World, route: &Route) -> Result<VehicleControl, String> {
        let bundle = sense(world, self.weather);
        let goal_arcs = crate::dataset::goal_arc_positions(route);
        let goal = current_goal(route, &goal_arcs, world.ego.pose);
        let plan = self
            .net
            .predict(&bundle, goal)
            .map_err(|e| format!("policy forward failed: {e}"))?;
        if !plan.is_finite() {
            return Err("policy emitted non-finite waypoints".into());
        }
        Ok(control_step(&plan, world.ego.speed, &mut self.controller))
    }
}
