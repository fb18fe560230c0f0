//! Lateral and longitudinal PID controllers turning a waypoint plan into
//! steer / throttle / brake.

use serde::{Deserialize, Serialize};

use crate::waypoint::WaypointPlan;

pub const MAX_THROTTLE: f64 = 0.75;
pub const PID_WINDOW: usize = 40;

/// Actuation command. `brake` forces zero throttle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleControl {
    pub steer: f64,
    pub throttle: f64,
    pub brake: bool,
}

impl VehicleControl {
    pub fn idle() -> Self {
        VehicleControl {
            steer: 0.0,
            throttle: 0.0,
            brake: false,
        }
    }

    pub fn clamped(steer: f64, throttle: f64, brake: bool) -> Self {
        VehicleControl {
            steer: steer.clamp(-1.0, 1.0),
            throttle: if brake {
                0.0
            } else {
                throttle.clamp(0.0, MAX_THROTTLE)
            },
            brake,
        }
    }

    pub fn in_range(&self) -> bool {
        (-1.0..=1.0).contains(&self.steer)
            && (0.0..=MAX_THROTTLE).contains(&self.throttle)
            && (!self.brake || self.throttle == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

/// PID with a bounded error history window.
#[derive(Debug, Clone)]
pub struct PidState {
    pub gains: PidGains,
    window: Vec<f64>,
}

impl PidState {
    pub fn new(gains: PidGains) -> Self {
        PidState {
            gains,
            window: Vec::with_capacity(PID_WINDOW),
        }
    }

    pub fn reset(&mut self) {
        self.window.clear();
    }

    /// Push an error sample and emit the PID response. The integral term is
    /// the mean of the window; the derivative is the last step difference.
    pub fn step(&mut self, error: f64) -> f64 {
        if self.window.len() == PID_WINDOW {
            self.window.remove(0);
        }
        self.window.push(error);
        let integral = self.window.iter().sum::<f64>() / self.window.len() as f64;
        let derivative = if self.window.len() >= 2 {
            self.window[self.window.len() - 1] - self.window[self.window.len() - 2]
        } else {
            0.0
        };
        self.gains.kp * error + self.gains.ki * integral + self.gains.kd * derivative
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }
}

/// Controller configuration; gains and speed-target weights are tunable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub lateral: PidGains,
    pub longitudinal: PidGains,
    /// Weights over the three consecutive waypoint gaps when deriving the
    /// desired speed.
    pub speed_weights: [f64; 3],
    /// Waypoints are spaced at the sensor rate; distance × this factor
    /// converts the weighted gap into m/s (2 FPS ⇒ 2.0).
    pub fps_factor: f64,
    /// Brake when desired speed falls below this.
    pub min_speed: f64,
    /// Brake when current speed exceeds desired by this ratio.
    pub overspeed_ratio: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            lateral: PidGains {
                kp: 1.25,
                ki: 0.75,
                kd: 0.3,
            },
            longitudinal: PidGains {
                kp: 5.0,
                ki: 0.5,
                kd: 1.0,
            },
            speed_weights: [1.0, 0.0, 0.0],
            fps_factor: 2.0,
            min_speed: 0.4,
            overspeed_ratio: 1.1,
        }
    }
}

/// Both controller states for one vehicle.
#[derive(Debug, Clone)]
pub struct ControllerState {
    pub config: ControllerConfig,
    pub lateral: PidState,
    pub longitudinal: PidState,
}

impl ControllerState {
    pub fn new(config: ControllerConfig) -> Self {
        let lateral = PidState::new(config.lateral);
        let longitudinal = PidState::new(config.longitudinal);
        ControllerState {
            config,
            lateral,
            longitudinal,
        }
    }

    pub fn reset(&mut self) {
        self.lateral.reset();
        self.longitudinal.reset();
    }
}

/// Desired speed: fps_factor × weighted sum of consecutive waypoint gaps.
pub fn desired_speed(plan: &WaypointPlan, cfg: &ControllerConfig) -> f64 {
    let mut acc = 0.0;
    for (i, w) in cfg.speed_weights.iter().enumerate() {
        let a = plan.points[i];
        let b = plan.points[i + 1];
        acc += w * ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    }
    cfg.fps_factor * acc
}

/// Longitudinal control: brake when the plan is (near) stationary or the
/// vehicle overshoots the target, otherwise PID on the speed error.
pub fn longitudinal(
    plan: &WaypointPlan,
    speed: f64,
    state: &mut ControllerState,
) -> (f64, bool) {
    let target = desired_speed(plan, &state.config);
    let brake = target < state.config.min_speed || speed / target.max(1e-9) > state.config.overspeed_ratio;
    if brake {
        return (0.0, true);
    }
    let throttle = state.longitudinal.step(target - speed).clamp(0.0, MAX_THROTTLE);
    (throttle, false)
}

/// Lateral control: aim at the midpoint of the first two waypoints; the
/// heading error (normalized by 90°) drives the steering PID.
pub fn lateral(plan: &WaypointPlan, state: &mut ControllerState) -> f64 {
    let aim = [
        (plan.points[0][0] + plan.points[1][0]) * 0.5,
        (plan.points[0][1] + plan.points[1][1]) * 0.5,
    ];
    let theta = if aim[0] == 0.0 && aim[1] == 0.0 {
        0.0
    } else {
        aim[0].atan2(aim[1]) / std::f64::consts::FRAC_PI_2
    };
    state.lateral.step(theta).clamp(-1.0, 1.0)
}

/// Compose both controllers; brake overrides throttle.
pub fn control_step(plan: &WaypointPlan, speed: f64, state: &mut ControllerState) -> VehicleControl {
    let steer = lateral(plan, state);
    let (throttle, brake) = longitudinal(plan, speed, state);
    VehicleControl::clamped(steer, throttle, brake)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p_only(kp: f64) -> ControllerState {
        let mut cfg = ControllerConfig::default();
        cfg.lateral = PidGains { kp, ki: 0.0, kd: 0.0 };
        cfg.longitudinal = PidGains { kp, ki: 0.0, kd: 0.0 };
        ControllerState::new(cfg)
    }

    fn straight_plan(gap: f64) -> WaypointPlan {
        WaypointPlan::new([[0.0, gap], [0.0, 2.0 * gap], [0.0, 3.0 * gap], [0.0, 4.0 * gap]])
    }

    #[test]
    fn identical_waypoints_brake() {
        let plan = WaypointPlan::new([[1.0, 2.0]; 4]);
        let mut st = ControllerState::new(ControllerConfig::default());
        let ctrl = control_step(&plan, 0.0, &mut st);
        assert!(ctrl.brake);
        assert_eq!(ctrl.throttle, 0.0);
    }

    #[test]
    fn origin_plan_full_stop() {
        let plan = WaypointPlan::origin();
        let mut st = ControllerState::new(ControllerConfig::default());
        let ctrl = control_step(&plan, 0.0, &mut st);
        assert_eq!((ctrl.steer, ctrl.throttle, ctrl.brake), (0.0, 0.0, true));
    }

    #[test]
    fn first_pair_one_meter_gives_two_mps() {
        // first two points 1 m apart, rest identical, weights (1,0,0)
        let plan = WaypointPlan::new([[0.0, 1.0], [0.0, 2.0], [0.0, 2.0], [0.0, 2.0]]);
        let cfg = ControllerConfig::default();
        assert!((desired_speed(&plan, &cfg) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_speed_error_zero_throttle() {
        let plan = straight_plan(1.0); // desired 2 m/s
        let mut st = p_only(5.0);
        let (throttle, brake) = longitudinal(&plan, 2.0, &mut st);
        assert!(!brake);
        assert_eq!(throttle, 0.0);
    }

    #[test]
    fn straight_ahead_steers_zero() {
        let plan = straight_plan(2.0);
        let mut st = ControllerState::new(ControllerConfig::default());
        assert_eq!(lateral(&plan, &mut st), 0.0);
    }

    #[test]
    fn forty_five_degree_aim_p_only() {
        // aim at 45° right → θ = 0.5; Kp = 1.25 → steer 0.625
        let plan = WaypointPlan::new([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]);
        let mut st = p_only(1.25);
        let steer = lateral(&plan, &mut st);
        assert!((steer - 0.625).abs() < 1e-12, "steer {steer}");
    }

    #[test]
    fn mirrored_plan_negates_steer() {
        let plan = WaypointPlan::new([[0.7, 2.0], [1.1, 4.0], [1.6, 6.0], [2.0, 8.0]]);
        let mirrored = WaypointPlan::new([
            [-0.7, 2.0],
            [-1.1, 4.0],
            [-1.6, 6.0],
            [-2.0, 8.0],
        ]);
        let mut a = ControllerState::new(ControllerConfig::default());
        let mut b = ControllerState::new(ControllerConfig::default());
        let sa = lateral(&plan, &mut a);
        let sb = lateral(&mirrored, &mut b);
        assert!((sa + sb).abs() < 1e-12, "{sa} vs {sb}");
    }

    #[test]
    fn mirrored_full_controls_mirror_steer_only() {
        let plan = WaypointPlan::new([[0.5, 1.5], [0.9, 3.0], [1.2, 4.5], [1.4, 6.0]]);
        let mirrored = WaypointPlan::new([
            [-0.5, 1.5],
            [-0.9, 3.0],
            [-1.2, 4.5],
            [-1.4, 6.0],
        ]);
        let mut a = ControllerState::new(ControllerConfig::default());
        let mut b = ControllerState::new(ControllerConfig::default());
        let ca = control_step(&plan, 1.0, &mut a);
        let cb = control_step(&mirrored, 1.0, &mut b);
        assert!((ca.steer + cb.steer).abs() < 1e-12);
        assert_eq!(ca.throttle, cb.throttle);
        assert_eq!(ca.brake, cb.brake);
    }

    #[test]
    fn straight_plan_at_rest_accelerates() {
        let plan = straight_plan(1.0);
        let mut st = ControllerState::new(ControllerConfig::default());
        let ctrl = control_step(&plan, 0.0, &mut st);
        assert!(!ctrl.brake);
        assert!(ctrl.throttle > 0.0);
        assert_eq!(ctrl.steer, 0.0);
        assert!(ctrl.in_range());
    }

    #[test]
    fn degenerate_aim_at_origin_means_no_turn() {
        let plan = WaypointPlan::new([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]]);
        let mut st = ControllerState::new(ControllerConfig::default());
        assert_eq!(lateral(&plan, &mut st), 0.0);
    }

    #[test]
    fn overspeed_triggers_brake() {
        let plan = straight_plan(1.0); // desired 2 m/s
        let mut st = ControllerState::new(ControllerConfig::default());
        let (throttle, brake) = longitudinal(&plan, 2.3, &mut st);
        assert!(brake);
        assert_eq!(throttle, 0.0);
    }

    #[test]
    fn p_only_constant_error_is_kp_times_error() {
        // window-independence of the pure proportional response
        let mut pid = PidState::new(PidGains { kp: 2.0, ki: 0.0, kd: 0.0 });
        for _ in 0..100 {
            let out = pid.step(0.7);
            assert!((out - 1.4).abs() < 1e-12);
        }
        assert_eq!(pid.window_len(), PID_WINDOW);
    }

    #[test]
    fn window_never_exceeds_bound() {
        let mut pid = PidState::new(PidGains { kp: 1.0, ki: 1.0, kd: 1.0 });
        for i in 0..200 {
            pid.step(i as f64 * 0.01);
            assert!(pid.window_len() <= PID_WINDOW);
        }
    }
}
