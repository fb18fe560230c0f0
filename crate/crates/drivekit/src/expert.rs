//! Privileged expert: pure-pursuit steering along the route centerline with
//! hazard braking from direct world-state access. Generates supervision for
//! imitation learning.

use serde::{Deserialize, Serialize};

use crate::control::{VehicleControl, MAX_THROTTLE};
use crate::sim::World;
use crate::town::{Route, LANE_WIDTH};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub cruise_speed: f64,
    /// Hazard rectangle: this far ahead of the front bumper …
    pub hazard_length: f64,
    /// … and this wide (1.5 lane widths).
    pub hazard_width: f64,
    pub lookahead_min: f64,
    pub lookahead_max: f64,
    pub lookahead_gain: f64,
    /// Comfort deceleration used to slow for the route end.
    pub stop_decel: f64,
    /// Speed cap while the path ahead bends sharply.
    pub turn_speed: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            cruise_speed: 6.0,
            hazard_length: 8.0,
            hazard_width: 1.5 * LANE_WIDTH,
            lookahead_min: 3.0,
            lookahead_max: 8.0,
            lookahead_gain: 0.6,
            stop_decel: 2.0,
            turn_speed: 3.5,
        }
    }
}

/// One expert decision. `done` reports route exhaustion; the control is
/// zeroed (full stop) once done.
pub fn expert_step(world: &World, route: &Route, cfg: &ExpertConfig) -> (VehicleControl, bool) {
    let ego = &world.ego;
    let (s_ego, _lat) = route.path.project(ego.pose.position);
    let remaining = route.length() - s_ego;
    if remaining <= 2.0 {
        return (
            VehicleControl {
                steer: 0.0,
                throttle: 0.0,
                brake: true,
            },
            true,
        );
    }

    // pure pursuit on the route centerline
    let lookahead = (cfg.lookahead_min + cfg.lookahead_gain * ego.speed)
        .clamp(cfg.lookahead_min, cfg.lookahead_max);
    let target = route.path.at(s_ego + lookahead);
    let (u, v) = ego.pose.world_to_ego(target);
    let alpha = u.atan2(v.max(0.1));
    let delta = (2.0 * ego.wheelbase * alpha.sin()).atan2(lookahead);
    let steer = (delta / world.config.max_steer).clamp(-1.0, 1.0);

    // hazard check: actor boxes or a red stop line inside the zone
    let zone = World::hazard_zone(&ego.pose, cfg.hazard_length, cfg.hazard_width);
    let blocked =
        world.zone_blocked(&zone, None, false) || world.red_light_in_zone(&zone, ego.pose.forward());

    // target speed: cruise, capped for bends and the approaching route end
    let mut target_speed = if blocked { 0.0 } else { cfg.cruise_speed };
    if !blocked {
        let h_now = route.path.tangent(s_ego);
        let h_soon = route.path.tangent(s_ego + 6.0);
        if h_now.dot(h_soon) < 0.95 {
            target_speed = target_speed.min(cfg.turn_speed);
        }
        // slow toward the route end but keep creeping so the done
        // threshold is always reached
        let stop_cap = (2.0 * cfg.stop_decel * (remaining - 2.0).max(0.0)).sqrt().max(0.8);
        target_speed = target_speed.min(stop_cap);
    }

    let control = if target_speed < 0.1 {
        VehicleControl {
            steer,
            throttle: 0.0,
            brake: true,
        }
    } else if ego.speed > target_speed * 1.15 {
        VehicleControl {
            steer,
            throttle: 0.0,
            brake: true,
        }
    } else {
        let throttle = (0.5 * (target_speed - ego.speed)).clamp(0.0, MAX_THROTTLE);
        VehicleControl {
            steer,
            throttle,
            brake: false,
        }
    };
    (control, false)
}
