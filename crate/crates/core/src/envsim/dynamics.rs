use serde::{Deserialize, Serialize};

use super::geometry::{wrap_angle, Point};

pub const THROTTLE_LIMIT: f64 = 3.0;
pub const STEER_LIMIT: f64 = 0.5;

/// Throttle (longitudinal acceleration, m/s²) and steering angle (rad).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub throttle: f64,
    pub steer: f64,
}

impl Action {
    pub const ZERO: Action = Action { throttle: 0.0, steer: 0.0 };

    pub fn new(throttle: f64, steer: f64) -> Self {
        Self { throttle, steer }
    }

    /// Clamps both components into the action box. NaN components become 0.
    pub fn clamped(self) -> Self {
        let clamp = |v: f64, lim: f64| if v.is_nan() { 0.0 } else { v.clamp(-lim, lim) };
        Self {
            throttle: clamp(self.throttle, THROTTLE_LIMIT),
            steer: clamp(self.steer, STEER_LIMIT),
        }
    }

    /// Components scaled into `[-1, 1]`, the form fed to the networks.
    pub fn normalized(self) -> [f64; 2] {
        [self.throttle / THROTTLE_LIMIT, self.steer / STEER_LIMIT]
    }

    pub fn from_normalized(v: [f64; 2]) -> Self {
        Self::new(v[0] * THROTTLE_LIMIT, v[1] * STEER_LIMIT).clamped()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Heading in `(-π, π]`.
    pub yaw: f64,
    /// Longitudinal speed, never negative.
    pub v_lon: f64,
}

impl VehicleState {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Kinematic bicycle parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicycleModel {
    pub wheelbase: f64,
    pub dt: f64,
}

impl Default for BicycleModel {
    fn default() -> Self {
        Self { wheelbase: 2.5, dt: 0.1 }
    }
}

impl BicycleModel {
    /// Advances one time step. Speed is integrated first and clipped at zero,
    /// then the pose moves with the new speed.
    pub fn step(&self, state: &VehicleState, action: Action) -> VehicleState {
        let a = action.clamped();
        let v = (state.v_lon + a.throttle * self.dt).max(0.0);
        let yaw = state.yaw + v / self.wheelbase * a.steer.tan() * self.dt;
        VehicleState {
            x: state.x + v * state.yaw.cos() * self.dt,
            y: state.y + v * state.yaw.sin() * self.dt,
            yaw: wrap_angle(yaw),
            v_lon: v,
        }
    }
}
