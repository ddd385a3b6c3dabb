use serde::{Deserialize, Serialize};

use super::dynamics::{Action, VehicleState};

/// Speed above which the over-speed penalty applies (m/s).
pub const DESIRED_SPEED: f64 = 8.0;
/// Cross-track error above which the vehicle is out of lane (m).
pub const CTE_THRESHOLD: f64 = 2.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEvents {
    pub collision: bool,
    pub out_lane: bool,
}

/// Individual reward terms of one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// `-1` on collision, else `0`.
    pub r_collision: f64,
    pub v_lon: f64,
    /// `-1` above [`DESIRED_SPEED`], else `0`.
    pub r_fast: f64,
    /// `-1` when out of lane, else `0`.
    pub r_out: f64,
    /// Steering angle (rad).
    pub alpha: f64,
    /// Lateral-acceleration proxy `-|alpha| * v_lon²`.
    pub r_lat: f64,
    /// Negative cross-track error.
    pub r_cte: f64,
    pub constant: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        200.0 * self.r_collision + self.v_lon + 10.0 * self.r_fast + self.r_out
            - 5.0 * self.alpha * self.alpha
            + 0.2 * self.r_lat
            + 0.2 * self.r_cte
            + self.constant
    }
}

pub fn compute_reward(
    state: &VehicleState,
    action: Action,
    events: StepEvents,
    cte: f64,
) -> RewardBreakdown {
    let flag = |b: bool| if b { -1.0 } else { 0.0 };
    let v = state.v_lon;
    let alpha = action.steer;
    RewardBreakdown {
        r_collision: flag(events.collision),
        v_lon: v,
        r_fast: flag(v > DESIRED_SPEED),
        r_out: flag(events.out_lane),
        alpha,
        r_lat: -alpha.abs() * v * v,
        r_cte: -cte,
        constant: -0.1,
    }
}
