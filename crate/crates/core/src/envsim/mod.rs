//! Seedable top-down driving simulator.
//!
//! Vehicles follow a kinematic bicycle model stepped at 10 Hz. Each step
//! yields a distractor-laden observation, a weather-free semantic mask, the
//! shaped driving reward and a termination label.

mod dynamics;
mod env;
mod geometry;
mod layout;
mod render;
mod reward;

pub use dynamics::{Action, BicycleModel, VehicleState, STEER_LIMIT, THROTTLE_LIMIT};
pub use env::{cross_track_error, DrivingEnv, EnvConfig, StepResult, Termination, WorldState};
pub use geometry::{point_segment_distance, wrap_angle, Point, Polyline};
pub use layout::{LayoutRegistry, Obstacle, RoadLayout};
pub use render::{
    render_mask, render_observation, Image, Observation, SemanticMask, Weather, CHANNEL_ROAD,
    CHANNEL_ROUTE, CHANNEL_VEHICLES,
};
pub use reward::{compute_reward, RewardBreakdown, StepEvents, CTE_THRESHOLD, DESIRED_SPEED};
