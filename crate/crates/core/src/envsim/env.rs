use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::{Action, BicycleModel, VehicleState};
use super::geometry::Point;
use super::layout::{LayoutRegistry, Obstacle, RoadLayout};
use super::render::{render_mask, render_observation, Observation, SemanticMask, Weather};
use super::reward::{compute_reward, RewardBreakdown, StepEvents, CTE_THRESHOLD};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Side length of the square observation and mask rasters.
    pub raster: usize,
    /// Side length of the rendered area in meters.
    pub view_extent: f64,
    pub episode_cap: u32,
    pub wheelbase: f64,
    pub dt: f64,
    pub ego_radius: f64,
    pub ego_length: f64,
    pub ego_width: f64,
    pub route_half_width: f64,
    pub cte_threshold: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            raster: 64,
            view_extent: 40.0,
            episode_cap: 1000,
            wheelbase: 2.5,
            dt: 0.1,
            ego_radius: 1.0,
            ego_length: 4.5,
            ego_width: 2.0,
            route_half_width: 0.75,
            cte_threshold: CTE_THRESHOLD,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.raster < 8 || !self.raster.is_power_of_two() {
            return Err(Error::config(format!(
                "env.raster must be a power of two >= 8, got {}",
                self.raster
            )));
        }
        let positive = [
            ("view_extent", self.view_extent),
            ("wheelbase", self.wheelbase),
            ("dt", self.dt),
            ("ego_radius", self.ego_radius),
            ("cte_threshold", self.cte_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::config(format!("env.{name} must be > 0, got {v}")));
            }
        }
        if self.episode_cap == 0 {
            return Err(Error::config("env.episode_cap must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    None,
    OutLane,
    Collision,
    Timeout,
}

impl Termination {
    pub fn is_terminal(self) -> bool {
        self != Termination::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::None => "none",
            Termination::OutLane => "out_lane",
            Termination::Collision => "collision",
            Termination::Timeout => "timeout",
        }
    }
}

/// Everything the renderer needs: the layout plus all moving state.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub layout: Arc<RoadLayout>,
    pub ego: VehicleState,
    pub obstacles: Vec<Obstacle>,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub mask: SemanticMask,
    pub reward: f64,
    /// `None` for the initial observation returned by `reset`.
    pub reward_breakdown: Option<RewardBreakdown>,
    pub termination: Termination,
}

/// Minimum distance from the ego position to the route polyline.
pub fn cross_track_error(state: &VehicleState, layout: &RoadLayout) -> f64 {
    layout.route().distance(state.position())
}

/// Single-vehicle top-down driving environment, stepped at a fixed rate.
#[derive(Clone, Debug)]
pub struct DrivingEnv {
    config: EnvConfig,
    registry: Arc<LayoutRegistry>,
    bicycle: BicycleModel,
    weather: Weather,
    world: Option<WorldState>,
    terminated: bool,
}

impl DrivingEnv {
    pub fn new(config: EnvConfig, registry: Arc<LayoutRegistry>) -> Result<Self> {
        config.validate()?;
        let bicycle = BicycleModel { wheelbase: config.wheelbase, dt: config.dt };
        Ok(Self {
            config,
            registry,
            bicycle,
            weather: Weather::clear(),
            world: None,
            terminated: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn weather(&self) -> &Weather {
        &self.weather
    }

    /// Takes effect from the next rendered observation.
    pub fn set_weather(&mut self, weather: Weather) {
        self.weather = weather;
    }

    pub fn world(&self) -> Option<&WorldState> {
        self.world.as_ref()
    }

    pub fn reset(&mut self, seed: u64, layout_id: &str) -> Result<StepResult> {
        let layout = self.registry.get(layout_id)?;
        let ego = spawn_pose(&layout, seed)?;
        let world = WorldState {
            obstacles: layout.obstacles.clone(),
            layout,
            ego,
            step: 0,
        };
        let result = StepResult {
            observation: render_observation(&world, &self.config, &self.weather),
            mask: render_mask(&world, &self.config),
            reward: 0.0,
            reward_breakdown: None,
            termination: Termination::None,
        };
        self.world = Some(world);
        self.terminated = false;
        Ok(result)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.terminated {
            return Err(Error::Protocol("step called on a terminated episode; reset first".into()));
        }
        let world = self
            .world
            .as_mut()
            .ok_or_else(|| Error::Protocol("step called before reset".into()))?;
        let action = action.clamped();
        world.ego = self.bicycle.step(&world.ego, action);
        for o in &mut world.obstacles {
            o.position.x += o.velocity.x * self.config.dt;
            o.position.y += o.velocity.y * self.config.dt;
        }
        world.step += 1;

        let cte = cross_track_error(&world.ego, &world.layout);
        let ego_pos = world.ego.position();
        let events = StepEvents {
            collision: world
                .obstacles
                .iter()
                .any(|o| ego_pos.distance(o.position) < self.config.ego_radius + o.radius),
            out_lane: cte > self.config.cte_threshold,
        };
        let breakdown = compute_reward(&world.ego, action, events, cte);
        let termination = if events.collision {
            Termination::Collision
        } else if events.out_lane {
            Termination::OutLane
        } else if world.step >= self.config.episode_cap as u64 {
            Termination::Timeout
        } else {
            Termination::None
        };
        self.terminated = termination.is_terminal();
        let world = &*world;
        Ok(StepResult {
            observation: render_observation(world, &self.config, &self.weather),
            mask: render_mask(world, &self.config),
            reward: breakdown.total(),
            reward_breakdown: Some(breakdown),
            termination,
        })
    }
}

/// Picks a route waypoint away from obstacles, heading along the route.
fn spawn_pose(layout: &RoadLayout, seed: u64) -> Result<VehicleState> {
    const CLEARANCE: f64 = 12.0;
    const ROOM_AHEAD: usize = 5;
    let route = layout.route();
    let n = route.points.len();
    let last = if route.closed { n } else { n.saturating_sub(ROOM_AHEAD).max(1) };
    let candidates: Vec<usize> = (0..last)
        .filter(|&i| {
            let p: Point = route.points[i];
            layout.obstacles.iter().all(|o| p.distance(o.position) > CLEARANCE + o.radius)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let &i = candidates
        .choose(&mut rng)
        .ok_or_else(|| Error::config(format!("layout '{}' has no obstacle-free spawn point", layout.id)))?;
    let p = route.points[i];
    Ok(VehicleState { x: p.x, y: p.y, yaw: route.heading_at(i), v_lon: 0.0 })
}
