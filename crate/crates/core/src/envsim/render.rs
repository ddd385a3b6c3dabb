//! Ego-centric top-down rasterization.
//!
//! The ego vehicle sits at a fixed image pose (horizontally centered, three
//! quarters of the way down, heading up). Both the semantic mask and the
//! observation are drawn from the same geometry; only the observation gets
//! the weather layer composited on top.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::env::{EnvConfig, WorldState};
use super::geometry::{point_segment_distance, Point};

pub const CHANNEL_ROAD: usize = 0;
pub const CHANNEL_ROUTE: usize = 1;
pub const CHANNEL_VEHICLES: usize = 2;

/// Row-major `H×W×3` image of 8-bit intensities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width * 3] }
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<u8>) -> crate::Result<Self> {
        if data.len() != height * width * 3 {
            return Err(crate::Error::argument(format!(
                "image buffer has {} bytes, expected {}",
                data.len(),
                height * width * 3
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.data[(row * self.width + col) * 3 + channel]
    }

    fn set(&mut self, row: usize, col: usize, channel: usize, value: u8) {
        self.data[(row * self.width + col) * 3 + channel] = value;
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction")
    }
}

/// What the agent perceives: scene geometry plus weather distractors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation(pub Image);

/// Weather-free bird's-eye mask: road, route and vehicle channels, with the
/// ego glyph set on all three.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticMask(pub Image);

/// Driving-irrelevant visual distractors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weather {
    #[serde(default)]
    pub name: String,
    /// Per-channel intensity offset.
    #[serde(default)]
    pub tint: [f64; 3],
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub blob_seed: u64,
    #[serde(default)]
    pub blob_count: usize,
    /// Blob radius as a fraction of the raster size.
    #[serde(default = "default_blob_radius")]
    pub blob_radius: f64,
    #[serde(default = "default_blob_intensity")]
    pub blob_intensity: f64,
}

fn default_blob_radius() -> f64 {
    0.15
}

fn default_blob_intensity() -> f64 {
    180.0
}

impl Default for Weather {
    fn default() -> Self {
        Self::clear()
    }
}

impl Weather {
    /// No distractors: the observation equals the mask geometry.
    pub fn clear() -> Self {
        Self {
            name: "clear".into(),
            tint: [0.0; 3],
            noise_std: 0.0,
            blob_seed: 0,
            blob_count: 0,
            blob_radius: default_blob_radius(),
            blob_intensity: default_blob_intensity(),
        }
    }

    pub fn mild() -> Self {
        Self {
            name: "mild".into(),
            tint: [10.0, 10.0, 20.0],
            noise_std: 8.0,
            blob_seed: 1,
            blob_count: 1,
            blob_radius: 0.12,
            blob_intensity: 120.0,
        }
    }

    /// Strong tint, heavy noise and many large clouds.
    pub fn heavy() -> Self {
        Self {
            name: "heavy".into(),
            tint: [40.0, 30.0, 60.0],
            noise_std: 30.0,
            blob_seed: 7,
            blob_count: 5,
            blob_radius: 0.2,
            blob_intensity: 200.0,
        }
    }

    pub fn with_blob_seed(mut self, seed: u64) -> Self {
        self.blob_seed = seed;
        self
    }

    pub fn validate(&self) -> crate::Result<()> {
        let finite = self.tint.iter().all(|t| t.is_finite())
            && self.noise_std.is_finite()
            && self.blob_radius.is_finite()
            && self.blob_intensity.is_finite();
        if !finite || self.noise_std < 0.0 || self.blob_radius < 0.0 {
            return Err(crate::Error::config(format!("invalid weather '{}'", self.name)));
        }
        Ok(())
    }

    /// Adds tint, Gaussian pixel noise and drifting blobs to `base`; values
    /// are rounded and clamped into `[0, 255]`.
    pub fn composite(&self, base: &Image, step: u64) -> Image {
        let (h, w) = (base.height, base.width);
        let blobs = self.blobs(step, h, w);
        let radius = self.blob_radius * h.max(w) as f64;
        let mut noise_rng =
            ChaCha8Rng::seed_from_u64(self.blob_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step);
        let noise = Normal::new(0.0, self.noise_std).ok().filter(|_| self.noise_std > 0.0);
        let mut out = Image::zeros(h, w);
        for row in 0..h {
            for col in 0..w {
                let mut cloud = 0.0;
                for &(bx, by) in &blobs {
                    let d2 = (col as f64 + 0.5 - bx).powi(2) + (row as f64 + 0.5 - by).powi(2);
                    let r2 = radius * radius;
                    if d2 < r2 {
                        cloud += self.blob_intensity * (1.0 - d2 / r2);
                    }
                }
                for ch in 0..3 {
                    let mut v = base.get(row, col, ch) as f64 + self.tint[ch] + cloud;
                    if let Some(n) = &noise {
                        v += n.sample(&mut noise_rng);
                    }
                    out.set(row, col, ch, v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        out
    }

    /// Blob centers in pixel coordinates at `step`, wrapping around the image.
    fn blobs(&self, step: u64, h: usize, w: usize) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.blob_seed);
        (0..self.blob_count)
            .map(|_| {
                let (x0, y0): (f64, f64) = (rng.random(), rng.random());
                let vx = rng.random_range(-0.02..0.02);
                let vy = rng.random_range(-0.02..0.02);
                let t = step as f64;
                (
                    (x0 + vx * t).rem_euclid(1.0) * w as f64,
                    (y0 + vy * t).rem_euclid(1.0) * h as f64,
                )
            })
            .collect()
    }
}

/// Maps pixel centers to world coordinates for the current ego pose.
struct Viewport {
    origin: Point,
    cos: f64,
    sin: f64,
    mpp: f64,
    anchor_row: f64,
    anchor_col: f64,
}

impl Viewport {
    fn new(world: &WorldState, cfg: &EnvConfig) -> Self {
        let n = cfg.raster as f64;
        Self {
            origin: world.ego.position(),
            cos: world.ego.yaw.cos(),
            sin: world.ego.yaw.sin(),
            mpp: cfg.view_extent / n,
            anchor_row: 0.75 * n,
            anchor_col: 0.5 * n,
        }
    }

    /// `(forward, right)` offset of a pixel center from the ego, in meters.
    fn ego_offset(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (self.anchor_row - (row as f64 + 0.5)) * self.mpp,
            ((col as f64 + 0.5) - self.anchor_col) * self.mpp,
        )
    }

    fn world_point(&self, forward: f64, right: f64) -> Point {
        Point::new(
            self.origin.x + forward * self.cos + right * self.sin,
            self.origin.y + forward * self.sin - right * self.cos,
        )
    }
}

pub fn render_mask(world: &WorldState, cfg: &EnvConfig) -> SemanticMask {
    let n = cfg.raster;
    let view = Viewport::new(world, cfg);
    let layout = &world.layout;
    let reach = 0.95 * cfg.view_extent + layout.lane_half_width + view.mpp;
    let near = |segs: Vec<(Point, Point)>| -> Vec<(Point, Point)> {
        segs.into_iter()
            .filter(|&(a, b)| point_segment_distance(view.origin, a, b) <= reach)
            .collect()
    };
    let road = near(layout.centerline.segments().collect());
    let route = near(layout.route().segments().collect());
    let route_half = cfg.route_half_width.max(0.5 * view.mpp);
    let half_len = (0.5 * cfg.ego_length).max(0.5 * view.mpp);
    let half_wid = (0.5 * cfg.ego_width).max(0.5 * view.mpp);

    let within = |segs: &[(Point, Point)], p: Point, r: f64| {
        segs.iter().any(|&(a, b)| point_segment_distance(p, a, b) <= r)
    };

    let mut img = Image::zeros(n, n);
    for row in 0..n {
        for col in 0..n {
            let (fwd, right) = view.ego_offset(row, col);
            if fwd.abs() <= half_len && right.abs() <= half_wid {
                for ch in 0..3 {
                    img.set(row, col, ch, 255);
                }
                continue;
            }
            let p = view.world_point(fwd, right);
            if within(&road, p, layout.lane_half_width) {
                img.set(row, col, CHANNEL_ROAD, 255);
            }
            if within(&route, p, route_half) {
                img.set(row, col, CHANNEL_ROUTE, 255);
            }
            if world.obstacles.iter().any(|o| p.distance(o.position) <= o.radius) {
                img.set(row, col, CHANNEL_VEHICLES, 255);
            }
        }
    }
    SemanticMask(img)
}

pub fn render_observation(world: &WorldState, cfg: &EnvConfig, weather: &Weather) -> Observation {
    let geometry = render_mask(world, cfg).0;
    Observation(weather.composite(&geometry, world.step))
}
