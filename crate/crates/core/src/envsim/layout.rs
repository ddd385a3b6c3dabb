use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::geometry::{Point, Polyline};
use crate::{Error, Result};

/// A surrounding vehicle modelled as a disc moving at constant velocity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub position: Point,
    pub radius: f64,
    #[serde(default = "zero_velocity")]
    pub velocity: Point,
}

fn zero_velocity() -> Point {
    Point::new(0.0, 0.0)
}

/// Road geometry, target route and the initial placement of other vehicles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadLayout {
    pub id: String,
    pub centerline: Polyline,
    pub lane_half_width: f64,
    /// Defaults to the full centerline when omitted from a layout file.
    #[serde(default)]
    pub route: Option<Polyline>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl RoadLayout {
    pub fn route(&self) -> &Polyline {
        self.route.as_ref().unwrap_or(&self.centerline)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config(format!("layout '{}': {msg}", self.id)));
        if self.centerline.points.len() < 2 {
            return fail("centerline needs at least 2 waypoints".into());
        }
        if !(self.lane_half_width > 0.0) {
            return fail(format!("lane_half_width must be > 0, got {}", self.lane_half_width));
        }
        for o in &self.obstacles {
            if !(o.radius > 0.0) {
                return fail(format!("obstacle radius must be > 0, got {}", o.radius));
            }
        }
        let route = self.route();
        if route.points.len() < 2 {
            return fail("route needs at least 2 waypoints".into());
        }
        if !is_contiguous_subsequence(&route.points, &self.centerline) {
            return fail("route is not a contiguous run of centerline waypoints".into());
        }
        if route.closed && (!self.centerline.closed || route.points.len() != self.centerline.points.len()) {
            return fail("a closed route must cover the whole closed centerline".into());
        }
        Ok(())
    }
}

fn is_contiguous_subsequence(route: &[Point], centerline: &Polyline) -> bool {
    let line = &centerline.points;
    let n = line.len();
    if route.len() > n {
        return false;
    }
    line.iter().enumerate().any(|(start, p)| {
        *p == route[0]
            && route.iter().enumerate().all(|(k, q)| {
                let idx = start + k;
                if idx < n {
                    line[idx] == *q
                } else {
                    centerline.closed && line[idx % n] == *q
                }
            })
    })
}

#[derive(Debug, Deserialize)]
struct LayoutFile {
    #[serde(rename = "layout")]
    layouts: Vec<RoadLayout>,
}

/// Named layouts available to [`super::DrivingEnv::reset`].
#[derive(Clone, Debug)]
pub struct LayoutRegistry {
    layouts: BTreeMap<String, Arc<RoadLayout>>,
}

impl Default for LayoutRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl LayoutRegistry {
    pub fn empty() -> Self {
        Self { layouts: BTreeMap::new() }
    }

    /// `straight`, `loop` and the obstacle-rich `crowded` track.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        for layout in [straight_layout(), loop_layout(), crowded_layout()] {
            reg.register(layout).expect("builtin layouts are valid");
        }
        reg
    }

    pub fn register(&mut self, layout: RoadLayout) -> Result<()> {
        layout.validate()?;
        self.layouts.insert(layout.id.clone(), Arc::new(layout));
        Ok(())
    }

    /// Parses a TOML document of `[[layout]]` tables and registers each one.
    pub fn load_str(&mut self, text: &str) -> Result<()> {
        let file: LayoutFile =
            toml::from_str(text).map_err(|e| Error::config(format!("layout file: {e}")))?;
        for layout in file.layouts {
            self.register(layout)?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.load_str(&text)
    }

    pub fn get(&self, id: &str) -> Result<Arc<RoadLayout>> {
        self.layouts.get(id).cloned().ok_or_else(|| {
            Error::config(format!(
                "unknown layout '{id}' (registered: {})",
                self.ids().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.layouts.keys().map(String::as_str)
    }
}

fn straight_layout() -> RoadLayout {
    let points = (0..=200).map(|i| Point::new(10.0 * i as f64, 0.0)).collect();
    RoadLayout {
        id: "straight".into(),
        centerline: Polyline::new(points, false),
        lane_half_width: 3.5,
        route: None,
        obstacles: Vec::new(),
    }
}

/// Closed stadium track: two straights joined by semicircles.
fn stadium(straight: f64, radius: f64, spacing: f64) -> Polyline {
    let mut pts = Vec::new();
    let n_straight = (straight / spacing).round().max(1.0) as usize;
    let n_arc = ((PI * radius) / spacing).round().max(2.0) as usize;
    for i in 0..n_straight {
        pts.push(Point::new(straight * i as f64 / n_straight as f64, 0.0));
    }
    for i in 0..n_arc {
        let a = -PI / 2.0 + PI * i as f64 / n_arc as f64;
        pts.push(Point::new(straight + radius * a.cos(), radius + radius * a.sin()));
    }
    for i in 0..n_straight {
        pts.push(Point::new(straight * (1.0 - i as f64 / n_straight as f64), 2.0 * radius));
    }
    for i in 0..n_arc {
        let a = PI / 2.0 + PI * i as f64 / n_arc as f64;
        pts.push(Point::new(radius * a.cos(), radius + radius * a.sin()));
    }
    Polyline::new(pts, true)
}

fn loop_layout() -> RoadLayout {
    RoadLayout {
        id: "loop".into(),
        centerline: stadium(80.0, 30.0, 4.0),
        lane_half_width: 3.5,
        route: None,
        obstacles: Vec::new(),
    }
}

fn crowded_layout() -> RoadLayout {
    let radius = 18.0;
    let parked = |x: f64, y: f64| Obstacle {
        position: Point::new(x, y),
        radius: 1.0,
        velocity: zero_velocity(),
    };
    RoadLayout {
        id: "crowded".into(),
        centerline: stadium(60.0, radius, 3.0),
        lane_half_width: 3.5,
        route: None,
        obstacles: vec![
            parked(15.0, 1.6),
            parked(40.0, -1.6),
            parked(50.0, 2.0 * radius - 1.6),
            parked(25.0, 2.0 * radius + 1.6),
            parked(60.0 + radius + 1.6, radius),
            parked(-radius - 1.6, radius + 4.0),
            Obstacle {
                position: Point::new(30.0, 2.0 * radius + 1.0),
                radius: 1.0,
                velocity: Point::new(-1.0, 0.0),
            },
        ],
    }
}
