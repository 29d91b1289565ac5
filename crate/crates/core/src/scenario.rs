//! Site geometry, access points and ground-truth walking paths.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::ftm_sim::ChannelSpec;
use crate::geom::{segments_intersect, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ApRecord", into = "ApRecord")]
pub struct AccessPoint {
    pub id: u32,
    pub position: Point,
}

#[derive(Serialize, Deserialize)]
struct ApRecord {
    id: u32,
    x: f64,
    y: f64,
}

impl From<ApRecord> for AccessPoint {
    fn from(r: ApRecord) -> Self {
        AccessPoint {
            id: r.id,
            position: Point::new(r.x, r.y),
        }
    }
}

impl From<AccessPoint> for ApRecord {
    fn from(ap: AccessPoint) -> Self {
        ApRecord {
            id: ap.id,
            x: ap.position.x,
            y: ap.position.y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LinkCondition {
    Los,
    Nlos,
}

impl LinkCondition {
    pub fn is_los(self) -> bool {
        self == LinkCondition::Los
    }
}

/// Rectangular site with access points and obstructing walls.
///
/// Each wall is an open polyline; repeat the first vertex to close a polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteConfig {
    pub width: f64,
    pub height: f64,
    pub aps: Vec<AccessPoint>,
    #[serde(default)]
    pub walls: Vec<Vec<Point>>,
    /// When set, each link is NLOS with this probability instead of by
    /// geometry. Only the dataset generator consults it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stochastic_nlos: Option<f64>,
}

impl SiteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(config("site width and height must be positive"));
        }
        let mut ids = HashSet::new();
        for ap in &self.aps {
            if !ap.position.is_finite() {
                return Err(config(format!("AP {} has a non-finite position", ap.id)));
            }
            if !ids.insert(ap.id) {
                return Err(config(format!("duplicate AP id {}", ap.id)));
            }
            let p = ap.position;
            if p.x < 0.0 || p.x > self.width || p.y < 0.0 || p.y > self.height {
                return Err(config(format!("AP {} lies outside the site", ap.id)));
            }
        }
        if let Some(prob) = self.stochastic_nlos {
            if !(0.0..=1.0).contains(&prob) {
                return Err(config("stochastic_nlos must be a probability"));
            }
        }
        for wall in &self.walls {
            if wall.len() < 2 || wall.iter().any(|p| !p.is_finite()) {
                return Err(config("walls need at least two finite vertices"));
            }
        }
        Ok(())
    }

    /// Positioning experiments need at least three APs.
    pub fn validate_for_positioning(&self) -> Result<()> {
        self.validate()?;
        if self.aps.len() < 3 {
            return Err(config("positioning needs at least 3 access points"));
        }
        Ok(())
    }

    pub fn center(&self) -> Point {
        Point::new(self.width / 2.0, self.height / 2.0)
    }

    pub fn ap(&self, id: u32) -> Option<&AccessPoint> {
        self.aps.iter().find(|ap| ap.id == id)
    }

    /// Geometric LOS test: the link is NLOS iff it crosses any wall segment.
    pub fn classify_link(&self, device: Point, ap: &AccessPoint) -> LinkCondition {
        classify_segment(&self.walls, device, ap.position)
    }

    /// 85 m × 55 m office: 10 APs on a 2×5 grid inset 5 m from the walls,
    /// a central corridor and five rooms on either side.
    pub fn default_office() -> Self {
        let xs = grid_columns();
        let mut aps = Vec::new();
        for (row, &y) in [5.0, 50.0].iter().enumerate() {
            for (col, &x) in xs.iter().enumerate() {
                aps.push(AccessPoint {
                    id: (row * xs.len() + col + 1) as u32,
                    position: Point::new(x, y),
                });
            }
        }
        let mut walls = Vec::new();
        let doors = room_centers();
        for &y in &[CORRIDOR_LOW, CORRIDOR_HIGH] {
            let mut x0 = 0.0;
            for &door in &doors {
                walls.push(vec![Point::new(x0, y), Point::new(door - DOOR_HALF_WIDTH, y)]);
                x0 = door + DOOR_HALF_WIDTH;
            }
            walls.push(vec![Point::new(x0, y), Point::new(SITE_WIDTH, y)]);
        }
        for x in room_dividers() {
            walls.push(vec![Point::new(x, 0.0), Point::new(x, CORRIDOR_LOW)]);
            walls.push(vec![Point::new(x, CORRIDOR_HIGH), Point::new(x, SITE_HEIGHT)]);
        }
        SiteConfig {
            width: SITE_WIDTH,
            height: SITE_HEIGHT,
            aps,
            walls,
            stochastic_nlos: None,
        }
    }
}

pub const SITE_WIDTH: f64 = 85.0;
pub const SITE_HEIGHT: f64 = 55.0;
const AP_INSET: f64 = 5.0;
const CORRIDOR_LOW: f64 = 22.0;
const CORRIDOR_HIGH: f64 = 33.0;
const DOOR_HALF_WIDTH: f64 = 1.0;

fn grid_columns() -> [f64; 5] {
    let step = (SITE_WIDTH - 2.0 * AP_INSET) / 4.0;
    std::array::from_fn(|i| AP_INSET + step * i as f64)
}

fn room_dividers() -> [f64; 4] {
    let xs = grid_columns();
    std::array::from_fn(|i| 0.5 * (xs[i] + xs[i + 1]))
}

fn room_centers() -> [f64; 5] {
    let d = room_dividers();
    std::array::from_fn(|i| {
        let lo = if i == 0 { 0.0 } else { d[i - 1] };
        let hi = if i == 4 { SITE_WIDTH } else { d[i] };
        0.5 * (lo + hi)
    })
}

/// LOS test of a single segment against a set of wall polylines.
pub fn classify_segment(walls: &[Vec<Point>], a: Point, b: Point) -> LinkCondition {
    if a.distance(b) < 1e-12 {
        return LinkCondition::Los;
    }
    let blocked = walls
        .iter()
        .flat_map(|w| w.windows(2))
        .any(|seg| segments_intersect(a, b, seg[0], seg[1]));
    if blocked {
        LinkCondition::Nlos
    } else {
        LinkCondition::Los
    }
}

/// Polyline walked at constant speed, sampled once per ranging interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruePath {
    pub waypoints: Vec<Point>,
    pub speed: f64,
    #[serde(rename = "interval")]
    pub ranging_interval: f64,
}

impl TruePath {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(config("path has no waypoints"));
        }
        if !(self.speed > 0.0) {
            return Err(config("path speed must be positive"));
        }
        if !(self.ranging_interval > 0.0) {
            return Err(config("ranging interval must be positive"));
        }
        if self.waypoints.windows(2).any(|w| w[0] == w[1]) {
            return Err(config("consecutive waypoints must be distinct"));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    /// The serpentine test walk through every room of [`SiteConfig::default_office`].
    pub fn default_test_path() -> Self {
        let corridor = 0.5 * (CORRIDOR_LOW + CORRIDOR_HIGH);
        let mut waypoints = vec![];
        for x in room_centers() {
            waypoints.push(Point::new(x, corridor));
            for (inner, outer) in [(40.0, 45.0), (15.0, 10.0)] {
                waypoints.extend([
                    Point::new(x, inner),
                    Point::new(x + 2.5, inner),
                    Point::new(x + 2.5, outer),
                    Point::new(x - 2.5, outer),
                    Point::new(x - 2.5, inner),
                    Point::new(x, inner),
                    Point::new(x, corridor),
                ]);
            }
        }
        waypoints.dedup();
        TruePath {
            waypoints,
            speed: 1.0,
            ranging_interval: 1.0,
        }
    }
}

/// Positions at every ranging instant: spaced `speed × interval` in arc
/// length, with the final sample on the last waypoint.
pub fn sample_true_trajectory(path: &TruePath) -> Result<Vec<Point>> {
    path.validate()?;
    let step = path.speed * path.ranging_interval;
    let total = path.length();
    let steps = ((total / step) - 1e-9).ceil().max(0.0) as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut seg = 0;
    let mut seg_start = 0.0;
    let wps = &path.waypoints;
    for k in 0..=steps {
        let s = (k as f64 * step).min(total);
        while seg + 1 < wps.len() - 1 && s > seg_start + wps[seg].distance(wps[seg + 1]) {
            seg_start += wps[seg].distance(wps[seg + 1]);
            seg += 1;
        }
        if wps.len() == 1 {
            out.push(wps[0]);
            continue;
        }
        let (a, b) = (wps[seg], wps[seg + 1]);
        let len = a.distance(b);
        let t = ((s - seg_start) / len).clamp(0.0, 1.0);
        out.push(if k == steps {
            *wps.last().unwrap()
        } else {
            a + (b - a) * t
        });
    }
    Ok(out)
}

/// Random walk of exactly `steps` samples kept inside the site (2 m margin).
pub fn random_walk<R: Rng + ?Sized>(
    site: &SiteConfig,
    steps: usize,
    speed: f64,
    interval: f64,
    rng: &mut R,
) -> Result<Vec<Point>> {
    if steps == 0 {
        return Err(config("random walk needs at least one step"));
    }
    let margin = 2.0;
    if site.width <= 2.0 * margin || site.height <= 2.0 * margin {
        return Err(config("site too small for a random walk"));
    }
    let inside = |p: Point| p.x >= margin && p.x <= site.width - margin && p.y >= margin && p.y <= site.height - margin;
    let need = speed * interval * (steps - 1) as f64;
    let mut pos = Point::new(
        rng.random_range(margin..site.width - margin),
        rng.random_range(margin..site.height - margin),
    );
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut waypoints = vec![pos];
    let mut length = 0.0;
    while length < need + speed * interval {
        let mut placed = false;
        for attempt in 0..64 {
            let spread = if attempt < 32 {
                std::f64::consts::FRAC_PI_2
            } else {
                std::f64::consts::PI
            };
            let h = heading + rng.random_range(-spread..spread);
            let leg = rng.random_range(5.0..20.0);
            let next = pos + Point::new(h.cos(), h.sin()) * leg;
            if inside(next) {
                heading = h;
                length += leg;
                pos = next;
                waypoints.push(pos);
                placed = true;
                break;
            }
        }
        if !placed {
            // turn back toward the middle of the site
            let to_center = site.center() - pos;
            heading = to_center.y.atan2(to_center.x);
        }
    }
    let path = TruePath {
        waypoints,
        speed,
        ranging_interval: interval,
    };
    let mut points = sample_true_trajectory(&path)?;
    points.truncate(steps);
    Ok(points)
}

/// Everything a single scenario file describes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(flatten)]
    pub site: SiteConfig,
    pub path: TruePath,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelSpec>,
}

impl ScenarioFile {
    pub fn default_office() -> Self {
        ScenarioFile {
            site: SiteConfig::default_office(),
            path: TruePath::default_test_path(),
            channel: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scenario: ScenarioFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        scenario.site.validate()?;
        scenario.path.validate()?;
        if let Some(ChannelSpec::Model(m)) = &scenario.channel {
            m.validate()?;
        }
        Ok(scenario)
    }
}
