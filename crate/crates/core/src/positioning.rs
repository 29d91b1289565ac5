//! Range-only EKF positioning.
//!
//! The state is the 2-D position under a random-walk motion model. Each
//! step adds `q·I` to the covariance, then applies one scalar range update
//! per selected AP in ascending AP-id order. All arithmetic is generic over
//! [`Scalar`], so running on [`Var`](crate::autodiff::Var)s gives the
//! trajectory as a differentiable function of the ranging outputs.

use std::io::Write;
use std::path::Path;

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::ftm_sim::FtmMeasurement;
use crate::geom::{Point, Vec2};
use crate::ranging_nn::RangingModule;
use crate::scenario::AccessPoint;

/// Smallest standard deviation the filter accepts from a ranging source.
pub const MIN_RANGE_STD: f64 = 0.1;
/// Closer than this to an AP the range Jacobian is undefined.
pub const MIN_JACOBIAN_RANGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangingResult<S> {
    pub ap_id: u32,
    pub d: S,
    pub s: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfConfig {
    /// Random-walk process noise, m² per step.
    pub process_noise: f64,
    /// Maximum number of APs used per step.
    pub max_aps: usize,
    pub init_variance: f64,
    /// Variance when step 1 has no ranging at all.
    pub fallback_variance: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        EkfConfig {
            process_noise: 0.5,
            max_aps: 5,
            init_variance: 100.0,
            fallback_variance: 1e4,
        }
    }
}

/// Symmetric 2×2 covariance stored in full.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2<S> {
    pub xx: S,
    pub xy: S,
    pub yx: S,
    pub yy: S,
}

impl<S: Scalar> Cov2<S> {
    pub fn diagonal(like: S, v: f64) -> Self {
        Cov2 {
            xx: like.lift(v),
            xy: like.lift(0.0),
            yx: like.lift(0.0),
            yy: like.lift(v),
        }
    }

    fn symmetrized(self) -> Self {
        let off = (self.xy + self.yx) * 0.5;
        Cov2 {
            xx: self.xx,
            xy: off,
            yx: off,
            yy: self.yy,
        }
    }

    pub fn value(&self) -> Cov2<f64> {
        Cov2 {
            xx: self.xx.value(),
            xy: self.xy.value(),
            yx: self.yx.value(),
            yy: self.yy.value(),
        }
    }
}

impl Cov2<f64> {
    pub fn asymmetry(&self) -> f64 {
        (self.xy - self.yx).abs()
    }

    /// Cholesky-style positive-definiteness check.
    pub fn is_positive_definite(&self) -> bool {
        if !(self.xx > 0.0) {
            return false;
        }
        let l10 = self.xy / self.xx.sqrt();
        self.yy - l10 * l10 > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState<S> {
    pub z: Vec2<S>,
    pub p: Cov2<S>,
}

/// The `max_n` results with the smallest distance (ties: lower AP id),
/// returned in ascending AP-id order.
pub fn select_aps<S: Scalar>(results: &[RangingResult<S>], max_n: usize) -> Vec<RangingResult<S>> {
    let mut sorted: Vec<RangingResult<S>> = results.to_vec();
    sorted.sort_by(|a, b| a.d.value().total_cmp(&b.d.value()).then(a.ap_id.cmp(&b.ap_id)));
    sorted.truncate(max_n.max(1));
    sorted.sort_by_key(|r| r.ap_id);
    sorted
}

pub(crate) fn lookup(aps: &[AccessPoint], id: u32) -> Result<Point> {
    aps.iter()
        .find(|ap| ap.id == id)
        .map(|ap| ap.position)
        .ok_or_else(|| Error::Dataset(format!("ranging result refers to unknown AP {id}")))
}

/// Sequential scalar range update; skipped when the state sits on the AP.
pub fn range_update<S: Scalar>(state: EkfState<S>, ap: Point, d: S, s: S) -> EkfState<S> {
    let EkfState { z, p } = state;
    let diff = z - ap.lift(d);
    let r = diff.norm_sq().sqrt();
    if r.value() < MIN_JACOBIAN_RANGE {
        return state;
    }
    let hx = diff.x / r;
    let hy = diff.y / r;
    let pht_x = p.xx * hx + p.xy * hy;
    let pht_y = p.yx * hx + p.yy * hy;
    let s_eff = s.max_floor(MIN_RANGE_STD);
    let innov_var = hx * pht_x + hy * pht_y + s_eff.square();
    let kx = pht_x / innov_var;
    let ky = pht_y / innov_var;
    let innovation = d - r;
    let z = Vec2::new(z.x + kx * innovation, z.y + ky * innovation);
    // (I - K H) P
    let hp_x = hx * p.xx + hy * p.yx;
    let hp_y = hx * p.xy + hy * p.yy;
    let p = Cov2 {
        xx: p.xx - kx * hp_x,
        xy: p.xy - kx * hp_y,
        yx: p.yx - ky * hp_x,
        yy: p.yy - ky * hp_y,
    }
    .symmetrized();
    EkfState { z, p }
}

/// Predict (`P += q·I`) followed by range updates from the selected APs.
pub fn ekf_step<S: Scalar>(
    state: EkfState<S>,
    results: &[RangingResult<S>],
    aps: &[AccessPoint],
    config: &EkfConfig,
) -> Result<EkfState<S>> {
    let q = config.process_noise;
    let mut st = EkfState {
        z: state.z,
        p: Cov2 {
            xx: state.p.xx + q,
            xy: state.p.xy,
            yx: state.p.yx,
            yy: state.p.yy + q,
        },
    };
    for r in select_aps(results, config.max_aps) {
        st = range_update(st, lookup(aps, r.ap_id)?, r.d, r.s);
    }
    Ok(st)
}

/// Inverse-distance weighted centroid of the involved APs.
///
/// `like` fixes the scalar domain when `results` is empty; the state then
/// sits at `fallback` with the large fallback variance.
pub fn init_position<S: Scalar>(
    results: &[RangingResult<S>],
    aps: &[AccessPoint],
    fallback: Point,
    like: S,
    config: &EkfConfig,
) -> Result<EkfState<S>> {
    if results.is_empty() {
        return Ok(EkfState {
            z: fallback.lift(like),
            p: Cov2::diagonal(like, config.fallback_variance),
        });
    }
    let mut wsum: Option<S> = None;
    let mut acc: Option<Vec2<S>> = None;
    for r in results {
        let pos = lookup(aps, r.ap_id)?;
        let d = r.d.max_floor(1e-3);
        let w = d.lift(1.0) / d;
        let term = pos.lift(w).scale(w);
        acc = Some(match acc {
            None => term,
            Some(a) => a + term,
        });
        wsum = Some(match wsum {
            None => w,
            Some(s) => s + w,
        });
    }
    let (acc, wsum) = (acc.expect("non-empty"), wsum.expect("non-empty"));
    Ok(EkfState {
        z: Vec2::new(acc.x / wsum, acc.y / wsum),
        p: Cov2::diagonal(like, config.init_variance),
    })
}

/// Positioning geometry shared by every trajectory run.
#[derive(Debug, Clone)]
pub struct Positioner<'a> {
    pub aps: &'a [AccessPoint],
    /// Start point when the first step has no ranging.
    pub fallback: Point,
    pub config: EkfConfig,
}

impl<'a> Positioner<'a> {
    pub fn new(aps: &'a [AccessPoint], fallback: Point) -> Self {
        Positioner {
            aps,
            fallback,
            config: EkfConfig::default(),
        }
    }

    /// Filters a full sequence of per-step ranging lists.
    ///
    /// The state is initialised from the step-1 selection and then every
    /// step, including the first, runs [`ekf_step`].
    pub fn run<S: Scalar>(&self, steps: &[Vec<RangingResult<S>>], like: S) -> Result<Vec<Vec2<S>>> {
        let first = steps
            .first()
            .map(|s| select_aps(s, self.config.max_aps))
            .unwrap_or_default();
        let mut state = init_position(&first, self.aps, self.fallback, like, &self.config)?;
        let mut out = Vec::with_capacity(steps.len());
        for results in steps {
            state = ekf_step(state, results, self.aps, &self.config)?;
            out.push(state.z);
        }
        Ok(out)
    }

    /// Untaped trajectory with the ranging module applied to every
    /// measurement.
    pub fn run_with_module(&self, steps: &[Vec<(u32, FtmMeasurement)>], module: &RangingModule) -> Result<Vec<Point>> {
        let ranging: Vec<Vec<RangingResult<f64>>> = steps
            .iter()
            .map(|step| {
                step.iter()
                    .map(|(id, x)| {
                        let (d, s) = module.forward(x);
                        RangingResult { ap_id: *id, d, s }
                    })
                    .collect()
            })
            .collect();
        self.run(&ranging, 0.0)
    }
}

/// Writes `step,x,y` rows (steps counted from 1).
pub fn write_trajectory_csv(path: &Path, points: &[Point]) -> Result<()> {
    let mut out = String::from("step,x,y\n");
    for (k, p) in points.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", k + 1, p.x, p.y));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Least-squares multilateration by Gauss-Newton.
pub fn multilaterate(anchors: &[(Point, f64)], start: Point, iterations: usize) -> Point {
    let mut z = start;
    for _ in 0..iterations {
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(ap, d) in anchors {
            let diff = z - ap;
            let r = diff.norm().max(1e-9);
            let (hx, hy) = (diff.x / r, diff.y / r);
            let res = d - r;
            a11 += hx * hx;
            a12 += hx * hy;
            a22 += hy * hy;
            b1 += hx * res;
            b2 += hy * res;
        }
        let det = a11 * a22 - a12 * a12;
        if det.abs() < 1e-12 {
            break;
        }
        z += Point::new((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det);
    }
    z
}
