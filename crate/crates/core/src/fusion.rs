//! Online Wi-Fi/PDR fusion used for the sensors-on evaluation.
//!
//! State `(x, y, θ)`: position plus the rotation taking the PDR frame onto
//! the site frame. The prediction moves the position by the PDR displacement
//! rotated by `θ`; range updates are the same sequential scalar updates as in
//! the Wi-Fi-only filter. `θ` starts from a rigid alignment of the first
//! `warmup` Wi-Fi-only estimates against PDR.

#![allow(clippy::needless_range_loop)]

use crate::alignment::{optimal_transform, TrajectoryPair};
use crate::error::Result;
use crate::geom::Point;
use crate::positioning::{
    init_position, lookup, select_aps, Positioner, RangingResult, MIN_JACOBIAN_RANGE, MIN_RANGE_STD,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Position process noise per step, m².
    pub position_noise: f64,
    /// Heading-offset random walk per step, rad².
    pub heading_noise: f64,
    /// Initial heading-offset variance, rad².
    pub heading_variance: f64,
    /// Wi-Fi-only steps used to estimate the initial heading offset.
    pub warmup: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            position_noise: 0.05,
            heading_noise: 1e-4,
            heading_variance: 0.1,
            warmup: 20,
        }
    }
}

type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionState {
    pub x: [f64; 3],
    pub p: Mat3,
}

impl FusionState {
    pub fn position(&self) -> Point {
        Point::new(self.x[0], self.x[1])
    }
}

fn symmetrize(p: &mut Mat3) {
    for i in 0..3 {
        for j in (i + 1)..3 {
            let m = 0.5 * (p[i][j] + p[j][i]);
            p[i][j] = m;
            p[j][i] = m;
        }
    }
}

/// Rotates `delta` by the heading offset and propagates the covariance.
pub fn predict(state: &mut FusionState, delta: Point, cfg: &FusionConfig) {
    let th = state.x[2];
    let (s, c) = th.sin_cos();
    state.x[0] += c * delta.x - s * delta.y;
    state.x[1] += s * delta.x + c * delta.y;
    let f02 = -s * delta.x - c * delta.y;
    let f12 = c * delta.x - s * delta.y;
    let f: Mat3 = [[1.0, 0.0, f02], [0.0, 1.0, f12], [0.0, 0.0, 1.0]];
    // F P Fᵀ
    let p = state.p;
    let mut fp = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            fp[i][j] = (0..3).map(|k| f[i][k] * p[k][j]).sum();
        }
    }
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| fp[i][k] * f[j][k]).sum();
        }
    }
    out[0][0] += cfg.position_noise;
    out[1][1] += cfg.position_noise;
    out[2][2] += cfg.heading_noise;
    symmetrize(&mut out);
    state.p = out;
}

/// Scalar range update; skipped when the state sits on the AP.
pub fn range_update(state: &mut FusionState, ap: Point, d: f64, s: f64) {
    let dx = state.x[0] - ap.x;
    let dy = state.x[1] - ap.y;
    let r = (dx * dx + dy * dy).sqrt();
    if r < MIN_JACOBIAN_RANGE {
        return;
    }
    let h = [dx / r, dy / r];
    let p = state.p;
    let pht: [f64; 3] = std::array::from_fn(|i| p[i][0] * h[0] + p[i][1] * h[1]);
    let s = s.max(MIN_RANGE_STD);
    let innov_var = h[0] * pht[0] + h[1] * pht[1] + s * s;
    let k: [f64; 3] = std::array::from_fn(|i| pht[i] / innov_var);
    let innovation = d - r;
    for i in 0..3 {
        state.x[i] += k[i] * innovation;
    }
    // (I − K H) P, with H P = phtᵀ by symmetry
    let mut out = p;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] -= k[i] * pht[j];
        }
    }
    symmetrize(&mut out);
    state.p = out;
}

/// Runs the fused filter over a whole sequence.
pub fn run_fused(
    positioner: &Positioner<'_>,
    steps: &[Vec<RangingResult<f64>>],
    pdr: &[Point],
    cfg: &FusionConfig,
) -> Result<Vec<Point>> {
    if steps.is_empty() {
        return Ok(Vec::new());
    }
    let warm = cfg.warmup.min(steps.len()).min(pdr.len());
    let heading = if warm >= 2 {
        let wifi = positioner.run(&steps[..warm], 0.0)?;
        optimal_transform(&TrajectoryPair::new(&wifi, &pdr[..warm])?).0
    } else {
        0.0
    };
    let ekf = &positioner.config;
    let first = select_aps(&steps[0], ekf.max_aps);
    let init = init_position(&first, positioner.aps, positioner.fallback, 0.0, ekf)?;
    let mut state = FusionState {
        x: [init.z.x, init.z.y, heading],
        p: [
            [init.p.xx, init.p.xy, 0.0],
            [init.p.yx, init.p.yy, 0.0],
            [0.0, 0.0, cfg.heading_variance],
        ],
    };
    let mut out = Vec::with_capacity(steps.len());
    for (k, results) in steps.iter().enumerate() {
        let delta = if k > 0 { pdr[k] - pdr[k - 1] } else { Point::ZERO };
        predict(&mut state, delta, cfg);
        for r in select_aps(results, ekf.max_aps) {
            range_update(&mut state, lookup(positioner.aps, r.ap_id)?, r.d, r.s);
        }
        out.push(state.position());
    }
    Ok(out)
}
