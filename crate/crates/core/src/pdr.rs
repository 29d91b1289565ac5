//! Step-level pedestrian dead reckoning.
//!
//! The reference trajectory is built from per-step lengths and headings in
//! an arbitrary frame: it starts at an arbitrary point and its heading
//! reference is random, so it matches the true path only up to a rigid
//! motion (plus drift).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::geom::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdrConfig {
    /// Nominal step length; together with `step_length_std` it sets the
    /// relative step-length error.
    pub step_length_mean: f64,
    pub step_length_std: f64,
    /// White heading noise per step, rad.
    pub heading_noise_std: f64,
    /// Systematic heading ramp, rad per step.
    pub heading_drift_rate: f64,
    pub phi_ref: f64,
    pub initial_position: Point,
}

impl Default for PdrConfig {
    fn default() -> Self {
        PdrConfig {
            step_length_mean: 0.7,
            step_length_std: 0.035,
            heading_noise_std: 0.01,
            heading_drift_rate: 0.0005,
            phi_ref: 0.0,
            initial_position: Point::ZERO,
        }
    }
}

impl PdrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_length_mean > 0.0) {
            return Err(config("step_length_mean must be positive"));
        }
        if !(self.step_length_std >= 0.0 && self.heading_noise_std >= 0.0) {
            return Err(config("PDR noise levels must be non-negative"));
        }
        Ok(())
    }

    /// Same noise levels with a fresh random heading reference and start
    /// point (uniform in ±`extent` m).
    pub fn randomized<R: Rng + ?Sized>(&self, extent: f64, rng: &mut R) -> Self {
        PdrConfig {
            phi_ref: rng.random_range(0.0..std::f64::consts::TAU),
            initial_position: Point::new(rng.random_range(-extent..=extent), rng.random_range(-extent..=extent)),
            ..*self
        }
    }

    fn relative_step_error(&self) -> f64 {
        self.step_length_std / self.step_length_mean
    }
}

/// Reference positions `p^(k)`, one per Wi-Fi ranging step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdrTrajectory {
    pub positions: Vec<Point>,
}

/// Unit walking direction for heading `phi + phi_ref`.
pub fn heading_vector(angle: f64) -> Point {
    Point::new(-angle.sin(), angle.cos())
}

/// One dead-reckoning update.
pub fn pdr_step(prev: Point, step_length: f64, heading: f64, phi_ref: f64) -> Point {
    prev + heading_vector(heading + phi_ref) * step_length
}

/// Heading (in the convention of [`heading_vector`]) of a displacement.
pub fn heading_of(displacement: Point) -> f64 {
    (-displacement.x).atan2(displacement.y)
}

/// Dead-reckoned counterpart of `true_positions`.
///
/// Step `j` (between samples `j-1` and `j`) uses the true step length scaled
/// by `1 + N(0, (std/mean)^2)` and the true heading plus `drift · j` plus
/// white noise.
pub fn simulate_pdr<R: Rng + ?Sized>(
    true_positions: &[Point],
    config: &PdrConfig,
    rng: &mut R,
) -> Result<PdrTrajectory> {
    config.validate()?;
    if true_positions.len() < 2 {
        return Err(crate::error::config("PDR needs at least two true positions"));
    }
    let length_noise = Normal::new(0.0, config.relative_step_error()).expect("validated std");
    let heading_noise = Normal::new(0.0, config.heading_noise_std).expect("validated std");
    let mut positions = Vec::with_capacity(true_positions.len());
    let mut p = config.initial_position;
    positions.push(p);
    for (j, w) in true_positions.windows(2).enumerate() {
        let delta = w[1] - w[0];
        let true_len = delta.norm();
        let mut length = true_len;
        let mut heading = if true_len > 0.0 { heading_of(delta) } else { 0.0 };
        if config.step_length_std > 0.0 {
            length *= 1.0 + length_noise.sample(rng);
        }
        heading += config.heading_drift_rate * (j + 1) as f64;
        if config.heading_noise_std > 0.0 {
            heading += heading_noise.sample(rng);
        }
        p = pdr_step(p, length.max(0.0), heading, config.phi_ref);
        positions.push(p);
    }
    Ok(PdrTrajectory { positions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn noiseless(phi_ref: f64, start: Point) -> PdrConfig {
        PdrConfig {
            step_length_std: 0.0,
            heading_noise_std: 0.0,
            heading_drift_rate: 0.0,
            phi_ref,
            initial_position: start,
            ..PdrConfig::default()
        }
    }

    fn wiggle(n: usize) -> Vec<Point> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                Point::new(t * 0.8 + (t * 0.3).sin(), 5.0 * (t * 0.07).cos())
            })
            .collect()
    }

    #[test]
    fn step_examples() {
        let p = pdr_step(Point::ZERO, 0.7, 0.0, 0.0);
        assert!((p - Point::new(0.0, 0.7)).norm() < 1e-15);
        let p = pdr_step(Point::ZERO, 0.7, FRAC_PI_2, 0.0);
        assert!((p - Point::new(-0.7, 0.0)).norm() < 1e-15);
        let p = pdr_step(Point::new(1.0, 1.0), 0.0, 1.3, 0.4);
        assert_eq!(p, Point::new(1.0, 1.0));
    }

    #[test]
    fn noiseless_reproduces_truth() {
        let truth = wiggle(50);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pdr = simulate_pdr(&truth, &noiseless(0.0, truth[0]), &mut rng).unwrap();
        assert_eq!(pdr.positions.len(), truth.len());
        for (a, b) in pdr.positions.iter().zip(&truth) {
            assert!(a.distance(*b) < 1e-9);
        }
    }

    #[test]
    fn noiseless_is_rigid_motion() {
        let truth = wiggle(40);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pdr = simulate_pdr(&truth, &noiseless(1.1, Point::new(-30.0, 12.0)), &mut rng).unwrap();
        for i in 0..truth.len() {
            for j in 0..truth.len() {
                let a = pdr.positions[i].distance(pdr.positions[j]);
                let b = truth[i].distance(truth[j]);
                assert!((a - b).abs() < 1e-9);
            }
        }
        // rotation by phi_ref about the start
        let expect = (truth[7] - truth[0]).rotate(1.1) + Point::new(-30.0, 12.0);
        assert!(pdr.positions[7].distance(expect) < 1e-9);
    }

    #[test]
    fn linear_drift_closed_form() {
        // straight unit steps along +y (heading 0); step j gets heading drift·j
        let truth: Vec<Point> = (0..=100).map(|i| Point::new(0.0, i as f64)).collect();
        let drift = 0.001;
        let cfg = PdrConfig {
            heading_drift_rate: drift,
            ..noiseless(0.0, Point::ZERO)
        };
        let pdr = simulate_pdr(&truth, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let n = pdr.positions.len();
        let last_step = pdr.positions[n - 1] - pdr.positions[n - 2];
        assert!((heading_of(last_step) - 0.1).abs() < 1e-12);

        // Σ_{j=1}^{100} (-sin(a j), cos(a j)) via the geometric series of e^{iaj}
        let a = drift;
        let m = 100.0;
        let half = (m * a / 2.0).sin() / (a / 2.0).sin();
        let mid = a * (m + 1.0) / 2.0;
        let endpoint = Point::new(-half * mid.sin(), half * mid.cos());
        assert!(pdr.positions[n - 1].distance(endpoint) < 1e-9);
        let deviation = endpoint.distance(truth[100]);
        assert!(deviation > 4.0 && deviation < 6.0, "{deviation}");
    }

    #[test]
    fn too_short_input_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(simulate_pdr(&[Point::ZERO], &PdrConfig::default(), &mut rng).is_err());
        let bad = PdrConfig {
            step_length_mean: 0.0,
            ..PdrConfig::default()
        };
        assert!(simulate_pdr(&wiggle(3), &bad, &mut rng).is_err());
    }

    #[test]
    fn noisy_output_length_matches() {
        let truth = wiggle(100);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = PdrConfig::default().randomized(50.0, &mut rng);
        let pdr = simulate_pdr(&truth, &cfg, &mut rng).unwrap();
        assert_eq!(pdr.positions.len(), 100);
        assert_eq!(pdr.positions[0], cfg.initial_position);
    }
}
