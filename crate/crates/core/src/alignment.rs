//! Rotation/translation invariant trajectory mismatch.
//!
//! For Wi-Fi estimates `ẑ_k` and reference points `p_k`, the cost is the
//! minimum over all planar rotations `R` and translations `t` of
//! `Σ_k ‖ẑ_k − (R p_k + t)‖²`, available in closed form:
//!
//! ```text
//! L = Σ‖ẑ‖² + Σ‖p‖² − (‖Σẑ‖² + ‖Σp‖²)/K − 2·sqrt(Γ² + Γ̃² + ε)
//! Γ  = (Σẑ)ᵀ(Σp)/K − Σ ẑᵀp
//! Γ̃ = (Σẑ)ᵀ Ĩ (Σp)/K − Σ ẑᵀ Ĩ p,     Ĩ = [[0, −1], [1, 0]]
//! ```
//!
//! The implementation evaluates the algebraically identical centered form
//! (`Σ‖ẑ − mean ẑ‖²` etc.), which avoids cancellation for trajectories far
//! from the origin. Reflections and scaling are not searched.

use crate::autodiff::{Scalar, SQRT_EPS};
use crate::error::{config, Result};
use crate::geom::{Point, Vec2};

/// Paired trajectories of equal length `K ≥ 2`.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryPair<'a, S> {
    pub wifi: &'a [Vec2<S>],
    pub pdr: &'a [Point],
}

impl<'a, S: Scalar> TrajectoryPair<'a, S> {
    pub fn new(wifi: &'a [Vec2<S>], pdr: &'a [Point]) -> Result<Self> {
        if wifi.len() != pdr.len() {
            return Err(config(format!(
                "trajectory lengths differ: {} Wi-Fi vs {} reference",
                wifi.len(),
                pdr.len()
            )));
        }
        if wifi.len() < 2 {
            return Err(config("alignment needs at least two time steps"));
        }
        Ok(TrajectoryPair { wifi, pdr })
    }

    pub fn len(&self) -> usize {
        self.wifi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wifi.is_empty()
    }
}

fn mean_point(points: &[Point]) -> Point {
    let k = points.len() as f64;
    let s = points.iter().fold(Point::ZERO, |a, &p| a + p);
    Point::new(s.x / k, s.y / k)
}

fn mean_generic<S: Scalar>(points: &[Vec2<S>]) -> Vec2<S> {
    let k = points.len() as f64;
    let s = crate::geom::sum(points).expect("non-empty");
    Vec2::new(s.x / k, s.y / k)
}

/// `(Γ, Γ̃)` evaluated literally from the sums.
pub fn gamma_terms<S: Scalar>(pair: &TrajectoryPair<'_, S>) -> (S, S) {
    let k = pair.len() as f64;
    let sum_z = crate::geom::sum(pair.wifi).expect("non-empty");
    let sum_p = pair.pdr.iter().fold(Point::ZERO, |a, &p| a + p);
    let mut dot = sum_z.x.lift(0.0);
    let mut cross = sum_z.x.lift(0.0);
    for (z, p) in pair.wifi.iter().zip(pair.pdr) {
        dot = dot + z.x * p.x + z.y * p.y;
        // zᵀ Ĩ p with Ĩ p = (−p_y, p_x)
        cross = cross + z.y * p.x - z.x * p.y;
    }
    let gamma = (sum_z.x * sum_p.x + sum_z.y * sum_p.y) / k - dot;
    let gamma_t = (sum_z.y * sum_p.x - sum_z.x * sum_p.y) / k - cross;
    (gamma, gamma_t)
}

/// Centered sums: `(Σ‖ẑ_c‖², Σ‖p_c‖², Σ ẑ_c·p_c, Σ ẑ_cᵀ Ĩ p_c)`.
fn centered_moments<S: Scalar>(pair: &TrajectoryPair<'_, S>) -> (S, f64, S, S) {
    let zbar = mean_generic(pair.wifi);
    let pbar = mean_point(pair.pdr);
    let zero = zbar.x.lift(0.0);
    let (mut zz, mut pp, mut zp, mut zip) = (zero, 0.0, zero, zero);
    for (z, p) in pair.wifi.iter().zip(pair.pdr) {
        let zc = *z - zbar;
        let pc = *p - pbar;
        zz = zz + zc.norm_sq();
        pp += pc.norm_sq();
        zp = zp + zc.x * pc.x + zc.y * pc.y;
        zip = zip + zc.y * pc.x - zc.x * pc.y;
    }
    (zz, pp, zp, zip)
}

/// Minimum rigid-alignment SSE between the two trajectories.
pub fn aligned_cost<S: Scalar>(pair: &TrajectoryPair<'_, S>) -> S {
    let (zz, pp, zp, zip) = centered_moments(pair);
    // Γ = −zp, Γ̃ = −zip; the signs vanish under the square
    let radical = (zp.square() + zip.square() + SQRT_EPS).sqrt();
    zz + pp - radical * 2.0
}

/// Rigid transform `(angle, t)` such that `R(angle)·p + t` best matches the
/// Wi-Fi trajectory.
pub fn optimal_transform(pair: &TrajectoryPair<'_, f64>) -> (f64, Point) {
    let (_, _, zp, zip) = centered_moments(pair);
    let zbar = mean_point(pair.wifi);
    let pbar = mean_point(pair.pdr);
    let angle = if zp.hypot(zip) > 0.0 { zip.atan2(zp) } else { 0.0 };
    (angle, zbar - pbar.rotate(angle))
}

/// Applies `R(angle)·p + t` to every point.
pub fn transform(points: &[Point], angle: f64, t: Point) -> Vec<Point> {
    points.iter().map(|p| p.rotate(angle) + t).collect()
}

/// Plain sum of squared point distances.
pub fn sse(a: &[Point], b: &[Point]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (*p - *q).norm_sq()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    fn random_traj(rng: &mut ChaCha8Rng, k: usize) -> Vec<Point> {
        (0..k)
            .map(|_| Point::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)))
            .collect()
    }

    #[test]
    fn gamma_examples() {
        let z = pts(&[(1.0, 0.0), (-1.0, 0.0)]);
        let pair = TrajectoryPair::new(&z, &z).unwrap();
        assert_eq!(gamma_terms(&pair), (-2.0, 0.0));

        let c = pts(&[(1.0, 2.0), (-3.0, 0.5), (2.0, -2.5)]);
        let (g, gt) = gamma_terms(&TrajectoryPair::new(&c, &c).unwrap());
        let norm: f64 = c.iter().map(|p| p.norm_sq()).sum();
        assert!((g + norm).abs() < 1e-12 && gt.abs() < 1e-12);
    }

    #[test]
    fn swapping_negates_gamma_tilde() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_traj(&mut rng, 7);
        let b = random_traj(&mut rng, 7);
        let (g1, t1) = gamma_terms(&TrajectoryPair::new(&a, &b).unwrap());
        let (g2, t2) = gamma_terms(&TrajectoryPair::new(&b, &a).unwrap());
        assert!((g1 - g2).abs() < 1e-9);
        assert!((t1 + t2).abs() < 1e-9);
    }

    #[test]
    fn centered_and_literal_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = random_traj(&mut rng, 9);
            let b = random_traj(&mut rng, 9);
            let pair = TrajectoryPair::new(&a, &b).unwrap();
            let k = a.len() as f64;
            let (g, gt) = gamma_terms(&pair);
            let sz = a.iter().fold(Point::ZERO, |s, &p| s + p);
            let sp = b.iter().fold(Point::ZERO, |s, &p| s + p);
            let literal = a.iter().map(|p| p.norm_sq()).sum::<f64>() + b.iter().map(|p| p.norm_sq()).sum::<f64>()
                - (sz.norm_sq() + sp.norm_sq()) / k
                - 2.0 * (g * g + gt * gt + SQRT_EPS).sqrt();
            let closed = aligned_cost(&pair);
            assert!((literal - closed).abs() < 1e-9 * closed.abs().max(1.0));
        }
    }

    #[test]
    fn congruent_trajectories_cost_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random_traj(&mut rng, 12);
        assert!(aligned_cost(&TrajectoryPair::new(&z, &z).unwrap()) < 1e-9);
        let moved = transform(&z, 37f64.to_radians(), Point::new(5.0, -3.0));
        let c = aligned_cost(&TrajectoryPair::new(&z, &moved).unwrap());
        assert!(c.abs() < 1e-9, "{c}");
    }

    #[test]
    fn transform_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = random_traj(&mut rng, 10);
        let shifted: Vec<Point> = z.iter().map(|p| *p - Point::new(5.0, -3.0)).collect();
        let (angle, t) = optimal_transform(&TrajectoryPair::new(&z, &shifted).unwrap());
        assert!(angle.abs() < 1e-12);
        assert!(t.distance(Point::new(5.0, -3.0)) < 1e-9);

        let turned = transform(&z, -37f64.to_radians(), Point::ZERO);
        let (angle, t) = optimal_transform(&TrajectoryPair::new(&z, &turned).unwrap());
        assert!((angle - 37f64.to_radians()).abs() < 1e-12);
        assert!(t.norm() < 1e-9);
    }

    #[test]
    fn transform_reproduces_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let k = rng.random_range(2..30);
            let a = random_traj(&mut rng, k);
            let b = random_traj(&mut rng, k);
            let pair = TrajectoryPair::new(&a, &b).unwrap();
            let (angle, t) = optimal_transform(&pair);
            let direct = sse(&a, &transform(&b, angle, t));
            assert!((direct - aligned_cost(&pair)).abs() < 1e-9 * direct.max(1.0));
        }
    }

    #[test]
    fn degenerate_pair_falls_back_to_translation() {
        let z = pts(&[(2.0, 2.0), (2.0, 2.0), (2.0, 2.0)]);
        let p = pts(&[(1.0, 0.0), (1.0, 0.0), (1.0, 0.0)]);
        let (angle, t) = optimal_transform(&TrajectoryPair::new(&z, &p).unwrap());
        assert_eq!(angle, 0.0);
        assert!(t.distance(Point::new(1.0, 2.0)) < 1e-12);
    }

    #[test]
    fn invalid_pairs_rejected() {
        let a = pts(&[(0.0, 0.0), (1.0, 0.0)]);
        let b = pts(&[(0.0, 0.0)]);
        assert!(TrajectoryPair::new(&a, &b).is_err());
        assert!(TrajectoryPair::new(&b, &b).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_traj(&mut rng, 8);
        let b = random_traj(&mut rng, 8);
        let tape = Tape::new();
        let vars: Vec<Vec2<_>> = a.iter().map(|p| Vec2::new(tape.var(p.x), tape.var(p.y))).collect();
        let cost = aligned_cost(&TrajectoryPair::new(&vars, &b).unwrap());
        let g = tape.backward(cost).unwrap();
        let h = 1e-5;
        for i in 0..a.len() {
            for axis in 0..2 {
                let eval = |delta: f64| {
                    let mut q = a.clone();
                    if axis == 0 {
                        q[i].x += delta
                    } else {
                        q[i].y += delta
                    }
                    aligned_cost(&TrajectoryPair::new(&q, &b).unwrap())
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let v = if axis == 0 { vars[i].x } else { vars[i].y };
                let an = g.wrt(v);
                assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6) < 1e-4);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn cost_is_non_negative(seed: u64, k in 2usize..25) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_traj(&mut rng, k);
            let b = random_traj(&mut rng, k);
            proptest::prop_assert!(aligned_cost(&TrajectoryPair::new(&a, &b).unwrap()) >= -1e-9);
        }
    }
}
