//! Comparison ranging methods: RSS path-loss inversion and constant-bias
//! calibration, with their least-squares fits.

use crate::error::{Error, Result};
pub use crate::ftm_sim::PathLoss as PathLossParams;

/// `d0 · 10^((p0 − p)/(10 η))`.
pub fn path_loss_distance(p: f64, params: &PathLossParams) -> f64 {
    params.distance(p)
}

/// `max(0, d_ftm − δ)`.
pub fn calibrated_distance(d_ftm: f64, delta: f64) -> f64 {
    (d_ftm - delta).max(0.0)
}

fn path_loss_sse(samples: &[(f64, f64)], p0: f64, eta: f64) -> f64 {
    let params = PathLossParams { d0: 1.0, p0, eta };
    samples
        .iter()
        .map(|&(d, p)| {
            let e = path_loss_distance(p, &params) - d;
            e * e
        })
        .sum()
}

/// Least-squares `(p0, η)` with `d0 = 1 m` from `(d_true, p)` samples.
///
/// Coarse grid over p0 ∈ [−70, 10] dBm and η ∈ [1, 8], then a shrinking
/// compass search around the best cell.
pub fn fit_path_loss(samples: &[(f64, f64)]) -> Result<PathLossParams> {
    if samples.len() < 2 {
        return Err(Error::Dataset("path-loss fit needs at least two samples".into()));
    }
    if samples
        .iter()
        .any(|&(d, p)| !(d.is_finite() && p.is_finite() && d >= 0.0))
    {
        return Err(Error::Dataset("path-loss fit received non-finite samples".into()));
    }
    let (d_first, p_first) = samples[0];
    if samples.iter().all(|&(_, p)| p == p_first) {
        return Err(Error::Dataset("path-loss fit needs distinct RSS values".into()));
    }
    if samples.iter().all(|&(d, _)| d == d_first) {
        return Err(Error::Dataset("path-loss fit needs more than one distance".into()));
    }
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=160 {
        let p0 = -70.0 + 0.5 * i as f64;
        for j in 0..=140 {
            let eta = 1.0 + 0.05 * j as f64;
            let c = path_loss_sse(samples, p0, eta);
            if c < best.0 {
                best = (c, p0, eta);
            }
        }
    }
    let (mut cost, mut p0, mut eta) = best;
    let (mut sp, mut se) = (0.5, 0.05);
    while sp > 1e-7 {
        let mut moved = false;
        for (dp, de) in [(sp, 0.0), (-sp, 0.0), (0.0, se), (0.0, -se)] {
            let (np, ne) = (p0 + dp, eta + de);
            if ne <= 0.0 {
                continue;
            }
            let c = path_loss_sse(samples, np, ne);
            if c < cost {
                (cost, p0, eta) = (c, np, ne);
                moved = true;
            }
        }
        if !moved {
            sp *= 0.5;
            se *= 0.5;
        }
    }
    Ok(PathLossParams { d0: 1.0, p0, eta })
}

fn bias_sse(samples: &[(f64, f64)], delta: f64) -> f64 {
    samples
        .iter()
        .map(|&(d, m)| {
            let e = calibrated_distance(m, delta) - d;
            e * e
        })
        .sum()
}

/// Least-squares δ from `(d_true, d_ftm)` samples: 0.01 m grid over
/// `[0, max d_ftm]`, then golden-section refinement inside the neighbouring
/// cells. Ties keep the smallest δ.
pub fn fit_bias(samples: &[(f64, f64)]) -> Result<f64> {
    fit_bias_on_grid(samples, 0.01)
}

/// Grid-only minimiser with spacing `step`, useful as a reference.
pub fn fit_bias_grid(samples: &[(f64, f64)], step: f64) -> Result<f64> {
    Ok(scan_bias(samples, step)?.0)
}

fn scan_bias(samples: &[(f64, f64)], step: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Dataset("bias fit needs at least one sample".into()));
    }
    if samples.iter().any(|&(d, m)| !(d.is_finite() && m.is_finite())) {
        return Err(Error::Dataset("bias fit received non-finite samples".into()));
    }
    let hi = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    let n = (hi / step).ceil() as usize;
    let mut best = (0.0, bias_sse(samples, 0.0));
    for i in 1..=n {
        let delta = (i as f64 * step).min(hi);
        let c = bias_sse(samples, delta);
        if c < best.1 {
            best = (delta, c);
        }
    }
    Ok(best)
}

fn fit_bias_on_grid(samples: &[(f64, f64)], step: f64) -> Result<f64> {
    let (grid_best, grid_cost) = scan_bias(samples, step)?;
    let hi = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    let (mut a, mut b) = ((grid_best - step).max(0.0), (grid_best + step).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if bias_sse(samples, c) <= bias_sse(samples, d) {
            b = d;
        } else {
            a = c;
        }
    }
    let refined = 0.5 * (a + b);
    Ok(if bias_sse(samples, refined) < grid_cost {
        refined
    } else {
        grid_best
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ftm_sim::{simulate_burst, ChannelModel};
    use crate::scenario::LinkCondition;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn path_loss_examples() {
        let pl = PathLossParams::default();
        assert_eq!(path_loss_distance(-20.6, &pl), 1.0);
        assert!((path_loss_distance(-60.6, &pl) - 10.0).abs() < 1e-12);
        let p = pl.p0 + 10.0 * pl.eta;
        assert!((path_loss_distance(p, &pl) - pl.d0 / 10.0).abs() < 1e-15);
    }

    #[test]
    fn calibration_examples() {
        assert!((calibrated_distance(10.0, 4.4) - 5.6).abs() < 1e-12);
        assert_eq!(calibrated_distance(2.0, 6.6), 0.0);
        assert_eq!(calibrated_distance(7.25, 0.0), 7.25);
    }

    #[test]
    fn path_loss_fit_recovers_noiseless_parameters() {
        let truth = PathLossParams::default();
        let samples: Vec<(f64, f64)> = (1..=40)
            .map(|i| {
                let d = 0.75 * i as f64;
                (d, truth.rss(d))
            })
            .collect();
        let fit = fit_path_loss(&samples).unwrap();
        assert_eq!(fit.d0, 1.0);
        assert!((fit.p0 - truth.p0).abs() < 0.1, "{fit:?}");
        assert!((fit.eta - truth.eta).abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn path_loss_fit_is_stable_under_rss_noise() {
        let truth = PathLossParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = Normal::new(0.0, 2.0).unwrap();
        let samples: Vec<(f64, f64)> = (0..1000)
            .map(|_| {
                // log-uniform over 1..40 m; a hard upper edge on a uniform
                // range pulls the distance-space fit toward larger eta
                let d = 10f64.powf(rng.random_range(0.0..40f64.log10()));
                (d, truth.rss(d) + noise.sample(&mut rng))
            })
            .collect();
        let fit = fit_path_loss(&samples).unwrap();
        assert!((fit.eta - 4.0).abs() < 0.4, "{fit:?}");
    }

    #[test]
    fn path_loss_fit_rejects_degenerate_samples() {
        assert!(fit_path_loss(&[(5.0, -40.0)]).is_err());
        assert!(fit_path_loss(&[(5.0, -40.0), (5.0, -45.0), (5.0, -50.0)]).is_err());
        assert!(fit_path_loss(&[(5.0, -40.0), (6.0, -40.0)]).is_err());
    }

    #[test]
    fn bias_fit_exact_offset_and_unbiased() {
        let shifted: Vec<(f64, f64)> = (0..50).map(|i| (5.0 + i as f64 * 0.5, 9.4 + i as f64 * 0.5)).collect();
        assert!((fit_bias(&shifted).unwrap() - 4.4).abs() < 0.01);
        let clean: Vec<(f64, f64)> = (0..50).map(|i| (1.0 + i as f64, 1.0 + i as f64)).collect();
        assert!(fit_bias(&clean).unwrap().abs() < 0.01);
        assert!(fit_bias(&[]).is_err());
    }

    #[test]
    fn bias_fit_tracks_a_fine_grid_on_simulated_data() {
        let model = ChannelModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut samples = Vec::new();
        while samples.len() < 2000 {
            let d: f64 = rng.random_range(1.0..50.0);
            let link = if rng.random::<f64>() < 0.5 {
                LinkCondition::Los
            } else {
                LinkCondition::Nlos
            };
            if let Some(m) = simulate_burst(d, link, &model, &mut rng) {
                samples.push((d, m.d_ftm));
            }
        }
        let coarse = fit_bias(&samples).unwrap();
        let fine = fit_bias_grid(&samples, 0.001).unwrap();
        assert!((coarse - fine).abs() < 0.5, "{coarse} vs {fine}");
        assert!(bias_sse(&samples, coarse) <= bias_sse(&samples, fine) + 1e-6);
    }
}
