//! Ranging and positioning metrics over a labeled test run.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{calibrated_distance, fit_bias, fit_path_loss, path_loss_distance, PathLossParams};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ftm_sim::FtmMeasurement;
use crate::fusion::{run_fused, FusionConfig};
use crate::geom::Point;
use crate::positioning::{Positioner, RangingResult};
use crate::ranging_nn::RangingModule;
use crate::scenario::SiteConfig;

/// CDF abscissa spacing, meters.
pub const CDF_STEP: f64 = 0.1;
/// Standard deviation assigned to path-loss ranges, as a fraction of range.
pub const PATH_LOSS_RELATIVE_STD: f64 = 0.3;

#[derive(Debug, Clone, Copy)]
pub enum RangingMethod<'a> {
    Raw,
    PathLoss(PathLossParams),
    Calibrated(f64),
    Nn(&'a RangingModule),
}

impl RangingMethod<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            RangingMethod::Raw => "raw",
            RangingMethod::PathLoss(_) => "path-loss",
            RangingMethod::Calibrated(_) => "calibrated",
            RangingMethod::Nn(_) => "nn",
        }
    }

    /// Distance and standard deviation fed to the filter.
    pub fn range(&self, x: &FtmMeasurement) -> (f64, f64) {
        match self {
            RangingMethod::Raw => (x.d_ftm, x.s_ftm),
            RangingMethod::PathLoss(pl) => {
                let d = path_loss_distance(x.p_ftm, pl);
                (d, PATH_LOSS_RELATIVE_STD * d)
            }
            RangingMethod::Calibrated(delta) => (calibrated_distance(x.d_ftm, *delta), x.s_ftm),
            RangingMethod::Nn(m) => m.forward(x),
        }
    }

    pub fn ranging(&self, dataset: &Dataset) -> Vec<Vec<RangingResult<f64>>> {
        dataset
            .steps
            .iter()
            .map(|step| {
                step.iter()
                    .map(|m| {
                        let (d, s) = self.range(&m.ftm);
                        RangingResult { ap_id: m.ap_id, d, s }
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub mae: f64,
    pub p90: f64,
    pub n: usize,
}

pub fn mae(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return f64::NAN;
    }
    errors.iter().sum::<f64>() / errors.len() as f64
}

/// Running mean, one sample at a time.
pub fn mae_streaming(errors: impl IntoIterator<Item = f64>) -> f64 {
    let mut mean = 0.0;
    let mut n = 0usize;
    for e in errors {
        n += 1;
        mean += (e - mean) / n as f64;
    }
    if n == 0 {
        f64::NAN
    } else {
        mean
    }
}

/// Nearest-rank percentile, `q ∈ (0, 1]`.
pub fn percentile_nearest_rank(errors: &[f64], q: f64) -> f64 {
    if errors.is_empty() {
        return f64::NAN;
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64]) -> Self {
        ErrorStats {
            mae: mae(errors),
            p90: percentile_nearest_rank(errors, 0.9),
            n: errors.len(),
        }
    }
}

/// `(x, F(x))` on a [`CDF_STEP`] grid from 0 until the fraction reaches 1.
pub fn empirical_cdf(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut idx = 0;
    let mut i = 0usize;
    loop {
        let x = i as f64 * CDF_STEP;
        while idx < n && sorted[idx] <= x {
            idx += 1;
        }
        out.push((x, idx as f64 / n as f64));
        if idx == n {
            break;
        }
        i += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: String,
    pub errors: Vec<f64>,
    pub stats: ErrorStats,
    /// Mean number of APs entering the filter per step (positioning only).
    pub avg_aps: Option<f64>,
    pub trajectory: Option<Vec<Point>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    pub fn get(&self, method: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn mae(&self, method: &str) -> Option<f64> {
        self.get(method).map(|m| m.stats.mae)
    }

    /// `method,metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,metric,value\n");
        for m in &self.methods {
            let _ = writeln!(out, "{},mae,{}", m.method, m.stats.mae);
            let _ = writeln!(out, "{},p90,{}", m.method, m.stats.p90);
            let _ = writeln!(out, "{},n,{}", m.method, m.stats.n);
            if let Some(a) = m.avg_aps {
                let _ = writeln!(out, "{},avg_aps,{}", m.method, a);
            }
        }
        out
    }

    /// `method,error_m,fraction` rows.
    pub fn cdf_csv(&self) -> String {
        let mut out = String::from("method,error_m,fraction\n");
        for m in &self.methods {
            for (x, f) in empirical_cdf(&m.errors) {
                let _ = writeln!(out, "{},{:.1},{}", m.method, x, f);
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv())
    }

    pub fn write_cdf_csv(&self, path: &Path) -> Result<()> {
        write_text(path, &self.cdf_csv())
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn truth(dataset: &Dataset) -> Result<&[Point]> {
    dataset
        .truth
        .as_deref()
        .ok_or_else(|| Error::Dataset("evaluation needs ground-truth positions".into()))
}

/// `(measurement, true distance)` for every response in the run.
pub fn ranging_samples(dataset: &Dataset, site: &SiteConfig) -> Result<Vec<(FtmMeasurement, f64)>> {
    let truth = truth(dataset)?;
    let mut out = Vec::new();
    for (step, z) in dataset.steps.iter().zip(truth) {
        for m in step {
            let ap = site
                .ap(m.ap_id)
                .ok_or_else(|| Error::Dataset(format!("unknown AP id {}", m.ap_id)))?;
            out.push((m.ftm, z.distance(ap.position)));
        }
    }
    if out.is_empty() {
        return Err(Error::Dataset("test run contains no ranging responses".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FittedBaselines {
    pub path_loss: PathLossParams,
    pub delta: f64,
}

/// Least-squares path-loss and bias fits on labeled samples, normally a
/// [`crate::dataset::Survey`] kept apart from the test run.
pub fn fit_baselines(samples: &[(FtmMeasurement, f64)]) -> Result<FittedBaselines> {
    let pl: Vec<(f64, f64)> = samples.iter().map(|(m, d)| (*d, m.p_ftm)).collect();
    let bias: Vec<(f64, f64)> = samples.iter().map(|(m, d)| (*d, m.d_ftm)).collect();
    Ok(FittedBaselines {
        path_loss: fit_path_loss(&pl)?,
        delta: fit_bias(&bias)?,
    })
}

pub fn evaluate_ranging(dataset: &Dataset, site: &SiteConfig, methods: &[RangingMethod<'_>]) -> Result<EvalReport> {
    let samples = ranging_samples(dataset, site)?;
    let methods = methods
        .par_iter()
        .map(|method| {
            let errors: Vec<f64> = samples.iter().map(|(m, d)| (method.range(m).0 - d).abs()).collect();
            MethodReport {
                method: method.name().to_string(),
                stats: ErrorStats::from_errors(&errors),
                errors,
                avg_aps: None,
                trajectory: None,
            }
        })
        .collect();
    Ok(EvalReport { methods })
}

/// Per-step positioning errors for each method; `use_sensors` switches the
/// random-walk EKF for the PDR-driven fusion filter.
pub fn evaluate_positioning(
    dataset: &Dataset,
    site: &SiteConfig,
    methods: &[RangingMethod<'_>],
    use_sensors: bool,
    fusion: &FusionConfig,
) -> Result<EvalReport> {
    let truth = truth(dataset)?;
    let positioner = Positioner::new(&site.aps, site.center());
    let max_aps = positioner.config.max_aps;
    let avg_aps = dataset.steps.iter().map(|s| s.len().min(max_aps) as f64).sum::<f64>() / dataset.len().max(1) as f64;
    let methods = methods
        .par_iter()
        .map(|method| {
            let ranging = method.ranging(dataset);
            let traj = if use_sensors {
                run_fused(&positioner, &ranging, &dataset.pdr.positions, fusion)?
            } else {
                positioner.run(&ranging, 0.0)?
            };
            let errors: Vec<f64> = traj.iter().zip(truth).map(|(a, b)| a.distance(*b)).collect();
            Ok(MethodReport {
                method: method.name().to_string(),
                stats: ErrorStats::from_errors(&errors),
                errors,
                avg_aps: Some(avg_aps),
                trajectory: Some(traj),
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport { methods })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Generator;
    use crate::ftm_sim::ChannelModel;
    use crate::scenario::TruePath;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_statistics() {
        let e: Vec<f64> = (1..=10).map(f64::from).collect();
        let s = ErrorStats::from_errors(&e);
        assert_eq!(s.mae, 5.5);
        assert_eq!(s.p90, 9.0);
        let z = ErrorStats::from_errors(&[0.0; 7]);
        assert_eq!((z.mae, z.p90), (0.0, 0.0));
    }

    #[test]
    fn cdf_grid_and_endpoint() {
        let cdf = empirical_cdf(&[0.05, 0.25, 0.25, 1.0]);
        assert_eq!(cdf[0], (0.0, 0.0));
        assert_eq!(cdf[1].1, 0.25);
        assert_eq!(cdf[3].1, 0.75);
        assert_eq!(cdf.last().unwrap().1, 1.0);
        assert!((cdf.last().unwrap().0 - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn cdf_is_monotone_and_mae_paths_agree(errors in proptest::collection::vec(0.0f64..50.0, 1..300)) {
            let cdf = empirical_cdf(&errors);
            prop_assert!(cdf.windows(2).all(|w| w[1].1 >= w[0].1));
            prop_assert_eq!(cdf.last().unwrap().1, 1.0);
            let a = mae(&errors);
            let b = mae_streaming(errors.iter().copied());
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn noiseless_ranging_positions_precisely() {
        let site = SiteConfig::default_office();
        let channel = ChannelModel {
            los_noise_std: 0.0,
            nlos_bias_mean: 0.0,
            nlos_bias_std: 0.0,
            ..ChannelModel::default()
        };
        let gen = Generator::new(&site, channel);
        let test = gen.along_path(3, &TruePath::default_test_path()).unwrap();
        let report =
            evaluate_positioning(&test, &site, &[RangingMethod::Raw], false, &FusionConfig::default()).unwrap();
        assert!(report.mae("raw").unwrap() < 0.3, "{:?}", report.methods[0].stats);
    }

    #[test]
    fn calibration_removes_an_exact_constant_bias() {
        let site = SiteConfig {
            stochastic_nlos: Some(1.0),
            ..SiteConfig::default_office()
        };
        let channel = ChannelModel {
            nlos_bias_std: 0.0,
            ..ChannelModel::default()
        };
        let gen = Generator::new(&site, channel);
        let test = gen.along_path(5, &TruePath::default_test_path()).unwrap();
        let fit = fit_baselines(&gen.survey(5, 200).samples(&site).unwrap()).unwrap();
        assert!((fit.delta - channel.nlos_bias_mean).abs() < 0.1, "{fit:?}");
        let report = evaluate_ranging(
            &test,
            &site,
            &[RangingMethod::Raw, RangingMethod::Calibrated(fit.delta)],
        )
        .unwrap();
        // |N(0, σ²)| has mean σ·√(2/π); burst averaging shrinks σ by √B
        let noise_mae =
            channel.los_noise_std / (channel.burst_size as f64).sqrt() * (2.0 / std::f64::consts::PI).sqrt();
        let cal = report.mae("calibrated").unwrap();
        assert!((cal - noise_mae).abs() < 0.05, "{cal} vs {noise_mae}");
        assert!(report.mae("raw").unwrap() > 4.0);
    }

    #[test]
    fn sensors_help_on_the_default_run() {
        let site = SiteConfig::default_office();
        let gen = Generator::new(&site, ChannelModel::default());
        let test = gen.along_path(1, &TruePath::default_test_path()).unwrap();
        let fit = fit_baselines(&gen.survey(1, 200).samples(&site).unwrap()).unwrap();
        let m = [RangingMethod::Calibrated(fit.delta)];
        let off = evaluate_positioning(&test, &site, &m, false, &FusionConfig::default()).unwrap();
        let on = evaluate_positioning(&test, &site, &m, true, &FusionConfig::default()).unwrap();
        assert!(on.mae("calibrated").unwrap() <= off.mae("calibrated").unwrap());
    }
}
