//! Synthetic FTM burst measurements.
//!
//! Each ranging request produces `B` per-packet distances; the burst reports
//! their mean and sample standard deviation together with the mean RSS.
//! NLOS links add a positive bias that is drawn once per burst, so the
//! reported standard deviation reflects timing noise only.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::scenario::LinkCondition;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Outcome of one FTM exchange as seen by the responder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundTrip {
    /// Round-trip time, nanoseconds.
    pub tau_ns: f64,
    /// One-way distance `tau · c / 2`, meters.
    pub one_way_distance: f64,
}

/// Round-trip time from the four exchange timestamps (nanoseconds).
///
/// `t1`: FTM departure, `t2`: FTM arrival, `t3`: ACK departure,
/// `t4`: ACK arrival. The distance reported is one-way: the round-trip
/// path length is halved.
pub fn rtt_from_timestamps(t1: f64, t2: f64, t3: f64, t4: f64) -> Result<RoundTrip> {
    let tau_ns = (t4 - t1) - (t3 - t2);
    if !(tau_ns >= 0.0) {
        return Err(Error::InvalidMeasurement(format!(
            "negative round-trip time {tau_ns} ns"
        )));
    }
    Ok(RoundTrip {
        tau_ns,
        one_way_distance: tau_ns * 1e-9 * SPEED_OF_LIGHT / 2.0,
    })
}

/// Log-distance path-loss parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLoss {
    /// Reference distance, meters.
    pub d0: f64,
    /// RSS at the reference distance, dBm.
    pub p0: f64,
    /// Path-loss exponent.
    pub eta: f64,
}

impl Default for PathLoss {
    fn default() -> Self {
        PathLoss {
            d0: 1.0,
            p0: -20.6,
            eta: 4.0,
        }
    }
}

impl PathLoss {
    /// Deterministic RSS at distance `d`; `d` below `d0` is clamped to `d0`.
    pub fn rss(&self, d: f64) -> f64 {
        let d = if d > 0.0 { d.max(f64::MIN_POSITIVE) } else { self.d0 };
        self.p0 - 10.0 * self.eta * (d / self.d0).log10()
    }

    /// Inverse of [`PathLoss::rss`].
    pub fn distance(&self, p: f64) -> f64 {
        self.d0 * 10f64.powf((self.p0 - p) / (10.0 * self.eta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bandwidth {
    #[serde(rename = "bw20")]
    Mhz20,
    #[serde(rename = "bw40")]
    Mhz40,
    #[serde(rename = "bw80")]
    Mhz80,
}

impl Bandwidth {
    pub const ALL: [Bandwidth; 3] = [Bandwidth::Mhz20, Bandwidth::Mhz40, Bandwidth::Mhz80];

    pub fn name(self) -> &'static str {
        match self {
            Bandwidth::Mhz20 => "bw20",
            Bandwidth::Mhz40 => "bw40",
            Bandwidth::Mhz80 => "bw80",
        }
    }

    /// Bias removed by the calibrated-ranging baseline for this bandwidth.
    pub fn calibration_bias(self) -> f64 {
        match self {
            Bandwidth::Mhz20 => 6.6,
            Bandwidth::Mhz40 => 4.4,
            Bandwidth::Mhz80 => 3.4,
        }
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Bandwidth {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Bandwidth::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| config(format!("unknown bandwidth preset {s:?} (expected bw20, bw40 or bw80)")))
    }
}

/// Statistical model of one AP↔device ranging link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub burst_size: usize,
    pub los_noise_std: f64,
    pub nlos_bias_mean: f64,
    pub nlos_bias_std: f64,
    pub pathloss: PathLoss,
    /// Per-packet log-normal shadowing, dB.
    pub shadowing_std: f64,
    pub nlos_extra_loss: f64,
    /// RSS at which an NLOS exchange succeeds half the time, dBm.
    pub success_floor_dbm: f64,
    /// Width of the logistic success curve, dB.
    pub success_slope_db: f64,
    pub los_success_rate: f64,
}

impl ChannelModel {
    pub fn preset(bw: Bandwidth) -> Self {
        let base = ChannelModel {
            burst_size: 8,
            los_noise_std: 0.5,
            nlos_bias_mean: bw.calibration_bias(),
            nlos_bias_std: 1.5,
            pathloss: PathLoss::default(),
            shadowing_std: 4.0,
            nlos_extra_loss: 8.0,
            success_floor_dbm: -92.0,
            success_slope_db: 2.0,
            los_success_rate: 0.95,
        };
        // wider channels resolve multipath better but hit the noise floor
        // sooner; floors put ~4.6/4.4/3.6 APs per step on the default site
        match bw {
            Bandwidth::Mhz20 => ChannelModel {
                los_noise_std: 0.8,
                nlos_bias_std: 2.0,
                success_floor_dbm: -93.0,
                ..base
            },
            Bandwidth::Mhz40 => base,
            Bandwidth::Mhz80 => ChannelModel {
                los_noise_std: 0.4,
                nlos_bias_std: 1.2,
                success_floor_dbm: -88.5,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [self.los_noise_std, self.nlos_bias_std, self.shadowing_std];
        if self.burst_size < 1 {
            return Err(config("burst size must be at least 1"));
        }
        if stds.iter().any(|s| !(*s >= 0.0)) {
            return Err(config("standard deviations must be non-negative"));
        }
        if !(self.pathloss.eta > 0.0 && self.pathloss.d0 > 0.0) {
            return Err(config("path-loss eta and d0 must be positive"));
        }
        if !(0.0..=1.0).contains(&self.los_success_rate) {
            return Err(config("los_success_rate must be a probability"));
        }
        if !(self.success_slope_db > 0.0) {
            return Err(config("success_slope_db must be positive"));
        }
        Ok(())
    }

    /// RSS without shadowing.
    pub fn mean_rss(&self, d: f64, link: LinkCondition) -> f64 {
        let extra = if link.is_los() { 0.0 } else { self.nlos_extra_loss };
        self.pathloss.rss(d) - extra
    }
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel::preset(Bandwidth::Mhz40)
    }
}

/// `"channel"` entry of a scenario file: a preset name or a full model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChannelSpec {
    Preset(Bandwidth),
    Model(ChannelModel),
}

impl ChannelSpec {
    pub fn resolve(&self) -> ChannelModel {
        match self {
            ChannelSpec::Preset(bw) => ChannelModel::preset(*bw),
            ChannelSpec::Model(m) => *m,
        }
    }
}

/// Burst summary reported by the FTM protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtmMeasurement {
    /// Mean distance, meters.
    #[serde(rename = "d")]
    pub d_ftm: f64,
    /// Standard deviation of the burst distances, meters.
    #[serde(rename = "s")]
    pub s_ftm: f64,
    /// Mean RSS, dBm.
    #[serde(rename = "p")]
    pub p_ftm: f64,
}

fn normal(mean: f64, std: f64) -> Normal<f64> {
    Normal::new(mean, std).expect("validated non-negative std")
}

/// One RSS draw: log-distance mean plus Gaussian shadowing, less the NLOS
/// penalty. Distances at or below zero are clamped to `d0`.
pub fn rss_from_distance<R: Rng + ?Sized>(d: f64, link: LinkCondition, model: &ChannelModel, rng: &mut R) -> f64 {
    let shadow = if model.shadowing_std > 0.0 {
        normal(0.0, model.shadowing_std).sample(rng)
    } else {
        0.0
    };
    model.mean_rss(d, link) + shadow
}

/// Probability that a ranging request completes.
///
/// LOS links succeed at the constant `los_success_rate`. NLOS links follow a
/// logistic curve in the deterministic RSS, centered on the success floor,
/// capped at the LOS rate.
pub fn success_probability(d: f64, link: LinkCondition, model: &ChannelModel) -> f64 {
    match link {
        LinkCondition::Los => model.los_success_rate,
        LinkCondition::Nlos => {
            let margin = model.mean_rss(d, link) - model.success_floor_dbm;
            crate::autodiff::sigmoid(margin / model.success_slope_db).min(model.los_success_rate)
        }
    }
}

/// Simulates one ranging request; `None` when the exchange fails.
pub fn simulate_burst<R: Rng + ?Sized>(
    true_d: f64,
    link: LinkCondition,
    model: &ChannelModel,
    rng: &mut R,
) -> Option<FtmMeasurement> {
    if rng.random::<f64>() >= success_probability(true_d, link, model) {
        return None;
    }
    let bias = match link {
        LinkCondition::Los => 0.0,
        LinkCondition::Nlos => {
            let b = if model.nlos_bias_std > 0.0 {
                normal(model.nlos_bias_mean, model.nlos_bias_std).sample(rng)
            } else {
                model.nlos_bias_mean
            };
            b.max(0.0)
        }
    };
    let b = model.burst_size;
    let noise = normal(0.0, model.los_noise_std);
    let mut distances = Vec::with_capacity(b);
    let mut rss_sum = 0.0;
    for _ in 0..b {
        let n = if model.los_noise_std > 0.0 {
            noise.sample(rng)
        } else {
            0.0
        };
        distances.push(true_d + bias + n);
        rss_sum += rss_from_distance(true_d, link, model, rng);
    }
    // shifted by the first sample so identical draws give an exact mean and zero spread
    let pivot = distances[0];
    let offset = distances.iter().map(|d| d - pivot).sum::<f64>() / b as f64;
    let mean = pivot + offset;
    let std = if b > 1 {
        let ss: f64 = distances.iter().map(|d| (d - pivot - offset).powi(2)).sum();
        (ss / (b - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(FtmMeasurement {
        d_ftm: mean.max(0.0),
        s_ftm: std,
        p_ftm: rss_sum / b as f64,
    })
}
