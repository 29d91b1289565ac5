//! Unlabeled training segments and labeled test runs.
//!
//! On disk a dataset is JSON Lines, one record per ranging step:
//!
//! ```text
//! {"k":1,"measurements":[{"ap_id":3,"d":7.91,"s":0.42,"p":-61.2}],"pdr":[0.0,0.0],"truth":[12.5,30.1]}
//! ```
//!
//! `truth` is optional and only read by evaluation; training never looks at
//! it.
//!
//! A [`Survey`] is the labeled calibration campaign the baselines are fitted
//! on: static positions, each ranged toward every AP.
//!
//! ```text
//! {"position":[40.2,17.9],"measurements":[{"ap_id":1,"d":36.0,"s":0.5,"p":-83.4}]}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ftm_sim::{simulate_burst, Bandwidth, ChannelModel, FtmMeasurement};
use crate::geom::Point;
use crate::pdr::{simulate_pdr, PdrConfig, PdrTrajectory};
use crate::scenario::{random_walk, sample_true_trajectory, LinkCondition, SiteConfig, TruePath};

/// Steps per training segment.
pub const DEFAULT_SEGMENT_STEPS: usize = 100;
/// Surveyed positions in a calibration campaign.
pub const DEFAULT_SURVEY_POSITIONS: usize = 500;
// streams 0 (test run) and 1.. (segments) are taken
const SURVEY_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApMeasurement {
    pub ap_id: u32,
    #[serde(flatten)]
    pub ftm: FtmMeasurement,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub bandwidth: Option<Bandwidth>,
    pub segment: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Responding APs per step; failed exchanges are simply absent.
    pub steps: Vec<Vec<ApMeasurement>>,
    pub pdr: PdrTrajectory,
    pub truth: Option<Vec<Point>>,
    pub meta: DatasetMeta,
}

#[derive(Serialize, Deserialize)]
struct Record {
    k: usize,
    measurements: Vec<ApMeasurement>,
    pdr: Point,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth: Option<Point>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self, site: &SiteConfig) -> Result<()> {
        if self.steps.len() != self.pdr.positions.len() {
            return Err(Error::Dataset(format!(
                "{} ranging steps but {} PDR positions",
                self.steps.len(),
                self.pdr.positions.len()
            )));
        }
        if let Some(truth) = &self.truth {
            if truth.len() != self.steps.len() {
                return Err(Error::Dataset("truth length differs from step count".into()));
            }
        }
        for (k, step) in self.steps.iter().enumerate() {
            for m in step {
                if site.ap(m.ap_id).is_none() {
                    return Err(Error::Dataset(format!("step {}: unknown AP id {}", k + 1, m.ap_id)));
                }
                let f = m.ftm;
                if !(f.d_ftm >= 0.0 && f.s_ftm >= 0.0 && f.p_ftm.is_finite() && f.d_ftm.is_finite()) {
                    return Err(Error::Dataset(format!("step {}: invalid measurement {f:?}", k + 1)));
                }
            }
        }
        Ok(())
    }

    /// Measurement lists in the `(ap_id, triple)` form the positioner takes.
    pub fn measurement_lists(&self) -> Vec<Vec<(u32, FtmMeasurement)>> {
        self.steps
            .iter()
            .map(|s| s.iter().map(|m| (m.ap_id, m.ftm)).collect())
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (k, step) in self.steps.iter().enumerate() {
            let rec = Record {
                k: k + 1,
                measurements: step.clone(),
                pdr: self.pdr.positions[k],
                truth: self.truth.as_ref().map(|t| t[k]),
            };
            serde_json::to_writer(&mut out, &rec).map_err(|e| Error::json(path, e))?;
            out.push(b'\n');
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut steps = Vec::new();
        let mut pdr = Vec::new();
        let mut truth = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::json(path, e))?;
            if rec.k != steps.len() + 1 {
                return Err(Error::Dataset(format!(
                    "{}: line {} has k={} but {} was expected",
                    path.display(),
                    i + 1,
                    rec.k,
                    steps.len() + 1
                )));
            }
            steps.push(rec.measurements);
            pdr.push(rec.pdr);
            truth.push(rec.truth);
        }
        let truth = if truth.iter().all(Option::is_some) && !truth.is_empty() {
            Some(truth.into_iter().map(Option::unwrap).collect())
        } else {
            None
        };
        Ok(Dataset {
            steps,
            pdr: PdrTrajectory { positions: pdr },
            truth,
            meta: DatasetMeta::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Survey {
    pub positions: Vec<Point>,
    pub steps: Vec<Vec<ApMeasurement>>,
}

#[derive(Serialize, Deserialize)]
struct SurveyRecord {
    position: Point,
    measurements: Vec<ApMeasurement>,
}

impl Survey {
    /// `(measurement, true distance)` pairs.
    pub fn samples(&self, site: &SiteConfig) -> Result<Vec<(FtmMeasurement, f64)>> {
        if self.positions.len() != self.steps.len() {
            return Err(Error::Dataset(
                "survey positions and measurement lists differ in length".into(),
            ));
        }
        let mut out = Vec::new();
        for (z, step) in self.positions.iter().zip(&self.steps) {
            for m in step {
                let ap = site
                    .ap(m.ap_id)
                    .ok_or_else(|| Error::Dataset(format!("survey references unknown AP id {}", m.ap_id)))?;
                out.push((m.ftm, z.distance(ap.position)));
            }
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (position, step) in self.positions.iter().zip(&self.steps) {
            let rec = SurveyRecord {
                position: *position,
                measurements: step.clone(),
            };
            serde_json::to_writer(&mut out, &rec).map_err(|e| Error::json(path, e))?;
            out.push(b'\n');
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut survey = Survey {
            positions: Vec::new(),
            steps: Vec::new(),
        };
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SurveyRecord = serde_json::from_str(&line).map_err(|e| Error::json(path, e))?;
            survey.positions.push(rec.position);
            survey.steps.push(rec.measurements);
        }
        Ok(survey)
    }
}

/// Everything needed to synthesize data for one site.
#[derive(Debug, Clone)]
pub struct Generator<'a> {
    pub site: &'a SiteConfig,
    pub channel: ChannelModel,
    pub pdr: PdrConfig,
    pub bandwidth: Option<Bandwidth>,
    pub speed: f64,
    pub interval: f64,
    /// PDR start points are drawn uniformly in ±extent m.
    pub pdr_extent: f64,
}

impl<'a> Generator<'a> {
    pub fn new(site: &'a SiteConfig, channel: ChannelModel) -> Self {
        Generator {
            site,
            channel,
            pdr: PdrConfig::default(),
            bandwidth: None,
            speed: 1.0,
            interval: 1.0,
            pdr_extent: 50.0,
        }
    }

    /// Independent random stream for `(seed, stream)`.
    pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }

    fn link<R: Rng + ?Sized>(&self, device: Point, ap: &crate::scenario::AccessPoint, rng: &mut R) -> LinkCondition {
        match self.site.stochastic_nlos {
            Some(p) => {
                if rng.random::<f64>() < p {
                    LinkCondition::Nlos
                } else {
                    LinkCondition::Los
                }
            }
            None => self.site.classify_link(device, ap),
        }
    }

    /// FTM bursts toward every AP at every true position.
    pub fn measure<R: Rng + ?Sized>(&self, truth: &[Point], rng: &mut R) -> Vec<Vec<ApMeasurement>> {
        truth
            .iter()
            .map(|&z| {
                self.site
                    .aps
                    .iter()
                    .filter_map(|ap| {
                        let link = self.link(z, ap, rng);
                        simulate_burst(z.distance(ap.position), link, &self.channel, rng)
                            .map(|ftm| ApMeasurement { ap_id: ap.id, ftm })
                    })
                    .collect()
            })
            .collect()
    }

    fn assemble(&self, truth: Vec<Point>, rng: &mut ChaCha8Rng, meta: DatasetMeta) -> Result<Dataset> {
        let steps = self.measure(&truth, rng);
        let cfg = self.pdr.randomized(self.pdr_extent, rng);
        let pdr = simulate_pdr(&truth, &cfg, rng)?;
        Ok(Dataset {
            steps,
            pdr,
            truth: Some(truth),
            meta,
        })
    }

    /// Random-walk training segment `segment` of a run seeded with `seed`.
    pub fn segment(&self, seed: u64, segment: u64, steps: usize) -> Result<Dataset> {
        let mut rng = Self::rng(seed, segment + 1);
        let truth = random_walk(self.site, steps, self.speed, self.interval, &mut rng)?;
        self.assemble(
            truth,
            &mut rng,
            DatasetMeta {
                seed,
                bandwidth: self.bandwidth,
                segment,
            },
        )
    }

    /// Calibration campaign at `n` positions drawn uniformly over the site.
    pub fn survey(&self, seed: u64, n: usize) -> Survey {
        let mut rng = Self::rng(seed, SURVEY_STREAM);
        let positions: Vec<Point> = (0..n)
            .map(|_| {
                Point::new(
                    rng.random_range(0.0..self.site.width),
                    rng.random_range(0.0..self.site.height),
                )
            })
            .collect();
        let steps = self.measure(&positions, &mut rng);
        Survey { positions, steps }
    }

    /// Labeled run along a predefined path (stream 0 of `seed`).
    pub fn along_path(&self, seed: u64, path: &TruePath) -> Result<Dataset> {
        let mut rng = Self::rng(seed, 0);
        let truth = sample_true_trajectory(path)?;
        self.assemble(
            truth,
            &mut rng,
            DatasetMeta {
                seed,
                bandwidth: self.bandwidth,
                segment: 0,
            },
        )
    }
}
