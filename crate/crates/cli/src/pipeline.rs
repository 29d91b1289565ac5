//! In-memory pipeline behind the commands: generate, train, evaluate.

use rayon::prelude::*;

use ftmlearn_core::dataset::{Dataset, Generator, Survey, DEFAULT_SEGMENT_STEPS, DEFAULT_SURVEY_POSITIONS};
use ftmlearn_core::eval::{
    evaluate_positioning, evaluate_ranging, fit_baselines, EvalReport, FittedBaselines, RangingMethod,
};
use ftmlearn_core::ftm_sim::{Bandwidth, ChannelModel, ChannelSpec};
use ftmlearn_core::fusion::FusionConfig;
use ftmlearn_core::positioning::Positioner;
use ftmlearn_core::ranging_nn::RangingModule;
use ftmlearn_core::scenario::{ScenarioFile, SiteConfig};
use ftmlearn_core::training::{train_with, EpochRecord, TrainConfig, TrainOutcome};
use ftmlearn_core::Result;

/// Channel for a run: an explicit preset wins, then the scenario's own
/// `channel` entry, then the 40 MHz preset. The returned label is the preset
/// name or `"custom"`.
pub fn resolve_channel(scenario: &ScenarioFile, bw: Option<Bandwidth>) -> (ChannelModel, Option<Bandwidth>, String) {
    match (bw, scenario.channel.clone()) {
        (Some(b), _) | (None, Some(ChannelSpec::Preset(b))) => (ChannelModel::preset(b), Some(b), b.name().into()),
        (None, Some(ChannelSpec::Model(m))) => (m, None, "custom".into()),
        (None, None) => (
            ChannelModel::preset(Bandwidth::Mhz40),
            Some(Bandwidth::Mhz40),
            "bw40".into(),
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRun {
    pub segments: Vec<Dataset>,
    /// Labeled run along the scenario path.
    pub test: Dataset,
    pub survey: Survey,
}

/// `n_segments` unlabeled random-walk segments, one labeled test run and a
/// calibration survey, all derived from `seed`.
pub fn generate(
    scenario: &ScenarioFile,
    channel: ChannelModel,
    bandwidth: Option<Bandwidth>,
    seed: u64,
    n_segments: usize,
) -> Result<GeneratedRun> {
    let mut gen = Generator::new(&scenario.site, channel);
    gen.bandwidth = bandwidth;
    let segments = (0..n_segments as u64)
        .into_par_iter()
        .map(|i| gen.segment(seed, i, DEFAULT_SEGMENT_STEPS))
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedRun {
        segments,
        test: gen.along_path(seed, &scenario.path)?,
        survey: gen.survey(seed, DEFAULT_SURVEY_POSITIONS),
    })
}

/// Strips ground truth so training cannot see it.
pub fn unlabeled(datasets: &[Dataset]) -> Vec<Dataset> {
    datasets
        .iter()
        .map(|d| Dataset {
            truth: None,
            ..d.clone()
        })
        .collect()
}

pub fn train(
    segments: &[Dataset],
    site: &SiteConfig,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let positioner = Positioner::new(&site.aps, site.center());
    train_with(&unlabeled(segments), config, &positioner, on_epoch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub baselines: FittedBaselines,
    pub ranging: EvalReport,
    pub positioning: EvalReport,
}

/// Fits the baselines on the survey, then scores raw, path-loss, calibrated
/// and NN ranging on the test run.
pub fn evaluate(
    model: &RangingModule,
    test: &Dataset,
    survey: &Survey,
    site: &SiteConfig,
    sensors: bool,
) -> Result<Evaluation> {
    let baselines = fit_baselines(&survey.samples(site)?)?;
    let methods = [
        RangingMethod::Raw,
        RangingMethod::PathLoss(baselines.path_loss),
        RangingMethod::Calibrated(baselines.delta),
        RangingMethod::Nn(model),
    ];
    Ok(Evaluation {
        baselines,
        ranging: evaluate_ranging(test, site, &methods)?,
        positioning: evaluate_positioning(test, site, &methods, sensors, &FusionConfig::default())?,
    })
}
