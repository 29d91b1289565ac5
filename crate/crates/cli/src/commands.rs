//! Command-line surface and the file-writing side of each command.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ftmlearn_core::dataset::{Dataset, Survey};
use ftmlearn_core::eval::{empirical_cdf, EvalReport};
use ftmlearn_core::ftm_sim::Bandwidth;
use ftmlearn_core::ranging_nn::RangingModule;
use ftmlearn_core::scenario::{ScenarioFile, SiteConfig};
use ftmlearn_core::training::{History, TrainConfig};
use ftmlearn_core::Error as CoreError;

use crate::manifest::RunManifest;
use crate::pipeline;
use crate::plot::{line_chart, trajectory_map, Chart, Series};

/// File names inside a generated data directory.
pub const SCENARIO_FILE: &str = "scenario.json";
pub const TEST_FILE: &str = "test.jsonl";
pub const SURVEY_FILE: &str = "survey.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn segment_file(i: usize) -> String {
    format!("segment_{i:03}.jsonl")
}

#[derive(Debug, Parser)]
#[command(
    name = "ftmlearn",
    version,
    about = "Simulate FTM ranging, train the ranging network without labels, and evaluate it"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate training segments, a labeled test run and a calibration survey.
    Generate(GenerateArgs),
    /// Train the ranging network on generated segments.
    Train(TrainArgs),
    /// Score raw, path-loss, calibrated and NN ranging on a test run.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BwArg {
    Bw20,
    Bw40,
    Bw80,
}

impl From<BwArg> for Bandwidth {
    fn from(b: BwArg) -> Self {
        match b {
            BwArg::Bw20 => Bandwidth::Mhz20,
            BwArg::Bw40 => Bandwidth::Mhz40,
            BwArg::Bw80 => Bandwidth::Mhz80,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn name(self) -> &'static str {
        match self {
            Toggle::On => "on",
            Toggle::Off => "off",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Scenario JSON (site, test path, optional channel); the built-in office when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 18, value_parser = clap::value_parser!(u64).range(1..))]
    pub segments: u64,
    /// Channel preset; overrides the scenario's channel entry.
    #[arg(long, value_enum)]
    pub bw: Option<BwArg>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model JSON; history CSV, cost plot and manifest go next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled test run; `survey.jsonl` must sit in the same directory.
    #[arg(long)]
    pub test: PathBuf,
    /// Site or scenario JSON with the AP layout.
    #[arg(long)]
    pub aps: PathBuf,
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    pub sensors: Toggle,
    #[arg(long)]
    pub report: PathBuf,
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// `<stem>.<suffix>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let scenario = match &args.config {
        Some(p) => ScenarioFile::load(p)?,
        None => ScenarioFile::default_office(),
    };
    let (channel, bandwidth, label) = pipeline::resolve_channel(&scenario, args.bw.map(Into::into));
    channel.validate()?;

    create_dir(&args.out)?;
    let mut manifest = RunManifest::new("generate", &args.out);
    if let Some(p) = &args.config {
        manifest.config = Some(p.display().to_string());
        manifest.hash_input(p)?;
    }
    manifest.seed = Some(args.seed);
    manifest.bandwidth = Some(label);
    manifest.setting("segments", args.segments)?;
    manifest.write(&args.out.join(MANIFEST_FILE))?;

    let run = pipeline::generate(&scenario, channel, bandwidth, args.seed, args.segments as usize)?;
    let resolved = ScenarioFile {
        channel: Some(ftmlearn_core::ftm_sim::ChannelSpec::Model(channel)),
        ..scenario
    };
    write_json(&args.out.join(SCENARIO_FILE), &resolved)?;
    for (i, d) in run.segments.iter().enumerate() {
        d.write_jsonl(&args.out.join(segment_file(i)))?;
    }
    run.test.write_jsonl(&args.out.join(TEST_FILE))?;
    run.survey.write_jsonl(&args.out.join(SURVEY_FILE))?;
    eprintln!(
        "wrote {} segments, test run and survey to {}",
        run.segments.len(),
        args.out.display()
    );
    Ok(())
}

/// `segment_*.jsonl` files of a data directory in name order.
pub fn segment_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("segment_") && n.ends_with(".jsonl"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn train_config(args: &TrainArgs) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        learning_rate: args.lr.unwrap_or(d.learning_rate),
        epochs: args.epochs.unwrap_or(d.epochs),
        split: args.split.unwrap_or(d.split),
        seed: args.seed,
        ..d
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let scenario_path = args.data.join(SCENARIO_FILE);
    let scenario = ScenarioFile::load(&scenario_path)?;
    let paths = segment_paths(&args.data)?;
    ensure!(
        paths.len() >= 2,
        "{}: training needs at least two segment files, found {}",
        args.data.display(),
        paths.len()
    );
    let config = train_config(args);
    config.validate()?;

    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut manifest = RunManifest::new("train", &args.out);
    manifest.config = Some(scenario_path.display().to_string());
    manifest.seed = Some(args.seed);
    manifest.hash_input(&scenario_path)?;
    for p in &paths {
        manifest.hash_input(p)?;
    }
    manifest.setting("train_config", &config)?;
    manifest.write(&sibling(&args.out, "manifest.json"))?;

    let segments = paths
        .iter()
        .map(|p| Dataset::read_jsonl(p))
        .collect::<ftmlearn_core::Result<Vec<_>>>()?;
    for (d, p) in segments.iter().zip(&paths) {
        d.validate(&scenario.site).with_context(|| format!("{}", p.display()))?;
    }
    let outcome = pipeline::train(&segments, &scenario.site, &config, |r| {
        if r.epoch == 1 || r.epoch % 10 == 0 {
            eprintln!(
                "epoch {:>4}  train {:>12.3}  val {:>12.3}",
                r.epoch, r.train_cost, r.val_cost
            );
        }
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(CoreError::NonFiniteCost { epoch, snapshot }) => {
            let diag = sibling(&args.out, "diagnostic.json");
            write_json(&diag, &serde_json::json!({ "epoch": epoch, "parameters": snapshot }))?;
            bail!(
                "non-finite cost at epoch {epoch}; parameters saved to {}",
                diag.display()
            );
        }
        Err(e) => return Err(e.into()),
    };
    outcome.best.save(&args.out)?;
    write(&sibling(&args.out, "history.csv"), &outcome.history.to_csv())?;
    write(&sibling(&args.out, "cost.svg"), &cost_plot(&outcome.history))?;
    if let Some(b) = outcome.history.best() {
        eprintln!("best validation cost {:.3} at epoch {}", b.val_cost, b.epoch);
    }
    Ok(())
}

fn cost_plot(history: &History) -> String {
    let pts = |f: fn(&ftmlearn_core::training::EpochRecord) -> f64| {
        history
            .epochs
            .iter()
            .map(|r| (r.epoch as f64, f(r)))
            .collect::<Vec<_>>()
    };
    let chart = Chart {
        title: "Alignment cost".into(),
        x_label: "epoch".into(),
        y_label: "cost".into(),
        log_y: true,
    };
    line_chart(
        &chart,
        &[
            Series::new("train", pts(|r| r.train_cost)),
            Series::new("validation", pts(|r| r.val_cost)),
        ],
    )
}

/// Reads a site from either a bare site file or a full scenario file.
pub fn load_site(path: &Path) -> Result<SiteConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let site: SiteConfig =
        serde_json::from_str(&text).with_context(|| format!("{}: not a site configuration", path.display()))?;
    site.validate_for_positioning()
        .with_context(|| format!("{}", path.display()))?;
    Ok(site)
}

pub fn survey_path(test: &Path) -> PathBuf {
    test.parent().unwrap_or(Path::new("")).join(SURVEY_FILE)
}

fn cdf_plot(title: &str, report: &EvalReport) -> String {
    let series: Vec<Series> = report
        .methods
        .iter()
        .map(|m| Series::new(m.method.clone(), empirical_cdf(&m.errors)))
        .collect();
    let chart = Chart {
        title: title.into(),
        x_label: "error (m)".into(),
        y_label: "fraction".into(),
        log_y: false,
    };
    line_chart(&chart, &series)
}

fn trajectories_csv(report: &EvalReport) -> String {
    let mut out = String::from("method,k,x,y\n");
    for m in &report.methods {
        for (k, p) in m.trajectory.iter().flatten().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", m.method, k + 1, p.x, p.y));
        }
    }
    out
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let survey_file = survey_path(&args.test);
    for p in [&args.model, &args.test, &args.aps, &survey_file] {
        ensure!(p.is_file(), "{}: no such file", p.display());
    }
    let tag = args.sensors.name();
    create_dir(&args.report)?;
    let mut manifest = RunManifest::new("eval", &args.report);
    manifest.config = Some(args.aps.display().to_string());
    for p in [&args.model, &args.test, &args.aps, &survey_file] {
        manifest.hash_input(p)?;
    }
    manifest.setting("sensors", tag)?;
    manifest.write(&args.report.join(format!("manifest_sensors_{tag}.json")))?;

    let model = RangingModule::load(&args.model)?;
    let site = load_site(&args.aps)?;
    let test = Dataset::read_jsonl(&args.test)?;
    test.validate(&site)
        .with_context(|| format!("{}", args.test.display()))?;
    let survey = Survey::read_jsonl(&survey_file)?;
    let result = pipeline::evaluate(&model, &test, &survey, &site, args.sensors == Toggle::On)?;

    let r = &args.report;
    write_json(&r.join("baselines.json"), &result.baselines)?;
    result.ranging.write_csv(&r.join("ranging_report.csv"))?;
    result.ranging.write_cdf_csv(&r.join("ranging_cdf.csv"))?;
    write(
        &r.join("ranging_cdf.svg"),
        &cdf_plot("Ranging error CDF", &result.ranging),
    )?;
    let pos = &result.positioning;
    pos.write_csv(&r.join(format!("positioning_report_sensors_{tag}.csv")))?;
    pos.write_cdf_csv(&r.join(format!("positioning_cdf_sensors_{tag}.csv")))?;
    write(
        &r.join(format!("positioning_trajectories_sensors_{tag}.csv")),
        &trajectories_csv(pos),
    )?;
    write(
        &r.join(format!("positioning_cdf_sensors_{tag}.svg")),
        &cdf_plot(&format!("Positioning error CDF (sensors {tag})"), pos),
    )?;
    let truth = test.truth.as_deref().unwrap_or_default();
    let tracks: Vec<Series> = pos
        .methods
        .iter()
        .map(|m| {
            Series::new(
                m.method.clone(),
                m.trajectory.iter().flatten().map(|p| (p.x, p.y)).collect(),
            )
        })
        .collect();
    write(
        &r.join(format!("trajectory_sensors_{tag}.svg")),
        &trajectory_map(&format!("Trajectories (sensors {tag})"), &site, truth, &tracks),
    )?;
    for m in &pos.methods {
        let ranging = result.ranging.mae(&m.method).unwrap_or(f64::NAN);
        eprintln!(
            "{:<11} ranging MAE {:>7.3} m   positioning MAE {:>7.3} m",
            m.method, ranging, m.stats.mae
        );
    }
    Ok(())
}
