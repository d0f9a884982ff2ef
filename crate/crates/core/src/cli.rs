//! Command-line interface.
//!
//! Every command writes `manifest.json` into its output directory before the
//! results. The manifest records the fully resolved arguments, so
//! `subsim replay <manifest>` regenerates identical outputs.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{cov_study, resolve_phase, write_cov_csv, CovStudyConfig, Phase};
use crate::conflict::{
    format_distance, format_probability, pc_dmc, simulate_scenario, write_series_csv, ChainProposal, ConflictKernel,
    ConflictTarget,
};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::scenarios::{build_converging, build_head_on, build_overtaking, Overrides, ScenarioSpec};
use crate::subset::{IntervalVariant, SubsetConfig};
use crate::toy::{dmc_estimate, oracle_probability, ss_toy, CircleRegion, Point2, ToyTarget};

#[derive(Debug, Parser)]
#[command(name = "subsim", version, about = "Subset Simulation for rare-event and conflict probabilities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Disc probability under a standard bivariate normal.
    Toy(ToyArgs),
    /// Probability-of-conflict time series for one or more engagements.
    Scenario(ScenarioArgs),
    /// Coefficient of variation against sample budget at a frozen phase.
    CovStudy(CovStudyArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalArg {
    Shifted,
    Standard,
}

impl From<IntervalArg> for IntervalVariant {
    fn from(v: IntervalArg) -> Self {
        match v {
            IntervalArg::Shifted => IntervalVariant::Shifted,
            IntervalArg::Standard => IntervalVariant::Standard,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SeedArgs {
    /// Master seed for every random stream.
    #[arg(long, env = "SUBSIM_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ToyArgs {
    /// Samples per level.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Maximum number of levels, level 0 included.
    #[arg(long, default_value_t = 5)]
    pub levels: usize,
    #[arg(long, default_value_t = 0.1)]
    pub p0: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub center_x: f64,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub center_y: f64,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Chain target: the conditional prior, or a Gaussian centered on the disc.
    #[arg(long, value_enum, default_value_t = ToyTargetArg::Conditional)]
    pub target: ToyTargetArg,
    #[arg(long, value_enum, default_value_t = IntervalArg::Shifted)]
    pub intervals: IntervalArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    /// Output directory.
    #[arg(long, default_value = "toy-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyTargetArg {
    Conditional,
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    HeadOn,
    Overtaking,
    Converging,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalArg {
    /// Full-state step shaped like the estimate covariance.
    Scaled,
    /// Unit normal kicks on the accelerations only.
    Listing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetArg {
    Tilted,
    Prior,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct KernelArgs {
    #[arg(long, value_enum, default_value_t = ProposalArg::Scaled)]
    pub proposal: ProposalArg,
    /// Step scale for the `scaled` proposal.
    #[arg(long, default_value_t = 0.5)]
    pub proposal_scale: f64,
    #[arg(long, value_enum, default_value_t = TargetArg::Tilted)]
    pub target: TargetArg,
}

impl KernelArgs {
    pub fn kernel(&self) -> Result<ConflictKernel> {
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "proposal scale must be positive, got {}",
                self.proposal_scale
            )));
        }
        Ok(ConflictKernel {
            proposal: match self.proposal {
                ProposalArg::Scaled => ChainProposal::PriorScaled {
                    scale: self.proposal_scale,
                },
                ProposalArg::Listing => ChainProposal::AccelerationUnit,
            },
            target: match self.target {
                TargetArg::Tilted => ConflictTarget::Tilted,
                TargetArg::Prior => ConflictTarget::Prior,
            },
        })
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum, required_unless_present = "scenario")]
    pub preset: Option<Preset>,
    /// Comma-separated lateral separations (m); one series per value.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lateral_sep: Vec<f64>,
    /// Longitudinal separation (m) for presets.
    #[arg(long)]
    pub longitudinal_sep: Option<f64>,
    /// Track angle (degrees) for the converging preset.
    #[arg(long, default_value_t = 90.0)]
    pub angle: f64,
    /// Simulated period (s) for presets.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Prediction horizon (s); defaults to the period.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Start the filter on the exact truth.
    #[arg(long)]
    pub perfect_init: bool,
    /// Skip the matched-budget Direct Monte Carlo comparison.
    #[arg(long)]
    pub no_dmc: bool,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub p0: f64,
    #[arg(long, default_value_t = 7)]
    pub levels: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[arg(long, default_value = "scenario-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CovStudyArgs {
    #[arg(long, value_enum, default_value_t = Phase::P2)]
    pub phase: Phase,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![100, 1000, 2000, 5000, 10000])]
    pub dmc_sizes: Vec<usize>,
    /// Samples per level for Subset Simulation.
    #[arg(long, value_delimiter = ',', default_values_t = vec![100, 300, 1000, 3300])]
    pub ss_sizes: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub p0: f64,
    #[arg(long, default_value_t = 7)]
    pub levels: usize,
    /// Draws for a reference Direct Monte Carlo estimate (0 skips it).
    #[arg(long, default_value_t = 0)]
    pub reference_n: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[arg(long, default_value = "cov-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_snapshot: Command,
    pub master_seed: u64,
    pub tool_version: String,
    pub outputs: Vec<PathBuf>,
}

fn write_manifest(dir: &Path, command: &Command, seed: u64, outputs: &[PathBuf]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = RunManifest {
        command: command_name(command).to_string(),
        config_snapshot: command.clone(),
        master_seed: seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: outputs.to_vec(),
    };
    let file = File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
    Ok(())
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Toy(_) => "toy",
        Command::Scenario(_) => "scenario",
        Command::CovStudy(_) => "cov-study",
        Command::Replay(_) => "replay",
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)?;
    use std::io::Write;
    writeln!(writer)?;
    Ok(())
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Toy(args) => run_toy(command, args),
        Command::Scenario(args) => run_scenario(command, args),
        Command::CovStudy(args) => run_cov_study(command, args),
        Command::Replay(args) => run_replay(args),
    }
}

#[derive(Serialize)]
struct ToySummary {
    estimate: String,
    /// Direct Monte Carlo over the level-0 draws.
    dmc_estimate: String,
    oracle: String,
    ratio: f64,
    levels_completed: usize,
    samples_used: usize,
    conflict_count: usize,
    floor_reached: bool,
    thresholds: Vec<String>,
}

fn run_toy(command: &Command, args: &ToyArgs) -> Result<()> {
    let config = SubsetConfig::new(args.n, args.p0, args.levels, args.intervals.into())?;
    let region = CircleRegion::new(Point2::new(args.center_x, args.center_y), args.radius)?;
    let target = match args.target {
        ToyTargetArg::Conditional => ToyTarget::ConditionalPrior,
        ToyTargetArg::Centered => ToyTarget::RegionCentered,
    };
    let ccdf_path = args.out.join("ccdf.csv");
    let summary_path = args.out.join("summary.json");
    write_manifest(&args.out, command, args.seed.seed, &[ccdf_path.clone(), summary_path.clone()])?;

    let stream = SeedStream::new(args.seed.seed);
    let run = ss_toy(&region, &config, target, &stream)?;
    let dmc = dmc_estimate(&region, args.n, &stream)?;
    let mut writer = csv::Writer::from_path(&ccdf_path)?;
    writer.write_record(["probability", "response"])?;
    for row in &run.table.rows {
        writer.write_record([format_probability(row.probability), format_distance(row.response)])?;
    }
    writer.flush()?;

    let oracle = oracle_probability(&region);
    let d = &run.diagnostics;
    write_json(
        &summary_path,
        &ToySummary {
            estimate: format_probability(run.estimate),
            dmc_estimate: format_probability(dmc),
            oracle: format_probability(oracle),
            ratio: run.estimate / oracle,
            levels_completed: d.levels_completed,
            samples_used: d.samples_used,
            conflict_count: d.conflict_count,
            floor_reached: d.floor_reached,
            thresholds: d.thresholds.iter().map(|b| format_distance(*b)).collect(),
        },
    )?;
    println!(
        "estimate {} oracle {} levels {} samples {}",
        format_probability(run.estimate),
        format_probability(oracle),
        d.levels_completed,
        d.samples_used
    );
    Ok(())
}

fn scenario_specs(args: &ScenarioArgs) -> Result<Vec<ScenarioSpec>> {
    if let Some(v) = args.lateral_sep.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidConfig(format!("lateral separation must be >= 0, got {v}")));
    }
    let base = match (&args.scenario, args.preset) {
        (Some(path), _) => {
            let mut spec = ScenarioSpec::from_json_file(path)?;
            if let Some(h) = args.horizon {
                spec.horizon = h;
            }
            spec.perfect_init |= args.perfect_init;
            spec
        }
        (None, Some(preset)) => {
            let overrides = Overrides {
                duration: args.duration,
                horizon: args.horizon,
                perfect_init: Some(args.perfect_init),
                ..Default::default()
            };
            let first = args.lateral_sep.first().copied().unwrap_or(0.0);
            match preset {
                Preset::HeadOn => build_head_on(first, args.longitudinal_sep.unwrap_or(2000.0), &overrides)?,
                Preset::Overtaking => build_overtaking(first, args.longitudinal_sep.unwrap_or(1000.0), &overrides)?,
                Preset::Converging => {
                    build_converging(args.angle, first, args.longitudinal_sep.unwrap_or(1500.0), &overrides)?
                }
            }
        }
        (None, None) => return Err(Error::InvalidConfig("need --scenario or --preset".into())),
    };
    let mut base = base;
    base.run_dmc &= !args.no_dmc;
    base.validate()?;
    if args.lateral_sep.is_empty() {
        return Ok(vec![base]);
    }
    args.lateral_sep.iter().map(|&l| base.with_lateral_separation(l)).collect()
}

fn series_file_name(spec: &ScenarioSpec) -> String {
    format!("series_la_{}.csv", format_distance(spec.lateral_separation))
}

fn run_scenario(command: &Command, args: &ScenarioArgs) -> Result<()> {
    let specs = scenario_specs(args)?;
    let config = SubsetConfig::new(args.n, args.p0, args.levels, IntervalVariant::Shifted)?;
    let kernel = args.kernel.kernel()?;
    let outputs: Vec<PathBuf> = specs.iter().map(|s| args.out_dir.join(series_file_name(s))).collect();
    let mut all = outputs.clone();
    all.push(args.out_dir.join("scenarios.json"));
    write_manifest(&args.out_dir, command, args.seed.seed, &all)?;
    write_json(&args.out_dir.join("scenarios.json"), &specs)?;

    let root = SeedStream::new(args.seed.seed);
    for (i, (spec, path)) in specs.iter().zip(&outputs).enumerate() {
        let records = simulate_scenario(spec, &config, kernel, &root.child(i as u64))?;
        write_series_csv(&records, BufWriter::new(File::create(path)?))?;
        println!("wrote {} ({} steps)", path.display(), records.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct CovSummary {
    phase: Phase,
    snapshot_time: f64,
    reference_n: usize,
    reference_pc: Option<String>,
}

fn run_cov_study(command: &Command, args: &CovStudyArgs) -> Result<()> {
    let config = CovStudyConfig {
        repetitions: args.reps,
        dmc_sizes: args.dmc_sizes.clone(),
        ss_sizes: args.ss_sizes.clone(),
        level_probability: args.p0,
        max_levels: args.levels,
        kernel: args.kernel.kernel()?,
    };
    config.validate()?;
    let csv_path = args.out_dir.join("cov.csv");
    let summary_path = args.out_dir.join("summary.json");
    write_manifest(&args.out_dir, command, args.seed.seed, &[csv_path.clone(), summary_path.clone()])?;

    let root = SeedStream::new(args.seed.seed);
    let prepared = resolve_phase(args.phase, &root.child(0))?;
    let points = cov_study(&config, &prepared, &root.child(1))?;
    write_cov_csv(&points, BufWriter::new(File::create(&csv_path)?))?;
    let reference_pc = if args.reference_n > 0 {
        Some(format_probability(pc_dmc(&prepared, args.reference_n, &root.child(2))?.pc))
    } else {
        None
    };
    write_json(
        &summary_path,
        &CovSummary {
            phase: args.phase,
            snapshot_time: args.phase.time(),
            reference_n: args.reference_n,
            reference_pc,
        },
    )?;
    for p in &points {
        println!(
            "{:>3} n={:<6} avg={:<9.1} mean={} cov={}",
            p.method.label(),
            p.requested_n,
            p.avg_samples,
            format_probability(p.mean_pc),
            p.cov.map(|c| format!("{c:.4}")).unwrap_or_else(|| "undefined".into())
        );
    }
    Ok(())
}

fn run_replay(args: &ReplayArgs) -> Result<()> {
    let text = fs::read_to_string(&args.manifest)?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let mut command = manifest.config_snapshot;
    if let Some(dir) = &args.out_dir {
        match &mut command {
            Command::Toy(a) => a.out = dir.clone(),
            Command::Scenario(a) => a.out_dir = dir.clone(),
            Command::CovStudy(a) => a.out_dir = dir.clone(),
            Command::Replay(_) => {}
        }
    }
    if matches!(command, Command::Replay(_)) {
        return Err(Error::InvalidConfig("a manifest cannot record a replay".into()));
    }
    run(&command)
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main_exit_code() -> i32 {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
