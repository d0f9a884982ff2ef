//! Coefficient-of-variation study: spread of repeated probability-of-conflict
//! estimates against sample budget, Subset Simulation versus Direct Monte
//! Carlo, at a frozen tracking snapshot.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conflict::{format_probability, pc_dmc, pc_ss, ConflictKernel, Encounter, PreparedQuery};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::scenarios::{build_head_on, Overrides, ScenarioSpec, PROTECTED_RADIUS};
use crate::subset::{IntervalVariant, SubsetConfig};

/// Named snapshots of the head-on engagement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Borderline head-on pass (`L_a = r_t`, `L_o = 2000 m`) at `t = 1 s`,
    /// where conflict is likely.
    P1,
    /// Long head-on run (`L_a = 1000 m`, `L_o = 20000 m`) at `t = 100 s`,
    /// where conflict is rare.
    P2,
}

impl Phase {
    pub fn scenario(&self) -> Result<ScenarioSpec> {
        match self {
            Phase::P1 => build_head_on(PROTECTED_RADIUS, 2000.0, &Overrides::default()),
            Phase::P2 => build_head_on(
                1000.0,
                20000.0,
                &Overrides {
                    duration: Some(200.0),
                    horizon: Some(200.0),
                    ..Default::default()
                },
            ),
        }
    }

    /// Snapshot time (s).
    pub fn time(&self) -> f64 {
        match self {
            Phase::P1 => 1.0,
            Phase::P2 => 100.0,
        }
    }
}

/// Runs the filter of `spec` up to `time` and freezes the resulting query.
pub fn freeze_query(spec: &ScenarioSpec, time: f64, stream: &SeedStream) -> Result<PreparedQuery> {
    let steps = time * spec.sample_rate;
    if !(steps >= 1.0) || (steps - steps.round()).abs() > 1e-9 * steps || steps.round() as usize > spec.steps() {
        return Err(Error::InvalidConfig(format!(
            "snapshot time {time} s is not a step within the {} s scenario",
            spec.duration
        )));
    }
    let mut encounter = Encounter::new(spec, stream)?;
    for _ in 0..steps.round() as usize {
        encounter.advance()?;
    }
    PreparedQuery::new(encounter.query())
}

pub fn resolve_phase(phase: Phase, stream: &SeedStream) -> Result<PreparedQuery> {
    freeze_query(&phase.scenario()?, phase.time(), stream)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dmc,
    Ss,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Dmc => "dmc",
            Method::Ss => "ss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovStudyConfig {
    pub repetitions: usize,
    /// Sample counts for Direct Monte Carlo.
    pub dmc_sizes: Vec<usize>,
    /// Samples per level for Subset Simulation.
    pub ss_sizes: Vec<usize>,
    pub level_probability: f64,
    pub max_levels: usize,
    pub kernel: ConflictKernel,
}

impl CovStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 2 {
            return Err(Error::InvalidConfig(format!(
                "coefficient of variation needs at least 2 repetitions, got {}",
                self.repetitions
            )));
        }
        if self.dmc_sizes.contains(&0) {
            return Err(Error::InvalidConfig("DMC sizes must be positive".into()));
        }
        for &n in &self.ss_sizes {
            self.ss_config(n)?;
        }
        Ok(())
    }

    pub fn ss_config(&self, n: usize) -> Result<SubsetConfig> {
        SubsetConfig::new(n, self.level_probability, self.max_levels, IntervalVariant::Shifted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovPoint {
    pub method: Method,
    pub requested_n: usize,
    /// Mean total samples per repetition.
    pub avg_samples: f64,
    pub mean_pc: f64,
    pub std_pc: f64,
    /// `std / mean`; `None` when every estimate is zero.
    pub cov: Option<f64>,
}

/// Mean, sample standard deviation (n - 1) and coefficient of variation.
pub fn summarize(values: &[f64]) -> (f64, f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let std = var.sqrt();
    let cov = (mean > 0.0).then(|| std / mean);
    (mean, std, cov)
}

/// Coefficient of variation of a binomial-proportion estimate.
pub fn analytic_dmc_cov(p: f64, n: usize) -> f64 {
    ((1.0 - p) / (p * n as f64)).sqrt()
}

/// Repeats both estimators at every size. Repetition `r` of size index `s`
/// uses `stream.child(method).child(s).child(r)`.
pub fn cov_study(config: &CovStudyConfig, prepared: &PreparedQuery, stream: &SeedStream) -> Result<Vec<CovPoint>> {
    config.validate()?;
    let mut points = Vec::new();
    let dmc_stream = stream.child(0);
    for (s, &n) in config.dmc_sizes.iter().enumerate() {
        let results: Vec<_> = (0..config.repetitions)
            .into_par_iter()
            .map(|r| pc_dmc(prepared, n, &dmc_stream.child(s as u64).child(r as u64)))
            .collect::<Result<_>>()?;
        let pcs: Vec<f64> = results.iter().map(|r| r.pc).collect();
        let (mean_pc, std_pc, cov) = summarize(&pcs);
        points.push(CovPoint {
            method: Method::Dmc,
            requested_n: n,
            avg_samples: n as f64,
            mean_pc,
            std_pc,
            cov,
        });
    }
    let ss_stream = stream.child(1);
    for (s, &n) in config.ss_sizes.iter().enumerate() {
        let ss_config = config.ss_config(n)?;
        let results: Vec<_> = (0..config.repetitions)
            .into_par_iter()
            .map(|r| pc_ss(prepared, &ss_config, config.kernel, &ss_stream.child(s as u64).child(r as u64)).map(|(p, _)| p))
            .collect::<Result<_>>()?;
        let pcs: Vec<f64> = results.iter().map(|r| r.pc).collect();
        let avg_samples = results.iter().map(|r| r.samples_used as f64).sum::<f64>() / results.len() as f64;
        let (mean_pc, std_pc, cov) = summarize(&pcs);
        points.push(CovPoint {
            method: Method::Ss,
            requested_n: n,
            avg_samples,
            mean_pc,
            std_pc,
            cov,
        });
    }
    Ok(points)
}

pub const COV_HEADER: [&str; 7] = ["method", "requested_n", "avg_samples", "mean_pc", "std_pc", "cov", "undefined_flag"];

pub fn write_cov_csv<W: Write>(points: &[CovPoint], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(COV_HEADER)?;
    for p in points {
        writer.write_record([
            p.method.label().to_string(),
            p.requested_n.to_string(),
            format!("{:.1}", p.avg_samples),
            format_probability(p.mean_pc),
            format_probability(p.std_pc),
            p.cov.map(|c| format!("{c:.6}")).unwrap_or_default(),
            u8::from(p.cov.is_none()).to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
