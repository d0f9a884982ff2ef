//! Probability of conflict between an observer and a tracked intruder.
//!
//! The uncertain input is the intruder's current state, distributed as the
//! Kalman estimate `N(U_hat, S_hat)`. Each sample is propagated over the
//! prediction horizon next to the observer's intended trajectory and the
//! response is the miss-distance. A conflict is a miss-distance at or below
//! the protected radius.

use std::io::Write;

use nalgebra::{Matrix6, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{closest_approach, propagate, AircraftState, Approach, Trajectory};
use crate::error::{Error, Result};
use crate::rng::{SeedStream, StreamRng};
use crate::scenarios::ScenarioSpec;
use crate::subset::{self, CcdfTable, RareEventSystem, SubsetConfig};
use crate::tracking::{kf_step, simulate_measurement, symmetrize, KalmanEstimate, MeasurementSchedule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConflictQuery {
    /// Observer state; its trajectory is the propagation of this state.
    pub observer: AircraftState,
    pub intruder_estimate: KalmanEstimate,
    pub protected_radius: f64,
    /// Prediction horizon (s).
    pub horizon: f64,
    /// Propagation rate (Hz).
    pub sample_rate: f64,
}

/// Step used to propose the next chain state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ChainProposal {
    /// Unit normal kicks on the two accelerations only.
    AccelerationUnit,
    /// Full-state step `N(0, scale^2 S_hat)`, shaped like the estimate.
    PriorScaled { scale: f64 },
}

impl Default for ChainProposal {
    fn default() -> Self {
        ChainProposal::PriorScaled { scale: 0.5 }
    }
}

/// Density the chains are built around, before the threshold indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConflictTarget {
    /// Prior times a Gaussian of the intruder's closest point about the
    /// observer's closest point with covariance `r_t^2 I`.
    #[default]
    Tilted,
    /// Prior only.
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConflictKernel {
    pub proposal: ChainProposal,
    pub target: ConflictTarget,
}

/// A query with the observer trajectory and the estimate's factorization
/// computed once.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub query: ConflictQuery,
    pub observer_track: Trajectory,
    mean: Vector6<f64>,
    cholesky: Matrix6<f64>,
    cholesky_inverse: Matrix6<f64>,
    /// Diagonal jitter added to make the covariance factorable.
    pub jitter: f64,
}

impl PreparedQuery {
    pub fn new(query: ConflictQuery) -> Result<Self> {
        if !(query.protected_radius > 0.0 && query.protected_radius.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "protected radius must be positive, got {}",
                query.protected_radius
            )));
        }
        if !query.observer.is_finite() || !query.intruder_estimate.mean.is_finite() {
            return Err(Error::InvalidInput("query states must be finite".into()));
        }
        let observer_track = propagate(&query.observer, query.sample_rate, query.horizon)?;
        let covariance = symmetrize(&query.intruder_estimate.covariance);
        if covariance.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("estimate covariance is not finite".into()));
        }
        let eigen = covariance.symmetric_eigenvalues();
        let min_eigenvalue = eigen.min();
        let scale = eigen.amax().max(1e-300);
        if min_eigenvalue < -1e-9 * scale {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue });
        }
        let (cholesky, jitter) = factorize(&covariance)?;
        let cholesky_inverse = cholesky.try_inverse().ok_or(Error::NotPositiveSemidefinite { min_eigenvalue })?;
        Ok(Self {
            query,
            observer_track,
            mean: query.intruder_estimate.mean.to_vector(),
            cholesky,
            cholesky_inverse,
            jitter,
        })
    }

    pub fn evaluate(&self, state: AircraftState) -> ConflictSample {
        ConflictSample {
            state,
            approach: closest_approach(&self.observer_track, &state),
        }
    }

    /// Draws an intruder state from `N(U_hat, S_hat)`.
    pub fn draw_state(&self, rng: &mut StreamRng) -> AircraftState {
        let z = Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        AircraftState::from_vector(&(self.mean + self.cholesky * z))
    }

    /// Log prior density up to a constant.
    pub fn log_prior(&self, state: &AircraftState) -> f64 {
        let w = self.cholesky_inverse * (state.to_vector() - self.mean);
        -0.5 * w.norm_squared()
    }

    fn proposal_step(&self, proposal: ChainProposal, rng: &mut StreamRng) -> Vector6<f64> {
        match proposal {
            ChainProposal::AccelerationUnit => {
                let ax: f64 = rng.sample(StandardNormal);
                let ay: f64 = rng.sample(StandardNormal);
                Vector6::new(0.0, 0.0, ax, 0.0, 0.0, ay)
            }
            ChainProposal::PriorScaled { scale } => {
                let z = Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                self.cholesky * z * scale
            }
        }
    }
}

fn factorize(covariance: &Matrix6<f64>) -> Result<(Matrix6<f64>, f64)> {
    if let Some(chol) = covariance.cholesky() {
        return Ok((chol.l(), 0.0));
    }
    let base = (covariance.trace() / 6.0).abs().max(1e-12);
    let mut jitter = base * 1e-12;
    for _ in 0..24 {
        if let Some(chol) = (covariance + Matrix6::identity() * jitter).cholesky() {
            log::warn!("estimate covariance needed diagonal jitter {jitter:e} to factorize");
            return Ok((chol.l(), jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveSemidefinite {
        min_eigenvalue: covariance.symmetric_eigenvalues().min(),
    })
}

/// An intruder state and its closest approach to the observer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConflictSample {
    pub state: AircraftState,
    pub approach: Approach,
}

impl ConflictSample {
    pub fn miss_distance(&self) -> f64 {
        self.approach.miss_distance
    }

    /// Re-propagates the stored state over the query horizon.
    pub fn trajectory(&self, prepared: &PreparedQuery) -> Result<Trajectory> {
        propagate(&self.state, prepared.query.sample_rate, prepared.query.horizon)
    }
}

pub struct ConflictSystem<'a> {
    pub prepared: &'a PreparedQuery,
    pub kernel: ConflictKernel,
}

impl ConflictSystem<'_> {
    fn log_target(&self, sample: &ConflictSample) -> f64 {
        let prior = self.prepared.log_prior(&sample.state);
        match self.kernel.target {
            ConflictTarget::Prior => prior,
            ConflictTarget::Tilted => {
                let r_t = self.prepared.query.protected_radius;
                prior - sample.miss_distance().powi(2) / (2.0 * r_t * r_t)
            }
        }
    }

    /// One chain of `chain_length` new samples, each with miss-distance
    /// strictly below `threshold` (or equal to the seed's).
    pub fn chain(
        &self,
        seed: &ConflictSample,
        threshold: f64,
        chain_length: usize,
        rng: &mut StreamRng,
    ) -> Result<Vec<ConflictSample>> {
        if !(seed.miss_distance() <= threshold) {
            return Err(Error::SeedOutsideThreshold {
                response: seed.miss_distance(),
                threshold,
            });
        }
        let mut current = *seed;
        let mut current_log_target = self.log_target(&current);
        let mut out = Vec::with_capacity(chain_length);
        for _ in 0..chain_length {
            let step = self.prepared.proposal_step(self.kernel.proposal, rng);
            let e: f64 = rng.random();
            let candidate = self
                .prepared
                .evaluate(AircraftState::from_vector(&(current.state.to_vector() + step)));
            if candidate.miss_distance() < threshold {
                let candidate_log_target = self.log_target(&candidate);
                if e.ln() < (candidate_log_target - current_log_target).min(0.0) {
                    current = candidate;
                    current_log_target = candidate_log_target;
                }
            }
            out.push(current);
        }
        Ok(out)
    }
}

impl RareEventSystem for ConflictSystem<'_> {
    type Sample = ConflictSample;

    fn sample_prior(&self, rng: &mut StreamRng) -> Result<ConflictSample> {
        Ok(self.prepared.evaluate(self.prepared.draw_state(rng)))
    }

    fn response(&self, sample: &ConflictSample) -> f64 {
        sample.miss_distance()
    }

    fn conditional_chain(
        &self,
        seed: &ConflictSample,
        threshold: f64,
        chain_length: usize,
        rng: &mut StreamRng,
    ) -> Result<Vec<ConflictSample>> {
        self.chain(seed, threshold, chain_length, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PcResult {
    pub pc: f64,
    /// Conflicting samples on the final level (`D`).
    pub conflict_count: usize,
    pub levels_used: usize,
    pub samples_used: usize,
    /// No conflict was found; `pc` is an upper bound.
    pub floor_reached: bool,
}

/// Direct Monte Carlo with `n` draws. Draw `i` uses the same substream as
/// level-0 sample `i` of [`pc_ss`] under the same `stream`.
pub fn pc_dmc(prepared: &PreparedQuery, n: usize, stream: &SeedStream) -> Result<PcResult> {
    if n == 0 {
        return Err(Error::InvalidInput("DMC needs at least one sample".into()));
    }
    let system = ConflictSystem {
        prepared,
        kernel: ConflictKernel::default(),
    };
    let samples = subset::draw_prior_samples(&system, n, stream)?;
    let r_t = prepared.query.protected_radius;
    let conflicts = samples.iter().filter(|s| s.miss_distance() <= r_t).count();
    Ok(PcResult {
        pc: conflicts as f64 / n as f64,
        conflict_count: conflicts,
        levels_used: 1,
        samples_used: n,
        floor_reached: false,
    })
}

/// Metropolis-Hastings chains from each seed, chain `j` on `stream.child(j)`.
pub fn mh_conflict_samples(
    prepared: &PreparedQuery,
    seeds: &[ConflictSample],
    chain_length: usize,
    threshold: f64,
    kernel: ConflictKernel,
    stream: &SeedStream,
) -> Result<Vec<Vec<ConflictSample>>> {
    let system = ConflictSystem { prepared, kernel };
    seeds
        .iter()
        .enumerate()
        .map(|(j, seed)| system.chain(seed, threshold, chain_length, &mut stream.child(j as u64).rng()))
        .collect()
}

pub fn pc_ss(
    prepared: &PreparedQuery,
    config: &SubsetConfig,
    kernel: ConflictKernel,
    stream: &SeedStream,
) -> Result<(PcResult, CcdfTable<ConflictSample>)> {
    let system = ConflictSystem { prepared, kernel };
    let run = subset::run_subset_simulation(&system, config, prepared.query.protected_radius, stream)?;
    let d = &run.diagnostics;
    Ok((
        PcResult {
            pc: run.estimate,
            conflict_count: d.conflict_count,
            levels_used: d.levels_completed,
            samples_used: d.samples_used,
            floor_reached: d.floor_reached,
        },
        run.table,
    ))
}

/// One emitted step of a scenario run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub ss: PcResult,
    /// Matched-budget Direct Monte Carlo, when enabled.
    pub dmc: Option<PcResult>,
    /// Miss-distance of the noiseless tracks over the horizon from `t`.
    pub miss_true: f64,
    pub observer: AircraftState,
    pub intruder: AircraftState,
    pub estimate: KalmanEstimate,
}

/// Noiseless truth for both aircraft plus the Kalman filter tracking the
/// intruder, advanced one propagation step at a time.
#[derive(Debug, Clone)]
pub struct Encounter {
    spec: ScenarioSpec,
    stream: SeedStream,
    schedule: MeasurementSchedule,
    step: usize,
    pub observer: AircraftState,
    pub intruder: AircraftState,
    pub estimate: KalmanEstimate,
}

impl Encounter {
    /// Measurement noise for step `K` is drawn from `stream.child(K).child(0)`.
    pub fn new(spec: &ScenarioSpec, stream: &SeedStream) -> Result<Self> {
        spec.validate()?;
        let intruder = spec.intruder_initial();
        let mut initial_mean = intruder;
        if !spec.perfect_init {
            let fix = simulate_measurement(&intruder, &spec.noise, &mut stream.child(u64::MAX).rng());
            initial_mean.x = fix.z[0];
            initial_mean.y = fix.z[1];
        }
        Ok(Self {
            spec: *spec,
            stream: *stream,
            schedule: MeasurementSchedule::new(spec.sample_rate, spec.measurement_rate)?,
            step: 0,
            observer: spec.observer_initial(),
            intruder,
            estimate: KalmanEstimate::new(initial_mean, spec.initial_covariance.matrix()),
        })
    }

    /// Steps taken so far.
    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.spec.dt()
    }

    /// Propagates the truth, measures when the counter fires, and runs the
    /// filter. Returns whether a measurement was used.
    pub fn advance(&mut self) -> Result<bool> {
        let dt = self.spec.dt();
        let step_stream = self.stream.child(self.step as u64);
        self.observer = self.observer.step(dt);
        self.intruder = self.intruder.step(dt);
        let measurement = self
            .schedule
            .tick()
            .then(|| simulate_measurement(&self.intruder, &self.spec.noise, &mut step_stream.child(0).rng()));
        self.estimate = kf_step(&self.estimate, measurement.as_ref(), dt, &self.spec.noise)?;
        self.step += 1;
        Ok(measurement.is_some())
    }

    /// Conflict query from the current observer state and intruder estimate.
    pub fn query(&self) -> ConflictQuery {
        ConflictQuery {
            observer: self.observer,
            intruder_estimate: self.estimate,
            protected_radius: self.spec.protected_radius,
            horizon: self.spec.horizon,
            sample_rate: self.spec.sample_rate,
        }
    }
}

/// Truth propagation, measurement, filtering and conflict estimation for
/// every step of a scenario. Estimation at step `K` draws from
/// `stream.child(K).child(1)`; Direct Monte Carlo reuses that stream, so its
/// first `N` draws are the Subset Simulation level-0 samples.
pub fn simulate_scenario(
    spec: &ScenarioSpec,
    ss_config: &SubsetConfig,
    kernel: ConflictKernel,
    stream: &SeedStream,
) -> Result<Vec<StepRecord>> {
    let mut records = Vec::with_capacity(spec.steps());
    simulate_scenario_with(spec, ss_config, kernel, stream, |r| {
        records.push(r);
        Ok(())
    })?;
    Ok(records)
}

/// As [`simulate_scenario`], handing each record to `emit` as it is produced.
pub fn simulate_scenario_with<F>(
    spec: &ScenarioSpec,
    ss_config: &SubsetConfig,
    kernel: ConflictKernel,
    stream: &SeedStream,
    mut emit: F,
) -> Result<()>
where
    F: FnMut(StepRecord) -> Result<()>,
{
    ss_config.validate()?;
    let mut encounter = Encounter::new(spec, stream)?;
    for _ in 0..spec.steps() {
        let k = encounter.step_index();
        encounter.advance()?;
        let prepared = PreparedQuery::new(encounter.query())?;
        let estimation_stream = stream.child(k as u64).child(1);
        let (ss, _) = pc_ss(&prepared, ss_config, kernel, &estimation_stream)?;
        let dmc = if spec.run_dmc {
            Some(pc_dmc(&prepared, ss.samples_used, &estimation_stream)?)
        } else {
            None
        };
        emit(StepRecord {
            t: encounter.time(),
            ss,
            dmc,
            miss_true: closest_approach(&prepared.observer_track, &encounter.intruder).miss_distance,
            observer: encounter.observer,
            intruder: encounter.intruder,
            estimate: encounter.estimate,
        })?;
    }
    Ok(())
}

pub const SERIES_HEADER: [&str; 9] = [
    "t",
    "pc_ss",
    "pc_ss_floor_flag",
    "levels",
    "samples",
    "pc_dmc",
    "D_ss",
    "D_dmc",
    "miss_true",
];

pub fn format_probability(p: f64) -> String {
    format!("{p:.5e}")
}

pub fn format_distance(d: f64) -> String {
    format!("{d:.3}")
}

pub fn series_row(record: &StepRecord) -> [String; 9] {
    let (pc_dmc, d_dmc) = match &record.dmc {
        Some(d) => (format_probability(d.pc), d.conflict_count.to_string()),
        None => (String::new(), String::new()),
    };
    [
        format_distance(record.t),
        format_probability(record.ss.pc),
        u8::from(record.ss.floor_reached).to_string(),
        record.ss.levels_used.to_string(),
        record.ss.samples_used.to_string(),
        pc_dmc,
        record.ss.conflict_count.to_string(),
        d_dmc,
        format_distance(record.miss_true),
    ]
}

pub fn write_series_csv<W: Write>(records: &[StepRecord], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(SERIES_HEADER)?;
    for r in records {
        writer.write_record(series_row(r))?;
    }
    writer.flush()?;
    Ok(())
}
