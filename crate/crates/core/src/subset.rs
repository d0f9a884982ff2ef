//! Subset Simulation engine.
//!
//! A rare event `{response <= b_F}` is reached through a sequence of nested
//! intermediate events `{response <= b_i}`. Level 0 is plain Monte Carlo over
//! the prior. Each later level takes the `N_c` samples closest to failure as
//! seeds and grows `N_c` Metropolis-Hastings chains of length `N_s` that stay
//! inside the current intermediate threshold. Sorted responses from every
//! level are stitched into a single CCDF table, from which the failure
//! probability is read off.
//!
//! Responses follow the "smaller is closer to failure" convention (distances,
//! miss-distances), so sorts are descending and seeds are taken from the tail.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedStream, StreamRng};

/// Tolerance used when checking that `p0 * N` and `1 / p0` are whole numbers.
const INTEGRALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntervalVariant {
    /// `P_n = p0^i (N - n) / N` for `n = 1..N`; the last interval is 0.
    Standard,
    /// `P_{n+1} = p0^i (N - n) / N` for `n = 0..N-1`; the last interval is
    /// the floor `p0^i / N`.
    #[default]
    Shifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetConfig {
    /// Samples per level (`N`).
    pub n_samples: usize,
    /// Level probability (`p0`).
    pub level_probability: f64,
    /// Maximum number of levels (`m`), level 0 included.
    pub max_levels: usize,
    pub interval_variant: IntervalVariant,
}

impl SubsetConfig {
    pub fn new(
        n_samples: usize,
        level_probability: f64,
        max_levels: usize,
        interval_variant: IntervalVariant,
    ) -> Result<Self> {
        let config = Self {
            n_samples,
            level_probability,
            max_levels,
            interval_variant,
        };
        config.validate()?;
        Ok(config)
    }

    /// The parameters used throughout the conflict study: `N = 100`,
    /// `p0 = 0.1`, `m = 7`, shifted intervals.
    pub fn conflict_default() -> Self {
        Self {
            n_samples: 100,
            level_probability: 0.1,
            max_levels: 7,
            interval_variant: IntervalVariant::Shifted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p0 = self.level_probability;
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be positive".into()));
        }
        if self.max_levels == 0 {
            return Err(Error::InvalidConfig("max_levels must be positive".into()));
        }
        if !(p0 > 0.0 && p0 < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "level probability must lie in (0, 1), got {p0}"
            )));
        }
        let chains = p0 * self.n_samples as f64;
        if (chains - chains.round()).abs() > INTEGRALITY_TOL || chains.round() < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "p0 * N = {chains} must be a positive integer"
            )));
        }
        let chain_length = 1.0 / p0;
        if (chain_length - chain_length.round()).abs() > INTEGRALITY_TOL * chain_length {
            return Err(Error::InvalidConfig(format!(
                "1 / p0 = {chain_length} must be an integer"
            )));
        }
        if chains.round() as usize * chain_length.round() as usize != self.n_samples {
            return Err(Error::InvalidConfig(format!(
                "N_c * N_s = {} * {} does not equal N = {}",
                chains.round(),
                chain_length.round(),
                self.n_samples
            )));
        }
        Ok(())
    }

    /// Number of chains per level, `N_c = p0 N`.
    pub fn chains(&self) -> usize {
        (self.level_probability * self.n_samples as f64).round() as usize
    }

    /// Samples per chain, `N_s = 1 / p0`.
    pub fn chain_length(&self) -> usize {
        (1.0 / self.level_probability).round() as usize
    }
}

/// Levels needed to reach a target probability: the smallest `m` with
/// `p0^m <= target`.
pub fn levels_for_target(target: f64, level_probability: f64) -> Result<usize> {
    if !(target > 0.0 && target <= 1.0) || !(level_probability > 0.0 && level_probability < 1.0) {
        return Err(Error::InvalidInput(format!(
            "need target in (0, 1] and p0 in (0, 1), got {target}, {level_probability}"
        )));
    }
    let exact = target.ln() / level_probability.ln();
    let rounded = exact.round();
    if (exact - rounded).abs() < 1e-9 {
        Ok(rounded as usize)
    } else {
        Ok(exact.ceil() as usize)
    }
}

/// Probability intervals for one level, in row order `n = 1..N`.
pub fn probability_intervals(level: usize, config: &SubsetConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if level >= config.max_levels {
        return Err(Error::InvalidInput(format!(
            "level {level} is outside 0..{}",
            config.max_levels
        )));
    }
    let n = config.n_samples;
    // p0^i written as 1 / N_s^i keeps the floor p0^i / N exact for p0 = 1/10.
    let scale = n as f64 * (config.chain_length() as f64).powi(level as i32);
    let offset = match config.interval_variant {
        IntervalVariant::Standard => 0,
        IntervalVariant::Shifted => 1,
    };
    Ok((1..=n).map(|row| (n + offset - row) as f64 / scale).collect())
}

/// Intermediate threshold `b_i = B_{N - N_c}` of the previous level's sorted
/// responses.
pub fn intermediate_threshold(sorted_responses: &[f64], config: &SubsetConfig) -> Result<f64> {
    check_block_len(sorted_responses.len(), config)?;
    check_descending(sorted_responses)?;
    Ok(sorted_responses[config.n_samples - config.chains() - 1])
}

/// Seeds for the next level: the last `N_c` entries of a level sorted by
/// descending response.
pub fn select_seeds<'a, S>(sorted_samples: &'a [S], config: &SubsetConfig) -> Result<&'a [S]> {
    check_block_len(sorted_samples.len(), config)?;
    Ok(&sorted_samples[config.n_samples - config.chains()..])
}

fn check_block_len(len: usize, config: &SubsetConfig) -> Result<()> {
    if len != config.n_samples {
        return Err(Error::InvalidInput(format!(
            "expected {} entries, got {len}",
            config.n_samples
        )));
    }
    Ok(())
}

fn check_descending(values: &[f64]) -> Result<()> {
    if let Some(w) = values.windows(2).find(|w| !(w[0] >= w[1])) {
        return Err(Error::InvalidInput(format!(
            "responses are not sorted in descending order ({} before {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// One level of samples sorted by descending response, with its intervals.
#[derive(Debug, Clone)]
pub struct LevelBlock<S> {
    pub level: usize,
    pub intervals: Vec<f64>,
    pub responses: Vec<f64>,
    pub samples: Vec<S>,
}

impl<S> LevelBlock<S> {
    /// Sorts `(sample, response)` pairs by descending response (stable, so
    /// ties keep draw order) and attaches the level's intervals.
    pub fn from_unsorted(
        level: usize,
        entries: Vec<(S, f64)>,
        config: &SubsetConfig,
    ) -> Result<Self> {
        check_block_len(entries.len(), config)?;
        if let Some((_, r)) = entries.iter().find(|(_, r)| r.is_nan()) {
            return Err(Error::InvalidInput(format!("response {r} is not comparable")));
        }
        let mut entries = entries;
        entries.sort_by(|a, b| b.1.total_cmp(&a.1));
        let (samples, responses) = entries.into_iter().unzip();
        Ok(Self {
            level,
            intervals: probability_intervals(level, config)?,
            responses,
            samples,
        })
    }

    pub fn count_at_or_below(&self, threshold: f64) -> usize {
        self.responses.iter().filter(|&&r| r <= threshold).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CcdfRow<S> {
    pub probability: f64,
    pub response: f64,
    pub sample: S,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CcdfTable<S> {
    pub rows: Vec<CcdfRow<S>>,
    pub levels_completed: usize,
}

impl<S> CcdfTable<S> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows contributed by the last level (always the final `N` rows).
    pub fn final_level_rows(&self, n_samples: usize) -> &[CcdfRow<S>] {
        &self.rows[self.rows.len().saturating_sub(n_samples)..]
    }
}

/// Concatenates level blocks into a CCDF. Seed rows (the last `N_c` rows) of
/// every non-final level are replaced by the next level's samples.
pub fn assemble_ccdf<S: Clone>(blocks: &[LevelBlock<S>], config: &SubsetConfig) -> Result<CcdfTable<S>> {
    if blocks.is_empty() {
        return Err(Error::InvalidInput("no level blocks to assemble".into()));
    }
    let n = config.n_samples;
    let keep = n - config.chains();
    let mut rows = Vec::with_capacity(n + (blocks.len() - 1) * keep);
    for (idx, block) in blocks.iter().enumerate() {
        if block.level != idx {
            return Err(Error::InvalidInput(format!(
                "block {idx} carries level {}",
                block.level
            )));
        }
        if block.intervals.len() != n || block.responses.len() != n || block.samples.len() != n {
            return Err(Error::InvalidInput(format!("block {idx} does not have {n} rows")));
        }
        let take = if idx + 1 == blocks.len() { n } else { keep };
        rows.extend((0..take).map(|row| CcdfRow {
            probability: block.intervals[row],
            response: block.responses[row],
            sample: block.samples[row].clone(),
        }));
    }
    Ok(CcdfTable {
        rows,
        levels_completed: blocks.len(),
    })
}

/// Reads the failure probability off the final level: `P_{N-D+1}` when `D`
/// failures were counted there, otherwise the lowest interval `P_N`.
pub fn estimate_probability<S>(
    table: &CcdfTable<S>,
    conflict_count: usize,
    final_level: usize,
    config: &SubsetConfig,
) -> Result<f64> {
    let n = config.n_samples;
    if conflict_count > n {
        return Err(Error::InvalidInput(format!(
            "failure count {conflict_count} exceeds N = {n}"
        )));
    }
    if table.levels_completed != final_level + 1 || table.rows.len() < n {
        return Err(Error::InvalidInput(format!(
            "table with {} levels does not end at level {final_level}",
            table.levels_completed
        )));
    }
    let last = table.final_level_rows(n);
    let row = if conflict_count > 0 { n - conflict_count } else { n - 1 };
    Ok(last[row].probability)
}

/// A problem Subset Simulation can be run on.
pub trait RareEventSystem: Sync {
    type Sample: Clone + Send + Sync;

    /// Draws one sample from the prior (and evaluates it).
    fn sample_prior(&self, rng: &mut StreamRng) -> Result<Self::Sample>;

    /// Response of an evaluated sample; smaller is closer to failure.
    fn response(&self, sample: &Self::Sample) -> f64;

    /// Grows one chain of `chain_length` new samples from `seed`, every one
    /// with response `<= threshold`. The seed itself is not part of the chain.
    fn conditional_chain(
        &self,
        seed: &Self::Sample,
        threshold: f64,
        chain_length: usize,
        rng: &mut StreamRng,
    ) -> Result<Vec<Self::Sample>>;
}

/// Stream for the `index`-th prior draw. Direct Monte Carlo estimators use the
/// same streams so level 0 and DMC see identical draws under one seed.
pub fn prior_draw_stream(stream: &SeedStream, index: usize) -> SeedStream {
    stream.child(0).child(index as u64)
}

/// Stream for chain `chain` of level `level >= 1`.
pub fn chain_stream(stream: &SeedStream, level: usize, chain: usize) -> SeedStream {
    stream.child(level as u64).child(chain as u64)
}

/// Draws `n` prior samples on their own substreams, in parallel.
pub fn draw_prior_samples<Y: RareEventSystem>(
    system: &Y,
    n: usize,
    stream: &SeedStream,
) -> Result<Vec<Y::Sample>> {
    (0..n)
        .into_par_iter()
        .map(|i| system.sample_prior(&mut prior_draw_stream(stream, i).rng()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetDiagnostics {
    pub levels_completed: usize,
    /// Failures counted on the final level (`D`).
    pub conflict_count: usize,
    /// Total samples consumed, `N * levels_completed`.
    pub samples_used: usize,
    /// Intermediate thresholds `b_1, b_2, ...`.
    pub thresholds: Vec<f64>,
    /// Levels whose threshold did not decrease relative to the previous one.
    pub stalled_levels: Vec<usize>,
    /// No failure was found; the estimate is the lowest interval, an upper bound.
    pub floor_reached: bool,
}

#[derive(Debug, Clone)]
pub struct SubsetRun<S> {
    pub estimate: f64,
    pub table: CcdfTable<S>,
    pub diagnostics: SubsetDiagnostics,
}

/// Runs Subset Simulation until `D >= N_c` failures are seen on a level or
/// `max_levels` levels have been completed.
pub fn run_subset_simulation<Y: RareEventSystem>(
    system: &Y,
    config: &SubsetConfig,
    failure_threshold: f64,
    stream: &SeedStream,
) -> Result<SubsetRun<Y::Sample>> {
    config.validate()?;
    let n = config.n_samples;
    let n_c = config.chains();
    let n_s = config.chain_length();

    let prior = draw_prior_samples(system, n, stream)?;
    let entries = prior
        .into_iter()
        .map(|s| {
            let r = system.response(&s);
            (s, r)
        })
        .collect();
    let mut blocks = vec![LevelBlock::from_unsorted(0, entries, config)?];
    let mut failures = blocks[0].count_at_or_below(failure_threshold);
    let mut thresholds: Vec<f64> = Vec::new();
    let mut stalled_levels = Vec::new();
    let mut level = 0;

    while failures < n_c && level + 1 < config.max_levels {
        level += 1;
        let previous = blocks.last().expect("level 0 exists");
        let threshold = intermediate_threshold(&previous.responses, config)?;
        if let Some(&last) = thresholds.last() {
            if threshold >= last {
                log::warn!("intermediate threshold stalled at level {level}: {threshold} >= {last}");
                stalled_levels.push(level);
            }
        }
        thresholds.push(threshold);
        let seeds = select_seeds(&previous.samples, config)?;

        let chains: Vec<Vec<Y::Sample>> = seeds
            .par_iter()
            .enumerate()
            .map(|(j, seed)| {
                let mut rng = chain_stream(stream, level, j).rng();
                system.conditional_chain(seed, threshold, n_s, &mut rng)
            })
            .collect::<Result<_>>()?;

        let mut entries = Vec::with_capacity(n);
        for (j, chain) in chains.into_iter().enumerate() {
            if chain.len() != n_s {
                return Err(Error::KernelContract(format!(
                    "chain {j} at level {level} has {} samples, expected {n_s}",
                    chain.len()
                )));
            }
            for sample in chain {
                let r = system.response(&sample);
                if !(r <= threshold) {
                    return Err(Error::KernelContract(format!(
                        "chain {j} at level {level} produced response {r} above threshold {threshold}"
                    )));
                }
                entries.push((sample, r));
            }
        }
        let block = LevelBlock::from_unsorted(level, entries, config)?;
        failures = block.count_at_or_below(failure_threshold);
        blocks.push(block);
    }

    let table = assemble_ccdf(&blocks, config)?;
    let estimate = estimate_probability(&table, failures, level, config)?;
    Ok(SubsetRun {
        estimate,
        table,
        diagnostics: SubsetDiagnostics {
            levels_completed: level + 1,
            conflict_count: failures,
            samples_used: n * (level + 1),
            thresholds,
            stalled_levels,
            floor_reached: failures == 0,
        },
    })
}
