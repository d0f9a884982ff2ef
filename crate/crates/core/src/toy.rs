//! Two-dimensional toy problem: the probability that a standard bivariate
//! normal sample lands in a small disc far from the origin.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedStream, StreamRng};
use crate::subset::{self, RareEventSystem, SubsetConfig, SubsetRun};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleRegion {
    pub center: Point2,
    pub radius: f64,
}

impl CircleRegion {
    pub fn new(center: Point2, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) || !center.x.is_finite() || !center.y.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "region needs a finite center and positive radius, got {center:?}, {radius}"
            )));
        }
        Ok(Self { center, radius })
    }

    /// The unit disc centered at (3, -3).
    pub fn reference() -> Self {
        Self {
            center: Point2::new(3.0, -3.0),
            radius: 1.0,
        }
    }

    pub fn contains(&self, p: &Point2) -> bool {
        distance_to_center(p, self) <= self.radius
    }
}

pub fn distance_to_center(sample: &Point2, region: &CircleRegion) -> f64 {
    sample.distance(&region.center)
}

/// Stationary density the Metropolis-Hastings chains aim at, before the
/// threshold indicator is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ToyTarget {
    /// The prior itself, so chains sample the prior conditioned on the
    /// current level.
    #[default]
    ConditionalPrior,
    /// A Gaussian centered on the region with covariance `r_c^2 I`. Pulls
    /// chains toward the region but biases the level probabilities.
    RegionCentered,
}

fn standard_point(rng: &mut StreamRng) -> Point2 {
    Point2::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn log_gaussian(p: &Point2, mean: &Point2, variance: f64) -> f64 {
    let dx = p.x - mean.x;
    let dy = p.y - mean.y;
    -(dx * dx + dy * dy) / (2.0 * variance)
}

#[derive(Debug, Clone, Copy)]
pub struct ToySystem {
    pub region: CircleRegion,
    pub target: ToyTarget,
}

impl ToySystem {
    fn log_target(&self, p: &Point2) -> f64 {
        match self.target {
            ToyTarget::ConditionalPrior => log_gaussian(p, &Point2::new(0.0, 0.0), 1.0),
            ToyTarget::RegionCentered => {
                log_gaussian(p, &self.region.center, self.region.radius * self.region.radius)
            }
        }
    }

    /// One Metropolis-Hastings chain of `chain_length` new points, each with
    /// distance `<= threshold`.
    pub fn chain(
        &self,
        seed: &Point2,
        threshold: f64,
        chain_length: usize,
        rng: &mut StreamRng,
    ) -> Result<Vec<(Point2, f64)>> {
        let seed_distance = distance_to_center(seed, &self.region);
        if !(seed_distance <= threshold) {
            return Err(Error::SeedOutsideThreshold {
                response: seed_distance,
                threshold,
            });
        }
        let mut current = *seed;
        let mut current_distance = seed_distance;
        let mut out = Vec::with_capacity(chain_length);
        for _ in 0..chain_length {
            let step = standard_point(rng);
            let candidate = Point2::new(current.x + step.x, current.y + step.y);
            let e: f64 = rng.random();
            let candidate_distance = distance_to_center(&candidate, &self.region);
            let inside = candidate_distance <= threshold;
            // Random-walk transition density; the forward/backward ratio is 1
            // for this symmetric step but is kept in the ratio.
            let log_q_ratio = log_gaussian(&current, &candidate, 1.0) - log_gaussian(&candidate, &current, 1.0);
            let log_beta = log_q_ratio + self.log_target(&candidate) - self.log_target(&current);
            if inside && e.ln() < log_beta.min(0.0) {
                current = candidate;
                current_distance = candidate_distance;
            }
            out.push((current, current_distance));
        }
        Ok(out)
    }
}

impl RareEventSystem for ToySystem {
    type Sample = Point2;

    fn sample_prior(&self, rng: &mut StreamRng) -> Result<Point2> {
        Ok(standard_point(rng))
    }

    fn response(&self, sample: &Point2) -> f64 {
        distance_to_center(sample, &self.region)
    }

    fn conditional_chain(
        &self,
        seed: &Point2,
        threshold: f64,
        chain_length: usize,
        rng: &mut StreamRng,
    ) -> Result<Vec<Point2>> {
        Ok(self
            .chain(seed, threshold, chain_length, rng)?
            .into_iter()
            .map(|(p, _)| p)
            .collect())
    }
}

/// Direct Monte Carlo: fraction of `n` prior draws inside the region. Draw
/// `i` comes from the same substream as level-0 sample `i` of [`ss_toy`].
pub fn dmc_estimate(region: &CircleRegion, n: usize, stream: &SeedStream) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("DMC needs at least one sample".into()));
    }
    let system = ToySystem {
        region: *region,
        target: ToyTarget::default(),
    };
    let points = subset::draw_prior_samples(&system, n, stream)?;
    let hits = points.iter().filter(|p| region.contains(p)).count();
    Ok(hits as f64 / n as f64)
}

/// Metropolis-Hastings chains from each seed, chain `j` on `stream.child(j)`.
pub fn mh_chains(
    seeds: &[Point2],
    chain_length: usize,
    region: &CircleRegion,
    threshold: f64,
    target: ToyTarget,
    stream: &SeedStream,
) -> Result<Vec<Vec<(Point2, f64)>>> {
    let system = ToySystem {
        region: *region,
        target,
    };
    seeds
        .iter()
        .enumerate()
        .map(|(j, seed)| system.chain(seed, threshold, chain_length, &mut stream.child(j as u64).rng()))
        .collect()
}

pub fn ss_toy(
    region: &CircleRegion,
    config: &SubsetConfig,
    target: ToyTarget,
    stream: &SeedStream,
) -> Result<SubsetRun<Point2>> {
    let system = ToySystem {
        region: *region,
        target,
    };
    subset::run_subset_simulation(&system, config, region.radius, stream)
}

/// Standard bivariate normal mass inside the disc.
///
/// In polar coordinates about the origin the mass at radius `r` is
/// `r exp(-r^2/2) dr` times the fraction of the circle of radius `r` lying in
/// the disc, which is known in closed form. The remaining radial integral is
/// done by adaptive Simpson quadrature split at the profile's kinks.
pub fn oracle_probability(region: &CircleRegion) -> f64 {
    let d = region.center.x.hypot(region.center.y);
    let a = region.radius;
    let r_max = (d + a).min(40.0);
    let integrand = |r: f64| r * (-0.5 * r * r).exp() * arc_fraction(r, d, a);
    let mut breaks = vec![0.0, (d - a).abs().min(r_max), r_max];
    breaks.dedup();
    breaks
        .windows(2)
        .flat_map(|w| {
            // Short panels so the adaptive rule cannot step over the peak.
            let panels = ((w[1] - w[0]) / 0.25).ceil().max(1.0) as usize;
            let width = (w[1] - w[0]) / panels as f64;
            (0..panels).map(move |k| (w[0] + k as f64 * width, w[0] + (k + 1) as f64 * width))
        })
        .map(|(lo, hi)| adaptive_simpson(&integrand, lo, hi, 1e-15, 50))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Fraction of the circle of radius `r` about the origin that lies inside a
/// disc of radius `a` whose center is `d` from the origin.
fn arc_fraction(r: f64, d: f64, a: f64) -> f64 {
    if r == 0.0 || d == 0.0 {
        return if r <= a { 1.0 } else { 0.0 };
    }
    let cos_half_angle = ((r * r + d * d - a * a) / (2.0 * r * d)).clamp(-1.0, 1.0);
    cos_half_angle.acos() / std::f64::consts::PI
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, depth)
}
