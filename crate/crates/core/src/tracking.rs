//! Noisy position measurements of the intruder and a Kalman filter over its
//! six-component kinematic state.

use nalgebra::{Matrix2, Matrix2x6, Matrix6, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{transition_matrix, AircraftState, Position};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Measurement noise standard deviation along x (m).
    pub sigma_x: f64,
    /// Measurement noise standard deviation along y (m).
    pub sigma_y: f64,
    /// Jerk noise intensity on the x axis (m^2 s^-4).
    pub sigma_ax2: f64,
    /// Jerk noise intensity on the y axis (m^2 s^-4).
    pub sigma_ay2: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_x: 0.1,
            sigma_y: 0.1,
            sigma_ax2: 0.01,
            sigma_ay2: 0.01,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_x, self.sigma_y, self.sigma_ax2, self.sigma_ay2];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig(format!("noise parameters must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Diagonal starting covariance, given as standard deviations per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialCovariance {
    pub position_std: f64,
    pub velocity_std: f64,
    pub acceleration_std: f64,
}

impl Default for InitialCovariance {
    fn default() -> Self {
        Self {
            position_std: 10.0,
            velocity_std: 5.0,
            acceleration_std: 1.0,
        }
    }
}

impl InitialCovariance {
    pub fn matrix(&self) -> Matrix6<f64> {
        let p = self.position_std.powi(2);
        let v = self.velocity_std.powi(2);
        let a = self.acceleration_std.powi(2);
        Matrix6::from_diagonal(&nalgebra::Vector6::new(p, v, a, p, v, a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanEstimate {
    pub mean: AircraftState,
    pub covariance: Matrix6<f64>,
}

impl KalmanEstimate {
    pub fn new(mean: AircraftState, covariance: Matrix6<f64>) -> Self {
        Self { mean, covariance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub z: Position,
}

/// White-noise jerk process noise: per axis `sigma_a^2 / dt` times
/// `[[dt^5/20, dt^4/8, dt^3/6], [dt^4/8, dt^3/3, dt^2/2], [dt^3/6, dt^2/2, dt]]`.
pub fn process_noise(dt: f64, noise: &NoiseConfig) -> Result<Matrix6<f64>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    noise.validate()?;
    let (d2, d3, d4, d5) = (dt.powi(2), dt.powi(3), dt.powi(4), dt.powi(5));
    let block = [
        [d5 / 20.0, d4 / 8.0, d3 / 6.0],
        [d4 / 8.0, d3 / 3.0, d2 / 2.0],
        [d3 / 6.0, d2 / 2.0, dt],
    ];
    let mut q = Matrix6::zeros();
    for (base, intensity) in [(0, noise.sigma_ax2), (3, noise.sigma_ay2)] {
        let scale = intensity / dt;
        for r in 0..3 {
            for c in 0..3 {
                q[(base + r, base + c)] = block[r][c] * scale;
            }
        }
    }
    Ok(q)
}

/// Selects `(x, y)` from the state.
pub fn measurement_matrix() -> Matrix2x6<f64> {
    let mut h = Matrix2x6::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 3)] = 1.0;
    h
}

pub fn measurement_covariance(noise: &NoiseConfig) -> Matrix2<f64> {
    Matrix2::new(noise.sigma_x.powi(2), 0.0, 0.0, noise.sigma_y.powi(2))
}

pub fn simulate_measurement<R: Rng + ?Sized>(truth: &AircraftState, noise: &NoiseConfig, rng: &mut R) -> Measurement {
    let wx: f64 = rng.sample(StandardNormal);
    let wy: f64 = rng.sample(StandardNormal);
    Measurement {
        z: [truth.x + noise.sigma_x * wx, truth.y + noise.sigma_y * wy],
    }
}

pub fn symmetrize(m: &Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

/// Predicts one step and, when a measurement is given, applies the update.
pub fn kf_step(
    estimate: &KalmanEstimate,
    measurement: Option<&Measurement>,
    dt: f64,
    noise: &NoiseConfig,
) -> Result<KalmanEstimate> {
    let a = transition_matrix(dt)?;
    let q = process_noise(dt, noise)?;
    let mean = a * estimate.mean.to_vector();
    let covariance = symmetrize(&(a * estimate.covariance * a.transpose() + q));
    let Some(measurement) = measurement else {
        return Ok(KalmanEstimate::new(AircraftState::from_vector(&mean), covariance));
    };

    let h = measurement_matrix();
    let innovation_cov = h * covariance * h.transpose() + measurement_covariance(noise);
    let chol = innovation_cov.cholesky().ok_or(Error::SingularInnovation)?;
    // G = P H^T S^-1, computed as (S^-1 H P)^T since S and P are symmetric.
    let gain = chol.solve(&(h * covariance)).transpose();
    let residual = Vector2::new(measurement.z[0], measurement.z[1]) - h * mean;
    let mean = mean + gain * residual;
    let covariance = symmetrize(&((Matrix6::identity() - gain * h) * covariance));
    Ok(KalmanEstimate::new(AircraftState::from_vector(&mean), covariance))
}

/// Measurement counter: counts filter steps and fires every `period` steps,
/// the first time after `period` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementSchedule {
    period: usize,
    counter: usize,
}

impl MeasurementSchedule {
    /// `period = f / f_M`, which must be a positive integer.
    pub fn new(sample_rate: f64, measurement_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && measurement_rate > 0.0) {
            return Err(Error::InvalidConfig("rates must be positive".into()));
        }
        let ratio = sample_rate / measurement_rate;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "sample rate {sample_rate} Hz is not a multiple of measurement rate {measurement_rate} Hz"
            )));
        }
        Ok(Self {
            period: ratio.round() as usize,
            counter: 0,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    /// Advances one step; returns whether a measurement arrives on it.
    pub fn tick(&mut self) -> bool {
        let fire = self.counter == self.period;
        if fire {
            self.counter = 0;
        }
        self.counter += 1;
        fire
    }
}
