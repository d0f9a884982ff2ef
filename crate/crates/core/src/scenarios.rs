//! Engagement geometries between an observer and an intruder.
//!
//! Positions are laid out in the observer's track frame: the observer starts
//! at the origin, "along" points down its heading and "lateral" is 90 degrees
//! to the left of it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate, sin_cos_degrees, step_count, min_distance, AircraftState, Approach};
use crate::error::{Error, Result};
use crate::tracking::{InitialCovariance, MeasurementSchedule, NoiseConfig};

/// Meters per second in one knot.
pub const KNOT: f64 = 1852.0 / 3600.0;
/// 500 ft.
pub const PROTECTED_RADIUS: f64 = 152.4;

pub fn knots(kn: f64) -> f64 {
    kn * KNOT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    HeadOn,
    Overtaking,
    Converging,
}

fn default_true() -> bool {
    true
}

/// One engagement, serialized as flat JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Lateral offset between the tracks (m). For converging geometry it is
    /// an extra along-track distance that delays the intruder's arrival at
    /// the crossing point.
    pub lateral_separation: f64,
    /// Along-track separation (m); for converging geometry, the observer's
    /// distance to the crossing point.
    pub longitudinal_separation: f64,
    pub observer_speed: f64,
    pub intruder_speed: f64,
    /// Degrees counter-clockwise from +x.
    pub observer_heading: f64,
    pub intruder_heading: f64,
    /// Simulated period (s).
    pub duration: f64,
    /// Prediction horizon of each conflict query (s).
    pub horizon: f64,
    /// Propagation rate `f` (Hz).
    pub sample_rate: f64,
    /// Measurement rate `f_M` (Hz).
    pub measurement_rate: f64,
    pub protected_radius: f64,
    #[serde(flatten)]
    pub noise: NoiseConfig,
    /// Angle between tracks (degrees), converging geometry only.
    #[serde(default)]
    pub converging_angle: Option<f64>,
    /// Start the filter on the exact truth instead of a noisy position fix.
    #[serde(default)]
    pub perfect_init: bool,
    #[serde(flatten)]
    pub initial_covariance: InitialCovariance,
    /// Run the Direct Monte Carlo comparison at every step.
    #[serde(default = "default_true")]
    pub run_dmc: bool,
}

/// Optional replacements for a preset's defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub observer_speed: Option<f64>,
    pub intruder_speed: Option<f64>,
    pub duration: Option<f64>,
    pub horizon: Option<f64>,
    pub sample_rate: Option<f64>,
    pub measurement_rate: Option<f64>,
    pub protected_radius: Option<f64>,
    pub noise: Option<NoiseConfig>,
    pub perfect_init: Option<bool>,
}

impl ScenarioSpec {
    fn base(kind: ScenarioKind, lateral: f64, longitudinal: f64, observer_speed: f64, intruder_speed: f64) -> Self {
        Self {
            kind,
            lateral_separation: lateral,
            longitudinal_separation: longitudinal,
            observer_speed,
            intruder_speed,
            observer_heading: 0.0,
            intruder_heading: 180.0,
            duration: 20.0,
            horizon: 20.0,
            sample_rate: 20.0,
            measurement_rate: 2.0,
            protected_radius: PROTECTED_RADIUS,
            noise: NoiseConfig::default(),
            converging_angle: None,
            perfect_init: false,
            initial_covariance: InitialCovariance::default(),
            run_dmc: true,
        }
    }

    fn apply(mut self, o: &Overrides) -> Self {
        if let Some(v) = o.observer_speed {
            self.observer_speed = v;
        }
        if let Some(v) = o.intruder_speed {
            self.intruder_speed = v;
        }
        if let Some(v) = o.duration {
            self.duration = v;
            if o.horizon.is_none() {
                self.horizon = v;
            }
        }
        if let Some(v) = o.horizon {
            self.horizon = v;
        }
        if let Some(v) = o.sample_rate {
            self.sample_rate = v;
        }
        if let Some(v) = o.measurement_rate {
            self.measurement_rate = v;
        }
        if let Some(v) = o.protected_radius {
            self.protected_radius = v;
        }
        if let Some(v) = o.noise {
            self.noise = v;
        }
        if let Some(v) = o.perfect_init {
            self.perfect_init = v;
        }
        self
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: Self = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_lateral_separation(mut self, lateral: f64) -> Result<Self> {
        self.lateral_separation = lateral;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.lateral_separation,
            self.longitudinal_separation,
            self.observer_speed,
            self.intruder_speed,
            self.observer_heading,
            self.intruder_heading,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("scenario parameters must be finite".into()));
        }
        if self.lateral_separation < 0.0 || self.longitudinal_separation < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "separations must be >= 0, got lateral {} and longitudinal {}",
                self.lateral_separation, self.longitudinal_separation
            )));
        }
        if !(self.observer_speed > 0.0 && self.intruder_speed > 0.0) {
            return Err(Error::InvalidConfig("speeds must be positive".into()));
        }
        if !(self.protected_radius > 0.0 && self.protected_radius.is_finite()) {
            return Err(Error::InvalidConfig("protected radius must be positive".into()));
        }
        step_count(self.sample_rate, self.duration).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        step_count(self.sample_rate, self.horizon).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        MeasurementSchedule::new(self.sample_rate, self.measurement_rate)?;
        self.noise.validate()?;
        let ic = &self.initial_covariance;
        if [ic.position_std, ic.velocity_std, ic.acceleration_std]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidConfig("initial standard deviations must be >= 0".into()));
        }
        match (self.kind, self.converging_angle) {
            (ScenarioKind::Converging, Some(angle)) => {
                if !(angle > 0.0 && angle < 180.0) {
                    return Err(Error::InvalidConfig(format!(
                        "converging angle must lie in (0, 180), got {angle}"
                    )));
                }
                let expected = (self.observer_heading + angle).rem_euclid(360.0);
                let gap = (self.intruder_heading.rem_euclid(360.0) - expected).abs();
                if gap > 1e-9 && (360.0 - gap) > 1e-9 {
                    return Err(Error::InvalidConfig(format!(
                        "intruder heading {} disagrees with observer heading {} + angle {angle}",
                        self.intruder_heading, self.observer_heading
                    )));
                }
            }
            (ScenarioKind::Converging, None) => {
                return Err(Error::InvalidConfig("converging scenario needs converging_angle".into()));
            }
            (_, Some(_)) => {
                return Err(Error::InvalidConfig(
                    "converging_angle only applies to converging scenarios".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        step_count(self.sample_rate, self.duration).unwrap_or(0)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    fn track_axes(&self) -> ([f64; 2], [f64; 2]) {
        let (s, c) = sin_cos_degrees(self.observer_heading);
        ([c, s], [-s, c])
    }

    pub fn observer_initial(&self) -> AircraftState {
        AircraftState::moving(0.0, 0.0, self.observer_speed, self.observer_heading)
    }

    pub fn intruder_initial(&self) -> AircraftState {
        let (along, lateral) = self.track_axes();
        let (l_a, l_o) = (self.lateral_separation, self.longitudinal_separation);
        let position = match self.kind {
            ScenarioKind::HeadOn => [l_o * along[0] + l_a * lateral[0], l_o * along[1] + l_a * lateral[1]],
            ScenarioKind::Overtaking => [-l_o * along[0] + l_a * lateral[0], -l_o * along[1] + l_a * lateral[1]],
            ScenarioKind::Converging => {
                let crossing = [l_o * along[0], l_o * along[1]];
                let to_crossing = self.intruder_speed * l_o / self.observer_speed + l_a;
                let (s, c) = sin_cos_degrees(self.intruder_heading);
                [crossing[0] - to_crossing * c, crossing[1] - to_crossing * s]
            }
        };
        AircraftState::moving(position[0], position[1], self.intruder_speed, self.intruder_heading)
    }

    /// Closest approach of the noiseless tracks over the whole period.
    pub fn true_approach(&self) -> Result<Approach> {
        let o = propagate(&self.observer_initial(), self.sample_rate, self.duration)?;
        let i = propagate(&self.intruder_initial(), self.sample_rate, self.duration)?;
        min_distance(&o, &i)
    }
}

/// Observer heading 0, intruder heading 180, both at 150 kn.
pub fn build_head_on(lateral: f64, longitudinal: f64, overrides: &Overrides) -> Result<ScenarioSpec> {
    let spec = ScenarioSpec::base(ScenarioKind::HeadOn, lateral, longitudinal, knots(150.0), knots(150.0)).apply(overrides);
    spec.validate()?;
    Ok(spec)
}

/// Both heading 180; the 300 kn intruder starts `longitudinal` behind the
/// 150 kn observer.
pub fn build_overtaking(lateral: f64, longitudinal: f64, overrides: &Overrides) -> Result<ScenarioSpec> {
    let mut spec = ScenarioSpec::base(ScenarioKind::Overtaking, lateral, longitudinal, knots(150.0), knots(300.0));
    spec.observer_heading = 180.0;
    let spec = spec.apply(overrides);
    spec.validate()?;
    Ok(spec)
}

/// Intruder track rotated by `angle` from the observer's, crossing it
/// `longitudinal` ahead of the observer. With `lateral = 0` both reach the
/// crossing point at the same time.
pub fn build_converging(angle: f64, lateral: f64, longitudinal: f64, overrides: &Overrides) -> Result<ScenarioSpec> {
    let mut spec = ScenarioSpec::base(ScenarioKind::Converging, lateral, longitudinal, knots(150.0), knots(150.0));
    spec.intruder_heading = angle;
    spec.converging_angle = Some(angle);
    let spec = spec.apply(overrides);
    spec.validate()?;
    Ok(spec)
}
