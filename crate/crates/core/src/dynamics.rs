//! Nearly-constant-acceleration point-mass kinematics in the horizontal plane.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar position `[x, y]` in meters.
pub type Position = [f64; 2];

/// Kinematic state ordered `[x, u, a_x, y, v, a_y]` (m, m/s, m/s^2).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AircraftState {
    pub x: f64,
    pub u: f64,
    pub a_x: f64,
    pub y: f64,
    pub v: f64,
    pub a_y: f64,
}

impl AircraftState {
    pub const fn new(x: f64, u: f64, a_x: f64, y: f64, v: f64, a_y: f64) -> Self {
        Self { x, u, a_x, y, v, a_y }
    }

    /// Unaccelerated state at `(x, y)` moving at `speed` along `heading_deg`,
    /// measured counter-clockwise from the +x axis.
    pub fn moving(x: f64, y: f64, speed: f64, heading_deg: f64) -> Self {
        let (sin, cos) = sin_cos_degrees(heading_deg);
        Self::new(x, speed * cos, 0.0, y, speed * sin, 0.0)
    }

    pub fn position(&self) -> Position {
        [self.x, self.y]
    }

    pub fn speed(&self) -> f64 {
        self.u.hypot(self.v)
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.x, self.u, self.a_x, self.y, self.v, self.a_y)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }

    /// One constant-acceleration step; equal to `transition_matrix(dt) * self`.
    pub fn step(&self, dt: f64) -> Self {
        let half_dt2 = 0.5 * dt * dt;
        Self {
            x: self.x + dt * self.u + half_dt2 * self.a_x,
            u: self.u + dt * self.a_x,
            a_x: self.a_x,
            y: self.y + dt * self.v + half_dt2 * self.a_y,
            v: self.v + dt * self.a_y,
            a_y: self.a_y,
        }
    }
}

/// Sine and cosine of an angle in degrees, exact at multiples of 90.
pub fn sin_cos_degrees(deg: f64) -> (f64, f64) {
    let reduced = deg.rem_euclid(360.0);
    if reduced == 0.0 {
        (0.0, 1.0)
    } else if reduced == 90.0 {
        (1.0, 0.0)
    } else if reduced == 180.0 {
        (0.0, -1.0)
    } else if reduced == 270.0 {
        (-1.0, 0.0)
    } else {
        reduced.to_radians().sin_cos()
    }
}

pub fn planar_distance(a: &Position, b: &Position) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

/// Per-axis blocks `[[1, dt, dt^2/2], [0, 1, dt], [0, 0, 1]]`.
pub fn transition_matrix(dt: f64) -> Result<Matrix6<f64>> {
    check_dt(dt)?;
    let mut a = Matrix6::identity();
    for base in [0, 3] {
        a[(base, base + 1)] = dt;
        a[(base, base + 2)] = 0.5 * dt * dt;
        a[(base + 1, base + 2)] = dt;
    }
    Ok(a)
}

/// Number of steps `t * f`, which must be a positive integer.
pub fn step_count(sample_rate: f64, horizon: f64) -> Result<usize> {
    if !(sample_rate > 0.0 && horizon > 0.0 && sample_rate.is_finite() && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sample rate and horizon must be positive, got {sample_rate} Hz, {horizon} s"
        )));
    }
    let steps = sample_rate * horizon;
    if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "horizon {horizon} s at {sample_rate} Hz is not a whole number of steps"
        )));
    }
    Ok(steps.round() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    /// States at `k = 0..=t*f`.
    pub states: Vec<AircraftState>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Propagates `initial` for `t * f` steps of `1 / f` seconds.
pub fn propagate(initial: &AircraftState, sample_rate: f64, horizon: f64) -> Result<Trajectory> {
    let steps = step_count(sample_rate, horizon)?;
    let dt = 1.0 / sample_rate;
    let mut states = Vec::with_capacity(steps + 1);
    let mut state = *initial;
    states.push(state);
    for _ in 0..steps {
        state = state.step(dt);
        states.push(state);
    }
    Ok(Trajectory { states, dt })
}

/// Closest point of approach on the shared time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Approach {
    pub miss_distance: f64,
    pub observer_point: Position,
    pub intruder_point: Position,
    pub step_index: usize,
}

/// Minimum pointwise planar distance; ties go to the earliest index.
pub fn min_distance(observer: &Trajectory, intruder: &Trajectory) -> Result<Approach> {
    if observer.len() != intruder.len() || observer.is_empty() {
        return Err(Error::InvalidInput(format!(
            "trajectories must be non-empty and of equal length, got {} and {}",
            observer.len(),
            intruder.len()
        )));
    }
    if observer.dt != intruder.dt {
        return Err(Error::InvalidInput(format!(
            "trajectory time steps differ: {} vs {}",
            observer.dt, intruder.dt
        )));
    }
    let mut best = approach_at(observer, &intruder.states[0], 0);
    for (k, state) in intruder.states.iter().enumerate().skip(1) {
        let candidate = approach_at(observer, state, k);
        if candidate.miss_distance < best.miss_distance {
            best = candidate;
        }
    }
    Ok(best)
}

fn approach_at(observer: &Trajectory, intruder: &AircraftState, k: usize) -> Approach {
    let observer_point = observer.states[k].position();
    let intruder_point = intruder.position();
    Approach {
        miss_distance: planar_distance(&observer_point, &intruder_point),
        observer_point,
        intruder_point,
        step_index: k,
    }
}

/// Closest approach of an intruder propagated from `initial` against the
/// observer trajectory, without storing the intruder trajectory. Identical to
/// `min_distance(observer, &propagate(initial, ..))`.
pub fn closest_approach(observer: &Trajectory, initial: &AircraftState) -> Approach {
    let mut state = *initial;
    let mut best = approach_at(observer, &state, 0);
    for k in 1..observer.len() {
        state = state.step(observer.dt);
        let candidate = approach_at(observer, &state, k);
        if candidate.miss_distance < best.miss_distance {
            best = candidate;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_rows() {
        let a = transition_matrix(1.0).unwrap();
        assert_eq!(a.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 0.5, 0.0, 0.0, 0.0]);
        assert!((transition_matrix(1e-12).unwrap() - Matrix6::identity()).abs().max() < 1e-11);
        let dt = 0.05;
        let two = transition_matrix(2.0 * dt).unwrap();
        let sq = transition_matrix(dt).unwrap() * transition_matrix(dt).unwrap();
        assert!((two - sq).abs().max() < 1e-14);
        assert!(transition_matrix(0.0).is_err());
        assert!(transition_matrix(-1.0).is_err());
    }

    #[test]
    fn step_matches_matrix() {
        let s = AircraftState::new(1.0, -2.0, 0.3, 4.0, 5.0, -0.6);
        let by_matrix = AircraftState::from_vector(&(transition_matrix(0.05).unwrap() * s.to_vector()));
        let by_step = s.step(0.05);
        assert!((by_matrix.to_vector() - by_step.to_vector()).abs().max() < 1e-12);
    }

    #[test]
    fn propagation_closed_forms() {
        let still = AircraftState::new(5.0, 0.0, 0.0, -3.0, 0.0, 0.0);
        let j = propagate(&still, 20.0, 20.0).unwrap();
        assert_eq!(j.len(), 401);
        assert!(j.states.iter().all(|s| *s == still));

        let cruise = AircraftState::new(10.0, 77.2, 0.0, 0.0, 0.0, 0.0);
        let j = propagate(&cruise, 20.0, 20.0).unwrap();
        assert!((j.states[400].x - (10.0 + 1544.0)).abs() < 1e-9);

        let accel = AircraftState::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let j = propagate(&accel, 20.0, 20.0).unwrap();
        assert!((j.states[400].x - 200.0).abs() < 1e-9);
        assert!(j.states.iter().all(|s| s.a_x == 1.0 && s.a_y == 0.0));

        assert!(propagate(&still, 20.0, 0.025).is_err());
        assert!(propagate(&still, 20.0, 0.0).is_err());
    }

    #[test]
    fn headings() {
        let s = AircraftState::moving(2000.0, 1000.0, 77.2, 180.0);
        assert_eq!(s, AircraftState::new(2000.0, -77.2, 0.0, 1000.0, 0.0, 0.0));
        let s = AircraftState::moving(0.0, 0.0, 10.0, 45.0);
        assert!((s.u - s.v).abs() < 1e-12 && (s.speed() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_offset() {
        let o = propagate(&AircraftState::moving(0.0, 0.0, 50.0, 0.0), 10.0, 5.0).unwrap();
        let i = propagate(&AircraftState::moving(0.0, 100.0, 50.0, 0.0), 10.0, 5.0).unwrap();
        let a = min_distance(&o, &i).unwrap();
        assert!((a.miss_distance - 100.0).abs() < 1e-9);
        assert_eq!(a.step_index, 0);
    }

    #[test]
    fn identical_trajectories_tie_at_zero() {
        let o = propagate(&AircraftState::moving(1.0, 2.0, 30.0, 10.0), 10.0, 3.0).unwrap();
        let a = min_distance(&o, &o).unwrap();
        assert_eq!(a.miss_distance, 0.0);
        assert_eq!(a.step_index, 0);
    }

    #[test]
    fn head_on_crossing() {
        let speed = 77.17;
        let o = propagate(&AircraftState::moving(0.0, 0.0, speed, 0.0), 20.0, 20.0).unwrap();
        let i = propagate(&AircraftState::moving(2000.0, 0.0, speed, 180.0), 20.0, 20.0).unwrap();
        let a = min_distance(&o, &i).unwrap();
        assert!(a.miss_distance <= 2.0 * speed * 0.05 / 2.0 + 1e-9);
        let crossing = 2000.0 / (2.0 * speed);
        assert!((a.step_index as f64 * 0.05 - crossing).abs() <= 0.05);
    }

    #[test]
    fn streaming_matches_stored() {
        let o = propagate(&AircraftState::moving(0.0, 0.0, 77.17, 0.0), 20.0, 20.0).unwrap();
        let start = AircraftState::new(2000.0, -70.0, 0.3, 150.0, 1.0, -0.2);
        let i = propagate(&start, 20.0, 20.0).unwrap();
        assert_eq!(min_distance(&o, &i).unwrap(), closest_approach(&o, &start));
        let swapped = min_distance(&i, &o).unwrap();
        assert_eq!(swapped.miss_distance, closest_approach(&o, &start).miss_distance);
    }

    #[test]
    fn length_mismatch() {
        let o = propagate(&AircraftState::default(), 10.0, 2.0).unwrap();
        let i = propagate(&AircraftState::default(), 10.0, 3.0).unwrap();
        assert!(min_distance(&o, &i).is_err());
    }
}
