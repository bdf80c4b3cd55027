//! Longitudinal speed update: Newtonian hard braking, Gipps, and the
//! hybrid of the two.
//!
//! Positions are front-bumper offsets along the link. The gap to the
//! leader is `leader_position - leader_length - position`.

use std::fmt;
use std::str::FromStr;

/// Kinematic snapshot of a follower and its leader for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowState {
    /// x_n, m
    pub position: f64,
    /// v_n, m/s
    pub speed: f64,
    /// a_n used by the Newtonian accelerating branch, m/s²
    pub max_accel: f64,
    /// v_n^d, m/s
    pub desired_speed: f64,
    /// x_{n-1}, m
    pub leader_position: f64,
    /// v_{n-1}, m/s
    pub leader_speed: f64,
    /// s_{n-1}: effective leader length, m
    pub leader_length: f64,
    /// τ, s
    pub tau: f64,
}

/// Gipps driver parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GippsParams {
    /// a_n > 0
    pub max_accel: f64,
    /// b_n < 0
    pub desired_braking: f64,
    /// b̂ < 0
    pub expected_leader_braking: f64,
    /// τ > 0
    pub reaction_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CarFollowingModel {
    Newtonian,
    Gipps,
    Hybrid,
}

impl CarFollowingModel {
    pub fn name(self) -> &'static str {
        match self {
            CarFollowingModel::Newtonian => "newtonian",
            CarFollowingModel::Gipps => "gipps",
            CarFollowingModel::Hybrid => "hybrid",
        }
    }

    /// True for the models that never let a follower pass its leader's rear.
    pub fn is_collision_free(self) -> bool {
        !matches!(self, CarFollowingModel::Gipps)
    }

    pub fn speed(self, state: &FollowState, params: &GippsParams) -> SpeedOutcome {
        match self {
            CarFollowingModel::Newtonian => SpeedOutcome::plain(newtonian_speed(state)),
            CarFollowingModel::Gipps => gipps_speed(state, params),
            CarFollowingModel::Hybrid => hybrid_speed(state, params),
        }
    }
}

impl fmt::Display for CarFollowingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CarFollowingModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "newtonian" => Ok(CarFollowingModel::Newtonian),
            "gipps" => Ok(CarFollowingModel::Gipps),
            "hybrid" => Ok(CarFollowingModel::Hybrid),
            other => Err(format!("unknown car-following model '{other}'")),
        }
    }
}

/// A computed speed plus whether the Gipps braking radicand went negative
/// (the speed is then an emergency 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedOutcome {
    pub speed: f64,
    pub negative_discriminant: bool,
}

impl SpeedOutcome {
    fn plain(speed: f64) -> Self {
        SpeedOutcome {
            speed,
            negative_discriminant: false,
        }
    }
}

/// Δx = x_{n−1} − s_{n−1} − x_n. Negative means the two overlap.
pub fn safe_gap(state: &FollowState) -> f64 {
    state.leader_position - state.leader_length - state.position
}

fn clamp_speed(v: f64, desired: f64) -> f64 {
    if v.is_nan() {
        return 0.0;
    }
    v.clamp(0.0, desired.max(0.0))
}

/// Accelerate by a_n·τ (capped at the desired speed) if that speed covers
/// no more than the gap in one step; otherwise brake to Δx/τ.
pub fn newtonian_speed(state: &FollowState) -> f64 {
    let gap = safe_gap(state);
    let accelerated = (state.speed + state.max_accel * state.tau).min(state.desired_speed);
    let v = if accelerated * state.tau <= gap {
        accelerated
    } else {
        gap / state.tau
    };
    clamp_speed(v, state.desired_speed)
}

/// Gipps (1981): the smaller of the free-acceleration and safe-braking
/// speeds.
///
/// ```text
/// v_acc = v + 2.5 a τ (1 − v/V) √(0.025 + v/V)
/// v_brk = b τ + √( b²τ² − b [ 2Δx − v τ − v_l² / b̂ ] )
/// ```
///
/// A negative radicand (possible after an overlap) yields 0 with the
/// event flag set. No collision avoidance beyond the formula itself.
pub fn gipps_speed(state: &FollowState, p: &GippsParams) -> SpeedOutcome {
    let v = state.speed;
    let vd = state.desired_speed;
    let tau = p.reaction_time;
    let gap = safe_gap(state);

    let ratio = v / vd;
    let v_acc = v + 2.5 * p.max_accel * tau * (1.0 - ratio) * (0.025 + ratio).max(0.0).sqrt();

    let b = p.desired_braking;
    let radicand = b * b * tau * tau
        - b * (2.0 * gap - v * tau - state.leader_speed * state.leader_speed / p.expected_leader_braking);
    if radicand < 0.0 {
        return SpeedOutcome {
            speed: 0.0,
            negative_discriminant: true,
        };
    }
    let v_brk = b * tau + radicand.sqrt();
    SpeedOutcome::plain(clamp_speed(v_acc.min(v_brk), vd))
}

/// Gipps speed, overridden by hard braking Δx/τ whenever the Gipps speed
/// would carry the front past the leader's rear within this step.
pub fn hybrid_speed(state: &FollowState, p: &GippsParams) -> SpeedOutcome {
    let gipps = gipps_speed(state, p);
    let gap = safe_gap(state);
    let leader_rear = state.leader_position - state.leader_length;
    if state.position + gipps.speed * state.tau > leader_rear {
        SpeedOutcome {
            speed: clamp_speed(gap / state.tau, state.desired_speed),
            negative_discriminant: gipps.negative_discriminant,
        }
    } else {
        gipps
    }
}

/// New position and acceleration after moving at `new_speed` for one step.
///
/// The recorded acceleration is the model constant while speeding up and
/// the realized speed difference otherwise.
pub fn advance(state: &FollowState, new_speed: f64) -> (f64, f64) {
    debug_assert!(new_speed >= 0.0);
    let position = state.position + new_speed * state.tau;
    let accel = if new_speed > state.speed {
        state.max_accel
    } else {
        (new_speed - state.speed) / state.tau
    };
    (position, accel)
}
