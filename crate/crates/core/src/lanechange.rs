//! Discretionary lateral moves: the straightforward space check, Gipps
//! feasibility with probabilistic gap acceptance, and the GHR-triggered
//! variant.
//!
//! Everything here is a pure decision over a [`LaneContext`]; the engine
//! gathers the context from strip occupancy and applies the shift.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::carfollow::{gipps_speed, FollowState, GippsParams};
use crate::rng::SimRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LaneChangeError {
    #[error("lambda must be positive, got {0}")]
    Lambda(f64),
    #[error("critical gap must be non-negative, got {0}")]
    CriticalGap(f64),
    #[error("GHR speed exponent m={0} outside [-2, 2]")]
    GhrM(f64),
    #[error("GHR headway exponent l={0} outside [-1, 4]")]
    GhrL(f64),
    #[error("GHR lag must be at least one step")]
    GhrLag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LaneChangingModel {
    Straightforward,
    Gipps,
    Ghr,
}

impl LaneChangingModel {
    pub fn name(self) -> &'static str {
        match self {
            LaneChangingModel::Straightforward => "straightforward",
            LaneChangingModel::Gipps => "gipps",
            LaneChangingModel::Ghr => "ghr",
        }
    }
}

impl fmt::Display for LaneChangingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LaneChangingModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "straightforward" | "straight-forward" | "naive" => Ok(LaneChangingModel::Straightforward),
            "gipps" => Ok(LaneChangingModel::Gipps),
            "ghr" => Ok(LaneChangingModel::Ghr),
            other => Err(format!("unknown lane-changing model '{other}'")),
        }
    }
}

/// Toward strip index 0 is `Left`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Stay,
    Shift(Side),
}

/// Speed and parameters of a driver taking part in a change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Driver {
    pub speed: f64,
    pub desired_speed: f64,
    pub gipps: GippsParams,
}

/// A vehicle ahead of (or behind) the subject, with the bumper-to-bumper
/// gap between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub gap: f64,
    pub speed: f64,
}

/// The follower in the target strips.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lag {
    /// Follower front to subject rear, m.
    pub gap: f64,
    pub driver: Driver,
}

/// What the subject would see after moving to one side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideView {
    /// Target strips exist and are unoccupied over the subject's extent.
    pub free: bool,
    pub lead: Option<Neighbor>,
    pub lag: Option<Lag>,
}

impl SideView {
    pub const BLOCKED: SideView = SideView {
        free: false,
        lead: None,
        lag: None,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneContext {
    pub subject: Driver,
    /// Car-following speed available this step without changing strips.
    pub achievable_speed: f64,
    pub leader: Option<Neighbor>,
    /// A slower leader closer than this triggers desire, m.
    pub proximity: f64,
    pub left: SideView,
    pub right: SideView,
    pub tau: f64,
}

impl LaneContext {
    fn side(&self, s: Side) -> &SideView {
        match s {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

/// Speeds below this count as "cannot move forward".
const BLOCKED_SPEED: f64 = 1e-9;

/// Wants to change when blocked, or when a slower leader is within the
/// proximity threshold.
pub fn desire_to_change(ctx: &LaneContext) -> bool {
    if ctx.achievable_speed <= BLOCKED_SPEED {
        return true;
    }
    match ctx.leader {
        Some(l) => l.speed < ctx.subject.speed && l.gap < ctx.proximity,
        None => false,
    }
}

/// Shift to the first side (left, then right) whose strips are free.
pub fn straightforward_change(ctx: &LaneContext) -> Decision {
    for s in [Side::Left, Side::Right] {
        if ctx.side(s).free {
            return Decision::Shift(s);
        }
    }
    Decision::Stay
}

/// Speed drop over one step, `v(t−1) − v(t)`.
pub fn implied_braking(v_prev: f64, v_now: f64) -> f64 {
    v_prev - v_now
}

/// Gipps speed of `driver` behind a leader `gap` meters ahead moving at
/// `leader_speed`.
fn gipps_behind(driver: &Driver, gap: f64, leader_speed: f64) -> f64 {
    let s = FollowState {
        position: 0.0,
        speed: driver.speed,
        max_accel: driver.gipps.max_accel,
        desired_speed: driver.desired_speed,
        leader_position: gap,
        leader_speed,
        leader_length: 0.0,
        tau: driver.gipps.reaction_time,
    };
    gipps_speed(&s, &driver.gipps).speed
}

/// Braking the subject would need behind the target leader, and braking the
/// target follower would need behind the subject. Either is zero when the
/// respective vehicle is absent.
pub fn side_brakings(subject: &Driver, view: &SideView) -> (f64, f64) {
    let subj = view
        .lead
        .map(|l| implied_braking(subject.speed, gipps_behind(subject, l.gap, l.speed)))
        .unwrap_or(0.0);
    let foll = view
        .lag
        .map(|l| implied_braking(l.driver.speed, gipps_behind(&l.driver, l.gap, subject.speed)))
        .unwrap_or(0.0);
    (subj, foll)
}

/// Both implied brakings must stay below the drivers' own maximum
/// desired braking per step.
pub fn change_feasible(subject: &Driver, view: &SideView) -> bool {
    if !view.free {
        return false;
    }
    if view.lead.is_some_and(|l| l.gap < 0.0) || view.lag.is_some_and(|l| l.gap < 0.0) {
        return false;
    }
    let (subj, foll) = side_brakings(subject, view);
    let subj_max = -subject.gipps.desired_braking * subject.gipps.reaction_time;
    let foll_ok = match view.lag {
        Some(l) => foll < -l.driver.gipps.desired_braking * l.driver.gipps.reaction_time,
        None => true,
    };
    subj < subj_max && foll_ok
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapAcceptanceParams {
    /// λ, 1/s
    pub lambda: f64,
    /// T, s
    pub critical_gap: f64,
}

impl GapAcceptanceParams {
    pub fn new(lambda: f64, critical_gap: f64) -> Result<Self, LaneChangeError> {
        if !(lambda > 0.0) {
            return Err(LaneChangeError::Lambda(lambda));
        }
        if !(critical_gap >= 0.0) {
            return Err(LaneChangeError::CriticalGap(critical_gap));
        }
        Ok(GapAcceptanceParams {
            lambda,
            critical_gap,
        })
    }
}

/// Time gap `g / v`. A stopped driver facing a positive gap sees an
/// infinite time gap; facing no gap, zero.
pub fn gap_time(gap: f64, speed: f64) -> f64 {
    if speed > 0.0 {
        gap / speed
    } else if gap > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// `1 − exp(−λ (t − T))` for `t > T`, else 0.
pub fn gap_probability(t_actual: f64, p: &GapAcceptanceParams) -> f64 {
    if t_actual > p.critical_gap {
        1.0 - (-p.lambda * (t_actual - p.critical_gap)).exp()
    } else {
        0.0
    }
}

pub fn joint_gap_probability(p_lead: f64, p_lag: f64) -> f64 {
    p_lead * p_lag
}

/// Acceptance probability of both gaps on one side. A missing neighbor
/// leaves an unbounded gap.
pub fn side_acceptance(subject: &Driver, view: &SideView, p: &GapAcceptanceParams) -> f64 {
    let p_lead = view
        .lead
        .map(|l| gap_probability(gap_time(l.gap, subject.speed), p))
        .unwrap_or(1.0);
    let p_lag = view
        .lag
        .map(|l| gap_probability(gap_time(l.gap, l.driver.speed), p))
        .unwrap_or(1.0);
    joint_gap_probability(p_lead, p_lag)
}

/// Feasibility gate, then a Bernoulli draw with the joint acceptance
/// probability. Left is evaluated before right.
pub fn gipps_change(ctx: &LaneContext, gap: &GapAcceptanceParams, rng: &mut SimRng) -> Decision {
    for s in [Side::Left, Side::Right] {
        let view = ctx.side(s);
        if !change_feasible(&ctx.subject, view) {
            continue;
        }
        let p = side_acceptance(&ctx.subject, view, gap);
        if p >= 1.0 || (p > 0.0 && rng.bernoulli(p)) {
            return Decision::Shift(s);
        }
    }
    Decision::Stay
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GhrParams {
    /// sensitivity c
    pub c: f64,
    /// speed exponent m ∈ [−2, 2]
    pub m: f64,
    /// headway exponent l ∈ [−1, 4]
    pub l: f64,
    /// lag T in whole steps
    pub lag_steps: usize,
}

impl GhrParams {
    pub fn new(c: f64, m: f64, l: f64, lag_steps: usize) -> Result<Self, LaneChangeError> {
        if !(-2.0..=2.0).contains(&m) {
            return Err(LaneChangeError::GhrM(m));
        }
        if !(-1.0..=4.0).contains(&l) {
            return Err(LaneChangeError::GhrL(l));
        }
        if lag_steps == 0 {
            return Err(LaneChangeError::GhrLag);
        }
        Ok(GhrParams { c, m, l, lag_steps })
    }
}

impl Default for GhrParams {
    fn default() -> Self {
        GhrParams {
            c: 15.0,
            m: 1.0,
            l: 2.0,
            lag_steps: 1,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("GHR trigger undefined (lagged headway {dx}, speed {v})")]
pub struct GhrSingular {
    pub dx: f64,
    pub v: f64,
}

/// `c · vᵐ · Δv / Δxˡ` on lagged leader differences. Used only for its
/// sign, as a desire trigger.
pub fn ghr_acceleration(v: f64, dv_lagged: f64, dx_lagged: f64, p: &GhrParams) -> Result<f64, GhrSingular> {
    if !(dx_lagged > 0.0) {
        return Err(GhrSingular { dx: dx_lagged, v });
    }
    if dv_lagged == 0.0 {
        return Ok(0.0);
    }
    let a = p.c * v.powf(p.m) * dv_lagged / dx_lagged.powf(p.l);
    if a.is_finite() {
        Ok(a)
    } else {
        Err(GhrSingular { dx: dx_lagged, v })
    }
}

/// Per-vehicle ring of leader differences `(Δv, Δx)`, one entry per step;
/// `None` when there was no leader.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GhrHistory {
    buf: VecDeque<Option<(f64, f64)>>,
}

impl GhrHistory {
    pub fn push(&mut self, entry: Option<(f64, f64)>, lag_steps: usize) {
        self.buf.push_back(entry);
        while self.buf.len() > lag_steps + 1 {
            self.buf.pop_front();
        }
    }

    /// The entry recorded `lag_steps` pushes ago, once that much history
    /// exists.
    pub fn lagged(&self, lag_steps: usize) -> Option<Option<(f64, f64)>> {
        if self.buf.len() > lag_steps {
            Some(self.buf[self.buf.len() - 1 - lag_steps])
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GhrOutcome {
    pub decision: Decision,
    pub singular: Option<GhrSingular>,
}

/// Desire when the lagged GHR response is negative; the change itself is
/// decided exactly as in [`gipps_change`].
pub fn ghr_change(
    ctx: &LaneContext,
    history: &GhrHistory,
    ghr: &GhrParams,
    gap: &GapAcceptanceParams,
    rng: &mut SimRng,
) -> GhrOutcome {
    let stay = GhrOutcome {
        decision: Decision::Stay,
        singular: None,
    };
    let Some(Some((dv, dx))) = history.lagged(ghr.lag_steps) else {
        return stay;
    };
    match ghr_acceleration(ctx.subject.speed, dv, dx, ghr) {
        Err(e) => GhrOutcome {
            decision: Decision::Stay,
            singular: Some(e),
        },
        Ok(a) if a < 0.0 => GhrOutcome {
            decision: gipps_change(ctx, gap, rng),
            singular: None,
        },
        Ok(_) => stay,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const GP: GippsParams = GippsParams {
        max_accel: 1.5,
        desired_braking: -3.0,
        expected_leader_braking: -3.0,
        reaction_time: 1.0,
    };

    fn driver(speed: f64) -> Driver {
        Driver {
            speed,
            desired_speed: 11.0,
            gipps: GP,
        }
    }

    fn ctx(achievable: f64, leader: Option<Neighbor>, left: SideView, right: SideView) -> LaneContext {
        LaneContext {
            subject: driver(8.0),
            achievable_speed: achievable,
            leader,
            proximity: 16.0,
            left,
            right,
            tau: 1.0,
        }
    }

    const OPEN: SideView = SideView {
        free: true,
        lead: None,
        lag: None,
    };

    #[test]
    fn desire_examples() {
        assert!(desire_to_change(&ctx(0.0, None, OPEN, OPEN)));
        assert!(!desire_to_change(&ctx(9.0, None, OPEN, OPEN)));
        let faster = Neighbor { gap: 30.0, speed: 10.0 };
        assert!(!desire_to_change(&ctx(9.0, Some(faster), OPEN, OPEN)));
        let slow_near = Neighbor { gap: 10.0, speed: 2.0 };
        assert!(desire_to_change(&ctx(9.0, Some(slow_near), OPEN, OPEN)));
        let slow_far = Neighbor { gap: 40.0, speed: 2.0 };
        assert!(!desire_to_change(&ctx(9.0, Some(slow_far), OPEN, OPEN)));
    }

    #[test]
    fn straightforward_examples() {
        let b = SideView::BLOCKED;
        assert_eq!(straightforward_change(&ctx(0.0, None, OPEN, b)), Decision::Shift(Side::Left));
        assert_eq!(straightforward_change(&ctx(0.0, None, b, b)), Decision::Stay);
        assert_eq!(straightforward_change(&ctx(0.0, None, b, OPEN)), Decision::Shift(Side::Right));
    }

    #[test]
    fn straightforward_tie_break_enumerated() {
        // every combination of side availability
        let b = SideView::BLOCKED;
        let cases = [
            (false, false, Decision::Stay),
            (true, false, Decision::Shift(Side::Left)),
            (false, true, Decision::Shift(Side::Right)),
            (true, true, Decision::Shift(Side::Left)),
        ];
        for (l, r, expect) in cases {
            let c = ctx(0.0, None, if l { OPEN } else { b }, if r { OPEN } else { b });
            assert_eq!(straightforward_change(&c), expect);
        }
    }

    #[test]
    fn implied_braking_examples() {
        assert_eq!(implied_braking(12.0, 12.0), 0.0);
        assert_eq!(implied_braking(12.0, 9.0), 3.0);
    }

    #[test]
    fn implied_braking_behind_hypothetical_leader() {
        // subject 10 m/s, target leader 6 m ahead at 4 m/s.
        // Scalar Gipps chain: v_acc = 10 + 2.5*1.5*(1-10/11)*sqrt(0.025+10/11),
        // v_brk = -3 + sqrt(9 + 3*(12 - 10 + 16/-3)).
        let subject = Driver { speed: 10.0, desired_speed: 11.0, gipps: GP };
        let view = SideView { free: true, lead: Some(Neighbor { gap: 6.0, speed: 4.0 }), lag: None };
        let v_acc: f64 = 10.0 + 2.5 * 1.5 * (1.0 - 10.0 / 11.0) * (0.025f64 + 10.0 / 11.0).sqrt();
        let v_brk: f64 = -3.0 + (9.0f64 + 3.0 * (12.0 - 10.0 - 16.0 / -3.0)).sqrt();
        let expect = 10.0 - v_acc.min(v_brk);
        let (b, f) = side_brakings(&subject, &view);
        assert_relative_eq!(b, expect, epsilon = 1e-12);
        assert_eq!(f, 0.0);
        // needs more than 3 m/s of braking in one step
        assert!(b > 3.0);
        assert!(!change_feasible(&subject, &view));
    }

    #[test]
    fn gap_probability_examples() {
        let p = GapAcceptanceParams::new(0.5, 1.0).unwrap();
        assert_eq!(gap_probability(1.0, &p), 0.0);
        assert_eq!(gap_probability(0.2, &p), 0.0);
        assert_relative_eq!(gap_probability(3.0, &p), 0.6321205588285577, epsilon = 1e-12);
        assert_eq!(gap_time(10.0, 0.0), f64::INFINITY);
        assert_eq!(gap_time(0.0, 0.0), 0.0);
        assert_eq!(gap_probability(gap_time(10.0, 0.0), &p), 1.0);
        assert!(GapAcceptanceParams::new(0.0, 1.0).is_err());
        assert!(GapAcceptanceParams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn joint_probability_examples() {
        assert_eq!(joint_gap_probability(0.5, 0.5), 0.25);
        assert_eq!(joint_gap_probability(0.0, 0.7), 0.0);
        let p = joint_gap_probability(1.0 - (-1.0f64).exp(), 1.0 - (-2.0f64).exp());
        assert_relative_eq!(p, 0.5465723439598089, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_follower_blocks_change() {
        // fast follower right behind the subject's rear
        let follower = Lag { gap: 0.5, driver: Driver { speed: 11.0, desired_speed: 11.0, gipps: GP } };
        let view = SideView { free: true, lead: None, lag: Some(follower) };
        let c = ctx(0.0, None, view, SideView::BLOCKED);
        let mut rng = SimRng::seed_from_u64(1);
        let p = GapAcceptanceParams::new(100.0, 0.0).unwrap();
        assert!(!change_feasible(&c.subject, &view));
        assert_eq!(gipps_change(&c, &p, &mut rng), Decision::Stay);
    }

    #[test]
    fn certain_acceptance_shifts() {
        let c = ctx(0.0, None, OPEN, OPEN);
        let mut rng = SimRng::seed_from_u64(1);
        let p = GapAcceptanceParams::new(1.0, 1.0).unwrap();
        assert_eq!(gipps_change(&c, &p, &mut rng), Decision::Shift(Side::Left));
    }

    #[test]
    fn ghr_examples() {
        let p = GhrParams::default();
        assert_eq!(ghr_acceleration(10.0, 0.0, 20.0, &p).unwrap(), 0.0);
        assert_relative_eq!(ghr_acceleration(10.0, -2.0, 20.0, &p).unwrap(), -0.75, epsilon = 1e-12);
        assert!(ghr_acceleration(10.0, 2.0, 20.0, &p).unwrap() > 0.0);
        assert!(ghr_acceleration(10.0, 2.0, 0.0, &p).is_err());
        assert!(GhrParams::new(15.0, 3.0, 2.0, 1).is_err());
        assert!(GhrParams::new(15.0, 1.0, 5.0, 1).is_err());
    }

    #[test]
    fn ghr_change_gates() {
        let p = GhrParams::default();
        let gap = GapAcceptanceParams::new(1.0, 0.0).unwrap();
        let mut rng = SimRng::seed_from_u64(5);
        let c = ctx(3.0, Some(Neighbor { gap: 20.0, speed: 6.0 }), OPEN, OPEN);

        let mut h = GhrHistory::default();
        h.push(Some((-2.0, 20.0)), 1);
        // not warm yet
        assert_eq!(ghr_change(&c, &h, &p, &gap, &mut rng).decision, Decision::Stay);
        h.push(Some((0.0, 20.0)), 1);
        // lagged entry has Δv = -2: desire, open sides: shift
        assert_eq!(ghr_change(&c, &h, &p, &gap, &mut rng).decision, Decision::Shift(Side::Left));
        h.push(Some((1.0, 20.0)), 1);
        // lagged Δv = 0: stay
        assert_eq!(ghr_change(&c, &h, &p, &gap, &mut rng).decision, Decision::Stay);

        let mut h = GhrHistory::default();
        h.push(Some((-2.0, 20.0)), 1);
        h.push(None, 1);
        let blocked = ctx(3.0, None, SideView::BLOCKED, SideView::BLOCKED);
        assert_eq!(ghr_change(&blocked, &h, &p, &gap, &mut rng).decision, Decision::Stay);

        let mut h = GhrHistory::default();
        h.push(Some((-2.0, 0.0)), 1);
        h.push(None, 1);
        let out = ghr_change(&c, &h, &p, &gap, &mut rng);
        assert_eq!(out.decision, Decision::Stay);
        assert!(out.singular.is_some());
    }

    #[test]
    fn gipps_shift_frequency_matches_joint_probability() {
        // lead and lag gaps each accepted with probability 0.5 -> joint 0.25
        let lam = 2f64.ln();
        let gap = GapAcceptanceParams::new(lam, 1.0).unwrap();
        let subject = Driver { speed: 5.0, desired_speed: 11.0, gipps: GP };
        let follower = Driver { speed: 5.0, desired_speed: 11.0, gipps: GP };
        let view = SideView {
            free: true,
            lead: Some(Neighbor { gap: 10.0, speed: 5.0 }),
            lag: Some(Lag { gap: 10.0, driver: follower }),
        };
        let mut c = ctx(0.0, None, view, SideView::BLOCKED);
        c.subject = subject;
        assert!(change_feasible(&subject, &view));
        assert_relative_eq!(side_acceptance(&subject, &view, &gap), 0.25, epsilon = 1e-12);
        let mut rng = SimRng::seed_from_u64(99);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| gipps_change(&c, &gap, &mut rng) == Decision::Shift(Side::Left))
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.25).abs() <= 0.01, "{freq}");
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gap_probability_monotone(t1 in 0.0f64..50.0, dt in 0.0f64..10.0, lam in 0.01f64..5.0, dl in 0.0f64..5.0, crit in 0.0f64..5.0) {
                let p = GapAcceptanceParams::new(lam, crit).unwrap();
                let q = GapAcceptanceParams::new(lam + dl, crit).unwrap();
                let a = gap_probability(t1, &p);
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!(gap_probability(t1 + dt, &p) >= a);
                prop_assert!(gap_probability(t1, &q) >= a);
            }

            #[test]
            fn gap_probability_continuous_at_threshold(lam in 0.01f64..5.0, crit in 0.0f64..5.0) {
                let p = GapAcceptanceParams::new(lam, crit).unwrap();
                prop_assert!(gap_probability(crit + 1e-9, &p) < 1e-7);
            }

            #[test]
            fn ghr_sign_follows_speed_difference(c in 0.1f64..30.0, m in -2.0f64..2.0, l in 0.0f64..4.0,
                                                 v in 0.1f64..30.0, dv in -10.0f64..10.0, dx in 0.5f64..200.0) {
                let p = GhrParams::new(c, m, l, 1).unwrap();
                let a = ghr_acceleration(v, dv, dx, &p).unwrap();
                prop_assert_eq!(a.partial_cmp(&0.0), dv.partial_cmp(&0.0));
            }
        }
    }
}
