//! Unicycle poses, leader reference signals and the error coordinates.
//!
//! Each robot obeys `x' = v cos(theta)`, `y' = v sin(theta)`, `theta' = omega`.
//! Positions are rotated into the robot's own heading frame,
//! `x~ = cos(theta) x + sin(theta) y`, `y~ = -sin(theta) x + cos(theta) y`,
//! and the follower errors are differences of rotated coordinates relative to
//! the leader. Headings stay unwrapped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::Rk4;

/// Planar pose; `theta` is an unwrapped real angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

impl From<[f64; 3]> for Pose {
    fn from(v: [f64; 3]) -> Self {
        Pose::new(v[0], v[1], v[2])
    }
}

impl From<Pose> for [f64; 3] {
    fn from(p: Pose) -> Self {
        [p.x, p.y, p.theta]
    }
}

/// Rotates a position into the body frame of heading `pose.theta`.
pub fn rotate_to_body(pose: &Pose) -> (f64, f64) {
    let (s, c) = pose.theta.sin_cos();
    (c * pose.x + s * pose.y, -s * pose.x + c * pose.y)
}

/// Inverse of [`rotate_to_body`].
pub fn rotate_from_body(x_tilde: f64, y_tilde: f64, theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (c * x_tilde - s * y_tilde, s * x_tilde + c * y_tilde)
}

/// One scalar reference signal with its analytic time derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `offset + scale / sqrt(rate * t + shift)`.
    InverseSqrt {
        offset: f64,
        scale: f64,
        rate: f64,
        shift: f64,
    },
    /// `offset + amplitude * sin(frequency * t + phase)`.
    Sinusoid {
        offset: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Profile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::InverseSqrt {
                offset,
                scale,
                rate,
                shift,
            } => offset + scale / (rate * t + shift).sqrt(),
            Profile::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => offset + amplitude * (frequency * t + phase).sin(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Profile::Constant { .. } => 0.0,
            Profile::InverseSqrt {
                scale, rate, shift, ..
            } => -0.5 * scale * rate * (rate * t + shift).powf(-1.5),
            Profile::Sinusoid {
                amplitude,
                frequency,
                phase,
                ..
            } => amplitude * frequency * (frequency * t + phase).cos(),
        }
    }

    /// Analytic upper bounds on `sup |f|` and `sup |f'|` over `[0, horizon]`.
    pub fn analytic_bounds(&self, horizon: f64) -> (f64, f64) {
        match *self {
            Profile::Constant { value } => (value.abs(), 0.0),
            Profile::InverseSqrt { rate, .. } => {
                // monotone in t, so the extremes sit at the interval ends;
                // |f'| decays, so it peaks at t = 0
                let ends = [self.value(0.0), self.value(horizon)];
                let sup_f = ends.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                let sup_df = if rate == 0.0 {
                    0.0
                } else {
                    self.derivative(0.0).abs()
                };
                (sup_f, sup_df)
            }
            Profile::Sinusoid {
                offset,
                amplitude,
                frequency,
                ..
            } => (
                offset.abs() + amplitude.abs(),
                (amplitude * frequency).abs(),
            ),
        }
    }

    fn validate(&self, name: &'static str) -> Result<()> {
        let ok = match *self {
            Profile::Constant { value } => value.is_finite(),
            Profile::InverseSqrt {
                offset,
                scale,
                rate,
                shift,
            } => {
                offset.is_finite() && scale.is_finite() && rate >= 0.0 && rate.is_finite() && shift > 0.0
            }
            Profile::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => offset.is_finite() && amplitude.is_finite() && frequency.is_finite() && phase.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter {
                name,
                reason: format!("invalid profile parameters {self:?}"),
            })
        }
    }
}

/// Leader angular and linear velocity together with the excitation data
/// `(T, mu)` and the bound `omega_bar`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderSignal {
    pub omega: Profile,
    pub velocity: Profile,
    /// Excitation window `T` in seconds.
    pub pe_window: f64,
    /// Declared excitation level `mu`.
    pub pe_level: f64,
    /// Declared bound on `|omega_0|`, `|omega_0'|` and `omega_0^2`.
    pub omega_bar: f64,
}

impl LeaderSignal {
    pub fn omega(&self, t: f64) -> f64 {
        self.omega.value(t)
    }

    pub fn omega_dot(&self, t: f64) -> f64 {
        self.omega.derivative(t)
    }

    pub fn velocity(&self, t: f64) -> f64 {
        self.velocity.value(t)
    }

    /// `omega_0` continued backwards by its value at `t = 0`.
    pub fn omega_extended(&self, t: f64) -> f64 {
        self.omega.value(t.max(0.0))
    }

    pub fn validate(&self) -> Result<()> {
        self.omega.validate("omega")?;
        self.velocity.validate("velocity")?;
        if !(self.pe_window > 0.0 && self.pe_window.is_finite()) {
            return Err(Error::Parameter {
                name: "pe_window",
                reason: format!("must be positive, got {}", self.pe_window),
            });
        }
        if !(self.pe_level > 0.0 && self.pe_level.is_finite()) {
            return Err(Error::Parameter {
                name: "pe_level",
                reason: format!("must be positive, got {}", self.pe_level),
            });
        }
        if !(self.omega_bar > 0.0 && self.omega_bar.is_finite()) {
            return Err(Error::Parameter {
                name: "omega_bar",
                reason: format!("must be positive, got {}", self.omega_bar),
            });
        }
        Ok(())
    }

    /// Largest sampled `max{|omega_0|, |omega_0'|, omega_0^2}` on a grid of
    /// spacing `dt` over `[0, horizon]`, together with the analytic bound.
    pub fn omega_bound_check(&self, horizon: f64, dt: f64) -> OmegaBound {
        let steps = (horizon / dt).ceil().max(1.0) as usize;
        let mut sampled: f64 = 0.0;
        for k in 0..=steps {
            let t = (k as f64 * dt).min(horizon);
            let w = self.omega(t);
            sampled = sampled
                .max(w.abs())
                .max(self.omega_dot(t).abs())
                .max(w * w);
        }
        let (sf, sdf) = self.omega.analytic_bounds(horizon);
        OmegaBound {
            sampled,
            analytic: sf.max(sdf).max(sf * sf),
            declared: self.omega_bar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaBound {
    pub sampled: f64,
    pub analytic: f64,
    pub declared: f64,
}

impl OmegaBound {
    pub fn dominated(&self) -> bool {
        let slack = 1e-12 * (1.0 + self.declared.abs());
        self.declared + slack >= self.sampled && self.declared + slack >= self.analytic
    }
}

/// Leader pose plus `N` follower poses at a time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    pub time: f64,
    pub leader: Pose,
    pub followers: Vec<Pose>,
}

impl FleetState {
    pub fn new(time: f64, leader: Pose, followers: Vec<Pose>) -> Self {
        Self {
            time,
            leader,
            followers,
        }
    }

    pub fn follower_count(&self) -> usize {
        self.followers.len()
    }

    /// Packs `[x0, y0, th0, x1, y1, th1, ...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * (self.followers.len() + 1));
        for p in std::iter::once(&self.leader).chain(self.followers.iter()) {
            v.extend_from_slice(&[p.x, p.y, p.theta]);
        }
        v
    }

    pub fn from_slice(time: f64, v: &[f64]) -> Self {
        let poses: Vec<Pose> = v
            .chunks_exact(3)
            .map(|c| Pose::new(c[0], c[1], c[2]))
            .collect();
        Self::new(time, poses[0], poses[1..].to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.leader.is_finite() && self.followers.iter().all(Pose::is_finite)
    }
}

/// Error coordinates of every follower relative to the leader.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorState {
    pub bar_theta: Vec<f64>,
    pub bar_x: Vec<f64>,
    pub bar_y: Vec<f64>,
    /// Rotated leader position `(x~0, y~0)`.
    pub tilde_leader: (f64, f64),
}

impl ErrorState {
    /// Euclidean norm of the stacked vector `(bar_x, bar_y, bar_theta)`.
    pub fn norm(&self) -> f64 {
        self.bar_x
            .iter()
            .chain(&self.bar_y)
            .chain(&self.bar_theta)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn theta_norm(&self) -> f64 {
        self.bar_theta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            bar_theta: self.bar_theta.iter().map(|v| v * factor).collect(),
            bar_x: self.bar_x.iter().map(|v| v * factor).collect(),
            bar_y: self.bar_y.iter().map(|v| v * factor).collect(),
            tilde_leader: self.tilde_leader,
        }
    }
}

/// Error coordinates of a fleet.
pub fn error_state(fleet: &FleetState) -> ErrorState {
    let (x0, y0) = rotate_to_body(&fleet.leader);
    let th0 = fleet.leader.theta;
    let n = fleet.followers.len();
    let mut e = ErrorState {
        bar_theta: Vec::with_capacity(n),
        bar_x: Vec::with_capacity(n),
        bar_y: Vec::with_capacity(n),
        tilde_leader: (x0, y0),
    };
    for p in &fleet.followers {
        let (xi, yi) = rotate_to_body(p);
        e.bar_theta.push(p.theta - th0);
        e.bar_x.push(xi - x0);
        e.bar_y.push(yi - y0);
    }
    e
}

/// Places followers so that the fleet has the prescribed error coordinates
/// relative to `leader` (the `tilde_leader` field of `err` is ignored).
pub fn fleet_from_error_state(time: f64, leader: Pose, err: &ErrorState) -> FleetState {
    let (x0, y0) = rotate_to_body(&leader);
    let followers = (0..err.bar_theta.len())
        .map(|i| {
            let theta = leader.theta + err.bar_theta[i];
            let (x, y) = rotate_from_body(x0 + err.bar_x[i], y0 + err.bar_y[i], theta);
            Pose::new(x, y, theta)
        })
        .collect();
    FleetState::new(time, leader, followers)
}

/// Shifts follower positions by the desired relative offsets, turning
/// formation keeping into plain tracking.
pub fn apply_formation_offsets(fleet: &FleetState, offsets: &[[f64; 2]]) -> Result<FleetState> {
    shift_followers(fleet, offsets, -1.0)
}

/// Inverse of [`apply_formation_offsets`].
pub fn remove_formation_offsets(fleet: &FleetState, offsets: &[[f64; 2]]) -> Result<FleetState> {
    shift_followers(fleet, offsets, 1.0)
}

fn shift_followers(fleet: &FleetState, offsets: &[[f64; 2]], sign: f64) -> Result<FleetState> {
    if offsets.len() != fleet.followers.len() {
        return Err(Error::Dimension {
            expected: fleet.followers.len(),
            got: offsets.len(),
        });
    }
    let followers = fleet
        .followers
        .iter()
        .zip(offsets)
        .map(|(p, o)| Pose::new(p.x + sign * o[0], p.y + sign * o[1], p.theta))
        .collect();
    Ok(FleetState::new(fleet.time, fleet.leader, followers))
}

/// Cartesian differences `(x_i - x_0, y_i - y_0, theta_i - theta_0)`.
pub fn cartesian_error(fleet: &FleetState) -> Vec<[f64; 3]> {
    let l = &fleet.leader;
    fleet
        .followers
        .iter()
        .map(|p| [p.x - l.x, p.y - l.y, p.theta - l.theta])
        .collect()
}

/// Bound on follower `i`'s Cartesian error implied by its error coordinates
/// and the leader's distance from the origin:
/// `|p_i - p_0| <= |(bar_x, bar_y)| + 2 |sin(bar_theta / 2)| |p_0|`.
pub fn cartesian_error_bound(err: &ErrorState, i: usize, leader_radius: f64) -> f64 {
    let pos = err.bar_x[i].hypot(err.bar_y[i]) + 2.0 * (0.5 * err.bar_theta[i]).sin().abs() * leader_radius;
    pos.hypot(err.bar_theta[i])
}

/// Estimate of the bound `M` on `max{|x_0|, |y_0|}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderBound {
    /// Sampled maximum inflated by 5 %.
    pub m_hat: f64,
    pub raw_max: f64,
    /// Time at which the raw maximum was attained.
    pub argmax_time: f64,
    /// Set when the maximum keeps growing up to the horizon end.
    pub still_growing: bool,
}

/// Integrates the leader alone over `[0, horizon]` and takes the largest
/// coordinate magnitude.
pub fn leader_bound_estimate(signal: &LeaderSignal, leader_init: Pose, horizon: f64) -> Result<LeaderBound> {
    if !(horizon > 0.0) {
        return Err(Error::Parameter {
            name: "horizon",
            reason: "must be positive".into(),
        });
    }
    let h = 0.005_f64.min(horizon / 10.0);
    let steps = (horizon / h).ceil() as usize;
    let mut rk = Rk4::new(3);
    let mut y = [leader_init.x, leader_init.y, leader_init.theta];
    let coord_max = |y: &[f64; 3]| y[0].abs().max(y[1].abs());
    let mut best = coord_max(&y);
    let mut argmax = 0.0;
    for k in 0..steps {
        let t = k as f64 * h;
        rk.step(t, h, &mut y, |t, s, d| {
            let v = signal.velocity(t);
            d[0] = v * s[2].cos();
            d[1] = v * s[2].sin();
            d[2] = signal.omega(t);
        });
        let m = coord_max(&y);
        if !m.is_finite() {
            return Err(Error::NonFinite { time: t + h });
        }
        if m > best {
            best = m;
            argmax = (k + 1) as f64 * h;
        }
    }
    Ok(LeaderBound {
        m_hat: 1.05 * best,
        raw_max: best,
        argmax_time: argmax,
        still_growing: argmax >= 0.95 * horizon && argmax > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn rotation_examples() {
        assert_eq!(rotate_to_body(&Pose::new(3.0, -4.0, 0.0)), (3.0, -4.0));
        let (x, y) = rotate_to_body(&Pose::new(1.0, 0.0, FRAC_PI_2));
        assert!(x.abs() < 1e-16 && (y + 1.0).abs() < 1e-16);
    }

    #[test]
    fn error_state_examples() {
        let leader = Pose::new(0.4, -1.0, 0.3);
        let fleet = FleetState::new(0.0, leader, vec![leader; 3]);
        let e = error_state(&fleet);
        assert!(e.norm() == 0.0);

        let fleet = FleetState::new(0.0, Pose::default(), vec![Pose::new(1.0, 0.0, 0.0)]);
        let e = error_state(&fleet);
        assert_eq!((e.bar_x[0], e.bar_y[0], e.bar_theta[0]), (1.0, 0.0, 0.0));
    }

    #[test]
    fn zero_error_means_coincident_fleet() {
        let leader = Pose::new(2.0, -3.0, 7.1);
        let err = ErrorState {
            bar_theta: vec![0.0; 2],
            bar_x: vec![0.0; 2],
            bar_y: vec![0.0; 2],
            tilde_leader: (0.0, 0.0),
        };
        let fleet = fleet_from_error_state(0.0, leader, &err);
        for c in cartesian_error(&fleet) {
            assert!(c.iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn table_one_offsets() {
        let fleet = FleetState::new(
            0.0,
            Pose::new(0.0, -6.25, 0.0),
            vec![
                Pose::new(-0.33, -0.4, -PI / 6.0),
                Pose::new(0.92, 0.2, PI / 3.0),
            ],
        );
        let shifted = apply_formation_offsets(&fleet, &[[-1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!((shifted.followers[0].x - 0.67).abs() < 1e-15);
        assert_eq!(shifted.followers[0].y, -0.4);
        assert_eq!(shifted.followers[1].y, 0.2 - 1.0);
        assert!(apply_formation_offsets(&fleet, &[[0.0, 0.0]]).is_err());
    }

    #[test]
    fn stationary_leader_bound() {
        let signal = LeaderSignal {
            omega: Profile::Constant { value: 0.0 },
            velocity: Profile::Constant { value: 0.0 },
            pe_window: 1.0,
            pe_level: 1.0,
            omega_bar: 1.0,
        };
        let b = leader_bound_estimate(&signal, Pose::new(-2.0, 1.5, 0.3), 10.0).unwrap();
        assert_eq!(b.m_hat, 1.05 * 2.0);
        assert!(!b.still_growing);
    }

    #[test]
    fn circling_leader_bound_matches_closed_form() {
        let signal = LeaderSignal {
            omega: Profile::Constant { value: 0.8 },
            velocity: Profile::Constant { value: 4.0 },
            pe_window: 1.0,
            pe_level: 0.64,
            omega_bar: 0.8,
        };
        let b = leader_bound_estimate(&signal, Pose::new(0.0, -6.25, 0.0), 50.0).unwrap();
        // circle of radius 5 about (0, -1.25): |x| <= 5 and |y| <= 6.25
        let oracle = (0..200_000)
            .map(|k| {
                let t = k as f64 * 50.0 / 200_000.0;
                let (x, y) = (5.0 * (0.8 * t).sin(), -1.25 - 5.0 * (0.8 * t).cos());
                x.abs().max(y.abs())
            })
            .fold(0.0, f64::max);
        assert!((b.raw_max - oracle).abs() < 1e-6, "{} vs {oracle}", b.raw_max);
        assert!((b.m_hat - 1.05 * 6.25).abs() < 1e-5);
    }

    #[test]
    fn straight_line_leader_is_flagged() {
        let signal = LeaderSignal {
            omega: Profile::Constant { value: 0.0 },
            velocity: Profile::Constant { value: 1.0 },
            pe_window: 1.0,
            pe_level: 1.0,
            omega_bar: 1.0,
        };
        let b = leader_bound_estimate(&signal, Pose::default(), 20.0).unwrap();
        assert!(b.still_growing);
    }

    #[test]
    fn inverse_sqrt_bounds() {
        let w = Profile::InverseSqrt {
            offset: 0.8,
            scale: -1.0,
            rate: 400.0,
            shift: 800.0,
        };
        let (sf, sdf) = w.analytic_bounds(200.0);
        assert!(sf < 0.8 && sf > 0.79);
        assert!((sdf - 200.0 / 800f64.powf(1.5)).abs() < 1e-15);
        // derivative agrees with a central difference
        let t = 3.0;
        let fd = (w.value(t + 1e-5) - w.value(t - 1e-5)) / 2e-5;
        assert!((fd - w.derivative(t)).abs() < 1e-9);
    }
}
