//! Distributed feedback laws.
//!
//! Both laws feed the leader velocities forward and correct with the
//! neighbour disagreement sums (`virtual errors`)
//! `e_theta_i = sum_j a_ij (theta_i - theta_j)` and
//! `e_x_i = sum_j a_ij (x~_i - x~_j)`, j ranging over the leader and the
//! followers. The sampled law freezes the virtual errors at `t_k` but keeps
//! the feedforward continuous.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{error_state, rotate_to_body, FleetState};
use crate::network::DirectedNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub k_omega: f64,
    pub k_v: f64,
}

impl ControllerGains {
    pub fn new(k_omega: f64, k_v: f64) -> Result<Self> {
        let g = Self { k_omega, k_v };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k_omega", self.k_omega), ("k_v", self.k_v)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter {
                    name,
                    reason: format!("gain must be positive, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Global sampling clock `t_k = origin + k * period`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingSchedule {
    pub period: f64,
    pub origin: f64,
}

impl SamplingSchedule {
    pub fn new(period: f64, origin: f64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::Parameter {
                name: "T0",
                reason: format!("sampling period must be positive, got {period}"),
            });
        }
        Ok(Self { period, origin })
    }

    pub fn instant(&self, k: usize) -> f64 {
        self.origin + k as f64 * self.period
    }
}

/// Virtual errors frozen at a sampling instant, with the error coordinates
/// needed to evaluate `theta^(t) = bar_theta(t_k) - bar_theta(t)` and
/// `x^(t) = bar_x(t_k) - bar_x(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldErrors {
    pub e_theta: Vec<f64>,
    pub e_xtilde: Vec<f64>,
    pub bar_theta: Vec<f64>,
    pub bar_x: Vec<f64>,
    pub sampled_at: f64,
    /// Sample index `k`.
    pub index: usize,
}

impl HeldErrors {
    /// Snapshot of the virtual errors of `fleet`, stamped with its time.
    pub fn capture(fleet: &FleetState, net: &DirectedNetwork, index: usize) -> Self {
        let (e_theta, e_xtilde) = virtual_errors(fleet, net);
        let err = error_state(fleet);
        Self {
            e_theta,
            e_xtilde,
            bar_theta: err.bar_theta,
            bar_x: err.bar_x,
            sampled_at: fleet.time,
            index,
        }
    }

    /// `(theta^, x^)` at the current fleet state.
    pub fn deviation(&self, fleet: &FleetState) -> (Vec<f64>, Vec<f64>) {
        let err = error_state(fleet);
        let th = self
            .bar_theta
            .iter()
            .zip(&err.bar_theta)
            .map(|(a, b)| a - b)
            .collect();
        let x = self.bar_x.iter().zip(&err.bar_x).map(|(a, b)| a - b).collect();
        (th, x)
    }
}

/// Neighbour-sum virtual errors `(e_theta, e_xtilde)` for every follower.
pub fn virtual_errors(fleet: &FleetState, net: &DirectedNetwork) -> (Vec<f64>, Vec<f64>) {
    let n = fleet.follower_count();
    let theta: Vec<f64> = std::iter::once(fleet.leader.theta)
        .chain(fleet.followers.iter().map(|p| p.theta))
        .collect();
    let xt: Vec<f64> = std::iter::once(&fleet.leader)
        .chain(fleet.followers.iter())
        .map(|p| rotate_to_body(p).0)
        .collect();
    let mut e_theta = vec![0.0; n];
    let mut e_x = vec![0.0; n];
    for i in 1..=n {
        for j in 0..=n {
            if i == j {
                continue;
            }
            let a = net.weight(i, j);
            if a != 0.0 {
                e_theta[i - 1] += a * (theta[i] - theta[j]);
                e_x[i - 1] += a * (xt[i] - xt[j]);
            }
        }
    }
    (e_theta, e_x)
}

/// Same quantities through the coupling matrix: `H bar_theta`, `H bar_x`.
pub fn virtual_errors_via_coupling(
    fleet: &FleetState,
    h: &nalgebra::DMatrix<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let err = error_state(fleet);
    let th = h * DVector::from_vec(err.bar_theta);
    let x = h * DVector::from_vec(err.bar_x);
    (th.iter().cloned().collect(), x.iter().cloned().collect())
}

/// Per-follower `(omega_i, v_i)`.
pub type Control = (f64, f64);

/// `omega_i = -k_omega e_theta_i + omega_0`, `v_i = -k_v e_x_i + v_0`.
pub fn continuous_law(
    e_theta: &[f64],
    e_xtilde: &[f64],
    omega0: f64,
    v0: f64,
    gains: &ControllerGains,
) -> Vec<Control> {
    e_theta
        .iter()
        .zip(e_xtilde)
        .map(|(et, ex)| (-gains.k_omega * et + omega0, -gains.k_v * ex + v0))
        .collect()
}

/// Zero-order-held feedback with continuous feedforward, valid on
/// `[t_k, t_k + T0)`.
pub fn sampled_law(
    held: &HeldErrors,
    now: f64,
    schedule: &SamplingSchedule,
    omega0_now: f64,
    v0_now: f64,
    gains: &ControllerGains,
) -> Result<Vec<Control>> {
    // a little slack for the RK4 stage at the right end of the last step
    let slack = 1e-9 * schedule.period;
    if now < held.sampled_at - slack || now > held.sampled_at + schedule.period + slack {
        return Err(Error::Contract(format!(
            "stale hold: sampled at {}, evaluated at {now}",
            held.sampled_at
        )));
    }
    Ok(continuous_law(
        &held.e_theta,
        &held.e_xtilde,
        omega0_now,
        v0_now,
        gains,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Pose;
    use crate::network::{build_coupling_matrix, Edge};

    fn chain() -> DirectedNetwork {
        DirectedNetwork::from_edges(2, &[Edge::new(0, 1, 1.0), Edge::new(1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn synchronized_fleet_has_zero_virtual_errors() {
        let p = Pose::new(1.0, 2.0, 0.5);
        let fleet = FleetState::new(0.0, p, vec![p, p]);
        let (a, b) = virtual_errors(&fleet, &chain());
        assert_eq!(a, vec![0.0, 0.0]);
        assert_eq!(b, vec![0.0, 0.0]);
    }

    #[test]
    fn chain_heading_errors() {
        let th0 = 0.7;
        let fleet = FleetState::new(
            0.0,
            Pose::new(0.0, 0.0, th0),
            vec![Pose::new(0.0, 0.0, th0 + 0.1), Pose::new(0.0, 0.0, th0 + 0.3)],
        );
        let (et, _) = virtual_errors(&fleet, &chain());
        assert!((et[0] - 0.1).abs() < 1e-14);
        assert!((et[1] - 0.2).abs() < 1e-14);
        let h = build_coupling_matrix(&chain()).unwrap();
        let (et2, _) = virtual_errors_via_coupling(&fleet, &h);
        assert!((et[0] - et2[0]).abs() < 1e-14 && (et[1] - et2[1]).abs() < 1e-14);
    }

    #[test]
    fn continuous_law_examples() {
        let g = ControllerGains::new(0.5, 1.0).unwrap();
        let u = continuous_law(&[0.0, 0.0], &[0.0, 0.0], 0.8, 4.0, &g);
        assert_eq!(u, vec![(0.8, 4.0), (0.8, 4.0)]);
        let u = continuous_law(&[1.0], &[0.0], 0.8, 4.0, &g);
        assert!((u[0].0 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn gains_must_be_positive() {
        assert!(ControllerGains::new(0.0, 1.0).is_err());
        assert!(ControllerGains::new(0.5, -1.0).is_err());
    }

    #[test]
    fn sampled_law_rejects_stale_hold() {
        let p = Pose::new(1.0, 2.0, 0.5);
        let fleet = FleetState::new(1.0, p, vec![p]);
        let net = DirectedNetwork::from_edges(1, &[Edge::new(0, 1, 1.0)]).unwrap();
        let held = HeldErrors::capture(&fleet, &net, 0);
        let sched = SamplingSchedule::new(0.1, 1.0).unwrap();
        let g = ControllerGains::new(1.0, 1.0).unwrap();
        assert!(sampled_law(&held, 1.05, &sched, 0.3, 1.0, &g).is_ok());
        assert!(sampled_law(&held, 1.2, &sched, 0.3, 1.0, &g).is_err());
    }
}
