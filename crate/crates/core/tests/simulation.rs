//! Closed-loop simulation properties.

use coop_track::commands::{command_sweep, heading_decay_rate, SweepParam};
use coop_track::controllers::{virtual_errors, SamplingSchedule};
use coop_track::integrator::Rk4;
use coop_track::kinematics::{FleetState, Pose};
use coop_track::network::{DirectedNetwork, Edge};
use coop_track::scenario::{Prepared, ScenarioConfig};
use coop_track::simulation::{refresh_hold, run_scenario, Law};

const SINGLE: &str = r#"
[network]
followers = 1
edges = [{ from = 0, to = 1, weight = 1.0 }]

[leader]
initial = [0.0, 0.0, 0.0]
pe_window = 1.0
pe_level = 0.5
omega_bar = 0.8
omega = { kind = "constant", value = 0.8 }
velocity = { kind = "constant", value = 1.0 }

[followers]
initial = [[1.0, -0.5, 1.2]]

[controller]
k_omega = 0.5
k_v = 1.0

[simulation]
horizon = 4.0
"#;

fn single(step: f64) -> Prepared {
    let mut c = ScenarioConfig::from_toml_str(SINGLE).unwrap();
    c.simulation.step = Some(step);
    c.simulation.log_every = Some(4.0);
    Prepared::new(c).unwrap()
}

#[test]
fn rk4_is_fourth_order_on_scalar_linear_equation() {
    let solve = |h: f64| {
        let mut rk = Rk4::new(1);
        let mut y = [1.0];
        let n = (2.0 / h).round() as usize;
        for k in 0..n {
            rk.step(k as f64 * h, h, &mut y, |_, y, dy| dy[0] = -1.3 * y[0]);
        }
        (y[0] - (-2.6f64).exp()).abs()
    };
    let errors: Vec<f64> = [0.2, 0.1, 0.05, 0.025].iter().map(|h| solve(*h)).collect();
    for w in errors.windows(2) {
        assert!(w[0] / w[1] >= 12.0, "ratio {}", w[0] / w[1]);
    }
}

/// The heading loop of a single follower is `theta' = -k_omega theta`
/// regardless of the leader, so the closed-loop integrator must also be
/// fourth order there.
#[test]
fn closed_loop_heading_error_converges_at_fourth_order() {
    let errors: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|h| {
            let log = single(*h).simulate().unwrap();
            let last = log.last();
            assert!((last.time - 4.0).abs() < 1e-12);
            (last.error.bar_theta[0] - 1.2 * (-0.5f64 * 4.0).exp()).abs()
        })
        .collect();
    for w in errors.windows(2) {
        assert!(w[0] / w[1] >= 12.0, "ratio {}", w[0] / w[1]);
    }
}

fn short_reference(horizon: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::paper_sec4();
    c.simulation.horizon = horizon;
    c
}

#[test]
fn sampled_runs_approach_continuous_as_period_shrinks() {
    let s = command_sweep(&short_reference(15.0), SweepParam::SamplingPeriod, &[0.04, 0.01, 0.0025]);
    let gaps: Vec<f64> = s
        .rows
        .iter()
        .map(|r| r.outcome.as_ref().unwrap().gap_to_continuous.unwrap())
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "gaps {gaps:?}");
    assert!(gaps[2] < 0.01);
}

#[test]
fn leader_trajectory_does_not_depend_on_the_law() {
    let mut c = short_reference(10.0);
    c.simulation.log_every = Some(0.04);
    c.simulation.step = Some(0.005);
    let sampled = Prepared::new(c.clone()).unwrap().simulate().unwrap();
    c.controller.law = Law::Continuous;
    let continuous = Prepared::new(c).unwrap().simulate().unwrap();
    assert_eq!(sampled.records.len(), continuous.records.len());
    for (a, b) in sampled.records.iter().zip(&continuous.records) {
        assert_eq!(a.time.to_bits(), b.time.to_bits());
        assert_eq!(a.fleet.leader, b.fleet.leader);
    }
}

#[test]
fn hold_refresh_equals_virtual_errors() {
    let net = DirectedNetwork::from_edges(
        3,
        &[Edge::new(0, 1, 1.0), Edge::new(1, 2, 0.5), Edge::new(2, 3, 2.0), Edge::new(3, 1, 1.5)],
    )
    .unwrap();
    let schedule = SamplingSchedule::new(0.04, 0.0).unwrap();
    let fleet = FleetState::new(
        0.4,
        Pose::new(0.3, -1.0, 0.2),
        vec![Pose::new(1.0, 2.0, -0.4), Pose::new(-3.0, 0.5, 2.0), Pose::new(0.0, 0.0, 7.0)],
    );
    let held = refresh_hold(&fleet, &net, &schedule).unwrap();
    let (e_theta, e_x) = virtual_errors(&fleet, &net);
    assert_eq!(held.e_theta, e_theta);
    assert_eq!(held.e_xtilde, e_x);
    assert_eq!(held.index, 10);
}

#[test]
fn repeated_runs_write_identical_csv() {
    let p = Prepared::new(short_reference(5.0)).unwrap();
    let write = || {
        let mut buf = Vec::new();
        p.simulate().unwrap().write_csv(&mut buf).unwrap();
        buf
    };
    let (a, b) = (write(), write());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(!text.contains('\r'));
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    // 17 significant digits
    assert!(row.iter().filter(|f| *f != &"NaN").all(|f| f.split('e').next().unwrap().trim_start_matches('-').len() == 18));
}

#[test]
fn run_scenario_without_probe_has_no_lyapunov_values() {
    let p = single(0.05);
    let log = run_scenario(&p.setup, None).unwrap();
    assert!(log.records.iter().all(|r| r.lyapunov.is_none()));
}

/// Two-follower chain with weights 1 and 2: `H` has eigenvalues 1 and 2,
/// so the heading error decays at `k_omega` asymptotically.
#[test]
fn heading_decay_rate_follows_eigenvalue_oracle() {
    let mut c = ScenarioConfig::chain_sampled();
    c.network.edges[1].weight = 2.0;
    c.controller.law = Law::Continuous;
    c.simulation.horizon = 60.0;
    let values = [0.25, 0.5, 1.0];
    let s = command_sweep(&c, SweepParam::KOmega, &values);
    let rates: Vec<f64> = s.rows.iter().map(|r| r.outcome.as_ref().unwrap().theta_decay_rate).collect();
    for (k, r) in values.iter().zip(&rates) {
        assert!((r - k * 1.0).abs() <= 0.02 * k, "k_omega {k}: rate {r}");
    }
    assert!(rates.windows(2).all(|w| w[1] > w[0]));
    let p = Prepared::new(c).unwrap();
    assert!(heading_decay_rate(&p.simulate().unwrap()) > 0.0);
}
