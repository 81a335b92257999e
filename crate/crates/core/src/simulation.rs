//! Fixed-step closed-loop simulation of the leader and its followers.
//!
//! The integrated state is the leader pose followed by the follower poses
//! shifted by their formation offsets, so the controllers only ever see a
//! pure tracking problem. Logged poses are translated back.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::certificates::{evaluate_lyapunov, v0_v1, CertificateSet, LyapunovEvaluation, PhiSource};
use crate::controllers::{continuous_law, sampled_law, Control, ControllerGains, HeldErrors, SamplingSchedule};
use crate::error::{Error, Result};
use crate::integrator::Rk4;
use crate::kinematics::{
    apply_formation_offsets, error_state, remove_formation_offsets, ErrorState, FleetState, LeaderSignal,
};
use crate::network::DirectedNetwork;

/// Default step of continuous-law runs.
pub const DEFAULT_CONTINUOUS_STEP: f64 = 0.005;
/// Integration steps per sampling period by default.
pub const DEFAULT_STEPS_PER_SAMPLE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Law {
    #[default]
    Continuous,
    Sampled,
}

impl std::fmt::Display for Law {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Law::Continuous => "continuous",
            Law::Sampled => "sampled",
        })
    }
}

impl std::str::FromStr for Law {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Law::Continuous),
            "sampled" => Ok(Law::Sampled),
            other => Err(Error::Parse(format!("unknown law `{other}`"))),
        }
    }
}

/// Step size and horizon of the fixed-step RK4 integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub step: f64,
    pub horizon: f64,
}

fn integer_ratio(num: f64, den: f64, name: &'static str) -> Result<usize> {
    let r = num / den;
    let k = r.round();
    if k < 1.0 || (r - k).abs() > 1e-9 * k {
        return Err(Error::Parameter {
            name,
            reason: format!("{num} is not a positive integer multiple of the step {den}"),
        });
    }
    Ok(k as usize)
}

impl IntegratorConfig {
    pub fn new(step: f64, horizon: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Parameter {
                name: "h",
                reason: format!("step must be positive, got {step}"),
            });
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Parameter {
                name: "horizon",
                reason: format!("must be nonnegative, got {horizon}"),
            });
        }
        Ok(Self { step, horizon })
    }

    /// Number of steps covering the horizon.
    pub fn steps(&self) -> Result<usize> {
        if self.horizon == 0.0 {
            return Ok(0);
        }
        integer_ratio(self.horizon, self.step, "horizon")
    }

    /// `T0 / h`, required to be a positive integer.
    pub fn steps_per_sample(&self, period: f64) -> Result<usize> {
        integer_ratio(period, self.step, "T0")
    }
}

/// Everything the integrator needs to run one closed loop.
#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub network: DirectedNetwork,
    pub signal: LeaderSignal,
    /// Not validated here, so negative controls can flip signs.
    pub gains: ControllerGains,
    pub law: Law,
    pub sampling_period: f64,
    pub integrator: IntegratorConfig,
    /// Log every this many integration steps (clamped to one sampling period
    /// for sampled runs).
    pub log_every: usize,
    pub offsets: Vec<[f64; 2]>,
    /// Initial poses in original (offset) coordinates.
    pub initial: FleetState,
}

/// Optional Lyapunov evaluation at log points.
pub struct LyapunovProbe<'a> {
    pub consts: &'a CertificateSet,
    pub phi: &'a dyn PhiSource,
    /// `Delta0` for `W4`.
    pub delta0: Option<f64>,
}

/// One logged instant.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub time: f64,
    /// Poses in original coordinates.
    pub fleet: FleetState,
    /// Error coordinates of the offset-free tracking problem.
    pub error: ErrorState,
    pub controls: Vec<Control>,
    pub lyapunov: Option<LyapunovEvaluation>,
    /// Index of the hold in force (sampled runs).
    pub hold_index: Option<usize>,
}

/// Per-sampling-interval summary recorded during sampled runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub index: usize,
    pub time: f64,
    pub v0: f64,
    pub w1: Option<f64>,
    pub theta_norm: f64,
    /// Largest `V0` over the integration nodes of `[t_k, t_{k+1}]`.
    pub v0_interval_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub law: Law,
    pub step: f64,
    pub sampling_period: Option<f64>,
    pub offsets: Vec<[f64; 2]>,
    pub records: Vec<LogRecord>,
    pub samples: Vec<SampleRecord>,
}

impl TrajectoryLog {
    pub fn follower_count(&self) -> usize {
        self.offsets.len()
    }

    pub fn initial(&self) -> &LogRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &LogRecord {
        self.records.last().expect("log has at least the initial record")
    }

    /// Writes the trajectory as CSV with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.follower_count();
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(csv_header(n))?;
        let fmt = |v: f64| format!("{v:.16e}");
        for r in &self.records {
            let mut row = Vec::with_capacity(1 + 3 * (n + 1) + 5 * n + 5);
            row.push(fmt(r.time));
            for p in std::iter::once(&r.fleet.leader).chain(&r.fleet.followers) {
                row.extend([fmt(p.x), fmt(p.y), fmt(p.theta)]);
            }
            for i in 0..n {
                row.extend([fmt(r.error.bar_x[i]), fmt(r.error.bar_y[i]), fmt(r.error.bar_theta[i])]);
            }
            for &(om, v) in &r.controls {
                row.extend([fmt(om), fmt(v)]);
            }
            let l = r.lyapunov.unwrap_or(LyapunovEvaluation {
                v0: f64::NAN,
                v1: f64::NAN,
                phi: f64::NAN,
                w1: f64::NAN,
                w2: f64::NAN,
                w3: f64::NAN,
                omega: f64::NAN,
                w4: f64::NAN,
            });
            row.extend([fmt(l.v0), fmt(l.v1), fmt(l.w1), fmt(l.omega), fmt(l.w4)]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn csv_header(n: usize) -> Vec<String> {
    let mut h = vec!["time".to_string()];
    for i in 0..=n {
        h.extend([format!("x_{i}"), format!("y_{i}"), format!("theta_{i}")]);
    }
    for i in 1..=n {
        h.extend([format!("bar_x_{i}"), format!("bar_y_{i}"), format!("bar_theta_{i}")]);
    }
    for i in 1..=n {
        h.extend([format!("omega_{i}"), format!("v_{i}")]);
    }
    h.extend(["V0", "V1", "W1", "Omega", "W4"].map(String::from));
    h
}

/// Neighbour lists `(j, a_ij)` of each follower, leader included as `j = 0`.
fn neighbour_lists(net: &DirectedNetwork) -> Vec<Vec<(usize, f64)>> {
    let n = net.follower_count();
    (1..=n)
        .map(|i| {
            (0..=n)
                .filter(|&j| j != i)
                .map(|j| (j, net.weight(i, j)))
                .filter(|&(_, a)| a != 0.0)
                .collect()
        })
        .collect()
}

/// Writes `(e_theta, e_xtilde)` for a packed state.
fn virtual_errors_packed(y: &[f64], nbrs: &[Vec<(usize, f64)>], e_th: &mut [f64], e_x: &mut [f64]) {
    let xt = |k: usize| y[3 * k] * y[3 * k + 2].cos() + y[3 * k + 1] * y[3 * k + 2].sin();
    for (i, list) in nbrs.iter().enumerate() {
        let k = i + 1;
        let (th_i, x_i) = (y[3 * k + 2], xt(k));
        let (mut a, mut b) = (0.0, 0.0);
        for &(j, w) in list {
            a += w * (th_i - y[3 * j + 2]);
            b += w * (x_i - xt(j));
        }
        e_th[i] = a;
        e_x[i] = b;
    }
}

fn unicycle_rhs(y: &[f64], controls: impl Iterator<Item = (f64, f64)>, d: &mut [f64]) {
    for (k, (om, v)) in controls.enumerate() {
        let th = y[3 * k + 2];
        d[3 * k] = v * th.cos();
        d[3 * k + 1] = v * th.sin();
        d[3 * k + 2] = om;
    }
}

/// Advances the packed tracking-coordinate state by one RK4 step.
///
/// With `held = Some(..)` the feedback terms stay frozen over the step while
/// the leader feedforward is evaluated at every stage time.
#[allow(clippy::too_many_arguments)]
pub fn step_closed_loop(
    rk: &mut Rk4,
    t: f64,
    h: f64,
    y: &mut [f64],
    net_lists: &NeighbourLists,
    signal: &LeaderSignal,
    gains: &ControllerGains,
    held: Option<&HeldErrors>,
) {
    let n = net_lists.0.len();
    let mut e_th = vec![0.0; n];
    let mut e_x = vec![0.0; n];
    rk.step(t, h, y, |t, y, d| {
        let (w0, v0) = (signal.omega(t), signal.velocity(t));
        let (et, ex): (&[f64], &[f64]) = match held {
            Some(hd) => (&hd.e_theta, &hd.e_xtilde),
            None => {
                virtual_errors_packed(y, &net_lists.0, &mut e_th, &mut e_x);
                (&e_th, &e_x)
            }
        };
        let controls = std::iter::once((w0, v0)).chain(
            et.iter()
                .zip(ex)
                .map(|(a, b)| (-gains.k_omega * a + w0, -gains.k_v * b + v0)),
        );
        unicycle_rhs(y, controls, d);
    });
}

/// Precomputed neighbour lists of a network.
#[derive(Debug, Clone)]
pub struct NeighbourLists(Vec<Vec<(usize, f64)>>);

impl NeighbourLists {
    pub fn new(net: &DirectedNetwork) -> Self {
        Self(neighbour_lists(net))
    }
}

/// Hold refresh; `fleet.time` must be a sampling instant of `schedule`.
pub fn refresh_hold(
    fleet: &FleetState,
    net: &DirectedNetwork,
    schedule: &SamplingSchedule,
) -> Result<HeldErrors> {
    let k = ((fleet.time - schedule.origin) / schedule.period).round();
    let on_grid = k >= 0.0 && (fleet.time - schedule.instant(k as usize)).abs() <= 1e-9 * schedule.period.max(fleet.time.abs());
    if !on_grid {
        return Err(Error::Contract(format!(
            "hold refresh at t = {} is off the sampling grid",
            fleet.time
        )));
    }
    Ok(HeldErrors::capture(fleet, net, k as usize))
}

/// Runs the closed loop over the configured horizon.
pub fn run_scenario(setup: &SimulationSetup, probe: Option<&LyapunovProbe<'_>>) -> Result<TrajectoryLog> {
    let n = setup.network.follower_count();
    if n == 0 {
        return Err(Error::Network("at least one follower is required".into()));
    }
    if setup.initial.follower_count() != n {
        return Err(Error::Dimension {
            expected: n,
            got: setup.initial.follower_count(),
        });
    }
    let h = setup.integrator.step;
    let steps = setup.integrator.steps()?;
    let sps = match setup.law {
        Law::Sampled => Some(setup.integrator.steps_per_sample(setup.sampling_period)?),
        Law::Continuous => None,
    };
    let log_every = match sps {
        Some(s) => setup.log_every.clamp(1, s),
        None => setup.log_every.max(1),
    };
    let schedule = SamplingSchedule::new(
        sps.map(|s| s as f64 * h).unwrap_or(1.0),
        setup.initial.time,
    )?;
    let t_start = setup.initial.time;
    let lists = NeighbourLists::new(&setup.network);
    let d = probe.map(|p| p.consts.coupling.d.clone());

    let tracking = apply_formation_offsets(&setup.initial, &setup.offsets)?;
    let mut y = tracking.to_vec();
    let mut rk = Rk4::new(y.len());
    let mut held: Option<HeldErrors> = None;
    let mut log = TrajectoryLog {
        law: setup.law,
        step: h,
        sampling_period: sps.map(|_| schedule.period),
        offsets: setup.offsets.clone(),
        records: Vec::with_capacity(steps / log_every + 2),
        samples: Vec::new(),
    };

    for k in 0..=steps {
        let t = t_start + k as f64 * h;
        let fleet = FleetState::from_slice(t, &y);
        if !fleet.is_finite() {
            return Err(Error::NonFinite { time: t });
        }
        let err = error_state(&fleet);
        let v0_now = d.as_ref().map(|d| v0_v1(&err, d).0).unwrap_or(0.0);
        if let Some(s) = log.samples.last_mut() {
            s.v0_interval_max = s.v0_interval_max.max(v0_now);
        }
        if let Some(s) = sps {
            if k % s == 0 {
                let hold = refresh_hold(&fleet, &setup.network, &schedule)?;
                let w1 = probe.map(|p| evaluate_lyapunov(t, &err, p.consts, p.phi, None).w1);
                log.samples.push(SampleRecord {
                    index: hold.index,
                    time: t,
                    v0: v0_now,
                    w1,
                    theta_norm: err.theta_norm(),
                    v0_interval_max: v0_now,
                });
                held = Some(hold);
            }
        }
        if k % log_every == 0 || k == steps {
            let (w0, v0) = (setup.signal.omega(t), setup.signal.velocity(t));
            let controls = match &held {
                Some(hd) => sampled_law(hd, t, &schedule, w0, v0, &setup.gains)?,
                None => {
                    let mut e_th = vec![0.0; n];
                    let mut e_x = vec![0.0; n];
                    virtual_errors_packed(&y, &lists.0, &mut e_th, &mut e_x);
                    continuous_law(&e_th, &e_x, w0, v0, &setup.gains)
                }
            };
            log.records.push(LogRecord {
                time: t,
                fleet: remove_formation_offsets(&fleet, &setup.offsets)?,
                lyapunov: probe.map(|p| evaluate_lyapunov(t, &err, p.consts, p.phi, p.delta0)),
                error: err,
                controls,
                hold_index: held.as_ref().map(|hd| hd.index),
            });
        }
        if k == steps {
            break;
        }
        step_closed_loop(&mut rk, t, h, &mut y, &lists, &setup.signal, &setup.gains, held.as_ref());
    }
    Ok(log)
}

/// Largest error-state gap between two logs over their common log times.
pub fn sup_error_gap(a: &TrajectoryLog, b: &TrajectoryLog) -> f64 {
    let mut j = 0;
    let mut gap: f64 = 0.0;
    for ra in &a.records {
        while j < b.records.len() && b.records[j].time < ra.time - 1e-9 {
            j += 1;
        }
        if j == b.records.len() {
            break;
        }
        let rb = &b.records[j];
        if (rb.time - ra.time).abs() <= 1e-9 {
            let d = ra
                .error
                .bar_x
                .iter()
                .zip(&rb.error.bar_x)
                .chain(ra.error.bar_y.iter().zip(&rb.error.bar_y))
                .chain(ra.error.bar_theta.iter().zip(&rb.error.bar_theta))
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            gap = gap.max(d);
        }
    }
    gap
}
