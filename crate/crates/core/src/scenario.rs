//! Scenario files and the assembly of everything a run needs.
//!
//! A scenario is a TOML document with the sections `[network]`, `[leader]`,
//! `[followers]`, `[controller]`, `[simulation]` and `[verification]`:
//!
//! ```toml
//! [network]
//! followers = 1
//! edges = [{ from = 0, to = 1 }]
//!
//! [leader]
//! initial = [0.0, 0.0, 0.0]
//! pe_window = 1.0
//! pe_level = 0.5
//! omega_bar = 0.8
//! omega = { kind = "constant", value = 0.8 }
//! velocity = { kind = "constant", value = 1.0 }
//!
//! [followers]
//! initial = [[1.0, 0.0, 0.3]]
//! offsets = [[0.0, 0.0]]
//!
//! [controller]
//! k_omega = 0.5
//! k_v = 1.0
//! ```
//!
//! Defaults: continuous law; step `T0 / 8` for sampled runs and `0.005` s
//! otherwise; horizon 100 s; leader bound estimated over twice the horizon
//! (at least 200 s); every monitor enabled.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certificates::{
    pe_level, pe_level_extended, CertificateSet, Envelope, PeLevel, PhiTable,
};
use crate::controllers::ControllerGains;
use crate::error::{Error, Result};
use crate::kinematics::{
    apply_formation_offsets, error_state, fleet_from_error_state, leader_bound_estimate,
    remove_formation_offsets, FleetState, LeaderBound, LeaderSignal,
    OmegaBound, Pose, Profile,
};
use crate::network::{
    build_coupling_matrix, find_diagonal_scaling, unreachable_followers, DirectedNetwork, Edge,
};
use crate::simulation::{
    run_scenario, IntegratorConfig, Law, LyapunovProbe, SimulationSetup, TrajectoryLog,
    DEFAULT_CONTINUOUS_STEP, DEFAULT_STEPS_PER_SAMPLE,
};

/// Bundled reference scenario.
pub const PAPER_SEC4: &str = include_str!("../scenarios/paper_sec4.toml");

/// Two-follower chain whose orientation sampling bound exceeds its period.
pub const CHAIN_SAMPLED: &str = include_str!("../scenarios/chain_sampled.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub followers: usize,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderSection {
    pub initial: Pose,
    pub pe_window: f64,
    pub pe_level: f64,
    pub omega_bar: f64,
    pub omega: Profile,
    pub velocity: Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowersSection {
    pub initial: Vec<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub k_omega: f64,
    pub k_v: f64,
    #[serde(default)]
    pub law: Law,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_period: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Integration step; defaults depend on the law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Log spacing in seconds; defaults to `T0` (sampled) or 0.05 s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_every: Option<f64>,
    /// Horizon of the leader-only run that estimates `M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader_bound_horizon: Option<f64>,
    /// Declared `M`, overriding the estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

fn default_horizon() -> f64 {
    100.0
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            step: None,
            horizon: default_horizon(),
            log_every: None,
            leader_bound_horizon: None,
            leader_bound: None,
            output_dir: None,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationSection {
    #[serde(default = "yes")]
    pub assumptions: bool,
    #[serde(default = "yes")]
    pub sandwich: bool,
    #[serde(default = "yes")]
    pub omega_monotone: bool,
    #[serde(default = "yes")]
    pub k_exponential: bool,
    #[serde(default = "yes")]
    pub sampled_contraction: bool,
    #[serde(default = "yes")]
    pub sampled_attractivity: bool,
    #[serde(default = "yes")]
    pub tracking_goal: bool,
    #[serde(default = "default_tracking_tolerance")]
    pub tracking_tolerance: f64,
    /// Relative slack of inequality monitors.
    #[serde(default = "default_inequality_slack")]
    pub inequality_slack: f64,
    /// Relative slack of derivative-based monitors.
    #[serde(default = "default_derivative_slack")]
    pub derivative_slack: f64,
}

fn default_tracking_tolerance() -> f64 {
    1e-3
}
fn default_inequality_slack() -> f64 {
    1e-6
}
fn default_derivative_slack() -> f64 {
    1e-3
}

impl Default for VerificationSection {
    fn default() -> Self {
        Self {
            assumptions: true,
            sandwich: true,
            omega_monotone: true,
            k_exponential: true,
            sampled_contraction: true,
            sampled_attractivity: true,
            tracking_goal: true,
            tracking_tolerance: default_tracking_tolerance(),
            inequality_slack: default_inequality_slack(),
            derivative_slack: default_derivative_slack(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub network: NetworkSection,
    pub leader: LeaderSection,
    pub followers: FollowersSection,
    pub controller: ControllerSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub verification: VerificationSection,
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl ScenarioConfig {
    /// Parses and structurally validates a scenario.
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| {
            let line = e.span().map(|s| line_of(src, s.start)).unwrap_or(1);
            Error::Parse(format!("line {line}: {}", e.message()))
        })?;
        cfg.validate_structure()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn paper_sec4() -> Self {
        Self::from_toml_str(PAPER_SEC4).expect("bundled scenario is valid")
    }

    pub fn chain_sampled() -> Self {
        Self::from_toml_str(CHAIN_SAMPLED).expect("bundled scenario is valid")
    }

    pub fn offsets(&self) -> Vec<[f64; 2]> {
        self.followers
            .offsets
            .clone()
            .unwrap_or_else(|| vec![[0.0, 0.0]; self.network.followers])
    }

    pub fn signal(&self) -> LeaderSignal {
        LeaderSignal {
            omega: self.leader.omega,
            velocity: self.leader.velocity,
            pe_window: self.leader.pe_window,
            pe_level: self.leader.pe_level,
            omega_bar: self.leader.omega_bar,
        }
    }

    pub fn gains(&self) -> ControllerGains {
        ControllerGains {
            k_omega: self.controller.k_omega,
            k_v: self.controller.k_v,
        }
    }

    pub fn network(&self) -> Result<DirectedNetwork> {
        DirectedNetwork::from_edges(self.network.followers, &self.network.edges)
    }

    pub fn initial_fleet(&self) -> FleetState {
        FleetState::new(0.0, self.leader.initial, self.followers.initial.clone())
    }

    /// Integration step after defaults.
    pub fn step(&self) -> f64 {
        match (self.simulation.step, self.controller.law, self.controller.sampling_period) {
            (Some(h), _, _) => h,
            (None, Law::Sampled, Some(t0)) => t0 / DEFAULT_STEPS_PER_SAMPLE as f64,
            _ => DEFAULT_CONTINUOUS_STEP,
        }
    }

    /// Log spacing in seconds after defaults.
    pub fn log_spacing(&self) -> f64 {
        match (self.simulation.log_every, self.controller.law, self.controller.sampling_period) {
            (Some(s), _, _) => s,
            (None, Law::Sampled, Some(t0)) => t0,
            _ => 0.05,
        }
    }

    pub fn leader_bound_horizon(&self) -> f64 {
        self.simulation
            .leader_bound_horizon
            .unwrap_or_else(|| (2.0 * self.simulation.horizon).max(200.0))
    }

    /// Checks shapes, signs and the law/period pairing. Graph connectivity
    /// and excitation are checked by [`assess_assumptions`].
    pub fn validate_structure(&self) -> Result<()> {
        let n = self.network.followers;
        if n == 0 {
            return Err(Error::Network("at least one follower is required".into()));
        }
        if self.followers.initial.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.followers.initial.len(),
            });
        }
        if let Some(o) = &self.followers.offsets {
            if o.len() != n {
                return Err(Error::Dimension { expected: n, got: o.len() });
            }
        }
        self.network()?;
        self.gains().validate()?;
        self.signal().validate()?;
        if self.controller.law == Law::Sampled && self.controller.sampling_period.is_none() {
            return Err(Error::Parameter {
                name: "sampling_period",
                reason: "required by the sampled law".into(),
            });
        }
        if let Some(t0) = self.controller.sampling_period {
            if !(t0 > 0.0 && t0.is_finite()) {
                return Err(Error::Parameter {
                    name: "sampling_period",
                    reason: format!("must be positive, got {t0}"),
                });
            }
        }
        let integ = IntegratorConfig::new(self.step(), self.simulation.horizon)?;
        integ.steps()?;
        if self.controller.law == Law::Sampled {
            integ.steps_per_sample(self.controller.sampling_period.unwrap_or(0.0))?;
        }
        if !(self.log_spacing() > 0.0) {
            return Err(Error::Parameter {
                name: "log_every",
                reason: "must be positive".into(),
            });
        }
        let v = &self.verification;
        for (name, x) in [
            ("tracking_tolerance", v.tracking_tolerance),
            ("inequality_slack", v.inequality_slack),
            ("derivative_slack", v.derivative_slack),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::Parameter {
                    name,
                    reason: format!("must be nonnegative, got {x}"),
                });
            }
        }
        if let Some(m) = self.simulation.leader_bound {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Parameter {
                    name: "leader_bound",
                    reason: format!("must be positive, got {m}"),
                });
            }
        }
        Ok(())
    }
}

/// Reads and structurally validates a scenario file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let src = std::fs::read_to_string(path)?;
    ScenarioConfig::from_toml_str(&src)
}

/// Outcome of checking the three standing hypotheses on a scenario.
#[derive(Debug, Clone)]
pub struct AssumptionAssessment {
    /// Leader-only run; `Err` if it blew up.
    pub leader: std::result::Result<LeaderBound, String>,
    /// `mu_hat` over window starts in `[0, horizon]`.
    pub pe: std::result::Result<PeLevel, String>,
    /// `mu_hat` including the windows that reach back before `t = 0`.
    pub pe_extended: std::result::Result<PeLevel, String>,
    pub omega_bound: OmegaBound,
    pub declared_mu: f64,
    pub unreachable: Vec<usize>,
}

/// Allowance for quadrature roundoff when a declared level equals the measured one.
const LEVEL_ROUNDOFF: f64 = 1e-9;

impl AssumptionAssessment {
    pub fn leader_bounded(&self) -> bool {
        matches!(&self.leader, Ok(b) if b.m_hat.is_finite() && b.m_hat > 0.0 && !b.still_growing)
    }

    pub fn excitation(&self) -> bool {
        let level_ok = |p: &std::result::Result<PeLevel, String>| {
            matches!(p, Ok(l) if l.mu_hat + LEVEL_ROUNDOFF >= self.declared_mu)
        };
        self.omega_bound.dominated() && level_ok(&self.pe) && level_ok(&self.pe_extended)
    }

    pub fn spanning_tree(&self) -> bool {
        self.unreachable.is_empty()
    }

    /// Descriptions of every violated hypothesis.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !self.leader_bounded() {
            v.push(match &self.leader {
                Ok(b) => format!(
                    "bounded leader: position keeps growing (max {:.6} at t = {:.3})",
                    b.raw_max, b.argmax_time
                ),
                Err(e) => format!("bounded leader: {e}"),
            });
        }
        if !self.excitation() {
            let show = |p: &std::result::Result<PeLevel, String>| match p {
                Ok(l) => format!("{:.6}", l.mu_hat),
                Err(e) => e.clone(),
            };
            v.push(format!(
                "leader excitation: declared mu = {}, mu_hat = {} (with backward continuation {}); declared omega_bar = {}, sampled bound {:.6}, analytic bound {:.6}",
                self.declared_mu,
                show(&self.pe),
                show(&self.pe_extended),
                self.omega_bound.declared,
                self.omega_bound.sampled,
                self.omega_bound.analytic
            ));
        }
        if !self.spanning_tree() {
            v.push(format!(
                "leader-rooted spanning tree: followers {:?} cannot be reached from the leader",
                self.unreachable
            ));
        }
        v
    }
}

pub fn assess_assumptions(cfg: &ScenarioConfig) -> Result<AssumptionAssessment> {
    let signal = cfg.signal();
    let horizon = cfg.simulation.horizon;
    let net = cfg.network()?;
    let pe_horizon = horizon.max(signal.pe_window);
    Ok(AssumptionAssessment {
        leader: leader_bound_estimate(&signal, cfg.leader.initial, cfg.leader_bound_horizon())
            .map_err(|e| e.to_string()),
        pe: pe_level(&signal, pe_horizon).map_err(|e| e.to_string()),
        pe_extended: pe_level_extended(&signal, pe_horizon).map_err(|e| e.to_string()),
        omega_bound: signal.omega_bound_check(horizon.max(signal.pe_window), 1e-3),
        declared_mu: signal.pe_level,
        unreachable: unreachable_followers(&net),
    })
}

/// A validated scenario with its certificates, ready to simulate.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ScenarioConfig,
    pub assessment: AssumptionAssessment,
    pub certificates: CertificateSet,
    pub phi: PhiTable,
    pub setup: SimulationSetup,
    /// Norm of the initial error state.
    pub r0: f64,
    pub envelope: Envelope,
}

impl Prepared {
    /// Checks every hypothesis (all violations are reported together), then
    /// builds certificates and the simulation setup.
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate_structure()?;
        let assessment = assess_assumptions(&config)?;
        let violations = assessment.violations();
        if !violations.is_empty() {
            return Err(Error::Assumptions(violations));
        }
        Self::build(config, assessment)
    }

    /// Like [`Prepared::new`] but tolerates violated hypotheses as long as
    /// the certificates can still be formed. Used by negative controls.
    pub fn new_unchecked(config: ScenarioConfig) -> Result<Self> {
        config.validate_structure()?;
        let assessment = assess_assumptions(&config)?;
        Self::build(config, assessment)
    }

    fn build(config: ScenarioConfig, assessment: AssumptionAssessment) -> Result<Self> {
        let net = config.network()?;
        let h = build_coupling_matrix(&net)?;
        let coupling = find_diagonal_scaling(&h)?;
        let signal = config.signal();
        let m = match (config.simulation.leader_bound, &assessment.leader) {
            (Some(m), _) => m,
            (None, Ok(b)) => b.m_hat,
            (None, Err(e)) => {
                return Err(Error::Assumptions(vec![format!("bounded leader: {e}")]));
            }
        };
        let certificates = CertificateSet::build(
            coupling,
            signal,
            config.gains(),
            m,
            config.controller.sampling_period,
        )?;
        let phi = PhiTable::build(&signal, config.simulation.horizon)?;
        let initial = config.initial_fleet();
        let offsets = config.offsets();
        let r0 = error_state(&apply_formation_offsets(&initial, &offsets)?).norm();
        let envelope = certificates.envelope(r0);
        let step = config.step();
        let log_every = ((config.log_spacing() / step).round() as usize).max(1);
        let setup = SimulationSetup {
            network: net,
            signal,
            gains: config.gains(),
            law: config.controller.law,
            sampling_period: config.controller.sampling_period.unwrap_or(0.0),
            integrator: IntegratorConfig::new(step, config.simulation.horizon)?,
            log_every,
            offsets,
            initial,
        };
        Ok(Self {
            config,
            assessment,
            certificates,
            phi,
            setup,
            r0,
            envelope,
        })
    }

    /// Same scenario with the initial error state scaled to norm `r0`; the
    /// leader start and the followers' error direction are kept.
    pub fn rescaled(&self, r0: f64) -> Result<Self> {
        if !(self.r0 > 0.0) {
            return Err(Error::Parameter {
                name: "r0",
                reason: "cannot rescale a zero initial error".into(),
            });
        }
        let offsets = &self.setup.offsets;
        let tracking = apply_formation_offsets(&self.setup.initial, offsets)?;
        let err = error_state(&tracking).scaled(r0 / self.r0);
        let fleet = fleet_from_error_state(tracking.time, tracking.leader, &err);
        let initial = remove_formation_offsets(&fleet, offsets)?;
        let mut out = self.clone();
        out.config.followers.initial = initial.followers.clone();
        out.setup.initial = initial;
        out.r0 = err.norm();
        out.envelope = out.certificates.envelope(out.r0);
        Ok(out)
    }

    /// `Delta0` of the envelope, when finite.
    pub fn delta0(&self) -> Option<f64> {
        (!self.envelope.vacuous && self.envelope.delta0.is_finite()).then_some(self.envelope.delta0)
    }

    /// Runs the configured closed loop with Lyapunov evaluation at log points.
    pub fn simulate(&self) -> Result<TrajectoryLog> {
        let probe = LyapunovProbe {
            consts: &self.certificates,
            phi: &self.phi,
            delta0: self.delta0(),
        };
        run_scenario(&self.setup, Some(&probe))
    }
}
