//! Monitors that check certificate inequalities along a simulated trajectory.
//!
//! Every monitor is a pure function of the log and the constants, so
//! re-running it on the same log gives the same report. A margin is
//! `allowed - observed`; negative means violated.

use std::fmt::Write as _;

use crate::certificates::{log_add_exp, CertificateSet, Envelope};
use crate::kinematics::{apply_formation_offsets, cartesian_error, cartesian_error_bound};
use crate::scenario::{AssumptionAssessment, Prepared};
use crate::simulation::{Law, LogRecord, TrajectoryLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorStatus {
    Pass,
    Fail,
    /// The certified bound exists but is too large to carry information.
    Vacuous,
    /// The monitor's preconditions do not hold; no claim is made.
    Skipped,
}

impl std::fmt::Display for MonitorStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MonitorStatus::Pass => "pass",
            MonitorStatus::Fail => "fail",
            MonitorStatus::Vacuous => "vacuous",
            MonitorStatus::Skipped => "skipped",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorEntry {
    pub name: String,
    pub status: MonitorStatus,
    pub worst_margin: f64,
    pub worst_time: Option<f64>,
    pub tolerance: f64,
    pub detail: String,
}

impl MonitorEntry {
    fn skipped(name: &str, reason: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: MonitorStatus::Skipped,
            worst_margin: f64::NAN,
            worst_time: None,
            tolerance: f64::NAN,
            detail: reason.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == MonitorStatus::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonitorReport {
    pub entries: Vec<MonitorEntry>,
}

impl MonitorReport {
    pub fn any_failed(&self) -> bool {
        self.entries.iter().any(|e| e.status == MonitorStatus::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&MonitorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Fixed-width table for terminals.
    pub fn summary_table(&self) -> String {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(7).max(7);
        let mut s = format!(
            "{:<width$}  {:<8}  {:>13}  {:>10}  detail\n",
            "monitor", "status", "worst margin", "at t"
        );
        for e in &self.entries {
            let t = e.worst_time.map(|t| format!("{t:.4}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<width$}  {:<8}  {:>13.6e}  {:>10}  {}",
                e.name, e.status, e.worst_margin, t, e.detail
            );
        }
        s
    }
}

/// Tracks the smallest margin and where it occurred.
struct Worst {
    margin: f64,
    time: Option<f64>,
}

impl Worst {
    fn new() -> Self {
        Self {
            margin: f64::INFINITY,
            time: None,
        }
    }

    fn see(&mut self, margin: f64, t: f64) {
        if margin < self.margin || (margin.is_nan() && !self.margin.is_nan()) {
            self.margin = margin;
            self.time = Some(t);
        }
    }

    fn ok(&self) -> bool {
        self.margin >= 0.0
    }
}

fn entry(name: &str, w: Worst, tolerance: f64, detail: String) -> MonitorEntry {
    MonitorEntry {
        name: name.into(),
        status: if w.ok() { MonitorStatus::Pass } else { MonitorStatus::Fail },
        worst_margin: w.margin,
        worst_time: w.time,
        tolerance,
        detail,
    }
}

const NO_LYAPUNOV: &str = "log carries no Lyapunov values";

fn lyapunov_records(log: &TrajectoryLog) -> Option<Vec<(&LogRecord, crate::certificates::LyapunovEvaluation)>> {
    log.records.iter().map(|r| r.lyapunov.map(|l| (r, l))).collect()
}

// ---------------------------------------------------------------------------
// Hypotheses
// ---------------------------------------------------------------------------

/// Three entries: bounded leader, leader excitation, leader-rooted spanning tree.
pub fn check_assumptions(a: &AssumptionAssessment) -> Vec<MonitorEntry> {
    let leader = match &a.leader {
        Ok(b) => MonitorEntry {
            name: "assumption_bounded_leader".into(),
            status: if a.leader_bounded() { MonitorStatus::Pass } else { MonitorStatus::Fail },
            worst_margin: if b.still_growing { -b.raw_max } else { b.m_hat },
            worst_time: Some(b.argmax_time),
            tolerance: 0.0,
            detail: format!(
                "M_hat = {:.6} (raw max {:.6} at t = {:.3}{})",
                b.m_hat,
                b.raw_max,
                b.argmax_time,
                if b.still_growing { ", still growing at the horizon end" } else { "" }
            ),
        },
        Err(e) => MonitorEntry {
            name: "assumption_bounded_leader".into(),
            status: MonitorStatus::Fail,
            worst_margin: f64::NEG_INFINITY,
            worst_time: None,
            tolerance: 0.0,
            detail: e.clone(),
        },
    };
    let (mu_hat, at) = match (&a.pe, &a.pe_extended) {
        (Ok(p), Ok(q)) => {
            if p.mu_hat <= q.mu_hat {
                (p.mu_hat, Some(p.argmin))
            } else {
                (q.mu_hat, Some(q.argmin))
            }
        }
        _ => (0.0, None),
    };
    let excitation = MonitorEntry {
        name: "assumption_excitation".into(),
        status: if a.excitation() { MonitorStatus::Pass } else { MonitorStatus::Fail },
        worst_margin: (mu_hat - a.declared_mu).min(a.omega_bound.declared - a.omega_bound.sampled.max(a.omega_bound.analytic)),
        worst_time: at,
        tolerance: 0.0,
        detail: format!(
            "mu_hat = {} (from t = 0: {}), declared mu = {}; omega_bar = {} vs bound {:.6}",
            fmt_pe(&a.pe_extended),
            fmt_pe(&a.pe),
            a.declared_mu,
            a.omega_bound.declared,
            a.omega_bound.sampled.max(a.omega_bound.analytic)
        ),
    };
    let tree = MonitorEntry {
        name: "assumption_spanning_tree".into(),
        status: if a.spanning_tree() { MonitorStatus::Pass } else { MonitorStatus::Fail },
        worst_margin: 0.0 - a.unreachable.len() as f64,
        worst_time: None,
        tolerance: 0.0,
        detail: if a.spanning_tree() {
            "every follower is reachable from the leader".into()
        } else {
            format!("unreachable followers {:?}", a.unreachable)
        },
    };
    vec![leader, excitation, tree]
}

fn fmt_pe(p: &Result<crate::certificates::PeLevel, String>) -> String {
    match p {
        Ok(l) => format!("{:.6}", l.mu_hat),
        Err(e) => e.clone(),
    }
}

// ---------------------------------------------------------------------------
// Continuous-law certificates
// ---------------------------------------------------------------------------

/// `V1 <= W1 <= (1 + T omega_bar + 2 gamma) V1` and `1 <= phi <= 1 + T omega_bar`.
pub fn check_sandwich(log: &TrajectoryLog, c: &CertificateSet, slack: f64) -> Vec<MonitorEntry> {
    let Some(recs) = lyapunov_records(log) else {
        return vec![MonitorEntry::skipped("sandwich", NO_LYAPUNOV)];
    };
    let mut w = Worst::new();
    let mut p = Worst::new();
    for (r, l) in &recs {
        let tol = slack * (1.0 + l.v1);
        w.see((l.w1 - l.v1 + tol).min(c.sandwich_upper * l.v1 - l.w1 + tol), r.time);
        let tol_phi = slack;
        p.see((l.phi - 1.0 + tol_phi).min(c.phi_max - l.phi + tol_phi), r.time);
    }
    vec![
        entry("sandwich", w, slack, format!("upper factor {:.6}", c.sandwich_upper)),
        entry("phi_bounds", p, slack, format!("1 <= phi <= {:.6}", c.phi_max)),
    ]
}

/// `Omega` nonincreasing, plus the integrated decrease bound
/// `Omega' <= -(C0_bar / 2) (V1 / (1 + V1))^2 - (C0^2 / (2 C0_bar)) |bar_theta|^2`.
pub fn check_omega_monotone(
    log: &TrajectoryLog,
    c: &CertificateSet,
    slack: f64,
    derivative_slack: f64,
) -> Vec<MonitorEntry> {
    const NAMES: [&str; 2] = ["omega_monotone", "omega_decrease_rate"];
    if log.law != Law::Continuous {
        return NAMES.map(|n| MonitorEntry::skipped(n, "continuous-law certificate")).to_vec();
    }
    let Some(recs) = lyapunov_records(log) else {
        return NAMES.map(|n| MonitorEntry::skipped(n, NO_LYAPUNOV)).to_vec();
    };
    let rate = |r: &LogRecord, v1: f64| {
        let q = v1 / (1.0 + v1);
        let th = r.error.theta_norm();
        -0.5 * c.c0_bar * q * q - c.c0 * c.c0 / (2.0 * c.c0_bar) * th * th
    };
    let mut mono = Worst::new();
    let mut strong = Worst::new();
    for pair in recs.windows(2) {
        let ((ra, la), (rb, lb)) = (pair[0], pair[1]);
        let tol = slack * (1.0 + la.omega);
        let inc = lb.omega - la.omega;
        mono.see(tol - inc, rb.time);
        let bound = 0.5 * (rb.time - ra.time) * (rate(ra, la.v1) + rate(rb, lb.v1));
        strong.see(bound + derivative_slack * bound.abs() + tol - inc, rb.time);
    }
    vec![
        entry(NAMES[0], mono, slack, format!("relative slack {slack:e} between consecutive log points")),
        entry(
            NAMES[1],
            strong,
            derivative_slack,
            "trapezoidal integral of the decrease bound between log points".into(),
        ),
    ]
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Envelope `|e(t)| <= M0 exp(-C3 (t - t0))` and `W4(t) <= W4(t0) exp(-2 C3 (t - t0)) (1 + slack)`.
///
/// Both are compared as logarithms; an envelope whose `M0` exceeds double
/// range is reported vacuous even when the log comparison holds.
pub fn check_k_exponential(
    log: &TrajectoryLog,
    c: &CertificateSet,
    env: &Envelope,
    slack: f64,
) -> Vec<MonitorEntry> {
    const NAMES: [&str; 2] = ["k_exponential_envelope", "w4_decay"];
    if log.law != Law::Continuous {
        return NAMES.map(|n| MonitorEntry::skipped(n, "continuous-law certificate")).to_vec();
    }
    let Some(recs) = lyapunov_records(log) else {
        return NAMES.map(|n| MonitorEntry::skipped(n, NO_LYAPUNOV)).to_vec();
    };
    let t0 = recs[0].0.time;
    let ln_w4 = |l: &crate::certificates::LyapunovEvaluation| {
        log_add_exp(l.w1.max(0.0).ln(), env.ln_delta0 + l.v0.max(0.0).ln())
    };
    let gap = |allowed: f64, observed: f64| {
        if observed == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            allowed - observed
        }
    };
    let mut norm = Worst::new();
    let mut w4 = Worst::new();
    let ln_w4_0 = ln_w4(&recs[0].1);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (r, l) in &recs {
        let dt = r.time - t0;
        norm.see(gap(env.ln_m0 - c.c3 * dt, r.error.norm().ln()), r.time);
        let lw = ln_w4(l);
        w4.see(gap(ln_w4_0 - 2.0 * c.c3 * dt + slack.ln_1p(), lw), r.time);
        if lw.is_finite() {
            xs.push(r.time);
            ys.push(lw);
        }
    }
    let slope = if xs.len() >= 2 { ls_slope(&xs, &ys) } else { f64::NAN };
    let mut envelope_entry = entry(
        NAMES[0],
        norm,
        0.0,
        format!(
            "r0 = {:.6e}, ln M0 = {:.6e}, C3 = {:.6e}; margins in ln units",
            env.r0, env.ln_m0, c.c3
        ),
    );
    if env.vacuous && envelope_entry.status == MonitorStatus::Pass {
        envelope_entry.status = MonitorStatus::Vacuous;
        envelope_entry.detail.push_str("; M0 exceeds double range, inequality holds only in log form");
    }
    let w4_entry = entry(
        NAMES[1],
        w4,
        slack,
        format!(
            "ln Delta0 = {:.6e}; fitted slope of ln W4 = {:.6e} vs certified -2 C3 = {:.6e}",
            env.ln_delta0,
            slope,
            -2.0 * c.c3
        ),
    );
    vec![envelope_entry, w4_entry]
}

/// Roundoff floor of `V0` from heading differences of size `theta_scale`.
fn v0_floor(c: &CertificateSet, theta_scale: f64) -> f64 {
    let e = 16.0 * f64::EPSILON * (1.0 + theta_scale);
    c.coupling.lambda_max_d * c.coupling.follower_count() as f64 * e * e
}

fn heading_scale(log: &TrajectoryLog) -> f64 {
    log.records
        .iter()
        .flat_map(|r| std::iter::once(&r.fleet.leader).chain(&r.fleet.followers))
        .map(|p| p.theta.abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Sampled-law certificates
// ---------------------------------------------------------------------------

/// `V0(t_{k+1}) <= varrho^2 V0(t_k)` and `max_{[t_k, t_{k+1}]} V0 = V0(t_k)`.
pub fn check_sampled_contraction(log: &TrajectoryLog, c: &CertificateSet, slack: f64) -> Vec<MonitorEntry> {
    const NAMES: [&str; 2] = ["sampled_contraction", "sampled_interval_max"];
    let Some(t0) = log.sampling_period.filter(|_| log.law == Law::Sampled) else {
        return NAMES.map(|n| MonitorEntry::skipped(n, "sampled-law certificate")).to_vec();
    };
    let s = &c.sampling;
    let rho = match crate::certificates::varrho(t0, s.h1, s.h2) {
        Ok(r) => r,
        Err(_) => {
            let why = format!("T0 = {t0} is not below T1* = {:.6e}; no claim made", s.t1_star);
            return NAMES.map(|n| MonitorEntry::skipped(n, why.clone())).to_vec();
        }
    };
    let floor = v0_floor(c, heading_scale(log));
    let mut contraction = Worst::new();
    let mut interval = Worst::new();
    for pair in log.samples.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let allowed = rho * rho * a.v0 * (1.0 + slack) + floor;
        contraction.see(allowed - b.v0, b.time);
        interval.see(a.v0 * (1.0 + slack) + floor - a.v0_interval_max, a.time);
    }
    vec![
        entry(
            NAMES[0],
            contraction,
            slack,
            format!("varrho = {rho:.10}, {} sampling pairs, roundoff floor {floor:.3e}", log.samples.len().saturating_sub(1)),
        ),
        entry(NAMES[1], interval, slack, "V0 sampled at every integration node".into()),
    ]
}

/// Observed attractivity bookkeeping of the sampled loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAttractivity {
    /// First sampling instant with `|bar_theta| <= C0_bar / (4 C1)`.
    pub t_k0: Option<f64>,
    pub beta: Option<u64>,
    /// Case-1 instants (`|bar_theta(t_k)| <= T0 sqrt(W1(t_k))`) from `t_k0` on.
    pub case1: usize,
    pub case2: usize,
    pub l5: Option<f64>,
    pub l6: Option<f64>,
    /// `sqrt(2 lambda_max / lambda_min) max{L5, L6} r0`.
    pub ugs_bound: Option<f64>,
}

pub fn sampled_attractivity(log: &TrajectoryLog, c: &CertificateSet, r0: f64) -> Option<SampledAttractivity> {
    let t0 = log.sampling_period?;
    let level = c.theta_switch_level();
    let start = log.samples.first()?.time;
    let k0 = log.samples.iter().position(|s| s.theta_norm <= level);
    let t_k0 = k0.map(|k| log.samples[k].time);
    let beta = t_k0.map(|t| ((t - start) / t0 + 1e-9).floor() as u64);
    let (mut case1, mut case2) = (0, 0);
    if let Some(k0) = k0 {
        for s in &log.samples[k0..] {
            match s.w1 {
                Some(w) if s.theta_norm <= t0 * w.max(0.0).sqrt() => case1 += 1,
                Some(_) => case2 += 1,
                None => {}
            }
        }
    }
    let (l5, l6, ugs) = match beta {
        Some(b) => {
            let (l5, l6) = c.l5_l6(t0, b);
            (Some(l5), Some(l6), Some(c.ugs_factor(t0, b) * r0))
        }
        None => (None, None, None),
    };
    Some(SampledAttractivity {
        t_k0,
        beta,
        case1,
        case2,
        l5,
        l6,
        ugs_bound: ugs,
    })
}

/// Case classification, `chi` contraction on Case-1 instants after `t_k0`
/// and the uniform-stability bound, when `T0 < T*`.
pub fn check_sampled_attractivity(log: &TrajectoryLog, c: &CertificateSet, r0: f64, slack: f64) -> MonitorEntry {
    const NAME: &str = "sampled_attractivity";
    if log.law != Law::Sampled {
        return MonitorEntry::skipped(NAME, "sampled-law certificate");
    }
    let Some(obs) = sampled_attractivity(log, c, r0) else {
        return MonitorEntry::skipped(NAME, "no sampling instants");
    };
    let t0 = log.sampling_period.unwrap_or(f64::NAN);
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "none".into());
    let mut detail = format!(
        "t_k0 = {}, beta = {}, case-1 = {}, case-2 = {}, L5 = {}, L6 = {}, UGS bound = {}",
        fmt_opt(obs.t_k0),
        obs.beta.map(|b| b.to_string()).unwrap_or_else(|| "none".into()),
        obs.case1,
        obs.case2,
        fmt_opt(obs.l5),
        fmt_opt(obs.l6),
        fmt_opt(obs.ugs_bound),
    );
    if !(t0 < c.sampling.t_star) {
        detail.push_str(&format!("; T0 = {t0} is not below T* = {:.6e}, no claim made", c.sampling.t_star));
        return MonitorEntry::skipped(NAME, detail);
    }
    let Some(t_k0) = obs.t_k0 else {
        detail.push_str("; switch level never reached within the horizon");
        return MonitorEntry::skipped(NAME, detail);
    };
    let chi = c
        .sampled_constants(t0)
        .ok()
        .and_then(|s| s.chi)
        .unwrap_or(f64::NAN);
    let mut w = Worst::new();
    for pair in log.samples.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.time < t_k0 {
            continue;
        }
        let (Some(wa), Some(wb)) = (a.w1, b.w1) else { continue };
        if a.theta_norm <= t0 * wa.max(0.0).sqrt() {
            w.see(chi * wa.max(0.0).sqrt() * (1.0 + slack) - wb.max(0.0).sqrt(), b.time);
        }
    }
    if let Some(bound) = obs.ugs_bound {
        for r in &log.records {
            w.see(bound * (1.0 + slack) - r.error.norm(), r.time);
        }
    }
    detail.push_str(&format!("; chi = {chi:.10}"));
    entry(NAME, w, slack, detail)
}

// ---------------------------------------------------------------------------
// Tracking goal
// ---------------------------------------------------------------------------

/// Largest Cartesian formation error `|(x_i - x_0 - p_i^x, y_i - y_0 - p_i^y, theta_i - theta_0)|`.
pub fn formation_error(r: &LogRecord, offsets: &[[f64; 2]]) -> f64 {
    let shifted = apply_formation_offsets(&r.fleet, offsets).expect("log offsets match the fleet");
    cartesian_error(&shifted)
        .iter()
        .map(|e| (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt())
        .fold(0.0, f64::max)
}

/// Terminal formation error below `tolerance`, and the error-coordinate
/// bound on the Cartesian error at every log point.
pub fn check_tracking_goal(log: &TrajectoryLog, tolerance: f64) -> Vec<MonitorEntry> {
    let last = log.last();
    let terminal = formation_error(last, &log.offsets);
    let mut goal = Worst::new();
    goal.see(tolerance - terminal, last.time);
    let mut chain = Worst::new();
    for r in &log.records {
        let shifted = apply_formation_offsets(&r.fleet, &log.offsets).expect("log offsets match the fleet");
        let radius = shifted.leader.x.hypot(shifted.leader.y);
        for (i, e) in cartesian_error(&shifted).iter().enumerate() {
            let actual = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
            let bound = cartesian_error_bound(&r.error, i, radius);
            chain.see(bound + 1e-9 * (1.0 + radius + actual) - actual, r.time);
        }
    }
    vec![
        entry(
            "tracking_goal",
            goal,
            tolerance,
            format!("terminal formation error {terminal:.6e} at t = {:.3}", last.time),
        ),
        entry(
            "tracking_error_bound",
            chain,
            1e-9,
            "Cartesian error bounded through the rotated error coordinates".into(),
        ),
    ]
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

/// Runs every monitor enabled in the scenario.
pub fn verify(p: &Prepared, log: &TrajectoryLog) -> MonitorReport {
    let v = &p.config.verification;
    let c = &p.certificates;
    let mut entries = Vec::new();
    if v.assumptions {
        entries.extend(check_assumptions(&p.assessment));
    }
    if v.sandwich {
        entries.extend(check_sandwich(log, c, 1e-9));
    }
    if v.omega_monotone {
        entries.extend(check_omega_monotone(log, c, v.inequality_slack, v.derivative_slack));
    }
    if v.k_exponential {
        entries.extend(check_k_exponential(log, c, &p.envelope, v.derivative_slack));
    }
    if v.sampled_contraction {
        entries.extend(check_sampled_contraction(log, c, v.inequality_slack));
    }
    if v.sampled_attractivity {
        entries.push(check_sampled_attractivity(log, c, p.r0, v.inequality_slack));
    }
    if v.tracking_goal {
        entries.extend(check_tracking_goal(log, v.tracking_tolerance));
    }
    MonitorReport { entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, -1.0, -3.0, -5.0];
        assert!((ls_slope(&xs, &ys) + 2.0).abs() < 1e-14);
    }

    #[test]
    fn worst_tracks_minimum() {
        let mut w = Worst::new();
        w.see(3.0, 0.0);
        w.see(-1.0, 2.0);
        w.see(0.5, 3.0);
        assert_eq!((w.margin, w.time), (-1.0, Some(2.0)));
        assert!(!w.ok());
    }

    #[test]
    fn report_flags_failures_only() {
        let mut r = MonitorReport::default();
        r.entries.push(MonitorEntry::skipped("a", "x"));
        assert!(!r.any_failed());
        r.entries.push(MonitorEntry {
            status: MonitorStatus::Fail,
            ..MonitorEntry::skipped("b", "y")
        });
        assert!(r.any_failed());
        assert!(r.summary_table().contains("fail"));
    }
}
