//! Certify, run and sweep a scenario, writing reports and trajectories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::report::{certificate_report, envelope_report, monitor_report, FlatReport};
use crate::scenario::{Prepared, ScenarioConfig};
use crate::simulation::{sup_error_gap, Law, TrajectoryLog};
use crate::verification::{formation_error, ls_slope, verify, MonitorReport, MonitorStatus};

pub const CERTIFICATE_FILE: &str = "certificate.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";

/// Command-line adjustments applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub law: Option<Law>,
    pub log_every: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(law) = self.law {
            cfg.controller.law = law;
        }
        if let Some(s) = self.log_every {
            cfg.simulation.log_every = Some(s);
        }
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct CertifyOutcome {
    pub prepared: Prepared,
    pub report: FlatReport,
    pub path: Option<PathBuf>,
}

impl CertifyOutcome {
    /// One paragraph on whether the configured period is certified.
    pub fn sampling_statement(&self) -> String {
        let c = &self.prepared.certificates;
        let t_star = c.sampling.t_star;
        match &c.sampled {
            Some(s) if s.inside_certified_region => {
                format!("T0 = {} is inside the certified region (T* = {:e}).", s.t0, t_star)
            }
            Some(s) => format!(
                "T0 = {} is outside the certified region: T* = {:e} is {:.3e} times smaller. \
                 The certificate is sufficient, not necessary; simulation may still converge.",
                s.t0,
                t_star,
                s.t0 / t_star
            ),
            None => format!("No sampling period configured; T* = {t_star:e}."),
        }
    }
}

/// Builds the certificate set and writes it as a flat report.
pub fn command_certify(cfg: ScenarioConfig, out_dir: Option<&Path>) -> Result<CertifyOutcome> {
    let prepared = Prepared::new(cfg)?;
    let mut report = certificate_report(&prepared.certificates);
    report.extend(envelope_report(&prepared.envelope));
    let path = match out_dir {
        Some(dir) => Some(write_file(dir, CERTIFICATE_FILE, &report.to_string())?),
        None => None,
    };
    Ok(CertifyOutcome {
        prepared,
        report,
        path,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub prepared: Prepared,
    pub log: TrajectoryLog,
    pub monitors: MonitorReport,
    pub report: FlatReport,
    pub csv_path: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
}

impl RunOutcome {
    /// Zero unless an enabled monitor failed.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.monitors.any_failed())
    }
}

/// Certifies, simulates and verifies; writes the trajectory CSV and the
/// combined report when an output directory is given.
pub fn command_run(cfg: ScenarioConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let prepared = Prepared::new(cfg)?;
    run_prepared(prepared, out_dir)
}

/// [`command_run`] for an already prepared scenario.
pub fn run_prepared(prepared: Prepared, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let log = prepared.simulate()?;
    let monitors = verify(&prepared, &log);
    let mut report = FlatReport::new();
    report.text("run.law", log.law);
    report.number("run.step", log.step);
    report.number("run.horizon", log.last().time);
    report.number("run.terminal_formation_error", formation_error(log.last(), &log.offsets));
    report.extend(certificate_report(&prepared.certificates));
    report.extend(envelope_report(&prepared.envelope));
    report.extend(monitor_report(&monitors));

    let (mut csv_path, mut report_path) = (None, None);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let path = dir.join(TRAJECTORY_FILE);
        log.write_csv(std::io::BufWriter::new(fs::File::create(&path)?))?;
        csv_path = Some(path);
        report_path = Some(write_file(dir, REPORT_FILE, &report.to_string())?);
    }
    Ok(RunOutcome {
        prepared,
        log,
        monitors,
        report,
        csv_path,
        report_path,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    SamplingPeriod,
    KV,
    KOmega,
    Step,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::SamplingPeriod => "T0",
            SweepParam::KV => "k_v",
            SweepParam::KOmega => "k_omega",
            SweepParam::Step => "h",
        }
    }

    /// The config with this parameter set to `value`. A `T0` row forces the
    /// sampled law and resets the step to its default.
    pub fn apply(self, cfg: &ScenarioConfig, value: f64) -> ScenarioConfig {
        let mut c = cfg.clone();
        match self {
            SweepParam::SamplingPeriod => {
                c.controller.law = Law::Sampled;
                c.controller.sampling_period = Some(value);
                c.simulation.step = None;
            }
            SweepParam::KV => c.controller.k_v = value,
            SweepParam::KOmega => c.controller.k_omega = value,
            SweepParam::Step => c.simulation.step = Some(value),
        }
        c
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T0" | "t0" => Ok(SweepParam::SamplingPeriod),
            "k_v" => Ok(SweepParam::KV),
            "k_omega" => Ok(SweepParam::KOmega),
            "h" => Ok(SweepParam::Step),
            other => Err(Error::Parameter {
                name: "param",
                reason: format!("`{other}` is not one of T0, k_v, k_omega, h"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepMetrics {
    pub terminal_error: f64,
    /// Negated slope of a log-linear fit to the heading error norm.
    pub theta_decay_rate: f64,
    /// Negated slope of a log-linear fit to the full error norm over the
    /// second half of the run.
    pub error_decay_rate: f64,
    /// Sup-norm gap to the continuous-law run of the same config; sampled rows only.
    pub gap_to_continuous: Option<f64>,
    pub failed_monitors: Vec<String>,
    pub statuses: Vec<(String, MonitorStatus)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub outcome: std::result::Result<SweepMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
}

/// Fit of `ln |x(t)|` against `t` over samples with `|x|` in `(floor, cap]`;
/// returns the negated slope, or NaN with fewer than three usable samples.
pub fn log_linear_decay(times: &[f64], norms: &[f64], floor: f64, cap: f64) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(norms)
        .filter(|(_, n)| **n > floor && **n <= cap)
        .map(|(t, n)| (*t, n.ln()))
        .unzip();
    if xs.len() < 3 {
        return f64::NAN;
    }
    -ls_slope(&xs, &ys)
}

/// Observed heading decay: fit over the tail where the norm has fallen two
/// decades below its start but is still far above roundoff.
pub fn heading_decay_rate(log: &TrajectoryLog) -> f64 {
    let times: Vec<f64> = log.records.iter().map(|r| r.time).collect();
    let norms: Vec<f64> = log.records.iter().map(|r| norm(&r.error.bar_theta)).collect();
    let start = norms.first().copied().unwrap_or(0.0);
    log_linear_decay(&times, &norms, 1e-11, 1e-2 * start)
}

fn error_decay_rate(log: &TrajectoryLog) -> f64 {
    let end = log.last().time;
    let tail: Vec<_> = log.records.iter().filter(|r| r.time >= 0.5 * end).collect();
    let times: Vec<f64> = tail.iter().map(|r| r.time).collect();
    let norms: Vec<f64> = tail.iter().map(|r| r.error.norm()).collect();
    log_linear_decay(&times, &norms, 1e-13, f64::INFINITY)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sweep_row(cfg: &ScenarioConfig, param: SweepParam, value: f64) -> Result<SweepMetrics> {
    let row_cfg = param.apply(cfg, value);
    let prepared = Prepared::new(row_cfg.clone())?;
    let log = prepared.simulate()?;
    let monitors = verify(&prepared, &log);
    let gap_to_continuous = if log.law == Law::Sampled {
        let mut base = row_cfg;
        base.controller.law = Law::Continuous;
        base.simulation.log_every = Some(cfg.log_spacing());
        let baseline = Prepared::new(base)?;
        Some(sup_error_gap(&log, &crate::simulation::run_scenario(&baseline.setup, None)?))
    } else {
        None
    };
    Ok(SweepMetrics {
        terminal_error: formation_error(log.last(), &log.offsets),
        theta_decay_rate: heading_decay_rate(&log),
        error_decay_rate: error_decay_rate(&log),
        gap_to_continuous,
        failed_monitors: monitors
            .entries
            .iter()
            .filter(|e| e.status == MonitorStatus::Fail)
            .map(|e| e.name.clone())
            .collect(),
        statuses: monitors.entries.iter().map(|e| (e.name.clone(), e.status)).collect(),
    })
}

/// One independent run per value, executed on scoped threads.
///
/// Rows keep the base config's log spacing so sampled rows line up with
/// their continuous baselines. A row that cannot be prepared or simulated
/// carries its error message instead of metrics.
pub fn command_sweep(cfg: &ScenarioConfig, param: SweepParam, values: &[f64]) -> SweepSummary {
    let mut base = cfg.clone();
    base.simulation.log_every = Some(cfg.log_spacing());
    let rows = std::thread::scope(|s| {
        let handles: Vec<_> = values
            .iter()
            .map(|&v| {
                let base = &base;
                s.spawn(move || SweepRow {
                    value: v,
                    outcome: sweep_row(base, param, v).map_err(|e| e.to_string()),
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    SweepSummary { param, rows }
}

impl SweepSummary {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:>12}  {:>14}  {:>12}  {:>12}  {:>14}  monitors\n",
            self.param.name(),
            "terminal err",
            "theta rate",
            "error rate",
            "gap vs cont."
        );
        for r in &self.rows {
            match &r.outcome {
                Ok(m) => {
                    let gap = m.gap_to_continuous.map(|g| format!("{g:.6e}")).unwrap_or_else(|| "-".into());
                    let monitors = if m.failed_monitors.is_empty() {
                        "no failures".to_string()
                    } else {
                        format!("failed: {}", m.failed_monitors.join(", "))
                    };
                    let _ = writeln!(
                        s,
                        "{:>12}  {:>14.6e}  {:>12.6}  {:>12.6}  {:>14}  {}",
                        r.value, m.terminal_error, m.theta_decay_rate, m.error_decay_rate, gap, monitors
                    );
                }
                Err(e) => {
                    let _ = writeln!(s, "{:>12}  error: {}", r.value, e.replace('\n', "; "));
                }
            }
        }
        s
    }

    pub fn report(&self) -> FlatReport {
        let mut f = FlatReport::new();
        f.text("sweep.param", self.param.name());
        f.text("sweep.rows", self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            let base = format!("sweep.row{i}");
            f.number(format!("{base}.value"), r.value);
            match &r.outcome {
                Ok(m) => {
                    f.number(format!("{base}.terminal_error"), m.terminal_error);
                    f.number(format!("{base}.theta_decay_rate"), m.theta_decay_rate);
                    f.number(format!("{base}.error_decay_rate"), m.error_decay_rate);
                    f.optional(format!("{base}.gap_to_continuous"), m.gap_to_continuous);
                    for (name, status) in &m.statuses {
                        f.text(format!("{base}.monitor.{name}"), status);
                    }
                }
                Err(e) => f.text(format!("{base}.error"), e.replace('\n', "; ")),
            }
        }
        f
    }

    pub fn any_failed(&self) -> bool {
        self.rows
            .iter()
            .any(|r| r.outcome.as_ref().map_or(true, |m| !m.failed_monitors.is_empty()))
    }

    /// Writes `sweep_<param>.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        write_file(dir, &format!("sweep_{}.txt", self.param.name()), &self.report().to_string())
    }
}

/// Parses a comma- or whitespace-separated list of numbers. An empty string
/// gives an empty list.
pub fn parse_values(src: &str) -> Result<Vec<f64>> {
    src.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>().map_err(|e| Error::Parameter {
                name: "values",
                reason: format!("`{s}`: {e}"),
            })
        })
        .collect()
}
