//! Lyapunov functions and every constant of the stability certificates.
//!
//! Orientation errors are certified by `V0 = 1/2 bar_theta^T D bar_theta`.
//! The position errors use `V1 = 1/2 (bar_x^T D bar_x + bar_y^T D bar_y)`,
//! strictified with the excitation weight
//!
//! ```text
//! phi(t) = 1 + (2/T) int_{t-T}^{t} int_{s}^{t} omega_0(tau)^2 dtau ds
//! W1     = (phi(t) + gamma) V1 - omega_0(t) bar_x^T D bar_y
//! W2     = ln(1 + W1),   W3 = W2 - 1 + exp(-W2),   Omega = W3 + sigma V0
//! ```
//!
//! The double integral collapses to `int_{t-T}^{t} (tau - t + T) omega_0^2`
//! by swapping the order of integration. Before `t = 0` the angular velocity
//! is continued by `omega_0(0)`.
//!
//! All gains (`gamma`, `sigma`) are taken at their lower bounds, which makes
//! the derived rates and sampling bounds as large as the formulas allow.

use crate::controllers::ControllerGains;
use crate::error::{Error, Result};
use crate::kinematics::{ErrorState, LeaderSignal};
use crate::network::CouplingCertificate;
use crate::quadrature::integrate;

/// Absolute quadrature tolerance used for `phi` and window integrals.
pub const QUADRATURE_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Excitation weight phi(t)
// ---------------------------------------------------------------------------

fn window_integral<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    // omega_0 is continued by a constant before 0; split at the kink
    if a < 0.0 && b > 0.0 {
        Ok(integrate(&f, a, 0.0, QUADRATURE_TOL)? + integrate(&f, 0.0, b, QUADRATURE_TOL)?)
    } else {
        integrate(f, a, b, QUADRATURE_TOL)
    }
}

/// `phi(t)` by adaptive quadrature.
pub fn phi(t: f64, signal: &LeaderSignal) -> Result<f64> {
    let tw = signal.pe_window;
    let a = t - tw;
    let inner = window_integral(
        |tau| {
            let w = signal.omega_extended(tau);
            (tau - a) * w * w
        },
        a,
        t,
    )?;
    Ok(1.0 + 2.0 / tw * inner)
}

/// `d phi / dt = 2 omega_0(t)^2 - (2/T) int_{t-T}^{t} omega_0^2`.
pub fn phi_dot(t: f64, signal: &LeaderSignal) -> Result<f64> {
    let tw = signal.pe_window;
    let w = signal.omega_extended(t);
    let energy = window_integral(
        |tau| {
            let w = signal.omega_extended(tau);
            w * w
        },
        t - tw,
        t,
    )?;
    Ok(2.0 * w * w - 2.0 / tw * energy)
}

/// Anything that can supply `phi(t)`.
pub trait PhiSource {
    fn phi(&self, t: f64) -> f64;
}

/// Direct quadrature; panics only if the quadrature fails, which cannot happen
/// for the bounded signals accepted by [`LeaderSignal::validate`].
#[derive(Debug, Clone, Copy)]
pub struct ExactPhi<'a>(pub &'a LeaderSignal);

impl PhiSource for ExactPhi<'_> {
    fn phi(&self, t: f64) -> f64 {
        phi(t, self.0).expect("phi quadrature")
    }
}

/// `phi` tabulated on a uniform grid with cubic Hermite interpolation using
/// the exact derivative at the nodes.
#[derive(Debug, Clone)]
pub struct PhiTable {
    spacing: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
    /// Largest midpoint interpolation error found while building.
    pub max_interpolation_error: f64,
}

impl PhiTable {
    /// Required interpolation accuracy.
    pub const TOLERANCE: f64 = 1e-7;

    /// Tabulates `phi` on `[0, horizon]`, refining the grid until every
    /// midpoint agrees with direct quadrature to [`PhiTable::TOLERANCE`].
    pub fn build(signal: &LeaderSignal, horizon: f64) -> Result<Self> {
        // the backward continuation puts a derivative kink at t = T; keep it
        // on a grid node
        let tw = signal.pe_window;
        let mut per_window = (tw / 0.05).ceil().max(1.0);
        loop {
            let spacing = tw / per_window;
            let table = Self::build_with_spacing(signal, horizon, spacing)?;
            if table.max_interpolation_error <= Self::TOLERANCE || per_window > 1e4 {
                return Ok(table);
            }
            per_window *= 2.0;
        }
    }

    pub fn build_with_spacing(signal: &LeaderSignal, horizon: f64, spacing: f64) -> Result<Self> {
        let nodes = (horizon.max(0.0) / spacing).ceil() as usize + 2;
        let mut values = Vec::with_capacity(nodes);
        let mut slopes = Vec::with_capacity(nodes);
        for k in 0..nodes {
            let t = k as f64 * spacing;
            values.push(phi(t, signal)?);
            slopes.push(phi_dot(t, signal)?);
        }
        let mut table = Self {
            spacing,
            values,
            slopes,
            max_interpolation_error: 0.0,
        };
        let mut worst: f64 = 0.0;
        for k in 0..nodes - 1 {
            let t = (k as f64 + 0.5) * spacing;
            worst = worst.max((table.interpolate(t) - phi(t, signal)?).abs());
        }
        table.max_interpolation_error = worst;
        Ok(table)
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Covered interval end.
    pub fn horizon(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.spacing
    }

    fn interpolate(&self, t: f64) -> f64 {
        let last = self.values.len() - 2;
        let k = ((t / self.spacing).floor().max(0.0) as usize).min(last);
        let h = self.spacing;
        let s = (t - k as f64 * h) / h;
        let (p0, p1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * p0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * p1
            + (s3 - s2) * m1
    }
}

impl PhiSource for PhiTable {
    fn phi(&self, t: f64) -> f64 {
        self.interpolate(t)
    }
}

// ---------------------------------------------------------------------------
// Persistency of excitation
// ---------------------------------------------------------------------------

/// Minimum window energy found by [`pe_level`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeLevel {
    pub mu_hat: f64,
    pub argmin: f64,
}

fn window_energy(signal: &LeaderSignal, start: f64) -> Result<f64> {
    window_integral(
        |tau| {
            let w = signal.omega_extended(tau);
            w * w
        },
        start,
        start + signal.pe_window,
    )
}

fn min_window_energy(signal: &LeaderSignal, from: f64, to: f64) -> Result<PeLevel> {
    let tw = signal.pe_window;
    let dt = tw / 50.0;
    let steps = ((to - from) / dt).ceil().max(1.0) as usize;
    let mut best = PeLevel {
        mu_hat: f64::INFINITY,
        argmin: from,
    };
    let mut best_k = 0;
    for k in 0..=steps {
        let t = (from + k as f64 * dt).min(to);
        let e = window_energy(signal, t)?;
        if e < best.mu_hat {
            best = PeLevel { mu_hat: e, argmin: t };
            best_k = k;
        }
    }
    // golden-section polish between the grid neighbours of the minimum
    let mut a = (from + (best_k as f64 - 1.0) * dt).max(from);
    let mut b = (from + (best_k as f64 + 1.0) * dt).min(to);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = window_energy(signal, c)?;
    let mut fd = window_energy(signal, d)?;
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = window_energy(signal, c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = window_energy(signal, d)?;
        }
    }
    let m = 0.5 * (a + b);
    let fm = window_energy(signal, m)?;
    if fm < best.mu_hat {
        best = PeLevel { mu_hat: fm, argmin: m };
    }
    Ok(best)
}

/// `mu_hat = min_t int_t^{t+T} omega_0^2` over window starts in `[0, horizon]`.
pub fn pe_level(signal: &LeaderSignal, horizon: f64) -> Result<PeLevel> {
    if !(signal.pe_window > 0.0) {
        return Err(Error::Parameter {
            name: "pe_window",
            reason: "must be positive".into(),
        });
    }
    let level = min_window_energy(signal, 0.0, horizon)?;
    if level.mu_hat <= 0.0 {
        return Err(Error::PersistencyOfExcitation(format!(
            "window energy vanishes at t = {}",
            level.argmin
        )));
    }
    Ok(level)
}

/// Same as [`pe_level`] but also over the windows `[t - T, t]` with `t` in
/// `[0, T)`, using the backward continuation of `omega_0` that `phi` relies on.
pub fn pe_level_extended(signal: &LeaderSignal, horizon: f64) -> Result<PeLevel> {
    let level = min_window_energy(signal, -signal.pe_window, horizon)?;
    if level.mu_hat <= 0.0 {
        return Err(Error::PersistencyOfExcitation(format!(
            "window energy vanishes at t = {}",
            level.argmin
        )));
    }
    Ok(level)
}

// ---------------------------------------------------------------------------
// Scalar constants
// ---------------------------------------------------------------------------

/// Slack `epsilon` of the cross-term splitting and the resulting `gamma`.
pub fn gamma(cert: &CouplingCertificate, signal: &LeaderSignal, gains: &ControllerGains) -> (f64, f64) {
    let wb = signal.omega_bar;
    let (t, mu) = (signal.pe_window, signal.pe_level);
    let lmax = cert.lambda_max_d;
    let epsilon = t / mu * (wb + gains.k_v * wb * lmax);
    let bracket = gains.k_v * epsilon * wb * cert.norm_h.powi(2) / 2.0
        + epsilon * wb * lmax / 2.0
        + 2.0 * wb * wb * lmax;
    let g = (2.0 / (gains.k_v * cert.lambda_min_q) * bracket - 1.0).max(wb);
    (g, epsilon)
}

/// Coefficients of the perturbation term `(C1 V1 + C2 sqrt(V1)) |bar_theta|`.
pub fn claim1_coefficients(
    cert: &CouplingCertificate,
    signal: &LeaderSignal,
    gains: &ControllerGains,
    gamma: f64,
    leader_bound: f64,
) -> (f64, f64) {
    let wb = signal.omega_bar;
    let c1 = 2.0 * gains.k_omega * wb * cert.norm_h;
    let c2 = 2.0
        * std::f64::consts::SQRT_2
        * gains.k_omega
        * leader_bound
        * (1.0 + gamma + signal.pe_window * wb + wb)
        * cert.lambda_max_d.sqrt()
        * cert.norm_h;
    (c1, c2)
}

/// `sup_{u >= 0} (c1 u^2 + c2 u) / (1 + u^2)`.
///
/// Log-spaced grid search refined by golden section, with the `u -> inf`
/// asymptote `c1` as a competing candidate.
pub fn sup_ratio(c1: f64, c2: f64) -> f64 {
    let f = |u: f64| (c1 * u * u + c2 * u) / (1.0 + u * u);
    // the interior critical point is at most 1 + 2 c1 / c2
    let upper = 10.0 * (1.0 + c2 / c1.max(f64::EPSILON) + c1 / c2.max(f64::EPSILON));
    let lower = 1e-8_f64.min(upper * 1e-12);
    let n = 10_000;
    let (la, lb) = (lower.ln(), upper.ln());
    let mut best_u = 0.0;
    let mut best = 0.0_f64;
    let grid = |k: usize| (la + (lb - la) * k as f64 / (n - 1) as f64).exp();
    let mut best_k = 0;
    for k in 0..n {
        let u = grid(k);
        let v = f(u);
        if v > best {
            best = v;
            best_u = u;
            best_k = k;
        }
    }
    if best_u > 0.0 {
        let mut a = grid(best_k.saturating_sub(1));
        let mut b = grid((best_k + 1).min(n - 1));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..200 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d);
            }
        }
        best = best.max(f(0.5 * (a + b))).max(fc).max(fd);
    }
    best.max(c1)
}

/// `(C0, C0_bar)` with `C0_bar = mu / (T (1 + T omega_bar + 2 gamma))`.
pub fn supply_coefficients(c1: f64, c2: f64, gamma: f64, signal: &LeaderSignal) -> (f64, f64) {
    let t = signal.pe_window;
    let c0 = sup_ratio(c1, c2);
    let c0_bar = signal.pe_level / (t * (1.0 + t * signal.omega_bar + 2.0 * gamma));
    (c0, c0_bar)
}

/// Weight of `V0` in `Omega`, at its lower bound.
pub fn omega_weight_sigma(c0: f64, c0_bar: f64, lambda_min_q: f64, k_omega: f64) -> f64 {
    2.0 * c0 * c0 / (lambda_min_q * k_omega * c0_bar)
}

/// `W3 = ln(1 + W1) - W1 / (1 + W1)`, evaluated by its series for small `W1`.
pub fn w3_from_w1(w1: f64) -> f64 {
    if w1.abs() < 1e-2 {
        // sum_{k>=2} (-1)^k (k-1)/k w^k
        let mut term = w1 * w1;
        let mut sum = 0.0;
        for k in 2..14 {
            let kf = k as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (kf - 1.0) / kf * term;
            term *= w1;
        }
        sum
    } else {
        w1.ln_1p() - w1 / (1.0 + w1)
    }
}

// ---------------------------------------------------------------------------
// Sampling bounds
// ---------------------------------------------------------------------------

/// Constants of the admissible sampling period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingBounds {
    pub h1: f64,
    pub h2: f64,
    pub t1_star: f64,
    pub c4: f64,
    pub c5: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub t2_star: f64,
    pub t_star: f64,
}

/// Positive root of `a x^2 + b x - c = 0` written without cancellation.
pub fn positive_root(a: f64, b: f64, c: f64) -> f64 {
    2.0 * c / (b + (b * b + 4.0 * a * c).sqrt())
}

#[allow(clippy::too_many_arguments)]
pub fn sampling_bounds(
    cert: &CouplingCertificate,
    signal: &LeaderSignal,
    gains: &ControllerGains,
    gamma: f64,
    c1: f64,
    c2: f64,
    c0_bar: f64,
    leader_bound: f64,
) -> SamplingBounds {
    let (ko, kv) = (gains.k_omega, gains.k_v);
    let (lmin, lmax) = (cert.lambda_min_d, cert.lambda_max_d);
    let nh = cert.norm_h;
    let wb = signal.omega_bar;
    let t = signal.pe_window;
    let h1 = ko * cert.lambda_min_q / lmax;
    let h2 = 2.0 * ko * ko * nh * cert.norm_dh / lmin;
    let c4 = 2.0 * kv * (1.0 + gamma + t * wb + wb) * lmax.sqrt() * nh;
    let c5 = std::f64::consts::SQRT_2 * ko * leader_bound * nh;
    let ratio = (lmax / lmin).sqrt();
    let l1 = kv * nh * ratio;
    let l2 = 2.0 * ko * leader_bound * nh * ratio;
    let l3 = (2.0 / lmin).sqrt() * (kv * nh + ko * c0_bar / (4.0 * c1) * nh + wb);
    let root = positive_root(c4 * c5, c2 + c4 * l3, 0.75 * c0_bar);
    let t2_star = (3.0 * c0_bar / (4.0 * c2)).min(root);
    let t1_star = h1 / h2;
    SamplingBounds {
        h1,
        h2,
        t1_star,
        c4,
        c5,
        l1,
        l2,
        l3,
        t2_star,
        t_star: t1_star.min(t2_star),
    }
}

/// Per-sample contraction of `sqrt(V0)`; requires `0 < T0 < h1 / h2`.
pub fn varrho(t0: f64, h1: f64, h2: f64) -> Result<f64> {
    if !(t0 > 0.0 && t0 < h1 / h2) {
        return Err(Error::Parameter {
            name: "T0",
            reason: format!("varrho needs 0 < T0 < T1* = {:e}, got {t0}", h1 / h2),
        });
    }
    let r = h2 * t0 / h1;
    Ok((-0.5 * h1 * t0).exp() * (1.0 - r) + r)
}

/// `C6 = C4 C5 T0^2 + (C4 L3 + C2) T0`.
pub fn c6(t0: f64, c2: f64, c4: f64, c5: f64, l3: f64) -> f64 {
    c4 * c5 * t0 * t0 + (c4 * l3 + c2) * t0
}

/// Per-sample contraction of `sqrt(W1)` on Case-1 instants; requires
/// `0 < T0 < T2*`.
pub fn chi(t0: f64, c0_bar: f64, c6: f64, t2_star: f64) -> Result<f64> {
    if !(t0 > 0.0 && t0 < t2_star) {
        return Err(Error::Parameter {
            name: "T0",
            reason: format!("chi needs 0 < T0 < T2* = {t2_star:e}, got {t0}"),
        });
    }
    let r = 4.0 * c6 / (3.0 * c0_bar);
    Ok((-3.0 / 8.0 * c0_bar * t0).exp() * (1.0 - r) + r)
}

/// Both contractions, each `None` when its precondition fails.
pub fn per_sample_contractions(
    t0: f64,
    bounds: &SamplingBounds,
    c0_bar: f64,
    c2: f64,
) -> (Option<f64>, Option<f64>) {
    let rho = varrho(t0, bounds.h1, bounds.h2).ok();
    let c6v = c6(t0, c2, bounds.c4, bounds.c5, bounds.l3);
    let x = chi(t0, c0_bar, c6v, bounds.t2_star).ok();
    (rho, x)
}

// ---------------------------------------------------------------------------
// Certificate set
// ---------------------------------------------------------------------------

/// Constants that depend on the sampling period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledConstants {
    pub t0: f64,
    pub varrho: Option<f64>,
    pub c6: f64,
    pub chi: Option<f64>,
    pub l4: f64,
    pub inside_certified_region: bool,
}

/// Every constant of the continuous and sampled-data certificates.
#[derive(Debug, Clone)]
pub struct CertificateSet {
    pub coupling: CouplingCertificate,
    pub signal: LeaderSignal,
    pub gains: ControllerGains,
    /// Leader coordinate bound `M`.
    pub leader_bound: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub c1: f64,
    pub c2: f64,
    pub c0: f64,
    pub c0_bar: f64,
    pub sigma: f64,
    pub c3: f64,
    /// `1 + T omega_bar`.
    pub phi_max: f64,
    /// `1 + T omega_bar + 2 gamma`, the upper sandwich factor of `W1`.
    pub sandwich_upper: f64,
    pub sampling: SamplingBounds,
    pub sampled: Option<SampledConstants>,
}

impl CertificateSet {
    pub fn build(
        coupling: CouplingCertificate,
        signal: LeaderSignal,
        gains: ControllerGains,
        leader_bound: f64,
        sampling_period: Option<f64>,
    ) -> Result<Self> {
        gains.validate()?;
        signal.validate()?;
        if !(coupling.lambda_min_q > 0.0) {
            return Err(Error::ScalingFailed {
                lambda_min: coupling.lambda_min_q,
            });
        }
        let (g, epsilon) = gamma(&coupling, &signal, &gains);
        let (c1, c2) = claim1_coefficients(&coupling, &signal, &gains, g, leader_bound);
        let (c0, c0_bar) = supply_coefficients(c1, c2, g, &signal);
        let sigma = omega_weight_sigma(c0, c0_bar, coupling.lambda_min_q, gains.k_omega);
        let c3 = (c0_bar / 4.0)
            .min(gains.k_omega * coupling.lambda_min_q / (4.0 * coupling.lambda_max_d));
        let sampling = sampling_bounds(&coupling, &signal, &gains, g, c1, c2, c0_bar, leader_bound);
        let t = signal.pe_window;
        let mut set = Self {
            phi_max: 1.0 + t * signal.omega_bar,
            sandwich_upper: 1.0 + t * signal.omega_bar + 2.0 * g,
            coupling,
            signal,
            gains,
            leader_bound,
            gamma: g,
            epsilon,
            c1,
            c2,
            c0,
            c0_bar,
            sigma,
            c3,
            sampling,
            sampled: None,
        };
        if let Some(t0) = sampling_period {
            set.sampled = Some(set.sampled_constants(t0)?);
        }
        Ok(set)
    }

    pub fn sampled_constants(&self, t0: f64) -> Result<SampledConstants> {
        if !(t0 > 0.0 && t0.is_finite()) {
            return Err(Error::Parameter {
                name: "T0",
                reason: format!("must be positive, got {t0}"),
            });
        }
        let (rho, x) = per_sample_contractions(t0, &self.sampling, self.c0_bar, self.c2);
        Ok(SampledConstants {
            t0,
            varrho: rho,
            c6: c6(t0, self.c2, self.sampling.c4, self.sampling.c5, self.sampling.l3),
            chi: x,
            l4: self.l4(t0),
            inside_certified_region: t0 < self.sampling.t_star,
        })
    }

    /// `mu / (T C0_bar) = 1 + T omega_bar + 2 gamma`.
    pub fn mu_over_t_c0bar(&self) -> f64 {
        self.signal.pe_level / (self.signal.pe_window * self.c0_bar)
    }

    pub fn l4(&self, t0: f64) -> f64 {
        let s = &self.sampling;
        self.mu_over_t_c0bar().sqrt()
            * ((1.0 / t0 + s.l1) * (2.0 / self.coupling.lambda_min_d).sqrt() + t0 * s.l2)
    }

    /// `(L5, L6)` for an observed switch index `beta`.
    pub fn l5_l6(&self, t0: f64, beta: u64) -> (f64, f64) {
        let s = &self.sampling;
        let l5 = self.mu_over_t_c0bar().sqrt() * (1.0 + t0 * s.l1).powf(beta as f64 + 1.0);
        let l6 = s.l2 * l5 / s.l1 + self.l4(t0) + 1.0;
        (l5, l6)
    }

    /// Factor `sqrt(2 lambda_max(D) / lambda_min(D)) max{L5, L6}` of the
    /// uniform-stability bound of the sampled loop.
    pub fn ugs_factor(&self, t0: f64, beta: u64) -> f64 {
        let (l5, l6) = self.l5_l6(t0, beta);
        (2.0 * self.coupling.lambda_max_d / self.coupling.lambda_min_d).sqrt() * l5.max(l6)
    }

    /// `C0_bar / (4 C1)`: orientation error level that starts the
    /// attractivity phase of the sampled loop.
    pub fn theta_switch_level(&self) -> f64 {
        self.c0_bar / (4.0 * self.c1)
    }

    pub fn envelope(&self, r0: f64) -> Envelope {
        exponential_envelope(r0, self)
    }
}

// ---------------------------------------------------------------------------
// K-exponential envelope
// ---------------------------------------------------------------------------

/// Class-K envelope `M0(r0) exp(-C3 (t - t0))` and the quantities it is
/// built from.
///
/// The large-error branch grows like `exp(r0^2)`, so every quantity from
/// `delta2` onwards is also kept as a natural logarithm. The plain values are
/// `+inf` when they do not fit in a double; the envelope is then flagged
/// vacuous, although the log forms still allow exact comparisons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub r0: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta: f64,
    pub delta_bar: f64,
    pub delta0: f64,
    pub m0: f64,
    pub c3: f64,
    pub ln_delta2: f64,
    pub ln_delta: f64,
    pub ln_delta_bar: f64,
    pub ln_delta0: f64,
    pub ln_m0: f64,
    pub vacuous: bool,
}

/// `ln(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(exp(x) - 1)` for `x >= 0`.
fn ln_expm1(x: f64) -> f64 {
    if x > 1.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

pub fn exponential_envelope(r0: f64, c: &CertificateSet) -> Envelope {
    let cp = &c.coupling;
    let (lmin, lmax) = (cp.lambda_min_d, cp.lambda_max_d);
    let (t, mu) = (c.signal.pe_window, c.signal.pe_level);
    let ko = c.gains.k_omega;
    let a = c.mu_over_t_c0bar().max(c.sigma);

    let delta1 = (lmax / lmin * r0 * r0 + 16.0 * (lmax * a).sqrt() / lmin * r0).sqrt();
    let exponent = lmax * a * r0 * r0;
    let ln_delta2 = 0.5 * (2f64.ln() + ln_expm1(exponent) - (lmin * c.sigma.min(1.0)).ln());
    let ln_delta = delta1.ln().max(ln_delta2);
    let ln_delta_bar = log_add_exp(
        c.c1.ln() + 0.5 * (lmax / 2.0).ln() + ln_delta,
        c.c2.ln(),
    );
    let gain = 2.0 * t / (mu * ko * cp.lambda_min_q);
    let ln_delta0 = gain.ln() + 2.0 * ln_delta_bar;
    let floor = (gain * c.c2 * c.c2).min(1.0);
    let ln_m0 = 0.5 * (c.mu_over_t_c0bar().ln().max(ln_delta0) + lmax.ln() - floor.ln() - lmin.ln()) + r0.ln();
    let m0 = ln_m0.exp();
    let delta0 = ln_delta0.exp();
    Envelope {
        r0,
        delta1,
        delta2: ln_delta2.exp(),
        delta: ln_delta.exp(),
        delta_bar: ln_delta_bar.exp(),
        delta0,
        m0,
        c3: c.c3,
        ln_delta2,
        ln_delta,
        ln_delta_bar,
        ln_delta0,
        ln_m0,
        vacuous: !(m0.is_finite() && delta0.is_finite()),
    }
}

// ---------------------------------------------------------------------------
// Lyapunov evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LyapunovEvaluation {
    pub v0: f64,
    pub v1: f64,
    pub phi: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub omega: f64,
    /// `NaN` when no finite `Delta0` is available.
    pub w4: f64,
}

fn d_quad(d: &nalgebra::DVector<f64>, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).zip(d.iter()).map(|((x, y), di)| x * di * y).sum()
}

/// `V0`, `V1` only; cheap enough for every integration step.
pub fn v0_v1(err: &ErrorState, d: &nalgebra::DVector<f64>) -> (f64, f64) {
    let v0 = 0.5 * d_quad(d, &err.bar_theta, &err.bar_theta);
    let v1 = 0.5 * (d_quad(d, &err.bar_x, &err.bar_x) + d_quad(d, &err.bar_y, &err.bar_y));
    (v0, v1)
}

pub fn evaluate_lyapunov<P: PhiSource + ?Sized>(
    t: f64,
    err: &ErrorState,
    consts: &CertificateSet,
    phi: &P,
    delta0: Option<f64>,
) -> LyapunovEvaluation {
    let d = &consts.coupling.d;
    let (v0, v1) = v0_v1(err, d);
    let p = phi.phi(t);
    let w1 = (p + consts.gamma) * v1 - consts.signal.omega(t) * d_quad(d, &err.bar_x, &err.bar_y);
    let w2 = w1.ln_1p();
    let w3 = w3_from_w1(w1);
    let w4 = match delta0 {
        Some(d0) if d0.is_finite() => w1 + d0 * v0,
        _ => f64::NAN,
    };
    LyapunovEvaluation {
        v0,
        v1,
        phi: p,
        w1,
        w2,
        w3,
        omega: w3 + consts.sigma * v0,
        w4,
    }
}
