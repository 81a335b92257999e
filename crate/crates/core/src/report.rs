//! Flat `key = value` reports for certificates and monitor outcomes.
//!
//! Floats are written with 17 significant digits so a report can be parsed
//! back bit-for-bit. Keys are dotted paths; order is stable.

use std::collections::BTreeMap;
use std::fmt;

use crate::certificates::{CertificateSet, Envelope};
use crate::verification::MonitorReport;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatReport {
    entries: Vec<(String, String)>,
}

/// Full-precision float formatting that round-trips through `str::parse`.
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

impl FlatReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn number(&mut self, key: impl Into<String>, value: f64) {
        self.entries.push((key.into(), format_f64(value)));
    }

    pub fn optional(&mut self, key: impl Into<String>, value: Option<f64>) {
        match value {
            Some(v) => self.number(key, v),
            None => self.text(key, "undefined"),
        }
    }

    pub fn vector(&mut self, key: impl Into<String>, values: &[f64]) {
        let joined: Vec<String> = values.iter().map(|v| format_f64(*v)).collect();
        self.text(key, joined.join(" "));
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn extend(&mut self, other: FlatReport) {
        self.entries.extend(other.entries);
    }

    /// Parses the text form back into a key-value map. Blank lines and `#`
    /// comments are ignored.
    pub fn parse(src: &str) -> BTreeMap<String, String> {
        src.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect()
    }
}

impl fmt::Display for FlatReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

pub fn certificate_report(c: &CertificateSet) -> FlatReport {
    let mut r = FlatReport::new();
    let cp = &c.coupling;
    r.text("network.followers", cp.follower_count());
    r.vector("network.d", cp.d.as_slice());
    r.number("network.lambda_min_q", cp.lambda_min_q);
    r.number("network.lambda_min_d", cp.lambda_min_d);
    r.number("network.lambda_max_d", cp.lambda_max_d);
    r.number("network.norm_h", cp.norm_h);
    r.number("network.norm_dh", cp.norm_dh);

    r.number("gains.k_omega", c.gains.k_omega);
    r.number("gains.k_v", c.gains.k_v);
    r.number("leader.window", c.signal.pe_window);
    r.number("leader.mu", c.signal.pe_level);
    r.number("leader.omega_bar", c.signal.omega_bar);
    r.number("leader.bound", c.leader_bound);

    r.number("certificate.gamma", c.gamma);
    r.number("certificate.epsilon", c.epsilon);
    r.number("certificate.c1", c.c1);
    r.number("certificate.c2", c.c2);
    r.number("certificate.c0", c.c0);
    r.number("certificate.c0_bar", c.c0_bar);
    r.number("certificate.sigma", c.sigma);
    r.number("certificate.c3", c.c3);
    r.number("certificate.phi_max", c.phi_max);
    r.number("certificate.sandwich_upper", c.sandwich_upper);

    let s = &c.sampling;
    r.number("sampling.h1", s.h1);
    r.number("sampling.h2", s.h2);
    r.number("sampling.t1_star", s.t1_star);
    r.number("sampling.c4", s.c4);
    r.number("sampling.c5", s.c5);
    r.number("sampling.l1", s.l1);
    r.number("sampling.l2", s.l2);
    r.number("sampling.l3", s.l3);
    r.number("sampling.t2_star", s.t2_star);
    r.number("sampling.t_star", s.t_star);

    match &c.sampled {
        Some(sc) => {
            r.number("sampled.t0", sc.t0);
            r.optional("sampled.varrho", sc.varrho);
            r.number("sampled.c6", sc.c6);
            r.optional("sampled.chi", sc.chi);
            r.number("sampled.l4", sc.l4);
            r.text("sampled.inside_certified_region", sc.inside_certified_region);
            r.number("sampled.t0_over_t_star", sc.t0 / s.t_star);
        }
        None => r.text("sampled.t0", "none"),
    }
    r
}

pub fn envelope_report(e: &Envelope) -> FlatReport {
    let mut r = FlatReport::new();
    r.number("envelope.r0", e.r0);
    r.number("envelope.c3", e.c3);
    r.number("envelope.delta1", e.delta1);
    r.number("envelope.ln_delta2", e.ln_delta2);
    r.number("envelope.ln_delta", e.ln_delta);
    r.number("envelope.ln_delta_bar", e.ln_delta_bar);
    r.number("envelope.ln_delta0", e.ln_delta0);
    r.number("envelope.ln_m0", e.ln_m0);
    r.number("envelope.m0", e.m0);
    r.text("envelope.vacuous", e.vacuous);
    r
}

pub fn monitor_report(m: &MonitorReport) -> FlatReport {
    let mut r = FlatReport::new();
    for e in &m.entries {
        let base = format!("monitor.{}", e.name);
        r.text(format!("{base}.status"), e.status);
        r.number(format!("{base}.worst_margin"), e.worst_margin);
        r.optional(format!("{base}.worst_time"), e.worst_time);
        r.number(format!("{base}.tolerance"), e.tolerance);
        r.text(format!("{base}.detail"), e.detail.replace('\n', " "));
    }
    r.text("monitor.any_failed", m.any_failed());
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_bitwise() {
        for x in [0.1, 1.0 / 3.0, 4.297e-7, f64::MAX, -2.5e-300] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn parse_reads_back_text() {
        let mut r = FlatReport::new();
        r.number("a.b", 0.25);
        r.text("c", "some words");
        r.optional("d", None);
        let map = FlatReport::parse(&r.to_string());
        assert_eq!(map["a.b"].parse::<f64>().unwrap(), 0.25);
        assert_eq!(map["c"], "some words");
        assert_eq!(map["d"], "undefined");
    }
}
