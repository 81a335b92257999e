//! Leader-rooted communication digraphs and the coupling certificate.
//!
//! Node 0 is the leader, nodes `1..=N` are followers. An edge `(i, j)` means
//! robot `j` receives information from robot `i`, which is stored as the
//! weight `a_ji` (or `a_j0` in [`DirectedNetwork::leader_links`] when `i = 0`).
//!
//! The coupling matrix `H` has `h_ij = -a_ij` off the diagonal and
//! `h_ii = sum_{j=0..N} a_ij` on it. When every follower is reachable from the
//! leader, `H` is a nonsingular M-matrix and admits a positive diagonal `D`
//! with `Q = DH + H^T D` positive definite. Every downstream constant uses
//! `D`, `Q` and the induced 2-norms of `H` and `DH`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalue real parts at or below this are not accepted as positive when
/// validating an M-matrix.
pub const M_MATRIX_TOLERANCE: f64 = 1e-10;

/// Weighted edge of the augmented graph; node 0 is the leader.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl Edge {
    pub fn new(from: usize, to: usize, weight: f64) -> Self {
        Self { from, to, weight }
    }
}

/// Augmented digraph on `{0, ..., N}` restricted to what the followers hear.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedNetwork {
    /// `a_ij` for followers `i, j` (zero-based indices into `1..=N`).
    adjacency: DMatrix<f64>,
    /// `a_i0`.
    leader_links: DVector<f64>,
}

impl DirectedNetwork {
    /// Builds a network from raw weights, checking nonnegativity and a zero
    /// diagonal. Reachability is *not* enforced here; see
    /// [`check_spanning_tree`].
    pub fn new(adjacency: DMatrix<f64>, leader_links: DVector<f64>) -> Result<Self> {
        let n = leader_links.len();
        if n == 0 {
            return Err(Error::Network("at least one follower is required".into()));
        }
        if adjacency.nrows() != n || adjacency.ncols() != n {
            return Err(Error::Dimension {
                expected: n,
                got: adjacency.nrows().max(adjacency.ncols()),
            });
        }
        for i in 0..n {
            if !(leader_links[i].is_finite() && leader_links[i] >= 0.0) {
                return Err(Error::Network(format!(
                    "leader link a_{}0 = {} must be finite and nonnegative",
                    i + 1,
                    leader_links[i]
                )));
            }
            for j in 0..n {
                let a = adjacency[(i, j)];
                if !(a.is_finite() && a >= 0.0) {
                    return Err(Error::Network(format!(
                        "weight a_{}{} = {a} must be finite and nonnegative",
                        i + 1,
                        j + 1
                    )));
                }
                if i == j && a != 0.0 {
                    return Err(Error::Network(format!("self loop on follower {}", i + 1)));
                }
            }
        }
        Ok(Self {
            adjacency,
            leader_links,
        })
    }

    /// Builds a network with `follower_count` followers from an edge list.
    /// Repeated edges accumulate their weights.
    pub fn from_edges(follower_count: usize, edges: &[Edge]) -> Result<Self> {
        let n = follower_count;
        let mut adjacency = DMatrix::zeros(n, n);
        let mut leader_links = DVector::zeros(n);
        for e in edges {
            if e.to == 0 {
                return Err(Error::Network(format!(
                    "edge {} -> 0: the leader does not receive information",
                    e.from
                )));
            }
            if e.from > n || e.to > n {
                return Err(Error::Network(format!(
                    "edge {} -> {} references a node outside 0..={n}",
                    e.from, e.to
                )));
            }
            if e.from == e.to {
                return Err(Error::Network(format!("self loop on node {}", e.to)));
            }
            if e.from == 0 {
                leader_links[e.to - 1] += e.weight;
            } else {
                adjacency[(e.to - 1, e.from - 1)] += e.weight;
            }
        }
        Self::new(adjacency, leader_links)
    }

    pub fn follower_count(&self) -> usize {
        self.leader_links.len()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn leader_links(&self) -> &DVector<f64> {
        &self.leader_links
    }

    /// Weight with which follower `i` (1-based) hears node `j` (0 = leader).
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if j == 0 {
            self.leader_links[i - 1]
        } else {
            self.adjacency[(i - 1, j - 1)]
        }
    }

    /// Edge list with positive weights, leader links first.
    pub fn edges(&self) -> Vec<Edge> {
        let n = self.follower_count();
        let mut out = Vec::new();
        for i in 0..n {
            if self.leader_links[i] > 0.0 {
                out.push(Edge::new(0, i + 1, self.leader_links[i]));
            }
        }
        for j in 0..n {
            for i in 0..n {
                if self.adjacency[(i, j)] > 0.0 {
                    out.push(Edge::new(j + 1, i + 1, self.adjacency[(i, j)]));
                }
            }
        }
        out
    }
}

/// True iff every follower is reachable from the leader along positive-weight
/// edges.
pub fn check_spanning_tree(net: &DirectedNetwork) -> bool {
    unreachable_followers(net).is_empty()
}

/// Followers (1-based) that cannot be reached from node 0.
pub fn unreachable_followers(net: &DirectedNetwork) -> Vec<usize> {
    let n = net.follower_count();
    let mut reached = vec![false; n];
    let mut queue = VecDeque::new();
    for (i, r) in reached.iter_mut().enumerate() {
        if net.leader_links[i] > 0.0 {
            *r = true;
            queue.push_back(i);
        }
    }
    while let Some(src) = queue.pop_front() {
        for (dst, r) in reached.iter_mut().enumerate() {
            if !*r && net.adjacency[(dst, src)] > 0.0 {
                *r = true;
                queue.push_back(dst);
            }
        }
    }
    (0..n).filter(|&i| !reached[i]).map(|i| i + 1).collect()
}

/// Coupling matrix `H` of the follower subgraph with leader pinning.
pub fn build_coupling_matrix(net: &DirectedNetwork) -> Result<DMatrix<f64>> {
    let missing = unreachable_followers(net);
    if !missing.is_empty() {
        return Err(Error::Network(format!(
            "no directed spanning tree rooted at the leader; unreachable followers: {missing:?}"
        )));
    }
    Ok(coupling_matrix_unchecked(net))
}

/// `H` without the reachability check. Used for deliberately broken graphs.
pub fn coupling_matrix_unchecked(net: &DirectedNetwork) -> DMatrix<f64> {
    let n = net.follower_count();
    let mut h = -net.adjacency.clone();
    for i in 0..n {
        h[(i, i)] = net.leader_links[i] + net.adjacency.row(i).sum();
    }
    h
}

/// Everything the certificates need from the topology.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingCertificate {
    pub h: DMatrix<f64>,
    pub d: DVector<f64>,
    pub q: DMatrix<f64>,
    pub lambda_min_q: f64,
    pub lambda_max_d: f64,
    pub lambda_min_d: f64,
    /// Induced 2-norm of `H`.
    pub norm_h: f64,
    /// Induced 2-norm of `DH`.
    pub norm_dh: f64,
}

impl CouplingCertificate {
    /// Evaluates `Q = DH + H^T D` and the spectral quantities for a given
    /// positive diagonal.
    pub fn from_scaling(h: &DMatrix<f64>, d: &DVector<f64>) -> Result<Self> {
        let n = h.nrows();
        if d.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: d.len(),
            });
        }
        if d.iter().any(|&di| !(di > 0.0 && di.is_finite())) {
            return Err(Error::Parameter {
                name: "D",
                reason: "diagonal entries must be positive".into(),
            });
        }
        let dm = DMatrix::from_diagonal(d);
        let dh = &dm * h;
        let q = &dh + dh.transpose();
        let lambda_min_q = symmetric_lambda_min(&q);
        Ok(Self {
            h: h.clone(),
            d: d.clone(),
            q,
            lambda_min_q,
            lambda_max_d: d.max(),
            lambda_min_d: d.min(),
            norm_h: induced_norm(h),
            norm_dh: induced_norm(&dh),
        })
    }

    pub fn follower_count(&self) -> usize {
        self.d.len()
    }

    /// Real parts of the eigenvalues of `H`, ascending.
    pub fn eigenvalue_real_parts(&self) -> Vec<f64> {
        eigen_real_parts(&self.h)
    }
}

/// Checks the nonsingular M-matrix property: nonpositive off-diagonals and
/// eigenvalues with real parts above [`M_MATRIX_TOLERANCE`].
pub fn validate_m_matrix(h: &DMatrix<f64>) -> Result<()> {
    if !h.is_square() || h.nrows() == 0 {
        return Err(Error::NotMMatrix("matrix must be square and nonempty".into()));
    }
    let n = h.nrows();
    for i in 0..n {
        for j in 0..n {
            if i != j && h[(i, j)] > 0.0 {
                return Err(Error::NotMMatrix(format!(
                    "positive off-diagonal entry h[{i}][{j}] = {}",
                    h[(i, j)]
                )));
            }
        }
    }
    let min_re = eigen_real_parts(h)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if min_re <= M_MATRIX_TOLERANCE {
        return Err(Error::NotMMatrix(format!(
            "smallest eigenvalue real part is {min_re:e}"
        )));
    }
    Ok(())
}

/// Finds a positive diagonal `D` with `DH + H^T D` positive definite.
///
/// Uses `z = H^-1 1`, `w = H^-T 1`, `d_i = w_i / z_i`; both vectors are
/// positive for a nonsingular M-matrix. If the resulting `Q` is not certified
/// positive definite the diagonal is refined by [`refine_scaling`].
pub fn find_diagonal_scaling(h: &DMatrix<f64>) -> Result<CouplingCertificate> {
    validate_m_matrix(h)?;
    let n = h.nrows();
    let ones = DVector::from_element(n, 1.0);
    let lu = h.clone().lu();
    let z = lu.solve(&ones);
    let w = h.transpose().lu().solve(&ones);

    let initial = match (z, w) {
        (Some(z), Some(w)) if z.iter().chain(w.iter()).all(|&v| v > 0.0) => {
            DVector::from_iterator(n, w.iter().zip(z.iter()).map(|(wi, zi)| wi / zi))
        }
        _ => DVector::from_element(n, 1.0),
    };

    let cert = CouplingCertificate::from_scaling(h, &initial)?;
    if cert.lambda_min_q > 0.0 {
        return Ok(cert);
    }
    let refined = refine_scaling(h, &initial);
    let cert = CouplingCertificate::from_scaling(h, &refined)?;
    if cert.lambda_min_q > 0.0 {
        Ok(cert)
    } else {
        Err(Error::ScalingFailed {
            lambda_min: cert.lambda_min_q,
        })
    }
}

/// Coordinate-descent rescaling of a positive diagonal maximizing
/// `lambda_min(DH + H^T D)` with `max_i d_i = 1`.
pub fn refine_scaling(h: &DMatrix<f64>, start: &DVector<f64>) -> DVector<f64> {
    let n = h.nrows();
    let objective = |logd: &[f64]| {
        let m = logd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let d = DVector::from_iterator(n, logd.iter().map(|l| (l - m).exp()));
        let dh = DMatrix::from_diagonal(&d) * h;
        symmetric_lambda_min(&(&dh + dh.transpose()))
    };
    let mut logd: Vec<f64> = start.iter().map(|d| d.max(f64::MIN_POSITIVE).ln()).collect();
    let mut best = objective(&logd);
    for _sweep in 0..100 {
        let before = best;
        for i in 0..n {
            let base = logd[i];
            let (mut a, mut b) = (base - 4.0, base + 4.0);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let eval = |s: f64, logd: &mut Vec<f64>| {
                logd[i] = s;
                objective(logd)
            };
            let mut c = b - g * (b - a);
            let mut d = a + g * (b - a);
            let mut fc = eval(c, &mut logd);
            let mut fd = eval(d, &mut logd);
            for _ in 0..60 {
                if fc > fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - g * (b - a);
                    fc = eval(c, &mut logd);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + g * (b - a);
                    fd = eval(d, &mut logd);
                }
            }
            let cand = 0.5 * (a + b);
            let fcand = eval(cand, &mut logd);
            if fcand > best {
                best = fcand;
                logd[i] = cand;
            } else {
                logd[i] = base;
            }
        }
        if best - before <= 1e-14 * best.abs().max(1.0) {
            break;
        }
    }
    let m = logd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    DVector::from_iterator(n, logd.iter().map(|l| (l - m).exp()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn symmetric_lambda_min(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn symmetric_lambda_max(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Induced Euclidean norm (largest singular value).
pub fn induced_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Real parts of the (possibly complex) eigenvalues, ascending.
pub fn eigen_real_parts(m: &DMatrix<f64>) -> Vec<f64> {
    let mut re: Vec<f64> = m.complex_eigenvalues().iter().map(|c| c.re).collect();
    re.sort_by(|a, b| a.total_cmp(b));
    re
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn chain() -> DirectedNetwork {
        DirectedNetwork::from_edges(2, &[Edge::new(0, 1, 1.0), Edge::new(1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn single_follower_coupling() {
        let net = DirectedNetwork::from_edges(1, &[Edge::new(0, 1, 1.0)]).unwrap();
        let h = build_coupling_matrix(&net).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(1, 1, &[1.0]));
        let cert = find_diagonal_scaling(&h).unwrap();
        assert_eq!(cert.d[0], 1.0);
        assert_eq!(cert.q[(0, 0)], 2.0);
        assert_relative_eq!(cert.lambda_min_q, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn chain_coupling_matrix() {
        let h = build_coupling_matrix(&chain()).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 1.0]));
    }

    #[test]
    fn leader_only_links_give_identity() {
        let net =
            DirectedNetwork::from_edges(2, &[Edge::new(0, 1, 1.0), Edge::new(0, 2, 1.0)]).unwrap();
        assert_eq!(build_coupling_matrix(&net).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn chain_scaling_matches_hand_construction() {
        let h = build_coupling_matrix(&chain()).unwrap();
        let cert = find_diagonal_scaling(&h).unwrap();
        assert_relative_eq!(cert.d[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(cert.d[1], 0.5, epsilon = 1e-14);
        let expected_q = DMatrix::from_row_slice(2, 2, &[4.0, -0.5, -0.5, 1.0]);
        assert!((&cert.q - expected_q).abs().max() < 1e-14);
        // closed-form eigenvalue of the 2x2 symmetric Q
        let (a, b, c) = (4.0_f64, -0.5_f64, 1.0_f64);
        let oracle = 0.5 * (a + c) - (0.25 * (a - c).powi(2) + b * b).sqrt();
        assert_relative_eq!(cert.lambda_min_q, oracle, epsilon = 1e-12);
        assert_relative_eq!(cert.lambda_min_q, (5.0 - 10f64.sqrt()) / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn symmetric_h_is_certified_by_identity() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let cert = CouplingCertificate::from_scaling(&h, &DVector::from_element(2, 1.0)).unwrap();
        assert!((&cert.q - &h * 2.0).abs().max() < 1e-15);
        assert_relative_eq!(cert.lambda_min_q, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn spanning_tree_detection() {
        assert!(check_spanning_tree(&chain()));
        let broken = DirectedNetwork::from_edges(2, &[Edge::new(1, 2, 1.0)]).unwrap();
        assert!(!check_spanning_tree(&broken));
        assert_eq!(unreachable_followers(&broken), vec![1, 2]);
        assert!(build_coupling_matrix(&broken).is_err());
    }

    #[test]
    fn rejects_bad_weights_and_edges() {
        assert!(DirectedNetwork::from_edges(2, &[Edge::new(0, 1, -1.0)]).is_err());
        assert!(DirectedNetwork::from_edges(2, &[Edge::new(1, 0, 1.0)]).is_err());
        assert!(DirectedNetwork::from_edges(2, &[Edge::new(0, 3, 1.0)]).is_err());
        assert!(DirectedNetwork::from_edges(0, &[]).is_err());
    }

    #[test]
    fn m_matrix_validation_reports_reason() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(validate_m_matrix(&bad), Err(Error::NotMMatrix(_))));
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!(find_diagonal_scaling(&singular).is_err());
    }

    #[test]
    fn fallback_recovers_from_bad_start() {
        // D = identity does not certify this H; the coordinate descent must.
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -3.0, 1.0]);
        let ident = CouplingCertificate::from_scaling(&h, &DVector::from_element(2, 1.0)).unwrap();
        assert!(ident.lambda_min_q < 0.0);
        let d = refine_scaling(&h, &DVector::from_element(2, 1.0));
        let cert = CouplingCertificate::from_scaling(&h, &d).unwrap();
        assert!(cert.lambda_min_q > 0.0);
    }

    #[test]
    fn row_sums_equal_leader_links() {
        let net = DirectedNetwork::from_edges(
            4,
            &[
                Edge::new(0, 1, 0.7),
                Edge::new(0, 2, 1.3),
                Edge::new(1, 3, 0.4),
                Edge::new(2, 4, 2.0),
                Edge::new(3, 2, 0.9),
            ],
        )
        .unwrap();
        let h = build_coupling_matrix(&net).unwrap();
        let ones = DVector::from_element(4, 1.0);
        let residual = &h * ones - net.leader_links();
        assert!(residual.amax() < 1e-14);
        assert_eq!(net.edges().len(), 5);
    }
}
