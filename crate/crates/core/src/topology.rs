//! Agent graphs, doubly stochastic mixing matrices and their spectral
//! diagnostics.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::spectrum::{eigenvalue_magnitudes, SpectrumMethod};
use crate::linalg::{second_largest_magnitude, Matrix, RngStream, SYMMETRY_TOL};

pub const STOCHASTIC_TOL: f64 = 1e-9;
pub const SINKHORN_TOL: f64 = 1e-10;
const SINKHORN_MAX_ITERS: usize = 100_000;
/// Largest `d·N` accepted by [`verify_rho_prime`].
pub const RHO_PRIME_MAX_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopologyKind {
    FullyConnected,
    Ring,
    /// Symmetric adjacency without self loops.
    Custom(Vec<Vec<bool>>),
    /// No edges at all. Only useful as a degenerate baseline: the mixing
    /// matrix is the identity and the spectral check flags it.
    Isolated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    n_agents: usize,
    kind: TopologyKind,
}

impl Topology {
    pub fn fully_connected(n_agents: usize) -> Result<Self> {
        Self::checked(n_agents, TopologyKind::FullyConnected)
    }

    pub fn ring(n_agents: usize) -> Result<Self> {
        Self::checked(n_agents, TopologyKind::Ring)
    }

    pub fn isolated(n_agents: usize) -> Result<Self> {
        Self::checked(n_agents, TopologyKind::Isolated)
    }

    pub fn custom(adjacency: Vec<Vec<bool>>) -> Result<Self> {
        let n = adjacency.len();
        if adjacency.iter().any(|row| row.len() != n) {
            return dim_err("adjacency matrix must be square");
        }
        for i in 0..n {
            for j in 0..n {
                if adjacency[i][j] != adjacency[j][i] {
                    return Err(Error::Topology(format!(
                        "adjacency is not undirected at ({i}, {j})"
                    )));
                }
            }
        }
        let mut adjacency = adjacency;
        // Self loops are implicit.
        for (i, row) in adjacency.iter_mut().enumerate() {
            row[i] = false;
        }
        Self::checked(n, TopologyKind::Custom(adjacency))
    }

    /// `fc`/`fully_connected`, `ring`, `isolated`/`identity`.
    pub fn from_name(name: &str, n_agents: usize) -> Result<Self> {
        match name {
            "fc" | "fully_connected" => Self::fully_connected(n_agents),
            "ring" => Self::ring(n_agents),
            "isolated" | "identity" => Self::isolated(n_agents),
            other => invalid(format!(
                "unknown topology '{other}' (expected fc, ring or identity)"
            )),
        }
    }

    fn checked(n_agents: usize, kind: TopologyKind) -> Result<Self> {
        if n_agents == 0 {
            return invalid("agents must satisfy agents ≥ 1");
        }
        Ok(Self { n_agents, kind })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn kind(&self) -> &TopologyKind {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            TopologyKind::FullyConnected => "fc",
            TopologyKind::Ring => "ring",
            TopologyKind::Custom(_) => "custom",
            TopologyKind::Isolated => "identity",
        }
    }

    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        let n = self.n_agents;
        if i == j || i >= n || j >= n {
            return false;
        }
        match &self.kind {
            TopologyKind::FullyConnected => true,
            TopologyKind::Ring => {
                let d = (i + n - j) % n;
                d == 1 || d == n - 1
            }
            TopologyKind::Custom(adj) => adj[i][j],
            TopologyKind::Isolated => false,
        }
    }

    /// Neighbours of `i`, excluding `i` itself, ascending.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n_agents).filter(|&j| self.is_edge(i, j)).collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n_agents).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_agents;
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Symmetric doubly stochastic weights `Π`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingMatrix {
    pi: Matrix,
}

impl MixingMatrix {
    pub fn new(pi: Matrix) -> Result<Self> {
        if !pi.is_square() || pi.rows() == 0 {
            return dim_err(format!("mixing matrix must be square, got {}x{}", pi.rows(), pi.cols()));
        }
        pi.ensure_finite("mixing matrix")?;
        if pi.as_slice().iter().any(|&x| x < 0.0) {
            return invalid("mixing matrix has negative entries");
        }
        if !pi.is_symmetric(SYMMETRY_TOL) {
            return invalid("mixing matrix is not symmetric within 1e-10");
        }
        for (what, sums) in [("row", pi.row_sums()), ("column", pi.col_sums())] {
            if let Some((i, s)) = sums
                .iter()
                .enumerate()
                .find(|(_, s)| (*s - 1.0).abs() > STOCHASTIC_TOL)
            {
                return invalid(format!("{what} {i} of the mixing matrix sums to {s}"));
            }
        }
        Ok(Self { pi })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.pi
    }

    pub fn n(&self) -> usize {
        self.pi.rows()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.pi[(i, j)]
    }

    /// Errors when a positive weight sits on a non-edge.
    pub fn check_support(&self, topo: &Topology) -> Result<()> {
        if topo.n_agents() != self.n() {
            return dim_err(format!(
                "{} agents vs {}x{} mixing matrix",
                topo.n_agents(),
                self.n(),
                self.n()
            ));
        }
        for i in 0..self.n() {
            for j in 0..self.n() {
                if i != j && self.pi[(i, j)] > 0.0 && !topo.is_edge(i, j) {
                    return Err(Error::Topology(format!(
                        "pi[{i}][{j}] = {} but ({i}, {j}) is not an edge",
                        self.pi[(i, j)]
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn build_mixing(topo: &Topology) -> Result<MixingMatrix> {
    let n = topo.n_agents();
    let pi = match topo.kind() {
        TopologyKind::FullyConnected => Matrix::filled(n, n, 1.0 / n as f64),
        TopologyKind::Ring => {
            // N = 2 has a single neighbour, so the band collapses to halves.
            let w = 1.0 / (topo.degree(0) + 1) as f64;
            Matrix::from_fn(n, n, |i, j| if i == j || topo.is_edge(i, j) { w } else { 0.0 })
        }
        TopologyKind::Isolated => Matrix::identity(n),
        TopologyKind::Custom(_) => {
            if !topo.is_connected() {
                return Err(Error::Topology("custom graph is not connected".into()));
            }
            sinkhorn(topo)?
        }
    };
    MixingMatrix::new(pi)
}

/// Uniform-neighbour rows, alternately renormalised by columns and rows
/// until both sums are within tolerance, then symmetrised.
fn sinkhorn(topo: &Topology) -> Result<Matrix> {
    let n = topo.n_agents();
    let mut m = Matrix::from_fn(n, n, |i, j| {
        if i == j || topo.is_edge(i, j) {
            1.0 / (topo.degree(i) + 1) as f64
        } else {
            0.0
        }
    });
    for _ in 0..SINKHORN_MAX_ITERS {
        let cols = m.col_sums();
        m = Matrix::from_fn(n, n, |i, j| m[(i, j)] / cols[j]);
        let rows = m.row_sums();
        m = Matrix::from_fn(n, n, |i, j| m[(i, j)] / rows[i]);
        let err = m
            .col_sums()
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max);
        if err < SINKHORN_TOL {
            let t = m.transpose();
            return m.zip_with(&t, |a, b| 0.5 * (a + b));
        }
    }
    Err(Error::Invariant("Sinkhorn scaling did not converge".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoPrimeTrial {
    /// `max{|λ₂(WP)|, |λ_dN(WP)|}`: the largest modulus after the `d`
    /// consensus eigenvalues.
    pub sqrt_rho_prime: f64,
    /// Largest modulus of `WP`, which must be 1.
    pub top_magnitude: f64,
    pub symmetric: bool,
    /// `max |WP − (WP)ᵀ|`.
    pub symmetry_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub n_agents: usize,
    pub sqrt_rho: f64,
    pub rho: f64,
    /// Flagged when `√ρ ≥ 1 − 1e-12`.
    pub disconnected: bool,
    pub model_dim: Option<usize>,
    pub sqrt_rho_prime_max: Option<f64>,
    pub samples: usize,
    pub trials: Vec<RhoPrimeTrial>,
    /// Trials where `√ρ′ > √ρ + 1e-9`.
    pub violations: usize,
    pub method: Option<SpectrumMethod>,
}

impl SpectralReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }

    pub fn verdict(&self) -> String {
        if self.disconnected {
            return "graph disconnected (sqrt_rho = 1); rho' check skipped".into();
        }
        if self.samples == 0 {
            return format!("sqrt_rho = {}", self.sqrt_rho);
        }
        let ok = self.samples - self.violations;
        if self.holds() {
            format!("rho' <= rho holds in {ok}/{} trials", self.samples)
        } else {
            format!("rho' <= rho holds in {ok}/{} trials (violated)", self.samples)
        }
    }
}

pub const RHO_PRIME_TOL: f64 = 1e-9;
const DISCONNECTED_TOL: f64 = 1e-12;

pub fn check_assumption2(pi: &MixingMatrix) -> Result<SpectralReport> {
    let sqrt_rho = second_largest_magnitude(pi.matrix())?;
    if !(-1e-9..=1.0 + 1e-9).contains(&sqrt_rho) {
        return Err(Error::Invariant(format!("sqrt_rho = {sqrt_rho} outside [0, 1]")));
    }
    Ok(SpectralReport {
        n_agents: pi.n(),
        sqrt_rho,
        rho: sqrt_rho * sqrt_rho,
        disconnected: pi.n() > 1 && sqrt_rho >= 1.0 - DISCONNECTED_TOL,
        model_dim: None,
        sqrt_rho_prime_max: None,
        samples: 0,
        trials: Vec::new(),
        violations: 0,
        method: None,
    })
}

/// Block-diagonal `P = diag(Q₀, …, Q_{N−1})` with `Q₀ = I` (agent 0 is the
/// common reference frame) and the others drawn uniformly.
pub fn random_block_permutation(n_agents: usize, d: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    (0..n_agents)
        .map(|a| if a == 0 { (0..d).collect() } else { rng.permutation(d) })
        .collect()
}

/// `(Π ⊗ I_d) · diag(Q_a)` where `Q_a[r][blocks[a][r]] = 1`.
pub fn permuted_mixing(pi: &MixingMatrix, blocks: &[Vec<usize>]) -> Result<Matrix> {
    let n = pi.n();
    if blocks.len() != n {
        return dim_err(format!("{} permutation blocks for {n} agents", blocks.len()));
    }
    let d = blocks.first().map_or(0, Vec::len);
    for b in blocks {
        let mut seen = vec![false; d];
        if b.len() != d || b.iter().any(|&v| v >= d || std::mem::replace(&mut seen[v], true)) {
            return invalid("permutation block is not a bijection");
        }
    }
    let mut m = Matrix::zeros(n * d, n * d);
    for i in 0..n {
        for (j, qj) in blocks.iter().enumerate() {
            let w = pi.weight(i, j);
            if w == 0.0 {
                continue;
            }
            // (I_d · Q_j)[r][qj[r]] = 1
            for (r, &c) in qj.iter().enumerate() {
                m.row_mut(i * d + r)[j * d + c] = w;
            }
        }
    }
    Ok(m)
}

/// Samples `trials` block permutations and measures the spectrum of
/// `(Π ⊗ I_d)·P` for each.
pub fn verify_rho_prime(
    pi: &MixingMatrix,
    d: usize,
    trials: usize,
    rng: &mut RngStream,
) -> Result<SpectralReport> {
    let n = pi.n();
    if d == 0 {
        return invalid("model dimension d must be ≥ 1");
    }
    if d * n > RHO_PRIME_MAX_DIM {
        return invalid(format!(
            "d·N = {} exceeds the dense eigen-work guard of {RHO_PRIME_MAX_DIM}; use a smaller d",
            d * n
        ));
    }
    let mut report = check_assumption2(pi)?;
    report.model_dim = Some(d);
    if report.disconnected {
        return Ok(report);
    }
    let draws: Vec<Vec<Vec<usize>>> = (0..trials)
        .map(|_| random_block_permutation(n, d, rng))
        .collect();
    let results: Vec<(RhoPrimeTrial, SpectrumMethod)> = draws
        .par_iter()
        .map(|blocks| measure(pi, blocks, d))
        .collect::<Result<_>>()?;

    report.samples = trials;
    report.method = results.first().map(|r| r.1);
    report.trials = results.into_iter().map(|r| r.0).collect();
    report.violations = report
        .trials
        .iter()
        .filter(|t| t.sqrt_rho_prime > report.sqrt_rho + RHO_PRIME_TOL)
        .count();
    report.sqrt_rho_prime_max = report
        .trials
        .iter()
        .map(|t| t.sqrt_rho_prime)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    Ok(report)
}

fn measure(pi: &MixingMatrix, blocks: &[Vec<usize>], d: usize) -> Result<(RhoPrimeTrial, SpectrumMethod)> {
    let wp = permuted_mixing(pi, blocks)?;
    let (mags, method) = eigenvalue_magnitudes(&wp)?;
    let defect = wp
        .as_slice()
        .iter()
        .zip(wp.transpose().as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok((
        RhoPrimeTrial {
            sqrt_rho_prime: mags.get(d).copied().unwrap_or(0.0),
            top_magnitude: mags.first().copied().unwrap_or(0.0),
            symmetric: defect <= SYMMETRY_TOL,
            symmetry_defect: defect,
        },
        method,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::jacobi_eigenvalues;
    use std::f64::consts::PI;

    #[test]
    fn fc5_is_exactly_a_fifth() {
        let m = build_mixing(&Topology::fully_connected(5).unwrap()).unwrap();
        assert!(m.matrix().as_slice().iter().all(|&x| x == 0.2));
    }

    #[test]
    fn ring5_is_the_thirds_circulant() {
        let m = build_mixing(&Topology::ring(5).unwrap()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let d = (i + 5 - j) % 5;
                let want = if d <= 1 || d == 4 { 1.0 / 3.0 } else { 0.0 };
                assert_eq!(m.weight(i, j), want);
            }
        }
    }

    #[test]
    fn single_agent_is_one() {
        for t in [Topology::fully_connected(1), Topology::ring(1)] {
            assert_eq!(build_mixing(&t.unwrap()).unwrap().matrix(), &Matrix::identity(1));
        }
    }

    #[test]
    fn ring_of_two_is_halves() {
        let m = build_mixing(&Topology::ring(2).unwrap()).unwrap();
        assert!(m.matrix().as_slice().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn custom_star_is_doubly_stochastic() {
        let mut adj = vec![vec![false; 5]; 5];
        for k in 1..5 {
            adj[0][k] = true;
            adj[k][0] = true;
        }
        let topo = Topology::custom(adj).unwrap();
        let m = build_mixing(&topo).unwrap();
        m.check_support(&topo).unwrap();
        assert!(m.matrix().is_symmetric(1e-10));
    }

    #[test]
    fn disconnected_custom_rejected() {
        let mut adj = vec![vec![false; 4]; 4];
        adj[0][1] = true;
        adj[1][0] = true;
        let topo = Topology::custom(adj).unwrap();
        assert!(matches!(build_mixing(&topo), Err(Error::Topology(_))));
    }

    #[test]
    fn directed_custom_rejected() {
        let adj = vec![vec![false, true], vec![false, false]];
        assert!(Topology::custom(adj).is_err());
    }

    #[test]
    fn support_violation_detected() {
        let m = build_mixing(&Topology::fully_connected(5).unwrap()).unwrap();
        assert!(matches!(
            m.check_support(&Topology::ring(5).unwrap()),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn spectral_reports_per_topology() {
        let fc = check_assumption2(&build_mixing(&Topology::fully_connected(5).unwrap()).unwrap()).unwrap();
        assert_eq!(fc.sqrt_rho, 0.0);
        let ring = check_assumption2(&build_mixing(&Topology::ring(5).unwrap()).unwrap()).unwrap();
        let expected = (1.0 + 2.0 * (2.0 * PI / 5.0).cos()) / 3.0;
        assert!((ring.sqrt_rho - expected).abs() < 1e-8);
        assert!((ring.rho - 0.2909).abs() < 1e-4);
        let iso = check_assumption2(&build_mixing(&Topology::isolated(3).unwrap()).unwrap()).unwrap();
        assert!(iso.disconnected);
        assert!((iso.sqrt_rho - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_permutations_reduce_to_sqrt_rho() {
        let pi = build_mixing(&Topology::ring(5).unwrap()).unwrap();
        let blocks = vec![(0..3).collect::<Vec<_>>(); 5];
        let (trial, _) = measure(&pi, &blocks, 3).unwrap();
        let sqrt_rho = (1.0 + 2.0 * (2.0 * PI / 5.0).cos()) / 3.0;
        assert!((trial.sqrt_rho_prime - sqrt_rho).abs() < 1e-12);
        assert!(trial.symmetric);
        assert!((trial.top_magnitude - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_agents_with_a_swap() {
        let pi = MixingMatrix::new(Matrix::filled(2, 2, 0.5)).unwrap();
        let (trial, _) = measure(&pi, &[vec![0, 1], vec![1, 0]], 2).unwrap();
        assert!(trial.sqrt_rho_prime <= 1e-9);
        assert!(!trial.symmetric);
    }

    #[test]
    fn guard_rejects_large_models() {
        let pi = build_mixing(&Topology::ring(5).unwrap()).unwrap();
        let err = verify_rho_prime(&pi, 200, 1, &mut RngStream::new(0, 0)).unwrap_err();
        assert!(err.to_string().contains("smaller d"));
    }

    #[test]
    fn kronecker_spectrum_repeats() {
        for n in 2..=6 {
            let pi = build_mixing(&Topology::ring(n).unwrap()).unwrap();
            let base = jacobi_eigenvalues(pi.matrix()).unwrap();
            for d in [1, 3, 8] {
                let big = pi.matrix().kron(&Matrix::identity(d));
                let eig = jacobi_eigenvalues(&big).unwrap();
                let mut expected: Vec<f64> = base.iter().flat_map(|&l| std::iter::repeat_n(l, d)).collect();
                expected.sort_by(|a, b| b.total_cmp(a));
                for (a, b) in eig.iter().zip(&expected) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn fc5_trials_are_exactly_zero() {
        let pi = build_mixing(&Topology::fully_connected(5).unwrap()).unwrap();
        let report = verify_rho_prime(&pi, 4, 10, &mut RngStream::new(5, 1)).unwrap();
        assert_eq!(report.samples, 10);
        assert!(report.trials.iter().all(|t| t.sqrt_rho_prime <= 1e-9));
        assert!(report.holds());
    }
}
