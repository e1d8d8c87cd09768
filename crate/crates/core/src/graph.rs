//! Communication topologies, mixing operators, and Laplacian spectra.

use crate::error::Error;
use crate::Result;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    Complete,
    StaticRing,
    OnePeerRing,
    OnePeerExp,
}

impl FromStr for TopologyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" => Ok(Self::Complete),
            "static_ring" => Ok(Self::StaticRing),
            "one_peer_ring" => Ok(Self::OnePeerRing),
            "one_peer_exp" => Ok(Self::OnePeerExp),
            other => Err(Error::InvalidArgument(format!("unknown topology `{other}`"))),
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Complete => "complete",
            Self::StaticRing => "static_ring",
            Self::OnePeerRing => "one_peer_ring",
            Self::OnePeerExp => "one_peer_exp",
        };
        f.write_str(s)
    }
}

/// Symmetric doubly stochastic gossip matrix W and its Laplacian L = I − W.
#[derive(Debug, Clone)]
pub struct MixingOperator {
    pub n: usize,
    pub kind: TopologyKind,
    pub w: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

impl MixingOperator {
    fn from_w(n: usize, kind: TopologyKind, w: DMatrix<f64>) -> Self {
        let l = DMatrix::identity(n, n) - &w;
        Self { n, kind, w, l }
    }

    /// Smallest eigenvalue of W (enters the stability threshold).
    pub fn lambda_min_w(&self) -> f64 {
        let eig = SymmetricEigen::new(self.w.clone());
        eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Round-indexed topology; `period` is the number of rounds after which the
/// pairing pattern repeats.
#[derive(Debug, Clone, Copy)]
pub struct TopologySchedule {
    pub kind: TopologyKind,
    pub n: usize,
    pub period: usize,
}

impl TopologySchedule {
    pub fn new(kind: TopologyKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("worker count must be ≥ 1".into()));
        }
        let period = match kind {
            TopologyKind::Complete | TopologyKind::StaticRing => 1,
            TopologyKind::OnePeerRing => 2,
            TopologyKind::OnePeerExp => num_pow2_below(n).max(1),
        };
        Ok(Self { kind, n, period })
    }

    pub fn is_static(&self) -> bool {
        matches!(self.kind, TopologyKind::Complete | TopologyKind::StaticRing)
    }
}

/// Number of powers of two strictly below n (offsets used by one-peer exp).
fn num_pow2_below(n: usize) -> usize {
    let mut k = 0;
    while (1usize << k) < n {
        k += 1;
    }
    k
}

pub fn build_complete(n: usize) -> Result<MixingOperator> {
    if n == 0 {
        return Err(Error::InvalidArgument("worker count must be ≥ 1".into()));
    }
    let w = DMatrix::from_element(n, n, 1.0 / n as f64);
    Ok(MixingOperator::from_w(n, TopologyKind::Complete, w))
}

/// Lazy Metropolis ring: W_ii = 1/2, W_{i,i±1} = 1/4 (for n = 2 the two
/// neighbor slots coincide, giving 1/2 off-diagonal).
pub fn build_static_ring(n: usize) -> Result<MixingOperator> {
    if n == 0 {
        return Err(Error::InvalidArgument("worker count must be ≥ 1".into()));
    }
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        w[(i, i)] += 0.5;
        if n == 1 {
            w[(i, i)] += 0.5;
        } else {
            w[(i, (i + 1) % n)] += 0.25;
            w[(i, (i + n - 1) % n)] += 0.25;
        }
    }
    Ok(MixingOperator::from_w(n, TopologyKind::StaticRing, w))
}

/// Pairs matched at round t for the one-peer ring: even rounds pair
/// (0,1),(2,3),…; odd rounds pair (1,2),(3,4),… with the wrap-around edge
/// (n−1,0) when n is even. Unmatched workers keep identity rows.
pub fn one_peer_ring_pairs(n: usize, t: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    if n < 2 {
        return pairs;
    }
    if t % 2 == 0 {
        let mut i = 0;
        while i + 1 < n {
            pairs.push((i, i + 1));
            i += 2;
        }
    } else {
        let mut i = 1;
        while i + 1 < n {
            pairs.push((i, i + 1));
            i += 2;
        }
        if n % 2 == 0 {
            pairs.push((n - 1, 0));
        }
    }
    pairs
}

/// Pairs matched at round t for the one-peer exponential graph. The offset
/// cycles through the powers of two below n; workers are paired greedily
/// along the cycles of i ↦ i + offset (mod n), so for power-of-two n every
/// round is a perfect matching, and otherwise the odd cycle tails keep
/// identity rows.
pub fn one_peer_exp_pairs(n: usize, t: usize) -> Vec<(usize, usize)> {
    let k = num_pow2_below(n);
    let mut pairs = Vec::new();
    if k == 0 {
        return pairs;
    }
    let offset = 1usize << (t % k);
    let mut visited = vec![false; n];
    for start in 0..n {
        if visited[start] {
            continue;
        }
        // walk the cycle of +offset starting here
        let mut cycle = Vec::new();
        let mut i = start;
        while !visited[i] {
            visited[i] = true;
            cycle.push(i);
            i = (i + offset) % n;
        }
        let mut j = 0;
        while j + 1 < cycle.len() {
            pairs.push((cycle[j], cycle[j + 1]));
            j += 2;
        }
    }
    pairs
}

fn pairs_to_matrix(n: usize, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let mut w = DMatrix::identity(n, n);
    for &(i, j) in pairs {
        w[(i, i)] = 0.5;
        w[(j, j)] = 0.5;
        w[(i, j)] = 0.5;
        w[(j, i)] = 0.5;
    }
    w
}

/// Mixing operator used at round t.
pub fn mixing_at(sched: &TopologySchedule, t: usize) -> Result<MixingOperator> {
    let n = sched.n;
    match sched.kind {
        TopologyKind::Complete => build_complete(n),
        TopologyKind::StaticRing => build_static_ring(n),
        TopologyKind::OnePeerRing => Ok(MixingOperator::from_w(
            n,
            TopologyKind::OnePeerRing,
            pairs_to_matrix(n, &one_peer_ring_pairs(n, t)),
        )),
        TopologyKind::OnePeerExp => Ok(MixingOperator::from_w(
            n,
            TopologyKind::OnePeerExp,
            pairs_to_matrix(n, &one_peer_exp_pairs(n, t)),
        )),
    }
}

/// Mean of W(t) over one schedule period. Static kinds return their fixed W.
/// For one-peer kinds this is the operator the static-spectrum analysis uses,
/// and callers should flag results derived from it as approximations.
pub fn period_average(sched: &TopologySchedule) -> Result<MixingOperator> {
    let mut acc = DMatrix::zeros(sched.n, sched.n);
    for t in 0..sched.period {
        acc += mixing_at(sched, t)?.w;
    }
    acc /= sched.period as f64;
    Ok(MixingOperator::from_w(sched.n, sched.kind, acc))
}

/// Eigen-decomposition of L = I − W with eigenvalues sorted ascending,
/// λ_1 = 0 (consensus mode).
#[derive(Debug, Clone)]
pub struct LaplacianSpectrum {
    /// Orthonormal eigenvectors, column j belongs to λ_j.
    pub u: DMatrix<f64>,
    /// Ascending eigenvalues; λ_1 = 0.
    pub lambda: DVector<f64>,
}

/// Symmetric eigen-decomposition with ascending eigenvalues and a
/// deterministic sign convention (largest-magnitude component of each
/// eigenvector made positive).
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut u = DMatrix::zeros(n, n);
    let mut lambda = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        lambda[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 0..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            u[(i, dst)] = sign * col[i];
        }
    }
    (u, lambda)
}

pub fn laplacian_spectrum(op: &MixingOperator) -> Result<LaplacianSpectrum> {
    let (u, mut lambda) = sorted_symmetric_eigen(&op.l);
    if lambda[0].abs() > 1e-10 {
        return Err(Error::NumericalError(format!(
            "Laplacian consensus eigenvalue {} not ~0",
            lambda[0]
        )));
    }
    lambda[0] = 0.0;
    let recon = &u * DMatrix::from_diagonal(&lambda) * u.transpose();
    if (recon - &op.l).abs().max() > 1e-10 {
        return Err(Error::NumericalError(
            "Laplacian eigendecomposition failed reconstruction check".into(),
        ));
    }
    Ok(LaplacianSpectrum { u, lambda })
}

#[derive(Debug, Clone, Copy)]
pub struct Check {
    pub pass: bool,
    /// Maximum violation magnitude observed.
    pub violation: f64,
}

fn check(violation: f64, tol: f64) -> Check {
    Check {
        pass: violation <= tol,
        violation,
    }
}

#[derive(Debug, Clone)]
pub struct MixingValidation {
    pub symmetric: Check,
    pub doubly_stochastic: Check,
    pub non_negative: Check,
    /// Eigenvalues of W inside (−1, 1] and W·1 = 1.
    pub spectrum: Check,
}

impl MixingValidation {
    pub fn all_pass(&self) -> bool {
        self.symmetric.pass
            && self.doubly_stochastic.pass
            && self.non_negative.pass
            && self.spectrum.pass
    }
}

pub fn validate_mixing(op: &MixingOperator) -> MixingValidation {
    let tol = 1e-12;
    let n = op.n;
    let w = &op.w;

    let mut sym = 0.0f64;
    let mut neg = 0.0f64;
    let mut stoch = 0.0f64;
    for i in 0..n {
        let mut row = 0.0;
        let mut col = 0.0;
        for j in 0..n {
            sym = sym.max((w[(i, j)] - w[(j, i)]).abs());
            neg = neg.max(-w[(i, j)]);
            row += w[(i, j)];
            col += w[(j, i)];
        }
        stoch = stoch.max((row - 1.0).abs()).max((col - 1.0).abs());
    }

    let eig = SymmetricEigen::new(w.clone());
    let mut spec = 0.0f64;
    for &ev in eig.eigenvalues.iter() {
        spec = spec.max(ev - 1.0).max(-1.0 - ev + tol);
    }
    MixingValidation {
        symmetric: check(sym, tol),
        doubly_stochastic: check(stoch, tol),
        non_negative: check(neg, tol),
        spectrum: check(spec.max(0.0), tol),
    }
}
