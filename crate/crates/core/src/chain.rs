//! Exact finite reversible Markov chains and lumpings, used to check the
//! projection and eigenvalue inequalities without sampling noise.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{Stream, StreamTag};

const TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ReversibleChain {
    k: DMatrix<f64>,
    pi: Vec<f64>,
}

impl ReversibleChain {
    /// Validates stochasticity, stationarity and detailed balance to 1e-12.
    pub fn new(k: DMatrix<f64>, pi: Vec<f64>) -> Result<Self> {
        let n = k.nrows();
        if k.ncols() != n || pi.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: pi.len(),
            });
        }
        if n < 2 {
            return Err(Error::Degenerate("chain needs at least 2 states".into()));
        }
        if pi.iter().any(|p| !(*p > 0.0)) || (pi.iter().sum::<f64>() - 1.0).abs() > TOL {
            return Err(Error::Degenerate("stationary distribution must be positive and sum to 1".into()));
        }
        for i in 0..n {
            if (k.row(i).sum() - 1.0).abs() > TOL || k.row(i).iter().any(|v| *v < 0.0) {
                return Err(Error::Degenerate(format!("row {i} is not stochastic")));
            }
            for j in 0..n {
                if (pi[i] * k[(i, j)] - pi[j] * k[(j, i)]).abs() > TOL {
                    return Err(Error::Degenerate(format!("detailed balance fails at ({i}, {j})")));
                }
            }
        }
        Ok(Self { k, pi })
    }

    /// `π_i ∝ Σ_j W_ij`, `K_ij = W_ij / Σ_k W_ik` for symmetric positive `W`.
    pub fn from_weights(w: &DMatrix<f64>) -> Result<Self> {
        let n = w.nrows();
        let rows: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
        let total: f64 = rows.iter().sum();
        let k = DMatrix::from_fn(n, n, |i, j| w[(i, j)] / rows[i]);
        Self::new(k, rows.iter().map(|r| r / total).collect())
    }

    pub fn n(&self) -> usize {
        self.pi.len()
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Eigenvalues in descending order and matching eigenfunctions (columns)
    /// with unit π-weighted norm.
    pub fn eigen(&self) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.n();
        let d: Vec<f64> = self.pi.iter().map(|p| p.sqrt()).collect();
        let s = DMatrix::from_fn(n, n, |i, j| {
            0.5 * (d[i] * self.k[(i, j)] / d[j] + d[j] * self.k[(j, i)] / d[i])
        });
        let eig = SymmetricEigen::new(s);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&c| eig.eigenvalues[c]).collect();
        let vectors = DMatrix::from_fn(n, n, |i, c| eig.eigenvectors[(i, order[c])] / d[i]);
        (values, vectors)
    }
}

fn weight_matrix(n: usize, s: &mut Stream, draw: impl Fn(&mut Stream) -> f64) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(n, n, |_, _| draw(s));
    (&raw + raw.transpose()) * 0.5
}

/// Reversible chain from a symmetric weight matrix with uniform entries.
pub fn random_reversible_chain(n: usize, seed: u64) -> Result<ReversibleChain> {
    if n < 2 {
        return Err(Error::config("n", "need at least 2 states"));
    }
    let mut s = Stream::new(seed, StreamTag::Oracle, n as u64, 0);
    ReversibleChain::from_weights(&weight_matrix(n, &mut s, |s| s.uniform()))
}

/// As [`random_reversible_chain`] but with log-normal weights `exp(scale·Z)`.
pub fn random_heavy_tailed_chain(n: usize, seed: u64, scale: f64) -> Result<ReversibleChain> {
    if n < 2 {
        return Err(Error::config("n", "need at least 2 states"));
    }
    let mut s = Stream::new(seed, StreamTag::Oracle, n as u64, 1);
    ReversibleChain::from_weights(&weight_matrix(n, &mut s, |s| (scale * s.normal()).exp()))
}

/// Surjective map from states to blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Lumping {
    blocks: Vec<usize>,
    m: usize,
}

impl Lumping {
    pub fn new(blocks: Vec<usize>) -> Result<Self> {
        let m = blocks.iter().max().map_or(0, |b| b + 1);
        let mut seen = vec![false; m];
        for b in &blocks {
            seen[*b] = true;
        }
        if m == 0 || seen.contains(&false) {
            return Err(Error::Degenerate("lumping must hit every block".into()));
        }
        Ok(Self { blocks, m })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            blocks: (0..n).collect(),
            m: n,
        }
    }

    /// Random surjection of `n` states onto `m` blocks.
    pub fn random(n: usize, m: usize, s: &mut Stream) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::config("m", format!("need 1 <= m <= n = {n}, got {m}")));
        }
        let mut blocks: Vec<usize> = (0..m).chain((m..n).map(|_| s.below(m as u64) as usize)).collect();
        for i in (1..n).rev() {
            blocks.swap(i, s.below(i as u64 + 1) as usize);
        }
        Self::new(blocks)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    fn block_mass(&self, pi: &[f64]) -> Vec<f64> {
        let mut mass = vec![0.0; self.m];
        for (b, p) in self.blocks.iter().zip(pi) {
            mass[*b] += p;
        }
        mass
    }
}

/// π-weighted block averages of `f`, lifted back to the states.
pub fn exact_pi_projection(chain: &ReversibleChain, lumping: &Lumping, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != chain.n() || lumping.blocks.len() != chain.n() {
        return Err(Error::DimensionMismatch {
            expected: chain.n(),
            got: f.len(),
        });
    }
    let mass = lumping.block_mass(&chain.pi);
    let mut sums = vec![0.0; lumping.m];
    for ((b, p), v) in lumping.blocks.iter().zip(&chain.pi).zip(f) {
        sums[*b] += p * v;
    }
    Ok(lumping.blocks.iter().map(|b| sums[*b] / mass[*b]).collect())
}

/// The `m × m` chain `K̄_AB = Σ_{i∈A, j∈B} π_i K_ij / π(A)`, which acts as
/// `Π K Π` on block-constant functions.
pub fn exact_effective_operator(chain: &ReversibleChain, lumping: &Lumping) -> Result<ReversibleChain> {
    if lumping.blocks.len() != chain.n() {
        return Err(Error::DimensionMismatch {
            expected: chain.n(),
            got: lumping.blocks.len(),
        });
    }
    let m = lumping.m;
    let mass = lumping.block_mass(&chain.pi);
    let mut flow = DMatrix::zeros(m, m);
    for i in 0..chain.n() {
        for j in 0..chain.n() {
            flow[(lumping.blocks[i], lumping.blocks[j])] += chain.pi[i] * chain.k[(i, j)];
        }
    }
    // Symmetrize the flow so rounding cannot break detailed balance.
    let flow = (&flow + flow.transpose()) * 0.5;
    let k = DMatrix::from_fn(m, m, |a, b| flow[(a, b)] / mass[a]);
    ReversibleChain::new(k, mass)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub i: usize,
    pub lambda: f64,
    /// Largest block-average deviation of `φ_i` from its block mean.
    pub eps_avg: f64,
    /// `‖Π φ_i − φ_i‖_π`.
    pub eps_proj: f64,
    /// Distance from `λ_i` to the nearest effective eigenvalue.
    pub gap: f64,
    /// `ε/√(1−ε²)` with `ε = eps_proj`; `None` when vacuous.
    pub bound: Option<f64>,
    /// `gap − bound`; `None` when vacuous.
    pub slack_eigen: Option<f64>,
    /// `eps_proj − 2 eps_avg`.
    pub slack_avg_dev: f64,
}

impl BoundCheck {
    pub fn holds_eigen(&self) -> Option<bool> {
        self.slack_eigen.map(|s| s <= TOL)
    }

    pub fn holds_avg_dev(&self) -> bool {
        self.slack_avg_dev <= TOL
    }
}

/// Checks the eigenvalue and projection inequalities for eigenpair `i`.
pub fn verify_bounds(chain: &ReversibleChain, lumping: &Lumping, i: usize) -> Result<BoundCheck> {
    let (values, vectors) = chain.eigen();
    let effective = exact_effective_operator(chain, lumping)?.eigen().0;
    check_pair(chain, lumping, &values, &vectors, &effective, i)
}

fn check_pair(
    chain: &ReversibleChain,
    lumping: &Lumping,
    values: &[f64],
    vectors: &DMatrix<f64>,
    effective: &[f64],
    i: usize,
) -> Result<BoundCheck> {
    if i == 0 || i >= chain.n() {
        return Err(Error::OutOfRange {
            requested: i,
            available: chain.n(),
        });
    }
    let phi: Vec<f64> = vectors.column(i).iter().copied().collect();
    let proj = exact_pi_projection(chain, lumping, &phi)?;
    let mass = lumping.block_mass(&chain.pi);
    let mut dev = vec![0.0; lumping.m];
    let mut sq = 0.0;
    for (s, b) in lumping.blocks.iter().enumerate() {
        let d = phi[s] - proj[s];
        dev[*b] += chain.pi[s] * d.abs();
        sq += chain.pi[s] * d * d;
    }
    let eps_avg = dev
        .iter()
        .zip(&mass)
        .map(|(d, m)| d / m)
        .fold(0.0, f64::max);
    let eps_proj = sq.sqrt();
    let lambda = values[i];
    let gap = effective
        .iter()
        .map(|l| (l - lambda).abs())
        .fold(f64::INFINITY, f64::min);
    let bound = (eps_proj < 1.0).then(|| eps_proj / (1.0 - eps_proj * eps_proj).sqrt());
    Ok(BoundCheck {
        i,
        lambda,
        eps_avg,
        eps_proj,
        gap,
        bound,
        slack_eigen: bound.map(|b| gap - b),
        slack_avg_dev: eps_proj - 2.0 * eps_avg,
    })
}

/// Checks for every nontrivial eigenpair of one (chain, lumping) pair.
pub fn check_all(chain: &ReversibleChain, lumping: &Lumping) -> Result<Vec<BoundCheck>> {
    let (values, vectors) = chain.eigen();
    let effective = exact_effective_operator(chain, lumping)?.eigen().0;
    (1..chain.n())
        .map(|i| check_pair(chain, lumping, &values, &vectors, &effective, i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    Uniform,
    /// Log-normal with the given scale, in thousandths.
    LogNormal(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub trials: usize,
    /// Eigenpairs checked (all `i ≥ 1` of every trial).
    pub checks: usize,
    pub vacuous: usize,
    pub max_slack_eigen: f64,
    pub max_slack_avg_dev: f64,
    pub violations_eigen: usize,
    pub violations_avg_dev: usize,
    /// Largest `eps_proj / (2 eps_avg)` seen.
    pub worst_ratio_avg_dev: f64,
}

/// Random (chain, lumping) pairs with `3 ≤ n ≤ max_n` states and
/// `2 ≤ m < n` blocks; trial `t` draws from its own stream.
pub fn sweep(trials: usize, seed: u64, max_n: usize, law: WeightLaw) -> Result<SweepSummary> {
    if max_n < 3 {
        return Err(Error::config("max_n", "need at least 3 states"));
    }
    let per_trial: Vec<Vec<BoundCheck>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut s = Stream::new(seed, StreamTag::Oracle, t as u64, u64::MAX);
            let n = 3 + s.below(max_n as u64 - 2) as usize;
            let m = 2 + s.below(n as u64 - 2) as usize;
            let chain_seed = s.below(u64::MAX);
            let chain = match law {
                WeightLaw::Uniform => random_reversible_chain(n, chain_seed)?,
                WeightLaw::LogNormal(scale) => {
                    random_heavy_tailed_chain(n, chain_seed, scale as f64 / 1000.0)?
                }
            };
            let lumping = Lumping::random(n, m, &mut s)?;
            check_all(&chain, &lumping)
        })
        .collect::<Result<_>>()?;
    let mut out = SweepSummary {
        trials,
        checks: 0,
        vacuous: 0,
        max_slack_eigen: f64::NEG_INFINITY,
        max_slack_avg_dev: f64::NEG_INFINITY,
        violations_eigen: 0,
        violations_avg_dev: 0,
        worst_ratio_avg_dev: 0.0,
    };
    for c in per_trial.iter().flatten() {
        out.checks += 1;
        match c.slack_eigen {
            Some(s) => {
                out.max_slack_eigen = out.max_slack_eigen.max(s);
                out.violations_eigen += (s > TOL) as usize;
            }
            None => out.vacuous += 1,
        }
        out.max_slack_avg_dev = out.max_slack_avg_dev.max(c.slack_avg_dev);
        out.violations_avg_dev += (!c.holds_avg_dev()) as usize;
        if c.eps_avg > 0.0 {
            out.worst_ratio_avg_dev = out.worst_ratio_avg_dev.max(c.eps_proj / (2.0 * c.eps_avg));
        }
    }
    Ok(out)
}

/// Exactly lumpable chain: `W_ij = A_{b(i) b(j)} u_i u_j` with symmetric
/// positive `A`, so rows within a block have equal block sums and the
/// nonzero spectrum is carried by block-constant eigenfunctions. The
/// remaining `n − m` eigenvalues are zero.
pub fn lumpable_chain(lumping: &Lumping, seed: u64) -> Result<ReversibleChain> {
    lumpable_perturbed(lumping, seed, 0.0)
}

/// [`lumpable_chain`] weights plus `δ` times a uniform symmetric matrix.
pub fn lumpable_perturbed(lumping: &Lumping, seed: u64, delta: f64) -> Result<ReversibleChain> {
    let n = lumping.blocks.len();
    let m = lumping.m;
    let mut s = Stream::new(seed, StreamTag::Oracle, n as u64, 2);
    let mut a = weight_matrix(m, &mut s, |s| 0.1 + s.uniform());
    // Heavy block self-weights keep the lumped spectrum positive, so the
    // block-constant eigenpairs lead the ordering.
    for b in 0..m {
        a[(b, b)] += 10.0 * n as f64;
    }
    let u: Vec<f64> = (0..n).map(|_| 0.2 + s.uniform()).collect();
    let noise = weight_matrix(n, &mut s, |s| s.uniform());
    let w = DMatrix::from_fn(n, n, |i, j| {
        a[(lumping.blocks[i], lumping.blocks[j])] * u[i] * u[j] + delta * noise[(i, j)]
    });
    ReversibleChain::from_weights(&w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_state_uniform_weights() {
        let c = ReversibleChain::from_weights(&DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert_eq!(c.k(), &DMatrix::from_element(2, 2, 0.5));
        assert_eq!(c.pi(), &[0.5, 0.5]);
    }

    #[test]
    fn validation_rejects_non_reversible() {
        let k = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(ReversibleChain::new(k, vec![1.0 / 3.0; 3]).is_err());
        assert!(Lumping::new(vec![0, 2, 2]).is_err());
    }

    #[test]
    fn random_chains_are_reversible_with_real_spectra() {
        for seed in 0..1000 {
            let n = 2 + (seed as usize % 7);
            let c = random_reversible_chain(n, seed).unwrap();
            for i in 0..n {
                for j in 0..n {
                    assert!((c.pi()[i] * c.k()[(i, j)] - c.pi()[j] * c.k()[(j, i)]).abs() < 1e-14);
                }
            }
            let ev = c.k().complex_eigenvalues();
            assert!(ev.iter().all(|z| z.im.abs() < 1e-10));
            let (vals, _) = c.eigen();
            assert_abs_diff_eq!(vals[0], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn eigenfunctions_are_pi_orthonormal() {
        let c = random_reversible_chain(6, 11).unwrap();
        let (vals, v) = c.eigen();
        for a in 0..6 {
            let kv = c.k() * v.column(a);
            for s in 0..6 {
                assert_abs_diff_eq!(kv[s], vals[a] * v[(s, a)], epsilon = 1e-12);
            }
            for b in 0..6 {
                let dot: f64 = (0..6).map(|s| c.pi()[s] * v[(s, a)] * v[(s, b)]).sum();
                assert_abs_diff_eq!(dot, (a == b) as u8 as f64, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn projection_properties() {
        let c = random_reversible_chain(7, 3).unwrap();
        let mut s = Stream::new(3, StreamTag::Test, 0, 0);
        let l = Lumping::random(7, 3, &mut s).unwrap();
        let f: Vec<f64> = (0..7).map(|_| s.normal()).collect();
        let g: Vec<f64> = (0..7).map(|_| s.normal()).collect();
        let pf = exact_pi_projection(&c, &l, &f).unwrap();
        let pg = exact_pi_projection(&c, &l, &g).unwrap();
        let ppf = exact_pi_projection(&c, &l, &pf).unwrap();
        for (a, b) in ppf.iter().zip(&pf) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let dot = |x: &[f64], y: &[f64]| -> f64 { (0..7).map(|i| c.pi()[i] * x[i] * y[i]).sum() };
        assert_abs_diff_eq!(dot(&pf, &g), dot(&f, &pg), epsilon = 1e-14);
        let konst = exact_pi_projection(&c, &l, &[2.5; 7]).unwrap();
        for v in konst {
            assert_abs_diff_eq!(v, 2.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn identity_lumping_returns_the_chain() {
        let c = random_reversible_chain(5, 8).unwrap();
        let e = exact_effective_operator(&c, &Lumping::identity(5)).unwrap();
        assert!((e.k() - c.k()).abs().max() < 1e-15);
        for (a, b) in e.pi().iter().zip(c.pi()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn effective_eigenvalues_match_lifted_operator() {
        let c = random_reversible_chain(3, 21).unwrap();
        let l = Lumping::new(vec![0, 1, 1]).unwrap();
        let eff = exact_effective_operator(&c, &l).unwrap().eigen().0;
        // Π as an explicit 3×3 matrix, then Π K Π.
        let mass = l.block_mass(c.pi());
        let p = DMatrix::from_fn(3, 3, |i, j| {
            if l.blocks()[i] == l.blocks()[j] {
                c.pi()[j] / mass[l.blocks()[j]]
            } else {
                0.0
            }
        });
        let lifted = &p * c.k() * &p;
        let mut ev: Vec<f64> = lifted.complex_eigenvalues().iter().map(|z| z.re).collect();
        // One eigenvalue belongs to the complement of block-constant
        // functions, where Π vanishes.
        let zero = (0..3).min_by(|&a, &b| ev[a].abs().total_cmp(&ev[b].abs())).unwrap();
        assert_abs_diff_eq!(ev.remove(zero), 0.0, epsilon = 1e-12);
        ev.sort_by(|a, b| b.total_cmp(a));
        assert_abs_diff_eq!(ev[0], eff[0], epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], eff[1], epsilon = 1e-12);
    }

    #[test]
    fn effective_chain_is_reversible_and_interlaced() {
        for seed in 0..200 {
            let c = random_reversible_chain(8, seed).unwrap();
            let mut s = Stream::new(seed, StreamTag::Test, 1, 0);
            let l = Lumping::random(8, 4, &mut s).unwrap();
            let e = exact_effective_operator(&c, &l).unwrap();
            let lo = *c.eigen().0.last().unwrap();
            for v in e.eigen().0 {
                assert!(v >= lo - 1e-12 && v <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn lumpable_chain_has_zero_gaps() {
        for seed in 0..50 {
            let mut s = Stream::new(seed, StreamTag::Test, 2, 0);
            let l = Lumping::random(8, 3, &mut s).unwrap();
            let c = lumpable_chain(&l, seed).unwrap();
            for i in 1..l.m() {
                let r = verify_bounds(&c, &l, i).unwrap();
                assert!(r.gap < 1e-12, "{r:?}");
                assert!(r.eps_proj < 1e-12 && r.eps_avg < 1e-12, "{r:?}");
            }
        }
    }

    #[test]
    fn gap_shrinks_with_perturbation() {
        let mut mean = Vec::new();
        for delta in [0.1, 0.01, 0.001] {
            let mut total = 0.0;
            for seed in 0..100 {
                let mut s = Stream::new(seed, StreamTag::Test, 3, 0);
                let l = Lumping::random(6, 3, &mut s).unwrap();
                let c = lumpable_perturbed(&l, seed, delta).unwrap();
                total += verify_bounds(&c, &l, 1).unwrap().gap;
            }
            mean.push(total / 100.0);
        }
        assert!(mean[0] > mean[1] && mean[1] > mean[2], "{mean:?}");
        assert!(mean[2] < 1e-3, "{mean:?}");
    }

    #[test]
    fn uniform_sweep_has_no_violations() {
        let s = sweep(2000, 5, 8, WeightLaw::Uniform).unwrap();
        assert_eq!(s.violations_eigen, 0);
        assert_eq!(s.violations_avg_dev, 0);
        assert!(s.checks > 2000);
    }

    /// With heavy-tailed weights the factor-2 projection inequality fails:
    /// a state with tiny mass inside a block can carry most of the squared
    /// deviation while contributing little to the average deviation.
    #[test]
    fn heavy_tailed_chains_break_the_average_deviation_inequality() {
        let s = sweep(2000, 5, 8, WeightLaw::LogNormal(3000)).unwrap();
        assert!(s.violations_avg_dev > 0, "{s:?}");
        assert!(s.worst_ratio_avg_dev > 1.0);
        assert_eq!(s.violations_eigen, 0);
    }

    #[test]
    fn rejects_bad_indices() {
        let c = random_reversible_chain(4, 1).unwrap();
        let l = Lumping::new(vec![0, 0, 1, 1]).unwrap();
        assert!(verify_bounds(&c, &l, 0).is_err());
        assert!(verify_bounds(&c, &l, 4).is_err());
    }
}
