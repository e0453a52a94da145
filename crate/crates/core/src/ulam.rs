//! Ulam discretization of the transfer operator and its spectrum.
//!
//! Transitions between labelled states (grid cells, or bins of a reaction
//! coordinate) at a fixed lag are counted over every offset of a trajectory.
//! The count matrix is symmetrized, `C ← (C + Cᵀ)/2`, which enforces detailed
//! balance; stationary weights are the normalized row sums and the transition
//! matrix is the row-normalized count matrix. Labels that never occur in a
//! counted pair are dropped.
//!
//! Eigenpairs are computed from the symmetric similarity transform
//! `S = D^{1/2} K D^{−1/2}` with `D = diag(μ̂)`; eigenvectors `v` of `S` map
//! back to eigenfunctions `φ = D^{−1/2} v`, which are orthonormal in the
//! μ̂-weighted inner product.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use sprs::{CsMat, TriMat};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::grid::GridPartition;

/// Row-stochastic transition matrix over occupied states.
#[derive(Debug, Clone)]
pub struct UlamOperator {
    matrix: CsMat<f64>,
    weights: Vec<f64>,
    /// Lag in time units.
    pub lag: f64,
    /// `states[i]` is the original label (cell or bin index) of row `i`.
    states: Vec<usize>,
    /// `max |C_ij − C_ji| / ΣC` of the raw counts, before symmetrization.
    pub raw_asymmetry: f64,
    /// Number of transition pairs that entered the count.
    pub n_pairs: usize,
}

impl UlamOperator {
    /// Counts `labels[t] → labels[t + lag_steps]` for every `t`; `None`
    /// labels (states outside the partition) drop the pair.
    pub fn from_labels(labels: &[Option<u32>], lag_steps: usize, lag: f64) -> Result<Self> {
        if lag_steps == 0 {
            return Err(Error::config("lag_steps", "must be at least 1"));
        }
        if labels.len() <= lag_steps {
            return Err(Error::Degenerate(format!(
                "lag of {lag_steps} steps exceeds trajectory length {}",
                labels.len()
            )));
        }
        let mut codes: Vec<u64> = labels
            .iter()
            .zip(&labels[lag_steps..])
            .filter_map(|(a, b)| Some(((*a)? as u64) << 32 | (*b)? as u64))
            .collect();
        let n_pairs = codes.len();
        if n_pairs == 0 {
            return Err(Error::Degenerate("no transition pair inside the partition".into()));
        }
        codes.sort_unstable();

        let mut raw: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        let mut i = 0;
        while i < codes.len() {
            let c = codes[i];
            let mut j = i;
            while j < codes.len() && codes[j] == c {
                j += 1;
            }
            raw.insert(((c >> 32) as u32, c as u32), (j - i) as f64);
            i = j;
        }

        let total = n_pairs as f64;
        let mut raw_asymmetry: f64 = 0.0;
        let mut sym: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for (&(a, b), &c) in &raw {
            let back = raw.get(&(b, a)).copied().unwrap_or(0.0);
            raw_asymmetry = raw_asymmetry.max((c - back).abs() / total);
            *sym.entry((a, b)).or_insert(0.0) += 0.5 * c;
            *sym.entry((b, a)).or_insert(0.0) += 0.5 * c;
        }

        let mut row_sum: BTreeMap<u32, f64> = BTreeMap::new();
        for (&(a, _), &c) in &sym {
            *row_sum.entry(a).or_insert(0.0) += c;
        }
        let states: Vec<usize> = row_sum.keys().map(|&s| s as usize).collect();
        if states.len() < 2 {
            return Err(Error::Degenerate(format!(
                "only {} occupied state(s); need at least 2",
                states.len()
            )));
        }
        let compact: BTreeMap<u32, usize> = row_sum
            .keys()
            .enumerate()
            .map(|(i, &s)| (s, i))
            .collect();
        let n = states.len();
        let mut tri = TriMat::with_capacity((n, n), sym.len());
        for (&(a, b), &c) in &sym {
            tri.add_triplet(compact[&a], compact[&b], c / row_sum[&a]);
        }
        let sum_all: f64 = row_sum.values().sum();
        let weights = row_sum.values().map(|r| r / sum_all).collect();
        Ok(Self {
            matrix: tri.to_csr(),
            weights,
            lag,
            states,
            raw_asymmetry,
            n_pairs,
        })
    }

    /// Builds an operator directly from a row-stochastic matrix and
    /// stationary weights. Both are validated.
    pub fn from_dense(k: &DMatrix<f64>, weights: Vec<f64>, lag: f64) -> Result<Self> {
        let n = k.nrows();
        if k.ncols() != n || weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: weights.len(),
            });
        }
        if n < 2 {
            return Err(Error::Degenerate("need at least two states".into()));
        }
        let mut tri = TriMat::new((n, n));
        for i in 0..n {
            for j in 0..n {
                if k[(i, j)] != 0.0 {
                    tri.add_triplet(i, j, k[(i, j)]);
                }
            }
        }
        let op = Self {
            matrix: tri.to_csr(),
            weights,
            lag,
            states: (0..n).collect(),
            raw_asymmetry: 0.0,
            n_pairs: 0,
        };
        op.check_invariants(1e-10)?;
        Ok(op)
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn matrix(&self) -> &CsMat<f64> {
        &self.matrix
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    /// Row index of an original label, if occupied.
    pub fn row_of(&self, label: usize) -> Option<usize> {
        self.states.binary_search(&label).ok()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j).copied().unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n_states();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.matrix.outer_iterator().enumerate() {
            for (j, &v) in row.iter() {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Largest deviation of a row sum from 1.
    pub fn row_sum_error(&self) -> f64 {
        self.matrix
            .outer_iterator()
            .map(|row| (row.data().iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `max_ij |μ̂_i K_ij − μ̂_j K_ji|`.
    pub fn detailed_balance_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.matrix.outer_iterator().enumerate() {
            for (j, &v) in row.iter() {
                let back = self.entry(j, i);
                worst = worst.max((self.weights[i] * v - self.weights[j] * back).abs());
            }
        }
        worst
    }

    /// Row stochasticity, non-negativity, weight normalization and detailed
    /// balance up to `db_tol`.
    pub fn check_invariants(&self, db_tol: f64) -> Result<()> {
        if self.matrix.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Degenerate("negative or non-finite transition probability".into()));
        }
        let rs = self.row_sum_error();
        if rs > 1e-12 {
            return Err(Error::Degenerate(format!("row sums off by {rs:e}")));
        }
        let ws: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| w < 0.0) || (ws - 1.0).abs() > 1e-12 {
            return Err(Error::Degenerate(format!("weights sum to {ws}")));
        }
        let db = self.detailed_balance_residual();
        if db > db_tol {
            return Err(Error::Degenerate(format!("detailed balance residual {db:e}")));
        }
        Ok(())
    }

    /// `S = D^{1/2} K D^{−1/2}`, symmetrized against rounding.
    fn symmetric_form(&self) -> CsMat<f64> {
        let sq: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        let n = self.n_states();
        let mut tri = TriMat::with_capacity((n, n), 2 * self.matrix.nnz());
        for (i, row) in self.matrix.outer_iterator().enumerate() {
            for (j, &v) in row.iter() {
                let s = 0.5 * sq[i] / sq[j] * v;
                tri.add_triplet(i, j, s);
                tri.add_triplet(j, i, s);
            }
        }
        tri.to_csr()
    }
}

/// Labels each trajectory state by its grid cell.
pub fn label_states(trajectory: &Trajectory, grid: &GridPartition) -> Vec<Option<u32>> {
    trajectory
        .iter()
        .map(|x| grid.cell_of(x).map(|c| c as u32))
        .collect()
}

/// Ulam operator of `grid` at a lag of `lag_steps` stored samples.
pub fn build_ulam(
    trajectory: &Trajectory,
    lag_steps: usize,
    grid: &GridPartition,
) -> Result<UlamOperator> {
    if trajectory.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: trajectory.dim(),
        });
    }
    let labels = label_states(trajectory, grid);
    UlamOperator::from_labels(&labels, lag_steps, lag_steps as f64 * trajectory.dt)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenPair {
    pub eigenvalue: f64,
    /// Per-state values, unit norm in the μ̂-weighted 2-norm.
    pub eigenfunction: Vec<f64>,
    /// `‖S v − λ v‖₂` of the symmetric problem.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenMethod {
    /// Dense for up to [`DENSE_LIMIT`] states, subspace iteration above.
    Auto,
    Dense,
    Subspace,
}

pub const DENSE_LIMIT: usize = 2000;

/// The `k` largest eigenpairs, in descending order of eigenvalue.
pub fn spectrum(op: &UlamOperator, k: usize) -> Result<Vec<EigenPair>> {
    spectrum_with(op, k, EigenMethod::Auto)
}

pub fn spectrum_with(op: &UlamOperator, k: usize, method: EigenMethod) -> Result<Vec<EigenPair>> {
    let n = op.n_states();
    if k > n {
        return Err(Error::OutOfRange {
            requested: k,
            available: n,
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let s = op.symmetric_form();
    let dense = match method {
        EigenMethod::Dense => true,
        EigenMethod::Subspace => false,
        EigenMethod::Auto => n <= DENSE_LIMIT,
    };
    let (values, vectors) = if dense {
        dense_top(&s, k)
    } else {
        subspace_top(&s, k)?
    };
    let sq: Vec<f64> = op.weights.iter().map(|w| w.sqrt()).collect();
    let mut pairs = Vec::with_capacity(k);
    for (lambda, v) in values.into_iter().zip(vectors) {
        let residual = residual_norm(&s, &v, lambda);
        let mut phi: Vec<f64> = v.iter().zip(&sq).map(|(x, s)| x / s).collect();
        orient(&mut phi, &op.weights);
        pairs.push(EigenPair {
            eigenvalue: lambda,
            eigenfunction: phi,
            residual,
        });
    }
    let worst = pairs.iter().map(|p| p.residual).fold(0.0, f64::max);
    if worst > 1e-6 {
        return Err(Error::Eigensolver {
            max_residual: worst,
        });
    }
    Ok(pairs)
}

fn spmv(s: &CsMat<f64>, x: &[f64], y: &mut [f64]) {
    for (i, row) in s.outer_iterator().enumerate() {
        y[i] = row.iter().map(|(j, &v)| v * x[j]).sum();
    }
}

fn residual_norm(s: &CsMat<f64>, v: &[f64], lambda: f64) -> f64 {
    let mut y = vec![0.0; v.len()];
    spmv(s, v, &mut y);
    y.iter()
        .zip(v)
        .map(|(a, b)| (a - lambda * b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Fixes the sign of an eigenfunction: its μ̂-mean is made positive when it
/// is clearly nonzero (the constant mode), otherwise the largest-magnitude
/// entry is made positive.
fn orient(phi: &mut [f64], weights: &[f64]) {
    let mean: f64 = phi.iter().zip(weights).map(|(p, w)| p * w).sum();
    let flip = if mean.abs() > 1e-6 {
        mean < 0.0
    } else {
        let big = phi
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        big < 0.0
    };
    if flip {
        phi.iter_mut().for_each(|p| *p = -*p);
    }
}

fn dense_top(s: &CsMat<f64>, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = s.rows();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in s.outer_iterator().enumerate() {
        for (j, &v) in row.iter() {
            m[(i, j)] = v;
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order[..k]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (values, vectors)
}

/// Block subspace iteration with Rayleigh–Ritz on `(S + I)/2`, whose
/// eigenvalues lie in [0, 1] and keep the ordering of those of `S`.
fn subspace_top(s: &CsMat<f64>, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = s.rows();
    let b = (k + 8).min(n);
    let mut x = DMatrix::from_fn(n, b, |i, j| {
        // Deterministic, generic start block.
        let h = crate::rng::mix64((i as u64) << 20 ^ j as u64);
        (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    });
    let mut y = DMatrix::zeros(n, b);
    let apply = |x: &DMatrix<f64>, y: &mut DMatrix<f64>| {
        let mut out = vec![0.0; n];
        for j in 0..b {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            spmv(s, &col, &mut out);
            for i in 0..n {
                y[(i, j)] = 0.5 * (out[i] + col[i]);
            }
        }
    };
    let tol = 1e-10;
    for it in 0..20_000 {
        apply(&x, &mut y);
        x = y.clone().qr().q();
        if it % 10 == 9 {
            apply(&x, &mut y);
            let h = x.transpose() * &y;
            let h = (&h + h.transpose()) * 0.5;
            let eig = SymmetricEigen::new(h);
            let mut order: Vec<usize> = (0..b).collect();
            order.sort_by(|&p, &q| eig.eigenvalues[q].total_cmp(&eig.eigenvalues[p]));
            let rot = DMatrix::from_fn(b, b, |i, j| eig.eigenvectors[(i, order[j])]);
            x = &x * rot;
            let mut worst: f64 = 0.0;
            let mut values = Vec::with_capacity(k);
            let mut vectors = Vec::with_capacity(k);
            for j in 0..k {
                let v: Vec<f64> = x.column(j).iter().copied().collect();
                let lambda = 2.0 * eig.eigenvalues[order[j]] - 1.0;
                worst = worst.max(residual_norm(s, &v, lambda));
                values.push(lambda);
                vectors.push(v);
            }
            if worst < tol {
                return Ok((values, vectors));
            }
        }
    }
    Err(Error::Eigensolver { max_residual: f64::NAN })
}

/// `σ_i = −ln(λ_i)/τ`; `None` where `λ_i ≤ 0`. Eigenvalues at or above one
/// (rounding around `λ₀`) give rate zero.
pub fn relaxation_rates(pairs: &[EigenPair], tau: f64) -> Vec<Option<f64>> {
    pairs
        .iter()
        .map(|p| relaxation_rate(p.eigenvalue, tau))
        .collect()
}

pub fn relaxation_rate(lambda: f64, tau: f64) -> Option<f64> {
    if lambda <= 0.0 || !lambda.is_finite() || tau <= 0.0 {
        None
    } else if lambda >= 1.0 {
        Some(0.0)
    } else {
        Some(-lambda.ln() / tau)
    }
}

/// μ̂-weighted inner product.
pub fn weighted_dot(weights: &[f64], f: &[f64], g: &[f64]) -> f64 {
    weights
        .iter()
        .zip(f.iter().zip(g))
        .map(|(w, (a, b))| w * a * b)
        .sum()
}

/// `Σ_j K_ij f_j`.
pub fn apply_operator(op: &UlamOperator, f: &[f64]) -> Vec<f64> {
    let x = DVector::from_column_slice(f);
    let mut y = vec![0.0; op.n_states()];
    spmv(&op.matrix, x.as_slice(), &mut y);
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoxDomain;
    use approx::assert_abs_diff_eq;

    fn two_state(p: f64) -> UlamOperator {
        let k = DMatrix::from_row_slice(2, 2, &[1.0 - p, p, p, 1.0 - p]);
        UlamOperator::from_dense(&k, vec![0.5, 0.5], 1.0).unwrap()
    }

    #[test]
    fn constant_trajectory_is_degenerate() {
        let labels = vec![Some(3u32); 100];
        assert!(matches!(
            UlamOperator::from_labels(&labels, 1, 1.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn lag_longer_than_data() {
        let labels = vec![Some(0u32), Some(1)];
        assert!(UlamOperator::from_labels(&labels, 2, 1.0).is_err());
        assert!(UlamOperator::from_labels(&labels, 0, 1.0).is_err());
    }

    #[test]
    fn alternating_two_cells() {
        let labels: Vec<Option<u32>> = (0..1001).map(|t| Some((t % 2) as u32 + 7)).collect();
        let op = UlamOperator::from_labels(&labels, 1, 1.0).unwrap();
        assert_eq!(op.states(), &[7, 8]);
        assert_eq!(op.to_dense(), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(op.weights(), &[0.5, 0.5]);
        let sp = spectrum(&op, 2).unwrap();
        assert_abs_diff_eq!(sp[0].eigenvalue, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sp[1].eigenvalue, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn outside_labels_drop_pairs() {
        let labels = vec![Some(0u32), None, Some(1), Some(0), Some(1)];
        let op = UlamOperator::from_labels(&labels, 1, 1.0).unwrap();
        assert_eq!(op.n_pairs, 2);
        op.check_invariants(1e-14).unwrap();
    }

    #[test]
    fn symmetrization_restores_detailed_balance() {
        // Cyclic 0 → 1 → 2 → 0 is maximally irreversible.
        let labels: Vec<Option<u32>> = (0..3000).map(|t| Some((t % 3) as u32)).collect();
        let op = UlamOperator::from_labels(&labels, 1, 1.0).unwrap();
        assert!(op.raw_asymmetry > 0.3);
        assert!(op.detailed_balance_residual() < 1e-15);
        op.check_invariants(1e-14).unwrap();
    }

    #[test]
    fn two_by_two_closed_form() {
        let sp = spectrum(&two_state(0.1), 2).unwrap();
        assert_abs_diff_eq!(sp[0].eigenvalue, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sp[1].eigenvalue, 0.8, epsilon = 1e-12);
        for v in &sp[0].eigenfunction {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(sp[1].eigenfunction[0].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_spectrum() {
        let op = UlamOperator::from_dense(&DMatrix::identity(4, 4), vec![0.25; 4], 1.0).unwrap();
        for p in spectrum(&op, 4).unwrap() {
            assert_abs_diff_eq!(p.eigenvalue, 1.0, epsilon = 1e-12);
        }
        assert!(spectrum(&op, 5).is_err());
    }

    #[test]
    fn rates() {
        let pairs: Vec<EigenPair> = [1.0, (-1.0f64).exp(), 0.8065, 0.0, -0.2]
            .iter()
            .map(|&l| EigenPair {
                eigenvalue: l,
                eigenfunction: vec![],
                residual: 0.0,
            })
            .collect();
        let r = relaxation_rates(&pairs, 1.0);
        assert_eq!(r[0], Some(0.0));
        assert_abs_diff_eq!(r[1].unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(r[3], None);
        assert_eq!(r[4], None);
        let r = relaxation_rates(&pairs, 0.5);
        assert_abs_diff_eq!(r[2].unwrap(), 0.430, epsilon = 5e-4);
    }

    /// Random-walk chain on a small grid with non-uniform weights.
    fn random_walk_operator(n_side: usize) -> UlamOperator {
        let grid = GridPartition::uniform(BoxDomain::square(0.0, 1.0), n_side).unwrap();
        let mut labels = Vec::new();
        let mut s = crate::rng::Stream::new(5, crate::rng::StreamTag::Test, 0, 0);
        let (mut i, mut j) = (0i64, 0i64);
        let n = n_side as i64;
        for _ in 0..200_000 {
            let step = s.below(4);
            let bias = if i < n / 2 { 0.5 } else { 0.2 };
            if s.uniform() < bias {
                match step {
                    0 => i = (i + 1).min(n - 1),
                    1 => i = (i - 1).max(0),
                    2 => j = (j + 1).min(n - 1),
                    _ => j = (j - 1).max(0),
                }
            }
            labels.push(Some((i * n + j) as u32));
        }
        let _ = grid;
        UlamOperator::from_labels(&labels, 3, 3.0).unwrap()
    }

    #[test]
    fn eigenfunctions_are_orthonormal() {
        let op = random_walk_operator(8);
        op.check_invariants(1e-14).unwrap();
        let sp = spectrum(&op, 6).unwrap();
        for a in &sp {
            assert!(a.eigenvalue.abs() <= 1.0 + 1e-10);
            for b in &sp {
                let d = weighted_dot(op.weights(), &a.eigenfunction, &b.eigenfunction);
                let e = if std::ptr::eq(a, b) { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(d, e, epsilon = 1e-8);
            }
        }
        let c = &sp[0].eigenfunction;
        let spread = c.iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
        assert!(spread < 1e-8);
        // Right eigenvectors of K.
        for p in &sp {
            let kf = apply_operator(&op, &p.eigenfunction);
            for (a, b) in kf.iter().zip(&p.eigenfunction) {
                assert_abs_diff_eq!(*a, p.eigenvalue * b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn dense_and_subspace_agree() {
        let op = random_walk_operator(10);
        let d = spectrum_with(&op, 5, EigenMethod::Dense).unwrap();
        let s = spectrum_with(&op, 5, EigenMethod::Subspace).unwrap();
        for (a, b) in d.iter().zip(&s) {
            assert_abs_diff_eq!(a.eigenvalue, b.eigenvalue, epsilon = 1e-9);
            let dot = weighted_dot(op.weights(), &a.eigenfunction, &b.eigenfunction);
            assert_abs_diff_eq!(dot.abs(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn spectrum_is_real_for_the_raw_matrix() {
        let op = random_walk_operator(6);
        let k = op.to_dense();
        let ev = k.complex_eigenvalues();
        for z in ev.iter() {
            assert!(z.im.abs() < 1e-10, "{z}");
        }
    }
}
