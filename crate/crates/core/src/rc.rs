//! Reaction coordinates, the coordinate projection `Π_ξ` on Ulam cells, the
//! effective transfer operator, and the eigenvalue bounds.

use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::grid::{linspace, BoxDomain, GridPartition};
use crate::manifold::{ManifoldAtlas, ProjectionResult};
use crate::ulam::{relaxation_rate, EigenPair, UlamOperator};

/// Scalar reaction coordinate given by values on a regular node lattice
/// (boundary nodes included) and bilinear interpolation between them.
#[derive(Debug, Clone, PartialEq)]
pub struct RCField {
    domain: BoxDomain,
    nodes: [usize; 2],
    /// Node values, first axis slowest.
    values: Vec<f64>,
}

impl RCField {
    pub fn from_nodes(domain: BoxDomain, nodes: [usize; 2], values: Vec<f64>) -> Result<Self> {
        if domain.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: domain.dim(),
            });
        }
        if nodes[0] < 2 || nodes[1] < 2 {
            return Err(Error::config("rc_lattice", "need at least 2 nodes per axis"));
        }
        if values.len() != nodes[0] * nodes[1] {
            return Err(Error::DimensionMismatch {
                expected: nodes[0] * nodes[1],
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite reaction coordinate value".into()));
        }
        Ok(Self {
            domain,
            nodes,
            values,
        })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn nodes(&self) -> [usize; 2] {
        self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, i: usize, j: usize) -> Vec<f64> {
        lattice_point(&self.domain, self.nodes, i, j)
    }

    /// Smallest and largest node value; interpolants stay inside.
    pub fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)))
    }

    /// Bilinear interpolant; `None` outside the domain.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        let mut idx = [0usize; 2];
        let mut frac = [0.0; 2];
        for a in 0..2 {
            let (lo, hi) = (self.domain.lo[a], self.domain.hi[a]);
            if !(x[a] >= lo && x[a] <= hi) {
                return None;
            }
            let mut s = (x[a] - lo) / (hi - lo) * (self.nodes[a] - 1) as f64;
            // Snap to nodes so that node values are reproduced exactly.
            if (s - s.round()).abs() < 1e-12 * self.nodes[a] as f64 {
                s = s.round();
            }
            let i = (s.floor() as usize).min(self.nodes[a] - 2);
            idx[a] = i;
            frac[a] = s - i as f64;
        }
        let n2 = self.nodes[1];
        let v = |i: usize, j: usize| self.values[i * n2 + j];
        let (i, j) = (idx[0], idx[1]);
        let (u, w) = (frac[0], frac[1]);
        Some(
            (1.0 - u) * ((1.0 - w) * v(i, j) + w * v(i, j + 1))
                + u * ((1.0 - w) * v(i + 1, j) + w * v(i + 1, j + 1)),
        )
    }
}

fn lattice_point(domain: &BoxDomain, nodes: [usize; 2], i: usize, j: usize) -> Vec<f64> {
    let at = |a: usize, k: usize| {
        domain.lo[a] + (domain.hi[a] - domain.lo[a]) * k as f64 / (nodes[a] - 1) as f64
    };
    vec![at(0, i), at(1, j)]
}

/// Starts on an `n × n` node lattice covering the domain, in node order.
pub fn rc_lattice_starts(domain: &BoxDomain, n: usize) -> Vec<Vec<f64>> {
    let xs = linspace(domain.lo[0], domain.hi[0], n);
    let ys = linspace(domain.lo[1], domain.hi[1], n);
    xs.iter()
        .flat_map(|a| ys.iter().map(move |b| vec![*a, *b]))
        .collect()
}

/// `ξ(x) = ℰ(Q(x))`: node values are the parameters of the anchors chosen
/// for the lattice starts (given in [`rc_lattice_starts`] order).
pub fn build_rc_ideal(
    atlas: &ManifoldAtlas,
    domain: &BoxDomain,
    n: usize,
    results: &[ProjectionResult],
) -> Result<RCField> {
    if results.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            got: results.len(),
        });
    }
    let values = results
        .iter()
        .map(|r| {
            atlas.anchors().get(r.anchor).map(|a| a.y).ok_or(Error::OutOfRange {
                requested: r.anchor,
                available: atlas.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RCField::from_nodes(domain.clone(), [n, n], values)
}

/// Lattice field from scattered samples: every node takes the value of the
/// nearest sample point (first one on ties).
pub fn build_rc_scattered(
    domain: &BoxDomain,
    n: usize,
    points: &[Vec<f64>],
    values: &[f64],
) -> Result<RCField> {
    if points.is_empty() {
        return Err(Error::Empty("scattered reaction coordinate samples"));
    }
    if points.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            got: values.len(),
        });
    }
    let node_values = rc_lattice_starts(domain, n)
        .iter()
        .map(|x| {
            let mut best = (f64::INFINITY, 0);
            for (k, p) in points.iter().enumerate() {
                let d = (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2);
                if d < best.0 {
                    best = (d, k);
                }
            }
            values[best.1]
        })
        .collect();
    RCField::from_nodes(domain.clone(), [n, n], node_values)
}

/// `ξ(x) = x₁` on a 2-node lattice (bilinear interpolation is then exact).
pub fn build_rc_naive(domain: &BoxDomain) -> Result<RCField> {
    let (a, b) = (domain.lo[0], domain.hi[0]);
    RCField::from_nodes(domain.clone(), [2, 2], vec![a, a, b, b])
}

/// Equal-width bins over `[lo, hi]`; values outside are clamped to the end
/// bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RcBinning {
    pub lo: f64,
    pub hi: f64,
    pub n_bins: usize,
}

impl RcBinning {
    pub fn new(lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::config("n_bins", "need at least 2 bins"));
        }
        if !(lo < hi) {
            return Err(Error::Degenerate(format!(
                "reaction coordinate is constant ({lo}); one bin only"
            )));
        }
        Ok(Self { lo, hi, n_bins })
    }

    pub fn over(rc: &RCField, n_bins: usize) -> Result<Self> {
        let (lo, hi) = rc.range();
        Self::new(lo, hi, n_bins)
    }

    #[inline]
    pub fn bin_of(&self, y: f64) -> usize {
        let s = ((y - self.lo) / (self.hi - self.lo) * self.n_bins as f64).floor();
        (s.max(0.0) as usize).min(self.n_bins - 1)
    }
}

/// Ulam operator of the projected trajectory `y_t = ξ(X_t)`, binned.
pub fn effective_operator(
    trajectory: &Trajectory,
    rc: &RCField,
    n_bins: usize,
    lag_steps: usize,
) -> Result<UlamOperator> {
    let bins = RcBinning::over(rc, n_bins)?;
    let labels: Vec<Option<u32>> = trajectory
        .iter()
        .map(|x| rc.eval(x).map(|y| bins.bin_of(y) as u32))
        .collect();
    UlamOperator::from_labels(&labels, lag_steps, lag_steps as f64 * trajectory.dt)
}

/// Discrete level sets of `ξ`: every Ulam state belongs to one bin, with the
/// stationary weights `μ̂` as the conditioned measure.
#[derive(Debug, Clone)]
pub struct LevelSetWeights {
    pub n_bins: usize,
    bin_of_state: Vec<usize>,
    mu: Vec<f64>,
    gamma: Vec<f64>,
}

impl LevelSetWeights {
    pub fn from_assignment(bin_of_state: Vec<usize>, mu: Vec<f64>, n_bins: usize) -> Result<Self> {
        if bin_of_state.len() != mu.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: bin_of_state.len(),
            });
        }
        if let Some(&b) = bin_of_state.iter().find(|&&b| b >= n_bins) {
            return Err(Error::OutOfRange {
                requested: b,
                available: n_bins,
            });
        }
        let total: f64 = mu.iter().sum();
        if !(total > 0.0) || mu.iter().any(|w| *w < 0.0) {
            return Err(Error::Degenerate("level-set weights need positive mass".into()));
        }
        let mu: Vec<f64> = mu.iter().map(|w| w / total).collect();
        let mut gamma = vec![0.0; n_bins];
        for (b, w) in bin_of_state.iter().zip(&mu) {
            gamma[*b] += w;
        }
        Ok(Self {
            n_bins,
            bin_of_state,
            mu,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Total weight `Γ̂` per bin.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn bin_of_state(&self) -> &[usize] {
        &self.bin_of_state
    }

    fn check(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.mu.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mu.len(),
                got: f.len(),
            });
        }
        Ok(())
    }

    /// μ̂-weighted average of `f` over each bin (zero for empty bins).
    pub fn bin_means(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check(f)?;
        let mut sums = vec![0.0; self.n_bins];
        for ((b, w), v) in self.bin_of_state.iter().zip(&self.mu).zip(f) {
            sums[*b] += w * v;
        }
        Ok(sums
            .iter()
            .zip(&self.gamma)
            .map(|(s, g)| if *g > 0.0 { s / g } else { 0.0 })
            .collect())
    }

    /// `Π_ξ f`: every state gets the μ̂-average of `f` over its bin.
    pub fn apply_pi(&self, f: &[f64]) -> Result<Vec<f64>> {
        let means = self.bin_means(f)?;
        Ok(self.bin_of_state.iter().map(|b| means[*b]).collect())
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.mu.iter().zip(f).map(|(w, v)| w * v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        self.mu.iter().zip(f.iter().zip(g)).map(|(w, (a, b))| w * a * b).sum()
    }

    /// `‖f − Π_ξ f‖_μ̂`.
    pub fn projection_error(&self, f: &[f64]) -> Result<f64> {
        let p = self.apply_pi(f)?;
        let d: Vec<f64> = f.iter().zip(&p).map(|(a, b)| a - b).collect();
        Ok(self.norm(&d))
    }

    /// Average and supremum deviation of `f` from its bin averages.
    pub fn levelset_deviation(&self, f: &[f64]) -> Result<LevelSetDeviation> {
        let means = self.bin_means(f)?;
        let mut avg = vec![0.0; self.n_bins];
        let mut sup = vec![0.0f64; self.n_bins];
        for ((b, w), v) in self.bin_of_state.iter().zip(&self.mu).zip(f) {
            let dev = (v - means[*b]).abs();
            avg[*b] += w * dev;
            sup[*b] = sup[*b].max(dev);
        }
        let mut per_bin = Vec::new();
        let mut empty_bins = Vec::new();
        for b in 0..self.n_bins {
            if self.gamma[b] > 0.0 {
                // A weighted mean never exceeds the maximum; clamp rounding.
                let a = (avg[b] / self.gamma[b]).min(sup[b]);
                per_bin.push(BinDeviation {
                    bin: b,
                    avg: a,
                    sup: sup[b],
                });
            } else {
                empty_bins.push(b);
            }
        }
        let max_avg = per_bin.iter().map(|d| d.avg).fold(0.0, f64::max);
        let max_sup = per_bin.iter().map(|d| d.sup).fold(0.0, f64::max);
        Ok(LevelSetDeviation {
            per_bin,
            max_avg,
            max_sup,
            empty_bins,
        })
    }
}

/// Assigns each state of a grid-cell Ulam operator to the bin of `ξ` at its
/// cell center.
pub fn level_set_weights(
    rc: &RCField,
    ulam: &UlamOperator,
    grid: &GridPartition,
    bins: &RcBinning,
) -> Result<LevelSetWeights> {
    let assignment = ulam
        .states()
        .iter()
        .map(|&cell| {
            let c = grid.cell_center(cell);
            rc.eval(&c)
                .map(|y| bins.bin_of(y))
                .ok_or_else(|| Error::Degenerate(format!("reaction coordinate undefined at {c:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    LevelSetWeights::from_assignment(assignment, ulam.weights().to_vec(), bins.n_bins)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinDeviation {
    pub bin: usize,
    pub avg: f64,
    pub sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSetDeviation {
    pub per_bin: Vec<BinDeviation>,
    pub max_avg: f64,
    pub max_sup: f64,
    pub empty_bins: Vec<usize>,
}

/// `ε/√(1−ε²)`: eigenvalue error allowed by a projection error `ε`.
pub fn eigenvalue_bound_strong(eps: f64) -> Result<f64> {
    if !(eps >= 0.0) {
        return Err(Error::config("eps", format!("must be >= 0, got {eps}")));
    }
    if eps >= 1.0 {
        return Err(Error::VacuousBound { eps });
    }
    Ok(eps / (1.0 - eps * eps).sqrt())
}

/// Strong bound applied to the projection error `2ε/|λ_i|` implied by an
/// average level-set deviation `ε`.
pub fn eigenvalue_bound_weak(eps: f64, lambda: f64) -> Result<f64> {
    if !(eps >= 0.0) {
        return Err(Error::config("eps", format!("must be >= 0, got {eps}")));
    }
    if lambda == 0.0 {
        return Err(Error::VacuousBound { eps: f64::INFINITY });
    }
    eigenvalue_bound_strong(2.0 * eps / lambda.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bounds {
    pub strong: Option<f64>,
    pub weak: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumComparison {
    pub d: usize,
    pub lambda_full: Vec<f64>,
    pub lambda_eff: Vec<f64>,
    pub gaps: Vec<f64>,
    pub sigma_full: Vec<Option<f64>>,
    pub sigma_eff: Vec<Option<f64>>,
    pub bounds: Bounds,
}

/// Index-wise comparison of the `d + 1` leading eigenvalues.
pub fn compare_spectra(
    full: &[EigenPair],
    effective: &[EigenPair],
    tau: f64,
    d: usize,
) -> Result<SpectrumComparison> {
    if d == 0 {
        return Err(Error::config("d", "must be at least 1"));
    }
    for list in [full, effective] {
        if list.len() < d + 1 {
            return Err(Error::OutOfRange {
                requested: d + 1,
                available: list.len(),
            });
        }
    }
    let lf: Vec<f64> = full[..=d].iter().map(|p| p.eigenvalue).collect();
    let le: Vec<f64> = effective[..=d].iter().map(|p| p.eigenvalue).collect();
    Ok(SpectrumComparison {
        d,
        gaps: lf.iter().zip(&le).map(|(a, b)| (a - b).abs()).collect(),
        sigma_full: lf.iter().map(|l| relaxation_rate(*l, tau)).collect(),
        sigma_eff: le.iter().map(|l| relaxation_rate(*l, tau)).collect(),
        lambda_full: lf,
        lambda_eff: le,
        bounds: Bounds {
            strong: None,
            weak: None,
        },
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64;
        for k in i..=j {
            r[order[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Empty("need at least two samples for a correlation"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("constant sample in rank correlation".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Stream, StreamTag};
    use crate::ulam::build_ulam;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn square() -> BoxDomain {
        BoxDomain::square(-2.0, 2.0)
    }

    fn random_weights(seed: u64, n: usize, n_bins: usize) -> LevelSetWeights {
        let mut s = Stream::new(seed, StreamTag::Test, 7, 0);
        let bins: Vec<usize> = (0..n).map(|_| s.below(n_bins as u64) as usize).collect();
        let mu: Vec<f64> = (0..n).map(|_| s.uniform() + 1e-3).collect();
        LevelSetWeights::from_assignment(bins, mu, n_bins).unwrap()
    }

    fn random_fn(seed: u64, n: usize) -> Vec<f64> {
        let mut s = Stream::new(seed, StreamTag::Test, 8, 0);
        (0..n).map(|_| s.normal()).collect()
    }

    #[test]
    fn naive_rc_is_first_coordinate() {
        let rc = build_rc_naive(&square()).unwrap();
        assert_abs_diff_eq!(rc.eval(&[0.3, -1.7]).unwrap(), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(rc.eval(&[0.3, 1.9]).unwrap(), 0.3, epsilon = 1e-15);
        assert_eq!(rc.eval(&[2.5, 0.0]), None);
    }

    #[test]
    fn bilinear_reproduces_nodes_and_affine_functions() {
        let d = square();
        let n = 7;
        let values: Vec<f64> = rc_lattice_starts(&d, n)
            .iter()
            .map(|x| 0.5 * x[0] - 1.5 * x[1] + 0.25)
            .collect();
        let rc = RCField::from_nodes(d, [n, n], values.clone()).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(rc.eval(&rc.node(i, j)).unwrap(), values[i * n + j]);
            }
        }
        let x = [0.123, -1.456];
        assert_abs_diff_eq!(rc.eval(&x).unwrap(), 0.5 * x[0] - 1.5 * x[1] + 0.25, epsilon = 1e-12);
    }

    #[test]
    fn rc_field_rejects_bad_input() {
        assert!(RCField::from_nodes(square(), [1, 4], vec![0.0; 4]).is_err());
        assert!(RCField::from_nodes(square(), [2, 2], vec![0.0; 3]).is_err());
        assert!(RCField::from_nodes(square(), [2, 2], vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn scattered_field_takes_nearest_value() {
        let pts = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let rc = build_rc_scattered(&square(), 5, &pts, &[-1.0, 1.0]).unwrap();
        assert_eq!(rc.eval(&[-2.0, 2.0]), Some(-1.0));
        assert_eq!(rc.eval(&[2.0, -2.0]), Some(1.0));
    }

    #[test]
    fn constant_rc_has_one_bin() {
        let rc = RCField::from_nodes(square(), [2, 2], vec![0.4; 4]).unwrap();
        let t = Trajectory::new(vec![0.0, 0.0, 1.0, 1.0, -1.0, 0.5], 2, 0.1).unwrap();
        assert!(matches!(effective_operator(&t, &rc, 10, 1), Err(Error::Degenerate(_))));
        assert!(RcBinning::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn binning_clamps() {
        let b = RcBinning::new(-1.0, 1.0, 4).unwrap();
        assert_eq!(b.bin_of(-5.0), 0);
        assert_eq!(b.bin_of(-1.0), 0);
        assert_eq!(b.bin_of(-0.49), 1);
        assert_eq!(b.bin_of(1.0), 3);
        assert_eq!(b.bin_of(9.0), 3);
    }

    fn random_walk(n: usize, seed: u64) -> Trajectory {
        let mut s = Stream::new(seed, StreamTag::Test, 3, 0);
        let mut x = [0.0f64, 0.0];
        let mut out = Vec::with_capacity(2 * n);
        for _ in 0..n {
            for v in x.iter_mut() {
                *v = (*v + 0.2 * s.normal()).clamp(-1.99, 1.99);
            }
            out.extend_from_slice(&x);
        }
        Trajectory::new(out, 2, 0.01).unwrap()
    }

    #[test]
    fn naive_rc_with_column_bins_is_column_lumping() {
        let t = random_walk(20_000, 1);
        let grid = GridPartition::uniform(square(), 10).unwrap();
        let rc = build_rc_naive(&square()).unwrap();
        let eff = effective_operator(&t, &rc, 10, 3).unwrap();
        let cols: Vec<Option<u32>> = t.iter().map(|x| grid.axis_index(0, x[0]).map(|i| i as u32)).collect();
        let direct = UlamOperator::from_labels(&cols, 3, 0.03).unwrap();
        assert_eq!(eff.n_states(), direct.n_states());
        let (a, b) = (eff.to_dense(), direct.to_dense());
        assert!((a - b).abs().max() < 1e-15);

        // Bin weights are the column marginals of μ̂.
        let op = build_ulam(&t, 3, &grid).unwrap();
        let bins = RcBinning::over(&rc, 10).unwrap();
        let lw = level_set_weights(&rc, &op, &grid, &bins).unwrap();
        let mut marg = vec![0.0; 10];
        for (row, &cell) in op.states().iter().enumerate() {
            marg[grid.multi_index(cell)[0]] += op.weights()[row];
        }
        for (g, m) in lw.gamma().iter().zip(&marg) {
            assert_abs_diff_eq!(g, m, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(lw.gamma().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_bin_has_full_weight() {
        let lw = LevelSetWeights::from_assignment(vec![0; 5], vec![1.0, 2.0, 3.0, 4.0, 5.0], 1)
            .unwrap();
        assert_abs_diff_eq!(lw.gamma()[0], 1.0, epsilon = 1e-15);
        assert!(LevelSetWeights::from_assignment(vec![0, 2], vec![1.0, 1.0], 2).is_err());
    }

    #[test]
    fn bin_constant_functions_have_no_deviation() {
        let lw = random_weights(1, 40, 6);
        let f: Vec<f64> = lw.bin_of_state().iter().map(|b| (*b as f64).sin()).collect();
        for (a, b) in lw.apply_pi(&f).unwrap().iter().zip(&f) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let dev = lw.levelset_deviation(&f).unwrap();
        assert!(dev.max_avg < 1e-15 && dev.max_sup < 1e-15);
        assert!(lw.projection_error(&f).unwrap() < 1e-15);
        assert!(lw.apply_pi(&f[..3]).is_err());
    }

    #[test]
    fn empty_bins_are_listed() {
        let lw = LevelSetWeights::from_assignment(vec![0, 0, 2], vec![1.0, 1.0, 1.0], 3).unwrap();
        let dev = lw.levelset_deviation(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(dev.empty_bins, vec![1]);
        assert_abs_diff_eq!(dev.per_bin[0].avg, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(dev.per_bin[0].sup, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn bound_values() {
        assert_eq!(eigenvalue_bound_strong(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(eigenvalue_bound_strong(0.06).unwrap(), 0.060108, epsilon = 1e-6);
        assert_abs_diff_eq!(eigenvalue_bound_strong(0.99).unwrap(), 7.0179, epsilon = 1e-4);
        assert!(matches!(eigenvalue_bound_strong(1.0), Err(Error::VacuousBound { .. })));
        assert!(eigenvalue_bound_strong(-0.1).is_err());
        assert_eq!(eigenvalue_bound_weak(0.0, 0.8).unwrap(), 0.0);
        assert!(matches!(eigenvalue_bound_weak(0.01, 0.0), Err(Error::VacuousBound { .. })));
        assert!(matches!(eigenvalue_bound_weak(0.01, 0.015), Err(Error::VacuousBound { .. })));
        let e: f64 = 2.0 * 0.02 / 0.8;
        assert_abs_diff_eq!(
            eigenvalue_bound_weak(0.02, -0.8).unwrap(),
            e / (1.0 - e * e).sqrt(),
            epsilon = 1e-15
        );
    }

    fn pairs(vals: &[f64]) -> Vec<EigenPair> {
        vals.iter()
            .map(|&l| EigenPair {
                eigenvalue: l,
                eigenfunction: vec![],
                residual: 0.0,
            })
            .collect()
    }

    #[test]
    fn compare_identical_and_short_spectra() {
        let a = pairs(&[1.0, 0.8, 0.4]);
        let c = compare_spectra(&a, &a, 0.5, 2).unwrap();
        assert_eq!(c.gaps, vec![0.0; 3]);
        assert_eq!(c.sigma_full[0], Some(0.0));
        assert_abs_diff_eq!(c.sigma_full[1].unwrap(), -(0.8f64).ln() / 0.5, epsilon = 1e-15);
        assert!(compare_spectra(&a, &pairs(&[1.0]), 0.5, 1).is_err());
        assert!(compare_spectra(&a, &a, 0.5, 0).is_err());
        let b = pairs(&[1.0, 0.79]);
        let c = compare_spectra(&a, &b, 0.5, 1).unwrap();
        assert_eq!(c.gaps[0], 0.0);
        assert_abs_diff_eq!(c.gaps[1], 0.01, epsilon = 1e-15);
    }

    #[test]
    fn spearman_examples() {
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]).unwrap(), -1.0, epsilon = 1e-15);
        // Ties: ranks (0.5, 0.5, 2) against (0, 1, 2).
        assert_abs_diff_eq!(spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.8660254037844386, epsilon = 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn pi_is_an_orthogonal_projection(seed in 0u64..1_000_000, n in 2usize..60, nb in 1usize..8) {
            let lw = random_weights(seed, n, nb);
            let f = random_fn(seed, n);
            let g = random_fn(seed + 1, n);
            let pf = lw.apply_pi(&f).unwrap();
            let pg = lw.apply_pi(&g).unwrap();
            let ppf = lw.apply_pi(&pf).unwrap();
            for (a, b) in ppf.iter().zip(&pf) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
            prop_assert!((lw.dot(&pf, &g) - lw.dot(&f, &pg)).abs() < 1e-12);
            prop_assert!(lw.norm(&pf) <= lw.norm(&f) * (1.0 + 1e-14));
            let e = lw.projection_error(&f).unwrap();
            let py = (lw.norm(&f).powi(2) - lw.norm(&pf).powi(2)).max(0.0).sqrt();
            prop_assert!((e - py).abs() < 1e-7, "{} vs {}", e, py);
            let dev = lw.levelset_deviation(&f).unwrap();
            for b in &dev.per_bin {
                prop_assert!(b.avg <= b.sup);
            }
        }
    }
}
