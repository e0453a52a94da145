//! Sampled transition manifolds, closest-point projections onto them, and
//! strong/weak reducibility scores.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::density::{kde, mean_embedding, DensityField, EmbeddedPoint, WeightedL2};
use crate::dynamics::{EndpointCloud, EndpointSampler};
use crate::error::{Error, Result};
use crate::grid::{linspace, BoxDomain, GridPartition};
use crate::potential::Potential;

/// One sampled point `p^τ(q_k, ·)` of a manifold.
#[derive(Debug, Clone)]
pub struct Anchor {
    pub state: Vec<f64>,
    /// Manifold parameter `y_k`.
    pub y: f64,
    pub cloud: EndpointCloud,
    pub embedded: Vec<f64>,
    pub density: Option<DensityField>,
}

/// A one-dimensional manifold inside the fuzzy transition manifold,
/// represented by anchors ordered by their parameter.
#[derive(Debug, Clone)]
pub struct ManifoldAtlas {
    anchors: Vec<Anchor>,
    pub tau: f64,
}

impl ManifoldAtlas {
    pub fn new(anchors: Vec<Anchor>) -> Result<Self> {
        let first = anchors.first().ok_or(Error::Empty("atlas"))?;
        let (m, tau) = (first.cloud.len(), first.cloud.tau);
        for w in anchors.windows(2) {
            if !(w[1].y > w[0].y) {
                return Err(Error::Degenerate(format!(
                    "anchor parameters must increase strictly ({} then {})",
                    w[0].y, w[1].y
                )));
            }
        }
        if anchors.iter().any(|a| a.cloud.len() != m || a.cloud.tau != tau) {
            return Err(Error::Degenerate("anchors disagree on M or tau".into()));
        }
        Ok(Self { anchors, tau })
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn m(&self) -> usize {
        self.anchors[0].cloud.len()
    }

    /// Attaches a KDE of every anchor cloud on `grid`.
    pub fn with_densities(mut self, grid: &GridPartition, bandwidth: f64) -> Result<Self> {
        let fields: Vec<DensityField> = self
            .anchors
            .par_iter()
            .map(|a| kde(&a.cloud, grid, bandwidth))
            .collect::<Result<_>>()?;
        for (a, f) in self.anchors.iter_mut().zip(fields) {
            a.density = Some(f);
        }
        Ok(self)
    }

    /// Atlas restricted to the given anchor indices (kept in order).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.anchors[i].clone()).collect())
    }
}

/// `x₁` range of the parabola `x₂ = 1 − x₁²` inside a 2-D box.
pub fn mep_range(domain: &BoxDomain) -> Result<(f64, f64)> {
    if domain.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: domain.dim(),
        });
    }
    if domain.hi[1] < 1.0 {
        return Err(Error::config("domain", "the pathway leaves the box through its top"));
    }
    let reach = (1.0 - domain.lo[1]).max(0.0).sqrt();
    let (a, b) = (domain.lo[0].max(-reach), domain.hi[0].min(reach));
    if !(a < b) {
        return Err(Error::config("domain", "the pathway does not cross the box"));
    }
    Ok((a, b))
}

/// Anchor states `(x₁, 1 − x₁²)` equispaced in `x₁`, paired with `y = x₁`.
pub fn mep_anchor_states(domain: &BoxDomain, n_anchors: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    if n_anchors < 2 {
        return Err(Error::config("n_anchors", "need at least 2"));
    }
    let (a, b) = mep_range(domain)?;
    Ok(linspace(a, b, n_anchors)
        .into_iter()
        .map(|x1| (x1, vec![x1, 1.0 - x1 * x1]))
        .collect())
}

/// Samples `p^τ(q, ·)` at the given anchor states.
pub fn sample_atlas<P: Potential + ?Sized>(
    sampler: &EndpointSampler<'_, P>,
    anchors: Vec<(f64, Vec<f64>)>,
) -> Result<ManifoldAtlas> {
    let starts: Vec<Vec<f64>> = anchors.iter().map(|(_, s)| s.clone()).collect();
    let clouds = sampler.sample_many(&starts)?;
    let anchors = anchors
        .into_iter()
        .zip(clouds)
        .map(|((y, state), cloud)| {
            let embedded = mean_embedding(&cloud)?.mean;
            Ok(Anchor {
                state,
                y,
                cloud,
                embedded,
                density: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ManifoldAtlas::new(anchors)
}

/// The minimum-energy-pathway manifold of the banana benchmark.
pub fn mep_manifold<P: Potential + ?Sized>(
    sampler: &EndpointSampler<'_, P>,
    n_anchors: usize,
) -> Result<ManifoldAtlas> {
    sample_atlas(sampler, mep_anchor_states(&sampler.config().domain, n_anchors)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Euclidean distance of mean embeddings.
    Embedded,
    /// Weighted `L²_{1/ρ}` distance of densities.
    Density,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionResult {
    pub start: Vec<f64>,
    pub anchor: usize,
    pub residual: f64,
    pub y: f64,
    pub metric: MetricKind,
}

/// Index and value of the smallest distance; the first one wins ties.
fn argmin(distances: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, d) in distances.enumerate() {
        match best {
            Some((_, b)) if !(d < b) => {}
            _ => best = Some((k, d)),
        }
    }
    best
}

pub fn project_embedded(atlas: &ManifoldAtlas, point: &EmbeddedPoint) -> Result<ProjectionResult> {
    let (anchor, residual) = argmin(atlas.anchors.iter().map(|a| {
        a.embedded
            .iter()
            .zip(&point.mean)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt()
    }))
    .ok_or(Error::Empty("atlas"))?;
    Ok(ProjectionResult {
        start: point.start.clone(),
        anchor,
        residual,
        y: atlas.anchors[anchor].y,
        metric: MetricKind::Embedded,
    })
}

/// Projects an already estimated transition density.
pub fn project_density_field(
    atlas: &ManifoldAtlas,
    start: &[f64],
    field: &DensityField,
    metric: &WeightedL2,
) -> Result<ProjectionResult> {
    let mut distances = Vec::with_capacity(atlas.len());
    for a in &atlas.anchors {
        let f = a
            .density
            .as_ref()
            .ok_or_else(|| Error::Degenerate("atlas anchors carry no densities".into()))?;
        distances.push(metric.distance(field, f)?);
    }
    let (anchor, residual) = argmin(distances.into_iter()).ok_or(Error::Empty("atlas"))?;
    Ok(ProjectionResult {
        start: start.to_vec(),
        anchor,
        residual,
        y: atlas.anchors[anchor].y,
        metric: MetricKind::Density,
    })
}

/// KDE of `cloud` with the anchors' bandwidth, then [`project_density_field`].
pub fn project_density(
    atlas: &ManifoldAtlas,
    cloud: &EndpointCloud,
    metric: &WeightedL2,
) -> Result<ProjectionResult> {
    let reference = atlas.anchors[0]
        .density
        .as_ref()
        .ok_or_else(|| Error::Degenerate("atlas anchors carry no densities".into()))?;
    let field = kde(cloud, reference.grid(), reference.bandwidth)?;
    project_density_field(atlas, &cloud.start, &field, metric)
}

/// Largest residual and the index of the first start attaining it.
pub fn strong_score(results: &[ProjectionResult]) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, r) in results.iter().enumerate() {
        match best {
            Some((b, _)) if !(r.residual > b) => {}
            _ => best = Some((r.residual, i)),
        }
    }
    best.ok_or(Error::Empty("projection results"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSetScore {
    pub anchor: usize,
    pub y: f64,
    pub count: usize,
    pub weight: f64,
    pub weak: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducibilityReport {
    pub metric: MetricKind,
    pub strong_score: f64,
    pub strong_argmax: Vec<f64>,
    pub weak_score: f64,
    /// Anchor whose level set attains the weak score.
    pub weak_argmax: usize,
    pub per_anchor: Vec<LevelSetScore>,
    /// Anchors whose level set carries no `ρ̂` weight.
    pub excluded: Vec<usize>,
    pub rho_floor: f64,
    pub bandwidth: f64,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    #[serde(skip)]
    pub weights: Vec<f64>,
}

impl ReducibilityReport {
    pub fn level_set(&self, anchor: usize) -> Option<&LevelSetScore> {
        self.per_anchor.iter().find(|s| s.anchor == anchor)
    }
}

/// Strong score plus `ρ̂`-weighted mean residuals over each level set
/// `{x : Q(x) = anchor k}`.
pub fn weak_score(
    results: &[ProjectionResult],
    rho: &DensityField,
    atlas: &ManifoldAtlas,
    rho_floor: f64,
    bandwidth: f64,
) -> Result<ReducibilityReport> {
    let (strong, arg) = strong_score(results)?;
    let metric = results[0].metric;
    let weights: Vec<f64> = results.iter().map(|r| rho.value_at(&r.start)).collect();
    let mut groups: BTreeMap<usize, (usize, f64, f64, f64)> = BTreeMap::new();
    for (r, w) in results.iter().zip(&weights) {
        if r.anchor >= atlas.len() {
            return Err(Error::OutOfRange {
                requested: r.anchor,
                available: atlas.len(),
            });
        }
        let g = groups.entry(r.anchor).or_insert((0, 0.0, 0.0, 0.0));
        g.0 += 1;
        g.1 += w;
        g.2 += w * r.residual;
        g.3 = g.3.max(r.residual);
    }
    let mut per_anchor = Vec::new();
    let mut excluded = Vec::new();
    for (anchor, (count, weight, wsum, max_residual)) in groups {
        if weight > 0.0 {
            // A weighted mean never exceeds the maximum; clamp rounding.
            let weak = (wsum / weight).min(max_residual);
            per_anchor.push(LevelSetScore {
                anchor,
                y: atlas.anchors[anchor].y,
                count,
                weight,
                weak,
                max_residual,
            });
        } else {
            excluded.push(anchor);
        }
    }
    let (weak_score, weak_argmax) = per_anchor
        .iter()
        .fold((0.0, usize::MAX), |acc, s| if s.weak > acc.0 { (s.weak, s.anchor) } else { acc });
    let weak_argmax = if weak_argmax == usize::MAX {
        per_anchor.first().map_or(0, |s| s.anchor)
    } else {
        weak_argmax
    };
    Ok(ReducibilityReport {
        metric,
        strong_score: strong,
        strong_argmax: results[arg].start.clone(),
        weak_score,
        weak_argmax,
        per_anchor,
        excluded,
        rho_floor,
        bandwidth,
        residuals: results.iter().map(|r| r.residual).collect(),
        weights,
    })
}

/// Least-squares fit `v₂ ≈ c₀ + c₁ v₁ + c₂ v₁²` of 2-D points.
#[derive(Debug, Clone, Serialize)]
pub struct QuadraticFit {
    pub coeffs: [f64; 3],
    pub rms: f64,
}

impl QuadraticFit {
    pub fn fit(points: &[Vec<f64>]) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Empty("need at least three points for a quadratic fit"));
        }
        let a = DMatrix::from_fn(points.len(), 3, |i, j| points[i][0].powi(j as i32));
        let b = DVector::from_iterator(points.len(), points.iter().map(|p| p[1]));
        let c = a
            .clone()
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| Error::Degenerate(e.into()))?;
        let r = &a * &c - &b;
        Ok(Self {
            coeffs: [c[0], c[1], c[2]],
            rms: (r.norm_squared() / points.len() as f64).sqrt(),
        })
    }

    pub fn eval(&self, v: f64) -> f64 {
        self.coeffs[0] + v * (self.coeffs[1] + v * self.coeffs[2])
    }

    /// Euclidean distance from `p` to the curve over `v₁ ∈ [a, b]`, sampled
    /// at `n` points.
    pub fn distance(&self, p: &[f64], a: f64, b: f64, n: usize) -> f64 {
        linspace(a, b, n)
            .into_iter()
            .map(|v| ((p[0] - v).powi(2) + (p[1] - self.eval(v)).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Median Euclidean distance between consecutive anchor embeddings.
pub fn median_anchor_spacing(atlas: &ManifoldAtlas) -> f64 {
    let mut gaps: Vec<f64> = atlas
        .anchors
        .windows(2)
        .map(|w| {
            w[0].embedded
                .iter()
                .zip(&w[1].embedded)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    gaps.sort_by(f64::total_cmp);
    match gaps.len() {
        0 => 0.0,
        n if n % 2 == 1 => gaps[n / 2],
        n => 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]),
    }
}
