//! Densities on a lattice of cell centers, and the mean embedding of
//! transition densities.

use serde::Serialize;

use crate::dynamics::{EndpointCloud, Trajectory};
use crate::error::{Error, Result};
use crate::grid::GridPartition;

/// Gaussian kernels are cut off beyond this many bandwidths.
const KERNEL_RADIUS: f64 = 5.0;

/// First moment of a transition density, `∫ x′ p^τ(x, x′) dx′`, estimated
/// from an endpoint cloud.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddedPoint {
    pub start: Vec<f64>,
    pub mean: Vec<f64>,
    pub m: usize,
}

pub fn mean_embedding(cloud: &EndpointCloud) -> Result<EmbeddedPoint> {
    if cloud.is_empty() {
        return Err(Error::Empty("endpoint cloud"));
    }
    let mut mean = vec![0.0; cloud.dim()];
    for e in cloud.iter() {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    let m = cloud.len();
    mean.iter_mut().for_each(|v| *v /= m as f64);
    Ok(EmbeddedPoint {
        start: cloud.start.clone(),
        mean,
        m,
    })
}

/// Non-negative density values on the cell centers of a grid, normalized so
/// that the midpoint-rule integral is one.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: GridPartition,
    values: Vec<f64>,
    /// Kernel bandwidth; zero for histogram estimates.
    pub bandwidth: f64,
}

impl DensityField {
    /// Normalizes `values` (one per cell) to unit integral.
    pub fn from_values(grid: GridPartition, mut values: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_cells(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Degenerate("density values must be finite and >= 0".into()));
        }
        let mass: f64 = values.iter().sum::<f64>() * grid.cell_volume();
        if mass <= 0.0 {
            return Err(Error::Degenerate("density has no mass on the lattice".into()));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self {
            grid,
            values,
            bandwidth,
        })
    }

    pub fn grid(&self) -> &GridPartition {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Value of the cell containing `x`; zero outside the grid.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.grid.cell_of(x).map_or(0.0, |c| self.values[c])
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Field reflected along one axis (`x_axis ↦ −x_axis` for a box that is
    /// symmetric about zero).
    pub fn mirrored(&self, axis: usize) -> DensityField {
        let n = self.grid.cells_per_axis()[axis];
        let values = (0..self.values.len())
            .map(|cell| {
                let mut idx = self.grid.multi_index(cell);
                idx[axis] = n - 1 - idx[axis];
                let src = idx
                    .iter()
                    .zip(self.grid.cells_per_axis())
                    .fold(0, |acc, (i, n)| acc * n + i);
                self.values[src]
            })
            .collect();
        DensityField {
            grid: self.grid.clone(),
            values,
            bandwidth: self.bandwidth,
        }
    }

    pub fn l1_distance(&self, other: &DensityField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::LatticeMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.cell_volume())
    }
}

/// Adds `Σ_points Π_axis exp(−(c − x)²/2h²)` into `acc`, truncating each
/// kernel at [`KERNEL_RADIUS`] bandwidths.
fn accumulate_kernels<'a>(
    grid: &GridPartition,
    points: impl Iterator<Item = &'a [f64]>,
    bandwidth: f64,
    acc: &mut [f64],
) {
    let d = grid.dim();
    let centers: Vec<Vec<f64>> = (0..d).map(|a| grid.axis_centers(a)).collect();
    let reach = KERNEL_RADIUS * bandwidth;
    let inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut weights: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut first: Vec<usize> = vec![0; d];
    let mut idx = vec![0usize; d];
    'points: for x in points {
        for a in 0..d {
            let c = &centers[a];
            let w = grid.cell_width(a);
            let lo = grid.domain().lo[a];
            let i0 = ((x[a] - reach - lo) / w - 0.5).ceil().max(0.0);
            let i1 = ((x[a] + reach - lo) / w - 0.5).floor().min((c.len() - 1) as f64);
            if !(i0 <= i1) {
                continue 'points;
            }
            let (i0, i1) = (i0 as usize, i1 as usize);
            first[a] = i0;
            weights[a].clear();
            weights[a].extend(c[i0..=i1].iter().map(|ci| (-(ci - x[a]).powi(2) * inv2h2).exp()));
        }
        if d == 2 {
            let n2 = grid.cells_per_axis()[1];
            for (ii, wx) in weights[0].iter().enumerate() {
                let row = (first[0] + ii) * n2 + first[1];
                for (slot, wy) in acc[row..row + weights[1].len()].iter_mut().zip(&weights[1]) {
                    *slot += wx * wy;
                }
            }
        } else {
            idx.iter_mut().for_each(|v| *v = 0);
            'odometer: loop {
                let mut cell = 0;
                let mut w = 1.0;
                for a in 0..d {
                    cell = cell * grid.cells_per_axis()[a] + first[a] + idx[a];
                    w *= weights[a][idx[a]];
                }
                acc[cell] += w;
                for a in (0..d).rev() {
                    idx[a] += 1;
                    if idx[a] < weights[a].len() {
                        continue 'odometer;
                    }
                    idx[a] = 0;
                }
                break;
            }
        }
    }
}

/// Isotropic Gaussian kernel density estimate of a cloud, evaluated at the
/// cell centers of `grid` and normalized to unit lattice integral.
pub fn kde(cloud: &EndpointCloud, grid: &GridPartition, bandwidth: f64) -> Result<DensityField> {
    kde_points(cloud.iter(), cloud.dim(), grid, bandwidth)
}

pub fn kde_points<'a>(
    points: impl Iterator<Item = &'a [f64]>,
    dim: usize,
    grid: &GridPartition,
    bandwidth: f64,
) -> Result<DensityField> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::config("bandwidth", format!("must be positive, got {bandwidth}")));
    }
    if dim != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: dim,
        });
    }
    let mut acc = vec![0.0; grid.n_cells()];
    accumulate_kernels(grid, points, bandwidth, &mut acc);
    DensityField::from_values(grid.clone(), acc, bandwidth)
}

/// Stationary density from an equilibrated trajectory: a KDE, or a cell
/// histogram when `bandwidth == 0`. States outside the grid are ignored.
pub fn estimate_stationary_density(
    trajectory: &Trajectory,
    grid: &GridPartition,
    bandwidth: f64,
) -> Result<DensityField> {
    if trajectory.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    if bandwidth == 0.0 {
        let mut counts = vec![0.0; grid.n_cells()];
        for x in trajectory.iter() {
            if let Some(c) = grid.cell_of(x) {
                counts[c] += 1.0;
            }
        }
        DensityField::from_values(grid.clone(), counts, 0.0)
    } else {
        kde_points(trajectory.iter(), trajectory.dim(), grid, bandwidth)
    }
}

/// Quadrature of the `L²_{1/ρ}` norm with a floored weight:
/// `√( Σ_cells (f − g)² / max(ρ, floor) · |cell| )`.
#[derive(Debug, Clone)]
pub struct WeightedL2 {
    grid: GridPartition,
    inv_weight: Vec<f64>,
    pub floor: f64,
}

impl WeightedL2 {
    pub fn new(rho: &DensityField, floor: f64) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::config("rho_floor", format!("must be positive, got {floor}")));
        }
        let vol = rho.grid.cell_volume();
        Ok(Self {
            grid: rho.grid.clone(),
            inv_weight: rho.values.iter().map(|r| vol / r.max(floor)).collect(),
            floor,
        })
    }

    /// Metric with the floor set to `relative × max ρ`.
    pub fn with_relative_floor(rho: &DensityField, relative: f64) -> Result<Self> {
        Self::new(rho, relative * rho.max())
    }

    pub fn distance(&self, f: &DensityField, g: &DensityField) -> Result<f64> {
        if f.grid != self.grid || g.grid != self.grid {
            return Err(Error::LatticeMismatch);
        }
        Ok(self.distance_values(&f.values, &g.values))
    }

    pub fn distance_values(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter()
            .zip(g)
            .zip(&self.inv_weight)
            .map(|((a, b), w)| (a - b) * (a - b) * w)
            .sum::<f64>()
            .sqrt()
    }
}

pub fn weighted_l2_distance(
    f: &DensityField,
    g: &DensityField,
    rho: &DensityField,
    floor: f64,
) -> Result<f64> {
    if f.grid != rho.grid {
        return Err(Error::LatticeMismatch);
    }
    WeightedL2::new(rho, floor)?.distance(f, g)
}
