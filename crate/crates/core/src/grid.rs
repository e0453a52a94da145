//! Axis-aligned boxes and regular cell partitions of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.is_empty() {
            return Err(Error::config("domain", "zero-dimensional box"));
        }
        for (i, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::config(
                    "domain",
                    format!("axis {i}: need finite lo < hi, got [{a}, {b}]"),
                ));
            }
        }
        Ok(Self { lo, hi })
    }

    /// The square `[lo, hi]²`.
    pub fn square(lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo, lo],
            hi: vec![hi, hi],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }
}

/// Regular partition of a box into `cells_per_axis[0] × … ` cells.
///
/// Cells are indexed in row-major order with the *first* axis slowest, so for
/// a 2-D grid `index = i1 * n2 + i2`. Points on the upper boundary belong to
/// the last cell of that axis; points outside the box have no cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPartition {
    domain: BoxDomain,
    cells_per_axis: Vec<usize>,
}

impl GridPartition {
    pub fn new(domain: BoxDomain, cells_per_axis: Vec<usize>) -> Result<Self> {
        if cells_per_axis.len() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                got: cells_per_axis.len(),
            });
        }
        if cells_per_axis.iter().any(|&n| n == 0) {
            return Err(Error::config("grid", "cells per axis must be positive"));
        }
        if cells_per_axis.iter().product::<usize>() < 2 {
            return Err(Error::config("grid", "need at least two cells"));
        }
        Ok(Self {
            domain,
            cells_per_axis,
        })
    }

    pub fn uniform(domain: BoxDomain, n: usize) -> Result<Self> {
        let d = domain.dim();
        Self::new(domain, vec![n; d])
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells_per_axis
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_axis.iter().product()
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        (self.domain.hi[axis] - self.domain.lo[axis]) / self.cells_per_axis[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.cell_width(a)).product()
    }

    /// Index along one axis, or `None` outside `[lo, hi]`.
    #[inline]
    pub fn axis_index(&self, axis: usize, v: f64) -> Option<usize> {
        let lo = self.domain.lo[axis];
        let hi = self.domain.hi[axis];
        if !(v >= lo && v <= hi) {
            return None;
        }
        let n = self.cells_per_axis[axis];
        let i = ((v - lo) / (hi - lo) * n as f64).floor() as usize;
        Some(i.min(n - 1))
    }

    #[inline]
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (axis, &v) in x.iter().enumerate() {
            idx = idx * self.cells_per_axis[axis] + self.axis_index(axis, v)?;
        }
        Some(idx)
    }

    pub fn multi_index(&self, mut cell: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            let n = self.cells_per_axis[axis];
            out[axis] = cell % n;
            cell /= n;
        }
        out
    }

    pub fn cell_center(&self, cell: usize) -> Vec<f64> {
        self.multi_index(cell)
            .into_iter()
            .enumerate()
            .map(|(a, i)| self.domain.lo[a] + (i as f64 + 0.5) * self.cell_width(a))
            .collect()
    }

    /// Cell centers along one axis.
    pub fn axis_centers(&self, axis: usize) -> Vec<f64> {
        let w = self.cell_width(axis);
        (0..self.cells_per_axis[axis])
            .map(|i| self.domain.lo[axis] + (i as f64 + 0.5) * w)
            .collect()
    }
}

/// `n` equispaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}
