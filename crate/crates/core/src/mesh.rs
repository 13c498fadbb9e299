//! Uniform tensor-product meshes.
//!
//! Cells are half-open `[x_i, x_{i+1})` on every axis. Multi-indices are
//! stored axis-major with axis 0 varying slowest, so the linear index of
//! `(i_0, .., i_{d-1})` is `((i_0 * N) + i_1) * N + ..`.

use crate::error::{Error, Result};

/// A uniform grid of `N^d` cells over `[lo, hi]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformMesh {
    dim: usize,
    cells_per_dim: usize,
    lo: f64,
    hi: f64,
    h: f64,
}

impl UniformMesh {
    pub fn new(dim: usize, cells_per_dim: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidMesh(format!("dimension {dim} not in 1..=3")));
        }
        if cells_per_dim < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 cells per axis, got {cells_per_dim}"
            )));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidMesh(format!("empty domain [{lo}, {hi}]")));
        }
        Ok(Self {
            dim,
            cells_per_dim,
            lo,
            hi,
            h: (hi - lo) / cells_per_dim as f64,
        })
    }

    /// Mesh whose cell width is `h` (rounded to the nearest whole cell count).
    pub fn with_width(dim: usize, h: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidMesh(format!("cell width {h} must be positive")));
        }
        let n = ((hi - lo) / h).round() as usize;
        Self::new(dim, n, lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_dim(&self) -> usize {
        self.cells_per_dim
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Measure of one cell, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn num_cells(&self) -> usize {
        self.cells_per_dim.pow(self.dim as u32)
    }

    /// Center of cell `i` along one axis.
    pub fn center_1d(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.h
    }

    /// Coordinate of interface `i` (the left edge of cell `i`) along one axis.
    pub fn interface_1d(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.h
    }

    pub fn center(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.center_1d(i)).collect()
    }

    pub fn centers_1d(&self) -> Vec<f64> {
        (0..self.cells_per_dim).map(|i| self.center_1d(i)).collect()
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dim);
        idx.iter().fold(0, |acc, &i| acc * self.cells_per_dim + i)
    }

    pub fn multi_index(&self, mut linear: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for axis in (0..self.dim).rev() {
            idx[axis] = linear % self.cells_per_dim;
            linear /= self.cells_per_dim;
        }
        idx
    }

    /// Cell containing `x` on one axis, or `None` outside the domain. The
    /// right domain edge belongs to the last cell.
    pub fn locate_1d(&self, x: f64) -> Option<usize> {
        if x < self.lo || x > self.hi {
            return None;
        }
        let i = ((x - self.lo) / self.h).floor() as usize;
        Some(i.min(self.cells_per_dim - 1))
    }

    pub fn locate(&self, x: &[f64]) -> Option<Vec<usize>> {
        if x.len() != self.dim {
            return None;
        }
        x.iter().map(|&xi| self.locate_1d(xi)).collect()
    }

    /// Whether `x` lies in cell `idx` under the half-open convention.
    pub fn contains(&self, idx: &[usize], x: &[f64]) -> bool {
        idx.iter().zip(x).all(|(&i, &xi)| {
            let a = self.interface_1d(i);
            let b = self.interface_1d(i + 1);
            if i + 1 == self.cells_per_dim {
                xi >= a && xi <= b
            } else {
                xi >= a && xi < b
            }
        })
    }

    /// Cell indices along the diagonal `x_1 = .. = x_d`.
    pub fn diagonal(&self) -> Vec<Vec<usize>> {
        (0..self.cells_per_dim)
            .map(|i| vec![i; self.dim])
            .collect()
    }
}

/// Convenience constructor matching the operation list.
pub fn build_mesh(dim: usize, cells_per_dim: usize, lo: f64, hi: f64) -> Result<UniformMesh> {
    UniformMesh::new(dim, cells_per_dim, lo, hi)
}
