use std::ops::{Add, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Region carved out of the grid box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mask {
    Box,
    Ball { center: Vec<f64>, radius: f64 },
    Annulus { center: Vec<f64>, inner: f64, outer: f64 },
}

impl Mask {
    fn contains(&self, x: &[f64]) -> bool {
        let slack = 1e-12;
        match self {
            Mask::Box => true,
            Mask::Ball { center, radius } => euclid(x, center) <= radius * (1.0 + slack),
            Mask::Annulus { center, inner, outer } => {
                let r = euclid(x, center);
                r >= inner * (1.0 - slack) && r <= outer * (1.0 + slack)
            }
        }
    }
}

fn euclid(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Interior,
    Boundary,
    Excluded,
}

/// Uniform tensor grid on a box with a region mask.
///
/// A node inside the mask is a boundary node when it lies on a box face or
/// when one of its `3^n - 1` neighbours is outside the mask; the remaining
/// inside nodes are interior. A cell is active when none of its `2^n`
/// corners is excluded.
#[derive(Clone, Debug)]
pub struct GridDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
    h: f64,
    shape: Vec<usize>,
    strides: Vec<usize>,
    mask: Mask,
    kinds: Vec<NodeKind>,
    cells: Vec<usize>,
    corner_offsets: Vec<usize>,
}

impl GridDomain {
    /// Grid with spacing `h`; every box side must be an integer multiple of
    /// `h`.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, h: f64, mask: Mask) -> Result<Self> {
        let n = lo.len();
        if n == 0 || n > 3 || hi.len() != n {
            return Err(Error::invalid("grid boxes must have dimension 1, 2 or 3"));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!("grid spacing must be positive, got {h}")));
        }
        let mut shape = Vec::with_capacity(n);
        for (a, b) in lo.iter().zip(&hi) {
            let len = b - a;
            let cells = (len / h).round();
            if !(len > 0.0) || cells < 1.0 || (cells * h - len).abs() > 1e-9 * len {
                return Err(Error::invalid(format!("side [{a}, {b}] is not a multiple of h = {h}")));
            }
            shape.push(cells as usize + 1);
        }
        if let Mask::Ball { center, .. } | Mask::Annulus { center, .. } = &mask {
            if center.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: center.len() });
            }
        }
        let mut strides = vec![1; n];
        for a in 1..n {
            strides[a] = strides[a - 1] * shape[a - 1];
        }
        let corner_offsets = (0..1usize << n)
            .map(|k| (0..n).filter(|a| k >> a & 1 == 1).map(|a| strides[a]).sum())
            .collect();
        let mut g = GridDomain {
            lo,
            hi,
            h,
            shape,
            strides,
            mask,
            kinds: Vec::new(),
            cells: Vec::new(),
            corner_offsets,
        };
        g.classify();
        Ok(g)
    }

    /// Cube `[lo, hi]^dim` with `cells` cells per axis.
    pub fn cube(dim: usize, lo: f64, hi: f64, cells: usize, mask: Mask) -> Result<Self> {
        if cells == 0 {
            return Err(Error::invalid("cell count must be positive"));
        }
        GridDomain::new(vec![lo; dim], vec![hi; dim], (hi - lo) / cells as f64, mask)
    }

    fn classify(&mut self) {
        let n = self.dim();
        let total = self.len();
        let mut x = vec![0.0; n];
        let inside: Vec<bool> = (0..total)
            .map(|i| {
                self.coords_into(i, &mut x);
                self.mask.contains(&x)
            })
            .collect();
        let mut idx = vec![0usize; n];
        self.kinds = (0..total)
            .map(|i| {
                if !inside[i] {
                    return NodeKind::Excluded;
                }
                self.multi_into(i, &mut idx);
                let on_face = idx.iter().zip(&self.shape).any(|(&k, &s)| k == 0 || k + 1 == s);
                if on_face {
                    return NodeKind::Boundary;
                }
                let neighbour_out = (0..3usize.pow(n as u32)).any(|code| {
                    let mut j = i as isize;
                    let mut c = code;
                    for a in 0..n {
                        j += (c % 3) as isize * self.strides[a] as isize - self.strides[a] as isize;
                        c /= 3;
                    }
                    !inside[j as usize]
                });
                if neighbour_out {
                    NodeKind::Boundary
                } else {
                    NodeKind::Interior
                }
            })
            .collect();
        let kinds = &self.kinds;
        let offsets = &self.corner_offsets;
        self.cells = (0..total)
            .filter(|&i| {
                self.multi_into(i, &mut idx);
                idx.iter().zip(&self.shape).all(|(&k, &s)| k + 1 < s)
                    && offsets.iter().all(|o| kinds[i + o] != NodeKind::Excluded)
            })
            .collect();
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// Nodes per axis.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Total number of nodes, excluded ones included.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self, i: usize) -> NodeKind {
        self.kinds[i]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    pub fn multi_into(&self, mut i: usize, out: &mut [usize]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = i % self.shape[a];
            i /= self.shape[a];
        }
    }

    pub fn coords_into(&self, mut i: usize, out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.lo[a] + (i % self.shape[a]) as f64 * self.h;
            i /= self.shape[a];
        }
    }

    pub fn coords(&self, i: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.coords_into(i, &mut x);
        x
    }

    /// Nearest node to `x` (clamped to the box).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut i = 0;
        for a in 0..self.dim() {
            let k = ((x[a] - self.lo[a]) / self.h).round().clamp(0.0, (self.shape[a] - 1) as f64);
            i += k as usize * self.strides[a];
        }
        i
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.kinds[i] == NodeKind::Interior)
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.kinds[i] == NodeKind::Boundary)
    }

    /// Lowest-corner node of every active cell.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    /// Node-index offsets of the `2^n` cell corners; bit `a` of the corner
    /// number selects the upper node along axis `a`.
    pub fn corner_offsets(&self) -> &[usize] {
        &self.corner_offsets
    }

    pub fn cell_center(&self, cell: usize, out: &mut [f64]) {
        self.coords_into(cell, out);
        for v in out.iter_mut() {
            *v += 0.5 * self.h;
        }
    }

    /// Measure of one cell, `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }
}

/// Real values on the nodes of a grid; `NaN` on excluded nodes.
#[derive(Clone, Debug)]
pub struct GridFunction {
    domain: Arc<GridDomain>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(domain: Arc<GridDomain>) -> Self {
        let values = domain
            .kinds()
            .iter()
            .map(|k| if *k == NodeKind::Excluded { f64::NAN } else { 0.0 })
            .collect();
        GridFunction { domain, values }
    }

    pub fn from_fn(domain: Arc<GridDomain>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; domain.dim()];
        let values = (0..domain.len())
            .map(|i| {
                if domain.kind(i) == NodeKind::Excluded {
                    return f64::NAN;
                }
                domain.coords_into(i, &mut x);
                f(&x)
            })
            .collect();
        GridFunction { domain, values }
    }

    /// Wrap node values; excluded entries are overwritten with `NaN`.
    pub fn from_values(domain: Arc<GridDomain>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::DimensionMismatch { expected: domain.len(), got: values.len() });
        }
        for (v, k) in values.iter_mut().zip(domain.kinds()) {
            if *k == NodeKind::Excluded {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::invalid("grid function values must be finite"));
            }
        }
        Ok(GridFunction { domain, values })
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Copy with boundary values replaced by zero.
    pub fn with_zero_boundary(&self) -> Self {
        let mut out = self.clone();
        for i in self.domain.boundary_nodes() {
            out.values[i] = 0.0;
        }
        out
    }

    /// Largest `|self - other|` over interior nodes.
    pub fn max_interior_diff(&self, other: &GridFunction) -> f64 {
        self.domain
            .interior_nodes()
            .map(|i| (self.values[i] - other.values[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|self - other|` over non-excluded nodes.
    pub fn max_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .filter(|(a, _)| !a.is_nan())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: f64) -> Self {
        GridFunction { domain: self.domain.clone(), values: self.values.iter().map(|v| c * v).collect() }
    }

    fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Self {
        assert!(Arc::ptr_eq(&self.domain, &other.domain) || self.domain.len() == other.domain.len());
        GridFunction {
            domain: self.domain.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        }
    }
}

impl Add for &GridFunction {
    type Output = GridFunction;
    fn add(self, rhs: &GridFunction) -> GridFunction {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &GridFunction {
    type Output = GridFunction;
    fn sub(self, rhs: &GridFunction) -> GridFunction {
        self.zip_with(rhs, |a, b| a - b)
    }
}
