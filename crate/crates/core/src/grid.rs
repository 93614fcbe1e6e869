//! Uniform periodic grids on the unit torus and the difference operators used
//! by the residual.
//!
//! `div` is the exact negative adjoint of `grad` under the weighted inner
//! product `<a, b> = h^N * sum_x a(x) b(x)`, so every summation-by-parts
//! identity of the continuous problem holds to round-off on the grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid with `n` points per axis on the unit torus `T^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    dim: usize,
    n: usize,
}

impl PeriodicGrid {
    pub const MAX_DIM: usize = 3;
    pub const MIN_POINTS: usize = 4;

    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=Self::MAX_DIM).contains(&dim) {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1, 2 or 3, got {dim}"
            )));
        }
        if n < Self::MIN_POINTS {
            return Err(Error::InvalidGrid(format!(
                "need at least {} points per axis, got {n}",
                Self::MIN_POINTS
            )));
        }
        Ok(Self { dim, n })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total number of grid points, `n^dim`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^dim`.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Flat index stride of `axis` (row-major: the last axis is contiguous).
    #[inline]
    fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    /// Multi-index of a flat point index.
    pub fn coords(&self, index: usize) -> Vec<usize> {
        (0..self.dim)
            .map(|axis| (index / self.stride(axis)) % self.n)
            .collect()
    }

    pub fn index_of(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dim);
        coords
            .iter()
            .enumerate()
            .map(|(axis, &c)| (c % self.n) * self.stride(axis))
            .sum()
    }

    /// Physical position of a grid point, each coordinate in `[0, 1)`.
    pub fn position(&self, index: usize) -> Vec<f64> {
        let h = self.spacing();
        self.coords(index).into_iter().map(|c| c as f64 * h).collect()
    }

    /// Index of the neighbour `index + offset * e_axis`, wrapping around.
    #[inline]
    pub fn shift(&self, index: usize, axis: usize, offset: isize) -> usize {
        let stride = self.stride(axis);
        let c = (index / stride) % self.n;
        let n = self.n as isize;
        let shifted = ((c as isize + offset) % n + n) % n;
        index - c * stride + shifted as usize * stride
    }

    pub fn zeros(&self) -> GridField {
        GridField {
            grid: *self,
            values: vec![0.0; self.len()],
        }
    }

    pub fn constant(&self, value: f64) -> GridField {
        GridField {
            grid: *self,
            values: vec![value; self.len()],
        }
    }

    pub fn from_fn(&self, mut f: impl FnMut(&[f64]) -> f64) -> GridField {
        let values = (0..self.len()).map(|i| f(&self.position(i))).collect();
        GridField { grid: *self, values }
    }

    pub fn field(&self, values: Vec<f64>) -> Result<GridField> {
        GridField::new(*self, values)
    }
}

/// Scalar samples on a [`PeriodicGrid`], flat row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "field has {} values, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at point {i}")));
        }
        Ok(Self { grid, values })
    }

    #[inline]
    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> GridField {
        debug_assert_eq!(self.grid, other.grid);
        GridField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index of the first point attaining the minimum.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v < self.values[best] {
                best = i;
            }
        }
        best
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
}

impl std::ops::Index<usize> for GridField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl std::ops::IndexMut<usize> for GridField {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.values[i]
    }
}

/// One [`GridField`] per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridVectorField {
    components: Vec<GridField>,
}

impl GridVectorField {
    pub fn new(components: Vec<GridField>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidGrid("vector field without components".into()));
        };
        let grid = *first.grid();
        if components.len() != grid.dim() || components.iter().any(|c| *c.grid() != grid) {
            return Err(Error::InvalidGrid(
                "vector field components must share one grid and match its dimension".into(),
            ));
        }
        Ok(Self { components })
    }

    pub fn zeros(grid: &PeriodicGrid) -> Self {
        Self {
            components: (0..grid.dim()).map(|_| grid.zeros()).collect(),
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.components[0].grid()
    }

    pub fn components(&self) -> &[GridField] {
        &self.components
    }

    pub fn component(&self, axis: usize) -> &GridField {
        &self.components[axis]
    }

    /// The vector at one grid point.
    pub fn at(&self, index: usize) -> Vec<f64> {
        self.components.iter().map(|c| c[index]).collect()
    }

    /// Pointwise squared Euclidean length.
    pub fn norm_squared(&self) -> GridField {
        let grid = *self.grid();
        let mut out = grid.zeros();
        for c in &self.components {
            for (o, v) in out.values_mut().iter_mut().zip(c.values()) {
                *o += v * v;
            }
        }
        out
    }

    /// Multiply every component pointwise by a scalar field.
    pub fn scale_by(&self, weight: &GridField) -> GridVectorField {
        GridVectorField {
            components: self
                .components
                .iter()
                .map(|c| c.zip_map(weight, |a, b| a * b))
                .collect(),
        }
    }
}

/// Central difference of `field` along one axis.
pub fn partial(field: &GridField, axis: usize) -> GridField {
    let grid = *field.grid();
    let inv = 0.5 / grid.spacing();
    let v = field.values();
    let values = (0..grid.len())
        .map(|i| (v[grid.shift(i, axis, 1)] - v[grid.shift(i, axis, -1)]) * inv)
        .collect();
    GridField { grid, values }
}

/// Central-difference gradient with periodic wraparound.
pub fn grad(field: &GridField) -> GridVectorField {
    GridVectorField {
        components: (0..field.grid().dim()).map(|k| partial(field, k)).collect(),
    }
}

/// Discrete divergence, the negative adjoint of [`grad`].
pub fn div(vf: &GridVectorField) -> GridField {
    let grid = *vf.grid();
    let mut out = grid.zeros();
    for (axis, comp) in vf.components().iter().enumerate() {
        let d = partial(comp, axis);
        for (o, v) in out.values_mut().iter_mut().zip(d.values()) {
            *o += v;
        }
    }
    out
}

/// Compact `(2N+1)`-point Laplacian.
pub fn laplacian(field: &GridField) -> GridField {
    let grid = *field.grid();
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let v = field.values();
    let values = (0..grid.len())
        .map(|i| {
            let mut acc = 0.0;
            for axis in 0..grid.dim() {
                acc += v[grid.shift(i, axis, 1)] - 2.0 * v[i] + v[grid.shift(i, axis, -1)];
            }
            acc * inv_h2
        })
        .collect();
    GridField { grid, values }
}

/// Wide Laplacian on the `2h` stencil; equals `div(grad(field))` exactly.
pub fn wide_laplacian(field: &GridField) -> GridField {
    let grid = *field.grid();
    let h = grid.spacing();
    let inv = 1.0 / (4.0 * h * h);
    let v = field.values();
    let values = (0..grid.len())
        .map(|i| {
            let mut acc = 0.0;
            for axis in 0..grid.dim() {
                acc += v[grid.shift(i, axis, 2)] - 2.0 * v[i] + v[grid.shift(i, axis, -2)];
            }
            acc * inv
        })
        .collect();
    GridField { grid, values }
}

/// Quadrature `h^N * sum_x field(x)`.
pub fn integrate(field: &GridField) -> f64 {
    field.grid().cell_volume() * field.values().iter().sum::<f64>()
}

/// Weighted inner product of two scalar fields.
pub fn inner(a: &GridField, b: &GridField) -> f64 {
    a.grid().cell_volume() * a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum::<f64>()
}

/// Weighted inner product of two vector fields.
pub fn inner_vec(a: &GridVectorField, b: &GridVectorField) -> f64 {
    a.components()
        .iter()
        .zip(b.components())
        .map(|(x, y)| inner(x, y))
        .sum()
}

/// Discrete L2 norm.
pub fn l2_norm(field: &GridField) -> f64 {
    inner(field, field).sqrt()
}
