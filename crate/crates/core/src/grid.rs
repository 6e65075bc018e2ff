//! Uniform periodic grids on the unit torus `[0,1)^d`, `d ∈ {1, 2}`.
//!
//! Node `idx` of a 2-d grid sits at `(i, j) = (idx / n, idx % n)`, i.e. the
//! last axis varies fastest (row-major). The centered gradient `D` is
//! antisymmetric under the discrete inner product `⟨f, g⟩ = h^d Σ f g`, and the
//! divergence is defined as `-Dᵀ`, so `⟨div F, φ⟩ = -⟨F, Dφ⟩` holds to rounding.

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};

/// A point on the torus. Only the first `dim` entries are meaningful.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub const MIN_POINTS: usize = 8;

    /// Builds a grid with `n` points per axis; rejects `dim ∉ {1,2}`, `n < 8`
    /// and odd `n`.
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(MfgError::validation(format!(
                "grid dimension must be 1 or 2, got {dim}"
            )));
        }
        if n < Self::MIN_POINTS {
            return Err(MfgError::validation(format!(
                "grid needs at least {} points per axis, got {n}",
                Self::MIN_POINTS
            )));
        }
        if !n.is_multiple_of(2) {
            return Err(MfgError::validation(format!(
                "points per axis must be even, got {n}"
            )));
        }
        Ok(TorusGrid { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Number of nodes, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of a node, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        match self.dim {
            1 => [idx, 0],
            _ => [idx / self.n, idx % self.n],
        }
    }

    pub fn flat_index(&self, mi: [usize; 2]) -> usize {
        match self.dim {
            1 => mi[0],
            _ => mi[0] * self.n + mi[1],
        }
    }

    pub fn coords(&self, idx: usize) -> Point {
        let mi = self.multi_index(idx);
        let h = self.h();
        match self.dim {
            1 => [mi[0] as f64 * h, 0.0],
            _ => [mi[0] as f64 * h, mi[1] as f64 * h],
        }
    }

    /// Index of the node `offset` steps away from `idx` along `axis`, wrapping.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let mut mi = self.multi_index(idx);
        let n = self.n as isize;
        mi[axis] = (mi[axis] as isize + offset).rem_euclid(n) as usize;
        self.flat_index(mi)
    }

    pub fn nodes(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |i| self.coords(i))
    }
}

/// Wraps a coordinate into `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Signed periodic displacement `x - y` reduced to `[-1/2, 1/2)`.
#[inline]
pub fn periodic_delta(x: f64, y: f64) -> f64 {
    let d = x - y;
    d - (d + 0.5).floor()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MfgError::validation(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        ScalarField {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&Point) -> f64) -> Self {
        let values = grid.nodes().map(|x| f(&x)).collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn osc(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn mean(&self) -> f64 {
        integrate(self)
    }

    pub fn sup_dist(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(MfgError::Numeric(format!(
                "{what} became non-finite at node {i}"
            ))),
        }
    }

    /// Removes the spatial mean, returning it.
    pub fn remove_mean(&mut self) -> f64 {
        let mean = integrate(self);
        self.values.iter_mut().for_each(|v| *v -= mean);
        mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: TorusGrid,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: TorusGrid, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim() || components.iter().any(|c| c.len() != grid.len()) {
            return Err(MfgError::validation("vector field shape does not match the grid"));
        }
        Ok(VectorField { grid, components })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        VectorField {
            grid,
            components: vec![vec![0.0; grid.len()]; grid.dim()],
        }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&Point) -> Point) -> Self {
        let mut out = Self::zeros(grid);
        for idx in 0..grid.len() {
            let v = f(&grid.coords(idx));
            for a in 0..grid.dim() {
                out.components[a][idx] = v[a];
            }
        }
        out
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.components[axis]
    }

    #[inline]
    pub fn at(&self, idx: usize) -> Point {
        let mut p = [0.0; 2];
        for (a, c) in self.components.iter().enumerate() {
            p[a] = c[idx];
        }
        p
    }

    pub fn set(&mut self, idx: usize, v: Point) {
        for a in 0..self.grid.dim() {
            self.components[a][idx] = v[a];
        }
    }

    /// Pointwise Euclidean norm.
    pub fn norms(&self) -> ScalarField {
        ScalarField::from_indices(self.grid, |i| {
            let p = self.at(i);
            (p[0] * p[0] + p[1] * p[1]).sqrt()
        })
    }

    pub fn sup_norm(&self) -> f64 {
        self.norms().max()
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().flatten().all(|v| v.is_finite())
    }
}

impl ScalarField {
    pub(crate) fn from_indices(grid: TorusGrid, f: impl Fn(usize) -> f64) -> Self {
        ScalarField {
            grid,
            values: (0..grid.len()).map(f).collect(),
        }
    }
}

/// Finite-difference gradient scheme.
#[derive(Debug, Clone, Copy)]
pub enum GradientScheme<'a> {
    /// Second-order centered differences.
    Centered,
    /// One-sided differences chosen by the sign of the drift: backward where
    /// the drift component is positive, forward where it is negative. This is
    /// the orientation that makes `b·∇` an M-matrix contribution.
    Upwind(&'a VectorField),
}

pub fn gradient(field: &ScalarField, scheme: GradientScheme<'_>) -> VectorField {
    let grid = field.grid;
    let h = grid.h();
    let v = &field.values;
    let mut out = VectorField::zeros(grid);
    for axis in 0..grid.dim() {
        let comp = &mut out.components[axis];
        for (idx, c) in comp.iter_mut().enumerate() {
            let fwd = v[grid.neighbor(idx, axis, 1)];
            let bwd = v[grid.neighbor(idx, axis, -1)];
            *c = match scheme {
                GradientScheme::Centered => (fwd - bwd) / (2.0 * h),
                GradientScheme::Upwind(drift) => {
                    if drift.components[axis][idx] > 0.0 {
                        (v[idx] - bwd) / h
                    } else {
                        (fwd - v[idx]) / h
                    }
                }
            };
        }
    }
    out
}

/// Standard `(2d+1)`-point periodic Laplacian.
pub fn laplacian(field: &ScalarField) -> ScalarField {
    let grid = field.grid;
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let v = &field.values;
    ScalarField::from_indices(grid, |idx| {
        let mut acc = -2.0 * grid.dim() as f64 * v[idx];
        for axis in 0..grid.dim() {
            acc += v[grid.neighbor(idx, axis, 1)] + v[grid.neighbor(idx, axis, -1)];
        }
        acc * inv_h2
    })
}

/// Negative transpose of the centered gradient.
pub fn divergence(field: &VectorField) -> ScalarField {
    let grid = field.grid;
    let h = grid.h();
    ScalarField::from_indices(grid, |idx| {
        (0..grid.dim())
            .map(|axis| {
                let c = &field.components[axis];
                (c[grid.neighbor(idx, axis, 1)] - c[grid.neighbor(idx, axis, -1)]) / (2.0 * h)
            })
            .sum()
    })
}

/// Hessian by composed centered first differences; entry `[a][b][idx]`.
pub fn hessian(field: &ScalarField) -> Vec<Vec<Vec<f64>>> {
    let grid = field.grid;
    let g = gradient(field, GradientScheme::Centered);
    (0..grid.dim())
        .map(|a| {
            let ga = ScalarField {
                grid,
                values: g.components[a].clone(),
            };
            let gga = gradient(&ga, GradientScheme::Centered);
            (0..grid.dim()).map(|b| gga.components[b].clone()).collect()
        })
        .collect()
}

/// Periodic trapezoidal quadrature `h^d Σ f`.
pub fn integrate(field: &ScalarField) -> f64 {
    field.grid.cell_volume() * field.values.iter().sum::<f64>()
}

/// Discrete inner product `h^d Σ f g`.
pub fn inner(a: &ScalarField, b: &ScalarField) -> f64 {
    a.grid.cell_volume() * a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>()
}

pub fn inner_vec(a: &VectorField, b: &VectorField) -> f64 {
    let w = a.grid.cell_volume();
    a.components
        .iter()
        .zip(&b.components)
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>())
        .sum::<f64>()
        * w
}

/// Bilinear (linear in 1-d) periodic interpolation of nodal values at `x`.
pub fn interpolate(grid: &TorusGrid, values: &[f64], x: &Point) -> f64 {
    let n = grid.n();
    let nf = n as f64;
    let locate = |c: f64| {
        let s = wrap(c) * nf;
        let i = (s.floor() as usize).min(n - 1);
        (i, s - i as f64, (i + 1) % n)
    };
    match grid.dim() {
        1 => {
            let (i, t, j) = locate(x[0]);
            values[i] * (1.0 - t) + values[j] * t
        }
        _ => {
            let (i0, t0, i1) = locate(x[0]);
            let (j0, t1, j1) = locate(x[1]);
            let at = |i: usize, j: usize| values[i * n + j];
            (1.0 - t0) * ((1.0 - t1) * at(i0, j0) + t1 * at(i0, j1))
                + t0 * ((1.0 - t1) * at(i1, j0) + t1 * at(i1, j1))
        }
    }
}
