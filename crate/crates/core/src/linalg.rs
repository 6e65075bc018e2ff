//! Sparse matrices on grid functions: the drift-diffusion generator, its
//! transpose, and LU solves.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::grid::{TorusGrid, VectorField};

/// Discretization of the drift term `b·∇φ` in the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Upwinding {
    /// Centered where the mesh Péclet number `|b| h / 2 ≤ 1`, upwind elsewhere.
    /// Both choices keep nonpositive off-diagonals.
    #[default]
    Hybrid,
    /// Upwind at every node.
    Always,
}

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` entries; duplicates are summed.
    pub fn from_triplets(n: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            assert!(r < n && c < n, "entry ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *vals.last_mut().expect("previous entry") += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseMatrix { n, row_ptr, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k])))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        (self.row_ptr[r]..self.row_ptr[r + 1])
            .find(|&k| self.cols[k] == c)
            .map_or(0.0, |k| self.vals[k])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(|k| self.vals[k] * x[self.cols[k]]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.n, self.entries().map(|(r, c, v)| (c, r, v)).collect())
    }

    /// `a I + b self`.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        let mut entries: Vec<_> = self.entries().map(|(r, c, v)| (r, c, b * v)).collect();
        entries.extend((0..self.n).map(|i| (i, i, a)));
        Self::from_triplets(self.n, entries)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.vals[self.row_ptr[r]..self.row_ptr[r + 1]].iter().sum())
            .collect()
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).abs()).fold(0.0, f64::max)
    }

    /// Nonpositive off-diagonals and nonnegative diagonal.
    pub fn has_m_matrix_sign_pattern(&self) -> bool {
        self.entries().all(|(r, c, v)| if r == c { v >= 0.0 } else { v <= 0.0 })
    }
}

/// Standard `(2d+1)`-point Laplacian.
pub fn laplacian_matrix(grid: &TorusGrid) -> SparseMatrix {
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut entries = Vec::with_capacity(grid.len() * (2 * grid.dim() + 1));
    for i in 0..grid.len() {
        entries.push((i, i, -2.0 * grid.dim() as f64 * inv_h2));
        for axis in 0..grid.dim() {
            entries.push((i, grid.neighbor(i, axis, 1), inv_h2));
            entries.push((i, grid.neighbor(i, axis, -1), inv_h2));
        }
    }
    SparseMatrix::from_triplets(grid.len(), entries)
}

/// `A = -Δ_h + b·∇_h` with the drift discretized per `scheme`. Rows sum to
/// zero and the off-diagonals are nonpositive, so `I + dt A` and its transpose
/// are M-matrices for every `dt > 0`.
pub fn generator(grid: &TorusGrid, drift: &VectorField, scheme: Upwinding) -> SparseMatrix {
    let h = grid.h();
    let inv_h2 = 1.0 / (h * h);
    let mut entries = Vec::with_capacity(grid.len() * (2 * grid.dim() + 1) * 2);
    for i in 0..grid.len() {
        entries.push((i, i, 2.0 * grid.dim() as f64 * inv_h2));
        for axis in 0..grid.dim() {
            let fwd = grid.neighbor(i, axis, 1);
            let bwd = grid.neighbor(i, axis, -1);
            entries.push((i, fwd, -inv_h2));
            entries.push((i, bwd, -inv_h2));
            let b = drift.component(axis)[i];
            let centered = scheme == Upwinding::Hybrid && b.abs() * h <= 2.0;
            if centered {
                entries.push((i, fwd, b / (2.0 * h)));
                entries.push((i, bwd, -b / (2.0 * h)));
            } else if b > 0.0 {
                entries.push((i, i, b / h));
                entries.push((i, bwd, -b / h));
            } else if b < 0.0 {
                entries.push((i, fwd, b / h));
                entries.push((i, i, -b / h));
            }
        }
    }
    SparseMatrix::from_triplets(grid.len(), entries)
}

/// Sparse LU factorization.
pub struct LuSolver {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl LuSolver {
    pub fn factor(matrix: &SparseMatrix) -> Result<Self> {
        let triplets: Vec<Triplet<usize, usize, f64>> =
            matrix.entries().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        let csc = SparseColMat::<usize, f64>::try_new_from_triplets(matrix.dim(), matrix.dim(), &triplets)
            .map_err(|e| MfgError::Numeric(format!("sparse assembly failed: {e:?}")))?;
        let lu = csc
            .sp_lu()
            .map_err(|e| MfgError::Numeric(format!("sparse LU failed: {e:?}")))?;
        Ok(LuSolver { n: matrix.dim(), lu })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(rhs.len(), self.n);
        let mut col = faer::Col::<f64>::from_fn(self.n, |i| rhs[i]);
        self.lu.solve_in_place(col.as_mat_mut());
        let out: Vec<f64> = (0..self.n).map(|i| col[i]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(MfgError::Numeric("linear solve produced non-finite values".into()));
        }
        Ok(out)
    }
}

const KERNEL_MAX_ITERS: usize = 50;
const SPECTRAL_ITERS: usize = 12;

/// Nonnegative kernel vector of `Aᵀ` for a generator `A` (zero row sums),
/// normalized to `cell_volume · Σ m = 1`, by shifted inverse iteration.
/// Returns a degeneracy error when a second eigenvalue of `Aᵀ` sits at zero.
pub fn stationary_density(a: &SparseMatrix, cell_volume: f64) -> Result<Vec<f64>> {
    let n = a.dim();
    let at = a.transpose();
    let scale = a.max_diagonal().max(1.0);
    let sigma = 1e-12 * scale;
    let lu = LuSolver::factor(&at.affine(sigma, 1.0))?;
    let normalize = |x: &mut Vec<f64>| {
        let mass: f64 = x.iter().sum::<f64>() * cell_volume;
        x.iter_mut().for_each(|v| *v /= mass);
    };
    let mut x = vec![1.0; n];
    normalize(&mut x);
    let mut converged = false;
    let mut history = Vec::new();
    for _ in 0..KERNEL_MAX_ITERS {
        let mut next = lu.solve(&x)?;
        normalize(&mut next);
        let change = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let size = next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        history.push(change);
        x = next;
        if change <= 1e-13 * size {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MfgError::NonConvergence {
            stage: "fp kernel",
            iterations: KERNEL_MAX_ITERS,
            last_residual: *history.last().unwrap_or(&f64::NAN),
            history,
        });
    }
    let lambda2 = second_eigenvalue_estimate(&lu, n, sigma)?;
    if lambda2 <= 1e-8 * scale {
        return Err(MfgError::DegenerateKernel { lambda2 });
    }
    Ok(x)
}

/// Inverse iteration on the mean-zero subspace, which `Aᵀ` leaves invariant
/// because `1ᵀ Aᵀ = 0`. The growth factor estimates `1/|λ₂ + σ|`.
fn second_eigenvalue_estimate(lu: &LuSolver, n: usize, sigma: f64) -> Result<f64> {
    let project = |y: &mut Vec<f64>| {
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter_mut().for_each(|v| *v -= mean);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        norm
    };
    // deterministic, non-smooth start vector
    let mut y: Vec<f64> = (0..n)
        .map(|i| ((i as f64 * 0.618_033_988_749_895).fract() - 0.5) + if i % 3 == 0 { 0.25 } else { 0.0 })
        .collect();
    let norm = project(&mut y);
    if norm == 0.0 {
        return Ok(f64::INFINITY);
    }
    y.iter_mut().for_each(|v| *v /= norm);
    let mut growth = 0.0;
    for _ in 0..SPECTRAL_ITERS {
        let mut next = lu.solve(&y)?;
        growth = project(&mut next);
        if growth == 0.0 {
            return Ok(f64::INFINITY);
        }
        next.iter_mut().for_each(|v| *v /= growth);
        y = next;
    }
    Ok((1.0 / growth - sigma).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{laplacian, ScalarField};

    #[test]
    fn laplacian_matrix_matches_operator() {
        let g = TorusGrid::new(2, 8).unwrap();
        let f = ScalarField::from_fn(g, |x| (x[0] * 6.0).sin() + x[1] * x[1]);
        let lap = laplacian(&f);
        let via = laplacian_matrix(&g).matvec(f.values());
        for (a, b) in lap.values().iter().zip(&via) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn generator_structure() {
        let g = TorusGrid::new(1, 16).unwrap();
        for scheme in [Upwinding::Hybrid, Upwinding::Always] {
            let drift = VectorField::from_fn(g, |x| [60.0 * (2.0 * std::f64::consts::PI * x[0]).sin(), 0.0]);
            let a = generator(&g, &drift, scheme);
            assert!(a.row_sums().iter().all(|s| s.abs() < 1e-9));
            assert!(a.has_m_matrix_sign_pattern());
        }
    }

    #[test]
    fn upwind_orientation() {
        let g = TorusGrid::new(1, 8).unwrap();
        let pos = VectorField::from_fn(g, |_| [1.0, 0.0]);
        let a = generator(&g, &pos, Upwinding::Always);
        let h = g.h();
        // b > 0 uses the backward neighbor
        assert!((a.get(3, 2) - (-1.0 / (h * h) - 1.0 / h)).abs() < 1e-9);
        assert!((a.get(3, 4) + 1.0 / (h * h)).abs() < 1e-9);
    }

    #[test]
    fn hybrid_is_centered_at_low_peclet() {
        let g = TorusGrid::new(1, 8).unwrap();
        let drift = VectorField::from_fn(g, |_| [1.0, 0.0]);
        let a = generator(&g, &drift, Upwinding::Hybrid);
        let h = g.h();
        assert!((a.get(3, 4) - (-1.0 / (h * h) + 0.5 / h)).abs() < 1e-9);
        assert!((a.get(3, 2) - (-1.0 / (h * h) - 0.5 / h)).abs() < 1e-9);
    }

    #[test]
    fn transpose_roundtrip() {
        let g = TorusGrid::new(2, 8).unwrap();
        let drift = VectorField::from_fn(g, |x| [x[0] - 0.5, 0.3]);
        let a = generator(&g, &drift, Upwinding::Hybrid);
        assert_eq!(a.transpose().transpose(), a);
        let x: Vec<f64> = (0..g.len()).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.3).cos()).collect();
        let lhs: f64 = a.matvec(&x).iter().zip(&y).map(|(p, q)| p * q).sum();
        let rhs: f64 = a.transpose().matvec(&y).iter().zip(&x).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn lu_solves() {
        let g = TorusGrid::new(1, 16).unwrap();
        let m = laplacian_matrix(&g).affine(1.0, -0.01);
        let lu = LuSolver::factor(&m).unwrap();
        let rhs: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let x = lu.solve(&rhs).unwrap();
        let back = m.matvec(&x);
        for (a, b) in back.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_drift_density_is_uniform() {
        let g = TorusGrid::new(2, 8).unwrap();
        let a = generator(&g, &VectorField::zeros(g), Upwinding::Hybrid);
        let m = stationary_density(&a, g.cell_volume()).unwrap();
        assert!(m.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn two_kernel_blocks_are_degenerate() {
        // block diagonal generator: two disconnected 3-state chains
        let mut e = Vec::new();
        for base in [0usize, 3] {
            for i in 0..3 {
                let r = base + i;
                let next = base + (i + 1) % 3;
                let prev = base + (i + 2) % 3;
                e.push((r, r, 2.0));
                e.push((r, next, -1.0));
                e.push((r, prev, -1.0));
            }
        }
        let a = SparseMatrix::from_triplets(6, e);
        match stationary_density(&a, 1.0 / 6.0) {
            Err(MfgError::DegenerateKernel { lambda2 }) => assert!(lambda2 < 1e-6),
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }
}
