//! Hamiltonian quantities evaluated node by node on a discrete gradient.

use crate::grid::{gradient, GradientScheme, ScalarField, VectorField};
use crate::hamiltonian::Hamiltonian;

/// Centered gradient `D_c u`.
pub fn grad(u: &ScalarField) -> VectorField {
    gradient(u, GradientScheme::Centered)
}

/// `H(x_i, p_i)` at every node.
pub fn hamiltonian_values<H: Hamiltonian + ?Sized>(model: &H, p: &VectorField) -> ScalarField {
    let grid = *p.grid();
    ScalarField::from_indices(grid, |i| model.value(&grid.coords(i), &p.at(i)))
}

/// `D_pH(x_i, p_i)` at every node.
pub fn drift<H: Hamiltonian + ?Sized>(model: &H, p: &VectorField) -> VectorField {
    let grid = *p.grid();
    let mut out = VectorField::zeros(grid);
    for i in 0..grid.len() {
        out.set(i, model.grad_p(&grid.coords(i), &p.at(i)));
    }
    out
}

/// `D_pH(x_i, p_i)·p_i - H(x_i, p_i)` at every node.
pub fn lagrangian_values<H: Hamiltonian + ?Sized>(model: &H, p: &VectorField) -> ScalarField {
    let grid = *p.grid();
    ScalarField::from_indices(grid, |i| {
        let x = grid.coords(i);
        let pi = p.at(i);
        let b = model.grad_p(&x, &pi);
        b[0] * pi[0] + b[1] * pi[1] - model.value(&x, &pi)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::hamiltonian::PowerHamiltonian;

    #[test]
    fn quadratic_lagrangian_equals_h() {
        let g = TorusGrid::new(1, 16).unwrap();
        let u = ScalarField::from_fn(g, |x| (6.0 * x[0]).sin());
        let q = PowerHamiltonian::quadratic(1);
        let p = grad(&u);
        let h = hamiltonian_values(&q, &p);
        let l = lagrangian_values(&q, &p);
        for (a, b) in h.values().iter().zip(l.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(drift(&q, &p).component(0), p.component(0));
    }
}
