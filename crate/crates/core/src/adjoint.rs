//! Adjoint density `ρ_t - Δρ - div(D_pH(x, Du) ρ) = 0` on `[τ, T]` started
//! from a mollified Dirac mass, and the representation formula for `u(x0, τ)`.

use serde::{Deserialize, Serialize};

use crate::coupling::{g_eps, CouplingParams};
use crate::error::{MfgError, Result};
use crate::estimates::EstimateEntry;
use crate::estimates::{grad_sq, label};
use crate::grid::{inner, integrate, periodic_delta, Point, ScalarField, TorusGrid};
use crate::hamiltonian::Hamiltonian;
use crate::linalg::Upwinding;
use crate::ops::{grad, hamiltonian_values, lagrangian_values};
use crate::time_solver::{evolve_density, TimeDependentSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointField {
    /// Slices at time indices `start..=nt`.
    pub rho: Vec<ScalarField>,
    pub x0: Point,
    /// Start time snapped to the grid, `start · dt`.
    pub tau: f64,
    pub start: usize,
    pub moll_width: f64,
    pub dt: f64,
}

/// Periodic Gaussian of width `w` centered at `x0`, unit discrete mass.
pub fn gaussian_bump(grid: TorusGrid, x0: &Point, width: f64) -> ScalarField {
    let raw = ScalarField::from_fn(grid, |x| {
        let mut r2 = 0.0;
        for a in 0..grid.dim() {
            let d = periodic_delta(x[a], x0[a]);
            r2 += d * d;
        }
        (-r2 / (2.0 * width * width)).exp()
    });
    let mass = integrate(&raw);
    raw.map(|v| v / mass)
}

pub fn solve_adjoint<H: Hamiltonian + ?Sized>(
    sol: &TimeDependentSolution,
    model: &H,
    x0: Point,
    tau: f64,
    moll_width: f64,
    scheme: Upwinding,
) -> Result<AdjointField> {
    let grid = *sol.grid();
    if !(moll_width >= 2.0 * grid.h()) {
        return Err(MfgError::validation(format!(
            "mollification width {moll_width} is under-resolved; need at least 2h = {}",
            2.0 * grid.h()
        )));
    }
    if !(0.0..sol.t_final).contains(&tau) {
        return Err(MfgError::validation(format!("tau must lie in [0, T), got {tau}")));
    }
    let dt = sol.dt();
    let start = ((tau / dt).round() as usize).min(sol.nt - 1);
    let rho0 = gaussian_bump(grid, &x0, moll_width);
    let rho = evolve_density(&sol.u, model, start, &rho0, dt, scheme)?;
    Ok(AdjointField {
        rho,
        x0,
        tau: start as f64 * dt,
        start,
        moll_width,
        dt,
    })
}

impl AdjointField {
    pub fn slice_at(&self, k: usize) -> &ScalarField {
        &self.rho[k - self.start]
    }

    pub fn max_mass_error(&self) -> f64 {
        self.rho.iter().map(|r| (integrate(r) - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.rho.iter().map(ScalarField::min).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub tolerance: f64,
}

/// `LHS = ∫u(τ) ρ(τ)` against
/// `RHS = ∫∫(D_pH·Du - H - w(m+ε)^{-α}) ρ + ∫u_T ρ(T)`; the tolerance is
/// `c·(h² + dt + w²)`.
pub fn representation_check<H: Hamiltonian + ?Sized>(
    sol: &TimeDependentSolution,
    adj: &AdjointField,
    model: &H,
    coupling: &CouplingParams,
    c: f64,
) -> Result<(Representation, EstimateEntry)> {
    if adj.rho[0].grid() != sol.grid() || (adj.dt - sol.dt()).abs() > 1e-15 {
        return Err(MfgError::validation("adjoint field and solution use different grids"));
    }
    let dt = sol.dt();
    let lhs = inner(&sol.u[adj.start], &adj.rho[0]);
    let mut rhs = inner(&sol.ut, adj.rho.last().expect("non-empty"));
    for k in adj.start + 1..=sol.nt {
        let l = lagrangian_values(model, &grad(&sol.u[k]));
        let g = g_eps(&sol.m[k], coupling)?;
        rhs += dt * inner(&l.zip_map(&g, |a, b| a + b), adj.slice_at(k));
    }
    let h = sol.grid().h();
    let tolerance = c * (h * h + dt + adj.moll_width * adj.moll_width);
    let gap = (lhs - rhs).abs();
    let rep = Representation { lhs, rhs, gap, tolerance };
    Ok((rep, EstimateEntry::at_most("representation_gap", gap, 0.0, tolerance)))
}

/// `‖f‖_{L^∞(τ,T; L^p)}` over slices `start..=nt`.
fn linf_lp(fields: &[ScalarField], p: f64) -> f64 {
    fields
        .iter()
        .map(|f| integrate(&f.map(|v| v.abs().powf(p))).powf(1.0 / p))
        .fold(0.0, f64::max)
}

/// `‖ρ‖_{L^1(τ,T; L^q)}`, right-endpoint rule.
fn l1_lq(adj: &AdjointField, q: f64) -> f64 {
    adj.rho[1..]
        .iter()
        .map(|r| adj.dt * integrate(&r.map(|v| v.max(0.0).powf(q))).powf(1.0 / q))
        .sum()
}

/// Lower bound `∫u(τ)ρ(τ) ≥ -C - ‖w(m+ε)^{-α}‖_{L^∞(L^p)} ‖ρ‖_{L^1(L^q)}` with
/// `C = C1 (T - τ) - min u_T`, where `C1` comes from the lower bound
/// `D_pH·p - H ≥ -C1` (the A2 fit).
pub fn lower_bound_check(
    sol: &TimeDependentSolution,
    adj: &AdjointField,
    coupling: &CouplingParams,
    a2_c1: f64,
    p: f64,
) -> Result<EstimateEntry> {
    if !(p > 1.0) {
        return Err(MfgError::validation("lower bound exponent p must exceed 1"));
    }
    let q = p / (p - 1.0);
    let lhs = inner(&sol.u[adj.start], &adj.rho[0]);
    let weights: Vec<ScalarField> = sol.m[adj.start + 1..]
        .iter()
        .map(|m| g_eps(m, coupling).map(|g| g.map(f64::abs)))
        .collect::<Result<_>>()?;
    let c = a2_c1 * (sol.t_final - adj.tau) - sol.ut.min();
    let bound = -c - linf_lp(&weights, p) * l1_lq(adj, q);
    Ok(EstimateEntry::at_least(&format!("value_lower_bound[p={}]", label(p)), lhs, bound, 0.0)
        .with_note(format!("C = {c:.4e} from the A2 fit, labelled fitted")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointNorms {
    /// `(ν, ∫∫|Dρ^{ν/2}|²)`.
    pub dissipation: Vec<(f64, f64)>,
    /// `(q, ‖ρ‖_{L^1(τ,T;L^q)})`.
    pub l1_lq: Vec<(f64, f64)>,
    /// `(ν, max_s ∫ρ^ν(s))`.
    pub max_power_mass: Vec<(f64, f64)>,
    /// `∫∫ H(x, Du) ρ`.
    pub h_rho: f64,
}

pub fn adjoint_norm_report<H: Hamiltonian + ?Sized>(
    sol: &TimeDependentSolution,
    adj: &AdjointField,
    model: &H,
    nu_list: &[f64],
    q_list: &[f64],
) -> Result<(AdjointNorms, Vec<EstimateEntry>)> {
    if nu_list.iter().any(|&nu| !(nu > 0.0 && nu < 1.0)) {
        return Err(MfgError::validation("nu values must lie in (0, 1)"));
    }
    if q_list.iter().any(|&q| !(q > 1.0)) {
        return Err(MfgError::validation("q values must exceed 1"));
    }
    let mut entries = Vec::new();
    let mut dissipation = Vec::new();
    let mut max_power_mass = Vec::new();
    for &nu in nu_list {
        let powered: Vec<ScalarField> = adj.rho.iter().map(|r| r.map(|v| v.max(0.0).powf(nu))).collect();
        let diss: f64 = powered[1..]
            .iter()
            .map(|r| adj.dt * integrate(&grad_sq(&r.map(|v| v.sqrt()))))
            .sum();
        let pm = powered.iter().map(integrate).fold(0.0, f64::max);
        entries.push(EstimateEntry::finite(&format!("adjoint_dissipation[nu={}]", label(nu)), diss));
        entries.push(EstimateEntry::at_most(&format!("adjoint_power_mass[nu={}]", label(nu)), pm, 1.0, 1e-12));
        dissipation.push((nu, diss));
        max_power_mass.push((nu, pm));
    }
    let mut lq = Vec::new();
    for &q in q_list {
        let v = l1_lq(adj, q);
        entries.push(EstimateEntry::finite(&format!("adjoint_l1_lq[q={}]", label(q)), v));
        lq.push((q, v));
    }
    let h_rho: f64 = (adj.start + 1..=sol.nt)
        .map(|k| adj.dt * inner(&hamiltonian_values(model, &grad(&sol.u[k])), adj.slice_at(k)))
        .sum();
    entries.push(EstimateEntry::finite("adjoint_h_rho", h_rho));
    Ok((
        AdjointNorms {
            dissipation,
            l1_lq: lq,
            max_power_mass,
            h_rho,
        },
        entries,
    ))
}

/// Constant needed for `∫∫Hρ ≤ C + C ‖w(m+ε)^{-α}‖_{L^∞(L^p)} (1 + ‖Du‖_∞^{2(γ-1)})`.
pub fn h_rho_constant(
    sol: &TimeDependentSolution,
    coupling: &CouplingParams,
    gamma: f64,
    h_rho: f64,
    p: f64,
) -> Result<f64> {
    let weights: Vec<ScalarField> = sol
        .m
        .iter()
        .map(|m| g_eps(m, coupling).map(|g| g.map(f64::abs)))
        .collect::<Result<_>>()?;
    let factor = 1.0 + linf_lp(&weights, p) * (1.0 + sol.lipschitz_norm().powf(2.0 * (gamma - 1.0)));
    Ok(h_rho / factor)
}

/// Variance of a 1-d density about `center`, using periodic displacements.
pub fn periodic_variance(rho: &ScalarField, center: f64) -> f64 {
    let grid = rho.grid();
    let w = grid.cell_volume();
    rho.values()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let d = periodic_delta(grid.coords(i)[0], center);
            w * r * d * d
        })
        .sum()
}
