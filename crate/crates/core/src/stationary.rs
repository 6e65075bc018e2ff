//! The regularized stationary system
//!
//! ```text
//! -Δu + H(x, Du) = H̄ + g_ε(m),    -Δm - div(D_pH(x, Du) m) = 0,    ∫m = 1,  ∫u = 0
//! ```
//!
//! solved by damped Picard iteration on `m`. The HJB step uses a long-time
//! IMEX relaxation; the FP step takes the kernel of the transposed generator.

use serde::{Deserialize, Serialize};

use crate::coupling::{g_eps, CouplingParams};
use crate::error::{MfgError, Result};
use crate::grid::{laplacian, ScalarField, TorusGrid};
use crate::hamiltonian::Hamiltonian;
use crate::linalg::{generator, laplacian_matrix, stationary_density, LuSolver, SparseMatrix, Upwinding};
use crate::ops::{drift, grad, hamiltonian_values};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Picard damping `θ ∈ (0, 1]`.
    pub theta: f64,
    pub picard_tol: f64,
    pub max_iters: usize,
    /// Tolerance of the inner ergodic HJB relaxation.
    pub linear_tol: f64,
    pub upwinding: Upwinding,
    /// Initial pseudo-time step of the ergodic relaxation.
    pub pseudo_dt: f64,
    pub max_pseudo_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            theta: 0.5,
            picard_tol: 1e-8,
            max_iters: 500,
            linear_tol: 1e-10,
            upwinding: Upwinding::Hybrid,
            pseudo_dt: 0.5,
            max_pseudo_steps: 20_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(MfgError::validation(format!("theta must lie in (0, 1], got {}", self.theta)));
        }
        if !(self.picard_tol > 0.0) || !(self.linear_tol > 0.0) {
            return Err(MfgError::validation("picard_tol and linear_tol must be positive"));
        }
        if self.max_iters == 0 || self.max_pseudo_steps == 0 {
            return Err(MfgError::validation("iteration budgets must be positive"));
        }
        if !(self.pseudo_dt > 0.0 && self.pseudo_dt.is_finite()) {
            return Err(MfgError::validation("pseudo_dt must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicSolution {
    /// Zero-mean corrector.
    pub u: ScalarField,
    pub hbar: f64,
    /// `sup |(-Δu + H(x,Du) - source) - H̄|`.
    pub residual: f64,
    pub steps: usize,
}

fn ergodic_residual<H: Hamiltonian + ?Sized>(w: &ScalarField, model: &H, source: &ScalarField) -> ScalarField {
    let h = hamiltonian_values(model, &grad(w));
    let lap = laplacian(w);
    ScalarField::from_indices(*w.grid(), |i| -lap.values()[i] + h.values()[i] - source.values()[i])
}

/// Solves `-Δu + H(x, Du) = H̄ + source` for `(u, H̄)` with `∫u = 0` by the
/// relaxation `(I - τΔ) w⁺ = w - τ H(x, Dw) + τ source`, mean removed after
/// every step. `τ` is halved whenever a step blows up.
pub fn solve_hjb_ergodic_source<H: Hamiltonian + ?Sized>(
    source: &ScalarField,
    model: &H,
    config: &SolverConfig,
    warm: Option<&ScalarField>,
) -> Result<ErgodicSolution> {
    source.ensure_finite("ergodic source")?;
    let grid = *source.grid();
    let lap = laplacian_matrix(&grid);
    let mut tau = config.pseudo_dt;
    let mut lu = LuSolver::factor(&lap.affine(1.0, -tau))?;
    let mut w = match warm {
        Some(u) => u.clone(),
        None => ScalarField::zeros(grid),
    };
    w.remove_mean();
    let mut r = ergodic_residual(&w, model, source);
    let mut res = r.sup_dist(&ScalarField::constant(grid, r.mean()));
    let mut history = vec![res];
    for step in 0..config.max_pseudo_steps {
        if res <= config.linear_tol {
            let hbar = r.mean();
            return Ok(ErgodicSolution {
                u: w,
                hbar,
                residual: res,
                steps: step,
            });
        }
        let h = hamiltonian_values(model, &grad(&w));
        let rhs: Vec<f64> = (0..grid.len())
            .map(|i| w.values()[i] - tau * h.values()[i] + tau * source.values()[i])
            .collect();
        let mut next = ScalarField::new(grid, lu.solve(&rhs)?)?;
        next.remove_mean();
        let r_next = ergodic_residual(&next, model, source);
        let res_next = r_next.sup_dist(&ScalarField::constant(grid, r_next.mean()));
        if !res_next.is_finite() || res_next > 10.0 * res.max(config.linear_tol) {
            tau *= 0.5;
            if tau < 1e-12 {
                break;
            }
            log::debug!("ergodic relaxation: halving pseudo step to {tau:.3e}");
            lu = LuSolver::factor(&lap.affine(1.0, -tau))?;
            continue;
        }
        w = next;
        r = r_next;
        res = res_next;
        history.push(res);
    }
    Err(MfgError::NonConvergence {
        stage: "ergodic hjb",
        iterations: history.len(),
        last_residual: res,
        history,
    })
}

/// `solve_hjb_ergodic_source` with source `g_ε(m)`.
pub fn solve_hjb_ergodic<H: Hamiltonian + ?Sized>(
    m: &ScalarField,
    model: &H,
    coupling: &CouplingParams,
    config: &SolverConfig,
    warm: Option<&ScalarField>,
) -> Result<ErgodicSolution> {
    let g = g_eps(m, coupling)?;
    solve_hjb_ergodic_source(&g, model, config, warm)
}

/// Generator `A = -Δ + D_pH(x, Du)·∇` of the linearized HJB.
pub fn linearized_generator<H: Hamiltonian + ?Sized>(u: &ScalarField, model: &H, scheme: Upwinding) -> SparseMatrix {
    generator(u.grid(), &drift(model, &grad(u)), scheme)
}

/// Unit-mass nonnegative kernel of `Aᵀ`.
pub fn solve_fp_stationary<H: Hamiltonian + ?Sized>(
    u: &ScalarField,
    model: &H,
    config: &SolverConfig,
) -> Result<ScalarField> {
    u.ensure_finite("u")?;
    let a = linearized_generator(u, model, config.upwinding);
    let m = stationary_density(&a, u.grid().cell_volume())?;
    ScalarField::new(*u.grid(), m)
}

/// Jacobi-scaled FP residual `sup |(Aᵀ m)_i / (Aᵀ)_ii|`.
pub fn fp_residual<H: Hamiltonian + ?Sized>(u: &ScalarField, m: &ScalarField, model: &H, scheme: Upwinding) -> f64 {
    let at = linearized_generator(u, model, scheme).transpose();
    let r = at.matvec(m.values());
    r.iter()
        .enumerate()
        .map(|(i, v)| (v / at.get(i, i)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardRecord {
    pub iter: usize,
    pub hjb_res: f64,
    pub fp_res: f64,
    pub hbar: f64,
    pub min_m: f64,
    pub update: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarySolution {
    pub u: ScalarField,
    pub m: ScalarField,
    pub hbar: f64,
    pub eps: f64,
    pub hjb_res: f64,
    pub fp_res: f64,
    pub iterations: usize,
    pub history: Vec<PicardRecord>,
}

impl StationarySolution {
    pub fn grid(&self) -> &TorusGrid {
        self.u.grid()
    }
}

/// Damped Picard iteration from `m ≡ 1` (or from `warm`). On return `u` and
/// `H̄` solve the HJB for the returned `m` exactly (to `linear_tol`), and `m`
/// is within `picard_tol` of the FP kernel for `u`.
pub fn solve_stationary_eps<H: Hamiltonian + ?Sized>(
    model: &H,
    coupling: &CouplingParams,
    grid: TorusGrid,
    config: &SolverConfig,
    warm: Option<&StationarySolution>,
) -> Result<StationarySolution> {
    config.validate()?;
    coupling.validate_for_solver()?;
    if model.dim() != grid.dim() {
        return Err(MfgError::validation("model and grid dimensions differ"));
    }
    let mut m = match warm {
        Some(s) => s.m.clone(),
        None => ScalarField::constant(grid, 1.0),
    };
    let mut u_warm = warm.map(|s| s.u.clone());
    let mut history = Vec::new();
    let mut updates = Vec::new();
    for iter in 1..=config.max_iters {
        let erg = solve_hjb_ergodic(&m, model, coupling, config, u_warm.as_ref())?;
        let m_new = solve_fp_stationary(&erg.u, model, config)?;
        let update = m_new.sup_dist(&m);
        let fp_res = fp_residual(&erg.u, &m, model, config.upwinding);
        history.push(PicardRecord {
            iter,
            hjb_res: erg.residual,
            fp_res,
            hbar: erg.hbar,
            min_m: m.min(),
            update,
        });
        updates.push(update);
        log::debug!("stationary picard {iter}: update {update:.3e}, hbar {:.10}", erg.hbar);
        if update < config.picard_tol {
            return Ok(StationarySolution {
                u: erg.u,
                m,
                hbar: erg.hbar,
                eps: coupling.eps,
                hjb_res: erg.residual,
                fp_res,
                iterations: iter,
                history,
            });
        }
        m = m.zip_map(&m_new, |a, b| (1.0 - config.theta) * a + config.theta * b);
        u_warm = Some(erg.u);
    }
    Err(MfgError::NonConvergence {
        stage: "stationary picard",
        iterations: config.max_iters,
        last_residual: *updates.last().unwrap_or(&f64::NAN),
        history: updates,
    })
}

/// Traces recorded along an ε-schedule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub eps: Vec<f64>,
    /// `‖u_k - u_{k+1}‖_∞`, one row per consecutive pair.
    pub cauchy_u: Vec<f64>,
    pub cauchy_m: Vec<f64>,
    /// `min (m_k + ε_k)`, over space (and time for evolutive runs).
    pub min_density: Vec<f64>,
    pub hbar: Vec<f64>,
    /// `‖Du_k‖_∞`.
    pub lipschitz: Vec<f64>,
    pub iterations: Vec<usize>,
    pub flags: Vec<String>,
}

impl LimitReport {
    pub(crate) fn flag_non_monotone_cauchy(&mut self) {
        for w in self.cauchy_u.windows(2).enumerate() {
            if w.1[1] > w.1[0] {
                self.flags.push(format!("non-monotone Cauchy difference of u at stage {}", w.0 + 2));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarySweep {
    pub stages: Vec<StationarySolution>,
    pub limit: LimitReport,
}

pub fn validate_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(MfgError::validation("eps schedule is empty"));
    }
    if schedule.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(MfgError::validation("eps schedule entries must be positive"));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(MfgError::validation("eps schedule must be strictly decreasing"));
    }
    Ok(())
}

/// Solves along a decreasing ε-schedule, warm-starting each stage.
pub fn epsilon_continuation_stationary<H: Hamiltonian + ?Sized>(
    model: &H,
    coupling: &CouplingParams,
    schedule: &[f64],
    grid: TorusGrid,
    config: &SolverConfig,
) -> Result<StationarySweep> {
    validate_schedule(schedule)?;
    let mut stages: Vec<StationarySolution> = Vec::with_capacity(schedule.len());
    let mut limit = LimitReport::default();
    for &eps in schedule {
        let c = coupling.with_eps(eps);
        let sol = solve_stationary_eps(model, &c, grid, config, stages.last())?;
        if let Some(prev) = stages.last() {
            limit.cauchy_u.push(prev.u.sup_dist(&sol.u));
            limit.cauchy_m.push(prev.m.sup_dist(&sol.m));
        }
        limit.eps.push(eps);
        limit.min_density.push(sol.m.min() + eps);
        limit.hbar.push(sol.hbar);
        limit.lipschitz.push(grad(&sol.u).sup_norm());
        limit.iterations.push(sol.iterations);
        log::info!("stationary eps {eps:.1e}: {} picard iterations, hbar {:.8}", sol.iterations, sol.hbar);
        stages.push(sol);
    }
    limit.flag_non_monotone_cauchy();
    if let (Some(&first), Some(&last)) = (limit.iterations.first(), limit.iterations.last()) {
        if limit.iterations.len() > 1 && last > first {
            limit.flags.push(format!("warm start did not reduce iterations ({first} -> {last})"));
        }
    }
    Ok(StationarySweep { stages, limit })
}
