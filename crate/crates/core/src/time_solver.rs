//! The regularized evolutive system
//!
//! ```text
//! -u_t + H(x, Du) = Δu + g_ε(m),    m_t - div(D_pH(x, Du) m) = Δm,
//! u(·, T) = u_T,    m(·, 0) = m_0
//! ```
//!
//! Backward IMEX sweep for `u`, forward sweep for `m` with the transposed
//! generator, coupled by damped Picard iteration on the `m`-path.

use serde::{Deserialize, Serialize};

use crate::coupling::{g_eps, CouplingParams};
use crate::error::{MfgError, Result};
use crate::grid::{integrate, ScalarField, TorusGrid};
use crate::hamiltonian::Hamiltonian;
use crate::linalg::{laplacian_matrix, LuSolver, Upwinding};
use crate::ops::{drift, grad, hamiltonian_values};
use crate::stationary::{linearized_generator, validate_schedule, LimitReport, SolverConfig};

pub type Path = Vec<ScalarField>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRecord {
    pub iter: usize,
    pub update_norm: f64,
    pub min_m: f64,
    pub max_u: f64,
    pub lipschitz_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeDependentSolution {
    /// `u[k]` at time `k·dt`, `k = 0..=nt`.
    pub u: Path,
    pub m: Path,
    pub t_final: f64,
    pub nt: usize,
    pub ut: ScalarField,
    pub m0: ScalarField,
    pub eps: f64,
    pub iterations: usize,
    pub history: Vec<TimeRecord>,
}

impl TimeDependentSolution {
    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    pub fn grid(&self) -> &TorusGrid {
        self.ut.grid()
    }

    /// `sup_k ‖D_c u^k‖_∞`.
    pub fn lipschitz_norm(&self) -> f64 {
        lipschitz(&self.u)
    }

    /// `min_{x,k} m`.
    pub fn min_m(&self) -> f64 {
        self.m.iter().map(ScalarField::min).fold(f64::INFINITY, f64::min)
    }

    pub fn max_u(&self) -> f64 {
        self.u.iter().map(ScalarField::max).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn lipschitz(u: &Path) -> f64 {
    u.iter().map(|f| grad(f).sup_norm()).fold(0.0, f64::max)
}

fn check_dt(t_final: f64, nt: usize) -> Result<f64> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(MfgError::validation(format!("horizon T must be positive, got {t_final}")));
    }
    if nt == 0 {
        return Err(MfgError::validation("nt must be positive"));
    }
    Ok(t_final / nt as f64)
}

/// Backward sweep `(I - dtΔ) u^k = u^{k+1} - dt H(x, D_c u^{k+1}) + dt g_ε(m^k)`
/// from `u^{nt} = u_T`.
pub fn solve_hjb_backward<H: Hamiltonian + ?Sized>(
    m_path: &[ScalarField],
    model: &H,
    coupling: &CouplingParams,
    ut: &ScalarField,
    dt: f64,
) -> Result<Path> {
    let source: Vec<ScalarField> = m_path.iter().map(|m| g_eps(m, coupling)).collect::<Result<_>>()?;
    backward_with_source(&source, model, ut, dt)
}

/// Backward sweep with an arbitrary source path in place of `g_ε(m^k)`.
pub fn backward_with_source<H: Hamiltonian + ?Sized>(
    source: &[ScalarField],
    model: &H,
    ut: &ScalarField,
    dt: f64,
) -> Result<Path> {
    if source.len() < 2 {
        return Err(MfgError::validation("space-time path needs at least two slices"));
    }
    let grid = *ut.grid();
    let nt = source.len() - 1;
    let lu = LuSolver::factor(&laplacian_matrix(&grid).affine(1.0, -dt))?;
    let mut path = vec![ut.clone(); nt + 1];
    let mut cfl_warned = false;
    for k in (0..nt).rev() {
        let next = &path[k + 1];
        let p = grad(next);
        if !cfl_warned {
            let speed = drift(model, &p).sup_norm();
            if speed * dt > grid.h() {
                log::warn!("explicit Hamiltonian step: dt·|D_pH| = {:.3e} exceeds h", speed * dt);
                cfl_warned = true;
            }
        }
        let h = hamiltonian_values(model, &p);
        let rhs: Vec<f64> = (0..grid.len())
            .map(|i| next.values()[i] - dt * h.values()[i] + dt * source[k].values()[i])
            .collect();
        let uk = ScalarField::new(grid, lu.solve(&rhs)?)?;
        if !uk.is_finite() {
            return Err(MfgError::Numeric(format!("non-finite value function at time index {k}")));
        }
        path[k] = uk;
    }
    Ok(path)
}

/// Forward sweep `(I + dt A_{k+1}ᵀ) ρ^{k+1} = ρ^k` from `ρ^{start} = rho0`,
/// where `A_{k+1}` is the generator linearized at `u^{k+1}`. Returns the
/// slices `start..=nt`.
pub fn evolve_density<H: Hamiltonian + ?Sized>(
    u_path: &[ScalarField],
    model: &H,
    start: usize,
    rho0: &ScalarField,
    dt: f64,
    scheme: Upwinding,
) -> Result<Path> {
    let nt = u_path.len() - 1;
    if start > nt {
        return Err(MfgError::validation("start index beyond the horizon"));
    }
    let mut out = Vec::with_capacity(nt - start + 1);
    out.push(rho0.clone());
    for k in start..nt {
        let a = linearized_generator(&u_path[k + 1], model, scheme);
        let lu = LuSolver::factor(&a.transpose().affine(1.0, dt))?;
        let prev = out.last().expect("non-empty path");
        let next = ScalarField::new(*rho0.grid(), lu.solve(prev.values())?)?;
        out.push(next);
    }
    Ok(out)
}

pub fn solve_fp_forward<H: Hamiltonian + ?Sized>(
    u_path: &[ScalarField],
    model: &H,
    m0: &ScalarField,
    dt: f64,
    scheme: Upwinding,
) -> Result<Path> {
    let mut path = evolve_density(u_path, model, 0, m0, dt, scheme)?;
    path[0] = m0.clone();
    Ok(path)
}

/// `(I - dtΔ) ζ^{k+1} = ζ^k`, `nt` steps from `zeta0`.
pub fn heat_flow(zeta0: &ScalarField, dt: f64, nt: usize) -> Result<Path> {
    let lu = LuSolver::factor(&laplacian_matrix(zeta0.grid()).affine(1.0, -dt))?;
    let mut out = Vec::with_capacity(nt + 1);
    out.push(zeta0.clone());
    for _ in 0..nt {
        let next = lu.solve(out.last().expect("non-empty").values())?;
        out.push(ScalarField::new(*zeta0.grid(), next)?);
    }
    Ok(out)
}

/// Checks `m_0 > 0` and unit discrete mass.
pub fn validate_initial_density(m0: &ScalarField) -> Result<()> {
    m0.ensure_finite("m0")?;
    if m0.min() <= 0.0 {
        return Err(MfgError::validation(format!("m0 must be positive, min is {}", m0.min())));
    }
    let mass = integrate(m0);
    if (mass - 1.0).abs() > 1e-10 {
        return Err(MfgError::validation(format!("m0 must have unit mass, got {mass}")));
    }
    Ok(())
}

fn path_dist(a: &[ScalarField], b: &[ScalarField]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.sup_dist(y)).fold(0.0, f64::max)
}

/// Damped Picard on the `m`-path, starting from the heat flow of `m_0` (or
/// from `warm`). On return `u` is the backward sweep for the returned `m`.
#[allow(clippy::too_many_arguments)]
pub fn fixed_point_time<H: Hamiltonian + ?Sized>(
    model: &H,
    coupling: &CouplingParams,
    ut: &ScalarField,
    m0: &ScalarField,
    t_final: f64,
    nt: usize,
    config: &SolverConfig,
    warm: Option<&TimeDependentSolution>,
) -> Result<TimeDependentSolution> {
    config.validate()?;
    coupling.validate_for_solver()?;
    let dt = check_dt(t_final, nt)?;
    if ut.grid() != m0.grid() || model.dim() != ut.grid().dim() {
        return Err(MfgError::validation("terminal data, initial density and model disagree on the grid"));
    }
    ut.ensure_finite("uT")?;
    validate_initial_density(m0)?;
    let mut m = match warm {
        Some(w) if w.nt == nt && w.m0 == *m0 => w.m.clone(),
        _ => heat_flow(m0, dt, nt)?,
    };
    let mut history = Vec::new();
    let mut updates = Vec::new();
    for iter in 1..=config.max_iters {
        let u = solve_hjb_backward(&m, model, coupling, ut, dt)?;
        let m_new = solve_fp_forward(&u, model, m0, dt, config.upwinding)?;
        let update = path_dist(&m_new, &m);
        let record = TimeRecord {
            iter,
            update_norm: update,
            min_m: m.iter().map(ScalarField::min).fold(f64::INFINITY, f64::min),
            max_u: u.iter().map(ScalarField::max).fold(f64::NEG_INFINITY, f64::max),
            lipschitz_norm: lipschitz(&u),
        };
        log::debug!("time picard {iter}: update {update:.3e}");
        history.push(record);
        updates.push(update);
        if update < config.picard_tol {
            return Ok(TimeDependentSolution {
                u,
                m,
                t_final,
                nt,
                ut: ut.clone(),
                m0: m0.clone(),
                eps: coupling.eps,
                iterations: iter,
                history,
            });
        }
        for (cur, new) in m.iter_mut().zip(&m_new) {
            *cur = cur.zip_map(new, |a, b| (1.0 - config.theta) * a + config.theta * b);
        }
        m[0] = m0.clone();
    }
    Err(MfgError::NonConvergence {
        stage: "time picard",
        iterations: config.max_iters,
        last_residual: *updates.last().unwrap_or(&f64::NAN),
        history: updates,
    })
}

/// `v = ln(m + ε)`.
pub fn hopf_cole(m: &ScalarField, eps: f64) -> Result<ScalarField> {
    for (node, &v) in m.values().iter().enumerate() {
        if !(v + eps > 0.0) {
            return Err(MfgError::Singularity { node, value: v + eps });
        }
    }
    Ok(m.map(|v| (v + eps).ln()))
}

/// `m = e^v - ε`.
pub fn hopf_cole_inverse(v: &ScalarField, eps: f64) -> ScalarField {
    v.map(|x| x.exp() - eps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSweep {
    pub stages: Vec<TimeDependentSolution>,
    pub limit: LimitReport,
}

#[allow(clippy::too_many_arguments)]
pub fn epsilon_continuation_time<H: Hamiltonian + ?Sized>(
    model: &H,
    coupling: &CouplingParams,
    schedule: &[f64],
    ut: &ScalarField,
    m0: &ScalarField,
    t_final: f64,
    nt: usize,
    config: &SolverConfig,
) -> Result<TimeSweep> {
    validate_schedule(schedule)?;
    let mut stages: Vec<TimeDependentSolution> = Vec::with_capacity(schedule.len());
    let mut limit = LimitReport::default();
    for &eps in schedule {
        let c = coupling.with_eps(eps);
        let sol = fixed_point_time(model, &c, ut, m0, t_final, nt, config, stages.last())?;
        if let Some(prev) = stages.last() {
            limit.cauchy_u.push(path_dist(&prev.u, &sol.u));
            limit.cauchy_m.push(path_dist(&prev.m, &sol.m));
        }
        limit.eps.push(eps);
        limit.min_density.push(sol.min_m() + eps);
        limit.lipschitz.push(sol.lipschitz_norm());
        limit.iterations.push(sol.iterations);
        log::info!("evolutive eps {eps:.1e}: {} picard iterations", sol.iterations);
        stages.push(sol);
    }
    limit.flag_non_monotone_cauchy();
    if let (Some(&first), Some(&last)) = (limit.lipschitz.first(), limit.lipschitz.last()) {
        if last > 2.0 * first {
            limit.flags.push(format!("Lipschitz trace grew by more than 2x ({first:.4} -> {last:.4})"));
        }
    }
    Ok(TimeSweep { stages, limit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{FieldSpec, FourierTerm, HamiltonianModel, WaveVector};
    use std::f64::consts::PI;

    fn unit_density(g: TorusGrid, f: impl Fn(f64) -> f64) -> ScalarField {
        let raw = ScalarField::from_fn(g, |x| f(x[0]));
        let mass = integrate(&raw);
        raw.map(|v| v / mass)
    }

    #[test]
    fn constant_data_evolves_linearly() {
        let g = TorusGrid::new(1, 16).unwrap();
        let model = HamiltonianModel::standard(1, 1.5).unwrap();
        let zero = vec![ScalarField::zeros(g); 11];
        let u = backward_with_source(&zero, &model, &ScalarField::constant(g, 2.0), 0.1).unwrap();
        for (k, f) in u.iter().enumerate() {
            let expect = 2.0 - (1.0 - k as f64 * 0.1);
            assert!(f.values().iter().all(|v| (v - expect).abs() < 1e-12));
        }
    }

    struct Zero;
    impl Hamiltonian for Zero {
        fn dim(&self) -> usize {
            1
        }
        fn gamma(&self) -> f64 {
            2.0
        }
        fn value(&self, _: &crate::grid::Point, _: &crate::grid::Point) -> f64 {
            0.0
        }
        fn grad_p(&self, _: &crate::grid::Point, _: &crate::grid::Point) -> crate::grid::Point {
            [0.0; 2]
        }
        fn grad_x(&self, _: &crate::grid::Point, _: &crate::grid::Point) -> crate::grid::Point {
            [0.0; 2]
        }
        fn hess_pp(&self, _: &crate::grid::Point, _: &crate::grid::Point) -> crate::hamiltonian::Mat2 {
            [[0.0; 2]; 2]
        }
        fn hess_xp(&self, _: &crate::grid::Point, _: &crate::grid::Point) -> crate::hamiltonian::Mat2 {
            [[0.0; 2]; 2]
        }
    }

    #[test]
    fn heat_reduction() {
        let t = 0.1;
        for n in [32, 64] {
            let g = TorusGrid::new(1, n).unwrap();
            let nt = 4 * n;
            let zero = vec![ScalarField::zeros(g); nt + 1];
            let ut = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
            let u = backward_with_source(&zero, &Zero, &ut, t / nt as f64).unwrap();
            let exact = ut.map(|v| v * (-4.0 * PI * PI * t).exp());
            let err = u[0].sup_dist(&exact);
            assert!(err <= 10.0 * (g.h() * g.h() + t / nt as f64), "n={n}: {err}");
        }
    }

    #[test]
    fn zero_drift_density_relaxes() {
        let g = TorusGrid::new(1, 32).unwrap();
        let model = HamiltonianModel::standard(1, 1.5).unwrap();
        let m0 = unit_density(g, |x| 1.0 + 0.5 * (2.0 * PI * x).cos());
        let u = vec![ScalarField::zeros(g); 21];
        let m = solve_fp_forward(&u, &model, &m0, 0.01, Upwinding::Hybrid).unwrap();
        let one = ScalarField::constant(g, 1.0);
        let mut last = f64::INFINITY;
        for f in &m {
            assert!((integrate(f) - 1.0).abs() < 1e-12);
            assert!(f.min() > 0.0);
            let d = f.sup_dist(&one);
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn decoupled_fixed_point() {
        let g = TorusGrid::new(1, 32).unwrap();
        let model = HamiltonianModel::standard(1, 1.5).unwrap();
        let c = CouplingParams::new(1.0, 0.1).unwrap().with_weight(0.0);
        let m0 = unit_density(g, |x| 1.0 + 0.3 * (2.0 * PI * x).cos());
        let sol = fixed_point_time(&model, &c, &ScalarField::zeros(g), &m0, 1.0, 32, &SolverConfig::default(), None)
            .unwrap();
        assert!(sol.iterations <= 2);
        let heat = heat_flow(&m0, sol.dt(), 32).unwrap();
        for (a, b) in sol.m.iter().zip(&heat) {
            assert!(a.sup_dist(b) < 1e-12);
        }
        for (k, u) in sol.u.iter().enumerate() {
            let expect = -(1.0 - k as f64 * sol.dt());
            assert!(u.values().iter().all(|v| (v - expect).abs() < 1e-12));
        }
    }

    fn singular_model() -> HamiltonianModel {
        HamiltonianModel::new(
            1,
            FieldSpec::Const(1.0),
            FieldSpec::Fourier(vec![
                FourierTerm(WaveVector::Scalar(0.0), 0.5, 0.0),
                FourierTerm(WaveVector::Scalar(1.0), 0.5, 0.0),
            ]),
            1.2,
        )
        .unwrap()
    }

    #[test]
    fn singular_run_structure() {
        let g = TorusGrid::new(1, 32).unwrap();
        let c = CouplingParams::new(1.5, 1e-2).unwrap();
        let m0 = unit_density(g, |x| 1.0 + 0.5 * (2.0 * PI * x).sin());
        let ut = ScalarField::from_fn(g, |x| 0.2 * (2.0 * PI * x[0]).cos());
        let cfg = SolverConfig::default();
        let sol = fixed_point_time(&singular_model(), &c, &ut, &m0, 0.5, 16, &cfg, None).unwrap();
        assert_eq!(sol.u[16], ut);
        assert_eq!(sol.m[0], m0);
        for m in &sol.m {
            assert!((integrate(m) - 1.0).abs() < 1e-10);
            assert!(m.min() > -1e-12);
        }
        assert!(sol.max_u() <= ut.max() + 1e-9);
        // one more sweep barely moves the path
        let u = solve_hjb_backward(&sol.m, &singular_model(), &c, &ut, sol.dt()).unwrap();
        let m = solve_fp_forward(&u, &singular_model(), &m0, sol.dt(), cfg.upwinding).unwrap();
        assert!(path_dist(&m, &sol.m) <= 10.0 * cfg.picard_tol);
    }

    #[test]
    fn hopf_cole_examples() {
        let g = TorusGrid::new(1, 16).unwrap();
        assert_eq!(hopf_cole(&ScalarField::constant(g, 1.0), 0.0).unwrap().sup_norm(), 0.0);
        assert_eq!(hopf_cole(&ScalarField::zeros(g), 1.0).unwrap().sup_norm(), 0.0);
        let m = ScalarField::from_fn(g, |x| 0.1 + (7.0 * x[0]).sin().abs());
        let back = hopf_cole_inverse(&hopf_cole(&m, 0.01).unwrap(), 0.01);
        assert!(back.sup_dist(&m) < 1e-14);
        assert!(matches!(
            hopf_cole(&ScalarField::zeros(g), 0.0),
            Err(MfgError::Singularity { node: 0, .. })
        ));
    }

    #[test]
    fn rejects_bad_initial_density() {
        let g = TorusGrid::new(1, 16).unwrap();
        assert!(validate_initial_density(&ScalarField::constant(g, 2.0)).is_err());
        let mut m = ScalarField::constant(g, 1.0);
        m.values_mut()[0] = 0.0;
        assert!(validate_initial_density(&m).is_err());
    }
}
