//! A priori estimate quantities evaluated on computed solutions.
//!
//! Every entry stores the values and tolerance it was judged with, so its pass
//! flag can be recomputed from the serialized report alone.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::coupling::{g_eps, CouplingParams};
use crate::error::{MfgError, Result};
use crate::grid::{hessian, inner, integrate, ScalarField};
use crate::hamiltonian::Hamiltonian;
use crate::ops::{grad, hamiltonian_values, lagrangian_values};
use crate::stationary::StationarySolution;
use crate::time_solver::{heat_flow, TimeDependentSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// The value is finite.
    Finite,
    /// `value ≤ bound + tolerance`.
    AtMost,
    /// `value ≥ bound - tolerance`.
    AtLeast,
    /// `|value - bound| ≤ tolerance`.
    Equal,
    /// Hypotheses not met; recorded and reported as passing.
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateEntry {
    pub id: String,
    pub value: f64,
    pub bound: Option<f64>,
    pub tolerance: f64,
    pub check: Check,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl EstimateEntry {
    fn new(id: &str, value: f64, bound: Option<f64>, tolerance: f64, check: Check) -> Self {
        let mut e = EstimateEntry {
            id: id.to_string(),
            value,
            bound,
            tolerance,
            check,
            pass: false,
            note: None,
        };
        e.pass = e.recompute_pass();
        e
    }

    pub fn finite(id: &str, value: f64) -> Self {
        Self::new(id, value, None, 0.0, Check::Finite)
    }

    pub fn at_most(id: &str, value: f64, bound: f64, tolerance: f64) -> Self {
        Self::new(id, value, Some(bound), tolerance, Check::AtMost)
    }

    pub fn at_least(id: &str, value: f64, bound: f64, tolerance: f64) -> Self {
        Self::new(id, value, Some(bound), tolerance, Check::AtLeast)
    }

    pub fn equal(id: &str, value: f64, target: f64, tolerance: f64) -> Self {
        Self::new(id, value, Some(target), tolerance, Check::Equal)
    }

    pub fn not_applicable(id: &str, reason: &str) -> Self {
        Self::new(id, f64::NAN, None, 0.0, Check::NotApplicable).with_note(reason)
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn recompute_pass(&self) -> bool {
        let b = self.bound.unwrap_or(f64::NAN);
        match self.check {
            Check::Finite => self.value.is_finite(),
            Check::AtMost => self.value <= b + self.tolerance,
            Check::AtLeast => self.value >= b - self.tolerance,
            Check::Equal => (self.value - b).abs() <= self.tolerance,
            Check::NotApplicable => true,
        }
    }
}

/// Trace of a quantity along an ε-schedule, judged by the factor-2 rule
/// between the two smallest ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub id: String,
    pub eps: Vec<f64>,
    pub trace: Vec<f64>,
    pub pass: bool,
}

/// `max(|a|, |b|) ≤ 2 min(|a|, |b|) + 1e-12` for the last two entries.
pub fn factor_two_rule(trace: &[f64]) -> bool {
    match trace {
        [.., a, b] => {
            let (a, b) = (a.abs(), b.abs());
            a.is_finite() && b.is_finite() && a.max(b) <= 2.0 * a.min(b) + 1e-12
        }
        [a] => a.is_finite(),
        [] => false,
    }
}

impl ScheduleEntry {
    pub fn new(id: &str, eps: &[f64], trace: Vec<f64>) -> Self {
        let pass = factor_two_rule(&trace);
        ScheduleEntry {
            id: id.to_string(),
            eps: eps.to_vec(),
            trace,
            pass,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub entries: Vec<EstimateEntry>,
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
}

impl EstimateReport {
    pub fn push(&mut self, e: EstimateEntry) {
        self.entries.push(e);
    }

    pub fn extend(&mut self, es: impl IntoIterator<Item = EstimateEntry>) {
        self.entries.extend(es);
    }

    pub fn get(&self, id: &str) -> Option<&EstimateEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass) && self.schedule.iter().all(|s| s.pass)
    }

    /// Pass flags reproduce from the stored values.
    pub fn is_consistent(&self) -> bool {
        self.entries.iter().all(|e| e.pass == e.recompute_pass())
            && self.schedule.iter().all(|s| s.pass == factor_two_rule(&s.trace))
    }

    pub fn to_text(&self) -> String {
        let fmt = |v: f64| if v.is_nan() { "-".to_string() } else { format!("{v:.6e}") };
        let w = self.entries.iter().map(|e| e.id.len()).chain([5]).max().unwrap_or(5);
        let mut out = String::new();
        if !self.entries.is_empty() {
            let _ = writeln!(out, "{:<w$}  {:>14}  {:>14}  {:>10}  {:<14}  result", "entry", "value", "bound", "tol", "check");
        }
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<w$}  {:>14}  {:>14}  {:>10}  {:<14}  {}{}",
                e.id,
                fmt(e.value),
                e.bound.map_or("-".into(), fmt),
                if e.tolerance == 0.0 { "-".into() } else { format!("{:.2e}", e.tolerance) },
                format!("{:?}", e.check).to_lowercase(),
                if e.pass { "pass" } else { "FAIL" },
                e.note.as_ref().map_or(String::new(), |n| format!("  ({n})")),
            );
        }
        if !self.schedule.is_empty() {
            let ws = self.schedule.iter().map(|s| s.id.len()).chain([5]).max().unwrap_or(5);
            if !out.is_empty() {
                let _ = writeln!(out);
            }
            let _ = writeln!(out, "{:<ws$}  trace over eps (factor-2 rule on the two smallest)", "trace");
            for s in &self.schedule {
                let t: Vec<String> = s.trace.iter().map(|v| format!("{v:.4e}")).collect();
                let _ = writeln!(out, "{:<ws$}  [{}]  {}", s.id, t.join(", "), if s.pass { "pass" } else { "FAIL" });
            }
        }
        out
    }
}

/// Short decimal form of an exponent for entry ids (`1.0000000000000002` → `1`).
pub fn label(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

/// Sobolev conjugate `2* = 2d/(d-2)`; infinite for `d ≤ 2`.
pub fn sobolev_conjugate(d: usize) -> f64 {
    if d <= 2 {
        f64::INFINITY
    } else {
        2.0 * d as f64 / (d as f64 - 2.0)
    }
}

/// Exponent `α(2-γ)/γ` of the improved inverse-density integrability.
pub fn inverse_density_exponent(alpha: f64, gamma: f64) -> f64 {
    alpha * (2.0 - gamma) / gamma
}

pub const IDENTITY_TOL: f64 = 1e-8;
pub const MAX_PRINCIPLE_TOL: f64 = 1e-9;

fn shifted_power(m: &ScalarField, eps: f64, p: f64) -> Result<ScalarField> {
    for (node, &v) in m.values().iter().enumerate() {
        if !(v + eps > 0.0) {
            return Err(MfgError::Singularity { node, value: v + eps });
        }
    }
    Ok(m.map(|v| (v + eps).powf(p)))
}

/// `(‖f‖_{L^p})` for `p ≥ 1` (`∞` allowed).
fn lp_norm(f: &ScalarField, p: f64) -> f64 {
    if p.is_infinite() {
        f.sup_norm()
    } else {
        integrate(&f.map(|v| v.abs().powf(p))).powf(1.0 / p)
    }
}

pub(crate) fn grad_sq(f: &ScalarField) -> ScalarField {
    grad(f).norms().map(|v| v * v)
}

// ---------------------------------------------------------------------------
// Stationary
// ---------------------------------------------------------------------------

/// Q1 = ∫(m+ε)^{-α}, Q2 = ∫H(x,Du), Q3 = ∫H(x,Du) m, Q4 = |H̄|, and the
/// integrated HJB identity `Q2 = H̄ - w Q1`.
pub fn stationary_first_order<H: Hamiltonian + ?Sized>(
    sol: &StationarySolution,
    model: &H,
    coupling: &CouplingParams,
) -> Result<Vec<EstimateEntry>> {
    let q1 = integrate(&shifted_power(&sol.m, coupling.eps, -coupling.alpha)?);
    let h = hamiltonian_values(model, &grad(&sol.u));
    let q2 = integrate(&h);
    let q3 = inner(&h, &sol.m);
    let q4 = sol.hbar.abs();
    Ok(vec![
        EstimateEntry::finite("Q1", q1),
        EstimateEntry::finite("Q2", q2),
        EstimateEntry::finite("Q3", q3),
        EstimateEntry::finite("Q4", q4),
        EstimateEntry::equal("integrated_hjb", q2, sol.hbar - coupling.weight * q1, IDENTITY_TOL),
    ])
}

fn trace_pp_hess_sq<H: Hamiltonian + ?Sized>(model: &H, u: &ScalarField) -> ScalarField {
    let grid = *u.grid();
    let d = grid.dim();
    let p = grad(u);
    let hs = hessian(u);
    ScalarField::from_indices(grid, |i| {
        let a = model.hess_pp(&grid.coords(i), &p.at(i));
        let mut hm = [[0.0; 2]; 2];
        for r in 0..d {
            for c in 0..d {
                hm[r][c] = 0.5 * (hs[r][c][i] + hs[c][r][i]);
            }
        }
        let mut t = 0.0;
        for r in 0..d {
            for c in 0..d {
                let sq: f64 = (0..d).map(|k| hm[c][k] * hm[k][r]).sum();
                t += a[r][c] * sq;
            }
        }
        t
    })
}

/// S1 = ∫|Dm|²/(m+ε)^{α+1}, S2 = ∫Tr(D²_pp H (D²u)²) m.
pub fn stationary_second_order<H: Hamiltonian + ?Sized>(
    sol: &StationarySolution,
    model: &H,
    coupling: &CouplingParams,
) -> Result<Vec<EstimateEntry>> {
    let w = shifted_power(&sol.m, coupling.eps, -coupling.alpha - 1.0)?;
    let s1 = inner(&grad_sq(&sol.m), &w);
    let s2 = inner(&trace_pp_hess_sq(model, &sol.u), &sol.m);
    Ok(vec![EstimateEntry::finite("S1", s1), EstimateEntry::finite("S2", s2)])
}

/// η = min(m+ε) and `∫(m+ε)^{-p}` for the given exponents, each checked
/// against the pointwise bound `η^{-p}`.
pub fn min_density_monitor(m: &ScalarField, eps: f64, p_list: &[f64]) -> Result<Vec<EstimateEntry>> {
    let eta = m.min() + eps;
    let mut out = vec![EstimateEntry::at_least("eta", eta, 0.0, 0.0)];
    for &p in p_list {
        let v = integrate(&shifted_power(m, eps, -p)?);
        let bound = eta.powf(-p);
        out.push(EstimateEntry::at_most(&format!("inv_density_int[p={}]", label(p)), v, bound, 1e-12 * bound));
    }
    Ok(out)
}

/// Default exponent list: `α`, plus `(α-1)d/(d-2)` when `d ≥ 3`.
pub fn min_density_exponents(alpha: f64, d: usize) -> Vec<f64> {
    let mut ps = vec![alpha];
    if d >= 3 {
        ps.push((alpha - 1.0) * d as f64 / (d as f64 - 2.0));
    }
    ps
}

// ---------------------------------------------------------------------------
// Evolutive
// ---------------------------------------------------------------------------

fn tolerance(sol: &TimeDependentSolution) -> f64 {
    let h = sol.grid().h();
    10.0 * (h * h + sol.dt())
}

/// Right-endpoint space-time quadrature `Σ_{k=1}^{nt} dt ∫ f^k`.
fn space_time<F: Fn(usize) -> Result<f64>>(nt: usize, dt: f64, f: F) -> Result<f64> {
    let mut acc = 0.0;
    for k in 1..=nt {
        acc += dt * f(k)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatComparison {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    /// `max_s |∫ζ(s) - ∫ζ_0|`.
    pub mass_drift: f64,
}

/// Evolves `ζ` by the discrete heat flow from `ζ(·, t_k) = zeta0` and compares
/// `∫u(t_k) ζ_0` with `-∫∫ ζ w(m+ε)^{-α} + ∫u_T ζ(T)`.
pub fn heat_comparison(
    sol: &TimeDependentSolution,
    coupling: &CouplingParams,
    zeta0: &ScalarField,
    start: usize,
) -> Result<(HeatComparison, EstimateEntry)> {
    if zeta0.grid() != sol.grid() {
        return Err(MfgError::validation("zeta0 lives on a different grid"));
    }
    if start >= sol.nt {
        return Err(MfgError::validation("heat comparison start index must precede the horizon"));
    }
    if zeta0.min() < 0.0 || (integrate(zeta0) - 1.0).abs() > 1e-10 {
        return Err(MfgError::validation("zeta0 must be nonnegative with unit mass"));
    }
    let dt = sol.dt();
    let zeta = heat_flow(zeta0, dt, sol.nt - start)?;
    let m0 = integrate(zeta0);
    let mass_drift = zeta.iter().map(|z| (integrate(z) - m0).abs()).fold(0.0, f64::max);
    let lhs = inner(&sol.u[start], zeta0);
    let mut rhs = inner(&sol.ut, zeta.last().expect("non-empty"));
    for k in start..sol.nt {
        let g = g_eps(&sol.m[k], coupling)?;
        rhs += dt * inner(&g, &zeta[k + 1 - start]);
    }
    let hc = HeatComparison {
        lhs,
        rhs,
        slack: rhs - lhs,
        mass_drift,
    };
    let entry = EstimateEntry::at_most("heat_comparison", lhs, rhs, tolerance(sol));
    Ok((hc, entry))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeFirstOrder {
    pub t1: f64,
    pub t2: Option<f64>,
    pub t3: f64,
    pub t4: f64,
    pub osc_ut: f64,
}

/// T1 = ∫∫H m, T2 = ∫∫(m+ε)^{1-α}/(α-1) (skipped at α = 1), T3 = ∫∫(m+ε)^{-α},
/// T4 = ∫∫H.
pub fn time_first_order<H: Hamiltonian + ?Sized>(
    sol: &TimeDependentSolution,
    model: &H,
    coupling: &CouplingParams,
) -> Result<(TimeFirstOrder, Vec<EstimateEntry>)> {
    let dt = sol.dt();
    let hs: Vec<ScalarField> = sol.u.iter().map(|u| hamiltonian_values(model, &grad(u))).collect();
    let t1 = space_time(sol.nt, dt, |k| Ok(inner(&hs[k], &sol.m[k])))?;
    let t4 = space_time(sol.nt, dt, |k| Ok(integrate(&hs[k])))?;
    let t3 = space_time(sol.nt, dt, |k| Ok(integrate(&shifted_power(&sol.m[k], coupling.eps, -coupling.alpha)?)))?;
    let alpha = coupling.alpha;
    let t2 = if alpha == 1.0 {
        None
    } else {
        Some(space_time(sol.nt, dt, |k| {
            Ok(integrate(&shifted_power(&sol.m[k], coupling.eps, 1.0 - alpha)?) / (alpha - 1.0))
        })?)
    };
    let vals = TimeFirstOrder {
        t1,
        t2,
        t3,
        t4,
        osc_ut: sol.ut.osc(),
    };
    let mut entries = vec![EstimateEntry::finite("T1", t1)];
    entries.push(match t2 {
        Some(v) => EstimateEntry::finite("T2", v),
        None => EstimateEntry::not_applicable("T2", "alpha = 1, outside estimate hypotheses"),
    });
    entries.push(EstimateEntry::finite("T3", t3));
    entries.push(EstimateEntry::finite("T4", t4));
    entries.push(EstimateEntry::finite("osc_uT", vals.osc_ut));
    Ok((vals, entries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseDensityNorms {
    /// `(p, sup_t ‖1/(m+ε)‖_{L^p})`.
    pub norms: Vec<(f64, f64)>,
    pub beta: f64,
    /// `∫∫|D(m+ε)^{-β/2}|²`.
    pub dissipation: f64,
}

/// `sup_t ‖1/(m+ε)‖_{L^p}` for `p_list ∪ {β}`, `β = α(2-γ)/γ`, and the
/// dissipation `∫∫|D(m+ε)^{-β/2}|²`.
pub fn inverse_density_norms(
    sol: &TimeDependentSolution,
    coupling: &CouplingParams,
    gamma: f64,
    p_list: &[f64],
) -> Result<(InverseDensityNorms, Vec<EstimateEntry>)> {
    let beta = inverse_density_exponent(coupling.alpha, gamma);
    let mut ps: Vec<f64> = vec![beta];
    ps.extend(p_list.iter().copied().filter(|p| *p != beta));
    let inv: Vec<ScalarField> = sol
        .m
        .iter()
        .map(|m| shifted_power(m, coupling.eps, -1.0))
        .collect::<Result<_>>()?;
    let norms: Vec<(f64, f64)> = ps
        .iter()
        .map(|&p| (p, inv.iter().map(|f| lp_norm(f, p)).fold(0.0, f64::max)))
        .collect();
    let dissipation = space_time(sol.nt, sol.dt(), |k| {
        Ok(integrate(&grad_sq(&shifted_power(&sol.m[k], coupling.eps, -beta / 2.0)?)))
    })?;
    let mut entries: Vec<EstimateEntry> = norms
        .iter()
        .map(|(p, v)| EstimateEntry::finite(&format!("inv_density_norm[p={}]", label(*p)), *v))
        .collect();
    entries.push(EstimateEntry::finite("inv_density_dissipation", dissipation));
    Ok((InverseDensityNorms { norms, beta, dissipation }, entries))
}

pub fn max_principle_check(sol: &TimeDependentSolution) -> EstimateEntry {
    EstimateEntry::at_most("max_principle", sol.max_u(), sol.ut.max(), MAX_PRINCIPLE_TOL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Duality {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub lipschitz: f64,
}

/// `‖Du‖_∞` and both sides of `∫um|_0^T = ∫∫[(H - D_pH·Du) m + m (m+ε)^{-α}]`.
pub fn lipschitz_and_duality<H: Hamiltonian + ?Sized>(
    sol: &TimeDependentSolution,
    model: &H,
    coupling: &CouplingParams,
) -> Result<(Duality, Vec<EstimateEntry>)> {
    let nt = sol.nt;
    let lhs = inner(&sol.u[nt], &sol.m[nt]) - inner(&sol.u[0], &sol.m[0]);
    let rhs = space_time(nt, sol.dt(), |k| {
        let p = grad(&sol.u[k]);
        let minus_l = lagrangian_values(model, &p).map(|v| -v);
        let g = g_eps(&sol.m[k], coupling)?;
        Ok(inner(&minus_l.zip_map(&g, |a, b| a - b), &sol.m[k]))
    })?;
    let gap = (lhs - rhs).abs();
    let lip = sol.lipschitz_norm();
    let d = Duality {
        lhs,
        rhs,
        gap,
        lipschitz: lip,
    };
    let entries = vec![
        EstimateEntry::finite("lipschitz", lip),
        EstimateEntry::at_most("duality_gap", gap, 0.0, tolerance(sol)),
    ];
    Ok((d, entries))
}

/// All single-solution entries of an evolutive run.
pub fn time_report<H: Hamiltonian + ?Sized>(
    sol: &TimeDependentSolution,
    model: &H,
    coupling: &CouplingParams,
    p_list: &[f64],
) -> Result<EstimateReport> {
    let mut rep = EstimateReport::default();
    rep.push(max_principle_check(sol));
    rep.extend(lipschitz_and_duality(sol, model, coupling)?.1);
    let one = ScalarField::constant(*sol.grid(), 1.0);
    let (hc1, e1) = heat_comparison(sol, coupling, &one, 0)?;
    rep.push(rename(e1, "heat_comparison[zeta0=1]").with_note(format!("slack {:.3e}", hc1.slack)));
    let (hc2, e2) = heat_comparison(sol, coupling, &sol.m0, 0)?;
    rep.push(rename(e2, "heat_comparison[zeta0=m0]").with_note(format!("slack {:.3e}", hc2.slack)));
    rep.extend(time_first_order(sol, model, coupling)?.1);
    rep.extend(inverse_density_norms(sol, coupling, model.gamma(), p_list)?.1);
    for (k, m) in sol.m.iter().enumerate() {
        let mass = integrate(m);
        if (mass - 1.0).abs() > 1e-10 || m.min() < -1e-12 {
            rep.push(EstimateEntry::at_least("density_structure", m.min(), -1e-12, 0.0).with_note(format!(
                "time index {k}, mass {mass:.15}"
            )));
        }
    }
    rep.extend(min_density_monitor(
        sol.m.iter().min_by(|a, b| a.min().total_cmp(&b.min())).expect("non-empty"),
        coupling.eps,
        &min_density_exponents(coupling.alpha, sol.grid().dim()),
    )?);
    Ok(rep)
}

pub fn stationary_report<H: Hamiltonian + ?Sized>(
    sol: &StationarySolution,
    model: &H,
    coupling: &CouplingParams,
) -> Result<EstimateReport> {
    let mut rep = EstimateReport::default();
    rep.extend(stationary_first_order(sol, model, coupling)?);
    rep.extend(stationary_second_order(sol, model, coupling)?);
    rep.extend(min_density_monitor(
        &sol.m,
        coupling.eps,
        &min_density_exponents(coupling.alpha, sol.grid().dim()),
    )?);
    rep.push(EstimateEntry::at_least("mass", integrate(&sol.m), 1.0, 1e-10));
    rep.push(EstimateEntry::equal("gauge", integrate(&sol.u), 0.0, 1e-10));
    Ok(rep)
}

fn rename(mut e: EstimateEntry, id: &str) -> EstimateEntry {
    e.id = id.to_string();
    e
}

/// Schedule traces of Q1–Q4, S1–S2 and η over a stationary sweep.
pub fn stationary_schedule<H: Hamiltonian + ?Sized>(
    stages: &[StationarySolution],
    model: &H,
    coupling: &CouplingParams,
) -> Result<Vec<ScheduleEntry>> {
    let eps: Vec<f64> = stages.iter().map(|s| s.eps).collect();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); 7];
    for s in stages {
        let c = coupling.with_eps(s.eps);
        let first = stationary_first_order(s, model, &c)?;
        let second = stationary_second_order(s, model, &c)?;
        for (i, e) in first.iter().take(4).chain(second.iter()).enumerate() {
            rows[i].push(e.value);
        }
        rows[6].push(s.m.min() + s.eps);
    }
    let ids = ["Q1", "Q2", "Q3", "Q4", "S1", "S2", "eta"];
    Ok(ids.iter().zip(rows).map(|(id, t)| ScheduleEntry::new(id, &eps, t)).collect())
}

/// Schedule traces of T1–T4, `min(m+ε)`, `sup_t ‖1/(m+ε)‖_{L^β}` and
/// `‖Du‖_∞`, plus the fitted constant of the first-order bound proxy.
pub fn time_schedule<H: Hamiltonian + ?Sized>(
    stages: &[TimeDependentSolution],
    model: &H,
    coupling: &CouplingParams,
) -> Result<(Vec<ScheduleEntry>, EstimateEntry)> {
    let eps: Vec<f64> = stages.iter().map(|s| s.eps).collect();
    let mut t: Vec<Vec<f64>> = vec![Vec::new(); 7];
    let mut fitted_c = 0.0f64;
    let mut has_t2 = true;
    for s in stages {
        let c = coupling.with_eps(s.eps);
        let (fo, _) = time_first_order(s, model, &c)?;
        t[0].push(fo.t1);
        match fo.t2 {
            Some(v) => t[1].push(v),
            None => has_t2 = false,
        }
        t[2].push(fo.t3);
        t[3].push(fo.t4);
        t[4].push(s.min_m() + s.eps);
        let (norms, _) = inverse_density_norms(s, &c, model.gamma(), &[])?;
        t[5].push(norms.norms[0].1);
        t[6].push(s.lipschitz_norm());
        let lhs = fo.t1 + fo.t2.unwrap_or(0.0);
        fitted_c = fitted_c.max(lhs / (s.t_final + fo.osc_ut));
    }
    let ids = ["T1", "T2", "T3", "T4", "min_density", "inv_density_norm_beta", "lipschitz"];
    let rows = ids
        .iter()
        .zip(t)
        .filter(|(id, _)| has_t2 || **id != "T2")
        .map(|(id, tr)| ScheduleEntry::new(id, &eps, tr))
        .collect();
    let proxy = EstimateEntry::finite("first_order_constant", fitted_c)
        .with_note("fitted: smallest C with T1 + T2 <= C (T + osc uT) over the schedule");
    Ok((rows, proxy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::hamiltonian::{HamiltonianModel, Mat2};
    use crate::grid::Point;
    use crate::stationary::{solve_stationary_eps, SolverConfig};
    use crate::time_solver::fixed_point_time;

    fn const_stationary(g: TorusGrid, eps: f64) -> StationarySolution {
        StationarySolution {
            u: ScalarField::zeros(g),
            m: ScalarField::constant(g, 1.0),
            hbar: 1.0 + (1.0 + eps).powf(-1.0),
            eps,
            hjb_res: 0.0,
            fp_res: 0.0,
            iterations: 1,
            history: vec![],
        }
    }

    #[test]
    fn constant_stationary_quantities() {
        let g = TorusGrid::new(1, 16).unwrap();
        let model = HamiltonianModel::standard(1, 1.5).unwrap();
        let c = CouplingParams::new(1.0, 1.0).unwrap();
        let sol = const_stationary(g, 1.0);
        let e = stationary_first_order(&sol, &model, &c).unwrap();
        assert!((e[0].value - 0.5).abs() < 1e-15);
        assert!((e[1].value - 1.0).abs() < 1e-15);
        assert!(e[4].pass);
        let s = stationary_second_order(&sol, &model, &c).unwrap();
        assert_eq!(s[0].value, 0.0);
        assert_eq!(s[1].value, 0.0);
    }

    #[test]
    fn min_density_examples() {
        let g = TorusGrid::new(1, 16).unwrap();
        let e = min_density_monitor(&ScalarField::constant(g, 1.0), 0.0, &[1.5]).unwrap();
        assert_eq!(e[0].value, 1.0);
        let m = ScalarField::from_fn(g, |x| 0.2 + x[0]);
        let e = min_density_monitor(&m, 0.01, &[0.5, 2.0, 4.0]).unwrap();
        assert!(e.iter().all(|x| x.pass));
        assert_eq!(min_density_exponents(2.0, 2), vec![2.0]);
        assert_eq!(min_density_exponents(2.0, 4), vec![2.0, 2.0]);
    }

    #[test]
    fn factor_two() {
        assert!(factor_two_rule(&[5.0, 1.0, 1.9]));
        assert!(!factor_two_rule(&[1.0, 2.1]));
        assert!(factor_two_rule(&[0.0, 0.0]));
        assert!(!factor_two_rule(&[1.0, f64::NAN]));
    }

    #[test]
    fn entries_recompute() {
        let e = EstimateEntry::at_most("x", 1.0, 0.5, 0.6);
        assert!(e.pass && e.recompute_pass());
        let json = serde_json::to_string(&e).unwrap();
        let back: EstimateEntry = serde_json::from_str(&json).unwrap();
        assert_eq!(back.pass, back.recompute_pass());
        let mut rep = EstimateReport::default();
        rep.push(e);
        rep.push(EstimateEntry::not_applicable("T2", "alpha = 1"));
        assert!(rep.is_consistent());
        assert!(rep.to_text().contains("notapplicable"));
    }

    #[test]
    fn beta_wiring() {
        assert!((inverse_density_exponent(1.0, 4.0 / 3.0) - 0.5).abs() < 1e-15);
        assert!(sobolev_conjugate(2).is_infinite());
        assert_eq!(sobolev_conjugate(4), 4.0);
    }

    fn decoupled(g: TorusGrid) -> (TimeDependentSolution, HamiltonianModel, CouplingParams) {
        let model = HamiltonianModel::standard(1, 1.5).unwrap();
        let c = CouplingParams::new(1.0, 0.5).unwrap().with_weight(0.0);
        let one = ScalarField::constant(g, 1.0);
        let sol = fixed_point_time(&model, &c, &ScalarField::zeros(g), &one, 1.0, 20, &SolverConfig::default(), None)
            .unwrap();
        (sol, model, c)
    }

    #[test]
    fn decoupled_time_entries() {
        let g = TorusGrid::new(1, 16).unwrap();
        let (sol, model, c) = decoupled(g);
        // heat comparison: LHS = -cT with c = H(x,0) = 1, RHS = 0
        let one = ScalarField::constant(g, 1.0);
        let (hc, e) = heat_comparison(&sol, &c, &one, 0).unwrap();
        assert!((hc.lhs + 1.0).abs() < 1e-12);
        assert!(hc.rhs.abs() < 1e-15);
        assert!(e.pass);
        assert!(hc.mass_drift < 1e-12);
        // T1 closed form
        let (fo, _) = time_first_order(&sol, &model, &c).unwrap();
        assert!((fo.t1 - 1.0).abs() < 1e-10);
        assert_eq!(fo.osc_ut, 0.0);
        // duality: both sides equal +T·H(x,0)
        let (d, es) = lipschitz_and_duality(&sol, &model, &c).unwrap();
        assert!((d.lhs - 1.0).abs() < 1e-10 && (d.rhs - 1.0).abs() < 1e-10);
        assert!(d.gap <= 1e-10);
        assert!(es[1].pass);
        // max principle: max u = 0 at T, interior negative
        assert!(max_principle_check(&sol).pass);
        assert!(sol.u[5].max() < 0.0);
        // inverse density norms of m ≡ 1 with ε = 0.5 are 1/1.5
        let (n, _) = inverse_density_norms(&sol, &c.with_eps(1e-300), 1.5, &[1.0, 2.0]).unwrap();
        assert!(n.norms.iter().all(|(_, v)| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn norms_nondecreasing_in_p() {
        let g = TorusGrid::new(1, 32).unwrap();
        let (mut sol, _, c) = decoupled(g);
        for m in sol.m.iter_mut() {
            *m = ScalarField::from_fn(g, |x| 1.0 + 0.9 * (std::f64::consts::TAU * x[0]).sin());
        }
        let (n, _) = inverse_density_norms(&sol, &c, 1.5, &[1.0, 2.0, 3.0, 6.0]).unwrap();
        let mut v: Vec<_> = n.norms.clone();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(v.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12));
    }

    /// `-H` of the standard family: violates `H ≥ 0` so the maximum
    /// principle check must fail.
    struct Negated(HamiltonianModel);
    impl Hamiltonian for Negated {
        fn dim(&self) -> usize {
            1
        }
        fn gamma(&self) -> f64 {
            self.0.gamma()
        }
        fn value(&self, x: &Point, p: &Point) -> f64 {
            -self.0.value(x, p)
        }
        fn grad_p(&self, x: &Point, p: &Point) -> Point {
            let g = self.0.grad_p(x, p);
            [-g[0], -g[1]]
        }
        fn grad_x(&self, x: &Point, p: &Point) -> Point {
            let g = self.0.grad_x(x, p);
            [-g[0], -g[1]]
        }
        fn hess_pp(&self, x: &Point, p: &Point) -> Mat2 {
            self.0.hess_pp(x, p)
        }
        fn hess_xp(&self, x: &Point, p: &Point) -> Mat2 {
            self.0.hess_xp(x, p)
        }
    }

    #[test]
    fn negated_hamiltonian_fails_max_principle() {
        let g = TorusGrid::new(1, 16).unwrap();
        let model = Negated(HamiltonianModel::standard(1, 1.5).unwrap());
        let c = CouplingParams::new(1.0, 0.5).unwrap().with_weight(0.0);
        let one = ScalarField::constant(g, 1.0);
        let sol = fixed_point_time(&model, &c, &ScalarField::zeros(g), &one, 1.0, 20, &SolverConfig::default(), None)
            .unwrap();
        assert!(!max_principle_check(&sol).pass);
    }

    #[test]
    fn stationary_report_is_consistent() {
        let g = TorusGrid::new(1, 32).unwrap();
        let model = HamiltonianModel::standard(1, 1.5).unwrap();
        let c = CouplingParams::new(1.5, 0.1).unwrap();
        let sol = solve_stationary_eps(&model, &c, g, &SolverConfig::default(), None).unwrap();
        let rep = stationary_report(&sol, &model, &c).unwrap();
        assert!(rep.all_pass(), "{}", rep.to_text());
        assert!(rep.is_consistent());
    }
}
