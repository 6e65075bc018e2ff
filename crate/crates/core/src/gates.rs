//! Which existence result's hypotheses a configured run satisfies.
//!
//! Stationary result: A1, A2, A3 and `α > ᾱ_{d,γ}` (A5). Evolutive result:
//! A1, A2 and the growth gate A4; `α = 1` is accepted but flagged because the
//! supporting estimate assumes `α ≠ 1`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hamiltonian::{
    alpha_threshold_a5, check_a1, check_a2, check_a3, gamma_gate_a4, A1Report, A2Report, A3Report, Hamiltonian,
    SampleSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub id: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub dim: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub a1: A1Report,
    pub a2: A2Report,
    pub a3: A3Report,
    pub a4: bool,
    /// `ᾱ_{d,γ}`; `None` encodes `+∞`.
    pub alpha_bar: Option<f64>,
    pub a5: bool,
    pub stationary_hypotheses: bool,
    pub time_hypotheses: bool,
    pub flags: Vec<String>,
    pub rows: Vec<GateRow>,
}

pub fn gate_report<H: Hamiltonian + ?Sized>(
    model: &H,
    alpha: f64,
    spec: &SampleSpec,
    deltas: &[f64],
) -> Result<GateReport> {
    let d = model.dim();
    let gamma = model.gamma();
    let a1 = check_a1(model, spec)?;
    let a2 = check_a2(model, spec)?;
    let a3 = check_a3(model, spec, deltas)?;
    let a4 = gamma_gate_a4(gamma, d);
    let bar = alpha_threshold_a5(d, gamma);
    let a5 = alpha > bar;
    let mut flags = Vec::new();
    if (alpha - 1.0).abs() < 1e-12 {
        flags.push("alpha = 1: outside the evolutive estimate hypotheses (alpha != 1)".to_string());
    }
    let box_note = format!("|p| <= {}, {} points", spec.p_max, a1.sample_points);
    let rows = vec![
        GateRow {
            id: "A1".into(),
            pass: a1.pass,
            detail: format!(
                "C1 = {:.4e}, C2 = {:.4e}, min eig D2pp H = {:.3e}; {box_note}",
                a1.constants.c1, a1.constants.c2, a1.min_hessian_eigenvalue
            ),
        },
        GateRow {
            id: "A2".into(),
            pass: a2.pass,
            detail: format!("C1 = {:.4e}, C2 = {:.4e}; {box_note}", a2.constants.c1, a2.constants.c2),
        },
        GateRow {
            id: "A3".into(),
            pass: a3.pass,
            detail: a3
                .rows
                .iter()
                .map(|r| format!("C({}) = {:.3e}", r.delta, r.c_delta))
                .collect::<Vec<_>>()
                .join(", ")
                + &format!("; |M| <= {}, {} points", a3.matrix_max, a3.sample_points),
        },
        GateRow {
            id: "A4".into(),
            pass: a4,
            detail: format!("gamma = {gamma} vs (d+2)/(d+1) = {:.6}", (d as f64 + 2.0) / (d as f64 + 1.0)),
        },
        GateRow {
            id: "A5".into(),
            pass: a5,
            detail: format!("alpha = {alpha} vs alpha_bar = {bar}"),
        },
    ];
    let stationary_hypotheses = a1.pass && a2.pass && a3.pass && a5;
    let time_hypotheses = a1.pass && a2.pass && a4;
    Ok(GateReport {
        dim: d,
        gamma,
        alpha,
        a1,
        a2,
        a3,
        a4,
        alpha_bar: bar.is_finite().then_some(bar),
        a5,
        stationary_hypotheses,
        time_hypotheses,
        flags,
        rows,
    })
}

impl GateReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "assumption gates (d = {}, gamma = {}, alpha = {})", self.dim, self.gamma, self.alpha);
        for r in &self.rows {
            let _ = writeln!(s, "  {:<4} {:<5} {}", r.id, if r.pass { "pass" } else { "FAIL" }, r.detail);
        }
        let verdict = |ok: bool| if ok { "satisfied" } else { "violated" };
        let _ = writeln!(
            s,
            "  stationary result (A1, A2, A3, A5): {}",
            verdict(self.stationary_hypotheses)
        );
        let _ = writeln!(s, "  evolutive result (A1, A2, A4):      {}", verdict(self.time_hypotheses));
        for f in &self.flags {
            let _ = writeln!(s, "  flag: {f}");
        }
        s
    }
}
