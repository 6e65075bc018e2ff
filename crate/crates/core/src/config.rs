//! Run configuration. JSON, versioned, unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coupling::CouplingParams;
use crate::error::{MfgError, Result};
use crate::grid::{integrate, Point, ScalarField, TorusGrid};
use crate::hamiltonian::{FieldSpec, HamiltonianModel, SampleSpec};
use crate::mc::McConfig;
use crate::stationary::{validate_schedule, SolverConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Stationary,
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub gamma: f64,
    #[serde(default = "unit_field")]
    pub a: FieldSpec,
    #[serde(rename = "V", default = "zero_field")]
    pub potential: FieldSpec,
}

fn unit_field() -> FieldSpec {
    FieldSpec::Const(1.0)
}

fn zero_field() -> FieldSpec {
    FieldSpec::Const(0.0)
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub alpha: f64,
    /// Strictly decreasing; single solves use the last entry.
    pub eps_schedule: Vec<f64>,
    #[serde(default = "one")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default = "zero_field")]
    pub terminal: FieldSpec,
    /// Normalized to unit mass after sampling.
    #[serde(default = "unit_field")]
    pub initial_density: FieldSpec,
    #[serde(default = "one")]
    pub t_final: f64,
    /// Defaults to `ceil(T n)`.
    #[serde(default)]
    pub nt: Option<usize>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            terminal: zero_field(),
            initial_density: unit_field(),
            t_final: 1.0,
            nt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerificationSpec {
    /// Exponents for the inverse-density monitors; empty means the defaults
    /// derived from `α`, `d`, `γ`.
    pub p_list: Vec<f64>,
    pub a3_deltas: Vec<f64>,
    /// Constant in the representation tolerance `C(h² + dt + w²)`.
    pub representation_c: f64,
    /// Restart the stationary solve from a perturbed density and report the
    /// distance between the two results.
    pub multistart: bool,
}

impl Default for VerificationSpec {
    fn default() -> Self {
        Self {
            p_list: Vec::new(),
            a3_deltas: vec![0.1, 0.5, 0.9],
            representation_c: 10.0,
            multistart: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSpec {
    pub x0: Point,
    pub tau: f64,
    /// `None` means `4h`.
    pub moll_width: Option<f64>,
    pub nu: Vec<f64>,
    pub q: Vec<f64>,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            x0: [0.5, 0.5],
            tau: 0.0,
            moll_width: None,
            nu: vec![0.25, 0.5, 0.75],
            q: vec![1.5, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub problem: ProblemKind,
    pub grid: GridSpec,
    pub model: ModelSpec,
    pub coupling: CouplingSpec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub samples: SampleSpec,
    #[serde(default)]
    pub verification: VerificationSpec,
    #[serde(default)]
    pub probe: ProbeSpec,
    #[serde(default)]
    pub simulate: McConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg.resolved())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable")
    }

    /// Fills every optional value so the emitted file is self-contained.
    pub fn resolved(mut self) -> Self {
        let h = 1.0 / self.grid.n as f64;
        if self.data.nt.is_none() {
            self.data.nt = Some((self.data.t_final * self.grid.n as f64).ceil() as usize);
        }
        if self.probe.moll_width.is_none() {
            self.probe.moll_width = Some(4.0 * h);
        }
        if self.simulate.bandwidth.is_none() {
            self.simulate.bandwidth = Some(2.0 * h);
        }
        if self.verification.p_list.is_empty() {
            self.verification.p_list = crate::estimates::min_density_exponents(self.coupling.alpha, self.grid.dim);
        }
        if self.grid.dim == 1 {
            self.probe.x0[1] = 0.0;
            for x in self.simulate.x0.iter_mut() {
                x[1] = 0.0;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(MfgError::validation(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.grid()?;
        self.model()?;
        validate_schedule(&self.coupling.eps_schedule)?;
        for &eps in &self.coupling.eps_schedule {
            self.coupling_at(eps)?.validate_for_solver()?;
        }
        self.solver.validate()?;
        self.simulate.validate()?;
        if !(self.data.t_final > 0.0 && self.data.t_final.is_finite()) {
            return Err(MfgError::validation("t_final must be positive"));
        }
        if self.data.nt == Some(0) {
            return Err(MfgError::validation("nt must be positive"));
        }
        self.data.terminal.validate("terminal")?;
        self.data.initial_density.validate("initial_density")?;
        if self.problem == ProblemKind::Time {
            self.initial_density()?;
        }
        if !(self.verification.representation_c > 0.0) {
            return Err(MfgError::validation("representation_c must be positive"));
        }
        if self.verification.p_list.iter().any(|&p| !(p > 0.0)) {
            return Err(MfgError::validation("p_list entries must be positive"));
        }
        if !(0.0..self.data.t_final).contains(&self.probe.tau) {
            return Err(MfgError::validation("probe tau must lie in [0, T)"));
        }
        if !(0.0..=self.data.t_final).contains(&self.simulate.t) {
            return Err(MfgError::validation("simulate t must lie in [0, T]"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.grid.dim, self.grid.n)
    }

    pub fn model(&self) -> Result<HamiltonianModel> {
        HamiltonianModel::new(
            self.grid.dim,
            self.model.a.clone(),
            self.model.potential.clone(),
            self.model.gamma,
        )
    }

    pub fn coupling_at(&self, eps: f64) -> Result<CouplingParams> {
        Ok(CouplingParams::new(self.coupling.alpha, eps)?.with_weight(self.coupling.weight))
    }

    /// Coupling at the last (smallest) ε of the schedule.
    pub fn coupling(&self) -> Result<CouplingParams> {
        let eps = *self
            .coupling
            .eps_schedule
            .last()
            .ok_or_else(|| MfgError::validation("eps schedule is empty"))?;
        self.coupling_at(eps)
    }

    pub fn nt(&self) -> usize {
        self.data
            .nt
            .unwrap_or_else(|| (self.data.t_final * self.grid.n as f64).ceil() as usize)
    }

    pub fn terminal(&self) -> Result<ScalarField> {
        Ok(self.data.terminal.sample(self.grid()?))
    }

    pub fn initial_density(&self) -> Result<ScalarField> {
        let raw = self.data.initial_density.sample(self.grid()?);
        if !(raw.min() > 0.0) {
            return Err(MfgError::validation(format!(
                "initial density must be positive, sampled min is {}",
                raw.min()
            )));
        }
        let mass = integrate(&raw);
        Ok(raw.map(|v| v / mass))
    }
}
