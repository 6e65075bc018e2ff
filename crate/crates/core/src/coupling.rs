//! The regularized singular coupling `g_ε(m) = -w (m+ε)^{-α}`.

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::grid::ScalarField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub alpha: f64,
    pub eps: f64,
    /// Multiplier on the coupling; 0 decouples the system, 1 is the model.
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl CouplingParams {
    pub fn new(alpha: f64, eps: f64) -> Result<Self> {
        let c = CouplingParams {
            alpha,
            eps,
            weight: 1.0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(MfgError::validation(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(MfgError::validation(format!("eps must be nonnegative, got {}", self.eps)));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(MfgError::validation(format!("coupling weight must be nonnegative, got {}", self.weight)));
        }
        Ok(())
    }

    /// Solvers require `ε > 0`.
    pub fn validate_for_solver(&self) -> Result<()> {
        self.validate()?;
        if self.eps <= 0.0 {
            return Err(MfgError::validation("solver runs need eps > 0"));
        }
        Ok(())
    }

    /// Pointwise `-w (m+ε)^{-α}` for a single value.
    #[inline]
    pub fn g(&self, m: f64) -> f64 {
        -self.weight * (m + self.eps).powf(-self.alpha)
    }
}

fn shifted(m: &ScalarField, params: &CouplingParams) -> Result<()> {
    for (node, &v) in m.values().iter().enumerate() {
        let z = v + params.eps;
        if !(z > 0.0) {
            return Err(MfgError::Singularity { node, value: z });
        }
    }
    Ok(())
}

pub fn g_eps(m: &ScalarField, params: &CouplingParams) -> Result<ScalarField> {
    shifted(m, params)?;
    Ok(m.map(|v| params.g(v)))
}

/// `w α (m+ε)^{-α-1}`, the derivative of `g_ε` in `m`.
pub fn g_eps_derivative(m: &ScalarField, params: &CouplingParams) -> Result<ScalarField> {
    shifted(m, params)?;
    Ok(m.map(|v| params.weight * params.alpha * (v + params.eps).powf(-params.alpha - 1.0)))
}

/// `z^{1-α}/(α-1)`; for `α = 1` the log limit `-ln z`.
pub fn convex_power(z: f64, alpha: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(MfgError::validation(format!("convex_power needs z > 0, got {z}")));
    }
    if alpha == 1.0 {
        Ok(-z.ln())
    } else {
        Ok(z.powf(1.0 - alpha) / (alpha - 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use proptest::prelude::*;

    fn grid() -> TorusGrid {
        TorusGrid::new(1, 16).unwrap()
    }

    fn params(alpha: f64, eps: f64) -> CouplingParams {
        CouplingParams::new(alpha, eps).unwrap()
    }

    #[test]
    fn g_examples() {
        let g = grid();
        let one = g_eps(&ScalarField::constant(g, 1.0), &params(1.0, 0.0)).unwrap();
        assert!(one.values().iter().all(|&v| v == -1.0));
        let zero = g_eps(&ScalarField::zeros(g), &params(2.0, 0.1)).unwrap();
        assert!(zero.values().iter().all(|&v| (v + 100.0).abs() < 1e-10));
        let three = g_eps(&ScalarField::constant(g, 3.0), &params(0.5, 1.0)).unwrap();
        assert!(three.values().iter().all(|&v| (v + 0.5).abs() < 1e-15));
    }

    #[test]
    fn singular_node_is_reported() {
        let g = grid();
        let mut m = ScalarField::constant(g, 1.0);
        m.values_mut()[5] = 0.0;
        match g_eps(&m, &params(1.0, 0.0)) {
            Err(MfgError::Singularity { node, .. }) => assert_eq!(node, 5),
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn derivative_examples() {
        let g = grid();
        let d1 = g_eps_derivative(&ScalarField::constant(g, 1.0), &params(1.0, 0.0)).unwrap();
        assert!(d1.values().iter().all(|&v| v == 1.0));
        let d2 = g_eps_derivative(&ScalarField::zeros(g), &params(1.0, 0.5)).unwrap();
        assert!(d2.values().iter().all(|&v| (v - 4.0).abs() < 1e-14));
    }

    #[test]
    fn convex_power_examples() {
        assert_eq!(convex_power(1.0, 2.0).unwrap(), 1.0);
        assert!((convex_power(4.0, 3.0).unwrap() - 0.03125).abs() < 1e-15);
        assert!((convex_power(std::f64::consts::E, 1.0).unwrap() + 1.0).abs() < 1e-15);
        assert!(convex_power(0.0, 2.0).is_err());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(CouplingParams::new(-1.0, 0.1).is_err());
        assert!(CouplingParams::new(1.0, -0.1).is_err());
        assert!(params(1.0, 0.0).validate_for_solver().is_err());
    }

    #[test]
    fn converges_at_rate_eps() {
        // Richardson: error(ε)/error(ε/2) → 2 for fixed positive m
        let p = |eps| params(1.5, eps);
        let m: f64 = 0.7;
        let exact = -m.powf(-1.5);
        let e1 = (p(1e-3).g(m) - exact).abs();
        let e2 = (p(5e-4).g(m) - exact).abs();
        assert!((e1 / e2 - 2.0).abs() < 1e-2);
    }

    proptest! {
        #[test]
        fn monotone_in_m_and_eps(a in 0.0f64..5.0, b in 0.0f64..5.0, alpha in 0.1f64..4.0, eps in 1e-4f64..1.0) {
            let c = params(alpha, eps);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(c.g(hi) >= c.g(lo));
            prop_assert!(c.g(a) <= 0.0);
            prop_assert!(c.with_eps(eps * 2.0).g(a) >= c.g(a));
        }

        #[test]
        fn convex_power_is_convex(a in 1e-3f64..10.0, b in 1e-3f64..10.0) {
            let f = |z| convex_power(z, 2.0).unwrap();
            prop_assert!(0.5 * (f(a) + f(b)) >= f(0.5 * (a + b)) - 1e-12);
        }
    }
}
