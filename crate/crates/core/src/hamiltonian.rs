//! Hamiltonians `H(x, p)` on `T^d × R^d`, their Legendre transform, and
//! sampling-based checkers for the structural assumptions the estimates rely on.
//!
//! The shipped model is the family `a(x)(1+|p|²)^{γ/2} + V(x)`. Other
//! Hamiltonians plug into the solvers through the [`Hamiltonian`] trait; the
//! power law [`PowerHamiltonian`] is provided as a test variant with a
//! closed-form Lagrangian.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::grid::{Point, ScalarField, TorusGrid};

/// 2×2 matrix; for `d = 1` only the `[0][0]` entry is used.
pub type Mat2 = [[f64; 2]; 2];

pub trait Hamiltonian: Send + Sync {
    fn dim(&self) -> usize;

    /// Growth exponent `γ`.
    fn gamma(&self) -> f64;

    fn value(&self, x: &Point, p: &Point) -> f64;

    fn grad_p(&self, x: &Point, p: &Point) -> Point;

    fn grad_x(&self, x: &Point, p: &Point) -> Point;

    fn hess_pp(&self, x: &Point, p: &Point) -> Mat2;

    /// Mixed second derivative, entry `[i][j] = ∂_{x_i} ∂_{p_j} H`.
    fn hess_xp(&self, x: &Point, p: &Point) -> Mat2;

    /// `(L(x, v), maximizer)` when a closed form is known.
    fn lagrangian_closed_form(&self, _x: &Point, _v: &Point) -> Option<(f64, Point)> {
        None
    }
}

impl<T: Hamiltonian + ?Sized> Hamiltonian for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn gamma(&self) -> f64 {
        (**self).gamma()
    }
    fn value(&self, x: &Point, p: &Point) -> f64 {
        (**self).value(x, p)
    }
    fn grad_p(&self, x: &Point, p: &Point) -> Point {
        (**self).grad_p(x, p)
    }
    fn grad_x(&self, x: &Point, p: &Point) -> Point {
        (**self).grad_x(x, p)
    }
    fn hess_pp(&self, x: &Point, p: &Point) -> Mat2 {
        (**self).hess_pp(x, p)
    }
    fn hess_xp(&self, x: &Point, p: &Point) -> Mat2 {
        (**self).hess_xp(x, p)
    }
    fn lagrangian_closed_form(&self, x: &Point, v: &Point) -> Option<(f64, Point)> {
        (**self).lagrangian_closed_form(x, v)
    }
}

#[inline]
fn dot(d: usize, a: &Point, b: &Point) -> f64 {
    (0..d).map(|i| a[i] * b[i]).sum()
}

#[inline]
fn norm2(d: usize, a: &Point) -> f64 {
    dot(d, a, a)
}

/// Solves `M x = r` for symmetric positive-definite `M` of size `d`.
fn solve_spd(d: usize, m: &Mat2, r: &Point) -> Point {
    if d == 1 {
        [r[0] / m[0][0], 0.0]
    } else {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        [
            (m[1][1] * r[0] - m[0][1] * r[1]) / det,
            (m[0][0] * r[1] - m[1][0] * r[0]) / det,
        ]
    }
}

fn mat_vec(d: usize, m: &Mat2, r: &Point) -> Point {
    let mut out = [0.0; 2];
    for i in 0..d {
        out[i] = (0..d).map(|j| m[i][j] * r[j]).sum();
    }
    out
}

/// Smallest eigenvalue of a symmetric `d × d` matrix.
pub fn min_eigenvalue(d: usize, m: &Mat2) -> f64 {
    if d == 1 {
        m[0][0]
    } else {
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        tr / 2.0 - disc
    }
}

// ---------------------------------------------------------------------------
// Field specifications
// ---------------------------------------------------------------------------

/// Wave vector of a Fourier term; a bare number `k` means `(k, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WaveVector {
    Scalar(f64),
    Vector([f64; 2]),
}

impl WaveVector {
    pub fn as_point(&self) -> Point {
        match *self {
            WaveVector::Scalar(k) => [k, 0.0],
            WaveVector::Vector(k) => k,
        }
    }
}

/// `amp · cos(2π k·x + phase)`, written in JSON as `[k, amp, phase]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm(pub WaveVector, pub f64, pub f64);

/// A smooth periodic function, used for `a`, `V`, `u^T` and `m^0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldSpec {
    Const(f64),
    Fourier(Vec<FourierTerm>),
}

impl FieldSpec {
    pub fn validate(&self, what: &str) -> Result<()> {
        match self {
            FieldSpec::Const(c) if !c.is_finite() => {
                Err(MfgError::validation(format!("{what}: constant must be finite")))
            }
            FieldSpec::Fourier(terms) => {
                for t in terms {
                    let k = t.0.as_point();
                    if k.iter().any(|c| (c - c.round()).abs() > 1e-12) {
                        return Err(MfgError::validation(format!(
                            "{what}: wave numbers must be integers for periodicity, got {k:?}"
                        )));
                    }
                    if !t.1.is_finite() || !t.2.is_finite() {
                        return Err(MfgError::validation(format!("{what}: non-finite Fourier term")));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &Point) -> f64 {
        match self {
            FieldSpec::Const(c) => *c,
            FieldSpec::Fourier(terms) => terms
                .iter()
                .map(|t| {
                    let k = t.0.as_point();
                    t.1 * (2.0 * PI * (k[0] * x[0] + k[1] * x[1]) + t.2).cos()
                })
                .sum(),
        }
    }

    pub fn grad(&self, x: &Point) -> Point {
        match self {
            FieldSpec::Const(_) => [0.0; 2],
            FieldSpec::Fourier(terms) => {
                let mut g = [0.0; 2];
                for t in terms {
                    let k = t.0.as_point();
                    let s = -t.1 * 2.0 * PI * (2.0 * PI * (k[0] * x[0] + k[1] * x[1]) + t.2).sin();
                    g[0] += s * k[0];
                    g[1] += s * k[1];
                }
                g
            }
        }
    }

    pub fn sample(&self, grid: TorusGrid) -> ScalarField {
        ScalarField::from_fn(grid, |x| self.eval(x))
    }

    /// Minimum over a fine check grid (512 points per axis in 1-d, 128² in 2-d).
    pub fn sampled_min(&self, dim: usize) -> f64 {
        let n = if dim == 1 { 512 } else { 128 };
        let grid = TorusGrid::new(dim, n).expect("check grid is valid");
        self.sample(grid).min()
    }
}

// ---------------------------------------------------------------------------
// The built-in family
// ---------------------------------------------------------------------------

/// `H(x, p) = a(x)(1+|p|²)^{γ/2} + V(x)` with `a > 0`, `V ≥ 0`, `γ > 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel {
    dim: usize,
    a: FieldSpec,
    potential: FieldSpec,
    gamma: f64,
    shift: f64,
}

impl HamiltonianModel {
    /// Validates the data. A potential with negative values is shifted up by
    /// `-min V` so that `H ≥ 0`.
    pub fn new(dim: usize, a: FieldSpec, potential: FieldSpec, gamma: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(MfgError::validation(format!("model dimension must be 1 or 2, got {dim}")));
        }
        if !(gamma.is_finite() && gamma > 1.0) {
            return Err(MfgError::validation(format!("gamma must exceed 1, got {gamma}")));
        }
        a.validate("a")?;
        potential.validate("V")?;
        let min_a = a.sampled_min(dim);
        if min_a <= 0.0 {
            return Err(MfgError::validation(format!("a must be positive, sampled min is {min_a}")));
        }
        let min_v = potential.sampled_min(dim);
        let shift = if min_v < 0.0 {
            log::warn!("potential V has min {min_v:.6}; shifting by {:.6} so that H >= 0", -min_v);
            -min_v
        } else {
            0.0
        };
        Ok(HamiltonianModel {
            dim,
            a,
            potential,
            gamma,
            shift,
        })
    }

    /// `a ≡ 1`, `V ≡ 0`.
    pub fn standard(dim: usize, gamma: f64) -> Result<Self> {
        Self::new(dim, FieldSpec::Const(1.0), FieldSpec::Const(0.0), gamma)
    }

    pub fn a(&self) -> &FieldSpec {
        &self.a
    }

    pub fn potential(&self) -> &FieldSpec {
        &self.potential
    }

    /// Amount added to `V` at construction.
    pub fn potential_shift(&self) -> f64 {
        self.shift
    }

    #[inline]
    fn v_at(&self, x: &Point) -> f64 {
        self.potential.eval(x) + self.shift
    }
}

impl Hamiltonian for HamiltonianModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn value(&self, x: &Point, p: &Point) -> f64 {
        let q = 1.0 + norm2(self.dim, p);
        self.a.eval(x) * q.powf(self.gamma / 2.0) + self.v_at(x)
    }

    fn grad_p(&self, x: &Point, p: &Point) -> Point {
        let q = 1.0 + norm2(self.dim, p);
        let s = self.a.eval(x) * self.gamma * q.powf(self.gamma / 2.0 - 1.0);
        let mut g = [0.0; 2];
        for i in 0..self.dim {
            g[i] = s * p[i];
        }
        g
    }

    fn grad_x(&self, x: &Point, p: &Point) -> Point {
        let q = 1.0 + norm2(self.dim, p);
        let ga = self.a.grad(x);
        let gv = self.potential.grad(x);
        let w = q.powf(self.gamma / 2.0);
        let mut g = [0.0; 2];
        for i in 0..self.dim {
            g[i] = ga[i] * w + gv[i];
        }
        g
    }

    fn hess_pp(&self, x: &Point, p: &Point) -> Mat2 {
        let q = 1.0 + norm2(self.dim, p);
        let s = self.a.eval(x) * self.gamma * q.powf(self.gamma / 2.0 - 1.0);
        let mut m = [[0.0; 2]; 2];
        for i in 0..self.dim {
            for j in 0..self.dim {
                let delta = if i == j { 1.0 } else { 0.0 };
                m[i][j] = s * (delta + (self.gamma - 2.0) * p[i] * p[j] / q);
            }
        }
        m
    }

    fn hess_xp(&self, x: &Point, p: &Point) -> Mat2 {
        let q = 1.0 + norm2(self.dim, p);
        let ga = self.a.grad(x);
        let s = self.gamma * q.powf(self.gamma / 2.0 - 1.0);
        let mut m = [[0.0; 2]; 2];
        for i in 0..self.dim {
            for j in 0..self.dim {
                m[i][j] = ga[i] * s * p[j];
            }
        }
        m
    }
}

/// `H(p) = c|p|^γ/γ`. Smooth at `p = 0` only for `γ ≥ 2`; used as a test
/// variant with an explicit Lagrangian `c (|v|/c)^{γ'}/γ'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerHamiltonian {
    pub dim: usize,
    pub gamma: f64,
    pub scale: f64,
}

impl PowerHamiltonian {
    pub fn new(dim: usize, gamma: f64, scale: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) || gamma <= 1.0 || scale <= 0.0 {
            return Err(MfgError::validation("power Hamiltonian needs d in {1,2}, gamma > 1, scale > 0"));
        }
        Ok(PowerHamiltonian { dim, gamma, scale })
    }

    /// `|p|²/2`.
    pub fn quadratic(dim: usize) -> Self {
        PowerHamiltonian {
            dim,
            gamma: 2.0,
            scale: 1.0,
        }
    }
}

impl Hamiltonian for PowerHamiltonian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn value(&self, _x: &Point, p: &Point) -> f64 {
        self.scale * norm2(self.dim, p).sqrt().powf(self.gamma) / self.gamma
    }

    fn grad_p(&self, _x: &Point, p: &Point) -> Point {
        let r = norm2(self.dim, p).sqrt();
        if r == 0.0 {
            return [0.0; 2];
        }
        let s = self.scale * r.powf(self.gamma - 2.0);
        [s * p[0], if self.dim == 2 { s * p[1] } else { 0.0 }]
    }

    fn grad_x(&self, _x: &Point, _p: &Point) -> Point {
        [0.0; 2]
    }

    fn hess_pp(&self, _x: &Point, p: &Point) -> Mat2 {
        let d = self.dim;
        let r2 = norm2(d, p);
        let mut m = [[0.0; 2]; 2];
        if r2 == 0.0 {
            // γ = 2 gives the identity; other exponents are singular or flat at 0.
            let diag = if (self.gamma - 2.0).abs() < 1e-15 { self.scale } else { f64::NAN };
            for (i, row) in m.iter_mut().enumerate().take(d) {
                row[i] = diag;
            }
            return m;
        }
        let s = self.scale * r2.powf(self.gamma / 2.0 - 1.0);
        for i in 0..d {
            for j in 0..d {
                let delta = if i == j { 1.0 } else { 0.0 };
                m[i][j] = s * (delta + (self.gamma - 2.0) * p[i] * p[j] / r2);
            }
        }
        m
    }

    fn hess_xp(&self, _x: &Point, _p: &Point) -> Mat2 {
        [[0.0; 2]; 2]
    }

    fn lagrangian_closed_form(&self, _x: &Point, v: &Point) -> Option<(f64, Point)> {
        let conj = self.gamma / (self.gamma - 1.0);
        let speed = norm2(self.dim, v).sqrt();
        let value = self.scale * (speed / self.scale).powf(conj) / conj;
        // maximizer p = -(|v|/c)^{1/(γ-1)} v/|v|
        let mut p = [0.0; 2];
        if speed > 0.0 {
            let r = (speed / self.scale).powf(1.0 / (self.gamma - 1.0));
            for i in 0..self.dim {
                p[i] = -r * v[i] / speed;
            }
        }
        Some((value, p))
    }
}

// ---------------------------------------------------------------------------
// Legendre transform
// ---------------------------------------------------------------------------

pub const LEGENDRE_TOL: f64 = 1e-10;
const LEGENDRE_MAX_ITERS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegendreResult {
    pub value: f64,
    pub maximizer: Point,
    pub iterations: usize,
}

/// `L(x, v) = sup_p [-p·v - H(x, p)]` by damped Newton ascent from `p = 0`.
pub fn legendre<H: Hamiltonian + ?Sized>(model: &H, x: &Point, v: &Point) -> Result<LegendreResult> {
    if let Some((value, maximizer)) = model.lagrangian_closed_form(x, v) {
        return Ok(LegendreResult {
            value,
            maximizer,
            iterations: 0,
        });
    }
    legendre_ascent(model, x, v, [0.0; 2])
}

/// Same as [`legendre`] but starts the ascent from `p0`.
pub fn legendre_from<H: Hamiltonian + ?Sized>(
    model: &H,
    x: &Point,
    v: &Point,
    p0: Point,
) -> Result<LegendreResult> {
    if let Some((value, maximizer)) = model.lagrangian_closed_form(x, v) {
        return Ok(LegendreResult {
            value,
            maximizer,
            iterations: 0,
        });
    }
    legendre_ascent(model, x, v, p0)
}

fn legendre_ascent<H: Hamiltonian + ?Sized>(
    model: &H,
    x: &Point,
    v: &Point,
    p0: Point,
) -> Result<LegendreResult> {
    let d = model.dim();
    if (0..d).any(|i| !v[i].is_finite()) {
        return Err(MfgError::validation("legendre: velocity must be finite"));
    }
    let objective = |p: &Point| -dot(d, p, v) - model.value(x, p);
    let scale = 1.0 + norm2(d, v).sqrt();
    let mut p = p0;
    let mut f = objective(&p);
    for it in 0..LEGENDRE_MAX_ITERS {
        let dp = model.grad_p(x, &p);
        let mut g = [0.0; 2];
        for i in 0..d {
            g[i] = -v[i] - dp[i];
        }
        if norm2(d, &g).sqrt() <= LEGENDRE_TOL * scale {
            return Ok(LegendreResult {
                value: f,
                maximizer: p,
                iterations: it,
            });
        }
        let dir = solve_spd(d, &model.hess_pp(x, &p), &g);
        let slope = dot(d, &g, &dir);
        let residual = norm2(d, &g).sqrt();
        let mut t = 1.0;
        loop {
            let mut trial = p;
            for i in 0..d {
                trial[i] += t * dir[i];
            }
            let ft = objective(&trial);
            // Near the maximizer the objective is flat to rounding, so a step
            // that shrinks the gradient is taken even when Armijo cannot tell.
            let shrinks = {
                let dt = model.grad_p(x, &trial);
                ((0..d).map(|i| (v[i] + dt[i]).powi(2)).sum::<f64>()).sqrt() < 0.5 * residual
            };
            if ft >= f + 1e-4 * t * slope || shrinks || t < 1e-12 {
                p = trial;
                f = ft.max(f);
                break;
            }
            t *= 0.5;
        }
    }
    Err(MfgError::NonConvergence {
        stage: "legendre",
        iterations: LEGENDRE_MAX_ITERS,
        last_residual: {
            let dp = model.grad_p(x, &p);
            ((0..d).map(|i| (v[i] + dp[i]).powi(2)).sum::<f64>()).sqrt()
        },
        history: Vec::new(),
    })
}

/// `sup_v [-v·p - L(x, v)]`, with `L` evaluated by [`legendre`]. Newton ascent
/// in `v` using `∇_v L = -p*(v)` and `∇²_v L = (D²_pp H(p*))^{-1}`.
pub fn double_legendre<H: Hamiltonian + ?Sized>(model: &H, x: &Point, p: &Point) -> Result<f64> {
    let d = model.dim();
    let mut v = [0.0; 2];
    let mut inner = legendre(model, x, &v)?;
    let objective = |v: &Point, l: f64| -dot(d, v, p) - l;
    let mut f = objective(&v, inner.value);
    for _ in 0..LEGENDRE_MAX_ITERS {
        let mut g = [0.0; 2];
        for i in 0..d {
            g[i] = inner.maximizer[i] - p[i];
        }
        let hpp = model.hess_pp(x, &inner.maximizer);
        let dir = mat_vec(d, &hpp, &g);
        // Newton decrement: the remaining gain is about half of it. The
        // plain gradient test alone can stall when D²_pp H is small, since
        // the inner solve only pins p* to its own tolerance divided by D²_pp H.
        let decrement = dot(d, &g, &dir);
        if norm2(d, &g).sqrt() <= 1e-10 * (1.0 + norm2(d, p).sqrt()) || decrement <= 1e-14 * (1.0 + f.abs()) {
            return Ok(f);
        }
        let mut t = 1.0;
        loop {
            let mut trial = v;
            for i in 0..d {
                trial[i] += t * dir[i];
            }
            let cand = legendre_from(model, x, &trial, inner.maximizer)?;
            let ft = objective(&trial, cand.value);
            let shrinks = (0..d).map(|i| (cand.maximizer[i] - p[i]).powi(2)).sum::<f64>() < 0.25 * norm2(d, &g);
            if ft >= f || shrinks || t < 1e-12 {
                v = trial;
                inner = cand;
                f = ft.max(f);
                break;
            }
            t *= 0.5;
        }
    }
    Err(MfgError::NonConvergence {
        stage: "double legendre",
        iterations: LEGENDRE_MAX_ITERS,
        last_residual: f64::NAN,
        history: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Assumption checkers
// ---------------------------------------------------------------------------

/// Sample box for the assumption checkers: a tensor grid of `x` nodes times a
/// set of momenta in the ball `|p| ≤ p_max` (always including `p = 0` and
/// points on the sphere `|p| = p_max`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSpec {
    pub x_per_axis: usize,
    pub p_max: f64,
    pub p_samples: usize,
    pub matrix_samples: usize,
    pub matrix_max: f64,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            x_per_axis: 16,
            p_max: 10.0,
            p_samples: 200,
            matrix_samples: 8,
            matrix_max: 10.0,
            seed: 7,
        }
    }
}

pub const MIN_SAMPLE_POINTS: usize = 100;

struct Samples {
    xs: Vec<Point>,
    ps: Vec<Point>,
}

impl SampleSpec {
    fn build(&self, dim: usize) -> Result<Samples> {
        if self.p_max <= 0.0 || !self.p_max.is_finite() {
            return Err(MfgError::validation("sample p_max must be positive"));
        }
        let xs: Vec<Point> = if self.x_per_axis == 0 {
            Vec::new()
        } else {
            let k = self.x_per_axis;
            let count = k.pow(dim as u32);
            (0..count)
                .map(|i| {
                    if dim == 1 {
                        [i as f64 / k as f64, 0.0]
                    } else {
                        [(i / k) as f64 / k as f64, (i % k) as f64 / k as f64]
                    }
                })
                .collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut ps = vec![[0.0; 2]];
        for i in 0..self.p_samples {
            let mut dir = [0.0; 2];
            if dim == 1 {
                dir[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
            } else {
                let th = rng.random::<f64>() * 2.0 * PI;
                dir = [th.cos(), th.sin()];
            }
            // every tenth sample sits on the boundary sphere
            let r = if i % 10 == 0 {
                self.p_max
            } else {
                self.p_max * rng.random::<f64>().powf(1.0 / dim as f64)
            };
            ps.push([r * dir[0], r * dir[1]]);
        }
        let total = xs.len() * ps.len();
        if total < MIN_SAMPLE_POINTS {
            return Err(MfgError::validation(format!(
                "assumption sample has {total} points, need at least {MIN_SAMPLE_POINTS}"
            )));
        }
        Ok(Samples { xs, ps })
    }

    fn matrices(&self, dim: usize) -> Vec<Mat2> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut out = vec![[[0.0; 2]; 2]];
        for _ in 0..self.matrix_samples {
            let mut m = [[0.0; 2]; 2];
            for i in 0..dim {
                for j in i..dim {
                    let v = rng.random::<f64>() * 2.0 - 1.0;
                    m[i][j] = v;
                    m[j][i] = v;
                }
            }
            let fro = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            let target = self.matrix_max * rng.random::<f64>();
            if fro > 0.0 {
                m.iter_mut().flatten().for_each(|v| *v *= target / fro);
            }
            out.push(m);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub c1: f64,
    pub c2: f64,
}

/// Minimizes `C1 + C2` where `C1(C2) = max(0, max_k need_k(C2))`. Every
/// `need_k` is convex in `C2 > 0`, so the objective is convex: coarse log scan
/// followed by ternary search around the best scan point.
fn fit_constants(need: impl Fn(f64) -> f64) -> GrowthConstants {
    let c1_of = |c2: f64| need(c2).max(0.0);
    let obj = |c2: f64| c1_of(c2) + c2;
    let grid: Vec<f64> = (0..=160).map(|i| 10f64.powf(-4.0 + i as f64 * 0.05)).collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| obj(grid[a]).total_cmp(&obj(grid[b])))
        .expect("non-empty scan");
    let mut lo = grid[best.saturating_sub(1)];
    let mut hi = grid[(best + 1).min(grid.len() - 1)];
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if obj(m1) <= obj(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let c2 = 0.5 * (lo + hi);
    GrowthConstants { c1: c1_of(c2), c2 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A1Report {
    pub constants: GrowthConstants,
    pub pass: bool,
    pub sample_points: usize,
    pub p_max: f64,
    pub min_h: f64,
    /// Smallest eigenvalue of `D²_pp H` over the sample.
    pub min_hessian_eigenvalue: f64,
    pub convex: bool,
}

struct PointData {
    h: f64,
    r: f64,
    dph: f64,
    dxh: f64,
}

/// Two-sided `γ`-growth of `H`, the `D_pH` and `D_xH` bounds, `H ≥ 0`, and
/// positive-definiteness of `D²_pp H`, all on the sample.
pub fn check_a1<H: Hamiltonian + ?Sized>(model: &H, spec: &SampleSpec) -> Result<A1Report> {
    let d = model.dim();
    let s = spec.build(d)?;
    let gamma = model.gamma();
    let mut data = Vec::with_capacity(s.xs.len() * s.ps.len());
    let mut min_eig = f64::INFINITY;
    let mut min_h = f64::INFINITY;
    for x in &s.xs {
        for p in &s.ps {
            let h = model.value(x, p);
            let dph = model.grad_p(x, p);
            let dxh = model.grad_x(x, p);
            min_h = min_h.min(h);
            min_eig = min_eig.min(min_eigenvalue(d, &model.hess_pp(x, p)));
            data.push(PointData {
                h,
                r: norm2(d, p).sqrt(),
                dph: norm2(d, &dph).sqrt(),
                dxh: norm2(d, &dxh).sqrt(),
            });
        }
    }
    let need = |c2: f64| {
        data.iter()
            .map(|q| {
                let lower = q.r.powf(gamma) / c2 - q.h;
                let upper = q.h - c2 * q.r.powf(gamma);
                let dp = q.dph - c2 * q.r.powf(gamma - 1.0);
                let dx = q.dxh - c2 * q.h;
                lower.max(upper).max(dp).max(dx)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let constants = fit_constants(need);
    let GrowthConstants { c1, c2 } = constants;
    let slack = |v: f64| 1e-9 * (1.0 + v.abs());
    let holds = data.iter().all(|q| {
        q.r.powf(gamma) / c2 - c1 <= q.h + slack(q.h)
            && q.h <= c1 + c2 * q.r.powf(gamma) + slack(q.h)
            && q.dph <= c1 + c2 * q.r.powf(gamma - 1.0) + slack(q.dph)
            && q.dxh <= c1 + c2 * q.h + slack(q.dxh)
    });
    let convex = min_eig > 0.0;
    let finite = c1.is_finite() && c2.is_finite();
    Ok(A1Report {
        constants,
        pass: finite && holds && convex && min_h >= 0.0,
        sample_points: data.len(),
        p_max: spec.p_max,
        min_h,
        min_hessian_eigenvalue: min_eig,
        convex,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2Report {
    pub constants: GrowthConstants,
    pub pass: bool,
    pub sample_points: usize,
    pub p_max: f64,
}

/// `D_pH·p - H ≥ H/C2 - C1` on the sample.
pub fn check_a2<H: Hamiltonian + ?Sized>(model: &H, spec: &SampleSpec) -> Result<A2Report> {
    let d = model.dim();
    let s = spec.build(d)?;
    let mut pairs = Vec::with_capacity(s.xs.len() * s.ps.len());
    for x in &s.xs {
        for p in &s.ps {
            let h = model.value(x, p);
            let lag = dot(d, &model.grad_p(x, p), p) - h;
            pairs.push((h, lag));
        }
    }
    let need = |c2: f64| {
        pairs
            .iter()
            .map(|&(h, lag)| h / c2 - lag)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let constants = fit_constants(need);
    let holds = pairs
        .iter()
        .all(|&(h, lag)| lag >= h / constants.c2 - constants.c1 - 1e-9 * (1.0 + h.abs()));
    Ok(A2Report {
        constants,
        pass: holds && constants.c1.is_finite() && constants.c2.is_finite(),
        sample_points: pairs.len(),
        p_max: spec.p_max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A3Row {
    pub delta: f64,
    pub c_delta: f64,
    pub pass: bool,
    /// `(x, p, M)` attaining the largest ratio; reported on failure.
    pub witness: Option<(Point, Point, Mat2)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A3Report {
    pub rows: Vec<A3Row>,
    pub pass: bool,
    pub sample_points: usize,
    pub matrix_max: f64,
}

fn trace_prod(d: usize, a: &Mat2, b: &Mat2) -> f64 {
    let mut t = 0.0;
    for i in 0..d {
        for j in 0..d {
            t += a[i][j] * b[j][i];
        }
    }
    t
}

fn mat_mul(d: usize, a: &Mat2, b: &Mat2) -> Mat2 {
    let mut m = [[0.0; 2]; 2];
    for i in 0..d {
        for j in 0..d {
            m[i][j] = (0..d).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

/// For each `δ`, the smallest `C_δ ≥ 0` with
/// `Tr(D²_xp H M) ≤ δ Tr(D²_pp H M²) + C_δ H` over the sample.
pub fn check_a3<H: Hamiltonian + ?Sized>(model: &H, spec: &SampleSpec, deltas: &[f64]) -> Result<A3Report> {
    if deltas.iter().any(|&dl| !(dl > 0.0 && dl < 1.0)) {
        return Err(MfgError::validation("A3 deltas must lie in (0, 1)"));
    }
    let d = model.dim();
    let s = spec.build(d)?;
    let ms = spec.matrices(d);
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut c_delta = 0.0f64;
        let mut witness = None;
        let mut unbounded = false;
        for x in &s.xs {
            for p in &s.ps {
                let h = model.value(x, p);
                let hxp = model.hess_xp(x, p);
                let hpp = model.hess_pp(x, p);
                for m in &ms {
                    let lhs = trace_prod(d, &hxp, m);
                    let quad = trace_prod(d, &hpp, &mat_mul(d, m, m));
                    let excess = lhs - delta * quad;
                    if excess <= 0.0 {
                        continue;
                    }
                    let ratio = if h > 0.0 { excess / h } else { f64::INFINITY };
                    if !ratio.is_finite() {
                        unbounded = true;
                        witness = Some((*x, *p, *m));
                    } else if ratio > c_delta {
                        c_delta = ratio;
                        if !unbounded {
                            witness = Some((*x, *p, *m));
                        }
                    }
                }
            }
        }
        let pass = !unbounded && c_delta.is_finite();
        rows.push(A3Row {
            delta,
            c_delta: if unbounded { f64::INFINITY } else { c_delta },
            pass,
            witness: if pass { None } else { witness },
        });
    }
    Ok(A3Report {
        pass: rows.iter().all(|r| r.pass),
        rows,
        sample_points: s.xs.len() * s.ps.len() * ms.len(),
        matrix_max: spec.matrix_max,
    })
}

/// `1 < γ < (d+2)/(d+1)`.
pub fn gamma_gate_a4(gamma: f64, d: usize) -> bool {
    let bound = (d as f64 + 2.0) / (d as f64 + 1.0);
    gamma > 1.0 && gamma < bound
}

/// Threshold `ᾱ_{d,γ}` on the singularity exponent for the stationary problem;
/// `+∞` outside the listed cases. For `d = 1` every `γ` falls in the first
/// case (`d/(d-1) = ∞`), so the threshold is 0.
pub fn alpha_threshold_a5(d: usize, gamma: f64) -> f64 {
    if d <= 1 {
        return 0.0;
    }
    let df = d as f64;
    let low = df / (df - 1.0);
    if gamma < low {
        return 0.0;
    }
    if d == 2 {
        return if gamma >= 2.0 { 1.0 } else { f64::INFINITY };
    }
    let high = if d == 3 { f64::INFINITY } else { (df - 2.0) / (df - 3.0) };
    if gamma < high {
        let denom = gamma * (3.0 - df) + df - 2.0;
        (gamma / denom).max(1.0)
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn family(a: FieldSpec, v: FieldSpec, gamma: f64) -> HamiltonianModel {
        HamiltonianModel::new(1, a, v, gamma).unwrap()
    }

    #[test]
    fn eval_examples() {
        let m = HamiltonianModel::standard(2, 2.0).unwrap();
        assert_eq!(m.value(&[0.3, 0.1], &[0.0, 0.0]), 1.0);
        assert!((m.value(&[0.3, 0.1], &[3.0, 4.0]) - 26.0).abs() < 1e-12);
        let m2 = family(FieldSpec::Const(2.0), FieldSpec::Const(0.5), 1.5);
        assert!((m2.value(&[0.7, 0.0], &[0.0, 0.0]) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = HamiltonianModel::new(
            2,
            FieldSpec::Fourier(vec![
                FourierTerm(WaveVector::Scalar(0.0), 1.0, 0.0),
                FourierTerm(WaveVector::Vector([1.0, 1.0]), 0.3, 0.2),
            ]),
            FieldSpec::Fourier(vec![FourierTerm(WaveVector::Vector([0.0, 2.0]), 0.2, 0.0)]),
            1.3,
        )
        .unwrap();
        let x = [0.21, 0.67];
        let p = [0.8, -1.7];
        let e = 1e-6;
        let gp = m.grad_p(&x, &p);
        let gx = m.grad_x(&x, &p);
        let hpp = m.hess_pp(&x, &p);
        let hxp = m.hess_xp(&x, &p);
        for i in 0..2 {
            let mut pp = p;
            let mut pm = p;
            pp[i] += e;
            pm[i] -= e;
            let fd = (m.value(&x, &pp) - m.value(&x, &pm)) / (2.0 * e);
            assert!((fd - gp[i]).abs() < 1e-6, "dp {i}");
            let gpp = m.grad_p(&x, &pp);
            let gpm = m.grad_p(&x, &pm);
            for j in 0..2 {
                assert!(((gpp[j] - gpm[j]) / (2.0 * e) - hpp[j][i]).abs() < 1e-5);
            }
            let mut xp = x;
            let mut xm = x;
            xp[i] += e;
            xm[i] -= e;
            let fd = (m.value(&xp, &p) - m.value(&xm, &p)) / (2.0 * e);
            assert!((fd - gx[i]).abs() < 1e-5, "dx {i}");
            let gxp = m.grad_p(&xp, &p);
            let gxm = m.grad_p(&xm, &p);
            for j in 0..2 {
                assert!(((gxp[j] - gxm[j]) / (2.0 * e) - hxp[i][j]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn negative_potential_is_shifted() {
        let m = family(
            FieldSpec::Const(1.0),
            FieldSpec::Fourier(vec![FourierTerm(WaveVector::Scalar(1.0), 0.5, 0.0)]),
            1.5,
        );
        assert!((m.potential_shift() - 0.5).abs() < 1e-6);
        assert!(m.value(&[0.5, 0.0], &[0.0, 0.0]) >= 1.0 - 1e-9);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(HamiltonianModel::new(1, FieldSpec::Const(0.0), FieldSpec::Const(0.0), 1.5).is_err());
        assert!(HamiltonianModel::new(1, FieldSpec::Const(1.0), FieldSpec::Const(0.0), 1.0).is_err());
        assert!(HamiltonianModel::new(3, FieldSpec::Const(1.0), FieldSpec::Const(0.0), 1.5).is_err());
        let half = FieldSpec::Fourier(vec![FourierTerm(WaveVector::Scalar(0.5), 1.0, 0.0)]);
        assert!(HamiltonianModel::new(1, FieldSpec::Const(1.0), half, 1.5).is_err());
    }

    #[test]
    fn field_spec_json_shapes() {
        let c: FieldSpec = serde_json::from_str(r#"{"const": 2.5}"#).unwrap();
        assert_eq!(c, FieldSpec::Const(2.5));
        let f: FieldSpec = serde_json::from_str(r#"{"fourier": [[1, 0.5, 0.0], [[1, 2], 0.1, 1.0]]}"#).unwrap();
        match f {
            FieldSpec::Fourier(t) => {
                assert_eq!(t[0].0.as_point(), [1.0, 0.0]);
                assert_eq!(t[1].0.as_point(), [1.0, 2.0]);
            }
            _ => panic!(),
        }
        assert!(serde_json::from_str::<FieldSpec>(r#"{"linear": 1}"#).is_err());
    }

    #[test]
    fn legendre_quadratic() {
        let q = PowerHamiltonian::quadratic(2);
        let r = legendre(&q, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((r.value - 0.5).abs() < 1e-12);
        assert!((r.maximizer[0] + 1.0).abs() < 1e-12 && r.maximizer[1].abs() < 1e-12);
        // same via the generic ascent path
        let a = legendre_ascent(&q, &[0.0, 0.0], &[1.0, 0.0], [0.0; 2]).unwrap();
        assert!((a.value - 0.5).abs() < 1e-12);
        assert!((a.maximizer[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn legendre_power_closed_form() {
        let p = PowerHamiltonian::new(1, 1.5, 1.0).unwrap();
        let r = legendre(&p, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 1e-12);
        // the ascent agrees, started away from the singular point p = 0
        let a = legendre_ascent(&p, &[0.0, 0.0], &[1.0, 0.0], [-0.5, 0.0]).unwrap();
        assert!((a.value - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn legendre_at_zero_velocity() {
        let m = family(
            FieldSpec::Fourier(vec![
                FourierTerm(WaveVector::Scalar(0.0), 1.0, 0.0),
                FourierTerm(WaveVector::Scalar(1.0), 0.5, -PI / 2.0),
            ]),
            FieldSpec::Const(0.3),
            1.2,
        );
        for &x in &[0.0, 0.2, 0.75] {
            let r = legendre(&m, &[x, 0.0], &[0.0, 0.0]).unwrap();
            let expect = -(m.a().eval(&[x, 0.0]) + 0.3);
            assert!((r.value - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn legendre_satisfies_first_order_condition() {
        let m = HamiltonianModel::standard(2, 1.2).unwrap();
        let v = [3.0, -7.0];
        let r = legendre(&m, &[0.1, 0.4], &v).unwrap();
        let g = m.grad_p(&[0.1, 0.4], &r.maximizer);
        assert!((g[0] + v[0]).abs() < 1e-8 && (g[1] + v[1]).abs() < 1e-8);
        // value identity at the maximizer: L = D_pH·p - H
        let p = r.maximizer;
        let lag = g[0] * p[0] + g[1] * p[1] - m.value(&[0.1, 0.4], &p);
        assert!((lag - r.value).abs() < 1e-8 * (1.0 + lag.abs()));
    }

    #[test]
    fn a1_passes_for_standard_quadratic_family() {
        let m = HamiltonianModel::standard(1, 2.0).unwrap();
        let rep = check_a1(&m, &SampleSpec::default()).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.constants.c1.is_finite() && rep.constants.c2 > 0.0);
        // direct sweep of the D_pH bound with the fitted constants
        let GrowthConstants { c1, c2 } = rep.constants;
        for i in 0..=200 {
            let p = [-10.0 + 0.1 * i as f64, 0.0];
            let g = m.grad_p(&[0.0, 0.0], &p)[0].abs();
            assert!(g <= c1 + c2 * p[0].abs() + 1e-9);
        }
    }

    #[test]
    fn a1_dx_bound_with_varying_a() {
        let a = FieldSpec::Fourier(vec![
            FourierTerm(WaveVector::Scalar(0.0), 1.0, 0.0),
            FourierTerm(WaveVector::Scalar(1.0), 0.5, -PI / 2.0),
        ]);
        let m = family(a, FieldSpec::Const(0.0), 1.5);
        let spec = SampleSpec {
            x_per_axis: 50,
            ..SampleSpec::default()
        };
        let rep = check_a1(&m, &spec).unwrap();
        assert!(rep.pass);
        let GrowthConstants { c1, c2 } = rep.constants;
        for i in 0..50 {
            let x = [i as f64 / 50.0, 0.0];
            for j in 0..50 {
                let p = [-10.0 + 0.4 * j as f64, 0.0];
                assert!(m.grad_x(&x, &p)[0].abs() <= c1 + c2 * m.value(&x, &p) + 1e-9);
            }
        }
    }

    #[test]
    fn a1_rejects_tiny_samples() {
        let m = HamiltonianModel::standard(1, 1.5).unwrap();
        let spec = SampleSpec {
            x_per_axis: 2,
            p_samples: 10,
            ..SampleSpec::default()
        };
        assert!(matches!(check_a1(&m, &spec), Err(MfgError::Validation(_))));
    }

    #[test]
    fn hessian_positive_definite_at_random_points() {
        let m = HamiltonianModel::new(
            2,
            FieldSpec::Fourier(vec![
                FourierTerm(WaveVector::Scalar(0.0), 1.0, 0.0),
                FourierTerm(WaveVector::Vector([1.0, -1.0]), 0.4, 0.0),
            ]),
            FieldSpec::Const(0.0),
            1.2,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let p = [rng.random::<f64>() * 40.0 - 20.0, rng.random::<f64>() * 40.0 - 20.0];
            let h = m.hess_pp(&x, &p);
            assert!((h[0][1] - h[1][0]).abs() < 1e-14);
            assert!(min_eigenvalue(2, &h) > 0.0);
        }
    }

    #[test]
    fn a2_quadratic_is_exact() {
        let q = PowerHamiltonian::quadratic(1);
        let rep = check_a2(&q, &SampleSpec::default()).unwrap();
        assert!(rep.pass);
        assert!((rep.constants.c2 - 1.0).abs() < 1e-6, "{:?}", rep.constants);
        assert!(rep.constants.c1 < 1e-6);
    }

    #[test]
    fn a2_p_zero_fixes_c1() {
        let m = HamiltonianModel::standard(1, 1.5).unwrap();
        let rep = check_a2(&m, &SampleSpec::default()).unwrap();
        let h0 = m.value(&[0.0, 0.0], &[0.0, 0.0]);
        assert!(rep.constants.c1 >= h0 / rep.constants.c2 + h0 - 1e-9);
    }

    #[test]
    fn a2_family_large_sweep() {
        let m = HamiltonianModel::standard(2, 1.2).unwrap();
        let spec = SampleSpec {
            x_per_axis: 4,
            p_samples: 10_000 / 16,
            ..SampleSpec::default()
        };
        let rep = check_a2(&m, &spec).unwrap();
        assert!(rep.pass);
        assert!(rep.sample_points >= 10_000);
    }

    #[test]
    fn a3_constant_a_needs_no_constant() {
        let m = HamiltonianModel::standard(2, 1.5).unwrap();
        let rep = check_a3(&m, &SampleSpec::default(), &[0.1, 0.5, 0.9]).unwrap();
        assert!(rep.pass);
        assert!(rep.rows.iter().all(|r| r.c_delta == 0.0));
    }

    #[test]
    fn a3_varying_a() {
        let a = FieldSpec::Fourier(vec![
            FourierTerm(WaveVector::Scalar(0.0), 1.0, 0.0),
            FourierTerm(WaveVector::Scalar(1.0), 0.5, -PI / 2.0),
        ]);
        let m = family(a, FieldSpec::Const(0.0), 1.15);
        let spec = SampleSpec {
            x_per_axis: 50,
            p_samples: 199,
            matrix_samples: 8,
            ..SampleSpec::default()
        };
        let rep = check_a3(&m, &spec, &[0.5]).unwrap();
        assert!(rep.pass);
        assert!(rep.sample_points >= 10_000);
        assert!(rep.rows[0].c_delta.is_finite() && rep.rows[0].c_delta > 0.0);
    }

    #[test]
    fn a3_rejects_bad_deltas() {
        let m = HamiltonianModel::standard(1, 1.5).unwrap();
        assert!(check_a3(&m, &SampleSpec::default(), &[1.0]).is_err());
    }

    #[test]
    fn gamma_gate_examples() {
        assert!(gamma_gate_a4(1.2, 2));
        assert!(!gamma_gate_a4(4.0 / 3.0, 2));
        assert!(!gamma_gate_a4(1.24, 4));
        assert!(!gamma_gate_a4(1.0, 1));
    }

    #[test]
    fn alpha_threshold_examples() {
        assert_eq!(alpha_threshold_a5(5, 1.1), 0.0);
        assert_eq!(alpha_threshold_a5(2, 2.5), 1.0);
        assert!((alpha_threshold_a5(3, 1.6) - 1.6).abs() < 1e-15);
        assert!((alpha_threshold_a5(4, 1.5) - 3.0).abs() < 1e-12);
        assert!(alpha_threshold_a5(4, 2.5).is_infinite());
    }

    #[test]
    fn gate_coherence() {
        for d in 1..6 {
            for i in 0..200 {
                let g = 1.0 + i as f64 * 0.01;
                if gamma_gate_a4(g, d) {
                    assert!(g < 2.0);
                }
            }
        }
    }

    #[test]
    fn double_legendre_low_gamma_large_p() {
        // D²_pp H is small here; this used to exhaust the iteration budget
        let a = FieldSpec::Fourier(vec![
            FourierTerm(WaveVector::Scalar(0.0), 1.0, 0.0),
            FourierTerm(WaveVector::Scalar(1.0), 0.5, 0.0),
        ]);
        let m = family(a, FieldSpec::Const(0.3), 1.2);
        for (x, p) in [(0.7254948892475286, 4.859779242996085), (0.3284, 3.1747), (0.0019, -2.2646)] {
            let x = [x, 0.0];
            let p = [p, 0.0];
            let back = double_legendre(&m, &x, &p).unwrap();
            assert!((back - m.value(&x, &p)).abs() < 1e-8);
        }
    }
}
