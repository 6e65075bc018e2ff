//! Particle simulation of `dx = v ds + √2 dW` under the feedback
//! `v = -D_pH(x, Du(x, s))`, with density and cost estimators to compare
//! against a solved mean field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::CouplingParams;
use crate::error::{MfgError, Result};
use crate::grid::{interpolate, wrap, Point, ScalarField, TorusGrid, VectorField};
use crate::hamiltonian::{legendre_from, Hamiltonian};
use crate::ops::grad;
use crate::stationary::StationarySolution;
use crate::time_solver::TimeDependentSolution;

pub const MIN_PARTICLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub particles: usize,
    /// KDE bandwidth; `None` means `2h`.
    pub bandwidth: Option<f64>,
    /// Speeds above this are clipped (and counted).
    pub velocity_cap: f64,
    /// Keep every k-th time slice of the trajectories.
    pub record_every: usize,
    pub ergodic_horizon: f64,
    pub ergodic_burn_in: f64,
    pub ergodic_dt: f64,
    pub ergodic_particles: usize,
    /// Start points for the cost estimate.
    pub x0: Vec<Point>,
    /// Start time for the cost estimate.
    pub t: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            particles: 10_000,
            bandwidth: None,
            velocity_cap: 1e3,
            record_every: 1,
            ergodic_horizon: 50.0,
            ergodic_burn_in: 10.0,
            ergodic_dt: 0.01,
            ergodic_particles: 2000,
            x0: vec![[0.5, 0.5]],
            t: 0.0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < MIN_PARTICLES {
            return Err(MfgError::validation(format!(
                "particle count {} is below the minimum {MIN_PARTICLES}",
                self.particles
            )));
        }
        if let Some(b) = self.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return Err(MfgError::validation("bandwidth must be positive"));
            }
        }
        if !(self.velocity_cap > 0.0) || self.record_every == 0 {
            return Err(MfgError::validation("velocity_cap must be positive and record_every at least 1"));
        }
        if !(self.ergodic_dt > 0.0 && self.ergodic_burn_in >= 0.0 && self.ergodic_horizon > self.ergodic_burn_in) {
            return Err(MfgError::validation("ergodic horizon must exceed the burn-in and dt must be positive"));
        }
        if self.ergodic_particles == 0 {
            return Err(MfgError::validation("ergodic_particles must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub seed: u64,
    pub dt_sim: f64,
    /// Time indices of the recorded slices.
    pub times: Vec<usize>,
    /// `positions[r][i]`: particle `i` at time index `times[r]`.
    pub positions: Vec<Vec<Point>>,
    pub clip_events: u64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_at(&self, k: usize) -> Option<&[Point]> {
        self.times.iter().position(|&t| t == k).map(|r| self.positions[r].as_slice())
    }
}

fn particle_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Inverse CDF of the periodic piecewise-linear interpolant of a 1-d density.
struct LinearCdf {
    h: f64,
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl LinearCdf {
    fn new(m: &ScalarField) -> Self {
        let h = m.grid().h();
        let values = m.values().to_vec();
        let n = values.len();
        let mut cumulative = Vec::with_capacity(n + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for i in 0..n {
            acc += 0.5 * h * (values[i] + values[(i + 1) % n]);
            cumulative.push(acc);
        }
        Self { h, values, cumulative }
    }

    fn sample(&self, uniform: f64) -> f64 {
        let n = self.values.len();
        let target = uniform * self.cumulative[n];
        let i = self.cumulative.partition_point(|&c| c <= target).clamp(1, n) - 1;
        let r = (target - self.cumulative[i]) / self.h;
        let a = self.values[i];
        let b = self.values[(i + 1) % n] - a;
        // a t + b t²/2 = r on [0, 1]
        let t = if b.abs() < 1e-14 * a.max(1e-300) {
            r / a
        } else {
            let disc = (a * a + 2.0 * b * r).max(0.0);
            2.0 * r / (a + disc.sqrt())
        };
        wrap((i as f64 + t.clamp(0.0, 1.0)) * self.h)
    }
}

fn sample_initial(m0: &ScalarField, n_particles: usize, seed: u64) -> Result<Vec<(Point, ChaCha8Rng)>> {
    if m0.min() < 0.0 || !m0.is_finite() {
        return Err(MfgError::validation("initial density must be finite and nonnegative"));
    }
    let grid = *m0.grid();
    let cdf = (grid.dim() == 1).then(|| LinearCdf::new(m0));
    let m_max = m0.max();
    if !(m_max > 0.0) {
        return Err(MfgError::validation("initial density vanishes identically"));
    }
    Ok((0..n_particles)
        .into_par_iter()
        .map(|i| {
            let mut rng = particle_rng(seed, i);
            let x = match &cdf {
                Some(c) => [c.sample(rng.random::<f64>()), 0.0],
                None => loop {
                    let y = [rng.random::<f64>(), rng.random::<f64>()];
                    if rng.random::<f64>() * m_max <= interpolate(&grid, m0.values(), &y) {
                        break y;
                    }
                },
            };
            (x, rng)
        })
        .collect())
}

fn interp_vec(field: &VectorField, x: &Point) -> Point {
    let grid = field.grid();
    let mut p = [0.0; 2];
    for (a, pa) in p.iter_mut().enumerate().take(grid.dim()) {
        *pa = interpolate(grid, field.component(a), x);
    }
    p
}

/// Feedback velocity at `x` for the interpolated gradient `p`, clipped to `cap`.
fn velocity<H: Hamiltonian + ?Sized>(model: &H, x: &Point, p: &Point, cap: f64) -> (Point, bool) {
    let b = model.grad_p(x, p);
    let v = [-b[0], -b[1]];
    let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if speed > cap {
        let s = cap / speed;
        ([v[0] * s, v[1] * s], true)
    } else {
        (v, false)
    }
}

fn step(dim: usize, x: &mut Point, v: &Point, dt: f64, rng: &mut ChaCha8Rng) {
    let sd = (2.0 * dt).sqrt();
    for a in 0..dim {
        let xi: f64 = rng.sample(StandardNormal);
        x[a] = wrap(x[a] + v[a] * dt + sd * xi);
    }
}

fn gradient_path(sol: &TimeDependentSolution) -> Vec<VectorField> {
    sol.u.par_iter().map(grad).collect()
}

/// Euler–Maruyama with the solution's time step; the gradient used on
/// `[t_k, t_{k+1})` is `Du^{k+1}`, matching the implicit FP step.
pub fn simulate<H: Hamiltonian + ?Sized>(
    sol: &TimeDependentSolution,
    model: &H,
    n_particles: usize,
    seed: u64,
    config: &McConfig,
) -> Result<ParticleEnsemble> {
    if n_particles < MIN_PARTICLES {
        return Err(MfgError::validation(format!(
            "particle count {n_particles} is below the minimum {MIN_PARTICLES}"
        )));
    }
    let grid = *sol.grid();
    let dim = grid.dim();
    let dt = sol.dt();
    let nt = sol.nt;
    let every = config.record_every.max(1);
    let mut times: Vec<usize> = (0..=nt).step_by(every).collect();
    if *times.last().expect("non-empty") != nt {
        times.push(nt);
    }
    let grads = gradient_path(sol);
    let start = sample_initial(&sol.m0, n_particles, seed)?;
    let runs: Vec<(Vec<Point>, u64)> = start
        .into_par_iter()
        .map(|(mut x, mut rng)| {
            let mut rec = Vec::with_capacity(times.len());
            let mut clips = 0;
            let mut next = 0;
            for k in 0..=nt {
                if times[next] == k {
                    rec.push(x);
                    next += 1;
                }
                if k == nt {
                    break;
                }
                let p = interp_vec(&grads[k + 1], &x);
                let (v, clipped) = velocity(model, &x, &p, config.velocity_cap);
                clips += clipped as u64;
                step(dim, &mut x, &v, dt, &mut rng);
            }
            (rec, clips)
        })
        .collect();
    let clip_events: u64 = runs.iter().map(|r| r.1).sum();
    if clip_events > 0 {
        log::warn!("velocity cap {} hit {clip_events} times", config.velocity_cap);
    }
    let positions = (0..times.len())
        .map(|r| runs.iter().map(|(rec, _)| rec[r]).collect())
        .collect();
    Ok(ParticleEnsemble {
        dim,
        seed,
        dt_sim: dt,
        times,
        positions,
        clip_events,
    })
}

/// Periodic Gaussian kernel weights on grid offsets `0..n`.
fn periodic_kernel(n: usize, h: f64, bandwidth: f64) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let base = j as f64 * h;
            let images = (bandwidth * 8.0).ceil() as i64 + 1;
            (-images..=images)
                .map(|l| {
                    let d = base + l as f64;
                    (-d * d / (2.0 * bandwidth * bandwidth)).exp()
                })
                .sum()
        })
        .collect()
}

fn kde(points: &[Point], grid: TorusGrid, bandwidth: f64) -> ScalarField {
    let n = grid.n();
    let nf = n as f64;
    // cloud-in-cell binning
    let mut hist = vec![0.0; grid.len()];
    for x in points {
        let locate = |c: f64| {
            let s = wrap(c) * nf;
            let i = (s.floor() as usize).min(n - 1);
            (i, s - i as f64, (i + 1) % n)
        };
        let (i0, t0, i1) = locate(x[0]);
        if grid.dim() == 1 {
            hist[i0] += 1.0 - t0;
            hist[i1] += t0;
        } else {
            let (j0, t1, j1) = locate(x[1]);
            hist[i0 * n + j0] += (1.0 - t0) * (1.0 - t1);
            hist[i0 * n + j1] += (1.0 - t0) * t1;
            hist[i1 * n + j0] += t0 * (1.0 - t1);
            hist[i1 * n + j1] += t0 * t1;
        }
    }
    let k = periodic_kernel(n, grid.h(), bandwidth);
    let conv_axis = |src: &[f64], axis: usize| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for (idx, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..n {
                let w = k[j];
                if w == 0.0 {
                    continue;
                }
                acc += w * src[grid.neighbor(idx, axis, j as isize)];
            }
            *o = acc;
        }
        out
    };
    let mut dens = conv_axis(&hist, 0);
    if grid.dim() == 2 {
        dens = conv_axis(&dens, 1);
    }
    let mass: f64 = dens.iter().sum::<f64>() * grid.cell_volume();
    let values = dens.into_iter().map(|v| v / mass).collect();
    ScalarField::new(grid, values).expect("grid-sized buffer")
}

/// Periodic Gaussian KDE of every recorded slice, each normalized to unit mass.
pub fn empirical_density(ens: &ParticleEnsemble, grid: TorusGrid, bandwidth: f64) -> Result<Vec<ScalarField>> {
    if grid.dim() != ens.dim {
        return Err(MfgError::validation("ensemble and grid dimensions differ"));
    }
    if !(bandwidth >= grid.h()) {
        return Err(MfgError::validation(format!(
            "bandwidth {bandwidth} is below the grid spacing {}",
            grid.h()
        )));
    }
    Ok(ens.positions.par_iter().map(|p| kde(p, grid, bandwidth)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub particles: usize,
    pub clip_events: u64,
}

fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

fn running_cost<H: Hamiltonian + ?Sized>(
    model: &H,
    coupling: &CouplingParams,
    x: &Point,
    v: &Point,
    p: &Point,
    m: f64,
) -> Result<f64> {
    let l = legendre_from(model, x, v, *p)?.value;
    Ok(l + coupling.g(m.max(0.0)))
}

/// Monte-Carlo estimate of `E[∫_t^T (L(x, v) - w(m+ε)^{-α}) ds + u_T(x(T))]`
/// for trajectories started at `x0` at time index `round(t/dt)`; `m` is the
/// PDE density, interpolated.
#[allow(clippy::too_many_arguments)]
pub fn empirical_cost<H: Hamiltonian + ?Sized>(
    sol: &TimeDependentSolution,
    model: &H,
    coupling: &CouplingParams,
    x0: Point,
    t: f64,
    n_particles: usize,
    seed: u64,
    config: &McConfig,
) -> Result<CostEstimate> {
    if n_particles < 2 {
        return Err(MfgError::validation("need at least two particles for a standard error"));
    }
    if !(0.0..=sol.t_final).contains(&t) {
        return Err(MfgError::validation(format!("start time {t} outside [0, T]")));
    }
    let grid = *sol.grid();
    let dim = grid.dim();
    let dt = sol.dt();
    let start = (t / dt).round() as usize;
    let grads = gradient_path(sol);
    let results: Vec<Result<(f64, u64)>> = (0..n_particles)
        .into_par_iter()
        .map(|i| {
            let mut rng = particle_rng(seed, i);
            let mut x = [wrap(x0[0]), if dim == 2 { wrap(x0[1]) } else { 0.0 }];
            let mut cost = 0.0;
            let mut clips = 0;
            for k in start..sol.nt {
                let p = interp_vec(&grads[k + 1], &x);
                let (v, clipped) = velocity(model, &x, &p, config.velocity_cap);
                clips += clipped as u64;
                let m = interpolate(&grid, sol.m[k + 1].values(), &x);
                cost += dt * running_cost(model, coupling, &x, &v, &p, m)?;
                step(dim, &mut x, &v, dt, &mut rng);
            }
            cost += interpolate(&grid, sol.ut.values(), &x);
            Ok((cost, clips))
        })
        .collect();
    let mut samples = Vec::with_capacity(n_particles);
    let mut clip_events = 0;
    for r in results {
        let (c, k) = r?;
        samples.push(c);
        clip_events += k;
    }
    let (mean, std_err) = mean_and_se(&samples);
    Ok(CostEstimate {
        mean,
        std_err,
        particles: n_particles,
        clip_events,
    })
}

/// Long-time average of the running cost under the stationary feedback,
/// started from the stationary density and averaged after the burn-in. The
/// target value is `-H̄`.
pub fn ergodic_cost<H: Hamiltonian + ?Sized>(
    sol: &StationarySolution,
    model: &H,
    coupling: &CouplingParams,
    seed: u64,
    config: &McConfig,
) -> Result<CostEstimate> {
    config.validate()?;
    let grid = *sol.grid();
    let dim = grid.dim();
    let dt = config.ergodic_dt;
    let steps = (config.ergodic_horizon / dt).round() as usize;
    let burn = (config.ergodic_burn_in / dt).round() as usize;
    let p_field = grad(&sol.u);
    let start = sample_initial(&sol.m, config.ergodic_particles, seed)?;
    let results: Vec<Result<(f64, u64)>> = start
        .into_par_iter()
        .map(|(mut x, mut rng)| {
            let mut acc = 0.0;
            let mut clips = 0;
            for k in 0..steps {
                let p = interp_vec(&p_field, &x);
                let (v, clipped) = velocity(model, &x, &p, config.velocity_cap);
                clips += clipped as u64;
                if k >= burn {
                    let m = interpolate(&grid, sol.m.values(), &x);
                    acc += running_cost(model, coupling, &x, &v, &p, m)?;
                }
                step(dim, &mut x, &v, dt, &mut rng);
            }
            Ok((acc / (steps - burn) as f64, clips))
        })
        .collect();
    let mut samples = Vec::with_capacity(results.len());
    let mut clip_events = 0;
    for r in results {
        let (c, k) = r?;
        samples.push(c);
        clip_events += k;
    }
    let (mean, std_err) = mean_and_se(&samples);
    Ok(CostEstimate {
        mean,
        std_err,
        particles: samples.len(),
        clip_events,
    })
}

/// Sup distance between the empirical CDF of `xs` and the CDF of the
/// piecewise-linear interpolant of a 1-d density.
pub fn ks_distance(xs: &[f64], m: &ScalarField) -> f64 {
    let cdf = LinearCdf::new(m);
    let total = *cdf.cumulative.last().expect("non-empty");
    let eval = |x: f64| {
        let s = x / cdf.h;
        let i = (s.floor() as usize).min(cdf.values.len() - 1);
        let t = s - i as f64;
        let a = cdf.values[i];
        let b = cdf.values[(i + 1) % cdf.values.len()] - a;
        (cdf.cumulative[i] + cdf.h * (a * t + 0.5 * b * t * t)) / total
    };
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = eval(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}
