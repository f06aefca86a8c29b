//! Projected gradient descent over the admissible controls and the second-order checks at a solution.

use log::{info, warn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Geometry, TimeGrid};
use crate::reduced::{EvalRecord, ReducedProblem};
use crate::trajectory::{smooth_random, BoundaryTrajectory, ControlTrajectory};

/// Box `[u_min, u_max]` intersected with the budget `|d_t u|_Sigma <= M0`.
#[derive(Debug, Clone)]
pub struct AdmissibleSet {
    pub u_min: BoundaryTrajectory,
    pub u_max: BoundaryTrajectory,
    pub m0: f64,
    /// Radius of the working ball around zero in the control norm.
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectionInfo {
    /// The derivative budget was active and the fluctuation was rescaled.
    pub budget_active: bool,
}

impl AdmissibleSet {
    pub fn new(u_min: BoundaryTrajectory, u_max: BoundaryTrajectory, m0: f64, radius: f64) -> Self {
        Self { u_min, u_max, m0, radius }
    }

    pub fn validate(&self, geom: &Geometry, tgrid: &TimeGrid) -> Result<()> {
        self.u_min.check_shape(geom, tgrid)?;
        self.u_max.check_shape(geom, tgrid)?;
        let count = self.u_min.values().zip(self.u_max.values()).filter(|(a, b)| a > b).count();
        if count > 0 {
            return Err(Error::InfeasibleSet { count });
        }
        if !(self.m0 > 0.0) {
            return Err(Error::InvalidInput(format!("admissible.M0 must be positive, got {}", self.m0)));
        }
        if self.u_min.dt_norm(geom, tgrid) > self.m0 {
            return Err(Error::InvalidInput("u_min violates the derivative budget M0".into()));
        }
        Ok(())
    }

    pub fn contains(&self, v: &ControlTrajectory, geom: &Geometry, tgrid: &TimeGrid, tol: f64) -> bool {
        v.values().zip(self.u_min.values()).all(|(v, a)| *v >= a - tol)
            && v.values().zip(self.u_max.values()).all(|(v, b)| *v <= b + tol)
            && v.dt_norm(geom, tgrid) <= self.m0 * (1.0 + tol)
    }

    pub fn clamp(&self, v: &ControlTrajectory) -> ControlTrajectory {
        let lo = v.zip_map(&self.u_min, f64::max);
        lo.zip_map(&self.u_max, f64::min)
    }

    /// Clamp, then rescale the temporal fluctuation if the budget is exceeded and clamp once more.
    /// The result is exact `L^2` projection whenever the budget is inactive.
    pub fn project(&self, v: &ControlTrajectory, geom: &Geometry, tgrid: &TimeGrid) -> Result<(ControlTrajectory, ProjectionInfo)> {
        let count = self.u_min.values().zip(self.u_max.values()).filter(|(a, b)| a > b).count();
        if count > 0 {
            return Err(Error::InfeasibleSet { count });
        }
        let c = self.clamp(v);
        let d = c.dt_norm(geom, tgrid);
        if d <= self.m0 {
            return Ok((c, ProjectionInfo { budget_active: false }));
        }
        let mean = c.time_mean();
        let s = self.m0 / d;
        let scaled = BoundaryTrajectory {
            steps: c.steps.iter().map(|st| st.iter().zip(&mean).map(|(x, m)| m + s * (x - m)).collect()).collect(),
        };
        Ok((self.clamp(&scaled), ProjectionInfo { budget_active: true }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    /// Stop when the stationarity residual drops below `gtol` times its initial value.
    pub gtol: f64,
    pub alpha0: f64,
    pub shrink: f64,
    pub sigma: f64,
    pub max_backtracks: usize,
    /// Start each line search from the Barzilai-Borwein step instead of `alpha0`.
    pub barzilai_borwein: bool,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { max_iter: 500, gtol: 1e-8, alpha0: 1.0, shrink: 0.5, sigma: 1e-4, max_backtracks: 30, barzilai_borwein: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub j: f64,
    pub residual: f64,
    pub step: f64,
}

#[derive(Debug)]
pub struct OptimizeResult {
    pub u: ControlTrajectory,
    pub history: Vec<HistoryRow>,
    pub converged: bool,
    pub budget_activated: bool,
    /// Evaluation at the returned control, with adjoint and gradient.
    pub record: EvalRecord,
}

/// `|u - P(u - g)|_Sigma`.
pub fn stationarity_residual(prob: &ReducedProblem, adm: &AdmissibleSet, u: &ControlTrajectory, g: &BoundaryTrajectory) -> Result<f64> {
    let (geom, tgrid) = (&prob.disc.geom, &prob.disc.tgrid);
    let (p, _) = adm.project(&u.axpy(-1.0, g), geom, tgrid)?;
    Ok(u.sub(&p).l2_norm(geom, tgrid))
}

/// Projected gradient method with Armijo backtracking on the reduced cost.
pub fn optimize(prob: &ReducedProblem, adm: &AdmissibleSet, init: &ControlTrajectory, opts: &OptimizeOptions) -> Result<OptimizeResult> {
    let (geom, tgrid) = (&prob.disc.geom, &prob.disc.tgrid);
    adm.validate(geom, tgrid)?;
    if !adm.contains(init, geom, tgrid, 1e-12) {
        return Err(Error::InvalidInput("initial control is not admissible".into()));
    }
    let mut u = init.clone();
    let mut rec = prob.evaluate(&u, true)?;
    let mut res = stationarity_residual(prob, adm, &u, rec.gradient.as_ref().unwrap())?;
    let res0 = res;
    let mut history = vec![HistoryRow { iter: 0, j: rec.value, residual: res, step: 0.0 }];
    let mut budget_activated = false;
    let mut converged = res <= opts.gtol * res0 || res == 0.0;
    let mut iter = 0;
    let mut prev: Option<(ControlTrajectory, BoundaryTrajectory)> = None;
    while !converged && iter < opts.max_iter {
        iter += 1;
        let g = rec.gradient.clone().unwrap();
        let eps_f = 100.0 * f64::EPSILON * (1.0 + rec.value.abs());
        let mut alpha = opts.alpha0;
        if let (true, Some((pu, pg))) = (opts.barzilai_borwein, &prev) {
            let s = u.sub(pu);
            let sy = s.inner(&g.sub(pg), geom, tgrid);
            if sy > 0.0 {
                alpha = (s.inner(&s, geom, tgrid) / sy).clamp(1e-6 * opts.alpha0, 1e6 * opts.alpha0);
            }
        }
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let (trial, info) = adm.project(&u.axpy(-alpha, &g), geom, tgrid)?;
            budget_activated |= info.budget_active;
            let decrease = g.inner(&trial.sub(&u), geom, tgrid);
            let cand = prob.evaluate(&trial, false)?;
            if cand.value <= rec.value + opts.sigma * decrease + eps_f {
                accepted = Some((trial, cand));
                break;
            }
            alpha *= opts.shrink;
        }
        let Some((trial, mut cand)) = accepted else {
            warn!("line search failed at iteration {iter}; returning the current iterate");
            break;
        };
        prob.attach_gradient(&mut cand, &trial)?;
        prev = Some((std::mem::replace(&mut u, trial), g));
        rec = cand;
        res = stationarity_residual(prob, adm, &u, rec.gradient.as_ref().unwrap())?;
        history.push(HistoryRow { iter, j: rec.value, residual: res, step: alpha });
        info!("iter {iter}: J = {:.12e}, residual = {res:.3e}, step = {alpha}", rec.value);
        converged = res <= opts.gtol * res0;
    }
    if !converged {
        warn!("projected gradient stopped after {iter} iterations with residual {res:e}");
    }
    if budget_activated {
        warn!("the derivative budget M0 was active; projections were approximate");
    }
    Ok(OptimizeResult { u, history, converged, budget_activated, record: rec })
}

pub type Mask = Vec<Vec<bool>>;

/// Strongly active set `|q_G + b_0 u| > tau`.
pub fn build_active_set(gradient: &BoundaryTrajectory, tau: f64) -> Mask {
    gradient.steps.iter().map(|s| s.iter().map(|g| g.abs() > tau).collect()).collect()
}

/// Bound activity of `u` at each point: `-1` at `u_min`, `+1` at `u_max`, `0` otherwise.
pub fn bound_activity(u: &ControlTrajectory, adm: &AdmissibleSet, rel_tol: f64) -> Vec<Vec<i8>> {
    u.steps
        .iter()
        .zip(&adm.u_min.steps)
        .zip(&adm.u_max.steps)
        .map(|((s, lo), hi)| {
            s.iter()
                .zip(lo)
                .zip(hi)
                .map(|((&v, &a), &b)| {
                    let tol = rel_tol * (b - a).abs().max(f64::MIN_POSITIVE);
                    match (v - a <= tol, b - v <= tol) {
                        (true, true) => 2,
                        (true, false) => -1,
                        (false, true) => 1,
                        _ => 0,
                    }
                })
                .collect()
        })
        .collect()
}

/// Whether `h` satisfies the sign and zero pattern of the critical cone pointwise.
pub fn in_critical_cone(h: &ControlTrajectory, mask: &Mask, activity: &[Vec<i8>]) -> bool {
    h.steps.iter().zip(mask).zip(activity).all(|((s, m), a)| {
        s.iter().zip(m).zip(a).all(|((&v, &masked), &act)| {
            if masked || act == 2 {
                v == 0.0
            } else {
                match act {
                    -1 => v >= 0.0,
                    1 => v <= 0.0,
                    _ => true,
                }
            }
        })
    })
}

/// Tolerance defining `u = u_min` or `u = u_max` relative to `u_max - u_min`.
pub const ACTIVITY_TOL: f64 = 1e-10;

/// Smooth random directions in the critical cone, scaled into the derivative budget.
pub fn sample_critical_cone(
    geom: &Geometry,
    tgrid: &TimeGrid,
    ubar: &ControlTrajectory,
    mask: &Mask,
    adm: &AdmissibleSet,
    n: usize,
    seed: u64,
) -> Result<Vec<ControlTrajectory>> {
    let activity = bound_activity(ubar, adm, ACTIVITY_TOL);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let attempts = 4 * n.max(1);
    for _ in 0..attempts {
        if out.len() == n {
            break;
        }
        let h = smooth_random(geom, tgrid, rng.random(), 1.0);
        let mut steps = h.steps;
        for ((s, m), a) in steps.iter_mut().zip(mask).zip(&activity) {
            for ((v, &masked), &act) in s.iter_mut().zip(m).zip(a) {
                *v = if masked || act == 2 {
                    0.0
                } else {
                    match act {
                        -1 => v.abs(),
                        1 => -v.abs(),
                        _ => *v,
                    }
                };
            }
        }
        let mut h = BoundaryTrajectory { steps };
        if h.max_abs() == 0.0 {
            continue;
        }
        let d = h.dt_norm(geom, tgrid);
        if d > adm.m0 {
            h = h.scale(adm.m0 / d);
        }
        out.push(h);
    }
    if out.is_empty() {
        return Err(Error::EmptyCone { candidates: attempts });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthRow {
    pub x_dist: f64,
    pub sigma_dist: f64,
    pub dj: f64,
}

#[derive(Debug, Clone)]
pub struct SscReport {
    pub tau: f64,
    pub mask: Mask,
    pub active_points: usize,
    pub directions: Vec<ControlTrajectory>,
    pub quotients: Vec<f64>,
    pub delta_hat: f64,
    pub argmin: usize,
    pub growth: Vec<GrowthRow>,
    pub sigma_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthOptions {
    pub samples: usize,
    /// Largest control-norm distance of the growth samples.
    pub radius: f64,
    pub seed: u64,
}

/// Rayleigh quotients of the reduced Hessian on the sampled directions and a
/// quadratic growth estimate from admissible perturbations of `ubar`.
pub fn ssc_check(
    prob: &ReducedProblem,
    adm: &AdmissibleSet,
    ubar: &ControlTrajectory,
    rec: &EvalRecord,
    tau: f64,
    mask: Mask,
    directions: Vec<ControlTrajectory>,
    growth: &GrowthOptions,
) -> Result<SscReport> {
    let (geom, tgrid) = (&prob.disc.geom, &prob.disc.tgrid);
    if directions.is_empty() {
        return Err(Error::EmptyCone { candidates: 0 });
    }
    let forms = prob.hessian_diagonal(rec, &directions)?;
    let quotients: Vec<f64> = forms.iter().zip(&directions).map(|(f, h)| f / h.inner(h, geom, tgrid)).collect();
    let (argmin, delta_hat) = quotients
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, q)| if q < best.1 { (i, q) } else { best });

    let mut rng = ChaCha8Rng::seed_from_u64(growth.seed);
    let seeds: Vec<(u64, f64)> = (0..growth.samples)
        .map(|i| (rng.random(), 0.5f64.powi((i % 4) as i32)))
        .collect();
    let rows: Vec<GrowthRow> = seeds
        .par_iter()
        .map(|&(s, frac)| {
            let h = smooth_random(geom, tgrid, s, 1.0);
            let hx = h.x_norm(geom, tgrid);
            let (u, _) = adm.project(&ubar.axpy(frac * growth.radius / hx, &h), geom, tgrid)?;
            let d = u.sub(ubar);
            let j = prob.eval_j(&u)?;
            Ok(GrowthRow { x_dist: d.x_norm(geom, tgrid), sigma_dist: d.l2_norm(geom, tgrid), dj: j - rec.value })
        })
        .collect::<Result<_>>()?;
    let sigma_hat = rows
        .iter()
        .filter(|r| r.sigma_dist > 0.0)
        .map(|r| r.dj / (r.sigma_dist * r.sigma_dist))
        .fold(f64::INFINITY, f64::min);
    let active_points = mask.iter().flatten().filter(|&&m| m).count();
    Ok(SscReport { tau, mask, active_points, directions, quotients, delta_hat, argmin, growth: rows, sigma_hat })
}
