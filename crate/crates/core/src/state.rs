//! Nonlinear state solver: backward Euler with an inner Newton loop.
//!
//! Step `k` solves `F(y) = M (y - y_old) + dt K w(y) = dt M s_y` with
//! `M w(y) = B (y - y_old) / dt + A y + M f'(y) + T^T M_G (f_G'(T y) - u_k) - M s_w`.
//! The Jacobian of `F` is the step matrix of the linear system with
//! `lambda = f''(y)`, `lambda_G = f_G''(T y)`, so the factor computed at each
//! converged node is reused as the linearization for sensitivities and adjoints.

use log::warn;

use crate::error::{Error, Result};
use crate::linear::{Discretization, Linearization};
use crate::potentials::PotentialPair;
use crate::sparse::{inf_norm, StepSolver};
use crate::trajectory::ControlTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewtonMode {
    /// Chord iterations with the Jacobian of the previous node, refreshed on slow contraction.
    Reuse,
    /// A fresh Jacobian at every iterate.
    Exact,
}

impl std::str::FromStr for NewtonMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reuse" => Ok(NewtonMode::Reuse),
            "exact" => Ok(NewtonMode::Exact),
            other => Err(Error::InvalidInput(format!("unknown newton mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Absolute tolerance on the dual norm of the step residual.
    pub tol: f64,
    pub max_iter: usize,
    pub mode: NewtonMode,
    /// Contraction ratio above which the chord Jacobian is refreshed.
    pub refresh_ratio: f64,
    pub max_halvings: usize,
    /// Constant of the quadratic-tail diagnostic `r_(j+1) <= kappa r_j^2`.
    pub tail_kappa: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 30, mode: NewtonMode::Reuse, refresh_ratio: 0.1, max_halvings: 30, tail_kappa: 1e4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub factorizations: usize,
    pub halvings: usize,
}

impl StepDiagnostics {
    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().unwrap_or(&0.0)
    }
}

/// Extra sources for manufactured solutions, per step `t_1 .. t_nt`.
#[derive(Debug, Clone)]
pub struct Forcing {
    /// Added to the right-hand side of the mass equation.
    pub s_y: Vec<Vec<f64>>,
    /// Added to the right-hand side of the chemical potential equation.
    pub s_w: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub struct StateTrajectory {
    /// `y` at nodes `t_0 .. t_nt`; `y_G` is its trace.
    pub y: Vec<Vec<f64>>,
    /// `w` at steps `t_1 .. t_nt`.
    pub w: Vec<Vec<f64>>,
    pub m0: f64,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Discrete free energy at every node.
    pub energy: Vec<f64>,
    pub y_min: f64,
    pub y_max: f64,
    /// Guard clamps triggered during the solve.
    pub clamps: u64,
    pub linearization: Linearization,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservationRow {
    pub t: f64,
    pub mean: f64,
    pub drift: f64,
}

impl StateTrajectory {
    pub fn nt(&self) -> usize {
        self.w.len()
    }

    pub fn y_gamma(&self, disc: &Discretization, k: usize) -> Vec<f64> {
        disc.geom.trace(&self.y[k])
    }

    pub fn conservation(&self, disc: &Discretization) -> Vec<ConservationRow> {
        self.y
            .iter()
            .enumerate()
            .map(|(k, y)| {
                let mean = disc.geom.mean_value(y);
                ConservationRow { t: disc.tgrid.node(k), mean, drift: mean - self.m0 }
            })
            .collect()
    }

    pub fn max_drift(&self, disc: &Discretization) -> f64 {
        self.conservation(disc).iter().fold(0.0f64, |m, r| m.max(r.drift.abs()))
    }

    /// Number of steps at which the free energy increased.
    pub fn energy_increases(&self) -> usize {
        self.energy.windows(2).filter(|w| w[1] > w[0] + 1e-12 * w[0].abs().max(1.0)).count()
    }
}

/// Discrete free energy `1/2 |grad y|^2 + f(y)` in the bulk plus the same on the boundary.
pub fn free_energy(disc: &Discretization, pots: &PotentialPair, y: &[f64]) -> Result<f64> {
    let g = &disc.geom;
    let yb = g.trace(y);
    let f = pots.bulk.eval_field(0, y)?;
    let fg = pots.bdry.eval_field(0, &yb)?;
    Ok(0.5 * g.grad_inner(y, y)
        + f.iter().zip(g.bulk_weights()).map(|(f, w)| f * w).sum::<f64>()
        + 0.5 * g.bdry_grad_inner(&yb, &yb)
        + fg.iter().zip(g.bdry_weights()).map(|(f, w)| f * w).sum::<f64>())
}

pub fn solve_state(
    disc: &Discretization,
    pots: &PotentialPair,
    y0: &[f64],
    u: &ControlTrajectory,
    opts: &NewtonOptions,
) -> Result<StateTrajectory> {
    solve_state_forced(disc, pots, y0, u, None, opts)
}

fn separated(disc: &Discretization, pots: &PotentialPair, y: &[f64]) -> Option<f64> {
    if let Some(&v) = y.iter().find(|&&v| !pots.bulk.is_separated(v)) {
        return Some(v);
    }
    disc.geom.trace_index().iter().map(|&k| y[k]).find(|&v| !pots.bdry.is_separated(v))
}

struct StepProblem<'a> {
    disc: &'a Discretization,
    pots: &'a PotentialPair,
    y_old: &'a [f64],
    u: &'a [f64],
    s_y: Option<&'a [f64]>,
    s_w: Option<&'a [f64]>,
    step: usize,
}

/// Residual evaluation at one iterate.
struct Eval {
    f: Vec<f64>,
    norm: f64,
    /// Dual norm of the round-off envelope of `F`.
    floor: f64,
    w: Vec<f64>,
}

impl StepProblem<'_> {
    fn eval(&self, y: &[f64]) -> Result<Eval> {
        let disc = self.disc;
        let g = &disc.geom;
        let m = g.bulk_weights();
        let dt = disc.dt();
        let map = |e: Error| match e {
            Error::OutOfDomain { value, .. } => Error::SeparationLost { step: self.step, value },
            other => other,
        };
        let fy = self.pots.bulk.eval_field(1, y).map_err(map)?;
        let fg = self.pots.bdry.eval_field(1, &g.trace(y)).map_err(map)?;
        let ay = disc.a_matrix().mul_vec(y);
        let ay_abs = disc.a_matrix().mul_abs_vec(y);
        let b = disc.b_diag();
        let sw = |i: usize| self.s_w.map_or(0.0, |s| m[i] * s[i]);
        let mut w: Vec<f64> =
            (0..y.len()).map(|i| b[i] * (y[i] - self.y_old[i]) / dt + ay[i] + m[i] * fy[i] - sw(i)).collect();
        let mut env_w: Vec<f64> = (0..y.len())
            .map(|i| b[i] * (y[i].abs() + self.y_old[i].abs()) / dt + ay_abs[i] + m[i] * fy[i].abs() + sw(i).abs())
            .collect();
        for (bi, &k) in g.trace_index().iter().enumerate() {
            let mg = g.bdry_weights()[bi];
            w[k] += mg * (fg[bi] - self.u[bi]);
            env_w[k] += mg * (fg[bi].abs() + self.u[bi].abs());
        }
        for i in 0..y.len() {
            w[i] /= m[i];
            env_w[i] = f64::EPSILON * (env_w[i] / m[i] + w[i].abs());
        }
        let kw = g.stiffness().mul_vec(&w);
        let env_kw = g.stiffness().mul_abs_vec(&env_w);
        let env_kw2 = g.stiffness().mul_abs_vec(&w);
        let sy = |i: usize| self.s_y.map_or(0.0, |s| dt * m[i] * s[i]);
        let f: Vec<f64> = (0..y.len()).map(|i| m[i] * (y[i] - self.y_old[i]) + dt * kw[i] - sy(i)).collect();
        let dual = |v: &mut dyn Iterator<Item = f64>| v.zip(m).map(|(f, m)| (f / dt).powi(2) / m).sum::<f64>().sqrt();
        let norm = dual(&mut f.iter().copied());
        let floor = dual(&mut (0..y.len()).map(|i| {
            dt * env_kw[i] + f64::EPSILON * (m[i] * (y[i].abs() + self.y_old[i].abs()) + dt * env_kw2[i] + sy(i).abs())
        }));
        Ok(Eval { f, norm, floor, w })
    }
}

/// `(lambda_eff, sup f'', sup f_G'')` at `y`.
fn coefficients(disc: &Discretization, pots: &PotentialPair, y: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    let l = pots.bulk.eval_field(2, y)?;
    let lg = pots.bdry.eval_field(2, &disc.geom.trace(y))?;
    Ok((disc.lambda_eff(&l, &lg), inf_norm(&l), inf_norm(&lg)))
}

fn jacobian(disc: &Discretization, pots: &PotentialPair, y: &[f64], step: usize) -> Result<StepSolver> {
    let (le, _, _) = coefficients(disc, pots, y)?;
    disc.step_solver(&le, step)
}

fn newton_step(
    prob: &StepProblem,
    prev: Option<&StepSolver>,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, Vec<f64>, StepDiagnostics)> {
    let disc = prob.disc;
    let step = prob.step;
    let mut y = prob.y_old.to_vec();
    let mut cur = prob.eval(&y)?;
    let mut diag = StepDiagnostics { step, iterations: 0, residuals: vec![cur.norm], factorizations: 0, halvings: 0 };
    let mut fresh: Option<StepSolver> = None;
    // In reuse mode the previous node is the initial guess, so its Jacobian is exact here.
    let mut refresh = opts.mode == NewtonMode::Exact || prev.is_none();
    while cur.norm > opts.tol.max(cur.floor) {
        if diag.iterations >= opts.max_iter {
            return Err(Error::NewtonDiverged { step, history: diag.residuals });
        }
        if refresh {
            fresh = Some(jacobian(disc, prob.pots, &y, step)?);
            diag.factorizations += 1;
        }
        let solver = fresh.as_ref().or(prev).expect("a Jacobian is available");
        let neg: Vec<f64> = cur.f.iter().map(|v| -v).collect();
        let delta = disc.solve_step(solver, &neg, false, step)?;
        diag.iterations += 1;

        let mut alpha = 1.0;
        let mut accepted = None;
        let mut last_bad = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = y.iter().zip(&delta).map(|(y, d)| y + alpha * d).collect();
            if let Some(v) = separated(disc, prob.pots, &trial) {
                last_bad = Some(v);
            } else {
                let ev = prob.eval(&trial)?;
                if ev.norm < cur.norm {
                    accepted = Some((trial, ev));
                    break;
                }
            }
            alpha *= 0.5;
            diag.halvings += 1;
        }
        let Some((yt, ev)) = accepted else {
            if let Some(value) = last_bad {
                return Err(Error::SeparationLost { step, value });
            }
            return Err(Error::NewtonDiverged { step, history: diag.residuals });
        };
        let (r, rt) = (cur.norm, ev.norm);
        if opts.mode == NewtonMode::Exact && r < 1e-3 && rt > opts.tail_kappa * r * r && rt > opts.tol.max(ev.floor) {
            warn!("step {step}: Newton tail not quadratic ({r:e} -> {rt:e})");
        }
        y = yt;
        cur = ev;
        diag.residuals.push(rt);
        refresh = opts.mode == NewtonMode::Exact || rt / r > opts.refresh_ratio;
    }
    Ok((y, cur.w, diag))
}

/// State solve with optional manufactured-solution sources.
pub fn solve_state_forced(
    disc: &Discretization,
    pots: &PotentialPair,
    y0: &[f64],
    u: &ControlTrajectory,
    forcing: Option<&Forcing>,
    opts: &NewtonOptions,
) -> Result<StateTrajectory> {
    let geom = &disc.geom;
    if y0.len() != disc.n() {
        return Err(Error::InvalidInput(format!("initial state must hold {} values", disc.n())));
    }
    u.check_shape(geom, &disc.tgrid)?;
    let inside = |spec: &crate::potentials::PotentialSpec, v: f64| v > spec.r_minus && v < spec.r_plus;
    if let Some(&v) = y0.iter().find(|&&v| !inside(&pots.bulk, v) || !v.is_finite()) {
        return Err(Error::InvalidInput(format!("initial state {v} outside ({}, {})", pots.bulk.r_minus, pots.bulk.r_plus)));
    }
    if let Some(v) = geom.trace(y0).into_iter().find(|&v| !inside(&pots.bdry, v)) {
        return Err(Error::InvalidInput(format!("initial trace {v} outside ({}, {})", pots.bdry.r_minus, pots.bdry.r_plus)));
    }
    let nt = disc.nt();
    let clamps_before = pots.clamp_count();
    let m0 = geom.mean_value(y0);
    let mut ys = Vec::with_capacity(nt + 1);
    let mut ws = Vec::with_capacity(nt);
    let mut diagnostics = Vec::with_capacity(nt);
    let mut solvers = Vec::with_capacity(nt);
    let mut lambda_eff = Vec::with_capacity(nt);
    let (mut lsup, mut lgsup) = (0.0f64, 0.0f64);
    let mut energy = vec![free_energy(disc, pots, y0)?];
    ys.push(y0.to_vec());
    let initial = if opts.mode == NewtonMode::Reuse { Some(jacobian(disc, pots, y0, 0)?) } else { None };

    for step in 1..=nt {
        let prob = StepProblem {
            disc,
            pots,
            y_old: &ys[step - 1],
            u: &u.steps[step - 1],
            s_y: forcing.map(|f| f.s_y[step - 1].as_slice()),
            s_w: forcing.map(|f| f.s_w[step - 1].as_slice()),
            step,
        };
        let prev = match opts.mode {
            NewtonMode::Exact => None,
            NewtonMode::Reuse if step == 1 => initial.as_ref(),
            NewtonMode::Reuse => solvers.last(),
        };
        let (y, w, mut diag) = newton_step(&prob, prev, opts)?;
        let (le, ls, lgs) = coefficients(disc, pots, &y)?;
        solvers.push(disc.step_solver(&le, step)?);
        diag.factorizations += 1;
        lsup = lsup.max(ls);
        lgsup = lgsup.max(lgs);
        lambda_eff.push(le);
        energy.push(free_energy(disc, pots, &y)?);
        diagnostics.push(diag);
        ys.push(y);
        ws.push(w);
    }

    let y_min = ys.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if pots.bulk.has_finite_domain() {
        let band = 1e3 * pots.bulk.guard.max(f64::EPSILON);
        if y_min - pots.bulk.r_minus < band || pots.bulk.r_plus - y_max < band {
            warn!("state approaches the guard band: range [{y_min}, {y_max}]");
        }
    }
    let state = StateTrajectory {
        y: ys,
        w: ws,
        m0,
        diagnostics,
        energy,
        y_min,
        y_max,
        clamps: pots.clamp_count() - clamps_before,
        linearization: Linearization::from_parts(lambda_eff, solvers, lsup, lgsup),
    };
    if forcing.is_none() && u.max_abs() == 0.0 && state.energy_increases() > 0 {
        warn!("free energy increased at {} steps without control", state.energy_increases());
    }
    let drift = state.max_drift(disc);
    if forcing.is_none() && drift > 1e-10 * m0.abs().max(1.0) {
        warn!("mean drift {drift:e} exceeds the conservation tolerance");
    }
    Ok(state)
}

/// `|S(u1) - S(u2)|_Y / |u1 - u2|_L2(Sigma)`, or `None` for identical inputs.
pub fn stability_probe(
    disc: &Discretization,
    pots: &PotentialPair,
    y0: &[f64],
    u1: &ControlTrajectory,
    u2: &ControlTrajectory,
    opts: &NewtonOptions,
) -> Result<Option<f64>> {
    let du = u1.sub(u2).l2_norm(&disc.geom, &disc.tgrid);
    if du == 0.0 {
        return Ok(None);
    }
    let (s1, s2) = rayon::join(
        || solve_state(disc, pots, y0, u1, opts),
        || solve_state(disc, pots, y0, u2, opts),
    );
    let (s1, s2) = (s1?, s2?);
    let diff: Vec<Vec<f64>> = s1
        .y
        .iter()
        .zip(&s2.y)
        .map(|(a, b)| a.iter().zip(b).map(|(a, b)| a - b).collect())
        .collect();
    Ok(Some(disc.geom.trajectory_norms(&disc.tgrid, &diff).y / du))
}
