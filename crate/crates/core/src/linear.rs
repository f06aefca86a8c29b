//! The generic linear system behind the linearized, second-order and adjoint problems.
//!
//! With lumped masses `M`, `M_G`, stiffness `K` and `A = K + T^T K_G T`, one
//! backward Euler step for `(chi, mu)` reads
//!
//! ```text
//! M (chi - chi_old) + dt K mu = 0
//! M mu = B (chi - chi_old) / dt + A chi + M lambda_eff chi - d
//! ```
//!
//! with `B = M + T^T M_G T`, `M lambda_eff = M lambda + T^T M_G lambda_G T` and
//! load `d = -M g + T^T M_G g_G`. Since `M` is diagonal, `mu` is eliminated and each
//! step becomes `S chi = R chi_old + dt K (d / m)` with
//! `S = M + K M^-1 (B + dt A) + dt K diag(lambda_eff)` and `R = M + K M^-1 B`.
//! The adjoint sweep applies `S^T` and `R^T` to the same matrices.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{Geometry, TimeGrid};
use crate::sparse::{CscMatrix, LinearSolverKind, LuFactor, LuPattern, StepSolver};

/// Grids plus the time-step matrices that do not depend on the potential.
#[derive(Debug)]
pub struct Discretization {
    pub geom: Geometry,
    pub tgrid: TimeGrid,
    pub solver: LinearSolverKind,
    m: Vec<f64>,
    b: Vec<f64>,
    rho: Vec<f64>,
    a: CscMatrix,
    s0: CscMatrix,
    k_entries: Vec<(usize, f64)>,
    k_pos: Vec<usize>,
    pattern: LuPattern,
    precond: Option<Arc<LuFactor>>,
}

impl Discretization {
    pub fn new(geom: Geometry, tgrid: TimeGrid, solver: LinearSolverKind) -> Result<Self> {
        let n = geom.n_bulk();
        let dt = tgrid.dt;
        let m = geom.bulk_weights().to_vec();
        let mut b = m.clone();
        let mut rho = vec![0.0; n];
        for (bi, &k) in geom.trace_index().iter().enumerate() {
            b[k] += geom.bdry_weights()[bi];
            rho[k] = geom.bdry_weights()[bi] / m[k];
        }
        let k = geom.stiffness();
        let mut t: Vec<(usize, usize, f64)> = k.entries().collect();
        let ti = geom.trace_index();
        t.extend(geom.bdry_stiffness().entries().map(|(r, c, v)| (ti[r], ti[c], v)));
        let a = CscMatrix::from_triplets(n, &t);

        let inv_m: Vec<f64> = m.iter().map(|v| 1.0 / v).collect();
        let ka = k.mul_diag_mat(&inv_m, &a);
        let mut t: Vec<(usize, usize, f64)> = ka.entries().map(|(r, c, v)| (r, c, dt * v)).collect();
        t.extend(k.entries().map(|(r, c, v)| (r, c, v * b[c] / m[c])));
        t.extend((0..n).map(|i| (i, i, m[i])));
        let s0 = CscMatrix::from_triplets(n, &t);

        let k_entries: Vec<(usize, f64)> = k.entries().map(|(_, c, v)| (c, v)).collect();
        let k_pos = k
            .entries()
            .map(|(r, c, _)| s0.position(r, c).expect("stiffness pattern is contained in the step pattern"))
            .collect();
        let pattern = LuPattern::analyze(&s0)?;
        let precond = match solver {
            LinearSolverKind::DirectLu => None,
            LinearSolverKind::Krylov => Some(Arc::new(
                pattern.factor(&s0).map_err(|reason| Error::LinearSolveFailed { step: 0, reason })?,
            )),
        };
        Ok(Self { geom, tgrid, solver, m, b, rho, a, s0, k_entries, k_pos, pattern, precond })
    }

    pub fn n(&self) -> usize {
        self.m.len()
    }

    pub fn dt(&self) -> f64 {
        self.tgrid.dt
    }

    pub fn nt(&self) -> usize {
        self.tgrid.nt
    }

    /// Diagonal of `B = M + T^T M_G T`.
    pub fn b_diag(&self) -> &[f64] {
        &self.b
    }

    /// `A = K + T^T K_G T`.
    pub fn a_matrix(&self) -> &CscMatrix {
        &self.a
    }

    /// Potential-free step matrix.
    pub fn s0(&self) -> &CscMatrix {
        &self.s0
    }

    /// `lambda + (m_G / m) T^T lambda_G`.
    pub fn lambda_eff(&self, lambda: &[f64], lambda_gamma: &[f64]) -> Vec<f64> {
        let mut out = lambda.to_vec();
        for (bi, &k) in self.geom.trace_index().iter().enumerate() {
            out[k] += self.rho[k] * lambda_gamma[bi];
        }
        out
    }

    pub fn step_matrix(&self, lambda_eff: &[f64]) -> CscMatrix {
        let dt = self.dt();
        let mut vals = self.s0.values().to_vec();
        for (&(c, v), &p) in self.k_entries.iter().zip(&self.k_pos) {
            vals[p] += dt * v * lambda_eff[c];
        }
        self.s0.with_values(vals)
    }

    /// Solver for the step matrix with the given `lambda_eff`; `step` labels errors.
    pub fn step_solver(&self, lambda_eff: &[f64], step: usize) -> Result<StepSolver> {
        let matrix = self.step_matrix(lambda_eff);
        match &self.precond {
            None => {
                let lu = self
                    .pattern
                    .factor(&matrix)
                    .map_err(|reason| Error::LinearSolveFailed { step, reason })?;
                Ok(StepSolver::Direct { matrix, lu })
            }
            Some(p) => Ok(StepSolver::Krylov { matrix, precond: Arc::clone(p) }),
        }
    }

    pub(crate) fn solve_step(&self, solver: &StepSolver, rhs: &[f64], transpose: bool, step: usize) -> Result<Vec<f64>> {
        solver
            .solve(rhs, transpose, self.geom.lin_tol)
            .map_err(|reason| Error::LinearSolveFailed { step, reason })
    }

    /// `R x = M x + K (B x / m)`.
    pub fn apply_r(&self, x: &[f64]) -> Vec<f64> {
        let bx: Vec<f64> = x.iter().zip(&self.b).zip(&self.m).map(|((x, b), m)| x * b / m).collect();
        let mut out = self.geom.stiffness().mul_vec(&bx);
        for i in 0..out.len() {
            out[i] += self.m[i] * x[i];
        }
        out
    }

    /// `R^T x = M x + B (K x) / m`.
    pub fn apply_r_transpose(&self, x: &[f64]) -> Vec<f64> {
        let kx = self.geom.stiffness().mul_vec(x);
        (0..x.len()).map(|i| self.m[i] * x[i] + self.b[i] * kx[i] / self.m[i]).collect()
    }

    /// `d = -M g + T^T M_G g_G`.
    pub fn load(&self, g: &[f64], g_gamma: &[f64]) -> Vec<f64> {
        let mut d: Vec<f64> = g.iter().zip(&self.m).map(|(g, m)| -m * g).collect();
        for (bi, &k) in self.geom.trace_index().iter().enumerate() {
            d[k] += self.geom.bdry_weights()[bi] * g_gamma[bi];
        }
        d
    }

    /// `K (v / m)`.
    pub(crate) fn k_over_m(&self, v: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = v.iter().zip(&self.m).map(|(v, m)| v / m).collect();
        self.geom.stiffness().mul_vec(&scaled)
    }

    /// `mu = [B (chi - chi_old) / dt + A chi + m lambda_eff chi - d] / m`.
    pub fn potential(&self, chi: &[f64], chi_old: &[f64], lambda_eff: &[f64], d: &[f64]) -> Vec<f64> {
        let dt = self.dt();
        let ax = self.a.mul_vec(chi);
        (0..chi.len())
            .map(|i| {
                (self.b[i] * (chi[i] - chi_old[i]) / dt + ax[i] + self.m[i] * lambda_eff[i] * chi[i] - d[i])
                    / self.m[i]
            })
            .collect()
    }
}

/// Sources of the linear system per step `t_1 .. t_nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearData {
    pub g: Vec<Vec<f64>>,
    pub g_gamma: Vec<Vec<f64>>,
}

impl LinearData {
    pub fn zeros(disc: &Discretization) -> Self {
        Self {
            g: vec![vec![0.0; disc.n()]; disc.nt()],
            g_gamma: vec![vec![0.0; disc.geom.n_bdry()]; disc.nt()],
        }
    }

    /// `g = 0`, `g_G = h`: the data of the linearized state system.
    pub fn boundary(disc: &Discretization, h: &[Vec<f64>]) -> Self {
        Self { g: vec![vec![0.0; disc.n()]; disc.nt()], g_gamma: h.to_vec() }
    }

    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        let lin = |x: &Vec<Vec<f64>>, y: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            x.iter()
                .zip(y)
                .map(|(u, v)| u.iter().zip(v).map(|(p, q)| a * p + b * q).collect())
                .collect()
        };
        Self { g: lin(&self.g, &other.g), g_gamma: lin(&self.g_gamma, &other.g_gamma) }
    }
}

/// `chi` at nodes `t_0 .. t_nt` and `mu` at steps `t_1 .. t_nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolution {
    pub chi: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
}

/// Step residuals of a candidate `(chi, mu)`: the mass equation and the recovered load.
#[derive(Debug, Clone)]
pub struct OperatorResidual {
    /// `M (chi - chi_old) / dt + K mu`.
    pub mass: Vec<Vec<f64>>,
    /// `B (chi - chi_old) / dt + A chi + M lambda_eff chi - M mu`, which equals `d` on a solution.
    pub load: Vec<Vec<f64>>,
}

/// Factored step matrices for fixed coefficients `lambda`, `lambda_G`.
#[derive(Debug)]
pub struct Linearization {
    lambda_eff: Vec<Vec<f64>>,
    solvers: Vec<StepSolver>,
    pub lambda_sup: f64,
    pub lambda_gamma_sup: f64,
}

impl Linearization {
    /// Assembles and factors the step matrices for `lambda` (bulk) and `lambda_G` (boundary) per step.
    pub fn new(disc: &Discretization, lambda: &[Vec<f64>], lambda_gamma: &[Vec<f64>]) -> Result<Self> {
        if lambda.len() != disc.nt() || lambda_gamma.len() != disc.nt() {
            return Err(Error::InvalidInput(format!("coefficients must hold {} steps", disc.nt())));
        }
        let mut lambda_eff = Vec::with_capacity(disc.nt());
        let mut solvers = Vec::with_capacity(disc.nt());
        for (k, (l, lg)) in lambda.iter().zip(lambda_gamma).enumerate() {
            let le = disc.lambda_eff(l, lg);
            solvers.push(disc.step_solver(&le, k + 1)?);
            lambda_eff.push(le);
        }
        Ok(Self::from_parts(lambda_eff, solvers, sup(lambda), sup(lambda_gamma)))
    }

    pub(crate) fn from_parts(lambda_eff: Vec<Vec<f64>>, solvers: Vec<StepSolver>, lambda_sup: f64, lambda_gamma_sup: f64) -> Self {
        Self { lambda_eff, solvers, lambda_sup, lambda_gamma_sup }
    }

    pub fn nt(&self) -> usize {
        self.solvers.len()
    }

    pub fn step_matrix(&self, step: usize) -> &CscMatrix {
        self.solvers[step - 1].matrix()
    }

    pub fn lambda_eff(&self, step: usize) -> &[f64] {
        &self.lambda_eff[step - 1]
    }

    /// Forward sweep from `chi0`.
    pub fn solve(&self, disc: &Discretization, data: &LinearData, chi0: &[f64]) -> Result<LinearSolution> {
        let dt = disc.dt();
        let mut chi = Vec::with_capacity(self.nt() + 1);
        let mut mu = Vec::with_capacity(self.nt());
        chi.push(chi0.to_vec());
        for k in 0..self.nt() {
            let old = &chi[k];
            let d = disc.load(&data.g[k], &data.g_gamma[k]);
            let mut rhs = disc.apply_r(old);
            for (r, v) in rhs.iter_mut().zip(disc.k_over_m(&d)) {
                *r += dt * v;
            }
            let x = disc.solve_step(&self.solvers[k], &rhs, false, k + 1)?;
            mu.push(disc.potential(&x, old, &self.lambda_eff[k], &d));
            chi.push(x);
        }
        Ok(LinearSolution { chi, mu })
    }

    /// Backward transposed sweep: `S_k^T p_k = c_k + R^T p_(k+1)`, `p_(nt+1) = 0`.
    /// Returns `p_1 .. p_nt`, and for every `e` one has
    /// `sum_k c_k . chi_k = sum_k p_k . e_k` where `e_k` is the right-hand side of step `k`.
    pub fn solve_transpose(&self, disc: &Discretization, c: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let nt = self.nt();
        let mut p = vec![Vec::new(); nt];
        let mut next: Option<Vec<f64>> = None;
        for k in (0..nt).rev() {
            let mut rhs = c[k].clone();
            if let Some(pn) = &next {
                for (r, v) in rhs.iter_mut().zip(disc.apply_r_transpose(pn)) {
                    *r += v;
                }
            }
            let x = disc.solve_step(&self.solvers[k], &rhs, true, k + 1)?;
            next = Some(x.clone());
            p[k] = x;
        }
        Ok(p)
    }

    /// Residuals of the unreduced step equations for a candidate solution.
    pub fn apply_operator(&self, disc: &Discretization, sol: &LinearSolution) -> OperatorResidual {
        let dt = disc.dt();
        let mut mass = Vec::with_capacity(self.nt());
        let mut load = Vec::with_capacity(self.nt());
        for k in 0..self.nt() {
            let (old, new, mu) = (&sol.chi[k], &sol.chi[k + 1], &sol.mu[k]);
            let kmu = disc.geom.stiffness().mul_vec(mu);
            mass.push((0..new.len()).map(|i| disc.m[i] * (new[i] - old[i]) / dt + kmu[i]).collect());
            let zero = vec![0.0; new.len()];
            let mut d = disc.potential(new, old, &self.lambda_eff[k], &zero);
            for i in 0..d.len() {
                d[i] = disc.m[i] * (d[i] - mu[i]);
            }
            load.push(d);
        }
        OperatorResidual { mass, load }
    }

    /// Block bidiagonal reduced operator: `(L chi)_k = S_k chi_k - R chi_(k-1)` with `chi_0 = 0`.
    pub fn apply_reduced(&self, disc: &Discretization, chi: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..self.nt())
            .map(|k| {
                let mut out = self.solvers[k].matrix().mul_vec(&chi[k]);
                if k > 0 {
                    for (o, v) in out.iter_mut().zip(disc.apply_r(&chi[k - 1])) {
                        *o -= v;
                    }
                }
                out
            })
            .collect()
    }

    /// `(L^T p)_k = S_k^T p_k - R^T p_(k+1)`.
    pub fn apply_reduced_transpose(&self, disc: &Discretization, p: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let nt = self.nt();
        (0..nt)
            .map(|k| {
                let mut out = self.solvers[k].matrix().mul_vec_transpose(&p[k]);
                if k + 1 < nt {
                    for (o, v) in out.iter_mut().zip(disc.apply_r_transpose(&p[k + 1])) {
                        *o -= v;
                    }
                }
                out
            })
            .collect()
    }
}

fn sup(v: &[Vec<f64>]) -> f64 {
    v.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()))
}
