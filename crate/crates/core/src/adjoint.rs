//! Tracking cost and its discrete adjoint.
//!
//! The adjoint is the algebraic transpose of the linearized time stepping. With
//! `c_k = dt [b_Q M (y_k - z_Q,k) + b_S T^T M_G (T y_k - z_S,k)]` the backward sweep
//! `S_k^T p_k = c_k + R^T p_(k+1)`, `p_(nt+1) = 0`, gives `q_k = M^-1 K p_k` and
//! `q_G = T q`. For every direction `h` the tracking derivative then equals
//! `sum_k dt (q_G,k, h_k)_G` exactly.

use crate::error::{Error, Result};
use crate::linear::{Discretization, LinearSolution};
use crate::state::StateTrajectory;
use crate::trajectory::{BoundaryTrajectory, ControlTrajectory};

#[derive(Debug, Clone)]
pub struct CostSpec {
    pub b_q: f64,
    pub b_sigma: f64,
    pub b_omega: f64,
    pub b_gamma: f64,
    pub b0: f64,
    /// Bulk target per step `t_1 .. t_nt`.
    pub z_q: Vec<Vec<f64>>,
    pub z_sigma: BoundaryTrajectory,
    /// Final-time targets; only zero weights are supported.
    pub z_omega: Vec<f64>,
    pub z_gamma: Vec<f64>,
}

impl CostSpec {
    /// Cost without final-time terms.
    pub fn tracking(b_q: f64, b_sigma: f64, b0: f64, z_q: Vec<Vec<f64>>, z_sigma: BoundaryTrajectory) -> Self {
        let (n, nb) = (z_q.first().map_or(0, Vec::len), z_sigma.steps.first().map_or(0, Vec::len));
        Self { b_q, b_sigma, b_omega: 0.0, b_gamma: 0.0, b0, z_q, z_sigma, z_omega: vec![0.0; n], z_gamma: vec![0.0; nb] }
    }

    pub fn validate(&self, disc: &Discretization) -> Result<()> {
        let w = [self.b_q, self.b_sigma, self.b_omega, self.b_gamma, self.b0];
        if w.iter().any(|&b| !(b >= 0.0 && b.is_finite())) {
            return Err(Error::InvalidInput("cost weights must be finite and nonnegative".into()));
        }
        if w.iter().all(|&b| b == 0.0) {
            return Err(Error::InvalidInput("cost weights must not all vanish".into()));
        }
        if self.b_omega != 0.0 || self.b_gamma != 0.0 {
            return Err(Error::CompatibilityViolated { b_omega: self.b_omega, b_gamma: self.b_gamma });
        }
        if self.z_q.len() != disc.nt() || self.z_q.iter().any(|z| z.len() != disc.n()) {
            return Err(Error::InvalidInput(format!("z_Q must hold {} steps of {} values", disc.nt(), disc.n())));
        }
        self.z_sigma.check_shape(&disc.geom, &disc.tgrid)
    }

    /// Tracking residual loads `c_k`, `k = 1 .. nt`.
    pub fn residual_loads(&self, disc: &Discretization, state: &StateTrajectory) -> Vec<Vec<f64>> {
        let geom = &disc.geom;
        let dt = disc.dt();
        (1..=disc.nt())
            .map(|k| {
                let y = &state.y[k];
                let mut c: Vec<f64> = (0..y.len())
                    .map(|i| dt * self.b_q * geom.bulk_weights()[i] * (y[i] - self.z_q[k - 1][i]))
                    .collect();
                for (bi, &node) in geom.trace_index().iter().enumerate() {
                    c[node] += dt * self.b_sigma * geom.bdry_weights()[bi] * (y[node] - self.z_sigma.steps[k - 1][bi]);
                }
                c
            })
            .collect()
    }

    /// `1/2 b_Q |y - z_Q|^2_Q + 1/2 b_S |y_G - z_S|^2_S + 1/2 b_0 |u|^2_S`, right-endpoint rule in time.
    pub fn value(&self, disc: &Discretization, state: &StateTrajectory, u: &ControlTrajectory) -> f64 {
        let geom = &disc.geom;
        let dt = disc.dt();
        let mut bulk = 0.0;
        let mut bdry = 0.0;
        for k in 1..=disc.nt() {
            let y = &state.y[k];
            let e: Vec<f64> = y.iter().zip(&self.z_q[k - 1]).map(|(a, b)| a - b).collect();
            bulk += dt * geom.inner(&e, &e);
            let eb: Vec<f64> = geom.trace(y).iter().zip(&self.z_sigma.steps[k - 1]).map(|(a, b)| a - b).collect();
            bdry += dt * geom.bdry_inner(&eb, &eb);
        }
        0.5 * self.b_q * bulk + 0.5 * self.b_sigma * bdry + 0.5 * self.b0 * u.inner(u, geom, &disc.tgrid)
    }
}

#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    /// `p`, `q`, `q_G` per step `t_1 .. t_nt`.
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub q_gamma: BoundaryTrajectory,
}

pub fn solve_adjoint(disc: &Discretization, state: &StateTrajectory, cost: &CostSpec) -> Result<AdjointTrajectory> {
    cost.validate(disc)?;
    let c = cost.residual_loads(disc, state);
    solve_adjoint_loads(disc, state, &c)
}

/// Adjoint sweep for arbitrary loads `c_k`.
pub fn solve_adjoint_loads(disc: &Discretization, state: &StateTrajectory, c: &[Vec<f64>]) -> Result<AdjointTrajectory> {
    let p = state.linearization.solve_transpose(disc, c)?;
    let m = disc.geom.bulk_weights();
    let q: Vec<Vec<f64>> = p
        .iter()
        .map(|pk| disc.geom.stiffness().mul_vec(pk).iter().zip(m).map(|(v, m)| v / m).collect())
        .collect();
    let q_gamma = BoundaryTrajectory { steps: q.iter().map(|qk| disc.geom.trace(qk)).collect() };
    Ok(AdjointTrajectory { p, q, q_gamma })
}

/// `q_G + b_0 u`, the `L^2(Sigma)` representative of the reduced derivative.
pub fn reduced_gradient(adj: &AdjointTrajectory, u: &ControlTrajectory, cost: &CostSpec) -> BoundaryTrajectory {
    adj.q_gamma.axpy(cost.b0, u)
}

/// Both sides of the adjoint identity for a linearized solution `xi = DS(u) h`:
/// `b_Q (y - z_Q, xi)_Q + b_S (y_G - z_S, xi_G)_S` and `(q_G, h)_S`.
pub fn adjoint_identity(
    disc: &Discretization,
    state: &StateTrajectory,
    adj: &AdjointTrajectory,
    cost: &CostSpec,
    h: &ControlTrajectory,
    xi: &LinearSolution,
) -> (f64, f64) {
    let geom = &disc.geom;
    let dt = disc.dt();
    let mut lhs = 0.0;
    for k in 1..=disc.nt() {
        let y = &state.y[k];
        let e: Vec<f64> = y.iter().zip(&cost.z_q[k - 1]).map(|(a, b)| a - b).collect();
        let eb: Vec<f64> = geom.trace(y).iter().zip(&cost.z_sigma.steps[k - 1]).map(|(a, b)| a - b).collect();
        lhs += dt * (cost.b_q * geom.inner(&e, &xi.chi[k]) + cost.b_sigma * geom.bdry_inner(&eb, &geom.trace(&xi.chi[k])));
    }
    let rhs = adj.q_gamma.inner(h, geom, &disc.tgrid);
    (lhs, rhs)
}
