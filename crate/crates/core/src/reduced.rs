//! Reduced cost `J(u) = J(S(u), u)`, its gradient, Hessian form and Taylor probes.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::adjoint::{reduced_gradient, solve_adjoint, AdjointTrajectory, CostSpec};
use crate::error::Result;
use crate::linear::Discretization;
use crate::potentials::{loglog_slope, PotentialPair};
use crate::sensitivity::{apply_d2s_from, apply_ds, trajectory_axpy, trajectory_diff, SensitivityTrajectory};
use crate::state::{solve_state, NewtonOptions, StateTrajectory};
use crate::trajectory::{BoundaryTrajectory, ControlTrajectory};

static SOLVE_IDS: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    SOLVE_IDS.fetch_add(1, Ordering::Relaxed)
}

/// Everything that defines the reduced functional.
#[derive(Debug)]
pub struct ReducedProblem {
    pub disc: Discretization,
    pub pots: PotentialPair,
    pub y0: Vec<f64>,
    pub cost: CostSpec,
    pub newton: NewtonOptions,
}

#[derive(Debug)]
pub struct EvalRecord {
    pub value: f64,
    pub gradient: Option<BoundaryTrajectory>,
    pub state: StateTrajectory,
    pub adjoint: Option<AdjointTrajectory>,
    pub state_id: u64,
    pub adjoint_id: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorRow {
    pub eps: f64,
    pub remainder: f64,
    /// Local slope against the previous row (NaN for the first).
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct TaylorReport {
    pub rows: Vec<TaylorRow>,
    pub slope: f64,
}

impl TaylorReport {
    fn from_pairs(eps: &[f64], rem: &[f64]) -> Self {
        let rows = (0..eps.len())
            .map(|i| TaylorRow {
                eps: eps[i],
                remainder: rem[i],
                slope: if i == 0 { f64::NAN } else { (rem[i] / rem[i - 1]).ln() / (eps[i] / eps[i - 1]).ln() },
            })
            .collect();
        Self { rows, slope: loglog_slope(eps, rem) }
    }
}

impl ReducedProblem {
    pub fn state(&self, u: &ControlTrajectory) -> Result<StateTrajectory> {
        solve_state(&self.disc, &self.pots, &self.y0, u, &self.newton)
    }

    pub fn eval_j(&self, u: &ControlTrajectory) -> Result<f64> {
        Ok(self.evaluate(u, false)?.value)
    }

    /// State solve, cost and optionally the adjoint and gradient.
    pub fn evaluate(&self, u: &ControlTrajectory, with_gradient: bool) -> Result<EvalRecord> {
        self.cost.validate(&self.disc)?;
        let state = self.state(u)?;
        let value = self.cost.value(&self.disc, &state, u);
        let mut rec = EvalRecord { value, gradient: None, state, adjoint: None, state_id: next_id(), adjoint_id: None };
        if with_gradient {
            self.attach_gradient(&mut rec, u)?;
        }
        Ok(rec)
    }

    pub fn attach_gradient(&self, rec: &mut EvalRecord, u: &ControlTrajectory) -> Result<()> {
        if rec.adjoint.is_none() {
            let adj = solve_adjoint(&self.disc, &rec.state, &self.cost)?;
            rec.gradient = Some(reduced_gradient(&adj, u, &self.cost));
            rec.adjoint = Some(adj);
            rec.adjoint_id = Some(next_id());
        }
        Ok(())
    }

    fn tracking_quadratic(&self, phi: &SensitivityTrajectory, psi: &SensitivityTrajectory, h: &ControlTrajectory, k: &ControlTrajectory) -> f64 {
        let (geom, dt) = (&self.disc.geom, self.disc.dt());
        let mut s = 0.0;
        for n in 1..=self.disc.nt() {
            let (a, b) = (&phi.chi[n], &psi.chi[n]);
            s += dt * (self.cost.b_q * geom.inner(a, b) + self.cost.b_sigma * geom.bdry_inner(&geom.trace(a), &geom.trace(b)));
        }
        s + self.cost.b0 * h.inner(k, geom, &self.disc.tgrid)
    }

    /// Adjoint representation of `D^2 J(u)[h, k]` from precomputed `DS h`, `DS k`.
    pub fn hessian_from(
        &self,
        rec: &EvalRecord,
        phi: &SensitivityTrajectory,
        psi: &SensitivityTrajectory,
        h: &ControlTrajectory,
        k: &ControlTrajectory,
    ) -> Result<f64> {
        let adj = rec.adjoint.as_ref().expect("record carries an adjoint");
        let (geom, dt) = (&self.disc.geom, self.disc.dt());
        let mut curvature = 0.0;
        for n in 1..=self.disc.nt() {
            let y = &rec.state.y[n];
            let f3 = self.pots.bulk.eval_field(3, y)?;
            let f3g = self.pots.bdry.eval_field(3, &geom.trace(y))?;
            let (a, b) = (&phi.chi[n], &psi.chi[n]);
            let prod: Vec<f64> = (0..a.len()).map(|i| f3[i] * (a[i] * b[i])).collect();
            let (ag, bg) = (geom.trace(a), geom.trace(b));
            let prod_g: Vec<f64> = (0..ag.len()).map(|i| f3g[i] * (ag[i] * bg[i])).collect();
            curvature += dt * (geom.inner(&adj.q[n - 1], &prod) + geom.bdry_inner(&adj.q_gamma.steps[n - 1], &prod_g));
        }
        Ok(self.tracking_quadratic(phi, psi, h, k) - curvature)
    }

    /// `D^2 J(u)[h, k]` by the adjoint representation; `rec` must carry the adjoint.
    pub fn hessian_form(&self, rec: &EvalRecord, h: &ControlTrajectory, k: &ControlTrajectory) -> Result<f64> {
        let (phi, psi) = rayon::join(|| apply_ds(&self.disc, &rec.state, h), || apply_ds(&self.disc, &rec.state, k));
        self.hessian_from(rec, &phi?, &psi?, h, k)
    }

    /// `D^2 J(u)[h, h]` for many directions in parallel.
    pub fn hessian_diagonal(&self, rec: &EvalRecord, dirs: &[ControlTrajectory]) -> Result<Vec<f64>> {
        dirs.par_iter()
            .map(|h| {
                let phi = apply_ds(&self.disc, &rec.state, h)?;
                self.hessian_from(rec, &phi, &phi, h, h)
            })
            .collect()
    }

    /// `D^2 J(u)[h, k]` through the second-order state derivative:
    /// `D_y J . D^2 S[h, k]` plus the quadratic part of `J`.
    pub fn hessian_via_d2s(&self, rec: &EvalRecord, h: &ControlTrajectory, k: &ControlTrajectory) -> Result<f64> {
        let phi = apply_ds(&self.disc, &rec.state, h)?;
        let psi = apply_ds(&self.disc, &rec.state, k)?;
        let eta = apply_d2s_from(&self.disc, &rec.state, &self.pots, &phi, &psi)?;
        let c = self.cost.residual_loads(&self.disc, &rec.state);
        let first: f64 = (1..=self.disc.nt())
            .map(|n| c[n - 1].iter().zip(&eta.chi[n]).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        Ok(first + self.tracking_quadratic(&phi, &psi, h, k))
    }

    /// Cubic remainder `J(u + s v) - J(u) - s DJ(u) v - s^2/2 D^2 J(u)[v, v]` over the scales `s`.
    pub fn taylor_remainder_probe(&self, u: &ControlTrajectory, v: &ControlTrajectory, scales: &[f64]) -> Result<TaylorReport> {
        let rec = self.evaluate(u, true)?;
        let g = rec.gradient.as_ref().expect("gradient attached");
        let dj = g.inner(v, &self.disc.geom, &self.disc.tgrid);
        let d2j = self.hessian_form(&rec, v, v)?;
        let mut rem = Vec::with_capacity(scales.len());
        for &s in scales {
            let j = self.eval_j(&u.axpy(s, v))?;
            rem.push((j - rec.value - s * dj - 0.5 * s * s * d2j).abs());
        }
        Ok(TaylorReport::from_pairs(scales, &rem))
    }

    /// Central finite differences of `J` against `(DJ(u), h)`: relative errors per `eps`.
    pub fn gradient_check(&self, u: &ControlTrajectory, h: &ControlTrajectory, eps: &[f64]) -> Result<(f64, TaylorReport)> {
        let rec = self.evaluate(u, true)?;
        let g = rec.gradient.as_ref().expect("gradient attached");
        let dj = g.inner(h, &self.disc.geom, &self.disc.tgrid);
        let errs: Vec<f64> = eps
            .iter()
            .map(|&e| {
                let jp = self.eval_j(&u.axpy(e, h))?;
                let jm = self.eval_j(&u.axpy(-e, h))?;
                Ok(((jp - jm) / (2.0 * e) - dj).abs() / dj.abs().max(f64::MIN_POSITIVE))
            })
            .collect::<Result<_>>()?;
        Ok((dj, TaylorReport::from_pairs(eps, &errs)))
    }

    /// First- and second-order Taylor remainders of the state map in the `Y` norm.
    pub fn state_taylor_probe(&self, u: &ControlTrajectory, h: &ControlTrajectory, eps: &[f64]) -> Result<(TaylorReport, TaylorReport)> {
        let (disc, geom) = (&self.disc, &self.disc.geom);
        let base = self.state(u)?;
        let xi = apply_ds(disc, &base, h)?;
        let eta = apply_d2s_from(disc, &base, &self.pots, &xi, &xi)?;
        let mut r1 = Vec::with_capacity(eps.len());
        let mut r2 = Vec::with_capacity(eps.len());
        for &e in eps {
            let st = self.state(&u.axpy(e, h))?;
            let d1 = trajectory_axpy(&trajectory_diff(&st.y, &base.y), -e, &xi.chi);
            r1.push(geom.trajectory_norms(&disc.tgrid, &d1).y);
            let d2 = trajectory_axpy(&d1, -0.5 * e * e, &eta.chi);
            r2.push(geom.trajectory_norms(&disc.tgrid, &d2).y);
        }
        Ok((TaylorReport::from_pairs(eps, &r1), TaylorReport::from_pairs(eps, &r2)))
    }
}
