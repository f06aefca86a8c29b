//! First and second directional derivatives of the control-to-state map.

use rayon::prelude::*;

use crate::error::Result;
use crate::linear::{Discretization, LinearData, LinearSolution};
use crate::potentials::PotentialPair;
use crate::state::{solve_state, NewtonOptions, StateTrajectory};
use crate::trajectory::{smooth_random, ControlTrajectory};

/// Pair trajectory `(xi, xi_G)` (the trace of `chi`) with its potential.
pub type SensitivityTrajectory = LinearSolution;

/// `DS(u) h`: the linearized system with `g = 0`, `g_G = h` and zero initial data.
pub fn apply_ds(disc: &Discretization, state: &StateTrajectory, h: &ControlTrajectory) -> Result<SensitivityTrajectory> {
    h.check_shape(&disc.geom, &disc.tgrid)?;
    let data = LinearData::boundary(disc, &h.steps);
    state.linearization.solve(disc, &data, &vec![0.0; disc.n()])
}

/// Sources `g = f'''(y) phi psi`, `g_G = -f_G'''(y_G) phi_G psi_G` of the second-order system.
pub fn second_order_data(
    disc: &Discretization,
    state: &StateTrajectory,
    pots: &PotentialPair,
    phi: &SensitivityTrajectory,
    psi: &SensitivityTrajectory,
) -> Result<LinearData> {
    let geom = &disc.geom;
    let mut g = Vec::with_capacity(disc.nt());
    let mut g_gamma = Vec::with_capacity(disc.nt());
    for k in 1..=disc.nt() {
        let y = &state.y[k];
        let f3 = pots.bulk.eval_field(3, y)?;
        let f3g = pots.bdry.eval_field(3, &geom.trace(y))?;
        let (a, b) = (&phi.chi[k], &psi.chi[k]);
        g.push((0..y.len()).map(|i| f3[i] * (a[i] * b[i])).collect());
        let (ag, bg) = (geom.trace(a), geom.trace(b));
        g_gamma.push((0..ag.len()).map(|i| -f3g[i] * (ag[i] * bg[i])).collect());
    }
    Ok(LinearData { g, g_gamma })
}

/// `D^2 S(u)[h, k]` with zero initial data.
pub fn apply_d2s(
    disc: &Discretization,
    state: &StateTrajectory,
    pots: &PotentialPair,
    h: &ControlTrajectory,
    k: &ControlTrajectory,
) -> Result<SensitivityTrajectory> {
    let (phi, psi) = rayon::join(|| apply_ds(disc, state, h), || apply_ds(disc, state, k));
    apply_d2s_from(disc, state, pots, &phi?, &psi?)
}

/// `D^2 S(u)[h, k]` from precomputed `phi = DS h`, `psi = DS k`.
pub fn apply_d2s_from(
    disc: &Discretization,
    state: &StateTrajectory,
    pots: &PotentialPair,
    phi: &SensitivityTrajectory,
    psi: &SensitivityTrajectory,
) -> Result<SensitivityTrajectory> {
    let data = second_order_data(disc, state, pots, phi, psi)?;
    state.linearization.solve(disc, &data, &vec![0.0; disc.n()])
}

/// Difference of two node trajectories.
pub fn trajectory_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect()
}

/// `a + s b` for node trajectories.
pub fn trajectory_axpy(a: &[Vec<f64>], s: f64, b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + s * q).collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LipschitzProbe {
    /// `|S(u1) - S(u2)|_Y / |u1 - u2|`.
    State,
    /// `|(DS(u1) - DS(u2)) h|_Y / (|u1 - u2| |h|)`.
    Ds,
    /// `|(D^2 S(u1) - D^2 S(u2))[h, k]|_Y / (|u1 - u2| |h| |k|)`.
    D2s,
}

impl LipschitzProbe {
    pub fn name(self) -> &'static str {
        match self {
            LipschitzProbe::State => "state",
            LipschitzProbe::Ds => "ds",
            LipschitzProbe::D2s => "d2s",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzRow {
    pub probe: LipschitzProbe,
    pub sample: usize,
    pub eps: f64,
    pub ratio: f64,
}

/// Lipschitz quotients of `S`, `DS` and `D^2 S` for `u2 = u1 + eps d` over seeded smooth samples;
/// all norms of controls are `L^2(Sigma)`.
pub fn lipschitz_probes(
    disc: &Discretization,
    pots: &PotentialPair,
    y0: &[f64],
    opts: &NewtonOptions,
    samples: usize,
    eps: &[f64],
    seed: u64,
    amplitude: f64,
) -> Result<Vec<LipschitzRow>> {
    let (geom, tg) = (&disc.geom, &disc.tgrid);
    let per_sample = |s: usize| -> Result<Vec<LipschitzRow>> {
        let base = seed.wrapping_add(4 * s as u64);
        let u1 = smooth_random(geom, tg, base, amplitude);
        let dir = smooth_random(geom, tg, base + 1, amplitude);
        let h = smooth_random(geom, tg, base + 2, 1.0);
        let k = smooth_random(geom, tg, base + 3, 1.0);
        let (hn, kn) = (h.l2_norm(geom, tg), k.l2_norm(geom, tg));
        let s1 = solve_state(disc, pots, y0, &u1, opts)?;
        let ds1 = apply_ds(disc, &s1, &h)?;
        let d2s1 = apply_d2s(disc, &s1, pots, &h, &k)?;
        let mut rows = Vec::with_capacity(3 * eps.len());
        for &e in eps {
            let u2 = u1.axpy(e, &dir);
            let du = e * dir.l2_norm(geom, tg);
            let s2 = solve_state(disc, pots, y0, &u2, opts)?;
            let ds2 = apply_ds(disc, &s2, &h)?;
            let d2s2 = apply_d2s(disc, &s2, pots, &h, &k)?;
            let norm = |a: &[Vec<f64>], b: &[Vec<f64>]| geom.trajectory_norms(tg, &trajectory_diff(a, b)).y;
            let ratios = [
                (LipschitzProbe::State, norm(&s1.y, &s2.y) / du),
                (LipschitzProbe::Ds, norm(&ds1.chi, &ds2.chi) / (du * hn)),
                (LipschitzProbe::D2s, norm(&d2s1.chi, &d2s2.chi) / (du * hn * kn)),
            ];
            rows.extend(ratios.into_iter().map(|(probe, ratio)| LipschitzRow { probe, sample: s, eps: e, ratio }));
        }
        Ok(rows)
    };
    let all: Vec<Vec<LipschitzRow>> = (0..samples).into_par_iter().map(per_sample).collect::<Result<_>>()?;
    Ok(all.into_iter().flatten().collect())
}
