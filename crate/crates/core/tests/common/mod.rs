#![allow(dead_code)]

use std::f64::consts::PI;

use chb_core::adjoint::CostSpec;
use chb_core::geometry::{Geometry, Mode, TimeGrid};
use chb_core::linear::Discretization;
use chb_core::potentials::{PotentialPair, PotentialSpec};
use chb_core::reduced::ReducedProblem;
use chb_core::sparse::LinearSolverKind;
use chb_core::state::{solve_state, NewtonOptions};
use chb_core::trajectory::{smooth_random, BoundaryTrajectory, ControlTrajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn disc(mode: Mode, nx: usize, ny: usize, t_final: f64, nt: usize) -> Discretization {
    let geom = Geometry::new(mode, nx, ny, 2.0, 1.0).unwrap();
    Discretization::new(geom, TimeGrid::new(t_final, nt).unwrap(), LinearSolverKind::DirectLu).unwrap()
}

pub fn strip(nx: usize, ny: usize, t_final: f64, nt: usize) -> Discretization {
    disc(Mode::Strip2d, nx, ny, t_final, nt)
}

pub fn log_pair() -> PotentialPair {
    PotentialPair::same(PotentialSpec::logarithmic(2.0).unwrap())
}

/// Smooth initial state with mean near `mean`.
pub fn initial(geom: &Geometry, mean: f64, amp: f64) -> Vec<f64> {
    (0..geom.n_bulk())
        .map(|k| {
            let (x, y) = geom.coords(k);
            let ly = if geom.ly > 0.0 { geom.ly } else { 1.0 };
            mean + amp * ((2.0 * PI * x / geom.lx).cos() * (PI * y / ly).cos() + 0.3 * (4.0 * PI * x / geom.lx).sin())
        })
        .collect()
}

pub fn random_field(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_steps(nt: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..nt).map(|k| random_field(n, seed.wrapping_mul(1000).wrapping_add(k as u64))).collect()
}

pub fn control(disc: &Discretization, seed: u64, amp: f64) -> ControlTrajectory {
    smooth_random(&disc.geom, &disc.tgrid, seed, amp)
}

/// Tracking problem whose targets are the state of a reference control, perturbed.
pub fn tracking_problem(disc: Discretization, b_q: f64, b_sigma: f64, b0: f64) -> ReducedProblem {
    let pots = log_pair();
    let y0 = initial(&disc.geom, 0.1, 0.3);
    let newton = NewtonOptions::default();
    let reference = control(&disc, 7, 0.5);
    let st = solve_state(&disc, &pots, &y0, &reference, &newton).unwrap();
    let z_q: Vec<Vec<f64>> = (1..=disc.nt())
        .map(|k| {
            st.y[k]
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let (x, _) = disc.geom.coords(i);
                    v + 0.05 * (2.0 * PI * x / disc.geom.lx).sin()
                })
                .collect()
        })
        .collect();
    let z_sigma = BoundaryTrajectory {
        steps: (1..=disc.nt()).map(|k| disc.geom.trace(&st.y[k]).iter().map(|v| v - 0.05).collect()).collect(),
    };
    let cost = CostSpec::tracking(b_q, b_sigma, b0, z_q, z_sigma);
    ReducedProblem { disc, pots, y0, cost, newton }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()))
}
