mod common;

use std::f64::consts::PI;

use chb_core::geometry::Mode;
use chb_core::linear::Discretization;
use chb_core::potentials::{loglog_slope, PotentialPair, PotentialSpec};
use chb_core::state::{solve_state, solve_state_forced, stability_probe, Forcing, NewtonMode, NewtonOptions};
use chb_core::trajectory::BoundaryTrajectory;
use common::*;

#[test]
fn constant_critical_point_is_a_fixed_point() {
    let d = strip(8, 4, 0.2, 5);
    let pots = PotentialPair::same(PotentialSpec::regular());
    let u = BoundaryTrajectory::zeros(&d.geom, &d.tgrid);
    let st = solve_state(&d, &pots, &vec![0.0; d.n()], &u, &NewtonOptions::default()).unwrap();
    assert_eq!(max_abs(&st.y), 0.0);
    assert_eq!(max_abs(&st.w), 0.0);
}

#[test]
fn mean_is_preserved_for_random_data() {
    let d = strip(16, 8, 0.3, 10);
    let pots = log_pair();
    let y0: Vec<f64> = random_field(d.n(), 5).iter().map(|v| 0.15 + 0.4 * v).collect();
    let u = control(&d, 3, 1.0);
    let st = solve_state(&d, &pots, &y0, &u, &NewtonOptions::default()).unwrap();
    let m0 = d.geom.mean_value(&y0);
    assert!((d.geom.mean_value(&st.y[d.nt()]) - m0).abs() <= 1e-10);
    assert!(st.max_drift(&d) <= 1e-10 * m0.abs().max(1.0));
    assert!(st.y_min > -1.0 && st.y_max < 1.0);
    for diag in &st.diagnostics {
        assert!(diag.final_residual() <= 1e-10 || diag.residuals.len() > 1);
    }
}

#[test]
fn reuse_and_exact_newton_agree() {
    let d = strip(16, 8, 0.2, 8);
    let pots = log_pair();
    let y0 = initial(&d.geom, 0.1, 0.4);
    let u = control(&d, 9, 0.5);
    let a = solve_state(&d, &pots, &y0, &u, &NewtonOptions::default()).unwrap();
    let b = solve_state(&d, &pots, &y0, &u, &NewtonOptions { mode: NewtonMode::Exact, ..Default::default() }).unwrap();
    assert!(max_abs_diff(&a.y, &b.y) < 1e-8);
    let fa: usize = a.diagnostics.iter().map(|x| x.factorizations).sum();
    let fb: usize = b.diagnostics.iter().map(|x| x.factorizations).sum();
    assert!(fa <= fb);
}

#[test]
fn free_energy_does_not_increase_without_control() {
    let d = strip(16, 8, 0.5, 20);
    let pots = log_pair();
    let y0 = initial(&d.geom, 0.0, 0.5);
    let u = BoundaryTrajectory::zeros(&d.geom, &d.tgrid);
    let st = solve_state(&d, &pots, &y0, &u, &NewtonOptions::default()).unwrap();
    assert_eq!(st.energy_increases(), 0, "energy {:?}", st.energy);
    assert!(st.energy[d.nt()] < st.energy[0]);
}

#[test]
fn initial_state_outside_domain_is_rejected() {
    let d = strip(8, 4, 0.1, 2);
    let mut y0 = vec![0.0; d.n()];
    y0[3] = 1.2;
    let u = BoundaryTrajectory::zeros(&d.geom, &d.tgrid);
    assert!(solve_state(&d, &log_pair(), &y0, &u, &NewtonOptions::default()).is_err());
}

/// Manufactured solution: everything a function of `(x, z, t)` with `z` the normal coordinate.
struct Mms {
    y: fn(f64, f64, f64) -> f64,
    yt: fn(f64, f64, f64) -> f64,
    lap: fn(f64, f64, f64) -> f64,
    w: fn(f64, f64, f64) -> f64,
    lapw: fn(f64, f64, f64) -> f64,
    /// Outward normal derivative and tangential Laplacian at boundary point of the given line.
    dn: fn(f64, usize, f64) -> f64,
    lapg: fn(f64, usize, f64) -> f64,
}

fn bulk_point(d: &Discretization, k: usize) -> (f64, f64) {
    let (a, b) = d.geom.coords(k);
    match d.geom.mode {
        Mode::Strip2d => (a, b),
        Mode::Interval1d => (a, 0.0),
    }
}

fn mms_error(d: &Discretization, s: &Mms) -> f64 {
    let pots = log_pair();
    let (n, nt) = (d.n(), d.nt());
    let field = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        (0..n).map(|k| {
            let (x, z) = bulk_point(d, k);
            f(x, z)
        }).collect()
    };
    let mut s_y = Vec::with_capacity(nt);
    let mut s_w = Vec::with_capacity(nt);
    let mut steps = Vec::with_capacity(nt);
    for step in 1..=nt {
        let t = d.tgrid.node(step);
        s_y.push(field(&|x, z| (s.yt)(x, z, t) - (s.lapw)(x, z, t)));
        s_w.push(field(&|x, z| {
            let y = (s.y)(x, z, t);
            (s.yt)(x, z, t) - (s.lap)(x, z, t) + pots.bulk.eval_derivative(1, y).unwrap() - (s.w)(x, z, t)
        }));
        let u: Vec<f64> = d
            .geom
            .trace_index()
            .iter()
            .enumerate()
            .map(|(b, &k)| {
                let (x, z) = bulk_point(d, k);
                let line = b / (d.geom.n_bdry() / 2);
                let y = (s.y)(x, z, t);
                (s.dn)(x, line, t) + (s.yt)(x, z, t) - (s.lapg)(x, line, t) + pots.bdry.eval_derivative(1, y).unwrap()
            })
            .collect();
        steps.push(u);
    }
    let y0 = field(&|x, z| (s.y)(x, z, 0.0));
    let u = BoundaryTrajectory { steps };
    let st = solve_state_forced(d, &pots, &y0, &u, Some(&Forcing { s_y, s_w }), &NewtonOptions::default()).unwrap();
    let exact = field(&|x, z| (s.y)(x, z, d.tgrid.t_final));
    st.y[nt].iter().zip(&exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

// strip, linear in time so that backward Euler is exact in time
fn q(z: f64) -> f64 {
    1.0 + 0.5 * z - 0.4 * z * z
}
fn amp(t: f64) -> f64 {
    0.3 * (1.0 - t)
}
fn bw(t: f64) -> f64 {
    0.2 * (1.0 + t)
}

const STRIP_LINEAR: Mms = Mms {
    y: |x, z, t| 0.1 + amp(t) * (PI * x).cos() * q(z),
    yt: |x, z, _| -0.3 * (PI * x).cos() * q(z),
    lap: |x, z, t| amp(t) * (PI * x).cos() * (-PI * PI * q(z) - 0.8),
    w: |x, z, t| bw(t) * (PI * x).cos() * (PI * z).cos(),
    lapw: |x, z, t| -2.0 * PI * PI * bw(t) * (PI * x).cos() * (PI * z).cos(),
    dn: |x, line, t| {
        let qp = if line == 0 { -0.5 } else { 0.5 - 0.8 };
        amp(t) * (PI * x).cos() * qp
    },
    lapg: |x, line, t| -PI * PI * amp(t) * (PI * x).cos() * q(line as f64),
};

#[test]
fn manufactured_solution_spatial_order_two() {
    let mut errs = Vec::new();
    let mut hs = Vec::new();
    for ny in [4usize, 8, 16, 32] {
        let d = strip(2 * ny, ny, 0.2, 4);
        hs.push(d.geom.hy);
        errs.push(mms_error(&d, &STRIP_LINEAR));
    }
    let slope = loglog_slope(&hs, &errs);
    eprintln!("spatial errors {errs:?} slope {slope:.3}");
    assert!((slope - 2.0).abs() < 0.3, "spatial slope {slope}, errors {errs:?}");
}

// interval, exponential in time on a fine grid
const INTERVAL_EXP: Mms = Mms {
    y: |x, _, t| 0.1 + 0.3 * (-2.0 * t).exp() * ((PI * x).cos() + 0.2 * x),
    yt: |x, _, t| -0.6 * (-2.0 * t).exp() * ((PI * x).cos() + 0.2 * x),
    lap: |x, _, t| -0.3 * (-2.0 * t).exp() * PI * PI * (PI * x).cos(),
    w: |x, _, t| 0.2 * t.cos() * (PI * x).cos(),
    lapw: |x, _, t| -0.2 * t.cos() * PI * PI * (PI * x).cos(),
    dn: |_, line, t| if line == 0 { -0.06 } else { 0.06 } * (-2.0 * t).exp(),
    lapg: |_, _, _| 0.0,
};

#[test]
fn manufactured_solution_temporal_order_one() {
    let mut errs = Vec::new();
    let mut dts = Vec::new();
    for nt in [5usize, 10, 20, 40] {
        let d = disc(Mode::Interval1d, 800, 0, 0.5, nt);
        dts.push(d.dt());
        errs.push(mms_error(&d, &INTERVAL_EXP));
    }
    let slope = loglog_slope(&dts, &errs);
    eprintln!("temporal errors {errs:?} slope {slope:.3}");
    assert!((slope - 1.0).abs() < 0.2, "temporal slope {slope}, errors {errs:?}");
}

#[test]
fn stability_probe_identical_inputs() {
    let d = strip(8, 4, 0.2, 4);
    let u = control(&d, 1, 0.5);
    let r = stability_probe(&d, &log_pair(), &initial(&d.geom, 0.1, 0.3), &u, &u, &NewtonOptions::default()).unwrap();
    assert!(r.is_none());
}

#[test]
fn stability_ratio_is_lipschitz_in_eps_and_bounded_over_pairs() {
    let d = strip(16, 8, 0.3, 10);
    let pots = log_pair();
    let y0 = initial(&d.geom, 0.1, 0.3);
    let opts = NewtonOptions::default();
    let u1 = control(&d, 2, 0.5);
    let h = control(&d, 3, 1.0);
    let ratios: Vec<f64> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&e| stability_probe(&d, &pots, &y0, &u1, &u1.axpy(e, &h), &opts).unwrap().unwrap())
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi / lo < 1.5, "ratios over eps {ratios:?}");

    let pairs: Vec<f64> = (0..10)
        .map(|s| {
            let a = control(&d, 100 + s, 0.8);
            let b = control(&d, 200 + s, 0.8);
            stability_probe(&d, &pots, &y0, &a, &b, &opts).unwrap().unwrap()
        })
        .collect();
    let max = pairs.iter().copied().fold(0.0, f64::max);
    let mut sorted = pairs.clone();
    sorted.sort_by(f64::total_cmp);
    assert!(max.is_finite() && max <= 10.0 * sorted[5], "pair ratios {pairs:?}");
}
