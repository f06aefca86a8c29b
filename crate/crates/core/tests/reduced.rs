mod common;

use chb_core::potentials::{PotentialPair, PotentialSpec};
use chb_core::reduced::ReducedProblem;
use chb_core::trajectory::BoundaryTrajectory;
use common::*;

fn problem() -> ReducedProblem {
    tracking_problem(strip(16, 8, 0.3, 10), 1.0, 1.0, 0.1)
}

#[test]
fn perfect_tracking_costs_nothing() {
    let mut p = tracking_problem(strip(12, 6, 0.2, 5), 1.0, 1.0, 0.0);
    let u = control(&p.disc, 2, 0.4);
    let st = p.state(&u).unwrap();
    p.cost.z_q = st.y[1..].to_vec();
    p.cost.z_sigma = BoundaryTrajectory { steps: (1..=p.disc.nt()).map(|k| st.y_gamma(&p.disc, k)).collect() };
    assert_eq!(p.eval_j(&u).unwrap(), 0.0);
}

/// Weights rebuilt from the spacings: half cells on the two boundary rows.
fn oracle_j(p: &ReducedProblem, u: &BoundaryTrajectory) -> f64 {
    let g = &p.disc.geom;
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy, dt) = (g.hx, g.hy, p.disc.dt());
    let st = p.state(u).unwrap();
    let (mut q, mut s, mut c) = (0.0, 0.0, 0.0);
    for k in 1..=p.disc.nt() {
        for j in 0..=ny {
            let w = if j == 0 || j == ny { 0.5 * hx * hy } else { hx * hy };
            for i in 0..nx {
                let idx = j * nx + i;
                q += dt * w * (st.y[k][idx] - p.cost.z_q[k - 1][idx]).powi(2);
            }
        }
        for (b, &idx) in [0usize, ny].iter().flat_map(|&j| (0..nx).map(move |i| j * nx + i)).collect::<Vec<_>>().iter().enumerate() {
            s += dt * hx * (st.y[k][idx] - p.cost.z_sigma.steps[k - 1][b]).powi(2);
            c += dt * hx * u.steps[k - 1][b].powi(2);
        }
    }
    0.5 * (p.cost.b_q * q + p.cost.b_sigma * s + p.cost.b0 * c)
}

#[test]
fn cost_matches_independent_summation() {
    let p = problem();
    let u = control(&p.disc, 3, 0.5);
    let j = p.eval_j(&u).unwrap();
    assert!(j >= 0.0);
    assert!(rel(j, oracle_j(&p, &u)) < 1e-13);
}

#[test]
fn pure_penalty_cost_is_half_the_control_norm() {
    let p = tracking_problem(strip(12, 6, 0.2, 5), 0.0, 0.0, 1.0);
    let u = control(&p.disc, 3, 0.5);
    let expect = 0.5 * u.steps.iter().flatten().map(|v| p.disc.dt() * p.disc.geom.hx * v * v).sum::<f64>();
    assert!(rel(p.eval_j(&u).unwrap(), expect) < 1e-14);
}

#[test]
fn hessian_form_is_symmetric_and_matches_second_order_route() {
    let p = problem();
    let u = control(&p.disc, 3, 0.5);
    let rec = p.evaluate(&u, true).unwrap();
    let z = BoundaryTrajectory::zeros(&p.disc.geom, &p.disc.tgrid);
    assert_eq!(p.hessian_form(&rec, &z, &z).unwrap(), 0.0);
    for s in 0..3 {
        let (h, k) = (control(&p.disc, 20 + s, 1.0), control(&p.disc, 40 + s, 1.0));
        let hk = p.hessian_form(&rec, &h, &k).unwrap();
        let kh = p.hessian_form(&rec, &k, &h).unwrap();
        let d2s = p.hessian_via_d2s(&rec, &h, &k).unwrap();
        assert!(rel(hk, kh) <= 1e-12, "symmetry {hk} vs {kh}");
        assert!(rel(hk, d2s) <= 1e-8, "cross-check {hk} vs {d2s}");
    }
}

#[test]
fn hessian_reduces_to_penalty_without_tracking() {
    let p = tracking_problem(strip(12, 6, 0.2, 5), 0.0, 0.0, 0.7);
    let u = control(&p.disc, 3, 0.5);
    let rec = p.evaluate(&u, true).unwrap();
    let h = control(&p.disc, 9, 1.0);
    let form = p.hessian_form(&rec, &h, &h).unwrap();
    assert!(rel(form, 0.7 * h.inner(&h, &p.disc.geom, &p.disc.tgrid)) <= 1e-14);
}

#[test]
fn gradient_of_gradient_converges_to_hessian() {
    let p = problem();
    let (geom, tg) = (&p.disc.geom, &p.disc.tgrid);
    let u = control(&p.disc, 3, 0.5);
    let (h, k) = (control(&p.disc, 61, 1.0), control(&p.disc, 62, 1.0));
    let rec = p.evaluate(&u, true).unwrap();
    let base = rec.gradient.as_ref().unwrap().inner(&h, geom, tg);
    let hess = p.hessian_form(&rec, &h, &k).unwrap();
    let eps = [1e-1, 5e-2, 2.5e-2, 1.25e-2];
    let errs: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let r = p.evaluate(&u.axpy(e, &k), true).unwrap();
            ((r.gradient.unwrap().inner(&h, geom, tg) - base) / e - hess).abs()
        })
        .collect();
    let slope = chb_core::potentials::loglog_slope(&eps, &errs);
    assert!((slope - 1.0).abs() < 0.2, "slope {slope}, errors {errs:?}");
}

#[test]
fn taylor_remainder_is_cubic() {
    let p = problem();
    let u = control(&p.disc, 3, 0.5);
    let v = control(&p.disc, 71, 1.0);
    let z = BoundaryTrajectory::zeros(&p.disc.geom, &p.disc.tgrid);
    let r0 = p.taylor_remainder_probe(&u, &z, &[1.0]).unwrap();
    assert_eq!(r0.rows[0].remainder, 0.0);
    let rep = p.taylor_remainder_probe(&u, &v, &[2e-1, 1e-1, 5e-2, 2.5e-2]).unwrap();
    eprintln!("{:?}", rep.rows);
    assert!((2.7..=3.3).contains(&rep.slope), "slope {}", rep.slope);
}

#[test]
fn quadratic_potential_has_no_cubic_remainder() {
    let mut p = problem();
    p.pots = PotentialPair::same(PotentialSpec::polynomial(vec![0.0, 0.0, 0.5]).unwrap());
    let u = control(&p.disc, 3, 0.5);
    let v = control(&p.disc, 71, 1.0);
    let j = p.eval_j(&u).unwrap();
    let rep = p.taylor_remainder_probe(&u, &v, &[2e-1, 1e-1, 5e-2, 2.5e-2]).unwrap();
    eprintln!("{:?}", rep.rows);
    for (i, row) in rep.rows.iter().enumerate() {
        let cubic_bound = 1e-6 * j * (row.eps / rep.rows[0].eps).powi(3);
        assert!(row.remainder <= cubic_bound.max(1e-11 * j), "row {i}: {row:?}");
    }
}
