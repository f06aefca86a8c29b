use std::time::Instant;

use chb_core::adjoint::{adjoint_identity, solve_adjoint};
use chb_core::optimizer::{
    bound_activity, build_active_set, in_critical_cone, optimize, sample_critical_cone, ssc_check, AdmissibleSet, GrowthOptions,
    OptimizeResult, ACTIVITY_TOL,
};
use chb_core::potentials::{check_a2, fd_convergence, loglog_slope, PotentialPair, PotentialSpec};
use chb_core::reduced::ReducedProblem;
use chb_core::sensitivity::{apply_ds, lipschitz_probes, LipschitzProbe};
use chb_core::state::solve_state;
use chb_core::trajectory::{smooth_random, BoundaryTrajectory, ControlTrajectory};
use chb_core::Error;
use log::{info, warn};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::output::{num, row_len, Output};

/// Failed in-run assertions, reported together at the end of a subcommand.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        println!("{} {what}", if ok { "ok  " } else { "FAIL" });
        if !ok {
            self.failures.push(what);
        }
    }

    fn finish(self) -> CliResult<()> {
        if self.failures.is_empty() {
            Ok(())
        } else {
            Err(CliError::Assertion(self.failures.join("; ")))
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 { 0.0 } else { (a - b).abs() / s }
}

fn f(v: f64) -> String {
    num(v)
}

fn trajectory_rows(t: &BoundaryTrajectory) -> Vec<Vec<String>> {
    t.steps.iter().enumerate().map(|(k, s)| std::iter::once((k + 1).to_string()).chain(s.iter().map(|v| f(*v))).collect()).collect()
}

fn write_trajectory(out: &Output, name: &str, t: &BoundaryTrajectory) -> CliResult<()> {
    let n = t.steps.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("step".to_string()).chain((0..n).map(|b| format!("b{b}"))).collect();
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv(name, &hdr, trajectory_rows(t))
}

fn base_controls(cfg: &Config, p: &ReducedProblem) -> CliResult<(u64, ControlTrajectory)> {
    let seed = cfg.u64_or("checks.seed", 11)?;
    let amp = cfg.f64_or("checks.base_amplitude", 0.3)?;
    Ok((seed, smooth_random(&p.disc.geom, &p.disc.tgrid, seed, amp)))
}

pub fn simulate(cfg: &Config, out: &Output) -> CliResult<()> {
    let start = Instant::now();
    let disc = cfg.discretization()?;
    let pots = cfg.potentials()?;
    let y0 = cfg.initial_state(&disc.geom)?;
    let u = cfg.trajectory("control", &disc.geom, &disc.tgrid)?;
    let st = solve_state(&disc, &pots, &y0, &u, &cfg.newton()?)?;
    let elapsed = start.elapsed().as_secs_f64();

    let cons = st.conservation(&disc);
    out.csv("conservation.csv", &["t", "mean", "drift"], cons.iter().map(|r| vec![f(r.t), f(r.mean), f(r.drift)]))?;
    out.csv(
        "newton.csv",
        &["step", "iters", "final_residual", "factorizations", "halvings"],
        st.diagnostics.iter().map(|d| {
            vec![d.step.to_string(), d.iterations.to_string(), f(d.final_residual()), d.factorizations.to_string(), d.halvings.to_string()]
        }),
    )?;
    out.csv("energy.csv", &["t", "energy"], st.energy.iter().enumerate().map(|(k, e)| vec![f(disc.tgrid.node(k)), f(*e)]))?;
    let rl = row_len(&disc.geom);
    for k in cfg.usize_list_or("output.dump_nodes", &[])? {
        if k > disc.nt() {
            warn!("dump node {k} beyond nt = {}", disc.nt());
            continue;
        }
        out.field(&format!("y_{k:04}.csv"), &disc.geom, &st.y[k], rl)?;
        out.field(&format!("ygamma_{k:04}.csv"), &disc.geom, &st.y_gamma(&disc, k), rl)?;
        if k > 0 {
            out.field(&format!("w_{k:04}.csv"), &disc.geom, &st.w[k - 1], rl)?;
        }
    }

    let drift = st.max_drift(&disc);
    let tol = 1e-10 * st.m0.abs().max(1.0);
    println!("state solve {elapsed:.2} s, y in [{:.6}, {:.6}], clamps {}", st.y_min, st.y_max, st.clamps);
    let mut c = Checks::default();
    c.check(drift <= tol, format!("max mean drift {drift:.3e} <= {tol:.1e}"));
    if st.energy_increases() > 0 && u.max_abs() == 0.0 {
        warn!("free energy increased at {} steps", st.energy_increases());
    }
    c.finish()
}

fn run_optimize(cfg: &Config, out: &Output) -> CliResult<(ReducedProblem, AdmissibleSet, OptimizeResult)> {
    let prob = cfg.problem()?;
    let (geom, tgrid) = (&prob.disc.geom, &prob.disc.tgrid);
    let adm = cfg.admissible(geom, tgrid)?;
    let init = cfg.initial_control(geom, tgrid)?;
    let (init, _) = adm.project(&init, geom, tgrid)?;
    let res = optimize(&prob, &adm, &init, &cfg.optimize_options()?)?;
    out.csv("history.csv", &["iter", "J", "residual", "step"], res.history.iter().map(|r| vec![r.iter.to_string(), f(r.j), f(r.residual), f(r.step)]))?;
    write_trajectory(out, "control.csv", &res.u)?;
    Ok((prob, adm, res))
}

pub fn optimize_cmd(cfg: &Config, out: &Output) -> CliResult<()> {
    let start = Instant::now();
    let (prob, adm, res) = run_optimize(cfg, out)?;
    let (geom, tgrid) = (&prob.disc.geom, &prob.disc.tgrid);
    let gtol = cfg.optimize_options()?.gtol;
    let first = res.history[0].residual;
    let last = res.history.last().unwrap().residual;
    let grad = res.record.gradient.as_ref().unwrap();
    let adj = res.record.adjoint.as_ref().unwrap();
    let b0 = prob.cost.b0;
    let gap = if b0 > 0.0 {
        let (p, _) = adm.project(&adj.q_gamma.map(|q| -q / b0), geom, tgrid)?;
        res.u.sub(&p).l2_norm(geom, tgrid)
    } else {
        f64::NAN
    };
    let seed = cfg.u64_or("checks.seed", 11)?;
    let mut vi_min = f64::INFINITY;
    for s in 0..100 {
        let v = smooth_random(geom, tgrid, seed + 1000 + s, adm.u_max.max_abs().max(adm.u_min.max_abs()) * 1.5);
        let (v, _) = adm.project(&v, geom, tgrid)?;
        let d = v.sub(&res.u);
        let n = d.l2_norm(geom, tgrid);
        if n > 0.0 {
            vi_min = vi_min.min(grad.inner(&d, geom, tgrid) / n);
        }
    }
    let active = bound_activity(&res.u, &adm, ACTIVITY_TOL).iter().flatten().filter(|&&a| a != 0).count();
    out.csv(
        "projection.csv",
        &["iterations", "J", "initial_residual", "final_residual", "projection_gap", "budget_active", "active_points", "min_vi"],
        [vec![
            (res.history.len() - 1).to_string(),
            f(res.record.value),
            f(first),
            f(last),
            f(gap),
            res.budget_activated.to_string(),
            active.to_string(),
            f(vi_min),
        ]],
    )?;
    println!(
        "{} iterations in {:.1} s, J = {:.10e}, residual {last:.3e} (initial {first:.3e}), {active} bound-active points",
        res.history.len() - 1,
        start.elapsed().as_secs_f64(),
        res.record.value
    );
    let mut c = Checks::default();
    c.check(res.converged && last <= gtol * first.max(f64::MIN_POSITIVE), format!("residual {last:.3e} <= gtol {gtol:.0e} x initial"));
    c.check(!res.budget_activated, "derivative budget inactive");
    if b0 > 0.0 && !res.budget_activated {
        let tol = cfg.f64_or("optimizer.projection_tol", 1e-7)?;
        c.check(gap <= tol, format!("|u - P(-q_G/b0)| = {gap:.3e} <= {tol:.0e}"));
    }
    c.check(vi_min >= -1e-7, format!("variational inequality over 100 admissible samples, min {vi_min:.3e}"));
    c.finish()
}

pub fn check_gradient(cfg: &Config, out: &Output) -> CliResult<()> {
    let start = Instant::now();
    let p = cfg.problem()?;
    let (seed, u) = base_controls(cfg, &p)?;
    let h = smooth_random(&p.disc.geom, &p.disc.tgrid, seed + 1, 1.0);
    let eps0 = cfg.f64_or("checks.gradient_eps", 1e-4)?;
    let eps = cfg.f64_list_or("checks.gradient_order_eps", &[1e-1, 5e-2, 2.5e-2, 1.25e-2])?;
    let (dj, at) = p.gradient_check(&u, &h, &[eps0])?;
    let (_, order) = p.gradient_check(&u, &h, &eps)?;
    let rows = at.rows.iter().map(|r| ("check", r)).chain(order.rows.iter().map(|r| ("order", r)));
    out.csv("gradient.csv", &["set", "eps", "directional_derivative", "rel_error", "local_slope"], rows.map(|(s, r)| {
        vec![s.to_string(), f(r.eps), f(dj), f(r.remainder), f(r.slope)]
    }))?;
    println!("<g, h> = {dj:.12e}, {:.1} s", start.elapsed().as_secs_f64());
    let mut c = Checks::default();
    let e = at.rows[0].remainder;
    c.check(e <= 1e-4, format!("relative FD error {e:.3e} <= 1e-4 at eps = {eps0:e}"));
    c.check((order.slope - 2.0).abs() <= 0.3, format!("FD order slope {:.3} in 2.0 +- 0.3", order.slope));
    c.finish()
}

pub fn check_adjoint(cfg: &Config, out: &Output) -> CliResult<()> {
    let p = cfg.problem()?;
    let (seed, u) = base_controls(cfg, &p)?;
    let st = p.state(&u)?;
    let adj = solve_adjoint(&p.disc, &st, &p.cost)?;
    let trials = cfg.usize_or("checks.adjoint_trials", 5)?;
    let mut rows = Vec::with_capacity(trials);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let h = smooth_random(&p.disc.geom, &p.disc.tgrid, seed + 100 + t as u64, 1.0);
        let xi = apply_ds(&p.disc, &st, &h)?;
        let (lhs, rhs) = adjoint_identity(&p.disc, &st, &adj, &p.cost, &h, &xi);
        let m = rel(lhs, rhs);
        worst = worst.max(m);
        rows.push(vec![t.to_string(), f(lhs), f(rhs), f(m)]);
    }
    out.csv("adjoint_identity.csv", &["trial", "lhs", "rhs", "rel_mismatch"], rows)?;
    let mut c = Checks::default();
    c.check(worst <= 1e-8, format!("adjoint identity worst relative mismatch {worst:.3e} <= 1e-8 over {trials} trials"));
    c.finish()
}

pub fn check_taylor(cfg: &Config, out: &Output) -> CliResult<()> {
    let p = cfg.problem()?;
    let (seed, u) = base_controls(cfg, &p)?;
    let h = smooth_random(&p.disc.geom, &p.disc.tgrid, seed + 2, 1.0);
    let eps = cfg.f64_list_or("checks.taylor_eps", &[1e-1, 3e-2, 1e-2, 3e-3])?;
    let jeps = cfg.f64_list_or("checks.j_taylor_eps", &[2e-1, 1e-1, 5e-2, 2.5e-2])?;
    let (first, second) = p.state_taylor_probe(&u, &h, &eps)?;
    let cubic = p.taylor_remainder_probe(&u, &h, &jeps)?;
    let sets = [("state_first_order", &first, 2.0, 0.3), ("state_second_order", &second, 3.0, 0.4), ("reduced_cost_cubic", &cubic, 3.0, 0.4)];
    let mut rows = Vec::new();
    for (name, rep, _, _) in &sets {
        for r in &rep.rows {
            rows.push(vec![name.to_string(), f(r.eps), f(r.remainder), f(r.slope)]);
        }
    }
    out.csv("taylor_orders.csv", &["test", "eps", "remainder", "slope"], rows)?;
    out.csv(
        "taylor_summary.csv",
        &["test", "fitted_slope", "expected"],
        sets.iter().map(|(n, r, e, _)| vec![n.to_string(), f(r.slope), f(*e)]),
    )?;
    let mut c = Checks::default();
    for (name, rep, expect, tol) in sets {
        c.check((rep.slope - expect).abs() <= tol, format!("{name} slope {:.3} in {expect} +- {tol}", rep.slope));
    }
    c.finish()
}

pub fn check_hessian(cfg: &Config, out: &Output) -> CliResult<()> {
    let p = cfg.problem()?;
    let (seed, u) = base_controls(cfg, &p)?;
    let rec = p.evaluate(&u, true)?;
    let pairs = cfg.usize_or("checks.hessian_pairs", 3)?;
    let mut rows = Vec::with_capacity(pairs);
    let (mut sym, mut cross) = (0.0f64, 0.0f64);
    for i in 0..pairs {
        let h = smooth_random(&p.disc.geom, &p.disc.tgrid, seed + 200 + 2 * i as u64, 1.0);
        let k = smooth_random(&p.disc.geom, &p.disc.tgrid, seed + 201 + 2 * i as u64, 1.0);
        let hk = p.hessian_form(&rec, &h, &k)?;
        let kh = p.hessian_form(&rec, &k, &h)?;
        let d2s = p.hessian_via_d2s(&rec, &h, &k)?;
        let (s, x) = (rel(hk, kh), rel(hk, d2s));
        sym = sym.max(s);
        cross = cross.max(x);
        rows.push(vec![i.to_string(), f(hk), f(s), f(x)]);
    }
    out.csv("hessian.csv", &["pair", "form", "symmetry_error", "cross_check_error"], rows)?;
    let mut c = Checks::default();
    c.check(sym <= 1e-12, format!("Hessian symmetry error {sym:.3e} <= 1e-12"));
    c.check(cross <= 1e-8, format!("second-order route mismatch {cross:.3e} <= 1e-8"));
    c.finish()
}

pub fn ssc(cfg: &Config, out: &Output) -> CliResult<()> {
    let start = Instant::now();
    let (prob, adm, res) = run_optimize(cfg, out)?;
    let (geom, tgrid) = (&prob.disc.geom, &prob.disc.tgrid);
    let grad = res.record.gradient.as_ref().unwrap();
    let tau = cfg.f64_or("ssc.tau", 1e-6)?;
    let mask = build_active_set(grad, tau);
    let n = cfg.usize_or("ssc.samples", 64)?;
    let seed = cfg.u64_or("ssc.seed", 5)?;
    let dirs = match sample_critical_cone(geom, tgrid, &res.u, &mask, &adm, n, seed) {
        Ok(d) => d,
        Err(Error::EmptyCone { candidates }) => {
            println!("critical cone is trivial: all {candidates} candidates vanish");
            out.csv("ssc_summary.csv", &["tau", "active_points", "directions", "delta_hat", "argmin", "sigma_hat"], [vec![
                f(tau),
                mask.iter().flatten().filter(|&&m| m).count().to_string(),
                "0".into(),
                "nan".into(),
                "".into(),
                "nan".into(),
            ]])?;
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let activity = bound_activity(&res.u, &adm, ACTIVITY_TOL);
    let audit = dirs.iter().all(|h| in_critical_cone(h, &mask, &activity) && h.dt_norm(geom, tgrid) <= adm.m0 * (1.0 + 1e-12));
    let growth = GrowthOptions {
        samples: cfg.usize_or("ssc.growth_samples", 16)?,
        radius: cfg.f64_or("ssc.growth_radius", 0.05)?,
        seed: seed + 1,
    };
    let rep = ssc_check(&prob, &adm, &res.u, &res.record, tau, mask, dirs, &growth)?;
    out.csv("ssc_report.csv", &["direction", "quotient"], rep.quotients.iter().enumerate().map(|(i, q)| vec![i.to_string(), f(*q)]))?;
    out.csv("growth.csv", &["x_dist", "sigma_dist", "dJ"], rep.growth.iter().map(|g| vec![f(g.x_dist), f(g.sigma_dist), f(g.dj)]))?;
    out.csv("ssc_summary.csv", &["tau", "active_points", "directions", "delta_hat", "argmin", "sigma_hat"], [vec![
        f(tau),
        rep.active_points.to_string(),
        rep.quotients.len().to_string(),
        f(rep.delta_hat),
        rep.argmin.to_string(),
        f(rep.sigma_hat),
    ]])?;
    write_trajectory(out, "min_direction.csv", &rep.directions[rep.argmin])?;
    println!(
        "delta_hat = {:.6e} (direction {}), sigma_hat = {:.6e}, {} active points, {:.1} s",
        rep.delta_hat,
        rep.argmin,
        rep.sigma_hat,
        rep.active_points,
        start.elapsed().as_secs_f64()
    );

    let mut c = Checks::default();
    c.check(audit, "every direction lies in the critical cone and the derivative budget");
    c.check(rep.delta_hat > 0.0, format!("delta_hat {:.3e} > 0", rep.delta_hat));
    let b0 = prob.cost.b0;
    if prob.cost.b_q == 0.0 && prob.cost.b_sigma == 0.0 {
        let worst = rep.quotients.iter().map(|q| (q - b0).abs()).fold(0.0f64, f64::max);
        c.check(worst <= 1e-12 * b0.max(1.0), format!("pure penalty quotients equal b0 within {worst:.3e}"));
        c.check(rep.sigma_hat >= 0.49 * b0, format!("growth constant {:.4e} >= 0.49 b0", rep.sigma_hat));
    } else {
        c.check(rep.sigma_hat >= 0.0, format!("growth constant {:.4e} >= 0", rep.sigma_hat));
    }
    c.finish()
}

fn a2_row(name: &str, pair: &PotentialPair, samples: usize) -> CliResult<(Vec<String>, bool, f64)> {
    let r = check_a2(pair, samples)?;
    Ok((
        vec![
            name.to_string(),
            f(r.f_at_zero),
            f(r.min_f2),
            f(r.min_f2_gamma),
            f(r.max_compat_excess),
            r.lower_bounded.to_string(),
            r.diverges_at_endpoints.to_string(),
            r.compatible.to_string(),
        ],
        r.passed(),
        r.min_f2,
    ))
}

pub fn check_potential(cfg: &Config, out: &Output) -> CliResult<()> {
    let start = Instant::now();
    let samples = cfg.usize_or("potential_check.samples", 400)?;
    let c_log = if cfg.str_or("potential.kind", "")? == "logarithmic" { cfg.f64("potential.c")? } else { 2.0 };
    let mut specs: Vec<(String, PotentialSpec, Vec<f64>)> = vec![
        ("regular".into(), PotentialSpec::regular(), vec![-2.0, -1.0, -0.3, 0.0, 0.5, 1.5]),
        ("logarithmic".into(), PotentialSpec::logarithmic(c_log)?, vec![-0.95, -0.5, 0.0, 0.3, 0.9]),
    ];
    let configured = cfg.potentials()?;
    let kind = cfg.str("potential.kind")?;
    if kind == "custom-polynomial" {
        specs.push(("configured".into(), configured.bulk.clone(), vec![-0.8, -0.2, 0.0, 0.4]));
    }
    let hs = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
    let mut fd_rows = Vec::new();
    let mut a2_rows = Vec::new();
    let mut c = Checks::default();
    for (name, spec, rs) in &specs {
        for row in fd_convergence(spec, rs, &hs) {
            for (h, e) in row.h.iter().zip(&row.errors) {
                fd_rows.push(vec![name.clone(), row.order.to_string(), f(*h), f(*e), f(row.slope), row.passed.to_string()]);
            }
            c.check(row.passed, format!("{name} f^({}) finite-difference order {:.3}", row.order, row.slope));
        }
        let (r, ok, min_f2) = a2_row(name, &PotentialPair::same(spec.clone()), samples)?;
        a2_rows.push(r);
        c.check(ok, format!("{name} structural assumptions (lower bound, endpoint divergence, compatibility)"));
        if name == "logarithmic" && c_log > 1.0 {
            c.check(min_f2 < 0.0, format!("logarithmic c = {c_log} is nonconvex, min f'' = {min_f2:.4}"));
        }
        if name == "regular" {
            c.check((min_f2 + 1.0).abs() < 5e-3, format!("regular min f'' = {min_f2:.5} near -1"));
        }
    }
    if configured.bulk.name() != configured.bdry.name() || kind == "custom-polynomial" {
        let (r, ok, _) = a2_row("configured_pair", &configured, samples)?;
        a2_rows.push(r);
        c.check(ok, "configured pair structural assumptions");
    }
    out.csv("potential_fd.csv", &["potential", "order", "h", "max_rel_error", "slope", "passed"], fd_rows)?;
    out.csv(
        "potential_a2.csv",
        &["potential", "f_at_0", "min_f2", "min_f2_gamma", "max_compat_excess", "lower_bounded", "diverges", "compatible"],
        a2_rows,
    )?;
    info!("potential checks took {:.3} s", start.elapsed().as_secs_f64());
    c.finish()
}

pub fn check_lipschitz(cfg: &Config, out: &Output) -> CliResult<()> {
    let start = Instant::now();
    let disc = cfg.discretization()?;
    let pots = cfg.potentials()?;
    let y0 = cfg.initial_state(&disc.geom)?;
    let samples = cfg.usize_or("lipschitz.samples", 10)?;
    let eps = cfg.f64_list_or("lipschitz.eps", &[1e-1, 3e-2, 1e-2])?;
    let rows = lipschitz_probes(
        &disc,
        &pots,
        &y0,
        &cfg.newton()?,
        samples,
        &eps,
        cfg.u64_or("lipschitz.seed", 23)?,
        cfg.f64_or("lipschitz.amplitude", 0.3)?,
    )?;
    out.csv("lipschitz.csv", &["probe", "sample", "eps", "ratio"], rows.iter().map(|r| vec![r.probe.name().into(), r.sample.to_string(), f(r.eps), f(r.ratio)]))?;
    let mut c = Checks::default();
    let mut summary = Vec::new();
    for probe in [LipschitzProbe::State, LipschitzProbe::Ds, LipschitzProbe::D2s] {
        let sel: Vec<_> = rows.iter().filter(|r| r.probe == probe).collect();
        let mut ratios: Vec<f64> = sel.iter().map(|r| r.ratio).collect();
        let finite = ratios.iter().all(|r| r.is_finite() && *r > 0.0);
        ratios.sort_by(f64::total_cmp);
        let median = ratios[ratios.len() / 2];
        let constant = *ratios.last().unwrap();
        let outliers = ratios.iter().filter(|&&r| r > 2.0 * median).count();
        if outliers > 0 {
            warn!("{}: {outliers} ratios exceed twice the median {median:.3e}", probe.name());
        }
        let trend = (0..samples)
            .map(|s| {
                let (e, r): (Vec<f64>, Vec<f64>) = sel.iter().filter(|x| x.sample == s).map(|x| (x.eps, x.ratio)).unzip();
                loglog_slope(&e, &r).abs()
            })
            .fold(0.0f64, f64::max);
        summary.push(vec![probe.name().into(), f(constant), f(median), outliers.to_string(), f(trend)]);
        c.check(finite, format!("{} ratios finite and positive", probe.name()));
        c.check(trend <= 0.25, format!("{} bounded by {constant:.3e} with largest eps trend {trend:.3}", probe.name()));
    }
    out.csv("lipschitz_summary.csv", &["probe", "constant", "median", "above_twice_median", "max_eps_trend"], summary)?;
    println!("{} samples in {:.1} s", samples, start.elapsed().as_secs_f64());
    c.finish()
}
