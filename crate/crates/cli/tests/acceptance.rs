//! End-to-end acceptance runs on the bundled default configuration.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

static SERIAL: Mutex<()> = Mutex::new(());

struct Run {
    dir: PathBuf,
    code: Option<i32>,
    secs: f64,
    _tmp: tempfile::TempDir,
}

fn run(cmd: &str, sets: &[&str]) -> Run {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let mut c = Command::new(env!("CARGO_BIN_EXE_chb"));
    c.arg(cmd).arg("--out").arg(&dir);
    for s in sets {
        c.arg("--set").arg(s);
    }
    let start = Instant::now();
    let out = c.output().expect("binary runs");
    let secs = start.elapsed().as_secs_f64();
    print!("{}", String::from_utf8_lossy(&out.stdout));
    eprint!("{}", String::from_utf8_lossy(&out.stderr));
    Run { dir, code: out.status.code(), secs, _tmp: tmp }
}

type Rows = Vec<HashMap<String, String>>;

fn rows(dir: &Path, name: &str) -> Rows {
    let mut rdr = csv::Reader::from_path(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    rdr.records().map(|r| header.iter().cloned().zip(r.unwrap().iter().map(String::from)).collect()).collect()
}

fn num(row: &HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key} = {}", row[key]))
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn verdict(n: usize, checks: &[(bool, String)]) {
    let ok = checks.iter().all(|c| c.0);
    let detail: Vec<&str> = checks.iter().map(|c| c.1.as_str()).collect();
    let line = format!("criterion {n}: {} ({})\n", if ok { "PASS" } else { "FAIL" }, detail.join("; "));
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    for (good, what) in checks {
        assert!(good, "criterion {n}: {what}");
    }
}

#[test]
fn criterion_01_mass_conservation() {
    let r = run("simulate", &[]);
    let cons = rows(&r.dir, "conservation.csv");
    let m0 = num(&cons[0], "mean");
    let drift = cons.iter().map(|row| (num(row, "mean") - m0).abs()).fold(0.0, f64::max);
    let tol = 1e-10 * m0.abs().max(1.0);
    verdict(1, &[
        (r.code == Some(0), format!("exit {:?}", r.code)),
        (cons.len() == 51, format!("{} time nodes", cons.len())),
        (drift <= tol, format!("max drift {drift:.2e} <= {tol:.0e}")),
        (r.secs < 30.0, format!("{:.1} s < 30 s", r.secs)),
    ]);
}

#[test]
fn criterion_02_adjoint_identity() {
    let r = run("check-adjoint", &[]);
    let rs = rows(&r.dir, "adjoint_identity.csv");
    let worst = rs.iter().map(|row| num(row, "rel_mismatch")).fold(0.0, f64::max);
    let recomputed = rs
        .iter()
        .map(|row| {
            let (l, rr) = (num(row, "lhs"), num(row, "rhs"));
            (l - rr).abs() / l.abs().max(rr.abs())
        })
        .fold(0.0, f64::max);
    verdict(2, &[
        (r.code == Some(0), format!("exit {:?}", r.code)),
        (rs.len() == 5, format!("{} random directions", rs.len())),
        (worst <= 1e-8 && recomputed <= 1e-8, format!("mismatch {recomputed:.2e} <= 1e-8")),
        (r.secs < 120.0, format!("{:.1} s < 2 min", r.secs)),
    ]);
}

#[test]
fn criterion_03_gradient_consistency() {
    let r = run("check-gradient", &[]);
    let rs = rows(&r.dir, "gradient.csv");
    let check = rs.iter().find(|row| row["set"] == "check").expect("check row");
    let order: Vec<_> = rs.iter().filter(|row| row["set"] == "order").collect();
    let eps: Vec<f64> = order.iter().map(|row| num(row, "eps")).collect();
    let err: Vec<f64> = order.iter().map(|row| num(row, "rel_error")).collect();
    let slope = fit_slope(&eps, &err);
    let e = num(check, "rel_error");
    verdict(3, &[
        (r.code == Some(0), format!("exit {:?}", r.code)),
        (num(check, "eps") == 1e-4 && e <= 1e-4, format!("relative error {e:.2e} <= 1e-4 at eps 1e-4")),
        ((slope - 2.0).abs() <= 0.3, format!("FD order slope {slope:.3}")),
        (r.secs < 300.0, format!("{:.1} s < 5 min", r.secs)),
    ]);
}

fn taylor() -> &'static (Option<i32>, f64, Rows) {
    static RUN: OnceLock<(Option<i32>, f64, Rows)> = OnceLock::new();
    RUN.get_or_init(|| {
        let r = run("check-taylor", &[]);
        (r.code, r.secs, rows(&r.dir, "taylor_orders.csv"))
    })
}

fn taylor_slope(rs: &Rows, test: &str) -> (Vec<f64>, f64) {
    let sel: Vec<_> = rs.iter().filter(|row| row["test"] == test).collect();
    let eps: Vec<f64> = sel.iter().map(|row| num(row, "eps")).collect();
    let rem: Vec<f64> = sel.iter().map(|row| num(row, "remainder")).collect();
    let s = fit_slope(&eps, &rem);
    (eps, s)
}

#[test]
fn criterion_04_first_order_taylor_state() {
    let (code, secs, rs) = taylor();
    let (eps, s) = taylor_slope(rs, "state_first_order");
    verdict(4, &[
        (*code == Some(0), format!("exit {code:?}")),
        (eps == [1e-1, 3e-2, 1e-2, 3e-3], format!("eps {eps:?}")),
        ((s - 2.0).abs() <= 0.3, format!("slope {s:.3}")),
        (*secs < 600.0, format!("{secs:.1} s < 10 min")),
    ]);
}

#[test]
fn criterion_05_second_order_taylor() {
    let (code, secs, rs) = taylor();
    let (_, s2) = taylor_slope(rs, "state_second_order");
    let (_, sj) = taylor_slope(rs, "reduced_cost_cubic");
    verdict(5, &[
        (*code == Some(0), format!("exit {code:?}")),
        ((s2 - 3.0).abs() <= 0.4, format!("state slope {s2:.3}")),
        ((sj - 3.0).abs() <= 0.4, format!("reduced cost cubic slope {sj:.3}")),
        (*secs < 600.0, format!("{secs:.1} s < 10 min")),
    ]);
}

#[test]
fn criterion_06_hessian_form() {
    let r = run("check-hessian", &[]);
    let rs = rows(&r.dir, "hessian.csv");
    let sym = rs.iter().map(|row| num(row, "symmetry_error")).fold(0.0, f64::max);
    let cross = rs.iter().map(|row| num(row, "cross_check_error")).fold(0.0, f64::max);
    verdict(6, &[
        (r.code == Some(0), format!("exit {:?}", r.code)),
        (rs.len() == 3, format!("{} pairs", rs.len())),
        (sym <= 1e-12, format!("symmetry {sym:.2e} <= 1e-12")),
        (cross <= 1e-8, format!("cross-check {cross:.2e} <= 1e-8")),
        (r.secs < 600.0, format!("{:.1} s < 10 min", r.secs)),
    ]);
}

#[test]
fn criterion_07_projection_condition() {
    let r = run("optimize", &[]);
    let m: toml::Table = std::fs::read_to_string(r.dir.join("manifest.toml")).unwrap().parse().unwrap();
    let p = &rows(&r.dir, "projection.csv")[0];
    let (res, gap) = (num(p, "final_residual"), num(p, "projection_gap"));
    verdict(7, &[
        (r.code == Some(0), format!("exit {:?}", r.code)),
        (m["target"]["kind"].as_str() == Some("solve-then-perturb"), "solve-then-perturb target".into()),
        (res <= 1e-8, format!("residual {res:.2e} <= 1e-8")),
        (gap <= 1e-7, format!("projection gap {gap:.2e} <= 1e-7")),
        (p["budget_active"] == "false", "M0 inactive".into()),
        (r.secs < 900.0, format!("{:.1} s < 15 min", r.secs)),
    ]);
}

#[test]
fn criterion_08_ssc_sanity() {
    let pure = run("ssc-check", &["cost.b_q=0", "cost.b_sigma=0"]);
    let b0 = 0.1;
    let q: Vec<f64> = rows(&pure.dir, "ssc_report.csv").iter().map(|row| num(row, "quotient")).collect();
    let worst = q.iter().map(|v| (v - b0).abs()).fold(0.0, f64::max);
    let sigma = num(&rows(&pure.dir, "ssc_summary.csv")[0], "sigma_hat");

    let track = run("ssc-check", &[]);
    let s = &rows(&track.dir, "ssc_summary.csv")[0];
    let delta = num(s, "delta_hat");
    verdict(8, &[
        (pure.code == Some(0) && track.code == Some(0), format!("exit {:?} / {:?}", pure.code, track.code)),
        (!q.is_empty() && worst <= 1e-12, format!("pure-penalty quotients within {worst:.1e} of b0 over {}", q.len())),
        (sigma >= 0.49 * b0, format!("sigma_hat {sigma:.4e} >= 0.49 b0")),
        (s["directions"] == "64" && delta > 0.0, format!("tracking delta_hat {delta:.4e} > 0 over {} directions", s["directions"])),
        (pure.secs < 1200.0 && track.secs < 1200.0, format!("{:.1} s / {:.1} s < 20 min", pure.secs, track.secs)),
    ]);
}

#[test]
fn criterion_09_lipschitz_probes() {
    let r = run("check-lipschitz", &[]);
    let rs = rows(&r.dir, "lipschitz.csv");
    let mut checks = vec![(r.code == Some(0), format!("exit {:?}", r.code))];
    for probe in ["state", "ds", "d2s"] {
        let sel: Vec<_> = rs.iter().filter(|row| row["probe"] == probe).collect();
        let samples: std::collections::BTreeSet<&str> = sel.iter().map(|row| row["sample"].as_str()).collect();
        let ratios: Vec<f64> = sel.iter().map(|row| num(row, "ratio")).collect();
        let finite = ratios.iter().all(|v| v.is_finite() && *v > 0.0);
        let trend = samples
            .iter()
            .map(|s| {
                let (e, v): (Vec<f64>, Vec<f64>) =
                    sel.iter().filter(|row| row["sample"] == *s).map(|row| (num(row, "eps"), num(row, "ratio"))).unzip();
                fit_slope(&e, &v).abs()
            })
            .fold(0.0, f64::max);
        let mut sorted = ratios.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let warn = sorted.iter().filter(|&&v| v > 2.0 * median).count();
        checks.push((
            samples.len() == 10 && finite && trend <= 0.25,
            format!("{probe}: K = {:.3e}, eps trend {trend:.3}, {warn} above 2x median", sorted.last().unwrap()),
        ));
    }
    verdict(9, &checks);
}

#[test]
fn criterion_10_potential_derivatives() {
    let r = run("check-potential", &[]);
    let rs = rows(&r.dir, "potential_fd.csv");
    let mut checks = vec![(r.code == Some(0), format!("exit {:?}", r.code))];
    for pot in ["regular", "logarithmic"] {
        for order in 1..=4 {
            let sel: Vec<_> = rs.iter().filter(|row| row["potential"] == pot && row["order"] == order.to_string()).collect();
            let h: Vec<f64> = sel.iter().map(|row| num(row, "h")).collect();
            let e: Vec<f64> = sel.iter().map(|row| num(row, "max_rel_error")).collect();
            let exact = e.iter().all(|&v| v < 1e-9);
            let s = fit_slope(&h, &e);
            checks.push((
                sel.len() >= 3 && (exact || s >= 1.7),
                if exact { format!("{pot} f{order} exact to {:.0e}", e.iter().cloned().fold(0.0, f64::max)) } else { format!("{pot} f{order} order {s:.2}") },
            ));
        }
    }
    checks.push((r.secs < 10.0, format!("{:.2} s < 10 s", r.secs)));
    verdict(10, &checks);
}
