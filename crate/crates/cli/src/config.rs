use std::f64::consts::PI;
use std::path::Path;

use chb_core::adjoint::CostSpec;
use chb_core::geometry::{Geometry, Mode, TimeGrid};
use chb_core::linear::Discretization;
use chb_core::optimizer::{AdmissibleSet, OptimizeOptions};
use chb_core::potentials::{PotentialPair, PotentialSpec};
use chb_core::reduced::ReducedProblem;
use chb_core::sparse::LinearSolverKind;
use chb_core::state::{solve_state, NewtonMode, NewtonOptions};
use chb_core::trajectory::{random_values, smooth_random, BoundaryTrajectory, ControlTrajectory};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

/// A parsed run configuration; keys are addressed as `section.key`.
#[derive(Debug, Clone)]
pub struct Config {
    pub table: Table,
}

fn config_err(key: &str, msg: impl Into<String>) -> CliError {
    CliError::Config { key: key.to_string(), msg: msg.into() }
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| config_err("<file>", e.to_string()))?;
        table.remove("run");
        Ok(Self { table })
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Self::parse(DEFAULT_CONFIG),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| config_err("<file>", format!("{}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    /// Applies `section.key=value`; the value is read as TOML, falling back to a bare string.
    pub fn set(&mut self, assignment: &str) -> CliResult<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| config_err(assignment, "override must look like section.key=value"))?;
        let key = key.trim();
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(config_err(key, "empty key segment"));
        }
        let mut table = &mut self.table;
        for p in &parts[..parts.len() - 1] {
            let entry = table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
            table = entry.as_table_mut().ok_or_else(|| config_err(key, format!("`{p}` is not a table")))?;
        }
        table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        let mut parts = key.split('.');
        let mut cur = self.table.get(parts.next()?)?;
        for p in parts {
            cur = cur.as_table()?.get(p)?;
        }
        Some(cur)
    }

    fn require(&self, key: &str) -> CliResult<&Value> {
        self.get(key).ok_or_else(|| config_err(key, "missing"))
    }

    pub fn has(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn f64(&self, key: &str) -> CliResult<f64> {
        match self.require(key)? {
            Value::Float(v) => Ok(*v),
            Value::Integer(v) => Ok(*v as f64),
            other => Err(config_err(key, format!("expected a number, got {}", other.type_str()))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> CliResult<f64> {
        if self.has(key) { self.f64(key) } else { Ok(default) }
    }

    pub fn usize(&self, key: &str) -> CliResult<usize> {
        match self.require(key)? {
            Value::Integer(v) if *v >= 0 => Ok(*v as usize),
            other => Err(config_err(key, format!("expected a nonnegative integer, got {other}"))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> CliResult<usize> {
        if self.has(key) { self.usize(key) } else { Ok(default) }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> CliResult<u64> {
        Ok(self.usize_or(key, default as usize)? as u64)
    }

    pub fn str(&self, key: &str) -> CliResult<&str> {
        match self.require(key)? {
            Value::String(s) => Ok(s),
            other => Err(config_err(key, format!("expected a string, got {}", other.type_str()))),
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> CliResult<&'a str> {
        if self.has(key) { self.str(key) } else { Ok(default) }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> CliResult<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(other) => Err(config_err(key, format!("expected a boolean, got {}", other.type_str()))),
        }
    }

    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> CliResult<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(x) => Ok(*x as f64),
                    _ => Err(config_err(key, "expected an array of numbers")),
                })
                .collect(),
            Some(other) => Err(config_err(key, format!("expected an array, got {}", other.type_str()))),
        }
    }

    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> CliResult<Vec<usize>> {
        Ok(self.f64_list_or(key, &default.iter().map(|&v| v as f64).collect::<Vec<_>>())?.into_iter().map(|v| v as usize).collect())
    }

    pub fn geometry(&self) -> CliResult<Geometry> {
        let mode: Mode = self.str("geometry.mode")?.parse().map_err(|e: chb_core::Error| config_err("geometry.mode", e.to_string()))?;
        let nx = self.usize("geometry.nx")?;
        let lx = self.f64("geometry.lx")?;
        let (ny, ly) = match mode {
            Mode::Strip2d => (self.usize("geometry.ny")?, self.f64("geometry.ly")?),
            Mode::Interval1d => (0, 0.0),
        };
        let g = Geometry::new(mode, nx, ny, lx, ly).map_err(|e| config_err("geometry", e.to_string()))?;
        let mean_tol = self.f64_or("solver.mean_tol", chb_core::geometry::DEFAULT_MEAN_TOL)?;
        let lin_tol = self.f64_or("solver.lin_tol", chb_core::geometry::DEFAULT_LIN_TOL)?;
        Ok(g.with_tolerances(mean_tol, lin_tol))
    }

    pub fn time_grid(&self) -> CliResult<TimeGrid> {
        let t = self.f64("time.T")?;
        let nt = self.usize("time.nt")?;
        TimeGrid::new(t, nt).map_err(|e| config_err("time", e.to_string()))
    }

    pub fn discretization(&self) -> CliResult<Discretization> {
        let kind = match self.str_or("solver.linear", "lu")? {
            "lu" => LinearSolverKind::DirectLu,
            "krylov" => LinearSolverKind::Krylov,
            other => return Err(config_err("solver.linear", format!("unknown linear solver `{other}`"))),
        };
        Ok(Discretization::new(self.geometry()?, self.time_grid()?, kind)?)
    }

    fn potential_spec(&self, section: &str) -> CliResult<PotentialSpec> {
        let key = |k: &str| format!("{section}.{k}");
        let kind = self.str(&key("kind"))?;
        let spec = match kind {
            "regular" => PotentialSpec::regular(),
            "logarithmic" => PotentialSpec::logarithmic(self.f64(&key("c"))?).map_err(|e| config_err(&key("c"), e.to_string()))?,
            "custom-polynomial" => {
                PotentialSpec::polynomial(self.f64_list_or(&key("coeffs"), &[])?).map_err(|e| config_err(&key("coeffs"), e.to_string()))?
            }
            other => return Err(config_err(&key("kind"), format!("unknown potential `{other}`"))),
        };
        if self.has(&key("guard")) {
            let g = self.f64(&key("guard"))?;
            return spec.with_guard(g).map_err(|e| config_err(&key("guard"), e.to_string()));
        }
        Ok(spec)
    }

    pub fn potentials(&self) -> CliResult<PotentialPair> {
        let bulk = self.potential_spec("potential")?;
        if !self.has("potential_gamma.kind") {
            return Ok(PotentialPair::same(bulk));
        }
        let bdry = self.potential_spec("potential_gamma")?;
        Ok(PotentialPair { bulk, bdry, eta: self.f64_or("potential_gamma.eta", 1.0)?, compat_c: self.f64_or("potential_gamma.C", 0.0)? })
    }

    pub fn newton(&self) -> CliResult<NewtonOptions> {
        let d = NewtonOptions::default();
        let mode: NewtonMode = self
            .str_or("solver.newton_mode", "reuse")?
            .parse()
            .map_err(|e: chb_core::Error| config_err("solver.newton_mode", e.to_string()))?;
        Ok(NewtonOptions {
            tol: self.f64_or("solver.newton_tol", d.tol)?,
            max_iter: self.usize_or("solver.newton_max_iter", d.max_iter)?,
            mode,
            ..d
        })
    }

    pub fn initial_state(&self, geom: &Geometry) -> CliResult<Vec<f64>> {
        let kind = self.str("initial.kind")?;
        let ly = if geom.ly > 0.0 { geom.ly } else { 1.0 };
        match kind {
            "constant" => Ok(vec![self.f64("initial.value")?; geom.n_bulk()]),
            "cosine" => {
                let (m, a) = (self.f64("initial.mean")?, self.f64("initial.amplitude")?);
                Ok((0..geom.n_bulk())
                    .map(|k| {
                        let (x, y) = geom.coords(k);
                        m + a * (2.0 * PI * x / geom.lx).cos() * (PI * y / ly).cos()
                    })
                    .collect())
            }
            "random" => {
                let (m, a) = (self.f64("initial.mean")?, self.f64("initial.amplitude")?);
                Ok(random_values(geom.n_bulk(), self.u64_or("initial.seed", 0)?, m, a))
            }
            "file" => {
                let rows = read_rows(Path::new(self.str("initial.file")?), "initial.file")?;
                let v: Vec<f64> = rows.into_iter().flatten().collect();
                if v.len() != geom.n_bulk() {
                    return Err(config_err("initial.file", format!("expected {} values, got {}", geom.n_bulk(), v.len())));
                }
                Ok(v)
            }
            other => Err(config_err("initial.kind", format!("unknown initial state `{other}`"))),
        }
    }

    /// A boundary trajectory described by the table `section`.
    pub fn trajectory(&self, section: &str, geom: &Geometry, tgrid: &TimeGrid) -> CliResult<BoundaryTrajectory> {
        let key = |k: &str| format!("{section}.{k}");
        match self.str(&key("kind"))? {
            "zero" => Ok(BoundaryTrajectory::zeros(geom, tgrid)),
            "constant" => Ok(BoundaryTrajectory::constant(geom, tgrid, self.f64(&key("value"))?)),
            "sinusoidal" => {
                let a = self.f64(&key("amplitude"))?;
                let f = self.f64_or(&key("frequency"), 1.0)?;
                let (lx, tf) = (geom.lx, tgrid.t_final);
                Ok(BoundaryTrajectory::from_fn(geom, tgrid, |x, line, t| {
                    let sign = if line == 0 { 1.0 } else { -1.0 };
                    a * sign * (2.0 * PI * f * t / tf).sin() * (2.0 * PI * x / lx).cos()
                }))
            }
            "random" => Ok(smooth_random(geom, tgrid, self.u64_or(&key("seed"), 0)?, self.f64(&key("amplitude"))?)),
            "file" => {
                let rows = read_rows(Path::new(self.str(&key("file"))?), &key("file"))?;
                let t = BoundaryTrajectory { steps: rows };
                t.check_shape(geom, tgrid).map_err(|e| config_err(&key("file"), e.to_string()))?;
                Ok(t)
            }
            other => Err(config_err(&key("kind"), format!("unknown trajectory `{other}`"))),
        }
    }

    pub fn cost(&self, disc: &Discretization, pots: &PotentialPair, y0: &[f64], newton: &NewtonOptions) -> CliResult<CostSpec> {
        let w = |k: &str| self.f64(&format!("cost.{k}"));
        let (b_q, b_sigma, b0) = (w("b_q")?, w("b_sigma")?, w("b0")?);
        let b_omega = self.f64_or("cost.b_omega", 0.0)?;
        let b_gamma = self.f64_or("cost.b_gamma", 0.0)?;
        for (k, v) in [("b_q", b_q), ("b_sigma", b_sigma), ("b0", b0), ("b_omega", b_omega), ("b_gamma", b_gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(&format!("cost.{k}"), "weights must be finite and nonnegative"));
            }
        }
        if b_q + b_sigma + b0 == 0.0 {
            return Err(config_err("cost", "weights must not all vanish"));
        }
        if b_omega != 0.0 {
            return Err(config_err("cost.b_omega", "final-time weights must be zero"));
        }
        if b_gamma != 0.0 {
            return Err(config_err("cost.b_gamma", "final-time weights must be zero"));
        }
        let (geom, tgrid) = (&disc.geom, &disc.tgrid);
        let (z_q, z_sigma) = match self.str("target.kind")? {
            "solve-then-perturb" => {
                let reference = self.trajectory("target.reference", geom, tgrid)?;
                let delta = self.f64("target.perturbation")?;
                let st = solve_state(disc, pots, y0, &reference, newton)?;
                let ly = if geom.ly > 0.0 { geom.ly } else { 1.0 };
                let z_q = (1..=tgrid.nt)
                    .map(|k| {
                        st.y[k]
                            .iter()
                            .enumerate()
                            .map(|(i, v)| {
                                let (x, y) = geom.coords(i);
                                v + delta * (2.0 * PI * x / geom.lx).sin() * (PI * y / ly).cos()
                            })
                            .collect()
                    })
                    .collect();
                let z_s = (1..=tgrid.nt)
                    .map(|k| {
                        geom.trace(&st.y[k])
                            .iter()
                            .enumerate()
                            .map(|(b, v)| {
                                let (x, _) = geom.bdry_coords(b);
                                v - delta * (2.0 * PI * x / geom.lx).cos()
                            })
                            .collect()
                    })
                    .collect();
                (z_q, BoundaryTrajectory { steps: z_s })
            }
            "constant" => (
                vec![vec![self.f64("target.z_q")?; geom.n_bulk()]; tgrid.nt],
                BoundaryTrajectory::constant(geom, tgrid, self.f64("target.z_sigma")?),
            ),
            "sinusoidal" => {
                let a = self.f64("target.amplitude")?;
                let z_q = (1..=tgrid.nt)
                    .map(|k| {
                        let t = tgrid.node(k);
                        (0..geom.n_bulk())
                            .map(|i| a * (2.0 * PI * geom.coords(i).0 / geom.lx).cos() * (PI * t / tgrid.t_final).sin())
                            .collect()
                    })
                    .collect();
                let z_s = BoundaryTrajectory::from_fn(geom, tgrid, |x, _, t| a * (2.0 * PI * x / geom.lx).cos() * (PI * t / tgrid.t_final).sin());
                (z_q, z_s)
            }
            "file" => {
                let z_q = read_rows(Path::new(self.str("target.z_q_file")?), "target.z_q_file")?;
                if z_q.len() != tgrid.nt || z_q.iter().any(|r| r.len() != geom.n_bulk()) {
                    return Err(config_err("target.z_q_file", format!("expected {} rows of {} values", tgrid.nt, geom.n_bulk())));
                }
                let z_s = BoundaryTrajectory { steps: read_rows(Path::new(self.str("target.z_sigma_file")?), "target.z_sigma_file")? };
                z_s.check_shape(geom, tgrid).map_err(|e| config_err("target.z_sigma_file", e.to_string()))?;
                (z_q, z_s)
            }
            other => return Err(config_err("target.kind", format!("unknown target `{other}`"))),
        };
        let mut cost = CostSpec::tracking(b_q, b_sigma, b0, z_q, z_sigma);
        cost.b_omega = b_omega;
        cost.b_gamma = b_gamma;
        Ok(cost)
    }

    pub fn problem(&self) -> CliResult<ReducedProblem> {
        let disc = self.discretization()?;
        let pots = self.potentials()?;
        let y0 = self.initial_state(&disc.geom)?;
        let newton = self.newton()?;
        let cost = self.cost(&disc, &pots, &y0, &newton)?;
        Ok(ReducedProblem { disc, pots, y0, cost, newton })
    }

    pub fn admissible(&self, geom: &Geometry, tgrid: &TimeGrid) -> CliResult<AdmissibleSet> {
        let lo = BoundaryTrajectory::constant(geom, tgrid, self.f64("admissible.u_min")?);
        let hi = BoundaryTrajectory::constant(geom, tgrid, self.f64("admissible.u_max")?);
        let adm = AdmissibleSet::new(lo, hi, self.f64("admissible.M0")?, self.f64_or("admissible.radius", f64::INFINITY)?);
        adm.validate(geom, tgrid).map_err(|e| config_err("admissible", e.to_string()))?;
        Ok(adm)
    }

    pub fn optimize_options(&self) -> CliResult<OptimizeOptions> {
        let d = OptimizeOptions::default();
        Ok(OptimizeOptions {
            max_iter: self.usize_or("optimizer.max_iter", d.max_iter)?,
            gtol: self.f64_or("optimizer.gtol", d.gtol)?,
            alpha0: self.f64_or("optimizer.alpha0", d.alpha0)?,
            shrink: self.f64_or("optimizer.shrink", d.shrink)?,
            sigma: self.f64_or("optimizer.sigma", d.sigma)?,
            max_backtracks: self.usize_or("optimizer.max_backtracks", d.max_backtracks)?,
            barzilai_borwein: self.bool_or("optimizer.barzilai_borwein", d.barzilai_borwein)?,
        })
    }

    pub fn initial_control(&self, geom: &Geometry, tgrid: &TimeGrid) -> CliResult<ControlTrajectory> {
        if self.has("optimizer.init.kind") {
            self.trajectory("optimizer.init", geom, tgrid)
        } else {
            Ok(BoundaryTrajectory::zeros(geom, tgrid))
        }
    }
}

/// Comma-separated numeric rows; lines starting with `#` are skipped.
pub fn read_rows(path: &Path, key: &str) -> CliResult<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| config_err(key, format!("{}: {e}", path.display())))?;
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| config_err(key, e.to_string()))?;
            r.iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| config_err(key, format!("`{s}`: {e}"))))
                .collect()
        })
        .collect()
}
