//! Discrete domain, boundary, time grid and the inner products living on them.
//!
//! Nodes sit on a uniform tensor grid. In `Strip2d` mode the domain is
//! `[0, lx) x [0, ly]`, periodic in `x`, and the boundary consists of the two
//! lines `y = 0` and `y = ly`. In `Interval1d` mode the domain is `[0, lx]` and
//! the boundary is its two end points.
//!
//! Bulk fields store one value per node, boundary nodes included, in the order
//! `j * np + i` with `i` the periodic index and `j` the normal index. Boundary
//! fields store the bottom line first, then the top line. The trace of a bulk
//! field is therefore a plain restriction and every bulk field is conforming.
//!
//! Quadrature is trapezoidal in the normal direction and uniform (exact for
//! trigonometric polynomials) in the periodic one. Gradients are edge
//! differences, so the stiffness matrices are the Dirichlet forms of
//! the quadrature and summation by parts holds exactly against the
//! second-order one-sided normal derivative.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::sparse::{inf_norm, CscMatrix, LuPattern, StepSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Strip2d,
    Interval1d,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Strip2d => "strip2d",
            Mode::Interval1d => "interval1d",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strip2d" => Ok(Mode::Strip2d),
            "interval1d" => Ok(Mode::Interval1d),
            other => Err(Error::InvalidInput(format!("unknown geometry mode `{other}`"))),
        }
    }
}

/// Default relative tolerance for zero-mean preconditions.
pub const DEFAULT_MEAN_TOL: f64 = 1e-12;
/// Default residual tolerance of linear solves.
pub const DEFAULT_LIN_TOL: f64 = 1e-10;

#[derive(Debug)]
pub struct Geometry {
    pub mode: Mode,
    /// Cells in `x` (periodic in strip mode, the whole interval in 1-D mode).
    pub nx: usize,
    /// Cells in `y` (strip mode only; zero in 1-D mode).
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
    /// Nodes along the periodic direction (1 in 1-D mode).
    np: usize,
    /// Cells along the normal direction.
    nn: usize,
    /// Periodic spacing; 1 in 1-D mode so that boundary points carry unit weight.
    hp: f64,
    /// Normal spacing.
    hn: f64,
    bulk_weights: Vec<f64>,
    bdry_weights: Vec<f64>,
    trace_index: Vec<usize>,
    stiffness: CscMatrix,
    bdry_stiffness: CscMatrix,
    pub mean_tol: f64,
    pub lin_tol: f64,
    neumann: OnceLock<std::result::Result<StepSolver, String>>,
}

impl Geometry {
    pub fn new(mode: Mode, nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if !(lx > 0.0 && lx.is_finite()) {
            return Err(Error::InvalidInput(format!("lx must be positive, got {lx}")));
        }
        let (np, nn, hp, hn, hx, hy, ny, ly) = match mode {
            Mode::Strip2d => {
                if nx < 3 || ny < 2 {
                    return Err(Error::InvalidInput(format!(
                        "strip2d needs nx >= 3 and ny >= 2, got {nx} x {ny}"
                    )));
                }
                if !(ly > 0.0 && ly.is_finite()) {
                    return Err(Error::InvalidInput(format!("ly must be positive, got {ly}")));
                }
                let hx = lx / nx as f64;
                let hy = ly / ny as f64;
                (nx, ny, hx, hy, hx, hy, ny, ly)
            }
            Mode::Interval1d => {
                if nx < 2 {
                    return Err(Error::InvalidInput(format!("interval1d needs nx >= 2, got {nx}")));
                }
                let h = lx / nx as f64;
                (1, nx, 1.0, h, h, 0.0, 0, 0.0)
            }
        };
        let n = np * (nn + 1);
        let mut bulk_weights = vec![hp * hn; n];
        for i in 0..np {
            bulk_weights[i] *= 0.5;
            bulk_weights[nn * np + i] *= 0.5;
        }
        let trace_index: Vec<usize> = (0..np).chain((0..np).map(|i| nn * np + i)).collect();
        let bdry_weights = vec![hp; 2 * np];

        let mut t = Vec::new();
        let edge = |t: &mut Vec<(usize, usize, f64)>, a: usize, b: usize, w: f64| {
            t.push((a, a, w));
            t.push((b, b, w));
            t.push((a, b, -w));
            t.push((b, a, -w));
        };
        for j in 0..nn {
            for i in 0..np {
                edge(&mut t, j * np + i, (j + 1) * np + i, hp / hn);
            }
        }
        if np > 1 {
            for j in 0..=nn {
                let w = if j == 0 || j == nn { 0.5 * hn / hp } else { hn / hp };
                for i in 0..np {
                    edge(&mut t, j * np + i, j * np + (i + 1) % np, w);
                }
            }
        }
        let stiffness = CscMatrix::from_triplets(n, &t);
        let mut tb = Vec::new();
        if np > 1 {
            for line in 0..2 {
                for i in 0..np {
                    edge(&mut tb, line * np + i, line * np + (i + 1) % np, 1.0 / hp);
                }
            }
        }
        let bdry_stiffness = CscMatrix::from_triplets(2 * np, &tb);
        Ok(Self {
            mode,
            nx,
            ny,
            lx,
            ly,
            hx,
            hy,
            np,
            nn,
            hp,
            hn,
            bulk_weights,
            bdry_weights,
            trace_index,
            stiffness,
            bdry_stiffness,
            mean_tol: DEFAULT_MEAN_TOL,
            lin_tol: DEFAULT_LIN_TOL,
            neumann: OnceLock::new(),
        })
    }

    pub fn with_tolerances(mut self, mean_tol: f64, lin_tol: f64) -> Self {
        self.mean_tol = mean_tol;
        self.lin_tol = lin_tol;
        self
    }

    /// Number of bulk nodes.
    pub fn n_bulk(&self) -> usize {
        self.np * (self.nn + 1)
    }

    /// Number of boundary nodes.
    pub fn n_bdry(&self) -> usize {
        2 * self.np
    }

    /// Nodes per row along the periodic direction.
    pub fn n_periodic(&self) -> usize {
        self.np
    }

    /// Cells along the normal direction.
    pub fn n_normal(&self) -> usize {
        self.nn
    }

    pub fn normal_spacing(&self) -> f64 {
        self.hn
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.np + i
    }

    /// Periodic coordinate and normal coordinate of bulk node `k`.
    pub fn coords(&self, k: usize) -> (f64, f64) {
        let (i, j) = (k % self.np, k / self.np);
        match self.mode {
            Mode::Strip2d => (i as f64 * self.hp, j as f64 * self.hn),
            Mode::Interval1d => (j as f64 * self.hn, 0.0),
        }
    }

    /// Coordinates of boundary node `b`: `(x, line)` with `line` 0 (bottom / left) or 1.
    pub fn bdry_coords(&self, b: usize) -> (f64, usize) {
        let line = b / self.np;
        let i = b % self.np;
        match self.mode {
            Mode::Strip2d => (i as f64 * self.hp, line),
            Mode::Interval1d => (line as f64 * self.lx, line),
        }
    }

    pub fn bulk_weights(&self) -> &[f64] {
        &self.bulk_weights
    }

    pub fn bdry_weights(&self) -> &[f64] {
        &self.bdry_weights
    }

    pub fn trace_index(&self) -> &[usize] {
        &self.trace_index
    }

    /// Stiffness (Dirichlet form) matrix of the bulk gradient.
    pub fn stiffness(&self) -> &CscMatrix {
        &self.stiffness
    }

    /// Stiffness matrix of the tangential gradient on the boundary.
    pub fn bdry_stiffness(&self) -> &CscMatrix {
        &self.bdry_stiffness
    }

    pub fn measure(&self) -> f64 {
        self.bulk_weights.iter().sum()
    }

    pub fn bdry_measure(&self) -> f64 {
        self.bdry_weights.iter().sum()
    }

    pub fn trace(&self, v: &[f64]) -> Vec<f64> {
        self.trace_index.iter().map(|&k| v[k]).collect()
    }

    /// Adjoint of the trace map: scatters a boundary field into a zero bulk field.
    pub fn extend(&self, vb: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_bulk()];
        for (b, &k) in self.trace_index.iter().enumerate() {
            out[k] += vb[b];
        }
        out
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.bulk_weights.iter().zip(u).zip(v).map(|((w, a), b)| w * a * b).sum()
    }

    pub fn bdry_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.bdry_weights.iter().zip(u).zip(v).map(|((w, a), b)| w * a * b).sum()
    }

    /// `<grad u, grad v>` over the bulk.
    pub fn grad_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.stiffness.mul_vec(u).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// `<grad_G u, grad_G v>` over the boundary.
    pub fn bdry_grad_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.bdry_stiffness.mul_vec(u).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    pub fn mean_value(&self, v: &[f64]) -> f64 {
        self.bulk_weights.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() / self.measure()
    }

    /// Outward normal derivative: second-order one-sided difference on each boundary line.
    pub fn normal_derivative(&self, v: &[f64]) -> Vec<f64> {
        let (np, nn, h) = (self.np, self.nn, self.hn);
        let mut out = Vec::with_capacity(self.n_bdry());
        for i in 0..np {
            let (a, b, c) = (v[i], v[np + i], v[2 * np + i]);
            out.push((3.0 * a - 4.0 * b + c) / (2.0 * h));
        }
        for i in 0..np {
            let (a, b, c) = (v[nn * np + i], v[(nn - 1) * np + i], v[(nn - 2) * np + i]);
            out.push((3.0 * a - 4.0 * b + c) / (2.0 * h));
        }
        out
    }

    /// Discrete `-Delta v` at every node: the 5-point stencil in the interior and,
    /// on boundary lines, the tangential second difference plus the one-sided
    /// normal second difference.
    pub fn neg_laplacian(&self, v: &[f64]) -> Vec<f64> {
        let (np, nn, hn, hp) = (self.np, self.nn, self.hn, self.hp);
        let mut out = vec![0.0; self.n_bulk()];
        for j in 0..=nn {
            for i in 0..np {
                let k = j * np + i;
                let dnn = if j == 0 {
                    v[k] - 2.0 * v[np + i] + v[2 * np + i]
                } else if j == nn {
                    v[k] - 2.0 * v[(nn - 1) * np + i] + v[(nn - 2) * np + i]
                } else {
                    v[k + np] - 2.0 * v[k] + v[k - np]
                };
                let dpp = if np > 1 {
                    v[j * np + (i + 1) % np] - 2.0 * v[k] + v[j * np + (i + np - 1) % np]
                } else {
                    0.0
                };
                out[k] = -dnn / (hn * hn) - dpp / (hp * hp);
            }
        }
        out
    }

    /// Discrete `-Delta_G` on a boundary field (periodic second difference per line).
    pub fn neg_bdry_laplacian(&self, vb: &[f64]) -> Vec<f64> {
        let kv = self.bdry_stiffness.mul_vec(vb);
        kv.iter().zip(&self.bdry_weights).map(|(a, w)| a / w).collect()
    }

    fn neumann_solver(&self) -> Result<&StepSolver> {
        let solver = self.neumann.get_or_init(|| {
            let n = self.n_bulk();
            let mut t: Vec<(usize, usize, f64)> = self.stiffness.entries().collect();
            for (k, &w) in self.bulk_weights.iter().enumerate() {
                t.push((k, n, w));
                t.push((n, k, w));
            }
            t.push((n, n, 0.0));
            let bordered = CscMatrix::from_triplets(n + 1, &t);
            let pattern = LuPattern::analyze(&bordered).map_err(|e| e.to_string())?;
            let lu = pattern.factor(&bordered)?;
            Ok(StepSolver::Direct { matrix: bordered, lu })
        });
        solver.as_ref().map_err(|reason| Error::LinearSolveFailed { step: 0, reason: reason.clone() })
    }

    /// Zero-mean solution `v` of `-Delta v = datum` with homogeneous Neumann data.
    pub fn neumann_inverse(&self, datum: &[f64]) -> Result<Vec<f64>> {
        let mean = self.mean_value(datum);
        let tol = self.mean_tol * inf_norm(datum);
        if mean.abs() > tol {
            return Err(Error::MeanNotZero { mean, tol });
        }
        let n = self.n_bulk();
        let mut rhs: Vec<f64> = datum.iter().zip(&self.bulk_weights).map(|(v, w)| v * w).collect();
        rhs.push(0.0);
        let solver = self.neumann_solver()?;
        let mut sol = solver.solve(&rhs, false, self.lin_tol).map_err(|_| {
            let x = solver.solve(&rhs, false, f64::INFINITY).unwrap_or_default();
            let r = solver.matrix().mul_vec(&x);
            let residual = r.iter().zip(&rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            Error::SolverDiverged { residual, tol: self.lin_tol }
        })?;
        sol.truncate(n);
        Ok(sol)
    }

    /// Dual seminorm `|grad N v*|` of a zero-mean datum.
    pub fn dual_norm(&self, datum: &[f64]) -> Result<f64> {
        let v = self.neumann_inverse(datum)?;
        Ok(self.grad_inner(&v, &v).max(0.0).sqrt())
    }

    /// Squared `H x H_G` norm of the conforming pair `(v, v|G)`.
    pub fn h_norm_sq(&self, v: &[f64]) -> f64 {
        let vb = self.trace(v);
        self.inner(v, v) + self.bdry_inner(&vb, &vb)
    }

    /// Squared `V x V_G` norm of the conforming pair `(v, v|G)`.
    pub fn v_norm_sq(&self, v: &[f64]) -> f64 {
        let vb = self.trace(v);
        self.h_norm_sq(v) + self.grad_inner(v, v) + self.bdry_grad_inner(&vb, &vb)
    }

    pub fn pair_norms(&self, v: &PairField) -> Result<PairNorms> {
        let mismatch = v.trace_mismatch(self);
        if mismatch > 1e-12 * inf_norm(&v.bulk).max(1.0) {
            return Err(Error::NonConforming { mismatch });
        }
        Ok(PairNorms {
            h: self.h_norm_sq(&v.bulk).sqrt(),
            v: self.v_norm_sq(&v.bulk).max(0.0).sqrt(),
        })
    }

    /// Norms of a node trajectory `y_0 .. y_nt`: `H^1(0,T;H)`, `L^inf(0,T;V)` and their sum.
    pub fn trajectory_norms(&self, tgrid: &TimeGrid, traj: &[Vec<f64>]) -> TrajectoryNorms {
        assert_eq!(traj.len(), tgrid.nt + 1, "trajectory must hold nt + 1 nodes");
        let dt = tgrid.dt;
        let mut h1 = 0.0;
        for k in 1..traj.len() {
            let diff: Vec<f64> = traj[k].iter().zip(&traj[k - 1]).map(|(a, b)| (a - b) / dt).collect();
            h1 += dt * (self.h_norm_sq(&traj[k]) + self.h_norm_sq(&diff));
        }
        let linf = traj.iter().map(|v| self.v_norm_sq(v).max(0.0).sqrt()).fold(0.0, f64::max);
        TrajectoryNorms { h1_h: h1.sqrt(), linf_v: linf, y: h1.sqrt() + linf }
    }
}

/// Bulk values together with boundary values.
#[derive(Debug, Clone, PartialEq)]
pub struct PairField {
    pub bulk: Vec<f64>,
    pub bdry: Vec<f64>,
}

impl PairField {
    /// The conforming pair `(v, v|G)`.
    pub fn from_bulk(geom: &Geometry, bulk: Vec<f64>) -> Self {
        let bdry = geom.trace(&bulk);
        Self { bulk, bdry }
    }

    pub fn trace_mismatch(&self, geom: &Geometry) -> f64 {
        geom.trace(&self.bulk)
            .iter()
            .zip(&self.bdry)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_conforming(&self, geom: &Geometry) -> bool {
        self.trace_mismatch(geom) == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairNorms {
    pub h: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryNorms {
    pub h1_h: f64,
    pub linf_v: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub nt: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(t_final: f64, nt: usize) -> Result<Self> {
        if nt == 0 || !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "time grid needs T > 0 and nt >= 1, got T = {t_final}, nt = {nt}"
            )));
        }
        Ok(Self { t_final, nt, dt: t_final / nt as f64 })
    }

    /// Time of node `k`.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.nt {
            self.t_final
        } else {
            k as f64 * self.dt
        }
    }
}
