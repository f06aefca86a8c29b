//! Time-indexed boundary fields on the space-time boundary.
//!
//! A boundary trajectory holds one boundary field per time step `t_1 .. t_nt`,
//! the same nodes at which the implicit scheme evaluates its data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Mode, TimeGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrajectory {
    pub steps: Vec<Vec<f64>>,
}

/// Boundary control `u_G`.
pub type ControlTrajectory = BoundaryTrajectory;

impl BoundaryTrajectory {
    pub fn zeros(geom: &Geometry, tgrid: &TimeGrid) -> Self {
        Self::constant(geom, tgrid, 0.0)
    }

    pub fn constant(geom: &Geometry, tgrid: &TimeGrid, c: f64) -> Self {
        Self { steps: vec![vec![c; geom.n_bdry()]; tgrid.nt] }
    }

    /// Samples `f(x, line, t)` at every boundary node and time step.
    pub fn from_fn(geom: &Geometry, tgrid: &TimeGrid, f: impl Fn(f64, usize, f64) -> f64) -> Self {
        let steps = (1..=tgrid.nt)
            .map(|k| {
                let t = tgrid.node(k);
                (0..geom.n_bdry())
                    .map(|b| {
                        let (x, line) = geom.bdry_coords(b);
                        f(x, line, t)
                    })
                    .collect()
            })
            .collect();
        Self { steps }
    }

    pub fn nt(&self) -> usize {
        self.steps.len()
    }

    pub fn check_shape(&self, geom: &Geometry, tgrid: &TimeGrid) -> Result<()> {
        if self.steps.len() != tgrid.nt || self.steps.iter().any(|s| s.len() != geom.n_bdry()) {
            return Err(Error::InvalidInput(format!(
                "boundary trajectory must hold {} steps of {} values",
                tgrid.nt,
                geom.n_bdry()
            )));
        }
        if self.steps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("boundary trajectory has non-finite values".into()));
        }
        Ok(())
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.steps.iter().flatten()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { steps: self.steps.iter().map(|s| s.iter().map(|&v| f(v)).collect()).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let steps = self
            .steps
            .iter()
            .zip(&other.steps)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            .collect();
        Self { steps }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Self) -> Self {
        self.zip_map(other, |x, y| x + a * y)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |x, y| x - y)
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `L^2(Sigma)` inner product with the right-endpoint rule in time.
    pub fn inner(&self, other: &Self, geom: &Geometry, tgrid: &TimeGrid) -> f64 {
        self.steps.iter().zip(&other.steps).map(|(a, b)| tgrid.dt * geom.bdry_inner(a, b)).sum()
    }

    pub fn l2_norm(&self, geom: &Geometry, tgrid: &TimeGrid) -> f64 {
        self.inner(self, geom, tgrid).max(0.0).sqrt()
    }

    /// `L^2(Sigma)` norm of the backward difference quotient in time.
    pub fn dt_norm(&self, geom: &Geometry, tgrid: &TimeGrid) -> f64 {
        let dt = tgrid.dt;
        let mut s = 0.0;
        for k in 1..self.steps.len() {
            let d: Vec<f64> = self.steps[k].iter().zip(&self.steps[k - 1]).map(|(a, b)| (a - b) / dt).collect();
            s += dt * geom.bdry_inner(&d, &d);
        }
        s.sqrt()
    }

    /// Norm of `H^1(0,T;L^2(G)) cap L^inf(Sigma)`.
    pub fn x_norm(&self, geom: &Geometry, tgrid: &TimeGrid) -> f64 {
        let l2 = self.l2_norm(geom, tgrid);
        let d = self.dt_norm(geom, tgrid);
        (l2 * l2 + d * d).sqrt() + self.max_abs()
    }

    /// Mean over time of every boundary node.
    pub fn time_mean(&self) -> Vec<f64> {
        let n = self.steps.len() as f64;
        let mut mean = vec![0.0; self.steps.first().map_or(0, Vec::len)];
        for s in &self.steps {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / n;
            }
        }
        mean
    }
}

/// Seeded uniform samples in `[mean - amplitude, mean + amplitude]`.
pub fn random_values(n: usize, seed: u64, mean: f64, amplitude: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| mean + amplitude * rng.random_range(-1.0..=1.0)).collect()
}

/// Smooth random boundary trajectory: a few low space and time Fourier modes
/// with decaying random amplitudes, normalized so that `max |h| = amplitude`.
pub fn smooth_random(geom: &Geometry, tgrid: &TimeGrid, seed: u64, amplitude: f64) -> BoundaryTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space_modes = if geom.mode == Mode::Strip2d { 3 } else { 0 };
    let time_modes = 3;
    let mut terms = Vec::new();
    for line in 0..2 {
        for a in 0..=space_modes {
            for b in 0..=time_modes {
                let decay = 1.0 / (1.0 + (a + b) as f64).powi(2);
                let c = rng.random_range(-1.0..1.0) * decay;
                let px = rng.random_range(0.0..std::f64::consts::TAU);
                let pt = rng.random_range(0.0..std::f64::consts::TAU);
                terms.push((line, a as f64, b as f64, c, px, pt));
            }
        }
    }
    let (lx, t_final) = (geom.lx, tgrid.t_final);
    let h = BoundaryTrajectory::from_fn(geom, tgrid, |x, line, t| {
        terms
            .iter()
            .filter(|term| term.0 == line)
            .map(|&(_, a, b, c, px, pt)| {
                let sx = if a == 0.0 { 1.0 } else { (std::f64::consts::TAU * a * x / lx + px).cos() };
                c * sx * (std::f64::consts::PI * b * t / t_final + pt).cos()
            })
            .sum()
    });
    let m = h.max_abs();
    if m == 0.0 {
        h
    } else {
        h.scale(amplitude / m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_of_constant_control() {
        let g = Geometry::new(Mode::Strip2d, 8, 4, 2.0, 1.0).unwrap();
        let t = TimeGrid::new(0.5, 10).unwrap();
        let u = BoundaryTrajectory::constant(&g, &t, 3.0);
        assert!((u.l2_norm(&g, &t) - 3.0 * (4.0f64 * 0.5).sqrt()).abs() < 1e-13);
        assert_eq!(u.dt_norm(&g, &t), 0.0);
        assert!((u.x_norm(&g, &t) - (u.l2_norm(&g, &t) + 3.0)).abs() < 1e-13);
    }

    #[test]
    fn smooth_random_is_seeded_and_scaled() {
        let g = Geometry::new(Mode::Strip2d, 16, 4, 2.0, 1.0).unwrap();
        let t = TimeGrid::new(0.5, 20).unwrap();
        let a = smooth_random(&g, &t, 7, 0.3);
        let b = smooth_random(&g, &t, 7, 0.3);
        let c = smooth_random(&g, &t, 8, 0.3);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!((a.max_abs() - 0.3).abs() < 1e-14);
        a.check_shape(&g, &t).unwrap();
    }
}
