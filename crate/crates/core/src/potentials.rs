//! Double-well potentials with derivatives up to order four.
//!
//! Arguments are clamped into `[r_minus + guard, r_plus - guard]` before
//! evaluation. Every clamp that actually moves an argument is tallied in a
//! shared counter. Arguments outside `[r_minus, r_plus]` are rejected.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    /// `(r^2 - 1)^2 / 4` on the real line.
    Regular,
    /// `(1+r) ln(1+r) + (1-r) ln(1-r) - c r^2` on `(-1, 1)`.
    Logarithmic { c: f64 },
    /// `sum_k a_k r^k` on the real line with `a_0 = 0`.
    Polynomial { coeffs: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub r_minus: f64,
    pub r_plus: f64,
    pub guard: f64,
    clamps: Arc<AtomicU64>,
}

impl PotentialSpec {
    pub fn regular() -> Self {
        Self::build(PotentialKind::Regular, f64::NEG_INFINITY, f64::INFINITY, 0.0)
    }

    /// Logarithmic potential with the default guard `1e-9 * (r_plus - r_minus)`.
    pub fn logarithmic(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidInput(format!("potential.c must be positive, got {c}")));
        }
        Ok(Self::build(PotentialKind::Logarithmic { c }, -1.0, 1.0, 2e-9))
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.first().is_some_and(|&a0| a0 != 0.0) {
            return Err(Error::InvalidInput("custom polynomial must vanish at 0".into()));
        }
        if coeffs.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidInput("custom polynomial has non-finite coefficients".into()));
        }
        Ok(Self::build(PotentialKind::Polynomial { coeffs }, f64::NEG_INFINITY, f64::INFINITY, 0.0))
    }

    fn build(kind: PotentialKind, r_minus: f64, r_plus: f64, guard: f64) -> Self {
        Self { kind, r_minus, r_plus, guard, clamps: Arc::new(AtomicU64::new(0)) }
    }

    pub fn with_guard(mut self, guard: f64) -> Result<Self> {
        if !(guard >= 0.0) || (self.r_plus - self.r_minus).is_finite() && 2.0 * guard >= self.r_plus - self.r_minus {
            return Err(Error::InvalidInput(format!("potential.guard out of range: {guard}")));
        }
        self.guard = guard;
        Ok(self)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PotentialKind::Regular => "regular",
            PotentialKind::Logarithmic { .. } => "logarithmic",
            PotentialKind::Polynomial { .. } => "custom-polynomial",
        }
    }

    pub fn has_finite_domain(&self) -> bool {
        self.r_minus.is_finite() || self.r_plus.is_finite()
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }

    pub fn reset_clamp_count(&self) {
        self.clamps.store(0, Ordering::Relaxed);
    }

    pub fn lower_guard(&self) -> f64 {
        self.r_minus + self.guard
    }

    pub fn upper_guard(&self) -> f64 {
        self.r_plus - self.guard
    }

    /// Whether `r` lies strictly inside the guarded interval.
    pub fn is_separated(&self, r: f64) -> bool {
        r > self.lower_guard() && r < self.upper_guard()
    }

    pub fn clamp(&self, r: f64) -> f64 {
        r.clamp(self.lower_guard(), self.upper_guard())
    }

    /// `f^(order)(clamp(r))`.
    pub fn eval_derivative(&self, order: usize, r: f64) -> Result<f64> {
        if order > 4 {
            return Err(Error::InvalidInput(format!("derivative order {order} exceeds 4")));
        }
        if !(r >= self.r_minus && r <= self.r_plus) {
            return Err(Error::OutOfDomain { value: r, r_minus: self.r_minus, r_plus: self.r_plus });
        }
        let rc = self.clamp(r);
        if rc != r {
            self.clamps.fetch_add(1, Ordering::Relaxed);
        }
        Ok(self.raw(order, rc))
    }

    /// Evaluates `f^(order)` on every entry of `r`.
    pub fn eval_field(&self, order: usize, r: &[f64]) -> Result<Vec<f64>> {
        r.iter().map(|&v| self.eval_derivative(order, v)).collect()
    }

    fn raw(&self, order: usize, r: f64) -> f64 {
        match &self.kind {
            PotentialKind::Regular => match order {
                0 => 0.25 * (r * r - 1.0).powi(2),
                1 => r * r * r - r,
                2 => 3.0 * r * r - 1.0,
                3 => 6.0 * r,
                _ => 6.0,
            },
            PotentialKind::Logarithmic { c } => {
                let (p, m) = (1.0 + r, 1.0 - r);
                match order {
                    0 => p * p.ln() + m * m.ln() - c * r * r,
                    1 => p.ln() - m.ln() - 2.0 * c * r,
                    2 => 1.0 / p + 1.0 / m - 2.0 * c,
                    3 => -1.0 / (p * p) + 1.0 / (m * m),
                    _ => 2.0 / (p * p * p) + 2.0 / (m * m * m),
                }
            }
            PotentialKind::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for (k, &a) in coeffs.iter().enumerate().skip(order).rev() {
                    let falling: f64 = (0..order).map(|j| (k - j) as f64).product();
                    acc = acc * r + a * falling;
                }
                acc
            }
        }
    }
}

/// Bulk and boundary potentials with the constants of `|f'| <= eta |f_G'| + C`.
#[derive(Debug, Clone)]
pub struct PotentialPair {
    pub bulk: PotentialSpec,
    pub bdry: PotentialSpec,
    pub eta: f64,
    pub compat_c: f64,
}

impl PotentialPair {
    /// `f_G = f`, with `eta = 1` and `C = 0`.
    pub fn same(spec: PotentialSpec) -> Self {
        Self { bulk: spec.clone(), bdry: spec, eta: 1.0, compat_c: 0.0 }
    }

    pub fn clamp_count(&self) -> u64 {
        if Arc::ptr_eq(&self.bulk.clamps, &self.bdry.clamps) {
            self.bulk.clamp_count()
        } else {
            self.bulk.clamp_count() + self.bdry.clamp_count()
        }
    }
}

#[derive(Debug, Clone)]
pub struct A2Report {
    pub samples: usize,
    pub f_at_zero: f64,
    pub f_gamma_at_zero: f64,
    pub min_f2: f64,
    pub min_f2_gamma: f64,
    /// `max (|f'| - eta |f_G'|)`, to be compared with `C`.
    pub max_compat_excess: f64,
    pub lower_bounded: bool,
    pub diverges_at_endpoints: bool,
    pub compatible: bool,
}

impl A2Report {
    pub fn passed(&self) -> bool {
        self.lower_bounded && self.diverges_at_endpoints && self.compatible
    }
}

/// Sample points clustering at the endpoints of the guarded domain.
fn graded_samples(spec: &PotentialSpec, n: usize) -> Vec<f64> {
    let (lo, hi) = if spec.has_finite_domain() {
        (spec.lower_guard(), spec.upper_guard())
    } else {
        (-1e3, 1e3)
    };
    (0..n)
        .map(|i| {
            let s = (i as f64 + 0.5) / n as f64;
            let g = 0.5 * (1.0 - (std::f64::consts::PI * s).cos());
            if spec.has_finite_domain() {
                lo + (hi - lo) * g
            } else {
                // Symmetric sinh grading from -1e3 to 1e3 resolves the wells near the origin.
                let z = 2.0 * g - 1.0;
                hi * (8.0 * z).sinh() / 8.0f64.sinh()
            }
        })
        .collect()
}

/// Sampled check of the structural assumptions on the pair.
pub fn check_a2(pair: &PotentialPair, samples: usize) -> Result<A2Report> {
    if samples < 100 {
        return Err(Error::InvalidInput(format!("check_a2 needs at least 100 samples, got {samples}")));
    }
    let rs = graded_samples(&pair.bulk, samples);
    let ev = |s: &PotentialSpec, o: usize, r: f64| s.raw(o, s.clamp(r));
    let min_f2 = rs.iter().map(|&r| ev(&pair.bulk, 2, r)).fold(f64::INFINITY, f64::min);
    let min_f2_gamma = rs.iter().map(|&r| ev(&pair.bdry, 2, r)).fold(f64::INFINITY, f64::min);
    let max_compat_excess = rs
        .iter()
        .map(|&r| ev(&pair.bulk, 1, r).abs() - pair.eta * ev(&pair.bdry, 1, r).abs())
        .fold(f64::NEG_INFINITY, f64::max);
    // Approaching each endpoint geometrically, f' must be monotone and exceed a moderate bound.
    let diverges = |s: &PotentialSpec| {
        let approach: Vec<(f64, f64)> = if s.has_finite_domain() {
            let span = s.r_plus - s.r_minus;
            (1..=30)
                .map(|j| span * 0.5 * 10f64.powi(-j))
                .take_while(|&d| d > 2.0 * s.guard)
                .map(|d| (s.r_minus + d, s.r_plus - d))
                .collect()
        } else {
            (0..=4).map(|j| (-(10f64.powi(j)), 10f64.powi(j))).collect()
        };
        let lo: Vec<f64> = approach.iter().map(|p| ev(s, 1, p.0)).collect();
        let hi: Vec<f64> = approach.iter().map(|p| ev(s, 1, p.1)).collect();
        approach.len() >= 2
            && lo.windows(2).all(|w| w[1] <= w[0])
            && hi.windows(2).all(|w| w[1] >= w[0])
            && hi[hi.len() - 1] > 10.0
            && lo[lo.len() - 1] < -10.0
    };
    Ok(A2Report {
        samples,
        f_at_zero: pair.bulk.raw(0, 0.0),
        f_gamma_at_zero: pair.bdry.raw(0, 0.0),
        min_f2,
        min_f2_gamma,
        max_compat_excess,
        lower_bounded: min_f2.is_finite() && min_f2_gamma.is_finite() && min_f2 > -1e8 && min_f2_gamma > -1e8,
        diverges_at_endpoints: diverges(&pair.bulk) && diverges(&pair.bdry),
        compatible: max_compat_excess <= pair.compat_c + 1e-12 * (1.0 + pair.compat_c),
    })
}

#[derive(Debug, Clone)]
pub struct FdOrderRow {
    pub order: usize,
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub passed: bool,
}

/// Central differences of `f^(i-1)` against `f^(i)` on the points `rs`, `i = 1..4`.
/// A row passes when the observed order is at least 1.7, or when every error sits
/// at the round-off floor (the differences are exact for low-degree polynomials).
pub fn fd_convergence(spec: &PotentialSpec, rs: &[f64], hs: &[f64]) -> Vec<FdOrderRow> {
    (1..=4)
        .map(|order| {
            let errors: Vec<f64> = hs
                .iter()
                .map(|&h| {
                    rs.iter()
                        .map(|&r| {
                            let fd = (spec.raw(order - 1, r + h) - spec.raw(order - 1, r - h)) / (2.0 * h);
                            let exact = spec.raw(order, r);
                            (fd - exact).abs() / (1.0 + exact.abs())
                        })
                        .fold(0.0f64, f64::max)
                })
                .collect();
            let slope = loglog_slope(hs, &errors);
            let floor = errors.iter().all(|&e| e < 1e-9);
            FdOrderRow { order, h: hs.to_vec(), errors, slope, passed: slope >= 1.7 || floor }
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regular_values() {
        let f = PotentialSpec::regular();
        assert_eq!(f.eval_derivative(0, 1.0).unwrap(), 0.0);
        assert_eq!(f.eval_derivative(1, 0.0).unwrap(), 0.0);
        assert_eq!(f.eval_derivative(2, 0.0).unwrap(), -1.0);
        assert_eq!(f.eval_derivative(4, 12.0).unwrap(), 6.0);
    }

    #[test]
    fn logarithmic_at_origin() {
        let f = PotentialSpec::logarithmic(1.0).unwrap();
        assert_eq!(f.eval_derivative(0, 0.0).unwrap(), 0.0);
        assert_eq!(f.eval_derivative(1, 0.0).unwrap(), 0.0);
        assert!(f.eval_derivative(2, 0.0).unwrap().abs() < 1e-15);
        // Finite-difference oracle for the symbolic derivative.
        let h = 1e-5;
        let fd = (f.eval_derivative(1, h).unwrap() - f.eval_derivative(1, -h).unwrap()) / (2.0 * h);
        assert!(fd.abs() < 1e-9);
    }

    #[test]
    fn out_of_domain_and_clamp() {
        let f = PotentialSpec::logarithmic(2.0).unwrap();
        assert!(matches!(f.eval_derivative(1, 1.5), Err(Error::OutOfDomain { .. })));
        assert!(matches!(f.eval_derivative(1, f64::NAN), Err(Error::OutOfDomain { .. })));
        assert_eq!(f.clamp_count(), 0);
        let v = f.eval_derivative(1, 1.0).unwrap();
        assert!(v.is_finite() && v > 10.0);
        assert_eq!(f.clamp_count(), 1);
        let c = f.clamp(1.0);
        assert_eq!(f.clamp(c), c);
        assert!(f.clamp(0.3) <= f.clamp(0.4));
        let g = PotentialSpec::logarithmic(2.0).unwrap().with_guard(0.0).unwrap();
        g.eval_derivative(3, 0.999).unwrap();
        assert_eq!(g.clamp_count(), 0);
    }

    #[test]
    fn polynomial_derivatives() {
        let p = PotentialSpec::polynomial(vec![0.0, 1.0, -2.0, 0.5]).unwrap();
        let r = 1.3;
        assert!((p.eval_derivative(0, r).unwrap() - (r - 2.0 * r * r + 0.5 * r * r * r)).abs() < 1e-13);
        assert!((p.eval_derivative(1, r).unwrap() - (1.0 - 4.0 * r + 1.5 * r * r)).abs() < 1e-13);
        assert!((p.eval_derivative(2, r).unwrap() - (-4.0 + 3.0 * r)).abs() < 1e-13);
        assert_eq!(p.eval_derivative(3, r).unwrap(), 3.0);
        assert_eq!(p.eval_derivative(4, r).unwrap(), 0.0);
        assert!(PotentialSpec::polynomial(vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn a2_reports() {
        let reg = check_a2(&PotentialPair::same(PotentialSpec::regular()), 400).unwrap();
        assert!((reg.min_f2 + 1.0).abs() < 5e-3);
        assert!(reg.passed());
        let log = check_a2(&PotentialPair::same(PotentialSpec::logarithmic(2.0).unwrap()), 400).unwrap();
        assert!(log.min_f2 < 0.0);
        assert_eq!(log.f_at_zero, 0.0);
        assert!(log.passed());
        assert!(log.max_compat_excess <= 0.0);
        assert!(check_a2(&PotentialPair::same(PotentialSpec::regular()), 50).is_err());
    }

    #[test]
    fn fd_orders() {
        let hs = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
        let rs = [-0.6, -0.2, 0.1, 0.5, 0.7];
        for spec in [PotentialSpec::regular(), PotentialSpec::logarithmic(2.0).unwrap()] {
            for row in fd_convergence(&spec, &rs, &hs) {
                assert!(row.passed, "{} order {}: slope {}", spec.name(), row.order, row.slope);
            }
        }
    }
}
