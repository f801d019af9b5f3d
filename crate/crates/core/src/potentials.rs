//! Elastic potentials V: even, V(0) = 0, with λ ≤ V'' ≤ 1/λ.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{ln_cosh, sech2};

/// Probe grid used by [`validate`]: [-50, 50] with step 1e-3.
pub const PROBE_HALF_WIDTH: f64 = 50.0;
pub const PROBE_STEP: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub enum Potential {
    /// V(x) = βx².
    Quadratic { beta: f64 },
    /// V(x) = x²/2 + a ln cosh x.
    LogCosh { a: f64 },
    /// Cubic-spline interpolation of tabulated values.
    Table(TablePotential),
    /// (1 − t)·V₀ + t·V₁, the interpolating family of thermodynamic integration.
    Blend(Box<Potential>, Box<Potential>, f64),
}

impl Potential {
    pub fn quadratic(beta: f64) -> Result<Potential> {
        if !(beta > 0.0) || !beta.is_finite() {
            return invalid(format!("quadratic potential needs beta > 0, got {}", beta));
        }
        Ok(Potential::Quadratic { beta })
    }

    pub fn logcosh(a: f64) -> Result<Potential> {
        if !(a >= 0.0) || !a.is_finite() {
            return invalid(format!("logcosh potential needs a >= 0, got {}", a));
        }
        Ok(Potential::LogCosh { a })
    }

    pub fn table(xs: Vec<f64>, vs: Vec<f64>, lambda: f64) -> Result<Potential> {
        Ok(Potential::Table(TablePotential::new(xs, vs, lambda)?))
    }

    pub fn blend(from: Potential, to: Potential, t: f64) -> Result<Potential> {
        if !(0.0..=1.0).contains(&t) {
            return invalid(format!("blend parameter must lie in [0, 1], got {}", t));
        }
        Ok(Potential::Blend(Box::new(from), Box::new(to), t))
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Potential::Quadratic { beta } => beta * x * x,
            Potential::LogCosh { a } => 0.5 * x * x + a * ln_cosh(x),
            Potential::Table(t) => t.eval(x),
            Potential::Blend(v0, v1, t) => (1.0 - t) * v0.eval(x) + t * v1.eval(x),
        }
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            Potential::Quadratic { beta } => 2.0 * beta * x,
            Potential::LogCosh { a } => x + a * x.tanh(),
            Potential::Table(t) => t.deriv(x),
            Potential::Blend(v0, v1, t) => (1.0 - t) * v0.deriv(x) + t * v1.deriv(x),
        }
    }

    #[inline]
    pub fn second_deriv(&self, x: f64) -> f64 {
        match self {
            Potential::Quadratic { beta } => 2.0 * beta,
            Potential::LogCosh { a } => 1.0 + a * sech2(x),
            Potential::Table(t) => t.second_deriv(x),
            Potential::Blend(v0, v1, t) => (1.0 - t) * v0.second_deriv(x) + t * v1.second_deriv(x),
        }
    }

    /// V and V' in one call.
    #[inline]
    pub fn eval_deriv(&self, x: f64) -> (f64, f64) {
        match self {
            Potential::Quadratic { beta } => (beta * x * x, 2.0 * beta * x),
            Potential::LogCosh { a } => (0.5 * x * x + a * ln_cosh(x), x + a * x.tanh()),
            _ => (self.eval(x), self.deriv(x)),
        }
    }

    /// Claimed ellipticity constant λ ∈ (0, 1].
    pub fn lambda(&self) -> f64 {
        match self {
            Potential::Quadratic { beta } => (2.0 * beta).min(1.0 / (2.0 * beta)),
            Potential::LogCosh { a } => 1.0 / (1.0 + a),
            Potential::Table(t) => t.lambda,
            Potential::Blend(v0, v1, _) => v0.lambda().min(v1.lambda()),
        }
    }

    /// β when V(x) = βx².
    pub fn quadratic_beta(&self) -> Option<f64> {
        match self {
            Potential::Quadratic { beta } => Some(*beta),
            _ => None,
        }
    }

    /// Stiffness of the Gaussian reference used to anchor free-energy estimates:
    /// V(x) = βx² itself, otherwise the midpoint of the V'' range over 2.
    pub fn reference_beta(&self) -> f64 {
        match self {
            Potential::Quadratic { beta } => *beta,
            Potential::LogCosh { a } => (2.0 + a) / 4.0,
            _ => {
                let (lo, hi) = probe_grid().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    let v2 = self.second_deriv(x);
                    (lo.min(v2), hi.max(v2))
                });
                (lo + hi) / 4.0
            }
        }
    }
}

impl fmt::Display for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Quadratic { beta } => write!(f, "quadratic:{}", beta),
            Potential::LogCosh { a } => write!(f, "logcosh:{}", a),
            Potential::Table(t) => write!(f, "table[{} knots]", t.xs.len()),
            Potential::Blend(v0, v1, t) => write!(f, "blend({},{},{})", v0, v1, t),
        }
    }
}

/// Parses `kind:param[,param]` strings such as `quadratic:1.0` or `logcosh:1.0`.
impl FromStr for Potential {
    type Err = Error;

    fn from_str(s: &str) -> Result<Potential> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("potential spec {:?} has no ':' separator", s)))?;
        let params: Vec<f64> = rest
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("bad parameters in potential spec {:?}", s)))?;
        match (kind.trim(), params.as_slice()) {
            ("quadratic", [beta]) => Potential::quadratic(*beta),
            ("logcosh", [a]) => Potential::logcosh(*a),
            (k, _) => invalid(format!("unknown potential kind or arity in {:?} (kind {:?})", s, k)),
        }
    }
}

impl Serialize for Potential {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Potential {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Cubic spline through (x_i, V_i) with end curvatures taken from the data;
/// outside the knot range V continues as a quadratic with the end curvature.
#[derive(Clone, Debug, PartialEq)]
pub struct TablePotential {
    xs: Vec<f64>,
    vs: Vec<f64>,
    m: Vec<f64>,
    lambda: f64,
}

impl TablePotential {
    pub fn new(xs: Vec<f64>, vs: Vec<f64>, lambda: f64) -> Result<TablePotential> {
        let n = xs.len();
        if n < 4 || vs.len() != n {
            return invalid("table potential needs at least 4 knots and matching values");
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("table knots must be strictly increasing");
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return invalid(format!("lambda must lie in (0, 1], got {}", lambda));
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let slope: Vec<f64> = (0..n - 1).map(|i| (vs[i + 1] - vs[i]) / h[i]).collect();
        let m0 = 2.0 * (slope[1] - slope[0]) / (h[0] + h[1]);
        let mn = 2.0 * (slope[n - 2] - slope[n - 3]) / (h[n - 3] + h[n - 2]);
        let mut m = vec![0.0; n];
        m[0] = m0;
        m[n - 1] = mn;
        // Thomas algorithm for the interior curvatures.
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for j in 0..k {
            let i = j + 1;
            diag[j] = 2.0 * (h[i - 1] + h[i]);
            rhs[j] = 6.0 * (slope[i] - slope[i - 1]);
        }
        rhs[0] -= h[0] * m0;
        rhs[k - 1] -= h[n - 2] * mn;
        for j in 1..k {
            let w = h[j] / diag[j - 1];
            diag[j] -= w * h[j];
            rhs[j] -= w * rhs[j - 1];
        }
        m[k] = rhs[k - 1] / diag[k - 1];
        for j in (0..k - 1).rev() {
            m[j + 1] = (rhs[j] - h[j + 1] * m[j + 2]) / diag[j];
        }
        Ok(TablePotential { xs, vs, m, lambda })
    }

    fn locate(&self, x: f64) -> usize {
        match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p => (p - 1).min(self.xs.len() - 2),
        }
    }

    /// (V, V', V'') at x.
    fn jet(&self, x: f64) -> (f64, f64, f64) {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] {
            let e = if x < self.xs[0] { 0 } else { n - 1 };
            let (v, d1, d2) = self.jet(self.xs[e]);
            let t = x - self.xs[e];
            return (v + d1 * t + 0.5 * d2 * t * t, d1 + d2 * t, d2);
        }
        let i = self.locate(x);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let v = a * self.vs[i] + b * self.vs[i + 1] + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d1 = (self.vs[i + 1] - self.vs[i]) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0 + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        let d2 = a * m0 + b * m1;
        (v, d1, d2)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.jet(x).0
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.jet(x).1
    }

    pub fn second_deriv(&self, x: f64) -> f64 {
        self.jet(x).2
    }
}

/// Outcome of [`validate`].
#[derive(Clone, Debug, Serialize)]
pub struct EllipticityReport {
    pub min_second_deriv: f64,
    pub max_second_deriv: f64,
    pub symmetry_residual: f64,
    pub lambda: f64,
    /// Largest admissible λ given the observed V'' range.
    pub lambda_supported: f64,
}

pub fn probe_grid() -> impl Iterator<Item = f64> {
    let steps = (2.0 * PROBE_HALF_WIDTH / PROBE_STEP).round() as i64;
    (0..=steps).map(|k| -PROBE_HALF_WIDTH + k as f64 * PROBE_STEP)
}

/// Checks symmetry, normalization, the V'' bounds and the growth bounds
/// λx²/2 ≤ V(x) ≤ x²/(2λ) on the probe grid.
pub fn validate(v: &Potential) -> Result<EllipticityReport> {
    let lambda = v.lambda();
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::PotentialViolation { x: 0.0, reason: format!("lambda {} outside (0, 1]", lambda) });
    }
    let v0 = v.eval(0.0);
    if v0.abs() > 1e-12 {
        return Err(Error::PotentialViolation { x: 0.0, reason: format!("V(0) = {} is not 0", v0) });
    }
    let d0 = v.deriv(0.0);
    if d0.abs() > 1e-9 {
        return Err(Error::PotentialViolation { x: 0.0, reason: format!("V'(0) = {} is not 0", d0) });
    }
    let tol = 1e-9;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut sym = 0.0f64;
    for x in probe_grid() {
        let vx = v.eval(x);
        let vm = v.eval(-x);
        let scale = 1.0 + vx.abs();
        let r = (vx - vm).abs() / scale;
        if r > 1e-10 {
            return Err(Error::PotentialViolation { x, reason: format!("V(x) = {} but V(-x) = {}", vx, vm) });
        }
        sym = sym.max(r);
        let v2 = v.second_deriv(x);
        lo = lo.min(v2);
        hi = hi.max(v2);
        if v2 < lambda - tol || v2 > 1.0 / lambda + tol {
            return Err(Error::PotentialViolation {
                x,
                reason: format!("V''(x) = {} outside [{}, {}]", v2, lambda, 1.0 / lambda),
            });
        }
        let x2 = x * x;
        if vx < 0.5 * lambda * x2 - tol * scale || vx > x2 / (2.0 * lambda) + tol * scale {
            return Err(Error::PotentialViolation { x, reason: format!("V(x) = {} violates the quadratic growth bounds", vx) });
        }
    }
    Ok(EllipticityReport {
        min_second_deriv: lo,
        max_second_deriv: hi,
        symmetry_residual: sym,
        lambda,
        lambda_supported: lo.min(1.0 / hi).min(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_values() {
        let v = Potential::quadratic(1.0).unwrap();
        assert_eq!(v.eval(2.0), 4.0);
        assert_eq!(v.deriv(2.0), 4.0);
        assert_eq!(v.second_deriv(-7.0), 2.0);
        let r = validate(&v).unwrap();
        assert_eq!(r.min_second_deriv, 2.0);
        assert_eq!(r.max_second_deriv, 2.0);
        assert_eq!(r.lambda, 0.5);
    }

    #[test]
    fn logcosh_values() {
        let v = Potential::logcosh(1.0).unwrap();
        assert_eq!(v.second_deriv(0.0), 2.0);
        let x: f64 = 0.8;
        assert!((v.eval(x) - (0.5 * x * x + x.cosh().ln())).abs() < 1e-15);
        let r = validate(&v).unwrap();
        assert!(r.min_second_deriv >= 1.0 && r.min_second_deriv < 1.0 + 1e-12);
        assert_eq!(r.max_second_deriv, 2.0);
        assert_eq!(r.lambda, 0.5);
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(Potential::quadratic(0.0).is_err());
        assert!(Potential::quadratic(-1.0).is_err());
        assert!(Potential::logcosh(-0.1).is_err());
    }

    #[test]
    fn parse_and_display() {
        let v: Potential = "logcosh:1.0".parse().unwrap();
        assert_eq!(v, Potential::LogCosh { a: 1.0 });
        let q: Potential = "quadratic: 2.5".parse().unwrap();
        assert_eq!(q, Potential::Quadratic { beta: 2.5 });
        assert_eq!(q.to_string().parse::<Potential>().unwrap(), q);
        assert!("cubic:1".parse::<Potential>().is_err());
        assert!("quadratic".parse::<Potential>().is_err());
        assert!("quadratic:1,2".parse::<Potential>().is_err());
    }

    #[test]
    fn asymmetric_table_rejected() {
        let xs: Vec<f64> = (-4..=4).map(|k| k as f64 * 0.5).collect();
        let mut vs: Vec<f64> = xs.iter().map(|x| x * x).collect();
        // V(1) differs from V(-1).
        vs[6] += 0.05;
        let v = Potential::table(xs, vs, 0.5).unwrap();
        match validate(&v) {
            Err(Error::PotentialViolation { .. }) => {}
            other => panic!("expected rejection, got {:?}", other),
        }
    }

    #[test]
    fn symmetric_table_of_quadratic_is_accepted() {
        let xs: Vec<f64> = (-20..=20).map(|k| k as f64 * 0.25).collect();
        let vs: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let v = Potential::table(xs, vs, 0.5).unwrap();
        let r = validate(&v).unwrap();
        assert!((r.min_second_deriv - 2.0).abs() < 1e-9);
        assert!((v.eval(1.3) - 1.69).abs() < 1e-12);
        assert!((v.eval(30.0) - 900.0).abs() < 1e-8);
    }

    #[test]
    fn blend_interpolates() {
        let b = Potential::blend(Potential::quadratic(1.0).unwrap(), Potential::logcosh(1.0).unwrap(), 0.25).unwrap();
        let x = 0.7;
        let want = 0.75 * x * x + 0.25 * (0.5 * x * x + (x as f64).cosh().ln());
        assert!((b.eval(x) - want).abs() < 1e-15);
        assert_eq!(b.lambda(), 0.5);
        validate(&b).unwrap();
    }
}
