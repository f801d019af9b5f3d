//! Small numerical helpers shared across modules.

use gauss_quad::GaussLegendre;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = NeumaierSum::default();
    for x in xs {
        s.add(x);
    }
    s.value()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Gauss–Legendre nodes and weights mapped to [a, b].
pub fn gauss_legendre(k: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(k).expect("Gauss-Legendre degree must be at least 2");
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut out: Vec<(f64, f64)> = rule
        .nodes()
        .zip(rule.weights())
        .map(|(&x, &w)| (mid + half * x, half * w))
        .collect();
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    out
}

/// Composite Gauss–Legendre integral of f over [a, b] with `panels` panels of order `k`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, k: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let rule = gauss_legendre(k, 0.0, h);
    let mut s = NeumaierSum::default();
    for j in 0..panels {
        let x0 = a + j as f64 * h;
        for &(x, w) in &rule {
            s.add(w * f(x0 + x));
        }
    }
    s.value()
}

/// Maximizes a unimodal function on [a, b] by golden-section search.
pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// SplitMix64 mixing of a base seed with a tag; used to derive child seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ln cosh x without overflow.
#[inline]
pub fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// sech² x without overflow.
#[inline]
pub fn sech2(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre(8, 0.0, 2.0);
        let s: f64 = rule.iter().map(|(x, w)| w * x.powi(7)).sum();
        assert!((s - 2f64.powi(8) / 8.0).abs() < 1e-12);
    }

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, fx) = golden_max(|x| -(x - 0.3) * (x - 0.3) + 2.0, -1.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-6);
        assert!((fx - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ln_cosh_is_stable() {
        assert!((ln_cosh(0.5) - 0.5f64.cosh().ln()).abs() < 1e-15);
        assert!((ln_cosh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-10);
        assert!((sech2(0.3) - 1.0 / 0.3f64.cosh().powi(2)).abs() < 1e-15);
    }
}
