//! Brute-force references that share no code with the library's estimators.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn logcosh(a: f64, x: f64) -> f64 {
    let ax = x.abs();
    0.5 * x * x + a * (ax + (-2.0 * ax).exp().ln_1p() - std::f64::consts::LN_2)
}

pub fn logcosh_d(a: f64, x: f64) -> f64 {
    x + a * x.tanh()
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = 2 * panels;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// ν(Q_1, p) in d = 2 for a potential V. The only free vertex is the centre;
/// the 8 boundary-to-boundary bonds contribute 4V(p_0) + 4V(p_1).
pub fn nu_q1_quadrature(v: impl Fn(f64) -> f64, p: [f64; 2]) -> f64 {
    let fixed = 4.0 * v(p[0]) + 4.0 * v(p[1]);
    let inner = |x: f64| v(p[0] + x) + v(p[0] - x) + v(p[1] + x) + v(p[1] - x);
    let shift = inner(0.0);
    let z = simpson(|x| (-(inner(x) - shift)).exp(), -40.0, 40.0, 40_000);
    (fixed + shift - z.ln()) / 9.0
}

/// The 12 bonds of the 3×3 grid as (tail, head, dir), vertices indexed x + 3y.
fn q1_bonds() -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for y in 0..3 {
        for x in 0..3 {
            let v = x + 3 * y;
            if x < 2 {
                out.push((v, v + 1, 0));
            }
            if y < 2 {
                out.push((v, v + 3, 1));
            }
        }
    }
    out
}

fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// ν*(Q_1, q) in d = 2 for a potential V with V'' ≥ 1, by importance-sampled
/// randomized Halton points in orthonormal coordinates of the mean-zero plane.
/// The proposal is N(mode, K⁻¹) with K the graph Laplacian in those
/// coordinates, so the weights are bounded. Returns (value, stderr) over
/// `replicates` independent Cranley–Patterson shifts.
pub fn nustar_q1_qmc(
    v: impl Fn(f64) -> f64 + Sync,
    dv: impl Fn(f64) -> f64,
    q: [f64; 2],
    points: usize,
    replicates: usize,
    seed: u64,
) -> (f64, f64) {
    let bonds = q1_bonds();
    // Orthonormal basis of {x ∈ R^9 : Σx = 0} from Gram–Schmidt on e_i − e_8.
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for i in 0..8 {
        let mut u = DVector::zeros(9);
        u[i] = 1.0;
        u[8] = -1.0;
        for b in &basis {
            let c = b.dot(&u);
            u -= b * c;
        }
        basis.push(u.normalize());
    }
    let basis = DMatrix::from_columns(&basis);

    let mut lap = DMatrix::<f64>::zeros(9, 9);
    for &(t, h, _) in &bonds {
        lap[(t, t)] += 1.0;
        lap[(h, h)] += 1.0;
        lap[(t, h)] -= 1.0;
        lap[(h, t)] -= 1.0;
    }
    let k = basis.transpose() * &lap * &basis;

    let energy = |y: &DVector<f64>| -> f64 {
        let x = &basis * y;
        bonds.iter().map(|&(t, h, d)| v(x[h] - x[t]) - q[d] * (x[h] - x[t])).sum()
    };
    let gradient = |y: &DVector<f64>| -> DVector<f64> {
        let x = &basis * y;
        let mut g = DVector::zeros(9);
        for &(t, h, d) in &bonds {
            let f = dv(x[h] - x[t]) - q[d];
            g[h] += f;
            g[t] -= f;
        }
        basis.transpose() * g
    };

    // Mode by gradient descent preconditioned with K; converges since V'' ≥ 1.
    let kinv = k.clone().try_inverse().unwrap();
    let mut mode = DVector::zeros(8);
    for _ in 0..2000 {
        let step = &kinv * gradient(&mode) * 0.5;
        mode -= &step;
        if step.norm() < 1e-14 {
            break;
        }
    }
    let e_mode = energy(&mode);

    let chol = k.clone().cholesky().unwrap();
    let l = chol.l();
    let log_det_k: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_zg = 4.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det_k;

    let normal = Normal::new(0.0, 1.0).unwrap();
    let primes = [2u64, 3, 5, 7, 11, 13, 17, 19];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut estimates = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let shift: Vec<f64> = (0..8).map(|_| rng.gen()).collect();
        let mut acc = 0.0;
        for i in 0..points {
            let z = DVector::from_iterator(
                8,
                (0..8).map(|j| {
                    let u = (halton(i as u64 + 1, primes[j]) + shift[j]).fract();
                    normal.inverse_cdf(u.clamp(1e-300, 1.0 - 1e-16))
                }),
            );
            // δ = L⁻ᵀz has covariance K⁻¹ and δᵀKδ = |z|².
            let delta = l.transpose().solve_upper_triangular(&z).unwrap();
            let y = &mode + &delta;
            acc += (-(energy(&y) - e_mode) + 0.5 * z.norm_squared()).exp();
        }
        let z_hat = (acc / points as f64).ln() + log_zg - e_mode;
        estimates.push(z_hat / 9.0);
    }
    let r = replicates as f64;
    let m = estimates.iter().sum::<f64>() / r;
    let var = estimates.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / (r - 1.0);
    (m, (var / r).sqrt())
}
