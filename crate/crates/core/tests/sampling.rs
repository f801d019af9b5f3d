use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use gradphi::ensembles::{DirichletEnsemble, Ensemble, NeumannEnsemble};
use gradphi::free_energy::{nustar_estimate, TiConfig};
use gradphi::gff::{nu_exact, nustar_exact};
use gradphi::lattice::Region;
use gradphi::potentials::Potential;
use gradphi::sampler::mala::mala_chain;
use gradphi::sampler::{exact_observables, ChainConfig, Observable};

/// Graph Laplacian of a region restricted to `keep`, and the tilt functional
/// c with Σ_e t_dir ∇φ(e) = cᵀφ on the same vertices.
fn laplacian(r: &Region, keep: &[usize], t: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let pos = |v: usize| keep.iter().position(|&k| k == v);
    let mut l = DMatrix::zeros(keep.len(), keep.len());
    let mut c = DVector::zeros(keep.len());
    for b in r.bonds() {
        let (h, tl) = (pos(b.head), pos(b.tail));
        if let Some(h) = h {
            l[(h, h)] += 1.0;
            c[h] += t[b.dir];
        }
        if let Some(tl) = tl {
            l[(tl, tl)] += 1.0;
            c[tl] -= t[b.dir];
        }
        if let (Some(h), Some(tl)) = (h, tl) {
            l[(h, tl)] -= 1.0;
            l[(tl, h)] -= 1.0;
        }
    }
    (l, c)
}

#[test]
fn banded_oracle_matches_dense_eigenvalues() {
    let beta = 0.7;
    for n in 1..=2 {
        let r = Region::cube(2, n).unwrap();
        let vol = r.len() as f64;
        for t in [[0.0, 0.0], [0.8, -0.3]] {
            let interior = r.interior_indices();
            let (l, c) = laplacian(&r, &interior, &t);
            let eig = SymmetricEigen::new(l);
            let logdet: f64 = eig.eigenvalues.iter().map(|x| x.ln()).sum();
            let coef = eig.eigenvectors.transpose() * &c;
            let quad: f64 = coef.iter().zip(eig.eigenvalues.iter()).map(|(a, x)| a * a / x).sum();
            let tilt: f64 = r.bonds().iter().map(|b| t[b.dir] * t[b.dir]).sum();
            let k = interior.len() as f64;
            let log_z = -beta * tilt + beta * quad + 0.5 * k * (PI / beta).ln() - 0.5 * logdet;
            let dense_nu = -log_z / vol;
            let nu = nu_exact(2, n, beta, &t).unwrap();
            assert!((nu - dense_nu).abs() <= 1e-9 * dense_nu.abs().max(1.0), "n={} {} vs {}", n, nu, dense_nu);

            let all: Vec<usize> = (0..r.len()).collect();
            let (l, b) = laplacian(&r, &all, &t);
            let eig = SymmetricEigen::new(l);
            let coef = eig.eigenvectors.transpose() * &b;
            let mut log_pdet = 0.0;
            let mut quad = 0.0;
            for (i, &x) in eig.eigenvalues.iter().enumerate() {
                if x > 1e-9 {
                    log_pdet += x.ln();
                    quad += coef[i] * coef[i] / x;
                }
            }
            let log_z = quad / (4.0 * beta) + 0.5 * (vol - 1.0) * (PI / beta).ln() - 0.5 * log_pdet;
            let dense_nustar = log_z / vol;
            let nustar = nustar_exact(2, n, beta, &t).unwrap();
            assert!((nustar - dense_nustar).abs() <= 1e-9 * dense_nustar.abs().max(1.0), "n={} {} vs {}", n, nustar, dense_nustar);
        }
    }
}

fn twenty_observables(ens: &dyn Ensemble) -> Vec<Observable> {
    let r = ens.region();
    let mut obs = vec![Observable::Energy, Observable::GradientEnergy, Observable::MeanSquare, Observable::Slope(0), Observable::Slope(1)];
    let interior = r.interior_indices();
    obs.extend(interior.iter().step_by(interior.len() / 7).take(7).map(|&v| Observable::Value(v)));
    let nb = r.bonds().len();
    obs.extend((0..8).map(|k| Observable::GradientSquare(k * nb / 8)));
    assert_eq!(obs.len(), 20);
    obs
}

fn compare(ens: &dyn Ensemble, seed: u64) {
    let obs = twenty_observables(ens);
    let cfg = ChainConfig { steps: 20_000, burn_in: 2_000, seed, ..ChainConfig::default() };
    let out = mala_chain(ens, &cfg, &obs).unwrap();
    let exact = exact_observables(ens, &obs, seed + 100, 40_000).unwrap();
    for (i, e) in exact.iter().enumerate() {
        let m = out.estimate(i).unwrap();
        let se = (m.stderr.powi(2) + e.stderr.powi(2)).sqrt();
        assert!((m.mean - e.mean).abs() <= 4.0 * se + 1e-12, "{}: MALA {} ± {} exact {} ± {}", m.name, m.mean, m.stderr, e.mean, e.stderr);
    }
}

#[test]
fn mala_agrees_with_exact_sampler_dirichlet() {
    let ens = DirichletEnsemble::cube(2, 2, &[0.5, 0.25], Potential::quadratic(1.0).unwrap()).unwrap();
    compare(&ens, 3);
}

#[test]
fn mala_agrees_with_exact_sampler_neumann() {
    let ens = NeumannEnsemble::cube(2, 2, &[1.0, 0.0], Potential::quadratic(0.5).unwrap()).unwrap();
    compare(&ens, 4);
}

#[test]
fn nustar_estimates_are_midpoint_convex_in_q() {
    let v = Potential::logcosh(1.0).unwrap();
    let cfg = TiConfig { chain: ChainConfig { steps: 8_000, burn_in: 1_000, ..ChainConfig::default() }, ..TiConfig::default() };
    let e: Vec<_> = [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]].iter().map(|q| nustar_estimate(2, 1, q, &v, &cfg).unwrap()).collect();
    let gap = 0.5 * (e[0].value + e[2].value) - e[1].value;
    let se = (0.25 * e[0].stderr.powi(2) + 0.25 * e[2].stderr.powi(2) + e[1].stderr.powi(2)).sqrt();
    assert!(gap >= -3.0 * se, "gap {} stderr {}", gap, se);
}
