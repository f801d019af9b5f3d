use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mala::Estimate;
use super::{Metric, Observable};
use crate::ensembles::Ensemble;
use crate::error::{invalid, Result};

fn common_beta(ens: &dyn Ensemble) -> Result<f64> {
    let betas: Vec<Option<f64>> = ens.potentials().iter().map(|p| p.quadratic_beta()).collect();
    match betas.first() {
        Some(Some(b)) if betas.iter().all(|x| *x == Some(*b)) => Ok(*b),
        _ => invalid("exact sampling needs the same quadratic potential on every bond"),
    }
}

/// Independent exact draws from a quadratic ensemble. The energy is
/// ½xᵀMx − bᵀx + const with M = 2β·Laplacian, so the mean is −M⁺∇E(0).
pub fn exact_gaussian_sample(ens: &dyn Ensemble, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
    let beta = common_beta(ens)?;
    let metric = Metric::laplacian(ens, beta)?;
    let n = ens.region().len();
    let mut g = vec![0.0; n];
    ens.energy_grad(&vec![0.0; n], &mut g);
    let mut mean = metric.apply_inverse(&g);
    mean.iter_mut().for_each(|v| *v = -*v);
    ens.project(&mut mean);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let mut x = metric.sample(&mut rng);
            for (xi, mi) in x.iter_mut().zip(&mean) {
                *xi += mi;
            }
            ens.project(&mut x);
            x
        })
        .collect())
}

/// Monte Carlo estimates of observables from exact i.i.d. draws.
pub fn exact_observables(ens: &dyn Ensemble, observables: &[Observable], seed: u64, count: usize) -> Result<Vec<Estimate>> {
    if count < 2 {
        return invalid("need at least two draws");
    }
    let draws = exact_gaussian_sample(ens, seed, count)?;
    Ok(observables
        .iter()
        .map(|o| {
            let vals: Vec<f64> = draws.iter().map(|x| o.eval(ens, x, ens.energy_unchecked(x))).collect();
            let m = vals.iter().sum::<f64>() / count as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (count - 1) as f64;
            Estimate {
                name: o.name(),
                mean: m,
                stderr: (var / count as f64).sqrt(),
                ess: count as f64,
                iact: Some(1.0),
                flagged: var == 0.0,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{DirichletEnsemble, NeumannEnsemble};
    use crate::gff::GaussianExact;
    use crate::potentials::Potential;

    #[test]
    fn single_site_variance() {
        let beta = 0.7;
        let ens = DirichletEnsemble::cube(2, 1, &[0.3, 0.1], Potential::quadratic(beta).unwrap()).unwrap();
        let c = ens.region().index_of(&[0, 0]).unwrap();
        let obs = [Observable::Value(c), Observable::custom("sq", move |s: &[f64]| s[c] * s[c])];
        let est = exact_observables(&ens, &obs, 9, 40_000).unwrap();
        assert!(est[0].mean.abs() < 3.0 * est[0].stderr);
        assert!((est[1].mean - 1.0 / (8.0 * beta)).abs() < 3.0 * est[1].stderr);
    }

    #[test]
    fn neumann_slope_mean_matches_oracle() {
        let q = [1.0, -0.5];
        let ens = NeumannEnsemble::cube(2, 2, &q, Potential::quadratic(1.0).unwrap()).unwrap();
        let want = GaussianExact::new(2, 2, 1.0).unwrap().grad_nustar(&q).unwrap();
        let est = exact_observables(&ens, &[Observable::Slope(0), Observable::Slope(1)], 4, 20_000).unwrap();
        for i in 0..2 {
            assert!((est[i].mean - want[i]).abs() < 3.0 * est[i].stderr, "{:?} vs {}", est[i], want[i]);
        }
    }

    #[test]
    fn rejects_non_quadratic() {
        let ens = DirichletEnsemble::cube(2, 1, &[0.0, 0.0], Potential::logcosh(1.0).unwrap()).unwrap();
        assert!(exact_gaussian_sample(&ens, 1, 10).is_err());
    }
}
