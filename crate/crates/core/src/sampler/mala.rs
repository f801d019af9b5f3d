use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{diagnostics, TraceStats};
use super::{ChainConfig, Metric, Observable, TARGET_ACCEPTANCE};
use crate::ensembles::Ensemble;
use crate::error::{invalid, Result};

/// Running sums of ∇φ(e) and ∇φ(e)² over retained states, per bond.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BondMoments {
    pub count: usize,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl BondMoments {
    fn new(bonds: usize) -> BondMoments {
        BondMoments { count: 0, sum: vec![0.0; bonds], sum_sq: vec![0.0; bonds] }
    }

    pub fn mean(&self, e: usize) -> f64 {
        self.sum[e] / self.count as f64
    }

    pub fn second_moment(&self, e: usize) -> f64 {
        self.sum_sq[e] / self.count as f64
    }
}

/// Pooled estimate of one observable over all chains.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub mean: f64,
    pub stderr: f64,
    pub ess: f64,
    /// Mean over chains of the integrated autocorrelation time.
    pub iact: Option<f64>,
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainStats {
    pub acceptance: f64,
    pub observables: Vec<Estimate>,
}

#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub names: Vec<String>,
    /// traces[chain][observable][sample].
    pub traces: Vec<Vec<Vec<f64>>>,
    pub acceptance: Vec<f64>,
    /// Step size after burn-in, per chain.
    pub step_sizes: Vec<f64>,
    pub bond_moments: Vec<BondMoments>,
    /// dumps[chain] holds the stored states of that chain.
    pub dumps: Vec<Vec<Vec<f64>>>,
    pub flags: Vec<String>,
}

impl ChainOutput {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn chain_stats(&self, obs: usize) -> Result<Vec<TraceStats>> {
        self.traces.iter().map(|t| diagnostics(&t[obs])).collect()
    }

    pub fn chain_means(&self, obs: usize) -> Vec<f64> {
        self.traces.iter().map(|t| t[obs].iter().sum::<f64>() / t[obs].len() as f64).collect()
    }

    pub fn estimate(&self, obs: usize) -> Result<Estimate> {
        let stats = self.chain_stats(obs)?;
        let c = stats.len() as f64;
        let mean = stats.iter().map(|s| s.mean).sum::<f64>() / c;
        let stderr = stats.iter().map(|s| s.stderr * s.stderr).sum::<f64>().sqrt() / c;
        let ess = stats.iter().map(|s| s.ess).sum();
        let iact = if stats.iter().all(|s| s.iact.is_some()) {
            Some(stats.iter().map(|s| s.iact.unwrap()).sum::<f64>() / c)
        } else {
            None
        };
        let flagged = stats.iter().any(|s| s.flagged) || !self.flags.is_empty();
        Ok(Estimate { name: self.names[obs].clone(), mean, stderr, ess, iact, flagged })
    }

    pub fn mean_acceptance(&self) -> f64 {
        self.acceptance.iter().sum::<f64>() / self.acceptance.len() as f64
    }

    pub fn stats(&self) -> Result<ChainStats> {
        let observables = (0..self.names.len()).map(|i| self.estimate(i)).collect::<Result<_>>()?;
        Ok(ChainStats { acceptance: self.mean_acceptance(), observables })
    }
}

struct SingleChain {
    traces: Vec<Vec<f64>>,
    acceptance: f64,
    step_size: f64,
    moments: Option<BondMoments>,
    dumps: Vec<Vec<f64>>,
}

fn run_chain(ens: &dyn Ensemble, cfg: &ChainConfig, obs: &[Observable], metric: &Metric, chain: usize) -> SingleChain {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let n = ens.region().len();
    let bonds = ens.region().bonds();

    let mut x = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut ex = ens.energy_grad(&x, &mut gx);
    let mut px = metric.apply_inverse(&gx);
    let mut y = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut w = vec![0.0; n];

    let mut log_h = cfg.step_size.ln();
    let mut accepted = 0usize;
    let mut counted = 0usize;
    let mut traces = vec![Vec::with_capacity(cfg.retained()); obs.len()];
    let mut moments = cfg.bond_moments.then(|| BondMoments::new(bonds.len()));
    let mut dumps = Vec::new();
    let mut kept = 0usize;

    for step in 0..cfg.steps {
        let h = log_h.exp();
        let z = metric.sample(&mut rng);
        let s = (2.0 * h).sqrt();
        for i in 0..n {
            y[i] = x[i] - h * px[i] + s * z[i];
        }
        ens.project(&mut y);
        let ey = ens.energy_grad(&y, &mut gy);
        let py = metric.apply_inverse(&gy);
        let mut log_a = f64::NEG_INFINITY;
        if ey.is_finite() {
            for i in 0..n {
                w[i] = y[i] - x[i] + h * px[i];
            }
            let fwd = metric.norm_sq(&w);
            for i in 0..n {
                w[i] = x[i] - y[i] + h * py[i];
            }
            let bwd = metric.norm_sq(&w);
            log_a = ex - ey + (fwd - bwd) / (4.0 * h);
        }
        let u: f64 = rng.gen();
        let accept = u.ln() < log_a;
        if accept {
            std::mem::swap(&mut x, &mut y);
            std::mem::swap(&mut gx, &mut gy);
            ex = ey;
            px = py;
        }
        if step < cfg.burn_in {
            if cfg.adapt {
                let a = log_a.min(0.0).exp();
                log_h += (a - TARGET_ACCEPTANCE) / ((step + 1) as f64).powf(0.6);
            }
            continue;
        }
        counted += 1;
        accepted += accept as usize;
        if (step - cfg.burn_in + 1) % cfg.thin != 0 {
            continue;
        }
        for (t, o) in traces.iter_mut().zip(obs) {
            t.push(o.eval(ens, &x, ex));
        }
        if let Some(m) = moments.as_mut() {
            m.count += 1;
            for (e, b) in bonds.iter().enumerate() {
                let g = x[b.head] - x[b.tail];
                m.sum[e] += g;
                m.sum_sq[e] += g * g;
            }
        }
        if let Some(k) = cfg.dump_every {
            if kept % k == 0 {
                dumps.push(x.clone());
            }
        }
        kept += 1;
    }
    SingleChain { traces, acceptance: accepted as f64 / counted as f64, step_size: log_h.exp(), moments, dumps }
}

/// Runs `cfg.chains` independent MALA chains from the zero field. Chain c
/// draws from the ChaCha8 stream c of `cfg.seed`, so output is reproducible
/// regardless of thread scheduling.
pub fn mala_chain(ens: &dyn Ensemble, cfg: &ChainConfig, observables: &[Observable]) -> Result<ChainOutput> {
    cfg.validate()?;
    if ens.free_dim() == 0 {
        return invalid("ensemble has no free vertices");
    }
    let metric = if cfg.precondition {
        let beta = ens.potentials().iter().map(|p| p.reference_beta()).sum::<f64>() / ens.potentials().len() as f64;
        Metric::laplacian(ens, beta)?
    } else {
        Metric::identity(ens)
    };
    let runs: Vec<SingleChain> =
        (0..cfg.chains).into_par_iter().map(|c| run_chain(ens, cfg, observables, &metric, c)).collect();

    let mut flags = Vec::new();
    for (c, r) in runs.iter().enumerate() {
        if !(0.1..=0.9).contains(&r.acceptance) {
            flags.push(format!("chain {} acceptance {:.3} outside [0.1, 0.9]", c, r.acceptance));
        }
    }
    let mut out = ChainOutput {
        names: observables.iter().map(|o| o.name()).collect(),
        traces: Vec::with_capacity(runs.len()),
        acceptance: Vec::with_capacity(runs.len()),
        step_sizes: Vec::with_capacity(runs.len()),
        bond_moments: Vec::new(),
        dumps: Vec::new(),
        flags,
    };
    for r in runs {
        out.traces.push(r.traces);
        out.acceptance.push(r.acceptance);
        out.step_sizes.push(r.step_size);
        if let Some(m) = r.moments {
            out.bond_moments.push(m);
        }
        if cfg.dump_every.is_some() {
            out.dumps.push(r.dumps);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{DirichletEnsemble, NeumannEnsemble};
    use crate::potentials::Potential;

    fn cfg(seed: u64) -> ChainConfig {
        ChainConfig { steps: 12_000, burn_in: 2_000, seed, chains: 4, ..ChainConfig::default() }
    }

    #[test]
    fn single_site_moments() {
        let beta = 1.0;
        let ens = DirichletEnsemble::cube(2, 1, &[0.0, 0.0], Potential::quadratic(beta).unwrap()).unwrap();
        let center = ens.region().index_of(&[0, 0]).unwrap();
        let obs = [Observable::Value(center), Observable::custom("sq", move |s: &[f64]| s[center] * s[center])];
        for precondition in [true, false] {
            let out = mala_chain(&ens, &ChainConfig { precondition, ..cfg(11) }, &obs).unwrap();
            let m = out.estimate(0).unwrap();
            let v = out.estimate(1).unwrap();
            assert!(m.mean.abs() < 3.0 * m.stderr + 1e-12, "{:?}", m);
            assert!((v.mean - 1.0 / (8.0 * beta)).abs() < 3.0 * v.stderr, "{:?}", v);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let ens = NeumannEnsemble::cube(2, 1, &[0.5, 0.0], Potential::logcosh(1.0).unwrap()).unwrap();
        let obs = [Observable::Energy, Observable::Slope(0)];
        let c = ChainConfig { steps: 600, burn_in: 100, ..cfg(5) };
        let a = mala_chain(&ens, &c, &obs).unwrap();
        let b = mala_chain(&ens, &c, &obs).unwrap();
        assert_eq!(a.traces, b.traces);
        let d = mala_chain(&ens, &ChainConfig { seed: 6, ..c }, &obs).unwrap();
        assert_ne!(a.traces, d.traces);
    }

    #[test]
    fn neumann_states_stay_mean_zero() {
        let ens = NeumannEnsemble::cube(2, 1, &[1.0, -0.5], Potential::logcosh(2.0).unwrap()).unwrap();
        let obs = [Observable::custom("sum", |s: &[f64]| s.iter().sum::<f64>())];
        let c = ChainConfig { steps: 1_200, burn_in: 200, dump_every: Some(1), ..cfg(2) };
        let out = mala_chain(&ens, &c, &obs).unwrap();
        assert!(out.traces.iter().all(|t| t[0].iter().all(|v| v.abs() < 1e-9)));
        assert_eq!(out.dumps[0].len(), 1000);
    }

    #[test]
    fn rejects_bad_config() {
        let ens = DirichletEnsemble::cube(2, 1, &[0.0, 0.0], Potential::quadratic(1.0).unwrap()).unwrap();
        assert!(mala_chain(&ens, &ChainConfig { step_size: 0.0, ..cfg(1) }, &[]).is_err());
        assert!(mala_chain(&ens, &ChainConfig { steps: 10, burn_in: 10, ..cfg(1) }, &[]).is_err());
    }
}
