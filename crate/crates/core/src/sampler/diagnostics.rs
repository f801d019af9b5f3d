//! Autocorrelation analysis of scalar traces.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_TRACE: usize = 100;
/// Window constant of the self-consistent truncation M ≥ c·τ(M).
pub const SOKAL_C: f64 = 5.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceStats {
    pub len: usize,
    pub mean: f64,
    pub variance: f64,
    /// Integrated autocorrelation time; None for a constant trace.
    pub iact: Option<f64>,
    pub ess: f64,
    /// Batch-means standard error of the mean.
    pub stderr: f64,
    pub flagged: bool,
}

/// Normalized autocorrelation ρ(0..len) computed with a zero-padded FFT.
pub fn autocorrelation(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    if c0 <= 0.0 {
        return vec![0.0; n];
    }
    buf[..n].iter().map(|c| c.re / c0).collect()
}

/// τ = 1 + 2 Σ_{t=1}^{M} ρ(t) with the smallest window M ≥ c·τ(M).
pub fn integrated_autocorrelation(x: &[f64]) -> Option<f64> {
    let rho = autocorrelation(x);
    if rho.iter().all(|r| *r == 0.0) {
        return None;
    }
    let mut tau = 1.0;
    for (m, r) in rho.iter().enumerate().skip(1) {
        tau += 2.0 * r;
        if m as f64 >= SOKAL_C * tau {
            return Some(tau.max(1e-12));
        }
    }
    Some(tau.max(1e-12))
}

pub fn batch_means_stderr(x: &[f64]) -> f64 {
    let n = x.len();
    let nb = (n as f64).sqrt().floor() as usize;
    let size = n / nb;
    let means: Vec<f64> = (0..nb).map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / nb as f64;
    let var = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (nb - 1) as f64;
    (var / nb as f64).sqrt()
}

pub fn diagnostics(trace: &[f64]) -> Result<TraceStats> {
    let n = trace.len();
    if n < MIN_TRACE {
        return Err(Error::TraceTooShort { len: n, min: MIN_TRACE });
    }
    if trace.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diagnostics("trace contains non-finite values".into()));
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let variance = trace.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    if variance == 0.0 {
        return Ok(TraceStats { len: n, mean, variance, iact: None, ess: n as f64, stderr: 0.0, flagged: true });
    }
    let iact = integrated_autocorrelation(trace);
    let ess = iact.map(|t| (n as f64 / t).min(n as f64)).unwrap_or(n as f64);
    Ok(TraceStats { len: n, mean, variance, iact, ess, stderr: batch_means_stderr(trace), flagged: iact.is_none() })
}

/// Delete-one-chain jackknife of a statistic of per-chain averages.
/// `per_chain[c]` holds the averages of chain c; returns (value, stderr).
pub fn jackknife(per_chain: &[Vec<f64>], f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    let c = per_chain.len();
    let k = per_chain[0].len();
    let avg = |skip: Option<usize>| -> Vec<f64> {
        let used = c - skip.is_some() as usize;
        (0..k)
            .map(|j| per_chain.iter().enumerate().filter(|(i, _)| Some(*i) != skip).map(|(_, v)| v[j]).sum::<f64>() / used as f64)
            .collect()
    };
    let full = f(&avg(None));
    if c < 2 {
        return (full, f64::NAN);
    }
    let loo: Vec<f64> = (0..c).map(|i| f(&avg(Some(i)))).collect();
    let m = loo.iter().sum::<f64>() / c as f64;
    let var = (c - 1) as f64 / c as f64 * loo.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    (full, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn iid_trace_has_unit_iact() {
        let s = diagnostics(&normals(100_000, 3)).unwrap();
        let t = s.iact.unwrap();
        assert!((t - 1.0).abs() < 0.2, "iact {}", t);
        assert!(s.ess <= s.len as f64);
    }

    #[test]
    fn ar1_trace_iact() {
        let z = normals(400_000, 5);
        let mut x = vec![0.0; z.len()];
        for i in 1..z.len() {
            x[i] = 0.9 * x[i - 1] + z[i];
        }
        let t = diagnostics(&x).unwrap().iact.unwrap();
        assert!((t - 19.0).abs() < 0.25 * 19.0, "iact {}", t);
    }

    #[test]
    fn constant_trace_is_flagged() {
        let s = diagnostics(&vec![1.5; 500]).unwrap();
        assert!(s.flagged && s.iact.is_none());
        assert_eq!(s.stderr, 0.0);
    }

    #[test]
    fn short_trace_rejected() {
        assert!(matches!(diagnostics(&[0.0; 99]), Err(Error::TraceTooShort { .. })));
    }

    #[test]
    fn jackknife_of_mean_matches_plain_stderr() {
        let chains: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let (v, se) = jackknife(&chains, |a| a[0]);
        assert!((v - 4.5).abs() < 1e-12);
        let sd = (chains.iter().map(|c| (c[0] - 4.5).powi(2)).sum::<f64>() / 9.0).sqrt();
        assert!((se - sd / 10f64.sqrt()).abs() < 1e-12);
    }
}
