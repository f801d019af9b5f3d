//! Monte Carlo surface tensions by thermodynamic integration.
//!
//! At zero tilt the free energy is integrated along V_t = (1 − t)V_ref + tV
//! from the Gaussian reference V_ref(x) = β_ref x², whose value is exact. The
//! tilt is then switched on along t ↦ tp using the exact p-derivative.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{DirichletEnsemble, Ensemble, NeumannEnsemble};
use crate::error::{invalid, Result};
use crate::gff::{nu_exact_region, GaussianExact};
use crate::lattice::Region;
use crate::numeric::{derive_seed, gauss_legendre, integrate};
use crate::potentials::Potential;
use crate::sampler::mala::Estimate;
use crate::sampler::{mala_chain, ChainConfig, Observable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Nu,
    Nustar,
}

impl Quantity {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::Nu => "nu",
            Quantity::Nustar => "nustar",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    GradientPath,
    ReferenceTi,
    ExactOracle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::GradientPath => "gradient-path",
            Method::ReferenceTi => "reference-TI",
            Method::ExactOracle => "exact-oracle",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurfaceTensionEstimate {
    pub quantity: Quantity,
    pub d: usize,
    pub n: u32,
    pub tilt: Vec<f64>,
    pub value: f64,
    pub stderr: f64,
    pub method: Method,
    /// Quadrature nodes summed over both paths.
    pub nodes: usize,
    pub seed: u64,
    /// Content hash of the run manifest, when one was written.
    pub manifest: Option<String>,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Defect {
    pub quantity: Quantity,
    pub n: u32,
    pub tilt: Vec<f64>,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiConfig {
    pub chain: ChainConfig,
    /// Initial Gauss–Legendre order.
    pub nodes: usize,
    pub max_nodes: usize,
}

impl Default for TiConfig {
    fn default() -> Self {
        TiConfig { chain: ChainConfig::default(), nodes: 8, max_nodes: 32 }
    }
}

/// Result of integrating a noisy integrand over [0, 1].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathIntegral {
    pub value: f64,
    pub stderr: f64,
    /// Gauss–Legendre order of the accepted rule.
    pub order: usize,
    /// |trapezoid − Gauss| on the accepted nodes plus the endpoints.
    pub discrepancy: f64,
    /// Integrand evaluations performed, endpoints included.
    pub evaluations: usize,
    pub flags: Vec<String>,
}

fn gauss_rule(order: usize, f: &(dyn Fn(f64, u64) -> Result<Estimate> + Sync), seed: u64) -> Result<(f64, f64, Vec<(f64, Estimate)>)> {
    let rule = gauss_legendre(order, 0.0, 1.0);
    let vals: Vec<(f64, Estimate)> = rule
        .par_iter()
        .enumerate()
        .map(|(k, &(t, _))| Ok((t, f(t, derive_seed(seed, (order as u64) << 16 | k as u64))?)))
        .collect::<Result<_>>()?;
    let value = rule.iter().zip(&vals).map(|((_, w), (_, e))| w * e.mean).sum();
    let var: f64 = rule.iter().zip(&vals).map(|((_, w), (_, e))| (w * e.stderr).powi(2)).sum();
    Ok((value, var.sqrt(), vals))
}

/// Integrates t ↦ E_t over [0, 1]. The Gauss–Legendre order is doubled from
/// `cfg.nodes` until two successive rules differ by less than one standard
/// error, or `cfg.max_nodes` is reached. The error combines the node standard
/// errors with the trapezoid-versus-Gauss discrepancy.
pub fn integrate_path(f: &(dyn Fn(f64, u64) -> Result<Estimate> + Sync), cfg: &TiConfig, seed: u64) -> Result<PathIntegral> {
    if cfg.nodes < 2 || cfg.max_nodes < cfg.nodes {
        return invalid("need 2 <= nodes <= max_nodes");
    }
    let ends: Vec<Estimate> =
        [0.0, 1.0].par_iter().enumerate().map(|(k, &t)| f(t, derive_seed(seed, 0xE0 + k as u64))).collect::<Result<_>>()?;
    let mut order = cfg.nodes;
    let (mut value, mut se, mut vals) = gauss_rule(order, f, seed)?;
    let mut evaluations = 2 + order;
    let mut flags = Vec::new();
    loop {
        if 2 * order > cfg.max_nodes {
            flags.push(format!("quadrature not converged at {} nodes", order));
            break;
        }
        let (v2, s2, vals2) = gauss_rule(2 * order, f, seed)?;
        evaluations += 2 * order;
        let converged = (v2 - value).abs() < s2;
        order *= 2;
        value = v2;
        se = s2;
        vals = vals2;
        if converged {
            break;
        }
    }
    let mut pts: Vec<(f64, f64)> = vec![(0.0, ends[0].mean)];
    pts.extend(vals.iter().map(|(t, e)| (*t, e.mean)));
    pts.push((1.0, ends[1].mean));
    let trap: f64 = pts.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
    let discrepancy = (trap - value).abs();
    for e in ends.iter().chain(vals.iter().map(|(_, e)| e)) {
        if e.flagged {
            flags.push(format!("node diagnostics flagged for {}", e.name));
            break;
        }
    }
    Ok(PathIntegral { value, stderr: (se * se + discrepancy * discrepancy).sqrt(), order, discrepancy, evaluations, flags })
}

fn single_estimate(ens: &dyn Ensemble, obs: Observable, cfg: &ChainConfig, seed: u64) -> Result<Estimate> {
    let out = mala_chain(ens, &ChainConfig { seed, ..cfg.clone() }, &[obs])?;
    let mut e = out.estimate(0)?;
    e.flagged |= !out.flags.is_empty();
    Ok(e)
}

/// (1/|U|) Σ_e V(p·e + ∇φ(e)) − V_ref(p·e + ∇φ(e)), without tilt terms.
fn energy_difference(region: Arc<Region>, shift: Vec<f64>, v: Potential, vref: Potential) -> Observable {
    Observable::custom("dH", move |s: &[f64]| {
        let mut acc = 0.0;
        for b in region.bonds() {
            let x = shift[b.dir] + s[b.head] - s[b.tail];
            acc += v.eval(x) - vref.eval(x);
        }
        acc / region.len() as f64
    })
}

/// Observables (1/|U|) Σ_{e ∥ e_i} V'(p_i + ∇φ(e)), i = 1..d.
pub fn nu_gradient_observables(region: &Arc<Region>, p: &[f64], v: &Potential) -> Vec<Observable> {
    (0..region.d())
        .map(|i| {
            let (r, v, pi) = (region.clone(), v.clone(), p[i]);
            Observable::custom(format!("dnu{}", i + 1), move |s: &[f64]| {
                let mut acc = 0.0;
                for b in r.bonds().iter().filter(|b| b.dir == i) {
                    acc += v.deriv(pi + s[b.head] - s[b.tail]);
                }
                acc / r.len() as f64
            })
        })
        .collect()
}

fn check_tilt(d: usize, p: &[f64]) -> Result<()> {
    if p.len() != d {
        return invalid(format!("tilt has {} components, expected {}", p.len(), d));
    }
    Ok(())
}

/// Monte Carlo ∇_p ν(U, p) and its standard errors.
pub fn grad_nu_region(region: Arc<Region>, p: &[f64], potential: &Potential, cfg: &ChainConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    check_tilt(region.d(), p)?;
    let ens = DirichletEnsemble::new(region.clone(), p, potential.clone())?;
    let out = mala_chain(&ens, cfg, &nu_gradient_observables(&region, p, potential))?;
    let est: Vec<Estimate> = (0..region.d()).map(|i| out.estimate(i)).collect::<Result<_>>()?;
    Ok((est.iter().map(|e| e.mean).collect(), est.iter().map(|e| e.stderr).collect()))
}

pub fn grad_nu_mc(d: usize, n: u32, p: &[f64], potential: &Potential, cfg: &ChainConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    grad_nu_region(Arc::new(Region::cube(d, n)?), p, potential, cfg)
}

/// Monte Carlo ∇_q ν*(Q_n, q) = E*_q ⟨∇ψ⟩ and its standard errors.
pub fn grad_nustar_mc(d: usize, n: u32, q: &[f64], potential: &Potential, cfg: &ChainConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    check_tilt(d, q)?;
    let ens = NeumannEnsemble::cube(d, n, q, potential.clone())?;
    let obs: Vec<Observable> = (0..d).map(Observable::Slope).collect();
    let out = mala_chain(&ens, cfg, &obs)?;
    let est: Vec<Estimate> = (0..d).map(|i| out.estimate(i)).collect::<Result<_>>()?;
    Ok((est.iter().map(|e| e.mean).collect(), est.iter().map(|e| e.stderr).collect()))
}

/// ν(U, p) by reference thermodynamic integration and the tilt path.
pub fn nu_estimate_region(region: Arc<Region>, p: &[f64], potential: &Potential, cfg: &TiConfig) -> Result<SurfaceTensionEstimate> {
    let d = region.d();
    check_tilt(d, p)?;
    cfg.chain.validate()?;
    let seed = cfg.chain.seed;
    let beta_ref = potential.reference_beta();
    let zero = vec![0.0; d];
    let anchor = nu_exact_region(&region, beta_ref, &zero)?;
    let mut value = anchor;
    let mut var = 0.0;
    let mut nodes = 0;
    let mut flags = Vec::new();
    let exact_reference = potential.quadratic_beta().is_some();

    if !exact_reference {
        let vref = Potential::quadratic(beta_ref)?;
        let region_c = region.clone();
        let f = move |t: f64, s: u64| -> Result<Estimate> {
            let vt = Potential::blend(vref.clone(), potential.clone(), t)?;
            let ens = DirichletEnsemble::new(region_c.clone(), &zero, vt)?;
            let obs = energy_difference(region_c.clone(), vec![0.0; d], potential.clone(), vref.clone());
            single_estimate(&ens, obs, &cfg.chain, s)
        };
        let path = integrate_path(&f, cfg, derive_seed(seed, 1))?;
        value += path.value;
        var += path.stderr * path.stderr;
        nodes += path.evaluations;
        flags.extend(path.flags);
    }

    if p.iter().any(|x| *x != 0.0) {
        let region_c = region.clone();
        let f = move |t: f64, s: u64| -> Result<Estimate> {
            let tp: Vec<f64> = p.iter().map(|x| t * x).collect();
            let ens = DirichletEnsemble::new(region_c.clone(), &tp, potential.clone())?;
            let (r, v, pv) = (region_c.clone(), potential.clone(), p.to_vec());
            let obs = Observable::custom("p.dnu", move |st: &[f64]| {
                let mut acc = 0.0;
                for b in r.bonds() {
                    acc += pv[b.dir] * v.deriv(tp[b.dir] + st[b.head] - st[b.tail]);
                }
                acc / r.len() as f64
            });
            single_estimate(&ens, obs, &cfg.chain, s)
        };
        let path = integrate_path(&f, cfg, derive_seed(seed, 2))?;
        value += path.value;
        var += path.stderr * path.stderr;
        nodes += path.evaluations;
        flags.extend(path.flags);
    }

    let method = match (exact_reference, p.iter().any(|x| *x != 0.0)) {
        (true, false) => Method::ExactOracle,
        (true, true) => Method::GradientPath,
        (false, _) => Method::ReferenceTi,
    };
    Ok(SurfaceTensionEstimate {
        quantity: Quantity::Nu,
        d,
        n: region.level().unwrap_or(0),
        tilt: p.to_vec(),
        value,
        stderr: var.sqrt(),
        method,
        nodes,
        seed,
        manifest: None,
        flags,
    })
}

pub fn nu_estimate(d: usize, n: u32, p: &[f64], potential: &Potential, cfg: &TiConfig) -> Result<SurfaceTensionEstimate> {
    nu_estimate_region(Arc::new(Region::cube(d, n)?), p, potential, cfg)
}

/// ν*(Q_n, q) by reference thermodynamic integration and the tilt path.
pub fn nustar_estimate(d: usize, n: u32, q: &[f64], potential: &Potential, cfg: &TiConfig) -> Result<SurfaceTensionEstimate> {
    check_tilt(d, q)?;
    cfg.chain.validate()?;
    let seed = cfg.chain.seed;
    let region = Arc::new(Region::cube(d, n)?);
    let beta_ref = potential.reference_beta();
    let zero = vec![0.0; d];
    let mut value = GaussianExact::new(d, n, beta_ref)?.nustar(&zero)?;
    let mut var = 0.0;
    let mut nodes = 0;
    let mut flags = Vec::new();
    let exact_reference = potential.quadratic_beta().is_some();

    if !exact_reference {
        let vref = Potential::quadratic(beta_ref)?;
        let region_c = region.clone();
        let f = move |t: f64, s: u64| -> Result<Estimate> {
            let vt = Potential::blend(vref.clone(), potential.clone(), t)?;
            let ens = NeumannEnsemble::new(region_c.clone(), &zero, vt)?;
            let obs = energy_difference(region_c.clone(), vec![0.0; d], potential.clone(), vref.clone());
            single_estimate(&ens, obs, &cfg.chain, s)
        };
        let path = integrate_path(&f, cfg, derive_seed(seed, 3))?;
        value -= path.value;
        var += path.stderr * path.stderr;
        nodes += path.evaluations;
        flags.extend(path.flags);
    }

    if q.iter().any(|x| *x != 0.0) {
        let region_c = region.clone();
        let f = move |t: f64, s: u64| -> Result<Estimate> {
            let tq: Vec<f64> = q.iter().map(|x| t * x).collect();
            let ens = NeumannEnsemble::new(region_c.clone(), &tq, potential.clone())?;
            let r = region_c.clone();
            let qv = q.to_vec();
            let obs = Observable::custom("q.slope", move |st: &[f64]| {
                let mut acc = 0.0;
                for b in r.bonds() {
                    acc += qv[b.dir] * (st[b.head] - st[b.tail]);
                }
                acc / r.len() as f64
            });
            single_estimate(&ens, obs, &cfg.chain, s)
        };
        let path = integrate_path(&f, cfg, derive_seed(seed, 4))?;
        value += path.value;
        var += path.stderr * path.stderr;
        nodes += path.evaluations;
        flags.extend(path.flags);
    }

    let method = match (exact_reference, q.iter().any(|x| *x != 0.0)) {
        (true, false) => Method::ExactOracle,
        (true, true) => Method::GradientPath,
        (false, _) => Method::ReferenceTi,
    };
    Ok(SurfaceTensionEstimate {
        quantity: Quantity::Nustar,
        d,
        n,
        tilt: q.to_vec(),
        value,
        stderr: var.sqrt(),
        method,
        nodes,
        seed,
        manifest: None,
        flags,
    })
}

/// τ_n = v(Q_n) − v(Q_{n+1}) for consecutive levels of one quantity and tilt.
pub fn defects(estimates: &[SurfaceTensionEstimate]) -> Result<Vec<Defect>> {
    let mut sorted: Vec<&SurfaceTensionEstimate> = estimates.iter().collect();
    sorted.sort_by_key(|e| e.n);
    if sorted.len() < 2 {
        return invalid("defects need at least two levels");
    }
    let first = sorted[0];
    for w in sorted.windows(2) {
        if w[1].n != w[0].n + 1 {
            return invalid(format!("gap in levels between {} and {}", w[0].n, w[1].n));
        }
        if w[1].quantity != first.quantity || w[1].tilt != first.tilt || w[1].d != first.d {
            return invalid("defects need one quantity, dimension and tilt");
        }
    }
    Ok(sorted
        .windows(2)
        .map(|w| Defect {
            quantity: first.quantity,
            n: w[0].n,
            tilt: first.tilt.clone(),
            value: w[0].value - w[1].value,
            stderr: (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt(),
        })
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UpperBoundReport {
    pub tilt: Vec<f64>,
    /// E[(1/|U|) Σ_e V(p·e + ∇X(e))] for X uniform on [0, 1] at interior vertices.
    pub bound: f64,
    /// bound / (1 + |p|²).
    pub constant: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub method: Method,
    pub passed: bool,
}

/// E V(a + U) for U uniform on [0, 1].
fn expect_shift(v: &Potential, a: f64, sign: f64) -> f64 {
    match v.quadratic_beta() {
        Some(beta) => beta * (a * a + sign * a + 1.0 / 3.0),
        None => integrate(|u| v.eval(a + sign * u), 0.0, 1.0, 16, 8),
    }
}

/// E V(a + U − U') for independent uniforms; the difference is triangular on [−1, 1].
fn expect_triangular(v: &Potential, a: f64) -> f64 {
    match v.quadratic_beta() {
        Some(beta) => beta * (a * a + 1.0 / 6.0),
        None => integrate(|s| (1.0 - s.abs()) * v.eval(a + s), -1.0, 1.0, 32, 8),
    }
}

/// The test-measure bound on ν(U, p) computed exactly bond by bond, compared
/// with an estimate of ν(U, p) (exact for quadratic potentials).
pub fn quadratic_upper_bound_check(region: Arc<Region>, p: &[f64], potential: &Potential, cfg: &TiConfig) -> Result<UpperBoundReport> {
    check_tilt(region.d(), p)?;
    let mask = region.boundary_mask();
    let mut total = 0.0;
    for b in region.bonds() {
        let a = p[b.dir];
        total += match (mask[b.tail], mask[b.head]) {
            (true, true) => potential.eval(a),
            (true, false) => expect_shift(potential, a, 1.0),
            (false, true) => expect_shift(potential, a, -1.0),
            (false, false) => expect_triangular(potential, a),
        };
    }
    let bound = total / region.len() as f64;
    let (estimate, stderr, method) = match potential.quadratic_beta() {
        Some(beta) => (nu_exact_region(&region, beta, p)?, 0.0, Method::ExactOracle),
        None => {
            let e = nu_estimate_region(region.clone(), p, potential, cfg)?;
            (e.value, e.stderr, e.method)
        }
    };
    let p2: f64 = p.iter().map(|x| x * x).sum();
    Ok(UpperBoundReport {
        tilt: p.to_vec(),
        bound,
        constant: bound / (1.0 + p2),
        estimate,
        stderr,
        method,
        passed: estimate <= bound + 3.0 * stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gff::nu_exact;

    fn quick() -> TiConfig {
        TiConfig { chain: ChainConfig { steps: 6_000, burn_in: 1_000, chains: 4, ..ChainConfig::default() }, ..TiConfig::default() }
    }

    #[test]
    fn quadratic_anchor_is_exact() {
        let v = Potential::quadratic(1.3).unwrap();
        let e = nu_estimate(2, 2, &[0.0, 0.0], &v, &quick()).unwrap();
        assert_eq!(e.method, Method::ExactOracle);
        assert_eq!(e.stderr, 0.0);
        assert!((e.value - nu_exact(2, 2, 1.3, &[0.0, 0.0]).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn quadratic_tilt_path_matches_oracle() {
        let v = Potential::quadratic(1.0).unwrap();
        let p = [1.0, 0.0];
        let e = nu_estimate(2, 1, &p, &v, &quick()).unwrap();
        let want = nu_exact(2, 1, 1.0, &p).unwrap();
        assert!((e.value - want).abs() < 3.0 * e.stderr + 1e-12, "{:?} vs {}", e, want);
    }

    #[test]
    fn defects_combine_errors() {
        let mk = |n, value, stderr| SurfaceTensionEstimate {
            quantity: Quantity::Nu,
            d: 2,
            n,
            tilt: vec![0.0, 0.0],
            value,
            stderr,
            method: Method::ExactOracle,
            nodes: 0,
            seed: 0,
            manifest: None,
            flags: vec![],
        };
        let t = defects(&[mk(2, 0.5, 0.4), mk(1, 0.5, 0.3)]).unwrap();
        assert_eq!(t[0].value, 0.0);
        assert!((t[0].stderr - 0.5).abs() < 1e-15);
        assert!(defects(&[mk(1, 0.0, 0.0), mk(3, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn upper_bound_on_cube_difference() {
        let q2 = Region::cube(2, 2).unwrap();
        let q1 = Region::cube(2, 1).unwrap();
        let u = Arc::new(Region::difference(&q2, &q1).unwrap());
        let v = Potential::quadratic(1.0).unwrap();
        let r = quadratic_upper_bound_check(u, &[0.5, 0.0], &v, &quick()).unwrap();
        assert!(r.passed, "{:?}", r);
        let r0 = quadratic_upper_bound_check(Arc::new(q1), &[0.0, 0.0], &v, &quick()).unwrap();
        assert!((r0.constant - r0.bound).abs() < 1e-15);
    }
}
