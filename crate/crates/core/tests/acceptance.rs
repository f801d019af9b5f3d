//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::cell::OnceCell;
use std::time::{Duration, Instant};

use gradphi::free_energy::{nu_estimate, nustar_estimate, Quantity, TiConfig};
use gradphi::potentials::Potential;
use gradphi::sampler::ChainConfig;
use gradphi::verification::*;

const D: usize = 2;
const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn summarize(reports: &[&CheckReport]) -> Outcome {
    let pass = reports.iter().all(|r| r.passed());
    let detail = reports
        .iter()
        .map(|r| {
            let c: Vec<String> = r.constants.iter().map(|(k, v)| format!("{}={:.4e}", k, v)).collect();
            format!("{} {} [{}]", r.id, r.status.as_str(), c.join(", "))
        })
        .collect::<Vec<_>>()
        .join("; ");
    Outcome { pass, detail }
}

fn quadratic() -> Potential {
    Potential::quadratic(1.0).unwrap()
}

fn logcosh() -> Potential {
    Potential::logcosh(1.0).unwrap()
}

struct Tables {
    nu: SurfaceTable,
    nustar: SurfaceTable,
}

fn gff_tables() -> Tables {
    let grid = tilt_grid(D, -2.0, 2.0, 0.5).unwrap();
    let levels = [1, 2, 3, 4, 5];
    Tables {
        nu: SurfaceTable::gff(Quantity::Nu, D, &levels, 1.0, &grid).unwrap(),
        nustar: SurfaceTable::gff(Quantity::Nustar, D, &levels, 1.0, &grid).unwrap(),
    }
}

fn rate() -> Outcome {
    let p = [0.0, 0.0];
    let t = SurfaceTable::gff(Quantity::Nu, D, &[1, 2, 3, 4, 5], 1.0, &[p.to_vec()]).unwrap();
    let r = check_rate(&t, &p, (0.8, 1.2)).unwrap();
    summarize(&[&r])
}

fn duality(t: &Tables) -> Outcome {
    let qs = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]];
    let r = check_duality(&t.nu, &t.nustar, &qs, 1e-3).unwrap();
    summarize(&[&r])
}

fn oracle_sampler() -> Outcome {
    let r = check_oracle_sampler_agreement(D, 2, 1.0, &[1.0, 0.0], &ChainConfig::default(), 1000.0).unwrap();
    summarize(&[&r])
}

fn property_suite(t: &Tables) -> Outcome {
    let reports = [
        check_subadditivity(&t.nu).unwrap(),
        check_subadditivity(&t.nustar).unwrap(),
        check_one_sided_duality(&t.nu, &t.nustar).unwrap(),
        check_quadratic_bounds(&t.nu).unwrap(),
        check_quadratic_bounds(&t.nustar).unwrap(),
        check_uniform_convexity(&t.nu).unwrap(),
        check_uniform_convexity(&t.nustar).unwrap(),
    ];
    summarize(&reports.iter().collect::<Vec<_>>())
}

fn ti_validation() -> Outcome {
    let v = logcosh();
    let cfg = TiConfig::default();
    let mut pass = true;
    let mut detail = Vec::new();
    for p in [[0.0, 0.0], [1.0, 0.5]] {
        let est = nu_estimate(D, 1, &p, &v, &cfg).unwrap();
        let oracle = common::nu_q1_quadrature(|x| common::logcosh(1.0, x), p);
        let z = (est.value - oracle).abs() / est.stderr;
        pass &= z <= SIGMA;
        detail.push(format!("nu{:?} {:.6} vs {:.6} z={:.2}", p, est.value, oracle, z));
    }
    let q = [1.0, 0.0];
    let est = nustar_estimate(D, 1, &q, &v, &cfg).unwrap();
    let (oracle, ose) = common::nustar_q1_qmc(|x| common::logcosh(1.0, x), |x| common::logcosh_d(1.0, x), q, 16384, 16, SEED);
    let z = (est.value - oracle).abs() / (est.stderr.powi(2) + ose.powi(2)).sqrt();
    pass &= z <= SIGMA;
    detail.push(format!("nustar{:?} {:.6} vs {:.6} z={:.2}", q, est.value, oracle, z));
    Outcome { pass, detail: detail.join("; ") }
}

fn slope_variance() -> Outcome {
    let q = [1.0, 0.0];
    let cfg = ChainConfig::default();
    let g = check_slope_variance_contraction(D, &q, &[1, 2, 3, 4], &quadratic(), &cfg, None).unwrap();
    let l = check_slope_variance_contraction(D, &q, &[1, 2, 3], &logcosh(), &cfg, None).unwrap();
    summarize(&[&g, &l])
}

fn flatness() -> Outcome {
    let p = [0.5, 0.0];
    let cfg = ChainConfig::default();
    let g = check_flatness(D, &p, &[1, 2, 3, 4], &quadratic(), &cfg).unwrap();
    let l = check_flatness(D, &p, &[1, 2, 3], &logcosh(), &cfg).unwrap();
    summarize(&[&g, &l])
}

fn functional_inequalities() -> Outcome {
    let reports = inequality_suite(D, &[3, 4], 1000, SEED).unwrap();
    summarize(&reports.iter().collect::<Vec<_>>())
}

fn patching_operator() -> Outcome {
    let r = check_patching_operator(D, &[1, 2], Some((2, 3888)), SEED).unwrap();
    summarize(&[&r])
}

fn block_integral() -> Outcome {
    let r = check_block_integral(D, &[(1, 2), (1, 3), (2, 3)], 1.0).unwrap();
    summarize(&[&r])
}

fn variational() -> Outcome {
    let v = logcosh();
    let r = check_variational_formula_lowdim(&move |x: &[f64]| v.eval(x[0]), 1, -12.0, 12.0, 20, SEED).unwrap();
    summarize(&[&r])
}

fn gibbs_inequalities() -> Outcome {
    let q = [1.0, 0.0];
    let cfg = ChainConfig::default();
    let balls = ball_battery(D, 3, 10, SEED).unwrap();
    let (gc, grh) = check_caccioppoli_reverse_holder(D, 3, &q, &quadratic(), &cfg, &balls).unwrap();
    let (lc, lrh) = check_caccioppoli_reverse_holder(D, 3, &q, &logcosh(), &cfg, &balls).unwrap();
    let deltas = [0.1, 0.25, 0.5];
    let gm = check_meyers(D, 0.75, &[2, 3, 4], &q, &quadratic(), &cfg, &deltas).unwrap();
    let short = ChainConfig { steps: 6000, burn_in: 1000, ..ChainConfig::default() };
    let lm = check_meyers(D, 0.75, &[2, 3, 4], &q, &logcosh(), &short, &deltas).unwrap();
    summarize(&[&gc, &grh, &lc, &lrh, &gm, &lm])
}

fn main() {
    let start = Instant::now();
    // Built by whichever criterion needs the exact tables first.
    let tables: OnceCell<Tables> = OnceCell::new();

    type Criterion<'a> = (&'a str, u64, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("GFF rate", 120, Box::new(rate)),
        ("GFF duality", 60, Box::new(|| duality(tables.get_or_init(gff_tables)))),
        ("oracle-sampler agreement", 300, Box::new(oracle_sampler)),
        ("surface tension property suite", 120, Box::new(|| property_suite(tables.get_or_init(gff_tables)))),
        ("non-Gaussian TI validation", 600, Box::new(ti_validation)),
        ("slope-variance contraction", 600, Box::new(slope_variance)),
        ("L2 flatness", 600, Box::new(flatness)),
        ("multiscale Poincare, Poincare, Sobolev", 120, Box::new(functional_inequalities)),
        ("patching operator", 600, Box::new(patching_operator)),
        ("block integral", 60, Box::new(block_integral)),
        ("variational formula", 1, Box::new(variational)),
        ("Caccioppoli, reverse Holder, Meyers", 900, Box::new(gibbs_inequalities)),
    ];

    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let mut o = run();
        let elapsed = t.elapsed();
        if elapsed > Duration::from_secs(*budget) {
            o.pass = false;
            o.detail.push_str(&format!("; over the {} s budget", budget));
        }
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {}: {:.1} s; {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            name,
            elapsed.as_secs_f64(),
            o.detail
        );
    }
    println!("{} of {} criteria passed in {:.0} s", criteria.len() - failed, criteria.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
