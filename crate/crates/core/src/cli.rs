//! Command-line runner. Exit status: 0 when every check passes (inconclusive
//! Monte Carlo checks only add to the warning count), 1 when a check fails or
//! a computation errors, 2 for usage and configuration errors.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};

use crate::config::Config;
use crate::ensembles::{DirichletEnsemble, EnsembleKind, NeumannEnsemble};
use crate::error::{Error, Result};
use crate::free_energy::{defects, nu_estimate, nustar_estimate, Method, Quantity, SurfaceTensionEstimate};
use crate::gff::GaussianExact;
use crate::lattice::side;
use crate::output::{now, num, tally, OutputDir, RunManifest};
use crate::potentials::Potential;
use crate::sampler::{mala_chain, Observable};
use crate::verification::*;

#[derive(Debug, Parser)]
#[command(name = "gradphi", version, about = "Surface tensions and verification checks for gradient interface models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Replaces chain.seed from the configuration.
    #[arg(long, global = true)]
    pub seed_override: Option<u64>,
    /// Wall-clock budget; the run stops with an error once it is spent.
    #[arg(long, global = true)]
    pub cap_minutes: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Exact Gaussian surface tensions per level.
    GffExact,
    /// One MALA run with chain diagnostics.
    Sample,
    /// ν(Q_n, p) per level.
    Nu,
    /// ν*(Q_n, q) per level.
    Nustar,
    /// Subadditivity defects of ν and ν*.
    Defects,
    /// Property suite and duality identity on tilt tables.
    Duality,
    /// Convergence rate of ν(Q_n, p).
    Rate,
    /// Slope-variance contraction, flatness and L² bounds.
    Contraction,
    /// Slope variance per level.
    SlopeVariance,
    /// Functional inequalities and interior estimates.
    Inequalities,
    /// Patching operator, block integral and patching energy.
    Patching,
    /// Every check that applies to the configuration, with a summary.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GffExact => "gff-exact",
            Command::Sample => "sample",
            Command::Nu => "nu",
            Command::Nustar => "nustar",
            Command::Defects => "defects",
            Command::Duality => "duality",
            Command::Rate => "rate",
            Command::Contraction => "contraction",
            Command::SlopeVariance => "slope-variance",
            Command::Inequalities => "inequalities",
            Command::Patching => "patching",
            Command::Report => "report",
        }
    }

    pub const ALL: [Command; 12] = [
        Command::GffExact,
        Command::Sample,
        Command::Nu,
        Command::Nustar,
        Command::Defects,
        Command::Duality,
        Command::Rate,
        Command::Contraction,
        Command::SlopeVariance,
        Command::Inequalities,
        Command::Patching,
        Command::Report,
    ];

    pub fn from_name(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Outcome of a run.
#[derive(Debug)]
pub struct Outcome {
    pub reports: Vec<CheckReport>,
    pub manifest: RunManifest,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if tally(&self.reports).1 > 0 {
            1
        } else {
            0
        }
    }
}

struct Budget {
    start: Instant,
    cap: Option<Duration>,
}

impl Budget {
    fn check(&self, stage: &str) -> Result<()> {
        match self.cap {
            Some(c) if self.start.elapsed() > c => {
                Err(Error::Budget(format!("{:.1} min cap spent before {}", c.as_secs_f64() / 60.0, stage)))
            }
            _ => Ok(()),
        }
    }
}

struct Run<'a> {
    cfg: &'a Config,
    out: OutputDir,
    budget: Budget,
    reports: Vec<CheckReport>,
}

/// Parses arguments, runs, prints a summary and returns the exit status.
pub fn main_with_args(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (cfg, cmd) = match load(&cli) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {}", e);
            eprintln!("usage: gradphi <SUBCOMMAND> --config <FILE> [--out <DIR>]");
            return 2;
        }
    };
    if let Some(t) = cli.threads {
        // A pool can only be installed once per process; later calls keep the first.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match run(cmd, &cfg, &cli.out, cli.cap_minutes) {
        Ok(o) => {
            let (p, f, i) = tally(&o.reports);
            for r in &o.reports {
                println!("{:<32} {}", r.id, r.status.as_str().to_uppercase());
            }
            println!("{} passed, {} failed, {} warnings (inconclusive); outputs in {}", p, f, i, cli.out.display());
            o.exit_code()
        }
        Err(e) => {
            eprintln!("error: {}", e);
            if matches!(e, Error::Config(_) | Error::SizeCap(_)) {
                2
            } else {
                1
            }
        }
    }
}

/// Reads the configuration and resolves the subcommand.
pub fn load(cli: &Cli) -> Result<(Config, Command)> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
    let mut cfg = Config::parse(&text)?;
    if let Some(s) = cli.seed_override {
        cfg.chain.seed = s;
    }
    let cmd = match (cli.command, cfg.experiment.which.as_deref()) {
        (Some(c), _) => c,
        (None, Some(w)) => Command::from_name(w).ok_or_else(|| Error::Config(format!("experiment.which = {:?} is not a subcommand", w)))?,
        (None, None) => return Err(Error::Config("no subcommand given and experiment.which is unset".into())),
    };
    Ok((cfg, cmd))
}

pub fn run(cmd: Command, cfg: &Config, out: &std::path::Path, cap_minutes: Option<f64>) -> Result<Outcome> {
    let started = now();
    let mut r = Run {
        cfg,
        out: OutputDir::create(out)?,
        budget: Budget { start: Instant::now(), cap: cap_minutes.map(|m| Duration::from_secs_f64(m * 60.0)) },
        reports: Vec::new(),
    };
    match cmd {
        Command::GffExact => r.gff_exact()?,
        Command::Sample => r.sample()?,
        Command::Nu => r.estimates(Quantity::Nu).map(|_| ())?,
        Command::Nustar => r.estimates(Quantity::Nustar).map(|_| ())?,
        Command::Defects => r.defects()?,
        Command::Duality => r.duality()?,
        Command::Rate => r.rate()?,
        Command::Contraction => r.contraction()?,
        Command::SlopeVariance => r.slope_variance()?,
        Command::Inequalities => r.inequalities()?,
        Command::Patching => r.patching()?,
        Command::Report => r.report()?,
    }
    let Run { mut out, reports, .. } = r;
    if !reports.is_empty() {
        out.reports(&reports)?;
    }
    let manifest = RunManifest {
        experiment: cmd.name().to_string(),
        config: cfg.to_toml(),
        seeds: vec![cfg.chain.seed],
        version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: String::new(),
        digests: Default::default(),
    };
    let manifest = out.finish(manifest)?;
    Ok(Outcome { reports, manifest })
}

fn beta_of(v: &Potential) -> Result<f64> {
    v.quadratic_beta().ok_or_else(|| Error::Config(format!("this experiment needs a quadratic potential, got {}", v)))
}

/// Exact for quadratic potentials, thermodynamic integration otherwise.
fn estimate_level(q: Quantity, d: usize, n: u32, tilt: &[f64], cfg: &Config) -> Result<SurfaceTensionEstimate> {
    let v = &cfg.potential.spec;
    if let Some(beta) = v.quadratic_beta() {
        let g = GaussianExact::new(d, n, beta)?;
        let value = match q {
            Quantity::Nu => g.nu(tilt)?,
            Quantity::Nustar => g.nustar(tilt)?,
        };
        return Ok(SurfaceTensionEstimate {
            quantity: q,
            d,
            n,
            tilt: tilt.to_vec(),
            value,
            stderr: 0.0,
            method: Method::ExactOracle,
            nodes: 0,
            seed: cfg.chain.seed,
            manifest: None,
            flags: Vec::new(),
        });
    }
    let ti = cfg.ti_config();
    match q {
        Quantity::Nu => nu_estimate(d, n, tilt, v, &ti),
        Quantity::Nustar => nustar_estimate(d, n, tilt, v, &ti),
    }
}

impl Run<'_> {
    fn d(&self) -> usize {
        self.cfg.lattice.d
    }

    fn push(&mut self, r: CheckReport) -> Result<()> {
        self.reports.push(r);
        self.budget.check("the next check")
    }

    fn gff_exact(&mut self) -> Result<()> {
        let beta = beta_of(&self.cfg.potential.spec)?;
        let (p, q) = (self.cfg.p(), self.cfg.q());
        let mut rows = Vec::new();
        let mut series = Vec::new();
        for n in self.cfg.levels() {
            self.budget.check(&format!("level {}", n))?;
            let g = GaussianExact::new(self.d(), n, beta)?;
            let nu = g.nu(&p)?;
            let sv = g.slope_covariance()?;
            rows.push(vec![
                n.to_string(),
                num(nu),
                num(g.nustar(&q)?),
                num((0..self.d()).map(|i| sv[i][i]).sum()),
                num(g.l2_normalized()?),
            ]);
            series.push((n, nu, 0.0));
        }
        self.out.csv("gff_exact.csv", &GFF_EXACT_HEADER, &rows)?;
        self.out.series("nu_series.csv", &series)
    }

    fn sample(&mut self) -> Result<()> {
        let (d, n) = (self.d(), self.cfg.lattice.n);
        let v = self.cfg.potential.spec.clone();
        let chain = self.cfg.chain_config();
        let mut obs = vec![Observable::Energy, Observable::GradientEnergy, Observable::MeanSquare];
        obs.extend((0..d).map(Observable::Slope));
        let out = match &self.cfg.tilt.q {
            Some(q) => mala_chain(&NeumannEnsemble::cube(d, n, q, v)?, &chain, &obs)?,
            None => mala_chain(&DirichletEnsemble::cube(d, n, &self.cfg.p(), v)?, &chain, &obs)?,
        };
        let rows: Vec<Vec<String>> = (0..obs.len())
            .map(|i| {
                out.estimate(i).map(|e| {
                    vec![e.name, num(e.mean), num(e.stderr), num(e.ess), e.iact.map(num).unwrap_or_default(), e.flagged.to_string()]
                })
            })
            .collect::<Result<_>>()?;
        self.out.csv("sample.csv", &SAMPLE_HEADER, &rows)?;
        self.out.json(
            "chain.json",
            &serde_json::json!({"acceptance": out.acceptance, "step_sizes": out.step_sizes, "flags": out.flags}),
        )
    }

    fn estimates(&mut self, q: Quantity) -> Result<Vec<SurfaceTensionEstimate>> {
        let tilt = match q {
            Quantity::Nu => self.cfg.p(),
            Quantity::Nustar => self.cfg.q(),
        };
        let mut est = Vec::new();
        for n in self.cfg.levels() {
            self.budget.check(&format!("{} at level {}", q.as_str(), n))?;
            est.push(estimate_level(q, self.d(), n, &tilt, self.cfg)?);
        }
        let rows: Vec<Vec<String>> =
            est.iter().map(|e| vec![e.n.to_string(), num(e.value), num(e.stderr), e.method.as_str().to_string(), e.flags.join("; ")]).collect();
        self.out.csv(&format!("{}.csv", q.as_str()), &ESTIMATE_HEADER, &rows)?;
        self.out.series(&format!("{}_series.csv", q.as_str()), &est.iter().map(|e| (e.n, e.value, e.stderr)).collect::<Vec<_>>())?;
        self.out.json(&format!("{}.json", q.as_str()), &est)?;
        Ok(est)
    }

    fn defects(&mut self) -> Result<()> {
        let mut rows = Vec::new();
        for q in [Quantity::Nu, Quantity::Nustar] {
            let est = self.estimates(q)?;
            let ds = defects(&est)?;
            self.out.series(&format!("{}_defect_series.csv", q.as_str()), &ds.iter().map(|x| (x.n, x.value, x.stderr)).collect::<Vec<_>>())?;
            rows.extend(ds.iter().map(|x| vec![q.as_str().to_string(), x.n.to_string(), num(x.value), num(x.stderr)]));
        }
        self.out.csv("defects.csv", &DEFECT_HEADER, &rows)
    }

    fn table(&mut self, q: Quantity, tilts: &[Vec<f64>]) -> Result<SurfaceTable> {
        let (d, levels) = (self.d(), self.cfg.levels());
        if let Some(beta) = self.cfg.potential.spec.quadratic_beta() {
            return SurfaceTable::gff(q, d, &levels, beta, tilts);
        }
        let mut est = Vec::new();
        for &n in &levels {
            for t in tilts {
                self.budget.check(&format!("{} table at level {}", q.as_str(), n))?;
                est.push(estimate_level(q, d, n, t, self.cfg)?);
            }
        }
        SurfaceTable::from_estimates(&est)
    }

    fn grid(&self) -> Result<Vec<Vec<f64>>> {
        let [lo, hi, step] = self.cfg.experiment.grid;
        tilt_grid(self.d(), lo, hi, step)
    }

    fn duality(&mut self) -> Result<()> {
        let grid = self.grid()?;
        let nu = self.table(Quantity::Nu, &grid)?;
        let nustar = self.table(Quantity::Nustar, &grid)?;
        self.push(check_subadditivity(&nu)?)?;
        self.push(check_subadditivity(&nustar)?)?;
        self.push(check_one_sided_duality(&nu, &nustar)?)?;
        self.push(check_quadratic_bounds(&nu)?)?;
        self.push(check_quadratic_bounds(&nustar)?)?;
        self.push(check_uniform_convexity(&nu)?)?;
        self.push(check_uniform_convexity(&nustar)?)?;
        let qs = self.cfg.experiment.duality_q.clone();
        self.push(check_duality(&nu, &nustar, &qs, DUALITY_TOL)?)
    }

    fn rate(&mut self) -> Result<()> {
        let p = self.cfg.p();
        let t = self.table(Quantity::Nu, std::slice::from_ref(&p))?;
        let [lo, hi] = self.cfg.experiment.rate_window;
        let r = check_rate(&t, &p, (lo, hi))?;
        let j = t.tilt_index(&p).unwrap_or(0);
        self.out.series("nu_series.csv", &t.levels.iter().enumerate().map(|(i, &n)| (n, t.values[i][j], t.stderr[i][j])).collect::<Vec<_>>())?;
        self.push(r)
    }

    fn contraction(&mut self) -> Result<()> {
        let (d, levels) = (self.d(), self.cfg.levels());
        let v = self.cfg.potential.spec.clone();
        let chain = self.cfg.chain_config();
        let (p, q) = (self.cfg.p(), self.cfg.q());
        let zero = vec![0.0; d];
        self.push(check_slope_variance_contraction(d, &q, &levels, &v, &chain, None)?)?;
        self.push(check_flatness(d, &p, &levels, &v, &chain)?)?;
        let n = self.cfg.lattice.n;
        self.push(check_l2_bounds(EnsembleKind::Dirichlet, d, n, &[zero.clone(), p], &v, &chain)?)?;
        self.push(check_l2_bounds(EnsembleKind::Neumann, d, n, &[zero, q], &v, &chain)?)
    }

    fn slope_variance(&mut self) -> Result<()> {
        let (d, q) = (self.d(), self.cfg.q());
        let v = self.cfg.potential.spec.clone();
        let chain = self.cfg.chain_config();
        let mut pts = Vec::new();
        for n in self.cfg.levels() {
            self.budget.check(&format!("slope variance at level {}", n))?;
            let (var, se, _) = slope_variance(d, n, &q, &v, &chain)?;
            pts.push((n, var, se));
        }
        self.out.series("slope_variance_series.csv", &pts)
    }

    fn inequalities(&mut self) -> Result<()> {
        let d = self.d();
        let v = self.cfg.potential.spec.clone();
        let ex = self.cfg.experiment.clone();
        let chain = self.cfg.chain_config();
        let v1 = v.clone();
        self.push(check_variational_formula_lowdim(&move |x: &[f64]| v1.eval(x[0]), 1, -12.0, 12.0, 20, chain.seed)?)?;
        let fl: Vec<u32> = self.cfg.levels().into_iter().filter(|&n| n <= 4).collect();
        for r in inequality_suite(d, &fl, ex.fields, chain.seed)? {
            self.push(r)?;
        }
        let nb = self.cfg.lattice.n.min(3);
        if nb >= 2 {
            let balls = ball_battery(d, nb, ex.placements, chain.seed)?;
            let (c, rh) = check_caccioppoli_reverse_holder(d, nb, &self.cfg.q(), &v, &chain, &balls)?;
            self.push(c)?;
            self.push(rh)?;
        }
        let ml: Vec<u32> = self.cfg.levels().into_iter().filter(|&n| (2..=4).contains(&n)).collect();
        if ml.len() >= 2 {
            self.push(check_meyers(d, ex.gamma, &ml, &self.cfg.q(), &v, &chain, &ex.deltas)?)?;
        }
        Ok(())
    }

    fn patching(&mut self) -> Result<()> {
        let d = self.d();
        let v = self.cfg.potential.spec.clone();
        let top = self.cfg.lattice.n.min(if d == 2 { 2 } else { 1 });
        let levels: Vec<u32> = (1..=top).collect();
        let expected = expected_multiplicity(d, top);
        self.push(check_patching_operator(d, &levels, Some((top, expected)), self.cfg.chain.seed)?)?;
        let pairs: Vec<(u32, u32)> = [(1, 2), (1, 3), (2, 3)].into_iter().filter(|&(_, n)| n <= self.cfg.lattice.n).collect();
        if !pairs.is_empty() {
            self.push(check_block_integral(d, &pairs, v.quadratic_beta().unwrap_or_else(|| v.reference_beta()))?)?;
        }
        let chain = self.cfg.chain_config();
        let samples = self.cfg.experiment.samples;
        self.push(patching_energy_experiment(d, &self.cfg.q(), &levels, &v, samples, &chain)?)
    }

    fn report(&mut self) -> Result<()> {
        if self.cfg.potential.spec.quadratic_beta().is_some() {
            self.gff_exact()?;
            let (d, q) = (self.d(), self.cfg.q());
            let beta = beta_of(&self.cfg.potential.spec)?;
            let n = self.cfg.lattice.n.min(2);
            self.push(check_oracle_sampler_agreement(d, n, beta, &q, &self.cfg.chain_config(), 1000.0)?)?;
        } else {
            self.estimates(Quantity::Nu)?;
            self.estimates(Quantity::Nustar)?;
        }
        self.duality()?;
        if self.cfg.levels().len() >= 4 {
            self.rate()?;
        }
        self.contraction()?;
        self.slope_variance()?;
        self.inequalities()?;
        self.patching()
    }
}

/// 3^{dn}(|Q_nº| − 1): one fixed vector per interior vertex of each cell
/// beyond the first.
pub fn expected_multiplicity(d: usize, n: u32) -> usize {
    let interior = (side(n) - 2).pow(d as u32);
    side(n).pow(d as u32) * (interior - 1)
}

pub const GFF_EXACT_HEADER: [&str; 5] = ["level", "nu", "nustar", "slope_variance", "l2_normalized"];
pub const SAMPLE_HEADER: [&str; 6] = ["observable", "mean", "stderr", "ess", "iact", "flagged"];
pub const ESTIMATE_HEADER: [&str; 5] = ["level", "value", "stderr", "method", "flags"];
pub const DEFECT_HEADER: [&str; 4] = ["quantity", "level", "value", "stderr"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for c in Command::ALL {
            assert_eq!(Command::from_name(c.name()), Some(c));
        }
        assert_eq!(Command::from_name("nope"), None);
    }

    #[test]
    fn multiplicity_formula() {
        assert_eq!(expected_multiplicity(2, 2), 3888);
        assert_eq!(expected_multiplicity(2, 1), 0);
    }
}
