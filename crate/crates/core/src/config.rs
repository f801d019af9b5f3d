//! Run configuration read from TOML.
//!
//! ```toml
//! [lattice]
//! d = 2
//! n = 4            # largest level; levels run from n_min (default 1) to n
//!
//! [potential]
//! spec = "logcosh:1.0"
//!
//! [tilt]
//! p = [0.5, 0.0]
//! q = [1.0, 0.0]
//!
//! [chain]
//! steps = 20000
//! burn_in = 2000
//! seed = 7
//!
//! [experiment]
//! which = "nu"
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_energy::TiConfig;
use crate::potentials::{validate, Potential};
use crate::sampler::ChainConfig;

/// Largest level per dimension.
pub fn max_level(d: usize) -> Option<u32> {
    match d {
        2 => Some(5),
        3 => Some(3),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub lattice: LatticeSection,
    #[serde(default)]
    pub potential: PotentialSection,
    #[serde(default)]
    pub tilt: TiltSection,
    #[serde(default)]
    pub chain: ChainSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub d: usize,
    pub n: u32,
    #[serde(default = "one")]
    pub n_min: u32,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    #[serde(default = "default_potential")]
    pub spec: Potential,
}

fn default_potential() -> Potential {
    Potential::Quadratic { beta: 1.0 }
}

impl Default for PotentialSection {
    fn default() -> Self {
        PotentialSection { spec: default_potential() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiltSection {
    pub p: Option<Vec<f64>>,
    pub q: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSection {
    pub steps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub chains: usize,
    pub step_size: f64,
    pub thin: usize,
    pub precondition: bool,
}

impl Default for ChainSection {
    fn default() -> Self {
        let c = ChainConfig::default();
        ChainSection {
            steps: c.steps,
            burn_in: c.burn_in,
            seed: c.seed,
            chains: c.chains,
            step_size: c.step_size,
            thin: c.thin,
            precondition: c.precondition,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Subcommand run when none is given on the command line.
    pub which: Option<String>,
    /// Tilt grid `[lo, hi, step]` per axis for table-based checks.
    pub grid: [f64; 3],
    /// Dual tilts at which the duality identity is checked.
    pub duality_q: Vec<Vec<f64>>,
    /// Quadrature nodes for thermodynamic integration.
    pub ti_nodes: usize,
    /// Random fields per region for the inequality corpus.
    pub fields: usize,
    /// Ball placements for the interior estimates.
    pub placements: usize,
    pub gamma: f64,
    pub deltas: Vec<f64>,
    /// Independent patchings per level.
    pub samples: usize,
    pub rate_window: [f64; 2],
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            which: None,
            grid: [-2.0, 2.0, 0.5],
            duality_q: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            ti_nodes: TiConfig::default().nodes,
            fields: 1000,
            placements: 10,
            gamma: 0.75,
            deltas: vec![0.1, 0.25, 0.5],
            samples: 20,
            rate_window: [0.8, 1.2],
        }
    }
}

impl Config {
    /// Parses and validates; errors carry the TOML line and key.
    pub fn parse(text: &str) -> Result<Config> {
        if text.trim().is_empty() {
            return Err(Error::Config("empty configuration; at least [lattice] d and n are required".into()));
        }
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let LatticeSection { d, n, n_min } = self.lattice;
        let cap = max_level(d).ok_or_else(|| Error::Config(format!("lattice.d = {} is not supported; d must be 2 or 3", d)))?;
        if n > cap {
            return Err(Error::SizeCap(format!("lattice.n = {} exceeds the cap {} for d = {}", n, cap, d)));
        }
        if n_min == 0 || n_min > n {
            return Err(Error::Config(format!("need 1 <= lattice.n_min <= lattice.n, got n_min = {}, n = {}", n_min, n)));
        }
        validate(&self.potential.spec).map_err(|e| Error::Config(format!("potential.spec: {}", e)))?;
        for (name, t) in [("tilt.p", &self.tilt.p), ("tilt.q", &self.tilt.q)] {
            if let Some(t) = t {
                if t.len() != d || t.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Config(format!("{} must hold {} finite numbers", name, d)));
                }
            }
        }
        if self.experiment.duality_q.iter().any(|q| q.len() != d) {
            return Err(Error::Config(format!("experiment.duality_q entries must have length {}", d)));
        }
        let [lo, hi, step] = self.experiment.grid;
        if !(lo < hi && step > 0.0) {
            return Err(Error::Config("experiment.grid must be [lo, hi, step] with lo < hi and step > 0".into()));
        }
        if !(self.experiment.gamma > 0.0 && self.experiment.gamma < 1.0) {
            return Err(Error::Config("experiment.gamma must lie in (0, 1)".into()));
        }
        self.chain_config().validate().map_err(|e| Error::Config(format!("chain: {}", e)))?;
        Ok(())
    }

    pub fn levels(&self) -> Vec<u32> {
        (self.lattice.n_min..=self.lattice.n).collect()
    }

    pub fn p(&self) -> Vec<f64> {
        self.tilt.p.clone().unwrap_or_else(|| vec![0.0; self.lattice.d])
    }

    pub fn q(&self) -> Vec<f64> {
        self.tilt.q.clone().unwrap_or_else(|| vec![0.0; self.lattice.d])
    }

    pub fn chain_config(&self) -> ChainConfig {
        let c = &self.chain;
        ChainConfig {
            steps: c.steps,
            burn_in: c.burn_in,
            seed: c.seed,
            chains: c.chains,
            step_size: c.step_size,
            thin: c.thin,
            precondition: c.precondition,
            ..ChainConfig::default()
        }
    }

    pub fn ti_config(&self) -> TiConfig {
        TiConfig { chain: self.chain_config(), nodes: self.experiment.ti_nodes, ..TiConfig::default() }
    }

    /// Configuration with every default written out, as stored in manifests.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = Config::parse("[lattice]\nd = 2\nn = 3\n").unwrap();
        assert_eq!(c.levels(), vec![1, 2, 3]);
        assert_eq!(c.potential.spec, Potential::quadratic(1.0).unwrap());
        assert_eq!(c.chain_config(), ChainConfig::default());
        assert_eq!(c.p(), vec![0.0, 0.0]);
        let again = Config::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn logcosh_spec_parses() {
        let c = Config::parse("[lattice]\nd = 2\nn = 1\n[potential]\nspec = \"logcosh:1.0\"\n").unwrap();
        assert_eq!(c.potential.spec, Potential::logcosh(1.0).unwrap());
    }

    #[test]
    fn rejections() {
        assert!(matches!(Config::parse(""), Err(Error::Config(_))));
        assert!(matches!(Config::parse("[lattice]\nd = 1\nn = 2\n"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("[lattice]\nd = 2\nn = 6\n"), Err(Error::SizeCap(_))));
        assert!(matches!(Config::parse("[lattice]\nd = 3\nn = 4\n"), Err(Error::SizeCap(_))));
        assert!(matches!(Config::parse("[lattice]\nd = 2\nn = 2\n[potential]\nspec = \"quadratic:-1\"\n"), Err(Error::Config(_))));
        let e = Config::parse("[lattice]\nd = 2\nn = 2\ncolour = 3\n").unwrap_err().to_string();
        assert!(e.contains("colour") && e.contains("line 4"), "{}", e);
        let e = Config::parse("[lattice]\nd = 2\nn = \"two\"\n").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{}", e);
        assert!(Config::parse("[lattice]\nd = 2\nn = 2\n[tilt]\np = [1.0]\n").is_err());
    }
}
