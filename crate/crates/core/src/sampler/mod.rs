//! Markov chain and exact sampling of the gradient ensembles.

pub mod diagnostics;
pub mod exact;
pub mod mala;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensembles::{Ensemble, EnsembleKind};
use crate::error::{invalid, Result};
use crate::lattice::project_mean_zero;
use crate::linalg::{graph_laplacian, restricted_laplacian, BandedCholesky, SparseSym};
use crate::numeric::dot;

pub use diagnostics::{diagnostics, jackknife, TraceStats};
pub use exact::{exact_gaussian_sample, exact_observables};
pub use mala::{mala_chain, ChainOutput};

/// Target acceptance rate of the burn-in step-size adaptation.
pub const TARGET_ACCEPTANCE: f64 = 0.574;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Total steps per chain, burn-in included.
    pub steps: usize,
    pub burn_in: usize,
    pub step_size: f64,
    pub seed: u64,
    pub thin: usize,
    pub chains: usize,
    /// Use the Gaussian reference metric 2β_ref·Laplacian in the proposal.
    pub precondition: bool,
    /// Tune the step size during burn-in.
    pub adapt: bool,
    /// Store every k-th retained state.
    pub dump_every: Option<usize>,
    /// Accumulate per-bond gradient moments.
    pub bond_moments: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            steps: 20_000,
            burn_in: 2_000,
            step_size: 0.5,
            seed: 1,
            thin: 1,
            chains: 4,
            precondition: true,
            adapt: true,
            dump_every: None,
            bond_moments: false,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps <= self.burn_in {
            return invalid(format!("steps ({}) must exceed burn_in ({})", self.steps, self.burn_in));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return invalid(format!("step_size must be positive, got {}", self.step_size));
        }
        if self.thin == 0 || self.chains == 0 || self.dump_every == Some(0) {
            return invalid("thin, chains and dump_every must be positive");
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.steps - self.burn_in) / self.thin
    }
}

pub type ObservableFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Scalar functions of a state recorded along a chain.
#[derive(Clone)]
pub enum Observable {
    Energy,
    /// Component i of the slope ⟨∇φ⟩_U.
    Slope(usize),
    /// (1/|U|) Σ_e |∇φ(e)|².
    GradientEnergy,
    /// (1/|U|) Σ_x φ(x)².
    MeanSquare,
    Value(usize),
    /// ∇φ(e) on the bond with this index.
    Gradient(usize),
    GradientSquare(usize),
    Custom(String, ObservableFn),
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Observable {
    pub fn custom(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Observable {
        Observable::Custom(name.into(), Arc::new(f))
    }

    pub fn name(&self) -> String {
        match self {
            Observable::Energy => "energy".into(),
            Observable::Slope(i) => format!("slope{}", i + 1),
            Observable::GradientEnergy => "gradient_energy".into(),
            Observable::MeanSquare => "mean_square".into(),
            Observable::Value(v) => format!("value{}", v),
            Observable::Gradient(b) => format!("grad{}", b),
            Observable::GradientSquare(b) => format!("grad_sq{}", b),
            Observable::Custom(name, _) => name.clone(),
        }
    }

    /// Value at `state`; `energy` is the energy of the state.
    pub fn eval(&self, ens: &dyn Ensemble, state: &[f64], energy: f64) -> f64 {
        let region = ens.region();
        let vol = region.len() as f64;
        match self {
            Observable::Energy => energy,
            Observable::Slope(i) => {
                region.bonds().iter().filter(|b| b.dir == *i).map(|b| state[b.head] - state[b.tail]).sum::<f64>() / vol
            }
            Observable::GradientEnergy => {
                region.bonds().iter().map(|b| (state[b.head] - state[b.tail]).powi(2)).sum::<f64>() / vol
            }
            Observable::MeanSquare => dot(state, state) / vol,
            Observable::Value(v) => state[*v],
            Observable::Gradient(e) => {
                let b = region.bonds()[*e];
                state[b.head] - state[b.tail]
            }
            Observable::GradientSquare(e) => {
                let b = region.bonds()[*e];
                (state[b.head] - state[b.tail]).powi(2)
            }
            Observable::Custom(_, f) => f(state),
        }
    }
}

/// Proposal metric M on the admissible subspace: identity, or 2β·K with K the
/// Dirichlet or Neumann graph Laplacian of the ensemble's region.
pub(crate) enum Metric {
    Identity { kind: EnsembleKind, mask: Vec<bool> },
    Laplacian { kind: EnsembleKind, beta: f64, lap: SparseSym, factor: BandedCholesky, free: Vec<usize>, len: usize },
}

impl Metric {
    pub(crate) fn identity(ens: &dyn Ensemble) -> Metric {
        let mask = match ens.kind() {
            EnsembleKind::Dirichlet => ens.region().boundary_mask().iter().map(|b| !b).collect(),
            EnsembleKind::Neumann => vec![true; ens.region().len()],
        };
        Metric::Identity { kind: ens.kind(), mask }
    }

    pub(crate) fn laplacian(ens: &dyn Ensemble, beta: f64) -> Result<Metric> {
        if !(beta > 0.0) {
            return invalid(format!("metric scale must be positive, got {}", beta));
        }
        let region = ens.region();
        let free = match ens.kind() {
            EnsembleKind::Dirichlet => region.interior_indices(),
            EnsembleKind::Neumann => (1..region.len()).collect(),
        };
        if free.is_empty() {
            return invalid("ensemble has no free vertices");
        }
        let factor = BandedCholesky::factor(&restricted_laplacian(region, &free))?;
        Ok(Metric::Laplacian { kind: ens.kind(), beta, lap: graph_laplacian(region), factor, free, len: region.len() })
    }

    fn finish(kind: EnsembleKind, v: &mut [f64]) {
        if kind == EnsembleKind::Neumann {
            project_mean_zero(v);
        }
    }

    /// M⁺ g for g in the admissible subspace.
    pub(crate) fn apply_inverse(&self, g: &[f64]) -> Vec<f64> {
        match self {
            Metric::Identity { .. } => g.to_vec(),
            Metric::Laplacian { kind, beta, factor, free, len, .. } => {
                let mut x: Vec<f64> = free.iter().map(|&v| g[v]).collect();
                factor.solve(&mut x);
                let mut out = vec![0.0; *len];
                for (k, &v) in free.iter().enumerate() {
                    out[v] = x[k] / (2.0 * beta);
                }
                Metric::finish(*kind, &mut out);
                out
            }
        }
    }

    /// A draw from N(0, M⁺) on the admissible subspace.
    pub(crate) fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Metric::Identity { kind, mask } => {
                let mut out: Vec<f64> =
                    mask.iter().map(|&m| if m { rng.sample::<f64, _>(StandardNormal) } else { 0.0 }).collect();
                Metric::finish(*kind, &mut out);
                out
            }
            Metric::Laplacian { kind, beta, factor, free, len, .. } => {
                let mut x: Vec<f64> = (0..free.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                factor.backward(&mut x);
                let s = 1.0 / (2.0 * beta).sqrt();
                let mut out = vec![0.0; *len];
                for (k, &v) in free.iter().enumerate() {
                    out[v] = x[k] * s;
                }
                Metric::finish(*kind, &mut out);
                out
            }
        }
    }

    /// wᵀ M w.
    pub(crate) fn norm_sq(&self, w: &[f64]) -> f64 {
        match self {
            Metric::Identity { .. } => dot(w, w),
            Metric::Laplacian { beta, lap, .. } => 2.0 * beta * dot(w, &lap.mul(w)),
        }
    }
}
