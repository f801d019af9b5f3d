//! Energies of the two Gibbs families: zero-boundary fields with an affine tilt
//! p inside the potential, and mean-zero fields with a linear tilt q.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{mean_of, project_mean_zero, Region};
use crate::numeric::NeumaierSum;
use crate::potentials::Potential;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Dirichlet,
    Neumann,
}

/// A Gibbs measure exp(−energy) on the admissible linear subspace of a region.
pub trait Ensemble: Send + Sync {
    fn kind(&self) -> EnsembleKind;
    fn region(&self) -> &Arc<Region>;
    fn potentials(&self) -> &[Potential];
    /// Tilt vector (p for Dirichlet, q for Neumann).
    fn tilt(&self) -> &[f64];
    /// Energy without admissibility checks.
    fn energy_unchecked(&self, state: &[f64]) -> f64;
    /// Energy, and its gradient with respect to the vertex values projected onto
    /// the admissible subspace.
    fn energy_grad(&self, state: &[f64], grad: &mut [f64]) -> f64;
    /// Orthogonal projection onto the admissible subspace.
    fn project(&self, v: &mut [f64]);
    fn check_admissible(&self, state: &[f64]) -> Result<()>;
    /// Dimension of the admissible subspace.
    fn free_dim(&self) -> usize;
}

fn expand_potentials(d: usize, potential: Potential) -> Vec<Potential> {
    vec![potential; d]
}

fn check_len(region: &Region, state: &[f64]) -> Result<()> {
    if state.len() != region.len() {
        return Err(Error::RegionMismatch(format!("state has {} values for {} vertices", state.len(), region.len())));
    }
    Ok(())
}

/// P_{U,p}: zero boundary values on ∂U, energy Σ_{e⊆U} V(p·e + ∇φ(e)).
#[derive(Clone, Debug)]
pub struct DirichletEnsemble {
    region: Arc<Region>,
    tilt: Vec<f64>,
    potentials: Vec<Potential>,
}

impl DirichletEnsemble {
    pub fn new(region: Arc<Region>, p: &[f64], potential: Potential) -> Result<DirichletEnsemble> {
        let d = region.d();
        DirichletEnsemble::with_potentials(region, p, expand_potentials(d, potential))
    }

    /// One potential per coordinate direction.
    pub fn with_potentials(region: Arc<Region>, p: &[f64], potentials: Vec<Potential>) -> Result<DirichletEnsemble> {
        if p.len() != region.d() || potentials.len() != region.d() {
            return invalid("tilt and potential list must have one entry per direction");
        }
        if region.interior_indices().is_empty() {
            return invalid("Dirichlet ensemble needs a region with nonempty interior");
        }
        Ok(DirichletEnsemble { region, tilt: p.to_vec(), potentials })
    }

    pub fn cube(d: usize, n: u32, p: &[f64], potential: Potential) -> Result<DirichletEnsemble> {
        DirichletEnsemble::new(Arc::new(Region::cube(d, n)?), p, potential)
    }

    pub fn with_tilt(&self, p: &[f64]) -> DirichletEnsemble {
        DirichletEnsemble { region: self.region.clone(), tilt: p.to_vec(), potentials: self.potentials.clone() }
    }

    pub fn with_potential(&self, potential: Potential) -> DirichletEnsemble {
        DirichletEnsemble {
            region: self.region.clone(),
            tilt: self.tilt.clone(),
            potentials: expand_potentials(self.region.d(), potential),
        }
    }
}

impl Ensemble for DirichletEnsemble {
    fn kind(&self) -> EnsembleKind {
        EnsembleKind::Dirichlet
    }

    fn region(&self) -> &Arc<Region> {
        &self.region
    }

    fn potentials(&self) -> &[Potential] {
        &self.potentials
    }

    fn tilt(&self) -> &[f64] {
        &self.tilt
    }

    fn energy_unchecked(&self, s: &[f64]) -> f64 {
        let mut acc = NeumaierSum::default();
        for b in self.region.bonds() {
            acc.add(self.potentials[b.dir].eval(self.tilt[b.dir] + s[b.head] - s[b.tail]));
        }
        acc.value()
    }

    fn energy_grad(&self, s: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut acc = NeumaierSum::default();
        for b in self.region.bonds() {
            let (v, dv) = self.potentials[b.dir].eval_deriv(self.tilt[b.dir] + s[b.head] - s[b.tail]);
            acc.add(v);
            grad[b.head] += dv;
            grad[b.tail] -= dv;
        }
        self.project(grad);
        acc.value()
    }

    fn project(&self, v: &mut [f64]) {
        for (x, &on) in v.iter_mut().zip(self.region.boundary_mask()) {
            if on {
                *x = 0.0;
            }
        }
    }

    fn check_admissible(&self, s: &[f64]) -> Result<()> {
        check_len(&self.region, s)?;
        for v in self.region.boundary_indices() {
            if s[v].abs() > 1e-12 {
                return Err(Error::Inadmissible(format!(
                    "value {} at boundary vertex {:?}",
                    s[v],
                    self.region.point(v)
                )));
            }
        }
        Ok(())
    }

    fn free_dim(&self) -> usize {
        self.region.interior_indices().len()
    }
}

/// P*_{U,q}: mean-zero fields, energy Σ_e V(s·e + ∇ψ(e)) − q·∇ψ(e).
///
/// The argument shift s is zero for the ensemble of the definition; a nonzero
/// shift realizes the potentials Ṽ_e(x) = V(s·e + x) of the change of variables
/// ψ → ψ + l_s.
#[derive(Clone, Debug)]
pub struct NeumannEnsemble {
    region: Arc<Region>,
    tilt: Vec<f64>,
    shift: Vec<f64>,
    potentials: Vec<Potential>,
}

impl NeumannEnsemble {
    pub fn new(region: Arc<Region>, q: &[f64], potential: Potential) -> Result<NeumannEnsemble> {
        let d = region.d();
        NeumannEnsemble::with_potentials(region, q, expand_potentials(d, potential))
    }

    pub fn with_potentials(region: Arc<Region>, q: &[f64], potentials: Vec<Potential>) -> Result<NeumannEnsemble> {
        if q.len() != region.d() || potentials.len() != region.d() {
            return invalid("tilt and potential list must have one entry per direction");
        }
        if region.len() < 2 {
            return invalid("Neumann ensemble needs at least two vertices");
        }
        let d = region.d();
        Ok(NeumannEnsemble { region, tilt: q.to_vec(), shift: vec![0.0; d], potentials })
    }

    pub fn cube(d: usize, n: u32, q: &[f64], potential: Potential) -> Result<NeumannEnsemble> {
        NeumannEnsemble::new(Arc::new(Region::cube(d, n)?), q, potential)
    }

    pub fn with_shift(mut self, s: &[f64]) -> Result<NeumannEnsemble> {
        if s.len() != self.region.d() {
            return invalid("shift must have one entry per direction");
        }
        self.shift = s.to_vec();
        Ok(self)
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn with_tilt(&self, q: &[f64]) -> NeumannEnsemble {
        NeumannEnsemble { tilt: q.to_vec(), ..self.clone() }
    }

    pub fn with_potential(&self, potential: Potential) -> NeumannEnsemble {
        NeumannEnsemble { potentials: expand_potentials(self.region.d(), potential), ..self.clone() }
    }
}

impl Ensemble for NeumannEnsemble {
    fn kind(&self) -> EnsembleKind {
        EnsembleKind::Neumann
    }

    fn region(&self) -> &Arc<Region> {
        &self.region
    }

    fn potentials(&self) -> &[Potential] {
        &self.potentials
    }

    fn tilt(&self) -> &[f64] {
        &self.tilt
    }

    fn energy_unchecked(&self, s: &[f64]) -> f64 {
        let mut acc = NeumaierSum::default();
        for b in self.region.bonds() {
            let g = s[b.head] - s[b.tail];
            acc.add(self.potentials[b.dir].eval(self.shift[b.dir] + g));
            acc.add(-self.tilt[b.dir] * g);
        }
        acc.value()
    }

    fn energy_grad(&self, s: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut acc = NeumaierSum::default();
        for b in self.region.bonds() {
            let g = s[b.head] - s[b.tail];
            let (v, dv) = self.potentials[b.dir].eval_deriv(self.shift[b.dir] + g);
            acc.add(v);
            acc.add(-self.tilt[b.dir] * g);
            let f = dv - self.tilt[b.dir];
            grad[b.head] += f;
            grad[b.tail] -= f;
        }
        self.project(grad);
        acc.value()
    }

    fn project(&self, v: &mut [f64]) {
        project_mean_zero(v);
    }

    fn check_admissible(&self, s: &[f64]) -> Result<()> {
        check_len(&self.region, s)?;
        let m = mean_of(s);
        if m.abs() > 1e-9 {
            return Err(Error::Inadmissible(format!("mean {} is not zero", m)));
        }
        Ok(())
    }

    fn free_dim(&self) -> usize {
        self.region.len() - 1
    }
}

pub fn energy_dirichlet(ens: &DirichletEnsemble, phi: &[f64]) -> Result<f64> {
    ens.check_admissible(phi)?;
    Ok(ens.energy_unchecked(phi))
}

pub fn energy_neumann(ens: &NeumannEnsemble, psi: &[f64]) -> Result<f64> {
    ens.check_admissible(psi)?;
    Ok(ens.energy_unchecked(psi))
}

/// Negative energy gradient, projected onto the admissible subspace.
pub fn force(ens: &dyn Ensemble, state: &[f64]) -> Result<Vec<f64>> {
    ens.check_admissible(state)?;
    let mut g = vec![0.0; state.len()];
    ens.energy_grad(state, &mut g);
    g.iter_mut().for_each(|x| *x = -*x);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> Potential {
        Potential::quadratic(1.0).unwrap()
    }

    #[test]
    fn dirichlet_zero_state() {
        let e = DirichletEnsemble::cube(2, 1, &[0.0, 0.0], quad()).unwrap();
        assert_eq!(energy_dirichlet(&e, &[0.0; 9]).unwrap(), 0.0);
        let e = DirichletEnsemble::cube(2, 1, &[1.0, 0.0], quad()).unwrap();
        assert_eq!(energy_dirichlet(&e, &[0.0; 9]).unwrap(), 6.0);
    }

    #[test]
    fn dirichlet_rejects_boundary_values() {
        let e = DirichletEnsemble::cube(2, 1, &[0.0, 0.0], quad()).unwrap();
        let mut s = [0.0; 9];
        s[0] = 0.1;
        assert!(energy_dirichlet(&e, &s).is_err());
    }

    #[test]
    fn neumann_zero_state_and_mean_check() {
        let e = NeumannEnsemble::cube(2, 1, &[0.0, 0.0], quad()).unwrap();
        assert_eq!(energy_neumann(&e, &[0.0; 9]).unwrap(), 0.0);
        let mut s = [0.0; 9];
        s[3] = 1.0;
        assert!(energy_neumann(&e, &s).is_err());
    }

    #[test]
    fn quadratic_force_vanishes_at_zero() {
        let e = DirichletEnsemble::cube(2, 2, &[0.0, 0.0], quad()).unwrap();
        assert!(force(&e, &vec![0.0; 81]).unwrap().iter().all(|&f| f == 0.0));
    }

    #[test]
    fn neumann_force_sums_to_zero() {
        let e = NeumannEnsemble::cube(2, 1, &[0.4, -1.0], Potential::logcosh(1.0).unwrap()).unwrap();
        let mut s: Vec<f64> = (0..9).map(|k| ((k * 7) % 5) as f64 * 0.3).collect();
        project_mean_zero(&mut s);
        let f = force(&e, &s).unwrap();
        assert!(f.iter().sum::<f64>().abs() < 1e-14);
    }
}
