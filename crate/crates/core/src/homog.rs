//! Deterministic linear algebra of the patching construction on Q_{2n}:
//! Dirichlet Poisson solves, block decompositions and the operator L.
//!
//! Fields on Q_{2n} are identified with zero-boundary fields on Q_{2n}⁺. With
//! A the Dirichlet Laplacian of Q_{2n}⁺ and N the block-diagonal Neumann
//! Laplacian of the cells z + Q_n,
//!
//!   L = A⁻¹N + Σ_z h̃_z h_zᵀ,
//!
//! where h_z are the normalized cell indicators (a basis of H) and h̃_z an
//! orthonormal basis of (im L)⊥ = A·H.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{divergence_into, EdgeField, Field, Region, TriadicPartition};
use crate::linalg::{conjugate_gradient, power_iteration, restricted_laplacian, BandedCholesky, SparseSym};
use crate::numeric::{axpy, dot, norm};

/// Largest dimension for which L is assembled densely.
pub const DENSE_PATCH_LIMIT: usize = 1000;

/// Solves Δκ = div f on the vertices of f's region with κ = 0 on the rest of
/// `plus`, whose interior must be exactly that region. Returns κ on f's region.
pub fn poisson_dirichlet(f: &EdgeField, plus: &Region) -> Result<Field> {
    let inner = f.region.clone();
    let idx = plus.embed(&inner)?;
    let interior = plus.interior_indices();
    if interior.len() != idx.len() {
        return invalid("the field's region must be the interior of the enclosing region");
    }
    let a = restricted_laplacian(plus, &idx);
    let mut div = vec![0.0; inner.len()];
    divergence_into(&inner, &f.values, &mut div);
    let rhs: Vec<f64> = div.iter().map(|v| -v).collect();
    let n = inner.len();
    let (kappa, _) = conjugate_gradient(|x, y| a.matvec(x, y), &rhs, 1e-10, 10 * n, None)?;
    Field::new(inner, kappa)
}

/// Σ over the bonds of `plus` of |f − ∇κ|², with f extended by zero and κ by
/// zero outside f's region.
pub fn gradient_residual(f: &EdgeField, kappa: &Field, plus: &Region) -> Result<f64> {
    let idx = plus.embed(&f.region)?;
    let mut k = vec![0.0; plus.len()];
    for (i, &v) in idx.iter().enumerate() {
        k[v] = kappa.values[i];
    }
    let mut fplus = vec![0.0; plus.bonds().len()];
    let pos: std::collections::HashMap<(usize, usize), usize> =
        plus.bonds().iter().enumerate().map(|(e, b)| ((b.tail, b.head), e)).collect();
    for (e, b) in f.region.bonds().iter().enumerate() {
        fplus[pos[&(idx[b.tail], idx[b.head])]] = f.values[e];
    }
    Ok(plus.bonds().iter().zip(&fplus).map(|(b, fv)| (fv - (k[b.head] - k[b.tail])).powi(2)).sum())
}

/// Per-cell mean-zero component of φ.
pub fn project_blocks(phi: &Field, partition: &TriadicPartition) -> Result<Field> {
    let c = project_piecewise_constant(phi, partition)?;
    Field::new(phi.region.clone(), phi.values.iter().zip(&c.values).map(|(a, b)| a - b).collect())
}

/// Per-cell average of φ, as a field constant on every cell.
pub fn project_piecewise_constant(phi: &Field, partition: &TriadicPartition) -> Result<Field> {
    if *phi.region != *partition.cube {
        return Err(Error::RegionMismatch("field and partition live on different cubes".into()));
    }
    let mut out = vec![0.0; phi.values.len()];
    for cell in &partition.members {
        let m = cell.iter().map(|&v| phi.values[v]).sum::<f64>() / cell.len() as f64;
        for &v in cell {
            out[v] = m;
        }
    }
    Field::new(phi.region.clone(), out)
}

/// Modified Gram–Schmidt, applied twice for stability.
fn orthonormalize(mut vs: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    for _ in 0..2 {
        for i in 0..vs.len() {
            let (done, rest) = vs.split_at_mut(i);
            let v = &mut rest[0];
            for u in done.iter() {
                let c = dot(u, v);
                axpy(-c, u, v);
            }
            let nv = norm(v);
            if nv < 1e-9 {
                return Err(Error::Factorization { pivot: i, value: nv });
            }
            v.iter_mut().for_each(|x| *x /= nv);
        }
    }
    Ok(vs)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Multiplicity {
    /// Number of basis vectors v with ‖Lv − v‖∞ ≤ tol.
    pub verified: usize,
    pub candidates: usize,
    pub max_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InjectivityWitness {
    pub trials: usize,
    /// Smallest ‖Lψ‖/‖ψ‖ observed.
    pub min_ratio: f64,
    /// Required lower bound 1 / (2‖L⁻¹‖).
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractionCheck {
    pub trials: usize,
    /// Largest Σ|∇Lψ|² / Σ_blocks Σ|∇ψ|².
    pub max_ratio: f64,
    pub passed: bool,
}

/// The operator L between h¹(Q_{2n}) and h¹₀(Q_{2n}⁺).
pub struct PatchingOperator {
    pub d: usize,
    pub n: u32,
    pub partition: TriadicPartition,
    pub plus: Arc<Region>,
    a: SparseSym,
    a_factor: BandedCholesky,
    blocks: SparseSym,
    /// Pseudo-inverse of the Neumann Laplacian of one cell (all cells agree).
    cell_pinv: DMatrix<f64>,
    /// Orthonormal basis h̃_z of (im L)⊥.
    h_tilde: Vec<Vec<f64>>,
}

impl PatchingOperator {
    pub fn new(d: usize, n: u32) -> Result<PatchingOperator> {
        if n == 0 {
            return invalid("patching needs n >= 1");
        }
        let partition = TriadicPartition::new(d, n, 2 * n)?;
        let cube = partition.cube.clone();
        let plus = Arc::new(Region::cube_plus(d, 2 * n)?);
        let idx = plus.embed(&cube)?;
        let a = restricted_laplacian(&plus, &idx);
        let a_factor = BandedCholesky::factor(&a)?;

        let mut t = Vec::new();
        for cell in &partition.cell_bonds {
            for &e in cell {
                let b = cube.bonds()[e];
                t.extend([(b.tail, b.tail, 1.0), (b.head, b.head, 1.0), (b.tail, b.head, -1.0), (b.head, b.tail, -1.0)]);
            }
        }
        let blocks = SparseSym::from_triplets(cube.len(), t);

        let members = &partition.members[0];
        let m = members.len();
        let mut local = DMatrix::zeros(m, m);
        for (i, &u) in members.iter().enumerate() {
            for (v, x) in blocks.row(u) {
                let j = members.iter().position(|&w| w == v).expect("cell bond leaves its cell");
                local[(i, j)] += x;
            }
        }
        let j = DMatrix::from_element(m, m, 1.0 / m as f64);
        let cell_pinv = (local + &j).try_inverse().ok_or(Error::Factorization { pivot: 0, value: 0.0 })? - j;

        let seeds: Vec<Vec<f64>> = partition
            .members
            .iter()
            .map(|cell| {
                let mut ind = vec![0.0; cube.len()];
                cell.iter().for_each(|&v| ind[v] = 1.0);
                a.mul(&ind)
            })
            .collect();
        let h_tilde = orthonormalize(seeds)?;
        Ok(PatchingOperator { d, n, partition, plus, a, a_factor, blocks, cell_pinv, h_tilde })
    }

    pub fn dim(&self) -> usize {
        self.partition.cube.len()
    }

    /// h_zᵀ v for every cell.
    fn h_coeffs(&self, v: &[f64]) -> Vec<f64> {
        self.partition.members.iter().map(|c| c.iter().map(|&i| v[i]).sum::<f64>() / (c.len() as f64).sqrt()).collect()
    }

    fn add_h(&self, coeffs: &[f64], out: &mut [f64]) {
        for (c, cell) in coeffs.iter().zip(&self.partition.members) {
            let w = c / (cell.len() as f64).sqrt();
            cell.iter().for_each(|&i| out[i] += w);
        }
    }

    fn h_tilde_coeffs(&self, v: &[f64]) -> Vec<f64> {
        self.h_tilde.iter().map(|h| dot(h, v)).collect()
    }

    fn add_h_tilde(&self, coeffs: &[f64], out: &mut [f64]) {
        for (c, h) in coeffs.iter().zip(&self.h_tilde) {
            axpy(*c, h, out);
        }
    }

    fn solve_a(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.a_factor.solve(&mut x);
        x
    }

    fn apply_blocks_pinv(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for cell in &self.partition.members {
            let local = nalgebra::DVector::from_iterator(cell.len(), cell.iter().map(|&i| v[i]));
            let y = &self.cell_pinv * local;
            for (k, &i) in cell.iter().enumerate() {
                out[i] = y[k];
            }
        }
        out
    }

    pub fn apply(&self, psi: &[f64]) -> Vec<f64> {
        let mut out = self.solve_a(&self.blocks.mul(psi));
        self.add_h_tilde(&self.h_coeffs(psi), &mut out);
        out
    }

    pub fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        let mut out = self.blocks.mul(&self.solve_a(w));
        self.add_h(&self.h_tilde_coeffs(w), &mut out);
        out
    }

    pub fn apply_inverse(&self, w: &[f64]) -> Vec<f64> {
        let c = self.h_tilde_coeffs(w);
        let mut r = w.to_vec();
        for (ci, h) in c.iter().zip(&self.h_tilde) {
            axpy(-ci, h, &mut r);
        }
        let mut out = self.apply_blocks_pinv(&self.a.mul(&r));
        self.add_h(&c, &mut out);
        out
    }

    pub fn apply_inverse_transpose(&self, w: &[f64]) -> Vec<f64> {
        let mut out = self.a.mul(&self.apply_blocks_pinv(w));
        let c = self.h_tilde_coeffs(&out);
        for (ci, h) in c.iter().zip(&self.h_tilde) {
            axpy(-ci, h, &mut out);
        }
        self.add_h_tilde(&self.h_coeffs(w), &mut out);
        out
    }

    /// Largest |h̃_zᵀ L ψ| over the block components of the given fields;
    /// zero when every h̃_z is orthogonal to im L.
    pub fn image_orthogonality_residual(&self, fields: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for f in fields {
            let cube = Field::new(self.partition.cube.clone(), f.clone()).expect("field length");
            let blk = project_blocks(&cube, &self.partition).expect("same cube");
            let img = self.solve_a(&self.blocks.mul(&blk.values));
            for h in &self.h_tilde {
                worst = worst.max(dot(h, &img).abs());
            }
        }
        worst
    }

    /// Dense matrix of L; only below the size cap.
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if n > DENSE_PATCH_LIMIT {
            return Err(Error::SizeCap(format!("dense patching operator of dimension {} exceeds {}", n, DENSE_PATCH_LIMIT)));
        }
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                self.apply(&e)
            })
            .collect();
        Ok(DMatrix::from_fn(n, n, |i, j| cols[j][i]))
    }

    /// ln |det L| from a dense LU factorization.
    pub fn logdet(&self) -> Result<f64> {
        let lu = self.dense()?.lu();
        let u = lu.u();
        Ok((0..self.dim()).map(|i| u[(i, i)].abs().ln()).sum())
    }

    /// Checks L v = v on the basis δ_j − δ_{j0} of ⊕_z h̊¹(z + Q_nº).
    pub fn eig1_multiplicity(&self, tol: f64) -> Multiplicity {
        let cube = &self.partition.cube;
        let cell0 = self.partition.cell_region(0).expect("cell region");
        let mut basis = Vec::new();
        for cell in &self.partition.members {
            let interior: Vec<usize> =
                cell.iter().zip(cell0.boundary_mask()).filter(|(_, b)| !**b).map(|(v, _)| *v).collect();
            for &j in interior.iter().skip(1) {
                basis.push((interior[0], j));
            }
        }
        let n = cube.len();
        let residuals: Vec<f64> = basis
            .par_iter()
            .map(|&(j0, j)| {
                let mut v = vec![0.0; n];
                v[j] = 1.0;
                v[j0] = -1.0;
                let lv = self.apply(&v);
                lv.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .collect();
        Multiplicity {
            verified: residuals.iter().filter(|r| **r <= tol).count(),
            candidates: basis.len(),
            max_residual: residuals.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// (‖L‖, ‖L⁻¹‖) in the ℓ² norm by power iteration on LᵀL and L⁻ᵀL⁻¹.
    pub fn operator_norms(&self, iters: usize, seed: u64) -> (f64, f64) {
        let n = self.dim();
        let fwd = power_iteration(
            |v, w| w.copy_from_slice(&self.apply_transpose(&self.apply(v))),
            n,
            iters,
            seed,
        );
        let inv = power_iteration(
            |v, w| w.copy_from_slice(&self.apply_inverse_transpose(&self.apply_inverse(v))),
            n,
            iters,
            seed.wrapping_add(1),
        );
        (fwd.sqrt(), inv.sqrt())
    }

    fn random_fields(&self, trials: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..trials).map(|_| (0..self.dim()).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
    }

    /// ‖Lψ‖ ≥ ‖ψ‖ / (2‖L⁻¹‖) on random ψ.
    pub fn injectivity_witness(&self, trials: usize, inverse_norm: f64, seed: u64) -> InjectivityWitness {
        let min_ratio = self
            .random_fields(trials, seed)
            .iter()
            .map(|psi| norm(&self.apply(psi)) / norm(psi))
            .fold(f64::INFINITY, f64::min);
        let threshold = 0.5 / inverse_norm;
        InjectivityWitness { trials, min_ratio, threshold, passed: min_ratio >= threshold }
    }

    /// Σ_{e⊆Q_{2n}⁺} |∇Lψ|² ≤ Σ_z Σ_{e⊆z+Q_n} |∇ψ|² on random block fields ψ.
    pub fn gradient_contraction(&self, trials: usize, seed: u64) -> ContractionCheck {
        let mut max_ratio: f64 = 0.0;
        for mut psi in self.random_fields(trials, seed) {
            for cell in &self.partition.members {
                let m = cell.iter().map(|&v| psi[v]).sum::<f64>() / cell.len() as f64;
                cell.iter().for_each(|&v| psi[v] -= m);
            }
            let k = self.apply(&psi);
            let lhs = dot(&k, &self.a.mul(&k));
            let rhs = dot(&psi, &self.blocks.mul(&psi));
            max_ratio = max_ratio.max(lhs / rhs);
        }
        ContractionCheck { trials, max_ratio, passed: max_ratio <= 1.0 + 1e-10 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::gradient;

    #[test]
    fn poisson_recovers_gradients() {
        let plus = Region::cube_plus(2, 2).unwrap();
        let q = Arc::new(Region::cube(2, 2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = Field::new(q.clone(), (0..q.len()).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        q.boundary_indices().into_iter().for_each(|v| g.values[v] = 0.0);
        let f = gradient(&g);
        let k = poisson_dirichlet(&f, &plus).unwrap();
        assert!(k.values.iter().zip(&g.values).all(|(a, b)| (a - b).abs() < 1e-8));
        let zero = poisson_dirichlet(&EdgeField::zeros(q.clone()), &plus).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn poisson_solution_is_the_closest_gradient() {
        let plus = Region::cube_plus(2, 2).unwrap();
        let q = Arc::new(Region::cube(2, 2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = EdgeField::new(q.clone(), (0..q.bonds().len()).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        let k = poisson_dirichlet(&f, &plus).unwrap();
        let best = gradient_residual(&f, &k, &plus).unwrap();
        for _ in 0..100 {
            let g = Field::new(q.clone(), (0..q.len()).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
            assert!(best <= gradient_residual(&f, &g, &plus).unwrap());
        }
    }

    #[test]
    fn patching_inverse_and_transpose_are_consistent() {
        let p = PatchingOperator::new(2, 1).unwrap();
        let l = p.dense().unwrap();
        let n = p.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let back = p.apply(&p.apply_inverse(&v));
        assert!(back.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-10));
        let back = p.apply_inverse(&p.apply(&v));
        assert!(back.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!((dot(&w, &p.apply(&v)) - dot(&p.apply_transpose(&w), &v)).abs() < 1e-10);
        let x = p.apply_inverse(&v);
        assert!((dot(&w, &x) - dot(&p.apply_inverse_transpose(&w), &v)).abs() < 1e-10);
        let lv = &l * nalgebra::DVector::from_vec(v.clone());
        assert!(lv.iter().zip(p.apply(&v)).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(p.image_orthogonality_residual(&[v, w]) < 1e-10);
    }

    #[test]
    fn n1_has_no_guaranteed_unit_eigenvectors() {
        let p = PatchingOperator::new(2, 1).unwrap();
        assert_eq!(p.eig1_multiplicity(1e-8).candidates, 0);
        assert!(p.logdet().unwrap().is_finite());
    }

    #[test]
    fn decompositions_are_orthogonal() {
        let part = TriadicPartition::new(2, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let phi = Field::new(part.cube.clone(), (0..part.cube.len()).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        let b = project_blocks(&phi, &part).unwrap();
        let c = project_piecewise_constant(&phi, &part).unwrap();
        let total = dot(&phi.values, &phi.values);
        assert!((total - dot(&b.values, &b.values) - dot(&c.values, &c.values)).abs() < 1e-10 * total);
        let again = project_piecewise_constant(&b, &part).unwrap();
        assert!(again.values.iter().all(|v| v.abs() < 1e-14));
    }
}
