//! Sparse symmetric operators on lattice regions, banded Cholesky with
//! selected inversion, and Krylov / power iterations.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::lattice::Region;
use crate::numeric::{axpy, dot, norm};

/// Symmetric matrix in compressed sparse row form (both triangles stored).
#[derive(Clone, Debug)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSym {
    /// Builds from (row, col, value) triplets; duplicates are summed. The caller
    /// supplies both triangles.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> SparseSym {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseSym { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.n).flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j))).max().unwrap_or(0)
    }

    pub fn scaled(&self, s: f64) -> SparseSym {
        SparseSym { vals: self.vals.iter().map(|v| v * s).collect(), ..self.clone() }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }
}

/// Graph Laplacian of a region: φᵀLφ = Σ_{e⊆U} |∇φ(e)|².
pub fn graph_laplacian(region: &Region) -> SparseSym {
    let mut t = Vec::with_capacity(4 * region.bonds().len() + region.len());
    let mut deg = vec![0.0; region.len()];
    for b in region.bonds() {
        t.push((b.tail, b.head, -1.0));
        t.push((b.head, b.tail, -1.0));
        deg[b.tail] += 1.0;
        deg[b.head] += 1.0;
    }
    for (v, dv) in deg.into_iter().enumerate() {
        t.push((v, v, dv));
    }
    SparseSym::from_triplets(region.len(), t)
}

/// Principal submatrix of the region's graph Laplacian on the listed vertices.
/// With the interior vertices this is the Dirichlet form on zero-boundary fields.
pub fn restricted_laplacian(region: &Region, keep: &[usize]) -> SparseSym {
    let mut pos = vec![usize::MAX; region.len()];
    for (k, &v) in keep.iter().enumerate() {
        pos[v] = k;
    }
    let mut t = Vec::new();
    let mut deg = vec![0.0; region.len()];
    for b in region.bonds() {
        deg[b.tail] += 1.0;
        deg[b.head] += 1.0;
        let (pt, ph) = (pos[b.tail], pos[b.head]);
        if pt != usize::MAX && ph != usize::MAX {
            t.push((pt, ph, -1.0));
            t.push((ph, pt, -1.0));
        }
    }
    for (k, &v) in keep.iter().enumerate() {
        t.push((k, k, deg[v]));
    }
    SparseSym::from_triplets(keep.len(), t)
}

/// Cholesky factor A = LLᵀ of a symmetric positive definite band matrix.
/// Row i of L stores the entries j ∈ [i − bw, i].
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &SparseSym) -> Result<BandedCholesky> {
        let n = a.dim();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    l[i * w + (j + bw - i)] += v;
                }
            }
        }
        for i in 0..n {
            let k0 = i.saturating_sub(bw);
            for j in k0..=i {
                let len = j - k0;
                let ri = i * w + (k0 + bw - i);
                let rj = j * w + (k0 + bw - j);
                let s = l[i * w + (j + bw - i)] - dot(&l[ri..ri + len], &l[rj..rj + len]);
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Factorization { pivot: i, value: s });
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.bw + 1) + (j + self.bw - i)]
    }

    /// ln det A.
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.at(i, i).ln()).sum::<f64>()
    }

    /// Solves L y = b in place.
    pub fn forward(&self, b: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let k0 = i.saturating_sub(self.bw);
            let ri = i * w + (k0 + self.bw - i);
            let s = dot(&self.l[ri..ri + (i - k0)], &b[k0..i]);
            b[i] = (b[i] - s) / self.l[i * w + self.bw];
        }
    }

    /// Solves Lᵀ x = y in place.
    pub fn backward(&self, b: &mut [f64]) {
        let w = self.bw + 1;
        for i in (0..self.n).rev() {
            b[i] /= self.l[i * w + self.bw];
            let xi = b[i];
            let k0 = i.saturating_sub(self.bw);
            let ri = i * w + (k0 + self.bw - i);
            axpy(-xi, &self.l[ri..ri + (i - k0)], &mut b[k0..i]);
        }
    }

    /// Solves A x = b in place.
    pub fn solve(&self, b: &mut [f64]) {
        self.forward(b);
        self.backward(b);
    }

    /// Band of A⁻¹ (entries with |i − j| ≤ bw) by the Takahashi recursion,
    /// in the same row layout as the factor.
    pub fn selected_inverse(&self) -> SelectedInverse {
        let n = self.n;
        let bw = self.bw;
        let w = bw + 1;
        let mut z = vec![0.0; n * w];
        let zi = |i: usize, j: usize| -> usize {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            r * w + (c + bw - r)
        };
        let mut col = vec![0.0; bw];
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let m = hi - i;
            for (t, k) in (i + 1..=hi).enumerate() {
                col[t] = self.at(k, i);
            }
            let lii = self.at(i, i);
            for j in (i..=hi).rev() {
                let mut s = 0.0;
                for t in 0..m {
                    let k = i + 1 + t;
                    s += col[t] * z[zi(k, j)];
                }
                let delta = if j == i { 1.0 / lii } else { 0.0 };
                z[zi(i, j)] = (delta - s) / lii;
            }
        }
        SelectedInverse { n, bw, z }
    }
}

/// Entries of A⁻¹ inside the band of the Cholesky factor.
#[derive(Clone, Debug)]
pub struct SelectedInverse {
    n: usize,
    bw: usize,
    z: Vec<f64>,
}

impl SelectedInverse {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bw || r >= self.n {
            return None;
        }
        Some(self.z[r * (self.bw + 1) + (c + self.bw - r)])
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.z[i * (self.bw + 1) + self.bw]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate gradient for a symmetric positive (semi)definite operator. With
/// `project`, iterates stay in the range of the projection (deflated CG).
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
    project: Option<&dyn Fn(&mut [f64])>,
) -> Result<(Vec<f64>, CgOutcome)> {
    let n = b.len();
    let mut r = b.to_vec();
    if let Some(p) = project {
        p(&mut r);
    }
    let bnorm = norm(&r);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, CgOutcome { iterations: 0, relative_residual: 0.0 }));
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        if let Some(pr) = project {
            pr(&mut ap);
        }
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NoConvergence { iterations: it, residual: rr.sqrt() / bnorm });
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let rel = rr_new.sqrt() / bnorm;
        if rel <= tol {
            if let Some(pr) = project {
                pr(&mut x);
            }
            return Ok((x, CgOutcome { iterations: it, relative_residual: rel }));
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: rr.sqrt() / bnorm })
}

/// Largest eigenvalue of a symmetric positive semidefinite operator by power
/// iteration from a seeded Gaussian start.
pub fn power_iteration(apply: impl Fn(&[f64], &mut [f64]), n: usize, iters: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut w = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..iters {
        apply(&v, &mut w);
        lambda = dot(&v, &w);
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian_dirichlet(m: usize) -> SparseSym {
        let mut t = Vec::new();
        for i in 0..m {
            t.push((i, i, 2.0));
            if i + 1 < m {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        SparseSym::from_triplets(m, t)
    }

    #[test]
    fn path_logdet_matches_eigenvalues() {
        let m = 12;
        let a = path_laplacian_dirichlet(m);
        let ch = BandedCholesky::factor(&a).unwrap();
        let want: f64 = (1..=m)
            .map(|k| (2.0 - 2.0 * (k as f64 * std::f64::consts::PI / (m + 1) as f64).cos()).ln())
            .sum();
        assert!((ch.logdet() - want).abs() < 1e-12);
        // det of the path Dirichlet Laplacian is m + 1.
        assert!((ch.logdet() - ((m + 1) as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn banded_solve_and_selected_inverse_match_dense() {
        let q = Region::cube(2, 2).unwrap();
        let int = q.interior_indices();
        let a = restricted_laplacian(&q, &int);
        assert_eq!(a.dim(), 49);
        let ch = BandedCholesky::factor(&a).unwrap();
        let dense = a.to_dense();
        let inv = dense.clone().try_inverse().unwrap();
        let b: Vec<f64> = (0..49).map(|k| (k as f64 * 0.37).sin()).collect();
        let mut x = b.clone();
        ch.solve(&mut x);
        let r = &dense * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_vec(b);
        assert!(r.norm() < 1e-12);
        let sel = ch.selected_inverse();
        for i in 0..49 {
            for j in 0..49 {
                if let Some(z) = sel.get(i, j) {
                    assert!((z - inv[(i, j)]).abs() < 1e-12, "({}, {})", i, j);
                }
            }
        }
        assert!((ch.logdet() - dense.determinant().ln()).abs() < 1e-9);
    }

    #[test]
    fn deflated_cg_solves_neumann_system() {
        let q = Region::cube(2, 2).unwrap();
        let l = graph_laplacian(&q);
        let mut b: Vec<f64> = (0..81).map(|k| (k as f64).cos()).collect();
        crate::lattice::project_mean_zero(&mut b);
        let proj = |v: &mut [f64]| crate::lattice::project_mean_zero(v);
        let (x, out) = conjugate_gradient(|v, w| l.matvec(v, w), &b, 1e-12, 1000, Some(&proj)).unwrap();
        assert!(out.relative_residual <= 1e-12);
        let r: Vec<f64> = l.mul(&x).iter().zip(&b).map(|(a, c)| a - c).collect();
        assert!(norm(&r) < 1e-10);
        assert!(x.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn power_iteration_finds_top_eigenvalue() {
        let a = path_laplacian_dirichlet(10);
        let lam = power_iteration(|v, w| a.matvec(v, w), 10, 2000, 1);
        let want = 2.0 - 2.0 * (10.0 * std::f64::consts::PI / 11.0).cos();
        assert!((lam - want).abs() < 1e-8);
    }
}
