//! Exact computations for the quadratic potential V(x) = βx²: surface tensions
//! from log-determinants, Gaussian means and covariances, and a geometric
//! extrapolation of level sequences.
//!
//! Laplacian factorizations do not depend on β and are cached per (d, n).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensembles::EnsembleKind;
use crate::error::{invalid, Error, Result};
use crate::lattice::{project_mean_zero, Region};
use crate::linalg::{graph_laplacian, restricted_laplacian, BandedCholesky, SelectedInverse, SparseSym};
use crate::numeric::{dot, golden_max, NeumaierSum};

/// Largest vertex count for which dense covariances are formed.
pub const DENSE_LIMIT: usize = 3000;

/// β-independent operators of one cube.
#[derive(Debug)]
pub struct CubeOperators {
    pub region: Arc<Region>,
    /// Interior vertex indices; the Dirichlet unknowns.
    pub interior: Vec<usize>,
    /// Neumann graph Laplacian on all vertices.
    pub laplacian: SparseSym,
    dirichlet: OnceLock<BandedCholesky>,
    grounded: OnceLock<BandedCholesky>,
    dirichlet_band: OnceLock<SelectedInverse>,
    grounded_band: OnceLock<SelectedInverse>,
}

impl CubeOperators {
    fn new(d: usize, n: u32) -> Result<CubeOperators> {
        let region = Arc::new(Region::cube(d, n)?);
        let interior = region.interior_indices();
        let laplacian = graph_laplacian(&region);
        Ok(CubeOperators {
            region,
            interior,
            laplacian,
            dirichlet: OnceLock::new(),
            grounded: OnceLock::new(),
            dirichlet_band: OnceLock::new(),
            grounded_band: OnceLock::new(),
        })
    }

    /// Cholesky factor of the Dirichlet Laplacian A on the interior.
    pub fn dirichlet_factor(&self) -> Result<&BandedCholesky> {
        if let Some(f) = self.dirichlet.get() {
            return Ok(f);
        }
        let a = restricted_laplacian(&self.region, &self.interior);
        let f = BandedCholesky::factor(&a)?;
        Ok(self.dirichlet.get_or_init(|| f))
    }

    /// Cholesky factor of the Neumann Laplacian with vertex 0 removed.
    pub fn grounded_factor(&self) -> Result<&BandedCholesky> {
        if let Some(f) = self.grounded.get() {
            return Ok(f);
        }
        let keep: Vec<usize> = (1..self.region.len()).collect();
        let g = restricted_laplacian(&self.region, &keep);
        let f = BandedCholesky::factor(&g)?;
        Ok(self.grounded.get_or_init(|| f))
    }

    fn dirichlet_band(&self) -> Result<&SelectedInverse> {
        if let Some(z) = self.dirichlet_band.get() {
            return Ok(z);
        }
        let z = self.dirichlet_factor()?.selected_inverse();
        Ok(self.dirichlet_band.get_or_init(|| z))
    }

    fn grounded_band(&self) -> Result<&SelectedInverse> {
        if let Some(z) = self.grounded_band.get() {
            return Ok(z);
        }
        let z = self.grounded_factor()?.selected_inverse();
        Ok(self.grounded_band.get_or_init(|| z))
    }

    /// ln det A.
    pub fn logdet_dirichlet(&self) -> Result<f64> {
        Ok(self.dirichlet_factor()?.logdet())
    }

    /// ln of the product of nonzero Neumann eigenvalues, N · det(grounded L).
    pub fn log_pdet_neumann(&self) -> Result<f64> {
        Ok((self.region.len() as f64).ln() + self.grounded_factor()?.logdet())
    }

    /// x = A⁻¹ b for b on the interior unknowns.
    pub fn solve_dirichlet(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.dirichlet_factor()?.solve(&mut x);
        Ok(x)
    }

    /// The mean-zero solution of L x = b; b is projected to mean zero first.
    pub fn solve_neumann(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = b.to_vec();
        project_mean_zero(&mut rhs);
        let mut tail = rhs[1..].to_vec();
        self.grounded_factor()?.solve(&mut tail);
        let mut x = Vec::with_capacity(b.len());
        x.push(0.0);
        x.extend(tail);
        project_mean_zero(&mut x);
        Ok(x)
    }

    /// Lift of an interior vector to the whole cube, zero on the boundary.
    pub fn lift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.region.len()];
        for (k, &v) in self.interior.iter().enumerate() {
            out[v] = x[k];
        }
        out
    }
}

fn operator_cache() -> &'static Mutex<HashMap<(usize, u32), Arc<CubeOperators>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u32), Arc<CubeOperators>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Shared operators of the centered cube Q_n in dimension d.
pub fn cube_operators(d: usize, n: u32) -> Result<Arc<CubeOperators>> {
    if !(2..=3).contains(&d) || n == 0 {
        return invalid(format!("exact oracle needs d in {{2, 3}} and n >= 1, got d = {}, n = {}", d, n));
    }
    let mut cache = operator_cache().lock().expect("operator cache poisoned");
    if let Some(ops) = cache.get(&(d, n)) {
        return Ok(ops.clone());
    }
    let ops = Arc::new(CubeOperators::new(d, n)?);
    cache.insert((d, n), ops.clone());
    Ok(ops)
}

/// The Gaussian measures P_{Q_n,p} and P*_{Q_n,q} for V(x) = βx².
#[derive(Clone, Debug)]
pub struct GaussianExact {
    pub d: usize,
    pub n: u32,
    pub beta: f64,
    ops: Arc<CubeOperators>,
}

impl GaussianExact {
    pub fn new(d: usize, n: u32, beta: f64) -> Result<GaussianExact> {
        if !(beta > 0.0 && beta.is_finite()) {
            return invalid(format!("beta must be positive, got {}", beta));
        }
        Ok(GaussianExact { d, n, beta, ops: cube_operators(d, n)? })
    }

    pub fn operators(&self) -> &Arc<CubeOperators> {
        &self.ops
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.ops.region
    }

    fn volume(&self) -> f64 {
        self.ops.region.len() as f64
    }

    fn check_tilt(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.d {
            return invalid(format!("tilt has {} components, expected {}", p.len(), self.d));
        }
        Ok(())
    }

    /// Vertex functional c with Σ_e p·e ∇φ(e) = cᵀφ, restricted to the interior.
    fn dirichlet_cross(&self, p: &[f64]) -> Vec<f64> {
        let r = &self.ops.region;
        let mut full = vec![0.0; r.len()];
        for b in r.bonds() {
            full[b.head] += p[b.dir];
            full[b.tail] -= p[b.dir];
        }
        self.ops.interior.iter().map(|&v| full[v]).collect()
    }

    /// Vertex functional b with bᵀψ = Σ_e q·e ∇ψ(e).
    pub fn neumann_functional(&self, q: &[f64]) -> Vec<f64> {
        let r = &self.ops.region;
        let mut b = vec![0.0; r.len()];
        for bond in r.bonds() {
            b[bond.head] += q[bond.dir];
            b[bond.tail] -= q[bond.dir];
        }
        b
    }

    /// −(1/|Q_n|) ln Z_p.
    pub fn nu(&self, p: &[f64]) -> Result<f64> {
        self.check_tilt(p)?;
        let beta = self.beta;
        let nfree = self.ops.interior.len() as f64;
        let mut tilt = NeumaierSum::default();
        for b in self.ops.region.bonds() {
            tilt.add(p[b.dir] * p[b.dir]);
        }
        let c = self.dirichlet_cross(p);
        let cross = if c.iter().any(|x| *x != 0.0) { dot(&c, &self.ops.solve_dirichlet(&c)?) } else { 0.0 };
        let log_z = -beta * tilt.value() + beta * cross + 0.5 * nfree * (std::f64::consts::PI / beta).ln()
            - 0.5 * self.ops.logdet_dirichlet()?;
        Ok(-log_z / self.volume())
    }

    /// (1/|Q_n|) ln Z*_q.
    pub fn nustar(&self, q: &[f64]) -> Result<f64> {
        self.check_tilt(q)?;
        let beta = self.beta;
        let b = self.neumann_functional(q);
        let quad = dot(&b, &self.ops.solve_neumann(&b)?);
        let k = self.volume() - 1.0;
        let log_z = quad / (4.0 * beta) + 0.5 * k * (std::f64::consts::PI / beta).ln() - 0.5 * self.ops.log_pdet_neumann()?;
        Ok(log_z / self.volume())
    }

    /// Mean of P_{Q_n,p} on the whole cube (zero on the boundary).
    pub fn dirichlet_mean(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_tilt(p)?;
        let c = self.dirichlet_cross(p);
        let mut x = self.ops.solve_dirichlet(&c)?;
        x.iter_mut().for_each(|v| *v = -*v);
        Ok(self.ops.lift(&x))
    }

    /// Mean of P*_{Q_n,q}: (2βL)⁺ b.
    pub fn neumann_mean(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_tilt(q)?;
        let b = self.neumann_functional(q);
        let mut x = self.ops.solve_neumann(&b)?;
        x.iter_mut().for_each(|v| *v /= 2.0 * self.beta);
        Ok(x)
    }

    /// Vertex representations ℓ_i of the slope components: ⟨∇ψ⟩_i = ℓ_iᵀψ.
    pub fn slope_functionals(&self) -> Vec<Vec<f64>> {
        let r = &self.ops.region;
        let w = 1.0 / r.len() as f64;
        let mut l = vec![vec![0.0; r.len()]; self.d];
        for b in r.bonds() {
            l[b.dir][b.head] += w;
            l[b.dir][b.tail] -= w;
        }
        l
    }

    /// ∇_q ν*(Q_n, q), the mean slope under P*_{Q_n,q}.
    pub fn grad_nustar(&self, q: &[f64]) -> Result<Vec<f64>> {
        let m = self.neumann_mean(q)?;
        Ok(self.slope_functionals().iter().map(|l| dot(l, &m)).collect())
    }

    /// Covariance of the slope under P*_{Q_n,q}; independent of q.
    pub fn slope_covariance(&self) -> Result<Vec<Vec<f64>>> {
        let ls = self.slope_functionals();
        let sol: Vec<Vec<f64>> = ls.iter().map(|l| self.ops.solve_neumann(l)).collect::<Result<_>>()?;
        let mut c = vec![vec![0.0; self.d]; self.d];
        for i in 0..self.d {
            for j in 0..self.d {
                c[i][j] = dot(&ls[i], &sol[j]) / (2.0 * self.beta);
            }
        }
        Ok(c)
    }

    /// (1/|Q_n|) E*_q Σ_e |∇ψ(e)|².
    pub fn neumann_gradient_energy(&self, q: &[f64]) -> Result<f64> {
        self.check_tilt(q)?;
        let b = self.neumann_functional(q);
        let quad = dot(&b, &self.ops.solve_neumann(&b)?);
        let beta = self.beta;
        Ok(((self.volume() - 1.0) / (2.0 * beta) + quad / (4.0 * beta * beta)) / self.volume())
    }

    /// E_p Σ_x φ(x)² − Σ_x (E_p φ(x))² = tr((2βA)⁻¹), by selected inversion.
    pub fn l2_trace(&self) -> Result<f64> {
        Ok(self.ops.dirichlet_band()?.trace() / (2.0 * self.beta))
    }

    /// tr((2βL)⁺) = E*_q Σ_x |ψ(x) − E*_q ψ(x)|². With G the grounded inverse
    /// padded by zeros, L⁺ = PGP for the mean-zero projection P.
    pub fn neumann_trace(&self) -> Result<f64> {
        let g = self.ops.grounded_band()?;
        let mut ones = vec![1.0; self.ops.region.len() - 1];
        self.ops.grounded_factor()?.solve(&mut ones);
        let total: f64 = ones.iter().sum();
        Ok((g.trace() - total / self.volume()) / (2.0 * self.beta))
    }

    /// r^{−2} r^{−d} E_p Σ_x φ(x)² with r = 3^n, for the zero tilt.
    pub fn l2_normalized(&self) -> Result<f64> {
        let r = crate::lattice::side(self.n) as f64;
        Ok(self.l2_trace()? / (r * r * r.powi(self.d as i32)))
    }

    /// Variances of ∇φ(e) for every bond of the cube under P_{Q_n,p}.
    pub fn dirichlet_edge_variances(&self) -> Result<Vec<f64>> {
        let z = self.ops.dirichlet_band()?;
        let mut pos = vec![usize::MAX; self.ops.region.len()];
        for (k, &v) in self.ops.interior.iter().enumerate() {
            pos[v] = k;
        }
        let g = |i: usize, j: usize| -> Result<f64> {
            if i == usize::MAX || j == usize::MAX {
                return Ok(0.0);
            }
            z.get(i, j).ok_or_else(|| Error::InvalidArgument("entry outside the factor band".into()))
        };
        let s = 1.0 / (2.0 * self.beta);
        self.ops
            .region
            .bonds()
            .iter()
            .map(|b| {
                let (h, t) = (pos[b.head], pos[b.tail]);
                Ok(s * (g(h, h)? + g(t, t)? - 2.0 * g(h, t)?))
            })
            .collect()
    }

    /// Variances of ∇ψ(e) for every bond of the cube under P*_{Q_n,q}.
    pub fn neumann_edge_variances(&self) -> Result<Vec<f64>> {
        let z = self.ops.grounded_band()?;
        // Grounded index of vertex v is v − 1; vertex 0 carries the value 0.
        let g = |i: usize, j: usize| -> Result<f64> {
            if i == 0 || j == 0 {
                return Ok(0.0);
            }
            z.get(i - 1, j - 1).ok_or_else(|| Error::InvalidArgument("entry outside the factor band".into()))
        };
        let s = 1.0 / (2.0 * self.beta);
        self.ops
            .region
            .bonds()
            .iter()
            .map(|b| Ok(s * (g(b.head, b.head)? + g(b.tail, b.tail)? - 2.0 * g(b.head, b.tail)?)))
            .collect()
    }

    /// Dense covariance on all vertices of the cube.
    pub fn covariance_dense(&self, kind: EnsembleKind) -> Result<DMatrix<f64>> {
        let nv = self.ops.region.len();
        if nv > DENSE_LIMIT {
            return Err(Error::SizeCap(format!("dense covariance of {} vertices exceeds {}", nv, DENSE_LIMIT)));
        }
        let s = 1.0 / (2.0 * self.beta);
        let mut c = DMatrix::zeros(nv, nv);
        match kind {
            EnsembleKind::Dirichlet => {
                let m = self.ops.interior.len();
                for (j, &vj) in self.ops.interior.iter().enumerate() {
                    let mut e = vec![0.0; m];
                    e[j] = 1.0;
                    let col = self.ops.solve_dirichlet(&e)?;
                    for (i, &vi) in self.ops.interior.iter().enumerate() {
                        c[(vi, vj)] = s * col[i];
                    }
                }
            }
            EnsembleKind::Neumann => {
                for j in 0..nv {
                    let mut e = vec![0.0; nv];
                    e[j] = 1.0;
                    let col = self.ops.solve_neumann(&e)?;
                    for i in 0..nv {
                        c[(i, j)] = s * col[i];
                    }
                }
            }
        }
        Ok(c)
    }
}

/// ν(U, p) for V(x) = βx² on an arbitrary region U.
pub fn nu_exact_region(region: &Region, beta: f64, p: &[f64]) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return invalid(format!("beta must be positive, got {}", beta));
    }
    if p.len() != region.d() {
        return invalid(format!("tilt has {} components, expected {}", p.len(), region.d()));
    }
    let interior = region.interior_indices();
    let mut tilt = NeumaierSum::default();
    let mut full = vec![0.0; region.len()];
    for b in region.bonds() {
        tilt.add(p[b.dir] * p[b.dir]);
        full[b.head] += p[b.dir];
        full[b.tail] -= p[b.dir];
    }
    let (logdet, cross) = if interior.is_empty() {
        (0.0, 0.0)
    } else {
        let f = BandedCholesky::factor(&restricted_laplacian(region, &interior))?;
        let c: Vec<f64> = interior.iter().map(|&v| full[v]).collect();
        let mut x = c.clone();
        f.solve(&mut x);
        (f.logdet(), dot(&c, &x))
    };
    let log_z = -beta * tilt.value() + beta * cross + 0.5 * interior.len() as f64 * (std::f64::consts::PI / beta).ln()
        - 0.5 * logdet;
    Ok(-log_z / region.len() as f64)
}

pub fn nu_exact(d: usize, n: u32, beta: f64, p: &[f64]) -> Result<f64> {
    GaussianExact::new(d, n, beta)?.nu(p)
}

pub fn nustar_exact(d: usize, n: u32, beta: f64, q: &[f64]) -> Result<f64> {
    GaussianExact::new(d, n, beta)?.nustar(q)
}

pub fn grad_nustar_exact(d: usize, n: u32, beta: f64, q: &[f64]) -> Result<Vec<f64>> {
    GaussianExact::new(d, n, beta)?.grad_nustar(q)
}

pub fn slope_variance_exact(d: usize, n: u32, beta: f64) -> Result<Vec<Vec<f64>>> {
    GaussianExact::new(d, n, beta)?.slope_covariance()
}

pub fn l2_trace_exact(d: usize, n: u32, beta: f64) -> Result<f64> {
    GaussianExact::new(d, n, beta)?.l2_trace()
}

/// log ∫_H exp(−λ Σ_{e∈B_{m,n}} ∇h(e)²) dh over the block-constant mean-zero
/// fields of Q_n with blocks of side 3^m; Lebesgue measure from the ℓ² product
/// on vertex values.
pub fn block_log_integral_exact(d: usize, m: u32, n: u32, lambda: f64) -> Result<f64> {
    if m == 0 || m >= n {
        return invalid(format!("block integral needs 1 <= m < n, got m = {}, n = {}", m, n));
    }
    if !(lambda > 0.0) {
        return invalid(format!("lambda must be positive, got {}", lambda));
    }
    let coarse = cube_operators(d, n - m)?;
    let k = (coarse.region.len() - 1) as f64;
    let scale = 3f64.powi(m as i32);
    Ok(0.5 * k * (std::f64::consts::PI * scale / lambda).ln() - 0.5 * coarse.log_pdet_neumann()?)
}

/// Fit of value_n ≈ limit + amplitude · 3^{−rate·n}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Extrapolation {
    pub limit: f64,
    pub rate: f64,
    pub amplitude: f64,
    /// Root mean square residual of the fit.
    pub residual: f64,
    pub levels: Vec<u32>,
    /// Constant input: the rate cannot be identified and is NaN.
    pub unidentifiable: bool,
    /// Successive differences change sign.
    pub non_monotone: bool,
}

const RATE_MIN: f64 = 0.01;
const RATE_MAX: f64 = 8.0;

fn linear_fit(levels: &[f64], values: &[f64], rate: f64) -> (f64, f64, f64) {
    let r: Vec<f64> = levels.iter().map(|n| 3f64.powf(-rate * n)).collect();
    let k = levels.len() as f64;
    let (sr, sv) = (r.iter().sum::<f64>(), values.iter().sum::<f64>());
    let srr = dot(&r, &r);
    let srv = dot(&r, values);
    let det = k * srr - sr * sr;
    let amp = if det.abs() > 0.0 { (k * srv - sr * sv) / det } else { 0.0 };
    let lim = (sv - amp * sr) / k;
    let ss: f64 = r.iter().zip(values).map(|(ri, v)| (v - lim - amp * ri).powi(2)).sum();
    (lim, amp, ss)
}

/// Least-squares geometric extrapolation of a level sequence. The rate is
/// profiled out by a grid scan and golden refinement, then all three
/// parameters are polished by Gauss–Newton.
pub fn extrapolate_limit(seq: &[(u32, f64)]) -> Result<Extrapolation> {
    if seq.len() < 3 {
        return invalid(format!("extrapolation needs at least 3 levels, got {}", seq.len()));
    }
    let levels: Vec<u32> = seq.iter().map(|s| s.0).collect();
    let ns: Vec<f64> = seq.iter().map(|s| s.0 as f64).collect();
    let vs: Vec<f64> = seq.iter().map(|s| s.1).collect();
    if vs.iter().any(|v| !v.is_finite()) {
        return invalid("extrapolation input is not finite");
    }
    let diffs: Vec<f64> = vs.windows(2).map(|w| w[1] - w[0]).collect();
    let non_monotone = diffs.windows(2).any(|w| w[0] * w[1] < 0.0);
    let mean = vs.iter().sum::<f64>() / vs.len() as f64;
    let spread = vs.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if spread <= 1e-13 * mean.abs().max(1.0) {
        return Ok(Extrapolation {
            limit: mean,
            rate: f64::NAN,
            amplitude: 0.0,
            residual: spread,
            levels,
            unidentifiable: true,
            non_monotone,
        });
    }

    let steps = 800;
    let grid: Vec<f64> = (0..=steps).map(|i| RATE_MIN + (RATE_MAX - RATE_MIN) * i as f64 / steps as f64).collect();
    let (best, _) = grid
        .iter()
        .enumerate()
        .map(|(i, &a)| (i, linear_fit(&ns, &vs, a).2))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap();
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(steps)];
    let (mut rate, _) = golden_max(|a| -linear_fit(&ns, &vs, a).2, lo, hi, 1e-12);
    let (mut lim, mut amp, mut ss) = linear_fit(&ns, &vs, rate);

    for _ in 0..50 {
        let k = ns.len();
        let mut j = DMatrix::zeros(k, 3);
        let mut res = DVector::zeros(k);
        for i in 0..k {
            let r = 3f64.powf(-rate * ns[i]);
            j[(i, 0)] = 1.0;
            j[(i, 1)] = r;
            j[(i, 2)] = -amp * ns[i] * 3f64.ln() * r;
            res[i] = vs[i] - lim - amp * r;
        }
        let Ok(step) = j.clone().svd(true, true).solve(&res, 1e-14) else { break };
        let (l2, a2, r2) = (lim + step[0], amp + step[1], rate + step[2]);
        let ss2: f64 = (0..k).map(|i| (vs[i] - l2 - a2 * 3f64.powf(-r2 * ns[i])).powi(2)).sum();
        if !(ss2 <= ss) || !(RATE_MIN..=RATE_MAX).contains(&r2) {
            break;
        }
        let small = step.norm() < 1e-15 * (1.0 + lim.abs() + amp.abs() + rate.abs());
        lim = l2;
        amp = a2;
        rate = r2;
        ss = ss2;
        if small {
            break;
        }
    }

    Ok(Extrapolation {
        limit: lim,
        rate,
        amplitude: amp,
        residual: (ss / ns.len() as f64).sqrt(),
        levels,
        unidentifiable: false,
        non_monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nu_single_site() {
        for beta in [0.5, 1.0, 2.0] {
            let p = [0.4, -1.1];
            let got = nu_exact(2, 1, beta, &p).unwrap();
            let p2 = p[0] * p[0] + p[1] * p[1];
            let want = 2.0 * beta / 3.0 * p2 + (4.0 * beta / std::f64::consts::PI).ln() / 18.0;
            assert!((got - want).abs() < 1e-14, "{} vs {}", got, want);
        }
    }

    #[test]
    fn neumann_trace_matches_dense_covariance() {
        let g = GaussianExact::new(2, 2, 0.7).unwrap();
        let c = g.covariance_dense(EnsembleKind::Neumann).unwrap();
        assert!((g.neumann_trace().unwrap() - c.trace()).abs() < 1e-10);
    }

    #[test]
    fn region_formula_agrees_on_cubes() {
        let q = Region::cube(2, 2).unwrap();
        let p = [0.3, -0.8];
        let a = nu_exact_region(&q, 1.3, &p).unwrap();
        assert!((a - nu_exact(2, 2, 1.3, &p).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn nustar_three_by_three() {
        for beta in [0.5, 1.0, 3.0] {
            let got = nustar_exact(2, 1, beta, &[0.0, 0.0]).unwrap();
            let want = (4.0 * (std::f64::consts::PI / beta).ln() - 0.5 * 1728f64.ln()) / 9.0;
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn l2_trace_single_site() {
        assert!((l2_trace_exact(2, 1, 1.5).unwrap() - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn mean_slope_vanishes_at_zero_tilt() {
        let g = grad_nustar_exact(2, 2, 1.0, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn extrapolation_recovers_synthetic_geometric() {
        let seq: Vec<(u32, f64)> = (1..=5).map(|n| (n, 0.3 - 1.7 * 3f64.powf(-0.9 * n as f64))).collect();
        let e = extrapolate_limit(&seq).unwrap();
        assert!((e.limit - 0.3).abs() < 1e-8);
        assert!((e.rate - 0.9).abs() < 1e-8);
        assert!(!e.unidentifiable && !e.non_monotone);
    }

    #[test]
    fn extrapolation_flags_constant_input() {
        let e = extrapolate_limit(&[(1, 2.0), (2, 2.0), (3, 2.0)]).unwrap();
        assert!(e.unidentifiable && e.rate.is_nan());
        assert_eq!(e.limit, 2.0);
        assert!(extrapolate_limit(&[(1, 1.0), (2, 2.0)]).is_err());
    }
}
