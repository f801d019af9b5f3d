use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CheckReport, Evidence, Provenance, Status};
use crate::error::{invalid, Error, Result};
use crate::lattice::{mean_of, Field, Region, RegionKind, TriadicPartition};
use crate::numeric::gauss_legendre;

/// Factor applied to the calibration maximum to obtain an offline constant.
pub const CALIBRATION_SAFETY: f64 = 1.25;

fn nodes(dim: usize, lo: f64, hi: f64, panels: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let h = (hi - lo) / panels as f64;
    let axis: Vec<(f64, f64)> = (0..panels).flat_map(|k| gauss_legendre(8, lo + k as f64 * h, lo + (k + 1) as f64 * h)).collect();
    let mut pts = vec![Vec::new()];
    let mut wts = vec![1.0];
    for _ in 0..dim {
        let mut p2 = Vec::with_capacity(pts.len() * axis.len());
        let mut w2 = Vec::with_capacity(pts.len() * axis.len());
        for (p, w) in pts.iter().zip(&wts) {
            for &(x, wx) in &axis {
                let mut q = p.clone();
                q.push(x);
                p2.push(q);
                w2.push(w * wx);
            }
        }
        pts = p2;
        wts = w2;
    }
    (pts, wts)
}

/// (−ln ∫e^{−f}, ∫fρ + ∫ρ ln ρ at the Gibbs density ρ) on a tensor rule.
fn gibbs_sides(fv: &[f64], w: &[f64]) -> (f64, f64) {
    let fmin = fv.iter().cloned().fold(f64::INFINITY, f64::min);
    let z: f64 = fv.iter().zip(w).map(|(f, w)| w * (-(f - fmin)).exp()).sum();
    let lhs = fmin - z.ln();
    let mut func = 0.0;
    for (f, w) in fv.iter().zip(w) {
        let rho = (-(f - fmin)).exp() / z;
        if rho > 0.0 {
            func += w * rho * (f + rho.ln());
        }
    }
    (lhs, func)
}

/// Free-energy functional ∫fρ + ∫ρ ln ρ of the density ∝ exp(−f − g).
fn functional_of_tilted(fv: &[f64], gv: &[f64], w: &[f64]) -> f64 {
    let e: Vec<f64> = fv.iter().zip(gv).map(|(f, g)| f + g).collect();
    let emin = e.iter().cloned().fold(f64::INFINITY, f64::min);
    let z: f64 = e.iter().zip(w).map(|(e, w)| w * (-(e - emin)).exp()).sum();
    let mut out = 0.0;
    for ((ei, fi), wi) in e.iter().zip(fv).zip(w) {
        let rho = (-(ei - emin)).exp() / z;
        if rho > 0.0 {
            out += wi * rho * (fi + rho.ln());
        }
    }
    out
}

/// −ln ∫_{[lo,hi]^dim} e^{−f} against the functional ∫fρ + ∫ρ ln ρ at the
/// Gibbs density (equal within 1e−6), and at `competitors` random densities
/// ρ ∝ e^{−f−g} (all strictly larger).
pub fn check_variational_formula_lowdim(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    dim: usize,
    lo: f64,
    hi: f64,
    competitors: usize,
    seed: u64,
) -> Result<CheckReport> {
    if !(1..=2).contains(&dim) {
        return invalid("variational check supports dimension 1 or 2");
    }
    let panels = if dim == 1 { 400 } else { 60 };
    let (pts, w) = nodes(dim, lo, hi, panels);
    let fv: Vec<f64> = pts.par_iter().map(|p| f(p)).collect();
    if fv.iter().any(|v| v.is_nan()) {
        return invalid("f is not defined on the whole box");
    }
    let (lhs, func) = gibbs_sides(&fv, &w);
    let (pts2, w2) = nodes(dim, lo, hi, panels / 2);
    let fv2: Vec<f64> = pts2.par_iter().map(|p| f(p)).collect();
    let (lhs_coarse, _) = gibbs_sides(&fv2, &w2);
    if !lhs.is_finite() || (lhs - lhs_coarse).abs() > 1e-9 * lhs.abs().max(1.0) {
        return Err(Error::NoConvergence { iterations: panels, residual: (lhs - lhs_coarse).abs() });
    }

    let mut r = CheckReport::new(
        "variational_formula",
        json!({"dim": dim, "box": [lo, hi], "competitors": competitors, "seed": seed}),
        Provenance::Oracle,
    );
    r.evidence = Evidence::new(&["competitor", "functional", "excess"]);
    r.evidence.push(vec![0.0, func, func - lhs]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_excess = f64::INFINITY;
    for k in 0..competitors {
        let a: f64 = rng.gen_range(0.3..1.5);
        let b: f64 = rng.gen_range(0.5..3.0);
        let c: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let s: f64 = rng.gen_range(-1.0..1.0);
        let gv: Vec<f64> = pts.iter().map(|p| a * (b * p[0] + c).sin() + s * p[p.len() - 1]).collect();
        let fk = functional_of_tilted(&fv, &gv, &w);
        let excess = fk - lhs;
        min_excess = min_excess.min(excess);
        r.evidence.push(vec![(k + 1) as f64, fk, excess]);
    }
    let gap = (func - lhs).abs();
    r.set("log_integral", -lhs);
    r.set("minimum_gap", gap);
    r.set("min_competitor_excess", min_excess);
    let margin = (1e-6 - gap).min(if competitors > 0 { min_excess } else { f64::INFINITY });
    r.decide(margin);
    if competitors > 0 && min_excess <= 0.0 {
        r.status = Status::Fail;
    }
    Ok(r)
}

/// Test fields on a region: `random` pseudo-random fields of several kinds
/// followed by structured ones. With `zero_boundary` every field vanishes on
/// the region's boundary.
pub fn field_corpus(region: &Arc<Region>, random: usize, seed: u64, zero_boundary: bool) -> Vec<Field> {
    let d = region.d();
    let n = region.len();
    let mut out = Vec::with_capacity(random + 16);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = region.points().flat_map(|p| p.iter().map(|x| x.abs())).max().unwrap_or(1).max(1) as f64;
    for k in 0..random {
        let v: Vec<f64> = match k % 5 {
            0 => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
            1 => {
                let modes: Vec<(Vec<f64>, f64, f64)> = (0..4)
                    .map(|_| {
                        let kv = (0..d).map(|_| rng.gen_range(0.2..3.0) / extent).collect();
                        (kv, rng.gen_range(0.0..std::f64::consts::TAU), rng.sample(StandardNormal))
                    })
                    .collect();
                region
                    .points()
                    .map(|p| {
                        modes
                            .iter()
                            .map(|(kv, ph, a)| a * (p.iter().zip(kv).map(|(x, k)| *x as f64 * k).sum::<f64>() + ph).sin())
                            .sum()
                    })
                    .collect()
            }
            2 => {
                // Random walk along the first axis, independent rows.
                let mut v = vec![0.0; n];
                let mut pts: Vec<(Vec<i64>, usize)> = region.points().map(|p| p.to_vec()).zip(0..).collect();
                pts.sort();
                let mut prev: Option<(Vec<i64>, f64)> = None;
                for (p, i) in pts {
                    let step: f64 = rng.sample(StandardNormal);
                    let base = match &prev {
                        Some((q, val)) if q[..d - 1] == p[..d - 1] => *val,
                        _ => 0.0,
                    };
                    v[i] = base + step;
                    prev = Some((p, v[i]));
                }
                v
            }
            3 => {
                // Block-constant at a random triadic scale plus small noise.
                let side = 3i64.pow(rng.gen_range(0..3));
                let mut table = std::collections::HashMap::new();
                region
                    .points()
                    .map(|p| {
                        let cell: Vec<i64> = p.iter().map(|x| (x + side / 2).div_euclid(side)).collect();
                        let c = *table.entry(cell).or_insert_with(|| rng.sample::<f64, _>(StandardNormal));
                        c + 0.1 * rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect()
            }
            _ => {
                let mut v = vec![0.0; n];
                for _ in 0..3 {
                    v[rng.gen_range(0..n)] += rng.sample::<f64, _>(StandardNormal) * 5.0;
                }
                v
            }
        };
        out.push(v);
    }
    let pts: Vec<Vec<i64>> = region.points().map(|p| p.to_vec()).collect();
    out.push(vec![1.0; n]);
    for i in 0..d {
        out.push(pts.iter().map(|p| p[i] as f64).collect());
    }
    out.push(pts.iter().map(|p| if p.iter().sum::<i64>().rem_euclid(2) == 0 { 1.0 } else { -1.0 }).collect());
    out.push(pts.iter().map(|p| if p[0].rem_euclid(2) == 0 { 1.0 } else { -1.0 }).collect());
    out.push(pts.iter().map(|p| (-(p.iter().map(|x| (x * x) as f64).sum::<f64>()) / (extent * extent / 4.0)).exp()).collect());
    for m in 1..=2 {
        out.push(
            pts.iter()
                .map(|p| p.iter().map(|x| (std::f64::consts::FRAC_PI_2 * m as f64 * (*x as f64 + extent + 1.0) / (extent + 1.0)).sin()).product())
                .collect(),
        );
    }
    out.into_iter()
        .map(|mut v| {
            if zero_boundary {
                region.boundary_indices().into_iter().for_each(|b| v[b] = 0.0);
            }
            Field::new(region.clone(), v).expect("corpus field length")
        })
        .collect()
}

/// Terms of the multiscale Poincaré inequality for u on Q_n:
/// (1/|Q_n|)Σ|u − ū|² (or Σu² with zero boundary), (1/|Q_n|)Σ|∇u|², and
/// 3^n Σ_{k=1}^n 3^k avg_z |⟨∇u⟩_{z+Q_k}|².
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MultiscaleTerms {
    pub lhs: f64,
    pub gradient: f64,
    pub multiscale: f64,
}

pub fn multiscale_poincare_terms(u: &Field, zero_boundary: bool) -> Result<MultiscaleTerms> {
    let region = &u.region;
    let n = match (region.kind(), region.level()) {
        (RegionKind::Cube, Some(n)) if n >= 1 => n,
        _ => return invalid("multiscale Poincaré needs a triadic cube Q_n with n >= 1"),
    };
    let d = region.d();
    let vol = region.len() as f64;
    let m = if zero_boundary { 0.0 } else { mean_of(&u.values) };
    let lhs = u.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vol;
    let grads: Vec<f64> = region.bonds().iter().map(|b| u.values[b.head] - u.values[b.tail]).collect();
    let gradient = grads.iter().map(|g| g * g).sum::<f64>() / vol;
    let mut multiscale = 0.0;
    for k in 1..=n {
        let avg = if k == n {
            let mut s = vec![0.0; d];
            for (b, g) in region.bonds().iter().zip(&grads) {
                s[b.dir] += g;
            }
            s.iter().map(|x| (x / vol).powi(2)).sum::<f64>()
        } else {
            let part = TriadicPartition::on(region.clone(), k)?;
            let cell_vol = part.members[0].len() as f64;
            let mut total = 0.0;
            for bonds in &part.cell_bonds {
                let mut s = vec![0.0; d];
                for &e in bonds {
                    s[region.bonds()[e].dir] += grads[e];
                }
                total += s.iter().map(|x| (x / cell_vol).powi(2)).sum::<f64>();
            }
            total / part.num_cells() as f64
        };
        multiscale += 3f64.powi(k as i32) * avg;
    }
    multiscale *= 3f64.powi(n as i32);
    Ok(MultiscaleTerms { lhs, gradient, multiscale })
}

/// LHS / (gradient + multiscale); 0 when both sides vanish.
pub fn multiscale_ratio(u: &Field, zero_boundary: bool) -> Result<f64> {
    let t = multiscale_poincare_terms(u, zero_boundary)?;
    Ok(ratio(t.lhs, t.gradient + t.multiscale))
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs <= 1e-24 * rhs.max(1.0) {
        0.0
    } else if rhs <= 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    }
}

/// Σ|u − ū|² / (R² Σ|∇u|²), R the side length of the region's bounding box;
/// with `zero_boundary` the mean is not subtracted.
pub fn poincare_ratio(u: &Field, zero_boundary: bool) -> f64 {
    let region = &u.region;
    let m = if zero_boundary { 0.0 } else { mean_of(&u.values) };
    let lhs: f64 = u.values.iter().map(|v| (v - m).powi(2)).sum();
    let grad: f64 = region.bonds().iter().map(|b| (u.values[b.head] - u.values[b.tail]).powi(2)).sum();
    let r = diameter(region) as f64;
    ratio(lhs, r * r * grad)
}

fn diameter(region: &Region) -> i64 {
    (0..region.d())
        .map(|i| {
            let lo = region.points().map(|p| p[i]).min().unwrap_or(0);
            let hi = region.points().map(|p| p[i]).max().unwrap_or(0);
            hi - lo + 1
        })
        .max()
        .unwrap_or(1)
}

/// Sobolev conjugate s⋆ = sd/(s + d).
pub fn sobolev_conjugate(s: f64, d: usize) -> f64 {
    s * d as f64 / (s + d as f64)
}

/// (Σ|f − f̄|^s)^{1/s} / (Σ_e |∇f|^{s⋆})^{1/s⋆}.
pub fn sobolev_ratio(f: &Field, s: f64) -> Result<f64> {
    let d = f.region.d();
    if !(s > d as f64 / (d as f64 - 1.0)) {
        return invalid(format!("Sobolev exponent must exceed d/(d-1), got {}", s));
    }
    let st = sobolev_conjugate(s, d);
    let m = mean_of(&f.values);
    let lhs = f.values.iter().map(|v| (v - m).abs().powf(s)).sum::<f64>().powf(1.0 / s);
    let rhs = f.region.bonds().iter().map(|b| (f.values[b.head] - f.values[b.tail]).abs().powf(st)).sum::<f64>().powf(1.0 / st);
    Ok(ratio(lhs, rhs))
}

/// Ratios of one inequality over a corpus, judged against a fixed constant.
fn corpus_report(id: &str, inputs: serde_json::Value, ratios: &[(String, f64)], constant: f64) -> CheckReport {
    let mut r = CheckReport::new(id, inputs, Provenance::Oracle);
    r.evidence = Evidence::new(&["field", "ratio"]);
    for (i, (_, v)) in ratios.iter().enumerate() {
        r.evidence.push(vec![i as f64, *v]);
    }
    let worst = ratios.iter().map(|x| x.1).fold(0.0, f64::max);
    let violations = ratios.iter().filter(|x| x.1 > constant * (1.0 + 1e-12)).count();
    r.set("C", constant);
    r.set("max_ratio", worst);
    r.set("violations", violations as f64);
    r.set("fields", ratios.len() as f64);
    r.decide(constant - worst);
    if violations > 0 {
        r.status = Status::Fail;
        let labels: Vec<&str> = ratios.iter().filter(|x| x.1 > constant).map(|x| x.0.as_str()).take(5).collect();
        r.note(format!("{} violations, e.g. {:?}", violations, labels));
    }
    r
}

fn labelled(fields: &[Field]) -> Vec<(String, &Field)> {
    fields.iter().enumerate().map(|(i, f)| (format!("{}:{}", f.region.len(), i), f)).collect()
}

/// Multiscale Poincaré over a corpus of fields on triadic cubes, with an
/// offline constant C.
pub fn check_multiscale_poincare(fields: &[Field], zero_boundary: bool, constant: f64) -> Result<CheckReport> {
    let ratios: Vec<(String, f64)> =
        labelled(fields).into_par_iter().map(|(l, f)| Ok((l, multiscale_ratio(f, zero_boundary)?))).collect::<Result<_>>()?;
    Ok(corpus_report(
        if zero_boundary { "multiscale_poincare_h10" } else { "multiscale_poincare" },
        json!({"fields": fields.len(), "zero_boundary": zero_boundary}),
        &ratios,
        constant,
    ))
}

pub fn check_poincare(fields: &[Field], zero_boundary: bool, constant: f64) -> Result<CheckReport> {
    let ratios: Vec<(String, f64)> = labelled(fields).into_par_iter().map(|(l, f)| (l, poincare_ratio(f, zero_boundary))).collect();
    Ok(corpus_report(
        if zero_boundary { "poincare_h10" } else { "poincare" },
        json!({"fields": fields.len(), "zero_boundary": zero_boundary}),
        &ratios,
        constant,
    ))
}

pub fn check_sobolev(fields: &[Field], s: f64, constant: f64) -> Result<CheckReport> {
    let ratios: Vec<(String, f64)> =
        labelled(fields).into_par_iter().map(|(l, f)| Ok((l, sobolev_ratio(f, s)?))).collect::<Result<_>>()?;
    let d = fields.first().map(|f| f.region.d()).unwrap_or(2);
    let mut r = corpus_report("sobolev", json!({"fields": fields.len(), "s": s}), &ratios, constant);
    r.set("s_star", sobolev_conjugate(s, d));
    Ok(r)
}

/// Offline constant: the calibration maximum times CALIBRATION_SAFETY.
pub fn fit_offline_constant(ratios: impl IntoIterator<Item = f64>) -> f64 {
    CALIBRATION_SAFETY * ratios.into_iter().fold(0.0, f64::max)
}

/// Calibration and evaluation corpora for the three lattice inequalities on
/// Q_n (n in `levels`) and on balls centred at the origin of radius
/// 3^n / 3. Constants are fitted on the corpus from `seed` and checked on
/// the corpus from `seed + 1`.
pub fn inequality_suite(d: usize, levels: &[u32], random: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let cubes: Vec<Arc<Region>> = levels.iter().map(|&n| Region::cube(d, n).map(Arc::new)).collect::<Result<_>>()?;
    let balls: Vec<Arc<Region>> = cubes
        .iter()
        .zip(levels)
        .map(|(c, &n)| Region::ball(&vec![0; d], (3f64.powi(n as i32) / 3.0).max(1.0), c).map(Arc::new))
        .collect::<Result<_>>()?;
    let corpus = |regions: &[Arc<Region>], s: u64, zb: bool| -> Vec<Field> {
        regions.iter().enumerate().flat_map(|(i, r)| field_corpus(r, random, s.wrapping_add(i as u64 * 7919), zb)).collect()
    };
    let s_exp = 3.0;
    let mut out = Vec::new();
    for zb in [false, true] {
        let cal = corpus(&cubes, seed, zb);
        let eval = corpus(&cubes, seed + 1, zb);
        let c_ms = fit_offline_constant(cal.par_iter().map(|f| multiscale_ratio(f, zb)).collect::<Result<Vec<_>>>()?);
        out.push(check_multiscale_poincare(&eval, zb, c_ms)?);
        let c_p = fit_offline_constant(cal.par_iter().map(|f| poincare_ratio(f, zb)).collect::<Vec<_>>());
        out.push(check_poincare(&eval, zb, c_p)?);
    }
    let cal = corpus(&balls, seed, false);
    let eval = corpus(&balls, seed + 1, false);
    let c_s = fit_offline_constant(cal.par_iter().map(|f| sobolev_ratio(f, s_exp)).collect::<Result<Vec<_>>>()?);
    out.push(check_sobolev(&eval, s_exp, c_s)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Field;

    #[test]
    fn gaussian_variational_formula() {
        let r = check_variational_formula_lowdim(&|x: &[f64]| x[0] * x[0], 1, -12.0, 12.0, 20, 3).unwrap();
        let want = -(std::f64::consts::PI.sqrt()).ln();
        assert!((-r.constant("log_integral").unwrap() - want).abs() < 1e-10);
        assert!(r.constant("minimum_gap").unwrap() < 1e-6);
        assert!(r.passed(), "{:?}", r.notes);
    }

    #[test]
    fn variational_formula_in_two_dimensions() {
        let f = |x: &[f64]| x[0] * x[0] + 0.5 * x[1] * x[1] + 0.3 * x[0] * x[1] + x[0].cos();
        let r = check_variational_formula_lowdim(&f, 2, -9.0, 9.0, 5, 1).unwrap();
        assert!(r.passed(), "{:?}", r);
    }

    #[test]
    fn constant_field_has_zero_sides() {
        let q = Arc::new(Region::cube(2, 2).unwrap());
        let u = Field::new(q.clone(), vec![3.0; q.len()]).unwrap();
        let t = multiscale_poincare_terms(&u, false).unwrap();
        assert_eq!((t.lhs, t.gradient, t.multiscale), (0.0, 0.0, 0.0));
        assert_eq!(poincare_ratio(&u, false), 0.0);
    }

    #[test]
    fn affine_field_has_slope_p_on_every_subcube() {
        let q = Arc::new(Region::cube(2, 2).unwrap());
        let p = [0.4, -0.2];
        let u = Field::affine(q.clone(), &p);
        let t = multiscale_poincare_terms(&u, false).unwrap();
        // On Q_k the bond average of p·e is p(1 − 3^{−k}).
        let want: f64 = (1..=2)
            .map(|k| 3f64.powi(k) * (1.0 - 3f64.powi(-k)).powi(2) * (p[0] * p[0] + p[1] * p[1]))
            .sum::<f64>()
            * 9.0;
        assert!((t.multiscale - want).abs() < 1e-12);
    }

    #[test]
    fn oscillation_cancels_in_the_multiscale_term() {
        let q = Arc::new(Region::cube(2, 3).unwrap());
        let u = Field::from_fn(q.clone(), |p| if (p[0] + p[1]).rem_euclid(2) == 0 { 1.0 } else { -1.0 });
        let t = multiscale_poincare_terms(&u, false).unwrap();
        let r = 27.0;
        let plain = r * r * t.gradient;
        assert!(t.multiscale < 1e-3 * plain, "{} vs {}", t.multiscale, plain);
    }

    #[test]
    fn sobolev_rejects_small_exponent() {
        let q = Arc::new(Region::cube(2, 1).unwrap());
        assert!(sobolev_ratio(&Field::zeros(q), 1.5).is_err());
        assert!((sobolev_conjugate(3.0, 2) - 1.2).abs() < 1e-15);
    }
}
