use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{finish_uniform, CheckReport, Evidence, Provenance, Status, SIGMA};
use crate::error::{invalid, Error, Result};
use crate::free_energy::{Quantity, SurfaceTensionEstimate};
use crate::gff::{extrapolate_limit, Extrapolation, GaussianExact};
use crate::numeric::{dot, golden_max};

/// Levels extrapolated to the infinite-volume limit.
pub const EXTRAPOLATION_LEVELS: usize = 3;

/// Values of ν or ν* over levels × tilts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurfaceTable {
    pub quantity: Quantity,
    pub d: usize,
    pub levels: Vec<u32>,
    pub tilts: Vec<Vec<f64>>,
    /// values[level][tilt].
    pub values: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

/// Tensor grid {lo, lo + step, ..., hi}^d.
pub fn tilt_grid(d: usize, lo: f64, hi: f64, step: f64) -> Result<Vec<Vec<f64>>> {
    if !(step > 0.0 && hi >= lo) {
        return invalid("tilt grid needs step > 0 and hi >= lo");
    }
    let k = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    let axis: Vec<f64> = (0..k).map(|i| lo + step * i as f64).collect();
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        out = out.into_iter().flat_map(|p: Vec<f64>| axis.iter().map(move |&a| [p.clone(), vec![a]].concat())).collect();
    }
    Ok(out)
}

fn key(p: &[f64]) -> Vec<i64> {
    p.iter().map(|x| (x * 1e9).round() as i64).collect()
}

impl SurfaceTable {
    /// Exact Gaussian table for V(x) = βx².
    pub fn gff(quantity: Quantity, d: usize, levels: &[u32], beta: f64, tilts: &[Vec<f64>]) -> Result<SurfaceTable> {
        let mut values = Vec::with_capacity(levels.len());
        for &n in levels {
            let g = GaussianExact::new(d, n, beta)?;
            let row: Vec<f64> = tilts
                .par_iter()
                .map(|t| match quantity {
                    Quantity::Nu => g.nu(t),
                    Quantity::Nustar => g.nustar(t),
                })
                .collect::<Result<_>>()?;
            values.push(row);
        }
        Ok(SurfaceTable {
            quantity,
            d,
            levels: levels.to_vec(),
            tilts: tilts.to_vec(),
            stderr: vec![vec![0.0; tilts.len()]; levels.len()],
            values,
            provenance: Provenance::Oracle,
        })
    }

    /// Table from estimates of one quantity covering every (level, tilt) pair.
    pub fn from_estimates(estimates: &[SurfaceTensionEstimate]) -> Result<SurfaceTable> {
        let first = estimates.first().ok_or_else(|| Error::Table("no estimates".into()))?;
        let mut levels: Vec<u32> = estimates.iter().map(|e| e.n).collect();
        levels.sort_unstable();
        levels.dedup();
        let mut tilts: Vec<Vec<f64>> = Vec::new();
        for e in estimates {
            if !tilts.iter().any(|t| key(t) == key(&e.tilt)) {
                tilts.push(e.tilt.clone());
            }
        }
        let mut values = vec![vec![f64::NAN; tilts.len()]; levels.len()];
        let mut stderr = vec![vec![f64::NAN; tilts.len()]; levels.len()];
        for e in estimates {
            if e.quantity != first.quantity || e.d != first.d {
                return Err(Error::Table("estimates mix quantities or dimensions".into()));
            }
            let i = levels.iter().position(|&n| n == e.n).unwrap();
            let j = tilts.iter().position(|t| key(t) == key(&e.tilt)).unwrap();
            values[i][j] = e.value;
            stderr[i][j] = e.stderr;
        }
        if values.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::Table("missing (level, tilt) entries".into()));
        }
        let exact = stderr.iter().flatten().all(|s| *s == 0.0);
        Ok(SurfaceTable {
            quantity: first.quantity,
            d: first.d,
            levels,
            tilts,
            values,
            stderr,
            provenance: if exact { Provenance::Oracle } else { Provenance::MonteCarlo },
        })
    }

    pub fn tilt_index(&self, t: &[f64]) -> Option<usize> {
        self.tilts.iter().position(|x| key(x) == key(t))
    }

    fn check_consecutive(&self) -> Result<()> {
        if self.levels.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::Table(format!("levels {:?} are not consecutive", self.levels)));
        }
        Ok(())
    }

    fn is_mc(&self) -> bool {
        self.provenance == Provenance::MonteCarlo
    }

    /// Per-tilt limits over the last levels, with linearized standard errors.
    pub fn extrapolated(&self) -> Result<Vec<(Extrapolation, f64)>> {
        if self.levels.len() < EXTRAPOLATION_LEVELS {
            return Err(Error::Table(format!("extrapolation needs {} levels", EXTRAPOLATION_LEVELS)));
        }
        let start = self.levels.len() - EXTRAPOLATION_LEVELS;
        (0..self.tilts.len())
            .map(|j| {
                let seq: Vec<(u32, f64)> = (start..self.levels.len()).map(|i| (self.levels[i], self.values[i][j])).collect();
                let se: Vec<f64> = (start..self.levels.len()).map(|i| self.stderr[i][j]).collect();
                extrapolate_with_error(&seq, &se)
            })
            .collect()
    }
}

/// Extrapolated limit and its standard error by first-order propagation of
/// the per-level standard errors.
pub fn extrapolate_with_error(seq: &[(u32, f64)], se: &[f64]) -> Result<(Extrapolation, f64)> {
    let base = extrapolate_limit(seq)?;
    if se.iter().all(|s| *s == 0.0) || base.unidentifiable {
        return Ok((base, 0.0));
    }
    let mut var = 0.0;
    for i in 0..seq.len() {
        let h = se[i].max(1e-12);
        let mut s = seq.to_vec();
        s[i].1 += h;
        let up = extrapolate_limit(&s)?.limit;
        s[i].1 -= 2.0 * h;
        let down = extrapolate_limit(&s)?.limit;
        let w = (up - down) / (2.0 * h);
        var += (w * se[i]).powi(2);
    }
    Ok((base, var.sqrt()))
}

fn norm_sq(p: &[f64]) -> f64 {
    dot(p, p)
}

/// Applies the level-uniformity rule to per-level constants.
/// v(Q_{n+1}, t) ≤ v(Q_n, t) + C(1 + |t|²)3^{−n}.
pub fn check_subadditivity(t: &SurfaceTable) -> Result<CheckReport> {
    t.check_consecutive()?;
    if t.levels.len() < 2 {
        return Err(Error::Table("subadditivity needs two levels".into()));
    }
    let mut r = CheckReport::new(
        &format!("subadditivity_{}", t.quantity.as_str()),
        json!({"levels": t.levels, "tilts": t.tilts.len(), "d": t.d}),
        t.provenance,
    );
    let mut cols = vec!["level"];
    let names: Vec<String> = (0..t.d).map(|i| format!("tilt{}", i + 1)).collect();
    cols.extend(names.iter().map(|s| s.as_str()));
    cols.extend(["ratio", "stderr"]);
    r.evidence = Evidence::new(&cols);
    let mut per_level = Vec::new();
    let mut sigma = Vec::new();
    for i in 0..t.levels.len() - 1 {
        let scale = 3f64.powi(t.levels[i] as i32);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for (j, tilt) in t.tilts.iter().enumerate() {
            let w = scale / (1.0 + norm_sq(tilt));
            let ratio = (t.values[i + 1][j] - t.values[i][j]) * w;
            let se = (t.stderr[i + 1][j].powi(2) + t.stderr[i][j].powi(2)).sqrt() * w;
            let mut row = vec![t.levels[i] as f64];
            row.extend(tilt);
            row.extend([ratio, se]);
            r.evidence.push(row);
            if ratio > best.0 {
                best = (ratio, se);
            }
        }
        per_level.push(best.0);
        sigma.push(best.1);
    }
    finish_uniform(&mut r, "C", &per_level, &sigma);
    Ok(r)
}

/// ν(Q_n, p) + ν*(Q_n, q) ≥ p·q − C3^{−n} over all tilt pairs.
pub fn check_one_sided_duality(nu: &SurfaceTable, nustar: &SurfaceTable) -> Result<CheckReport> {
    if nu.quantity != Quantity::Nu || nustar.quantity != Quantity::Nustar {
        return Err(Error::Table("expected a ν table and a ν* table".into()));
    }
    if nu.levels != nustar.levels || nu.d != nustar.d {
        return Err(Error::Table("ν and ν* tables cover different levels".into()));
    }
    let prov = if nu.is_mc() || nustar.is_mc() { Provenance::MonteCarlo } else { Provenance::Oracle };
    let mut r = CheckReport::new(
        "one_sided_duality",
        json!({"levels": nu.levels, "p_tilts": nu.tilts.len(), "q_tilts": nustar.tilts.len()}),
        prov,
    );
    r.evidence = Evidence::new(&["level", "worst_ratio", "stderr"]);
    let mut per_level = Vec::new();
    let mut sigma = Vec::new();
    for (i, &n) in nu.levels.iter().enumerate() {
        let scale = 3f64.powi(n as i32);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for (a, p) in nu.tilts.iter().enumerate() {
            for (b, q) in nustar.tilts.iter().enumerate() {
                let ratio = (dot(p, q) - nu.values[i][a] - nustar.values[i][b]) * scale;
                if ratio > best.0 {
                    let se = (nu.stderr[i][a].powi(2) + nustar.stderr[i][b].powi(2)).sqrt() * scale;
                    best = (ratio, se);
                }
            }
        }
        r.evidence.push(vec![n as f64, best.0, best.1]);
        per_level.push(best.0);
        sigma.push(best.1);
    }
    finish_uniform(&mut r, "C", &per_level, &sigma);
    Ok(r)
}

/// −C + c|t|² ≤ v(Q_n, t) ≤ C(1 + |t|²) with c > 0 fitted once for all levels.
pub fn check_quadratic_bounds(t: &SurfaceTable) -> Result<CheckReport> {
    let zero = t.tilt_index(&vec![0.0; t.d]).ok_or_else(|| Error::Table("quadratic bounds need the zero tilt".into()))?;
    let mut r = CheckReport::new(
        &format!("quadratic_bounds_{}", t.quantity.as_str()),
        json!({"levels": t.levels, "tilts": t.tilts.len()}),
        t.provenance,
    );
    let mut curv = f64::INFINITY;
    for i in 0..t.levels.len() {
        for (j, tilt) in t.tilts.iter().enumerate() {
            let s = norm_sq(tilt);
            if s > 0.0 {
                curv = curv.min((t.values[i][j] - t.values[i][zero]) / s);
            }
        }
    }
    let c = 0.5 * curv;
    r.set("c", c);
    r.evidence = Evidence::new(&["level", "lower_constant", "upper_constant", "stderr"]);
    let mut per_level = Vec::new();
    let mut sigma = Vec::new();
    for (i, &n) in t.levels.iter().enumerate() {
        let mut low = (f64::NEG_INFINITY, 0.0);
        let mut up = (f64::NEG_INFINITY, 0.0);
        for (j, tilt) in t.tilts.iter().enumerate() {
            let s = norm_sq(tilt);
            let l = c * s - t.values[i][j];
            if l > low.0 {
                low = (l, t.stderr[i][j]);
            }
            let u = t.values[i][j] / (1.0 + s);
            if u > up.0 {
                up = (u, t.stderr[i][j] / (1.0 + s));
            }
        }
        r.evidence.push(vec![n as f64, low.0, up.0, low.1.max(up.1)]);
        let best = if low.0 >= up.0 { low } else { up };
        per_level.push(best.0);
        sigma.push(best.1);
    }
    finish_uniform(&mut r, "C", &per_level, &sigma);
    if !(c > 0.0) {
        r.status = Status::Fail;
        r.note("no positive curvature constant c");
    }
    Ok(r)
}

/// (1/C)|p₀ − p₁|² ≤ ½v(p₀) + ½v(p₁) − v((p₀+p₁)/2) ≤ C|p₀ − p₁|² over all
/// grid pairs whose midpoint is on the grid.
pub fn check_uniform_convexity(t: &SurfaceTable) -> Result<CheckReport> {
    let mut r = CheckReport::new(
        &format!("uniform_convexity_{}", t.quantity.as_str()),
        json!({"levels": t.levels, "tilts": t.tilts.len()}),
        t.provenance,
    );
    let index: HashMap<Vec<i64>, usize> = t.tilts.iter().enumerate().map(|(j, p)| (key(p), j)).collect();
    let mut pairs = Vec::new();
    for a in 0..t.tilts.len() {
        for b in a + 1..t.tilts.len() {
            let mid: Vec<f64> = t.tilts[a].iter().zip(&t.tilts[b]).map(|(x, y)| 0.5 * (x + y)).collect();
            if let Some(&m) = index.get(&key(&mid)) {
                pairs.push((a, b, m));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Table("no tilt pairs with a grid midpoint".into()));
    }
    r.evidence = Evidence::new(&["level", "min_ratio", "max_ratio", "constant"]);
    let mut per_level = Vec::new();
    let mut sigma = Vec::new();
    let mut unresolved = false;
    for (i, &n) in t.levels.iter().enumerate() {
        let (mut lo, mut hi, mut worst_se) = (f64::INFINITY, 0.0f64, 0.0f64);
        for &(a, b, m) in &pairs {
            let v = &t.values[i];
            let s = &t.stderr[i];
            let mid = 0.5 * v[a] + 0.5 * v[b] - v[m];
            let se = (0.25 * s[a] * s[a] + 0.25 * s[b] * s[b] + s[m] * s[m]).sqrt();
            let dist = t.tilts[a].iter().zip(&t.tilts[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            if mid - SIGMA * se <= 0.0 && se > 0.0 {
                unresolved = true;
            }
            lo = lo.min(mid / dist);
            hi = hi.max(mid / dist);
            worst_se = worst_se.max(se / dist);
        }
        let cst = if lo > 0.0 { hi.max(1.0 / lo) } else { f64::INFINITY };
        r.evidence.push(vec![n as f64, lo, hi, cst]);
        per_level.push(cst);
        sigma.push(if lo > 0.0 { worst_se / (lo * lo) } else { 0.0 });
    }
    finish_uniform(&mut r, "C", &per_level, &sigma);
    if per_level.iter().any(|c| !c.is_finite()) {
        r.status = Status::Fail;
        r.note("midpoint defect not positive");
    } else if unresolved && r.status == Status::Pass {
        r.status = Status::Inconclusive;
        r.note("some midpoint defects are within 3 standard errors of zero");
    }
    Ok(r)
}

/// Result of sup_p (p·q − f(p)) for f sampled on a tensor grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Conjugate {
    pub value: f64,
    pub argmax: Vec<f64>,
    /// The maximizer sits on the edge of the grid.
    pub on_boundary: bool,
}

struct TensorGrid {
    axes: Vec<Vec<f64>>,
    index: HashMap<Vec<i64>, usize>,
}

impl TensorGrid {
    fn new(points: &[Vec<f64>]) -> Result<TensorGrid> {
        let d = points.first().map(|p| p.len()).ok_or_else(|| Error::Table("empty grid".into()))?;
        let mut axes = Vec::with_capacity(d);
        for i in 0..d {
            let mut a: Vec<f64> = points.iter().map(|p| p[i]).collect();
            a.sort_by(f64::total_cmp);
            a.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
            if a.len() < 3 {
                return Err(Error::Table("grid needs at least 3 nodes per axis".into()));
            }
            axes.push(a);
        }
        if axes.iter().map(|a| a.len()).product::<usize>() != points.len() {
            return Err(Error::Table("tilts do not form a tensor grid".into()));
        }
        let index = points.iter().enumerate().map(|(j, p)| (key(p), j)).collect();
        Ok(TensorGrid { axes, index })
    }

    /// Tensor-product quadratic Lagrange interpolation on the nearest 3^d stencil.
    fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let d = self.axes.len();
        let mut stencil = Vec::with_capacity(d);
        for (i, a) in self.axes.iter().enumerate() {
            let k = a.partition_point(|v| *v < x[i]).clamp(1, a.len() - 2);
            let c = if k + 1 < a.len() && (a[k] - x[i]).abs() > (a[k - 1] - x[i]).abs() { k - 1 } else { k };
            let c = c.clamp(1, a.len() - 2);
            let nodes = [a[c - 1], a[c], a[c + 1]];
            let mut w = [0.0; 3];
            for j in 0..3 {
                let mut l = 1.0;
                for m in 0..3 {
                    if m != j {
                        l *= (x[i] - nodes[m]) / (nodes[j] - nodes[m]);
                    }
                }
                w[j] = l;
            }
            stencil.push((nodes, w));
        }
        let mut total = 0.0;
        for combo in 0..3usize.pow(d as u32) {
            let mut rem = combo;
            let mut p = vec![0.0; d];
            let mut w = 1.0;
            for i in 0..d {
                let j = rem % 3;
                rem /= 3;
                p[i] = stencil[i].0[j];
                w *= stencil[i].1[j];
            }
            total += w * values[self.index[&key(&p)]];
        }
        total
    }
}

/// sup_p (p·q − f(p)) over the box spanned by the grid: best grid node, then
/// coordinate ascent with golden-section search on the interpolant.
pub fn legendre_transform(tilts: &[Vec<f64>], values: &[f64], q: &[f64]) -> Result<Conjugate> {
    let grid = TensorGrid::new(tilts)?;
    let obj = |p: &[f64]| dot(p, q) - grid.interpolate(values, p);
    let (j0, _) = tilts
        .iter()
        .enumerate()
        .map(|(j, p)| (j, dot(p, q) - values[j]))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let mut x = tilts[j0].clone();
    let mut best = obj(&x);
    for _ in 0..200 {
        let prev = best;
        for i in 0..x.len() {
            let a = &grid.axes[i];
            let h = a[1] - a[0];
            let lo = (x[i] - h).max(a[0]);
            let hi = (x[i] + h).min(a[a.len() - 1]);
            let (xi, v) = golden_max(
                |t| {
                    let mut y = x.clone();
                    y[i] = t;
                    obj(&y)
                },
                lo,
                hi,
                1e-12,
            );
            if v > best {
                best = v;
                x[i] = xi;
            }
        }
        if best - prev <= 1e-15 * best.abs().max(1.0) {
            break;
        }
    }
    let on_boundary = x.iter().zip(&grid.axes).any(|(xi, a)| (xi - a[0]).abs() < 1e-6 || (xi - a[a.len() - 1]).abs() < 1e-6);
    Ok(Conjugate { value: best, argmax: x, on_boundary })
}

/// sup_p (−ν̄(p) + p·q) = ν̄*(q) for the extrapolated limits, at each q, and
/// the finite-level one-sided gaps sup_p(p·q − ν(Q_n,p)) − ν*(Q_n,q).
pub fn check_duality(nu: &SurfaceTable, nustar: &SurfaceTable, qs: &[Vec<f64>], tol: f64) -> Result<CheckReport> {
    if nu.quantity != Quantity::Nu || nustar.quantity != Quantity::Nustar {
        return Err(Error::Table("expected a ν table and a ν* table".into()));
    }
    let prov = if nu.is_mc() || nustar.is_mc() { Provenance::MonteCarlo } else { Provenance::Oracle };
    let mut r = CheckReport::new("duality", json!({"levels": nu.levels, "q": qs, "tol": tol}), prov);
    let nu_bar = nu.extrapolated()?;
    let ns_bar = nustar.extrapolated()?;
    let limits: Vec<f64> = nu_bar.iter().map(|e| e.0.limit).collect();
    let mut cols = vec!["q_index".to_string(), "level".to_string()];
    cols.extend(["conjugate", "nustar", "gap", "stderr"].map(String::from));
    r.evidence = Evidence { columns: cols, rows: Vec::new() };

    let mut margin = f64::INFINITY;
    let mut sigma: f64 = 0.0;
    let mut envelope: f64 = 0.0;
    for (k, q) in qs.iter().enumerate() {
        let jq = nustar.tilt_index(q).ok_or_else(|| Error::Table(format!("q = {:?} is not in the ν* table", q)))?;
        let conj = legendre_transform(&nu.tilts, &limits, q)?;
        if conj.on_boundary {
            r.note(format!("maximizer for q = {:?} on the grid boundary; grid too coarse", q));
        }
        let (ext, se_star) = &ns_bar[jq];
        // Standard error of the conjugate from the ν̄ value at the nearest node.
        let jp = nu.tilts.iter().enumerate().min_by(|a, b| {
            let da: f64 = a.1.iter().zip(&conj.argmax).map(|(x, y)| (x - y).powi(2)).sum();
            let db: f64 = b.1.iter().zip(&conj.argmax).map(|(x, y)| (x - y).powi(2)).sum();
            da.total_cmp(&db)
        });
        let se_conj = jp.map(|(j, _)| nu_bar[j].1).unwrap_or(0.0);
        let gap = conj.value - ext.limit;
        let se = (se_star * se_star + se_conj * se_conj).sqrt();
        r.evidence.push(vec![k as f64, f64::INFINITY, conj.value, ext.limit, gap, se]);
        margin = margin.min(tol - gap.abs());
        sigma = sigma.max(se);
        if conj.on_boundary {
            margin = margin.min(-1.0);
        }

        for (i, &n) in nu.levels.iter().enumerate() {
            if nustar.levels.get(i) != Some(&n) {
                continue;
            }
            let c = legendre_transform(&nu.tilts, &nu.values[i], q)?;
            let g = c.value - nustar.values[i][jq];
            envelope = envelope.max(g * 3f64.powi(n as i32));
            r.evidence.push(vec![k as f64, n as f64, c.value, nustar.values[i][jq], g, nustar.stderr[i][jq]]);
        }
    }
    r.set("gap_envelope_C", envelope.max(0.0));
    r.set("max_abs_limit_gap", tol - margin);
    if prov == Provenance::Oracle {
        r.decide(margin);
    } else {
        r.decide_mc(margin, sigma);
    }
    Ok(r)
}

/// Rate α of |v(Q_n) − v̄| ≈ A 3^{−αn} at one tilt, from the geometric
/// extrapolation of the last levels; pass if α lies in `window`.
pub fn check_rate(t: &SurfaceTable, tilt: &[f64], window: (f64, f64)) -> Result<CheckReport> {
    if t.levels.len() < 4 {
        return Err(Error::Table("rate check needs at least 4 levels".into()));
    }
    let j = t.tilt_index(tilt).ok_or_else(|| Error::Table(format!("tilt {:?} is not in the table", tilt)))?;
    let mut r = CheckReport::new(
        &format!("rate_{}", t.quantity.as_str()),
        json!({"levels": t.levels, "tilt": tilt, "window": [window.0, window.1]}),
        t.provenance,
    );
    let start = t.levels.len() - EXTRAPOLATION_LEVELS;
    let seq: Vec<(u32, f64)> = (start..t.levels.len()).map(|i| (t.levels[i], t.values[i][j])).collect();
    let se: Vec<f64> = (start..t.levels.len()).map(|i| t.stderr[i][j]).collect();
    let (ext, se_lim) = extrapolate_with_error(&seq, &se)?;
    r.evidence = Evidence::new(&["level", "value", "stderr", "distance_to_limit"]);
    for (i, &n) in t.levels.iter().enumerate() {
        r.evidence.push(vec![n as f64, t.values[i][j], t.stderr[i][j], (t.values[i][j] - ext.limit).abs()]);
    }
    r.set("limit", ext.limit);
    r.set("limit_stderr", se_lim);
    r.set("alpha", ext.rate);
    r.set("C", ext.amplitude.abs());
    r.set("residual", ext.residual);
    if ext.non_monotone {
        r.note("level sequence is not monotone");
    }
    if ext.unidentifiable {
        r.note("constant input: rate unidentifiable");
        r.status = Status::Inconclusive;
        r.margin = f64::NAN;
        return Ok(r);
    }
    let margin = (ext.rate - window.0).min(window.1 - ext.rate);
    r.decide(margin);
    if t.is_mc() && r.status == Status::Pass && se_lim > 0.0 {
        let early = (0..start).any(|i| (t.values[i][j] - ext.limit).abs() < SIGMA * (t.stderr[i][j].powi(2) + se_lim * se_lim).sqrt());
        if early {
            r.status = Status::Inconclusive;
            r.note("distances to the limit are within noise");
        }
    }
    Ok(r)
}

/// Default tolerance of the duality identity for exact tables.
pub const DUALITY_TOL: f64 = 1e-3;

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(quantity: Quantity, levels: &[u32], tilts: &[Vec<f64>], f: impl Fn(u32, &[f64]) -> f64) -> SurfaceTable {
        SurfaceTable {
            quantity,
            d: 2,
            levels: levels.to_vec(),
            tilts: tilts.to_vec(),
            values: levels.iter().map(|&n| tilts.iter().map(|t| f(n, t)).collect()).collect(),
            stderr: vec![vec![0.0; tilts.len()]; levels.len()],
            provenance: Provenance::Oracle,
        }
    }

    #[test]
    fn grid_shape() {
        let g = tilt_grid(2, -2.0, 2.0, 0.5).unwrap();
        assert_eq!(g.len(), 81);
        assert_eq!(g[0], vec![-2.0, -2.0]);
        assert_eq!(g[80], vec![2.0, 2.0]);
    }

    #[test]
    fn conjugate_of_quadratic() {
        let (beta, c) = (1.3, 0.25);
        let tilts = tilt_grid(2, -2.0, 2.0, 0.5).unwrap();
        let vals: Vec<f64> = tilts.iter().map(|p| beta * norm_sq(p) + c).collect();
        for q in [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [-0.7, 0.4]] {
            let conj = legendre_transform(&tilts, &vals, &q).unwrap();
            let want = norm_sq(&q) / (4.0 * beta) - c;
            assert!((conj.value - want).abs() < 1e-6, "{} vs {}", conj.value, want);
            assert!(!conj.on_boundary);
        }
        let even = legendre_transform(&tilts, &vals, &[0.0, 0.0]).unwrap();
        assert!(even.argmax.iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn boundary_maximizer_is_flagged() {
        let tilts = tilt_grid(2, -1.0, 1.0, 0.5).unwrap();
        let vals: Vec<f64> = tilts.iter().map(|p| norm_sq(p)).collect();
        assert!(legendre_transform(&tilts, &vals, &[8.0, 0.0]).unwrap().on_boundary);
    }

    #[test]
    fn synthetic_rate_recovered() {
        let tilts = vec![vec![0.0, 0.0]];
        let t = synthetic(Quantity::Nu, &[1, 2, 3, 4, 5], &tilts, |n, _| 0.5 + 2.0 * 3f64.powf(-0.9 * n as f64));
        let r = check_rate(&t, &[0.0, 0.0], (0.8, 1.2)).unwrap();
        assert!((r.constant("alpha").unwrap() - 0.9).abs() < 1e-6);
        assert!(r.passed());
        let flat = synthetic(Quantity::Nu, &[1, 2, 3, 4], &tilts, |_, _| 0.5);
        let r = check_rate(&flat, &[0.0, 0.0], (0.8, 1.2)).unwrap();
        assert_eq!(r.status, Status::Inconclusive);
    }

    #[test]
    fn equal_tilts_have_zero_midpoint_defect() {
        let tilts = tilt_grid(2, -1.0, 1.0, 0.5).unwrap();
        let t = synthetic(Quantity::Nu, &[1, 2], &tilts, |n, p| (1.0 - 3f64.powi(-(n as i32))) * norm_sq(p));
        let v = &t.values[0];
        let j = t.tilt_index(&[0.5, 0.5]).unwrap();
        assert_eq!(0.5 * v[j] + 0.5 * v[j] - v[j], 0.0);
        assert!(check_uniform_convexity(&t).unwrap().passed());
    }

    #[test]
    fn growing_subadditivity_defect_fails() {
        let tilts = tilt_grid(2, -1.0, 1.0, 0.5).unwrap();
        // Increments 3^{−n/2} are too slow for the 3^{−n} scaling.
        let t = synthetic(Quantity::Nu, &[1, 2, 3, 4], &tilts, |n, _| -(3f64.powf(-0.5 * n as f64)));
        assert!(!check_subadditivity(&t).unwrap().passed());
        let ok = synthetic(Quantity::Nu, &[1, 2, 3, 4], &tilts, |n, _| 3f64.powf(-(n as f64)));
        assert!(check_subadditivity(&ok).unwrap().passed());
    }
}
