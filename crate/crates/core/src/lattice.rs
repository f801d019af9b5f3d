//! Finite regions of Z^d and the discrete calculus on them.
//!
//! Vertices of a region are numbered in row-major order of their bounding box
//! (first coordinate slowest). Bonds are stored once per nearest-neighbour pair,
//! oriented in the positive coordinate direction.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::NeumaierSum;

const NONE: usize = usize::MAX;

/// Side length 3^n of a triadic cube.
pub fn side(n: u32) -> usize {
    3usize.pow(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Cube,
    CubePlus,
    Ball,
    Difference,
    Custom,
}

impl RegionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionKind::Cube => "cube",
            RegionKind::CubePlus => "cube_plus",
            RegionKind::Ball => "ball",
            RegionKind::Difference => "difference",
            RegionKind::Custom => "custom",
        }
    }
}

/// A triadic cube `origin + Q_n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubeSpec {
    pub d: usize,
    pub n: u32,
    pub origin: Vec<i64>,
}

impl CubeSpec {
    pub fn centered(d: usize, n: u32) -> Self {
        CubeSpec { d, n, origin: vec![0; d] }
    }

    pub fn side(&self) -> usize {
        side(self.n)
    }

    pub fn volume(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    pub fn region(&self) -> Result<Region> {
        Region::cube_at(self.d, self.n, &self.origin)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bond {
    pub tail: usize,
    pub head: usize,
    pub dir: usize,
}

#[derive(Debug, Clone)]
pub struct Region {
    d: usize,
    kind: RegionKind,
    level: Option<u32>,
    lo: Vec<i64>,
    shape: Vec<usize>,
    coords: Vec<i64>,
    slot: Vec<usize>,
    bonds: Vec<Bond>,
    on_boundary: Vec<bool>,
}

impl PartialEq for Region {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.coords == other.coords
    }
}

impl Region {
    /// Builds a region from an arbitrary set of lattice points.
    pub fn from_points(d: usize, points: &[Vec<i64>], kind: RegionKind) -> Result<Region> {
        if d == 0 {
            return invalid("dimension must be positive");
        }
        if points.is_empty() {
            return invalid("region must be nonempty");
        }
        let mut lo = vec![i64::MAX; d];
        let mut hi = vec![i64::MIN; d];
        for p in points {
            if p.len() != d {
                return invalid(format!("point {:?} is not {}-dimensional", p, d));
            }
            for i in 0..d {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let shape: Vec<usize> = (0..d).map(|i| (hi[i] - lo[i] + 1) as usize).collect();
        let total: usize = shape.iter().product();
        let mut present = vec![false; total];
        for p in points {
            present[box_index(&lo, &shape, p)] = true;
        }
        let mut slot = vec![NONE; total];
        let mut coords = Vec::with_capacity(points.len() * d);
        let mut count = 0;
        let mut p = vec![0i64; d];
        for (b, &here) in present.iter().enumerate() {
            if here {
                box_point(&lo, &shape, b, &mut p);
                coords.extend_from_slice(&p);
                slot[b] = count;
                count += 1;
            }
        }
        let mut region = Region {
            d,
            kind,
            level: None,
            lo,
            shape,
            coords,
            slot,
            bonds: Vec::new(),
            on_boundary: Vec::new(),
        };
        region.build_adjacency();
        Ok(region)
    }

    fn build_adjacency(&mut self) {
        let d = self.d;
        let n = self.len();
        let mut bonds = Vec::with_capacity(n * d);
        let mut on_boundary = vec![false; n];
        let mut q = vec![0i64; d];
        for v in 0..n {
            q.copy_from_slice(self.point(v));
            for i in 0..d {
                q[i] += 1;
                match self.index_of(&q) {
                    Some(w) => bonds.push(Bond { tail: v, head: w, dir: i }),
                    None => on_boundary[v] = true,
                }
                q[i] -= 2;
                if self.index_of(&q).is_none() {
                    on_boundary[v] = true;
                }
                q[i] += 1;
            }
        }
        self.bonds = bonds;
        self.on_boundary = on_boundary;
    }

    /// The triadic cube Q_n = (-3^n/2, 3^n/2)^d ∩ Z^d.
    pub fn cube(d: usize, n: u32) -> Result<Region> {
        Region::cube_at(d, n, &vec![0; d])
    }

    /// The triadic cube `origin + Q_n`.
    pub fn cube_at(d: usize, n: u32, origin: &[i64]) -> Result<Region> {
        if d < 2 {
            return invalid(format!("dimension must be at least 2, got {}", d));
        }
        if origin.len() != d {
            return invalid("origin has the wrong dimension");
        }
        let half = ((side(n) - 1) / 2) as i64;
        let lo: Vec<i64> = origin.iter().map(|o| o - half).collect();
        let mut r = Region::box_region(&lo, &vec![side(n); d], RegionKind::Cube)?;
        r.level = Some(n);
        Ok(r)
    }

    /// Q_n⁺, the cube of side 3^n + 2 whose interior is Q_n.
    pub fn cube_plus(d: usize, n: u32) -> Result<Region> {
        if d < 2 {
            return invalid(format!("dimension must be at least 2, got {}", d));
        }
        let half = ((side(n) + 1) / 2) as i64;
        let mut r = Region::box_region(&vec![-half; d], &vec![side(n) + 2; d], RegionKind::CubePlus)?;
        r.level = Some(n);
        Ok(r)
    }

    fn box_region(lo: &[i64], shape: &[usize], kind: RegionKind) -> Result<Region> {
        let d = lo.len();
        let total: usize = shape.iter().product();
        let mut coords = Vec::with_capacity(total * d);
        let mut p = vec![0i64; d];
        for b in 0..total {
            box_point(lo, shape, b, &mut p);
            coords.extend_from_slice(&p);
        }
        let mut region = Region {
            d,
            kind,
            level: None,
            lo: lo.to_vec(),
            shape: shape.to_vec(),
            coords,
            slot: (0..total).collect(),
            bonds: Vec::new(),
            on_boundary: Vec::new(),
        };
        region.build_adjacency();
        Ok(region)
    }

    /// Euclidean ball {y ∈ ambient : |y − x| ≤ r}.
    pub fn ball(x: &[i64], r: f64, ambient: &Region) -> Result<Region> {
        if !(r >= 1.0) {
            return invalid(format!("ball radius must be at least 1, got {}", r));
        }
        if ambient.index_of(x).is_none() {
            return invalid(format!("center {:?} is not in the ambient region", x));
        }
        let r2 = r * r * (1.0 + 1e-12);
        let pts: Vec<Vec<i64>> = (0..ambient.len())
            .map(|v| ambient.point(v))
            .filter(|p| {
                let s: i64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (s as f64) <= r2
            })
            .map(|p| p.to_vec())
            .collect();
        Region::from_points(ambient.d, &pts, RegionKind::Ball)
    }

    /// Set difference a \ b.
    pub fn difference(a: &Region, b: &Region) -> Result<Region> {
        if a.d != b.d {
            return Err(Error::RegionMismatch("dimensions differ".into()));
        }
        let pts: Vec<Vec<i64>> = (0..a.len())
            .map(|v| a.point(v))
            .filter(|p| b.index_of(p).is_none())
            .map(|p| p.to_vec())
            .collect();
        Region::from_points(a.d, &pts, RegionKind::Difference)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }

    /// Triadic level for cubes and augmented cubes.
    pub fn level(&self) -> Option<u32> {
        self.level
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, v: usize) -> &[i64] {
        &self.coords[v * self.d..(v + 1) * self.d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[i64]> {
        self.coords.chunks_exact(self.d)
    }

    pub fn index_of(&self, p: &[i64]) -> Option<usize> {
        let mut b = 0usize;
        for i in 0..self.d {
            let off = p[i] - self.lo[i];
            if off < 0 || off as usize >= self.shape[i] {
                return None;
            }
            b = b * self.shape[i] + off as usize;
        }
        match self.slot[b] {
            NONE => None,
            v => Some(v),
        }
    }

    pub fn contains(&self, p: &[i64]) -> bool {
        self.index_of(p).is_some()
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    /// Number of bonds in each coordinate direction.
    pub fn bonds_per_direction(&self) -> Vec<usize> {
        let mut c = vec![0; self.d];
        for b in &self.bonds {
            c[b.dir] += 1;
        }
        c
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.on_boundary[v]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.on_boundary
    }

    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.on_boundary[v]).collect()
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| !self.on_boundary[v]).collect()
    }

    /// ∂U: vertices with a nearest neighbour outside U.
    pub fn boundary(&self) -> Result<Region> {
        let pts: Vec<Vec<i64>> = self.boundary_indices().iter().map(|&v| self.point(v).to_vec()).collect();
        Region::from_points(self.d, &pts, RegionKind::Custom)
    }

    /// U \ ∂U. Errors when the interior is empty.
    pub fn interior(&self) -> Result<Region> {
        let pts: Vec<Vec<i64>> = self.interior_indices().iter().map(|&v| self.point(v).to_vec()).collect();
        if pts.is_empty() {
            return invalid("region has empty interior");
        }
        Region::from_points(self.d, &pts, RegionKind::Custom)
    }

    /// In-region nearest neighbours of v.
    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut q = self.point(v).to_vec();
        let mut out = Vec::with_capacity(2 * self.d);
        for i in 0..self.d {
            for s in [-1i64, 1] {
                q[i] += s;
                if let Some(w) = self.index_of(&q) {
                    out.push(w);
                }
                q[i] -= s;
            }
        }
        out
    }

    /// Maps every vertex of `sub` to its index in `self`.
    pub fn embed(&self, sub: &Region) -> Result<Vec<usize>> {
        if sub.d != self.d {
            return Err(Error::RegionMismatch("dimensions differ".into()));
        }
        sub.points()
            .map(|p| {
                self.index_of(p)
                    .ok_or_else(|| Error::RegionMismatch(format!("{:?} lies outside the ambient region", p)))
            })
            .collect()
    }

    /// Indices of the bonds of `self` with both endpoints in `sub`.
    pub fn bonds_within(&self, sub: &Region) -> Vec<usize> {
        self.bonds
            .iter()
            .enumerate()
            .filter(|(_, b)| sub.contains(self.point(b.tail)) && sub.contains(self.point(b.head)))
            .map(|(k, _)| k)
            .collect()
    }

    /// Bounding-box width of the vertex numbering: the largest index gap of a bond.
    pub fn bandwidth(&self) -> usize {
        self.bonds.iter().map(|b| b.head.abs_diff(b.tail)).max().unwrap_or(0)
    }
}

fn box_index(lo: &[i64], shape: &[usize], p: &[i64]) -> usize {
    let mut b = 0usize;
    for i in 0..lo.len() {
        b = b * shape[i] + (p[i] - lo[i]) as usize;
    }
    b
}

fn box_point(lo: &[i64], shape: &[usize], mut b: usize, out: &mut [i64]) {
    for i in (0..lo.len()).rev() {
        out[i] = lo[i] + (b % shape[i]) as i64;
        b /= shape[i];
    }
}

/// A real value per vertex of a region.
#[derive(Clone, Debug)]
pub struct Field {
    pub region: Arc<Region>,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(region: Arc<Region>, values: Vec<f64>) -> Result<Field> {
        if values.len() != region.len() {
            return invalid(format!("field has {} values for {} vertices", values.len(), region.len()));
        }
        Ok(Field { region, values })
    }

    pub fn zeros(region: Arc<Region>) -> Field {
        let n = region.len();
        Field { region, values: vec![0.0; n] }
    }

    pub fn from_fn(region: Arc<Region>, f: impl Fn(&[i64]) -> f64) -> Field {
        let values = region.points().map(|p| f(p)).collect();
        Field { region, values }
    }

    /// The affine field l_p(x) = p·x.
    pub fn affine(region: Arc<Region>, p: &[f64]) -> Field {
        Field::from_fn(region, |x| x.iter().zip(p).map(|(&xi, pi)| xi as f64 * pi).sum())
    }

    pub fn is_zero_boundary(&self) -> bool {
        self.region.boundary_indices().iter().all(|&v| self.values[v] == 0.0)
    }

    /// Mean zero within 1e-12 relative to the largest magnitude.
    pub fn is_mean_zero(&self) -> bool {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        (mean_of(&self.values) / scale).abs() <= 1e-12
    }

    pub fn project_mean_zero(&mut self) {
        project_mean_zero(&mut self.values);
    }
}

/// A real value per bond in canonical orientation; the reverse orientation
/// carries the negated value, so antisymmetry holds by construction.
#[derive(Clone, Debug)]
pub struct EdgeField {
    pub region: Arc<Region>,
    pub values: Vec<f64>,
}

impl EdgeField {
    pub fn new(region: Arc<Region>, values: Vec<f64>) -> Result<EdgeField> {
        if values.len() != region.bonds().len() {
            return invalid("edge field length differs from bond count");
        }
        Ok(EdgeField { region, values })
    }

    pub fn zeros(region: Arc<Region>) -> EdgeField {
        let n = region.bonds().len();
        EdgeField { region, values: vec![0.0; n] }
    }

    /// The constant field p(e) = p·(y − x) for e = (x → y).
    pub fn constant(region: Arc<Region>, p: &[f64]) -> EdgeField {
        let values = region.bonds().iter().map(|b| p[b.dir]).collect();
        EdgeField { region, values }
    }

    /// G(x → y) for nearest neighbours x, y of the region.
    pub fn value(&self, x: usize, y: usize) -> Option<f64> {
        let px = self.region.point(x);
        let py = self.region.point(y);
        let mut dir = None;
        let mut sign = 0.0;
        for i in 0..px.len() {
            match py[i] - px[i] {
                0 => {}
                1 if dir.is_none() => {
                    dir = Some(i);
                    sign = 1.0;
                }
                -1 if dir.is_none() => {
                    dir = Some(i);
                    sign = -1.0;
                }
                _ => return None,
            }
        }
        let dir = dir?;
        let (tail, head) = if sign > 0.0 { (x, y) } else { (y, x) };
        self.region
            .bonds()
            .iter()
            .position(|b| b.tail == tail && b.head == head && b.dir == dir)
            .map(|k| sign * self.values[k])
    }
}

pub fn gradient(f: &Field) -> EdgeField {
    let mut values = vec![0.0; f.region.bonds().len()];
    gradient_into(&f.region, &f.values, &mut values);
    EdgeField { region: f.region.clone(), values }
}

pub fn gradient_into(region: &Region, f: &[f64], out: &mut [f64]) {
    for (o, b) in out.iter_mut().zip(region.bonds()) {
        *o = f[b.head] - f[b.tail];
    }
}

/// div G(x) = Σ_{y∼x, y∈U} G(x → y).
pub fn divergence(g: &EdgeField) -> Field {
    let mut values = vec![0.0; g.region.len()];
    divergence_into(&g.region, &g.values, &mut values);
    Field { region: g.region.clone(), values }
}

pub fn divergence_into(region: &Region, g: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (gv, b) in g.iter().zip(region.bonds()) {
        out[b.tail] += gv;
        out[b.head] -= gv;
    }
}

/// Δf(x) = Σ_{y∼x, y∈U} (f(y) − f(x)), equal to div ∇f.
pub fn laplacian(f: &Field) -> Field {
    divergence(&gradient(f))
}

pub fn check_same_region(a: &Region, b: &Region) -> Result<()> {
    if a != b {
        return Err(Error::RegionMismatch("fields live on different regions".into()));
    }
    Ok(())
}

pub fn mean_of(v: &[f64]) -> f64 {
    let mut s = NeumaierSum::default();
    for &x in v {
        s.add(x);
    }
    s.value() / v.len() as f64
}

pub fn project_mean_zero(v: &mut [f64]) {
    let m = mean_of(v);
    v.iter_mut().for_each(|x| *x -= m);
}

/// (f)_U, the average of f over U ⊆ region(f).
pub fn mean(f: &Field, u: &Region) -> Result<f64> {
    if u.is_empty() {
        return invalid("empty averaging region");
    }
    let idx = f.region.embed(u)?;
    let mut s = NeumaierSum::default();
    for i in idx {
        s.add(f.values[i]);
    }
    Ok(s.value() / u.len() as f64)
}

/// ⟨g⟩_U: the vector with p·⟨g⟩_U = (1/|U|) Σ_{e⊆U} p(e) g(e).
pub fn slope(g: &EdgeField, u: &Region) -> Result<Vec<f64>> {
    if u.is_empty() {
        return invalid("empty averaging region");
    }
    let region = &g.region;
    let inside: Vec<bool> = {
        let idx = region.embed(u)?;
        let mut m = vec![false; region.len()];
        for i in idx {
            m[i] = true;
        }
        m
    };
    let mut s = vec![0.0; region.d()];
    for (gv, b) in g.values.iter().zip(region.bonds()) {
        if inside[b.tail] && inside[b.head] {
            s[b.dir] += gv;
        }
    }
    let vol = u.len() as f64;
    Ok(s.into_iter().map(|x| x / vol).collect())
}

/// Slope of ∇f over the whole region of f, without building the edge field.
pub fn slope_of_gradient(region: &Region, f: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for b in region.bonds() {
        out[b.dir] += f[b.head] - f[b.tail];
    }
    let vol = region.len() as f64;
    out.iter_mut().for_each(|x| *x /= vol);
}

/// Partition of Q_n into the cells z + Q_m, z ∈ Z_{m,n} = 3^m Z^d ∩ Q_n.
#[derive(Debug, Clone)]
pub struct TriadicPartition {
    pub m: u32,
    pub n: u32,
    pub cube: Arc<Region>,
    /// Cell centres z.
    pub centers: Vec<Vec<i64>>,
    /// Cell index of every vertex of Q_n.
    pub cell_of: Vec<usize>,
    /// Vertex indices of every cell, in row-major order.
    pub members: Vec<Vec<usize>>,
    /// Bond indices of Q_n interior to each cell.
    pub cell_bonds: Vec<Vec<usize>>,
    /// B_{m,n}: bonds joining different cells.
    pub connecting: Vec<usize>,
}

impl TriadicPartition {
    pub fn new(d: usize, m: u32, n: u32) -> Result<TriadicPartition> {
        TriadicPartition::on(Arc::new(Region::cube(d, n)?), m)
    }

    /// Partition of an existing centred cube region.
    pub fn on(cube: Arc<Region>, m: u32) -> Result<TriadicPartition> {
        let n = match (cube.kind(), cube.level()) {
            (RegionKind::Cube, Some(n)) => n,
            _ => return invalid("triadic partitions are defined on cubes"),
        };
        if m >= n {
            return invalid(format!("partition needs m < n, got m = {}, n = {}", m, n));
        }
        let d = cube.d();
        let sm = side(m) as i64;
        let half = (sm - 1) / 2;
        let cells_per_axis = side(n - m);
        let mut cell_of = vec![0; cube.len()];
        let offset = ((cells_per_axis - 1) / 2) as i64;
        for v in 0..cube.len() {
            let p = cube.point(v);
            let k: Vec<i64> = p.iter().map(|&x| (x + half).div_euclid(sm)).collect();
            let mut id = 0usize;
            for &ki in &k {
                id = id * cells_per_axis + (ki + offset) as usize;
            }
            cell_of[v] = id;
        }
        let ncells = cells_per_axis.pow(d as u32);
        let mut centers = vec![vec![0; d]; ncells];
        for id in 0..ncells {
            let mut rem = id;
            let mut z = vec![0i64; d];
            for i in (0..d).rev() {
                z[i] = ((rem % cells_per_axis) as i64 - offset) * sm;
                rem /= cells_per_axis;
            }
            centers[id] = z;
        }
        let mut members = vec![Vec::new(); ncells];
        for (v, &c) in cell_of.iter().enumerate() {
            members[c].push(v);
        }
        let mut cell_bonds = vec![Vec::new(); ncells];
        let mut connecting = Vec::new();
        for (k, b) in cube.bonds().iter().enumerate() {
            let (ct, ch) = (cell_of[b.tail], cell_of[b.head]);
            if ct == ch {
                cell_bonds[ct].push(k);
            } else {
                connecting.push(k);
            }
        }
        Ok(TriadicPartition { m, n, cube, centers, cell_of, members, cell_bonds, connecting })
    }

    pub fn num_cells(&self) -> usize {
        self.centers.len()
    }

    pub fn cell_region(&self, c: usize) -> Result<Region> {
        Region::cube_at(self.cube.d(), self.m, &self.centers[c])
    }
}

/// Writes the text dump: header `d n kind`, then one value per line.
pub fn write_field_dump<W: Write>(f: &Field, mut w: W) -> Result<()> {
    let r = &f.region;
    let n = match r.level() {
        Some(n) if matches!(r.kind(), RegionKind::Cube | RegionKind::CubePlus) => n,
        _ => return invalid("field dumps are defined for centred cubes and augmented cubes"),
    };
    if r.kind() == RegionKind::Cube && r.point(0).iter().any(|&x| x != -(((side(n) - 1) / 2) as i64)) {
        return invalid("field dumps are defined for centred cubes");
    }
    writeln!(w, "{} {} {}", r.d(), n, r.kind().as_str())?;
    for v in &f.values {
        writeln!(w, "{:.16e}", v)?;
    }
    Ok(())
}

pub fn read_field_dump<R: BufRead>(r: R) -> Result<Field> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::InvalidArgument("empty field dump".into()))??;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 {
        return invalid(format!("bad field dump header {:?}", header));
    }
    let d: usize = parts[0].parse().map_err(|_| Error::InvalidArgument("bad dimension".into()))?;
    let n: u32 = parts[1].parse().map_err(|_| Error::InvalidArgument("bad level".into()))?;
    let region = match parts[2] {
        "cube" => Region::cube(d, n)?,
        "cube_plus" => Region::cube_plus(d, n)?,
        other => return invalid(format!("unsupported region kind {:?}", other)),
    };
    let mut values = Vec::with_capacity(region.len());
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        values.push(t.parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad value {:?}", t)))?);
    }
    Field::new(Arc::new(region), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_counts() {
        let q0 = Region::cube(2, 0).unwrap();
        assert_eq!(q0.len(), 1);
        assert_eq!(q0.point(0), &[0, 0]);
        let q1 = Region::cube(2, 1).unwrap();
        assert_eq!(q1.len(), 9);
        assert_eq!(q1.bonds().len(), 12);
        let q2 = Region::cube(2, 2).unwrap();
        assert_eq!(q2.len(), 81);
        assert_eq!(q2.boundary_indices().len(), 32);
    }

    #[test]
    fn cube_plus_interior_is_cube() {
        let p1 = Region::cube_plus(2, 1).unwrap();
        assert_eq!(p1.len(), 25);
        assert_eq!(p1.interior().unwrap(), Region::cube(2, 1).unwrap());
        assert_eq!(Region::cube_plus(2, 2).unwrap().len(), 121);
    }

    #[test]
    fn boundary_and_interior_of_small_regions() {
        let q1 = Region::cube(2, 1).unwrap();
        assert_eq!(q1.boundary().unwrap().len(), 8);
        let int = q1.interior().unwrap();
        assert_eq!(int.len(), 1);
        assert_eq!(int.point(0), &[0, 0]);
        let single = Region::cube(2, 0).unwrap();
        assert_eq!(single.boundary_indices(), vec![0]);
    }

    #[test]
    fn partition_of_q2() {
        let part = TriadicPartition::new(2, 1, 2).unwrap();
        assert_eq!(part.num_cells(), 9);
        assert!(part.members.iter().all(|m| m.len() == 9));
        assert_eq!(part.connecting.len(), 36);
        let inner: usize = part.cell_bonds.iter().map(|c| c.len()).sum();
        assert_eq!(inner + part.connecting.len(), part.cube.bonds().len());
    }

    #[test]
    fn partition_cells_are_translated_cubes() {
        let part = TriadicPartition::new(2, 1, 3).unwrap();
        for c in 0..part.num_cells() {
            let cell = part.cell_region(c).unwrap();
            let idx = part.cube.embed(&cell).unwrap();
            let mut members = part.members[c].clone();
            members.sort();
            let mut idx = idx;
            idx.sort();
            assert_eq!(idx, members);
        }
    }

    #[test]
    fn balls() {
        let q2 = Region::cube(2, 2).unwrap();
        assert_eq!(Region::ball(&[0, 0], 1.0, &q2).unwrap().len(), 5);
        assert_eq!(Region::ball(&[0, 0], 1.5, &q2).unwrap().len(), 9);
        assert!(Region::ball(&[0, 0], 0.5, &q2).is_err());
        assert!(Region::ball(&[9, 0], 1.0, &q2).is_err());
    }

    #[test]
    fn affine_gradient_and_slope() {
        let q = Arc::new(Region::cube(2, 2).unwrap());
        let p = [0.7, -1.3];
        let g = gradient(&Field::affine(q.clone(), &p));
        for (v, b) in g.values.iter().zip(q.bonds()) {
            assert!((v - p[b.dir]).abs() < 1e-14);
        }
        // A cube of side s has s^{d-1}(s-1) bonds per direction.
        let s = slope(&g, &q).unwrap();
        assert!((s[0] - p[0] * 8.0 / 9.0).abs() < 1e-14);
        assert!((s[1] - p[1] * 8.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn constant_field_has_no_gradient() {
        let q = Arc::new(Region::cube(3, 1).unwrap());
        let f = Field::new(q.clone(), vec![2.5; q.len()]).unwrap();
        assert!(gradient(&f).values.iter().all(|&v| v == 0.0));
        assert!(laplacian(&f).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edge_value_is_antisymmetric() {
        let q = Arc::new(Region::cube(2, 1).unwrap());
        let f = Field::from_fn(q.clone(), |p| (p[0] * 3 + p[1] * p[1]) as f64);
        let g = gradient(&f);
        for b in q.bonds() {
            let fw = g.value(b.tail, b.head).unwrap();
            let bw = g.value(b.head, b.tail).unwrap();
            assert_eq!(fw, -bw);
            assert_eq!(fw, f.values[b.head] - f.values[b.tail]);
        }
        assert!(g.value(0, 8).is_none());
    }

    #[test]
    fn dump_round_trip() {
        let q = Arc::new(Region::cube(2, 1).unwrap());
        let f = Field::from_fn(q, |p| (p[0] as f64).exp() / 3.0 + p[1] as f64 * 0.1);
        let mut buf = Vec::new();
        write_field_dump(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("2 1 cube\n"));
        let back = read_field_dump(&buf[..]).unwrap();
        assert_eq!(back.values, f.values);
    }
}
