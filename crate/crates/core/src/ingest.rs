//! Data preparation: OFF meshes, voxelization, synthetic shapes, affine maps
//! and the normalization applied before shape matching.
//!
//! Images produced here live on unit grids (`N` voxels of size `1/N` per
//! axis, covering `[-1/2, 1/2]^d`).

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::voxel::VoxelImage;

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return invalid(format!("face {f:?} references a missing vertex"));
        }
        Ok(Self { vertices, faces })
    }

    fn triangle(&self, f: usize) -> [[f64; 3]; 3] {
        self.faces[f].map(|i| self.vertices[i])
    }

    /// Closed axis-aligned box `center ± half` as 12 outward-oriented triangles.
    pub fn cuboid(center: [f64; 3], half: [f64; 3]) -> Self {
        let mut vertices = Vec::with_capacity(8);
        for mask in 0..8 {
            vertices.push(std::array::from_fn(|j| center[j] + if (mask >> j) & 1 == 1 { half[j] } else { -half[j] }));
        }
        let faces = vec![
            [0, 2, 1],
            [1, 2, 3], // z-
            [4, 5, 6],
            [5, 7, 6], // z+
            [0, 1, 4],
            [1, 5, 4], // y-
            [2, 6, 3],
            [3, 6, 7], // y+
            [0, 4, 2],
            [2, 4, 6], // x-
            [1, 3, 5],
            [3, 7, 5], // x+
        ];
        Self { vertices, faces }
    }

    pub fn translated(&self, shift: [f64; 3]) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| std::array::from_fn(|j| v[j] + shift[j])).collect(),
            faces: self.faces.clone(),
        }
    }
}

fn parse_error(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Parses OFF text: an optional `OFF` header (possibly fused with the
/// counts), a counts line `nv nf [ne]`, vertex lines and polygon lines.
/// Polygons are triangulated as fans from their first vertex; trailing
/// tokens such as colors are ignored. `#` starts a comment.
pub fn parse_off(text: &str) -> Result<TriangleMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let last_line = text.lines().count();
    let eof = |what: &str| parse_error(last_line + 1, format!("unexpected end of input, expected {what}"));

    let (mut line_no, mut line) = lines.next().ok_or_else(|| eof("counts"))?;
    if let Some(rest) = line.strip_prefix("OFF") {
        let rest = rest.trim();
        if rest.is_empty() {
            (line_no, line) = lines.next().ok_or_else(|| eof("counts"))?;
        } else {
            line = rest;
        }
    }
    let counts = parse_numbers::<usize>(line, line_no)?;
    if counts.len() < 2 {
        return Err(parse_error(line_no, "counts line needs vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv.min(1 << 20));
    for k in 0..nv {
        let (no, l) = lines.next().ok_or_else(|| eof(&format!("vertex {} of {nv}", k + 1)))?;
        let xs = parse_numbers::<f64>(l, no)?;
        if xs.len() < 3 {
            return Err(parse_error(no, "vertex needs three coordinates"));
        }
        if xs[..3].iter().any(|x| !x.is_finite()) {
            return Err(parse_error(no, "non-finite vertex coordinate"));
        }
        vertices.push([xs[0], xs[1], xs[2]]);
    }
    let mut faces = Vec::with_capacity(nf.min(1 << 20));
    for k in 0..nf {
        let (no, l) = lines.next().ok_or_else(|| eof(&format!("face {} of {nf}", k + 1)))?;
        let mut tokens = l.split_whitespace();
        let count: usize = parse_token(tokens.next(), no)?;
        if count < 3 {
            return Err(parse_error(no, format!("face needs at least 3 vertices, got {count}")));
        }
        let idx = (0..count).map(|_| parse_token::<usize>(tokens.next(), no)).collect::<Result<Vec<_>>>()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= nv) {
            return Err(parse_error(no, format!("vertex index {bad} out of range (have {nv})")));
        }
        for w in 1..count - 1 {
            faces.push([idx[0], idx[w], idx[w + 1]]);
        }
    }
    Ok(TriangleMesh { vertices, faces })
}

fn parse_token<N: std::str::FromStr>(tok: Option<&str>, line: usize) -> Result<N> {
    let tok = tok.ok_or_else(|| parse_error(line, "missing value"))?;
    tok.parse().map_err(|_| parse_error(line, format!("invalid number '{tok}'")))
}

fn parse_numbers<N: std::str::FromStr>(line: &str, no: usize) -> Result<Vec<N>> {
    line.split_whitespace().map(|t| parse_token(Some(t), no)).collect()
}

pub fn serialize_off(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "OFF\n{} {} 0", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

type V3 = [f64; 3];

#[inline]
fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Separating-axis test between a triangle and the closed box `center ± h`.
/// Degenerate triangles behave like the segment or point they collapse to.
pub fn triangle_box_overlap(tri: &[V3; 3], center: V3, h: V3) -> bool {
    let v = tri.map(|p| sub(p, center));
    let separated = |axis: V3| {
        let p = v.map(|x| dot(x, axis));
        let r = h[0] * axis[0].abs() + h[1] * axis[1].abs() + h[2] * axis[2].abs();
        let lo = p[0].min(p[1]).min(p[2]);
        let hi = p[0].max(p[1]).max(p[2]);
        lo > r || hi < -r
    };
    let edges = [sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])];
    let units = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if units.iter().any(|&u| separated(u)) {
        return false;
    }
    if separated(cross(edges[0], edges[1])) {
        return false;
    }
    for e in edges {
        for u in units {
            if separated(cross(e, u)) {
                return false;
            }
        }
    }
    true
}

/// Uniform scale and center mapping the mesh bounding box into `[-0.45, 0.45]^3`
/// (the unit grid with a 5% margin on every side).
pub fn fit_transform(mesh: &TriangleMesh) -> Result<(f64, V3)> {
    if mesh.faces.is_empty() {
        return invalid("mesh has no faces");
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for f in &mesh.faces {
        for &i in f {
            for j in 0..3 {
                lo[j] = lo[j].min(mesh.vertices[i][j]);
                hi[j] = hi[j].max(mesh.vertices[i][j]);
            }
        }
    }
    let center = std::array::from_fn(|j| (lo[j] + hi[j]) / 2.0);
    let extent = (0..3).map(|j| hi[j] - lo[j]).fold(0.0, f64::max);
    let scale = if extent > 0.0 { 0.9 / extent } else { 1.0 };
    Ok((scale, center))
}

/// Scales the mesh into the unit grid with a 5% margin, then voxelizes it
/// with [`voxelize_in_grid`].
pub fn voxelize(mesh: &TriangleMesh, n: usize, fill: bool) -> Result<VoxelImage<f64>> {
    let (scale, center) = fit_transform(mesh)?;
    let placed = TriangleMesh {
        vertices: mesh.vertices.iter().map(|v| std::array::from_fn(|j| (v[j] - center[j]) * scale)).collect(),
        faces: mesh.faces.clone(),
    };
    voxelize_in_grid(&placed, n, fill)
}

/// Voxelizes a mesh given in unit-grid coordinates. Voxels whose closed cube
/// meets a triangle are set to 1. With `fill`, a voxel is also set when at
/// least two of the rays from its center along `+x`, `+y`, `+z` cross the
/// surface an odd number of times.
pub fn voxelize_in_grid(mesh: &TriangleMesh, n: usize, fill: bool) -> Result<VoxelImage<f64>> {
    if n < 2 {
        return invalid("voxelization needs N >= 2");
    }
    if mesh.faces.is_empty() {
        return invalid("mesh has no faces");
    }
    let s = 1.0 / n as f64;
    let coord = |i: usize| (i as f64 - (n as f64 - 1.0) / 2.0) * s;
    // continuous grid position -> voxel index range covering [lo, hi]
    let index_range = |lo: f64, hi: f64| -> Option<(usize, usize)> {
        let a = ((lo / s + n as f64 / 2.0).floor() - 1.0).max(0.0);
        let b = ((hi / s + n as f64 / 2.0).ceil() + 1.0).min(n as f64);
        (a < b).then_some((a as usize, b as usize))
    };
    let len = n * n * n;
    let h = [s / 2.0; 3];
    let surface = (0..mesh.faces.len())
        .into_par_iter()
        .fold(
            || vec![false; len],
            |mut mask, f| {
                let tri = mesh.triangle(f);
                let mut ranges = [(0usize, 0usize); 3];
                for j in 0..3 {
                    let lo = tri[0][j].min(tri[1][j]).min(tri[2][j]);
                    let hi = tri[0][j].max(tri[1][j]).max(tri[2][j]);
                    match index_range(lo, hi) {
                        Some(r) => ranges[j] = r,
                        None => return mask,
                    }
                }
                for i in ranges[0].0..ranges[0].1 {
                    for j in ranges[1].0..ranges[1].1 {
                        for k in ranges[2].0..ranges[2].1 {
                            let flat = (i * n + j) * n + k;
                            if !mask[flat] && triangle_box_overlap(&tri, [coord(i), coord(j), coord(k)], h) {
                                mask[flat] = true;
                            }
                        }
                    }
                }
                mask
            },
        )
        .reduce(
            || vec![false; len],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x |= y);
                a
            },
        );

    let mut votes = vec![0u8; len];
    if fill {
        for axis in 0..3 {
            let inside = parity_fill(mesh, n, axis);
            votes.iter_mut().zip(inside).for_each(|(v, x)| *v += x as u8);
        }
    }
    let values = surface.iter().zip(&votes).map(|(&on, &v)| if on || v >= 2 { 1.0 } else { 0.0 }).collect();
    VoxelImage::unit_grid(3, n, values)
}

/// Inside/outside per voxel center from the parity of surface crossings of
/// the ray towards `+axis`.
fn parity_fill(mesh: &TriangleMesh, n: usize, axis: usize) -> Vec<bool> {
    let s = 1.0 / n as f64;
    let coord = |i: usize| (i as f64 - (n as f64 - 1.0) / 2.0) * s;
    let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
    // crossing positions along `axis` for every line (iu, iw)
    let mut hits: Vec<Vec<f64>> = vec![Vec::new(); n * n];
    for f in 0..mesh.faces.len() {
        let tri = mesh.triangle(f);
        let p = tri.map(|v| [v[u], v[w]]);
        let area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        if area == 0.0 {
            continue;
        }
        let span = |j: usize| {
            let lo = p[0][j].min(p[1][j]).min(p[2][j]);
            let hi = p[0][j].max(p[1][j]).max(p[2][j]);
            let a = ((lo / s + (n as f64 - 1.0) / 2.0).ceil()).max(0.0) as usize;
            let b = ((hi / s + (n as f64 - 1.0) / 2.0).floor() + 1.0).clamp(0.0, n as f64) as usize;
            a..b
        };
        for iu in span(0) {
            for iw in span(1) {
                let q = [coord(iu), coord(iw)];
                if let Some(bary) = covers(&p, area, q) {
                    let x = bary[0] * tri[0][axis] + bary[1] * tri[1][axis] + bary[2] * tri[2][axis];
                    hits[iu * n + iw].push(x);
                }
            }
        }
    }
    let mut inside = vec![false; n * n * n];
    for iu in 0..n {
        for iw in 0..n {
            let line = &hits[iu * n + iw];
            for ia in 0..n {
                let c = coord(ia);
                let crossings = line.iter().filter(|&&x| x > c).count();
                if crossings % 2 == 1 {
                    let mut idx = [0usize; 3];
                    idx[axis] = ia;
                    idx[u] = iu;
                    idx[w] = iw;
                    inside[(idx[0] * n + idx[1]) * n + idx[2]] = true;
                }
            }
        }
    }
    inside
}

/// Barycentric coordinates of `q` if it lies in the projected triangle,
/// with a top-left rule so that points on shared edges count exactly once.
fn covers(p: &[[f64; 2]; 3], area: f64, q: [f64; 2]) -> Option<[f64; 3]> {
    let orient = area.signum();
    let mut w = [0.0; 3];
    for k in 0..3 {
        let (a, b) = (p[(k + 1) % 3], p[(k + 2) % 3]);
        let e = ((b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0])) * orient;
        if e < 0.0 {
            return None;
        }
        if e == 0.0 {
            // edge direction in counter-clockwise orientation
            let (dx, dy) = ((b[0] - a[0]) * orient, (b[1] - a[1]) * orient);
            let top_left = dy < 0.0 || (dy == 0.0 && dx > 0.0);
            if !top_left {
                return None;
            }
        }
        w[k] = e;
    }
    let total = w[0] + w[1] + w[2];
    if total == 0.0 {
        return None;
    }
    Some(w.map(|x| x / total))
}

/// Parametric shapes on a unit grid; coordinates refer to `[-1/2, 1/2]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    SolidBox {
        center: Vec<f64>,
        half_widths: Vec<f64>,
    },
    SolidSphere {
        center: Vec<f64>,
        radius: f64,
    },
    /// The half ball on the side of `normal`: `|x - c| ≤ r`, `⟨x - c, normal⟩ ≥ 0`.
    Hemisphere {
        center: Vec<f64>,
        radius: f64,
        normal: Vec<f64>,
    },
    Shell {
        center: Vec<f64>,
        inner_radius: f64,
        outer_radius: f64,
    },
    /// Union of a long bar along the first axis and a bar along the second
    /// axis sharing its corner, `thickness` wide in every other direction.
    LShape {
        center: Vec<f64>,
        length: f64,
        thickness: f64,
    },
}

impl Shape {
    pub fn dim(&self) -> usize {
        match self {
            Shape::SolidBox { center, .. }
            | Shape::SolidSphere { center, .. }
            | Shape::Hemisphere { center, .. }
            | Shape::Shell { center, .. }
            | Shape::LShape { center, .. } => center.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return invalid("shape center is empty");
        }
        let fits = |c: &[f64], r: &[f64]| c.iter().zip(r).all(|(c, r)| c - r >= -0.5 - 1e-12 && c + r <= 0.5 + 1e-12);
        let ok = match self {
            Shape::SolidBox { center, half_widths } => {
                check_dim(d, half_widths.len())?;
                if half_widths.iter().any(|&h| h.is_nan() || h < 0.0) {
                    return invalid("half-widths must be nonnegative");
                }
                fits(center, half_widths)
            }
            Shape::SolidSphere { center, radius } => {
                if radius.is_nan() || *radius < 0.0 {
                    return invalid("radius must be nonnegative");
                }
                fits(center, &vec![*radius; d])
            }
            Shape::Hemisphere { center, radius, normal } => {
                check_dim(d, normal.len())?;
                if radius.is_nan() || *radius < 0.0 {
                    return invalid("radius must be nonnegative");
                }
                if normal.iter().all(|&x| x == 0.0) {
                    return invalid("hemisphere normal is zero");
                }
                fits(center, &vec![*radius; d])
            }
            Shape::Shell { center, inner_radius, outer_radius } => {
                if !(0.0 <= *inner_radius && inner_radius <= outer_radius) {
                    return invalid("shell radii must satisfy 0 <= inner <= outer");
                }
                fits(center, &vec![*outer_radius; d])
            }
            Shape::LShape { center, length, thickness } => {
                if d < 2 {
                    return invalid("an L-shape needs at least two dimensions");
                }
                if !(*thickness > 0.0 && thickness <= length) {
                    return invalid("L-shape needs 0 < thickness <= length");
                }
                fits(center, &vec![length / 2.0; d])
            }
        };
        if ok {
            Ok(())
        } else {
            invalid("shape extends outside the grid")
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let dist2 = |c: &[f64]| x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        match self {
            Shape::SolidBox { center, half_widths } => {
                x.iter().zip(center).zip(half_widths).all(|((x, c), h)| (x - c).abs() <= *h)
            }
            Shape::SolidSphere { center, radius } => dist2(center) <= radius * radius,
            Shape::Hemisphere { center, radius, normal } => {
                let side: f64 = x.iter().zip(center).zip(normal).map(|((x, c), n)| (x - c) * n).sum();
                dist2(center) <= radius * radius && side >= 0.0
            }
            Shape::Shell { center, inner_radius, outer_radius } => {
                let r2 = dist2(center);
                r2 >= inner_radius * inner_radius && r2 <= outer_radius * outer_radius
            }
            Shape::LShape { center, length, thickness } => {
                // bounding square [c - L/2, c + L/2] in the first two axes;
                // the bars run along its low edges
                let u: Vec<f64> = x.iter().zip(center).map(|(x, c)| x - c).collect();
                let (half, t) = (length / 2.0, *thickness);
                let in_square = u[..2].iter().all(|v| v.abs() <= half);
                let rest = u[2..].iter().all(|v| v.abs() <= t / 2.0);
                let bar0 = u[1] <= -half + t;
                let bar1 = u[0] <= -half + t;
                in_square && rest && (bar0 || bar1)
            }
        }
    }
}

/// Voxel set to 1 iff its center belongs to the shape.
pub fn synth_shape(shape: &Shape, n: usize) -> Result<VoxelImage<f64>> {
    shape.validate()?;
    if n == 0 {
        return invalid("grid size must be positive");
    }
    let d = shape.dim();
    let mut img = VoxelImage::unit_grid(d, n, vec![0.0; n.pow(d as u32)])?;
    let mut idx = vec![0usize; d];
    for flat in 0..img.len() {
        let mut rest = flat;
        for k in (0..d).rev() {
            idx[k] = rest % n;
            rest /= n;
        }
        if shape.contains(&img.center(&idx)) {
            img.values_mut()[flat] = 1.0;
        }
    }
    Ok(img)
}

/// `n/2` points uniform on `[-1, -1/2]^d` followed by `n/2` on `[1/2, 1]^d`.
pub fn sample_two_cluster_cloud(n: usize, d: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if !n.is_multiple_of(2) {
        return invalid("two-cluster cloud needs an even sample count");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n);
    for (lo, hi) in [(-1.0, -0.5), (0.5, 1.0)] {
        for _ in 0..n / 2 {
            pts.push((0..d).map(|_| rng.random_range(lo..=hi)).collect());
        }
    }
    Ok(pts)
}

/// `x ↦ A x + y`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    a: DMatrix<f64>,
    y: DVector<f64>,
    a_inv: DMatrix<f64>,
}

impl AffineMap {
    pub fn new(a: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if !a.is_square() {
            return invalid("affine matrix must be square");
        }
        check_dim(a.nrows(), y.len())?;
        let det = a.determinant();
        if !(det.abs() > 1e-12) {
            return Err(Error::Degenerate(format!("affine matrix is singular (det = {det})")));
        }
        let a_inv =
            a.clone().try_inverse().ok_or_else(|| Error::Degenerate("affine matrix is not invertible".into()))?;
        Ok(Self { a, y, a_inv })
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d), DVector::zeros(d)).expect("identity is invertible")
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn determinant(&self) -> f64 {
        self.a.determinant()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.a * DVector::from_column_slice(x) + &self.y).iter().copied().collect()
    }

    /// `A^{-1}(x - y)`.
    pub fn apply_inverse(&self, x: &[f64]) -> Vec<f64> {
        (&self.a_inv * (DVector::from_column_slice(x) - &self.y)).iter().copied().collect()
    }
}

/// Nearest voxel of `img` containing the physical point `x`, if inside the grid.
fn nearest_voxel(img: &VoxelImage<f64>, x: &[f64]) -> Option<usize> {
    let s = img.voxel_size();
    let mut flat = 0usize;
    for (k, (&xk, &nk)) in x.iter().zip(img.extents()).enumerate() {
        let _ = k;
        let pos = (xk / s + (nk as f64 - 1.0) / 2.0 + 0.5).floor();
        if !(pos >= 0.0 && pos < nk as f64) {
            return None;
        }
        flat = flat * nk + pos as usize;
    }
    Some(flat)
}

/// Samples `f_{A,y}(x) = f(A^{-1}(x - y))` at every voxel center by
/// nearest-neighbor lookup; samples outside the grid are 0.
pub fn apply_affine_voxels(img: &VoxelImage<f64>, map: &AffineMap) -> Result<VoxelImage<f64>> {
    check_dim(img.dim(), map.dim())?;
    resample(img, |x| map.apply_inverse(x))
}

/// Output voxel with center `x` takes the value of the input voxel nearest
/// to `source(x)`.
fn resample(img: &VoxelImage<f64>, source: impl Fn(&[f64]) -> Vec<f64> + Sync) -> Result<VoxelImage<f64>> {
    let d = img.dim();
    let extents = img.extents().to_vec();
    let values: Vec<f64> = (0..img.len())
        .into_par_iter()
        .map(|flat| {
            let mut idx = vec![0usize; d];
            let mut rest = flat;
            for k in (0..d).rev() {
                idx[k] = rest % extents[k];
                rest /= extents[k];
            }
            let x = source(&img.center(&idx));
            nearest_voxel(img, &x).map_or(0.0, |i| img.values()[i])
        })
        .collect();
    VoxelImage::new(extents, img.voxel_size(), values)
}

/// Parameter ranges for [`random_affine`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineRanges {
    /// Rotation angles up to this bound; `π` or more gives the uniform law on SO(d).
    pub max_rotation: f64,
    /// Off-diagonal entries of the unit upper-triangular shear.
    pub shear: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Shift per axis as a fraction of the grid width.
    pub shift_fraction: f64,
    pub grid_width: f64,
}

impl Default for AffineRanges {
    fn default() -> Self {
        Self {
            max_rotation: std::f64::consts::PI,
            shear: 0.2,
            scale_min: 0.7,
            scale_max: 1.3,
            shift_fraction: 0.1,
            grid_width: 1.0,
        }
    }
}

impl AffineRanges {
    /// All ranges collapsed: [`random_affine`] returns the identity.
    pub fn zero() -> Self {
        Self { max_rotation: 0.0, shear: 0.0, scale_min: 1.0, scale_max: 1.0, shift_fraction: 0.0, grid_width: 1.0 }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn random_rotation(rng: &mut ChaCha8Rng, d: usize, max_angle: f64) -> Result<DMatrix<f64>> {
    let angle_bound = max_angle.min(std::f64::consts::PI);
    match d {
        1 => Ok(DMatrix::identity(1, 1)),
        2 => {
            let phi = uniform(rng, -angle_bound, angle_bound);
            let (s, c) = phi.sin_cos();
            Ok(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]))
        }
        3 => {
            let q = if max_angle >= std::f64::consts::PI {
                // a normalized Gaussian 4-vector is uniform on S³, hence on SO(3)
                let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(g[0], g[1], g[2], g[3]))
            } else {
                let axis: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let phi = uniform(rng, -angle_bound, angle_bound);
                let axis = Vector3::from(axis);
                if axis.norm() == 0.0 || phi == 0.0 {
                    UnitQuaternion::identity()
                } else {
                    UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), phi)
                }
            };
            let m = q.to_rotation_matrix();
            Ok(DMatrix::from_fn(3, 3, |i, j| m[(i, j)]))
        }
        _ => invalid("random rotations are available for d <= 3"),
    }
}

/// `A = R · Sh · Sc`: rotation, unit upper-triangular shear and per-axis
/// scaling, plus a uniform shift, drawn from `ranges`.
pub fn random_affine(seed: u64, d: usize, ranges: &AffineRanges) -> Result<AffineMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random_rotation(&mut rng, d, ranges.max_rotation)?;
    let mut sh = DMatrix::identity(d, d);
    for i in 0..d {
        for j in i + 1..d {
            sh[(i, j)] = uniform(&mut rng, -ranges.shear, ranges.shear);
        }
    }
    let sc = DMatrix::from_diagonal(&DVector::from_fn(d, |_, _| uniform(&mut rng, ranges.scale_min, ranges.scale_max)));
    let w = ranges.shift_fraction * ranges.grid_width;
    let y = DVector::from_fn(d, |_, _| uniform(&mut rng, -w, w));
    AffineMap::new(r * sh * sc, y)
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order and
/// eigenvectors as matching columns.
pub fn symmetric_eigen(c: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(c.clone());
    let mut order: Vec<usize> = (0..c.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(c.nrows(), c.ncols(), |r, k| eig.eigenvectors[(r, order[k])]);
    (values, vectors)
}

/// Mass, centroid and covariance of the voxel mass distribution.
pub fn moments(img: &VoxelImage<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let d = img.dim();
    let mass: f64 = img.values().iter().sum();
    if !(mass > 0.0) {
        return Err(Error::Degenerate("image has no positive mass".into()));
    }
    let mut idx = vec![0usize; d];
    let mut centroid = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    let mut centers = Vec::with_capacity(img.len());
    for flat in 0..img.len() {
        let mut rest = flat;
        for k in (0..d).rev() {
            idx[k] = rest % img.extents()[k];
            rest /= img.extents()[k];
        }
        centers.push(DVector::from_vec(img.center(&idx)));
    }
    for (x, &f) in centers.iter().zip(img.values()) {
        if f != 0.0 {
            centroid += x * f;
        }
    }
    centroid /= mass;
    for (x, &f) in centers.iter().zip(img.values()) {
        if f != 0.0 {
            let u = x - &centroid;
            second += &u * u.transpose() * f;
        }
    }
    second /= mass;
    Ok((mass, centroid, second))
}

/// Principal axes ordered by decreasing variance, each oriented so that the
/// third central moment of the mass projected on it is nonnegative (ties:
/// first nonzero component positive). `None` if the covariance is rank
/// deficient.
pub fn principal_axes(img: &VoxelImage<f64>) -> Result<Option<DMatrix<f64>>> {
    let (_, centroid, cov) = moments(img)?;
    let d = img.dim();
    let (values, mut vectors) = symmetric_eigen(&cov);
    if !(values[d - 1] > 1e-12 * values[0].abs().max(f64::MIN_POSITIVE)) {
        return Ok(None);
    }
    let mut idx = vec![0usize; d];
    let mut third = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for (flat, &f) in img.values().iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let mut rest = flat;
        for k in (0..d).rev() {
            idx[k] = rest % img.extents()[k];
            rest /= img.extents()[k];
        }
        let u = DVector::from_vec(img.center(&idx)) - &centroid;
        for k in 0..d {
            let p = vectors.column(k).dot(&u);
            third[k] += f * p * p * p;
            scale[k] += f * p.abs().powi(3);
        }
    }
    for k in 0..d {
        let flip = if third[k].abs() > 1e-9 * scale[k] {
            third[k] < 0.0
        } else {
            vectors.column(k).iter().find(|x| x.abs() > 1e-12).is_some_and(|&x| x < 0.0)
        };
        if flip {
            vectors.column_mut(k).neg_mut();
        }
    }
    Ok(Some(vectors))
}

/// Centers the mass at the grid center, rotates the principal axes onto the
/// coordinate axes, scales so the occupied voxels span 95% of the grid,
/// resamples by nearest neighbor and normalizes to unit integral.
pub fn preprocess(img: &VoxelImage<f64>) -> Result<VoxelImage<f64>> {
    let d = img.dim();
    let (_, centroid, _) = moments(img)?;
    let rot = match principal_axes(img)? {
        Some(r) => r,
        None => {
            log::warn!("covariance is rank deficient, skipping the principal-axis rotation");
            DMatrix::identity(d, d)
        }
    };
    // largest extent of occupied voxel centers in the rotated frame
    let mut reach: f64 = 0.0;
    let mut idx = vec![0usize; d];
    for (flat, &f) in img.values().iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let mut rest = flat;
        for k in (0..d).rev() {
            idx[k] = rest % img.extents()[k];
            rest /= img.extents()[k];
        }
        let u = rot.transpose() * (DVector::from_vec(img.center(&idx)) - &centroid);
        reach = reach.max(u.amax());
    }
    let half_grid = img.voxel_size() * *img.extents().iter().min().expect("nonempty") as f64 / 2.0;
    let sigma = if reach > 0.0 { 0.95 * half_grid / reach } else { 1.0 };
    let out = resample(img, |x| {
        let u = DVector::from_column_slice(x) / sigma;
        (&centroid + &rot * u).iter().copied().collect()
    })?;
    let total: f64 = out.values().iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("resampled image is empty".into()));
    }
    let norm = out.voxel_size().powi(d as i32) * total;
    let extents = out.extents().to_vec();
    let s = out.voxel_size();
    VoxelImage::new(extents, s, out.into_values().into_iter().map(|v| v / norm).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA: &str = "OFF\n# tetrahedron\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";

    #[test]
    fn parses_tetrahedron() {
        let mesh = parse_off(TETRA).unwrap();
        assert_eq!(mesh.vertices.len(), 4);
        assert_eq!(mesh.faces.len(), 4);
        assert_eq!(mesh.faces[3], [1, 2, 3]);
    }

    #[test]
    fn quad_is_fan_triangulated() {
        let mesh = parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn fused_header_and_trailing_tokens() {
        let mesh = parse_off("OFF4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n3 0 1 2 255 0 0\n").unwrap();
        assert_eq!(mesh.faces.len(), 1);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let short = "OFF\n5 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";
        match parse_off(short) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 11),
            other => panic!("{other:?}"),
        }
        match parse_off("OFF\n3 1 0\n0 0 0\n1 x 0\n0 1 0\n3 0 1 2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        match parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
        assert!(parse_off("").is_err());
    }

    #[test]
    fn off_roundtrip() {
        let mesh = TriangleMesh::cuboid([0.1, -0.2, 0.3], [0.5, 1.0 / 3.0, 0.25]);
        assert_eq!(parse_off(&serialize_off(&mesh)).unwrap(), mesh);
    }

    #[test]
    fn sat_cases() {
        let h = [0.5; 3];
        let tri = [[0.1, 0.1, 0.1], [0.2, 0.1, 0.1], [0.1, 0.2, 0.1]];
        assert!(triangle_box_overlap(&tri, [0.0; 3], h));
        assert!(!triangle_box_overlap(&tri, [2.0, 0.0, 0.0], h));
        // large triangle slicing through the box without any vertex inside
        let big = [[-5.0, -5.0, 0.0], [5.0, -5.0, 0.0], [0.0, 5.0, 0.0]];
        assert!(triangle_box_overlap(&big, [0.0; 3], h));
        // plane x + y + z = 2 misses the box around the origin (corner sum is 1.5)
        let far = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]];
        assert!(!triangle_box_overlap(&far, [0.0; 3], h));
        // degenerate: a segment passing diagonally near the box
        let seg = [[-1.0, -0.1, 0.0], [-0.1, -1.0, 0.0], [-1.0, -0.1, 0.0]];
        assert!(!triangle_box_overlap(&seg, [0.0; 3], h));
        let seg = [[-1.0, 0.4, 0.0], [0.4, -1.0, 0.0], [0.4, -1.0, 0.0]];
        assert!(triangle_box_overlap(&seg, [0.0; 3], h));
    }

    #[test]
    fn tiny_triangle_sets_one_voxel() {
        let n = 8;
        let s = 1.0 / n as f64;
        // inside the voxel with index (5, 2, 6)
        let c = [(5.0 - 3.5) * s, (2.0 - 3.5) * s, (6.0 - 3.5) * s];
        let e = 0.1 * s;
        let mesh =
            TriangleMesh::new(vec![c, [c[0] + e, c[1], c[2]], [c[0], c[1] + e, c[2] + e]], vec![[0, 1, 2]]).unwrap();
        let img = voxelize_in_grid(&mesh, n, true).unwrap();
        assert_eq!(img.values().iter().sum::<f64>(), 1.0);
        assert_eq!(img.get(&[5, 2, 6]), 1.0);
        let flat = TriangleMesh::new(vec![c, c, c], vec![[0, 1, 2]]).unwrap();
        assert_eq!(voxelize_in_grid(&flat, n, false).unwrap().values().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn filled_cube_mesh() {
        let mesh = TriangleMesh::cuboid([3.0, -1.0, 2.0], [1.0, 1.0, 1.0]);
        let img = voxelize(&mesh, 4, true).unwrap();
        assert!(img.values().iter().all(|&v| v == 1.0));
        let img = voxelize(&mesh, 10, true).unwrap();
        // the fitted cube is [-0.45, 0.45]^3: voxel centers inside it are set
        for (flat, &v) in img.values().iter().enumerate() {
            let idx = [flat / 100, (flat / 10) % 10, flat % 10];
            let inside = img.center(&idx).iter().all(|x| x.abs() <= 0.45);
            if inside {
                assert_eq!(v, 1.0, "{idx:?}");
            }
        }
        let hollow = voxelize(&mesh, 10, false).unwrap();
        assert_eq!(hollow.get(&[5, 5, 5]), 0.0);
        assert_eq!(img.get(&[5, 5, 5]), 1.0);
    }

    #[test]
    fn voxelization_is_translation_consistent() {
        let n = 16;
        let s = 1.0 / n as f64;
        let mesh = TriangleMesh::cuboid([-0.11, 0.05, 0.02], [0.2, 0.13, 0.27]);
        let a = voxelize_in_grid(&mesh, n, true).unwrap();
        let b = voxelize_in_grid(&mesh.translated([s, 0.0, 0.0]), n, true).unwrap();
        for i in 0..n - 1 {
            for j in 0..n {
                for k in 0..n {
                    assert_eq!(a.get(&[i, j, k]), b.get(&[i + 1, j, k]));
                }
            }
        }
    }

    #[test]
    fn synth_examples() {
        let full = Shape::SolidBox { center: vec![0.0; 3], half_widths: vec![0.5; 3] };
        assert!(synth_shape(&full, 6).unwrap().values().iter().all(|&v| v == 1.0));
        let dot = Shape::SolidSphere { center: vec![0.0; 3], radius: 0.0 };
        assert!(synth_shape(&dot, 5).unwrap().values().iter().sum::<f64>() <= 1.0);
        let n = 64;
        let ball = Shape::SolidSphere { center: vec![0.0; 3], radius: 0.3 };
        let half = Shape::Hemisphere { center: vec![0.0; 3], radius: 0.3, normal: vec![0.0, 0.0, 1.0] };
        let b: f64 = synth_shape(&ball, n).unwrap().values().iter().sum();
        let h: f64 = synth_shape(&half, n).unwrap().values().iter().sum();
        assert!((h / (b / 2.0) - 1.0).abs() < 0.1, "{h} vs {b}");
        let outside = Shape::SolidSphere { center: vec![0.4, 0.0, 0.0], radius: 0.2 };
        assert!(synth_shape(&outside, 8).is_err());
        let ell = Shape::LShape { center: vec![0.0; 3], length: 0.8, thickness: 0.2 };
        let img = synth_shape(&ell, 20).unwrap();
        let count: f64 = img.values().iter().sum();
        assert_eq!(count, (2 * 16 * 4 - 16) as f64 * 4.0);
    }

    #[test]
    fn shapes_roundtrip_through_json() {
        let shape = Shape::Hemisphere { center: vec![0.0; 3], radius: 0.25, normal: vec![1.0, 0.0, 0.0] };
        let text = serde_json::to_string(&shape).unwrap();
        assert!(text.contains("\"kind\":\"hemisphere\""));
        assert_eq!(serde_json::from_str::<Shape>(&text).unwrap(), shape);
    }

    #[test]
    fn two_cluster_cloud() {
        let pts = sample_two_cluster_cloud(2, 2, 1).unwrap();
        assert!(pts[0].iter().all(|&x| (-1.0..=-0.5).contains(&x)));
        assert!(pts[1].iter().all(|&x| (0.5..=1.0).contains(&x)));
        let pts = sample_two_cluster_cloud(40, 2, 7).unwrap();
        for (c, sign) in [(&pts[..20], -1.0), (&pts[20..], 1.0)] {
            for j in 0..2 {
                let m: f64 = c.iter().map(|p| p[j]).sum::<f64>() / 20.0;
                assert!((m - 0.75 * sign).abs() < 0.15);
            }
        }
        assert!(sample_two_cluster_cloud(3, 2, 0).is_err());
    }

    fn asymmetric(n: usize) -> VoxelImage<f64> {
        let mut img = VoxelImage::unit_grid(3, n, vec![0.0; n * n * n]).unwrap();
        for (i, v) in img.values_mut().iter_mut().enumerate() {
            *v = ((i * 37) % 11) as f64;
        }
        img
    }

    #[test]
    fn identity_and_shift_maps() {
        let img = asymmetric(6);
        assert_eq!(apply_affine_voxels(&img, &AffineMap::identity(3)).unwrap(), img);
        let s = img.voxel_size();
        let map = AffineMap::new(DMatrix::identity(3, 3), DVector::from_vec(vec![0.0, s, 0.0])).unwrap();
        let out = apply_affine_voxels(&img, &map).unwrap();
        for i in 0..6 {
            for j in 1..6 {
                for k in 0..6 {
                    assert_eq!(out.get(&[i, j, k]), img.get(&[i, j - 1, k]));
                }
            }
            assert_eq!(out.get(&[i, 0, 0]), 0.0);
        }
    }

    #[test]
    fn quarter_turns_compose_to_identity() {
        let img = asymmetric(7);
        let rot = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let map = AffineMap::new(rot, DVector::zeros(3)).unwrap();
        let mut out = img.clone();
        for _ in 0..4 {
            out = apply_affine_voxels(&out, &map).unwrap();
        }
        assert_eq!(out, img);
        assert_ne!(apply_affine_voxels(&img, &map).unwrap(), img);
        assert!(AffineMap::new(DMatrix::zeros(3, 3), DVector::zeros(3)).is_err());
    }

    #[test]
    fn random_affine_properties() {
        let ranges = AffineRanges::default();
        let a = random_affine(42, 3, &ranges).unwrap();
        assert_eq!(a, random_affine(42, 3, &ranges).unwrap());
        for seed in 0..200 {
            let det = random_affine(seed, 3, &ranges).unwrap().determinant();
            // rotation and shear have unit determinant
            assert!((0.7f64.powi(3) - 1e-12..=1.3f64.powi(3) + 1e-12).contains(&det), "{det}");
            assert!(det > 0.1);
        }
        let id = random_affine(5, 3, &AffineRanges::zero()).unwrap();
        assert_eq!(id.matrix(), &DMatrix::<f64>::identity(3, 3));
        assert_eq!(id.shift(), &DVector::<f64>::zeros(3));
    }

    #[test]
    fn eigen_solver() {
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0, -1.0]));
        let (values, _) = symmetric_eigen(&diag);
        assert_eq!(values, vec![5.0, 2.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let c = &m + m.transpose();
            let (values, vectors) = symmetric_eigen(&c);
            for k in 0..3 {
                let v = vectors.column(k);
                assert!((&c * v - v * values[k]).norm() <= 1e-9 * c.norm());
            }
            assert!(values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn preprocess_normalizes_and_centers() {
        let n = 24;
        let shape = Shape::SolidBox { center: vec![0.0; 3], half_widths: vec![0.3, 0.2, 0.1] };
        let img = synth_shape(&shape, n).unwrap();
        let out = preprocess(&img).unwrap();
        assert!((out.mass() - 1.0).abs() < 1e-9);
        let shifted = apply_affine_voxels(
            &img,
            &AffineMap::new(DMatrix::identity(3, 3), DVector::from_vec(vec![3.0 / n as f64, 0.0, 0.0])).unwrap(),
        )
        .unwrap();
        assert_eq!(preprocess(&shifted).unwrap(), out);
        let (_, centroid, _) = moments(&out).unwrap();
        assert!(centroid.norm() < 1.0 / n as f64);
        assert!(preprocess(&VoxelImage::<f64>::zeros(vec![4, 4, 4], 0.25).unwrap()).is_err());
    }

    #[test]
    fn rank_deficient_input_skips_rotation() {
        let mut img = VoxelImage::unit_grid(3, 8, vec![0.0; 512]).unwrap();
        for i in 1..7 {
            img.set(&[i, 4, 4], 1.0);
        }
        let out = preprocess(&img).unwrap();
        assert!((out.mass() - 1.0).abs() < 1e-9);
    }
}
