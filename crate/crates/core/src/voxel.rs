//! Voxelized images and their exact discrete Radon transform.
//!
//! A voxel image is the piecewise constant function
//! `f(x) = Σ_n F(n) 1[(x - s n) ∈ (-s/2, s/2]^d]` on a centered grid. By the
//! shift identity its Radon transform is a sum of translated cube sections,
//! `R_θ[f](t) = Σ_n F(n) A_θ^{(s/2)e}(t - s⟨n, θ⟩)`.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{check_dim, invalid, Error, Result};
use crate::geometry::{CubeSection, Direction, HalfWidths};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelImage<T> {
    extents: Vec<usize>,
    voxel_size: T,
    values: Vec<T>,
}

impl<T: Real> VoxelImage<T> {
    /// `values` are in lexicographic order with the last axis fastest.
    pub fn new(extents: Vec<usize>, voxel_size: T, values: Vec<T>) -> Result<Self> {
        if extents.is_empty() {
            return invalid("voxel image needs at least one axis");
        }
        if extents.contains(&0) {
            return invalid("voxel extents must be positive");
        }
        if !(voxel_size > T::zero() && voxel_size.is_finite()) {
            return invalid(format!("voxel size must be positive and finite, got {voxel_size}"));
        }
        let len = checked_len(&extents)?;
        check_dim(len, values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("voxel value {i} is not finite"));
        }
        Ok(Self { extents, voxel_size, values })
    }

    pub fn zeros(extents: Vec<usize>, voxel_size: T) -> Result<Self> {
        let len = checked_len(&extents)?;
        Self::new(extents, voxel_size, vec![T::zero(); len])
    }

    /// `N` voxels per axis of size `1/N`, so the image covers `[-1/2, 1/2]^d`.
    pub fn unit_grid(d: usize, n: usize, values: Vec<T>) -> Result<Self> {
        if n == 0 {
            return invalid("grid size must be positive");
        }
        Self::new(vec![n; d], T::one() / T::from_usize_lossy(n), values)
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn voxel_size(&self) -> T {
        self.voxel_size
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Flat position of the multi-index `idx` (each `idx[k] < extents[k]`).
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.extents).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.values[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let i = self.flat_index(idx);
        self.values[i] = v;
    }

    /// Half-integer centered coordinate `i - (N_k - 1)/2` along `axis`.
    #[inline]
    pub fn centered_index(&self, axis: usize, i: usize) -> T {
        centered(i, self.extents[axis])
    }

    /// Physical center `s·n` of the voxel with multi-index `idx`.
    pub fn center(&self, idx: &[usize]) -> Vec<T> {
        idx.iter().enumerate().map(|(k, &i)| self.voxel_size * self.centered_index(k, i)).collect()
    }

    /// `s^d Σ_n F(n)`: the integral of the piecewise constant function.
    pub fn mass(&self) -> T {
        self.voxel_size.powi(self.dim() as i32) * self.values.iter().copied().sum::<T>()
    }

    /// Largest distance from the origin at which the transform can be nonzero
    /// for any direction: `s √d max_k N_k / 2`.
    pub fn max_radius(&self) -> T {
        let n = *self.extents.iter().max().expect("nonempty extents");
        self.voxel_size * T::from_usize_lossy(self.dim()).sqrt() * T::from_usize_lossy(n) / T::lit(2.0)
    }

    /// `s n_k θ_k` for every index along every axis.
    fn axis_projections(&self, theta: &[T]) -> Vec<Vec<T>> {
        (0..self.dim())
            .map(|k| (0..self.extents[k]).map(|i| self.voxel_size * self.centered_index(k, i) * theta[k]).collect())
            .collect()
    }

    /// Calls `f(first_flat_index, base)` for every line along the last axis in
    /// lexicographic order, where `base = Σ_{k<d-1} s n_k θ_k` accumulated
    /// from the first axis.
    fn for_each_line(coords: &[Vec<T>], extents: &[usize], mut f: impl FnMut(usize, T)) {
        let last = extents.len() - 1;
        let mut idx = vec![0usize; last];
        // partial[k] = Σ_{j<k} coords[j][idx[j]]
        let mut partial = vec![T::zero(); last + 1];
        for k in 0..last {
            partial[k + 1] = partial[k] + coords[k][0];
        }
        let mut start = 0usize;
        loop {
            f(start, partial[last]);
            start += extents[last];
            let mut k = last;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < extents[k] {
                    break;
                }
                idx[k] = 0;
            }
            for j in k..last {
                partial[j + 1] = partial[j] + coords[j][idx[j]];
            }
        }
    }

    /// Calls `f(flat_index, projection)` for every voxel in lexicographic order,
    /// where `projection = Σ_k s n_k θ_k` accumulated from the first axis.
    fn for_each_projection(&self, theta: &[T], mut f: impl FnMut(usize, T)) {
        let coords = self.axis_projections(theta);
        let last = &coords[self.dim() - 1];
        Self::for_each_line(&coords, &self.extents, |start, base| {
            for (i, &c) in last.iter().enumerate() {
                f(start + i, base + c);
            }
        });
    }

    /// Like [`Self::for_each_projection`] but restricted to voxels whose
    /// projection lies within `window` of `t`, plus possibly a few just outside.
    /// Costs one range computation per line instead of a test per voxel.
    fn for_each_projection_near(&self, theta: &[T], t: T, window: T, mut f: impl FnMut(usize, T)) {
        let coords = self.axis_projections(theta);
        let last = self.dim() - 1;
        let n_last = self.extents[last];
        let step = self.voxel_size * theta[last];
        let offset = centered::<T>(0, n_last);
        let range = |base: T| -> (usize, usize) {
            if step == T::zero() {
                return if (t - base).abs() <= window { (0, n_last) } else { (0, 0) };
            }
            // solve |t - base - s (i + offset) θ| <= window for i, widened by one
            let a = (t - base - window) / step - offset;
            let b = (t - base + window) / step - offset;
            let lo = (a.min(b).floor() - T::one()).max(T::zero());
            let hi = (a.max(b).ceil() + T::one()).min(T::from_usize_lossy(n_last));
            if !(lo < hi) {
                return (0, 0);
            }
            (lo.to_usize().unwrap_or(0), hi.to_usize().unwrap_or(n_last).min(n_last))
        };
        let line = &coords[last];
        Self::for_each_line(&coords, &self.extents, |start, base| {
            let (lo, hi) = range(base);
            for i in lo..hi {
                f(start + i, base + line[i]);
            }
        });
    }
}

#[inline]
fn centered<T: Real>(i: usize, n: usize) -> T {
    T::from_usize_lossy(i) - (T::from_usize_lossy(n) - T::one()) / T::lit(2.0)
}

fn checked_len(extents: &[usize]) -> Result<usize> {
    extents
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::InvalidArgument("voxel count overflows".into()))
}

/// How each voxel's cube section is sampled.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Kernel<T> {
    Exact,
    Regularized(T),
}

impl<T: Real> Kernel<T> {
    fn new(eps: Option<T>) -> Result<Self> {
        match eps {
            None => Ok(Kernel::Exact),
            Some(e) if e > T::zero() && e.is_finite() => Ok(Kernel::Regularized(e)),
            Some(e) => invalid(format!("regularization width must be positive, got {e}")),
        }
    }

    #[inline]
    fn eval(&self, section: &CubeSection<T>, u: T) -> T {
        match *self {
            Kernel::Exact => section.area(u),
            Kernel::Regularized(eps) => section.regularized_area(u, eps),
        }
    }

    /// Summands vanish once `|t - s⟨n, θ⟩|` exceeds this.
    fn window(&self, voxel_size: T, d: usize) -> T {
        let w = voxel_size * T::from_usize_lossy(d).sqrt() / T::lit(2.0);
        match *self {
            Kernel::Exact => w,
            Kernel::Regularized(eps) => w + eps,
        }
    }
}

fn voxel_section<T: Real>(image: &VoxelImage<T>, theta: &Direction<T>) -> Result<CubeSection<T>> {
    check_dim(image.dim(), theta.dim())?;
    let a = HalfWidths::uniform(image.dim(), image.voxel_size / T::lit(2.0))?;
    CubeSection::new(&a, theta)
}

fn gather<T: Real>(image: &VoxelImage<T>, theta: &Direction<T>, t: T, eps: Option<T>, prune: bool) -> Result<T> {
    let kernel = Kernel::new(eps)?;
    let section = voxel_section(image, theta)?;
    let values = image.values();
    let mut sum = T::zero();
    let mut add = |i: usize, p: T| sum += values[i] * kernel.eval(&section, t - p);
    if prune {
        let window = kernel.window(image.voxel_size, image.dim());
        image.for_each_projection_near(theta.as_slice(), t, window, &mut add);
    } else {
        image.for_each_projection(theta.as_slice(), &mut add);
    }
    Ok(sum)
}

/// `R_θ[f_F](t)`, summing only voxels whose projection is within `s√d/2` of `t`.
pub fn discrete_radon<T: Real>(image: &VoxelImage<T>, theta: &Direction<T>, t: T) -> Result<T> {
    gather(image, theta, t, None, true)
}

/// The transform with every voxel section replaced by its slab average of
/// half-width `eps`.
pub fn discrete_radon_regularized<T: Real>(image: &VoxelImage<T>, theta: &Direction<T>, t: T, eps: T) -> Result<T> {
    gather(image, theta, t, Some(eps), true)
}

/// Reference evaluation visiting every voxel; `eps` selects the regularized variant.
pub fn discrete_radon_unpruned<T: Real>(
    image: &VoxelImage<T>,
    theta: &Direction<T>,
    t: T,
    eps: Option<T>,
) -> Result<T> {
    gather(image, theta, t, eps, false)
}

/// `∫_{t1}^{t2} R_θ[f_F](t) dt`, exact through per-voxel slab volumes.
pub fn discrete_slab_volume<T: Real>(image: &VoxelImage<T>, theta: &Direction<T>, t1: T, t2: T) -> Result<T> {
    if !(t1 < t2) {
        return invalid(format!("slab bounds must satisfy t1 < t2, got ({t1}, {t2})"));
    }
    let section = voxel_section(image, theta)?;
    let values = image.values();
    let mut sum = T::zero();
    image.for_each_projection(theta.as_slice(), |i, p| sum += values[i] * section.slab_volume(t1 - p, t2 - p));
    Ok(sum)
}

/// `∫_{-∞}^{r_k} R_θ[f_F](t) dt` for every radius of an increasing grid, in
/// one pass over the voxels.
pub fn cumulative_slab_volumes<T: Real>(image: &VoxelImage<T>, theta: &Direction<T>, radii: &[T]) -> Result<Vec<T>> {
    if radii.windows(2).any(|w| !(w[0] < w[1])) {
        return invalid("radii must be strictly increasing");
    }
    let section = voxel_section(image, theta)?;
    let (reach, volume) = (section.reach(), section.volume());
    let values = image.values();
    let mut partial = vec![T::zero(); radii.len()];
    // full[k]: mass of voxels lying entirely below r_k but not below r_{k-1}
    let mut full = vec![T::zero(); radii.len() + 1];
    image.for_each_projection(theta.as_slice(), |i, p| {
        let f = values[i];
        if f == T::zero() {
            return;
        }
        let lo = radii.partition_point(|&r| r <= p - reach);
        let hi = radii.partition_point(|&r| r < p + reach);
        for k in lo..hi {
            partial[k] += f * section.volume_below(radii[k] - p);
        }
        full[hi] += f * volume;
    });
    let mut below = T::zero();
    Ok(partial
        .into_iter()
        .zip(full)
        .map(|(v, add)| {
            below += add;
            below + v
        })
        .collect())
}

/// Radon samples on a direction × radius grid, stored row-major by direction.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram<T> {
    directions: Vec<Direction<T>>,
    radii: Vec<T>,
    values: Vec<T>,
}

impl<T: Real> Sinogram<T> {
    pub fn new(directions: Vec<Direction<T>>, radii: Vec<T>, values: Vec<T>) -> Result<Self> {
        check_dim(directions.len() * radii.len(), values.len())?;
        Ok(Self { directions, radii, values })
    }

    pub fn directions(&self) -> &[Direction<T>] {
        &self.directions
    }

    pub fn radii(&self) -> &[T] {
        &self.radii
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.directions.len(), self.radii.len())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.radii.len() + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let m = self.radii.len();
        &self.values[i * m..(i + 1) * m]
    }

    /// Writes `theta_index,t,value` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "theta_index,t,value")?;
        for i in 0..self.directions.len() {
            for (j, &t) in self.radii.iter().enumerate() {
                writeln!(out, "{},{:.16e},{:.16e}", i, t.to_f64_lossy(), self.get(i, j).to_f64_lossy())?;
            }
        }
        Ok(())
    }
}

/// `count` equispaced points on `[lo, hi]`, including both ends.
pub fn linspace<T: Real>(lo: T, hi: T, count: usize) -> Result<Vec<T>> {
    if count == 0 {
        return invalid("grid needs at least one point");
    }
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return invalid(format!("bad grid bounds [{lo}, {hi}]"));
    }
    if count == 1 {
        return Ok(vec![(lo + hi) / T::lit(2.0)]);
    }
    let step = (hi - lo) / T::from_usize_lossy(count - 1);
    Ok((0..count).map(|i| if i + 1 == count { hi } else { lo + step * T::from_usize_lossy(i) }).collect())
}

pub const DEFAULT_RADIUS_COUNT: usize = 513;

/// 513 equispaced radii over `[-r_max, r_max]` with `r_max` from
/// [`VoxelImage::max_radius`].
pub fn default_radii<T: Real>(image: &VoxelImage<T>) -> Vec<T> {
    let r = image.max_radius();
    linspace(-r, r, DEFAULT_RADIUS_COUNT).expect("valid default grid")
}

/// Half the spacing of an equispaced grid, or `None` for a single radius.
pub fn default_eps<T: Real>(radii: &[T]) -> Option<T> {
    (radii.len() >= 2).then(|| (radii[radii.len() - 1] - radii[0]) / T::from_usize_lossy(2 * (radii.len() - 1)))
}

fn check_radii<T: Real>(radii: &[T]) -> Result<()> {
    if radii.is_empty() {
        return invalid("radius grid is empty");
    }
    if radii.iter().any(|r| !r.is_finite()) {
        return invalid("radius grid has non-finite entries");
    }
    if radii.windows(2).any(|w| w[1] < w[0]) {
        return invalid("radius grid must be sorted ascending");
    }
    Ok(())
}

/// One sinogram row: each voxel scatters into the radii within its window.
/// Cells accumulate voxels in lexicographic order, matching [`discrete_radon`].
fn sinogram_row<T: Real>(
    image: &VoxelImage<T>,
    theta: &Direction<T>,
    radii: &[T],
    kernel: Kernel<T>,
) -> Result<Vec<T>> {
    let section = voxel_section(image, theta)?;
    let window = kernel.window(image.voxel_size, image.dim());
    let values = image.values();
    let mut row = vec![T::zero(); radii.len()];
    image.for_each_projection(theta.as_slice(), |i, p| {
        let f = values[i];
        if f == T::zero() {
            return;
        }
        let lo = radii.partition_point(|&r| r < p - window);
        let hi = radii.partition_point(|&r| r <= p + window);
        for j in lo.saturating_sub(1)..(hi + 1).min(radii.len()) {
            row[j] += f * kernel.eval(&section, radii[j] - p);
        }
    });
    Ok(row)
}

/// `values[i][j] = R_{θ_i}[f_F](t_j)`, or its regularized variant when `eps`
/// is given. Rows are computed in parallel; the result does not depend on
/// the thread count.
pub fn sinogram<T: Real>(
    image: &VoxelImage<T>,
    directions: &[Direction<T>],
    radii: &[T],
    eps: Option<T>,
) -> Result<Sinogram<T>> {
    if directions.is_empty() {
        return invalid("direction set is empty");
    }
    check_radii(radii)?;
    let kernel = Kernel::new(eps)?;
    let rows: Vec<Vec<T>> =
        directions.par_iter().map(|theta| sinogram_row(image, theta, radii, kernel)).collect::<Result<_>>()?;
    Sinogram::new(directions.to_vec(), radii.to_vec(), rows.concat())
}

/// Center-binning baseline: per radius `t`, the sum of `F(n)` over voxels with
/// `|s⟨n, θ⟩ - t| < b`, scaled by `s^(d-1) · s/(2b)` so that its integral
/// over `t` matches the mass of the exact transform.
pub fn binned_radon<T: Real>(
    image: &VoxelImage<T>,
    theta: &Direction<T>,
    radii: &[T],
    bin_halfwidth: T,
) -> Result<Vec<T>> {
    if !(bin_halfwidth > T::zero() && bin_halfwidth.is_finite()) {
        return invalid(format!("bin half-width must be positive, got {bin_halfwidth}"));
    }
    check_dim(image.dim(), theta.dim())?;
    check_radii(radii)?;
    let s = image.voxel_size;
    let scale = s.powi(image.dim() as i32 - 1) * s / (bin_halfwidth + bin_halfwidth);
    let values = image.values();
    let mut out = vec![T::zero(); radii.len()];
    image.for_each_projection(theta.as_slice(), |i, p| {
        let lo = radii.partition_point(|&r| r <= p - bin_halfwidth);
        for j in lo..radii.len() {
            if radii[j] >= p + bin_halfwidth {
                break;
            }
            if (p - radii[j]).abs() < bin_halfwidth {
                out[j] += values[i];
            }
        }
    });
    Ok(out.into_iter().map(|v| v * scale).collect())
}

const RVOX_MAGIC: &[u8; 4] = b"RVOX";
const RVOX_VERSION: u32 = 1;

/// Writes the little-endian `RVOX` v1 layout.
pub fn write_rvox<T: Real, W: Write>(image: &VoxelImage<T>, mut out: W) -> Result<()> {
    out.write_all(RVOX_MAGIC)?;
    out.write_all(&RVOX_VERSION.to_le_bytes())?;
    let d = u32::try_from(image.dim()).map_err(|_| Error::InvalidArgument("dimension too large".into()))?;
    out.write_all(&d.to_le_bytes())?;
    for &n in image.extents() {
        let n = u32::try_from(n).map_err(|_| Error::InvalidArgument("extent too large".into()))?;
        out.write_all(&n.to_le_bytes())?;
    }
    out.write_all(&image.voxel_size.to_f64_lossy().to_le_bytes())?;
    for &v in image.values() {
        out.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                Error::Format { offset: self.offset, msg: format!("truncated while reading {what}") }
            }
            _ => Error::Io(e),
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(what)?))
    }
}

/// Reads an `RVOX` v1 image, reporting malformed input with its byte offset.
pub fn read_rvox<T: Real, R: Read>(input: R) -> Result<VoxelImage<T>> {
    let mut r = CountingReader { inner: input, offset: 0 };
    let format = |offset: u64, msg: String| Error::Format { offset, msg };
    let magic: [u8; 4] = r.take("magic")?;
    if &magic != RVOX_MAGIC {
        return Err(format(0, "missing RVOX magic".into()));
    }
    let at = r.offset;
    let version = r.u32("version")?;
    if version != RVOX_VERSION {
        return Err(format(at, format!("unsupported version {version}")));
    }
    let at = r.offset;
    let d = r.u32("dimension")? as usize;
    if d == 0 {
        return Err(format(at, "dimension must be positive".into()));
    }
    let mut extents = Vec::with_capacity(d.min(64));
    for _ in 0..d {
        let at = r.offset;
        let n = r.u32("extent")? as usize;
        if n == 0 {
            return Err(format(at, "extent must be positive".into()));
        }
        extents.push(n);
    }
    let len = checked_len(&extents).map_err(|_| format(at, "voxel count overflows".into()))?;
    let at = r.offset;
    let s = r.f64("voxel size")?;
    if !(s > 0.0 && s.is_finite()) {
        return Err(format(at, format!("voxel size must be positive, got {s}")));
    }
    let mut values = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        let at = r.offset;
        let v = r.f64("voxel value")?;
        if !v.is_finite() {
            return Err(format(at, "non-finite voxel value".into()));
        }
        values.push(T::lit(v));
    }
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe)? != 0 {
        return Err(format(r.offset, "trailing bytes after voxel data".into()));
    }
    VoxelImage::new(extents, T::lit(s), values)
}
