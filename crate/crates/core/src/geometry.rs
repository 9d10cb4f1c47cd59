//! Closed-form hyperplane sections and slab volumes of axis-aligned boxes.
//!
//! The box is `(-a, a] = (-a_1, a_1] × … × (-a_d, a_d]`. For a direction `θ`
//! with `ℓ` nonzero entries the section area `t ↦ A_θ^a(t)` is a piecewise
//! polynomial of degree `ℓ - 1` written as an alternating sum over the `2^ℓ`
//! vertices of the box projected onto the support of `θ`:
//!
//! ```text
//! A(t) = 2^(d-ℓ) P(a) / (P((a⊙θ)°) (ℓ-1)!) · Σ_k P(k) (t + ⟨k, (a⊙θ)°⟩)_+^(ℓ-1)
//! ```
//!
//! with `0^0 := 0`. Integrating once more gives the slab volume. All functions
//! also accept non-unit directions; the result then describes the push-forward
//! density of the box volume under `x ↦ ⟨x, θ⟩`.

use crate::error::{check_dim, invalid, Error, Result};
use crate::scalar::{CompensatedSum, Real};

/// Largest support size for which `ℓ!` is representable in double precision.
pub const MAX_SUPPORT: usize = 170;

/// Vertex tables are materialized up to this support size and generated on
/// the fly beyond it.
const MAX_TABLE_SUPPORT: usize = 16;

/// Support size from which vertex sums switch to compensated accumulation.
const COMPENSATED_FROM: usize = 10;

/// Half-widths `a ∈ ℝ^d_{>0}` of the box `(-a, a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfWidths<T> {
    a: Vec<T>,
}

impl<T: Real> HalfWidths<T> {
    pub fn new(a: Vec<T>) -> Result<Self> {
        if a.is_empty() {
            return invalid("half-widths must have at least one entry");
        }
        if let Some(bad) = a.iter().find(|x| !(x.is_finite() && **x > T::zero())) {
            return invalid(format!("half-widths must be finite and positive, got {bad}"));
        }
        Ok(Self { a })
    }

    /// The cube `(-h, h]^d`.
    pub fn uniform(d: usize, h: T) -> Result<Self> {
        Self::new(vec![h; d])
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.a
    }

    /// Box volume `2^d P(a)`.
    pub fn volume(&self) -> T {
        self.a.iter().fold(T::one(), |acc, &x| acc * (x + x))
    }
}

/// A projection direction together with its support.
///
/// Entries count as zero only when they are exactly `0.0`; use
/// [`snap_tolerance`] beforehand to flush near-zero entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Direction<T> {
    theta: Vec<T>,
    support: Vec<usize>,
}

impl<T: Real> Direction<T> {
    /// A unit vector; rejects vectors whose norm differs from one by more
    /// than [`Real::unit_tolerance`].
    pub fn unit(theta: Vec<T>) -> Result<Self> {
        let dir = Self::raw(theta)?;
        let norm = dir.norm();
        if (norm - T::one()).abs() > T::unit_tolerance() {
            return invalid(format!("direction is not unit length (norm {norm})"));
        }
        Ok(dir)
    }

    /// Normalizes `theta` to unit length.
    pub fn normalized(theta: Vec<T>) -> Result<Self> {
        let dir = Self::raw(theta)?;
        let norm = dir.norm();
        Self::raw(dir.theta.into_iter().map(|x| x / norm).collect())
    }

    /// Any finite nonzero vector, used as-is.
    pub fn raw(theta: Vec<T>) -> Result<Self> {
        if theta.is_empty() {
            return invalid("direction must have at least one entry");
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return invalid("direction entries must be finite");
        }
        let support: Vec<usize> = theta.iter().enumerate().filter(|(_, x)| **x != T::zero()).map(|(j, _)| j).collect();
        if support.is_empty() {
            return invalid("direction must not be the zero vector");
        }
        Ok(Self { theta, support })
    }

    /// The coordinate axis `e_i` in `ℝ^d`.
    pub fn axis(d: usize, i: usize) -> Result<Self> {
        if i >= d {
            return invalid(format!("axis index {i} out of range for dimension {d}"));
        }
        let mut theta = vec![T::zero(); d];
        theta[i] = T::one();
        Self::raw(theta)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.theta
    }

    /// Indices of the nonzero entries, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Number of nonzero entries `ℓ = ‖θ‖₀`.
    pub fn ell(&self) -> usize {
        self.support.len()
    }

    pub fn norm(&self) -> T {
        self.theta.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn negated(&self) -> Self {
        Self { theta: self.theta.iter().map(|&x| -x).collect(), support: self.support.clone() }
    }

    pub fn dot(&self, x: &[T]) -> T {
        self.theta.iter().zip(x).map(|(&a, &b)| a * b).sum()
    }

    pub fn into_vec(self) -> Vec<T> {
        self.theta
    }
}

/// The slab `{x : ⟨x, θ⟩ ∈ [t1, t2]}` as an offset interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlabInterval<T> {
    t1: T,
    t2: T,
}

impl<T: Real> SlabInterval<T> {
    pub fn new(t1: T, t2: T) -> Result<Self> {
        if !(t1 < t2) {
            return invalid(format!("slab requires t1 < t2, got [{t1}, {t2}]"));
        }
        Ok(Self { t1, t2 })
    }

    pub fn lower(&self) -> T {
        self.t1
    }

    pub fn upper(&self) -> T {
        self.t2
    }
}

/// `Π_j x_j`; the empty product is one.
pub fn product_all<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::one(), |acc, &v| acc * v)
}

/// `x°`: the nonzero entries of `x` in their original order.
pub fn restrict_to_support<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().copied().filter(|v| *v != T::zero()).collect()
}

/// Flushes entries with `|x_j| <= tol` to exactly zero. `tol = 0` is the identity.
pub fn snap_tolerance<T: Real>(x: &[T], tol: T) -> Vec<T> {
    x.iter().map(|&v| if v.abs() <= tol { T::zero() } else { v }).collect()
}

fn factorial<T: Real>(n: usize) -> T {
    (2..=n).fold(T::one(), |acc, k| acc * T::from_usize_lossy(k))
}

fn pow2<T: Real>(n: usize) -> T {
    T::lit(2.0).powi(n as i32)
}

/// Half central difference `[(x + β)_+^p - (x - β)_+^p] / (2β)` for `β > 0`,
/// evaluated without subtracting nearly equal powers.
#[inline]
fn half_difference<T: Real>(x: T, beta: T, p: i32) -> T {
    if p == 0 {
        // indicator of (-β, β]
        return if x > -beta && x <= beta { T::one() / (beta + beta) } else { T::zero() };
    }
    if x <= -beta {
        return T::zero();
    }
    if x < beta {
        return (x + beta).powi(p) / (beta + beta);
    }
    // both powers active: keep the odd binomial terms Σ C(p, j) x^(p-j) β^(j-1)
    let mut sum = T::zero();
    let mut binom = T::from_usize_lossy(p as usize); // C(p, 1)
    let beta_sq = beta * beta;
    let mut beta_pow = T::one(); // β^(j-1)
    let mut j = 1;
    while j <= p {
        sum += binom * x.powi(p - j) * beta_pow;
        // C(p, j+2) = C(p, j) (p-j)(p-j-1) / ((j+1)(j+2))
        let (pj, jj) = (T::from_usize_lossy((p - j) as usize), T::from_usize_lossy(j as usize));
        binom = binom * pj * (pj - T::one()) / ((jj + T::one()) * (jj + T::lit(2.0)));
        beta_pow *= beta_sq;
        j += 2;
    }
    sum
}

/// The vertex sum `Σ_k P(k) (t + ⟨k, b⟩)_+^p / P(b)` organized in pairs.
///
/// Vertices are paired across the coordinate `m` with the smallest `|b_m|`;
/// each pair contributes `P(k') · 2·half_difference(t + ⟨k', b'⟩, |b_m|, p)`
/// divided by `P(b')`, where `k'`, `b'` drop coordinate `m`. The remaining
/// `2^(ℓ-1)` pairs are visited in lexicographic order of `k'`.
#[derive(Clone, Debug)]
struct VertexTable<T> {
    reduced: Vec<T>,
    beta: T,
    table: Option<Vec<(bool, T)>>,
}

impl<T: Real> VertexTable<T> {
    /// `b` must be nonempty; returns the table and the index `m` it pairs over.
    fn new(b: &[T]) -> (Self, usize) {
        let m = (0..b.len())
            .min_by(|&i, &j| b[i].abs().partial_cmp(&b[j].abs()).expect("finite"))
            .expect("nonempty support");
        let reduced: Vec<T> = b.iter().enumerate().filter(|(j, _)| *j != m).map(|(_, &v)| v).collect();
        let table = (reduced.len() < MAX_TABLE_SUPPORT)
            .then(|| (0..1usize << reduced.len()).map(|mask| Self::vertex(&reduced, mask)).collect());
        (Self { reduced, beta: b[m].abs(), table }, m)
    }

    /// `(P(k') > 0, ⟨k', b'⟩)` for the vertex encoded by `mask`; bit
    /// `n-1-j` set means `k'_j = +1`.
    #[inline]
    fn vertex(b: &[T], mask: usize) -> (bool, T) {
        let n = b.len();
        let mut offset = T::zero();
        let mut negatives = 0usize;
        for (j, &bj) in b.iter().enumerate() {
            if (mask >> (n - 1 - j)) & 1 == 1 {
                offset += bj;
            } else {
                offset -= bj;
                negatives += 1;
            }
        }
        (negatives.is_multiple_of(2), offset)
    }

    fn fold(&self, term: impl Fn(T) -> T) -> T {
        let signed = |(positive, offset): (bool, T)| {
            let v = term(offset);
            if positive {
                v
            } else {
                -v
            }
        };
        let compensated = self.reduced.len() + 1 >= COMPENSATED_FROM;
        match &self.table {
            Some(table) => accumulate(table.iter().map(|&v| signed(v)), compensated),
            None => accumulate(
                (0..1usize << self.reduced.len()).map(|mask| signed(Self::vertex(&self.reduced, mask))),
                compensated,
            ),
        }
    }

    /// `Σ_{k'} P(k') · 2·half_difference(t + ⟨k', b'⟩, β, p)`.
    fn paired_sum(&self, t: T, p: i32) -> T {
        let two = T::lit(2.0);
        self.fold(|offset| two * half_difference(t + offset, self.beta, p))
    }

    /// Same as [`Self::paired_sum`] for the difference of the values at `hi` and `lo`.
    fn paired_difference(&self, lo: T, hi: T, p: i32) -> T {
        let two = T::lit(2.0);
        self.fold(|offset| {
            two * (half_difference(hi + offset, self.beta, p) - half_difference(lo + offset, self.beta, p))
        })
    }
}

fn accumulate<T: Real>(terms: impl Iterator<Item = T>, compensated: bool) -> T {
    if compensated {
        let mut acc = CompensatedSum::new();
        terms.for_each(|x| acc.add(x));
        acc.value()
    } else {
        terms.fold(T::zero(), |acc, x| acc + x)
    }
}

/// The section-area profile `t ↦ A_θ^a(t)` of one box along one direction,
/// with every `t`-independent quantity precomputed.
#[derive(Clone, Debug)]
pub struct CubeSection<T> {
    vertices: VertexTable<T>,
    ell: usize,
    area_scale: T,
    volume_scale: T,
    reach: T,
    volume: T,
}

impl<T: Real> CubeSection<T> {
    pub fn new(a: &HalfWidths<T>, theta: &Direction<T>) -> Result<Self> {
        check_dim(a.dim(), theta.dim())?;
        let ell = theta.ell();
        if ell > MAX_SUPPORT {
            return invalid(format!("direction support {ell} exceeds the supported maximum {MAX_SUPPORT}"));
        }
        let d = a.dim();
        let av = a.as_slice();
        let th = theta.as_slice();

        let b: Vec<T> = theta.support().iter().map(|&j| av[j] * th[j]).collect();
        let reach = b.iter().map(|x| x.abs()).sum();
        let (vertices, paired) = VertexTable::new(&b);
        let paired = theta.support()[paired];

        // P(a) / P(b') where b' drops the paired coordinate:
        // Π_{θ_j = 0} a_j · a_m / Π_{θ_j ≠ 0, j ≠ m} θ_j
        let mut ratio = av[paired];
        for j in 0..d {
            if th[j] == T::zero() {
                ratio *= av[j];
            } else if j != paired {
                ratio /= th[j];
            }
        }
        let base = pow2::<T>(d - ell) * ratio;
        let area_scale = base / factorial::<T>(ell - 1);
        let volume_scale = base / factorial::<T>(ell);
        if !(area_scale.is_finite() && volume_scale.is_finite()) {
            return Err(Error::Degenerate(format!("normalization overflows for support size {ell}")));
        }

        Ok(Self { vertices, ell, area_scale, volume_scale, reach, volume: a.volume() })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    /// `Σ_j a_j |θ_j|`: the section is empty for `|t|` beyond this.
    pub fn reach(&self) -> T {
        self.reach
    }

    /// Box volume `2^d P(a)`.
    pub fn volume(&self) -> T {
        self.volume
    }

    /// `A_θ^a(t)`, clamped to be nonnegative.
    pub fn area(&self, t: T) -> T {
        if t > self.reach || t < -self.reach {
            return T::zero();
        }
        // continuous for ℓ >= 2, vanishing at the extreme corners
        if self.ell >= 2 && t.abs() == self.reach {
            return T::zero();
        }
        // A(t) = A(-t); on the lower side fewer vertices are active, so
        // less cancels. For ℓ = 1 the half-open support breaks the symmetry.
        let u = if self.ell >= 2 { -t.abs() } else { t };
        let sum = self.vertices.paired_sum(u, (self.ell - 1) as i32);
        (self.area_scale * sum).max(T::zero())
    }

    /// `V_θ^a(t1, t2)`; zero when `t1 >= t2`.
    pub fn slab_volume(&self, t1: T, t2: T) -> T {
        let lo = t1.max(-self.reach);
        let hi = t2.min(self.reach);
        if lo <= -self.reach && hi >= self.reach {
            return self.volume;
        }
        if !(lo < hi) {
            return T::zero();
        }
        // reflect slabs lying above the center, as for the area
        let (lo, hi) = if lo + hi > T::zero() { (-hi, -lo) } else { (lo, hi) };
        let sum = self.vertices.paired_difference(lo, hi, self.ell as i32);
        (self.volume_scale * sum).max(T::zero()).min(self.volume)
    }

    /// Volume of the box below the hyperplane: `V_θ^a(-∞, t)`.
    pub fn volume_below(&self, t: T) -> T {
        if t >= self.reach {
            return self.volume;
        }
        if t <= -self.reach {
            return T::zero();
        }
        self.slab_volume(-self.reach, t)
    }

    /// `V_θ^a(t - eps, t + eps) / (2 eps)`.
    pub fn regularized_area(&self, t: T, eps: T) -> T {
        self.slab_volume(t - eps, t + eps) / (eps + eps)
    }
}

/// `A_θ^a(t)`: the `(d-1)`-dimensional measure of `(-a, a] ∩ {⟨x, θ⟩ = t}`
/// (scaled by `1/‖θ‖` for non-unit `θ`).
pub fn cube_plane_area<T: Real>(a: &HalfWidths<T>, theta: &Direction<T>, t: T) -> Result<T> {
    Ok(CubeSection::new(a, theta)?.area(t))
}

/// `V_θ^a(t1, t2)`: volume of the box inside the slab.
pub fn cube_slab_volume<T: Real>(a: &HalfWidths<T>, theta: &Direction<T>, slab: SlabInterval<T>) -> Result<T> {
    Ok(CubeSection::new(a, theta)?.slab_volume(slab.lower(), slab.upper()))
}

/// `V_θ^a(t - eps, t + eps) / (2 eps)`, which tends to `A_θ^a(t)` as `eps → 0`.
pub fn cube_plane_area_regularized<T: Real>(a: &HalfWidths<T>, theta: &Direction<T>, t: T, eps: T) -> Result<T> {
    if !(eps > T::zero()) {
        return invalid(format!("regularization width must be positive, got {eps}"));
    }
    Ok(CubeSection::new(a, theta)?.regularized_area(t, eps))
}

/// The axis-aligned case `ℓ = 1`: `2^(d-1) P(a) / (a_i |θ_i|)` on `(-a_i|θ_i|, a_i|θ_i|]`.
fn axis_aligned_area<T: Real>(a: &[T], theta: &[T], i: usize, t: T) -> T {
    let half = a[i] * theta[i].abs();
    if t > -half && t <= half {
        let others = a.iter().enumerate().filter(|(j, _)| *j != i).fold(T::one(), |acc, (_, &x)| acc * (x + x));
        others / theta[i].abs()
    } else {
        T::zero()
    }
}

/// Corner projections `⟨θ, a⊙k⟩` sorted ascending (stable), each tagged with
/// whether the corner has even Hamming distance from the lowest corner.
fn sorted_corner_projections<T: Real>(a: &[T], theta: &[T]) -> Vec<(T, bool)> {
    let d = a.len();
    let lowest: Vec<bool> = theta.iter().map(|&x| x > T::zero()).collect();
    let mut corners: Vec<(T, bool)> = (0..1usize << d)
        .map(|mask| {
            let mut t = T::zero();
            let mut flips = 0usize;
            for j in 0..d {
                let plus = (mask >> (d - 1 - j)) & 1 == 1;
                t += if plus { a[j] * theta[j] } else { -(a[j] * theta[j]) };
                // the lowest corner takes k_j = -sign(θ_j)
                if plus == lowest[j] {
                    flips += 1;
                }
            }
            (t, flips.is_multiple_of(2))
        })
        .collect();
    corners.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite projections"));
    corners
}

fn two_dim_area<T: Real>(a: &[T], theta: &[T], t: T) -> T {
    let ts: Vec<T> = sorted_corner_projections(a, theta).into_iter().map(|(t, _)| t).collect();
    let (t1, t2, t3, t4) = (ts[0], ts[1], ts[2], ts[3]);
    let inv = T::one() / (theta[0] * theta[1]).abs();
    let value = if t <= t1 || t >= t4 {
        T::zero()
    } else if t <= t2 {
        t - t1
    } else if t <= t3 {
        t2 - t1
    } else if t <= t4 {
        t4 - t
    } else {
        T::zero()
    };
    (value * inv).max(T::zero())
}

/// Explicit piecewise-linear section length of a rectangle.
pub fn cube_plane_area_2d<T: Real>(a: &HalfWidths<T>, theta: &Direction<T>, t: T) -> Result<T> {
    check_dim(2, a.dim())?;
    check_dim(2, theta.dim())?;
    let (av, th) = (a.as_slice(), theta.as_slice());
    Ok(match theta.ell() {
        1 => axis_aligned_area(av, th, theta.support()[0], t),
        _ => two_dim_area(av, th, t),
    })
}

/// Explicit piecewise-quadratic section area of a 3D box.
///
/// For `ℓ = 3` the eight corner projections are symmetric about zero and the
/// profile is evaluated on `t <= 0`, then reflected. Below zero only the
/// lowest corner (sign `+`), its two nearest neighbours (sign `-`) and the
/// fourth corner contribute; the fourth corner is either the last neighbour
/// (sign `-`) or the corner opposite the lowest one across the face spanned
/// by the two smallest extents (sign `+`), depending on whether the largest
/// extent `a_j|θ_j|` exceeds the sum of the other two.
pub fn cube_plane_area_3d<T: Real>(a: &HalfWidths<T>, theta: &Direction<T>, t: T) -> Result<T> {
    check_dim(3, a.dim())?;
    check_dim(3, theta.dim())?;
    let (av, th) = (a.as_slice(), theta.as_slice());
    match theta.ell() {
        1 => return Ok(axis_aligned_area(av, th, theta.support()[0], t)),
        2 => {
            let zero = (0..3).find(|&j| th[j] == T::zero()).expect("one zero entry");
            let a2: Vec<T> = (0..3).filter(|&j| j != zero).map(|j| av[j]).collect();
            let th2: Vec<T> = (0..3).filter(|&j| j != zero).map(|j| th[j]).collect();
            return Ok((av[zero] + av[zero]) * two_dim_area(&a2, &th2, t));
        }
        _ => {}
    }

    let corners = sorted_corner_projections(av, th);
    let (t1, t2, t3, t4) = (corners[0].0, corners[1].0, corners[2].0, corners[3].0);
    let fourth_sign = if corners[3].1 { T::one() } else { -T::one() };
    let u = if t > T::zero() { -t } else { t };
    if u <= t1 || -u >= corners[7].0 {
        return Ok(T::zero());
    }
    let inv = T::one() / (T::lit(2.0) * (th[0] * th[1] * th[2]).abs());
    let sq = |x: T| x * x;
    let value = if u <= t1 {
        T::zero()
    } else if u <= t2 {
        sq(u - t1)
    } else if u <= t3 {
        (t2 - t1) * (u + u - t2 - t1)
    } else if u <= t4 {
        (t2 - t1) * (u + u - t2 - t1) - sq(u - t3)
    } else {
        (t2 - t1) * (u + u - t2 - t1) - sq(u - t3) + fourth_sign * sq(u - t4)
    };
    Ok((value * inv).max(T::zero()))
}

/// `k`-fold convolution of the indicators `1_{b_j}` of `(-b_j, b_j]` under the
/// `(2π)^{-1/2}`-normalized convolution.
pub fn indicator_convolution<T: Real>(b: &[T], t: T) -> Result<T> {
    if b.is_empty() {
        return invalid("indicator convolution needs at least one factor");
    }
    if b.len() > MAX_SUPPORT {
        return invalid(format!("at most {MAX_SUPPORT} factors supported"));
    }
    if let Some(bad) = b.iter().find(|x| !(x.is_finite() && **x > T::zero())) {
        return invalid(format!("indicator half-widths must be positive, got {bad}"));
    }
    let k = b.len();
    let two_pi = T::TAU();
    let scale = two_pi.powf(T::lit((1.0 - k as f64) / 2.0)) / factorial::<T>(k - 1);
    let (table, m) = VertexTable::new(b);
    // the paired sum carries a factor 1/b_m
    Ok(scale * b[m] * table.paired_sum(t, (k - 1) as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hw(a: &[f64]) -> HalfWidths<f64> {
        HalfWidths::new(a.to_vec()).unwrap()
    }

    fn unit(v: &[f64]) -> Direction<f64> {
        Direction::normalized(v.to_vec()).unwrap()
    }

    #[test]
    fn product_and_support_helpers() {
        assert_eq!(product_all(&[2.0, 3.0]), 6.0);
        assert_eq!(product_all::<f64>(&[]), 1.0);
        assert_eq!(product_all(&[1.0, -1.0, 5.0]), -5.0);
        assert_eq!(restrict_to_support(&[0.0, 3.0, 0.0, -2.0]), vec![3.0, -2.0]);
        assert!(restrict_to_support(&[0.0, 0.0]).is_empty());
        assert_eq!(restrict_to_support(&[1.0, 2.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn snapping_is_opt_in() {
        let v = [1e-14, 0.5, -2e-14];
        assert_eq!(snap_tolerance(&v, 0.0), v.to_vec());
        assert_eq!(snap_tolerance(&v, 1e-12), vec![0.0, 0.5, 0.0]);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(HalfWidths::new(vec![1.0, 0.0]).is_err());
        assert!(HalfWidths::new(vec![1.0, -2.0]).is_err());
        assert!(HalfWidths::<f64>::new(vec![]).is_err());
        assert!(Direction::raw(vec![0.0, 0.0]).is_err());
        assert!(Direction::unit(vec![1.0, 1.0]).is_err());
        assert!(SlabInterval::new(1.0, 1.0).is_err());
        let err = cube_plane_area(&hw(&[1.0, 1.0]), &unit(&[1.0, 0.0, 0.0]), 0.0);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        assert!(cube_plane_area_regularized(&hw(&[1.0]), &unit(&[1.0]), 0.0, 0.0).is_err());
        assert!(indicator_convolution::<f64>(&[], 0.0).is_err());
        assert!(indicator_convolution(&[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn direction_support_is_exact() {
        let dir = Direction::raw(vec![0.0, 1e-300, -0.0, 2.0]).unwrap();
        assert_eq!(dir.support(), &[1, 3]);
        assert_eq!(dir.ell(), 2);
    }

    #[test]
    fn area_examples() {
        let a = hw(&[1.0, 1.0]);
        assert_relative_eq!(cube_plane_area(&a, &unit(&[1.0, 0.0]), 0.0).unwrap(), 2.0);
        assert_relative_eq!(
            cube_plane_area(&a, &unit(&[1.0, 1.0]), 0.0).unwrap(),
            2.0 * 2f64.sqrt(),
            max_relative = 1e-14
        );
        let half = hw(&[0.5, 0.5, 0.5]);
        assert_relative_eq!(
            cube_plane_area(&half, &unit(&[1.0, 1.0, 0.0]), 0.0).unwrap(),
            2f64.sqrt(),
            max_relative = 1e-14
        );
        let diag = unit(&[1.0, 1.0, 1.0]);
        assert_relative_eq!(cube_plane_area(&half, &diag, 0.0).unwrap(), 3.0 * 3f64.sqrt() / 4.0, max_relative = 1e-14);
        let reach = 1.5 / 3f64.sqrt();
        assert_eq!(cube_plane_area(&half, &diag, 2.0 * reach).unwrap(), 0.0);
    }

    #[test]
    fn axis_direction_is_half_open() {
        let a = hw(&[1.0, 1.0]);
        let e1 = unit(&[1.0, 0.0]);
        assert_eq!(cube_plane_area(&a, &e1, 1.0).unwrap(), 2.0);
        assert_eq!(cube_plane_area(&a, &e1, -1.0).unwrap(), 0.0);
        assert_eq!(cube_plane_area_2d(&a, &e1, 1.0).unwrap(), 2.0);
        assert_eq!(cube_plane_area_2d(&a, &e1, -1.0).unwrap(), 0.0);
    }

    #[test]
    fn two_dim_corollary_examples() {
        let a = hw(&[1.0, 1.0]);
        let diag = unit(&[1.0, 1.0]);
        assert_eq!(cube_plane_area_2d(&a, &diag, 2f64.sqrt()).unwrap(), 0.0);
        assert_relative_eq!(
            cube_plane_area_2d(&a, &diag, -1.0 / 2f64.sqrt()).unwrap(),
            2f64.sqrt(),
            max_relative = 1e-14
        );
        assert_eq!(cube_plane_area_2d(&hw(&[2.0, 1.0]), &unit(&[0.0, 1.0]), 0.5).unwrap(), 4.0);
        assert!(cube_plane_area_2d(&hw(&[1.0, 1.0, 1.0]), &unit(&[1.0, 1.0, 1.0]), 0.0).is_err());
    }

    #[test]
    fn three_dim_corollary_examples() {
        let half = hw(&[0.5, 0.5, 0.5]);
        let diag = unit(&[1.0, 1.0, 1.0]);
        // √3/2 rounds one ulp inside the corner projection of the normalized θ
        assert!(cube_plane_area_3d(&half, &diag, 3f64.sqrt() / 2.0).unwrap() < 1e-15);
        let reach = CubeSection::new(&half, &diag).unwrap().reach();
        assert_eq!(cube_plane_area_3d(&half, &diag, reach).unwrap(), 0.0);
        assert_eq!(cube_plane_area(&half, &diag, reach).unwrap(), 0.0);
        assert_relative_eq!(
            cube_plane_area_3d(&half, &diag, 0.0).unwrap(),
            3.0 * 3f64.sqrt() / 4.0,
            max_relative = 1e-14
        );
        assert_eq!(cube_plane_area_3d(&half, &unit(&[0.0, 0.0, 1.0]), 0.2).unwrap(), 1.0);
        assert!(cube_plane_area_3d(&hw(&[1.0, 1.0]), &unit(&[1.0, 1.0]), 0.0).is_err());
    }

    #[test]
    fn three_dim_corollary_long_box_uses_positive_fourth_corner() {
        // extents (1, 1, 10): the fourth-lowest corner lies across a face
        let a = hw(&[1.0, 1.0, 10.0]);
        let theta = Direction::raw(vec![1.0, 1.0, 1.0]).unwrap();
        for t in [-9.0, -8.5, -5.0, -1.0, 0.0, 3.0, 8.9] {
            let general = cube_plane_area(&a, &theta, t).unwrap();
            let explicit = cube_plane_area_3d(&a, &theta, t).unwrap();
            assert_relative_eq!(general, explicit, max_relative = 1e-12);
        }
        // density of x + y + z at 0 is the 2x2 cross-section of the short axes
        assert_relative_eq!(cube_plane_area(&a, &theta, 0.0).unwrap(), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn slab_examples() {
        let v = cube_slab_volume(&hw(&[1.0]), &unit(&[1.0]), SlabInterval::new(0.0, 0.5).unwrap());
        assert_relative_eq!(v.unwrap(), 0.5, max_relative = 1e-15);
        let half = hw(&[0.5, 0.5, 0.5]);
        let v = cube_slab_volume(&half, &unit(&[0.3, -0.4, 0.5]), SlabInterval::new(-2.0, 2.0).unwrap());
        assert_eq!(v.unwrap(), 1.0);
        let v = cube_slab_volume(
            &hw(&[1.0, 1.0]),
            &unit(&[1.0, 1.0]),
            SlabInterval::new(-2f64.sqrt(), 2f64.sqrt()).unwrap(),
        );
        assert_relative_eq!(v.unwrap(), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn regularized_examples() {
        let a = hw(&[1.0, 1.0]);
        let r = cube_plane_area_regularized(&a, &unit(&[1.0, 0.0]), 0.0, 0.1).unwrap();
        assert_relative_eq!(r, 2.0, max_relative = 1e-14);
        // width covering the whole support
        let half = hw(&[0.5, 0.5, 0.5]);
        let theta = unit(&[1.0, 2.0, 3.0]);
        let eps = 5.0;
        let r = cube_plane_area_regularized(&half, &theta, 0.3, eps).unwrap();
        assert_relative_eq!(r, 1.0 / (2.0 * eps), max_relative = 1e-14);
    }

    #[test]
    fn indicator_convolution_examples() {
        assert_eq!(indicator_convolution(&[1.0], 0.0).unwrap(), 1.0);
        assert_relative_eq!(
            indicator_convolution(&[1.0, 1.0], 0.0).unwrap(),
            2.0 / (2.0 * std::f64::consts::PI).sqrt(),
            max_relative = 1e-14
        );
        assert_eq!(indicator_convolution(&[1.0, 1.0], 3.0).unwrap(), 0.0);
    }

    #[test]
    fn single_precision_path() {
        let a = HalfWidths::<f32>::new(vec![1.0, 1.0]).unwrap();
        let theta = Direction::<f32>::normalized(vec![1.0, 1.0]).unwrap();
        let v = cube_plane_area(&a, &theta, 0.0).unwrap();
        assert!((v - 2.0 * 2f32.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn large_support_uses_generated_vertices() {
        // ℓ = 18 exceeds the table size; the full-range slab is still exact
        let d = 18;
        let a = HalfWidths::uniform(d, 0.5).unwrap();
        let theta = Direction::normalized((1..=d).map(|i| i as f64).collect()).unwrap();
        let section = CubeSection::new(&a, &theta).unwrap();
        assert_eq!(section.slab_volume(-100.0, 100.0), 1.0);
        let mid = section.slab_volume(-section.reach(), 0.0);
        assert_relative_eq!(mid, 0.5, max_relative = 1e-9);
    }
}
