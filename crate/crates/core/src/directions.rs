//! Direction sets on S¹, S² and S³.

use std::f64::consts::PI;
use std::io::Write;

use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};
use crate::geometry::Direction;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    CircleEquispaced,
    SphericalGrid,
    Fibonacci,
    SobolGaussian,
    Explicit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionSet<T> {
    dim: usize,
    points: Vec<Direction<T>>,
    scheme: Scheme,
}

impl<T: Real> DirectionSet<T> {
    /// Normalizes each vector; rejects empty sets, mixed dimensions and
    /// duplicate points.
    pub fn explicit(vectors: Vec<Vec<T>>) -> Result<Self> {
        let points = vectors.into_iter().map(Direction::normalized).collect::<Result<Vec<_>>>()?;
        Self::from_points(points, Scheme::Explicit)
    }

    fn from_points(points: Vec<Direction<T>>, scheme: Scheme) -> Result<Self> {
        let Some(first) = points.first() else {
            return invalid("direction set is empty");
        };
        let dim = first.dim();
        if let Some(p) = points.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: p.dim() });
        }
        let set = Self { dim, points, scheme };
        if set.min_pairwise_distance() == Some(T::zero()) {
            return invalid("direction set contains duplicate points");
        }
        Ok(set)
    }

    fn from_f64(points: Vec<Vec<f64>>, scheme: Scheme) -> Result<Self> {
        let points = points
            .into_iter()
            .map(|p| Direction::unit(p.into_iter().map(T::lit).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_points(points, scheme)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn points(&self) -> &[Direction<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Direction<T>> {
        self.points
    }

    /// Smallest Euclidean distance between two points, `None` for a single point.
    pub fn min_pairwise_distance(&self) -> Option<T> {
        let mut best: Option<T> = None;
        for (i, p) in self.points.iter().enumerate() {
            for q in &self.points[i + 1..] {
                let dist = p.as_slice().iter().zip(q.as_slice()).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt();
                best = Some(best.map_or(dist, |b| b.min(dist)));
            }
        }
        best
    }

    /// Writes `index,x1,...,xd` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|j| format!("x{j}")).collect();
        writeln!(out, "index,{}", header.join(","))?;
        for (i, p) in self.points.iter().enumerate() {
            write!(out, "{i}")?;
            for &x in p.as_slice() {
                write!(out, ",{:.16e}", x.to_f64_lossy())?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// `(sin(π num/den), cos(π num/den))`, exact at multiples of `π/2`.
fn sin_cos_pi_fraction(num: usize, den: usize) -> (f64, f64) {
    // reduce to a full turn, then to the first quadrant
    let period = 2 * den;
    let r = num % period;
    let quadrant = (4 * r) / period;
    let rem = 4 * r - quadrant * period;
    if rem == 0 {
        return [(0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0)][quadrant];
    }
    let angle = PI * rem as f64 / (4 * den) as f64;
    let (s, c) = angle.sin_cos();
    match quadrant {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

/// `θ_i = (cos(πi/n), sin(πi/n))` for `i = 0..n`: the half circle.
pub fn circle_equispaced<T: Real>(n: usize) -> Result<DirectionSet<T>> {
    if n == 0 {
        return invalid("circle needs at least one direction");
    }
    let points = (0..n)
        .map(|i| {
            let (s, c) = sin_cos_pi_fraction(i, n);
            vec![c, s]
        })
        .collect();
    DirectionSet::from_f64(points, Scheme::CircleEquispaced)
}

/// `(sin ϑ1 sin ϑ2, cos ϑ1 sin ϑ2, cos ϑ2)` on the spherical-coordinate grid
/// `ϑ1 = 2πi/n1`, `ϑ2 = πj/(n2 - 1)`, with each pole kept once.
pub fn spherical_grid<T: Real>(n1: usize, n2: usize) -> Result<DirectionSet<T>> {
    if n1 == 0 || n2 == 0 {
        return invalid("spherical grid counts must be positive");
    }
    let mut points = Vec::with_capacity(n1 * n2.saturating_sub(2) + 2);
    for j in 0..n2 {
        let (s2, c2) = if n2 == 1 { (0.0, 1.0) } else { sin_cos_pi_fraction(j, n2 - 1) };
        if s2 == 0.0 {
            points.push(vec![0.0, 0.0, c2]);
            continue;
        }
        for i in 0..n1 {
            let (s1, c1) = sin_cos_pi_fraction(2 * i, n1);
            points.push(vec![s1 * s2, c1 * s2, c2]);
        }
    }
    DirectionSet::from_f64(points, Scheme::SphericalGrid)
}

/// Golden angle `π(3 - √5)`.
pub fn golden_angle() -> f64 {
    PI * (3.0 - 5f64.sqrt())
}

/// Point `i = 1..=n` has azimuth `iφ` and height `z = 1 - (2i - 1)/n`.
pub fn fibonacci_sphere<T: Real>(n: usize) -> Result<DirectionSet<T>> {
    if n == 0 {
        return invalid("Fibonacci set needs at least one point");
    }
    let phi = golden_angle();
    let points = (1..=n)
        .map(|i| {
            let z = 1.0 - (2 * i - 1) as f64 / n as f64;
            let r = ((1.0 - z) * (1.0 + z)).sqrt();
            let (s, c) = (i as f64 * phi).sin_cos();
            vec![s * r, c * r, z]
        })
        .collect();
    DirectionSet::from_f64(points, Scheme::Fibonacci)
}

/// Unscrambled Sobol sequence in four dimensions with Joe–Kuo direction
/// numbers, generated in Gray-code order.
#[derive(Clone, Debug)]
pub struct Sobol4 {
    directions: [[u32; 32]; 4],
    state: [u32; 4],
    index: u64,
}

impl Default for Sobol4 {
    fn default() -> Self {
        Self::new()
    }
}

impl Sobol4 {
    const BITS: usize = 32;
    // (s, a, m_1..m_s) for dimensions 2..=4
    const PARAMS: [(usize, u32, &'static [u32]); 3] = [(1, 0, &[1]), (2, 1, &[1, 3]), (3, 1, &[1, 3, 1])];

    pub fn new() -> Self {
        let mut directions = [[0u32; 32]; 4];
        for (i, v) in directions[0].iter_mut().enumerate() {
            *v = 1 << (Self::BITS - 1 - i);
        }
        for (dim, &(s, a, m)) in Self::PARAMS.iter().enumerate() {
            let v = &mut directions[dim + 1];
            for i in 0..s {
                v[i] = m[i] << (Self::BITS - 1 - i);
            }
            for i in s..Self::BITS {
                let mut x = v[i - s] ^ (v[i - s] >> s);
                for k in 1..s {
                    if (a >> (s - 1 - k)) & 1 == 1 {
                        x ^= v[i - k];
                    }
                }
                v[i] = x;
            }
        }
        Self { directions, state: [0; 4], index: 0 }
    }

    /// Index of the point the next call to [`Self::next_point`] returns.
    pub fn index(&self) -> u64 {
        self.index
    }

    /// The next point in `[0, 1)^4`; the first is the origin.
    pub fn next_point(&mut self) -> Result<[f64; 4]> {
        if self.index >= 1 << Self::BITS {
            return Err(Error::InvalidArgument("Sobol sequence exhausted".into()));
        }
        let scale = 1.0 / (1u64 << Self::BITS) as f64;
        let out = self.state.map(|x| x as f64 * scale);
        // flip the direction bit of the lowest zero bit of the current index
        let c = (!self.index).trailing_zeros() as usize;
        if c < Self::BITS {
            for (x, v) in self.state.iter_mut().zip(&self.directions) {
                *x ^= v[c];
            }
        }
        self.index += 1;
        Ok(out)
    }
}

/// Standard normal quantile: Acklam's rational approximation refined by one
/// Halley step.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        // 1 - p is exact here
        return -inverse_normal_cdf(1.0 - p);
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239e0,
    ];
    const B: [f64; 5] =
        [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838e0,
        -2.549732539343734e0,
        4.374664141464968e0,
        2.938163982698783e0,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996e0, 3.754408661907416e0];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = 0.5 * erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Sobol points in `[0,1]^4` after skipping the first `seed_skip`, mapped
/// coordinatewise through the normal quantile and normalized onto S³.
/// Points that map to the zero vector are skipped.
pub fn sobol_sphere_s3<T: Real>(n: usize, seed_skip: usize) -> Result<DirectionSet<T>> {
    if n == 0 {
        return invalid("Sobol set needs at least one point");
    }
    if seed_skip == 0 {
        return invalid("seed_skip must be at least 1 to avoid the origin");
    }
    let mut sobol = Sobol4::new();
    for _ in 0..seed_skip {
        sobol.next_point()?;
    }
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let g = sobol.next_point()?.map(inverse_normal_cdf);
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            log::debug!("Sobol point {} maps to a degenerate vector, skipped", sobol.index() - 1);
            continue;
        }
        points.push(g.iter().map(|x| x / norm).collect());
    }
    DirectionSet::from_f64(points, Scheme::SobolGaussian)
}
