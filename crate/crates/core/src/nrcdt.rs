//! Radon cumulative distribution transform and its normalized variants.
//!
//! For a nonnegative function `f` and direction `θ`, the transform is the
//! quantile function of the projection `R_θ[f] / ‖f‖₁`. Normalizing each
//! quantile function to zero mean and unit standard deviation removes
//! translations and scalings along `θ`; the pointwise supremum over
//! directions is invariant under affine maps of `f`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{check_dim, invalid, Error, Result};
use crate::scalar::Real;
use crate::voxel::Sinogram;

/// Cumulative distribution sampled on a sorted grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteCdf<T> {
    t_grid: Vec<T>,
    cdf: Vec<T>,
}

impl<T: Real> DiscreteCdf<T> {
    /// Takes CDF samples as given after clamping to `[0, 1]` and enforcing
    /// monotonicity; the last value must be one up to `1e-9`.
    pub fn new(t_grid: Vec<T>, cdf: Vec<T>) -> Result<Self> {
        check_dim(t_grid.len(), cdf.len())?;
        if t_grid.is_empty() {
            return invalid("CDF grid is empty");
        }
        if t_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return invalid("CDF grid must be strictly increasing");
        }
        let last = *cdf.last().expect("nonempty");
        if !((last - T::one()).abs() <= T::lit(1e-9)) {
            return invalid(format!("CDF must end at 1, got {last}"));
        }
        let mut running = T::zero();
        let cdf = cdf
            .into_iter()
            .map(|c| {
                running = running.max(c.max(T::zero()).min(T::one()));
                running
            })
            .collect();
        Ok(Self { t_grid, cdf })
    }

    pub fn t_grid(&self) -> &[T] {
        &self.t_grid
    }

    pub fn values(&self) -> &[T] {
        &self.cdf
    }
}

/// Cumulative trapezoidal integral of a projection, divided by its total.
pub fn cdf_from_projection<T: Real>(radii: &[T], projection: &[T]) -> Result<DiscreteCdf<T>> {
    check_dim(radii.len(), projection.len())?;
    if radii.len() < 2 {
        return invalid("projection needs at least two samples");
    }
    let scale = projection.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if projection.iter().any(|&v| v < -T::lit(1e-12) * scale || v.is_nan()) {
        return invalid("projection values must be nonnegative");
    }
    let mut cumulative = Vec::with_capacity(radii.len());
    let mut total = T::zero();
    cumulative.push(total);
    for k in 1..radii.len() {
        let (a, b) = (projection[k - 1].max(T::zero()), projection[k].max(T::zero()));
        total += (radii[k] - radii[k - 1]) * (a + b) / T::lit(2.0);
        cumulative.push(total);
    }
    if !(total > T::zero()) {
        return Err(Error::Degenerate("projection has zero mass".into()));
    }
    for c in &mut cumulative {
        *c /= total;
    }
    *cumulative.last_mut().expect("nonempty") = T::one();
    DiscreteCdf::new(radii.to_vec(), cumulative)
}

/// How [`quantile`] reads a value off a sampled CDF.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum QuantileMode {
    /// Linear interpolation inside the cell where the CDF crosses `ξ`.
    #[default]
    Linear,
    /// The smallest grid value `s` with `cdf(s) > ξ`.
    Step,
}

/// Generalized inverse `inf { s : cdf(s) > ξ }` on the grid.
pub fn quantile<T: Real>(cdf: &DiscreteCdf<T>, xi: T, mode: QuantileMode) -> Result<T> {
    if !(xi > T::zero() && xi < T::one()) {
        return invalid(format!("quantile level must lie in (0, 1), got {xi}"));
    }
    Ok(quantile_unchecked(cdf, xi, mode))
}

fn quantile_unchecked<T: Real>(cdf: &DiscreteCdf<T>, xi: T, mode: QuantileMode) -> T {
    let (t, c) = (&cdf.t_grid, &cdf.cdf);
    let k = c.partition_point(|&v| v <= xi).min(c.len() - 1);
    if k == 0 || mode == QuantileMode::Step {
        return t[k];
    }
    let (c0, c1) = (c[k - 1], c[k]);
    t[k - 1] + (xi - c0) / (c1 - c0) * (t[k] - t[k - 1])
}

/// Equispaced midpoints `(2i - 1) / (2L)`, `i = 1..=L`.
pub fn default_xi_grid<T: Real>(l: usize) -> Result<Vec<T>> {
    if l == 0 {
        return invalid("quantile grid needs at least one point");
    }
    let two_l = T::from_usize_lossy(2 * l);
    Ok((0..l).map(|i| T::from_usize_lossy(2 * i + 1) / two_l).collect())
}

pub const DEFAULT_QUANTILE_COUNT: usize = 256;

/// Quantile values on a grid of levels.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileProfile<T> {
    xi: Vec<T>,
    values: Vec<T>,
}

impl<T: Real> QuantileProfile<T> {
    pub fn new(xi: Vec<T>, values: Vec<T>) -> Result<Self> {
        check_dim(xi.len(), values.len())?;
        if xi.is_empty() {
            return invalid("quantile profile is empty");
        }
        Ok(Self { xi, values })
    }

    pub fn from_cdf(cdf: &DiscreteCdf<T>, xi: &[T], mode: QuantileMode) -> Result<Self> {
        let values = xi.iter().map(|&x| quantile(cdf, x, mode)).collect::<Result<_>>()?;
        Self::new(xi.to_vec(), values)
    }

    pub fn xi(&self) -> &[T] {
        &self.xi
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean over the grid (midpoint rule on `(0, 1)`).
    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::from_usize_lossy(self.len())
    }

    pub fn std(&self) -> T {
        let m = self.mean();
        let var = self.values.iter().map(|&q| (q - m) * (q - m)).sum::<T>() / T::from_usize_lossy(self.len());
        var.sqrt()
    }

    /// `(q - mean) / std`; fails when the spread is below `1e-12`.
    pub fn normalized(&self) -> Result<Self> {
        let (m, s) = (self.mean(), self.std());
        if !(s >= T::lit(1e-12)) {
            return Err(Error::Degenerate(format!(
                "quantile profile has no spread (std {s}); the support lies in a hyperplane"
            )));
        }
        Self::new(self.xi.clone(), self.values.iter().map(|&q| (q - m) / s).collect())
    }

    /// Largest pointwise distance to `other`.
    pub fn sup_distance(&self, other: &Self) -> Result<T> {
        check_dim(self.len(), other.len())?;
        Ok(self.values.iter().zip(&other.values).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs())))
    }

    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Writes `xi,value` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "xi,value")?;
        for (x, v) in self.xi.iter().zip(&self.values) {
            writeln!(out, "{:.16e},{:.16e}", x.to_f64_lossy(), v.to_f64_lossy())?;
        }
        Ok(())
    }
}

/// Normalized quantile profile of one projection.
pub fn nrcdt_projection<T: Real>(
    radii: &[T],
    projection: &[T],
    xi: &[T],
    mode: QuantileMode,
) -> Result<QuantileProfile<T>> {
    let cdf = cdf_from_projection(radii, projection)?;
    QuantileProfile::from_cdf(&cdf, xi, mode)?.normalized()
}

/// Normalized quantile profile of sinogram row `direction_index`.
pub fn nrcdt<T: Real>(
    sino: &Sinogram<T>,
    direction_index: usize,
    xi: &[T],
    mode: QuantileMode,
) -> Result<QuantileProfile<T>> {
    let (rows, _) = sino.shape();
    if direction_index >= rows {
        return invalid(format!("direction index {direction_index} out of range ({rows} directions)"));
    }
    nrcdt_projection(sino.radii(), sino.row(direction_index), xi, mode)
}

/// Pointwise supremum of the per-direction normalized profiles. Directions
/// whose projection is degenerate are skipped with a warning.
pub fn max_nrcdt<T: Real>(sino: &Sinogram<T>, xi: &[T], mode: QuantileMode) -> Result<QuantileProfile<T>> {
    let (rows, _) = sino.shape();
    let profiles: Vec<Option<QuantileProfile<T>>> = (0..rows)
        .into_par_iter()
        .map(|k| match nrcdt(sino, k, xi, mode) {
            Ok(p) => Some(p),
            Err(Error::Degenerate(msg)) => {
                log::warn!("skipping direction {k}: {msg}");
                None
            }
            Err(e) => {
                log::warn!("skipping direction {k}: {e}");
                None
            }
        })
        .collect();
    let mut valid = profiles.into_iter().flatten();
    let first = valid.next().ok_or_else(|| Error::Degenerate("every direction is degenerate".into()))?;
    let mut values = first.values;
    for p in valid {
        for (v, q) in values.iter_mut().zip(p.values) {
            *v = v.max(q);
        }
    }
    QuantileProfile::new(first.xi, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::linspace;

    #[test]
    fn uniform_projection() {
        let radii = linspace(0.0f64, 1.0, 11).unwrap();
        let cdf = cdf_from_projection(&radii, &[1.0; 11]).unwrap();
        for (t, c) in radii.iter().zip(cdf.values()) {
            assert!((t - c).abs() < 1e-15);
        }
        assert!((quantile(&cdf, 0.25, QuantileMode::Linear).unwrap() - 0.25).abs() < 1e-15);
        let scaled = cdf_from_projection(&radii, &[7.0; 11]).unwrap();
        for (a, b) in scaled.values().iter().zip(cdf.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn spike_gives_step() {
        let radii = linspace(-1.0f64, 1.0, 21).unwrap();
        let mut proj = vec![0.0; 21];
        proj[13] = 3.0;
        let cdf = cdf_from_projection(&radii, &proj).unwrap();
        for xi in [0.01, 0.3, 0.5, 0.77, 0.99] {
            for mode in [QuantileMode::Linear, QuantileMode::Step] {
                let q = quantile(&cdf, xi, mode).unwrap();
                assert!((q - radii[13]).abs() <= 0.1 + 1e-12, "{xi} {q}");
            }
        }
        assert!(cdf_from_projection(&radii, &[0.0; 21]).is_err());
        assert!(quantile(&cdf, 1.0, QuantileMode::Linear).is_err());
        assert!(quantile(&cdf, 0.0, QuantileMode::Linear).is_err());
    }

    #[test]
    fn generalized_inverse_property() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let radii = linspace(-2.0, 3.0, 40).unwrap();
            let proj: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
            let cdf = cdf_from_projection(&radii, &proj).unwrap();
            for (k, &c) in cdf.values().iter().enumerate() {
                let xi = c + 1e-9;
                if xi < 1.0 {
                    for mode in [QuantileMode::Linear, QuantileMode::Step] {
                        assert!(quantile(&cdf, xi, mode).unwrap() >= radii[k]);
                    }
                }
            }
        }
    }

    #[test]
    fn normalization() {
        let xi = default_xi_grid::<f64>(64).unwrap();
        assert_eq!(xi[0], 1.0 / 128.0);
        let radii = linspace(-1.0, 1.0, 101).unwrap();
        let proj: Vec<f64> = radii.iter().map(|t| (1.0 - t * t) * (1.3 + t)).collect();
        let p = nrcdt_projection(&radii, &proj, &xi, QuantileMode::Linear).unwrap();
        assert!(p.mean().abs() < 1e-12);
        assert!((p.std() - 1.0).abs() < 1e-12);
        assert!(p.values().windows(2).all(|w| w[0] <= w[1]));
    }
}
