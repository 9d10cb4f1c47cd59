//! Sliced Wasserstein distances and the fitting of cube mixtures.
//!
//! Every measure is reduced to one quantile profile per direction. A cube
//! mixture `Υ = Σ_j γ_j û_j` (with `û_j` the uniform probability measure on
//! `c_j + [-w_j, w_j]` and `γ_j` proportional to the cube volume) has the
//! exact projected CDF `Σ_j γ_j V_θ^{w_j}(-∞, t - ⟨c_j, θ⟩) / vol_j`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::geometry::{CubeSection, Direction, HalfWidths};
use crate::nrcdt::{DiscreteCdf, QuantileMode, QuantileProfile};
use crate::voxel::{cumulative_slab_volumes, sinogram, Sinogram, VoxelImage};

/// Upper bound on the number of mixture components.
pub const MAX_COMPONENTS: usize = 10_000;

/// Uniform cubes `c_j + [-w_j, w_j]` weighted by volume. Half-widths are
/// stored as logarithms so that they stay positive under unconstrained
/// updates.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeMixture {
    centers: Vec<Vec<f64>>,
    log_widths: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MixtureJson {
    centers: Vec<Vec<f64>>,
    widths: Vec<Vec<f64>>,
}

impl CubeMixture {
    pub fn new(centers: Vec<Vec<f64>>, widths: Vec<Vec<f64>>) -> Result<Self> {
        if widths.iter().flatten().any(|&w| !(w > 0.0 && w.is_finite())) {
            return invalid("cube half-widths must be positive and finite");
        }
        let log_widths = widths.iter().map(|w| w.iter().map(|x| x.ln()).collect()).collect();
        Self::from_log_widths(centers, log_widths)
    }

    pub fn from_log_widths(centers: Vec<Vec<f64>>, log_widths: Vec<Vec<f64>>) -> Result<Self> {
        if centers.is_empty() {
            return invalid("mixture needs at least one component");
        }
        if centers.len() > MAX_COMPONENTS {
            return invalid(format!("at most {MAX_COMPONENTS} components are supported"));
        }
        check_dim(centers.len(), log_widths.len())?;
        let d = centers[0].len();
        if d == 0 {
            return invalid("mixture dimension must be positive");
        }
        for (c, w) in centers.iter().zip(&log_widths) {
            check_dim(d, c.len())?;
            check_dim(d, w.len())?;
        }
        if centers.iter().chain(&log_widths).flatten().any(|x| !x.is_finite()) {
            return invalid("mixture parameters must be finite");
        }
        Ok(Self { centers, log_widths })
    }

    /// Components `center ± width`, all with the same half-width.
    pub fn uniform_widths(centers: Vec<Vec<f64>>, width: f64) -> Result<Self> {
        let widths = centers.iter().map(|c| vec![width; c.len()]).collect();
        Self::new(centers, widths)
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn log_widths(&self) -> &[Vec<f64>] {
        &self.log_widths
    }

    pub fn widths(&self) -> Vec<Vec<f64>> {
        self.log_widths.iter().map(|w| w.iter().map(|x| x.exp()).collect()).collect()
    }

    /// `γ_j = vol_j / Σ_l vol_l`, computed from log-volumes.
    pub fn weights(&self) -> Vec<f64> {
        let logs: Vec<f64> = self.log_widths.iter().map(|w| w.iter().sum()).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|r| r / total).collect()
    }

    /// Flat parameters `[c_1, log w_1, c_2, log w_2, ...]`.
    pub fn params(&self) -> Vec<f64> {
        self.centers.iter().zip(&self.log_widths).flat_map(|(c, w)| c.iter().chain(w).copied()).collect()
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let d = self.dim();
        check_dim(2 * d * self.len(), params.len())?;
        let centers = params.chunks(2 * d).map(|p| p[..d].to_vec()).collect();
        let log_widths = params.chunks(2 * d).map(|p| p[d..].to_vec()).collect();
        Self::from_log_widths(centers, log_widths)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(MixtureJson { centers: self.centers.clone(), widths: self.widths() })
            .expect("plain numbers serialize")
    }

    /// Reads `{"centers": [[...]], "widths": [[...]]}`; other fields are ignored.
    pub fn from_json(text: &str) -> Result<Self> {
        let m: MixtureJson = serde_json::from_str(text)?;
        Self::new(m.centers, m.widths)
    }
}

/// `1/n Σ δ_{x_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<Vec<f64>>,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let d = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidArgument("empirical measure needs a point".into()))?;
        if d == 0 {
            return invalid("points must have positive dimension");
        }
        for p in &points {
            check_dim(d, p.len())?;
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return invalid("points must be finite");
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

/// Any measure the distances below can project.
#[derive(Clone, Debug, PartialEq)]
pub enum Measure {
    Mixture(CubeMixture),
    Empirical(EmpiricalMeasure),
    /// Nonnegative voxel image, normalized to unit mass when projected.
    Voxel(VoxelImage<f64>),
}

impl Measure {
    pub fn dim(&self) -> usize {
        match self {
            Measure::Mixture(m) => m.dim(),
            Measure::Empirical(e) => e.dim(),
            Measure::Voxel(v) => v.dim(),
        }
    }

    /// Quantile profile of the projection onto `theta`.
    pub fn quantile_profile(&self, theta: &Direction<f64>, radii: &[f64], xi: &[f64]) -> Result<QuantileProfile<f64>> {
        check_dim(self.dim(), theta.dim())?;
        match self {
            Measure::Mixture(m) => {
                let projected = ProjectedMixture::new(m, theta)?;
                QuantileProfile::new(xi.to_vec(), projected.quantiles(xi, radii)?)
            }
            Measure::Empirical(e) => {
                let cdf = radon_empirical(e, theta, radii)?;
                QuantileProfile::from_cdf(&cdf, xi, QuantileMode::Step)
            }
            Measure::Voxel(img) => {
                let cdf = voxel_cdf(img, theta, radii)?;
                QuantileProfile::from_cdf(&cdf, xi, QuantileMode::Linear)
            }
        }
    }
}

/// Exact projected CDF of a voxel image on the radius grid.
fn voxel_cdf(img: &VoxelImage<f64>, theta: &Direction<f64>, radii: &[f64]) -> Result<DiscreteCdf<f64>> {
    if img.values().iter().any(|&v| v < 0.0) {
        return invalid("voxel measure must be nonnegative");
    }
    let mass = img.mass();
    if !(mass > 0.0) {
        return Err(Error::Degenerate("voxel measure has zero mass".into()));
    }
    let cumulative = cumulative_slab_volumes(img, theta, radii)?;
    let cdf: Vec<f64> = cumulative.iter().map(|c| c / mass).collect();
    if cdf[0] > 1e-9 || cdf[cdf.len() - 1] < 1.0 - 1e-9 {
        return invalid("radius grid does not cover the projected support of the image");
    }
    DiscreteCdf::new(radii.to_vec(), cdf)
}

/// Projects each point, snaps its mass `1/n` to the nearest radius and
/// accumulates.
pub fn radon_empirical(mu: &EmpiricalMeasure, theta: &Direction<f64>, radii: &[f64]) -> Result<DiscreteCdf<f64>> {
    check_dim(mu.dim(), theta.dim())?;
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[0] < w[1])) {
        return invalid("radii must be strictly increasing with at least two entries");
    }
    let (first, last) = (radii[0], radii[radii.len() - 1]);
    let mut counts = vec![0usize; radii.len()];
    for p in &mu.points {
        let t = theta.dot(p);
        if t < first || t > last {
            return invalid(format!("projection {t} lies outside the radius grid [{first}, {last}]"));
        }
        let k = radii.partition_point(|&r| r < t);
        let nearest = if k == 0 {
            0
        } else if k == radii.len() || t - radii[k - 1] <= radii[k] - t {
            k - 1
        } else {
            k
        };
        counts[nearest] += 1;
    }
    let n = mu.points.len() as f64;
    let mut running = 0usize;
    let cdf = counts
        .into_iter()
        .map(|c| {
            running += c;
            running as f64 / n
        })
        .collect();
    DiscreteCdf::new(radii.to_vec(), cdf)
}

/// A mixture projected onto one direction.
struct ProjectedMixture {
    offsets: Vec<f64>,
    sections: Vec<CubeSection<f64>>,
    weights: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl ProjectedMixture {
    fn new(m: &CubeMixture, theta: &Direction<f64>) -> Result<Self> {
        check_dim(m.dim(), theta.dim())?;
        let sections = m
            .widths()
            .into_iter()
            .map(|w| CubeSection::new(&HalfWidths::new(w)?, theta))
            .collect::<Result<Vec<_>>>()?;
        let offsets: Vec<f64> = m.centers().iter().map(|c| theta.dot(c)).collect();
        let lo = offsets.iter().zip(&sections).map(|(o, s)| o - s.reach()).fold(f64::INFINITY, f64::min);
        let hi = offsets.iter().zip(&sections).map(|(o, s)| o + s.reach()).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { offsets, sections, weights: m.weights(), lo, hi })
    }

    fn cdf(&self, t: f64) -> f64 {
        self.cdf_and_density(t).0
    }

    fn cdf_and_density(&self, t: f64) -> (f64, f64) {
        let (mut f, mut density) = (0.0, 0.0);
        for ((o, s), g) in self.offsets.iter().zip(&self.sections).zip(&self.weights) {
            let u = t - o;
            if u >= s.reach() {
                f += g;
            } else if u > -s.reach() {
                f += g * s.volume_below(u) / s.volume();
                density += g * s.area(u) / s.volume();
            }
        }
        (f.min(1.0), density)
    }

    /// Quantiles located on the radius grid, then refined by safeguarded
    /// Newton iterations with the exact density.
    fn quantiles(&self, xi: &[f64], radii: &[f64]) -> Result<Vec<f64>> {
        let mut knots = vec![self.lo];
        knots.extend(radii.iter().copied().filter(|&r| r > self.lo && r < self.hi));
        knots.push(self.hi);
        let values: Vec<f64> = knots.iter().map(|&t| self.cdf(t)).collect();
        xi.iter()
            .map(|&x| {
                if !(x > 0.0 && x < 1.0) {
                    return invalid(format!("quantile level must lie in (0, 1), got {x}"));
                }
                let k = values.partition_point(|&v| v <= x).clamp(1, knots.len() - 1);
                Ok(self.refine(x, knots[k - 1], knots[k], values[k - 1], values[k]))
            })
            .collect()
    }

    fn refine(&self, xi: f64, mut lo: f64, mut hi: f64, f_lo: f64, f_hi: f64) -> f64 {
        let mut t = if f_hi > f_lo { lo + (xi - f_lo) / (f_hi - f_lo) * (hi - lo) } else { 0.5 * (lo + hi) };
        for _ in 0..100 {
            let (f, density) = self.cdf_and_density(t);
            let r = f - xi;
            if r == 0.0 {
                return t;
            }
            if r < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let newton = t - r / density;
            let next = if density > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - t).abs() <= 1e-15 * t.abs().max(1.0) || hi - lo <= 1e-15 * t.abs().max(1.0) {
                return next;
            }
            t = next;
        }
        t
    }
}

/// `F(t)` of the mixture projected onto `theta`.
pub fn mixture_cdf(m: &CubeMixture, theta: &Direction<f64>, t: f64) -> Result<f64> {
    Ok(ProjectedMixture::new(m, theta)?.cdf(t))
}

/// Projected densities of `mu` on `directions × radii`. Mixtures and voxel
/// images are evaluated exactly (voxel mass normalized to one); point clouds
/// are histogrammed by snapping to the nearest radius.
pub fn projected_density_sinogram(mu: &Measure, directions: &[Direction<f64>], radii: &[f64]) -> Result<Sinogram<f64>> {
    if directions.is_empty() {
        return invalid("direction set is empty");
    }
    let rows: Vec<Vec<f64>> = directions
        .par_iter()
        .map(|theta| -> Result<Vec<f64>> {
            check_dim(mu.dim(), theta.dim())?;
            match mu {
                Measure::Mixture(m) => {
                    let p = ProjectedMixture::new(m, theta)?;
                    Ok(radii.iter().map(|&t| p.cdf_and_density(t).1).collect())
                }
                Measure::Empirical(e) => {
                    let cdf = radon_empirical(e, theta, radii)?;
                    let v = cdf.values();
                    Ok((0..radii.len())
                        .map(|k| {
                            let mass = if k == 0 { v[0] } else { v[k] - v[k - 1] };
                            let lo = if k == 0 { radii[0] } else { 0.5 * (radii[k - 1] + radii[k]) };
                            let hi = if k + 1 == radii.len() { radii[k] } else { 0.5 * (radii[k] + radii[k + 1]) };
                            mass / (hi - lo)
                        })
                        .collect())
                }
                Measure::Voxel(img) => {
                    let mass = img.mass();
                    if !(mass > 0.0) {
                        return Err(Error::Degenerate("voxel measure has zero mass".into()));
                    }
                    let row = sinogram(img, std::slice::from_ref(theta), radii, None)?;
                    Ok(row.values().iter().map(|v| v / mass).collect())
                }
            }
        })
        .collect::<Result<_>>()?;
    Sinogram::new(directions.to_vec(), radii.to_vec(), rows.concat())
}

/// `∫_0^1 (q_a(ξ) - q_b(ξ))² dξ` by the midpoint rule on the shared grid.
pub fn wasserstein1d_sq(qa: &QuantileProfile<f64>, qb: &QuantileProfile<f64>) -> Result<f64> {
    if qa.xi() != qb.xi() {
        return invalid("quantile profiles use different grids");
    }
    let sum: f64 = qa.values().iter().zip(qb.values()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / qa.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.05, beta1: 0.9, beta2: 0.99, epochs: 100 }
    }
}

impl AdamConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return invalid("learning rate must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return invalid("ADAM betas must lie in (0, 1)");
        }
        Ok(())
    }
}

pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates after `step` updates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// One bias-corrected ADAM update.
pub fn adam_step(
    params: &[f64],
    grads: &[f64],
    state: &AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
) -> Result<(Vec<f64>, AdamState)> {
    check_dim(params.len(), grads.len())?;
    check_dim(params.len(), state.m.len())?;
    let step = state.step + 1;
    let (c1, c2) = (1.0 - beta1.powi(step as i32), 1.0 - beta2.powi(step as i32));
    let mut next = AdamState { m: state.m.clone(), v: state.v.clone(), step };
    let mut out = params.to_vec();
    for i in 0..params.len() {
        next.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        next.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        let (m_hat, v_hat) = (next.m[i] / c1, next.v[i] / c2);
        out[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
    Ok((out, next))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    /// Implicit differentiation of the mixture quantiles.
    #[default]
    Analytic,
    /// Central differences of the full loss per parameter.
    FiniteDifference,
}

/// Directions, radius grid and quantile levels shared by all evaluations.
#[derive(Clone, Debug)]
pub struct SwConfig {
    pub directions: Vec<Direction<f64>>,
    pub radii: Vec<f64>,
    pub xi: Vec<f64>,
    pub adam: AdamConfig,
    pub gradient: GradientMethod,
}

impl SwConfig {
    pub fn new(directions: Vec<Direction<f64>>, radii: Vec<f64>, xi: Vec<f64>) -> Result<Self> {
        let cfg = Self { directions, radii, xi, adam: AdamConfig::default(), gradient: GradientMethod::Analytic };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.directions.is_empty() {
            return invalid("at least one direction is required");
        }
        if self.xi.is_empty() || self.xi.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return invalid("quantile levels must lie in (0, 1)");
        }
        if self.radii.len() < 2 || self.radii.windows(2).any(|w| !(w[0] < w[1])) {
            return invalid("radii must be strictly increasing with at least two entries");
        }
        self.adam.validate()
    }

    fn profiles(&self, mu: &Measure) -> Result<Vec<QuantileProfile<f64>>> {
        self.directions.par_iter().map(|theta| mu.quantile_profile(theta, &self.radii, &self.xi)).collect()
    }
}

/// Mean over the configured directions of the squared 1D Wasserstein
/// distances between projections.
pub fn sw2_sq(mu: &Measure, nu: &Measure, cfg: &SwConfig) -> Result<f64> {
    cfg.validate()?;
    check_dim(mu.dim(), nu.dim())?;
    let a = cfg.profiles(mu)?;
    let b = cfg.profiles(nu)?;
    let per_direction = a.iter().zip(&b).map(|(p, q)| wasserstein1d_sq(p, q)).collect::<Result<Vec<_>>>()?;
    Ok(per_direction.iter().sum::<f64>() / per_direction.len() as f64)
}

/// `Σ_i λ_i SW²(Υ, μ_i)` as a function of the mixture parameters.
pub struct Objective<'a> {
    cfg: &'a SwConfig,
    weights: Vec<f64>,
    // targets[i][direction]
    targets: Vec<Vec<QuantileProfile<f64>>>,
}

/// Relative step for the width partials of a single cube CDF.
const WIDTH_STEP: f64 = 1e-5;

impl<'a> Objective<'a> {
    pub fn new(cfg: &'a SwConfig, targets: &[(f64, &Measure)]) -> Result<Self> {
        cfg.validate()?;
        if targets.is_empty() {
            return invalid("objective needs at least one target");
        }
        let weights = targets.iter().map(|(w, _)| *w).collect();
        let targets = targets.iter().map(|(_, mu)| cfg.profiles(mu)).collect::<Result<_>>()?;
        Ok(Self { cfg, weights, targets })
    }

    fn direction_loss(&self, k: usize, q: &[f64]) -> f64 {
        let l = q.len() as f64;
        self.weights
            .iter()
            .zip(&self.targets)
            .map(|(w, t)| {
                let s: f64 = q.iter().zip(t[k].values()).map(|(a, b)| (a - b) * (a - b)).sum();
                w * s / l
            })
            .sum()
    }

    pub fn loss(&self, m: &CubeMixture) -> Result<f64> {
        let per_direction: Vec<f64> = self
            .cfg
            .directions
            .par_iter()
            .enumerate()
            .map(|(k, theta)| {
                let q = ProjectedMixture::new(m, theta)?.quantiles(&self.cfg.xi, &self.cfg.radii)?;
                Ok(self.direction_loss(k, &q))
            })
            .collect::<Result<_>>()?;
        Ok(per_direction.iter().sum::<f64>() / per_direction.len() as f64)
    }

    /// Loss and its gradient in the layout of [`CubeMixture::params`]. Each
    /// quantile satisfies `F(q; p) = ξ`, so `∂q/∂p = -∂_p F(q) / f(q)`.
    pub fn loss_and_gradient(&self, m: &CubeMixture) -> Result<(f64, Vec<f64>)> {
        let (d, k) = (m.dim(), m.len());
        let widths = m.widths();
        let parts: Vec<(f64, Vec<f64>)> = self
            .cfg
            .directions
            .par_iter()
            .enumerate()
            .map(|(dir, theta)| {
                let proj = ProjectedMixture::new(m, theta)?;
                let q = proj.quantiles(&self.cfg.xi, &self.cfg.radii)?;
                let loss = self.direction_loss(dir, &q);
                // width-perturbed sections: perturbed[j][i] = (plus, minus)
                let perturbed = widths
                    .iter()
                    .map(|w| {
                        (0..d)
                            .map(|i| {
                                if theta.as_slice()[i] == 0.0 {
                                    return Ok(None);
                                }
                                let mut plus = w.clone();
                                let mut minus = w.clone();
                                plus[i] *= WIDTH_STEP.exp();
                                minus[i] *= (-WIDTH_STEP).exp();
                                Ok(Some((
                                    CubeSection::new(&HalfWidths::new(plus)?, theta)?,
                                    CubeSection::new(&HalfWidths::new(minus)?, theta)?,
                                )))
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let scale = 2.0 / q.len() as f64;
                let mut grad = vec![0.0; 2 * d * k];
                for (l, &ql) in q.iter().enumerate() {
                    let residual: f64 =
                        self.weights.iter().zip(&self.targets).map(|(w, t)| w * (ql - t[dir].values()[l])).sum::<f64>()
                            * scale;
                    if residual == 0.0 {
                        continue;
                    }
                    let (f, density) = proj.cdf_and_density(ql);
                    if !(density > 1e-300) {
                        continue;
                    }
                    let factor = -residual / density;
                    for j in 0..k {
                        let (s, g) = (&proj.sections[j], proj.weights[j]);
                        let u = ql - proj.offsets[j];
                        let cube_cdf = if u >= s.reach() {
                            1.0
                        } else if u <= -s.reach() {
                            0.0
                        } else {
                            s.volume_below(u) / s.volume()
                        };
                        let cube_density = s.area(u) / s.volume();
                        let base = 2 * d * j;
                        for (mi, th) in theta.as_slice().iter().enumerate() {
                            grad[base + mi] += factor * (-g * cube_density * th);
                        }
                        for i in 0..d {
                            let dg = match &perturbed[j][i] {
                                Some((plus, minus)) => {
                                    let cdf = |sec: &CubeSection<f64>| sec.volume_below(u) / sec.volume();
                                    (cdf(plus) - cdf(minus)) / (2.0 * WIDTH_STEP)
                                }
                                None => 0.0,
                            };
                            grad[base + d + i] += factor * g * (cube_cdf - f + dg);
                        }
                    }
                }
                Ok((loss, grad))
            })
            .collect::<Result<_>>()?;
        let n = parts.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; 2 * d * k];
        for (l, g) in &parts {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad))
    }

    /// Central differences of the loss with step `1e-4 (1 + |p_i|)`.
    pub fn finite_difference_gradient(&self, m: &CubeMixture) -> Result<Vec<f64>> {
        let p = m.params();
        (0..p.len())
            .into_par_iter()
            .map(|i| {
                let h = 1e-4 * (1.0 + p[i].abs());
                let mut plus = p.clone();
                let mut minus = p.clone();
                plus[i] += h;
                minus[i] -= h;
                let lp = self.loss(&m.with_params(&plus)?)?;
                let lm = self.loss(&m.with_params(&minus)?)?;
                Ok((lp - lm) / (2.0 * h))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub mixture: CubeMixture,
    /// Loss at the start of each epoch.
    pub loss_trace: Vec<f64>,
    /// Loss after the last update.
    pub final_loss: f64,
}

impl FitResult {
    pub fn to_json_value(&self) -> serde_json::Value {
        let mut v = self.mixture.to_json_value();
        v["loss_trace"] = serde_json::json!(self.loss_trace);
        v["final_loss"] = serde_json::json!(self.final_loss);
        v
    }
}

/// Runs ADAM from `init`; `observer(epoch, mixture, loss)` sees every iterate
/// before its update.
pub fn optimize(
    objective: &Objective<'_>,
    init: CubeMixture,
    mut observer: impl FnMut(usize, &CubeMixture, f64),
) -> Result<FitResult> {
    let cfg = objective.cfg;
    let mut mixture = init;
    let mut params = mixture.params();
    let mut state = AdamState::new(params.len());
    let mut loss_trace = Vec::with_capacity(cfg.adam.epochs);
    for epoch in 0..cfg.adam.epochs {
        let (loss, grad) = match cfg.gradient {
            GradientMethod::Analytic => objective.loss_and_gradient(&mixture)?,
            GradientMethod::FiniteDifference => {
                (objective.loss(&mixture)?, objective.finite_difference_gradient(&mixture)?)
            }
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite loss or gradient at epoch {epoch}")));
        }
        observer(epoch, &mixture, loss);
        loss_trace.push(loss);
        let (next, next_state) = adam_step(&params, &grad, &state, cfg.adam.lr, cfg.adam.beta1, cfg.adam.beta2)?;
        params = next;
        state = next_state;
        mixture = mixture.with_params(&params)?;
    }
    let final_loss = objective.loss(&mixture)?;
    Ok(FitResult { mixture, loss_trace, final_loss })
}

/// Starting mixture for fitting: centers evenly spaced on the segment
/// `[-e/4, e/4]` (so `±e/4` for two components), half-widths `1/10`.
pub fn default_init(d: usize, k: usize) -> Result<CubeMixture> {
    if k == 0 || k > MAX_COMPONENTS {
        return invalid(format!("component count must lie in 1..={MAX_COMPONENTS}"));
    }
    let centers = (0..k)
        .map(|j| {
            let s = if k == 1 { 0.0 } else { -0.25 + 0.5 * j as f64 / (k - 1) as f64 };
            vec![s; d]
        })
        .collect();
    CubeMixture::uniform_widths(centers, 0.1)
}

/// Fits `k` cubes to `target` by minimizing `SW²(Υ_k, target)`.
pub fn fit_mixture(target: &Measure, k: usize, cfg: &SwConfig, init: Option<CubeMixture>) -> Result<FitResult> {
    fit_mixture_observed(target, k, cfg, init, |_, _, _| {})
}

pub fn fit_mixture_observed(
    target: &Measure,
    k: usize,
    cfg: &SwConfig,
    init: Option<CubeMixture>,
    observer: impl FnMut(usize, &CubeMixture, f64),
) -> Result<FitResult> {
    let init = match init {
        Some(m) => m,
        None => default_init(target.dim(), k)?,
    };
    check_dim(k, init.len())?;
    check_dim(target.dim(), init.dim())?;
    let objective = Objective::new(cfg, &[(1.0, target)])?;
    optimize(&objective, init, observer)
}

/// Starting mixture for barycenters: seeded uniform centers in
/// `[-1/4, 1/4]^d`, half-widths `1/20`.
pub fn barycenter_init(d: usize, k: usize, seed: u64) -> Result<CubeMixture> {
    use rand::{Rng, SeedableRng};
    if k == 0 || k > MAX_COMPONENTS {
        return invalid(format!("component count must lie in 1..={MAX_COMPONENTS}"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let centers = (0..k).map(|_| (0..d).map(|_| rng.random_range(-0.25..0.25)).collect()).collect();
    CubeMixture::uniform_widths(centers, 0.05)
}

/// Minimizes `λ SW²(μ1, Υ) + (1 - λ) SW²(μ2, Υ)` over `k`-cube mixtures.
pub fn sw_barycenter(
    mu1: &Measure,
    mu2: &Measure,
    lambda: f64,
    cfg: &SwConfig,
    init: CubeMixture,
    observer: impl FnMut(usize, &CubeMixture, f64),
) -> Result<FitResult> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return invalid(format!("barycenter weight must lie in (0, 1), got {lambda}"));
    }
    check_dim(mu1.dim(), mu2.dim())?;
    check_dim(mu1.dim(), init.dim())?;
    let objective = Objective::new(cfg, &[(lambda, mu1), (1.0 - lambda, mu2)])?;
    optimize(&objective, init, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nrcdt::default_xi_grid;

    #[test]
    fn one_dimensional_cube_cdf() {
        let m = CubeMixture::new(vec![vec![0.0]], vec![vec![1.0]]).unwrap();
        let theta = Direction::unit(vec![1.0]).unwrap();
        assert_eq!(mixture_cdf(&m, &theta, 0.0).unwrap(), 0.5);
        assert_eq!(mixture_cdf(&m, &theta, -1.5).unwrap(), 0.0);
        assert_eq!(mixture_cdf(&m, &theta, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn weights_follow_volume() {
        let m = CubeMixture::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![vec![1.0, 1.0], vec![2.0, 1.5]]).unwrap();
        let w = m.weights();
        assert!((w[0] - 1.0 / 4.0).abs() < 1e-15);
        assert!((w[1] - 3.0 / 4.0).abs() < 1e-15);
        assert_eq!(m.with_params(&m.params()).unwrap(), m);
        assert!(CubeMixture::new(vec![vec![0.0]], vec![vec![0.0]]).is_err());
    }

    #[test]
    fn wasserstein_golden_values() {
        let xi = default_xi_grid::<f64>(100).unwrap();
        let zero = QuantileProfile::new(xi.clone(), vec![0.0; 100]).unwrap();
        let one = QuantileProfile::new(xi.clone(), vec![1.0; 100]).unwrap();
        assert_eq!(wasserstein1d_sq(&zero, &one).unwrap(), 1.0);
        assert_eq!(wasserstein1d_sq(&one, &one).unwrap(), 0.0);
        let uniform = QuantileProfile::new(xi.clone(), xi.clone()).unwrap();
        let half = QuantileProfile::new(xi.clone(), vec![0.5; 100]).unwrap();
        let w = wasserstein1d_sq(&uniform, &half).unwrap();
        assert!((w - 1.0 / 12.0).abs() <= 2.0 / 100f64.powi(2));
        assert_eq!(w, wasserstein1d_sq(&half, &uniform).unwrap());
        let other = QuantileProfile::new(default_xi_grid(50).unwrap(), vec![0.0; 50]).unwrap();
        assert!(wasserstein1d_sq(&zero, &other).is_err());
    }

    #[test]
    fn empirical_steps() {
        let radii: Vec<f64> = (-10..=10).map(|k| k as f64 / 10.0).collect();
        let theta = Direction::unit(vec![1.0, 0.0]).unwrap();
        let origin = EmpiricalMeasure::new(vec![vec![0.0, 0.0]]).unwrap();
        let cdf = radon_empirical(&origin, &theta, &radii).unwrap();
        assert_eq!(cdf.values()[9], 0.0);
        assert_eq!(cdf.values()[10], 1.0);
        let pair = EmpiricalMeasure::new(vec![vec![0.5, 0.3], vec![-0.5, -0.3]]).unwrap();
        let cdf = radon_empirical(&pair, &theta, &radii).unwrap();
        assert_eq!(cdf.values()[4], 0.0);
        assert_eq!(cdf.values()[5], 0.5);
        assert_eq!(cdf.values()[14], 0.5);
        assert_eq!(cdf.values()[15], 1.0);
        let far = EmpiricalMeasure::new(vec![vec![2.0, 0.0]]).unwrap();
        assert!(radon_empirical(&far, &theta, &radii).is_err());
    }

    #[test]
    fn adam_examples() {
        let state = AdamState::new(2);
        let (p, s) = adam_step(&[1.0, -2.0], &[0.0, 0.0], &state, 0.05, 0.9, 0.99).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
        let (p, _) = adam_step(&[1.0, -2.0], &[3.0, -0.5], &state, 0.05, 0.9, 0.99).unwrap();
        assert!((p[0] - (1.0 - 0.05)).abs() < 1e-8);
        assert!((p[1] - (-2.0 + 0.05)).abs() < 1e-7);
        let again = adam_step(&[1.0, -2.0], &[3.0, -0.5], &state, 0.05, 0.9, 0.99).unwrap();
        assert_eq!(again.0, p);
    }

    #[test]
    fn zero_epochs_return_init() {
        let xi = default_xi_grid(32).unwrap();
        let dirs = vec![Direction::unit(vec![1.0, 0.0]).unwrap(), Direction::unit(vec![0.0, 1.0]).unwrap()];
        let radii: Vec<f64> = (-20..=20).map(|k| k as f64 / 10.0).collect();
        let mut cfg = SwConfig::new(dirs, radii, xi).unwrap();
        cfg.adam.epochs = 0;
        let target = Measure::Empirical(EmpiricalMeasure::new(vec![vec![0.3, 0.1]]).unwrap());
        let init = default_init(2, 2).unwrap();
        let res = fit_mixture(&target, 2, &cfg, Some(init.clone())).unwrap();
        assert_eq!(res.mixture, init);
        assert!(res.loss_trace.is_empty());
    }
}
