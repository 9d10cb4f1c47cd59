//! Configuration and driver for `fit-sw` and `barycenter`.

use std::cell::RefCell;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use hyperradon::ingest::{sample_two_cluster_cloud, synth_shape, Shape};
use hyperradon::nrcdt::default_xi_grid;
use hyperradon::sliced_wasserstein::{
    barycenter_init, default_init, fit_mixture_observed, projected_density_sinogram, sw_barycenter, AdamConfig,
    CubeMixture, EmpiricalMeasure, FitResult, GradientMethod, Measure, SwConfig,
};
use hyperradon::voxel::{linspace, read_rvox};
use hyperradon_cli::{parse_grid, CliError, CliResult, DirectionSpec};
use serde::{Deserialize, Serialize};

use crate::Output;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Half the points uniform on `[-1, -1/2]^d`, half on `[1/2, 1]^d`.
    TwoCluster {
        #[serde(default = "default_cloud_size")]
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    Points {
        points: Vec<Vec<f64>>,
    },
    Mixture {
        centers: Vec<Vec<f64>>,
        widths: Vec<Vec<f64>>,
    },
    /// A parametric shape voxelized on a `grid^d` unit lattice.
    Shape {
        shape: Shape,
        #[serde(default = "default_shape_grid")]
        grid: usize,
    },
    Rvox {
        path: PathBuf,
    },
}

fn default_cloud_size() -> usize {
    40
}

fn default_shape_grid() -> usize {
    32
}

impl TargetSpec {
    fn build(&self, d: usize) -> CliResult<Measure> {
        let m = match self {
            TargetSpec::TwoCluster { n, seed } => {
                Measure::Empirical(EmpiricalMeasure::new(sample_two_cluster_cloud(*n, d, *seed)?)?)
            }
            TargetSpec::Points { points } => Measure::Empirical(EmpiricalMeasure::new(points.clone())?),
            TargetSpec::Mixture { centers, widths } => {
                Measure::Mixture(CubeMixture::new(centers.clone(), widths.clone())?)
            }
            TargetSpec::Shape { shape, grid } => Measure::Voxel(synth_shape(shape, *grid)?),
            TargetSpec::Rvox { path } => {
                let file = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                let img = read_rvox(BufReader::new(file)).map_err(|e| CliError::from(e).context(path.display()))?;
                Measure::Voxel(img)
            }
        };
        if m.dim() != d {
            return Err(CliError::Usage(format!("target has dimension {} but the config asks for {d}", m.dim())));
        }
        Ok(m)
    }
}

/// Optimizer settings shared by both commands. Missing fields take the
/// command's defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Optimizer {
    /// Direction spec; defaults to `circle:n`, `fibonacci:n` or `sobol:n`
    /// by dimension with `n = direction_count`.
    pub directions: Option<String>,
    pub direction_count: Option<usize>,
    /// Radius grid `lo:hi:count`; defaults to `radius_count` points on `[-√d, √d]`.
    pub radii: Option<String>,
    pub radius_count: Option<usize>,
    pub quantiles: Option<usize>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epochs: Option<usize>,
    pub gradient: Option<GradientMethod>,
    pub snapshot_every: Option<usize>,
}

/// Direction, radius and quantile counts used when the config is silent.
struct Counts {
    directions: usize,
    radii: usize,
    quantiles: usize,
}

const FIT_COUNTS: Counts = Counts { directions: 128, radii: 101, quantiles: 256 };
const BARYCENTER_COUNTS: Counts = Counts { directions: 42, radii: 31, quantiles: 128 };

impl Optimizer {
    fn snapshot_every(&self) -> CliResult<usize> {
        match self.snapshot_every.unwrap_or(10) {
            0 => Err(CliError::Usage("snapshot_every must be positive".into())),
            n => Ok(n),
        }
    }

    fn sw_config(&self, d: usize, counts: &Counts) -> CliResult<SwConfig> {
        let spec = match &self.directions {
            Some(s) => s.parse()?,
            None => DirectionSpec::default_for_dim(d, self.direction_count.unwrap_or(counts.directions))?,
        };
        if spec.dim() != d {
            return Err(CliError::Usage(format!("direction spec {spec} is for dimension {}, not {d}", spec.dim())));
        }
        let radii = match &self.radii {
            Some(s) => parse_grid(s)?,
            None => {
                let r = (d as f64).sqrt();
                linspace(-r, r, self.radius_count.unwrap_or(counts.radii))?
            }
        };
        let xi = default_xi_grid(self.quantiles.unwrap_or(counts.quantiles))?;
        let mut cfg = SwConfig::new(spec.build()?.into_points(), radii, xi)?;
        let adam = AdamConfig::default();
        cfg.adam = AdamConfig {
            lr: self.lr.unwrap_or(adam.lr),
            beta1: self.beta1.unwrap_or(adam.beta1),
            beta2: self.beta2.unwrap_or(adam.beta2),
            epochs: self.epochs.unwrap_or(adam.epochs),
        };
        cfg.gradient = self.gradient.unwrap_or_default();
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub centers: Vec<Vec<f64>>,
    pub widths: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub dim: usize,
    pub components: usize,
    pub target: TargetSpec,
    pub init: Option<InitSpec>,
    pub optimizer: Optimizer,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            components: 2,
            target: TargetSpec::TwoCluster { n: 40, seed: 0 },
            init: None,
            optimizer: Optimizer::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarycenterConfig {
    pub dim: usize,
    pub components: usize,
    /// Weight of `mu1`; must lie in `(0, 1)`.
    pub lambda: f64,
    pub mu1: TargetSpec,
    pub mu2: TargetSpec,
    /// Seed of the random initial centers.
    pub seed: u64,
    pub optimizer: Optimizer,
}

fn hemisphere(normal: [f64; 3]) -> TargetSpec {
    TargetSpec::Shape {
        shape: Shape::Hemisphere { center: vec![0.0; 3], radius: 0.4, normal: normal.to_vec() },
        grid: 32,
    }
}

impl Default for BarycenterConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            components: 200,
            lambda: 0.5,
            mu1: hemisphere([0.0, 0.0, 1.0]),
            mu2: hemisphere([1.0, 0.0, 0.0]),
            seed: 0,
            optimizer: Optimizer::default(),
        }
    }
}

pub fn load_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

/// Writes `snapshots/epoch_NNNN.json` for every `every`-th epoch; the first
/// write error is kept and reported after the run.
struct Snapshots<'a> {
    out: &'a Output,
    every: usize,
    error: RefCell<Option<CliError>>,
}

impl<'a> Snapshots<'a> {
    fn new(out: &'a Output, every: usize) -> CliResult<Self> {
        fs::create_dir_all(out.dir().join("snapshots"))?;
        Ok(Self { out, every, error: RefCell::new(None) })
    }

    fn observe(&self, epoch: usize, m: &CubeMixture, loss: f64) {
        if !epoch.is_multiple_of(self.every) || self.error.borrow().is_some() {
            return;
        }
        let mut v = m.to_json_value();
        v["epoch"] = serde_json::json!(epoch);
        v["loss"] = serde_json::json!(loss);
        if let Err(e) = self.out.write_json(&format!("snapshots/epoch_{epoch:04}.json"), v) {
            *self.error.borrow_mut() = Some(e);
        }
    }

    fn finish(self) -> CliResult<()> {
        self.error.into_inner().map_or(Ok(()), Err)
    }
}

fn write_results(out: &Output, res: &FitResult, cfg: &SwConfig, targets: &[(&str, &Measure)]) -> CliResult<()> {
    out.write_json("result.json", res.to_json_value())?;
    let mut w = out.csv("loss.csv")?;
    writeln!(w, "epoch,loss")?;
    for (i, l) in res.loss_trace.iter().enumerate() {
        writeln!(w, "{i},{l:.16e}")?;
    }
    w.flush()?;
    let fit = Measure::Mixture(res.mixture.clone());
    for (name, mu) in std::iter::once(("fit", &fit)).chain(targets.iter().copied()) {
        let sino = projected_density_sinogram(mu, &cfg.directions, &cfg.radii)?;
        let mut w = out.csv(&format!("sinogram_{name}.csv"))?;
        sino.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

pub fn fit_sw(config: Option<&Path>, out: &Output) -> CliResult<FitResult> {
    let cfg: FitConfig = load_config(config)?;
    let sw = cfg.optimizer.sw_config(cfg.dim, &FIT_COUNTS)?;
    let target = cfg.target.build(cfg.dim)?;
    let init = match &cfg.init {
        Some(i) => CubeMixture::new(i.centers.clone(), i.widths.clone())?,
        None => default_init(cfg.dim, cfg.components)?,
    };
    out.write_json("config.json", serde_json::to_value(&cfg)?)?;
    let snaps = Snapshots::new(out, cfg.optimizer.snapshot_every()?)?;
    let res = fit_mixture_observed(&target, cfg.components, &sw, Some(init), |e, m, l| snaps.observe(e, m, l))?;
    snaps.finish()?;
    write_results(out, &res, &sw, &[("target", &target)])?;
    Ok(res)
}

pub fn barycenter(config: Option<&Path>, out: &Output) -> CliResult<FitResult> {
    let cfg: BarycenterConfig = load_config(config)?;
    if !(cfg.lambda > 0.0 && cfg.lambda < 1.0) {
        return Err(CliError::Usage(format!("lambda must lie in (0, 1), got {}", cfg.lambda)));
    }
    let sw = cfg.optimizer.sw_config(cfg.dim, &BARYCENTER_COUNTS)?;
    let mu1 = cfg.mu1.build(cfg.dim)?;
    let mu2 = cfg.mu2.build(cfg.dim)?;
    let init = barycenter_init(cfg.dim, cfg.components, cfg.seed)?;
    out.write_json("config.json", serde_json::to_value(&cfg)?)?;
    let snaps = Snapshots::new(out, cfg.optimizer.snapshot_every()?)?;
    let res = sw_barycenter(&mu1, &mu2, cfg.lambda, &sw, init, |e, m, l| snaps.observe(e, m, l))?;
    snaps.finish()?;
    write_results(out, &res, &sw, &[("mu1", &mu1), ("mu2", &mu2)])?;
    Ok(res)
}
