//! Building blocks of the `hyperradon` binary: grid and direction spec
//! parsing, datasets for the classification commands, feature pipelines and
//! the output header.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hyperradon::directions::{circle_equispaced, fibonacci_sphere, sobol_sphere_s3, spherical_grid, DirectionSet};
use hyperradon::ingest::{
    apply_affine_voxels, parse_off, preprocess, random_affine, synth_shape, voxelize, AffineRanges, Shape,
};
use hyperradon::nrcdt::{default_xi_grid, max_nrcdt, QuantileMode};
use hyperradon::trace_features::{extract_features, trace_tensor};
use hyperradon::voxel::{linspace, sinogram, VoxelImage};
use hyperradon::Error;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub const FORMAT_VERSION: u32 = 1;

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or parameters; exit code 2.
    Usage(String),
    /// Unreadable, malformed or degenerate data; exit code 3.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }

    /// Prefixes the message with `context`, keeping the kind.
    pub fn context(self, context: impl fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{context}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{context}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// First 16 hex digits of SHA-256 over the arguments, NUL separated, with
/// `--threads` and `--out` (and their values) removed so that the hash names
/// the computation and not where or how fast it ran.
pub fn args_hash<S: AsRef<str>>(args: &[S]) -> String {
    let mut hasher = Sha256::new();
    let mut skip_next = false;
    for a in args {
        let a = a.as_ref();
        if skip_next {
            skip_next = false;
            continue;
        }
        if a == "--threads" || a == "--out" {
            skip_next = true;
            continue;
        }
        if a.starts_with("--threads=") || a.starts_with("--out=") {
            continue;
        }
        hasher.update(a.as_bytes());
        hasher.update([0u8]);
    }
    hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// `# hyperradon v1 <command> <args-hash>`, without the newline.
pub fn header_line(command: &str, hash: &str) -> String {
    format!("# hyperradon v{FORMAT_VERSION} {command} {hash}")
}

/// Comma-separated floats.
pub fn parse_vector(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("`{x}` is not a number"))))
        .collect()
}

/// `lo:hi:count` with `lo < hi` and `count ≥ 2`.
pub fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return usage(format!("grid `{s}` must have the form lo:hi:count"));
    }
    let lo: f64 = parts[0].parse().map_err(|_| CliError::Usage(format!("bad lower bound in `{s}`")))?;
    let hi: f64 = parts[1].parse().map_err(|_| CliError::Usage(format!("bad upper bound in `{s}`")))?;
    let count: usize = parts[2].parse().map_err(|_| CliError::Usage(format!("bad count in `{s}`")))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) || count < 2 {
        return usage(format!("grid `{s}` needs finite lo < hi and at least two points"));
    }
    Ok(linspace(lo, hi, count)?)
}

/// Sample counts such as `2^10,2^12,5000`.
pub fn parse_sample_counts(s: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|item| {
            let item = item.trim();
            let bad = || CliError::Usage(format!("bad sample count `{item}`"));
            let n = match item.split_once('^') {
                Some((base, exp)) => {
                    let base: usize = base.parse().map_err(|_| bad())?;
                    let exp: u32 = exp.parse().map_err(|_| bad())?;
                    base.checked_pow(exp).ok_or_else(bad)?
                }
                None => item.parse().map_err(|_| bad())?,
            };
            if n == 0 {
                return Err(bad());
            }
            Ok(n)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirectionSpec {
    Fibonacci(usize),
    Grid(usize, usize),
    Circle(usize),
    Sobol(usize),
}

impl DirectionSpec {
    pub fn dim(self) -> usize {
        match self {
            DirectionSpec::Circle(_) => 2,
            DirectionSpec::Fibonacci(_) | DirectionSpec::Grid(..) => 3,
            DirectionSpec::Sobol(_) => 4,
        }
    }

    pub fn build(self) -> CliResult<DirectionSet<f64>> {
        Ok(match self {
            DirectionSpec::Fibonacci(n) => fibonacci_sphere(n)?,
            DirectionSpec::Grid(n1, n2) => spherical_grid(n1, n2)?,
            DirectionSpec::Circle(n) => circle_equispaced(n)?,
            DirectionSpec::Sobol(n) => sobol_sphere_s3(n, 1)?,
        })
    }

    /// Default set for sliced distances in `d` dimensions.
    pub fn default_for_dim(d: usize, n: usize) -> CliResult<Self> {
        match d {
            2 => Ok(DirectionSpec::Circle(n)),
            3 => Ok(DirectionSpec::Fibonacci(n)),
            4 => Ok(DirectionSpec::Sobol(n)),
            _ => usage(format!("no direction scheme for dimension {d}")),
        }
    }
}

impl FromStr for DirectionSpec {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("direction spec `{s}` must look like fibonacci:n")))?;
        let count = |x: &str| {
            x.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::Usage(format!("bad direction count `{x}` in `{s}`")))
        };
        match kind {
            "fibonacci" => Ok(DirectionSpec::Fibonacci(count(arg)?)),
            "circle" => Ok(DirectionSpec::Circle(count(arg)?)),
            "sobol" => Ok(DirectionSpec::Sobol(count(arg)?)),
            "grid" => {
                let (a, b) = arg
                    .split_once(',')
                    .ok_or_else(|| CliError::Usage(format!("grid spec `{s}` must look like grid:n1,n2")))?;
                Ok(DirectionSpec::Grid(count(a)?, count(b)?))
            }
            _ => usage(format!("unknown direction scheme `{kind}` (expected fibonacci, grid, circle or sobol)")),
        }
    }
}

impl fmt::Display for DirectionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DirectionSpec::Fibonacci(n) => write!(f, "fibonacci:{n}"),
            DirectionSpec::Grid(a, b) => write!(f, "grid:{a},{b}"),
            DirectionSpec::Circle(n) => write!(f, "circle:{n}"),
            DirectionSpec::Sobol(n) => write!(f, "sobol:{n}"),
        }
    }
}

/// `affine3:<count>[:<grid>]`: three templates with `count` random affine
/// copies each, voxelized on a `grid³` lattice (default 32).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub count: usize,
    pub grid: usize,
}

impl FromStr for SyntheticSpec {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts[0] != "affine3" || !(2..=3).contains(&parts.len()) {
            return usage(format!("synthetic spec `{s}` must look like affine3:<count>[:<grid>]"));
        }
        let num = |x: &str| {
            x.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::Usage(format!("bad number `{x}` in `{s}`")))
        };
        let count = num(parts[1])?;
        let grid = if parts.len() == 3 { num(parts[2])? } else { 32 };
        if grid < 8 {
            return usage("synthetic grids need at least 8 voxels per axis");
        }
        Ok(Self { count, grid })
    }
}

/// The box, ball and L-shape templates in unit grid coordinates.
pub fn templates() -> Vec<(&'static str, Shape)> {
    vec![
        ("box", Shape::SolidBox { center: vec![0.0; 3], half_widths: vec![0.18, 0.13, 0.09] }),
        ("ball", Shape::SolidSphere { center: vec![0.0; 3], radius: 0.18 }),
        ("l_shape", Shape::LShape { center: vec![0.0; 3], length: 0.36, thickness: 0.12 }),
    ]
}

/// One labeled volume of a dataset.
#[derive(Clone, Debug)]
pub struct Item {
    pub class: String,
    pub name: String,
    pub image: VoxelImage<f64>,
}

/// Template `c`, instance `i` uses the affine map seeded with
/// `seed + c·count + i`.
pub fn synthetic_dataset(spec: SyntheticSpec, seed: u64) -> CliResult<Vec<Item>> {
    let ranges = AffineRanges::default();
    let jobs: Vec<(usize, &'static str, Shape, usize)> = templates()
        .into_iter()
        .enumerate()
        .flat_map(|(c, (name, shape))| (0..spec.count).map(move |i| (c, name, shape.clone(), i)))
        .collect();
    jobs.into_par_iter()
        .map(|(c, name, shape, i)| {
            let template = synth_shape(&shape, spec.grid)?;
            let map = random_affine(seed.wrapping_add((c * spec.count + i) as u64), 3, &ranges)?;
            let image = apply_affine_voxels(&template, &map)?;
            Ok(Item { class: name.to_string(), name: format!("{name}_{i:04}"), image })
        })
        .collect()
}

/// A ModelNet-style tree: one subdirectory per class holding `.off` files at
/// any depth. Classes and files are taken in sorted path order.
pub fn load_off_tree(root: &Path, grid: usize) -> CliResult<Vec<Item>> {
    let mut classes: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| CliError::Data(format!("{}: {e}", root.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    let mut jobs = Vec::new();
    for dir in &classes {
        let class = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mut files = Vec::new();
        collect_off_files(dir, &mut files)?;
        files.sort();
        jobs.extend(files.into_iter().map(|f| (class.clone(), f)));
    }
    if jobs.is_empty() {
        return Err(CliError::Data(format!("no .off files found under {}", root.display())));
    }
    jobs.into_par_iter()
        .map(|(class, path)| {
            let text = fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let mesh = parse_off(&text).map_err(|e| CliError::from(e).context(path.display()))?;
            let image = voxelize(&mesh, grid, true).map_err(|e| CliError::from(e).context(path.display()))?;
            let name = path.strip_prefix(root).unwrap_or(&path).display().to_string();
            Ok(Item { class, name, image })
        })
        .collect()
}

fn collect_off_files(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    for entry in fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_off_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")) {
            out.push(path);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NrcdtParams {
    pub directions: DirectionSpec,
    pub radius_count: usize,
    pub quantiles: usize,
}

impl Default for NrcdtParams {
    fn default() -> Self {
        Self { directions: DirectionSpec::Fibonacci(64), radius_count: 181, quantiles: 128 }
    }
}

/// Preprocessed volume → exact sinogram → max-normalized quantile profile.
pub fn nrcdt_features(image: &VoxelImage<f64>, params: &NrcdtParams) -> CliResult<Vec<f64>> {
    let img = preprocess(image)?;
    let dirs = params.directions.build()?;
    let r = img.max_radius();
    let radii = linspace(-r, r, params.radius_count)?;
    let xi = default_xi_grid(params.quantiles)?;
    let sino = sinogram(&img, dirs.points(), &radii, None)?;
    Ok(max_nrcdt(&sino, &xi, QuantileMode::Linear)?.values().to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceParams {
    pub n1: usize,
    pub n2: usize,
    pub radius_count: usize,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self { n1: 16, n2: 9, radius_count: 129 }
    }
}

/// Preprocessed volume → sinogram tensor on the spherical grid → 51 features.
pub fn trace_features(image: &VoxelImage<f64>, params: &TraceParams) -> CliResult<Vec<f64>> {
    let img = preprocess(image)?;
    let tensor = trace_tensor(&img, params.n1, params.n2, Some(params.radius_count))?;
    Ok(extract_features(&tensor))
}

/// Feature vectors for every item, in item order.
pub fn featurize<F>(items: &[Item], f: F) -> CliResult<Vec<(String, Vec<f64>)>>
where
    F: Fn(&VoxelImage<f64>) -> CliResult<Vec<f64>> + Sync,
{
    items.par_iter().map(|it| Ok((it.class.clone(), f(&it.image).map_err(|e| e.context(&it.name))?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_threads_and_out() {
        let a = args_hash(&["sinogram", "--input", "x.rvox", "--threads", "4", "--out", "a.csv"]);
        let b = args_hash(&["sinogram", "--input", "x.rvox", "--out=b.csv", "--threads=1"]);
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
        assert_ne!(a, args_hash(&["sinogram", "--input", "y.rvox"]));
    }

    #[test]
    fn grid_and_direction_specs() {
        let g = parse_grid("-2:2:401").unwrap();
        assert_eq!(g.len(), 401);
        assert_eq!((g[0], g[200], g[400]), (-2.0, 0.0, 2.0));
        assert!(parse_grid("2:-2:5").is_err());
        assert!(parse_grid("0:1").is_err());
        assert_eq!("fibonacci:256".parse::<DirectionSpec>().unwrap(), DirectionSpec::Fibonacci(256));
        assert_eq!("grid:8,5".parse::<DirectionSpec>().unwrap(), DirectionSpec::Grid(8, 5));
        assert_eq!(DirectionSpec::Grid(8, 5).build().unwrap().len(), 8 * 3 + 2);
        assert!("sobol:0".parse::<DirectionSpec>().is_err());
        assert!("spiral:5".parse::<DirectionSpec>().is_err());
        assert_eq!(parse_sample_counts("2^10, 12,2^3").unwrap(), vec![1024, 12, 8]);
        assert!(parse_sample_counts("2^x").is_err());
    }

    #[test]
    fn synthetic_spec() {
        assert_eq!("affine3:10".parse::<SyntheticSpec>().unwrap(), SyntheticSpec { count: 10, grid: 32 });
        assert_eq!("affine3:2:24".parse::<SyntheticSpec>().unwrap().grid, 24);
        assert!("affine4:2".parse::<SyntheticSpec>().is_err());
        assert!("affine3:0".parse::<SyntheticSpec>().is_err());
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(CliError::from(Error::InvalidArgument("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::DimensionMismatch { expected: 2, got: 3 }).exit_code(), 2);
        assert_eq!(CliError::from(Error::Format { offset: 4, msg: "x".into() }).exit_code(), 3);
        assert_eq!(CliError::from(Error::Degenerate("x".into())).exit_code(), 3);
    }
}
