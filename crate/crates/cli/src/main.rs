use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hyperradon::classify::{run_experiment, ExperimentConfig, LabeledFeatureSet, Norm};
use hyperradon::geometry::{
    cube_plane_area, cube_plane_area_2d, cube_plane_area_3d, cube_plane_area_regularized, Direction, HalfWidths,
};
use hyperradon::ingest::{parse_off, synth_shape, voxelize, Shape};
use hyperradon::mc_oracle::mc_comparison_report;
use hyperradon::trace_features::write_features_csv;
use hyperradon::voxel::{default_eps, default_radii, read_rvox, sinogram, write_rvox};
use hyperradon_cli::{
    args_hash, featurize, header_line, load_off_tree, nrcdt_features, parse_grid, parse_sample_counts, parse_vector,
    synthetic_dataset, trace_features, CliError, CliResult, DirectionSpec, Item, NrcdtParams, SyntheticSpec,
    TraceParams,
};

mod sw;

#[derive(Parser)]
#[command(name = "hyperradon", version, about = "Exact Radon transforms of cubes and voxel images")]
struct Cli {
    /// Upper bound on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Area of the section of the box [-a, a] with the hyperplane <x, θ> = t.
    CubeArea(CubeAreaArgs),
    /// Exact sinogram of an RVOX image.
    Sinogram(SinogramArgs),
    /// Monte Carlo estimates against the exact areas.
    McCompare(McCompareArgs),
    /// 1-NN classification with trace-transform features.
    ClassifyTrace {
        #[command(flatten)]
        common: ClassifyArgs,
        #[command(flatten)]
        trace: TraceArgs,
    },
    /// 1-NN classification with max-normalized quantile profiles.
    ClassifyNrcdt {
        #[command(flatten)]
        common: ClassifyArgs,
        #[command(flatten)]
        nrcdt: NrcdtArgs,
    },
    /// Fits a cube mixture to a target by sliced Wasserstein descent.
    FitSw(ConfigArgs),
    /// Sliced Wasserstein barycenter of two measures as a cube mixture.
    Barycenter(ConfigArgs),
    /// Writes a direction set as `index,x1,...,xd`.
    Directions {
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rasterizes a parametric shape given as JSON into an RVOX file.
    SynthShape {
        /// Shape JSON, or `@path` to read it from a file.
        #[arg(long)]
        shape: String,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxelizes an OFF mesh into an RVOX file.
    Voxelize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        /// Keep only the surface voxels.
        #[arg(long)]
        no_fill: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("offsets").required(true).args(["t", "t_grid"])))]
struct CubeAreaArgs {
    #[arg(long)]
    dim: usize,
    /// Half-widths, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    a: String,
    /// Direction, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    theta: String,
    #[arg(long, allow_negative_numbers = true)]
    t: Option<f64>,
    /// Offsets as lo:hi:count.
    #[arg(long, allow_hyphen_values = true)]
    t_grid: Option<String>,
    /// Slab half-width of the regularized value.
    #[arg(long)]
    eps: Option<f64>,
    /// Scale θ to unit length instead of rejecting it.
    #[arg(long)]
    normalize: bool,
    /// Use the closed forms specialized to d = 2 and d = 3.
    #[arg(long, conflicts_with = "eps")]
    corollary: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SinogramArgs {
    #[arg(long)]
    input: PathBuf,
    /// fibonacci:n | grid:n1,n2 | circle:n | sobol:n
    #[arg(long)]
    directions: String,
    /// lo:hi:count (default: 513 radii covering the image).
    #[arg(long, allow_hyphen_values = true)]
    radii: Option<String>,
    /// Slab half-width, or `auto` for half the radius spacing.
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct McCompareArgs {
    #[arg(long, default_value_t = 4)]
    dim: usize,
    /// Half-widths (default: all ones).
    #[arg(long, allow_hyphen_values = true)]
    a: Option<String>,
    #[arg(long, default_value = "sobol:8")]
    directions: String,
    #[arg(long, default_value = "-2:2:33", allow_hyphen_values = true)]
    radii: String,
    /// Sample counts, e.g. 2^10,2^12,2^14.
    #[arg(long, default_value = "2^10,2^12,2^14")]
    samples: String,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["data", "synthetic"])))]
struct ClassifyArgs {
    /// Directory with one subdirectory of OFF meshes per class.
    #[arg(long)]
    data: Option<PathBuf>,
    /// affine3:<count>[:<grid>]
    #[arg(long)]
    synthetic: Option<String>,
    /// Voxel grid for OFF meshes.
    #[arg(long, default_value_t = 32)]
    grid: usize,
    /// Training samples per class.
    #[arg(long = "R", default_value_t = 3)]
    train_per_class: usize,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    /// l1, l2 or linf.
    #[arg(long, default_value = "l2")]
    norm: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NrcdtArgs {
    #[arg(long, default_value = "fibonacci:64")]
    directions: String,
    #[arg(long, default_value_t = 181)]
    radius_count: usize,
    #[arg(long, default_value_t = 128)]
    quantiles: usize,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long, default_value_t = 16)]
    n1: usize,
    #[arg(long, default_value_t = 9)]
    n2: usize,
    #[arg(long, default_value_t = 129)]
    radius_count: usize,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration (default: the built-in experiment).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Destination of a command's files, stamping each with the header line.
pub struct Output {
    dir: PathBuf,
    header: String,
}

impl Output {
    fn new(dir: &Path, header: String) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), header })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Creates `name` inside the output directory with the header written.
    pub fn csv(&self, name: &str) -> CliResult<Box<dyn Write>> {
        open_csv(Some(&self.dir.join(name)), &self.header)
    }

    /// Writes a JSON object with an added `header` field.
    pub fn write_json(&self, name: &str, mut value: serde_json::Value) -> CliResult<()> {
        value["header"] = serde_json::json!(self.header.trim_start_matches("# "));
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(&value)?;
        fs::write(&path, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

/// A file (or stdout) with the header line already written.
fn open_csv(path: Option<&Path>, header: &str) -> CliResult<Box<dyn Write>> {
    let mut w: Box<dyn Write> = match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    writeln!(w, "{header}")?;
    Ok(w)
}

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn read_image(path: &Path) -> CliResult<hyperradon::VoxelImageF64> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_rvox(BufReader::new(file)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_image(path: &Path, img: &hyperradon::VoxelImageF64) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    write_rvox(img, &mut w)?;
    w.flush()?;
    Ok(())
}

fn cube_area(args: &CubeAreaArgs, header: &str) -> CliResult<()> {
    let a = parse_vector(&args.a)?;
    let theta = parse_vector(&args.theta)?;
    if a.len() != args.dim || theta.len() != args.dim {
        return usage(format!("--a and --theta need {} components", args.dim));
    }
    let a = HalfWidths::new(a)?;
    let theta = if args.normalize {
        Direction::normalized(theta)?
    } else {
        Direction::unit(theta)
            .map_err(|e| CliError::from(e).context("θ must be a unit vector (or pass --normalize)"))?
    };
    if args.corollary && !(2..=3).contains(&args.dim) {
        return usage("--corollary is only available for --dim 2 and --dim 3");
    }
    if let Some(eps) = args.eps {
        if !(eps > 0.0 && eps.is_finite()) {
            return usage("--eps must be positive");
        }
    }
    let eval = |t: f64| -> CliResult<f64> {
        Ok(match (args.eps, args.corollary, args.dim) {
            (Some(eps), _, _) => cube_plane_area_regularized(&a, &theta, t, eps)?,
            (None, true, 2) => cube_plane_area_2d(&a, &theta, t)?,
            (None, true, _) => cube_plane_area_3d(&a, &theta, t)?,
            (None, false, _) => cube_plane_area(&a, &theta, t)?,
        })
    };
    match (&args.t_grid, args.t) {
        (Some(grid), _) => {
            let ts = parse_grid(grid)?;
            let mut w = open_csv(args.out.as_deref(), header)?;
            writeln!(w, "t,value")?;
            for t in ts {
                writeln!(w, "{t},{}", eval(t)?)?;
            }
            w.flush()?;
        }
        (None, Some(t)) => {
            let v = eval(t)?;
            match &args.out {
                Some(p) => {
                    let mut w = open_csv(Some(p), header)?;
                    writeln!(w, "t,value\n{t},{v}")?;
                    w.flush()?;
                }
                None => println!("{v}"),
            }
        }
        (None, None) => unreachable!("clap requires --t or --t-grid"),
    }
    Ok(())
}

fn sinogram_cmd(args: &SinogramArgs, header: &str) -> CliResult<()> {
    let img = read_image(&args.input)?;
    let spec: DirectionSpec = args.directions.parse()?;
    if spec.dim() != img.dim() {
        return usage(format!(
            "direction spec {spec} is for dimension {} but the image has dimension {}",
            spec.dim(),
            img.dim()
        ));
    }
    let dirs = spec.build()?;
    let radii = match &args.radii {
        Some(s) => parse_grid(s)?,
        None => default_radii(&img),
    };
    let eps = match args.eps.as_deref() {
        None => None,
        Some("auto") => default_eps(&radii),
        Some(s) => Some(s.parse::<f64>().map_err(|_| CliError::Usage(format!("bad --eps `{s}`")))?),
    };
    let start = Instant::now();
    let sino = sinogram(&img, dirs.points(), &radii, eps)?;
    log::info!(
        "sinogram of {} directions x {} radii computed in {:.3} s",
        dirs.len(),
        radii.len(),
        start.elapsed().as_secs_f64()
    );
    let mut w = open_csv(args.out.as_deref(), header)?;
    sino.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn mc_compare(args: &McCompareArgs, header: &str) -> CliResult<()> {
    let a = match &args.a {
        Some(s) => parse_vector(s)?,
        None => vec![1.0; args.dim],
    };
    if a.len() != args.dim {
        return usage(format!("--a needs {} components", args.dim));
    }
    let spec: DirectionSpec = args.directions.parse()?;
    if spec.dim() != args.dim {
        return usage(format!("direction spec {spec} is for dimension {}, not {}", spec.dim(), args.dim));
    }
    let dirs = spec.build()?;
    let radii = parse_grid(&args.radii)?;
    let counts = parse_sample_counts(&args.samples)?;
    let report =
        mc_comparison_report(&HalfWidths::new(a)?, dirs.points(), &radii, args.eps, &counts, args.repeats, args.seed)?;
    let mut w = open_csv(args.out.as_deref(), header)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    if let Some(r) = report.rows.first() {
        eprintln!("exact method: {:.6} s for {} directions x {} radii", r.time_exact_sec, dirs.len(), radii.len());
    }
    for r in &report.rows {
        eprintln!(
            "N = {:>10}: mean |diff| {:.3e} ({:.3}% of max), {:.3} s per repeat",
            r.num_samples,
            r.mean_abs_diff,
            100.0 * r.normalized_mean_abs_diff,
            r.mean_time_mc_sec
        );
    }
    if let Some(slope) = report.log_log_slope() {
        eprintln!("log-log slope of the error against N: {slope:.3}");
    }
    Ok(())
}

fn load_items(args: &ClassifyArgs) -> CliResult<Vec<Item>> {
    match (&args.data, &args.synthetic) {
        (Some(dir), None) => load_off_tree(dir, args.grid),
        (None, Some(spec)) => synthetic_dataset(spec.parse::<SyntheticSpec>()?, args.seed),
        _ => unreachable!("clap enforces exactly one source"),
    }
}

fn classify(
    args: &ClassifyArgs,
    header: &str,
    features: impl Fn(&[Item]) -> CliResult<Vec<(String, Vec<f64>)>>,
    write_features: impl Fn(&[Item], &[(String, Vec<f64>)], &mut dyn Write) -> CliResult<()>,
) -> CliResult<()> {
    let norm: Norm = args.norm.parse()?;
    let cfg = ExperimentConfig { train_per_class: args.train_per_class, repeats: args.repeats, norm, seed: args.seed };
    let out = Output::new(&args.out, header.to_string())?;
    let items = load_items(args)?;
    let start = Instant::now();
    let rows = features(&items)?;
    log::info!("features of {} volumes computed in {:.3} s", items.len(), start.elapsed().as_secs_f64());
    let mut w = out.csv("features.csv")?;
    write_features(&items, &rows, &mut w)?;
    w.flush()?;
    let set = LabeledFeatureSet::from_named(rows)?;
    let res = run_experiment(&set, &cfg)?;
    let mut w = out.csv("accuracy.csv")?;
    res.write_accuracy_csv(&mut w)?;
    w.flush()?;
    let mut w = out.csv("confusion.csv")?;
    res.write_confusion_csv(set.class_names(), &mut w)?;
    w.flush()?;
    let mut w = out.csv("distmap.csv")?;
    res.write_distance_csv(&set, &mut w)?;
    w.flush()?;
    println!(
        "mean accuracy {:.4} (std {:.4}) over {} repeats",
        res.mean_accuracy,
        res.std_accuracy,
        res.accuracies.len()
    );
    Ok(())
}

fn run(cli: Cli, header: impl Fn(&str) -> String) -> CliResult<()> {
    match &cli.command {
        Command::CubeArea(args) => cube_area(args, &header("cube-area")),
        Command::Sinogram(args) => sinogram_cmd(args, &header("sinogram")),
        Command::McCompare(args) => mc_compare(args, &header("mc-compare")),
        Command::ClassifyTrace { common, trace } => {
            let params = TraceParams { n1: trace.n1, n2: trace.n2, radius_count: trace.radius_count };
            classify(
                common,
                &header("classify-trace"),
                |items| featurize(items, |img| trace_features(img, &params)),
                |items, rows, w| {
                    let named: Vec<(String, Vec<f64>)> =
                        items.iter().zip(rows).map(|(it, (_, f))| (it.name.clone(), f.clone())).collect();
                    Ok(write_features_csv(&named, w)?)
                },
            )
        }
        Command::ClassifyNrcdt { common, nrcdt } => {
            let params = NrcdtParams {
                directions: nrcdt.directions.parse()?,
                radius_count: nrcdt.radius_count,
                quantiles: nrcdt.quantiles,
            };
            if params.directions.dim() != 3 {
                return usage("classification works on 3D volumes; use a fibonacci or grid direction spec");
            }
            classify(
                common,
                &header("classify-nrcdt"),
                |items| featurize(items, |img| nrcdt_features(img, &params)),
                |items, rows, w| {
                    write!(w, "sample_id,class")?;
                    for k in 1..=params.quantiles {
                        write!(w, ",q{k}")?;
                    }
                    writeln!(w)?;
                    for (it, (_, v)) in items.iter().zip(rows) {
                        write!(w, "{},{}", it.name, it.class)?;
                        for x in v {
                            write!(w, ",{x:.16e}")?;
                        }
                        writeln!(w)?;
                    }
                    Ok(())
                },
            )
        }
        Command::FitSw(args) => {
            let out = Output::new(&args.out, header("fit-sw"))?;
            let res = sw::fit_sw(args.config.as_deref(), &out)?;
            println!("final loss {:.6e} after {} epochs", res.final_loss, res.loss_trace.len());
            Ok(())
        }
        Command::Barycenter(args) => {
            let out = Output::new(&args.out, header("barycenter"))?;
            let res = sw::barycenter(args.config.as_deref(), &out)?;
            println!("final loss {:.6e} after {} epochs", res.final_loss, res.loss_trace.len());
            Ok(())
        }
        Command::Directions { spec, out } => {
            let spec: DirectionSpec = spec.parse()?;
            let mut w = open_csv(out.as_deref(), &header("directions"))?;
            spec.build()?.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::SynthShape { shape, grid, out } => {
            let text = match shape.strip_prefix('@') {
                Some(path) => fs::read_to_string(path).map_err(|e| CliError::Data(format!("{path}: {e}")))?,
                None => shape.clone(),
            };
            let shape: Shape =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad shape JSON: {e}")))?;
            write_image(out, &synth_shape(&shape, *grid)?)
        }
        Command::Voxelize { input, grid, no_fill, out } => {
            let text = fs::read_to_string(input).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
            let mesh = parse_off(&text).map_err(|e| CliError::from(e).context(input.display()))?;
            write_image(out, &voxelize(&mesh, *grid, !*no_fill)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let args: Vec<String> = std::env::args().skip(1).collect();
    let hash = args_hash(&args);
    match run(cli, |command| header_line(command, &hash)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
