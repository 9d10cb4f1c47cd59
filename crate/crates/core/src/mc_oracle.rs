//! Monte Carlo estimates of cube sections, used as an independent oracle for
//! the closed form.
//!
//! The estimator counts uniform samples of the box that fall in the slab
//! `|⟨θ, x⟩ - t| ≤ ε` and rescales by `2^d P(a) / (2ε)`. At fixed `ε` it is
//! unbiased for the slab-regularized area, not for the sharp one.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_dim, invalid, Result};
use crate::geometry::{CubeSection, Direction, HalfWidths};
use crate::scalar::Real;

/// Samples per RNG stream. The partition into batches depends only on the
/// sample count, so results do not depend on the thread count.
pub const BATCH: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate<T> {
    pub estimate: T,
    pub std_error: T,
}

/// Independent stream for batch `batch` of the draw identified by `key`.
fn batch_rng(seed: u64, key: u64, batch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng.set_word_pos(u128::from(batch) << 40);
    rng
}

/// Draws `count` points of `(-a, a]^d` and passes each projection `⟨θ, x⟩`
/// to `f`.
fn project_batch<T: Real>(rng: &mut ChaCha8Rng, a: &[T], theta: &[T], count: usize, mut f: impl FnMut(T)) {
    let one = T::one();
    let two = T::lit(2.0);
    for _ in 0..count {
        let mut p = T::zero();
        for (&aj, &tj) in a.iter().zip(theta) {
            // u ∈ [0, 1) maps to a(1 - 2u) ∈ (-a, a]
            let u: f64 = rng.random();
            p += tj * aj * (one - two * T::lit(u));
        }
        f(p);
    }
}

fn batches(num_samples: usize) -> impl ParallelIterator<Item = (u64, usize)> {
    let n = num_samples.div_ceil(BATCH);
    (0..n).into_par_iter().map(move |b| {
        let count = BATCH.min(num_samples - b * BATCH);
        (b as u64, count)
    })
}

fn check_eps<T: Real>(eps: T) -> Result<()> {
    if eps > T::zero() && eps.is_finite() {
        Ok(())
    } else {
        invalid(format!("slab half-width must be positive, got {eps}"))
    }
}

fn scale_counts<T: Real>(hits: u64, num_samples: usize, volume: T, eps: T) -> McEstimate<T> {
    let n = T::from_usize_lossy(num_samples);
    let p = T::lit(hits as f64) / n;
    let scale = volume / (eps + eps);
    McEstimate { estimate: p * scale, std_error: (p * (T::one() - p) / n).sqrt() * scale }
}

/// Estimate of `A_θ^a(t)` from `num_samples` uniform points with hit
/// condition `|⟨θ, x⟩ - t| ≤ eps`, with its binomial standard error.
pub fn mc_cube_plane_area<T: Real>(
    a: &HalfWidths<T>,
    theta: &Direction<T>,
    t: T,
    eps: T,
    num_samples: usize,
    seed: u64,
) -> Result<McEstimate<T>> {
    check_dim(a.dim(), theta.dim())?;
    check_eps(eps)?;
    if num_samples == 0 {
        return invalid("need at least one sample");
    }
    let hits: u64 = batches(num_samples)
        .map(|(b, count)| {
            let mut rng = batch_rng(seed, 0, b);
            let mut hits = 0u64;
            project_batch(&mut rng, a.as_slice(), theta.as_slice(), count, |p| {
                if (p - t).abs() <= eps {
                    hits += 1;
                }
            });
            hits
        })
        .sum();
    Ok(scale_counts(hits, num_samples, a.volume(), eps))
}

/// Estimates on a whole radius grid from one shared sample set: per-radius
/// hit counts are accumulated by locating each projection in the sorted grid.
pub fn mc_cube_plane_area_grid<T: Real>(
    a: &HalfWidths<T>,
    theta: &Direction<T>,
    radii: &[T],
    eps: T,
    num_samples: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<McEstimate<T>>> {
    check_dim(a.dim(), theta.dim())?;
    check_eps(eps)?;
    if num_samples == 0 {
        return invalid("need at least one sample");
    }
    if radii.windows(2).any(|w| w[1] < w[0]) {
        return invalid("radius grid must be sorted ascending");
    }
    let counts = batches(num_samples)
        .map(|(b, count)| {
            let mut rng = batch_rng(seed, stream, b);
            let mut hits = vec![0u64; radii.len()];
            project_batch(&mut rng, a.as_slice(), theta.as_slice(), count, |p| {
                let lo = radii.partition_point(|&r| r < p - eps).saturating_sub(1);
                for (j, &r) in radii.iter().enumerate().skip(lo) {
                    if r > p + eps && j > lo {
                        break;
                    }
                    if (p - r).abs() <= eps {
                        hits[j] += 1;
                    }
                }
            });
            hits
        })
        .reduce(
            || vec![0u64; radii.len()],
            |mut x, y| {
                x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
                x
            },
        );
    let volume = a.volume();
    Ok(counts.into_iter().map(|h| scale_counts(h, num_samples, volume, eps)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct McReportRow {
    pub num_samples: usize,
    pub mean_abs_diff: f64,
    pub mean_time_mc_sec: f64,
    pub time_exact_sec: f64,
    /// `mean_abs_diff` divided by the largest exact value on the grid.
    pub normalized_mean_abs_diff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McReport {
    pub rows: Vec<McReportRow>,
    pub max_exact: f64,
}

impl McReport {
    pub const HEADER: &'static str = "N,mean_abs_diff,mean_time_mc_sec,time_exact_sec,normalized_mean_abs_diff";

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::HEADER)?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.num_samples, r.mean_abs_diff, r.mean_time_mc_sec, r.time_exact_sec, r.normalized_mean_abs_diff
            )?;
        }
        Ok(())
    }

    /// Least-squares slope of `log(mean_abs_diff)` against `log N`.
    pub fn log_log_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.mean_abs_diff > 0.0)
            .map(|r| ((r.num_samples as f64).ln(), r.mean_abs_diff.ln()))
            .collect();
        least_squares_slope(&pts)
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Exact areas on the `directions × radii` grid, row-major by direction.
pub fn exact_grid<T: Real>(a: &HalfWidths<T>, directions: &[Direction<T>], radii: &[T]) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(directions.len() * radii.len());
    for theta in directions {
        let section = CubeSection::new(a, theta)?;
        out.extend(radii.iter().map(|&t| section.area(t)));
    }
    Ok(out)
}

/// For every sample count, the mean absolute difference between Monte Carlo
/// estimates and the exact areas over the grid, averaged over `repeats`
/// independent seeds (`seed + repeat`), together with wall-clock timings.
pub fn mc_comparison_report<T: Real>(
    a: &HalfWidths<T>,
    directions: &[Direction<T>],
    radii: &[T],
    eps: T,
    sample_counts: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<McReport> {
    if repeats == 0 {
        return invalid("repeats must be at least 1");
    }
    if directions.is_empty() || radii.is_empty() || sample_counts.is_empty() {
        return invalid("comparison grid is empty");
    }
    let start = Instant::now();
    let exact = exact_grid(a, directions, radii)?;
    let time_exact_sec = start.elapsed().as_secs_f64();
    let max_exact = exact.iter().map(|v| v.to_f64_lossy()).fold(0.0, f64::max);
    let cells = exact.len() as f64;

    let mut rows = Vec::with_capacity(sample_counts.len());
    for &n in sample_counts {
        let mut diff_sum = 0.0;
        let mut time_sum = 0.0;
        for r in 0..repeats {
            let start = Instant::now();
            let mut diff = 0.0;
            for (i, theta) in directions.iter().enumerate() {
                let est = mc_cube_plane_area_grid(a, theta, radii, eps, n, seed.wrapping_add(r as u64), i as u64)?;
                let row = &exact[i * radii.len()..(i + 1) * radii.len()];
                diff += est.iter().zip(row).map(|(e, &x)| (e.estimate - x).abs().to_f64_lossy()).sum::<f64>();
            }
            time_sum += start.elapsed().as_secs_f64();
            diff_sum += diff / cells;
        }
        let mean_abs_diff = diff_sum / repeats as f64;
        rows.push(McReportRow {
            num_samples: n,
            mean_abs_diff,
            mean_time_mc_sec: time_sum / repeats as f64,
            time_exact_sec,
            normalized_mean_abs_diff: if max_exact > 0.0 { mean_abs_diff / max_exact } else { 0.0 },
        });
    }
    Ok(McReport { rows, max_exact })
}
