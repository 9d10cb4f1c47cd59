use hyperradon::geometry::{cube_plane_area, Direction, HalfWidths};
use hyperradon::voxel::{
    binned_radon, default_radii, discrete_radon, discrete_slab_volume, linspace, sinogram, VoxelImage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, extents: Vec<usize>, s: f64) -> VoxelImage<f64> {
    let len = extents.iter().product();
    VoxelImage::new(extents, s, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_direction(rng: &mut ChaCha8Rng, d: usize) -> Direction<f64> {
    Direction::normalized((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

// Brute force: every voxel's section, evaluated independently of the
// projection bookkeeping inside the library.
fn brute_force(image: &VoxelImage<f64>, theta: &Direction<f64>, t: f64) -> f64 {
    let d = image.dim();
    let a = HalfWidths::uniform(d, image.voxel_size() / 2.0).unwrap();
    let mut idx = vec![0usize; d];
    let mut total = 0.0;
    for flat in 0..image.len() {
        let mut rest = flat;
        for k in (0..d).rev() {
            idx[k] = rest % image.extents()[k];
            rest /= image.extents()[k];
        }
        let p: f64 = image.center(&idx).iter().zip(theta.as_slice()).map(|(c, th)| c * th).sum();
        total += image.values()[flat] * cube_plane_area(&a, theta, t - p).unwrap();
    }
    total
}

#[test]
fn matches_brute_force_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for d in 1..=4 {
        let extents: Vec<usize> = (0..d).map(|_| rng.random_range(1..6)).collect();
        let img = random_image(&mut rng, extents, 0.3);
        let theta = random_direction(&mut rng, d);
        for _ in 0..20 {
            let t = rng.random_range(-1.5..1.5);
            let v = discrete_radon(&img, &theta, t).unwrap();
            let w = brute_force(&img, &theta, t);
            assert!((v - w).abs() <= 1e-12 * w.abs().max(1.0), "d={d} {v} vs {w}");
        }
    }
}

#[test]
fn linearity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = random_image(&mut rng, vec![6, 5, 4], 0.2);
    let g = random_image(&mut rng, vec![6, 5, 4], 0.2);
    let (alpha, beta) = (1.7, -0.4);
    let combo = VoxelImage::new(
        vec![6, 5, 4],
        0.2,
        f.values().iter().zip(g.values()).map(|(x, y)| alpha * x + beta * y).collect(),
    )
    .unwrap();
    for _ in 0..20 {
        let theta = random_direction(&mut rng, 3);
        let t = rng.random_range(-0.8..0.8);
        let lhs = discrete_radon(&combo, &theta, t).unwrap();
        let rhs = alpha * discrete_radon(&f, &theta, t).unwrap() + beta * discrete_radon(&g, &theta, t).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
    }
}

#[test]
fn shift_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, s) = (6usize, 0.25);
    for axis in 0..3 {
        // content occupies indices 0..n-1 along `axis`; the shifted copy 1..n
        let mut f = VoxelImage::<f64>::zeros(vec![n; 3], s).unwrap();
        let mut g = f.clone();
        for i in 0..n - 1 {
            for j in 0..n {
                for k in 0..n {
                    let v = rng.random_range(0.0..1.0);
                    let mut idx = [i, j, k];
                    idx.rotate_right(axis);
                    f.set(&idx, v);
                    idx = [i + 1, j, k];
                    idx.rotate_right(axis);
                    g.set(&idx, v);
                }
            }
        }
        let theta = random_direction(&mut rng, 3);
        let shift = s * theta.as_slice()[axis];
        for m in -10..=10 {
            let t = m as f64 * 0.09;
            let a = discrete_radon(&f, &theta, t).unwrap();
            let b = discrete_radon(&g, &theta, t + shift).unwrap();
            assert!((a - b).abs() <= 1e-12, "axis {axis}: {a} vs {b}");
        }
    }
}

#[test]
fn full_range_slab_integral_is_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for d in 1..=4 {
        let extents: Vec<usize> = (0..d).map(|_| rng.random_range(2..7)).collect();
        let img = random_image(&mut rng, extents, 0.15);
        let theta = random_direction(&mut rng, d);
        let r = img.max_radius() + 1.0;
        let v = discrete_slab_volume(&img, &theta, -r, r).unwrap();
        let mass = img.mass();
        let scale = img.voxel_size().powi(d as i32) * img.values().iter().map(|x| x.abs()).sum::<f64>();
        assert!((v - mass).abs() <= 1e-12 * scale, "d={d} {v} vs {mass}");
    }
}

#[test]
fn whole_voxel_box_reproduces_cube_section() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, s) = (8usize, 0.125);
    // box of voxels 2..6 × 1..8 × 3..4 inside an 8³ grid
    let ranges = [(2usize, 6usize), (1, 8), (3, 4)];
    let mut img = VoxelImage::<f64>::zeros(vec![n; 3], s).unwrap();
    for i in ranges[0].0..ranges[0].1 {
        for j in ranges[1].0..ranges[1].1 {
            for k in ranges[2].0..ranges[2].1 {
                img.set(&[i, j, k], 1.0);
            }
        }
    }
    let half: Vec<f64> = ranges.iter().map(|&(lo, hi)| (hi - lo) as f64 * s / 2.0).collect();
    let center: Vec<f64> = ranges.iter().map(|&(lo, hi)| ((lo + hi) as f64 / 2.0 - n as f64 / 2.0) * s).collect();
    let a = HalfWidths::new(half).unwrap();
    for _ in 0..10 {
        let theta = random_direction(&mut rng, 3);
        let c: f64 = center.iter().zip(theta.as_slice()).map(|(x, y)| x * y).sum();
        for m in -25..=25 {
            let t = m as f64 * 0.03;
            let v = discrete_radon(&img, &theta, t).unwrap();
            let w = cube_plane_area(&a, &theta, t - c).unwrap();
            assert!((v - w).abs() <= 1e-12 * w.max(1.0), "{v} vs {w}");
        }
    }
}

#[test]
fn sinogram_row_integrates_to_mass() {
    let n = 64;
    let img = VoxelImage::unit_grid(3, n, vec![1.0; n * n * n]).unwrap();
    let theta = Direction::normalized(vec![0.3, -0.5, 0.81]).unwrap();
    let radii = default_radii(&img);
    let sino = sinogram(&img, std::slice::from_ref(&theta), &radii, None).unwrap();
    let h = radii[1] - radii[0];
    let row = sino.row(0);
    let integral: f64 = h * (row.iter().sum::<f64>() - 0.5 * (row[0] + row[row.len() - 1]));
    let mass = img.mass();
    assert!(((integral - mass) / mass).abs() < 1e-3, "{integral} vs {mass}");
}

#[test]
fn sinogram_independent_of_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let img = random_image(&mut rng, vec![12, 10, 9], 0.1);
    let dirs: Vec<_> = (0..24).map(|_| random_direction(&mut rng, 3)).collect();
    let radii = linspace(-1.0, 1.0, 101).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sinogram(&img, &dirs, &radii, Some(0.01)).unwrap())
    };
    let one = run(1);
    for threads in [2, 5] {
        let other = run(threads);
        assert!(one.values().iter().zip(other.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn nonnegative_image_gives_nonnegative_sinogram() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let len = 7 * 7;
    let img = VoxelImage::new(vec![7, 7], 0.2, (0..len).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let dirs: Vec<_> = (0..16).map(|_| random_direction(&mut rng, 2)).collect();
    let sino = sinogram(&img, &dirs, &default_radii(&img), None).unwrap();
    assert!(sino.values().iter().all(|&v| v >= 0.0));
}

#[test]
fn binning_baseline_is_close_but_not_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 32;
    let img = VoxelImage::unit_grid(2, n, (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let theta = Direction::normalized(vec![0.6, 0.8]).unwrap();
    let radii = default_radii(&img);
    let h = radii[1] - radii[0];
    let binned = binned_radon(&img, &theta, &radii, h / 2.0).unwrap();
    let exact = sinogram(&img, std::slice::from_ref(&theta), &radii, None).unwrap();
    let mad: f64 =
        binned.iter().zip(exact.row(0)).map(|(a, b): (&f64, &f64)| (a - b).abs()).sum::<f64>() / radii.len() as f64;
    let peak = exact.row(0).iter().cloned().fold(0.0, f64::max);
    assert!(mad > 0.0 && mad < peak, "mad {mad} peak {peak}");
    let binned_mass: f64 = h * binned.iter().sum::<f64>();
    assert!((binned_mass - img.mass()).abs() < 1e-2 * img.mass());
}
