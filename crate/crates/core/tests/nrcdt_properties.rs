use hyperradon::directions::fibonacci_sphere;
use hyperradon::geometry::Direction;
use hyperradon::ingest::{apply_affine_voxels, random_affine, synth_shape, AffineMap, AffineRanges, Shape};
use hyperradon::nrcdt::{default_xi_grid, max_nrcdt, nrcdt, nrcdt_projection, QuantileMode};
use hyperradon::voxel::{linspace, sinogram, VoxelImage};
use hyperradon::Error;
use nalgebra::{DMatrix, DVector};

fn xi() -> Vec<f64> {
    default_xi_grid(128).unwrap()
}

#[test]
fn profiles_are_normalized_and_monotone() {
    let img =
        synth_shape(&Shape::SolidBox { center: vec![0.05, 0.0, -0.1], half_widths: vec![0.3, 0.2, 0.1] }, 16).unwrap();
    let dirs = fibonacci_sphere::<f64>(20).unwrap();
    let radii = linspace(-0.9, 0.9, 181).unwrap();
    let sino = sinogram(&img, dirs.points(), &radii, None).unwrap();
    for k in 0..20 {
        let p = nrcdt(&sino, k, &xi(), QuantileMode::Linear).unwrap();
        assert!(p.mean().abs() < 1e-6);
        assert!((p.std() - 1.0).abs() < 1e-6);
        assert!(p.values().windows(2).all(|w| w[0] <= w[1]));
    }
    let m = max_nrcdt(&sino, &xi(), QuantileMode::Linear).unwrap();
    for k in 0..20 {
        let p = nrcdt(&sino, k, &xi(), QuantileMode::Linear).unwrap();
        assert!(m.values().iter().zip(p.values()).all(|(a, b)| a >= b));
    }
    assert!(nrcdt(&sino, 20, &xi(), QuantileMode::Linear).is_err());
}

#[test]
fn single_direction_max_equals_profile() {
    let img = synth_shape(&Shape::SolidSphere { center: vec![0.0; 3], radius: 0.3 }, 12).unwrap();
    let theta = Direction::normalized(vec![0.2, 0.5, -0.3]).unwrap();
    let radii = linspace(-0.9, 0.9, 121).unwrap();
    let sino = sinogram(&img, std::slice::from_ref(&theta), &radii, None).unwrap();
    let m = max_nrcdt(&sino, &xi(), QuantileMode::Linear).unwrap();
    assert_eq!(m, nrcdt(&sino, 0, &xi(), QuantileMode::Linear).unwrap());
}

#[test]
fn ball_profiles_agree_across_directions() {
    let img = synth_shape(&Shape::SolidSphere { center: vec![0.0; 3], radius: 0.35 }, 32).unwrap();
    // grid symmetries of a centered ball: axis permutations and sign flips
    let a = [0.48, -0.6, 0.64];
    let related = [vec![a[0], a[1], a[2]], vec![a[1], a[2], a[0]], vec![-a[2], a[0], -a[1]], vec![a[0], -a[1], -a[2]]];
    let dirs: Vec<_> = related.into_iter().map(|v| Direction::normalized(v).unwrap()).collect();
    let radii = linspace(-0.9, 0.9, 241).unwrap();
    let sino = sinogram(&img, &dirs, &radii, None).unwrap();
    let first = nrcdt(&sino, 0, &xi(), QuantileMode::Linear).unwrap();
    for k in 1..dirs.len() {
        let p = nrcdt(&sino, k, &xi(), QuantileMode::Linear).unwrap();
        assert!(p.sup_distance(&first).unwrap() < 1e-6, "direction {k}");
    }
    // unrelated directions only agree up to voxelization
    let other = fibonacci_sphere::<f64>(16).unwrap();
    let sino = sinogram(&img, other.points(), &radii, None).unwrap();
    for k in 0..16 {
        let p = nrcdt(&sino, k, &xi(), QuantileMode::Linear).unwrap();
        assert!(p.sup_distance(&first).unwrap() < 0.05, "direction {k}");
    }
}

#[test]
fn whole_voxel_shift_leaves_profile_unchanged() {
    let n = 16;
    let s = 1.0 / n as f64;
    let img = synth_shape(&Shape::LShape { center: vec![-0.05, 0.0, 0.0], length: 0.5, thickness: 0.2 }, n).unwrap();
    let theta = Direction::normalized(vec![0.6, 0.8, 0.0]).unwrap();
    let shift = AffineMap::new(DMatrix::identity(3, 3), DVector::from_vec(vec![s, 0.0, 0.0])).unwrap();
    let moved = apply_affine_voxels(&img, &shift).unwrap();
    // radius spacing dividing the projected shift 0.6 s
    let h = 0.6 * s / 4.0;
    let radii: Vec<f64> = (-100..=100).map(|k| k as f64 * h).collect();
    let a = sinogram(&img, std::slice::from_ref(&theta), &radii, None).unwrap();
    let b = sinogram(&moved, std::slice::from_ref(&theta), &radii, None).unwrap();
    let pa = nrcdt(&a, 0, &xi(), QuantileMode::Linear).unwrap();
    let pb = nrcdt(&b, 0, &xi(), QuantileMode::Linear).unwrap();
    assert!(pa.sup_distance(&pb).unwrap() < 1e-6);
}

#[test]
fn mass_within_one_cell_is_degenerate() {
    // all mass between two grid radii: the step quantile is constant
    let radii = [0.0, 0.1, 0.2, 0.3];
    let proj = [0.0, 0.0, 1.0, 0.0];
    let profile = nrcdt_projection(&radii[1..3], &proj[1..3], &xi(), QuantileMode::Step);
    assert!(matches!(profile, Err(Error::Degenerate(_))));
    // a single voxel still has the width of a voxel
    let mut img = VoxelImage::<f64>::unit_grid(3, 8, vec![0.0; 512]).unwrap();
    img.set(&[3, 4, 5], 1.0);
    let theta = Direction::axis(3, 0).unwrap();
    let sino = sinogram(&img, std::slice::from_ref(&theta), &linspace(-0.9, 0.9, 301).unwrap(), None).unwrap();
    assert!(nrcdt(&sino, 0, &xi(), QuantileMode::Linear).is_ok());
}

#[test]
fn max_profile_is_nearly_affine_invariant() {
    let n = 64;
    let img = synth_shape(&Shape::SolidBox { center: vec![0.0; 3], half_widths: vec![0.18, 0.13, 0.09] }, n).unwrap();
    let dirs = fibonacci_sphere::<f64>(64).unwrap();
    let radii = linspace(-0.9, 0.9, 181).unwrap();
    let grid = xi();
    let profile = |f: &VoxelImage<f64>| {
        let sino = sinogram(f, dirs.points(), &radii, None).unwrap();
        max_nrcdt(&sino, &grid, QuantileMode::Linear).unwrap()
    };
    let reference = profile(&img);
    let ranges = AffineRanges { scale_min: 0.8, scale_max: 1.25, shift_fraction: 0.03, ..AffineRanges::default() };
    let mut worst: f64 = 0.0;
    for seed in 0..4 {
        let map = random_affine(seed, 3, &ranges).unwrap();
        let p = profile(&apply_affine_voxels(&img, &map).unwrap());
        worst = worst.max(p.sup_distance(&reference).unwrap() / reference.sup_norm());
    }
    assert!(worst < 0.05, "relative deviation {worst}");
}
