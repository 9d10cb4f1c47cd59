use hyperradon::trace_features::{
    extract, extract_features, extractor_specs, functional, write_features_csv, Axis, SinogramTensor3, FEATURE_COUNT,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> SinogramTensor3<f64> {
    let len = shape.iter().product();
    SinogramTensor3::from_values(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

// Materializes the transposed tensor as nested vectors, then collapses the
// leading axis three times.
fn brute_force(tensor: &SinogramTensor3<f64>, order: [Axis; 3], fs: [usize; 3]) -> f64 {
    let axis = |a: Axis| match a {
        Axis::T => 0,
        Axis::Theta1 => 1,
        Axis::Theta2 => 2,
    };
    let perm = order.map(axis);
    let shape = tensor.shape();
    let mut cube = vec![vec![vec![0.0; shape[perm[2]]]; shape[perm[1]]]; shape[perm[0]]];
    for (a, plane) in cube.iter_mut().enumerate() {
        for (b, line) in plane.iter_mut().enumerate() {
            for (c, cell) in line.iter_mut().enumerate() {
                let mut idx = [0usize; 3];
                idx[perm[0]] = a;
                idx[perm[1]] = b;
                idx[perm[2]] = c;
                *cell = tensor.get(idx[0], idx[1], idx[2]);
            }
        }
    }
    let mut plane = vec![vec![0.0; shape[perm[2]]]; shape[perm[1]]];
    for (b, line) in plane.iter_mut().enumerate() {
        for (c, cell) in line.iter_mut().enumerate() {
            let g: Vec<f64> = cube.iter().map(|p| p[b][c]).collect();
            *cell = functional(fs[0], &g).unwrap();
        }
    }
    let line: Vec<f64> = (0..shape[perm[2]])
        .map(|c| {
            let g: Vec<f64> = plane.iter().map(|l| l[c]).collect();
            functional(fs[1], &g).unwrap()
        })
        .collect();
    functional(fs[2], &line).unwrap()
}

#[test]
fn extractor_table_matches_golden_file() {
    let golden = include_str!("golden/extractor_table.txt");
    let rendered: Vec<String> = extractor_specs().iter().map(|s| s.to_string()).collect();
    let expected: Vec<&str> = golden.lines().collect();
    assert_eq!(expected.len(), FEATURE_COUNT);
    assert_eq!(rendered, expected);
}

#[test]
fn every_feature_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for shape in [[2, 2, 2], [3, 4, 5], [5, 1, 3]] {
        for _ in 0..5 {
            let tensor = random_tensor(&mut rng, shape);
            let features = extract_features(&tensor);
            for (spec, &v) in extractor_specs().iter().zip(&features) {
                let w = brute_force(&tensor, spec.order, spec.functionals.map(|f| f.index()));
                assert_eq!(v, w, "{spec} on {shape:?}");
            }
        }
    }
}

#[test]
fn positively_homogeneous() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let tensor = random_tensor(&mut rng, [4, 3, 5]);
    let alpha = 2.75;
    let scaled =
        SinogramTensor3::from_values(tensor.shape(), tensor.values().iter().map(|v| alpha * v).collect()).unwrap();
    for spec in extractor_specs() {
        let (a, b) = (extract(&tensor, &spec), extract(&scaled, &spec));
        assert!((b - alpha * a).abs() <= 1e-12 * (1.0 + b.abs()), "{spec}: {b} vs {a}");
    }
}

#[test]
fn feature_csv_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let tensor = random_tensor(&mut rng, [2, 3, 2]);
    let rows = vec![("box_0".to_string(), extract_features(&tensor))];
    let mut out = Vec::new();
    write_features_csv(&rows, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("sample_id,f1,f2,"));
    assert!(header.ends_with(",f51"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("box_0,"));
    assert_eq!(row.split(',').count(), 52);
    assert_eq!(extract_features(&tensor), rows[0].1);
}
