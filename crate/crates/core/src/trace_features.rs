//! Trace-transform features of 3D sinograms sampled on a spherical grid.

use std::fmt;
use std::io::Write;

use crate::directions::spherical_grid;
use crate::error::{check_dim, invalid, Result};
use crate::scalar::Real;
use crate::voxel::{default_radii, sinogram, Sinogram, VoxelImage};

/// Axis labels of a [`SinogramTensor3`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    T,
    Theta1,
    Theta2,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::T => 0,
            Axis::Theta1 => 1,
            Axis::Theta2 => 2,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Axis::T => "t",
            Axis::Theta1 => "theta1",
            Axis::Theta2 => "theta2",
        }
    }
}

/// Sinogram values on the grid `t × ϑ1 × ϑ2`, row-major in that order.
/// `ϑ1` covers `[0, 2π)` and `ϑ2` covers `[0, π]`; the direction of
/// `(ϑ1, ϑ2)` is `(sin ϑ1 sin ϑ2, cos ϑ1 sin ϑ2, cos ϑ2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SinogramTensor3<T> {
    shape: [usize; 3],
    radii: Vec<T>,
    values: Vec<T>,
}

impl<T: Real> SinogramTensor3<T> {
    pub fn new(shape: [usize; 3], radii: Vec<T>, values: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return invalid("tensor axes must be nonempty");
        }
        check_dim(shape[0], radii.len())?;
        check_dim(shape.iter().product(), values.len())?;
        Ok(Self { shape, radii, values })
    }

    /// Tensor of an arbitrary array; the `t` grid is `0, 1, ..., D1 - 1`.
    pub fn from_values(shape: [usize; 3], values: Vec<T>) -> Result<Self> {
        let radii = (0..shape[0]).map(T::from_usize_lossy).collect();
        Self::new(shape, radii, values)
    }

    /// Rearranges a sinogram over `spherical_grid(n1, n2)` into the full
    /// `D1 × n1 × n2` tensor, repeating the pole values along `ϑ1`.
    pub fn from_spherical_sinogram(sino: &Sinogram<T>, n1: usize, n2: usize) -> Result<Self> {
        let (dirs, d1) = sino.shape();
        check_dim(spherical_grid_len(n1, n2), dirs)?;
        let mut values = Vec::with_capacity(d1 * n1 * n2);
        for k in 0..d1 {
            for i in 0..n1 {
                for j in 0..n2 {
                    values.push(sino.get(spherical_grid_index(n1, n2, i, j), k));
                }
            }
        }
        Self::new([d1, n1, n2], sino.radii().to_vec(), values)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn radii(&self) -> &[T] {
        &self.radii
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> T {
        self.values[(k * self.shape[1] + i) * self.shape[2] + j]
    }
}

fn spherical_grid_len(n1: usize, n2: usize) -> usize {
    match n2 {
        1 => 1,
        _ => n1 * (n2 - 2) + 2,
    }
}

/// Position of `(ϑ1_i, ϑ2_j)` in `spherical_grid(n1, n2)`, which stores each
/// pole once.
fn spherical_grid_index(n1: usize, n2: usize, i: usize, j: usize) -> usize {
    if n2 == 1 || j == 0 {
        0
    } else if j == n2 - 1 {
        1 + n1 * (n2 - 2)
    } else {
        1 + (j - 1) * n1 + i
    }
}

/// Exact sinogram of `img` on the `n1 × n2` spherical grid with the default
/// radius grid covering `[-R, R]`.
pub fn trace_tensor<T: Real>(
    img: &VoxelImage<T>,
    n1: usize,
    n2: usize,
    radius_count: Option<usize>,
) -> Result<SinogramTensor3<T>> {
    check_dim(3, img.dim())?;
    let radii = match radius_count {
        Some(count) => {
            let r = img.max_radius();
            crate::voxel::linspace(-r, r, count)?
        }
        None => default_radii(img),
    };
    let dirs = spherical_grid::<T>(n1, n2)?;
    let sino = sinogram(img, dirs.points(), &radii, None)?;
    SinogramTensor3::from_spherical_sinogram(&sino, n1, n2)
}

/// The four basic functionals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Functional {
    /// Maximum.
    F1,
    /// Half the total variation `½ Σ |g_{i+1} - g_i|`.
    F2,
    /// Sum.
    F3,
    /// `max - min`.
    F4,
}

impl Functional {
    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            1 => Ok(Functional::F1),
            2 => Ok(Functional::F2),
            3 => Ok(Functional::F3),
            4 => Ok(Functional::F4),
            _ => invalid(format!("functional index must be 1..=4, got {i}")),
        }
    }

    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn apply<T: Real>(self, g: &[T]) -> Result<T> {
        if g.is_empty() {
            return invalid("functional applied to an empty vector");
        }
        Ok(self.apply_nonempty(g.iter().copied()))
    }

    fn apply_nonempty<T: Real>(self, mut g: impl Iterator<Item = T>) -> T {
        let first = g.next().expect("nonempty");
        match self {
            Functional::F1 => g.fold(first, T::max),
            Functional::F2 => {
                let (mut prev, mut total) = (first, T::zero());
                for x in g {
                    total += (x - prev).abs();
                    prev = x;
                }
                total / T::lit(2.0)
            }
            Functional::F3 => g.fold(first, |acc, x| acc + x),
            Functional::F4 => {
                let (lo, hi) = g.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x)));
                hi - lo
            }
        }
    }
}

/// `functional(i, g)` with `i` in `1..=4`.
pub fn functional<T: Real>(i: usize, g: &[T]) -> Result<T> {
    Functional::from_index(i)?.apply(g)
}

/// A reduction order `π` and the functionals applied along it: `F_{i1}`
/// consumes axis `π1`, then `F_{i2}` consumes `π2`, then `F_{i3}` consumes `π3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ExtractorSpec {
    pub order: [Axis; 3],
    pub functionals: [Functional; 3],
}

impl fmt::Display for ExtractorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c] = self.order.map(Axis::name);
        let [i, j, k] = self.functionals.map(Functional::index);
        write!(f, "({a},{b},{c}) F{i} F{j} F{k}")
    }
}

pub const FEATURE_COUNT: usize = 51;

const ORDERS: [[Axis; 3]; 4] = [
    [Axis::T, Axis::Theta1, Axis::Theta2],
    [Axis::T, Axis::Theta2, Axis::Theta1],
    [Axis::Theta2, Axis::T, Axis::Theta1],
    [Axis::Theta1, Axis::T, Axis::Theta2],
];

// functional triples per reduction order, written as decimal i1 i2 i3
const TRIPLES: [&[u16]; 4] = [
    &[111, 112, 114, 121, 131, 134, 141, 142, 211, 214, 234, 241, 242, 312, 314, 321, 341],
    &[112, 113, 114, 121, 124, 141, 143, 211, 213, 214, 222, 241, 243, 311, 324, 344],
    &[114, 121, 124, 211, 221, 311, 312, 314, 324, 334],
    &[114, 121, 131, 132, 211, 221, 311, 321],
];

/// The 51 extractors, grouped by reduction order.
pub fn extractor_specs() -> Vec<ExtractorSpec> {
    let mut specs = Vec::with_capacity(FEATURE_COUNT);
    for (order, triples) in ORDERS.iter().zip(TRIPLES) {
        for &code in triples {
            let digits = [code / 100, code / 10 % 10, code % 10];
            specs.push(ExtractorSpec {
                order: *order,
                functionals: digits.map(|d| Functional::from_index(d as usize).expect("table digit")),
            });
        }
    }
    specs
}

/// Applies one extractor to the tensor.
pub fn extract<T: Real>(tensor: &SinogramTensor3<T>, spec: &ExtractorSpec) -> T {
    let shape = tensor.shape;
    let strides = [shape[1] * shape[2], shape[2], 1];
    let [p1, p2, p3] = spec.order.map(Axis::index);
    let [f1, f2, f3] = spec.functionals;
    let mut inner = Vec::with_capacity(shape[p2]);
    let mut outer = Vec::with_capacity(shape[p3]);
    for c in 0..shape[p3] {
        inner.clear();
        for b in 0..shape[p2] {
            let base = b * strides[p2] + c * strides[p3];
            let line = (0..shape[p1]).map(|a| tensor.values[base + a * strides[p1]]);
            inner.push(f1.apply_nonempty(line));
        }
        outer.push(f2.apply_nonempty(inner.iter().copied()));
    }
    f3.apply_nonempty(outer.into_iter())
}

/// All 51 features in table order.
pub fn extract_features<T: Real>(tensor: &SinogramTensor3<T>) -> Vec<T> {
    extractor_specs().iter().map(|spec| extract(tensor, spec)).collect()
}

/// Writes `sample_id,f1,...,f51` rows.
pub fn write_features_csv<T: Real, W: Write>(rows: &[(String, Vec<T>)], mut out: W) -> Result<()> {
    write!(out, "sample_id")?;
    for k in 1..=FEATURE_COUNT {
        write!(out, ",f{k}")?;
    }
    writeln!(out)?;
    for (id, features) in rows {
        check_dim(FEATURE_COUNT, features.len())?;
        write!(out, "{id}")?;
        for v in features {
            write!(out, ",{:.16e}", v.to_f64_lossy())?;
        }
        writeln!(out)?;
    }
    Ok(())
}
