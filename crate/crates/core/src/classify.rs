//! One-nearest-neighbor classification experiments on feature vectors.

use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_dim, invalid, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Norm {
    L1,
    #[default]
    L2,
    Linf,
}

impl Norm {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Norm::L1 => diffs.sum(),
            Norm::L2 => diffs.map(|v| v * v).sum::<f64>().sqrt(),
            Norm::Linf => diffs.fold(0.0, f64::max),
        }
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            "linf" => Ok(Norm::Linf),
            _ => invalid(format!("unknown norm '{s}' (expected l1, l2 or linf)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub label: usize,
    pub vector: Vec<f64>,
}

/// Samples with class indices into `class_names`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeatureSet {
    class_names: Vec<String>,
    samples: Vec<Sample>,
}

impl LabeledFeatureSet {
    pub fn new(class_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let dim = first.vector.len();
            for s in &samples {
                check_dim(dim, s.vector.len())?;
                if s.label >= class_names.len() {
                    return invalid(format!("sample {} has unknown class {}", s.id, s.label));
                }
            }
        }
        let mut ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return invalid("sample ids must be unique");
        }
        Ok(Self { class_names, samples })
    }

    /// Builds the set from `(class name, vector)` pairs; ids follow input
    /// order and classes are numbered by first appearance.
    pub fn from_named(rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut class_names: Vec<String> = Vec::new();
        let mut samples = Vec::with_capacity(rows.len());
        for (id, (name, vector)) in rows.into_iter().enumerate() {
            let label = match class_names.iter().position(|c| *c == name) {
                Some(k) => k,
                None => {
                    class_names.push(name);
                    class_names.len() - 1
                }
            };
            samples.push(Sample { id: id as u64, label, vector });
        }
        Self::new(class_names, samples)
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }
}

/// Label of the nearest training sample; ties go to the lowest sample id.
pub fn knn1<'a>(train: impl IntoIterator<Item = &'a Sample>, query: &[f64], norm: Norm) -> Result<usize> {
    let mut best: Option<(f64, u64, usize)> = None;
    for s in train {
        check_dim(s.vector.len(), query.len())?;
        let d = norm.distance(&s.vector, query);
        let better = match best {
            None => true,
            Some((bd, bid, _)) => d < bd || (d == bd && s.id < bid),
        };
        if better {
            best = Some((d, s.id, s.label));
        }
    }
    best.map(|(_, _, label)| label).ok_or_else(|| Error::InvalidArgument("training set is empty".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExperimentConfig {
    /// Training samples per class.
    pub train_per_class: usize,
    pub repeats: usize,
    pub norm: Norm,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Sample standard deviation over repeats (zero for a single repeat).
    pub std_accuracy: f64,
    /// Row = true class, column = predicted class, in percent of the row.
    pub confusion: Vec<Vec<f64>>,
    /// Pairwise distances between all samples in input order.
    pub distance_map: Vec<Vec<f64>>,
}

/// Stratified split for one repeat: the first `r` of each class after a
/// seeded shuffle go to training.
fn split(set: &LabeledFeatureSet, r: usize, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_train = vec![false; set.len()];
    for class in 0..set.class_count() {
        let mut members: Vec<usize> = (0..set.len()).filter(|&i| set.samples[i].label == class).collect();
        members.sort_by_key(|&i| set.samples[i].id);
        members.shuffle(&mut rng);
        for &i in members.iter().take(r) {
            is_train[i] = true;
        }
    }
    is_train
}

/// Repeated 1-NN classification over random stratified splits.
pub fn run_experiment(set: &LabeledFeatureSet, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if set.class_count() < 2 {
        return invalid("classification needs at least two classes");
    }
    if cfg.repeats == 0 || cfg.train_per_class == 0 {
        return invalid("repeats and train count must be positive");
    }
    for (class, name) in set.class_names.iter().enumerate() {
        let size = set.samples.iter().filter(|s| s.label == class).count();
        if cfg.train_per_class >= size {
            return invalid(format!(
                "class '{name}' has {size} samples; R = {} leaves none for testing",
                cfg.train_per_class
            ));
        }
    }
    let k = set.class_count();
    let per_repeat: Vec<(f64, Vec<Vec<u64>>)> = (0..cfg.repeats)
        .into_par_iter()
        .map(|rep| {
            let is_train = split(set, cfg.train_per_class, cfg.seed.wrapping_add(rep as u64));
            let train: Vec<&Sample> = set.samples.iter().zip(&is_train).filter(|(_, &t)| t).map(|(s, _)| s).collect();
            let mut counts = vec![vec![0u64; k]; k];
            let (mut correct, mut total) = (0usize, 0usize);
            for (s, _) in set.samples.iter().zip(&is_train).filter(|(_, &t)| !t) {
                let predicted = knn1(train.iter().copied(), &s.vector, cfg.norm)?;
                counts[s.label][predicted] += 1;
                correct += (predicted == s.label) as usize;
                total += 1;
            }
            Ok((correct as f64 / total as f64, counts))
        })
        .collect::<Result<_>>()?;

    let accuracies: Vec<f64> = per_repeat.iter().map(|(a, _)| *a).collect();
    let n = accuracies.len() as f64;
    let mean_accuracy = accuracies.iter().sum::<f64>() / n;
    let std_accuracy = if accuracies.len() > 1 {
        (accuracies.iter().map(|a| (a - mean_accuracy).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut totals = vec![vec![0u64; k]; k];
    for (_, counts) in &per_repeat {
        for (row, add) in totals.iter_mut().zip(counts) {
            for (x, y) in row.iter_mut().zip(add) {
                *x += y;
            }
        }
    }
    let confusion = totals
        .iter()
        .map(|row| {
            let sum: u64 = row.iter().sum();
            row.iter().map(|&c| 100.0 * c as f64 / sum as f64).collect()
        })
        .collect();
    Ok(ExperimentResult {
        accuracies,
        mean_accuracy,
        std_accuracy,
        confusion,
        distance_map: distance_map(set, cfg.norm),
    })
}

pub fn distance_map(set: &LabeledFeatureSet, norm: Norm) -> Vec<Vec<f64>> {
    set.samples.par_iter().map(|a| set.samples.iter().map(|b| norm.distance(&a.vector, &b.vector)).collect()).collect()
}

impl ExperimentResult {
    /// `repeat,accuracy` rows.
    pub fn write_accuracy_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "repeat,accuracy")?;
        for (i, a) in self.accuracies.iter().enumerate() {
            writeln!(out, "{i},{a:.16e}")?;
        }
        Ok(())
    }

    /// `true_class,<predicted classes...>` in percent.
    pub fn write_confusion_csv<W: Write>(&self, class_names: &[String], mut out: W) -> Result<()> {
        writeln!(out, "true_class,{}", class_names.join(","))?;
        for (name, row) in class_names.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{name},{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Square matrix with a `sample_id,label,...` prefix per row.
    pub fn write_distance_csv<W: Write>(&self, set: &LabeledFeatureSet, mut out: W) -> Result<()> {
        let ids: Vec<String> = set.samples.iter().map(|s| s.id.to_string()).collect();
        writeln!(out, "sample_id,label,{}", ids.join(","))?;
        for (s, row) in set.samples.iter().zip(&self.distance_map) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{},{},{}", s.id, set.class_names[s.label], cells.join(","))?;
        }
        Ok(())
    }
}
