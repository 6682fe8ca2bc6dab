#![allow(dead_code)]

use cgil_core::features::{Features, LabeledFeatures};
use cgil_core::harness::{synthesize, Benchmark, BenchmarkSpec};
use cgil_core::rng::{normal_vec, seeded, Rng};
use cgil_core::ClassId;

pub const SEEDS: [u64; 3] = [1992, 1996, 1997];

/// `n` points around `mean` with isotropic spread `std`.
pub fn cluster(mean: &[f64], std: f64, n: usize, rng: &mut Rng) -> Features {
    let mut data = Vec::with_capacity(n * mean.len());
    for _ in 0..n {
        let noise = normal_vec(rng, mean.len(), std);
        data.extend(mean.iter().zip(noise).map(|(m, e)| m + e));
    }
    Features::new(mean.len(), data).unwrap()
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Well separated unit-norm clusters, one per class id.
pub fn labeled_clusters(classes: &[ClassId], dim: usize, per_class: usize, std: f64, seed: u64) -> LabeledFeatures {
    let mut rng = seeded(seed, 0);
    let mut out = LabeledFeatures::empty(dim);
    for &c in classes {
        let mean = unit(normal_vec(&mut rng, dim, 1.0));
        let f = cluster(&mean, std, per_class, &mut rng);
        for row in f.rows() {
            out.push(c, row).unwrap();
        }
    }
    out
}

pub fn mean_of(f: &Features) -> Vec<f64> {
    f.mean()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// The desk-scale separable benchmark: 10 classes, 5 tasks, d = 32.
pub fn separable() -> Benchmark {
    synthesize(&BenchmarkSpec::synthetic(10, 5, 32, 10.0, 7)).unwrap()
}

pub fn small_bench(classes: usize, tasks: usize, dim: usize, seed: u64) -> Benchmark {
    let mut spec = BenchmarkSpec::synthetic(classes, tasks, dim, 10.0, seed);
    spec.train_per_class = 40;
    spec.test_per_class = 20;
    synthesize(&spec).unwrap()
}
