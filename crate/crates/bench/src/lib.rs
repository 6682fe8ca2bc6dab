//! Fixtures shared by the benchmarks.

use cgil_core::features::{Features, LabeledFeatures};
use cgil_core::rng::{normal_vec, seeded};
use cgil_core::ClassId;

/// `classes` clusters of `per_class` points in `dim` dimensions.
pub fn clusters(classes: usize, per_class: usize, dim: usize, seed: u64) -> LabeledFeatures {
    let mut rng = seeded(seed, 0);
    let mut out = LabeledFeatures::empty(dim);
    for c in 0..classes {
        let mean = normal_vec(&mut rng, dim, 1.0);
        for _ in 0..per_class {
            let row: Vec<f64> = mean.iter().zip(normal_vec(&mut rng, dim, 0.1)).map(|(m, e)| m + e).collect();
            out.push(c as ClassId, &row).expect("consistent dim");
        }
    }
    out
}

pub fn gaussian_rows(n: usize, dim: usize, seed: u64) -> Features {
    Features::new(dim, normal_vec(&mut seeded(seed, 0), n * dim, 1.0)).expect("consistent dim")
}
