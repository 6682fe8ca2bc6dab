mod common;

use cgil_core::features::Features;
use cgil_core::generative::*;
use cgil_core::rng::{normal_vec, seeded};
use cgil_core::Error;
use common::{cluster, dist, unit};

fn blob(dim: usize, std: f64, n: usize, seed: u64) -> (Vec<f64>, Features) {
    let mut rng = seeded(seed, 0);
    let mean = unit(normal_vec(&mut rng, dim, 1.0));
    let f = cluster(&mean, std, n, &mut rng);
    (mean, f)
}

#[test]
fn gaussian_sample_mean_obeys_law_of_large_numbers() {
    let (_, f) = blob(8, 0.3, 500, 1);
    let model = fit_gaussian(&f, &GaussianConfig::default()).unwrap();
    let n = 100_000;
    let samples = model.sample(n, 3);
    let mean = samples.mean();
    for j in 0..8 {
        let sigma = model.covariance()[(j, j)].sqrt();
        let bound = 4.0 * sigma / (n as f64).sqrt();
        assert!(
            (mean[j] - model.mean()[j]).abs() < bound,
            "coordinate {j}: {} vs {} (bound {bound})",
            mean[j],
            model.mean()[j]
        );
    }
}

#[test]
fn gaussian_fit_matches_sample_moments() {
    let (_, f) = blob(4, 0.5, 300, 2);
    let model = fit_gaussian(&f, &GaussianConfig::default()).unwrap();
    let n = f.len() as f64;
    let mean = f.mean();
    for a in 0..4 {
        assert!((model.mean()[a] - mean[a]).abs() < 1e-12);
        for b in 0..4 {
            let cov: f64 = f.rows().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / n;
            let ridge = if a == b { COVARIANCE_RIDGE } else { 0.0 };
            assert!((model.covariance()[(a, b)] - cov - ridge).abs() < 1e-12);
        }
    }
}

#[test]
fn single_sample_class_is_rejected() {
    let f = Features::new(3, vec![1.0, 2.0, 3.0]).unwrap();
    assert!(matches!(
        fit_gaussian(&f, &GaussianConfig::default()),
        Err(Error::InsufficientData(_))
    ));
}

#[test]
fn duplicated_points_still_fit_thanks_to_ridge() {
    let f = Features::new(3, [1.0, 2.0, 3.0].repeat(5)).unwrap();
    let m = fit_gaussian(&f, &GaussianConfig::default()).unwrap();
    assert!((m.covariance()[(0, 0)] - COVARIANCE_RIDGE).abs() < 1e-18);
    assert!(m.sample(10, 1).as_slice().iter().all(|v| v.is_finite()));
}

#[test]
fn em_log_likelihood_never_decreases() {
    for seed in 0..5 {
        let mut rng = seeded(seed, 1);
        let mut data = Vec::new();
        for _ in 0..3 {
            let m = normal_vec(&mut rng, 4, 2.0);
            data.extend(cluster(&m, 0.4, 60, &mut rng).as_slice().iter().copied());
        }
        let f = Features::new(4, data).unwrap();
        let fit = fit_mog(&f, &MogConfig::default(), seed).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {} then {}", w[0], w[1]);
        }
        let total: f64 = fit.model.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn one_component_mixture_is_the_gaussian_fit() {
    let (_, f) = blob(5, 0.4, 200, 4);
    let g = fit_gaussian(&f, &GaussianConfig::default()).unwrap();
    let config = MogConfig {
        components: 1,
        ..MogConfig::default()
    };
    let m = fit_mog(&f, &config, 9).unwrap().model;
    let c = &m.components()[0];
    assert!((c.mean() - g.mean()).amax() < 1e-6);
    assert!((c.covariance() - g.covariance()).amax() < 1e-6);
}

#[test]
fn vae_decoder_samples_land_on_the_cluster() {
    let (mean, f) = blob(16, 0.1, 400, 5);
    let config = VaeConfig::desk_scale();
    let (model, log) = train_vae(&f, &config, 11).unwrap();
    assert!(log.epoch_loss.last().unwrap() < log.epoch_loss.first().unwrap());
    let samples = model.decoder().sample(2000, 12);
    assert!(dist(&samples.mean(), &mean) < 0.5);
}

#[test]
fn store_rejects_duplicates_and_wrong_kind() {
    let (_, f) = blob(4, 0.2, 50, 6);
    let mut store = GeneratorStore::new(GeneratorKind::Gaussian, 4);
    let entry = fit_generator(&f, &GeneratorConfig::new(GeneratorKind::Gaussian), 1, 0).unwrap();
    store.insert(0, entry.clone()).unwrap();
    assert!(matches!(store.insert(0, entry), Err(Error::State(_))));
    let mog = fit_generator(&f, &GeneratorConfig::new(GeneratorKind::Mog), 1, 1).unwrap();
    assert!(matches!(store.insert(1, mog), Err(Error::State(_))));
    assert!(matches!(store.sample_decoder(5, 3, 0), Err(Error::Lookup(_))));
}

#[test]
fn sampling_is_a_pure_function_of_the_seed() {
    let (_, f) = blob(6, 0.2, 80, 7);
    for kind in [GeneratorKind::Gaussian, GeneratorKind::Mog] {
        let mut store = GeneratorStore::new(kind, 6);
        store.insert(3, fit_generator(&f, &GeneratorConfig::new(kind), 5, 3).unwrap()).unwrap();
        let a = store.sample_decoder(3, 40, 21).unwrap();
        let b = store.sample_decoder(3, 40, 21).unwrap();
        let c = store.sample_decoder(3, 40, 22).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

#[test]
fn generator_kind_parses_and_rejects_unknown() {
    assert_eq!("vae".parse::<GeneratorKind>().unwrap(), GeneratorKind::Vae);
    assert_eq!("mog".parse::<GeneratorKind>().unwrap(), GeneratorKind::Mog);
    assert_eq!("gaussian".parse::<GeneratorKind>().unwrap(), GeneratorKind::Gaussian);
    assert!(matches!("gan".parse::<GeneratorKind>(), Err(Error::Spec(_))));
}
