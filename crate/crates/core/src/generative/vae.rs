//! Per-class variational autoencoder over embeddings.
//!
//! Encoder: `d -> hidden -> hidden -> 2 * latent` (mean ‖ log-variance).
//! Decoder: `latent -> hidden -> hidden -> d`. Three affine maps per tower
//! with LeakyReLU between them. Training minimizes the negative ELBO with a
//! mean-squared-error reconstruction term and the closed-form Gaussian KL.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Features;
use crate::formats::store::LayerBlock;
use crate::nn::{BoundLinear, Linear, Mlp};
use crate::rng::{normal_vec, seeded, stream, Rng};
use crate::tensor::{Adam, AdamConfig, Tape, Var};

pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
}

impl VaeConfig {
    /// Full-size network and schedule used with real 768-d embeddings.
    pub fn full_scale() -> Self {
        VaeConfig {
            hidden_dim: 512,
            latent_dim: 256,
            learning_rate: 2e-4,
            epochs: 500,
            batch_size: 128,
            beta: 1.0,
        }
    }

    /// Reduced network for small synthetic benchmarks.
    pub fn desk_scale() -> Self {
        VaeConfig {
            hidden_dim: 64,
            latent_dim: 16,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 128,
            beta: 1.0,
        }
    }
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig::full_scale()
    }
}

/// Encoder and decoder together; exists only while a class is being trained.
#[derive(Debug, Clone)]
pub struct VaeModel {
    encoder: Mlp,
    decoder: VaeDecoder,
}

/// The part of a trained VAE that is kept: latent -> embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeDecoder {
    net: Mlp,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeTrainLog {
    /// Mean negative ELBO per epoch.
    pub epoch_loss: Vec<f64>,
    pub epoch_reconstruction: Vec<f64>,
    pub epoch_kl: Vec<f64>,
}

/// Loss terms recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ElboTerms {
    pub loss: Var,
    pub reconstruction: Var,
    pub kl: Var,
}

impl VaeModel {
    pub fn new(dim: usize, config: &VaeConfig, rng: &mut Rng) -> Self {
        let (h, z) = (config.hidden_dim, config.latent_dim);
        let encoder = Mlp::new(vec![
            Linear::init_uniform(dim, h, rng),
            Linear::init_uniform(h, h, rng),
            Linear::init_uniform(h, 2 * z, rng),
        ])
        .expect("consistent sizes");
        let decoder = Mlp::new(vec![
            Linear::init_uniform(z, h, rng),
            Linear::init_uniform(h, h, rng),
            Linear::init_uniform(h, dim, rng),
        ])
        .expect("consistent sizes");
        VaeModel {
            encoder,
            decoder: VaeDecoder { net: decoder },
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.latent_dim()
    }

    pub fn dim(&self) -> usize {
        self.decoder.dim()
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &VaeDecoder {
        &self.decoder
    }

    /// Drops the encoder.
    pub fn into_decoder(self) -> VaeDecoder {
        self.decoder
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.encoder.set_trainable(trainable);
        self.decoder.net.set_trainable(trainable);
    }
}

/// Records the negative ELBO of a batch on `tape`.
///
/// `x` is `B x d`, `noise` is `B x latent` standard normal draws for the
/// reparameterization `z = mu + exp(logvar / 2) * noise`. Reconstruction is
/// the mean squared error over all elements; KL is summed over latent
/// dimensions and averaged over the batch.
pub fn elbo(
    tape: &mut Tape,
    encoder: &[BoundLinear],
    decoder: &[BoundLinear],
    x: Var,
    noise: Var,
    beta: f64,
) -> Result<ElboTerms> {
    let batch = tape.shape(x).0 as f64;
    let latent = tape.shape(noise).1;
    let head = Mlp::forward(tape, encoder, x)?;
    let mu = tape.slice_cols(head, 0, latent)?;
    let raw_logvar = tape.slice_cols(head, latent, latent)?;
    let logvar = tape.clamp(raw_logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP);
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let spread = tape.mul(std, noise)?;
    let z = tape.add(mu, spread)?;
    let recon_x = Mlp::forward(tape, decoder, z)?;
    let diff = tape.sub(recon_x, x)?;
    let sq = tape.mul(diff, diff)?;
    let reconstruction = tape.mean(sq);

    // KL = -1/2 Σ (1 + logvar - mu² - exp(logvar))
    let mu_sq = tape.mul(mu, mu)?;
    let var = tape.exp(logvar);
    let a = tape.sub(logvar, mu_sq)?;
    let b = tape.sub(a, var)?;
    let total = tape.sum(b);
    let count = tape.shape(mu).0 * latent;
    let ones = tape.constant(1, 1, vec![count as f64])?;
    let inner = tape.add(total, ones)?;
    let kl = tape.scale(inner, -0.5 / batch);

    let weighted = tape.scale(kl, beta);
    let loss = tape.add(reconstruction, weighted)?;
    Ok(ElboTerms {
        loss,
        reconstruction,
        kl,
    })
}

/// Trains one class's VAE with Adam on shuffled mini-batches.
pub fn train_vae(features: &Features, config: &VaeConfig, seed: u64) -> Result<(VaeModel, VaeTrainLog)> {
    let n = features.len();
    if n == 0 {
        return Err(Error::InsufficientData("no samples to train a VAE on".into()));
    }
    if config.batch_size == 0 || config.latent_dim == 0 || config.hidden_dim == 0 {
        return Err(Error::Domain("VAE sizes must be positive".into()));
    }
    let d = features.dim();
    let mut rng = seeded(seed, stream::GENERATOR_FIT);
    let mut model = VaeModel::new(d, config, &mut rng);
    model.set_trainable(true);
    let mut adam = Adam::new(AdamConfig::with_lr(config.learning_rate));
    let mut log = VaeTrainLog::default();
    let mut order: Vec<usize> = (0..n).collect();
    let latent = config.latent_dim;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut rec_sum, mut kl_sum) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let batch = features.select(chunk);
            let mut tape = Tape::new();
            let x = tape.constant(b, d, batch.as_slice().to_vec())?;
            let noise = tape.constant(b, latent, normal_vec(&mut rng, b * latent, 1.0))?;
            let enc = model.encoder.bind(&mut tape);
            let dec = model.decoder.net.bind(&mut tape);
            let terms = elbo(&mut tape, &enc, &dec, x, noise, config.beta)?;
            let loss = tape.scalar(terms.loss);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("VAE loss became {loss}")));
            }
            let grads = tape.backward(terms.loss)?;
            model.encoder.absorb(&grads, &enc)?;
            model.decoder.net.absorb(&grads, &dec)?;
            let mut params = model.encoder.params_mut();
            params.extend(model.decoder.net.params_mut());
            adam.step(&mut params)?;

            loss_sum += loss * b as f64;
            rec_sum += tape.scalar(terms.reconstruction) * b as f64;
            kl_sum += tape.scalar(terms.kl) * b as f64;
        }
        log.epoch_loss.push(loss_sum / n as f64);
        log.epoch_reconstruction.push(rec_sum / n as f64);
        log.epoch_kl.push(kl_sum / n as f64);
    }
    model.set_trainable(false);
    Ok((model, log))
}

impl VaeDecoder {
    pub fn new(net: Mlp) -> Self {
        VaeDecoder { net }
    }

    pub fn latent_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn decode(&self, z: &[f64], rows: usize) -> Vec<f64> {
        self.net.infer(z, rows)
    }

    pub fn sample_into(&self, rng: &mut Rng, n: usize, out: &mut Vec<f64>) {
        let z = normal_vec(rng, n * self.latent_dim(), 1.0);
        out.extend(self.decode(&z, n));
    }

    /// Decodes `n` draws from the standard normal prior.
    pub fn sample(&self, n: usize, seed: u64) -> Features {
        let mut rng = seeded(seed, stream::GENERATOR_SAMPLE);
        let mut out = Vec::with_capacity(n * self.dim());
        self.sample_into(&mut rng, n, &mut out);
        Features::new(self.dim(), out).expect("rows of decoder dimension")
    }

    pub fn to_blocks(&self) -> Vec<LayerBlock> {
        self.net.layers.iter().map(Linear::to_block).collect()
    }

    pub fn from_blocks(blocks: &[LayerBlock]) -> Result<Self> {
        if blocks.len() != 3 {
            return Err(Error::Shape(format!("decoder needs 3 layers, got {}", blocks.len())));
        }
        let layers = blocks.iter().map(Linear::from_block).collect::<Result<Vec<_>>>()?;
        Ok(VaeDecoder { net: Mlp::new(layers)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_many, Tensor};

    fn tiny() -> VaeConfig {
        VaeConfig {
            hidden_dim: 6,
            latent_dim: 3,
            learning_rate: 1e-3,
            epochs: 1,
            batch_size: 4,
            beta: 1.0,
        }
    }

    #[test]
    fn kl_vanishes_at_the_prior() {
        let mut tape = Tape::new();
        // zero encoder => mu = 0, logvar = 0
        let enc: Vec<BoundLinear> = [(2, 4), (4, 4), (4, 6)]
            .iter()
            .map(|&(i, o)| Linear::zeros(i, o).bind(&mut tape))
            .collect();
        let dec: Vec<BoundLinear> = [(3, 4), (4, 4), (4, 2)]
            .iter()
            .map(|&(i, o)| Linear::zeros(i, o).bind(&mut tape))
            .collect();
        let x = tape.constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let noise = tape.constant(2, 3, vec![0.5; 6]).unwrap();
        let t = elbo(&mut tape, &enc, &dec, x, noise, 1.0).unwrap();
        assert_eq!(tape.scalar(t.kl), 0.0);
        assert!((tape.scalar(t.reconstruction) - 7.5).abs() < 1e-12);
    }

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        let cfg = tiny();
        let mut rng = seeded(5, 0);
        let model = VaeModel::new(8, &cfg, &mut rng);
        let x = normal_vec(&mut rng, 4 * 8, 1.0);
        let noise = normal_vec(&mut rng, 4 * cfg.latent_dim, 1.0);
        let params: Vec<Tensor> = model
            .encoder
            .params()
            .chain(model.decoder.net.params())
            .cloned()
            .collect();
        let report = grad_check_many(
            |tape, vars| {
                let bound: Vec<BoundLinear> = vars
                    .chunks(2)
                    .map(|p| BoundLinear { weight: p[0], bias: p[1] })
                    .collect();
                let xv = tape.constant(4, 8, x.clone())?;
                let nv = tape.constant(4, cfg.latent_dim, noise.clone())?;
                Ok(elbo(tape, &bound[..3], &bound[3..], xv, nv, 1.0)?.loss)
            },
            &params,
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn zero_decoder_samples_zero_vectors() {
        let dec = VaeDecoder::new(
            Mlp::new(vec![Linear::zeros(3, 5), Linear::zeros(5, 5), Linear::zeros(5, 4)]).unwrap(),
        );
        let s = dec.sample(10, 1);
        assert!(s.as_slice().iter().all(|v| *v == 0.0));
        assert_eq!(s.dim(), 4);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(
            train_vae(&Features::empty(4), &tiny(), 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn training_lowers_the_loss_and_drops_the_encoder() {
        let mut rng = seeded(1992, 0);
        let center: Vec<f64> = normal_vec(&mut rng, 8, 1.0);
        let rows: Vec<Vec<f64>> = (0..64)
            .map(|_| center.iter().zip(normal_vec(&mut rng, 8, 0.1)).map(|(c, e)| c + e).collect())
            .collect();
        let f = Features::from_rows(&rows).unwrap();
        let cfg = VaeConfig {
            epochs: 60,
            batch_size: 16,
            hidden_dim: 32,
            latent_dim: 4,
            ..tiny()
        };
        let (model, log) = train_vae(&f, &cfg, 1992).unwrap();
        assert_eq!(log.epoch_loss.len(), 60);
        assert!(log.epoch_loss[59] < log.epoch_loss[0]);
        let dec = model.into_decoder();
        assert_eq!(dec.dim(), 8);
        assert!(dec.net().params().all(|p| !p.requires_grad()));
        let back = VaeDecoder::from_blocks(&dec.to_blocks()).unwrap();
        assert_eq!(back, dec);
    }
}
