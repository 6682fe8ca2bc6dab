//! Gaussian mixtures fitted by expectation-maximization.
//!
//! The covariance update is `(S_k + λI) / N_k` with `λ = ridge · N`, which is
//! the exact maximizer of the expected complete-data log-likelihood plus a
//! fixed `-λ/2 · tr(Σ_k⁻¹)` penalty per component. EM on that penalized
//! objective is monotone, and the objective is what the fit reports per
//! iteration. With one component the update reduces to the sample covariance
//! plus `ridge · I`, i.e. exactly [`fit_gaussian`](super::fit_gaussian).

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::gaussian::{GaussianModel, COVARIANCE_RIDGE};
use crate::error::{Error, Result};
use crate::features::Features;
use crate::formats::store::LayerBlock;
use crate::rng::{seeded, stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MogConfig {
    pub components: usize,
    pub max_iters: usize,
    /// Stop once the mean penalized log-likelihood improves by less than this.
    pub tol: f64,
    pub ridge: f64,
}

impl Default for MogConfig {
    fn default() -> Self {
        MogConfig {
            components: 5,
            max_iters: 200,
            tol: 1e-6,
            ridge: COVARIANCE_RIDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MogModel {
    weights: Vec<f64>,
    components: Vec<GaussianModel>,
}

/// A fitted mixture plus its optimization trace.
#[derive(Debug, Clone)]
pub struct MogFit {
    pub model: MogModel,
    /// Mean penalized log-likelihood, one entry per E-step.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

impl MogModel {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianModel>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::Shape(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::Shape("mixture components of unequal dimension".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Domain("mixture weights sum to zero".into()));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(MogModel { weights, components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianModel] {
        &self.components
    }

    pub fn sample_into(&self, rng: &mut Rng, n: usize, out: &mut Vec<f64>) {
        for _ in 0..n {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = self.weights.len() - 1;
            for (k, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            // skip zero-weight tails that rounding could otherwise land on
            while self.weights[pick] == 0.0 && pick > 0 {
                pick -= 1;
            }
            self.components[pick].sample_into(rng, 1, out);
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Features {
        let mut rng = seeded(seed, stream::GENERATOR_SAMPLE);
        let mut out = Vec::with_capacity(n * self.dim());
        self.sample_into(&mut rng, n, &mut out);
        Features::new(self.dim(), out).expect("rows of model dimension")
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_density(x))
            .collect();
        log_sum_exp(&terms)
    }

    /// A `1 x K` weight layer followed by one affine layer per component.
    pub fn to_blocks(&self) -> Vec<LayerBlock> {
        let k = self.weights.len();
        let mut blocks = vec![LayerBlock {
            rows: 1,
            cols: k,
            weights: self.weights.clone(),
            biases: vec![0.0; k],
        }];
        blocks.extend(self.components.iter().map(GaussianModel::to_block));
        blocks
    }

    pub fn from_blocks(blocks: &[LayerBlock]) -> Result<Self> {
        let Some((head, rest)) = blocks.split_first() else {
            return Err(Error::Shape("mixture needs a weight layer".into()));
        };
        if head.rows != 1 || head.cols != rest.len() {
            return Err(Error::Shape(format!(
                "weight layer {}x{} for {} components",
                head.rows,
                head.cols,
                rest.len()
            )));
        }
        let comps = rest.iter().map(GaussianModel::from_block).collect::<Result<Vec<_>>>()?;
        MogModel::new(head.weights.clone(), comps)
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
fn kmeans_pp(features: &Features, k: usize, rng: &mut Rng) -> Vec<usize> {
    let n = features.len();
    let mut centers = vec![rng.gen_range(0..n)];
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut nearest: Vec<f64> = features.rows().map(|r| sq(r, features.row(centers[0]))).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(next);
        for (i, row) in features.rows().enumerate() {
            nearest[i] = nearest[i].min(sq(row, features.row(next)));
        }
    }
    centers
}

struct EmState<'a> {
    x: &'a Features,
    penalty: f64,
    weights: Vec<f64>,
    comps: Vec<GaussianModel>,
}

impl EmState<'_> {
    /// E-step: responsibilities (row-major n x k) and the mean penalized log-likelihood.
    fn expect(&self) -> (Vec<f64>, f64) {
        let k = self.weights.len();
        let n = self.x.len();
        let log_w: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        let mut resp = vec![0.0; n * k];
        let mut total = 0.0;
        let mut terms = vec![0.0; k];
        for (i, row) in self.x.rows().enumerate() {
            for c in 0..k {
                terms[c] = log_w[c] + self.comps[c].log_density(row);
            }
            let lse = log_sum_exp(&terms);
            total += lse;
            for c in 0..k {
                resp[i * k + c] = (terms[c] - lse).exp();
            }
        }
        let trace_penalty: f64 = self
            .comps
            .iter()
            .map(|g| {
                let inv = g.cholesky().clone().try_inverse().expect("triangular factor is invertible");
                // tr(Σ⁻¹) = ||L⁻¹||_F²
                inv.norm_squared()
            })
            .sum();
        (resp, (total - 0.5 * self.penalty * trace_penalty) / n as f64)
    }

    /// M-step from responsibilities. Components whose soft count vanishes keep
    /// their previous parameters with zero weight.
    fn maximize(&mut self, resp: &[f64]) -> Result<()> {
        let k = self.weights.len();
        let n = self.x.len();
        let d = self.x.dim();
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            self.weights[c] = nk / n as f64;
            if nk < 1e-12 {
                continue;
            }
            let mut mean = DVector::<f64>::zeros(d);
            for (i, row) in self.x.rows().enumerate() {
                let r = resp[i * k + c];
                if r != 0.0 {
                    mean.axpy(r, &DVector::from_column_slice(row), 1.0);
                }
            }
            mean /= nk;
            let mut scatter = DMatrix::<f64>::zeros(d, d);
            for (i, row) in self.x.rows().enumerate() {
                let r = resp[i * k + c];
                if r != 0.0 {
                    let diff = DVector::from_column_slice(row) - &mean;
                    scatter.syger(r, &diff, &diff, 1.0);
                }
            }
            scatter.fill_upper_triangle_with_lower_triangle();
            for j in 0..d {
                scatter[(j, j)] += self.penalty;
            }
            scatter /= nk;
            self.comps[c] = GaussianModel::from_mean_covariance(mean, scatter)?;
        }
        Ok(())
    }
}

pub fn fit_mog(features: &Features, config: &MogConfig, seed: u64) -> Result<MogFit> {
    let n = features.len();
    let k = config.components;
    if k == 0 {
        return Err(Error::Domain("a mixture needs at least one component".into()));
    }
    if n < k {
        return Err(Error::InsufficientData(format!(
            "{n} samples for {k} mixture components"
        )));
    }
    let d = features.dim();
    let mut rng = seeded(seed, stream::GENERATOR_FIT);
    let centers = kmeans_pp(features, k, &mut rng);

    // hard assignment to the nearest center seeds the first M-step
    let mut resp = vec![0.0; n * k];
    for (i, row) in features.rows().enumerate() {
        let best = (0..k)
            .min_by(|&a, &b| {
                let da: f64 = row.iter().zip(features.row(centers[a])).map(|(x, y)| (x - y).powi(2)).sum();
                let db: f64 = row.iter().zip(features.row(centers[b])).map(|(x, y)| (x - y).powi(2)).sum();
                da.total_cmp(&db)
            })
            .expect("k >= 1");
        resp[i * k + best] = 1.0;
    }
    let placeholder = GaussianModel::from_mean_covariance(DVector::zeros(d), DMatrix::identity(d, d))?;
    let mut state = EmState {
        x: features,
        penalty: config.ridge * n as f64,
        weights: vec![1.0 / k as f64; k],
        comps: centers
            .iter()
            .map(|&c| {
                GaussianModel::from_mean_covariance(DVector::from_column_slice(features.row(c)), placeholder.covariance().clone())
            })
            .collect::<Result<_>>()?,
    };
    state.maximize(&resp)?;

    let mut log_likelihood = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iters.max(1) {
        let (r, ll) = state.expect();
        if !ll.is_finite() {
            return Err(Error::Numeric("mixture log-likelihood is not finite".into()));
        }
        if let Some(prev) = log_likelihood.last() {
            if ll - prev < config.tol {
                log_likelihood.push(ll);
                converged = true;
                break;
            }
        }
        log_likelihood.push(ll);
        state.maximize(&r)?;
    }
    if !converged {
        let (_, ll) = state.expect();
        log_likelihood.push(ll);
    }
    Ok(MogFit {
        model: MogModel::new(state.weights, state.comps)?,
        log_likelihood,
        converged,
    })
}
