use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Features;
use crate::formats::store::LayerBlock;
use crate::rng::{seeded, standard_normal, stream, Rng};

/// Ridge added to every fitted covariance so the Cholesky factor exists
/// even for degenerate classes.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianConfig {
    /// Keep only the diagonal of the sample covariance.
    pub diagonal: bool,
    pub ridge: f64,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        GaussianConfig {
            diagonal: false,
            ridge: COVARIANCE_RIDGE,
        }
    }
}

/// Multivariate normal with a cached lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    cholesky: DMatrix<f64>,
}

impl GaussianModel {
    pub fn from_mean_covariance(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(Error::Shape(format!(
                "covariance {:?} for mean of dimension {d}",
                covariance.shape()
            )));
        }
        let covariance = (&covariance + covariance.transpose()) * 0.5;
        let cholesky = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?
            .l();
        Ok(GaussianModel {
            mean,
            covariance,
            cholesky,
        })
    }

    /// Rebuilds the model from a mean and a lower-triangular factor.
    pub fn from_cholesky(mean: DVector<f64>, cholesky: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cholesky.shape() != (d, d) {
            return Err(Error::Shape(format!("factor {:?} for dimension {d}", cholesky.shape())));
        }
        let cholesky = cholesky.lower_triangle();
        let covariance = &cholesky * cholesky.transpose();
        Ok(GaussianModel {
            mean,
            covariance,
            cholesky,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.cholesky
    }

    /// Appends `n` draws `mean + L z` to `out`.
    pub fn sample_into(&self, rng: &mut Rng, n: usize, out: &mut Vec<f64>) {
        let d = self.dim();
        let mut z = DVector::zeros(d);
        for _ in 0..n {
            z.iter_mut().for_each(|v| *v = standard_normal(rng));
            let x = &self.mean + &self.cholesky * &z;
            out.extend(x.iter());
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Features {
        let mut rng = seeded(seed, stream::GENERATOR_SAMPLE);
        let mut out = Vec::with_capacity(n * self.dim());
        self.sample_into(&mut rng, n, &mut out);
        Features::new(self.dim(), out).expect("rows of model dimension")
    }

    /// Log density of `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let diff = DVector::from_column_slice(x) - &self.mean;
        let y = self
            .cholesky
            .solve_lower_triangular(&diff)
            .expect("factor has a positive diagonal");
        let log_det: f64 = self.cholesky.diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + y.norm_squared())
    }

    /// One affine layer `z -> z Lᵀ + mean`.
    pub fn to_block(&self) -> LayerBlock {
        let d = self.dim();
        let lt = self.cholesky.transpose();
        let mut weights = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                weights.push(lt[(i, j)]);
            }
        }
        LayerBlock {
            rows: d,
            cols: d,
            weights,
            biases: self.mean.iter().copied().collect(),
        }
    }

    pub fn from_block(block: &LayerBlock) -> Result<Self> {
        if block.rows != block.cols {
            return Err(Error::Shape(format!(
                "gaussian layer must be square, got {}x{}",
                block.rows, block.cols
            )));
        }
        let d = block.rows;
        let lt = DMatrix::from_row_slice(d, d, &block.weights);
        GaussianModel::from_cholesky(DVector::from_column_slice(&block.biases), lt.transpose())
    }
}

/// Maximum-likelihood Gaussian: sample mean and `1/N` covariance plus `ridge * I`.
pub fn fit_gaussian(features: &Features, config: &GaussianConfig) -> Result<GaussianModel> {
    let n = features.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "a gaussian fit needs at least 2 samples, got {n}"
        )));
    }
    let d = features.dim();
    let mean = DVector::from_vec(features.mean());
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in features.rows() {
        let diff = DVector::from_column_slice(row) - &mean;
        cov.syger(1.0, &diff, &diff, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    cov /= n as f64;
    if config.diagonal {
        cov = DMatrix::from_diagonal(&cov.diagonal());
    }
    for i in 0..d {
        cov[(i, i)] += config.ridge;
    }
    GaussianModel::from_mean_covariance(mean, cov)
}
