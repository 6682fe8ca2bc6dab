//! Affine layers and LeakyReLU stacks shared by the VAE and the prompt MLP.

use crate::error::{Error, Result};
use crate::formats::store::LayerBlock;
use crate::rng::{normal_vec, Rng};
use crate::tensor::{gemm, Gradients, Tape, Tensor, Var, LEAKY_SLOPE};
use rand::Rng as _;

/// `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Tape handles for one [`Linear`] within a single step.
#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        tape.add_row(y, self.bias)
    }
}

impl Linear {
    /// Uniform in `±1/sqrt(in)` for weights and biases.
    pub fn init_uniform(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-bound..bound)).collect::<Vec<_>>();
        let w = draw(input * output);
        let b = draw(output);
        Linear::from_parts(input, output, w, b).expect("sizes match")
    }

    /// Normal(0, std) weights and zero biases.
    pub fn init_normal(input: usize, output: usize, std: f64, rng: &mut Rng) -> Self {
        let w = normal_vec(rng, input * output, std);
        Linear::from_parts(input, output, w, vec![0.0; output]).expect("sizes match")
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear::from_parts(input, output, vec![0.0; input * output], vec![0.0; output]).expect("sizes match")
    }

    pub fn from_parts(input: usize, output: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        Ok(Linear {
            weight: Tensor::matrix(input, output, weight)?,
            bias: Tensor::matrix(1, output, bias)?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.weight.set_requires_grad(trainable);
        self.bias.set_requires_grad(trainable);
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundLinear {
        BoundLinear {
            weight: tape.leaf(&self.weight),
            bias: tape.leaf(&self.bias),
        }
    }

    pub fn absorb(&mut self, grads: &Gradients, bound: &BoundLinear) -> Result<()> {
        grads.accumulate_into(bound.weight, &mut self.weight)?;
        grads.accumulate_into(bound.bias, &mut self.bias)
    }

    /// Off-tape forward for `rows` stacked inputs.
    pub fn apply(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let (k, n) = (self.in_dim(), self.out_dim());
        let mut out: Vec<f64> = (0..rows).flat_map(|_| self.bias.data().iter().copied()).collect();
        gemm(rows, k, n, x, false, self.weight.data(), false, 1.0, &mut out);
        out
    }

    pub fn to_block(&self) -> LayerBlock {
        LayerBlock {
            rows: self.in_dim(),
            cols: self.out_dim(),
            weights: self.weight.data().to_vec(),
            biases: self.bias.data().to_vec(),
        }
    }

    pub fn from_block(block: &LayerBlock) -> Result<Self> {
        Linear::from_parts(block.rows, block.cols, block.weights.clone(), block.biases.clone())
    }
}

/// Affine layers with LeakyReLU between consecutive layers (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("an MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer output {} feeds layer input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.layers.iter_mut().for_each(|l| l.set_trainable(trainable));
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<BoundLinear> {
        self.layers.iter().map(|l| l.bind(tape)).collect()
    }

    pub fn forward(tape: &mut Tape, bound: &[BoundLinear], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in bound.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i + 1 < bound.len() {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    pub fn absorb(&mut self, grads: &Gradients, bound: &[BoundLinear]) -> Result<()> {
        for (layer, b) in self.layers.iter_mut().zip(bound) {
            layer.absorb(grads, b)?;
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn infer(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h, rows);
            if i + 1 < self.layers.len() {
                h.iter_mut().for_each(|v| {
                    if *v <= 0.0 {
                        *v *= LEAKY_SLOPE;
                    }
                });
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn off_tape_inference_matches_tape_forward() {
        let mut rng = seeded(3, 0);
        let mlp = Mlp::new(vec![
            Linear::init_uniform(4, 6, &mut rng),
            Linear::init_uniform(6, 3, &mut rng),
        ])
        .unwrap();
        let x = normal_vec(&mut rng, 2 * 4, 1.0);
        let mut tape = Tape::new();
        let xv = tape.constant(2, 4, x.clone()).unwrap();
        let bound = mlp.bind(&mut tape);
        let y = Mlp::forward(&mut tape, &bound, xv).unwrap();
        for (a, b) in tape.value(y).iter().zip(mlp.infer(&x, 2)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        assert!(Mlp::new(vec![Linear::zeros(2, 3), Linear::zeros(4, 1)]).is_err());
    }
}
