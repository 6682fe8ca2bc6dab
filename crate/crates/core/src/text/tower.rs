use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::formats::store::{LayerBlock, StoreEntry, StoreFile, KIND_TOWER};
use crate::nn::{BoundLinear, Linear, Mlp};
use crate::rng::{normal_vec, seeded, stream};
use crate::tensor::{checksum_bits, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::ClassId;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TowerConfig {
    /// Rows of the token table; the vocabulary may not outgrow it.
    pub vocab_capacity: usize,
    pub d_tok: usize,
    pub d_txt: usize,
    pub blocks: usize,
    pub heads: usize,
    pub max_len: usize,
    pub ffn_mult: usize,
    pub init_std: f64,
}

impl Default for TowerConfig {
    fn default() -> Self {
        TowerConfig {
            vocab_capacity: 256,
            d_tok: 32,
            d_txt: 32,
            blocks: 2,
            heads: 2,
            max_len: 16,
            ffn_mult: 4,
            init_std: 0.02,
        }
    }
}

impl TowerConfig {
    fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.heads == 0 || !self.d_tok.is_multiple_of(self.heads) {
            return Err(Error::Spec(format!(
                "tower needs at least one block and d_tok ({}) divisible by heads ({})",
                self.d_tok, self.heads
            )));
        }
        if self.vocab_capacity < 4 || self.max_len < 2 || self.d_txt == 0 || self.ffn_mult == 0 {
            return Err(Error::Spec("tower dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    qkv: Linear,
    out: Linear,
    ffn: Mlp,
}

/// Fixed-weight causal transformer over token vectors, pooled at the final
/// (end-of-text) position and projected to the text embedding width.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTextTower {
    config: TowerConfig,
    token_table: Tensor,
    positions: Tensor,
    blocks: Vec<Block>,
    projection: Linear,
}

struct BoundBlock {
    qkv: BoundLinear,
    out: BoundLinear,
    ffn: Vec<BoundLinear>,
}

/// Tape handles for the tower weights within one step.
pub struct BoundTower {
    blocks: Vec<BoundBlock>,
    projection: BoundLinear,
}

fn f32_rounded(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

impl FrozenTextTower {
    /// Draws every weight from `normal(0, init_std)` (biases zero). Values
    /// are rounded to `f32` so a stored snapshot reloads bit-identically.
    pub fn new(config: TowerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed, stream::TOWER);
        let std = config.init_std;
        let d = config.d_tok;
        let linear = |i: usize, o: usize, rng: &mut _| {
            Linear::from_parts(i, o, f32_rounded(normal_vec(rng, i * o, std)), vec![0.0; o]).expect("sizes match")
        };
        let token_table = Tensor::matrix(
            config.vocab_capacity,
            d,
            f32_rounded(normal_vec(&mut rng, config.vocab_capacity * d, std)),
        )?;
        let positions = Tensor::matrix(config.max_len, d, f32_rounded(normal_vec(&mut rng, config.max_len * d, std)))?;
        let mut blocks = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            let qkv = linear(d, 3 * d, &mut rng);
            let out = linear(d, d, &mut rng);
            let hidden = config.ffn_mult * d;
            let ffn = Mlp::new(vec![linear(d, hidden, &mut rng), linear(hidden, d, &mut rng)])?;
            blocks.push(Block { qkv, out, ffn });
        }
        let projection = linear(d, config.d_txt, &mut rng);
        Ok(FrozenTextTower {
            config,
            token_table,
            positions,
            blocks,
            projection,
        })
    }

    pub fn config(&self) -> &TowerConfig {
        &self.config
    }

    pub fn d_tok(&self) -> usize {
        self.config.d_tok
    }

    pub fn d_txt(&self) -> usize {
        self.config.d_txt
    }

    pub fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn weights(&self) -> impl Iterator<Item = &Tensor> {
        let blocks = self.blocks.iter().flat_map(|b| {
            [&b.qkv.weight, &b.qkv.bias, &b.out.weight, &b.out.bias]
                .into_iter()
                .chain(b.ffn.params())
        });
        [&self.token_table, &self.positions]
            .into_iter()
            .chain(blocks)
            .chain([&self.projection.weight, &self.projection.bias])
    }

    /// Checksum over every weight, in a fixed order.
    pub fn checksum(&self) -> u64 {
        self.weights()
            .fold(0xcbf2_9ce4_8422_2325, |h, t| checksum_bits(t.data().iter().copied(), h))
    }

    pub fn all_frozen(&self) -> bool {
        self.weights().all(|t| !t.requires_grad())
    }

    /// Embedding-table rows for `ids`, stacked.
    pub fn token_rows(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(ids.len() * self.d_tok());
        for &id in ids {
            if id as usize >= self.config.vocab_capacity {
                return Err(Error::Lookup(format!(
                    "token {id} exceeds the tower's table of {} rows",
                    self.config.vocab_capacity
                )));
            }
            out.extend_from_slice(self.token_table.row(id as usize));
        }
        Ok(out)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundTower {
        BoundTower {
            blocks: self
                .blocks
                .iter()
                .map(|b| BoundBlock {
                    qkv: b.qkv.bind(tape),
                    out: b.out.bind(tape),
                    ffn: b.ffn.bind(tape),
                })
                .collect(),
            projection: self.projection.bind(tape),
        }
    }

    /// Encodes an `L x d_tok` sequence whose last row is the end-of-text
    /// token, returning a `1 x d_txt` embedding.
    pub fn encode(&self, tape: &mut Tape, bound: &BoundTower, seq: Var) -> Result<Var> {
        let (len, width) = tape.shape(seq);
        if len > self.config.max_len {
            return Err(Error::Sequence {
                len,
                max: self.config.max_len,
            });
        }
        if width != self.d_tok() {
            return Err(Error::Shape(format!("token vectors of width {width}, tower expects {}", self.d_tok())));
        }
        let d = self.d_tok();
        let pos = tape.constant(len, d, self.positions.data()[..len * d].to_vec())?;
        let mut x = tape.add(seq, pos)?;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for block in &bound.blocks {
            let h = tape.layer_norm_rows(x, LAYER_NORM_EPS);
            let qkv = block.qkv.forward(tape, h)?;
            let mut outs = Vec::with_capacity(heads);
            for head in 0..heads {
                let q = tape.slice_cols(qkv, head * dh, dh)?;
                let k = tape.slice_cols(qkv, d + head * dh, dh)?;
                let v = tape.slice_cols(qkv, 2 * d + head * dh, dh)?;
                let kt = tape.transpose(k);
                let scores = tape.matmul(q, kt)?;
                let scores = tape.scale(scores, scale);
                let attn = tape.softmax_rows(scores, true);
                outs.push(tape.matmul(attn, v)?);
            }
            let joined = tape.concat_cols(&outs)?;
            let attended = block.out.forward(tape, joined)?;
            x = tape.add(x, attended)?;
            let h = tape.layer_norm_rows(x, LAYER_NORM_EPS);
            let f = ffn_forward(tape, &block.ffn, h)?;
            x = tape.add(x, f)?;
        }
        let x = tape.layer_norm_rows(x, LAYER_NORM_EPS);
        let pooled = tape.select_row(x, len - 1)?;
        bound.projection.forward(tape, pooled)
    }

    /// Off-gradient encoding of a token-id sequence.
    pub fn encode_ids(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let seq = tape.constant(ids.len(), self.d_tok(), self.token_rows(ids)?)?;
        let z = self.encode(&mut tape, &bound, seq)?;
        Ok(tape.value(z).to_vec())
    }

    /// Snapshot in the layer-store container: one entry whose first layer is
    /// a `1 x 1` header carrying the head count, then the token table,
    /// positions, four layers per block and the projection.
    pub fn to_store_file(&self) -> StoreFile {
        let table = |t: &Tensor| LayerBlock {
            rows: t.rows(),
            cols: t.cols(),
            weights: t.data().to_vec(),
            biases: vec![0.0; t.cols()],
        };
        let mut layers = vec![
            LayerBlock {
                rows: 1,
                cols: 1,
                weights: vec![self.config.heads as f64],
                biases: vec![0.0],
            },
            table(&self.token_table),
            table(&self.positions),
        ];
        for b in &self.blocks {
            layers.push(b.qkv.to_block());
            layers.push(b.out.to_block());
            layers.extend(b.ffn.layers.iter().map(Linear::to_block));
        }
        layers.push(self.projection.to_block());
        StoreFile {
            kind: KIND_TOWER,
            entries: vec![StoreEntry { class_id: 0, layers }],
        }
    }

    pub fn from_store_file(file: &StoreFile) -> Result<Self> {
        if file.kind != KIND_TOWER {
            return Err(Error::format(8, format!("store kind {} is not a tower snapshot", file.kind)));
        }
        let [entry] = file.entries.as_slice() else {
            return Err(Error::format(12, "a tower snapshot holds exactly one entry"));
        };
        let layers = &entry.layers;
        if layers.len() < 8 || (layers.len() - 4) % 4 != 0 {
            return Err(Error::format(0, format!("tower snapshot has {} layers", layers.len())));
        }
        let heads = layers[0].weights[0] as usize;
        let (table, positions) = (&layers[1], &layers[2]);
        let d = table.cols;
        let projection = Linear::from_block(layers.last().expect("checked length"))?;
        let mut blocks = Vec::new();
        for chunk in layers[3..layers.len() - 1].chunks(4) {
            blocks.push(Block {
                qkv: Linear::from_block(&chunk[0])?,
                out: Linear::from_block(&chunk[1])?,
                ffn: Mlp::new(vec![Linear::from_block(&chunk[2])?, Linear::from_block(&chunk[3])?])?,
            });
        }
        let config = TowerConfig {
            vocab_capacity: table.rows,
            d_tok: d,
            d_txt: projection.out_dim(),
            blocks: blocks.len(),
            heads,
            max_len: positions.rows,
            ffn_mult: blocks[0].ffn.layers[0].out_dim() / d.max(1),
            init_std: 0.0,
        };
        config.validate()?;
        let tower = FrozenTextTower {
            config,
            token_table: Tensor::matrix(table.rows, d, table.weights.clone())?,
            positions: Tensor::matrix(positions.rows, positions.cols, positions.weights.clone())?,
            blocks,
            projection,
        };
        let shapes_ok = positions.cols == d
            && tower.projection.in_dim() == d
            && tower.blocks.iter().all(|b| {
                b.qkv.in_dim() == d && b.qkv.out_dim() == 3 * d && b.out.in_dim() == d && b.out.out_dim() == d
                    && b.ffn.in_dim() == d && b.ffn.out_dim() == d
            });
        if !shapes_ok {
            return Err(Error::format(0, "tower snapshot layers have inconsistent widths"));
        }
        Ok(tower)
    }
}

fn ffn_forward(tape: &mut Tape, ffn: &[BoundLinear], x: Var) -> Result<Var> {
    let h = ffn[0].forward(tape, x)?;
    let h = tape.leaky_relu(h, LEAKY_SLOPE);
    ffn[1].forward(tape, h)
}

/// Embedding of `a photo of a <class>` through the frozen tower.
pub fn handcrafted_embedding(class_id: ClassId, tower: &FrozenTextTower, vocab: &Vocabulary) -> Result<Vec<f64>> {
    tower.encode_ids(&vocab.handcrafted_ids(class_id)?)
}
