//! Permutation-invariant auction-context encoder.
//!
//! Every candidate's feature vector is lifted through two shared dense+ELU
//! layers; each ad `i` then receives an embedding of its *competition*: the
//! pooled hidden states of all other ads, pushed through one more dense+ELU
//! layer. Bids never enter this module, so perturbing any bid cannot move
//! any embedding.
//!
//! Mean pooling uses an order-canonical sum (addends sorted by value before
//! accumulation), so reordering the candidate list reproduces every
//! embedding bit for bit, not just approximately.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DiffError, Graph, NodeId, Tensor};
use crate::model::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub embedding: usize,
}

impl EncoderDims {
    /// Default widths: 128 and 32 hidden units, 16-dimensional embedding.
    pub fn with_input(input: usize) -> Self {
        EncoderDims { input, hidden1: 128, hidden2: 32, embedding: 16 }
    }
}

/// Pooling operator for the leave-one-out aggregation. Mean is the default;
/// max is available behind configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetEncoderParams {
    pub dims: EncoderDims,
    pub pool: Pooling,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

impl SetEncoderParams {
    pub fn init(dims: EncoderDims, pool: Pooling, rng: &mut impl Rng) -> Self {
        SetEncoderParams {
            dims,
            pool,
            w1: glorot(dims.hidden1, dims.input, rng),
            b1: Tensor::zeros(dims.hidden1, 1),
            w2: glorot(dims.hidden2, dims.hidden1, rng),
            b2: Tensor::zeros(dims.hidden2, 1),
            w3: glorot(dims.embedding, dims.hidden2, rng),
            b3: Tensor::zeros(dims.embedding, 1),
        }
    }

    pub fn zeros(dims: EncoderDims, pool: Pooling) -> Self {
        SetEncoderParams {
            dims,
            pool,
            w1: Tensor::zeros(dims.hidden1, dims.input),
            b1: Tensor::zeros(dims.hidden1, 1),
            w2: Tensor::zeros(dims.hidden2, dims.hidden1),
            b2: Tensor::zeros(dims.hidden2, 1),
            w3: Tensor::zeros(dims.embedding, dims.hidden2),
            b3: Tensor::zeros(dims.embedding, 1),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.dims.embedding
    }

    pub fn input_dim(&self) -> usize {
        self.dims.input
    }

    fn dense_elu(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(w.rows());
        for r in 0..w.rows() {
            let row = w.row_slice(r);
            let z: f64 = row.iter().zip(x).map(|(&a, &b)| a * b).sum::<f64>() + b.get(r, 0);
            out.push(elu(z));
        }
        out
    }

    /// Shared per-ad lift: two dense+ELU layers.
    pub fn encode_hidden(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        if features.len() != self.dims.input {
            return Err(ModelError::FeatureDim { expected: self.dims.input, got: features.len() });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite { what: "encoder features" });
        }
        let h1 = Self::dense_elu(&self.w1, &self.b1, features);
        Ok(Self::dense_elu(&self.w2, &self.b2, &h1))
    }

    /// Pool of everyone except `index`. For a single-candidate auction the
    /// pool is empty and defined as the zero vector.
    fn pooled_except(&self, hiddens: &[Vec<f64>], index: usize) -> Vec<f64> {
        let n = hiddens.len();
        let width = self.dims.hidden2;
        if n == 1 {
            return vec![0.0; width];
        }
        match self.pool {
            Pooling::Mean => {
                let totals = canonical_column_sums(hiddens, width);
                (0..width)
                    .map(|c| (totals[c] - hiddens[index][c]) / (n - 1) as f64)
                    .collect()
            }
            Pooling::Max => (0..width)
                .map(|c| {
                    hiddens
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != index)
                        .map(|(_, h)| h[c])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect(),
        }
    }

    /// Leave-one-out context embedding for ad `index`.
    pub fn encode_context(&self, hiddens: &[Vec<f64>], index: usize) -> Result<Vec<f64>, ModelError> {
        if index >= hiddens.len() {
            return Err(ModelError::IndexOutOfRange { index, n: hiddens.len() });
        }
        for h in hiddens {
            if h.len() != self.dims.hidden2 {
                return Err(ModelError::FeatureDim { expected: self.dims.hidden2, got: h.len() });
            }
        }
        let pooled = self.pooled_except(hiddens, index);
        Ok(Self::dense_elu(&self.w3, &self.b3, &pooled))
    }

    /// Context embeddings for every ad in one pass.
    pub fn encode_auction(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        let hiddens: Vec<Vec<f64>> =
            features.iter().map(|x| self.encode_hidden(x)).collect::<Result<_, _>>()?;
        (0..hiddens.len()).map(|i| self.encode_context(&hiddens, i)).collect()
    }

    /// Parameter tensors in flattening order (w1, b1, w2, b2, w3, b3).
    pub fn param_tensors(&self) -> [&Tensor; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn param_tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    pub fn param_nodes(&self, g: &Graph) -> EncoderNodes {
        EncoderNodes {
            w1: g.leaf(self.w1.clone()),
            b1: g.leaf(self.b1.clone()),
            w2: g.leaf(self.w2.clone()),
            b2: g.leaf(self.b2.clone()),
            w3: g.leaf(self.w3.clone()),
            b3: g.leaf(self.b3.clone()),
        }
    }
}

/// Sum each column with addends in value order, so the result does not
/// depend on the candidate ordering.
fn canonical_column_sums(hiddens: &[Vec<f64>], width: usize) -> Vec<f64> {
    let mut totals = vec![0.0; width];
    let mut scratch: Vec<f64> = Vec::with_capacity(hiddens.len());
    for (c, total) in totals.iter_mut().enumerate() {
        scratch.clear();
        scratch.extend(hiddens.iter().map(|h| h[c]));
        scratch.sort_by(f64::total_cmp);
        *total = scratch.iter().sum();
    }
    totals
}

/// Leaf handles to the encoder parameters on a graph.
#[derive(Clone, Copy)]
pub struct EncoderNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub w3: NodeId,
    pub b3: NodeId,
}

impl EncoderNodes {
    pub fn ids(&self) -> [NodeId; 6] {
        [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]
    }
}

/// Differentiable version of [`SetEncoderParams::encode_auction`].
pub fn encode_auction_graph(
    g: &Graph,
    nodes: &EncoderNodes,
    pool: Pooling,
    features: &[Vec<f64>],
) -> Result<Vec<NodeId>, DiffError> {
    let n = features.len();
    let mut hiddens = Vec::with_capacity(n);
    for x in features {
        let x = g.constant(Tensor::column(x));
        let h1 = g.elu(g.add(g.matmul(nodes.w1, x)?, nodes.b1)?)?;
        let h2 = g.elu(g.add(g.matmul(nodes.w2, h1)?, nodes.b2)?)?;
        hiddens.push(h2);
    }
    let width = g.shape(hiddens[0]).0;

    let mut contexts = Vec::with_capacity(n);
    if n == 1 {
        let pooled = g.constant(Tensor::zeros(width, 1));
        contexts.push(g.elu(g.add(g.matmul(nodes.w3, pooled)?, nodes.b3)?)?);
        return Ok(contexts);
    }

    match pool {
        Pooling::Mean => {
            let stacked = g.stack_columns(&hiddens)?;
            let ones = g.constant(Tensor::from_vec(n, 1, vec![1.0; n]));
            let total = g.matmul(stacked, ones)?;
            for &h in &hiddens {
                let pooled = g.scale(g.sub(total, h)?, 1.0 / (n - 1) as f64)?;
                contexts.push(g.elu(g.add(g.matmul(nodes.w3, pooled)?, nodes.b3)?)?);
            }
        }
        Pooling::Max => {
            for i in 0..n {
                let others: Vec<NodeId> = hiddens
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, &h)| h)
                    .collect();
                let pooled = g.max_rows(g.stack_columns(&others)?)?;
                contexts.push(g.elu(g.add(g.matmul(nodes.w3, pooled)?, nodes.b3)?)?);
            }
        }
    }
    Ok(contexts)
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}
