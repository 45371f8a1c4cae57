//! Shared L-layer GCN encoder.
//!
//! Each layer propagates over the normalized adjacency, applies a linear
//! transform, then ReLU on hidden layers. A residual connection adds the
//! layer input whenever the widths match. The final layer stays linear
//! (no activation, no dropout) so the embedding keeps sign information for
//! the unit normalization in the loss. No batch or layer normalization
//! anywhere.
//!
//! The same code path serves full-batch adjacencies and sampled bipartite
//! blocks; in the sampled case the residual is routed through a sparse
//! row-selection matrix so it stays inside the fixed op vocabulary.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::augmenter::glorot_uniform;
use crate::dense::{Mat, Scalar};
use crate::graph::{NormalizedAdjacency, SampledBlock};
use crate::tape::{Tape, TapeError, TensorId};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("sampled block has {block_layers} layers but the encoder has {encoder_layers}")]
    DepthMismatch {
        block_layers: usize,
        encoder_layers: usize,
    },
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// GCN layer weights. `weights[l]` maps width `dims[l]` to `dims[l+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub weights: Vec<Mat<T>>,
    pub biases: Option<Vec<Mat<T>>>,
    pub dropout_p: f64,
    pub residual: bool,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn init(
        dims: &[usize],
        bias: bool,
        dropout_p: f64,
        residual: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(dims.len() >= 2, "encoder needs at least one layer");
        let weights = dims
            .windows(2)
            .map(|w| glorot_uniform(w[0], w[1], rng))
            .collect();
        let biases = bias.then(|| dims.windows(2).map(|w| Mat::zeros(1, w[1])).collect());
        EncoderParams {
            weights,
            biases,
            dropout_p,
            residual,
        }
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().cols()
    }
}

/// Tape handles of registered encoder parameters.
#[derive(Debug, Clone)]
pub struct EncoderIds {
    pub weights: Vec<TensorId>,
    pub biases: Option<Vec<TensorId>>,
}

pub fn register<'g, T: Scalar>(
    tape: &mut Tape<'g, T>,
    params: &EncoderParams<T>,
    trainable: bool,
) -> EncoderIds {
    EncoderIds {
        weights: params
            .weights
            .iter()
            .map(|w| tape.leaf(w.clone(), trainable))
            .collect(),
        biases: params.biases.as_ref().map(|bs| {
            bs.iter()
                .map(|b| tape.leaf(b.clone(), trainable))
                .collect()
        }),
    }
}

/// Propagation input: the full normalized adjacency or a sampled block.
#[derive(Clone, Copy)]
pub enum AdjacencyRef<'g, T> {
    Full(&'g NormalizedAdjacency<T>),
    Sampled(&'g SampledBlock<T>),
}

/// Run the encoder, recording on the tape. `h0` holds one row per input
/// node (all nodes for full batch, the first layer's source set for a
/// sampled block).
pub fn encode<'g, T: Scalar>(
    tape: &mut Tape<'g, T>,
    adj: AdjacencyRef<'g, T>,
    h0: TensorId,
    ids: &EncoderIds,
    params: &EncoderParams<T>,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId, EncodeError> {
    let depth = ids.weights.len();
    if let AdjacencyRef::Sampled(block) = adj {
        if block.depth() != depth {
            return Err(EncodeError::DepthMismatch {
                block_layers: block.depth(),
                encoder_layers: depth,
            });
        }
    }
    let mut h = h0;
    for l in 0..depth {
        let h_in = h;
        let propagated = match adj {
            AdjacencyRef::Full(norm) => tape.spmm_const(norm.csr(), h_in)?,
            AdjacencyRef::Sampled(block) => tape.spmm_const(&block.layers[l].adj, h_in)?,
        };
        let mut z = tape.matmul(propagated, ids.weights[l])?;
        if let Some(bias_ids) = &ids.biases {
            z = tape.add(z, bias_ids[l])?;
        }
        let last = l == depth - 1;
        if !last {
            z = tape.relu(z);
        }
        if params.residual {
            let in_width = tape.value(h_in).cols();
            let out_width = tape.value(z).cols();
            if in_width == out_width {
                let carried = match adj {
                    AdjacencyRef::Full(_) => h_in,
                    AdjacencyRef::Sampled(block) => {
                        tape.spmm_const(&block.layers[l].residual_select, h_in)?
                    }
                };
                z = tape.add(z, carried)?;
            }
        }
        if !last && train_mode && params.dropout_p > 0.0 {
            z = tape.dropout(z, params.dropout_p, rng);
        }
        h = z;
    }
    Ok(h)
}
