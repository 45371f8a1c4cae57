//! The two jointly trained augmentation heads.
//!
//! Each head is a single linear layer with dropout; the heads share input
//! but never weights, so the two views start (and stay) distinct. They can
//! run on raw features before the encoder or on encoder outputs afterwards,
//! the wiring is the trainer's choice.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dense::{Mat, Scalar};
use crate::tape::{Tape, TapeError, TensorId};

/// Trainable parameters of both heads. The two weight matrices are
/// initialized independently; identical heads would make the invariance
/// term zero at the start and kill its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmenterParams<T> {
    pub w1: Mat<T>,
    pub b1: Mat<T>,
    pub w2: Mat<T>,
    pub b2: Mat<T>,
    pub dropout_p: f64,
}

impl<T: Scalar> AugmenterParams<T> {
    /// Glorot-style uniform initialization with zero biases.
    pub fn init(fan_in: usize, fan_out: usize, dropout_p: f64, rng: &mut ChaCha8Rng) -> Self {
        AugmenterParams {
            w1: glorot_uniform(fan_in, fan_out, rng),
            b1: Mat::zeros(1, fan_out),
            w2: glorot_uniform(fan_in, fan_out, rng),
            b2: Mat::zeros(1, fan_out),
            dropout_p,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w1.cols()
    }
}

pub fn glorot_uniform<T: Scalar>(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Mat<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Mat::from_vec(
        fan_in,
        fan_out,
        (0..fan_in * fan_out)
            .map(|_| T::from_f64((rng.random::<f64>() * 2.0 - 1.0) * limit))
            .collect(),
    )
}

/// Tape handles of registered augmenter parameters.
#[derive(Debug, Clone, Copy)]
pub struct AugmenterIds {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

/// Put the parameter tensors on the tape as leaves.
pub fn register<'g, T: Scalar>(
    tape: &mut Tape<'g, T>,
    params: &AugmenterParams<T>,
    trainable: bool,
) -> AugmenterIds {
    AugmenterIds {
        w1: tape.leaf(params.w1.clone(), trainable),
        b1: tape.leaf(params.b1.clone(), trainable),
        w2: tape.leaf(params.w2.clone(), trainable),
        b2: tape.leaf(params.b2.clone(), trainable),
    }
}

/// Produce the two views `dropout(input * W_i + b_i)`. Dropout is active
/// only in train mode and the two heads draw independent masks. In eval
/// mode this is a pure function of the input and parameters.
pub fn augment_pair<'g, T: Scalar>(
    tape: &mut Tape<'g, T>,
    input: TensorId,
    ids: &AugmenterIds,
    dropout_p: f64,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(TensorId, TensorId), TapeError> {
    let mut head = |w: TensorId, b: TensorId, tape: &mut Tape<'g, T>, rng: &mut ChaCha8Rng| {
        let lin = tape.matmul(input, w)?;
        let lin = tape.add(lin, b)?;
        Ok(if train_mode && dropout_p > 0.0 {
            tape.dropout(lin, dropout_p, rng)
        } else {
            lin
        })
    };
    let v1 = head(ids.w1, ids.b1, tape, rng)?;
    let v2 = head(ids.w2, ids.b2, tape, rng)?;
    Ok((v1, v2))
}
