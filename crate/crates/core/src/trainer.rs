//! Joint training of the augmentation heads and the shared encoder.
//!
//! One step builds a fresh tape, runs the mode's forward wiring, applies
//! one Adam update to every parameter group, and reports the loss terms
//! plus tape instrumentation. `fit` drives the epoch loop in full-batch or
//! neighbor-sampled form; epoch selection is the caller's concern, served
//! by the per-epoch hook of [`fit_with`].

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::augmenter::{self, AugmenterIds, AugmenterParams};
use crate::dense::{Mat, Scalar};
use crate::encoder::{self, AdjacencyRef, EncodeError, EncoderIds, EncoderParams};
use crate::graph::{neighbor_sample, normalize_adjacency, shuffle, Graph, GraphError};
use crate::objective::{total_loss, unit_rows, LossConfig, LossNodes};
use crate::tape::{OpKind, Tape, TapeError, TensorId};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {term} term at epoch {epoch}")]
    NonFinite { epoch: usize, term: &'static str },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("model/config mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    /// Augment the input features, then encode both views.
    Pre,
    /// Encode once, then augment in the latent space.
    Post,
}

impl AugmentMode {
    pub fn name(self) -> &'static str {
        match self {
            AugmentMode::Pre => "pre",
            AugmentMode::Post => "post",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BatchMode {
    Full,
    Neighbor { fanouts: Vec<usize>, batch_size: usize },
}

/// Which augmentation output serves as the embedding in post mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostEmbedHead {
    Head1,
    Head2,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: AugmentMode,
    pub epochs: usize,
    /// Learning rate (mu).
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch: BatchMode,
    /// Augmentation width D: head output in pre mode, encoder output in
    /// post mode.
    pub aug_width: usize,
    /// Embedding width F_L.
    pub embed_width: usize,
    pub encoder_depth: usize,
    pub encoder_residual: bool,
    pub encoder_bias: bool,
    pub aug_dropout: f64,
    pub encoder_dropout: f64,
    pub loss: LossConfig,
    pub post_embed: PostEmbedHead,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: AugmentMode::Pre,
            epochs: 500,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch: BatchMode::Full,
            aug_width: 128,
            embed_width: 128,
            encoder_depth: 2,
            encoder_residual: true,
            encoder_bias: false,
            aug_dropout: 0.2,
            encoder_dropout: 0.2,
            loss: LossConfig::default(),
            post_embed: PostEmbedHead::Mean,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.aug_width == 0 || self.embed_width == 0 || self.encoder_depth == 0 {
            return Err(TrainError::Config(
                "widths and encoder depth must be >= 1".into(),
            ));
        }
        for (name, p) in [
            ("aug_dropout", self.aug_dropout),
            ("encoder_dropout", self.encoder_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(TrainError::Config(format!(
                    "{name} must lie in [0, 1), got {p}"
                )));
            }
        }
        self.loss.validate().map_err(TrainError::Config)?;
        if let BatchMode::Neighbor { fanouts, batch_size } = &self.batch {
            if fanouts.len() != self.encoder_depth {
                return Err(TrainError::Config(format!(
                    "fanout list has {} entries but the encoder has {} layers",
                    fanouts.len(),
                    self.encoder_depth
                )));
            }
            if *batch_size == 0 {
                return Err(TrainError::Config("batch size must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Encoder layer widths for a given feature dimension.
    pub fn encoder_dims(&self, feature_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.encoder_depth + 1);
        match self.mode {
            AugmentMode::Pre => {
                dims.push(self.aug_width);
                dims.extend(std::iter::repeat(self.embed_width).take(self.encoder_depth));
            }
            AugmentMode::Post => {
                dims.push(feature_dim);
                dims.extend(std::iter::repeat(self.embed_width).take(self.encoder_depth - 1));
                dims.push(self.aug_width);
            }
        }
        dims
    }
}

/// The trainable state: both augmentation heads plus the shared encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SurgeonModel<T> {
    pub mode: AugmentMode,
    pub augmenter: AugmenterParams<T>,
    pub encoder: EncoderParams<T>,
}

impl<T: Scalar> SurgeonModel<T> {
    pub fn init(cfg: &TrainConfig, feature_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let enc_dims = cfg.encoder_dims(feature_dim);
        let (aug_in, aug_out) = match cfg.mode {
            AugmentMode::Pre => (feature_dim, cfg.aug_width),
            AugmentMode::Post => (cfg.aug_width, cfg.embed_width),
        };
        let augmenter = AugmenterParams::init(aug_in, aug_out, cfg.aug_dropout, rng);
        let encoder = EncoderParams::init(
            &enc_dims,
            cfg.encoder_bias,
            cfg.encoder_dropout,
            cfg.encoder_residual,
            rng,
        );
        SurgeonModel {
            mode: cfg.mode,
            augmenter,
            encoder,
        }
    }

    /// Feature dimension this model consumes.
    pub fn input_dim(&self) -> usize {
        match self.mode {
            AugmentMode::Pre => self.augmenter.input_dim(),
            AugmentMode::Post => self.encoder.input_dim(),
        }
    }

    /// Width of the embedding produced by [`embed`].
    pub fn embedding_dim(&self) -> usize {
        match self.mode {
            AugmentMode::Pre => self.encoder.output_dim(),
            AugmentMode::Post => self.augmenter.output_dim(),
        }
    }

    /// Parameter tensors in declaration order (checkpoint and Adam order).
    pub fn param_list(&self) -> Vec<&Mat<T>> {
        let mut list = vec![
            &self.augmenter.w1,
            &self.augmenter.b1,
            &self.augmenter.w2,
            &self.augmenter.b2,
        ];
        list.extend(self.encoder.weights.iter());
        if let Some(biases) = &self.encoder.biases {
            list.extend(biases.iter());
        }
        list
    }

    fn param_list_mut(&mut self) -> Vec<&mut Mat<T>> {
        let mut list = vec![
            &mut self.augmenter.w1,
            &mut self.augmenter.b1,
            &mut self.augmenter.w2,
            &mut self.augmenter.b2,
        ];
        list.extend(self.encoder.weights.iter_mut());
        if let Some(biases) = &mut self.encoder.biases {
            list.extend(biases.iter_mut());
        }
        list
    }
}

/// Adam with bias correction; moment buffers mirror the parameter shapes.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Mat<T>>,
    v: Vec<Mat<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Mat<T>], grads: &[Mat<T>]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one_m_b1 = T::from_f64(1.0 - self.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.beta2);
        let bc1 = T::from_f64(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::from_f64(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = b1 * *mv + one_m_b1 * gv;
                *vv = b2 * *vv + one_m_b2 * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub invariance: f64,
    pub constraint1: f64,
    pub constraint2: f64,
    pub wall_ms: f64,
    pub peak_bytes: usize,
    pub constraint_peak_bytes: usize,
    pub encoder_spmm_ops: u64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// CSV rendering with the stable header
    /// `epoch,loss,invariance,constraint1,constraint2,ms,peak_bytes`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,invariance,constraint1,constraint2,ms,peak_bytes\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{:.3},{}\n",
                r.epoch, r.loss, r.invariance, r.constraint1, r.constraint2, r.wall_ms, r.peak_bytes
            ));
        }
        out
    }
}

/// Wire the forward graph of one step and assemble the loss. Shared by the
/// trainer, the embedding path, and the gradient-check harness so every
/// consumer exercises identical wiring.
#[allow(clippy::too_many_arguments)]
pub fn build_loss_graph<'g, T: Scalar>(
    tape: &mut Tape<'g, T>,
    adj: AdjacencyRef<'g, T>,
    x: TensorId,
    model: &SurgeonModel<T>,
    aug_ids: &AugmenterIds,
    enc_ids: &EncoderIds,
    loss_cfg: &LossConfig,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<LossNodes, TrainError> {
    let (z1, z2) = match model.mode {
        AugmentMode::Pre => {
            let (x1, x2) = augmenter::augment_pair(
                tape,
                x,
                aug_ids,
                model.augmenter.dropout_p,
                train_mode,
                rng,
            )?;
            // Shared encoder parameters, independent dropout masks per view.
            let z1 = encoder::encode(tape, adj, x1, enc_ids, &model.encoder, train_mode, rng)?;
            let z2 = encoder::encode(tape, adj, x2, enc_ids, &model.encoder, train_mode, rng)?;
            (z1, z2)
        }
        AugmentMode::Post => {
            let z = encoder::encode(tape, adj, x, enc_ids, &model.encoder, train_mode, rng)?;
            augmenter::augment_pair(tape, z, aug_ids, model.augmenter.dropout_p, train_mode, rng)?
        }
    };
    let u1 = unit_rows(tape, z1);
    let u2 = unit_rows(tape, z2);
    Ok(total_loss(tape, u1, u2, loss_cfg)?)
}

/// Loss terms and tape instrumentation from one optimization step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub loss: f64,
    pub invariance: f64,
    pub constraint1: f64,
    pub constraint2: f64,
    pub peak_bytes: usize,
    pub constraint_peak_bytes: usize,
    pub encoder_spmm_ops: u64,
}

/// One joint update of the augmenter and encoder parameters. Validation
/// errors surface before any parameter is mutated.
pub fn train_step<'g, T: Scalar>(
    adj: AdjacencyRef<'g, T>,
    x: &Mat<T>,
    model: &mut SurgeonModel<T>,
    adam: &mut Adam<T>,
    loss_cfg: &LossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome, TrainError> {
    let mut tape: Tape<'g, T> = Tape::new();
    let x_id = tape.leaf(x.clone(), false);
    let aug_ids = augmenter::register(&mut tape, &model.augmenter, true);
    let enc_ids = encoder::register(&mut tape, &model.encoder, true);
    let nodes = build_loss_graph(
        &mut tape, adj, x_id, model, &aug_ids, &enc_ids, loss_cfg, true, rng,
    )?;
    let outcome_terms = (
        tape.scalar(nodes.total).to_f64(),
        tape.scalar(nodes.invariance).to_f64(),
        tape.scalar(nodes.constraint1).to_f64(),
        tape.scalar(nodes.constraint2).to_f64(),
    );
    tape.backward(nodes.total)?;

    let mut leaf_ids = vec![aug_ids.w1, aug_ids.b1, aug_ids.w2, aug_ids.b2];
    leaf_ids.extend(enc_ids.weights.iter().copied());
    if let Some(bias_ids) = &enc_ids.biases {
        leaf_ids.extend(bias_ids.iter().copied());
    }
    let shapes: Vec<(usize, usize)> = model.param_list().iter().map(|p| p.shape()).collect();
    let grads: Vec<Mat<T>> = leaf_ids
        .iter()
        .zip(&shapes)
        .map(|(&id, &(r, c))| tape.take_grad(id).unwrap_or_else(|| Mat::zeros(r, c)))
        .collect();
    let stats = tape.stats().clone();
    drop(tape);

    let mut params = model.param_list_mut();
    adam.step(&mut params, &grads);

    Ok(StepOutcome {
        loss: outcome_terms.0,
        invariance: outcome_terms.1,
        constraint1: outcome_terms.2,
        constraint2: outcome_terms.3,
        peak_bytes: stats.peak_bytes,
        constraint_peak_bytes: stats.constraint_peak_bytes,
        encoder_spmm_ops: stats.op_count(OpKind::SpmmConst),
    })
}

/// [`train_step`] restricted to pre-augmentation wiring.
pub fn train_step_pre<'g, T: Scalar>(
    adj: AdjacencyRef<'g, T>,
    x: &Mat<T>,
    model: &mut SurgeonModel<T>,
    adam: &mut Adam<T>,
    loss_cfg: &LossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome, TrainError> {
    if model.mode != AugmentMode::Pre {
        return Err(TrainError::Mismatch(
            "train_step_pre called on a post-augmentation model".into(),
        ));
    }
    train_step(adj, x, model, adam, loss_cfg, rng)
}

/// [`train_step`] restricted to post-augmentation wiring.
pub fn train_step_post<'g, T: Scalar>(
    adj: AdjacencyRef<'g, T>,
    x: &Mat<T>,
    model: &mut SurgeonModel<T>,
    adam: &mut Adam<T>,
    loss_cfg: &LossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome, TrainError> {
    if model.mode != AugmentMode::Post {
        return Err(TrainError::Mismatch(
            "train_step_post called on a pre-augmentation model".into(),
        ));
    }
    train_step(adj, x, model, adam, loss_cfg, rng)
}

const STREAM_INIT: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_BATCH: u64 = 3;
const STREAM_SAMPLE: u64 = 4;

/// Derive an independent generator from the run seed. All randomness in a
/// run flows from that one seed.
pub fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Train for `cfg.epochs` epochs. No early stopping: the hook sees the
/// model after every epoch and the caller decides which state to keep.
pub fn fit_with<T: Scalar, F>(
    graph: &Graph,
    features: &Mat<T>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(SurgeonModel<T>, TrainHistory), TrainError>
where
    F: FnMut(usize, &SurgeonModel<T>, &EpochRecord) -> Result<(), TrainError>,
{
    cfg.validate()?;
    if graph.num_nodes() != features.rows() {
        return Err(TrainError::Config(format!(
            "graph has {} nodes but the feature matrix has {} rows",
            graph.num_nodes(),
            features.rows()
        )));
    }
    let norm = normalize_adjacency::<T>(graph);
    let mut init_rng = sub_rng(cfg.seed, STREAM_INIT);
    let mut model = SurgeonModel::init(cfg, features.cols(), &mut init_rng);
    let mut adam = Adam::from_config(cfg);
    let mut dropout_rng = sub_rng(cfg.seed, STREAM_DROPOUT);
    let mut batch_rng = sub_rng(cfg.seed, STREAM_BATCH);
    let mut sample_rng = sub_rng(cfg.seed, STREAM_SAMPLE);

    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let mut weighted = [0.0f64; 4];
        let mut weight_total = 0usize;
        let mut peak_bytes = 0usize;
        let mut constraint_peak = 0usize;
        let mut spmm_ops = 0u64;
        match &cfg.batch {
            BatchMode::Full => {
                let step = train_step(
                    AdjacencyRef::Full(&norm),
                    features,
                    &mut model,
                    &mut adam,
                    &cfg.loss,
                    &mut dropout_rng,
                )?;
                weighted = [step.loss, step.invariance, step.constraint1, step.constraint2];
                weight_total = 1;
                peak_bytes = step.peak_bytes;
                constraint_peak = step.constraint_peak_bytes;
                spmm_ops = step.encoder_spmm_ops;
            }
            BatchMode::Neighbor { fanouts, batch_size } => {
                let mut order: Vec<usize> = (0..graph.num_nodes()).collect();
                shuffle(&mut order, &mut batch_rng);
                let mut batch_losses = [0.0f64; 4];
                let mut seen = 0usize;
                for chunk in order.chunks(*batch_size) {
                    let block = neighbor_sample::<T>(graph, chunk, fanouts, &mut sample_rng)?;
                    let x0 = features.gather_rows(block.input_nodes());
                    let step = train_step(
                        AdjacencyRef::Sampled(&block),
                        &x0,
                        &mut model,
                        &mut adam,
                        &cfg.loss,
                        &mut dropout_rng,
                    )?;
                    let w = chunk.len();
                    batch_losses[0] += step.loss * w as f64;
                    batch_losses[1] += step.invariance * w as f64;
                    batch_losses[2] += step.constraint1 * w as f64;
                    batch_losses[3] += step.constraint2 * w as f64;
                    seen += w;
                    peak_bytes = peak_bytes.max(step.peak_bytes);
                    constraint_peak = constraint_peak.max(step.constraint_peak_bytes);
                    spmm_ops += step.encoder_spmm_ops;
                }
                for (acc, total) in weighted.iter_mut().zip(batch_losses) {
                    *acc = total / seen as f64;
                }
                weight_total = 1;
            }
        }
        debug_assert_eq!(weight_total, 1);
        for (value, term) in weighted
            .iter()
            .zip(["loss", "invariance", "constraint1", "constraint2"])
        {
            if !value.is_finite() {
                return Err(TrainError::NonFinite { epoch, term });
            }
        }
        let record = EpochRecord {
            epoch,
            loss: weighted[0],
            invariance: weighted[1],
            constraint1: weighted[2],
            constraint2: weighted[3],
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            peak_bytes,
            constraint_peak_bytes: constraint_peak,
            encoder_spmm_ops: spmm_ops,
        };
        on_epoch(epoch, &model, &record)?;
        history.records.push(record);
    }
    Ok((model, history))
}

pub fn fit<T: Scalar>(
    graph: &Graph,
    features: &Mat<T>,
    cfg: &TrainConfig,
) -> Result<(SurgeonModel<T>, TrainHistory), TrainError> {
    fit_with(graph, features, cfg, |_, _, _| Ok(()))
}

/// Epochs (0-based) after which a checkpoint is due: every tenth epoch plus
/// the final one.
pub fn checkpoint_epochs(total: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..total).filter(|e| (e + 1) % 10 == 0).collect();
    if total > 0 && out.last() != Some(&(total - 1)) {
        out.push(total - 1);
    }
    out
}

/// Compute embeddings in eval mode (no dropout). Pre mode returns the
/// encoder output on the raw features; post mode returns the augmentation
/// output selected by `head`. Embeddings are raw, not unit-normalized.
pub fn embed<T: Scalar>(
    graph: &Graph,
    features: &Mat<T>,
    model: &SurgeonModel<T>,
    head: PostEmbedHead,
) -> Result<Mat<T>, TrainError> {
    if graph.num_nodes() != features.rows() {
        return Err(TrainError::Config(format!(
            "graph has {} nodes but the feature matrix has {} rows",
            graph.num_nodes(),
            features.rows()
        )));
    }
    if features.cols() != model.input_dim() {
        return Err(TrainError::Mismatch(format!(
            "model expects {} input features, dataset has {}",
            model.input_dim(),
            features.cols()
        )));
    }
    let norm = normalize_adjacency::<T>(graph);
    let mut tape: Tape<'_, T> = Tape::new();
    let x = tape.leaf(features.clone(), false);
    let mut rng = sub_rng(0, 0); // eval mode draws nothing
    let out = match model.mode {
        AugmentMode::Pre => {
            let enc_ids = encoder::register(&mut tape, &model.encoder, false);
            encoder::encode(
                &mut tape,
                AdjacencyRef::Full(&norm),
                x,
                &enc_ids,
                &model.encoder,
                false,
                &mut rng,
            )?
        }
        AugmentMode::Post => {
            let enc_ids = encoder::register(&mut tape, &model.encoder, false);
            let z = encoder::encode(
                &mut tape,
                AdjacencyRef::Full(&norm),
                x,
                &enc_ids,
                &model.encoder,
                false,
                &mut rng,
            )?;
            let aug_ids = augmenter::register(&mut tape, &model.augmenter, false);
            let (v1, v2) = augmenter::augment_pair(&mut tape, z, &aug_ids, 0.0, false, &mut rng)?;
            match head {
                PostEmbedHead::Head1 => v1,
                PostEmbedHead::Head2 => v2,
                PostEmbedHead::Mean => tape.mean_pair(v1, v2)?,
            }
        }
    };
    Ok(tape.value(out).clone())
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"GSRG";
const CHECKPOINT_VERSION: u32 = 1;

const ROLE_AUG_W1: u8 = 0;
const ROLE_AUG_B1: u8 = 1;
const ROLE_AUG_W2: u8 = 2;
const ROLE_AUG_B2: u8 = 3;
const ROLE_ENC_W: u8 = 4;
const ROLE_ENC_B: u8 = 5;

/// Write a model checkpoint: magic `GSRG`, version, mode and residual
/// flags, a role-tagged shape table, then the tensors as little-endian
/// f32 in declaration order.
pub fn save_checkpoint<T: Scalar>(model: &SurgeonModel<T>, path: &Path) -> Result<(), TrainError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(match model.mode {
        AugmentMode::Pre => 0,
        AugmentMode::Post => 1,
    });
    buf.push(model.encoder.residual as u8);
    buf.extend_from_slice(&[0u8, 0u8]); // reserved

    let mut roles = vec![ROLE_AUG_W1, ROLE_AUG_B1, ROLE_AUG_W2, ROLE_AUG_B2];
    roles.extend(std::iter::repeat(ROLE_ENC_W).take(model.encoder.weights.len()));
    if let Some(biases) = &model.encoder.biases {
        roles.extend(std::iter::repeat(ROLE_ENC_B).take(biases.len()));
    }
    let tensors = model.param_list();
    assert_eq!(roles.len(), tensors.len());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (role, t) in roles.iter().zip(&tensors) {
        buf.push(*role);
        buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    }
    for t in &tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_f32().to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<SurgeonModel<T>, TrainError> {
    let mut file = std::fs::File::open(path)?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8], TrainError> {
        if *cursor + n > buf.len() {
            return Err(TrainError::BadCheckpoint(format!(
                "truncated checkpoint: wanted {} bytes at offset {}, file has {}",
                n,
                cursor,
                buf.len()
            )));
        }
        let s = &buf[*cursor..*cursor + n];
        *cursor += n;
        Ok(s)
    };
    if take(&mut cursor, 4)? != CHECKPOINT_MAGIC {
        return Err(TrainError::BadCheckpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::BadCheckpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mode = match take(&mut cursor, 1)?[0] {
        0 => AugmentMode::Pre,
        1 => AugmentMode::Post,
        other => {
            return Err(TrainError::BadCheckpoint(format!(
                "unknown mode flag {other}"
            )))
        }
    };
    let residual = take(&mut cursor, 1)?[0] != 0;
    let _reserved = take(&mut cursor, 2)?;
    let count = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let role = take(&mut cursor, 1)?[0];
        let rows = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
        entries.push((role, rows, cols));
    }
    let mut tensors = Vec::with_capacity(count);
    for &(_, rows, cols) in &entries {
        let bytes = take(&mut cursor, rows * cols * 4)?;
        let data: Vec<T> = bytes
            .chunks_exact(4)
            .map(|c| T::from_f32(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        tensors.push(Mat::from_vec(rows, cols, data));
    }
    if cursor != buf.len() {
        return Err(TrainError::BadCheckpoint(format!(
            "{} trailing bytes after tensor data",
            buf.len() - cursor
        )));
    }

    let mut aug: [Option<Mat<T>>; 4] = [None, None, None, None];
    let mut enc_w = Vec::new();
    let mut enc_b = Vec::new();
    for ((role, _, _), tensor) in entries.into_iter().zip(tensors) {
        match role {
            ROLE_AUG_W1 => aug[0] = Some(tensor),
            ROLE_AUG_B1 => aug[1] = Some(tensor),
            ROLE_AUG_W2 => aug[2] = Some(tensor),
            ROLE_AUG_B2 => aug[3] = Some(tensor),
            ROLE_ENC_W => enc_w.push(tensor),
            ROLE_ENC_B => enc_b.push(tensor),
            other => {
                return Err(TrainError::BadCheckpoint(format!(
                    "unknown tensor role {other}"
                )))
            }
        }
    }
    let [w1, b1, w2, b2] = aug;
    let (w1, b1, w2, b2) = match (w1, b1, w2, b2) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ => {
            return Err(TrainError::BadCheckpoint(
                "missing augmenter tensors".into(),
            ))
        }
    };
    if enc_w.is_empty() {
        return Err(TrainError::BadCheckpoint("missing encoder weights".into()));
    }
    if !enc_b.is_empty() && enc_b.len() != enc_w.len() {
        return Err(TrainError::BadCheckpoint(format!(
            "{} encoder biases for {} weight matrices",
            enc_b.len(),
            enc_w.len()
        )));
    }
    for pair in enc_w.windows(2) {
        if pair[0].cols() != pair[1].rows() {
            return Err(TrainError::BadCheckpoint(
                "encoder layer dimensions do not chain".into(),
            ));
        }
    }
    Ok(SurgeonModel {
        mode,
        augmenter: AugmenterParams {
            w1,
            b1,
            w2,
            b2,
            dropout_p: 0.0,
        },
        encoder: EncoderParams {
            weights: enc_w,
            biases: (!enc_b.is_empty()).then_some(enc_b),
            dropout_p: 0.0,
            residual,
        },
    })
}
