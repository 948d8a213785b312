//! The full classification network: optional transformation layer, two
//! ReLU convolution layers, temporal max pooling, a one-layer LSTM and a
//! dense head, trained end-to-end with cross-entropy and Adam.
//!
//! Everything is deterministic given the config seed: parameter draws come
//! from one seeded stream in a fixed order, and epoch shuffling uses a
//! second stream over a canonical (id-sorted) sequence order, so training
//! does not depend on the order sequences arrive in.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    maxpool_backward, maxpool_forward, softmax_cross_entropy, AdamHyper, AdamState, Conv1DLayer,
    DenseLayer, LstmLayer, TransformLayer, TransformVariant,
};
use crate::trajectory::{
    encode_trajectory, resample_sequence, sequence_to_trajectory, ProjectionKind, ReferenceShape,
    SkeletonSequence,
};

/// Transformation-layer setting: disabled, or one of the four variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformChoice {
    Off,
    RigidMatrix,
    RigidAngle,
    NonRigidMatrix,
    NonRigidAngle,
}

impl TransformChoice {
    pub fn variant(self) -> Option<TransformVariant> {
        match self {
            TransformChoice::Off => None,
            TransformChoice::RigidMatrix => Some(TransformVariant::RigidMatrix),
            TransformChoice::RigidAngle => Some(TransformVariant::RigidAngle),
            TransformChoice::NonRigidMatrix => Some(TransformVariant::NonRigidMatrix),
            TransformChoice::NonRigidAngle => Some(TransformVariant::NonRigidAngle),
        }
    }

    pub fn from_variant(v: TransformVariant) -> Self {
        match v {
            TransformVariant::RigidMatrix => TransformChoice::RigidMatrix,
            TransformVariant::RigidAngle => TransformChoice::RigidAngle,
            TransformVariant::NonRigidMatrix => TransformChoice::NonRigidMatrix,
            TransformVariant::NonRigidAngle => TransformChoice::NonRigidAngle,
        }
    }
}

impl std::fmt::Display for TransformChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            TransformChoice::Off => "off",
            TransformChoice::RigidMatrix => "rigid_matrix",
            TransformChoice::RigidAngle => "rigid_angle",
            TransformChoice::NonRigidMatrix => "non_rigid_matrix",
            TransformChoice::NonRigidAngle => "non_rigid_angle",
        };
        f.write_str(name)
    }
}

/// Convolution block shape; the paper-level architecture fixes two conv
/// layers and one pool, these set their sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockConfig {
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv2_channels: usize,
    pub conv2_kernel: usize,
    pub pool_window: usize,
}

/// Full configuration: pipeline settings (frames, joints, projection,
/// alignment), architecture sizes and optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KShapeNetConfig {
    pub frames: usize,
    pub joints: usize,
    pub classes: usize,
    pub projection: ProjectionKind,
    pub transform: TransformChoice,
    pub align: bool,
    pub conv: ConvBlockConfig,
    pub lstm_hidden: usize,
    pub optimizer: AdamHyper,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for KShapeNetConfig {
    /// Full-scale defaults: 100 frames, the chosen configuration
    /// (common-reference projection, non-rigid angle transform), Adam at
    /// 1e-4 for 30 epochs.
    fn default() -> Self {
        Self {
            frames: 100,
            joints: 25,
            classes: 60,
            projection: ProjectionKind::CommonReference,
            transform: TransformChoice::NonRigidAngle,
            align: true,
            conv: ConvBlockConfig {
                conv1_channels: 64,
                conv1_kernel: 5,
                conv2_channels: 64,
                conv2_kernel: 3,
                pool_window: 2,
            },
            lstm_hidden: 128,
            optimizer: AdamHyper::default(),
            epochs: 30,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl KShapeNetConfig {
    /// Small sizes that train in seconds on one core; used by the synthetic
    /// benchmark and the CLI defaults.
    pub fn desk_scale() -> Self {
        Self {
            frames: 40,
            joints: 8,
            classes: 3,
            conv: ConvBlockConfig {
                conv1_channels: 32,
                conv1_kernel: 5,
                conv2_channels: 32,
                conv2_kernel: 3,
                pool_window: 2,
            },
            lstm_hidden: 64,
            optimizer: AdamHyper {
                learning_rate: 1e-3,
                ..AdamHyper::default()
            },
            epochs: 200,
            batch_size: 16,
            ..Self::default()
        }
    }

    pub fn features(&self) -> usize {
        3 * (self.joints - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 4 {
            return Err(Error::InvalidDimension(format!(
                "need at least 4 frames, got {}",
                self.frames
            )));
        }
        if self.classes < 2 {
            return Err(Error::InvalidDimension(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.joints < 3 {
            return Err(Error::InvalidDimension(format!(
                "need at least 3 joints, got {}",
                self.joints
            )));
        }
        if self.frames < self.conv.conv1_kernel
            || self.frames < self.conv.conv2_kernel
            || self.frames < self.conv.pool_window
        {
            return Err(Error::InvalidDimension(
                "frame count is smaller than a conv kernel or the pool window".into(),
            ));
        }
        if self.conv.conv1_kernel % 2 == 0 || self.conv.conv2_kernel % 2 == 0 {
            return Err(Error::InvalidDimension(
                "conv kernels must be odd for same-padding".into(),
            ));
        }
        if self.batch_size == 0 || self.lstm_hidden == 0 {
            return Err(Error::InvalidDimension(
                "batch size and LSTM width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Encoded sequences ready for the network: one `frames x features` array
/// per sequence plus ids and labels.
#[derive(Debug, Clone)]
pub struct EncodedDataset {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub data: Vec<Array2<f64>>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn validate(&self, frames: usize, features: usize, classes: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.ids.len() != self.len() || self.labels.len() != self.len() {
            return Err(Error::InvalidDimension(
                "dataset ids/labels/data lengths differ".into(),
            ));
        }
        for (i, d) in self.data.iter().enumerate() {
            if d.dim() != (frames, features) {
                return Err(Error::InvalidDimension(format!(
                    "sequence {} has shape {:?}, expected ({frames}, {features})",
                    self.ids[i],
                    d.dim()
                )));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        Ok(())
    }

    fn batch(&self, idxs: &[usize]) -> (Array3<f64>, Vec<usize>) {
        let (frames, features) = self.data[idxs[0]].dim();
        let mut x = Array3::zeros((idxs.len(), frames, features));
        let mut labels = Vec::with_capacity(idxs.len());
        for (row, &i) in idxs.iter().enumerate() {
            x.index_axis_mut(ndarray::Axis(0), row).assign(&self.data[i]);
            labels.push(self.labels[i]);
        }
        (x, labels)
    }
}

/// Accuracy and confusion counts over one dataset. Confusion rows are true
/// classes, columns predictions; the trace over the total is the accuracy.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Array2<u64>,
}

/// Training record: per-epoch mean loss plus final train/test evaluations.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub epoch_loss: Vec<f64>,
    pub train: Evaluation,
    pub test: Evaluation,
}

struct ForwardCache {
    transformed: Option<Array3<f64>>,
    conv1: crate::layers::ConvOutput,
    conv2: crate::layers::ConvOutput,
    pool: crate::layers::PoolOutput,
    lstm: crate::layers::LstmOutput,
    logits: Array2<f64>,
}

struct Stack {
    transform: Option<TransformLayer>,
    conv1: Conv1DLayer,
    conv2: Conv1DLayer,
    lstm: LstmLayer,
    dense: DenseLayer,
}

impl Stack {
    fn param_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let Some(t) = self.transform.as_mut() {
            out.push(t.params_mut().flat_mut());
        }
        out.extend(self.conv1.params_mut());
        out.extend(self.conv2.params_mut());
        out.extend(self.lstm.params_mut());
        out.extend(self.dense.params_mut());
        out
    }
}

/// The assembled network plus optimizer state, configuration and the
/// reference shape the input encoding was built against.
pub struct Model {
    config: KShapeNetConfig,
    reference: ReferenceShape,
    stack: Stack,
    optimizer: AdamState,
}

fn uniform_array<R: Rng>(rng: &mut R, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Deterministic fan-in scaled uniform initialization from `config.seed`.
/// Draw order is fixed: conv1 (weights, bias), conv2, LSTM (W, U, bias),
/// dense (weights, bias); the transform layer starts at identity and draws
/// nothing.
pub fn build_model(config: &KShapeNetConfig, reference: &ReferenceShape) -> Result<Model> {
    config.validate()?;
    if reference.shape.ambient_dim() != config.features() {
        return Err(Error::InvalidDimension(format!(
            "reference shape has dimension {}, config expects {}",
            reference.shape.ambient_dim(),
            config.features()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let features = config.features();
    let c = &config.conv;

    let transform = match config.transform.variant() {
        Some(variant) => Some(TransformLayer::identity(
            variant,
            config.frames,
            config.joints - 1,
        )?),
        None => None,
    };

    let bound1 = 1.0 / ((features * c.conv1_kernel) as f64).sqrt();
    let w1 = Array3::from_shape_vec(
        (c.conv1_channels, features, c.conv1_kernel),
        uniform_array(&mut rng, c.conv1_channels * features * c.conv1_kernel, bound1),
    )
    .expect("shape matches draw count");
    let b1 = Array1::from_vec(uniform_array(&mut rng, c.conv1_channels, bound1));
    let conv1 = Conv1DLayer::new(w1, b1, 1)?;

    let bound2 = 1.0 / ((c.conv1_channels * c.conv2_kernel) as f64).sqrt();
    let w2 = Array3::from_shape_vec(
        (c.conv2_channels, c.conv1_channels, c.conv2_kernel),
        uniform_array(
            &mut rng,
            c.conv2_channels * c.conv1_channels * c.conv2_kernel,
            bound2,
        ),
    )
    .expect("shape matches draw count");
    let b2 = Array1::from_vec(uniform_array(&mut rng, c.conv2_channels, bound2));
    let conv2 = Conv1DLayer::new(w2, b2, 1)?;

    let h = config.lstm_hidden;
    let bound_l = 1.0 / (h as f64).sqrt();
    let lw = Array2::from_shape_vec(
        (4 * h, c.conv2_channels),
        uniform_array(&mut rng, 4 * h * c.conv2_channels, bound_l),
    )
    .expect("shape matches draw count");
    let lu = Array2::from_shape_vec((4 * h, h), uniform_array(&mut rng, 4 * h * h, bound_l))
        .expect("shape matches draw count");
    let lb = Array1::from_vec(uniform_array(&mut rng, 4 * h, bound_l));
    let lstm = LstmLayer::new(lw, lu, lb)?;

    let bound_d = 1.0 / (h as f64).sqrt();
    let dw = Array2::from_shape_vec(
        (config.classes, h),
        uniform_array(&mut rng, config.classes * h, bound_d),
    )
    .expect("shape matches draw count");
    let db = Array1::from_vec(uniform_array(&mut rng, config.classes, bound_d));
    let dense = DenseLayer::new(dw, db)?;

    let optimizer = AdamState::new(
        config.optimizer,
        &tensor_lens(&transform, &conv1, &conv2, &lstm, &dense),
    );

    Ok(Model {
        config: config.clone(),
        reference: reference.clone(),
        stack: Stack {
            transform,
            conv1,
            conv2,
            lstm,
            dense,
        },
        optimizer,
    })
}

fn tensor_lens(
    transform: &Option<TransformLayer>,
    conv1: &Conv1DLayer,
    conv2: &Conv1DLayer,
    lstm: &LstmLayer,
    dense: &DenseLayer,
) -> Vec<usize> {
    let mut lens = Vec::new();
    if let Some(t) = transform {
        lens.push(t.params().flat().len());
    }
    lens.extend([
        conv1.weights().len(),
        conv1.bias().len(),
        conv2.weights().len(),
        conv2.bias().len(),
        lstm.w().len(),
        lstm.u().len(),
        lstm.bias().len(),
        dense.weights().len(),
        dense.bias().len(),
    ]);
    lens
}

impl Model {
    /// Rebuild a model from checkpointed parts. Shapes are validated against
    /// the config.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        config: KShapeNetConfig,
        reference: ReferenceShape,
        transform: Option<TransformLayer>,
        conv1: Conv1DLayer,
        conv2: Conv1DLayer,
        lstm: LstmLayer,
        dense: DenseLayer,
        optimizer: AdamState,
    ) -> Result<Model> {
        config.validate()?;
        let expect = build_model(&config, &reference)?;
        let same_shapes = expect.stack.conv1.weights().dim() == conv1.weights().dim()
            && expect.stack.conv2.weights().dim() == conv2.weights().dim()
            && expect.stack.lstm.w().dim() == lstm.w().dim()
            && expect.stack.lstm.u().dim() == lstm.u().dim()
            && expect.stack.dense.weights().dim() == dense.weights().dim()
            && expect.stack.transform.is_some() == transform.is_some();
        if !same_shapes {
            return Err(Error::InvalidDimension(
                "checkpoint tensors do not match the configuration".into(),
            ));
        }
        Ok(Model {
            config,
            reference,
            stack: Stack {
                transform,
                conv1,
                conv2,
                lstm,
                dense,
            },
            optimizer,
        })
    }

    pub fn config(&self) -> &KShapeNetConfig {
        &self.config
    }

    pub fn reference(&self) -> &ReferenceShape {
        &self.reference
    }

    pub fn transform(&self) -> Option<&TransformLayer> {
        self.stack.transform.as_ref()
    }

    pub fn conv1(&self) -> &Conv1DLayer {
        &self.stack.conv1
    }

    pub fn conv2(&self) -> &Conv1DLayer {
        &self.stack.conv2
    }

    pub fn lstm(&self) -> &LstmLayer {
        &self.stack.lstm
    }

    pub fn dense(&self) -> &DenseLayer {
        &self.stack.dense
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.optimizer
    }

    pub fn num_param_tensors(&self) -> usize {
        9 + usize::from(self.stack.transform.is_some())
    }

    pub fn param_tensor_names(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        if self.stack.transform.is_some() {
            names.push("transform");
        }
        names.extend([
            "conv1_weights",
            "conv1_bias",
            "conv2_weights",
            "conv2_bias",
            "lstm_w",
            "lstm_u",
            "lstm_bias",
            "dense_weights",
            "dense_bias",
        ]);
        names
    }

    /// Flat mutable views of every parameter tensor, in optimizer order.
    pub fn param_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.stack.param_tensors_mut()
    }

    fn check_batch(&self, x: &Array3<f64>) -> Result<()> {
        let (_, frames, features) = x.dim();
        if frames != self.config.frames || features != self.config.features() {
            return Err(Error::InvalidDimension(format!(
                "batch shaped batch x {frames} x {features}, config wants batch x {} x {}",
                self.config.frames,
                self.config.features()
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, x: &Array3<f64>) -> Result<ForwardCache> {
        self.check_batch(x)?;
        let transformed = match &self.stack.transform {
            Some(t) => Some(t.forward(x)?),
            None => None,
        };
        let conv_in = transformed.as_ref().unwrap_or(x);
        let conv1 = self.stack.conv1.forward(conv_in)?;
        let conv2 = self.stack.conv2.forward(&conv1.output)?;
        let pool = maxpool_forward(&conv2.output, self.config.conv.pool_window)?;
        let lstm = self.stack.lstm.forward(&pool.output)?;
        let logits = self.stack.dense.forward(&lstm.final_hidden)?;
        Ok(ForwardCache {
            transformed,
            conv1,
            conv2,
            pool,
            lstm,
            logits,
        })
    }

    /// Composition of the layer forwards in declared order.
    pub fn forward(&self, x: &Array3<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.logits)
    }

    /// Mean cross-entropy on one batch; pure, used by the gradient checks.
    pub fn loss_on_batch(&self, x: &Array3<f64>, labels: &[usize]) -> Result<f64> {
        let logits = self.forward(x)?;
        Ok(softmax_cross_entropy(&logits, labels)?.0)
    }

    /// Loss plus flat gradients for every parameter tensor, aligned with
    /// [`Model::param_tensors_mut`].
    pub fn loss_and_grads(&self, x: &Array3<f64>, labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let cache = self.forward_cached(x)?;
        let (loss, d_logits) = softmax_cross_entropy(&cache.logits, labels)?;

        let dense_grads = self.stack.dense.backward(&cache.lstm.final_hidden, &d_logits)?;
        let lstm_grads =
            self.stack
                .lstm
                .backward(&cache.pool.output, &cache.lstm.cache, &dense_grads.input)?;
        let d_pool = maxpool_backward(
            &cache.pool.argmax,
            cache.conv2.output.dim().1,
            &lstm_grads.input,
        )?;
        let conv2_grads = self
            .stack
            .conv2
            .backward(&cache.conv1.output, &cache.conv2.pre, &d_pool)?;
        let conv_in = cache.transformed.as_ref().unwrap_or(x);
        let conv1_grads = self
            .stack
            .conv1
            .backward(conv_in, &cache.conv1.pre, &conv2_grads.input)?;

        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(self.num_param_tensors());
        if let Some(t) = &self.stack.transform {
            let (_, t_grads) = t.backward(x, &conv1_grads.input)?;
            grads.push(t_grads.flat().to_vec());
        }
        grads.push(conv1_grads.weights.as_slice().expect("contiguous").to_vec());
        grads.push(conv1_grads.bias.to_vec());
        grads.push(conv2_grads.weights.as_slice().expect("contiguous").to_vec());
        grads.push(conv2_grads.bias.to_vec());
        grads.push(lstm_grads.w.as_slice().expect("contiguous").to_vec());
        grads.push(lstm_grads.u.as_slice().expect("contiguous").to_vec());
        grads.push(lstm_grads.bias.to_vec());
        grads.push(dense_grads.weights.as_slice().expect("contiguous").to_vec());
        grads.push(dense_grads.bias.to_vec());
        Ok((loss, grads))
    }

    /// One optimizer update on one batch; returns the pre-update loss.
    pub fn train_step(&mut self, x: &Array3<f64>, labels: &[usize]) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(x, labels)?;
        let mut tensors: Vec<(&mut [f64], &[f64])> = self
            .stack
            .param_tensors_mut()
            .into_iter()
            .zip(grads.iter().map(|g| g.as_slice()))
            .collect();
        self.optimizer.step(&mut tensors)?;
        Ok(loss)
    }
}

/// Argmax with ties broken toward the lower class index.
fn argmax_row(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

/// Classify a dataset and tally the confusion matrix.
pub fn evaluate(model: &Model, dataset: &EncodedDataset) -> Result<Evaluation> {
    dataset.validate(model.config.frames, model.config.features(), model.config.classes)?;
    let k = model.config.classes;
    let mut confusion = Array2::zeros((k, k));
    let idxs: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idxs.chunks(model.config.batch_size.max(1)) {
        let (x, labels) = dataset.batch(chunk);
        let logits = model.forward(&x)?;
        for (row, &label) in logits.rows().into_iter().zip(labels.iter()) {
            confusion[[label, argmax_row(row)]] += 1;
        }
    }
    let correct: u64 = (0..k).map(|i| confusion[[i, i]]).sum();
    let total: u64 = confusion.iter().sum();
    Ok(Evaluation {
        accuracy: correct as f64 / total as f64,
        confusion,
    })
}

/// Train in place: seed-driven shuffling over a canonical id-sorted order,
/// mean loss recorded per epoch, final train/test evaluations returned.
pub fn train(model: &mut Model, train_set: &EncodedDataset, test_set: &EncodedDataset) -> Result<Metrics> {
    let cfg = model.config.clone();
    train_set.validate(cfg.frames, cfg.features(), cfg.classes)?;
    test_set.validate(cfg.frames, cfg.features(), cfg.classes)?;

    // Canonical order: sort by id so the shuffle stream, and therefore the
    // whole run, is invariant to the order sequences were stored in.
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.sort_by(|&a, &b| train_set.ids[a].cmp(&train_set.ids[b]));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546_464c_4535);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        // Fisher-Yates over the canonical order.
        let mut idxs = order.clone();
        for i in (1..idxs.len()).rev() {
            let j = rng.gen_range(0..=i);
            idxs.swap(i, j);
        }
        let mut total = 0.0;
        for chunk in idxs.chunks(cfg.batch_size) {
            let (x, labels) = train_set.batch(chunk);
            let loss = model.train_step(&x, &labels)?;
            total += loss * chunk.len() as f64;
        }
        epoch_loss.push(total / train_set.len() as f64);
    }
    Ok(Metrics {
        epoch_loss,
        train: evaluate(model, train_set)?,
        test: evaluate(model, test_set)?,
    })
}

/// Pick the default reference shape: the pre-shape of frame 0 of the first
/// training sequence.
pub fn default_reference(train: &[SkeletonSequence]) -> Result<ReferenceShape> {
    let first = train.first().ok_or(Error::EmptyDataset)?;
    let config = crate::geometry::LandmarkConfig::new(first.frame(0))?;
    let shape = crate::geometry::to_preshape(&config)?;
    Ok(ReferenceShape::new(
        shape,
        format!("frame 0 of sequence '{}'", first.id),
    ))
}

/// Resample, project to the sphere, optionally align, and encode every
/// sequence under the configured projection.
pub fn preprocess_sequences(
    seqs: &[SkeletonSequence],
    config: &KShapeNetConfig,
    reference: &ReferenceShape,
) -> Result<EncodedDataset> {
    let mut ids = Vec::with_capacity(seqs.len());
    let mut labels = Vec::with_capacity(seqs.len());
    let mut data = Vec::with_capacity(seqs.len());
    for seq in seqs {
        if seq.joints() != config.joints {
            return Err(Error::InvalidDimension(format!(
                "sequence {} has {} joints, config expects {}",
                seq.id,
                seq.joints(),
                config.joints
            )));
        }
        let resampled = resample_sequence(seq, config.frames)?;
        let traj = sequence_to_trajectory(&resampled, reference, config.align)?;
        let encoded = encode_trajectory(&traj, config.projection, reference)?;
        ids.push(seq.id.clone());
        labels.push(seq.label);
        data.push(encoded.data);
    }
    Ok(EncodedDataset { ids, labels, data })
}

/// One named experiment row.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub name: String,
    pub config: KShapeNetConfig,
    pub metrics: Metrics,
}

fn run_one(
    name: &str,
    config: &KShapeNetConfig,
    reference: &ReferenceShape,
    train_seqs: &[SkeletonSequence],
    test_seqs: &[SkeletonSequence],
) -> Result<GridRow> {
    let train_set = preprocess_sequences(train_seqs, config, reference)?;
    let test_set = preprocess_sequences(test_seqs, config, reference)?;
    let mut model = build_model(config, reference)?;
    let metrics = train(&mut model, &train_set, &test_set)?;
    Ok(GridRow {
        name: name.into(),
        config: config.clone(),
        metrics,
    })
}

/// The four-row ablation: baseline, transformation layer only, tangent
/// projection only, and the full network, all with identical seeds.
pub fn run_ablation(
    base: &KShapeNetConfig,
    train_seqs: &[SkeletonSequence],
    test_seqs: &[SkeletonSequence],
) -> Result<Vec<GridRow>> {
    let reference = default_reference(train_seqs)?;
    let transform = if base.transform == TransformChoice::Off {
        TransformChoice::NonRigidAngle
    } else {
        base.transform
    };
    let projection = if base.projection == ProjectionKind::PreShape {
        ProjectionKind::CommonReference
    } else {
        base.projection
    };
    let rows = [
        ("baseline", ProjectionKind::PreShape, TransformChoice::Off),
        ("transform_only", ProjectionKind::PreShape, transform),
        ("projection_only", projection, TransformChoice::Off),
        ("full", projection, transform),
    ];
    let mut out = Vec::with_capacity(4);
    for (name, proj, tr) in rows {
        let mut cfg = base.clone();
        cfg.projection = proj;
        cfg.transform = tr;
        out.push(run_one(name, &cfg, &reference, train_seqs, test_seqs)?);
    }
    Ok(out)
}

/// The four transformation-layer variants under the base projection.
pub fn run_variants(
    base: &KShapeNetConfig,
    train_seqs: &[SkeletonSequence],
    test_seqs: &[SkeletonSequence],
) -> Result<Vec<GridRow>> {
    let reference = default_reference(train_seqs)?;
    let mut out = Vec::with_capacity(4);
    for variant in TransformVariant::ALL {
        let mut cfg = base.clone();
        cfg.transform = TransformChoice::from_variant(variant);
        out.push(run_one(
            &variant.to_string(),
            &cfg,
            &reference,
            train_seqs,
            test_seqs,
        )?);
    }
    Ok(out)
}

/// The three tangent projections under the base transform choice.
pub fn run_projections(
    base: &KShapeNetConfig,
    train_seqs: &[SkeletonSequence],
    test_seqs: &[SkeletonSequence],
) -> Result<Vec<GridRow>> {
    let reference = default_reference(train_seqs)?;
    let mut out = Vec::with_capacity(3);
    for projection in [
        ProjectionKind::CommonReference,
        ProjectionKind::FirstFrame,
        ProjectionKind::ShootingPt,
    ] {
        let mut cfg = base.clone();
        cfg.projection = projection;
        out.push(run_one(
            &projection.to_string(),
            &cfg,
            &reference,
            train_seqs,
            test_seqs,
        )?);
    }
    Ok(out)
}
