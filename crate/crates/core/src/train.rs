//! Deterministic desk-scale training: SGD with momentum and weight decay, a
//! milestone learning-rate schedule, and masked updates that never resurrect
//! pruned weights.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::graph::ModelGraph;
use crate::init::layer_rng;
use crate::nn::{Gradients, Runtime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs at which the learning rate drops by `gamma`.
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.batch_size == 0 {
            return Err(CoreError::InvalidConfig(String::from("batch_size must be positive")));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(CoreError::InvalidConfig(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(CoreError::InvalidConfig(String::from("milestones must be strictly increasing")));
        }
        if let Some(&last) = self.milestones.last() {
            if last >= self.epochs {
                return Err(CoreError::InvalidConfig(format!(
                    "milestone {last} not below epochs {}",
                    self.epochs
                )));
            }
        }
        if !(self.lr.is_finite() && self.momentum.is_finite() && self.weight_decay.is_finite()) {
            return Err(CoreError::InvalidConfig(String::from("hyperparameters must be finite")));
        }
        Ok(())
    }

    /// Step schedule: `lr x gamma^(number of milestones <= epoch)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * libm::pow(self.gamma, drops as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Image classification dataset: NCHW inputs plus integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f32>,
    /// (n, c, h, w)
    pub shape: (usize, usize, usize, usize),
    pub labels: Vec<u32>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.shape.0
    }

    pub fn is_empty(&self) -> bool {
        self.shape.0 == 0
    }

    pub fn sample_elements(&self) -> usize {
        self.shape.1 * self.shape.2 * self.shape.3
    }

    pub fn validate(&self, class_count: usize) -> Result<(), CoreError> {
        let (n, c, h, w) = self.shape;
        if self.inputs.len() != n * c * h * w {
            return Err(CoreError::InvalidConfig(format!(
                "dataset inputs length {} does not match shape {:?}",
                self.inputs.len(),
                self.shape
            )));
        }
        if self.labels.len() != n {
            return Err(CoreError::InvalidConfig(format!(
                "dataset has {n} samples but {} labels",
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= class_count) {
            return Err(CoreError::InvalidConfig(format!("label {bad} outside 0..{class_count}")));
        }
        Ok(())
    }
}

/// One line of the training history (serialized as JSON lines downstream).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_acc: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_graph: ModelGraph,
    /// Checkpoint with the best test accuracy (earliest epoch on ties).
    pub best_graph: ModelGraph,
    pub best_epoch: Option<usize>,
    pub best_accuracy: f64,
    pub history: Vec<EpochRecord>,
}

/// Momentum buffers, one per layer, shaped like the runtime parameters.
pub struct SgdState {
    velocity_w: Vec<Vec<f32>>,
    velocity_b: Vec<Vec<f32>>,
}

impl SgdState {
    pub fn new(runtime: &Runtime<f32>) -> Self {
        SgdState {
            velocity_w: runtime.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            velocity_b: runtime.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }
}

/// One SGD step: `v <- momentum*v + (grad + weight_decay*w)`;
/// `w <- w - lr(epoch)*v`. Masked positions remain exactly 0 afterwards.
pub fn sgd_step(
    runtime: &mut Runtime<f32>,
    grads: &Gradients<f32>,
    state: &mut SgdState,
    config: &TrainConfig,
    epoch: usize,
) {
    let lr = config.lr_at(epoch) as f32;
    let momentum = config.momentum as f32;
    let weight_decay = config.weight_decay as f32;
    for (li, layer) in runtime.layers.iter_mut().enumerate() {
        for ((w, &g), v) in layer
            .weights
            .iter_mut()
            .zip(grads.weights[li].iter())
            .zip(state.velocity_w[li].iter_mut())
        {
            *v = momentum * *v + (g + weight_decay * *w);
            *w -= lr * *v;
        }
        for ((b, &g), v) in layer
            .bias
            .iter_mut()
            .zip(grads.bias[li].iter())
            .zip(state.velocity_b[li].iter_mut())
        {
            *v = momentum * *v + (g + weight_decay * *b);
            *b -= lr * *v;
        }
        if let Some(mask) = &layer.mask {
            for (i, w) in layer.weights.iter_mut().enumerate() {
                if !mask.get(i) {
                    *w = 0.0;
                }
            }
        }
    }
}

/// Train `graph` on `train` data, evaluating on `test` after each epoch.
/// Fully deterministic given (seed, config, dataset): the data order per
/// epoch comes from a stream keyed by (seed, epoch). `clock` supplies
/// wall-clock milliseconds for the history records (pass `|| 0` where timing
/// does not matter).
pub fn train(
    graph: &ModelGraph,
    train_data: &Dataset,
    test_data: &Dataset,
    config: &TrainConfig,
    mut clock: impl FnMut() -> u64,
) -> Result<TrainOutcome, CoreError> {
    config.validate()?;
    train_data.validate(graph.class_count)?;
    test_data.validate(graph.class_count)?;
    let report = graph.validate();
    if !report.is_ok() {
        return Err(CoreError::InvalidGraph(format!("{} violations", report.violations.len())));
    }

    let mut runtime: Runtime<f32> = Runtime::from_graph(graph)?;
    let mut state = SgdState::new(&runtime);
    let elems = train_data.sample_elements();
    let n = train_data.len();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best_graph = graph.clone();
    let mut best_epoch = None;
    let mut best_accuracy = f64::NEG_INFINITY;

    let mut indices: Vec<usize> = (0..n).collect();
    let mut batch_inputs: Vec<f32> = Vec::new();
    let mut batch_labels: Vec<u32> = Vec::new();

    for epoch in 0..config.epochs {
        shuffle(&mut indices, config.seed, epoch);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for chunk in indices.chunks(config.batch_size) {
            let b = chunk.len();
            batch_inputs.clear();
            batch_labels.clear();
            for &ix in chunk {
                batch_inputs.extend_from_slice(&train_data.inputs[ix * elems..(ix + 1) * elems]);
                batch_labels.push(train_data.labels[ix]);
            }
            let (logits, trace) = runtime.forward(&batch_inputs, b, true)?;
            let (loss, dlogits) = runtime
                .loss_and_dlogits(&logits, &batch_labels, b)
                .map_err(|_| CoreError::Diverged { epoch })?;
            if !loss.is_finite() {
                return Err(CoreError::Diverged { epoch });
            }
            let grads = runtime.backward(&trace, &dlogits);
            sgd_step(&mut runtime, &grads, &mut state, config, epoch);
            loss_sum += loss * b as f64;
            seen += b;
        }
        let train_loss = loss_sum / seen as f64;
        let test_acc = runtime.accuracy(&test_data.inputs, &test_data.labels, test_data.len())?;
        history.push(EpochRecord { epoch, lr: config.lr_at(epoch), train_loss, test_acc, wall_ms: clock() });
        if test_acc > best_accuracy {
            best_accuracy = test_acc;
            best_epoch = Some(epoch);
            let mut snapshot = graph.clone();
            runtime.write_back(&mut snapshot);
            best_graph = snapshot;
        }
    }

    let mut final_graph = graph.clone();
    runtime.write_back(&mut final_graph);
    if best_epoch.is_none() {
        best_graph = final_graph.clone();
        best_accuracy = Runtime::<f32>::from_graph(&best_graph)?.accuracy(
            &test_data.inputs,
            &test_data.labels,
            test_data.len(),
        )?;
    }
    Ok(TrainOutcome { final_graph, best_graph, best_epoch, best_accuracy, history })
}

/// Test accuracy of a graph over a dataset.
pub fn evaluate(graph: &ModelGraph, data: &Dataset) -> Result<f64, CoreError> {
    data.validate(graph.class_count)?;
    let runtime: Runtime<f32> = Runtime::from_graph(graph)?;
    runtime.accuracy(&data.inputs, &data.labels, data.len())
}

/// Fisher-Yates keyed by (seed, epoch).
fn shuffle(indices: &mut [usize], seed: u64, epoch: usize) {
    let mut rng = layer_rng(seed ^ 0x7261_6e64_5f65_7033, epoch);
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}
