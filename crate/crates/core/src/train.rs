//! Adam optimization of a surrogate over whole-graph steps, with learning
//! curve capture and loss-plateau stopping.

use crate::autodiff::{AutodiffError, Matrix, Mode, Tape, Var};
use crate::mesh_io::{MeshMetadata, UnstructuredMesh};
use crate::metrics::{self, EvalSummary, MetricsError};
use crate::nn::{Model, NnError, Param};
use crate::preprocess::{build_graph, Normalization, PreparedGraph, PreprocessError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("graph '{0}' has no wear target")]
    MissingTarget(String),
    #[error("non-finite loss at epoch {epoch} on graph '{graph}'")]
    NonFinite { epoch: usize, graph: String },
    #[error("optimizer state does not match parameter '{0}'")]
    StateShape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Mae,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            other => Err(format!("unknown loss '{other}' (expected mse or mae)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub loss: LossKind,
    pub plateau_check_interval: usize,
    /// Stop when a window's mean loss improves on the previous window by
    /// less than this fraction. `None` disables the check.
    pub plateau_relative_tolerance: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 1000,
            loss: LossKind::Mse,
            plateau_check_interval: 100,
            plateau_relative_tolerance: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.plateau_check_interval == 0 {
            return bad("plateau check interval must be >= 1".into());
        }
        Ok(())
    }
}

/// Records the training loss on `tape`: mean over nodes of `|e|` or `e²`.
pub fn loss_on_tape(
    tape: &mut Tape,
    pred: Var,
    target: Var,
    kind: LossKind,
) -> Result<Var, AutodiffError> {
    let diff = tape.sub(pred, target)?;
    let per_node = match kind {
        LossKind::Mse => tape.square(diff),
        LossKind::Mae => tape.abs(diff),
    };
    tape.mean(per_node)
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    step: u64,
}

impl Adam {
    pub fn new(params: &[Param]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Adam {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, i: usize) -> (&Matrix, &Matrix) {
        (&self.first[i], &self.second[i])
    }

    pub fn step(
        &mut self,
        params: &mut [Param],
        grads: &[Matrix],
        config: &TrainConfig,
    ) -> Result<(), TrainError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TrainError::StateShape(format!(
                "{} parameters, {} gradients, {} moment arrays",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, wd, eps) = (config.learning_rate, config.weight_decay, config.epsilon);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let shape = p.value.shape();
            if g.shape() != shape || self.first[i].shape() != shape {
                return Err(TrainError::StateShape(p.name.clone()));
            }
            let w = p.value.as_mut_slice();
            let m = self.first[i].as_mut_slice();
            let v = self.second[i].as_mut_slice();
            for k in 0..w.len() {
                let gk = g.as_slice()[k] + wd * w[k];
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                w[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochsExhausted,
    Plateau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's graph steps.
    pub train_loss: f64,
    /// Natural log of the epoch-mean training MSE.
    pub train_log_mse: f64,
    pub val_mae: Option<f64>,
    pub val_mse: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub final_validation: Option<EvalSummary>,
    pub total_seconds: f64,
}

pub const CURVE_HEADER: &str = "epoch,train_loss,train_log_mse,val_mae,val_mse,seconds";

impl TrainReport {
    pub fn completed_epochs(&self) -> usize {
        self.epochs.len()
    }

    /// Learning curve as CSV. Missing validation values are empty fields.
    pub fn curve_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.epochs.len() + 1));
        s.push_str(CURVE_HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                e.train_log_mse,
                opt(e.val_mae),
                opt(e.val_mse),
                e.seconds
            );
        }
        s
    }
}

/// Outcome of one plateau check: the relative improvement of the latest
/// window mean over `reference`.
fn plateau_reached(losses: &[f64], interval: usize, tolerance: f64) -> bool {
    let e = losses.len();
    let window = &losses[e - interval..];
    let current = window.iter().sum::<f64>() / interval as f64;
    let reference = if e >= 2 * interval {
        losses[e - 2 * interval..e - interval].iter().sum::<f64>() / interval as f64
    } else {
        // first check: compare with the first epoch
        losses[0]
    };
    let improvement = (reference - current) / reference.abs().max(f64::MIN_POSITIVE);
    improvement < tolerance
}

/// Trains `model` with one forward/backward pass and one Adam step per
/// training graph per epoch, visiting graphs in a seeded shuffled order.
pub fn train(
    mut model: Model,
    train_set: &[PreparedGraph],
    val_set: &[PreparedGraph],
    config: &TrainConfig,
) -> Result<(Model, TrainReport), TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    for g in train_set.iter().chain(val_set) {
        model.check_node_count(g.node_count())?;
        if g.target.is_none() {
            return Err(TrainError::MissingTarget(g.id.clone()));
        }
    }

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&model.params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut losses = Vec::with_capacity(config.epochs);
    let mut stop_reason = StopReason::EpochsExhausted;
    let mut tape = Tape::new();

    for epoch in 1..=config.epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut mse_sum = 0.0;
        for &gi in &order {
            let g = &train_set[gi];
            let target = g.target.as_ref().expect("checked above");
            let params = model.record_params(&mut tape, true);
            let x = tape.constant(g.features.clone());
            let pred = model.forward(&mut tape, &params, x, &g.adjacency, Mode::Train, &mut rng)?;
            let tv = tape.constant(target.clone());
            let loss = loss_on_tape(&mut tape, pred, tv, config.loss)?;
            let loss_value = tape.value(loss).as_slice()[0];
            let step_mse = match config.loss {
                LossKind::Mse => loss_value,
                LossKind::Mae => metrics::mse(tape.value(pred).as_slice(), target.as_slice())?,
            };
            if !loss_value.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    graph: g.id.clone(),
                });
            }
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Matrix> = params
                .iter()
                .map(|&v| grads.take(v).expect("parameter gradient"))
                .collect();
            if grads.iter().any(|m| !m.is_finite()) {
                return Err(TrainError::NonFinite {
                    epoch,
                    graph: g.id.clone(),
                });
            }
            adam.step(&mut model.params, &grads, config)?;
            loss_sum += loss_value;
            mse_sum += step_mse;
        }
        let n = train_set.len() as f64;
        let train_loss = loss_sum / n;
        let (val_mae, val_mse) = if val_set.is_empty() {
            (None, None)
        } else {
            let (mae, mse) = validation_errors(&model, val_set)?;
            (Some(mae), Some(mse))
        };
        records.push(EpochRecord {
            epoch,
            train_loss,
            train_log_mse: (mse_sum / n).ln(),
            val_mae,
            val_mse,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
        losses.push(train_loss);
        log::debug!("epoch {epoch}: loss {train_loss:.6e}");

        if let Some(tol) = config.plateau_relative_tolerance {
            let k = config.plateau_check_interval;
            if epoch % k == 0 && plateau_reached(&losses, k, tol) {
                stop_reason = StopReason::Plateau;
                break;
            }
        }
    }

    let final_validation = if val_set.is_empty() {
        None
    } else {
        metrics::evaluate(&model, val_set).ok()
    };
    let report = TrainReport {
        config: config.clone(),
        epochs: records,
        stop_reason,
        final_validation,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

fn validation_errors(model: &Model, graphs: &[PreparedGraph]) -> Result<(f64, f64), TrainError> {
    let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
    for g in graphs {
        let pred = model.predict(&g.features, &g.adjacency)?;
        let target = g.target.as_ref().expect("checked above").as_slice();
        for (p, t) in pred.iter().zip(target) {
            abs += (p - t).abs();
            sq += (p - t) * (p - t);
        }
        n += pred.len();
    }
    Ok((abs / n as f64, sq / n as f64))
}

/// A mesh carrying predicted wear as the point field `wear_pred`.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mesh: UnstructuredMesh,
    /// Surface-node predictions in surface order.
    pub surface_wear: Vec<f64>,
    /// Wall-clock of graph construction plus the forward pass.
    pub latency: Duration,
}

pub const PREDICTION_FIELD: &str = "wear_pred";

/// Runs the surrogate on a mesh under new process parameters. Points off the
/// external surface get zero.
pub fn predict(
    model: &Model,
    normalization: &Normalization,
    mesh: &UnstructuredMesh,
    meta: &MeshMetadata,
) -> Result<Prediction, TrainError> {
    let start = Instant::now();
    let graph = build_graph(mesh, meta, None)?;
    model.check_node_count(graph.node_count())?;
    let prepared = PreparedGraph {
        id: graph.source_id.clone(),
        features: normalization.apply(&graph.features),
        adjacency: Arc::new(graph.adjacency()),
        target: None,
    };
    let surface_wear = model.predict(&prepared.features, &prepared.adjacency)?;
    let latency = start.elapsed();

    let mut field = vec![0.0; mesh.point_count()];
    for (&p, &w) in graph.node_ids.iter().zip(&surface_wear) {
        field[p] = w;
    }
    let mut out = mesh.clone();
    out.point_fields.insert(PREDICTION_FIELD.into(), field);
    Ok(Prediction {
        mesh: out,
        surface_wear,
        latency,
    })
}
