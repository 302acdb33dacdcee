//! Epoch loop, AdamW updates and best-validation-F1 model selection.
//!
//! Every random choice (initialisation, epoch sampling, dropout masks) is
//! derived from `TrainConfig::seed` and the epoch or step counter, so a run
//! resumed from a saved [`TrainState`] continues bit-for-bit like one that
//! never stopped.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::inference::{
    binarize_and_extract, sliding_infer, EventHygiene, InferenceError, WindowClassifier,
};
use crate::model::checkpoint::{read_container, write_container, Container};
use crate::model::{
    loss_and_grad, save_checkpoint, CheckpointMeta, Dropout, ModelConfig, ModelError, ModelParams,
};
use crate::preprocess::MontagedRecording;
use crate::recording::AnnotationSet;
use crate::scoring::{aggregate, score_recording, ScoreReport, ScoringError, Tolerance};
use crate::windowing::{
    chunk_and_filter_hours, sample_epoch, window_rows, IndexedRecording, SamplerConfig, TrainIndex,
    WindowError,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss in epoch {epoch}, batch {batch} (recordings {recordings:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        recordings: Vec<String>,
    },
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("i/o error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("training state {0}: {1}")]
    State(String, String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Windows per forward/backward call; gradients of a batch are summed
    /// over micro-batches in a fixed order.
    pub micro_batch: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub label_smoothing: f64,
    /// Decision threshold used for validation F1.
    pub threshold: f64,
    pub seed: u64,
    pub sampler: SamplerConfig,
    /// Sliding-window stride during validation.
    pub val_stride_s: f64,
    pub hygiene: EventHygiene,
    pub tolerance: Tolerance,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            micro_batch: 4,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            label_smoothing: 0.1,
            threshold: 0.85,
            seed: 0,
            sampler: SamplerConfig::default(),
            val_stride_s: 2.0,
            hygiene: EventHygiene::default(),
            tolerance: Tolerance::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 || self.micro_batch == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.label_smoothing) {
            return bad("label smoothing must lie in [0, 1]");
        }
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rate and weight decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_eps > 0.0)
        {
            return bad("invalid Adam constants");
        }
        self.sampler.validate()?;
        Ok(())
    }
}

/// Training recordings with their sampling index; `index.recordings[i]`
/// describes `recordings[i]`.
pub struct TrainData {
    pub recordings: Vec<MontagedRecording>,
    pub index: TrainIndex,
}

impl TrainData {
    /// `long_form` recordings only contribute the hours that contain a
    /// seizure.
    pub fn new(items: Vec<(MontagedRecording, AnnotationSet, bool)>) -> Self {
        let mut recordings = Vec::with_capacity(items.len());
        let mut index = TrainIndex::default();
        for (rec, ann, long_form) in items {
            let allowed = long_form.then(|| chunk_and_filter_hours(rec.duration_s(), &ann));
            index.recordings.push(IndexedRecording {
                recording_id: rec.id.clone(),
                patient_id: rec.patient_id.clone(),
                n_samples: rec.n_samples(),
                fs: rec.fs,
                seizures: ann.intervals(),
                allowed,
            });
            recordings.push(rec);
        }
        TrainData { recordings, index }
    }
}

pub struct ValidationSet {
    pub items: Vec<(MontagedRecording, AnnotationSet)>,
}

/// The best model seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct BestModel {
    pub epoch: usize,
    pub f1: f64,
    pub params: ModelParams,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Optimizer steps taken.
    pub step: u64,
    /// Epochs completed.
    pub epoch: usize,
    pub best: Option<BestModel>,
}

const INIT_STREAM: u64 = 0x1;
const SAMPLER_STREAM: u64 = 0x2;
const DROPOUT_STREAM: u64 = 0x3;

impl TrainState {
    pub fn new(model: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        let params = ModelParams::init(model, crate::derive_seed(cfg.seed, INIT_STREAM))?;
        Ok(Self::from_params(params))
    }

    pub fn from_params(params: ModelParams) -> Self {
        let n = params.len();
        TrainState {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            epoch: 0,
            best: None,
        }
    }

    /// Records a validation result; the best model changes only on a strict
    /// improvement.
    pub fn consider(&mut self, epoch: usize, f1: f64) -> bool {
        let improved = self.best.as_ref().is_none_or(|b| f1 > b.f1);
        if improved {
            self.best = Some(BestModel {
                epoch,
                f1,
                params: self.params.clone(),
            });
        }
        improved
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Meta<'a> {
            step: u64,
            epoch: usize,
            best_epoch: Option<usize>,
            best_f1: Option<f64>,
            tensors: &'a [crate::model::TensorInfo],
        }
        let meta = Meta {
            step: self.step,
            epoch: self.epoch,
            best_epoch: self.best.as_ref().map(|b| b.epoch),
            best_f1: self.best.as_ref().map(|b| b.f1),
            tensors: &self.params.tensors,
        };
        let n = self.params.len();
        let mut tensors = vec![
            ("params".to_string(), vec![n], self.params.data.clone()),
            ("adam.m".to_string(), vec![n], self.m.clone()),
            ("adam.v".to_string(), vec![n], self.v.clone()),
        ];
        if let Some(b) = &self.best {
            tensors.push(("best".to_string(), vec![n], b.params.data.clone()));
        }
        let c = Container {
            config_json: serde_json::to_string(&self.params.config).expect("config serialises"),
            meta_json: serde_json::to_string(&meta).expect("state serialises"),
            tensors,
        };
        Ok(write_container(path, &c)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            step: u64,
            epoch: usize,
            best_epoch: Option<usize>,
            best_f1: Option<f64>,
        }
        let err = |m: &str| TrainError::State(path.display().to_string(), m.to_string());
        let c = read_container(path)?;
        let config: ModelConfig =
            serde_json::from_str(&c.config_json).map_err(|e| err(&e.to_string()))?;
        let meta: Meta = serde_json::from_str(&c.meta_json).map_err(|e| err(&e.to_string()))?;
        let mut params = ModelParams::zeros(&config)?;
        let n = params.len();
        let take = |name: &str| -> Option<Vec<f64>> {
            c.tensors
                .iter()
                .find(|t| t.0 == name)
                .filter(|t| t.2.len() == n)
                .map(|t| t.2.clone())
        };
        params.data = take("params").ok_or_else(|| err("missing params"))?;
        let m = take("adam.m").ok_or_else(|| err("missing adam.m"))?;
        let v = take("adam.v").ok_or_else(|| err("missing adam.v"))?;
        let best = match (meta.best_epoch, meta.best_f1, take("best")) {
            (Some(epoch), Some(f1), Some(data)) => {
                let mut p = params.clone();
                p.data = data;
                Some(BestModel {
                    epoch,
                    f1,
                    params: p,
                })
            }
            (None, None, None) => None,
            _ => return Err(err("inconsistent best-model record")),
        };
        Ok(TrainState {
            params,
            m,
            v,
            step: meta.step,
            epoch: meta.epoch,
            best,
        })
    }
}

/// One AdamW update with decoupled weight decay (`p ← p·(1 − lr·wd)`) on
/// weight matrices; biases, norm gains and 1-D tensors are not decayed.
pub fn adamw_step(state: &mut TrainState, grad: &[f64], cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let lr = cfg.learning_rate;
    let params = &mut state.params;
    for info in &params.tensors {
        let decay = if info.shape.len() >= 2 {
            1.0 - lr * cfg.weight_decay
        } else {
            1.0
        };
        for i in info.range() {
            let g = grad[i];
            state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
            state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = state.m[i] / bc1;
            let vhat = state.v[i] / bc2;
            params.data[i] = params.data[i] * decay - lr * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Builds the flat `[window][channel][sample]` input of one batch.
fn batch_input(
    data: &TrainData,
    items: &[crate::windowing::SegmentSource],
    cfg: &ModelConfig,
) -> Vec<f64> {
    let mut x = Vec::with_capacity(items.len() * cfg.n_channels * cfg.window_samples());
    for s in items {
        for row in window_rows(
            &data.recordings[s.recording].samples,
            s.start_sample,
            &cfg.window,
        ) {
            x.extend_from_slice(&row);
        }
    }
    x
}

/// One optimizer step on a batch; returns the summed loss.
fn train_batch(
    state: &mut TrainState,
    data: &TrainData,
    items: &[crate::windowing::SegmentSource],
    cfg: &TrainConfig,
) -> Result<f64> {
    let model = state.params.config.clone();
    let scale = 1.0 / items.len() as f64;
    let step_seed = crate::derive_seed(crate::derive_seed(cfg.seed, DROPOUT_STREAM), state.step);
    let params = &state.params;
    let parts: Vec<Result<(f64, Vec<f64>)>> = items
        .par_chunks(cfg.micro_batch)
        .enumerate()
        .map(|(k, mb)| {
            let x = batch_input(data, mb, &model);
            let labels: Vec<usize> = mb.iter().map(|s| s.label.class_index()).collect();
            let mut dropout = Dropout::new(model.dropout, crate::derive_seed(step_seed, k as u64));
            Ok(loss_and_grad(
                params,
                &x,
                &labels,
                cfg.label_smoothing,
                scale,
                Some(&mut dropout),
            )?)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; state.params.len()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteLoss {
            epoch: state.epoch,
            batch: 0,
            recordings: items
                .iter()
                .map(|s| data.index.recordings[s.recording].recording_id.clone())
                .collect(),
        });
    }
    adamw_step(state, &grad, cfg);
    Ok(loss)
}

/// Samples one epoch and takes one optimizer step per batch. Returns the
/// mean loss per segment.
pub fn train_epoch(state: &mut TrainState, data: &TrainData, cfg: &TrainConfig) -> Result<f64> {
    if data.recordings.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let spec = state.params.config.window;
    let sampler = SamplerConfig {
        seed: crate::derive_seed(cfg.seed, SAMPLER_STREAM),
        ..cfg.sampler.clone()
    };
    let sources = sample_epoch(&data.index, &sampler, &spec, state.epoch as u64)?;
    let mut total = 0.0;
    for (b, batch) in sources.chunks(cfg.batch_size).enumerate() {
        total += train_batch(state, data, batch, cfg).map_err(|e| match e {
            TrainError::NonFiniteLoss {
                epoch, recordings, ..
            } => TrainError::NonFiniteLoss {
                epoch,
                batch: b,
                recordings,
            },
            other => other,
        })?;
    }
    state.epoch += 1;
    Ok(total / sources.len() as f64)
}

/// Full-protocol validation: sliding inference, thresholding and event
/// scoring of every validation recording, pooled.
pub fn validate(
    model: &dyn WindowClassifier,
    val: &ValidationSet,
    cfg: &TrainConfig,
) -> Result<ScoreReport> {
    if val.items.is_empty() {
        return Err(TrainError::EmptyValidationSet);
    }
    let reports = val
        .items
        .iter()
        .map(|(rec, ann)| {
            let trace = sliding_infer(rec, model, cfg.val_stride_s)?;
            let hyp = binarize_and_extract(&trace, cfg.threshold, &cfg.hygiene)?;
            Ok(score_recording(
                &hyp,
                ann,
                rec.duration_s(),
                &cfg.tolerance,
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&reports)?)
}

/// Validates the current parameters and updates the best model on strict
/// improvement of event F1.
pub fn validate_and_select(
    state: &mut TrainState,
    val: &ValidationSet,
    cfg: &TrainConfig,
) -> Result<(ScoreReport, bool)> {
    let report = validate(&state.params, val, cfg)?;
    let epoch = state.epoch;
    let improved = state.consider(epoch, report.event.f1);
    Ok((report, improved))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub val_f1: f64,
    pub val_sensitivity: f64,
    pub val_precision: f64,
    pub fp_per_day: f64,
    pub sample_f1: f64,
    pub best_epoch: usize,
    pub best_f1: f64,
    pub seconds: f64,
}

pub const STATE_FILE: &str = "train_state.bin";
pub const BEST_FILE: &str = "best.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// Trains for `cfg.epochs` epochs, validating after each. Writes the best
/// checkpoint, a resumable state file and a JSON-lines metrics log into
/// `out_dir`, and returns the checkpoint path. An existing state file in
/// `out_dir` is resumed when `resume` is set.
pub fn train_run(
    data: &TrainData,
    val: &ValidationSet,
    model: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: bool,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<PathBuf> {
    cfg.validate()?;
    model.validate()?;
    if val.items.is_empty() {
        return Err(TrainError::EmptyValidationSet);
    }
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |e| TrainError::Io(p, e)
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let state_path = out_dir.join(STATE_FILE);
    let best_path = out_dir.join(BEST_FILE);
    let metrics_path = out_dir.join(METRICS_FILE);
    let mut state = if resume && state_path.exists() {
        let s = TrainState::load(&state_path)?;
        if &s.params.config != model {
            return Err(TrainError::State(
                state_path.display().to_string(),
                "model config differs".into(),
            ));
        }
        s
    } else {
        if metrics_path.exists() {
            fs::remove_file(&metrics_path).map_err(io(&metrics_path))?;
        }
        TrainState::new(model, cfg)?
    };

    while state.epoch < cfg.epochs {
        let started = std::time::Instant::now();
        let loss = train_epoch(&mut state, data, cfg)?;
        let (report, improved) = validate_and_select(&mut state, val, cfg)?;
        let best = state.best.as_ref().expect("set after first validation");
        if improved {
            let meta = CheckpointMeta {
                epoch: best.epoch,
                val_f1: Some(best.f1),
                threshold: cfg.threshold,
                extra: serde_json::json!({ "seed": cfg.seed, "loss": loss }),
            };
            save_checkpoint(&best_path, &best.params, &meta)?;
        }
        let metrics = EpochMetrics {
            epoch: state.epoch,
            loss,
            val_f1: report.event.f1,
            val_sensitivity: report.event.sensitivity,
            val_precision: report.event.precision,
            fp_per_day: report.event.fp_per_day,
            sample_f1: report.sample.f1,
            best_epoch: best.epoch,
            best_f1: best.f1,
            seconds: started.elapsed().as_secs_f64(),
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&metrics_path)
            .map_err(io(&metrics_path))?;
        writeln!(
            f,
            "{}",
            serde_json::to_string(&metrics).expect("metrics serialise")
        )
        .map_err(io(&metrics_path))?;
        state.save(&state_path)?;
        on_epoch(&metrics);
    }
    Ok(best_path)
}
