//! Central finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{loss_and_grad, Dropout};
use super::{ModelConfig, ModelParams, Result};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Floor of the relative-error denominator, so entries whose true gradient
/// is zero are judged on absolute error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub n: usize,
    pub max_rel_error: f64,
    /// Flat index (within the tensor) of the worst entry.
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub step: f64,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.tensors
            .iter()
            .filter(|t| !t.passed)
            .map(|t| t.name.as_str())
            .collect()
    }
}

/// The objective whose gradient is checked: mean smoothed cross-entropy of a
/// batch, with a dropout mask stream fixed by `dropout_seed` so repeated
/// evaluations see identical masks.
pub struct Objective<'a> {
    pub patches: &'a [f64],
    pub labels: &'a [usize],
    pub smoothing: f64,
    pub dropout_seed: Option<u64>,
}

impl Objective<'_> {
    fn dropout(&self, params: &ModelParams) -> Option<Dropout> {
        self.dropout_seed
            .map(|s| Dropout::new(params.config.dropout, s))
    }

    pub fn loss_and_grad(&self, params: &ModelParams) -> Result<(f64, Vec<f64>)> {
        let scale = 1.0 / self.labels.len() as f64;
        let mut dr = self.dropout(params);
        let (loss, grad) = loss_and_grad(
            params,
            self.patches,
            self.labels,
            self.smoothing,
            scale,
            dr.as_mut(),
        )?;
        Ok((loss * scale, grad))
    }

    fn loss(&self, params: &ModelParams) -> Result<f64> {
        Ok(self.loss_and_grad(params)?.0)
    }
}

/// Compares `analytic` against central differences of `objective`, tensor by
/// tensor.
pub fn compare_gradients(
    params: &ModelParams,
    objective: &Objective,
    analytic: &[f64],
) -> Result<GradCheckReport> {
    let numeric: Vec<f64> = (0..params.len())
        .into_par_iter()
        .map_init(
            || params.clone(),
            |work, i| -> Result<f64> {
                let orig = work.data[i];
                work.data[i] = orig + FD_STEP;
                let up = objective.loss(work)?;
                work.data[i] = orig - FD_STEP;
                let down = objective.loss(work)?;
                work.data[i] = orig;
                Ok((up - down) / (2.0 * FD_STEP))
            },
        )
        .collect::<Result<_>>()?;
    let tensors = params
        .tensors
        .iter()
        .map(|t| {
            let (mut worst, mut worst_index) = (0.0, 0);
            for (k, i) in t.range().enumerate() {
                let (a, f) = (analytic[i], numeric[i]);
                let rel = (a - f).abs() / a.abs().max(f.abs()).max(REL_FLOOR);
                if rel > worst || rel.is_nan() {
                    worst = if rel.is_nan() { f64::INFINITY } else { rel };
                    worst_index = k;
                }
            }
            TensorCheck {
                name: t.name.clone(),
                n: t.len(),
                max_rel_error: worst,
                worst_index,
                passed: worst < TOLERANCE,
            }
        })
        .collect();
    Ok(GradCheckReport {
        n_params: params.len(),
        step: FD_STEP,
        tolerance: TOLERANCE,
        tensors,
    })
}

/// Checks the model's own backward pass.
pub fn check_backward(params: &ModelParams, objective: &Objective) -> Result<GradCheckReport> {
    let (_, analytic) = objective.loss_and_grad(params)?;
    compare_gradients(params, objective, &analytic)
}

/// Full check on `cfg` (normally [`ModelConfig::tiny`]) with random
/// parameters and a random two-window batch, dropout active.
pub fn grad_check(cfg: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    let params = ModelParams::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, 1));
    let n = 2 * cfg.n_channels * cfg.window_samples();
    let patches: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
    let labels = [0, 1];
    let objective = Objective {
        patches: &patches,
        labels: &labels,
        smoothing: 0.1,
        dropout_seed: Some(seed),
    };
    check_backward(&params, &objective)
}
