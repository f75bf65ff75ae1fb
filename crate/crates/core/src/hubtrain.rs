//! Step one: gradient ascent on the hub embedding.
//!
//! The hub embedding is the only trainable quantity; the case embeddings and
//! the metric head stay frozen. The objective is the mean tuning score, which
//! has the same maximiser as the summed score.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::metric::{Embedding, MetricBackend, PreparedCases};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub steps: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            steps: 10_000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0
            && self.steps >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HubTrainState {
    pub hub_embedding: Embedding,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: usize,
    /// Mean tuning score at every step, starting with the initial embedding.
    pub objective_history: Vec<f64>,
}

impl HubTrainState {
    pub fn new(hub_embedding: Embedding, initial_objective: f64) -> Self {
        let dim = hub_embedding.dim();
        Self {
            hub_embedding,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step: 0,
            objective_history: vec![initial_objective],
        }
    }
}

/// Mean of the reference embeddings, summed left to right in dataset order.
pub fn init_hub_embedding(tune: &Dataset, backend: &dyn MetricBackend) -> Result<Embedding> {
    if tune.is_empty() {
        return Err(Error::Config(
            "cannot initialise a hub from an empty dataset".into(),
        ));
    }
    let dim = backend.info().dim;
    let mut sum = vec![0.0; dim];
    for case in &tune.cases {
        let owned;
        let reference = match &case.reference_embedding {
            Some(e) => e,
            None => {
                owned = backend.embed(&case.reference.ids)?;
                &owned
            }
        };
        reference.expect_dim(dim)?;
        for (acc, v) in sum.iter_mut().zip(reference.as_slice()) {
            *acc += v;
        }
    }
    let n = tune.len() as f64;
    Embedding::new(sum.into_iter().map(|v| v / n).collect())
}

/// One decoupled-weight-decay Adam step that *ascends* along `gradient`.
///
/// With `g = -gradient`:
/// `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g^2`,
/// `theta = theta (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)`.
pub fn adamw_step(
    state: &mut HubTrainState,
    gradient: &Embedding,
    cfg: &OptimizerConfig,
) -> Result<()> {
    gradient.expect_dim(state.hub_embedding.dim())?;
    if let Some(i) = gradient.as_slice().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient component {i} at step {}",
            state.step + 1
        )));
    }
    let t = (state.step + 1) as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;

    let mut theta = std::mem::replace(&mut state.hub_embedding, Embedding::zeros(0)).into_vec();
    for (((p, &grad), m), v) in theta
        .iter_mut()
        .zip(gradient.as_slice())
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        let g = -grad;
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p = *p * decay - cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    state.hub_embedding = Embedding::new(theta)?;
    state.step += 1;
    Ok(())
}

/// Runs `cfg.steps` AdamW steps on the mean tuning score from the
/// mean-of-references initialisation.
pub fn train_hub(
    tune: &Dataset,
    backend: &dyn MetricBackend,
    cfg: &OptimizerConfig,
) -> Result<HubTrainState> {
    cfg.validate()?;
    if !backend.info().supports_gradient {
        return Err(Error::GradientUnsupported {
            backend: backend.info().name.clone(),
        });
    }
    if tune.is_empty() {
        return Err(Error::Config("tuning set is empty".into()));
    }
    let prepared = PreparedCases::from_dataset(tune, backend)?;
    let init = init_hub_embedding(tune, backend)?;
    let n = tune.len() as f64;

    let mean_objective = |hub: &Embedding| -> Result<(f64, Embedding)> {
        let (total, grad) = backend.total_score_and_grad(hub, &prepared)?;
        let objective = total / n;
        if !objective.is_finite() {
            return Err(Error::NonFinite(format!("objective {objective}")));
        }
        let grad = grad.into_vec().into_iter().map(|g| g / n).collect();
        Ok((objective, Embedding::new(grad)?))
    };

    let (objective, mut grad) = mean_objective(&init)?;
    let mut state = HubTrainState::new(init, objective);
    for _ in 0..cfg.steps {
        adamw_step(&mut state, &grad, cfg)?;
        let (objective, next_grad) = mean_objective(&state.hub_embedding)?;
        state.objective_history.push(objective);
        grad = next_grad;
        if state.step.is_multiple_of(1000) {
            log::debug!(
                "hub training step {}: mean score {objective:.6}",
                state.step
            );
        }
    }
    Ok(state)
}

/// On-disk form of a trained hub embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubCheckpoint {
    pub dim: usize,
    pub step: usize,
    pub embedding: Vec<f64>,
    pub objective_history: Vec<f64>,
    pub seed: u64,
    pub backend: String,
    #[serde(default)]
    pub config_hash: String,
}

impl HubCheckpoint {
    pub fn from_state(state: &HubTrainState, seed: u64, backend: &str) -> Self {
        Self {
            dim: state.hub_embedding.dim(),
            step: state.step,
            embedding: state.hub_embedding.as_slice().to_vec(),
            objective_history: state.objective_history.clone(),
            seed,
            backend: backend.to_string(),
            config_hash: String::new(),
        }
    }

    pub fn embedding(&self) -> Result<Embedding> {
        let e = Embedding::new(self.embedding.clone())?;
        e.expect_dim(self.dim)?;
        Ok(e)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
