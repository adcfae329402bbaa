use crate::config::{ConfigError, KeyValues};
use crate::graph::DEFAULT_K;
use crate::model::ModelConfig;
use crate::signal::DEFAULT_BOUNDARY_MARGIN;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Fold-class cross-entropy weight.
    pub alpha: f64,
    /// L1 reconstruction weight.
    pub beta: f64,
    /// MSE reconstruction weight.
    pub gamma: f64,
    /// Weight of the pre-estimator's coarse-state cross-entropy.
    pub pre_loss_weight: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lambda: f64,
    /// Spatial neighbours per channel.
    pub k: usize,
    /// Boundary margin for the coarse-state labels.
    pub coarse_delta: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            pre_loss_weight: 0.5,
            lr: 1e-3,
            weight_decay: 5e-4,
            batch_size: 16,
            epochs: 100,
            seed: 0,
            lambda: 0.5,
            k: DEFAULT_K,
            coarse_delta: DEFAULT_BOUNDARY_MARGIN,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        let weights = [self.alpha, self.beta, self.gamma, self.pre_loss_weight];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err("loss weights must be nonnegative".into());
        }
        if self.alpha + self.beta + self.gamma <= 0.0 {
            return Err("at least one of alpha, beta, gamma must be positive".into());
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err("lr and weight_decay must be nonnegative".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.k == 0 {
            return Err("k must be positive".into());
        }
        self.model.validate()
    }

    /// Applies `train.*` and `model.*` entries.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<(), ConfigError> {
        for entry in kv.with_prefix("train.") {
            match &entry.key["train.".len()..] {
                "alpha" => self.alpha = entry.parse()?,
                "beta" => self.beta = entry.parse()?,
                "gamma" => self.gamma = entry.parse()?,
                "pre_loss_weight" => self.pre_loss_weight = entry.parse()?,
                "lr" => self.lr = entry.parse()?,
                "weight_decay" => self.weight_decay = entry.parse()?,
                "batch_size" => self.batch_size = entry.parse()?,
                "epochs" => self.epochs = entry.parse()?,
                "seed" => self.seed = entry.parse()?,
                "lambda" => self.lambda = entry.parse()?,
                "k" => self.k = entry.parse()?,
                "coarse_delta" => self.coarse_delta = entry.parse()?,
                _ => return Err(entry.unknown()),
            }
        }
        self.model.apply(kv)
    }

    pub fn to_text(&self) -> String {
        format!(
            "train.alpha = {}\ntrain.beta = {}\ntrain.gamma = {}\ntrain.pre_loss_weight = {}\ntrain.lr = {}\n\
             train.weight_decay = {}\ntrain.batch_size = {}\ntrain.epochs = {}\ntrain.seed = {}\ntrain.lambda = {}\n\
             train.k = {}\ntrain.coarse_delta = {}\n{}",
            self.alpha,
            self.beta,
            self.gamma,
            self.pre_loss_weight,
            self.lr,
            self.weight_decay,
            self.batch_size,
            self.epochs,
            self.seed,
            self.lambda,
            self.k,
            self.coarse_delta,
            self.model.to_text()
        )
    }
}
