use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::ModelError;
use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::graph::NODE_FEATURES;
use crate::rng::seeded;
use crate::scalar::Scalar;
use crate::signal::CoarseState;

#[derive(Debug, Clone)]
pub(crate) struct LayerIds {
    pub query_w: ParamId,
    pub query_b: ParamId,
    pub key_w: ParamId,
    pub key_b: ParamId,
    pub value_w: ParamId,
    pub value_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub norm_gamma: ParamId,
    pub norm_beta: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct NetIds {
    pub input_proj: ParamId,
    pub pgfi_proj: ParamId,
    pub state_embed: ParamId,
    pub pre_w1: ParamId,
    pub pre_b1: ParamId,
    pub pre_w2: ParamId,
    pub pre_b2: ParamId,
    pub layers: Vec<LayerIds>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// Shapes of every parameter, in registration order.
fn layout(config: &ModelConfig) -> Vec<(String, [usize; 2], Init)> {
    let d = config.hidden_dim;
    let ph = config.pre_hidden;
    let k = config.num_classes();
    let states = CoarseState::ALL.len();
    let mut out = vec![
        ("input.w0".to_string(), [d, NODE_FEATURES], Init::Xavier),
        ("pgfi.w".to_string(), [d, NODE_FEATURES], Init::Xavier),
        ("pgfi.embed".to_string(), [states, d], Init::Embedding),
        ("pre.fc1.w".to_string(), [ph, NODE_FEATURES], Init::Xavier),
        ("pre.fc1.b".to_string(), [1, ph], Init::Zeros),
        ("pre.fc2.w".to_string(), [states, ph], Init::Xavier),
        ("pre.fc2.b".to_string(), [1, states], Init::Zeros),
    ];
    for l in 0..config.num_layers {
        for proj in ["query", "key", "value", "out"] {
            out.push((format!("layers.{l}.{proj}.w"), [d, d], Init::Xavier));
            out.push((format!("layers.{l}.{proj}.b"), [1, d], Init::Zeros));
        }
        out.push((format!("layers.{l}.norm.gamma"), [1, d], Init::Ones));
        out.push((format!("layers.{l}.norm.beta"), [1, d], Init::Zeros));
    }
    out.push(("head.w".to_string(), [k, d], Init::Xavier));
    out.push(("head.b".to_string(), [1, k], Init::Zeros));
    out
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Xavier,
    Embedding,
    Zeros,
    Ones,
}

/// Parameters of the graph unwrapping network together with its
/// architecture.
///
/// Every parameter is allocated regardless of `pgfi_enabled` and initialized
/// in a fixed order, so two networks built from the same seed are identical
/// whether or not injection is switched on.
#[derive(Debug, Clone)]
pub struct UnwrapNet<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    pub(crate) ids: NetIds,
}

impl<T: Scalar> UnwrapNet<T> {
    /// Xavier-uniform projections, `N(0, 0.02)` state embeddings, zero
    /// biases and unit layer-norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::BadConfig)?;
        let mut rng = seeded(seed);
        let embed = Normal::new(0.0, 0.02).expect("valid normal");
        let mut params = ParamStore::new();
        for (name, [rows, cols], init) in layout(&config) {
            let data: Vec<T> = match init {
                Init::Xavier => {
                    let a = (6.0 / (rows + cols) as f64).sqrt();
                    (0..rows * cols).map(|_| T::lit(rng.gen_range(-a..a))).collect()
                }
                Init::Embedding => (0..rows * cols).map(|_| T::lit(embed.sample(&mut rng))).collect(),
                Init::Zeros => vec![T::zero(); rows * cols],
                Init::Ones => vec![T::one(); rows * cols],
            };
            params.insert(name, Tensor::matrix(rows, cols, data)?)?;
        }
        Self::from_store(config, params)
    }

    /// Adopts a parameter store, checking names and shapes against `config`.
    pub fn from_store(config: ModelConfig, params: ParamStore<T>) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::BadConfig)?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(ModelError::ConfigMismatch(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &expected {
            let id = params
                .id(name)
                .map_err(|_| ModelError::ConfigMismatch(format!("missing parameter `{name}`")))?;
            if params.value(id).shape() != shape {
                return Err(ModelError::ConfigMismatch(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    params.value(id).shape(),
                    shape
                )));
            }
        }
        let id = |n: &str| params.id(n).expect("checked above");
        let layers = (0..config.num_layers)
            .map(|l| LayerIds {
                query_w: id(&format!("layers.{l}.query.w")),
                query_b: id(&format!("layers.{l}.query.b")),
                key_w: id(&format!("layers.{l}.key.w")),
                key_b: id(&format!("layers.{l}.key.b")),
                value_w: id(&format!("layers.{l}.value.w")),
                value_b: id(&format!("layers.{l}.value.b")),
                out_w: id(&format!("layers.{l}.out.w")),
                out_b: id(&format!("layers.{l}.out.b")),
                norm_gamma: id(&format!("layers.{l}.norm.gamma")),
                norm_beta: id(&format!("layers.{l}.norm.beta")),
            })
            .collect();
        let ids = NetIds {
            input_proj: id("input.w0"),
            pgfi_proj: id("pgfi.w"),
            state_embed: id("pgfi.embed"),
            pre_w1: id("pre.fc1.w"),
            pre_b1: id("pre.fc1.b"),
            pre_w2: id("pre.fc2.w"),
            pre_b2: id("pre.fc2.b"),
            layers,
            head_w: id("head.w"),
            head_b: id("head.b"),
        };
        Ok(Self { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Switches feature injection on or off without touching parameters.
    pub fn set_pgfi(&mut self, enabled: bool) {
        self.config.pgfi_enabled = enabled;
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// Whether a parameter belongs to the injection path (pre-estimator,
    /// injection projection or state embedding).
    pub fn is_pgfi_param(name: &str) -> bool {
        name.starts_with("pre.") || name.starts_with("pgfi.")
    }
}
