use ndarray::Array2;

use super::net::{LayerIds, UnwrapNet};
use super::{argmax_rows, predict_fold_class, ModelError};
use crate::autodiff::{Tape, Tensor, Var};
use crate::graph::{GraphTopology, WindowGraph, NODE_FEATURES};
use crate::rng::{seeded, Rng64};
use crate::scalar::Scalar;

/// Dropout is active only in training mode; the seed fixes its masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Tape handles produced by one forward pass. Node-level quantities are
/// `N×1` columns in node order.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub fold_logits: Var,
    /// Absent when feature injection is disabled.
    pub pre_logits: Option<Var>,
    pub expected_z: Var,
    pub x_hat: Var,
    /// Per layer, `M×H` weights aligned with the topology's message index.
    pub attention: Vec<Var>,
}

/// Values of one forward pass.
#[derive(Debug, Clone)]
pub struct ModelOutput<T> {
    /// `N×K_z`.
    pub fold_logits: Array2<T>,
    /// `N×3`, absent when feature injection is disabled.
    pub pre_logits: Option<Array2<T>>,
    /// `T×C` for windowed graphs, `N×1` otherwise.
    pub expected_z: Array2<T>,
    /// Same shape as `expected_z`.
    pub x_hat: Array2<T>,
    z_max: i32,
}

impl<T: Scalar> ModelOutput<T> {
    /// Argmax fold counts in the shape of `x_hat`.
    pub fn predicted_z(&self) -> Array2<i32> {
        let z = predict_fold_class(&self.fold_logits, self.z_max);
        Array2::from_shape_vec(self.x_hat.raw_dim(), z).expect("one class per node")
    }
}

fn node_shape(topology: &GraphTopology) -> (usize, usize) {
    topology.shape().unwrap_or((topology.num_nodes(), 1))
}

impl<T: Scalar> UnwrapNet<T> {
    /// Records the pre-estimator MLP on `features`, returning `N×3` logits.
    fn record_pre(&self, tape: &mut Tape<T>, f: Var) -> Result<Var, ModelError> {
        let p = self.params();
        let ids = &self.ids;
        let (w1, b1) = (tape.param(p, ids.pre_w1), tape.param(p, ids.pre_b1));
        let (w2, b2) = (tape.param(p, ids.pre_w2), tape.param(p, ids.pre_b2));
        let h = tape.linear(f, w1)?;
        let h = tape.add_bias(h, b1)?;
        let h = tape.relu(h)?;
        let out = tape.linear(h, w2)?;
        Ok(tape.add_bias(out, b2)?)
    }

    /// `x̃ = W·f + E[s]` with `s` the argmax of the pre-estimator logits.
    /// The argmax is a constant index, so no gradient reaches the
    /// pre-estimator through this path.
    fn record_injection(&self, tape: &mut Tape<T>, f: Var, pre_logits: Var) -> Result<Var, ModelError> {
        let states: Vec<usize> = argmax_rows(&tape.value(pre_logits).to_array());
        let w = tape.param(self.params(), self.ids.pgfi_proj);
        let e = tape.param(self.params(), self.ids.state_embed);
        let proj = tape.linear(f, w)?;
        let emb = tape.gather_rows(e, states.into())?;
        Ok(tape.add(proj, emb)?)
    }

    fn record_layer(
        &self,
        tape: &mut Tape<T>,
        h: Var,
        layer: &LayerIds,
        topology: &GraphTopology,
        rng: Option<&mut Rng64>,
    ) -> Result<(Var, Var), ModelError> {
        let p = self.params();
        let heads = self.config().num_heads;
        let n = topology.num_nodes();
        let msg = topology.messages();
        let project = |tape: &mut Tape<T>, w, b| -> Result<Var, ModelError> {
            let w = tape.param(p, w);
            let b = tape.param(p, b);
            let y = tape.linear(h, w)?;
            Ok(tape.add_bias(y, b)?)
        };
        let q = project(tape, layer.query_w, layer.query_b)?;
        let k = project(tape, layer.key_w, layer.key_b)?;
        let v = project(tape, layer.value_w, layer.value_b)?;

        let q_dst = tape.gather_rows(q, msg.dst.clone())?;
        let k_src = tape.gather_rows(k, msg.src.clone())?;
        let scale = T::one() / T::lit(self.config().head_dim() as f64).sqrt();
        let scores = tape.head_dot(q_dst, k_src, heads, scale)?;
        let attention = tape.segment_softmax(scores, msg.offsets.clone())?;
        let v_src = tape.gather_rows(v, msg.src.clone())?;
        let weighted = tape.head_scale(v_src, attention, heads)?;
        let agg = tape.scatter_add_rows(weighted, msg.dst.clone(), n)?;

        let wo = tape.param(p, layer.out_w);
        let bo = tape.param(p, layer.out_b);
        let out = tape.linear(agg, wo)?;
        let out = tape.add_bias(out, bo)?;
        let res = tape.add(h, out)?;
        let gamma = tape.param(p, layer.norm_gamma);
        let beta = tape.param(p, layer.norm_beta);
        let normed = tape.layer_norm_rows(res, gamma, beta)?;
        let mut act = tape.relu(normed)?;
        if let Some(rng) = rng {
            act = tape.dropout(act, self.config().dropout_rate, rng)?;
        }
        Ok((act, attention))
    }

    /// Records a full forward pass over a graph with the given node
    /// features (`[p, Δp, t/T, i/C]` per row).
    pub fn record_forward(
        &self,
        tape: &mut Tape<T>,
        features: &Array2<T>,
        topology: &GraphTopology,
        lambda: T,
        mode: Mode,
    ) -> Result<ForwardVars, ModelError> {
        if features.ncols() != NODE_FEATURES {
            return Err(ModelError::BadFeatures(features.ncols()));
        }
        if features.nrows() != topology.num_nodes() {
            return Err(ModelError::ConfigMismatch(format!(
                "{} feature rows for {} graph nodes",
                features.nrows(),
                topology.num_nodes()
            )));
        }
        let cfg = self.config();
        let f = tape.constant(Tensor::from_array(features))?;

        let (mut h, pre_logits) = if cfg.pgfi_enabled {
            let pre = self.record_pre(tape, f)?;
            (self.record_injection(tape, f, pre)?, Some(pre))
        } else {
            let w0 = tape.param(self.params(), self.ids.input_proj);
            (tape.linear(f, w0)?, None)
        };

        let mut rng = match mode {
            Mode::Train { seed } if cfg.dropout_rate > 0.0 => Some(seeded(seed)),
            _ => None,
        };
        let mut attention = Vec::with_capacity(self.ids.layers.len());
        for layer in &self.ids.layers {
            let (next, att) = self.record_layer(tape, h, layer, topology, rng.as_mut())?;
            h = next;
            attention.push(att);
        }

        let wz = tape.param(self.params(), self.ids.head_w);
        let bz = tape.param(self.params(), self.ids.head_b);
        let logits = tape.linear(h, wz)?;
        let fold_logits = tape.add_bias(logits, bz)?;

        let k = cfg.num_classes();
        let values = Tensor::from_fn(k, 1, |c, _| T::lit(cfg.class_value(c) as f64));
        let values = tape.constant(values)?;
        let probs = tape.softmax_rows(fold_logits)?;
        let expected_z = tape.matmul(probs, values)?;
        let p_col = Tensor::from_fn(features.nrows(), 1, |r, _| features[[r, 0]]);
        let p_col = tape.constant(p_col)?;
        let scaled = tape.scale(expected_z, lambda)?;
        let x_hat = tape.add(scaled, p_col)?;

        Ok(ForwardVars {
            fold_logits,
            pre_logits,
            expected_z,
            x_hat,
            attention,
        })
    }

    /// Runs the network on one window graph.
    pub fn forward(&self, graph: &WindowGraph<T>, lambda: T, mode: Mode) -> Result<ModelOutput<T>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.record_forward(&mut tape, graph.features(), graph.topology(), lambda, mode)?;
        Ok(self.collect(&tape, &vars, graph.topology()))
    }

    pub(crate) fn collect(&self, tape: &Tape<T>, vars: &ForwardVars, topology: &GraphTopology) -> ModelOutput<T> {
        let shape = node_shape(topology);
        let reshape =
            |v: Var| Array2::from_shape_vec(shape, tape.value(v).data().to_vec()).expect("one value per node");
        ModelOutput {
            fold_logits: tape.value(vars.fold_logits).to_array(),
            pre_logits: vars.pre_logits.map(|v| tape.value(v).to_array()),
            expected_z: reshape(vars.expected_z),
            x_hat: reshape(vars.x_hat),
            z_max: self.config().z_max,
        }
    }

    /// Pre-estimator logits (`N×3`) for a feature matrix.
    pub fn pre_estimate(&self, features: &Array2<T>) -> Result<Array2<T>, ModelError> {
        if features.ncols() != NODE_FEATURES {
            return Err(ModelError::BadFeatures(features.ncols()));
        }
        let mut tape = Tape::new();
        let f = tape.constant(Tensor::from_array(features))?;
        let pre = self.record_pre(&mut tape, f)?;
        Ok(tape.value(pre).to_array())
    }

    /// Injected input features `x̃` (`N×d`) given pre-estimator logits.
    pub fn pgfi_inject(&self, features: &Array2<T>, pre_logits: &Array2<T>) -> Result<Array2<T>, ModelError> {
        if features.ncols() != NODE_FEATURES {
            return Err(ModelError::BadFeatures(features.ncols()));
        }
        let mut tape = Tape::new();
        let f = tape.constant(Tensor::from_array(features))?;
        let pre = tape.constant(Tensor::from_array(pre_logits))?;
        let out = self.record_injection(&mut tape, f, pre)?;
        Ok(tape.value(out).to_array())
    }

    /// Eval-mode attention weights of every layer, `M×H` in message order.
    pub fn attention_weights(&self, graph: &WindowGraph<T>, lambda: T) -> Result<Vec<Array2<T>>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.record_forward(&mut tape, graph.features(), graph.topology(), lambda, Mode::Eval)?;
        Ok(vars.attention.iter().map(|&v| tape.value(v).to_array()).collect())
    }
}
