//! Finite-difference check of the analytic gradients of the training
//! objective with respect to every network parameter.

use super::loss::{fold_targets, node_column, record_composite_loss, LossWeights};
use super::TrainError;
use crate::autodiff::Tape;
use crate::data::{synth_generate, Dataset, SynthConfig};
use crate::graph::{build_topology, node_features, Montage};
use crate::model::{Mode, ModelConfig, UnwrapNet};
use crate::signal::{coarse_labels, FoldedWindow, DEFAULT_BOUNDARY_MARGIN};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    pub t_len: usize,
    pub channels: usize,
    pub k: usize,
    pub lambda: f64,
    /// Central-difference step.
    pub eps: f64,
    /// Lower bound on the relative-error denominator, so that entries whose
    /// gradient is essentially zero are judged on absolute error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                hidden_dim: 8,
                num_layers: 1,
                num_heads: 2,
                z_max: 2,
                dropout_rate: 0.0,
                ..ModelConfig::default()
            },
            t_len: 6,
            channels: 3,
            k: 1,
            lambda: 0.5,
            eps: 1e-4,
            floor: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn sample_window(cfg: &GradcheckConfig) -> Result<(FoldedWindow<f64>, ndarray::Array2<f64>), TrainError> {
    let synth = SynthConfig {
        num_subjects: 1,
        channels: cfg.channels,
        duration_s: 1.0,
        seed: cfg.seed,
        ..SynthConfig::default()
    };
    let ds = Dataset::from_recordings(&synth_generate(&synth)?, cfg.t_len)?.fold(cfg.lambda)?;
    let w = ds
        .windows
        .into_iter()
        .next()
        .ok_or(TrainError::EmptySplit("gradcheck"))?;
    let folded = w.folded.ok_or(TrainError::EmptySplit("gradcheck"))?;
    Ok((folded, w.x))
}

/// Compares back-propagated gradients of the composite objective (all
/// terms weighted 1, pre-estimator term 0.5) with central differences.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport, TrainError> {
    let (folded, x) = sample_window(cfg)?;
    let montage = Montage::<f64>::linear(cfg.channels)?;
    let topology = build_topology(cfg.t_len, &montage, cfg.k)?;
    let features = node_features(&folded)?;
    let (fold, _) = fold_targets(folded.z().expect("folded with counts"), &cfg.model);
    let coarse: Vec<usize> = coarse_labels(&folded, DEFAULT_BOUNDARY_MARGIN)?
        .labels
        .iter()
        .map(|&l| l as usize)
        .collect();
    let x_col = node_column(&x);
    let w = LossWeights {
        alpha: 1.0,
        beta: 1.0,
        gamma: 1.0,
        pre: 0.5,
    };

    let objective = |net: &mut UnwrapNet<f64>, grads: bool| -> Result<f64, TrainError> {
        let mut tape = Tape::new();
        let vars = net.record_forward(&mut tape, &features, &topology, cfg.lambda, Mode::Eval)?;
        let xv = tape.constant(x_col.clone())?;
        let loss = record_composite_loss(&mut tape, &vars, &fold, &coarse, xv, w)?;
        if grads {
            net.params_mut().zero_grads();
            tape.backward(loss, net.params_mut())?;
        }
        Ok(tape.value(loss).item())
    };

    let mut net = UnwrapNet::<f64>::init(cfg.model.clone(), cfg.seed)?;
    objective(&mut net, true)?;
    let analytic: Vec<Vec<f64>> = net
        .params()
        .ids()
        .map(|id| net.params().grad(id).data().to_vec())
        .collect();
    let ids: Vec<_> = net.params().ids().collect();

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (String::new(), 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (pi, &id) in ids.iter().enumerate() {
        for (j, &a) in analytic[pi].iter().enumerate() {
            let orig = net.params().value(id).data()[j];
            net.params_mut().value_mut(id).data_mut()[j] = orig + cfg.eps;
            let plus = objective(&mut net, false)?;
            net.params_mut().value_mut(id).data_mut()[j] = orig - cfg.eps;
            let minus = objective(&mut net, false)?;
            net.params_mut().value_mut(id).data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(cfg.floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (net.params().name(id).to_string(), j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_model_gradients_agree() {
        let r = gradcheck(&GradcheckConfig::default()).unwrap();
        assert!(r.checked > 500, "{}", r.checked);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
