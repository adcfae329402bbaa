//! Mini-batch training with Adam and best-on-validation selection.

use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;

use super::eval::{evaluate, parallel_map};
use super::loss::{fold_targets, node_column, record_composite_loss, LossWeights};
use super::{Metrics, SplitPlan, TrainConfig, TrainError};
use crate::autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor};
use crate::data::{Dataset, LabeledWindow};
use crate::graph::{build_topology, node_features, GraphTopology, Montage};
use crate::model::{Mode, UnwrapNet};
use crate::rng::{derive_seed, seeded};
use crate::scalar::Scalar;
use crate::signal::coarse_labels;

pub(crate) const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

/// Everything the objective needs from one window, computed once.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    pub features: Array2<T>,
    /// `N×1` in node order.
    pub x: Tensor<T>,
    pub fold: Vec<usize>,
    pub coarse: Vec<usize>,
    pub lambda: T,
    /// Fold counts outside `±z_max`.
    pub clipped: usize,
}

impl<T: Scalar> Prepared<T> {
    pub fn new(window: &LabeledWindow<T>, config: &TrainConfig) -> Result<Self, TrainError> {
        let folded = window.observation()?;
        let (fold, clipped) = fold_targets(window.z()?, &config.model);
        let coarse = coarse_labels(folded, config.coarse_delta)?
            .labels
            .iter()
            .map(|&l| l as usize)
            .collect();
        Ok(Self {
            features: node_features(folded)?,
            x: node_column(&window.x),
            fold,
            coarse,
            lambda: folded.lambda(),
            clipped,
        })
    }
}

/// Loss of one window and, unless `grad_scale` is `None`, its gradients
/// scaled by `grad_scale` in a fresh store.
fn window_step<T: Scalar>(
    net: &UnwrapNet<T>,
    prep: &Prepared<T>,
    topology: &GraphTopology,
    w: LossWeights,
    mode: Mode,
    grad_scale: Option<T>,
) -> Result<(T, Option<ParamStore<T>>), TrainError> {
    let mut tape = Tape::new();
    let vars = net.record_forward(&mut tape, &prep.features, topology, prep.lambda, mode)?;
    let x = tape.constant(prep.x.clone())?;
    let loss = record_composite_loss(&mut tape, &vars, &prep.fold, &prep.coarse, x, w)?;
    let value = tape.value(loss).item();
    let grads = match grad_scale {
        Some(s) => {
            let mut g = net.params().detached_copy();
            tape.backward_with_seed(loss, s, &mut g)?;
            Some(g)
        }
        None => None,
    };
    Ok((value, grads))
}

/// Mean objective over `windows` in eval mode.
pub fn mean_objective<T: Scalar>(
    net: &UnwrapNet<T>,
    windows: &[Prepared<T>],
    topology: &GraphTopology,
    config: &TrainConfig,
    threads: usize,
) -> Result<f64, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::EmptySplit("objective"));
    }
    let w = LossWeights::from(config);
    let losses = parallel_map(windows, threads, |p| {
        window_step(net, p, topology, w, Mode::Eval, None).map(|(l, _)| l.as_f64())
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / windows.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's windows.
    pub train_loss: f64,
    pub val: Option<Metrics>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch\ttrain_loss\tval_accuracy\tval_l1\tval_mse\tval_r";

impl History {
    /// One tab-separated row per epoch; missing values are written as `nan`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let (acc, l1, mse, r) = match &e.val {
                Some(m) => (m.accuracy, m.l1, m.mse, m.r.unwrap_or(f64::NAN)),
                None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
            };
            writeln!(
                out,
                "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}",
                e.epoch, e.train_loss, acc, l1, mse, r
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters with the best validation MSE, or the final ones when
    /// there is no validation set.
    pub net: UnwrapNet<T>,
    pub history: History,
    /// 1-based; 0 means no epoch ran.
    pub best_epoch: usize,
    pub clipped_targets: usize,
    pub topology: Arc<GraphTopology>,
}

/// Topology shared by every window of a dataset: default montage for its
/// channel count, `k` spatial neighbours.
pub fn dataset_topology<T: Scalar>(dataset: &Dataset<T>, k: usize) -> Result<Arc<GraphTopology>, TrainError> {
    let montage = Montage::<T>::for_channels(dataset.channels)?;
    Ok(build_topology(dataset.t_len, &montage, k)?)
}

fn check_lambda<T: Scalar>(dataset: &Dataset<T>, config: &TrainConfig) -> Result<(), TrainError> {
    let lambda = dataset.lambda()?.as_f64();
    // f32 datasets carry a rounded copy of the configured value.
    let tol = 1e-6 * config.lambda.abs();
    if (lambda - config.lambda).abs() > tol {
        return Err(TrainError::LambdaMismatch {
            dataset: lambda,
            config: config.lambda,
        });
    }
    Ok(())
}

/// Trains on the plan's training subjects (minus `held_out` fold) and
/// selects on its validation subjects.
pub fn train<T: Scalar>(
    dataset: &Dataset<T>,
    plan: &SplitPlan,
    held_out: Option<usize>,
    config: &TrainConfig,
    threads: usize,
) -> Result<TrainOutcome<T>, TrainError> {
    let train_ids = plan.train_subjects(held_out)?;
    let train_windows = dataset.windows_of(&train_ids);
    let val_windows = dataset.windows_of(&plan.val);
    train_windows_on(dataset, &train_windows, &val_windows, config, threads)
}

/// Trains on explicit window lists drawn from `dataset`.
pub fn train_windows_on<T: Scalar>(
    dataset: &Dataset<T>,
    train_windows: &[&LabeledWindow<T>],
    val_windows: &[&LabeledWindow<T>],
    config: &TrainConfig,
    threads: usize,
) -> Result<TrainOutcome<T>, TrainError> {
    config.validate().map_err(TrainError::BadConfig)?;
    check_lambda(dataset, config)?;
    let topology = dataset_topology(dataset, config.k)?;
    let net = UnwrapNet::init(config.model.clone(), derive_seed(config.seed, INIT_STREAM))?;
    fit(net, topology, train_windows, val_windows, config, threads)
}

/// Runs the optimization loop from a given network.
pub fn fit<T: Scalar>(
    mut net: UnwrapNet<T>,
    topology: Arc<GraphTopology>,
    train_windows: &[&LabeledWindow<T>],
    val_windows: &[&LabeledWindow<T>],
    config: &TrainConfig,
    threads: usize,
) -> Result<TrainOutcome<T>, TrainError> {
    config.validate().map_err(TrainError::BadConfig)?;
    if train_windows.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if net.config() != &config.model {
        return Err(TrainError::BadConfig(
            "network and training configs disagree on the model".into(),
        ));
    }
    let prepared: Vec<Prepared<T>> = parallel_map(train_windows, threads, |w| Prepared::new(w, config))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let clipped_targets = prepared.iter().map(|p| p.clipped).sum();
    if clipped_targets > 0 {
        log::warn!(
            "{clipped_targets} training fold counts fall outside ±{} and were clipped",
            config.model.z_max
        );
    }

    let weights = LossWeights::from(config);
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, usize, ParamStore<T>)> = None;

    for epoch in 1..=config.epochs {
        let epoch_seed = derive_seed(config.seed, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut seeded(derive_seed(epoch_seed, SHUFFLE_STREAM)));
        let dropout_base = derive_seed(epoch_seed, DROPOUT_STREAM);

        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let scale = T::one() / T::lit(batch.len() as f64);
            let jobs: Vec<(usize, u64)> = batch
                .iter()
                .enumerate()
                .map(|(j, &i)| (i, derive_seed(dropout_base, (b * config.batch_size + j) as u64)))
                .collect();
            let results = parallel_map(&jobs, threads, |&(i, seed)| {
                window_step(
                    &net,
                    &prepared[i],
                    &topology,
                    weights,
                    Mode::Train { seed },
                    Some(scale),
                )
            });
            // Summed in batch order so the result does not depend on the
            // thread count.
            let params = net.params_mut();
            params.zero_grads();
            for r in results {
                let (loss, grads) = r?;
                loss_sum += loss.as_f64();
                params.add_grads_from(&grads.expect("gradients requested"))?;
            }
            adam.step(params)?;
        }
        let train_loss = loss_sum / prepared.len() as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }

        let val = if val_windows.is_empty() {
            None
        } else {
            Some(evaluate(&net, val_windows, &topology, threads)?)
        };
        if let Some(m) = &val {
            if best.as_ref().is_none_or(|(mse, _, _)| m.mse < *mse) {
                best = Some((m.mse, epoch, net.params().detached_copy()));
            }
        }
        log::info!(
            "epoch {epoch}: train loss {train_loss:.6}{}",
            val.as_ref()
                .map(|m| format!(", val mse {:.6}", m.mse))
                .unwrap_or_default()
        );
        history.epochs.push(EpochRecord { epoch, train_loss, val });
    }

    let best_epoch = match best {
        Some((_, epoch, params)) => {
            net = UnwrapNet::from_store(config.model.clone(), params)?;
            epoch
        }
        None => config.epochs,
    };
    let mut params = net.into_params();
    params.zero_grads();
    Ok(TrainOutcome {
        net: UnwrapNet::from_store(config.model.clone(), params)?,
        history,
        best_epoch,
        clipped_targets,
        topology,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::model::ModelConfig;

    fn tiny_dataset() -> Dataset<f64> {
        let cfg = SynthConfig {
            num_subjects: 3,
            duration_s: 1.0,
            channels: 3,
            ..SynthConfig::default()
        };
        Dataset::from_recordings(&synth_generate(&cfg).unwrap(), 16)
            .unwrap()
            .fold(0.5)
            .unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 3,
            k: 1,
            model: ModelConfig {
                hidden_dim: 8,
                num_layers: 1,
                num_heads: 2,
                pre_hidden: 4,
                z_max: 3,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn split(ds: &Dataset<f64>) -> SplitPlan {
        SplitPlan::fixed(&ds.subjects(), 1, 1, 1).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            lr: 0.0,
            ..tiny_config()
        };
        let init = UnwrapNet::<f64>::init(cfg.model.clone(), derive_seed(cfg.seed, INIT_STREAM)).unwrap();
        let out = train(&ds, &split(&ds), None, &cfg, 2).unwrap();
        assert!(out.net.params().same_values(init.params()));
        assert_eq!(out.history.epochs.len(), 2);
    }

    #[test]
    fn same_seed_same_history_any_thread_count() {
        let ds = tiny_dataset();
        let cfg = tiny_config();
        let a = train(&ds, &split(&ds), None, &cfg, 1).unwrap();
        let b = train(&ds, &split(&ds), None, &cfg, 3).unwrap();
        assert_eq!(a.history.to_tsv(), b.history.to_tsv());
        assert!(a.net.params().same_values(b.net.params()));
        let c = train(&ds, &split(&ds), None, &TrainConfig { seed: 5, ..cfg }, 1).unwrap();
        assert_ne!(a.history.to_tsv(), c.history.to_tsv());
    }

    #[test]
    fn history_format() {
        let ds = tiny_dataset();
        let out = train(&ds, &split(&ds), None, &tiny_config(), 1).unwrap();
        let tsv = out.history.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], HISTORY_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1\t"));
        assert_eq!(lines[1].split('\t').count(), 6);
        assert!((1..=2).contains(&out.best_epoch));
    }

    #[test]
    fn rejects_mismatched_lambda_and_empty_split() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            lambda: 0.6,
            ..tiny_config()
        };
        assert!(matches!(
            train(&ds, &split(&ds), None, &cfg, 1),
            Err(TrainError::LambdaMismatch { .. })
        ));
        assert!(matches!(
            train_windows_on(&ds, &[], &[], &tiny_config(), 1),
            Err(TrainError::EmptySplit(_))
        ));
    }
}
