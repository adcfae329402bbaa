//! Recovery with any method over a set of windows, and scoring against
//! ground truth.

use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;

use super::metrics::{compute_metrics, Metrics, Prediction};
use super::TrainError;
use crate::baselines::{itoh_unwrap, mrf_recover, sparse_opt_recover, MrfInit};
use crate::config::{ConfigError, KeyValues};
use crate::data::LabeledWindow;
use crate::graph::{GraphTopology, WindowGraph};
use crate::model::{Mode, UnwrapNet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Itoh,
    Mrf,
    Sparse,
    Model,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "itoh" => Ok(Self::Itoh),
            "mrf" => Ok(Self::Mrf),
            "sparse" => Ok(Self::Sparse),
            "model" => Ok(Self::Model),
            other => Err(format!(
                "unknown method `{other}` (expected itoh, mrf, sparse or model)"
            )),
        }
    }
}

/// Iteration budgets and class range for the classical methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOptions {
    pub mrf_max_iters: usize,
    pub mrf_init: MrfInit,
    pub sparse_rounds: usize,
    pub z_max: i32,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            mrf_max_iters: 100,
            mrf_init: MrfInit::Itoh,
            sparse_rounds: 100,
            z_max: 8,
        }
    }
}

impl BaselineOptions {
    /// Applies `baseline.*` entries.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<(), ConfigError> {
        for entry in kv.with_prefix("baseline.") {
            match &entry.key["baseline.".len()..] {
                "mrf_max_iters" => self.mrf_max_iters = entry.parse()?,
                "mrf_init" => self.mrf_init = entry.parse()?,
                "sparse_rounds" => self.sparse_rounds = entry.parse()?,
                "z_max" => self.z_max = entry.parse()?,
                _ => return Err(entry.unknown()),
            }
        }
        Ok(())
    }
}

/// One window's reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery<T> {
    pub x_hat: Array2<T>,
    pub z_hat: Array2<i32>,
}

/// Maps `f` over `items` on up to `threads` scoped threads, keeping order.
pub fn parallel_map<I: Sync, O: Send>(items: &[I], threads: usize, f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Vec<O>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn window_graph<T: Scalar>(w: &LabeledWindow<T>, topology: &Arc<GraphTopology>) -> Result<WindowGraph<T>, TrainError> {
    Ok(WindowGraph::with_topology(w.observation()?, topology.clone())?)
}

/// Runs a classical method on every window.
pub fn recover_baseline<T: Scalar>(
    windows: &[&LabeledWindow<T>],
    topology: &Arc<GraphTopology>,
    method: Method,
    opts: BaselineOptions,
    threads: usize,
) -> Result<Vec<Recovery<T>>, TrainError> {
    parallel_map(windows, threads, |w| {
        let folded = w.observation()?;
        let r = match method {
            Method::Itoh => itoh_unwrap(folded)?,
            Method::Mrf => mrf_recover(
                folded,
                &window_graph(w, topology)?,
                opts.mrf_max_iters,
                opts.mrf_init,
                opts.z_max,
            )?,
            Method::Sparse => sparse_opt_recover(folded, &window_graph(w, topology)?, opts.sparse_rounds, opts.z_max)?,
            Method::Model => return Err(TrainError::BadConfig("the model method needs a trained network".into())),
        };
        Ok(Recovery {
            x_hat: r.x_hat,
            z_hat: r.z_hat,
        })
    })
    .into_iter()
    .collect()
}

/// Eval-mode network predictions: expectation reconstruction and argmax
/// fold counts.
pub fn recover_model<T: Scalar>(
    net: &UnwrapNet<T>,
    windows: &[&LabeledWindow<T>],
    topology: &Arc<GraphTopology>,
    threads: usize,
) -> Result<Vec<Recovery<T>>, TrainError> {
    parallel_map(windows, threads, |w| {
        let folded = w.observation()?;
        let out = net.forward(&window_graph(w, topology)?, folded.lambda(), Mode::Eval)?;
        Ok(Recovery {
            z_hat: out.predicted_z(),
            x_hat: out.x_hat,
        })
    })
    .into_iter()
    .collect()
}

/// Scores reconstructions against the windows' ground truth.
pub fn score<T: Scalar>(windows: &[&LabeledWindow<T>], recoveries: &[Recovery<T>]) -> Result<Metrics, TrainError> {
    if windows.len() != recoveries.len() {
        return Err(TrainError::BadConfig(format!(
            "{} windows but {} reconstructions",
            windows.len(),
            recoveries.len()
        )));
    }
    let mut preds = Vec::with_capacity(windows.len());
    for (w, r) in windows.iter().zip(recoveries) {
        let folded = w.observation()?;
        let z_true = w.z()?;
        if r.x_hat.dim() != w.x.dim() || r.z_hat.dim() != w.x.dim() {
            return Err(TrainError::BadConfig(format!(
                "reconstruction of window {} ({}) has shape {:?}, expected {:?}",
                w.window_index,
                w.subject_id,
                r.x_hat.dim(),
                w.x.dim()
            )));
        }
        preds.push(Prediction {
            subject_id: &w.subject_id,
            window_index: w.window_index,
            x_true: &w.x,
            z_true,
            x_hat: &r.x_hat,
            z_hat: &r.z_hat,
            lambda: folded.lambda(),
        });
    }
    Ok(compute_metrics(&preds))
}

/// Eval-mode metrics of a network on the given windows.
pub fn evaluate<T: Scalar>(
    net: &UnwrapNet<T>,
    windows: &[&LabeledWindow<T>],
    topology: &Arc<GraphTopology>,
    threads: usize,
) -> Result<Metrics, TrainError> {
    let recs = recover_model(net, windows, topology, threads)?;
    score(windows, &recs)
}
