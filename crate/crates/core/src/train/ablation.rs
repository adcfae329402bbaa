//! Paired training runs with feature injection on and off.

use std::fmt::Write as _;

use super::eval::evaluate;
use super::trainer::{train, TrainOutcome};
use super::{Metrics, SplitPlan, TrainConfig, TrainError};
use crate::data::Dataset;
use crate::model::UnwrapNet;
use crate::rng::derive_seed;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct AblationArm<T> {
    pub label: &'static str,
    pub outcome: TrainOutcome<T>,
    /// Test-subject metrics of the selected parameters.
    pub test: Metrics,
    /// Checksum of the initial non-injection parameters.
    pub shared_init_checksum: u64,
}

#[derive(Debug, Clone)]
pub struct Ablation<T> {
    pub lambda: f64,
    pub with_pgfi: AblationArm<T>,
    pub without_pgfi: AblationArm<T>,
}

pub const ABLATION_HEADER: &str = "lambda\tmethod\taccuracy\tl1\tmse\tr";

impl<T> Ablation<T> {
    /// Two rows, one per arm.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(ABLATION_HEADER);
        out.push('\n');
        for arm in [&self.with_pgfi, &self.without_pgfi] {
            let m = &arm.test;
            writeln!(
                out,
                "{}\t{}\t{:.4}\t{:.6}\t{:.6}\t{:.6}",
                self.lambda,
                arm.label,
                m.accuracy,
                m.l1,
                m.mse,
                m.r.unwrap_or(f64::NAN)
            )
            .unwrap();
        }
        out
    }
}

fn arm<T: Scalar>(
    dataset: &Dataset<T>,
    plan: &SplitPlan,
    held_out: Option<usize>,
    config: &TrainConfig,
    threads: usize,
    label: &'static str,
) -> Result<AblationArm<T>, TrainError> {
    // Same derivation as the trainer's initialization.
    let init = UnwrapNet::<T>::init(
        config.model.clone(),
        derive_seed(config.seed, super::trainer::INIT_STREAM),
    )?;
    let shared_init_checksum = init.params().checksum_where(|n| !UnwrapNet::<T>::is_pgfi_param(n));
    let outcome = train(dataset, plan, held_out, config, threads)?;
    let test_windows = dataset.windows_of(&plan.test);
    if test_windows.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    let test = evaluate(&outcome.net, &test_windows, &outcome.topology, threads)?;
    Ok(AblationArm {
        label,
        outcome,
        test,
        shared_init_checksum,
    })
}

/// Trains twice with identical seeds and splits, differing only in whether
/// feature injection is enabled, and scores both on the test subjects.
pub fn run_ablation<T: Scalar>(
    dataset: &Dataset<T>,
    plan: &SplitPlan,
    held_out: Option<usize>,
    config: &TrainConfig,
    threads: usize,
) -> Result<Ablation<T>, TrainError> {
    let mut on = config.clone();
    on.model.pgfi_enabled = true;
    let mut off = config.clone();
    off.model.pgfi_enabled = false;
    Ok(Ablation {
        lambda: config.lambda,
        with_pgfi: arm(dataset, plan, held_out, &on, threads, "Proposed")?,
        without_pgfi: arm(dataset, plan, held_out, &off, threads, "Proposed (w/o PGFI)")?,
    })
}
