//! Reconstruction metrics: fold-class accuracy, L1, MSE, offset-corrected
//! MSE and Pearson correlation, pooled over nodes and kept per window.

use ndarray::{Array2, Axis};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("correlation is undefined for constant input")]
    ConstantInput,
    #[error("need at least 2 values, got {0}")]
    TooShort(usize),
    #[error("length mismatch ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Sample Pearson correlation.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(MetricsError::TooShort(n));
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(MetricsError::ConstantInput);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// One window's reconstruction.
#[derive(Debug, Clone, Copy)]
pub struct Prediction<'a, T> {
    pub subject_id: &'a str,
    pub window_index: usize,
    pub x_true: &'a Array2<T>,
    pub z_true: &'a Array2<i32>,
    pub x_hat: &'a Array2<T>,
    pub z_hat: &'a Array2<i32>,
    pub lambda: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowMetrics {
    pub subject_id: String,
    pub window_index: usize,
    pub accuracy: f64,
    pub l1: f64,
    pub mse: f64,
    pub offset_mse: f64,
    /// `None` when either side is constant.
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Percent of nodes whose predicted fold count is exact.
    pub accuracy: f64,
    pub l1: f64,
    pub mse: f64,
    /// MSE after shifting each window channel by its best integer number of
    /// periods.
    pub offset_mse: f64,
    pub r: Option<f64>,
    pub nodes: usize,
    pub per_window: Vec<WindowMetrics>,
}

impl Metrics {
    pub fn window_mse(&self) -> Vec<f64> {
        self.per_window.iter().map(|w| w.mse).collect()
    }

    pub fn window_accuracy(&self) -> Vec<f64> {
        self.per_window.iter().map(|w| w.accuracy).collect()
    }
}

/// Per-channel shift `round(mean(x − x̂)/λ)·λ` added to `x̂`.
pub fn offset_corrected<T: Scalar>(x_true: &Array2<T>, x_hat: &Array2<T>, lambda: T) -> Array2<f64> {
    let mut out = x_hat.mapv(|v| v.as_f64());
    let lambda = lambda.as_f64();
    for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let n = col.len() as f64;
        let mean_diff = x_true
            .column(c)
            .iter()
            .zip(col.iter())
            .map(|(x, h)| x.as_f64() - h)
            .sum::<f64>()
            / n;
        let k = (mean_diff / lambda).round();
        col.mapv_inplace(|v| v + k * lambda);
    }
    out
}

fn shape_check<T>(p: &Prediction<'_, T>) {
    let d = p.x_true.dim();
    assert!(
        p.x_hat.dim() == d && p.z_true.dim() == d && p.z_hat.dim() == d,
        "prediction shapes disagree for window {} of {}",
        p.window_index,
        p.subject_id
    );
}

/// Pools metrics over all nodes of all windows.
///
/// # Panics
/// If a prediction's matrices differ in shape.
pub fn compute_metrics<T: Scalar>(preds: &[Prediction<'_, T>]) -> Metrics {
    let mut all_true = Vec::new();
    let mut all_hat = Vec::new();
    let (mut correct, mut nodes) = (0usize, 0usize);
    let (mut l1, mut sq, mut osq) = (0.0, 0.0, 0.0);
    let mut per_window = Vec::with_capacity(preds.len());
    for p in preds {
        shape_check(p);
        let xt: Vec<f64> = p.x_true.iter().map(|v| v.as_f64()).collect();
        let xh: Vec<f64> = p.x_hat.iter().map(|v| v.as_f64()).collect();
        let n = xt.len();
        let hits = p.z_true.iter().zip(p.z_hat.iter()).filter(|(a, b)| a == b).count();
        let w_l1: f64 = xt.iter().zip(&xh).map(|(a, b)| (a - b).abs()).sum();
        let w_sq: f64 = xt.iter().zip(&xh).map(|(a, b)| (a - b) * (a - b)).sum();
        let shifted = offset_corrected(p.x_true, p.x_hat, p.lambda);
        let w_osq: f64 = xt.iter().zip(shifted.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        per_window.push(WindowMetrics {
            subject_id: p.subject_id.to_string(),
            window_index: p.window_index,
            accuracy: 100.0 * hits as f64 / n as f64,
            l1: w_l1 / n as f64,
            mse: w_sq / n as f64,
            offset_mse: w_osq / n as f64,
            r: pearson_r(&xt, &xh).ok(),
        });
        correct += hits;
        nodes += n;
        l1 += w_l1;
        sq += w_sq;
        osq += w_osq;
        all_true.extend(xt);
        all_hat.extend(xh);
    }
    let denom = nodes.max(1) as f64;
    let r = pearson_r(&all_true, &all_hat);
    if let Err(e) = &r {
        if nodes > 1 {
            log::warn!("correlation excluded: {e}");
        }
    }
    Metrics {
        accuracy: 100.0 * correct as f64 / denom,
        l1: l1 / denom,
        mse: sq / denom,
        offset_mse: osq / denom,
        r: r.ok(),
        nodes,
        per_window,
    }
}
