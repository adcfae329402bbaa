//! Signals and the modulo folding algebra.
//!
//! A latent window `x` is observed through a folding ADC as `p = x mod λ`,
//! with `x = λ·z + p`, `p ∈ [0, λ)` and integer fold counts `z`. This module
//! owns that algebra together with the preprocessing that precedes it
//! (per-channel normalization, fixed-length segmentation) and the coarse
//! three-state fold labels used to supervise the pre-estimator.

use ndarray::{Array1, Array2, Axis, Zip};
use thiserror::Error;

use crate::scalar::Scalar;

/// Default sampling rate of the 14-channel headset recordings.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 128.0;
/// Default window length in samples.
pub const DEFAULT_WINDOW_LEN: usize = 200;
/// Default boundary margin for coarse labels, as a fraction of λ.
pub const DEFAULT_BOUNDARY_MARGIN: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("channel {channel} is constant and cannot be normalized")]
    ConstantChannel { channel: usize },
    #[error("recording has {len} samples, fewer than the window length {window}")]
    TooShort { len: usize, window: usize },
    #[error("window length must be at least 2, got {0}")]
    BadWindowLength(usize),
    #[error("folding threshold must be positive and finite, got {0}")]
    NonPositiveLambda(f64),
    #[error("fold counts are required but absent")]
    MissingFoldCounts,
    #[error("boundary margin must lie in (0, 0.5), got {0}")]
    BadDelta(f64),
    #[error("non-finite sample at row {row}, channel {channel}")]
    NonFinite { row: usize, channel: usize },
    #[error("folded value {value} at row {row}, channel {channel} is outside [0, {lambda})")]
    OutOfRange {
        row: usize,
        channel: usize,
        value: f64,
        lambda: f64,
    },
    #[error("shape mismatch: expected {expected:?}, got {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("sample rate must be positive, got {0}")]
    BadSampleRate(f64),
    #[error("recording needs at least 2 samples per channel, got {0}")]
    NotEnoughSamples(usize),
}

fn check_finite<T: Scalar>(m: &Array2<T>) -> Result<(), SignalError> {
    for ((row, channel), v) in m.indexed_iter() {
        if !v.is_finite() {
            return Err(SignalError::NonFinite { row, channel });
        }
    }
    Ok(())
}

fn check_lambda<T: Scalar>(lambda: T) -> Result<(), SignalError> {
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(SignalError::NonPositiveLambda(lambda.as_f64()));
    }
    Ok(())
}

/// A full recording of one subject, rows are time and columns channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording<T> {
    pub samples: Array2<T>,
    pub subject_id: String,
    pub sample_rate_hz: T,
}

impl<T: Scalar> Recording<T> {
    pub fn new(samples: Array2<T>, subject_id: impl Into<String>, sample_rate_hz: T) -> Result<Self, SignalError> {
        if !(sample_rate_hz > T::zero()) {
            return Err(SignalError::BadSampleRate(sample_rate_hz.as_f64()));
        }
        check_finite(&samples)?;
        Ok(Self {
            samples,
            subject_id: subject_id.into(),
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.samples.ncols()
    }
}

/// A `T×C` latent segment `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow<T> {
    pub x: Array2<T>,
    pub subject_id: String,
    pub window_index: usize,
}

impl<T: Scalar> SignalWindow<T> {
    /// Wraps a bare matrix, mostly useful for tests and synthetic inputs.
    pub fn from_matrix(x: Array2<T>) -> Self {
        Self {
            x,
            subject_id: String::new(),
            window_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.x.ncols()
    }
}

/// The folded observation `p` with its threshold and, when known, the fold
/// counts `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedWindow<T> {
    p: Array2<T>,
    lambda: T,
    z: Option<Array2<i32>>,
}

impl<T: Scalar> FoldedWindow<T> {
    /// Validates `0 <= p < λ` everywhere and that `z` (if any) matches `p`'s shape.
    pub fn new(p: Array2<T>, lambda: T, z: Option<Array2<i32>>) -> Result<Self, SignalError> {
        check_lambda(lambda)?;
        for ((row, channel), &v) in p.indexed_iter() {
            if !(v >= T::zero() && v < lambda) {
                return Err(SignalError::OutOfRange {
                    row,
                    channel,
                    value: v.as_f64(),
                    lambda: lambda.as_f64(),
                });
            }
        }
        if let Some(z) = &z {
            if z.dim() != p.dim() {
                return Err(SignalError::ShapeMismatch {
                    expected: p.dim(),
                    found: z.dim(),
                });
            }
        }
        Ok(Self { p, lambda, z })
    }

    pub fn p(&self) -> &Array2<T> {
        &self.p
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn z(&self) -> Option<&Array2<i32>> {
        self.z.as_ref()
    }

    /// Drops the ground-truth fold counts, leaving only what a sensor reports.
    pub fn without_fold_counts(mut self) -> Self {
        self.z = None;
        self
    }

    pub fn len(&self) -> usize {
        self.p.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.p.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.p.ncols()
    }
}

/// Per-channel statistics applied by [`normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<T> {
    pub mean: Array1<T>,
    pub std: Array1<T>,
    pub subject_id: String,
}

/// Z-scores every channel of a recording with the population standard
/// deviation computed over the whole recording.
pub fn normalize<T: Scalar>(recording: &Recording<T>) -> Result<(Recording<T>, NormStats<T>), SignalError> {
    let n = recording.len();
    if n < 2 {
        return Err(SignalError::NotEnoughSamples(n));
    }
    let count = T::from_usize(n).expect("sample count fits scalar");
    let mut mean = Array1::zeros(recording.channels());
    let mut std = Array1::zeros(recording.channels());
    for (c, col) in recording.samples.axis_iter(Axis(1)).enumerate() {
        let mu = col.iter().copied().sum::<T>() / count;
        let var = col.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / count;
        let sd = var.sqrt();
        // Summation error leaves a residue of a few ulps on constant input.
        let scale = col.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
        if !(sd > T::epsilon() * T::lit(64.0) * scale) {
            return Err(SignalError::ConstantChannel { channel: c });
        }
        mean[c] = mu;
        std[c] = sd;
    }
    let mut samples = recording.samples.clone();
    for (c, mut col) in samples.axis_iter_mut(Axis(1)).enumerate() {
        let (mu, sd) = (mean[c], std[c]);
        col.mapv_inplace(|v| (v - mu) / sd);
    }
    let stats = NormStats {
        mean,
        std,
        subject_id: recording.subject_id.clone(),
    };
    Ok((
        Recording {
            samples,
            subject_id: recording.subject_id.clone(),
            sample_rate_hz: recording.sample_rate_hz,
        },
        stats,
    ))
}

/// Splits a recording into non-overlapping windows of `window` samples,
/// dropping any trailing remainder.
pub fn segment<T: Scalar>(recording: &Recording<T>, window: usize) -> Result<Vec<SignalWindow<T>>, SignalError> {
    if window < 2 {
        return Err(SignalError::BadWindowLength(window));
    }
    let len = recording.len();
    if len < window {
        return Err(SignalError::TooShort { len, window });
    }
    Ok(recording
        .samples
        .axis_chunks_iter(Axis(0), window)
        .filter(|chunk| chunk.nrows() == window)
        .enumerate()
        .map(|(window_index, chunk)| SignalWindow {
            x: chunk.to_owned(),
            subject_id: recording.subject_id.clone(),
            window_index,
        })
        .collect())
}

/// Folds one value: returns `(p, z)` with `x = λ·z + p` and `0 <= p < λ`.
#[inline]
pub fn fold_value<T: Scalar>(x: T, lambda: T) -> (T, i32) {
    let q = (x / lambda).floor();
    let mut z = q.to_i32().expect("fold count fits in i32");
    let mut p = x - lambda * q;
    // Rounding in `x - λ·q` can land exactly on λ or a hair below zero.
    if p >= lambda {
        p -= lambda;
        z += 1;
    }
    if p < T::zero() {
        p += lambda;
        z -= 1;
        if p >= lambda {
            p = T::zero();
        }
    }
    (p, z)
}

/// Folds a raw matrix, returning `(p, z)`.
pub fn fold_matrix<T: Scalar>(x: &Array2<T>, lambda: T) -> Result<(Array2<T>, Array2<i32>), SignalError> {
    check_lambda(lambda)?;
    check_finite(x)?;
    let mut p = Array2::zeros(x.dim());
    let mut z = Array2::zeros(x.dim());
    Zip::from(&mut p).and(&mut z).and(x).for_each(|p, z, &x| {
        let (pv, zv) = fold_value(x, lambda);
        *p = pv;
        *z = zv;
    });
    Ok((p, z))
}

/// Applies the folding model to a latent window.
pub fn fold<T: Scalar>(x: &SignalWindow<T>, lambda: T) -> Result<FoldedWindow<T>, SignalError> {
    let (p, z) = fold_matrix(&x.x, lambda)?;
    Ok(FoldedWindow { p, lambda, z: Some(z) })
}

/// Inverts [`fold`] using the stored fold counts.
pub fn unfold_exact<T: Scalar>(folded: &FoldedWindow<T>) -> Result<SignalWindow<T>, SignalError> {
    let z = folded.z.as_ref().ok_or(SignalError::MissingFoldCounts)?;
    Ok(SignalWindow::from_matrix(unfold_with(&folded.p, z, folded.lambda)))
}

/// `λ·z + p` elementwise.
pub fn unfold_with<T: Scalar>(p: &Array2<T>, z: &Array2<i32>, lambda: T) -> Array2<T> {
    let mut x = Array2::zeros(p.dim());
    Zip::from(&mut x).and(p).and(z).for_each(|x, &p, &z| {
        *x = lambda * T::from_i32(z).expect("fold count fits scalar") + p;
    });
    x
}

/// One of the three coarse fold states supervising the pre-estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum CoarseState {
    /// Interior sample that was not folded (state value 0).
    Unwrapped = 0,
    /// Sample within the margin of a wrap boundary (state value 0.5).
    Boundary = 1,
    /// Interior sample that was folded at least once (state value 1).
    Wrapped = 2,
}

impl CoarseState {
    pub const ALL: [CoarseState; 3] = [CoarseState::Unwrapped, CoarseState::Boundary, CoarseState::Wrapped];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// The nominal state value in `{0, 0.5, 1}`.
    pub fn value(self) -> f64 {
        match self {
            CoarseState::Unwrapped => 0.0,
            CoarseState::Boundary => 0.5,
            CoarseState::Wrapped => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseLabelGrid {
    pub labels: Array2<u8>,
    pub delta: f64,
}

impl CoarseLabelGrid {
    pub fn state(&self, t: usize, channel: usize) -> CoarseState {
        CoarseState::from_index(self.labels[[t, channel]] as usize).expect("labels hold valid states")
    }

    /// Fraction of cells carrying each state, indexed by [`CoarseState::index`].
    pub fn fractions(&self) -> [f64; 3] {
        let mut counts = [0usize; 3];
        for &l in self.labels.iter() {
            counts[l as usize] += 1;
        }
        let n = self.labels.len().max(1) as f64;
        counts.map(|c| c as f64 / n)
    }
}

/// Boundary-aware three-state labels. Proximity to a wrap boundary takes
/// precedence over the fold count.
pub fn coarse_labels<T: Scalar>(folded: &FoldedWindow<T>, delta: f64) -> Result<CoarseLabelGrid, SignalError> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(SignalError::BadDelta(delta));
    }
    let z = folded.z.as_ref().ok_or(SignalError::MissingFoldCounts)?;
    let lo = T::lit(delta) * folded.lambda;
    let hi = T::lit(1.0 - delta) * folded.lambda;
    let mut labels = Array2::zeros(folded.p.dim());
    Zip::from(&mut labels).and(&folded.p).and(z).for_each(|l, &p, &z| {
        let state = if p < lo || p > hi {
            CoarseState::Boundary
        } else if z == 0 {
            CoarseState::Unwrapped
        } else {
            CoarseState::Wrapped
        };
        *l = state as u8;
    });
    Ok(CoarseLabelGrid { labels, delta })
}
