//! Datasets: windowed recordings with optional folded observations, plus
//! their sources (STEW text files, the synthetic generator) and file formats.

mod container;
mod manifest;
mod plot;
mod stew;
mod synth;

pub use container::{load_dataset, read_dataset, save_dataset, write_dataset, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use manifest::{DataSource, DatasetManifest, SubjectEntry, NORMALIZATION_TAG};
pub use plot::{export_plot_data, read_plot_data, write_plot_data, PlotRow, PLOT_HEADER};
pub use stew::{load_stew, parse_stew, subject_id_from_path, STEW_CHANNELS};
pub use synth::{synth_generate, Band, SynthConfig};

use std::collections::HashSet;

use ndarray::Array2;
use thiserror::Error;

use crate::config::ConfigError;
use crate::scalar::Scalar;
use crate::signal::{fold, normalize, segment, FoldedWindow, Recording, SignalError, SignalWindow};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}:{line}: expected {expected} columns, found {found}")]
    BadColumnCount {
        file: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{file}:{line}: column {column} is not a number: `{cell}`")]
    NonNumericCell {
        file: String,
        line: usize,
        column: usize,
        cell: String,
    },
    #[error("{file}: no samples")]
    EmptyFile { file: String },
    #[error("{0}: no data files found")]
    EmptyDirectory(String),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    VersionUnsupported(u32),
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("invalid band {low}-{high} Hz (sample rate {rate} Hz)")]
    BadBand { low: f64, high: f64, rate: f64 },
    #[error("invalid synthetic configuration: {0}")]
    BadSynth(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset is not folded")]
    NotFolded,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One window with its ground truth and, once folded, its observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow<T> {
    pub subject_id: String,
    pub window_index: usize,
    /// Latent signal, `T×C`.
    pub x: Array2<T>,
    pub folded: Option<FoldedWindow<T>>,
}

impl<T: Scalar> LabeledWindow<T> {
    /// The folded observation with ground-truth fold counts.
    pub fn observation(&self) -> Result<&FoldedWindow<T>, DataError> {
        self.folded.as_ref().ok_or(DataError::NotFolded)
    }

    /// Ground-truth fold counts.
    pub fn z(&self) -> Result<&Array2<i32>, DataError> {
        self.observation()?.z().ok_or(DataError::NotFolded)
    }
}

/// Windows sharing one shape and (when folded) one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub t_len: usize,
    pub channels: usize,
    /// `None` until folded.
    pub lambda: Option<T>,
    pub windows: Vec<LabeledWindow<T>>,
}

impl<T: Scalar> Dataset<T> {
    /// Z-scores each recording per channel and cuts it into windows of
    /// `window_len` samples.
    pub fn from_recordings(recordings: &[Recording<T>], window_len: usize) -> Result<Self, DataError> {
        let channels = recordings
            .first()
            .map(Recording::channels)
            .ok_or_else(|| DataError::ShapeMismatch("no recordings".into()))?;
        let mut windows = Vec::new();
        for rec in recordings {
            if rec.channels() != channels {
                return Err(DataError::ShapeMismatch(format!(
                    "subject {} has {} channels, expected {channels}",
                    rec.subject_id,
                    rec.channels()
                )));
            }
            let (normed, _) = normalize(rec)?;
            windows.extend(segment(&normed, window_len)?.into_iter().map(
                |SignalWindow {
                     x,
                     subject_id,
                     window_index,
                 }| LabeledWindow {
                    subject_id,
                    window_index,
                    x,
                    folded: None,
                },
            ));
        }
        Ok(Self {
            t_len: window_len,
            channels,
            lambda: None,
            windows,
        })
    }

    /// Folds every window at `lambda`, replacing any earlier observation.
    pub fn fold(&self, lambda: T) -> Result<Self, DataError> {
        let windows = self
            .windows
            .iter()
            .map(|w| {
                let folded = fold(&SignalWindow::from_matrix(w.x.clone()), lambda)?;
                Ok(LabeledWindow {
                    folded: Some(folded),
                    ..w.clone()
                })
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        Ok(Self {
            lambda: Some(lambda),
            windows,
            ..*self
        })
    }

    pub fn lambda(&self) -> Result<T, DataError> {
        self.lambda.ok_or(DataError::NotFolded)
    }

    /// Subject ids in order of first appearance.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.windows
            .iter()
            .filter(|w| seen.insert(w.subject_id.as_str()))
            .map(|w| w.subject_id.clone())
            .collect()
    }

    /// Windows belonging to any of `subjects`, in dataset order.
    pub fn windows_of<'a>(&'a self, subjects: &[String]) -> Vec<&'a LabeledWindow<T>> {
        let wanted: HashSet<&str> = subjects.iter().map(String::as_str).collect();
        self.windows
            .iter()
            .filter(|w| wanted.contains(w.subject_id.as_str()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn rec(id: &str, n: usize, c: usize) -> Recording<f64> {
        let x = Array2::from_shape_fn((n, c), |(t, j)| ((t * (j + 1)) as f64 * 0.1).sin() + j as f64);
        Recording::new(x, id, 128.0).unwrap()
    }

    #[test]
    fn windows_and_subjects() {
        let ds = Dataset::from_recordings(&[rec("b", 25, 2), rec("a", 20, 2)], 10).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.subjects(), vec!["b".to_string(), "a".to_string()]);
        assert_eq!(ds.windows_of(&["a".to_string()]).len(), 2);
        assert!(ds.lambda().is_err());
        let folded = ds.fold(0.5).unwrap();
        let w = &folded.windows[0];
        let back = crate::signal::unfold_exact(w.observation().unwrap()).unwrap();
        for (a, b) in back.x.iter().zip(&w.x) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(Dataset::from_recordings(&[rec("a", 20, 2), rec("b", 20, 3)], 10).is_err());
    }
}
