//! Plain-text inventory of what a dataset was built from.

use std::fmt;
use std::path::PathBuf;

use super::DataError;
use crate::config::KeyValues;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Stew,
    Synthetic,
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Stew => "stew",
            Self::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubjectEntry {
    File { subject_id: String, path: PathBuf },
    Generated { subject_id: String, seed: u64 },
}

impl SubjectEntry {
    pub fn subject_id(&self) -> &str {
        match self {
            Self::File { subject_id, .. } | Self::Generated { subject_id, .. } => subject_id,
        }
    }
}

/// Normalization applied before windowing: per-recording, per-channel
/// z-score with the population standard deviation.
pub const NORMALIZATION_TAG: &str = "zscore-per-recording";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub source: DataSource,
    pub subjects: Vec<SubjectEntry>,
    pub lambda: f64,
    pub t_len: usize,
    pub channels: usize,
    pub k: usize,
    pub normalization: String,
}

impl DatasetManifest {
    /// Checks `λ > 0` and that referenced files exist.
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(DataError::BadSynth(format!(
                "manifest lambda {} is not positive",
                self.lambda
            )));
        }
        for s in &self.subjects {
            if let SubjectEntry::File { path, .. } = s {
                if !path.is_file() {
                    return Err(DataError::Io(std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("{} (subject {})", path.display(), s.subject_id()),
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "source = {}\nlambda = {}\nt_len = {}\nchannels = {}\nk = {}\nnormalization = {}\n",
            self.source, self.lambda, self.t_len, self.channels, self.k, self.normalization
        );
        for e in &self.subjects {
            match e {
                SubjectEntry::File { subject_id, path } => {
                    s.push_str(&format!("subject.{subject_id} = file:{}\n", path.display()))
                }
                SubjectEntry::Generated { subject_id, seed } => {
                    s.push_str(&format!("subject.{subject_id} = seed:{seed}\n"))
                }
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let kv = KeyValues::parse(text)?;
        let get = |key: &str| {
            kv.get(key).ok_or_else(|| DataError::Parse {
                line: 0,
                message: format!("missing `{key}`"),
            })
        };
        let source = match get("source")?.value.as_str() {
            "stew" => DataSource::Stew,
            "synthetic" => DataSource::Synthetic,
            _ => return Err(get("source")?.unknown().into()),
        };
        let mut subjects = Vec::new();
        for e in kv.iter() {
            if let Some(id) = e.key.strip_prefix("subject.") {
                let entry = if let Some(path) = e.value.strip_prefix("file:") {
                    SubjectEntry::File {
                        subject_id: id.to_string(),
                        path: PathBuf::from(path),
                    }
                } else if let Some(seed) = e.value.strip_prefix("seed:") {
                    SubjectEntry::Generated {
                        subject_id: id.to_string(),
                        seed: seed.parse().map_err(|_| DataError::Parse {
                            line: e.line,
                            message: format!("bad seed `{seed}`"),
                        })?,
                    }
                } else {
                    return Err(DataError::Parse {
                        line: e.line,
                        message: format!("subject origin must start with file: or seed:, found `{}`", e.value),
                    });
                };
                subjects.push(entry);
            } else if !["source", "lambda", "t_len", "channels", "k", "normalization"].contains(&e.key.as_str()) {
                return Err(e.unknown().into());
            }
        }
        Ok(Self {
            source,
            subjects,
            lambda: get("lambda")?.parse()?,
            t_len: get("t_len")?.parse()?,
            channels: get("channels")?.parse()?,
            k: get("k")?.parse()?,
            normalization: get("normalization")?.value.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_validation() {
        let m = DatasetManifest {
            source: DataSource::Synthetic,
            subjects: vec![SubjectEntry::Generated {
                subject_id: "synth01".into(),
                seed: 42,
            }],
            lambda: 0.5,
            t_len: 200,
            channels: 14,
            k: 3,
            normalization: NORMALIZATION_TAG.into(),
        };
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
        assert!(m.validate().is_ok());
        let missing = DatasetManifest {
            source: DataSource::Stew,
            subjects: vec![SubjectEntry::File {
                subject_id: "s1".into(),
                path: "/nonexistent/s1.txt".into(),
            }],
            ..m.clone()
        };
        assert!(missing.validate().is_err());
        assert!(DatasetManifest { lambda: 0.0, ..m }.validate().is_err());
    }
}
