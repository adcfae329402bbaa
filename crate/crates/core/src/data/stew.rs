//! Loader for STEW-style recordings: whitespace-separated text, one sample
//! per line, 14 channel columns, 128 Hz.

use std::path::Path;

use ndarray::Array2;

use super::DataError;
use crate::scalar::Scalar;
use crate::signal::{Recording, DEFAULT_SAMPLE_RATE_HZ};

pub const STEW_CHANNELS: usize = 14;

/// Subject id from a file name: the stem up to the first `_`, so
/// `sub07_hi.txt` and `sub07_lo.txt` belong to subject `sub07`.
pub fn subject_id_from_path(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    stem.split('_').next().unwrap_or(stem).to_string()
}

/// Parses one file's contents. `file` only labels diagnostics.
pub fn parse_stew<T: Scalar>(text: &str, file: &str) -> Result<Array2<T>, DataError> {
    let mut data = Vec::new();
    let mut rows = 0;
    for (n, line) in text.lines().enumerate() {
        let cells: Vec<&str> = line.split_whitespace().collect();
        if cells.is_empty() {
            continue;
        }
        if cells.len() != STEW_CHANNELS {
            return Err(DataError::BadColumnCount {
                file: file.to_string(),
                line: n + 1,
                expected: STEW_CHANNELS,
                found: cells.len(),
            });
        }
        for (column, cell) in cells.iter().enumerate() {
            let v: f64 =
                cell.parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| DataError::NonNumericCell {
                        file: file.to_string(),
                        line: n + 1,
                        column: column + 1,
                        cell: cell.to_string(),
                    })?;
            data.push(T::lit(v));
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::EmptyFile { file: file.to_string() });
    }
    Ok(Array2::from_shape_vec((rows, STEW_CHANNELS), data).expect("row lengths checked"))
}

/// Loads every `*.txt` file in `dir` (sorted by name) as one recording.
/// Files sharing a subject id are kept as separate recordings.
pub fn load_stew<T: Scalar>(dir: &Path) -> Result<Vec<Recording<T>>, DataError> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(DataError::EmptyDirectory(dir.display().to_string()));
    }
    files
        .iter()
        .map(|path| {
            let text = std::fs::read_to_string(path)?;
            let samples = parse_stew(&text, &path.display().to_string())?;
            Ok(Recording::new(
                samples,
                subject_id_from_path(path),
                T::lit(DEFAULT_SAMPLE_RATE_HZ),
            )?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write;

    fn rows(n: usize) -> String {
        let mut s = String::new();
        for r in 0..n {
            let cells: Vec<String> = (0..14).map(|c| format!("{}.{}", 4000 + r, c)).collect();
            writeln!(s, "{}", cells.join("  ")).unwrap();
        }
        s
    }

    #[test]
    fn full_recording_shape() {
        let m: Array2<f64> = parse_stew(&rows(19200), "sub01_lo.txt").unwrap();
        assert_eq!(m.dim(), (19200, 14));
        assert_eq!(m[[2, 3]], 4002.3);
    }

    #[test]
    fn diagnostics_name_file_and_line() {
        let mut text = rows(3);
        text.push_str("1 2 3 4 5 6 7 8 9 10 11 12 13\n");
        match parse_stew::<f64>(&text, "a.txt") {
            Err(DataError::BadColumnCount {
                file,
                line: 4,
                found: 13,
                ..
            }) => assert_eq!(file, "a.txt"),
            other => panic!("{other:?}"),
        }
        let text = format!("AF3 F7 F3 FC5 T7 P7 O1 O2 P8 T8 FC6 F4 F8 AF4\n{}", rows(2));
        assert!(matches!(
            parse_stew::<f64>(&text, "b.txt"),
            Err(DataError::NonNumericCell { line: 1, column: 1, .. })
        ));
        assert!(matches!(
            parse_stew::<f64>("\n\n", "c.txt"),
            Err(DataError::EmptyFile { .. })
        ));
        assert!(parse_stew::<f64>("nan 1 2 3 4 5 6 7 8 9 10 11 12 13", "d.txt").is_err());
    }

    #[test]
    fn directory_load() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("sub02_hi.txt"), rows(5)).unwrap();
        std::fs::write(dir.path().join("sub01_lo.txt"), rows(4)).unwrap();
        std::fs::write(dir.path().join("notes.md"), "ignored").unwrap();
        let recs: Vec<Recording<f64>> = load_stew(dir.path()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].subject_id, "sub01");
        assert_eq!(recs[1].len(), 5);
        assert_eq!(recs[0].sample_rate_hz, 128.0);
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_stew::<f64>(empty.path()),
            Err(DataError::EmptyDirectory(_))
        ));
    }
}
