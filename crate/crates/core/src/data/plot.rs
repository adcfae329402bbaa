//! Tab-separated reconstruction dump for plotting, one row per node.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::DataError;
use crate::scalar::Scalar;

pub const PLOT_HEADER: &str = "t\tchannel\tx\tp\tx_hat";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotRow {
    pub t: usize,
    pub channel: usize,
    pub x: f64,
    pub p: f64,
    pub x_hat: f64,
}

/// Writes rows in node order (time-major). Values use Rust's shortest
/// round-trip formatting so reparsing is exact.
pub fn write_plot_data<T: Scalar, W: Write>(
    x: &Array2<T>,
    x_hat: &Array2<T>,
    p: &Array2<T>,
    mut w: W,
) -> Result<(), DataError> {
    if x.dim() != x_hat.dim() || x.dim() != p.dim() {
        return Err(DataError::ShapeMismatch(format!(
            "x {:?}, x_hat {:?}, p {:?}",
            x.dim(),
            x_hat.dim(),
            p.dim()
        )));
    }
    writeln!(w, "{PLOT_HEADER}")?;
    for ((t, c), v) in x.indexed_iter() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            t,
            c,
            v.as_f64(),
            p[[t, c]].as_f64(),
            x_hat[[t, c]].as_f64()
        )?;
    }
    Ok(())
}

pub fn export_plot_data<T: Scalar>(
    x: &Array2<T>,
    x_hat: &Array2<T>,
    p: &Array2<T>,
    path: &Path,
) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_plot_data(x, x_hat, p, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_plot_data(text: &str) -> Result<Vec<PlotRow>, DataError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == PLOT_HEADER => {}
        _ => {
            return Err(DataError::Parse {
                line: 1,
                message: format!("expected header `{PLOT_HEADER}`"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let bad = |message: String| DataError::Parse { line: n + 1, message };
            let cells: Vec<&str> = l.split('\t').collect();
            if cells.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", cells.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad index `{s}`")));
            let real = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad value `{s}`")));
            Ok(PlotRow {
                t: int(cells[0])?,
                channel: int(cells[1])?,
                x: real(cells[2])?,
                p: real(cells[3])?,
                x_hat: real(cells[4])?,
            })
        })
        .collect()
}
