//! `MODR` binary container. All integers and reals are little endian:
//!
//! ```text
//! magic  b"MODR"
//! u32    version (1)
//! u32    T, u32 C
//! f64    λ (0 for a dataset that has not been folded yet)
//! u32    window count
//! per window:
//!   u32 id length, id bytes (UTF-8)
//!   u32 window index
//!   T·C f64  x, row-major
//!   T·C f64  p, row-major (zeros when λ = 0)
//!   T·C i32  z, row-major (zeros when λ = 0)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{DataError, Dataset, LabeledWindow};
use crate::scalar::Scalar;
use crate::signal::FoldedWindow;

pub const CONTAINER_MAGIC: [u8; 4] = *b"MODR";
pub const CONTAINER_VERSION: u32 = 1;

fn to_u32(v: usize, what: &str) -> Result<u32, DataError> {
    u32::try_from(v).map_err(|_| DataError::ShapeMismatch(format!("{what} {v} does not fit in u32")))
}

pub fn write_dataset<T: Scalar, W: Write>(ds: &Dataset<T>, mut w: W) -> Result<(), DataError> {
    let cells = ds.t_len * ds.channels;
    w.write_all(&CONTAINER_MAGIC)?;
    w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    w.write_all(&to_u32(ds.t_len, "T")?.to_le_bytes())?;
    w.write_all(&to_u32(ds.channels, "C")?.to_le_bytes())?;
    let lambda = ds.lambda.map_or(0.0, |l| l.as_f64());
    w.write_all(&lambda.to_le_bytes())?;
    w.write_all(&to_u32(ds.windows.len(), "window count")?.to_le_bytes())?;
    for win in &ds.windows {
        if win.x.dim() != (ds.t_len, ds.channels) {
            return Err(DataError::ShapeMismatch(format!(
                "window {} of {} has shape {:?}",
                win.window_index,
                win.subject_id,
                win.x.dim()
            )));
        }
        let id = win.subject_id.as_bytes();
        w.write_all(&to_u32(id.len(), "subject id length")?.to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&to_u32(win.window_index, "window index")?.to_le_bytes())?;
        for v in win.x.iter() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
        match (&win.folded, ds.lambda) {
            (Some(f), Some(_)) => {
                let z = f.z().ok_or(DataError::NotFolded)?;
                for v in f.p().iter() {
                    w.write_all(&v.as_f64().to_le_bytes())?;
                }
                for v in z.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            (None, None) => {
                w.write_all(&vec![0u8; cells * 12])?;
            }
            _ => return Err(DataError::NotFolded),
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N], DataError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => DataError::CorruptPayload(format!("truncated while reading {what}")),
            _ => DataError::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }

    fn i32(&mut self, what: &str) -> Result<i32, DataError> {
        Ok(i32::from_le_bytes(self.bytes(what)?))
    }
}

pub fn read_dataset<T: Scalar, R: Read>(r: R) -> Result<Dataset<T>, DataError> {
    let mut r = Reader { inner: r };
    let magic: [u8; 4] = r.bytes("magic")?;
    if magic != CONTAINER_MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != CONTAINER_VERSION {
        return Err(DataError::VersionUnsupported(version));
    }
    let t_len = r.u32("T")? as usize;
    let channels = r.u32("C")? as usize;
    let lambda = r.f64("lambda")?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(DataError::CorruptPayload(format!("invalid lambda {lambda}")));
    }
    let count = r.u32("window count")?;
    let cells = t_len
        .checked_mul(channels)
        .filter(|&c| c <= 1 << 28)
        .ok_or_else(|| DataError::CorruptPayload(format!("implausible window shape {t_len}x{channels}")))?;
    let folded = lambda > 0.0;
    let lam = T::lit(lambda);

    let mut windows = Vec::new();
    for n in 0..count {
        let id_len = r.u32("subject id length")? as usize;
        if id_len > 4096 {
            return Err(DataError::CorruptPayload(format!(
                "window {n}: subject id length {id_len}"
            )));
        }
        let mut id = vec![0u8; id_len];
        r.inner
            .read_exact(&mut id)
            .map_err(|_| DataError::CorruptPayload(format!("window {n}: truncated while reading subject id")))?;
        let subject_id = String::from_utf8(id)
            .map_err(|_| DataError::CorruptPayload(format!("window {n}: subject id is not UTF-8")))?;
        let window_index = r.u32("window index")? as usize;
        let mut read_f =
            |what: &str| -> Result<Vec<T>, DataError> { (0..cells).map(|_| r.f64(what).map(T::lit)).collect() };
        let x = read_f("x")?;
        let p = read_f("p")?;
        let z = (0..cells).map(|_| r.i32("z")).collect::<Result<Vec<_>, _>>()?;
        let shape = (t_len, channels);
        let x = Array2::from_shape_vec(shape, x).expect("sized above");
        let folded = if folded {
            let p = Array2::from_shape_vec(shape, p).expect("sized above");
            let z = Array2::from_shape_vec(shape, z).expect("sized above");
            let f = FoldedWindow::new(p, lam, Some(z))
                .map_err(|e| DataError::CorruptPayload(format!("window {n} ({subject_id}): {e}")))?;
            Some(f)
        } else {
            None
        };
        windows.push(LabeledWindow {
            subject_id,
            window_index,
            x,
            folded,
        });
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(DataError::CorruptPayload("trailing bytes after last window".into()));
    }
    Ok(Dataset {
        t_len,
        channels,
        lambda: folded.then_some(lam),
        windows,
    })
}

pub fn save_dataset<T: Scalar>(ds: &Dataset<T>, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset<T: Scalar>(path: &Path) -> Result<Dataset<T>, DataError> {
    read_dataset(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Recording;

    fn sample() -> Dataset<f64> {
        let recs: Vec<_> = ["s01", "s02"]
            .iter()
            .enumerate()
            .map(|(k, id)| {
                let x = Array2::from_shape_fn((30, 3), |(t, c)| ((t + 7 * k) as f64 * 0.3 + c as f64).sin() * 2.0);
                Recording::new(x, *id, 128.0).unwrap()
            })
            .collect();
        Dataset::from_recordings(&recs, 10).unwrap()
    }

    fn bytes(ds: &Dataset<f64>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset(ds, &mut buf).unwrap();
        buf
    }

    #[test]
    fn roundtrip_bit_exact() {
        let raw = sample();
        let back: Dataset<f64> = read_dataset(&bytes(&raw)[..]).unwrap();
        assert_eq!(back, raw);
        let folded = raw.fold(0.4).unwrap();
        let buf = bytes(&folded);
        let back: Dataset<f64> = read_dataset(&buf[..]).unwrap();
        assert_eq!(back, folded);
        for (a, b) in back.windows.iter().zip(&folded.windows) {
            for (u, v) in a.x.iter().zip(&b.x) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
        assert_eq!(&buf[..4], b"MODR");
        assert_eq!(bytes(&back), buf);
    }

    #[test]
    fn rejects_bad_headers() {
        let mut buf = bytes(&sample());
        buf[0] = b'X';
        assert!(matches!(read_dataset::<f64, _>(&buf[..]), Err(DataError::BadMagic(_))));
        let mut buf = bytes(&sample());
        buf[4] = 9;
        assert!(matches!(
            read_dataset::<f64, _>(&buf[..]),
            Err(DataError::VersionUnsupported(9))
        ));
    }

    #[test]
    fn truncation_is_reported() {
        let buf = bytes(&sample().fold(0.5).unwrap());
        for cut in [3, 10, 30, buf.len() / 2, buf.len() - 1] {
            assert!(
                matches!(
                    read_dataset::<f64, _>(&buf[..cut]),
                    Err(DataError::CorruptPayload(_) | DataError::BadMagic(_))
                ),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn p_equal_to_lambda_is_rejected() {
        let ds = sample().fold(0.5).unwrap();
        let mut buf = bytes(&ds);
        // First p cell of the first window.
        let header = 4 + 4 + 4 + 4 + 8 + 4;
        let offset = header + 4 + 3 + 4 + 30 * 8;
        buf[offset..offset + 8].copy_from_slice(&0.5f64.to_le_bytes());
        match read_dataset::<f64, _>(&buf[..]) {
            Err(DataError::CorruptPayload(msg)) => assert!(msg.contains("row 0") || msg.contains("0.5"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
