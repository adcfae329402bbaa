use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{ModelConfig, ModelError, UnwrapNet};
use crate::autodiff::{read_checkpoint, write_checkpoint};
use crate::config::KeyValues;
use crate::scalar::Scalar;

/// Location of the plain-text configuration stored next to a checkpoint:
/// the checkpoint path with `.cfg` appended.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

/// What a checkpoint needs besides its parameters to be applied to new
/// data: the folding threshold and spatial neighbour count it was trained
/// with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelMeta {
    pub lambda: f64,
    pub k: usize,
}

/// Writes parameters to `path` and the architecture plus metadata to its
/// sidecar.
pub fn save_model<T: Scalar>(net: &UnwrapNet<T>, meta: ModelMeta, path: &Path) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(net.params(), &mut w)?;
    w.flush()?;
    let mut side = File::create(sidecar_path(path))?;
    write!(
        side,
        "lambda = {}\nk = {}\n{}",
        meta.lambda,
        meta.k,
        net.config().to_text()
    )?;
    Ok(())
}

/// Reads a checkpoint and its sidecar.
pub fn load_model<T: Scalar>(path: &Path) -> Result<(UnwrapNet<T>, ModelMeta), ModelError> {
    let text = std::fs::read_to_string(sidecar_path(path))?;
    let kv = KeyValues::parse(&text)?;
    let required = |key: &str| {
        kv.get(key)
            .ok_or_else(|| ModelError::Sidecar(format!("missing `{key}`")))
    };
    let meta = ModelMeta {
        lambda: required("lambda")?.parse()?,
        k: required("k")?.parse()?,
    };
    let mut config = ModelConfig::default();
    for entry in kv.iter() {
        if entry.key != "lambda" && entry.key != "k" && !entry.key.starts_with("model.") {
            return Err(entry.unknown().into());
        }
    }
    config.apply(&kv)?;
    let store = read_checkpoint(BufReader::new(File::open(path)?))?;
    Ok((UnwrapNet::from_store(config, store)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.mrcp");
        let cfg = ModelConfig {
            hidden_dim: 8,
            num_heads: 2,
            num_layers: 1,
            pgfi_enabled: false,
            ..ModelConfig::default()
        };
        let net = UnwrapNet::<f64>::init(cfg.clone(), 3).unwrap();
        let meta = ModelMeta { lambda: 0.6, k: 2 };
        save_model(&net, meta, &path).unwrap();
        let (back, read) = load_model::<f64>(&path).unwrap();
        assert_eq!(read, meta);
        assert_eq!(back.config(), &cfg);
        assert!(back.params().same_values(net.params()));

        std::fs::write(sidecar_path(&path), "lambda = 0.6\nk = 2\nmodel.hidden_dim = 16\n").unwrap();
        assert!(matches!(load_model::<f64>(&path), Err(ModelError::ConfigMismatch(_))));
    }
}
