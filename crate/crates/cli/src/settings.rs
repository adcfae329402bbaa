use std::fs;
use std::path::Path;

use anyhow::Context;
use modunwrap::config::KeyValues;
use modunwrap::data::SynthConfig;
use modunwrap::signal::DEFAULT_WINDOW_LEN;
use modunwrap::train::{BaselineOptions, SplitConfig, TrainConfig};

use crate::commands::UsageError;
use crate::Common;

const NAMESPACES: [&str; 6] = ["synth.", "data.", "train.", "model.", "split.", "baseline."];

/// Everything a config file can set, with defaults for the rest.
#[derive(Debug, Clone)]
pub struct Settings {
    pub synth: SynthConfig,
    pub window_len: usize,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub baseline: BaselineOptions,
}

impl Settings {
    pub fn load(common: &Common) -> anyhow::Result<Self> {
        let kv = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                KeyValues::parse(&text).map_err(|e| UsageError(format!("--config {}: {e}", path.display())))?
            }
            None => KeyValues::default(),
        };
        Self::from_kv(&kv).map_err(|e| {
            let file = common.config.as_deref().unwrap_or(Path::new("-"));
            UsageError(format!("--config {}: {e}", file.display())).into()
        })
    }

    fn from_kv(kv: &KeyValues) -> Result<Self, modunwrap::config::ConfigError> {
        kv.ensure_namespaces(&NAMESPACES)?;
        let mut s = Self {
            synth: SynthConfig::default(),
            window_len: DEFAULT_WINDOW_LEN,
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            baseline: BaselineOptions::default(),
        };
        s.synth.apply(kv)?;
        for entry in kv.with_prefix("data.") {
            match &entry.key["data.".len()..] {
                "window_len" => s.window_len = entry.parse()?,
                _ => return Err(entry.unknown()),
            }
        }
        s.train.apply(kv)?;
        s.split.apply(kv)?;
        s.baseline.apply(kv)?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let b = &self.baseline;
        format!(
            "{}data.window_len = {}\n{}{}baseline.mrf_max_iters = {}\nbaseline.mrf_init = {}\nbaseline.sparse_rounds = {}\nbaseline.z_max = {}\n",
            self.synth.to_text(),
            self.window_len,
            self.train.to_text(),
            self.split.to_text(),
            b.mrf_max_iters,
            match b.mrf_init {
                modunwrap::baselines::MrfInit::Itoh => "itoh",
                modunwrap::baselines::MrfInit::Zero => "zero",
            },
            b.sparse_rounds,
            b.z_max
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_roundtrips() {
        let kv = KeyValues::parse(
            "synth.seed = 4\ndata.window_len = 50\ntrain.epochs = 3\nsplit.test = 2\nbaseline.z_max = 5\n",
        )
        .unwrap();
        let s = Settings::from_kv(&kv).unwrap();
        assert_eq!(
            (
                s.synth.seed,
                s.window_len,
                s.train.epochs,
                s.split.test,
                s.baseline.z_max
            ),
            (4, 50, 3, 2, 5)
        );
        let back = Settings::from_kv(&KeyValues::parse(&s.to_text()).unwrap()).unwrap();
        assert_eq!(back.to_text(), s.to_text());
    }

    #[test]
    fn foreign_namespace_is_rejected() {
        let kv = KeyValues::parse("train.epochs = 3\noptim.lr = 1\n").unwrap();
        assert!(Settings::from_kv(&kv).is_err());
    }
}
