use crate::config::{ConfigError, KeyValues};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout_rate: f64,
    /// Fold classes cover `-z_max..=z_max`.
    pub z_max: i32,
    pub pgfi_enabled: bool,
    pub pre_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            num_layers: 3,
            num_heads: 4,
            dropout_rate: 0.1,
            z_max: 8,
            pgfi_enabled: true,
            pre_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden_dim == 0 || self.num_layers == 0 || self.num_heads == 0 || self.pre_hidden == 0 {
            return Err("dimensions, layer and head counts must be positive".into());
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.z_max < 1 {
            return Err(format!("z_max must be positive, got {}", self.z_max));
        }
        Ok(())
    }

    /// `K_z = 2·z_max + 1`.
    pub fn num_classes(&self) -> usize {
        (2 * self.z_max + 1) as usize
    }

    /// Fold count represented by class `c`.
    pub fn class_value(&self, c: usize) -> i32 {
        c as i32 - self.z_max
    }

    /// Class of fold count `z`, clipped into range. The flag reports clipping.
    pub fn class_of(&self, z: i32) -> (usize, bool) {
        let clipped = z.clamp(-self.z_max, self.z_max);
        ((clipped + self.z_max) as usize, clipped != z)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Applies `model.*` entries; other namespaces are ignored.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<(), ConfigError> {
        for entry in kv.with_prefix("model.") {
            let key = &entry.key["model.".len()..];
            match key {
                "hidden_dim" => self.hidden_dim = entry.parse()?,
                "num_layers" => self.num_layers = entry.parse()?,
                "num_heads" => self.num_heads = entry.parse()?,
                "dropout_rate" => self.dropout_rate = entry.parse()?,
                "z_max" => self.z_max = entry.parse()?,
                "pgfi_enabled" => self.pgfi_enabled = entry.parse()?,
                "pre_hidden" => self.pre_hidden = entry.parse()?,
                _ => return Err(entry.unknown()),
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "model.hidden_dim = {}\nmodel.num_layers = {}\nmodel.num_heads = {}\nmodel.dropout_rate = {}\n\
             model.z_max = {}\nmodel.pgfi_enabled = {}\nmodel.pre_hidden = {}\n",
            self.hidden_dim,
            self.num_layers,
            self.num_heads,
            self.dropout_rate,
            self.z_max,
            self.pgfi_enabled,
            self.pre_hidden
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes() {
        let c = ModelConfig::default();
        assert_eq!(c.num_classes(), 17);
        assert_eq!(c.class_value(0), -8);
        assert_eq!(c.class_value(8), 0);
        assert_eq!(c.class_of(0), (8, false));
        assert_eq!(c.class_of(11), (16, true));
        assert_eq!(c.class_of(-9), (0, true));
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            hidden_dim: 10,
            num_heads: 4,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn text_roundtrip() {
        let c = ModelConfig {
            hidden_dim: 8,
            pgfi_enabled: false,
            dropout_rate: 0.25,
            ..ModelConfig::default()
        };
        let kv = KeyValues::parse(&c.to_text()).unwrap();
        let mut back = ModelConfig::default();
        back.apply(&kv).unwrap();
        assert_eq!(back, c);
    }
}
