//! Synthetic EEG-like recordings: band-limited sinusoids plus 1/f noise,
//! linearly mixed across channels.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::DataError;
use crate::config::{ConfigError, KeyValues};
use crate::rng::{derive_seed, seeded, Rng64};
use crate::signal::Recording;

/// A frequency band with the amplitude range of its components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub low_hz: f64,
    pub high_hz: f64,
    pub amp_min: f64,
    pub amp_max: f64,
}

impl Band {
    pub const fn new(low_hz: f64, high_hz: f64, amp_min: f64, amp_max: f64) -> Self {
        Self {
            low_hz,
            high_hz,
            amp_min,
            amp_max,
        }
    }
}

/// `low-high:amp_min-amp_max`, e.g. `8-13:0.3-0.8`.
impl FromStr for Band {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let range = |r: &str| -> Option<(f64, f64)> {
            let (a, b) = r.split_once('-')?;
            Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
        };
        let (freq, amp) = s.split_once(':').ok_or_else(|| format!("band `{s}` lacks `:`"))?;
        let (low_hz, high_hz) = range(freq).ok_or_else(|| format!("bad frequency range `{freq}`"))?;
        let (amp_min, amp_max) = range(amp).ok_or_else(|| format!("bad amplitude range `{amp}`"))?;
        Ok(Self::new(low_hz, high_hz, amp_min, amp_max))
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}:{}-{}", self.low_hz, self.high_hz, self.amp_min, self.amp_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_subjects: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub channels: usize,
    pub bands: Vec<Band>,
    /// Sinusoids drawn per band, channel and subject.
    pub components_per_band: usize,
    /// Standard deviation of the 1/f noise term.
    pub pink_amplitude: f64,
    /// `0` keeps channels independent, `1` makes them identical.
    pub mixing: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_subjects: 8,
            duration_s: 60.0,
            sample_rate_hz: 128.0,
            channels: 14,
            bands: vec![
                Band::new(1.0, 4.0, 0.5, 1.0),
                Band::new(4.0, 8.0, 0.3, 0.7),
                Band::new(8.0, 13.0, 0.3, 0.8),
                Band::new(13.0, 30.0, 0.05, 0.2),
            ],
            components_per_band: 2,
            pink_amplitude: 0.1,
            mixing: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let nyquist = self.sample_rate_hz / 2.0;
        for b in &self.bands {
            let ok = b.low_hz > 0.0 && b.low_hz <= b.high_hz && b.high_hz < nyquist;
            if !ok {
                return Err(DataError::BadBand {
                    low: b.low_hz,
                    high: b.high_hz,
                    rate: self.sample_rate_hz,
                });
            }
            if !(b.amp_min >= 0.0 && b.amp_min <= b.amp_max) {
                return Err(DataError::BadSynth(format!(
                    "amplitude range {}-{}",
                    b.amp_min, b.amp_max
                )));
            }
        }
        if !(self.pink_amplitude >= 0.0) {
            return Err(DataError::BadSynth("pink_amplitude must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.mixing) {
            return Err(DataError::BadSynth(format!("mixing {} outside [0, 1]", self.mixing)));
        }
        if self.num_subjects == 0 || self.channels == 0 || self.samples() < 2 {
            return Err(DataError::BadSynth(
                "need subjects, channels and at least 2 samples".into(),
            ));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round().max(0.0) as usize
    }

    /// Applies `synth.*` entries; `synth.bands` is a comma-separated band list.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<(), ConfigError> {
        for entry in kv.with_prefix("synth.") {
            match &entry.key["synth.".len()..] {
                "num_subjects" => self.num_subjects = entry.parse()?,
                "duration_s" => self.duration_s = entry.parse()?,
                "sample_rate_hz" => self.sample_rate_hz = entry.parse()?,
                "channels" => self.channels = entry.parse()?,
                "components_per_band" => self.components_per_band = entry.parse()?,
                "pink_amplitude" => self.pink_amplitude = entry.parse()?,
                "mixing" => self.mixing = entry.parse()?,
                "seed" => self.seed = entry.parse()?,
                "bands" => {
                    self.bands = entry
                        .value
                        .split(',')
                        .map(|b| b.trim().parse::<Band>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| ConfigError::BadValue {
                            key: entry.key.clone(),
                            value: entry.value.clone(),
                            line: entry.line,
                        })?;
                }
                _ => return Err(entry.unknown()),
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let bands: Vec<String> = self.bands.iter().map(Band::to_string).collect();
        format!(
            "synth.num_subjects = {}\nsynth.duration_s = {}\nsynth.sample_rate_hz = {}\nsynth.channels = {}\n\
             synth.bands = {}\nsynth.components_per_band = {}\nsynth.pink_amplitude = {}\nsynth.mixing = {}\n\
             synth.seed = {}\n",
            self.num_subjects,
            self.duration_s,
            self.sample_rate_hz,
            self.channels,
            bands.join(", "),
            self.components_per_band,
            self.pink_amplitude,
            self.mixing,
            self.seed
        )
    }
}

/// 1/f noise from white Gaussian input through Kellet's three-pole
/// economy filter, rescaled to unit sample standard deviation.
fn pink_noise(rng: &mut Rng64, n: usize) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            b0 = 0.99765 * b0 + w * 0.099_046_0;
            b1 = 0.96300 * b1 + w * 0.296_516_4;
            b2 = 0.57000 * b2 + w * 1.052_691_3;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let sd = (out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    if sd > 0.0 {
        out.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    out
}

fn subject_sources(cfg: &SynthConfig, rng: &mut Rng64) -> Array2<f64> {
    let n = cfg.samples();
    let mut s = Array2::zeros((n, cfg.channels));
    for mut col in s.axis_iter_mut(Axis(1)) {
        for band in &cfg.bands {
            for _ in 0..cfg.components_per_band {
                let f = rng.gen_range(band.low_hz..=band.high_hz);
                let a = rng.gen_range(band.amp_min..=band.amp_max);
                let phase = rng.gen_range(0.0..TAU);
                let w = TAU * f / cfg.sample_rate_hz;
                for (t, v) in col.iter_mut().enumerate() {
                    *v += a * (w * t as f64 + phase).sin();
                }
            }
        }
        if cfg.pink_amplitude > 0.0 {
            for (v, e) in col.iter_mut().zip(pink_noise(rng, n)) {
                *v += cfg.pink_amplitude * e;
            }
        }
    }
    s
}

/// Generates one recording per subject. Subject `k` (0-based) draws from
/// its own stream seeded with `derive_seed(seed, k)`, so adding subjects
/// leaves earlier ones unchanged.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<Recording<f64>>, DataError> {
    cfg.validate()?;
    (0..cfg.num_subjects)
        .map(|k| {
            let mut rng = seeded(derive_seed(cfg.seed, k as u64));
            let s = subject_sources(cfg, &mut rng);
            let mean = s.mean_axis(Axis(1)).expect("at least one channel");
            let m = cfg.mixing;
            let mut x = s * (1.0 - m);
            for mut col in x.axis_iter_mut(Axis(1)) {
                col.scaled_add(m, &mean);
            }
            Ok(Recording::new(x, format!("synth{:02}", k + 1), cfg.sample_rate_hz)?)
        })
        .collect()
}
