//! Filtering and re-referencing applied before imaging.
//!
//! Stage order is fixed: bandpass → notch → average reference → optional
//! external ICA hook. Filtering is causal (forward only).

mod biquad;
mod design;

use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

pub use biquad::{apply_filter, apply_filter_channels, Biquad, BiquadCascade};
pub use design::{design_bandpass, design_notch};

use crate::error::{Error, Result};
use crate::io_util::read_to_string;
use crate::recording::{load_recording, save_recording, Recording};

/// Artifact-removal hook. `External` runs `<command> <in-path> <out-path>`
/// on recording header files and requires exit status 0.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum IcaHook {
    #[default]
    Off,
    External(String),
}

impl Serialize for IcaHook {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            IcaHook::Off => s.serialize_str("off"),
            IcaHook::External(cmd) => s.serialize_str(cmd),
        }
    }
}

impl<'de> Deserialize<'de> for IcaHook {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(match s.trim() {
            "" | "off" => IcaHook::Off,
            cmd => IcaHook::External(cmd.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub bandpass: bool,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub band_order: usize,
    pub notch: bool,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub average_reference: bool,
    pub ica_hook: IcaHook,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            bandpass: true,
            band_low_hz: 0.5,
            band_high_hz: 100.0,
            band_order: 4,
            notch: true,
            notch_hz: 50.0,
            notch_q: 25.0,
            average_reference: true,
            ica_hook: IcaHook::Off,
        }
    }
}

impl PreprocessConfig {
    /// Every stage disabled.
    pub fn passthrough() -> Self {
        Self {
            bandpass: false,
            notch: false,
            average_reference: false,
            ..Self::default()
        }
    }

    pub fn validate(&self, fs: f64) -> Result<()> {
        let nyquist = fs / 2.0;
        if self.bandpass
            && !(self.band_low_hz > 0.0
                && self.band_low_hz < self.band_high_hz
                && self.band_high_hz < nyquist)
        {
            return Err(Error::InvalidConfig(format!(
                "band edges must satisfy 0 < low < high < fs/2 ({} , {}, {nyquist})",
                self.band_low_hz, self.band_high_hz
            )));
        }
        if self.notch && !(self.notch_hz > 0.0 && self.notch_hz < nyquist && self.notch_q > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "notch {} Hz / Q {} invalid for fs {fs}",
                self.notch_hz, self.notch_q
            )));
        }
        Ok(())
    }

    /// Reads a plain-text `key = value` file.
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_kv_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }
}

/// Subtracts the instantaneous cross-channel mean from every sample.
pub fn average_reference(rec: &Recording) -> Result<Recording> {
    let mut out = rec.clone();
    average_reference_in_place(&mut out.samples)?;
    Ok(out)
}

pub fn average_reference_in_place(channels: &mut [Vec<f64>]) -> Result<()> {
    if channels.len() < 2 {
        return Err(Error::InvalidRecording(format!(
            "average reference needs at least 2 channels, got {}",
            channels.len()
        )));
    }
    let n = channels[0].len();
    let n_ch = channels.len() as f64;
    const BLOCK: usize = 4096;
    let mut mean = vec![0.0; BLOCK];
    for start in (0..n).step_by(BLOCK) {
        let end = (start + BLOCK).min(n);
        let mean = &mut mean[..end - start];
        mean.fill(0.0);
        for ch in channels.iter() {
            for (m, &v) in mean.iter_mut().zip(&ch[start..end]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n_ch);
        for ch in channels.iter_mut() {
            for (v, &m) in ch[start..end].iter_mut().zip(mean.iter()) {
                *v -= m;
            }
        }
    }
    Ok(())
}

/// Runs the configured stages in order. Annotations and sampling rate are
/// never modified.
pub fn preprocess_recording(mut rec: Recording, cfg: &PreprocessConfig) -> Result<Recording> {
    cfg.validate(rec.fs)?;
    if cfg.bandpass {
        let bp = design_bandpass(rec.fs, cfg.band_low_hz, cfg.band_high_hz, cfg.band_order)?;
        apply_filter_channels(&mut rec.samples, &bp);
    }
    if cfg.notch {
        let notch = design_notch(rec.fs, cfg.notch_hz, cfg.notch_q)?;
        apply_filter_channels(&mut rec.samples, &notch);
    }
    if cfg.average_reference {
        average_reference_in_place(&mut rec.samples)?;
    }
    match &cfg.ica_hook {
        IcaHook::Off => Ok(rec),
        IcaHook::External(cmd) => run_ica_hook(&rec, cmd),
    }
}

fn run_ica_hook(rec: &Recording, command: &str) -> Result<Recording> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let in_path = dir.path().join("ica_in.json");
    let out_path = dir.path().join("ica_out.json");
    save_recording(rec, &in_path)?;

    let mut parts = command.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| Error::Hook("empty hook command".into()))?;
    let status = Command::new(program)
        .args(parts)
        .arg(&in_path)
        .arg(&out_path)
        .status()
        .map_err(|e| Error::Hook(format!("could not start `{command}`: {e}")))?;
    if !status.success() {
        return Err(Error::Hook(format!("`{command}` exited with {status}")));
    }
    let out = load_recording(&out_path)?;
    if out.fs != rec.fs || out.annotations != rec.annotations || out.n_samples() != rec.n_samples()
    {
        return Err(Error::Hook(format!(
            "`{command}` changed the sampling rate, length or annotations"
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::STANDARD_CHANNELS;

    fn rec_from(samples: Vec<Vec<f64>>) -> Recording {
        let names = STANDARD_CHANNELS[..samples.len()]
            .iter()
            .map(|s| s.to_string())
            .collect();
        Recording::new("t", 256.0, names, samples, vec![]).unwrap()
    }

    #[test]
    fn two_channel_reference() {
        let rec = rec_from(vec![vec![1.0], vec![3.0]]);
        let out = average_reference(&rec).unwrap();
        assert_eq!(out.samples, vec![vec![-1.0], vec![1.0]]);
    }

    #[test]
    fn identical_channels_become_zero() {
        let ch: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin() * 40.0).collect();
        let rec = rec_from(vec![ch.clone(), ch.clone(), ch.clone(), ch.clone()]);
        let out = average_reference(&rec).unwrap();
        assert!(out.samples.iter().flatten().all(|&v| v == 0.0));

        // With 19 channels the mean is only exact to rounding.
        let rec = rec_from(vec![ch; 19]);
        let out = average_reference(&rec).unwrap();
        assert!(out.samples.iter().flatten().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn single_channel_rejected() {
        let rec = rec_from(vec![vec![1.0, 2.0]]);
        assert!(average_reference(&rec).is_err());
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg = PreprocessConfig::default();
        let text = cfg.to_kv_string();
        assert_eq!(PreprocessConfig::parse(&text).unwrap(), cfg);

        let partial =
            PreprocessConfig::parse("notch_q = 10.0\nica_hook = \"my-ica --fast\"\n").unwrap();
        assert_eq!(partial.notch_q, 10.0);
        assert_eq!(partial.band_order, 4);
        assert_eq!(partial.ica_hook, IcaHook::External("my-ica --fast".into()));
        assert!(PreprocessConfig::parse("bogus = 1").is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = PreprocessConfig {
            band_high_hz: 200.0,
            ..PreprocessConfig::default()
        };
        assert!(cfg.validate(256.0).is_err());
        assert!(PreprocessConfig::default().validate(256.0).is_ok());
    }
}
