//! Annotated multi-channel EEG recordings and their on-disk format.
//!
//! A recording is stored as two sibling files:
//!
//! * `<name>.json`: header with version, patient id, channel count, sampling
//!   rate, sample count, channel names and seizure annotations;
//! * `<name>.f32`: little-endian 32-bit floats, sample-major interleaved
//!   (`s0·ch0, s0·ch1, …, s0·chN, s1·ch0, …`).
//!
//! Samples are held in memory as `f64` so that filtering and referencing
//! keep full precision; values read from disk are exactly representable.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::{read_to_string, write_atomic};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_FS: f64 = 256.0;
pub const N_CHANNELS: usize = 19;

/// 10-20 system electrodes in the row order used for imaging.
pub const STANDARD_CHANNELS: [&str; N_CHANNELS] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz",
    "P4", "T6", "O1", "O2",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    Clinical,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeizureAnnotation {
    pub onset_s: f64,
    pub offset_s: f64,
    pub kind: AnnotationKind,
}

impl SeizureAnnotation {
    pub fn new(onset_s: f64, offset_s: f64, kind: AnnotationKind) -> Self {
        Self {
            onset_s,
            offset_s,
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub patient_id: String,
    pub fs: f64,
    pub channel_names: Vec<String>,
    /// Channel-major samples: `samples[ch][t]`.
    pub samples: Vec<Vec<f64>>,
    pub annotations: Vec<SeizureAnnotation>,
}

impl Recording {
    /// Builds a recording, sorting annotations by onset and checking every
    /// structural invariant.
    pub fn new(
        patient_id: impl Into<String>,
        fs: f64,
        channel_names: Vec<String>,
        samples: Vec<Vec<f64>>,
        mut annotations: Vec<SeizureAnnotation>,
    ) -> Result<Self> {
        annotations.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
        let rec = Self {
            patient_id: patient_id.into(),
            fs,
            channel_names,
            samples,
            annotations,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::InvalidRecording(format!(
                "sampling rate must be positive, got {}",
                self.fs
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::InvalidRecording("no channels".into()));
        }
        if self.channel_names.len() != self.samples.len() {
            return Err(Error::InvalidRecording(format!(
                "{} channel names for {} channels",
                self.channel_names.len(),
                self.samples.len()
            )));
        }
        let n = self.n_samples();
        if let Some((i, ch)) = self.samples.iter().enumerate().find(|(_, c)| c.len() != n) {
            return Err(Error::InvalidRecording(format!(
                "channel {i} has {} samples, channel 0 has {n}",
                ch.len()
            )));
        }
        let duration = self.duration_s();
        let mut prev_offset = f64::NEG_INFINITY;
        for (i, a) in self.annotations.iter().enumerate() {
            if !(a.onset_s >= 0.0 && a.onset_s < a.offset_s && a.offset_s <= duration) {
                return Err(Error::InvalidRecording(format!(
                    "annotation {i} ({}, {}) outside 0 <= onset < offset <= {duration}",
                    a.onset_s, a.offset_s
                )));
            }
            if a.onset_s < prev_offset {
                return Err(Error::InvalidRecording(format!(
                    "annotation {i} overlaps its predecessor or is out of order"
                )));
            }
            prev_offset = a.offset_s;
        }
        Ok(())
    }

    /// Seizure onsets in seconds, in chronological order.
    pub fn onsets(&self) -> Vec<f64> {
        self.annotations.iter().map(|a| a.onset_s).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    patient_id: String,
    channels: usize,
    fs: f64,
    sample_count: usize,
    channel_names: Vec<String>,
    annotations: Vec<SeizureAnnotation>,
}

/// Path of the raw sample file that accompanies a header.
pub fn raw_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("f32")
}

pub fn load_recording(path: &Path) -> Result<Recording> {
    let text = read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    // Check the version before the full schema so that future layouts report
    // the right error.
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::MalformedHeader("missing integer field `version`".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::UnsupportedVersion {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header =
        serde_json::from_value(value).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.channels == 0 || header.channel_names.len() != header.channels {
        return Err(Error::MalformedHeader(format!(
            "channels = {} but {} channel names",
            header.channels,
            header.channel_names.len()
        )));
    }

    let raw = raw_path(path);
    let file = File::open(&raw).map_err(|e| Error::io(&raw, e))?;
    let byte_len = file.metadata().map_err(|e| Error::io(&raw, e))?.len() as usize;
    let frame_bytes = 4 * header.channels;
    if byte_len != header.sample_count * frame_bytes {
        let found = if byte_len % frame_bytes == 0 {
            (byte_len / frame_bytes).to_string()
        } else {
            format!("{:.3}", byte_len as f64 / frame_bytes as f64)
        };
        return Err(Error::SampleCountMismatch {
            declared: header.sample_count,
            found,
        });
    }

    let mut samples = vec![Vec::with_capacity(header.sample_count); header.channels];
    let mut reader = BufReader::with_capacity(1 << 20, file);
    let mut frame = vec![0u8; frame_bytes];
    for _ in 0..header.sample_count {
        reader
            .read_exact(&mut frame)
            .map_err(|e| Error::io(&raw, e))?;
        for (ch, bytes) in samples.iter_mut().zip(frame.chunks_exact(4)) {
            ch.push(f64::from(f32::from_le_bytes([
                bytes[0], bytes[1], bytes[2], bytes[3],
            ])));
        }
    }

    Recording::new(
        header.patient_id,
        header.fs,
        header.channel_names,
        samples,
        header.annotations,
    )
}

/// Writes header and raw samples. Samples are stored as `f32`; recordings
/// whose samples are `f32`-representable round-trip bit-exactly.
pub fn save_recording(rec: &Recording, path: &Path) -> Result<()> {
    rec.validate()?;
    let header = Header {
        version: FORMAT_VERSION,
        patient_id: rec.patient_id.clone(),
        channels: rec.n_channels(),
        fs: rec.fs,
        sample_count: rec.n_samples(),
        channel_names: rec.channel_names.clone(),
        annotations: rec.annotations.clone(),
    };
    let raw = raw_path(path);
    write_atomic(&raw, |w| {
        let mut frame = Vec::with_capacity(4 * rec.n_channels());
        for t in 0..rec.n_samples() {
            frame.clear();
            for ch in &rec.samples {
                frame.extend_from_slice(&(ch[t] as f32).to_le_bytes());
            }
            w.write_all(&frame)?;
        }
        Ok(())
    })?;
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, &header)?;
        w.write_all(b"\n")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        STANDARD_CHANNELS[..n]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn ramp_recording(seconds: usize) -> Recording {
        let n = seconds * 256;
        let samples = (0..N_CHANNELS)
            .map(|c| (0..n).map(|t| (c * 1000 + t % 977) as f64 * 0.25).collect())
            .collect();
        Recording::new("p1", 256.0, names(N_CHANNELS), samples, vec![]).unwrap()
    }

    #[test]
    fn sixty_seconds_gives_15360_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        save_recording(&ramp_recording(60), &path).unwrap();
        let back = load_recording(&path).unwrap();
        assert_eq!(back.n_samples(), 15360);
        assert_eq!(back.n_channels(), 19);
    }

    #[test]
    fn annotations_are_sorted_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let mut rec = ramp_recording(4 * 3600);
        rec.annotations = vec![
            SeizureAnnotation::new(3600.0, 3660.0, AnnotationKind::Clinical),
            SeizureAnnotation::new(10800.0, 10870.0, AnnotationKind::Clinical),
        ];
        save_recording(&rec, &path).unwrap();
        // Rewrite header with the annotations swapped.
        let mut header: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        header["annotations"].as_array_mut().unwrap().reverse();
        std::fs::write(&path, header.to_string()).unwrap();

        let back = load_recording(&path).unwrap();
        assert_eq!(back.annotations.len(), 2);
        assert_eq!(back.onsets(), vec![3600.0, 10800.0]);
    }

    #[test]
    fn short_raw_file_is_a_sample_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let header = serde_json::json!({
            "version": 1, "patient_id": "x", "channels": 19, "fs": 256.0,
            "sample_count": 1000, "channel_names": names(19), "annotations": []
        });
        std::fs::write(&path, header.to_string()).unwrap();
        std::fs::write(raw_path(&path), vec![0u8; 999 * 19 * 4]).unwrap();
        let err = load_recording(&path).unwrap_err();
        assert!(
            matches!(err, Error::SampleCountMismatch { declared: 1000, .. }),
            "{err}"
        );
    }

    #[test]
    fn unsupported_version_and_malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        std::fs::write(&path, r#"{"version": 2}"#).unwrap();
        assert!(matches!(
            load_recording(&path),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
        std::fs::write(&path, r#"{"version": 1, "patient_id": 3}"#).unwrap();
        assert!(matches!(
            load_recording(&path),
            Err(Error::MalformedHeader(_))
        ));
        std::fs::write(&path, "not json").unwrap();
        assert!(matches!(
            load_recording(&path),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn header_lists_every_annotation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let mut rec = ramp_recording(100);
        rec.annotations = (0..3)
            .map(|i| {
                SeizureAnnotation::new(
                    10.0 + 30.0 * i as f64,
                    20.0 + 30.0 * i as f64,
                    AnnotationKind::Synthetic,
                )
            })
            .collect();
        save_recording(&rec, &path).unwrap();
        let header: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(header["annotations"].as_array().unwrap().len(), 3);
        assert_eq!(header["annotations"][1]["kind"], "synthetic");
        assert_eq!(load_recording(&path).unwrap(), rec);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let rec = ramp_recording(1);
        let err = save_recording(&rec, Path::new("/nonexistent-dir/sub/r.json")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn invariants_are_enforced() {
        let ok = ramp_recording(10);
        let mut bad = ok.clone();
        bad.samples[3].pop();
        assert!(bad.validate().is_err());

        let overlapping = vec![
            SeizureAnnotation::new(1.0, 5.0, AnnotationKind::Clinical),
            SeizureAnnotation::new(4.0, 6.0, AnnotationKind::Clinical),
        ];
        assert!(Recording::new("p", 256.0, names(19), ok.samples.clone(), overlapping).is_err());

        let past_end = vec![SeizureAnnotation::new(5.0, 11.0, AnnotationKind::Clinical)];
        assert!(Recording::new("p", 256.0, names(19), ok.samples.clone(), past_end).is_err());
        assert!(Recording::new("p", 0.0, names(19), ok.samples.clone(), vec![]).is_err());
    }
}
