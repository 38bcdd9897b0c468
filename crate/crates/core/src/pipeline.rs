//! Per-patient glue between the stages: normalization, training sets, test
//! segments and probability streams.

use serde::{Deserialize, Serialize};

use crate::classifier::Network;
use crate::error::{Error, Result};
use crate::evaluation::{NetworkStreams, TestTrace};
use crate::imaging::store::SignalImages;
use crate::imaging::{
    balance, build_test_stream, build_train_interictal, build_train_preictal, compute_norm_stats,
    normalize_in_place, subsample, Dataset, ImageType, ImageWindow, NormScope, NormStats,
};
use crate::recording::{Recording, SeizureAnnotation};
use crate::timeline::{
    label_timeline, split_seizures, Phase, SplitPlan, Timeline, DEFAULT_GUARD_MINUTES,
};

pub const DEFAULT_TEST_HOURS: f64 = 4.5;
/// Images per inference batch.
pub const INFER_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Minimum distance of inter-ictal data from any seizure.
    pub guard_minutes: f64,
    pub norm_scope: NormScope,
    /// Length of signal scored before each test seizure.
    pub test_hours_per_seizure: f64,
    /// Caps the pre-ictal class (and with it the inter-ictal class).
    pub max_images_per_class: Option<usize>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            guard_minutes: DEFAULT_GUARD_MINUTES,
            norm_scope: NormScope::Global,
            test_hours_per_seizure: DEFAULT_TEST_HOURS,
            max_images_per_class: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.guard_minutes >= 0.0) || !(self.test_hours_per_seizure > 0.0) {
            return Err(Error::InvalidConfig(
                "guard must be ≥ 0 and test hours per seizure > 0".into(),
            ));
        }
        if self.max_images_per_class == Some(0) {
            return Err(Error::InvalidConfig(
                "max_images_per_class must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Span of signal scored for one test seizure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestSegment {
    pub seizure: usize,
    pub start_s: f64,
    /// The seizure onset.
    pub end_s: f64,
}

/// A preprocessed recording normalized for imaging.
#[derive(Debug, Clone)]
pub struct PreparedPatient {
    pub patient_id: String,
    pub fs: f64,
    pub channels: Vec<Vec<f64>>,
    pub annotations: Vec<SeizureAnnotation>,
    pub duration_s: f64,
    pub stats: NormStats,
    /// Samples clipped into [0, 1] by normalization.
    pub clamped: usize,
    pub split: SplitPlan,
    pub config: PipelineConfig,
}

impl PreparedPatient {
    /// Normalizes the (already preprocessed) recording in place.
    pub fn new(rec: Recording, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        rec.validate()?;
        let split = split_seizures(rec.annotations.len())?;
        let duration_s = rec.duration_s();
        let mut channels = rec.samples;
        let refs: Vec<&[f64]> = channels.iter().map(Vec::as_slice).collect();
        let stats = compute_norm_stats(&refs, config.norm_scope)?;
        let clamped = normalize_in_place(&mut channels, &stats);
        Ok(Self {
            patient_id: rec.patient_id,
            fs: rec.fs,
            channels,
            annotations: rec.annotations,
            duration_s,
            stats,
            clamped,
            split,
            config,
        })
    }

    pub fn timeline(&self, x_min: u32) -> Result<Timeline> {
        label_timeline(
            &self.annotations,
            self.duration_s,
            x_min as f64,
            self.config.guard_minutes,
        )
    }

    /// Balanced training windows for one network, plus builder warnings.
    pub fn training_set(
        &self,
        image_type: ImageType,
        x_min: u32,
    ) -> Result<(Dataset, Vec<String>)> {
        let tl = self.timeline(x_min)?;
        let train = &self.split.train_seizure_indices;
        let intervals: Vec<_> = tl
            .intervals
            .iter()
            .filter(|iv| {
                iv.label != Phase::Preictal || iv.seizure.is_some_and(|s| train.contains(&s))
            })
            .cloned()
            .collect();
        let (mut pre, mut warnings) = build_train_preictal(&intervals, self.fs, image_type);
        if pre.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no pre-ictal {image_type} images for X = {x_min} min"
            )));
        }
        if let Some(cap) = self.config.max_images_per_class {
            pre = subsample(pre, cap, self.config.seed);
        }
        let (inter, w2) = build_train_interictal(
            &intervals,
            self.fs,
            image_type,
            pre.len(),
            train,
            self.config.seed,
        )?;
        warnings.extend(w2);
        warnings.extend(tl.warnings);
        Ok((balance(pre, inter, self.config.seed)?, warnings))
    }

    /// Lazy image view over windows of this patient.
    pub fn images<'a>(
        &'a self,
        windows: &'a [ImageWindow],
        image_type: ImageType,
    ) -> SignalImages<'a> {
        SignalImages::new(&self.channels, windows, image_type)
    }

    /// For every test seizure: up to `test_hours_per_seizure` before the
    /// onset, never reaching back past the previous seizure's offset plus
    /// the guard.
    pub fn test_segments(&self) -> Result<Vec<TestSegment>> {
        let guard_s = self.config.guard_minutes * 60.0;
        let span_s = self.config.test_hours_per_seizure * 3600.0;
        self.split
            .test_seizure_indices
            .iter()
            .map(|&k| {
                let onset = self.annotations[k].onset_s;
                let floor = if k == 0 {
                    0.0
                } else {
                    self.annotations[k - 1].offset_s + guard_s
                };
                let start = (onset - span_s).max(floor).max(0.0);
                if start >= onset {
                    return Err(Error::InsufficientData(format!(
                        "no usable signal before test seizure {k} (onset {onset} s)"
                    )));
                }
                Ok(TestSegment {
                    seizure: k,
                    start_s: start,
                    end_s: onset,
                })
            })
            .collect()
    }

    /// Scores every test segment with `net`.
    pub fn streams(
        &self,
        net: &Network<f32>,
        image_type: ImageType,
        x_min: u32,
    ) -> Result<NetworkStreams> {
        let tl = self.timeline(x_min)?;
        let traces = self
            .test_segments()?
            .into_iter()
            .map(|seg| {
                let windows = build_test_stream(seg.start_s, seg.end_s, self.fs, image_type, None)?;
                let raw_p = net.predict_source(&self.images(&windows, image_type), INFER_BATCH)?;
                Ok(TestTrace {
                    seizure: seg.seizure,
                    onset_s: seg.end_s,
                    t_s: windows.iter().map(|w| w.t_end_s(self.fs)).collect(),
                    raw_p,
                    total_hours: (seg.end_s - seg.start_s) / 3600.0,
                    interictal_hours: tl.overlap_seconds(Phase::Interictal, seg.start_s, seg.end_s)
                        / 3600.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkStreams {
            image_type,
            x_min,
            traces,
        })
    }
}
