//! Brain-state labelling of a recording and the train/test seizure split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recording::{Recording, SeizureAnnotation};

pub const DEFAULT_GUARD_MINUTES: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Preictal,
    Interictal,
    Ictal,
    Excluded,
}

/// A labelled span `[start_s, end_s)` of a recording.
///
/// `seizure` ties pre-ictal and ictal spans to their seizure; inter-ictal
/// spans point at the next seizure they precede (`None` after the last one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalLabel {
    pub start_s: f64,
    pub end_s: f64,
    pub label: Phase,
    pub seizure: Option<usize>,
}

impl IntervalLabel {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub intervals: Vec<IntervalLabel>,
    pub warnings: Vec<String>,
}

impl Timeline {
    pub fn of_phase(&self, phase: Phase) -> impl Iterator<Item = &IntervalLabel> {
        self.intervals.iter().filter(move |iv| iv.label == phase)
    }

    pub fn total_seconds(&self, phase: Phase) -> f64 {
        self.of_phase(phase).map(IntervalLabel::duration_s).sum()
    }

    /// Label in force at time `t` (the last interval owns its end point).
    pub fn phase_at(&self, t: f64) -> Option<Phase> {
        let idx = self.intervals.partition_point(|iv| iv.end_s <= t);
        match self.intervals.get(idx) {
            Some(iv) if iv.start_s <= t => Some(iv.label),
            _ => self
                .intervals
                .last()
                .filter(|iv| iv.end_s == t)
                .map(|iv| iv.label),
        }
    }

    /// Seconds of `phase` inside `[start, end)`.
    pub fn overlap_seconds(&self, phase: Phase, start: f64, end: f64) -> f64 {
        self.of_phase(phase)
            .map(|iv| (iv.end_s.min(end) - iv.start_s.max(start)).max(0.0))
            .sum()
    }
}

/// Partitions `[0, duration]` into pre-ictal, ictal, inter-ictal and
/// excluded spans.
///
/// Pre-ictal is `[onset − X·60, onset)`; inter-ictal is everything farther
/// than `guard_minutes` from every seizure boundary. Where pre-ictal windows
/// of neighbouring seizures overlap, the later seizure keeps the overlap.
/// Ictal spans always win over pre-ictal ones.
pub fn label_timeline(
    annotations: &[SeizureAnnotation],
    duration_s: f64,
    preictal_minutes: f64,
    guard_minutes: f64,
) -> Result<Timeline> {
    if !(preictal_minutes > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "pre-ictal minutes must be positive, got {preictal_minutes}"
        )));
    }
    if !(guard_minutes >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "guard minutes must be non-negative, got {guard_minutes}"
        )));
    }
    let pre = preictal_minutes * 60.0;
    let guard = guard_minutes * 60.0;
    let mut warnings = Vec::new();

    for (i, a) in annotations.iter().enumerate() {
        if a.onset_s - pre < 0.0 {
            warnings.push(format!(
                "seizure {i}: pre-ictal window truncated at recording start ({:.0} s available)",
                a.onset_s
            ));
        }
        if i > 0 {
            let prev = &annotations[i - 1];
            if a.onset_s - pre < prev.offset_s {
                warnings.push(format!(
                    "seizure {i}: pre-ictal window overlaps seizure {} ({:.0} s apart); later seizure keeps the overlap",
                    i - 1,
                    a.onset_s - prev.offset_s
                ));
            } else if a.onset_s - pre < prev.onset_s {
                warnings.push(format!(
                    "seizure {i}: pre-ictal window overlaps pre-ictal window of seizure {}",
                    i - 1
                ));
            }
        }
    }

    let mut cuts = vec![0.0, duration_s];
    for a in annotations {
        cuts.extend([
            a.onset_s,
            a.offset_s,
            a.onset_s - pre,
            a.onset_s - guard,
            a.offset_s + guard,
        ]);
    }
    cuts.retain(|&c| c >= 0.0 && c <= duration_s);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let classify = |m: f64| -> (Phase, Option<usize>) {
        if let Some(i) = annotations
            .iter()
            .position(|a| m >= a.onset_s && m <= a.offset_s)
        {
            return (Phase::Ictal, Some(i));
        }
        if let Some(i) = annotations
            .iter()
            .rposition(|a| m >= a.onset_s - pre && m < a.onset_s)
        {
            return (Phase::Preictal, Some(i));
        }
        let next = annotations.iter().position(|a| a.onset_s > m);
        let far = annotations
            .iter()
            .all(|a| m < a.onset_s - guard || m > a.offset_s + guard);
        if far {
            (Phase::Interictal, next)
        } else {
            (Phase::Excluded, next)
        }
    };

    let mut intervals: Vec<IntervalLabel> = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (label, seizure) = classify(0.5 * (a + b));
        match intervals.last_mut() {
            Some(last) if last.label == label && last.seizure == seizure => last.end_s = b,
            _ => intervals.push(IntervalLabel {
                start_s: a,
                end_s: b,
                label,
                seizure,
            }),
        }
    }
    if intervals.is_empty() {
        // Zero-length recording.
        intervals.push(IntervalLabel {
            start_s: 0.0,
            end_s: duration_s,
            label: Phase::Interictal,
            seizure: None,
        });
    }
    Ok(Timeline {
        intervals,
        warnings,
    })
}

/// Convenience wrapper over [`label_timeline`] using the recording's own
/// annotations and duration.
pub fn label_recording(
    rec: &Recording,
    preictal_minutes: f64,
    guard_minutes: f64,
) -> Result<Timeline> {
    label_timeline(
        &rec.annotations,
        rec.duration_s(),
        preictal_minutes,
        guard_minutes,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_seizure_indices: Vec<usize>,
    pub test_seizure_indices: Vec<usize>,
}

/// Chronological split: the first `floor(2n/3)` seizures train, the rest test.
pub fn split_seizures(n_seizures: usize) -> Result<SplitPlan> {
    if n_seizures < 2 {
        return Err(Error::NotEnoughSeizures(format!(
            "a train/test split needs at least 2 seizures, recording has {n_seizures}"
        )));
    }
    let n_train = 2 * n_seizures / 3;
    Ok(SplitPlan {
        train_seizure_indices: (0..n_train).collect(),
        test_seizure_indices: (n_train..n_seizures).collect(),
    })
}
