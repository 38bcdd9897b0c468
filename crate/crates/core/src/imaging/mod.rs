//! Signal normalization and conversion of EEG windows into images.
//!
//! An image stacks `k` consecutive one-second segments of all channels
//! vertically, earliest on top: a 1 s image is `19×256`, a 5 s image
//! `95×256` and a 10 s image `190×256`. Row `j·19 + c` holds channel `c`
//! during second `j` of the window.
//!
//! Builders return lightweight [`ImageWindow`] descriptors; pixels are
//! rendered on demand from the normalized signal (see [`store`]).

pub mod store;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeline::{IntervalLabel, Phase, Timeline};

pub use store::{load_dataset, save_dataset, DatasetMeta, ImageSet, ImageSource, SignalImages};

/// Samples in one stacked segment (one second at 256 Hz).
pub const SEGMENT_SAMPLES: usize = 256;
/// Training pre-ictal step: half a second.
pub const PREICTAL_STEP: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ImageType {
    #[serde(rename = "1s")]
    OneSec,
    #[serde(rename = "5s")]
    FiveSec,
    #[serde(rename = "10s")]
    TenSec,
}

impl ImageType {
    pub const ALL: [ImageType; 3] = [ImageType::OneSec, ImageType::FiveSec, ImageType::TenSec];

    /// Number of stacked one-second segments.
    pub fn stacks(self) -> usize {
        match self {
            ImageType::OneSec => 1,
            ImageType::FiveSec => 5,
            ImageType::TenSec => 10,
        }
    }

    pub fn seconds(self) -> u32 {
        self.stacks() as u32
    }

    pub fn rows_for(self, n_channels: usize) -> usize {
        n_channels * self.stacks()
    }

    pub fn rows(self) -> usize {
        self.rows_for(crate::recording::N_CHANNELS)
    }

    pub fn cols(self) -> usize {
        SEGMENT_SAMPLES
    }

    pub fn window_samples(self) -> usize {
        self.stacks() * SEGMENT_SAMPLES
    }

    /// Non-overlapping step used for training inter-ictal candidates.
    pub fn interictal_step(self) -> usize {
        self.window_samples()
    }
}

impl fmt::Display for ImageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.seconds())
    }
}

impl FromStr for ImageType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_end_matches('s') {
            "1" => Ok(ImageType::OneSec),
            "5" => Ok(ImageType::FiveSec),
            "10" => Ok(ImageType::TenSec),
            _ => Err(Error::InvalidConfig(format!(
                "unknown image type `{s}` (expected 1s, 5s or 10s)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormScope {
    Global,
    PerChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub mean: f64,
    /// Twice the largest absolute deviation from `mean`.
    pub half_range: f64,
}

impl ChannelNorm {
    /// Maps `x` into `[0, 1]`; the flag reports whether clamping was needed.
    #[inline]
    pub fn apply(&self, x: f64) -> (f64, bool) {
        if self.half_range == 0.0 {
            return (0.5, false);
        }
        let v = (x - self.mean) / self.half_range + 0.5;
        if v < 0.0 {
            (0.0, true)
        } else if v > 1.0 {
            (1.0, true)
        } else {
            (v, false)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub scope: NormScope,
    /// One entry for global scope, one per channel otherwise.
    pub channels: Vec<ChannelNorm>,
}

impl NormStats {
    pub fn global(mean: f64, half_range: f64) -> Self {
        Self {
            scope: NormScope::Global,
            channels: vec![ChannelNorm { mean, half_range }],
        }
    }

    pub fn for_channel(&self, ch: usize) -> ChannelNorm {
        match self.scope {
            NormScope::Global => self.channels[0],
            NormScope::PerChannel => self.channels[ch],
        }
    }

    pub fn mean(&self) -> f64 {
        self.channels[0].mean
    }

    pub fn half_range(&self) -> f64 {
        self.channels[0].half_range
    }
}

fn channel_norm<'a>(parts: impl Iterator<Item = &'a [f64]> + Clone) -> Option<ChannelNorm> {
    let (sum, count) = parts.clone().fold((0.0, 0usize), |(s, n), p| {
        (s + p.iter().sum::<f64>(), n + p.len())
    });
    if count == 0 {
        return None;
    }
    let mean = sum / count as f64;
    let max_dev = parts
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, &x| m.max((x - mean).abs()));
    Some(ChannelNorm {
        mean,
        half_range: 2.0 * max_dev,
    })
}

/// Mean and `2·max|x − mean|`, either over every channel jointly or per
/// channel. Pass whole channels for the joint train+test statistics, or
/// channel prefixes for train-only statistics.
pub fn compute_norm_stats(channels: &[&[f64]], scope: NormScope) -> Result<NormStats> {
    let empty = || Error::InsufficientData("cannot normalize an empty signal".into());
    match scope {
        NormScope::Global => {
            let norm = channel_norm(channels.iter().copied()).ok_or_else(empty)?;
            Ok(NormStats {
                scope,
                channels: vec![norm],
            })
        }
        NormScope::PerChannel => {
            let norms = channels
                .iter()
                .map(|c| channel_norm(std::iter::once(*c)).ok_or_else(empty))
                .collect::<Result<Vec<_>>>()?;
            if norms.is_empty() {
                return Err(empty());
            }
            Ok(NormStats {
                scope,
                channels: norms,
            })
        }
    }
}

/// Normalizes in place and returns how many samples were clamped.
pub fn normalize_in_place(channels: &mut [Vec<f64>], stats: &NormStats) -> usize {
    let mut clamped = 0;
    for (c, ch) in channels.iter_mut().enumerate() {
        let norm = stats.for_channel(c);
        for v in ch.iter_mut() {
            let (y, hit) = norm.apply(*v);
            *v = y;
            clamped += usize::from(hit);
        }
    }
    clamped
}

/// Out-of-place variant of [`normalize_in_place`].
pub fn normalize(channels: &[Vec<f64>], stats: &NormStats) -> (Vec<Vec<f64>>, usize) {
    let mut out = channels.to_vec();
    let clamped = normalize_in_place(&mut out, stats);
    (out, clamped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ImageLabel {
    Interictal = 0,
    Preictal = 1,
    Unlabeled = 2,
}

impl ImageLabel {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(ImageLabel::Interictal),
            1 => Some(ImageLabel::Preictal),
            2 => Some(ImageLabel::Unlabeled),
            _ => None,
        }
    }

    /// Class index used by the classifier (pre-ictal is class 1).
    pub fn class(self) -> Option<usize> {
        match self {
            ImageLabel::Interictal => Some(0),
            ImageLabel::Preictal => Some(1),
            ImageLabel::Unlabeled => None,
        }
    }
}

/// Where an image comes from: its first sample and, for training images,
/// the seizure it was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageWindow {
    pub start_sample: usize,
    pub image_type: ImageType,
    pub label: ImageLabel,
    pub seizure: Option<usize>,
}

impl ImageWindow {
    pub fn end_sample(&self) -> usize {
        self.start_sample + self.image_type.window_samples()
    }

    /// Time just past the window's last sample.
    pub fn t_end_s(&self, fs: f64) -> f64 {
        self.end_sample() as f64 / fs
    }
}

/// A rendered image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub pixels: Vec<f32>,
    pub rows: usize,
    pub cols: usize,
    pub label: ImageLabel,
    pub t_end_s: f64,
    pub image_type: ImageType,
}

impl ImageTensor {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.cols + col]
    }
}

/// Copies the window starting at `start` into `out` (row-major,
/// `rows_for(channels.len()) × 256`).
pub fn render_into(channels: &[Vec<f64>], start: usize, image_type: ImageType, out: &mut [f32]) {
    let n_ch = channels.len();
    debug_assert_eq!(out.len(), image_type.rows_for(n_ch) * SEGMENT_SAMPLES);
    for seg in 0..image_type.stacks() {
        let src = start + seg * SEGMENT_SAMPLES;
        for (c, ch) in channels.iter().enumerate() {
            let row = seg * n_ch + c;
            let dst = &mut out[row * SEGMENT_SAMPLES..(row + 1) * SEGMENT_SAMPLES];
            for (d, &s) in dst.iter_mut().zip(&ch[src..src + SEGMENT_SAMPLES]) {
                *d = s as f32;
            }
        }
    }
}

pub fn render(channels: &[Vec<f64>], window: &ImageWindow, fs: f64) -> ImageTensor {
    let rows = window.image_type.rows_for(channels.len());
    let mut pixels = vec![0.0; rows * SEGMENT_SAMPLES];
    render_into(
        channels,
        window.start_sample,
        window.image_type,
        &mut pixels,
    );
    ImageTensor {
        pixels,
        rows,
        cols: SEGMENT_SAMPLES,
        label: window.label,
        t_end_s: window.t_end_s(fs),
        image_type: window.image_type,
    }
}

/// Sample range covered by `[start_s, end_s)`.
pub fn sample_range(start_s: f64, end_s: f64, fs: f64) -> (usize, usize) {
    let a = (start_s * fs - 1e-6).ceil().max(0.0) as usize;
    let b = (end_s * fs + 1e-6).floor().max(0.0) as usize;
    (a, b.max(a))
}

/// Window starts `a, a+step, …` such that the whole window fits before `b`.
pub fn window_starts(
    a: usize,
    b: usize,
    window: usize,
    step: usize,
) -> impl Iterator<Item = usize> {
    let count = if b >= a + window {
        (b - a - window) / step + 1
    } else {
        0
    };
    (0..count).map(move |i| a + i * step)
}

/// Training pre-ictal windows: step of half a second for every image type.
/// Intervals too short for one window contribute nothing and a warning.
pub fn build_train_preictal(
    intervals: &[IntervalLabel],
    fs: f64,
    image_type: ImageType,
) -> (Vec<ImageWindow>, Vec<String>) {
    let mut windows = Vec::new();
    let mut warnings = Vec::new();
    for iv in intervals.iter().filter(|iv| iv.label == Phase::Preictal) {
        let (a, b) = sample_range(iv.start_s, iv.end_s, fs);
        let before = windows.len();
        windows.extend(
            window_starts(a, b, image_type.window_samples(), PREICTAL_STEP).map(|start| {
                ImageWindow {
                    start_sample: start,
                    image_type,
                    label: ImageLabel::Preictal,
                    seizure: iv.seizure,
                }
            }),
        );
        if windows.len() == before {
            warnings.push(format!(
                "pre-ictal interval [{}, {}) is shorter than one {image_type} window",
                iv.start_s, iv.end_s
            ));
        }
    }
    windows.sort_by_key(|w| w.start_sample);
    (windows, warnings)
}

/// Training inter-ictal windows: non-overlapping candidates drawn uniformly
/// without replacement, `needed / n` from the inter-ictal region before each
/// training seizure. A region that cannot supply its share passes the
/// shortfall to the others.
pub fn build_train_interictal(
    intervals: &[IntervalLabel],
    fs: f64,
    image_type: ImageType,
    needed: usize,
    train_seizures: &[usize],
    seed: u64,
) -> Result<(Vec<ImageWindow>, Vec<String>)> {
    if train_seizures.is_empty() {
        return Err(Error::InsufficientData("no training seizures".into()));
    }
    let groups: Vec<Vec<usize>> = train_seizures
        .iter()
        .map(|&s| {
            intervals
                .iter()
                .filter(|iv| iv.label == Phase::Interictal && iv.seizure == Some(s))
                .flat_map(|iv| {
                    let (a, b) = sample_range(iv.start_s, iv.end_s, fs);
                    window_starts(
                        a,
                        b,
                        image_type.window_samples(),
                        image_type.interictal_step(),
                    )
                })
                .collect()
        })
        .collect();
    let total: usize = groups.iter().map(Vec::len).sum();
    if total < needed {
        return Err(Error::InsufficientData(format!(
            "{needed} inter-ictal {image_type} images needed but only {total} candidates exist"
        )));
    }

    let n = groups.len();
    let mut alloc: Vec<usize> = (0..n)
        .map(|i| (needed / n + usize::from(i < needed % n)).min(groups[i].len()))
        .collect();
    let mut warnings = Vec::new();
    let mut deficit = needed - alloc.iter().sum::<usize>();
    if deficit > 0 {
        for (i, g) in groups.iter().enumerate() {
            if alloc[i] == g.len() && g.len() < needed / n {
                warnings.push(format!(
                    "inter-ictal region before seizure {} has only {} candidates; shortfall redistributed",
                    train_seizures[i],
                    g.len()
                ));
            }
        }
    }
    while deficit > 0 {
        for (i, g) in groups.iter().enumerate() {
            if deficit > 0 && alloc[i] < g.len() {
                alloc[i] += 1;
                deficit -= 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut windows = Vec::with_capacity(needed);
    for ((group, &take), &seizure) in groups.iter().zip(&alloc).zip(train_seizures) {
        let mut picked = rand::seq::index::sample(&mut rng, group.len(), take).into_vec();
        picked.sort_unstable();
        windows.extend(picked.into_iter().map(|i| ImageWindow {
            start_sample: group[i],
            image_type,
            label: ImageLabel::Interictal,
            seizure: Some(seizure),
        }));
    }
    windows.sort_by_key(|w| w.start_sample);
    Ok((windows, warnings))
}

/// One image per second over `[start_s, end_s)`: window `k·256`, step 256.
/// Labels come from `timeline` (phase at the window's last sample) and are
/// only used for evaluation.
pub fn build_test_stream(
    start_s: f64,
    end_s: f64,
    fs: f64,
    image_type: ImageType,
    timeline: Option<&Timeline>,
) -> Result<Vec<ImageWindow>> {
    let (a, b) = sample_range(start_s, end_s, fs);
    let windows: Vec<ImageWindow> =
        window_starts(a, b, image_type.window_samples(), SEGMENT_SAMPLES)
            .map(|start| {
                let w = ImageWindow {
                    start_sample: start,
                    image_type,
                    label: ImageLabel::Unlabeled,
                    seizure: None,
                };
                let label = timeline
                    .and_then(|tl| tl.phase_at((w.end_sample() as f64 - 0.5) / fs))
                    .map_or(ImageLabel::Unlabeled, |p| match p {
                        Phase::Preictal => ImageLabel::Preictal,
                        Phase::Interictal => ImageLabel::Interictal,
                        _ => ImageLabel::Unlabeled,
                    });
                ImageWindow { label, ..w }
            })
            .collect();
    if windows.is_empty() {
        return Err(Error::InsufficientData(format!(
            "test signal [{start_s}, {end_s}) s is shorter than one {image_type} window"
        )));
    }
    Ok(windows)
}

/// A balanced, shuffled training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub image_type: ImageType,
    pub windows: Vec<ImageWindow>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn count(&self, label: ImageLabel) -> usize {
        self.windows.iter().filter(|w| w.label == label).count()
    }
}

/// Merges equal-sized pre-ictal and inter-ictal sets and shuffles them.
pub fn balance(
    preictal: Vec<ImageWindow>,
    interictal: Vec<ImageWindow>,
    seed: u64,
) -> Result<Dataset> {
    use rand::seq::SliceRandom;
    if preictal.is_empty() || interictal.is_empty() {
        return Err(Error::InsufficientData(
            "cannot balance an empty class".into(),
        ));
    }
    if preictal.len() != interictal.len() {
        return Err(Error::InsufficientData(format!(
            "class count mismatch: {} pre-ictal vs {} inter-ictal",
            preictal.len(),
            interictal.len()
        )));
    }
    let image_type = preictal[0].image_type;
    if preictal
        .iter()
        .chain(&interictal)
        .any(|w| w.image_type != image_type)
    {
        return Err(Error::InvalidConfig(
            "mixed image types in one dataset".into(),
        ));
    }
    let mut windows = preictal;
    windows.extend(interictal);
    windows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Dataset {
        image_type,
        windows,
        seed,
    })
}

/// Seeded uniform subsample (without replacement), kept in time order.
pub fn subsample(windows: Vec<ImageWindow>, max: usize, seed: u64) -> Vec<ImageWindow> {
    if windows.len() <= max {
        return windows;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, windows.len(), max).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| windows[i]).collect()
}
