//! Image sources and the on-disk dataset directory.
//!
//! A dataset directory contains `meta.json`, `images.f32` (row-major
//! little-endian pixels, images concatenated) and `labels.u8` (one byte per
//! image: 0 inter-ictal, 1 pre-ictal, 2 unlabeled).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    render_into, ImageLabel, ImageTensor, ImageType, ImageWindow, NormStats, SEGMENT_SAMPLES,
};
use crate::error::{Error, Result};
use crate::io_util::{create_dir_all, read_to_string, write_atomic};

pub const DATASET_VERSION: u32 = 1;

/// Anything that can hand out labelled images by index.
pub trait ImageSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn image_type(&self) -> ImageType;

    fn rows(&self) -> usize;

    fn cols(&self) -> usize {
        SEGMENT_SAMPLES
    }

    fn label(&self, i: usize) -> ImageLabel;

    /// Writes image `i` into `out` (`rows × cols`, row-major).
    fn render_into(&self, i: usize, out: &mut [f32]);

    fn pixels_per_image(&self) -> usize {
        self.rows() * self.cols()
    }
}

/// Images rendered lazily from a normalized signal.
#[derive(Debug, Clone, Copy)]
pub struct SignalImages<'a> {
    pub channels: &'a [Vec<f64>],
    pub windows: &'a [ImageWindow],
    pub image_type: ImageType,
}

impl<'a> SignalImages<'a> {
    pub fn new(
        channels: &'a [Vec<f64>],
        windows: &'a [ImageWindow],
        image_type: ImageType,
    ) -> Self {
        debug_assert!(windows.iter().all(|w| w.image_type == image_type));
        Self {
            channels,
            windows,
            image_type,
        }
    }
}

impl ImageSource for SignalImages<'_> {
    fn len(&self) -> usize {
        self.windows.len()
    }

    fn image_type(&self) -> ImageType {
        self.image_type
    }

    fn rows(&self) -> usize {
        self.image_type.rows_for(self.channels.len())
    }

    fn label(&self, i: usize) -> ImageLabel {
        self.windows[i].label
    }

    fn render_into(&self, i: usize, out: &mut [f32]) {
        render_into(
            self.channels,
            self.windows[i].start_sample,
            self.image_type,
            out,
        );
    }
}

/// Fully materialized images.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub image_type: ImageType,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<ImageLabel>,
}

impl ImageSet {
    pub fn new(image_type: ImageType, rows: usize) -> Self {
        Self {
            image_type,
            rows,
            cols: SEGMENT_SAMPLES,
            pixels: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_source(src: &dyn ImageSource) -> Self {
        let mut set = Self::new(src.image_type(), src.rows());
        let per = src.pixels_per_image();
        set.pixels = vec![0.0; per * src.len()];
        for (i, chunk) in set.pixels.chunks_exact_mut(per).enumerate() {
            src.render_into(i, chunk);
        }
        set.labels = (0..src.len()).map(|i| src.label(i)).collect();
        set
    }

    pub fn push(&mut self, img: &ImageTensor) -> Result<()> {
        if img.rows != self.rows
            || img.cols != self.cols
            || img.pixels.len() != self.rows * self.cols
        {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.rows, self.cols),
                found: format!("{}x{}", img.rows, img.cols),
            });
        }
        self.pixels.extend_from_slice(&img.pixels);
        self.labels.push(img.label);
        Ok(())
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let per = self.rows * self.cols;
        &self.pixels[i * per..(i + 1) * per]
    }
}

impl ImageSource for ImageSet {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn image_type(&self) -> ImageType {
        self.image_type
    }

    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn label(&self, i: usize) -> ImageLabel {
        self.labels[i]
    }

    fn render_into(&self, i: usize, out: &mut [f32]) {
        out.copy_from_slice(self.image(i));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub image_type: ImageType,
    pub rows: usize,
    pub cols: usize,
    pub count: usize,
    pub preictal: usize,
    pub interictal: usize,
    pub unlabeled: usize,
    pub seed: u64,
    pub stats: Option<NormStats>,
}

pub fn save_dataset(
    dir: &Path,
    src: &dyn ImageSource,
    seed: u64,
    stats: Option<&NormStats>,
) -> Result<DatasetMeta> {
    create_dir_all(dir)?;
    let labels: Vec<ImageLabel> = (0..src.len()).map(|i| src.label(i)).collect();
    let count_of = |l: ImageLabel| labels.iter().filter(|&&x| x == l).count();
    let meta = DatasetMeta {
        version: DATASET_VERSION,
        image_type: src.image_type(),
        rows: src.rows(),
        cols: src.cols(),
        count: src.len(),
        preictal: count_of(ImageLabel::Preictal),
        interictal: count_of(ImageLabel::Interictal),
        unlabeled: count_of(ImageLabel::Unlabeled),
        seed,
        stats: stats.cloned(),
    };
    write_atomic(&dir.join("images.f32"), |w| {
        let mut buf = vec![0.0f32; src.pixels_per_image()];
        let mut bytes = Vec::with_capacity(buf.len() * 4);
        for i in 0..src.len() {
            src.render_into(i, &mut buf);
            bytes.clear();
            bytes.extend(buf.iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&bytes)?;
        }
        Ok(())
    })?;
    write_atomic(&dir.join("labels.u8"), |w| {
        w.write_all(&labels.iter().map(|&l| l as u8).collect::<Vec<_>>())
    })?;
    write_atomic(&dir.join("meta.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &meta)?;
        w.write_all(b"\n")
    })?;
    Ok(meta)
}

pub fn load_dataset(dir: &Path) -> Result<(ImageSet, DatasetMeta)> {
    let meta: DatasetMeta = serde_json::from_str(&read_to_string(&dir.join("meta.json"))?)
        .map_err(|e| Error::MalformedHeader(format!("meta.json: {e}")))?;
    if meta.version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            found: meta.version,
            expected: DATASET_VERSION,
        });
    }
    let img_path = dir.join("images.f32");
    let bytes = fs::read(&img_path).map_err(|e| Error::io(&img_path, e))?;
    let per = meta.rows * meta.cols;
    if bytes.len() != meta.count * per * 4 {
        return Err(Error::SampleCountMismatch {
            declared: meta.count,
            found: format!("{:.3}", bytes.len() as f64 / (per * 4).max(1) as f64),
        });
    }
    let lab_path = dir.join("labels.u8");
    let raw_labels = fs::read(&lab_path).map_err(|e| Error::io(&lab_path, e))?;
    if raw_labels.len() != meta.count {
        return Err(Error::SampleCountMismatch {
            declared: meta.count,
            found: raw_labels.len().to_string(),
        });
    }
    let labels = raw_labels
        .iter()
        .map(|&b| {
            ImageLabel::from_u8(b)
                .ok_or_else(|| Error::MalformedHeader(format!("bad label byte {b}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let pixels = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((
        ImageSet {
            image_type: meta.image_type,
            rows: meta.rows,
            cols: meta.cols,
            pixels,
            labels,
        },
        meta,
    ))
}
