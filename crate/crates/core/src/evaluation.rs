//! Alarm scoring, the threshold sweep and the per-patient best combination.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{
    alarms_from_smoothed, run_forecaster, smooth_stream, AlarmEvent, ForecastParams, Verdict,
};
use crate::imaging::ImageType;
use crate::io_util::{create_dir_all, write_atomic};

/// Which hours divide the false-alarm count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FprMode {
    #[default]
    InterictalHours,
    TotalTestHours,
}

impl std::str::FromStr for FprMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interictal-hours" | "interictal" => Ok(FprMode::InterictalHours),
            "total-test-hours" | "total" => Ok(FprMode::TotalTestHours),
            other => Err(Error::InvalidConfig(format!("unknown FPR mode `{other}`"))),
        }
    }
}

/// Marks each alarm TP or FP in place and returns, per onset, whether a TP
/// alarm covers it.
pub fn classify_alarms(alarms: &mut [AlarmEvent], onsets_s: &[f64]) -> Vec<bool> {
    let mut predicted = vec![false; onsets_s.len()];
    for a in alarms.iter_mut() {
        let mut tp = false;
        for (k, &on) in onsets_s.iter().enumerate() {
            if on >= a.sop_start_s && on <= a.sop_end_s {
                predicted[k] = true;
                tp = true;
            }
        }
        a.verdict = if tp {
            Verdict::TruePositive
        } else {
            Verdict::FalsePositive
        };
    }
    predicted
}

pub fn sensitivity(predicted: usize, n_seizures: usize) -> Result<f64> {
    if n_seizures == 0 {
        return Err(Error::InvalidInput(
            "sensitivity needs at least one test seizure".into(),
        ));
    }
    Ok(predicted as f64 / n_seizures as f64)
}

pub fn fpr_per_hour(false_alarms: usize, hours: f64) -> Result<f64> {
    if !(hours > 0.0) {
        return Err(Error::InvalidInput(format!(
            "FPR/h denominator must be positive, got {hours} h"
        )));
    }
    Ok(false_alarms as f64 / hours)
}

/// Probability stream for the data leading up to one test seizure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestTrace {
    /// Index of the seizure this trace ends at.
    pub seizure: usize,
    pub onset_s: f64,
    pub t_s: Vec<f64>,
    pub raw_p: Vec<f64>,
    pub total_hours: f64,
    pub interictal_hours: f64,
}

/// All test traces scored by one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkStreams {
    pub image_type: ImageType,
    pub x_min: u32,
    pub traces: Vec<TestTrace>,
}

impl NetworkStreams {
    pub fn name(&self) -> String {
        format!("{}_{}", self.image_type, self.x_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub image_type: ImageType,
    pub x_min: u32,
    pub z: f64,
    pub y: f64,
}

impl EvalParams {
    pub fn forecast(&self) -> ForecastParams {
        ForecastParams::new(self.z, self.y, self.x_min)
    }

    /// Grid order: image type, X, Z, Y.
    pub fn grid_cmp(&self, other: &Self) -> Ordering {
        image_rank(self.image_type)
            .cmp(&image_rank(other.image_type))
            .then(self.x_min.cmp(&other.x_min))
            .then(self.z.total_cmp(&other.z))
            .then(self.y.total_cmp(&other.y))
    }
}

fn image_rank(t: ImageType) -> u32 {
    t.seconds()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub params: EvalParams,
    pub sensitivity: f64,
    pub fpr_h: f64,
    pub n_test_seizures: usize,
    pub n_predicted: usize,
    pub n_false_alarms: usize,
    pub test_hours: f64,
    pub denominator_hours: f64,
    pub alarms: Vec<AlarmEvent>,
}

impl EvalResult {
    /// Count consistency: sensitivity·n and fpr·hours must be whole numbers
    /// of seizures and alarms.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_test_seizures;
        if n == 0 || self.n_predicted > n {
            return Err(Error::InvalidInput(format!(
                "{} of {n} seizures predicted",
                self.n_predicted
            )));
        }
        if implied_count(self.sensitivity, n, 1e-9) != Some(self.n_predicted) {
            return Err(Error::InvalidInput(format!(
                "sensitivity {} is not a whole number of {n} seizures",
                self.sensitivity
            )));
        }
        let alarms = self.fpr_h * self.denominator_hours;
        if !(self.fpr_h >= 0.0) || (alarms - self.n_false_alarms as f64).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "FPR/h {} over {} h is not {} false alarms",
                self.fpr_h, self.denominator_hours, self.n_false_alarms
            )));
        }
        let fp = self
            .alarms
            .iter()
            .filter(|a| a.verdict == Verdict::FalsePositive)
            .count();
        if fp != self.n_false_alarms {
            return Err(Error::InvalidInput(
                "false-alarm count disagrees with alarm verdicts".into(),
            ));
        }
        Ok(())
    }
}

/// Number of predicted seizures implied by a sensitivity over `n` seizures,
/// if it is whole within `tol` seizures.
pub fn implied_count(sensitivity: f64, n: usize, tol: f64) -> Option<usize> {
    if !(0.0..=1.0).contains(&sensitivity) {
        return None;
    }
    let k = sensitivity * n as f64;
    let r = k.round();
    ((k - r).abs() <= tol).then_some(r as usize)
}

/// Scores one threshold pair over every trace of a network.
pub fn evaluate(streams: &NetworkStreams, z: f64, y: f64, mode: FprMode) -> Result<EvalResult> {
    let smoothed: Vec<Vec<f64>> = streams
        .traces
        .iter()
        .map(|t| smooth_stream(&t.raw_p))
        .collect();
    evaluate_smoothed(streams, &smoothed, z, y, mode)
}

fn evaluate_smoothed(
    streams: &NetworkStreams,
    smoothed: &[Vec<f64>],
    z: f64,
    y: f64,
    mode: FprMode,
) -> Result<EvalResult> {
    let params = EvalParams {
        image_type: streams.image_type,
        x_min: streams.x_min,
        z,
        y,
    };
    let fparams = params.forecast();
    let alarms = streams
        .traces
        .iter()
        .zip(smoothed)
        .map(|(t, s)| alarms_from_smoothed(&t.t_s, s, &fparams))
        .collect::<Result<Vec<_>>>()?;
    score(streams, params, alarms, mode)
}

/// Combines per-trace alarms into one result.
fn score(
    streams: &NetworkStreams,
    params: EvalParams,
    alarms: Vec<Vec<AlarmEvent>>,
    mode: FprMode,
) -> Result<EvalResult> {
    let mut all = Vec::new();
    let (mut predicted, mut fa) = (0, 0);
    let (mut total_h, mut inter_h) = (0.0, 0.0);
    for (trace, mut alarms) in streams.traces.iter().zip(alarms) {
        predicted += classify_alarms(&mut alarms, &[trace.onset_s])[0] as usize;
        fa += alarms
            .iter()
            .filter(|a| a.verdict == Verdict::FalsePositive)
            .count();
        total_h += trace.total_hours;
        inter_h += trace.interictal_hours;
        all.extend(alarms);
    }
    let denominator_hours = match mode {
        FprMode::InterictalHours => inter_h,
        FprMode::TotalTestHours => total_h,
    };
    Ok(EvalResult {
        params,
        sensitivity: sensitivity(predicted, streams.traces.len())?,
        fpr_h: fpr_per_hour(fa, denominator_hours)?,
        n_test_seizures: streams.traces.len(),
        n_predicted: predicted,
        n_false_alarms: fa,
        test_hours: total_h,
        denominator_hours,
        alarms: all,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub z_values: Vec<f64>,
    pub y_values: Vec<f64>,
    pub x_values: Vec<u32>,
    pub image_types: Vec<ImageType>,
}

impl Default for SweepGrid {
    /// Z 0.05..0.90 step 0.05, Y 0.2..0.9 step 0.1, X 10..40 min, all image types.
    fn default() -> Self {
        Self {
            z_values: (1..=18).map(|k| k as f64 / 20.0).collect(),
            y_values: (2..=9).map(|k| k as f64 / 10.0).collect(),
            x_values: vec![10, 20, 30, 40],
            image_types: ImageType::ALL.to_vec(),
        }
    }
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        self.z_values.len() * self.y_values.len() * self.x_values.len() * self.image_types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Networks the grid needs, as `(image type, X)`.
    pub fn networks(&self) -> Vec<(ImageType, u32)> {
        self.image_types
            .iter()
            .flat_map(|&t| self.x_values.iter().map(move |&x| (t, x)))
            .collect()
    }
}

/// Evaluates every grid cell. Each network's stream is smoothed once and
/// shared by all of its (Z, Y) pairs. Results come back in grid order.
pub fn sweep(
    streams: &[NetworkStreams],
    grid: &SweepGrid,
    mode: FprMode,
) -> Result<Vec<EvalResult>> {
    let jobs = grid
        .networks()
        .into_iter()
        .map(|(t, x)| find_streams(streams, t, x))
        .collect::<Result<Vec<_>>>()?;
    let cached: Vec<Vec<Vec<f64>>> = jobs
        .par_iter()
        .map(|s| s.traces.iter().map(|t| smooth_stream(&t.raw_p)).collect())
        .collect();
    let cells: Vec<(usize, f64, f64)> = (0..jobs.len())
        .flat_map(|j| {
            grid.z_values
                .iter()
                .flat_map(move |&z| grid.y_values.iter().map(move |&y| (j, z, y)))
        })
        .collect();
    let mut results = cells
        .par_iter()
        .map(|&(j, z, y)| evaluate_smoothed(jobs[j], &cached[j], z, y, mode))
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| a.params.grid_cmp(&b.params));
    Ok(results)
}

fn find_streams(streams: &[NetworkStreams], t: ImageType, x: u32) -> Result<&NetworkStreams> {
    let s = streams
        .iter()
        .find(|s| s.image_type == t && s.x_min == x)
        .ok_or_else(|| {
            Error::MissingNetwork(format!(
                "no probability streams for the {t} network with X = {x} min"
            ))
        })?;
    if s.traces.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} has no test traces",
            s.name()
        )));
    }
    Ok(s)
}

/// Reference path for [`sweep`]: reruns the whole forecaster on the raw
/// stream for every cell, sequentially.
pub fn sweep_uncached(
    streams: &[NetworkStreams],
    grid: &SweepGrid,
    mode: FprMode,
) -> Result<Vec<EvalResult>> {
    let mut out = Vec::new();
    for (t, x) in grid.networks() {
        let s = find_streams(streams, t, x)?;
        for &z in &grid.z_values {
            for &y in &grid.y_values {
                let params = EvalParams {
                    image_type: t,
                    x_min: x,
                    z,
                    y,
                };
                let alarms = s
                    .traces
                    .iter()
                    .map(|tr| Ok(run_forecaster(&tr.t_s, &tr.raw_p, &params.forecast())?.alarms))
                    .collect::<Result<Vec<_>>>()?;
                out.push(score(s, params, alarms, mode)?);
            }
        }
    }
    out.sort_by(|a, b| a.params.grid_cmp(&b.params));
    Ok(out)
}

/// Total order used to pick the best result: higher sensitivity, lower
/// FPR/h, higher Z, higher Y, lower X, shorter images. `Less` is better.
pub fn rank_cmp(a: &EvalResult, b: &EvalResult) -> Ordering {
    b.sensitivity
        .total_cmp(&a.sensitivity)
        .then(a.fpr_h.total_cmp(&b.fpr_h))
        .then(b.params.z.total_cmp(&a.params.z))
        .then(b.params.y.total_cmp(&a.params.y))
        .then(a.params.x_min.cmp(&b.params.x_min))
        .then(image_rank(a.params.image_type).cmp(&image_rank(b.params.image_type)))
}

pub fn select_best(results: &[EvalResult]) -> Result<&EvalResult> {
    results
        .iter()
        .min_by(|a, b| rank_cmp(a, b))
        .ok_or_else(|| Error::InsufficientData("no results to select from".into()))
}

// ---------------------------------------------------------------- report

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    #[serde(rename = "Patient")]
    pub patient: String,
    #[serde(rename = "Pre-Ictal Minutes")]
    pub preictal_minutes: u32,
    #[serde(rename = "Image Seconds")]
    pub image_seconds: u32,
    #[serde(rename = "Likelihood Threshold Z")]
    pub z: f64,
    #[serde(rename = "Firing Power Threshold Y")]
    pub y: f64,
    #[serde(rename = "Sensitivity")]
    pub sensitivity: f64,
    #[serde(rename = "FPR/h")]
    pub fpr_h: f64,
    #[serde(rename = "Hours of Testing Group")]
    pub hours: f64,
}

pub const TABLE_HEADER: [&str; 8] = [
    "Patient",
    "Pre-Ictal Minutes",
    "Image Seconds",
    "Likelihood Threshold Z",
    "Firing Power Threshold Y",
    "Sensitivity",
    "FPR/h",
    "Hours of Testing Group",
];

impl TableRow {
    pub fn from_result(patient: &str, r: &EvalResult) -> Self {
        Self {
            patient: patient.to_string(),
            preictal_minutes: r.params.x_min,
            image_seconds: r.params.image_type.seconds(),
            z: r.params.z,
            y: r.params.y,
            sensitivity: r.sensitivity,
            fpr_h: r.fpr_h,
            hours: r.test_hours,
        }
    }

    pub fn fields(&self) -> [String; 8] {
        [
            self.patient.clone(),
            self.preictal_minutes.to_string(),
            self.image_seconds.to_string(),
            fmt_num(self.z),
            fmt_num(self.y),
            fmt_num(self.sensitivity),
            fmt_num(self.fpr_h),
            fmt_num(self.hours),
        ]
    }
}

/// At most three decimals, trailing zeros dropped: `1`, `0.5`, `0.333`.
pub fn fmt_num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = TABLE_HEADER.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.fields().join(","));
        out.push('\n');
    }
    out
}

pub fn table_text(rows: &[TableRow]) -> String {
    let cells: Vec<[String; 8]> = rows.iter().map(TableRow::fields).collect();
    let widths: Vec<usize> = (0..8)
        .map(|i| {
            cells
                .iter()
                .map(|c| c[i].len())
                .chain([TABLE_HEADER[i].len()])
                .max()
                .unwrap()
        })
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, vals: &[&str]| {
        let parts: Vec<String> = vals
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:>w$}"))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &TABLE_HEADER);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(
        &mut out,
        &rule.iter().map(String::as_str).collect::<Vec<_>>(),
    );
    for c in &cells {
        line(&mut out, &c.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

pub fn parse_table_csv(text: &str) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TABLE_HEADER {
        return Err(Error::MalformedHeader(format!(
            "unexpected table columns {header:?}"
        )));
    }
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()?)
}

#[derive(Serialize, Deserialize)]
struct ResultRow {
    image_type: ImageType,
    x_min: u32,
    z: f64,
    y: f64,
    sensitivity: f64,
    fpr_h: f64,
    n_test_seizures: usize,
    n_predicted: usize,
    n_false_alarms: usize,
    n_alarms: usize,
    test_hours: f64,
    denominator_hours: f64,
}

pub fn results_csv(results: &[EvalResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(ResultRow {
            image_type: r.params.image_type,
            x_min: r.params.x_min,
            z: r.params.z,
            y: r.params.y,
            sensitivity: r.sensitivity,
            fpr_h: r.fpr_h,
            n_test_seizures: r.n_test_seizures,
            n_predicted: r.n_predicted,
            n_false_alarms: r.n_false_alarms,
            n_alarms: r.alarms.len(),
            test_hours: r.test_hours,
            denominator_hours: r.denominator_hours,
        })?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Writes `results.csv`, `best.json`, `table.csv` and `table.txt` into `dir`.
/// Returns the paths written.
pub fn write_report(
    dir: &Path,
    patient: &str,
    results: &[EvalResult],
) -> Result<Vec<std::path::PathBuf>> {
    let best = select_best(results)?;
    for r in results {
        r.validate()?;
    }
    create_dir_all(dir)?;
    let rows = [TableRow::from_result(patient, best)];
    let csv_bytes = results_csv(results)?;
    let best_json = serde_json::to_vec_pretty(best)?;
    let files: [(&str, Vec<u8>); 4] = [
        ("results.csv", csv_bytes),
        ("best.json", best_json),
        ("table.csv", table_csv(&rows).into_bytes()),
        ("table.txt", table_text(&rows).into_bytes()),
    ];
    let mut written = Vec::new();
    for (name, bytes) in files {
        let p = dir.join(name);
        write_atomic(&p, |w| w.write_all(&bytes))?;
        written.push(p);
    }
    Ok(written)
}
