//! From per-second pre-ictal probabilities to alarms.
//!
//! `raw_p` → 60 s mean (likelihood) → `likelihood > Z` → Firing Power over
//! the last X minutes → alarm when `fp > Y`, followed by a refractory span of
//! SPH + SOP during which no new alarm fires. The accumulators keep running
//! during the refractory span.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::write_atomic;

/// Number of raw probabilities averaged into the likelihood.
pub const SMOOTH_WINDOW: usize = 60;
pub const SPH_MINUTES: f64 = 5.0;

/// Probabilities are summed as integers in units of 2^-53, so the running
/// sum equals a fresh sum over the window bit for bit.
const FIXED_ONE: f64 = (1u64 << 53) as f64;

fn quantize(p: f64) -> u64 {
    (p * FIXED_ONE).round() as u64
}

/// Exact-as-possible `sum / n` in probability units.
fn fixed_mean(sum: u64, n: usize) -> f64 {
    let n = n as u64;
    let (q, r) = (sum / n, sum % n);
    (q as f64 + r as f64 / n as f64) / FIXED_ONE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastParams {
    /// Likelihood threshold.
    pub z: f64,
    /// Firing-power threshold.
    pub y: f64,
    /// Pre-ictal minutes; also the firing-power window.
    pub x_min: u32,
    pub sph_min: f64,
    pub sop_min: f64,
}

impl ForecastParams {
    /// SPH of 5 minutes and SOP of half the pre-ictal time.
    pub fn new(z: f64, y: f64, x_min: u32) -> Self {
        Self {
            z,
            y,
            x_min,
            sph_min: SPH_MINUTES,
            sop_min: x_min as f64 / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z > 0.0 && self.z < 1.0 && self.y > 0.0 && self.y < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "thresholds must lie in (0, 1): Z={} Y={}",
                self.z, self.y
            )));
        }
        if self.x_min == 0 || !(self.sop_min > 0.0) || !(self.sph_min >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need X ≥ 1 min and SOP > 0 (X={}, SPH={}, SOP={})",
                self.x_min, self.sph_min, self.sop_min
            )));
        }
        Ok(())
    }

    pub fn fp_window(&self) -> usize {
        self.x_min as usize * 60
    }

    pub fn sph_s(&self) -> f64 {
        self.sph_min * 60.0
    }

    pub fn sop_s(&self) -> f64 {
        self.sop_min * 60.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    TruePositive,
    FalsePositive,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub t_alarm_s: f64,
    pub sop_start_s: f64,
    pub sop_end_s: f64,
    pub verdict: Verdict,
}

impl AlarmEvent {
    pub fn new(t_alarm_s: f64, params: &ForecastParams) -> Self {
        let sop_start_s = t_alarm_s + params.sph_s();
        Self {
            t_alarm_s,
            sop_start_s,
            sop_end_s: sop_start_s + params.sop_s(),
            verdict: Verdict::Undetermined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodPoint {
    pub t_s: f64,
    pub raw_p: f64,
    pub smoothed: f64,
    pub fp: f64,
    pub alarm: bool,
}

/// Mean of the most recent (at most 60) probabilities.
#[derive(Debug, Clone)]
pub struct Smoother {
    ring: [u64; SMOOTH_WINDOW],
    head: usize,
    len: usize,
    sum: u64,
}

impl Default for Smoother {
    fn default() -> Self {
        Self {
            ring: [0; SMOOTH_WINDOW],
            head: 0,
            len: 0,
            sum: 0,
        }
    }
}

impl Smoother {
    pub fn push(&mut self, p: f64) -> f64 {
        let q = quantize(p);
        if self.len == SMOOTH_WINDOW {
            self.sum -= self.ring[self.head];
        } else {
            self.len += 1;
        }
        self.ring[self.head] = q;
        self.sum += q;
        self.head = (self.head + 1) % SMOOTH_WINDOW;
        fixed_mean(self.sum, self.len)
    }
}

/// Smoothed likelihood for a whole stream.
pub fn smooth_stream(raw: &[f64]) -> Vec<f64> {
    let mut s = Smoother::default();
    raw.iter().map(|&p| s.push(p)).collect()
}

/// Fraction of set bits among the last `window` samples, always divided by
/// `window` (a short history cannot reach 1).
#[derive(Debug, Clone)]
pub struct FiringPower {
    ring: Vec<bool>,
    head: usize,
    len: usize,
    count: usize,
}

impl FiringPower {
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "firing-power window must be positive");
        Self {
            ring: vec![false; window],
            head: 0,
            len: 0,
            count: 0,
        }
    }

    pub fn push(&mut self, bit: bool) -> f64 {
        let w = self.ring.len();
        if self.len == w {
            self.count -= self.ring[self.head] as usize;
        } else {
            self.len += 1;
        }
        self.ring[self.head] = bit;
        self.count += bit as usize;
        self.head = (self.head + 1) % w;
        self.count as f64 / w as f64
    }
}

pub fn binarize(smoothed: f64, z: f64) -> bool {
    smoothed > z
}

/// Alarm state machine over a firing-power stream.
#[derive(Debug, Clone)]
pub struct AlarmState {
    params: ForecastParams,
    refractory_until: Option<f64>,
}

impl AlarmState {
    pub fn new(params: ForecastParams) -> Self {
        Self {
            params,
            refractory_until: None,
        }
    }

    pub fn step(&mut self, t_s: f64, fp: f64) -> Option<AlarmEvent> {
        let free = self.refractory_until.is_none_or(|until| t_s > until);
        if free && fp > self.params.y {
            let ev = AlarmEvent::new(t_s, &self.params);
            self.refractory_until = Some(ev.sop_end_s);
            Some(ev)
        } else {
            None
        }
    }
}

/// Streaming forecaster: push one probability per second.
#[derive(Debug, Clone)]
pub struct Forecaster {
    params: ForecastParams,
    smoother: Smoother,
    fp: FiringPower,
    alarm: AlarmState,
    last_t: Option<f64>,
    alarms: Vec<AlarmEvent>,
}

impl Forecaster {
    pub fn new(params: ForecastParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            smoother: Smoother::default(),
            fp: FiringPower::new(params.fp_window()),
            alarm: AlarmState::new(params),
            last_t: None,
            alarms: Vec::new(),
        })
    }

    pub fn params(&self) -> &ForecastParams {
        &self.params
    }

    pub fn push(&mut self, t_s: f64, raw_p: f64) -> Result<LikelihoodPoint> {
        if !(0.0..=1.0).contains(&raw_p) {
            return Err(Error::InvalidInput(format!(
                "probability {raw_p} at t={t_s} outside [0, 1]"
            )));
        }
        if let Some(prev) = self.last_t {
            if (t_s - (prev + 1.0)).abs() > 1e-6 {
                return Err(Error::OutOfOrder {
                    expected: prev + 1.0,
                    found: t_s,
                });
            }
        }
        self.last_t = Some(t_s);
        let smoothed = self.smoother.push(raw_p);
        let fp = self.fp.push(binarize(smoothed, self.params.z));
        let ev = self.alarm.step(t_s, fp);
        if let Some(ev) = ev {
            self.alarms.push(ev);
        }
        Ok(LikelihoodPoint {
            t_s,
            raw_p,
            smoothed,
            fp,
            alarm: ev.is_some(),
        })
    }

    pub fn push_many(&mut self, t_s: &[f64], raw_p: &[f64]) -> Result<Vec<LikelihoodPoint>> {
        check_lengths(t_s, raw_p)?;
        t_s.iter()
            .zip(raw_p)
            .map(|(&t, &p)| self.push(t, p))
            .collect()
    }

    pub fn alarms(&self) -> &[AlarmEvent] {
        &self.alarms
    }

    pub fn into_alarms(self) -> Vec<AlarmEvent> {
        self.alarms
    }
}

fn check_lengths(t_s: &[f64], raw_p: &[f64]) -> Result<()> {
    if t_s.len() != raw_p.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} probabilities", t_s.len()),
            found: raw_p.len().to_string(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Forecast {
    pub timeline: Vec<LikelihoodPoint>,
    pub alarms: Vec<AlarmEvent>,
}

pub fn run_forecaster(t_s: &[f64], raw_p: &[f64], params: &ForecastParams) -> Result<Forecast> {
    let mut f = Forecaster::new(*params)?;
    let timeline = f.push_many(t_s, raw_p)?;
    Ok(Forecast {
        timeline,
        alarms: f.into_alarms(),
    })
}

/// Alarms only, from an already smoothed likelihood. This is what a threshold
/// sweep runs for every (Z, Y) pair of a cached stream.
pub fn alarms_from_smoothed(
    t_s: &[f64],
    smoothed: &[f64],
    params: &ForecastParams,
) -> Result<Vec<AlarmEvent>> {
    params.validate()?;
    check_lengths(t_s, smoothed)?;
    let mut fp = FiringPower::new(params.fp_window());
    let mut state = AlarmState::new(*params);
    Ok(t_s
        .iter()
        .zip(smoothed)
        .filter_map(|(&t, &s)| state.step(t, fp.push(binarize(s, params.z))))
        .collect())
}

#[derive(Serialize, Deserialize)]
struct TimelineRow {
    t_s: f64,
    raw_p: f64,
    smoothed: f64,
    fp: f64,
    alarm_flag: u8,
}

fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn timeline_csv(points: &[LikelihoodPoint]) -> Result<Vec<u8>> {
    if points.is_empty() {
        return Ok(b"t_s,raw_p,smoothed,fp,alarm_flag\n".to_vec());
    }
    csv_bytes(points.iter().map(|p| TimelineRow {
        t_s: p.t_s,
        raw_p: p.raw_p,
        smoothed: p.smoothed,
        fp: p.fp,
        alarm_flag: p.alarm as u8,
    }))
}

pub fn alarms_csv(alarms: &[AlarmEvent]) -> Result<Vec<u8>> {
    if alarms.is_empty() {
        return Ok(b"t_alarm_s,sop_start_s,sop_end_s,verdict\n".to_vec());
    }
    csv_bytes(alarms)
}

pub fn write_timeline_csv(path: &Path, points: &[LikelihoodPoint]) -> Result<()> {
    let bytes = timeline_csv(points)?;
    write_atomic(path, |w| w.write_all(&bytes))
}

pub fn write_alarms_csv(path: &Path, alarms: &[AlarmEvent]) -> Result<()> {
    let bytes = alarms_csv(alarms)?;
    write_atomic(path, |w| w.write_all(&bytes))
}

pub fn read_timeline_csv(path: &Path) -> Result<Vec<LikelihoodPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| {
            let row: TimelineRow = row?;
            Ok(LikelihoodPoint {
                t_s: row.t_s,
                raw_p: row.raw_p,
                smoothed: row.smoothed,
                fp: row.fp,
                alarm: row.alarm_flag != 0,
            })
        })
        .collect()
}

pub fn read_alarms_csv(path: &Path) -> Result<Vec<AlarmEvent>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn constant_and_alternating_means() {
        assert!(smooth_stream(&[0.8; 150]).iter().all(|&s| s == 0.8));
        let alt: Vec<f64> = (0..60).map(|i| (i % 2) as f64).collect();
        assert_eq!(smooth_stream(&alt)[59], 0.5);
        assert!((smooth_stream(&[0.2, 0.4])[1] - 0.3).abs() < 1e-16);
    }

    #[test]
    fn strict_thresholds() {
        assert!(!binarize(0.30, 0.30));
        assert!(binarize(0.31, 0.30));
        assert!(!binarize(1.0, 1.0));
    }

    #[test]
    fn firing_power_fixed_denominator() {
        let mut fp = FiringPower::new(600);
        let mut last = 0.0;
        for i in 0..600 {
            last = fp.push(i >= 60);
        }
        assert_eq!(last, 0.9);
        let mut fp = FiringPower::new(600);
        assert_eq!(fp.push(true), 1.0 / 600.0);
    }

    #[test]
    fn refractory_span() {
        let p = ForecastParams::new(0.5, 0.5, 20);
        let mut st = AlarmState::new(p);
        assert!(st.step(999.0, 0.4).is_none());
        let ev = st.step(1000.0, 0.9).unwrap();
        assert_eq!((ev.sop_start_s, ev.sop_end_s), (1300.0, 1900.0));
        for t in 1001..=1900 {
            assert!(st.step(t as f64, 1.0).is_none(), "t={t}");
        }
        assert_eq!(st.step(1901.0, 1.0).unwrap().t_alarm_s, 1901.0);
    }

    #[test]
    fn short_stream_cannot_saturate() {
        let n = 300;
        let p = ForecastParams::new(0.5, 0.45, 10);
        let f = run_forecaster(&secs(n), &vec![1.0; n], &p).unwrap();
        assert_eq!(f.timeline.last().unwrap().fp, 0.5);
        // (t+1)/600 > 0.45 first at t = 270.
        assert_eq!(f.alarms.len(), 1);
        assert_eq!(f.alarms[0].t_alarm_s, 270.0);
        let p = ForecastParams::new(0.5, 0.6, 10);
        assert!(run_forecaster(&secs(n), &vec![1.0; n], &p)
            .unwrap()
            .alarms
            .is_empty());
    }

    #[test]
    fn empty_and_invalid_streams() {
        let p = ForecastParams::new(0.5, 0.5, 10);
        assert_eq!(run_forecaster(&[], &[], &p).unwrap(), Forecast::default());
        assert!(run_forecaster(&[0.0, 2.0], &[0.1, 0.1], &p).is_err());
        assert!(run_forecaster(&[0.0], &[1.5], &p).is_err());
        assert!(run_forecaster(&[0.0], &[], &p).is_err());
        assert!(ForecastParams::new(1.0, 0.5, 10).validate().is_err());
        assert!(ForecastParams::new(0.5, 0.5, 0).validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = secs(700);
        let raw: Vec<f64> = (0..700).map(|i| ((i as f64) * 0.01).sin().abs()).collect();
        let f = run_forecaster(&t, &raw, &ForecastParams::new(0.3, 0.2, 10)).unwrap();
        assert!(!f.alarms.is_empty());
        let dir = tempfile::tempdir().unwrap();
        write_timeline_csv(&dir.path().join("tl.csv"), &f.timeline).unwrap();
        write_alarms_csv(&dir.path().join("al.csv"), &f.alarms).unwrap();
        assert_eq!(
            read_timeline_csv(&dir.path().join("tl.csv")).unwrap(),
            f.timeline
        );
        assert_eq!(
            read_alarms_csv(&dir.path().join("al.csv")).unwrap(),
            f.alarms
        );
        let text = std::fs::read_to_string(dir.path().join("al.csv")).unwrap();
        assert!(text.starts_with("t_alarm_s,sop_start_s,sop_end_s,verdict\n"));
        assert!(text.contains("undetermined"));
    }
}
