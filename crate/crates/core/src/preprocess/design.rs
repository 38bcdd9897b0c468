//! Butterworth and notch design via the bilinear transform with frequency
//! pre-warping, emitted as second-order sections.

use std::f64::consts::PI;

use super::biquad::{Biquad, BiquadCascade};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Lowpass,
    Highpass,
}

/// Quality factors of the complex-conjugate pole pairs of an order-`n`
/// Butterworth prototype, plus whether a real pole remains.
fn butterworth_pairs(order: usize) -> (Vec<f64>, bool) {
    let n = order as f64;
    let qs = if order % 2 == 0 {
        (0..order / 2)
            .map(|k| 1.0 / (2.0 * (PI * (2 * k + 1) as f64 / (2.0 * n)).cos()))
            .collect()
    } else {
        (1..=order / 2)
            .map(|k| 1.0 / (2.0 * (PI * k as f64 / n).cos()))
            .collect()
    };
    (qs, order % 2 == 1)
}

fn butterworth(kind: Kind, fs: f64, cutoff: f64, order: usize) -> Vec<Biquad> {
    let k = (PI * cutoff / fs).tan();
    let k2 = k * k;
    let (qs, odd) = butterworth_pairs(order);
    let mut sections = Vec::with_capacity(qs.len() + usize::from(odd));
    if odd {
        let norm = 1.0 / (1.0 + k);
        let a1 = (k - 1.0) * norm;
        sections.push(match kind {
            Kind::Lowpass => Biquad {
                b0: k * norm,
                b1: k * norm,
                b2: 0.0,
                a1,
                a2: 0.0,
            },
            Kind::Highpass => Biquad {
                b0: norm,
                b1: -norm,
                b2: 0.0,
                a1,
                a2: 0.0,
            },
        });
    }
    for q in qs {
        let norm = 1.0 / (1.0 + k / q + k2);
        let a1 = 2.0 * (k2 - 1.0) * norm;
        let a2 = (1.0 - k / q + k2) * norm;
        let g = match kind {
            Kind::Lowpass => k2 * norm,
            Kind::Highpass => norm,
        };
        let b1 = match kind {
            Kind::Lowpass => 2.0 * g,
            Kind::Highpass => -2.0 * g,
        };
        sections.push(Biquad {
            b0: g,
            b1,
            b2: g,
            a1,
            a2,
        });
    }
    sections
}

fn check_stable(c: BiquadCascade) -> Result<BiquadCascade> {
    if c.is_stable() {
        Ok(c)
    } else {
        Err(Error::FilterDesign(format!(
            "{} is unstable (max pole radius {})",
            c.description,
            c.max_pole_radius()
        )))
    }
}

/// Order-`order` Butterworth high-pass at `low` cascaded with an
/// order-`order` Butterworth low-pass at `high`. Each cutoff sits at −3.01 dB
/// and DC is blocked exactly.
pub fn design_bandpass(fs: f64, low: f64, high: f64, order: usize) -> Result<BiquadCascade> {
    let nyquist = fs / 2.0;
    if !(fs > 0.0) {
        return Err(Error::FilterDesign(format!(
            "sampling rate {fs} must be positive"
        )));
    }
    if !(low > 0.0 && low < high && high < nyquist) {
        return Err(Error::FilterDesign(format!(
            "band edges must satisfy 0 < low < high < fs/2 (got {low}, {high}, fs/2 = {nyquist})"
        )));
    }
    if order == 0 {
        return Err(Error::FilterDesign(
            "filter order must be at least 1".into(),
        ));
    }
    let mut sections = butterworth(Kind::Highpass, fs, low, order);
    sections.extend(butterworth(Kind::Lowpass, fs, high, order));
    check_stable(BiquadCascade::new(
        sections,
        format!("butterworth bandpass {low}-{high} Hz order {order} @ {fs} Hz"),
    ))
}

/// Second-order notch centred on `f0` with quality factor `q`; the −3 dB
/// bandwidth is approximately `f0 / q`.
pub fn design_notch(fs: f64, f0: f64, q: f64) -> Result<BiquadCascade> {
    if !(f0 > 0.0 && f0 < fs / 2.0) {
        return Err(Error::FilterDesign(format!(
            "notch frequency {f0} must lie in (0, fs/2 = {})",
            fs / 2.0
        )));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::FilterDesign(format!(
            "notch Q must be positive, got {q}"
        )));
    }
    let w0 = 2.0 * PI * f0 / fs;
    let alpha = w0.sin() / (2.0 * q);
    let cos = w0.cos();
    let a0 = 1.0 + alpha;
    check_stable(BiquadCascade::new(
        vec![Biquad {
            b0: 1.0 / a0,
            b1: -2.0 * cos / a0,
            b2: 1.0 / a0,
            a1: -2.0 * cos / a0,
            a2: (1.0 - alpha) / a0,
        }],
        format!("notch {f0} Hz Q {q} @ {fs} Hz"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourth_order_q_values() {
        let (qs, odd) = butterworth_pairs(4);
        assert!(!odd);
        assert!((qs[0] - 0.541_196).abs() < 1e-5);
        assert!((qs[1] - 1.306_563).abs() < 1e-5);
        let (qs, odd) = butterworth_pairs(3);
        assert!(odd);
        assert!((qs[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dc_is_blocked_exactly() {
        let bp = design_bandpass(256.0, 0.5, 100.0, 4).unwrap();
        assert_eq!(bp.response(0.0, 256.0).norm(), 0.0);
        assert_eq!(bp.sections.len(), 4);
    }

    #[test]
    fn odd_orders_are_supported() {
        let bp = design_bandpass(256.0, 1.0, 40.0, 3).unwrap();
        assert!((bp.magnitude_db(1.0, 256.0) + 3.0103).abs() < 0.05);
        assert!((bp.magnitude_db(40.0, 256.0) + 3.0103).abs() < 0.05);
    }

    #[test]
    fn invalid_cutoffs_rejected() {
        assert!(design_bandpass(256.0, 0.0, 100.0, 4).is_err());
        assert!(design_bandpass(256.0, 10.0, 5.0, 4).is_err());
        assert!(design_bandpass(256.0, 0.5, 128.0, 4).is_err());
        assert!(design_bandpass(256.0, 0.5, 100.0, 0).is_err());
        assert!(design_notch(256.0, 130.0, 25.0).is_err());
        assert!(design_notch(256.0, 50.0, 0.0).is_err());
    }
}
