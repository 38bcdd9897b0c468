use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// One second-order section with `a0` normalized to 1:
///
/// `H(z) = (b0 + b1·z⁻¹ + b2·z⁻²) / (1 + a1·z⁻¹ + a2·z⁻²)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    /// Roots of `z² + a1·z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        let a1 = Complex64::new(self.a1, 0.0);
        [(-a1 + disc) * 0.5, (-a1 - disc) * 0.5]
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Transfer function evaluated at `z = exp(jω)`.
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b0 + z1 * self.b1 + z2 * self.b2) / (1.0 + z1 * self.a1 + z2 * self.a2)
    }

    /// Direct-form-II-transposed filtering in place, zero initial state.
    pub fn process_in_place(&self, x: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b0 * input + s1;
            s1 = self.b1 * input - self.a1 * y + s2;
            s2 = self.b2 * input - self.a2 * y;
            *v = y;
        }
    }
}

/// An ordered cascade of second-order sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
    pub description: String,
}

impl BiquadCascade {
    pub fn new(sections: Vec<Biquad>, description: impl Into<String>) -> Self {
        Self {
            sections,
            description: description.into(),
        }
    }

    pub fn identity() -> Self {
        Self::new(vec![Biquad::IDENTITY], "identity")
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }

    pub fn max_pole_radius(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.poles())
            .map(|p| p.norm())
            .fold(0.0, f64::max)
    }

    /// Complex response at `freq_hz` for sampling rate `fs`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let omega = 2.0 * std::f64::consts::PI * freq_hz / fs;
        self.sections
            .iter()
            .map(|s| s.response(omega))
            .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
    }

    pub fn magnitude_db(&self, freq_hz: f64, fs: f64) -> f64 {
        20.0 * self.response(freq_hz, fs).norm().log10()
    }

    /// Appends the sections of `other` after this cascade's sections.
    pub fn then(mut self, other: BiquadCascade) -> Self {
        self.sections.extend(other.sections);
        self.description = format!("{} -> {}", self.description, other.description);
        self
    }

    pub fn filter_in_place(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.process_in_place(x);
        }
    }
}

/// Causal filtering of one channel; output length equals input length.
pub fn apply_filter(signal: &[f64], cascade: &BiquadCascade) -> Vec<f64> {
    let mut out = signal.to_vec();
    cascade.filter_in_place(&mut out);
    out
}

/// Filters every channel independently, in parallel.
pub fn apply_filter_channels(channels: &mut [Vec<f64>], cascade: &BiquadCascade) {
    use rayon::prelude::*;
    channels
        .par_iter_mut()
        .for_each(|ch| cascade.filter_in_place(ch));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_passes_impulse() {
        let mut x = vec![0.0; 16];
        x[0] = 1.0;
        assert_eq!(apply_filter(&x, &BiquadCascade::identity()), x);
    }

    #[test]
    fn zero_in_zero_out() {
        let c = BiquadCascade::new(
            vec![Biquad {
                b0: 0.3,
                b1: -0.2,
                b2: 0.1,
                a1: -0.5,
                a2: 0.2,
            }],
            "t",
        );
        assert!(apply_filter(&[0.0; 100], &c).iter().all(|&v| v == 0.0));
        assert_eq!(apply_filter(&[0.0; 100], &c).len(), 100);
    }

    #[test]
    fn stability_from_poles() {
        let stable = Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: 0.0,
            a1: -1.0,
            a2: 0.5,
        };
        assert!(stable.is_stable());
        let unstable = Biquad { a2: 1.2, ..stable };
        assert!(!unstable.is_stable());
    }
}
