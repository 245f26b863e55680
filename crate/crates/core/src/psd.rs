//! Composite power-law noise spectra.
//!
//! A [`CompositePsd`] is a sum of power-law segments `S_i / f^alpha_i`, each
//! amplitude referenced to 1 Hz. All densities are one-sided: the variance of
//! the process is the integral of the density over `f in (0, inf)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical quantity a spectrum or trace is expressed in.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum QuantityUnit {
    /// Qubit detuning in Hz (densities in Hz^2/Hz).
    DetuningHz,
    /// SET current in pA (densities in pA^2/Hz).
    CurrentPa,
    /// Charge-noise energy in micro-eV (densities in ueV^2/Hz).
    EnergyMicroEv,
    Other(String),
}

impl QuantityUnit {
    pub fn as_str(&self) -> &str {
        match self {
            QuantityUnit::DetuningHz => "detuning-Hz",
            QuantityUnit::CurrentPa => "current-pA",
            QuantityUnit::EnergyMicroEv => "energy-µeV",
            QuantityUnit::Other(s) => s,
        }
    }
}

impl From<String> for QuantityUnit {
    fn from(s: String) -> Self {
        match s.as_str() {
            "detuning-Hz" => QuantityUnit::DetuningHz,
            "current-pA" => QuantityUnit::CurrentPa,
            "energy-µeV" | "energy-ueV" => QuantityUnit::EnergyMicroEv,
            _ => QuantityUnit::Other(s),
        }
    }
}

impl From<QuantityUnit> for String {
    fn from(u: QuantityUnit) -> Self {
        u.as_str().to_owned()
    }
}

impl fmt::Display for QuantityUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSegment")]
pub struct PowerLawSegment {
    amplitude_at_1hz: f64,
    exponent: f64,
}

#[derive(Deserialize)]
struct RawSegment {
    amplitude_at_1hz: f64,
    exponent: f64,
}

impl TryFrom<RawSegment> for PowerLawSegment {
    type Error = Error;

    fn try_from(raw: RawSegment) -> Result<Self> {
        PowerLawSegment::new(raw.amplitude_at_1hz, raw.exponent)
    }
}

impl PowerLawSegment {
    pub const MAX_EXPONENT: f64 = 3.0;

    pub fn new(amplitude_at_1hz: f64, exponent: f64) -> Result<Self> {
        if !(amplitude_at_1hz.is_finite() && amplitude_at_1hz > 0.0) {
            return Err(Error::InvalidModel(format!(
                "segment amplitude must be finite and positive, got {amplitude_at_1hz}"
            )));
        }
        if !(0.0..=Self::MAX_EXPONENT).contains(&exponent) {
            return Err(Error::InvalidModel(format!(
                "segment exponent must lie in [0, 3], got {exponent}"
            )));
        }
        Ok(Self {
            amplitude_at_1hz,
            exponent,
        })
    }

    pub fn amplitude_at_1hz(&self) -> f64 {
        self.amplitude_at_1hz
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// Density of this segment alone; `f` must be positive.
    pub fn eval(&self, f: f64) -> f64 {
        self.amplitude_at_1hz * f.powf(-self.exponent)
    }

    /// Same segment with the amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.amplitude_at_1hz * factor, self.exponent)
    }

    /// Analytic integral over `[f_lo, f_hi]`.
    ///
    /// Uses `f_lo^(1-a) * expm1((1-a) ln(f_hi/f_lo)) / (1-a)`, which is exact
    /// at `a = 1` (pure logarithm) and free of cancellation close to it.
    fn integral(&self, f_lo: f64, f_hi: f64) -> f64 {
        let log_ratio = (f_hi / f_lo).ln();
        let beta = 1.0 - self.exponent;
        if beta == 0.0 {
            return self.amplitude_at_1hz * log_ratio;
        }
        self.amplitude_at_1hz * f_lo.powf(beta) * (beta * log_ratio).exp_m1() / beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPsd")]
pub struct CompositePsd {
    unit_label: QuantityUnit,
    segments: Vec<PowerLawSegment>,
}

#[derive(Deserialize)]
struct RawPsd {
    unit_label: QuantityUnit,
    segments: Vec<PowerLawSegment>,
}

impl TryFrom<RawPsd> for CompositePsd {
    type Error = Error;

    fn try_from(raw: RawPsd) -> Result<Self> {
        CompositePsd::new(raw.unit_label, raw.segments)
    }
}

impl CompositePsd {
    pub fn new(unit_label: QuantityUnit, segments: Vec<PowerLawSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidModel(
                "a spectrum needs at least one segment".into(),
            ));
        }
        Ok(Self {
            unit_label,
            segments,
        })
    }

    pub fn single(unit_label: QuantityUnit, amplitude_at_1hz: f64, exponent: f64) -> Result<Self> {
        Self::new(
            unit_label,
            vec![PowerLawSegment::new(amplitude_at_1hz, exponent)?],
        )
    }

    /// Two segments `low_exponent` (dominant below `crossover_hz`) and
    /// `high_exponent`, with the high-band amplitude given at 1 Hz.
    pub fn two_slope(
        unit_label: QuantityUnit,
        high_amplitude_at_1hz: f64,
        high_exponent: f64,
        low_exponent: f64,
        crossover_hz: f64,
    ) -> Result<Self> {
        if !(crossover_hz.is_finite() && crossover_hz > 0.0) {
            return Err(Error::InvalidModel(format!(
                "crossover frequency must be positive, got {crossover_hz}"
            )));
        }
        let high = PowerLawSegment::new(high_amplitude_at_1hz, high_exponent)?;
        let low_amp = high.eval(crossover_hz) * crossover_hz.powf(low_exponent);
        let low = PowerLawSegment::new(low_amp, low_exponent)?;
        Self::new(unit_label, vec![high, low])
    }

    pub fn unit_label(&self) -> &QuantityUnit {
        &self.unit_label
    }

    pub fn segments(&self) -> &[PowerLawSegment] {
        &self.segments
    }

    pub fn with_unit(mut self, unit_label: QuantityUnit) -> Self {
        self.unit_label = unit_label;
        self
    }

    pub fn eval(&self, f: f64) -> Result<f64> {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::domain(format!(
                "PSD is defined for finite f > 0, got {f}"
            )));
        }
        Ok(self.segments.iter().map(|s| s.eval(f)).sum())
    }

    /// Analytic integral of the density over `[f_lo, f_hi]`. An empty band
    /// (`f_lo == f_hi`) integrates to zero.
    pub fn integrate(&self, f_lo: f64, f_hi: f64) -> Result<f64> {
        if !(f_lo > 0.0 && f_lo.is_finite() && f_hi.is_finite()) {
            return Err(Error::domain(format!(
                "integration bounds must be finite and positive, got [{f_lo}, {f_hi}]"
            )));
        }
        if f_hi < f_lo {
            return Err(Error::domain(format!(
                "inverted integration bounds [{f_lo}, {f_hi}]"
            )));
        }
        if f_hi == f_lo {
            return Ok(0.0);
        }
        Ok(self.segments.iter().map(|s| s.integral(f_lo, f_hi)).sum())
    }

    /// Every segment amplitude multiplied by `factor`; exponents untouched.
    pub fn scaled(&self, factor: f64, unit_label: QuantityUnit) -> Result<Self> {
        let segments = self
            .segments
            .iter()
            .map(|s| s.scaled(factor))
            .collect::<Result<Vec<_>>>()?;
        Self::new(unit_label, segments)
    }
}

/// Frequency where two segments carry equal density.
pub fn crossover_frequency(a: &PowerLawSegment, b: &PowerLawSegment) -> Result<f64> {
    let d_exp = b.exponent - a.exponent;
    if d_exp == 0.0 {
        return Err(Error::NoCrossover(a.exponent));
    }
    Ok((b.amplitude_at_1hz / a.amplitude_at_1hz).powf(1.0 / d_exp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(s: f64, a: f64) -> PowerLawSegment {
        PowerLawSegment::new(s, a).unwrap()
    }

    fn det(segments: Vec<PowerLawSegment>) -> CompositePsd {
        CompositePsd::new(QuantityUnit::DetuningHz, segments).unwrap()
    }

    #[test]
    fn eval_matches_amplitude_definition() {
        assert_eq!(det(vec![seg(1.0, 1.0)]).eval(1.0).unwrap(), 1.0);
        assert_eq!(det(vec![seg(1.0, 1.0), seg(1.0, 2.0)]).eval(1.0).unwrap(), 2.0);
    }

    #[test]
    fn eval_rejects_nonpositive_frequency() {
        let p = det(vec![seg(1.0, 1.0)]);
        assert!(matches!(p.eval(0.0), Err(Error::Domain(_))));
        assert!(matches!(p.eval(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn two_slope_terms_equal_at_crossover() {
        let p = CompositePsd::two_slope(QuantityUnit::DetuningHz, 4.5e6, 1.0, 2.0, 1e-3).unwrap();
        let [high, low] = [p.segments()[0], p.segments()[1]];
        let f = 1e-3;
        assert!((high.eval(f) - low.eval(f)).abs() / high.eval(f) < 1e-12);
        assert!((crossover_frequency(&high, &low).unwrap() - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn crossover_examples() {
        assert_eq!(crossover_frequency(&seg(1.0, 1.0), &seg(1.0, 2.0)).unwrap(), 1.0);
        assert!((crossover_frequency(&seg(4.0, 1.0), &seg(1.0, 2.0)).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(crossover_frequency(&seg(1.0, 1.0), &seg(1.0, 1.5)).unwrap(), 1.0);
        assert!(matches!(
            crossover_frequency(&seg(1.0, 1.0), &seg(3.0, 1.0)),
            Err(Error::NoCrossover(_))
        ));
    }

    #[test]
    fn integrate_examples() {
        let p2 = det(vec![seg(1.0, 2.0)]);
        assert!((p2.integrate(1.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
        let p1 = det(vec![seg(1.0, 1.0)]);
        assert!((p1.integrate(1.0, std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(p1.integrate(3.0, 3.0).unwrap(), 0.0);
        assert!(p1.integrate(2.0, 1.0).is_err());
        assert!(p1.integrate(0.0, 1.0).is_err());
    }

    // Trapezoid on a log grid, integrand S(f) f du with u = ln f.
    fn log_trapezoid(p: &CompositePsd, f_lo: f64, f_hi: f64, n: usize) -> f64 {
        let (u0, u1) = (f_lo.ln(), f_hi.ln());
        let h = (u1 - u0) / (n - 1) as f64;
        let g = |i: usize| {
            let f = (u0 + h * i as f64).exp();
            p.eval(f).unwrap() * f
        };
        let inner: f64 = (1..n - 1).map(g).sum();
        h * (inner + 0.5 * (g(0) + g(n - 1)))
    }

    #[test]
    fn integrate_agrees_with_quadrature_oracle() {
        let p = CompositePsd::two_slope(QuantityUnit::DetuningHz, 1.0, 1.0, 2.0, 1e-3).unwrap();
        let analytic = p.integrate(5e-5, 1.0).unwrap();
        let oracle = log_trapezoid(&p, 5e-5, 1.0, 10_000);
        assert!(((analytic - oracle) / oracle).abs() < 1e-6, "{analytic} vs {oracle}");
    }

    #[test]
    fn near_unit_exponent_is_continuous() {
        let at = |a: f64| det(vec![seg(2.0, a)]).integrate(1e-4, 1e4).unwrap();
        let exact = at(1.0);
        assert!(((at(1.0 + 1e-9) - exact) / exact).abs() < 1e-8);
        assert!(((at(1.0 - 1e-9) - exact) / exact).abs() < 1e-8);
    }

    #[test]
    fn invalid_segments_rejected() {
        assert!(PowerLawSegment::new(0.0, 1.0).is_err());
        assert!(PowerLawSegment::new(1.0, -0.1).is_err());
        assert!(PowerLawSegment::new(1.0, 3.1).is_err());
        assert!(CompositePsd::new(QuantityUnit::DetuningHz, vec![]).is_err());
    }

    #[test]
    fn json_shape() {
        let p = det(vec![seg(2.0, 1.0)]);
        let js = serde_json::to_value(&p).unwrap();
        assert_eq!(js["unit_label"], "detuning-Hz");
        assert_eq!(js["segments"][0]["amplitude_at_1hz"], 2.0);
        let back: CompositePsd = serde_json::from_value(js).unwrap();
        assert_eq!(back, p);
        let bad = r#"{"unit_label":"current-pA","segments":[{"amplitude_at_1hz":-1,"exponent":1}]}"#;
        assert!(serde_json::from_str::<CompositePsd>(bad).is_err());
        let empty = r#"{"unit_label":"current-pA","segments":[]}"#;
        assert!(serde_json::from_str::<CompositePsd>(empty).is_err());
    }

    fn arb_segment() -> impl Strategy<Value = PowerLawSegment> {
        (-3.0f64..3.0, 0.05f64..3.0).prop_map(|(log_s, a)| seg(10f64.powf(log_s), a))
    }

    proptest! {
        #[test]
        fn eval_is_monotone_decreasing(
            segs in prop::collection::vec(arb_segment(), 1..4),
            f in 1e-5f64..1e4,
            r in 1.001f64..10.0,
        ) {
            let p = det(segs);
            prop_assert!(p.eval(f * r).unwrap() < p.eval(f).unwrap());
        }

        #[test]
        fn integral_is_additive(
            segs in prop::collection::vec(arb_segment(), 1..4),
            lo in -5.0f64..0.0,
            w1 in 0.1f64..3.0,
            w2 in 0.1f64..3.0,
        ) {
            let p = det(segs);
            let (a, b, c) = (10f64.powf(lo), 10f64.powf(lo + w1), 10f64.powf(lo + w1 + w2));
            let whole = p.integrate(a, c).unwrap();
            let parts = p.integrate(a, b).unwrap() + p.integrate(b, c).unwrap();
            prop_assert!(((whole - parts) / whole).abs() < 1e-12);
        }

        #[test]
        fn crossover_equalizes_densities(a in arb_segment(), b in arb_segment()) {
            prop_assume!((a.exponent() - b.exponent()).abs() > 0.05);
            let f = crossover_frequency(&a, &b).unwrap();
            prop_assume!(f.is_finite() && f > 0.0);
            prop_assert!((a.eval(f) - b.eval(f)).abs() / a.eval(f) < 1e-10);
        }
    }
}
