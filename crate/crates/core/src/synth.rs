//! Stationary Gaussian noise with a prescribed power-law spectrum.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psd::{CompositePsd, QuantityUnit};
use crate::rng::{Domain, SeedStreams};

pub const TRACE_MAGIC: &[u8; 4] = b"QDNT";
pub const TRACE_VERSION: u32 = 1;

/// Uniformly sampled time series; sample `k` holds the value on
/// `[k / sample_rate, (k + 1) / sample_rate)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTrace {
    sample_rate: f64,
    samples: Vec<f64>,
    seed: u64,
    unit: QuantityUnit,
    psd_provenance: Option<CompositePsd>,
}

impl NoiseTrace {
    pub fn new(sample_rate: f64, samples: Vec<f64>, seed: u64, unit: QuantityUnit) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::domain(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if samples.len() < 2 {
            return Err(Error::domain("a trace needs at least two samples"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("trace samples must be finite"));
        }
        Ok(Self {
            sample_rate,
            samples,
            seed,
            unit,
            psd_provenance: None,
        })
    }

    pub fn with_provenance(mut self, psd: CompositePsd) -> Self {
        self.psd_provenance = Some(psd);
        self
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn unit(&self) -> &QuantityUnit {
        &self.unit
    }

    pub fn psd_provenance(&self) -> Option<&CompositePsd> {
        self.psd_provenance.as_ref()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn index_at(&self, t: f64) -> Result<usize> {
        let idx = (t * self.sample_rate).floor();
        if !(idx >= 0.0 && (idx as usize) < self.samples.len()) {
            return Err(Error::domain(format!(
                "time {t} s lies outside the trace (duration {} s)",
                self.duration()
            )));
        }
        Ok(idx as usize)
    }

    /// Zero-order-hold value at time `t`.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        Ok(self.samples[self.index_at(t)?])
    }

    /// Samples covering `[t0, t0 + duration]` inclusive of both ends.
    pub fn window(&self, t0: f64, duration: f64) -> Result<&[f64]> {
        let start = self.index_at(t0)?;
        let steps = (duration * self.sample_rate).ceil() as usize;
        let end = start + steps + 1;
        if end > self.samples.len() {
            return Err(Error::domain(format!(
                "window [{t0}, {}] s runs past the trace end ({} s)",
                t0 + duration,
                self.duration()
            )));
        }
        Ok(&self.samples[start..end])
    }

    /// Multiply every sample by `factor`, relabelling the quantity.
    pub fn scaled(&self, factor: f64, unit: QuantityUnit) -> Result<Self> {
        let samples = self.samples.iter().map(|v| v * factor).collect();
        let mut out = NoiseTrace::new(self.sample_rate, samples, self.seed, unit)?;
        out.psd_provenance = None;
        Ok(out)
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.samples.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.samples.len() as f64
    }

    /// Little-endian binary layout: magic, u32 version, f64 sample rate,
    /// u64 length, u64 seed, then the samples as f64.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TRACE_MAGIC)?;
        w.write_all(&TRACE_VERSION.to_le_bytes())?;
        w.write_all(&self.sample_rate.to_le_bytes())?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in &self.samples {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, unit: QuantityUnit) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TRACE_MAGIC {
            return Err(Error::Format("not a trace file (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != TRACE_VERSION {
            return Err(Error::Format(format!("unsupported trace version {version}")));
        }
        r.read_exact(&mut b8)?;
        let sample_rate = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != n * 8 {
            return Err(Error::Format(format!(
                "expected {n} samples, found {} bytes of payload",
                raw.len()
            )));
        }
        let samples = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        NoiseTrace::new(sample_rate, samples, seed, unit)
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }

    pub fn load_binary(path: impl AsRef<Path>, unit: QuantityUnit) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(f), unit)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time_s", "value"])?;
        for (k, v) in self.samples.iter().enumerate() {
            let t = k as f64 / self.sample_rate;
            out.write_record([t.to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Circulant frequency-domain synthesis.
///
/// Bin `k` (`1 <= k < n/2`) gets a unit complex Gaussian scaled by
/// `sqrt(S(f_k) df n^2 / 2)`, the Nyquist bin a real Gaussian scaled by
/// `sqrt(S df n^2)`, and the DC bin is zero, so the trace variance is
/// `sum_k S(f_k) df` over bins 1..=n/2. Deterministic in
/// `(psd, n_samples, sample_rate, seed)`.
pub fn synthesize(psd: &CompositePsd, n_samples: usize, sample_rate: f64, seed: u64) -> Result<NoiseTrace> {
    if n_samples < 2 {
        return Err(Error::domain("synthesis needs at least two samples"));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::domain(format!(
            "sample rate must be positive, got {sample_rate}"
        )));
    }
    let n = n_samples;
    let df = sample_rate / n as f64;
    let nf = n as f64;
    let mut rng = SeedStreams::new(seed).stream(Domain::Synthesis, 0);
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    for k in 1..=half {
        let density = psd.eval(k as f64 * df)?;
        if 2 * k == n {
            let z: f64 = StandardNormal.sample(&mut rng);
            spectrum[k] = Complex64::new((density * df * nf * nf).sqrt() * z, 0.0);
        } else {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let scale = (density * df * nf * nf / 2.0).sqrt() * std::f64::consts::FRAC_1_SQRT_2;
            spectrum[k] = Complex64::new(re, im) * scale;
            spectrum[n - k] = spectrum[k].conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spectrum);
    let mut samples: Vec<f64> = spectrum.iter().map(|c| c.re / nf).collect();
    let mean = samples.iter().sum::<f64>() / nf;
    samples.iter_mut().for_each(|v| *v -= mean);
    Ok(NoiseTrace::new(sample_rate, samples, seed, psd.unit_label().clone())?.with_provenance(psd.clone()))
}

/// Variance convention between a one-sided spectrum and the quasi-static
/// detuning spread: `sigma^2 = factor * integral(S)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ConventionFactor {
    One,
    #[default]
    Two,
}

impl ConventionFactor {
    pub fn value(self) -> f64 {
        match self {
            ConventionFactor::One => 1.0,
            ConventionFactor::Two => 2.0,
        }
    }
}

impl TryFrom<u8> for ConventionFactor {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(ConventionFactor::One),
            2 => Ok(ConventionFactor::Two),
            _ => Err(Error::Config(format!("convention factor must be 1 or 2, got {v}"))),
        }
    }
}

impl From<ConventionFactor> for u8 {
    fn from(c: ConventionFactor) -> u8 {
        c.value() as u8
    }
}

pub fn quasi_static_sigma(psd: &CompositePsd, f_lo: f64, f_hi: f64, factor: ConventionFactor) -> Result<f64> {
    Ok((factor.value() * psd.integrate(f_lo, f_hi)?).sqrt())
}

pub fn draw_quasi_static<R: Rng + ?Sized>(
    psd: &CompositePsd,
    f_lo: f64,
    f_hi: f64,
    factor: ConventionFactor,
    rng: &mut R,
) -> Result<f64> {
    let sigma = quasi_static_sigma(psd, f_lo, f_hi, factor)?;
    let z: f64 = StandardNormal.sample(rng);
    Ok(sigma * z)
}
