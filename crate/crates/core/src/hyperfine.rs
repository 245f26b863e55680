//! Ergodic-limit dephasing from the nuclear spin bath of the dot.

use std::f64::consts::PI;

use rand_distr::{Binomial, Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, SeedStreams};

pub const HBAR_EV_S: f64 = 6.582_119_569e-16;
pub const H_EV_S: f64 = 4.135_667_696e-15;
const HBAR_J_S: f64 = 1.054_571_817e-34;
const ELECTRON_MASS_KG: f64 = 9.109_383_701_5e-31;
const EV_J: f64 = 1.602_176_634e-19;

pub const SI_ATOMIC_DENSITY_PER_M3: f64 = 5.0e28;
pub const SI29_NATURAL_ABUNDANCE: f64 = 0.0467;
pub const GE73_NATURAL_ABUNDANCE: f64 = 0.0776;
pub const A_SI_EV: f64 = 2.15e-6;
pub const A_GE_EV: f64 = 21.5e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DotGeometry {
    /// Present when the radius was derived from the orbital splitting.
    #[serde(default)]
    pub orbital_splitting_ev: Option<f64>,
    #[serde(default)]
    pub effective_mass_ratio: Option<f64>,
    pub radius_m: f64,
    pub height_m: f64,
    pub atomic_density_per_m3: f64,
    pub n_atoms: f64,
}

fn cylinder_atoms(radius: f64, height: f64, density: f64) -> f64 {
    (density * PI * radius * radius * height).round()
}

impl DotGeometry {
    pub fn from_dimensions(radius_m: f64, height_m: f64, atomic_density_per_m3: f64) -> Result<Self> {
        if !(radius_m > 0.0 && height_m > 0.0 && atomic_density_per_m3 > 0.0) {
            return Err(Error::domain("dot dimensions and density must be positive"));
        }
        Ok(Self {
            orbital_splitting_ev: None,
            effective_mass_ratio: None,
            radius_m,
            height_m,
            atomic_density_per_m3,
            n_atoms: cylinder_atoms(radius_m, height_m, atomic_density_per_m3),
        })
    }

    /// 13 nm radius, 6 nm high silicon cylinder.
    pub fn device_default() -> Self {
        Self::from_dimensions(13e-9, 6e-9, SI_ATOMIC_DENSITY_PER_M3).expect("positive constants")
    }
}

/// Harmonic-oscillator length `sqrt(hbar / (m* omega))` with `hbar omega`
/// the orbital splitting, used as the dot radius.
pub fn geometry_from_splitting(
    orbital_splitting_ev: f64,
    effective_mass_ratio: f64,
    height_m: f64,
    atomic_density_per_m3: f64,
) -> Result<DotGeometry> {
    if !(orbital_splitting_ev > 0.0 && effective_mass_ratio > 0.0) {
        return Err(Error::domain("orbital splitting and effective mass must be positive"));
    }
    let m = effective_mass_ratio * ELECTRON_MASS_KG;
    let radius = HBAR_J_S / (m * orbital_splitting_ev * EV_J).sqrt();
    let mut g = DotGeometry::from_dimensions(radius, height_m, atomic_density_per_m3)?;
    g.orbital_splitting_ev = Some(orbital_splitting_ev);
    g.effective_mass_ratio = Some(effective_mass_ratio);
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSpecies {
    pub label: String,
    /// Fraction of sites carrying a nuclear spin.
    pub p: f64,
    /// Fraction of the wavefunction in this species' region.
    pub gamma: f64,
    pub hyperfine_ev: f64,
    pub nuclear_spin: f64,
}

impl BathSpecies {
    pub fn validate(&self) -> Result<()> {
        let two_i = 2.0 * self.nuclear_spin;
        if !(0.0..=1.0).contains(&self.p)
            || !(0.0..=1.0).contains(&self.gamma)
            || !(self.hyperfine_ev > 0.0)
            || !(two_i >= 1.0 && two_i.fract() == 0.0)
        {
            return Err(Error::domain(format!("invalid bath species {}", self.label)));
        }
        Ok(())
    }

    fn spin_factor(&self) -> f64 {
        (2.0 * self.nuclear_spin * (self.nuclear_spin + 1.0)).sqrt()
    }
}

/// Residual 29Si in the quantum well, 29Si and 73Ge in the Si0.7Ge0.3 barrier.
pub fn device_baths(gamma_barrier: f64) -> Vec<BathSpecies> {
    vec![
        BathSpecies {
            label: "29Si quantum well".into(),
            p: 60e-6,
            gamma: 1.0 - gamma_barrier,
            hyperfine_ev: A_SI_EV,
            nuclear_spin: 0.5,
        },
        BathSpecies {
            label: "29Si barrier".into(),
            p: SI29_NATURAL_ABUNDANCE * 0.7,
            gamma: gamma_barrier,
            hyperfine_ev: A_SI_EV,
            nuclear_spin: 0.5,
        },
        BathSpecies {
            label: "73Ge barrier".into(),
            p: GE73_NATURAL_ABUNDANCE * 0.3,
            gamma: gamma_barrier,
            hyperfine_ev: A_GE_EV,
            nuclear_spin: 4.5,
        },
    ]
}

pub const DEVICE_GAMMA_BARRIER: f64 = 0.001;

pub fn count_spinful(species: &BathSpecies, geometry: &DotGeometry) -> f64 {
    species.p * species.gamma * geometry.n_atoms
}

/// Ergodic T2* from the spinful-nucleus count.
pub fn ergodic_t2star(species: &BathSpecies, geometry: &DotGeometry) -> Result<f64> {
    species.validate()?;
    let pg = species.p * species.gamma;
    if pg == 0.0 {
        log::warn!("{}: no spinful nuclei, T2* is unbounded", species.label);
        return Ok(f64::INFINITY);
    }
    let n_s = count_spinful(species, geometry);
    if n_s < 1.0 {
        log::warn!("{}: only {n_s:.3} spinful nuclei in the dot", species.label);
    }
    Ok(HBAR_EV_S * (3.0 * n_s).sqrt() / (pg * species.hyperfine_ev * species.spin_factor()))
}

/// Same quantity through `sqrt(3 n_atoms / (p gamma))`.
pub fn ergodic_t2star_from_density(species: &BathSpecies, geometry: &DotGeometry) -> Result<f64> {
    species.validate()?;
    let pg = species.p * species.gamma;
    if pg == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(HBAR_EV_S * (3.0 * geometry.n_atoms / pg).sqrt() / (species.hyperfine_ev * species.spin_factor()))
}

const ORACLE_CHUNK: usize = 4096;

/// Monte-Carlo T2* from the spread of the Overhauser shift.
///
/// Each trial draws the number of spinful sites among `round(n_atoms gamma)`
/// sites and a uniform projection `m_I` for each; every site shifts the
/// qubit frequency by `2 A m_I / (h n_atoms)`.
pub fn overhauser_mc_oracle(
    species: &BathSpecies,
    geometry: &DotGeometry,
    n_trials: usize,
    streams: &SeedStreams,
) -> Result<f64> {
    species.validate()?;
    if n_trials < 2 {
        return Err(Error::domain("oracle needs at least two trials"));
    }
    let sites = (geometry.n_atoms * species.gamma).round() as u64;
    let binom = Binomial::new(sites, species.p).map_err(|e| Error::domain(e.to_string()))?;
    let two_i = (2.0 * species.nuclear_spin).round() as u32;
    let proj = Uniform::new_inclusive(0, two_i).map_err(|e| Error::domain(e.to_string()))?;
    let per_site = 2.0 * species.hyperfine_ev / (H_EV_S * geometry.n_atoms);
    let n_chunks = n_trials.div_ceil(ORACLE_CHUNK);
    let partials: Vec<(f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = streams.stream(Domain::Hyperfine, c as u64);
            let count = ORACLE_CHUNK.min(n_trials - c * ORACLE_CHUNK);
            let mut acc = (0.0, 0.0);
            for _ in 0..count {
                let n = binom.sample(&mut rng);
                // Sum of 2 m_I as integers keeps the per-trial sum exact.
                let twice_m: i64 = (0..n).map(|_| 2 * proj.sample(&mut rng) as i64 - two_i as i64).sum();
                let shift = 0.5 * twice_m as f64 * per_site;
                acc.0 += shift;
                acc.1 += shift * shift;
            }
            acc
        })
        .collect();
    // Summed in chunk order so the result does not depend on the thread count.
    let (sum, sum_sq) = partials.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = n_trials as f64;
    let var = (sum_sq - sum * sum / n) / (n - 1.0);
    if var <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / (2f64.sqrt() * PI * var.sqrt()))
}

/// Independent Gaussian baths: rates add in inverse square.
pub fn combine_baths(t2: &[f64]) -> Result<f64> {
    if t2.is_empty() || t2.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::domain("need a nonempty list of positive T2* values"));
    }
    Ok(t2.iter().map(|t| t.powi(-2)).sum::<f64>().powf(-0.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathRow {
    pub species: String,
    pub n_spinful: f64,
    pub t2star_formula_s: f64,
    pub t2star_oracle_s: Option<f64>,
}

pub fn bath_table(
    species: &[BathSpecies],
    geometry: &DotGeometry,
    oracle: Option<(usize, &SeedStreams)>,
) -> Result<Vec<BathRow>> {
    species
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let oracle = match oracle {
                Some((n, streams)) => {
                    let sub = SeedStreams::new(streams.derive_seed(Domain::Hyperfine, i as u64));
                    Some(overhauser_mc_oracle(s, geometry, n, &sub)?)
                }
                None => None,
            };
            Ok(BathRow {
                species: s.label.clone(),
                n_spinful: count_spinful(s, geometry),
                t2star_formula_s: ergodic_t2star(s, geometry)?,
                t2star_oracle_s: oracle,
            })
        })
        .collect()
}

pub fn write_bath_table_csv<W: std::io::Write>(rows: &[BathRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["species", "N_S", "T2*_formula_s", "T2*_oracle_s"])?;
    for r in rows {
        out.write_record([
            r.species.clone(),
            r.n_spinful.to_string(),
            r.t2star_formula_s.to_string(),
            r.t2star_oracle_s.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
