//! Charge noise to qubit detuning through the displacement and field-gradient chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psd::{CompositePsd, QuantityUnit};
use crate::synth::NoiseTrace;

/// Bohr magneton over the Planck constant, Hz/T.
pub const MU_B_OVER_H_HZ_PER_T: f64 = 13.996_244_936_1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct ConversionChain {
    pub dV_dI_mV_per_pA: f64,
    pub dx_dV_nm_per_mV: f64,
    pub dBx_dx_mT_per_nm: f64,
    pub g_factor: f64,
    /// Energy per gate voltage, used for energy-unit inputs.
    pub lever_arm_eV_per_V: f64,
}

impl ConversionChain {
    /// Device values; the lever arm is a configuration default, chosen so one
    /// µeV maps to the same gate voltage as one pA.
    pub fn device_default() -> Self {
        Self {
            dV_dI_mV_per_pA: 1.0 / 35.0,
            dx_dV_nm_per_mV: 0.024,
            dBx_dx_mT_per_nm: 0.08,
            g_factor: 2.0,
            lever_arm_eV_per_V: 0.035,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("dV_dI_mV_per_pA", self.dV_dI_mV_per_pA),
            ("dx_dV_nm_per_mV", self.dx_dV_nm_per_mV),
            ("dBx_dx_mT_per_nm", self.dBx_dx_mT_per_nm),
            ("g_factor", self.g_factor),
            ("lever_arm_eV_per_V", self.lever_arm_eV_per_V),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn gyromagnetic_scale_hz_per_t(&self) -> f64 {
        self.g_factor * MU_B_OVER_H_HZ_PER_T
    }

    /// Detuning per gate voltage, Hz/mV.
    fn hz_per_mv(&self) -> f64 {
        let mt_per_mv = self.dx_dV_nm_per_mV * self.dBx_dx_mT_per_nm;
        mt_per_mv * 1e-3 * self.gyromagnetic_scale_hz_per_t()
    }

    /// Detuning per SET current, Hz/pA.
    pub fn hz_per_pa(&self) -> f64 {
        self.dV_dI_mV_per_pA * self.hz_per_mv()
    }

    /// Detuning per dot energy shift, Hz/µeV.
    pub fn hz_per_micro_ev(&self) -> f64 {
        // 1 µeV / lever arm [eV/V] = 1e-6 / lever V = 1e-3 / lever mV.
        1e-3 / self.lever_arm_eV_per_V * self.hz_per_mv()
    }

    /// Linear factor from `unit` to detuning in Hz.
    pub fn factor_for(&self, unit: &QuantityUnit) -> Result<f64> {
        match unit {
            QuantityUnit::CurrentPa => Ok(self.hz_per_pa()),
            QuantityUnit::EnergyMicroEv => Ok(self.hz_per_micro_ev()),
            other => Err(Error::UnknownUnit(other.to_string())),
        }
    }
}

/// Samplewise conversion of an SET current trace to detuning.
pub fn detuning_from_current(trace: &NoiseTrace, chain: &ConversionChain) -> Result<NoiseTrace> {
    chain.validate()?;
    if trace.unit() != &QuantityUnit::CurrentPa {
        return Err(Error::UnitMismatch {
            expected: QuantityUnit::CurrentPa.to_string(),
            found: trace.unit().to_string(),
        });
    }
    trace.scaled(chain.hz_per_pa(), QuantityUnit::DetuningHz)
}

/// Detuning spectrum of a current- or energy-unit spectrum.
pub fn convert_psd(psd: &CompositePsd, chain: &ConversionChain) -> Result<CompositePsd> {
    chain.validate()?;
    let k = chain.factor_for(psd.unit_label())?;
    psd.scaled(k * k, QuantityUnit::DetuningHz)
}
