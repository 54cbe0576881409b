// SPDX-License-Identifier: Apache-2.0

//! Energy ledger and carbon arithmetic.
//!
//! Energy is stored in whole micro-kWh and carbon intensity in whole
//! milligrams per kWh, so emissions are an exact integer number of
//! nanograms and per-stage reports add up without rounding.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid carbon intensity used unless configured otherwise, in g/kWh.
pub const DEFAULT_CARBON_INTENSITY: f64 = 475.0;

const MICRO: f64 = 1e6;
const MILLI: f64 = 1e3;

fn to_fixed(value: f64, scale: f64, what: &str) -> Result<u64> {
    if !value.is_finite() {
        return Err(Error::InvalidParameter(format!("{what} {value} is not finite")));
    }
    if value < 0.0 {
        return Err(Error::InvalidParameter(format!("{what} {value} is negative")));
    }
    let fixed = (value * scale).round();
    if fixed > u64::MAX as f64 {
        return Err(Error::InvalidParameter(format!("{what} {value} is too large")));
    }
    Ok(fixed as u64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyEntry {
    pub stage: String,
    pub micro_kwh: u64,
    pub duration_ms: u64,
}

impl EnergyEntry {
    pub fn new(stage: impl Into<String>, kwh: f64, hours: f64) -> Result<Self> {
        Ok(EnergyEntry {
            stage: stage.into(),
            micro_kwh: to_fixed(kwh, MICRO, "energy (kWh)")?,
            duration_ms: to_fixed(hours * 3600.0, MILLI, "duration (h)")?,
        })
    }

    /// Wall-clock seconds at a constant power draw.
    pub fn from_wall_clock(stage: impl Into<String>, secs: f64, watts: f64) -> Result<Self> {
        if !(watts >= 0.0) {
            return Err(Error::InvalidParameter(format!("device power {watts} W is negative")));
        }
        EnergyEntry::new(stage, watts * secs / 3.6e6, secs / 3600.0)
    }

    pub fn kwh(&self) -> f64 {
        self.micro_kwh as f64 / MICRO
    }

    pub fn hours(&self) -> f64 {
        self.duration_ms as f64 / MILLI / 3600.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub entries: Vec<EnergyEntry>,
    /// Milligrams CO₂eq per kWh.
    pub intensity_mg_per_kwh: u64,
    /// How energies were obtained, e.g. "wall-clock x 15 W".
    pub method: String,
}

impl EnergyLedger {
    pub fn new(intensity_g_per_kwh: f64, method: impl Into<String>) -> Result<Self> {
        Ok(EnergyLedger {
            entries: Vec::new(),
            intensity_mg_per_kwh: to_fixed(intensity_g_per_kwh, MILLI, "carbon intensity")?,
            method: method.into(),
        })
    }

    pub fn intensity(&self) -> f64 {
        self.intensity_mg_per_kwh as f64 / MILLI
    }

    pub fn push(&mut self, entry: EnergyEntry) {
        self.entries.push(entry);
    }

    pub fn total_micro_kwh(&self) -> u64 {
        self.entries.iter().map(|e| e.micro_kwh).sum()
    }
}

/// An exact mass in nanograms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Grams(pub u128);

impl Grams {
    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }
}

impl std::ops::Add for Grams {
    type Output = Grams;

    fn add(self, rhs: Grams) -> Grams {
        Grams(self.0 + rhs.0)
    }
}

/// Decimal grams without trailing zeros, e.g. `1187.5`.
impl fmt::Display for Grams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / 1_000_000_000;
        let frac = self.0 % 1_000_000_000;
        if frac == 0 {
            return write!(f, "{whole}");
        }
        let digits = format!("{frac:09}");
        write!(f, "{whole}.{}", digits.trim_end_matches('0'))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CarbonReport {
    /// `(stage, emissions)` in ledger order.
    pub per_stage: Vec<(String, Grams)>,
    pub total: Grams,
}

impl CarbonReport {
    pub fn to_csv(&self, ledger: &EnergyLedger) -> String {
        let mut out = String::from("stage,kwh,hours,gco2eq\n");
        for (entry, (_, g)) in ledger.entries.iter().zip(&self.per_stage) {
            out.push_str(&format!("{},{},{},{}\n", entry.stage, entry.kwh(), entry.hours(), g));
        }
        out.push_str(&format!("total,{},,{}\n", ledger.total_micro_kwh() as f64 / MICRO, self.total));
        out
    }
}

/// Emissions = intensity x energy, per stage and in total.
pub fn carbon_report(ledger: &EnergyLedger) -> CarbonReport {
    let per_stage: Vec<(String, Grams)> = ledger
        .entries
        .iter()
        .map(|e| {
            // mg/kWh x µkWh = ng
            (e.stage.clone(), Grams(ledger.intensity_mg_per_kwh as u128 * e.micro_kwh as u128))
        })
        .collect();
    let total = per_stage.iter().fold(Grams(0), |acc, (_, g)| acc + *g);
    CarbonReport { per_stage, total }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger(kwh: &[f64]) -> EnergyLedger {
        let mut l = EnergyLedger::new(DEFAULT_CARBON_INTENSITY, "test").unwrap();
        for (i, k) in kwh.iter().enumerate() {
            l.push(EnergyEntry::new(format!("s{i}"), *k, 0.0).unwrap());
        }
        l
    }

    #[test]
    fn default_intensity() {
        let r = carbon_report(&ledger(&[1.0, 0.0, 2.5]));
        assert_eq!(r.per_stage[0].1.to_string(), "475");
        assert_eq!(r.per_stage[1].1, Grams(0));
        assert_eq!(r.per_stage[2].1.to_string(), "1187.5");
        assert_eq!(r.total.to_string(), "1662.5");
    }

    #[test]
    fn rejects_negative_energy() {
        assert!(EnergyEntry::new("x", -0.1, 0.0).is_err());
        assert!(EnergyEntry::new("x", f64::NAN, 0.0).is_err());
        assert!(EnergyLedger::new(-1.0, "m").is_err());
    }

    #[test]
    fn wall_clock_estimate() {
        let e = EnergyEntry::from_wall_clock("t", 3600.0, 15.0).unwrap();
        assert_eq!(e.micro_kwh, 15_000);
        assert_eq!(e.duration_ms, 3_600_000);
    }
}
