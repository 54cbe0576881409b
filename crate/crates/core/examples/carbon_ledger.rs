// SPDX-License-Identifier: Apache-2.0

//! Per-stage energy and CO2-equivalent accounting.
//!
//! ```bash
//! cargo run --example carbon_ledger
//! ```

use biasamp::eval::{carbon_report, EnergyEntry, EnergyLedger, DEFAULT_CARBON_INTENSITY};

fn main() -> biasamp::Result<()> {
    let mut ledger = EnergyLedger::new(DEFAULT_CARBON_INTENSITY, "measured at the wall socket")?;
    ledger.push(EnergyEntry::new("train-biased", 0.42, 1.5)?);
    ledger.push(EnergyEntry::new("caption", 0.08, 0.25)?);
    ledger.push(EnergyEntry::new("generate", 0.5, 2.0)?);
    ledger.push(EnergyEntry::from_wall_clock("train-debiased", 5400.0, 250.0)?);

    let report = carbon_report(&ledger);
    print!("{}", report.to_csv(&ledger));
    println!("total {} g CO2eq at {} g/kWh", report.total, ledger.intensity());
    Ok(())
}
