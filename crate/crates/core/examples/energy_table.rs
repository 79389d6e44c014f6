//! Reproduces the reported energy rows from their AC/MAC totals, then
//! measures a toy network with the op-counting probe.

use neuroscatter::energy::{ann_twin_ledger, EnergyConstants, EnergyLedger, EnergyReport};
use neuroscatter::model::{ArchConfig, SnnModel};
use neuroscatter::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> neuroscatter::Result<()> {
    let c = EnergyConstants::default();
    let snn = EnergyLedger::from_totals(4.95e9, 0.769e9, c);
    let ann = EnergyLedger::from_totals(0.0, 30.94e9, c);
    println!("reported SNN: {:.2} mJ", snn.total_energy() * 1e3);
    println!("reported ANN: {:.2} mJ\n", ann.total_energy() * 1e3);

    let arch = ArchConfig { time_steps: 8, ..ArchConfig::toy() };
    let mut model = SnnModel::<f32>::new(arch.clone(), 3)?;
    let mut ledger = EnergyLedger::new(c);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape = Tape::inference();
    for _ in 0..arch.time_steps {
        let x = Tensor::from_fn(&[1, 2, arch.in_h, arch.in_w], |_| if rng.random_bool(0.05) { 1.0 } else { 0.0 });
        model.step(&mut tape, &x, Some(&mut ledger))?;
    }
    ledger.check()?;
    let twin = ann_twin_ledger(&arch, c)?;
    let report = EnergyReport::new("example".into(), &arch, model.param_count(), &ledger, &twin, 1);
    println!("{:<5} {:>9} {:>8} {:>8} {:>8} {:>10}", "model", "params(M)", "OPs(G)", "ACs(G)", "MACs(G)", "energy(mJ)");
    for row in &report.table {
        println!(
            "{:<5} {:>9.3} {:>8.4} {:>8.4} {:>8.4} {:>10.5}",
            row.model, row.params_m, row.ops_g, row.acs_g, row.macs_g, row.energy_mj
        );
    }
    Ok(())
}
