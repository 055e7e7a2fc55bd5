//! Compound agreement of calibrated chunk sets versus random sets of the same
//! size, across scoring windows, for two calibration windows.

use fasa::harness::{compound_ca_table, synth_planted, PlantedSpec};
use fasa::AgreementWindow;

fn main() -> fasa::Result<()> {
    let mut spec = PlantedSpec::new(32, 512, vec![1, 6, 9, 14], 24, 6.0, 1.0, 5);
    spec.samples = 3;
    spec.heads = 2;
    let (corpus, _) = synth_planted(&spec)?;
    let w = |k| AgreementWindow::new(k);
    let table = compound_ca_table(
        &corpus,
        &[1, 2, 4, 8, 16],
        &[w(16)?, w(128)?],
        &[w(8)?, w(24)?, w(64)?],
        0,
    )?;

    for grid in &table.grids {
        println!("calibration window {}", grid.calibration_window);
        print!("{:>4}", "F");
        for k in &table.budgets {
            print!("  {:>13}", format!("K={k} cal/rnd"));
        }
        println!();
        for row in &grid.rows {
            print!("{:>4}", row.f);
            for (c, r) in row.calibrated.iter().zip(&row.random) {
                print!("  {c:>6.3}/{r:<6.3}");
            }
            println!();
        }
        println!();
    }
    Ok(())
}
