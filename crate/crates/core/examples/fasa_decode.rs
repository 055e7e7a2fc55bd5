//! Decoding one step in the three modes. Fasa ranks cached tokens with the
//! calibrated dominant chunks, then runs exact attention over the selected
//! ones; oracle ranks with the full head; dense attends to everything.

use fasa::harness::{decode_sample, synth_planted, PlantedSpec};
use fasa::{calibrate, AgreementWindow, BudgetConfig, DecodeOutcome, HeadId};

fn main() -> fasa::Result<()> {
    let mut spec = PlantedSpec::new(64, 2048, vec![3, 12, 20, 27], 48, 12.0, 1.0, 1);
    spec.samples = 5;
    let (corpus, _) = synth_planted(&spec)?;
    let head = HeadId::new(0, 0);
    let samples = corpus.samples(head);

    // Calibrate on four samples, decode the fifth.
    let mut calib = fasa::CalibrationCorpus::new(corpus.cfg, "first four samples");
    for s in &samples[..4] {
        calib.push(head, s.clone())?;
    }
    let dom = calibrate(&calib, 4, AgreementWindow::new(64)?)?;
    let idx = dom.indices(head).expect("calibrated head");
    println!("dominant chunks {:?}", idx.iter().map(|c| c.get()).collect::<Vec<_>>());

    let budget = BudgetConfig::new(4, 64);
    let run = decode_sample(&samples[4], &idx, &budget, &corpus.cfg)?;
    let err = |o: &DecodeOutcome| {
        o.output
            .iter()
            .zip(&run.dense.output)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let shared = run
        .fasa
        .selection
        .indices
        .iter()
        .filter(|j| run.oracle.selection.indices.binary_search(j).is_ok())
        .count();

    println!("\nmode    selected      bytes  fraction  max |out - dense|");
    for (name, o) in [("dense", &run.dense), ("oracle", &run.oracle), ("fasa", &run.fasa)] {
        println!(
            "{name:<6}  {:>8}  {:>9}  {:>8.4}  {:>17.3e}",
            o.selection.len(),
            o.accounting.counters.total(),
            o.accounting.measured_fraction(),
            err(o)
        );
    }
    println!(
        "\nfasa picked {shared} of the oracle's {} tokens",
        run.oracle.selection.len()
    );
    Ok(())
}
