//! Offline calibration on a synthetic corpus: recover the planted dominant
//! chunks of every head and save the result as JSON.

use fasa::harness::{run_recovery, synth_planted, PlantedSpec};
use fasa::tooling::dominant_file::{load_dominant, save_dominant};
use fasa::{calibrate, AgreementWindow};

fn main() -> fasa::Result<()> {
    let mut spec = PlantedSpec::new(64, 1024, vec![4, 11, 19, 30], 32, 10.0, 1.0, 7);
    spec.samples = 4;
    spec.layers = 2;
    spec.heads = 2;
    let (corpus, truth) = synth_planted(&spec)?;
    let k = AgreementWindow::new(32)?;

    let set = calibrate(&corpus, 4, k)?;
    for (head, list) in &set.entries {
        let chunks: Vec<_> = list.iter().map(|c| format!("{}:{:.3}", c.chunk, c.mean_ca)).collect();
        println!("head {head}: {}", chunks.join("  "));
    }

    let report = run_recovery(&corpus, &truth, k, 4)?;
    println!(
        "\nmean overlap with planted set {:.3}; mean CA planted {:.3}, others {:.3}",
        report.mean_overlap, report.mean_ca_planted, report.mean_ca_nonplanted
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("dominant.json");
    save_dominant(&path, &set)?;
    assert_eq!(load_dominant(&path)?, set);
    println!("saved and reloaded {}", path.display());
    Ok(())
}
