//! Per-chunk contextual agreement: how well one frequency chunk alone ranks
//! the tokens that the whole head ranks highest.

use fasa::agreement::{ca, topk_indices, AgreementWindow};
use fasa::harness::{synth_planted, PlantedSpec};
use fasa::scores::{fc_scores, full_scores};
use fasa::HeadId;

fn main() -> fasa::Result<()> {
    // Chunks 2 and 5 are planted to carry all the content signal.
    let spec = PlantedSpec::new(16, 256, vec![2, 5], 16, 8.0, 1.0, 42);
    let (corpus, truth) = synth_planted(&spec)?;
    let head = HeadId::new(0, 0);
    let sample = &corpus.samples(head)[0];
    let cfg = corpus.cfg;
    let k = AgreementWindow::new(16)?;

    let full = full_scores(sample, &cfg)?;
    println!("important tokens: {:?}", truth.important[&head][0]);
    println!("full-head top-16:  {:?}\n", topk_indices(&full, k));

    println!("chunk  CA@16");
    for i in cfg.chunks() {
        let score = ca(&full, &fc_scores(sample, i, &cfg)?, k)?;
        let mark = if spec.planted.contains(&i.get()) {
            "  planted"
        } else {
            ""
        };
        println!("{i:>5}  {:.4}{mark}", score.value());
    }
    Ok(())
}
