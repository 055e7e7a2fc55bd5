//! FAST1 tensors and corpus directories, including ingest of rotate-half
//! exports.

use fasa::harness::{synth_planted, PlantedSpec};
use fasa::tooling::corpus_dir::{read_corpus, write_corpus, Layout};
use fasa::tooling::tensor::{decode, encode, read_tensor, Tensor};

fn main() -> fasa::Result<()> {
    let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])?;
    let bytes = encode(&t);
    println!("2x3 tensor: {} bytes, header {:?}", bytes.len(), &bytes[..7]);
    assert_eq!(decode(&bytes)?, t);
    match decode(b"FASTX\0\x01") {
        Err(e) => println!("corrupt header: {e}"),
        Ok(_) => unreachable!(),
    }

    let spec = PlantedSpec::new(8, 16, vec![2], 3, 5.0, 0.5, 9);
    let (corpus, _) = synth_planted(&spec)?;
    let dir = tempfile::tempdir()?;
    let manifest = write_corpus(dir.path(), &corpus, Layout::HalfSplit)?;
    println!(
        "\nwrote {} samples in {:?} layout to {}",
        manifest.samples.len(),
        manifest.layout,
        dir.path().display()
    );
    let q_file = read_tensor(dir.path().join("q_0_0_0.fast"))?;
    let q = &corpus.samples(fasa::HeadId::new(0, 0))[0].q;
    println!("query as stored (x.., y..): {:?}", q_file.data);
    println!("query in memory (x, y)..:   {q:?}");
    assert_eq!(read_corpus(dir.path())?, corpus);
    println!("read back identical");
    Ok(())
}
