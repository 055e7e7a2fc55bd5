//! Rotary embeddings as independent 2D rotations, and why only the offset
//! between query and key matters.

use fasa::rope::{apply_rope, theta, ChunkIndex, RopeConfig};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn main() -> fasa::Result<()> {
    let cfg = RopeConfig::with_default_base(8)?;
    println!("chunk frequencies for d = 8:");
    for i in cfg.chunks() {
        println!("  chunk {i}: theta = {:.6e}", theta(i, &cfg)?);
    }

    let q = [0.3f32, -1.2, 0.8, 0.5, -0.4, 0.9, 1.1, -0.2];
    let k = [1.0f32, 0.1, -0.6, 0.7, 0.2, -0.3, 0.5, 0.4];
    let k64: Vec<f64> = k.iter().map(|&x| x as f64).collect();

    println!("\n<rope(q, m), rope(k, n)> for pairs with the same offset m - n = 7:");
    for (m, n) in [(7, 0), (107, 100), (10_007, 10_000)] {
        let s = dot(&apply_rope(&q, m, &cfg)?, &apply_rope(&k, n, &cfg)?);
        println!("  m = {m:>6}, n = {n:>6}: {s:+.12}");
    }
    let direct = dot(&apply_rope(&q, 7, &cfg)?, &k64);
    println!("  rotate q by 7 only:      {direct:+.12}");

    let high = theta(ChunkIndex(0), &cfg)?;
    let low = theta(ChunkIndex(3), &cfg)?;
    println!(
        "\nchunk 0 turns a full circle every {:.1} tokens, chunk 3 every {:.1}",
        std::f64::consts::TAU / high,
        std::f64::consts::TAU / low
    );
    Ok(())
}
