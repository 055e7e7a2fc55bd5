//! The tiered KV layout: dominant key coordinates stay in the fast tier, the
//! rest of each key and the values live in the slow tier. Counters record what
//! each decode step touches.

use fasa::cache::{traffic_fraction, TieredCache};
use fasa::harness::rng::Xoshiro256StarStar;
use fasa::{ChunkIndex, RopeConfig};

fn main() -> fasa::Result<()> {
    let (d, t, n) = (16, 512, 32);
    let cfg = RopeConfig::with_default_base(d)?;
    let dom = [ChunkIndex(5), ChunkIndex(1)];
    let mut cache = TieredCache::new(&cfg, &dom, 2)?;
    println!(
        "hot columns {:?} ({} of {d} per key)",
        cache.hot_columns(),
        cache.d_dom()
    );

    let mut rng = Xoshiro256StarStar::seed_from_u64(3);
    let mut rows = Vec::new();
    for _ in 0..t {
        let k: Vec<f32> = (0..d).map(|_| rng.gaussian() as f32).collect();
        let v: Vec<f32> = (0..d).map(|_| rng.gaussian() as f32).collect();
        cache.append(&k, &v)?;
        rows.push(k);
    }
    assert_eq!(cache.reassemble_key(17)?, rows[17]);

    cache.scan_hot();
    let picked: Vec<usize> = rng.sample_distinct(t, n);
    cache.fetch_selected(&picked)?;
    let c = cache.counters();
    let dense = 2 * t * d * 2;
    println!(
        "hot scan {} B, hot gather {} B, slow transfer {} B",
        c.read, c.gather, c.transfer
    );
    println!(
        "step fraction {:.6} (model {:.6})",
        c.total() as f64 / dense as f64,
        traffic_fraction(t as u64, d, dom.len(), n)
    );
    Ok(())
}
