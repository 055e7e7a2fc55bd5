//! Closed-form speedup, traffic and memory footprint.

use fasa::cache::{
    footprint_fasa_m, full_cache_footprint, speedup_limit, speedup_model, traffic_fraction, CacheGeometry,
};

fn main() -> fasa::Result<()> {
    let (d, n_tip, n_fac) = (128, 16, 256);
    println!("d = {d}, n_tip = {n_tip}, n_fac = {n_fac}");
    println!("{:>8}  {:>8}  {:>10}", "t", "speedup", "traffic");
    for shift in 10..=17 {
        let t = 1u64 << shift;
        println!(
            "{t:>8}  {:>8.4}  {:>10.8}",
            speedup_model(t, d, n_tip, n_fac),
            traffic_fraction(t, d, n_tip, n_fac)
        );
    }
    println!("limit as t grows: {}", speedup_limit(d, n_tip));

    let g = CacheGeometry::new(2, 1024, 128, 64, 16, 2)?;
    println!(
        "\nfootprint for 2 layers, L = 1024, b = 128, d = 64, d_dom = 16: {} B (full cache {} B)",
        footprint_fasa_m(&g),
        full_cache_footprint(&g)
    );
    Ok(())
}
