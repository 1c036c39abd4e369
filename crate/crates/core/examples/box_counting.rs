//! Box counts J_{ε,n} of LERW samples, normalised by ε⁻² Es(εn, n), and
//! their survival curve.
//!
//!     cargo run --release --example box_counting -- 128 2000

use lerw::dimension::{default_c_grid, tail_demonstration, BoxAnnulus, BoxConvention};
use lerw::lattice::Scale;
use lerw::parallel::Exec;

fn main() -> lerw::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(64) as i64;
    let trials = args.get(1).copied().unwrap_or(1_000);
    let eps = Scale::new(1, 8);
    for conv in [BoxConvention::Contained, BoxConvention::WithStraddling, BoxConvention::FattenedLattice] {
        println!("{conv:?}: {} qualifying boxes", BoxAnnulus::new(eps, n, conv)?.len());
    }
    let rep = tail_demonstration(eps, n, trials, &default_c_grid(), Exec::new(1))?;
    println!("Es({}, {n}) = {:.4};  ε⁻² Es = {:.2}", n / 8, rep.es.value, rep.normalizer);
    let mean = rep.counts.iter().sum::<u64>() as f64 / rep.trials as f64;
    println!("mean J = {mean:.2}, interquartile ratio of J / (ε⁻² Es) = {:.3}", rep.iqr_ratio);
    for (c, s) in rep.curve.iter().step_by(4) {
        println!("P(J ≥ {c:.2} · ε⁻² Es) = {s:.4}");
    }
    println!("largest c with survival ≥ 0.95: {:?}", rep.threshold_at(0.95));
    Ok(())
}
