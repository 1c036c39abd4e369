//! Riesz energies of the normalised grid measures μ_k built from LERW box
//! hits, across resolutions ε = 2⁻ᵏ.
//!
//!     cargo run --release --example energy -- 200

use lerw::dimension::{energy_boundedness_experiment, energy_trend, second_moment_band, EnergyConfig};
use lerw::parallel::Exec;

fn main() -> lerw::Result<()> {
    let trials: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let cfg = EnergyConfig { k_grid: vec![2, 3, 4], n: 64, trials, es_trials: 5_000, delta: 0.2, beta_hat: 1.62 };
    let rows = energy_boundedness_experiment(&cfg, Exec::new(1))?;
    for r in &rows {
        println!(
            "k = {}: Es = {:.4}, mean mass {:.3}, mean I_{:.2} = {:.4} ± {:.4}, E[(Y/ε⁻²Es)²] = {:.3}",
            r.k, r.es.value, r.mean_mass, r.exponent, r.mean_energy, r.stderr, r.second_moment
        );
    }
    let (slope, se) = energy_trend(&rows);
    println!("trend in k: {slope:+.4} ± {se:.4}");
    println!("second-moment spread: {:.3}", second_moment_band(&rows, 4.0, 2.0).noise_adjusted_spread);
    Ok(())
}
