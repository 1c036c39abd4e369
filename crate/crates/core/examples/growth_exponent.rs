//! Growth exponent β̂ from E(M_n), the escape exponent α̂ from the same
//! walks, and the ratio E(M_n) / (n² Es(n)).
//!
//!     cargo run --release --example growth_exponent -- 4000

use lerw::dimension::{estimate_growth_exponent, fit_growth};
use lerw::escape::fit_power_law;
use lerw::parallel::Exec;

fn main() -> lerw::Result<()> {
    let trials: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2_000);
    let grid = [8, 16, 32, 64, 128];
    let (fit, samples) = estimate_growth_exponent(&grid, |_| trials, Exec::new(1))?;
    for g in &samples {
        let (r, se) = g.ratio();
        println!("n = {:>4}: E(M_n) = {:>9.1} ± {:>6.1}, Es(n) = {:.4}, ratio {r:.3} (log-se {se:.3})", g.n, g.mean, g.stderr, g.es.value);
    }
    let alpha = fit_power_law(&samples.iter().map(|g| (g.n as f64, g.es.value, g.es.stderr)).collect::<Vec<_>>())?;
    println!("β̂ = {:.4} ± {:.4}", fit.slope, fit.slope_stderr);
    println!("α̂ = {:.4} ± {:.4};  β̂ + α̂ = {:.4}", alpha.alpha(), alpha.slope_stderr, fit.slope + alpha.alpha());
    assert_eq!(fit, fit_growth(&samples)?);
    Ok(())
}
