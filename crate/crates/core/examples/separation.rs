//! Non-intersection of a LERW and an independent walk to ∂B(Rn), and how
//! often they end up separated in opposite half-spaces.
//!
//!     cargo run --release --example separation -- 8 4 20000

use lerw::escape::estimate_joint_separation;
use lerw::parallel::Exec;

fn main() -> lerw::Result<()> {
    let args: Vec<i64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(8);
    let r = args.get(1).copied().unwrap_or(4);
    let trials = args.get(2).copied().unwrap_or(10_000) as u64;
    for l in [r * n, 2 * r * n, 4 * r * n] {
        let (f, sep) = estimate_joint_separation(l, r, n, trials, Exec::new(1))?;
        println!(
            "L={l:>4} R={r} n={n}: P(F) = {:.4} ± {:.4}, P(Sep | F) = {:.5} ± {:.5} ({} of {})",
            f.value, f.stderr, sep.value, sep.stderr, sep.successes, sep.trials
        );
    }
    Ok(())
}
