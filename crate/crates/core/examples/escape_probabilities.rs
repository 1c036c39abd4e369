//! Estimates Es(n) and Es(m, n) from one coupled run and prints M_n.
//!
//!     cargo run --release --example escape_probabilities -- 64 20000

use lerw::escape::run_escape;
use lerw::parallel::Exec;

fn main() -> lerw::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: i64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(32);
    let trials: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let inner: Vec<i64> = [4, 8, 16, 32, 64, 128, 256].into_iter().filter(|&m| m < n).collect();

    let started = std::time::Instant::now();
    let run = run_escape(n, &inner, trials, Exec::new(1))?;
    let es = run.plain();
    println!("Es({n}) = {:.4} ± {:.4}", es.value, es.stderr);
    for &m in &inner {
        let e = run.two_scale(m)?;
        println!("Es({m}, {n}) = {:.4} ± {:.4}", e.value, e.stderr);
    }
    let mean = run.lerw_lengths.iter().map(|&x| x as f64).sum::<f64>() / trials as f64;
    println!("E[M_{n}] ≈ {mean:.1}  (M_n / n²Es(n) ≈ {:.3})", mean / (n * n) as f64 / es.value);
    eprintln!("{trials} trials in {:.1?}", started.elapsed());
    Ok(())
}
