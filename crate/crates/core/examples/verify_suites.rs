//! Runs one verification suite (default: all) and prints each check.
//!
//! `cargo run --release --example verify_suites -- domain-markov`

use lerw::parallel::Exec;
use lerw::verify::{verify, Suite};

fn main() -> lerw::Result<()> {
    let suite = std::env::args().nth(1).map_or(Suite::All, |s| Suite::parse(&s).expect("unknown suite"));
    let report = verify(suite, Exec::new(1))?;
    for c in &report.checks {
        println!("[{}] {:<70} value={:<12.6} tol={}  {}", c.suite, c.name, c.value, c.tolerance, if c.passed { "ok" } else { "FAIL" });
    }
    println!("{}", if report.passed { "all checks passed" } else { "some checks failed" });
    Ok(())
}
