//! Probability that a LERW hits two boxes of the annulus, against the
//! escape-probability bound p_both · l / (ε Es(εn, lεn) Es(εn, n)).
//!
//!     cargo run --release --example two_box -- 5000

use lerw::dimension::{sample_box_pairs, two_box_frequencies};
use lerw::escape::run_escape;
use lerw::lattice::{Radius, Scale};
use lerw::parallel::Exec;

fn main() -> lerw::Result<()> {
    let trials: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2_000);
    let (eps, n, h) = (Scale::new(1, 8), 128, 16);
    let exec = Exec::new(1);
    let pairs = sample_box_pairs(eps, 8, 16)?;
    let est = two_box_frequencies(&pairs, eps, n, trials, exec)?;
    let es_n = run_escape(n, &[h], trials, exec)?.two_scale(h)?;
    for e in &est {
        let l2 = (e.l * e.l).round() as i64;
        let es_l = run_escape(Radius::new(h).scaled_sqrt(l2), &[Radius::new(h)], trials, exec)?.two_scale(h)?;
        let ratio = e.p_both * e.l / (0.125 * es_l.value * es_n.value);
        println!(
            "{:?} {:?} l = {:.2}: p_x = {:.3}, p_y = {:.3}, p_both = {:.4}, normalised {ratio:.3}",
            e.x, e.y, e.l, e.p_x, e.p_y, e.p_both
        );
    }
    Ok(())
}
