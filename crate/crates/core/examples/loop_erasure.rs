//! Chronological loop erasure: a hand example, composition of two walks,
//! the η truncations and the length of a LERW sample.
//!
//!     cargo run --release --example loop_erasure -- 64

use lerw::lattice::{Point3, Radius};
use lerw::loop_erasure::{compose_erase, eta1, eta2, lerw_length, loop_erase, loop_erase_reference, sample_lerw};
use lerw::lattice::Ball;
use lerw::walk::{experiment_id, walk_until_exit, LatticePath, StreamKey};

fn main() -> lerw::Result<()> {
    let n: i64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let p = Point3::new;

    let walk = LatticePath::new(vec![p(0, 0, 0), p(1, 0, 0), p(1, 1, 0), p(1, 0, 0), p(2, 0, 0)])?;
    let rec = loop_erase(&walk);
    println!("LE({:?}) = {:?}, survivor times {:?}", walk.vertices(), rec.erased_path.vertices(), rec.survivor_times);
    assert_eq!(rec, loop_erase_reference(&walk));

    let id = experiment_id("example-le", &[]);
    let ball = Ball::centered(n / 2);
    let a = walk_until_exit(Point3::ORIGIN, &ball, StreamKey::new(1, id, 0))?;
    let b = walk_until_exit(a.end(), &Ball::new(a.end(), Radius::new(n / 2)), StreamKey::new(1, id, 1))?;
    let (le1, le2) = compose_erase(&a, &b)?;
    let whole = loop_erase(&a.concat(&b)?).erased_path;
    println!(
        "walks of {} + {} steps: LE of the concatenation has {} vertices = {} + {} - 1",
        a.len(),
        b.len(),
        whole.len(),
        le1.len(),
        le2.len()
    );

    let lerw = sample_lerw(Point3::ORIGIN, &Ball::centered(n), StreamKey::new(1, id, 2))?;
    let cut = eta1(&lerw, Point3::ORIGIN, Radius::new(n / 2))?;
    let seg = eta2(&lerw, Point3::ORIGIN, Radius::new(n / 4), Radius::new(n / 2))?;
    println!("LERW to ∂B({n}): {} vertices; η¹ at n/2 keeps {}, η² between n/4 and n/2 keeps {}", lerw.len(), cut.len(), seg.len());

    let lengths: Vec<usize> = (0..200).map(|t| lerw_length(n, StreamKey::new(1, id, 100 + t))).collect::<Result<_, _>>()?;
    let mean = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
    println!("mean M_{n} over 200 samples: {mean:.1}");
    Ok(())
}
