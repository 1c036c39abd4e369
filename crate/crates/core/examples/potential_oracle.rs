//! Exact Green's function, harmonic measure, avoidance probabilities and the
//! LERW complete-path law on small balls.
//!
//!     cargo run --release --example potential_oracle

use lerw::lattice::{Ball, LatticeSet, Point3};
use lerw::loop_erasure::SimplePath;
use lerw::potential::{
    avoidance_probability, complete_law_mass, exact_lerw_law, exit_distribution, greens_function, hitting_probability,
    mean_exit_time, FiniteDomain, LawQuery,
};

fn main() -> lerw::Result<()> {
    let p = Point3::new;
    let dom = FiniteDomain::from_ball(&Ball::centered(3))?;
    println!("B(0,3): {} interior sites, {} boundary sites", dom.interior().len(), dom.boundary().len());
    println!("G(0,0) = {:.6}, G(0,e1) = {:.6}", greens_function(&dom, p(0, 0, 0), p(0, 0, 0))?, greens_function(&dom, p(0, 0, 0), p(1, 0, 0))?);
    let target: LatticeSet = [p(1, 1, 0)].into_iter().collect();
    println!("P^0(hit (1,1,0) before exit) = {:.6}", hitting_probability(&dom, p(0, 0, 0), &target)?);
    println!("E^0 τ = {:.4}", mean_exit_time(&dom, p(0, 0, 0))?);
    let exit = exit_distribution(&dom, p(1, 0, 0))?;
    let (z, h) = exit.iter().copied().fold((Point3::ORIGIN, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    println!("most likely exit from e1: {z:?} with probability {h:.5}");
    let gamma = SimplePath::new(vec![p(0, 0, 0), p(1, 0, 0)])?;
    println!("P^e1(S[1,τ] avoids [0, e1]) = {:.6}", avoidance_probability(&dom, p(1, 0, 0), &gamma)?);

    let small = FiniteDomain::from_ball(&Ball::centered(2))?;
    let eta = SimplePath::new(vec![p(0, 0, 0), p(1, 0, 0), p(2, 0, 0)])?;
    println!("P(LERW in B(0,2) = [0, e1, 2e1]) = {:.8}", exact_lerw_law(&small, Point3::ORIGIN, &eta, LawQuery::Complete)?);
    let (mass, paths) = complete_law_mass(&small, Point3::ORIGIN)?;
    println!("total mass of the {paths} complete paths in B(0,2): {mass:.10}");
    Ok(())
}
