//! Walks conditioned to avoid a path: the exact h-transform against
//! rejection sampling, and the domain Markov check on B(0,2).
//!
//!     cargo run --release --example conditioned_walk

use lerw::conditioned::{verify_domain_markov, AvoidanceProblem, ConditionedSampler, HTable, Method};
use lerw::lattice::{Ball, Point3, UNIT_STEPS};
use lerw::loop_erasure::SimplePath;
use lerw::potential::FiniteDomain;
use lerw::walk::{experiment_id, StreamKey};

fn main() -> lerw::Result<()> {
    let p = Point3::new;
    let gamma = SimplePath::new(vec![p(-1, 0, 0), p(0, 0, 0), p(0, 1, 0)])?;
    let problem = AvoidanceProblem::from_terminal(gamma.clone(), Ball::centered(4))?;
    let table = HTable::new(&problem)?;
    println!("avoidance probability from {:?}: {:.5}", gamma.end(), table.avoidance(gamma.end())?);

    let id = experiment_id("example-conditioned", &[]);
    let samples = 5_000u64;
    for method in [Method::ExactHTransform, Method::Rejection] {
        let sampler = ConditionedSampler::new(problem.clone().with_method(method))?;
        let mut first = [0u64; 6];
        let mut attempts = 0;
        for t in 0..samples {
            let (path, a) = sampler.sample_with_attempts(StreamKey::new(2, id, t))?;
            attempts += a;
            let step = path.vertices()[1] - path.vertices()[0];
            first[UNIT_STEPS.iter().position(|&d| d == step).unwrap()] += 1;
        }
        let freq: Vec<String> = first.iter().map(|&k| format!("{:.3}", k as f64 / samples as f64)).collect();
        println!("{method:?}: first-step frequencies [{}], {attempts} attempts", freq.join(", "));
    }
    let law: Vec<String> = table.step_law(gamma.end())?.iter().map(|x| format!("{x:.3}")).collect();
    println!("exact tilted step law         [{}]", law.join(", "));

    let dom = FiniteDomain::from_ball(&Ball::centered(2))?;
    let prefix = SimplePath::new(vec![p(0, 0, 0), p(0, 0, 1)])?;
    let report = verify_domain_markov(&dom, &prefix, 1e-10)?;
    println!(
        "domain Markov after {:?}: {} continuations, max discrepancy {:.2e}",
        prefix.vertices(),
        report.continuations,
        report.max_discrepancy
    );
    Ok(())
}
