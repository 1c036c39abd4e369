//! Walks conditioned to leave a ball without hitting a simple path, their
//! loop erasures, and an exact check of the LERW domain Markov property.

use crate::error::{Error, Result};
use crate::lattice::{first_hit_index, Ball, CubeRegion, LatticeSet, Point3, Region, Scale};
use crate::loop_erasure::{LoopEraser, SimplePath};
use crate::potential::{avoidance_harmonic, AvoidanceField, Chain, FiniteDomain, LawQuery, LerwLaw, Site};
use crate::walk::{LatticePath, StepStream, StreamKey};

/// Largest ball (in lattice points) for which the h-transform is tabulated.
pub const EXACT_SITE_LIMIT: usize = 10_000;
pub const DEFAULT_ATTEMPT_CAP: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Resample whole trajectories until one avoids `γ`.
    Rejection,
    /// Tilt each step by the avoidance function `h`.
    ExactHTransform,
    /// `ExactHTransform` up to [`EXACT_SITE_LIMIT`] sites, `Rejection` beyond.
    Auto,
}

/// Simple random walk from `start`, conditioned on `S[1, τ] ∩ γ = ∅` where
/// `τ` is the exit time of `domain`.
#[derive(Clone, Debug)]
pub struct AvoidanceProblem {
    pub gamma: SimplePath,
    pub start: Point3,
    pub domain: Ball,
    pub method: Method,
    pub attempt_cap: u64,
}

impl AvoidanceProblem {
    pub fn new(gamma: SimplePath, start: Point3, domain: Ball) -> Result<Self> {
        if !domain.contains(start) {
            return Err(Error::StartOutsideDomain(start.coords()));
        }
        let v = gamma.vertices();
        if v[..v.len() - 1].contains(&start) {
            return Err(Error::InvalidPrefix("start lies on γ before its final vertex".into()));
        }
        Ok(AvoidanceProblem { gamma, start, domain, method: Method::Auto, attempt_cap: DEFAULT_ATTEMPT_CAP })
    }

    /// `X^γ` in the usual setting: start at the final vertex of `γ`.
    pub fn from_terminal(gamma: SimplePath, domain: Ball) -> Result<Self> {
        let start = gamma.end();
        Self::new(gamma, start, domain)
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_attempt_cap(mut self, cap: u64) -> Self {
        self.attempt_cap = cap.max(1);
        self
    }

    fn domain_sites(&self) -> usize {
        // cheap upper bound first so huge balls never get enumerated
        let r = self.domain.radius.ceil();
        let cube = (2 * r + 1).pow(3) as usize;
        if cube <= EXACT_SITE_LIMIT {
            return cube.min(self.domain.lattice_points().len());
        }
        if 4 * r * r * r > 3 * EXACT_SITE_LIMIT as i64 {
            return cube;
        }
        self.domain.lattice_points().len()
    }

    pub fn resolved_method(&self) -> Method {
        match self.method {
            Method::Auto if self.domain_sites() <= EXACT_SITE_LIMIT => Method::ExactHTransform,
            Method::Auto => Method::Rejection,
            m => m,
        }
    }
}

/// Tabulated avoidance function `h(y) = P^y(S[0, τ] ∩ γ = ∅)` and the tilted
/// one-step law `h(y) / Σ h(y')` over the neighbors of every interior site.
#[derive(Clone, Debug)]
pub struct HTable {
    domain: FiniteDomain,
    field: AvoidanceField,
    cumulative: Vec<[f64; 6]>,
}

impl HTable {
    pub fn new(problem: &AvoidanceProblem) -> Result<Self> {
        let sites = problem.domain_sites();
        if sites > EXACT_SITE_LIMIT {
            return Err(Error::DomainTooLarge { sites, limit: EXACT_SITE_LIMIT });
        }
        let domain = FiniteDomain::from_ball(&problem.domain)?;
        let gamma: LatticeSet = problem.gamma.vertices().iter().copied().collect();
        let field = avoidance_harmonic(&domain, &Chain::simple(&domain), &gamma)?;
        let cumulative = (0..domain.len())
            .map(|i| {
                let w = domain.links(i).map(|s| field.at(s));
                let total: f64 = w.iter().sum();
                let mut cum = [0.0; 6];
                if total > 0.0 {
                    let mut acc = 0.0;
                    let last = w.iter().rposition(|&x| x > 0.0).unwrap();
                    for k in 0..6 {
                        acc += w[k] / total;
                        cum[k] = if k >= last { 1.0 } else { acc };
                    }
                }
                cum
            })
            .collect();
        Ok(HTable { domain, field, cumulative })
    }

    pub fn h(&self, p: Point3) -> f64 {
        self.domain.site(p).map_or(1.0, |s| self.field.at(s))
    }

    /// `P^x(S[1, τ] ∩ γ = ∅)`.
    pub fn avoidance(&self, x: Point3) -> Result<f64> {
        let i = self.domain.interior_index(x)?;
        Ok(self.domain.links(i).iter().map(|&s| self.field.at(s)).sum::<f64>() / 6.0)
    }

    /// Tilted one-step law from `x`, in [`crate::lattice::UNIT_STEPS`] order.
    pub fn step_law(&self, x: Point3) -> Result<[f64; 6]> {
        let i = self.domain.interior_index(x)?;
        let c = self.cumulative[i];
        let mut out = [0.0; 6];
        let mut prev = 0.0;
        for k in 0..6 {
            out[k] = c[k] - prev;
            prev = c[k];
        }
        Ok(out)
    }

    fn walk(&self, start: Point3, stream: &mut StepStream) -> Vec<Point3> {
        let mut path = vec![start];
        let mut here = start;
        while let Some(Site::Interior(i)) = self.domain.site(here) {
            let u = stream.next_f64();
            let c = &self.cumulative[i];
            let k = c.iter().position(|&x| u < x).unwrap_or(5) as u8;
            here = here.step(k);
            path.push(here);
        }
        path
    }
}

/// Reusable sampler for one [`AvoidanceProblem`]; the h-table, when used, is
/// built once and shared read-only.
#[derive(Clone, Debug)]
pub struct ConditionedSampler {
    problem: AvoidanceProblem,
    gamma: LatticeSet,
    table: Option<HTable>,
}

impl ConditionedSampler {
    pub fn new(problem: AvoidanceProblem) -> Result<Self> {
        let gamma: LatticeSet = problem.gamma.vertices().iter().copied().collect();
        if problem.start.neighbors().iter().all(|q| gamma.contains(q)) {
            return Err(Error::ImpossibleConditioning);
        }
        let table = match problem.resolved_method() {
            Method::ExactHTransform => {
                let t = HTable::new(&problem)?;
                if t.avoidance(problem.start)? <= 0.0 {
                    return Err(Error::ImpossibleConditioning);
                }
                Some(t)
            }
            _ => None,
        };
        Ok(ConditionedSampler { problem, gamma, table })
    }

    pub fn problem(&self) -> &AvoidanceProblem {
        &self.problem
    }

    pub fn table(&self) -> Option<&HTable> {
        self.table.as_ref()
    }

    /// One conditioned trajectory and the number of attempts it took
    /// (always 1 for the h-transform).
    pub fn sample_with_attempts(&self, key: StreamKey) -> Result<(LatticePath, u64)> {
        let mut stream = key.stream();
        if let Some(t) = &self.table {
            let path = t.walk(self.problem.start, &mut stream);
            return Ok((LatticePath::from_vec_unchecked(path), 1));
        }
        let ball = self.problem.domain;
        let mut path = Vec::new();
        for attempt in 1..=self.problem.attempt_cap {
            path.clear();
            path.push(self.problem.start);
            let mut here = self.problem.start;
            let mut ok = true;
            while ball.contains(here) {
                here = here.step(stream.next_direction());
                path.push(here);
                if self.gamma.contains(&here) {
                    ok = false;
                    break;
                }
            }
            if ok {
                return Ok((LatticePath::from_vec_unchecked(path), attempt));
            }
        }
        Err(Error::AttemptCapExceeded(self.problem.attempt_cap))
    }

    pub fn sample(&self, key: StreamKey) -> Result<LatticePath> {
        self.sample_with_attempts(key).map(|(p, _)| p)
    }

    /// `LE(X[0, τ])`, plus the first index of the erased path on the outer
    /// boundary of `stop_cube` when one is given.
    pub fn sample_lerw(&self, key: StreamKey, stop_cube: Option<&CubeRegion>) -> Result<ConditionedLerw> {
        let walk = self.sample(key)?;
        let mut eraser = LoopEraser::new();
        for &p in walk.vertices() {
            eraser.push(p);
        }
        let path = SimplePath::from_vec_unchecked(eraser.path().to_vec());
        let stop_index = stop_cube.and_then(|c| first_hit_index(path.vertices(), &c.boundary()));
        Ok(ConditionedLerw { path, stop_index })
    }
}

/// Loop erasure of a conditioned walk with its optional stopping index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConditionedLerw {
    pub path: SimplePath,
    pub stop_index: Option<usize>,
}

impl ConditionedLerw {
    /// `LE[0, t]` when a stopping index exists, else the whole path.
    pub fn truncated(&self) -> SimplePath {
        match self.stop_index {
            Some(t) => self.path.segment(0, t),
            None => self.path.clone(),
        }
    }
}

pub fn sample_conditioned(problem: &AvoidanceProblem, key: StreamKey) -> Result<LatticePath> {
    ConditionedSampler::new(problem.clone())?.sample(key)
}

pub fn conditioned_lerw(
    problem: &AvoidanceProblem,
    key: StreamKey,
    stop_cube: Option<&CubeRegion>,
) -> Result<ConditionedLerw> {
    ConditionedSampler::new(problem.clone())?.sample_lerw(key, stop_cube)
}

/// The cube shells and observation window attached to a path `γ` that ends on
/// `∂D_{i,n}`: the face through the end point `v`, the perpendicular segment to
/// `∂D_{i+1,n}`, its midpoint `o₁`, and the window `o₁ + [-n/8M, n/8M]³`.
#[derive(Clone, Debug)]
pub struct WindowGeometry {
    pub i: i64,
    pub m: i64,
    pub n: i64,
    pub v: Point3,
    /// Axis normal to the face containing `v`, and the side of that face.
    pub axis: usize,
    pub sign: i64,
    pub inner: CubeRegion,
    pub outer: CubeRegion,
    pub midpoint: [Scale; 3],
    pub window: CubeRegion,
}

pub fn window_geometry(gamma: &SimplePath, i: i64, m: i64, n: i64) -> Result<WindowGeometry> {
    if m < 20 {
        return Err(Error::BadScales(format!("M = {m} must be at least 20")));
    }
    if i < 0 || i > m / 20 {
        return Err(Error::BadScales(format!("shell index {i} outside 0..={}", m / 20)));
    }
    if n < 1 {
        return Err(Error::BadScales("n must be positive".into()));
    }
    let ns = Scale::from_integer(n);
    let inner = CubeRegion::centered(i, m, ns);
    let outer = CubeRegion::centered(i + 1, m, ns);
    let v = gamma.end();
    let body = &gamma.vertices()[..gamma.vertices().len() - 1];
    if !body.iter().all(|&p| inner.contains(p)) {
        return Err(Error::BadScales("γ leaves D_{i,n} before its end point".into()));
    }
    if !inner.boundary().contains(v) {
        return Err(Error::BadScales("γ must end on ∂D_{i,n}".into()));
    }
    let k_in = inner.hi[0];
    let axis = (0..3).find(|&a| Scale::from_integer(v.coord(a).abs()) > k_in).unwrap();
    let sign = v.coord(axis).signum();
    let mut midpoint = v.coords().map(Scale::from_integer);
    midpoint[axis] = Scale::from_integer(sign) * (Scale::from_integer(v.coord(axis).abs()) + outer.hi[0]) / 2;
    let window = CubeRegion::window(midpoint, Scale::new(n, 8 * m));
    Ok(WindowGeometry { i, m, n, v, axis, sign, inner, outer, midpoint, window })
}

/// Outcome of [`verify_domain_markov`].
#[derive(Clone, Debug, PartialEq)]
pub struct DomainMarkovReport {
    pub prefix_len: usize,
    pub continuations: usize,
    pub max_discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Continuations longer than this are checked as prefixes rather than as
/// complete paths.
pub const DEFAULT_MARKOV_DEPTH: usize = 4;

pub fn verify_domain_markov(domain: &FiniteDomain, lambda1: &SimplePath, tolerance: f64) -> Result<DomainMarkovReport> {
    verify_domain_markov_to_depth(domain, lambda1, tolerance, DEFAULT_MARKOV_DEPTH)
}

/// Compares, for every continuation `λ₂` of at most `depth` steps,
///
/// `P(LE(S) ⊒ λ₁ + λ₂) / P(LE(S) ⊒ λ₁)` with `P(LE(Y) ⊒ λ₂)`,
///
/// where `Y` is the walk from the end of `λ₁` conditioned on
/// `Y[1, σ] ∩ λ₁ = ∅`, realised as the chain with steps `p(x,y) h(y) / h(x)`.
/// `⊒` is equality when `λ₂` ends on `∂D` and prefix equality otherwise.
pub fn verify_domain_markov_to_depth(
    domain: &FiniteDomain,
    lambda1: &SimplePath,
    tolerance: f64,
    depth: usize,
) -> Result<DomainMarkovReport> {
    let start = lambda1.start();
    for &p in lambda1.vertices() {
        domain.interior_index(p).map_err(|_| Error::InvalidPrefix("λ₁ must lie in D".into()))?;
    }
    let mut law_s = LerwLaw::simple(domain);
    let base = law_s.probability(start, lambda1, LawQuery::Prefix)?;
    if base <= 0.0 {
        return Err(Error::InvalidPrefix("λ₁ has zero probability".into()));
    }
    let v = lambda1.end();
    let vi = domain.interior_index(v)?;
    let on_l1: LatticeSet = lambda1.vertices().iter().copied().collect();
    let simple = Chain::simple(domain);
    let h = avoidance_harmonic(domain, &simple, &on_l1)?;
    let z = h.escape_from(&simple, vi);
    if z <= 0.0 {
        return Err(Error::InvalidPrefix("no continuation avoids λ₁".into()));
    }
    let tilted = Chain::from_weights(domain, |i, s| {
        let hi = h.interior[i];
        if i == vi {
            h.at(s) / (6.0 * z)
        } else if hi > 0.0 {
            h.at(s) / (6.0 * hi)
        } else {
            0.0
        }
    });
    let mut law_y = LerwLaw::with_chain(domain, tilted);

    let mut report = DomainMarkovReport {
        prefix_len: lambda1.len(),
        continuations: 0,
        max_discrepancy: 0.0,
        tolerance,
        passed: true,
    };
    let mut stack = vec![vec![v]];
    while let Some(l2) = stack.pop() {
        let end = *l2.last().unwrap();
        let terminal = matches!(domain.site(end), Some(Site::Boundary(_)));
        let query = if terminal { LawQuery::Complete } else { LawQuery::Prefix };
        let mut joined = lambda1.vertices().to_vec();
        joined.extend_from_slice(&l2[1..]);
        let lhs = law_s.probability(start, &SimplePath::from_vec_unchecked(joined), query)? / base;
        let rhs = law_y.probability(v, &SimplePath::from_vec_unchecked(l2.clone()), query)?;
        report.continuations += 1;
        report.max_discrepancy = report.max_discrepancy.max((lhs - rhs).abs());
        if terminal || l2.len() > depth {
            continue;
        }
        for q in end.neighbors() {
            if on_l1.contains(&q) || l2.contains(&q) {
                continue;
            }
            let mut next = l2.clone();
            next.push(q);
            stack.push(next);
        }
    }
    report.passed = report.max_discrepancy < tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: i64, y: i64, z: i64) -> Point3 {
        Point3::new(x, y, z)
    }

    fn gamma4() -> SimplePath {
        SimplePath::new(vec![p(-1, 0, 0), p(-1, 1, 0), p(0, 1, 0), p(1, 1, 0), p(1, 0, 0)]).unwrap()
    }

    #[test]
    fn trivial_conditioning_on_unit_ball_is_a_plain_step() {
        let prob = AvoidanceProblem::new(SimplePath::single(Point3::ORIGIN), Point3::ORIGIN, Ball::centered(1))
            .unwrap()
            .with_method(Method::ExactHTransform);
        let s = ConditionedSampler::new(prob).unwrap();
        let law = s.table().unwrap().step_law(Point3::ORIGIN).unwrap();
        for w in law {
            assert!((w - 1.0 / 6.0).abs() < 1e-12);
        }
        let walk = s.sample(StreamKey::new(1, 2, 3)).unwrap();
        assert_eq!(walk.len(), 1);
    }

    #[test]
    fn h_transform_start_law_is_the_normalised_h() {
        let prob = AvoidanceProblem::from_terminal(gamma4(), Ball::centered(3))
            .unwrap()
            .with_method(Method::ExactHTransform);
        let s = ConditionedSampler::new(prob).unwrap();
        let t = s.table().unwrap();
        let v = p(1, 0, 0);
        let hs = v.neighbors().map(|q| t.h(q));
        let total: f64 = hs.iter().sum();
        for (w, hq) in t.step_law(v).unwrap().iter().zip(hs) {
            assert!((w - hq / total).abs() < 1e-12);
        }
        assert_eq!(t.h(p(0, 1, 0)), 0.0);
    }

    #[test]
    fn samples_avoid_gamma_and_exit() {
        let ball = Ball::centered(3);
        for method in [Method::ExactHTransform, Method::Rejection] {
            let s = ConditionedSampler::new(
                AvoidanceProblem::from_terminal(gamma4(), ball).unwrap().with_method(method),
            )
            .unwrap();
            for t in 0..500 {
                let w = s.sample(StreamKey::new(5, 6, t)).unwrap();
                let v = w.vertices();
                assert!(!ball.contains(w.end()));
                assert!(v[..v.len() - 1].iter().all(|&q| ball.contains(q)));
                assert!(v[1..].iter().all(|q| !gamma4().contains(*q)));
            }
        }
    }

    #[test]
    fn impossible_conditioning_is_reported() {
        let o = Point3::ORIGIN;
        let around = SimplePath::new(vec![
            p(1, 0, 0), p(1, 1, 0), p(0, 1, 0), p(-1, 1, 0), p(-1, 0, 0), p(-1, 0, 1),
            p(0, 0, 1), p(0, -1, 1), p(0, -1, 0), p(0, -1, -1), p(0, 0, -1),
        ])
        .unwrap();
        for method in [Method::ExactHTransform, Method::Rejection] {
            let prob = AvoidanceProblem::new(around.clone(), o, Ball::centered(3)).unwrap().with_method(method);
            assert!(matches!(ConditionedSampler::new(prob), Err(Error::ImpossibleConditioning)));
        }
    }

    #[test]
    fn exact_method_refuses_large_domains() {
        let prob = AvoidanceProblem::new(SimplePath::single(Point3::ORIGIN), Point3::ORIGIN, Ball::centered(40))
            .unwrap()
            .with_method(Method::ExactHTransform);
        assert!(matches!(ConditionedSampler::new(prob.clone()), Err(Error::DomainTooLarge { .. })));
        assert_eq!(prob.with_method(Method::Auto).resolved_method(), Method::Rejection);
    }

    #[test]
    fn attempt_cap_is_enforced() {
        // with a single attempt allowed, any rejected trajectory is a failure
        let prob = AvoidanceProblem::from_terminal(gamma4(), Ball::centered(6))
            .unwrap()
            .with_method(Method::Rejection)
            .with_attempt_cap(1);
        let s = ConditionedSampler::new(prob).unwrap();
        let failures = (0..200)
            .filter(|&t| matches!(s.sample(StreamKey::new(1, 1, t)), Err(Error::AttemptCapExceeded(1))))
            .count();
        assert!(failures > 0);
    }

    #[test]
    fn stopping_index_replays_first_hit() {
        let ball = Ball::centered(5);
        let prob = AvoidanceProblem::from_terminal(gamma4(), ball).unwrap();
        let s = ConditionedSampler::new(prob).unwrap();
        let cube = CubeRegion::window([Scale::from_integer(0); 3], Scale::from_integer(2));
        for t in 0..300 {
            let out = s.sample_lerw(StreamKey::new(3, 3, t), Some(&cube)).unwrap();
            SimplePath::new(out.path.vertices().to_vec()).unwrap();
            let expected = out.path.vertices().iter().position(|&q| cube.boundary().contains(q));
            assert_eq!(out.stop_index, expected);
            assert!(out.stop_index.is_some());
        }
    }

    #[test]
    fn window_geometry_matches_hand_computation() {
        // n = 60, M = 20, i = 0: D_{0,60} = [-20, 20]³, D_{1,60} = [-23, 23]³
        let gamma = SimplePath::new((0..=21).map(|x| p(x, 0, 0)).collect()).unwrap();
        let g = window_geometry(&gamma, 0, 20, 60).unwrap();
        assert_eq!((g.axis, g.sign), (0, 1));
        assert_eq!(g.midpoint[0], Scale::new(44, 2));
        assert_eq!(g.window.lo[0], Scale::new(22, 1) - Scale::new(60, 160));
        let bad = SimplePath::new((0..=10).map(|x| p(x, 0, 0)).collect()).unwrap();
        assert!(matches!(window_geometry(&bad, 0, 20, 60), Err(Error::BadScales(_))));
        assert!(matches!(window_geometry(&gamma, 0, 19, 60), Err(Error::BadScales(_))));
        assert!(matches!(window_geometry(&gamma, 2, 20, 60), Err(Error::BadScales(_))));
    }

    #[test]
    fn domain_markov_with_empty_prefix_is_exact() {
        let d = FiniteDomain::from_ball(&Ball::centered(2)).unwrap();
        let r = verify_domain_markov_to_depth(&d, &SimplePath::single(Point3::ORIGIN), 1e-12, 3).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn domain_markov_one_step_prefix_on_b2() {
        let d = FiniteDomain::from_ball(&Ball::centered(2)).unwrap();
        let l1 = SimplePath::new(vec![Point3::ORIGIN, p(0, 1, 0)]).unwrap();
        let r = verify_domain_markov(&d, &l1, 1e-10).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.continuations > 10);
    }
}
