//! Exact and Monte Carlo quantities checked against oracles written here from
//! first principles: a dense Gauss–Jordan solve of `(I - P) G = I`, classical
//! last-exit identities and plain simulation.

use lerw::conditioned::{AvoidanceProblem, ConditionedSampler, HTable, Method};
use lerw::escape::{estimate_es, estimate_es_star, exact_es_one};
use lerw::lattice::{Ball, LatticeSet, Point3, UNIT_STEPS};
use lerw::loop_erasure::SimplePath;
use lerw::parallel::Exec;
use lerw::potential::{
    avoidance_probability, exact_lerw_law, exit_distribution, hitting_probability, mean_exit_time, FiniteDomain,
    GreensTable, LawQuery,
};
use lerw::walk::{experiment_id, StreamKey};

fn p(x: i64, y: i64, z: i64) -> Point3 {
    Point3::new(x, y, z)
}

/// Interior points of the open ball `|x| < r`.
fn ball_points(r: i64) -> Vec<Point3> {
    let mut v = Vec::new();
    for x in -r..=r {
        for y in -r..=r {
            for z in -r..=r {
                if x * x + y * y + z * z < r * r {
                    v.push(p(x, y, z));
                }
            }
        }
    }
    v
}

/// Green's function of simple random walk killed off `points`, by
/// Gauss–Jordan elimination with partial pivoting.
struct DenseGreen {
    points: Vec<Point3>,
    g: Vec<Vec<f64>>,
}

impl DenseGreen {
    fn new(points: Vec<Point3>) -> Self {
        let n = points.len();
        let idx = |q: Point3| points.iter().position(|&r| r == q);
        let mut a = vec![vec![0.0f64; 2 * n]; n];
        for (i, &x) in points.iter().enumerate() {
            a[i][i] += 1.0;
            a[i][n + i] = 1.0;
            for d in UNIT_STEPS {
                if let Some(j) = idx(x + d) {
                    a[i][j] -= 1.0 / 6.0;
                }
            }
        }
        for c in 0..n {
            let piv = (c..n).max_by(|&r, &s| a[r][c].abs().total_cmp(&a[s][c].abs())).unwrap();
            a.swap(c, piv);
            let d = a[c][c];
            a[c].iter_mut().for_each(|v| *v /= d);
            for r in 0..n {
                if r != c {
                    let f = a[r][c];
                    if f != 0.0 {
                        for k in 0..2 * n {
                            a[r][k] -= f * a[c][k];
                        }
                    }
                }
            }
        }
        let g = a.into_iter().map(|row| row[n..].to_vec()).collect();
        DenseGreen { points, g }
    }

    fn at(&self, x: Point3, y: Point3) -> f64 {
        let i = self.points.iter().position(|&r| r == x).unwrap();
        let j = self.points.iter().position(|&r| r == y).unwrap();
        self.g[i][j]
    }
}

fn domain(r: i64) -> FiniteDomain {
    FiniteDomain::from_ball(&Ball::centered(r)).unwrap()
}

#[test]
fn greens_table_matches_dense_solve() {
    let dom = domain(3);
    assert_eq!(dom.interior().len(), ball_points(3).len());
    let oracle = DenseGreen::new(ball_points(3));
    let table = GreensTable::new(dom).unwrap();
    for &x in &oracle.points {
        for &y in &oracle.points {
            let (a, b) = (table.get(x, y).unwrap(), oracle.at(x, y));
            assert!((a - b).abs() < 1e-10, "G({x:?},{y:?}) = {a} vs {b}");
        }
    }
}

#[test]
fn small_balls_have_hand_computable_greens_function() {
    // B(0,1) is the origin alone: the walk leaves at its first step
    let oracle = DenseGreen::new(ball_points(1));
    assert_eq!(oracle.at(p(0, 0, 0), p(0, 0, 0)), 1.0);
    let t = GreensTable::new(domain(1)).unwrap();
    assert_eq!(t.get(p(0, 0, 0), p(0, 0, 0)).unwrap(), 1.0);
}

#[test]
fn single_point_hitting_is_a_green_ratio() {
    // P^x(hit y before leaving) = G(x, y) / G(y, y) for x ≠ y
    let dom = domain(3);
    let oracle = DenseGreen::new(ball_points(3));
    let y = p(1, 1, 0);
    let target: LatticeSet = [y].into_iter().collect();
    for x in [p(0, 0, 0), p(-1, 0, 0), p(0, 2, 1), p(-2, -1, 1)] {
        let h = hitting_probability(&dom, x, &target).unwrap();
        let want = oracle.at(x, y) / oracle.at(y, y);
        assert!((h - want).abs() < 1e-10, "from {x:?}: {h} vs {want}");
    }
}

#[test]
fn exit_law_and_exit_time_follow_from_green() {
    let dom = domain(3);
    let oracle = DenseGreen::new(ball_points(3));
    for x in [p(0, 0, 0), p(1, 0, 0), p(1, 1, 1), p(0, -2, 1)] {
        let law = exit_distribution(&dom, x).unwrap();
        let total: f64 = law.iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (z, hz) in law {
            // last-exit decomposition: H(x, z) = Σ_{y ~ z} G(x, y) / 6
            let want: f64 = oracle.points.iter().filter(|y| y.is_adjacent(z)).map(|&y| oracle.at(x, y) / 6.0).sum();
            assert!((hz - want).abs() < 1e-10);
        }
        let t = mean_exit_time(&dom, x).unwrap();
        let want: f64 = oracle.points.iter().map(|&y| oracle.at(x, y)).sum();
        assert!((t - want).abs() < 1e-9, "E^x τ = {t} vs {want}");
    }
}

/// `P(LE = η)` for a complete path, via `∏ p(η_i, η_{i+1}) ∏ G_{A_i}(η_i, η_i)`
/// with `A_i = A ∖ {η_0, …, η_{i-1}}`.
fn product_formula(r: i64, eta: &[Point3]) -> f64 {
    let mut pts = ball_points(r);
    let mut prob = 1.0;
    for &v in &eta[..eta.len() - 1] {
        prob *= DenseGreen::new(pts.clone()).at(v, v) / 6.0;
        pts.retain(|&q| q != v);
    }
    prob
}

#[test]
fn exact_lerw_law_matches_product_formula() {
    let dom = domain(2);
    let paths = [
        vec![p(0, 0, 0), p(1, 0, 0), p(2, 0, 0)],
        vec![p(0, 0, 0), p(1, 0, 0), p(1, 1, 0), p(1, 2, 0)],
        vec![p(0, 0, 0), p(0, 0, 1), p(0, 1, 1), p(1, 1, 1), p(2, 1, 1)],
        vec![p(0, 0, 0), p(-1, 0, 0), p(-1, -1, 0), p(0, -1, 0), p(0, -1, 1), p(0, -2, 1)],
    ];
    for eta in paths {
        let got = exact_lerw_law(&dom, p(0, 0, 0), &SimplePath::new(eta.clone()).unwrap(), LawQuery::Complete).unwrap();
        let want = product_formula(2, &eta);
        assert!(want > 0.0);
        assert!((got - want).abs() < 1e-12 * want.max(1e-3), "{eta:?}: {got} vs {want}");
    }
}

fn mc_avoidance(ball: &Ball, x: Point3, gamma: &[Point3], trials: u64) -> (f64, f64) {
    let id = experiment_id("test-avoid", &[]);
    let mut wins = 0u64;
    for t in 0..trials {
        let mut s = StreamKey::new(5, id, t).stream();
        let mut here = x.step(s.next_direction());
        let mut ok = true;
        loop {
            if gamma.contains(&here) {
                ok = false;
                break;
            }
            if !ball.contains(here) {
                break;
            }
            here = here.step(s.next_direction());
        }
        wins += ok as u64;
    }
    let q = wins as f64 / trials as f64;
    (q, (q * (1.0 - q) / trials as f64).sqrt())
}

#[test]
fn avoidance_probability_matches_simulation() {
    let ball = Ball::centered(3);
    let dom = domain(3);
    let gamma = vec![p(0, 0, 0), p(1, 0, 0), p(1, 1, 0)];
    let path = SimplePath::new(gamma.clone()).unwrap();
    for x in [p(1, 1, 0), p(-1, 0, 0), p(0, 0, 2)] {
        let exact = avoidance_probability(&dom, x, &path).unwrap();
        let (q, se) = mc_avoidance(&ball, x, &gamma, 40_000);
        assert!((q - exact).abs() < 4.0 * se, "from {x:?}: simulated {q} ± {se}, exact {exact}");
    }
}

#[test]
fn escape_at_radius_one_is_five_sixths() {
    assert_eq!(exact_es_one(), 5.0 / 6.0);
    let exec = Exec::new(3).with_workers(2);
    for e in [estimate_es(1, 60_000, exec).unwrap(), estimate_es_star(1, 60_000, exec).unwrap()] {
        // Es*(1) has the same value: the cut erased path is [0, uniform neighbour]
        assert!((e.value - 5.0 / 6.0).abs() < 4.0 * e.stderr, "{e:?}");
    }
}

#[test]
fn rejection_and_h_transform_agree() {
    let gamma = SimplePath::new(vec![p(-1, 0, 0), p(0, 0, 0), p(0, 1, 0), p(1, 1, 0)]).unwrap();
    let base = AvoidanceProblem::from_terminal(gamma.clone(), Ball::centered(3)).unwrap();
    let table = HTable::new(&base.clone().with_method(Method::ExactHTransform)).unwrap();
    let start = gamma.end();
    let law = table.step_law(start).unwrap();
    let avoid = table.avoidance(start).unwrap();
    let rej = ConditionedSampler::new(base.with_method(Method::Rejection)).unwrap();
    let id = experiment_id("test-rejection", &[]);
    let n = 20_000u64;
    let mut first = [0u64; 6];
    let mut attempts = 0u64;
    for t in 0..n {
        let (path, a) = rej.sample_with_attempts(StreamKey::new(9, id, t)).unwrap();
        attempts += a;
        let step = path.vertices()[1] - path.vertices()[0];
        first[UNIT_STEPS.iter().position(|&d| d == step).unwrap()] += 1;
    }
    for k in 0..6 {
        let f = first[k] as f64 / n as f64;
        let se = (law[k] * (1.0 - law[k]) / n as f64).sqrt().max(1e-12);
        assert!((f - law[k]).abs() <= 4.0 * se + 1e-12, "direction {k}: {f} vs {}", law[k]);
    }
    // acceptance rate of the rejection sampler estimates the avoidance probability
    let rate = n as f64 / attempts as f64;
    let se = avoid * ((1.0 - avoid) / n as f64).sqrt();
    assert!((rate - avoid).abs() < 4.0 * se, "acceptance {rate} vs avoidance {avoid}");
}
