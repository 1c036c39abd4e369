//! Escape probabilities `Es(n)`, `Es*(n)`, `Es(m, n)`, the separation events
//! `F_{L,R,n}` / `Sep_{L,R,n}`, and power-law fits.
//!
//! All escape estimators at a given outer radius `n` share one experiment id,
//! so trial `t` uses the same pair of walks whichever quantity is requested.
//! Events that nest (`Es(n) ⊆ Es(m, n)`, `Es(m₁, n) ⊆ Es(m₂, n)` for
//! `m₁ < m₂`) are therefore nested per trial, not only in distribution.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Ball, BallBoundary, Point3, Radius, Region};
use crate::loop_erasure::{erase_walk_to_exit, LoopEraser};
use crate::parallel::{run_trials, Exec};
use crate::walk::{experiment_id, stream_until_ball_exit, StreamKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EscapeKind {
    Plain,
    Star,
    TwoScale,
    Joint,
    SepGivenF,
}

/// A binomial frequency with everything needed to re-run it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeEstimate {
    pub kind: EscapeKind,
    pub n: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub m: Option<f64>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none", default)]
    pub big_l: Option<i64>,
    #[serde(rename = "R", skip_serializing_if = "Option::is_none", default)]
    pub big_r: Option<i64>,
    pub trials: u64,
    pub successes: u64,
    pub value: f64,
    pub stderr: f64,
    pub master_seed: u64,
    pub experiment_id: u64,
}

impl EscapeEstimate {
    fn new(kind: EscapeKind, n: f64, trials: u64, successes: u64, master_seed: u64, experiment_id: u64) -> Self {
        let value = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        let stderr = if trials == 0 { 0.0 } else { (value * (1.0 - value) / trials as f64).sqrt() };
        EscapeEstimate {
            kind,
            n,
            m: None,
            big_l: None,
            big_r: None,
            trials,
            successes,
            value,
            stderr,
            master_seed,
            experiment_id,
        }
    }

    /// Standard error of `log value`, by the delta method.
    pub fn log_stderr(&self) -> f64 {
        if self.value > 0.0 {
            self.stderr / self.value
        } else {
            f64::INFINITY
        }
    }
}

/// Experiment id shared by every escape quantity at outer radius `n`.
pub fn escape_experiment(n: impl Into<Radius>) -> u64 {
    let r = n.into();
    match r.as_integer() {
        Some(k) => experiment_id("escape", &[k as u64]),
        None => {
            let (num, den) = r.squared();
            experiment_id("escape-sq", &[num as u64, den as u64])
        }
    }
}

const LANE_S1: u64 = 1;
const LANE_S2: u64 = 2;

thread_local! {
    static ERASER: RefCell<LoopEraser> = RefCell::new(LoopEraser::new());
}

/// Per-trial result of the joint escape engine.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EscapeTrial {
    /// `M_n`, the length of `LE(S²[0, τ_n])`.
    pub lerw_length: u32,
    /// `S¹[1, τ_n]` avoids all of `LE(S²[0, τ_n])`.
    pub plain: bool,
    /// `S¹[1, τ_n]` avoids `η²_{0,m,n}` for each requested inner radius.
    pub two_scale: Vec<bool>,
}

fn check_scales(n: Radius, inner: &[Radius]) -> Result<()> {
    let one = Radius::new(1);
    if n < one {
        return Err(Error::BadScales(format!("n = {n} must be at least 1")));
    }
    if let Some(&m) = inner.iter().find(|&&m| m < one || m > n) {
        return Err(Error::BadScales(format!("inner radius {m} outside [1, {n}]")));
    }
    Ok(())
}

/// One trial at outer radius `n`, resolving `Es(n)` and every `Es(m, n)`
/// from the same pair of walks.
///
/// `S¹` avoids `η² = LE[s_m, u]` iff the largest erased-path index it hits
/// is below `s_m`, so a single pass over `S¹` serves every `m`.
pub fn escape_trial(n: Radius, inner: &[Radius], key: StreamKey) -> EscapeTrial {
    ERASER.with(|cell| {
        let mut eraser = cell.borrow_mut();
        let ball = Ball::new(Point3::ORIGIN, n);
        erase_walk_to_exit(Point3::ORIGIN, &ball, &mut key.lane(LANE_S2).stream(), &mut eraser);
        let path = eraser.path();
        let last = path.len() - 1;
        let starts: Vec<usize> = inner
            .iter()
            .map(|&m| {
                let b = BallBoundary(Ball::new(Point3::ORIGIN, m));
                path.iter().rposition(|&p| b.contains(p)).unwrap_or(last)
            })
            .collect();
        let stop_at = starts.iter().copied().max().unwrap_or(0);
        let mut max_hit: Option<usize> = None;
        stream_until_ball_exit(Point3::ORIGIN, &ball, &mut key.lane(LANE_S1).stream(), |t, p| {
            if t > 0 {
                if let Some(i) = eraser.index_of(p) {
                    max_hit = Some(max_hit.map_or(i, |h| h.max(i)));
                    return i < stop_at;
                }
            }
            true
        });
        EscapeTrial {
            lerw_length: eraser.len() as u32,
            plain: max_hit.is_none(),
            two_scale: starts.iter().map(|&s| max_hit.is_none_or(|h| h < s)).collect(),
        }
    })
}

/// Aggregated output of [`run_escape`].
#[derive(Clone, Debug, PartialEq)]
pub struct EscapeRun {
    pub n: Radius,
    pub inner: Vec<Radius>,
    pub trials: u64,
    pub master_seed: u64,
    pub experiment_id: u64,
    pub plain_successes: u64,
    pub two_scale_successes: Vec<u64>,
    pub lerw_lengths: Vec<u32>,
}

impl EscapeRun {
    pub fn plain(&self) -> EscapeEstimate {
        EscapeEstimate::new(EscapeKind::Plain, self.n.value(), self.trials, self.plain_successes, self.master_seed, self.experiment_id)
    }

    pub fn two_scale(&self, m: impl Into<Radius>) -> Result<EscapeEstimate> {
        let m = m.into();
        let k = self
            .inner
            .iter()
            .position(|&x| x == m)
            .ok_or_else(|| Error::BadScales(format!("inner radius {m} was not part of this run")))?;
        let mut e = EscapeEstimate::new(
            EscapeKind::TwoScale,
            self.n.value(),
            self.trials,
            self.two_scale_successes[k],
            self.master_seed,
            self.experiment_id,
        );
        e.m = Some(m.value());
        Ok(e)
    }
}

/// Runs `trials` joint escape trials at outer radius `n`.
pub fn run_escape<R: Into<Radius> + Copy>(n: R, inner: &[R], trials: u64, exec: Exec) -> Result<EscapeRun> {
    let n: Radius = n.into();
    let inner: Vec<Radius> = inner.iter().map(|&m| m.into()).collect();
    check_scales(n, &inner)?;
    if trials == 0 {
        return Err(Error::InsufficientTrials);
    }
    let id = escape_experiment(n);
    let run_inner_len = inner.len();
    let results = run_trials(trials, exec.workers, |t| escape_trial(n, &inner, StreamKey::new(exec.master_seed, id, t)));
    let mut run = EscapeRun {
        n,
        inner,
        trials,
        master_seed: exec.master_seed,
        experiment_id: id,
        plain_successes: 0,
        two_scale_successes: vec![0; run_inner_len],
        lerw_lengths: Vec::with_capacity(results.len()),
    };
    for r in results {
        run.plain_successes += r.plain as u64;
        for (acc, ok) in run.two_scale_successes.iter_mut().zip(&r.two_scale) {
            *acc += *ok as u64;
        }
        run.lerw_lengths.push(r.lerw_length);
    }
    Ok(run)
}

/// `Es(n)`.
pub fn estimate_es(n: i64, trials: u64, exec: Exec) -> Result<EscapeEstimate> {
    Ok(run_escape(n, &[], trials, exec)?.plain())
}

/// `Es(m, n)`.
pub fn estimate_es_two_scale(m: i64, n: i64, trials: u64, exec: Exec) -> Result<EscapeEstimate> {
    if m > n {
        return Err(Error::BadScales(format!("m = {m} exceeds n = {n}")));
    }
    run_escape(n, &[m], trials, exec)?.two_scale(m)
}

/// `Es*(n)`: the erased path comes from a walk run out to `∂B(4n)` and is cut
/// at its first visit to `∂B(n)`. `S¹` is the same walk as in [`estimate_es`].
pub fn estimate_es_star(n: i64, trials: u64, exec: Exec) -> Result<EscapeEstimate> {
    check_scales(Radius::new(n), &[])?;
    if trials == 0 {
        return Err(Error::InsufficientTrials);
    }
    let id = escape_experiment(n);
    let wins = run_trials(trials, exec.workers, |t| {
        let key = StreamKey::new(exec.master_seed, id, t);
        ERASER.with(|cell| {
            let mut eraser = cell.borrow_mut();
            erase_walk_to_exit(Point3::ORIGIN, &Ball::centered(4 * n), &mut key.lane(LANE_S2).stream(), &mut eraser);
            let b = BallBoundary(Ball::centered(n));
            let u = eraser.path().iter().position(|&p| b.contains(p)).expect("erased path crosses ∂B(n)");
            let mut ok = true;
            stream_until_ball_exit(Point3::ORIGIN, &Ball::centered(n), &mut key.lane(LANE_S1).stream(), |t, p| {
                if t > 0 && eraser.index_of(p).is_some_and(|i| i <= u) {
                    ok = false;
                }
                ok
            });
            ok
        })
    });
    let successes = wins.iter().filter(|&&w| w).count() as u64;
    Ok(EscapeEstimate::new(EscapeKind::Star, n as f64, trials, successes, exec.master_seed, id))
}

/// Membership in `A⁺_{R,n} = {x₁ ≥ 2Rn/3} ∪ B(3Rn/4)`; `A⁻` mirrors `x₁`.
fn in_half_space(p: Point3, rn: i64, sign: i64) -> bool {
    3 * sign * p.x >= 2 * rn || 16 * p.norm2() < 9 * (rn as i128) * (rn as i128)
}

/// Estimates `P(F_{L,R,n})` and `P(Sep_{L,R,n} | F_{L,R,n})`.
pub fn estimate_joint_separation(
    big_l: i64,
    big_r: i64,
    n: i64,
    trials: u64,
    exec: Exec,
) -> Result<(EscapeEstimate, EscapeEstimate)> {
    if big_r < 4 || n < 1 || big_l < big_r * n || big_l > 4 * big_r * n {
        return Err(Error::BadScales(format!("need R ≥ 4, n ≥ 1, Rn ≤ L ≤ 4Rn; got L={big_l}, R={big_r}, n={n}")));
    }
    if trials == 0 {
        return Err(Error::InsufficientTrials);
    }
    let id = experiment_id("separation", &[big_l as u64, big_r as u64, n as u64]);
    let rn = big_r * n;
    let outcomes = run_trials(trials, exec.workers, |t| {
        let key = StreamKey::new(exec.master_seed, id, t);
        ERASER.with(|cell| {
            let mut eraser = cell.borrow_mut();
            erase_walk_to_exit(Point3::ORIGIN, &Ball::centered(big_l), &mut key.lane(LANE_S1).stream(), &mut eraser);
            let path = eraser.path();
            let outer = BallBoundary(Ball::centered(rn));
            let inner = BallBoundary(Ball::centered(n));
            let u = path.iter().position(|&p| outer.contains(p)).expect("erased path crosses ∂B(Rn)");
            let s = path[..=u].iter().rposition(|&p| inner.contains(p)).expect("erased path crosses ∂B(n)");
            let seg_sep = path[s..=u].iter().all(|&p| in_half_space(p, rn, -1));
            let mut avoided = true;
            let mut walk_sep = true;
            stream_until_ball_exit(Point3::ORIGIN, &Ball::centered(rn), &mut key.lane(LANE_S2).stream(), |_, p| {
                if eraser.index_of(p).is_some_and(|i| s <= i && i <= u) {
                    avoided = false;
                }
                walk_sep &= in_half_space(p, rn, 1);
                avoided
            });
            (avoided, avoided && seg_sep && walk_sep)
        })
    });
    let f = outcomes.iter().filter(|o| o.0).count() as u64;
    let sep = outcomes.iter().filter(|o| o.1).count() as u64;
    if f == 0 {
        return Err(Error::InsufficientTrials);
    }
    let tag = |mut e: EscapeEstimate| {
        e.big_l = Some(big_l);
        e.big_r = Some(big_r);
        e
    };
    Ok((
        tag(EscapeEstimate::new(EscapeKind::Joint, n as f64, trials, f, exec.master_seed, id)),
        tag(EscapeEstimate::new(EscapeKind::SepGivenF, n as f64, f, sep, exec.master_seed, id)),
    ))
}

/// Weighted least-squares fit of `log estimate = intercept + slope · log n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    /// `(n, estimate, stderr)`.
    pub points: Vec<(f64, f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// Weighted residual sum of squares.
    pub residual: f64,
}

impl ExponentFit {
    /// `α̂ = -slope` when fitting escape probabilities.
    pub fn alpha(&self) -> f64 {
        -self.slope
    }
}

/// Fits a power law through `(n, estimate, stderr)` points. Each point is
/// weighted by `(estimate / stderr)²`, the inverse variance of its log; if
/// any stderr is zero all points get unit weight.
pub fn fit_power_law(points: &[(f64, f64, f64)]) -> Result<ExponentFit> {
    let mut ns: Vec<f64> = points.iter().map(|p| p.0).collect();
    ns.sort_by(f64::total_cmp);
    ns.dedup();
    if ns.len() < 3 || ns[0] <= 0.0 || ns[ns.len() - 1] < 8.0 * ns[0] {
        return Err(Error::BadGrid("need ≥ 3 distinct positive scales spanning a factor 8".into()));
    }
    if points.iter().any(|p| !(p.1 > 0.0) || !p.1.is_finite()) {
        return Err(Error::BadGrid("estimates must be positive to take logs".into()));
    }
    let unit = points.iter().any(|p| !(p.2 > 0.0));
    let w: Vec<f64> = points.iter().map(|p| if unit { 1.0 } else { (p.1 / p.2).powi(2) }).collect();
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&x).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = (0..x.len()).map(|k| w[k] * (x[k] - xm) * (y[k] - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let residual: f64 = (0..x.len()).map(|k| w[k] * (y[k] - intercept - slope * x[k]).powi(2)).sum();
    let slope_stderr = if unit {
        let dof = (x.len() as f64 - 2.0).max(1.0);
        (residual / dof / sxx).sqrt()
    } else {
        (1.0 / sxx).sqrt()
    };
    Ok(ExponentFit { points: points.to_vec(), slope, intercept, slope_stderr, residual })
}

/// Default trial budget at radius `n`: 10⁵ up to `n = 64`, shrinking as
/// `1/n` beyond, never below 10⁴.
pub fn default_trials(n: i64) -> u64 {
    if n <= 64 {
        100_000
    } else {
        (100_000 * 64 / n as u64).max(10_000)
    }
}

/// `α̂` from `Es(n)` on `grid`.
pub fn fit_alpha(grid: &[i64], trials_per_n: impl Fn(i64) -> u64, exec: Exec) -> Result<(ExponentFit, Vec<EscapeEstimate>)> {
    let pts: Vec<(f64, f64, f64)> = grid.iter().map(|&n| (n as f64, 1.0, 0.0)).collect();
    fit_power_law(&pts)?;
    let mut ests = Vec::with_capacity(grid.len());
    for &n in grid {
        ests.push(estimate_es(n, trials_per_n(n), exec)?);
    }
    let fit = fit_power_law(&ests.iter().map(|e| (e.n, e.value, e.stderr)).collect::<Vec<_>>())?;
    Ok((fit, ests))
}

/// One triple of the quasi-multiplicativity table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiRatio {
    pub l: i64,
    pub m: i64,
    pub n: i64,
    /// `Es(l, n) / (Es(l, m) Es(m, n))`.
    pub ratio: f64,
    pub log_stderr: f64,
}

/// Band test shared by the uniform-boundedness checks: passes when every
/// ratio, moved `sigmas` standard errors (in log scale) towards the others,
/// fits inside one band of multiplicative width `factor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandCheck {
    pub factor: f64,
    pub sigmas: f64,
    pub raw_spread: f64,
    pub noise_adjusted_spread: f64,
    pub passed: bool,
}

pub fn band_check(values: &[(f64, f64)], factor: f64, sigmas: f64) -> BandCheck {
    let hi_raw = values.iter().map(|v| v.0).fold(f64::MIN, f64::max);
    let lo_raw = values.iter().map(|v| v.0).fold(f64::MAX, f64::min);
    let hi = values.iter().map(|&(r, s)| r * (-sigmas * s).exp()).fold(f64::MIN, f64::max);
    let lo = values.iter().map(|&(r, s)| r * (sigmas * s).exp()).fold(f64::MAX, f64::min);
    let adjusted = (hi / lo).max(1.0);
    BandCheck {
        factor,
        sigmas,
        raw_spread: hi_raw / lo_raw,
        noise_adjusted_spread: adjusted,
        passed: adjusted <= factor,
    }
}

/// Builds the ratio table from two-scale estimates; `lookup(m, n)` returns
/// `Es(m, n)`.
pub fn quasi_multiplicativity(
    grid: &[i64],
    lookup: impl Fn(i64, i64) -> Option<EscapeEstimate>,
) -> Result<Vec<QuasiRatio>> {
    let mut out = Vec::new();
    for (a, &l) in grid.iter().enumerate() {
        for (b, &m) in grid.iter().enumerate().skip(a + 1) {
            for &n in grid.iter().skip(b + 1) {
                let missing = |x, y| Error::BadScales(format!("no estimate for Es({x}, {y})"));
                let ln = lookup(l, n).ok_or_else(|| missing(l, n))?;
                let lm = lookup(l, m).ok_or_else(|| missing(l, m))?;
                let mn = lookup(m, n).ok_or_else(|| missing(m, n))?;
                let ratio = ln.value / (lm.value * mn.value);
                let log_stderr =
                    (ln.log_stderr().powi(2) + lm.log_stderr().powi(2) + mn.log_stderr().powi(2)).sqrt();
                out.push(QuasiRatio { l, m, n, ratio, log_stderr });
            }
        }
    }
    Ok(out)
}

/// Exact `Es(1)` by enumerating both first steps: `S¹(1)` must miss `{0, S²(1)}`.
pub fn exact_es_one() -> f64 {
    let o = Point3::ORIGIN;
    let mut wins = 0;
    for a in o.neighbors() {
        for b in o.neighbors() {
            if a != o && a != b {
                wins += 1;
            }
        }
    }
    wins as f64 / 36.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exec() -> Exec {
        Exec::new(7).with_workers(1)
    }

    #[test]
    fn es_one_enumeration_is_five_sixths() {
        assert!((exact_es_one() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn es_one_estimate_is_close() {
        let e = estimate_es(1, 20_000, exec()).unwrap();
        assert!((e.value - 5.0 / 6.0).abs() < 4.0 * e.stderr);
        // with n = 1 both erased path and S¹ are single steps
        let run = run_escape(1, &[], 10, exec()).unwrap();
        assert!(run.lerw_lengths.iter().all(|&m| m == 1));
    }

    #[test]
    fn estimates_are_deterministic() {
        let a = estimate_es(8, 2000, exec()).unwrap();
        let b = estimate_es(8, 2000, exec().with_workers(3)).unwrap();
        assert_eq!(a, b);
        let c = estimate_es_star(4, 500, exec()).unwrap();
        assert_eq!(c, estimate_es_star(4, 500, exec()).unwrap());
    }

    #[test]
    fn two_scale_nests_per_trial() {
        let key = |t| StreamKey::new(3, escape_experiment(16), t);
        for t in 0..500 {
            let radii = |ms: &[i64]| ms.iter().map(|&m| Radius::new(m)).collect::<Vec<_>>();
            let r = escape_trial(Radius::new(16), &radii(&[2, 4, 8, 16]), key(t));
            if r.plain {
                assert!(r.two_scale.iter().all(|&x| x));
            }
            for w in r.two_scale.windows(2) {
                assert!(!w[0] || w[1], "Es(m,n) must grow with m");
            }
            // the requested set does not change any individual answer
            assert_eq!(escape_trial(Radius::new(16), &radii(&[8]), key(t)).two_scale[0], r.two_scale[2]);
            assert_eq!(escape_trial(Radius::new(16), &[], key(t)).plain, r.plain);
        }
    }

    #[test]
    fn scale_errors() {
        assert!(matches!(estimate_es_two_scale(9, 8, 10, exec()), Err(Error::BadScales(_))));
        assert!(matches!(estimate_es(4, 0, exec()), Err(Error::InsufficientTrials)));
        assert!(matches!(estimate_joint_separation(10, 3, 4, 10, exec()), Err(Error::BadScales(_))));
        assert!(matches!(estimate_joint_separation(200, 4, 8, 10, exec()), Err(Error::BadScales(_))));
    }

    #[test]
    fn separation_frequencies_are_consistent() {
        let (f, sep) = estimate_joint_separation(32, 4, 4, 2000, exec()).unwrap();
        assert_eq!(sep.trials, f.successes);
        assert!(sep.successes <= sep.trials);
        assert!((0.0..=1.0).contains(&sep.value));
    }

    #[test]
    fn fit_recovers_exact_power_laws() {
        let pts: Vec<_> = [8.0, 16.0, 32.0, 64.0].iter().map(|&n: &f64| (n, n.powf(-0.5), 0.0)).collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.alpha() - 0.5).abs() < 1e-12);
        assert!(fit.residual < 1e-20);
        let flat: Vec<_> = [8.0, 16.0, 64.0].iter().map(|&n| (n, 0.3, 0.01)).collect();
        assert!(fit_power_law(&flat).unwrap().alpha().abs() < 1e-12);
        let narrow: Vec<_> = [8.0, 16.0, 32.0].iter().map(|&n| (n, 0.3, 0.01)).collect();
        assert!(matches!(fit_power_law(&narrow), Err(Error::BadGrid(_))));
    }

    #[test]
    fn band_check_accounts_for_noise() {
        assert!(band_check(&[(1.0, 0.0), (7.9, 0.0)], 8.0, 4.0).passed);
        assert!(!band_check(&[(1.0, 0.0), (9.0, 0.0)], 8.0, 4.0).passed);
        assert!(band_check(&[(1.0, 0.1), (9.0, 0.1)], 8.0, 4.0).passed);
    }
}
