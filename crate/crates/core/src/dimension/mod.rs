//! Dimension statistics of the loop-erased walk: growth of `M_n`, box-hitting
//! counts, two-box correlations, the grid measures `μ_ε` and their energies.
//!
//! Boxes live on the unit scale: `εB_x = ε∏[x_i, x_i + 1]` inside the annulus
//! `D_{2/3} ∖ D_{1/3}` of continuum balls. Hits are detected at lattice scale
//! with the fattened boxes `εn B'_x = εn ∏[x_i - 2, x_i + 2]`.

mod energy;

pub use energy::{box_pair_kernel, frostman_energy, self_kernel};

use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::conditioned::{window_geometry, AvoidanceProblem, ConditionedSampler, Method, WindowGeometry};
use crate::error::{Error, Result};
use crate::escape::{band_check, fit_power_law, run_escape, BandCheck, EscapeEstimate, EscapeKind, EscapeRun, ExponentFit};
use crate::lattice::{first_hit_index, Ball, CubeRegion, Point3, Radius, Scale};
use crate::loop_erasure::{erase_walk_to_exit, LoopEraser, SimplePath};
use crate::parallel::{run_trials, Exec};
use crate::walk::{experiment_id, StreamKey};

/// Which boxes count as lying in the annulus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxConvention {
    /// `εB_x ⊂ D_{2/3} ∖ D_{1/3}`.
    Contained,
    /// `Contained` plus boxes meeting `∂D_{1/3}` or `∂D_{2/3}`.
    WithStraddling,
    /// The lattice box `εn B'_x` itself inside `B(2n/3) ∖ B(n/3)`.
    FattenedLattice,
}

/// `ε` as a reduced fraction `p / q`.
fn parts(s: Scale) -> (i128, i128) {
    (*s.numer() as i128, *s.denom() as i128)
}

/// Grid of boxes at resolution `ε` for a walk in `B(n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxAnnulus {
    pub epsilon: Scale,
    pub n: i64,
    pub convention: BoxConvention,
    pub boxes: Vec<Point3>,
}

impl BoxAnnulus {
    pub fn new(epsilon: Scale, n: i64, convention: BoxConvention) -> Result<Self> {
        if epsilon <= Scale::from_integer(0) || epsilon >= Scale::from_integer(1) {
            return Err(Error::BadScales(format!("ε = {epsilon} must lie in (0, 1)")));
        }
        if n < 1 {
            return Err(Error::BadScales("n must be positive".into()));
        }
        let mut a = BoxAnnulus { epsilon, n, convention, boxes: Vec::new() };
        let k = (Scale::from_integer(1) / epsilon).ceil().to_integer() + 3;
        for x in -k..=k {
            for y in -k..=k {
                for z in -k..=k {
                    let p = Point3::new(x, y, z);
                    if a.qualifies(p) {
                        a.boxes.push(p);
                    }
                }
            }
        }
        Ok(a)
    }

    /// Side of `εn B_x` in lattice units.
    pub fn lattice_side(&self) -> Scale {
        self.epsilon * self.n
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn qualifies(&self, x: Point3) -> bool {
        match self.convention {
            BoxConvention::Contained => box_in_annulus(x, self.epsilon),
            BoxConvention::WithStraddling => {
                box_in_annulus(x, self.epsilon) || box_meets_sphere(x, self.epsilon, 1) || box_meets_sphere(x, self.epsilon, 2)
            }
            BoxConvention::FattenedLattice => fattened_in_lattice_annulus(x, self.lattice_side(), self.n),
        }
    }

    pub fn fattened(&self, x: Point3) -> CubeRegion {
        CubeRegion::fattened_box(x, self.lattice_side())
    }

    /// Qualifying boxes whose fattened version meets `path`.
    pub fn hits(&self, path: &[Point3]) -> FxHashSet<Point3> {
        let (p, q) = parts(self.lattice_side());
        let mut out = FxHashSet::default();
        let mut last = None;
        for &v in path {
            // x_i ranges over ⌈v_i/h - 2⌉ ..= ⌊v_i/h + 2⌋ with h = p/q
            let r = v.coords().map(|c| {
                let num = c as i128 * q;
                ((num - 2 * p).div_euclid(p) + ((num - 2 * p).rem_euclid(p) != 0) as i128, (num + 2 * p).div_euclid(p))
            });
            if last == Some(r) {
                continue;
            }
            last = Some(r);
            for x in r[0].0..=r[0].1 {
                for y in r[1].0..=r[1].1 {
                    for z in r[2].0..=r[2].1 {
                        let b = Point3::new(x as i64, y as i64, z as i64);
                        if !out.contains(&b) && self.qualifies(b) {
                            out.insert(b);
                        }
                    }
                }
            }
        }
        out
    }

    /// Re-checks by direct cube membership that every box in `hits` meets `path`.
    pub fn audit(&self, path: &[Point3], hits: &FxHashSet<Point3>) -> bool {
        hits.iter().all(|&x| {
            let c = self.fattened(x);
            self.qualifies(x) && path.iter().any(|&v| c.contains(v))
        })
    }
}

/// `ε∏[x_i, x_i+1]` closest and farthest squared distances to the origin,
/// in units of `ε²`.
fn box_extent(x: Point3) -> (i128, i128) {
    let mut near = 0;
    let mut far = 0;
    for c in x.coords() {
        let (a, b) = (c as i128, c as i128 + 1);
        near += if a <= 0 && 0 <= b { 0 } else { (a * a).min(b * b) };
        far += (a * a).max(b * b);
    }
    (near, far)
}

/// `εB_x ⊂ D_{2/3} ∖ D_{1/3}`: every point has `1/3 ≤ |y| < 2/3`.
pub fn box_in_annulus(x: Point3, epsilon: Scale) -> bool {
    let (p, q) = parts(epsilon);
    let (near, far) = box_extent(x);
    9 * p * p * near >= q * q && 9 * p * p * far < 4 * q * q
}

/// `εB_x ∩ ∂D_{j/3} ≠ ∅`.
pub fn box_meets_sphere(x: Point3, epsilon: Scale, j: i128) -> bool {
    let (p, q) = parts(epsilon);
    let (near, far) = box_extent(x);
    9 * p * p * near <= j * j * q * q && j * j * q * q <= 9 * p * p * far
}

/// Lattice points of `h ∏[x_i - 2, x_i + 2]` all satisfy `n/3 ≤ |p| < 2n/3`.
fn fattened_in_lattice_annulus(x: Point3, h: Scale, n: i64) -> bool {
    let c = CubeRegion::fattened_box(x, h);
    let mut near = 0i128;
    let mut far = 0i128;
    for a in 0..3 {
        let (lo, hi) = c.lattice_range(a);
        if lo > hi {
            return false;
        }
        let (lo, hi) = (lo as i128, hi as i128);
        near += if lo <= 0 && 0 <= hi { 0 } else { (lo * lo).min(hi * hi) };
        far += (lo * lo).max(hi * hi);
    }
    let n2 = n as i128 * n as i128;
    9 * near >= n2 && 9 * far < 4 * n2
}

fn check_lattice_side(epsilon: Scale, n: i64, min: i64) -> Result<()> {
    if epsilon * n < Scale::from_integer(min) {
        return Err(Error::BadScales(format!("εn = {} must be at least {min}", epsilon * n)));
    }
    Ok(())
}

/// Experiment id for plain LERW samples to `∂B(n)` used by the box statistics.
pub fn lerw_experiment(n: i64) -> u64 {
    experiment_id("lerw", &[n as u64])
}

/// `LE(S[0, τ_n])` from the origin.
pub fn sample_erased(n: i64, key: StreamKey) -> Vec<Point3> {
    let mut eraser = LoopEraser::new();
    erase_walk_to_exit(Point3::ORIGIN, &Ball::centered(n), &mut key.stream(), &mut eraser);
    eraser.path().to_vec()
}

/// `J_{ε,n}`: qualifying boxes whose fattened version the LERW meets.
pub fn count_boxes_hit(epsilon: Scale, n: i64, key: StreamKey) -> Result<u64> {
    let annulus = BoxAnnulus::new(epsilon, n, BoxConvention::Contained)?;
    count_boxes_hit_in(&annulus, key)
}

pub fn count_boxes_hit_in(annulus: &BoxAnnulus, key: StreamKey) -> Result<u64> {
    check_lattice_side(annulus.epsilon, annulus.n, 4)?;
    Ok(annulus.hits(&sample_erased(annulus.n, key)).len() as u64)
}

/// Connectivity floor `(1/3) / (√3 ε) - 2` on `J_{ε,n}`.
pub fn connectivity_floor(epsilon: Scale) -> f64 {
    (1.0 / 3.0) / (3f64.sqrt() * to_f64(epsilon)) - 2.0
}

pub fn to_f64(s: Scale) -> f64 {
    *s.numer() as f64 / *s.denom() as f64
}

/// Joint and marginal hit frequencies of two fattened boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoBoxEstimate {
    pub x: [i64; 3],
    pub y: [i64; 3],
    pub l: f64,
    pub trials: u64,
    pub both: u64,
    pub hits_x: u64,
    pub hits_y: u64,
    pub p_both: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub stderr_both: f64,
    pub stderr_x: f64,
    pub stderr_y: f64,
}

fn binomial(k: u64, n: u64) -> (f64, f64) {
    let p = k as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

pub fn two_box_frequency(x: Point3, y: Point3, epsilon: Scale, n: i64, trials: u64, exec: Exec) -> Result<TwoBoxEstimate> {
    Ok(two_box_frequencies(&[(x, y)], epsilon, n, trials, exec)?.remove(0))
}

/// Every pair is evaluated on the same LERW samples.
pub fn two_box_frequencies(
    pairs: &[(Point3, Point3)],
    epsilon: Scale,
    n: i64,
    trials: u64,
    exec: Exec,
) -> Result<Vec<TwoBoxEstimate>> {
    check_lattice_side(epsilon, n, 4)?;
    if trials == 0 {
        return Err(Error::InsufficientTrials);
    }
    let annulus = BoxAnnulus::new(epsilon, n, BoxConvention::Contained)?;
    for &(x, y) in pairs {
        if x == y {
            return Err(Error::DegeneratePair);
        }
        for b in [x, y] {
            if !annulus.qualifies(b) {
                return Err(Error::OutsideAnnulus(b.coords()));
            }
        }
    }
    let id = lerw_experiment(n);
    let per_trial = run_trials(trials, exec.workers, |t| {
        let hits = annulus.hits(&sample_erased(n, StreamKey::new(exec.master_seed, id, t)));
        pairs.iter().map(|(x, y)| (hits.contains(x), hits.contains(y))).collect::<Vec<_>>()
    });
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(k, &(x, y))| {
            let hx = per_trial.iter().filter(|r| r[k].0).count() as u64;
            let hy = per_trial.iter().filter(|r| r[k].1).count() as u64;
            let hb = per_trial.iter().filter(|r| r[k].0 && r[k].1).count() as u64;
            let (p_both, stderr_both) = binomial(hb, trials);
            let (p_x, stderr_x) = binomial(hx, trials);
            let (p_y, stderr_y) = binomial(hy, trials);
            TwoBoxEstimate {
                x: x.coords(),
                y: y.coords(),
                l: ((x - y).norm2() as f64).sqrt(),
                trials,
                both: hb,
                hits_x: hx,
                hits_y: hy,
                p_both,
                p_x,
                p_y,
                stderr_both,
                stderr_x,
                stderr_y,
            }
        })
        .collect())
}

/// Deterministic choice of `count` qualifying box pairs, spread over the
/// squared separations `l² ∈ [4, max_l2]`.
pub fn sample_box_pairs(epsilon: Scale, count: usize, max_l2: i64) -> Result<Vec<(Point3, Point3)>> {
    let annulus = BoxAnnulus::new(epsilon, 1, BoxConvention::Contained)?;
    let set: FxHashSet<Point3> = annulus.boxes.iter().copied().collect();
    let mut offsets: Vec<Point3> = Vec::new();
    let r = (max_l2 as f64).sqrt().ceil() as i64;
    for a in 0..=r {
        for b in -r..=r {
            for c in -r..=r {
                let d = Point3::new(a, b, c);
                let l2 = d.norm2() as i64;
                if (4..=max_l2).contains(&l2) && (a, b, c) > (0, 0, 0) {
                    offsets.push(d);
                }
            }
        }
    }
    // group by l², then cycle through groups so every separation is represented
    offsets.sort_by_key(|d| (d.norm2(), d.coords()));
    let mut groups: Vec<Vec<Point3>> = Vec::new();
    for d in offsets {
        match groups.last_mut() {
            Some(g) if g[0].norm2() == d.norm2() => g.push(d),
            _ => groups.push(vec![d]),
        }
    }
    let mut out = Vec::new();
    let mut round = 0;
    while out.len() < count {
        let mut progressed = false;
        for g in &groups {
            if out.len() == count {
                break;
            }
            let d = g[round % g.len()];
            // anchor boxes walk through the annulus in a fixed stride
            let start = (round * 7919 + out.len() * 104_729) % annulus.boxes.len();
            for k in 0..annulus.boxes.len() {
                let x = annulus.boxes[(start + k) % annulus.boxes.len()];
                if set.contains(&(x + d)) && !out.contains(&(x, x + d)) {
                    out.push((x, x + d));
                    progressed = true;
                    break;
                }
            }
        }
        if !progressed {
            return Err(Error::BadScales("not enough qualifying box pairs".into()));
        }
        round += 1;
    }
    Ok(out)
}

/// Counts windowed box hits of the erased walk from the end of `γ`.
#[derive(Clone, Debug)]
pub struct WindowCounter {
    pub geometry: WindowGeometry,
    pub epsilon: Scale,
    pub window_boxes: Vec<Point3>,
    sampler: ConditionedSampler,
}

impl WindowCounter {
    pub fn new(gamma: SimplePath, i: i64, m: i64, epsilon: Scale, n: i64, method: Method) -> Result<Self> {
        check_lattice_side(epsilon, n, 1)?;
        let geometry = window_geometry(&gamma, i, m, n)?;
        let h = epsilon * n;
        let w = &geometry.window;
        let mut window_boxes = Vec::new();
        let lo = w.lo.map(|c| (c / h).floor().to_integer() - 3);
        let hi = w.hi.map(|c| (c / h).ceil().to_integer() + 3);
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    let b = Point3::new(x, y, z);
                    if w.contains_cube(&CubeRegion::fattened_box(b, h)) {
                        window_boxes.push(b);
                    }
                }
            }
        }
        let problem = AvoidanceProblem::from_terminal(gamma, Ball::centered(n))?.with_method(method);
        let sampler = ConditionedSampler::new(problem)?;
        Ok(WindowCounter { geometry, epsilon, window_boxes, sampler })
    }

    /// Boxes of the window met by `path`.
    pub fn count(&self, path: &[Point3]) -> u64 {
        let h = self.epsilon * self.geometry.n;
        self.window_boxes
            .iter()
            .filter(|&&b| {
                let c = CubeRegion::fattened_box(b, h);
                path.iter().any(|&v| c.contains(v))
            })
            .count() as u64
    }

    /// `LE[0, t]` with `t` the first index on `∂D_{i+1,n}` (whole path if none).
    pub fn truncate(&self, erased: &[Point3]) -> usize {
        first_hit_index(erased, &self.geometry.outer.boundary()).unwrap_or(erased.len() - 1)
    }

    /// `J^γ_{i,n}` for one conditioned sample.
    pub fn sample(&self, key: StreamKey) -> Result<u64> {
        let out = self.sampler.sample_lerw(key, Some(&self.geometry.outer))?;
        let path = out.path.vertices();
        let t = out.stop_index.unwrap_or(path.len() - 1);
        Ok(self.count(&path[..=t]))
    }

    /// Same statistic for the unconditioned walk from `v`.
    pub fn sample_unconditioned(&self, key: StreamKey) -> Result<u64> {
        let mut eraser = LoopEraser::new();
        erase_walk_to_exit(self.geometry.v, &Ball::centered(self.geometry.n), &mut key.stream(), &mut eraser);
        let path = eraser.path();
        Ok(self.count(&path[..=self.truncate(path)]))
    }
}

/// `J^γ_{i,n}` for one sample (builds the sampler; reuse [`WindowCounter`] for many).
pub fn conditioned_box_count(gamma: &SimplePath, i: i64, m: i64, epsilon: Scale, n: i64, key: StreamKey) -> Result<u64> {
    WindowCounter::new(gamma.clone(), i, m, epsilon, n, Method::Auto)?.sample(key)
}

/// `μ_ε`: density `1 / (ε Es(εn, n))` on the hit boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    pub epsilon: f64,
    pub boxes: Vec<[i64; 3]>,
    pub density: f64,
    normalizer: f64,
}

impl GridMeasure {
    /// Measure with an explicit density (normaliser chosen so that the
    /// density equals `1 / (ε · normaliser)`).
    pub fn with_density(mut boxes: Vec<Point3>, epsilon: f64, density: f64) -> Self {
        boxes.sort_unstable();
        boxes.dedup();
        GridMeasure {
            epsilon,
            boxes: boxes.into_iter().map(Point3::coords).collect(),
            density,
            normalizer: 1.0 / (epsilon * density),
        }
    }

    pub fn box_mass(&self) -> f64 {
        self.epsilon.powi(3) * self.density
    }

    /// `|hits| · ε² / Es(εn, n)`.
    pub fn total_mass(&self) -> f64 {
        self.boxes.len() as f64 * self.epsilon * self.epsilon / self.normalizer
    }
}

pub fn build_measure(hit_boxes: &[Point3], epsilon: Scale, n: i64, es: &EscapeEstimate) -> Result<GridMeasure> {
    let h = to_f64(epsilon * n);
    if es.kind != EscapeKind::TwoScale || es.m.is_none_or(|m| (m - h).abs() > 1e-9) || (es.n - n as f64).abs() > 1e-9 {
        return Err(Error::BadScales("normaliser must be Es(εn, n)".into()));
    }
    if es.value <= 0.0 {
        return Err(Error::DegenerateNormalizer);
    }
    let eps = to_f64(epsilon);
    let mut m = GridMeasure::with_density(hit_boxes.to_vec(), eps, 1.0 / (eps * es.value));
    m.normalizer = es.value;
    Ok(m)
}

/// `M_n` samples with `Es(n)` from the same walks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthSample {
    pub n: i64,
    pub samples: Vec<u32>,
    pub mean: f64,
    pub stderr: f64,
    pub es: EscapeEstimate,
}

impl GrowthSample {
    pub fn from_run(run: &EscapeRun) -> Self {
        let k = run.lerw_lengths.len() as f64;
        let mean = run.lerw_lengths.iter().map(|&x| x as f64).sum::<f64>() / k;
        let var = run.lerw_lengths.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
        GrowthSample {
            n: run.n.as_integer().unwrap_or(0),
            samples: run.lerw_lengths.clone(),
            mean,
            stderr: (var / k).sqrt(),
            es: run.plain(),
        }
    }

    /// `E(M_n) / (n² Es(n))` and its standard error in log scale.
    pub fn ratio(&self) -> (f64, f64) {
        let r = self.mean / ((self.n * self.n) as f64 * self.es.value);
        let s = ((self.stderr / self.mean).powi(2) + self.es.log_stderr().powi(2)).sqrt();
        (r, s)
    }
}

pub fn growth_sample(n: i64, trials: u64, exec: Exec) -> Result<GrowthSample> {
    Ok(GrowthSample::from_run(&run_escape(n, &[], trials, exec)?))
}

/// `β̂` from `E(M_n)` on `grid`.
pub fn estimate_growth_exponent(
    grid: &[i64],
    trials_per_n: impl Fn(i64) -> u64,
    exec: Exec,
) -> Result<(ExponentFit, Vec<GrowthSample>)> {
    fit_power_law(&grid.iter().map(|&n| (n as f64, 1.0, 0.0)).collect::<Vec<_>>())?;
    let samples = grid
        .iter()
        .map(|&n| growth_sample(n, trials_per_n(n), exec))
        .collect::<Result<Vec<_>>>()?;
    Ok((fit_growth(&samples)?, samples))
}

pub fn fit_growth(samples: &[GrowthSample]) -> Result<ExponentFit> {
    fit_power_law(&samples.iter().map(|g| (g.n as f64, g.mean, g.stderr)).collect::<Vec<_>>())
}

/// Empirical survival curve of `J_{ε,n} / (ε⁻² Es(εn, n))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub epsilon: f64,
    pub n: i64,
    pub trials: u64,
    pub es: EscapeEstimate,
    /// `ε⁻² Es(εn, n)`.
    pub normalizer: f64,
    pub counts: Vec<u64>,
    /// `(c, P(J ≥ c · normalizer))`.
    pub curve: Vec<(f64, f64)>,
    /// Upper over lower quartile of the normalised count.
    pub iqr_ratio: f64,
}

impl TailReport {
    /// Largest `c` on the curve whose survival is at least `level`.
    pub fn threshold_at(&self, level: f64) -> Option<f64> {
        self.curve.iter().filter(|&&(c, p)| c > 0.0 && p >= level).map(|&(c, _)| c).fold(None, |a, c| {
            Some(a.map_or(c, |x: f64| x.max(c)))
        })
    }
}

pub fn default_c_grid() -> Vec<f64> {
    (0..=40).map(|k| k as f64 * 0.05).collect()
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

pub fn tail_demonstration(epsilon: Scale, n: i64, trials: u64, c_grid: &[f64], exec: Exec) -> Result<TailReport> {
    check_lattice_side(epsilon, n, 4)?;
    if trials == 0 {
        return Err(Error::InsufficientTrials);
    }
    let annulus = BoxAnnulus::new(epsilon, n, BoxConvention::Contained)?;
    let h = Radius::from_scale(epsilon * n);
    let es = run_escape(Radius::new(n), &[h], trials, exec)?.two_scale(h)?;
    let eps = to_f64(epsilon);
    let normalizer = es.value / (eps * eps);
    let id = lerw_experiment(n);
    let counts = run_trials(trials, exec.workers, |t| {
        annulus.hits(&sample_erased(n, StreamKey::new(exec.master_seed, id, t))).len() as u64
    });
    let mut c_sorted = c_grid.to_vec();
    c_sorted.sort_by(f64::total_cmp);
    let curve = c_sorted
        .iter()
        .map(|&c| {
            let k = counts.iter().filter(|&&j| j as f64 >= c * normalizer).count();
            (c, k as f64 / trials as f64)
        })
        .collect();
    let mut norm: Vec<f64> = counts.iter().map(|&j| j as f64 / normalizer).collect();
    norm.sort_by(f64::total_cmp);
    let iqr_ratio = quantile(&norm, 0.75) / quantile(&norm, 0.25);
    Ok(TailReport { epsilon: eps, n, trials, es, normalizer, counts, curve, iqr_ratio })
}

/// Per-resolution summary of the energy experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub k: u32,
    pub epsilon: f64,
    pub n: i64,
    pub exponent: f64,
    pub es: EscapeEstimate,
    pub mean_energy: f64,
    pub stderr: f64,
    pub mean_mass: f64,
    /// Mean of `(Y^ε / (ε⁻² Es(εn, n)))²` and its standard error.
    pub second_moment: f64,
    pub second_moment_stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub k_grid: Vec<u32>,
    pub n: i64,
    pub trials: u64,
    pub es_trials: u64,
    pub delta: f64,
    pub beta_hat: f64,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    (mean, (var / k).sqrt())
}

/// For each `k`, samples LERW hit sets at `ε = 2⁻ᵏ`, builds `μ_k` on the
/// boxes of the annulus including the boundary-straddling ones, and averages
/// `I_{β̂-δ}(μ_k)`. All resolutions share the same LERW samples.
pub fn energy_boundedness_experiment(cfg: &EnergyConfig, exec: Exec) -> Result<Vec<EnergyRow>> {
    if cfg.delta <= 0.0 {
        return Err(Error::Config("δ must be positive".into()));
    }
    if cfg.trials == 0 || cfg.es_trials == 0 {
        return Err(Error::InsufficientTrials);
    }
    let s = cfg.beta_hat - cfg.delta;
    if s >= 3.0 {
        return Err(Error::DivergentKernel(s));
    }
    if !(s >= 0.0) {
        return Err(Error::Config(format!("energy exponent β̂ - δ = {s} must be non-negative")));
    }
    let eps: Vec<Scale> = cfg.k_grid.iter().map(|&k| Scale::new(1, 1i64 << k)).collect();
    for &e in &eps {
        check_lattice_side(e, cfg.n, 4)?;
    }
    let annuli = eps
        .iter()
        .map(|&e| BoxAnnulus::new(e, cfg.n, BoxConvention::WithStraddling))
        .collect::<Result<Vec<_>>>()?;
    let inner: Vec<Radius> = eps.iter().map(|&e| Radius::from_scale(e * cfg.n)).collect();
    let run = run_escape(Radius::new(cfg.n), &inner, cfg.es_trials, exec)?;
    let es: Vec<EscapeEstimate> = inner.iter().map(|&h| run.two_scale(h)).collect::<Result<_>>()?;
    if es.iter().any(|e| e.value <= 0.0) {
        return Err(Error::DegenerateNormalizer);
    }
    let id = lerw_experiment(cfg.n);
    let per_trial = run_trials(cfg.trials, exec.workers, |t| {
        let path = sample_erased(cfg.n, StreamKey::new(exec.master_seed, id, t));
        annuli
            .iter()
            .zip(&es)
            .zip(&eps)
            .map(|((a, e), &ep)| {
                let hits: Vec<Point3> = a.hits(&path).into_iter().collect();
                let y = hits.len() as f64;
                let mu = build_measure(&hits, ep, cfg.n, e).expect("normaliser checked above");
                let energy = frostman_energy(&mu, s).expect("exponent checked above");
                (energy, mu.total_mass(), y)
            })
            .collect::<Vec<_>>()
    });
    Ok(cfg
        .k_grid
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let e = to_f64(eps[j]);
            let norm = es[j].value / (e * e);
            let energies: Vec<f64> = per_trial.iter().map(|r| r[j].0).collect();
            let masses: Vec<f64> = per_trial.iter().map(|r| r[j].1).collect();
            let sq: Vec<f64> = per_trial.iter().map(|r| (r[j].2 / norm).powi(2)).collect();
            let (mean_energy, stderr) = mean_and_stderr(&energies);
            let (second_moment, second_moment_stderr) = mean_and_stderr(&sq);
            EnergyRow {
                k,
                epsilon: e,
                n: cfg.n,
                exponent: s,
                es: es[j].clone(),
                mean_energy,
                stderr,
                mean_mass: mean_and_stderr(&masses).0,
                second_moment,
                second_moment_stderr,
            }
        })
        .collect())
}

/// Weighted regression slope of mean energy against `k`, with its standard error.
pub fn energy_trend(rows: &[EnergyRow]) -> (f64, f64) {
    let w: Vec<f64> = rows.iter().map(|r| 1.0 / r.stderr.max(1e-300).powi(2)).collect();
    let sw: f64 = w.iter().sum();
    let xm = rows.iter().zip(&w).map(|(r, w)| w * r.k as f64).sum::<f64>() / sw;
    let ym = rows.iter().zip(&w).map(|(r, w)| w * r.mean_energy).sum::<f64>() / sw;
    let sxx: f64 = rows.iter().zip(&w).map(|(r, w)| w * (r.k as f64 - xm).powi(2)).sum();
    let sxy: f64 = rows.iter().zip(&w).map(|(r, w)| w * (r.k as f64 - xm) * (r.mean_energy - ym)).sum();
    (sxy / sxx, (1.0 / sxx).sqrt())
}

/// Uniform-boundedness check of the normalised second moments.
pub fn second_moment_band(rows: &[EnergyRow], factor: f64, sigmas: f64) -> BandCheck {
    let v: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.second_moment, r.second_moment_stderr / r.second_moment))
        .collect();
    band_check(&v, factor, sigmas)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eighth() -> Scale {
        Scale::new(1, 8)
    }

    #[test]
    fn annulus_conventions() {
        let core = BoxAnnulus::new(eighth(), 128, BoxConvention::Contained).unwrap();
        let wide = BoxAnnulus::new(eighth(), 128, BoxConvention::WithStraddling).unwrap();
        let fat = BoxAnnulus::new(eighth(), 128, BoxConvention::FattenedLattice).unwrap();
        assert!(!core.is_empty());
        assert!(wide.len() > core.len());
        assert!(core.boxes.iter().all(|&b| wide.qualifies(b)));
        // a fattened box is 64 lattice units wide, the annulus only ~43
        assert!(fat.is_empty());
        // octahedral invariance of the box set (boxes map by x ↦ -x - 1)
        for &b in &core.boxes {
            let m = Point3::new(-b.x - 1, b.y, b.z);
            assert!(core.qualifies(m));
        }
        // at ε = 1/4 no box fits strictly inside the annulus
        assert!(BoxAnnulus::new(Scale::new(1, 4), 128, BoxConvention::Contained).unwrap().is_empty());
    }

    #[test]
    fn box_geometry_by_hand() {
        // ε = 1/8, box (3,0,0) spans x ∈ [3/8, 1/2]: 1/3 ≤ |y| ≤ √(1/4 + 2/64) < 2/3
        assert!(box_in_annulus(Point3::new(3, 0, 0), eighth()));
        // box (2,0,0) starts at 1/4 < 1/3
        assert!(!box_in_annulus(Point3::new(2, 0, 0), eighth()));
        assert!(box_meets_sphere(Point3::new(2, 0, 0), eighth(), 1));
    }

    #[test]
    fn counts_respect_bounds_and_audit() {
        let a = BoxAnnulus::new(eighth(), 64, BoxConvention::Contained).unwrap();
        let floor = connectivity_floor(eighth());
        for t in 0..60 {
            let path = sample_erased(64, StreamKey::new(1, lerw_experiment(64), t));
            let hits = a.hits(&path);
            assert!(hits.len() as f64 >= floor, "{} < {floor}", hits.len());
            assert!(hits.len() <= a.len());
            assert!(a.audit(&path, &hits));
            // brute force over all qualifying boxes
            let brute = a.boxes.iter().filter(|&&b| path.iter().any(|&v| a.fattened(b).contains(v))).count();
            assert_eq!(brute, hits.len());
        }
    }

    #[test]
    fn count_requires_resolvable_boxes() {
        assert!(matches!(count_boxes_hit(Scale::new(1, 64), 128, StreamKey::new(0, 0, 0)), Err(Error::BadScales(_))));
    }

    #[test]
    fn two_box_errors_and_containment() {
        let e = Exec::new(3).with_workers(1);
        let x = Point3::new(3, 0, 0);
        assert!(matches!(two_box_frequency(x, x, eighth(), 64, 10, e), Err(Error::DegeneratePair)));
        assert!(matches!(
            two_box_frequency(x, Point3::ORIGIN, eighth(), 64, 10, e),
            Err(Error::OutsideAnnulus(_))
        ));
        let r = two_box_frequency(x, Point3::new(3, 2, 0), eighth(), 64, 300, e).unwrap();
        assert!(r.both <= r.hits_x.min(r.hits_y));
        assert_eq!(r.l, 2.0);
    }

    #[test]
    fn pair_sampler_is_deterministic_and_valid() {
        let a = sample_box_pairs(eighth(), 20, 16).unwrap();
        assert_eq!(a, sample_box_pairs(eighth(), 20, 16).unwrap());
        assert_eq!(a.len(), 20);
        for (x, y) in &a {
            assert!(box_in_annulus(*x, eighth()) && box_in_annulus(*y, eighth()));
            let l2 = (*x - *y).norm2();
            assert!((4..=16).contains(&l2));
        }
    }

    #[test]
    fn measure_mass_identities() {
        let es = EscapeEstimate {
            kind: EscapeKind::TwoScale,
            n: 128.0,
            m: Some(16.0),
            big_l: None,
            big_r: None,
            trials: 10,
            successes: 4,
            value: 0.4,
            stderr: 0.1,
            master_seed: 0,
            experiment_id: 0,
        };
        let empty = build_measure(&[], eighth(), 128, &es).unwrap();
        assert_eq!(empty.total_mass(), 0.0);
        let hits = [Point3::new(3, 0, 0), Point3::new(4, 0, 0), Point3::new(0, 3, 1)];
        let mu = build_measure(&hits, eighth(), 128, &es).unwrap();
        assert_eq!(mu.total_mass(), 3.0 * 0.125 * 0.125 / 0.4);
        assert_eq!(mu.density, 1.0 / (0.125 * 0.4));
        let mut zero = es.clone();
        zero.value = 0.0;
        assert!(matches!(build_measure(&hits, eighth(), 128, &zero), Err(Error::DegenerateNormalizer)));
        let mut wrong = es.clone();
        wrong.m = Some(8.0);
        assert!(matches!(build_measure(&hits, eighth(), 128, &wrong), Err(Error::BadScales(_))));
    }

    #[test]
    fn tail_curve_is_monotone() {
        let r = tail_demonstration(eighth(), 32, 200, &default_c_grid(), Exec::new(2).with_workers(1)).unwrap();
        assert_eq!(r.curve[0], (0.0, 1.0));
        for w in r.curve.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.9), 4.6);
    }

    #[test]
    fn window_counter_with_trivial_gamma() {
        // n = 60, M = 20, i = 0: v = (21,0,0) sits on ∂D_{0,60}
        let gamma = SimplePath::single(Point3::new(21, 0, 0));
        let c = WindowCounter::new(gamma, 0, 20, Scale::new(1, 60), 60, Method::Rejection).unwrap();
        // window half-width 60/160 < 2: no fattened box of side 4 fits
        assert!(c.window_boxes.is_empty());
        assert_eq!(c.sample(StreamKey::new(0, 0, 0)).unwrap(), 0);
    }
}
