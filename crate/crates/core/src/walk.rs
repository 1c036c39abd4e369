//! Simple random walk on Z³ driven by per-trial random streams.
//!
//! Every trial owns a stream derived statelessly from a [`StreamKey`], so an
//! estimator's output depends only on `(master_seed, experiment_id, trials)`
//! and never on how trials are distributed over workers.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Ball, Point3, Region};

/// Identifies one independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master_seed: u64,
    pub experiment_id: u64,
    pub trial_index: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, experiment_id: u64, trial_index: u64) -> Self {
        StreamKey { master_seed, experiment_id, trial_index }
    }

    /// Key for an independent lane of the same trial (e.g. the second walk of a pair).
    pub fn lane(self, lane: u64) -> Self {
        StreamKey {
            experiment_id: mix64(self.experiment_id ^ mix64(lane.wrapping_add(0x5851_F42D_4C95_7F2D))),
            ..self
        }
    }

    pub fn stream(self) -> StepStream {
        derive_stream(self)
    }
}

/// SplitMix64 finalizer; a bijection on u64.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit identifier for a named experiment and its integer parameters.
pub fn experiment_id(tag: &str, params: &[u64]) -> u64 {
    // FNV-1a over the tag, then fold parameters through the mixer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    for &p in params {
        h = mix64(h ^ p);
    }
    h
}

/// Builds the generator for `key`.
///
/// The first three state words are bijective images of the three key fields,
/// so distinct keys always give distinct initial states.
pub fn derive_stream(key: StreamKey) -> StepStream {
    let w0 = mix64(key.master_seed);
    let w1 = mix64(key.experiment_id ^ 0xD1B5_4A32_D192_ED03);
    let w2 = mix64(key.trial_index ^ 0x8CB9_2BA7_2F3D_8DD7);
    let mut w3 = mix64(w0 ^ w1.rotate_left(21) ^ w2.rotate_left(42));
    if w0 | w1 | w2 | w3 == 0 {
        w3 = 1;
    }
    let mut seed = [0u8; 32];
    for (chunk, w) in seed.chunks_exact_mut(8).zip([w0, w1, w2, w3]) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    StepStream { rng: Xoshiro256PlusPlus::from_seed(seed), bits: 0, left: 0 }
}

/// Source of uniform unit steps (3 bits with rejection of 6 and 7) and uniform floats.
#[derive(Clone, Debug)]
pub struct StepStream {
    rng: Xoshiro256PlusPlus,
    bits: u64,
    left: u32,
}

impl StepStream {
    /// Uniform direction index in `0..6`.
    #[inline]
    pub fn next_direction(&mut self) -> u8 {
        loop {
            if self.left == 0 {
                self.bits = self.rng.next_u64();
                self.left = 21;
            }
            let d = (self.bits & 7) as u8;
            self.bits >>= 3;
            self.left -= 1;
            if d < 6 {
                return d;
            }
        }
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform integer in `0..bound` (bound > 0), by rejection.
    pub fn below(&mut self, bound: u64) -> u64 {
        let zone = u64::MAX - u64::MAX % bound;
        loop {
            let v = self.rng.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }
}

/// Infinite simple random walk, yielding `S(0) = start, S(1), ...`.
#[derive(Clone, Debug)]
pub struct RandomWalk {
    pos: Point3,
    started: bool,
    stream: StepStream,
}

impl RandomWalk {
    pub fn new(start: Point3, stream: StepStream) -> Self {
        RandomWalk { pos: start, started: false, stream }
    }

    pub fn into_stream(self) -> StepStream {
        self.stream
    }
}

impl Iterator for RandomWalk {
    type Item = Point3;

    #[inline]
    fn next(&mut self) -> Option<Point3> {
        if self.started {
            self.pos = self.pos.step(self.stream.next_direction());
        } else {
            self.started = true;
        }
        Some(self.pos)
    }
}

/// Finite nearest-neighbor path.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticePath(Vec<Point3>);

impl LatticePath {
    pub fn new(vertices: Vec<Point3>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::NotAPath("empty vertex list".into()));
        }
        if let Some(w) = vertices.windows(2).find(|w| !w[0].is_adjacent(w[1])) {
            return Err(Error::NotAPath(format!("{:?} -> {:?} is not a unit step", w[0], w[1])));
        }
        Ok(LatticePath(vertices))
    }

    pub(crate) fn from_vec_unchecked(vertices: Vec<Point3>) -> Self {
        debug_assert!(!vertices.is_empty());
        debug_assert!(vertices.windows(2).all(|w| w[0].is_adjacent(w[1])));
        LatticePath(vertices)
    }

    /// Path given by a start point and direction indices.
    pub fn from_directions(start: Point3, dirs: &[u8]) -> Self {
        let mut v = Vec::with_capacity(dirs.len() + 1);
        v.push(start);
        let mut p = start;
        for &d in dirs {
            p = p.step(d);
            v.push(p);
        }
        LatticePath(v)
    }

    /// Number of steps.
    pub fn len(&self) -> usize {
        self.0.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 1
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.0
    }

    pub fn into_vertices(self) -> Vec<Point3> {
        self.0
    }

    pub fn start(&self) -> Point3 {
        self.0[0]
    }

    pub fn end(&self) -> Point3 {
        *self.0.last().unwrap()
    }

    /// Time reversal `λ^R`.
    pub fn reversed(&self) -> LatticePath {
        let mut v = self.0.clone();
        v.reverse();
        LatticePath(v)
    }

    /// `λ₁ + λ₂`; the second path must start where the first ends.
    pub fn concat(&self, other: &LatticePath) -> Result<LatticePath> {
        if self.end() != other.start() {
            return Err(Error::CompositionMismatch {
                end: self.end().coords(),
                start: other.start().coords(),
            });
        }
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0[1..]);
        Ok(LatticePath(v))
    }

    pub fn translated(&self, by: Point3) -> LatticePath {
        LatticePath(self.0.iter().map(|&p| p + by).collect())
    }
}

/// Outcome of [`walk_until_hit_or_exit`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HitOutcome {
    HitTarget,
    Exited,
}

/// Runs the walk from `start` and calls `visit(t, S(t))` for `t = 0, 1, ...`
/// until the walk leaves `domain`; returns the exit time `τ`.
///
/// The exit vertex is visited too. `visit` may stop the walk early by
/// returning `false`, in which case the index of that vertex is returned.
pub fn stream_until_exit<R, F>(start: Point3, domain: &R, stream: &mut StepStream, mut visit: F) -> usize
where
    R: Region + ?Sized,
    F: FnMut(usize, Point3) -> bool,
{
    let mut p = start;
    let mut t = 0;
    loop {
        if !visit(t, p) || !domain.contains(p) {
            return t;
        }
        p = p.step(stream.next_direction());
        t += 1;
    }
}

/// Same as [`stream_until_exit`] specialised to a ball, tracking the squared
/// norm incrementally.
#[inline]
pub fn stream_until_ball_exit<F>(start: Point3, ball: &Ball, stream: &mut StepStream, mut visit: F) -> usize
where
    F: FnMut(usize, Point3) -> bool,
{
    let (num, den) = ball.radius.squared();
    let c = ball.center;
    let mut rel = start - c;
    let mut d2 = rel.norm2();
    let mut t = 0;
    loop {
        let p = rel + c;
        if !visit(t, p) || d2 * den >= num {
            return t;
        }
        let dir = stream.next_direction();
        // |p ± e_a|² = |p|² ± 2 p_a + 1
        let a = rel.coord((dir / 2) as usize) as i128;
        d2 += if dir & 1 == 0 { 2 * a + 1 } else { 1 - 2 * a };
        rel = rel.step(dir);
        t += 1;
    }
}

/// `S[0, τ]` with `τ` the first exit time from `domain`.
pub fn walk_until_exit(start: Point3, domain: &Ball, key: StreamKey) -> Result<LatticePath> {
    if !domain.contains(start) {
        return Err(Error::StartOutsideDomain(start.coords()));
    }
    let mut stream = key.stream();
    let mut v = Vec::new();
    stream_until_ball_exit(start, domain, &mut stream, |_, p| {
        v.push(p);
        true
    });
    Ok(LatticePath::from_vec_unchecked(v))
}

/// Walk stopped at the first visit to `target` or the first exit, whichever comes first.
pub fn walk_until_hit_or_exit(
    start: Point3,
    target: Point3,
    domain: &Ball,
    key: StreamKey,
) -> Result<(LatticePath, HitOutcome)> {
    if !domain.contains(start) {
        return Err(Error::StartOutsideDomain(start.coords()));
    }
    let mut stream = key.stream();
    let mut v = Vec::new();
    let mut hit = false;
    stream_until_ball_exit(start, domain, &mut stream, |_, p| {
        v.push(p);
        hit = p == target;
        !hit
    });
    let outcome = if hit { HitOutcome::HitTarget } else { HitOutcome::Exited };
    Ok((LatticePath::from_vec_unchecked(v), outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{orbit_key, BallBoundary};
    use rustc_hash::FxHashMap;

    #[test]
    fn one_step_exit_from_unit_ball() {
        let b = Ball::centered(1);
        for t in 0..50 {
            let path = walk_until_exit(Point3::ORIGIN, &b, StreamKey::new(1, 2, t)).unwrap();
            assert_eq!(path.len(), 1);
            assert!(Point3::ORIGIN.neighbors().contains(&path.end()));
        }
    }

    #[test]
    fn start_outside_is_rejected() {
        let b = Ball::centered(2);
        let err = walk_until_exit(Point3::new(2, 0, 0), &b, StreamKey::new(0, 0, 0));
        assert_eq!(err, Err(Error::StartOutsideDomain([2, 0, 0])));
        let err = walk_until_hit_or_exit(Point3::new(5, 0, 0), Point3::ORIGIN, &b, StreamKey::new(0, 0, 0));
        assert!(err.is_err());
    }

    #[test]
    fn exit_path_invariants() {
        let b = Ball::centered(6);
        let boundary = BallBoundary(b);
        for t in 0..200 {
            let path = walk_until_exit(Point3::new(1, -2, 0), &b, StreamKey::new(3, 4, t)).unwrap();
            let v = path.vertices();
            assert!(v[..v.len() - 1].iter().all(|&p| b.contains(p)));
            assert!(boundary.contains(path.end()));
            assert!(LatticePath::new(v.to_vec()).is_ok());
        }
    }

    #[test]
    fn hit_at_time_zero() {
        let (path, outcome) =
            walk_until_hit_or_exit(Point3::ORIGIN, Point3::ORIGIN, &Ball::centered(3), StreamKey::new(0, 0, 0))
                .unwrap();
        assert_eq!(outcome, HitOutcome::HitTarget);
        assert_eq!(path.len(), 0);
    }

    #[test]
    fn hit_before_exit_from_unit_ball_is_one_in_six() {
        let b = Ball::centered(1);
        let trials = 60_000u64;
        let hits = (0..trials)
            .filter(|&t| {
                walk_until_hit_or_exit(Point3::ORIGIN, Point3::new(1, 0, 0), &b, StreamKey::new(11, 0, t))
                    .unwrap()
                    .1
                    == HitOutcome::HitTarget
            })
            .count() as f64;
        let p = 1.0 / 6.0;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((hits / trials as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn exit_distribution_is_uniform_on_orbits() {
        let b = Ball::centered(2);
        let trials = 60_000u64;
        let mut counts: FxHashMap<Point3, u64> = FxHashMap::default();
        for t in 0..trials {
            let end = walk_until_exit(Point3::ORIGIN, &b, StreamKey::new(5, 1, t)).unwrap().end();
            *counts.entry(end).or_default() += 1;
        }
        let mut orbits: FxHashMap<[i64; 3], Vec<u64>> = FxHashMap::default();
        for (p, c) in counts {
            orbits.entry(orbit_key(p)).or_default().push(c);
        }
        for (_, cs) in orbits {
            let mean = cs.iter().sum::<u64>() as f64 / cs.len() as f64;
            for c in cs {
                assert!((c as f64 - mean).abs() < 5.0 * mean.sqrt() + 1.0, "{c} vs {mean}");
            }
        }
    }

    #[test]
    fn identical_keys_give_identical_streams() {
        let key = StreamKey::new(42, 7, 9);
        let mut a = key.stream();
        let mut b = key.stream();
        for _ in 0..1_000_000 {
            assert_eq!(a.next_direction(), b.next_direction());
        }
    }

    #[test]
    fn neighboring_trial_keys_diverge_early() {
        for t in 0..1000u64 {
            let mut a = StreamKey::new(1, 1, t).stream();
            let mut b = StreamKey::new(1, 1, t + 1).stream();
            let differ = (0..64).any(|_| a.next_direction() != b.next_direction());
            assert!(differ, "trial {t}");
        }
    }

    #[test]
    fn direction_frequencies_are_uniform() {
        let mut s = StreamKey::new(2024, 0, 0).stream();
        let draws = 10_000_000u64;
        let mut counts = [0u64; 6];
        for _ in 0..draws {
            counts[s.next_direction() as usize] += 1;
        }
        let expected = draws as f64 / 6.0;
        let sigma = (draws as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        let mut chi2 = 0.0;
        for c in counts {
            assert!((c as f64 - expected).abs() < 5.0 * sigma);
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        // 5 degrees of freedom; P(chi2 > 25) < 2e-4
        assert!(chi2 < 25.0, "chi2 = {chi2}");
    }

    #[test]
    fn lanes_are_distinct_streams() {
        let k = StreamKey::new(1, 2, 3);
        assert_ne!(k.lane(0), k.lane(1));
        assert_ne!(k.lane(0).stream().next_u64(), k.lane(1).stream().next_u64());
    }
}
