//! Geometry of the cubic lattice Z³.
//!
//! Balls follow the strict convention `B(z, r) = { x : |x - z| < r }` and are
//! decided by exact squared-distance comparison against a rational squared
//! radius, so radii such as `n/3`, `εn` or `l·εn` with `l² ∈ Z` never incur
//! floating point ambiguity.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use num_integer::Integer;
use num_rational::Ratio;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact rational scale factor (ε, εn, k_i·n, ...).
pub type Scale = Ratio<i64>;

/// Finite set of lattice points.
pub type LatticeSet = FxHashSet<Point3>;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

/// The six unit steps, indexed 0..6 as +x, -x, +y, -y, +z, -z.
pub const UNIT_STEPS: [Point3; 6] = [
    Point3::new(1, 0, 0),
    Point3::new(-1, 0, 0),
    Point3::new(0, 1, 0),
    Point3::new(0, -1, 0),
    Point3::new(0, 0, 1),
    Point3::new(0, 0, -1),
];

impl Point3 {
    pub const ORIGIN: Point3 = Point3::new(0, 0, 0);

    pub const fn new(x: i64, y: i64, z: i64) -> Self {
        Point3 { x, y, z }
    }

    /// `k·e_axis` for axis 0, 1, 2.
    pub fn on_axis(axis: usize, k: i64) -> Self {
        let mut c = [0; 3];
        c[axis] = k;
        Point3::from(c)
    }

    #[inline]
    pub fn step(self, dir: u8) -> Self {
        self + UNIT_STEPS[dir as usize]
    }

    pub fn neighbors(self) -> [Point3; 6] {
        UNIT_STEPS.map(|d| self + d)
    }

    #[inline]
    pub fn norm2(self) -> i128 {
        let (x, y, z) = (self.x as i128, self.y as i128, self.z as i128);
        x * x + y * y + z * z
    }

    #[inline]
    pub fn dist2(self, other: Point3) -> i128 {
        (self - other).norm2()
    }

    pub fn is_adjacent(self, other: Point3) -> bool {
        self.dist2(other) == 1
    }

    pub fn coords(self) -> [i64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn coord(self, axis: usize) -> i64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl From<[i64; 3]> for Point3 {
    fn from(c: [i64; 3]) -> Self {
        Point3::new(c[0], c[1], c[2])
    }
}

impl fmt::Debug for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

impl Add for Point3 {
    type Output = Point3;
    #[inline]
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    #[inline]
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// A positive radius stored through its exact rational square.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Radius {
    sq_num: i128,
    sq_den: i128,
}

impl Radius {
    /// Integer radius `n`.
    pub fn new(n: i64) -> Self {
        Self::from_squared(n as i128 * n as i128, 1)
    }

    /// Radius `p / q`.
    pub fn ratio(p: i64, q: i64) -> Self {
        Self::from_squared(p as i128 * p as i128, q as i128 * q as i128)
    }

    pub fn from_scale(s: Scale) -> Self {
        Self::ratio(*s.numer(), *s.denom())
    }

    /// Radius whose square is `num / den`.
    pub fn from_squared(num: i128, den: i128) -> Self {
        assert!(num > 0 && den > 0, "radius must be positive");
        let g = num.gcd(&den);
        Radius { sq_num: num / g, sq_den: den / g }
    }

    /// `self · p / q`.
    pub fn scaled(self, p: i64, q: i64) -> Self {
        Self::from_squared(
            self.sq_num * (p as i128 * p as i128),
            self.sq_den * (q as i128 * q as i128),
        )
    }

    /// `self · sqrt(k2)` for a positive integer `k2`.
    pub fn scaled_sqrt(self, k2: i64) -> Self {
        Self::from_squared(self.sq_num * k2 as i128, self.sq_den)
    }

    /// Squared radius as `(numerator, denominator)`.
    pub fn squared(self) -> (i128, i128) {
        (self.sq_num, self.sq_den)
    }

    /// Whether a point at squared distance `d2` lies strictly inside.
    #[inline]
    pub fn admits(self, d2: i128) -> bool {
        d2 * self.sq_den < self.sq_num
    }

    pub fn value(self) -> f64 {
        (self.sq_num as f64 / self.sq_den as f64).sqrt()
    }

    /// Smallest integer `k` with `k ≥ r`.
    pub fn ceil(self) -> i64 {
        let mut k = self.value().floor() as i64;
        while (k as i128 * k as i128) * self.sq_den < self.sq_num {
            k += 1;
        }
        while k > 0 && ((k - 1) as i128 * (k - 1) as i128) * self.sq_den >= self.sq_num {
            k -= 1;
        }
        k
    }

    /// Returns the radius as an integer when it is one.
    pub fn as_integer(self) -> Option<i64> {
        let k = self.ceil();
        (self.sq_den == 1 && k as i128 * k as i128 == self.sq_num).then_some(k)
    }
}

impl From<i64> for Radius {
    fn from(n: i64) -> Self {
        Radius::new(n)
    }
}

impl PartialOrd for Radius {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Radius {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.sq_num * other.sq_den).cmp(&(other.sq_num * self.sq_den))
    }
}

impl fmt::Debug for Radius {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_integer() {
            Some(k) => write!(f, "{k}"),
            None => write!(f, "sqrt({}/{})", self.sq_num, self.sq_den),
        }
    }
}

impl fmt::Display for Radius {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_integer() {
            Some(k) => write!(f, "{k}"),
            None => write!(f, "{}", self.value()),
        }
    }
}

/// Anything that can decide lattice membership.
pub trait Region {
    fn contains(&self, p: Point3) -> bool;
}

impl<R: Region + ?Sized> Region for &R {
    fn contains(&self, p: Point3) -> bool {
        (**self).contains(p)
    }
}

impl Region for LatticeSet {
    fn contains(&self, p: Point3) -> bool {
        FxHashSet::contains(self, &p)
    }
}

/// Open lattice ball `B(center, radius)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ball {
    pub center: Point3,
    pub radius: Radius,
}

impl Ball {
    pub fn new(center: Point3, radius: Radius) -> Self {
        Ball { center, radius }
    }

    /// `B(0, n)`.
    pub fn centered(n: i64) -> Self {
        Ball::new(Point3::ORIGIN, Radius::new(n))
    }

    #[inline]
    pub fn contains(&self, p: Point3) -> bool {
        self.radius.admits(p.dist2(self.center))
    }

    /// Outer boundary `∂B`.
    pub fn boundary(&self) -> BallBoundary {
        BallBoundary(*self)
    }

    /// All lattice points of the ball. Intended for oracle-scale radii.
    pub fn lattice_points(&self) -> Vec<Point3> {
        let k = self.radius.ceil();
        let c = self.center;
        let mut out = Vec::new();
        for x in -k..=k {
            for y in -k..=k {
                for z in -k..=k {
                    let p = Point3::new(c.x + x, c.y + y, c.z + z);
                    if self.contains(p) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }

    pub fn lattice_set(&self) -> LatticeSet {
        self.lattice_points().into_iter().collect()
    }
}

impl Region for Ball {
    fn contains(&self, p: Point3) -> bool {
        Ball::contains(self, p)
    }
}

/// Predicate form of `∂B = { x ∉ B : x ~ y for some y ∈ B }`.
#[derive(Clone, Copy, Debug)]
pub struct BallBoundary(pub Ball);

impl Region for BallBoundary {
    fn contains(&self, p: Point3) -> bool {
        !self.0.contains(p) && p.neighbors().iter().any(|&q| self.0.contains(q))
    }
}

/// `B(n/3)`-style ball membership: `|p| ≥ r` on the lattice scale.
pub fn outside_ball(p: Point3, radius: Radius) -> bool {
    !radius.admits(p.norm2())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryKind {
    /// `∂A`: points outside `A` adjacent to `A`.
    Outer,
    /// `∂_i A`: points of `A` adjacent to the complement.
    Inner,
}

/// Outer or inner boundary of a finite set.
pub fn boundary(set: &LatticeSet, kind: BoundaryKind) -> Result<LatticeSet> {
    if set.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut out = LatticeSet::default();
    for &p in set {
        for q in p.neighbors() {
            if !set.contains(&q) {
                match kind {
                    BoundaryKind::Outer => {
                        out.insert(q);
                    }
                    BoundaryKind::Inner => {
                        out.insert(p);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Smallest index of `path` lying in `region`.
pub fn first_hit_index<R: Region + ?Sized>(path: &[Point3], region: &R) -> Option<usize> {
    path.iter().position(|&p| region.contains(p))
}

/// Which of the three cube families a region belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CubeKind {
    /// `scale · ∏[x_i, x_i + 1]`.
    GridBox,
    /// `scale · ∏[x_i - 2, x_i + 2]`.
    FattenedBox,
    /// `[-k_i, k_i]³` scaled, with `k_i = 1/3 + i/M`.
    Centered,
    /// Any other closed axis-parallel cube.
    Window,
}

/// Closed axis-parallel cube with rational corners.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CubeRegion {
    pub kind: CubeKind,
    pub lo: [Scale; 3],
    pub hi: [Scale; 3],
}

impl CubeRegion {
    pub fn grid_box(x: Point3, scale: Scale) -> Self {
        let c = x.coords();
        CubeRegion {
            kind: CubeKind::GridBox,
            lo: c.map(|v| scale * v),
            hi: c.map(|v| scale * (v + 1)),
        }
    }

    pub fn fattened_box(x: Point3, scale: Scale) -> Self {
        let c = x.coords();
        CubeRegion {
            kind: CubeKind::FattenedBox,
            lo: c.map(|v| scale * (v - 2)),
            hi: c.map(|v| scale * (v + 2)),
        }
    }

    /// `k_i = 1/3 + i/M`.
    pub fn centered_half_width(i: i64, m: i64) -> Scale {
        Scale::new(1, 3) + Scale::new(i, m)
    }

    /// `n · D(i) = n · [-k_i, k_i]³`.
    pub fn centered(i: i64, m: i64, n: Scale) -> Self {
        let k = Self::centered_half_width(i, m) * n;
        CubeRegion { kind: CubeKind::Centered, lo: [-k; 3], hi: [k; 3] }
    }

    /// `center + [-half, half]³`.
    pub fn window(center: [Scale; 3], half: Scale) -> Self {
        CubeRegion {
            kind: CubeKind::Window,
            lo: center.map(|c| c - half),
            hi: center.map(|c| c + half),
        }
    }

    #[inline]
    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|a| {
            let v = Scale::from_integer(p.coord(a));
            self.lo[a] <= v && v <= self.hi[a]
        })
    }

    /// Inclusive integer coordinate range along `axis`.
    pub fn lattice_range(&self, axis: usize) -> (i64, i64) {
        (self.lo[axis].ceil().to_integer(), self.hi[axis].floor().to_integer())
    }

    pub fn contains_cube(&self, other: &CubeRegion) -> bool {
        (0..3).all(|a| self.lo[a] <= other.lo[a] && other.hi[a] <= self.hi[a])
    }

    pub fn boundary(&self) -> CubeBoundary {
        CubeBoundary(*self)
    }

    pub fn lattice_points(&self) -> Vec<Point3> {
        let (x0, x1) = self.lattice_range(0);
        let (y0, y1) = self.lattice_range(1);
        let (z0, z1) = self.lattice_range(2);
        let mut out = Vec::new();
        for x in x0..=x1 {
            for y in y0..=y1 {
                for z in z0..=z1 {
                    out.push(Point3::new(x, y, z));
                }
            }
        }
        out
    }
}

impl Region for CubeRegion {
    fn contains(&self, p: Point3) -> bool {
        CubeRegion::contains(self, p)
    }
}

/// Outer lattice boundary of a cube region.
#[derive(Clone, Copy, Debug)]
pub struct CubeBoundary(pub CubeRegion);

impl Region for CubeBoundary {
    fn contains(&self, p: Point3) -> bool {
        !self.0.contains(p) && p.neighbors().iter().any(|&q| self.0.contains(q))
    }
}

/// One of the 48 symmetries of the cube: a signed coordinate permutation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Symmetry {
    pub perm: [usize; 3],
    pub signs: [i64; 3],
}

impl Symmetry {
    pub fn apply(&self, p: Point3) -> Point3 {
        let c = p.coords();
        Point3::new(
            self.signs[0] * c[self.perm[0]],
            self.signs[1] * c[self.perm[1]],
            self.signs[2] * c[self.perm[2]],
        )
    }
}

/// The full octahedral group.
pub fn octahedral_group() -> Vec<Symmetry> {
    const PERMS: [[usize; 3]; 6] =
        [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(48);
    for perm in PERMS {
        for bits in 0..8 {
            let signs = [0, 1, 2].map(|i| if bits >> i & 1 == 1 { -1 } else { 1 });
            out.push(Symmetry { perm, signs });
        }
    }
    out
}

/// Canonical representative of the orbit of `p` under [`octahedral_group`].
pub fn orbit_key(p: Point3) -> [i64; 3] {
    let mut c = p.coords().map(i64::abs);
    c.sort_unstable();
    c
}
