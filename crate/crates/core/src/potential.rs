//! Exact small-domain computations: Green's functions, hitting and exit
//! probabilities, avoidance probabilities and the exact LERW law.
//!
//! Everything here reduces to linear systems `(I - Q) u = f` for the walk
//! kernel `Q` killed on leaving a finite set of active sites. Systems with at
//! most [`DENSE_LIMIT`] unknowns are LU-factorised; larger symmetric systems
//! fall back to conjugate gradients.

use nalgebra::{DMatrix, DVector};
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::lattice::{Ball, LatticeSet, Point3};
use crate::loop_erasure::SimplePath;

pub const DENSE_LIMIT: usize = 2000;
const CG_TOLERANCE: f64 = 1e-12;

/// A site reached by one step from the interior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Site {
    Interior(usize),
    Boundary(usize),
}

/// Finite interior `A`, its outer boundary `∂A`, and index maps both ways.
#[derive(Clone, Debug)]
pub struct FiniteDomain {
    interior: Vec<Point3>,
    boundary: Vec<Point3>,
    index: FxHashMap<Point3, Site>,
    links: Vec<[Site; 6]>,
}

impl FiniteDomain {
    pub fn from_points(points: impl IntoIterator<Item = Point3>) -> Result<Self> {
        let mut interior: Vec<Point3> = points.into_iter().collect();
        interior.sort_unstable();
        interior.dedup();
        if interior.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let mut index: FxHashMap<Point3, Site> =
            interior.iter().enumerate().map(|(i, &p)| (p, Site::Interior(i))).collect();
        let mut boundary = Vec::new();
        let mut links = Vec::with_capacity(interior.len());
        for &p in &interior {
            let mut row = [Site::Boundary(0); 6];
            for (slot, q) in row.iter_mut().zip(p.neighbors()) {
                *slot = *index.entry(q).or_insert_with(|| {
                    boundary.push(q);
                    Site::Boundary(boundary.len() - 1)
                });
            }
            links.push(row);
        }
        Ok(FiniteDomain { interior, boundary, index, links })
    }

    pub fn from_ball(ball: &Ball) -> Result<Self> {
        Self::from_points(ball.lattice_points())
    }

    pub fn interior(&self) -> &[Point3] {
        &self.interior
    }

    pub fn boundary(&self) -> &[Point3] {
        &self.boundary
    }

    pub fn len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    pub fn site(&self, p: Point3) -> Option<Site> {
        self.index.get(&p).copied()
    }

    pub fn interior_index(&self, p: Point3) -> Result<usize> {
        match self.site(p) {
            Some(Site::Interior(i)) => Ok(i),
            _ => Err(Error::OutsideDomain(p.coords())),
        }
    }

    pub fn links(&self, i: usize) -> &[Site; 6] {
        &self.links[i]
    }

    pub fn interior_set(&self) -> LatticeSet {
        self.interior.iter().copied().collect()
    }
}

/// Substochastic one-step kernel from interior sites.
#[derive(Clone, Debug)]
pub struct Chain {
    rows: Vec<Vec<(Site, f64)>>,
    symmetric: bool,
}

impl Chain {
    /// Simple random walk: probability 1/6 to each neighbor.
    pub fn simple(domain: &FiniteDomain) -> Self {
        let rows = (0..domain.len())
            .map(|i| domain.links(i).iter().map(|&s| (s, 1.0 / 6.0)).collect())
            .collect();
        Chain { rows, symmetric: true }
    }

    /// Arbitrary kernel; `weight(i, site)` is the probability of stepping from
    /// interior site `i` to the given neighbor.
    pub fn from_weights(domain: &FiniteDomain, mut weight: impl FnMut(usize, Site) -> f64) -> Self {
        let rows = (0..domain.len())
            .map(|i| {
                domain
                    .links(i)
                    .iter()
                    .map(|&s| (s, weight(i, s)))
                    .filter(|&(_, w)| w > 0.0)
                    .collect()
            })
            .collect();
        Chain { rows, symmetric: false }
    }

    pub fn row(&self, i: usize) -> &[(Site, f64)] {
        &self.rows[i]
    }

    /// Probability of the step `i → to`.
    pub fn step(&self, i: usize, to: Site) -> f64 {
        self.rows[i].iter().filter(|(s, _)| *s == to).map(|(_, w)| w).sum()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// `I - Q` restricted to a set of active interior sites, ready for solves.
pub struct KilledSystem<'c> {
    chain: &'c Chain,
    active: Vec<usize>,
    local: Vec<Option<usize>>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl<'c> KilledSystem<'c> {
    pub fn new(chain: &'c Chain, active_mask: &[bool]) -> Result<Self> {
        let active: Vec<usize> = (0..chain.len()).filter(|&i| active_mask[i]).collect();
        let mut local = vec![None; chain.len()];
        for (k, &i) in active.iter().enumerate() {
            local[i] = Some(k);
        }
        let n = active.len();
        let lu = if n <= DENSE_LIMIT {
            let mut m = DMatrix::<f64>::identity(n, n);
            for (k, &i) in active.iter().enumerate() {
                for &(s, w) in chain.row(i) {
                    if let Site::Interior(j) = s {
                        if let Some(l) = local[j] {
                            m[(k, l)] -= w;
                        }
                    }
                }
            }
            Some(m.lu())
        } else if chain.symmetric {
            None
        } else {
            return Err(Error::DomainTooLarge { sites: n, limit: DENSE_LIMIT });
        };
        Ok(KilledSystem { chain, active, local, lu })
    }

    /// Solves `(I - Q) u = f` on the active sites. `f` and the result are
    /// indexed by interior site; inactive entries of the result are zero.
    pub fn solve(&self, f: &[f64]) -> Result<Vec<f64>> {
        let n = self.active.len();
        if n == 0 {
            return Ok(vec![0.0; self.chain.len()]);
        }
        let rhs = DVector::from_iterator(n, self.active.iter().map(|&i| f[i]));
        let x = match &self.lu {
            Some(lu) => lu.solve(&rhs).ok_or_else(|| Error::Solver("singular system".into()))?,
            None => self.conjugate_gradient(&rhs)?,
        };
        let mut out = vec![0.0; self.chain.len()];
        for (k, &i) in self.active.iter().enumerate() {
            out[i] = x[k];
        }
        Ok(out)
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.clone();
        for (k, &i) in self.active.iter().enumerate() {
            for &(s, w) in self.chain.row(i) {
                if let Site::Interior(j) = s {
                    if let Some(l) = self.local[j] {
                        y[k] -= w * x[l];
                    }
                }
            }
        }
        y
    }

    fn conjugate_gradient(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = DVector::zeros(b.len());
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr = r.dot(&r);
        let target = CG_TOLERANCE * CG_TOLERANCE * rr.max(f64::MIN_POSITIVE);
        for _ in 0..(20 * b.len() + 100) {
            if rr <= target {
                return Ok(x);
            }
            let ap = self.apply(&p);
            let alpha = rr / p.dot(&ap);
            x.axpy(alpha, &p, 1.0);
            r.axpy(-alpha, &ap, 1.0);
            let rr_new = r.dot(&r);
            p = &r + (rr_new / rr) * &p;
            rr = rr_new;
        }
        Err(Error::Solver("conjugate gradient did not converge".into()))
    }
}

fn all_active(n: usize) -> Vec<bool> {
    vec![true; n]
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// `G_A(x, y)`: expected visits to `y` before leaving `A`, walk started at `x`.
pub fn greens_function(domain: &FiniteDomain, x: Point3, y: Point3) -> Result<f64> {
    let i = domain.interior_index(x)?;
    let j = domain.interior_index(y)?;
    let chain = Chain::simple(domain);
    let sys = KilledSystem::new(&chain, &all_active(domain.len()))?;
    Ok(sys.solve(&unit(domain.len(), j))?[i])
}

/// Dense table of `G_A(x, y)` over all interior pairs.
#[derive(Clone, Debug)]
pub struct GreensTable {
    pub domain: FiniteDomain,
    values: DMatrix<f64>,
}

impl GreensTable {
    pub fn new(domain: FiniteDomain) -> Result<Self> {
        let n = domain.len();
        if n > DENSE_LIMIT {
            return Err(Error::DomainTooLarge { sites: n, limit: DENSE_LIMIT });
        }
        let chain = Chain::simple(&domain);
        let mut m = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            for &(s, w) in chain.row(i) {
                if let Site::Interior(j) = s {
                    m[(i, j)] -= w;
                }
            }
        }
        let values = m.try_inverse().ok_or_else(|| Error::Solver("singular Green's system".into()))?;
        Ok(GreensTable { domain, values })
    }

    pub fn get(&self, x: Point3, y: Point3) -> Result<f64> {
        Ok(self.values[(self.domain.interior_index(x)?, self.domain.interior_index(y)?)])
    }

    pub fn by_index(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }
}

/// Probability that the walk from `x` enters `target` before leaving `A`.
/// Boundary points in `target` count when the walk exits through them.
pub fn hitting_probability(domain: &FiniteDomain, x: Point3, target: &LatticeSet) -> Result<f64> {
    let i = domain.interior_index(x)?;
    if target.contains(&x) {
        return Ok(1.0);
    }
    let chain = Chain::simple(domain);
    let in_target: Vec<bool> = domain.interior().iter().map(|p| target.contains(p)).collect();
    let active: Vec<bool> = in_target.iter().map(|&t| !t).collect();
    let f: Vec<f64> = (0..domain.len())
        .map(|k| {
            chain
                .row(k)
                .iter()
                .map(|&(s, w)| match s {
                    Site::Interior(j) if in_target[j] => w,
                    Site::Boundary(b) if target.contains(&domain.boundary()[b]) => w,
                    _ => 0.0,
                })
                .sum()
        })
        .collect();
    Ok(KilledSystem::new(&chain, &active)?.solve(&f)?[i])
}

/// Harmonic measure from `x`: `(boundary point, exit probability)` for every
/// point of `∂A`, in the domain's boundary order.
pub fn exit_distribution(domain: &FiniteDomain, x: Point3) -> Result<Vec<(Point3, f64)>> {
    let i = domain.interior_index(x)?;
    let chain = Chain::simple(domain);
    // SRW Green's function is symmetric, so G(x, ·) is the column at x
    let g = KilledSystem::new(&chain, &all_active(domain.len()))?.solve(&unit(domain.len(), i))?;
    let mut out: Vec<(Point3, f64)> = domain.boundary().iter().map(|&b| (b, 0.0)).collect();
    for (y, gy) in g.iter().enumerate() {
        for &(s, w) in chain.row(y) {
            if let Site::Boundary(b) = s {
                out[b].1 += gy * w;
            }
        }
    }
    Ok(out)
}

/// Expected exit time from `A` started at `x`.
pub fn mean_exit_time(domain: &FiniteDomain, x: Point3) -> Result<f64> {
    let i = domain.interior_index(x)?;
    let chain = Chain::simple(domain);
    let sys = KilledSystem::new(&chain, &all_active(domain.len()))?;
    Ok(sys.solve(&vec![1.0; domain.len()])?[i])
}

/// `h(y) = P^y(S[0, σ_A] ∩ γ = ∅)` for every interior `y`, together with the
/// value on each boundary point (1 unless the point lies on `γ`).
pub fn avoidance_harmonic(domain: &FiniteDomain, chain: &Chain, gamma: &LatticeSet) -> Result<AvoidanceField> {
    let on_gamma: Vec<bool> = domain.interior().iter().map(|p| gamma.contains(p)).collect();
    let boundary_value: Vec<f64> =
        domain.boundary().iter().map(|b| if gamma.contains(b) { 0.0 } else { 1.0 }).collect();
    let active: Vec<bool> = on_gamma.iter().map(|&g| !g).collect();
    let f: Vec<f64> = (0..domain.len())
        .map(|k| {
            chain
                .row(k)
                .iter()
                .map(|&(s, w)| match s {
                    Site::Boundary(b) => w * boundary_value[b],
                    Site::Interior(_) => 0.0,
                })
                .sum()
        })
        .collect();
    let interior = KilledSystem::new(chain, &active)?.solve(&f)?;
    Ok(AvoidanceField { interior, boundary: boundary_value })
}

/// Values of an avoidance function on interior and boundary sites.
#[derive(Clone, Debug)]
pub struct AvoidanceField {
    pub interior: Vec<f64>,
    pub boundary: Vec<f64>,
}

impl AvoidanceField {
    pub fn at(&self, s: Site) -> f64 {
        match s {
            Site::Interior(i) => self.interior[i],
            Site::Boundary(b) => self.boundary[b],
        }
    }

    /// `P^x(S[1, σ_A] ∩ γ = ∅) = Σ_y Q(x, y) h(y)`.
    pub fn escape_from(&self, chain: &Chain, i: usize) -> f64 {
        chain.row(i).iter().map(|&(s, w)| w * self.at(s)).sum()
    }
}

/// `P^x(S[1, σ_A] ∩ γ = ∅)`. Points of `γ` off `A ∪ ∂A` are irrelevant.
pub fn avoidance_probability(domain: &FiniteDomain, x: Point3, gamma: &SimplePath) -> Result<f64> {
    let i = domain.interior_index(x)?;
    let chain = Chain::simple(domain);
    let set: LatticeSet = gamma.vertices().iter().copied().collect();
    Ok(avoidance_harmonic(domain, &chain, &set)?.escape_from(&chain, i))
}

/// Which event [`LerwLaw::probability`] evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LawQuery {
    /// `P(LE(S[0, σ_A])[0, len η] = η)`.
    Prefix,
    /// `P(LE(S[0, σ_A]) = η)`; zero unless `η` ends on `∂A`.
    Complete,
}

/// Exact law of the loop erasure of a Markov chain stopped on leaving `A`,
/// through the product of diagonal Green's functions on the shrinking domains
/// `A ∖ η[0, q-1]`. Diagonal values are cached per prefix.
pub struct LerwLaw<'d> {
    domain: &'d FiniteDomain,
    chain: Chain,
    diag_cache: FxHashMap<Vec<usize>, f64>,
}

impl<'d> LerwLaw<'d> {
    pub fn simple(domain: &'d FiniteDomain) -> Self {
        Self::with_chain(domain, Chain::simple(domain))
    }

    pub fn with_chain(domain: &'d FiniteDomain, chain: Chain) -> Self {
        LerwLaw { domain, chain, diag_cache: FxHashMap::default() }
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    fn validate(&self, start: Point3, eta: &[Point3]) -> Result<(Vec<usize>, Option<usize>)> {
        let bad = |msg: &str| Error::InvalidPrefix(msg.to_string());
        if eta.is_empty() || eta[0] != start {
            return Err(bad("path must start at the start point"));
        }
        SimplePath::new(eta.to_vec()).map_err(|e| Error::InvalidPrefix(e.to_string()))?;
        let mut idx = Vec::with_capacity(eta.len());
        let mut terminal = None;
        for (q, &p) in eta.iter().enumerate() {
            match self.domain.site(p) {
                Some(Site::Interior(i)) => idx.push(i),
                Some(Site::Boundary(b)) if q + 1 == eta.len() && q > 0 => terminal = Some(b),
                _ => return Err(bad("path leaves the domain before its final vertex")),
            }
        }
        Ok((idx, terminal))
    }

    /// `G(η(q), η(q); A ∖ η[0, q-1])` for the prefix `idx[..=q]`.
    fn diagonal(&mut self, prefix: &[usize]) -> Result<f64> {
        if let Some(&g) = self.diag_cache.get(prefix) {
            return Ok(g);
        }
        let (&here, removed) = prefix.split_last().unwrap();
        let mut active = vec![true; self.domain.len()];
        for &r in removed {
            active[r] = false;
        }
        let sys = KilledSystem::new(&self.chain, &active)?;
        let g = sys.solve(&unit(self.domain.len(), here))?[here];
        self.diag_cache.insert(prefix.to_vec(), g);
        Ok(g)
    }

    pub fn probability(&mut self, start: Point3, eta: &SimplePath, query: LawQuery) -> Result<f64> {
        let v = eta.vertices();
        let (idx, terminal) = self.validate(start, v)?;
        let m = v.len() - 1;
        let mut prob = 1.0;
        for q in 0..m {
            let g = self.diagonal(&idx[..=q])?;
            let next = self.domain.site(v[q + 1]).unwrap();
            prob *= g * self.chain.step(idx[q], next);
            if prob == 0.0 {
                return Ok(0.0);
            }
        }
        if terminal.is_some() {
            return Ok(prob);
        }
        if query == LawQuery::Complete {
            return Ok(0.0);
        }
        let g = self.diagonal(&idx)?;
        let on_eta: LatticeSet = v.iter().copied().collect();
        let field = avoidance_harmonic(self.domain, &self.chain, &on_eta)?;
        Ok(prob * g * field.escape_from(&self.chain, idx[m]))
    }
}

/// `P(LE(S[0, σ_A])[0, len η] = η)` (or the complete-path law) for the simple random walk.
pub fn exact_lerw_law(domain: &FiniteDomain, start: Point3, eta: &SimplePath, query: LawQuery) -> Result<f64> {
    LerwLaw::simple(domain).probability(start, eta, query)
}

/// Total probability of all complete loop-erased paths from `start`, and the
/// number of such paths, by depth-first enumeration of self-avoiding paths.
///
/// Uses the Schur-complement update `G_{A∖y}(a, b) = G_A(a, b) - G_A(a, y) G_A(y, b) / G_A(y, y)`
/// so each enumerated prefix costs one rank-one update instead of a solve.
pub fn complete_law_mass(domain: &FiniteDomain, start: Point3) -> Result<(f64, u64)> {
    let mut total = 0.0;
    let mut outcomes = 0;
    for_each_complete_path(domain, start, |p| {
        total += p;
        outcomes += 1;
    })?;
    Ok((total, outcomes))
}

/// Calls `visit` with the probability of every complete loop-erased path
/// from `start` (in depth-first order); see [`complete_law_mass`].
pub fn for_each_complete_path(domain: &FiniteDomain, start: Point3, mut visit: impl FnMut(f64)) -> Result<()> {
    let root = domain.interior_index(start)?;
    let n = domain.len();
    if n > 64 {
        return Err(Error::DomainTooLarge { sites: n, limit: 64 });
    }
    let table = GreensTable::new(domain.clone())?;
    let g: Vec<f64> = (0..n * n).map(|k| table.by_index(k / n, k % n)).collect();
    let mut walker = MassWalker { domain, n, visit: &mut visit, on_path: vec![false; n] };
    walker.visit(root, 1.0, &g);
    Ok(())
}

struct MassWalker<'d, 'f> {
    domain: &'d FiniteDomain,
    n: usize,
    visit: &'f mut dyn FnMut(f64),
    on_path: Vec<bool>,
}

impl MassWalker<'_, '_> {
    fn visit(&mut self, i: usize, prob: f64, g: &[f64]) {
        let n = self.n;
        let diag = g[i * n + i];
        let weight = prob * diag / 6.0;
        let links = *self.domain.links(i);
        let mut children = Vec::with_capacity(6);
        for s in links {
            match s {
                Site::Boundary(_) => (self.visit)(weight),
                Site::Interior(j) if !self.on_path[j] && j != i => children.push(j),
                Site::Interior(_) => {}
            }
        }
        if children.is_empty() {
            return;
        }
        let mut reduced = vec![0.0; n * n];
        for a in 0..n {
            let ga = g[a * n + i] / diag;
            if ga == 0.0 {
                reduced[a * n..(a + 1) * n].copy_from_slice(&g[a * n..(a + 1) * n]);
                continue;
            }
            let row_i = &g[i * n..(i + 1) * n];
            for (dst, (&gab, &gib)) in reduced[a * n..(a + 1) * n].iter_mut().zip(g[a * n..(a + 1) * n].iter().zip(row_i)) {
                *dst = gab - ga * gib;
            }
        }
        self.on_path[i] = true;
        for j in children {
            self.visit(j, weight, &reduced);
        }
        self.on_path[i] = false;
    }
}
