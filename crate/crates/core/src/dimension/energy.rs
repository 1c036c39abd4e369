//! Riesz energies `I_s(μ) = ∫∫ |x - y|^{-s} dμ(x) dμ(y)` of grid measures.
//!
//! For a measure with constant density `ρ` on a union of boxes `ε∏[a_i, a_i+1]`,
//! `I_s = ρ² ε^{6-s} Σ_{a,b} K_s(a - b)` where `K_s(d) = ∫∫_{[0,1]³×[0,1]³}
//! |d + u - v|^{-s} du dv`. Writing `t = u - v`, `K_s(d) = ∫_{[-1,1]³} ∏(1-|t_i|)
//! |d + t|^{-s} dt`; on each of the eight unit orthant cubes the weight is a
//! polynomial and the singular point `-d`, if present, is a corner. In
//! coordinates `u_i = |t_i + d_i|` from that corner the weight factors into
//! `u_i` or `1 - u_i` per axis, so a singular cube reduces to the moments
//! `M_j = ∫_{[0,1]³} u_1⋯u_j |u|^{-s} du`. Each moment obeys the scaling
//! identity `M_j = R_j + 2^{s-3-j} M_j`, with `R_j` the integral over
//! `[0,1]³ ∖ [0,1/2]³`, which is free of the singularity.

use std::sync::{Arc, Mutex, OnceLock};

use rustc_hash::FxHashMap;

use super::GridMeasure;
use crate::error::{Error, Result};
use crate::lattice::Point3;

const GL_NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
const GL_WEIGHTS: [f64; 4] = [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];

const MAX_DEPTH: u32 = 8;
const REL_TOL: f64 = 1e-11;

fn check_exponent(s: f64) -> Result<()> {
    if !s.is_finite() || s < 0.0 {
        return Err(Error::Config(format!("energy exponent {s} must be non-negative")));
    }
    if s >= 3.0 {
        return Err(Error::DivergentKernel(s));
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Weight {
    /// `∏ (1 - |t_i|)`.
    Triangle,
    /// `t_1 ⋯ t_j`.
    Monomial(usize),
}

struct Integrand {
    s: f64,
    /// Singular point `-d`.
    c: [f64; 3],
    weight: Weight,
}

impl Integrand {
    fn eval(&self, t: [f64; 3]) -> f64 {
        let w: f64 = match self.weight {
            Weight::Triangle => t.iter().map(|x| 1.0 - x.abs()).product(),
            Weight::Monomial(j) => t[..j].iter().product(),
        };
        let r2: f64 = (0..3).map(|a| (t[a] - self.c[a]).powi(2)).sum();
        w * r2.powf(-self.s / 2.0)
    }

    fn gauss(&self, lo: [f64; 3], h: f64) -> f64 {
        let half = h / 2.0;
        let mut sum = 0.0;
        for (i, wi) in GL_NODES.iter().zip(GL_WEIGHTS) {
            for (j, wj) in GL_NODES.iter().zip(GL_WEIGHTS) {
                for (k, wk) in GL_NODES.iter().zip(GL_WEIGHTS) {
                    let t = [lo[0] + half * (1.0 + i), lo[1] + half * (1.0 + j), lo[2] + half * (1.0 + k)];
                    sum += wi * wj * wk * self.eval(t);
                }
            }
        }
        sum * half * half * half
    }

    fn children(lo: [f64; 3], h: f64) -> impl Iterator<Item = [f64; 3]> {
        let g = h / 2.0;
        (0..8).map(move |b| [lo[0] + g * (b & 1) as f64, lo[1] + g * ((b >> 1) & 1) as f64, lo[2] + g * ((b >> 2) & 1) as f64])
    }

    /// Adaptive tensor Gauss rule on a cube that avoids the singular point.
    fn regular(&self, lo: [f64; 3], h: f64, coarse: f64, depth: u32) -> f64 {
        let parts: Vec<f64> = Self::children(lo, h).map(|l| self.gauss(l, h / 2.0)).collect();
        let fine: f64 = parts.iter().sum();
        if depth >= MAX_DEPTH || (fine - coarse).abs() <= REL_TOL * fine.abs() {
            return fine;
        }
        Self::children(lo, h).zip(parts).map(|(l, p)| self.regular(l, h / 2.0, p, depth + 1)).sum()
    }

    fn integrate(&self, lo: [f64; 3], h: f64) -> f64 {
        self.regular(lo, h, self.gauss(lo, h), 0)
    }
}

fn is_corner(lo: [f64; 3], h: f64, c: [f64; 3]) -> bool {
    (0..3).all(|a| c[a] == lo[a] || c[a] == lo[a] + h)
}

/// `M_j = ∫_{[0,1]³} u_1⋯u_j |u|^{-s} du` for `j = 0..=3`.
fn corner_moments(s: f64) -> [f64; 4] {
    std::array::from_fn(|j| {
        let f = Integrand { s, c: [0.0; 3], weight: Weight::Monomial(j) };
        let rest: f64 = Integrand::children([0.0; 3], 1.0).skip(1).map(|l| f.integrate(l, 0.5)).sum();
        rest / (1.0 - 2f64.powf(s - 3.0 - j as f64))
    })
}

/// Triangle-weighted integral over a unit orthant cube whose
/// corner `c` is the singular point: per axis the weight is `u` when `c_i = ±1`
/// and `1 - u` when `c_i = 0`; expanding the product gives signed moments.
fn singular_orthant(c: [f64; 3], moments: &[f64; 4]) -> f64 {
    let zero_axes = c.iter().filter(|&&x| x == 0.0).count();
    let fixed = 3 - zero_axes;
    // choose which of the `1 - u` factors contribute `-u`
    (0..=zero_axes)
        .map(|k| binomial(zero_axes, k) * if k % 2 == 0 { 1.0 } else { -1.0 } * moments[fixed + k])
        .sum()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `K_s(d)` for unit boxes at integer offset `d`.
pub fn box_pair_kernel(d: Point3, s: f64) -> Result<f64> {
    check_exponent(s)?;
    if s == 0.0 {
        return Ok(1.0);
    }
    Ok(pair_kernel_with(d, s, &corner_moments(s)))
}

fn pair_kernel_with(d: Point3, s: f64, moments: &[f64; 4]) -> f64 {
    let c = d.coords().map(|x| -(x as f64));
    let f = Integrand { s, c, weight: Weight::Triangle };
    Integrand::children([-1.0; 3], 2.0)
        .map(|l| if is_corner(l, 1.0, c) { singular_orthant(c, moments) } else { f.integrate(l, 1.0) })
        .sum()
}

/// `K_s(0) = ∫∫_{[0,1]³×[0,1]³} |u - v|^{-s}`.
pub fn self_kernel(s: f64) -> Result<f64> {
    box_pair_kernel(Point3::ORIGIN, s)
}

/// `K_s` on all sorted offsets `e ≥ a ≥ b ≥ c ≥ 0` up to an extent.
struct KernelTable {
    extent: usize,
    values: Vec<f64>,
}

impl KernelTable {
    fn build(s: f64, extent: usize) -> Self {
        let moments = corner_moments(s);
        let e = extent + 1;
        let mut values = vec![0.0; e * e * e];
        for a in 0..e {
            for b in 0..=a {
                for c in 0..=b {
                    values[(a * e + b) * e + c] = pair_kernel_with(Point3::new(a as i64, b as i64, c as i64), s, &moments);
                }
            }
        }
        KernelTable { extent, values }
    }

    #[inline]
    fn get(&self, d: [i64; 3]) -> f64 {
        let mut v = d.map(|x| x.unsigned_abs() as usize);
        v.sort_unstable_by(|x, y| y.cmp(x));
        let e = self.extent + 1;
        self.values[(v[0] * e + v[1]) * e + v[2]]
    }
}

fn kernel_table(s: f64, extent: usize) -> Arc<KernelTable> {
    static TABLES: OnceLock<Mutex<FxHashMap<u64, Arc<KernelTable>>>> = OnceLock::new();
    let mut tables = TABLES.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    match tables.get(&s.to_bits()) {
        Some(t) if t.extent >= extent => t.clone(),
        _ => {
            let t = Arc::new(KernelTable::build(s, extent));
            tables.insert(s.to_bits(), t.clone());
            t
        }
    }
}

/// `I_s(μ)`. `s = 0` gives the squared total mass; `s ≥ 3` diverges.
pub fn frostman_energy(mu: &GridMeasure, s: f64) -> Result<f64> {
    check_exponent(s)?;
    if s == 0.0 {
        return Ok(mu.total_mass().powi(2));
    }
    if mu.boxes.is_empty() {
        return Ok(0.0);
    }
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for b in &mu.boxes {
        for a in 0..3 {
            lo[a] = lo[a].min(b[a]);
            hi[a] = hi[a].max(b[a]);
        }
    }
    let extent = (0..3).map(|a| (hi[a] - lo[a]) as usize).max().unwrap_or(0);
    let table = kernel_table(s, extent);
    let mut sum = 0.0;
    for (i, x) in mu.boxes.iter().enumerate() {
        sum += table.get([0; 3]);
        for y in &mu.boxes[i + 1..] {
            sum += 2.0 * table.get([x[0] - y[0], x[1] - y[1], x[2] - y[2]]);
        }
    }
    let rho = mu.density;
    Ok(rho * rho * mu.epsilon.powf(6.0 - s) * sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_domain() {
        assert!(matches!(self_kernel(3.0), Err(Error::DivergentKernel(_))));
        assert!(matches!(self_kernel(-0.5), Err(Error::Config(_))));
        assert_eq!(box_pair_kernel(Point3::new(2, 1, 0), 0.0).unwrap(), 1.0);
    }

    #[test]
    fn coulomb_self_energy_of_unit_cube() {
        // ∫∫ |u - v|^{-1} over the unit cube
        let k = self_kernel(1.0).unwrap();
        assert!((k - 1.882_312_644).abs() < 1e-6, "{k}");
    }

    #[test]
    fn corner_constant_closed_form_at_two() {
        // in polar form ∫ r^{-2} dV = ∫ R(ω) dΩ, with R the radial extent of the cube
        let c = corner_moments(2.0)[0];
        let mut sum = 0.0;
        let k = 400;
        for i in 0..k {
            for j in 0..k {
                // face x = 1 seen from the corner: R = r, dΩ = du dv / r³
                let u = (i as f64 + 0.5) / k as f64;
                let v = (j as f64 + 0.5) / k as f64;
                let r2 = 1.0 + u * u + v * v;
                sum += 1.0 / r2;
            }
        }
        let expected = 3.0 * sum / (k * k) as f64;
        assert!((c - expected).abs() < 1e-4, "{c} vs {expected}");
    }

    #[test]
    fn far_boxes_look_like_points() {
        // the second moment tensor of a cube is isotropic, so the Newtonian
        // kernel has no quadrupole correction
        let k = box_pair_kernel(Point3::new(10, 0, 0), 1.0).unwrap();
        assert!((k - 0.1).abs() < 1e-6, "{k}");
        let k = box_pair_kernel(Point3::new(6, 3, 2), 1.5).unwrap();
        assert!((k / 7f64.powf(-1.5) - 1.0).abs() < 0.01);
    }

    #[test]
    fn kernel_symmetry_and_monotonicity() {
        let s = 1.4;
        let a = box_pair_kernel(Point3::new(1, 0, 0), s).unwrap();
        let b = box_pair_kernel(Point3::new(0, 0, -1), s).unwrap();
        assert!((a - b).abs() < 1e-12);
        let c = box_pair_kernel(Point3::new(1, 1, 0), s).unwrap();
        let d = box_pair_kernel(Point3::new(2, 0, 0), s).unwrap();
        let k0 = self_kernel(s).unwrap();
        assert!(k0 > a && a > c && c > d);
    }

    #[test]
    fn energy_of_single_box_and_mass_identity() {
        let mu = GridMeasure::with_density(vec![Point3::new(3, 0, 0)], 0.125, 2.0);
        let s = 1.2;
        let e = frostman_energy(&mu, s).unwrap();
        let expected = 4.0 * 0.125f64.powf(6.0 - s) * self_kernel(s).unwrap();
        assert!((e - expected).abs() < 1e-12 * expected);
        let m = GridMeasure::with_density(vec![Point3::new(3, 0, 0), Point3::new(4, 1, 0)], 0.125, 2.0);
        assert_eq!(frostman_energy(&m, 0.0).unwrap(), m.total_mass().powi(2));
        // energy grows with s for a measure supported well inside the unit ball
        assert!(frostman_energy(&m, 1.5).unwrap() > frostman_energy(&m, 0.5).unwrap());
    }
}
