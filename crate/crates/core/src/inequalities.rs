//! Ratio checks for the nonlocal Gagliardo-Nirenberg-Sobolev and
//! Poincaré-Wirtinger inequalities, and the seeded test corpus.
//!
//! The constants in these inequalities are unknown; only finiteness and
//! scale stability of `lhs / rhs_raw` are meaningful.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::energy::short_range_energy;
use crate::error::{Error, Result};
use crate::fields::{cell_average, coarsen, lp_norm, GridDomain, GridFunction};
use crate::real::{norm, pairwise_sum};

/// `lhs ≤ C rhs_raw` evaluated on one field.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub lhs: f64,
    pub rhs_raw: f64,
    /// `lhs / rhs_raw`; 0 when both sides vanish
    pub ratio: f64,
    pub eps: f64,
    pub r: f64,
    pub p: f64,
    pub corpus_id: Option<usize>,
}

impl InequalityReport {
    fn new(lhs: f64, rhs_raw: f64, eps: f64, r: f64, p: f64) -> Result<Self> {
        let ratio = if rhs_raw > 0.0 {
            lhs / rhs_raw
        } else if lhs == 0.0 {
            0.0
        } else {
            return Err(Error::Inconsistent(format!("rhs = {rhs_raw} with lhs = {lhs}")));
        };
        Ok(InequalityReport { lhs, rhs_raw, ratio, eps, r, p, corpus_id: None })
    }
}

/// `p* = pd/(d - p)`.
pub fn sobolev_exponent(d: usize, p: f64) -> Result<f64> {
    if !(p > 1.0 && p < d as f64) {
        return Err(Error::ExponentRange { p, d });
    }
    Ok(p * d as f64 / (d as f64 - p))
}

/// `(∫|T_eps u|^{p*})^{p/p*}` against `G_eps^{r,p}(u, R^d)`. `u` must carry
/// the exterior value 0; the box is padded so that every interacting pair
/// is counted.
pub fn gns_check(u: &GridFunction<f64>, eps: f64, r: f64, p: f64) -> Result<InequalityReport> {
    let dom = u.domain();
    let pstar = sobolev_exponent(dom.d(), p)?;
    match u.exterior() {
        Some(e) if e.iter().all(|&v| v == 0.0) => {}
        _ => return Err(Error::InvalidParameter("gns_check needs exterior value 0".into())),
    }
    let pad = (r * eps / dom.h()).ceil() as usize + 1;
    let up = u.padded(pad)?;
    let (tu, _) = coarsen(&up, eps, r)?;
    let lhs = lp_norm(&tu, pstar).powf(p);
    let rhs = short_range_energy(&up, up.domain(), r, p, eps)?;
    InequalityReport::new(lhs, rhs, eps, r, p)
}

/// `∫_A |u - u_E|^p` against `G_eps^{r,p}(u, A)`.
pub fn pw_check(u: &GridFunction<f64>, a: &GridDomain<f64>, e: &[usize], eps: f64, r: f64, p: f64) -> Result<InequalityReport> {
    if !u.domain().same_grid(a) {
        return Err(Error::GridMismatch("pw_check domain".into()));
    }
    let ue = cell_average(u, e)?;
    let terms: Vec<f64> = a
        .active_indices()
        .into_iter()
        .map(|i| {
            let diff: Vec<f64> = u.at(i).iter().zip(&ue).map(|(x, y)| x - y).collect();
            norm(&diff).powf(p)
        })
        .collect();
    let lhs = a.cell_volume() * pairwise_sum(&terms);
    let rhs = short_range_energy(u, a, r, p, eps)?;
    InequalityReport::new(lhs, rhs, eps, r, p)
}

/// `pw_check` on the dilation `v(y) = u((y - x0)/λ)` over `λA + x0`, with
/// `rhs_raw = λ^p G_eps^{r,p}(v, λA + x0)`. Its ratio equals the ratio of
/// `pw_check(u, A, E, eps/λ, r, p)`.
pub fn pw_check_scaled(
    u: &GridFunction<f64>,
    a: &GridDomain<f64>,
    e: &[usize],
    eps: f64,
    r: f64,
    p: f64,
    lambda: f64,
    x0: &[f64],
) -> Result<InequalityReport> {
    if !(lambda > 0.0) || x0.len() != a.d() {
        return Err(Error::InvalidParameter("dilation needs λ > 0 and x0 in R^d".into()));
    }
    let dilate = |dom: &GridDomain<f64>| -> Result<GridDomain<f64>> {
        let origin: Vec<f64> = dom.origin().iter().zip(x0).map(|(o, s)| lambda * o + s).collect();
        let out = GridDomain::new(origin, lambda * dom.h(), dom.shape().to_vec())?;
        match dom.mask() {
            Some(m) => out.with_mask(m.to_vec()),
            None => Ok(out),
        }
    };
    let big_a = dilate(a)?;
    let v = GridFunction::from_values(dilate(u.domain())?, u.m(), u.values().to_vec())?;
    let rep = pw_check(&v, &big_a, e, eps, r, p)?;
    InequalityReport::new(rep.lhs, lambda.powf(p) * rep.rhs_raw, eps, r, p)
}

/// Shape of a corpus field. All fields vanish outside `[-0.8, 0.8]^d`.
#[derive(Debug, Clone, PartialEq)]
pub enum CorpusKind {
    /// multilinear interpolation of random values on an `n^d` node grid
    /// over `[-0.8, 0.8]^d`, zero on the boundary nodes
    Smooth { n: usize, nodes: Vec<f64> },
    Tent { center: Vec<f64>, width: f64, height: f64 },
    Indicator { center: Vec<f64>, radius: f64, height: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusField {
    pub id: usize,
    pub d: usize,
    pub kind: CorpusKind,
}

const CORPUS_HALF: f64 = 0.8;

impl CorpusField {
    pub fn eval(&self, x: &[f64]) -> f64 {
        if x.iter().any(|&v| v.abs() >= CORPUS_HALF) {
            return 0.0;
        }
        match &self.kind {
            CorpusKind::Smooth { n, nodes } => {
                let step = 2.0 * CORPUS_HALF / (*n - 1) as f64;
                let mut base = vec![0usize; self.d];
                let mut frac = vec![0.0; self.d];
                for a in 0..self.d {
                    let t = (x[a] + CORPUS_HALF) / step;
                    let b = (t.floor() as usize).min(n - 2);
                    base[a] = b;
                    frac[a] = t - b as f64;
                }
                let mut acc = 0.0;
                for corner in 0..(1usize << self.d) {
                    let mut w = 1.0;
                    let mut idx = 0;
                    for a in 0..self.d {
                        let bit = (corner >> a) & 1;
                        w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                        idx = idx * n + base[a] + bit;
                    }
                    acc += w * nodes[idx];
                }
                acc
            }
            CorpusKind::Tent { center, width, height } => {
                let dist: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                height * (1.0 - dist / width).max(0.0)
            }
            CorpusKind::Indicator { center, radius, height } => {
                let dist: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if dist < *radius {
                    *height
                } else {
                    0.0
                }
            }
        }
    }

    /// Cell-center samples on `dom`, exterior value 0.
    pub fn sample(&self, dom: &GridDomain<f64>) -> GridFunction<f64> {
        GridFunction::from_fn(dom.clone(), 1, |x| vec![self.eval(x)]).with_exterior(vec![0.0])
    }
}

/// `count` fields seeded from `seed`: ids `4j, 4j+1` smooth, `4j+2` tents,
/// `4j+3` indicators.
pub fn corpus(d: usize, seed: u64, count: usize) -> Vec<CorpusField> {
    (0..count)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(id as u64));
            let center: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let kind = match id % 4 {
                0 | 1 => {
                    let n = 5 + id % 3;
                    let total = n.pow(d as u32);
                    let mut nodes = vec![0.0; total];
                    for (j, v) in nodes.iter_mut().enumerate() {
                        let mut rest = j;
                        let mut interior = true;
                        for _ in 0..d {
                            let c = rest % n;
                            rest /= n;
                            interior &= c != 0 && c != n - 1;
                        }
                        let sample = rng.gen_range(-1.0..1.0);
                        if interior {
                            *v = sample;
                        }
                    }
                    CorpusKind::Smooth { n, nodes }
                }
                2 => CorpusKind::Tent { center, width: rng.gen_range(0.2..0.45), height: rng.gen_range(0.5..2.0) },
                _ => CorpusKind::Indicator { center, radius: rng.gen_range(0.15..0.4), height: rng.gen_range(0.5..2.0) },
            };
            CorpusField { id, d, kind }
        })
        .collect()
}

/// `gns_check` over a corpus sampled on `[-1, 1]^d` at step `h`. Reports
/// come back in corpus order.
pub fn gns_corpus(fields: &[CorpusField], eps: f64, r: f64, p: f64, h: f64) -> Result<Vec<InequalityReport>> {
    let d = fields.first().map_or(1, |f| f.d);
    let dom = GridDomain::centered_cube(d, 1.0, h)?;
    fields
        .par_iter()
        .map(|f| {
            let mut rep = gns_check(&f.sample(&dom), eps, r, p)?;
            rep.corpus_id = Some(f.id);
            Ok(rep)
        })
        .collect()
}

/// `pw_check` over a corpus on `A = B_2` (step `h`) with `E = B_1`; fields
/// are stretched to `x ↦ f(x/2)` so that their support fills `A`.
pub fn pw_corpus(fields: &[CorpusField], eps: f64, r: f64, p: f64, h: f64) -> Result<Vec<InequalityReport>> {
    let d = fields.first().map_or(1, |f| f.d);
    let a = GridDomain::ball(&vec![0.0; d], 2.0, h)?;
    let e: Vec<usize> = a.active_indices().into_iter().filter(|&i| norm(&a.center(i)) <= 1.0).collect();
    fields
        .par_iter()
        .map(|f| {
            let u = GridFunction::from_fn(a.clone(), 1, |x| {
                let y: Vec<f64> = x.iter().map(|v| v / 2.0).collect();
                vec![f.eval(&y)]
            });
            let mut rep = pw_check(&u, &a, &e, eps, r, p)?;
            rep.corpus_id = Some(f.id);
            Ok(rep)
        })
        .collect()
}

/// Largest ratio in a report set.
pub fn max_ratio(reports: &[InequalityReport]) -> f64 {
    reports.iter().map(|r| r.ratio).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tent(dom: &GridDomain<f64>) -> GridFunction<f64> {
        GridFunction::from_fn(dom.clone(), 1, |x| vec![(1.0 - norm(x) / 0.5).max(0.0)]).with_exterior(vec![0.0])
    }

    #[test]
    fn zero_field_is_trivial() {
        let dom = GridDomain::centered_cube(2, 1.0, 0.05).unwrap();
        let u = GridFunction::zeros(dom, 1).with_exterior(vec![0.0]);
        let rep = gns_check(&u, 0.2, 1.0, 1.5).unwrap();
        assert_eq!((rep.lhs, rep.rhs_raw, rep.ratio), (0.0, 0.0, 0.0));
    }

    #[test]
    fn gns_ratio_is_scale_invariant() {
        let dom = GridDomain::centered_cube(2, 1.0, 0.025).unwrap();
        let u = tent(&dom);
        let a = gns_check(&u, 0.2, 1.0, 1.5).unwrap();
        let b = gns_check(&u.scaled(3.0).with_exterior(vec![0.0]), 0.2, 1.0, 1.5).unwrap();
        assert_relative_eq!(a.ratio, b.ratio, max_relative = 1e-12);
        assert!(a.ratio > 0.0 && a.ratio.is_finite());
    }

    #[test]
    fn gns_tent_stable_in_eps() {
        let ratios: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&eps| {
                let dom = GridDomain::centered_cube(2, 1.0, eps / 8.0).unwrap();
                gns_check(&tent(&dom), eps, 1.0, 1.5).unwrap().ratio
            })
            .collect();
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(hi / lo < 2.0, "{ratios:?}");
    }

    #[test]
    fn pw_constant_and_dilation() {
        let a = GridDomain::ball(&[0.0, 0.0], 2.0, 0.1).unwrap();
        let e: Vec<usize> = a.active_indices().into_iter().filter(|&i| norm(&a.center(i)) <= 1.0).collect();
        let c = GridFunction::constant(a.clone(), &[2.5]);
        assert_eq!(pw_check(&c, &a, &e, 0.4, 1.0, 1.5).unwrap().lhs, 0.0);

        let u = GridFunction::from_fn(a.clone(), 1, |x| vec![(x[0] * 1.3).sin() + x[1] * x[1]]);
        let base = pw_check(&u, &a, &e, 0.2, 1.0, 1.5).unwrap();
        let big = pw_check_scaled(&u, &a, &e, 0.4, 1.0, 1.5, 2.0, &[0.3, -1.1]).unwrap();
        assert_relative_eq!(base.ratio, big.ratio, max_relative = 1e-6);
        assert!(pw_check(&u, &a, &[], 0.2, 1.0, 1.5).is_err());
    }

    #[test]
    fn corpus_is_seeded() {
        let a = corpus(2, 7, 32);
        let b = corpus(2, 7, 32);
        assert_eq!(a, b);
        assert_ne!(a, corpus(2, 8, 32));
        assert_eq!(a[5].eval(&[0.9, 0.0]), 0.0);
    }
}
