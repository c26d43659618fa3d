//! Homogenized densities: the asymptotic cube problem, the convex-case
//! integral formula and the growth constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{EnergyParams, NonlocalObjective};
use crate::error::{Error, Result};
use crate::fields::{GridDomain, GridFunction};
use crate::kernels::{KernelSpec, ZPart};
use crate::minimize::{minimize_energy, ConstraintMask, MatrixDensity, SolveOptions, SolveReport};
use crate::quad;
use crate::real::norm;

/// A quadrature value with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// `∫_0^∞ w(r) r^{q + d - 1} dr` for the radial profile of a separable kernel.
fn radial_moment(k: &KernelSpec<f64>, q: f64, rmax: f64) -> f64 {
    let d = k.d;
    let mut breaks = Vec::new();
    if let Some(r) = k.support().radius() {
        breaks.push(r);
    }
    if let Some(t) = k.truncation() {
        breaks.push(t);
    }
    quad::radial_integral(
        d,
        |r| {
            let mut e1 = vec![0.0; d];
            e1[0] = r;
            k.profile(&e1).unwrap_or(0.0) * r.powf(q)
        },
        &breaks,
        rmax,
    ) / quad::sphere_area(d)
}

fn integration_radius(k: &KernelSpec<f64>) -> f64 {
    k.support().radius().unwrap_or_else(|| k.effective_radius(crate::energy::TAIL_TOL))
}

/// `∫_{S^{d-1}} |θ_1|^p dθ`.
fn sphere_moment(d: usize, p: f64) -> f64 {
    (p + d as f64) * crate::kernels::abs_first_coordinate_moment(d, p)
}

/// Spherical quadrature nodes with weights summing to `|S^{d-1}|`.
fn sphere_nodes(d: usize, level: usize) -> Vec<(Vec<f64>, f64)> {
    match d {
        2 => {
            let n = 180 * level;
            let w = 2.0 * std::f64::consts::PI / n as f64;
            (0..n)
                .map(|i| {
                    let t = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
                    (vec![t.cos(), t.sin()], w)
                })
                .collect()
        }
        3 => {
            // midpoint in (cos θ, φ): area element dcosθ dφ
            let (nc, nf) = (60 * level, 120 * level);
            let w = 4.0 * std::f64::consts::PI / (nc * nf) as f64;
            let mut out = Vec::with_capacity(nc * nf);
            for i in 0..nc {
                let c = -1.0 + 2.0 * (i as f64 + 0.5) / nc as f64;
                let s = (1.0 - c * c).sqrt();
                for j in 0..nf {
                    let f = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / nf as f64;
                    out.push((vec![s * f.cos(), s * f.sin(), c], w));
                }
            }
            out
        }
        _ => {
            let n = 4000 * level;
            let area = quad::sphere_area(d);
            quad::unit_directions(d, n).into_iter().map(|v| (v, area / n as f64)).collect()
        }
    }
}

/// `f_hom(S) = ∫ f(ξ, Sξ) dξ` for convex kernels, as a reusable density.
#[derive(Debug, Clone)]
pub enum HomDensity {
    /// `κ |S|^p` (Frobenius norm)
    Power { kappa: f64, p: f64 },
    /// `∫ w(|ξ|) g(Sξ) dξ` by radial moment times spherical quadrature
    Directional { p: f64, m: usize, d: usize, zpart: ZPart<f64>, nodes: Vec<(Vec<f64>, f64)> },
}

impl HomDensity {
    /// Builds the density of a convex separable kernel. `level` refines the
    /// spherical quadrature where one is needed.
    pub fn new(k: &KernelSpec<f64>, level: usize) -> Result<Self> {
        if !k.convex_in_z {
            return Err(Error::NonConvexKernel);
        }
        let Some(zp) = k.zpart() else {
            return Err(Error::MissingTable("custom kernels have no separable density".into()));
        };
        let (d, m, p) = (k.d, k.m, k.p);
        let rm = radial_moment(k, p, integration_radius(k));
        match &zp {
            ZPart::Norm if m == 1 => Ok(HomDensity::Power { kappa: rm * sphere_moment(d, p), p }),
            ZPart::Norm if p == 2.0 => Ok(HomDensity::Power { kappa: rm * quad::sphere_area(d) / d as f64, p }),
            ZPart::Aniso { a, c_dir, c_iso } if m == 1 => {
                let g = c_dir * a[0].abs().powf(p) + c_iso;
                Ok(HomDensity::Power { kappa: g * rm * sphere_moment(d, p), p })
            }
            _ => {
                let nodes = sphere_nodes(d, level.max(1)).into_iter().map(|(v, w)| (v, w * rm)).collect();
                Ok(HomDensity::Directional { p, m, d, zpart: zp, nodes })
            }
        }
    }

    pub fn eval(&self, s: &[f64]) -> f64 {
        self.value(s, 0.0)
    }
}

impl MatrixDensity<f64> for HomDensity {
    fn p(&self) -> f64 {
        match self {
            HomDensity::Power { p, .. } | HomDensity::Directional { p, .. } => *p,
        }
    }

    fn value(&self, s: &[f64], mu: f64) -> f64 {
        match self {
            HomDensity::Power { kappa, p } => kappa * ZPart::Norm.value(s, *p, mu),
            HomDensity::Directional { p, m, d, zpart, nodes } => {
                let mut z = vec![0.0; *m];
                let mut acc = 0.0;
                for (theta, w) in nodes {
                    for r in 0..*m {
                        z[r] = (0..*d).map(|c| s[r * d + c] * theta[c]).sum();
                    }
                    acc += w * zpart.value(&z, *p, mu);
                }
                acc
            }
        }
    }

    fn grad(&self, s: &[f64], mu: f64, out: &mut [f64]) {
        match self {
            HomDensity::Power { kappa, p } => {
                ZPart::Norm.grad(s, *p, mu, out);
                out.iter_mut().for_each(|o| *o *= kappa);
            }
            HomDensity::Directional { p, m, d, zpart, nodes } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let mut z = vec![0.0; *m];
                let mut g = vec![0.0; *m];
                for (theta, w) in nodes {
                    for r in 0..*m {
                        z[r] = (0..*d).map(|c| s[r * d + c] * theta[c]).sum();
                    }
                    zpart.grad(&z, *p, mu, &mut g);
                    for r in 0..*m {
                        for c in 0..*d {
                            out[r * d + c] += w * g[r] * theta[c];
                        }
                    }
                }
            }
        }
    }
}

/// Tensor-product midpoint rule for `∫ f(ξ, Sξ) dξ` over `[-R, R]^d`.
fn midpoint_formula(k: &KernelSpec<f64>, s: &[f64], n: usize) -> f64 {
    let d = k.d;
    let m = k.m;
    let r = integration_radius(k);
    let step = 2.0 * r / n as f64;
    let total = n.pow(d as u32);
    let mut xi = vec![0.0; d];
    let mut z = vec![0.0; m];
    let mut acc = 0.0;
    for idx in 0..total {
        let mut rem = idx;
        for x in xi.iter_mut() {
            *x = -r + step * ((rem % n) as f64 + 0.5);
            rem /= n;
        }
        for row in 0..m {
            z[row] = (0..d).map(|c| s[row * d + c] * xi[c]).sum();
        }
        acc += k.eval(&xi, &z);
    }
    acc * step.powi(d as i32)
}

/// `∫ f(ξ, Sξ) dξ` with an error estimate from halving the resolution.
/// `S` is `m × d`, row-major.
pub fn fhom_convex_formula(k: &KernelSpec<f64>, s: &[f64]) -> Result<Estimate> {
    if !k.convex_in_z {
        return Err(Error::NonConvexKernel);
    }
    if s.len() != k.m * k.d {
        return Err(Error::InvalidParameter(format!("S must have {} entries", k.m * k.d)));
    }
    if k.zpart().is_some() {
        let fine = HomDensity::new(k, 2)?.eval(s);
        let coarse = HomDensity::new(k, 1)?.eval(s);
        return Ok(Estimate { value: fine, error: (fine - coarse).abs() });
    }
    let n = if k.d <= 2 { 400 } else { 48 };
    let fine = midpoint_formula(k, s, 2 * n);
    let coarse = midpoint_formula(k, s, n);
    Ok(Estimate { value: fine, error: (fine - coarse).abs() })
}

/// Growth constants `m_0 <= f_hom(S)/|S|^p <= M_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthBounds {
    pub m0: f64,
    pub big_m0: f64,
}

/// `M_0 = ∫ M(ξ)|ξ|^p dξ`; `m_0` = minimum of the convex formula over sampled
/// unit `S` (or of `∫ m(ξ)|Sξ|^p` for non-convex kernels).
pub fn fhom_bounds(k: &KernelSpec<f64>, samples: usize, seed: u64) -> Result<GrowthBounds> {
    let (d, m) = (k.d, k.m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    for e in 0..m * d {
        let mut s = vec![0.0; m * d];
        s[e] = 1.0;
        candidates.push(s);
    }
    for _ in 0..samples {
        let s: Vec<f64> = (0..m * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = norm(&s);
        if n > 1e-6 {
            candidates.push(s.iter().map(|v| v / n).collect());
        }
    }
    let mut m0 = f64::INFINITY;
    for s in &candidates {
        let v = if k.convex_in_z {
            fhom_convex_formula(k, s)?.value
        } else {
            envelope_lower(k, s)
        };
        m0 = m0.min(v);
    }
    Ok(GrowthBounds { m0, big_m0: k.upper_moment() })
}

/// `∫ m(ξ)|Sξ|^p dξ` by midpoint quadrature.
fn envelope_lower(k: &KernelSpec<f64>, s: &[f64]) -> f64 {
    let d = k.d;
    let r = integration_radius(k);
    let n: usize = if d <= 2 { 400 } else { 60 };
    let step = 2.0 * r / n as f64;
    let mut xi = vec![0.0; d];
    let mut z = vec![0.0; k.m];
    let mut acc = 0.0;
    for idx in 0..n.pow(d as u32) {
        let mut rem = idx;
        for x in xi.iter_mut() {
            *x = -r + step * ((rem % n) as f64 + 0.5);
            rem /= n;
        }
        for row in 0..k.m {
            z[row] = (0..d).map(|c| s[row * d + c] * xi[c]).sum();
        }
        acc += k.envelope_min(&xi) * norm(&z).powf(k.p);
    }
    acc * step.powi(d as i32)
}

/// One cube problem at `eps = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellValue {
    pub r: f64,
    pub h: f64,
    /// minimized energy divided by `R^d`
    pub value: f64,
    pub report: SolveReport<f64>,
}

/// `(1/R^d) min F_1(u, Q_R)` over fields equal to `Sx` on cells within
/// distance 1 of `∂Q_R`, `Q_R = [-R/2, R/2]^d`. Only pairs inside `Q_R` count.
pub fn fhom_cell(k: &KernelSpec<f64>, s: &[f64], r: f64, h: f64, opts: &SolveOptions<f64>) -> Result<CellValue> {
    let (d, m) = (k.d, k.m);
    if s.len() != m * d {
        return Err(Error::InvalidParameter(format!("S must have {} entries", m * d)));
    }
    if r < 4.0 {
        return Err(Error::InvalidParameter(format!("cube size R = {r} must be at least 4")));
    }
    let dom = GridDomain::centered_cube(d, r / 2.0, h)?;
    let params = EnergyParams::new(k, 1.0, None, h)?;
    let affine = |x: &[f64]| -> Vec<f64> { (0..m).map(|row| (0..d).map(|c| s[row * d + c] * x[c]).sum()).collect() };
    let half = r / 2.0;
    let constraints = ConstraintMask::from_rule(&dom, m, |x| {
        let dist = x.iter().map(|&v| half - v.abs()).fold(f64::INFINITY, f64::min);
        (dist < 1.0).then(|| affine(x))
    });
    let init = GridFunction::from_fn(dom.clone(), m, affine);
    let obj = NonlocalObjective::new(&dom, k, &params, m)?;
    let (_, report) = minimize_energy(&obj, &constraints, &init, opts)?;
    Ok(CellValue { r, h, value: report.objective / r.powi(d as i32), report })
}

/// Cube values along an R-schedule, with the `a + b/R` extrapolation.
#[derive(Debug, Clone, PartialEq)]
pub struct CellProblemResult {
    pub s: Vec<f64>,
    pub values: Vec<CellValue>,
    pub extrapolated: f64,
    pub convex_formula_value: Option<Estimate>,
}

pub fn fhom_cell_schedule(
    k: &KernelSpec<f64>,
    s: &[f64],
    rs: &[f64],
    h: f64,
    opts: &SolveOptions<f64>,
) -> Result<CellProblemResult> {
    let values: Vec<CellValue> = rs.iter().map(|&r| fhom_cell(k, s, r, h, opts)).collect::<Result<_>>()?;
    let x: Vec<f64> = rs.iter().map(|r| 1.0 / r).collect();
    let y: Vec<f64> = values.iter().map(|v| v.value).collect();
    let (a, _) = quad::linear_fit(&x, &y);
    let convex_formula_value = if k.convex_in_z { Some(fhom_convex_formula(k, s)?) } else { None };
    Ok(CellProblemResult { s: s.to_vec(), values, extrapolated: a.max(0.0), convex_formula_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn isotropic_indicator_formula() {
        let k = KernelSpec::indicator_ball(3, 1, 2.0, 1.0, 1.0).unwrap();
        let v = fhom_convex_formula(&k, &[1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(v.value, 4.0 * PI / 15.0, max_relative = 1e-6);
        assert_eq!(fhom_convex_formula(&k, &[0.0; 3]).unwrap().value, 0.0);
        let v2 = fhom_convex_formula(&k, &[2.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(v2.value, 4.0 * v.value, max_relative = 1e-12);
    }

    #[test]
    fn normalized_kernel_has_unit_density() {
        let k = KernelSpec::normalized_isotropic(3, 1, 2.0, 1.0).unwrap();
        let v = fhom_convex_formula(&k, &[0.0, 0.6, 0.8]).unwrap();
        assert_relative_eq!(v.value, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn directional_density_matches_closed_form() {
        // m = 2, p = 1.5: quadrature route versus the midpoint rule
        let k = KernelSpec::indicator_ball(2, 2, 1.5, 1.0, 1.0).unwrap();
        let s = [1.0, 0.3, -0.2, 0.5];
        let dens = HomDensity::new(&k, 2).unwrap();
        let direct = midpoint_formula(&k, &s, 1200);
        assert_relative_eq!(dens.eval(&s), direct, max_relative = 2e-3);
        let mut g = [0.0; 4];
        dens.grad(&s, 0.0, &mut g);
        for e in 0..4 {
            let mut sp = s;
            let mut sm = s;
            sp[e] += 1e-6;
            sm[e] -= 1e-6;
            let fd = (dens.eval(&sp) - dens.eval(&sm)) / 2e-6;
            assert_relative_eq!(g[e], fd, max_relative = 1e-5, epsilon = 1e-8);
        }
    }

    #[test]
    fn bounds_for_indicator() {
        let k = KernelSpec::indicator_ball(3, 1, 2.0, 1.0, 1.0).unwrap();
        let b = fhom_bounds(&k, 16, 1).unwrap();
        assert_relative_eq!(b.big_m0, 4.0 * PI / 5.0, max_relative = 1e-6);
        assert_relative_eq!(b.m0, 4.0 * PI / 15.0, max_relative = 1e-6);
    }

    #[test]
    fn zero_datum_cell_problem() {
        let k = KernelSpec::indicator_ball(2, 1, 1.5, 1.0, 1.0).unwrap();
        let v = fhom_cell(&k, &[0.0, 0.0], 4.0, 0.25, &SolveOptions::default()).unwrap();
        assert_eq!(v.value, 0.0);
    }
}
