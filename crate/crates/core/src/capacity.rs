//! Classical p-capacity oracles and capacitary densities.
//!
//! Local problems minimize `Σ h^d W(∇_h v)` with `v = 0` on `B_1` cells and
//! `v = z` outside `B_R`. Nonlocal problems minimize `F_eps^T(v, B_R)` with
//! `v = 0` on `B_1` and `v = z` on the inner layer of width `eps T` at `∂B_R`.

use crate::energy::{EnergyParams, NonlocalObjective};
use crate::error::{Error, Result};
use crate::fields::{GridDomain, GridFunction};
use crate::kernels::KernelSpec;
use crate::minimize::{
    minimize_energy, minimize_local_dirichlet, ConstraintMask, MatrixDensity, PowerDensity, SolveOptions,
    SolveReport,
};
use crate::quad;
use crate::real::norm;

fn check_exponent(d: usize, p: f64) -> Result<()> {
    if !(p > 1.0 && p < d as f64) {
        return Err(Error::ExponentRange { p, d });
    }
    Ok(())
}

/// `(d - p)/(p - 1)`, the decay exponent of the radial capacitary potential.
pub fn tail_exponent(d: usize, p: f64) -> f64 {
    (d as f64 - p) / (p - 1.0)
}

/// `cap_p(B_1, B_R)`; `R = ∞` gives `cap_p(B_1)`.
pub fn pcap_annulus_closed_form(d: usize, p: f64, r: f64) -> Result<f64> {
    check_exponent(d, p)?;
    if !(r > 1.0) {
        return Err(Error::InvalidParameter(format!("outer radius R = {r} must exceed 1")));
    }
    let a = tail_exponent(d, p);
    let base = quad::sphere_area(d) * a.powf(p - 1.0);
    if r.is_infinite() {
        return Ok(base);
    }
    Ok(base * (1.0 - r.powf(-a)).powf(1.0 - p))
}

/// Radial capacitary potential of `(B_1, B_R)`: 1 on `B_1`, 0 outside `B_R`.
pub fn radial_profile(d: usize, p: f64, r_out: f64, rho: f64) -> f64 {
    if rho <= 1.0 {
        return 1.0;
    }
    if rho >= r_out {
        return 0.0;
    }
    let a = tail_exponent(d, p);
    if r_out.is_infinite() {
        return rho.powf(-a);
    }
    (rho.powf(-a) - r_out.powf(-a)) / (1.0 - r_out.powf(-a))
}

/// Box `[-(R + 2h), R + 2h]^d` rounded out to whole cells.
fn annulus_box(d: usize, r: f64, h: f64) -> Result<GridDomain<f64>> {
    let n = ((r + 2.0 * h) / h).ceil();
    GridDomain::centered_cube(d, n * h, h)
}

/// Constraints `v = 0` on `|x| <= 1` and `v = z` on `|x| > R`.
fn local_constraints(dom: &GridDomain<f64>, r: f64, z: &[f64]) -> ConstraintMask<f64> {
    ConstraintMask::from_rule(dom, z.len(), |x| {
        let n = norm(x);
        if n <= 1.0 {
            Some(vec![0.0; z.len()])
        } else if n > r {
            Some(z.to_vec())
        } else {
            None
        }
    })
}

/// `z (1 - ψ(|x|))`, `ψ` the radial potential of `(B_1, B_R)`.
fn profile_field(dom: &GridDomain<f64>, d: usize, p: f64, r: f64, z: &[f64]) -> GridFunction<f64> {
    GridFunction::from_fn(dom.clone(), z.len(), |x| {
        let t = 1.0 - radial_profile(d, p, r, norm(x));
        z.iter().map(|&v| v * t).collect()
    })
}

/// Numerical `cap_p(B_1, B_R)` on a grid with step `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityValue {
    pub value: f64,
    pub h: f64,
    pub cells: usize,
    pub report: SolveReport<f64>,
}

pub fn pcap_numeric(d: usize, p: f64, r: f64, h: f64, opts: &SolveOptions<f64>) -> Result<CapacityValue> {
    check_exponent(d, p)?;
    let dom = annulus_box(d, r, h)?;
    let dens = PowerDensity { kappa: 1.0, p };
    // u = 1 on B_1 and 0 outside B_R is the z = -1 problem shifted by 1
    let c = ConstraintMask::from_rule(&dom, 1, |x| {
        let n = norm(x);
        if n <= 1.0 {
            Some(vec![1.0])
        } else if n > r {
            Some(vec![0.0])
        } else {
            None
        }
    });
    let init = GridFunction::from_fn(dom.clone(), 1, |x| vec![radial_profile(d, p, r, norm(x))]);
    let (_, report) = minimize_local_dirichlet(&dens, &dom, &c, &init, opts)?;
    Ok(CapacityValue { value: report.objective, h, cells: dom.ncells(), report })
}

/// Discrete energy of the exact radial potential (no optimization).
pub fn profile_energy(d: usize, p: f64, r: f64, h: f64) -> Result<f64> {
    use crate::minimize::{LocalObjective, Objective};
    check_exponent(d, p)?;
    let dom = annulus_box(d, r, h)?;
    let dens = PowerDensity { kappa: 1.0, p };
    let u = GridFunction::from_fn(dom.clone(), 1, |x| vec![radial_profile(d, p, r, norm(x))]);
    let obj = LocalObjective::new(&dom, &dens, 1);
    Ok(obj.value(u.values(), 0.0))
}

/// One capacitary density evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacitaryPoint {
    pub z: Vec<f64>,
    pub epsilon: Option<f64>,
    pub t: Option<f64>,
    pub r: f64,
    pub h: f64,
    pub value: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl CapacitaryPoint {
    fn zero(z: &[f64], epsilon: Option<f64>, t: Option<f64>, r: f64, h: f64) -> Self {
        CapacitaryPoint { z: z.to_vec(), epsilon, t, r, h, value: 0.0, grad_norm: 0.0, converged: true, iterations: 0 }
    }

    fn from_report(z: &[f64], epsilon: Option<f64>, t: Option<f64>, r: f64, h: f64, rep: &SolveReport<f64>) -> Self {
        CapacitaryPoint {
            z: z.to_vec(),
            epsilon,
            t,
            r,
            h,
            value: rep.objective,
            grad_norm: rep.grad_norm,
            converged: rep.converged,
            iterations: rep.iterations,
        }
    }
}

/// A density along an R-schedule with its limit estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacitaryResult {
    pub z: Vec<f64>,
    pub points: Vec<CapacitaryPoint>,
    /// fit `a + b R^{-(d-p)/(p-1)}`
    pub value: f64,
    /// fit `a + b / R`, reported as a robustness check
    pub value_inverse_r: f64,
    /// values nonincreasing in R within the tolerance
    pub monotone: bool,
}

fn extrapolate(d: usize, p: f64, points: &[CapacitaryPoint]) -> (f64, f64) {
    if points.len() == 1 {
        return (points[0].value, points[0].value);
    }
    let a = tail_exponent(d, p);
    let y: Vec<f64> = points.iter().map(|q| q.value).collect();
    let xa: Vec<f64> = points.iter().map(|q| q.r.powf(-a)).collect();
    let x1: Vec<f64> = points.iter().map(|q| 1.0 / q.r).collect();
    (quad::linear_fit(&xa, &y).0.max(0.0), quad::linear_fit(&x1, &y).0.max(0.0))
}

fn nonincreasing(points: &[CapacitaryPoint], tol: f64) -> bool {
    points.windows(2).all(|w| w[1].value <= w[0].value + tol * w[0].value.abs().max(1e-300))
}

/// `φ(z)` (or `φ^T(z)` for a truncated density) for the local density
/// `W`: one Dirichlet problem per R, then the tail extrapolation.
pub fn phi_local<D: MatrixDensity<f64>>(
    density: &D,
    d: usize,
    z: &[f64],
    rs: &[f64],
    h: f64,
    opts: &SolveOptions<f64>,
) -> Result<CapacitaryResult> {
    let p = density.p();
    let mut points = Vec::with_capacity(rs.len());
    for &r in rs {
        if !(r > 1.0 + 2.0 * h) {
            return Err(Error::InvalidParameter(format!("R = {r} leaves no free cells at h = {h}")));
        }
        if norm(z) == 0.0 {
            points.push(CapacitaryPoint::zero(z, None, None, r, h));
            continue;
        }
        let dom = annulus_box(d, r, h)?;
        let c = local_constraints(&dom, r, z);
        let init = profile_field(&dom, d, p, r, z);
        let (_, rep) = minimize_local_dirichlet(density, &dom, &c, &init, opts)?;
        points.push(CapacitaryPoint::from_report(z, None, None, r, h, &rep));
    }
    let (value, value_inverse_r) = extrapolate(d, p, &points);
    let monotone = nonincreasing(&points, 10.0 * opts.tol);
    Ok(CapacitaryResult { z: z.to_vec(), points, value, value_inverse_r, monotone })
}

/// `κ cap_p(B_1) |z|^p`, the exact `φ` of `κ|S|^p` (scalar or isotropic).
pub fn phi_power_closed_form(kappa: f64, d: usize, p: f64, z: &[f64]) -> Result<f64> {
    Ok(kappa * pcap_annulus_closed_form(d, p, f64::INFINITY)? * norm(z).powf(p))
}

/// Minimal `eps/h` before results are flagged as under-resolved.
pub const MIN_RESOLUTION: f64 = 4.0;

/// Problem data of `φ_{eps,T,R}(z)`.
#[derive(Debug, Clone)]
pub struct ApproxProblem {
    pub domain: GridDomain<f64>,
    pub params: EnergyParams<f64>,
    pub kernel: KernelSpec<f64>,
    pub constraints: ConstraintMask<f64>,
    pub init: GridFunction<f64>,
}

/// Sets up `φ_{eps,T,R}(z)` on `B_R` with step `h`.
pub fn approx_problem(k: &KernelSpec<f64>, eps: f64, t: f64, r: f64, z: &[f64], h: f64) -> Result<ApproxProblem> {
    if z.len() != k.m {
        return Err(Error::InvalidParameter(format!("z must have m = {} entries", k.m)));
    }
    let min_r = 2.0 + t * eps;
    if r < min_r {
        return Err(Error::RadiusTooSmall { r, min: min_r });
    }
    let kernel = k.truncate(t)?;
    let params = EnergyParams::new(&kernel, eps, Some(t), h)?;
    let domain = GridDomain::ball(&vec![0.0; k.d], r, h)?;
    let layer = r - eps * t;
    let constraints = ConstraintMask::from_rule(&domain, k.m, |x| {
        let n = norm(x);
        if n <= 1.0 {
            Some(vec![0.0; z.len()])
        } else if n > layer {
            Some(z.to_vec())
        } else {
            None
        }
    });
    let p = k.p;
    let init = GridFunction::from_fn(domain.full(), z.len(), |x| {
        let t = 1.0 - radial_profile(k.d, p, layer, norm(x));
        z.iter().map(|&v| v * t).collect()
    });
    Ok(ApproxProblem { domain, params, kernel, constraints, init })
}

/// `φ_{eps,T,R}(z)`. Iterates are clamped to `|v| <= 10|z|` per cell.
pub fn phi_approx(
    k: &KernelSpec<f64>,
    eps: f64,
    t: f64,
    r: f64,
    z: &[f64],
    h: f64,
    opts: &SolveOptions<f64>,
) -> Result<(CapacitaryPoint, Option<GridFunction<f64>>)> {
    let ratio = eps / h;
    if ratio < MIN_RESOLUTION * (1.0 - 1e-12) {
        return Err(Error::UnderResolved { ratio, min: MIN_RESOLUTION });
    }
    phi_approx_unchecked(k, eps, t, r, z, h, opts)
}

/// [`phi_approx`] without the resolution precondition (callers flag).
pub fn phi_approx_unchecked(
    k: &KernelSpec<f64>,
    eps: f64,
    t: f64,
    r: f64,
    z: &[f64],
    h: f64,
    opts: &SolveOptions<f64>,
) -> Result<(CapacitaryPoint, Option<GridFunction<f64>>)> {
    let prob = approx_problem(k, eps, t, r, z, h)?;
    if norm(z) == 0.0 {
        return Ok((CapacitaryPoint::zero(z, Some(eps), Some(t), r, h), None));
    }
    let obj = NonlocalObjective::new(&prob.domain, &prob.kernel, &prob.params, k.m)?;
    let opts = SolveOptions { clamp: Some(10.0 * norm(z)), ..opts.clone() };
    let (v, rep) = minimize_energy(&obj, &prob.constraints, &prob.init, &opts)?;
    Ok((CapacitaryPoint::from_report(z, Some(eps), Some(t), r, h, &rep), Some(v)))
}

/// `φ^T_{NL,α}(z)` as the decreasing R-limit of `φ_{α,T,R}(z)`. Also
/// returns the minimizer at the last R.
pub fn phi_nonlocal(
    k: &KernelSpec<f64>,
    alpha: f64,
    t: f64,
    z: &[f64],
    rs: &[f64],
    h: f64,
    opts: &SolveOptions<f64>,
) -> Result<(CapacitaryResult, Option<GridFunction<f64>>)> {
    let mut points = Vec::with_capacity(rs.len());
    let mut last_field = None;
    for &r in rs {
        let (pt, v) = phi_approx(k, alpha, t, r, z, h, opts)?;
        points.push(pt);
        last_field = v;
    }
    let (fit, value_inverse_r) = extrapolate(k.d, k.p, &points);
    // a decreasing limit never exceeds the last computed value
    let last = points.last().map_or(0.0, |q| q.value);
    let value = fit.min(last);
    let monotone = nonincreasing(&points, 10.0 * opts.tol);
    Ok((CapacitaryResult { z: z.to_vec(), points, value, value_inverse_r, monotone }, last_field))
}

/// Largest `|φ(w) - φ(z)| / ((|z|^{p-1} + |w|^{p-1}) |w - z|)` over pairs with
/// `w != z`.
pub fn lipschitz_probe(values: &[(Vec<f64>, f64)], p: f64, pairs: &[(usize, usize)]) -> f64 {
    let mut best = 0.0f64;
    for &(a, b) in pairs {
        let (za, va) = &values[a];
        let (zb, vb) = &values[b];
        let dz: Vec<f64> = za.iter().zip(zb).map(|(x, y)| x - y).collect();
        let dist = norm(&dz);
        if dist == 0.0 {
            continue;
        }
        let denom = (norm(za).powf(p - 1.0) + norm(zb).powf(p - 1.0)) * dist;
        best = best.max((va - vb).abs() / denom);
    }
    best
}

/// One row of the convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptermRow {
    pub point: CapacitaryPoint,
    pub gap: f64,
    pub under_resolved: bool,
}

/// `φ_{eps,T,R_eps}(z)` along a schedule, with gaps to `target = φ^T(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptermTable {
    pub target: f64,
    pub rows: Vec<CaptermRow>,
    /// gaps strictly decreasing over the last three rows
    pub gaps_decreasing: bool,
}

/// Runs [`phi_approx_unchecked`] at each `(eps, R_eps, h_eps)`; rows with
/// `eps/h < 4` are flagged.
pub fn capterm_convergence(
    k: &KernelSpec<f64>,
    t: f64,
    z: &[f64],
    schedule: &[(f64, f64, f64)],
    target: f64,
    opts: &SolveOptions<f64>,
) -> Result<CaptermTable> {
    let mut rows = Vec::with_capacity(schedule.len());
    for &(eps, r, h) in schedule {
        let (point, _) = phi_approx_unchecked(k, eps, t, r, z, h, opts)?;
        let gap = (point.value - target).abs();
        rows.push(CaptermRow { point, gap, under_resolved: eps / h < MIN_RESOLUTION * (1.0 - 1e-12) });
    }
    let tail = &rows[rows.len().saturating_sub(3)..];
    let gaps_decreasing = tail.len() == 3 && tail.windows(2).all(|w| w[1].gap < w[0].gap);
    Ok(CaptermTable { target, rows, gaps_decreasing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn closed_forms() {
        assert_relative_eq!(pcap_annulus_closed_form(3, 2.0, 2.0).unwrap(), 8.0 * PI, max_relative = 1e-12);
        assert_relative_eq!(pcap_annulus_closed_form(3, 2.0, f64::INFINITY).unwrap(), 4.0 * PI, max_relative = 1e-12);
        let a = pcap_annulus_closed_form(3, 1.5, 2.0).unwrap();
        let b = pcap_annulus_closed_form(3, 1.5, 4.0).unwrap();
        let c = pcap_annulus_closed_form(3, 1.5, f64::INFINITY).unwrap();
        assert!(a > b && b > c);
        assert!(matches!(pcap_annulus_closed_form(3, 3.0, 2.0), Err(Error::ExponentRange { .. })));
    }

    #[test]
    fn closed_form_matches_radial_quadrature() {
        // ∫_{1<|x|<R} |ψ'|^p dx with ψ the radial potential
        for (d, p, r) in [(3usize, 2.0f64, 2.0f64), (3, 1.5, 3.0), (2, 1.5, 4.0)] {
            let a = tail_exponent(d, p);
            let c = 1.0 - r.powf(-a);
            let dpsi = |rho: f64| a * rho.powf(-a - 1.0) / c;
            let e = quad::sphere_area(d)
                * quad::simpson(|rho| dpsi(rho).powf(p) * rho.powi(d as i32 - 1), 1.0, r, 4000);
            assert_relative_eq!(e, pcap_annulus_closed_form(d, p, r).unwrap(), max_relative = 1e-8);
        }
    }

    #[test]
    fn lipschitz_of_power() {
        let vals: Vec<(Vec<f64>, f64)> = [-2.0, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0]
            .iter()
            .map(|&z: &f64| (vec![z], 3.0 * z.abs().powf(1.5)))
            .collect();
        let pairs: Vec<(usize, usize)> =
            (0..vals.len()).flat_map(|a| (0..vals.len()).map(move |b| (a, b))).filter(|(a, b)| a != b).collect();
        let c = lipschitz_probe(&vals, 1.5, &pairs);
        assert!(c <= 3.0 * 1.5 + 1e-12, "{c}");
        assert!(c > 0.0);
    }

    #[test]
    fn zero_datum_is_zero() {
        let k = KernelSpec::indicator_ball(2, 1, 1.5, 1.0, 1.0).unwrap();
        let (pt, _) = phi_approx(&k, 1.0, 1.0, 3.0, &[0.0], 0.25, &SolveOptions::default()).unwrap();
        assert_eq!(pt.value, 0.0);
        assert!(matches!(
            phi_approx(&k, 1.0, 2.0, 3.0, &[1.0], 0.25, &SolveOptions::default()),
            Err(Error::RadiusTooSmall { .. })
        ));
        assert!(matches!(
            phi_approx(&k, 0.5, 1.0, 3.0, &[1.0], 0.25, &SolveOptions::default()),
            Err(Error::UnderResolved { .. })
        ));
    }

    #[test]
    fn local_phi_in_2d_is_homogeneous() {
        let dens = PowerDensity { kappa: 1.0, p: 1.5 };
        let opts = SolveOptions::default();
        let a = phi_local(&dens, 2, &[1.0], &[3.0], 0.125, &opts).unwrap();
        let b = phi_local(&dens, 2, &[2.0], &[3.0], 0.125, &opts).unwrap();
        assert_relative_eq!(b.points[0].value, 2f64.powf(1.5) * a.points[0].value, max_relative = 1e-5);
        let exact = pcap_annulus_closed_form(2, 1.5, 3.0).unwrap();
        assert!((a.points[0].value - exact).abs() < 0.1 * exact, "{} vs {exact}", a.points[0].value);
    }
}
