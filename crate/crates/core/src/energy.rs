//! Discrete nonlocal functionals on grid-commensurate shift lattices.
//!
//! The ξ-integral is replaced by a sum over shifts `ξ = (h/eps) k`,
//! `k ∈ Z^d`, so that `u(x + eps ξ)` is always a cell value. Each lattice
//! node carries the weight of its lattice cell: `(h/eps)^d` times the cell
//! average of the radial profile restricted to `B_T` (partial volumes at the
//! support boundary, node value in the interior). Symmetric kernels are
//! summed over half of the lattice with doubled weights.
//!
//! Energies and gradients are reduced in a fixed order independent of the
//! thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{for_each_shift_row, GridDomain, GridFunction, Perforation};
use crate::kernels::{KernelSpec, ZPart};
use crate::real::{norm, pairwise_sum, Real};

/// Relative tail tolerance used to cut unbounded kernels.
pub const TAIL_TOL: f64 = 1e-10;
/// Subsamples per axis for boundary cells of the shift lattice.
const SUBSAMPLES: usize = 8;
/// Number of gradient accumulation buffers.
const GRADIENT_GROUPS: usize = 8;

/// One quadrature node of the shift lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Shift<T> {
    pub k: Vec<i64>,
    pub xi: Vec<T>,
    /// Quadrature weight; includes the radial profile for separable kernels
    /// and the factor 2 of the half lattice.
    pub weight: T,
}

/// Interaction scale, truncation and shift quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyParams<T> {
    pub epsilon: T,
    /// Truncation radius actually used (support radius or tail cut).
    pub truncation: T,
    pub h: T,
    pub shifts: Vec<Shift<T>>,
    pub half_lattice: bool,
    /// Whether weights carry the profile (separable kernels) or only the
    /// volume fraction (custom kernels).
    pub separable: bool,
}

impl<T: Real> EnergyParams<T> {
    /// Shift lattice for `kernel` at scale `eps` on grid step `h`.
    /// `truncation = None` uses the full support, or for unbounded kernels
    /// the radius where the relative tail drops below [`TAIL_TOL`].
    pub fn new(kernel: &KernelSpec<T>, eps: T, truncation: Option<T>, h: T) -> Result<Self> {
        if !(eps > T::zero() && h > T::zero()) {
            return Err(Error::InvalidParameter("eps and h must be positive".into()));
        }
        let support = kernel.support().radius();
        let t_eff = match truncation {
            Some(t) => {
                if !(t > kernel.r0) {
                    return Err(Error::TruncationBelowR0 {
                        t: t.to_f64_lossy(),
                        r0: kernel.r0.to_f64_lossy(),
                    });
                }
                support.map_or(t, |s| s.min(t))
            }
            None => kernel.effective_radius(TAIL_TOL),
        };
        let d = kernel.d;
        let ratio = h / eps;
        let separable = kernel.zpart().is_some();
        let half_lattice = kernel.is_symmetric();
        let half_diag = ratio * T::from_count(d).sqrt() / T::c(2.0);
        let mut breaks = vec![t_eff];
        if let Some(s) = support {
            breaks.push(s);
        }
        let kmax = (t_eff / ratio + T::one()).ceil().to_i64().unwrap_or(1);
        let cell_vol = ratio.powi(d as i32);
        let two = T::c(2.0);
        let mut shifts = Vec::new();
        let mut k = vec![-kmax; d];
        let mut xi = vec![T::zero(); d];
        loop {
            let first_nonzero = k.iter().find(|&&v| v != 0).copied();
            let keep = match first_nonzero {
                None => false,
                Some(v) => !half_lattice || v > 0,
            };
            if keep {
                for a in 0..d {
                    xi[a] = ratio * T::c(k[a] as f64);
                }
                let r = norm(&xi);
                if r - half_diag <= t_eff {
                    let straddles = breaks.iter().any(|&b| r - half_diag < b && b < r + half_diag);
                    let w = if straddles {
                        cell_average(d, &xi, ratio, |p| {
                            if norm(p) > t_eff {
                                T::zero()
                            } else if separable {
                                kernel.profile(p).unwrap_or_else(T::zero)
                            } else {
                                T::one()
                            }
                        })
                    } else if r > t_eff {
                        T::zero()
                    } else if separable {
                        kernel.profile(&xi).unwrap_or_else(T::zero)
                    } else {
                        T::one()
                    };
                    let mut weight = w * cell_vol;
                    if half_lattice {
                        weight = weight * two;
                    }
                    if weight > T::zero() {
                        shifts.push(Shift { k: k.clone(), xi: xi.clone(), weight });
                    }
                }
            }
            // odometer, last axis fastest
            let mut a = d;
            loop {
                if a == 0 {
                    return Ok(EnergyParams { epsilon: eps, truncation: t_eff, h, shifts, half_lattice, separable });
                }
                a -= 1;
                k[a] += 1;
                if k[a] <= kmax {
                    break;
                }
                k[a] = -kmax;
            }
        }
    }

    /// Same quadrature on the grid pulled back by `x = x0 + r y`:
    /// `eps / r` and `h / r` with an identical shift table.
    pub fn pulled_back(&self, r: T) -> Self {
        EnergyParams { epsilon: self.epsilon / r, h: self.h / r, ..self.clone() }
    }

    /// `eps / h`.
    pub fn resolution(&self) -> T {
        self.epsilon / self.h
    }

    /// Sum of the quadrature weights (full-lattice equivalent).
    pub fn total_weight(&self) -> T {
        self.shifts.iter().fold(T::zero(), |a, s| a + s.weight)
    }

    fn check_grid(&self, dom: &GridDomain<T>) -> Result<()> {
        let rel = ((dom.h() - self.h) / self.h).abs();
        if rel > T::c(1e-12) {
            return Err(Error::GridMismatch(format!("params built for h = {}, domain has h = {}", self.h, dom.h())));
        }
        if self.shifts.first().map_or(false, |s| s.k.len() != dom.d()) {
            return Err(Error::GridMismatch("shift dimension differs from domain dimension".into()));
        }
        Ok(())
    }
}

fn cell_average<T: Real>(d: usize, center: &[T], side: T, f: impl Fn(&[T]) -> T) -> T {
    let n = SUBSAMPLES;
    let total = n.pow(d as u32);
    let mut p = vec![T::zero(); d];
    let mut acc = T::zero();
    for s in 0..total {
        let mut rem = s;
        for a in 0..d {
            let i = rem % n;
            rem /= n;
            p[a] = center[a] + side * ((T::from_count(i) + T::c(0.5)) / T::from_count(n) - T::c(0.5));
        }
        acc = acc + f(&p);
    }
    acc / T::from_count(total)
}

/// How the integrand is evaluated in the pair loops.
#[derive(Clone)]
enum Integrand<'a, T: Real> {
    /// `|z|^p`, scalar field
    ScalarNorm,
    /// separable `w(ξ) g(z)`, weight already holds `w`
    Separable(ZPart<T>),
    Custom(&'a KernelSpec<T>),
}

/// Discrete `F_eps^T(·, A)` as a function of the raw value vector of a field
/// on `A`'s grid. Frozen cells only affect the gradient.
pub struct NonlocalObjective<'a, T: Real> {
    domain: &'a GridDomain<T>,
    kernel: &'a KernelSpec<T>,
    params: &'a EnergyParams<T>,
    m: usize,
    integrand: Integrand<'a, T>,
}

impl<'a, T: Real> NonlocalObjective<'a, T> {
    pub fn new(
        domain: &'a GridDomain<T>,
        kernel: &'a KernelSpec<T>,
        params: &'a EnergyParams<T>,
        m: usize,
    ) -> Result<Self> {
        params.check_grid(domain)?;
        if kernel.d != domain.d() {
            return Err(Error::GridMismatch(format!("kernel d = {} but domain d = {}", kernel.d, domain.d())));
        }
        let integrand = match kernel.zpart() {
            Some(ZPart::Norm) if m == 1 && params.separable => Integrand::ScalarNorm,
            Some(zp) if params.separable => Integrand::Separable(zp),
            _ => Integrand::Custom(kernel),
        };
        Ok(NonlocalObjective { domain, kernel, params, m, integrand })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> T {
        self.kernel.p
    }

    /// Mean `|D_eps^ξ u|` over the axis-neighbour shifts, used to size the
    /// regularization schedule.
    pub fn difference_scale(&self, vals: &[T]) -> T {
        let dom = self.domain;
        let mask = dom.mask();
        let m = self.m;
        let inv_eps = T::one() / self.params.epsilon;
        let mut total = T::zero();
        let mut count = 0usize;
        let mut diff = vec![T::zero(); m];
        for s in self.params.shifts.iter().filter(|s| s.k.iter().map(|v| v.abs()).sum::<i64>() == 1) {
            for_each_shift_row(dom, &s.k, |i0, j0, len| {
                for t in 0..len {
                    let (i, j) = (i0 + t, j0 + t);
                    if mask.map_or(true, |mk| mk[i] && mk[j]) {
                        for c in 0..m {
                            diff[c] = (vals[j * m + c] - vals[i * m + c]) * inv_eps;
                        }
                        total = total + norm(&diff);
                        count += 1;
                    }
                }
            });
        }
        if count == 0 {
            T::zero()
        } else {
            total / T::from_count(count)
        }
    }

    /// Energy of the value vector at regularization `mu`.
    pub fn value(&self, vals: &[T], mu: T) -> T {
        let parts: Vec<T> = self.params.shifts.par_iter().map(|s| self.shift_value(s, vals, mu)).collect();
        pairwise_sum(&parts)
    }

    /// Energy and gradient. Gradient entries of frozen cells are zero.
    pub fn value_grad(&self, vals: &[T], mu: T, frozen: Option<&[bool]>, grad: &mut [T]) -> Result<T> {
        let shifts = &self.params.shifts;
        let n = vals.len();
        let groups = GRADIENT_GROUPS.min(shifts.len().max(1));
        let chunk = shifts.len().div_ceil(groups).max(1);
        let results: Vec<(Vec<T>, Vec<T>, bool)> = shifts
            .par_chunks(chunk)
            .map(|group| {
                let mut buf = vec![T::zero(); n];
                let mut singular = false;
                let parts: Vec<T> =
                    group.iter().map(|s| self.shift_value_grad(s, vals, mu, frozen, &mut buf, &mut singular)).collect();
                (parts, buf, singular)
            })
            .collect();
        grad.iter_mut().for_each(|g| *g = T::zero());
        let mut parts = Vec::with_capacity(shifts.len());
        for (p, buf, singular) in results {
            if singular {
                return Err(Error::SingularGradient);
            }
            parts.extend(p);
            for (g, b) in grad.iter_mut().zip(&buf) {
                *g = *g + *b;
            }
        }
        if let Some(fr) = frozen {
            for (i, &f) in fr.iter().enumerate() {
                if f {
                    grad[i * self.m..(i + 1) * self.m].iter_mut().for_each(|g| *g = T::zero());
                }
            }
        }
        Ok(pairwise_sum(&parts))
    }

    fn shift_value(&self, s: &Shift<T>, vals: &[T], mu: T) -> T {
        let dom = self.domain;
        let mask = dom.mask();
        let m = self.m;
        let inv_eps = T::one() / self.params.epsilon;
        let p = self.kernel.p;
        let half = p / T::c(2.0);
        let p2 = p == T::c(2.0);
        let mu2 = mu * mu;
        let mup = if mu > T::zero() { mu.powf(p) } else { T::zero() };
        let mut rows = Vec::new();
        let mut diff = vec![T::zero(); m];
        for_each_shift_row(dom, &s.k, |i0, j0, len| {
            let mut acc = T::zero();
            match &self.integrand {
                Integrand::ScalarNorm => {
                    for t in 0..len {
                        let (i, j) = (i0 + t, j0 + t);
                        if let Some(mk) = mask {
                            if !(mk[i] && mk[j]) {
                                continue;
                            }
                        }
                        let dv = (vals[j] - vals[i]) * inv_eps;
                        acc = acc
                            + if p2 {
                                dv * dv
                            } else if mu == T::zero() {
                                dv.abs().powf(p)
                            } else {
                                (dv * dv + mu2).powf(half) - mup
                            };
                    }
                }
                Integrand::Separable(zp) => {
                    for t in 0..len {
                        let (i, j) = (i0 + t, j0 + t);
                        if let Some(mk) = mask {
                            if !(mk[i] && mk[j]) {
                                continue;
                            }
                        }
                        for c in 0..m {
                            diff[c] = (vals[j * m + c] - vals[i * m + c]) * inv_eps;
                        }
                        acc = acc + zp.value(&diff, p, mu);
                    }
                }
                Integrand::Custom(k) => {
                    for t in 0..len {
                        let (i, j) = (i0 + t, j0 + t);
                        if let Some(mk) = mask {
                            if !(mk[i] && mk[j]) {
                                continue;
                            }
                        }
                        for c in 0..m {
                            diff[c] = (vals[j * m + c] - vals[i * m + c]) * inv_eps;
                        }
                        acc = acc + k.eval_regularized(&s.xi, &diff, mu);
                    }
                }
            }
            rows.push(acc);
        });
        pairwise_sum(&rows) * s.weight * dom.cell_volume()
    }

    fn shift_value_grad(
        &self,
        s: &Shift<T>,
        vals: &[T],
        mu: T,
        frozen: Option<&[bool]>,
        grad: &mut [T],
        singular: &mut bool,
    ) -> T {
        let dom = self.domain;
        let mask = dom.mask();
        let m = self.m;
        let inv_eps = T::one() / self.params.epsilon;
        let p = self.kernel.p;
        let half = p / T::c(2.0);
        let p2 = p == T::c(2.0);
        let mu2 = mu * mu;
        let mup = if mu > T::zero() { mu.powf(p) } else { T::zero() };
        let scale = s.weight * dom.cell_volume();
        let gscale = scale * inv_eps;
        let check_zero = mu == T::zero() && p < T::c(2.0);
        let both_frozen = |i: usize, j: usize| frozen.map_or(false, |f| f[i] && f[j]);
        let mut rows = Vec::new();
        let mut diff = vec![T::zero(); m];
        let mut g = vec![T::zero(); m];
        for_each_shift_row(dom, &s.k, |i0, j0, len| {
            let mut acc = T::zero();
            for t in 0..len {
                let (i, j) = (i0 + t, j0 + t);
                if let Some(mk) = mask {
                    if !(mk[i] && mk[j]) {
                        continue;
                    }
                }
                match &self.integrand {
                    Integrand::ScalarNorm => {
                        let dv = (vals[j] - vals[i]) * inv_eps;
                        let (val, der) = if p2 {
                            (dv * dv, T::c(2.0) * dv)
                        } else if mu == T::zero() {
                            let a = dv.abs();
                            if a == T::zero() {
                                if check_zero && !both_frozen(i, j) {
                                    *singular = true;
                                }
                                (T::zero(), T::zero())
                            } else {
                                let pw = a.powf(p);
                                (pw, p * pw / dv)
                            }
                        } else {
                            let b = (dv * dv + mu2).powf(half - T::one());
                            (b * (dv * dv + mu2) - mup, p * b * dv)
                        };
                        acc = acc + val;
                        let c = der * gscale;
                        grad[j] = grad[j] + c;
                        grad[i] = grad[i] - c;
                    }
                    Integrand::Separable(zp) => {
                        for c in 0..m {
                            diff[c] = (vals[j * m + c] - vals[i * m + c]) * inv_eps;
                        }
                        if check_zero && !both_frozen(i, j) && diff.iter().all(|&v| v == T::zero()) {
                            *singular = true;
                        }
                        acc = acc + zp.value(&diff, p, mu);
                        zp.grad(&diff, p, mu, &mut g);
                        for c in 0..m {
                            let v = g[c] * gscale;
                            grad[j * m + c] = grad[j * m + c] + v;
                            grad[i * m + c] = grad[i * m + c] - v;
                        }
                    }
                    Integrand::Custom(k) => {
                        for c in 0..m {
                            diff[c] = (vals[j * m + c] - vals[i * m + c]) * inv_eps;
                        }
                        if check_zero && !both_frozen(i, j) && diff.iter().all(|&v| v == T::zero()) {
                            *singular = true;
                        }
                        acc = acc + k.eval_regularized(&s.xi, &diff, mu);
                        k.grad_z(&s.xi, &diff, mu, &mut g);
                        for c in 0..m {
                            let v = g[c] * gscale;
                            grad[j * m + c] = grad[j * m + c] + v;
                            grad[i * m + c] = grad[i * m + c] - v;
                        }
                    }
                }
            }
            rows.push(acc);
        });
        pairwise_sum(&rows) * scale
    }
}

fn check_field<T: Real>(u: &GridFunction<T>, a: &GridDomain<T>) -> Result<()> {
    if !u.domain().same_grid(a) {
        return Err(Error::GridMismatch("field and integration domain must share a grid".into()));
    }
    Ok(())
}

/// `F_eps^T(u, A)`: pairs with both endpoints in the active set of `A`.
/// `A` must share `u`'s grid; to integrate against an exterior extension,
/// evaluate on [`GridFunction::padded`].
pub fn nonlocal_energy<T: Real>(
    u: &GridFunction<T>,
    a: &GridDomain<T>,
    kernel: &KernelSpec<T>,
    params: &EnergyParams<T>,
) -> Result<T> {
    check_field(u, a)?;
    let obj = NonlocalObjective::new(a, kernel, params, u.m())?;
    Ok(obj.value(u.values(), T::zero()))
}

/// Value of a functional that may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended<T> {
    Finite(T),
    Infeasible,
}

impl<T: Copy> Extended<T> {
    pub fn finite(self) -> Option<T> {
        match self {
            Extended::Finite(v) => Some(v),
            Extended::Infeasible => None,
        }
    }
}

/// `F_{eps,δ}(u)`: the nonlocal energy on `Ω` if `u` vanishes exactly on
/// every pinned cell, [`Extended::Infeasible`] otherwise.
pub fn pinned_energy<T: Real>(
    u: &GridFunction<T>,
    omega: &GridDomain<T>,
    kernel: &KernelSpec<T>,
    params: &EnergyParams<T>,
    perf: &Perforation<T>,
) -> Result<Extended<T>> {
    check_field(u, omega)?;
    let pinned = perf.pinned_mask(omega);
    for (i, &pin) in pinned.iter().enumerate() {
        if pin && u.at(i).iter().any(|&v| v != T::zero()) {
            return Ok(Extended::Infeasible);
        }
    }
    nonlocal_energy(u, omega, kernel, params).map(Extended::Finite)
}

/// `G_eps^{r,p}(u, A)`: the functional with integrand `χ_{B_r}(ξ)|z|^p`.
pub fn short_range_energy<T: Real>(u: &GridFunction<T>, a: &GridDomain<T>, r: T, p: T, eps: T) -> Result<T> {
    let k = short_range_kernel(a.d(), u.m(), r, p)?;
    let params = EnergyParams::new(&k, eps, None, a.h())?;
    nonlocal_energy(u, a, &k, &params)
}

/// Kernel `χ_{B_r}(ξ)|z|^p` of the short-range functional.
pub fn short_range_kernel<T: Real>(d: usize, m: usize, r: T, p: T) -> Result<KernelSpec<T>> {
    KernelSpec::indicator_ball(d, m, p.to_f64_lossy(), 1.0, r.to_f64_lossy())
}

/// Gradient of the discrete energy at regularization `mu`; frozen cells get
/// zero gradient.
pub fn energy_gradient<T: Real>(
    u: &GridFunction<T>,
    a: &GridDomain<T>,
    kernel: &KernelSpec<T>,
    params: &EnergyParams<T>,
    frozen: &[bool],
    mu: T,
) -> Result<GridFunction<T>> {
    check_field(u, a)?;
    if mu < T::zero() {
        return Err(Error::InvalidParameter("mu must be nonnegative".into()));
    }
    let obj = NonlocalObjective::new(a, kernel, params, u.m())?;
    let mut g = vec![T::zero(); u.values().len()];
    obj.value_grad(u.values(), mu, Some(frozen), &mut g)?;
    GridFunction::from_values(u.domain().clone(), u.m(), g)
}

/// Both sides of the rescaling identity on a ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescalingCheck<T> {
    /// `F_eps^T(u, B_ρ(x0))`
    pub lhs: T,
    /// `r^{d-p} F_{eps/r}^T(u(x0 + r ·), B_{ρ/r})`
    pub rhs: T,
    pub relative_gap: T,
}

/// Evaluates `F_eps^T(u, B_ρ(x0))` and `r^{d-p} F_{eps/r}^T(v, B_{ρ/r})` with
/// `v(y) = u(x0 + r y)` on the pulled-back grid (same cells, step `h/r`).
/// `r` or `1/r` must be an integer.
pub fn rescaling_identity_check<T: Real>(
    u: &GridFunction<T>,
    x0: &[T],
    r: T,
    rho: T,
    kernel: &KernelSpec<T>,
    params: &EnergyParams<T>,
) -> Result<RescalingCheck<T>> {
    let rf = r.to_f64_lossy();
    let integral = |x: f64| (x - x.round()).abs() <= 1e-12 * x.abs().max(1.0) && x.round() >= 1.0;
    if !(rf > 0.0) || !(integral(rf) || integral(1.0 / rf)) {
        return Err(Error::NonCommensurate(format!("scale factor r = {rf} is neither n nor 1/n")));
    }
    let dom = u.domain();
    let rho2 = rho * rho;
    let ball = dom.restrict(|x| x.iter().zip(x0).fold(T::zero(), |a, (&p, &c)| a + (p - c) * (p - c)) <= rho2);
    let lhs = nonlocal_energy(u, &ball, kernel, params)?;

    let origin: Vec<T> = dom.origin().iter().zip(x0).map(|(&a, &c)| (a - c) / r).collect();
    let pulled = GridDomain::new(origin, dom.h() / r, dom.shape().to_vec())?;
    let pulled_ball = match ball.mask() {
        Some(mk) => pulled.with_mask(mk.to_vec())?,
        None => pulled,
    };
    let v = GridFunction::from_values(pulled_ball.full(), u.m(), u.values().to_vec())?;
    let pparams = params.pulled_back(r);
    let scaled = nonlocal_energy(&v, &pulled_ball, kernel, &pparams)?;
    let rhs = r.powf(T::from_count(kernel.d) - kernel.p) * scaled;
    let denom = lhs.abs().max(rhs.abs());
    let relative_gap = if denom == T::zero() { T::zero() } else { (lhs - rhs).abs() / denom };
    Ok(RescalingCheck { lhs, rhs, relative_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(dom: GridDomain<f64>, m: usize, seed: u64) -> GridFunction<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..dom.ncells() * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        GridFunction::from_values(dom, m, vals).unwrap()
    }

    /// Direct double loop over every cell pair and every shift.
    fn brute_energy(u: &GridFunction<f64>, a: &GridDomain<f64>, k: &KernelSpec<f64>, prm: &EnergyParams<f64>) -> f64 {
        let m = u.m();
        let mut total = 0.0;
        for s in &prm.shifts {
            for i in 0..a.ncells() {
                if !a.is_active(i) {
                    continue;
                }
                let x = a.center(i);
                let y: Vec<f64> = x.iter().zip(&s.xi).map(|(p, q)| p + prm.epsilon * q).collect();
                let Some(j) = a.locate(&y) else { continue };
                if !a.is_active(j) {
                    continue;
                }
                let dz: Vec<f64> = (0..m).map(|c| (u.at(j)[c] - u.at(i)[c]) / prm.epsilon).collect();
                let f = if prm.separable {
                    k.zpart().unwrap().value(&dz, k.p, 0.0) * s.weight
                } else {
                    k.eval(&s.xi, &dz) * s.weight
                };
                total += f * a.cell_volume();
            }
        }
        total
    }

    #[test]
    fn weights_cover_the_ball() {
        let k = KernelSpec::<f64>::indicator_ball(3, 1, 2.0, 1.0, 1.0).unwrap();
        let prm = EnergyParams::new(&k, 1.0, None, 0.25).unwrap();
        let vol = 4.0 / 3.0 * std::f64::consts::PI;
        // lattice cell at the origin is excluded
        let total = prm.total_weight() + 0.25f64.powi(3);
        assert!((total - vol).abs() < 0.02 * vol, "{total} vs {vol}");
        assert!(prm.half_lattice);
        assert!(prm.shifts.iter().all(|s| s.k.iter().find(|&&v| v != 0).unwrap() > &0));
    }

    #[test]
    fn constants_have_zero_energy() {
        let dom = GridDomain::<f64>::centered_cube(3, 1.0, 0.25).unwrap();
        let k = KernelSpec::indicator_ball(3, 2, 1.5, 1.0, 1.0).unwrap();
        let prm = EnergyParams::new(&k, 1.0, None, 0.25).unwrap();
        let u = GridFunction::constant(dom.clone(), &[1.0, -2.0]);
        assert_eq!(nonlocal_energy(&u, &dom, &k, &prm).unwrap(), 0.0);
    }

    #[test]
    fn two_cell_hand_sum() {
        // cells at 0.5 and 1.5, one shift k = 1 with eps = 1, h = 1
        let dom = GridDomain::<f64>::new(vec![0.0, 0.0], 1.0, vec![2, 1]).unwrap();
        let k = KernelSpec::indicator_ball(2, 1, 1.5, 1.0, 1.0).unwrap();
        let prm = EnergyParams::new(&k, 1.0, None, 1.0).unwrap();
        let mut u = GridFunction::zeros(dom.clone(), 1);
        u.set(1, &[2.0]);
        let e = nonlocal_energy(&u, &dom, &k, &prm).unwrap();
        let w = prm.shifts.iter().find(|s| s.k == vec![1, 0]).unwrap().weight;
        assert_relative_eq!(e, w * 2f64.powf(1.5), max_relative = 1e-14);
    }

    #[test]
    fn matches_brute_force_on_masked_domain() {
        let dom = GridDomain::<f64>::ball(&[0.0, 0.0, 0.0], 1.0, 0.25).unwrap();
        let u = random_field(dom.full(), 2, 3);
        let k = KernelSpec::indicator_ball(3, 2, 1.7, 1.3, 1.0).unwrap();
        let prm = EnergyParams::new(&k, 0.75, None, 0.25).unwrap();
        let e = nonlocal_energy(&u, &dom, &k, &prm).unwrap();
        assert_relative_eq!(e, brute_energy(&u, &dom, &k, &prm), max_relative = 1e-12);
    }

    #[test]
    fn short_range_matches_brute_force() {
        let dom = GridDomain::<f64>::centered_cube(3, 0.375, 0.25).unwrap();
        assert_eq!(dom.shape(), &[3, 3, 3]);
        let u = random_field(dom.clone(), 1, 8);
        let g = short_range_energy(&u, &dom, 0.6, 1.5, 0.5).unwrap();
        let k = short_range_kernel(3, 1, 0.6, 1.5).unwrap();
        let prm = EnergyParams::new(&k, 0.5, None, 0.25).unwrap();
        assert_relative_eq!(g, brute_energy(&u, &dom, &k, &prm), max_relative = 1e-12);
    }

    #[test]
    fn homogeneity_and_translation() {
        let dom = GridDomain::<f64>::centered_cube(2, 1.0, 0.125).unwrap();
        let u = random_field(dom.clone(), 1, 1);
        let k = KernelSpec::smooth_decay(2, 1, 1.5, 1.0).unwrap().truncate(1.0).unwrap();
        let prm = EnergyParams::new(&k, 0.5, None, 0.125).unwrap();
        let e = nonlocal_energy(&u, &dom, &k, &prm).unwrap();
        let e3 = nonlocal_energy(&u.scaled(3.0), &dom, &k, &prm).unwrap();
        assert_relative_eq!(e3, 3f64.powf(1.5) * e, max_relative = 1e-12);
        let et = nonlocal_energy(&u.add_constant(&[0.75]), &dom, &k, &prm).unwrap();
        assert_relative_eq!(et, e, max_relative = 1e-12);
    }

    #[test]
    fn pinned_energy_marks_infeasible() {
        let dom = GridDomain::<f64>::centered_cube(2, 1.0, 0.125).unwrap();
        let k = KernelSpec::indicator_ball(2, 1, 1.5, 1.0, 1.0).unwrap();
        let prm = EnergyParams::new(&k, 0.5, None, 0.125).unwrap();
        let perf = Perforation::new(0.5, 0.1).unwrap();
        let one = GridFunction::constant(dom.clone(), &[1.0]);
        assert_eq!(pinned_energy(&one, &dom, &k, &prm, &perf).unwrap(), Extended::Infeasible);
        let zero = GridFunction::zeros(dom.clone(), 1);
        assert_eq!(pinned_energy(&zero, &dom, &k, &prm, &perf).unwrap(), Extended::Finite(0.0));
        let (pinned, _) = crate::fields::apply_pinning(&random_field(dom.clone(), 1, 2), &perf);
        let direct = nonlocal_energy(&pinned, &dom, &k, &prm).unwrap();
        assert_eq!(pinned_energy(&pinned, &dom, &k, &prm, &perf).unwrap(), Extended::Finite(direct));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let dom = GridDomain::<f64>::centered_cube(2, 0.5, 0.25).unwrap();
        assert_eq!(dom.shape(), &[4, 4]);
        for (m, kernel) in [
            (1, KernelSpec::indicator_ball(2, 1, 1.5, 1.0, 1.0).unwrap()),
            (2, KernelSpec::builtin("anisotropic", 2, 2, 1.7, &Default::default()).unwrap()),
        ] {
            let u = random_field(dom.clone(), m, 4);
            let prm = EnergyParams::new(&kernel, 0.5, None, 0.25).unwrap();
            let frozen = vec![false; dom.ncells()];
            let mu = 1e-3;
            let g = energy_gradient(&u, &dom, &kernel, &prm, &frozen, mu).unwrap();
            let obj = NonlocalObjective::new(&dom, &kernel, &prm, m).unwrap();
            let step = 1e-6;
            for idx in 0..u.values().len() {
                let mut plus = u.values().to_vec();
                let mut minus = u.values().to_vec();
                plus[idx] += step;
                minus[idx] -= step;
                let fd = (obj.value(&plus, mu) - obj.value(&minus, mu)) / (2.0 * step);
                let an = g.values()[idx];
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "m={m} idx={idx}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn frozen_cells_have_zero_gradient() {
        let dom = GridDomain::<f64>::centered_cube(2, 0.5, 0.25).unwrap();
        let k = KernelSpec::indicator_ball(2, 1, 2.0 - 0.5, 1.0, 1.0).unwrap();
        let prm = EnergyParams::new(&k, 0.5, None, 0.25).unwrap();
        let u = random_field(dom.clone(), 1, 6);
        let g = energy_gradient(&u, &dom, &k, &prm, &vec![true; 16], 0.0).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
        let c = GridFunction::constant(dom.clone(), &[1.0]);
        let frozen: Vec<bool> = (0..16).map(|i| i == 0).collect();
        assert!(matches!(energy_gradient(&c, &dom, &k, &prm, &frozen, 0.0), Err(Error::SingularGradient)));
    }

    #[test]
    fn rescaling_identity_exact() {
        let dom = GridDomain::<f64>::centered_cube(3, 1.0, 0.125).unwrap();
        let u = random_field(dom.clone(), 1, 12);
        let k = KernelSpec::indicator_ball(3, 1, 1.5, 1.0, 1.0).unwrap();
        let prm = EnergyParams::new(&k, 0.5, None, 0.125).unwrap();
        for r in [1.0, 0.5, 0.25, 2.0] {
            let chk = rescaling_identity_check(&u, &[0.0, 0.0, 0.0], r, 0.9, &k, &prm).unwrap();
            assert!(chk.relative_gap <= 1e-12, "r = {r}: {chk:?}");
        }
        assert!(matches!(
            rescaling_identity_check(&u, &[0.0; 3], 0.3, 0.9, &k, &prm),
            Err(Error::NonCommensurate(_))
        ));
    }

    #[test]
    fn truncation_monotone() {
        let dom = GridDomain::<f64>::centered_cube(2, 1.0, 0.125).unwrap();
        let u = random_field(dom.clone(), 1, 21);
        let k = KernelSpec::smooth_decay(2, 1, 1.5, 1.0).unwrap();
        let mut last = 0.0;
        for t in [0.6, 1.0, 1.5, 2.5] {
            let prm = EnergyParams::new(&k, 0.5, Some(t), 0.125).unwrap();
            let e = nonlocal_energy(&u, &dom, &k, &prm).unwrap();
            assert!(e >= last);
            last = e;
        }
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let dom = GridDomain::<f64>::centered_cube(2, 1.0, 0.125).unwrap();
        let k = KernelSpec::indicator_ball(2, 1, 1.5, 1.0, 1.0).unwrap();
        let prm = EnergyParams::new(&k, 0.5, None, 0.25).unwrap();
        let u = GridFunction::zeros(dom.clone(), 1);
        assert!(matches!(nonlocal_energy(&u, &dom, &k, &prm), Err(Error::GridMismatch(_))));
    }
}
