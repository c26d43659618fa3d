//! Frozen-cell constrained minimization of convex grid energies.
//!
//! Limited-memory BFGS with Armijo backtracking on the free coordinates.
//! Frozen coordinates are eliminated (their gradient is zeroed and they are
//! never moved). For `1 < p < 2` the objective is solved along a decreasing
//! μ-continuation schedule. An optional per-cell norm bound is enforced by
//! projection.

use std::collections::VecDeque;

use crate::energy::NonlocalObjective;
use crate::error::{Error, Result};
use crate::fields::{GridDomain, GridFunction};
use crate::real::{norm, pairwise_sum, Real};

/// Default relative gradient tolerance.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Objective over the raw value vector of a grid field.
pub trait Objective<T: Real>: Sync {
    fn m(&self) -> usize;
    fn p(&self) -> T;
    fn value(&self, x: &[T], mu: T) -> T;
    /// Value and gradient; entries of frozen cells must be zero.
    fn value_grad(&self, x: &[T], mu: T, frozen: &[bool], g: &mut [T]) -> Result<T>;
    /// Typical size of a difference quotient, for the μ-schedule.
    fn difference_scale(&self, x: &[T]) -> T;
}

impl<T: Real> Objective<T> for NonlocalObjective<'_, T> {
    fn m(&self) -> usize {
        NonlocalObjective::m(self)
    }
    fn p(&self) -> T {
        NonlocalObjective::p(self)
    }
    fn value(&self, x: &[T], mu: T) -> T {
        NonlocalObjective::value(self, x, mu)
    }
    fn value_grad(&self, x: &[T], mu: T, frozen: &[bool], g: &mut [T]) -> Result<T> {
        NonlocalObjective::value_grad(self, x, mu, Some(frozen), g)
    }
    fn difference_scale(&self, x: &[T]) -> T {
        NonlocalObjective::difference_scale(self, x)
    }
}

/// Frozen cells and their prescribed values.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMask<T> {
    m: usize,
    frozen: Vec<bool>,
    values: Vec<T>,
}

impl<T: Real> ConstraintMask<T> {
    /// No frozen cells.
    pub fn free(ncells: usize, m: usize) -> Self {
        ConstraintMask { m, frozen: vec![false; ncells], values: vec![T::zero(); ncells * m] }
    }

    /// Freezes every active cell of `dom` for which `rule` returns a value.
    pub fn from_rule(dom: &GridDomain<T>, m: usize, rule: impl Fn(&[T]) -> Option<Vec<T>>) -> Self {
        let mut c = Self::free(dom.ncells(), m);
        let mut x = vec![T::zero(); dom.d()];
        for i in 0..dom.ncells() {
            if !dom.is_active(i) {
                continue;
            }
            dom.center_into(i, &mut x);
            if let Some(v) = rule(&x) {
                c.freeze(i, &v);
            }
        }
        c
    }

    pub fn freeze(&mut self, idx: usize, value: &[T]) {
        self.frozen[idx] = true;
        self.values[idx * self.m..(idx + 1) * self.m].copy_from_slice(&value[..self.m]);
    }

    pub fn release(&mut self, idx: usize) {
        self.frozen[idx] = false;
    }

    pub fn is_frozen(&self, idx: usize) -> bool {
        self.frozen[idx]
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn value(&self, idx: usize) -> &[T] {
        &self.values[idx * self.m..(idx + 1) * self.m]
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen.iter().filter(|&&f| f).count()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Constraints with every frozen value multiplied by `t`.
    pub fn scaled(&self, t: T) -> Self {
        ConstraintMask { values: self.values.iter().map(|&v| v * t).collect(), ..self.clone() }
    }

    /// Writes the frozen values into `x`.
    pub fn apply(&self, x: &mut [T]) {
        for (i, &f) in self.frozen.iter().enumerate() {
            if f {
                x[i * self.m..(i + 1) * self.m].copy_from_slice(self.value(i));
            }
        }
    }

    /// Whether `x` agrees with every frozen value exactly.
    pub fn satisfied_by(&self, x: &[T]) -> bool {
        self.frozen
            .iter()
            .enumerate()
            .all(|(i, &f)| !f || &x[i * self.m..(i + 1) * self.m] == self.value(i))
    }

    fn check(&self, dom: &GridDomain<T>, m: usize) -> Result<()> {
        if self.frozen.len() != dom.ncells() || self.m != m {
            return Err(Error::GridMismatch("constraint mask does not match the field".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frozen values".into()));
        }
        Ok(())
    }
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions<T> {
    /// Relative projected-gradient tolerance.
    pub tol: T,
    /// Iteration cap per μ stage.
    pub max_iter: usize,
    pub memory: usize,
    /// Explicit μ schedule; `None` selects the default for the objective's p.
    pub mu_schedule: Option<Vec<T>>,
    /// Per-cell bound `|v(x)| <= clamp`, enforced by projection.
    pub clamp: Option<T>,
    /// Gradient reference for the relative tolerance; `None` derives it from
    /// the initial point.
    pub reference: Option<T>,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        SolveOptions {
            tol: T::c(DEFAULT_TOL),
            max_iter: 5000,
            memory: 8,
            mu_schedule: None,
            clamp: None,
            reference: None,
        }
    }
}

/// Outcome of a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<T> {
    /// Unregularized energy at the returned field.
    pub objective: T,
    /// Final projected gradient norm relative to `reference`.
    pub grad_norm: T,
    pub iterations: usize,
    pub mu_path: Vec<T>,
    /// Unregularized energy at the end of each μ stage.
    pub stage_objectives: Vec<T>,
    pub converged: bool,
    pub tol: T,
    pub reference: T,
}

/// Default μ schedule: `0.1 · 2^{-k} · scale`, `k = 0..3`, then `1e-8 · scale`;
/// a single `μ = 0` stage for `p >= 2`.
pub fn default_mu_schedule<T: Real>(p: T, scale: T) -> Vec<T> {
    if p >= T::c(2.0) {
        return vec![T::zero()];
    }
    let s = if scale > T::zero() { scale } else { T::one() };
    let mut v: Vec<T> = (0..4).map(|k| T::c(0.1) * T::c(0.5f64.powi(k)) * s).collect();
    v.push(T::c(1e-8) * s);
    v
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // chunked so the reduction order is fixed
    let parts: Vec<T> = a
        .chunks(4096)
        .zip(b.chunks(4096))
        .map(|(x, y)| x.iter().zip(y).fold(T::zero(), |s, (&p, &q)| s + p * q))
        .collect();
    pairwise_sum(&parts)
}

fn project<T: Real>(x: &mut [T], m: usize, bound: T) {
    for c in x.chunks_exact_mut(m) {
        let n = norm(c);
        if n > bound {
            let f = bound / n;
            c.iter_mut().for_each(|v| *v = *v * f);
        }
    }
}

/// Minimizes `obj` over fields agreeing with `constraints` on frozen cells,
/// starting from `init` (frozen values are imposed on the start point).
pub fn minimize_energy<T: Real, O: Objective<T>>(
    obj: &O,
    constraints: &ConstraintMask<T>,
    init: &GridFunction<T>,
    opts: &SolveOptions<T>,
) -> Result<(GridFunction<T>, SolveReport<T>)> {
    let m = obj.m();
    constraints.check(init.domain(), m)?;
    let mut x = init.values().to_vec();
    constraints.apply(&mut x);
    if let Some(b) = opts.clamp {
        project(&mut x, m, b);
    }
    let frozen = constraints.frozen();
    let n_free = (0..init.domain().ncells()).filter(|&i| !frozen[i] && init.domain().is_active(i)).count();
    let p = obj.p();
    let schedule = opts.mu_schedule.clone().unwrap_or_else(|| default_mu_schedule(p, obj.difference_scale(&x)));

    if n_free == 0 {
        let objective = obj.value(&x, T::zero());
        let out = GridFunction::from_values(init.domain().clone(), m, x)?;
        let report = SolveReport {
            objective,
            grad_norm: T::zero(),
            iterations: 0,
            mu_path: Vec::new(),
            stage_objectives: Vec::new(),
            converged: true,
            tol: opts.tol,
            reference: opts.reference.unwrap_or_else(T::one),
        };
        return Ok((out, report));
    }

    let mut g = vec![T::zero(); x.len()];
    let f0 = obj.value_grad(&x, schedule[0], frozen, &mut g)?;
    let reference = match opts.reference {
        Some(r) => r,
        None => {
            let euler = p * f0.abs() / norm(&x).max(T::min_positive_value());
            let r = norm(&g).max(euler);
            if r > T::zero() {
                r
            } else {
                T::one()
            }
        }
    };
    let threshold = opts.tol * reference;

    let mut iterations = 0;
    let mut stage_objectives = Vec::with_capacity(schedule.len());
    let mut grad_norm = T::zero();
    let mut converged = false;
    for &mu in &schedule {
        let (iters, gn, ok) = lbfgs_stage(obj, &mut x, mu, frozen, threshold, opts)?;
        iterations += iters;
        grad_norm = gn / reference;
        converged = ok;
        stage_objectives.push(obj.value(&x, T::zero()));
    }
    let objective = *stage_objectives.last().expect("nonempty schedule");
    if !objective.is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    let out = GridFunction::from_values(init.domain().clone(), m, x)?;
    Ok((
        out,
        SolveReport {
            objective,
            grad_norm,
            iterations,
            mu_path: schedule,
            stage_objectives,
            converged,
            tol: opts.tol,
            reference,
        },
    ))
}

/// One L-BFGS run at fixed μ. Returns (iterations, final gradient norm, converged).
fn lbfgs_stage<T: Real, O: Objective<T>>(
    obj: &O,
    x: &mut Vec<T>,
    mu: T,
    frozen: &[bool],
    threshold: T,
    opts: &SolveOptions<T>,
) -> Result<(usize, T, bool)> {
    let m = obj.m();
    let n = x.len();
    let mut g = vec![T::zero(); n];
    let mut f = obj.value_grad(x, mu, frozen, &mut g)?;
    if !f.is_finite() {
        return Err(Error::NonFinite("objective at start of stage".into()));
    }
    let mut hist: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.memory);
    let mut dir = vec![T::zero(); n];
    let mut x_new = vec![T::zero(); n];
    let mut g_new = vec![T::zero(); n];
    let mut alpha = vec![T::zero(); opts.memory];
    let c1 = T::c(1e-4);
    let roundoff = T::c(8.0) * T::epsilon();
    let mut iter = 0;
    let mut stalls = 0;
    loop {
        let gn = norm(&g);
        if gn <= threshold {
            return Ok((iter, gn, true));
        }
        if iter >= opts.max_iter {
            return Ok((iter, gn, false));
        }
        // two-loop recursion
        dir.copy_from_slice(&g);
        for (slot, (s, y, rho)) in hist.iter().enumerate().rev() {
            let a = *rho * dot(s, &dir);
            alpha[slot] = a;
            dir.iter_mut().zip(y).for_each(|(d, &yv)| *d = *d - a * yv);
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => T::one() / gn.max(T::one()),
        };
        dir.iter_mut().for_each(|d| *d = *d * gamma);
        for (slot, (s, y, rho)) in hist.iter().enumerate() {
            let b = *rho * dot(y, &dir);
            let a = alpha[slot];
            dir.iter_mut().zip(s).for_each(|(d, &sv)| *d = *d + (a - b) * sv);
        }
        dir.iter_mut().for_each(|d| *d = -*d);
        let mut slope = dot(&g, &dir);
        if !(slope < T::zero()) {
            hist.clear();
            dir.iter_mut().zip(&g).for_each(|(d, &gv)| *d = -gv / gn.max(T::one()));
            slope = dot(&g, &dir);
        }

        // Armijo backtracking (on the projected step when clamped)
        let mut t = T::one();
        let mut accepted = false;
        let mut f_new;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + t * dir[i];
            }
            if let Some(b) = opts.clamp {
                project(&mut x_new, m, b);
            }
            f_new = obj.value(&x_new, mu);
            let decrease = if opts.clamp.is_some() {
                let disp: Vec<T> = x_new.iter().zip(x.iter()).map(|(&a, &b)| a - b).collect();
                dot(&g, &disp)
            } else {
                t * slope
            };
            if f_new.is_finite() && f_new <= f + c1 * decrease + roundoff * f.abs() {
                accepted = true;
                break;
            }
            t = t * T::c(0.5);
        }
        iter += 1;
        if !accepted {
            if hist.is_empty() {
                stalls += 1;
                if stalls > 2 {
                    return Ok((iter, gn, false));
                }
            }
            hist.clear();
            continue;
        }
        f_new = obj.value_grad(&x_new, mu, frozen, &mut g_new)?;
        let s: Vec<T> = x_new.iter().zip(x.iter()).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::c(1e-14) * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > T::zero() {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, T::one() / sy));
        }
        // no progress at all: the iterate is numerically stationary
        if f_new == f && x_new == *x {
            return Ok((iter, norm(&g_new), false));
        }
        std::mem::swap(x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
    }
}

/// A convex, p-homogeneous density on `m × d` matrices (row-major), with a
/// μ-regularized gradient.
pub trait MatrixDensity<T: Real>: Sync {
    fn p(&self) -> T;
    fn value(&self, s: &[T], mu: T) -> T;
    fn grad(&self, s: &[T], mu: T, out: &mut [T]);
}

/// `κ |S|^p` with the Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerDensity<T> {
    pub kappa: T,
    pub p: T,
}

impl<T: Real> MatrixDensity<T> for PowerDensity<T> {
    fn p(&self) -> T {
        self.p
    }

    fn value(&self, s: &[T], mu: T) -> T {
        self.kappa * crate::kernels::ZPart::Norm.value(s, self.p, mu)
    }

    fn grad(&self, s: &[T], mu: T, out: &mut [T]) {
        crate::kernels::ZPart::Norm.grad(s, self.p, mu, out);
        out.iter_mut().for_each(|o| *o = *o * self.kappa);
    }
}

/// `Σ h^d W(∇_h u)` with forward differences `∇_h u(x)_{ca} = (u_c(x + h e_a) - u_c(x)) / h`
/// over cells whose forward neighbours are all active.
pub struct LocalObjective<'a, T: Real, D: MatrixDensity<T>> {
    domain: &'a GridDomain<T>,
    density: &'a D,
    m: usize,
    /// cells with a full forward stencil
    stencil: Vec<bool>,
    strides: Vec<usize>,
}

impl<'a, T: Real, D: MatrixDensity<T>> LocalObjective<'a, T, D> {
    pub fn new(domain: &'a GridDomain<T>, density: &'a D, m: usize) -> Self {
        let d = domain.d();
        let strides = domain.strides();
        let shape = domain.shape();
        let stencil = (0..domain.ncells())
            .map(|i| {
                if !domain.is_active(i) {
                    return false;
                }
                let mi = domain.multi_index(i);
                (0..d).all(|a| mi[a] + 1 < shape[a] && domain.is_active(i + strides[a]))
            })
            .collect();
        LocalObjective { domain, density, m, stencil, strides }
    }

    fn gradient_at(&self, x: &[T], i: usize, s: &mut [T]) {
        let d = self.domain.d();
        let inv_h = T::one() / self.domain.h();
        let m = self.m;
        for c in 0..m {
            for a in 0..d {
                let j = i + self.strides[a];
                s[c * d + a] = (x[j * m + c] - x[i * m + c]) * inv_h;
            }
        }
    }

    fn rows(&self) -> impl Iterator<Item = std::ops::Range<usize>> {
        let n = self.domain.ncells();
        let chunk = 8192;
        (0..n.div_ceil(chunk)).map(move |b| b * chunk..((b + 1) * chunk).min(n))
    }
}

impl<T: Real, D: MatrixDensity<T>> Objective<T> for LocalObjective<'_, T, D> {
    fn m(&self) -> usize {
        self.m
    }

    fn p(&self) -> T {
        self.density.p()
    }

    fn value(&self, x: &[T], mu: T) -> T {
        use rayon::prelude::*;
        let d = self.domain.d();
        let ranges: Vec<_> = self.rows().collect();
        let parts: Vec<T> = ranges
            .into_par_iter()
            .map(|r| {
                let mut s = vec![T::zero(); self.m * d];
                let mut acc = T::zero();
                for i in r {
                    if self.stencil[i] {
                        self.gradient_at(x, i, &mut s);
                        acc = acc + self.density.value(&s, mu);
                    }
                }
                acc
            })
            .collect();
        pairwise_sum(&parts) * self.domain.cell_volume()
    }

    fn value_grad(&self, x: &[T], mu: T, frozen: &[bool], g: &mut [T]) -> Result<T> {
        let d = self.domain.d();
        let m = self.m;
        let vol = self.domain.cell_volume();
        let inv_h = T::one() / self.domain.h();
        let mut s = vec![T::zero(); m * d];
        let mut ds = vec![T::zero(); m * d];
        g.iter_mut().for_each(|v| *v = T::zero());
        let mut parts = Vec::new();
        let p_lt_2 = self.density.p() < T::c(2.0);
        for r in self.rows() {
            let mut acc = T::zero();
            for i in r {
                if !self.stencil[i] {
                    continue;
                }
                self.gradient_at(x, i, &mut s);
                if mu == T::zero() && p_lt_2 && s.iter().all(|&v| v == T::zero()) {
                    let all_frozen = frozen[i] && (0..d).all(|a| frozen[i + self.strides[a]]);
                    if !all_frozen {
                        return Err(Error::SingularGradient);
                    }
                }
                acc = acc + self.density.value(&s, mu);
                self.density.grad(&s, mu, &mut ds);
                for c in 0..m {
                    for a in 0..d {
                        let v = ds[c * d + a] * inv_h * vol;
                        let j = i + self.strides[a];
                        g[j * m + c] = g[j * m + c] + v;
                        g[i * m + c] = g[i * m + c] - v;
                    }
                }
            }
            parts.push(acc);
        }
        for (i, &f) in frozen.iter().enumerate() {
            if f {
                g[i * m..(i + 1) * m].iter_mut().for_each(|v| *v = T::zero());
            }
        }
        Ok(pairwise_sum(&parts) * vol)
    }

    fn difference_scale(&self, x: &[T]) -> T {
        let d = self.domain.d();
        let mut s = vec![T::zero(); self.m * d];
        let mut total = T::zero();
        let mut count = 0usize;
        for i in 0..self.domain.ncells() {
            if self.stencil[i] {
                self.gradient_at(x, i, &mut s);
                total = total + norm(&s);
                count += 1;
            }
        }
        if count == 0 {
            T::zero()
        } else {
            total / T::from_count(count)
        }
    }
}

/// Minimizes the forward-difference discretization of `∫ W(∇u)` under
/// frozen cells.
pub fn minimize_local_dirichlet<T: Real, D: MatrixDensity<T>>(
    density: &D,
    domain: &GridDomain<T>,
    constraints: &ConstraintMask<T>,
    init: &GridFunction<T>,
    opts: &SolveOptions<T>,
) -> Result<(GridFunction<T>, SolveReport<T>)> {
    if !init.domain().same_grid(domain) {
        return Err(Error::GridMismatch("initial field must live on the problem grid".into()));
    }
    let obj = LocalObjective::new(domain, density, init.m());
    minimize_energy(&obj, constraints, init, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::EnergyParams;
    use crate::kernels::KernelSpec;
    use approx::assert_relative_eq;

    fn box2(n: usize) -> GridDomain<f64> {
        GridDomain::from_box(&[0.0, 0.0], &[1.0, 1.0], 1.0 / n as f64).unwrap()
    }

    #[test]
    fn all_frozen_returns_immediately() {
        let dom = box2(4);
        let k = KernelSpec::indicator_ball(2, 1, 1.5, 1.0, 1.0).unwrap();
        let prm = EnergyParams::new(&k, 0.5, None, 0.25).unwrap();
        let obj = NonlocalObjective::new(&dom, &k, &prm, 1).unwrap();
        let c = ConstraintMask::from_rule(&dom, 1, |x| Some(vec![x[0]]));
        let init = GridFunction::zeros(dom.clone(), 1);
        let (u, rep) = minimize_energy(&obj, &c, &init, &SolveOptions::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(c.satisfied_by(u.values()));
    }

    #[test]
    fn quadratic_restart_is_stationary() {
        let dom = GridDomain::<f64>::from_box(&[0.0; 3], &[1.0; 3], 0.125).unwrap();
        let k = KernelSpec::indicator_ball(3, 1, 2.0, 1.0, 1.0).unwrap();
        let prm = EnergyParams::new(&k, 0.25, None, 0.125).unwrap();
        let obj = NonlocalObjective::new(&dom, &k, &prm, 1).unwrap();
        let c = ConstraintMask::from_rule(&dom, 1, |x| {
            if x[0] < 0.2 {
                Some(vec![0.0])
            } else if x[0] > 0.8 {
                Some(vec![1.0])
            } else {
                None
            }
        });
        let init = GridFunction::zeros(dom.clone(), 1);
        let (u, rep) = minimize_energy(&obj, &c, &init, &SolveOptions::default()).unwrap();
        assert!(rep.converged);
        let opts = SolveOptions { reference: Some(rep.reference), ..Default::default() };
        let (_, again) = minimize_energy(&obj, &c, &u, &opts).unwrap();
        assert!(again.iterations <= 1, "{again:?}");
    }

    #[test]
    fn laplace_between_planes_is_linear() {
        let dom = GridDomain::<f64>::from_box(&[0.0, 0.0], &[1.0, 0.25], 1.0 / 16.0).unwrap();
        let dens = PowerDensity { kappa: 1.0, p: 2.0 };
        let c = ConstraintMask::from_rule(&dom, 1, |x| {
            if x[0] < 1.0 / 16.0 {
                Some(vec![0.0])
            } else if x[0] > 15.0 / 16.0 {
                Some(vec![1.0])
            } else {
                None
            }
        });
        let init = GridFunction::zeros(dom.clone(), 1);
        let opts = SolveOptions { tol: 1e-9, ..Default::default() };
        let (u, rep) = minimize_local_dirichlet(&dens, &dom, &c, &init, &opts).unwrap();
        assert!(rep.converged, "{rep:?}");
        for i in 0..dom.ncells() {
            let col = dom.multi_index(i)[0] as f64;
            assert!((u.at(i)[0] - col / 15.0).abs() < 1e-6);
        }
    }

    #[test]
    fn scaling_of_objective() {
        let dom = box2(8);
        let k = KernelSpec::indicator_ball(2, 1, 1.5, 1.0, 1.0).unwrap();
        let prm = EnergyParams::new(&k, 0.25, None, 0.125).unwrap();
        let obj = NonlocalObjective::new(&dom, &k, &prm, 1).unwrap();
        let c = ConstraintMask::from_rule(&dom, 1, |x| {
            let r = ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt();
            if r < 0.15 {
                Some(vec![0.0])
            } else if r > 0.4 {
                Some(vec![1.0])
            } else {
                None
            }
        });
        let init = GridFunction::constant(dom.clone(), &[0.5]);
        let opts = SolveOptions::default();
        let (_, a) = minimize_energy(&obj, &c, &init, &opts).unwrap();
        let (_, b) = minimize_energy(&obj, &c.scaled(2.0), &init.scaled(2.0), &opts).unwrap();
        assert_relative_eq!(b.objective, 2f64.powf(1.5) * a.objective, max_relative = 1e-5);
        assert!(a.stage_objectives.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6)));
    }

    #[test]
    fn clamp_projects() {
        let mut x = vec![3.0, 4.0, 0.1, 0.0];
        project(&mut x, 2, 1.0);
        assert_relative_eq!(x[0], 0.6);
        assert_relative_eq!(x[1], 0.8);
        assert_eq!(&x[2..], &[0.1, 0.0]);
    }
}
