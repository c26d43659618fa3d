//! Nonlocal integrands `f(ξ, z)` with their structural data.
//!
//! Every kernel is positively `p`-homogeneous in `z`, bounded above and below
//! by radial envelopes `M(ξ)|z|^p` and `m(ξ)|z|^p`, and coercive on the short
//! range `|ξ| <= r0` with constant `lambda0`. Built-in families factor as
//! `w(ξ) · g(z)`, which the energy quadrature exploits.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quad;
use crate::real::{norm, Real};

/// Support of `ξ ↦ f(ξ, ·)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support<T> {
    Bounded(T),
    Unbounded,
}

impl<T: Real> Support<T> {
    pub fn radius(&self) -> Option<T> {
        match *self {
            Support::Bounded(r) => Some(r),
            Support::Unbounded => None,
        }
    }

    fn min_with(self, t: T) -> Support<T> {
        match self {
            Support::Bounded(r) => Support::Bounded(r.min(t)),
            Support::Unbounded => Support::Bounded(t),
        }
    }
}

/// User-supplied integrand. Envelopes are mandatory; no sup/inf search is
/// attempted on the caller's behalf.
pub trait CustomIntegrand<T: Real>: Send + Sync {
    fn eval(&self, xi: &[T], z: &[T]) -> T;

    /// μ-regularized value whose z-gradient is [`CustomIntegrand::grad_z`].
    fn eval_regularized(&self, xi: &[T], z: &[T], _mu: T) -> T {
        self.eval(xi, z)
    }

    fn grad_z(&self, xi: &[T], z: &[T], mu: T, out: &mut [T]);

    /// `sup_{|z|=1} f(ξ, z)`.
    fn envelope_max(&self, xi: &[T]) -> T;

    /// `inf_{|z|=1} f(ξ, z)`.
    fn envelope_min(&self, xi: &[T]) -> T;

    /// Whether `f(-ξ, -z) = f(ξ, z)`; enables the half-lattice pair sum.
    fn symmetric(&self) -> bool {
        false
    }
}

/// z-dependence of a separable kernel `w(ξ) g(z)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ZPart<T> {
    /// `g(z) = |z|^p`
    Norm,
    /// `g(z) = c_dir |<a, z>|^p + c_iso |z|^p`
    Aniso { a: Vec<T>, c_dir: T, c_iso: T },
}

/// Kernel family.
#[derive(Clone)]
pub enum Family<T: Real> {
    /// `c · χ_{B_ρ}(ξ) |z|^p`
    IndicatorBall { c: T, rho: T },
    /// `c · exp(-|ξ|²) |z|^p`
    SmoothDecay { c: T },
    /// `χ_{B_ρ}(ξ) (c |<a, z>|^p + c_iso |z|^p)`
    Anisotropic { c: T, c_iso: T, rho: T, a: Vec<T> },
    Custom(Arc<dyn CustomIntegrand<T>>),
}

impl<T: Real> fmt::Debug for Family<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::IndicatorBall { c, rho } => write!(f, "IndicatorBall {{ c: {c}, rho: {rho} }}"),
            Family::SmoothDecay { c } => write!(f, "SmoothDecay {{ c: {c} }}"),
            Family::Anisotropic { c, c_iso, rho, a } => {
                write!(f, "Anisotropic {{ c: {c}, c_iso: {c_iso}, rho: {rho}, a: {a:?} }}")
            }
            Family::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Optional parameters for [`KernelSpec::builtin`]. Missing values fall back
/// to the family defaults (`c = 1`, `rho = 1`, `r0 = rho / 2`, ...).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuiltinParams {
    pub c: Option<f64>,
    pub rho: Option<f64>,
    pub c_iso: Option<f64>,
    pub a: Option<Vec<f64>>,
    pub r0: Option<f64>,
}

/// An evaluable nonlocal integrand with its assumption metadata.
#[derive(Debug, Clone)]
pub struct KernelSpec<T: Real> {
    pub d: usize,
    pub m: usize,
    pub p: T,
    pub r0: T,
    pub lambda0: T,
    pub convex_in_z: bool,
    family: Family<T>,
    truncation: Option<T>,
    name: String,
}

fn check_dims(d: usize, m: usize, p: f64) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!("dimension d = {d} must be at least 2")));
    }
    if m < 1 {
        return Err(Error::InvalidParameter("target dimension m must be at least 1".into()));
    }
    if !(p > 1.0 && p < d as f64) {
        return Err(Error::ExponentRange { p, d });
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

impl<T: Real> KernelSpec<T> {
    /// `c · χ_{B_ρ}(ξ) |z|^p` with `r0 = ρ/2`, `lambda0 = c`.
    pub fn indicator_ball(d: usize, m: usize, p: f64, c: f64, rho: f64) -> Result<Self> {
        Self::builtin(
            "indicator-ball",
            d,
            m,
            p,
            &BuiltinParams { c: Some(c), rho: Some(rho), ..Default::default() },
        )
    }

    /// `c · exp(-|ξ|²) |z|^p` with `r0 = 1/2`, `lambda0 = c e^{-1/4}`.
    pub fn smooth_decay(d: usize, m: usize, p: f64, c: f64) -> Result<Self> {
        Self::builtin("smooth-decay", d, m, p, &BuiltinParams { c: Some(c), ..Default::default() })
    }

    /// Indicator-ball kernel scaled so that its homogenized density is
    /// `|S|^p` (exact for `m = 1`, and for any `m` when `p = 2`).
    pub fn normalized_isotropic(d: usize, m: usize, p: f64, rho: f64) -> Result<Self> {
        check_dims(d, m, p)?;
        let moment = abs_first_coordinate_moment(d, p) * rho.powf(p + d as f64);
        let mut k = Self::indicator_ball(d, m, p, 1.0 / moment, rho)?;
        k.name = "normalized-isotropic".into();
        Ok(k)
    }

    /// Instantiates a built-in family by name: `indicator-ball`,
    /// `smooth-decay` or `anisotropic`.
    pub fn builtin(family: &str, d: usize, m: usize, p: f64, params: &BuiltinParams) -> Result<Self> {
        check_dims(d, m, p)?;
        let c = positive("c", params.c.unwrap_or(1.0))?;
        let (fam, r0, lambda0) = match family {
            "indicator-ball" => {
                let rho = positive("rho", params.rho.unwrap_or(1.0))?;
                let r0 = params.r0.unwrap_or(rho / 2.0);
                if !(r0 > 0.0 && r0 <= rho) {
                    return Err(Error::InvalidParameter(format!("r0 = {r0} must lie in (0, rho]")));
                }
                (Family::IndicatorBall { c: T::c(c), rho: T::c(rho) }, r0, c)
            }
            "smooth-decay" => {
                let r0 = positive("r0", params.r0.unwrap_or(0.5))?;
                (Family::SmoothDecay { c: T::c(c) }, r0, c * (-r0 * r0).exp())
            }
            "anisotropic" => {
                let rho = positive("rho", params.rho.unwrap_or(1.0))?;
                let c_iso = params.c_iso.unwrap_or(1.0);
                let a = params.a.clone().unwrap_or_else(|| {
                    let mut v = vec![0.0; m];
                    v[0] = 1.0;
                    v
                });
                if a.len() != m {
                    return Err(Error::InvalidParameter(format!(
                        "anisotropy direction has length {} but m = {m}",
                        a.len()
                    )));
                }
                if c_iso < 0.0 || (m > 1 && c_iso <= 0.0) {
                    return Err(Error::InvalidParameter(
                        "c_iso must be positive when m > 1 (short-range coercivity)".into(),
                    ));
                }
                let r0 = params.r0.unwrap_or(rho / 2.0);
                if !(r0 > 0.0 && r0 <= rho) {
                    return Err(Error::InvalidParameter(format!("r0 = {r0} must lie in (0, rho]")));
                }
                let an = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let lambda0 = if m == 1 { c * an.powf(p) + c_iso } else { c_iso };
                if lambda0 <= 0.0 {
                    return Err(Error::InvalidParameter("anisotropic kernel is degenerate".into()));
                }
                (
                    Family::Anisotropic {
                        c: T::c(c),
                        c_iso: T::c(c_iso),
                        rho: T::c(rho),
                        a: a.iter().map(|&x| T::c(x)).collect(),
                    },
                    r0,
                    lambda0,
                )
            }
            other => return Err(Error::UnknownFamily(other.to_string())),
        };
        Ok(KernelSpec {
            d,
            m,
            p: T::c(p),
            r0: T::c(r0),
            lambda0: T::c(lambda0),
            convex_in_z: true,
            family: fam,
            truncation: None,
            name: family.to_string(),
        })
    }

    /// Wraps a user integrand. Minimization guarantees are disclaimed when
    /// `convex_in_z` is false.
    pub fn custom(
        d: usize,
        m: usize,
        p: f64,
        r0: f64,
        lambda0: f64,
        support: Support<f64>,
        convex_in_z: bool,
        integrand: Arc<dyn CustomIntegrand<T>>,
    ) -> Result<Self> {
        check_dims(d, m, p)?;
        positive("r0", r0)?;
        positive("lambda0", lambda0)?;
        Ok(KernelSpec {
            d,
            m,
            p: T::c(p),
            r0: T::c(r0),
            lambda0: T::c(lambda0),
            convex_in_z,
            family: Family::Custom(integrand),
            truncation: support.radius().map(T::c),
            name: "custom".into(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn family(&self) -> &Family<T> {
        &self.family
    }

    pub fn truncation(&self) -> Option<T> {
        self.truncation
    }

    /// `f^T(ξ, z) = χ_{B_T}(ξ) f(ξ, z)`.
    pub fn truncate(&self, t: T) -> Result<Self> {
        if !(t > self.r0) {
            return Err(Error::TruncationBelowR0 { t: t.to_f64_lossy(), r0: self.r0.to_f64_lossy() });
        }
        let mut k = self.clone();
        k.truncation = Some(match self.truncation {
            Some(old) => old.min(t),
            None => t,
        });
        Ok(k)
    }

    /// Smallest radius outside of which `f(ξ, ·) = 0`.
    pub fn support(&self) -> Support<T> {
        let base = match &self.family {
            Family::IndicatorBall { rho, .. } | Family::Anisotropic { rho, .. } => Support::Bounded(*rho),
            Family::SmoothDecay { .. } | Family::Custom(_) => Support::Unbounded,
        };
        match self.truncation {
            Some(t) => base.min_with(t),
            None => base,
        }
    }

    /// Support radius, or for unbounded kernels the radius beyond which
    /// `∫ M(ξ)(|ξ|^p + 1) dξ` has relative tail below `tail_tol`.
    pub fn effective_radius(&self, tail_tol: f64) -> T {
        if let Some(r) = self.support().radius() {
            return r;
        }
        let total = self.g1_integral(None);
        let mut r = 1.0;
        while r < 1e3 {
            let inner = self.g1_integral(Some(r));
            if (total - inner).abs() <= tail_tol * total {
                return T::c(r);
            }
            r += 0.25;
        }
        T::c(r)
    }

    /// Whether the pair sum may be restricted to half the shift lattice.
    pub fn is_symmetric(&self) -> bool {
        match &self.family {
            Family::Custom(c) => c.symmetric(),
            _ => true,
        }
    }

    #[inline]
    fn in_truncation(&self, xi: &[T]) -> bool {
        match self.truncation {
            Some(t) => norm(xi) <= t,
            None => true,
        }
    }

    /// Radial weight `w(ξ)` of a separable kernel (truncation included).
    /// Returns `None` for custom kernels.
    #[inline]
    pub fn profile(&self, xi: &[T]) -> Option<T> {
        let r2 = xi.iter().fold(T::zero(), |a, &b| a + b * b);
        if let Some(t) = self.truncation {
            if r2 > t * t {
                return Some(T::zero());
            }
        }
        match &self.family {
            Family::IndicatorBall { c, rho } => Some(if r2 <= *rho * *rho { *c } else { T::zero() }),
            Family::SmoothDecay { c } => Some(*c * (-r2).exp()),
            Family::Anisotropic { rho, .. } => Some(if r2 <= *rho * *rho { T::one() } else { T::zero() }),
            Family::Custom(_) => None,
        }
    }

    /// z-part of a separable kernel.
    pub fn zpart(&self) -> Option<ZPart<T>> {
        match &self.family {
            Family::IndicatorBall { .. } | Family::SmoothDecay { .. } => Some(ZPart::Norm),
            Family::Anisotropic { c, c_iso, a, .. } => {
                Some(ZPart::Aniso { a: a.clone(), c_dir: *c, c_iso: *c_iso })
            }
            Family::Custom(_) => None,
        }
    }

    /// `f(ξ, z)`.
    pub fn eval(&self, xi: &[T], z: &[T]) -> T {
        match &self.family {
            Family::Custom(c) => {
                if self.in_truncation(xi) {
                    c.eval(xi, z)
                } else {
                    T::zero()
                }
            }
            _ => {
                let w = self.profile(xi).unwrap_or_else(T::zero);
                if w == T::zero() {
                    return T::zero();
                }
                w * self.zpart().map(|zp| zp.value(z, self.p, T::zero())).unwrap_or_else(T::zero)
            }
        }
    }

    /// μ-regularized `f`, consistent with [`KernelSpec::grad_z`]; equal to
    /// [`KernelSpec::eval`] at `μ = 0`.
    pub fn eval_regularized(&self, xi: &[T], z: &[T], mu: T) -> T {
        match &self.family {
            Family::Custom(c) => {
                if self.in_truncation(xi) {
                    c.eval_regularized(xi, z, mu)
                } else {
                    T::zero()
                }
            }
            _ => {
                let w = self.profile(xi).unwrap_or_else(T::zero);
                if w == T::zero() {
                    return T::zero();
                }
                w * self.zpart().map(|zp| zp.value(z, self.p, mu)).unwrap_or_else(T::zero)
            }
        }
    }

    /// μ-regularized partial gradient in `z`, written to `out`.
    pub fn grad_z(&self, xi: &[T], z: &[T], mu: T, out: &mut [T]) {
        match &self.family {
            Family::Custom(c) => {
                if self.in_truncation(xi) {
                    c.grad_z(xi, z, mu, out)
                } else {
                    out.iter_mut().for_each(|o| *o = T::zero());
                }
            }
            _ => {
                let w = self.profile(xi).unwrap_or_else(T::zero);
                let zp = self.zpart().expect("separable");
                zp.grad(z, self.p, mu, out);
                out.iter_mut().for_each(|o| *o = *o * w);
            }
        }
    }

    /// `M(ξ) = sup_{|z|=1} f(ξ, z)`.
    pub fn envelope_max(&self, xi: &[T]) -> T {
        if !self.in_truncation(xi) {
            return T::zero();
        }
        match &self.family {
            Family::Custom(c) => c.envelope_max(xi),
            Family::Anisotropic { c, c_iso, a, .. } => {
                let w = self.profile(xi).unwrap_or_else(T::zero);
                w * (*c * norm(a).powf(self.p) + *c_iso)
            }
            _ => self.profile(xi).unwrap_or_else(T::zero),
        }
    }

    /// `m(ξ) = inf_{|z|=1} f(ξ, z)`.
    pub fn envelope_min(&self, xi: &[T]) -> T {
        if !self.in_truncation(xi) {
            return T::zero();
        }
        match &self.family {
            Family::Custom(c) => c.envelope_min(xi),
            Family::Anisotropic { c, c_iso, a, .. } => {
                let w = self.profile(xi).unwrap_or_else(T::zero);
                if self.m == 1 {
                    w * (*c * norm(a).powf(self.p) + *c_iso)
                } else {
                    w * *c_iso
                }
            }
            _ => self.profile(xi).unwrap_or_else(T::zero),
        }
    }

    /// Spherical average of `M(r θ)`, used by the radial quadratures.
    fn envelope_max_radial(&self, r: f64, dirs: &[Vec<f64>]) -> f64 {
        let mut acc = 0.0;
        let mut xi = vec![T::zero(); self.d];
        for dir in dirs {
            for (x, &t) in xi.iter_mut().zip(dir) {
                *x = T::c(r * t);
            }
            acc += self.envelope_max(&xi).to_f64_lossy();
        }
        acc / dirs.len() as f64
    }

    fn radial_breaks(&self) -> (Vec<f64>, f64) {
        let mut breaks = Vec::new();
        if let Some(r) = self.support().radius() {
            breaks.push(r.to_f64_lossy());
        }
        if let Family::IndicatorBall { rho, .. } | Family::Anisotropic { rho, .. } = &self.family {
            breaks.push(rho.to_f64_lossy());
        }
        let rmax = match self.support().radius() {
            Some(r) => r.to_f64_lossy(),
            None => 12.0,
        };
        (breaks, rmax)
    }

    /// `∫ M(ξ)(|ξ|^p + 1) dξ` (restricted to `|ξ| <= cut` when given).
    pub fn g1_integral(&self, cut: Option<f64>) -> f64 {
        let p = self.p.to_f64_lossy();
        let dirs = quad::unit_directions(self.d, if self.is_radial() { 1 } else { 64 });
        let (mut breaks, mut rmax) = self.radial_breaks();
        if let Some(c) = cut {
            rmax = rmax.min(c);
            breaks.push(c);
        }
        quad::radial_integral(self.d, |r| self.envelope_max_radial(r, &dirs) * (r.powf(p) + 1.0), &breaks, rmax)
    }

    /// `M_0 = ∫ M(ξ)|ξ|^p dξ`, the upper growth constant of `f_hom`.
    pub fn upper_moment(&self) -> f64 {
        let p = self.p.to_f64_lossy();
        let dirs = quad::unit_directions(self.d, if self.is_radial() { 1 } else { 64 });
        let (breaks, rmax) = self.radial_breaks();
        quad::radial_integral(self.d, |r| self.envelope_max_radial(r, &dirs) * r.powf(p), &breaks, rmax)
    }

    fn is_radial(&self) -> bool {
        !matches!(self.family, Family::Custom(_))
    }

    /// Samples the structural assumptions; violations are reported, never
    /// raised.
    pub fn verify_assumptions(&self, samples: usize, seed: u64) -> AssumptionReport {
        let samples = samples.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = self.p.to_f64_lossy();
        let reach = self.effective_radius(1e-10).to_f64_lossy() * 1.2;
        let d = self.d;
        let m = self.m;
        let tiny = 1e-30;

        let sample_ball = |rng: &mut ChaCha8Rng, radius: f64| -> Vec<T> {
            loop {
                let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                    return v.iter().map(|x| T::c(x * radius)).collect();
                }
            }
        };
        let sample_z = |rng: &mut ChaCha8Rng| -> Vec<T> {
            let scale = 10f64.powf(rng.gen_range(-1.0..1.0));
            (0..m).map(|_| T::c(rng.gen_range(-1.0..1.0) * scale)).collect()
        };

        let mut homogeneity = 0.0f64;
        let mut envelope = 0.0f64;
        let mut lipschitz = 0.0f64;
        let mut zero_value = 0.0f64;
        for _ in 0..samples {
            let xi = sample_ball(&mut rng, reach);
            let z = sample_z(&mut rng);
            let t: f64 = rng.gen_range(1e-3..=10.0);
            let f = self.eval(&xi, &z).to_f64_lossy();
            let tz: Vec<T> = z.iter().map(|&v| v * T::c(t)).collect();
            let ft = self.eval(&xi, &tz).to_f64_lossy();
            let target = t.powf(p) * f;
            homogeneity = homogeneity.max((ft - target).abs() / (target.abs() + tiny));

            let zn = norm(&z).to_f64_lossy();
            let lo = self.envelope_min(&xi).to_f64_lossy() * zn.powf(p);
            let hi = self.envelope_max(&xi).to_f64_lossy() * zn.powf(p);
            let viol = (lo - f).max(f - hi).max(0.0) / (hi.abs() + tiny);
            envelope = envelope.max(viol);

            zero_value = zero_value.max(self.eval(&xi, &vec![T::zero(); m]).to_f64_lossy().abs());

            let w = sample_z(&mut rng);
            let fw = self.eval(&xi, &w).to_f64_lossy();
            let mx = self.envelope_max(&xi).to_f64_lossy();
            let diff: Vec<T> = w.iter().zip(&z).map(|(&a, &b)| a - b).collect();
            let dn = norm(&diff).to_f64_lossy();
            let wn = norm(&w).to_f64_lossy();
            let denom = mx * (zn.powf(p - 1.0) + wn.powf(p - 1.0)) * dn;
            if denom > 0.0 {
                lipschitz = lipschitz.max((fw - f).abs() / denom);
            }
        }

        let mut min_short = f64::INFINITY;
        for _ in 0..samples {
            let xi = sample_ball(&mut rng, self.r0.to_f64_lossy());
            min_short = min_short.min(self.envelope_min(&xi).to_f64_lossy());
        }
        let lambda0 = self.lambda0.to_f64_lossy();

        let g1 = self.g1_integral(None);
        let g1_finite = g1.is_finite()
            && match self.support() {
                Support::Bounded(_) => true,
                Support::Unbounded => {
                    let r = self.effective_radius(1e-10).to_f64_lossy();
                    (g1 - self.g1_integral(Some(r))).abs() <= 1e-8 * g1
                }
            };

        AssumptionReport {
            samples,
            homogeneity_violation: homogeneity,
            envelope_violation: envelope,
            zero_at_origin: zero_value,
            min_short_range_envelope: min_short,
            lambda0,
            short_range_ok: min_short >= lambda0 * (1.0 - 1e-12),
            g1_integral: g1,
            g1_finite,
            lipschitz_constant: lipschitz,
        }
    }
}

impl<T: Real> ZPart<T> {
    /// `g_μ(z)`: regularized value, exact at `μ = 0`.
    #[inline]
    pub fn value(&self, z: &[T], p: T, mu: T) -> T {
        let half = p / T::c(2.0);
        let reg = |s2: T| -> T {
            if mu == T::zero() {
                s2.powf(half)
            } else {
                (s2 + mu * mu).powf(half) - mu.powf(p)
            }
        };
        let n2 = z.iter().fold(T::zero(), |a, &b| a + b * b);
        match self {
            ZPart::Norm => reg(n2),
            ZPart::Aniso { a, c_dir, c_iso } => {
                let s = a.iter().zip(z).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                *c_dir * reg(s * s) + *c_iso * reg(n2)
            }
        }
    }

    /// Gradient of [`ZPart::value`]; at `μ = 0`, `z = 0`, `p < 2` the
    /// singular term is set to zero.
    #[inline]
    pub fn grad(&self, z: &[T], p: T, mu: T, out: &mut [T]) {
        let expo = p / T::c(2.0) - T::one();
        let factor = |s2: T| -> T {
            let base = s2 + mu * mu;
            if base == T::zero() {
                T::zero()
            } else {
                p * base.powf(expo)
            }
        };
        let n2 = z.iter().fold(T::zero(), |a, &b| a + b * b);
        match self {
            ZPart::Norm => {
                let f = factor(n2);
                for (o, &v) in out.iter_mut().zip(z) {
                    *o = f * v;
                }
            }
            ZPart::Aniso { a, c_dir, c_iso } => {
                let s = a.iter().zip(z).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                let fd = *c_dir * factor(s * s) * s;
                let fi = *c_iso * factor(n2);
                for ((o, &v), &ai) in out.iter_mut().zip(z).zip(a) {
                    *o = fd * ai + fi * v;
                }
            }
        }
    }
}

/// `∫_{B_1} |ξ_1|^p dξ` in R^d.
pub fn abs_first_coordinate_moment(d: usize, p: f64) -> f64 {
    let n = d as f64;
    let sphere = 2.0 * std::f64::consts::PI.powf((n - 1.0) / 2.0) * quad::gamma((p + 1.0) / 2.0)
        / quad::gamma((p + n) / 2.0);
    sphere / (p + n)
}

/// Outcome of [`KernelSpec::verify_assumptions`].
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub samples: usize,
    /// max relative `|f(ξ,tz) - t^p f(ξ,z)| / (t^p f(ξ,z))`
    pub homogeneity_violation: f64,
    /// max relative violation of `m(ξ)|z|^p <= f(ξ,z) <= M(ξ)|z|^p`
    pub envelope_violation: f64,
    /// max `|f(ξ, 0)|`
    pub zero_at_origin: f64,
    pub min_short_range_envelope: f64,
    pub lambda0: f64,
    pub short_range_ok: bool,
    /// `∫ M(ξ)(|ξ|^p + 1) dξ`
    pub g1_integral: f64,
    pub g1_finite: bool,
    /// smallest `C` with `|f(ξ,w)-f(ξ,z)| <= C M(ξ)(|z|^{p-1}+|w|^{p-1})|w-z|` on the samples
    pub lipschitz_constant: f64,
}

impl AssumptionReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.homogeneity_violation <= tol
            && self.envelope_violation <= tol
            && self.zero_at_origin == 0.0
            && self.short_range_ok
            && self.g1_finite
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn ball() -> KernelSpec<f64> {
        KernelSpec::indicator_ball(3, 1, 2.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn indicator_ball_support_and_values() {
        let k = ball();
        assert_eq!(k.support(), Support::Bounded(1.0));
        assert_eq!(k.eval(&[2.0, 0.0, 0.0], &[1.0]), 0.0);
        assert_eq!(k.eval(&[0.5, 0.0, 0.0], &[3.0]), 9.0);
        assert!(k.convex_in_z);
    }

    #[test]
    fn rejects_bad_family_and_exponent() {
        assert!(matches!(
            KernelSpec::<f64>::builtin("cauchy", 3, 1, 2.0, &BuiltinParams::default()),
            Err(Error::UnknownFamily(_))
        ));
        assert!(matches!(
            KernelSpec::<f64>::indicator_ball(3, 1, 3.0, 1.0, 1.0),
            Err(Error::ExponentRange { .. })
        ));
        assert!(matches!(
            KernelSpec::<f64>::indicator_ball(2, 1, 1.0, 1.0, 1.0),
            Err(Error::ExponentRange { .. })
        ));
    }

    #[test]
    fn truncation() {
        let k = ball().truncate(2.0).unwrap();
        assert_eq!(k.support(), Support::Bounded(1.0));
        assert_eq!(k.eval(&[0.5, 0.0, 0.0], &[3.0]), 9.0);

        let s = KernelSpec::<f64>::smooth_decay(3, 1, 2.0, 1.0).unwrap().truncate(3.0).unwrap();
        assert_eq!(s.support(), Support::Bounded(3.0));
        assert_eq!(s.eval(&[4.0, 0.0, 0.0], &[1.0]), 0.0);
        assert_relative_eq!(s.eval(&[2.0, 0.0, 0.0], &[1.0]), (-4.0f64).exp(), max_relative = 1e-15);

        assert!(matches!(ball().truncate(0.4), Err(Error::TruncationBelowR0 { .. })));
    }

    #[test]
    fn envelopes_bracket_anisotropic() {
        let k = KernelSpec::<f64>::builtin(
            "anisotropic",
            2,
            2,
            1.5,
            &BuiltinParams { c: Some(2.0), c_iso: Some(0.5), a: Some(vec![0.6, 0.8]), ..Default::default() },
        )
        .unwrap();
        let xi = [0.3, 0.1];
        assert_relative_eq!(k.envelope_max(&xi), 2.5);
        assert_relative_eq!(k.envelope_min(&xi), 0.5);
        // along a
        assert_relative_eq!(k.eval(&xi, &[0.6, 0.8]), 2.5, max_relative = 1e-14);
        // orthogonal to a
        assert_relative_eq!(k.eval(&xi, &[0.8, -0.6]), 0.5, max_relative = 1e-14);
    }

    #[test]
    fn g1_integral_indicator_ball() {
        let r = ball().verify_assumptions(2_000, 1);
        assert_relative_eq!(r.g1_integral, 4.0 * PI / 5.0 + 4.0 * PI / 3.0, max_relative = 1e-8);
        assert!(r.g1_finite);
    }

    #[test]
    fn verify_builtins() {
        let r = ball().verify_assumptions(10_000, 7);
        assert!(r.homogeneity_violation <= 1e-12, "{r:?}");
        assert!(r.passed(1e-12));
        // |w^2 - z^2| = |w + z||w - z| <= (|z| + |w|)|w - z|
        assert!(r.lipschitz_constant <= 1.0 + 1e-12);
        assert!(r.lipschitz_constant > 0.9);

        let s = KernelSpec::<f64>::smooth_decay(3, 2, 1.5, 1.0).unwrap();
        let r = s.verify_assumptions(2_000, 3);
        assert!(r.passed(1e-12), "{r:?}");
    }

    #[test]
    fn normalized_kernel_moment() {
        assert_relative_eq!(abs_first_coordinate_moment(3, 2.0), 4.0 * PI / 15.0, max_relative = 1e-12);
        assert_relative_eq!(abs_first_coordinate_moment(2, 2.0), PI / 4.0, max_relative = 1e-12);
        let k = KernelSpec::<f64>::normalized_isotropic(3, 1, 2.0, 1.0).unwrap();
        if let Family::IndicatorBall { c, .. } = k.family() {
            assert_relative_eq!(*c, 15.0 / (4.0 * PI), max_relative = 1e-12);
        } else {
            panic!("wrong family");
        }
    }

    #[test]
    fn smooth_decay_effective_radius() {
        let s = KernelSpec::<f64>::smooth_decay(3, 1, 2.0, 1.0).unwrap();
        let r = s.effective_radius(1e-10);
        assert!(r > 4.0 && r < 7.0, "{r}");
    }

    #[test]
    fn f32_kernel_evaluates() {
        let k = KernelSpec::<f32>::indicator_ball(3, 1, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(k.eval(&[0.5, 0.0, 0.0], &[3.0]), 9.0f32);
    }
}
