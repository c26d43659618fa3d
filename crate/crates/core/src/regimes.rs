//! Scaling regimes of perforated nonlocal energies: classification of
//! `(eps, δ, r_δ)` laws, the limit functionals, the negligibility bound of
//! the supercritical regime and the single-cell recovery construction.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::capacity::{approx_problem, phi_approx_unchecked, MIN_RESOLUTION};
use crate::energy::{nonlocal_energy, pinned_energy, EnergyParams, Extended};
use crate::error::{Error, Result};
use crate::fields::{cell_average, GridFunction, Perforation};
use crate::homogenize::HomDensity;
use crate::kernels::{KernelSpec, ZPart};
use crate::minimize::{MatrixDensity, SolveOptions};
use crate::real::{norm, pairwise_sum};

/// Limit of a scale ratio along `eps → 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Limit {
    Finite(f64),
    Infinite,
}

impl Limit {
    pub fn is_zero(self) -> bool {
        self == Limit::Finite(0.0)
    }

    /// Finite and positive.
    pub fn is_positive(self) -> bool {
        matches!(self, Limit::Finite(v) if v > 0.0)
    }
}

impl fmt::Display for Limit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Limit::Finite(v) => write!(f, "{v}"),
            Limit::Infinite => write!(f, "inf"),
        }
    }
}

type ScaleMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `eps ↦ δ_eps`, `δ ↦ r_δ` with the declared limits
/// `β = lim r_δ / δ^{d/(d-p)}` and `α = lim eps / r_{δ_eps}`, and the flag
/// `cond_b`: `eps / (r_δ/δ)^{d/p} → ∞`.
#[derive(Clone)]
pub struct ScalingLaw {
    pub name: String,
    pub d: usize,
    pub p: f64,
    delta_of_eps: ScaleMap,
    r_of_delta: ScaleMap,
    pub beta: Limit,
    pub alpha: Limit,
    pub cond_b: bool,
}

impl fmt::Debug for ScalingLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalingLaw")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("p", &self.p)
            .field("beta", &self.beta)
            .field("alpha", &self.alpha)
            .field("cond_b", &self.cond_b)
            .finish()
    }
}

/// Probe values of `eps` used to validate declared limits.
pub const PROBES: [f64; 3] = [1e-2, 1e-3, 1e-4];

const PROBE_TOL: f64 = 0.2;

impl ScalingLaw {
    /// Builds a law and validates the declared limits on [`PROBES`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        d: usize,
        p: f64,
        delta_of_eps: impl Fn(f64) -> f64 + Send + Sync + 'static,
        r_of_delta: impl Fn(f64) -> f64 + Send + Sync + 'static,
        beta: Limit,
        alpha: Limit,
        cond_b: bool,
    ) -> Result<Self> {
        if !(p > 1.0 && p < d as f64) {
            return Err(Error::ExponentRange { p, d });
        }
        let law = ScalingLaw {
            name: name.to_string(),
            d,
            p,
            delta_of_eps: Arc::new(delta_of_eps),
            r_of_delta: Arc::new(r_of_delta),
            beta,
            alpha,
            cond_b,
        };
        law.validate(&PROBES)?;
        Ok(law)
    }

    /// `δ = c_δ eps^a`, `r = c_r δ^b`, limits derived from the exponents.
    pub fn power(name: &str, d: usize, p: f64, c_delta: f64, a: f64, c_r: f64, b: f64) -> Result<Self> {
        const TOL: f64 = 1e-12;
        let q = d as f64 / (d as f64 - p);
        let beta = if (b - q).abs() < TOL {
            Limit::Finite(c_r)
        } else if b > q {
            Limit::Finite(0.0)
        } else {
            Limit::Infinite
        };
        // eps / r = eps^{1 - ab} / (c_r c_δ^b)
        let alpha = if (a * b - 1.0).abs() < TOL {
            Limit::Finite(1.0 / (c_r * c_delta.powf(b)))
        } else if a * b < 1.0 {
            Limit::Finite(0.0)
        } else {
            Limit::Infinite
        };
        // eps / (r/δ)^{d/p} ~ eps^{1 - a(b-1)d/p}
        let cond_b = 1.0 - a * (b - 1.0) * d as f64 / p < -TOL;
        Self::new(name, d, p, move |e| c_delta * e.powf(a), move |dl| c_r * dl.powf(b), beta, alpha, cond_b)
    }

    pub fn delta(&self, eps: f64) -> f64 {
        (self.delta_of_eps)(eps)
    }

    pub fn r(&self, delta: f64) -> f64 {
        (self.r_of_delta)(delta)
    }

    /// `(δ, r_δ)` at `eps`.
    pub fn scales(&self, eps: f64) -> (f64, f64) {
        let delta = self.delta(eps);
        (delta, self.r(delta))
    }

    /// Checks `r < δ/2` and the declared limits on decreasing probe values:
    /// positive limits within 20%, zero limits decreasing, infinite ones
    /// increasing.
    pub fn validate(&self, probes: &[f64]) -> Result<()> {
        let d = self.d as f64;
        let q = d / (d - self.p);
        let mut qb = Vec::new();
        let mut qa = Vec::new();
        let mut qc = Vec::new();
        for &e in probes {
            let (delta, r) = self.scales(e);
            if !(r > 0.0 && r < delta / 2.0) {
                return Err(Error::InvalidParameter(format!(
                    "law `{}`: r = {r} must lie in (0, δ/2) with δ = {delta} at eps = {e}",
                    self.name
                )));
            }
            qb.push(r / delta.powf(q));
            qa.push(e / r);
            qc.push(e / (r / delta).powf(d / self.p));
        }
        let check = |what: &str, lim: Limit, vals: &[f64]| -> Result<()> {
            let ok = match lim {
                Limit::Finite(v) if v > 0.0 => vals.iter().all(|&x| ((x - v) / v).abs() <= PROBE_TOL),
                Limit::Finite(_) => vals.windows(2).all(|w| w[1] < w[0]),
                Limit::Infinite => vals.windows(2).all(|w| w[1] > w[0]),
            };
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "law `{}`: declared {what} = {lim} inconsistent with probes {vals:?}",
                    self.name
                )))
            }
        };
        check("beta", self.beta, &qb)?;
        check("alpha", self.alpha, &qa)?;
        let grows = qc.windows(2).all(|w| w[1] > w[0]);
        if grows != self.cond_b {
            return Err(Error::InvalidParameter(format!(
                "law `{}`: condition (b) declared {} but probes give {qc:?}",
                self.name, self.cond_b
            )));
        }
        Ok(())
    }
}

/// Cell of the regime table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegimeClass {
    Unconstrained,
    LocalCapacitary { beta: f64 },
    NonlocalCapacitary { alpha: f64, beta: f64 },
    TrivialCollapse,
    Uncharacterized,
}

impl RegimeClass {
    pub fn tag(&self) -> &'static str {
        match self {
            RegimeClass::Unconstrained => "Unconstrained",
            RegimeClass::LocalCapacitary { .. } => "LocalCapacitary",
            RegimeClass::NonlocalCapacitary { .. } => "NonlocalCapacitary",
            RegimeClass::TrivialCollapse => "TrivialCollapse",
            RegimeClass::Uncharacterized => "Uncharacterized",
        }
    }

    /// Form of the Γ-limit in this cell.
    pub fn limit_form(&self) -> &'static str {
        match self {
            RegimeClass::Unconstrained => "int f_hom(grad u)",
            RegimeClass::LocalCapacitary { .. } => "int f_hom(grad u) + beta^(d-p) int phi(u)",
            RegimeClass::NonlocalCapacitary { .. } => "int f_hom(grad u) + beta^(d-p) int phi_NL_alpha(u)",
            RegimeClass::TrivialCollapse => "0 iff u = 0, +inf otherwise",
            RegimeClass::Uncharacterized => "not characterized",
        }
    }
}

/// Pure function of `(α, β, cond_b)`.
pub fn classify_regime(law: &ScalingLaw) -> RegimeClass {
    match (law.alpha, law.beta) {
        (Limit::Infinite, Limit::Finite(_)) => RegimeClass::Unconstrained,
        (Limit::Infinite, Limit::Infinite) => {
            if law.cond_b {
                RegimeClass::Unconstrained
            } else {
                RegimeClass::Uncharacterized
            }
        }
        (_, Limit::Infinite) => RegimeClass::TrivialCollapse,
        (_, b) if b.is_zero() => RegimeClass::Unconstrained,
        (Limit::Finite(a), Limit::Finite(b)) if a == 0.0 => RegimeClass::LocalCapacitary { beta: b },
        (Limit::Finite(a), Limit::Finite(b)) => RegimeClass::NonlocalCapacitary { alpha: a, beta: b },
    }
}

/// The six canonical laws (`d = 3`, `p = 2`) with their expected cells.
pub fn canonical_fixtures() -> Result<Vec<(ScalingLaw, RegimeClass)>> {
    let (d, p) = (3, 2.0);
    Ok(vec![
        (
            // r = δ³, eps = r²
            ScalingLaw::power("local-capacitary", d, p, 1.0, 1.0 / 6.0, 1.0, 3.0)?,
            RegimeClass::LocalCapacitary { beta: 1.0 },
        ),
        (
            // r = δ³, eps = r
            ScalingLaw::power("nonlocal-capacitary", d, p, 1.0, 1.0 / 3.0, 1.0, 3.0)?,
            RegimeClass::NonlocalCapacitary { alpha: 1.0, beta: 1.0 },
        ),
        (
            // r = δ/4, eps = r
            ScalingLaw::power("trivial-collapse", d, p, 4.0, 1.0, 0.25, 1.0)?,
            RegimeClass::TrivialCollapse,
        ),
        (
            // r = δ⁴, eps = r
            ScalingLaw::power("vanishing-beta", d, p, 1.0, 0.25, 1.0, 4.0)?,
            RegimeClass::Unconstrained,
        ),
        (
            // r = δ³, eps = δ
            ScalingLaw::power("slow-eps-critical", d, p, 1.0, 1.0, 1.0, 3.0)?,
            RegimeClass::Unconstrained,
        ),
        (
            // r = δ^{3/2}, eps = δ
            ScalingLaw::power("slow-eps-dense", d, p, 1.0, 1.0, 1.0, 1.5)?,
            RegimeClass::Uncharacterized,
        ),
    ])
}

/// Capacitary density sampled at finitely many `z`, extended
/// p-homogeneously along the nearest sampled direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    pub p: f64,
    entries: Vec<(Vec<f64>, f64)>,
}

impl DensityTable {
    pub fn new(p: f64, entries: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if entries.is_empty() || entries.iter().any(|(z, v)| norm(z) == 0.0 || !v.is_finite()) {
            return Err(Error::MissingTable("density table needs finite values at nonzero z".into()));
        }
        Ok(DensityTable { p, entries })
    }

    pub fn entries(&self) -> &[(Vec<f64>, f64)] {
        &self.entries
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let nz = norm(z);
        if nz == 0.0 {
            return 0.0;
        }
        let cos = |w: &[f64]| z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / (nz * norm(w));
        let best = self.entries.iter().map(|(w, _)| cos(w)).fold(f64::NEG_INFINITY, f64::max);
        // (|w|, φ(w)/|w|^p) along the chosen direction, sorted by |w|
        let mut line: Vec<(f64, f64)> = self
            .entries
            .iter()
            .filter(|(w, _)| cos(w) >= best - 1e-9)
            .map(|(w, v)| (norm(w), v / norm(w).powf(self.p)))
            .collect();
        line.sort_by(|a, b| a.0.total_cmp(&b.0));
        let c = if nz <= line[0].0 {
            line[0].1
        } else if nz >= line[line.len() - 1].0 {
            line[line.len() - 1].1
        } else {
            let j = line.iter().position(|q| q.0 >= nz).unwrap_or(line.len() - 1);
            let (a, b) = (line[j - 1], line[j]);
            a.1 + (b.1 - a.1) * (nz - a.0) / (b.0 - a.0)
        };
        c * nz.powf(self.p)
    }
}

/// `Σ h^d W(∇_h u)` with forward differences, backward on the last layer,
/// so that affine fields integrate exactly.
fn bulk_term<D: MatrixDensity<f64>>(dens: &D, u: &GridFunction<f64>) -> f64 {
    let dom = u.domain();
    let d = dom.d();
    let m = u.m();
    let h = dom.h();
    let strides = dom.strides();
    let shape = dom.shape();
    let terms: Vec<f64> = (0..dom.ncells())
        .into_par_iter()
        .map(|i| {
            if !dom.is_active(i) {
                return 0.0;
            }
            let multi = dom.multi_index(i);
            let mut s = vec![0.0; m * d];
            for a in 0..d {
                let fwd = multi[a] + 1 < shape[a] && dom.is_active(i + strides[a]);
                let bwd = multi[a] > 0 && dom.is_active(i - strides[a]);
                let (lo, hi) = if fwd {
                    (i, i + strides[a])
                } else if bwd {
                    (i - strides[a], i)
                } else {
                    continue;
                };
                for c in 0..m {
                    s[c * d + a] = (u.at(hi)[c] - u.at(lo)[c]) / h;
                }
            }
            dens.value(&s, 0.0)
        })
        .collect();
    dom.cell_volume() * pairwise_sum(&terms)
}

/// Γ-limit of the given regime at `u`: bulk `∫ f_hom(∇u)` plus, in the
/// capacitary cells, `β^{d-p} Σ h^d φ(u)` with `φ` from `table`.
pub fn limit_functional(
    k: &KernelSpec<f64>,
    class: &RegimeClass,
    u: &GridFunction<f64>,
    table: Option<&DensityTable>,
) -> Result<Extended<f64>> {
    let dom = u.domain();
    match class {
        RegimeClass::Uncharacterized => {
            return Err(Error::InvalidParameter("the limit is not characterized in this regime".into()))
        }
        RegimeClass::TrivialCollapse => {
            let zero = dom.active_indices().into_iter().all(|i| u.at(i).iter().all(|&v| v == 0.0));
            return Ok(if zero { Extended::Finite(0.0) } else { Extended::Infeasible });
        }
        _ => {}
    }
    let dens = HomDensity::new(k, 1)?;
    let bulk = bulk_term(&dens, u);
    let beta = match class {
        RegimeClass::LocalCapacitary { beta } | RegimeClass::NonlocalCapacitary { beta, .. } => *beta,
        _ => return Ok(Extended::Finite(bulk)),
    };
    let table = table.ok_or_else(|| Error::MissingTable("capacitary density".into()))?;
    let terms: Vec<f64> = dom.active_indices().into_iter().map(|i| table.eval(u.at(i))).collect();
    let reaction = beta.powf(dom.d() as f64 - k.p) * dom.cell_volume() * pairwise_sum(&terms);
    Ok(Extended::Finite(bulk + reaction))
}

/// Grid used by [`negligibility_check`]: the box `[-half, half]^d` with step
/// `h`. Must contain every perforation together with its interaction range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegligibilityGrid {
    pub half: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegligibilityRow {
    pub eps: f64,
    pub delta: f64,
    pub r: f64,
    pub h: f64,
    pub pinned_cells: usize,
    /// `F_eps(u_j) - F_eps(u)`
    pub gap: f64,
    /// `r^d / (eps^p δ^d)`
    pub bound: f64,
    pub ratio: f64,
    /// `gap <= C_recorded · bound` with `C_recorded` the first ratio
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegligibilityTable {
    pub rows: Vec<NegligibilityRow>,
    pub c_recorded: f64,
    pub all_within: bool,
}

fn integer_ratio(x: f64, h: f64, what: &str) -> Result<i64> {
    let n = (x / h).round();
    if ((x / h) - n).abs() > 1e-6 {
        return Err(Error::NonCommensurate(format!("{what} = {x} is not a multiple of h = {h}")));
    }
    Ok(n as i64)
}

/// Cells (integer indices from the box origin) pinned by `B_r(δ i)`: centers
/// within `r` of a lattice point, plus the cell whose lower corner is the
/// lattice point.
fn pinned_cells(d: usize, delta: f64, r: f64, h: f64, n: i64, half_cells: i64) -> Result<Vec<Vec<i64>>> {
    let step = integer_ratio(delta, h, "delta")?;
    let reach = (r / h).ceil() as i64 + 1;
    let imax = half_cells / step;
    let mut set = HashSet::new();
    let mut i = vec![-imax; d];
    loop {
        // lattice point as a vertex index
        let v: Vec<i64> = i.iter().map(|&c| c * step + half_cells).collect();
        if v.iter().all(|&x| x >= 0 && x < n) {
            set.insert(v.clone());
        }
        let mut o = vec![-reach; d];
        loop {
            let cell: Vec<i64> = v.iter().zip(&o).map(|(a, b)| a + b).collect();
            if cell.iter().all(|&x| x >= 0 && x < n) {
                let dist2: f64 = o.iter().map(|&b| ((b as f64 + 0.5) * h).powi(2)).sum();
                if dist2 <= r * r {
                    set.insert(cell);
                }
            }
            if !odometer(&mut o, -reach, reach - 1) {
                break;
            }
        }
        if !odometer(&mut i, -imax, imax) {
            break;
        }
    }
    let mut cells: Vec<Vec<i64>> = set.into_iter().collect();
    cells.sort();
    Ok(cells)
}

fn odometer(idx: &mut [i64], lo: i64, hi: i64) -> bool {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] <= hi {
            return true;
        }
        idx[a] = lo;
    }
    false
}

/// Exact `F_eps(u_j) - F_eps(u)` on the box, where `u_j` is `u` zeroed on the
/// pinned cells; only pairs touching a pinned cell are visited, so the box
/// is never materialized.
fn pinning_gap(
    k: &KernelSpec<f64>,
    params: &EnergyParams<f64>,
    u: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    grid: &NegligibilityGrid,
    n: i64,
    pinned: &[Vec<i64>],
) -> f64 {
    let d = k.d;
    let h = grid.h;
    let inv = 1.0 / params.epsilon;
    let p = k.p;
    let set: HashSet<&[i64]> = pinned.iter().map(|c| c.as_slice()).collect();
    let zpart = if params.separable { k.zpart() } else { None };
    let term = |xi: &[f64], diff: &[f64]| -> f64 {
        match &zpart {
            Some(ZPart::Norm) => norm(diff).powf(p),
            Some(zp) => zp.value(diff, p, 0.0),
            None => k.eval_regularized(xi, diff, 0.0),
        }
    };
    let center = |c: &[i64]| -> Vec<f64> { c.iter().map(|&i| -grid.half + (i as f64 + 0.5) * h).collect() };
    let value = |c: &[i64], pinned_here: bool| -> Vec<f64> {
        let v = u(&center(c));
        if pinned_here {
            vec![0.0; v.len()]
        } else {
            v
        }
    };
    let parts: Vec<f64> = pinned
        .par_iter()
        .map(|c| {
            let here_new = value(c, true);
            let here_old = value(c, false);
            let mut acc = Vec::with_capacity(2 * params.shifts.len());
            for s in &params.shifts {
                // (c, c + k) and, unless c - k is pinned too, (c - k, c)
                for sign in [1i64, -1] {
                    let other: Vec<i64> = c.iter().zip(&s.k).map(|(a, b)| a + sign * b).collect();
                    if other.iter().any(|&x| x < 0 || x >= n) {
                        continue;
                    }
                    let other_pinned = set.contains(other.as_slice());
                    if sign == -1 && other_pinned {
                        continue;
                    }
                    let o_new = value(&other, other_pinned);
                    let o_old = value(&other, false);
                    let (dn, dold): (Vec<f64>, Vec<f64>) = if sign == 1 {
                        (
                            o_new.iter().zip(&here_new).map(|(a, b)| (a - b) * inv).collect(),
                            o_old.iter().zip(&here_old).map(|(a, b)| (a - b) * inv).collect(),
                        )
                    } else {
                        (
                            here_new.iter().zip(&o_new).map(|(a, b)| (a - b) * inv).collect(),
                            here_old.iter().zip(&o_old).map(|(a, b)| (a - b) * inv).collect(),
                        )
                    };
                    acc.push(s.weight * (term(&s.xi, &dn) - term(&s.xi, &dold)));
                }
            }
            pairwise_sum(&acc)
        })
        .collect();
    pairwise_sum(&parts) * h.powi(d as i32)
}

/// Pinning cost of a smooth field along an `eps` schedule in a regime with
/// `α = ∞`. `grid_of` maps `(eps, δ, r)` to the box; `t` truncates the
/// kernel.
pub fn negligibility_check(
    k: &KernelSpec<f64>,
    law: &ScalingLaw,
    u: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    schedule: &[f64],
    t: Option<f64>,
    grid_of: &dyn Fn(f64, f64, f64) -> NegligibilityGrid,
) -> Result<NegligibilityTable> {
    if law.alpha != Limit::Infinite || classify_regime(law) != RegimeClass::Unconstrained {
        return Err(Error::InvalidParameter(format!("law `{}` is not in the negligible-pinning regime", law.name)));
    }
    if k.d != law.d || k.p != law.p {
        return Err(Error::InvalidParameter("kernel and law disagree on (d, p)".into()));
    }
    let kernel = match t {
        Some(t) => k.truncate(t)?,
        None => k.clone(),
    };
    let mut rows = Vec::with_capacity(schedule.len());
    for &eps in schedule {
        let (delta, r) = law.scales(eps);
        Perforation::new(delta, r)?;
        let grid = grid_of(eps, delta, r);
        let half_cells = integer_ratio(grid.half, grid.h, "box half-width")?;
        let n = 2 * half_cells;
        let params = EnergyParams::new(&kernel, eps, t, grid.h)?;
        let pinned = pinned_cells(k.d, delta, r, grid.h, n, half_cells)?;
        let gap = pinning_gap(&kernel, &params, u, &grid, n, &pinned);
        let bound = r.powi(k.d as i32) / (eps.powf(k.p) * delta.powi(k.d as i32));
        rows.push(NegligibilityRow {
            eps,
            delta,
            r,
            h: grid.h,
            pinned_cells: pinned.len(),
            gap,
            bound,
            ratio: gap / bound,
            within: true,
        });
    }
    let c_recorded = rows.first().map_or(0.0, |r| r.ratio);
    for row in rows.iter_mut() {
        row.within = row.gap <= c_recorded * row.bound;
    }
    let all_within = rows.iter().all(|r| r.within);
    Ok(NegligibilityTable { rows, c_recorded, all_within })
}

/// Energy accounting of one pasted perforation.
#[derive(Debug, Clone, PartialEq)]
pub struct PerforationEnergy {
    pub center: Vec<f64>,
    pub z: Vec<f64>,
    /// `F_eps^T(v, B_ρ(δ i))` of the pasted field
    pub energy: f64,
    /// `r^{d-p} φ_{eps/r, T, ρ/r}(z)` from the pulled-back solve
    pub predicted: f64,
    pub relative_gap: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub field: GridFunction<f64>,
    pub total: f64,
    /// pairs with both ends outside every `B_ρ(δ i)`
    pub bulk: f64,
    pub perforations: Vec<PerforationEnergy>,
    /// `total - bulk - Σ perforation energies`
    pub cross: f64,
}

/// Pastes rescaled capacitary minimizers into `u` on every `B_ρ(δ i) ⊂ Ω`,
/// `ρ = δ/8`, with datum `z` the average of `u` over
/// `ρ/2 < |x - δ i| < ρ`.
pub fn recovery_construction(
    k: &KernelSpec<f64>,
    u: &GridFunction<f64>,
    eps: f64,
    delta: f64,
    r: f64,
    t: f64,
    opts: &SolveOptions<f64>,
) -> Result<Recovery> {
    let omega = u.domain().clone();
    let d = omega.d();
    let h = omega.h();
    if eps / h < MIN_RESOLUTION * (1.0 - 1e-12) {
        return Err(Error::UnderResolved { ratio: eps / h, min: MIN_RESOLUTION });
    }
    if r / h < MIN_RESOLUTION * (1.0 - 1e-12) {
        return Err(Error::UnderResolved { ratio: r / h, min: MIN_RESOLUTION });
    }
    let perf = Perforation::new(delta, r)?;
    let rho = delta / 8.0;
    integer_ratio(delta, h, "delta")?;
    for &o in omega.origin() {
        integer_ratio(o, h, "domain origin")?;
    }
    let lo = omega.origin().to_vec();
    let hi = omega.upper();
    // lattice points whose ρ-ball lies in the box
    let ranges: Vec<(i64, i64)> =
        (0..d).map(|a| (((lo[a] + rho) / delta).ceil() as i64, ((hi[a] - rho) / delta).floor() as i64)).collect();
    let mut centers = Vec::new();
    if ranges.iter().all(|(l, u)| l <= u) {
        let mut i: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        'outer: loop {
            centers.push(i.iter().map(|&c| c as f64 * delta).collect::<Vec<f64>>());
            for a in (0..d).rev() {
                i[a] += 1;
                if i[a] <= ranges[a].1 {
                    continue 'outer;
                }
                i[a] = ranges[a].0;
            }
            break;
        }
    }

    let kernel = k.truncate(t)?;
    let params = EnergyParams::new(&kernel, eps, Some(t), h)?;
    let mut field = u.clone();
    let mut in_ball = vec![false; omega.ncells()];
    let mut balls: Vec<(Vec<usize>, Vec<f64>, Vec<f64>, f64, f64)> = Vec::new();
    let mut solved: BTreeMap<Vec<u64>, (crate::capacity::CapacitaryPoint, Option<GridFunction<f64>>)> = BTreeMap::new();
    for c in &centers {
        let ring: Vec<usize> = omega
            .active_indices()
            .into_iter()
            .filter(|&i| {
                let x = omega.center(i);
                let dist = norm(&x.iter().zip(c).map(|(a, b)| a - b).collect::<Vec<f64>>());
                dist > rho / 2.0 && dist < rho
            })
            .collect();
        let z = cell_average(u, &ring)?;
        let key: Vec<u64> = z.iter().map(|v| v.to_bits()).collect();
        if !solved.contains_key(&key) {
            let sol = phi_approx_unchecked(k, eps / r, t, rho / r, &z, h / r, opts)?;
            solved.insert(key.clone(), sol);
        }
        let (point, v) = &solved[&key];
        let prob = approx_problem(k, eps / r, t, rho / r, &z, h / r)?;
        let mut cells = Vec::new();
        let mut y = vec![0.0; d];
        for j in prob.domain.active_indices() {
            prob.domain.center_into(j, &mut y);
            let x: Vec<f64> = y.iter().zip(c).map(|(a, b)| b + r * a).collect();
            let i = omega.locate(&x).ok_or_else(|| Error::Inconsistent("pasted cell outside the box".into()))?;
            let val = match v {
                Some(v) => v.at(j).to_vec(),
                None => vec![0.0; u.m()],
            };
            field.set(i, &val);
            in_ball[i] = true;
            cells.push(i);
        }
        let predicted = r.powf(d as f64 - k.p) * point.value;
        balls.push((cells, c.clone(), z, predicted, point.grad_norm));
    }

    if let Extended::Infeasible = pinned_energy(&field, &omega, &kernel, &params, &perf)? {
        return Err(Error::Inconsistent("recovery field is not pinned on the perforation".into()));
    }
    let total = nonlocal_energy(&field, &omega, &kernel, &params)?;
    let outside: Vec<bool> = (0..omega.ncells()).map(|i| omega.is_active(i) && !in_ball[i]).collect();
    let bulk = nonlocal_energy(&field, &omega.full().with_mask(outside)?, &kernel, &params)?;
    let mut perforations = Vec::with_capacity(balls.len());
    for (cells, center, z, predicted, grad_norm) in balls {
        let mut mask = vec![false; omega.ncells()];
        cells.iter().for_each(|&i| mask[i] = true);
        let energy = nonlocal_energy(&field, &omega.full().with_mask(mask)?, &kernel, &params)?;
        let relative_gap = if predicted == 0.0 { energy.abs() } else { (energy - predicted).abs() / predicted };
        perforations.push(PerforationEnergy { center, z, energy, predicted, relative_gap, grad_norm });
    }
    let cross = total - bulk - perforations.iter().map(|p| p.energy).sum::<f64>();
    Ok(Recovery { field, total, bulk, perforations, cross })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::nonlocal_energy;
    use crate::fields::{apply_pinning, GridDomain};
    use approx::assert_relative_eq;

    #[test]
    fn fixtures_classify() {
        for (law, expected) in canonical_fixtures().unwrap() {
            assert_eq!(classify_regime(&law), expected, "{}", law.name);
        }
        let b = ScalingLaw::power("slow-eps-sparse", 3, 2.0, 1.0, 1.0, 1.0, 2.0).unwrap();
        assert!(b.cond_b);
        assert_eq!(classify_regime(&b), RegimeClass::Unconstrained);
    }

    #[test]
    fn inconsistent_declaration_rejected() {
        let bad = ScalingLaw::new("bad", 3, 2.0, |e| e.powf(1.0 / 3.0), |d| d.powi(3), Limit::Finite(2.0), Limit::Finite(1.0), false);
        assert!(bad.is_err());
        let too_big = ScalingLaw::new("big", 3, 2.0, |e| e, |d| d * 0.6, Limit::Infinite, Limit::Finite(1.0), false);
        assert!(too_big.is_err());
    }

    #[test]
    fn table_extension() {
        let t = DensityTable::new(1.5, vec![(vec![1.0], 2.0), (vec![2.0], 2.0 * 2f64.powf(1.5)), (vec![-1.0], 3.0)]).unwrap();
        assert_relative_eq!(t.eval(&[1.5]), 2.0 * 1.5f64.powf(1.5), max_relative = 1e-12);
        assert_relative_eq!(t.eval(&[-4.0]), 3.0 * 4f64.powf(1.5), max_relative = 1e-12);
        assert_eq!(t.eval(&[0.0]), 0.0);
    }

    #[test]
    fn limit_functional_cases() {
        let k = KernelSpec::normalized_isotropic(2, 1, 1.5, 1.0).unwrap();
        let dom = GridDomain::from_box(&[0.0, 0.0], &[1.0, 1.0], 0.05).unwrap();
        let zero = GridFunction::zeros(dom.clone(), 1);
        let table = DensityTable::new(1.5, vec![(vec![1.0], 4.0), (vec![-1.0], 4.0)]).unwrap();
        for class in [
            RegimeClass::Unconstrained,
            RegimeClass::LocalCapacitary { beta: 1.0 },
            RegimeClass::NonlocalCapacitary { alpha: 1.0, beta: 1.0 },
            RegimeClass::TrivialCollapse,
        ] {
            assert_eq!(limit_functional(&k, &class, &zero, Some(&table)).unwrap(), Extended::Finite(0.0));
        }
        // f_hom(S) = |S|^p for the normalized kernel
        let aff = GridFunction::affine(dom.clone(), 1, &[0.6, -0.8]);
        let v = limit_functional(&k, &RegimeClass::Unconstrained, &aff, None).unwrap().finite().unwrap();
        assert_relative_eq!(v, 1.0, max_relative = 1e-3);
        let c = GridFunction::constant(dom, &[2.0]);
        let v = limit_functional(&k, &RegimeClass::LocalCapacitary { beta: 0.5 }, &c, Some(&table)).unwrap();
        assert_relative_eq!(v.finite().unwrap(), 0.5f64.powf(0.5) * 4.0 * 2f64.powf(1.5), max_relative = 1e-12);
        assert!(limit_functional(&k, &RegimeClass::LocalCapacitary { beta: 0.5 }, &c, None).is_err());
        assert_eq!(limit_functional(&k, &RegimeClass::TrivialCollapse, &c, None).unwrap(), Extended::Infeasible);
    }

    #[test]
    fn pinning_gap_matches_full_energy() {
        // small explicit grid against the full difference F(u_j) - F(u)
        let k = KernelSpec::indicator_ball(2, 1, 1.5, 1.0, 1.0).unwrap();
        let (eps, delta, r, h, half) = (0.125, 0.25, 0.04, 1.0 / 32.0, 0.5);
        let u = |x: &[f64]| vec![1.0 + 0.3 * x[0] - 0.2 * x[1] * x[1]];
        let grid = NegligibilityGrid { half, h };
        let params = EnergyParams::new(&k, eps, None, h).unwrap();
        let n = 32;
        let pinned = pinned_cells(2, delta, r, h, n, 16).unwrap();
        let gap = pinning_gap(&k, &params, &u, &grid, n, &pinned);

        let dom = GridDomain::centered_cube(2, half, h).unwrap();
        let f = GridFunction::from_fn(dom.clone(), 1, |x| u(x));
        let (fj, count) = apply_pinning(&f, &Perforation::new(delta, r).unwrap());
        assert_eq!(count, pinned.len());
        let full = nonlocal_energy(&fj, &dom, &k, &params).unwrap() - nonlocal_energy(&f, &dom, &k, &params).unwrap();
        assert_relative_eq!(gap, full, max_relative = 1e-10);
    }

    #[test]
    fn negligibility_zero_field() {
        let k = KernelSpec::indicator_ball(2, 1, 1.5, 1.0, 1.0).unwrap();
        let law = ScalingLaw::power("sparse", 2, 1.5, 1.0, 2.0 / 7.0, 0.125, 4.0).unwrap();
        let grid = |_e: f64, d: f64, _r: f64| NegligibilityGrid { half: 0.5 + 3.0 / 256.0, h: d.powi(4) / 4.0 };
        let sched: Vec<f64> = [0.25f64, 0.0625].iter().map(|d| d.powf(3.5)).collect();
        let tab = negligibility_check(&k, &law, &|_x: &[f64]| vec![0.0], &sched, None, &grid).unwrap();
        assert!(tab.rows.iter().all(|r| r.gap == 0.0));
    }

    #[test]
    fn recovery_of_zero_field() {
        let k = KernelSpec::indicator_ball(2, 1, 1.5, 1.0, 1.0).unwrap();
        let dom = GridDomain::from_box(&[-0.5, -0.5], &[0.5, 0.5], 1.0 / 256.0).unwrap();
        let u = GridFunction::zeros(dom, 1);
        let rec = recovery_construction(&k, &u, 1.0 / 64.0, 1.0, 1.0 / 64.0, 1.0, &SolveOptions::default()).unwrap();
        assert_eq!(rec.perforations.len(), 1);
        assert_eq!((rec.total, rec.bulk, rec.cross), (0.0, 0.0, 0.0));
    }
}
