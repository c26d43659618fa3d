//! Uniform box grids, piecewise-constant vector fields and the grid
//! operations built on them: shifted cell sets, difference quotients,
//! perforation masks, averages, coarsening and truncation maps.
//!
//! Cells are indexed row-major (last axis fastest). Ball and annulus
//! membership is decided by cell center.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::real::{norm, Real};

/// Relative tolerance for "is an integer multiple of h" checks.
const COMMENSURATE_TOL: f64 = 1e-9;

fn as_integer(x: f64) -> Option<i64> {
    let r = x.round();
    if (x - r).abs() <= COMMENSURATE_TOL * x.abs().max(1.0) {
        Some(r as i64)
    } else {
        None
    }
}

/// Axis-aligned box tiled by cubes of side `h`, with an optional active mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDomain<T> {
    origin: Vec<T>,
    h: T,
    shape: Vec<usize>,
    mask: Option<Arc<Vec<bool>>>,
}

impl<T: Real> GridDomain<T> {
    /// Box `origin + [0, shape_i h)`.
    pub fn new(origin: Vec<T>, h: T, shape: Vec<usize>) -> Result<Self> {
        if origin.len() != shape.len() || shape.is_empty() {
            return Err(Error::InvalidParameter("origin and shape must have equal, nonzero length".into()));
        }
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!("grid step h = {h} must be positive")));
        }
        if shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParameter("empty grid axis".into()));
        }
        Ok(GridDomain { origin, h, shape, mask: None })
    }

    /// Box `[lo, hi]`, which must be tiled exactly by cells of side `h`.
    pub fn from_box(lo: &[T], hi: &[T], h: T) -> Result<Self> {
        let mut shape = Vec::with_capacity(lo.len());
        for (a, b) in lo.iter().zip(hi) {
            let n = ((*b - *a) / h).to_f64_lossy();
            match as_integer(n) {
                Some(k) if k > 0 => shape.push(k as usize),
                _ => {
                    return Err(Error::NonCommensurate(format!(
                        "box side {} is not a positive multiple of h = {h}",
                        *b - *a
                    )))
                }
            }
        }
        Self::new(lo.to_vec(), h, shape)
    }

    /// Cube `[-half, half]^d`.
    pub fn centered_cube(d: usize, half: T, h: T) -> Result<Self> {
        Self::from_box(&vec![-half; d], &vec![half; d], h)
    }

    /// Grid covering `B_radius(center)` with vertices on `center + hZ^d`,
    /// masked to cells whose center lies in the closed ball.
    pub fn ball(center: &[T], radius: T, h: T) -> Result<Self> {
        let n = (radius / h).ceil().to_usize().unwrap_or(0).max(1);
        let half = h * T::from_count(n);
        let origin: Vec<T> = center.iter().map(|&c| c - half).collect();
        let dom = Self::new(origin, h, vec![2 * n; center.len()])?;
        let r2 = radius * radius;
        Ok(dom.restrict(|x| dist2(x, center) <= r2))
    }

    pub fn d(&self) -> usize {
        self.shape.len()
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn origin(&self) -> &[T] {
        &self.origin
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn upper(&self) -> Vec<T> {
        self.origin.iter().zip(&self.shape).map(|(&a, &n)| a + self.h * T::from_count(n)).collect()
    }

    /// Number of cells in the box (active or not).
    pub fn ncells(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn cell_volume(&self) -> T {
        self.h.powi(self.d() as i32)
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.d()];
        for a in (0..self.d().saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.shape[a + 1];
        }
        s
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.d()];
        for a in (0..self.d()).rev() {
            out[a] = idx % self.shape[a];
            idx /= self.shape[a];
        }
        out
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Center of cell `idx`, written into `out`.
    pub fn center_into(&self, idx: usize, out: &mut [T]) {
        let mut rem = idx;
        for a in (0..self.d()).rev() {
            let i = rem % self.shape[a];
            rem /= self.shape[a];
            out[a] = self.origin[a] + self.h * (T::from_count(i) + T::c(0.5));
        }
    }

    pub fn center(&self, idx: usize) -> Vec<T> {
        let mut x = vec![T::zero(); self.d()];
        self.center_into(idx, &mut x);
        x
    }

    /// Cell containing the point `x`, if inside the box.
    pub fn locate(&self, x: &[T]) -> Option<usize> {
        let mut multi = Vec::with_capacity(self.d());
        for a in 0..self.d() {
            let t = ((x[a] - self.origin[a]) / self.h).floor();
            if t < T::zero() {
                return None;
            }
            let i = t.to_usize()?;
            if i >= self.shape[a] {
                return None;
            }
            multi.push(i);
        }
        Some(self.linear_index(&multi))
    }

    #[inline]
    pub fn is_active(&self, idx: usize) -> bool {
        self.mask.as_ref().map_or(true, |m| m[idx])
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_ref().map(|m| m.as_slice())
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.ncells()).filter(|&i| self.is_active(i)).collect()
    }

    pub fn active_count(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => self.ncells(),
        }
    }

    /// Same grid with the active set intersected with `mask`.
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.ncells() {
            return Err(Error::GridMismatch(format!("mask length {} != {}", mask.len(), self.ncells())));
        }
        let merged = match &self.mask {
            Some(old) => old.iter().zip(&mask).map(|(&a, &b)| a && b).collect(),
            None => mask,
        };
        Ok(GridDomain { mask: Some(Arc::new(merged)), ..self.clone() })
    }

    /// Same grid without a mask.
    pub fn full(&self) -> Self {
        GridDomain { mask: None, ..self.clone() }
    }

    /// Keeps active cells whose center satisfies `keep`.
    pub fn restrict(&self, keep: impl Fn(&[T]) -> bool) -> Self {
        let mut x = vec![T::zero(); self.d()];
        let mask = (0..self.ncells())
            .map(|i| {
                self.center_into(i, &mut x);
                self.is_active(i) && keep(&x)
            })
            .collect();
        GridDomain { mask: Some(Arc::new(mask)), ..self.clone() }
    }

    /// Whether `other` has the same box, step and shape (masks may differ).
    pub fn same_grid(&self, other: &Self) -> bool {
        self.h == other.h && self.shape == other.shape && self.origin == other.origin
    }

    /// Converts `eps ξ` into integer cell offsets.
    pub fn shift_to_lattice(&self, xi: &[T], eps: T) -> Result<Vec<i64>> {
        if xi.len() != self.d() {
            return Err(Error::InvalidParameter("shift dimension mismatch".into()));
        }
        xi.iter()
            .map(|&x| {
                let q = (eps * x / self.h).to_f64_lossy();
                as_integer(q).ok_or_else(|| {
                    Error::NonCommensurate(format!("eps*xi/h = {q} is not an integer (h = {})", self.h))
                })
            })
            .collect()
    }

    /// Linear offset of an integer shift, with the valid index ranges per axis.
    pub(crate) fn shift_ranges(&self, k: &[i64]) -> Option<(isize, Vec<(usize, usize)>)> {
        let strides = self.strides();
        let mut off = 0isize;
        let mut ranges = Vec::with_capacity(self.d());
        for a in 0..self.d() {
            let n = self.shape[a] as i64;
            let lo = (-k[a]).max(0);
            let hi = (n - k[a]).min(n);
            if lo >= hi {
                return None;
            }
            ranges.push((lo as usize, hi as usize));
            off += k[a] as isize * strides[a] as isize;
        }
        Some((off, ranges))
    }
}

#[inline]
fn dist2<T: Real>(x: &[T], c: &[T]) -> T {
    x.iter().zip(c).fold(T::zero(), |a, (&u, &v)| a + (u - v) * (u - v))
}

/// Calls `visit(i_start, j_start, len)` for every contiguous run of cells
/// `i` (last axis) whose shifted partner `j = i + k` lies inside the box.
pub(crate) fn for_each_shift_row<T: Real>(
    dom: &GridDomain<T>,
    k: &[i64],
    mut visit: impl FnMut(usize, usize, usize),
) {
    let Some((off, ranges)) = dom.shift_ranges(k) else {
        return;
    };
    let d = dom.d();
    let strides = dom.strides();
    let (lo_last, hi_last) = ranges[d - 1];
    let len = hi_last - lo_last;
    let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    loop {
        let base: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        let j = (base as isize + off) as usize;
        visit(base, j, len);
        // odometer over the leading axes
        let mut a = d as isize - 2;
        loop {
            if a < 0 {
                return;
            }
            let au = a as usize;
            idx[au] += 1;
            if idx[au] < ranges[au].1 {
                break;
            }
            idx[au] = ranges[au].0;
            a -= 1;
        }
    }
}

/// Active cells `x` with `x + k` also active, for an integer shift `k`.
pub fn shifted_cells_lattice<T: Real>(dom: &GridDomain<T>, k: &[i64]) -> Vec<usize> {
    let mut out = Vec::new();
    for_each_shift_row(dom, k, |i0, j0, len| {
        for t in 0..len {
            if dom.is_active(i0 + t) && dom.is_active(j0 + t) {
                out.push(i0 + t);
            }
        }
    });
    out
}

/// `A_eps(ξ) = {x ∈ A : x + eps ξ ∈ A}` as a cell index set.
pub fn shifted_cells<T: Real>(dom: &GridDomain<T>, xi: &[T], eps: T) -> Result<Vec<usize>> {
    let k = dom.shift_to_lattice(xi, eps)?;
    Ok(shifted_cells_lattice(dom, &k))
}

/// Piecewise-constant `R^m`-valued field on a [`GridDomain`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T> {
    domain: GridDomain<T>,
    m: usize,
    values: Vec<T>,
    exterior: Option<Vec<T>>,
}

impl<T: Real> GridFunction<T> {
    pub fn zeros(domain: GridDomain<T>, m: usize) -> Self {
        let n = domain.ncells() * m;
        GridFunction { domain, m, values: vec![T::zero(); n], exterior: None }
    }

    pub fn constant(domain: GridDomain<T>, z: &[T]) -> Self {
        let mut u = Self::zeros(domain, z.len());
        for c in u.values.chunks_exact_mut(z.len()) {
            c.copy_from_slice(z);
        }
        u
    }

    /// Samples `f` at active cell centers (inactive cells hold zeros).
    pub fn from_fn(domain: GridDomain<T>, m: usize, f: impl Fn(&[T]) -> Vec<T>) -> Self {
        let mut u = Self::zeros(domain, m);
        let mut x = vec![T::zero(); u.domain.d()];
        for i in 0..u.domain.ncells() {
            if !u.domain.is_active(i) {
                continue;
            }
            u.domain.center_into(i, &mut x);
            let v = f(&x);
            u.values[i * m..(i + 1) * m].copy_from_slice(&v[..m]);
        }
        u
    }

    /// `u(x) = S x` with `S` an `m × d` matrix in row-major order.
    pub fn affine(domain: GridDomain<T>, m: usize, s: &[T]) -> Self {
        let d = domain.d();
        Self::from_fn(domain, m, |x| {
            (0..m).map(|r| (0..d).fold(T::zero(), |a, c| a + s[r * d + c] * x[c])).collect()
        })
    }

    pub fn from_values(domain: GridDomain<T>, m: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != domain.ncells() * m {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells x m = {m}",
                values.len(),
                domain.ncells()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values".into()));
        }
        Ok(GridFunction { domain, m, values, exterior: None })
    }

    pub fn with_exterior(mut self, z: Vec<T>) -> Self {
        assert_eq!(z.len(), self.m, "exterior value dimension");
        self.exterior = Some(z);
        self
    }

    pub fn without_exterior(mut self) -> Self {
        self.exterior = None;
        self
    }

    pub fn domain(&self) -> &GridDomain<T> {
        &self.domain
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn exterior(&self) -> Option<&[T]> {
        self.exterior.as_deref()
    }

    #[inline]
    pub fn at(&self, idx: usize) -> &[T] {
        &self.values[idx * self.m..(idx + 1) * self.m]
    }

    #[inline]
    pub fn set(&mut self, idx: usize, v: &[T]) {
        self.values[idx * self.m..(idx + 1) * self.m].copy_from_slice(v);
    }

    /// Replaces the domain (same grid, different mask).
    pub fn with_domain(mut self, domain: GridDomain<T>) -> Result<Self> {
        if !domain.same_grid(&self.domain) {
            return Err(Error::GridMismatch("with_domain requires the same grid".into()));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn scaled(&self, t: T) -> Self {
        let mut u = self.clone();
        u.values.iter_mut().for_each(|v| *v = *v * t);
        if let Some(e) = u.exterior.as_mut() {
            e.iter_mut().for_each(|v| *v = *v * t);
        }
        u
    }

    pub fn add_constant(&self, c: &[T]) -> Self {
        let mut u = self.clone();
        for chunk in u.values.chunks_exact_mut(self.m) {
            for (v, &a) in chunk.iter_mut().zip(c) {
                *v = *v + a;
            }
        }
        if let Some(e) = u.exterior.as_mut() {
            for (v, &a) in e.iter_mut().zip(c) {
                *v = *v + a;
            }
        }
        u
    }

    /// Value at `idx + k`, falling back to the exterior extension outside
    /// the box or on inactive cells.
    pub fn value_shifted(&self, idx: usize, k: &[i64]) -> Option<Vec<T>> {
        let mut multi = self.domain.multi_index(idx);
        let mut inside = true;
        for a in 0..self.domain.d() {
            let t = multi[a] as i64 + k[a];
            if t < 0 || t >= self.domain.shape[a] as i64 {
                inside = false;
                break;
            }
            multi[a] = t as usize;
        }
        if inside {
            let j = self.domain.linear_index(&multi);
            if self.domain.is_active(j) {
                return Some(self.at(j).to_vec());
            }
        }
        self.exterior.clone()
    }

    /// `D_eps^ξ u` at a single cell.
    pub fn difference_at(&self, idx: usize, xi: &[T], eps: T) -> Result<Vec<T>> {
        let k = self.domain.shift_to_lattice(xi, eps)?;
        let here = if self.domain.is_active(idx) {
            self.at(idx).to_vec()
        } else {
            self.exterior.clone().ok_or(Error::UndefinedEndpoint(idx))?
        };
        let there = self.value_shifted(idx, &k).ok_or(Error::UndefinedEndpoint(idx))?;
        Ok(there.iter().zip(&here).map(|(&a, &b)| (a - b) / eps).collect())
    }

    /// Extends the box by `pad` cells on every side, filling with the
    /// exterior value. Requires an exterior extension.
    pub fn padded(&self, pad: usize) -> Result<Self> {
        let ext = self.exterior.clone().ok_or(Error::UndefinedEndpoint(usize::MAX))?;
        let d = self.domain.d();
        let origin: Vec<T> =
            self.domain.origin.iter().map(|&a| a - self.domain.h * T::from_count(pad)).collect();
        let shape: Vec<usize> = self.domain.shape.iter().map(|&n| n + 2 * pad).collect();
        let dom = GridDomain::new(origin, self.domain.h, shape)?;
        let mut out = GridFunction::constant(dom, &ext).with_exterior(ext);
        let mut multi = vec![0; d];
        for i in 0..self.domain.ncells() {
            if !self.domain.is_active(i) {
                continue;
            }
            let src = self.domain.multi_index(i);
            for a in 0..d {
                multi[a] = src[a] + pad;
            }
            let j = out.domain.linear_index(&multi);
            out.set(j, self.at(i));
        }
        Ok(out)
    }
}

/// `D_eps^ξ u` on `A_eps(ξ)`. Without an exterior extension the result lives
/// on the shifted cell set; with one, on every active cell.
pub fn finite_difference<T: Real>(u: &GridFunction<T>, xi: &[T], eps: T) -> Result<GridFunction<T>> {
    let dom = u.domain();
    let k = dom.shift_to_lattice(xi, eps)?;
    let m = u.m();
    let inv = T::one() / eps;
    let cells: Vec<usize> = if u.exterior().is_some() { dom.active_indices() } else { shifted_cells_lattice(dom, &k) };
    let mut mask = vec![false; dom.ncells()];
    let mut out = GridFunction::zeros(dom.full(), m);
    for &i in &cells {
        let there = u.value_shifted(i, &k).ok_or(Error::UndefinedEndpoint(i))?;
        let v: Vec<T> = there.iter().zip(u.at(i)).map(|(&a, &b)| (a - b) * inv).collect();
        out.set(i, &v);
        mask[i] = true;
    }
    out.domain = out.domain.with_mask(mask)?;
    Ok(out)
}

/// The `δ`-periodic array of balls `B_r(δ i)`, `i ∈ Z^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perforation<T> {
    pub delta: T,
    pub r: T,
}

impl<T: Real> Perforation<T> {
    pub fn new(delta: T, r: T) -> Result<Self> {
        if !(delta > T::zero() && r > T::zero() && r < delta / T::c(2.0)) {
            return Err(Error::InvalidParameter(format!(
                "perforation needs 0 < r < delta/2, got delta = {delta}, r = {r}"
            )));
        }
        Ok(Perforation { delta, r })
    }

    /// Pinned cells: centers inside some `B_r(δ i)`, plus the cell that
    /// contains each lattice point `δ i` of the box.
    pub fn pinned_mask(&self, dom: &GridDomain<T>) -> Vec<bool> {
        let d = dom.d();
        let r2 = self.r * self.r;
        let mut x = vec![T::zero(); d];
        let mut mask = vec![false; dom.ncells()];
        for (i, slot) in mask.iter_mut().enumerate() {
            if !dom.is_active(i) {
                continue;
            }
            dom.center_into(i, &mut x);
            let dd = x.iter().fold(T::zero(), |acc, &v| {
                let c = (v / self.delta).round() * self.delta;
                acc + (v - c) * (v - c)
            });
            *slot = dd <= r2;
        }
        // lattice points inside the box
        let lo = dom.origin();
        let hi = dom.upper();
        let ranges: Vec<(i64, i64)> = (0..d)
            .map(|a| {
                let l = (lo[a] / self.delta).ceil().to_i64().unwrap_or(0);
                let u = (hi[a] / self.delta).floor().to_i64().unwrap_or(-1);
                (l, u)
            })
            .collect();
        if ranges.iter().any(|(l, u)| l > u) {
            return mask;
        }
        let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        let mut pt = vec![T::zero(); d];
        loop {
            for a in 0..d {
                pt[a] = T::c(idx[a] as f64) * self.delta;
            }
            if let Some(c) = dom.locate(&pt) {
                if dom.is_active(c) {
                    mask[c] = true;
                }
            }
            let mut a = d;
            loop {
                if a == 0 {
                    return mask;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] <= ranges[a].1 {
                    break;
                }
                idx[a] = ranges[a].0;
            }
        }
    }
}

/// Zeroes `u` on the perforation; returns the pinned field and the number of
/// pinned cells.
pub fn apply_pinning<T: Real>(u: &GridFunction<T>, perf: &Perforation<T>) -> (GridFunction<T>, usize) {
    let mask = perf.pinned_mask(u.domain());
    let mut out = u.clone();
    let zero = vec![T::zero(); u.m()];
    let mut count = 0;
    for (i, &pinned) in mask.iter().enumerate() {
        if pinned {
            out.set(i, &zero);
            count += 1;
        }
    }
    (out, count)
}

/// Mean of `u` over the cells `cells`.
pub fn cell_average<T: Real>(u: &GridFunction<T>, cells: &[usize]) -> Result<Vec<T>> {
    if cells.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut acc = vec![T::zero(); u.m()];
    for &i in cells {
        for (a, &v) in acc.iter_mut().zip(u.at(i)) {
            *a = *a + v;
        }
    }
    let n = T::from_count(cells.len());
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Geometry actually used by [`coarsen`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarsenInfo<T> {
    /// `r / sqrt(d + 3)`
    pub r_tilde: T,
    /// requested cube side `r_tilde * eps`
    pub side_requested: T,
    /// side after snapping to a multiple of `h`
    pub side: T,
    pub cells_per_side: usize,
}

/// Averages `u` over the cubes `s k + [0, s)^d`, `s ≈ eps r / sqrt(d + 3)`
/// snapped to the nearest positive multiple of `h`. Cubes are anchored at the
/// grid vertex nearest the origin. With an exterior extension the box is
/// grown to whole cubes; without one, partial cubes average over the cells
/// they contain.
pub fn coarsen<T: Real>(u: &GridFunction<T>, eps: T, r: T) -> Result<(GridFunction<T>, CoarsenInfo<T>)> {
    let dom = u.domain();
    let d = dom.d();
    let h = dom.h();
    let r_tilde = r / T::from_count(d + 3).sqrt();
    let side_requested = r_tilde * eps;
    let k = (side_requested / h).round().to_usize().unwrap_or(0);
    if k == 0 {
        return Err(Error::CubeBelowGrid { side: side_requested.to_f64_lossy(), h: h.to_f64_lossy() });
    }
    let info = CoarsenInfo { r_tilde, side_requested, side: h * T::from_count(k), cells_per_side: k };
    let ki = k as i64;
    // index coordinate of the vertex nearest x = 0
    let j0: Vec<i64> = dom.origin().iter().map(|&a| (-(a / h)).round().to_i64().unwrap_or(0)).collect();
    let shape = dom.shape();
    let cube_of = |i: i64, a: usize| (i - j0[a]).div_euclid(ki);
    let ext = u.exterior().map(|e| e.to_vec());

    // new index range per axis, in old index coordinates
    let (new_lo, new_shape): (Vec<i64>, Vec<usize>) = (0..d)
        .map(|a| {
            if ext.is_some() {
                let kmin = cube_of(0, a);
                let kmax = cube_of(shape[a] as i64 - 1, a);
                (j0[a] + kmin * ki, ((kmax - kmin + 1) * ki) as usize)
            } else {
                (0, shape[a])
            }
        })
        .unzip();
    let origin: Vec<T> =
        (0..d).map(|a| dom.origin()[a] + h * T::c(new_lo[a] as f64)).collect();
    let mut out_dom = GridDomain::new(origin, h, new_shape.clone())?;
    let m = u.m();

    // accumulate sums per coarse cube
    let cube_shape: Vec<i64> = (0..d)
        .map(|a| cube_of(new_lo[a] + new_shape[a] as i64 - 1, a) - cube_of(new_lo[a], a) + 1)
        .collect();
    let cube_lo: Vec<i64> = (0..d).map(|a| cube_of(new_lo[a], a)).collect();
    let ncubes: usize = cube_shape.iter().map(|&c| c as usize).product();
    let mut sums = vec![T::zero(); ncubes * m];
    let mut counts = vec![0usize; ncubes];
    let cube_index = |old: &[i64]| -> usize {
        (0..d).fold(0usize, |acc, a| acc * cube_shape[a] as usize + (cube_of(old[a], a) - cube_lo[a]) as usize)
    };

    let out_cells = out_dom.ncells();
    let mut old = vec![0i64; d];
    let mut src_active = vec![false; out_cells];
    for j in 0..out_cells {
        let multi = out_dom.multi_index(j);
        let mut inside = true;
        for a in 0..d {
            old[a] = new_lo[a] + multi[a] as i64;
            if old[a] < 0 || old[a] >= shape[a] as i64 {
                inside = false;
            }
        }
        let val: Option<&[T]> = if inside {
            let oi: Vec<usize> = old.iter().map(|&v| v as usize).collect();
            let li = dom.linear_index(&oi);
            if dom.is_active(li) {
                Some(u.at(li))
            } else {
                ext.as_deref()
            }
        } else {
            ext.as_deref()
        };
        if let Some(v) = val {
            let c = cube_index(&old);
            counts[c] += 1;
            for (s, &x) in sums[c * m..(c + 1) * m].iter_mut().zip(v) {
                *s = *s + x;
            }
            src_active[j] = true;
        }
    }
    let mut out = GridFunction::zeros(out_dom.clone(), m);
    for (j, &active) in src_active.iter().enumerate() {
        if !active {
            continue;
        }
        let multi = out_dom.multi_index(j);
        for a in 0..d {
            old[a] = new_lo[a] + multi[a] as i64;
        }
        let c = cube_index(&old);
        let n = T::from_count(counts[c]);
        let avg: Vec<T> = sums[c * m..(c + 1) * m].iter().map(|&s| s / n).collect();
        out.set(j, &avg);
    }
    if src_active.iter().any(|&a| !a) {
        out_dom = out_dom.with_mask(src_active)?;
        out.domain = out_dom;
    }
    if let Some(e) = ext {
        out = out.with_exterior(e);
    }
    Ok((out, info))
}

/// Radial truncation map: identity on `B_M`, zero outside `B_{R_M}`,
/// `(R_M - |z|)/(R_M - M) · z` in between.
pub fn radial_truncation<T: Real>(z: &[T], inner: T, outer: T) -> Result<Vec<T>> {
    if !(inner > T::one() && inner < outer) {
        return Err(Error::InvalidParameter(format!(
            "radial truncation needs 1 < M < R_M, got M = {inner}, R_M = {outer}"
        )));
    }
    let n = norm(z);
    let factor = if n <= inner {
        T::one()
    } else if n >= outer {
        T::zero()
    } else {
        (outer - n) / (outer - inner)
    };
    Ok(z.iter().map(|&v| v * factor).collect())
}

/// `(Σ h^d |u|^q)^{1/q}` over active cells.
pub fn lp_norm<T: Real>(u: &GridFunction<T>, q: T) -> T {
    let dom = u.domain();
    let vol = dom.cell_volume();
    let terms: Vec<T> = (0..dom.ncells())
        .filter(|&i| dom.is_active(i))
        .map(|i| norm(u.at(i)).powf(q))
        .collect();
    (vol * crate::real::pairwise_sum(&terms)).powf(T::one() / q)
}

const MAGIC: &[u8; 4] = b"NLHG";
const VERSION: u32 = 1;

/// Binary dump: `"NLHG"`, version, d, m, shape, h, origin, exterior flag and
/// value, then all cell values row-major; little-endian, 8-byte floats.
pub fn write_binary<T: Real, W: Write>(u: &GridFunction<T>, mut w: W) -> Result<()> {
    let dom = u.domain();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dom.d() as u32).to_le_bytes())?;
    w.write_all(&(u.m() as u32).to_le_bytes())?;
    for &n in dom.shape() {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    w.write_all(&dom.h().to_f64_lossy().to_le_bytes())?;
    for &a in dom.origin() {
        w.write_all(&a.to_f64_lossy().to_le_bytes())?;
    }
    match u.exterior() {
        Some(e) => {
            w.write_all(&[1u8])?;
            for &v in e {
                w.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
        }
        None => {
            w.write_all(&[0u8])?;
            for _ in 0..u.m() {
                w.write_all(&0f64.to_le_bytes())?;
            }
        }
    }
    for &v in u.values() {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

/// Reads a dump written by [`write_binary`].
pub fn read_binary<R: Read>(mut r: R) -> Result<GridFunction<f64>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Io("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    let mut read_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut b4)?;
        Ok(u32::from_le_bytes(b4))
    };
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Io(format!("unsupported version {version}")));
    }
    let d = read_u32(&mut r)? as usize;
    let m = read_u32(&mut r)? as usize;
    let mut f64_at = |r: &mut R| -> Result<f64> {
        r.read_exact(&mut b8)?;
        Ok(f64::from_le_bytes(b8))
    };
    let mut shape = Vec::with_capacity(d);
    for _ in 0..d {
        shape.push(f64_at(&mut r)?.to_bits() as usize);
    }
    let h = f64_at(&mut r)?;
    let origin: Vec<f64> = (0..d).map(|_| f64_at(&mut r)).collect::<Result<_>>()?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let ext: Vec<f64> = (0..m).map(|_| f64_at(&mut r)).collect::<Result<_>>()?;
    let dom = GridDomain::new(origin, h, shape)?;
    let values: Vec<f64> = (0..dom.ncells() * m).map(|_| f64_at(&mut r)).collect::<Result<_>>()?;
    let u = GridFunction::from_values(dom, m, values)?;
    Ok(if flag[0] == 1 { u.with_exterior(ext) } else { u })
}

/// CSV export: one row per active cell, columns `x1..xd, u1..um`.
pub fn write_csv<T: Real, W: Write>(u: &GridFunction<T>, mut w: W) -> Result<()> {
    let dom = u.domain();
    let header: Vec<String> =
        (1..=dom.d()).map(|i| format!("x{i}")).chain((1..=u.m()).map(|i| format!("u{i}"))).collect();
    writeln!(w, "{}", header.join(","))?;
    for i in dom.active_indices() {
        let row: Vec<String> = dom
            .center(i)
            .iter()
            .chain(u.at(i))
            .map(|v| format!("{}", v.to_f64_lossy()))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
