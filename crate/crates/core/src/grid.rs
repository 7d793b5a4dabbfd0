//! Uniform rectangular grids, extended-real scalar fields, trapezoid
//! quadrature, and finite-difference calculus.
//!
//! Potentials store `+inf` as a large finite sentinel (`DEFAULT_CAP`) chosen
//! so that `exp(-cap)` underflows to exactly zero; arithmetic saturates at
//! the cap instead of propagating IEEE infinities.

use serde::Serialize;
use thiserror::Error;

/// Highest supported grid dimension.
pub const MAX_DIM: usize = 3;

/// Finite sentinel standing in for `+inf` in potential values.
pub const DEFAULT_CAP: f64 = 1e9;

/// Default bound on the total number of grid points (dense storage).
pub const DEFAULT_POINT_BUDGET: usize = 1 << 22;

/// Multi-index into a grid; only the first `dim` entries are meaningful.
pub type Index = [usize; MAX_DIM];

/// Coordinates of a grid point; only the first `dim` entries are meaningful.
pub type Point = [f64; MAX_DIM];

#[derive(Debug, Error)]
pub enum GridError {
    #[error("axis {axis}: {reason}")]
    InvalidAxis { axis: usize, reason: String },
    #[error("dimension {dim} outside 1..={MAX_DIM}")]
    InvalidDimension { dim: usize },
    #[error("grid has {total} points, budget is {budget}")]
    BudgetExceeded { total: usize, budget: usize },
    #[error("value buffer has length {got}, grid has {expected} points")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("negative density value at flat index {index}")]
    NegativeDensity { index: usize },
    #[error("operation requires field kind {expected:?}, got {got:?}")]
    KindMismatch { expected: FieldKind, got: FieldKind },
    #[error("potential has no finite values below its cap")]
    EmptyDomain,
    #[error("stencil does not fit at index {index:?}")]
    BoundaryStencil { index: Index },
    #[error("capped neighbour in stencil at index {index:?}")]
    CapNeighbor { index: Index },
    #[error("fields live on different grids")]
    GridMismatch,
}

/// One axis of a uniform closed-interval lattice including both endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        AxisSpec { min, max, count }
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn coord(&self, k: usize) -> f64 {
        self.min + k as f64 * self.spacing()
    }
}

/// Axis-aligned uniform rectangular grid in dimension 1 to 3.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    axes: Vec<AxisSpec>,
}

impl GridSpec {
    pub fn new(axes: Vec<AxisSpec>) -> Result<Self, GridError> {
        Self::with_budget(axes, DEFAULT_POINT_BUDGET)
    }

    pub fn with_budget(axes: Vec<AxisSpec>, budget: usize) -> Result<Self, GridError> {
        let dim = axes.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(GridError::InvalidDimension { dim });
        }
        let mut total: usize = 1;
        for (i, ax) in axes.iter().enumerate() {
            if !ax.min.is_finite() || !ax.max.is_finite() || ax.min >= ax.max {
                return Err(GridError::InvalidAxis {
                    axis: i,
                    reason: format!("need finite min < max, got [{}, {}]", ax.min, ax.max),
                });
            }
            if ax.count < 8 {
                return Err(GridError::InvalidAxis {
                    axis: i,
                    reason: format!("need at least 8 points, got {}", ax.count),
                });
            }
            total = total.saturating_mul(ax.count);
        }
        if total > budget {
            return Err(GridError::BudgetExceeded { total, budget });
        }
        Ok(GridSpec { axes })
    }

    /// Convenience constructor for a symmetric cube `[-half, half]^dim`.
    pub fn symmetric(dim: usize, half: f64, count: usize) -> Result<Self, GridError> {
        Self::new(vec![AxisSpec::new(-half, half, count); dim])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, i: usize) -> &AxisSpec {
        &self.axes[i]
    }

    pub fn axes(&self) -> &[AxisSpec] {
        &self.axes
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.axes[axis].spacing()
    }

    pub fn point(&self, idx: &Index) -> Point {
        let mut p = [0.0; MAX_DIM];
        for (a, ax) in self.axes.iter().enumerate() {
            p[a] = ax.coord(idx[a]);
        }
        p
    }

    /// Row-major flat index; the last axis varies fastest.
    pub fn flat(&self, idx: &Index) -> usize {
        let mut f = 0;
        for (a, ax) in self.axes.iter().enumerate() {
            debug_assert!(idx[a] < ax.count);
            f = f * ax.count + idx[a];
        }
        f
    }

    pub fn unflat(&self, mut flat: usize) -> Index {
        let mut idx = [0usize; MAX_DIM];
        for a in (0..self.dim()).rev() {
            let c = self.axes[a].count;
            idx[a] = flat % c;
            flat /= c;
        }
        idx
    }

    /// Iterate all indices in row-major order (matches flat order).
    pub fn indices(&self) -> IndexIter {
        let mut counts = [1usize; MAX_DIM];
        for (a, ax) in self.axes.iter().enumerate() {
            counts[a] = ax.count;
        }
        IndexIter {
            counts,
            dim: self.dim(),
            next: [0; MAX_DIM],
            remaining: self.len(),
        }
    }

    /// Trapezoid weight of a point: product of per-axis `h` (half at the
    /// interval endpoints).
    pub fn trapezoid_weight(&self, idx: &Index) -> f64 {
        let mut w = 1.0;
        for (a, ax) in self.axes.iter().enumerate() {
            let mut wa = ax.spacing();
            if idx[a] == 0 || idx[a] + 1 == ax.count {
                wa *= 0.5;
            }
            w *= wa;
        }
        w
    }

    /// Per-axis margin widths for an interior restriction dropping
    /// `fraction` of the points on every side (at least one point).
    pub fn margin(&self, fraction: f64) -> [usize; MAX_DIM] {
        let mut m = [0usize; MAX_DIM];
        for (a, ax) in self.axes.iter().enumerate() {
            let k = (ax.count as f64 * fraction).ceil() as usize;
            m[a] = k.max(1).min(ax.count / 2 - 1);
        }
        m
    }

    pub fn is_interior(&self, idx: &Index, margin: &[usize; MAX_DIM]) -> bool {
        for a in 0..self.dim() {
            if idx[a] < margin[a] || idx[a] + margin[a] >= self.axes[a].count {
                return false;
            }
        }
        true
    }

    /// Whether every axis is symmetric about the origin.
    pub fn is_symmetric(&self) -> bool {
        self.axes
            .iter()
            .all(|ax| (ax.min + ax.max).abs() <= 1e-12 * (ax.max - ax.min))
    }

    /// Index of the point reflected through the origin (valid on symmetric grids).
    pub fn reflect(&self, idx: &Index) -> Index {
        let mut r = [0usize; MAX_DIM];
        for (a, ax) in self.axes.iter().enumerate() {
            r[a] = ax.count - 1 - idx[a];
        }
        r
    }

    /// Grid index closest to an arbitrary point, clamped to the box.
    pub fn nearest_index(&self, p: &[f64]) -> Index {
        let mut idx = [0usize; MAX_DIM];
        for (a, ax) in self.axes.iter().enumerate() {
            let u = (p[a] - ax.min) / ax.spacing();
            let k = u.round().clamp(0.0, (ax.count - 1) as f64) as usize;
            idx[a] = k;
        }
        idx
    }
}

pub struct IndexIter {
    counts: [usize; MAX_DIM],
    dim: usize,
    next: Index,
    remaining: usize,
}

impl Iterator for IndexIter {
    type Item = Index;

    fn next(&mut self) -> Option<Index> {
        if self.remaining == 0 {
            return None;
        }
        let out = self.next;
        self.remaining -= 1;
        for a in (0..self.dim).rev() {
            self.next[a] += 1;
            if self.next[a] < self.counts[a] {
                break;
            }
            self.next[a] = 0;
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for IndexIter {}

/// Role tag of a sampled field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FieldKind {
    Potential,
    Density,
    LogDensity,
    /// Derived per-point diagnostics; NaN marks excluded points.
    Diagnostic,
}

/// A scalar sampled on every grid point, row-major by axis order.
#[derive(Debug, Clone)]
pub struct ScalarField {
    spec: GridSpec,
    values: Vec<f64>,
    kind: FieldKind,
}

impl ScalarField {
    pub fn new(spec: GridSpec, values: Vec<f64>, kind: FieldKind) -> Result<Self, GridError> {
        if values.len() != spec.len() {
            return Err(GridError::LengthMismatch {
                expected: spec.len(),
                got: values.len(),
            });
        }
        if kind != FieldKind::Diagnostic {
            for (i, v) in values.iter().enumerate() {
                if !v.is_finite() {
                    return Err(GridError::NonFinite { index: i });
                }
                if kind == FieldKind::Density && *v < 0.0 {
                    return Err(GridError::NegativeDensity { index: i });
                }
            }
        }
        Ok(ScalarField { spec, values, kind })
    }

    pub fn sample<F>(spec: GridSpec, kind: FieldKind, f: F) -> Result<Self, GridError>
    where
        F: Fn(&[f64]) -> f64,
    {
        let dim = spec.dim();
        let values: Vec<f64> = spec.indices().map(|i| f(&spec.point(&i)[..dim])).collect();
        Self::new(spec, values, kind)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn value(&self, idx: &Index) -> f64 {
        self.values[self.spec.flat(idx)]
    }
}

/// A sampled extended-real convex potential; values at or above `cap`
/// mean "outside the domain" and make `exp(-value)` exactly zero.
#[derive(Debug, Clone)]
pub struct PotentialField {
    field: ScalarField,
    cap: f64,
    interior_min: bool,
}

impl PotentialField {
    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        Self::with_cap(spec, values, DEFAULT_CAP)
    }

    pub fn with_cap(spec: GridSpec, mut values: Vec<f64>, cap: f64) -> Result<Self, GridError> {
        for v in values.iter_mut() {
            if *v > cap {
                *v = cap;
            }
        }
        let field = ScalarField::new(spec, values, FieldKind::Potential)?;
        let mut min = f64::INFINITY;
        let mut argmin = [0usize; MAX_DIM];
        let mut any_finite = false;
        for idx in field.spec.indices() {
            let v = field.value(&idx);
            if v < cap {
                any_finite = true;
                if v < min {
                    min = v;
                    argmin = idx;
                }
            }
        }
        if !any_finite {
            return Err(GridError::EmptyDomain);
        }
        // Coercivity surrogate: the grid minimum sits strictly inside the box.
        let interior_min = (0..field.spec.dim())
            .all(|a| argmin[a] > 0 && argmin[a] + 1 < field.spec.axis(a).count);
        Ok(PotentialField {
            field,
            cap,
            interior_min,
        })
    }

    /// Sample a potential from a closure, saturating at the default cap.
    pub fn sample<F>(spec: GridSpec, f: F) -> Result<Self, GridError>
    where
        F: Fn(&[f64]) -> f64,
    {
        let dim = spec.dim();
        let values: Vec<f64> = spec
            .indices()
            .map(|i| f(&spec.point(&i)[..dim]).min(DEFAULT_CAP))
            .collect();
        Self::from_values(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.field.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.field.values
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn value(&self, idx: &Index) -> f64 {
        self.field.value(idx)
    }

    pub fn is_finite_at(&self, flat: usize) -> bool {
        self.field.values[flat] < self.cap
    }

    /// Whether the grid minimum is attained strictly inside the box.
    /// Boundary-minimum fields cannot claim coercivity on this grid.
    pub fn has_interior_minimum(&self) -> bool {
        self.interior_min
    }

    pub fn min_value(&self) -> f64 {
        self.field
            .values
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Check evenness: the grid is symmetric and `phi(x) == phi(-x)` within `tol`.
    pub fn check_even(&self, tol: f64) -> Result<(), Index> {
        if !self.field.spec.is_symmetric() {
            return Err([0; MAX_DIM]);
        }
        for idx in self.field.spec.indices() {
            let r = self.field.spec.reflect(&idx);
            if (self.value(&idx) - self.value(&r)).abs() > tol {
                return Err(idx);
            }
        }
        Ok(())
    }

    /// The density `exp(-phi)` as a plain field (capped points become 0).
    pub fn density(&self) -> ScalarField {
        let values: Vec<f64> = self
            .field
            .values
            .iter()
            .map(|&v| if v >= self.cap { 0.0 } else { (-v).exp() })
            .collect();
        ScalarField {
            spec: self.field.spec.clone(),
            values,
            kind: FieldKind::Density,
        }
    }
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Max-shifted log-sum-exp of a slice; `-inf` entries are skipped.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let shifted: Vec<f64> = terms.iter().map(|&v| (v - m).exp()).collect();
    m + pairwise_sum(&shifted).ln()
}

/// Trapezoidal-rule integral of a density field over the grid box.
pub fn quadrature(field: &ScalarField) -> Result<f64, GridError> {
    if field.kind() != FieldKind::Density {
        return Err(GridError::KindMismatch {
            expected: FieldKind::Density,
            got: field.kind(),
        });
    }
    let spec = field.spec();
    let mut weighted = Vec::with_capacity(spec.len());
    for (flat, idx) in spec.indices().enumerate() {
        let v = field.values()[flat];
        if v.is_nan() {
            return Err(GridError::NonFinite { index: flat });
        }
        if v < 0.0 {
            return Err(GridError::NegativeDensity { index: flat });
        }
        weighted.push(v * spec.trapezoid_weight(&idx));
    }
    Ok(pairwise_sum(&weighted))
}

/// Log of the per-point quadrature weight for integrating `exp(-phi)`.
///
/// Weights follow the trapezoid rule on each contiguous finite run along
/// every axis: a point bordering the box edge or a capped neighbour gets the
/// half weight, so integrals of capped (indicator-like) potentials match the
/// trapezoid rule on the actual finite domain. Capped points get `-inf`.
pub fn run_aware_log_weights(p: &PotentialField) -> Vec<f64> {
    let spec = p.spec();
    let vals = p.values();
    let cap = p.cap();
    let mut out = vec![f64::NEG_INFINITY; spec.len()];
    for (flat, idx) in spec.indices().enumerate() {
        if vals[flat] >= cap {
            continue;
        }
        let mut logw = 0.0;
        for a in 0..spec.dim() {
            let h = spec.spacing(a);
            let mut half = false;
            if idx[a] == 0 || idx[a] + 1 == spec.axis(a).count {
                half = true;
            } else {
                let mut lo = idx;
                lo[a] -= 1;
                let mut hi = idx;
                hi[a] += 1;
                if vals[spec.flat(&lo)] >= cap || vals[spec.flat(&hi)] >= cap {
                    half = true;
                }
            }
            logw += if half { (0.5 * h).ln() } else { h.ln() };
        }
        out[flat] = logw;
    }
    out
}

/// `log ∫ exp(-phi)` over the finite region with run-aware trapezoid weights.
pub fn log_mass(p: &PotentialField) -> Result<f64, GridError> {
    let lw = run_aware_log_weights(p);
    let terms: Vec<f64> = p
        .values()
        .iter()
        .zip(lw.iter())
        .filter(|(_, &w)| w > f64::NEG_INFINITY)
        .map(|(&v, &w)| -v + w)
        .collect();
    if terms.is_empty() {
        return Err(GridError::EmptyDomain);
    }
    let lm = log_sum_exp(&terms);
    if !lm.is_finite() {
        return Err(GridError::NonFinite { index: 0 });
    }
    Ok(lm)
}

/// Central second-order finite-difference gradient at an interior point.
pub fn gradient(p: &PotentialField, idx: &Index) -> Result<[f64; MAX_DIM], GridError> {
    let spec = p.spec();
    let cap = p.cap();
    if p.value(idx) >= cap {
        return Err(GridError::CapNeighbor { index: *idx });
    }
    let mut g = [0.0; MAX_DIM];
    for a in 0..spec.dim() {
        if idx[a] == 0 || idx[a] + 1 >= spec.axis(a).count {
            return Err(GridError::BoundaryStencil { index: *idx });
        }
        let mut lo = *idx;
        lo[a] -= 1;
        let mut hi = *idx;
        hi[a] += 1;
        let (vl, vh) = (p.value(&lo), p.value(&hi));
        if vl >= cap || vh >= cap {
            return Err(GridError::CapNeighbor { index: *idx });
        }
        g[a] = (vh - vl) / (2.0 * spec.spacing(a));
    }
    Ok(g)
}

/// Central finite-difference Hessian at an interior point; symmetric by
/// construction (the mixed stencil is evaluated once per pair).
pub fn hessian(p: &PotentialField, idx: &Index) -> Result<[[f64; MAX_DIM]; MAX_DIM], GridError> {
    let spec = p.spec();
    let cap = p.cap();
    let n = spec.dim();
    let center = p.value(idx);
    if center >= cap {
        return Err(GridError::CapNeighbor { index: *idx });
    }
    let mut h = [[0.0; MAX_DIM]; MAX_DIM];
    for a in 0..n {
        if idx[a] == 0 || idx[a] + 1 >= spec.axis(a).count {
            return Err(GridError::BoundaryStencil { index: *idx });
        }
        let mut lo = *idx;
        lo[a] -= 1;
        let mut hi = *idx;
        hi[a] += 1;
        let (vl, vh) = (p.value(&lo), p.value(&hi));
        if vl >= cap || vh >= cap {
            return Err(GridError::CapNeighbor { index: *idx });
        }
        let ha = spec.spacing(a);
        h[a][a] = (vh - 2.0 * center + vl) / (ha * ha);
    }
    for a in 0..n {
        for b in (a + 1)..n {
            let mut pp = *idx;
            pp[a] += 1;
            pp[b] += 1;
            let mut pm = *idx;
            pm[a] += 1;
            pm[b] -= 1;
            let mut mp = *idx;
            mp[a] -= 1;
            mp[b] += 1;
            let mut mm = *idx;
            mm[a] -= 1;
            mm[b] -= 1;
            let (vpp, vpm, vmp, vmm) = (p.value(&pp), p.value(&pm), p.value(&mp), p.value(&mm));
            if vpp >= cap || vpm >= cap || vmp >= cap || vmm >= cap {
                return Err(GridError::CapNeighbor { index: *idx });
            }
            let v = (vpp - vpm - vmp + vmm) / (4.0 * spec.spacing(a) * spec.spacing(b));
            h[a][b] = v;
            h[b][a] = v;
        }
    }
    Ok(h)
}

fn locate(ax: &AxisSpec, x: f64) -> Option<(usize, f64)> {
    let h = ax.spacing();
    let span = ax.max - ax.min;
    if x < ax.min - 1e-12 * span || x > ax.max + 1e-12 * span {
        return None;
    }
    let u = (x - ax.min) / h;
    let cell = (u.floor() as isize).clamp(0, ax.count as isize - 2) as usize;
    let frac = (u - cell as f64).clamp(0.0, 1.0);
    Some((cell, frac))
}

/// Multilinear interpolation of raw values; `None` outside the box or when a
/// participating corner is NaN.
pub fn multilinear(spec: &GridSpec, values: &[f64], p: &[f64]) -> Option<f64> {
    let n = spec.dim();
    let mut cell = [0usize; MAX_DIM];
    let mut frac = [0.0f64; MAX_DIM];
    for a in 0..n {
        let (c, f) = locate(spec.axis(a), p[a])?;
        cell[a] = c;
        frac[a] = f;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << n) {
        let mut idx = cell;
        let mut w = 1.0;
        for a in 0..n {
            if corner >> a & 1 == 1 {
                idx[a] += 1;
                w *= frac[a];
            } else {
                w *= 1.0 - frac[a];
            }
        }
        let v = values[spec.flat(&idx)];
        if v.is_nan() {
            return None;
        }
        acc += w * v;
    }
    Some(acc)
}

/// Tensor-product quadratic interpolation (three nodes per axis, centred at
/// the nearest node). Exact on quadratics; `None` outside the box, too close
/// to the boundary, or when a participating node is NaN or at/above `cap`.
pub fn quadratic_interp(spec: &GridSpec, values: &[f64], cap: f64, p: &[f64]) -> Option<f64> {
    let n = spec.dim();
    let mut center = [0usize; MAX_DIM];
    let mut weights = [[0.0f64; 3]; MAX_DIM];
    for a in 0..n {
        let ax = spec.axis(a);
        let h = ax.spacing();
        let span = ax.max - ax.min;
        if p[a] < ax.min - 1e-12 * span || p[a] > ax.max + 1e-12 * span {
            return None;
        }
        let u = (p[a] - ax.min) / h;
        let c = (u.round() as isize).clamp(1, ax.count as isize - 2) as usize;
        let s = u - c as f64;
        weights[a] = [0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)];
        center[a] = c;
    }
    let mut acc = 0.0;
    let nodes = 3usize.pow(n as u32);
    for node in 0..nodes {
        let mut rem = node;
        let mut idx = center;
        let mut w = 1.0;
        for a in 0..n {
            let o = rem % 3;
            rem /= 3;
            idx[a] = idx[a] + o - 1;
            w *= weights[a][o];
        }
        let v = values[spec.flat(&idx)];
        if v.is_nan() || v >= cap {
            return None;
        }
        acc += w * v;
    }
    Some(acc)
}
