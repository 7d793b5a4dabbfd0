//! Discrete Legendre-Fenchel transform, biconjugation, and convexity
//! diagnostics.
//!
//! The 1-D transform runs the monotone-slope sweep over the upper convex
//! hull of `(x_k, -phi(x_k))` and agrees with the brute-force maximum term
//! by term. Higher dimensions factor the supremum axis by axis. Capped
//! points never win the supremum, so indicator potentials are first-class
//! inputs.

use thiserror::Error;

use crate::grid::{self, GridError, GridSpec, Index, Point, PotentialField, MAX_DIM};
use crate::linalg::{self, SymMat};
use crate::report::{CheckReport, Location, SampleCount};

#[derive(Debug, Error)]
pub enum ConvexError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("dual grid dimension {dual} does not match primal dimension {primal}")]
    DimensionMismatch { primal: usize, dual: usize },
    #[error("brute-force conjugate of {size} point pairs exceeds the 1e8 budget")]
    BruteForceBudget { size: usize },
    #[error("more than {limit:.0}% of sampled points left the primal grid ({skipped}/{total})")]
    Coverage {
        limit: f64,
        skipped: usize,
        total: usize,
    },
}

/// Max of `z*x - phi(x)` over the finite points of one line, swept for all
/// dual coordinates in increasing order. `neg` holds `-phi` so the inner
/// expression is evaluated exactly as the brute force does it.
fn sweep_line(xs: &[f64], neg: &[f64], finite: &[usize], duals: &[f64], out: &mut [f64]) {
    debug_assert_eq!(duals.len(), out.len());
    if finite.is_empty() {
        out.fill(f64::NEG_INFINITY);
        return;
    }
    // Upper hull of (x_k, -phi_k); pop while the middle point is on or
    // below the chord, which keeps the later point on slope ties.
    let mut hull: Vec<usize> = Vec::with_capacity(finite.len());
    for &k in finite {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let keep = (neg[b] - neg[a]) * (xs[k] - xs[b]) > (neg[k] - neg[b]) * (xs[b] - xs[a]);
            if keep {
                break;
            }
            hull.pop();
        }
        hull.push(k);
    }
    let eval = |k: usize, z: f64| z * xs[k] + neg[k];
    let mut p = 0;
    for (j, &z) in duals.iter().enumerate() {
        while p + 1 < hull.len() && eval(hull[p + 1], z) >= eval(hull[p], z) {
            p += 1;
        }
        let mut best = eval(hull[p], z);
        if p > 0 {
            // Guard against a one-ulp dip in the unimodal profile.
            let prev = eval(hull[p - 1], z);
            if prev > best {
                best = prev;
            }
        }
        out[j] = best;
    }
}

/// Legendre transform `phi*(z) = sup_x z.x - phi(x)` onto a dual grid.
///
/// Dimension >= 2 factors the supremum: conjugate along axis 0, negate,
/// conjugate along axis 1, and so on.
pub fn legendre_transform(
    primal: &PotentialField,
    dual_grid: &GridSpec,
) -> Result<PotentialField, ConvexError> {
    let n = primal.spec().dim();
    if dual_grid.dim() != n {
        return Err(ConvexError::DimensionMismatch {
            primal: n,
            dual: dual_grid.dim(),
        });
    }
    let cap = primal.cap();

    let mut counts = [1usize; MAX_DIM];
    for a in 0..n {
        counts[a] = primal.spec().axis(a).count;
    }
    let mut values: Vec<f64> = primal.values().to_vec();

    for axis in 0..n {
        let src_count = counts[axis];
        let dst_count = dual_grid.axis(axis).count;
        let xs: Vec<f64> = (0..src_count)
            .map(|k| primal.spec().axis(axis).coord(k))
            .collect();
        let duals: Vec<f64> = (0..dst_count)
            .map(|j| dual_grid.axis(axis).coord(j))
            .collect();

        // Strides of the current tensor (row-major over `counts`).
        let mut stride = [1usize; MAX_DIM];
        for a in (0..n.saturating_sub(1)).rev() {
            stride[a] = stride[a + 1] * counts[a + 1];
        }
        let line_stride = stride[axis];

        let mut new_counts = counts;
        new_counts[axis] = dst_count;
        let mut new_stride = [1usize; MAX_DIM];
        for a in (0..n.saturating_sub(1)).rev() {
            new_stride[a] = new_stride[a + 1] * new_counts[a + 1];
        }
        let new_len: usize = (0..n).map(|a| new_counts[a]).product();
        let mut out = vec![0.0f64; new_len];

        let mut neg = vec![0.0f64; src_count];
        let mut finite = Vec::with_capacity(src_count);
        let mut line_out = vec![0.0f64; dst_count];

        // Iterate every line along `axis`: all index combinations of the
        // other axes.
        let mut outer: Index = [0; MAX_DIM];
        loop {
            let mut base = 0;
            let mut new_base = 0;
            for a in 0..n {
                if a != axis {
                    base += outer[a] * stride[a];
                    new_base += outer[a] * new_stride[a];
                }
            }
            finite.clear();
            for k in 0..src_count {
                let v = values[base + k * line_stride];
                neg[k] = -v;
                if v < cap {
                    finite.push(k);
                }
            }
            sweep_line(&xs, &neg, &finite, &duals, &mut line_out);
            for (j, &v) in line_out.iter().enumerate() {
                // An all-capped line has an empty supremum; -cap survives
                // the inter-pass negation as "absent".
                out[new_base + j * new_stride[axis]] = if v == f64::NEG_INFINITY {
                    -cap
                } else {
                    v.min(cap)
                };
            }

            // Advance the outer multi-index, skipping `axis`.
            let mut done = true;
            for a in (0..n).rev() {
                if a == axis {
                    continue;
                }
                outer[a] += 1;
                if outer[a] < counts[a] {
                    done = false;
                    break;
                }
                outer[a] = 0;
            }
            if done {
                break;
            }
        }

        counts = new_counts;
        values = out;
        if axis + 1 < n {
            for v in values.iter_mut() {
                *v = -*v;
            }
        }
    }

    Ok(PotentialField::with_cap(dual_grid.clone(), values, cap)?)
}

/// Literal `max_k (z.x_k - phi(x_k))` over the whole grid; the ground truth
/// for `legendre_transform`.
pub fn brute_force_conjugate(
    primal: &PotentialField,
    dual_grid: &GridSpec,
) -> Result<PotentialField, ConvexError> {
    let n = primal.spec().dim();
    if dual_grid.dim() != n {
        return Err(ConvexError::DimensionMismatch {
            primal: n,
            dual: dual_grid.dim(),
        });
    }
    let size = primal.spec().len().saturating_mul(dual_grid.len());
    if size > 100_000_000 {
        return Err(ConvexError::BruteForceBudget { size });
    }
    let cap = primal.cap();
    let finite: Vec<(Point, f64)> = primal
        .spec()
        .indices()
        .enumerate()
        .filter(|(flat, _)| primal.is_finite_at(*flat))
        .map(|(flat, idx)| (primal.spec().point(&idx), primal.values()[flat]))
        .collect();
    if finite.is_empty() {
        return Err(GridError::EmptyDomain.into());
    }
    let mut values = Vec::with_capacity(dual_grid.len());
    for zi in dual_grid.indices() {
        let z = dual_grid.point(&zi);
        let mut best = f64::NEG_INFINITY;
        for (x, phi) in &finite {
            let mut dot = 0.0;
            for a in 0..n {
                dot += z[a] * x[a];
            }
            let v = dot - phi;
            if v > best {
                best = v;
            }
        }
        values.push(best.min(cap));
    }
    Ok(PotentialField::with_cap(dual_grid.clone(), values, cap)?)
}

/// Directions probed by the convexity defect: axes, plus diagonals for
/// every axis pair.
fn defect_directions(n: usize) -> Vec<[isize; MAX_DIM]> {
    let mut dirs = Vec::new();
    for a in 0..n {
        let mut d = [0isize; MAX_DIM];
        d[a] = 1;
        dirs.push(d);
    }
    for a in 0..n {
        for b in (a + 1)..n {
            let mut d = [0isize; MAX_DIM];
            d[a] = 1;
            d[b] = 1;
            dirs.push(d);
            d[b] = -1;
            dirs.push(d);
        }
    }
    dirs
}

/// Largest violation of discrete midpoint convexity: the most negative
/// second difference `phi(x+d) - 2 phi(x) + phi(x-d)` over interior points
/// and probe directions, reported as a positive number (0 = convex).
///
/// Stencils whose endpoints are capped are skipped: an infinite endpoint
/// can never witness a violation in the extended reals. A capped midpoint
/// between finite endpoints is a genuine violation and shows up huge.
pub fn convexity_defect(p: &PotentialField) -> f64 {
    let spec = p.spec();
    let n = spec.dim();
    let cap = p.cap();
    let dirs = defect_directions(n);
    let mut worst = 0.0f64;
    for idx in spec.indices() {
        'dir: for d in &dirs {
            let mut hi = [0usize; MAX_DIM];
            let mut lo = [0usize; MAX_DIM];
            for a in 0..n {
                let i = idx[a] as isize;
                let (ih, il) = (i + d[a], i - d[a]);
                if ih < 0 || il < 0 {
                    continue 'dir;
                }
                let (ih, il) = (ih as usize, il as usize);
                if ih >= spec.axis(a).count || il >= spec.axis(a).count {
                    continue 'dir;
                }
                hi[a] = ih;
                lo[a] = il;
            }
            let (vh, vl) = (p.value(&hi), p.value(&lo));
            if vh >= cap || vl >= cap {
                continue;
            }
            let s = vh - 2.0 * p.value(&idx) + vl;
            if -s > worst {
                worst = -s;
            }
        }
    }
    worst
}

/// Observed discrete slope range of the primal per axis; a helper for
/// choosing dual grid bounds.
pub fn suggest_dual_bounds(p: &PotentialField) -> Vec<(f64, f64)> {
    let spec = p.spec();
    let cap = p.cap();
    let mut out = Vec::with_capacity(spec.dim());
    for a in 0..spec.dim() {
        let h = spec.spacing(a);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for idx in spec.indices() {
            if idx[a] + 1 >= spec.axis(a).count {
                continue;
            }
            let mut nxt = idx;
            nxt[a] += 1;
            let (v0, v1) = (p.value(&idx), p.value(&nxt));
            if v0 >= cap || v1 >= cap {
                continue;
            }
            let s = (v1 - v0) / h;
            lo = lo.min(s);
            hi = hi.max(s);
        }
        if lo > hi {
            out.push((0.0, 0.0));
        } else {
            out.push((lo, hi));
        }
    }
    out
}

/// Whether the dual grid box contains every observed discrete slope of the
/// primal (the condition for the biconjugate to reach the convex envelope).
pub fn slope_coverage(primal: &PotentialField, dual_grid: &GridSpec) -> bool {
    suggest_dual_bounds(primal)
        .iter()
        .enumerate()
        .all(|(a, (lo, hi))| dual_grid.axis(a).min <= *lo && dual_grid.axis(a).max >= *hi)
}

/// A primal/dual pair with its consistency diagnostics.
#[derive(Debug, Clone)]
pub struct ConjugatePair {
    pub primal: PotentialField,
    pub dual: PotentialField,
    pub slope_coverage_ok: bool,
    pub dual_convexity_defect: f64,
}

impl ConjugatePair {
    pub fn build(primal: PotentialField, dual_grid: &GridSpec) -> Result<Self, ConvexError> {
        let dual = legendre_transform(&primal, dual_grid)?;
        let slope_coverage_ok = slope_coverage(&primal, dual_grid);
        let dual_convexity_defect = convexity_defect(&dual);
        Ok(ConjugatePair {
            primal,
            dual,
            slope_coverage_ok,
            dual_convexity_defect,
        })
    }
}

/// Per-point central-difference gradient of a potential, NaN where the
/// stencil does not apply, with multilinear evaluation between nodes.
pub struct GradientField {
    spec: GridSpec,
    comps: Vec<Vec<f64>>,
}

impl GradientField {
    pub fn of(p: &PotentialField) -> Self {
        let spec = p.spec().clone();
        let n = spec.dim();
        let mut comps = vec![vec![f64::NAN; spec.len()]; n];
        for (flat, idx) in spec.indices().enumerate() {
            if let Ok(g) = grid::gradient(p, &idx) {
                for a in 0..n {
                    comps[a][flat] = g[a];
                }
            }
        }
        GradientField { spec, comps }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn interp(&self, x: &[f64]) -> Option<[f64; MAX_DIM]> {
        let mut g = [0.0; MAX_DIM];
        for (a, comp) in self.comps.iter().enumerate() {
            g[a] = grid::multilinear(&self.spec, comp, x)?;
        }
        Some(g)
    }

    /// Box in which interpolation can possibly succeed (one node in from
    /// the boundary on every axis). The top end retreats by a whisker so a
    /// clamped point interpolates from the last fully valid cell.
    pub fn valid_box(&self) -> Vec<(f64, f64)> {
        (0..self.spec.dim())
            .map(|a| {
                let ax = self.spec.axis(a);
                let pad = 1e-9 * ax.spacing();
                (ax.coord(1) + pad, ax.coord(ax.count - 2) - pad)
            })
            .collect()
    }
}

/// Per-point Hessian entries of a potential with multilinear evaluation.
pub struct HessianField {
    spec: GridSpec,
    dim: usize,
    // Upper-triangle entries in row-major pair order.
    comps: Vec<Vec<f64>>,
}

fn pair_slot(n: usize, i: usize, j: usize) -> usize {
    // (i, j) with i <= j among the n*(n+1)/2 upper-triangle slots.
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

impl HessianField {
    pub fn of(p: &PotentialField) -> Self {
        let spec = p.spec().clone();
        let n = spec.dim();
        let slots = n * (n + 1) / 2;
        let mut comps = vec![vec![f64::NAN; spec.len()]; slots];
        for (flat, idx) in spec.indices().enumerate() {
            if let Ok(h) = grid::hessian(p, &idx) {
                for i in 0..n {
                    for j in i..n {
                        comps[pair_slot(n, i, j)][flat] = h[i][j];
                    }
                }
            }
        }
        HessianField {
            spec,
            dim: n,
            comps,
        }
    }

    pub fn interp(&self, x: &[f64]) -> Option<SymMat> {
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..self.dim {
            for j in i..self.dim {
                let v = grid::multilinear(&self.spec, &self.comps[pair_slot(self.dim, i, j)], x)?;
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        Some(m)
    }
}

/// Solve `grad phi(x) = z` by damped Newton on the interpolated gradient,
/// i.e. evaluate `grad phi*` at `z`. Returns `None` when the iteration
/// leaves the valid box or stalls.
pub fn invert_gradient(
    grad: &GradientField,
    hess: &HessianField,
    z: &[f64],
    seed: &[f64],
) -> Option<Point> {
    let n = grad.spec().dim();
    let boxes = grad.valid_box();
    let clamp = |x: &mut Point| {
        for a in 0..n {
            x[a] = x[a].clamp(boxes[a].0, boxes[a].1);
        }
    };
    let mut x: Point = [0.0; MAX_DIM];
    x[..n].copy_from_slice(&seed[..n]);
    clamp(&mut x);

    let scale = 1.0 + z.iter().take(n).map(|v| v.abs()).fold(0.0, f64::max);
    let resid = |x: &Point| -> Option<f64> {
        let g = grad.interp(x)?;
        let mut r = 0.0f64;
        for a in 0..n {
            r = r.max((g[a] - z[a]).abs());
        }
        Some(r)
    };

    let mut r = resid(&x)?;
    for _ in 0..60 {
        if r <= 1e-10 * scale {
            return Some(x);
        }
        let g = grad.interp(&x)?;
        let h = hess.interp(&x)?;
        let hinv = linalg::inverse(&h, n)?;
        let mut rhs = [0.0; MAX_DIM];
        for a in 0..n {
            rhs[a] = g[a] - z[a];
        }
        let step = linalg::mat_vec(&hinv, &rhs, n);
        // Backtrack until the residual drops.
        let mut lambda = 1.0;
        let mut advanced = false;
        for _ in 0..8 {
            let mut xn = x;
            for a in 0..n {
                xn[a] -= lambda * step[a];
            }
            clamp(&mut xn);
            if let Some(rn) = resid(&xn) {
                if rn < r {
                    x = xn;
                    r = rn;
                    advanced = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !advanced {
            break;
        }
    }
    if r <= 1e-6 * scale {
        Some(x)
    } else {
        None
    }
}

/// Verify that `grad phi` and `grad psi` invert each other: sample interior
/// dual points `z`, move to `x = grad psi(z)` by finite differences, and
/// measure `|grad phi(x) - z|` through multilinear interpolation.
pub fn gradient_map_inverse_check(
    primal: &PotentialField,
    dual: &PotentialField,
    margin_fraction: f64,
    tolerance: f64,
) -> Result<CheckReport, ConvexError> {
    let spec = dual.spec();
    let n = spec.dim();
    let margin = spec.margin(margin_fraction);
    let grad_primal = GradientField::of(primal);

    let mut max_resid = 0.0f64;
    let mut worst: Option<Location> = None;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for idx in spec.indices() {
        if !spec.is_interior(&idx, &margin) {
            continue;
        }
        let z = spec.point(&idx);
        let x = match grid::gradient(dual, &idx) {
            Ok(g) => g,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let Some(g) = grad_primal.interp(&x) else {
            skipped += 1;
            continue;
        };
        let mut r = 0.0f64;
        for a in 0..n {
            r = r.max((g[a] - z[a]).abs());
        }
        checked += 1;
        if r > max_resid {
            max_resid = r;
            worst = Some(Location {
                point: z[..n].to_vec(),
                t: None,
            });
        }
    }
    let total = checked + skipped;
    if total == 0 || skipped * 5 > total {
        return Err(ConvexError::Coverage {
            limit: 20.0,
            skipped,
            total,
        });
    }
    Ok(CheckReport::evaluate(
        "gradient_map_inverse",
        max_resid,
        tolerance,
        worst,
        SampleCount { checked, skipped },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{AxisSpec, DEFAULT_CAP};
    use proptest::prelude::*;

    fn grid1(min: f64, max: f64, count: usize) -> GridSpec {
        GridSpec::new(vec![AxisSpec::new(min, max, count)]).unwrap()
    }

    fn indicator(spec: GridSpec, radius: f64) -> PotentialField {
        PotentialField::sample(spec, |x| {
            if x[0].abs() <= radius {
                0.0
            } else {
                DEFAULT_CAP
            }
        })
        .unwrap()
    }

    #[test]
    fn gaussian_is_a_fixed_point() {
        let spec = grid1(-6.0, 6.0, 1025);
        let p = PotentialField::sample(spec.clone(), |x| x[0] * x[0] / 2.0).unwrap();
        let dual = legendre_transform(&p, &spec).unwrap();
        let margin = spec.margin(0.1);
        let mut worst = 0.0f64;
        for idx in spec.indices() {
            if !spec.is_interior(&idx, &margin) {
                continue;
            }
            let z = spec.point(&idx)[0];
            worst = worst.max((dual.value(&idx) - z * z / 2.0).abs());
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn indicator_conjugate_is_support_function() {
        // +-1 are grid points, so the discrete support function is exact.
        let spec = grid1(-8.0, 8.0, 1025);
        let dual_spec = grid1(-5.0, 5.0, 257);
        let p = indicator(spec, 1.0);
        let dual = legendre_transform(&p, &dual_spec).unwrap();
        for idx in dual_spec.indices() {
            let z = dual_spec.point(&idx)[0];
            assert!(
                (dual.value(&idx) - z.abs()).abs() <= 1e-12,
                "z={z} got {}",
                dual.value(&idx)
            );
        }
    }

    #[test]
    fn quartic_conjugate_closed_form() {
        let spec = grid1(-4.0, 4.0, 1025);
        let dual_spec = grid1(-8.0, 8.0, 1025);
        let p = PotentialField::sample(spec, |x| x[0].powi(4) / 4.0).unwrap();
        let dual = legendre_transform(&p, &dual_spec).unwrap();
        let brute = brute_force_conjugate(&p, &dual_spec).unwrap();
        let mut worst = 0.0f64;
        for idx in dual_spec.indices() {
            let z: f64 = dual_spec.point(&idx)[0];
            let exact = 0.75 * z.abs().powf(4.0 / 3.0);
            worst = worst.max((dual.value(&idx) - exact).abs());
            assert!(dual.value(&idx) == brute.value(&idx));
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn abs_conjugate_clips_to_indicator() {
        let spec = grid1(-3.0, 3.0, 385);
        let dual_spec = grid1(-2.0, 2.0, 257);
        let p = PotentialField::sample(spec, |x| x[0].abs()).unwrap();
        let dual = legendre_transform(&p, &dual_spec).unwrap();
        for idx in dual_spec.indices() {
            let z: f64 = dual_spec.point(&idx)[0];
            let v = dual.value(&idx);
            if z.abs() <= 1.0 {
                assert!(v.abs() <= 1e-12, "z={z} v={v}");
            } else {
                let expect = 3.0 * (z.abs() - 1.0);
                assert!((v - expect).abs() <= 1e-9, "z={z} v={v}");
            }
        }
    }

    #[test]
    fn factored_matches_brute_force_2d() {
        let spec = GridSpec::new(vec![
            AxisSpec::new(-3.0, 3.0, 33),
            AxisSpec::new(-3.0, 3.0, 33),
        ])
        .unwrap();
        let dual_spec = spec.clone();
        let p = PotentialField::sample(spec, |x| (x[0] * x[0] + x[1] * x[1]) / 2.0).unwrap();
        let fast = legendre_transform(&p, &dual_spec).unwrap();
        let brute = brute_force_conjugate(&p, &dual_spec).unwrap();
        for (a, b) in fast.values().iter().zip(brute.values()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn ball_indicator_2d_support_function() {
        let spec = GridSpec::new(vec![
            AxisSpec::new(-4.0, 4.0, 65),
            AxisSpec::new(-4.0, 4.0, 65),
        ])
        .unwrap();
        let dual_spec = GridSpec::new(vec![
            AxisSpec::new(-2.0, 2.0, 33),
            AxisSpec::new(-2.0, 2.0, 33),
        ])
        .unwrap();
        let p = PotentialField::sample(spec, |x| {
            if x[0].hypot(x[1]) <= 1.0 {
                0.0
            } else {
                DEFAULT_CAP
            }
        })
        .unwrap();
        let fast = legendre_transform(&p, &dual_spec).unwrap();
        let brute = brute_force_conjugate(&p, &dual_spec).unwrap();
        let h = 8.0 / 64.0;
        for idx in dual_spec.indices() {
            let z = dual_spec.point(&idx);
            let exact = z[0].hypot(z[1]);
            assert!((fast.value(&idx) - brute.value(&idx)).abs() <= 1e-12);
            // Support function of the grid-inscribed disc is within O(h).
            assert!((fast.value(&idx) - exact).abs() <= 2.0 * h, "z={z:?}");
        }
    }

    #[test]
    fn convexity_defect_examples() {
        let spec = grid1(-1.0, 1.0, 21); // h = 0.1
        let convex = PotentialField::sample(spec.clone(), |x| x[0] * x[0]).unwrap();
        assert!(convexity_defect(&convex) <= 1e-15);
        let concave = PotentialField::sample(spec.clone(), |x| -x[0] * x[0]).unwrap();
        let d = convexity_defect(&concave);
        assert!((d - 0.02).abs() < 1e-12, "{d}");
        let kink = PotentialField::sample(spec, |x| x[0].abs()).unwrap();
        assert!(convexity_defect(&kink) <= 1e-15);
    }

    #[test]
    fn capped_pit_is_flagged_and_capped_walls_are_not() {
        let spec = grid1(-2.0, 2.0, 17);
        let pit = PotentialField::sample(spec.clone(), |x| {
            if x[0].abs() < 0.2 {
                DEFAULT_CAP
            } else {
                0.0
            }
        })
        .unwrap();
        assert!(convexity_defect(&pit) > 1e8);
        let walls = indicator(spec, 1.0);
        assert_eq!(convexity_defect(&walls), 0.0);
    }

    #[test]
    fn conjugates_are_discretely_convex() {
        let spec = grid1(-4.0, 4.0, 257);
        let dual_spec = grid1(-3.0, 3.0, 193);
        for f in [
            |x: &[f64]| x[0] * x[0] / 2.0,
            |x: &[f64]| x[0].powi(4) / 4.0,
            |x: &[f64]| x[0].cosh() - 1.0,
        ] {
            let p = PotentialField::sample(spec.clone(), f).unwrap();
            let dual = legendre_transform(&p, &dual_spec).unwrap();
            assert!(convexity_defect(&dual) <= 1e-12);
        }
    }

    #[test]
    fn order_reversal_is_exact() {
        let spec = grid1(-4.0, 4.0, 129);
        let dual_spec = grid1(-3.0, 3.0, 97);
        let lo = PotentialField::sample(spec.clone(), |x| x[0] * x[0] / 2.0).unwrap();
        let hi = PotentialField::sample(spec, |x| x[0] * x[0] / 2.0 + 0.3).unwrap();
        let lo_c = legendre_transform(&lo, &dual_spec).unwrap();
        let hi_c = legendre_transform(&hi, &dual_spec).unwrap();
        for (a, b) in lo_c.values().iter().zip(hi_c.values()) {
            assert!(a >= b);
        }
    }

    #[test]
    fn translation_rule() {
        let spec = grid1(-6.0, 6.0, 769);
        let dual_spec = grid1(-3.0, 3.0, 385);
        let a = 0.75;
        let shifted = PotentialField::sample(spec, |x| (x[0] - a) * (x[0] - a) / 2.0).unwrap();
        let dual = legendre_transform(&shifted, &dual_spec).unwrap();
        let mut worst = 0.0f64;
        for idx in dual_spec.indices() {
            let z: f64 = dual_spec.point(&idx)[0];
            worst = worst.max((dual.value(&idx) - (z * z / 2.0 + a * z)).abs());
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn biconjugation_reaches_convex_envelope() {
        let spec = grid1(-3.0, 3.0, 385);
        let dual_spec = grid1(-30.0, 30.0, 2049); // covers quartic slopes on [-3,3]
        let p = PotentialField::sample(spec.clone(), |x| x[0].powi(4) / 4.0).unwrap();
        let conj = legendre_transform(&p, &dual_spec).unwrap();
        let back = legendre_transform(&conj, &spec).unwrap();
        let margin = spec.margin(0.1);
        let h = spec.spacing(0);
        let mut worst = 0.0f64;
        for idx in spec.indices() {
            if !spec.is_interior(&idx, &margin) {
                continue;
            }
            worst = worst.max((back.value(&idx) - p.value(&idx)).abs());
        }
        assert!(worst <= 5.0 * h, "worst {worst} vs h {h}");
    }

    #[test]
    fn suggest_bounds_and_coverage() {
        let spec = grid1(-2.0, 2.0, 65);
        let p = PotentialField::sample(spec, |x| x[0] * x[0] / 2.0).unwrap();
        let b = suggest_dual_bounds(&p);
        assert!(b[0].0 < -1.8 && b[0].1 > 1.8);
        assert!(slope_coverage(&p, &grid1(-3.0, 3.0, 65)));
        assert!(!slope_coverage(&p, &grid1(-1.0, 1.0, 65)));
    }

    #[test]
    fn all_cap_rejected() {
        let spec = grid1(-1.0, 1.0, 16);
        let vals = vec![DEFAULT_CAP; 16];
        assert!(PotentialField::from_values(spec, vals).is_err());
    }

    #[test]
    fn gradient_map_inverse_gaussian_pair() {
        let spec = grid1(-6.0, 6.0, 513);
        let p = PotentialField::sample(spec.clone(), |x| x[0] * x[0] / 2.0).unwrap();
        let dual = legendre_transform(&p, &spec).unwrap();
        let report = gradient_map_inverse_check(&p, &dual, 0.1, 5e-3).unwrap();
        assert!(report.passed, "residual {}", report.max_residual);
    }

    #[test]
    fn gradient_map_inverse_anisotropic_2d() {
        // Both fields sampled smooth per the check's precondition: the
        // conjugate of x^2/2 + 2y^2 is z1^2/2 + z2^2/8.
        let spec = GridSpec::new(vec![
            AxisSpec::new(-6.0, 6.0, 129),
            AxisSpec::new(-6.0, 6.0, 129),
        ])
        .unwrap();
        let dual_spec = GridSpec::new(vec![
            AxisSpec::new(-4.0, 4.0, 97),
            AxisSpec::new(-8.0, 8.0, 97),
        ])
        .unwrap();
        let p = PotentialField::sample(spec, |x| x[0] * x[0] / 2.0 + 2.0 * x[1] * x[1]).unwrap();
        let dual =
            PotentialField::sample(dual_spec, |z| z[0] * z[0] / 2.0 + z[1] * z[1] / 8.0).unwrap();
        let report = gradient_map_inverse_check(&p, &dual, 0.1, 5e-3).unwrap();
        assert!(report.passed, "residual {}", report.max_residual);
    }

    #[test]
    fn newton_gradient_inverse_on_quartic() {
        let spec = grid1(-4.0, 4.0, 1025);
        let p = PotentialField::sample(spec.clone(), |x| x[0].powi(4) / 4.0).unwrap();
        let grad = GradientField::of(&p);
        let hess = HessianField::of(&p);
        for z in [0.5f64, 1.0, 2.0, -1.5] {
            let seed = [z.cbrt() + 0.3, 0.0, 0.0];
            let x = invert_gradient(&grad, &hess, &[z], &seed).unwrap();
            assert!((x[0] - z.cbrt()).abs() < 1e-4, "z={z} x={}", x[0]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Sweep equals brute force bit for bit on random convex piecewise
        /// data over small grids.
        #[test]
        fn sweep_matches_brute_force_exactly(
            seed_slopes in proptest::collection::vec(-3.0f64..3.0, 7..=63),
            count in 8usize..=64,
            dual_count in 8usize..=64,
        ) {
            let spec = grid1(-2.0, 2.0, count);
            let mut slopes = seed_slopes;
            slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // Integrate a nondecreasing slope sequence into convex samples.
            let h = spec.spacing(0);
            let mut vals = Vec::with_capacity(count);
            let mut acc = 0.0;
            for k in 0..count {
                vals.push(acc);
                let s = slopes[k % slopes.len()];
                acc += s * h;
            }
            let p = PotentialField::from_values(spec, vals).unwrap();
            let dual_spec = grid1(-3.5, 3.5, dual_count);
            let fast = legendre_transform(&p, &dual_spec).unwrap();
            let brute = brute_force_conjugate(&p, &dual_spec).unwrap();
            for (a, b) in fast.values().iter().zip(brute.values()) {
                // Exact equality as float values (+-0 count as equal).
                prop_assert!(a == b, "{} vs {}", a, b);
            }
            prop_assert!(convexity_defect(&fast) <= 1e-12);
        }

        /// Order reversal holds exactly for arbitrary (even non-convex) data.
        #[test]
        fn order_reversal_random(
            vals in proptest::collection::vec(-2.0f64..2.0, 32),
            bump in 0.0f64..1.5,
        ) {
            let spec = grid1(-1.0, 1.0, 32);
            let lo = PotentialField::from_values(spec.clone(), vals.clone()).unwrap();
            let hi_vals: Vec<f64> = vals.iter().map(|v| v + bump).collect();
            let hi = PotentialField::from_values(spec, hi_vals).unwrap();
            let dual_spec = grid1(-2.0, 2.0, 33);
            let lo_c = legendre_transform(&lo, &dual_spec).unwrap();
            let hi_c = legendre_transform(&hi, &dual_spec).unwrap();
            for (a, b) in lo_c.values().iter().zip(hi_c.values()) {
                prop_assert!(a >= b);
            }
        }
    }
}
