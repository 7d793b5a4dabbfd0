//! Heat and Fokker-Planck semigroups acting on `exp(-phi)`, evaluated in
//! the log domain directly from the initial datum.
//!
//! Every output value is an independent Gaussian-kernel quadrature over the
//! source grid (no time stepping, no error accumulation across snapshots).
//! The Fokker-Planck flow is obtained from the heat flow by the space-time
//! rescaling `Q_t u(x) = e^{nt} P_{(e^{2t}-1)/2} u(e^t x)`.

use rayon::prelude::*;
use thiserror::Error;

use crate::convex::{self, ConvexError};
use crate::grid::{self, GridError, GridSpec, Point, PotentialField, MAX_DIM};
use crate::special::ln_normal_sf;

#[derive(Debug, Error)]
pub enum HeatError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Convex(#[from] ConvexError),
    #[error("diffusion time must be positive, got {t}")]
    NonPositiveTime { t: f64 },
    #[error("time step {dt} does not fit inside t = {t}")]
    StepTooLarge { dt: f64, t: f64 },
    #[error(
        "source box too narrow at output point {point:?}: predicted tail fraction exp({log_ratio:.3}) exceeds {tolerance:e}"
    )]
    Truncation {
        point: Vec<f64>,
        log_ratio: f64,
        tolerance: f64,
    },
    #[error("output grid dimension {out} does not match source dimension {src}")]
    DimensionMismatch { src: usize, out: usize },
}

/// Knobs for semigroup evaluation.
#[derive(Debug, Clone, Copy)]
pub struct HeatParams {
    /// Bound on the mass the Gaussian kernel may pick up outside the
    /// source box, certified per output point through the convex boundary
    /// extension of the potential and measured against the total source
    /// mass. Output points then carry at most this much absolute density
    /// error on the scale of the integral being evolved.
    pub tail_tolerance: f64,
}

impl Default for HeatParams {
    fn default() -> Self {
        HeatParams {
            tail_tolerance: 1e-12,
        }
    }
}

/// Centered time-difference step: `t/100` clamped to `[1e-5, 1e-2]`.
pub fn default_dt(t: f64) -> f64 {
    (t / 100.0).clamp(1e-5, 1e-2)
}

/// Per-axis data for the boundary-extension tail bound: on each face the
/// potential is extended linearly from its smallest boundary value with its
/// shallowest outward slope, which minorizes any convex continuation.
struct FaceTail {
    /// min over the face of phi (cap when the face carries no density).
    value: f64,
    /// shallowest outward slope of phi at the face.
    slope: f64,
}

fn face_tails(phi: &PotentialField) -> Vec<[FaceTail; 2]> {
    let spec = phi.spec();
    let cap = phi.cap();
    let n = spec.dim();
    let mut out = Vec::with_capacity(n);
    for a in 0..n {
        let count = spec.axis(a).count;
        let h = spec.spacing(a);
        let mut faces = [
            FaceTail {
                value: cap,
                slope: 0.0,
            },
            FaceTail {
                value: cap,
                slope: 0.0,
            },
        ];
        for (side, (edge, inner)) in [(0usize, 1usize), (count - 1, count - 2)]
            .into_iter()
            .enumerate()
        {
            let mut vmin = cap;
            let mut smin = f64::INFINITY;
            for idx in spec.indices() {
                if idx[a] != edge {
                    continue;
                }
                let v = phi.value(&idx);
                if v >= cap {
                    continue;
                }
                vmin = vmin.min(v);
                let mut nb = idx;
                nb[a] = inner;
                let vn = phi.value(&nb);
                if vn < cap {
                    smin = smin.min((v - vn) / h);
                }
            }
            faces[side] = FaceTail {
                value: vmin,
                slope: if smin.is_finite() { smin.max(0.0) } else { 0.0 },
            };
        }
        out.push(faces);
    }
    out
}

/// `ln` of `int_{u > gap} exp(-s u) * N(0, sigma^2)(u + offset...) `:
/// the exponentially tilted Gaussian slab tail
/// `∫_{y > a} e^{-s (y - a)} e^{-(y - x)^2 / (2 sigma^2)} dy / (sigma sqrt(2 pi))`
/// with `a0 = a - x`.
fn ln_tilted_tail(a0: f64, s: f64, sigma2: f64) -> f64 {
    let sigma = sigma2.sqrt();
    s * s * sigma2 / 2.0 + s * a0 + ln_normal_sf(a0 / sigma + s * sigma)
}

struct SourceData {
    points: Vec<Point>,
    /// `-phi(y_k) + ln w_k` per finite source point.
    base: Vec<f64>,
}

fn source_data(phi: &PotentialField) -> SourceData {
    let spec = phi.spec();
    let lw = grid::run_aware_log_weights(phi);
    let mut points = Vec::new();
    let mut base = Vec::new();
    for (flat, idx) in spec.indices().enumerate() {
        if lw[flat] == f64::NEG_INFINITY {
            continue;
        }
        points.push(spec.point(&idx));
        base.push(-phi.values()[flat] + lw[flat]);
    }
    SourceData { points, base }
}

/// Evaluate `phi_t(x) = -log P_t(e^{-phi})(x)` at arbitrary points.
fn evolve_at_points(
    phi0: &PotentialField,
    t: f64,
    pts: &[Point],
    params: &HeatParams,
) -> Result<Vec<f64>, HeatError> {
    if !(t > 0.0) {
        return Err(HeatError::NonPositiveTime { t });
    }
    let spec = phi0.spec();
    let n = spec.dim();
    let src = source_data(phi0);
    let faces = face_tails(phi0);
    let log_norm = (n as f64 / 2.0) * (4.0 * std::f64::consts::PI * t).ln();
    let inv4t = 1.0 / (4.0 * t);
    let sigma2 = 2.0 * t;
    let src_log_mass = crate::grid::log_sum_exp(&src.base);
    let ln_tol = params.tail_tolerance.ln();

    let results: Vec<Result<f64, HeatError>> = pts
        .par_iter()
        .map(|x| {
            // Two-pass max-shifted log-sum-exp with compensated summation.
            let mut max_term = f64::NEG_INFINITY;
            for (y, b) in src.points.iter().zip(&src.base) {
                let mut d2 = 0.0;
                for a in 0..n {
                    let d = x[a] - y[a];
                    d2 += d * d;
                }
                let term = b - d2 * inv4t;
                if term > max_term {
                    max_term = term;
                }
            }
            let mut sum = 0.0f64;
            let mut comp = 0.0f64;
            for (y, b) in src.points.iter().zip(&src.base) {
                let mut d2 = 0.0;
                for a in 0..n {
                    let d = x[a] - y[a];
                    d2 += d * d;
                }
                let term = (b - d2 * inv4t - max_term).exp();
                let t1 = sum + term;
                comp += if sum.abs() >= term.abs() {
                    (sum - t1) + term
                } else {
                    (term - t1) + sum
                };
                sum = t1;
            }
            let log_box = max_term + (sum + comp).ln();

            // Tail certificate: mass the kernel could pick up beyond each
            // face under the convex boundary extension, relative to the
            // computed box integral.
            let mut ln_tail = f64::NEG_INFINITY;
            for a in 0..n {
                let ax = spec.axis(a);
                for (side, face) in faces[a].iter().enumerate() {
                    if face.value >= phi0.cap() {
                        continue;
                    }
                    let a0 = if side == 0 {
                        x[a] - ax.min
                    } else {
                        ax.max - x[a]
                    };
                    let term = -face.value + ln_tilted_tail(a0, face.slope, sigma2);
                    ln_tail = if ln_tail == f64::NEG_INFINITY {
                        term
                    } else {
                        let m = ln_tail.max(term);
                        m + ((ln_tail - m).exp() + (term - m).exp()).ln()
                    };
                }
            }
            if ln_tail > ln_tol + src_log_mass {
                return Err(HeatError::Truncation {
                    point: x[..n].to_vec(),
                    log_ratio: ln_tail - src_log_mass,
                    tolerance: params.tail_tolerance,
                });
            }
            Ok(log_norm - log_box)
        })
        .collect();

    let mut out = Vec::with_capacity(results.len());
    for r in results {
        out.push(r?);
    }
    Ok(out)
}

/// Heat evolution `phi_t = -log P_t(e^{-phi0})` sampled on `out_grid`.
pub fn heat_evolve(
    phi0: &PotentialField,
    t: f64,
    out_grid: &GridSpec,
) -> Result<PotentialField, HeatError> {
    heat_evolve_with(phi0, t, out_grid, &HeatParams::default())
}

pub fn heat_evolve_with(
    phi0: &PotentialField,
    t: f64,
    out_grid: &GridSpec,
    params: &HeatParams,
) -> Result<PotentialField, HeatError> {
    if out_grid.dim() != phi0.spec().dim() {
        return Err(HeatError::DimensionMismatch {
            src: phi0.spec().dim(),
            out: out_grid.dim(),
        });
    }
    let pts: Vec<Point> = out_grid.indices().map(|i| out_grid.point(&i)).collect();
    let values = evolve_at_points(phi0, t, &pts, params)?;
    Ok(PotentialField::with_cap(
        out_grid.clone(),
        values,
        phi0.cap(),
    )?)
}

/// Fokker-Planck evolution through the rescaling identity
/// `Q_t u(x) = e^{nt} P_s u(e^t x)` with `s = (e^{2t}-1)/2`; never a PDE
/// time-stepper. `t = 0` is the identity.
pub fn fokker_planck_evolve(
    phi0: &PotentialField,
    t: f64,
    out_grid: &GridSpec,
) -> Result<PotentialField, HeatError> {
    fokker_planck_evolve_with(phi0, t, out_grid, &HeatParams::default())
}

pub fn fokker_planck_evolve_with(
    phi0: &PotentialField,
    t: f64,
    out_grid: &GridSpec,
    params: &HeatParams,
) -> Result<PotentialField, HeatError> {
    if t < 0.0 {
        return Err(HeatError::NonPositiveTime { t });
    }
    let n = phi0.spec().dim();
    if out_grid.dim() != n {
        return Err(HeatError::DimensionMismatch {
            src: n,
            out: out_grid.dim(),
        });
    }
    if t == 0.0 {
        // Identity: resample the initial potential (multilinear between
        // nodes, capped cells stay capped).
        let cap = phi0.cap();
        let values: Vec<f64> = out_grid
            .indices()
            .map(|i| {
                let p = out_grid.point(&i);
                grid::multilinear(phi0.spec(), phi0.values(), &p[..n])
                    .map(|v| v.min(cap))
                    .unwrap_or(cap)
            })
            .collect();
        return Ok(PotentialField::with_cap(out_grid.clone(), values, cap)?);
    }
    let s = f64::exp_m1(2.0 * t) / 2.0;
    let scale = t.exp();
    let pts: Vec<Point> = out_grid
        .indices()
        .map(|i| {
            let mut p = out_grid.point(&i);
            for a in 0..n {
                p[a] *= scale;
            }
            p
        })
        .collect();
    let mut values = evolve_at_points(phi0, s, &pts, params)?;
    let shift = n as f64 * t;
    for v in values.iter_mut() {
        *v -= shift;
    }
    Ok(PotentialField::with_cap(
        out_grid.clone(),
        values,
        phi0.cap(),
    )?)
}

/// Centered finite difference of `t -> phi_t(x)` at a single point.
pub fn heat_time_derivative(
    phi0: &PotentialField,
    t: f64,
    x: &[f64],
    dt: f64,
) -> Result<f64, HeatError> {
    heat_time_derivative_with(phi0, t, x, dt, &HeatParams::default())
}

pub fn heat_time_derivative_with(
    phi0: &PotentialField,
    t: f64,
    x: &[f64],
    dt: f64,
    params: &HeatParams,
) -> Result<f64, HeatError> {
    if !(dt > 0.0) || dt >= t {
        return Err(HeatError::StepTooLarge { dt, t });
    }
    let mut p = [0.0; MAX_DIM];
    p[..phi0.spec().dim()].copy_from_slice(&x[..phi0.spec().dim()]);
    let hi = evolve_at_points(phi0, t + dt, std::slice::from_ref(&p), params)?[0];
    let lo = evolve_at_points(phi0, t - dt, std::slice::from_ref(&p), params)?[0];
    Ok((hi - lo) / (2.0 * dt))
}

/// Node-wise `d/dt phi_t` over a whole grid (two evolutions).
pub fn heat_time_derivative_field(
    phi0: &PotentialField,
    t: f64,
    out_grid: &GridSpec,
    dt: f64,
    params: &HeatParams,
) -> Result<Vec<f64>, HeatError> {
    if !(dt > 0.0) || dt >= t {
        return Err(HeatError::StepTooLarge { dt, t });
    }
    let hi = heat_evolve_with(phi0, t + dt, out_grid, params)?;
    let lo = heat_evolve_with(phi0, t - dt, out_grid, params)?;
    Ok(hi
        .values()
        .iter()
        .zip(lo.values())
        .map(|(a, b)| (a - b) / (2.0 * dt))
        .collect())
}

/// Diagnostics attached to a snapshot.
#[derive(Debug, Clone)]
pub struct SnapshotDiagnostics {
    pub phi_convexity_defect: f64,
    pub psi_convexity_defect: f64,
    pub log_mass_phi: f64,
    pub log_mass_psi: f64,
}

/// State of the flow at one diffusion time: the evolved potential and its
/// Legendre transform on a configured dual grid.
#[derive(Debug, Clone)]
pub struct FlowSnapshot {
    pub t: f64,
    pub phi_t: PotentialField,
    pub psi_t: PotentialField,
    pub diagnostics: SnapshotDiagnostics,
}

impl FlowSnapshot {
    /// Evolve directly from the t = 0 datum; `t = 0` reproduces `phi0`
    /// exactly.
    pub fn compute(
        phi0: &PotentialField,
        t: f64,
        dual_grid: &GridSpec,
        params: &HeatParams,
    ) -> Result<Self, HeatError> {
        if t < 0.0 {
            return Err(HeatError::NonPositiveTime { t });
        }
        let phi_t = if t == 0.0 {
            phi0.clone()
        } else {
            heat_evolve_with(phi0, t, phi0.spec(), params)?
        };
        let psi_t = convex::legendre_transform(&phi_t, dual_grid)?;
        let diagnostics = SnapshotDiagnostics {
            phi_convexity_defect: convex::convexity_defect(&phi_t),
            psi_convexity_defect: convex::convexity_defect(&psi_t),
            log_mass_phi: grid::log_mass(&phi_t)?,
            log_mass_psi: grid::log_mass(&psi_t)?,
        };
        Ok(FlowSnapshot {
            t,
            phi_t,
            psi_t,
            diagnostics,
        })
    }
}
