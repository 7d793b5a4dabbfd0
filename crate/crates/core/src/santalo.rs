//! Functional volume product, its evolution along heat flow, the pointwise
//! duality identity, and the appendix bounds.
//!
//! `alpha(t) = log(∫e^{-phi} ∫e^{-psi_t})` is computed from direct
//! evolutions at every requested time; its derivative comes out two
//! independent ways (finite differences in `t`, and the dual-measure
//! integral of `Tr(D^2 psi_t)^{-1} - |z|^2`) so their agreement is itself a
//! test of the identity chain.
//!
//! On a discrete conjugate the dual Hessian is evaluated through the
//! inverse-gradient route `Tr (D^2 psi_t(z))^{-1} = Tr D^2 phi_t(grad
//! psi_t(z))`: the sampled conjugate is piecewise affine, so differencing
//! it twice yields slope quantization rather than curvature, while the
//! evolved potential is smooth and differencing it is well posed.

use thiserror::Error;

use crate::convex::{self, ConvexError, GradientField, HessianField};
use crate::grid::{
    self, FieldKind, GridError, GridSpec, Index, PotentialField, ScalarField, MAX_DIM,
};
use crate::heatflow::{self, HeatError, HeatParams};
use crate::inequalities::{self, LogConcaveMeasure, MeasureError};
use crate::linalg;
use crate::report::{CheckReport, Location, SampleCount};

#[derive(Debug, Error)]
pub enum SantaloError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Convex(#[from] ConvexError),
    #[error(transparent)]
    Heat(#[from] HeatError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("potential is not even: phi(x) != phi(-x) near index {index:?}")]
    NotEven { index: Index },
    #[error("times must be strictly increasing and positive")]
    BadTimes,
    #[error("volume product degenerate: {value}")]
    DegenerateVolume { value: f64 },
    #[error("certificate phi >= M|x| - b fails at index {index:?}")]
    BadCertificate { index: Index },
    #[error("interior dual margin carries only {fraction:.6} of the measure")]
    Coverage { fraction: f64 },
    #[error("gradient inversion failed on a mass fraction {mass_fraction:.6} of the dual measure ({skipped} of {total} points)")]
    InversionCoverage {
        skipped: usize,
        total: usize,
        mass_fraction: f64,
    },
}

/// Shared knobs for the trace and verification runs.
#[derive(Debug, Clone, Copy)]
pub struct SantaloParams {
    pub heat: HeatParams,
    /// Interior restriction per side, as a fraction of points.
    pub margin_fraction: f64,
    /// Minimum fraction of dual mass the interior margin must carry.
    pub coverage_min: f64,
    /// Eigenvalue floor for Hessian inversions.
    pub lambda_min: f64,
}

impl Default for SantaloParams {
    fn default() -> Self {
        SantaloParams {
            heat: HeatParams::default(),
            margin_fraction: 0.1,
            coverage_min: 0.999,
            lambda_min: inequalities::DEFAULT_LAMBDA_MIN,
        }
    }
}

/// `M(e^{-phi}) = ∫e^{-phi} · ∫e^{-phi*}`.
pub fn volume_product(phi: &PotentialField, dual_grid: &GridSpec) -> Result<f64, SantaloError> {
    let lm_phi = grid::log_mass(phi)?;
    let psi = convex::legendre_transform(phi, dual_grid)?;
    let lm_psi = grid::log_mass(&psi)?;
    let v = (lm_phi + lm_psi).exp();
    if !(v.is_finite() && v > 0.0) {
        return Err(SantaloError::DegenerateVolume { value: v });
    }
    Ok(v)
}

/// Evolution of the volume product along heat flow.
#[derive(Debug, Clone)]
pub struct VolumeProductTrace {
    pub times: Vec<f64>,
    /// `log(∫e^{-phi_0} ∫e^{-psi_t})` per time.
    pub alpha: Vec<f64>,
    /// Centered (three-point, nonuniform) finite difference of `alpha`;
    /// one-sided at the ends.
    pub alpha_prime_fd: Vec<f64>,
    /// Dual-measure integral `E[Tr(D^2 psi_t)^{-1} - |z|^2]` per time.
    pub alpha_prime_integral: Vec<f64>,
    /// `∫e^{-phi_t}` per time (constant up to mass drift).
    pub int_exp_neg_phi_t: Vec<f64>,
    /// `∫e^{-psi_t}` per time.
    pub int_exp_neg_psi_t: Vec<f64>,
    /// `∫e^{-phi_t} · ∫e^{-psi_t}` per time.
    pub volume_product: Vec<f64>,
    /// `alpha` at t = 0, from the un-evolved conjugate (reported apart:
    /// only a liminf connects it to t -> 0+).
    pub alpha_zero: f64,
    pub dim: usize,
}

/// Evolve an even convex potential and trace `alpha` with both derivative
/// estimates.
pub fn evolve_trace(
    phi0: &PotentialField,
    times: &[f64],
    dual_grid: &GridSpec,
    params: &SantaloParams,
) -> Result<VolumeProductTrace, SantaloError> {
    phi0.check_even(1e-12)
        .map_err(|index| SantaloError::NotEven { index })?;
    if times.is_empty() || times[0] <= 0.0 || times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SantaloError::BadTimes);
    }
    let lm0 = grid::log_mass(phi0)?;
    let psi0 = convex::legendre_transform(phi0, dual_grid)?;
    let alpha_zero = lm0 + grid::log_mass(&psi0)?;

    let mut alpha = Vec::with_capacity(times.len());
    let mut api = Vec::with_capacity(times.len());
    let mut int_phi = Vec::with_capacity(times.len());
    let mut int_psi = Vec::with_capacity(times.len());
    let mut vp = Vec::with_capacity(times.len());
    for &t in times {
        let phi_t = heatflow::heat_evolve_with(phi0, t, phi0.spec(), &params.heat)?;
        let psi_t = convex::legendre_transform(&phi_t, dual_grid)?;
        let lm_phi_t = grid::log_mass(&phi_t)?;
        let lm_psi_t = smooth_log_mass(&phi_t, &psi_t)?;
        alpha.push(lm0 + lm_psi_t);
        int_phi.push(lm_phi_t.exp());
        int_psi.push(lm_psi_t.exp());
        vp.push((lm_phi_t + lm_psi_t).exp());
        api.push(alpha_prime_integral(&phi_t, &psi_t, params)?.value);
    }

    let alpha_prime_fd = nonuniform_derivative(times, &alpha);
    Ok(VolumeProductTrace {
        times: times.to_vec(),
        alpha,
        alpha_prime_fd,
        alpha_prime_integral: api,
        int_exp_neg_phi_t: int_phi,
        int_exp_neg_psi_t: int_psi,
        volume_product: vp,
        alpha_zero,
        dim: phi0.spec().dim(),
    })
}

/// Three-point first derivative on a nonuniform time grid, exact on
/// quadratics; one-sided two-point slopes at the ends.
fn nonuniform_derivative(t: &[f64], f: &[f64]) -> Vec<f64> {
    let m = t.len();
    let mut out = vec![f64::NAN; m];
    if m == 1 {
        return out;
    }
    out[0] = (f[1] - f[0]) / (t[1] - t[0]);
    out[m - 1] = (f[m - 1] - f[m - 2]) / (t[m - 1] - t[m - 2]);
    for i in 1..m - 1 {
        let hm = t[i] - t[i - 1];
        let hp = t[i + 1] - t[i];
        out[i] = (hm * hm * f[i + 1] - hp * hp * f[i - 1] - (hm * hm - hp * hp) * f[i])
            / (hm * hp * (hm + hp));
    }
    out
}

/// `log ∫ e^{-psi_t}` evaluated through smooth conjugate values
/// `z . x - phi_t(x)` at the inverted gradient points. The sampled
/// conjugate itself is the max over grid nodes and sits below the true
/// conjugate by a cell-local sawtooth whose amplitude follows the primal
/// curvature and therefore drifts with `t`; inverting the gradient and
/// interpolating `phi_t` quadratically removes that drift from the mass.
/// Dual points whose preimage leaves the box keep their sampled value
/// (they carry negligible mass when the dual box is adequate).
pub fn smooth_log_mass(
    phi_t: &PotentialField,
    psi_t: &PotentialField,
) -> Result<f64, SantaloError> {
    let spec = psi_t.spec();
    let n = spec.dim();
    let grad = GradientField::of(phi_t);
    let hess = HessianField::of(phi_t);
    let lw = grid::run_aware_log_weights(psi_t);
    let mut terms = Vec::with_capacity(spec.len());
    for (flat, idx) in spec.indices().enumerate() {
        if lw[flat] == f64::NEG_INFINITY {
            continue;
        }
        let z = spec.point(&idx);
        let smooth = invert_at(psi_t, &grad, &hess, &idx, &z).and_then(|x| {
            let phi_at = grid::quadratic_interp(phi_t.spec(), phi_t.values(), phi_t.cap(), &x)?;
            let mut dot = 0.0;
            for a in 0..n {
                dot += z[a] * x[a];
            }
            Some(dot - phi_at)
        });
        let value = smooth.unwrap_or_else(|| psi_t.values()[flat]);
        terms.push(-value + lw[flat]);
    }
    if terms.is_empty() {
        return Err(GridError::EmptyDomain.into());
    }
    Ok(grid::log_sum_exp(&terms))
}

/// Result of the dual-measure derivative integral.
#[derive(Debug, Clone, Copy)]
pub struct AlphaPrime {
    pub value: f64,
    /// Fraction of the dual measure carried by the interior margin.
    pub interior_mass_fraction: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// `alpha'(t) = E_{e^{-psi_t}}[Tr(D^2 psi_t)^{-1} - |z|^2]`, with the dual
/// Hessian trace evaluated as `Tr D^2 phi_t` at `grad psi_t(z)` (the
/// inverse-gradient route) and measure weights from the smooth conjugate
/// values `z . x - phi_t(x)` at the inverted points.
pub fn alpha_prime_integral(
    phi_t: &PotentialField,
    psi_t: &PotentialField,
    params: &SantaloParams,
) -> Result<AlphaPrime, SantaloError> {
    let spec = psi_t.spec();
    let n = spec.dim();
    let margin = spec.margin(params.margin_fraction);

    // Coverage: the interior margin must carry essentially all dual mass.
    let lw = grid::run_aware_log_weights(psi_t);
    let shift = psi_t
        .values()
        .iter()
        .zip(&lw)
        .filter(|(_, &w)| w > f64::NEG_INFINITY)
        .map(|(&v, &w)| -v + w)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0f64;
    let mut interior_mass = 0.0f64;
    for (flat, idx) in spec.indices().enumerate() {
        if lw[flat] == f64::NEG_INFINITY {
            continue;
        }
        let m = (-psi_t.values()[flat] + lw[flat] - shift).exp();
        total += m;
        if spec.is_interior(&idx, &margin) {
            interior_mass += m;
        }
    }
    let fraction = interior_mass / total;
    if fraction < params.coverage_min {
        return Err(SantaloError::Coverage { fraction });
    }

    let grad = GradientField::of(phi_t);
    let hess = HessianField::of(phi_t);
    let phi_spec = phi_t.spec();

    let mut masses = Vec::new();
    let mut weighted = Vec::new();
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut skipped_mass = 0.0f64;
    for idx in spec.indices() {
        if !spec.is_interior(&idx, &margin) {
            continue;
        }
        let z = spec.point(&idx);
        let disc_mass = (-psi_t.value(&idx) + lw[spec.flat(&idx)] - shift).exp();
        let inverted = invert_at(psi_t, &grad, &hess, &idx, &z).and_then(|x| {
            let h = hess.interp(&x)?;
            // Smooth conjugate value for the weight; quadratic
            // interpolation of phi_t keeps quadratic potentials exact.
            let phi_at = grid::quadratic_interp(phi_spec, phi_t.values(), phi_t.cap(), &x)?;
            Some((x, h, phi_at))
        });
        let Some((x, h, phi_at)) = inverted else {
            // Dual points whose preimage leaves the primal box; they must
            // carry only a sliver of the measure.
            skipped += 1;
            skipped_mass += disc_mass;
            continue;
        };
        let mut dot = 0.0;
        let mut z2 = 0.0;
        for a in 0..n {
            dot += z[a] * x[a];
            z2 += z[a] * z[a];
        }
        let psi_smooth = dot - phi_at;
        let m = (-psi_smooth + lw[spec.flat(&idx)] - shift).exp();
        masses.push(m);
        weighted.push((linalg::trace(&h, n) - z2) * m);
        checked += 1;
    }
    let covered_mass = grid::pairwise_sum(&masses);
    let mass_fraction = skipped_mass / (skipped_mass + covered_mass);
    if checked == 0 || mass_fraction > 1.0 - params.coverage_min {
        return Err(SantaloError::InversionCoverage {
            skipped,
            total: checked + skipped,
            mass_fraction,
        });
    }
    Ok(AlphaPrime {
        value: grid::pairwise_sum(&weighted) / covered_mass,
        interior_mass_fraction: fraction,
        checked,
        skipped,
    })
}

/// Literal form of the derivative integral for smooth, strictly convex dual
/// fields: `E[trace_inverse_hessian_field(psi) - |z|^2]` under
/// `e^{-psi}`. Suited to analytically sampled potentials, where second
/// differences measure real curvature.
pub fn alpha_prime_integral_smooth(
    psi_t: &PotentialField,
    params: &SantaloParams,
) -> Result<AlphaPrime, SantaloError> {
    let spec = psi_t.spec();
    let n = spec.dim();
    let margin = spec.margin(params.margin_fraction);
    let trinv = inequalities::trace_inverse_hessian_field(
        psi_t,
        params.margin_fraction,
        params.lambda_min,
    )?;
    let lw = grid::run_aware_log_weights(psi_t);
    let shift = psi_t
        .values()
        .iter()
        .zip(&lw)
        .filter(|(_, &w)| w > f64::NEG_INFINITY)
        .map(|(&v, &w)| -v + w)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut interior = 0.0;
    let mut masses = Vec::new();
    let mut weighted = Vec::new();
    for (flat, idx) in spec.indices().enumerate() {
        if lw[flat] == f64::NEG_INFINITY {
            continue;
        }
        let m = (-psi_t.values()[flat] + lw[flat] - shift).exp();
        total += m;
        if !spec.is_interior(&idx, &margin) {
            continue;
        }
        interior += m;
        let z = spec.point(&idx);
        let z2: f64 = (0..n).map(|a| z[a] * z[a]).sum();
        masses.push(m);
        weighted.push((trinv.values()[flat] - z2) * m);
    }
    let fraction = interior / total;
    if fraction < params.coverage_min {
        return Err(SantaloError::Coverage { fraction });
    }
    Ok(AlphaPrime {
        value: grid::pairwise_sum(&weighted) / grid::pairwise_sum(&masses),
        interior_mass_fraction: fraction,
        checked: masses.len(),
        skipped: 0,
    })
}

/// Invert `grad phi_t` at one dual point, seeding Newton from the
/// finite-difference gradient of the sampled conjugate.
fn invert_at(
    psi_t: &PotentialField,
    grad: &GradientField,
    hess: &HessianField,
    idx: &Index,
    z: &[f64; MAX_DIM],
) -> Option<[f64; MAX_DIM]> {
    let seed = grid::gradient(psi_t, idx).ok()?;
    convex::invert_gradient(grad, hess, &z[..psi_t.spec().dim()], &seed[..])
}

/// Mass-weighted budget for dual points a pointwise check cannot reach
/// (their gradient preimage leaves the primal box). Such points carry a
/// vanishing share of `e^{-psi}` on an adequate dual grid; the check
/// errors out when they do not.
struct SkipBudget {
    masses: Vec<f64>,
    spec: GridSpec,
    skipped_mass: f64,
    checked_mass: f64,
    max_fraction: f64,
}

impl SkipBudget {
    fn new(psi: &PotentialField, params: &SantaloParams) -> Self {
        let spec = psi.spec().clone();
        let shift = psi.values().iter().copied().fold(f64::INFINITY, f64::min);
        let masses = psi.values().iter().map(|v| (-(v - shift)).exp()).collect();
        SkipBudget {
            masses,
            spec,
            skipped_mass: 0.0,
            checked_mass: 0.0,
            max_fraction: 1.0 - params.coverage_min,
        }
    }

    fn skip(&mut self, idx: &Index) {
        self.skipped_mass += self.masses[self.spec.flat(idx)];
    }

    fn check(&mut self, idx: &Index) {
        self.checked_mass += self.masses[self.spec.flat(idx)];
    }

    fn enforce(&self, checked: usize, skipped: usize) -> Result<(), SantaloError> {
        let total = self.skipped_mass + self.checked_mass;
        let fraction = if total > 0.0 {
            self.skipped_mass / total
        } else {
            1.0
        };
        if checked == 0 || fraction > self.max_fraction {
            return Err(SantaloError::InversionCoverage {
                skipped,
                total: checked + skipped,
                mass_fraction: fraction,
            });
        }
        Ok(())
    }
}

struct ResidualTracker {
    max: f64,
    worst: Option<Location>,
    checked: usize,
    skipped: usize,
}

impl ResidualTracker {
    fn new() -> Self {
        ResidualTracker {
            max: 0.0,
            worst: None,
            checked: 0,
            skipped: 0,
        }
    }

    fn record(&mut self, r: f64, point: &[f64], t: Option<f64>) {
        self.checked += 1;
        if r > self.max {
            self.max = r;
            self.worst = Some(Location {
                point: point.to_vec(),
                t,
            });
        }
    }

    fn into_report(self, name: &str, tolerance: f64) -> CheckReport {
        CheckReport::evaluate(
            name,
            self.max,
            tolerance,
            self.worst,
            SampleCount {
                checked: self.checked,
                skipped: self.skipped,
            },
        )
    }
}

/// Pointwise identity `d/dt psi_t(z) = |z|^2 - Tr(D^2_z psi_t)^{-1}` on the
/// interior of the dual grid. The left side is the centered time
/// difference of the conjugates psi_{t-dt}, psi_{t+dt}; the right side
/// evaluates the dual Hessian trace through the inverse-gradient route.
/// Residuals are scaled by `max(1, |z|^2)`.
pub fn verify_pointwise_identity(
    phi0: &PotentialField,
    t: f64,
    dual_grid: &GridSpec,
    dt: f64,
    tolerance: f64,
    params: &SantaloParams,
) -> Result<CheckReport, SantaloError> {
    if !(dt > 0.0) || dt >= t {
        return Err(HeatError::StepTooLarge { dt, t }.into());
    }
    let n = phi0.spec().dim();
    let phi_mid = heatflow::heat_evolve_with(phi0, t, phi0.spec(), &params.heat)?;
    let phi_lo = heatflow::heat_evolve_with(phi0, t - dt, phi0.spec(), &params.heat)?;
    let phi_hi = heatflow::heat_evolve_with(phi0, t + dt, phi0.spec(), &params.heat)?;
    let psi_lo = convex::legendre_transform(&phi_lo, dual_grid)?;
    let psi_hi = convex::legendre_transform(&phi_hi, dual_grid)?;
    let psi_mid = convex::legendre_transform(&phi_mid, dual_grid)?;

    let grad = GradientField::of(&phi_mid);
    let hess = HessianField::of(&phi_mid);
    let margin = dual_grid.margin(params.margin_fraction);
    let mut budget = SkipBudget::new(&psi_mid, params);

    let mut tracker = ResidualTracker::new();
    for idx in dual_grid.indices() {
        if !dual_grid.is_interior(&idx, &margin) {
            continue;
        }
        let z = dual_grid.point(&idx);
        let lhs = (psi_hi.value(&idx) - psi_lo.value(&idx)) / (2.0 * dt);
        let rhs = invert_at(&psi_mid, &grad, &hess, &idx, &z)
            .and_then(|x| hess.interp(&x))
            .map(|h| {
                let z2: f64 = (0..n).map(|a| z[a] * z[a]).sum();
                z2 - linalg::trace(&h, n)
            });
        let Some(rhs) = rhs else {
            tracker.skipped += 1;
            budget.skip(&idx);
            continue;
        };
        budget.check(&idx);
        let z2: f64 = (0..n).map(|a| z[a] * z[a]).sum();
        let r = (lhs - rhs).abs() / z2.max(1.0);
        tracker.record(r, &z[..n], Some(t));
    }
    budget.enforce(tracker.checked, tracker.skipped)?;
    Ok(tracker.into_report("pointwise_identity", tolerance))
}

/// First-order perturbation relation `d/dt psi_t(z) = -d/dt phi_t(grad
/// psi_t(z))`, the left side from conjugate time differences, the right
/// side from node-wise `d/dt phi_t` interpolated at the inverted point.
pub fn verify_perturbation_relation(
    phi0: &PotentialField,
    t: f64,
    dual_grid: &GridSpec,
    dt: f64,
    tolerance: f64,
    params: &SantaloParams,
) -> Result<CheckReport, SantaloError> {
    if !(dt > 0.0) || dt >= t {
        return Err(HeatError::StepTooLarge { dt, t }.into());
    }
    let n = phi0.spec().dim();
    let phi_mid = heatflow::heat_evolve_with(phi0, t, phi0.spec(), &params.heat)?;
    let dphi_dt = heatflow::heat_time_derivative_field(phi0, t, phi0.spec(), dt, &params.heat)?;
    let phi_lo = heatflow::heat_evolve_with(phi0, t - dt, phi0.spec(), &params.heat)?;
    let phi_hi = heatflow::heat_evolve_with(phi0, t + dt, phi0.spec(), &params.heat)?;
    let psi_lo = convex::legendre_transform(&phi_lo, dual_grid)?;
    let psi_hi = convex::legendre_transform(&phi_hi, dual_grid)?;
    let psi_mid = convex::legendre_transform(&phi_mid, dual_grid)?;

    let grad = GradientField::of(&phi_mid);
    let hess = HessianField::of(&phi_mid);
    let margin = dual_grid.margin(params.margin_fraction);
    let mut budget = SkipBudget::new(&psi_mid, params);

    let mut tracker = ResidualTracker::new();
    for idx in dual_grid.indices() {
        if !dual_grid.is_interior(&idx, &margin) {
            continue;
        }
        let z = dual_grid.point(&idx);
        let lhs = (psi_hi.value(&idx) - psi_lo.value(&idx)) / (2.0 * dt);
        let rhs = invert_at(&psi_mid, &grad, &hess, &idx, &z)
            .and_then(|x| grid::multilinear(phi_mid.spec(), &dphi_dt, &x))
            .map(|dphi_at| -dphi_at);
        let Some(rhs) = rhs else {
            tracker.skipped += 1;
            budget.skip(&idx);
            continue;
        };
        budget.check(&idx);
        let z2: f64 = (0..n).map(|a| z[a] * z[a]).sum();
        let r = (lhs - rhs).abs() / z2.max(1.0);
        tracker.record(r, &z[..n], Some(t));
    }
    budget.enforce(tracker.checked, tracker.skipped)?;
    Ok(tracker.into_report("perturbation_relation", tolerance))
}

/// Heat relation `d/dt phi_t = Tr D^2 phi_t - |grad phi_t|^2` on the
/// interior of the source grid; residuals scaled by `max(1, |rhs|)`.
pub fn verify_heat_relation(
    phi0: &PotentialField,
    t: f64,
    dt: f64,
    tolerance: f64,
    params: &SantaloParams,
) -> Result<CheckReport, SantaloError> {
    if !(dt > 0.0) || dt >= t {
        return Err(HeatError::StepTooLarge { dt, t }.into());
    }
    let spec = phi0.spec();
    let n = spec.dim();
    let phi_t = heatflow::heat_evolve_with(phi0, t, spec, &params.heat)?;
    let dphi_dt = heatflow::heat_time_derivative_field(phi0, t, spec, dt, &params.heat)?;
    let margin = spec.margin(params.margin_fraction);

    let mut tracker = ResidualTracker::new();
    for (flat, idx) in spec.indices().enumerate() {
        if !spec.is_interior(&idx, &margin) {
            continue;
        }
        let (g, h) = match (grid::gradient(&phi_t, &idx), grid::hessian(&phi_t, &idx)) {
            (Ok(g), Ok(h)) => (g, h),
            _ => {
                tracker.skipped += 1;
                continue;
            }
        };
        let g2: f64 = (0..n).map(|a| g[a] * g[a]).sum();
        let rhs = linalg::trace(&h, n) - g2;
        let lhs = dphi_dt[flat];
        let r = (lhs - rhs).abs() / rhs.abs().max(1.0);
        let p = spec.point(&idx);
        tracker.record(r, &p[..n], Some(t));
    }
    Ok(tracker.into_report("heat_relation", tolerance))
}

/// Appendix identity at `t = 1/2`: `(D^2 phi_{1/2} theta).theta = 1 -
/// Var_{mu_x}(y.theta)` with `mu_x ∝ e^{-phi(y) - |x-y|^2/2}`.
pub fn verify_hessian_variance_identity(
    phi: &PotentialField,
    x_idx: &Index,
    theta: &[f64],
    tolerance: f64,
    params: &SantaloParams,
) -> Result<CheckReport, SantaloError> {
    let spec = phi.spec();
    let n = spec.dim();
    let x = spec.point(x_idx);
    let phi_half = heatflow::heat_evolve_with(phi, 0.5, spec, &params.heat)?;
    let h = grid::hessian(&phi_half, x_idx)?;
    let lhs = linalg::quad_form(&h, &theta[..n], n);

    let cap = phi.cap();
    let tilted_vals: Vec<f64> = spec
        .indices()
        .enumerate()
        .map(|(flat, idx)| {
            let v = phi.values()[flat];
            if v >= cap {
                return cap;
            }
            let y = spec.point(&idx);
            let mut d2 = 0.0;
            for a in 0..n {
                let d = x[a] - y[a];
                d2 += d * d;
            }
            v + d2 / 2.0
        })
        .collect();
    let tilted = PotentialField::with_cap(spec.clone(), tilted_vals, cap)?;
    let mu = LogConcaveMeasure::new(tilted)?;
    let mut th = [0.0; MAX_DIM];
    th[..n].copy_from_slice(&theta[..n]);
    let g = ScalarField::sample(spec.clone(), FieldKind::Diagnostic, |y| {
        (0..n).map(|a| y[a] * th[a]).sum()
    })?;
    let rhs = 1.0 - mu.variance(&g)?;

    let mut tracker = ResidualTracker::new();
    tracker.record((lhs - rhs).abs(), &x[..n], Some(0.5));
    Ok(tracker.into_report("hessian_variance", tolerance))
}

/// Appendix small-time bound: both reports of
/// `psi_t <= psi + t|z|^2` (pointwise, one-sided, on the shared dual
/// interior) and its integral consequence
/// `∫e^{-psi_t} >= ∫e^{-psi - t|z|^2}` (residual in log scale).
pub struct SmallTimeBound {
    pub pointwise: CheckReport,
    pub integral: CheckReport,
    pub log_mass_psi_t: f64,
    pub log_mass_shifted: f64,
}

pub fn verify_small_time_bound(
    phi0: &PotentialField,
    psi0: &PotentialField,
    t: f64,
    tolerance: f64,
    params: &SantaloParams,
) -> Result<SmallTimeBound, SantaloError> {
    let dual_grid = psi0.spec();
    let n = dual_grid.dim();
    let phi_t = heatflow::heat_evolve_with(phi0, t, phi0.spec(), &params.heat)?;
    let psi_t = convex::legendre_transform(&phi_t, dual_grid)?;
    let margin = dual_grid.margin(params.margin_fraction);

    let mut tracker = ResidualTracker::new();
    for idx in dual_grid.indices() {
        if !dual_grid.is_interior(&idx, &margin) {
            continue;
        }
        let z = dual_grid.point(&idx);
        let z2: f64 = (0..n).map(|a| z[a] * z[a]).sum();
        let r = (psi_t.value(&idx) - psi0.value(&idx) - t * z2).max(0.0);
        tracker.record(r, &z[..n], Some(t));
    }
    let pointwise = tracker.into_report("small_time_pointwise", tolerance);

    // Integral consequence, compared in log scale.
    let lw = grid::run_aware_log_weights(psi0);
    let mut terms = Vec::new();
    for (flat, idx) in dual_grid.indices().enumerate() {
        if lw[flat] == f64::NEG_INFINITY {
            continue;
        }
        let z = dual_grid.point(&idx);
        let z2: f64 = (0..n).map(|a| z[a] * z[a]).sum();
        terms.push(-psi0.values()[flat] - t * z2 + lw[flat]);
    }
    let log_mass_shifted = grid::log_sum_exp(&terms);
    let log_mass_psi_t = grid::log_mass(&psi_t)?;
    let integral = CheckReport::evaluate(
        "small_time_integral",
        (log_mass_shifted - log_mass_psi_t).max(0.0),
        tolerance,
        None,
        SampleCount {
            checked: terms.len(),
            skipped: 0,
        },
    );
    Ok(SmallTimeBound {
        pointwise,
        integral,
        log_mass_psi_t,
        log_mass_shifted,
    })
}

/// Appendix superlinearity bound: given a certificate `phi0 >= M|x| - b`
/// (validated on the grid), check `phi_t >= M|x| - b - t M^2 - sqrt(2nt) M`
/// at every grid point (one-sided residual).
pub fn verify_superlinearity_bound(
    phi0: &PotentialField,
    m_cert: f64,
    b_cert: f64,
    t: f64,
    tolerance: f64,
    params: &SantaloParams,
) -> Result<CheckReport, SantaloError> {
    let spec = phi0.spec();
    let n = spec.dim();
    for idx in spec.indices() {
        let x = spec.point(&idx);
        let norm = (0..n).map(|a| x[a] * x[a]).sum::<f64>().sqrt();
        if phi0.value(&idx) < m_cert * norm - b_cert - 1e-12 {
            return Err(SantaloError::BadCertificate { index: idx });
        }
    }
    let phi_t = heatflow::heat_evolve_with(phi0, t, spec, &params.heat)?;
    let drop = t * m_cert * m_cert + (2.0 * n as f64 * t).sqrt() * m_cert;
    let mut tracker = ResidualTracker::new();
    for idx in spec.indices() {
        let x = spec.point(&idx);
        let norm = (0..n).map(|a| x[a] * x[a]).sum::<f64>().sqrt();
        let bound = m_cert * norm - b_cert - drop;
        let r = (bound - phi_t.value(&idx)).max(0.0);
        tracker.record(r, &x[..n], Some(t));
    }
    Ok(tracker.into_report("superlinearity", tolerance))
}

/// Reports derived from a finished trace: monotonicity of `alpha`,
/// positivity of the integral derivative, the Santalo upper bound, and the
/// cross-validation of the two derivative routes (interior times only).
pub fn trace_reports(
    trace: &VolumeProductTrace,
    monotonicity_slack: f64,
    upper_bound_tol: f64,
    cross_validation_tol: f64,
) -> Vec<CheckReport> {
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    let mut where_t = None;
    for w in trace.alpha.windows(2).zip(trace.times.windows(2)) {
        let drop = w.0[0] - w.0[1];
        if drop > worst {
            worst = drop;
            where_t = Some(w.1[1]);
        }
    }
    out.push(CheckReport::evaluate(
        "monotonicity",
        worst,
        monotonicity_slack,
        where_t.map(|t| Location {
            point: vec![],
            t: Some(t),
        }),
        SampleCount {
            checked: trace.times.len(),
            skipped: 0,
        },
    ));

    let mut worst = 0.0f64;
    let mut where_t = None;
    for (&v, &t) in trace.alpha_prime_integral.iter().zip(&trace.times) {
        if -v > worst {
            worst = -v;
            where_t = Some(t);
        }
    }
    out.push(CheckReport::evaluate(
        "alpha_prime_nonneg",
        worst,
        monotonicity_slack,
        where_t.map(|t| Location {
            point: vec![],
            t: Some(t),
        }),
        SampleCount {
            checked: trace.times.len(),
            skipped: 0,
        },
    ));

    let cap = (2.0 * std::f64::consts::PI).powi(trace.dim as i32);
    let mut worst = 0.0f64;
    let mut where_t = None;
    for (&a, &t) in trace.alpha.iter().zip(&trace.times) {
        let rel = a.exp() / cap - 1.0;
        if rel > worst {
            worst = rel;
            where_t = Some(t);
        }
    }
    out.push(CheckReport::evaluate(
        "santalo_upper_bound",
        worst,
        upper_bound_tol,
        where_t.map(|t| Location {
            point: vec![],
            t: Some(t),
        }),
        SampleCount {
            checked: trace.times.len(),
            skipped: 0,
        },
    ));

    let mut worst = 0.0f64;
    let mut where_t = None;
    let m = trace.times.len();
    for i in 1..m.saturating_sub(1) {
        let d = (trace.alpha_prime_fd[i] - trace.alpha_prime_integral[i]).abs();
        if d > worst {
            worst = d;
            where_t = Some(trace.times[i]);
        }
    }
    out.push(CheckReport::evaluate(
        "derivative_cross_validation",
        worst,
        cross_validation_tol,
        where_t.map(|t| Location {
            point: vec![],
            t: Some(t),
        }),
        SampleCount {
            checked: m.saturating_sub(2),
            skipped: 2.min(m),
        },
    ));

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{AxisSpec, DEFAULT_CAP};

    const TWO_PI: f64 = std::f64::consts::TAU;

    fn grid1(min: f64, max: f64, count: usize) -> GridSpec {
        GridSpec::new(vec![AxisSpec::new(min, max, count)]).unwrap()
    }

    fn gaussian(spec: &GridSpec) -> PotentialField {
        PotentialField::sample(spec.clone(), |x| x.iter().map(|v| v * v).sum::<f64>() / 2.0)
            .unwrap()
    }

    fn reference() -> (GridSpec, GridSpec) {
        (grid1(-10.0, 10.0, 1025), grid1(-10.0, 10.0, 1025))
    }

    #[test]
    fn gaussian_volume_product_is_two_pi() {
        let (spec, dual) = reference();
        let v = volume_product(&gaussian(&spec), &dual).unwrap();
        assert!((v - TWO_PI).abs() / TWO_PI < 1e-3, "{v}");
    }

    #[test]
    fn indicator_volume_product_is_four() {
        let spec = grid1(-8.0, 8.0, 1025);
        let dual = grid1(-10.0, 10.0, 1025);
        let p = PotentialField::sample(spec, |x| if x[0].abs() <= 1.0 { 0.0 } else { DEFAULT_CAP })
            .unwrap();
        let v = volume_product(&p, &dual).unwrap();
        assert!((v - 4.0).abs() / 4.0 < 1e-3, "{v}");
    }

    #[test]
    fn volume_product_ignores_additive_constants() {
        let (spec, dual) = reference();
        let base = volume_product(&gaussian(&spec), &dual).unwrap();
        let shifted = PotentialField::sample(spec, |x| x[0] * x[0] / 2.0 + 1.7).unwrap();
        let v = volume_product(&shifted, &dual).unwrap();
        assert!((v - base).abs() < 1e-6 * base, "{v} vs {base}");
    }

    #[test]
    fn gaussian_trace_is_flat() {
        let (spec, dual) = reference();
        let times: Vec<f64> = (1..=10).map(|k| 0.1 * k as f64).collect();
        let trace =
            evolve_trace(&gaussian(&spec), &times, &dual, &SantaloParams::default()).unwrap();
        for (&a, &api) in trace.alpha.iter().zip(&trace.alpha_prime_integral) {
            assert!((a - TWO_PI.ln()).abs() < 1e-3, "alpha {a}");
            assert!(api.abs() < 1e-3, "alpha' {api}");
        }
        for i in 1..times.len() - 1 {
            assert!(trace.alpha_prime_fd[i].abs() < 1e-3);
        }
    }

    #[test]
    fn quartic_trace_is_monotone() {
        let (spec, dual) = reference();
        let phi0 = PotentialField::sample(spec, |x| x[0].powi(4) / 4.0).unwrap();
        let times: Vec<f64> = (0..10)
            .map(|k| 0.05 * (2.0f64 / 0.05).powf(k as f64 / 9.0))
            .collect();
        let trace = evolve_trace(&phi0, &times, &dual, &SantaloParams::default()).unwrap();
        for r in &trace_reports(&trace, 1e-4, 1e-3, 5e-3)[..3] {
            assert!(r.passed, "{}: residual {}", r.name, r.max_residual);
        }
        assert!(trace.alpha.last().unwrap() > &trace.alpha[0]);
        assert!(trace.alpha.last().unwrap() < &TWO_PI.ln());
        assert!(trace.alpha_zero < trace.alpha[0] + 1e-4);
    }

    #[test]
    fn quartic_derivative_cross_validation_on_dense_times() {
        // The centered difference of alpha needs time steps small enough
        // that its own truncation (O(h^2 alpha''')) sits below the 5e-3
        // comparison budget; 24 geometric times over [0.05, 2] suffice.
        let (spec, dual) = reference();
        let phi0 = PotentialField::sample(spec, |x| x[0].powi(4) / 4.0).unwrap();
        let times: Vec<f64> = (0..24)
            .map(|k| 0.05 * (2.0f64 / 0.05).powf(k as f64 / 23.0))
            .collect();
        let trace = evolve_trace(&phi0, &times, &dual, &SantaloParams::default()).unwrap();
        let reports = trace_reports(&trace, 1e-4, 1e-3, 5e-3);
        for r in &reports {
            assert!(r.passed, "{}: residual {}", r.name, r.max_residual);
        }
    }

    #[test]
    fn indicator_trace_starts_near_log_four() {
        let spec = grid1(-8.0, 8.0, 1025);
        let dual = grid1(-10.0, 10.0, 1025);
        let p = PotentialField::sample(spec, |x| if x[0].abs() <= 1.0 { 0.0 } else { DEFAULT_CAP })
            .unwrap();
        let times = [0.05, 0.1, 0.2, 0.4];
        let trace = evolve_trace(&p, &times, &dual, &SantaloParams::default()).unwrap();
        assert!((trace.alpha_zero - 4.0f64.ln()).abs() < 1e-3);
        for w in trace.alpha.windows(2) {
            assert!(w[1] >= w[0] - 1e-4);
        }
        assert!(trace.alpha[0] > trace.alpha_zero - 1e-4);
    }

    #[test]
    fn evolve_trace_rejects_odd_potentials_and_bad_times() {
        let (spec, dual) = reference();
        let odd = PotentialField::sample(spec.clone(), |x| x[0] * x[0] / 2.0 + 0.3 * x[0]).unwrap();
        assert!(matches!(
            evolve_trace(&odd, &[0.1, 0.2], &dual, &SantaloParams::default()),
            Err(SantaloError::NotEven { .. })
        ));
        let even = gaussian(&spec);
        assert!(matches!(
            evolve_trace(&even, &[0.2, 0.1], &dual, &SantaloParams::default()),
            Err(SantaloError::BadTimes)
        ));
    }

    #[test]
    fn alpha_prime_integral_smooth_gaussian_closed_form() {
        // psi_t sampled analytically: E[Tr(D^2 psi)^{-1}] - E[z^2] = 0.
        let t = 0.5;
        let spec = grid1(-10.0, 10.0, 1025);
        let psi = PotentialField::sample(spec, |z| {
            (1.0 + 2.0 * t) * z[0] * z[0] / 2.0 - 0.5 * (1.0 + 2.0 * t).ln()
        })
        .unwrap();
        let out = alpha_prime_integral_smooth(&psi, &SantaloParams::default()).unwrap();
        assert!(out.value.abs() < 1e-6, "{}", out.value);

        let stationary =
            PotentialField::sample(grid1(-10.0, 10.0, 1025), |z| z[0] * z[0] / 2.0).unwrap();
        let out = alpha_prime_integral_smooth(&stationary, &SantaloParams::default()).unwrap();
        assert!(out.value.abs() < 1e-6, "{}", out.value);
    }

    #[test]
    fn alpha_prime_routes_agree_for_quartic() {
        let (spec, dual) = reference();
        let phi0 = PotentialField::sample(spec, |x| x[0].powi(4) / 4.0).unwrap();
        let params = SantaloParams::default();
        let t = 0.5;
        let phi_t = heatflow::heat_evolve_with(&phi0, t, phi0.spec(), &params.heat).unwrap();
        let psi_t = convex::legendre_transform(&phi_t, &dual).unwrap();
        let api = alpha_prime_integral(&phi_t, &psi_t, &params).unwrap();
        assert!(api.value > 0.0);
        // Independent centered difference of alpha at +-1%.
        let d = 0.01 * t;
        let alpha_at = |tt: f64| {
            let p = heatflow::heat_evolve_with(&phi0, tt, phi0.spec(), &params.heat).unwrap();
            let s = convex::legendre_transform(&p, &dual).unwrap();
            grid::log_mass(&phi0).unwrap() + grid::log_mass(&s).unwrap()
        };
        let fd = (alpha_at(t + d) - alpha_at(t - d)) / (2.0 * d);
        assert!((api.value - fd).abs() < 5e-3, "{} vs {fd}", api.value);
    }

    #[test]
    fn pointwise_identity_gaussian_closed_form_oracle() {
        // Sampled closed forms: LHS by centered time difference, RHS from
        // the literal trace-inverse field; both within 1e-6.
        let spec = grid1(-10.0, 10.0, 1025);
        let params = SantaloParams::default();
        let dt = 1e-3;
        for t in [0.25, 0.5, 1.0] {
            let psi_at = |tt: f64| {
                PotentialField::sample(spec.clone(), |z| {
                    (1.0 + 2.0 * tt) * z[0] * z[0] / 2.0 - 0.5 * (1.0 + 2.0 * tt).ln()
                })
                .unwrap()
            };
            let lo = psi_at(t - dt);
            let hi = psi_at(t + dt);
            let mid = psi_at(t);
            let trinv = inequalities::trace_inverse_hessian_field(
                &mid,
                params.margin_fraction,
                params.lambda_min,
            )
            .unwrap();
            let margin = spec.margin(params.margin_fraction);
            let mut worst = 0.0f64;
            for (flat, idx) in spec.indices().enumerate() {
                if !spec.is_interior(&idx, &margin) {
                    continue;
                }
                let z = spec.point(&idx)[0];
                let lhs = (hi.values()[flat] - lo.values()[flat]) / (2.0 * dt);
                let rhs = z * z - trinv.values()[flat];
                worst = worst.max((lhs - rhs).abs() / (z * z).max(1.0));
            }
            assert!(worst < 1e-6, "t={t}: {worst}");
        }
    }

    #[test]
    fn pointwise_identity_pipeline_on_quartic() {
        let (spec, dual) = reference();
        let phi0 = PotentialField::sample(spec, |x| x[0].powi(4) / 4.0).unwrap();
        let report =
            verify_pointwise_identity(&phi0, 0.5, &dual, 1e-2, 1e-2, &SantaloParams::default())
                .unwrap();
        assert!(report.passed, "residual {}", report.max_residual);
    }

    #[test]
    fn perturbation_relation_on_quartic() {
        let (spec, dual) = reference();
        let phi0 = PotentialField::sample(spec, |x| x[0].powi(4) / 4.0).unwrap();
        let report =
            verify_perturbation_relation(&phi0, 0.5, &dual, 1e-2, 1e-2, &SantaloParams::default())
                .unwrap();
        assert!(report.passed, "residual {}", report.max_residual);
    }

    #[test]
    fn heat_relation_gaussian_and_quartic() {
        let (spec, _) = reference();
        for f in [
            |x: &[f64]| x[0] * x[0] / 2.0,
            |x: &[f64]| x[0].powi(4) / 4.0,
        ] {
            let phi0 = PotentialField::sample(spec.clone(), f).unwrap();
            let report =
                verify_heat_relation(&phi0, 0.5, 1e-3, 5e-3, &SantaloParams::default()).unwrap();
            assert!(
                report.passed,
                "{}: residual {}",
                report.name, report.max_residual
            );
        }
    }

    #[test]
    fn heat_relation_closed_form_value() {
        // Gaussian at x=1, t=0.5: d/dt phi_t = -x^2/(1+2t)^2 + 1/(1+2t) = 1/4.
        let (spec, _) = reference();
        let phi0 = gaussian(&spec);
        let t = 0.5;
        let d = heatflow::heat_time_derivative(&phi0, t, &[1.0], 1e-3).unwrap();
        assert!((d - 0.25).abs() < 1e-4, "{d}");
        // Spatial side at the nearest grid node, against its own closed form.
        let phi_t = heatflow::heat_evolve(&phi0, t, &spec).unwrap();
        let idx = spec.nearest_index(&[1.0]);
        let x = spec.point(&idx)[0];
        let g = grid::gradient(&phi_t, &idx).unwrap();
        let h = grid::hessian(&phi_t, &idx).unwrap();
        let rhs = h[0][0] - g[0] * g[0];
        let expect = 1.0 / (1.0 + 2.0 * t) - x * x / ((1.0 + 2.0 * t) * (1.0 + 2.0 * t));
        assert!((rhs - expect).abs() < 1e-6, "{rhs} vs {expect}");
    }

    #[test]
    fn hessian_variance_gaussian() {
        let spec = grid1(-10.0, 10.0, 1025);
        let phi = gaussian(&spec);
        let idx = spec.nearest_index(&[0.5]);
        let report =
            verify_hessian_variance_identity(&phi, &idx, &[1.0], 1e-6, &SantaloParams::default())
                .unwrap();
        assert!(report.passed, "residual {}", report.max_residual);
    }

    #[test]
    fn hessian_variance_indicator_truncated_normal() {
        let spec = grid1(-8.0, 8.0, 1025);
        let phi = PotentialField::sample(spec.clone(), |x| {
            if x[0].abs() <= 1.0 {
                0.0
            } else {
                DEFAULT_CAP
            }
        })
        .unwrap();
        let origin = spec.nearest_index(&[0.0]);
        let report = verify_hessian_variance_identity(
            &phi,
            &origin,
            &[1.0],
            1e-3,
            &SantaloParams::default(),
        )
        .unwrap();
        assert!(report.passed, "residual {}", report.max_residual);
        // RHS alone against the truncated-normal oracle.
        let phi_half = heatflow::heat_evolve(&phi, 0.5, &spec).unwrap();
        let h = grid::hessian(&phi_half, &origin).unwrap();
        assert!((h[0][0] - 0.7088812050083358).abs() < 1e-3, "{}", h[0][0]);
    }

    #[test]
    fn small_time_bound_all_clear() {
        let (spec, dual) = reference();
        let phi0 = PotentialField::sample(spec, |x| x[0].powi(4) / 4.0).unwrap();
        let psi0 = convex::legendre_transform(&phi0, &dual).unwrap();
        for t in [0.05, 0.1, 0.5] {
            let out =
                verify_small_time_bound(&phi0, &psi0, t, 1e-6, &SantaloParams::default()).unwrap();
            assert!(
                out.pointwise.passed,
                "t={t}: {}",
                out.pointwise.max_residual
            );
            assert!(out.integral.passed, "t={t}: {}", out.integral.max_residual);
        }
    }

    #[test]
    fn small_time_gaussian_margin_is_the_log_term() {
        // (1+2t)z^2/2 - log(1+2t)/2 <= z^2/2 + t z^2 exactly.
        let (spec, dual) = reference();
        let phi0 = gaussian(&spec);
        let psi0 = convex::legendre_transform(&phi0, &dual).unwrap();
        let out =
            verify_small_time_bound(&phi0, &psi0, 0.25, 1e-6, &SantaloParams::default()).unwrap();
        assert!(out.pointwise.max_residual == 0.0);
    }

    #[test]
    fn superlinearity_certificates() {
        let spec = grid1(-10.0, 10.0, 513);
        let squared = PotentialField::sample(spec.clone(), |x| x[0] * x[0]).unwrap();
        for t in [0.1, 0.5, 1.0] {
            let r =
                verify_superlinearity_bound(&squared, 2.0, 1.0, t, 1e-8, &SantaloParams::default())
                    .unwrap();
            assert!(r.passed, "t={t}: {}", r.max_residual);
        }
        // M = 0 degenerates to the mass bound phi_t >= -b.
        let r =
            verify_superlinearity_bound(&squared, 0.0, 0.1, 0.5, 1e-8, &SantaloParams::default())
                .unwrap();
        assert!(r.passed);
        // A certificate the datum does not satisfy is rejected.
        assert!(matches!(
            verify_superlinearity_bound(&squared, 10.0, 0.0, 0.5, 1e-8, &SantaloParams::default()),
            Err(SantaloError::BadCertificate { .. })
        ));
    }

    #[test]
    fn nonuniform_derivative_exact_on_quadratics() {
        let t = [0.1, 0.2, 0.4, 0.8, 1.6];
        let f: Vec<f64> = t.iter().map(|x| 3.0 * x * x - x + 0.5).collect();
        let d = nonuniform_derivative(&t, &f);
        for i in 1..t.len() - 1 {
            let exact = 6.0 * t[i] - 1.0;
            assert!((d[i] - exact).abs() < 1e-12, "{} vs {exact}", d[i]);
        }
    }
}
