//! Log-concave measure utilities and the Brascamp-Lieb variance check.

use thiserror::Error;

use crate::convex;
use crate::grid::{self, FieldKind, GridError, GridSpec, PotentialField, ScalarField, MAX_DIM};
use crate::linalg::{self, SymMat};
use crate::report::{CheckReport, Location, SampleCount};

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("potential is not discretely convex: defect {defect}")]
    NotLogConcave { defect: f64 },
    #[error("normalization is degenerate: log Z = {log_z}")]
    DegenerateMass { log_z: f64 },
    #[error("integrand lives on a different grid")]
    GridMismatch,
    #[error("Hessian at {point:?} has eigenvalue {eigenvalue:e} below the floor {floor:e}")]
    SingularHessian {
        point: Vec<f64>,
        eigenvalue: f64,
        floor: f64,
    },
    #[error("interior margin carries only {fraction:.6} of the measure (need {needed})")]
    Coverage { fraction: f64, needed: f64 },
}

/// Eigenvalue floor below which a Hessian counts as numerically singular.
pub const DEFAULT_LAMBDA_MIN: f64 = 1e-6;

const CONVEXITY_TOL: f64 = 1e-6;

/// A probability measure `dmu ∝ exp(-V) dx` on a grid, with cached
/// normalization and run-aware quadrature weights.
pub struct LogConcaveMeasure {
    potential: PotentialField,
    log_weights: Vec<f64>,
    log_z: f64,
}

impl LogConcaveMeasure {
    pub fn new(potential: PotentialField) -> Result<Self, MeasureError> {
        let defect = convex::convexity_defect(&potential);
        if defect > CONVEXITY_TOL {
            return Err(MeasureError::NotLogConcave { defect });
        }
        let log_weights = grid::run_aware_log_weights(&potential);
        let log_z = grid::log_mass(&potential)?;
        if !log_z.is_finite() {
            return Err(MeasureError::DegenerateMass { log_z });
        }
        Ok(LogConcaveMeasure {
            potential,
            log_weights,
            log_z,
        })
    }

    pub fn potential(&self) -> &PotentialField {
        &self.potential
    }

    pub fn spec(&self) -> &GridSpec {
        self.potential.spec()
    }

    pub fn log_normalization(&self) -> f64 {
        self.log_z
    }

    pub fn normalization(&self) -> f64 {
        self.log_z.exp()
    }

    /// Linear-domain masses `w_k exp(-V_k - shift)` over finite points,
    /// shifted by the max so nothing overflows.
    fn masses(&self) -> (Vec<usize>, Vec<f64>) {
        let vals = self.potential.values();
        let mut shift = f64::NEG_INFINITY;
        for (flat, &lw) in self.log_weights.iter().enumerate() {
            if lw > f64::NEG_INFINITY {
                shift = shift.max(-vals[flat] + lw);
            }
        }
        let mut flats = Vec::new();
        let mut masses = Vec::new();
        for (flat, &lw) in self.log_weights.iter().enumerate() {
            if lw > f64::NEG_INFINITY {
                flats.push(flat);
                masses.push((-vals[flat] + lw - shift).exp());
            }
        }
        (flats, masses)
    }

    /// `E_mu[g]` by trapezoid quadrature in the log-weighted domain.
    pub fn expectation(&self, integrand: &ScalarField) -> Result<f64, MeasureError> {
        if integrand.spec() != self.spec() {
            return Err(MeasureError::GridMismatch);
        }
        let (flats, masses) = self.masses();
        let g = integrand.values();
        let num: Vec<f64> = flats.iter().zip(&masses).map(|(&f, &m)| g[f] * m).collect();
        Ok(grid::pairwise_sum(&num) / grid::pairwise_sum(&masses))
    }

    /// `Var_mu(g) = E[g^2] - E[g]^2`.
    pub fn variance(&self, integrand: &ScalarField) -> Result<f64, MeasureError> {
        if integrand.spec() != self.spec() {
            return Err(MeasureError::GridMismatch);
        }
        let (flats, masses) = self.masses();
        let g = integrand.values();
        let num1: Vec<f64> = flats.iter().zip(&masses).map(|(&f, &m)| g[f] * m).collect();
        let num2: Vec<f64> = flats
            .iter()
            .zip(&masses)
            .map(|(&f, &m)| g[f] * g[f] * m)
            .collect();
        let den = grid::pairwise_sum(&masses);
        let e1 = grid::pairwise_sum(&num1) / den;
        let e2 = grid::pairwise_sum(&num2) / den;
        Ok(e2 - e1 * e1)
    }
}

/// Outcome of a Brascamp-Lieb variance comparison.
#[derive(Debug, Clone)]
pub struct BrascampLiebCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub report: CheckReport,
}

/// Check `Var_mu(g) <= E_mu[(D^2 V)^{-1} grad g . grad g]` for an integrand
/// given with its gradient at every grid point. Hessians are taken on the
/// interior margin; both sides restrict to it consistently.
pub fn brascamp_lieb_check_general<G>(
    measure: &LogConcaveMeasure,
    integrand: &ScalarField,
    grad: G,
    margin_fraction: f64,
    lambda_min: f64,
    tolerance: f64,
) -> Result<BrascampLiebCheck, MeasureError>
where
    G: Fn(usize) -> [f64; MAX_DIM],
{
    if integrand.spec() != measure.spec() {
        return Err(MeasureError::GridMismatch);
    }
    let spec = measure.spec().clone();
    let n = spec.dim();
    let margin = spec.margin(margin_fraction);
    let potential = measure.potential();
    let vals = potential.values();
    let cap = potential.cap();
    let g = integrand.values();

    let mut shift = f64::NEG_INFINITY;
    for (flat, idx) in spec.indices().enumerate() {
        if spec.is_interior(&idx, &margin) && vals[flat] < cap {
            shift = shift.max(-vals[flat]);
        }
    }

    let mut masses = Vec::new();
    let mut gv = Vec::new();
    let mut ggv = Vec::new();
    let mut quad = Vec::new();
    for (flat, idx) in spec.indices().enumerate() {
        if !spec.is_interior(&idx, &margin) || vals[flat] >= cap {
            continue;
        }
        let h = grid::hessian(potential, &idx)?;
        let eig = linalg::min_eigenvalue(&h, n);
        if eig < lambda_min {
            let p = spec.point(&idx);
            return Err(MeasureError::SingularHessian {
                point: p[..n].to_vec(),
                eigenvalue: eig,
                floor: lambda_min,
            });
        }
        let hinv = linalg::inverse(&h, n).ok_or_else(|| MeasureError::SingularHessian {
            point: spec.point(&idx)[..n].to_vec(),
            eigenvalue: eig,
            floor: lambda_min,
        })?;
        let w = spec.trapezoid_weight(&idx);
        let m = w * (-vals[flat] - shift).exp();
        let grad_g = grad(flat);
        masses.push(m);
        gv.push(g[flat] * m);
        ggv.push(g[flat] * g[flat] * m);
        quad.push(linalg::quad_form(&hinv, &grad_g[..n], n) * m);
    }
    if masses.is_empty() {
        return Err(MeasureError::Coverage {
            fraction: 0.0,
            needed: 1.0,
        });
    }
    let den = grid::pairwise_sum(&masses);
    let e1 = grid::pairwise_sum(&gv) / den;
    let e2 = grid::pairwise_sum(&ggv) / den;
    let lhs = e2 - e1 * e1;
    let rhs = grid::pairwise_sum(&quad) / den;
    let slack = rhs - lhs;
    let report = CheckReport::evaluate(
        "brascamp_lieb",
        (-slack).max(0.0),
        tolerance,
        None,
        SampleCount {
            checked: masses.len(),
            skipped: 0,
        },
    );
    Ok(BrascampLiebCheck {
        lhs,
        rhs,
        slack,
        report,
    })
}

/// Brascamp-Lieb for the linear function `x -> x . theta`.
pub fn brascamp_lieb_check(
    measure: &LogConcaveMeasure,
    theta: &[f64],
    margin_fraction: f64,
    lambda_min: f64,
    tolerance: f64,
) -> Result<BrascampLiebCheck, MeasureError> {
    let spec = measure.spec().clone();
    let n = spec.dim();
    let mut th = [0.0; MAX_DIM];
    th[..n].copy_from_slice(&theta[..n]);
    let integrand = ScalarField::sample(spec, FieldKind::Diagnostic, |x| {
        (0..n).map(|a| x[a] * th[a]).sum()
    })?;
    brascamp_lieb_check_general(
        measure,
        &integrand,
        |_| th,
        margin_fraction,
        lambda_min,
        tolerance,
    )
}

/// `Tr (D^2 phi)^{-1}` per interior point; boundary margin is NaN.
pub fn trace_inverse_hessian_field(
    potential: &PotentialField,
    margin_fraction: f64,
    lambda_min: f64,
) -> Result<ScalarField, MeasureError> {
    let spec = potential.spec().clone();
    let n = spec.dim();
    let margin = spec.margin(margin_fraction);
    let mut values = vec![f64::NAN; spec.len()];
    for (flat, idx) in spec.indices().enumerate() {
        if !spec.is_interior(&idx, &margin) {
            continue;
        }
        let h = match grid::hessian(potential, &idx) {
            Ok(h) => h,
            Err(_) => continue,
        };
        let eig = linalg::min_eigenvalue(&h, n);
        if eig < lambda_min {
            return Err(MeasureError::SingularHessian {
                point: spec.point(&idx)[..n].to_vec(),
                eigenvalue: eig,
                floor: lambda_min,
            });
        }
        let hinv = linalg::inverse(&h, n).ok_or_else(|| MeasureError::SingularHessian {
            point: spec.point(&idx)[..n].to_vec(),
            eigenvalue: eig,
            floor: lambda_min,
        })?;
        values[flat] = linalg::trace(&hinv, n);
    }
    Ok(ScalarField::new(spec, values, FieldKind::Diagnostic)?)
}

/// Convenience: worst slack location for reporting.
pub fn singular_location(err: &MeasureError) -> Option<Location> {
    match err {
        MeasureError::SingularHessian { point, .. } => Some(Location {
            point: point.clone(),
            t: None,
        }),
        _ => None,
    }
}

#[allow(dead_code)]
fn _unused(_: &SymMat) {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{AxisSpec, DEFAULT_CAP};

    fn grid1(min: f64, max: f64, count: usize) -> GridSpec {
        GridSpec::new(vec![AxisSpec::new(min, max, count)]).unwrap()
    }

    fn gaussian_measure(spec: &GridSpec) -> LogConcaveMeasure {
        let p =
            PotentialField::sample(spec.clone(), |x| x.iter().map(|v| v * v).sum::<f64>() / 2.0)
                .unwrap();
        LogConcaveMeasure::new(p).unwrap()
    }

    #[test]
    fn gaussian_moments() {
        let spec = grid1(-10.0, 10.0, 1025);
        let mu = gaussian_measure(&spec);
        let x2 = ScalarField::sample(spec.clone(), FieldKind::Diagnostic, |x| x[0] * x[0]).unwrap();
        assert!((mu.expectation(&x2).unwrap() - 1.0).abs() < 1e-6);
        let x = ScalarField::sample(spec.clone(), FieldKind::Diagnostic, |x| x[0]).unwrap();
        assert!(mu.expectation(&x).unwrap().abs() < 1e-10);
        assert!((mu.variance(&x).unwrap() - 1.0).abs() < 1e-6);
        let c = ScalarField::sample(spec, FieldKind::Diagnostic, |_| 3.25).unwrap();
        assert!((mu.expectation(&c).unwrap() - 3.25).abs() < 1e-13);
        assert!(mu.variance(&c).unwrap().abs() < 1e-12);
    }

    #[test]
    fn scaled_gaussian_variance() {
        // exp(-x^2) has variance 1/2.
        let spec = grid1(-10.0, 10.0, 1025);
        let p = PotentialField::sample(spec.clone(), |x| x[0] * x[0]).unwrap();
        let mu = LogConcaveMeasure::new(p).unwrap();
        let x = ScalarField::sample(spec, FieldKind::Diagnostic, |x| x[0]).unwrap();
        assert!((mu.variance(&x).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn rejects_mismatched_grid_and_nonconvex() {
        let spec = grid1(-5.0, 5.0, 257);
        let mu = gaussian_measure(&spec);
        let other = grid1(-5.0, 5.0, 129);
        let g = ScalarField::sample(other, FieldKind::Diagnostic, |x| x[0]).unwrap();
        assert!(matches!(
            mu.expectation(&g),
            Err(MeasureError::GridMismatch)
        ));
        let bumpy = PotentialField::sample(spec, |x| -x[0] * x[0]).unwrap();
        assert!(matches!(
            LogConcaveMeasure::new(bumpy),
            Err(MeasureError::NotLogConcave { .. })
        ));
    }

    #[test]
    fn brascamp_lieb_saturates_for_gaussians() {
        let spec = grid1(-10.0, 10.0, 1025);
        let mu = gaussian_measure(&spec);
        let out = brascamp_lieb_check(&mu, &[1.0], 0.1, DEFAULT_LAMBDA_MIN, 1e-4).unwrap();
        assert!(out.report.passed);
        assert!((out.lhs - 1.0).abs() < 1e-5);
        assert!(out.slack.abs() < 1e-5, "{}", out.slack);
    }

    #[test]
    fn brascamp_lieb_strict_for_non_gaussian() {
        let spec = grid1(-6.0, 6.0, 769);
        let p = PotentialField::sample(spec.clone(), |x| x[0].powi(4) / 4.0 + x[0] * x[0] / 2.0)
            .unwrap();
        let mu = LogConcaveMeasure::new(p).unwrap();
        let out = brascamp_lieb_check(&mu, &[1.0], 0.1, DEFAULT_LAMBDA_MIN, 1e-4).unwrap();
        assert!(out.report.passed);
        assert!(out.slack > 1e-3, "slack {}", out.slack);
    }

    #[test]
    fn brascamp_lieb_anisotropic_axis() {
        let spec = GridSpec::new(vec![
            AxisSpec::new(-8.0, 8.0, 129),
            AxisSpec::new(-4.0, 4.0, 129),
        ])
        .unwrap();
        let p = PotentialField::sample(spec, |x| x[0] * x[0] / 2.0 + 2.0 * x[1] * x[1]).unwrap();
        let mu = LogConcaveMeasure::new(p).unwrap();
        let out = brascamp_lieb_check(&mu, &[0.0, 1.0], 0.1, DEFAULT_LAMBDA_MIN, 1e-4).unwrap();
        assert!((out.lhs - 0.25).abs() < 1e-5, "lhs {}", out.lhs);
        assert!((out.rhs - 0.25).abs() < 1e-5, "rhs {}", out.rhs);
    }

    #[test]
    fn brascamp_lieb_rejects_flat_hessian() {
        // |x| is convex but affine away from the kink: its finite-difference
        // Hessian vanishes there.
        let spec = grid1(-4.0, 4.0, 257);
        let p = PotentialField::sample(spec, |x| x[0].abs()).unwrap();
        let mu = LogConcaveMeasure::new(p).unwrap();
        let err = brascamp_lieb_check(&mu, &[1.0], 0.1, DEFAULT_LAMBDA_MIN, 1e-4);
        assert!(matches!(err, Err(MeasureError::SingularHessian { .. })));
    }

    #[test]
    fn trace_inverse_on_quadratics() {
        let spec = grid1(-6.0, 6.0, 513);
        let t = 0.5;
        let p =
            PotentialField::sample(spec.clone(), |x| (1.0 + 2.0 * t) * x[0] * x[0] / 2.0).unwrap();
        let f = trace_inverse_hessian_field(&p, 0.1, DEFAULT_LAMBDA_MIN).unwrap();
        let margin = spec.margin(0.1);
        for (flat, idx) in spec.indices().enumerate() {
            let v = f.values()[flat];
            if spec.is_interior(&idx, &margin) {
                assert!((v - 0.5).abs() < 1e-9, "{v}");
            } else {
                assert!(v.is_nan());
            }
        }

        let spec2 = GridSpec::new(vec![
            AxisSpec::new(-5.0, 5.0, 129),
            AxisSpec::new(-5.0, 5.0, 129),
        ])
        .unwrap();
        let p2 = PotentialField::sample(spec2.clone(), |x| x[0] * x[0] / 2.0 + 2.0 * x[1] * x[1])
            .unwrap();
        let f2 = trace_inverse_hessian_field(&p2, 0.1, DEFAULT_LAMBDA_MIN).unwrap();
        let margin2 = spec2.margin(0.1);
        for (flat, idx) in spec2.indices().enumerate() {
            if spec2.is_interior(&idx, &margin2) {
                assert!((f2.values()[flat] - 1.25).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn indicator_measure_uses_finite_run() {
        // mu ∝ exp(-y^2/2) restricted to [-1, 1]: truncated-normal variance.
        let spec = grid1(-8.0, 8.0, 1025);
        let p = PotentialField::sample(spec.clone(), |x| {
            if x[0].abs() <= 1.0 {
                x[0] * x[0] / 2.0
            } else {
                DEFAULT_CAP
            }
        })
        .unwrap();
        let mu = LogConcaveMeasure::new(p).unwrap();
        let x = ScalarField::sample(spec, FieldKind::Diagnostic, |x| x[0]).unwrap();
        let v = mu.variance(&x).unwrap();
        assert!((v - 0.29111879499166417).abs() < 1e-4, "{v}");
    }
}
