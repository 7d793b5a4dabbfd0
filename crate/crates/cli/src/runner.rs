//! Drives the core operations from a scenario and writes machine-readable
//! outputs.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use santalo_core::convex;
use santalo_core::grid::{GridSpec, Index, PotentialField, MAX_DIM};
use santalo_core::heatflow;
use santalo_core::inequalities::{self, LogConcaveMeasure};
use santalo_core::potentials::Builtin;
use santalo_core::report::CheckReport;
use santalo_core::santalo::{self, VolumeProductTrace};

use crate::config::{ConfigError, RawCheck, Scenario};

#[derive(Debug)]
pub enum RunError {
    /// Configuration or usage problem (exit 2).
    Config(ConfigError),
    /// Singularities, coverage failures, truncation (exit 3).
    Numerical(String),
    /// Output I/O failure (exit 3).
    Io(std::io::Error),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Numerical(msg) => write!(f, "numerical error: {msg}"),
            RunError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

fn numerical(e: impl fmt::Display) -> RunError {
    RunError::Numerical(e.to_string())
}

/// 12 significant digits, deterministic.
fn fmt_sig(v: f64) -> String {
    format!("{v:.11e}")
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), RunError> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

pub fn run_evolve(scenario: &Scenario, out_dir: &Path, snapshots: bool) -> Result<(), RunError> {
    if scenario.times.is_empty() {
        return Err(ConfigError("times: required for evolve".into()).into());
    }
    let trace = santalo::evolve_trace(
        &scenario.phi0,
        &scenario.times,
        &scenario.dual_grid,
        &scenario.params,
    )
    .map_err(numerical)?;

    fs::create_dir_all(out_dir)?;
    if scenario.formats.iter().any(|f| f == "csv") {
        let mut csv = String::from(
            "t,alpha,alpha_prime_fd,alpha_prime_integral,int_exp_neg_phi_t,int_exp_neg_psi_t,volume_product\n",
        );
        for i in 0..trace.times.len() {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt_sig(trace.times[i]),
                fmt_sig(trace.alpha[i]),
                fmt_sig(trace.alpha_prime_fd[i]),
                fmt_sig(trace.alpha_prime_integral[i]),
                fmt_sig(trace.int_exp_neg_phi_t[i]),
                fmt_sig(trace.int_exp_neg_psi_t[i]),
                fmt_sig(trace.volume_product[i]),
            ));
        }
        write_atomic(&out_dir.join("trace.csv"), &csv)?;
    }
    if scenario.formats.iter().any(|f| f == "json") {
        let json = serde_json::json!({
            "potential": scenario.potential_name,
            "alpha_zero": trace.alpha_zero,
            "times": trace.times,
            "alpha": trace.alpha,
            "alpha_prime_fd": trace.alpha_prime_fd,
            "alpha_prime_integral": trace.alpha_prime_integral,
            "int_exp_neg_phi_t": trace.int_exp_neg_phi_t,
            "int_exp_neg_psi_t": trace.int_exp_neg_psi_t,
            "volume_product": trace.volume_product,
        });
        write_atomic(
            &out_dir.join("trace.json"),
            &format!("{}\n", serde_json::to_string_pretty(&json).unwrap()),
        )?;
    }
    if snapshots {
        for (k, &t) in scenario.times.iter().enumerate() {
            let snap = heatflow::FlowSnapshot::compute(
                &scenario.phi0,
                t,
                &scenario.dual_grid,
                &scenario.params.heat,
            )
            .map_err(numerical)?;
            write_table(
                &out_dir.join(format!("snapshot_{k:02}_phi.txt")),
                &snap.phi_t,
            )?;
            write_table(
                &out_dir.join(format!("snapshot_{k:02}_psi.txt")),
                &snap.psi_t,
            )?;
        }
    }
    println!(
        "evolve: {} times, alpha(0) = {:.6}, alpha range [{:.6}, {:.6}]",
        trace.times.len(),
        trace.alpha_zero,
        trace.alpha.first().unwrap(),
        trace.alpha.last().unwrap(),
    );
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn write_table(path: &Path, field: &PotentialField) -> Result<(), RunError> {
    let spec = field.spec();
    let n = spec.dim();
    let mut text = String::new();
    for idx in spec.indices() {
        let p = spec.point(&idx);
        for a in 0..n {
            text.push_str(&format!("{:.17e} ", p[a]));
        }
        text.push_str(&format!("{:.17e}\n", field.value(&idx)));
    }
    write_atomic(path, &text)
}

pub fn run_conjugate(scenario: &Scenario, out_dir: &Path) -> Result<(), RunError> {
    if !convex::slope_coverage(&scenario.phi0, &scenario.dual_grid) {
        let bounds = convex::suggest_dual_bounds(&scenario.phi0);
        eprintln!(
            "warning: dual grid does not cover the primal slope range {bounds:?}; \
             the biconjugate will clip"
        );
    }
    let dual =
        convex::legendre_transform(&scenario.phi0, &scenario.dual_grid).map_err(numerical)?;
    fs::create_dir_all(out_dir)?;
    write_table(&out_dir.join("primal.txt"), &scenario.phi0)?;
    write_table(&out_dir.join("dual.txt"), &dual)?;
    println!(
        "conjugate: dual convexity defect {:.3e}",
        convex::convexity_defect(&dual)
    );
    println!("wrote {}", out_dir.display());
    Ok(())
}

struct CheckDefaults {
    t: f64,
    dt: f64,
    tolerance: f64,
}

fn defaults_for(name: &str) -> CheckDefaults {
    match name {
        "pointwise_identity" | "perturbation_relation" => CheckDefaults {
            t: 0.5,
            dt: 1e-2,
            tolerance: 1e-2,
        },
        "heat_relation" => CheckDefaults {
            t: 0.5,
            dt: 1e-3,
            tolerance: 5e-3,
        },
        "hessian_variance" => CheckDefaults {
            t: 0.5,
            dt: 0.0,
            tolerance: 1e-3,
        },
        "small_time_bound" => CheckDefaults {
            t: 0.1,
            dt: 0.0,
            tolerance: 1e-6,
        },
        "superlinearity" => CheckDefaults {
            t: 0.5,
            dt: 0.0,
            tolerance: 1e-8,
        },
        "brascamp_lieb" => CheckDefaults {
            t: 0.0,
            dt: 0.0,
            tolerance: 1e-4,
        },
        "gradient_map_inverse" => CheckDefaults {
            t: 0.0,
            dt: 0.0,
            tolerance: 5e-3,
        },
        "monotonicity" | "alpha_prime_nonneg" => CheckDefaults {
            t: 0.0,
            dt: 0.0,
            tolerance: 1e-4,
        },
        "santalo_upper_bound" | "gaussian_constancy" => CheckDefaults {
            t: 0.0,
            dt: 0.0,
            tolerance: 1e-3,
        },
        "derivative_cross_validation" => CheckDefaults {
            t: 0.0,
            dt: 0.0,
            tolerance: 5e-3,
        },
        _ => unreachable!("unknown check {name}"),
    }
}

fn default_suite(scenario: &Scenario) -> Vec<RawCheck> {
    let bare = |name: &str| RawCheck {
        name: name.into(),
        t: None,
        dt: None,
        tolerance: None,
        m: None,
        b: None,
        theta: None,
        point: None,
    };
    let mut checks = vec![
        bare("pointwise_identity"),
        bare("perturbation_relation"),
        bare("heat_relation"),
        bare("small_time_bound"),
        bare("superlinearity"),
        bare("hessian_variance"),
    ];
    if scenario
        .builtin
        .map(|b| b.strictly_convex())
        .unwrap_or(false)
    {
        checks.push(bare("brascamp_lieb"));
        checks.push(bare("gradient_map_inverse"));
    }
    if !scenario.times.is_empty() {
        checks.push(bare("monotonicity"));
        checks.push(bare("alpha_prime_nonneg"));
        checks.push(bare("santalo_upper_bound"));
        checks.push(bare("derivative_cross_validation"));
        if scenario.builtin == Some(Builtin::Gaussian) {
            checks.push(bare("gaussian_constancy"));
        }
    }
    checks
}

fn origin_index(spec: &GridSpec) -> Index {
    spec.nearest_index(&[0.0; MAX_DIM])
}

fn axis_theta(spec: &GridSpec, axis: usize) -> Vec<f64> {
    let mut th = vec![0.0; spec.dim()];
    th[axis] = 1.0;
    th
}

/// `|alpha(t) - n log 2pi|` over the trace, as a check report.
fn gaussian_constancy_report(trace: &VolumeProductTrace, tolerance: f64) -> CheckReport {
    let target = trace.dim as f64 * (2.0 * std::f64::consts::PI).ln();
    let mut worst = 0.0f64;
    let mut at = None;
    for (&a, &t) in trace.alpha.iter().zip(&trace.times) {
        if (a - target).abs() > worst {
            worst = (a - target).abs();
            at = Some(t);
        }
    }
    CheckReport::evaluate(
        "gaussian_constancy",
        worst,
        tolerance,
        at.map(|t| santalo_core::report::Location {
            point: vec![],
            t: Some(t),
        }),
        santalo_core::report::SampleCount {
            checked: trace.times.len(),
            skipped: 0,
        },
    )
}

pub fn run_verify(
    scenario: &Scenario,
    out_dir: &Path,
    tolerance_scale: f64,
) -> Result<bool, RunError> {
    let checks = if scenario.checks.is_empty() {
        default_suite(scenario)
    } else {
        scenario.checks.clone()
    };

    let needs_trace = checks.iter().any(|c| {
        matches!(
            c.name.as_str(),
            "monotonicity"
                | "alpha_prime_nonneg"
                | "santalo_upper_bound"
                | "gaussian_constancy"
                | "derivative_cross_validation"
        )
    });
    let trace = if needs_trace {
        if scenario.times.is_empty() {
            return Err(ConfigError("times: required for trace-based checks".into()).into());
        }
        Some(
            santalo::evolve_trace(
                &scenario.phi0,
                &scenario.times,
                &scenario.dual_grid,
                &scenario.params,
            )
            .map_err(numerical)?,
        )
    } else {
        None
    };
    let trace_reports = trace.as_ref().map(|tr| {
        santalo::trace_reports(
            tr,
            defaults_for("monotonicity").tolerance,
            defaults_for("santalo_upper_bound").tolerance,
            defaults_for("derivative_cross_validation").tolerance,
        )
    });

    let mut reports: Vec<CheckReport> = Vec::new();
    for check in &checks {
        let d = defaults_for(&check.name);
        let t = check.t.unwrap_or(d.t);
        let dt = check.dt.unwrap_or(d.dt);
        let tol = check.tolerance.unwrap_or(d.tolerance);
        match check.name.as_str() {
            "pointwise_identity" => {
                let r = santalo::verify_pointwise_identity(
                    &scenario.phi0,
                    t,
                    &scenario.dual_grid,
                    dt,
                    tol,
                    &scenario.params,
                )
                .map_err(numerical)?;
                reports.push(r);
            }
            "perturbation_relation" => {
                let r = santalo::verify_perturbation_relation(
                    &scenario.phi0,
                    t,
                    &scenario.dual_grid,
                    dt,
                    tol,
                    &scenario.params,
                )
                .map_err(numerical)?;
                reports.push(r);
            }
            "heat_relation" => {
                let r = santalo::verify_heat_relation(&scenario.phi0, t, dt, tol, &scenario.params)
                    .map_err(numerical)?;
                reports.push(r);
            }
            "hessian_variance" => {
                let idx = match &check.point {
                    Some(p) => scenario.grid.nearest_index(p),
                    None => origin_index(&scenario.grid),
                };
                let theta = check
                    .theta
                    .clone()
                    .unwrap_or_else(|| axis_theta(&scenario.grid, 0));
                let r = santalo::verify_hessian_variance_identity(
                    &scenario.phi0,
                    &idx,
                    &theta,
                    tol,
                    &scenario.params,
                )
                .map_err(numerical)?;
                reports.push(r);
            }
            "small_time_bound" => {
                let psi0 = convex::legendre_transform(&scenario.phi0, &scenario.dual_grid)
                    .map_err(numerical)?;
                let out = santalo::verify_small_time_bound(
                    &scenario.phi0,
                    &psi0,
                    t,
                    tol,
                    &scenario.params,
                )
                .map_err(numerical)?;
                reports.push(out.pointwise);
                reports.push(out.integral);
            }
            "superlinearity" => {
                let m = check.m.unwrap_or(2.0);
                let b = check.b.unwrap_or(2.0);
                let r = santalo::verify_superlinearity_bound(
                    &scenario.phi0,
                    m,
                    b,
                    t,
                    tol,
                    &scenario.params,
                )
                .map_err(numerical)?;
                reports.push(r);
            }
            "brascamp_lieb" => {
                let mu = LogConcaveMeasure::new(scenario.phi0.clone()).map_err(numerical)?;
                let axes: Vec<Vec<f64>> = match &check.theta {
                    Some(th) => vec![th.clone()],
                    None => (0..scenario.grid.dim())
                        .map(|a| axis_theta(&scenario.grid, a))
                        .collect(),
                };
                for theta in axes {
                    let out = inequalities::brascamp_lieb_check(
                        &mu,
                        &theta,
                        scenario.params.margin_fraction,
                        scenario.params.lambda_min,
                        tol,
                    )
                    .map_err(numerical)?;
                    reports.push(out.report);
                }
            }
            "gradient_map_inverse" => {
                let dual = convex::legendre_transform(&scenario.phi0, &scenario.dual_grid)
                    .map_err(numerical)?;
                let r = convex::gradient_map_inverse_check(
                    &scenario.phi0,
                    &dual,
                    scenario.params.margin_fraction,
                    tol,
                )
                .map_err(numerical)?;
                reports.push(r);
            }
            "monotonicity"
            | "alpha_prime_nonneg"
            | "santalo_upper_bound"
            | "derivative_cross_validation" => {
                let tr = trace_reports.as_ref().unwrap();
                let mut r = tr
                    .iter()
                    .find(|r| r.name == check.name)
                    .cloned()
                    .expect("trace report present");
                if let Some(tol) = check.tolerance {
                    r.tolerance = tol;
                    r.passed = r.max_residual <= tol;
                }
                reports.push(r);
            }
            "gaussian_constancy" => {
                reports.push(gaussian_constancy_report(trace.as_ref().unwrap(), tol));
            }
            other => unreachable!("unknown check {other}"),
        }
    }

    let reports: Vec<CheckReport> = reports
        .into_iter()
        .map(|r| r.rescaled(tolerance_scale))
        .collect();

    fs::create_dir_all(out_dir)?;
    write_atomic(
        &out_dir.join("report.json"),
        &format!("{}\n", serde_json::to_string_pretty(&reports).unwrap()),
    )?;

    let mut all = true;
    for r in &reports {
        println!(
            "{:<28} {}  residual {:.3e} vs tolerance {:.3e}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.max_residual,
            r.tolerance
        );
        all &= r.passed;
    }
    println!("wrote {}", out_dir.join("report.json").display());
    Ok(all)
}
