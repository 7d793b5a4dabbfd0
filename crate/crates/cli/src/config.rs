//! Scenario configuration: TOML schema, validation, and potential loading.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use santalo_core::grid::{AxisSpec, GridSpec, PotentialField};
use santalo_core::heatflow::HeatParams;
use santalo_core::potentials::Builtin;
use santalo_core::santalo::SantaloParams;

/// Configuration or usage problem; exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    /// Built-in potential name or path to a whitespace table file.
    pub potential: String,
    pub dimension: usize,
    pub grid: RawGrid,
    pub dual_grid: RawGrid,
    #[serde(default)]
    pub times: Option<RawTimes>,
    #[serde(default)]
    pub checks: Vec<RawCheck>,
    #[serde(default)]
    pub output: RawOutput,
    #[serde(default)]
    pub numerics: RawNumerics,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGrid {
    pub axes: Vec<RawAxis>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTimes {
    #[serde(default)]
    pub explicit: Option<Vec<f64>>,
    #[serde(default)]
    pub t_min: Option<f64>,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub spacing: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCheck {
    pub name: String,
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Superlinearity certificate slope.
    #[serde(default)]
    pub m: Option<f64>,
    /// Superlinearity certificate offset.
    #[serde(default)]
    pub b: Option<f64>,
    /// Direction for variance checks.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    /// Evaluation point for the Hessian-variance identity.
    #[serde(default)]
    pub point: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub formats: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNumerics {
    #[serde(default)]
    pub tail_tolerance: Option<f64>,
    #[serde(default)]
    pub margin_fraction: Option<f64>,
    #[serde(default)]
    pub coverage_min: Option<f64>,
    #[serde(default)]
    pub lambda_min: Option<f64>,
}

/// Fully validated scenario ready to run.
pub struct Scenario {
    pub potential_name: String,
    pub phi0: PotentialField,
    pub grid: GridSpec,
    pub dual_grid: GridSpec,
    pub times: Vec<f64>,
    pub checks: Vec<RawCheck>,
    pub out_dir: Option<PathBuf>,
    pub formats: Vec<String>,
    pub params: SantaloParams,
    pub builtin: Option<Builtin>,
}

fn build_grid(raw: &RawGrid, dimension: usize, field: &str) -> Result<GridSpec, ConfigError> {
    if raw.axes.len() != dimension {
        return err(format!(
            "{field}: has {} axes but dimension = {dimension}",
            raw.axes.len()
        ));
    }
    let axes: Vec<AxisSpec> = raw
        .axes
        .iter()
        .map(|a| AxisSpec::new(a.min, a.max, a.count))
        .collect();
    GridSpec::new(axes).map_err(|e| ConfigError(format!("{field}: {e}")))
}

fn build_times(raw: &Option<RawTimes>) -> Result<Vec<f64>, ConfigError> {
    let Some(raw) = raw else {
        return Ok(Vec::new());
    };
    let times = if let Some(explicit) = &raw.explicit {
        explicit.clone()
    } else {
        let t_min = raw
            .t_min
            .ok_or(ConfigError("times: missing t_min".into()))?;
        let t_max = raw
            .t_max
            .ok_or(ConfigError("times: missing t_max".into()))?;
        let count = raw
            .count
            .ok_or(ConfigError("times: missing count".into()))?;
        if count < 2 {
            return err("times: count must be at least 2");
        }
        let spacing = raw.spacing.as_deref().unwrap_or("geometric");
        (0..count)
            .map(|k| {
                let u = k as f64 / (count - 1) as f64;
                match spacing {
                    "linear" => Ok(t_min + u * (t_max - t_min)),
                    "geometric" => Ok(t_min * (t_max / t_min).powf(u)),
                    other => err(format!("times.spacing: unknown '{other}'")),
                }
            })
            .collect::<Result<Vec<f64>, _>>()?
    };
    if times.iter().any(|t| !(*t > 0.0)) {
        return err("times: all times must be positive");
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return err("times: must be strictly increasing");
    }
    Ok(times)
}

/// Load a potential from a whitespace table: one `x1 .. xd value` line per
/// grid point; the lattice is inferred and must be complete and uniform.
pub fn load_table(
    path: &Path,
    dimension: usize,
) -> Result<(GridSpec, PotentialField), ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("potential table {}: {e}", path.display())))?;
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<f64> = line
            .split_whitespace()
            .map(|c| c.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ConfigError(format!("table line {}: {e}", lineno + 1)))?;
        if cols.len() != dimension + 1 {
            return err(format!(
                "table line {}: expected {} columns, got {}",
                lineno + 1,
                dimension + 1,
                cols.len()
            ));
        }
        rows.push((cols[..dimension].to_vec(), cols[dimension]));
    }
    if rows.is_empty() {
        return err("potential table is empty");
    }

    let mut axes = Vec::new();
    for a in 0..dimension {
        let mut coords: Vec<f64> = rows.iter().map(|(x, _)| x[a]).collect();
        coords.sort_by(|p, q| p.partial_cmp(q).unwrap());
        coords.dedup_by(|p, q| (*p - *q).abs() <= 1e-12 * (1.0 + q.abs()));
        if coords.len() < 8 {
            return err(format!("table axis {a}: fewer than 8 distinct coordinates"));
        }
        let h = (coords[coords.len() - 1] - coords[0]) / (coords.len() - 1) as f64;
        for (k, c) in coords.iter().enumerate() {
            let expect = coords[0] + k as f64 * h;
            if (c - expect).abs() > 1e-9 * (1.0 + h.abs()) {
                return err(format!(
                    "table axis {a}: coordinates are not uniform near {c}"
                ));
            }
        }
        axes.push(AxisSpec::new(
            coords[0],
            coords[coords.len() - 1],
            coords.len(),
        ));
    }
    let spec = GridSpec::new(axes).map_err(|e| ConfigError(format!("table grid: {e}")))?;
    if rows.len() != spec.len() {
        return err(format!(
            "table has {} rows but the inferred lattice needs {}",
            rows.len(),
            spec.len()
        ));
    }
    let mut values = vec![f64::NAN; spec.len()];
    for (x, v) in &rows {
        let mut idx = [0usize; santalo_core::grid::MAX_DIM];
        for a in 0..dimension {
            let ax = spec.axis(a);
            let u = (x[a] - ax.min) / ax.spacing();
            idx[a] = u.round() as usize;
        }
        values[spec.flat(&idx)] = *v;
    }
    if values.iter().any(|v| v.is_nan()) {
        return err("table does not cover the full lattice (duplicate or missing points)");
    }
    let phi = PotentialField::from_values(spec.clone(), values)
        .map_err(|e| ConfigError(format!("table potential: {e}")))?;
    Ok((spec, phi))
}

pub fn load(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let raw: RawConfig =
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;

    if !(1..=3).contains(&raw.dimension) {
        return err(format!("dimension: must be 1..=3, got {}", raw.dimension));
    }
    let grid = build_grid(&raw.grid, raw.dimension, "grid")?;
    let dual_grid = build_grid(&raw.dual_grid, raw.dimension, "dual_grid")?;
    let times = build_times(&raw.times)?;

    let builtin = raw.potential.parse::<Builtin>().ok();
    let phi0 = match builtin {
        Some(b) => {
            if !b.supports_dim(raw.dimension) {
                return err(format!(
                    "potential: '{}' is not defined in dimension {}",
                    b.name(),
                    raw.dimension
                ));
            }
            b.sample(&grid)
                .map_err(|e| ConfigError(format!("potential: {e}")))?
        }
        None => {
            let path = Path::new(&raw.potential);
            if !path.exists() {
                return err(format!(
                    "potential: '{}' is neither a built-in ({}) nor an existing table file",
                    raw.potential,
                    Builtin::all().map(|b| b.name()).join(", ")
                ));
            }
            let (tspec, phi) = load_table(path, raw.dimension)?;
            if tspec != grid {
                return err("potential: table lattice does not match the configured grid");
            }
            phi
        }
    };

    let mut params = SantaloParams::default();
    if let Some(v) = raw.numerics.tail_tolerance {
        params.heat = HeatParams { tail_tolerance: v };
    }
    if let Some(v) = raw.numerics.margin_fraction {
        params.margin_fraction = v;
    }
    if let Some(v) = raw.numerics.coverage_min {
        params.coverage_min = v;
    }
    if let Some(v) = raw.numerics.lambda_min {
        params.lambda_min = v;
    }

    let formats = raw
        .output
        .formats
        .unwrap_or_else(|| vec!["csv".into(), "json".into()]);
    for f in &formats {
        if f != "csv" && f != "json" {
            return err(format!("output.formats: unknown format '{f}'"));
        }
    }

    let known = known_check_names();
    for c in &raw.checks {
        if !known.contains_key(c.name.as_str()) {
            return err(format!(
                "checks: unknown check '{}' (known: {})",
                c.name,
                known.keys().copied().collect::<Vec<_>>().join(", ")
            ));
        }
    }

    Ok(Scenario {
        potential_name: raw.potential,
        phi0,
        grid,
        dual_grid,
        times,
        checks: raw.checks,
        out_dir: raw.output.dir,
        formats,
        params,
        builtin,
    })
}

/// Check registry: name -> needs-trace flag.
pub fn known_check_names() -> BTreeMap<&'static str, bool> {
    BTreeMap::from([
        ("pointwise_identity", false),
        ("perturbation_relation", false),
        ("heat_relation", false),
        ("hessian_variance", false),
        ("small_time_bound", false),
        ("superlinearity", false),
        ("brascamp_lieb", false),
        ("gradient_map_inverse", false),
        ("monotonicity", true),
        ("alpha_prime_nonneg", true),
        ("santalo_upper_bound", true),
        ("gaussian_constancy", true),
        ("derivative_cross_validation", true),
    ])
}
