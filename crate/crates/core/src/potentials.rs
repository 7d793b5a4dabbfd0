//! Built-in test potentials: even, convex, superlinear or cap-truncated.

use std::fmt;
use std::str::FromStr;

use crate::grid::{GridError, GridSpec, PotentialField, DEFAULT_CAP};

/// The built-in potential library.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    /// `|x|^2 / 2` in any dimension; the fixed point of the transform.
    Gaussian,
    /// `x^4 / 4` (1-D).
    Quartic,
    /// `cosh(x) - 1` (1-D).
    Cosh,
    /// `|x|^3 / 3` (1-D).
    AbsCubed,
    /// Indicator of `[-1, 1]` (1-D): 0 inside, capped outside.
    IndicatorInterval,
    /// Indicator of the unit Euclidean ball (2-D).
    IndicatorBall,
    /// `x^2/2 + 2 y^2`, Hessian diag(1, 4) (2-D).
    Anisotropic,
}

impl Builtin {
    pub fn all() -> [Builtin; 7] {
        [
            Builtin::Gaussian,
            Builtin::Quartic,
            Builtin::Cosh,
            Builtin::AbsCubed,
            Builtin::IndicatorInterval,
            Builtin::IndicatorBall,
            Builtin::Anisotropic,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Builtin::Gaussian => "gaussian",
            Builtin::Quartic => "quartic",
            Builtin::Cosh => "cosh",
            Builtin::AbsCubed => "abs-cubed",
            Builtin::IndicatorInterval => "indicator-interval",
            Builtin::IndicatorBall => "indicator-ball",
            Builtin::Anisotropic => "anisotropic",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Builtin::Gaussian => "|x|^2/2 (any dimension)",
            Builtin::Quartic => "x^4/4 (1-D)",
            Builtin::Cosh => "cosh(x) - 1 (1-D)",
            Builtin::AbsCubed => "|x|^3/3 (1-D)",
            Builtin::IndicatorInterval => "indicator of [-1, 1] (1-D)",
            Builtin::IndicatorBall => "indicator of the unit ball (2-D)",
            Builtin::Anisotropic => "x^2/2 + 2y^2 (2-D)",
        }
    }

    pub fn supports_dim(&self, dim: usize) -> bool {
        match self {
            Builtin::Gaussian => (1..=3).contains(&dim),
            Builtin::Quartic | Builtin::Cosh | Builtin::AbsCubed | Builtin::IndicatorInterval => {
                dim == 1
            }
            Builtin::IndicatorBall | Builtin::Anisotropic => dim == 2,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Builtin::Gaussian => x.iter().map(|v| v * v).sum::<f64>() / 2.0,
            Builtin::Quartic => x[0].powi(4) / 4.0,
            Builtin::Cosh => x[0].cosh() - 1.0,
            Builtin::AbsCubed => x[0].abs().powi(3) / 3.0,
            Builtin::IndicatorInterval => {
                if x[0].abs() <= 1.0 {
                    0.0
                } else {
                    DEFAULT_CAP
                }
            }
            Builtin::IndicatorBall => {
                if x[0].hypot(x[1]) <= 1.0 {
                    0.0
                } else {
                    DEFAULT_CAP
                }
            }
            Builtin::Anisotropic => x[0] * x[0] / 2.0 + 2.0 * x[1] * x[1],
        }
    }

    pub fn sample(&self, spec: &GridSpec) -> Result<PotentialField, GridError> {
        assert!(
            self.supports_dim(spec.dim()),
            "{} is not defined in dimension {}",
            self.name(),
            spec.dim()
        );
        PotentialField::sample(spec.clone(), |x| self.eval(x))
    }

    /// Whether the potential is strictly convex with a Hessian bounded away
    /// from zero everywhere on a grid (quartic and |x|^3 flatten at the
    /// origin; indicators have no interior Hessian at all).
    pub fn strictly_convex(&self) -> bool {
        matches!(
            self,
            Builtin::Gaussian | Builtin::Cosh | Builtin::Anisotropic
        )
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Builtin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Builtin::all()
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown potential '{s}'"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::convexity_defect;
    use crate::grid::AxisSpec;

    #[test]
    fn names_round_trip() {
        for b in Builtin::all() {
            assert_eq!(b.name().parse::<Builtin>().unwrap(), b);
        }
        assert!("banana".parse::<Builtin>().is_err());
    }

    #[test]
    fn library_is_even_and_convex() {
        for b in Builtin::all() {
            let dim = if b.supports_dim(1) { 1 } else { 2 };
            let spec = GridSpec::new(vec![AxisSpec::new(-4.0, 4.0, 65); dim]).unwrap();
            let p = b.sample(&spec).unwrap();
            assert!(p.check_even(1e-12).is_ok(), "{b} not even");
            assert!(convexity_defect(&p) <= 1e-12, "{b} not convex");
        }
    }

    #[test]
    fn strict_convexity_classification() {
        assert!(Builtin::Gaussian.strictly_convex());
        assert!(Builtin::Cosh.strictly_convex());
        assert!(Builtin::Anisotropic.strictly_convex());
        assert!(!Builtin::Quartic.strictly_convex());
        assert!(!Builtin::IndicatorInterval.strictly_convex());
    }
}
