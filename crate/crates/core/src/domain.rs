//! Time domains with optional singular points.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Default half-width of the guard band around each excluded point.
pub const DEFAULT_EXCLUSION_MARGIN: f64 = 1e-9;

/// An interval of valid times, possibly unbounded, with a finite set of
/// excluded singular points (e.g. the pole of `1/t`).
///
/// Evaluations and integrations must stay clear of each excluded point by
/// `margin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeDomain {
    lower: f64,
    upper: f64,
    excluded: Vec<f64>,
    margin: f64,
}

impl TimeDomain {
    pub fn new(lower: f64, upper: f64, excluded: Vec<f64>) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::Schema(format!(
                "domain lower bound {lower} must be strictly below upper bound {upper}"
            )));
        }
        let mut excluded = excluded;
        excluded.sort_by(|a, b| a.partial_cmp(b).unwrap());
        excluded.dedup();
        if excluded.iter().any(|p| !p.is_finite()) {
            return Err(Error::Schema("excluded points must be finite".into()));
        }
        Ok(TimeDomain {
            lower,
            upper,
            excluded,
            margin: DEFAULT_EXCLUSION_MARGIN,
        })
    }

    /// The whole real line.
    pub fn real_line() -> Self {
        TimeDomain::new(f64::NEG_INFINITY, f64::INFINITY, Vec::new()).unwrap()
    }

    /// `[lower, +inf)`.
    pub fn from_lower(lower: f64) -> Self {
        TimeDomain::new(lower, f64::INFINITY, Vec::new()).unwrap()
    }

    pub fn bounded(lower: f64, upper: f64) -> Self {
        TimeDomain::new(lower, upper, Vec::new()).unwrap()
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        assert!(margin > 0.0);
        self.margin = margin;
        self
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn excluded(&self) -> &[f64] {
        &self.excluded
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Checks that `t` lies in the domain and clear of every excluded point.
    pub fn check(&self, t: f64) -> Result<()> {
        if !(t >= self.lower && t <= self.upper) {
            return Err(Error::OutOfDomain {
                t,
                lower: self.lower,
                upper: self.upper,
            });
        }
        for &p in &self.excluded {
            if (t - p).abs() < self.margin {
                return Err(Error::ExcludedPoint { t, point: p });
            }
        }
        Ok(())
    }

    pub fn contains(&self, t: f64) -> bool {
        self.check(t).is_ok()
    }

    /// Checks that the closed span between `a` and `b` (in either order) is
    /// inside the domain and does not straddle an excluded point.
    pub fn check_span(&self, a: f64, b: f64) -> Result<()> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.check(lo)?;
        self.check(hi)?;
        for &p in &self.excluded {
            if p > lo - self.margin && p < hi + self.margin {
                return Err(Error::ExcludedInSpan { lo, hi, point: p });
            }
        }
        Ok(())
    }

    /// The mirrored domain `-J`: `[a, b] -> [-b, -a]`, excluded points negated.
    pub fn reflect(&self) -> Self {
        let mut excluded: Vec<f64> = self.excluded.iter().map(|p| -p).collect();
        excluded.sort_by(|a, b| a.partial_cmp(b).unwrap());
        TimeDomain {
            lower: -self.upper,
            upper: -self.lower,
            excluded,
            margin: self.margin,
        }
    }

    /// Intersection with `[lo, hi]`, used to clip analysis grids.
    pub fn clip(&self, lo: f64, hi: f64) -> (f64, f64) {
        (self.lower.max(lo), self.upper.min(hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_intervals() {
        assert!(TimeDomain::new(2.0, 2.0, vec![]).is_err());
        assert!(TimeDomain::new(3.0, 1.0, vec![]).is_err());
    }

    #[test]
    fn excluded_points_are_guarded_by_the_margin() {
        let d = TimeDomain::new(-2.0, 2.0, vec![0.0]).unwrap();
        assert!(d.check(0.0).is_err());
        assert!(d.check(1e-12).is_err());
        assert!(d.check(1e-6).is_ok());
        assert!(d.check_span(-1.0, 1.0).is_err());
        assert!(d.check_span(0.5, 1.5).is_ok());
        assert!(d.check_span(1.5, 0.5).is_ok());
    }

    #[test]
    fn reflection_mirrors_bounds_and_singularities() {
        let d = TimeDomain::new(1.0, f64::INFINITY, vec![3.0]).unwrap();
        let r = d.reflect();
        assert_eq!(r.lower(), f64::NEG_INFINITY);
        assert_eq!(r.upper(), -1.0);
        assert_eq!(r.excluded(), &[-3.0]);
    }
}
