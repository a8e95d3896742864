//! State-transition matrices of `x' = A(t) x` by adaptive integration.

use crate::domain::TimeDomain;
use crate::error::{Error, Result};
use crate::matfun::MatrixFunction;
use crate::ode::{integrate_with_stops, OdeOptions};
use crate::system::LtvSystem;
use nalgebra::DMatrix;

/// A square time-varying matrix seen by the integrator. Implemented by
/// [`MatrixFunction`] and by combinator wrappers (closed loops, adjoints,
/// time reflections) that are not expressible as entrywise formulas.
pub trait Plant: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64) -> Result<DMatrix<f64>>;
}

impl Plant for MatrixFunction {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        MatrixFunction::eval(self, t)
    }
}

impl Plant for LtvSystem {
    fn dim(&self) -> usize {
        LtvSystem::dim(self)
    }

    fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        self.plant().eval(t)
    }
}

impl<P: Plant + ?Sized> Plant for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        (**self).eval(t)
    }
}

/// Plant backed by a closure, used for test oracles and derived dynamics.
pub struct FnPlant<F: Fn(f64) -> Result<DMatrix<f64>> + Sync> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64) -> Result<DMatrix<f64>> + Sync> FnPlant<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnPlant { dim, f }
    }
}

impl<F: Fn(f64) -> Result<DMatrix<f64>> + Sync> Plant for FnPlant<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        (self.f)(t)
    }
}

/// `-V^T(t)`, the plant of the adjoint linear system.
pub struct AdjointPlant<P: Plant>(pub P);

impl<P: Plant> Plant for AdjointPlant<P> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(-self.0.eval(t)?.transpose())
    }
}

/// `V^T(-t)`, the plant of the dual linear system.
pub struct DualPlant<P: Plant>(pub P);

impl<P: Plant> Plant for DualPlant<P> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.0.eval(-t)?.transpose())
    }
}

/// A transition-matrix request: propagate from `from` to `to`.
#[derive(Debug, Clone, Copy)]
pub struct TransitionQuery {
    pub from: f64,
    pub to: f64,
    /// Relative local error target for the integrator.
    pub tolerance: f64,
}

impl TransitionQuery {
    pub fn new(from: f64, to: f64) -> Self {
        TransitionQuery {
            from,
            to,
            tolerance: 1e-9,
        }
    }

    pub fn options(&self) -> OdeOptions {
        OdeOptions::with_tol(self.tolerance, self.tolerance * 1e-3)
    }
}

/// Which argument of `Phi(a, b)` varies along the integration path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorMode {
    /// `X(s) = Phi(s, anchor)`, solving `X' = A(s) X`, `X(anchor) = I`.
    FirstArg,
    /// `Y(s) = Phi(anchor, s)`, solving `Y' = -Y A(s)`, `Y(anchor) = I`.
    SecondArg,
}

/// Propagates transition factors from `anchor` through every time in `times`
/// (strictly monotone, moving away from the anchor) in one integration pass.
/// Returns one matrix per requested time.
pub fn propagate_factors(
    plant: &dyn Plant,
    domain: &TimeDomain,
    anchor: f64,
    times: &[f64],
    mode: FactorMode,
    opts: &OdeOptions,
) -> Result<Vec<DMatrix<f64>>> {
    let n = plant.dim();
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let last = *times.last().unwrap();
    domain.check_span(anchor, last)?;
    let mut out = Vec::with_capacity(times.len());
    let identity = DMatrix::identity(n, n);
    // leading stops that coincide with the anchor itself
    let mut start = 0;
    while start < times.len() && times[start] == anchor {
        out.push(identity.clone());
        start += 1;
    }
    if start == times.len() {
        return Ok(out);
    }
    let rhs = |t: f64, y: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let a = plant.eval(t)?;
        Ok(match mode {
            FactorMode::FirstArg => &a * y,
            FactorMode::SecondArg => -(y * &a),
        })
    };
    integrate_with_stops(rhs, anchor, identity, &times[start..], opts, |_, y| {
        out.push(y.clone());
        Ok(())
    })?;
    Ok(out)
}

/// The transition matrix `Phi(to, from)` of `x' = A(t) x`.
///
/// `Phi(t, t)` is the identity exactly; no integration is performed.
/// Backward queries integrate with a reversed time variable rather than
/// inverting a forward solution.
pub fn transition(
    plant: &dyn Plant,
    domain: &TimeDomain,
    query: TransitionQuery,
) -> Result<DMatrix<f64>> {
    let TransitionQuery { from, to, .. } = query;
    if !(query.tolerance > 0.0) {
        return Err(Error::Precondition(
            "transition tolerance must be positive".into(),
        ));
    }
    if to == from {
        domain.check(to)?;
        return Ok(DMatrix::identity(plant.dim(), plant.dim()));
    }
    let factors = propagate_factors(
        plant,
        domain,
        from,
        &[to],
        FactorMode::FirstArg,
        &query.options(),
    )?;
    Ok(factors.into_iter().next().unwrap())
}

/// Largest singular value of `Phi(to, from)`.
pub fn transition_norm(
    plant: &dyn Plant,
    domain: &TimeDomain,
    query: TransitionQuery,
) -> Result<f64> {
    Ok(spectral_norm(&transition(plant, domain, query)?))
}

/// Spectral norm via the symmetric eigenproblem of `M^T M`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.len() == 1 {
        return m[(0, 0)].abs();
    }
    let gram = m.transpose() * m;
    let eig = gram.symmetric_eigenvalues();
    eig.iter().fold(0.0f64, |acc, &v| acc.max(v.max(0.0))).sqrt()
}

/// Transition factors between consecutive anchor times, each integrated
/// directly. Composite queries multiply only adjacent legs, so the
/// accumulated error is bounded by hops x per-leg tolerance.
pub struct PropagationCache {
    anchors: Vec<f64>,
    forward: Vec<DMatrix<f64>>,  // forward[i] = Phi(a[i+1], a[i])
    backward: Vec<DMatrix<f64>>, // backward[i] = Phi(a[i], a[i+1])
    dim: usize,
}

impl PropagationCache {
    /// Builds legs for the sorted anchor list.
    pub fn build(
        plant: &dyn Plant,
        domain: &TimeDomain,
        anchors: &[f64],
        tolerance: f64,
    ) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Precondition("anchor list is empty".into()));
        }
        for w in anchors.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Precondition(
                    "anchors must be sorted strictly ascending".into(),
                ));
            }
        }
        domain.check_span(anchors[0], *anchors.last().unwrap())?;
        let mut forward = Vec::with_capacity(anchors.len().saturating_sub(1));
        let mut backward = Vec::with_capacity(forward.capacity());
        for w in anchors.windows(2) {
            forward.push(transition(
                plant,
                domain,
                TransitionQuery {
                    from: w[0],
                    to: w[1],
                    tolerance,
                },
            )?);
            backward.push(transition(
                plant,
                domain,
                TransitionQuery {
                    from: w[1],
                    to: w[0],
                    tolerance,
                },
            )?);
        }
        Ok(PropagationCache {
            anchors: anchors.to_vec(),
            forward,
            backward,
            dim: plant.dim(),
        })
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    /// `Phi(anchors[i], anchors[j])` composed along adjacent legs.
    pub fn query(&self, i: usize, j: usize) -> DMatrix<f64> {
        use std::cmp::Ordering;
        match i.cmp(&j) {
            Ordering::Equal => DMatrix::identity(self.dim, self.dim),
            Ordering::Greater => {
                let mut phi = self.forward[j].clone();
                for leg in &self.forward[j + 1..i] {
                    phi = leg * phi;
                }
                phi
            }
            Ordering::Less => {
                let mut phi = self.backward[i].clone();
                for leg in &self.backward[i + 1..j] {
                    phi *= leg; // Phi(a_i, a_i+1) * Phi(a_i+1, a_i+2) * ...
                }
                phi
            }
        }
    }

    /// `Phi(t_i, t_j)` addressed by anchor values rather than indices.
    pub fn query_times(&self, ti: f64, tj: f64) -> Option<DMatrix<f64>> {
        let find = |t: f64| self.anchors.iter().position(|a| *a == t);
        Some(self.query(find(ti)?, find(tj)?))
    }
}

/// Builds a [`PropagationCache`] over the given anchors.
pub fn transition_grid(
    plant: &dyn Plant,
    domain: &TimeDomain,
    anchors: &[f64],
    tolerance: f64,
) -> Result<PropagationCache> {
    PropagationCache::build(plant, domain, anchors, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ScalarExpr;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn scalar_plant(src: &str) -> MatrixFunction {
        MatrixFunction::scalar(ScalarExpr::parse(src).unwrap())
    }

    /// x' = -x/t on [1, inf): Phi(t, s) = s/t.
    #[test]
    fn scalar_decay_transition_matches_closed_form() {
        let plant = scalar_plant("-1/t");
        let domain = TimeDomain::from_lower(1.0);
        let phi = transition(&plant, &domain, TransitionQuery::new(2.0, 4.0)).unwrap();
        assert_relative_eq!(phi[(0, 0)], 0.5, max_relative = 1e-9);
        let nrm = transition_norm(&plant, &domain, TransitionQuery::new(2.0, 4.0)).unwrap();
        assert_relative_eq!(nrm, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn identity_at_equal_times_without_integration() {
        let plant = scalar_plant("exp(t)"); // would error at t = 1000
        let domain = TimeDomain::real_line();
        let phi = transition(&plant, &domain, TransitionQuery::new(1000.0, 1000.0)).unwrap();
        assert_eq!(phi[(0, 0)], 1.0);
    }

    /// x' = -t sin(t) x: Phi(t,s) = exp(t cos t - s cos s + sin s - sin t).
    #[test]
    fn oscillatory_plant_matches_printed_formula() {
        let plant = scalar_plant("-t*sin(t)");
        let domain = TimeDomain::real_line();
        let phi = transition(&plant, &domain, TransitionQuery::new(0.0, PI)).unwrap();
        assert_relative_eq!(phi[(0, 0)], (-PI).exp(), max_relative = 1e-8);
        assert_relative_eq!(phi[(0, 0)], 0.0432139, max_relative = 1e-5);
    }

    /// Closed loop diag(-t^2, -t^2): Phi(2,1) = e^{-7/3} I.
    #[test]
    fn planar_closed_loop_norm() {
        let plant = MatrixFunction::parse(&[
            vec!["-(t^2)".to_string(), "0".to_string()],
            vec!["0".to_string(), "-(t^2)".to_string()],
        ])
        .unwrap();
        let domain = TimeDomain::real_line();
        let nrm = transition_norm(&plant, &domain, TransitionQuery::new(1.0, 2.0)).unwrap();
        assert_relative_eq!(nrm, (-7.0f64 / 3.0).exp(), max_relative = 1e-8);
        assert_relative_eq!(nrm, 0.09697, max_relative = 1e-4);
    }

    #[test]
    fn excluded_point_in_span_is_rejected() {
        let plant = scalar_plant("1/t");
        let domain = TimeDomain::new(-5.0, 5.0, vec![0.0]).unwrap();
        let err = transition(&plant, &domain, TransitionQuery::new(-1.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::ExcludedInSpan { .. }));
        assert!(transition(&plant, &domain, TransitionQuery::new(1.0, 2.0)).is_ok());
    }

    #[test]
    fn cache_on_constant_zero_plant_is_identity() {
        let plant = MatrixFunction::zeros(2, 2);
        let domain = TimeDomain::real_line();
        let cache = transition_grid(&plant, &domain, &[0.0, 1.0, 2.0], 1e-9).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(
                    (cache.query(i, j) - DMatrix::identity(2, 2)).norm(),
                    0.0,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn cache_composes_adjacent_legs() {
        let plant = scalar_plant("-1/t");
        let domain = TimeDomain::from_lower(1.0);
        let cache = transition_grid(&plant, &domain, &[1.0, 2.0, 4.0], 1e-9).unwrap();
        // Phi(4,1) = Phi(4,2) Phi(2,1) = 0.5 * 0.5
        assert_relative_eq!(cache.query(2, 0)[(0, 0)], 0.25, max_relative = 1e-8);
        assert_relative_eq!(
            cache.query_times(1.0, 4.0).unwrap()[(0, 0)],
            4.0,
            max_relative = 1e-8
        );
    }

    #[test]
    fn cache_agrees_with_direct_integration_on_a_polynomial_system() {
        let plant = MatrixFunction::parse(&[
            vec!["0.1*t".into(), "0.2".into(), "-0.1".into()],
            vec!["-0.2".into(), "0.05*t^2".into(), "0.1*t".into()],
            vec!["0.3".into(), "-0.1*t".into(), "-0.2".into()],
        ])
        .unwrap();
        let domain = TimeDomain::real_line();
        let anchors = [-1.0, 0.0, 0.5, 1.5, 2.0];
        let cache = transition_grid(&plant, &domain, &anchors, 1e-10).unwrap();
        for (i, &ti) in anchors.iter().enumerate() {
            for (j, &tj) in anchors.iter().enumerate() {
                let direct =
                    transition(&plant, &domain, TransitionQuery::new(tj, ti)).unwrap();
                let cached = cache.query(i, j);
                assert!(
                    (&cached - &direct).norm() <= 1e-6 * direct.norm().max(1.0),
                    "cache mismatch at ({ti}, {tj})"
                );
            }
        }
    }

    #[test]
    fn second_argument_factors_are_inverse_transitions() {
        let plant = scalar_plant("-1/t");
        let domain = TimeDomain::from_lower(1.0);
        let ys = propagate_factors(
            &plant,
            &domain,
            2.0,
            &[3.0, 4.0],
            FactorMode::SecondArg,
            &OdeOptions::default(),
        )
        .unwrap();
        // Phi(2, 3) = 3/2, Phi(2, 4) = 2
        assert_relative_eq!(ys[0][(0, 0)], 1.5, max_relative = 1e-9);
        assert_relative_eq!(ys[1][(0, 0)], 2.0, max_relative = 1e-9);
    }

    #[test]
    fn divergence_reports_the_time_reached() {
        let plant = scalar_plant("t^2");
        let domain = TimeDomain::real_line();
        let err = transition(&plant, &domain, TransitionQuery::new(0.0, 50.0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "got {err:?}");
    }
}
