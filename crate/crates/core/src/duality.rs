//! Adjoint and dual constructions and their Gramian identities.
//!
//! For an observed pair `(A, C)` the adjoint control system is
//! `x' = -A^T(t) x - C^T(t) u` on the same domain, and the dual control
//! system is `x' = A^T(-t) x + C^T(-t) u` on the mirrored domain. Their
//! controllability Gramians reproduce the observability Gramians of the
//! original:
//!
//! ```text
//! M(t, t+s) = W_a(t, t+s) = K_d(-t-s, -t)
//! N(t, t+s) = K_a(t, t+s) = W_d(-t-s, -t)
//! ```
//!
//! Both constructions flip the roles of input and output, so applying either
//! one twice returns to the original system.

use crate::error::{Error, Result};
use crate::gramian::{
    controllability_gramian, k_matrix, n_matrix, observability_gramian, GramianOptions,
    GramianResult,
};
use crate::matfun::MatrixFunction;
use crate::propagator::{transition, AdjointPlant, DualPlant, TransitionQuery};
use crate::system::LtvSystem;
use nalgebra::DMatrix;

fn flip_roles(
    sys: &LtvSystem,
    transform: impl Fn(&MatrixFunction) -> MatrixFunction,
) -> Result<(MatrixFunction, Option<MatrixFunction>, Option<MatrixFunction>)> {
    if sys.input().is_none() && sys.output().is_none() {
        return Err(Error::MissingOutput {
            system: sys.name().to_string(),
        });
    }
    let plant = transform(sys.plant());
    let new_input = sys.output().map(&transform);
    let new_output = sys.input().map(&transform);
    Ok((plant, new_input, new_output))
}

/// The adjoint system `x' = -A^T(t) x - C^T(t) u` on the same domain.
/// An input matrix, when present, flips to the output role as `-B^T`.
pub fn adjoint_system(sys: &LtvSystem) -> Result<LtvSystem> {
    let (plant, input, output) = flip_roles(sys, |m| m.transpose().neg())?;
    LtvSystem::new(
        format!("{}-adjoint", sys.name()),
        plant,
        input,
        output,
        None,
        sys.domain().clone(),
    )
}

/// The dual system `x' = A^T(-t) x + C^T(-t) u` on the mirrored domain `-J`.
pub fn dual_system(sys: &LtvSystem) -> Result<LtvSystem> {
    let (plant, input, output) = flip_roles(sys, |m| m.transpose().reflect())?;
    LtvSystem::new(
        format!("{}-dual", sys.name()),
        plant,
        input,
        output,
        None,
        sys.domain().reflect(),
    )
}

/// The adjoint of the dual: `(-A(-t), -B(-t), -C(-t))` on `-J`. Roles are
/// flipped twice, so input stays input and output stays output; an observed
/// pair that is nonuniformly observable on `J` yields one with the same
/// property on `-J`.
pub fn reflected_system(sys: &LtvSystem) -> Result<LtvSystem> {
    if sys.input().is_none() && sys.output().is_none() {
        return Err(Error::MissingOutput {
            system: sys.name().to_string(),
        });
    }
    let transform = |m: &MatrixFunction| m.reflect().neg();
    LtvSystem::new(
        format!("{}-reflected", sys.name()),
        transform(sys.plant()),
        sys.input().map(transform),
        sys.output().map(transform),
        None,
        sys.domain().reflect(),
    )
}

/// Outcome of checking the adjoint/dual transition relations on time pairs.
#[derive(Debug, Clone)]
pub struct PsiReport {
    pub pairs_checked: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Verifies on every pair `(t, tau)` that the adjoint transition satisfies
/// `Psi_a(t, tau) = Phi^T(tau, t)` and the dual transition satisfies
/// `Psi_d(-t, -tau) = Phi^T(tau, t)`, each side integrated independently.
pub fn check_psi_relations(
    sys: &LtvSystem,
    pairs: &[(f64, f64)],
    tol: f64,
) -> Result<PsiReport> {
    let plant = sys.plant();
    let domain = sys.domain();
    let adjoint = AdjointPlant(plant);
    let dual = DualPlant(plant);
    let dual_domain = domain.reflect();
    let mut max_deviation = 0.0f64;
    for &(t, tau) in pairs {
        let phi_t = transition(plant, domain, TransitionQuery::new(t, tau))?.transpose();
        let psi_a = transition(&adjoint, domain, TransitionQuery::new(tau, t))?;
        let psi_d = transition(&dual, &dual_domain, TransitionQuery::new(-tau, -t))?;
        let scale = phi_t.norm().max(1.0);
        max_deviation = max_deviation
            .max((&psi_a - &phi_t).norm() / scale)
            .max((&psi_d - &phi_t).norm() / scale);
    }
    Ok(PsiReport {
        pairs_checked: pairs.len(),
        max_deviation,
        tolerance: tol,
        pass: max_deviation <= tol,
    })
}

/// The six Gramians of the duality identities over one window, with labeled
/// pairwise relative deviations.
#[derive(Debug, Clone)]
pub struct DualityReport {
    pub t: f64,
    pub sigma: f64,
    pub m: GramianResult,
    pub n: GramianResult,
    pub w_adjoint: GramianResult,
    pub k_adjoint: GramianResult,
    /// `K_d(-t-sigma, -t)` of the dual system.
    pub k_dual_reflected: GramianResult,
    /// `W_d(-t-sigma, -t)` of the dual system.
    pub w_dual_reflected: GramianResult,
    pub deviations: Vec<(String, f64)>,
    pub tolerance: f64,
    pub pass: bool,
}

impl DualityReport {
    pub fn max_deviation(&self) -> f64 {
        self.deviations.iter().fold(0.0, |acc, (_, d)| acc.max(*d))
    }
}

fn relative_deviation(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let denom = x.norm().max(y.norm());
    if denom <= f64::MIN_POSITIVE {
        0.0
    } else {
        (x - y).norm() / denom
    }
}

/// Computes `M`, `N` on the original pair and the controllability Gramians
/// of the adjoint and dual systems over the corresponding windows, then
/// reports every within-identity deviation.
pub fn verify_gramian_identities(
    sys: &LtvSystem,
    t: f64,
    sigma: f64,
    tol: f64,
    opts: &GramianOptions,
) -> Result<DualityReport> {
    if !(sigma > 0.0) {
        return Err(Error::Precondition("sigma must be positive".into()));
    }
    let adjoint = adjoint_system(sys)?;
    let dual = dual_system(sys)?;

    let m = observability_gramian(sys, t, t + sigma, opts)?;
    let n = n_matrix(sys, t, sigma, opts)?;
    let w_adjoint = controllability_gramian(&adjoint, t, t + sigma, opts)?;
    let k_adjoint = k_matrix(&adjoint, t, sigma, opts)?;
    let w_dual_reflected = controllability_gramian(&dual, -t - sigma, -t, opts)?;
    let k_dual_reflected = k_matrix(&dual, -t - sigma, sigma, opts)?;

    let deviations = vec![
        ("M vs W_a".to_string(), relative_deviation(&m.matrix, &w_adjoint.matrix)),
        (
            "M vs K_d".to_string(),
            relative_deviation(&m.matrix, &k_dual_reflected.matrix),
        ),
        (
            "W_a vs K_d".to_string(),
            relative_deviation(&w_adjoint.matrix, &k_dual_reflected.matrix),
        ),
        ("N vs K_a".to_string(), relative_deviation(&n.matrix, &k_adjoint.matrix)),
        (
            "N vs W_d".to_string(),
            relative_deviation(&n.matrix, &w_dual_reflected.matrix),
        ),
        (
            "K_a vs W_d".to_string(),
            relative_deviation(&k_adjoint.matrix, &w_dual_reflected.matrix),
        ),
    ];
    let pass = deviations.iter().all(|(_, d)| *d <= tol);
    Ok(DualityReport {
        t,
        sigma,
        m,
        n,
        w_adjoint,
        k_adjoint,
        k_dual_reflected,
        w_dual_reflected,
        deviations,
        tolerance: tol,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TimeDomain;
    use crate::expr::ScalarExpr;
    use approx::assert_relative_eq;

    fn mf(grid: &[&[&str]]) -> MatrixFunction {
        let grid: Vec<Vec<String>> = grid
            .iter()
            .map(|row| row.iter().map(|s| s.to_string()).collect())
            .collect();
        MatrixFunction::parse(&grid).unwrap()
    }

    fn scalar_decay_observed() -> LtvSystem {
        LtvSystem::new(
            "scalar-decay",
            MatrixFunction::scalar(ScalarExpr::parse("-1/t").unwrap()),
            None,
            Some(MatrixFunction::scalar(ScalarExpr::parse("1").unwrap())),
            None,
            TimeDomain::from_lower(1.0),
        )
        .unwrap()
    }

    #[test]
    fn adjoint_of_a_control_pair_flips_the_input_to_an_output() {
        let sys = LtvSystem::new(
            "fast-decay",
            mf(&[&["-t"]]),
            Some(mf(&[&["sqrt(2*(t-1))*exp(-t+0.5)"]])),
            None,
            None,
            TimeDomain::from_lower(1.0),
        )
        .unwrap();
        let adj = adjoint_system(&sys).unwrap();
        assert_eq!(adj.eval_plant(2.0).unwrap()[(0, 0)], 2.0);
        let out = adj.require_output().unwrap().eval(2.0).unwrap()[(0, 0)];
        assert_relative_eq!(
            out,
            -(2.0f64).sqrt() * (-1.5f64).exp(),
            max_relative = 1e-14
        );
        assert!(adj.input().is_none());
    }

    #[test]
    fn adjoint_of_symmetric_constant_plant_is_its_negative() {
        let sys = LtvSystem::new(
            "sym",
            mf(&[&["2", "1"], &["1", "3"]]),
            None,
            Some(mf(&[&["1", "0"], &["0", "1"]])),
            None,
            TimeDomain::real_line(),
        )
        .unwrap();
        let adj = adjoint_system(&sys).unwrap();
        let a = sys.eval_plant(0.0).unwrap();
        let a_adj = adj.eval_plant(0.0).unwrap();
        assert_eq!(a_adj, -a);
    }

    #[test]
    fn adjoint_and_dual_are_involutions_on_evaluations() {
        let sys = LtvSystem::new(
            "trig",
            mf(&[&["sin(t)", "0.5*cos(2*t)"], &["-0.3", "cos(t)"]]),
            Some(mf(&[&["1"], &["t"]])),
            Some(mf(&[&["1", "0.2*sin(t)"]])),
            None,
            TimeDomain::real_line(),
        )
        .unwrap();
        let twice_adj = adjoint_system(&adjoint_system(&sys).unwrap()).unwrap();
        let twice_dual = dual_system(&dual_system(&sys).unwrap()).unwrap();
        for i in 0..100 {
            let t = -5.0 + 0.1 * i as f64;
            let a = sys.eval_plant(t).unwrap();
            let b = sys.require_input().unwrap().eval(t).unwrap();
            let c = sys.require_output().unwrap().eval(t).unwrap();
            for other in [&twice_adj, &twice_dual] {
                assert!((other.eval_plant(t).unwrap() - &a).amax() <= 1e-12);
                assert!((other.require_input().unwrap().eval(t).unwrap() - &b).amax() <= 1e-12);
                assert!((other.require_output().unwrap().eval(t).unwrap() - &c).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn dual_of_even_planar_plant_keeps_the_plant() {
        let sys = LtvSystem::new(
            "planar",
            mf(&[&["-(t^2)", "0"], &["0", "t^2"]]),
            None,
            Some(mf(&[&["0", "1"]])),
            None,
            TimeDomain::real_line(),
        )
        .unwrap();
        let dual = dual_system(&sys).unwrap();
        let a = dual.eval_plant(2.0).unwrap();
        assert_eq!(a[(0, 0)], -4.0);
        assert_eq!(a[(1, 1)], 4.0);
        let b = dual.require_input().unwrap().eval(2.0).unwrap();
        assert_eq!((b[(0, 0)], b[(1, 0)]), (0.0, 1.0));
    }

    #[test]
    fn dual_of_constant_system_transposes_the_plant() {
        let sys = LtvSystem::new(
            "const",
            mf(&[&["1", "2"], &["3", "4"]]),
            None,
            Some(mf(&[&["1", "0"]])),
            None,
            TimeDomain::real_line(),
        )
        .unwrap();
        let dual = dual_system(&sys).unwrap();
        let a = dual.eval_plant(0.7).unwrap();
        assert_eq!(a[(0, 1)], 3.0);
        assert_eq!(a[(1, 0)], 2.0);
    }

    #[test]
    fn dual_of_scalar_decay_reflects_the_domain() {
        let sys = scalar_decay_observed();
        let dual = dual_system(&sys).unwrap();
        assert_eq!(dual.domain().upper(), -1.0);
        // A^T(-t) = -1/(-t) = 1/t, negative on the mirrored domain
        assert_relative_eq!(dual.eval_plant(-2.0).unwrap()[(0, 0)], -0.5);
        assert_eq!(dual.require_input().unwrap().eval(-2.0).unwrap()[(0, 0)], 1.0);
        // queries outside -J are rejected
        assert!(dual.eval_plant(2.0).is_err());
        assert!(matches!(
            observability_gramian(&dual, 1.0, 2.0, &GramianOptions::default()),
            Err(_)
        ));
    }

    #[test]
    fn reflected_system_negates_plant_and_output() {
        let sys = scalar_decay_observed();
        let refl = reflected_system(&sys).unwrap();
        assert_eq!(refl.domain().upper(), -1.0);
        // -A(-t) = -1/t, positive on the mirrored domain
        assert_relative_eq!(refl.eval_plant(-2.0).unwrap()[(0, 0)], 0.5);
        assert_eq!(
            refl.require_output().unwrap().eval(-2.0).unwrap()[(0, 0)],
            -1.0
        );
    }

    #[test]
    fn psi_relations_hold_for_the_scalar_decay_benchmark() {
        let sys = scalar_decay_observed();
        let report = check_psi_relations(&sys, &[(2.0, 4.0), (3.0, 3.0), (1.5, 2.5)], 1e-6).unwrap();
        assert!(report.pass, "max deviation {}", report.max_deviation);

        // Psi_a(2, 4) = Phi(4, 2) = 0.5 for the scalar pair
        let adj = AdjointPlant(sys.plant());
        let psi = transition(&adj, sys.domain(), TransitionQuery::new(4.0, 2.0)).unwrap();
        assert_relative_eq!(psi[(0, 0)], 0.5, max_relative = 1e-8);
    }

    #[test]
    fn psi_relations_hold_on_a_random_trig_system() {
        let sys = LtvSystem::new(
            "trig-3",
            mf(&[
                &["0.3*sin(t)", "0.5", "-0.2"],
                &["-0.5", "0.2*cos(t)", "0.4*sin(2*t)"],
                &["0.2", "-0.4", "-0.3"],
            ]),
            None,
            Some(mf(&[&["1", "0", "0"]])),
            None,
            TimeDomain::real_line(),
        )
        .unwrap();
        let mut pairs = Vec::new();
        for i in 0..20 {
            let t = -2.0 + 0.21 * i as f64;
            let tau = 2.0 - 0.17 * i as f64;
            pairs.push((t, tau));
        }
        let report = check_psi_relations(&sys, &pairs, 1e-6).unwrap();
        assert!(report.pass, "max deviation {}", report.max_deviation);
        assert_eq!(report.pairs_checked, 20);
    }

    #[test]
    fn gramian_identities_on_the_scalar_decay_benchmark() {
        let sys = scalar_decay_observed();
        let report =
            verify_gramian_identities(&sys, 1.0, 1.0, 1e-6, &GramianOptions::default()).unwrap();
        assert!(report.pass, "deviations {:?}", report.deviations);
        assert_relative_eq!(report.m.matrix[(0, 0)], 0.5, max_relative = 1e-8);
        assert_relative_eq!(report.w_adjoint.matrix[(0, 0)], 0.5, max_relative = 1e-8);
        assert_relative_eq!(report.k_dual_reflected.matrix[(0, 0)], 0.5, max_relative = 1e-8);
        assert_relative_eq!(report.n.matrix[(0, 0)], 2.0, max_relative = 1e-8);
        assert_relative_eq!(report.k_adjoint.matrix[(0, 0)], 2.0, max_relative = 1e-8);
        assert_relative_eq!(report.w_dual_reflected.matrix[(0, 0)], 2.0, max_relative = 1e-8);
        assert!(report.max_deviation() <= 1e-8);
    }

    #[test]
    fn gramian_identities_with_zero_output_are_all_zero() {
        let sys = LtvSystem::new(
            "dark",
            mf(&[&["0.1*t"]]),
            None,
            Some(mf(&[&["0"]])),
            None,
            TimeDomain::real_line(),
        )
        .unwrap();
        let report =
            verify_gramian_identities(&sys, 0.0, 1.0, 1e-6, &GramianOptions::default()).unwrap();
        assert!(report.pass);
        assert_eq!(report.m.matrix[(0, 0)], 0.0);
        assert_eq!(report.w_dual_reflected.matrix[(0, 0)], 0.0);
    }

    #[test]
    fn gramian_identities_on_a_polynomial_two_state_system() {
        let sys = LtvSystem::new(
            "poly-2",
            mf(&[&["0.2*t", "0.5 - 0.1*t^2"], &["-0.5", "-0.3*t"]]),
            None,
            Some(mf(&[&["1", "0.4"], &["0", "0.7*t"]])),
            None,
            TimeDomain::real_line(),
        )
        .unwrap();
        let report =
            verify_gramian_identities(&sys, 0.3, 0.7, 1e-6, &GramianOptions::default()).unwrap();
        assert!(
            report.pass,
            "deviations {:?}",
            report.deviations
        );
    }
}
