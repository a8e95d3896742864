//! The four Gramian-type matrices W, K, M, N with eigenvalue bounds.
//!
//! ```text
//! W(a, b)        = int_a^b  Phi(a,s) B(s) B^T(s) Phi^T(a,s) ds
//! K(t, t+sigma)  = Phi(t+sigma, t) W(t, t+sigma) Phi^T(t+sigma, t)
//! M(t0, tf)      = int_t0^tf Phi^T(s,t0) C^T(s) C(s) Phi(s,t0) ds
//! N(t, t+sigma)  = Phi^T(t, t+sigma) M(t, t+sigma) Phi(t, t+sigma)
//! ```
//!
//! Integrands are evaluated on composite Gauss-Legendre nodes; the
//! transition factors for all nodes of a refinement level come from a single
//! anchored integration pass, so no per-node integration from scratch and no
//! matrix inversion is ever performed.

use crate::domain::TimeDomain;
use crate::error::{Error, Result};
use crate::matfun::MatrixFunction;
use crate::ode::OdeOptions;
use crate::propagator::{
    propagate_factors, spectral_norm, transition, FactorMode, Plant, TransitionQuery,
};
use crate::quad::adaptive_gl16;
use crate::system::LtvSystem;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GramianKind {
    W,
    K,
    M,
    N,
}

impl std::fmt::Display for GramianKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GramianKind::W => "W",
            GramianKind::K => "K",
            GramianKind::M => "M",
            GramianKind::N => "N",
        };
        f.write_str(s)
    }
}

/// A computed Gramian: symmetrized matrix, extreme eigenvalues and the
/// quadrature error estimate (last panel-doubling difference, Frobenius).
#[derive(Debug, Clone)]
pub struct GramianResult {
    pub kind: GramianKind,
    pub window: (f64, f64),
    pub matrix: DMatrix<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub quad_error: f64,
}

impl GramianResult {
    fn from_raw(kind: GramianKind, window: (f64, f64), raw: DMatrix<f64>, quad_error: f64) -> Self {
        let matrix = (&raw + raw.transpose()) * 0.5;
        let eig = matrix.symmetric_eigenvalues();
        let lambda_min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let lambda_max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        GramianResult {
            kind,
            window,
            matrix,
            lambda_min,
            lambda_max,
            quad_error,
        }
    }

    /// Eigenvalue floor used in verdict logic: small negative values that are
    /// quadrature noise (within `-1e-10 * lambda_max`) count as zero. The raw
    /// value stays in `lambda_min`.
    pub fn lambda_min_clamped(&self) -> f64 {
        if self.lambda_min < 0.0 && self.lambda_min >= -1e-10 * self.lambda_max.abs() {
            0.0
        } else {
            self.lambda_min
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GramianOptions {
    /// Relative tolerance for panel doubling.
    pub quad_rel_tol: f64,
    /// Panel cap (2^10 by default).
    pub max_panels: usize,
    /// Integrator tolerance for the anchored transition passes.
    pub prop_tol: f64,
}

impl Default for GramianOptions {
    fn default() -> Self {
        GramianOptions {
            quad_rel_tol: 1e-9,
            max_panels: 1024,
            prop_tol: 1e-11,
        }
    }
}

impl GramianOptions {
    fn ode(&self) -> OdeOptions {
        OdeOptions::with_tol(self.prop_tol, self.prop_tol * 1e-2)
    }
}

/// Which end of the window the transition factors are anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorSide {
    Lo,
    Hi,
}

fn factors_at_nodes(
    plant: &dyn Plant,
    domain: &TimeDomain,
    nodes: &[f64],
    anchor: f64,
    side: AnchorSide,
    mode: FactorMode,
    ode: &OdeOptions,
) -> Result<Vec<DMatrix<f64>>> {
    match side {
        AnchorSide::Lo => propagate_factors(plant, domain, anchor, nodes, mode, ode),
        AnchorSide::Hi => {
            let descending: Vec<f64> = nodes.iter().rev().cloned().collect();
            let mut factors = propagate_factors(plant, domain, anchor, &descending, mode, ode)?;
            factors.reverse();
            Ok(factors)
        }
    }
}

/// `int_lo^hi Phi^T(s, anchor) C^T(s) C(s) Phi(s, anchor) ds`.
pub fn observability_kernel(
    plant: &dyn Plant,
    domain: &TimeDomain,
    lo: f64,
    hi: f64,
    side: AnchorSide,
    c: &MatrixFunction,
    opts: &GramianOptions,
) -> Result<(DMatrix<f64>, f64)> {
    if c.cols() != plant.dim() {
        return Err(Error::Dimension(format!(
            "output weight has {} columns, plant dimension is {}",
            c.cols(),
            plant.dim()
        )));
    }
    let anchor = match side {
        AnchorSide::Lo => lo,
        AnchorSide::Hi => hi,
    };
    domain.check_span(lo, hi)?;
    let ode = opts.ode();
    adaptive_gl16(
        lo,
        hi,
        |nodes| {
            let factors =
                factors_at_nodes(plant, domain, nodes, anchor, side, FactorMode::FirstArg, &ode)?;
            nodes
                .iter()
                .zip(factors)
                .map(|(&s, x)| {
                    let cs = c.eval(s)?;
                    let cx = &cs * &x;
                    Ok(cx.transpose() * cx)
                })
                .collect()
        },
        opts.quad_rel_tol,
        opts.max_panels,
    )
}

/// `int_lo^hi Phi(anchor, s) B(s) B^T(s) Phi^T(anchor, s) ds`.
pub fn controllability_kernel(
    plant: &dyn Plant,
    domain: &TimeDomain,
    lo: f64,
    hi: f64,
    side: AnchorSide,
    b: &MatrixFunction,
    opts: &GramianOptions,
) -> Result<(DMatrix<f64>, f64)> {
    if b.rows() != plant.dim() {
        return Err(Error::Dimension(format!(
            "input matrix has {} rows, plant dimension is {}",
            b.rows(),
            plant.dim()
        )));
    }
    let anchor = match side {
        AnchorSide::Lo => lo,
        AnchorSide::Hi => hi,
    };
    domain.check_span(lo, hi)?;
    let ode = opts.ode();
    adaptive_gl16(
        lo,
        hi,
        |nodes| {
            let factors = factors_at_nodes(
                plant,
                domain,
                nodes,
                anchor,
                side,
                FactorMode::SecondArg,
                &ode,
            )?;
            nodes
                .iter()
                .zip(factors)
                .map(|(&s, y)| {
                    let bs = b.eval(s)?;
                    let yb = &y * &bs;
                    Ok(&yb * yb.transpose())
                })
                .collect()
        },
        opts.quad_rel_tol,
        opts.max_panels,
    )
}

fn check_window(lo: f64, hi: f64) -> Result<()> {
    if !(lo < hi) {
        return Err(Error::EmptyWindow { lo, hi });
    }
    Ok(())
}

/// Controllability Gramian `W(a, b)`.
pub fn controllability_gramian(
    sys: &LtvSystem,
    a: f64,
    b: f64,
    opts: &GramianOptions,
) -> Result<GramianResult> {
    check_window(a, b)?;
    let input = sys.require_input()?;
    let (raw, err) = controllability_kernel(
        sys.plant(),
        sys.domain(),
        a,
        b,
        AnchorSide::Lo,
        input,
        opts,
    )?;
    Ok(GramianResult::from_raw(GramianKind::W, (a, b), raw, err))
}

/// Observability Gramian `M(t0, tf)`.
pub fn observability_gramian(
    sys: &LtvSystem,
    t0: f64,
    tf: f64,
    opts: &GramianOptions,
) -> Result<GramianResult> {
    check_window(t0, tf)?;
    let output = sys.require_output()?;
    let (raw, err) = observability_kernel(
        sys.plant(),
        sys.domain(),
        t0,
        tf,
        AnchorSide::Lo,
        output,
        opts,
    )?;
    Ok(GramianResult::from_raw(GramianKind::M, (t0, tf), raw, err))
}

/// `K(t, t+sigma)` as the transition congruence of `W(t, t+sigma)`.
pub fn k_matrix(
    sys: &LtvSystem,
    t: f64,
    sigma: f64,
    opts: &GramianOptions,
) -> Result<GramianResult> {
    if !(sigma > 0.0) {
        return Err(Error::Precondition("sigma must be positive".into()));
    }
    let w = controllability_gramian(sys, t, t + sigma, opts)?;
    let phi = transition(
        sys.plant(),
        sys.domain(),
        TransitionQuery {
            from: t,
            to: t + sigma,
            tolerance: opts.prop_tol,
        },
    )?;
    let raw = &phi * &w.matrix * phi.transpose();
    let amp = spectral_norm(&phi);
    Ok(GramianResult::from_raw(
        GramianKind::K,
        (t, t + sigma),
        raw,
        w.quad_error * amp * amp,
    ))
}

/// `K(t, t+sigma)` integrated directly with factors anchored at `t+sigma`;
/// the second route of the dual-path identity check.
pub fn k_matrix_direct(
    sys: &LtvSystem,
    t: f64,
    sigma: f64,
    opts: &GramianOptions,
) -> Result<GramianResult> {
    if !(sigma > 0.0) {
        return Err(Error::Precondition("sigma must be positive".into()));
    }
    let input = sys.require_input()?;
    let (raw, err) = controllability_kernel(
        sys.plant(),
        sys.domain(),
        t,
        t + sigma,
        AnchorSide::Hi,
        input,
        opts,
    )?;
    Ok(GramianResult::from_raw(
        GramianKind::K,
        (t, t + sigma),
        raw,
        err,
    ))
}

/// `N(t, t+sigma)` as the transition congruence of `M(t, t+sigma)`.
pub fn n_matrix(
    sys: &LtvSystem,
    t: f64,
    sigma: f64,
    opts: &GramianOptions,
) -> Result<GramianResult> {
    if !(sigma > 0.0) {
        return Err(Error::Precondition("sigma must be positive".into()));
    }
    let m = observability_gramian(sys, t, t + sigma, opts)?;
    let phi = transition(
        sys.plant(),
        sys.domain(),
        TransitionQuery {
            from: t + sigma,
            to: t,
            tolerance: opts.prop_tol,
        },
    )?;
    let raw = phi.transpose() * &m.matrix * &phi;
    let amp = spectral_norm(&phi);
    Ok(GramianResult::from_raw(
        GramianKind::N,
        (t, t + sigma),
        raw,
        m.quad_error * amp * amp,
    ))
}

/// `N(t, t+sigma)` integrated directly with factors anchored at `t+sigma`.
pub fn n_matrix_direct(
    sys: &LtvSystem,
    t: f64,
    sigma: f64,
    opts: &GramianOptions,
) -> Result<GramianResult> {
    if !(sigma > 0.0) {
        return Err(Error::Precondition("sigma must be positive".into()));
    }
    let output = sys.require_output()?;
    let (raw, err) = observability_kernel(
        sys.plant(),
        sys.domain(),
        t,
        t + sigma,
        AnchorSide::Hi,
        output,
        opts,
    )?;
    Ok(GramianResult::from_raw(
        GramianKind::N,
        (t, t + sigma),
        raw,
        err,
    ))
}

/// Computes the Gramian of the requested kind over `(t, t+sigma)`.
pub fn gramian_by_kind(
    sys: &LtvSystem,
    kind: GramianKind,
    t: f64,
    sigma: f64,
    opts: &GramianOptions,
) -> Result<GramianResult> {
    match kind {
        GramianKind::W => controllability_gramian(sys, t, t + sigma, opts),
        GramianKind::K => k_matrix(sys, t, sigma, opts),
        GramianKind::M => observability_gramian(sys, t, t + sigma, opts),
        GramianKind::N => n_matrix(sys, t, sigma, opts),
    }
}

/// Extreme eigenvalues of a symmetric matrix. The input must be symmetric
/// within `1e-9` (absolute, relative to the largest entry).
pub fn eig_bounds(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    let scale = m.amax().max(1.0);
    let deviation = (m - m.transpose()).amax();
    let tolerance = 1e-9 * scale;
    if deviation > tolerance {
        return Err(Error::Asymmetric {
            deviation,
            tolerance,
        });
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((min, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn scalar_system(
        name: &str,
        a: &str,
        b: Option<&str>,
        c: Option<&str>,
        lower: f64,
    ) -> LtvSystem {
        let parse1 = |s: &str| MatrixFunction::parse(&[vec![s.to_string()]]).unwrap();
        LtvSystem::new(
            name,
            parse1(a),
            b.map(parse1),
            c.map(parse1),
            None,
            TimeDomain::from_lower(lower),
        )
        .unwrap()
    }

    #[test]
    fn zero_input_gives_zero_gramian() {
        let sys = scalar_system("zero-b", "0", Some("0"), None, 0.0);
        let w = controllability_gramian(&sys, 0.0, 2.0, &GramianOptions::default()).unwrap();
        assert_eq!(w.matrix[(0, 0)], 0.0);
        assert_eq!(w.lambda_max, 0.0);
    }

    #[test]
    fn unit_input_integrates_the_window_length() {
        let sys = scalar_system("integrator", "0", Some("1"), None, 0.0);
        let opts = GramianOptions::default();
        let w = controllability_gramian(&sys, 0.0, 3.5, &opts).unwrap();
        assert_relative_eq!(w.matrix[(0, 0)], 3.5, max_relative = 1e-12);
        // K equals W when Phi is the identity
        let k = k_matrix(&sys, 0.0, 3.5, &opts).unwrap();
        assert_relative_eq!(k.matrix[(0, 0)], 3.5, max_relative = 1e-11);
    }

    /// x' = -t x + sqrt(2(t-1)) e^{-t+1/2} u on [1, inf):
    /// W(t, t+sigma) = e^{(t+sigma-1)^2 - t^2} - e^{1 - 2t}.
    #[test]
    fn decaying_input_gramian_matches_brute_force_quadrature() {
        let sys = scalar_system(
            "fast-decay",
            "-t",
            Some("sqrt(2*(t-1))*exp(-t+0.5)"),
            None,
            1.0,
        );
        let w = controllability_gramian(&sys, 1.0, 2.0, &GramianOptions::default()).unwrap();

        // brute-force Simpson rule on the closed-form integrand at 1e5 points
        let integrand = |s: f64| (s - 1.0) * 2.0 * ((s - 1.0) * (s - 1.0) - 1.0f64).exp();
        let n = 100_000usize;
        let h = 1.0 / n as f64;
        let mut acc = integrand(1.0) + integrand(2.0);
        for i in 1..n {
            let s = 1.0 + i as f64 * h;
            acc += integrand(s) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let brute = acc * h / 3.0;

        assert_relative_eq!(w.matrix[(0, 0)], brute, max_relative = 1e-8);
        let exact = (-1.0f64).exp() * (1.0f64.exp() - 1.0);
        assert_relative_eq!(w.matrix[(0, 0)], exact, max_relative = 1e-9);
    }

    #[test]
    fn k_matrix_two_routes_agree() {
        let sys = scalar_system(
            "fast-decay",
            "-t",
            Some("sqrt(2*(t-1))*exp(-t+0.5)"),
            None,
            1.0,
        );
        let opts = GramianOptions::default();
        let via_congruence = k_matrix(&sys, 1.0, 1.0, &opts).unwrap();
        let direct = k_matrix_direct(&sys, 1.0, 1.0, &opts).unwrap();
        assert_relative_eq!(
            via_congruence.matrix[(0, 0)],
            direct.matrix[(0, 0)],
            max_relative = 1e-8
        );
    }

    /// x' = -x/t, y = x on [1, inf): M(t0, tf) = t0 (tf - t0) / tf.
    #[test]
    fn scalar_decay_observability_gramian() {
        let sys = scalar_system("scalar-decay", "-1/t", None, Some("1"), 1.0);
        let opts = GramianOptions::default();
        let m12 = observability_gramian(&sys, 1.0, 2.0, &opts).unwrap();
        assert_relative_eq!(m12.matrix[(0, 0)], 0.5, max_relative = 1e-9);
        let m34 = observability_gramian(&sys, 3.0, 4.0, &opts).unwrap();
        assert_relative_eq!(m34.matrix[(0, 0)], 0.75, max_relative = 1e-9);
        for t in [1.0, 2.0, 5.0, 10.0, 50.0] {
            let m = observability_gramian(&sys, t, t + 1.0, &opts).unwrap();
            assert!((m.matrix[(0, 0)] - t / (t + 1.0)).abs() <= 1e-8);
        }
    }

    /// Same system: N(t, t+sigma) = (t+sigma) sigma / t.
    #[test]
    fn scalar_decay_n_matrix() {
        let sys = scalar_system("scalar-decay", "-1/t", None, Some("1"), 1.0);
        let opts = GramianOptions::default();
        let n12 = n_matrix(&sys, 1.0, 1.0, &opts).unwrap();
        assert_relative_eq!(n12.matrix[(0, 0)], 2.0, max_relative = 1e-9);
        let n23 = n_matrix(&sys, 2.0, 1.0, &opts).unwrap();
        assert_relative_eq!(n23.matrix[(0, 0)], 1.5, max_relative = 1e-9);
        let direct = n_matrix_direct(&sys, 2.0, 1.0, &opts).unwrap();
        assert_relative_eq!(
            n23.matrix[(0, 0)],
            direct.matrix[(0, 0)],
            max_relative = 1e-8
        );
    }

    #[test]
    fn zero_output_gives_zero_gramians() {
        let sys = scalar_system("no-view", "1", None, Some("0"), 0.0);
        let opts = GramianOptions::default();
        let m = observability_gramian(&sys, 0.0, 1.0, &opts).unwrap();
        assert_eq!(m.matrix[(0, 0)], 0.0);
        let n = n_matrix(&sys, 0.0, 1.0, &opts).unwrap();
        assert_eq!(n.matrix[(0, 0)], 0.0);
    }

    #[test]
    fn missing_matrices_are_reported() {
        let sys = scalar_system("plant-only", "0", None, None, 0.0);
        assert!(matches!(
            controllability_gramian(&sys, 0.0, 1.0, &GramianOptions::default()),
            Err(Error::MissingInput { .. })
        ));
        assert!(matches!(
            observability_gramian(&sys, 0.0, 1.0, &GramianOptions::default()),
            Err(Error::MissingOutput { .. })
        ));
    }

    #[test]
    fn eig_bounds_on_small_matrices() {
        assert_eq!(
            eig_bounds(&dmatrix![-4.0, 0.0; 0.0, 4.0]).unwrap(),
            (-4.0, 4.0)
        );
        let (lo, hi) = eig_bounds(&dmatrix![2.0, 1.0; 1.0, 2.0]).unwrap();
        assert_relative_eq!(lo, 1.0, max_relative = 1e-10);
        assert_relative_eq!(hi, 3.0, max_relative = 1e-10);
        assert_eq!(eig_bounds(&DMatrix::identity(3, 3)).unwrap(), (1.0, 1.0));
        assert!(matches!(
            eig_bounds(&dmatrix![0.0, 1.0; 0.0, 0.0]),
            Err(Error::Asymmetric { .. })
        ));
    }

    #[test]
    fn observability_gramian_is_monotone_in_the_right_endpoint() {
        let sys = LtvSystem::new(
            "poly-2",
            MatrixFunction::parse(&[
                vec!["0.2*t".into(), "0.5".into()],
                vec!["-0.5".into(), "-0.1".into()],
            ])
            .unwrap(),
            None,
            Some(MatrixFunction::parse(&[vec!["1".into(), "0.3".into()]]).unwrap()),
            None,
            TimeDomain::real_line(),
        )
        .unwrap();
        let opts = GramianOptions::default();
        let m1 = observability_gramian(&sys, 0.0, 1.0, &opts).unwrap();
        let m2 = observability_gramian(&sys, 0.0, 2.0, &opts).unwrap();
        let diff = &m2.matrix - &m1.matrix;
        let (lo, _) = eig_bounds(&diff).unwrap();
        assert!(lo >= -1e-10, "monotonicity violated: min eig {lo}");
    }

    #[test]
    fn quad_error_estimate_bounds_the_true_error() {
        let sys = scalar_system("scalar-decay", "-1/t", None, Some("1"), 1.0);
        let coarse = GramianOptions {
            quad_rel_tol: 1e-6,
            ..Default::default()
        };
        let tight = GramianOptions {
            quad_rel_tol: 1e-13,
            ..Default::default()
        };
        let g = observability_gramian(&sys, 1.0, 4.0, &coarse).unwrap();
        let g_ref = observability_gramian(&sys, 1.0, 4.0, &tight).unwrap();
        let true_err = (&g.matrix - &g_ref.matrix).norm();
        assert!(
            true_err <= 2.0 * g.quad_error + 1e-12,
            "true {true_err:e} vs estimate {:e}",
            g.quad_error
        );
    }
}
