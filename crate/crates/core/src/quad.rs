//! Composite Gauss-Legendre quadrature with panel-doubling refinement.

use crate::error::Result;
use nalgebra::DMatrix;

/// 16-point Gauss-Legendre abscissae on [-1, 1] (positive half).
const GL16_X: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_91,
    0.458_016_777_657_227_39,
    0.617_876_244_402_643_75,
    0.755_404_408_355_003_03,
    0.865_631_202_387_831_74,
    0.944_575_023_073_232_58,
    0.989_400_934_991_649_93,
];

/// Matching weights.
const GL16_W: [f64; 8] = [
    0.189_450_610_455_068_50,
    0.182_603_415_044_923_59,
    0.169_156_519_395_002_54,
    0.149_595_988_816_576_73,
    0.124_628_971_255_533_87,
    0.095_158_511_682_492_78,
    0.062_253_523_938_647_89,
    0.027_152_459_411_754_09,
];

pub const NODES_PER_PANEL: usize = 16;

/// Mapped nodes and weights for `panels` equal panels over `[lo, hi]`,
/// ascending in the node coordinate.
pub fn composite_nodes(lo: f64, hi: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let width = (hi - lo) / panels as f64;
    let half = 0.5 * width;
    let mut nodes = Vec::with_capacity(panels * NODES_PER_PANEL);
    let mut weights = Vec::with_capacity(panels * NODES_PER_PANEL);
    for p in 0..panels {
        let center = lo + (p as f64 + 0.5) * width;
        for i in (0..8).rev() {
            nodes.push(center - half * GL16_X[i]);
            weights.push(half * GL16_W[i]);
        }
        for i in 0..8 {
            nodes.push(center + half * GL16_X[i]);
            weights.push(half * GL16_W[i]);
        }
    }
    (nodes, weights)
}

/// Adaptive composite rule for a matrix-valued integrand over `[lo, hi]`.
///
/// `eval_at_nodes` receives the full ascending node list for the current
/// panel count and returns one matrix per node. Panels double until two
/// successive results differ by less than `rel_tol` relative (Frobenius) or
/// the panel cap is reached. Returns the finest result and the last
/// successive difference as the quadrature error estimate.
pub fn adaptive_gl16<F>(
    lo: f64,
    hi: f64,
    mut eval_at_nodes: F,
    rel_tol: f64,
    max_panels: usize,
) -> Result<(DMatrix<f64>, f64)>
where
    F: FnMut(&[f64]) -> Result<Vec<DMatrix<f64>>>,
{
    assert!(lo < hi, "quadrature window must have positive length");
    let level = |panels: usize, f: &mut F| -> Result<DMatrix<f64>> {
        let (nodes, weights) = composite_nodes(lo, hi, panels);
        let values = f(&nodes)?;
        debug_assert_eq!(values.len(), nodes.len());
        let mut acc = DMatrix::zeros(values[0].nrows(), values[0].ncols());
        for (v, w) in values.iter().zip(weights.iter()) {
            acc += v * *w;
        }
        Ok(acc)
    };

    let mut panels = 1;
    let mut prev = level(panels, &mut eval_at_nodes)?;
    loop {
        panels *= 2;
        let current = level(panels, &mut eval_at_nodes)?;
        let diff = (&current - &prev).norm();
        if diff <= rel_tol * current.norm().max(1.0) || panels >= max_panels {
            return Ok((current, diff));
        }
        prev = current;
    }
}

/// Scalar convenience wrapper, used mostly by test oracles.
pub fn adaptive_gl16_scalar(
    lo: f64,
    hi: f64,
    f: impl Fn(f64) -> f64,
    rel_tol: f64,
    max_panels: usize,
) -> (f64, f64) {
    let (m, err) = adaptive_gl16(
        lo,
        hi,
        |nodes| {
            Ok(nodes
                .iter()
                .map(|&x| DMatrix::from_element(1, 1, f(x)))
                .collect())
        },
        rel_tol,
        max_panels,
    )
    .unwrap();
    (m[(0, 0)], err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_sum_to_the_panel_length() {
        let (_, w) = composite_nodes(-1.0, 1.0, 1);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        let (_, w) = composite_nodes(0.0, 10.0, 4);
        assert_relative_eq!(w.iter().sum::<f64>(), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn single_panel_is_exact_for_degree_31() {
        let (x, w) = composite_nodes(-1.0, 1.0, 1);
        for k in [2usize, 8, 16, 30] {
            let num: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
            let exact = 2.0 / (k as f64 + 1.0);
            assert_relative_eq!(num, exact, max_relative = 1e-13);
        }
        // odd powers vanish
        let num: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(31)).sum();
        assert!(num.abs() < 1e-15);
    }

    #[test]
    fn adaptive_rule_integrates_smooth_functions_to_target() {
        let (v, err) = adaptive_gl16_scalar(0.0, 1.0, |x| x.exp(), 1e-9, 1024);
        assert_relative_eq!(v, 1f64.exp() - 1.0, max_relative = 1e-13);
        assert!(err < 1e-9);
        let (v, _) = adaptive_gl16_scalar(1.0, 2.0, |x| 1.0 / (x * x), 1e-9, 1024);
        assert_relative_eq!(v, 0.5, max_relative = 1e-12);
    }
}
