//! Time-varying matrices whose entries are scalar expressions.

use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use nalgebra::DMatrix;
use std::fmt;

/// A `rows x cols` matrix of [`ScalarExpr`] entries, evaluable at any time.
/// Dimensions are fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFunction {
    rows: usize,
    cols: usize,
    entries: Vec<ScalarExpr>, // row-major
}

impl MatrixFunction {
    pub fn new(rows: usize, cols: usize, entries: Vec<ScalarExpr>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(
                "matrix function must have positive dimensions".into(),
            ));
        }
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                entries.len()
            )));
        }
        Ok(MatrixFunction {
            rows,
            cols,
            entries,
        })
    }

    /// Parses a row-major grid of expression strings.
    pub fn parse(grid: &[Vec<String>]) -> Result<Self> {
        let rows = grid.len();
        if rows == 0 {
            return Err(Error::Dimension("matrix has no rows".into()));
        }
        let cols = grid[0].len();
        let mut entries = Vec::with_capacity(rows * cols);
        for row in grid {
            if row.len() != cols {
                return Err(Error::Dimension("ragged matrix rows".into()));
            }
            for src in row {
                entries.push(ScalarExpr::parse(src)?);
            }
        }
        MatrixFunction::new(rows, cols, entries)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatrixFunction::new(rows, cols, vec![ScalarExpr::constant(0.0); rows * cols]).unwrap()
    }

    pub fn scalar(expr: ScalarExpr) -> Self {
        MatrixFunction::new(1, 1, vec![expr]).unwrap()
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![ScalarExpr::constant(0.0); n * n];
        for i in 0..n {
            entries[i * n + i] = ScalarExpr::constant(1.0);
        }
        MatrixFunction::new(n, n, entries).unwrap()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, r: usize, c: usize) -> &ScalarExpr {
        &self.entries[r * self.cols + c]
    }

    /// Evaluates every entry at time `t`. All entries must be finite.
    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(r, c)] = self.entry(r, c).eval(t)?;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let mut entries = Vec::with_capacity(self.rows * self.cols);
        for c in 0..self.cols {
            for r in 0..self.rows {
                entries.push(self.entry(r, c).clone());
            }
        }
        MatrixFunction::new(self.cols, self.rows, entries).unwrap()
    }

    /// Entrywise substitution `t -> -t`.
    pub fn reflect(&self) -> Self {
        self.map(|e| e.reflect())
    }

    pub fn neg(&self) -> Self {
        self.map(|e| e.neg())
    }

    /// `self + c*I`; the matrix must be square.
    pub fn shift_diagonal(&self, c: f64) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::Dimension(
                "diagonal shift requires a square matrix".into(),
            ));
        }
        let mut out = self.clone();
        let shift = ScalarExpr::constant(c);
        for i in 0..self.rows {
            let e = out.entries[i * self.cols + i].add(&shift);
            out.entries[i * self.cols + i] = e;
        }
        Ok(out)
    }

    fn map(&self, f: impl Fn(&ScalarExpr) -> ScalarExpr) -> Self {
        MatrixFunction {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(f).collect(),
        }
    }

    /// Row-major grid of printed entries (the inverse of [`parse`](Self::parse)).
    pub fn to_grid(&self) -> Vec<Vec<String>> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.entry(r, c).to_string()).collect())
            .collect()
    }
}

impl fmt::Display for MatrixFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            write!(f, "[")?;
            for c in 0..self.cols {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self.entry(r, c))?;
            }
            writeln!(f, "]")?;
        }
        Ok(())
    }
}
