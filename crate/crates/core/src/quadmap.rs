//! The static quadratic map `Q(θ) = y* + ½ (θ − θ*)ᵀ H (θ − θ*)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, EscError, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Whether the optimizer of the map is a maximum or a minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremum {
    Maximum,
    Minimum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticQuadraticMap {
    y_star: f64,
    theta_star: DVector<f64>,
    hessian: DMatrix<f64>,
    kind: Extremum,
}

impl StaticQuadraticMap {
    /// Builds a map, checking symmetry and sign-definiteness of the Hessian.
    pub fn new(y_star: f64, theta_star: DVector<f64>, hessian: DMatrix<f64>) -> Result<Self> {
        let n = theta_star.len();
        if n == 0 {
            return Err(EscError::InvalidInput(
                "map dimension must be at least 1".into(),
            ));
        }
        if !hessian.is_square() {
            return Err(EscError::InvalidInput("hessian must be square".into()));
        }
        check_dim(n, hessian.nrows())?;
        if !y_star.is_finite()
            || theta_star
                .iter()
                .chain(hessian.iter())
                .any(|v| !v.is_finite())
        {
            return Err(EscError::InvalidInput(
                "map parameters must be finite".into(),
            ));
        }
        let asym = (&hessian - hessian.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(EscError::NotSymmetric(asym));
        }
        let eig = SymmetricEigen::new(hessian.clone()).eigenvalues;
        let kind = if eig.iter().all(|&l| l < 0.0) {
            Extremum::Maximum
        } else if eig.iter().all(|&l| l > 0.0) {
            Extremum::Minimum
        } else {
            return Err(EscError::NotDefinite);
        };
        Ok(Self {
            y_star,
            theta_star,
            hessian,
            kind,
        })
    }

    /// Convenience constructor from row-major slices.
    pub fn from_slices(y_star: f64, theta_star: &[f64], hessian_rows: &[f64]) -> Result<Self> {
        let n = theta_star.len();
        check_dim(n * n, hessian_rows.len())?;
        Self::new(
            y_star,
            DVector::from_column_slice(theta_star),
            DMatrix::from_row_slice(n, n, hessian_rows),
        )
    }

    /// The map used in the two-input numerical study: maximum 5 at θ* = [0, 1].
    pub fn two_input_example() -> Self {
        Self::from_slices(5.0, &[0.0, 1.0], &[-2.0, -2.0, -2.0, -4.0])
            .expect("example map is valid")
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn y_star(&self) -> f64 {
        self.y_star
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn extremum(&self) -> Extremum {
        self.kind
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        Ok(self.evaluate_unchecked(theta))
    }

    /// Hot-loop evaluation; the caller guarantees `theta.len() == self.dim()`.
    pub(crate) fn evaluate_unchecked(&self, theta: &[f64]) -> f64 {
        let n = self.dim();
        let mut quad = 0.0;
        for i in 0..n {
            let di = theta[i] - self.theta_star[i];
            let mut row = 0.0;
            for j in 0..n {
                row += self.hessian[(i, j)] * (theta[j] - self.theta_star[j]);
            }
            quad += di * row;
        }
        self.y_star + 0.5 * quad
    }

    /// Analytic gradient `H (θ − θ*)`.
    pub fn true_gradient(&self, theta: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dim(), theta.len())?;
        let offset = DVector::from_column_slice(theta) - &self.theta_star;
        Ok(&self.hessian * offset)
    }
}
