//! Observability Gramian from the linearization along a nominal trajectory.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dynamics_jacobian, output_jacobian, ModelParams, STATE_DIM};
use crate::scenarios::Trajectory;

type Mat23 = nalgebra::SMatrix<f64, STATE_DIM, STATE_DIM>;

/// Eigenvalues below this fraction of the largest span the deficient subspace.
pub const DEFICIENT_RTOL: f64 = 1e-10;
const SYMMETRY_RTOL: f64 = 1e-10;

/// One RK4 step of `Φ̇ = F Φ` over sample `k → k + 1`, with `F` interpolated
/// linearly between its values at the two ends of the step.
fn transition_step(traj: &Trajectory, params: &ModelParams, k: usize) -> Mat23 {
    let (u0, u1) = traj.step_inputs(k);
    let f0 = dynamics_jacobian(&traj.states[k], &u0, params);
    let f1 = dynamics_jacobian(&traj.states[k + 1], &u1, params);
    let fm = (f0 + f1) * 0.5;
    let h = traj.times[k + 1] - traj.times[k];
    let k1 = f0;
    let k2 = fm * (Mat23::identity() + k1 * (h / 2.0));
    let k3 = fm * (Mat23::identity() + k2 * (h / 2.0));
    let k4 = f1 * (Mat23::identity() + k3 * h);
    Mat23::identity() + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// `Φ(t_j, t_i)` along the trajectory.
pub fn state_transition(traj: &Trajectory, params: &ModelParams, i: usize, j: usize) -> Result<DMatrix<f64>> {
    if i > j || j >= traj.len() {
        return Err(Error::InvalidRequest(format!(
            "transition needs i <= j < {}, got i = {i}, j = {j}",
            traj.len()
        )));
    }
    let mut phi = Mat23::identity();
    for k in i..j {
        phi = transition_step(traj, params, k) * phi;
    }
    Ok(DMatrix::from_column_slice(STATE_DIM, STATE_DIM, phi.as_slice()))
}

/// Symmetric PSD matrix with its eigendecomposition, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct Gramian {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    pub trajectory_id: String,
}

impl Gramian {
    /// Symmetrizes and decomposes `matrix`; fails if it is not square, not
    /// finite, or violates the symmetry and semidefiniteness tolerances.
    pub fn from_matrix(matrix: DMatrix<f64>, trajectory_id: impl Into<String>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Numerical("Gramian must be a nonempty square matrix".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("Gramian has non-finite entries".into()));
        }
        let scale = matrix.amax();
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > SYMMETRY_RTOL * scale {
            return Err(Error::Numerical(format!("Gramian asymmetry {asym:e} exceeds tolerance")));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::try_new(sym.clone(), f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical("eigendecomposition did not converge".into()))?;
        let n = sym.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        let max = eigenvalues[0];
        let min = eigenvalues[n - 1];
        if min < -DEFICIENT_RTOL * max.abs() {
            return Err(Error::Numerical(format!(
                "Gramian is indefinite: eigenvalue {min:e} against maximum {max:e}"
            )));
        }
        Ok(Gramian { matrix: sym, eigenvalues, eigenvectors, trajectory_id: trajectory_id.into() })
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Eigenvectors (as columns) whose eigenvalue is below `rtol · λ_max`.
    pub fn deficient_subspace(&self, rtol: f64) -> DMatrix<f64> {
        let cutoff = rtol * self.max_eigenvalue();
        let first = self.eigenvalues.iter().position(|&l| l < cutoff).unwrap_or(self.eigenvalues.len());
        let n = self.eigenvectors.nrows();
        self.eigenvectors.columns(first, n - first).into_owned()
    }

    pub fn deficient_dimension(&self) -> usize {
        self.deficient_subspace(DEFICIENT_RTOL).ncols()
    }

    /// `‖G d‖ / (λ_max ‖d‖)`: zero when `d` is invisible to the Gramian.
    pub fn blindness(&self, d: &DVector<f64>) -> f64 {
        (&self.matrix * d).norm() / (self.max_eigenvalue() * d.norm())
    }
}

/// Gramian `Σ Φ(t_i,t₀)ᵀ Hᵢᵀ Hᵢ Φ(t_i,t₀) Δt` over every trajectory sample.
pub fn empirical_gramian(traj: &Trajectory, params: &ModelParams) -> Result<Gramian> {
    if traj.is_empty() {
        return Err(Error::InvalidRequest("empty trajectory".into()));
    }
    let steps: Vec<Mat23> = (0..traj.len() - 1)
        .into_par_iter()
        .map(|k| transition_step(traj, params, k))
        .collect();
    let mut phis = Vec::with_capacity(traj.len());
    let mut phi = Mat23::identity();
    phis.push(phi);
    for step in &steps {
        phi = step * phi;
        phis.push(phi);
    }
    let terms: Vec<Result<DMatrix<f64>>> = phis
        .par_iter()
        .zip(&traj.states)
        .map(|(phi, x)| {
            let h = output_jacobian(x, params)?;
            let phi = DMatrix::from_column_slice(STATE_DIM, STATE_DIM, phi.as_slice());
            let hp = h * phi;
            Ok(hp.transpose() * hp)
        })
        .collect();
    let mut g = DMatrix::zeros(STATE_DIM, STATE_DIM);
    for term in terms {
        g += term? * traj.dt;
    }
    Gramian::from_matrix(g, traj.id.to_string())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    /// Length of the projection of `d` onto the deficient subspace.
    #[default]
    Projection,
    /// `|cos|` of the angle between `d` and the weakest eigenvector.
    SmallestEigenvector,
}

/// How much of `d` lies in the Gramian's blind directions, in `[0, 1]`.
pub fn gramian_alignment(g: &Gramian, d: &DVector<f64>, mode: AlignmentMode) -> f64 {
    let d = d / d.norm();
    let value = match mode {
        AlignmentMode::Projection => (g.deficient_subspace(DEFICIENT_RTOL).transpose() * &d).norm(),
        AlignmentMode::SmallestEigenvector => g.eigenvectors.column(g.eigenvectors.ncols() - 1).dot(&d).abs(),
    };
    value.min(1.0)
}
