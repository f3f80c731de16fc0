//! Error-state EKF over a simulated trajectory.
//!
//! Attitudes carry right-multiplicative errors, `q = q̂ ⊗ [½δθ, 1]`, so the
//! 23-coordinate state has a 21-coordinate error state:
//! `[δθ_GI, δb_g, δv, δb_a, δp, δθ_IC, δp_IC]`.

use std::ops::Range;

use nalgebra::{DVector, SMatrix, SVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Jet};
use crate::error::{Error, Result};
use crate::model::{self, measure_generic, propagate_rk4_between, CalibState, ModelParams, StateVector};
use crate::scenarios::Trajectory;
use crate::so3::{skew, Quaternion, Vec3};

pub const ERROR_DIM: usize = 21;
pub const E_ATT: Range<usize> = 0..3;
pub const E_BG: Range<usize> = 3..6;
pub const E_V: Range<usize> = 6..9;
pub const E_BA: Range<usize> = 9..12;
pub const E_P: Range<usize> = 12..15;
pub const E_ROT_IC: Range<usize> = 15..18;
pub const E_P_IC: Range<usize> = 18..21;

/// Error-state blocks in column order of the covariance report.
pub const ERROR_BLOCKS: [(&str, Range<usize>); 7] = [
    ("att", E_ATT),
    ("bg", E_BG),
    ("v", E_V),
    ("ba", E_BA),
    ("p", E_P),
    ("extrot", E_ROT_IC),
    ("pic", E_P_IC),
];

pub type ErrorVector = SVector<f64, ERROR_DIM>;
pub type ErrorCovariance = SMatrix<f64, ERROR_DIM, ERROR_DIM>;

const DIVERGENCE_RTOL: f64 = 1e-9;

/// Where the filter evaluates its Jacobians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linearization {
    /// Linearized filter about the simulated trajectory: the estimate is
    /// the nominal state plus a linearly propagated deviation, so the
    /// covariance depends only on the motion and the noise model, never on
    /// estimation errors.
    #[default]
    Nominal,
    /// At the running estimate, as a deployed filter would. Estimation errors
    /// in weakly observable directions then leak spurious information into
    /// unobservable ones.
    Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfConfig {
    /// Per-component std of the bearing measurements.
    pub measurement_noise: f64,
    /// Gyro white-noise density (rad/s/√Hz).
    pub gyro_noise: f64,
    /// Accelerometer white-noise density (m/s²/√Hz).
    pub accel_noise: f64,
    /// Gyro bias random-walk density (rad/s²/√Hz).
    pub gyro_bias_walk: f64,
    /// Accelerometer bias random-walk density (m/s³/√Hz).
    pub accel_bias_walk: f64,
    pub init_std_attitude: f64,
    pub init_std_gyro_bias: f64,
    pub init_std_accel_bias: f64,
    pub init_std_velocity: f64,
    pub init_std_position: f64,
    pub init_std_extrinsic_rotation: f64,
    pub init_std_extrinsic_position: f64,
    pub linearization: Linearization,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        EkfConfig {
            measurement_noise: 1e-3,
            gyro_noise: 1e-4,
            accel_noise: 1e-3,
            gyro_bias_walk: 1e-6,
            accel_bias_walk: 1e-5,
            init_std_attitude: 0.05,
            init_std_gyro_bias: 0.01,
            init_std_accel_bias: 0.01,
            init_std_velocity: 0.1,
            // Equal to the camera-offset prior: an anisotropic prior over
            // (p, p_IC) correlates the unobservable lever-arm stretch with
            // the observed camera position, which shrinks its marginal even
            // though no measurement informs it.
            init_std_position: 0.3,
            init_std_extrinsic_rotation: 0.1,
            init_std_extrinsic_position: 0.3,
            linearization: Linearization::Nominal,
            seed: 0,
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("measurement_noise", self.measurement_noise),
            ("gyro_noise", self.gyro_noise),
            ("accel_noise", self.accel_noise),
            ("gyro_bias_walk", self.gyro_bias_walk),
            ("accel_bias_walk", self.accel_bias_walk),
            ("init_std_attitude", self.init_std_attitude),
            ("init_std_gyro_bias", self.init_std_gyro_bias),
            ("init_std_accel_bias", self.init_std_accel_bias),
            ("init_std_velocity", self.init_std_velocity),
            ("init_std_position", self.init_std_position),
            ("init_std_extrinsic_rotation", self.init_std_extrinsic_rotation),
            ("init_std_extrinsic_position", self.init_std_extrinsic_position),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("ekf.{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn initial_covariance(&self) -> ErrorCovariance {
        let mut p = ErrorCovariance::zeros();
        let stds = [
            (E_ATT, self.init_std_attitude),
            (E_BG, self.init_std_gyro_bias),
            (E_V, self.init_std_velocity),
            (E_BA, self.init_std_accel_bias),
            (E_P, self.init_std_position),
            (E_ROT_IC, self.init_std_extrinsic_rotation),
            (E_P_IC, self.init_std_extrinsic_position),
        ];
        for (range, s) in stds {
            for i in range {
                p[(i, i)] = s * s;
            }
        }
        p
    }
}

/// A 23-coordinate direction tracked through the filter.
#[derive(Clone, Debug, PartialEq)]
pub struct RegisteredDirection {
    pub name: String,
    pub direction: ErrorVector,
}

impl RegisteredDirection {
    /// Maps `d` into the error space at `x`; quaternion blocks become the
    /// matching small-angle errors.
    pub fn from_state_direction(name: impl Into<String>, x: &CalibState, d: &StateVector) -> Self {
        RegisteredDirection { name: name.into(), direction: to_error_space(x, d) }
    }
}

#[derive(Clone, Debug)]
pub struct CovarianceHistory {
    pub times: Vec<f64>,
    pub covariances: Vec<ErrorCovariance>,
    pub directions: Vec<RegisteredDirection>,
    /// `sqrt(dᵀ P d)` per time, one entry per registered direction.
    pub direction_sigmas: Vec<Vec<f64>>,
    /// True state minus estimate, per time.
    pub errors: Vec<ErrorVector>,
}

impl CovarianceHistory {
    pub fn marginal_std(&self, k: usize, i: usize) -> f64 {
        self.covariances[k][(i, i)].sqrt()
    }

    pub fn sigma_along(&self, k: usize, u: &ErrorVector) -> f64 {
        (u.transpose() * self.covariances[k] * u)[0].sqrt()
    }

    /// `1 − σ_end / σ_start` along `u`.
    pub fn shrinkage(&self, u: &ErrorVector) -> f64 {
        let last = self.times.len() - 1;
        1.0 - self.sigma_along(last, u) / self.sigma_along(0, u)
    }
}

fn error_quat(dtheta: &Vec3) -> Quaternion {
    let half = dtheta * 0.5;
    Quaternion::new(half[0], half[1], half[2], 1.0).normalized()
}

/// Add an error-state correction to a nominal state.
pub fn inject(x: &CalibState, e: &ErrorVector) -> CalibState {
    let v = |r: Range<usize>| Vec3::new(e[r.start], e[r.start + 1], e[r.start + 2]);
    CalibState {
        q_gi: x.q_gi.mul(&error_quat(&v(E_ATT))).normalized(),
        b_g: x.b_g + v(E_BG),
        v: x.v + v(E_V),
        b_a: x.b_a + v(E_BA),
        p: x.p + v(E_P),
        q_ic: x.q_ic.mul(&error_quat(&v(E_ROT_IC))).normalized(),
        p_ic: x.p_ic + v(E_P_IC),
    }
}

/// Error-state difference `x ⊟ x̂`, the inverse of [`inject`] to first order.
pub fn state_error(x: &CalibState, xhat: &CalibState) -> ErrorVector {
    let att = |q: &Quaternion, qhat: &Quaternion| qhat.conjugate().mul(q).vector() * 2.0;
    let mut e = ErrorVector::zeros();
    for (range, v) in [
        (E_ATT, att(&x.q_gi, &xhat.q_gi)),
        (E_BG, x.b_g - xhat.b_g),
        (E_V, x.v - xhat.v),
        (E_BA, x.b_a - xhat.b_a),
        (E_P, x.p - xhat.p),
        (E_ROT_IC, att(&x.q_ic, &xhat.q_ic)),
        (E_P_IC, x.p_ic - xhat.p_ic),
    ] {
        e.fixed_rows_mut::<3>(range.start).copy_from(&v);
    }
    e
}

/// Linear map from packed-state perturbations to error-state coordinates.
pub fn to_error_space(x: &CalibState, d: &StateVector) -> ErrorVector {
    let att = |q: &Quaternion, range: Range<usize>| {
        let dq = Quaternion::from_slice(&d.as_slice()[range]);
        q.conjugate().mul(&dq).vector() * 2.0
    };
    let mut e = ErrorVector::zeros();
    e.fixed_rows_mut::<3>(E_ATT.start).copy_from(&att(&x.q_gi, model::Q_GI));
    e.fixed_rows_mut::<3>(E_BG.start).copy_from(&d.fixed_rows::<3>(model::B_G.start));
    e.fixed_rows_mut::<3>(E_V.start).copy_from(&d.fixed_rows::<3>(model::V.start));
    e.fixed_rows_mut::<3>(E_BA.start).copy_from(&d.fixed_rows::<3>(model::B_A.start));
    e.fixed_rows_mut::<3>(E_P.start).copy_from(&d.fixed_rows::<3>(model::P.start));
    e.fixed_rows_mut::<3>(E_ROT_IC.start).copy_from(&att(&x.q_ic, model::Q_IC));
    e.fixed_rows_mut::<3>(E_P_IC.start).copy_from(&d.fixed_rows::<3>(model::P_IC.start));
    e
}

/// Continuous-time error dynamics at the estimate `x` with measured input `u`.
pub fn error_jacobian(x: &CalibState, u: &model::ControlInput) -> ErrorCovariance {
    let omega = u.omega - x.b_g;
    let accel = u.accel - x.b_a;
    let ct = x.q_gi.rotation_matrix().transpose();
    let mut f = ErrorCovariance::zeros();
    f.fixed_view_mut::<3, 3>(E_ATT.start, E_ATT.start).copy_from(&(-skew(&omega)));
    f.fixed_view_mut::<3, 3>(E_ATT.start, E_BG.start).copy_from(&(-nalgebra::Matrix3::identity()));
    f.fixed_view_mut::<3, 3>(E_V.start, E_ATT.start).copy_from(&(-(ct * skew(&accel))));
    f.fixed_view_mut::<3, 3>(E_V.start, E_BA.start).copy_from(&(-ct));
    f.fixed_view_mut::<3, 3>(E_P.start, E_V.start).copy_from(&nalgebra::Matrix3::identity());
    f
}

/// Predicted measurements at `x` and their Jacobian with respect to the
/// error state.
pub fn measurement_model(x: &CalibState, params: &ModelParams) -> Result<(DVector<f64>, nalgebra::DMatrix<f64>)> {
    let base = x.to_array();
    let (value, rows) = autodiff::jacobian(&[0.0; ERROR_DIM], |e: &[Jet<2>]| {
        let mut s: Vec<Jet<2>> = base.iter().map(|&v| Jet::constant(v)).collect();
        perturb_quat(&mut s, model::Q_GI, &e[E_ATT]);
        perturb_quat(&mut s, model::Q_IC, &e[E_ROT_IC]);
        for (state, err) in [
            (model::B_G, E_BG),
            (model::V, E_V),
            (model::B_A, E_BA),
            (model::P, E_P),
            (model::P_IC, E_P_IC),
        ] {
            for (i, j) in state.zip(err) {
                s[i] += e[j];
            }
        }
        let mut out = Vec::new();
        for l in &params.landmarks {
            out.extend(measure_generic(&s, l, params.measurement_mode)?);
        }
        Ok::<_, Error>(out)
    })?;
    let h = nalgebra::DMatrix::from_fn(rows.len(), ERROR_DIM, |i, j| rows[i][j]);
    Ok((DVector::from_vec(value), h))
}

fn perturb_quat(s: &mut [Jet<2>], range: Range<usize>, dtheta: &[Jet<2>]) {
    let q = Quaternion::from_slice(&s[range.clone()]);
    let half = Jet::constant(0.5);
    let dq = Quaternion::new(dtheta[0] * half, dtheta[1] * half, dtheta[2] * half, Jet::constant(1.0));
    s[range].copy_from_slice(&q.mul(&dq).to_array());
}

fn process_noise(cfg: &EkfConfig, dt: f64) -> ErrorCovariance {
    let mut q = ErrorCovariance::zeros();
    for (range, density) in [
        (E_ATT, cfg.gyro_noise),
        (E_BG, cfg.gyro_bias_walk),
        (E_V, cfg.accel_noise),
        (E_BA, cfg.accel_bias_walk),
    ] {
        for i in range {
            q[(i, i)] = density * density * dt;
        }
    }
    q
}

fn check_covariance(p: &ErrorCovariance, time: f64) -> Result<()> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { time, min_eigenvalue: f64::NAN });
    }
    let min = SymmetricEigen::new(*p).eigenvalues.min();
    if min < -DIVERGENCE_RTOL * p.trace() {
        return Err(Error::Divergence { time, min_eigenvalue: min });
    }
    Ok(())
}

/// Run the filter along `traj`, starting from the true initial state with the
/// configured prior, and updating with noisy measurements at every sample
/// after the first.
pub fn run_ekf(
    traj: &Trajectory,
    cfg: &EkfConfig,
    params: &ModelParams,
    directions: &[RegisteredDirection],
) -> Result<CovarianceHistory> {
    cfg.validate()?;
    if traj.is_empty() {
        return Err(Error::InvalidRequest("empty trajectory".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r_var = cfg.measurement_noise * cfg.measurement_noise;

    let mut x = traj.states[0];
    // Deviation from the nominal trajectory; only used when linearizing there.
    let mut delta = ErrorVector::zeros();
    let mut p = cfg.initial_covariance();
    let mut history = CovarianceHistory {
        times: Vec::with_capacity(traj.len()),
        covariances: Vec::with_capacity(traj.len()),
        directions: directions.to_vec(),
        direction_sigmas: Vec::with_capacity(traj.len()),
        errors: Vec::with_capacity(traj.len()),
    };
    let record = |p: &ErrorCovariance, x: &CalibState, k: usize, h: &mut CovarianceHistory| {
        h.times.push(traj.times[k]);
        h.covariances.push(*p);
        h.direction_sigmas.push(
            directions
                .iter()
                .map(|d| (d.direction.transpose() * p * d.direction)[0].sqrt())
                .collect(),
        );
        h.errors.push(state_error(&traj.states[k], x));
    };
    record(&p, &x, 0, &mut history);

    let nominal = cfg.linearization == Linearization::Nominal;
    for k in 1..traj.len() {
        let dt = traj.times[k] - traj.times[k - 1];
        let (u0, u1) = traj.step_inputs(k - 1);
        let f = if nominal { error_jacobian(&traj.states[k - 1], &u0) } else { error_jacobian(&x, &u0) };
        let fdt = f * dt;
        let phi = ErrorCovariance::identity() + fdt + fdt * fdt * 0.5;
        p = phi * p * phi.transpose() + process_noise(cfg, dt);
        if nominal {
            delta = phi * delta;
        } else {
            x = CalibState::unpack(propagate_rk4_between(&x.pack(), &u0, &u1, params, dt).as_slice())?;
            x.q_gi = x.q_gi.normalized();
            x.q_ic = x.q_ic.normalized();
        }

        if !params.landmarks.is_empty() {
            let truth = model::output_stack(&traj.states[k], params)?;
            let (predicted, h) = if nominal {
                let (y, h) = measurement_model(&traj.states[k], params)?;
                let dy = &h * DVector::from_column_slice(delta.as_slice());
                (y + dy, h)
            } else {
                measurement_model(&x, params)?
            };
            let m = predicted.len();
            let z = DVector::from_fn(m, |i, _| {
                let n: f64 = StandardNormal.sample(&mut rng);
                truth[i] + cfg.measurement_noise * n
            });
            let pd = nalgebra::DMatrix::from_column_slice(ERROR_DIM, ERROR_DIM, p.as_slice());
            let s = &h * &pd * h.transpose() + nalgebra::DMatrix::identity(m, m) * r_var;
            let chol = s
                .cholesky()
                .ok_or(Error::Divergence { time: traj.times[k], min_eigenvalue: f64::NAN })?;
            let k_gain = chol.solve(&(&h * &pd)).transpose();
            let correction = ErrorVector::from_column_slice((&k_gain * (z - predicted)).as_slice());
            let ikh = nalgebra::DMatrix::identity(ERROR_DIM, ERROR_DIM) - &k_gain * &h;
            let joseph = &ikh * pd * ikh.transpose() + &k_gain * k_gain.transpose() * r_var;
            p = ErrorCovariance::from_column_slice(joseph.as_slice());
            if nominal {
                delta += correction;
            } else {
                x = inject(&x, &correction);
            }
        }
        if nominal {
            x = inject(&traj.states[k], &delta);
        }
        p = (p + p.transpose()) * 0.5;
        check_covariance(&p, traj.times[k])?;
        record(&p, &x, k, &mut history);
    }
    Ok(history)
}

/// Orthonormal basis of the `(p, p_IC)` error subspace orthogonal to the
/// lever-arm stretch along `axis`: the common shift along the axis, plus
/// the common and differential shifts along two perpendicular axes.
pub fn complement_directions(x0: &CalibState, axis: &Vec3) -> Vec<ErrorVector> {
    let a = axis.normalize();
    let ct = x0.q_gi.rotation_matrix().transpose();
    let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = a.cross(&helper).normalize();
    let e2 = a.cross(&e1);
    let pair = |sign: f64, e: &Vec3| {
        let mut u = ErrorVector::zeros();
        u.fixed_rows_mut::<3>(E_P.start).copy_from(&(ct * e * sign));
        u.fixed_rows_mut::<3>(E_P_IC.start).copy_from(e);
        u / 2f64.sqrt()
    };
    vec![pair(1.0, &a), pair(1.0, &e1), pair(-1.0, &e1), pair(1.0, &e2), pair(-1.0, &e2)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageSummary {
    /// `1 − σ_end/σ_start` per registered direction, in registration order.
    pub directions: Vec<(String, f64)>,
    /// Smallest per-component shrinkage within each error block.
    pub block_min: Vec<(String, f64)>,
    /// Median shrinkage over the complement basis, when one is supplied.
    pub complement_median: Option<f64>,
    pub complement: Vec<f64>,
}

pub fn summarize(history: &CovarianceHistory, complement: &[ErrorVector]) -> ShrinkageSummary {
    let last = history.times.len() - 1;
    let directions = history
        .directions
        .iter()
        .enumerate()
        .map(|(i, d)| {
            (d.name.clone(), 1.0 - history.direction_sigmas[last][i] / history.direction_sigmas[0][i])
        })
        .collect();
    let block_min = ERROR_BLOCKS
        .iter()
        .map(|(name, range)| {
            let worst = range
                .clone()
                .map(|i| 1.0 - history.marginal_std(last, i) / history.marginal_std(0, i))
                .fold(f64::INFINITY, f64::min);
            (name.to_string(), worst)
        })
        .collect();
    let values: Vec<f64> = complement.iter().map(|u| history.shrinkage(u)).collect();
    let complement_median = median(&values);
    ShrinkageSummary { directions, block_min, complement_median, complement: values }
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{propagate_rk4, ControlInput};
    use crate::scenarios::{ambiguity_direction, default_rig, make_scenario, simulate, ScenarioId};
    use crate::so3::axis_angle_to_quat;
    use rand::Rng;

    fn random_state(rng: &mut ChaCha8Rng) -> CalibState {
        let mut v = || Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        CalibState {
            q_gi: axis_angle_to_quat(&v(), 1.1).unwrap(),
            b_g: v() * 0.1,
            v: v(),
            b_a: v() * 0.1,
            p: v(),
            q_ic: axis_angle_to_quat(&v(), 0.4).unwrap(),
            p_ic: v() * 0.2,
        }
    }

    // Oracle: the nonlinear error growth of a short flow from injected errors.
    #[test]
    fn error_jacobian_matches_nonlinear_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let params = ModelParams::default();
        for _ in 0..20 {
            let xhat = random_state(&mut rng);
            let u = ControlInput {
                omega: Vec3::new(0.3, -1.0, 0.7),
                accel: Vec3::new(1.0, 2.0, 9.0),
            };
            let f = error_jacobian(&xhat, &u);
            let dt = 1e-5;
            let flow = |x: &CalibState| {
                let next = propagate_rk4(&x.pack(), &u, &params, dt);
                CalibState::unpack(next.as_slice()).unwrap()
            };
            let eps = 1e-6;
            for j in 0..ERROR_DIM {
                let mut e = ErrorVector::zeros();
                e[j] = eps;
                let plus = state_error(&flow(&inject(&xhat, &e)), &flow(&xhat));
                let minus = state_error(&flow(&inject(&xhat, &-e)), &flow(&xhat));
                let mut rate = (plus - minus) / (2.0 * eps);
                rate[j] -= 1.0;
                let rate = rate / dt;
                // O(dt·|F|²) from the step length, O(1e-16/(eps·dt)) from rounding.
                assert!((rate - f.column(j)).amax() < 2e-3, "column {j}: {}", (rate - f.column(j)).amax());
            }
        }
    }

    fn check_measurement_jacobian(x: &CalibState, params: &ModelParams) {
        let (_, h) = measurement_model(x, params).unwrap();
        let eps = 1e-6;
        for j in 0..ERROR_DIM {
            let mut e = ErrorVector::zeros();
            e[j] = eps;
            let plus = measurement_model(&inject(x, &e), params).unwrap().0;
            let minus = measurement_model(&inject(x, &-e), params).unwrap().0;
            let fd = (plus - minus) / (2.0 * eps);
            let col = h.column(j);
            assert!((fd - col).amax() < 1e-6 * (1.0 + col.amax()));
        }
    }

    #[test]
    fn measurement_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let params = ModelParams::default();
        for _ in 0..10 {
            let mut x = random_state(&mut rng);
            x.p *= 0.2;
            check_measurement_jacobian(&x, &params);
        }
        let ahead = |id, x: f64, y: f64, z: f64| model::Landmark { id, position: Vec3::new(x, y, z) };
        let pinhole = ModelParams {
            landmarks: vec![ahead(0, 0.3, 0.2, 2.0), ahead(1, -0.5, 0.1, 1.5), ahead(2, 0.2, -0.4, 3.0)],
            measurement_mode: model::MeasurementMode::Pinhole,
            ..ModelParams::default()
        };
        for _ in 0..10 {
            let mut x = random_state(&mut rng);
            x.q_gi = axis_angle_to_quat(&x.b_g, 0.05).unwrap();
            x.q_ic = axis_angle_to_quat(&x.b_a, 0.05).unwrap();
            x.p *= 0.1;
            x.p_ic *= 0.5;
            check_measurement_jacobian(&x, &pinhole);
        }
    }

    #[test]
    fn error_space_mapping() {
        let rig = default_rig();
        let amb = ambiguity_direction(&rig, &rig.p_ic.normalize()).unwrap();
        let e = to_error_space(&rig, &amb.d);
        assert!((e.norm() - 1.0).abs() < 1e-15);
        assert_eq!(e.fixed_rows::<3>(E_P_IC.start), amb.d.fixed_rows::<3>(model::P_IC.start));
        assert_eq!(e.fixed_rows::<3>(E_ATT.start), Vec3::zeros());
    }

    #[test]
    fn complement_basis_is_orthonormal_and_excludes_d() {
        let mut x = default_rig();
        x.q_gi = axis_angle_to_quat(&Vec3::new(1.0, -2.0, 0.5), 0.8).unwrap();
        let axis = x.p_ic.normalize();
        let d = to_error_space(&x, &ambiguity_direction(&x, &axis).unwrap().d);
        let mut basis = complement_directions(&x, &axis);
        basis.push(d);
        for (i, a) in basis.iter().enumerate() {
            for (j, b) in basis.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((a.dot(b) - expected).abs() < 1e-14);
            }
        }
    }

    fn trajectory(id: ScenarioId, samples: usize) -> Trajectory {
        simulate(&make_scenario(id, default_rig(), ModelParams::default()).unwrap())
            .unwrap()
            .truncated(samples)
    }

    #[test]
    fn propagation_alone_never_shrinks_trace() {
        let params = ModelParams { landmarks: vec![], ..ModelParams::default() };
        for id in ScenarioId::BUILT_IN {
            let traj = trajectory(id, 801);
            let hist = run_ekf(&traj, &EkfConfig::default(), &params, &[]).unwrap();
            for w in hist.covariances.windows(2) {
                assert!(w[1].trace() >= w[0].trace());
            }
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let traj = trajectory(ScenarioId::S2, 200);
        let params = ModelParams::default();
        let cfg = EkfConfig { seed: 9, ..EkfConfig::default() };
        let a = run_ekf(&traj, &cfg, &params, &[]).unwrap();
        let b = run_ekf(&traj, &cfg, &params, &[]).unwrap();
        assert_eq!(a.covariances, b.covariances);
    }

    #[test]
    fn covariance_stays_symmetric_psd() {
        let traj = trajectory(ScenarioId::S4, 400);
        let hist = run_ekf(&traj, &EkfConfig::default(), &ModelParams::default(), &[]).unwrap();
        for p in &hist.covariances {
            assert_eq!(*p, p.transpose());
            assert!(SymmetricEigen::new(*p).eigenvalues.min() >= -1e-9 * p.trace());
        }
    }

    fn s3_registered() -> (Trajectory, RegisteredDirection) {
        let traj = trajectory(ScenarioId::S3, usize::MAX);
        let x0 = traj.states[0];
        let d = ambiguity_direction(&x0, &x0.p_ic.normalize()).unwrap().d;
        (traj, RegisteredDirection::from_state_direction("d", &x0, &d))
    }

    #[test]
    fn noisier_measurements_never_add_information() {
        let (traj, d) = s3_registered();
        let traj = traj.truncated(401);
        let params = ModelParams::default();
        let base = EkfConfig::default();
        let noisy = EkfConfig { measurement_noise: 10.0 * base.measurement_noise, ..base.clone() };
        let a = run_ekf(&traj, &base, &params, std::slice::from_ref(&d)).unwrap();
        let b = run_ekf(&traj, &noisy, &params, std::slice::from_ref(&d)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let probes: Vec<ErrorVector> =
            (0..10).map(|_| ErrorVector::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        for k in 0..a.times.len() {
            assert!(b.direction_sigmas[k][0] >= a.direction_sigmas[k][0] * (1.0 - 1e-12));
            for i in 0..ERROR_DIM {
                assert!(b.marginal_std(k, i) >= a.marginal_std(k, i) * (1.0 - 1e-12), "k {k} i {i}");
            }
            for u in &probes {
                assert!(b.sigma_along(k, u) >= a.sigma_along(k, u) * (1.0 - 1e-12));
            }
        }
    }

    fn mean_nees(h: &CovarianceHistory) -> f64 {
        let total: f64 = h
            .errors
            .iter()
            .zip(&h.covariances)
            .map(|(e, p)| (e.transpose() * p.try_inverse().unwrap() * e)[0])
            .sum();
        total / h.times.len() as f64
    }

    // Errors in directions the filter cannot see stay at their initial value
    // (zero), so the mean NEES sits below the error dimension.
    #[test]
    fn nominal_linearization_is_consistent() {
        let (traj, d) = s3_registered();
        let h = run_ekf(&traj, &EkfConfig::default(), &ModelParams::default(), std::slice::from_ref(&d)).unwrap();
        assert!(mean_nees(&h) < ERROR_DIM as f64, "{}", mean_nees(&h));
        let last = h.times.len() - 1;
        let u = d.direction / d.direction.norm();
        assert!(h.errors[last].dot(&u).abs() < 3.0 * h.direction_sigmas[last][0]);
        assert!(h.shrinkage(&u).abs() < 1e-3);
    }

    #[test]
    fn estimate_linearization_overstates_information() {
        let (traj, d) = s3_registered();
        let cfg = EkfConfig { linearization: Linearization::Estimate, ..EkfConfig::default() };
        let h = run_ekf(&traj, &cfg, &ModelParams::default(), std::slice::from_ref(&d)).unwrap();
        let last = h.times.len() - 1;
        let u = d.direction / d.direction.norm();
        assert!(h.shrinkage(&u) > 0.5);
        assert!(h.errors[last].dot(&u).abs() > 2.0 * h.direction_sigmas[last][0]);
        assert!(mean_nees(&h) > ERROR_DIM as f64);
    }

    #[test]
    fn rejects_nonpositive_config() {
        let cfg = EkfConfig { measurement_noise: 0.0, ..EkfConfig::default() };
        let traj = trajectory(ScenarioId::S1, 3);
        assert!(matches!(
            run_ekf(&traj, &cfg, &ModelParams::default(), &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
