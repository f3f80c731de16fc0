//! The IMU-camera calibration system in control-affine form.
//!
//! State (23 coordinates, packed in this block order):
//!
//! | block  | range   | meaning                                   |
//! |--------|---------|-------------------------------------------|
//! | `q_GI` | 0..4    | IMU attitude, global → IMU                |
//! | `b_g`  | 4..7    | gyro bias (rad/s)                         |
//! | `v`    | 7..10   | IMU velocity in the global frame (m/s)    |
//! | `b_a`  | 10..13  | accelerometer bias (m/s²)                 |
//! | `p`    | 13..16  | IMU position in the global frame (m)      |
//! | `q_IC` | 16..20  | extrinsic rotation, IMU → camera          |
//! | `p_IC` | 20..23  | camera position in the IMU frame (m)      |
//!
//! Dynamics are `ẋ = f₀(x) + Σ ω_i f_{ω,i}(x) + Σ a_i f_{a,i}(x)` with the
//! six inputs being the gyro and accelerometer readings. Quaternions stay
//! 4-vectors; their unit-norm constraints are exposed as two extra outputs
//! rather than eliminated.

use std::ops::Range;

use nalgebra::{DVector, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Scalar};
use crate::error::{Error, Result};
use crate::lie::ControlAffineSystem;
use crate::so3::{Quaternion, Vec3};

pub const STATE_DIM: usize = 23;
pub const INPUT_DIM: usize = 6;

pub const Q_GI: Range<usize> = 0..4;
pub const B_G: Range<usize> = 4..7;
pub const V: Range<usize> = 7..10;
pub const B_A: Range<usize> = 10..13;
pub const P: Range<usize> = 13..16;
pub const Q_IC: Range<usize> = 16..20;
pub const P_IC: Range<usize> = 20..23;

/// Block names in packed order, paired with their ranges.
pub const BLOCKS: [(&str, Range<usize>); 7] = [
    ("q_GI", Q_GI),
    ("b_g", B_G),
    ("v", V),
    ("b_a", B_A),
    ("p", P),
    ("q_IC", Q_IC),
    ("p_IC", P_IC),
];

pub type StateVector = SVector<f64, STATE_DIM>;

/// Ray length below which a bearing is undefined.
pub const MIN_RAY_LENGTH: f64 = 1e-9;
/// Minimum optical-axis depth for the pinhole projection.
pub const MIN_PINHOLE_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibState {
    pub q_gi: Quaternion,
    pub b_g: Vec3,
    pub v: Vec3,
    pub b_a: Vec3,
    pub p: Vec3,
    pub q_ic: Quaternion,
    pub p_ic: Vec3,
}

impl CalibState {
    pub fn pack(&self) -> StateVector {
        let mut out = StateVector::zeros();
        out.as_mut_slice().copy_from_slice(&self.to_array());
        out
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let mut a = [0.0; STATE_DIM];
        a[Q_GI].copy_from_slice(&self.q_gi.to_array());
        a[B_G].copy_from_slice(self.b_g.as_slice());
        a[V].copy_from_slice(self.v.as_slice());
        a[B_A].copy_from_slice(self.b_a.as_slice());
        a[P].copy_from_slice(self.p.as_slice());
        a[Q_IC].copy_from_slice(&self.q_ic.to_array());
        a[P_IC].copy_from_slice(self.p_ic.as_slice());
        a
    }

    pub fn unpack(v: &[f64]) -> Result<Self> {
        if v.len() != STATE_DIM {
            return Err(Error::Dimension { expected: STATE_DIM, actual: v.len() });
        }
        Ok(CalibState {
            q_gi: Quaternion::from_slice(&v[Q_GI]),
            b_g: Vec3::from_column_slice(&v[B_G]),
            v: Vec3::from_column_slice(&v[V]),
            b_a: Vec3::from_column_slice(&v[B_A]),
            p: Vec3::from_column_slice(&v[P]),
            q_ic: Quaternion::from_slice(&v[Q_IC]),
            p_ic: Vec3::from_column_slice(&v[P_IC]),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Measured angular velocity (rad/s, IMU frame).
    pub omega: Vec3,
    /// Measured specific force (m/s², IMU frame).
    pub accel: Vec3,
}

impl ControlInput {
    pub fn to_array(&self) -> [f64; INPUT_DIM] {
        [
            self.omega[0],
            self.omega[1],
            self.omega[2],
            self.accel[0],
            self.accel[1],
            self.accel[2],
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u32,
    pub position: Vec3,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementMode {
    #[default]
    Bearing,
    Pinhole,
}

impl MeasurementMode {
    pub fn components(&self) -> usize {
        match self {
            MeasurementMode::Bearing => 3,
            MeasurementMode::Pinhole => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub gravity: Vec3,
    pub landmarks: Vec<Landmark>,
    pub measurement_mode: MeasurementMode,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            gravity: Vec3::new(0.0, 0.0, -9.81),
            landmarks: default_landmarks(),
            measurement_mode: MeasurementMode::Bearing,
        }
    }
}

impl ModelParams {
    pub fn output_dim(&self) -> usize {
        self.landmarks.len() * self.measurement_mode.components() + 2
    }

    /// Labels for every entry of [`output_stack`], in order.
    pub fn output_labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.output_dim());
        for l in &self.landmarks {
            match self.measurement_mode {
                MeasurementMode::Bearing => {
                    for axis in ["x", "y", "z"] {
                        labels.push(format!("bearing[{}].{axis}", l.id));
                    }
                }
                MeasurementMode::Pinhole => {
                    for axis in ["u", "v"] {
                        labels.push(format!("pixel[{}].{axis}", l.id));
                    }
                }
            }
        }
        labels.push("norm(q_GI)".to_string());
        labels.push("norm(q_IC)".to_string());
        labels
    }
}

/// Six non-coplanar landmarks at 2 m around the origin, in irregular
/// directions so no two are symmetric about a coordinate axis.
pub fn default_landmarks() -> Vec<Landmark> {
    const DIRECTIONS: [[f64; 3]; 6] = [
        [1.0, 0.2, 0.1],
        [-0.3, 1.0, 0.2],
        [0.1, -0.4, 1.0],
        [-1.0, -0.1, 0.3],
        [0.2, -1.0, -0.3],
        [-0.2, 0.3, -1.0],
    ];
    DIRECTIONS
        .iter()
        .enumerate()
        .map(|(i, d)| Landmark {
            id: i as u32,
            position: Vec3::from_row_slice(d).normalize() * 2.0,
        })
        .collect()
}

fn quat_at<S: Scalar>(x: &[S], range: Range<usize>) -> Quaternion<S> {
    Quaternion::from_slice(&x[range])
}

fn vec_at<S: Scalar>(x: &[S], range: Range<usize>) -> Vector3<S> {
    Vector3::new(x[range.start], x[range.start + 1], x[range.start + 2])
}

fn lift<S: Scalar>(v: &Vec3) -> Vector3<S> {
    Vector3::new(S::from_f64(v[0]), S::from_f64(v[1]), S::from_f64(v[2]))
}

fn put_quat<S: Scalar>(out: &mut [S], range: Range<usize>, q: &Quaternion<S>) {
    out[range].copy_from_slice(&q.to_array());
}

fn put_vec<S: Scalar>(out: &mut [S], range: Range<usize>, v: &Vector3<S>) {
    out[range].copy_from_slice(v.as_slice());
}

/// `f₀` on a raw packed vector.
pub fn drift_generic<S: Scalar>(x: &[S], gravity: &Vec3) -> Vec<S> {
    let mut out = vec![S::zero(); STATE_DIM];
    let q = quat_at(x, Q_GI);
    let b_g = vec_at(x, B_G);
    let b_a = vec_at(x, B_A);
    put_quat(&mut out, Q_GI, &q.rate(&(-b_g)));
    let c_t = q.rotation_matrix().transpose();
    put_vec(&mut out, V, &(-(c_t * b_a) + lift(gravity)));
    put_vec(&mut out, P, &vec_at(x, V));
    out
}

/// Input field `index` in `0..6`: gyro axes first, then accelerometer axes.
pub fn input_field_generic<S: Scalar>(x: &[S], index: usize) -> Vec<S> {
    let mut out = vec![S::zero(); STATE_DIM];
    let q = quat_at(x, Q_GI);
    let mut e = Vector3::zeros();
    e[index % 3] = S::one();
    if index < 3 {
        put_quat(&mut out, Q_GI, &q.rate(&e));
    } else {
        put_vec(&mut out, V, &(q.rotation_matrix().transpose() * e));
    }
    out
}

/// Full dynamics written directly, without the affine decomposition.
pub fn dynamics_generic<S: Scalar>(x: &[S], u: &[f64; INPUT_DIM], gravity: &Vec3) -> Vec<S> {
    let mut out = vec![S::zero(); STATE_DIM];
    let q = quat_at(x, Q_GI);
    let omega = Vector3::new(S::from_f64(u[0]), S::from_f64(u[1]), S::from_f64(u[2]));
    let accel = Vector3::new(S::from_f64(u[3]), S::from_f64(u[4]), S::from_f64(u[5]));
    put_quat(&mut out, Q_GI, &q.rate(&(omega - vec_at(x, B_G))));
    let c_t = q.rotation_matrix().transpose();
    put_vec(&mut out, V, &(c_t * (accel - vec_at(x, B_A)) + lift(gravity)));
    put_vec(&mut out, P, &vec_at(x, V));
    out
}

/// `ρ = C(q_IC)(C(q_GI)(L - p) - p_IC)`, the landmark ray in the camera frame.
pub fn camera_ray_generic<S: Scalar>(x: &[S], landmark: &Vec3) -> Vector3<S> {
    let c_gi = quat_at(x, Q_GI).rotation_matrix();
    let c_ic = quat_at(x, Q_IC).rotation_matrix();
    c_ic * (c_gi * (lift::<S>(landmark) - vec_at(x, P)) - vec_at(x, P_IC))
}

pub fn constraint_generic<S: Scalar>(x: &[S]) -> [S; 2] {
    [
        quat_at(x, Q_GI).norm_squared() - S::one(),
        quat_at(x, Q_IC).norm_squared() - S::one(),
    ]
}

/// Measurement of one landmark in the configured mode.
pub fn measure_generic<S: Scalar>(x: &[S], landmark: &Landmark, mode: MeasurementMode) -> Result<Vec<S>> {
    let rho = camera_ray_generic(x, &landmark.position);
    match mode {
        MeasurementMode::Bearing => {
            let len = (rho[0] * rho[0] + rho[1] * rho[1] + rho[2] * rho[2]).sqrt();
            if !(len.value() >= MIN_RAY_LENGTH) {
                return Err(Error::DegenerateGeometry { id: landmark.id, length: len.value() });
            }
            Ok(vec![rho[0] / len, rho[1] / len, rho[2] / len])
        }
        MeasurementMode::Pinhole => {
            if !(rho[2].value() > MIN_PINHOLE_DEPTH) {
                return Err(Error::BehindCamera { id: landmark.id, depth: rho[2].value() });
            }
            Ok(vec![rho[0] / rho[2], rho[1] / rho[2]])
        }
    }
}

/// All landmark measurements followed by the two norm constraints.
pub fn outputs_generic<S: Scalar>(x: &[S], params: &ModelParams) -> Result<Vec<S>> {
    let mut out = Vec::with_capacity(params.output_dim());
    for l in &params.landmarks {
        out.extend(measure_generic(x, l, params.measurement_mode)?);
    }
    out.extend(constraint_generic(x));
    Ok(out)
}

fn to_state(v: Vec<f64>) -> StateVector {
    StateVector::from_vec(v)
}

pub fn drift_field(x: &CalibState, params: &ModelParams) -> StateVector {
    to_state(drift_generic(&x.to_array(), &params.gravity))
}

pub fn input_fields(x: &CalibState) -> [StateVector; INPUT_DIM] {
    let a = x.to_array();
    std::array::from_fn(|i| to_state(input_field_generic(&a, i)))
}

pub fn dynamics(x: &CalibState, u: &ControlInput, params: &ModelParams) -> StateVector {
    to_state(dynamics_generic(&x.to_array(), &u.to_array(), &params.gravity))
}

/// `ᴳp_C = p + C(q_GI)ᵀ p_IC`.
pub fn camera_position(x: &CalibState) -> Vec3 {
    x.p + x.q_gi.rotation_matrix().transpose() * x.p_ic
}

pub fn measure_bearing(x: &CalibState, landmark: &Landmark) -> Result<Vec3> {
    let m = measure_generic(&x.to_array(), landmark, MeasurementMode::Bearing)?;
    Ok(Vec3::from_vec(m))
}

pub fn constraint_outputs(x: &CalibState) -> Vector2<f64> {
    let [a, b] = constraint_generic(&x.to_array());
    Vector2::new(a, b)
}

pub fn output_stack(x: &CalibState, params: &ModelParams) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(outputs_generic(&x.to_array(), params)?))
}

/// Jacobian of [`dynamics`] with respect to the packed state.
pub fn dynamics_jacobian(x: &CalibState, u: &ControlInput, params: &ModelParams) -> nalgebra::SMatrix<f64, STATE_DIM, STATE_DIM> {
    let uu = u.to_array();
    let (_, rows) = autodiff::jacobian::<_, std::convert::Infallible>(&x.to_array(), |p| {
        Ok(dynamics_generic(p, &uu, &params.gravity))
    })
    .expect("infallible");
    nalgebra::SMatrix::from_fn(|i, j| rows[i][j])
}

/// Jacobian of [`output_stack`] with respect to the packed state.
pub fn output_jacobian(x: &CalibState, params: &ModelParams) -> Result<nalgebra::DMatrix<f64>> {
    let (_, rows) = autodiff::jacobian(&x.to_array(), |p| outputs_generic(p, params))?;
    Ok(nalgebra::DMatrix::from_fn(rows.len(), STATE_DIM, |i, j| rows[i][j]))
}

/// One RK4 step of the full dynamics with the input held constant.
pub fn propagate_rk4(x: &StateVector, u: &ControlInput, params: &ModelParams, dt: f64) -> StateVector {
    propagate_rk4_between(x, u, u, params, dt)
}

/// One RK4 step with the input interpolated linearly from `u0` to `u1`.
pub fn propagate_rk4_between(
    x: &StateVector,
    u0: &ControlInput,
    u1: &ControlInput,
    params: &ModelParams,
    dt: f64,
) -> StateVector {
    let (a, b) = (u0.to_array(), u1.to_array());
    let mid: [f64; INPUT_DIM] = std::array::from_fn(|i| 0.5 * (a[i] + b[i]));
    let f = |s: &StateVector, u: &[f64; INPUT_DIM]| to_state(dynamics_generic(s.as_slice(), u, &params.gravity));
    let k1 = f(x, &a);
    let k2 = f(&(x + k1 * (dt / 2.0)), &mid);
    let k3 = f(&(x + k2 * (dt / 2.0)), &mid);
    let k4 = f(&(x + k3 * dt), &b);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// The calibration model viewed as a generic control-affine system.
#[derive(Clone, Debug)]
pub struct CalibSystem {
    pub params: ModelParams,
}

impl CalibSystem {
    pub fn new(params: ModelParams) -> Self {
        CalibSystem { params }
    }
}

impl ControlAffineSystem for CalibSystem {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn input_count(&self) -> usize {
        INPUT_DIM
    }

    fn output_dim(&self) -> usize {
        self.params.output_dim()
    }

    fn field<S: Scalar>(&self, index: usize, x: &[S]) -> Vec<S> {
        match index {
            0 => drift_generic(x, &self.params.gravity),
            i => input_field_generic(x, i - 1),
        }
    }

    fn output<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        outputs_generic(x, &self.params)
    }

    fn field_name(&self, index: usize) -> String {
        match index {
            0 => "f0".to_string(),
            1..=3 => format!("f_w{index}"),
            i => format!("f_a{}", i - 3),
        }
    }

    fn output_name(&self, index: usize) -> String {
        self.params.output_labels()[index].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::axis_angle_to_quat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    pub(crate) fn random_state(rng: &mut ChaCha8Rng) -> CalibState {
        let q = |rng: &mut ChaCha8Rng| {
            axis_angle_to_quat(&rand_vec(rng, 1.0), rng.random_range(-3.0..3.0)).unwrap()
        };
        CalibState {
            q_gi: q(rng),
            b_g: rand_vec(rng, 0.1),
            v: rand_vec(rng, 1.0),
            b_a: rand_vec(rng, 0.2),
            p: rand_vec(rng, 0.3),
            q_ic: q(rng),
            p_ic: rand_vec(rng, 0.2),
        }
    }

    fn zero_state() -> CalibState {
        CalibState {
            q_gi: Quaternion::identity(),
            b_g: Vec3::zeros(),
            v: Vec3::zeros(),
            b_a: Vec3::zeros(),
            p: Vec3::zeros(),
            q_ic: Quaternion::identity(),
            p_ic: Vec3::zeros(),
        }
    }

    #[test]
    fn pack_round_trip_and_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x = random_state(&mut rng);
            assert_eq!(CalibState::unpack(x.pack().as_slice()).unwrap(), x);
        }
        let z = zero_state().pack();
        assert_eq!(z.iter().filter(|v| **v != 0.0).count(), 2);
        assert_eq!(z[3], 1.0);
        assert_eq!(z[19], 1.0);
        assert_eq!(P_IC.start, 20);
        assert!(matches!(CalibState::unpack(&[0.0; 22]), Err(Error::Dimension { expected: 23, actual: 22 })));
    }

    #[test]
    fn drift_of_rest_state() {
        let params = ModelParams { gravity: Vec3::zeros(), ..Default::default() };
        assert_eq!(drift_field(&zero_state(), &params), StateVector::zeros());

        let params = ModelParams::default();
        let mut x = zero_state();
        x.v = Vec3::new(0.5, -1.0, 2.0);
        let f = drift_field(&x, &params);
        assert_eq!(f.fixed_rows::<3>(V.start).into_owned(), params.gravity);
        assert_eq!(f.fixed_rows::<3>(P.start).into_owned(), x.v);
        assert_eq!(f.fixed_rows::<4>(0).norm(), 0.0);
    }

    #[test]
    fn drift_matches_flow_difference() {
        // Oracle: integrate the drift flow alone with fine RK4 for ±h and take
        // the central difference.
        let params = ModelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = |s: &StateVector| StateVector::from_vec(drift_generic(s.as_slice(), &params.gravity));
        let flow = |x0: &StateVector, t: f64| {
            let steps = 20;
            let h = t / steps as f64;
            let mut x = *x0;
            for _ in 0..steps {
                let k1 = f(&x);
                let k2 = f(&(x + k1 * (h / 2.0)));
                let k3 = f(&(x + k2 * (h / 2.0)));
                let k4 = f(&(x + k3 * h));
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            x
        };
        for _ in 0..20 {
            let x = random_state(&mut rng);
            let x0 = x.pack();
            let h = 1e-4;
            let fd = (flow(&x0, h) - flow(&x0, -h)) / (2.0 * h);
            let analytic = drift_field(&x, &params);
            assert!((fd - analytic).norm() <= 1e-6 * analytic.norm());
        }
    }

    #[test]
    fn affine_decomposition_identity() {
        let params = ModelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = random_state(&mut rng);
            let u = ControlInput { omega: rand_vec(&mut rng, 3.0), accel: rand_vec(&mut rng, 12.0) };
            let fields = input_fields(&x);
            let mut sum = drift_field(&x, &params);
            for (ui, fi) in u.to_array().iter().zip(&fields) {
                sum += fi * *ui;
            }
            let direct = dynamics(&x, &u, &params);
            assert!((sum - direct).amax() < 1e-13 * direct.amax().max(1.0));
        }
    }

    #[test]
    fn input_field_structure() {
        let mut x = zero_state();
        let f = input_fields(&x);
        assert_eq!(f[5].fixed_rows::<3>(V.start).into_owned(), Vec3::z());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        x = random_state(&mut rng);
        let q = x.q_gi.as_vector4();
        for fi in &input_fields(&x)[..3] {
            let block = fi.fixed_rows::<4>(0).into_owned();
            assert!(q.dot(&block).abs() < 1e-15);
            assert_eq!(fi.rows(4, 19).norm(), 0.0);
        }
    }

    #[test]
    fn camera_position_special_cases() {
        let mut x = zero_state();
        x.p_ic = Vec3::new(0.05, 0.1, 0.15);
        assert_eq!(camera_position(&x), x.p_ic);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut y = random_state(&mut rng);
        y.p_ic = Vec3::zeros();
        assert_eq!(camera_position(&y), y.p);
    }

    #[test]
    fn bearing_basics() {
        let x = zero_state();
        let l = Landmark { id: 3, position: Vec3::z() };
        assert_eq!(measure_bearing(&x, &l).unwrap(), Vec3::z());

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut y = random_state(&mut rng);
        let l = Landmark { id: 1, position: Vec3::new(1.5, -0.3, 0.8) };
        let before = measure_bearing(&y, &l).unwrap();
        assert!((before.norm() - 1.0).abs() < 1e-12);
        let shift = Vec3::new(3.0, -2.0, 0.5);
        y.p += shift;
        let moved = Landmark { id: 1, position: l.position + shift };
        assert!((measure_bearing(&y, &moved).unwrap() - before).norm() < 1e-14);
    }

    #[test]
    fn degenerate_and_behind_camera() {
        let x = zero_state();
        let l = Landmark { id: 9, position: Vec3::zeros() };
        assert!(matches!(measure_bearing(&x, &l), Err(Error::DegenerateGeometry { id: 9, .. })));
        let behind = Landmark { id: 4, position: Vec3::new(0.0, 0.0, -1.0) };
        let r = measure_generic(&x.to_array(), &behind, MeasurementMode::Pinhole);
        assert!(matches!(r, Err(Error::BehindCamera { id: 4, .. })));
        let front = Landmark { id: 4, position: Vec3::new(0.2, -0.4, 2.0) };
        let uv = measure_generic(&x.to_array(), &front, MeasurementMode::Pinhole).unwrap();
        assert_eq!(uv, vec![0.1, -0.2]);
    }

    #[test]
    fn constraint_outputs_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut x = random_state(&mut rng);
        assert!(constraint_outputs(&x).amax() < 1e-15);
        let (_, jac) = autodiff::jacobian::<_, std::convert::Infallible>(&x.to_array(), |p| {
            Ok(constraint_generic(p).to_vec())
        })
        .unwrap();
        let q = x.q_gi.to_array();
        for j in 0..STATE_DIM {
            let expected = if j < 4 { 2.0 * q[j] } else { 0.0 };
            assert_eq!(jac[0][j], expected);
        }
        x.q_gi = x.q_gi.scale(2.0);
        assert!((constraint_outputs(&x)[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn output_stack_layout() {
        let params = ModelParams { landmarks: default_landmarks()[..4].to_vec(), ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut x = random_state(&mut rng);
        x.p = Vec3::zeros();
        x.p_ic = Vec3::zeros();
        let y = output_stack(&x, &params).unwrap();
        assert_eq!(y.len(), 14);
        assert_eq!(params.output_labels().len(), 14);
        let c = constraint_outputs(&x);
        assert_eq!(y[12], c[0]);
        assert_eq!(y[13], c[1]);

        let mut relabeled = params.clone();
        for l in relabeled.landmarks.iter_mut() {
            l.id += 100;
        }
        assert_eq!(output_stack(&x, &relabeled).unwrap(), y);
        let mut reordered = params.clone();
        reordered.landmarks.swap(0, 1);
        assert_ne!(output_stack(&x, &reordered).unwrap(), y);
    }

    #[test]
    fn jacobians_match_central_differences() {
        let params = ModelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..100 {
            let x = random_state(&mut rng);
            let u = ControlInput { omega: rand_vec(&mut rng, 2.0), accel: rand_vec(&mut rng, 10.0) };
            let analytic = dynamics_jacobian(&x, &u, &params);
            let base = x.pack();
            let mut fd = nalgebra::SMatrix::<f64, STATE_DIM, STATE_DIM>::zeros();
            for j in 0..STATE_DIM {
                let h = 1e-6;
                let mut a = base;
                let mut b = base;
                a[j] += h;
                b[j] -= h;
                let fa = dynamics(&CalibState::unpack(a.as_slice()).unwrap(), &u, &params);
                let fb = dynamics(&CalibState::unpack(b.as_slice()).unwrap(), &u, &params);
                fd.set_column(j, &((fa - fb) / (2.0 * h)));
            }
            assert!((analytic - fd).norm() <= 1e-5 * analytic.norm());
        }
    }
}
