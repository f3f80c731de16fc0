//! Lie-derivative observability analysis of control-affine systems.
//!
//! The observability matrix is assembled at a single state and input: one
//! row per (field sequence, scalar output), holding the gradient of the
//! iterated Lie derivative `L_{f_k} ⋯ L_{f_1} h` at that point. Gradients
//! are exact: the whole nest is evaluated once on nilpotent jets (see
//! [`crate::autodiff`]), so no finite differences enter a report.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Jet, Scalar};
use crate::error::{Error, Result};

/// Highest supported Lie-derivative order.
pub const MAX_ORDER: usize = 6;
/// Raw rows whose norm is at most this fraction of the largest raw row norm
/// are treated as identically zero and dropped.
pub const ZERO_ROW_RTOL: f64 = 1e-12;

/// A system `ẋ = f₀(x) + Σ uᵢ fᵢ(x)`, `y = h(x)` whose fields and outputs can
/// be evaluated on any [`Scalar`].
pub trait ControlAffineSystem: Sync {
    fn state_dim(&self) -> usize;
    fn input_count(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Field `0` is the drift, `1..=input_count()` the input fields.
    fn field<S: Scalar>(&self, index: usize, x: &[S]) -> Vec<S>;
    fn output<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>>;

    fn field_name(&self, index: usize) -> String {
        format!("f{index}")
    }

    fn output_name(&self, index: usize) -> String {
        format!("h{index}")
    }

    fn field_jacobian(&self, index: usize, x: &[f64]) -> DMatrix<f64> {
        let (_, rows) = autodiff::jacobian::<_, std::convert::Infallible>(x, |p| Ok(self.field(index, p)))
            .expect("infallible");
        rows_to_matrix(&rows, x.len())
    }

    fn output_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (_, rows) = autodiff::jacobian(x, |p| self.output(p))?;
        Ok(rows_to_matrix(&rows, x.len()))
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowMode {
    /// Every field participates.
    #[default]
    Full,
    /// The drift plus only those input fields whose input is nonzero.
    Excited,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservabilityRequest {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub max_order: usize,
    pub mode: RowMode,
    pub excitation_threshold: f64,
    /// Relative to the largest singular value.
    pub rank_tol: f64,
    pub row_normalize: bool,
}

impl ObservabilityRequest {
    pub fn new(x: Vec<f64>, u: Vec<f64>) -> Self {
        ObservabilityRequest {
            x,
            u,
            max_order: 4,
            mode: RowMode::Full,
            excitation_threshold: 1e-9,
            rank_tol: 1e-8,
            row_normalize: true,
        }
    }

    pub fn with_mode(mut self, mode: RowMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_max_order(mut self, order: usize) -> Self {
        self.max_order = order;
        self
    }

    fn validate<Sys: ControlAffineSystem>(&self, sys: &Sys) -> Result<()> {
        if self.max_order > MAX_ORDER {
            return Err(Error::OrderOverflow { order: self.max_order, max: MAX_ORDER });
        }
        if self.x.len() != sys.state_dim() {
            return Err(Error::Dimension { expected: sys.state_dim(), actual: self.x.len() });
        }
        if self.u.len() != sys.input_count() {
            return Err(Error::Dimension { expected: sys.input_count(), actual: self.u.len() });
        }
        if !(self.rank_tol > 0.0) || !(self.excitation_threshold >= 0.0) {
            return Err(Error::InvalidRequest("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Values and gradients of `L_seq h` for every output at once.
#[derive(Clone, Debug)]
pub struct LieRows {
    pub values: Vec<f64>,
    pub gradients: Vec<Vec<f64>>,
}

/// Iterated Lie derivatives of all outputs along `seq` at `x`.
///
/// `seq` lists fields in application order: `[a, b]` is `L_b L_a h`.
pub fn lie_rows<Sys: ControlAffineSystem>(sys: &Sys, seq: &[usize], x: &[f64]) -> Result<LieRows> {
    match seq.len() {
        0 => lie_rows_n::<2, Sys>(sys, seq, x),
        1 => lie_rows_n::<4, Sys>(sys, seq, x),
        2 => lie_rows_n::<8, Sys>(sys, seq, x),
        3 => lie_rows_n::<16, Sys>(sys, seq, x),
        4 => lie_rows_n::<32, Sys>(sys, seq, x),
        5 => lie_rows_n::<64, Sys>(sys, seq, x),
        6 => lie_rows_n::<128, Sys>(sys, seq, x),
        order => Err(Error::OrderOverflow { order, max: MAX_ORDER }),
    }
}

// Generator 0 carries the gradient direction; generator i + 1 the i-th field
// of the sequence. Writing y_{k+1} = x and y_i = y_{i+1} + ε_i f_{seq[i-1]}(y_{i+1}),
// the coefficient of ε_1⋯ε_k in h(y_1) is L_{seq[k-1]} ⋯ L_{seq[0]} h(x).
fn lie_rows_n<const N: usize, Sys: ControlAffineSystem>(
    sys: &Sys,
    seq: &[usize],
    x: &[f64],
) -> Result<LieRows> {
    let n = sys.state_dim();
    let top = N - 1;
    let mut values = Vec::new();
    let mut gradients: Vec<Vec<f64>> = Vec::new();
    let mut base: Vec<Jet<N>> = x.iter().map(|&v| Jet::constant(v)).collect();
    for j in 0..n {
        base[j] = Jet::variable(x[j], 0);
        let mut y = base.clone();
        for (level, &field) in seq.iter().enumerate().rev() {
            let f = sys.field(field, &y);
            for (yi, fi) in y.iter_mut().zip(f) {
                *yi += fi.times_generator(level + 1);
            }
        }
        let h = sys.output(&y)?;
        if j == 0 {
            values = h.iter().map(|v| v.coefficient(top & !1)).collect();
            gradients = vec![vec![0.0; n]; h.len()];
        }
        for (g, hv) in gradients.iter_mut().zip(&h) {
            g[j] = hv.coefficient(top);
        }
        base[j] = Jet::constant(x[j]);
    }
    Ok(LieRows { values, gradients })
}

/// Value and gradient of one iterated Lie derivative.
pub fn lie_derivative<Sys: ControlAffineSystem>(
    sys: &Sys,
    seq: &[usize],
    output_index: usize,
    x: &[f64],
) -> Result<(f64, DVector<f64>)> {
    if output_index >= sys.output_dim() || seq.iter().any(|&f| f > sys.input_count()) {
        return Err(Error::InvalidRequest("field or output index out of range".into()));
    }
    let rows = lie_rows(sys, seq, x)?;
    Ok((
        rows.values[output_index],
        DVector::from_vec(rows.gradients[output_index].clone()),
    ))
}

/// Fields taking part in the analysis, in increasing index order.
pub fn participating_fields(request: &ObservabilityRequest, k: usize) -> Vec<usize> {
    let mut fields = vec![0];
    for i in 0..k {
        let excited = request.u.get(i).is_some_and(|u| u.abs() > request.excitation_threshold);
        if request.mode == RowMode::Full || excited {
            fields.push(i + 1);
        }
    }
    fields
}

/// All sequences of exactly `order` fields, lexicographic in `fields` order.
pub fn sequences_of_order(fields: &[usize], order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(fields.len().pow(order as u32));
    let mut digits = vec![0usize; order];
    loop {
        out.push(digits.iter().map(|&d| fields[d]).collect());
        let mut pos = order;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < fields.len() {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// Sequences of length `0..=max_order`, grouped by length.
pub fn enumerate_sequences(request: &ObservabilityRequest, k: usize) -> Vec<Vec<usize>> {
    let fields = participating_fields(request, k);
    (0..=request.max_order)
        .flat_map(|order| sequences_of_order(&fields, order))
        .collect()
}

pub fn sequence_label<Sys: ControlAffineSystem>(sys: &Sys, output: usize, seq: &[usize]) -> String {
    let fields: Vec<String> = seq.iter().map(|&f| sys.field_name(f)).collect();
    format!("{} / [{}]", sys.output_name(output), fields.join(", "))
}

/// Stacked Lie-derivative gradients with their provenance.
#[derive(Clone, Debug)]
pub struct ObservabilityMatrix {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<String>,
    /// Labels of rows dropped as identically zero.
    pub dropped: Vec<String>,
}

struct RawRows {
    rows: Vec<Vec<f64>>,
    labels: Vec<String>,
}

fn raw_rows<Sys: ControlAffineSystem>(sys: &Sys, seqs: &[Vec<usize>], x: &[f64]) -> Result<RawRows> {
    let results: Vec<Result<LieRows>> = seqs.par_iter().map(|s| lie_rows(sys, s, x)).collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (seq, res) in seqs.iter().zip(results) {
        let lr = res.map_err(|e| Error::Row {
            label: format!("* / [{}]", seq.iter().map(|&f| sys.field_name(f)).collect::<Vec<_>>().join(", ")),
            source: Box::new(e),
        })?;
        for (out, g) in lr.gradients.into_iter().enumerate() {
            let label = sequence_label(sys, out, seq);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Row {
                    label,
                    source: Box::new(Error::Numerical("non-finite gradient".into())),
                });
            }
            rows.push(g);
            labels.push(label);
        }
    }
    Ok(RawRows { rows, labels })
}

fn row_norm(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Divide every row by its Euclidean norm; zero rows are left untouched.
pub fn normalize_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

fn assemble(raw: RawRows, n: usize, zero_threshold: f64, normalize: bool) -> ObservabilityMatrix {
    let mut kept = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = Vec::new();
    for (row, label) in raw.rows.into_iter().zip(raw.labels) {
        let norm = row_norm(&row);
        if norm <= zero_threshold {
            dropped.push(label);
            continue;
        }
        let scale = if normalize { 1.0 / norm } else { 1.0 };
        kept.extend(row.into_iter().map(|v| v * scale));
        labels.push(label);
    }
    let matrix = DMatrix::from_row_slice(labels.len(), n, &kept);
    ObservabilityMatrix { matrix, labels, dropped }
}

pub fn build_observability_matrix<Sys: ControlAffineSystem>(
    sys: &Sys,
    request: &ObservabilityRequest,
) -> Result<ObservabilityMatrix> {
    request.validate(sys)?;
    let seqs = enumerate_sequences(request, sys.input_count());
    let raw = raw_rows(sys, &seqs, &request.x)?;
    let max_norm = raw.rows.iter().map(|r| row_norm(r)).fold(0.0, f64::max);
    Ok(assemble(raw, sys.state_dim(), ZERO_ROW_RTOL * max_norm, request.row_normalize))
}

/// Descending singular values and the matching right singular vectors (as
/// columns of an `n × n` matrix).
fn right_svd(matrix: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (m, n) = matrix.shape();
    if m == 0 || n == 0 {
        return Err(Error::Numerical("empty matrix".into()));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    // Reduce to a square matrix with the same right singular structure.
    let square = if m > n {
        matrix.clone().qr().r()
    } else {
        let mut padded = DMatrix::zeros(n, n);
        padded.view_mut((0, 0), (m, n)).copy_from(matrix);
        padded
    };
    let svd = nalgebra::linalg::SVD::try_new(square, false, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD produced no right vectors".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let v = DMatrix::from_fn(n, n, |r, c| v_t[(order[c], r)]);
    Ok((values, v))
}

fn count_rank(values: &[f64], rank_tol: f64) -> usize {
    let max = values.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&s| s > rank_tol * max).count()
}

/// Rank as the number of singular values above `rank_tol · σ_max`, together
/// with the full descending spectrum.
pub fn numerical_rank(matrix: &DMatrix<f64>, rank_tol: f64) -> Result<(usize, Vec<f64>)> {
    let (values, _) = right_svd(matrix)?;
    Ok((count_rank(&values, rank_tol), values))
}

/// Orthonormal basis (as columns) of the numerical null space.
pub fn null_space(matrix: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    let (values, v) = right_svd(matrix)?;
    let rank = count_rank(&values, rank_tol);
    Ok(v.columns(rank, v.ncols() - rank).into_owned())
}

#[derive(Clone, Debug)]
pub struct ObservabilityReport {
    pub matrix: DMatrix<f64>,
    pub row_labels: Vec<String>,
    pub dropped_rows: Vec<String>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub null_space: DMatrix<f64>,
    pub request: ObservabilityRequest,
    pub participating_fields: Vec<String>,
}

impl ObservabilityReport {
    pub fn state_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.state_dim()
    }
}

/// Build the observability matrix and its rank decomposition.
pub fn analyze<Sys: ControlAffineSystem>(sys: &Sys, request: &ObservabilityRequest) -> Result<ObservabilityReport> {
    let built = build_observability_matrix(sys, request)?;
    let n = sys.state_dim();
    let (singular_values, null_space) = if built.matrix.nrows() == 0 {
        (vec![0.0; n], DMatrix::identity(n, n))
    } else {
        let (values, v) = right_svd(&built.matrix)?;
        let rank = count_rank(&values, request.rank_tol);
        (values, v.columns(rank, n - rank).into_owned())
    };
    let rank = n - null_space.ncols();
    Ok(ObservabilityReport {
        matrix: built.matrix,
        row_labels: built.labels,
        dropped_rows: built.dropped,
        singular_values,
        rank,
        null_space,
        request: request.clone(),
        participating_fields: participating_fields(request, sys.input_count())
            .into_iter()
            .map(|f| sys.field_name(f))
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankSaturation {
    pub saturating_order: usize,
    pub rank_by_order: Vec<usize>,
}

/// Raise the order until the rank stops growing for one full order, or
/// `request.max_order` is reached.
pub fn rank_saturation<Sys: ControlAffineSystem>(sys: &Sys, request: &ObservabilityRequest) -> Result<RankSaturation> {
    request.validate(sys)?;
    let n = sys.state_dim();
    let fields = participating_fields(request, sys.input_count());
    let mut kept: Vec<f64> = Vec::new();
    let mut kept_rows = 0;
    let mut max_norm: f64 = 0.0;
    let mut rank_by_order = Vec::new();
    for order in 0..=request.max_order {
        let raw = raw_rows(sys, &sequences_of_order(&fields, order), &request.x)?;
        max_norm = raw.rows.iter().map(|r| row_norm(r)).fold(max_norm, f64::max);
        let part = assemble(raw, n, ZERO_ROW_RTOL * max_norm, request.row_normalize);
        kept.extend(part.matrix.transpose().iter());
        kept_rows += part.labels.len();
        let rank = if kept_rows == 0 {
            0
        } else {
            numerical_rank(&DMatrix::from_row_slice(kept_rows, n, &kept), request.rank_tol)?.0
        };
        rank_by_order.push(rank);
        if order > 0 && rank == rank_by_order[order - 1] {
            break;
        }
    }
    let last = *rank_by_order.last().expect("order 0 always evaluated");
    let saturating_order = rank_by_order.iter().position(|&r| r == last).unwrap_or(0);
    Ok(RankSaturation { saturating_order, rank_by_order })
}

/// `ẋ = A x + B u`, `y = C x`, used as a classical reference.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl LinearSystem {
    /// Rows `C, CA, …, CA^order` stacked.
    pub fn kalman_observability_matrix(&self, order: usize) -> DMatrix<f64> {
        let n = self.a.nrows();
        let m = self.c.nrows();
        let mut out = DMatrix::zeros(m * (order + 1), n);
        let mut block = self.c.clone();
        for k in 0..=order {
            out.view_mut((k * m, 0), (m, n)).copy_from(&block);
            block = &block * &self.a;
        }
        out
    }
}

fn affine<S: Scalar>(m: &DMatrix<f64>, x: &[S], col: Option<usize>) -> Vec<S> {
    (0..m.nrows())
        .map(|i| match col {
            Some(j) => S::from_f64(m[(i, j)]),
            None => (0..m.ncols()).fold(S::zero(), |acc, j| acc + x[j].scale(m[(i, j)])),
        })
        .collect()
}

impl ControlAffineSystem for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_count(&self) -> usize {
        self.b.ncols()
    }

    fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    fn field<S: Scalar>(&self, index: usize, x: &[S]) -> Vec<S> {
        match index {
            0 => affine(&self.a, x, None),
            i => affine(&self.b, x, Some(i - 1)),
        }
    }

    fn output<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        Ok(affine(&self.c, x, None))
    }
}

/// Largest principal angle between the column spans of two orthonormal
/// bases, computed from the sine so that tiny angles stay resolvable.
pub fn subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if a.ncols() == 0 {
        return 0.0;
    }
    let residual = b - a * (a.transpose() * b);
    let sin = residual.singular_values().max().min(1.0);
    sin.asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// ẋ = 1, y = x².
    struct Parabola;

    impl ControlAffineSystem for Parabola {
        fn state_dim(&self) -> usize {
            1
        }
        fn input_count(&self) -> usize {
            0
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn field<S: Scalar>(&self, _: usize, _: &[S]) -> Vec<S> {
            vec![S::one()]
        }
        fn output<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
            Ok(vec![x[0] * x[0]])
        }
    }

    #[test]
    fn first_lie_derivative_of_parabola() {
        let (v, g) = lie_derivative(&Parabola, &[0], 0, &[3.0]).unwrap();
        assert_eq!(v, 6.0);
        assert_eq!(g[0], 2.0);
        let (v, g) = lie_derivative(&Parabola, &[0, 0], 0, &[3.0]).unwrap();
        assert_eq!((v, g[0]), (2.0, 0.0));
        let (v, g) = lie_derivative(&Parabola, &[], 0, &[3.0]).unwrap();
        assert_eq!((v, g[0]), (9.0, 6.0));
    }

    #[test]
    fn order_overflow() {
        let r = lie_rows(&Parabola, &[0; 7], &[1.0]);
        assert!(matches!(r, Err(Error::OrderOverflow { order: 7, .. })));
        let req = ObservabilityRequest::new(vec![1.0], vec![]).with_max_order(7);
        assert!(matches!(build_observability_matrix(&Parabola, &req), Err(Error::OrderOverflow { .. })));
    }

    #[test]
    fn sequence_counts() {
        let req = ObservabilityRequest::new(vec![0.0; 23], vec![0.0; 6]).with_max_order(0);
        assert_eq!(enumerate_sequences(&req, 6), vec![Vec::<usize>::new()]);
        let req = req.with_max_order(2);
        assert_eq!(enumerate_sequences(&req, 6).len(), 57);
        let mut req = ObservabilityRequest::new(vec![0.0; 23], vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0])
            .with_mode(RowMode::Excited)
            .with_max_order(1);
        let seqs = enumerate_sequences(&req, 6);
        assert_eq!(seqs, vec![vec![], vec![0], vec![1], vec![2]]);
        req.max_order = 2;
        let seqs = enumerate_sequences(&req, 6);
        assert_eq!(seqs.len(), 13);
        assert_eq!(seqs[4], vec![0, 0]);
        assert_eq!(seqs[5], vec![0, 1]);
    }

    #[test]
    fn rank_of_simple_matrices() {
        assert_eq!(numerical_rank(&DMatrix::identity(3, 3), 1e-8).unwrap().0, 3);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-15]));
        let (r, s) = numerical_rank(&d, 1e-8).unwrap();
        assert_eq!(r, 1);
        assert_eq!(s, vec![1.0, 1e-15]);
        assert!(numerical_rank(&DMatrix::<f64>::zeros(0, 3), 1e-8).is_err());
    }

    #[test]
    fn rank_of_low_rank_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = DMatrix::from_fn(23, 5, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(5, 100, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(numerical_rank(&(&a * &b), 1e-8).unwrap().0, 5);
        assert_eq!(numerical_rank(&(&a * &b).transpose(), 1e-8).unwrap().0, 5);
    }

    #[test]
    fn null_space_cases() {
        let z = null_space(&DMatrix::zeros(2, 3), 1e-8).unwrap();
        assert_eq!(z.ncols(), 3);
        assert!((z.transpose() * &z - DMatrix::identity(3, 3)).amax() < 1e-12);
        let full = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        assert_eq!(null_space(&full, 1e-8).unwrap().ncols(), 0);

        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let v = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)).normalize();
        let mut m = DMatrix::from_fn(9, 6, |_, _| rng.random_range(-1.0..1.0));
        let proj = DMatrix::identity(6, 6) - &v * v.transpose();
        m = m * proj;
        let basis = null_space(&m, 1e-8).unwrap();
        assert_eq!(basis.ncols(), 1);
        let angle = subspace_angle(&basis, &DMatrix::from_column_slice(6, 1, v.as_slice()));
        assert!(angle < 1e-8, "{angle}");
    }

    fn random_linear(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LinearSystem {
        LinearSystem {
            a: DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)),
            b: DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0)),
            c: DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn linear_rows_are_kalman_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let sys = random_linear(&mut rng, 4, 1);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let req = ObservabilityRequest {
            row_normalize: false,
            ..ObservabilityRequest::new(x.clone(), vec![0.0]).with_mode(RowMode::Excited).with_max_order(2)
        };
        let built = build_observability_matrix(&sys, &req).unwrap();
        let kalman = sys.kalman_observability_matrix(2);
        assert_eq!(built.matrix.nrows(), 3);
        assert!((&built.matrix - &kalman).amax() < 1e-13 * kalman.amax());
    }

    #[test]
    fn max_order_zero_is_output_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let sys = random_linear(&mut rng, 3, 2);
        let req = ObservabilityRequest {
            row_normalize: false,
            ..ObservabilityRequest::new(vec![0.1, 0.2, 0.3], vec![1.0]).with_max_order(0)
        };
        let built = build_observability_matrix(&sys, &req).unwrap();
        assert_eq!(built.matrix, sys.output_jacobian(&req.x).unwrap());
        assert_eq!(built.labels, vec!["h0 / []", "h1 / []"]);
    }

    #[test]
    fn saturation_of_linear_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let sys = random_linear(&mut rng, 4, 1);
        let req = ObservabilityRequest::new(vec![0.0; 4], vec![0.0]).with_mode(RowMode::Excited);
        let sat = rank_saturation(&sys, &req).unwrap();
        assert_eq!(sat.rank_by_order, vec![1, 2, 3, 4, 4]);
        assert_eq!(sat.saturating_order, 3);
        let sat = rank_saturation(&sys, &req.clone().with_max_order(0)).unwrap();
        assert_eq!(sat, RankSaturation { saturating_order: 0, rank_by_order: vec![1] });
    }
}
