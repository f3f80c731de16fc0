//! The four report commands: each runs one instrument (or all of them for
//! the comparison table) and writes its JSON and CSV files into the
//! configured output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::ekf::{
    complement_directions, run_ekf, summarize, CovarianceHistory, RegisteredDirection, ERROR_BLOCKS, E_P_IC,
};
use crate::error::{Error, Result};
use crate::gramian::{empirical_gramian, gramian_alignment, AlignmentMode, Gramian, DEFICIENT_RTOL};
use crate::lie::{analyze, rank_saturation, ObservabilityRequest, RankSaturation, RowMode};
use crate::model::{CalibSystem, StateVector, STATE_DIM};
use crate::scenarios::{
    ambiguity_direction, axis_span_dimension, classify_input, simulate, ScenarioId, ScenarioSpec, Trajectory,
    AXIS_ANGLE_TOL, NONZERO_RATE_EPS,
};

pub const REPORT_JSON: &str = "report.json";
pub const SINGULAR_VALUES_CSV: &str = "singular_values.csv";
pub const GRAMIAN_JSON: &str = "gramian.json";
pub const EIGVALS_CSV: &str = "eigvals.csv";
pub const COVARIANCE_CSV: &str = "covariance_history.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const TABLE_JSON: &str = "table1.json";
pub const TABLE_TXT: &str = "table1.txt";

const DISAGREEMENT_NOTE: &str = "instruments disagree: the instantaneous Lie-derivative rank is full \
     while the trajectory Gramian has a blind subspace";

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Io { path: path.display().to_string(), source: std::io::Error::other(e) }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// `index, value, ratio_to_max` for a descending spectrum.
fn write_spectrum_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["index", "value", "ratio_to_max"]).map_err(csv_err(path))?;
    let max = values.first().copied().unwrap_or(0.0);
    for (i, v) in values.iter().enumerate() {
        let ratio = if max > 0.0 { v / max } else { 0.0 };
        w.serialize((i, v, ratio)).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn sample_at(traj: &Trajectory, time: f64) -> Result<usize> {
    let k = (time / traj.dt).round() as usize;
    if k >= traj.len() {
        return Err(Error::Config(format!(
            "engine.eval_time {time} s is past the end of the trajectory ({} s)",
            traj.times[traj.len() - 1]
        )));
    }
    Ok(k)
}

fn lie_request(cfg: &RunConfig, traj: &Trajectory, k: usize) -> ObservabilityRequest {
    let mut req = ObservabilityRequest::new(traj.states[k].to_array().to_vec(), traj.inputs[k].to_array().to_vec())
        .with_mode(cfg.engine.mode)
        .with_max_order(cfg.engine.max_order);
    req.rank_tol = cfg.engine.rank_tol;
    req.row_normalize = cfg.engine.row_normalize;
    req
}

/// The simulated trajectory for a config, sampled at `gramian.dt`.
pub fn trajectory(cfg: &RunConfig) -> Result<(ScenarioSpec, Trajectory)> {
    let mut spec = cfg.scenario_spec()?;
    spec.dt = cfg.gramian.dt;
    let traj = simulate(&spec)?;
    Ok((spec, traj))
}

#[derive(Clone, Debug, Serialize)]
pub struct RankReport {
    pub scenario: ScenarioId,
    pub eval_time: f64,
    pub state: Vec<f64>,
    pub input: Vec<f64>,
    pub mode: RowMode,
    pub max_order: usize,
    pub rank_tol: f64,
    pub row_normalize: bool,
    pub excitation_threshold: f64,
    pub participating_fields: Vec<String>,
    pub state_dim: usize,
    pub rank: usize,
    pub full_rank: bool,
    pub saturation: RankSaturation,
    pub singular_values: Vec<f64>,
    /// Orthonormal basis vectors of the numerical null space.
    pub null_space: Vec<Vec<f64>>,
    pub row_labels: Vec<String>,
    pub dropped_rows: Vec<String>,
    pub config: RunConfig,
}

/// Lie-derivative rank at `engine.eval_time` along the configured scenario.
pub fn rank_report(cfg: &RunConfig) -> Result<RankReport> {
    let (spec, traj) = trajectory(cfg)?;
    let k = sample_at(&traj, cfg.engine.eval_time)?;
    let req = lie_request(cfg, &traj, k);
    let sys = CalibSystem::new(spec.params.clone());
    let report = analyze(&sys, &req)?;
    let saturation = rank_saturation(&sys, &req)?;
    Ok(RankReport {
        scenario: spec.id,
        eval_time: traj.times[k],
        state: req.x.clone(),
        input: req.u.clone(),
        mode: req.mode,
        max_order: req.max_order,
        rank_tol: req.rank_tol,
        row_normalize: req.row_normalize,
        excitation_threshold: req.excitation_threshold,
        participating_fields: report.participating_fields.clone(),
        state_dim: report.state_dim(),
        rank: report.rank,
        full_rank: report.is_full_rank(),
        saturation,
        singular_values: report.singular_values.clone(),
        null_space: columns(&report.null_space),
        row_labels: report.row_labels,
        dropped_rows: report.dropped_rows,
        config: cfg.clone(),
    })
}

pub fn cmd_rank(cfg: &RunConfig) -> Result<RankReport> {
    let report = rank_report(cfg)?;
    prepare_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join(REPORT_JSON), &report)?;
    write_spectrum_csv(&cfg.out_dir.join(SINGULAR_VALUES_CSV), &report.singular_values)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct AmbiguityReport {
    /// Unit rotation axis of the first profile, in the global frame.
    pub axis: [f64; 3],
    /// The analytic lever-arm stretch direction at the initial state.
    pub direction: Vec<f64>,
    /// `‖G d‖ / λ_max` for unit `d`.
    pub blindness: f64,
    pub alignment: f64,
    pub alignment_smallest_eigenvector: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GramianReport {
    pub scenario: ScenarioId,
    pub duration: f64,
    pub dt: f64,
    pub samples: usize,
    pub eigenvalues: Vec<f64>,
    pub max_eigenvalue: f64,
    pub deficient_rtol: f64,
    pub deficient_dimension: usize,
    pub deficient_subspace: Vec<Vec<f64>>,
    /// Absent when the scenario rotates about more than one axis.
    pub ambiguity: Option<AmbiguityReport>,
    pub config: RunConfig,
}

fn gramian_trajectory(cfg: &RunConfig, traj: &Trajectory) -> Trajectory {
    match cfg.gramian.duration {
        Some(d) => traj.truncated((d / traj.dt).round() as usize + 1),
        None => traj.clone(),
    }
}

fn first_axis_direction(spec: &ScenarioSpec) -> Result<(nalgebra::Vector3<f64>, StateVector)> {
    let axis = spec.profiles[0].axis;
    Ok((axis, ambiguity_direction(&spec.initial, &axis)?.d))
}

fn ambiguity_report(spec: &ScenarioSpec, g: &Gramian) -> Result<Option<AmbiguityReport>> {
    if axis_span_dimension(&spec.axes(), AXIS_ANGLE_TOL) != 1 {
        return Ok(None);
    }
    let (axis, d) = first_axis_direction(spec)?;
    let d = DVector::from_column_slice(d.as_slice());
    Ok(Some(AmbiguityReport {
        axis: axis.into(),
        direction: d.iter().copied().collect(),
        blindness: g.blindness(&d),
        alignment: gramian_alignment(g, &d, AlignmentMode::Projection),
        alignment_smallest_eigenvector: gramian_alignment(g, &d, AlignmentMode::SmallestEigenvector),
    }))
}

pub fn gramian_report(cfg: &RunConfig) -> Result<GramianReport> {
    let (spec, traj) = trajectory(cfg)?;
    let traj = gramian_trajectory(cfg, &traj);
    let g = empirical_gramian(&traj, &spec.params)?;
    let subspace = g.deficient_subspace(DEFICIENT_RTOL);
    Ok(GramianReport {
        scenario: spec.id,
        duration: traj.times[traj.len() - 1],
        dt: traj.dt,
        samples: traj.len(),
        eigenvalues: g.eigenvalues.clone(),
        max_eigenvalue: g.max_eigenvalue(),
        deficient_rtol: DEFICIENT_RTOL,
        deficient_dimension: subspace.ncols(),
        deficient_subspace: columns(&subspace),
        ambiguity: ambiguity_report(&spec, &g)?,
        config: cfg.clone(),
    })
}

pub fn cmd_gramian(cfg: &RunConfig) -> Result<GramianReport> {
    let report = gramian_report(cfg)?;
    prepare_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join(GRAMIAN_JSON), &report)?;
    write_spectrum_csv(&cfg.out_dir.join(EIGVALS_CSV), &report.eigenvalues)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct DirectionShrinkage {
    pub name: String,
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub shrinkage: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockShrinkage {
    pub block: String,
    /// Smallest per-component `1 − σ_end/σ_start` in the block.
    pub min_shrinkage: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EkfSummary {
    pub scenario: ScenarioId,
    pub duration: f64,
    pub samples: usize,
    pub seed: u64,
    pub directions: Vec<DirectionShrinkage>,
    pub blocks: Vec<BlockShrinkage>,
    /// Per-axis shrinkage of the camera-offset marginals.
    pub p_ic_marginal_shrinkage: [f64; 3],
    /// Median shrinkage over the part of the `(p, p_IC)` subspace orthogonal
    /// to `d`; only reported for single-axis scenarios.
    pub complement_median_shrinkage: Option<f64>,
    pub final_error_along_d: f64,
    pub config: RunConfig,
}

/// Filter run plus its summary; the history is what the CSV is written from.
pub fn ekf_run(cfg: &RunConfig) -> Result<(CovarianceHistory, EkfSummary)> {
    let (spec, traj) = trajectory(cfg)?;
    let (axis, d) = first_axis_direction(&spec)?;
    let registered = RegisteredDirection::from_state_direction("d", &spec.initial, &d);
    let single_axis = axis_span_dimension(&spec.axes(), AXIS_ANGLE_TOL) == 1;
    let complement = if single_axis { complement_directions(&spec.initial, &axis) } else { Vec::new() };
    let history = run_ekf(&traj, &cfg.ekf_config(), &spec.params, std::slice::from_ref(&registered))?;
    let s = summarize(&history, &complement);
    let last = history.times.len() - 1;
    let u = registered.direction / registered.direction.norm();
    let summary = EkfSummary {
        scenario: spec.id,
        duration: history.times[last],
        samples: history.times.len(),
        seed: cfg.seed,
        directions: vec![DirectionShrinkage {
            name: registered.name.clone(),
            sigma_start: history.direction_sigmas[0][0],
            sigma_end: history.direction_sigmas[last][0],
            shrinkage: s.directions[0].1,
        }],
        blocks: s
            .block_min
            .iter()
            .map(|(block, v)| BlockShrinkage { block: block.clone(), min_shrinkage: *v })
            .collect(),
        p_ic_marginal_shrinkage: std::array::from_fn(|i| {
            let j = E_P_IC.start + i;
            1.0 - history.marginal_std(last, j) / history.marginal_std(0, j)
        }),
        complement_median_shrinkage: s.complement_median,
        final_error_along_d: history.errors[last].dot(&u),
        config: cfg.clone(),
    };
    Ok((history, summary))
}

fn write_covariance_csv(path: &Path, history: &CovarianceHistory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["t".to_string()];
    for (name, _) in ERROR_BLOCKS {
        for axis in ["x", "y", "z"] {
            header.push(format!("std_{name}_{axis}"));
        }
    }
    for d in &history.directions {
        header.push(format!("sigma_{}", d.name));
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for k in 0..history.times.len() {
        let mut row = Vec::with_capacity(header.len());
        row.push(history.times[k]);
        for (_, range) in ERROR_BLOCKS {
            row.extend(range.map(|i| history.marginal_std(k, i)));
        }
        row.extend(&history.direction_sigmas[k]);
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn cmd_ekf(cfg: &RunConfig) -> Result<EkfSummary> {
    let (history, summary) = ekf_run(cfg)?;
    prepare_dir(&cfg.out_dir)?;
    write_covariance_csv(&cfg.out_dir.join(COVARIANCE_CSV), &history)?;
    write_json(&cfg.out_dir.join(SUMMARY_JSON), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct VerdictRow {
    pub scenario: ScenarioId,
    /// Rotation about at least two distinct axes over the trajectory.
    pub two_axis_condition: bool,
    /// At least two nonzero body-rate components during every profile.
    pub two_component_condition: bool,
    pub nonzero_rate_components: Vec<usize>,
    pub lie_mode: RowMode,
    pub lie_max_order: usize,
    /// Lie rank at the first sample of each profile.
    pub lie_ranks: Vec<usize>,
    pub lie_full_rank: bool,
    pub gramian_deficient_dimension: Option<usize>,
    /// Only reported for single-axis scenarios.
    pub ambiguity_alignment: Option<f64>,
    pub ekf_d_shrinkage: Option<f64>,
    pub disagreement: bool,
    pub annotation: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RowFailure {
    pub scenario: ScenarioId,
    pub error: String,
    pub exit_code: i32,
}

#[derive(Clone, Debug, Serialize)]
pub struct Table1 {
    pub rows: Vec<VerdictRow>,
    pub failures: Vec<RowFailure>,
    pub config: RunConfig,
}

impl Table1 {
    /// Exit code for the run: the worst failure, or 0.
    pub fn exit_code(&self) -> i32 {
        self.failures.iter().map(|f| f.exit_code).max().unwrap_or(0)
    }
}

pub fn verdict_row(cfg: &RunConfig) -> Result<VerdictRow> {
    let (spec, traj) = trajectory(cfg)?;
    let axes = spec.axes();
    let two_axis_condition = axis_span_dimension(&axes, AXIS_ANGLE_TOL) >= 2;
    let classes: Vec<_> = spec.profiles.iter().map(|p| classify_input(&p.omega(), NONZERO_RATE_EPS)).collect();
    let two_component_condition = classes.iter().all(|c| c.two_component_condition);

    let sys = CalibSystem::new(spec.params.clone());
    let starts: Vec<usize> =
        (0..spec.profiles.len()).map(|i| traj.profile_index.iter().position(|&p| p == i).unwrap_or(0)).collect();
    let lie_ranks = starts
        .iter()
        .map(|&k| analyze(&sys, &lie_request(cfg, &traj, k)).map(|r| r.rank))
        .collect::<Result<Vec<_>>>()?;
    let lie_full_rank = lie_ranks.iter().all(|&r| r == STATE_DIM);

    let (gramian_deficient_dimension, ambiguity_alignment) = if cfg.gramian.enabled {
        let g = empirical_gramian(&gramian_trajectory(cfg, &traj), &spec.params)?;
        let alignment = ambiguity_report(&spec, &g)?.map(|a| a.alignment);
        (Some(g.deficient_dimension()), alignment)
    } else {
        (None, None)
    };
    let ekf_d_shrinkage =
        if cfg.ekf.enabled { Some(ekf_run(cfg)?.1.directions[0].shrinkage) } else { None };

    let disagreement = lie_full_rank && gramian_deficient_dimension.is_some_and(|d| d > 0);
    let annotation = disagreement.then(|| {
        let mut note = DISAGREEMENT_NOTE.to_string();
        if let Some(a) = ambiguity_alignment {
            let _ = write!(note, "; the lever-arm stretch along the rotation axis lies {:.1}% in it", 100.0 * a);
        }
        note
    });
    Ok(VerdictRow {
        scenario: spec.id,
        two_axis_condition,
        two_component_condition,
        nonzero_rate_components: classes.iter().map(|c| c.nonzero_count).collect(),
        lie_mode: cfg.engine.mode,
        lie_max_order: cfg.engine.max_order,
        lie_ranks,
        lie_full_rank,
        gramian_deficient_dimension,
        ambiguity_alignment,
        ekf_d_shrinkage,
        disagreement,
        annotation,
    })
}

/// Runs the four built-in scenarios through every enabled instrument. The
/// scenario selection of `cfg` is ignored; everything else applies.
pub fn table1(cfg: &RunConfig) -> Table1 {
    let results: Vec<(ScenarioId, Result<VerdictRow>)> = ScenarioId::BUILT_IN
        .par_iter()
        .map(|&id| {
            let mut c = cfg.clone();
            c.scenario.id = Some(id);
            c.scenario.custom = None;
            (id, verdict_row(&c))
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (scenario, res) in results {
        match res {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(RowFailure { scenario, error: e.to_string(), exit_code: e.exit_code() }),
        }
    }
    Table1 { rows, failures, config: cfg.clone() }
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_else(|| "-".to_string())
}

/// Column-aligned plain-text rendering of the table.
pub fn render_table(t: &Table1) -> String {
    let header = [
        "scenario", "two_axis", "two_comp", "nonzero", "lie_rank", "gram_deficient", "align_d", "ekf_d_shrink", "flag",
    ];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in &t.rows {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("/");
        cells.push(vec![
            r.scenario.to_string(),
            r.two_axis_condition.to_string(),
            r.two_component_condition.to_string(),
            join(&r.nonzero_rate_components),
            format!("{} ({:?}, {})", join(&r.lie_ranks), r.lie_mode, r.lie_max_order).to_lowercase(),
            opt(r.gramian_deficient_dimension, |d| d.to_string()),
            opt(r.ambiguity_alignment, |a| format!("{a:.4}")),
            opt(r.ekf_d_shrinkage, |s| format!("{:.1}%", 100.0 * s)),
            if r.disagreement { "DISAGREE".into() } else { String::new() },
        ]);
    }
    let widths: Vec<usize> =
        (0..header.len()).map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    for r in t.rows.iter().filter(|r| r.disagreement) {
        let _ = writeln!(out, "{}: {}", r.scenario, r.annotation.as_deref().unwrap_or(""));
    }
    for f in &t.failures {
        let _ = writeln!(out, "{}: failed: {}", f.scenario, f.error);
    }
    out
}

pub fn cmd_table1(cfg: &RunConfig) -> Result<Table1> {
    let table = table1(cfg);
    prepare_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join(TABLE_JSON), &table)?;
    let path = cfg.out_dir.join(TABLE_TXT);
    fs::write(&path, render_table(&table)).map_err(io_err(&path))?;
    Ok(table)
}
