//! Hybrid interpolation by matrix completion.
//!
//! Measurements are Kriged onto the centers of a regular grid (nearest-N
//! ordinary Kriging, kept only where the Kriging mse is below `t_v`). The
//! partially known matrix is then completed by constrained nuclear-norm
//! minimization: a bisection on the norm budget `lambda`, where each step runs
//! `n_iter` alternations of "restore the known entries" and "project onto the
//! nuclear-norm ball of radius `lambda`", and a budget is feasible when every
//! known entry ends within `alpha * sigma_ij` of its Kriged value.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::CorrelationModel;
use crate::geo::{GeoPoint, LocalFrame};
use crate::kriging::{
    ordinary_kriging_with_nugget, select_neighbor_indices, DistanceMetric, KrigingError,
    NeighborSelector, Observation, DEFAULT_NUGGET_RATIO,
};
use crate::par::Execution;

/// Floor applied to cell mse so that exact hits keep a non-empty interval.
pub const MSE_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatcompError {
    #[error("need at least 2 samples spanning both horizontal axes")]
    DegenerateGrid,
    #[error("grid spacing must be positive, got {0}")]
    InvalidSpacing(f64),
    #[error("invalid completion parameters: {0}")]
    InvalidParams(String),
    #[error("matrix is not completable: {empty_rows} empty rows, {empty_cols} empty columns; raise t_v or add data")]
    Incompletable { empty_rows: usize, empty_cols: usize },
    #[error("target nuclear norm must be >= 0, got {0}")]
    NegativeTarget(f64),
    #[error("no feasible completion within {0} outer iterations")]
    NoConvergence(usize),
    #[error("malformed grid file at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Kriging(#[from] KrigingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    /// Trust-interval scale.
    pub alpha: f64,
    /// Kriging mse gate for accepting a cell, dB^2.
    pub t_v: f64,
    /// Bisection tolerance on the norm budget.
    pub t_lambda: f64,
    /// Alternations per bisection step.
    pub n_iter: usize,
    /// Neighbors per cell in the local Kriging.
    pub local_n: usize,
    pub max_outer: usize,
    /// Nugget of the local Kriging as a fraction of the sill.
    pub nugget_ratio: f64,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            t_v: 1000.0,
            t_lambda: 10.0,
            n_iter: 600,
            local_n: 20,
            max_outer: 60,
            nugget_ratio: DEFAULT_NUGGET_RATIO,
        }
    }
}

impl CompletionParams {
    pub fn validate(&self) -> Result<(), MatcompError> {
        let ok = self.alpha > 0.0
            && self.t_v >= 0.0
            && self.t_lambda > 0.0
            && self.n_iter > 0
            && self.local_n > 0
            && self.max_outer > 0
            && self.nugget_ratio >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(MatcompError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Regular grid over the horizontal bounding box of a sample set.
///
/// Rows follow latitude (south to north) and columns longitude (west to
/// east). Nodes start at the south-west corner of the box and are spaced
/// `d_grid` meters apart in the local frame, so an extent `E` yields
/// `floor(E / d_grid) + 1` nodes and the north/east edge is included only
/// when `E` is a multiple of `d_grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d_grid: f64,
    pub frame: LocalFrame,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Local coordinates of node (0, 0).
    pub x0: f64,
    pub y0: f64,
    /// Height of the grid plane.
    pub height_m: f64,
}

pub fn build_grid(samples: &[GeoPoint], d_grid: f64, frame: LocalFrame) -> Result<GridSpec, MatcompError> {
    if !(d_grid > 0.0 && d_grid.is_finite()) {
        return Err(MatcompError::InvalidSpacing(d_grid));
    }
    if samples.len() < 2 {
        return Err(MatcompError::DegenerateGrid);
    }
    let (mut x_min, mut x_max, mut y_min, mut y_max) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in samples {
        let (x, y) = frame.to_local_xy(p);
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if !(x_max > x_min && y_max > y_min) {
        return Err(MatcompError::DegenerateGrid);
    }
    // Tolerates the centimeter shortfalls left by frame conversion.
    let count = |extent: f64| (extent / d_grid + 1e-2).floor() as usize + 1;
    let height_m = samples.iter().map(|p| p.height_m).sum::<f64>() / samples.len() as f64;
    Ok(GridSpec {
        d_grid,
        frame,
        n_rows: count(y_max - y_min),
        n_cols: count(x_max - x_min),
        x0: x_min,
        y0: y_min,
        height_m,
    })
}

impl GridSpec {
    pub fn with_height(&self, height_m: f64) -> Self {
        Self {
            height_m,
            ..self.clone()
        }
    }

    /// Latitudes of the row nodes.
    pub fn lat_nodes(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.cell_center(i, 0).lat_deg).collect()
    }

    /// Longitudes of the column nodes.
    pub fn lon_nodes(&self) -> Vec<f64> {
        (0..self.n_cols).map(|j| self.cell_center(0, j).lon_deg).collect()
    }

    pub fn cell_center(&self, row: usize, col: usize) -> GeoPoint {
        self.frame.from_local_xy(
            self.x0 + col as f64 * self.d_grid,
            self.y0 + row as f64 * self.d_grid,
            self.height_m,
        )
    }

    /// Nearest node to `p` in the local frame, clamped to the grid.
    pub fn nearest_cell(&self, p: &GeoPoint) -> (usize, usize) {
        let (x, y) = self.frame.to_local_xy(p);
        let snap = |v: f64, n: usize| (v / self.d_grid).round().clamp(0.0, (n - 1) as f64) as usize;
        (snap(y - self.y0, self.n_rows), snap(x - self.x0, self.n_cols))
    }
}

/// Partially known grid: Kriged values, their mse and the known mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub values: DMatrix<f64>,
    pub mse: DMatrix<f64>,
    pub known: DMatrix<bool>,
}

impl GridField {
    pub fn unknown(n_rows: usize, n_cols: usize) -> Self {
        Self {
            values: DMatrix::zeros(n_rows, n_cols),
            mse: DMatrix::zeros(n_rows, n_cols),
            known: DMatrix::from_element(n_rows, n_cols, false),
        }
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|k| **k).count()
    }

    /// Text form: a `nrows,ncols,d_grid` header, then one line per row of
    /// comma-separated `value;mse;known` triples.
    pub fn to_text(&self, d_grid: f64) -> String {
        let mut out = format!("{},{},{}\n", self.values.nrows(), self.values.ncols(), d_grid);
        for i in 0..self.values.nrows() {
            let row: Vec<String> = (0..self.values.ncols())
                .map(|j| {
                    format!(
                        "{};{};{}",
                        self.values[(i, j)],
                        self.mse[(i, j)],
                        u8::from(self.known[(i, j)])
                    )
                })
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses [`to_text`](Self::to_text) output; returns the field and `d_grid`.
    pub fn from_text(text: &str) -> Result<(Self, f64), MatcompError> {
        let err = |line: usize, msg: &str| MatcompError::Format { line, msg: msg.to_string() };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty file"))?;
        let h: Vec<&str> = header.split(',').collect();
        if h.len() != 3 {
            return Err(err(1, "expected nrows,ncols,d_grid"));
        }
        let n_rows: usize = h[0].trim().parse().map_err(|_| err(1, "bad nrows"))?;
        let n_cols: usize = h[1].trim().parse().map_err(|_| err(1, "bad ncols"))?;
        let d_grid: f64 = h[2].trim().parse().map_err(|_| err(1, "bad d_grid"))?;
        let mut field = GridField::unknown(n_rows, n_cols);
        for i in 0..n_rows {
            let line_no = i + 2;
            let line = lines.next().ok_or_else(|| err(line_no, "missing row"))?;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != n_cols {
                return Err(err(line_no, "wrong number of cells"));
            }
            for (j, cell) in cells.iter().enumerate() {
                let parts: Vec<&str> = cell.split(';').collect();
                if parts.len() != 3 {
                    return Err(err(line_no, "expected value;mse;known"));
                }
                field.values[(i, j)] = parts[0].parse().map_err(|_| err(line_no, "bad value"))?;
                field.mse[(i, j)] = parts[1].parse().map_err(|_| err(line_no, "bad mse"))?;
                field.known[(i, j)] = match parts[2] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(err(line_no, "known flag must be 0 or 1")),
                };
                if field.known[(i, j)] && !(field.values[(i, j)].is_finite() && field.mse[(i, j)] >= 0.0) {
                    return Err(err(line_no, "known cell needs a finite value and mse >= 0"));
                }
            }
        }
        Ok((field, d_grid))
    }
}

/// Nearest-N ordinary Kriging at every cell center. Cells whose Kriging
/// fails or whose mse is not below `t_v` stay unknown.
pub fn local_fill(
    samples: &[Observation],
    spec: &GridSpec,
    params: &CompletionParams,
    model: &CorrelationModel,
    exec: Execution,
) -> GridField {
    let mut field = GridField::unknown(spec.n_rows, spec.n_cols);
    if samples.is_empty() {
        return field;
    }
    let locations: Vec<GeoPoint> = samples.iter().map(|o| o.location).collect();
    let metric = DistanceMetric::for_training(&locations);
    let selector = NeighborSelector::NearestN(params.local_n);
    let nugget = params.nugget_ratio * model.sigma_w_sq;
    let n_cols = spec.n_cols;
    let cells = exec.map_range(spec.n_rows * n_cols, |k| {
        let target = spec.cell_center(k / n_cols, k % n_cols);
        let idx = select_neighbor_indices(&locations, &target, selector, metric).ok()?;
        let nb: Vec<Observation> = idx.iter().map(|&i| samples[i]).collect();
        let (p, _) = ordinary_kriging_with_nugget(&nb, &target, model, nugget).ok()?;
        (p.mse < params.t_v).then_some(p)
    });
    for (k, cell) in cells.into_iter().enumerate() {
        if let Some(p) = cell {
            let (i, j) = (k / n_cols, k % n_cols);
            field.values[(i, j)] = p.value;
            field.mse[(i, j)] = p.mse;
            field.known[(i, j)] = true;
        }
    }
    field
}

/// True iff every row and every column has at least one known entry.
pub fn check_completable(field: &GridField) -> bool {
    let (r, c) = empty_lines(&field.known);
    r == 0 && c == 0
}

fn empty_lines(known: &DMatrix<bool>) -> (usize, usize) {
    let rows = (0..known.nrows()).filter(|&i| !known.row(i).iter().any(|k| *k)).count();
    let cols = (0..known.ncols()).filter(|&j| !known.column(j).iter().any(|k| *k)).count();
    (rows, cols)
}

pub fn nuclear_norm(h: &DMatrix<f64>) -> f64 {
    h.singular_values().sum()
}

/// Soft-thresholds the singular values of `h` so that they sum to `target`,
/// keeping the singular vectors. This is the Frobenius projection onto the
/// nuclear-norm ball of radius `target`; `h` is returned unchanged when it is
/// already inside.
pub fn set_nuclear_norm(h: &DMatrix<f64>, target: f64) -> Result<DMatrix<f64>, MatcompError> {
    if !(target >= 0.0) {
        return Err(MatcompError::NegativeTarget(target));
    }
    let svd = h.clone().svd(true, true);
    let sigma = &svd.singular_values;
    if sigma.sum() <= target {
        return Ok(h.clone());
    }
    let tau = shrinkage_threshold(sigma.as_slice(), target);
    let u = svd.u.as_ref().expect("requested");
    let v_t = svd.v_t.as_ref().expect("requested");
    let mut out = DMatrix::zeros(h.nrows(), h.ncols());
    for (k, s) in sigma.iter().enumerate() {
        let s = s - tau;
        if s > 0.0 {
            out += s * u.column(k) * v_t.row(k);
        }
    }
    Ok(out)
}

/// `tau >= 0` with `sum_i max(sigma_i - tau, 0) = target`, for
/// `0 <= target < sum_i sigma_i`. The sum is piecewise linear in `tau`, so
/// the crossing segment is found by scanning the sorted values.
fn shrinkage_threshold(sigma: &[f64], target: f64) -> f64 {
    let mut s: Vec<f64> = sigma.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    for k in 0..s.len() {
        prefix += s[k];
        let tau = (prefix - target) / (k + 1) as f64;
        let next = s.get(k + 1).copied().unwrap_or(0.0);
        if tau >= next {
            return tau.max(0.0);
        }
    }
    s[0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub matrix: DMatrix<f64>,
    /// Norm budget of the returned iterate.
    pub lambda: f64,
    pub outer_iterations: usize,
    /// False when the iteration cap was hit; `matrix` is then the feasible
    /// iterate with the smallest budget seen.
    pub converged: bool,
}

/// Constrained nuclear-norm minimization over the known entries of `field`.
pub fn nuclear_norm_min(field: &GridField, params: &CompletionParams) -> Result<Completion, MatcompError> {
    params.validate()?;
    let (empty_rows, empty_cols) = empty_lines(&field.known);
    if empty_rows > 0 || empty_cols > 0 {
        return Err(MatcompError::Incompletable { empty_rows, empty_cols });
    }
    let known: Vec<(usize, usize)> = (0..field.known.ncols())
        .flat_map(|j| (0..field.known.nrows()).map(move |i| (i, j)))
        .filter(|&(i, j)| field.known[(i, j)])
        .collect();
    let tol: Vec<f64> = known
        .iter()
        .map(|&ij| params.alpha * field.mse[ij].max(MSE_FLOOR).sqrt())
        .collect();
    let feasible = |m: &DMatrix<f64>| {
        known
            .iter()
            .zip(&tol)
            .all(|(&ij, t)| (m[ij] - field.values[ij]).abs() < *t)
    };

    let fill = known.iter().map(|&ij| field.values[ij]).sum::<f64>() / known.len() as f64;
    let mut h_hat = DMatrix::from_fn(field.values.nrows(), field.values.ncols(), |i, j| {
        if field.known[(i, j)] {
            field.values[(i, j)]
        } else {
            fill
        }
    });
    let norm0 = nuclear_norm(&h_hat);
    let (mut lo, mut hi) = (0.0, norm0);
    let mut lambda = norm0;
    let mut best: Option<(f64, DMatrix<f64>)> = None;

    for outer in 1..=params.max_outer {
        let lambda_old = lambda;
        lambda = 0.5 * (lo + hi);
        for _ in 0..params.n_iter {
            for &ij in &known {
                h_hat[ij] = field.values[ij];
            }
            h_hat = set_nuclear_norm(&h_hat, lambda)?;
        }
        let ok = feasible(&h_hat);
        if ok {
            hi = lambda;
            if best.as_ref().is_none_or(|(l, _)| lambda < *l) {
                best = Some((lambda, h_hat.clone()));
            }
        } else {
            lo = lambda;
        }
        if ok && (lambda - lambda_old).abs() <= params.t_lambda {
            return Ok(Completion {
                matrix: h_hat,
                lambda,
                outer_iterations: outer,
                converged: true,
            });
        }
    }
    match best {
        Some((lambda, matrix)) => Ok(Completion {
            matrix,
            lambda,
            outer_iterations: params.max_outer,
            converged: false,
        }),
        None => Err(MatcompError::NoConvergence(params.max_outer)),
    }
}

/// Value of the grid cell nearest to `target` (clamped to the grid).
pub fn mc_predict(completed: &DMatrix<f64>, spec: &GridSpec, target: &GeoPoint) -> f64 {
    completed[spec.nearest_cell(target)]
}

/// One completed grid plane of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedPlane {
    pub spec: GridSpec,
    pub field: GridField,
    pub completion: Completion,
}

/// Outcome of [`matrix_completion_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub predictions: Vec<f64>,
    /// One plane per distinct target height, ascending.
    pub planes: Vec<CompletedPlane>,
    /// True when every per-height completion converged.
    pub converged: bool,
}

/// Grid, local Kriging, completion and nearest-cell lookup. Targets are
/// grouped by height and each height gets its own grid plane over the
/// training bounding box.
pub fn matrix_completion_pipeline(
    train: &[Observation],
    targets: &[GeoPoint],
    d_grid: f64,
    params: &CompletionParams,
    model: &CorrelationModel,
    exec: Execution,
) -> Result<PipelineOutput, MatcompError> {
    params.validate()?;
    let locations: Vec<GeoPoint> = train.iter().map(|o| o.location).collect();
    let frame = LocalFrame::centroid(locations.iter()).map_err(|_| MatcompError::DegenerateGrid)?;
    let base = build_grid(&locations, d_grid, frame)?;

    let mut by_height: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (k, t) in targets.iter().enumerate() {
        by_height.entry(t.height_m.to_bits()).or_default().push(k);
    }
    let mut predictions = vec![0.0; targets.len()];
    let mut planes = Vec::with_capacity(by_height.len());
    for (bits, idx) in by_height {
        let spec = base.with_height(f64::from_bits(bits));
        let field = local_fill(train, &spec, params, model, exec);
        let completion = nuclear_norm_min(&field, params)?;
        for k in idx {
            predictions[k] = mc_predict(&completion.matrix, &spec, &targets[k]);
        }
        planes.push(CompletedPlane { spec, field, completion });
    }
    let converged = planes.iter().all(|p| p.completion.converged);
    Ok(PipelineOutput { predictions, planes, converged })
}
