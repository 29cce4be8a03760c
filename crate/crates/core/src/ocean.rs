//! Vector-field containers, Lagrangian advection and drifter observations.
//!
//! Velocities are piecewise constant per grid cell: a drifter anywhere inside
//! a cell sees that cell's velocity. Cells are half-open `[lo, hi)` along each
//! axis, except the last cell which also contains the upper bound.

use std::path::Path;

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Dataset;
use crate::kernels::{Point2, SpaceTimePoint, TemporalHelmholtzParams};
use crate::rng::Rng;
use crate::spde;

/// Rectangular grid of cells; cell `(ix, iy)` has index `ix·ny + iy`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGrid {
    edges_x: Vec<f64>,
    edges_y: Vec<f64>,
    centers: Vec<Point2>,
}

impl SpatialGrid {
    /// Evenly spaced `nx × ny` cells over `[a1,b1]×[a2,b2]`.
    pub fn regular(nx: usize, ny: usize, bounds: [f64; 4]) -> Result<Self> {
        let [a1, b1, a2, b2] = bounds;
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidParam("grid needs at least one cell per axis".into()));
        }
        if !(a1 < b1 && a2 < b2) || bounds.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!("invalid grid bounds {bounds:?}")));
        }
        let axis = |a: f64, b: f64, n: usize| -> Vec<f64> {
            let mut e: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
            e[n] = b;
            e
        };
        Self::from_edges(axis(a1, b1, nx), axis(a2, b2, ny))
    }

    /// Grid from explicit, strictly increasing cell edges (uneven grids allowed).
    pub fn from_edges(edges_x: Vec<f64>, edges_y: Vec<f64>) -> Result<Self> {
        for e in [&edges_x, &edges_y] {
            if e.len() < 2 {
                return Err(Error::InvalidParam("each axis needs at least two edges".into()));
            }
            if e.windows(2).any(|w| !(w[0] < w[1])) || e.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParam("grid edges must be finite and strictly increasing".into()));
            }
        }
        let mut centers = Vec::with_capacity((edges_x.len() - 1) * (edges_y.len() - 1));
        for ix in 0..edges_x.len() - 1 {
            for iy in 0..edges_y.len() - 1 {
                centers.push([
                    0.5 * (edges_x[ix] + edges_x[ix + 1]),
                    0.5 * (edges_y[iy] + edges_y[iy + 1]),
                ]);
            }
        }
        Ok(SpatialGrid { edges_x, edges_y, centers })
    }

    pub fn nx(&self) -> usize {
        self.edges_x.len() - 1
    }

    pub fn ny(&self) -> usize {
        self.edges_y.len() - 1
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Point2] {
        &self.centers
    }

    pub fn edges_x(&self) -> &[f64] {
        &self.edges_x
    }

    pub fn edges_y(&self) -> &[f64] {
        &self.edges_y
    }

    /// `[a1, b1, a2, b2]`.
    pub fn bounds(&self) -> [f64; 4] {
        [
            self.edges_x[0],
            *self.edges_x.last().unwrap(),
            self.edges_y[0],
            *self.edges_y.last().unwrap(),
        ]
    }

    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny() + iy
    }

    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.ny(), cell % self.ny())
    }

    pub fn contains(&self, s: Point2) -> bool {
        let [a1, b1, a2, b2] = self.bounds();
        s[0] >= a1 && s[0] <= b1 && s[1] >= a2 && s[1] <= b2
    }

    /// Cell containing `s`, or `None` outside the bounds.
    pub fn cell_lookup(&self, s: Point2) -> Option<usize> {
        let ix = axis_lookup(&self.edges_x, s[0])?;
        let iy = axis_lookup(&self.edges_y, s[1])?;
        Some(self.cell_index(ix, iy))
    }

    /// True when the edges are evenly spaced (to 1e-9 relative).
    pub fn is_regular(&self) -> bool {
        let even = |e: &[f64]| {
            let h = (e[e.len() - 1] - e[0]) / (e.len() - 1) as f64;
            e.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0))
        };
        even(&self.edges_x) && even(&self.edges_y)
    }
}

fn axis_lookup(edges: &[f64], v: f64) -> Option<usize> {
    let n = edges.len() - 1;
    if !(v >= edges[0] && v <= edges[n]) {
        return None;
    }
    if v == edges[n] {
        return Some(n - 1);
    }
    Some(edges.partition_point(|e| *e <= v) - 1)
}

/// Upper limit on the steps of a spanned time grid.
const MAX_TIME_STEPS: f64 = 1e9;

/// Evenly spaced time points `start + k·dt`, `k = 0..len`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: f64,
    pub dt: f64,
    pub len: usize,
}

impl TimeGrid {
    pub fn new(start: f64, dt: f64, len: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite() && start.is_finite()) || len == 0 {
            return Err(Error::InvalidParam(format!(
                "invalid time grid start={start} dt={dt} len={len}"
            )));
        }
        Ok(TimeGrid { start, dt, len })
    }

    /// Grid covering `[start, end]` inclusive at step `dt`.
    pub fn spanning(start: f64, end: f64, dt: f64) -> Result<Self> {
        let steps = (end - start) / dt;
        let n = steps.round();
        if !(n >= 0.0 && n < MAX_TIME_STEPS) || (steps - n).abs() > 1e-6 {
            return Err(Error::InvalidParam(format!(
                "[{start}, {end}] is not a whole number of steps of {dt}"
            )));
        }
        Self::new(start, dt, n as usize + 1)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.len - 1)
    }

    /// Index of the grid point equal to `t` (to 1e-6 of a step).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = (t - self.start) / self.dt;
        let k = x.round();
        if !(k >= 0.0) || (x - k).abs() > 1e-6 || k as usize >= self.len {
            return Err(Error::InvalidParam(format!(
                "time {t} is not on the grid starting at {} with step {} and {} points",
                self.start, self.dt, self.len
            )));
        }
        Ok(k as usize)
    }
}

/// Velocities on a spatial grid over a time grid, `[time][cell][u, v]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorFieldSeries {
    pub grid: SpatialGrid,
    pub times: TimeGrid,
    data: Vec<f64>,
}

impl VectorFieldSeries {
    pub fn zeros(grid: SpatialGrid, times: TimeGrid) -> Self {
        let data = vec![0.0; times.len * grid.len() * 2];
        VectorFieldSeries { grid, times, data }
    }

    pub fn from_data(grid: SpatialGrid, times: TimeGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != times.len * grid.len() * 2 {
            return Err(Error::Shape(format!(
                "field data has {} values, expected {}×{}×2",
                data.len(),
                times.len,
                grid.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("field contains non-finite velocities".into()));
        }
        Ok(VectorFieldSeries { grid, times, data })
    }

    /// A field with the same velocity function of `(cell center, t)` everywhere.
    pub fn from_fn(grid: SpatialGrid, times: TimeGrid, f: impl Fn(Point2, f64) -> [f64; 2]) -> Self {
        let mut field = Self::zeros(grid, times);
        for k in 0..times.len {
            let t = times.time(k);
            for c in 0..field.grid.len() {
                let v = f(field.grid.centers()[c], t);
                field.set_velocity(k, c, v);
            }
        }
        field
    }

    pub fn velocity(&self, k: usize, cell: usize) -> [f64; 2] {
        let i = 2 * (k * self.grid.len() + cell);
        [self.data[i], self.data[i + 1]]
    }

    pub fn set_velocity(&mut self, k: usize, cell: usize, v: [f64; 2]) {
        let i = 2 * (k * self.grid.len() + cell);
        self.data[i] = v[0];
        self.data[i + 1] = v[1];
    }

    /// Velocities of all cells at time index `k`, flattened `[u0, v0, u1, v1, ...]`.
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = 2 * self.grid.len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn set_slice(&mut self, k: usize, values: &[f64]) {
        let n = 2 * self.grid.len();
        self.data[k * n..(k + 1) * n].copy_from_slice(values);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Velocity seen by a drifter at `s` and time index `k`.
    pub fn velocity_at(&self, s: Point2, k: usize) -> Option<[f64; 2]> {
        self.grid.cell_lookup(s).map(|c| self.velocity(k, c))
    }
}

/// A Lagrangian path sampled every time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `(position, time)` pairs, consecutive times one step apart.
    pub samples: Vec<(Point2, f64)>,
    pub exited: bool,
    pub exit_time: Option<f64>,
    /// First out-of-bounds position (not part of `samples`).
    pub exit_position: Option<Point2>,
}

impl Trajectory {
    /// Sum of Euclidean distances between consecutive samples.
    pub fn arc_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| ((w[1].0[0] - w[0].0[0]).powi(2) + (w[1].0[1] - w[0].0[1]).powi(2)).sqrt())
            .sum()
    }

    pub fn last_position(&self) -> Option<Point2> {
        self.samples.last().map(|s| s.0)
    }
}

/// Forward-Euler advection `s ← s + δt·V(s, t)` from `t0` to `t_end`.
///
/// The step that would leave the bounds terminates the path; that position is
/// recorded only as `exit_position`.
pub fn simulate_trajectory(field: &VectorFieldSeries, s0: Point2, t0: f64, t_end: f64) -> Result<Trajectory> {
    let k0 = field.times.index_of(t0)?;
    let k1 = field.times.index_of(t_end)?;
    if k1 < k0 {
        return Err(Error::InvalidParam(format!("trajectory end {t_end} precedes start {t0}")));
    }
    if !field.grid.contains(s0) {
        return Err(Error::InvalidParam(format!("start position {s0:?} is outside the grid")));
    }
    Ok(advect(field, s0, k0, k1))
}

pub(crate) fn advect(field: &VectorFieldSeries, s0: Point2, k0: usize, k1: usize) -> Trajectory {
    let dt = field.times.dt;
    let mut samples = Vec::with_capacity(k1 - k0 + 1);
    let mut s = s0;
    let mut k = k0;
    loop {
        samples.push((s, field.times.time(k)));
        if k == k1 {
            return Trajectory { samples, exited: false, exit_time: None, exit_position: None };
        }
        let cell = field.grid.cell_lookup(s).expect("trajectory positions stay inside the grid");
        let v = field.velocity(k, cell);
        let next = [s[0] + dt * v[0], s[1] + dt * v[1]];
        k += 1;
        if field.grid.cell_lookup(next).is_none() {
            return Trajectory {
                samples,
                exited: true,
                exit_time: Some(field.times.time(k)),
                exit_position: Some(next),
            };
        }
        s = next;
    }
}

/// When and how noisily drifters report velocities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSchedule {
    pub interval: f64,
    pub noise_sd: f64,
}

impl Default for ObservationSchedule {
    fn default() -> Self {
        ObservationSchedule { interval: 0.05, noise_sd: 0.1 }
    }
}

impl ObservationSchedule {
    /// Number of advection steps between observations.
    pub fn stride(&self, dt: f64) -> Result<usize> {
        let r = self.interval / dt;
        let n = r.round();
        if !(n >= 1.0) || (r - n).abs() > 1e-6 || !(self.noise_sd >= 0.0) {
            return Err(Error::Config(format!(
                "observation interval {} must be a positive integer multiple of the step {dt}, noise sd {} nonnegative",
                self.interval, self.noise_sd
            )));
        }
        Ok(n as usize)
    }
}

/// Observation locations along a trajectory, every `stride` samples.
///
/// With `skip_first` the placement instant is left out.
pub fn observation_points(traj: &Trajectory, stride: usize, skip_first: bool) -> Vec<SpaceTimePoint> {
    traj.samples
        .iter()
        .step_by(stride)
        .skip(usize::from(skip_first))
        .map(|(s, t)| SpaceTimePoint::new(*s, *t))
        .collect()
}

/// Noisy velocity readings along `traj`, including the placement instant.
pub fn observe(traj: &Trajectory, field: &VectorFieldSeries, sched: &ObservationSchedule, rng: &mut Rng) -> Result<Dataset> {
    let stride = sched.stride(field.times.dt)?;
    let mut data = Dataset::default();
    for (s, t) in traj.samples.iter().step_by(stride) {
        let k = field.times.index_of(*t)?;
        let v = field
            .velocity_at(*s, k)
            .ok_or_else(|| Error::InvalidParam(format!("observation at {s:?} outside the field")))?;
        let (e0, e1) = if sched.noise_sd > 0.0 {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            (sched.noise_sd * a, sched.noise_sd * b)
        } else {
            (0.0, 0.0)
        };
        data.push(SpaceTimePoint::new(*s, *t), [v[0] + e0, v[1] + e1]);
    }
    Ok(data)
}

/// One exact prior draw of the temporal Helmholtz field over `grid × times`.
pub fn sample_ground_truth(
    p: &TemporalHelmholtzParams,
    grid: &SpatialGrid,
    times: &TimeGrid,
    rng: &mut Rng,
) -> Result<VectorFieldSeries> {
    p.validate()?;
    let ssm = spde::SpatioTemporalSsm::new(p, grid, times.dt)?;
    let init = ssm.sample_stationary(rng);
    let (field, _) = spde::propagate_sample(&init, &ssm, grid, times.start, times.len - 1, rng)?;
    Ok(field)
}

const CSV_HEADER: [&str; 9] = ["nx", "ny", "nt", "a1", "b1", "a2", "b2", "t0", "dt"];
const CSV_COLUMNS: [&str; 4] = ["t_index", "cell_index", "u", "v"];

/// Serialize a field on a regular grid to the gridded CSV format.
pub fn field_to_csv(field: &VectorFieldSeries) -> Result<String> {
    if !field.grid.is_regular() {
        return Err(Error::InvalidParam("the CSV format stores regular grids only".into()));
    }
    let [a1, b1, a2, b2] = field.grid.bounds();
    let mut out = String::new();
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{},{}\n",
        field.grid.nx(),
        field.grid.ny(),
        field.times.len,
        a1,
        b1,
        a2,
        b2,
        field.times.start,
        field.times.dt
    ));
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    for k in 0..field.times.len {
        for c in 0..field.grid.len() {
            let v = field.velocity(k, c);
            out.push_str(&format!("{k},{c},{},{}\n", v[0], v[1]));
        }
    }
    Ok(out)
}

pub fn write_field_csv(field: &VectorFieldSeries, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, field_to_csv(field)?)?;
    Ok(())
}

pub fn load_field_csv(path: impl AsRef<Path>) -> Result<VectorFieldSeries> {
    let text = std::fs::read_to_string(path)?;
    parse_field_csv(&text)
}

/// Parse the gridded CSV format.
///
/// Layout: a metadata name line `nx,ny,nt,a1,b1,a2,b2,t0,dt`, a line of their
/// values, a column line `t_index,cell_index,u,v`, then one row per
/// `(time, cell)` in time-major, cell-minor order.
pub fn parse_field_csv(text: &str) -> Result<VectorFieldSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let mut last_line = 0usize;

    let mut next = |what: &str, last_line: &mut usize| -> Result<(usize, csv::StringRecord)> {
        match records.next() {
            None => Err(Error::Parse { line: *last_line + 1, msg: format!("missing {what}") }),
            Some(Err(e)) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(*last_line + 1);
                Err(Error::Parse { line, msg: e.to_string() })
            }
            Some(Ok(r)) => {
                let line = r.position().map(|p| p.line() as usize).unwrap_or(*last_line + 1);
                *last_line = line;
                Ok((line, r))
            }
        }
    };

    let (line, header) = next("metadata header", &mut last_line)?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line,
            msg: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    let (line, meta) = next("metadata values", &mut last_line)?;
    if meta.len() != CSV_HEADER.len() {
        return Err(Error::Parse { line, msg: format!("expected {} metadata values", CSV_HEADER.len()) });
    }
    let count = |i: usize| -> Result<usize> {
        meta[i].parse::<usize>().map_err(|_| Error::Parse {
            line,
            msg: format!("`{}` must be a nonnegative integer, got `{}`", CSV_HEADER[i], &meta[i]),
        })
    };
    let real = |i: usize| -> Result<f64> {
        meta[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                line,
                msg: format!("`{}` must be a finite number, got `{}`", CSV_HEADER[i], &meta[i]),
            })
    };
    let (nx, ny, nt) = (count(0)?, count(1)?, count(2)?);
    let bounds = [real(3)?, real(4)?, real(5)?, real(6)?];
    let (t0, dt) = (real(7)?, real(8)?);
    // every data row takes at least 8 bytes (`0,0,0,0` plus a newline)
    let times = TimeGrid::new(t0, dt, nt).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
    let total = nx
        .checked_mul(ny)
        .and_then(|c| c.checked_mul(nt.max(1)))
        .filter(|n| n.saturating_mul(8) <= text.len())
        .ok_or_else(|| Error::Parse { line, msg: "declared field size exceeds the input".into() })?;
    let grid = SpatialGrid::regular(nx, ny, bounds).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
    let ncell = grid.len();

    let (line, cols) = next("column header", &mut last_line)?;
    if cols.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(Error::Parse {
            line,
            msg: format!("expected column header `{}`", CSV_COLUMNS.join(",")),
        });
    }

    let mut data = Vec::new();
    for row in 0..total {
        let (want_t, want_c) = (row / ncell, row % ncell);
        let what = format!("row t_index={want_t}, cell_index={want_c}");
        let (line, rec) = next(&what, &mut last_line)?;
        if rec.len() != 4 {
            return Err(Error::Parse { line, msg: format!("expected 4 fields for {what}, found {}", rec.len()) });
        }
        let t_index = rec[0].parse::<usize>().ok();
        let cell = rec[1].parse::<usize>().ok();
        if t_index != Some(want_t) || cell != Some(want_c) {
            return Err(Error::Parse {
                line,
                msg: format!("expected {what}, found t_index=`{}`, cell_index=`{}`", &rec[0], &rec[1]),
            });
        }
        for f in [&rec[2], &rec[3]] {
            match f.parse::<f64>() {
                Ok(v) if v.is_finite() => data.push(v),
                _ => {
                    return Err(Error::Parse { line, msg: format!("non-finite or malformed velocity `{f}` in {what}") })
                }
            }
        }
    }
    if let Ok((line, _)) = next("end of file", &mut last_line) {
        return Err(Error::Parse { line, msg: format!("unexpected row beyond the declared {total} rows") });
    }
    VectorFieldSeries::from_data(grid, times, data)
}

/// Posterior-mean-style field values as a vector `[u0, v0, u1, v1, ...]` per time.
pub fn slice_vector(field: &VectorFieldSeries, k: usize) -> DVector<f64> {
    DVector::from_column_slice(field.slice(k))
}
