//! Sampler ODE integration with kinetic-energy bookkeeping.
//!
//! Trajectories solve `dz/dt = v(t, z)` from `z(0) = x0` on a uniform grid.
//! At every grid node the velocity and the instantaneous kinetic energy
//! `K_t = ||v(t, z_t)||^2` are recorded; the integrated energy `E_T` is the
//! trapezoid rule over the same nodes.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{check_dim, norm, norm_sq};
use crate::velocity::VelocityField;
use crate::{Dataset, Error, Result, SourceKernel};

/// States with a coordinate beyond this magnitude count as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    pub steps: usize,
    pub t_end: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            steps: 256,
            t_end: 0.99,
        }
    }
}

impl IntegratorConfig {
    pub fn new(method: Method, steps: usize, t_end: f64) -> Result<Self> {
        let cfg = Self {
            method,
            steps,
            t_end,
        };
        cfg.validate(1.0)?;
        Ok(cfg)
    }

    pub fn rk4(steps: usize, t_end: f64) -> Result<Self> {
        Self::new(Method::Rk4, steps, t_end)
    }

    pub fn euler(steps: usize, t_end: f64) -> Result<Self> {
        Self::new(Method::Euler, steps, t_end)
    }

    pub fn validate(&self, t_max: f64) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be at least 1".into()));
        }
        if !(self.t_end > 0.0 && self.t_end <= t_max) {
            return Err(Error::InvalidParameter(format!(
                "t_end must lie in (0, {t_max}], got {}",
                self.t_end
            )));
        }
        Ok(())
    }

    /// Time of grid node `i`.
    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.t_end * i as f64 / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }

    /// Index of the grid node at time `t`, if `t` is (numerically) a node.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let x = t / self.t_end * self.steps as f64;
        let i = x.round();
        if i < 0.0 || i > self.steps as f64 || (x - i).abs() > 1e-9 {
            return None;
        }
        Some(i as usize)
    }
}

/// A discretized sampler trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub kinetic: Vec<f64>,
    pub integrated_energy: f64,
}

impl Trajectory {
    pub fn endpoint(&self) -> &[f64] {
        self.states.last().expect("trajectories hold at least two nodes")
    }

    /// Trapezoid rule over the stored kinetic energies.
    pub fn recompute_energy(&self) -> f64 {
        trapezoid(&self.times, &self.kinetic)
    }
}

/// Trapezoid rule on a (possibly non-uniform) grid.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    let mut acc = TrapezoidAccumulator::default();
    for (t, v) in times.iter().zip(values) {
        acc.push(*t, *v);
    }
    acc.total
}

/// Streaming trapezoid rule; gives bit-identical results to [`trapezoid`].
#[derive(Debug, Default)]
struct TrapezoidAccumulator {
    prev: Option<(f64, f64)>,
    total: f64,
}

impl TrapezoidAccumulator {
    #[inline]
    fn push(&mut self, t: f64, v: f64) {
        if let Some((t0, v0)) = self.prev {
            self.total += 0.5 * (t - t0) * (v0 + v);
        }
        self.prev = Some((t, v));
    }
}

fn diverged(v: &[f64]) -> bool {
    v.iter().any(|x| !(x.abs() <= DIVERGENCE_LIMIT))
}

/// Runs the integrator and reports every node as `(index, t, state, velocity)`.
fn drive<F, V>(field: &F, x0: &[f64], config: &IntegratorConfig, mut visit: V) -> Result<()>
where
    F: VelocityField + ?Sized,
    V: FnMut(usize, f64, &[f64], &[f64]),
{
    let d = field.dim();
    check_dim(d, x0)?;
    config.validate(field.t_max())?;
    if diverged(x0) {
        return Err(Error::IntegrationDiverged { step: 0, sample: None });
    }
    let mut state = x0.to_vec();
    let mut vel = vec![0.0; d];
    let (mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);

    field.velocity_into(0.0, &state, &mut vel)?;
    if diverged(&vel) {
        return Err(Error::IntegrationDiverged { step: 0, sample: None });
    }
    visit(0, 0.0, &state, &vel);

    for i in 0..config.steps {
        let t = config.time(i);
        let t_next = config.time(i + 1);
        let h = t_next - t;
        match config.method {
            Method::Euler => {
                for (s, v) in state.iter_mut().zip(&vel) {
                    *s += h * v;
                }
            }
            Method::Rk4 => {
                let t_mid = t + 0.5 * h;
                for j in 0..d {
                    tmp[j] = state[j] + 0.5 * h * vel[j];
                }
                field.velocity_into(t_mid, &tmp, &mut k2)?;
                for j in 0..d {
                    tmp[j] = state[j] + 0.5 * h * k2[j];
                }
                field.velocity_into(t_mid, &tmp, &mut k3)?;
                for j in 0..d {
                    tmp[j] = state[j] + h * k3[j];
                }
                field.velocity_into(t_next, &tmp, &mut k4)?;
                for j in 0..d {
                    state[j] += h / 6.0 * (vel[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                }
            }
        }
        if diverged(&state) {
            return Err(Error::IntegrationDiverged { step: i + 1, sample: None });
        }
        field.velocity_into(t_next, &state, &mut vel)?;
        if diverged(&vel) {
            return Err(Error::IntegrationDiverged { step: i + 1, sample: None });
        }
        visit(i + 1, t_next, &state, &vel);
    }
    Ok(())
}

/// Integrates `dz/dt = v(t, z)` from `(0, x0)` to `config.t_end`.
pub fn integrate<F: VelocityField + ?Sized>(
    field: &F,
    x0: &[f64],
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    let n = config.steps + 1;
    let mut traj = Trajectory {
        times: Vec::with_capacity(n),
        states: Vec::with_capacity(n),
        velocities: Vec::with_capacity(n),
        kinetic: Vec::with_capacity(n),
        integrated_energy: 0.0,
    };
    drive(field, x0, config, |_, t, z, v| {
        traj.times.push(t);
        traj.states.push(z.to_vec());
        traj.velocities.push(v.to_vec());
        traj.kinetic.push(norm_sq(v));
    })?;
    traj.integrated_energy = traj.recompute_energy();
    Ok(traj)
}

/// Integrates and returns only the endpoint.
pub fn endpoint<F: VelocityField + ?Sized>(
    field: &F,
    x0: &[f64],
    config: &IntegratorConfig,
) -> Result<Vec<f64>> {
    let mut end = Vec::new();
    drive(field, x0, config, |i, _, z, _| {
        if i == config.steps {
            end = z.to_vec();
        }
    })?;
    Ok(end)
}

/// Per-trajectory energies from a batch run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRow {
    pub sample_index: usize,
    pub integrated_energy: f64,
    /// `K_t` at each probe time, in the table's probe order.
    pub kinetic: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTable {
    pub probe_times: Vec<f64>,
    pub rows: Vec<EnergyRow>,
}

/// Formats a float with 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl EnergyTable {
    pub fn energies(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.integrated_energy).collect()
    }

    /// The `K_t` column for probe `k`.
    pub fn kinetic_column(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.kinetic[k]).collect()
    }

    pub fn header(&self) -> String {
        let mut cols = vec!["sample_index".to_string(), "E_T".to_string()];
        cols.extend(self.probe_times.iter().map(|t| format!("K_t@{t}")));
        cols.join(",")
    }

    /// Writes `# `-prefixed comment lines, the header, then one row per sample.
    pub fn write_csv(&self, mut w: impl Write, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "{}", self.header())?;
        for row in &self.rows {
            write!(w, "{},{}", row.sample_index, format_float(row.integrated_energy))?;
            for k in &row.kinetic {
                write!(w, ",{}", format_float(*k))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads a table written by [`EnergyTable::write_csv`]; comment lines are skipped.
    pub fn read_csv(reader: impl BufRead) -> Result<Self> {
        let bad = |msg: String| Error::InvalidParameter(format!("energy CSV: {msg}"));
        let mut lines = reader
            .lines()
            .enumerate()
            .filter(|(_, l)| !matches!(l, Ok(s) if s.starts_with('#') || s.trim().is_empty()));
        let (_, header) = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let header = header?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "sample_index" || cols[1] != "E_T" {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let probe_times = cols[2..]
            .iter()
            .map(|c| {
                c.strip_prefix("K_t@")
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| bad(format!("bad column {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for (lineno, line) in lines {
            let line = line?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(bad(format!("line {}: expected {} fields", lineno + 1, cols.len())));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("line {}: cannot parse {s:?}", lineno + 1)))
            };
            let sample_index = fields[0]
                .trim()
                .parse::<usize>()
                .map_err(|_| bad(format!("line {}: bad sample index", lineno + 1)))?;
            rows.push(EnergyRow {
                sample_index,
                integrated_energy: parse(fields[1])?,
                kinetic: fields[2..].iter().map(|s| parse(s)).collect::<Result<_>>()?,
            });
        }
        Ok(Self { probe_times, rows })
    }
}

fn energy_row<F: VelocityField + ?Sized>(
    field: &F,
    kernel: &SourceKernel,
    config: &IntegratorConfig,
    seed: u64,
    index: usize,
    probe_nodes: &[usize],
) -> Result<EnergyRow> {
    let x0 = kernel.sample_point(seed, index as u64);
    let mut acc = TrapezoidAccumulator::default();
    let mut kinetic = vec![0.0; probe_nodes.len()];
    drive(field, &x0, config, |i, t, _, v| {
        let k = norm_sq(v);
        acc.push(t, k);
        for (slot, node) in kinetic.iter_mut().zip(probe_nodes) {
            if *node == i {
                *slot = k;
            }
        }
    })
    .map_err(|e| e.with_sample(index))?;
    Ok(EnergyRow {
        sample_index: index,
        integrated_energy: acc.total,
        kinetic,
    })
}

/// Evaluates `f(0), ..., f(count - 1)` on `workers` threads and returns the
/// results in index order. The first error by index wins.
pub fn map_indexed<T, G>(count: usize, workers: usize, f: G) -> Result<Vec<T>>
where
    T: Send,
    G: Fn(usize) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = if workers <= 1 {
        (0..count).map(&f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        pool.install(|| (0..count).into_par_iter().map(&f).collect())
    };
    results.into_iter().collect()
}

/// Integrates `count` trajectories started from `kernel` draws and records
/// `E_T` plus `K_t` at each probe time.
///
/// Row `j` starts from the point in stream `(seed, j)`; rows are computed
/// independently, so the table is identical for any `workers`.
pub fn batch_energies<F: VelocityField + ?Sized>(
    field: &F,
    kernel: &SourceKernel,
    config: &IntegratorConfig,
    seed: u64,
    count: usize,
    probe_times: &[f64],
    workers: usize,
) -> Result<EnergyTable> {
    if kernel.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            found: kernel.dim(),
        });
    }
    if count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    config.validate(field.t_max())?;
    let probe_nodes = probe_times
        .iter()
        .map(|&t| {
            config.node_index(t).ok_or_else(|| {
                Error::InvalidParameter(format!("probe time {t} is not a grid node"))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = map_indexed(count, workers, |j| {
        energy_row(field, kernel, config, seed, j, &probe_nodes)
    })?;
    Ok(EnergyTable {
        probe_times: probe_times.to_vec(),
        rows,
    })
}

/// Checks `||z_t|| <= (||x0|| + M t) / (1 - t)` at every node of a
/// rectified-flow trajectory, with slack `1e-8 (1 + ||x0||)`.
pub fn trajectory_norm_bound_check(trajectory: &Trajectory, dataset: &Dataset) -> bool {
    let r0 = norm(&trajectory.states[0]);
    let m = dataset.max_norm();
    let eps = 1e-8 * (1.0 + r0);
    trajectory
        .times
        .iter()
        .zip(&trajectory.states)
        .all(|(t, z)| norm(z) <= (r0 + m * t) / (1.0 - t) + eps)
}
