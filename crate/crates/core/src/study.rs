//! Experiment harness: penalization error tables over `(N, C)`, the decay
//! fit of a table row, stability across random starts, α-sweeps with warm
//! starts, α calibration, and partition comparisons.

use std::io::Write;
use std::path::{Path, PathBuf};

use pathfinding::matrix::Matrix;

use crate::eigen::{solve, PenalizedOperator, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::{Boundary, GridSpec};
use crate::optimizer::{optimize, OptimizerConfig, RunLog, Termination};
use crate::par;
use crate::phase::{argmax_partition, LabelField, PhaseSystem};
use crate::reference::{bessel_zero, rasterize, ReferenceShape};
use crate::relaxed::CostBreakdown;

/// Half-width of the square box `[-L, L]²` holding the tabulated shapes.
pub const TABLE_HALF_WIDTH: f64 = 1.5;

/// Relative change below which consecutive table entries count as a plateau.
pub const PLATEAU_THRESHOLD: f64 = 0.05;

/// How an `N`-point table grid covers `[-L, L]²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridConvention {
    /// `N` interior nodes of a Dirichlet grid, spacing `2L/(N+1)`.
    Interior,
    /// The shape is sampled on `N` equispaced nodes spanning `[-L, L]`
    /// endpoints included, while the stencil uses spacing `2L/N`.
    ///
    /// Realized as the interior grid of `[-L', L']²`, `L' = L(N+1)/N`, with
    /// the shape dilated by `(N-1)/N`; the operator is the same matrix.
    Endpoint,
}

impl std::str::FromStr for GridConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interior" => Ok(GridConvention::Interior),
            "endpoint" => Ok(GridConvention::Endpoint),
            _ => Err(Error::InvalidArgument(format!(
                "unknown grid convention {s:?} (expected interior or endpoint)"
            ))),
        }
    }
}

/// Grid and shape dilation for one table row.
pub fn table_grid(n: usize, convention: GridConvention) -> Result<(GridSpec, f64)> {
    let l = TABLE_HALF_WIDTH;
    match convention {
        GridConvention::Interior => Ok((GridSpec::square(-l, l, n, Boundary::DirichletBox)?, 1.0)),
        GridConvention::Endpoint => {
            if n < 2 {
                return Err(Error::InvalidArgument(format!("endpoint grids need N >= 2, got {n}")));
            }
            let nf = n as f64;
            let half = l * (nf + 1.0) / nf;
            let grid = GridSpec::square(-half, half, n, Boundary::DirichletBox)?;
            Ok((grid, (nf - 1.0) / nf))
        }
    }
}

/// One `(N, C)` cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    /// `max_k |λ_k^h - λ_k| / λ_k` and the `k` (1-based) attaining it.
    Value { error: f64, worst_k: usize },
    Missing { reason: String },
}

impl Entry {
    pub fn value(&self) -> Option<f64> {
        match self {
            Entry::Value { error, .. } => Some(*error),
            Entry::Missing { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub shape: ReferenceShape,
    pub convention: GridConvention,
    pub ns: Vec<usize>,
    pub cs: Vec<f64>,
    pub k_max: usize,
    /// `entries[row][col]` for `ns[row]`, `cs[col]`.
    pub entries: Vec<Vec<Entry>>,
}

impl ErrorTable {
    pub fn row(&self, n: usize) -> Option<&[Entry]> {
        self.ns.iter().position(|&m| m == n).map(|r| self.entries[r].as_slice())
    }

    pub fn get(&self, n: usize, c: f64) -> Option<f64> {
        let col = self.cs.iter().position(|&x| x == c)?;
        self.row(n)?[col].value()
    }

    /// Long format, one line per cell: `N,C,max_rel_error,worst_k,note`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "N,C,max_rel_error,worst_k,note")?;
        for (n, row) in self.ns.iter().zip(&self.entries) {
            for (c, e) in self.cs.iter().zip(row) {
                match e {
                    Entry::Value { error, worst_k } => writeln!(w, "{n},{c:e},{error:e},{worst_k},")?,
                    Entry::Missing { reason } => {
                        writeln!(w, "{n},{c:e},,,\"{}\"", reason.replace('"', "'"))?
                    }
                }
            }
        }
        Ok(())
    }
}

/// Relative errors of the first `k_max` penalized eigenvalues against the
/// analytic spectrum, for every `(N, C)` pair. Cells are independent jobs;
/// solver failures become [`Entry::Missing`].
pub fn error_table(
    shape: &ReferenceShape,
    ns: &[usize],
    cs: &[f64],
    k_max: usize,
    tol: f64,
    seed: u64,
    convention: GridConvention,
) -> Result<ErrorTable> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    if let Some(c) = cs.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
        return Err(Error::InvalidArgument(format!("penalization must be finite and >= 0, got {c}")));
    }
    let exact = shape.eigenvalues(k_max);
    let mut shapes = Vec::with_capacity(ns.len());
    for &n in ns {
        let (grid, s) = table_grid(n, convention)?;
        shapes.push(rasterize(&shape.scaled(s), &grid)?);
    }
    let cells: Vec<(usize, usize)> = (0..ns.len()).flat_map(|r| (0..cs.len()).map(move |c| (r, c))).collect();
    let results = par::map_ordered(&cells, |_, &(r, c)| {
        let cell = || -> Result<Entry> {
            let op = PenalizedOperator::new(&shapes[r], cs[c])?;
            let sol = solve(&op, &SolverOptions::new(k_max, tol, seed))?;
            let (mut error, mut worst_k) = (0.0, 1);
            for (k, (pair, ex)) in sol.pairs.iter().zip(&exact).enumerate() {
                let e = (pair.lambda - ex).abs() / ex;
                if e > error {
                    error = e;
                    worst_k = k + 1;
                }
            }
            log::info!("N={} C={:e}: max relative error {error:.3e} (k={worst_k})", ns[r], cs[c]);
            Ok(Entry::Value { error, worst_k })
        };
        cell().unwrap_or_else(|e| Entry::Missing { reason: e.to_string() })
    });
    let mut entries = vec![Vec::with_capacity(cs.len()); ns.len()];
    for ((r, _), e) in cells.into_iter().zip(results) {
        entries[r].push(e);
    }
    Ok(ErrorTable {
        shape: *shape,
        convention,
        ns: ns.to_vec(),
        cs: cs.to_vec(),
        k_max,
        entries,
    })
}

/// Least-squares slope of `log(error)` against `log(C)` over the
/// pre-plateau part of row `n`.
///
/// The pre-plateau part is the longest leading run of entries in which each
/// one is below the previous by more than [`PLATEAU_THRESHOLD`] (relative),
/// so it ends at the first plateau or rebound. At least three points are
/// required.
pub fn decay_exponent(table: &ErrorTable, n: usize) -> Result<f64> {
    let row = table
        .row(n)
        .ok_or_else(|| Error::InvalidArgument(format!("no row for N={n}")))?;
    if table.cs.windows(2).any(|w| !(w[1] > w[0] && w[0] > 0.0)) {
        return Err(Error::InvalidArgument("C columns must be positive and increasing".into()));
    }
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (e, c) in row.iter().zip(&table.cs) {
        let Some(v) = e.value().filter(|v| *v > 0.0) else { break };
        if let Some(&(_, prev)) = points.last() {
            if v >= (1.0 - PLATEAU_THRESHOLD) * prev.exp() {
                break;
            }
        }
        points.push((c.ln(), v.ln()));
    }
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "row N={n} has {} pre-plateau entries, need 3",
            points.len()
        )));
    }
    let m = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / m, b + y / m));
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Final state of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub cost: CostBreakdown,
    pub iterations: usize,
    pub termination: Termination,
    pub labels: LabelField,
    /// `hx·hy` times the node count of each competing label.
    pub areas: Vec<f64>,
}

impl RunSummary {
    pub fn from_log(log: &RunLog, seed: u64) -> Self {
        let labels = argmax_partition(&log.final_phases);
        let cell = log.final_phases.grid().cell_area();
        let h = log.final_phases.h();
        let areas = labels.counts()[..h].iter().map(|&c| c as f64 * cell).collect();
        RunSummary {
            seed,
            cost: log.final_cost().clone(),
            iterations: log.records.last().map_or(0, |r| r.iteration),
            termination: log.termination,
            labels,
            areas,
        }
    }

    pub fn occupied_area(&self) -> f64 {
        self.areas.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub runs: Vec<RunSummary>,
    /// `(max - min)/|min|` over the final totals.
    pub spread: f64,
}

impl StabilityReport {
    /// Smallest pairwise [`partition_agreement`] between the runs.
    pub fn min_agreement(&self, periodic: bool) -> Result<f64> {
        let mut worst = 1.0_f64;
        for (i, a) in self.runs.iter().enumerate() {
            for b in &self.runs[i + 1..] {
                worst = worst.min(partition_agreement(&a.labels, &b.labels, periodic)?);
            }
        }
        Ok(worst)
    }
}

/// Runs `cfg` from random starts with seeds `0..n_seeds`.
pub fn stability_study(cfg: &OptimizerConfig, grid: &GridSpec, n_seeds: usize) -> Result<StabilityReport> {
    let seeds: Vec<u64> = (0..n_seeds as u64).collect();
    stability_study_seeds(cfg, grid, &seeds)
}

pub fn stability_study_seeds(cfg: &OptimizerConfig, grid: &GridSpec, seeds: &[u64]) -> Result<StabilityReport> {
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a stability study needs at least 2 seeds, got {}",
            seeds.len()
        )));
    }
    let runs = par::map_ordered(seeds, |_, &seed| {
        let cfg = OptimizerConfig {
            seed,
            run_id: format!("{}_seed{seed}", cfg.run_id),
            ..cfg.clone()
        };
        let log = optimize(&cfg, grid, None)?;
        if let Some(dir) = &cfg.checkpoint_dir {
            log.write_outputs(dir, &cfg.run_id)?;
        }
        log::info!("seed {seed}: final total {:.6}", log.final_cost().total);
        Ok(RunSummary::from_log(&log, seed))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let totals: Vec<f64> = runs.iter().map(|r| r.cost.total).collect();
    let min = totals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = totals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityReport {
        runs,
        spread: (max - min) / min.abs(),
    })
}

/// Largest fraction of nodes on which `a` and `b` agree after relabelling the
/// competing phases of `b` and, for periodic grids, a cyclic translation.
/// The empty label is never relabelled.
pub fn partition_agreement(a: &LabelField, b: &LabelField, periodic: bool) -> Result<f64> {
    if (a.grid_nx, a.grid_ny, a.h) != (b.grid_nx, b.grid_ny, b.h) {
        return Err(Error::Dimension(format!(
            "{}x{} partition with h={} against {}x{} with h={}",
            a.grid_nx, a.grid_ny, a.h, b.grid_nx, b.grid_ny, b.h
        )));
    }
    let (nx, ny, h) = (a.grid_nx, a.grid_ny, a.h);
    let shifts: Vec<(usize, usize)> = if periodic {
        (0..ny).flat_map(|dy| (0..nx).map(move |dx| (dx, dy))).collect()
    } else {
        vec![(0, 0)]
    };
    let best = par::map_ordered(&shifts, |_, &(dx, dy)| {
        let mut confusion = vec![0i64; h * h];
        let mut empty = 0usize;
        for j in 0..ny {
            for i in 0..nx {
                let la = a.at(i, j) as usize;
                let lb = b.at((i + dx) % nx, (j + dy) % ny) as usize;
                match (la <= h, lb <= h) {
                    (true, true) => confusion[(la - 1) * h + lb - 1] += 1,
                    (false, false) => empty += 1,
                    _ => {}
                }
            }
        }
        let (matched, _) = pathfinding::kuhn_munkres::kuhn_munkres(&Matrix::from_vec(h, h, confusion).unwrap());
        matched as usize + empty
    })
    .into_iter()
    .max()
    .unwrap_or(0);
    Ok(best as f64 / (nx * ny) as f64)
}

/// Top-left corners of 2×2 node blocks holding three or more distinct
/// competing labels. Blocks wrap around on periodic grids.
pub fn triple_point_blocks(labels: &LabelField, periodic: bool) -> Vec<(usize, usize)> {
    let (nx, ny) = (labels.grid_nx, labels.grid_ny);
    let (ix, iy) = if periodic { (nx, ny) } else { (nx - 1, ny - 1) };
    let mut found = Vec::new();
    for j in 0..iy {
        for i in 0..ix {
            let mut block = [
                labels.at(i, j),
                labels.at((i + 1) % nx, j),
                labels.at(i, (j + 1) % ny),
                labels.at((i + 1) % nx, (j + 1) % ny),
            ];
            block.sort_unstable();
            let mut distinct = 0;
            for (q, l) in block.iter().enumerate() {
                if (*l as usize) <= labels.h && (q == 0 || block[q - 1] != *l) {
                    distinct += 1;
                }
            }
            if distinct >= 3 {
                found.push((i, j));
            }
        }
    }
    found
}

/// One point of an α-sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub alpha: f64,
    pub summary: RunSummary,
    /// Label raster, when outputs were written.
    pub raster: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Ascending in α.
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn alphas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.alpha).collect()
    }

    /// `alpha,total,occupied_area,area_1..area_h` per point.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let h = self.points.first().map_or(0, |p| p.summary.areas.len());
        write!(w, "alpha,total,occupied_area")?;
        for l in 1..=h {
            write!(w, ",area_{l}")?;
        }
        writeln!(w)?;
        for p in &self.points {
            write!(w, "{:e},{:e},{:e}", p.alpha, p.summary.cost.total, p.summary.occupied_area())?;
            for a in &p.summary.areas {
                write!(w, ",{a:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Optimizes for each α, largest first, each run starting from the result
/// of the previous one; the first run starts from `random_init` with
/// `base.seed`. With `out`, every run's outputs go there as
/// `<run_id>_alpha<index>.*`.
pub fn alpha_sweep(base: &OptimizerConfig, grid: &GridSpec, alphas: &[f64], out: Option<&Path>) -> Result<SweepResult> {
    check_increasing(alphas)?;
    let mut points = Vec::with_capacity(alphas.len());
    let mut start: Option<PhaseSystem> = None;
    for (idx, &alpha) in alphas.iter().enumerate().rev() {
        let cfg = OptimizerConfig {
            alpha,
            run_id: format!("{}_alpha{idx}", base.run_id),
            ..base.clone()
        };
        let log = optimize(&cfg, grid, start.take())?;
        points.push(sweep_point(&cfg, &log, out)?);
        start = Some(log.final_phases);
    }
    points.reverse();
    Ok(SweepResult { points })
}

fn check_increasing(alphas: &[f64]) -> Result<()> {
    if alphas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(format!("alphas must be strictly increasing, got {alphas:?}")));
    }
    Ok(())
}

fn sweep_point(cfg: &OptimizerConfig, log: &RunLog, out: Option<&Path>) -> Result<SweepPoint> {
    let raster = match out {
        Some(dir) => {
            log.write_outputs(dir, &cfg.run_id)?;
            Some(dir.join(format!("{}.ppm", cfg.run_id)))
        }
        None => None,
    };
    let summary = RunSummary::from_log(log, cfg.seed);
    log::info!(
        "alpha {}: total {:.6}, occupied area {:.6}",
        cfg.alpha,
        summary.cost.total,
        summary.occupied_area()
    );
    Ok(SweepPoint {
        alpha: cfg.alpha,
        summary,
        raster,
    })
}

/// Independent runs from `random_init` with `base.seed`, one per α.
pub fn alpha_scan(base: &OptimizerConfig, grid: &GridSpec, alphas: &[f64], out: Option<&Path>) -> Result<SweepResult> {
    check_increasing(alphas)?;
    let points = par::map_ordered(alphas, |idx, &alpha| {
        let cfg = OptimizerConfig {
            alpha,
            run_id: format!("{}_alpha{idx}", base.run_id),
            ..base.clone()
        };
        sweep_point(&cfg, &optimize(&cfg, grid, None)?, out)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub sweep: SweepResult,
    pub target: f64,
    pub best_alpha: f64,
    pub best_total: f64,
}

impl Calibration {
    pub fn relative_miss(&self) -> f64 {
        (self.best_total - self.target).abs() / self.target.abs()
    }
}

/// Runs every α and picks the one whose final total is closest to `target`.
/// With `cold`, each α starts from a random system ([`alpha_scan`]);
/// otherwise the runs are chained as in [`alpha_sweep`].
pub fn calibrate_alpha(
    base: &OptimizerConfig,
    grid: &GridSpec,
    alphas: &[f64],
    target: f64,
    cold: bool,
    out: Option<&Path>,
) -> Result<Calibration> {
    if alphas.is_empty() {
        return Err(Error::InvalidArgument("calibration needs at least one alpha".into()));
    }
    let sweep = if cold {
        alpha_scan(base, grid, alphas, out)?
    } else {
        alpha_sweep(base, grid, alphas, out)?
    };
    let best = sweep
        .points
        .iter()
        .min_by(|a, b| (a.summary.cost.total - target).abs().total_cmp(&(b.summary.cost.total - target).abs()))
        .expect("nonempty sweep");
    Ok(Calibration {
        best_alpha: best.alpha,
        best_total: best.summary.cost.total,
        target,
        sweep,
    })
}

/// Radius `(λ₁(B₁)/(απ))^{1/4}` of the optimal single disk, `α` in area units.
pub fn circle_packing_radius(alpha: f64) -> f64 {
    let j = bessel_zero(0, 1);
    (j * j / (alpha * std::f64::consts::PI)).powf(0.25)
}

/// Inverse of [`circle_packing_radius`].
pub fn alpha_for_radius(radius: f64) -> f64 {
    let j = bessel_zero(0, 1);
    j * j / (std::f64::consts::PI * radius.powi(4))
}

/// Converts an area-unit α to the node-average units of the cost.
pub fn alpha_in_node_units(alpha: f64, grid: &GridSpec) -> f64 {
    alpha * grid.discrete_area()
}
