//! Projected gradient descent over phase systems with an expanding linesearch.
//!
//! Each iteration evaluates the cost and its nodal gradient, takes
//! `d = -∇F`, and searches along `Π(φ + γ·d)`: the step starts at `γ₀` and is
//! multiplied by `ω` while the cost keeps strictly decreasing. When even `γ₀`
//! fails to decrease the cost, the step is halved up to `max_halvings` times
//! before the run is declared stationary. With `warm_gamma` set, the search
//! starts at `max(γ₀, γ_prev/ω)` instead, where `γ_prev` is the previously
//! accepted step, and falls back to `γ₀` when that start does not decrease
//! the cost. The run stops once
//! `γ·‖∇F‖_∞ < ε` or after `p_max` iterations.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::io::{write_phases, write_ppm};
use crate::par;
use crate::phase::{argmax_partition, project_simplex, random_init, PhaseSystem};
use crate::relaxed::{evaluate, gradient_of, CostBreakdown, CostParams, Evaluation};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub k: usize,
    pub alpha: f64,
    pub h: usize,
    pub c: f64,
    pub gamma0: f64,
    pub omega: f64,
    pub eps: f64,
    pub p_max: usize,
    pub seed: u64,
    pub eig_tol: f64,
    /// Cap on trials in one expanding search.
    pub max_expansions: usize,
    pub max_halvings: usize,
    /// Start each search just below the previously accepted step.
    pub warm_gamma: bool,
    pub allow_higher_k: bool,
    /// Iterations between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub run_id: String,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            k: 1,
            alpha: 0.0,
            h: 2,
            c: 1e4,
            gamma0: 1e-4,
            omega: 2.0,
            eps: 1e-6,
            p_max: 1000,
            seed: 0,
            eig_tol: 1e-8,
            max_expansions: 60,
            max_halvings: 20,
            warm_gamma: true,
            allow_higher_k: false,
            checkpoint_every: 25,
            checkpoint_dir: None,
            run_id: "run".into(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.h == 0 {
            return bad("h must be at least 1".into());
        }
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return bad(format!("gamma0 must be positive, got {}", self.gamma0));
        }
        if !(self.omega > 1.0 && self.omega.is_finite()) {
            return bad(format!("omega must exceed 1, got {}", self.omega));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.eig_tol > 0.0) {
            return bad(format!("eig_tol must be positive, got {}", self.eig_tol));
        }
        if self.max_expansions == 0 {
            return bad("max_expansions must be at least 1".into());
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return bad(format!("run_id {:?} is not a plain file stem", self.run_id));
        }
        self.cost_params().validate()
    }

    pub fn cost_params(&self) -> CostParams {
        CostParams {
            c: self.c,
            k: self.k,
            alpha: self.alpha,
            tol: self.eig_tol,
            seed: self.seed,
            allow_higher_k: self.allow_higher_k,
        }
    }
}

/// Result of an expanding search along one direction.
#[derive(Debug, Clone)]
pub struct SearchOutcome<T> {
    pub gamma: f64,
    pub cost: f64,
    pub value: T,
    /// False when the first trial did not beat the starting cost; the
    /// outcome then holds that first trial.
    pub improving: bool,
    pub trials: usize,
}

/// Expanding search: evaluates `trial(γ)` for `γ = γ₀, γ₀ω, γ₀ω², …` while
/// the cost strictly decreases and returns the last decreasing trial.
pub fn expanding_search<T, F>(c0: f64, gamma0: f64, omega: f64, max_trials: usize, mut trial: F) -> Result<SearchOutcome<T>>
where
    F: FnMut(f64) -> Result<(f64, T)>,
{
    let mut run = |gamma: f64| {
        trial(gamma).map_err(|e| Error::Trial {
            gamma,
            source: Box::new(e),
        })
    };
    let (cost, value) = run(gamma0)?;
    let mut best = SearchOutcome {
        gamma: gamma0,
        cost,
        value,
        improving: cost < c0,
        trials: 1,
    };
    if !best.improving {
        return Ok(best);
    }
    let mut gamma = gamma0;
    while best.trials < max_trials {
        gamma *= omega;
        let (cost, value) = run(gamma)?;
        best.trials += 1;
        if cost < best.cost {
            best.gamma = gamma;
            best.cost = cost;
            best.value = value;
        } else {
            break;
        }
    }
    Ok(best)
}

/// `Π(φ + γ·d)`.
pub fn step(current: &PhaseSystem, direction: &[ScalarField], gamma: f64) -> Result<PhaseSystem> {
    if direction.len() != current.fields().len() {
        return Err(Error::Dimension(format!(
            "{} direction fields for {} phases",
            direction.len(),
            current.fields().len()
        )));
    }
    let raw = current
        .fields()
        .iter()
        .zip(direction)
        .map(|(f, d)| {
            f.check_same_grid(d)?;
            let mut v = f.values().to_vec();
            par::axpy(gamma, d.values(), &mut v);
            ScalarField::new(*f.grid(), v)
        })
        .collect::<Result<Vec<_>>>()?;
    project_simplex(raw)
}

/// One linesearch along `direction` from `current`, whose evaluation is
/// `base`; trials are warm-started from `base`.
pub fn linesearch(
    current: &PhaseSystem,
    base: &Evaluation,
    direction: &[ScalarField],
    cfg: &OptimizerConfig,
    gamma0: f64,
) -> Result<SearchOutcome<(PhaseSystem, Evaluation)>> {
    let params = cfg.cost_params();
    let still = sup_norm(direction) == 0.0;
    expanding_search(base.breakdown.total, gamma0, cfg.omega, cfg.max_expansions, |gamma| {
        let ps = step(current, direction, gamma)?;
        if still {
            // Π(φ) equals φ up to rounding; keep the known cost
            return Ok((base.breakdown.total, (ps, base.clone())));
        }
        let eval = evaluate(&ps, &params, Some(base))?;
        Ok((eval.breakdown.total, (ps, eval)))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: CostBreakdown,
    /// Accepted step; 0 for the initial record.
    pub gamma: f64,
    /// `‖∇F‖_∞` at the point the step started from; 0 for the initial record.
    pub grad_sup: f64,
    pub solver_applications: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// `γ·‖∇F‖_∞ < ε`.
    StepCriterion,
    IterationCap,
    /// No decreasing step down to `γ₀/2^max_halvings`.
    NoDescent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub final_phases: PhaseSystem,
}

impl RunLog {
    pub fn final_cost(&self) -> &CostBreakdown {
        &self.records.last().expect("a run log always has the initial record").cost
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let h = self.final_phases.h();
        writeln!(w, "{},gamma,grad_sup,solver_applications", CostBreakdown::csv_header(h))?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:e},{:e},{}",
                r.cost.csv_row(r.iteration),
                r.gamma,
                r.grad_sup,
                r.solver_applications
            )?;
        }
        Ok(())
    }

    /// Writes `<run_id>.csv`, `<run_id>.ppm`, `<run_id>.pgm` and the final
    /// checkpoint `<run_id>.phases` into `dir`.
    pub fn write_outputs(&self, dir: &Path, run_id: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut csv = BufWriter::new(fs::File::create(dir.join(format!("{run_id}.csv")))?);
        self.write_csv(&mut csv)?;
        csv.flush()?;
        let labels = argmax_partition(&self.final_phases);
        let mut ppm = BufWriter::new(fs::File::create(dir.join(format!("{run_id}.ppm")))?);
        write_ppm(&mut ppm, &labels)?;
        ppm.flush()?;
        let mut pgm = BufWriter::new(fs::File::create(dir.join(format!("{run_id}.pgm")))?);
        crate::io::write_pgm(&mut pgm, &labels)?;
        pgm.flush()?;
        write_checkpoint(dir, run_id, &self.final_phases)
    }
}

fn write_checkpoint(dir: &Path, run_id: &str, ps: &PhaseSystem) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!("{run_id}.phases.tmp"));
    let mut w = BufWriter::new(fs::File::create(&tmp)?);
    write_phases(&mut w, ps)?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    fs::rename(&tmp, dir.join(format!("{run_id}.phases")))?;
    Ok(())
}

fn sup_norm(fields: &[ScalarField]) -> f64 {
    fields.iter().map(|f| f.max_abs()).fold(0.0, f64::max)
}

fn applications(eval: &Evaluation) -> usize {
    eval.eigen.iter().map(|r| r.applications).sum()
}

/// Runs the descent from `init`, or from `random_init(grid, h, seed)`.
pub fn optimize(cfg: &OptimizerConfig, grid: &GridSpec, init: Option<PhaseSystem>) -> Result<RunLog> {
    cfg.validate()?;
    let mut ps = match init {
        Some(ps) => {
            if !ps.grid().same_layout(grid) || ps.h() != cfg.h {
                return Err(Error::Dimension(format!(
                    "initial system has {} phases on a {}x{} grid, config wants {} on {}x{}",
                    ps.h(),
                    ps.grid().nx,
                    ps.grid().ny,
                    cfg.h,
                    grid.nx,
                    grid.ny
                )));
            }
            ps.validate()?;
            ps
        }
        None => random_init(*grid, cfg.h, cfg.seed)?,
    };
    let params = cfg.cost_params();
    let abort = |iteration: usize, ps: &PhaseSystem, e: Error| {
        if let Some(dir) = &cfg.checkpoint_dir {
            if let Err(w) = write_checkpoint(dir, &cfg.run_id, ps) {
                log::error!("could not write checkpoint: {w}");
            }
        }
        Error::Aborted {
            iteration,
            checkpoint: Box::new(ps.clone()),
            source: Box::new(e),
        }
    };

    let mut eval = evaluate(&ps, &params, None).map_err(|e| abort(0, &ps, e))?;
    let mut records = vec![IterationRecord {
        iteration: 0,
        cost: eval.breakdown.clone(),
        gamma: 0.0,
        grad_sup: 0.0,
        solver_applications: applications(&eval),
    }];
    let mut termination = Termination::IterationCap;
    let mut prev_gamma = 0.0;

    for p in 1..=cfg.p_max {
        let grad = gradient_of(&eval, &ps, false).map_err(|e| abort(p, &ps, e))?;
        let grad_sup = sup_norm(&grad);
        let direction: Vec<ScalarField> = grad
            .into_iter()
            .map(|g| {
                let grid = *g.grid();
                ScalarField::from_raw(grid, g.into_values().into_iter().map(|v| -v).collect())
            })
            .collect();

        let mut gamma0 = cfg.gamma0;
        let mut outcome = None;
        if cfg.warm_gamma && prev_gamma / cfg.omega > gamma0 {
            let warm = linesearch(&ps, &eval, &direction, cfg, prev_gamma / cfg.omega).map_err(|e| abort(p, &ps, e))?;
            if warm.improving {
                outcome = Some(warm);
            }
        }
        let mut outcome = match outcome {
            Some(o) => o,
            None => linesearch(&ps, &eval, &direction, cfg, gamma0).map_err(|e| abort(p, &ps, e))?,
        };
        let mut halvings = 0;
        while !outcome.improving && halvings < cfg.max_halvings {
            halvings += 1;
            gamma0 *= 0.5;
            outcome = linesearch(&ps, &eval, &direction, cfg, gamma0).map_err(|e| abort(p, &ps, e))?;
        }
        if !outcome.improving {
            termination = if outcome.gamma * grad_sup < cfg.eps {
                Termination::StepCriterion
            } else {
                Termination::NoDescent
            };
            log::info!("iteration {p}: no decreasing step, stopping ({termination:?})");
            break;
        }

        prev_gamma = outcome.gamma;
        let (next_ps, next_eval) = outcome.value;
        ps = next_ps;
        eval = next_eval;
        records.push(IterationRecord {
            iteration: p,
            cost: eval.breakdown.clone(),
            gamma: outcome.gamma,
            grad_sup,
            solver_applications: applications(&eval),
        });
        log::debug!(
            "iteration {p}: cost {:.6} step {:.3e} trials {}",
            eval.breakdown.total,
            outcome.gamma,
            outcome.trials
        );

        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_every > 0 && p % cfg.checkpoint_every == 0 {
                write_checkpoint(dir, &cfg.run_id, &ps)?;
            }
        }
        if outcome.gamma * grad_sup < cfg.eps {
            termination = Termination::StepCriterion;
            break;
        }
    }

    if let Some(dir) = &cfg.checkpoint_dir {
        write_checkpoint(dir, &cfg.run_id, &ps)?;
    }
    Ok(RunLog {
        records,
        termination,
        final_phases: ps,
    })
}
