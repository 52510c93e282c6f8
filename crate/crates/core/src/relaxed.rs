//! Relaxed eigenvalues `λ_k(φ, C)`, their nodal derivatives, and the
//! multiphase cost `Σ_i λ_k(φ_i, C) - α·V(φ_{h+1})`.
//!
//! `V` is the node average `(1/(nx·ny))·Σ φ_{h+1}`, the empty fraction of the
//! box. In box-area units the same functional reads with `α·|D|/(nx·ny·hx·hy)`
//! in place of `α`, so any α reported by this crate is in node-average units.
//!
//! Gradients are nodal: the entry at a node is the partial derivative with
//! respect to the density value stored there. For an eigenvalue this is
//! `-C·U²` with `U` the Euclidean-unit eigenvector, which equals
//! `-C·hx·hy·u²` for the L2-normalized `u`.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::eigen::{relative_gap, solve, PenalizedOperator, SolverOptions, CLUSTER_GAP};
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::par;
use crate::phase::PhaseSystem;

#[derive(Debug, Clone)]
pub struct RelaxedEigenResult {
    pub lambda: f64,
    /// L2-normalized eigenfunction of the `k`-th pair.
    pub u: ScalarField,
    pub k: usize,
    pub c: f64,
    /// Relative distance from `λ_k` to its neighbours, the upper one taken
    /// from the next Ritz value of the solver block.
    pub gap: f64,
    /// Eigenfunctions `1..=k`, reusable as a warm start.
    pub vectors: Vec<ScalarField>,
    pub applications: usize,
}

/// `λ_k(φ, C)` and its eigenfunction.
pub fn relaxed_eigenvalue(phi: &ScalarField, c: f64, k: usize, tol: f64, seed: u64) -> Result<RelaxedEigenResult> {
    relaxed_eigenvalue_warm(phi, c, k, tol, seed, Vec::new())
}

/// As [`relaxed_eigenvalue`], starting the solver from `warm`.
pub fn relaxed_eigenvalue_warm(
    phi: &ScalarField,
    c: f64,
    k: usize,
    tol: f64,
    seed: u64,
    warm: Vec<ScalarField>,
) -> Result<RelaxedEigenResult> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("penalization must be positive, got {c}")));
    }
    let op = PenalizedOperator::new(phi, c)?;
    let sol = solve(&op, &SolverOptions::new(k, tol, seed).with_initial(warm))?;
    let mut values: Vec<f64> = sol.pairs.iter().map(|p| p.lambda).collect();
    if let Some(next) = sol.ritz_values.get(k) {
        values.push(*next);
    }
    let gap = relative_gap(&values, k - 1);
    let vectors: Vec<ScalarField> = sol.pairs.into_iter().map(|p| p.u).collect();
    Ok(RelaxedEigenResult {
        lambda: values[k - 1],
        u: vectors[k - 1].clone(),
        k,
        c,
        gap,
        vectors,
        applications: sol.applications,
    })
}

/// Nodal derivative `-C·U²` of a simple eigenvalue.
pub fn eigenvalue_gradient(result: &RelaxedEigenResult) -> Result<ScalarField> {
    if result.gap < CLUSTER_GAP {
        return Err(Error::ClusteredEigenvalue {
            k: result.k,
            gap: result.gap,
        });
    }
    Ok(subgradient(result))
}

/// `-C·U²` without the simplicity check. For a multiple eigenvalue this is
/// one element of the subdifferential, selected by the returned vector.
pub fn subgradient(result: &RelaxedEigenResult) -> ScalarField {
    let w = -result.c * result.u.grid().cell_area();
    let values = result.u.values().iter().map(|v| w * v * v).collect();
    ScalarField::from_raw(*result.u.grid(), values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    pub c: f64,
    pub k: usize,
    pub alpha: f64,
    pub tol: f64,
    pub seed: u64,
    /// Permit `k > 1`, where the eigenvalue may be non-differentiable and the
    /// relaxation has no convergence guarantee.
    pub allow_higher_k: bool,
}

impl CostParams {
    pub fn new(c: f64, k: usize, alpha: f64) -> Self {
        CostParams {
            c,
            k,
            alpha,
            tol: 1e-8,
            seed: 0,
            allow_higher_k: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidArgument(format!("C must be positive, got {}", self.c)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.k > 1 && !self.allow_higher_k {
            return Err(Error::InvalidArgument(format!(
                "k = {} needs allow_higher_k: higher eigenvalues may be non-differentiable",
                self.k
            )));
        }
        if self.k > 1 {
            static WARNED: AtomicBool = AtomicBool::new(false);
            if !WARNED.swap(true, Ordering::Relaxed) {
                log::warn!("optimizing λ_{}: gradients are subgradients where eigenvalues cluster", self.k);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub total: f64,
    pub per_phase_eigenvalue: Vec<f64>,
    /// `(1/(nx·ny))·Σ φ_{h+1}`.
    pub volume_term: f64,
    pub alpha: f64,
}

impl CostBreakdown {
    fn new(per_phase_eigenvalue: Vec<f64>, volume_term: f64, alpha: f64) -> Self {
        let total = per_phase_eigenvalue.iter().sum::<f64>() - alpha * volume_term;
        CostBreakdown {
            total,
            per_phase_eigenvalue,
            volume_term,
            alpha,
        }
    }

    /// `Σ λ_i + α·(1 - V)`, the form with the volume of the occupied phases.
    /// Differs from `total` by exactly `α`.
    pub fn occupied_form(&self) -> f64 {
        self.per_phase_eigenvalue.iter().sum::<f64>() + self.alpha * (1.0 - self.volume_term)
    }

    pub fn csv_header(h: usize) -> String {
        let mut s = String::from("iteration,total");
        for i in 1..=h {
            s.push_str(&format!(",lambda_{i}"));
        }
        s.push_str(",volume_term");
        s
    }

    pub fn csv_row(&self, iteration: usize) -> String {
        let mut s = format!("{iteration},{:e}", self.total);
        for l in &self.per_phase_eigenvalue {
            s.push_str(&format!(",{l:e}"));
        }
        s.push_str(&format!(",{:e}", self.volume_term));
        s
    }
}

/// Cost of a phase system together with the per-phase eigen-results.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: CostBreakdown,
    pub eigen: Vec<RelaxedEigenResult>,
}

/// Solves the `h` phase eigenproblems, optionally warm-started from an
/// earlier evaluation of a system with the same phase count.
pub fn evaluate(phases: &PhaseSystem, params: &CostParams, warm: Option<&Evaluation>) -> Result<Evaluation> {
    params.validate()?;
    let h = phases.h();
    let jobs: Vec<usize> = (0..h).collect();
    let eigen = par::map_ordered(&jobs, |_, &i| {
        let start = warm.map(|w| w.eigen[i].vectors.clone()).unwrap_or_default();
        relaxed_eigenvalue_warm(
            phases.phase(i),
            params.c,
            params.k,
            params.tol,
            params.seed.wrapping_add(i as u64),
            start,
        )
        .map_err(|e| Error::phase(i, e))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let volume_term = par::sum(phases.empty_phase().values()) / phases.grid().len() as f64;
    let breakdown = CostBreakdown::new(eigen.iter().map(|r| r.lambda).collect(), volume_term, params.alpha);
    Ok(Evaluation { breakdown, eigen })
}

pub fn multiphase_cost(phases: &PhaseSystem, params: &CostParams) -> Result<CostBreakdown> {
    evaluate(phases, params, None).map(|e| e.breakdown)
}

/// Nodal gradient with respect to all `h + 1` fields.
pub fn multiphase_gradient(phases: &PhaseSystem, params: &CostParams) -> Result<Vec<ScalarField>> {
    let eval = evaluate(phases, params, None)?;
    gradient_of(&eval, phases, true)
}

/// Gradient fields from an evaluation. With `strict`, a clustered eigenvalue
/// is an error; otherwise the subgradient is used and a warning logged.
pub fn gradient_of(eval: &Evaluation, phases: &PhaseSystem, strict: bool) -> Result<Vec<ScalarField>> {
    let mut out = Vec::with_capacity(eval.eigen.len() + 1);
    for (i, r) in eval.eigen.iter().enumerate() {
        let g = match eigenvalue_gradient(r) {
            Ok(g) => g,
            Err(e) if strict => return Err(Error::phase(i, e)),
            Err(_) => {
                log::warn!("phase {i}: λ_{} clustered (gap {:.1e}), using a subgradient", r.k, r.gap);
                subgradient(r)
            }
        };
        out.push(g);
    }
    let grid = *phases.grid();
    out.push(ScalarField::constant(grid, -eval.breakdown.alpha / grid.len() as f64));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Boundary, GridSpec};
    use crate::phase::{project_simplex, random_init};

    fn grid(n: usize, bc: Boundary) -> GridSpec {
        GridSpec::square(0.0, 1.0, n, bc).unwrap()
    }

    #[test]
    fn full_density_gives_the_free_box_spectrum() {
        let g = grid(12, Boundary::DirichletBox);
        let phi = ScalarField::constant(g, 1.0);
        for c in [1.0, 1e6] {
            let r = relaxed_eigenvalue(&phi, c, 2, 1e-10, 0).unwrap();
            let exact = g.dirichlet_stencil_eigenvalue(1, 2);
            assert!((r.lambda - exact).abs() < 1e-8 * exact);
            // the second eigenvalue is double on a square
            assert!(r.gap < CLUSTER_GAP);
            assert!(matches!(eigenvalue_gradient(&r), Err(Error::ClusteredEigenvalue { k: 2, .. })));
        }
    }

    #[test]
    fn gradient_formula() {
        let g = grid(10, Boundary::DirichletBox);
        let phi = ScalarField::from_fn(g, |x, y| if (x - 0.5).hypot(y - 0.5) < 0.3 { 1.0 } else { 0.2 });
        let r = relaxed_eigenvalue(&phi, 50.0, 1, 1e-10, 3).unwrap();
        let grad = eigenvalue_gradient(&r).unwrap();
        assert!(grad.values().iter().all(|v| *v <= 0.0));
        let sum: f64 = grad.values().iter().sum();
        // Euclidean-unit eigenvector: Σ U² = 1
        assert!((sum + 50.0).abs() < 1e-9);

        let mut doubled = r.clone();
        doubled.c *= 2.0;
        let g2 = subgradient(&doubled);
        for (a, b) in grad.values().iter().zip(g2.values()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn cost_identities() {
        let g = grid(8, Boundary::Periodic);
        let ps = random_init(g, 3, 11).unwrap();
        let params = CostParams {
            tol: 1e-9,
            ..CostParams::new(100.0, 1, 7.5)
        };
        let cost = multiphase_cost(&ps, &params).unwrap();
        let sum: f64 = cost.per_phase_eigenvalue.iter().sum();
        assert!((cost.total - (sum - 7.5 * cost.volume_term)).abs() < 1e-12 * sum.abs());
        assert!((cost.occupied_form() - cost.total - 7.5).abs() < 1e-9);

        let swapped = ps.permuted(&[2, 0, 1]).unwrap();
        let other = multiphase_cost(&swapped, &params).unwrap();
        assert!((other.total - cost.total).abs() < 1e-8 * cost.total.abs());

        let grads = multiphase_gradient(&ps, &params).unwrap();
        assert_eq!(grads.len(), 4);
        assert!(grads[3].values().iter().all(|v| *v == -7.5 / 64.0));
    }

    #[test]
    fn empty_box_cost() {
        let g = grid(6, Boundary::DirichletBox);
        let ps = project_simplex(vec![ScalarField::zeros(g), ScalarField::constant(g, 1.0)]).unwrap();
        let cost = multiphase_cost(&ps, &CostParams::new(1e6, 1, 2.0)).unwrap();
        assert_eq!(cost.volume_term, 1.0);
        assert!(cost.per_phase_eigenvalue[0] >= 1e6);
        assert!((cost.total - (cost.per_phase_eigenvalue[0] - 2.0)).abs() < 1e-9 * cost.total);

        let zero_alpha = CostParams::new(1e6, 1, 0.0);
        let grads = multiphase_gradient(&ps, &zero_alpha).unwrap();
        assert!(grads[1].values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn parameter_checks() {
        let g = grid(6, Boundary::DirichletBox);
        let ps = random_init(g, 2, 0).unwrap();
        assert!(multiphase_cost(&ps, &CostParams::new(0.0, 1, 1.0)).is_err());
        assert!(multiphase_cost(&ps, &CostParams::new(1.0, 1, -1.0)).is_err());
        assert!(multiphase_cost(&ps, &CostParams::new(1.0, 2, 1.0)).is_err());
        let mut p = CostParams::new(10.0, 2, 1.0);
        p.allow_higher_k = true;
        assert!(multiphase_cost(&ps, &p).is_ok());
    }

    #[test]
    fn csv_row_layout() {
        let b = CostBreakdown::new(vec![1.0, 2.5], 0.25, 4.0);
        assert_eq!(b.total, 2.5);
        assert_eq!(CostBreakdown::csv_header(2), "iteration,total,lambda_1,lambda_2,volume_term");
        assert_eq!(b.csv_row(7), "7,2.5e0,1e0,2.5e0,2.5e-1");
    }
}
