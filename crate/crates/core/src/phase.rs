//! Multiphase densities and the nodewise projection onto the simplex.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};

/// Pointwise tolerance on `Σ_l φ_l = 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// `h` competing densities followed by the empty phase `φ_{h+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSystem {
    grid: GridSpec,
    fields: Vec<ScalarField>,
}

impl PhaseSystem {
    /// Wraps fields that already satisfy the simplex constraint.
    pub fn new(fields: Vec<ScalarField>) -> Result<Self> {
        let ps = Self::unchecked(fields)?;
        ps.validate()?;
        Ok(ps)
    }

    fn unchecked(fields: Vec<ScalarField>) -> Result<Self> {
        if fields.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a phase system needs at least 2 fields (h >= 1), got {}",
                fields.len()
            )));
        }
        let grid = *fields[0].grid();
        for f in &fields[1..] {
            fields[0].check_same_grid(f)?;
        }
        Ok(PhaseSystem { grid, fields })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Number of competing phases (the empty phase is not counted).
    pub fn h(&self) -> usize {
        self.fields.len() - 1
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    pub fn phase(&self, l: usize) -> &ScalarField {
        &self.fields[l]
    }

    pub fn empty_phase(&self) -> &ScalarField {
        &self.fields[self.h()]
    }

    pub fn into_fields(self) -> Vec<ScalarField> {
        self.fields
    }

    /// Checks the simplex invariants at every node.
    pub fn validate(&self) -> Result<()> {
        for node in 0..self.grid.len() {
            let mut total = 0.0;
            for (l, f) in self.fields.iter().enumerate() {
                let v = f.values()[node];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidArgument(format!("phase {l} has value {v} at node {node}")));
                }
                total += v;
            }
            if (total - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidArgument(format!(
                    "phases sum to {total} at node {node}"
                )));
            }
        }
        Ok(())
    }

    /// Same system with the competing phases reordered; `perm[l]` is the
    /// new position of phase `l`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let h = self.h();
        if perm.len() != h || {
            let mut seen = vec![false; h];
            perm.iter().any(|&p| p >= h || std::mem::replace(&mut seen[p], true))
        } {
            return Err(Error::InvalidArgument("not a permutation of the competing phases".into()));
        }
        let mut fields = self.fields.clone();
        for (l, &p) in perm.iter().enumerate() {
            fields[p] = self.fields[l].clone();
        }
        Ok(PhaseSystem { grid: self.grid, fields })
    }
}

/// Projects one node: `x_l ↦ |x_l| / Σ|x|`, uniform when every entry is zero.
pub fn project_node(x: &mut [f64]) {
    let total: f64 = x.iter().map(|v| v.abs()).sum();
    if total == 0.0 || !total.is_finite() {
        let u = 1.0 / x.len() as f64;
        x.iter_mut().for_each(|v| *v = u);
        return;
    }
    x.iter_mut().for_each(|v| *v = v.abs() / total);
}

/// Nodewise projection of `h + 1` raw fields onto the simplex.
pub fn project_simplex(raw: Vec<ScalarField>) -> Result<PhaseSystem> {
    let mut ps = PhaseSystem::unchecked(raw)?;
    let n = ps.grid.len();
    let count = ps.fields.len();
    let mut node = vec![0.0; count];
    for idx in 0..n {
        for (l, f) in ps.fields.iter().enumerate() {
            node[l] = f.values()[idx];
        }
        project_node(&mut node);
        for (l, f) in ps.fields.iter_mut().enumerate() {
            f.values_mut()[idx] = node[l];
        }
    }
    Ok(ps)
}

/// I.i.d. uniform densities from a ChaCha8 stream seeded by `seed`, projected.
pub fn random_init(grid: GridSpec, h: usize, seed: u64) -> Result<PhaseSystem> {
    if h == 0 {
        return Err(Error::InvalidArgument("h must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fields = (0..=h)
        .map(|_| ScalarField::from_raw(grid, (0..grid.len()).map(|_| rng.gen::<f64>()).collect()))
        .collect();
    project_simplex(fields)
}

/// Per-node phase label, 1-based; `h + 1` marks the empty phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelField {
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub labels: Vec<u16>,
    /// Number of competing phases.
    pub h: usize,
}

impl LabelField {
    pub fn at(&self, i: usize, j: usize) -> u16 {
        self.labels[j * self.grid_nx + i]
    }

    /// Node count carrying each label `1..=h+1` (index 0 is label 1).
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.h + 1];
        for &l in &self.labels {
            c[l as usize - 1] += 1;
        }
        c
    }
}

/// Label of the largest density at each node; ties go to the lowest index.
pub fn argmax_partition(ps: &PhaseSystem) -> LabelField {
    let n = ps.grid.len();
    let mut labels = Vec::with_capacity(n);
    for idx in 0..n {
        let mut best = 0;
        let mut best_v = ps.fields[0].values()[idx];
        for (l, f) in ps.fields.iter().enumerate().skip(1) {
            let v = f.values()[idx];
            if v > best_v {
                best = l;
                best_v = v;
            }
        }
        labels.push(best as u16 + 1);
    }
    LabelField {
        grid_nx: ps.grid.nx,
        grid_ny: ps.grid.ny,
        labels,
        h: ps.h(),
    }
}
