//! Uniform grids on a rectangular box and the 5-point Laplacian.
//!
//! Fields are flattened row-major: node `(i, j)` lives at `j * nx + i`.

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Boundary {
    /// Zero values outside the box; only interior nodes are stored.
    DirichletBox,
    /// Index arithmetic wraps around in both directions.
    Periodic,
}

impl Boundary {
    pub fn as_byte(self) -> u8 {
        match self {
            Boundary::DirichletBox => 0,
            Boundary::Periodic => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Boundary::DirichletBox),
            1 => Ok(Boundary::Periodic),
            other => Err(Error::Format(format!("unknown boundary tag {other}"))),
        }
    }
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" | "dirichletbox" | "dirichlet_box" => Ok(Boundary::DirichletBox),
            "periodic" => Ok(Boundary::Periodic),
            other => Err(Error::InvalidArgument(format!("unknown boundary `{other}`"))),
        }
    }
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Boundary::DirichletBox => "dirichlet",
            Boundary::Periodic => "periodic",
        })
    }
}

/// A box `[x0, x0 + width] x [y0, y0 + height]` sampled on an `nx` by `ny` grid.
///
/// Dirichlet grids hold interior nodes only, spaced `width / (nx + 1)`;
/// periodic grids start at the lower-left corner and are spaced `width / nx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    pub bc: Boundary,
    pub hx: f64,
    pub hy: f64,
}

impl GridSpec {
    pub fn new(
        x_range: (f64, f64),
        y_range: (f64, f64),
        nx: usize,
        ny: usize,
        bc: Boundary,
    ) -> Result<Self> {
        let width = x_range.1 - x_range.0;
        let height = y_range.1 - y_range.0;
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "box extents must be positive, got {width} x {height}"
            )));
        }
        let min_nodes = match bc {
            Boundary::DirichletBox => 2,
            Boundary::Periodic => 3,
        };
        if nx < min_nodes || ny < min_nodes {
            return Err(Error::InvalidArgument(format!(
                "{bc:?} grid needs at least {min_nodes} nodes per axis, got {nx}x{ny}"
            )));
        }
        let (hx, hy) = match bc {
            Boundary::DirichletBox => (width / (nx + 1) as f64, height / (ny + 1) as f64),
            Boundary::Periodic => (width / nx as f64, height / ny as f64),
        };
        Ok(GridSpec {
            x0: x_range.0,
            y0: y_range.0,
            width,
            height,
            nx,
            ny,
            bc,
            hx,
            hy,
        })
    }

    /// Square box `[lo, hi]^2` with `n` nodes per axis.
    pub fn square(lo: f64, hi: f64, n: usize, bc: Boundary) -> Result<Self> {
        Self::new((lo, hi), (lo, hi), n, n, bc)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Area carried by one node, `hx * hy`.
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Area covered by all stored nodes, `nx * ny * hx * hy`.
    pub fn discrete_area(&self) -> f64 {
        self.len() as f64 * self.cell_area()
    }

    pub fn node_coordinates(&self, i: usize, j: usize) -> Result<(f64, f64)> {
        if i >= self.nx || j >= self.ny {
            return Err(Error::IndexOutOfRange {
                i,
                j,
                nx: self.nx,
                ny: self.ny,
            });
        }
        Ok(self.coords_unchecked(i, j))
    }

    #[inline]
    pub(crate) fn coords_unchecked(&self, i: usize, j: usize) -> (f64, f64) {
        let offset = match self.bc {
            Boundary::DirichletBox => 1.0,
            Boundary::Periodic => 0.0,
        };
        (
            self.x0 + (i as f64 + offset) * self.hx,
            self.y0 + (j as f64 + offset) * self.hy,
        )
    }

    pub fn same_layout(&self, other: &GridSpec) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.bc == other.bc
    }

    /// Closed-form eigenvalue of the Dirichlet stencil for mode `(p, q)`, `p, q >= 1`.
    pub fn dirichlet_stencil_eigenvalue(&self, p: usize, q: usize) -> f64 {
        let ax = std::f64::consts::PI * p as f64 * self.hx / self.width;
        let ay = std::f64::consts::PI * q as f64 * self.hy / self.height;
        (2.0 / (self.hx * self.hx)) * (1.0 - ax.cos()) + (2.0 / (self.hy * self.hy)) * (1.0 - ay.cos())
    }
}

/// Nodal values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at node {bad}")));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        ScalarField {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.coords_unchecked(i, j);
                values.push(f(x, y));
            }
        }
        ScalarField { grid, values }
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// Discrete L2 inner product `hx * hy * Σ u w`.
    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self.grid.cell_area() * par::dot(&self.values, &other.values))
    }

    pub fn norm_l2(&self) -> f64 {
        (self.grid.cell_area() * par::dot(&self.values, &self.values)).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid.same_layout(&other.grid) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "fields on {}x{} {:?} and {}x{} {:?} grids",
                self.grid.nx, self.grid.ny, self.grid.bc, other.grid.nx, other.grid.ny, other.grid.bc
            )))
        }
    }
}

/// `out = (-Δ_h) u + diag ⊙ u` for raw row-major slices on `grid`.
pub(crate) fn stencil_apply(grid: &GridSpec, u: &[f64], diag: Option<&[f64]>, out: &mut [f64]) {
    let nx = grid.nx;
    let ny = grid.ny;
    let cx = 1.0 / (grid.hx * grid.hx);
    let cy = 1.0 / (grid.hy * grid.hy);
    let periodic = grid.bc == Boundary::Periodic;
    par::for_each_row(out, nx, |j, row| {
        let cur = &u[j * nx..(j + 1) * nx];
        let below = if j > 0 {
            Some(&u[(j - 1) * nx..j * nx])
        } else if periodic {
            Some(&u[(ny - 1) * nx..ny * nx])
        } else {
            None
        };
        let above = if j + 1 < ny {
            Some(&u[(j + 1) * nx..(j + 2) * nx])
        } else if periodic {
            Some(&u[0..nx])
        } else {
            None
        };
        for i in 0..nx {
            let c = cur[i];
            let left = if i > 0 {
                cur[i - 1]
            } else if periodic {
                cur[nx - 1]
            } else {
                0.0
            };
            let right = if i + 1 < nx {
                cur[i + 1]
            } else if periodic {
                cur[0]
            } else {
                0.0
            };
            let b = below.map_or(0.0, |r| r[i]);
            let a = above.map_or(0.0, |r| r[i]);
            let mut v = cx * (2.0 * c - left - right) + cy * (2.0 * c - b - a);
            if let Some(d) = diag {
                v += d[j * nx + i] * c;
            }
            row[i] = v;
        }
    });
}

/// Neighbour-weighted sum `Σ_nb u_nb / h²` at node `(i, j)`.
#[inline]
fn neighbour_sum(grid: &GridSpec, u: &[f64], i: usize, j: usize, cx: f64, cy: f64) -> f64 {
    let (nx, ny) = (grid.nx, grid.ny);
    let periodic = grid.bc == Boundary::Periodic;
    let row = j * nx;
    let mut s = 0.0;
    if i > 0 {
        s += cx * u[row + i - 1];
    } else if periodic {
        s += cx * u[row + nx - 1];
    }
    if i + 1 < nx {
        s += cx * u[row + i + 1];
    } else if periodic {
        s += cx * u[row];
    }
    if j > 0 {
        s += cy * u[row - nx + i];
    } else if periodic {
        s += cy * u[(ny - 1) * nx + i];
    }
    if j + 1 < ny {
        s += cy * u[row + nx + i];
    } else if periodic {
        s += cy * u[i];
    }
    s
}

/// Symmetric SOR sweep `z = M⁻¹ r` for the stencil matrix with full
/// diagonal `diag`, `M = (D/ω + L)(D/ω)⁻¹(D/ω + U)` in row-major order.
/// Sequential by nature.
pub(crate) fn stencil_ssor(grid: &GridSpec, diag: &[f64], omega: f64, r: &[f64], z: &mut [f64]) {
    let cx = 1.0 / (grid.hx * grid.hx);
    let cy = 1.0 / (grid.hy * grid.hy);
    let n = grid.len();
    let mut y = vec![0.0; n];
    // entries not yet visited are still zero, so the full neighbour sum is
    // the strictly lower (then upper) part
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let idx = j * grid.nx + i;
            y[idx] = omega * (r[idx] + neighbour_sum(grid, &y, i, j, cx, cy)) / diag[idx];
        }
    }
    for (yi, di) in y.iter_mut().zip(diag) {
        *yi *= di / omega;
    }
    z.iter_mut().for_each(|v| *v = 0.0);
    for j in (0..grid.ny).rev() {
        for i in (0..grid.nx).rev() {
            let idx = j * grid.nx + i;
            z[idx] = omega * (y[idx] + neighbour_sum(grid, z, i, j, cx, cy)) / diag[idx];
        }
    }
}

/// Diagonal entries of the stencil matrix, `2/hx² + 2/hy²`.
pub(crate) fn stencil_diagonal(grid: &GridSpec) -> f64 {
    2.0 / (grid.hx * grid.hx) + 2.0 / (grid.hy * grid.hy)
}

/// Positive semidefinite 5-point Laplacian, `-Δ_h u`.
pub fn laplacian_apply(grid: &GridSpec, u: &ScalarField) -> Result<ScalarField> {
    if !grid.same_layout(u.grid()) {
        return Err(Error::Dimension(format!(
            "field on {}x{} grid applied on {}x{} grid",
            u.grid().nx,
            u.grid().ny,
            grid.nx,
            grid.ny
        )));
    }
    let mut out = vec![0.0; grid.len()];
    stencil_apply(grid, u.values(), None, &mut out);
    Ok(ScalarField::from_raw(*grid, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(grid: GridSpec, rng: &mut ChaCha8Rng) -> ScalarField {
        ScalarField::from_raw(grid, (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn plain_dot(a: &ScalarField, b: &ScalarField) -> f64 {
        a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn spacing_follows_boundary_convention() {
        let d = GridSpec::square(-1.5, 1.5, 2, Boundary::DirichletBox).unwrap();
        assert_eq!(d.hx, 1.0);
        let p = GridSpec::square(0.0, 1.0, 4, Boundary::Periodic).unwrap();
        assert_eq!(p.hx, 0.25);
        let r = GridSpec::new((0.0, 2.0), (0.0, 1.0), 9, 4, Boundary::DirichletBox).unwrap();
        assert!((r.hx - 0.2).abs() < 1e-15 && (r.hy - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridSpec::square(0.0, 0.0, 10, Boundary::Periodic).is_err());
        assert!(GridSpec::square(0.0, 1.0, 2, Boundary::Periodic).is_err());
        assert!(GridSpec::square(0.0, 1.0, 1, Boundary::DirichletBox).is_err());
        let g = GridSpec::square(0.0, 1.0, 4, Boundary::Periodic).unwrap();
        assert!(ScalarField::new(g, vec![0.0; 15]).is_err());
        assert!(ScalarField::new(g, vec![f64::NAN; 16]).is_err());
    }

    #[test]
    fn node_coordinates_examples() {
        let d = GridSpec::square(-1.5, 1.5, 2, Boundary::DirichletBox).unwrap();
        let mut pts: Vec<(f64, f64)> = (0..2)
            .flat_map(|j| (0..2).map(move |i| (i, j)))
            .map(|(i, j)| d.node_coordinates(i, j).unwrap())
            .collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(pts, vec![(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)]);

        let p = GridSpec::square(0.0, 1.0, 4, Boundary::Periodic).unwrap();
        let xs: Vec<f64> = (0..4).map(|i| p.node_coordinates(i, 0).unwrap().0).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75]);

        let odd = GridSpec::square(-1.5, 1.5, 7, Boundary::DirichletBox).unwrap();
        let (x, y) = odd.node_coordinates(3, 3).unwrap();
        assert!(x.abs() < 1e-15 && y.abs() < 1e-15);

        assert!(matches!(
            odd.node_coordinates(7, 0),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn periodic_constants_are_in_the_kernel() {
        let g = GridSpec::new((0.0, 1.0), (0.0, 3f64.sqrt()), 12, 20, Boundary::Periodic).unwrap();
        let v = laplacian_apply(&g, &ScalarField::constant(g, 1.0)).unwrap();
        assert!(v.max_abs() < 1e-9);
    }

    #[test]
    fn dirichlet_sine_mode_is_exact_eigenvector() {
        for n in [5usize, 17, 40] {
            let g = GridSpec::square(-1.5, 1.5, n, Boundary::DirichletBox).unwrap();
            let l = g.width;
            let u = ScalarField::from_fn(g, |x, y| (PI * (x + 1.5) / l).sin() * (PI * (y + 1.5) / l).sin());
            let v = laplacian_apply(&g, &u).unwrap();
            let h = g.hx;
            // direct substitution of the sine mode into the stencil
            let lam = (2.0 / (h * h)) * (2.0 - 2.0 * (PI * h / l).cos());
            assert!((lam - g.dirichlet_stencil_eigenvalue(1, 1)).abs() < 1e-10 * lam);
            for (a, b) in v.values().iter().zip(u.values()) {
                assert!((a - lam * b).abs() < 1e-11 * lam);
            }
        }
    }

    #[test]
    fn symmetric_linear_and_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for bc in [Boundary::DirichletBox, Boundary::Periodic] {
            let g = GridSpec::new((0.0, 2.0), (-1.0, 0.5), 23, 17, bc).unwrap();
            for _ in 0..5 {
                let u = random_field(g, &mut rng);
                let w = random_field(g, &mut rng);
                let au = laplacian_apply(&g, &u).unwrap();
                let aw = laplacian_apply(&g, &w).unwrap();
                let nu = plain_dot(&u, &u).sqrt();
                let nw = plain_dot(&w, &w).sqrt();
                let scale = nu * nw * (1.0 / (g.hx * g.hx) + 1.0 / (g.hy * g.hy));
                assert!((plain_dot(&au, &w) - plain_dot(&u, &aw)).abs() <= 1e-12 * scale);
                assert!(plain_dot(&au, &u) >= 0.0);

                let (a, b) = (0.7, -2.3);
                let comb = ScalarField::from_raw(
                    g,
                    u.values().iter().zip(w.values()).map(|(x, y)| a * x + b * y).collect(),
                );
                let ac = laplacian_apply(&g, &comb).unwrap();
                for k in 0..g.len() {
                    let expect = a * au.values()[k] + b * aw.values()[k];
                    assert!((ac.values()[k] - expect).abs() < 1e-9 * (1.0 + expect.abs()));
                }
            }
        }
    }

    #[test]
    fn periodic_shift_commutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = GridSpec::new((0.0, 1.0), (0.0, 1.0), 11, 8, Boundary::Periodic).unwrap();
        let u = random_field(g, &mut rng);
        let shift = |f: &ScalarField| {
            let mut out = vec![0.0; g.len()];
            for j in 0..g.ny {
                for i in 0..g.nx {
                    out[g.index((i + 3) % g.nx, (j + 5) % g.ny)] = f.at(i, j);
                }
            }
            ScalarField::from_raw(g, out)
        };
        let a = laplacian_apply(&g, &shift(&u)).unwrap();
        let b = shift(&laplacian_apply(&g, &u).unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn mismatched_field_is_rejected() {
        let g = GridSpec::square(0.0, 1.0, 5, Boundary::DirichletBox).unwrap();
        let h = GridSpec::square(0.0, 1.0, 6, Boundary::DirichletBox).unwrap();
        assert!(matches!(
            laplacian_apply(&g, &ScalarField::zeros(h)),
            Err(Error::Dimension(_))
        ));
    }
}
