//! Analytic Dirichlet spectra of disks and rectangles, and node-sampled
//! indicators of those shapes.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};

/// `J_m(x)` by Miller's backward recurrence, normalized with
/// `J_0 + 2 Σ_k J_{2k} = 1`.
pub fn bessel_j(m: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    let ax = x.abs();
    let start = {
        let base = (m as f64).max(ax) as usize + 30 + (40.0 * ax.max(1.0)).sqrt() as usize;
        base + (base & 1)
    };
    let mut j_next = 0.0;
    let mut j_cur = 1e-300;
    let mut norm = 0.0;
    let mut result = 0.0;
    for n in (1..=start).rev() {
        // j_cur = J_n, compute J_{n-1}
        let j_prev = (2.0 * n as f64 / ax) * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        if n - 1 == m {
            result = j_cur;
        }
        if (n - 1) % 2 == 0 && n > 1 {
            norm += 2.0 * j_cur;
        }
        if j_cur.abs() > 1e250 {
            j_cur *= 1e-250;
            j_next *= 1e-250;
            result *= 1e-250;
            norm *= 1e-250;
        }
    }
    norm += j_cur;
    let mut v = result / norm;
    if x < 0.0 && m % 2 == 1 {
        v = -v;
    }
    v
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Positive zeros of `J_m` below `limit`, ascending.
pub fn bessel_zeros_below(m: usize, limit: f64) -> Vec<f64> {
    let step = 0.05;
    let mut zeros = Vec::new();
    // j_{m,1} > m
    let mut a = (m as f64).max(step);
    let mut fa = bessel_j(m, a);
    while a < limit {
        let b = (a + step).min(limit);
        let fb = bessel_j(m, b);
        if fa == 0.0 {
            zeros.push(a);
        } else if (fa < 0.0) != (fb < 0.0) && fb != 0.0 {
            zeros.push(bisect(|x| bessel_j(m, x), a, b));
        }
        a = b;
        fa = fb;
    }
    zeros
}

/// The `n`-th positive zero of `J_m`, `n >= 1`.
pub fn bessel_zero(m: usize, n: usize) -> f64 {
    assert!(n >= 1, "zeros are numbered from 1");
    // j_{m,n} < m + πn + 2 comfortably for all m, n
    let limit = m as f64 + PI * (n as f64 + 1.0) + 2.0;
    bessel_zeros_below(m, limit)[n - 1]
}

/// One Dirichlet eigenvalue of the disk with its Bessel indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskMode {
    pub m: usize,
    pub n: usize,
    pub zero: f64,
}

/// Distinct disk modes `(m, n)` with `j_{m,n} < limit`, by increasing zero.
pub fn disk_modes_below(limit: f64) -> Vec<DiskMode> {
    let mut modes = Vec::new();
    let mut m = 0;
    while (m as f64) < limit {
        let zs = bessel_zeros_below(m, limit);
        if zs.is_empty() {
            break;
        }
        modes.extend(zs.into_iter().enumerate().map(|(i, zero)| DiskMode { m, n: i + 1, zero }));
        m += 1;
    }
    modes.sort_by(|a, b| a.zero.total_cmp(&b.zero));
    modes
}

/// First `count` Dirichlet eigenvalues `(j_{m,n}/r)²` of a disk, counted with
/// multiplicity (twice for `m >= 1`).
pub fn disk_eigenvalues(radius: f64, count: usize) -> Vec<f64> {
    assert!(radius > 0.0, "radius must be positive");
    let mut limit = 10.0;
    loop {
        let mut values: Vec<f64> = Vec::new();
        for mode in disk_modes_below(limit) {
            let lam = (mode.zero / radius).powi(2);
            values.push(lam);
            if mode.m > 0 {
                values.push(lam);
            }
        }
        if values.len() >= count {
            values.truncate(count);
            return values;
        }
        limit *= 1.5;
    }
}

/// First `count` values of `π²(m²/w² + n²/h²)`, `m, n >= 1`.
pub fn rectangle_eigenvalues(width: f64, height: f64, count: usize) -> Vec<f64> {
    assert!(width > 0.0 && height > 0.0, "extents must be positive");
    let mut bound = (count as f64).sqrt().ceil() as usize + 2;
    loop {
        let mut values: Vec<f64> = (1..=bound)
            .flat_map(|m| (1..=bound).map(move |n| (m, n)))
            .map(|(m, n)| PI * PI * ((m * m) as f64 / (width * width) + (n * n) as f64 / (height * height)))
            .collect();
        values.sort_by(f64::total_cmp);
        // every value below the m = bound + 1 or n = bound + 1 floor is complete
        let floor = PI * PI * (((bound + 1) * (bound + 1)) as f64 / width.max(height).powi(2));
        if values.len() >= count && values[count - 1] < floor {
            values.truncate(count);
            return values;
        }
        bound *= 2;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceShape {
    Disk { cx: f64, cy: f64, radius: f64 },
    Rectangle { cx: f64, cy: f64, width: f64, height: f64 },
}

impl ReferenceShape {
    pub fn unit_disk() -> Self {
        ReferenceShape::Disk { cx: 0.0, cy: 0.0, radius: 1.0 }
    }

    pub fn square(side: f64) -> Self {
        ReferenceShape::Rectangle { cx: 0.0, cy: 0.0, width: side, height: side }
    }

    /// The shape dilated by `s` about the origin (centre included).
    pub fn scaled(&self, s: f64) -> Self {
        match *self {
            ReferenceShape::Disk { cx, cy, radius } => ReferenceShape::Disk {
                cx: s * cx,
                cy: s * cy,
                radius: s * radius,
            },
            ReferenceShape::Rectangle { cx, cy, width, height } => ReferenceShape::Rectangle {
                cx: s * cx,
                cy: s * cy,
                width: s * width,
                height: s * height,
            },
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            ReferenceShape::Disk { cx, cy, radius } => (x - cx).powi(2) + (y - cy).powi(2) < radius * radius,
            ReferenceShape::Rectangle { cx, cy, width, height } => {
                (x - cx).abs() < 0.5 * width && (y - cy).abs() < 0.5 * height
            }
        }
    }

    fn bounding_box(&self) -> (f64, f64, f64, f64) {
        match *self {
            ReferenceShape::Disk { cx, cy, radius } => (cx - radius, cx + radius, cy - radius, cy + radius),
            ReferenceShape::Rectangle { cx, cy, width, height } => {
                (cx - 0.5 * width, cx + 0.5 * width, cy - 0.5 * height, cy + 0.5 * height)
            }
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            ReferenceShape::Disk { radius, .. } => PI * radius * radius,
            ReferenceShape::Rectangle { width, height, .. } => width * height,
        }
    }

    /// Analytic Dirichlet eigenvalues, ascending with multiplicity.
    pub fn eigenvalues(&self, count: usize) -> Vec<f64> {
        match *self {
            ReferenceShape::Disk { radius, .. } => disk_eigenvalues(radius, count),
            ReferenceShape::Rectangle { width, height, .. } => rectangle_eigenvalues(width, height, count),
        }
    }
}

/// Indicator of the shape sampled at node centres (no partial coverage).
pub fn rasterize(shape: &ReferenceShape, grid: &GridSpec) -> Result<ScalarField> {
    let (xl, xr, yl, yr) = shape.bounding_box();
    let inside = xl > grid.x0 && xr < grid.x0 + grid.width && yl > grid.y0 && yr < grid.y0 + grid.height;
    let valid = match *shape {
        ReferenceShape::Disk { radius, .. } => radius >= 0.0,
        ReferenceShape::Rectangle { width, height, .. } => width >= 0.0 && height >= 0.0,
    };
    if !inside || !valid {
        return Err(Error::Domain(format!("{shape:?} is not strictly inside the box")));
    }
    Ok(ScalarField::from_fn(*grid, |x, y| if shape.contains(x, y) { 1.0 } else { 0.0 }))
}

/// `k,lambda` CSV, 1-based `k`.
pub fn write_eigenvalues_csv<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    writeln!(w, "k,lambda")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;

    /// Ascending power series, used only as an independent check.
    fn series_j(m: usize, x: f64) -> f64 {
        let half = x / 2.0;
        let mut term = half.powi(m as i32) / (1..=m).map(|v| v as f64).product::<f64>();
        let mut sum = term;
        for k in 1..200 {
            term *= -half * half / (k as f64 * (k + m) as f64);
            sum += term;
            if term.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
        }
        sum
    }

    fn series_zero(m: usize, a: f64, b: f64) -> f64 {
        bisect(|x| series_j(m, x), a, b)
    }

    #[test]
    fn recurrence_matches_series() {
        for m in 0..6 {
            for i in 1..60 {
                let x = 0.2 * i as f64;
                assert!((bessel_j(m, x) - series_j(m, x)).abs() < 1e-12, "m={m} x={x}");
            }
        }
    }

    #[test]
    fn first_zeros_against_series_oracle() {
        let j01 = series_zero(0, 2.0, 3.0);
        let j11 = series_zero(1, 3.5, 4.0);
        assert!((bessel_zero(0, 1) - j01).abs() < 1e-12);
        assert!((bessel_zero(1, 1) - j11).abs() < 1e-12);
        assert!((j01 * j01 - 5.7831860).abs() < 1e-6);
        assert!((j11 * j11 - 14.681971).abs() < 1e-6);
        let lam = disk_eigenvalues(1.0, 3);
        assert!((lam[0] - j01 * j01).abs() < 1e-10);
        assert_eq!(lam[1], lam[2]);
        assert!((lam[1] - j11 * j11).abs() < 1e-10);
    }

    #[test]
    fn zeros_interlace_and_vanish() {
        for m in 0..8 {
            for n in 1..5 {
                let z = bessel_zero(m, n);
                assert!(bessel_j(m, z).abs() < 1e-12);
                assert!(z < bessel_zero(m + 1, n));
                assert!(bessel_zero(m + 1, n) < bessel_zero(m, n + 1));
            }
        }
    }

    #[test]
    fn disk_scaling() {
        let one = disk_eigenvalues(1.0, 20);
        let two = disk_eigenvalues(2.0, 20);
        for (a, b) in one.iter().zip(&two) {
            assert!((a / 4.0 - b).abs() < 1e-12 * a);
        }
        assert!(one.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rectangle_examples() {
        let sq = rectangle_eigenvalues(2.0, 2.0, 6);
        assert!((sq[0] - PI * PI / 2.0).abs() < 1e-12);
        assert!((sq[1] - 5.0 * PI * PI / 4.0).abs() < 1e-12);
        assert_eq!(sq[1], sq[2]);
        let unit = rectangle_eigenvalues(1.0, 1.0, 6);
        for (a, b) in unit.iter().zip(&sq) {
            assert!((a - 4.0 * b).abs() < 1e-10);
        }
        let thin = rectangle_eigenvalues(10.0, 1.0, 12);
        assert!(thin.windows(2).all(|w| w[0] <= w[1]));
        assert!((thin[11] - PI * PI * (144.0 / 100.0 + 1.0)).abs() < 1e-9);
    }

    #[test]
    fn weyl_counting_smoke() {
        // N(Λ) ≈ area·Λ/(4π)
        for (name, vals, area) in [
            ("disk", disk_eigenvalues(1.0, 400), PI),
            ("rect", rectangle_eigenvalues(2.0, 1.0, 400), 2.0),
        ] {
            let lam = vals[399];
            let predicted = area * lam / (4.0 * PI);
            assert!((400.0 / predicted - 1.0).abs() < 0.2, "{name}: {predicted}");
        }
    }

    #[test]
    fn rasterize_examples() {
        let g = GridSpec::square(-1.5, 1.5, 41, Boundary::DirichletBox).unwrap();
        let zero = rasterize(&ReferenceShape::Disk { cx: 0.0, cy: 0.0, radius: 0.0 }, &g).unwrap();
        assert!(zero.values().iter().all(|v| *v == 0.0));

        let margin = 1.5 - g.hx;
        let rect = ReferenceShape::Rectangle { cx: 0.0, cy: 0.0, width: 2.0 * margin + 1e-9, height: 2.0 * margin + 1e-9 };
        let full = rasterize(&rect, &g).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (x, y) = g.node_coordinates(i, j).unwrap();
                if x.abs() < margin && y.abs() < margin {
                    assert_eq!(full.at(i, j), 1.0);
                }
            }
        }

        let disk = rasterize(&ReferenceShape::unit_disk(), &g).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                assert_eq!(disk.at(i, j), disk.at(g.nx - 1 - i, g.ny - 1 - j));
            }
        }

        assert!(matches!(
            rasterize(&ReferenceShape::Disk { cx: 1.0, cy: 0.0, radius: 0.6 }, &g),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        write_eigenvalues_csv(&mut buf, &[1.5, 2.0]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,lambda\n1,1.5\n2,2\n");
    }
}
