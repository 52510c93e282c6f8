//! Binary checkpoints and raster output.
//!
//! Field checkpoint layout (little-endian):
//!
//! ```text
//! "SPF1" | nx: u64 | ny: u64 | bc: u8 | nx*ny f64 values, row-major
//! ```
//!
//! A phase-system checkpoint is a `u64` field count followed by that many
//! field checkpoints.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::{Boundary, GridSpec, ScalarField};
use crate::phase::{LabelField, PhaseSystem};

pub const FIELD_MAGIC: &[u8; 4] = b"SPF1";

/// Header of a field checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldHeader {
    pub nx: usize,
    pub ny: usize,
    pub bc: Boundary,
}

pub fn write_field<W: Write>(w: &mut W, field: &ScalarField) -> Result<()> {
    let g = field.grid();
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&(g.nx as u64).to_le_bytes())?;
    w.write_all(&(g.ny as u64).to_le_bytes())?;
    w.write_all(&[g.bc.as_byte()])?;
    let mut buf = Vec::with_capacity(8 * g.len());
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a field checkpoint without geometry.
pub fn read_field_raw<R: Read>(r: &mut R) -> Result<(FieldHeader, Vec<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let nx = read_u64(r)? as usize;
    let ny = read_u64(r)? as usize;
    let mut bc = [0u8; 1];
    r.read_exact(&mut bc)?;
    let bc = Boundary::from_byte(bc[0])?;
    let len = nx
        .checked_mul(ny)
        .filter(|l| *l <= 1 << 32)
        .ok_or_else(|| Error::Format(format!("implausible size {nx}x{ny}")))?;
    let mut bytes = vec![0u8; 8 * len];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((FieldHeader { nx, ny, bc }, values))
}

/// Reads a field checkpoint onto `grid`, which supplies the box geometry.
pub fn read_field<R: Read>(r: &mut R, grid: &GridSpec) -> Result<ScalarField> {
    let (hdr, values) = read_field_raw(r)?;
    if hdr.nx != grid.nx || hdr.ny != grid.ny || hdr.bc != grid.bc {
        return Err(Error::Dimension(format!(
            "checkpoint is {}x{} {:?}, grid is {}x{} {:?}",
            hdr.nx, hdr.ny, hdr.bc, grid.nx, grid.ny, grid.bc
        )));
    }
    ScalarField::new(*grid, values)
}

pub fn write_phases<W: Write>(w: &mut W, ps: &PhaseSystem) -> Result<()> {
    w.write_all(&(ps.fields().len() as u64).to_le_bytes())?;
    for f in ps.fields() {
        write_field(w, f)?;
    }
    Ok(())
}

pub fn read_phases<R: Read>(r: &mut R, grid: &GridSpec) -> Result<PhaseSystem> {
    let count = read_u64(r)? as usize;
    if !(2..=u16::MAX as usize).contains(&count) {
        return Err(Error::Format(format!("implausible phase count {count}")));
    }
    let fields = (0..count).map(|_| read_field(r, grid)).collect::<Result<Vec<_>>>()?;
    PhaseSystem::new(fields)
}

/// Fixed palette for competing phases; the empty phase is drawn white.
pub const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [0, 128, 128],
    [170, 110, 40],
    [128, 0, 0],
    [0, 0, 128],
];

/// Binary PGM (P5). Rows are written top to bottom, so the highest `j` comes first.
pub fn write_pgm<W: Write>(w: &mut W, labels: &LabelField) -> Result<()> {
    let (nx, ny) = (labels.grid_nx, labels.grid_ny);
    write!(w, "P5\n{nx} {ny}\n255\n")?;
    let levels = labels.h as f64;
    let mut buf = Vec::with_capacity(nx * ny);
    for j in (0..ny).rev() {
        for i in 0..nx {
            let l = labels.at(i, j) as usize;
            let v = if l > labels.h {
                255
            } else {
                ((l - 1) as f64 / levels * 200.0).round() as u8
            };
            buf.push(v);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Binary PPM (P6) with [`PALETTE`]; labels past 12 cycle through it.
pub fn write_ppm<W: Write>(w: &mut W, labels: &LabelField) -> Result<()> {
    let (nx, ny) = (labels.grid_nx, labels.grid_ny);
    write!(w, "P6\n{nx} {ny}\n255\n")?;
    let mut buf = Vec::with_capacity(3 * nx * ny);
    for j in (0..ny).rev() {
        for i in 0..nx {
            let l = labels.at(i, j) as usize;
            let rgb = if l > labels.h {
                [255, 255, 255]
            } else {
                PALETTE[(l - 1) % PALETTE.len()]
            };
            buf.extend_from_slice(&rgb);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::{argmax_partition, random_init};
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let g = GridSpec::new((0.0, 1.0), (0.0, 2.0), 3, 2, Boundary::DirichletBox).unwrap();
        let f = ScalarField::new(g, vec![1.0, 2.0, 3.0, 4.0, 5.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(buf.len(), 4 + 8 + 8 + 1 + 6 * 8);
        assert_eq!(&buf[..4], b"SPF1");
        assert_eq!(&buf[4..12], &3u64.to_le_bytes());
        assert_eq!(&buf[12..20], &2u64.to_le_bytes());
        assert_eq!(buf[20], 0);
        assert_eq!(&buf[21..29], &1.0f64.to_le_bytes());
        assert_eq!(&buf[buf.len() - 8..], &(-0.5f64).to_le_bytes());
    }

    #[test]
    fn rejects_corrupt_input() {
        let g = GridSpec::square(0.0, 1.0, 3, Boundary::Periodic).unwrap();
        assert!(read_field(&mut &b"XXXX"[..], &g).is_err());
        let mut buf = Vec::new();
        write_field(&mut buf, &ScalarField::zeros(g)).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_field(&mut buf.as_slice(), &g).is_err());
        let other = GridSpec::square(0.0, 1.0, 4, Boundary::Periodic).unwrap();
        let mut full = Vec::new();
        write_field(&mut full, &ScalarField::zeros(g)).unwrap();
        assert!(matches!(read_field(&mut full.as_slice(), &other), Err(Error::Dimension(_))));
    }

    #[test]
    fn phase_checkpoint_and_rasters() {
        let g = GridSpec::square(0.0, 1.0, 6, Boundary::Periodic).unwrap();
        let ps = random_init(g, 3, 1).unwrap();
        let mut buf = Vec::new();
        write_phases(&mut buf, &ps).unwrap();
        assert_eq!(&buf[..8], &4u64.to_le_bytes());
        let back = read_phases(&mut buf.as_slice(), &g).unwrap();
        assert_eq!(back, ps);

        let labels = argmax_partition(&ps);
        let mut pgm = Vec::new();
        write_pgm(&mut pgm, &labels).unwrap();
        assert!(pgm.starts_with(b"P5\n6 6\n255\n"));
        assert_eq!(pgm.len(), 11 + 36);
        let mut ppm = Vec::new();
        write_ppm(&mut ppm, &labels).unwrap();
        assert!(ppm.starts_with(b"P6\n6 6\n255\n"));
        assert_eq!(ppm.len(), 11 + 108);
    }

    proptest! {
        #[test]
        fn field_roundtrip(vals in proptest::collection::vec(-1e300f64..1e300, 12)) {
            let g = GridSpec::new((0.0, 1.0), (0.0, 1.0), 4, 3, Boundary::DirichletBox).unwrap();
            let f = ScalarField::new(g, vals).unwrap();
            let mut buf = Vec::new();
            write_field(&mut buf, &f).unwrap();
            let back = read_field(&mut buf.as_slice(), &g).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
