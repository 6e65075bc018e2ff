//! Field dumps.
//!
//! Binary layout (all little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..4  | `dim` as u32 |
//! | 4..8  | `n` as u32 |
//! | 8..16 | `count`, total number of f64 values, as u64 |
//! | 16..24 | space-time dumps only: number of time slices as u64 |
//! | ...   | `count` f64 values, row-major, slice after slice |
//!
//! A dump is space-time exactly when `count != n^dim`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{MfgError, Result};
use crate::grid::{ScalarField, TorusGrid};

pub const HEADER_BYTES: usize = 16;

fn write_header(w: &mut impl Write, grid: &TorusGrid, count: u64) -> Result<()> {
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    w.write_all(&(grid.n() as u32).to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    Ok(())
}

fn write_values(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn encode_field(field: &ScalarField) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(HEADER_BYTES + 8 * field.values().len());
    write_header(&mut buf, field.grid(), field.values().len() as u64)?;
    write_values(&mut buf, field.values())?;
    Ok(buf)
}

pub fn encode_path(path: &[ScalarField]) -> Result<Vec<u8>> {
    let first = path
        .first()
        .ok_or_else(|| MfgError::validation("cannot dump an empty space-time path"))?;
    let grid = *first.grid();
    let total = (grid.len() * path.len()) as u64;
    let mut buf = Vec::with_capacity(HEADER_BYTES + 8 + 8 * total as usize);
    write_header(&mut buf, &grid, total)?;
    buf.extend_from_slice(&(path.len() as u64).to_le_bytes());
    for slice in path {
        write_values(&mut buf, slice.values())?;
    }
    Ok(buf)
}

/// Decoded dump: either a single field or a space-time path.
#[derive(Debug, Clone, PartialEq)]
pub enum Dump {
    Field(ScalarField),
    Path(Vec<ScalarField>),
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn decode(r: &mut impl Read) -> Result<Dump> {
    let dim = read_u32(r)? as usize;
    let n = read_u32(r)? as usize;
    let count = read_u64(r)? as usize;
    let grid = TorusGrid::new(dim, n)?;
    let slices = if count == grid.len() {
        None
    } else {
        let t = read_u64(r)? as usize;
        if t == 0 || t.checked_mul(grid.len()) != Some(count) {
            return Err(MfgError::validation(format!(
                "dump header inconsistent: count {count}, {t} slices of {} nodes",
                grid.len()
            )));
        }
        Some(t)
    };
    let mut raw = vec![0u8; count * 8];
    r.read_exact(&mut raw)?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    match slices {
        None => Ok(Dump::Field(ScalarField::new(grid, values)?)),
        Some(_) => Ok(Dump::Path(
            values
                .chunks(grid.len())
                .map(|c| ScalarField::new(grid, c.to_vec()))
                .collect::<Result<_>>()?,
        )),
    }
}

pub fn write_field(path: &Path, field: &ScalarField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_field(field)?)?;
    w.flush()?;
    Ok(())
}

pub fn write_path(path: &Path, fields: &[ScalarField]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_path(fields)?)?;
    w.flush()?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<Dump> {
    let mut r = BufReader::new(File::open(path)?);
    decode(&mut r)
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    match read_dump(path)? {
        Dump::Field(f) => Ok(f),
        Dump::Path(_) => Err(MfgError::validation(format!(
            "{} holds a space-time path, expected a single field",
            path.display()
        ))),
    }
}

pub fn read_path(path: &Path) -> Result<Vec<ScalarField>> {
    match read_dump(path)? {
        Dump::Path(p) => Ok(p),
        Dump::Field(f) => Ok(vec![f]),
    }
}

fn csv_err(e: csv::Error) -> MfgError {
    MfgError::Io(std::io::Error::other(e))
}

/// Writes a header and rows of cells to CSV text. `None` cells are left empty.
pub fn csv_table(header: &[&str], rows: &[Vec<Option<f64>>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.iter().map(|c| c.map_or(String::new(), |v| v.to_string())))
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| MfgError::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv of numbers is utf-8"))
}

/// One node per row: coordinates, then the value.
pub fn field_csv(field: &ScalarField) -> Result<String> {
    let grid = field.grid();
    let header: &[&str] = if grid.dim() == 1 { &["x1", "value"] } else { &["x1", "x2", "value"] };
    let rows: Vec<Vec<Option<f64>>> = field
        .values()
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let x = grid.coords(idx);
            let mut r: Vec<Option<f64>> = x[..grid.dim()].iter().map(|&c| Some(c)).collect();
            r.push(Some(v));
            r
        })
        .collect();
    csv_table(header, &rows)
}

pub fn write_field_csv(path: &Path, field: &ScalarField) -> Result<()> {
    std::fs::write(path, field_csv(field)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let g = TorusGrid::new(2, 8).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0] - x[1]);
        let bytes = encode_field(&f).unwrap();
        assert_eq!(bytes.len(), 16 + 64 * 8);
        assert_eq!(&bytes[0..4], &2u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &8u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &64u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &f.values()[0].to_le_bytes());
    }

    #[test]
    fn path_dump_carries_time_count() {
        let g = TorusGrid::new(1, 8).unwrap();
        let path: Vec<_> = (0..3).map(|k| ScalarField::constant(g, k as f64)).collect();
        let bytes = encode_path(&path).unwrap();
        assert_eq!(&bytes[8..16], &24u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &3u64.to_le_bytes());
        match decode(&mut bytes.as_slice()).unwrap() {
            Dump::Path(p) => assert_eq!(p, path),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_dump_is_rejected() {
        let g = TorusGrid::new(1, 8).unwrap();
        let bytes = encode_field(&ScalarField::zeros(g)).unwrap();
        assert!(decode(&mut &bytes[..40]).is_err());
    }

    #[test]
    fn csv_rows() {
        let g = TorusGrid::new(1, 8).unwrap();
        let csv = field_csv(&ScalarField::constant(g, 2.0)).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[0], "x1,value");
        assert_eq!(lines[2], "0.125,2");
    }
}
