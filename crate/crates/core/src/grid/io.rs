//! Field container and CSV export.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! | offset | size | content                         |
//! |--------|------|---------------------------------|
//! | 0      | 4    | magic `FBLF`                    |
//! | 4      | 4    | format version, `u32` (= 1)     |
//! | 8      | 4    | spatial dimension, `u32`        |
//! | 12     | 8    | `nx`, `u64`                     |
//! | 20     | 8    | `nt`, `u64`                     |
//! | 28     | 8    | `lo`, `f64`                     |
//! | 36     | 8    | `hi`, `f64`                     |
//! | 44     | 8    | `t0`, `f64`                     |
//! | 52     | 8    | `t1`, `f64`                     |
//! | 60     | 8·N  | values, `f64`, row-major        |
//!
//! Values are ordered `(time, x_1, x_2)` with the last axis fastest, so
//! `N = nt · nx^dim`.

use super::{Grid, SpaceTimeField};
use crate::error::{Error, Result};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"FBLF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 60;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

pub fn encode(u: &SpaceTimeField) -> Vec<u8> {
    let g = u.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * g.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(g.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(g.nx() as u64).to_le_bytes());
    out.extend_from_slice(&(g.nt() as u64).to_le_bytes());
    for v in [g.lo(), g.hi(), g.t0(), g.t1()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in u.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<SpaceTimeField> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = u32_at(8) as usize;
    let (nx, nt) = (u64_at(12) as usize, u64_at(20) as usize);
    let grid = Grid::new(dim, f64_at(28), f64_at(36), nx, f64_at(44), f64_at(52), nt)
        .map_err(|e| Error::Format(format!("header describes an invalid grid: {e}")))?;
    let expected = HEADER_LEN + 8 * grid.len();
    if bytes.len() != expected {
        return Err(Error::Format(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let values = bytes[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    SpaceTimeField::new(grid, values)
}

pub fn write_binary(u: &SpaceTimeField, path: &Path) -> Result<()> {
    std::fs::write(path, encode(u)).map_err(|e| io_err(path, e))
}

pub fn read_binary(path: &Path) -> Result<SpaceTimeField> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    decode(&bytes)
}

/// Writes `t,x[,x2],value` rows, one per node.
pub fn write_csv_to(u: &SpaceTimeField, w: impl Write) -> std::io::Result<()> {
    let g = u.grid();
    let mut w = BufWriter::new(w);
    if g.dim() == 1 {
        writeln!(w, "t,x,value")?;
    } else {
        writeln!(w, "t,x1,x2,value")?;
    }
    for n in 0..g.nt() {
        let t = g.t(n);
        for s in 0..g.n_space() {
            let p = g.coords(s);
            if g.dim() == 1 {
                writeln!(w, "{t},{},{}", p[0], u.get(n, s))?;
            } else {
                writeln!(w, "{t},{},{},{}", p[0], p[1], u.get(n, s))?;
            }
        }
    }
    w.flush()
}

pub fn write_csv(u: &SpaceTimeField, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_csv_to(u, f).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let g = Grid::new(2, -1.0, 1.0, 5, 0.0, 0.3, 4).unwrap();
        let u = SpaceTimeField::from_fn(g, |p, t| (p[0] * 3.1).sin() + p[1] / 7.0 - t.exp()).unwrap();
        let bytes = encode(&u);
        assert_eq!(bytes.len(), HEADER_LEN + 8 * g.len());
        let back = decode(&bytes).unwrap();
        assert_eq!(back.grid(), u.grid());
        for (a, b) in u.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let g = Grid::new(1, 0.0, 1.0, 3, 0.0, 1.0, 3).unwrap();
        let bytes = encode(&SpaceTimeField::zeros(g));
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut nan = bytes;
        let k = HEADER_LEN;
        nan[k..k + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode(&nan).is_err());
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let g = Grid::new(1, 0.0, 1.0, 3, 0.0, 1.0, 3).unwrap();
        let u = SpaceTimeField::from_fn(g, |p, t| p[0] + t).unwrap();
        let mut buf = Vec::new();
        write_csv_to(&u, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x,value");
        assert_eq!(lines.len(), 1 + 9);
        assert_eq!(lines[4], "0.5,0,0.5");
    }
}
