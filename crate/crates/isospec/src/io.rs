//! Text and binary formats.
//!
//! Binary matrices: the 8-byte magic `ISOMAT01`, `rows: u64`, `cols: u64`,
//! a kind byte (0 real, 1 complex), `u32` length plus UTF-8 metadata, then
//! row-major little-endian `f64` values (real, imaginary interleaved for
//! complex matrices).

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::cg_compress::{HTable, ReplicateStore};
use crate::error::{io, Result};
use crate::random_fields::PowerSpectrum;
use crate::sht::HarmonicCoefficients;

pub const MAGIC: &[u8; 8] = b"ISOMAT01";

#[derive(Clone, Debug, PartialEq)]
pub enum MatrixData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl MatrixData {
    pub fn len(&self) -> usize {
        match self {
            MatrixData::Real(v) => v.len(),
            MatrixData::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    pub rows: usize,
    pub cols: usize,
    pub metadata: String,
    pub data: MatrixData,
}

pub fn write_matrix<W: Write>(w: &mut W, m: &MatrixFile) -> Result<()> {
    if m.data.len() != m.rows * m.cols {
        return Err(io("matrix data length does not match its shape"));
    }
    w.write_all(MAGIC)?;
    w.write_all(&(m.rows as u64).to_le_bytes())?;
    w.write_all(&(m.cols as u64).to_le_bytes())?;
    let meta = m.metadata.as_bytes();
    match &m.data {
        MatrixData::Real(v) => {
            w.write_all(&[0])?;
            w.write_all(&(meta.len() as u32).to_le_bytes())?;
            w.write_all(meta)?;
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        MatrixData::Complex(v) => {
            w.write_all(&[1])?;
            w.write_all(&(meta.len() as u32).to_le_bytes())?;
            w.write_all(meta)?;
            for z in v {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<MatrixFile> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(io("not an ISOMAT01 file"));
    }
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut meta = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut meta)?;
    let metadata = String::from_utf8(meta).map_err(|e| io(e.to_string()))?;
    let n = rows.checked_mul(cols).ok_or_else(|| io("matrix shape overflows"))?;
    let data = match kind[0] {
        0 => MatrixData::Real((0..n).map(|_| read_f64(r)).collect::<Result<_>>()?),
        1 => MatrixData::Complex(
            (0..n)
                .map(|_| Ok(Complex64::new(read_f64(r)?, read_f64(r)?)))
                .collect::<Result<_>>()?,
        ),
        k => return Err(io(format!("unknown matrix kind {k}"))),
    };
    Ok(MatrixFile {
        rows,
        cols,
        metadata,
        data,
    })
}

/// `(L + 1)^2 x (L + 1)` real matrix, row `l1 (L + 1) + l2`, column `l3`.
pub fn htable_to_matrix(h: &HTable) -> MatrixFile {
    let n = h.lmax + 1;
    MatrixFile {
        rows: n * n,
        cols: n,
        metadata: format!("htable lmax={}", h.lmax),
        data: MatrixData::Real(h.values().to_vec()),
    }
}

pub fn htable_from_matrix(m: &MatrixFile) -> Result<HTable> {
    let MatrixData::Real(v) = &m.data else {
        return Err(io("h table must be real"));
    };
    if m.cols == 0 || m.rows != m.cols * m.cols {
        return Err(io("h table shape must be (L+1)^2 x (L+1)"));
    }
    HTable::from_values(m.cols - 1, v.clone())
}

/// `B x (L + 1)(L + 2) / 2` complex matrix of `a_lm(2)`, `m >= 0`, in
/// `(l, m)` order.
pub fn replicates_to_matrix(store: &ReplicateStore) -> MatrixFile {
    let l = store.lmax;
    let cols = (l + 1) * (l + 2) / 2;
    let mut data = Vec::with_capacity(store.len() * cols);
    for a in &store.replicates {
        for ll in 0..=l {
            for m in 0..=ll as i32 {
                data.push(a.get(ll, m));
            }
        }
    }
    MatrixFile {
        rows: store.len(),
        cols,
        metadata: format!("replicates lmax={l}"),
        data: MatrixData::Complex(data),
    }
}

pub fn replicates_from_matrix(m: &MatrixFile) -> Result<ReplicateStore> {
    let MatrixData::Complex(v) = &m.data else {
        return Err(io("replicate store must be complex"));
    };
    let lmax = (0..=4096usize)
        .find(|l| (l + 1) * (l + 2) / 2 == m.cols)
        .ok_or_else(|| io("column count is not triangular"))?;
    let replicates = v
        .chunks(m.cols.max(1))
        .take(m.rows)
        .map(|row| {
            let mut a = HarmonicCoefficients::zeros(lmax, true);
            let mut k = 0;
            for l in 0..=lmax {
                for mm in 0..=l as i32 {
                    a.set(l, mm, row[k]);
                    k += 1;
                }
            }
            a
        })
        .collect();
    Ok(ReplicateStore { lmax, replicates })
}

/// Rows `l,m,re,im` for `m = -l..=l`, preceded by a header line.
pub fn coefficients_to_csv(a: &HarmonicCoefficients) -> String {
    let mut s = String::from("l,m,re,im\n");
    for l in 0..=a.lmax() {
        for m in -(l as i32)..=l as i32 {
            let z = a.get(l, m);
            s.push_str(&format!("{l},{m},{},{}\n", z.re, z.im));
        }
    }
    s
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim()))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'))
        .map(|(i, line)| (i, line.split(',').map(str::trim).collect::<Vec<_>>()))
        .filter(|(_, f)| f[0].parse::<f64>().is_ok())
}

fn parse<T: std::str::FromStr>(field: &str, line: usize) -> Result<T> {
    field.parse().map_err(|_| io(format!("line {line}: cannot parse '{field}'")))
}

/// Inverse of [`coefficients_to_csv`]; header and `#` lines are skipped.
pub fn coefficients_from_csv(text: &str, real_field: bool) -> Result<HarmonicCoefficients> {
    let mut rows = Vec::new();
    for (line, f) in data_lines(text) {
        if f.len() != 4 {
            return Err(io(format!("line {line}: expected l,m,re,im")));
        }
        let l: usize = parse(f[0], line)?;
        let m: i32 = parse(f[1], line)?;
        if m.unsigned_abs() as usize > l {
            return Err(io(format!("line {line}: |m| > l")));
        }
        rows.push((l, m, Complex64::new(parse(f[2], line)?, parse(f[3], line)?)));
    }
    let lmax = rows.iter().map(|r| r.0).max().ok_or_else(|| io("no coefficients"))?;
    let mut a = HarmonicCoefficients::zeros(lmax, real_field);
    for (l, m, z) in rows {
        if !real_field || m >= 0 {
            a.set(l, m, z);
        }
    }
    Ok(a)
}

/// Rows `l,C_l`; `l` must run `0, 1, 2, ...` without gaps.
pub fn spectrum_from_csv(text: &str) -> Result<PowerSpectrum> {
    let mut c = Vec::new();
    for (line, f) in data_lines(text) {
        if f.len() != 2 {
            return Err(io(format!("line {line}: expected l,C_l")));
        }
        let l: usize = parse(f[0], line)?;
        if l != c.len() {
            return Err(io(format!("line {line}: expected l = {}", c.len())));
        }
        c.push(parse(f[1], line)?);
    }
    PowerSpectrum::new(c)
}
