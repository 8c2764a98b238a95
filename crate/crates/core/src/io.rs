//! File formats.
//!
//! All CSV files are comma-separated with `#`-prefixed comment lines, and
//! reals are written with 17 significant digits so they round-trip exactly.
//!
//! * sampled entries: `# n=<n>` then `i,j,k,value,p_hat`
//! * factors: `col,sigma` rows, then `row,col,value` rows for `U`
//! * caps: `row,cap`
//! * sample matrix: `row,col,value` triplets (`# n=<n> p=<p>` optional), or
//!   one dense row of `p` values per line
//! * dense tensor (binary): magic `TNS3`, `u32` LE `n`, then `n³` LE `f64`
//!   in `(i, j, k)` row-major order

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparsify::SampleMatrix;
use crate::tensor::{CpFactors, DenseTensor3, SampleRecord, SampledTensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"TNS3";

/// 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_real(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("`{}` is not a number", s.trim())))
}

fn parse_index(s: &str, line: usize) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("`{}` is not an index", s.trim())))
}

/// Non-comment, non-blank lines with 1-based line numbers, plus the
/// `key=value` pairs found in comments.
struct Lines {
    rows: Vec<(usize, String)>,
    meta: Vec<(String, String)>,
}

fn read_lines<R: BufRead>(r: R) -> Result<Lines> {
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if let Some(c) = t.strip_prefix('#') {
            for tok in c.split_whitespace() {
                if let Some((k, v)) = tok.split_once('=') {
                    meta.push((k.to_string(), v.to_string()));
                }
            }
        } else if !t.is_empty() {
            rows.push((idx + 1, t.to_string()));
        }
    }
    Ok(Lines { rows, meta })
}

fn meta_usize(meta: &[(String, String)], key: &str) -> Result<Option<usize>> {
    match meta.iter().find(|(k, _)| k == key) {
        None => Ok(None),
        Some((_, v)) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::invalid(format!("header `{key}={v}` is not a count"))),
    }
}

fn fields(line: &str, want: usize, line_no: usize) -> Result<Vec<&str>> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != want {
        return Err(Error::parse(
            line_no,
            format!("expected {want} fields, found {}", f.len()),
        ));
    }
    Ok(f)
}

fn expect_header(rows: &[(usize, String)], pos: usize, header: &str) -> Result<()> {
    match rows.get(pos) {
        Some((_, l)) if l.replace(' ', "") == header => Ok(()),
        Some((n, l)) => Err(Error::parse(*n, format!("expected header `{header}`, found `{l}`"))),
        None => Err(Error::invalid(format!("missing header `{header}`"))),
    }
}

pub fn write_samples<W: Write>(mut w: W, s: &SampledTensor) -> Result<()> {
    writeln!(w, "# n={}", s.dim())?;
    writeln!(w, "i,j,k,value,p_hat")?;
    for r in s.records() {
        writeln!(w, "{},{},{},{},{}", r.i, r.j, r.k, fmt_real(r.value), fmt_real(r.p_hat))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples<R: BufRead>(r: R) -> Result<SampledTensor> {
    let lines = read_lines(r)?;
    expect_header(&lines.rows, 0, "i,j,k,value,p_hat")?;
    let mut recs = Vec::with_capacity(lines.rows.len().saturating_sub(1));
    for (no, l) in &lines.rows[1..] {
        let f = fields(l, 5, *no)?;
        recs.push(SampleRecord::new(
            parse_index(f[0], *no)?,
            parse_index(f[1], *no)?,
            parse_index(f[2], *no)?,
            parse_real(f[3], *no)?,
            parse_real(f[4], *no)?,
        ));
    }
    let n = match meta_usize(&lines.meta, "n")? {
        Some(n) => n,
        None => recs.iter().map(|r| r.i.max(r.j).max(r.k) + 1).max().unwrap_or(0),
    };
    SampledTensor::new(n, recs)
}

pub fn write_factors<W: Write>(mut w: W, f: &CpFactors) -> Result<()> {
    writeln!(w, "col,sigma")?;
    for (l, s) in f.sigma().iter().enumerate() {
        writeln!(w, "{l},{}", fmt_real(*s))?;
    }
    writeln!(w, "row,col,value")?;
    for i in 0..f.dim() {
        for l in 0..f.rank() {
            writeln!(w, "{i},{l},{}", fmt_real(f.u(i, l)))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_factors<R: BufRead>(r: R) -> Result<CpFactors> {
    let lines = read_lines(r)?;
    let rows = &lines.rows;
    expect_header(rows, 0, "col,sigma")?;
    let split = rows
        .iter()
        .position(|(_, l)| l.replace(' ', "") == "row,col,value")
        .ok_or_else(|| Error::invalid("factor file lacks the `row,col,value` section"))?;
    let mut sigma = Vec::new();
    for (no, l) in &rows[1..split] {
        let f = fields(l, 2, *no)?;
        if parse_index(f[0], *no)? != sigma.len() {
            return Err(Error::parse(*no, "weights must be listed in column order"));
        }
        sigma.push(parse_real(f[1], *no)?);
    }
    let r_ = sigma.len();
    let mut triples = Vec::new();
    for (no, l) in &rows[split + 1..] {
        let f = fields(l, 3, *no)?;
        triples.push((parse_index(f[0], *no)?, parse_index(f[1], *no)?, parse_real(f[2], *no)?, *no));
    }
    let n = triples.iter().map(|t| t.0 + 1).max().unwrap_or(0);
    let mut u = vec![f64::NAN; n * r_];
    for (i, l, v, no) in triples {
        if l >= r_ {
            return Err(Error::parse(no, format!("column {l} has no weight")));
        }
        u[l * n + i] = v;
    }
    if u.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("factor matrix has missing entries"));
    }
    CpFactors::new(n, r_, u, sigma)
}

pub fn write_caps<W: Write>(mut w: W, caps: &[f64]) -> Result<()> {
    writeln!(w, "row,cap")?;
    for (i, c) in caps.iter().enumerate() {
        writeln!(w, "{i},{}", fmt_real(*c))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_caps<R: BufRead>(r: R) -> Result<Vec<f64>> {
    let lines = read_lines(r)?;
    expect_header(&lines.rows, 0, "row,cap")?;
    let mut caps = Vec::new();
    for (no, l) in &lines.rows[1..] {
        let f = fields(l, 2, *no)?;
        if parse_index(f[0], *no)? != caps.len() {
            return Err(Error::parse(*no, "caps must be listed in row order"));
        }
        caps.push(parse_real(f[1], *no)?);
    }
    Ok(caps)
}

pub fn write_sample_matrix<W: Write>(mut w: W, x: &SampleMatrix) -> Result<()> {
    writeln!(w, "# n={} p={}", x.dim(), x.num_samples())?;
    writeln!(w, "row,col,value")?;
    for i in 0..x.dim() {
        for l in 0..x.num_samples() {
            let v = x.get(i, l);
            if v != 0.0 {
                writeln!(w, "{i},{l},{}", fmt_real(v))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads either triplet or dense layout (see module docs).
pub fn read_sample_matrix<R: BufRead>(r: R) -> Result<SampleMatrix> {
    let lines = read_lines(r)?;
    let rows = &lines.rows;
    if rows.is_empty() {
        return Err(Error::invalid("sample matrix file is empty"));
    }
    if rows[0].1.replace(' ', "") == "row,col,value" {
        let mut trip = Vec::with_capacity(rows.len() - 1);
        for (no, l) in &rows[1..] {
            let f = fields(l, 3, *no)?;
            trip.push((parse_index(f[0], *no)?, parse_index(f[1], *no)?, parse_real(f[2], *no)?));
        }
        let n = match meta_usize(&lines.meta, "n")? {
            Some(n) => n,
            None => trip.iter().map(|t| t.0 + 1).max().unwrap_or(0),
        };
        let p = match meta_usize(&lines.meta, "p")? {
            Some(p) => p,
            None => trip.iter().map(|t| t.1 + 1).max().unwrap_or(0),
        };
        return SampleMatrix::from_triplets(n, p, &trip);
    }
    let p = rows[0].1.split(',').count();
    let mut data = Vec::with_capacity(rows.len() * p);
    for (no, l) in rows {
        for v in fields(l, p, *no)? {
            data.push(parse_real(v, *no)?);
        }
    }
    SampleMatrix::from_rows(rows.len(), p, data)
}

pub fn write_tensor_bin<W: Write>(mut w: W, t: &DenseTensor3) -> Result<()> {
    let n = u32::try_from(t.dim()).map_err(|_| Error::invalid("dimension does not fit in u32"))?;
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&n.to_le_bytes())?;
    for x in t.as_slice() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a binary tensor, refusing dimensions above `limit`.
pub fn read_tensor_bin<R: Read>(mut r: R, limit: usize) -> Result<DenseTensor3> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)
        .map_err(|_| Error::invalid("tensor file is shorter than its 8-byte header"))?;
    if &head[..4] != TENSOR_MAGIC {
        return Err(Error::invalid("tensor file does not start with `TNS3`"));
    }
    let n = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize;
    if n == 0 {
        return Err(Error::invalid("tensor dimension must be positive"));
    }
    if n > limit {
        return Err(Error::TooLarge {
            n,
            limit,
            bytes: (n as u128).pow(3) * 8,
        });
    }
    let len = n * n * n;
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::invalid(format!("tensor file holds fewer than {len} values")))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::invalid("tensor file has trailing bytes"));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    DenseTensor3::from_vec(n, data)
}

pub fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::invalid(format!("JSON encoding failed: {e}")))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}
