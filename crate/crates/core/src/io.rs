//! Plain-text and binary persistence for samples, frames, matrices, spectra,
//! embeddings and sections.
//!
//! Reals are written with 17 significant digits, so every text file reads
//! back to the exact values that were written.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::afap::DiscreteSection;
use crate::bundle_graph::{BundleSampleSet, FibreSamples};
use crate::embedding::{BaseEmbeddingCoordinates, EmbeddingCoordinates};
use crate::error::{HdmError, Result};
use crate::geometry::{AmbientPoint, UnitTangent, Vec3};
use crate::sparse::CsrMatrix;
use crate::spectral::SpectralResult;
use crate::tangent_pca::{FrameSet, TangentFrame, TransportTable};

const BINARY_MAGIC: &[u8; 8] = b"HYPOCSR1";

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(HdmError::MissingArtifact(path.to_path_buf()));
    }
    Ok(BufReader::new(File::open(path)?))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> HdmError {
    HdmError::Parse {
        context: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Non-empty lines split on `sep` (whitespace when `None`), with 1-based line numbers.
fn records(path: &Path, sep: Option<char>) -> Result<Vec<(usize, Vec<String>)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields = match sep {
            Some(c) => trimmed.split(c).map(|s| s.trim().to_string()).collect(),
            None => trimmed.split_whitespace().map(str::to_string).collect(),
        };
        out.push((i + 1, fields));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, fields: &[String], k: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = fields
        .get(k)
        .ok_or_else(|| parse_error(path, line, format!("missing field {}", k + 1)))?;
    raw.parse()
        .map_err(|e| parse_error(path, line, format!("field {} ({raw}): {e}", k + 1)))
}

fn expect_len(path: &Path, line: usize, fields: &[String], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(parse_error(
            path,
            line,
            format!("expected {n} fields, found {}", fields.len()),
        ));
    }
    Ok(())
}

fn vec3(path: &Path, line: usize, fields: &[String], start: usize) -> Result<Vec3> {
    Ok(Vec3::new(
        field(path, line, fields, start)?,
        field(path, line, fields, start + 1)?,
        field(path, line, fields, start + 2)?,
    ))
}

/// Rows `x y z`.
pub fn write_base_points(path: &Path, points: &[AmbientPoint]) -> Result<()> {
    let mut w = create(path)?;
    for p in points {
        let c = p.coords();
        writeln!(w, "{} {} {}", real(c.x), real(c.y), real(c.z))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_base_points(path: &Path) -> Result<Vec<AmbientPoint>> {
    records(path, None)?
        .into_iter()
        .map(|(line, f)| {
            expect_len(path, line, &f, 3)?;
            AmbientPoint::from_stored(vec3(path, line, &f, 0)?)
        })
        .collect()
}

/// Rows `j x y z vx vy vz`, one per bundle sample, fibres in order.
pub fn write_bundle(path: &Path, samples: &BundleSampleSet) -> Result<()> {
    let tangents = samples
        .tangents()
        .ok_or_else(|| HdmError::InvalidConfig("only tangent samples are persisted".into()))?;
    let mut w = create(path)?;
    for (j, fibre) in tangents.iter().enumerate() {
        for t in fibre {
            let (x, v) = (t.base().coords(), t.vector());
            writeln!(
                w,
                "{j} {} {} {} {} {} {}",
                real(x.x),
                real(x.y),
                real(x.z),
                real(v.x),
                real(v.y),
                real(v.z)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_bundle(path: &Path) -> Result<BundleSampleSet> {
    let mut bases: Vec<AmbientPoint> = Vec::new();
    let mut fibres: Vec<Vec<UnitTangent>> = Vec::new();
    for (line, f) in records(path, None)? {
        expect_len(path, line, &f, 7)?;
        let j: usize = field(path, line, &f, 0)?;
        let x = vec3(path, line, &f, 1)?;
        if j == fibres.len() {
            bases.push(AmbientPoint::from_stored(x)?);
            fibres.push(Vec::new());
        } else if j + 1 != fibres.len() {
            return Err(parse_error(path, line, format!("fibre {j} out of order")));
        } else if x != *bases[j].coords() {
            return Err(parse_error(path, line, format!("base point of fibre {j} changes")));
        }
        fibres[j].push(UnitTangent::new(bases[j], vec3(path, line, &f, 4)?)?);
    }
    BundleSampleSet::new(bases, FibreSamples::Exact(fibres))
}

/// Rows `j b11 b21 b31 b12 b22 b32`: each basis column-major.
pub fn write_frames(path: &Path, frames: &FrameSet) -> Result<()> {
    let mut w = create(path)?;
    for f in &frames.frames {
        let entries: Vec<String> = f.basis().iter().map(|&v| real(v)).collect();
        writeln!(w, "{} {}", f.base_index(), entries.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames(path: &Path, ambient_dim: usize) -> Result<FrameSet> {
    let mut frames = Vec::new();
    let mut dim = None;
    for (line, f) in records(path, None)? {
        let count = f.len().saturating_sub(1);
        if count == 0 || count % ambient_dim != 0 {
            return Err(parse_error(
                path,
                line,
                format!("{count} entries do not fill {ambient_dim}-row columns"),
            ));
        }
        let d = count / ambient_dim;
        if *dim.get_or_insert(d) != d {
            return Err(parse_error(path, line, "frame dimension changes"));
        }
        let j: usize = field(path, line, &f, 0)?;
        let entries = (1..f.len())
            .map(|k| field::<f64>(path, line, &f, k))
            .collect::<Result<Vec<_>>>()?;
        frames.push(TangentFrame::new(
            j,
            DMatrix::from_column_slice(ambient_dim, d, &entries),
        )?);
    }
    Ok(FrameSet {
        dim: dim.unwrap_or(0),
        frames,
    })
}

/// Rows `i j o11 o12 o21 o22`: the map from frame `i` to frame `j`, row-major.
pub fn write_transports(path: &Path, table: &TransportTable) -> Result<()> {
    let mut w = create(path)?;
    for (i, j, o) in table.sorted_entries() {
        let entries: Vec<String> = o.transpose().iter().map(|&v| real(v)).collect();
        writeln!(w, "{i} {j} {}", entries.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_transports(path: &Path) -> Result<TransportTable> {
    let mut table: Option<TransportTable> = None;
    for (line, f) in records(path, None)? {
        let count = f.len().saturating_sub(2);
        let d = (count as f64).sqrt().round() as usize;
        if d == 0 || d * d != count {
            return Err(parse_error(
                path,
                line,
                format!("{count} entries do not form a square matrix"),
            ));
        }
        let from: usize = field(path, line, &f, 0)?;
        let to: usize = field(path, line, &f, 1)?;
        let entries = (2..f.len())
            .map(|k| field::<f64>(path, line, &f, k))
            .collect::<Result<Vec<_>>>()?;
        let t = table.get_or_insert_with(|| TransportTable::new(d));
        if t.dim() != d {
            return Err(parse_error(path, line, "transport dimension changes"));
        }
        t.insert_matrix(from, to, DMatrix::from_row_slice(d, d, &entries));
    }
    Ok(table.unwrap_or_else(|| TransportTable::new(0)))
}

/// Header `n nnz`, then `row col value` sorted by row and column.
pub fn write_matrix(path: &Path, m: &CsrMatrix) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{} {}", m.n(), m.nnz())?;
    for (r, c, v) in m.triplets() {
        writeln!(w, "{r} {c} {}", real(v))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<CsrMatrix> {
    let mut lines = open(path)?.lines();
    let header = lines.next().ok_or_else(|| parse_error(path, 1, "empty file"))??;
    let head: Vec<String> = header.split_whitespace().map(str::to_string).collect();
    expect_len(path, 1, &head, 2)?;
    let n: usize = field(path, 1, &head, 0)?;
    let nnz: usize = field(path, 1, &head, 1)?;
    let mut row_ptr = vec![0usize; n + 1];
    let mut cols = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    let mut last_row = 0usize;
    for (i, line) in lines.enumerate() {
        let line = line?;
        let f: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if f.is_empty() {
            continue;
        }
        let ln = i + 2;
        expect_len(path, ln, &f, 3)?;
        let r: usize = field(path, ln, &f, 0)?;
        let c: u32 = field(path, ln, &f, 1)?;
        if r >= n || r < last_row {
            return Err(parse_error(path, ln, format!("row {r} out of order or range")));
        }
        last_row = r;
        row_ptr[r + 1] += 1;
        cols.push(c);
        values.push(field(path, ln, &f, 2)?);
    }
    if cols.len() != nnz {
        return Err(parse_error(
            path,
            1,
            format!("header declares {nnz} entries, found {}", cols.len()),
        ));
    }
    for r in 0..n {
        row_ptr[r + 1] += row_ptr[r];
    }
    CsrMatrix::from_parts(n, row_ptr, cols, values)
}

/// Little-endian twin of [`write_matrix`]: magic, `n`, `nnz`, row pointers,
/// column indices, values.
pub fn write_matrix_binary(path: &Path, m: &CsrMatrix) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(m.n() as u64).to_le_bytes())?;
    w.write_all(&(m.nnz() as u64).to_le_bytes())?;
    for &p in m.row_ptr() {
        w.write_all(&(p as u64).to_le_bytes())?;
    }
    for &c in m.cols() {
        w.write_all(&c.to_le_bytes())?;
    }
    for &v in m.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_binary(path: &Path) -> Result<CsrMatrix> {
    let mut r = open(path)?;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(parse_error(path, 0, "bad magic"));
    }
    let mut word = [0u8; 8];
    let mut next_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let n = next_u64(&mut r)? as usize;
    let nnz = next_u64(&mut r)? as usize;
    let row_ptr = (0..=n)
        .map(|_| Ok(next_u64(&mut r)? as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut cols = Vec::with_capacity(nnz);
    let mut half = [0u8; 4];
    for _ in 0..nnz {
        r.read_exact(&mut half)?;
        cols.push(u32::from_le_bytes(half));
    }
    let mut values = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        r.read_exact(&mut word)?;
        values.push(f64::from_le_bytes(word));
    }
    CsrMatrix::from_parts(n, row_ptr, cols, values)
}

/// Plain list of reals, one per line.
pub fn write_vector(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    for &v in values {
        writeln!(w, "{}", real(v))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    records(path, None)?
        .into_iter()
        .map(|(line, f)| {
            expect_len(path, line, &f, 1)?;
            field(path, line, &f, 0)
        })
        .collect()
}

/// CSV `index,eigenvalue,residual`.
pub fn write_eigenvalues(path: &Path, values: &[f64], residuals: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "index,eigenvalue,residual")?;
    for (k, (v, r)) in values.iter().zip(residuals).enumerate() {
        writeln!(w, "{k},{},{}", real(*v), real(*r))?;
    }
    w.flush()?;
    Ok(())
}

/// `(eigenvalues, residuals)`.
pub fn read_eigenvalues(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut values, mut residuals) = (Vec::new(), Vec::new());
    for (line, f) in records(path, Some(','))?.into_iter().skip(1) {
        expect_len(path, line, &f, 3)?;
        let k: usize = field(path, line, &f, 0)?;
        if k != values.len() {
            return Err(parse_error(path, line, format!("index {k} out of sequence")));
        }
        values.push(field(path, line, &f, 1)?);
        residuals.push(field(path, line, &f, 2)?);
    }
    Ok((values, residuals))
}

/// Eigenvectors column-major with a `n m` header, for handing spectra between stages.
pub fn write_spectrum(path: &Path, spec: &SpectralResult) -> Result<()> {
    let mut w = create(path)?;
    let (n, m) = spec.eigenvectors.shape();
    writeln!(w, "{n} {m}")?;
    let offsets: Vec<String> = spec.block_offsets.iter().map(usize::to_string).collect();
    writeln!(w, "{}", offsets.join(" "))?;
    for k in 0..m {
        let col: Vec<String> = spec.eigenvectors.column(k).iter().map(|&v| real(v)).collect();
        writeln!(
            w,
            "{} {} {}",
            real(spec.eigenvalues[k]),
            real(spec.residuals[k]),
            col.join(" ")
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spectrum(path: &Path) -> Result<SpectralResult> {
    let recs = records(path, None)?;
    let Some((line, head)) = recs.first() else {
        return Err(parse_error(path, 1, "empty file"));
    };
    expect_len(path, *line, head, 2)?;
    let n: usize = field(path, *line, head, 0)?;
    let m: usize = field(path, *line, head, 1)?;
    let (oline, ofields) = recs
        .get(1)
        .ok_or_else(|| parse_error(path, 2, "missing block offsets"))?;
    let block_offsets = (0..ofields.len())
        .map(|k| field(path, *oline, ofields, k))
        .collect::<Result<Vec<usize>>>()?;
    if recs.len() != m + 2 {
        return Err(parse_error(
            path,
            1,
            format!("expected {m} eigenpairs, found {}", recs.len() - 2),
        ));
    }
    let (mut eigenvalues, mut residuals, mut entries) = (Vec::new(), Vec::new(), Vec::with_capacity(n * m));
    for (line, f) in &recs[2..] {
        expect_len(path, *line, f, n + 2)?;
        eigenvalues.push(field(path, *line, f, 0)?);
        residuals.push(field(path, *line, f, 1)?);
        for k in 2..n + 2 {
            entries.push(field(path, *line, f, k)?);
        }
    }
    Ok(SpectralResult {
        eigenvalues,
        eigenvectors: DMatrix::from_column_slice(n, m, &entries),
        residuals,
        block_offsets,
    })
}

/// CSV `j,s,coord_1,...` with `(j, s)` the fibre and in-fibre sample index.
pub fn write_hdm_csv(path: &Path, coords: &EmbeddingCoordinates) -> Result<()> {
    let mut w = create(path)?;
    let header: Vec<String> = (1..=coords.rows.ncols()).map(|k| format!("coord_{k}")).collect();
    writeln!(w, "j,s,{}", header.join(","))?;
    for j in 0..coords.block_offsets.len().saturating_sub(1) {
        for r in coords.block_offsets[j]..coords.block_offsets[j + 1] {
            let row: Vec<String> = coords.rows.row(r).iter().map(|&v| real(v)).collect();
            writeln!(w, "{j},{},{}", r - coords.block_offsets[j], row.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rows of an embedding CSV written by [`write_hdm_csv`], with its block offsets.
pub fn read_hdm_csv(path: &Path) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let recs = records(path, Some(','))?;
    let Some((_, head)) = recs.first() else {
        return Err(parse_error(path, 1, "empty file"));
    };
    let width = head.len();
    let mut offsets = vec![0usize];
    let mut entries = Vec::new();
    for (line, f) in &recs[1..] {
        expect_len(path, *line, f, width)?;
        let j: usize = field(path, *line, f, 0)?;
        let s: usize = field(path, *line, f, 1)?;
        if s == 0 {
            if j + 1 != offsets.len() {
                return Err(parse_error(path, *line, format!("fibre {j} out of order")));
            }
            offsets.push(*offsets.last().unwrap_or(&0));
        } else if j + 2 != offsets.len() || offsets[j + 1] - offsets[j] != s {
            return Err(parse_error(path, *line, format!("sample ({j}, {s}) out of order")));
        }
        offsets[j + 1] += 1;
        for k in 2..width {
            entries.push(field(path, *line, f, k)?);
        }
    }
    let n = offsets[offsets.len() - 1];
    Ok((DMatrix::from_row_slice(n, width - 2, &entries), offsets))
}

/// CSV `j,entry_1_1,...`; `entry_l_k` pairs eigenvectors `l` and `k`.
pub fn write_hbdm_csv(path: &Path, coords: &BaseEmbeddingCoordinates) -> Result<()> {
    let mut w = create(path)?;
    let m = (coords.rows.ncols() as f64).sqrt().round() as usize;
    let header: Vec<String> = (0..coords.rows.ncols())
        .map(|e| format!("entry_{}_{}", e / m + 1, e % m + 1))
        .collect();
    writeln!(w, "j,{}", header.join(","))?;
    for j in 0..coords.rows.nrows() {
        let row: Vec<String> = coords.rows.row(j).iter().map(|&v| real(v)).collect();
        writeln!(w, "{j},{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_hbdm_csv(path: &Path) -> Result<DMatrix<f64>> {
    let recs = records(path, Some(','))?;
    let Some((_, head)) = recs.first() else {
        return Err(parse_error(path, 1, "empty file"));
    };
    let width = head.len();
    let mut entries = Vec::new();
    for (k, (line, f)) in recs[1..].iter().enumerate() {
        expect_len(path, *line, f, width)?;
        if field::<usize>(path, *line, f, 0)? != k {
            return Err(parse_error(path, *line, "row out of order"));
        }
        for c in 1..width {
            entries.push(field(path, *line, f, c)?);
        }
    }
    Ok(DMatrix::from_row_slice(recs.len() - 1, width - 1, &entries))
}

/// One row of a section file.
#[derive(Clone, Debug, PartialEq)]
pub struct SectionRow {
    pub fibre: usize,
    pub tangent: UnitTangent,
    /// `NaN` where the exact transport is undefined.
    pub angle_error: f64,
}

/// Rows `k bx by bz vx vy vz angle_error`; `angles[k]` may be `NaN`.
pub fn write_section(path: &Path, section: &DiscreteSection, angles: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    for (k, (t, a)) in section.vectors.iter().zip(angles).enumerate() {
        let (x, v) = (t.base().coords(), t.vector());
        writeln!(
            w,
            "{k} {} {} {} {} {} {} {}",
            real(x.x),
            real(x.y),
            real(x.z),
            real(v.x),
            real(v.y),
            real(v.z),
            real(*a)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_section(path: &Path) -> Result<Vec<SectionRow>> {
    records(path, None)?
        .into_iter()
        .map(|(line, f)| {
            expect_len(path, line, &f, 8)?;
            let base = AmbientPoint::from_stored(vec3(path, line, &f, 1)?)?;
            Ok(SectionRow {
                fibre: field(path, line, &f, 0)?,
                tangent: UnitTangent::new(base, vec3(path, line, &f, 4)?)?,
                angle_error: field(path, line, &f, 7)?,
            })
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}
