//! CSV and JSON file formats. Floats are written in shortest round-trip
//! form, so reading a file back reproduces every value exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Rows of a dataset file: `dim_0,...,dim_{d-1}[,label]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub dim: usize,
    pub points: Vec<f64>,
    pub labels: Option<Vec<usize>>,
}

impl DatasetFile {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of distinct label values, `max + 1`.
    pub fn num_labels(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }
}

/// Write via a temporary file and rename, so readers never see a partial
/// file. Parent directories are created.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        msg: format!("line {line}: {msg}"),
    }
}

pub fn dataset_csv(points: &[f64], dim: usize, labels: Option<&[usize]>) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..dim).map(|d| format!("dim_{d}")).collect();
    out.push_str(&header.join(","));
    if labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, row) in points.chunks_exact(dim).enumerate() {
        push_row(&mut out, row);
        if let Some(l) = labels {
            let _ = write!(out, ",{}", l[i]);
        }
        out.push('\n');
    }
    out
}

fn push_row(out: &mut String, row: &[f64]) {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v:?}");
    }
}

pub fn write_dataset(path: &Path, points: &[f64], dim: usize, labels: Option<&[usize]>) -> Result<()> {
    write_atomic(path, dataset_csv(points, dim, labels).as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_label = cols.last() == Some(&"label");
    let dim = cols.len() - usize::from(has_label);
    if dim == 0 || cols[..dim].iter().enumerate().any(|(d, c)| *c != format!("dim_{d}")) {
        return Err(parse_err(path, 1, format!("expected header dim_0,...[,label], got '{header}'")));
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (ln, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(parse_err(path, ln + 1, format!("expected {} fields, got {}", cols.len(), fields.len())));
        }
        for f in &fields[..dim] {
            let v: f64 = f.parse().map_err(|_| parse_err(path, ln + 1, format!("bad number '{f}'")))?;
            if !v.is_finite() {
                return Err(parse_err(path, ln + 1, "non-finite value"));
            }
            points.push(v);
        }
        if has_label {
            let l: usize = fields[dim]
                .parse()
                .map_err(|_| parse_err(path, ln + 1, format!("bad label '{}'", fields[dim])))?;
            labels.push(l);
        }
    }
    if points.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    Ok(DatasetFile {
        dim,
        points,
        labels: has_label.then_some(labels),
    })
}

pub fn assignment_csv(assignment: &[usize]) -> String {
    let mut out = String::from("index,cluster\n");
    for (i, c) in assignment.iter().enumerate() {
        let _ = writeln!(out, "{i},{c}");
    }
    out
}

pub fn read_assignment(path: &Path) -> Result<Vec<usize>> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "index,cluster" => {}
        _ => return Err(parse_err(path, 1, "expected header index,cluster")),
    }
    let mut out = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (i, c) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, ln + 1, "expected two fields"))?;
        let i: usize = i.trim().parse().map_err(|_| parse_err(path, ln + 1, "bad index"))?;
        let c: usize = c.trim().parse().map_err(|_| parse_err(path, ln + 1, "bad cluster"))?;
        if i != out.len() {
            return Err(parse_err(path, ln + 1, format!("expected index {}, got {i}", out.len())));
        }
        out.push(c);
    }
    Ok(out)
}

pub fn samples_csv(points: &[f64], dim: usize) -> String {
    let header: Vec<String> = (0..dim).map(|d| format!("dim_{d}")).collect();
    let mut out = format!("sample_id,{}\n", header.join(","));
    for (i, row) in points.chunks_exact(dim).enumerate() {
        let _ = write!(out, "{i},");
        push_row(&mut out, row);
        out.push('\n');
    }
    out
}

/// Read a samples file back as a flat point array.
pub fn read_samples(path: &Path) -> Result<(Vec<f64>, usize)> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let dim = header.split(',').count().saturating_sub(1);
    if !header.starts_with("sample_id,") || dim == 0 {
        return Err(parse_err(path, 1, "expected header sample_id,dim_0,..."));
    }
    let mut points = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(parse_err(path, ln + 1, "wrong field count"));
        }
        for f in &fields[1..] {
            points.push(f.trim().parse().map_err(|_| parse_err(path, ln + 1, format!("bad number '{f}'")))?);
        }
    }
    Ok((points, dim))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
