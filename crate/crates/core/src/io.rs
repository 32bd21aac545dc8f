//! File formats: CSV matrices, constraint JSON, uncertainty-set JSON and
//! keyword-profile JSON.
//!
//! Matrix CSVs have one row per paper, no header. Set files reference their
//! matrices by path; relative paths resolve against the set file's own
//! directory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{RauError, Result};
use crate::harness::KeywordProfile;
use crate::model::{AffinityMatrix, Assignment, AssignmentConstraints};
use crate::uncertainty::{Ellipsoid, Geometry, UncertaintySet};

/// Parse a headerless CSV of decimals into `(rows, cols, row-major values)`.
pub fn parse_csv_values(reader: impl Read) -> Result<(usize, usize, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for record in rdr.records() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(RauError::InvalidMatrix(format!(
                    "row {rows} has {} fields, expected {c}",
                    record.len()
                )))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| RauError::InvalidMatrix(format!("row {rows}: cannot parse {field:?}")))?;
            values.push(v);
        }
        rows += 1;
    }
    Ok((rows, cols.unwrap_or(0), values))
}

pub fn read_matrix(path: &Path) -> Result<AffinityMatrix> {
    let (n, m, values) = parse_csv_values(BufReader::new(File::open(path)?))?;
    AffinityMatrix::new(n, m, values)
}

pub fn read_assignment(path: &Path) -> Result<Assignment> {
    let (n, m, values) = parse_csv_values(BufReader::new(File::open(path)?))?;
    Assignment::fractional(n, m, values)
}

/// Values print in Rust's shortest round-trip form, so integral entries
/// come out as `0` and `1`.
pub fn write_csv_values(writer: impl Write, m: usize, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for row in values.chunks(m.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix(path: &Path, s: &AffinityMatrix) -> Result<()> {
    write_csv_values(File::create(path)?, s.m(), s.values())
}

pub fn write_assignment(path: &Path, a: &Assignment) -> Result<()> {
    write_csv_values(File::create(path)?, a.dims().1, a.values())
}

pub fn read_constraints(path: &Path) -> Result<AssignmentConstraints> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_constraints(path: &Path, c: &AssignmentConstraints) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, c)?;
    writeln!(f)?;
    Ok(())
}

pub fn read_profile(path: &Path) -> Result<KeywordProfile> {
    let profile: KeywordProfile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    profile.validate()?;
    Ok(profile)
}

pub fn write_profile(path: &Path, profile: &KeywordProfile) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer(&mut f, profile)?;
    writeln!(f)?;
    Ok(())
}

/// On-disk shape of an uncertainty set: the geometry with matrices replaced
/// by CSV paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometryFile {
    Singleton {
        center: PathBuf,
    },
    Box {
        lower: PathBuf,
        upper: PathBuf,
    },
    Sphere {
        center: PathBuf,
        radius: f64,
    },
    Ellipsoid {
        center: PathBuf,
        diag: PathBuf,
        radius_sq: f64,
        truncated: bool,
    },
    BoxedEllipsoid {
        center: PathBuf,
        diag: PathBuf,
        radius_sq: f64,
        lower: PathBuf,
        upper: PathBuf,
    },
    #[serde(alias = "vertex_polytope")]
    Polytope {
        vertices: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetFile {
    #[serde(flatten)]
    pub geometry: GeometryFile,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub l1_expansion: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

pub fn read_set(path: &Path) -> Result<UncertaintySet> {
    let file: SetFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let load = |p: &PathBuf| read_matrix(&base.join(p));
    let geometry = match &file.geometry {
        GeometryFile::Singleton { center } => Geometry::Singleton { center: load(center)? },
        GeometryFile::Box { lower, upper } => Geometry::Box {
            lower: load(lower)?,
            upper: load(upper)?,
        },
        GeometryFile::Sphere { center, radius } => Geometry::Sphere {
            center: load(center)?,
            radius: *radius,
        },
        GeometryFile::Ellipsoid {
            center,
            diag,
            radius_sq,
            truncated,
        } => Geometry::Ellipsoid(Ellipsoid {
            center: load(center)?,
            diag_weights: load(diag)?,
            radius_sq: *radius_sq,
            truncated: *truncated,
        }),
        GeometryFile::BoxedEllipsoid {
            center,
            diag,
            radius_sq,
            lower,
            upper,
        } => Geometry::BoxedEllipsoid {
            ellipsoid: Ellipsoid {
                center: load(center)?,
                diag_weights: load(diag)?,
                radius_sq: *radius_sq,
                truncated: false,
            },
            lower: load(lower)?,
            upper: load(upper)?,
        },
        GeometryFile::Polytope { vertices } => Geometry::VertexPolytope {
            vertices: vertices.iter().map(load).collect::<Result<_>>()?,
        },
    };
    UncertaintySet::with_expansion(geometry, file.delta, file.gamma, file.l1_expansion)
}

/// Write `set` as `path` plus one CSV per matrix, named `<stem>.<role>.csv`
/// in the same directory. Returns the paths written, set file first.
pub fn write_set(path: &Path, set: &UncertaintySet) -> Result<Vec<PathBuf>> {
    let dir = path.parent().unwrap_or(Path::new(""));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| RauError::InvalidParameter(format!("bad set path {}", path.display())))?;
    let mut written = vec![path.to_path_buf()];
    let mut save = |role: &str, s: &AffinityMatrix| -> Result<PathBuf> {
        let name = PathBuf::from(format!("{stem}.{role}.csv"));
        let full = dir.join(&name);
        write_matrix(&full, s)?;
        written.push(full);
        Ok(name)
    };
    let geometry = match set.geometry() {
        Geometry::Singleton { center } => GeometryFile::Singleton { center: save("center", center)? },
        Geometry::Box { lower, upper } => GeometryFile::Box {
            lower: save("lower", lower)?,
            upper: save("upper", upper)?,
        },
        Geometry::Sphere { center, radius } => GeometryFile::Sphere {
            center: save("center", center)?,
            radius: *radius,
        },
        Geometry::Ellipsoid(e) => GeometryFile::Ellipsoid {
            center: save("center", &e.center)?,
            diag: save("diag", &e.diag_weights)?,
            radius_sq: e.radius_sq,
            truncated: e.truncated,
        },
        Geometry::BoxedEllipsoid { ellipsoid, lower, upper } => GeometryFile::BoxedEllipsoid {
            center: save("center", &ellipsoid.center)?,
            diag: save("diag", &ellipsoid.diag_weights)?,
            radius_sq: ellipsoid.radius_sq,
            lower: save("lower", lower)?,
            upper: save("upper", upper)?,
        },
        Geometry::VertexPolytope { vertices } => GeometryFile::Polytope {
            vertices: vertices
                .iter()
                .enumerate()
                .map(|(i, v)| save(&format!("vertex{i}"), v))
                .collect::<Result<_>>()?,
        },
    };
    let file = SetFile {
        geometry,
        delta: set.delta(),
        gamma: set.gamma(),
        l1_expansion: set.l1_expansion(),
    };
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, &file)?;
    writeln!(f)?;
    Ok(written)
}
