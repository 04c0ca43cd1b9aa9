//! Tetrahedral meshes with scalar fields, read and written as VTK legacy
//! ASCII unstructured grids.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

/// VTK cell type id of a linear tetrahedron.
pub const VTK_TETRA: u32 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unsupported cell type {cell_type} (only tetrahedra, type 10)")]
    UnsupportedCell { line: usize, cell_type: String },
    #[error("invalid mesh: {0}")]
    Validation(String),
}

/// Per-simulation process parameters, carried next to the mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshMetadata {
    /// Degrees Celsius.
    pub temperature: f64,
    pub friction_coefficient: f64,
    pub source_id: String,
}

impl MeshMetadata {
    pub fn new(temperature: f64, friction_coefficient: f64, source_id: impl Into<String>) -> Self {
        MeshMetadata {
            temperature,
            friction_coefficient,
            source_id: source_id.into(),
        }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if !(self.friction_coefficient >= 0.0) {
            return Err(MeshError::Validation(format!(
                "friction coefficient must be >= 0, got {}",
                self.friction_coefficient
            )));
        }
        if !self.temperature.is_finite() {
            return Err(MeshError::Validation("temperature is not finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnstructuredMesh {
    /// Coordinates in meters.
    pub points: Vec<[f64; 3]>,
    pub cells: Vec<[usize; 4]>,
    pub cell_fields: BTreeMap<String, Vec<f64>>,
    pub point_fields: BTreeMap<String, Vec<f64>>,
}

impl UnstructuredMesh {
    pub fn new(points: Vec<[f64; 3]>, cells: Vec<[usize; 4]>) -> Self {
        UnstructuredMesh {
            points,
            cells,
            ..Default::default()
        }
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Checks index ranges, distinct cell vertices and field lengths.
    pub fn validate(&self) -> Result<(), MeshError> {
        let np = self.points.len();
        for (c, cell) in self.cells.iter().enumerate() {
            for (k, &p) in cell.iter().enumerate() {
                if p >= np {
                    return Err(MeshError::Validation(format!(
                        "cell {c} references point {p}, but the mesh has {np} points"
                    )));
                }
                if cell[..k].contains(&p) {
                    return Err(MeshError::Validation(format!("cell {c} repeats point {p}")));
                }
            }
        }
        for (name, values) in &self.cell_fields {
            if values.len() != self.cells.len() {
                return Err(MeshError::Validation(format!(
                    "cell field '{name}' has {} values for {} cells",
                    values.len(),
                    self.cells.len()
                )));
            }
        }
        for (name, values) in &self.point_fields {
            if values.len() != np {
                return Err(MeshError::Validation(format!(
                    "point field '{name}' has {} values for {np} points",
                    values.len()
                )));
            }
        }
        Ok(())
    }
}

struct Tokens<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    current: Vec<&'a str>,
    pos: usize,
    line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Tokens {
            lines: text.lines().enumerate().peekable(),
            current: Vec::new(),
            pos: 0,
            line: 0,
        }
    }

    /// Next whole line (1-based number, raw text), discarding any unread
    /// tokens of the current line.
    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        self.current.clear();
        self.pos = 0;
        let (i, l) = self.lines.next()?;
        self.line = i + 1;
        Some((self.line, l))
    }

    fn next(&mut self) -> Option<&'a str> {
        while self.pos >= self.current.len() {
            let (i, l) = self.lines.next()?;
            self.line = i + 1;
            self.current = l.split_whitespace().collect();
            self.pos = 0;
        }
        self.pos += 1;
        Some(self.current[self.pos - 1])
    }

    fn err(&self, message: impl Into<String>) -> MeshError {
        MeshError::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn expect_token(&mut self, what: &str) -> Result<&'a str, MeshError> {
        self.next()
            .ok_or_else(|| self.err(format!("unexpected end of file, expected {what}")))
    }

    fn usize(&mut self, what: &str) -> Result<usize, MeshError> {
        let t = self.expect_token(what)?;
        t.parse()
            .map_err(|_| self.err(format!("expected {what}, found '{t}'")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, MeshError> {
        let t = self.expect_token(what)?;
        t.parse()
            .map_err(|_| self.err(format!("expected {what}, found '{t}'")))
    }
}

fn read_scalars(
    tok: &mut Tokens<'_>,
    count: usize,
    target: &mut BTreeMap<String, Vec<f64>>,
) -> Result<(), MeshError> {
    let name = tok.expect_token("field name")?.to_string();
    let _data_type = tok.expect_token("data type")?;
    // optional component count, then LOOKUP_TABLE
    let mut t = tok.expect_token("LOOKUP_TABLE")?;
    if t != "LOOKUP_TABLE" {
        let comps: usize = t
            .parse()
            .map_err(|_| tok.err(format!("expected component count, found '{t}'")))?;
        if comps != 1 {
            return Err(tok.err(format!(
                "field '{name}' has {comps} components; only scalar fields are supported"
            )));
        }
        t = tok.expect_token("LOOKUP_TABLE")?;
    }
    if t != "LOOKUP_TABLE" {
        return Err(tok.err(format!("expected LOOKUP_TABLE, found '{t}'")));
    }
    tok.expect_token("lookup table name")?;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(tok.f64("scalar value")?);
    }
    if target.insert(name.clone(), values).is_some() {
        return Err(tok.err(format!("duplicate field '{name}'")));
    }
    Ok(())
}

/// Parses a VTK legacy ASCII unstructured grid of tetrahedra.
///
/// All numeric data is read as `f64` whatever the declared type. Fields are
/// kept under their names verbatim.
pub fn read_vtk(text: &str) -> Result<UnstructuredMesh, MeshError> {
    let mut tok = Tokens::new(text);

    let (line, header) = tok.next_line().ok_or_else(|| MeshError::Parse {
        line: 1,
        message: "empty input".into(),
    })?;
    if !header.trim_start().starts_with("# vtk DataFile Version") {
        return Err(MeshError::Parse {
            line,
            message: format!("expected '# vtk DataFile Version' header, found '{header}'"),
        });
    }
    tok.next_line()
        .ok_or_else(|| tok.err("missing title line"))?;
    let (line, fmt) = tok
        .next_line()
        .ok_or_else(|| tok.err("missing format line"))?;
    if fmt.trim() != "ASCII" {
        return Err(MeshError::Parse {
            line,
            message: format!("only ASCII files are supported, found '{}'", fmt.trim()),
        });
    }
    if tok.expect_token("DATASET")? != "DATASET" {
        return Err(tok.err("expected DATASET"));
    }
    let kind = tok.expect_token("dataset type")?;
    if kind != "UNSTRUCTURED_GRID" {
        return Err(tok.err(format!("unsupported dataset type '{kind}'")));
    }

    let mut mesh = UnstructuredMesh::default();
    let mut have_points = false;
    let mut have_cells = false;
    let mut have_types = false;
    // Which attribute section subsequent SCALARS belong to.
    let mut section: Option<(bool, usize)> = None;

    while let Some(keyword) = tok.next() {
        match keyword {
            "POINTS" => {
                let n = tok.usize("point count")?;
                tok.expect_token("point data type")?;
                mesh.points.reserve(n);
                for _ in 0..n {
                    let x = tok.f64("coordinate")?;
                    let y = tok.f64("coordinate")?;
                    let z = tok.f64("coordinate")?;
                    mesh.points.push([x, y, z]);
                }
                have_points = true;
            }
            "CELLS" => {
                let n = tok.usize("cell count")?;
                let size = tok.usize("cell list size")?;
                if size != 5 * n {
                    return Err(tok.err(format!(
                        "cell list size {size} does not match {n} tetrahedra"
                    )));
                }
                mesh.cells.reserve(n);
                for _ in 0..n {
                    let k = tok.usize("vertex count")?;
                    if k != 4 {
                        return Err(MeshError::UnsupportedCell {
                            line: tok.line,
                            cell_type: format!("with {k} vertices"),
                        });
                    }
                    let mut cell = [0usize; 4];
                    for v in cell.iter_mut() {
                        *v = tok.usize("point index")?;
                    }
                    mesh.cells.push(cell);
                }
                have_cells = true;
            }
            "CELL_TYPES" => {
                let n = tok.usize("cell type count")?;
                if n != mesh.cells.len() {
                    return Err(tok.err(format!(
                        "CELL_TYPES count {n} does not match {} cells",
                        mesh.cells.len()
                    )));
                }
                for _ in 0..n {
                    let t = tok.expect_token("cell type")?;
                    if t != "10" {
                        return Err(MeshError::UnsupportedCell {
                            line: tok.line,
                            cell_type: t.to_string(),
                        });
                    }
                }
                have_types = true;
            }
            "CELL_DATA" => {
                let n = tok.usize("cell data count")?;
                section = Some((true, n));
            }
            "POINT_DATA" => {
                let n = tok.usize("point data count")?;
                section = Some((false, n));
            }
            "SCALARS" => {
                let (is_cell, n) =
                    section.ok_or_else(|| tok.err("SCALARS outside CELL_DATA/POINT_DATA"))?;
                let target = if is_cell {
                    &mut mesh.cell_fields
                } else {
                    &mut mesh.point_fields
                };
                read_scalars(&mut tok, n, target)?;
            }
            other => return Err(tok.err(format!("unexpected keyword '{other}'"))),
        }
    }

    if !have_points {
        return Err(tok.err("missing POINTS section"));
    }
    if !have_cells {
        return Err(tok.err("missing CELLS section"));
    }
    if !have_types {
        return Err(tok.err("missing CELL_TYPES section"));
    }
    mesh.validate()?;
    Ok(mesh)
}

fn push_f64(out: &mut String, v: f64) {
    // 17 significant digits round-trips every finite f64.
    let _ = write!(out, "{v:.16e}");
}

fn write_fields(out: &mut String, fields: &BTreeMap<String, Vec<f64>>) {
    for (name, values) in fields {
        let _ = writeln!(out, "SCALARS {name} double 1");
        out.push_str("LOOKUP_TABLE default\n");
        for v in values {
            push_f64(out, *v);
            out.push('\n');
        }
    }
}

/// Serializes `mesh` as VTK legacy ASCII. Fields are written in name order.
pub fn write_vtk(mesh: &UnstructuredMesh) -> String {
    let mut out = String::with_capacity(64 * (mesh.points.len() + mesh.cells.len()) + 128);
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("wearnet tetrahedral mesh\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", mesh.points.len());
    for p in &mesh.points {
        push_f64(&mut out, p[0]);
        out.push(' ');
        push_f64(&mut out, p[1]);
        out.push(' ');
        push_f64(&mut out, p[2]);
        out.push('\n');
    }
    let _ = writeln!(out, "CELLS {} {}", mesh.cells.len(), 5 * mesh.cells.len());
    for c in &mesh.cells {
        let _ = writeln!(out, "4 {} {} {} {}", c[0], c[1], c[2], c[3]);
    }
    let _ = writeln!(out, "CELL_TYPES {}", mesh.cells.len());
    for _ in &mesh.cells {
        let _ = writeln!(out, "{VTK_TETRA}");
    }
    if !mesh.cell_fields.is_empty() {
        let _ = writeln!(out, "CELL_DATA {}", mesh.cells.len());
        write_fields(&mut out, &mesh.cell_fields);
    }
    if !mesh.point_fields.is_empty() {
        let _ = writeln!(out, "POINT_DATA {}", mesh.points.len());
        write_fields(&mut out, &mesh.point_fields);
    }
    out
}
