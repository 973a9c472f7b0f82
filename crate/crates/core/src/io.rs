//! Point cloud, mesh and grid file formats.
//!
//! Point clouds: XYZ text and PLY (ascii or binary little-endian).
//! Meshes: OBJ text and PLY. Grids: the `SAPG` raw dump, a 16-byte
//! little-endian header (magic, resolution, dtype code, channel count)
//! followed by channel-major, x-fastest voxel data.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{PsrError, Result};
use crate::grid::{GridSpec, ScalarGrid, VectorGrid};
use crate::isosurface::TriangleMesh;
use crate::Vec3;

/// Points with optional per-point normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointData {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

/// Points with optional normals and optional triangles, as read from any
/// supported file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeometryData {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub triangles: Vec<[u32; 3]>,
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

fn unsupported(path: &Path, allowed: &str) -> PsrError {
    PsrError::InvalidParameter(format!(
        "{}: unsupported file extension (expected {allowed})",
        path.display()
    ))
}

/// Reads an `.xyz` or `.ply` point cloud.
pub fn read_point_cloud(path: impl AsRef<Path>) -> Result<PointData> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "xyz" => parse_xyz(&fs::read_to_string(path)?),
        "ply" => {
            let g = parse_ply(&fs::read(path)?)?;
            Ok(PointData {
                points: g.points,
                normals: g.normals,
            })
        }
        _ => Err(unsupported(path, ".xyz or .ply")),
    }
}

/// Reads points, normals and faces from `.xyz`, `.ply` or `.obj`.
pub fn read_geometry(path: impl AsRef<Path>) -> Result<GeometryData> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "xyz" => {
            let p = parse_xyz(&fs::read_to_string(path)?)?;
            Ok(GeometryData {
                points: p.points,
                normals: p.normals,
                triangles: Vec::new(),
            })
        }
        "ply" => parse_ply(&fs::read(path)?),
        "obj" => {
            let m = parse_obj(&fs::read_to_string(path)?)?;
            Ok(GeometryData {
                points: m.vertices().to_vec(),
                normals: None,
                triangles: m.triangles().to_vec(),
            })
        }
        _ => Err(unsupported(path, ".xyz, .ply or .obj")),
    }
}

/// Reads an `.obj` or `.ply` triangle mesh.
pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "obj" => parse_obj(&fs::read_to_string(path)?),
        "ply" => {
            let g = parse_ply(&fs::read(path)?)?;
            TriangleMesh::new(g.points, g.triangles)
        }
        _ => Err(unsupported(path, ".obj or .ply")),
    }
}

fn parse_f64(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| PsrError::parse(format!("line {line}"), format!("invalid number {token:?}")))?;
    if !v.is_finite() {
        return Err(PsrError::parse(format!("line {line}"), "non-finite value"));
    }
    Ok(v)
}

/// Parses `x y z [nx ny nz]` rows; `#` starts a comment.
pub fn parse_xyz(text: &str) -> Result<PointData> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut with_normals: Option<bool> = None;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let has_normal = match tokens.len() {
            3 => false,
            6 => true,
            n => {
                return Err(PsrError::parse(
                    format!("line {line}"),
                    format!("expected 3 or 6 columns, found {n}"),
                ))
            }
        };
        if *with_normals.get_or_insert(has_normal) != has_normal {
            return Err(PsrError::parse(
                format!("line {line}"),
                "normals must be given for every point or for none",
            ));
        }
        let v = tokens
            .iter()
            .map(|t| parse_f64(t, line))
            .collect::<Result<Vec<f64>>>()?;
        points.push(Vec3::new(v[0], v[1], v[2]));
        if has_normal {
            normals.push(Vec3::new(v[3], v[4], v[5]));
        }
    }
    Ok(PointData {
        points,
        normals: with_normals.unwrap_or(false).then_some(normals),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyScalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyScalar {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum PlyProperty {
    Scalar(String, PlyScalar),
    List(String, PlyScalar, PlyScalar),
}

impl PlyProperty {
    fn name(&self) -> &str {
        match self {
            Self::Scalar(n, _) | Self::List(n, _, _) => n,
        }
    }
}

#[derive(Debug, Clone)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

struct PlyHeader {
    format: PlyFormat,
    elements: Vec<PlyElement>,
    body_offset: usize,
    body_line: usize,
}

fn parse_ply_header(bytes: &[u8]) -> Result<PlyHeader> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut format = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| PsrError::parse(format!("byte {pos}"), "PLY header has no end_header"))?;
        line_no += 1;
        let loc = || format!("line {line_no}");
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| PsrError::parse(loc(), "PLY header is not text"))?
            .trim_end_matches('\r');
        pos += end + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if line.trim() != "ply" {
                return Err(PsrError::parse(loc(), "missing 'ply' magic"));
            }
            continue;
        }
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLe,
                    other => {
                        return Err(PsrError::parse(loc(), format!("unsupported PLY format {other}")))
                    }
                })
            }
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| PsrError::parse(loc(), format!("invalid element count {count:?}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count_ty, item_ty, name] => {
                let (Some(c), Some(i)) = (PlyScalar::from_name(count_ty), PlyScalar::from_name(item_ty))
                else {
                    return Err(PsrError::parse(loc(), "unknown list property type"));
                };
                elements
                    .last_mut()
                    .ok_or_else(|| PsrError::parse(loc(), "property before any element"))?
                    .properties
                    .push(PlyProperty::List(name.to_string(), c, i));
            }
            ["property", ty, name] => {
                let t = PlyScalar::from_name(ty)
                    .ok_or_else(|| PsrError::parse(loc(), format!("unknown property type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| PsrError::parse(loc(), "property before any element"))?
                    .properties
                    .push(PlyProperty::Scalar(name.to_string(), t));
            }
            ["end_header"] => break,
            _ => return Err(PsrError::parse(loc(), format!("malformed header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| PsrError::parse("header", "PLY header has no format line"))?;
    Ok(PlyHeader {
        format,
        elements,
        body_offset: pos,
        body_line: line_no,
    })
}

/// One decoded element row: scalar values then list values, in property order.
#[derive(Default)]
struct Row {
    scalars: Vec<f64>,
    lists: Vec<Vec<f64>>,
}

struct PlyBody<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    format: PlyFormat,
}

impl PlyBody<'_> {
    fn read_row(&mut self, element: &PlyElement, row: &mut Row) -> Result<()> {
        row.scalars.clear();
        row.lists.clear();
        match self.format {
            PlyFormat::BinaryLe => {
                for prop in &element.properties {
                    match prop {
                        PlyProperty::Scalar(_, t) => {
                            let v = self.take(*t)?;
                            row.scalars.push(v);
                        }
                        PlyProperty::List(_, c, t) => {
                            let n = self.take(*c)?;
                            if n < 0.0 {
                                return Err(PsrError::parse(format!("byte {}", self.pos), "negative list length"));
                            }
                            let items = (0..n as usize).map(|_| self.take(*t)).collect::<Result<Vec<_>>>()?;
                            row.lists.push(items);
                        }
                    }
                }
            }
            PlyFormat::Ascii => {
                let (text, line) = loop {
                    if self.pos >= self.bytes.len() {
                        return Err(PsrError::parse(
                            format!("line {}", self.line + 1),
                            format!("unexpected end of file in element {}", element.name),
                        ));
                    }
                    let rest = &self.bytes[self.pos..];
                    let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
                    self.pos += (end + 1).min(rest.len());
                    self.line += 1;
                    let text = std::str::from_utf8(&rest[..end])
                        .map_err(|_| PsrError::parse(format!("line {}", self.line), "invalid text"))?;
                    if !text.trim().is_empty() {
                        break (text, self.line);
                    }
                };
                let loc = || format!("line {line}");
                let mut tokens = text.split_whitespace();
                let mut next = || -> Result<f64> {
                    let t = tokens
                        .next()
                        .ok_or_else(|| PsrError::parse(loc(), format!("too few values for element {}", element.name)))?;
                    t.parse::<f64>()
                        .map_err(|_| PsrError::parse(loc(), format!("invalid number {t:?}")))
                };
                for prop in &element.properties {
                    match prop {
                        PlyProperty::Scalar(..) => {
                            let v = next()?;
                            row.scalars.push(v);
                        }
                        PlyProperty::List(..) => {
                            let n = next()?;
                            if n < 0.0 || n.fract() != 0.0 {
                                return Err(PsrError::parse(loc(), "invalid list length"));
                            }
                            let items = (0..n as usize).map(|_| next()).collect::<Result<Vec<_>>>()?;
                            row.lists.push(items);
                        }
                    }
                }
                if tokens.next().is_some() {
                    return Err(PsrError::parse(loc(), format!("too many values for element {}", element.name)));
                }
            }
        }
        Ok(())
    }

    fn take(&mut self, t: PlyScalar) -> Result<f64> {
        let n = t.size();
        if self.pos + n > self.bytes.len() {
            return Err(PsrError::parse(format!("byte {}", self.pos), "truncated PLY body"));
        }
        let v = t.decode(&self.bytes[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }
}

/// Parses a PLY file with a `vertex` element (x, y, z and optional nx, ny,
/// nz) and an optional `face` element (`vertex_indices` or `vertex_index`).
/// Polygons are fan-triangulated; other elements are skipped.
pub fn parse_ply(bytes: &[u8]) -> Result<GeometryData> {
    let header = parse_ply_header(bytes)?;
    let mut body = PlyBody {
        bytes,
        pos: header.body_offset,
        line: header.body_line,
        format: header.format,
    };
    let mut out = GeometryData::default();
    let mut seen_vertex = false;
    let mut row = Row::default();
    for element in &header.elements {
        let scalar_slot = |name: &str| {
            element
                .properties
                .iter()
                .filter(|p| matches!(p, PlyProperty::Scalar(..)))
                .position(|p| p.name() == name)
        };
        match element.name.as_str() {
            "vertex" => {
                seen_vertex = true;
                let pos_slots = ["x", "y", "z"].map(scalar_slot);
                let nrm_slots = ["nx", "ny", "nz"].map(scalar_slot);
                let [Some(sx), Some(sy), Some(sz)] = pos_slots else {
                    return Err(PsrError::parse("header", "vertex element lacks x, y or z"));
                };
                let normals = match nrm_slots {
                    [Some(a), Some(b), Some(c)] => Some([a, b, c]),
                    [None, None, None] => None,
                    _ => {
                        return Err(PsrError::parse(
                            "header",
                            "vertex normals must have all of nx, ny, nz",
                        ))
                    }
                };
                let mut nrm = Vec::new();
                for _ in 0..element.count {
                    body.read_row(element, &mut row)?;
                    let s = &row.scalars;
                    let p = Vec3::new(s[sx], s[sy], s[sz]);
                    if !p.iter().all(|c| c.is_finite()) {
                        return Err(PsrError::parse(format!("vertex {}", out.points.len()), "non-finite position"));
                    }
                    out.points.push(p);
                    if let Some([a, b, c]) = normals {
                        nrm.push(Vec3::new(s[a], s[b], s[c]));
                    }
                }
                out.normals = normals.map(|_| nrm);
            }
            "face" => {
                let slot = element
                    .properties
                    .iter()
                    .filter(|p| matches!(p, PlyProperty::List(..)))
                    .position(|p| p.name() == "vertex_indices" || p.name() == "vertex_index")
                    .ok_or_else(|| PsrError::parse("header", "face element lacks vertex_indices"))?;
                for f in 0..element.count {
                    body.read_row(element, &mut row)?;
                    let ids = &row.lists[slot];
                    if ids.len() < 3 {
                        return Err(PsrError::parse(format!("face {f}"), "face with fewer than 3 vertices"));
                    }
                    let ids: Vec<u32> = ids
                        .iter()
                        .map(|&i| {
                            if i >= 0.0 && i.fract() == 0.0 && i <= u32::MAX as f64 {
                                Ok(i as u32)
                            } else {
                                Err(PsrError::parse(format!("face {f}"), format!("invalid vertex index {i}")))
                            }
                        })
                        .collect::<Result<_>>()?;
                    for k in 1..ids.len() - 1 {
                        out.triangles.push([ids[0], ids[k], ids[k + 1]]);
                    }
                }
            }
            _ => {
                for _ in 0..element.count {
                    body.read_row(element, &mut row)?;
                }
            }
        }
    }
    if !seen_vertex {
        return Err(PsrError::parse("header", "PLY file has no vertex element"));
    }
    let n = out.points.len();
    if let Some(bad) = out.triangles.iter().flatten().find(|&&i| i as usize >= n) {
        return Err(PsrError::parse("faces", format!("vertex index {bad} out of range ({n} vertices)")));
    }
    Ok(out)
}

/// Parses `v` and `f` records of an OBJ file. Face tokens may carry
/// `/vt/vn` suffixes and negative (relative) indices; polygons are
/// fan-triangulated.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let v = tokens.map(|t| parse_f64(t, line)).collect::<Result<Vec<f64>>>()?;
                // an optional fourth weight or trailing colour is ignored
                if v.len() < 3 {
                    return Err(PsrError::parse(format!("line {line}"), "vertex with fewer than 3 coordinates"));
                }
                vertices.push(Vec3::new(v[0], v[1], v[2]));
            }
            Some("f") => {
                let ids = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let i: i64 = head
                            .parse()
                            .map_err(|_| PsrError::parse(format!("line {line}"), format!("invalid face index {t:?}")))?;
                        let resolved = match i {
                            0 => None,
                            i if i > 0 => Some(i - 1),
                            i => Some(vertices.len() as i64 + i),
                        };
                        match resolved {
                            Some(r) if r >= 0 && (r as usize) < vertices.len() => Ok(r as u32),
                            _ => Err(PsrError::parse(format!("line {line}"), format!("face index {i} out of range"))),
                        }
                    })
                    .collect::<Result<Vec<u32>>>()?;
                if ids.len() < 3 {
                    return Err(PsrError::parse(format!("line {line}"), "face with fewer than 3 vertices"));
                }
                for k in 1..ids.len() - 1 {
                    triangles.push([ids[0], ids[k], ids[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

/// Writes `.obj` (full precision text) or `.ply` (binary, float32 vertices).
pub fn write_mesh(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    let path = path.as_ref();
    let bytes = match extension(path).as_str() {
        "obj" => encode_obj(mesh).into_bytes(),
        "ply" => encode_ply_mesh(mesh),
        _ => return Err(unsupported(path, ".obj or .ply")),
    };
    write_bytes(path, &bytes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

pub fn encode_obj(mesh: &TriangleMesh) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    for v in mesh.vertices() {
        // shortest round-trip representation
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

pub fn encode_ply_mesh(mesh: &TriangleMesh) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices().len(),
        mesh.triangles().len()
    );
    let mut out = header.into_bytes();
    out.reserve(12 * mesh.vertices().len() + 13 * mesh.triangles().len());
    for v in mesh.vertices() {
        for c in v.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    for t in mesh.triangles() {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

/// Writes points (and normals) as `.xyz` text or binary `.ply` with
/// float64 properties; both reproduce the values exactly on read.
pub fn write_point_cloud(path: impl AsRef<Path>, points: &[Vec3], normals: Option<&[Vec3]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(n) = normals {
        if n.len() != points.len() {
            return Err(PsrError::LengthMismatch {
                what: "normals",
                expected: points.len(),
                actual: n.len(),
            });
        }
    }
    let bytes = match extension(path).as_str() {
        "xyz" => {
            use std::fmt::Write as _;
            let mut s = String::new();
            for (i, p) in points.iter().enumerate() {
                let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
                if let Some(n) = normals {
                    let _ = write!(s, " {} {} {}", n[i].x, n[i].y, n[i].z);
                }
                s.push('\n');
            }
            s.into_bytes()
        }
        "ply" => {
            let mut header = format!(
                "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
                points.len()
            );
            if normals.is_some() {
                header.push_str("property double nx\nproperty double ny\nproperty double nz\n");
            }
            header.push_str("end_header\n");
            let mut out = header.into_bytes();
            for (i, p) in points.iter().enumerate() {
                for c in p.iter() {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(n) = normals {
                    for c in n[i].iter() {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
            }
            out
        }
        _ => return Err(unsupported(path, ".xyz or .ply")),
    };
    write_bytes(path, &bytes)
}

const GRID_MAGIC: &[u8; 4] = b"SAPG";
const GRID_HEADER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridDtype {
    F32,
    #[default]
    F64,
}

impl GridDtype {
    fn code(self) -> u32 {
        match self {
            Self::F32 => 0,
            Self::F64 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

/// A scalar or 3-channel grid as stored in a dump.
#[derive(Debug, Clone, PartialEq)]
pub enum GridData {
    Scalar(ScalarGrid),
    Vector(VectorGrid),
}

impl GridData {
    pub fn spec(&self) -> GridSpec {
        match self {
            Self::Scalar(g) => g.spec(),
            Self::Vector(g) => g.spec(),
        }
    }

    pub fn channels(&self) -> u32 {
        match self {
            Self::Scalar(_) => 1,
            Self::Vector(_) => 3,
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Self::Scalar(g) => g.values(),
            Self::Vector(g) => g.values(),
        }
    }
}

pub fn encode_grid(grid: &GridData, dtype: GridDtype) -> Vec<u8> {
    let values = grid.values();
    let mut out = Vec::with_capacity(GRID_HEADER + values.len() * dtype.size());
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&(grid.spec().resolution() as u32).to_le_bytes());
    out.extend_from_slice(&dtype.code().to_le_bytes());
    out.extend_from_slice(&grid.channels().to_le_bytes());
    match dtype {
        GridDtype::F32 => values.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        GridDtype::F64 => values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<(GridData, GridDtype)> {
    if bytes.len() < GRID_HEADER {
        return Err(PsrError::parse(
            format!("byte {}", bytes.len()),
            format!("truncated grid header ({} of {GRID_HEADER} bytes)", bytes.len()),
        ));
    }
    if &bytes[..4] != GRID_MAGIC {
        return Err(PsrError::parse("byte 0", "bad magic, expected \"SAPG\""));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
    let r = word(1) as usize;
    let dtype = match word(2) {
        0 => GridDtype::F32,
        1 => GridDtype::F64,
        c => return Err(PsrError::parse("byte 8", format!("unknown dtype code {c}"))),
    };
    let channels = word(3) as usize;
    if channels != 1 && channels != 3 {
        return Err(PsrError::parse("byte 12", format!("unsupported channel count {channels}")));
    }
    let spec = GridSpec::new(r).map_err(|_| PsrError::parse("byte 4", format!("invalid resolution {r}")))?;
    let count = spec.voxel_count() * channels;
    let expected = count * dtype.size();
    let payload = &bytes[GRID_HEADER..];
    if payload.len() != expected {
        let what = if payload.len() < expected {
            "truncated payload"
        } else {
            "payload longer than the header implies"
        };
        return Err(PsrError::parse(
            format!("byte {GRID_HEADER}"),
            format!("{what}: expected {expected} bytes, found {}", payload.len()),
        ));
    }
    let values: Vec<f64> = match dtype {
        GridDtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        GridDtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let grid = if channels == 1 {
        GridData::Scalar(ScalarGrid::from_values(spec, values)?)
    } else {
        GridData::Vector(VectorGrid::from_values(spec, values)?)
    };
    Ok((grid, dtype))
}

pub fn write_grid(path: impl AsRef<Path>, grid: &GridData, dtype: GridDtype) -> Result<()> {
    write_bytes(path.as_ref(), &encode_grid(grid, dtype))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<(GridData, GridDtype)> {
    decode_grid(&fs::read(path)?)
}
