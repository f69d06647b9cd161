//! Minimal PLY reader/writer for vertex positions.
//!
//! Reads ASCII and binary little-endian files, keeping only the `x`, `y`, `z`
//! vertex properties. Writes ASCII with `float` coordinates. Landmarks live in
//! a JSON sidecar next to the PLY (`face.ply` → `face.landmarks.json`).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use nalgebra::Point3;
use thiserror::Error;

use super::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Byte(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::Byte(b) => write!(f, "byte {b}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed PLY header at line {line}: {message}")]
    Header { line: usize, message: String },
    #[error("truncated PLY body at {at}: {message}")]
    Truncated { at: Location, message: String },
    #[error("invalid PLY body at {at}: {message}")]
    Body { at: Location, message: String },
    #[error("PLY file declares no vertices")]
    NoVertices,
    #[error("invalid landmark sidecar {path}: {message}")]
    Landmarks { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => LittleEndian::read_i16(b) as f64,
            Scalar::U16 => LittleEndian::read_u16(b) as f64,
            Scalar::I32 => LittleEndian::read_i32(b) as f64,
            Scalar::U32 => LittleEndian::read_u32(b) as f64,
            Scalar::F32 => LittleEndian::read_f32(b) as f64,
            Scalar::F64 => LittleEndian::read_f64(b),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

impl Element {
    fn position(&self, name: &str) -> Option<usize> {
        self.properties
            .iter()
            .position(|p| matches!(p, Property::Scalar { name: n, .. } if n == name))
    }
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    /// Byte offset of the body.
    body_start: usize,
    /// Number of header lines, so ASCII body lines can be reported absolutely.
    lines: usize,
}

fn header_err(line: usize, message: impl Into<String>) -> PlyError {
    PlyError::Header {
        line,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut offset = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(header_err(line_no + 1, "missing end_header"));
        };
        line_no += 1;
        let raw = &rest[..nl];
        offset += nl + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| header_err(line_no, "header is not valid UTF-8"))?
            .trim_end_matches('\r');
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if tokens != ["ply"] {
                return Err(header_err(1, "missing 'ply' magic"));
            }
            continue;
        }
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", kind, _version] => {
                format = Some(match *kind {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLittleEndian,
                    other => {
                        return Err(header_err(line_no, format!("unsupported format '{other}'")))
                    }
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| header_err(line_no, format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: (*name).to_owned(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let (Some(count), Some(item)) = (Scalar::parse(count), Scalar::parse(item)) else {
                    return Err(header_err(line_no, "unknown list property type"));
                };
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line_no, "property before any element"))?;
                el.properties.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| header_err(line_no, format!("unknown property type '{ty}'")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line_no, "property before any element"))?;
                el.properties.push(Property::Scalar {
                    name: (*name).to_owned(),
                    ty,
                });
            }
            ["end_header"] => break,
            _ => return Err(header_err(line_no, format!("unrecognized line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| header_err(line_no, "no format line"))?;
    let vertex = elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| header_err(line_no, "no vertex element"))?;
    for axis in ["x", "y", "z"] {
        if vertex.position(axis).is_none() {
            return Err(header_err(
                line_no,
                format!("vertex element lacks '{axis}'"),
            ));
        }
    }
    Ok(Header {
        format,
        elements,
        body_start: offset,
        lines: line_no,
    })
}

fn parse_ascii(bytes: &[u8], header: &Header) -> Result<Vec<Point3<f64>>, PlyError> {
    let body = std::str::from_utf8(&bytes[header.body_start..]).map_err(|e| PlyError::Body {
        at: Location::Byte(header.body_start + e.valid_up_to()),
        message: "ASCII body is not valid UTF-8".into(),
    })?;
    let mut lines = body
        .lines()
        .enumerate()
        .map(|(i, l)| (header.lines + i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut last_line = header.lines;
    let mut points = Vec::new();
    for el in &header.elements {
        let axes = ["x", "y", "z"].map(|a| el.position(a));
        for k in 0..el.count {
            let Some((line_no, line)) = lines.next() else {
                return Err(PlyError::Truncated {
                    at: Location::Line(last_line + 1),
                    message: format!("expected {} {} of {}", el.name, k + 1, el.count),
                });
            };
            last_line = line_no;
            let mut tokens = line.split_whitespace();
            let mut values = Vec::with_capacity(el.properties.len());
            let bad = |message: String| PlyError::Body {
                at: Location::Line(line_no),
                message,
            };
            for prop in &el.properties {
                let mut next = || -> Result<f64, PlyError> {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| bad(format!("too few values for {}", el.name)))?;
                    tok.parse::<f64>()
                        .map_err(|_| bad(format!("cannot parse '{tok}' as a number")))
                };
                match prop {
                    Property::Scalar { .. } => values.push(next()?),
                    Property::List { .. } => {
                        let n = next()?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(bad(format!("invalid list length {n}")));
                        }
                        for _ in 0..n as usize {
                            next()?;
                        }
                        values.push(f64::NAN);
                    }
                }
            }
            if el.name == "vertex" {
                points.push(vertex_point(&values, axes, Location::Line(line_no))?);
            }
        }
        if el.name == "vertex" {
            break;
        }
    }
    Ok(points)
}

fn parse_binary(bytes: &[u8], header: &Header) -> Result<Vec<Point3<f64>>, PlyError> {
    let mut offset = header.body_start;
    let mut points = Vec::new();
    let take = |offset: &mut usize, size: usize, what: &str| -> Result<(usize, &[u8]), PlyError> {
        if *offset + size > bytes.len() {
            return Err(PlyError::Truncated {
                at: Location::Byte(*offset),
                message: format!(
                    "need {size} bytes for {what}, {} left",
                    bytes.len() - *offset
                ),
            });
        }
        let start = *offset;
        *offset += size;
        Ok((start, &bytes[start..start + size]))
    };
    for el in &header.elements {
        let axes = ["x", "y", "z"].map(|a| el.position(a));
        for k in 0..el.count {
            let what = format!("{} {} of {}", el.name, k + 1, el.count);
            let mut values = Vec::with_capacity(el.properties.len());
            let mut start = None;
            for prop in &el.properties {
                match *prop {
                    Property::Scalar { ty, .. } => {
                        let (at, b) = take(&mut offset, ty.size(), &what)?;
                        start.get_or_insert(at);
                        values.push(ty.read_le(b));
                    }
                    Property::List { count, item } => {
                        let (at, b) = take(&mut offset, count.size(), &what)?;
                        start.get_or_insert(at);
                        let n = count.read_le(b);
                        if n < 0.0 {
                            return Err(PlyError::Body {
                                at: Location::Byte(at),
                                message: format!("negative list length {n}"),
                            });
                        }
                        take(&mut offset, item.size() * n as usize, &what)?;
                        values.push(f64::NAN);
                    }
                }
            }
            if el.name == "vertex" {
                let at = Location::Byte(start.unwrap_or(offset));
                points.push(vertex_point(&values, axes, at)?);
            }
        }
        if el.name == "vertex" {
            break;
        }
    }
    Ok(points)
}

fn vertex_point(
    values: &[f64],
    axes: [Option<usize>; 3],
    at: Location,
) -> Result<Point3<f64>, PlyError> {
    let [x, y, z] = axes.map(|a| a.map_or(f64::NAN, |i| values[i]));
    let p = Point3::new(x, y, z);
    if !super::is_finite(&p) {
        return Err(PlyError::Body {
            at,
            message: "non-finite vertex coordinate".into(),
        });
    }
    Ok(p)
}

/// Sidecar path holding landmarks for `ply_path`.
pub fn landmark_path(ply_path: &Path) -> PathBuf {
    ply_path.with_extension("landmarks.json")
}

/// Parses PLY bytes into points (no sidecar handling).
pub fn parse_ply(bytes: &[u8]) -> Result<Vec<Point3<f64>>, PlyError> {
    let header = parse_header(bytes)?;
    let vertex_count = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .map_or(0, |e| e.count);
    if vertex_count == 0 {
        return Err(PlyError::NoVertices);
    }
    match header.format {
        Format::Ascii => parse_ascii(bytes, &header),
        Format::BinaryLittleEndian => parse_binary(bytes, &header),
    }
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud, PlyError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| PlyError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut cloud = PointCloud::from_points_unchecked(parse_ply(&bytes)?);
    let sidecar = landmark_path(path);
    if sidecar.exists() {
        cloud.set_landmarks(read_landmarks(&sidecar)?);
    }
    Ok(cloud)
}

fn read_landmarks(path: &Path) -> Result<BTreeMap<String, Point3<f64>>, PlyError> {
    let text = fs::read_to_string(path).map_err(|source| PlyError::Io {
        path: path.to_owned(),
        source,
    })?;
    let raw: BTreeMap<String, [f64; 3]> =
        serde_json::from_str(&text).map_err(|e| PlyError::Landmarks {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
    raw.into_iter()
        .map(|(name, p)| {
            let p = Point3::from(p);
            if super::is_finite(&p) {
                Ok((name, p))
            } else {
                Err(PlyError::Landmarks {
                    path: path.to_owned(),
                    message: format!("non-finite landmark '{name}'"),
                })
            }
        })
        .collect()
}

/// ASCII PLY encoding with `float` coordinates.
pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + cloud.len() * 32);
    write!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    )
    .expect("write to Vec");
    for p in cloud.points() {
        writeln!(out, "{} {} {}", p.x as f32, p.y as f32, p.z as f32).expect("write to Vec");
    }
    out
}

/// Writes the cloud as ASCII PLY, plus a landmark sidecar when the cloud has
/// landmarks. A stale sidecar is removed when it has none.
pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), PlyError> {
    let path = path.as_ref();
    let io_err = |p: &Path| {
        let p = p.to_owned();
        move |source| PlyError::Io { path: p, source }
    };
    fs::write(path, encode_ply(cloud)).map_err(io_err(path))?;
    let sidecar = landmark_path(path);
    if cloud.landmarks().is_empty() {
        if sidecar.exists() {
            fs::remove_file(&sidecar).map_err(io_err(&sidecar))?;
        }
    } else {
        let raw: BTreeMap<&str, [f64; 3]> = cloud
            .landmarks()
            .iter()
            .map(|(k, p)| (k.as_str(), [p.x, p.y, p.z]))
            .collect();
        let json = serde_json::to_string_pretty(&raw).expect("landmarks serialize");
        fs::write(&sidecar, json).map_err(io_err(&sidecar))?;
    }
    Ok(())
}
