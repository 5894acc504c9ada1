//! Point cloud files: PLY (ascii and binary little-endian) and XYZ text.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pcae_core::PointCloud;

use crate::error::{Error, Location, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    PlyAscii,
    PlyBinary,
    Xyz,
}

impl PointFormat {
    /// Format implied by a file extension; `.ply` is written as binary.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(PointFormat::PlyBinary),
            "xyz" | "txt" => Some(PointFormat::Xyz),
            _ => None,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "ply" | "ply-binary" | "binary" => Some(PointFormat::PlyBinary),
            "ply-ascii" | "ascii" => Some(PointFormat::PlyAscii),
            "xyz" => Some(PointFormat::Xyz),
            _ => None,
        }
    }
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
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
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

#[derive(Debug)]
struct Header {
    binary: bool,
    elements: Vec<Element>,
    /// Byte offset of the first body byte.
    body: usize,
    /// Line number of the first body line.
    body_line: usize,
}

fn parse_err(path: &Path, location: Location, reason: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), location, reason: reason.into() }
}

fn parse_header(path: &Path, data: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = data[pos..].iter().position(|&b| b == b'\n').map(|i| pos + i).ok_or_else(|| {
            parse_err(path, Location::Line(line_no + 1), "header is not terminated by end_header")
        })?;
        line_no += 1;
        let line = std::str::from_utf8(&data[pos..end])
            .map_err(|_| parse_err(path, Location::Line(line_no), "header is not ASCII"))?
            .trim_end_matches('\r');
        pos = end + 1;
        let at = Location::Line(line_no);
        let words: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if line.trim() != "ply" {
                return Err(parse_err(path, at, "missing 'ply' magic line"));
            }
            continue;
        }
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                binary = Some(match *fmt {
                    "ascii" => false,
                    "binary_little_endian" => true,
                    other => return Err(parse_err(path, at, format!("unsupported PLY format '{other}'"))),
                })
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| parse_err(path, at, format!("bad element count '{count}'")))?;
                elements.push(Element { name: name.to_string(), count, properties: Vec::new() });
            }
            ["property", "list", count, item, _name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(path, at, "property before any element"))?;
                let count = Scalar::parse(count).ok_or_else(|| parse_err(path, at, format!("unknown type '{count}'")))?;
                let item = Scalar::parse(item).ok_or_else(|| parse_err(path, at, format!("unknown type '{item}'")))?;
                el.properties.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(path, at, "property before any element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| parse_err(path, at, format!("unknown type '{ty}'")))?;
                el.properties.push(Property::Scalar { name: name.to_string(), ty });
            }
            ["end_header"] => break,
            _ => return Err(parse_err(path, at, format!("unrecognized header line '{line}'"))),
        }
    }
    let binary = binary.ok_or_else(|| parse_err(path, Location::Line(2), "missing format line"))?;
    Ok(Header { binary, elements, body: pos, body_line: line_no + 1 })
}

/// Indices of x, y, z among the vertex element's properties.
fn xyz_slots(path: &Path, el: &Element) -> Result<[usize; 3]> {
    let mut slots = [usize::MAX; 3];
    for (i, p) in el.properties.iter().enumerate() {
        if let Property::Scalar { name, ty } = p {
            let axis = match name.as_str() {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                _ => continue,
            };
            if !matches!(ty, Scalar::F32 | Scalar::F64) {
                return Err(parse_err(path, Location::Line(1), format!("vertex property '{name}' must be float or double")));
            }
            slots[axis] = i;
        }
    }
    if slots.contains(&usize::MAX) {
        return Err(parse_err(path, Location::Line(1), "vertex element lacks x, y or z"));
    }
    Ok(slots)
}

fn finite_point(path: &Path, p: [f64; 3], at: Location) -> Result<[f64; 3]> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(p)
    } else {
        Err(parse_err(path, at, "non-finite coordinate"))
    }
}

fn read_binary_body(path: &Path, data: &[u8], header: &Header) -> Result<Vec<[f64; 3]>> {
    let mut pos = header.body;
    let need = |pos: usize, n: usize| -> Result<()> {
        if pos + n > data.len() {
            Err(parse_err(path, Location::Byte(pos), format!("truncated body: need {n} more bytes")))
        } else {
            Ok(())
        }
    };
    for el in &header.elements {
        let is_vertex = el.name == "vertex";
        let slots = if is_vertex { Some(xyz_slots(path, el)?) } else { None };
        let mut points = Vec::with_capacity(if is_vertex { el.count } else { 0 });
        for _ in 0..el.count {
            let start = pos;
            let mut p = [0.0; 3];
            for (i, prop) in el.properties.iter().enumerate() {
                match *prop {
                    Property::Scalar { ty, .. } => {
                        need(pos, ty.size())?;
                        if let Some(axis) = slots.and_then(|s| s.iter().position(|&j| j == i)) {
                            p[axis] = ty.read_le(&data[pos..]);
                        }
                        pos += ty.size();
                    }
                    Property::List { count, item } => {
                        need(pos, count.size())?;
                        let n = count.read_le(&data[pos..]);
                        if !(n >= 0.0) {
                            return Err(parse_err(path, Location::Byte(pos), "negative list length"));
                        }
                        pos += count.size();
                        let bytes = n as usize * item.size();
                        need(pos, bytes)?;
                        pos += bytes;
                    }
                }
            }
            if is_vertex {
                points.push(finite_point(path, p, Location::Byte(start))?);
            }
        }
        if is_vertex {
            return Ok(points);
        }
    }
    Err(parse_err(path, Location::Line(1), "no vertex element"))
}

fn read_ascii_body(path: &Path, data: &[u8], header: &Header) -> Result<Vec<[f64; 3]>> {
    let text = std::str::from_utf8(&data[header.body..])
        .map_err(|e| parse_err(path, Location::Byte(header.body + e.valid_up_to()), "body is not valid text"))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (header.body_line + i, l)).filter(|(_, l)| !l.trim().is_empty());
    let eof_line = header.body_line + text.lines().count();
    for el in &header.elements {
        let is_vertex = el.name == "vertex";
        let slots = if is_vertex { Some(xyz_slots(path, el)?) } else { None };
        let mut points = Vec::with_capacity(if is_vertex { el.count } else { 0 });
        for _ in 0..el.count {
            let (line_no, line) = lines
                .next()
                .ok_or_else(|| parse_err(path, Location::Line(eof_line), format!("truncated body: expected more '{}' records", el.name)))?;
            let at = Location::Line(line_no);
            if let Some(slots) = slots {
                let tokens: Vec<&str> = line.split_whitespace().collect();
                let mut p = [0.0; 3];
                for (axis, &slot) in slots.iter().enumerate() {
                    // scalar properties precede any list in vertex records we read
                    let tok = tokens.get(slot).ok_or_else(|| parse_err(path, at, "too few values in vertex record"))?;
                    p[axis] = tok.parse().map_err(|_| parse_err(path, at, format!("bad number '{tok}'")))?;
                }
                points.push(finite_point(path, p, at)?);
            }
        }
        if is_vertex {
            return Ok(points);
        }
    }
    Err(parse_err(path, Location::Line(1), "no vertex element"))
}

fn into_cloud(path: &Path, points: Vec<[f64; 3]>) -> Result<PointCloud> {
    if points.is_empty() {
        return Err(Error::Data(format!("{}: file contains no points", path.display())));
    }
    Ok(PointCloud::new(points)?)
}

/// Parses PLY bytes; `path` is only used in error messages.
pub fn parse_ply(path: &Path, data: &[u8]) -> Result<(PointCloud, PointFormat)> {
    let header = parse_header(path, data)?;
    let points = if header.binary { read_binary_body(path, data, &header)? } else { read_ascii_body(path, data, &header)? };
    let format = if header.binary { PointFormat::PlyBinary } else { PointFormat::PlyAscii };
    Ok((into_cloud(path, points)?, format))
}

/// Parses XYZ text: one point per line, extra columns ignored, `#` comments skipped.
pub fn parse_xyz(path: &Path, text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = Location::Line(i + 1);
        let mut tokens = line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty());
        let mut p = [0.0; 3];
        for v in &mut p {
            let tok = tokens.next().ok_or_else(|| parse_err(path, at, "expected three coordinates"))?;
            *v = tok.parse().map_err(|_| parse_err(path, at, format!("bad number '{tok}'")))?;
        }
        points.push(finite_point(path, p, at)?);
    }
    into_cloud(path, points)
}

/// Reads a cloud; PLY files must match the declared ascii/binary variant.
pub fn read_point_cloud(path: &Path, format: PointFormat) -> Result<PointCloud> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        PointFormat::Xyz => {
            let text = std::str::from_utf8(&data)
                .map_err(|e| parse_err(path, Location::Byte(e.valid_up_to()), "file is not valid text"))?;
            parse_xyz(path, text)
        }
        PointFormat::PlyAscii | PointFormat::PlyBinary => {
            let (pc, found) = parse_ply(path, &data)?;
            if found != format {
                return Err(parse_err(path, Location::Line(2), format!("declared {format:?} but file is {found:?}")));
            }
            Ok(pc)
        }
    }
}

/// Reads a cloud, choosing the parser from the extension (and the PLY header).
pub fn read_any(path: &Path) -> Result<PointCloud> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    match PointFormat::from_path(path) {
        Some(PointFormat::Xyz) => {
            let text = std::str::from_utf8(&data)
                .map_err(|e| parse_err(path, Location::Byte(e.valid_up_to()), "file is not valid text"))?;
            parse_xyz(path, text)
        }
        Some(_) => Ok(parse_ply(path, &data)?.0),
        None => Err(Error::Usage(format!("{}: unknown point cloud extension (use .ply or .xyz)", path.display()))),
    }
}

/// Serializes a cloud. Text formats use 9 significant digits.
pub fn encode_point_cloud(pc: &PointCloud, format: PointFormat) -> Vec<u8> {
    let mut out = Vec::new();
    let n = pc.count();
    match format {
        PointFormat::Xyz => {
            for p in pc.points() {
                writeln!(out, "{:.8e} {:.8e} {:.8e}", p[0], p[1], p[2]).unwrap();
            }
        }
        PointFormat::PlyAscii => {
            write!(out, "ply\nformat ascii 1.0\nelement vertex {n}\nproperty double x\nproperty double y\nproperty double z\nend_header\n").unwrap();
            for p in pc.points() {
                writeln!(out, "{:.8e} {:.8e} {:.8e}", p[0], p[1], p[2]).unwrap();
            }
        }
        PointFormat::PlyBinary => {
            write!(out, "ply\nformat binary_little_endian 1.0\nelement vertex {n}\nproperty double x\nproperty double y\nproperty double z\nend_header\n").unwrap();
            for p in pc.points() {
                for v in p {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

/// Writes `bytes` to `path` via a temporary sibling and a rename, so a
/// failure never leaves a partial file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("'{}' is not a file path", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let result = fs::File::create(&tmp).and_then(|mut f| {
        f.write_all(bytes)?;
        f.sync_all()
    });
    if let Err(e) = result.and_then(|_| fs::rename(&tmp, path)) {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn write_point_cloud(pc: &PointCloud, path: &Path, format: PointFormat) -> Result<()> {
    write_atomic(path, &encode_point_cloud(pc, format))
}
