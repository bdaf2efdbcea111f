//! OBJ and PLY readers, OBJ writer.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use super::{MeshError, TriangleMesh};
use crate::vec3::Vec3;

/// Loads an OBJ or PLY file, dispatching on the extension (falling back to
/// content sniffing for unknown extensions).
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh, MeshError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("ply") => parse_ply(&bytes),
        Some("obj") => parse_obj(&String::from_utf8_lossy(&bytes)),
        _ if bytes.starts_with(b"ply") => parse_ply(&bytes),
        _ => parse_obj(&String::from_utf8_lossy(&bytes)),
    }
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = content.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        match tag {
            "v" | "vn" => {
                let mut xyz = [0.0; 3];
                for slot in &mut xyz {
                    let tok = tokens.next().ok_or_else(|| MeshError::ParseLine {
                        line,
                        message: format!("`{tag}` needs three coordinates"),
                    })?;
                    *slot = tok.parse().map_err(|_| MeshError::ParseLine {
                        line,
                        message: format!("invalid number `{tok}`"),
                    })?;
                }
                if tag == "v" {
                    vertices.push(Vec3::from(xyz));
                } else {
                    normals.push(Vec3::from(xyz));
                }
            }
            "f" => {
                let mut poly = Vec::with_capacity(4);
                for tok in tokens {
                    let first = tok.split('/').next().unwrap_or("");
                    let idx: i64 = first.parse().map_err(|_| MeshError::ParseLine {
                        line,
                        message: format!("invalid face index `{tok}`"),
                    })?;
                    let resolved = match idx {
                        0 => {
                            return Err(MeshError::ParseLine {
                                line,
                                message: "face index 0 (OBJ indices are 1-based)".into(),
                            })
                        }
                        i if i > 0 => i - 1,
                        i => vertices.len() as i64 + i,
                    };
                    if resolved < 0 || resolved > u32::MAX as i64 {
                        return Err(MeshError::ParseLine {
                            line,
                            message: format!("face index `{tok}` out of range"),
                        });
                    }
                    poly.push(resolved as u32);
                }
                if poly.len() < 3 {
                    return Err(MeshError::ParseLine {
                        line,
                        message: "face needs at least three vertices".into(),
                    });
                }
                fan_triangulate(&poly, &mut faces);
            }
            _ => {}
        }
    }
    let mesh = TriangleMesh::new(vertices, faces)?;
    attach_normals(mesh, normals)
}

fn fan_triangulate(poly: &[u32], faces: &mut Vec<[u32; 3]>) {
    for k in 1..poly.len() - 1 {
        let tri = [poly[0], poly[k], poly[k + 1]];
        if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
            faces.push(tri);
        }
    }
}

fn attach_normals(mesh: TriangleMesh, normals: Vec<Vec3>) -> Result<TriangleMesh, MeshError> {
    if normals.is_empty() || normals.len() != mesh.vertices().len() {
        return Ok(mesh);
    }
    let normals = normals
        .into_iter()
        .map(|n| n.normalized().unwrap_or(Vec3::ZERO))
        .collect();
    mesh.with_normals(normals)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, ScalarType),
    List(String, ScalarType, ScalarType),
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar(n, _) | Property::List(n, _, _) => n,
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Parses ASCII or binary little-endian PLY with `vertex` (x, y, z and
/// optionally nx, ny, nz) and `face` (vertex_indices list) elements.
pub fn parse_ply(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    let mut header = HeaderLines { bytes, pos: 0, line: 0 };
    let header_err = |line: usize, message: &str| MeshError::ParseLine {
        line,
        message: message.to_string(),
    };

    match header.next_line() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(header_err(1, "missing `ply` magic")),
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (line, l) = header
            .next_line()
            .ok_or_else(|| header_err(header.line, "missing end_header"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => {
                        return Err(MeshError::UnsupportedFormat(
                            "big-endian binary PLY is not supported".into(),
                        ))
                    }
                    other => return Err(header_err(line, &format!("unknown PLY format `{other}`"))),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| header_err(line, "invalid element count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", ct, it, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line, "property before element"))?;
                let ct = ScalarType::parse(ct).ok_or_else(|| header_err(line, "unknown list count type"))?;
                let it = ScalarType::parse(it).ok_or_else(|| header_err(line, "unknown list item type"))?;
                el.properties.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line, "property before element"))?;
                let ty = ScalarType::parse(ty).ok_or_else(|| header_err(line, "unknown property type"))?;
                el.properties.push(Property::Scalar(name.to_string(), ty));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(header_err(line, &format!("unexpected header line `{l}`"))),
        }
    }
    let format = format.ok_or_else(|| header_err(header.line, "missing format line"))?;
    let (pos, line_no) = (header.pos, header.line);

    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();
    let mut reader = match format {
        PlyFormat::Ascii => BodyReader::Ascii(AsciiBody::new(&bytes[pos..], line_no)),
        PlyFormat::BinaryLittleEndian => BodyReader::Binary { bytes, pos },
    };

    for el in &elements {
        let find = |n: &str| el.properties.iter().position(|p| p.name() == n);
        let xyz = [find("x"), find("y"), find("z")];
        let nxyz = [find("nx"), find("ny"), find("nz")];
        let list_idx = find("vertex_indices").or_else(|| find("vertex_index"));
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        if is_vertex && xyz.iter().any(Option::is_none) {
            return Err(header_err(line_no, "vertex element lacks x/y/z"));
        }
        let has_normals = is_vertex && nxyz.iter().all(Option::is_some);
        let mut scalars = vec![0.0; el.properties.len()];
        let mut list = Vec::new();
        for _ in 0..el.count {
            reader.start_record()?;
            for (pi, prop) in el.properties.iter().enumerate() {
                match prop {
                    Property::Scalar(_, ty) => scalars[pi] = reader.scalar(*ty)?,
                    Property::List(_, ct, it) => {
                        let n = reader.scalar(*ct)?;
                        if !(n >= 0.0) {
                            return Err(reader.error("negative list length"));
                        }
                        let keep = is_face && Some(pi) == list_idx;
                        if keep {
                            list.clear();
                        }
                        for _ in 0..n as usize {
                            let v = reader.scalar(*it)?;
                            if keep {
                                if !(v >= 0.0) || v > u32::MAX as f64 {
                                    return Err(reader.error("face index out of range"));
                                }
                                list.push(v as u32);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                let g = |i: Option<usize>| scalars[i.unwrap()];
                vertices.push(Vec3::new(g(xyz[0]), g(xyz[1]), g(xyz[2])));
                if has_normals {
                    normals.push(Vec3::new(g(nxyz[0]), g(nxyz[1]), g(nxyz[2])));
                }
            } else if is_face && list_idx.is_some() {
                if list.len() < 3 {
                    return Err(reader.error("face needs at least three vertices"));
                }
                fan_triangulate(&list, &mut faces);
            }
        }
    }
    let mesh = TriangleMesh::new(vertices, faces)?;
    attach_normals(mesh, normals)
}

struct HeaderLines<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl HeaderLines<'_> {
    fn next_line(&mut self) -> Option<(usize, String)> {
        let bytes = self.bytes;
        if self.pos >= bytes.len() {
            return None;
        }
        let end = bytes[self.pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |i| self.pos + i);
        let s = String::from_utf8_lossy(&bytes[self.pos..end])
            .trim_end_matches('\r')
            .to_string();
        self.pos = (end + 1).min(bytes.len());
        self.line += 1;
        Some((self.line, s))
    }
}

struct AsciiBody<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    first_line: usize,
    current: Vec<&'a str>,
    cursor: usize,
    line: usize,
}

impl<'a> AsciiBody<'a> {
    fn new(bytes: &'a [u8], header_lines: usize) -> Self {
        let text = std::str::from_utf8(bytes).unwrap_or("");
        AsciiBody {
            lines: text.lines().enumerate(),
            first_line: header_lines + 1,
            current: Vec::new(),
            cursor: 0,
            line: header_lines,
        }
    }
}

enum BodyReader<'a> {
    Ascii(AsciiBody<'a>),
    Binary { bytes: &'a [u8], pos: usize },
}

impl BodyReader<'_> {
    fn start_record(&mut self) -> Result<(), MeshError> {
        if let BodyReader::Ascii(body) = self {
            loop {
                let (i, l) = body.lines.next().ok_or(MeshError::ParseLine {
                    line: body.line + 1,
                    message: "unexpected end of PLY body".into(),
                })?;
                body.line = body.first_line + i;
                body.current = l.split_whitespace().collect();
                body.cursor = 0;
                if !body.current.is_empty() {
                    return Ok(());
                }
            }
        }
        Ok(())
    }

    fn scalar(&mut self, ty: ScalarType) -> Result<f64, MeshError> {
        match self {
            BodyReader::Ascii(body) => {
                let tok = body.current.get(body.cursor).ok_or(MeshError::ParseLine {
                    line: body.line,
                    message: "too few values in PLY record".into(),
                })?;
                body.cursor += 1;
                tok.parse::<f64>().map_err(|_| MeshError::ParseLine {
                    line: body.line,
                    message: format!("invalid number `{tok}`"),
                })
            }
            BodyReader::Binary { bytes, pos } => {
                let n = ty.size();
                if *pos + n > bytes.len() {
                    return Err(MeshError::ParseByte {
                        offset: *pos,
                        message: "unexpected end of binary PLY body".into(),
                    });
                }
                let v = ty.read_le(&bytes[*pos..*pos + n]);
                *pos += n;
                Ok(v)
            }
        }
    }

    fn error(&self, message: &str) -> MeshError {
        match self {
            BodyReader::Ascii(body) => MeshError::ParseLine {
                line: body.line,
                message: message.into(),
            },
            BodyReader::Binary { pos, .. } => MeshError::ParseByte {
                offset: *pos,
                message: message.into(),
            },
        }
    }
}

/// Writes `v` and `f` records only.
pub fn write_obj<W: Write>(mesh: &TriangleMesh, mut out: W) -> io::Result<()> {
    for v in mesh.vertices() {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    out.flush()
}

pub fn save_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    let path = path.as_ref();
    let io_err = |source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    write_obj(mesh, io::BufWriter::new(file)).map_err(io_err)
}
