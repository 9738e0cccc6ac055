//! Minimal PLY support: positions-only reading of ASCII and
//! binary-little-endian files (other vertex properties are skipped), and
//! positions-only binary writing for cleaned clouds.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{PipelineError, Result};

fn err(path: &Path, line: usize, message: impl Into<String>) -> PipelineError {
    PipelineError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, PartialEq)]
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
    fn parse(name: &str) -> Option<Scalar> {
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

    fn read_f64(self, bytes: &[u8]) -> f64 {
        match self {
            Scalar::I8 => bytes[0] as i8 as f64,
            Scalar::U8 => bytes[0] as f64,
            Scalar::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, Scalar)>,
    has_list: bool,
}

/// Extracts the vertex positions; every other property and element is
/// ignored (binary elements with list properties can only be skipped when
/// they come after the vertex data).
pub fn parse_ply(path: impl AsRef<Path>) -> Result<Vec<Vector3<f64>>> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;

    // header is ASCII lines up to and including "end_header"
    let mut elements: Vec<Element> = Vec::new();
    let mut format = None;
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut header_done = false;
    while offset < data.len() {
        let end = data[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| offset + p)
            .ok_or_else(|| err(path, line_no + 1, "unterminated header"))?;
        let line = std::str::from_utf8(&data[offset..end])
            .map_err(|_| err(path, line_no + 1, "non-UTF8 header"))?
            .trim_end_matches('\r')
            .trim();
        offset = end + 1;
        line_no += 1;

        if line_no == 1 {
            if line != "ply" {
                return Err(err(path, 1, "missing 'ply' magic"));
            }
            continue;
        }
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                format = match words.next() {
                    Some("ascii") => Some(Format::Ascii),
                    Some("binary_little_endian") => Some(Format::BinaryLittleEndian),
                    other => {
                        return Err(err(
                            path,
                            line_no,
                            format!("unsupported format {other:?}"),
                        ))
                    }
                };
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = words
                    .next()
                    .ok_or_else(|| err(path, line_no, "element without name"))?;
                let count: usize = words
                    .next()
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| err(path, line_no, "element without count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| err(path, line_no, "property before any element"))?;
                let kind = words
                    .next()
                    .ok_or_else(|| err(path, line_no, "property without type"))?;
                if kind == "list" {
                    element.has_list = true;
                    continue;
                }
                let scalar = Scalar::parse(kind)
                    .ok_or_else(|| err(path, line_no, format!("unknown type '{kind}'")))?;
                let name = words
                    .next()
                    .ok_or_else(|| err(path, line_no, "property without name"))?;
                element.properties.push((name.to_string(), scalar));
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some(other) => return Err(err(path, line_no, format!("unknown keyword '{other}'"))),
            None => {}
        }
    }
    if !header_done {
        return Err(err(path, line_no, "missing end_header"));
    }
    let format = format.ok_or_else(|| err(path, line_no, "missing format line"))?;

    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| err(path, line_no, "no vertex element"))?;
    let vertex = &elements[vertex_pos];
    if vertex.has_list {
        return Err(err(path, line_no, "list properties on vertices are unsupported"));
    }
    let coord_idx: Vec<Option<usize>> = ["x", "y", "z"]
        .iter()
        .map(|axis| vertex.properties.iter().position(|(n, _)| n == axis))
        .collect();
    let (ix, iy, iz) = match (coord_idx[0], coord_idx[1], coord_idx[2]) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(err(path, line_no, "vertex element lacks x/y/z")),
    };

    let mut points = Vec::with_capacity(vertex.count);
    match format {
        Format::Ascii => {
            let body = std::str::from_utf8(&data[offset..])
                .map_err(|_| err(path, line_no + 1, "non-UTF8 body"))?;
            let mut rows = body.lines().filter(|l| !l.trim().is_empty());
            // skip rows of elements declared before the vertices
            for e in &elements[..vertex_pos] {
                for _ in 0..e.count {
                    rows.next()
                        .ok_or_else(|| err(path, line_no, format!("truncated element '{}'", e.name)))?;
                }
            }
            for row in 0..vertex.count {
                let line = rows
                    .next()
                    .ok_or_else(|| err(path, line_no, format!("expected {} vertices, found {row}", vertex.count)))?;
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() < vertex.properties.len() {
                    return Err(err(path, line_no, format!("vertex row {row} too short")));
                }
                let get = |i: usize| -> Result<f64> {
                    fields[i]
                        .parse()
                        .map_err(|_| err(path, line_no, format!("bad number '{}'", fields[i])))
                };
                points.push(Vector3::new(get(ix)?, get(iy)?, get(iz)?));
            }
        }
        Format::BinaryLittleEndian => {
            let mut cursor = offset;
            for e in &elements[..vertex_pos] {
                if e.has_list {
                    return Err(err(
                        path,
                        line_no,
                        format!("cannot skip binary element '{}' with list properties", e.name),
                    ));
                }
                let stride: usize = e.properties.iter().map(|(_, s)| s.size()).sum();
                cursor += stride * e.count;
            }
            let stride: usize = vertex.properties.iter().map(|(_, s)| s.size()).sum();
            let needed = stride * vertex.count;
            if cursor + needed > data.len() {
                return Err(err(
                    path,
                    line_no,
                    format!(
                        "truncated payload: need {needed} bytes for {} vertices, have {}",
                        vertex.count,
                        data.len().saturating_sub(cursor)
                    ),
                ));
            }
            let offsets: Vec<usize> = vertex
                .properties
                .iter()
                .scan(0usize, |acc, (_, s)| {
                    let here = *acc;
                    *acc += s.size();
                    Some(here)
                })
                .collect();
            for row in 0..vertex.count {
                let base = cursor + row * stride;
                let read = |i: usize| -> f64 {
                    let (_, s) = vertex.properties[i];
                    s.read_f64(&data[base + offsets[i]..])
                };
                points.push(Vector3::new(read(ix), read(iy), read(iz)));
            }
        }
    }
    Ok(points)
}

/// Writes positions as binary-little-endian doubles (lossless round trip).
pub fn write_ply(path: impl AsRef<Path>, points: &[Vector3<f64>]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(128 + points.len() * 24);
    out.extend_from_slice(
        format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
            points.len()
        )
        .as_bytes(),
    );
    for p in points {
        for d in 0..3 {
            out.extend_from_slice(&p[d].to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| PipelineError::io(path, e))
}
