//! PLY reading (ASCII and binary little endian) and writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::LabeledMesh;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ScalarKind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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
}

#[derive(Clone, Debug)]
enum Property {
    Scalar { name: String, kind: ScalarKind },
    List { name: String, count: ScalarKind, item: ScalarKind },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Self::Scalar { name, .. } | Self::List { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn perr(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0usize;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;
    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(perr(offset, "unterminated PLY header"));
        };
        let line_start = offset;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| perr(line_start, "non-UTF-8 header line"))?
            .trim_end_matches('\r')
            .trim();
        offset += nl + 1;
        if first {
            if line != "ply" {
                return Err(perr(0, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                format = Some(match tok.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(perr(line_start, format!("unsupported PLY format {other:?}")));
                    }
                });
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| perr(line_start, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| perr(line_start, "element without valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(line_start, "property before any element"))?;
                let t = tok.next().ok_or_else(|| perr(line_start, "property without type"))?;
                let prop = if t == "list" {
                    let count = tok.next().and_then(ScalarKind::parse);
                    let item = tok.next().and_then(ScalarKind::parse);
                    let name = tok.next();
                    match (count, item, name) {
                        (Some(count), Some(item), Some(name)) => Property::List {
                            name: name.to_string(),
                            count,
                            item,
                        },
                        _ => return Err(perr(line_start, "malformed list property")),
                    }
                } else {
                    let kind = ScalarKind::parse(t)
                        .ok_or_else(|| perr(line_start, format!("unknown property type '{t}'")))?;
                    let name = tok.next().ok_or_else(|| perr(line_start, "property without name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        kind,
                    }
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(perr(line_start, format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| perr(0, "PLY header has no format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
    })
}

/// Value source over the PLY body, ASCII or binary.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: PlyFormat,
}

impl Reader<'_> {
    fn read(&mut self, kind: ScalarKind) -> Result<f64> {
        match self.format {
            PlyFormat::Ascii => self.read_ascii(),
            PlyFormat::BinaryLittleEndian => self.read_binary(kind),
        }
    }

    fn read_ascii(&mut self) -> Result<f64> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(perr(start, "unexpected end of PLY body"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| perr(start, "malformed number"))
    }

    fn read_binary(&mut self, kind: ScalarKind) -> Result<f64> {
        let n = kind.size();
        let start = self.pos;
        let b = self
            .bytes
            .get(start..start + n)
            .ok_or_else(|| perr(start, "unexpected end of PLY body"))?;
        self.pos += n;
        Ok(match kind {
            ScalarKind::I8 => b[0] as i8 as f64,
            ScalarKind::U8 => b[0] as f64,
            ScalarKind::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarKind::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarKind::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            ScalarKind::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
            ScalarKind::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            ScalarKind::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
    }

    fn read_index(&mut self, kind: ScalarKind, what: &str) -> Result<u32> {
        let at = self.pos;
        let v = self.read(kind)?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(perr(at, format!("invalid {what} {v}")));
        }
        Ok(v as u32)
    }
}

pub fn load_ply<T: Scalar>(path: &Path) -> Result<LabeledMesh<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    load_ply_bytes(&bytes)
}

/// Parses a PLY with a face `label` property (and optional vertex `label`).
/// Polygons with more than three corners are fan-triangulated.
pub fn load_ply_bytes<T: Scalar>(bytes: &[u8]) -> Result<LabeledMesh<T>> {
    let header = parse_header(bytes)?;
    let mut r = Reader {
        bytes,
        pos: header.body_offset,
        format: header.format,
    };
    let mut vertices = Vec::new();
    let mut vertex_labels: Vec<u32> = Vec::new();
    let mut faces = Vec::new();
    let mut face_labels = Vec::new();
    let mut saw_face = false;
    let mut vertex_has_label = false;
    for el in &header.elements {
        match el.name.as_str() {
            "vertex" => {
                let find = |n: &str| el.props.iter().position(|p| p.name() == n);
                let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => return Err(perr(header.body_offset, "vertex element lacks x/y/z")),
                };
                let il = find("label");
                vertex_has_label = il.is_some();
                vertices.reserve(el.count);
                for _ in 0..el.count {
                    let mut xyz = [T::zero(); 3];
                    for (pi, prop) in el.props.iter().enumerate() {
                        match prop {
                            Property::Scalar { kind, .. } => {
                                let at = r.pos;
                                let v = r.read(*kind)?;
                                if pi == ix || pi == iy || pi == iz {
                                    xyz[if pi == ix { 0 } else if pi == iy { 1 } else { 2 }] = T::lit(v);
                                } else if Some(pi) == il {
                                    if v < 0.0 || v.fract() != 0.0 {
                                        return Err(perr(at, format!("invalid vertex label {v}")));
                                    }
                                    vertex_labels.push(v as u32);
                                }
                            }
                            Property::List { count, item, .. } => {
                                let n = r.read_index(*count, "list length")?;
                                for _ in 0..n {
                                    r.read(*item)?;
                                }
                            }
                        }
                    }
                    vertices.push(xyz);
                }
            }
            "face" => {
                saw_face = true;
                let idx_prop = el
                    .props
                    .iter()
                    .position(|p| matches!(p, Property::List { name, .. } if name == "vertex_indices" || name == "vertex_index"))
                    .ok_or_else(|| perr(header.body_offset, "face element lacks vertex_indices"))?;
                let label_prop = el.props.iter().position(|p| p.name() == "label");
                if label_prop.is_none() {
                    return Err(Error::Unlabeled("face element has no 'label' property".into()));
                }
                for _ in 0..el.count {
                    let mut poly: Vec<u32> = Vec::new();
                    let mut label = 0u32;
                    for (pi, prop) in el.props.iter().enumerate() {
                        match prop {
                            Property::Scalar { kind, .. } => {
                                if Some(pi) == label_prop {
                                    label = r.read_index(*kind, "face label")?;
                                } else {
                                    r.read(*kind)?;
                                }
                            }
                            Property::List { count, item, .. } => {
                                let at = r.pos;
                                let n = r.read_index(*count, "list length")?;
                                if pi == idx_prop {
                                    if n < 3 {
                                        return Err(perr(at, format!("face with {n} vertices")));
                                    }
                                    for _ in 0..n {
                                        poly.push(r.read_index(*item, "vertex index")?);
                                    }
                                } else {
                                    for _ in 0..n {
                                        r.read(*item)?;
                                    }
                                }
                            }
                        }
                    }
                    for k in 1..poly.len() - 1 {
                        faces.push([poly[0], poly[k], poly[k + 1]]);
                        face_labels.push(label);
                    }
                }
            }
            _ => {
                for _ in 0..el.count {
                    for prop in &el.props {
                        match prop {
                            Property::Scalar { kind, .. } => {
                                r.read(*kind)?;
                            }
                            Property::List { count, item, .. } => {
                                let n = r.read_index(*count, "list length")?;
                                for _ in 0..n {
                                    r.read(*item)?;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if !saw_face {
        return Err(Error::Unlabeled("PLY has no face element".into()));
    }
    let mesh = LabeledMesh {
        vertices,
        faces,
        face_labels,
        vertex_labels: vertex_has_label.then_some(vertex_labels),
    };
    mesh.validate()
        .map_err(|e| perr(header.body_offset, format!("inconsistent mesh: {e}")))?;
    Ok(mesh)
}

/// Serializes with 64-bit vertex coordinates and a 32-bit face `label`.
pub fn write_ply<T: Scalar>(mesh: &LabeledMesh<T>, format: PlyFormat, comments: &[String]) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let has_vl = mesh.vertex_labels.is_some();
    let mut header = format!("ply\nformat {fmt} 1.0\n");
    for c in comments {
        for line in c.lines() {
            header.push_str("comment ");
            header.push_str(line);
            header.push('\n');
        }
    }
    header.push_str(&format!(
        "element vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        mesh.vertices.len()
    ));
    if has_vl {
        header.push_str("property int label\n");
    }
    header.push_str(&format!(
        "element face {}\nproperty list uchar int vertex_indices\nproperty int label\nend_header\n",
        mesh.faces.len()
    ));
    out.extend_from_slice(header.as_bytes());
    match format {
        PlyFormat::Ascii => {
            for (i, v) in mesh.vertices.iter().enumerate() {
                let _ = write!(
                    out,
                    "{:?} {:?} {:?}",
                    v[0].to_f64_lossy(),
                    v[1].to_f64_lossy(),
                    v[2].to_f64_lossy()
                );
                if let Some(vl) = &mesh.vertex_labels {
                    let _ = write!(out, " {}", vl[i]);
                }
                out.push(b'\n');
            }
            for (f, l) in mesh.faces.iter().zip(&mesh.face_labels) {
                let _ = writeln!(out, "3 {} {} {} {}", f[0], f[1], f[2], l);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for (i, v) in mesh.vertices.iter().enumerate() {
                for c in v {
                    out.extend_from_slice(&c.to_f64_lossy().to_le_bytes());
                }
                if let Some(vl) = &mesh.vertex_labels {
                    out.extend_from_slice(&(vl[i] as i32).to_le_bytes());
                }
            }
            for (f, l) in mesh.faces.iter().zip(&mesh.face_labels) {
                out.push(3);
                for &v in f {
                    out.extend_from_slice(&(v as i32).to_le_bytes());
                }
                out.extend_from_slice(&(*l as i32).to_le_bytes());
            }
        }
    }
    out
}

pub fn save_ply<T: Scalar>(path: &Path, mesh: &LabeledMesh<T>, format: PlyFormat, comments: &[String]) -> Result<()> {
    fs::write(path, write_ply(mesh, format, comments)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TRIANGLE: &str = "ply\nformat ascii 1.0\ncomment one face\nelement vertex 3\n\
        property float x\nproperty float y\nproperty float z\n\
        element face 1\nproperty list uchar int vertex_indices\nproperty int label\nend_header\n\
        0 0 0\n1 0 0\n0 1 0\n3 0 1 2 0\n";

    #[test]
    fn single_triangle() {
        let m: LabeledMesh<f64> = load_ply_bytes(TRIANGLE.as_bytes()).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
        assert_eq!(m.face_labels, vec![0]);
        assert_eq!(m.num_parts(), 1);
    }

    #[test]
    fn gap_in_label_alphabet_is_preserved() {
        let src = "ply\nformat ascii 1.0\nelement vertex 4\nproperty double x\nproperty double y\n\
            property double z\nelement face 2\nproperty list uchar int vertex_indices\nproperty int label\n\
            end_header\n0 0 0\n1 0 0\n0 1 0\n1 1 0\n3 0 1 2 2\n3 1 3 2 0\n";
        let m: LabeledMesh<f64> = load_ply_bytes(src.as_bytes()).unwrap();
        assert_eq!(m.face_labels, vec![2, 0]);
        assert_eq!(m.num_parts(), 3);
    }

    #[test]
    fn missing_label_is_unlabeled_error() {
        let src = TRIANGLE.replace("property int label\n", "").replace("3 0 1 2 0", "3 0 1 2");
        let e = load_ply_bytes::<f64>(src.as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Unlabeled(_)), "{e}");
    }

    #[test]
    fn malformed_body_names_offset() {
        let src = TRIANGLE.replace("1 0 0\n", "1 zz 0\n");
        let at = src.find("zz").unwrap();
        match load_ply_bytes::<f64>(src.as_bytes()).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, at),
            e => panic!("unexpected {e}"),
        }
        let truncated = &write_ply(
            &load_ply_bytes::<f64>(TRIANGLE.as_bytes()).unwrap(),
            PlyFormat::BinaryLittleEndian,
            &[],
        );
        let cut = &truncated[..truncated.len() - 3];
        assert!(matches!(load_ply_bytes::<f64>(cut), Err(Error::Parse { .. })));
        assert!(matches!(load_ply_bytes::<f64>(b"plx\n"), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn quads_are_fan_triangulated() {
        let src = "ply\nformat ascii 1.0\nelement vertex 4\nproperty double x\nproperty double y\n\
            property double z\nelement face 1\nproperty list uchar int vertex_indices\nproperty uchar label\n\
            end_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3 5\n";
        let m: LabeledMesh<f64> = load_ply_bytes(src.as_bytes()).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(m.face_labels, vec![5, 5]);
    }

    fn arb_mesh() -> impl Strategy<Value = LabeledMesh<f64>> {
        (3usize..30).prop_flat_map(|nv| {
            (
                prop::collection::vec(prop::array::uniform3(prop::num::f64::NORMAL), nv),
                prop::collection::vec((prop::array::uniform3(0..nv as u32), 0u32..20), 1..40),
                any::<bool>(),
            )
                .prop_map(|(vertices, faces, with_vl)| {
                    let nv = vertices.len();
                    LabeledMesh {
                        vertices,
                        faces: faces.iter().map(|f| f.0).collect(),
                        face_labels: faces.iter().map(|f| f.1).collect(),
                        vertex_labels: with_vl.then(|| (0..nv as u32).map(|i| i % 7).collect()),
                    }
                })
        })
    }

    proptest! {
        #[test]
        fn save_load_round_trip_is_exact(mesh in arb_mesh(), ascii in any::<bool>()) {
            let fmt = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
            let bytes = write_ply(&mesh, fmt, &["run abc".to_string()]);
            let back: LabeledMesh<f64> = load_ply_bytes(&bytes).unwrap();
            prop_assert_eq!(back, mesh);
        }
    }
}
