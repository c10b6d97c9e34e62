//! PLY reader/writer for point clouds.
//!
//! Vertices carry `x,y,z` as doubles, an optional `label` as uchar and optional
//! feature channels `f0..fN` as floats. Both `ascii` and `binary_little_endian`
//! bodies are supported. Unknown vertex properties are skipped with one warning.

use super::{CloudError, EpochTag, FeatureMatrix, PointCloud};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad PLY header: {0}")]
    Header(String),
    #[error("bad PLY body: {0}")]
    Body(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

/// Body encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
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

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Where a vertex property is routed.
#[derive(Clone, Copy)]
enum Slot {
    Coord(usize),
    Label,
    Feature(usize),
    Skip,
}

fn parse_header<R: BufRead>(reader: &mut R) -> Result<(PlyFormat, Vec<Element>, EpochTag), PlyError> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(PlyError::Header("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut epoch = EpochTag::Pc1;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(PlyError::Header("unexpected end of header".into()));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, ..] => {
                return Err(PlyError::Header(format!("unsupported format '{other}'")))
            }
            ["comment", "epoch", tag] => {
                epoch = if *tag == "PC2" { EpochTag::Pc2 } else { EpochTag::Pc1 };
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| PlyError::Header(format!("bad element count '{count}'")))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            ["property", "list", count, item, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::Header("property before element".into()))?;
                let count = Scalar::parse(count)
                    .ok_or_else(|| PlyError::Header(format!("unknown type '{count}'")))?;
                let item = Scalar::parse(item)
                    .ok_or_else(|| PlyError::Header(format!("unknown type '{item}'")))?;
                el.props.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::Header("property before element".into()))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| PlyError::Header(format!("unknown type '{ty}'")))?;
                el.props.push(Property::Scalar { name: name.to_string(), ty });
            }
            other => return Err(PlyError::Header(format!("unexpected line {other:?}"))),
        }
    }
    let format = format.ok_or_else(|| PlyError::Header("missing format line".into()))?;
    Ok((format, elements, epoch))
}

fn vertex_slots(el: &Element) -> Result<(Vec<Slot>, usize, bool), PlyError> {
    let mut slots = Vec::new();
    let mut seen = [false; 3];
    let mut n_features = 0;
    let mut has_label = false;
    let mut unknown = Vec::new();
    for p in &el.props {
        let slot = match p {
            Property::Scalar { name, .. } => match name.as_str() {
                "x" => Slot::Coord(0),
                "y" => Slot::Coord(1),
                "z" => Slot::Coord(2),
                "label" => {
                    has_label = true;
                    Slot::Label
                }
                n if n.len() > 1 && n.starts_with('f') && n[1..].chars().all(|c| c.is_ascii_digit()) => {
                    let c: usize = n[1..].parse().unwrap();
                    n_features = n_features.max(c + 1);
                    Slot::Feature(c)
                }
                other => {
                    unknown.push(other.to_string());
                    Slot::Skip
                }
            },
            Property::List { .. } => {
                unknown.push("<list>".into());
                Slot::Skip
            }
        };
        if let Slot::Coord(d) = slot {
            seen[d] = true;
        }
        slots.push(slot);
    }
    if !seen.iter().all(|&s| s) {
        return Err(PlyError::Header("vertex element lacks x, y or z".into()));
    }
    if !unknown.is_empty() {
        log::warn!("ignoring unknown vertex properties: {}", unknown.join(", "));
    }
    Ok((slots, n_features, has_label))
}

/// Reads a cloud from any PLY source.
pub fn read_ply<R: Read>(source: R) -> Result<PointCloud, PlyError> {
    let mut reader = BufReader::new(source);
    let (format, elements, epoch) = parse_header(&mut reader)?;
    let mut cloud = None;
    let mut ascii_lines = String::new();
    if format == PlyFormat::Ascii {
        reader.read_to_string(&mut ascii_lines)?;
    }
    let mut tokens = ascii_lines.split_whitespace();

    for el in &elements {
        let is_vertex = el.name == "vertex";
        let (slots, n_features, has_label) = if is_vertex {
            vertex_slots(el)?
        } else {
            (vec![Slot::Skip; el.props.len()], 0, false)
        };
        let mut points = Vec::with_capacity(if is_vertex { el.count } else { 0 });
        let mut labels = Vec::new();
        let mut features = vec![0.0; if is_vertex { el.count * n_features } else { 0 }];
        for row in 0..el.count {
            let mut p = [0.0; 3];
            for (prop, slot) in el.props.iter().zip(&slots) {
                let value = match (format, prop) {
                    (PlyFormat::Ascii, Property::Scalar { .. }) => {
                        let t = tokens.next().ok_or_else(|| PlyError::Body("truncated".into()))?;
                        t.parse::<f64>()
                            .map_err(|_| PlyError::Body(format!("bad number '{t}'")))?
                    }
                    (PlyFormat::Ascii, Property::List { .. }) => {
                        let t = tokens.next().ok_or_else(|| PlyError::Body("truncated".into()))?;
                        let n: usize =
                            t.parse().map_err(|_| PlyError::Body(format!("bad list count '{t}'")))?;
                        for _ in 0..n {
                            tokens.next().ok_or_else(|| PlyError::Body("truncated".into()))?;
                        }
                        0.0
                    }
                    (PlyFormat::BinaryLittleEndian, Property::Scalar { ty, .. }) => {
                        let mut buf = [0u8; 8];
                        reader.read_exact(&mut buf[..ty.size()])?;
                        ty.decode(&buf)
                    }
                    (PlyFormat::BinaryLittleEndian, Property::List { count, item }) => {
                        let mut buf = [0u8; 8];
                        reader.read_exact(&mut buf[..count.size()])?;
                        let n = count.decode(&buf) as usize;
                        let mut skip = vec![0u8; n * item.size()];
                        reader.read_exact(&mut skip)?;
                        0.0
                    }
                };
                match *slot {
                    Slot::Coord(d) => p[d] = value,
                    Slot::Label => {
                        if !(0.0..=255.0).contains(&value) || value.fract() != 0.0 {
                            return Err(PlyError::Body(format!("bad label {value}")));
                        }
                        labels.push(value as u8)
                    }
                    Slot::Feature(c) => features[row * n_features + c] = value,
                    Slot::Skip => {}
                }
            }
            if is_vertex {
                points.push(p);
            }
        }
        if is_vertex {
            let mut c = PointCloud::new(points, epoch);
            if has_label {
                c.labels = Some(labels);
            }
            if n_features > 0 {
                c.features = Some(FeatureMatrix::new(n_features, features));
            }
            c.validate()?;
            cloud = Some(c);
            // nothing after the vertex element matters
            break;
        }
    }
    cloud.ok_or_else(|| PlyError::Header("no vertex element".into()))
}

/// Writes a cloud; features are stored as 32-bit floats.
pub fn write_ply<W: Write>(cloud: &PointCloud, sink: W, format: PlyFormat) -> Result<(), PlyError> {
    cloud.validate()?;
    let mut w = BufWriter::new(sink);
    let channels = cloud.features.as_ref().map_or(0, |f| f.channels);
    writeln!(w, "ply")?;
    match format {
        PlyFormat::Ascii => writeln!(w, "format ascii 1.0")?,
        PlyFormat::BinaryLittleEndian => writeln!(w, "format binary_little_endian 1.0")?,
    }
    writeln!(w, "comment epoch {}", cloud.epoch)?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property double {axis}")?;
    }
    if cloud.labels.is_some() {
        writeln!(w, "property uchar label")?;
    }
    for c in 0..channels {
        writeln!(w, "property float f{c}")?;
    }
    writeln!(w, "end_header")?;

    for (i, p) in cloud.points.iter().enumerate() {
        let label = cloud.labels.as_ref().map(|l| l[i]);
        let feats = cloud.features.as_ref().map(|f| f.row(i));
        match format {
            PlyFormat::Ascii => {
                write!(w, "{} {} {}", p[0], p[1], p[2])?;
                if let Some(l) = label {
                    write!(w, " {l}")?;
                }
                for v in feats.into_iter().flatten() {
                    write!(w, " {}", *v as f32)?;
                }
                writeln!(w)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for c in p {
                    w.write_all(&c.to_le_bytes())?;
                }
                if let Some(l) = label {
                    w.write_all(&[l])?;
                }
                for v in feats.into_iter().flatten() {
                    w.write_all(&(*v as f32).to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_ply<P: AsRef<Path>>(path: P) -> Result<PointCloud, PlyError> {
    read_ply(File::open(path)?)
}

pub fn save_ply<P: AsRef<Path>>(cloud: &PointCloud, path: P, format: PlyFormat) -> Result<(), PlyError> {
    write_ply(cloud, File::create(path)?, format)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> PointCloud {
        PointCloud::new(vec![[0.5, -1.25, 3.0], [1e-3, 2.0, -7.5]], EpochTag::Pc2)
            .with_labels(vec![3, 6])
            .with_features(FeatureMatrix::new(2, vec![0.5, 1.5, -2.0, 100.0]))
    }

    #[test]
    fn ascii_and_binary_round_trip() {
        for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let mut buf = Vec::new();
            write_ply(&sample(), &mut buf, format).unwrap();
            let back = read_ply(buf.as_slice()).unwrap();
            assert_eq!(back, sample());
        }
    }

    #[test]
    fn unknown_properties_and_faces_skipped() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n\
                    property float z\nproperty uchar red\nproperty int label\nelement face 1\n\
                    property list uchar int vertex_indices\nend_header\n1 2 3 255 1\n4 5 6 0 2\n3 0 1 1\n";
        let c = read_ply(text.as_bytes()).unwrap();
        assert_eq!(c.points, vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(c.labels, Some(vec![1, 2]));
        assert!(c.features.is_none());
    }

    #[test]
    fn binary_with_leading_list_element() {
        let mut buf = b"ply\nformat binary_little_endian 1.0\nelement meta 1\nproperty list uchar uchar ids\n\
                        element vertex 1\nproperty double x\nproperty double y\nproperty double z\nend_header\n"
            .to_vec();
        buf.extend_from_slice(&[2, 9, 9]);
        for v in [1.0f64, 2.0, 3.0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let c = read_ply(buf.as_slice()).unwrap();
        assert_eq!(c.points, vec![[1.0, 2.0, 3.0]]);
    }

    #[test]
    fn malformed_inputs_rejected() {
        assert!(matches!(read_ply("plx\n".as_bytes()), Err(PlyError::Header(_))));
        let no_z = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n";
        assert!(matches!(read_ply(no_z.as_bytes()), Err(PlyError::Header(_))));
        let short = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(matches!(read_ply(short.as_bytes()), Err(PlyError::Body(_))));
        let big = "ply\nformat binary_big_endian 1.0\nend_header\n";
        assert!(matches!(read_ply(big.as_bytes()), Err(PlyError::Header(_))));
    }

    proptest! {
        #[test]
        fn binary_round_trip_preserves_coordinates(
            pts in prop::collection::vec(prop::array::uniform3(-1e6f64..1e6), 1..40),
            label in 0u8..7,
        ) {
            let n = pts.len();
            let cloud = PointCloud::new(pts, EpochTag::Pc1).with_labels(vec![label; n]);
            let mut buf = Vec::new();
            write_ply(&cloud, &mut buf, PlyFormat::BinaryLittleEndian).unwrap();
            prop_assert_eq!(read_ply(buf.as_slice()).unwrap(), cloud.clone());
            let mut txt = Vec::new();
            write_ply(&cloud, &mut txt, PlyFormat::Ascii).unwrap();
            prop_assert_eq!(read_ply(txt.as_slice()).unwrap(), cloud);
        }
    }
}
