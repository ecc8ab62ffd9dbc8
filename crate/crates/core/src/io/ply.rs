//! PLY codec for point clouds and triangle meshes.
//!
//! Writes `x y z` as `float`, optional `red green blue` as `uchar`, optional
//! `nx ny nz` as `float`, and faces as `list uchar int vertex_indices`. The
//! cloud's frame label travels in a `comment frame <label>` header line.
//! Reads ASCII and binary little-endian files with any scalar property
//! types; unknown properties and elements are skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{storage_normal, Point3, PointCloud, TriangleMesh, UNKNOWN_FRAME};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlyFormat {
    Ascii,
    #[default]
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
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return Err(ply_err(format!("unknown property type `{s}`"))),
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

    fn read_le(self, r: &mut impl Read) -> Result<f64> {
        let mut b = [0u8; 8];
        let n = self.size();
        r.read_exact(&mut b[..n])
            .map_err(|e| ply_err(format!("truncated binary body: {e}")))?;
        Ok(match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b),
        })
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    format: PlyFormat,
    frame: Option<String>,
    elements: Vec<Element>,
}

fn ply_err(msg: impl Into<String>) -> Error {
    Error::format("PLY", msg)
}

fn read_header(r: &mut impl BufRead) -> Result<Header> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<bool> {
        line.clear();
        let n = r
            .read_line(line)
            .map_err(|e| ply_err(format!("unreadable header: {e}")))?;
        Ok(n > 0)
    };
    if !next(&mut line)? || line.trim_end() != "ply" {
        return Err(ply_err("missing `ply` magic line"));
    }
    let mut format = None;
    let mut frame = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !next(&mut line)? {
            return Err(ply_err("header ends before `end_header`"));
        }
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                format = Some(match words.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some("binary_big_endian") => {
                        return Err(ply_err("binary_big_endian is not supported"))
                    }
                    other => return Err(ply_err(format!("unknown format {other:?}"))),
                });
            }
            Some("comment") => {
                if words.next() == Some("frame") {
                    frame = words.next().map(str::to_string);
                }
            }
            Some("obj_info") | None => {}
            Some("element") => {
                let name = words.next().ok_or_else(|| ply_err("unnamed element"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| ply_err(format!("element `{name}` has no count")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| ply_err("property before any element"))?;
                let ty = words.next().ok_or_else(|| ply_err("property without type"))?;
                let prop = if ty == "list" {
                    let count = Scalar::parse(words.next().unwrap_or(""))?;
                    let item = Scalar::parse(words.next().unwrap_or(""))?;
                    let name = words.next().ok_or_else(|| ply_err("unnamed list property"))?;
                    Property::List {
                        name: name.to_string(),
                        count,
                        item,
                    }
                } else {
                    let name = words.next().ok_or_else(|| ply_err("unnamed property"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty: Scalar::parse(ty)?,
                    }
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(ply_err(format!("unexpected header keyword `{other}`"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| ply_err("missing format line"))?,
        frame,
        elements,
    })
}

/// One element instance: scalar values and list values in property order.
type Record = Vec<Vec<f64>>;

struct BodyReader<'a, R: BufRead> {
    r: &'a mut R,
    format: PlyFormat,
    line: String,
}

impl<R: BufRead> BodyReader<'_, R> {
    fn record(&mut self, el: &Element) -> Result<Record> {
        match self.format {
            PlyFormat::BinaryLittleEndian => el
                .props
                .iter()
                .map(|p| match p {
                    Property::Scalar { ty, .. } => Ok(vec![ty.read_le(self.r)?]),
                    Property::List { count, item, .. } => {
                        let n = count.read_le(self.r)?;
                        (0..n as usize).map(|_| item.read_le(self.r)).collect()
                    }
                })
                .collect(),
            PlyFormat::Ascii => {
                self.line.clear();
                let n = self
                    .r
                    .read_line(&mut self.line)
                    .map_err(|e| ply_err(format!("unreadable body: {e}")))?;
                if n == 0 {
                    return Err(ply_err(format!("body ends inside element `{}`", el.name)));
                }
                let mut words = self.line.split_whitespace();
                // `float` values are read at single precision, as stored.
                let mut num = |what: &str, ty: Scalar| -> Result<f64> {
                    let w = words.next();
                    let v = match ty {
                        Scalar::F32 => w.and_then(|w| w.parse::<f32>().ok()).map(f64::from),
                        _ => w.and_then(|w| w.parse::<f64>().ok()),
                    };
                    v.ok_or_else(|| ply_err(format!("bad or missing value for `{what}`")))
                };
                el.props
                    .iter()
                    .map(|p| match p {
                        Property::Scalar { name, ty } => Ok(vec![num(name, *ty)?]),
                        Property::List { name, count, item } => {
                            let n = num(name, *count)?;
                            (0..n as usize).map(|_| num(name, *item)).collect()
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Decoded PLY content. `triangles` is empty for point clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyData {
    pub cloud: PointCloud,
    pub triangles: Vec<[u32; 3]>,
}

impl PlyData {
    pub fn into_mesh(self) -> Result<TriangleMesh> {
        TriangleMesh::new(self.cloud.points().to_vec(), self.triangles)
    }
}

pub fn read_ply(r: &mut impl BufRead) -> Result<PlyData> {
    let header = read_header(r)?;
    let mut body = BodyReader {
        r,
        format: header.format,
        line: String::new(),
    };
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut normals = Vec::new();
    let mut has_colors = false;
    let mut has_normals = false;
    let mut triangles = Vec::new();
    let mut seen_vertex = false;

    for el in &header.elements {
        let find = |n: &str| el.props.iter().position(|p| p.name() == n);
        match el.name.as_str() {
            "vertex" => {
                seen_vertex = true;
                let xyz = [find("x"), find("y"), find("z")];
                let [Some(ix), Some(iy), Some(iz)] = xyz else {
                    return Err(ply_err("vertex element lacks x/y/z"));
                };
                let rgb = [find("red"), find("green"), find("blue")];
                let nrm = [find("nx"), find("ny"), find("nz")];
                has_colors = rgb.iter().all(Option::is_some);
                has_normals = nrm.iter().all(Option::is_some);
                let known: Vec<usize> = xyz
                    .iter()
                    .chain(if has_colors { &rgb[..] } else { &[] })
                    .chain(if has_normals { &nrm[..] } else { &[] })
                    .flatten()
                    .copied()
                    .collect();
                for (i, p) in el.props.iter().enumerate() {
                    if !known.contains(&i) {
                        warn!("PLY: skipping unknown vertex property `{}`", p.name());
                    }
                }
                points.reserve(el.count);
                for _ in 0..el.count {
                    let rec = body.record(el)?;
                    let v = |i: usize| rec[i].first().copied().unwrap_or(f64::NAN);
                    points.push(Point3::new(v(ix), v(iy), v(iz)));
                    if has_colors {
                        let c = |i: Option<usize>| v(i.unwrap()).clamp(0.0, 255.0) as u8;
                        colors.push([c(rgb[0]), c(rgb[1]), c(rgb[2])]);
                    }
                    if has_normals {
                        let c = |i: Option<usize>| v(i.unwrap()) as f32;
                        let n = storage_normal([c(nrm[0]), c(nrm[1]), c(nrm[2])]);
                        if n.norm() == 0.0 || !n.iter().all(|x| x.is_finite()) {
                            return Err(ply_err(format!("vertex {} has a zero or invalid normal", points.len() - 1)));
                        }
                        normals.push(n);
                    }
                }
            }
            "face" => {
                let li = find("vertex_indices")
                    .or_else(|| find("vertex_index"))
                    .ok_or_else(|| ply_err("face element lacks vertex_indices"))?;
                for _ in 0..el.count {
                    let rec = body.record(el)?;
                    let idx = &rec[li];
                    if idx.len() < 3 {
                        return Err(ply_err("face with fewer than 3 vertices"));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0] as u32, idx[k] as u32, idx[k + 1] as u32]);
                    }
                }
            }
            other => {
                warn!("PLY: skipping unknown element `{other}`");
                for _ in 0..el.count {
                    body.record(el)?;
                }
            }
        }
    }
    if !seen_vertex {
        return Err(ply_err("no vertex element"));
    }
    let frame = header.frame.unwrap_or_else(|| UNKNOWN_FRAME.to_string());
    let cloud = PointCloud::with_attributes(
        points,
        has_colors.then_some(colors),
        has_normals.then_some(normals),
        frame,
    )?;
    if let Some(t) = triangles.iter().flatten().find(|&&i| i as usize >= cloud.len()) {
        return Err(ply_err(format!("face index {t} out of range")));
    }
    Ok(PlyData { cloud, triangles })
}

fn write_header(
    w: &mut impl Write,
    format: PlyFormat,
    frame: &str,
    n_vertex: usize,
    colors: bool,
    normals: bool,
    n_face: Option<usize>,
) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    match format {
        PlyFormat::Ascii => writeln!(w, "format ascii 1.0")?,
        PlyFormat::BinaryLittleEndian => writeln!(w, "format binary_little_endian 1.0")?,
    }
    writeln!(w, "comment frame {frame}")?;
    writeln!(w, "element vertex {n_vertex}")?;
    for a in ["x", "y", "z"] {
        writeln!(w, "property float {a}")?;
    }
    if colors {
        for a in ["red", "green", "blue"] {
            writeln!(w, "property uchar {a}")?;
        }
    }
    if normals {
        for a in ["nx", "ny", "nz"] {
            writeln!(w, "property float {a}")?;
        }
    }
    if let Some(n) = n_face {
        writeln!(w, "element face {n}")?;
        writeln!(w, "property list uchar int vertex_indices")?;
    }
    writeln!(w, "end_header")
}

fn write_body(
    w: &mut impl Write,
    format: PlyFormat,
    points: &[Point3],
    colors: Option<&[[u8; 3]]>,
    normals: Option<&[crate::geometry::Vec3]>,
    triangles: &[[u32; 3]],
) -> std::io::Result<()> {
    for (i, p) in points.iter().enumerate() {
        let xyz = [p.x as f32, p.y as f32, p.z as f32];
        let rgb = colors.map(|c| c[i]);
        let nrm = normals.map(|n| [n[i].x as f32, n[i].y as f32, n[i].z as f32]);
        match format {
            PlyFormat::Ascii => {
                write!(w, "{} {} {}", xyz[0], xyz[1], xyz[2])?;
                if let Some(c) = rgb {
                    write!(w, " {} {} {}", c[0], c[1], c[2])?;
                }
                if let Some(n) = nrm {
                    write!(w, " {} {} {}", n[0], n[1], n[2])?;
                }
                writeln!(w)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in xyz {
                    w.write_all(&v.to_le_bytes())?;
                }
                if let Some(c) = rgb {
                    w.write_all(&c)?;
                }
                if let Some(n) = nrm {
                    for v in n {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
    }
    for t in triangles {
        match format {
            PlyFormat::Ascii => writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?,
            PlyFormat::BinaryLittleEndian => {
                w.write_all(&[3u8])?;
                for &i in t {
                    w.write_all(&(i as i32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_cloud(w: &mut impl Write, cloud: &PointCloud, format: PlyFormat) -> std::io::Result<()> {
    write_header(
        w,
        format,
        cloud.frame(),
        cloud.len(),
        cloud.colors().is_some(),
        cloud.normals().is_some(),
        None,
    )?;
    write_body(w, format, cloud.points(), cloud.colors(), cloud.normals(), &[])
}

pub fn write_mesh(
    w: &mut impl Write,
    mesh: &TriangleMesh,
    frame: &str,
    format: PlyFormat,
) -> std::io::Result<()> {
    write_header(
        w,
        format,
        frame,
        mesh.vertices().len(),
        false,
        false,
        Some(mesh.triangles().len()),
    )?;
    write_body(w, format, mesh.vertices(), None, None, mesh.triangles())
}

pub fn save_cloud(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_cloud(&mut w, cloud, format)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn save_mesh(path: &Path, mesh: &TriangleMesh, frame: &str, format: PlyFormat) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_mesh(&mut w, mesh, frame, format)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<PlyData> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(&mut BufReader::new(f))
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    Ok(load(path)?.cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use proptest::prelude::*;

    fn sample() -> PointCloud {
        PointCloud::with_attributes(
            vec![Point3::new(1.5, -2.25, 3.0), Point3::new(0.1, 0.2, 0.3)],
            Some(vec![[255, 0, 7], [1, 2, 3]]),
            Some(vec![Vec3::z(), Vec3::new(0.6, 0.8, 0.0)]),
            "base",
        )
        .unwrap()
    }

    fn round_trip(c: &PointCloud, format: PlyFormat) -> PointCloud {
        let mut buf = Vec::new();
        write_cloud(&mut buf, c, format).unwrap();
        read_ply(&mut buf.as_slice()).unwrap().cloud
    }

    #[test]
    fn both_encodings_round_trip_at_storage_precision() {
        let c = sample();
        for f in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            assert_eq!(round_trip(&c, f), c.to_storage_precision());
        }
    }

    #[test]
    fn mesh_round_trip() {
        let mesh = TriangleMesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        for f in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let mut buf = Vec::new();
            write_mesh(&mut buf, &mesh, "base", f).unwrap();
            let back = read_ply(&mut buf.as_slice()).unwrap().into_mesh().unwrap();
            assert_eq!(back, mesh);
        }
    }

    #[test]
    fn foreign_files_with_extra_properties() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\n\
                    property double z\nproperty float intensity\nelement face 1\n\
                    property list uchar uint vertex_index\nend_header\n\
                    0 0 0 0.5\n1 0 0 0.7\n3 0 1 1\n";
        let data = read_ply(&mut text.as_bytes()).unwrap();
        assert_eq!(data.cloud.len(), 2);
        assert_eq!(data.cloud.frame(), UNKNOWN_FRAME);
        assert_eq!(data.triangles, vec![[0, 1, 1]]);
    }

    #[test]
    fn rejects_malformed_input() {
        for text in [
            "plx\n",
            "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n",
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n",
        ] {
            assert!(matches!(read_ply(&mut text.as_bytes()), Err(Error::Format { .. })), "{text}");
        }
    }

    #[test]
    fn empty_cloud_round_trips() {
        let c = PointCloud::empty("base");
        assert_eq!(round_trip(&c, PlyFormat::Ascii), c);
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_exact_for_f32_values(
            raw in proptest::collection::vec((-1e4f32..1e4, -1e4f32..1e4, -1e4f32..1e4), 1..50)
        ) {
            let pts: Vec<Point3> = raw.iter().map(|&(x, y, z)| Point3::new(x as f64, y as f64, z as f64)).collect();
            let c = PointCloud::new(pts, "base").unwrap();
            prop_assert_eq!(&round_trip(&c, PlyFormat::BinaryLittleEndian), &c);
            prop_assert_eq!(&round_trip(&c, PlyFormat::Ascii), &c);
        }
    }
}
