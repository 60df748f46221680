//! Point-cloud file formats: PLY (ascii and binary little-endian), KITTI
//! velodyne .bin records, and plain xyz text.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    PlyBinaryLe,
    KittiBin,
    XyzText,
}

impl std::str::FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ply_ascii" => Ok(CloudFormat::PlyAscii),
            "ply_binary_le" | "ply_binary" => Ok(CloudFormat::PlyBinaryLe),
            "kitti_bin" | "bin" => Ok(CloudFormat::KittiBin),
            "xyz_text" | "xyz" => Ok(CloudFormat::XyzText),
            other => Err(Error::InvalidParameter(format!("unknown cloud format `{other}`"))),
        }
    }
}

/// Guesses the format from the extension, sniffing PLY headers for the
/// ascii/binary split.
pub fn detect_cloud_format(path: &Path) -> Result<CloudFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "ply" => {
            let bytes = fs::read(path)?;
            let head = String::from_utf8_lossy(&bytes[..bytes.len().min(512)]).to_string();
            if head.contains("format binary_little_endian") {
                Ok(CloudFormat::PlyBinaryLe)
            } else {
                Ok(CloudFormat::PlyAscii)
            }
        }
        "bin" => Ok(CloudFormat::KittiBin),
        "xyz" | "txt" => Ok(CloudFormat::XyzText),
        other => Err(Error::InvalidParameter(format!(
            "cannot infer cloud format from extension `.{other}`; pass it explicitly"
        ))),
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    match format {
        CloudFormat::PlyAscii | CloudFormat::PlyBinaryLe => load_ply(path),
        CloudFormat::KittiBin => load_kitti_bin(path),
        CloudFormat::XyzText => load_xyz(path),
    }
}

pub fn load_cloud_auto(path: &Path) -> Result<PointCloud> {
    load_cloud(path, detect_cloud_format(path)?)
}

pub fn save_cloud(path: &Path, cloud: &PointCloud, format: CloudFormat) -> Result<()> {
    match format {
        CloudFormat::PlyAscii => save_ply_ascii(path, cloud),
        CloudFormat::PlyBinaryLe => save_ply_binary(path, cloud),
        CloudFormat::KittiBin => save_kitti_bin(path, cloud),
        CloudFormat::XyzText => save_xyz(path, cloud),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(s: &str) -> Option<ScalarType> {
        match s {
            "char" | "int8" => Some(ScalarType::I8),
            "uchar" | "uint8" => Some(ScalarType::U8),
            "short" | "int16" => Some(ScalarType::I16),
            "ushort" | "uint16" => Some(ScalarType::U16),
            "int" | "int32" => Some(ScalarType::I32),
            "uint" | "uint32" => Some(ScalarType::U32),
            "float" | "float32" => Some(ScalarType::F32),
            "double" | "float64" => Some(ScalarType::F64),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_le(self, bytes: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => bytes[0] as i8 as f64,
            ScalarType::U8 => bytes[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<(String, ScalarType)>,
    has_list: bool,
}

struct PlyHeader {
    binary: bool,
    elements: Vec<PlyElement>,
    body_offset: usize,
}

fn parse_ply_header(path: &Path, bytes: &[u8]) -> Result<PlyHeader> {
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let read_line = |offset: &mut usize| -> Result<String> {
        let start = *offset;
        while *offset < bytes.len() && bytes[*offset] != b'\n' {
            *offset += 1;
        }
        if *offset >= bytes.len() {
            return Err(Error::parse(path, format!("byte {start}"), "unterminated header line"));
        }
        let mut end = *offset;
        if end > start && bytes[end - 1] == b'\r' {
            end -= 1;
        }
        *offset += 1;
        String::from_utf8(bytes[start..end].to_vec())
            .map_err(|_| Error::parse(path, format!("byte {start}"), "non-utf8 header line"))
    };

    line_no += 1;
    let magic = read_line(&mut offset)?;
    if magic.trim() != "ply" {
        return Err(Error::parse(path, "line 1", "missing `ply` magic"));
    }

    let mut binary = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        line_no += 1;
        let line = read_line(&mut offset)?;
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => match tok.next() {
                Some("ascii") => binary = Some(false),
                Some("binary_little_endian") => binary = Some(true),
                other => {
                    return Err(Error::parse(
                        path,
                        format!("line {line_no}"),
                        format!("unsupported format `{}`", other.unwrap_or("")),
                    ))
                }
            },
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| Error::parse(path, format!("line {line_no}"), "element needs a name"))?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(path, format!("line {line_no}"), "bad element count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            Some("property") => {
                let element = elements.last_mut().ok_or_else(|| {
                    Error::parse(path, format!("line {line_no}"), "property before any element")
                })?;
                let ty = tok
                    .next()
                    .ok_or_else(|| Error::parse(path, format!("line {line_no}"), "property needs a type"))?;
                if ty == "list" {
                    element.has_list = true;
                    continue;
                }
                let scalar = ScalarType::parse(ty).ok_or_else(|| {
                    Error::parse(path, format!("line {line_no}"), format!("unknown property type `{ty}`"))
                })?;
                let name = tok
                    .next()
                    .ok_or_else(|| Error::parse(path, format!("line {line_no}"), "property needs a name"))?;
                element.properties.push((name.to_string(), scalar));
            }
            Some(other) => {
                return Err(Error::parse(
                    path,
                    format!("line {line_no}"),
                    format!("unexpected header keyword `{other}`"),
                ));
            }
        }
    }

    let binary = binary
        .ok_or_else(|| Error::parse(path, "header", "missing `format` line"))?;
    Ok(PlyHeader {
        binary,
        elements,
        body_offset: offset,
    })
}

fn load_ply(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    let header = parse_ply_header(path, &bytes)?;

    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(path, "header", "no vertex element"))?;
    let vertex = &header.elements[vertex_pos];
    if vertex.has_list {
        return Err(Error::parse(path, "header", "list property on vertex element"));
    }
    // Elements before vertex: skippable only when fixed-size.
    for e in &header.elements[..vertex_pos] {
        if e.has_list {
            return Err(Error::parse(
                path,
                "header",
                format!("cannot skip element `{}` with list properties before vertex", e.name),
            ));
        }
    }

    let find = |name: &str| -> Option<(usize, ScalarType)> {
        let mut offset = 0;
        for (pname, ty) in &vertex.properties {
            if pname == name {
                return Some((offset, *ty));
            }
            offset += ty.size();
        }
        None
    };
    let get_xyz = |name: &str| -> Result<(usize, ScalarType)> {
        let (off, ty) = find(name)
            .ok_or_else(|| Error::parse(path, "header", format!("vertex missing property `{name}`")))?;
        if !matches!(ty, ScalarType::F32 | ScalarType::F64) {
            return Err(Error::parse(
                path,
                "header",
                format!("property `{name}` must be float or double"),
            ));
        }
        Ok((off, ty))
    };
    let x = get_xyz("x")?;
    let y = get_xyz("y")?;
    let z = get_xyz("z")?;
    let intensity = find("intensity");

    let mut points = Vec::with_capacity(vertex.count);
    let mut intensities = intensity.map(|_| Vec::with_capacity(vertex.count));

    if header.binary {
        let stride: usize = vertex.properties.iter().map(|(_, t)| t.size()).sum();
        let mut offset = header.body_offset;
        for e in &header.elements[..vertex_pos] {
            let skip: usize = e.properties.iter().map(|(_, t)| t.size()).sum();
            offset += skip * e.count;
        }
        for i in 0..vertex.count {
            let base = offset + i * stride;
            if base + stride > bytes.len() {
                return Err(Error::parse(
                    path,
                    format!("byte {base}"),
                    format!("truncated vertex {i} of {}", vertex.count),
                ));
            }
            let rec = &bytes[base..base + stride];
            let px = x.1.read_le(&rec[x.0..]);
            let py = y.1.read_le(&rec[y.0..]);
            let pz = z.1.read_le(&rec[z.0..]);
            if !(px.is_finite() && py.is_finite() && pz.is_finite()) {
                return Err(Error::parse(
                    path,
                    format!("byte {base}"),
                    format!("non-finite coordinate in vertex {i}"),
                ));
            }
            points.push(Vector3::new(px, py, pz));
            if let (Some(out), Some((ioff, ity))) = (&mut intensities, intensity) {
                out.push(ity.read_le(&rec[ioff..]) as f32);
            }
        }
    } else {
        let body = std::str::from_utf8(&bytes[header.body_offset..])
            .map_err(|_| Error::parse(path, "body", "non-utf8 ascii body"))?;
        // Property column index (ascii rows are whitespace separated).
        let col = |target: &str| vertex.properties.iter().position(|(n, _)| n == target);
        let (cx, cy, cz) = (col("x").unwrap(), col("y").unwrap(), col("z").unwrap());
        let ci = col("intensity");

        let mut lines = body.lines().enumerate();
        let mut skip_rows: usize = header.elements[..vertex_pos].iter().map(|e| e.count).sum();
        let mut seen = 0usize;
        for (line_idx, line) in &mut lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if skip_rows > 0 {
                skip_rows -= 1;
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < vertex.properties.len() {
                return Err(Error::parse(
                    path,
                    format!("body line {}", line_idx + 1),
                    format!("expected {} fields, got {}", vertex.properties.len(), fields.len()),
                ));
            }
            let parse = |c: usize| -> Result<f64> {
                fields[c].parse::<f64>().map_err(|_| {
                    Error::parse(
                        path,
                        format!("body line {}", line_idx + 1),
                        format!("bad number `{}`", fields[c]),
                    )
                })
            };
            let (px, py, pz) = (parse(cx)?, parse(cy)?, parse(cz)?);
            if !(px.is_finite() && py.is_finite() && pz.is_finite()) {
                return Err(Error::parse(
                    path,
                    format!("body line {}", line_idx + 1),
                    "non-finite coordinate",
                ));
            }
            points.push(Vector3::new(px, py, pz));
            if let (Some(out), Some(c)) = (&mut intensities, ci) {
                out.push(parse(c)? as f32);
            }
            seen += 1;
            if seen == vertex.count {
                break;
            }
        }
        if seen < vertex.count {
            return Err(Error::parse(
                path,
                "body",
                format!("expected {} vertices, found {seen}", vertex.count),
            ));
        }
    }

    PointCloud::new(points, intensities)
}

fn load_kitti_bin(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::parse(
            path,
            format!("byte {}", bytes.len() / 16 * 16),
            format!("file length {} is not a multiple of 16", bytes.len()),
        ));
    }
    let n = bytes.len() / 16;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for i in 0..n {
        let base = i * 16;
        let f = |k: usize| f32::from_le_bytes(bytes[base + 4 * k..base + 4 * k + 4].try_into().unwrap());
        let (x, y, z, it) = (f(0), f(1), f(2), f(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::parse(
                path,
                format!("byte {base}"),
                format!("non-finite coordinate in record {i}"),
            ));
        }
        points.push(Vector3::new(x as f64, y as f64, z as f64));
        intensity.push(it);
    }
    PointCloud::new(points, Some(intensity))
}

fn load_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                format!("line {}", idx + 1),
                format!("expected 3 fields, got {}", fields.len()),
            ));
        }
        let mut v = [0.0f64; 3];
        for (k, f) in fields.iter().enumerate() {
            v[k] = f.parse().map_err(|_| {
                Error::parse(path, format!("line {}", idx + 1), format!("bad number `{f}`"))
            })?;
            if !v[k].is_finite() {
                return Err(Error::parse(path, format!("line {}", idx + 1), "non-finite coordinate"));
            }
        }
        points.push(Vector3::new(v[0], v[1], v[2]));
    }
    PointCloud::from_points(points)
}

fn ply_header(cloud: &PointCloud, binary: bool) -> String {
    let mut s = String::from("ply\n");
    s.push_str(if binary {
        "format binary_little_endian 1.0\n"
    } else {
        "format ascii 1.0\n"
    });
    s.push_str(&format!("element vertex {}\n", cloud.len()));
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.intensity().is_some() {
        s.push_str("property float intensity\n");
    }
    s.push_str("end_header\n");
    s
}

fn save_ply_ascii(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = ply_header(cloud, false);
    for (i, p) in cloud.points().iter().enumerate() {
        out.push_str(&format!("{} {} {}", p.x as f32, p.y as f32, p.z as f32));
        if let Some(ints) = cloud.intensity() {
            out.push_str(&format!(" {}", ints[i]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn save_ply_binary(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(ply_header(cloud, true).as_bytes())?;
    let mut buf = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.points().iter().enumerate() {
        buf.extend_from_slice(&(p.x as f32).to_le_bytes());
        buf.extend_from_slice(&(p.y as f32).to_le_bytes());
        buf.extend_from_slice(&(p.z as f32).to_le_bytes());
        if let Some(ints) = cloud.intensity() {
            buf.extend_from_slice(&ints[i].to_le_bytes());
        }
    }
    file.write_all(&buf)?;
    Ok(())
}

fn save_kitti_bin(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut buf = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.points().iter().enumerate() {
        buf.extend_from_slice(&(p.x as f32).to_le_bytes());
        buf.extend_from_slice(&(p.y as f32).to_le_bytes());
        buf.extend_from_slice(&(p.z as f32).to_le_bytes());
        let it = cloud.intensity().map_or(0.0, |v| v[i]);
        buf.extend_from_slice(&it.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

fn save_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = String::new();
    for p in cloud.points() {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    fs::write(path, out)?;
    Ok(())
}
