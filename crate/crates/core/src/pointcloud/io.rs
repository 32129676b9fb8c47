use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Point3, PointCloud, TriangleMesh, Vector3};
use crate::error::{Error, Result};

/// On-disk point cloud encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudFormat {
    /// Whitespace separated `x y z` or `x y z nx ny nz`, `#` comments.
    Xyz,
    /// ASCII PLY with a `vertex` element.
    Ply,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "xyz" | "txt" | "xyzn" => Some(CloudFormat::Xyz),
            "ply" => Some(CloudFormat::Ply),
            _ => None,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" => Ok(CloudFormat::Xyz),
            "ply" => Ok(CloudFormat::Ply),
            other => Err(Error::invalid(format!("unknown cloud format {other:?}"))),
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

fn unit_normal(path: &Path, line: usize, n: Vector3) -> Result<Vector3> {
    let len = n.norm();
    if !(len > 0.0) {
        return Err(parse_err(path, line, "zero-length normal"));
    }
    Ok(n / len)
}

/// Loads a cloud preserving file order. Normals read from a file are
/// renormalised to unit length (text files carry limited precision).
pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (points, normals) = match format {
        CloudFormat::Xyz => parse_xyz(path, &text)?,
        CloudFormat::Ply => {
            let ply = parse_ply(path, &text)?;
            (ply.points, ply.normals)
        }
    };
    if points.len() < 2 {
        return Err(Error::invalid(format!(
            "{}: a cloud needs at least 2 points, found {}",
            path.display(),
            points.len()
        )));
    }
    let mut cloud = PointCloud::new(points)?;
    if let Some(n) = normals {
        cloud.set_normals(n)?;
    }
    Ok(cloud)
}

type PointsAndNormals = (Vec<Point3>, Option<Vec<Vector3>>);

fn parse_xyz(path: &Path, text: &str) -> Result<PointsAndNormals> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut columns: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 3 && toks.len() != 6 {
            return Err(parse_err(path, line, format!("expected 3 or 6 values, found {}", toks.len())));
        }
        match columns {
            None => columns = Some(toks.len()),
            Some(c) if c != toks.len() => {
                return Err(parse_err(
                    path,
                    line,
                    format!("{} values on this line but {c} on earlier lines (points/normals length mismatch)", toks.len()),
                ))
            }
            _ => {}
        }
        let v: Vec<f64> = toks
            .iter()
            .map(|t| parse_f64(path, line, t))
            .collect::<Result<_>>()?;
        points.push(Point3::new(v[0], v[1], v[2]));
        if v.len() == 6 {
            normals.push(unit_normal(path, line, Vector3::new(v[3], v[4], v[5]))?);
        }
    }
    let normals = (columns == Some(6)).then_some(normals);
    Ok((points, normals))
}

struct PlyData {
    points: Vec<Point3>,
    normals: Option<Vec<Vector3>>,
    faces: Vec<[usize; 3]>,
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

enum PlyProperty {
    Scalar(String),
    List,
}

fn parse_ply(path: &Path, text: &str) -> Result<PlyData> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    for (line, l) in lines.by_ref() {
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(parse_err(path, line, format!("unsupported PLY format {other:?} (ASCII only)")))
            }
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(path, line, format!("bad element count {count:?}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", _, _, _] => elements
                .last_mut()
                .ok_or_else(|| parse_err(path, line, "property before element"))?
                .properties
                .push(PlyProperty::List),
            ["property", _, name] => elements
                .last_mut()
                .ok_or_else(|| parse_err(path, line, "property before element"))?
                .properties
                .push(PlyProperty::Scalar(name.to_string())),
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(parse_err(path, line, format!("unrecognised header line {l:?}"))),
        }
    }
    if !header_done {
        return Err(parse_err(path, 1, "missing end_header"));
    }

    let mut data = PlyData {
        points: Vec::new(),
        normals: None,
        faces: Vec::new(),
    };
    let mut body = lines.filter(|(_, l)| !l.is_empty());
    for element in &elements {
        match element.name.as_str() {
            "vertex" => {
                let col = |n: &str| {
                    element
                        .properties
                        .iter()
                        .position(|p| matches!(p, PlyProperty::Scalar(s) if s == n))
                };
                let (x, y, z) = match (col("x"), col("y"), col("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => return Err(parse_err(path, 1, "vertex element lacks x/y/z")),
                };
                let normal_cols = match (col("nx"), col("ny"), col("nz")) {
                    (Some(a), Some(b), Some(c)) => Some((a, b, c)),
                    _ => None,
                };
                let mut normals = Vec::new();
                for _ in 0..element.count {
                    let (line, l) = body
                        .next()
                        .ok_or_else(|| parse_err(path, 0, "file ends inside vertex data"))?;
                    let v: Vec<f64> = l
                        .split_whitespace()
                        .map(|t| parse_f64(path, line, t))
                        .collect::<Result<_>>()?;
                    if v.len() < element.properties.len() {
                        return Err(parse_err(
                            path,
                            line,
                            format!("expected {} vertex values, found {}", element.properties.len(), v.len()),
                        ));
                    }
                    data.points.push(Point3::new(v[x], v[y], v[z]));
                    if let Some((a, b, c)) = normal_cols {
                        normals.push(unit_normal(path, line, Vector3::new(v[a], v[b], v[c]))?);
                    }
                }
                if normal_cols.is_some() {
                    data.normals = Some(normals);
                }
            }
            "face" => {
                for _ in 0..element.count {
                    let (line, l) = body
                        .next()
                        .ok_or_else(|| parse_err(path, 0, "file ends inside face data"))?;
                    let idx: Vec<usize> = l
                        .split_whitespace()
                        .map(|t| {
                            t.parse()
                                .map_err(|_| parse_err(path, line, format!("bad face index {t:?}")))
                        })
                        .collect::<Result<_>>()?;
                    if idx.first() != Some(&3) || idx.len() < 4 {
                        return Err(parse_err(path, line, "only triangular faces are supported"));
                    }
                    data.faces.push([idx[1], idx[2], idx[3]]);
                }
            }
            _ => {
                // Unknown elements are skipped line by line.
                for _ in 0..element.count {
                    body.next();
                }
            }
        }
    }
    Ok(data)
}

fn parse_obj(path: &Path, text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.first() {
            Some(&"v") => {
                if toks.len() < 4 {
                    return Err(parse_err(path, line, "vertex needs 3 coordinates"));
                }
                vertices.push(Point3::new(
                    parse_f64(path, line, toks[1])?,
                    parse_f64(path, line, toks[2])?,
                    parse_f64(path, line, toks[3])?,
                ));
            }
            Some(&"f") => {
                if toks.len() != 4 {
                    return Err(parse_err(path, line, "only triangular faces are supported"));
                }
                let mut face = [0usize; 3];
                for (slot, tok) in face.iter_mut().zip(&toks[1..]) {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| parse_err(path, line, format!("bad face index {tok:?}")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        -1
                    };
                    if resolved < 0 {
                        return Err(parse_err(path, line, format!("face index {i} out of range")));
                    }
                    *slot = resolved as usize;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Loads a triangle mesh from ASCII PLY or OBJ, chosen by extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("obj") => parse_obj(path, &text),
        Some("ply") => {
            let ply = parse_ply(path, &text)?;
            TriangleMesh::new(ply.points, ply.faces)
        }
        _ => Err(Error::invalid(format!(
            "{}: mesh input must be .ply or .obj",
            path.display()
        ))),
    }
}

/// Serialises a cloud. Floats use the shortest round-trip representation.
pub fn format_cloud(cloud: &PointCloud, format: CloudFormat) -> String {
    let mut out = String::new();
    if format == CloudFormat::Ply {
        out.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(out, "element vertex {}", cloud.len());
        out.push_str("property double x\nproperty double y\nproperty double z\n");
        if cloud.normals().is_some() {
            out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
        }
        out.push_str("end_header\n");
    }
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(n) = cloud.normals() {
            let _ = write!(out, " {} {} {}", n[i].x, n[i].y, n[i].z);
        }
        out.push('\n');
    }
    out
}

pub fn save_cloud(path: impl AsRef<Path>, cloud: &PointCloud, format: CloudFormat) -> Result<()> {
    let path = path.as_ref();
    crate::fsio::write_atomic(path, format_cloud(cloud, format).as_bytes())
}
