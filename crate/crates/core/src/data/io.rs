//! Point cloud file I/O: whitespace-separated xyz and ascii PLY.
//!
//! Coordinates are written with Rust's shortest-round-trip float formatting,
//! so write-then-read reproduces values exactly.

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    PlyAscii,
}

impl CloudFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "xyz" => Ok(CloudFormat::Xyz),
            "ply" | "ply-ascii" => Ok(CloudFormat::PlyAscii),
            other => Err(Error::InvalidArgument(format!(
                "unknown cloud format '{other}' (expected xyz or ply)"
            ))),
        }
    }

    /// Guesses the format from a file extension, defaulting to xyz.
    pub fn from_path(path: &Path) -> CloudFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ply") => CloudFormat::PlyAscii,
            _ => CloudFormat::Xyz,
        }
    }
}

pub fn write_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        CloudFormat::Xyz => write_xyz(cloud, &mut w),
        CloudFormat::PlyAscii => write_ply(cloud, &mut w),
    }
}

pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    match format {
        CloudFormat::Xyz => read_xyz(reader, path),
        CloudFormat::PlyAscii => read_ply(reader, path),
    }
}

fn write_xyz<W: Write>(cloud: &PointCloud, w: &mut W) -> Result<()> {
    match cloud.labels() {
        Some(labels) => {
            for (p, &o) in cloud.points().iter().zip(labels) {
                writeln!(w, "{} {} {} {}", p.x, p.y, p.z, o as u8)?;
            }
        }
        None => {
            for p in cloud.points() {
                writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_xyz<R: BufRead>(reader: R, path: &Path) -> Result<PointCloud> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut points = Vec::new();
    let mut labels: Vec<bool> = Vec::new();
    let mut labeled: Option<bool> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(parse_err(
                lineno,
                format!("expected 3 or 4 fields, found {}", fields.len()),
            ));
        }
        let has_label = fields.len() == 4;
        match labeled {
            None => labeled = Some(has_label),
            Some(expected) if expected != has_label => {
                return Err(parse_err(
                    lineno,
                    "mixed labeled and unlabeled lines".to_string(),
                ));
            }
            _ => {}
        }
        let mut coords = [0.0f64; 3];
        for (i, f) in fields[..3].iter().enumerate() {
            coords[i] = f
                .parse()
                .map_err(|_| parse_err(lineno, format!("invalid coordinate '{f}'")))?;
            if !coords[i].is_finite() {
                return Err(parse_err(lineno, format!("non-finite coordinate '{f}'")));
            }
        }
        points.push(Point3::new(coords[0], coords[1], coords[2]));
        if has_label {
            let l: u8 = fields[3]
                .parse()
                .map_err(|_| parse_err(lineno, format!("invalid label '{}'", fields[3])))?;
            if l > 1 {
                return Err(parse_err(lineno, format!("label must be 0 or 1, got {l}")));
            }
            labels.push(l == 1);
        }
    }
    if labeled == Some(true) {
        PointCloud::with_labels(points, labels)
    } else {
        Ok(PointCloud::from_points(points))
    }
}

fn write_ply<W: Write>(cloud: &PointCloud, w: &mut W) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    if cloud.labels().is_some() {
        writeln!(w, "property uchar outlier")?;
    }
    writeln!(w, "end_header")?;
    match cloud.labels() {
        Some(labels) => {
            for (p, &o) in cloud.points().iter().zip(labels) {
                writeln!(w, "{} {} {} {}", p.x, p.y, p.z, o as u8)?;
            }
        }
        None => {
            for p in cloud.points() {
                writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_ply<R: BufRead>(reader: R, path: &Path) -> Result<PointCloud> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = reader.lines().enumerate();

    let mut next_line = || -> Result<Option<(usize, String)>> {
        match lines.next() {
            Some((idx, line)) => Ok(Some((idx + 1, line?))),
            None => Ok(None),
        }
    };

    let (lineno, first) = next_line()?.ok_or_else(|| parse_err(1, "empty file".into()))?;
    if first.trim() != "ply" {
        return Err(parse_err(lineno, "missing 'ply' magic line".into()));
    }

    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    let mut in_vertex_element = false;
    let header_end;
    loop {
        let (lineno, line) =
            next_line()?.ok_or_else(|| parse_err(0, "unexpected end of header".into()))?;
        let t = line.trim();
        if t == "end_header" {
            header_end = lineno;
            break;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        match fields.as_slice() {
            ["format", "ascii", _] | ["comment", ..] | [] => {}
            ["format", other, ..] => {
                return Err(parse_err(lineno, format!("unsupported ply format '{other}'")));
            }
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse().map_err(|_| {
                    parse_err(lineno, format!("invalid vertex count '{n}'"))
                })?);
                in_vertex_element = true;
            }
            ["element", ..] => {
                in_vertex_element = false;
            }
            ["property", _ty, name] if in_vertex_element => {
                properties.push(name.to_string());
            }
            ["property", ..] => {}
            _ => {
                return Err(parse_err(lineno, format!("unrecognized header line '{t}'")));
            }
        }
    }
    let vertex_count =
        vertex_count.ok_or_else(|| parse_err(header_end, "no 'element vertex' in header".into()))?;
    let find = |name: &str| properties.iter().position(|p| p == name);
    let (xi, yi, zi) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => {
            return Err(parse_err(
                header_end,
                "vertex element must carry x, y, z properties".into(),
            ));
        }
    };
    let oi = find("outlier");

    let mut points = Vec::with_capacity(vertex_count);
    let mut labels = Vec::with_capacity(vertex_count);
    for _ in 0..vertex_count {
        let (lineno, line) = next_line()?
            .ok_or_else(|| parse_err(0, "fewer data lines than declared vertices".into()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < properties.len() {
            return Err(parse_err(
                lineno,
                format!(
                    "expected {} fields, found {}",
                    properties.len(),
                    fields.len()
                ),
            ));
        }
        let coord = |i: usize| -> Result<f64> {
            let v: f64 = fields[i]
                .parse()
                .map_err(|_| parse_err(lineno, format!("invalid value '{}'", fields[i])))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("non-finite value '{}'", fields[i])));
            }
            Ok(v)
        };
        points.push(Point3::new(coord(xi)?, coord(yi)?, coord(zi)?));
        if let Some(oi) = oi {
            let l: u8 = fields[oi]
                .parse()
                .map_err(|_| parse_err(lineno, format!("invalid label '{}'", fields[oi])))?;
            labels.push(l != 0);
        }
    }
    if oi.is_some() {
        PointCloud::with_labels(points, labels)
    } else {
        Ok(PointCloud::from_points(points))
    }
}
