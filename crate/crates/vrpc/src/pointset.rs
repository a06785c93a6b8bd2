//! Point cloud representation, file I/O, normalization, and synthetic data.
//!
//! Coordinates are `f64` throughout the crate so metric comparisons and
//! gradient checks share one precision.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub type Point = [f64; 3];

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist2(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// An ordered list of 3D points, semantically an unordered set.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFinite { index: i });
            }
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            c[0] += p[0];
            c[1] += p[1];
            c[2] += p[2];
        }
        [c[0] / n, c[1] / n, c[2] / n]
    }

    /// Shift to zero centroid and scale so the farthest point sits on the
    /// unit sphere. A degenerate cloud (all points identical) keeps scale 1
    /// so the inverse stays well defined.
    pub fn normalize(&self) -> (PointCloud, NormalizationRecord) {
        let offset = self.centroid();
        let mut max_r = 0.0f64;
        for p in &self.points {
            max_r = max_r.max(norm(sub(*p, offset)));
        }
        let scale = if max_r > 0.0 { max_r } else { 1.0 };
        let points = self
            .points
            .iter()
            .map(|p| {
                let d = sub(*p, offset);
                [d[0] / scale, d[1] / scale, d[2] / scale]
            })
            .collect();
        (PointCloud { points }, NormalizationRecord { offset, scale })
    }

    pub fn denormalize(&self, rec: &NormalizationRecord) -> PointCloud {
        let points = self
            .points
            .iter()
            .map(|p| {
                [
                    p[0] * rec.scale + rec.offset[0],
                    p[1] * rec.scale + rec.offset[1],
                    p[2] * rec.scale + rec.offset[2],
                ]
            })
            .collect();
        PointCloud { points }
    }
}

/// Inverse transform of `normalize`: original centroid and max radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub offset: Point,
    pub scale: f64,
}

impl NormalizationRecord {
    pub fn identity() -> Self {
        NormalizationRecord {
            offset: [0.0; 3],
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    XyzText,
    PlyAscii,
    PlyBinaryLe,
}

impl fmt::Display for FileFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FileFormat::XyzText => "xyz-text",
            FileFormat::PlyAscii => "ply-ascii",
            FileFormat::PlyBinaryLe => "ply-binary-le",
        };
        f.write_str(s)
    }
}

/// Load a cloud, detecting the format from the extension and, for PLY,
/// from the header.
pub fn load_auto(path: &Path) -> Result<PointCloud> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    if ext == "ply" {
        let mut head = [0u8; 256];
        let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
        let n = f.read(&mut head).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8_lossy(&head[..n]);
        if text.contains("binary_little_endian") {
            load(path, FileFormat::PlyBinaryLe)
        } else {
            load(path, FileFormat::PlyAscii)
        }
    } else {
        load(path, FileFormat::XyzText)
    }
}

pub fn load(path: &Path, format: FileFormat) -> Result<PointCloud> {
    match format {
        FileFormat::XyzText => load_xyz(path),
        FileFormat::PlyAscii | FileFormat::PlyBinaryLe => load_ply(path, format),
    }
}

pub fn save(path: &Path, pc: &PointCloud, format: FileFormat) -> Result<()> {
    match format {
        FileFormat::XyzText => save_xyz(path, pc),
        FileFormat::PlyAscii => save_ply_ascii(path, pc),
        FileFormat::PlyBinaryLe => save_ply_binary(path, pc),
    }
}

fn load_xyz(path: &Path) -> Result<PointCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut points = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let loc = format!("line {}", lineno + 1);
        let mut coords = [0.0f64; 3];
        let mut it = trimmed.split_whitespace();
        for c in coords.iter_mut() {
            let tok = it
                .next()
                .ok_or_else(|| Error::parse(path, loc.clone(), "expected 3 coordinates"))?;
            *c = tok.parse().map_err(|_| {
                Error::parse(path, loc.clone(), format!("bad coordinate {tok:?}"))
            })?;
            if !c.is_finite() {
                return Err(Error::parse(path, loc, "non-finite coordinate"));
            }
        }
        points.push(coords);
    }
    PointCloud::new(points)
}

/// Nine significant digits: enough for a stable text round trip.
fn fmt_coord(v: f64) -> String {
    format!("{v:.8e}")
}

fn save_xyz(path: &Path, pc: &PointCloud) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in &pc.points {
        writeln!(w, "{} {} {}", fmt_coord(p[0]), fmt_coord(p[1]), fmt_coord(p[2]))
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyScalar {
    F32,
    F64,
    I8,
    I16,
    I32,
    U8,
    U16,
    U32,
}

impl PlyScalar {
    fn parse(s: &str) -> Option<PlyScalar> {
        Some(match s {
            "float" | "float32" => PlyScalar::F32,
            "double" | "float64" => PlyScalar::F64,
            "char" | "int8" => PlyScalar::I8,
            "short" | "int16" => PlyScalar::I16,
            "int" | "int32" => PlyScalar::I32,
            "uchar" | "uint8" => PlyScalar::U8,
            "ushort" | "uint16" => PlyScalar::U16,
            "uint" | "uint32" => PlyScalar::U32,
            _ => return None,
        })
    }

    fn width(self) -> usize {
        match self {
            PlyScalar::I8 | PlyScalar::U8 => 1,
            PlyScalar::I16 | PlyScalar::U16 => 2,
            PlyScalar::F32 | PlyScalar::I32 | PlyScalar::U32 => 4,
            PlyScalar::F64 => 8,
        }
    }

    fn read_f64(self, bytes: &[u8]) -> f64 {
        match self {
            PlyScalar::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyScalar::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
            PlyScalar::I8 => bytes[0] as i8 as f64,
            PlyScalar::I16 => i16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            PlyScalar::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyScalar::U8 => bytes[0] as f64,
            PlyScalar::U16 => u16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            PlyScalar::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
        }
    }

    fn read_usize(self, bytes: &[u8]) -> usize {
        self.read_f64(bytes) as usize
    }
}

#[derive(Debug, Clone)]
enum PlyProperty {
    Scalar { ty: PlyScalar, name: String },
    List { count_ty: PlyScalar, item_ty: PlyScalar },
}

#[derive(Debug, Clone)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

fn load_ply(path: &Path, format: FileFormat) -> Result<PointCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);

    let mut line = String::new();
    let mut lineno = 0usize;
    let mut read_line = |reader: &mut BufReader<File>, line: &mut String| -> Result<()> {
        line.clear();
        lineno += 1;
        let n = reader.read_line(line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::parse(
                path,
                format!("line {lineno}"),
                "unexpected end of header",
            ));
        }
        Ok(())
    };

    read_line(&mut reader, &mut line)?;
    if line.trim() != "ply" {
        return Err(Error::parse(path, "line 1", "missing 'ply' magic"));
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut declared_format: Option<FileFormat> = None;
    loop {
        read_line(&mut reader, &mut line)?;
        let trimmed = line.trim();
        let mut toks = trimmed.split_whitespace();
        match toks.next() {
            Some("comment") | None => {}
            Some("format") => {
                declared_format = match toks.next() {
                    Some("ascii") => Some(FileFormat::PlyAscii),
                    Some("binary_little_endian") => Some(FileFormat::PlyBinaryLe),
                    other => {
                        return Err(Error::parse(
                            path,
                            "header",
                            format!("unsupported format {other:?}"),
                        ))
                    }
                };
            }
            Some("element") => {
                let name = toks
                    .next()
                    .ok_or_else(|| Error::parse(path, "header", "element missing name"))?;
                let count: usize = toks
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::parse(path, "header", "element missing count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, "header", "property before element"))?;
                let first = toks
                    .next()
                    .ok_or_else(|| Error::parse(path, "header", "property missing type"))?;
                if first == "list" {
                    let count_ty = toks
                        .next()
                        .and_then(PlyScalar::parse)
                        .ok_or_else(|| Error::parse(path, "header", "bad list count type"))?;
                    let item_ty = toks
                        .next()
                        .and_then(PlyScalar::parse)
                        .ok_or_else(|| Error::parse(path, "header", "bad list item type"))?;
                    elem.properties.push(PlyProperty::List { count_ty, item_ty });
                } else {
                    let ty = PlyScalar::parse(first).ok_or_else(|| {
                        Error::parse(path, "header", format!("unknown property type {first:?}"))
                    })?;
                    let name = toks
                        .next()
                        .ok_or_else(|| Error::parse(path, "header", "property missing name"))?;
                    elem.properties.push(PlyProperty::Scalar {
                        ty,
                        name: name.to_string(),
                    });
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::parse(
                    path,
                    "header",
                    format!("unknown header keyword {other:?}"),
                ))
            }
        }
    }

    match declared_format {
        Some(f) if f == format => {}
        Some(_) => {
            return Err(Error::parse(
                path,
                "header",
                "declared format does not match requested format",
            ))
        }
        None => return Err(Error::parse(path, "header", "missing format line")),
    }

    let mut points = Vec::new();
    for elem in &elements {
        let is_vertex = elem.name == "vertex";
        let xyz_cols = if is_vertex {
            let mut cols = [usize::MAX; 3];
            for (i, prop) in elem.properties.iter().enumerate() {
                if let PlyProperty::Scalar { name, .. } = prop {
                    match name.as_str() {
                        "x" => cols[0] = i,
                        "y" => cols[1] = i,
                        "z" => cols[2] = i,
                        _ => {}
                    }
                }
            }
            if cols.contains(&usize::MAX) {
                return Err(Error::parse(path, "header", "vertex element lacks x/y/z"));
            }
            Some(cols)
        } else {
            None
        };

        match format {
            FileFormat::PlyAscii => {
                for row in 0..elem.count {
                    line.clear();
                    let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
                    if n == 0 {
                        return Err(Error::parse(
                            path,
                            format!("element {} row {}", elem.name, row),
                            format!("declared {} rows, file ended early", elem.count),
                        ));
                    }
                    if let Some(cols) = xyz_cols {
                        let toks: Vec<&str> = line.split_whitespace().collect();
                        let mut p = [0.0f64; 3];
                        for (axis, &col) in cols.iter().enumerate() {
                            let tok = toks.get(col).ok_or_else(|| {
                                Error::parse(
                                    path,
                                    format!("vertex row {row}"),
                                    "missing coordinate column",
                                )
                            })?;
                            p[axis] = tok.parse().map_err(|_| {
                                Error::parse(
                                    path,
                                    format!("vertex row {row}"),
                                    format!("bad coordinate {tok:?}"),
                                )
                            })?;
                            if !p[axis].is_finite() {
                                return Err(Error::parse(
                                    path,
                                    format!("vertex row {row}"),
                                    "non-finite coordinate",
                                ));
                            }
                        }
                        points.push(p);
                    }
                }
            }
            FileFormat::PlyBinaryLe => {
                for row in 0..elem.count {
                    let mut p = [0.0f64; 3];
                    for (i, prop) in elem.properties.iter().enumerate() {
                        match prop {
                            PlyProperty::Scalar { ty, .. } => {
                                let mut buf = [0u8; 8];
                                reader
                                    .read_exact(&mut buf[..ty.width()])
                                    .map_err(|e| match e.kind() {
                                        std::io::ErrorKind::UnexpectedEof => Error::parse(
                                            path,
                                            format!("element {} row {}", elem.name, row),
                                            "file ended before declared count",
                                        ),
                                        _ => Error::io(path, e),
                                    })?;
                                if let Some(cols) = xyz_cols {
                                    if let Some(axis) = cols.iter().position(|&c| c == i) {
                                        p[axis] = ty.read_f64(&buf);
                                        if !p[axis].is_finite() {
                                            return Err(Error::parse(
                                                path,
                                                format!("vertex row {row}"),
                                                "non-finite coordinate",
                                            ));
                                        }
                                    }
                                }
                            }
                            PlyProperty::List { count_ty, item_ty } => {
                                let mut buf = [0u8; 8];
                                reader
                                    .read_exact(&mut buf[..count_ty.width()])
                                    .map_err(|e| Error::io(path, e))?;
                                let count = count_ty.read_usize(&buf);
                                let mut skip = vec![0u8; count * item_ty.width()];
                                reader.read_exact(&mut skip).map_err(|e| Error::io(path, e))?;
                            }
                        }
                    }
                    if xyz_cols.is_some() {
                        points.push(p);
                    }
                }
            }
            FileFormat::XyzText => unreachable!(),
        }
    }

    if points.is_empty() {
        return Err(Error::parse(path, "header", "no vertex element found"));
    }
    PointCloud::new(points)
}

fn ply_header(n: usize, format: &str) -> String {
    format!(
        "ply\nformat {format} 1.0\nelement vertex {n}\nproperty double x\nproperty double y\nproperty double z\nend_header\n"
    )
}

fn save_ply_ascii(path: &Path, pc: &PointCloud) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(ply_header(pc.len(), "ascii").as_bytes())
        .map_err(|e| Error::io(path, e))?;
    for p in &pc.points {
        writeln!(w, "{} {} {}", fmt_coord(p[0]), fmt_coord(p[1]), fmt_coord(p[2]))
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn save_ply_binary(path: &Path, pc: &PointCloud) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(ply_header(pc.len(), "binary_little_endian").as_bytes())
        .map_err(|e| Error::io(path, e))?;
    for p in &pc.points {
        for c in p {
            w.write_all(&c.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

/// A parametric surface that synthetic clouds are drawn from. Implementations
/// map a uniform (u, v) in the unit square onto the surface; constructions are
/// chosen so clouds come out centered with max radius ≤ 1.
pub trait SurfaceShape: Sync {
    fn name(&self) -> &'static str;
    fn sample(&self, u: f64, v: f64) -> Point;
}

struct Sphere;

impl SurfaceShape for Sphere {
    fn name(&self) -> &'static str {
        "sphere"
    }

    // Area-uniform: z uniform in [-1, 1], azimuth uniform.
    fn sample(&self, u: f64, v: f64) -> Point {
        let z = 2.0 * u - 1.0;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let phi = 2.0 * std::f64::consts::PI * v;
        [r * phi.cos(), r * phi.sin(), z]
    }
}

struct CubeSurface;

impl SurfaceShape for CubeSurface {
    fn name(&self) -> &'static str {
        "cube-surface"
    }

    // Six equal-area faces of a cube whose corners touch the unit sphere.
    fn sample(&self, u: f64, v: f64) -> Point {
        let s = 1.0 / 3.0f64.sqrt();
        let face = ((u * 6.0).floor() as usize).min(5);
        let fu = (u * 6.0 - face as f64) * 2.0 - 1.0;
        let fv = v * 2.0 - 1.0;
        let (a, b) = (fu * s, fv * s);
        match face {
            0 => [s, a, b],
            1 => [-s, a, b],
            2 => [a, s, b],
            3 => [a, -s, b],
            4 => [a, b, s],
            _ => [a, b, -s],
        }
    }
}

/// Torus with major radius 0.7 and minor radius 0.3, so the outer equator
/// touches the unit sphere.
pub const TORUS_MAJOR: f64 = 0.7;
pub const TORUS_MINOR: f64 = 0.3;

struct Torus;

impl SurfaceShape for Torus {
    fn name(&self) -> &'static str {
        "torus"
    }

    fn sample(&self, u: f64, v: f64) -> Point {
        let theta = 2.0 * std::f64::consts::PI * u;
        let phi = 2.0 * std::f64::consts::PI * v;
        let ring = TORUS_MAJOR + TORUS_MINOR * phi.cos();
        [ring * theta.cos(), ring * theta.sin(), TORUS_MINOR * phi.sin()]
    }
}

struct Plane;

impl SurfaceShape for Plane {
    fn name(&self) -> &'static str {
        "plane"
    }

    // Square patch of z = 0 inscribed in the unit circle.
    fn sample(&self, u: f64, v: f64) -> Point {
        let h = 1.0 / 2.0f64.sqrt();
        [(2.0 * u - 1.0) * h, (2.0 * v - 1.0) * h, 0.0]
    }
}

static SHAPES: &[&dyn SurfaceShape] = &[&Sphere, &CubeSurface, &Torus, &Plane];

pub fn shape_names() -> Vec<&'static str> {
    SHAPES.iter().map(|s| s.name()).collect()
}

pub fn lookup_shape(name: &str) -> Result<&'static dyn SurfaceShape> {
    SHAPES
        .iter()
        .copied()
        .find(|s| s.name() == name)
        .ok_or_else(|| Error::UnknownName {
            kind: "shape",
            name: name.to_string(),
        })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub shape: String,
    pub points_per_cloud: usize,
    pub seed: u64,
    pub count: usize,
}

impl SynthSpec {
    /// Parse "shape:sphere,n:256,seed:7,count:4".
    pub fn parse(text: &str) -> Result<SynthSpec> {
        let mut shape = None;
        let mut n = None;
        let mut seed = 0u64;
        let mut count = 1usize;
        for part in text.split(',') {
            let (key, value) = part.split_once(':').ok_or_else(|| {
                Error::InvalidArgument(format!("bad synth spec component {part:?}"))
            })?;
            match key.trim() {
                "shape" => shape = Some(value.trim().to_string()),
                "n" => {
                    n = Some(value.trim().parse().map_err(|_| {
                        Error::InvalidArgument(format!("bad point count {value:?}"))
                    })?)
                }
                "seed" => {
                    seed = value.trim().parse().map_err(|_| {
                        Error::InvalidArgument(format!("bad seed {value:?}"))
                    })?
                }
                "count" => {
                    count = value.trim().parse().map_err(|_| {
                        Error::InvalidArgument(format!("bad count {value:?}"))
                    })?
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown synth spec key {other:?}"
                    )))
                }
            }
        }
        Ok(SynthSpec {
            shape: shape
                .ok_or_else(|| Error::InvalidArgument("synth spec missing shape".into()))?,
            points_per_cloud: n
                .ok_or_else(|| Error::InvalidArgument("synth spec missing n".into()))?,
            seed,
            count,
        })
    }
}

/// Deterministic synthetic dataset: `count` clouds of `n` points on the named
/// surface. Clouds are centered and within the unit ball by construction, so
/// they are not re-normalized (which would pull surface points off the exact
/// surface).
pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<PointCloud>> {
    if spec.points_per_cloud < 8 {
        return Err(Error::InvalidArgument(format!(
            "synthetic clouds need at least 8 points, got {}",
            spec.points_per_cloud
        )));
    }
    let shape = lookup_shape(&spec.shape)?;
    let mut clouds = Vec::with_capacity(spec.count);
    for cloud_idx in 0..spec.count {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(
            0x9e37_79b9_7f4a_7c15u64.wrapping_mul(cloud_idx as u64 + 1),
        ));
        let points = (0..spec.points_per_cloud)
            .map(|_| {
                let u: f64 = rng.gen();
                let v: f64 = rng.gen();
                shape.sample(u, v)
            })
            .collect();
        clouds.push(PointCloud { points });
    }
    Ok(clouds)
}
