//! Point cloud ingestion (PLY) and deterministic orthographic multi-view
//! rendering to binary PPM.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, colors: Option<Vec<[u8; 3]>>) -> Result<Self> {
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(Error::Shape {
                    expected: points.len(),
                    actual: c.len(),
                });
            }
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("point coordinates must be finite"));
        }
        Ok(Self { points, colors })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn header(&self, format: &str) -> String {
        let mut h = format!(
            "ply\nformat {format} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
            self.points.len()
        );
        if self.colors.is_some() {
            h.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
        }
        h.push_str("end_header\n");
        h
    }

    /// ASCII PLY text. Coordinates use the shortest round-trip representation.
    pub fn to_ply_ascii(&self) -> String {
        let mut out = self.header("ascii");
        for (i, p) in self.points.iter().enumerate() {
            out.push_str(&format!("{:?} {:?} {:?}", p[0], p[1], p[2]));
            if let Some(c) = &self.colors {
                out.push_str(&format!(" {} {} {}", c[i][0], c[i][1], c[i][2]));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_ply_binary(&self) -> Vec<u8> {
        let mut out = self.header("binary_little_endian").into_bytes();
        for (i, p) in self.points.iter().enumerate() {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if let Some(c) = &self.colors {
                out.extend_from_slice(&c[i]);
            }
        }
        out
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

    fn is_float(self) -> bool {
        matches!(self, Self::F32 | Self::F64)
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

/// Parses the header, returning the elements, format and body offset.
fn parse_header(bytes: &[u8]) -> Result<(Format, Vec<Element>, usize)> {
    let mut pos = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;
    loop {
        let line_start = pos;
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(parse_err(
                line_start,
                "header is not terminated by end_header",
            ));
        };
        pos += nl + 1;
        let line = std::str::from_utf8(&bytes[line_start..line_start + nl])
            .map_err(|_| parse_err(line_start, "header line is not valid UTF-8"))?
            .trim_end_matches('\r');
        let words: Vec<&str> = line.split_whitespace().collect();
        if first {
            if words != ["ply"] {
                return Err(parse_err(line_start, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", kind, _version] => {
                format = Some(match *kind {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => {
                        return Err(parse_err(
                            line_start,
                            format!("unsupported format {other:?}"),
                        ))
                    }
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(line_start, format!("bad element count {count:?}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let (Some(count), Some(item)) = (Scalar::parse(count), Scalar::parse(item)) else {
                    return Err(parse_err(line_start, "unknown list property type"));
                };
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(line_start, "property before any element"))?;
                el.properties.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| {
                    parse_err(line_start, format!("unknown property type {ty:?}"))
                })?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(line_start, "property before any element"))?;
                el.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            ["end_header"] => break,
            _ => {
                return Err(parse_err(
                    line_start,
                    format!("malformed header line {line:?}"),
                ))
            }
        }
    }
    let format = format.ok_or_else(|| parse_err(0, "header has no format line"))?;
    Ok((format, elements, pos))
}

/// Sequential reader of property values from either body encoding.
struct BodyReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: Format,
}

impl BodyReader<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64> {
        match self.format {
            Format::BinaryLe => {
                let n = ty.size();
                if self.pos + n > self.bytes.len() {
                    return Err(parse_err(self.bytes.len(), "truncated body"));
                }
                let v = ty.decode_le(&self.bytes[self.pos..self.pos + n]);
                self.pos += n;
                Ok(v)
            }
            Format::Ascii => {
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                    self.pos += 1;
                }
                let start = self.pos;
                while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
                    self.pos += 1;
                }
                if start == self.pos {
                    return Err(parse_err(start, "truncated body"));
                }
                let token = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
                let v: f64 = token
                    .parse()
                    .map_err(|_| parse_err(start, format!("invalid number {token:?}")))?;
                if !ty.is_float() && v.fract() != 0.0 {
                    return Err(parse_err(
                        start,
                        format!("expected an integer, got {token:?}"),
                    ));
                }
                Ok(v)
            }
        }
    }
}

fn color_channel(v: f64, ty: Scalar) -> u8 {
    let v = if ty.is_float() {
        (v * 255.0).round()
    } else {
        v
    };
    v.clamp(0.0, 255.0) as u8
}

/// Parses a PLY byte buffer. Only the `vertex` element is kept.
pub fn parse_ply_bytes(bytes: &[u8]) -> Result<PointCloud> {
    let (format, elements, body) = parse_header(bytes)?;
    let mut reader = BodyReader {
        bytes,
        pos: body,
        format,
    };
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let slot = |name: &str| {
            el.properties
                .iter()
                .position(|p| matches!(p, Property::Scalar { name: n, .. } if n == name))
        };
        let xyz = [slot("x"), slot("y"), slot("z")];
        let rgb = [slot("red"), slot("green"), slot("blue")];
        if is_vertex && xyz.iter().any(Option::is_none) {
            return Err(parse_err(0, "vertex element lacks x, y or z"));
        }
        let has_color = is_vertex && rgb.iter().all(Option::is_some);
        let mut points = Vec::with_capacity(if is_vertex { el.count } else { 0 });
        let mut colors = Vec::new();
        let mut row = vec![0.0; el.properties.len()];
        for _ in 0..el.count {
            let row_start = reader.pos;
            for (k, prop) in el.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => row[k] = reader.next(*ty)?,
                    Property::List { count, item } => {
                        let n = reader.next(*count)?;
                        if n < 0.0 {
                            return Err(parse_err(row_start, "negative list length"));
                        }
                        for _ in 0..n as usize {
                            reader.next(*item)?;
                        }
                    }
                }
            }
            if is_vertex {
                let p = xyz.map(|s| row[s.expect("checked")]);
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(parse_err(row_start, "non-finite coordinate"));
                }
                points.push(p);
                if has_color {
                    colors.push(rgb.map(|s| {
                        let s = s.expect("checked");
                        let ty = match &el.properties[s] {
                            Property::Scalar { ty, .. } => *ty,
                            Property::List { .. } => unreachable!("colors are scalar"),
                        };
                        color_channel(row[s], ty)
                    }));
                }
            }
        }
        if is_vertex {
            return PointCloud::new(points, has_color.then_some(colors));
        }
    }
    Err(parse_err(body, "no vertex element"))
}

pub fn parse_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply_bytes(&bytes)
}

/// Moves the centroid to the origin and scales so the largest absolute
/// coordinate is 1. A cloud collapsed to a single location maps to the origin.
pub fn normalize(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::invalid("cannot normalize an empty point cloud"));
    }
    let n = cloud.len() as f64;
    let mut c = [0.0; 3];
    for p in &cloud.points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let c = c.map(|v| v / n);
    let centered: Vec<[f64; 3]> = cloud
        .points
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let scale = centered
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let points = if scale > 0.0 {
        centered.iter().map(|p| p.map(|v| v / scale)).collect()
    } else {
        vec![[0.0; 3]; cloud.len()]
    };
    Ok(PointCloud {
        points,
        colors: cloud.colors.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewConfig {
    pub view_count: usize,
    pub width: usize,
    pub height: usize,
    pub splat_radius: usize,
    pub background: u8,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            view_count: 6,
            width: 512,
            height: 512,
            splat_radius: 1,
            background: 255,
        }
    }
}

pub const MAX_VIEWS: usize = 26;
pub const MIN_RESOLUTION: usize = 16;

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_VIEWS).contains(&self.view_count) {
            return Err(Error::invalid(format!(
                "view_count must be in 1..={MAX_VIEWS}, got {}",
                self.view_count
            )));
        }
        if self.width < MIN_RESOLUTION || self.height < MIN_RESOLUTION {
            return Err(Error::invalid(format!(
                "resolution must be at least {MIN_RESOLUTION}x{MIN_RESOLUTION}, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// View directions (camera position relative to the object): the six axes,
/// then the twelve edge diagonals, then the eight cube corners.
pub fn view_directions() -> Vec<[f64; 3]> {
    let mut dirs: Vec<[f64; 3]> = vec![
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ];
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        for sa in [1.0, -1.0] {
            for sb in [1.0, -1.0] {
                let mut d = [0.0; 3];
                d[a] = sa;
                d[b] = sb;
                dirs.push(d);
            }
        }
    }
    for sx in [1.0, -1.0] {
        for sy in [1.0, -1.0] {
            for sz in [1.0, -1.0] {
                dirs.push([sx, sy, sz]);
            }
        }
    }
    dirs.into_iter()
        .map(|d| {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            d.map(|v| v / n)
        })
        .collect()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    a.map(|v| v / n)
}

fn l1(a: [f64; 3]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

/// Orthonormal camera frame `(right, up)` for a view direction.
fn camera_frame(dir: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let forward = dir.map(|v| -v);
    let hint = if dir[0] == 0.0 && dir[1] == 0.0 {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let right = unit(cross(forward, hint));
    let up = cross(right, forward);
    (right, up)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triplets.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, gray: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![gray; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Number of pixels that differ from a uniform gray background.
    pub fn count_non_background(&self, gray: u8) -> usize {
        self.pixels
            .chunks_exact(3)
            .filter(|p| p.iter().any(|&v| v != gray))
            .count()
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

fn gray_for_depth(t: f64) -> [u8; 3] {
    let g = (40.0 + 160.0 * t.clamp(0.0, 1.0)).round() as u8;
    [g, g, g]
}

fn pixel_index(coord: f64, size: usize) -> usize {
    let p = ((coord + 1.0) / 2.0 * size as f64).floor();
    p.clamp(0.0, (size - 1) as f64) as usize
}

fn render_one(cloud: &PointCloud, dir: [f64; 3], config: &ViewConfig) -> RgbImage {
    let (right, up) = camera_frame(dir);
    let (ext_r, ext_u, ext_d) = (l1(right), l1(up), l1(dir));
    let (w, h, r) = (config.width, config.height, config.splat_radius as isize);
    let mut image = RgbImage::filled(w, h, config.background);
    let mut depth = vec![f64::INFINITY; w * h];
    for (idx, p) in cloud.points.iter().enumerate() {
        let u = dot(*p, right) / ext_r;
        let v = dot(*p, up) / ext_u;
        // 0 at the nearest possible depth, 1 at the farthest
        let t = (1.0 - dot(*p, dir) / ext_d) / 2.0;
        let col = pixel_index(u, w) as isize;
        let row = pixel_index(-v, h) as isize;
        let rgb = match &cloud.colors {
            Some(c) => c[idx],
            None => gray_for_depth(t),
        };
        for y in (row - r).max(0)..=(row + r).min(h as isize - 1) {
            for x in (col - r).max(0)..=(col + r).min(w as isize - 1) {
                let (x, y) = (x as usize, y as usize);
                let slot = &mut depth[y * w + x];
                // strict comparison keeps the lower index on ties
                if t < *slot {
                    *slot = t;
                    image.set(x, y, rgb);
                }
            }
        }
    }
    image
}

/// Renders the first `view_count` preset views of a (normalized) cloud.
pub fn render_views(cloud: &PointCloud, config: &ViewConfig) -> Result<Vec<RgbImage>> {
    config.validate()?;
    if cloud.is_empty() {
        return Err(Error::invalid("cannot render an empty point cloud"));
    }
    let dirs = view_directions();
    Ok(dirs[..config.view_count]
        .par_iter()
        .map(|d| render_one(cloud, *d, config))
        .collect())
}

pub fn write_image(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image.to_ppm()).map_err(|e| Error::io(path, e))
}

/// Parses a binary P6 PPM with maxval 255. Header comments are allowed.
pub fn parse_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(pos, "truncated PPM header"));
        }
        fields.push((
            start,
            String::from_utf8_lossy(&bytes[start..pos]).into_owned(),
        ));
    }
    if fields[0].1 != "P6" {
        return Err(parse_err(0, "not a binary PPM (P6)"));
    }
    let num = |k: usize| -> Result<usize> {
        fields[k].1.parse().map_err(|_| {
            parse_err(
                fields[k].0,
                format!("invalid header value {:?}", fields[k].1),
            )
        })
    };
    let (width, height, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return Err(parse_err(fields[3].0, "only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(parse_err(bytes.len(), "truncated PPM raster"));
    }
    Ok(RgbImage {
        width,
        height,
        pixels: bytes[pos..pos + need].to_vec(),
    })
}

pub fn read_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    parse_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn view_file_name(sample_id: &str, view: usize) -> String {
    format!("{sample_id}_view{view}.ppm")
}

/// Parses, normalizes and renders a PLY file, writing one PPM per view into
/// `out_dir`. Returns the written paths in view order.
pub fn render_ply_to_dir(
    ply: impl AsRef<Path>,
    sample_id: &str,
    out_dir: impl AsRef<Path>,
    config: &ViewConfig,
) -> Result<Vec<PathBuf>> {
    let cloud = normalize(&parse_ply(ply)?)?;
    let views = render_views(&cloud, config)?;
    let out_dir = out_dir.as_ref();
    views
        .iter()
        .enumerate()
        .map(|(k, img)| {
            let path = out_dir.join(view_file_name(sample_id, k));
            write_image(img, &path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn cube() -> PointCloud {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push([x, y, z]);
                }
            }
        }
        PointCloud::new(pts, None).unwrap()
    }

    const CUBE_ASCII: &str = "ply\nformat ascii 1.0\ncomment unit cube\nelement vertex 8\n\
property float x\nproperty float y\nproperty float z\nproperty float nx\n\
element face 0\nproperty list uchar int vertex_indices\nend_header\n\
0 0 0 9\n0 0 1 9\n0 1 0 9\n0 1 1 9\n1 0 0 9\n1 0 1 9\n1 1 0 9\n1 1 1 9\n";

    #[test]
    fn ascii_cube_with_unknown_property() {
        let c = parse_ply_bytes(CUBE_ASCII.as_bytes()).unwrap();
        assert_eq!(c, cube());
        assert!(c.colors.is_none());
    }

    #[test]
    fn binary_matches_ascii() {
        let bin = cube().to_ply_binary();
        assert_eq!(parse_ply_bytes(&bin).unwrap(), cube());
        assert_eq!(
            parse_ply_bytes(cube().to_ply_ascii().as_bytes()).unwrap(),
            cube()
        );
    }

    #[test]
    fn colors_round_trip() {
        let c = PointCloud::new(
            vec![[0.0, 0.5, 1.0], [2.0, 3.0, 4.0]],
            Some(vec![[255, 0, 7], [1, 2, 3]]),
        )
        .unwrap();
        assert_eq!(parse_ply_bytes(&c.to_ply_binary()).unwrap(), c);
        assert_eq!(parse_ply_bytes(c.to_ply_ascii().as_bytes()).unwrap(), c);
    }

    #[test]
    fn truncated_bodies() {
        let text = CUBE_ASCII.replace("element vertex 8", "element vertex 10");
        let err = parse_ply_bytes(text.as_bytes()).unwrap_err();
        assert!(
            matches!(err, Error::Parse { offset, .. } if offset as usize == text.len()),
            "{err}"
        );

        let mut bin = cube().to_ply_binary();
        bin.truncate(bin.len() - 3);
        assert!(matches!(parse_ply_bytes(&bin), Err(Error::Parse { .. })));
    }

    #[test]
    fn header_errors() {
        let bad_format = CUBE_ASCII.replace("format ascii", "format binary_big_endian");
        let err = parse_ply_bytes(bad_format.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 4, .. }), "{err}");
        assert!(parse_ply_bytes(b"plx\n").is_err());
        assert!(parse_ply_bytes(b"ply\nformat ascii 1.0\n").is_err());
        let bad_num = CUBE_ASCII.replace("1 1 1 9", "1 x 1 9");
        assert!(matches!(
            parse_ply_bytes(bad_num.as_bytes()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn normalization() {
        let n = normalize(&cube()).unwrap();
        let max = n
            .points
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(max, 1.0);
        let single = PointCloud::new(vec![[3.0, -2.0, 8.0]], None).unwrap();
        assert_eq!(normalize(&single).unwrap().points, vec![[0.0; 3]]);
        assert!(normalize(&PointCloud::new(vec![], None).unwrap()).is_err());
    }

    #[test]
    fn single_point_splat() {
        let c = PointCloud::new(vec![[0.0; 3]], None).unwrap();
        let views = render_views(&c, &ViewConfig::default()).unwrap();
        assert_eq!(views.len(), 6);
        for img in &views {
            assert_eq!(img.count_non_background(255), 9);
            for y in 255..=257 {
                for x in 255..=257 {
                    assert_ne!(img.get(x, y), [255; 3]);
                }
            }
        }
    }

    #[test]
    fn cube_views_are_nonempty_and_deterministic() {
        let n = normalize(&cube()).unwrap();
        let cfg = ViewConfig {
            view_count: 26,
            ..ViewConfig::default()
        };
        let a = render_views(&n, &cfg).unwrap();
        let b = render_views(&n, &cfg).unwrap();
        assert_eq!(a, b);
        for img in &a {
            let lit = img.count_non_background(255);
            assert!(lit > 0 && lit <= 8 * 9);
        }
    }

    #[test]
    fn nearer_point_wins() {
        // both project to the centre of the +X view; the one at x = 1 is nearer
        let c = PointCloud::new(
            vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            Some(vec![[10, 10, 10], [20, 20, 20]]),
        )
        .unwrap();
        let v = render_views(&c, &ViewConfig::default()).unwrap();
        assert_eq!(v[0].get(256, 256), [20; 3]);
        assert_eq!(v[1].get(256, 256), [10; 3]);
        // equal depth: lower index wins
        let c =
            PointCloud::new(vec![[0.0; 3], [0.0; 3]], Some(vec![[1, 1, 1], [2, 2, 2]])).unwrap();
        assert_eq!(
            render_views(&c, &ViewConfig::default()).unwrap()[0].get(256, 256),
            [1; 3]
        );
    }

    #[test]
    fn ppm_bytes_and_round_trip() {
        let white = RgbImage::filled(1, 1, 255);
        assert_eq!(white.to_ppm(), b"P6\n1 1\n255\n\xff\xff\xff");
        let img = RgbImage {
            width: 2,
            height: 2,
            pixels: (0..12).collect(),
        };
        let bytes = img.to_ppm();
        assert_eq!(bytes.len(), "P6\n2 2\n255\n".len() + 12);
        assert_eq!(parse_ppm(&bytes).unwrap(), img);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        write_image(&img, &path).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
    }

    #[test]
    fn config_validation() {
        assert!(ViewConfig::default().validate().is_ok());
        let bad = ViewConfig {
            view_count: 27,
            ..ViewConfig::default()
        };
        assert!(bad.validate().is_err());
        let small = ViewConfig {
            width: 8,
            ..ViewConfig::default()
        };
        assert!(small.validate().is_err());
        assert_eq!(view_directions().len(), MAX_VIEWS);
    }
}
