//! RGBA images, file I/O and texture-mapped triangle rasterization.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{LensError, Result};
use crate::mesh::TriMesh;
use crate::Vec2;

/// Row-major RGBA8, y pointing down.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ImageBuffer({}x{})", self.width, self.height)
    }
}

impl ImageBuffer {
    /// A fully transparent image.
    pub fn new(width: u32, height: u32) -> Self {
        ImageBuffer {
            width,
            height,
            pixels: vec![0; width as usize * height as usize * 4],
        }
    }

    pub fn from_rgba(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize * 4;
        if pixels.len() != expected {
            return Err(LensError::DimensionMismatch {
                expected,
                found: pixels.len(),
            });
        }
        Ok(ImageBuffer {
            width,
            height,
            pixels,
        })
    }

    pub fn solid(width: u32, height: u32, color: [u8; 4]) -> Self {
        let mut img = ImageBuffer::new(width, height);
        for px in img.pixels.chunks_exact_mut(4) {
            px.copy_from_slice(&color);
        }
        img
    }

    /// Squares of side `cell` pixels alternating between `a` and `b`.
    pub fn checkerboard(width: u32, height: u32, cell: u32, a: [u8; 4], b: [u8; 4]) -> Self {
        let mut img = ImageBuffer::new(width, height);
        let cell = cell.max(1);
        for y in 0..height {
            for x in 0..width {
                let odd = (x / cell + y / cell) % 2 == 1;
                img.put(x, y, if odd { b } else { a });
            }
        }
        img
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 4
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 4] {
        let o = self.offset(x, y);
        [
            self.pixels[o],
            self.pixels[o + 1],
            self.pixels[o + 2],
            self.pixels[o + 3],
        ]
    }

    pub fn put(&mut self, x: u32, y: u32, c: [u8; 4]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 4].copy_from_slice(&c);
    }

    pub fn is_opaque(&self) -> bool {
        self.pixels.chunks_exact(4).all(|p| p[3] == 255)
    }

    /// Bilinear sample with clamp-to-edge, `(x, y)` in pixel-center
    /// coordinates (pixel `i` sits at `i`).
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [u8; 4] {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as u32, y0 as u32);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (a, b, c, d) = (
            self.get(x0, y0),
            self.get(x1, y0),
            self.get(x0, y1),
            self.get(x1, y1),
        );
        let mut out = [0u8; 4];
        for k in 0..4 {
            let top = f64::from(a[k]) * (1.0 - fx) + f64::from(b[k]) * fx;
            let bottom = f64::from(c[k]) * (1.0 - fx) + f64::from(d[k]) * fx;
            out[k] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
        out
    }

    /// Root-mean-square channel difference in units of full scale (all four
    /// channels).
    pub fn rms_difference(&self, other: &ImageBuffer) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(LensError::invalid(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let n = self.pixels.len().max(1) as f64;
        let sum: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| {
                let d = (f64::from(a) - f64::from(b)) / 255.0;
                d * d
            })
            .sum();
        Ok((sum / n).sqrt())
    }

    /// Encodes as PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        image::write_buffer_with_format(
            &mut Cursor::new(&mut out),
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgba8,
            image::ImageFormat::Png,
        )
        .map_err(|e| LensError::Decode {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
        Ok(out)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        decode_png(bytes, Path::new("<memory>"))
    }
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<ImageBuffer> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| {
        LensError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })?;
    let rgba = img.to_rgba8();
    let (w, h) = rgba.dimensions();
    ImageBuffer::from_rgba(w, h, rgba.into_raw())
}

fn is_ppm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

/// Loads a PNG, or a binary PPM when the extension is `.ppm`.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let bytes = fs::read(path).map_err(|e| LensError::io(path, e))?;
    if is_ppm(path) {
        decode_ppm(&bytes, path)
    } else {
        decode_png(&bytes, path)
    }
}

/// Saves as PNG, or binary PPM (alpha dropped) for `.ppm` paths.
pub fn save_image(img: &ImageBuffer, path: &Path) -> Result<()> {
    let bytes = if is_ppm(path) {
        encode_ppm(img)
    } else {
        img.to_png()?
    };
    fs::write(path, bytes).map_err(|e| LensError::io(path, e))
}

pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.reserve(img.pixels.len() / 4 * 3);
    for px in img.pixels.chunks_exact(4) {
        out.extend_from_slice(&px[..3]);
    }
    out
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<ImageBuffer> {
    let fail = |message: &str| LensError::Decode {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut pos = 0;
    let mut header = Vec::with_capacity(4);
    while header.len() < 4 {
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fail("truncated header"));
        }
        header.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| fail("bad header"))?);
    }
    if header[0] != "P6" {
        return Err(fail("only binary P6 files are supported"));
    }
    let num = |s: &str| s.parse::<u32>().map_err(|_| fail("bad header number"));
    let (w, h, max) = (num(header[1])?, num(header[2])?, num(header[3])?);
    if max != 255 {
        return Err(fail("only 8-bit PPM files are supported"));
    }
    if w == 0 || h == 0 {
        return Err(fail("empty image"));
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    let need = w as usize * h as usize * 3;
    let data = bytes
        .get(pos..pos + need)
        .ok_or_else(|| fail("truncated pixel data"))?;
    let mut pixels = Vec::with_capacity(need / 3 * 4);
    for px in data.chunks_exact(3) {
        pixels.extend_from_slice(&[px[0], px[1], px[2], 255]);
    }
    ImageBuffer::from_rgba(w, h, pixels)
}

const BAND_ROWS: u32 = 16;

struct Prepared {
    p: [Vec2; 3],
    area2: f64,
    min: (i64, i64),
    max: (i64, i64),
    top_left: [bool; 3],
}

fn edge_fn(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Edges a pixel center exactly on them belongs to; opposite directions of
/// the same edge always disagree, so shared edges are drawn once.
fn is_top_left(a: Vec2, b: Vec2) -> bool {
    let d = b - a;
    d.y < 0.0 || (d.y == 0.0 && d.x > 0.0)
}

fn prepare(p: [Vec2; 3], dims: (u32, u32)) -> Option<Prepared> {
    let mut p = p;
    let mut area2 = edge_fn(p[0], p[1], p[2]);
    if area2 == 0.0 || !area2.is_finite() {
        return None;
    }
    if area2 < 0.0 {
        p.swap(1, 2);
        area2 = -area2;
    }
    let lo = |f: fn(&Vec2) -> f64| p.iter().map(f).fold(f64::INFINITY, f64::min);
    let hi = |f: fn(&Vec2) -> f64| p.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let min = (
        ((lo(|q| q.x) - 0.5).floor() as i64).max(0),
        ((lo(|q| q.y) - 0.5).floor() as i64).max(0),
    );
    let max = (
        ((hi(|q| q.x) - 0.5).ceil() as i64).min(dims.0 as i64 - 1),
        ((hi(|q| q.y) - 0.5).ceil() as i64).min(dims.1 as i64 - 1),
    );
    let top_left = [
        is_top_left(p[1], p[2]),
        is_top_left(p[2], p[0]),
        is_top_left(p[0], p[1]),
    ];
    Some(Prepared {
        p,
        area2,
        min,
        max,
        top_left,
    })
}

/// Scan-converts triangles, calling `shade(triangle, barycentrics)` for each
/// covered pixel. The first triangle to cover a pixel keeps it. Returns the
/// image and the number of pixels claimed by more than one triangle.
pub fn raster_triangles<F>(
    positions: &[Vec2],
    triangles: &[[usize; 3]],
    dims: (u32, u32),
    shade: F,
) -> (ImageBuffer, usize)
where
    F: Fn(usize, [f64; 3]) -> [u8; 4] + Sync,
{
    let (w, h) = dims;
    let prepared: Vec<(usize, Prepared, [usize; 3])> = triangles
        .iter()
        .enumerate()
        .filter_map(|(t, tri)| {
            let p = [positions[tri[0]], positions[tri[1]], positions[tri[2]]];
            let swapped = edge_fn(p[0], p[1], p[2]) < 0.0;
            prepare(p, dims).map(|pr| {
                let order = if swapped { [0, 2, 1] } else { [0, 1, 2] };
                (t, pr, order)
            })
        })
        .collect();
    let mut img = ImageBuffer::new(w, h);
    let row_bytes = w as usize * 4;
    let band_bytes = row_bytes * BAND_ROWS as usize;
    if band_bytes == 0 {
        return (img, 0);
    }
    let overlaps: usize = img
        .pixels
        .par_chunks_mut(band_bytes)
        .enumerate()
        .map(|(band, chunk)| {
            let y0 = band as i64 * BAND_ROWS as i64;
            let y1 = y0 + (chunk.len() / row_bytes) as i64 - 1;
            let mut covered = vec![false; chunk.len() / 4];
            let mut overlaps = 0;
            for (t, pr, order) in &prepared {
                if pr.max.1 < y0 || pr.min.1 > y1 || pr.max.0 < pr.min.0 {
                    continue;
                }
                for y in pr.min.1.max(y0)..=pr.max.1.min(y1) {
                    for x in pr.min.0..=pr.max.0 {
                        let c = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                        let e = [
                            edge_fn(pr.p[1], pr.p[2], c),
                            edge_fn(pr.p[2], pr.p[0], c),
                            edge_fn(pr.p[0], pr.p[1], c),
                        ];
                        let inside = (0..3).all(|k| e[k] > 0.0 || (e[k] == 0.0 && pr.top_left[k]));
                        if !inside {
                            continue;
                        }
                        let idx = (y - y0) as usize * w as usize + x as usize;
                        if covered[idx] {
                            overlaps += 1;
                            continue;
                        }
                        covered[idx] = true;
                        // barycentrics in the caller's vertex order
                        let mut bary = [0.0; 3];
                        for k in 0..3 {
                            bary[order[k]] = e[k] / pr.area2;
                        }
                        let color = shade(*t, bary);
                        chunk[idx * 4..idx * 4 + 4].copy_from_slice(&color);
                    }
                }
            }
            overlaps
        })
        .sum();
    (img, overlaps)
}

/// Renders `mesh` with its texture coordinates into an image of `dims`.
pub fn rasterize(mesh: &TriMesh, texture: &ImageBuffer, dims: (u32, u32)) -> Result<ImageBuffer> {
    if mesh.triangles.is_empty() || mesh.vertices.is_empty() {
        return Err(LensError::invalid("cannot rasterize an empty mesh"));
    }
    if texture.width() == 0 || texture.height() == 0 {
        return Err(LensError::invalid("texture is empty"));
    }
    let positions: Vec<Vec2> = mesh.vertices.iter().map(|v| v.xy()).collect();
    let (tw, th) = (f64::from(texture.width()), f64::from(texture.height()));
    let (img, overlaps) = raster_triangles(&positions, &mesh.triangles, dims, |t, b| {
        let tri = mesh.triangles[t];
        let uv = mesh.vertices[tri[0]].uv * b[0]
            + mesh.vertices[tri[1]].uv * b[1]
            + mesh.vertices[tri[2]].uv * b[2];
        texture.sample_bilinear(uv.x * tw - 0.5, uv.y * th - 0.5)
    });
    if overlaps > 0 {
        log::warn!("{overlaps} pixels covered by more than one triangle");
    }
    Ok(img)
}
