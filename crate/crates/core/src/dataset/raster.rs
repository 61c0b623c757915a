use std::io::Cursor;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{GrayImage, ImageFormat, Luma};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::NoiseConfig;
use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, Vec2};
use crate::sketch::{Primitive, PrimitiveType};

pub const IMAGE_SIZE: usize = 128;
/// Stroke width of the noiseless renderer, in pixels.
pub const CLEAN_WIDTH: f64 = 1.5;
const MAX_OVERSHOOT_PX: f64 = 3.0;
/// Points are drawn as discs this much wider than strokes.
const POINT_SCALE: f64 = 1.0;

/// 128×128 grayscale image, row-major, background 0 and ink 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub pixels: Vec<f32>,
}

impl Default for RasterImage {
    fn default() -> Self {
        Self {
            pixels: vec![0.0; IMAGE_SIZE * IMAGE_SIZE],
        }
    }
}

impl RasterImage {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * IMAGE_SIZE + x]
    }

    fn ink(&mut self, x: usize, y: usize, v: f32) {
        let p = &mut self.pixels[y * IMAGE_SIZE + x];
        *p = p.max(v);
    }

    /// Pixel coordinates of every pixel above `threshold`.
    pub fn ink_pixels(&self, threshold: f32) -> Vec<(usize, usize)> {
        (0..IMAGE_SIZE * IMAGE_SIZE)
            .filter(|&i| self.pixels[i] > threshold)
            .map(|i| (i % IMAGE_SIZE, i / IMAGE_SIZE))
            .collect()
    }

    /// Row-major flattened `patch`×`patch` tiles, tiles ordered row-major.
    pub fn patches(&self, patch: usize) -> Vec<f32> {
        let per_side = IMAGE_SIZE / patch;
        let mut out = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE);
        for ty in 0..per_side {
            for tx in 0..per_side {
                for y in 0..patch {
                    let row = (ty * patch + y) * IMAGE_SIZE + tx * patch;
                    out.extend_from_slice(&self.pixels[row..row + patch]);
                }
            }
        }
        out
    }

    pub fn to_png(&self) -> Vec<u8> {
        let img = GrayImage::from_fn(IMAGE_SIZE as u32, IMAGE_SIZE as u32, |x, y| {
            Luma([(self.get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
        });
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png).expect("in-memory PNG encoding");
        buf.into_inner()
    }

    pub fn to_png_base64(&self) -> String {
        B64.encode(self.to_png())
    }

    /// Decodes base64 PNG data.
    pub fn from_png_base64(text: &str) -> Result<Self> {
        let bytes = B64
            .decode(text.trim())
            .map_err(|e| Error::InvalidInput(format!("bad base64 image: {e}")))?;
        png_to_image(&bytes)
    }
}

/// Decodes an 8-bit grayscale (or any color) 128×128 PNG.
pub fn png_to_image(bytes: &[u8]) -> Result<RasterImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::InvalidInput(format!("bad PNG: {e}")))?
        .to_luma8();
    if img.width() as usize != IMAGE_SIZE || img.height() as usize != IMAGE_SIZE {
        return Err(Error::InvalidInput(format!(
            "image must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(RasterImage {
        pixels: img.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
    })
}

/// Renders primitives; with `noise`, strokes get random width, jitter and overshoot.
pub fn rasterize<R: Rng + ?Sized>(prims: &[Primitive], noise: Option<&NoiseConfig>, rng: &mut R) -> RasterImage {
    let mut img = RasterImage::default();
    let px = |p: Vec2| p * IMAGE_SIZE as f64;
    for prim in prims {
        let n = match prim.ptype {
            PrimitiveType::Line => 64,
            PrimitiveType::Circle | PrimitiveType::Arc => 128,
            PrimitiveType::Point => 1,
            PrimitiveType::None => continue,
        };
        let Ok(samples) = prim.sample_points(n.max(2)) else {
            continue;
        };
        let mut pts: Vec<Vec2> = samples.into_iter().map(px).collect();
        let dashed = !prim.flag && prim.ptype != PrimitiveType::Point;
        if prim.ptype == PrimitiveType::Circle {
            pts.push(pts[0]);
        }
        let width = match noise {
            None => CLEAN_WIDTH,
            Some(cfg) => {
                let (lo, hi) = cfg.stroke_width;
                if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            }
        };
        if prim.ptype == PrimitiveType::Point {
            let mut p = pts[0];
            if let Some(cfg) = noise {
                p += jitter(cfg.pixel_sigma, rng);
                let off = p - pts[0];
                if off.norm() > 0.5 {
                    p = pts[0] + off.normalize() * 0.5;
                }
            }
            draw_segment(&mut img, p, p, width / 2.0 + POINT_SCALE);
            continue;
        }
        if let Some(cfg) = noise {
            if cfg.pixel_sigma > 0.0 {
                for p in &mut pts {
                    *p += jitter(cfg.pixel_sigma, rng);
                }
            }
            if prim.ptype != PrimitiveType::Circle && rng.random_bool(cfg.overshoot_prob) {
                extend(&mut pts, rng.random_range(0.0..MAX_OVERSHOOT_PX), rng.random_range(0.0..MAX_OVERSHOOT_PX));
            }
        }
        draw_polyline(&mut img, &pts, width / 2.0, dashed);
    }
    img
}

/// Renders free-hand polylines given in unit-square coordinates with the noiseless pen.
pub fn rasterize_strokes(strokes: &[Vec<[f64; 2]>]) -> Result<RasterImage> {
    if strokes.is_empty() || strokes.iter().all(|s| s.is_empty()) {
        return Err(Error::InvalidInput("no strokes".into()));
    }
    let mut img = RasterImage::default();
    for stroke in strokes {
        if stroke.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("stroke coordinates must be finite".into()));
        }
        let pts: Vec<Vec2> = stroke
            .iter()
            .map(|p| Vec2::new(p[0], p[1]) * IMAGE_SIZE as f64)
            .collect();
        match pts.len() {
            0 => {}
            1 => draw_segment(&mut img, pts[0], pts[0], CLEAN_WIDTH / 2.0),
            _ => draw_polyline(&mut img, &pts, CLEAN_WIDTH / 2.0, false),
        }
    }
    Ok(img)
}

fn jitter<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Vec2 {
    if sigma <= 0.0 {
        return Vec2::zeros();
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    Vec2::new(n.sample(rng), n.sample(rng))
}

/// Extends both polyline ends along their end tangents.
fn extend(pts: &mut Vec<Vec2>, head: f64, tail: f64) {
    let n = pts.len();
    let d0 = pts[0] - pts[1.min(n - 1)];
    if d0.norm() > 1e-9 {
        let p = pts[0] + d0.normalize() * head;
        pts.insert(0, p);
    }
    let n = pts.len();
    let d1 = pts[n - 1] - pts[n - 2];
    if d1.norm() > 1e-9 {
        let p = pts[n - 1] + d1.normalize() * tail;
        pts.push(p);
    }
}

fn draw_polyline(img: &mut RasterImage, pts: &[Vec2], half_width: f64, dashed: bool) {
    // Construction geometry: 4 px on, 3 px off.
    let (on, period) = (4.0, 7.0);
    let mut travelled = 0.0;
    for w in pts.windows(2) {
        let len = (w[1] - w[0]).norm();
        if dashed {
            let phase = travelled % period;
            travelled += len;
            if phase >= on {
                continue;
            }
        }
        draw_segment(img, w[0], w[1], half_width);
    }
}

/// Anti-aliased capsule: coverage falls off linearly over the last pixel.
fn draw_segment(img: &mut RasterImage, a: Vec2, b: Vec2, half_width: f64) {
    let reach = half_width + 0.5;
    let clampi = |v: f64| (v.max(0.0) as usize).min(IMAGE_SIZE - 1);
    let (x0, x1) = (a.x.min(b.x) - reach, a.x.max(b.x) + reach);
    let (y0, y1) = (a.y.min(b.y) - reach, a.y.max(b.y) + reach);
    if x1 < 0.0 || y1 < 0.0 || x0 > IMAGE_SIZE as f64 || y0 > IMAGE_SIZE as f64 {
        return;
    }
    for y in clampi(y0.floor())..=clampi(y1.ceil()) {
        for x in clampi(x0.floor())..=clampi(x1.ceil()) {
            let c = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
            let v = (reach - point_segment_distance(c, a, b)).clamp(0.0, 1.0);
            if v > 0.0 {
                img.ink(x, y, v as f32);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::point_line_distance;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn centered_circle_is_an_annulus() {
        // Center bin 31 sits at (31.5/64) * 128 = 63 px; radius 16 steps = 32 px.
        let img = rasterize(&[Primitive::circle(true, 31, 31, 16)], None, &mut rng());
        let ink = img.ink_pixels(0.0);
        assert!(!ink.is_empty());
        for (x, y) in ink {
            let d = ((x as f64 + 0.5 - 63.0).powi(2) + (y as f64 + 0.5 - 63.0).powi(2)).sqrt();
            assert!((d - 32.0).abs() <= CLEAN_WIDTH / 2.0 + 0.5 + 1e-9, "pixel at r={d}");
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let prims = [Primitive::line(true, 3, 4, 50, 40), Primitive::circle(false, 30, 30, 10)];
        let noise = NoiseConfig::default();
        let a = rasterize(&prims, Some(&noise), &mut ChaCha8Rng::seed_from_u64(3));
        let b = rasterize(&prims, Some(&noise), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn diagonal_ink_hugs_the_line() {
        // Line (0,0)-(1,1) in the unit square: bins 0 and 63 dequantize to
        // 0.5/64 and 63.5/64, i.e. pixels 1 and 127 on the diagonal y = x.
        let img = rasterize(&[Primitive::line(true, 0, 0, 63, 63)], None, &mut rng());
        let ink = img.ink_pixels(0.0);
        let (a, b) = (Vec2::new(0.0, 0.0), Vec2::new(128.0, 128.0));
        let near = ink
            .iter()
            .filter(|(x, y)| point_line_distance(Vec2::new(*x as f64 + 0.5, *y as f64 + 0.5), a, b) <= 1.0)
            .count();
        assert!(near as f64 > 0.9 * ink.len() as f64, "{near} of {}", ink.len());
    }

    #[test]
    fn point_ink_stays_local() {
        let noise = NoiseConfig::default();
        for seed in 0..20 {
            let p = Primitive::point(false, 20, 40);
            let img = rasterize(&[p], Some(&noise), &mut ChaCha8Rng::seed_from_u64(seed));
            let c = Vec2::new(20.5, 40.5) * 2.0;
            let radius = noise.stroke_width.1 / 2.0 + POINT_SCALE;
            for (x, y) in img.ink_pixels(0.0) {
                let d = (Vec2::new(x as f64 + 0.5, y as f64 + 0.5) - c).norm();
                assert!(d <= radius + 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn png_round_trip() {
        let img = rasterize(&[Primitive::arc(true, (10, 30), (30, 10), (50, 30))], None, &mut rng());
        let back = RasterImage::from_png_base64(&img.to_png_base64()).unwrap();
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        assert!(png_to_image(b"not a png").is_err());
    }

    #[test]
    fn patches_cover_the_image() {
        let img = rasterize(&[Primitive::line(true, 0, 0, 63, 0)], None, &mut rng());
        let p = img.patches(16);
        assert_eq!(p.len(), IMAGE_SIZE * IMAGE_SIZE);
        assert!((p.iter().sum::<f32>() - img.pixels.iter().sum::<f32>()).abs() < 1e-3);
        assert_eq!(p[16], img.get(0, 1));
    }

    #[test]
    fn strokes() {
        assert!(rasterize_strokes(&[]).is_err());
        let img = rasterize_strokes(&[vec![[0.1, 0.5], [0.9, 0.5]]]).unwrap();
        assert!(img.get(64, 64) > 0.7);
        assert_eq!(img.get(64, 20), 0.0);
    }
}
