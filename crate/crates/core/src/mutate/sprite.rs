//! RGBA cutouts inserted into training images, and the built-in pools.

use std::fs;
use std::path::Path;

use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::MutateError;
use crate::color::{hsv_to_rgb, rgb_to_hsv, Hsv};
use crate::numeric::to_hex;

/// Number of sprites in each built-in pool.
pub const POOL_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    tag: String,
    pixels: RgbaImage,
}

/// Serializable identity of a sprite, as recorded in manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpriteInfo {
    pub tag: String,
    pub width: u32,
    pub height: u32,
    pub sha256: String,
}

impl Sprite {
    /// Rejects rasters with no visible pixel.
    pub fn new(tag: impl Into<String>, pixels: RgbaImage) -> Result<Self, MutateError> {
        let tag = tag.into();
        if pixels.width() == 0 || pixels.height() == 0 || !pixels.pixels().any(|p| p.0[3] > 0) {
            return Err(MutateError::EmptySprite(tag));
        }
        Ok(Self { tag, pixels })
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn pixels(&self) -> &RgbaImage {
        &self.pixels
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn info(&self) -> SpriteInfo {
        let mut hasher = Sha256::new();
        hasher.update(self.width().to_le_bytes());
        hasher.update(self.height().to_le_bytes());
        hasher.update(self.pixels.as_raw());
        SpriteInfo {
            tag: self.tag.clone(),
            width: self.width(),
            height: self.height(),
            sha256: to_hex(&hasher.finalize()),
        }
    }
}

/// Replaces the hue of every visible pixel, keeping value and alpha and
/// raising saturation to at least 0.5.
pub fn recolor(sprite: &Sprite, hue: f64) -> Sprite {
    let mut pixels = sprite.pixels.clone();
    for px in pixels.pixels_mut() {
        let [r, g, b, a] = px.0;
        if a == 0 {
            continue;
        }
        let [r2, g2, b2] = recolor_rgb([r, g, b], hue);
        *px = Rgba([r2, g2, b2, a]);
    }
    Sprite {
        tag: sprite.tag.clone(),
        pixels,
    }
}

/// 8-bit hue replacement. The brightest channel keeps its exact value and the
/// darkest is floored, so the saturation floor survives quantization.
fn recolor_rgb(rgb: [u8; 3], hue: f64) -> [u8; 3] {
    let value = rgb[0].max(rgb[1]).max(rgb[2]);
    if value == 0 {
        return rgb;
    }
    let s = rgb_to_hsv(rgb).s.max(0.5);
    let v = f64::from(value);
    let low = (v * (1.0 - s)).floor();
    let chroma = v - low;
    let hp = hue.rem_euclid(360.0) / 60.0;
    let mid = (low + chroma * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs())).round();
    let (hi, md, lo) = (value, mid as u8, low as u8);
    match hp as u32 {
        0 => [hi, md, lo],
        1 => [md, hi, lo],
        2 => [lo, hi, md],
        3 => [lo, md, hi],
        4 => [md, lo, hi],
        _ => [hi, lo, md],
    }
}

/// Loads every `<tag>.png` in `dir`, sorted by tag.
pub fn load_pool(dir: &Path) -> Result<Vec<Sprite>, MutateError> {
    let mut entries: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    entries.sort();
    let mut pool = Vec::with_capacity(entries.len());
    for path in entries {
        let tag = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let img = image::open(&path)
            .map_err(|e| MutateError::InvalidSpec(format!("cannot read sprite {}: {e}", path.display())))?;
        pool.push(Sprite::new(tag, img.to_rgba8())?);
    }
    if pool.is_empty() {
        return Err(MutateError::InvalidSpec(format!(
            "sprite directory {} contains no PNG files",
            dir.display()
        )));
    }
    Ok(pool)
}

/// Writes a pool as `<tag>.png` files.
pub fn save_pool(pool: &[Sprite], dir: &Path) -> Result<(), MutateError> {
    fs::create_dir_all(dir)?;
    for s in pool {
        s.pixels.save(dir.join(format!("{}.png", s.tag)))?;
    }
    Ok(())
}

fn solid(hue: f64, s: f64, v: f64) -> Rgba<u8> {
    let [r, g, b] = hsv_to_rgb(Hsv { h: hue, s, v });
    Rgba([r, g, b, 255])
}

fn fill_ellipse(img: &mut RgbaImage, cx: f64, cy: f64, rx: f64, ry: f64, color: Rgba<u8>) {
    for (x, y, px) in img.enumerate_pixels_mut() {
        let dx = (f64::from(x) + 0.5 - cx) / rx;
        let dy = (f64::from(y) + 0.5 - cy) / ry;
        if dx * dx + dy * dy <= 1.0 {
            *px = color;
        }
    }
}

fn fill_triangle(img: &mut RgbaImage, p: [(f64, f64); 3], color: Rgba<u8>) {
    let edge = |a: (f64, f64), b: (f64, f64), x: f64, y: f64| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (fx, fy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        let e0 = edge(p[0], p[1], fx, fy);
        let e1 = edge(p[1], p[2], fx, fy);
        let e2 = edge(p[2], p[0], fx, fy);
        if (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0) {
            *px = color;
        }
    }
}

fn fill_rect(img: &mut RgbaImage, x0: u32, y0: u32, x1: u32, y1: u32, color: Rgba<u8>) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            img.put_pixel(x, y, color);
        }
    }
}

/// Ten procedurally drawn bird silhouettes with distinct plumage colours.
pub fn builtin_birds() -> Vec<Sprite> {
    (0..POOL_SIZE)
        .map(|i| {
            let fi = i as f64;
            let w = 44 + (i as u32 % 4) * 4;
            let h = 32 + (i as u32 % 3) * 4;
            let (fw, fh) = (f64::from(w), f64::from(h));
            let hue = (fi * 37.0 + 15.0) % 360.0;
            let mut img = RgbaImage::new(w, h);
            // tail
            fill_triangle(
                &mut img,
                [(0.0, fh * 0.35), (fw * 0.3, fh * 0.55), (0.0, fh * 0.8)],
                solid(hue, 0.7, 0.45),
            );
            // body
            fill_ellipse(&mut img, fw * 0.45, fh * 0.6, fw * 0.3, fh * 0.28, solid(hue, 0.8, 0.8));
            // wing
            fill_ellipse(&mut img, fw * 0.42, fh * 0.58, fw * 0.16, fh * 0.12, solid(hue, 0.9, 0.55));
            // head
            fill_ellipse(&mut img, fw * 0.74, fh * 0.32, fh * 0.18, fh * 0.18, solid(hue + 10.0, 0.75, 0.85));
            // beak
            fill_triangle(
                &mut img,
                [(fw * 0.84, fh * 0.26), (fw, fh * 0.33), (fw * 0.84, fh * 0.4)],
                solid(45.0, 0.9, 0.95),
            );
            // eye
            fill_ellipse(&mut img, fw * 0.77, fh * 0.28, 1.5, 1.5, Rgba([10, 10, 10, 255]));
            Sprite::new(format!("bird-{i:02}"), img).expect("bird sprite is visible")
        })
        .collect()
}

/// Ten procedurally drawn trees: a trunk and a layered canopy.
pub fn builtin_trees() -> Vec<Sprite> {
    (0..POOL_SIZE)
        .map(|i| {
            let w = 30 + (i as u32 % 3) * 6;
            let h = 48 + (i as u32 % 4) * 5;
            let (fw, fh) = (f64::from(w), f64::from(h));
            let hue = 85.0 + (i as f64 * 7.0) % 50.0;
            let mut img = RgbaImage::new(w, h);
            let trunk_w = (w / 6).max(3);
            fill_rect(
                &mut img,
                w / 2 - trunk_w / 2,
                (fh * 0.6) as u32,
                w / 2 + trunk_w / 2 + 1,
                h,
                solid(28.0, 0.6, 0.35 + (i as f64) * 0.01),
            );
            if i % 2 == 0 {
                // conifer
                for layer in 0..3 {
                    let top = fh * (0.02 + 0.18 * layer as f64);
                    let base = top + fh * 0.35;
                    fill_triangle(
                        &mut img,
                        [(fw * 0.5, top), (fw * 0.02, base), (fw * 0.98, base)],
                        solid(hue, 0.75, 0.45 + 0.08 * layer as f64),
                    );
                }
            } else {
                // broadleaf
                fill_ellipse(&mut img, fw * 0.5, fh * 0.33, fw * 0.48, fh * 0.3, solid(hue, 0.7, 0.5));
                fill_ellipse(&mut img, fw * 0.35, fh * 0.28, fw * 0.22, fh * 0.16, solid(hue, 0.65, 0.62));
                fill_ellipse(&mut img, fw * 0.64, fh * 0.4, fw * 0.2, fh * 0.14, solid(hue, 0.8, 0.4));
            }
            Sprite::new(format!("tree-{i:02}"), img).expect("tree sprite is visible")
        })
        .collect()
}
