//! HSV conversion and desaturation on 8-bit RGB.

use image::{Rgb, RgbImage};

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

/// HSV saturation `(max - min) / max`, 0 for black.
pub fn saturation(rgb: [u8; 3]) -> f64 {
    let max = rgb[0].max(rgb[1]).max(rgb[2]);
    let min = rgb[0].min(rgb[1]).min(rgb[2]);
    if max == 0 {
        0.0
    } else {
        f64::from(max - min) / f64::from(max)
    }
}

pub fn rgb_to_hsv(rgb: [u8; 3]) -> Hsv {
    let r = f64::from(rgb[0]) / 255.0;
    let g = f64::from(rgb[1]) / 255.0;
    let b = f64::from(rgb[2]) / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let h = if chroma == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / chroma + 2.0)
    } else {
        60.0 * ((r - g) / chroma + 4.0)
    };
    Hsv {
        h: h.rem_euclid(360.0),
        s: if max == 0.0 { 0.0 } else { chroma / max },
        v: max,
    }
}

pub fn hsv_to_rgb(hsv: Hsv) -> [u8; 3] {
    let h = hsv.h.rem_euclid(360.0);
    let c = hsv.v * hsv.s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = hsv.v - c;
    [to_u8(r1 + m), to_u8(g1 + m), to_u8(b1 + m)]
}

fn to_u8(unit: f64) -> u8 {
    (unit * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Rec. 601 luma in 8-bit units.
pub fn luma(rgb: [u8; 3]) -> f64 {
    0.299 * f64::from(rgb[0]) + 0.587 * f64::from(rgb[1]) + 0.114 * f64::from(rgb[2])
}

/// Moves every pixel `factor` of the way toward its luma grey (0 = unchanged, 1 = grey).
pub fn desaturate_pixel(rgb: [u8; 3], factor: f64) -> [u8; 3] {
    let f = factor.clamp(0.0, 1.0);
    let y = luma(rgb);
    let mix = |c: u8| -> u8 {
        let c = f64::from(c);
        (c + f * (y - c)).round().clamp(0.0, 255.0) as u8
    };
    [mix(rgb[0]), mix(rgb[1]), mix(rgb[2])]
}

pub fn desaturate(img: &RgbImage, factor: f64) -> RgbImage {
    let mut out = img.clone();
    for px in out.pixels_mut() {
        *px = Rgb(desaturate_pixel(px.0, factor));
    }
    out
}
