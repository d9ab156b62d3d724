//! Subset selection, sprite scaling, occlusion-bounded placement and compositing.

use image::imageops::{self, FilterType};
use image::{Rgba, RgbaImage};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sprite::Sprite;
use super::MutateError;
use crate::dataset::BoundingBox;
use crate::numeric::round_half_away;

/// Inserted object area as a fraction of the focal box area.
pub const TARGET_AREA_FRACTION: f64 = 0.25;

/// Placement candidates drawn before giving up on an image.
pub const PLACEMENT_CANDIDATES: usize = 256;

/// Where and how one sprite landed in one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub sprite_tag: String,
    pub inserted_bbox: BoundingBox,
    pub scale_factor: f64,
    pub achieved_iou: f64,
}

/// Picks `round(proportion * n)` items uniformly without replacement,
/// returned in input order.
pub fn select_subset<T: Clone, R: Rng + ?Sized>(ids: &[T], proportion: f64, rng: &mut R) -> Vec<T> {
    let n = ids.len();
    let k = (round_half_away(proportion.clamp(0.0, 1.0) * n as f64) as usize).min(n);
    if k == n {
        return ids.to_vec();
    }
    let mut picked = index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| ids[i].clone()).collect()
}

/// Scaled sprite dimensions: target area is a quarter of the focal area,
/// shrunk further if needed to fit inside the frame.
fn scaled_size(sprite: &Sprite, focal: &BoundingBox, frame_w: u32, frame_h: u32) -> (f64, u32, u32) {
    let (sw, sh) = (f64::from(sprite.width()), f64::from(sprite.height()));
    let target = (TARGET_AREA_FRACTION * focal.area() / (sw * sh)).sqrt();
    let fit = (f64::from(frame_w) / sw).min(f64::from(frame_h) / sh);
    let scale = target.min(fit);
    let w = (round_half_away(sw * scale) as u32).clamp(1, frame_w);
    let h = (round_half_away(sh * scale) as u32).clamp(1, frame_h);
    (scale, w, h)
}

/// Inserts `sprite` into `img` so that its box overlaps `focal` by at most
/// `budget` IoU. Pixels outside the inserted box are left untouched.
pub fn insert_object<R: Rng + ?Sized>(
    img: &RgbaImage,
    focal: &BoundingBox,
    sprite: &Sprite,
    budget: f64,
    rng: &mut R,
) -> Result<(RgbaImage, Placement), MutateError> {
    let (frame_w, frame_h) = img.dimensions();
    if frame_w == 0 || frame_h == 0 {
        return Err(MutateError::EmptyImage);
    }
    if budget.is_nan() || budget < 0.0 {
        return Err(MutateError::InvalidSpec(format!("occlusion budget {budget} must be >= 0")));
    }
    let (scale, w, h) = scaled_size(sprite, focal, frame_w, frame_h);
    let inserted_area = f64::from(w) * f64::from(h);
    if inserted_area >= focal.area() {
        return Err(MutateError::FocalTooSmall {
            focal_area: focal.area(),
            inserted_area,
        });
    }

    let mut best_iou = f64::INFINITY;
    let mut chosen = None;
    for _ in 0..PLACEMENT_CANDIDATES {
        let x = rng.gen_range(0..=frame_w - w);
        let y = rng.gen_range(0..=frame_h - h);
        let candidate = BoundingBox::new(f64::from(x), f64::from(y), f64::from(w), f64::from(h));
        let iou = candidate.iou(focal);
        if iou <= budget {
            chosen = Some((x, y, candidate, iou));
            break;
        }
        best_iou = best_iou.min(iou);
    }
    let Some((x, y, inserted_bbox, achieved_iou)) = chosen else {
        return Err(MutateError::NoValidPlacement { best_iou, budget });
    };

    let resized = imageops::resize(sprite.pixels(), w, h, FilterType::Triangle);
    let mut out = img.clone();
    composite_over(&mut out, &resized, x, y);
    Ok((
        out,
        Placement {
            sprite_tag: sprite.tag().to_string(),
            inserted_bbox,
            scale_factor: scale,
            achieved_iou,
        },
    ))
}

/// Porter-Duff "over" of `src` onto `dst` at `(x0, y0)`, 8-bit straight alpha.
pub fn composite_over(dst: &mut RgbaImage, src: &RgbaImage, x0: u32, y0: u32) {
    for (sx, sy, s) in src.enumerate_pixels() {
        let sa = f64::from(s.0[3]) / 255.0;
        if sa == 0.0 {
            continue;
        }
        let (dx, dy) = (x0 + sx, y0 + sy);
        if dx >= dst.width() || dy >= dst.height() {
            continue;
        }
        let d = dst.get_pixel(dx, dy).0;
        let da = f64::from(d[3]) / 255.0;
        let out_a = sa + da * (1.0 - sa);
        let mut px = [0u8; 4];
        for c in 0..3 {
            let v = (f64::from(s.0[c]) * sa + f64::from(d[c]) * da * (1.0 - sa)) / out_a;
            px[c] = round_half_away(v).clamp(0.0, 255.0) as u8;
        }
        px[3] = round_half_away(out_a * 255.0).clamp(0.0, 255.0) as u8;
        dst.put_pixel(dx, dy, Rgba(px));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn opaque_sprite(w: u32, h: u32) -> Sprite {
        Sprite::new("block", RgbaImage::from_pixel(w, h, Rgba([255, 0, 0, 255]))).unwrap()
    }

    fn background(w: u32, h: u32) -> RgbaImage {
        RgbaImage::from_fn(w, h, |x, y| Rgba([(x * 3) as u8, (y * 3) as u8, 128, 255]))
    }

    #[test]
    fn select_all_when_proportion_is_one() {
        let ids: Vec<u32> = (0..17).collect();
        let mut rng = seed::rng(1);
        assert_eq!(select_subset(&ids, 1.0, &mut rng), ids);
    }

    #[test]
    fn select_rounds_count_and_keeps_order() {
        let ids: Vec<u32> = (0..10).collect();
        let mut rng = seed::rng(42);
        let picked = select_subset(&ids, 0.3, &mut rng);
        assert_eq!(picked.len(), 3);
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        // 0.25 * 10 = 2.5 rounds away from zero
        assert_eq!(select_subset(&ids, 0.25, &mut seed::rng(3)).len(), 3);
        assert!(select_subset(&ids, 0.0, &mut seed::rng(3)).is_empty());
    }

    #[test]
    fn select_replays_under_same_seed() {
        let ids: Vec<u32> = (0..100).collect();
        let a = select_subset(&ids, 0.3, &mut seed::rng(42));
        let b = select_subset(&ids, 0.3, &mut seed::rng(42));
        assert_eq!(a, b);
        assert_ne!(a, select_subset(&ids, 0.3, &mut seed::rng(43)));
    }

    #[test]
    fn whole_image_focal_with_zero_budget_has_no_placement() {
        let img = background(64, 64);
        let focal = BoundingBox::new(0.0, 0.0, 64.0, 64.0);
        let err = insert_object(&img, &focal, &opaque_sprite(10, 10), 0.0, &mut seed::rng(1)).unwrap_err();
        assert!(matches!(err, MutateError::NoValidPlacement { .. }));
    }

    #[test]
    fn zero_budget_placement_only_touches_inserted_box() {
        let img = background(64, 64);
        let focal = BoundingBox::new(0.0, 0.0, 32.0, 32.0);
        for s in 0..20 {
            let (out, placement) =
                insert_object(&img, &focal, &opaque_sprite(12, 9), 0.0, &mut seed::rng(s)).unwrap();
            assert_eq!(placement.achieved_iou, 0.0);
            let b = placement.inserted_bbox;
            for (x, y, px) in out.enumerate_pixels() {
                let (fx, fy) = (f64::from(x), f64::from(y));
                let inside = fx >= b.x && fx < b.right() && fy >= b.y && fy < b.bottom();
                if !inside {
                    assert_eq!(px, img.get_pixel(x, y), "pixel ({x},{y}) changed outside box");
                }
            }
            assert!(out != img, "opaque sprite must change something");
        }
    }

    #[test]
    fn large_sprite_is_scaled_below_focal_area() {
        let img = background(128, 128);
        let focal = BoundingBox::new(10.0, 10.0, 40.0, 40.0);
        let sprite = opaque_sprite(200, 200);
        let (_, placement) = insert_object(&img, &focal, &sprite, 0.05, &mut seed::rng(5)).unwrap();
        assert!(placement.scale_factor < 1.0);
        assert!(placement.inserted_bbox.area() < focal.area());
        assert_eq!(placement.inserted_bbox.w, 20.0);
        assert_eq!(placement.inserted_bbox.h, 20.0);
    }

    #[test]
    fn sprite_is_clamped_to_frame() {
        // Focal box nearly fills a wide frame; a tall sprite must shrink to fit the height.
        let img = background(200, 20);
        let focal = BoundingBox::new(0.0, 0.0, 200.0, 20.0);
        let sprite = opaque_sprite(5, 100);
        let (_, placement) = insert_object(&img, &focal, &sprite, 1.0, &mut seed::rng(1)).unwrap();
        assert!(placement.inserted_bbox.bottom() <= 20.0);
        assert!(placement.inserted_bbox.h <= 20.0);
    }

    #[test]
    fn tiny_focal_box_is_reported() {
        let img = background(32, 32);
        let focal = BoundingBox::new(3.0, 3.0, 1.0, 1.0);
        let err = insert_object(&img, &focal, &opaque_sprite(4, 4), 1.0, &mut seed::rng(1)).unwrap_err();
        assert!(matches!(err, MutateError::FocalTooSmall { .. }));
    }

    #[test]
    fn compositing_respects_alpha() {
        let mut dst = RgbaImage::from_pixel(2, 1, Rgba([0, 0, 200, 255]));
        let src = RgbaImage::from_fn(2, 1, |x, _| if x == 0 { Rgba([255, 0, 0, 0]) } else { Rgba([255, 0, 0, 255]) });
        composite_over(&mut dst, &src, 0, 0);
        assert_eq!(dst.get_pixel(0, 0).0, [0, 0, 200, 255]);
        assert_eq!(dst.get_pixel(1, 0).0, [255, 0, 0, 255]);

        let mut half = RgbaImage::from_pixel(1, 1, Rgba([0, 0, 0, 255]));
        composite_over(&mut half, &RgbaImage::from_pixel(1, 1, Rgba([255, 255, 255, 128])), 0, 0);
        assert_eq!(half.get_pixel(0, 0).0, [128, 128, 128, 255]);
    }
}
