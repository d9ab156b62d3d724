//! Grey-tint score: `1 - mean HSV saturation`.

use image::RgbImage;

use super::MetricsError;
use crate::numeric::compensated_sum;

/// `1 - mean_pixels((max - min) / max)`, with black pixels counted as
/// saturation 0. Higher means more washed out.
///
/// Pixels are tallied into a `(max, min)` histogram and summed in a fixed
/// order, so the score is bit-for-bit invariant under any pixel permutation
/// (rotations, flips).
pub fn grey_tint_score(img: &RgbImage) -> Result<f64, MetricsError> {
    let n = u64::from(img.width()) * u64::from(img.height());
    if n == 0 {
        return Err(MetricsError::EmptyImage);
    }
    let mut hist = vec![0u64; 256 * 256];
    for px in img.pixels() {
        let [r, g, b] = px.0;
        let max = r.max(g).max(b) as usize;
        let min = r.min(g).min(b) as usize;
        hist[max * 256 + min] += 1;
    }
    let saturation_sum = compensated_sum(hist.iter().enumerate().filter(|(_, c)| **c > 0).map(|(i, c)| {
        let (max, min) = (i / 256, i % 256);
        if max == 0 {
            0.0
        } else {
            *c as f64 * (max - min) as f64 / max as f64
        }
    }));
    Ok((1.0 - saturation_sum / n as f64).clamp(0.0, 1.0))
}

/// Mean grey-tint score over a set of images, in the given order.
pub fn mean_grey_tint<'a, I>(images: I) -> Result<f64, MetricsError>
where
    I: IntoIterator<Item = &'a RgbImage>,
{
    let scores: Vec<f64> = images.into_iter().map(grey_tint_score).collect::<Result<_, _>>()?;
    if scores.is_empty() {
        return Err(MetricsError::EmptyImage);
    }
    Ok(compensated_sum(scores.iter().copied()) / scores.len() as f64)
}
