//! Deterministic stand-in classifier so the pipeline runs without an external
//! network: a saturation-weighted hue histogram pushed through a fixed, seeded
//! linear projection and a softmax.

use image::RgbImage;
use rand::Rng;
use rayon::prelude::*;

use super::{MetricsError, ProbabilityVector, ScoreSet};
use crate::color::rgb_to_hsv;
use crate::seed;

const HUE_BINS: usize = 12;
const LOGIT_GAIN: f64 = 24.0;

fn features(img: &RgbImage) -> [f64; HUE_BINS] {
    let mut hist = [0.0f64; HUE_BINS];
    let n = (u64::from(img.width()) * u64::from(img.height())).max(1) as f64;
    for px in img.pixels() {
        let hsv = rgb_to_hsv(px.0);
        if hsv.s == 0.0 {
            continue;
        }
        let bin = ((hsv.h / 360.0 * HUE_BINS as f64) as usize).min(HUE_BINS - 1);
        hist[bin] += hsv.s;
    }
    hist.map(|v| v / n)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Class distributions for `images` (id, raster) under a projection fixed by `seed`.
pub fn builtin_classifier(
    images: &[(String, RgbImage)],
    n_classes: usize,
    seed: u64,
) -> Result<ScoreSet, MetricsError> {
    if n_classes < 2 {
        return Err(MetricsError::TooFewClasses);
    }
    let mut rng = seed::rng(seed::derive_str(seed, "builtin-classifier"));
    let projection: Vec<[f64; HUE_BINS]> = (0..n_classes)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
        .collect();
    let rows = images
        .par_iter()
        .map(|(id, img)| {
            let f = features(img);
            let logits: Vec<f64> = projection
                .iter()
                .map(|w| LOGIT_GAIN * w.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            Ok((id.clone(), ProbabilityVector::new(softmax(&logits))?))
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    ScoreSet::new(rows)
}
