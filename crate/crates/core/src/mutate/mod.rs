//! Training-set mutation: foreign-object insertion under an occlusion budget,
//! proportion-limited subsets, sprite recoloring, and the TC01-TC08 presets.
//!
//! [`apply_test_case`] copies a dataset, mutates the selected training images
//! and writes a `manifest.json` that records every placement. Each image is
//! mutated with its own RNG stream derived from `(spec.seed, image_id)`, so the
//! output does not depend on how many workers ran or in which order.

mod placement;
mod sprite;

pub use placement::{
    composite_over, insert_object, select_subset, Placement, PLACEMENT_CANDIDATES, TARGET_AREA_FRACTION,
};
pub use sprite::{builtin_birds, builtin_trees, load_pool, recolor, save_pool, Sprite, SpriteInfo, POOL_SIZE};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, subset_by_split, AnnotatedDataset, DatasetError, ImageId, Split};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Default occlusion budget for "minimally obtrusive" insertions.
pub const MINIMAL_OCCLUSION: f64 = 0.05;

/// Seed used by presets unless overridden.
pub const DEFAULT_SEED: u64 = 2021;

#[derive(Debug, Error)]
pub enum MutateError {
    #[error("invalid test case: {0}")]
    InvalidSpec(String),
    #[error("sprite {0:?} has no visible pixels")]
    EmptySprite(String),
    #[error("image is empty")]
    EmptyImage,
    #[error("no placement within budget {budget} (best IoU seen {best_iou:.4})")]
    NoValidPlacement { best_iou: f64, budget: f64 },
    #[error("focal box too small: scaled object area {inserted_area} is not below focal area {focal_area}")]
    FocalTooSmall { focal_area: f64, inserted_area: f64 },
    #[error("unknown preset {0:?} (expected TC01..TC08)")]
    UnknownPreset(String),
    #[error("output directory must differ from the dataset root")]
    OutputIsInput,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MutateError {
    /// Per-image failures that skip the image instead of aborting the run.
    pub fn is_skip(&self) -> bool {
        matches!(self, Self::NoValidPlacement { .. } | Self::FocalTooSmall { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    BirdSet,
    TreeSet,
    SingleSprite,
}

/// A mutation recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCaseSpec {
    pub name: String,
    pub object_kind: ObjectKind,
    pub sprite_pool: Vec<Sprite>,
    /// Target hue in degrees, applied to every sprite in the pool.
    pub recolor: Option<f64>,
    pub proportion: f64,
    pub occlusion_budget: f64,
    pub seed: u64,
}

/// Serializable summary of a [`TestCaseSpec`]; sprites are recorded by digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecRecord {
    pub name: String,
    pub object_kind: ObjectKind,
    pub sprites: Vec<SpriteInfo>,
    pub recolor: Option<f64>,
    pub proportion: f64,
    pub occlusion_budget: f64,
    pub seed: u64,
}

impl TestCaseSpec {
    pub fn validate(&self) -> Result<(), MutateError> {
        if self.sprite_pool.is_empty() {
            return Err(MutateError::InvalidSpec("sprite pool is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.proportion) {
            return Err(MutateError::InvalidSpec(format!("proportion {} outside [0,1]", self.proportion)));
        }
        if !(0.0..=1.0).contains(&self.occlusion_budget) {
            return Err(MutateError::InvalidSpec(format!(
                "occlusion budget {} outside [0,1]",
                self.occlusion_budget
            )));
        }
        if let Some(h) = self.recolor {
            if !(0.0..360.0).contains(&h) {
                return Err(MutateError::InvalidSpec(format!("recolor hue {h} outside [0,360)")));
            }
        }
        Ok(())
    }

    /// Pool actually inserted: recolored when the spec asks for it.
    pub fn effective_pool(&self) -> Vec<Sprite> {
        match self.recolor {
            Some(h) => self.sprite_pool.iter().map(|s| recolor(s, h)).collect(),
            None => self.sprite_pool.clone(),
        }
    }

    /// Coarse object class used to decide which test cases are comparable.
    pub fn object_class(&self) -> String {
        match self.object_kind {
            ObjectKind::BirdSet => "bird".into(),
            ObjectKind::TreeSet => "tree".into(),
            ObjectKind::SingleSprite => self
                .sprite_pool
                .first()
                .map(|s| s.tag().split(['-', '_']).next().unwrap_or_default().to_string())
                .unwrap_or_default(),
        }
    }

    pub fn record(&self) -> SpecRecord {
        SpecRecord {
            name: self.name.clone(),
            object_kind: self.object_kind,
            sprites: self.sprite_pool.iter().map(Sprite::info).collect(),
            recolor: self.recolor,
            proportion: self.proportion,
            occlusion_budget: self.occlusion_budget,
            seed: self.seed,
        }
    }

    /// The identity mutation: nothing selected, dataset copied unchanged.
    pub fn identity(name: impl Into<String>, seed: u64) -> Self {
        Self {
            name: name.into(),
            object_kind: ObjectKind::BirdSet,
            sprite_pool: builtin_birds(),
            recolor: None,
            proportion: 0.0,
            occlusion_budget: MINIMAL_OCCLUSION,
            seed,
        }
    }
}

/// Where a spec file takes its sprites from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpriteSource {
    BuiltinBirds,
    BuiltinTrees,
    /// First built-in bird only.
    BuiltinBird,
    Directory(PathBuf),
}

impl SpriteSource {
    pub fn resolve(&self) -> Result<Vec<Sprite>, MutateError> {
        Ok(match self {
            Self::BuiltinBirds => builtin_birds(),
            Self::BuiltinTrees => builtin_trees(),
            Self::BuiltinBird => builtin_birds().into_iter().take(1).collect(),
            Self::Directory(dir) => load_pool(dir)?,
        })
    }
}

/// On-disk description of a custom test case (`mutate --spec FILE`, run configs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestCaseFile {
    pub name: String,
    pub object_kind: ObjectKind,
    pub sprites: SpriteSource,
    #[serde(default)]
    pub recolor: Option<f64>,
    pub proportion: f64,
    #[serde(default = "default_budget")]
    pub occlusion_budget: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_budget() -> f64 {
    MINIMAL_OCCLUSION
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl TestCaseFile {
    pub fn into_spec(self) -> Result<TestCaseSpec, MutateError> {
        let spec = TestCaseSpec {
            sprite_pool: self.sprites.resolve()?,
            name: self.name,
            object_kind: self.object_kind,
            recolor: self.recolor,
            proportion: self.proportion,
            occlusion_budget: self.occlusion_budget,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<TestCaseSpec, MutateError> {
        let file: TestCaseFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        file.into_spec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Preset {
    TC01,
    TC02,
    TC03,
    TC04,
    TC05,
    TC06,
    TC07,
    TC08,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::TC01,
        Preset::TC02,
        Preset::TC03,
        Preset::TC04,
        Preset::TC05,
        Preset::TC06,
        Preset::TC07,
        Preset::TC08,
    ];
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Preset {
    type Err = MutateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| MutateError::UnknownPreset(s.to_string()))
    }
}

/// Hues used by the single-colour presets.
pub const GREEN_HUE: f64 = 120.0;
pub const BLUE_HUE: f64 = 240.0;
pub const RED_HUE: f64 = 0.0;

/// The eight published test cases. TC05-TC07 share seed and sprite so the
/// per-image placement sequence is identical and only the hue differs.
pub fn preset(which: Preset) -> TestCaseSpec {
    let (kind, pool, recolor, proportion, budget) = match which {
        Preset::TC01 => (ObjectKind::BirdSet, builtin_birds(), None, 1.0, MINIMAL_OCCLUSION),
        Preset::TC02 => (ObjectKind::TreeSet, builtin_trees(), None, 1.0, MINIMAL_OCCLUSION),
        Preset::TC03 => (ObjectKind::BirdSet, builtin_birds(), None, 0.3, MINIMAL_OCCLUSION),
        Preset::TC04 => (ObjectKind::TreeSet, builtin_trees(), None, 0.3, MINIMAL_OCCLUSION),
        Preset::TC05 => (ObjectKind::SingleSprite, single_bird(), Some(GREEN_HUE), 1.0, MINIMAL_OCCLUSION),
        Preset::TC06 => (ObjectKind::SingleSprite, single_bird(), Some(BLUE_HUE), 1.0, MINIMAL_OCCLUSION),
        Preset::TC07 => (ObjectKind::SingleSprite, single_bird(), Some(RED_HUE), 1.0, MINIMAL_OCCLUSION),
        Preset::TC08 => (ObjectKind::BirdSet, builtin_birds(), None, 1.0, 0.0),
    };
    TestCaseSpec {
        name: which.to_string(),
        object_kind: kind,
        sprite_pool: pool,
        recolor,
        proportion,
        occlusion_budget: budget,
        seed: DEFAULT_SEED,
    }
}

pub fn preset_by_name(name: &str) -> Result<TestCaseSpec, MutateError> {
    Ok(preset(name.parse()?))
}

fn single_bird() -> Vec<Sprite> {
    builtin_birds().into_iter().take(1).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub image_id: ImageId,
    #[serde(flatten)]
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub image_id: ImageId,
    pub reason: String,
}

/// Reproducibility ledger of one mutated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationManifest {
    pub spec: SpecRecord,
    /// Size of the training split the proportion was applied to.
    pub train_count: usize,
    pub selected: Vec<ImageId>,
    pub placements: Vec<PlacementRecord>,
    pub skips: Vec<SkipRecord>,
    /// Images whose stored path changed (JPEG sources are re-encoded as PNG).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub renamed: Vec<(ImageId, PathBuf)>,
    pub tool_version: String,
}

impl MutationManifest {
    /// Share of training images that received an object.
    pub fn occluded_fraction(&self) -> f64 {
        if self.train_count == 0 {
            0.0
        } else {
            self.placements.len() as f64 / self.train_count as f64
        }
    }

    /// JSON with lexicographically sorted keys.
    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        to_sorted_json(self)
    }

    pub fn load(path: &Path) -> Result<Self, MutateError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Pretty JSON with object keys in sorted order.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    // serde_json::Value uses a BTreeMap for objects, so a round trip sorts keys.
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

enum Outcome {
    Placed(PlacementRecord, Option<PathBuf>),
    Skipped(SkipRecord),
}

/// Copies `ds` into `out`, mutates the selected training images and writes the manifest.
pub fn apply_test_case(
    ds: &AnnotatedDataset,
    spec: &TestCaseSpec,
    out: &Path,
) -> Result<MutationManifest, MutateError> {
    spec.validate()?;
    if same_dir(ds.root(), out) {
        return Err(MutateError::OutputIsInput);
    }
    let train = subset_by_split(ds, Split::Train);
    let train_ids: Vec<ImageId> = train.images().iter().map(|r| r.id).collect();
    let mut select_rng = seed::rng(seed::derive_str(spec.seed, "select"));
    let selected = select_subset(&train_ids, spec.proportion, &mut select_rng);
    let pool = spec.effective_pool();

    fs::create_dir_all(out)?;
    let out_images = out.join(dataset::IMAGES_DIR);

    let outcomes: Vec<Outcome> = selected
        .par_iter()
        .map(|&id| mutate_one(ds, id, spec, &pool, &out_images))
        .collect::<Result<_, _>>()?;

    let mut placements = Vec::new();
    let mut skips = Vec::new();
    let mut renamed = Vec::new();
    for outcome in outcomes {
        match outcome {
            Outcome::Placed(rec, new_path) => {
                if let Some(p) = new_path {
                    renamed.push((rec.image_id, p));
                }
                placements.push(rec);
            }
            Outcome::Skipped(skip) => skips.push(skip),
        }
    }
    placements.sort_by_key(|p| p.image_id);
    skips.sort_by_key(|s| s.image_id);
    renamed.sort();

    // Everything not mutated is copied byte for byte.
    let mutated: std::collections::BTreeSet<ImageId> = placements.iter().map(|p| p.image_id).collect();
    ds.images()
        .par_iter()
        .filter(|rec| !mutated.contains(&rec.id))
        .try_for_each(|rec| -> Result<(), MutateError> {
            let dst = out_images.join(&rec.path);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::copy(ds.image_path(rec), dst)?;
            Ok(())
        })?;

    for file in dataset::ANNOTATION_FILES {
        if file == dataset::IMAGES_FILE && !renamed.is_empty() {
            continue;
        }
        fs::copy(ds.root().join(file), out.join(file))?;
    }
    if !renamed.is_empty() {
        let lookup: std::collections::BTreeMap<ImageId, &PathBuf> = renamed.iter().map(|(i, p)| (*i, p)).collect();
        let listing: String = ds
            .images()
            .iter()
            .map(|r| format!("{} {}\n", r.id, lookup.get(&r.id).copied().unwrap_or(&r.path).display()))
            .collect();
        fs::write(out.join(dataset::IMAGES_FILE), listing)?;
    }

    let manifest = MutationManifest {
        spec: spec.record(),
        train_count: train_ids.len(),
        selected,
        placements,
        skips,
        renamed,
        tool_version: crate::TOOL_VERSION.to_string(),
    };
    fs::write(out.join(MANIFEST_FILE), manifest.to_json()?)?;
    Ok(manifest)
}

fn mutate_one(
    ds: &AnnotatedDataset,
    id: ImageId,
    spec: &TestCaseSpec,
    pool: &[Sprite],
    out_images: &Path,
) -> Result<Outcome, MutateError> {
    let rec = ds.get(id).ok_or(DatasetError::UnknownImage(id))?;
    let mut rng = seed::rng(seed::derive(spec.seed, id.0));
    let sprite = &pool[rng.gen_range(0..pool.len())];

    let src_path = ds.image_path(rec);
    let decoded = dataset::decode(&src_path)?;
    let has_alpha = decoded.color().has_alpha();
    let rgba = decoded.to_rgba8();

    match insert_object(&rgba, &rec.focal_bbox, sprite, spec.occlusion_budget, &mut rng) {
        Ok((mutated, placement)) => {
            let is_png = dataset::supported_format(&src_path)? == image::ImageFormat::Png;
            let rel = if is_png {
                rec.path.clone()
            } else {
                rec.path.with_extension("png")
            };
            let dst = out_images.join(&rel);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent)?;
            }
            if has_alpha {
                mutated.save_with_format(&dst, image::ImageFormat::Png)?;
            } else {
                image::DynamicImage::ImageRgba8(mutated)
                    .to_rgb8()
                    .save_with_format(&dst, image::ImageFormat::Png)?;
            }
            Ok(Outcome::Placed(
                PlacementRecord { image_id: id, placement },
                (!is_png).then_some(rel),
            ))
        }
        Err(e) if e.is_skip() => {
            tracing::warn!(image = %id, "skipping image: {e}");
            Ok(Outcome::Skipped(SkipRecord {
                image_id: id,
                reason: e.to_string(),
            }))
        }
        Err(e) => Err(e),
    }
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}
