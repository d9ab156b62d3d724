//! CUB-200-2011 style annotated image datasets.
//!
//! A dataset root holds five whitespace-delimited annotation files and an
//! `images/` tree:
//!
//! ```text
//! images.txt              <image_id> <relative/path.jpg>
//! bounding_boxes.txt      <image_id> <x> <y> <w> <h>
//! classes.txt             <class_id> <class_name>
//! image_class_labels.txt  <image_id> <class_id>
//! train_test_split.txt    <image_id> <1 = train | 0 = test>
//! ```
//!
//! Metadata is loaded and validated eagerly; pixel data is decoded on demand.

pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::{RgbImage, RgbaImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const IMAGES_FILE: &str = "images.txt";
pub const BBOX_FILE: &str = "bounding_boxes.txt";
pub const CLASSES_FILE: &str = "classes.txt";
pub const LABELS_FILE: &str = "image_class_labels.txt";
pub const SPLIT_FILE: &str = "train_test_split.txt";
pub const IMAGES_DIR: &str = "images";

pub const ANNOTATION_FILES: [&str; 5] =
    [IMAGES_FILE, BBOX_FILE, CLASSES_FILE, LABELS_FILE, SPLIT_FILE];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing annotation file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: malformed line: {message}")]
    MalformedLine {
        file: String,
        line: usize,
        message: String,
    },
    #[error("reference to unknown image id {0}")]
    DanglingReference(ImageId),
    #[error("image id {0} is listed more than once in {1}")]
    DuplicateId(ImageId, String),
    #[error("image id {image} has no entry in {file}")]
    MissingAnnotation { image: ImageId, file: String },
    #[error("unknown class id {class} for image {image}")]
    UnknownClass { image: ImageId, class: u32 },
    #[error("bounding box of image {0} is empty or exceeds the image bounds")]
    BBoxOutOfBounds(ImageId),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(PathBuf),
    #[error("cannot decode image {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("unknown image id {0}")]
    UnknownImage(ImageId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Numeric image identifier as used by the annotation files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Axis-aligned box in pixels, top-left origin. Coordinates are kept exactly
/// as read (CUB stores floats) and rounded only when compositing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        iw * ih
    }

    /// Intersection over union; 0 when both boxes are degenerate.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    /// True when the box has positive extent and lies inside `[0,width) x [0,height)`.
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && self.x >= 0.0
            && self.y >= 0.0
            && self.right() <= f64::from(width)
            && self.bottom() <= f64::from(height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    /// Path relative to the dataset's `images/` directory.
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub focal_bbox: BoundingBox,
    pub class_id: u32,
}

/// Validated, immutable view of an annotated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedDataset {
    root: PathBuf,
    images: Vec<ImageRecord>,
    classes: BTreeMap<u32, String>,
    split: BTreeMap<ImageId, Split>,
}

impl AnnotatedDataset {
    /// Builds a dataset from parts, enforcing the same invariants as [`load_dataset`].
    pub fn from_parts(
        root: impl Into<PathBuf>,
        images: Vec<ImageRecord>,
        classes: BTreeMap<u32, String>,
        split: BTreeMap<ImageId, Split>,
    ) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for rec in &images {
            if !seen.insert(rec.id) {
                return Err(DatasetError::DuplicateId(rec.id, IMAGES_FILE.into()));
            }
            if rec.width == 0 || rec.height == 0 || !rec.focal_bbox.fits_within(rec.width, rec.height)
            {
                return Err(DatasetError::BBoxOutOfBounds(rec.id));
            }
            if !classes.contains_key(&rec.class_id) {
                return Err(DatasetError::UnknownClass {
                    image: rec.id,
                    class: rec.class_id,
                });
            }
            if !split.contains_key(&rec.id) {
                return Err(DatasetError::MissingAnnotation {
                    image: rec.id,
                    file: SPLIT_FILE.into(),
                });
            }
        }
        if let Some(id) = split.keys().find(|id| !seen.contains(id)) {
            return Err(DatasetError::DanglingReference(*id));
        }
        Ok(Self {
            root: root.into(),
            images,
            classes,
            split,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn classes(&self) -> &BTreeMap<u32, String> {
        &self.classes
    }

    pub fn split(&self) -> &BTreeMap<ImageId, Split> {
        &self.split
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, id: ImageId) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.id == id)
    }

    pub fn split_of(&self, id: ImageId) -> Option<Split> {
        self.split.get(&id).copied()
    }

    pub fn image_path(&self, rec: &ImageRecord) -> PathBuf {
        self.root.join(IMAGES_DIR).join(&rec.path)
    }

    /// Decodes an image's pixels. Loads are idempotent and safe to race.
    pub fn load_rgba(&self, id: ImageId) -> Result<RgbaImage, DatasetError> {
        let rec = self.get(id).ok_or(DatasetError::UnknownImage(id))?;
        Ok(decode(&self.image_path(rec))?.to_rgba8())
    }

    pub fn load_rgb(&self, id: ImageId) -> Result<RgbImage, DatasetError> {
        let rec = self.get(id).ok_or(DatasetError::UnknownImage(id))?;
        Ok(decode(&self.image_path(rec))?.to_rgb8())
    }

    /// Writes the five annotation files describing this dataset into `dir`.
    pub fn write_annotations(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir)?;
        let mut images = String::new();
        let mut bboxes = String::new();
        let mut labels = String::new();
        let mut split = String::new();
        for rec in &self.images {
            images.push_str(&format!("{} {}\n", rec.id, rec.path.display()));
            let b = rec.focal_bbox;
            bboxes.push_str(&format!("{} {:?} {:?} {:?} {:?}\n", rec.id, b.x, b.y, b.w, b.h));
            labels.push_str(&format!("{} {}\n", rec.id, rec.class_id));
            let flag = match self.split[&rec.id] {
                Split::Train => 1,
                Split::Test => 0,
            };
            split.push_str(&format!("{} {}\n", rec.id, flag));
        }
        let classes: String = self
            .classes
            .iter()
            .map(|(id, name)| format!("{id} {name}\n"))
            .collect();
        fs::write(dir.join(IMAGES_FILE), images)?;
        fs::write(dir.join(BBOX_FILE), bboxes)?;
        fs::write(dir.join(CLASSES_FILE), classes)?;
        fs::write(dir.join(LABELS_FILE), labels)?;
        fs::write(dir.join(SPLIT_FILE), split)?;
        Ok(())
    }
}

/// Decodes a PNG or JPEG file; any other extension is rejected.
pub fn decode(path: &Path) -> Result<image::DynamicImage, DatasetError> {
    let format = supported_format(path)?;
    let bytes = fs::read(path)?;
    image::load_from_memory_with_format(&bytes, format).map_err(|source| DatasetError::Decode {
        path: path.to_path_buf(),
        source,
    })
}

pub fn supported_format(path: &Path) -> Result<image::ImageFormat, DatasetError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("png") => Ok(image::ImageFormat::Png),
        Some("jpg") | Some("jpeg") => Ok(image::ImageFormat::Jpeg),
        _ => Err(DatasetError::UnsupportedFormat(path.to_path_buf())),
    }
}

fn read_dimensions(path: &Path) -> Result<(u32, u32), DatasetError> {
    let format = supported_format(path)?;
    let file = fs::File::open(path)?;
    let reader = image::ImageReader::with_format(std::io::BufReader::new(file), format);
    reader.into_dimensions().map_err(|source| DatasetError::Decode {
        path: path.to_path_buf(),
        source,
    })
}

struct TableLine<'a> {
    line: usize,
    fields: Vec<&'a str>,
}

fn read_table(root: &Path, file: &str) -> Result<String, DatasetError> {
    let path = root.join(file);
    if !path.is_file() {
        return Err(DatasetError::MissingFile(path));
    }
    Ok(fs::read_to_string(path)?)
}

fn table_lines<'a>(
    file: &str,
    content: &'a str,
    min_fields: usize,
) -> Result<Vec<TableLine<'a>>, DatasetError> {
    let mut out = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < min_fields {
            return Err(malformed(file, idx + 1, format!("expected {min_fields} fields")));
        }
        out.push(TableLine {
            line: idx + 1,
            fields,
        });
    }
    Ok(out)
}

fn malformed(file: &str, line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::MalformedLine {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_field<T: std::str::FromStr>(file: &str, line: &TableLine<'_>, idx: usize) -> Result<T, DatasetError> {
    line.fields[idx]
        .parse()
        .map_err(|_| malformed(file, line.line, format!("cannot parse field {}: {:?}", idx + 1, line.fields[idx])))
}

/// Reads a `<image_id> <value...>` table into a map, rejecting duplicates and
/// references to images absent from `known`.
fn keyed_table<T>(
    root: &Path,
    file: &str,
    min_fields: usize,
    known: &BTreeSet<ImageId>,
    mut parse: impl FnMut(&TableLine<'_>) -> Result<T, DatasetError>,
) -> Result<BTreeMap<ImageId, T>, DatasetError> {
    let content = read_table(root, file)?;
    let mut out = BTreeMap::new();
    for line in table_lines(file, &content, min_fields)? {
        let id = ImageId(parse_field(file, &line, 0)?);
        if !known.contains(&id) {
            return Err(DatasetError::DanglingReference(id));
        }
        let value = parse(&line)?;
        if out.insert(id, value).is_some() {
            return Err(DatasetError::DuplicateId(id, file.into()));
        }
    }
    Ok(out)
}

/// Loads and validates a CUB-style dataset rooted at `root`.
pub fn load_dataset(root: &Path) -> Result<AnnotatedDataset, DatasetError> {
    for file in ANNOTATION_FILES {
        if !root.join(file).is_file() {
            return Err(DatasetError::MissingFile(root.join(file)));
        }
    }

    let content = read_table(root, IMAGES_FILE)?;
    let mut listed: Vec<(ImageId, PathBuf)> = Vec::new();
    let mut known = BTreeSet::new();
    for line in table_lines(IMAGES_FILE, &content, 2)? {
        let id = ImageId(parse_field(IMAGES_FILE, &line, 0)?);
        if !known.insert(id) {
            return Err(DatasetError::DuplicateId(id, IMAGES_FILE.into()));
        }
        listed.push((id, PathBuf::from(line.fields[1])));
    }

    let classes_content = read_table(root, CLASSES_FILE)?;
    let mut classes = BTreeMap::new();
    for line in table_lines(CLASSES_FILE, &classes_content, 2)? {
        let id: u32 = parse_field(CLASSES_FILE, &line, 0)?;
        if classes.insert(id, line.fields[1..].join(" ")).is_some() {
            return Err(malformed(CLASSES_FILE, line.line, format!("duplicate class id {id}")));
        }
    }

    let bboxes = keyed_table(root, BBOX_FILE, 5, &known, |line| {
        let v: Vec<f64> = (1..5)
            .map(|i| parse_field::<f64>(BBOX_FILE, line, i))
            .collect::<Result<_, _>>()?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(malformed(BBOX_FILE, line.line, "non-finite coordinate"));
        }
        Ok(BoundingBox::new(v[0], v[1], v[2], v[3]))
    })?;
    let labels = keyed_table(root, LABELS_FILE, 2, &known, |line| {
        parse_field::<u32>(LABELS_FILE, line, 1)
    })?;
    let split = keyed_table(root, SPLIT_FILE, 2, &known, |line| {
        match line.fields[1] {
            "1" => Ok(Split::Train),
            "0" => Ok(Split::Test),
            other => Err(malformed(SPLIT_FILE, line.line, format!("split flag must be 0 or 1, got {other:?}"))),
        }
    })?;

    let images_root = root.join(IMAGES_DIR);
    let dims: Vec<(u32, u32)> = listed
        .par_iter()
        .map(|(_, rel)| read_dimensions(&images_root.join(rel)))
        .collect::<Result<_, _>>()?;

    let mut images = Vec::with_capacity(listed.len());
    for ((id, path), (width, height)) in listed.into_iter().zip(dims) {
        let missing = |file: &str| DatasetError::MissingAnnotation {
            image: id,
            file: file.to_string(),
        };
        let focal_bbox = *bboxes.get(&id).ok_or_else(|| missing(BBOX_FILE))?;
        let class_id = *labels.get(&id).ok_or_else(|| missing(LABELS_FILE))?;
        if !split.contains_key(&id) {
            return Err(missing(SPLIT_FILE));
        }
        if !focal_bbox.fits_within(width, height) {
            return Err(DatasetError::BBoxOutOfBounds(id));
        }
        images.push(ImageRecord {
            id,
            path,
            width,
            height,
            focal_bbox,
            class_id,
        });
    }

    AnnotatedDataset::from_parts(root, images, classes, split)
}

/// Images whose split matches `which`, in original order.
pub fn subset_by_split(ds: &AnnotatedDataset, which: Split) -> AnnotatedDataset {
    let images: Vec<ImageRecord> = ds
        .images
        .iter()
        .filter(|r| ds.split[&r.id] == which)
        .cloned()
        .collect();
    let split = images.iter().map(|r| (r.id, which)).collect();
    AnnotatedDataset {
        root: ds.root.clone(),
        images,
        classes: ds.classes.clone(),
        split,
    }
}
