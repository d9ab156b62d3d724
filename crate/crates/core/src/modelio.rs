//! Black-box model driver and the built-in mock model.
//!
//! A model is whatever a shell command template does with `{input_dir}` (a
//! mutated dataset in the [`crate::mutate`] layout) and `{output_dir}` (where
//! it must leave generated `*.png` / `*.jpg` samples). Training schedules and
//! checkpoint choice are entirely the command's business. The child inherits
//! the caller's environment plus `METAMORPH_MANIFEST=<input_dir>/manifest.json`.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use image::{Rgb, RgbImage};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{desaturate, hsv_to_rgb, Hsv};
use crate::dataset;
use crate::mutate::{MutationManifest, MANIFEST_FILE};
use crate::seed;

pub const INPUT_PLACEHOLDER: &str = "{input_dir}";
pub const OUTPUT_PLACEHOLDER: &str = "{output_dir}";
pub const MANIFEST_ENV: &str = "METAMORPH_MANIFEST";

const LOG_TAIL_LINES: usize = 20;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("command template must contain {0} exactly once")]
    BadTemplate(&'static str),
    #[error("{0} has no manifest.json; run the mutation step first")]
    MissingManifest(PathBuf),
    #[error("model exited with status {code}:\n{log_tail}")]
    NonZeroExit { code: i32, log_tail: String },
    #[error("model did not finish within {0:?}")]
    Timeout(Duration),
    #[error("model produced no images in {0}")]
    NoOutputImages(PathBuf),
    #[error("generated file {path} does not decode: {message}")]
    BadOutputImage { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Mutate(#[from] crate::mutate::MutateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCommand {
    pub template: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub workdir: Option<PathBuf>,
}

fn default_timeout() -> u64 {
    // Full GAN training runs take well over a day.
    72 * 3600
}

impl ModelCommand {
    pub fn new(template: impl Into<String>, timeout: Duration, workdir: Option<PathBuf>) -> Result<Self, ModelError> {
        let cmd = Self {
            template: template.into(),
            timeout_secs: timeout.as_secs().max(1),
            workdir,
        };
        cmd.validate()?;
        Ok(cmd)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for p in [INPUT_PLACEHOLDER, OUTPUT_PLACEHOLDER] {
            if self.template.matches(p).count() != 1 {
                return Err(ModelError::BadTemplate(p));
            }
        }
        Ok(())
    }

    /// Template with both placeholders replaced by shell-quoted paths.
    pub fn render(&self, input_dir: &Path, output_dir: &Path) -> String {
        self.template
            .replace(INPUT_PLACEHOLDER, &shell_quote(input_dir))
            .replace(OUTPUT_PLACEHOLDER, &shell_quote(output_dir))
    }
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub output_dir: PathBuf,
    /// (image id = file stem, path), sorted by file name.
    pub images: Vec<(String, PathBuf)>,
    pub model_log: String,
    pub wallclock: Duration,
}

/// Runs the model on a mutated dataset and collects what it wrote to `output_dir`.
pub fn run_model(cmd: &ModelCommand, mutated: &Path, output_dir: &Path) -> Result<GenerationResult, ModelError> {
    cmd.validate()?;
    let manifest = mutated.join(MANIFEST_FILE);
    if !manifest.is_file() {
        return Err(ModelError::MissingManifest(mutated.to_path_buf()));
    }
    fs::create_dir_all(output_dir)?;
    let input_abs = mutated.canonicalize()?;
    let output_abs = output_dir.canonicalize()?;
    let script = cmd.render(&input_abs, &output_abs);
    tracing::info!(command = %script, "running model");

    let mut command = Command::new("sh");
    command
        .arg("-c")
        .arg(&script)
        .env(MANIFEST_ENV, input_abs.join(MANIFEST_FILE))
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(dir) = &cmd.workdir {
        command.current_dir(dir);
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        command.process_group(0);
    }

    let started = Instant::now();
    let mut child = command.spawn()?;
    let stdout = drain(child.stdout.take().expect("piped stdout"));
    let stderr = drain(child.stderr.take().expect("piped stderr"));

    let timeout = Duration::from_secs(cmd.timeout_secs);
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if started.elapsed() >= timeout {
            kill_tree(&mut child);
            break None;
        }
        thread::sleep(Duration::from_millis(10));
    };
    let wallclock = started.elapsed();
    let out = stdout.join().unwrap_or_default();
    let err = stderr.join().unwrap_or_default();
    let model_log = format!("--- stdout ---\n{out}--- stderr ---\n{err}");

    let Some(status) = status else {
        return Err(ModelError::Timeout(timeout));
    };
    if !status.success() {
        return Err(ModelError::NonZeroExit {
            code: status.code().unwrap_or(-1),
            log_tail: tail(&model_log, LOG_TAIL_LINES),
        });
    }

    let images = list_generated(output_dir)?;
    if images.is_empty() {
        return Err(ModelError::NoOutputImages(output_dir.to_path_buf()));
    }
    images.par_iter().try_for_each(|(_, path)| {
        dataset::decode(path).map(|_| ()).map_err(|e| ModelError::BadOutputImage {
            path: path.clone(),
            message: e.to_string(),
        })
    })?;
    Ok(GenerationResult {
        output_dir: output_dir.to_path_buf(),
        images,
        model_log,
        wallclock,
    })
}

fn drain<R: Read + Send + 'static>(mut pipe: R) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = pipe.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    {
        // The child leads its own process group; take down everything it spawned.
        let _ = Command::new("kill")
            .args(["-KILL", "--", &format!("-{}", child.id())])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status();
    }
    let _ = child.kill();
    let _ = child.wait();
}

fn tail(text: &str, lines: usize) -> String {
    let all: Vec<&str> = text.lines().collect();
    all[all.len().saturating_sub(lines)..].join("\n")
}

/// `*.png`, `*.jpg`, `*.jpeg` directly inside `dir`, sorted by name.
pub fn list_generated(dir: &Path) -> Result<Vec<(String, PathBuf)>, ModelError> {
    let mut out: Vec<(String, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file() && dataset::supported_format(p).is_ok())
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            (id, p)
        })
        .collect();
    out.sort_by(|a, b| a.1.cmp(&b.1));
    Ok(out)
}

/// Decodes generated images as RGB, in listing order.
pub fn load_generated(images: &[(String, PathBuf)]) -> Result<Vec<(String, RgbImage)>, ModelError> {
    images
        .par_iter()
        .map(|(id, path)| {
            let img = dataset::decode(path).map_err(|e| ModelError::BadOutputImage {
                path: path.clone(),
                message: e.to_string(),
            })?;
            Ok((id.clone(), img.to_rgb8()))
        })
        .collect()
}

/// Knobs of the mock model's injected defect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    /// Desaturation per unit of occluded fraction (capped at full grey).
    pub k_desat: f64,
    /// Pixel-noise amplitude per unit of occluded fraction.
    #[serde(default)]
    pub k_is_noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mock_size")]
    pub size: u32,
}

fn default_mock_size() -> u32 {
    64
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            k_desat: 0.5,
            k_is_noise: 0.0,
            seed: 0,
            size: default_mock_size(),
        }
    }
}

/// Hue centres of the mock's "species".
const MOCK_SPECIES: usize = 10;

/// Renders one image per training image: a coloured ellipse on a textured
/// background, then desaturated by `min(1, k_desat * occluded_fraction)`.
/// Output depends only on the manifest's counts and `cfg`.
pub fn mock_generate(
    manifest: &MutationManifest,
    cfg: &MockConfig,
    out_dir: &Path,
) -> Result<Vec<(String, PathBuf)>, ModelError> {
    fs::create_dir_all(out_dir)?;
    let fraction = manifest.occluded_fraction();
    let desat = (cfg.k_desat.max(0.0) * fraction).min(1.0);
    let noise = (cfg.k_is_noise.max(0.0) * fraction).min(1.0);
    (0..manifest.train_count)
        .into_par_iter()
        .map(|i| {
            let img = render_mock(cfg, i as u64, desat, noise);
            let id = format!("gen_{:05}", i + 1);
            let path = out_dir.join(format!("{id}.png"));
            img.save(&path)?;
            Ok((id, path))
        })
        .collect()
}

fn render_mock(cfg: &MockConfig, index: u64, desat: f64, noise: f64) -> RgbImage {
    let mut rng = seed::rng(seed::derive(seed::derive_str(cfg.seed, "mock"), index));
    let size = cfg.size.max(8);
    let species = rng.gen_range(0..MOCK_SPECIES);
    let body_hue = (species as f64 * 360.0 / MOCK_SPECIES as f64 + rng.gen_range(-6.0..6.0)).rem_euclid(360.0);
    let bg_hue = (body_hue + 180.0 + rng.gen_range(-40.0..40.0)).rem_euclid(360.0);

    let mut img = RgbImage::new(size, size);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let texture = (((x / 4) ^ (y / 4)) & 1) as f64 * 0.06;
        *px = Rgb(hsv_to_rgb(Hsv {
            h: bg_hue,
            s: 0.45 + rng.gen_range(-0.05..0.05),
            v: 0.6 + texture,
        }));
    }
    let s = f64::from(size);
    let (cx, cy) = (s * rng.gen_range(0.35..0.65), s * rng.gen_range(0.4..0.6));
    let (rx, ry) = (s * rng.gen_range(0.22..0.3), s * rng.gen_range(0.14..0.2));
    let body = hsv_to_rgb(Hsv {
        h: body_hue,
        s: 0.9,
        v: 0.85,
    });
    for (x, y, px) in img.enumerate_pixels_mut() {
        let dx = (f64::from(x) + 0.5 - cx) / rx;
        let dy = (f64::from(y) + 0.5 - cy) / ry;
        if dx * dx + dy * dy <= 1.0 {
            *px = Rgb(body);
        }
    }
    if noise > 0.0 {
        let amp = noise * 128.0;
        for px in img.pixels_mut() {
            for c in px.0.iter_mut() {
                *c = (f64::from(*c) + rng.gen_range(-amp..=amp)).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    if desat > 0.0 {
        img = desaturate(&img, desat);
    }
    img
}

/// Reads `{input_dir}/manifest.json` and renders the mock's samples into `output_dir`.
pub fn mock_generate_dir(input_dir: &Path, cfg: &MockConfig, output_dir: &Path) -> Result<Vec<(String, PathBuf)>, ModelError> {
    let path = input_dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(ModelError::MissingManifest(input_dir.to_path_buf()));
    }
    let manifest = MutationManifest::load(&path)?;
    mock_generate(&manifest, cfg, output_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_must_name_both_dirs_once() {
        assert!(ModelCommand::new("train {input_dir} {output_dir}", Duration::from_secs(5), None).is_ok());
        assert!(matches!(
            ModelCommand::new("train {input_dir}", Duration::from_secs(5), None),
            Err(ModelError::BadTemplate(OUTPUT_PLACEHOLDER))
        ));
        assert!(matches!(
            ModelCommand::new("a {input_dir} {input_dir} {output_dir}", Duration::from_secs(5), None),
            Err(ModelError::BadTemplate(INPUT_PLACEHOLDER))
        ));
    }

    #[test]
    fn quoting_survives_awkward_paths() {
        let cmd = ModelCommand::new("ls {input_dir} > {output_dir}", Duration::from_secs(1), None).unwrap();
        let r = cmd.render(Path::new("/tmp/it's here"), Path::new("/o"));
        assert_eq!(r, r"ls '/tmp/it'\''s here' > '/o'");
    }

    #[test]
    fn tail_keeps_last_lines() {
        assert_eq!(tail("a\nb\nc\n", 2), "b\nc");
        assert_eq!(tail("a", 5), "a");
    }
}
