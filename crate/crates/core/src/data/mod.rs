//! Dataset ingestion: layout scanning, deterministic splits, preprocessing
//! into in-memory samples, and the synthetic horizon generator.
//!
//! Two on-disk layouts are recognized besides the synthetic one:
//!
//! * `skyfinder`: `<root>/<site>/images/*.png|jpg` with one shared
//!   `<root>/<site>/mask.png` per site (each webcam is fixed, so one mask
//!   covers every frame of a site).
//! * `ch1` / `synthetic`: flat `<root>/images/*` and `<root>/masks/*`
//!   matched by file stem; `synthetic` additionally carries
//!   `<root>/skylines/*.csv` ground-truth vectors.

pub mod preprocess;
pub mod synth;

pub use preprocess::{Letterbox, PreprocessSpec};
pub use synth::{generate_synthetic, SynthConfig};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skyline::SkylineVector;

/// On-disk dataset layout tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Skyfinder,
    Ch1,
    Synthetic,
}

impl Layout {
    pub fn as_str(self) -> &'static str {
        match self {
            Layout::Skyfinder => "skyfinder",
            Layout::Ch1 => "ch1",
            Layout::Synthetic => "synthetic",
        }
    }

    fn expected(self) -> &'static str {
        match self {
            Layout::Skyfinder => "<root>/<site>/images/*.png|jpg plus <root>/<site>/mask.png",
            Layout::Ch1 => "<root>/images/* plus <root>/masks/* matched by stem",
            Layout::Synthetic => {
                "<root>/images/* plus <root>/masks/* (and optional <root>/skylines/*.csv)"
            }
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skyfinder" => Ok(Layout::Skyfinder),
            "ch1" => Ok(Layout::Ch1),
            "synthetic" => Ok(Layout::Synthetic),
            other => Err(Error::Config(format!(
                "unknown dataset layout {other:?}; expected skyfinder, ch1 or synthetic"
            ))),
        }
    }
}

/// One validated image/mask pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    /// Camera / site identifier, or "synthetic".
    pub site: String,
    pub width: u32,
    pub height: u32,
    /// Ground-truth skyline CSV, when the layout provides one.
    pub skyline: Option<PathBuf>,
}

/// All valid pairs found under a dataset root.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub layout: Layout,
}

/// A pair that failed validation, kept for the rejects report.
#[derive(Debug, Clone)]
pub struct Reject {
    pub image: PathBuf,
    pub reason: String,
}

/// Scan outcome: the manifest plus everything that was rejected.
#[derive(Debug, Clone)]
pub struct ScanResult {
    pub manifest: DatasetManifest,
    pub rejects: Vec<Reject>,
}

const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        out.push(entry.map_err(|e| Error::io(path, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn probe_dims(path: &Path) -> std::result::Result<(u32, u32), String> {
    image::image_dimensions(path).map_err(|e| format!("cannot decode {}: {e}", path.display()))
}

fn validate_pair(
    image: PathBuf,
    mask: PathBuf,
    site: &str,
    skyline: Option<PathBuf>,
    rejects: &mut Vec<Reject>,
) -> Option<ManifestEntry> {
    if !mask.exists() {
        rejects.push(Reject {
            image,
            reason: format!("mask {} missing", mask.display()),
        });
        return None;
    }
    let (iw, ih) = match probe_dims(&image) {
        Ok(d) => d,
        Err(reason) => {
            rejects.push(Reject { image, reason });
            return None;
        }
    };
    let (mw, mh) = match probe_dims(&mask) {
        Ok(d) => d,
        Err(reason) => {
            rejects.push(Reject { image, reason });
            return None;
        }
    };
    if (iw, ih) != (mw, mh) {
        rejects.push(Reject {
            image,
            reason: format!("mask size {mw}x{mh} differs from image size {iw}x{ih}"),
        });
        return None;
    }
    Some(ManifestEntry {
        image,
        mask,
        site: site.to_string(),
        width: iw,
        height: ih,
        skyline,
    })
}

/// Walks a dataset root and validates every image/mask pair. Invalid pairs
/// land in the rejects report instead of being silently dropped; an entirely
/// empty result is an error naming the expected layout.
pub fn scan_dataset(root: &Path, layout: Layout) -> Result<ScanResult> {
    if !root.is_dir() {
        return Err(Error::Data(format!(
            "dataset root {} does not exist; expected layout: {}",
            root.display(),
            layout.expected()
        )));
    }
    let mut entries = Vec::new();
    let mut rejects = Vec::new();
    match layout {
        Layout::Skyfinder => {
            for site_dir in sorted_dir(root)? {
                if !site_dir.is_dir() {
                    continue;
                }
                let site = site_dir
                    .file_name()
                    .and_then(|n| n.to_str())
                    .unwrap_or("?")
                    .to_string();
                let images_dir = site_dir.join("images");
                let mask = site_dir.join("mask.png");
                if !images_dir.is_dir() {
                    continue;
                }
                for img in sorted_dir(&images_dir)? {
                    if !is_image(&img) {
                        continue;
                    }
                    if let Some(e) =
                        validate_pair(img, mask.clone(), &site, None, &mut rejects)
                    {
                        entries.push(e);
                    }
                }
            }
        }
        Layout::Ch1 | Layout::Synthetic => {
            let images_dir = root.join("images");
            let masks_dir = root.join("masks");
            let skylines_dir = root.join("skylines");
            if !images_dir.is_dir() {
                return Err(Error::Data(format!(
                    "{} has no images/ directory; expected layout: {}",
                    root.display(),
                    layout.expected()
                )));
            }
            for img in sorted_dir(&images_dir)? {
                if !is_image(&img) {
                    continue;
                }
                let stem = img
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                let mask = masks_dir.join(format!("{stem}.png"));
                let skyline = (layout == Layout::Synthetic)
                    .then(|| skylines_dir.join(format!("{stem}.csv")))
                    .filter(|p| p.exists());
                if let Some(e) =
                    validate_pair(img, mask, layout.as_str(), skyline, &mut rejects)
                {
                    entries.push(e);
                }
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Data(format!(
            "no valid image/mask pairs under {} ({} rejects); expected layout: {}",
            root.display(),
            rejects.len(),
            layout.expected()
        )));
    }
    Ok(ScanResult {
        manifest: DatasetManifest { entries, layout },
        rejects,
    })
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// CSV serialization: `image_path,mask_path,site_id,width,height`.
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["image_path", "mask_path", "site_id", "width", "height"])
            .expect("in-memory write");
        for e in &self.entries {
            wtr.write_record([
                e.image.display().to_string(),
                e.mask.display().to_string(),
                e.site.clone(),
                e.width.to_string(),
                e.height.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf8")
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Deterministic, disjoint, exhaustive split into (train, test).
pub fn split_manifest(
    manifest: &DatasetManifest,
    fractions: (f64, f64),
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    let (f_train, f_test) = fractions;
    if !(f_train > 0.0 && f_test > 0.0) || (f_train + f_test - 1.0).abs() > 1e-6 {
        return Err(Error::Data(format!(
            "split fractions ({f_train}, {f_test}) must be positive and sum to 1"
        )));
    }
    let n = manifest.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * f_train).round() as usize).clamp(0, n);
    if n_train == 0 || n_train == n {
        return Err(Error::Data(format!(
            "split of {n} entries with fractions ({f_train}, {f_test}) leaves one side empty"
        )));
    }
    let pick = |ids: &[usize]| DatasetManifest {
        entries: ids.iter().map(|&i| manifest.entries[i].clone()).collect(),
        layout: manifest.layout,
    };
    Ok((pick(&idx[..n_train]), pick(&idx[n_train..])))
}

/// A fully materialized, preprocessed sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    /// Normalized image, `(3, H, W)`.
    pub image: Array3<f32>,
    /// Binary mask, `(H, W)` with values 0/1.
    pub mask: Array2<u8>,
    /// Ground-truth skyline at original resolution, when provided.
    pub skyline: Option<SkylineVector>,
    pub letterbox: Letterbox,
}

/// An in-memory dataset of uniformly sized samples.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Horizontal flip probability applied during training batches.
    pub flip_prob: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Spatial size shared by all samples.
    pub fn sample_size(&self) -> Result<(usize, usize)> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::Data("dataset is empty".into()))?;
        let dims = first.mask.dim();
        for s in &self.samples {
            if s.mask.dim() != dims || s.image.dim() != (3, dims.0, dims.1) {
                return Err(Error::Data(format!(
                    "sample {} size differs from the rest of the dataset",
                    s.name
                )));
            }
        }
        Ok(dims)
    }
}

/// Decodes, letterboxes and normalizes one manifest entry. In training mode
/// a seeded coin decides a horizontal flip applied to image and mask alike.
pub fn load_and_preprocess(
    entry: &ManifestEntry,
    spec: &PreprocessSpec,
    train_mode: bool,
    seed: u64,
) -> Result<Sample> {
    spec.validate()?;
    let rgb = preprocess::load_rgb(&entry.image)?;
    let gray = preprocess::load_gray(&entry.mask)?;
    let mut image = preprocess::rgb_to_array(&rgb);
    let mut mask = preprocess::gray_to_mask(&gray);
    if mask.dim() != (image.dim().1, image.dim().2) {
        return Err(Error::Data(format!(
            "mask {} does not match image size",
            entry.mask.display()
        )));
    }

    let lb = Letterbox::plan((image.dim().1, image.dim().2), spec.target);
    image = preprocess::letterbox_image(&image, &lb, spec.fill);
    mask = preprocess::letterbox_mask(&mask, &lb);
    debug_assert!(mask.iter().all(|&v| v <= 1));
    preprocess::normalize_inplace(&mut image, spec.mean, spec.scale);

    if train_mode && spec.flip_prob > 0.0 {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if rng.gen::<f64>() < spec.flip_prob {
            preprocess::flip_horizontal(&mut image, &mut mask);
        }
    }

    let skyline = match &entry.skyline {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Some(SkylineVector::from_csv_record(text.lines().next().ok_or_else(
                || Error::Data(format!("empty skyline file {}", path.display())),
            )?)?)
        }
        None => None,
    };
    let name = entry
        .image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("sample")
        .to_string();
    Ok(Sample {
        name,
        image,
        mask,
        skyline,
        letterbox: lb,
    })
}

/// Materializes a manifest. Flip augmentation is not baked into the samples;
/// the training loop flips per batch using `flip_prob`.
pub fn load_dataset(
    manifest: &DatasetManifest,
    spec: &PreprocessSpec,
    train_mode: bool,
) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(manifest.len());
    for entry in &manifest.entries {
        samples.push(load_and_preprocess(entry, spec, false, 0)?);
    }
    let dataset = Dataset {
        samples,
        flip_prob: if train_mode { spec.flip_prob } else { 0.0 },
    };
    dataset.sample_size()?;
    Ok(dataset)
}
