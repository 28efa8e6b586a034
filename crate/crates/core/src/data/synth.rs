//! Deterministic synthetic horizon dataset generator.
//!
//! Each sample is a smooth random horizon curve (a sum of low-frequency
//! sinusoids with seeded amplitudes, frequencies and phases) separating a
//! vertical-gradient sky from a speckled ground texture, with per-sample
//! lighting jitter and per-pixel noise. The exact binary mask and the
//! analytic ground-truth skyline vector are emitted alongside each image,
//! so the generator doubles as an oracle for the extraction pipeline.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Layout, ManifestEntry};
use crate::error::{Error, Result};
use crate::skyline::SkylineVector;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    /// (height, width) of every generated image.
    pub size: (usize, usize),
    /// Horizon roughness: peak sinusoid amplitude as a fraction of height.
    pub amplitude: f64,
    /// Horizon roughness: maximum sinusoid frequency in cycles per width.
    pub frequency: f64,
    /// Per-sample multiplicative lighting jitter range, +/- this fraction.
    pub lighting_jitter: f64,
    /// Per-pixel additive noise level.
    pub noise: f64,
    /// Ground speckle strength.
    pub speckle: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 8,
            size: (64, 64),
            amplitude: 0.12,
            frequency: 3.0,
            lighting_jitter: 0.15,
            noise: 0.02,
            speckle: 0.12,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("synthetic count must be >= 1".into()));
        }
        let (h, w) = self.size;
        if h < 32 || w < 32 {
            return Err(Error::Config(format!(
                "synthetic size {h}x{w} must be at least 32x32"
            )));
        }
        if self.amplitude < 0.0 || self.frequency < 0.0 {
            return Err(Error::Config("roughness parameters must be >= 0".into()));
        }
        Ok(())
    }
}

/// One generated sample before encoding.
pub struct SynthSample {
    pub image: Array3<f32>,
    pub mask: Array2<u8>,
    pub skyline: SkylineVector,
}

const SKY_TOP: [f64; 3] = [0.32, 0.55, 0.88];
const SKY_HORIZON: [f64; 3] = [0.78, 0.84, 0.92];
const GROUND_BASE: [f64; 3] = [0.28, 0.28, 0.22];
const HORIZON_COMPONENTS: usize = 4;

/// Renders sample `index` of the configured dataset. Fully determined by
/// `(cfg.seed, index)`.
pub fn synth_sample(cfg: &SynthConfig, index: u64) -> SynthSample {
    let (h, w) = cfg.size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index + 1);

    // Horizon curve y(x) in pixel rows, clamped so every column keeps at
    // least one sky row above and one ground row at the bottom.
    let base = rng.gen_range(0.35..0.65) * h as f64;
    let components: Vec<(f64, f64, f64)> = (0..HORIZON_COMPONENTS)
        .map(|k| {
            let amp = cfg.amplitude * h as f64 * rng.gen_range(0.3..1.0) / (k + 1) as f64;
            let freq = rng.gen_range(0.5..cfg.frequency.max(0.5 + 1e-9));
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (amp, freq, phase)
        })
        .collect();
    let horizon = |x: usize| -> f64 {
        let t = x as f64 / w as f64;
        let mut y = base;
        for &(a, f, p) in &components {
            y += a * (std::f64::consts::TAU * f * t + p).sin();
        }
        y.clamp(1.0, (h - 1) as f64)
    };

    let sky_jitter: [f64; 3] =
        std::array::from_fn(|_| 1.0 + rng.gen_range(-cfg.lighting_jitter..=cfg.lighting_jitter));
    let ground_jitter: [f64; 3] =
        std::array::from_fn(|_| 1.0 + rng.gen_range(-cfg.lighting_jitter..=cfg.lighting_jitter));

    let mut mask = Array2::<u8>::zeros((h, w));
    let mut rows = Vec::with_capacity(w);
    let mut ys = Vec::with_capacity(w);
    for x in 0..w {
        let y = horizon(x);
        ys.push(y);
        // First non-sky row: smallest integer r with r >= y.
        rows.push(Some(y.ceil().min((h - 1) as f64) as u32));
        for r in 0..h {
            if (r as f64) < y {
                mask[[r, x]] = 1;
            }
        }
    }
    let skyline = SkylineVector::from_rows(rows, h as u32).expect("valid generated skyline");

    let mut image = Array3::<f32>::zeros((3, h, w));
    for x in 0..w {
        let y_h = ys[x];
        for r in 0..h {
            let sky = (r as f64) < y_h;
            for c in 0..3 {
                let mut v = if sky {
                    let t = (r as f64 / y_h.max(1.0)).clamp(0.0, 1.0);
                    (SKY_TOP[c] + (SKY_HORIZON[c] - SKY_TOP[c]) * t) * sky_jitter[c]
                } else {
                    let depth = ((r as f64 - y_h) / h as f64).clamp(0.0, 1.0);
                    let speck = rng.gen_range(-1.0..1.0) * cfg.speckle;
                    (GROUND_BASE[c] * (1.0 - 0.3 * depth) + speck) * ground_jitter[c]
                };
                v += rng.gen_range(-1.0..1.0) * cfg.noise;
                image[[c, r, x]] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    SynthSample {
        image,
        mask,
        skyline,
    }
}

/// Materializes a synthetic dataset under `root` and returns its manifest.
/// Re-running with the same config writes bitwise-identical files.
pub fn generate_synthetic(cfg: &SynthConfig, root: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let images = root.join("images");
    let masks = root.join("masks");
    let skylines = root.join("skylines");
    for dir in [&images, &masks, &skylines] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut entries = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let sample = synth_sample(cfg, i as u64);
        let stem = format!("img_{i:04}");
        let image_path = images.join(format!("{stem}.png"));
        let mask_path = masks.join(format!("{stem}.png"));
        let skyline_path = skylines.join(format!("{stem}.csv"));

        super::preprocess::array_to_rgb(&sample.image)
            .save(&image_path)
            .map_err(|e| Error::image(&image_path, e))?;
        super::preprocess::mask_to_gray(&sample.mask)
            .save(&mask_path)
            .map_err(|e| Error::image(&mask_path, e))?;
        std::fs::write(&skyline_path, sample.skyline.to_csv_record() + "\n")
            .map_err(|e| Error::io(&skyline_path, e))?;

        entries.push(ManifestEntry {
            image: image_path,
            mask: mask_path,
            site: "synthetic".to_string(),
            width: cfg.size.1 as u32,
            height: cfg.size.0 as u32,
            skyline: Some(skyline_path),
        });
    }
    let manifest = DatasetManifest {
        entries,
        layout: Layout::Synthetic,
    };
    manifest.save_csv(&root.join("manifest.csv"))?;
    let cfg_path: PathBuf = root.join("synth_config.toml");
    std::fs::write(
        &cfg_path,
        toml::to_string_pretty(cfg).expect("config serializes"),
    )
    .map_err(|e| Error::io(&cfg_path, e))?;
    Ok(manifest)
}
