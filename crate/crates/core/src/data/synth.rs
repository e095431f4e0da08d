//! Synthetic "disks on noise" segmentation data for smoke runs and tests.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::Rng;

use crate::data::batch::Dataset;
use crate::data::manifest::{ManifestEntry, SampleManifest, Split};
use crate::data::sample::{binarize, rgb_to_tensor, Sample};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub max_disks: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 10,
            width: 96,
            height: 96,
            max_disks: 2,
            seed: 0,
        }
    }
}

/// Image/mask pair number `index` of the synthetic set.
pub fn render(spec: &SynthSpec, index: usize) -> (RgbImage, GrayImage) {
    let mut rng = substream(spec.seed, "synth", index as u64);
    let (w, h) = (spec.width as u32, spec.height as u32);
    let short = spec.width.min(spec.height) as f64;
    let disks: Vec<(f64, f64, f64)> = (0..rng.random_range(1..=spec.max_disks.max(1)))
        .map(|_| {
            let r = rng.random_range(short / 8.0..short / 4.0);
            let cx = rng.random_range(r..spec.width as f64 - r);
            let cy = rng.random_range(r..spec.height as f64 - r);
            (cx, cy, r)
        })
        .collect();
    let mut img = RgbImage::new(w, h);
    let mut mask = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = disks.iter().any(|&(cx, cy, r)| (px - cx).powi(2) + (py - cy).powi(2) <= r * r);
            let base = if inside { [0.8, 0.35, 0.3] } else { [0.3, 0.3, 0.35] };
            let mut px_rgb = [0u8; 3];
            for (c, b) in base.iter().enumerate() {
                let v: f64 = b + rng.random_range(-0.15..0.15);
                px_rgb[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            img.put_pixel(x, y, Rgb(px_rgb));
            mask.put_pixel(x, y, Luma([if inside { 255 } else { 0 }]));
        }
    }
    (img, mask)
}

/// In-memory samples, identical to what loading the written files yields.
pub fn samples(spec: &SynthSpec) -> Vec<Sample> {
    (0..spec.count)
        .map(|i| {
            let (img, mask) = render(spec, i);
            Sample {
                image: rgb_to_tensor(&img),
                mask: binarize(&mask),
            }
        })
        .collect()
}

/// In-memory dataset of every synthetic sample, all assigned to the train split.
pub fn dataset(spec: &SynthSpec) -> Result<Dataset> {
    let manifest = SampleManifest {
        dataset: "synthetic".into(),
        target: (spec.width, spec.height),
        seed: spec.seed,
        entries: (0..spec.count)
            .map(|i| ManifestEntry {
                image: format!("images/{i:04}.png").into(),
                mask: format!("masks/{i:04}.png").into(),
                split: Split::Train,
            })
            .collect(),
    };
    Dataset::from_samples(manifest, samples(spec))
}

/// Writes `root/images/NNNN.png` and `root/masks/NNNN.png`.
pub fn write_dataset(spec: &SynthSpec, root: &Path) -> Result<()> {
    let images = root.join("images");
    let masks = root.join("masks");
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&masks)?;
    for i in 0..spec.count {
        let (img, mask) = render(spec, i);
        let name = format!("{i:04}.png");
        img.save(images.join(&name)).map_err(|e| Error::data(images.join(&name), e))?;
        mask.save(masks.join(&name)).map_err(|e| Error::data(masks.join(&name), e))?;
    }
    Ok(())
}
