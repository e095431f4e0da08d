//! Decoding, resizing and binarizing one image/mask pair.

use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, GrayImage, ImageReader, RgbImage};

use crate::data::manifest::ManifestEntry;
use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor4};

/// Mask pixels strictly above this value are foreground.
pub const MASK_THRESHOLD: u8 = 127;

/// One training example: `1 x 3 x H x W` image in [0, 1] and an `H x W` binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor4<f32>,
    pub mask: LabelMap,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.mask.h
    }

    pub fn width(&self) -> usize {
        self.mask.w
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| Error::data(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::data(path, e))?
        .decode()
        .map_err(|e| Error::data(path, format!("cannot decode image: {e}")))
}

/// RGB image as a `1 x 3 x H x W` tensor scaled to [0, 1].
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor4<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor4::from_fn([1, 3, h, w], |_, c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0)
}

/// Binarizes an 8-bit grayscale mask at [`MASK_THRESHOLD`].
pub fn binarize(gray: &GrayImage) -> LabelMap {
    let data = gray.as_raw().iter().map(|&v| (v > MASK_THRESHOLD) as u8).collect();
    LabelMap {
        n: 1,
        h: gray.height() as usize,
        w: gray.width() as usize,
        data,
    }
}

/// Loads and resizes an image to `target = (width, height)`, bilinear.
pub fn load_image(path: &Path, target: (usize, usize)) -> Result<Tensor4<f32>> {
    let img = open(path)?.to_rgb8();
    let img = if (img.width() as usize, img.height() as usize) == target {
        img
    } else {
        image::imageops::resize(&img, target.0 as u32, target.1 as u32, FilterType::Triangle)
    };
    Ok(rgb_to_tensor(&img))
}

/// Loads a mask, nearest-neighbor resizes it, then binarizes.
pub fn load_mask(path: &Path, target: (usize, usize)) -> Result<LabelMap> {
    let gray = open(path)?.to_luma8();
    let gray = if (gray.width() as usize, gray.height() as usize) == target {
        gray
    } else {
        image::imageops::resize(&gray, target.0 as u32, target.1 as u32, FilterType::Nearest)
    };
    Ok(binarize(&gray))
}

pub fn load_sample(entry: &ManifestEntry, target: (usize, usize)) -> Result<Sample> {
    Ok(Sample {
        image: load_image(&entry.image, target)?,
        mask: load_mask(&entry.mask, target)?,
    })
}

/// Writes a label map as an 8-bit PNG with foreground 255.
pub fn save_mask_png(mask: &LabelMap, index: usize, path: &Path) -> Result<()> {
    let data: Vec<u8> = mask.item(index).iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(mask.w as u32, mask.h as u32, data).expect("mask buffer size");
    img.save(path).map_err(|e| Error::data(path, e))
}
