//! Online augmentation: 90-degree rotations, mirroring, brightness and contrast.

use rand::Rng;

use crate::data::sample::Sample;
use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub rotate90: bool,
    pub mirror_prob: f64,
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            rotate90: true,
            mirror_prob: 0.5,
            brightness: (0.8, 1.2),
            contrast: (0.8, 1.2),
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mirror_prob) {
            return Err(Error::config(format!("mirror probability {} outside [0, 1]", self.mirror_prob)));
        }
        for (name, (lo, hi)) in [("brightness", self.brightness), ("contrast", self.contrast)] {
            if !(lo <= 1.0 && 1.0 <= hi && lo >= 0.0) {
                return Err(Error::config(format!("{name} range [{lo}, {hi}] must contain 1.0 and be non-negative")));
            }
        }
        Ok(())
    }
}

/// One concrete draw from a policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    /// Counter-clockwise quarter turns.
    pub quarter_turns: u8,
    pub mirror: bool,
    pub brightness: f64,
    pub contrast: f64,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        quarter_turns: 0,
        mirror: false,
        brightness: 1.0,
        contrast: 1.0,
    };

    /// Non-square samples only take half turns so the shape is preserved.
    pub fn sample<R: Rng + ?Sized>(policy: &AugmentPolicy, square: bool, rng: &mut R) -> Self {
        let turns = if !policy.rotate90 {
            0
        } else if square {
            rng.random_range(0..4u8)
        } else {
            2 * rng.random_range(0..2u8)
        };
        let uniform = |rng: &mut R, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..=hi) };
        let mirror = rng.random::<f64>() < policy.mirror_prob;
        let brightness = uniform(rng, policy.brightness);
        let contrast = uniform(rng, policy.contrast);
        AugmentDraw {
            quarter_turns: turns,
            mirror,
            brightness,
            contrast,
        }
    }
}

/// Counter-clockwise quarter turn of an `h x w` row-major plane; returns a `w x h` plane.
fn rotate_plane<V: Copy>(src: &[V], h: usize, w: usize) -> Vec<V> {
    let mut out = Vec::with_capacity(src.len());
    for i in 0..w {
        for j in 0..h {
            out.push(src[j * w + (w - 1 - i)]);
        }
    }
    out
}

fn mirror_plane<V: Copy>(plane: &mut [V], w: usize) {
    for row in plane.chunks_mut(w) {
        row.reverse();
    }
}

/// Applies a quarter turn to every plane of a single-item tensor.
pub fn rotate_image(img: &Tensor4<f32>, turns: u8) -> Tensor4<f32> {
    let mut cur = img.clone();
    for _ in 0..turns % 4 {
        let s = cur.shape();
        let mut data = Vec::with_capacity(cur.len());
        for n in 0..s.n {
            for c in 0..s.c {
                data.extend(rotate_plane(cur.plane(n, c), s.h, s.w));
            }
        }
        cur = Tensor4::new([s.n, s.c, s.w, s.h], data).expect("rotation keeps element count");
    }
    cur
}

pub fn rotate_mask(mask: &LabelMap, turns: u8) -> LabelMap {
    let mut cur = mask.clone();
    for _ in 0..turns % 4 {
        let mut data = Vec::with_capacity(cur.len());
        for n in 0..cur.n {
            data.extend(rotate_plane(cur.item(n), cur.h, cur.w));
        }
        cur = LabelMap::new(cur.n, cur.w, cur.h, data).expect("rotation keeps element count");
    }
    cur
}

/// Applies a draw: geometry to image and mask alike, photometry to the image only.
pub fn apply(sample: &Sample, draw: &AugmentDraw) -> Sample {
    let mut image = rotate_image(&sample.image, draw.quarter_turns);
    let mut mask = rotate_mask(&sample.mask, draw.quarter_turns);
    if draw.mirror {
        let w = image.shape().w;
        image.data_mut().chunks_mut(w).for_each(|row| row.reverse());
        mirror_plane(&mut mask.data, w);
    }
    if draw.brightness != 1.0 || draw.contrast != 1.0 {
        let b = draw.brightness as f32;
        let data = image.data_mut();
        data.iter_mut().for_each(|v| *v *= b);
        let mean = (data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64) as f32;
        let k = draw.contrast as f32;
        data.iter_mut().for_each(|v| *v = ((*v - mean) * k + mean).clamp(0.0, 1.0));
    }
    Sample { image, mask }
}

/// Draws from `policy` and applies the result.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, policy: &AugmentPolicy, rng: &mut R) -> Sample {
    let draw = AugmentDraw::sample(policy, sample.height() == sample.width(), rng);
    apply(sample, &draw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(h: usize, w: usize) -> Sample {
        Sample {
            image: Tensor4::from_fn([1, 3, h, w], |_, c, y, x| ((c * 17 + y * 5 + x * 3) % 11) as f32 / 10.0),
            mask: LabelMap::new(1, h, w, (0..h * w).map(|i| (i % 3 == 0) as u8).collect()).unwrap(),
        }
    }

    #[test]
    fn identity_draw_is_exact() {
        let s = sample(4, 6);
        assert_eq!(apply(&s, &AugmentDraw::IDENTITY), s);
    }

    #[test]
    fn quarter_turn_moves_top_right_to_top_left() {
        let img = Tensor4::<f32>::new([1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = rotate_image(&img, 1);
        assert_eq!(r.shape().dims(), [1, 1, 3, 2]);
        assert_eq!(r.data(), &[3.0, 6.0, 2.0, 5.0, 1.0, 4.0]);
        assert_eq!(rotate_image(&img, 4), img);
    }

    #[test]
    fn half_turn_twice_is_identity() {
        let s = sample(5, 8);
        let d = AugmentDraw {
            quarter_turns: 2,
            ..AugmentDraw::IDENTITY
        };
        assert_eq!(apply(&apply(&s, &d), &d), s);
    }

    #[test]
    fn non_square_samples_keep_their_shape() {
        let s = sample(6, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = augment(&s, &AugmentPolicy::default(), &mut rng);
            assert_eq!(a.image.shape(), s.image.shape());
            assert_eq!((a.mask.h, a.mask.w), (6, 10));
            assert!(a.mask.data.iter().all(|&v| v <= 1));
            assert!(a.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn policy_validation() {
        assert!(AugmentPolicy::default().validate().is_ok());
        let bad = AugmentPolicy {
            brightness: (1.1, 1.3),
            ..AugmentPolicy::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentPolicy {
            mirror_prob: 1.5,
            ..AugmentPolicy::default()
        };
        assert!(bad.validate().is_err());
    }
}
