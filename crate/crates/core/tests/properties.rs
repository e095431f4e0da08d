//! Property tests over random inputs.

use pnet::arch::{flop_count, param_count, stage_shapes, DownsampleVariant, SkipTap};
use pnet::data::{augment, split, AugmentPolicy, ManifestEntry, Sample, SampleManifest, Split};
use pnet::metrics::{accumulate_confusion, ConfusionCounts};
use pnet::ops::{conv2d_forward, softmax_cross_entropy, ConvSpec};
use pnet::{LabelMap, ModelConfig, Tensor, Tensor64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn dice_iou_identity(tp in 0u64..1_000_000, fp in 0u64..1_000_000, fn_ in 0u64..1_000_000, tn in 0u64..1_000_000) {
        prop_assume!(tp + fp + fn_ > 0);
        let c = ConfusionCounts { tp, fp, fn_, tn };
        let (iou, dice) = (c.iou(), c.dice());
        prop_assert!((dice - 2.0 * iou / (1.0 + iou)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&iou) && iou <= dice && dice <= 1.0);
        let swapped = ConfusionCounts { tp, fp: fn_, fn_: fp, tn };
        prop_assert_eq!(swapped.iou(), iou);
        prop_assert_eq!(swapped.dice(), dice);
    }

    #[test]
    fn confusion_matches_pixel_scan(seed in any::<u64>(), density in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || (0..64 * 64).map(|_| rand::Rng::random_bool(&mut rng, density) as u8).collect::<Vec<u8>>();
        let pred = LabelMap::new(1, 64, 64, draw()).unwrap();
        let gt = LabelMap::new(1, 64, 64, draw()).unwrap();
        let mut c = ConfusionCounts::default();
        accumulate_confusion(&mut c, &pred, &gt).unwrap();
        let mut want = [0u64; 4];
        for y in 0..64 {
            for x in 0..64 {
                let (p, g) = (pred.at(0, y, x), gt.at(0, y, x));
                want[match (p, g) { (1, 1) => 0, (1, 0) => 1, (0, 1) => 2, _ => 3 }] += 1;
            }
        }
        prop_assert_eq!([c.tp, c.fp, c.fn_, c.tn], want);
    }

    #[test]
    fn cross_entropy_shift_invariant(vals in prop::collection::vec(-10.0f64..10.0, 2 * 3 * 4), shift in prop::collection::vec(-50.0f64..50.0, 12), labels in prop::collection::vec(0u8..2, 12)) {
        let logits = Tensor64::new([1, 2, 3, 4], vals).unwrap();
        let shifted = Tensor64::from_fn([1, 2, 3, 4], |_, c, h, w| logits.at(0, c, h, w) + shift[h * 4 + w]);
        let target = LabelMap::new(1, 3, 4, labels).unwrap();
        let (a, ga) = softmax_cross_entropy(&logits, &target).unwrap();
        let (b, gb) = softmax_cross_entropy(&shifted, &target).unwrap();
        prop_assert!((a - b).abs() < 1e-5);
        prop_assert!(ga.max_abs_diff(&gb) < 1e-5);
    }

    #[test]
    fn split_is_a_partition(n in 2usize..300, ratio in 0.05f64..0.95, seed in any::<u64>()) {
        let manifest = SampleManifest {
            dataset: "p".into(),
            target: (32, 32),
            seed: 0,
            entries: (0..n).map(|i| ManifestEntry {
                image: format!("i{i}.png").into(),
                mask: format!("m{i}.png").into(),
                split: Split::Unassigned,
            }).collect(),
        };
        let s = split(&manifest, ratio, seed).unwrap();
        let train = s.count(Split::Train);
        prop_assert_eq!(train, (ratio * n as f64).floor() as usize);
        prop_assert_eq!(train + s.count(Split::Test), n);
        prop_assert_eq!(s.count(Split::Unassigned), 0);
        for (a, b) in s.entries.iter().zip(&manifest.entries) {
            prop_assert_eq!(&a.image, &b.image);
        }
        prop_assert_eq!(split(&manifest, ratio, seed).unwrap(), s);
    }

    #[test]
    fn augmentation_keeps_masks_binary_and_shapes(seed in any::<u64>(), square in any::<bool>()) {
        let (h, w) = if square { (16, 16) } else { (16, 32) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = Sample {
            image: Tensor::from_fn([1, 3, h, w], |_, c, y, x| ((c + y * 3 + x * 7) % 11) as f32 / 10.0),
            mask: LabelMap::new(1, h, w, (0..h * w).map(|i| (i % 3 == 0) as u8).collect()).unwrap(),
        };
        let fg: usize = sample.mask.data.iter().map(|&v| v as usize).sum();
        let out = augment(&sample, &AugmentPolicy::default(), &mut rng);
        prop_assert_eq!(out.image.shape(), sample.image.shape());
        prop_assert!(out.mask.data.iter().all(|&v| v <= 1));
        prop_assert_eq!(out.mask.data.iter().map(|&v| v as usize).sum::<usize>(), fg);
        prop_assert!(out.image.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn same_size_dilated_conv(h in 1usize..20, w in 1usize..20, d in 1usize..8) {
        let x = Tensor::full([1, 1, h, w], 1.0);
        let k = Tensor::full([1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &k, &[0.0], &ConvSpec::same3x3(d)).unwrap();
        prop_assert_eq!((y.shape().h, y.shape().w), (h, w));
    }

    #[test]
    fn flops_linear_in_pixels_and_params_resolution_free(a in 1usize..12, b in 1usize..12, ds in 0usize..3, before in any::<bool>()) {
        let cfg = ModelConfig {
            downsample: DownsampleVariant::ALL[ds],
            skip_tap: if before { SkipTap::BeforePatch } else { SkipTap::AfterPatch },
            ..ModelConfig::default()
        };
        let unit = flop_count(&cfg, 16, 16).unwrap();
        prop_assert_eq!(flop_count(&cfg, 16 * a, 16 * b).unwrap(), unit * (a * b) as u64);
        let trace = stage_shapes(&cfg, 16 * a, 16 * b).unwrap();
        prop_assert_eq!(trace.total_params(), param_count(&cfg));
        prop_assert_eq!(trace.total_flops(), unit * (a * b) as u64);
    }
}
