//! Epoch loop, model selection and split evaluation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::arch::{flop_count, param_count, ModelConfig, PNet};
use crate::data::{AugmentPolicy, Dataset, Split};
use crate::data::sample::save_mask_png;
use crate::error::{Error, Result};
use crate::metrics::{fps_benchmark, hardware_description, predict_mask, Averaging, MetricsReport, SegmentationScore};
use crate::optim::AdamState;
use crate::rng::{substream, StreamRng};
use crate::tensor::Tensor4;
use crate::train::checkpoint::Checkpoint;
use crate::train::log::{EpochRow, TrainLog};

pub const DEFAULT_EPOCHS: u64 = 200;
pub const DEFAULT_LR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub model: ModelConfig,
    /// `None` trains on the unaugmented samples.
    pub augment: Option<AugmentPolicy>,
    /// Test-split evaluation period in epochs; 0 disables it. The last epoch is always evaluated.
    pub eval_every: u64,
    /// When set, `final.ckpt`, `best.ckpt` and `train_log.csv` are written here.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            lr: DEFAULT_LR,
            batch_size: 2,
            seed: 0,
            model: ModelConfig::default(),
            augment: Some(AugmentPolicy::default()),
            eval_every: 1,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if let Some(p) = &self.augment {
            p.validate()?;
        }
        self.model.validate()
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: Checkpoint,
    /// Checkpoint at the highest test Dice; `None` when no evaluation ran.
    pub best_checkpoint: Option<Checkpoint>,
    pub best_dice: Option<f64>,
    pub log: TrainLog,
}

/// Trains from a fresh initialization.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    train_with(config, dataset, None, &mut |_| {})
}

/// Trains, optionally resuming from a checkpoint that carries optimizer state,
/// and reports every finished epoch to `progress`.
pub fn train_with(
    config: &TrainConfig,
    dataset: &Dataset,
    resume: Option<&Checkpoint>,
    progress: &mut dyn FnMut(&EpochRow),
) -> Result<TrainOutcome> {
    config.validate()?;
    let (w, h) = dataset.manifest.target;
    ModelConfig::check_resolution(h, w)?;
    let train_count = dataset.manifest.count(Split::Train);
    if train_count == 0 {
        return Err(Error::Dataset("the train split is empty".into()));
    }
    let test_count = dataset.manifest.count(Split::Test);

    let (mut model, mut adam, mut dropout_rng, start) = match resume {
        None => {
            let model = PNet::<f32>::new(config.model.clone(), &mut substream(config.seed, "init", 0))?;
            let adam = model.adam_state();
            (model, adam, substream(config.seed, "dropout", 0), 1)
        }
        Some(ckpt) => {
            let adam = ckpt
                .adam
                .as_ref()
                .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state and cannot resume training".into()))?
                .to_state();
            if ckpt.config != config.model {
                return Err(Error::config("resume checkpoint was trained with a different model configuration"));
            }
            if ckpt.seed != config.seed {
                return Err(Error::config(format!(
                    "resume checkpoint used seed {}, run requests seed {}",
                    ckpt.seed, config.seed
                )));
            }
            if ckpt.input_size != (h, w) {
                return Err(Error::config(format!(
                    "resume checkpoint was trained at {}x{}, dataset is {w}x{h}",
                    ckpt.input_size.1, ckpt.input_size.0
                )));
            }
            let mut rng = substream(config.seed, "dropout", 0);
            rng.set_word_pos(ckpt.dropout_word_pos);
            (ckpt.to_model()?, adam, rng, ckpt.epoch + 1)
        }
    };

    let snapshot = |model: &PNet<f32>, adam: &AdamState<f32>, rng: &StreamRng, epoch: u64| {
        let mut c = Checkpoint::from_model(model, (h, w), &dataset.manifest.dataset, Some(adam));
        c.epoch = epoch;
        c.seed = config.seed;
        c.dropout_word_pos = rng.get_word_pos();
        c
    };

    let started = Instant::now();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Checkpoint)> = None;
    let eval_opts = EvalOptions {
        split: Split::Test,
        ..EvalOptions::default()
    };
    for epoch in start..=config.epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let stream = dataset.batches(Split::Train, config.batch_size, Some(config.seed), epoch, config.augment.as_ref())?;
        for (b, batch) in stream.enumerate() {
            let batch = batch?;
            let loss = model.train_step(&batch.images, &batch.masks, &mut adam, config.lr, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch: epoch as usize,
                    batch: b + 1,
                    loss,
                });
            }
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let mean_loss = loss_sum / seen as f64;

        let due = config.eval_every > 0 && (epoch % config.eval_every == 0 || epoch == config.epochs);
        let (mut test_iou, mut test_dice) = (None, None);
        if due && test_count > 0 {
            let ev = evaluate_model(&model, dataset, &eval_opts)?;
            test_iou = Some(ev.report.iou);
            test_dice = Some(ev.report.dice);
            if best.as_ref().is_none_or(|(d, _)| ev.report.dice > *d) {
                let ckpt = snapshot(&model, &adam, &dropout_rng, epoch);
                if let Some(dir) = &config.out_dir {
                    ckpt.save(&dir.join("best.ckpt"))?;
                }
                best = Some((ev.report.dice, ckpt));
            }
        }
        let row = EpochRow {
            epoch,
            mean_loss,
            test_iou,
            test_dice,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        progress(&row);
        log.push(row)?;
        if let Some(dir) = &config.out_dir {
            write_text(&dir.join("train_log.csv"), &log.to_csv())?;
        }
    }

    let final_epoch = config.epochs.max(start.saturating_sub(1));
    let final_checkpoint = snapshot(&model, &adam, &dropout_rng, final_epoch);
    if let Some(dir) = &config.out_dir {
        final_checkpoint.save(&dir.join("final.ckpt"))?;
    }
    let (best_dice, best_checkpoint) = match best {
        Some((d, c)) => (Some(d), Some(c)),
        None => (None, None),
    };
    Ok(TrainOutcome {
        final_checkpoint,
        best_checkpoint,
        best_dice,
        log,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Error::data(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub split: Split,
    pub averaging: Averaging,
    /// `(warmup, iters)` for the throughput measurement; `None` reports 0 FPS.
    pub fps: Option<(usize, usize)>,
    /// Directory for `{stem}.png` predicted masks (0/255).
    pub dump_masks: Option<PathBuf>,
    pub method: String,
    /// Images per forward pass; does not affect the metrics.
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: Split::Test,
            averaging: Averaging::Micro,
            fps: None,
            dump_masks: None,
            method: "PNet".into(),
            batch_size: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub score: SegmentationScore,
}

/// Eval-mode metrics of a checkpoint; the dataset must be at the checkpoint's resolution.
pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset, opts: &EvalOptions) -> Result<Evaluation> {
    let (w, h) = dataset.manifest.target;
    if ckpt.input_size != (h, w) {
        return Err(Error::config(format!(
            "checkpoint was trained at {}x{} but the dataset is {w}x{h}",
            ckpt.input_size.1, ckpt.input_size.0
        )));
    }
    evaluate_model(&ckpt.to_model()?, dataset, opts)
}

/// Eval-mode forward over every image of a split, with micro or per-image averaging.
pub fn evaluate_model(model: &PNet<f32>, dataset: &Dataset, opts: &EvalOptions) -> Result<Evaluation> {
    let (w, h) = dataset.manifest.target;
    ModelConfig::check_resolution(h, w)?;
    if dataset.manifest.count(opts.split) == 0 {
        return Err(Error::Dataset(format!("the {} split has no entries", opts.split.as_str())));
    }
    if let Some(dir) = &opts.dump_masks {
        std::fs::create_dir_all(dir)?;
    }
    let started = Instant::now();
    let mut score = SegmentationScore::default();
    for batch in dataset.batches(opts.split, opts.batch_size.max(1), None, 0, None)? {
        let batch = batch?;
        let pred = predict_mask(&model.forward(&batch.images)?);
        score.add_batch(&pred, &batch.masks)?;
        if let Some(dir) = &opts.dump_masks {
            for (k, &i) in batch.indices.iter().enumerate() {
                let stem = dataset.manifest.entries[i].stem();
                save_mask_png(&pred, k, &dir.join(format!("{stem}.png")))?;
            }
        }
    }
    let fps = match opts.fps {
        Some((warmup, iters)) => {
            let input = Tensor4::<f32>::zeros([1, model.config().input_channels, h, w]);
            fps_benchmark(model, &input, warmup, iters)?
        }
        None => 0.0,
    };
    let report = MetricsReport {
        dataset: dataset.manifest.dataset.clone(),
        method: opts.method.clone(),
        iou: score.iou(opts.averaging),
        dice: score.dice(opts.averaging),
        params: param_count(model.config()),
        flops: flop_count(model.config(), h, w)?,
        fps,
        images: score.images(),
        hardware: hardware_description(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(Evaluation { report, score })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{dataset, SynthSpec};

    fn tiny_config(epochs: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            lr: 1e-3,
            batch_size: 2,
            model: ModelConfig {
                stage_widths: [4, 4, 8, 8],
                decoder_width: 4,
                ..ModelConfig::default()
            },
            eval_every: 0,
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> Dataset {
        dataset(&SynthSpec {
            count: 4,
            width: 32,
            height: 32,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_epochs_rejected() {
        let err = train(&tiny_config(0), &tiny_data()).unwrap_err();
        assert!(err.to_string().contains("epochs"));
    }

    #[test]
    fn resume_matches_continuous_run() {
        let data = tiny_data();
        let full = train(&tiny_config(3), &data).unwrap();
        let first = train(&tiny_config(2), &data).unwrap();
        let rest = train_with(&tiny_config(3), &data, Some(&first.final_checkpoint), &mut |_| {}).unwrap();
        assert_eq!(rest.log.rows.len(), 1);
        assert_eq!(rest.log.rows[0].epoch, 3);
        assert_eq!(rest.log.rows[0].mean_loss.to_bits(), full.log.rows[2].mean_loss.to_bits());
        assert_eq!(rest.final_checkpoint.params, full.final_checkpoint.params);
    }

    #[test]
    fn resume_requires_optimizer_state() {
        let data = tiny_data();
        let mut ckpt = train(&tiny_config(1), &data).unwrap().final_checkpoint;
        ckpt.adam = None;
        let err = train_with(&tiny_config(2), &data, Some(&ckpt), &mut |_| {}).unwrap_err();
        assert!(err.to_string().contains("optimizer"));
    }

    #[test]
    fn empty_split_and_resolution_mismatch_rejected() {
        let data = tiny_data();
        let ckpt = train(&tiny_config(1), &data).unwrap().final_checkpoint;
        let err = evaluate(&ckpt, &data, &EvalOptions::default()).unwrap_err();
        assert!(err.to_string().contains("test split"));
        let other = dataset(&SynthSpec {
            count: 2,
            width: 48,
            height: 32,
            ..SynthSpec::default()
        })
        .unwrap();
        let opts = EvalOptions {
            split: Split::Train,
            ..EvalOptions::default()
        };
        assert!(evaluate(&ckpt, &other, &opts).unwrap_err().to_string().contains("48x32"));
        let a = evaluate(&ckpt, &data, &opts).unwrap().report;
        let b = evaluate(&ckpt, &data, &opts).unwrap().report;
        assert_eq!((a.iou, a.dice), (b.iou, b.dice));
    }
}
