use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use pnet::arch::{
    dilation_pair_covers, effective_kernel, flop_count, param_count, stage_shapes, DownsampleVariant, ModelConfig,
};
use pnet::data::sample::{load_image, save_mask_png};
use pnet::data::synth::{write_dataset, SynthSpec};
use pnet::data::{scan_dataset, split, Dataset, SampleManifest, Split};
use pnet::metrics::{emit_report, predict_mask, MetricsReport};
use pnet::train::{evaluate, evaluate_model, train_with, Checkpoint, EpochRow, EvalOptions, TrainConfig};

use crate::args::{
    AblateCmd, AnalyzeCmd, Command, DataArgs, EvalCmd, Grid, ModelArgs, PredictCmd, SplitArg, SynthCmd, TrainArgs,
    TrainCmd,
};

pub const DILATION_GRID: [(usize, usize); 4] = [(2, 5), (2, 6), (2, 7), (3, 8)];

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(c) => cmd_train(&c),
        Command::Eval(c) => cmd_eval(&c),
        Command::Analyze(c) => cmd_analyze(&c),
        Command::Ablate(c) => cmd_ablate(&c),
        Command::Predict(c) => cmd_predict(&c),
        Command::Synth(c) => cmd_synth(&c),
    }
}

fn scan_and_split(data: &DataArgs, name: &str, target: (usize, usize), seed: u64) -> Result<SampleManifest> {
    let scan = scan_dataset(
        name,
        &data.data_dir.join(&data.images_subdir),
        &data.data_dir.join(&data.masks_subdir),
        target,
    )?;
    if !scan.unmatched.is_empty() {
        eprintln!("warning: {} files have no image/mask partner and were skipped", scan.unmatched.len());
    }
    Ok(split(&scan.manifest, data.split_ratio, seed)?)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn train_config(train: &TrainArgs, model: ModelConfig, out: &Path) -> TrainConfig {
    TrainConfig {
        epochs: train.epochs,
        lr: train.lr,
        batch_size: train.batch_size,
        seed: train.seed,
        model,
        augment: train.augment_policy(),
        eval_every: train.eval_every,
        out_dir: Some(out.to_path_buf()),
    }
}

fn print_epoch(total: u64) -> impl FnMut(&EpochRow) {
    move |r: &EpochRow| {
        let mut line = format!("epoch {}/{total} loss {:.4}", r.epoch, r.mean_loss);
        if let (Some(i), Some(d)) = (r.test_iou, r.test_dice) {
            let _ = write!(line, " test_iou {i:.4} test_dice {d:.4}");
        }
        let _ = write!(line, " ({:.1}s)", r.wall_seconds);
        println!("{line}");
    }
}

/// Resolved settings of a train run in config-file form; feeding it back with
/// `--config` reproduces the run.
pub fn resolved_config(data: &DataArgs, train: &TrainArgs, model: &ModelArgs, out: &Path) -> String {
    let pair = |(a, b): (f64, f64)| format!("{a},{b}");
    let w = model.stage_widths;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("data-dir", data.data_dir.display().to_string());
    kv("images-subdir", data.images_subdir.clone());
    kv("masks-subdir", data.masks_subdir.clone());
    kv("dataset-name", data.name());
    kv("split-ratio", data.split_ratio.to_string());
    kv("size", train.size.to_string());
    kv("epochs", train.epochs.to_string());
    kv("lr", train.lr.to_string());
    kv("batch-size", train.batch_size.to_string());
    kv("seed", train.seed.to_string());
    kv("eval-every", train.eval_every.to_string());
    kv("augment", train.augment.to_string());
    kv("rotate90", train.rotate90.to_string());
    kv("mirror-prob", train.mirror_prob.to_string());
    kv("brightness", pair(train.brightness));
    kv("contrast", pair(train.contrast));
    kv("stage-widths", format!("{},{},{},{}", w[0], w[1], w[2], w[3]));
    kv("decoder-width", model.decoder_width.to_string());
    kv("num-classes", model.num_classes.to_string());
    kv("dilation", format!("{},{}", model.dilation.0, model.dilation.1));
    kv("downsample", model.downsample.to_string());
    kv("dropout", model.dropout.to_string());
    kv("skip-tap", model.skip_tap.as_str().to_string());
    kv("out", out.display().to_string());
    s
}

fn cmd_train(c: &TrainCmd) -> Result<()> {
    let model = c.model.config();
    model.validate()?;
    let name = c.data.name();
    let size = c.train.size;
    let manifest = scan_and_split(&c.data, &name, (size.width, size.height), c.train.seed)?;
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    write_file(&c.out.join("manifest.csv"), &manifest.to_csv()?)?;
    write_file(&c.out.join("config.ini"), &resolved_config(&c.data, &c.train, &c.model, &c.out))?;
    let mut dataset = Dataset::new(manifest)?;
    dataset.preload()?;
    println!(
        "dataset {name}: {} train / {} test images at {size}; {} parameters",
        dataset.manifest.count(Split::Train),
        dataset.manifest.count(Split::Test),
        param_count(&model)
    );
    let resume = match &c.resume {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let cfg = train_config(&c.train, model, &c.out);
    let outcome = train_with(&cfg, &dataset, resume.as_ref(), &mut print_epoch(cfg.epochs))?;
    println!("final checkpoint: {}", c.out.join("final.ckpt").display());
    if let (Some(d), Some(b)) = (outcome.best_dice, &outcome.best_checkpoint) {
        println!(
            "best checkpoint: {} (test dice {d:.4} at epoch {})",
            c.out.join("best.ckpt").display(),
            b.epoch
        );
    }
    Ok(())
}

fn cmd_eval(c: &EvalCmd) -> Result<()> {
    let ckpt = Checkpoint::load(&c.checkpoint)?;
    let (h, w) = ckpt.input_size;
    let name = c.data.dataset_name.clone().unwrap_or_else(|| ckpt.dataset.clone());
    let manifest = match &c.manifest {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SampleManifest::from_csv(&name, (w, h), ckpt.seed, &text)?
        }
        None => scan_and_split(&c.data, &name, (w, h), ckpt.seed)?,
    };
    let mut dataset = Dataset::new(manifest)?;
    dataset.preload()?;
    let opts = EvalOptions {
        split: match c.split {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        },
        averaging: c.averaging.into(),
        fps: (c.fps_iters > 0).then_some((c.fps_warmup, c.fps_iters)),
        dump_masks: c.dump_masks.clone(),
        method: c.method.clone(),
        ..EvalOptions::default()
    };
    let ev = evaluate(&ckpt, &dataset, &opts)?;
    let csv = emit_report(std::slice::from_ref(&ev.report));
    write_file(&c.out, &csv)?;
    print!("{csv}");
    println!(
        "{} images, {:.1}s, fps measured on {}",
        ev.report.images, ev.report.wall_seconds, ev.report.hardware
    );
    Ok(())
}

/// Text printed by `analyze`.
pub fn analyze_text(model: &ModelConfig, size: (usize, usize), reference: (usize, usize)) -> Result<String> {
    model.validate()?;
    let (w, h) = size;
    let trace = stage_shapes(model, h, w)?;
    let mut s = String::new();
    writeln!(s, "input 3x{h}x{w}")?;
    writeln!(s, "{:<22} {:<26} {:>16} {:>10} {:>14} {:>6}", "layer", "kind", "output", "params", "flops", "rf")?;
    for l in &trace.layers {
        let (c, oh, ow) = l.output;
        let rf = l.receptive_field.map(|r| r.to_string()).unwrap_or_else(|| "-".into());
        writeln!(
            s,
            "{:<22} {:<26} {:>16} {:>10} {:>14} {:>6}",
            l.name,
            l.kind.to_string(),
            format!("{c}x{oh}x{ow}"),
            l.params,
            l.flops,
            rf
        )?;
    }
    let params = param_count(model);
    let flops = flop_count(model, h, w)?;
    let ref_flops = flop_count(model, reference.1, reference.0)?;
    writeln!(s, "total params: {params} ({:.2}M)", params as f64 / 1e6)?;
    writeln!(s, "total flops: {flops} ({:.2}G)", flops as f64 / 1e9)?;
    writeln!(
        s,
        "flop ratio {w}x{h} / {}x{}: {:.4}",
        reference.0,
        reference.1,
        flops as f64 / ref_flops as f64
    )?;
    let (r1, r2) = model.dilation_pair;
    writeln!(
        s,
        "effective kernels: {} and {} (rates {r1}, {r2})",
        effective_kernel(3, r1),
        effective_kernel(3, r2)
    )?;
    writeln!(s, "covers: {}", dilation_pair_covers(r1, r2))?;
    Ok(s)
}

fn cmd_analyze(c: &AnalyzeCmd) -> Result<()> {
    let text = analyze_text(
        &c.model.config(),
        (c.size.width, c.size.height),
        (c.reference_size.width, c.reference_size.height),
    )?;
    print!("{text}");
    Ok(())
}

/// `(tag, model)` rows of an ablation grid, in a fixed order.
pub fn grid_configs(grid: Grid, base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    match grid {
        Grid::Dilation => DILATION_GRID
            .iter()
            .map(|&(r1, r2)| {
                let cfg = ModelConfig {
                    dilation_pair: (r1, r2),
                    ..base.clone()
                };
                (format!("PNet({r1}{r2})"), cfg)
            })
            .collect(),
        Grid::Downsample => DownsampleVariant::ALL
            .iter()
            .map(|&d| {
                let cfg = ModelConfig {
                    downsample: d,
                    ..base.clone()
                };
                (format!("PNet[{d}]"), cfg)
            })
            .collect(),
    }
}

fn cmd_ablate(c: &AblateCmd) -> Result<()> {
    let base = c.model.config();
    let name = c.data.name();
    let size = c.train.size;
    let manifest = scan_and_split(&c.data, &name, (size.width, size.height), c.train.seed)?;
    if manifest.count(Split::Test) == 0 {
        bail!("the test split is empty; ablation ranks configurations by test Dice");
    }
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    write_file(&c.out.join("manifest.csv"), &manifest.to_csv()?)?;
    let mut dataset = Dataset::new(manifest)?;
    dataset.preload()?;
    let mut reports: Vec<MetricsReport> = Vec::new();
    for (tag, model) in grid_configs(c.grid, &base) {
        println!("== {tag}");
        let dir = c.out.join(tag.replace(['(', ')', '[', ']'], "_").trim_end_matches('_'));
        let cfg = train_config(&c.train, model, &dir);
        let outcome = train_with(&cfg, &dataset, None, &mut print_epoch(cfg.epochs))?;
        let opts = EvalOptions {
            method: tag.clone(),
            fps: Some((2, 10)),
            ..EvalOptions::default()
        };
        let report = evaluate_model(&outcome.final_checkpoint.to_model()?, &dataset, &opts)?.report;
        println!("{tag}: test iou {:.4} dice {:.4}", report.iou, report.dice);
        reports.push(report);
    }
    reports.sort_by(|a, b| b.dice.total_cmp(&a.dice));
    let csv = emit_report(&reports);
    write_file(&c.out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_predict(c: &PredictCmd) -> Result<()> {
    let ckpt = Checkpoint::load(&c.checkpoint)?;
    let model = ckpt.to_model()?;
    let (h, w) = ckpt.input_size;
    let image = load_image(&c.image, (w, h))?;
    let mask = predict_mask(&model.forward(&image)?);
    save_mask_png(&mask, 0, &c.out)?;
    let fg = mask.data.iter().filter(|&&v| v != 0).count();
    println!("wrote {} ({w}x{h})", c.out.display());
    println!("foreground fraction: {:.4}", fg as f64 / mask.data.len() as f64);
    Ok(())
}

fn cmd_synth(c: &SynthCmd) -> Result<()> {
    let spec = SynthSpec {
        count: c.count,
        width: c.size.width,
        height: c.size.height,
        seed: c.seed,
        ..SynthSpec::default()
    };
    write_dataset(&spec, &c.out)?;
    println!("wrote {} image/mask pairs under {}", c.count, c.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilation_grid_rows() {
        let rows = grid_configs(Grid::Dilation, &ModelConfig::default());
        let tags: Vec<&str> = rows.iter().map(|(t, _)| t.as_str()).collect();
        assert_eq!(tags, ["PNet(25)", "PNet(26)", "PNet(27)", "PNet(38)"]);
        assert_eq!(rows[3].1.dilation_pair, (3, 8));
    }

    #[test]
    fn downsample_grid_rows() {
        let rows = grid_configs(Grid::Downsample, &ModelConfig::default());
        assert_eq!(rows.len(), 3);
        let variants: Vec<DownsampleVariant> = rows.iter().map(|(_, c)| c.downsample).collect();
        assert_eq!(variants, DownsampleVariant::ALL);
        assert!(rows.iter().all(|(t, _)| t.starts_with("PNet[")));
    }
}
