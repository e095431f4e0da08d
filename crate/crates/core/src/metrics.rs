//! Foreground IoU / Dice, throughput, and CSV result rows.

use std::time::{Duration, Instant};

use crate::arch::PNet;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{LabelMap, Tensor4};

/// Per-pixel argmax over channels; ties go to the lower class index.
pub fn predict_mask<T: Scalar>(logits: &Tensor4<T>) -> LabelMap {
    let s = logits.shape();
    let mut data = Vec::with_capacity(s.n * s.plane());
    for n in 0..s.n {
        for p in 0..s.plane() {
            let mut best = 0usize;
            let mut best_v = logits.data()[n * s.item() + p];
            for c in 1..s.c {
                let v = logits.data()[(n * s.c + c) * s.plane() + p];
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            data.push(best as u8);
        }
    }
    LabelMap { n: s.n, h: s.h, w: s.w, data }
}

/// Foreground-class pixel counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `tp / (tp + fp + fn)`, or 1 when nothing is foreground in either mask.
    pub fn iou(&self) -> f64 {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    /// `2tp / (2tp + fp + fn)`, or 1 when nothing is foreground in either mask.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// Counts over flat binary masks (any nonzero value is foreground).
    pub fn from_masks(pred: &[u8], gt: &[u8]) -> Result<Self, TensorError> {
        if pred.len() != gt.len() {
            return Err(TensorError::DimMismatch {
                op: "accumulate_confusion",
                dim: "pixels",
                expected: gt.len(),
                got: pred.len(),
            });
        }
        let mut c = ConfusionCounts::default();
        for (&p, &g) in pred.iter().zip(gt) {
            match (p != 0, g != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }
}

/// Adds the counts of `pred` vs `gt` to `acc`.
pub fn accumulate_confusion(acc: &mut ConfusionCounts, pred: &LabelMap, gt: &LabelMap) -> Result<(), TensorError> {
    for (dim, e, g) in [("batch", gt.n, pred.n), ("height", gt.h, pred.h), ("width", gt.w, pred.w)] {
        if e != g {
            return Err(TensorError::DimMismatch {
                op: "accumulate_confusion",
                dim,
                expected: e,
                got: g,
            });
        }
    }
    acc.merge(&ConfusionCounts::from_masks(&pred.data, &gt.data)?);
    Ok(())
}

pub fn iou(c: &ConfusionCounts) -> f64 {
    c.iou()
}

pub fn dice(c: &ConfusionCounts) -> f64 {
    c.dice()
}

/// How per-image counts are turned into a split-level score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Averaging {
    /// Sum counts over the split, then compute the metric once.
    #[default]
    Micro,
    /// Mean of per-image metrics.
    PerImage,
}

/// Split-level IoU/Dice accumulator supporting both averaging modes.
#[derive(Clone, Debug, Default)]
pub struct SegmentationScore {
    pub total: ConfusionCounts,
    per_image_iou: Vec<f64>,
    per_image_dice: Vec<f64>,
}

impl SegmentationScore {
    pub fn add_image(&mut self, pred: &[u8], gt: &[u8]) -> Result<(), TensorError> {
        let c = ConfusionCounts::from_masks(pred, gt)?;
        self.total.merge(&c);
        self.per_image_iou.push(c.iou());
        self.per_image_dice.push(c.dice());
        Ok(())
    }

    /// Adds every item of a batch.
    pub fn add_batch(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<(), TensorError> {
        let mut scratch = ConfusionCounts::default();
        accumulate_confusion(&mut scratch, pred, gt)?;
        for n in 0..gt.n {
            self.add_image(pred.item(n), gt.item(n))?;
        }
        Ok(())
    }

    pub fn images(&self) -> usize {
        self.per_image_iou.len()
    }

    pub fn iou(&self, mode: Averaging) -> f64 {
        match mode {
            Averaging::Micro => self.total.iou(),
            Averaging::PerImage => mean(&self.per_image_iou),
        }
    }

    pub fn dice(&self, mode: Averaging) -> f64 {
        match mode {
            Averaging::Micro => self.total.dice(),
            Averaging::PerImage => mean(&self.per_image_dice),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        1.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Frames per second from an iteration count and elapsed time.
pub fn fps_from(iters: usize, elapsed: Duration) -> f64 {
    iters as f64 / elapsed.as_secs_f64()
}

/// Batch-1 eval-mode throughput: `warmup` untimed forwards, then `iters` timed ones.
pub fn fps_benchmark<T: Scalar>(model: &PNet<T>, input: &Tensor4<T>, warmup: usize, iters: usize) -> Result<f64> {
    let iters = iters.max(1);
    for _ in 0..warmup {
        std::hint::black_box(model.forward(input)?);
    }
    let start = Instant::now();
    for _ in 0..iters {
        std::hint::black_box(model.forward(input)?);
    }
    Ok(fps_from(iters, start.elapsed()))
}

/// Short description of the machine the throughput was measured on.
pub fn hardware_description() -> String {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{} {} cpu, {threads} threads", std::env::consts::OS, std::env::consts::ARCH)
}

/// One row of the evaluation table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub dataset: String,
    pub method: String,
    pub iou: f64,
    pub dice: f64,
    pub params: u64,
    pub flops: u64,
    pub fps: f64,
    pub images: usize,
    pub hardware: String,
    pub wall_seconds: f64,
}

pub const REPORT_HEADER: &str = "Dataset,Method,IOU,Dice,Params,FLOPs,FPS";

/// CSV with the header row and one line per report; metrics at 4 decimals.
pub fn emit_report(reports: &[MetricsReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{},{},{:.4}\n",
            r.dataset, r.method, r.iou, r.dice, r.params, r.flops, r.fps
        ));
    }
    out
}
