//! Epoch-seeded batching over a manifest split.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::augment::{augment, AugmentPolicy};
use crate::data::manifest::{check_target, SampleManifest, Split};
use crate::data::sample::{load_sample, Sample};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::{LabelMap, Tensor4};

/// Collated images and masks plus the manifest indices they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor4<f32>,
    pub masks: LabelMap,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn from_samples(samples: &[Sample], indices: Vec<usize>) -> Result<Self> {
        let images: Vec<Tensor4<f32>> = samples.iter().map(|s| s.image.clone()).collect();
        let masks: Vec<LabelMap> = samples.iter().map(|s| s.mask.clone()).collect();
        Ok(Batch {
            images: Tensor4::stack(&images)?,
            masks: LabelMap::stack(&masks)?,
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// A manifest plus (optionally) its decoded samples held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: SampleManifest,
    cache: Option<Vec<Sample>>,
}

impl Dataset {
    pub fn new(manifest: SampleManifest) -> Result<Self> {
        check_target(manifest.target)?;
        Ok(Self { manifest, cache: None })
    }

    /// In-memory dataset; samples must match the manifest target.
    pub fn from_samples(manifest: SampleManifest, samples: Vec<Sample>) -> Result<Self> {
        check_target(manifest.target)?;
        if samples.len() != manifest.entries.len() {
            return Err(Error::Dataset(format!(
                "{} samples for {} manifest entries",
                samples.len(),
                manifest.entries.len()
            )));
        }
        let (w, h) = manifest.target;
        if let Some(s) = samples.iter().find(|s| (s.width(), s.height()) != (w, h)) {
            return Err(Error::Dataset(format!(
                "sample of size {}x{} does not match target {w}x{h}",
                s.width(),
                s.height()
            )));
        }
        Ok(Self {
            manifest,
            cache: Some(samples),
        })
    }

    /// Decodes every entry up front (in parallel; order preserved).
    pub fn preload(&mut self) -> Result<()> {
        if self.cache.is_none() {
            let target = self.manifest.target;
            let samples = self
                .manifest
                .entries
                .par_iter()
                .map(|e| load_sample(e, target))
                .collect::<Result<Vec<_>>>()?;
            self.cache = Some(samples);
        }
        Ok(())
    }

    pub fn sample(&self, index: usize) -> Result<Sample> {
        match &self.cache {
            Some(c) => Ok(c[index].clone()),
            None => load_sample(&self.manifest.entries[index], self.manifest.target),
        }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.manifest.entries.len())
            .filter(|&i| self.manifest.entries[i].split == split)
            .collect()
    }

    /// Batches of one epoch. `shuffle_seed = Some(seed)` shuffles with the
    /// epoch's substream; a policy augments each sample with the epoch's
    /// augment substream. The final partial batch is kept.
    pub fn batches<'a>(
        &'a self,
        split: Split,
        batch_size: usize,
        shuffle_seed: Option<u64>,
        epoch: u64,
        policy: Option<&'a AugmentPolicy>,
    ) -> Result<BatchStream<'a>> {
        if batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        let mut order = self.indices(split);
        if let Some(seed) = shuffle_seed {
            order.shuffle(&mut substream(seed, "shuffle", epoch));
        }
        let aug_seed = shuffle_seed.unwrap_or(0);
        Ok(BatchStream {
            dataset: self,
            order,
            batch_size,
            next: 0,
            policy,
            aug_rng: substream(aug_seed, "augment", epoch),
        })
    }
}

/// Iterator over the batches of one epoch.
pub struct BatchStream<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
    policy: Option<&'a AugmentPolicy>,
    aug_rng: crate::rng::StreamRng,
}

impl BatchStream<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let idx: Vec<usize> = self.order[self.next..end].to_vec();
        self.next = end;
        let loaded: Result<Vec<Sample>> = idx.par_iter().map(|&i| self.dataset.sample(i)).collect();
        let samples = match loaded {
            Ok(s) => s,
            Err(e) => return Some(Err(e)),
        };
        // augmentation draws stay sequential so the stream is independent of thread count
        let samples: Vec<Sample> = match self.policy {
            Some(p) => samples.iter().map(|s| augment(s, p, &mut self.aug_rng)).collect(),
            None => samples,
        };
        Some(Batch::from_samples(&samples, idx))
    }
}

/// Number of batches for `n` samples.
pub fn batch_count(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}
