use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{FedFgError, Result};
use crate::rng;

/// One labelled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

/// Non-empty classification dataset with a fixed input width.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<Sample>,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(samples: Vec<Sample>, classes: usize) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| FedFgError::invalid("dataset must be non-empty"))?;
        let width = first.x.len();
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != width {
                return Err(FedFgError::DimensionMismatch {
                    context: "dataset sample width",
                    expected: width,
                    got: s.x.len(),
                });
            }
            if s.y >= classes {
                return Err(FedFgError::invalid(format!(
                    "sample {i} has label {} but there are {classes} classes",
                    s.y
                )));
            }
        }
        Ok(Self { samples, classes })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_width(&self) -> usize {
        self.samples[0].x.len()
    }

    /// Samples at the given indices, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| FedFgError::invalid(format!("index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, self.classes)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.classes];
        for s in &self.samples {
            hist[s.y] += 1;
        }
        hist
    }

    /// Indices grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.classes];
        for (i, s) in self.samples.iter().enumerate() {
            groups[s.y].push(i);
        }
        groups
    }

    /// Shuffled split into `(train, held_out)`. Training keeps at least one
    /// sample; the held-out part is `None` when it would be empty.
    pub fn split_holdout<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> Result<(Self, Option<Self>)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(FedFgError::invalid(format!(
                "held-out fraction must lie in [0, 1), got {fraction}"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        let n_test = ((self.len() as f64 * fraction).round() as usize).min(self.len() - 1);
        let (test_idx, train_idx) = order.split_at(n_test);
        let train = self.subset(train_idx)?;
        let test = if test_idx.is_empty() {
            None
        } else {
            Some(self.subset(test_idx)?)
        };
        Ok((train, test))
    }
}

/// Parameters of the synthetic Gaussian-blob task.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub separation: f64,
    pub noise_std: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 16,
            per_class: 200,
            separation: 6.0,
            noise_std: 1.0,
        }
    }
}

/// Class centers: random directions scaled to length `separation`.
pub fn blob_centers(spec: &BlobSpec, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::seeded(seed);
    (0..spec.classes)
        .map(|_| {
            let g: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            g.into_iter().map(|v| v / norm * spec.separation).collect()
        })
        .collect()
}

/// `K` isotropic Gaussian clusters, stored class-major.
pub fn make_blobs(spec: &BlobSpec, seed: u64) -> Result<LabeledDataset> {
    if spec.classes < 2 || spec.dim == 0 || spec.per_class == 0 {
        return Err(FedFgError::invalid(
            "blobs need at least 2 classes, dim >= 1 and per_class >= 1",
        ));
    }
    if !(spec.noise_std >= 0.0) || !spec.separation.is_finite() {
        return Err(FedFgError::invalid("blob noise must be >= 0 and separation finite"));
    }
    let centers = blob_centers(spec, seed);
    let mut rng = rng::seeded(seed ^ 0xB10B_5EED);
    let mut samples = Vec::with_capacity(spec.classes * spec.per_class);
    for (y, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            let x = center
                .iter()
                .map(|&c| {
                    if spec.noise_std == 0.0 {
                        c
                    } else {
                        c + spec.noise_std * rng.sample::<f64, _>(StandardNormal)
                    }
                })
                .collect();
            samples.push(Sample { x, y });
        }
    }
    LabeledDataset::new(samples, spec.classes)
}
