use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{encode_image, FingerprintImage};
use crate::error::{invalid, Result};
use crate::tensornn::Tensor3;

/// Ordered WAP identifiers; position `i` is pixel `i` of every image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WapIndex(Vec<String>);

impl WapIndex {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return invalid(format!("duplicate WAP identifier '{id}'"));
            }
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    All,
    Train,
    Calibration,
    Test,
}

/// One fingerprint: dBm per WAP (missing = -100) and its reference point.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub rssi: Vec<f32>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub wap_index: WapIndex,
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    /// Planar coordinates (meters) per reference point, when known.
    pub coords: Option<Vec<Option<[f64; 2]>>>,
    pub split: SplitTag,
    /// SHA-256 of the source bytes (or of the generator parameters).
    pub source_digest: String,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn images(&self) -> Result<Vec<FingerprintImage>> {
        self.samples.iter().map(|s| encode_image(&s.rssi)).collect()
    }

    /// Network inputs for every sample, in sample order.
    pub fn tensors(&self) -> Result<Vec<Tensor3<f32>>> {
        self.samples
            .iter()
            .map(|s| encode_image(&s.rssi).map(|i| i.to_tensor()))
            .collect()
    }

    /// Side of the images this dataset encodes to.
    pub fn image_side(&self) -> usize {
        super::image::image_side(self.wap_index.len())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub(crate) fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if s.label >= self.num_classes {
                return invalid(format!(
                    "label {} >= class count {}",
                    s.label, self.num_classes
                ));
            }
            if s.rssi.len() != self.wap_index.len() {
                return invalid(format!(
                    "sample has {} RSSI values for {} WAPs",
                    s.rssi.len(),
                    self.wap_index.len()
                ));
            }
        }
        Ok(())
    }

    fn with_samples(&self, samples: Vec<Sample>, split: SplitTag) -> Self {
        Self {
            wap_index: self.wap_index.clone(),
            samples,
            num_classes: self.num_classes,
            coords: self.coords.clone(),
            split,
            source_digest: self.source_digest.clone(),
        }
    }

    /// Keeps at most `per_class` samples of each class (first occurrences).
    pub fn take_per_class(&self, per_class: usize) -> Self {
        let mut seen = vec![0; self.num_classes];
        let samples = self
            .samples
            .iter()
            .filter(|s| {
                seen[s.label] += 1;
                seen[s.label] <= per_class
            })
            .cloned()
            .collect();
        self.with_samples(samples, self.split)
    }
}

/// Stratified, seeded train/calibration/test split.
///
/// Per class, `round(f·n)` samples go to train and calibration and the
/// remainder to test.
pub fn split(
    dataset: &LabeledDataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return invalid(format!(
            "split fractions {fractions:?} must be non-negative"
        ));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return invalid(format!("split fractions {fractions:?} do not sum to 1"));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut calib, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for idx in &mut by_class {
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
        let n_calib = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        train.extend_from_slice(&idx[..n_train]);
        calib.extend_from_slice(&idx[n_train..n_train + n_calib]);
        test.extend_from_slice(&idx[n_train + n_calib..]);
    }
    let pick = |mut idx: Vec<usize>, tag| {
        idx.sort_unstable();
        let samples = idx
            .into_iter()
            .map(|i| dataset.samples[i].clone())
            .collect();
        dataset.with_samples(samples, tag)
    };
    Ok((
        pick(train, SplitTag::Train),
        pick(calib, SplitTag::Calibration),
        pick(test, SplitTag::Test),
    ))
}
