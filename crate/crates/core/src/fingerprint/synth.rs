//! Seeded synthetic fingerprint generator.
//!
//! Every class (reference point) owns one anchor WAP. "Easy" classes get an
//! independent random template with a strong anchor, so they are far apart
//! relative to the noise. The remaining "hard" classes are grouped in
//! clusters that share a template and differ only by a weak anchor, so with
//! noise they overlap. Reference points sit 1 m apart on a line.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LabeledDataset, Sample, SplitTag, WapIndex, MAX_DBM, MISSING_DBM};
use crate::error::{invalid, Result};

const STRONG_ANCHOR_DBM: f32 = -30.0;
const VISIBLE_PROBABILITY: f64 = 0.4;
const TEMPLATE_RANGE_DBM: (f32, f32) = (-90.0, -40.0);
const MIN_HARD_SEPARATION_DB: f32 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub classes: usize,
    pub waps: usize,
    pub samples_per_class: usize,
    pub easy_fraction: f64,
    pub noise_db: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            classes: 16,
            waps: 64,
            samples_per_class: 100,
            easy_fraction: 0.8,
            noise_db: 4.0,
            seed: 7,
        }
    }
}

fn random_template(rng: &mut ChaCha8Rng, waps: usize) -> Vec<f32> {
    (0..waps)
        .map(|_| {
            if rng.random_bool(VISIBLE_PROBABILITY) {
                rng.random_range(TEMPLATE_RANGE_DBM.0..TEMPLATE_RANGE_DBM.1)
            } else {
                MISSING_DBM
            }
        })
        .collect()
}

/// Class templates plus the set of easy classes.
pub(crate) fn templates(p: &SynthParams, rng: &mut ChaCha8Rng) -> (Vec<Vec<f32>>, Vec<bool>) {
    let n_easy = ((p.easy_fraction * p.classes as f64).round() as usize).min(p.classes);
    let mut order: Vec<usize> = (0..p.classes).collect();
    order.shuffle(rng);
    let mut easy = vec![false; p.classes];
    for &c in &order[..n_easy] {
        easy[c] = true;
    }
    let mut anchors: Vec<usize> = (0..p.waps).collect();
    anchors.shuffle(rng);
    anchors.truncate(p.classes);

    let mut out = vec![Vec::new(); p.classes];
    for c in (0..p.classes).filter(|&c| easy[c]) {
        let mut t = random_template(rng, p.waps);
        for &a in &anchors {
            t[a] = MISSING_DBM;
        }
        t[anchors[c]] = STRONG_ANCHOR_DBM;
        out[c] = t;
    }

    let hard: Vec<usize> = (0..p.classes).filter(|&c| !easy[c]).collect();
    let mut clusters: Vec<Vec<usize>> = hard.chunks(2).map(<[usize]>::to_vec).collect();
    if clusters.len() > 1 && clusters.last().is_some_and(|c| c.len() == 1) {
        let lone = clusters.pop().expect("non-empty")[0];
        clusters.last_mut().expect("non-empty").push(lone);
    }
    let separation = MIN_HARD_SEPARATION_DB.max(2.0 * p.noise_db as f32);
    for cluster in clusters {
        let mut base = random_template(rng, p.waps);
        for &a in &anchors {
            base[a] = MISSING_DBM;
        }
        for &c in &cluster {
            let mut t = base.clone();
            t[anchors[c]] = MISSING_DBM + separation;
            out[c] = t;
        }
    }
    (out, easy)
}

pub fn synth_generate(p: &SynthParams) -> Result<LabeledDataset> {
    if p.classes < 2 {
        return invalid(format!("need at least 2 classes, got {}", p.classes));
    }
    if p.waps < p.classes {
        return invalid(format!(
            "need at least as many WAPs ({}) as classes ({})",
            p.waps, p.classes
        ));
    }
    if p.samples_per_class == 0 {
        return invalid("samples_per_class must be >= 1");
    }
    if !(0.0..=1.0).contains(&p.easy_fraction) {
        return invalid(format!("easy_fraction {} outside [0, 1]", p.easy_fraction));
    }
    if !p.noise_db.is_finite() || p.noise_db < 0.0 {
        return invalid(format!("noise_db {} must be finite and >= 0", p.noise_db));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let (templates, _) = templates(p, &mut rng);
    let noise = Normal::new(0.0, p.noise_db).expect("validated std");

    let mut samples = Vec::with_capacity(p.classes * p.samples_per_class);
    for _ in 0..p.samples_per_class {
        for (label, t) in templates.iter().enumerate() {
            let rssi = t
                .iter()
                .map(|&v| {
                    let n = if p.noise_db > 0.0 {
                        noise.sample(&mut rng) as f32
                    } else {
                        0.0
                    };
                    (v + n).clamp(MISSING_DBM, MAX_DBM)
                })
                .collect();
            samples.push(Sample { rssi, label });
        }
    }
    let digest = Sha256::digest(serde_json::to_vec(p)?);
    Ok(LabeledDataset {
        wap_index: WapIndex::new((0..p.waps).map(|i| format!("{i:03}")).collect())?,
        samples,
        num_classes: p.classes,
        coords: Some((0..p.classes).map(|c| Some([c as f64, 0.0])).collect()),
        split: SplitTag::All,
        source_digest: format!("{digest:x}"),
    })
}
