use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::UncertaintyMethod;
use crate::error::{invalid, shape_err, Result};
use crate::fingerprint::WapIndex;
use crate::tensornn::{
    bias_key, param_count, weight_key, HyperParams, LayerKind, LayerSpec, LayerStack, ParamRow,
    Shape, WeightStore,
};

/// A side branch that may end inference early.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitBranchSpec {
    pub name: String,
    /// Index of the backbone stage whose (post-activation) output feeds the branch.
    pub attach_stage: usize,
    pub layers: LayerStack,
}

/// Backbone stages, exit branches and the final head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: Shape,
    pub classes: usize,
    pub stages: Vec<LayerStack>,
    pub exits: Vec<ExitBranchSpec>,
    pub head: LayerStack,
}

fn ends_in_classifier(stack: &LayerStack, classes: usize) -> bool {
    let l = stack.layers();
    l.len() >= 2
        && l[l.len() - 1].kind == LayerKind::Softmax
        && l[l.len() - 2].kind == LayerKind::Dense { units: classes }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return invalid(format!(
                "a classifier needs at least 2 classes, got {}",
                self.classes
            ));
        }
        if self.stages.is_empty() {
            return invalid("model has no backbone stages");
        }
        let mut shape = self.input_shape;
        let mut stage_out = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.input_shape() != shape {
                return shape_err(format!(
                    "stage {i} expects {} but receives {shape}",
                    stage.input_shape()
                ));
            }
            LayerStack::from_layers(stage.input_shape(), stage.layers().to_vec())?;
            shape = stage.output_shape();
            stage_out.push(shape);
        }
        LayerStack::from_layers(self.head.input_shape(), self.head.layers().to_vec())?;
        if self.head.input_shape() != shape {
            return shape_err(format!(
                "head expects {} but backbone emits {shape}",
                self.head.input_shape()
            ));
        }
        if !ends_in_classifier(&self.head, self.classes) {
            return invalid(format!("head must end in dense({})+softmax", self.classes));
        }
        let mut last_attach = 0;
        for e in &self.exits {
            let Some(&out) = stage_out.get(e.attach_stage) else {
                return invalid(format!(
                    "exit '{}' attaches to missing stage {}",
                    e.name, e.attach_stage
                ));
            };
            if e.attach_stage < last_attach {
                return invalid("exits must be ordered by attachment depth");
            }
            last_attach = e.attach_stage;
            LayerStack::from_layers(e.layers.input_shape(), e.layers.layers().to_vec())?;
            if e.layers.input_shape() != out {
                return shape_err(format!(
                    "exit '{}' expects {} but stage {} emits {out}",
                    e.name,
                    e.layers.input_shape(),
                    e.attach_stage
                ));
            }
            if !ends_in_classifier(&e.layers, self.classes) {
                return invalid(format!(
                    "exit '{}' must end in dense({})+softmax",
                    e.name, self.classes
                ));
            }
        }
        let mut names = std::collections::HashSet::new();
        for l in self.all_layers() {
            if !names.insert(l.name.as_str()) {
                return invalid(format!("duplicate layer name '{}'", l.name));
            }
        }
        Ok(())
    }

    /// Every layer in depth order: each stage followed by the exits attached
    /// to it, then the head.
    pub fn all_layers(&self) -> Vec<&LayerSpec> {
        let mut out = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            out.extend(stage.layers());
            for e in self.exits.iter().filter(|e| e.attach_stage == i) {
                out.extend(e.layers.layers());
            }
        }
        out.extend(self.head.layers());
        out
    }

    pub fn backbone_layers(&self) -> Vec<&LayerSpec> {
        self.stages.iter().flat_map(|s| s.layers()).collect()
    }

    /// Backbone plus final head: the exit-free model.
    pub fn baseline_path(&self) -> Vec<&LayerSpec> {
        let mut out = self.backbone_layers();
        out.extend(self.head.layers());
        out
    }

    /// Backbone up to the exit's stage, then the branch.
    pub fn exit_path(&self, exit: usize) -> Result<Vec<&LayerSpec>> {
        let e = self.exit(exit)?;
        let mut out: Vec<&LayerSpec> = self.stages[..=e.attach_stage]
            .iter()
            .flat_map(|s| s.layers())
            .collect();
        out.extend(e.layers.layers());
        Ok(out)
    }

    pub fn exit(&self, exit: usize) -> Result<&ExitBranchSpec> {
        self.exits
            .get(exit)
            .ok_or_else(|| crate::Error::InvalidArgument(format!("model has no exit {exit}")))
    }

    /// Parameter counts per layer in depth order, zero rows dropped.
    pub fn param_table(&self) -> Vec<ParamRow> {
        param_count(self.all_layers())
            .0
            .into_iter()
            .filter(|r| r.count > 0)
            .collect()
    }

    pub fn baseline_params(&self) -> u64 {
        param_count(self.baseline_path()).1
    }

    pub fn exit_params(&self, exit: usize) -> Result<u64> {
        Ok(param_count(self.exit(exit)?.layers.layers()).1)
    }

    pub fn total_params(&self) -> u64 {
        param_count(self.all_layers()).1
    }

    pub fn stage_macs(&self) -> Vec<u64> {
        self.stages
            .iter()
            .map(|s| crate::tensornn::mac_count(s.layers()))
            .collect()
    }

    pub fn exit_macs(&self) -> Vec<u64> {
        self.exits
            .iter()
            .map(|e| crate::tensornn::mac_count(e.layers.layers()))
            .collect()
    }

    pub fn head_macs(&self) -> u64 {
        crate::tensornn::mac_count(self.head.layers())
    }

    pub fn baseline_macs(&self) -> u64 {
        self.stage_macs().iter().sum::<u64>() + self.head_macs()
    }

    /// Weight/bias keys of one exit branch.
    pub fn exit_block_keys(&self, exit: usize) -> Result<Vec<String>> {
        Ok(block_keys(self.exit(exit)?.layers.layers().iter()))
    }

    /// Weight/bias keys of the backbone and final head.
    pub fn baseline_block_keys(&self) -> Vec<String> {
        block_keys(self.baseline_path().into_iter())
    }
}

fn block_keys<'a>(layers: impl Iterator<Item = &'a LayerSpec>) -> Vec<String> {
    layers
        .filter(|l| l.has_params())
        .flat_map(|l| [weight_key(&l.name), bias_key(&l.name)])
        .collect()
}

/// Method and threshold for one enabled exit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitRule {
    pub method: UncertaintyMethod,
    pub threshold: f64,
}

/// Per-exit switches and thresholds. `None` disables an exit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitPolicy {
    pub exits: Vec<Option<ExitRule>>,
}

impl ExitPolicy {
    pub fn all_off(n_exits: usize) -> Self {
        Self {
            exits: vec![None; n_exits],
        }
    }

    /// Every exit enabled with the same method and threshold.
    pub fn uniform(n_exits: usize, method: UncertaintyMethod, threshold: f64) -> Self {
        Self {
            exits: vec![Some(ExitRule { method, threshold }); n_exits],
        }
    }

    pub fn len(&self) -> usize {
        self.exits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exits.is_empty()
    }

    pub fn enabled_count(&self) -> usize {
        self.exits.iter().filter(|e| e.is_some()).count()
    }

    pub fn validate(&self, n_exits: usize) -> Result<()> {
        if self.exits.len() != n_exits {
            return invalid(format!(
                "policy covers {} exits, model has {n_exits}",
                self.exits.len()
            ));
        }
        for rule in self.exits.iter().flatten() {
            rule.method.check_threshold(rule.threshold)?;
        }
        Ok(())
    }

    /// Compact text form, e.g. `off;margin@0.8`.
    pub fn describe(&self) -> String {
        if self.exits.is_empty() {
            return "baseline".into();
        }
        self.exits
            .iter()
            .map(|e| match e {
                Some(r) => format!("{}@{}", r.method, r.threshold),
                None => "off".into(),
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Which parts of the model have been trained.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingStatus {
    pub baseline: bool,
    pub exits: Vec<bool>,
}

/// Provenance recorded with a model so runs can be reproduced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub init_seed: u64,
    #[serde(default)]
    pub source_digest: Option<String>,
    #[serde(default)]
    pub split_seed: Option<u64>,
    #[serde(default)]
    pub split_fractions: Option<[f64; 3]>,
    #[serde(default)]
    pub baseline_hyperparams: Option<HyperParams>,
    #[serde(default)]
    pub exit_hyperparams: Option<HyperParams>,
}

/// A backbone with its exits, weights and default exit policy.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiExitModel {
    pub spec: ModelSpec,
    pub weights: WeightStore<f32>,
    pub wap_index: Option<WapIndex>,
    pub status: TrainingStatus,
    pub default_policy: ExitPolicy,
    pub meta: ModelMeta,
}

impl MultiExitModel {
    /// Validates `spec` and initializes every block from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = WeightStore::init(spec.all_layers(), &mut rng);
        let n = spec.exits.len();
        Ok(Self {
            weights,
            wap_index: None,
            status: TrainingStatus {
                baseline: false,
                exits: vec![false; n],
            },
            default_policy: ExitPolicy::all_off(n),
            meta: ModelMeta {
                init_seed: seed,
                ..Default::default()
            },
            spec,
        })
    }

    pub fn num_exits(&self) -> usize {
        self.spec.exits.len()
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    /// Resident parameter bytes with the given exits kept in memory.
    pub fn footprint_bytes(&self, enabled: &[bool]) -> Result<u64> {
        footprint_bytes(&self.spec, enabled)
    }
}

/// 4 bytes per backbone/head parameter plus the parameters of enabled exits.
pub fn footprint_bytes(spec: &ModelSpec, enabled: &[bool]) -> Result<u64> {
    if enabled.len() != spec.exits.len() {
        return invalid(format!(
            "{} switches for {} exits",
            enabled.len(),
            spec.exits.len()
        ));
    }
    let mut params = spec.baseline_params();
    for (i, &on) in enabled.iter().enumerate() {
        if on {
            params += spec.exit_params(i)?;
        }
    }
    Ok(params * std::mem::size_of::<f32>() as u64)
}
