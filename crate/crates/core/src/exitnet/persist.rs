//! Saving and loading multi-exit models as manifest + blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ExitBranchSpec, ExitPolicy, ExitRule, ModelMeta, ModelSpec, MultiExitModel, TrainingStatus,
    UncertaintyMethod,
};
use crate::error::{Error, Result};
use crate::fingerprint::WapIndex;
use crate::tensornn::io::{
    blob_name, check_header, decode_blocks, encode_blocks, read_blob, write_pair, BlockEntry,
    FORMAT_VERSION, MAGIC,
};
use crate::tensornn::{LayerStack, Shape};

/// Thresholds are numbers, except the unbounded ratio threshold which is
/// written as the string `"inf"`.
mod theta_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(t) if t.is_infinite() => Some(Repr::Text("inf".into())).serialize(s),
            Some(t) => Some(Repr::Num(*t)).serialize(s),
            None => None::<Repr>.serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(t)) => Ok(Some(t)),
            Some(Repr::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
            Some(Repr::Text(t)) => Err(serde::de::Error::custom(format!("bad threshold '{t}'"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ExitEntry {
    name: String,
    attach_stage: usize,
    layers: LayerStack,
    enabled: bool,
    method: Option<UncertaintyMethod>,
    #[serde(with = "theta_repr", default)]
    theta: Option<f64>,
    trained: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelManifest {
    magic: String,
    format_version: u32,
    writer: String,
    input_shape: Shape,
    classes: usize,
    stages: Vec<LayerStack>,
    exits: Vec<ExitEntry>,
    head: LayerStack,
    baseline_trained: bool,
    #[serde(default)]
    wap_index: Option<WapIndex>,
    meta: ModelMeta,
    blob: String,
    blocks: Vec<BlockEntry>,
}

pub fn save_model(model: &MultiExitModel, path: &Path) -> Result<()> {
    model.spec.validate()?;
    model.default_policy.validate(model.num_exits())?;
    model.weights.validate(model.spec.all_layers())?;
    let (blocks, blob) = encode_blocks(&model.weights);
    let exits = model
        .spec
        .exits
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let rule = model.default_policy.exits[i];
            ExitEntry {
                name: e.name.clone(),
                attach_stage: e.attach_stage,
                layers: e.layers.clone(),
                enabled: rule.is_some(),
                method: rule.map(|r| r.method),
                theta: rule.map(|r| r.threshold),
                trained: model.status.exits.get(i).copied().unwrap_or(false),
            }
        })
        .collect();
    let manifest = ModelManifest {
        magic: MAGIC.into(),
        format_version: FORMAT_VERSION,
        writer: format!("eeloc {}", env!("CARGO_PKG_VERSION")),
        input_shape: model.spec.input_shape,
        classes: model.spec.classes,
        stages: model.spec.stages.clone(),
        exits,
        head: model.spec.head.clone(),
        baseline_trained: model.status.baseline,
        wap_index: model.wap_index.clone(),
        meta: model.meta.clone(),
        blob: blob_name(path),
        blocks,
    };
    write_pair(path, &manifest, &blob)
}

pub fn load_model(path: &Path) -> Result<MultiExitModel> {
    let m: ModelManifest = serde_json::from_slice(&fs::read(path)?)?;
    check_header(&m.magic, m.format_version)?;
    let mut rules = Vec::with_capacity(m.exits.len());
    let mut trained = Vec::with_capacity(m.exits.len());
    let mut exits = Vec::with_capacity(m.exits.len());
    for e in m.exits {
        rules.push(match (e.enabled, e.method, e.theta) {
            (false, _, _) => None,
            (true, Some(method), Some(threshold)) => Some(ExitRule { method, threshold }),
            (true, _, _) => {
                return Err(Error::Format(format!(
                    "exit '{}' is enabled without method and threshold",
                    e.name
                )))
            }
        });
        trained.push(e.trained);
        exits.push(ExitBranchSpec {
            name: e.name,
            attach_stage: e.attach_stage,
            layers: e.layers,
        });
    }
    let spec = ModelSpec {
        input_shape: m.input_shape,
        classes: m.classes,
        stages: m.stages,
        exits,
        head: m.head,
    };
    spec.validate()?;
    let default_policy = ExitPolicy { exits: rules };
    default_policy.validate(spec.exits.len())?;
    let weights = decode_blocks(&m.blocks, &read_blob(path, &m.blob)?)?;
    weights.validate(spec.all_layers())?;
    if weights.len()
        != spec.baseline_block_keys().len()
            + (0..spec.exits.len())
                .map(|i| spec.exit_block_keys(i).map(|k| k.len()))
                .sum::<Result<usize>>()?
    {
        return Err(Error::Format(
            "blob holds blocks for layers not in the model".into(),
        ));
    }
    if let Some(w) = &m.wap_index {
        let pixels = spec.input_shape.len();
        if w.len() > pixels {
            return Err(Error::Format(format!(
                "{} WAPs do not fit a {} input",
                w.len(),
                spec.input_shape
            )));
        }
    }
    Ok(MultiExitModel {
        spec,
        weights,
        wap_index: m.wap_index,
        status: TrainingStatus {
            baseline: m.baseline_trained,
            exits: trained,
        },
        default_policy,
        meta: m.meta,
    })
}
