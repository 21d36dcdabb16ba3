//! Architectures: the three-stage reference network with two exits, a
//! depthwise-separable variant and a conv/pool variant for building/floor
//! classification.

use serde::{Deserialize, Serialize};

use super::{ExitBranchSpec, ModelSpec};
use crate::error::{invalid, Result};
use crate::tensornn::{LayerStack, Shape};

/// Input side of the reference network.
pub const REFERENCE_INPUT_SIDE: usize = 30;
pub const REFERENCE_CLASSES: usize = 342;
/// Filters of the three backbone convolutions.
pub const REFERENCE_WIDTHS: [usize; 3] = [32, 64, 128];
const REFERENCE_EXIT2_FILTERS: usize = 8;
const KERNEL: usize = 2;

fn head(input: Shape, name: &str, classes: usize) -> Result<LayerStack> {
    LayerStack::new(input)
        .flatten_as(&format!("{name}/flatten"))?
        .dense(name, classes)?
        .softmax()
}

/// Three 2×2/stride-1 convolution stages (32, 64, 128 filters, each with
/// ReLU); exit 1 is a single dense output on stage 1, exit 2 adds an
/// 8-filter convolution on stage 2 before its dense output.
pub fn reference_topology(input_side: usize, classes: usize) -> Result<ModelSpec> {
    let input = Shape::new(input_side, input_side, 1);
    let s1 = LayerStack::new(input)
        .conv2d("conv2d_1", KERNEL, 1, REFERENCE_WIDTHS[0])?
        .relu()?;
    let s2 = LayerStack::new(s1.output_shape())
        .conv2d("conv2d_2", KERNEL, 1, REFERENCE_WIDTHS[1])?
        .relu()?;
    let s3 = LayerStack::new(s2.output_shape())
        .conv2d("conv2d_3", KERNEL, 1, REFERENCE_WIDTHS[2])?
        .relu()?;
    let eea1 = head(s1.output_shape(), "eea1_output", classes)?;
    let eea2 = LayerStack::new(s2.output_shape())
        .conv2d("conv2d_4", KERNEL, 1, REFERENCE_EXIT2_FILTERS)?
        .relu()?
        .flatten()?
        .dense("eea2_output", classes)?
        .softmax()?;
    let spec = ModelSpec {
        input_shape: input,
        classes,
        head: head(s3.output_shape(), "output", classes)?,
        stages: vec![s1, s2, s3],
        exits: vec![
            ExitBranchSpec {
                name: "eea1".into(),
                attach_stage: 0,
                layers: eea1,
            },
            ExitBranchSpec {
                name: "eea2".into(),
                attach_stage: 1,
                layers: eea2,
            },
        ],
    };
    spec.validate()?;
    Ok(spec)
}

/// The full-size reference network (30×30 input).
pub fn reference_spec(classes: usize) -> Result<ModelSpec> {
    reference_topology(REFERENCE_INPUT_SIDE, classes)
}

/// Exit-free baseline with the first `depth` reference convolutions.
pub fn baseline_of_depth(input_side: usize, classes: usize, depth: usize) -> Result<ModelSpec> {
    if depth == 0 || depth > REFERENCE_WIDTHS.len() {
        return invalid(format!(
            "depth must be 1..={}, got {depth}",
            REFERENCE_WIDTHS.len()
        ));
    }
    let mut shape = Shape::new(input_side, input_side, 1);
    let mut stages = Vec::new();
    for (i, &w) in REFERENCE_WIDTHS[..depth].iter().enumerate() {
        let s = LayerStack::new(shape)
            .conv2d(&format!("conv2d_{}", i + 1), KERNEL, 1, w)?
            .relu()?;
        shape = s.output_shape();
        stages.push(s);
    }
    let spec = ModelSpec {
        input_shape: Shape::new(input_side, input_side, 1),
        classes,
        head: head(shape, "output", classes)?,
        stages,
        exits: Vec::new(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Exit branch: optional hidden dense+ReLU, then the class layer.
fn exit_branch(
    input: Shape,
    name: &str,
    hidden: Option<usize>,
    classes: usize,
) -> Result<LayerStack> {
    let mut s = LayerStack::new(input).flatten_as(&format!("{name}/flatten"))?;
    if let Some(h) = hidden {
        s = s.dense(&format!("{name}_hidden"), h)?.relu()?;
    }
    s.dense(&format!("{name}_output"), classes)?.softmax()
}

/// Convolution stem followed by depthwise/pointwise pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DscpConfig {
    pub input_side: usize,
    pub classes: usize,
    pub kernel: usize,
    pub stem_filters: usize,
    /// Pointwise filters of each depthwise/pointwise pair.
    pub pairs: Vec<usize>,
    /// Stage (0 = stem) that feeds the exit.
    pub exit_after: usize,
    pub exit_hidden: Option<usize>,
}

impl Default for DscpConfig {
    fn default() -> Self {
        Self {
            input_side: REFERENCE_INPUT_SIDE,
            classes: REFERENCE_CLASSES,
            kernel: KERNEL,
            stem_filters: 32,
            pairs: vec![64, 128],
            exit_after: 0,
            exit_hidden: None,
        }
    }
}

pub fn build_dscp_variant(cfg: &DscpConfig) -> Result<ModelSpec> {
    if cfg.pairs.is_empty() {
        return invalid(
            "the depthwise-separable variant needs at least one depthwise/pointwise pair",
        );
    }
    let input = Shape::new(cfg.input_side, cfg.input_side, 1);
    let mut stages = vec![LayerStack::new(input)
        .conv2d("stem", cfg.kernel, 1, cfg.stem_filters)?
        .relu()?];
    for (i, &f) in cfg.pairs.iter().enumerate() {
        let prev = stages.last().expect("stem").output_shape();
        stages.push(
            LayerStack::new(prev)
                .depthwise(&format!("dw_{}", i + 1), cfg.kernel, 1)?
                .relu()?
                .pointwise(&format!("pw_{}", i + 1), f)?
                .relu()?,
        );
    }
    if cfg.exit_after + 1 >= stages.len() {
        return invalid(format!(
            "exit_after {} leaves no deeper stage",
            cfg.exit_after
        ));
    }
    let exit_in = stages[cfg.exit_after].output_shape();
    let out = stages.last().expect("non-empty").output_shape();
    let spec = ModelSpec {
        input_shape: input,
        classes: cfg.classes,
        exits: vec![ExitBranchSpec {
            name: "ee".into(),
            attach_stage: cfg.exit_after,
            layers: exit_branch(exit_in, "ee", cfg.exit_hidden, cfg.classes)?,
        }],
        head: head(out, "output", cfg.classes)?,
        stages,
    };
    spec.validate()?;
    Ok(spec)
}

/// Convolution + max-pool stages, a hidden dense layer, then the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UjiConfig {
    pub input_side: usize,
    pub classes: usize,
    pub kernel: usize,
    pub conv_filters: Vec<usize>,
    pub pool: usize,
    pub hidden: usize,
    pub exit_after: usize,
    pub exit_hidden: Option<usize>,
}

impl Default for UjiConfig {
    fn default() -> Self {
        Self {
            input_side: 23,
            classes: crate::fingerprint::UJI_CLASSES,
            kernel: KERNEL,
            conv_filters: vec![16, 32],
            pool: 2,
            hidden: 64,
            exit_after: 0,
            exit_hidden: None,
        }
    }
}

pub fn build_ujiloc_variant(cfg: &UjiConfig) -> Result<ModelSpec> {
    if cfg.conv_filters.len() < 2 {
        return invalid("the conv/pool variant needs at least two stages");
    }
    let input = Shape::new(cfg.input_side, cfg.input_side, 1);
    let mut stages: Vec<LayerStack> = Vec::new();
    let mut shape = input;
    for (i, &f) in cfg.conv_filters.iter().enumerate() {
        let s = LayerStack::new(shape)
            .conv2d(&format!("conv_{}", i + 1), cfg.kernel, 1, f)?
            .relu()?
            .maxpool(cfg.pool, cfg.pool)?;
        shape = s.output_shape();
        stages.push(s);
    }
    if cfg.exit_after + 1 >= stages.len() {
        return invalid(format!(
            "exit_after {} leaves no deeper stage",
            cfg.exit_after
        ));
    }
    let exit_in = stages[cfg.exit_after].output_shape();
    let head = LayerStack::new(shape)
        .flatten_as("fc/flatten")?
        .dense("fc", cfg.hidden)?
        .relu()?
        .dense("output", cfg.classes)?
        .softmax()?;
    let spec = ModelSpec {
        input_shape: input,
        classes: cfg.classes,
        exits: vec![ExitBranchSpec {
            name: "ee".into(),
            attach_stage: cfg.exit_after,
            layers: exit_branch(exit_in, "ee", cfg.exit_hidden, cfg.classes)?,
        }],
        head,
        stages,
    };
    spec.validate()?;
    Ok(spec)
}
