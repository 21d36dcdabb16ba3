use serde::{Deserialize, Serialize};

use super::Shape;
use crate::error::{shape_err, Result};

/// Kind-specific hyperparameters of a layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        kernel: [usize; 2],
        stride: usize,
        filters: usize,
    },
    DepthwiseConv2d {
        kernel: [usize; 2],
        stride: usize,
    },
    PointwiseConv2d {
        filters: usize,
    },
    #[serde(rename = "maxpool")]
    MaxPool {
        window: [usize; 2],
        stride: usize,
    },
    Dense {
        units: usize,
    },
    Relu,
    Softmax,
    Flatten,
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::DepthwiseConv2d { .. } => "depthwise_conv2d",
            LayerKind::PointwiseConv2d { .. } => "pointwise_conv2d",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu => "relu",
            LayerKind::Softmax => "softmax",
            LayerKind::Flatten => "flatten",
        }
    }
}

/// One layer of a network together with the shape it consumes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub input_shape: Shape,
}

fn window_out(input: usize, k: usize, stride: usize) -> usize {
    (input - k) / stride + 1
}

impl LayerSpec {
    /// Builds a layer and checks that it is legal for `input_shape`.
    pub fn new(name: impl Into<String>, kind: LayerKind, input_shape: Shape) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            kind,
            input_shape,
        };
        spec.output_shape()?;
        Ok(spec)
    }

    /// Output shape per the valid (unpadded) convolution and pooling rule.
    pub fn output_shape(&self) -> Result<Shape> {
        let s = self.input_shape;
        if s.is_empty() {
            return shape_err(format!("layer '{}': empty input shape {s}", self.name));
        }
        let fits = |k: [usize; 2], stride: usize, what: &str| -> Result<()> {
            if stride == 0 {
                return shape_err(format!("layer '{}': stride must be >= 1", self.name));
            }
            if k[0] == 0 || k[1] == 0 || k[0] > s.height || k[1] > s.width {
                return shape_err(format!(
                    "layer '{}': {what} {}x{} does not fit input {s}",
                    self.name, k[0], k[1]
                ));
            }
            Ok(())
        };
        match self.kind {
            LayerKind::Conv2d {
                kernel,
                stride,
                filters,
            } => {
                fits(kernel, stride, "kernel")?;
                if filters == 0 {
                    return shape_err(format!("layer '{}': zero filters", self.name));
                }
                Ok(Shape::new(
                    window_out(s.height, kernel[0], stride),
                    window_out(s.width, kernel[1], stride),
                    filters,
                ))
            }
            LayerKind::DepthwiseConv2d { kernel, stride } => {
                fits(kernel, stride, "kernel")?;
                Ok(Shape::new(
                    window_out(s.height, kernel[0], stride),
                    window_out(s.width, kernel[1], stride),
                    s.channels,
                ))
            }
            LayerKind::PointwiseConv2d { filters } => {
                if filters == 0 {
                    return shape_err(format!("layer '{}': zero filters", self.name));
                }
                Ok(Shape::new(s.height, s.width, filters))
            }
            LayerKind::MaxPool { window, stride } => {
                fits(window, stride, "window")?;
                Ok(Shape::new(
                    window_out(s.height, window[0], stride),
                    window_out(s.width, window[1], stride),
                    s.channels,
                ))
            }
            LayerKind::Dense { units } => {
                if !s.is_flat() {
                    return shape_err(format!(
                        "layer '{}': dense needs a flattened input, got {s}",
                        self.name
                    ));
                }
                if units == 0 {
                    return shape_err(format!("layer '{}': zero units", self.name));
                }
                Ok(Shape::flat(units))
            }
            LayerKind::Softmax => {
                if !s.is_flat() {
                    return shape_err(format!(
                        "layer '{}': softmax needs a flattened input, got {s}",
                        self.name
                    ));
                }
                Ok(s)
            }
            LayerKind::Relu => Ok(s),
            LayerKind::Flatten => Ok(Shape::flat(s.len())),
        }
    }

    /// Shapes of the weight and bias blocks, if the layer is parametrized.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        let s = self.input_shape;
        match self.kind {
            LayerKind::Conv2d {
                kernel, filters, ..
            } => Some((
                vec![kernel[0], kernel[1], s.channels, filters],
                vec![filters],
            )),
            LayerKind::DepthwiseConv2d { kernel, .. } => {
                Some((vec![kernel[0], kernel[1], s.channels], vec![s.channels]))
            }
            LayerKind::PointwiseConv2d { filters } => {
                Some((vec![1, 1, s.channels, filters], vec![filters]))
            }
            LayerKind::Dense { units } => Some((vec![s.len(), units], vec![units])),
            _ => None,
        }
    }

    /// Fan-in and fan-out used by Glorot-uniform initialization.
    pub(crate) fn fans(&self) -> Option<(usize, usize)> {
        let s = self.input_shape;
        match self.kind {
            LayerKind::Conv2d {
                kernel, filters, ..
            } => {
                let area = kernel[0] * kernel[1];
                Some((area * s.channels, area * filters))
            }
            LayerKind::DepthwiseConv2d { kernel, .. } => {
                let area = kernel[0] * kernel[1];
                Some((area, area))
            }
            LayerKind::PointwiseConv2d { filters } => Some((s.channels, filters)),
            LayerKind::Dense { units } => Some((s.len(), units)),
            _ => None,
        }
    }

    pub fn has_params(&self) -> bool {
        self.param_shapes().is_some()
    }

    pub fn param_count(&self) -> u64 {
        self.param_shapes()
            .map(|(w, b)| (w.iter().product::<usize>() + b.iter().product::<usize>()) as u64)
            .unwrap_or(0)
    }

    /// Multiply-accumulate operations for one forward pass of this layer.
    pub fn mac_count(&self) -> u64 {
        let s = self.input_shape;
        let Ok(out) = self.output_shape() else {
            return 0;
        };
        let n = match self.kind {
            LayerKind::Conv2d {
                kernel, filters, ..
            } => out.height * out.width * filters * kernel[0] * kernel[1] * s.channels,
            LayerKind::DepthwiseConv2d { kernel, .. } => {
                out.height * out.width * s.channels * kernel[0] * kernel[1]
            }
            LayerKind::PointwiseConv2d { filters } => s.height * s.width * s.channels * filters,
            LayerKind::Dense { units } => s.len() * units,
            _ => 0,
        };
        n as u64
    }
}

/// One row of a parameter table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRow {
    pub name: String,
    pub count: u64,
}

/// Per-layer parameter counts (zero for activation, pooling and flatten
/// layers) and their total.
pub fn param_count<'a>(layers: impl IntoIterator<Item = &'a LayerSpec>) -> (Vec<ParamRow>, u64) {
    let rows: Vec<ParamRow> = layers
        .into_iter()
        .map(|l| ParamRow {
            name: l.name.clone(),
            count: l.param_count(),
        })
        .collect();
    let total = rows.iter().map(|r| r.count).sum();
    (rows, total)
}

/// Total MACs over the executed layers.
pub fn mac_count<'a>(executed: impl IntoIterator<Item = &'a LayerSpec>) -> u64 {
    executed.into_iter().map(LayerSpec::mac_count).sum()
}

/// Sequential layer builder that threads shapes through the stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerStack {
    input: Shape,
    layers: Vec<LayerSpec>,
}

impl LayerStack {
    pub fn new(input: Shape) -> Self {
        Self {
            input,
            layers: Vec::new(),
        }
    }

    /// Wraps already-built layers, checking that consecutive shapes chain.
    pub fn from_layers(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        let mut shape = input;
        for l in &layers {
            if l.input_shape != shape {
                return shape_err(format!(
                    "layer '{}' expects {} but receives {shape}",
                    l.name, l.input_shape
                ));
            }
            shape = l.output_shape()?;
        }
        Ok(Self { input, layers })
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_shape(&self) -> Shape {
        self.layers
            .last()
            .map(|l| l.output_shape().expect("validated on push"))
            .unwrap_or(self.input)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<LayerSpec> {
        self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn push(mut self, name: impl Into<String>, kind: LayerKind) -> Result<Self> {
        let layer = LayerSpec::new(name, kind, self.output_shape())?;
        self.layers.push(layer);
        Ok(self)
    }

    fn derived_name(&self, suffix: &str) -> String {
        match self.layers.last() {
            Some(l) => format!("{}/{suffix}", l.name),
            None => format!("input/{suffix}"),
        }
    }

    pub fn conv2d(self, name: &str, kernel: usize, stride: usize, filters: usize) -> Result<Self> {
        self.push(
            name,
            LayerKind::Conv2d {
                kernel: [kernel, kernel],
                stride,
                filters,
            },
        )
    }

    pub fn depthwise(self, name: &str, kernel: usize, stride: usize) -> Result<Self> {
        self.push(
            name,
            LayerKind::DepthwiseConv2d {
                kernel: [kernel, kernel],
                stride,
            },
        )
    }

    pub fn pointwise(self, name: &str, filters: usize) -> Result<Self> {
        self.push(name, LayerKind::PointwiseConv2d { filters })
    }

    pub fn maxpool(self, window: usize, stride: usize) -> Result<Self> {
        let name = self.derived_name("maxpool");
        self.push(
            name,
            LayerKind::MaxPool {
                window: [window, window],
                stride,
            },
        )
    }

    pub fn dense(self, name: &str, units: usize) -> Result<Self> {
        self.push(name, LayerKind::Dense { units })
    }

    pub fn relu(self) -> Result<Self> {
        let name = self.derived_name("relu");
        self.push(name, LayerKind::Relu)
    }

    pub fn flatten(self) -> Result<Self> {
        let name = self.derived_name("flatten");
        self.push(name, LayerKind::Flatten)
    }

    /// Flatten with an explicit name, for stacks that start with it.
    pub fn flatten_as(self, name: &str) -> Result<Self> {
        self.push(name, LayerKind::Flatten)
    }

    pub fn softmax(self) -> Result<Self> {
        let name = self.derived_name("softmax");
        self.push(name, LayerKind::Softmax)
    }
}
