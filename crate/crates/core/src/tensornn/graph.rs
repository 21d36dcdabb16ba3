use super::ops::*;
use super::{
    bias_key, weight_key, GradientStore, LayerKind, LayerSpec, Scalar, Tensor3, WeightStore,
};
use crate::error::{invalid, shape_err, Result};

/// Input followed by the output of every layer of a path.
pub type Activations<T> = Vec<Tensor3<T>>;

/// Max-subtracted softmax; the normalizer is accumulated in `f64`.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return invalid("softmax of an empty vector");
    }
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let exps: Vec<f64> = logits.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| T::from_f64(e / sum)).collect())
}

pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln(p_true)` with the probability clamped to at least `1e-12`.
pub fn cross_entropy_loss<T: Scalar>(probs: &[T], true_class: usize) -> Result<f64> {
    let Some(p) = probs.get(true_class) else {
        return invalid(format!(
            "class {true_class} out of range for {} outputs",
            probs.len()
        ));
    };
    Ok(-p.as_f64().max(PROB_FLOOR).ln())
}

pub(crate) fn forward_layer<T: Scalar>(
    layer: &LayerSpec,
    weights: &WeightStore<T>,
    input: &Tensor3<T>,
) -> Result<Tensor3<T>> {
    if input.shape() != layer.input_shape {
        return shape_err(format!(
            "layer '{}' expects {} but received {}",
            layer.name,
            layer.input_shape,
            input.shape()
        ));
    }
    match layer.kind {
        LayerKind::Conv2d { stride, .. } => {
            let (w, b) = weights.layer(&layer.name)?;
            conv2d_forward(input, w, b, stride)
        }
        LayerKind::DepthwiseConv2d { stride, .. } => {
            let (w, b) = weights.layer(&layer.name)?;
            depthwise_conv2d_forward(input, w, b, stride)
        }
        LayerKind::PointwiseConv2d { .. } => {
            let (w, b) = weights.layer(&layer.name)?;
            pointwise_conv2d_forward(input, w, b)
        }
        LayerKind::MaxPool { window, stride } => maxpool_forward(input, window, stride),
        LayerKind::Dense { .. } => {
            let (w, b) = weights.layer(&layer.name)?;
            Ok(Tensor3::from_vec(dense_forward(input.data(), w, b)?))
        }
        LayerKind::Relu => Ok(relu(input)),
        LayerKind::Softmax => Ok(Tensor3::from_vec(softmax(input.data())?)),
        LayerKind::Flatten => Ok(input.clone().flattened()),
    }
}

/// Runs `layers` in order and returns the output of the last one.
pub fn predict<T: Scalar>(
    layers: &[&LayerSpec],
    weights: &WeightStore<T>,
    input: &Tensor3<T>,
) -> Result<Tensor3<T>> {
    let mut x = std::borrow::Cow::Borrowed(input);
    for layer in layers {
        x = std::borrow::Cow::Owned(forward_layer(layer, weights, &x)?);
    }
    Ok(x.into_owned())
}

/// Runs `layers` in order keeping every intermediate activation.
pub fn forward_path<T: Scalar>(
    layers: &[&LayerSpec],
    weights: &WeightStore<T>,
    input: &Tensor3<T>,
) -> Result<Activations<T>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input.clone());
    for layer in layers {
        let next = forward_layer(layer, weights, acts.last().expect("non-empty"))?;
        acts.push(next);
    }
    Ok(acts)
}

/// Index of the first maximal element.
pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn trainable<T: Scalar>(layer: &LayerSpec, weights: &WeightStore<T>) -> bool {
    layer.has_params()
        && !(weights.is_frozen(&weight_key(&layer.name))
            && weights.is_frozen(&bias_key(&layer.name)))
}

/// Reverse-mode gradients of the cross-entropy loss of a path ending in
/// softmax. Frozen blocks get no gradient entry, and propagation stops at
/// the shallowest trainable layer. Returns the loss alongside.
pub fn backward<T: Scalar>(
    layers: &[&LayerSpec],
    weights: &WeightStore<T>,
    input: &Tensor3<T>,
    true_class: usize,
) -> Result<(f64, GradientStore<T>)> {
    backward_with_prediction(layers, weights, input, true_class).map(|(l, _, g)| (l, g))
}

/// [`backward`] that also reports the argmax of the forward pass.
pub(crate) fn backward_with_prediction<T: Scalar>(
    layers: &[&LayerSpec],
    weights: &WeightStore<T>,
    input: &Tensor3<T>,
    true_class: usize,
) -> Result<(f64, usize, GradientStore<T>)> {
    match layers.last() {
        Some(l) if l.kind == LayerKind::Softmax => {}
        _ => return invalid("backward needs a path that ends in softmax"),
    }
    let acts = forward_path(layers, weights, input)?;
    let probs = acts.last().expect("non-empty").data();
    let loss = cross_entropy_loss(probs, true_class)?;
    let predicted = argmax(probs);

    let mut grads = GradientStore::new();
    let Some(lowest) = layers.iter().position(|l| trainable(l, weights)) else {
        return Ok((loss, predicted, grads));
    };

    let p_true = probs[true_class].as_f64();
    let mut g = vec![T::zero(); probs.len()];
    if p_true >= PROB_FLOOR {
        g[true_class] = T::from_f64(-1.0 / p_true);
    }
    let mut grad = Tensor3::from_vec(g);

    for i in (lowest..layers.len()).rev() {
        let layer = layers[i];
        let x = &acts[i];
        let need_input = i > lowest;
        let mut store = |key: String, block| {
            if !weights.is_frozen(&key) {
                grads.insert(key, block);
            }
        };
        grad = match layer.kind {
            LayerKind::Softmax => {
                let p = acts[i + 1].data();
                let dot: T = p.iter().zip(grad.data()).map(|(&a, &b)| a * b).sum();
                let d = p
                    .iter()
                    .zip(grad.data())
                    .map(|(&pi, &gi)| pi * (gi - dot))
                    .collect();
                Tensor3::from_parts(x.shape(), d)
            }
            LayerKind::Relu => relu_backward(x, &grad),
            LayerKind::Flatten => grad.reshaped(x.shape())?,
            LayerKind::MaxPool { window, stride } => maxpool_backward(x, window, stride, &grad)?,
            LayerKind::Conv2d { stride, .. } => {
                let (w, _) = weights.layer(&layer.name)?;
                let cg = conv2d_backward(x, w, &grad, stride, need_input)?;
                store(weight_key(&layer.name), cg.d_weight);
                store(bias_key(&layer.name), cg.d_bias);
                cg.d_input.unwrap_or_else(|| Tensor3::zeros(x.shape()))
            }
            LayerKind::DepthwiseConv2d { stride, .. } => {
                let (w, _) = weights.layer(&layer.name)?;
                let cg = depthwise_conv2d_backward(x, w, &grad, stride, need_input)?;
                store(weight_key(&layer.name), cg.d_weight);
                store(bias_key(&layer.name), cg.d_bias);
                cg.d_input.unwrap_or_else(|| Tensor3::zeros(x.shape()))
            }
            LayerKind::PointwiseConv2d { .. } => {
                let (w, _) = weights.layer(&layer.name)?;
                let cg = pointwise_conv2d_backward(x, w, &grad, need_input)?;
                store(weight_key(&layer.name), cg.d_weight);
                store(bias_key(&layer.name), cg.d_bias);
                cg.d_input.unwrap_or_else(|| Tensor3::zeros(x.shape()))
            }
            LayerKind::Dense { .. } => {
                let (w, _) = weights.layer(&layer.name)?;
                let (dx, dw, db) = dense_backward(x.data(), w, grad.data(), need_input)?;
                store(weight_key(&layer.name), dw);
                store(bias_key(&layer.name), db);
                match dx {
                    Some(dx) => Tensor3::from_parts(x.shape(), dx),
                    None => Tensor3::zeros(x.shape()),
                }
            }
        };
    }
    Ok((loss, predicted, grads))
}
