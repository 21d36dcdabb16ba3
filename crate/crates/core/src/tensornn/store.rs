use std::collections::BTreeSet;

use indexmap::IndexMap;
use rand::Rng;
use sha2::{Digest, Sha256};

use super::{LayerSpec, Scalar};
use crate::error::{shape_err, Error, Result};

pub fn weight_key(layer: &str) -> String {
    format!("{layer}.weight")
}

pub fn bias_key(layer: &str) -> String {
    format!("{layer}.bias")
}

/// A flat row-major parameter block with its logical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T = f32> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Block<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!(
                "block shape {shape:?} needs {n} values, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named parameter blocks in insertion (= serialization) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore<T = f32> {
    blocks: IndexMap<String, Block<T>>,
    frozen: BTreeSet<String>,
}

impl<T: Scalar> WeightStore<T> {
    pub fn new() -> Self {
        Self {
            blocks: IndexMap::new(),
            frozen: BTreeSet::new(),
        }
    }

    /// Glorot-uniform weights and zero biases for every parametrized layer.
    pub fn init<'a, R: Rng + ?Sized>(
        layers: impl IntoIterator<Item = &'a LayerSpec>,
        rng: &mut R,
    ) -> Self {
        let mut store = Self::new();
        for layer in layers {
            store.init_layer(layer, rng);
        }
        store
    }

    /// (Re)initializes the blocks of one layer.
    pub fn init_layer<R: Rng + ?Sized>(&mut self, layer: &LayerSpec, rng: &mut R) {
        let (Some((wshape, bshape)), Some((fan_in, fan_out))) =
            (layer.param_shapes(), layer.fans())
        else {
            return;
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = wshape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(rng.random_range(-limit..limit)))
            .collect();
        self.blocks.insert(
            weight_key(&layer.name),
            Block {
                shape: wshape,
                data,
            },
        );
        self.blocks
            .insert(bias_key(&layer.name), Block::zeros(bshape));
    }

    pub fn insert(&mut self, key: impl Into<String>, block: Block<T>) {
        self.blocks.insert(key.into(), block);
    }

    pub fn get(&self, key: &str) -> Option<&Block<T>> {
        self.blocks.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Block<T>> {
        self.blocks.get_mut(key)
    }

    pub fn remove(&mut self, key: &str) -> Option<Block<T>> {
        self.frozen.remove(key);
        self.blocks.shift_remove(key)
    }

    /// Weight and bias blocks of a parametrized layer.
    pub fn layer(&self, layer: &str) -> Result<(&Block<T>, &Block<T>)> {
        let w = self.blocks.get(&weight_key(layer));
        let b = self.blocks.get(&bias_key(layer));
        match (w, b) {
            (Some(w), Some(b)) => Ok((w, b)),
            _ => Err(Error::Format(format!(
                "no weights stored for layer '{layer}'"
            ))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Block<T>)> {
        self.blocks.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.blocks.keys()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn total_params(&self) -> u64 {
        self.blocks.values().map(|b| b.len() as u64).sum()
    }

    pub fn freeze(&mut self, key: &str) {
        self.frozen.insert(key.to_string());
    }

    pub fn freeze_layer(&mut self, layer: &str) {
        self.freeze(&weight_key(layer));
        self.freeze(&bias_key(layer));
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    pub fn is_frozen(&self, key: &str) -> bool {
        self.frozen.contains(key)
    }

    pub fn frozen_keys(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    pub(crate) fn set_frozen(&mut self, frozen: BTreeSet<String>) {
        self.frozen = frozen;
    }

    /// Checks that every parametrized layer has blocks of the implied shape.
    pub fn validate<'a>(&self, layers: impl IntoIterator<Item = &'a LayerSpec>) -> Result<()> {
        for layer in layers {
            let Some((wshape, bshape)) = layer.param_shapes() else {
                continue;
            };
            let (w, b) = self.layer(&layer.name)?;
            if w.shape != wshape || b.shape != bshape {
                return shape_err(format!(
                    "layer '{}': stored blocks {:?}/{:?}, expected {wshape:?}/{bshape:?}",
                    layer.name, w.shape, b.shape
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 over the little-endian bytes of the selected blocks.
    pub fn checksum<'k>(&self, keys: impl IntoIterator<Item = &'k str>) -> String {
        let mut h = Sha256::new();
        for key in keys {
            if let Some(block) = self.blocks.get(key) {
                h.update(key.as_bytes());
                for v in &block.data {
                    h.update(v.as_f64().to_le_bytes());
                }
            }
        }
        format!("{:x}", h.finalize())
    }

    pub fn cast<U: Scalar>(&self) -> WeightStore<U> {
        WeightStore {
            blocks: self
                .blocks
                .iter()
                .map(|(k, b)| {
                    let data = b.data.iter().map(|v| U::from_f64(v.as_f64())).collect();
                    (
                        k.clone(),
                        Block {
                            shape: b.shape.clone(),
                            data,
                        },
                    )
                })
                .collect(),
            frozen: self.frozen.clone(),
        }
    }
}

/// Loss gradients, keyed and shaped like the trainable part of a
/// [`WeightStore`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientStore<T = f32> {
    blocks: IndexMap<String, Block<T>>,
}

impl<T: Scalar> GradientStore<T> {
    pub fn new() -> Self {
        Self {
            blocks: IndexMap::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&Block<T>> {
        self.blocks.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Block<T>)> {
        self.blocks.iter()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub(crate) fn insert(&mut self, key: String, block: Block<T>) {
        self.blocks.insert(key, block);
    }

    /// Elementwise accumulation; missing keys are adopted from `other`.
    pub fn accumulate(&mut self, other: &GradientStore<T>) -> Result<()> {
        for (key, g) in &other.blocks {
            match self.blocks.get_mut(key) {
                Some(acc) => {
                    if acc.shape != g.shape {
                        return shape_err(format!("gradient block '{key}' shape mismatch"));
                    }
                    for (a, v) in acc.data.iter_mut().zip(&g.data) {
                        *a += *v;
                    }
                }
                None => {
                    self.blocks.insert(key.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for block in self.blocks.values_mut() {
            for v in &mut block.data {
                *v = *v * factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blocks
            .values()
            .all(|b| b.data.iter().all(|v| v.is_finite()))
    }
}
