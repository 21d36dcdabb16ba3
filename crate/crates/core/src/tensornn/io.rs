//! Manifest + blob weight files.
//!
//! The manifest is JSON; the blob is every block's values as little-endian
//! `f32`, row-major, concatenated in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Block, LayerSpec, LayerStack, Shape, WeightStore};
use crate::error::{Error, Result};

pub const MAGIC: &str = "QLOC";
pub const FORMAT_VERSION: u32 = 1;

/// Location of one block inside the blob, in bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

/// Manifest for a single sequential stack.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StackManifest {
    pub magic: String,
    pub format_version: u32,
    pub input_shape: Shape,
    pub layers: Vec<LayerSpec>,
    pub blob: String,
    pub blocks: Vec<BlockEntry>,
}

/// Blob file that sits next to `manifest`.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub(crate) fn blob_name(manifest: &Path) -> String {
    blob_path(manifest)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "weights.bin".into())
}

pub fn encode_blocks(weights: &WeightStore<f32>) -> (Vec<BlockEntry>, Vec<u8>) {
    let mut entries = Vec::with_capacity(weights.len());
    let mut blob = Vec::with_capacity(weights.total_params() as usize * 4);
    for (name, block) in weights.iter() {
        let offset = blob.len() as u64;
        for v in &block.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(BlockEntry {
            name: name.clone(),
            shape: block.shape.clone(),
            offset,
            length: blob.len() as u64 - offset,
        });
    }
    (entries, blob)
}

pub fn decode_blocks(entries: &[BlockEntry], blob: &[u8]) -> Result<WeightStore<f32>> {
    let mut store = WeightStore::new();
    let mut expected_offset = 0u64;
    for e in entries {
        let n: usize = e.shape.iter().product();
        if e.length != n as u64 * 4 {
            return Err(Error::Format(format!(
                "block '{}': length {} does not match shape {:?}",
                e.name, e.length, e.shape
            )));
        }
        if e.offset != expected_offset {
            return Err(Error::Format(format!(
                "block '{}' is not contiguous at offset {}",
                e.name, e.offset
            )));
        }
        let end = e.offset + e.length;
        if end > blob.len() as u64 {
            return Err(Error::Format(format!(
                "block '{}' runs past the end of the blob",
                e.name
            )));
        }
        let data: Vec<f32> = blob[e.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "block '{}' holds non-finite values",
                e.name
            )));
        }
        if store.get(&e.name).is_some() {
            return Err(Error::Format(format!("block '{}' listed twice", e.name)));
        }
        store.insert(e.name.clone(), Block::new(e.shape.clone(), data)?);
        expected_offset = end;
    }
    if expected_offset != blob.len() as u64 {
        return Err(Error::Format(format!(
            "blob has {} bytes, manifest accounts for {expected_offset}",
            blob.len()
        )));
    }
    Ok(store)
}

pub(crate) fn check_header(magic: &str, version: u32) -> Result<()> {
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic '{magic}'")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version}"
        )));
    }
    Ok(())
}

/// Writes `manifest` as JSON and the blob next to it.
pub(crate) fn write_pair<M: Serialize>(path: &Path, manifest: &M, blob: &[u8]) -> Result<()> {
    fs::write(blob_path(path), blob)?;
    fs::write(path, serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

pub(crate) fn read_blob(manifest_path: &Path, blob: &str) -> Result<Vec<u8>> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    Ok(fs::read(dir.join(blob))?)
}

pub fn save_stack(path: &Path, stack: &LayerStack, weights: &WeightStore<f32>) -> Result<()> {
    weights.validate(stack.layers())?;
    let (blocks, blob) = encode_blocks(weights);
    let manifest = StackManifest {
        magic: MAGIC.into(),
        format_version: FORMAT_VERSION,
        input_shape: stack.input_shape(),
        layers: stack.layers().to_vec(),
        blob: blob_name(path),
        blocks,
    };
    write_pair(path, &manifest, &blob)
}

pub fn load_stack(path: &Path) -> Result<(LayerStack, WeightStore<f32>)> {
    let manifest: StackManifest = serde_json::from_slice(&fs::read(path)?)?;
    check_header(&manifest.magic, manifest.format_version)?;
    let stack = LayerStack::from_layers(manifest.input_shape, manifest.layers)?;
    let weights = decode_blocks(&manifest.blocks, &read_blob(path, &manifest.blob)?)?;
    weights.validate(stack.layers())?;
    Ok((stack, weights))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small() -> (LayerStack, WeightStore<f32>) {
        let stack = LayerStack::new(Shape::new(4, 4, 1))
            .conv2d("c", 2, 1, 3)
            .unwrap()
            .relu()
            .unwrap()
            .flatten()
            .unwrap()
            .dense("d", 2)
            .unwrap()
            .softmax()
            .unwrap();
        let w = WeightStore::init(stack.layers(), &mut ChaCha8Rng::seed_from_u64(1));
        (stack, w)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let (stack, w) = small();
        save_stack(&path, &stack, &w).unwrap();
        let (s2, w2) = load_stack(&path).unwrap();
        assert_eq!(stack, s2);
        for ((ka, a), (kb, b)) in w.iter().zip(w2.iter()) {
            assert_eq!(ka, kb);
            assert_eq!(a.shape, b.shape);
            let bits_a: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncated_blob() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let (stack, w) = small();
        save_stack(&path, &stack, &w).unwrap();

        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"QLOC\"", "\"XXXX\"");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_stack(&path), Err(Error::Format(_))));

        save_stack(&path, &stack, &w).unwrap();
        let blob = fs::read(blob_path(&path)).unwrap();
        fs::write(blob_path(&path), &blob[..blob.len() - 4]).unwrap();
        assert!(matches!(load_stack(&path), Err(Error::Format(_))));
    }
}
