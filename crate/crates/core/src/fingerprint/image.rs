use crate::error::{invalid, Result};
use crate::tensornn::{Shape, Tensor3};

/// Signal level substituted for a WAP that was not observed.
pub const MISSING_DBM: f32 = -100.0;
pub const MAX_DBM: f32 = 0.0;

/// Maps dBm in [-100, 0] linearly onto [0, 255], rounding halves up.
/// Out-of-range values are clamped first.
pub fn normalize_rssi(dbm: f64) -> Result<u8> {
    if !dbm.is_finite() {
        return invalid(format!("RSSI value {dbm} is not finite"));
    }
    let clamped = dbm.clamp(MISSING_DBM as f64, MAX_DBM as f64);
    let scaled = 255.0 * (clamped + 100.0) / 100.0;
    Ok((scaled + 0.5).floor() as u8)
}

/// Square single-channel image; pixel `i` holds WAP `i` of the index and
/// the tail beyond the vector length is zero padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FingerprintImage {
    side: usize,
    pixels: Vec<u8>,
}

impl FingerprintImage {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Network input: pixels scaled to [0, 1].
    pub fn to_tensor(&self) -> Tensor3<f32> {
        let data = self.pixels.iter().map(|&p| p as f32 / 255.0).collect();
        Tensor3::new(Shape::new(self.side, self.side, 1), data).expect("side² pixels")
    }
}

/// Smallest `s` with `s² >= n`.
pub(crate) fn image_side(n: usize) -> usize {
    let mut s = (n as f64).sqrt().floor() as usize;
    while s * s < n {
        s += 1;
    }
    while s > 0 && (s - 1) * (s - 1) >= n {
        s -= 1;
    }
    s
}

/// Row-major encoding of an RSSI vector in WAP-index order.
pub fn encode_image(rssi: &[f32]) -> Result<FingerprintImage> {
    if rssi.is_empty() {
        return invalid("cannot encode an empty RSSI vector");
    }
    let side = image_side(rssi.len());
    let mut pixels = vec![0u8; side * side];
    for (p, &v) in pixels.iter_mut().zip(rssi) {
        *p = normalize_rssi(v as f64)?;
    }
    Ok(FingerprintImage { side, pixels })
}
