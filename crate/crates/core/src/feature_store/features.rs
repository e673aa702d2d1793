//! The `SCFT` patch-feature file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SCFT"                       magic
//! u16                          version (1)
//! u32 + bytes                  image id (UTF-8)
//! u32                          layer count L
//! L x (i32, u32, u32)          layer id, patch count P, channel count d
//! u32, u32                     grid_h, grid_w
//! u8                           label: 0 good, 1 anomalous, 255 unknown
//! u8                           mask flag: 0 absent, 1 present
//! [u32, u32]                   mask height, width (only when flagged)
//! L x (P x d f32)              row-major patch tokens, in header order
//! [height x width u8]          pixel mask, 0 or 1 (only when flagged)
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::bytes::{checked_u32, put_f32s, put_i32, put_u16, put_u32, Reader};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"SCFT";
pub const FEATURE_VERSION: u16 = 1;

const LABEL_GOOD: u8 = 0;
const LABEL_ANOMALOUS: u8 = 1;
const LABEL_UNKNOWN: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Good,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }
}

/// Patch tokens of one backbone layer, `P x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFeatures {
    pub layer_id: i32,
    pub tokens: Array2<f32>,
}

/// Binary ground-truth defect mask, stored row-major with values 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl PixelMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Invariant("pixel mask must be at least 1x1".into()));
        }
        if data.len() != height * width {
            return Err(Error::dims("pixel mask data", height * width, data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Invariant("pixel mask values must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn has_defect(&self) -> bool {
        self.data.iter().any(|&v| v == 1)
    }
}

/// All patch features extracted from one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureSet {
    pub image_id: String,
    pub grid_h: usize,
    pub grid_w: usize,
    pub layers: Vec<LayerFeatures>,
    pub label: Option<Label>,
    pub pixel_mask: Option<PixelMask>,
}

impl PatchFeatureSet {
    pub fn patch_count(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn layer_ids(&self) -> Vec<i32> {
        self.layers.iter().map(|l| l.layer_id).collect()
    }

    /// Total channel count after concatenating every layer.
    pub fn fused_dim(&self) -> usize {
        self.layers.iter().map(|l| l.tokens.ncols()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Invariant(format!(
                "feature set {:?} has no layers",
                self.image_id
            )));
        }
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::Invariant("token grid must be at least 1x1".into()));
        }
        let p = self.patch_count();
        for (i, layer) in self.layers.iter().enumerate() {
            if self.layers[..i].iter().any(|l| l.layer_id == layer.layer_id) {
                return Err(Error::Invariant(format!(
                    "duplicate layer id {}",
                    layer.layer_id
                )));
            }
            if layer.tokens.nrows() != p {
                return Err(Error::dims(
                    format!("patch count of layer {}", layer.layer_id),
                    p,
                    layer.tokens.nrows(),
                ));
            }
            if layer.tokens.ncols() == 0 {
                return Err(Error::Invariant(format!(
                    "layer {} has zero channels",
                    layer.layer_id
                )));
            }
            if layer.tokens.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {}", layer.layer_id)));
            }
        }
        Ok(())
    }
}

/// Serializes a validated feature set into `SCFT` bytes.
pub fn encode_features(set: &PatchFeatureSet) -> Result<Vec<u8>> {
    set.validate()?;
    let payload: usize = set.layers.iter().map(|l| l.tokens.len() * 4).sum();
    let mut out = Vec::with_capacity(64 + set.image_id.len() + 12 * set.layers.len() + payload);
    out.extend_from_slice(&FEATURE_MAGIC);
    put_u16(&mut out, FEATURE_VERSION);
    put_u32(&mut out, checked_u32(set.image_id.len(), "image id length")?);
    out.extend_from_slice(set.image_id.as_bytes());
    put_u32(&mut out, checked_u32(set.layers.len(), "layer count")?);
    for layer in &set.layers {
        put_i32(&mut out, layer.layer_id);
        put_u32(&mut out, checked_u32(layer.tokens.nrows(), "patch count")?);
        put_u32(&mut out, checked_u32(layer.tokens.ncols(), "channel count")?);
    }
    put_u32(&mut out, checked_u32(set.grid_h, "grid_h")?);
    put_u32(&mut out, checked_u32(set.grid_w, "grid_w")?);
    out.push(match set.label {
        Some(Label::Good) => LABEL_GOOD,
        Some(Label::Anomalous) => LABEL_ANOMALOUS,
        None => LABEL_UNKNOWN,
    });
    match &set.pixel_mask {
        Some(mask) => {
            out.push(1);
            put_u32(&mut out, checked_u32(mask.height, "mask height")?);
            put_u32(&mut out, checked_u32(mask.width, "mask width")?);
        }
        None => out.push(0),
    }
    for layer in &set.layers {
        put_f32s(&mut out, layer.tokens.iter());
    }
    if let Some(mask) = &set.pixel_mask {
        out.extend_from_slice(&mask.data);
    }
    Ok(out)
}

/// Parses `SCFT` bytes. Every length field is checked against the bytes that
/// remain before anything is allocated.
pub fn decode_features(buf: &[u8]) -> Result<PatchFeatureSet> {
    let mut r = Reader::new(buf);
    r.magic(FEATURE_MAGIC)?;
    let version = r.u16("version")?;
    if version != FEATURE_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let id_len = r.u32("image id length")? as usize;
    let image_id = String::from_utf8(r.take(id_len, "image id")?.to_vec())
        .map_err(|_| Error::Malformed("image id is not valid UTF-8".into()))?;

    let n_layers = r.u32("layer count")? as u64;
    r.ensure(n_layers, 12, "layer table")?;
    let mut shapes = Vec::with_capacity(n_layers as usize);
    for _ in 0..n_layers {
        let id = r.i32("layer id")?;
        let p = r.u32("patch count")? as usize;
        let d = r.u32("channel count")? as usize;
        shapes.push((id, p, d));
    }
    let grid_h = r.u32("grid_h")? as usize;
    let grid_w = r.u32("grid_w")? as usize;
    let label = match r.u8("label")? {
        LABEL_GOOD => Some(Label::Good),
        LABEL_ANOMALOUS => Some(Label::Anomalous),
        LABEL_UNKNOWN => None,
        other => return Err(Error::Malformed(format!("unknown label byte {other}"))),
    };
    let mask_dims = match r.u8("mask flag")? {
        0 => None,
        1 => Some((
            r.u32("mask height")? as usize,
            r.u32("mask width")? as usize,
        )),
        other => return Err(Error::Malformed(format!("unknown mask flag {other}"))),
    };

    let mut layers = Vec::with_capacity(shapes.len());
    for (layer_id, p, d) in shapes {
        let count = (p as u64)
            .checked_mul(d as u64)
            .ok_or_else(|| Error::Malformed("layer shape overflows".into()))?;
        r.ensure(count, 4, "layer payload")?;
        let values = r.f32s(count as usize, "layer payload")?;
        let tokens = Array2::from_shape_vec((p, d), values)
            .map_err(|e| Error::Malformed(e.to_string()))?;
        layers.push(LayerFeatures { layer_id, tokens });
    }
    let pixel_mask = match mask_dims {
        Some((h, w)) => {
            let n = r.ensure(h as u64, w as u64, "mask payload")?;
            let data = r.take(n, "mask payload")?.to_vec();
            Some(PixelMask::new(h, w, data)?)
        }
        None => None,
    };
    r.finish("feature payload")?;

    let set = PatchFeatureSet {
        image_id,
        grid_h,
        grid_w,
        layers,
        label,
        pixel_mask,
    };
    set.validate()?;
    Ok(set)
}

pub fn write_feature_file(set: &PatchFeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_features(set)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<PatchFeatureSet> {
    decode_features(&fs::read(path)?)
}

pub const MASK_MAGIC: [u8; 4] = *b"SCMK";
pub const MASK_VERSION: u16 = 1;

/// Standalone mask file: `"SCMK"`, u16 version, u32 height, u32 width, then
/// `height * width` bytes of 0/1.
pub fn write_mask_file(mask: &PixelMask, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::with_capacity(14 + mask.data.len());
    out.extend_from_slice(&MASK_MAGIC);
    put_u16(&mut out, MASK_VERSION);
    put_u32(&mut out, checked_u32(mask.height, "mask height")?);
    put_u32(&mut out, checked_u32(mask.width, "mask width")?);
    out.extend_from_slice(&mask.data);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_mask_file(path: impl AsRef<Path>) -> Result<PixelMask> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf);
    r.magic(MASK_MAGIC)?;
    let version = r.u16("version")?;
    if version != MASK_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: MASK_VERSION,
        });
    }
    let h = r.u32("mask height")? as usize;
    let w = r.u32("mask width")? as usize;
    let n = r.ensure(h as u64, w as u64, "mask payload")?;
    let data = r.take(n, "mask payload")?.to_vec();
    r.finish("mask payload")?;
    PixelMask::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_layer_set() -> PatchFeatureSet {
        PatchFeatureSet {
            image_id: "img".into(),
            grid_h: 2,
            grid_w: 2,
            layers: vec![
                LayerFeatures {
                    layer_id: -1,
                    tokens: Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f32 * 0.25),
                },
                LayerFeatures {
                    layer_id: -3,
                    tokens: Array2::from_shape_fn((4, 3), |(i, j)| -((i + j) as f32) / 3.0),
                },
            ],
            label: Some(Label::Good),
            pixel_mask: None,
        }
    }

    #[test]
    fn file_size_matches_layout() {
        // magic 4 + version 2 + id (4 + 3) + layer count 4 + 2 layers x 12
        // + grid 8 + label 1 + mask flag 1 = 51 header bytes.
        let header = 4 + 2 + (4 + 3) + 4 + 2 * 12 + 8 + 1 + 1;
        assert_eq!(header, 51);
        let bytes = encode_features(&two_layer_set()).unwrap();
        assert_eq!(bytes.len(), header + 2 * 4 * 3 * 4);
    }

    #[test]
    fn round_trip_in_memory() {
        let mut set = two_layer_set();
        set.pixel_mask = Some(PixelMask::new(2, 3, vec![0, 1, 1, 0, 0, 1]).unwrap());
        set.label = None;
        let back = decode_features(&encode_features(&set).unwrap()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.scft");
        let set = two_layer_set();
        write_feature_file(&set, &path).unwrap();
        assert_eq!(read_feature_file(&path).unwrap(), set);
    }

    #[test]
    fn zero_layer_set_is_rejected() {
        let mut set = two_layer_set();
        set.layers.clear();
        assert!(matches!(encode_features(&set), Err(Error::Invariant(_))));
    }

    #[test]
    fn inconsistent_patch_count_is_rejected() {
        let mut set = two_layer_set();
        set.layers[1].tokens = array![[1.0f32, 2.0, 3.0]];
        assert!(matches!(
            encode_features(&set),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn nan_is_rejected_before_writing() {
        let mut set = two_layer_set();
        set.layers[0].tokens[[1, 1]] = f32::NAN;
        assert!(matches!(encode_features(&set), Err(Error::NonFinite(_))));
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode_features(&two_layer_set()).unwrap();
        bytes[0] ^= 0xff;
        assert!(matches!(decode_features(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_features(&two_layer_set()).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_features(&bytes),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode_features(&two_layer_set()).unwrap();
        bytes.pop();
        assert!(matches!(decode_features(&bytes), Err(Error::Truncated { .. })));
    }

    #[test]
    fn nan_payload() {
        let mut bytes = encode_features(&two_layer_set()).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_features(&bytes), Err(Error::NonFinite(_))));
    }

    #[test]
    fn huge_length_fields_do_not_allocate() {
        let mut bytes = encode_features(&two_layer_set()).unwrap();
        // layer count field sits right after the 3-byte image id
        bytes[13..17].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_features(&bytes), Err(Error::Truncated { .. })));

        let mut bytes = encode_features(&two_layer_set()).unwrap();
        // patch count of the first layer
        bytes[21..25].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_features(&bytes), Err(Error::Truncated { .. })));
    }

    #[test]
    fn trailing_bytes_are_malformed() {
        let mut bytes = encode_features(&two_layer_set()).unwrap();
        bytes.push(0);
        assert!(matches!(decode_features(&bytes), Err(Error::Malformed(_))));
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.scmk");
        let mask = PixelMask::new(3, 2, vec![1, 0, 0, 0, 1, 1]).unwrap();
        write_mask_file(&mask, &path).unwrap();
        assert_eq!(read_mask_file(&path).unwrap(), mask);
    }

    #[test]
    fn mask_values_must_be_binary() {
        assert!(PixelMask::new(1, 2, vec![0, 2]).is_err());
        assert!(PixelMask::new(1, 2, vec![0]).is_err());
    }
}
