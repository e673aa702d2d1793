//! Binary on-disk formats: per-image patch features (`SCFT`), ground-truth
//! masks (`SCMK`) and fitted model bundles (`SCMB`).
//!
//! All numeric data is little-endian and stored bit-exactly.

mod bundle;
mod bytes;
mod features;

pub use bundle::{
    decode_bundle, encode_bundle, load_bundle, save_bundle, ModelBundle, BUNDLE_MAGIC,
    BUNDLE_VERSION,
};
pub use features::{
    decode_features, encode_features, read_feature_file, read_mask_file, write_feature_file,
    write_mask_file, Label, LayerFeatures, PatchFeatureSet, PixelMask, FEATURE_MAGIC,
    FEATURE_VERSION, MASK_MAGIC, MASK_VERSION,
};
