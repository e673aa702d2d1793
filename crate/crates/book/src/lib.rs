//! The guide in `book/src`, compiled so its listings run as doctests.
//!
//! Each chapter becomes the documentation of an empty module.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/feature-files.md")]
pub mod feature_files {}

#[doc = include_str!("../../../book/src/projection.md")]
pub mod projection {}

#[doc = include_str!("../../../book/src/coreset.md")]
pub mod coreset {}

#[doc = include_str!("../../../book/src/maps.md")]
pub mod maps {}

#[doc = include_str!("../../../book/src/structural.md")]
pub mod structural {}

#[doc = include_str!("../../../book/src/routing.md")]
pub mod routing {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/bundles.md")]
pub mod bundles {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
