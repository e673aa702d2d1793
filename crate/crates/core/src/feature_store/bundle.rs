//! The `SCMB` model bundle: everything needed to score one category.
//!
//! ```text
//! "SCMB"                       magic
//! u16                          version (1)
//! u32 + bytes                  JSON header (category, projection, config, calibration)
//! u32                          section count
//! per section:
//!   u16 + bytes                section name
//!   u32, u32                   rows, cols
//!   rows x cols f32            row-major payload
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::bytes::{checked_u32, put_f32s, put_u16, put_u32, Reader};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::projection::ProjectionSpec;
use crate::routing::RoutingBank;
use crate::structural::StructCalibration;

pub const BUNDLE_MAGIC: [u8; 4] = *b"SCMB";
pub const BUNDLE_VERSION: u16 = 1;

const MEMORY_SECTION: &str = "memory_bank";
const ROUTING_SECTION: &str = "routing_bank";
const UNIT_NORM_TOLERANCE: f64 = 1e-5;

/// A fitted category: memory bank, routing prototypes and structural
/// calibration, plus the configuration they were fitted under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub category_id: String,
    pub projection: ProjectionSpec,
    pub memory_bank: Array2<f32>,
    pub routing_bank: Array2<f32>,
    pub calibration: StructCalibration,
    pub config: PipelineConfig,
}

#[derive(Serialize, Deserialize)]
struct Header {
    category_id: String,
    projection: ProjectionSpec,
    config: PipelineConfig,
    calibration: StructCalibration,
}

impl ModelBundle {
    pub fn routing(&self) -> RoutingBank {
        RoutingBank::from_parts(self.category_id.clone(), self.routing_bank.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.projection.out_dim;
        if self.config.proj_out_dim != d {
            return Err(Error::dims("config projection dimension", d, self.config.proj_out_dim));
        }
        check_matrix(self.memory_bank.view(), d, MEMORY_SECTION)?;
        check_matrix(self.routing_bank.view(), d, ROUTING_SECTION)?;
        for (i, row) in self.routing_bank.rows().into_iter().enumerate() {
            let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::Invariant(format!(
                    "routing prototype {i} has norm {norm}, expected 1"
                )));
            }
        }
        self.calibration.validate()?;
        Ok(())
    }
}

fn check_matrix(m: ArrayView2<'_, f32>, cols: usize, name: &str) -> Result<()> {
    if m.nrows() == 0 {
        return Err(Error::Invariant(format!("{name} has no rows")));
    }
    if m.ncols() != cols {
        return Err(Error::dims(format!("{name} column count"), cols, m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}

pub fn encode_bundle(bundle: &ModelBundle) -> Result<Vec<u8>> {
    bundle.validate()?;
    encode_unchecked(bundle)
}

fn encode_unchecked(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        category_id: bundle.category_id.clone(),
        projection: bundle.projection.clone(),
        config: bundle.config.clone(),
        calibration: bundle.calibration.clone(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(&BUNDLE_MAGIC);
    put_u16(&mut out, BUNDLE_VERSION);
    put_u32(&mut out, checked_u32(header.len(), "header length")?);
    out.extend_from_slice(&header);
    put_u32(&mut out, 2);
    for (name, m) in [
        (MEMORY_SECTION, &bundle.memory_bank),
        (ROUTING_SECTION, &bundle.routing_bank),
    ] {
        put_u16(&mut out, name.len() as u16);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, checked_u32(m.nrows(), "rows")?);
        put_u32(&mut out, checked_u32(m.ncols(), "cols")?);
        put_f32s(&mut out, m.iter());
    }
    Ok(out)
}

pub fn decode_bundle(buf: &[u8]) -> Result<ModelBundle> {
    let mut r = Reader::new(buf);
    r.magic(BUNDLE_MAGIC)?;
    let version = r.u16("version")?;
    if version != BUNDLE_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: BUNDLE_VERSION,
        });
    }
    let header_len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)?;

    let sections = r.u32("section count")?;
    let mut memory_bank = None;
    let mut routing_bank = None;
    for _ in 0..sections {
        let name_len = r.u16("section name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "section name")?)
            .map_err(|_| Error::Malformed("section name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32("section rows")? as usize;
        let cols = r.u32("section cols")? as usize;
        r.ensure(rows as u64 * cols as u64, 4, "section payload")?;
        let values = r.f32s(rows * cols, "section payload")?;
        let m = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| Error::Malformed(e.to_string()))?;
        let slot = match name.as_str() {
            MEMORY_SECTION => &mut memory_bank,
            ROUTING_SECTION => &mut routing_bank,
            other => return Err(Error::Malformed(format!("unknown section {other:?}"))),
        };
        if slot.replace(m).is_some() {
            return Err(Error::Malformed(format!("duplicate section {name:?}")));
        }
    }
    r.finish("bundle sections")?;

    let bundle = ModelBundle {
        category_id: header.category_id,
        projection: header.projection,
        memory_bank: memory_bank
            .ok_or_else(|| Error::Malformed(format!("missing section {MEMORY_SECTION}")))?,
        routing_bank: routing_bank
            .ok_or_else(|| Error::Malformed(format!("missing section {ROUTING_SECTION}")))?,
        calibration: header.calibration,
        config: header.config,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_bundle(bundle)?)?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    decode_bundle(&fs::read(path)?)
}
