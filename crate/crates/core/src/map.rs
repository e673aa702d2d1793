//! Anomaly maps: patch-grid reshape, bilinear upsampling, Gaussian smoothing
//! and max pooling.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::PatchScores;

/// An `H x W` anomaly score grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    data: Array2<f32>,
    smoothed: bool,
    source_grid: (usize, usize),
}

impl AnomalyMap {
    pub fn new(data: Array2<f32>, smoothed: bool, source_grid: (usize, usize)) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Invariant("anomaly map must be at least 1x1".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("anomaly map".into()));
        }
        Ok(Self {
            data,
            smoothed,
            source_grid,
        })
    }

    /// Wraps raw map data that did not come from a patch grid.
    pub fn from_array(data: Array2<f32>) -> Result<Self> {
        let grid = data.dim();
        Self::new(data, false, grid)
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_smoothed(&self) -> bool {
        self.smoothed
    }

    pub fn source_grid(&self) -> (usize, usize) {
        self.source_grid
    }

    /// Raw little-endian f32 bytes, row-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Resamples `src` to `out_h x out_w` with half-pixel-center alignment:
/// source coordinate `(dst + 0.5) * in / out - 0.5`, clamped to the grid.
pub fn bilinear_resize(src: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (in_h, in_w) = src.dim();
    let rows = sample_positions(in_h, out_h);
    let cols = sample_positions(in_w, out_w);
    let mut out = Array2::<f32>::zeros((out_h, out_w));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(rows.par_iter())
        .for_each(|(mut dst, &(y0, y1, fy))| {
            for (d, &(x0, x1, fx)) in dst.iter_mut().zip(&cols) {
                let top = src[[y0, x0]] as f64 * (1.0 - fx) + src[[y0, x1]] as f64 * fx;
                let bottom = src[[y1, x0]] as f64 * (1.0 - fx) + src[[y1, x1]] as f64 * fx;
                *d = (top * (1.0 - fy) + bottom * fy) as f32;
            }
        });
    out
}

fn sample_positions(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    let last = (n_in - 1) as f64;
    (0..n_out)
        .map(|dst| {
            let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Normalized 1-D Gaussian taps with radius `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / denom).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Reflect ("d c b a | a b c d | d c b a") index into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn convolve_line(src: &[f64], taps: &[f64], dst: &mut [f64]) {
    let n = src.len();
    let radius = (taps.len() / 2) as isize;
    for (i, out) in dst.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (t, w) in taps.iter().enumerate() {
            acc += w * src[reflect(i as isize + t as isize - radius, n)];
        }
        *out = acc;
    }
}

/// Separable Gaussian blur with reflect padding. `sigma == 0` returns the
/// input unchanged.
pub fn gaussian_blur(src: &Array2<f32>, sigma: f64) -> Array2<f32> {
    if sigma <= 0.0 {
        return src.clone();
    }
    let taps = gaussian_kernel(sigma);
    let (h, w) = src.dim();

    let mut horizontal = Array2::<f64>::zeros((h, w));
    horizontal
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(src.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut dst, row)| {
            let line: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            let mut out = vec![0.0; w];
            convolve_line(&line, &taps, &mut out);
            dst.iter_mut().zip(out).for_each(|(d, v)| *d = v);
        });

    let mut out = Array2::<f32>::zeros((h, w));
    out.axis_iter_mut(Axis(1))
        .into_par_iter()
        .zip(horizontal.axis_iter(Axis(1)).into_par_iter())
        .for_each(|(mut dst, col)| {
            let line: Vec<f64> = col.to_vec();
            let mut res = vec![0.0; h];
            convolve_line(&line, &taps, &mut res);
            dst.iter_mut().zip(res).for_each(|(d, v)| *d = v as f32);
        });
    out
}

/// Reshapes patch scores to their grid, upsamples to `out_h x out_w` and
/// smooths with `blur_sigma` (0 disables smoothing).
pub fn build_map(
    scores: &PatchScores,
    out_h: usize,
    out_w: usize,
    blur_sigma: f64,
) -> Result<AnomalyMap> {
    let (gh, gw) = scores.grid();
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!("degenerate output size {out_h}x{out_w}")));
    }
    if out_h < gh || out_w < gw {
        return Err(Error::Config(format!(
            "output size {out_h}x{out_w} is smaller than the {gh}x{gw} patch grid"
        )));
    }
    if !(blur_sigma >= 0.0 && blur_sigma.is_finite()) {
        return Err(Error::Config(format!("invalid blur sigma {blur_sigma}")));
    }
    let grid = Array2::from_shape_vec((gh, gw), scores.scores().to_vec())
        .map_err(|e| Error::Invariant(e.to_string()))?;
    let upsampled = if (gh, gw) == (out_h, out_w) {
        grid
    } else {
        bilinear_resize(&grid, out_h, out_w)
    };
    let smoothed = blur_sigma > 0.0;
    let data = gaussian_blur(&upsampled, blur_sigma);
    AnomalyMap::new(data, smoothed, (gh, gw))
}

/// Base image score: the largest map entry.
pub fn pool_max(map: &AnomalyMap) -> f32 {
    map.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
}

/// JSON sidecar describing an exported raw map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub height: usize,
    pub width: usize,
    pub dtype: String,
    pub smoothed: bool,
    pub source_grid: (usize, usize),
}

/// Writes `<stem>.f32` (raw little-endian grid) and `<stem>.json`.
pub fn export_map(map: &AnomalyMap, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::write(dir.join(format!("{stem}.f32")), map.to_le_bytes())?;
    let sidecar = MapSidecar {
        height: map.height(),
        width: map.width(),
        dtype: "float32-le".into(),
        smoothed: map.smoothed,
        source_grid: map.source_grid,
    };
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_vec_pretty(&sidecar)?,
    )?;
    Ok(())
}

/// Reads a map written by [`export_map`]. `path` is the `.f32` file.
pub fn import_map(path: impl AsRef<Path>) -> Result<AnomalyMap> {
    let path = path.as_ref();
    let sidecar: MapSidecar = serde_json::from_slice(&fs::read(path.with_extension("json"))?)?;
    let raw = fs::read(path)?;
    let expected = sidecar.height * sidecar.width * 4;
    if raw.len() != expected {
        return Err(Error::Truncated {
            context: "map payload",
            needed: expected as u64,
            available: raw.len() as u64,
        });
    }
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let data = Array2::from_shape_vec((sidecar.height, sidecar.width), values)
        .map_err(|e| Error::Malformed(e.to_string()))?;
    AnomalyMap::new(data, sidecar.smoothed, sidecar.source_grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scores(grid: Array2<f32>) -> PatchScores {
        let (h, w) = grid.dim();
        PatchScores::new(grid.iter().copied().collect(), h, w).unwrap()
    }

    #[test]
    fn bilinear_center_sample() {
        let s = scores(array![[0.0f32, 0.0], [0.0, 1.0]]);
        let map = build_map(&s, 4, 4, 0.0).unwrap();
        assert_eq!(map.data()[[2, 2]], 0.5625);
        assert!(!map.is_smoothed());
        assert_eq!(map.source_grid(), (2, 2));
        // corners clamp onto source pixels
        assert_eq!(map.data()[[0, 0]], 0.0);
        assert_eq!(map.data()[[3, 3]], 1.0);
    }

    #[test]
    fn constant_scores_give_constant_map() {
        let s = PatchScores::new(vec![2.5; 12], 3, 4).unwrap();
        let map = build_map(&s, 17, 23, 4.0).unwrap();
        assert!(map.data().iter().all(|&v| v == 2.5));
        assert!(map.is_smoothed());
    }

    #[test]
    fn same_size_resize_is_identity() {
        let src = Array2::from_shape_fn((5, 7), |(i, j)| (i * 7 + j) as f32 * 0.37);
        let out = bilinear_resize(&src, 5, 7);
        for (a, b) in src.iter().zip(out.iter()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn kernel_sums_to_one_with_expected_radius() {
        let k = gaussian_kernel(4.0);
        assert_eq!(k.len(), 33);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(gaussian_kernel(0.3).len(), 5);
    }

    #[test]
    fn reflect_indexing() {
        let got: Vec<usize> = (-5..9).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0, 0]);
        assert_eq!(reflect(-1, 1), 0);
        assert_eq!(reflect(7, 1), 0);
    }

    #[test]
    fn blur_stays_in_range_on_tiny_maps() {
        let src = array![[0.0f32, 3.0], [1.0, -2.0]];
        let out = gaussian_blur(&src, 4.0);
        assert!(out.iter().all(|&v| (-2.0..=3.0).contains(&v)));
    }

    #[test]
    fn rejects_bad_sizes() {
        let s = PatchScores::new(vec![1.0; 4], 2, 2).unwrap();
        assert!(build_map(&s, 1, 4, 0.0).is_err());
        assert!(build_map(&s, 0, 4, 0.0).is_err());
        assert!(build_map(&s, 4, 4, -1.0).is_err());
    }

    #[test]
    fn pool_max_picks_spike() {
        let mut data = Array2::from_elem((6, 6), 0.25f32);
        data[[4, 1]] = 3.0;
        let map = AnomalyMap::from_array(data).unwrap();
        assert_eq!(pool_max(&map), 3.0);
        let constant = AnomalyMap::from_array(Array2::from_elem((3, 3), 0.7f32)).unwrap();
        assert_eq!(pool_max(&constant), 0.7);
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = scores(array![[0.0f32, 1.0], [2.0, 4.0]]);
        let map = build_map(&s, 6, 6, 1.0).unwrap();
        export_map(&map, dir.path(), "img_0").unwrap();
        let back = import_map(dir.path().join("img_0.f32")).unwrap();
        assert_eq!(back, map);
    }
}
