//! Structure-aware image scoring.
//!
//! Max pooling keeps one number from an anomaly map. This module summarizes
//! the rest of the map with a three-component descriptor
//!
//! * `sigma_s`: population standard deviation of all map entries,
//! * `topk_mean`: mean of the `max(1, floor(H * W * r))` largest entries,
//! * `tv`: total variation, the sum of absolute forward differences along
//!   both axes (only where the neighbor exists) divided by `H * W`,
//!
//! and measures how far a map's descriptor lies from the statistics of
//! train-good maps. The default distance is the Euclidean norm of the
//! standardized residual `(phi - mu) / (sigma + eps)`. The structural
//! distance is scaled by `lambda_auto = std(base) / (std(D_train) + eps)`
//! (both over train-good images) and added to the max-pooled base score.
//!
//! Nothing here touches the map itself; only the image-level score changes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::map::AnomalyMap;

/// Denominator floor for `lambda_auto` when the train-good structural
/// distances have (near) zero spread.
pub const DEGENERATE_DENOMINATOR_FLOOR: f64 = 1e-6;

/// `[sigma_s, topk_mean, tv]` for one anomaly map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructDescriptor {
    pub sigma_s: f64,
    pub topk_mean: f64,
    pub tv: f64,
}

impl StructDescriptor {
    pub fn new(sigma_s: f64, topk_mean: f64, tv: f64) -> Self {
        Self {
            sigma_s,
            topk_mean,
            tv,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.sigma_s, self.topk_mean, self.tv]
    }
}

/// Number of entries averaged by the tail statistic.
pub fn topk_count(len: usize, ratio: f64) -> usize {
    ((len as f64 * ratio).floor() as usize).clamp(1, len.max(1))
}

/// Computes the structural descriptor of `map` with tail ratio `ratio`.
pub fn describe(map: &AnomalyMap, ratio: f64) -> StructDescriptor {
    let data = map.data();
    let (h, w) = data.dim();
    let n = (h * w) as f64;

    let values: Vec<f64> = data.iter().map(|&v| v as f64).collect();
    let (_, sigma_s) = mean_std(&values);

    let k = topk_count(values.len(), ratio);
    let mut sorted = values;
    if k < sorted.len() {
        sorted.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    }
    let top = &mut sorted[..k];
    top.sort_unstable_by(|a, b| b.total_cmp(a));
    let topk_mean = top.iter().sum::<f64>() / k as f64;

    let mut tv = 0.0;
    for i in 0..h {
        for j in 0..w {
            let v = data[[i, j]] as f64;
            if i + 1 < h {
                tv += (data[[i + 1, j]] as f64 - v).abs();
            }
            if j + 1 < w {
                tv += (data[[i, j + 1]] as f64 - v).abs();
            }
        }
    }

    StructDescriptor {
        sigma_s,
        topk_mean,
        tv: tv / n,
    }
}

/// Population mean and standard deviation. Empty input yields `(0, 0)`.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    // a rounded mean would leave a spurious spread on constant input
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One descriptor component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Sigma,
    TopK,
    Tv,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Sigma, Component::TopK, Component::Tv];

    fn index(self) -> usize {
        match self {
            Component::Sigma => 0,
            Component::TopK => 1,
            Component::Tv => 2,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Component::Sigma => "sigma",
            Component::TopK => "topk",
            Component::Tv => "tv",
        }
    }
}

/// Subset of descriptor components used by the structural distance.
///
/// Written as a comma-separated list, e.g. `sigma,topk,tv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ComponentMask {
    bits: u8,
}

impl ComponentMask {
    pub const ALL: ComponentMask = ComponentMask { bits: 0b111 };
    pub const EMPTY: ComponentMask = ComponentMask { bits: 0 };

    pub fn of(components: &[Component]) -> Self {
        components.iter().fold(Self::EMPTY, |m, c| m.with(*c))
    }

    pub fn with(self, c: Component) -> Self {
        Self {
            bits: self.bits | (1 << c.index()),
        }
    }

    pub fn contains(self, c: Component) -> bool {
        self.bits & (1 << c.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.bits == 0
    }

    pub fn len(self) -> usize {
        self.bits.count_ones() as usize
    }

    /// The seven non-empty subsets: singletons, then pairs, then all three.
    pub fn non_empty_subsets() -> [ComponentMask; 7] {
        use Component::*;
        [
            Self::of(&[Sigma]),
            Self::of(&[TopK]),
            Self::of(&[Tv]),
            Self::of(&[Sigma, TopK]),
            Self::of(&[Sigma, Tv]),
            Self::of(&[TopK, Tv]),
            Self::ALL,
        ]
    }

    fn indices(self) -> impl Iterator<Item = usize> {
        Component::ALL
            .into_iter()
            .filter(move |c| self.contains(*c))
            .map(Component::index)
    }
}

impl fmt::Display for ComponentMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = Component::ALL
            .into_iter()
            .filter(|c| self.contains(*c))
            .map(Component::name)
            .collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for ComponentMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut mask = Self::EMPTY;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let c = match part.to_ascii_lowercase().as_str() {
                "sigma" | "sigma_s" | "std" => Component::Sigma,
                "topk" | "topk_mean" => Component::TopK,
                "tv" => Component::Tv,
                "all" => return Ok(Self::ALL),
                other => {
                    return Err(Error::Config(format!("unknown descriptor component {other:?}")))
                }
            };
            mask = mask.with(c);
        }
        if mask.is_empty() {
            return Err(Error::Config("component mask must not be empty".into()));
        }
        Ok(mask)
    }
}

impl From<ComponentMask> for String {
    fn from(m: ComponentMask) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for ComponentMask {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Distance between a descriptor and the train-good statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    /// Euclidean norm of the standardized residual.
    DiagMahalanobis,
    /// L1 norm of the standardized residual.
    L1Std,
    /// Max-abs of the standardized residual.
    ChebyshevStd,
    Manhattan,
    Euclidean,
    Chebyshev,
    /// `1 - cos(phi, mu)`.
    Cosine,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 7] = [
        DistanceKind::L1Std,
        DistanceKind::DiagMahalanobis,
        DistanceKind::ChebyshevStd,
        DistanceKind::Manhattan,
        DistanceKind::Euclidean,
        DistanceKind::Chebyshev,
        DistanceKind::Cosine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistanceKind::DiagMahalanobis => "diag-mahalanobis",
            DistanceKind::L1Std => "l1-std",
            DistanceKind::ChebyshevStd => "chebyshev-std",
            DistanceKind::Manhattan => "manhattan",
            DistanceKind::Euclidean => "euclidean",
            DistanceKind::Chebyshev => "chebyshev",
            DistanceKind::Cosine => "cosine",
        }
    }

    pub fn is_standardized(self) -> bool {
        matches!(
            self,
            DistanceKind::DiagMahalanobis | DistanceKind::L1Std | DistanceKind::ChebyshevStd
        )
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        DistanceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .or(match s.as_str() {
                "mahalanobis" | "diag-maha" => Some(DistanceKind::DiagMahalanobis),
                "l1" => Some(DistanceKind::Manhattan),
                "l2" => Some(DistanceKind::Euclidean),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown structural distance {s:?}")))
    }
}

/// Settings that shape a calibration fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSettings {
    pub topk_ratio: f64,
    pub epsilon: f64,
    pub active_components: ComponentMask,
    pub distance_kind: DistanceKind,
}

impl CalibrationSettings {
    pub fn from_config(config: &PipelineConfig) -> Self {
        Self {
            topk_ratio: config.topk_ratio,
            epsilon: config.epsilon,
            active_components: config.active_components,
            distance_kind: config.struct_distance,
        }
    }
}

/// Train-good statistics of the structural descriptor, the automatic weight,
/// and the train-good scores they were derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructCalibration {
    pub mu: [f64; 3],
    pub sigma: [f64; 3],
    pub lambda_auto: f64,
    pub epsilon: f64,
    pub topk_ratio: f64,
    pub active_components: ComponentMask,
    pub distance_kind: DistanceKind,
    /// Set when fewer than two train maps were available or the train-good
    /// structural distances had (near) zero spread, in which case
    /// `lambda_auto` was computed against [`DEGENERATE_DENOMINATOR_FLOOR`].
    pub degenerate: bool,
    pub train_descriptors: Vec<StructDescriptor>,
    pub train_base_scores: Vec<f64>,
    pub train_struct_scores: Vec<f64>,
}

impl StructCalibration {
    pub fn is_fitted(&self) -> bool {
        !self.train_descriptors.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_fitted() {
            return Err(Error::Unfitted);
        }
        let n = self.train_descriptors.len();
        if self.train_base_scores.len() != n || self.train_struct_scores.len() != n {
            return Err(Error::dims("calibration train score count", n, self.train_base_scores.len()));
        }
        if self.active_components.is_empty() {
            return Err(Error::Invariant("calibration has no active components".into()));
        }
        if self.mu.iter().chain(&self.sigma).any(|v| !v.is_finite())
            || self.sigma.iter().any(|&s| s < 0.0)
        {
            return Err(Error::Invariant("calibration statistics must be finite, sigma >= 0".into()));
        }
        if !(self.lambda_auto >= 0.0 && self.lambda_auto.is_finite()) {
            return Err(Error::Invariant(format!("lambda_auto {} invalid", self.lambda_auto)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Invariant("epsilon must be > 0".into()));
        }
        Ok(())
    }

    /// Structural distance of a precomputed descriptor.
    pub fn distance(&self, descriptor: &StructDescriptor) -> Result<f64> {
        if !self.is_fitted() {
            return Err(Error::Unfitted);
        }
        Ok(structural_distance(
            descriptor,
            &self.mu,
            &self.sigma,
            self.epsilon,
            self.active_components,
            self.distance_kind,
        ))
    }

    /// Re-fits on the stored train-good descriptors with a different component
    /// subset or distance.
    pub fn refit(&self, active_components: ComponentMask, distance_kind: DistanceKind) -> Result<Self> {
        fit_from_descriptors(
            &self.train_descriptors,
            &self.train_base_scores,
            &CalibrationSettings {
                topk_ratio: self.topk_ratio,
                epsilon: self.epsilon,
                active_components,
                distance_kind,
            },
        )
    }

    /// Train-good quantile (linear interpolation between order statistics)
    /// of the base and hybrid scores, in that order.
    pub fn train_thresholds(&self, q: f64, lambda: f64) -> (f64, f64) {
        let hybrid: Vec<f64> = self
            .train_base_scores
            .iter()
            .zip(&self.train_struct_scores)
            .map(|(b, d)| b + lambda * d)
            .collect();
        (
            quantile(&self.train_base_scores, q),
            quantile(&hybrid, q),
        )
    }
}

/// Linear-interpolation quantile (the common "type 7" definition).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn structural_distance(
    descriptor: &StructDescriptor,
    mu: &[f64; 3],
    sigma: &[f64; 3],
    epsilon: f64,
    mask: ComponentMask,
    kind: DistanceKind,
) -> f64 {
    let phi = descriptor.to_array();
    if kind == DistanceKind::Cosine {
        let (mut dot, mut pp, mut mm) = (0.0, 0.0, 0.0);
        for i in mask.indices() {
            dot += phi[i] * mu[i];
            pp += phi[i] * phi[i];
            mm += mu[i] * mu[i];
        }
        if pp == 0.0 || mm == 0.0 {
            return 0.0;
        }
        return (1.0 - dot / (pp * mm).sqrt()).max(0.0);
    }
    let residuals = mask.indices().map(|i| {
        let r = phi[i] - mu[i];
        if kind.is_standardized() {
            r / (sigma[i] + epsilon)
        } else {
            r
        }
    });
    match kind {
        DistanceKind::DiagMahalanobis | DistanceKind::Euclidean => {
            residuals.map(|z| z * z).sum::<f64>().sqrt()
        }
        DistanceKind::L1Std | DistanceKind::Manhattan => residuals.map(f64::abs).sum(),
        DistanceKind::ChebyshevStd | DistanceKind::Chebyshev => {
            residuals.map(f64::abs).fold(0.0, f64::max)
        }
        DistanceKind::Cosine => unreachable!(),
    }
}

/// Fits calibration statistics from train-good descriptors and their base
/// scores (aligned one to one).
pub fn fit_from_descriptors(
    descriptors: &[StructDescriptor],
    base_scores: &[f64],
    settings: &CalibrationSettings,
) -> Result<StructCalibration> {
    if descriptors.is_empty() {
        return Err(Error::Empty("train-good maps for calibration"));
    }
    if base_scores.len() != descriptors.len() {
        return Err(Error::dims("train base score count", descriptors.len(), base_scores.len()));
    }
    if settings.active_components.is_empty() {
        return Err(Error::Config("at least one structural component must be active".into()));
    }
    if !(settings.epsilon > 0.0) {
        return Err(Error::Config("epsilon must be > 0".into()));
    }
    let mut mu = [0.0; 3];
    let mut sigma = [0.0; 3];
    for c in 0..3 {
        let column: Vec<f64> = descriptors.iter().map(|d| d.to_array()[c]).collect();
        (mu[c], sigma[c]) = mean_std(&column);
    }
    let train_struct_scores: Vec<f64> = descriptors
        .iter()
        .map(|d| {
            structural_distance(
                d,
                &mu,
                &sigma,
                settings.epsilon,
                settings.active_components,
                settings.distance_kind,
            )
        })
        .collect();
    let (_, std_base) = mean_std(base_scores);
    let (_, std_struct) = mean_std(&train_struct_scores);
    let floor = settings.epsilon.max(DEGENERATE_DENOMINATOR_FLOOR);
    let denominator = std_struct + settings.epsilon;
    let degenerate = descriptors.len() < 2 || denominator < floor;
    let lambda_auto = std_base / denominator.max(floor);

    Ok(StructCalibration {
        mu,
        sigma,
        lambda_auto,
        epsilon: settings.epsilon,
        topk_ratio: settings.topk_ratio,
        active_components: settings.active_components,
        distance_kind: settings.distance_kind,
        degenerate,
        train_descriptors: descriptors.to_vec(),
        train_base_scores: base_scores.to_vec(),
        train_struct_scores,
    })
}

/// Fits calibration from train-good anomaly maps and their base scores.
pub fn fit_calibration(
    train_maps: &[AnomalyMap],
    base_scores: &[f64],
    settings: &CalibrationSettings,
) -> Result<StructCalibration> {
    if train_maps.is_empty() {
        return Err(Error::Empty("train-good maps for calibration"));
    }
    let descriptors: Vec<_> = train_maps
        .iter()
        .map(|m| describe(m, settings.topk_ratio))
        .collect();
    fit_from_descriptors(&descriptors, base_scores, settings)
}

/// Structural score `D_struct` of a map.
pub fn struct_score(map: &AnomalyMap, calib: &StructCalibration) -> Result<f64> {
    calib.distance(&describe(map, calib.topk_ratio))
}

/// `base + lambda_auto * D_struct`.
pub fn hybrid_score(base: f64, map: &AnomalyMap, calib: &StructCalibration) -> Result<f64> {
    Ok(base + calib.lambda_auto * struct_score(map, calib)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn map(data: Array2<f32>) -> AnomalyMap {
        AnomalyMap::from_array(data).unwrap()
    }

    fn settings(kind: DistanceKind) -> CalibrationSettings {
        CalibrationSettings {
            topk_ratio: 0.01,
            epsilon: 1e-8,
            active_components: ComponentMask::ALL,
            distance_kind: kind,
        }
    }

    fn calib_with(mu: [f64; 3], sigma: [f64; 3], mask: ComponentMask, kind: DistanceKind) -> StructCalibration {
        StructCalibration {
            mu,
            sigma,
            lambda_auto: 1.0,
            epsilon: 1e-12,
            topk_ratio: 0.01,
            active_components: mask,
            distance_kind: kind,
            degenerate: false,
            train_descriptors: vec![StructDescriptor::new(0.0, 0.0, 0.0)],
            train_base_scores: vec![0.0],
            train_struct_scores: vec![0.0],
        }
    }

    #[test]
    fn constant_sample_has_exactly_zero_spread() {
        assert_eq!(mean_std(&[0.1; 7]), (0.1, 0.0));
        let (m, sd) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, sd), (2.0, 1.0));
    }

    #[test]
    fn constant_map_descriptor() {
        let d = describe(&map(Array2::from_elem((5, 4), 1.5)), 0.1);
        assert_eq!(d, StructDescriptor::new(0.0, 1.5, 0.0));
    }

    #[test]
    fn two_by_two_hand_case() {
        let d = describe(&map(array![[0.0f32, 1.0], [0.0, 1.0]]), 0.5);
        assert_eq!(d, StructDescriptor::new(0.5, 1.0, 0.5));
    }

    #[test]
    fn top_one_percent_of_hundred_is_max() {
        let data = Array2::from_shape_fn((10, 10), |(i, j)| ((i * 37 + j * 11) % 17) as f32 * 0.1);
        let d = describe(&map(data.clone()), 0.01);
        let max = data.iter().copied().fold(f32::MIN, f32::max) as f64;
        assert_eq!(d.topk_mean, max);
        assert_eq!(topk_count(100, 0.01), 1);
        assert_eq!(topk_count(100, 0.005), 1);
        assert_eq!(topk_count(784, 0.01), 7);
    }

    #[test]
    fn tv_has_no_wraparound() {
        // a single row: only horizontal differences exist
        let d = describe(&map(array![[0.0f32, 2.0, 1.0]]), 1.0);
        assert!((d.tv - 3.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn norms_of_residual_three_four_zero() {
        let phi = StructDescriptor::new(3.0, 4.0, 0.0);
        let zero = [0.0; 3];
        let ones = [1.0; 3];
        let cases = [
            (DistanceKind::DiagMahalanobis, 5.0),
            (DistanceKind::L1Std, 7.0),
            (DistanceKind::ChebyshevStd, 4.0),
            (DistanceKind::Euclidean, 5.0),
            (DistanceKind::Manhattan, 7.0),
            (DistanceKind::Chebyshev, 4.0),
        ];
        for (kind, expect) in cases {
            let c = calib_with(zero, ones, ComponentMask::ALL, kind);
            let got = c.distance(&phi).unwrap();
            assert!((got - expect).abs() < 1e-9, "{kind}: {got}");
        }
    }

    #[test]
    fn single_component_is_absolute_value() {
        let mask = ComponentMask::of(&[Component::Sigma]);
        let c = calib_with([2.0, 9.0, 9.0], [1.0, 1.0, 1.0], mask, DistanceKind::DiagMahalanobis);
        let got = c.distance(&StructDescriptor::new(0.0, 0.0, 0.0)).unwrap();
        assert!((got - 2.0).abs() < 1e-9);
    }

    #[test]
    fn raw_variants_ignore_sigma() {
        let c = calib_with([0.0; 3], [1.0, 10.0, 1.0], ComponentMask::ALL, DistanceKind::Euclidean);
        let phi = StructDescriptor::new(0.0, 10.0, 0.0);
        assert!((c.distance(&phi).unwrap() - 10.0).abs() < 1e-9);
        let c = calib_with([0.0; 3], [1.0, 10.0, 1.0], ComponentMask::ALL, DistanceKind::DiagMahalanobis);
        assert!((c.distance(&phi).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_distance() {
        let c = calib_with([1.0, 0.0, 0.0], [1.0; 3], ComponentMask::ALL, DistanceKind::Cosine);
        assert!((c.distance(&StructDescriptor::new(0.0, 2.0, 0.0)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(c.distance(&StructDescriptor::new(3.0, 0.0, 0.0)).unwrap(), 0.0);
        assert_eq!(c.distance(&StructDescriptor::new(0.0, 0.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn centered_descriptor_scores_zero_for_every_kind() {
        let mu = [0.3, 1.7, 0.05];
        for kind in DistanceKind::ALL {
            let c = calib_with(mu, [0.1, 0.2, 0.0], ComponentMask::ALL, kind);
            let phi = StructDescriptor::new(mu[0], mu[1], mu[2]);
            assert_eq!(c.distance(&phi).unwrap(), 0.0, "{kind}");
        }
    }

    #[test]
    fn fit_two_maps_hand_case() {
        let descs = [StructDescriptor::new(0.0, 1.0, 0.0), StructDescriptor::new(2.0, 3.0, 0.0)];
        let c = fit_from_descriptors(&descs, &[1.0, 3.0], &settings(DistanceKind::DiagMahalanobis)).unwrap();
        assert_eq!(c.mu, [1.0, 2.0, 0.0]);
        assert_eq!(c.sigma, [1.0, 1.0, 0.0]);
        for d in &c.train_struct_scores {
            assert!((d - 2f64.sqrt()).abs() < 1e-7);
        }
        // both distances identical: spread 0, capped denominator 1e-6, std(base) = 1
        assert!(c.degenerate);
        assert!((c.lambda_auto - 1e6).abs() < 1e-3);
    }

    #[test]
    fn single_train_map_is_degenerate() {
        let descs = [StructDescriptor::new(0.2, 1.0, 0.1)];
        let c = fit_from_descriptors(&descs, &[4.0], &settings(DistanceKind::DiagMahalanobis)).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.sigma, [0.0; 3]);
        assert_eq!(c.train_struct_scores, vec![0.0]);
        assert_eq!(c.lambda_auto, 0.0);
    }

    #[test]
    fn constant_base_scores_give_zero_lambda() {
        let descs = [
            StructDescriptor::new(0.1, 1.0, 0.1),
            StructDescriptor::new(0.3, 1.2, 0.2),
            StructDescriptor::new(0.2, 0.9, 0.4),
        ];
        let c = fit_from_descriptors(&descs, &[2.0; 3], &settings(DistanceKind::DiagMahalanobis)).unwrap();
        assert_eq!(c.lambda_auto, 0.0);
        assert!(!c.degenerate);
    }

    #[test]
    fn lambda_matches_formula() {
        let descs = [
            StructDescriptor::new(0.1, 1.0, 0.1),
            StructDescriptor::new(0.3, 1.2, 0.2),
            StructDescriptor::new(0.2, 0.9, 0.4),
            StructDescriptor::new(0.25, 1.1, 0.15),
        ];
        let base = [1.0, 1.5, 0.5, 2.0];
        let c = fit_from_descriptors(&descs, &base, &settings(DistanceKind::DiagMahalanobis)).unwrap();
        let (_, sb) = mean_std(&base);
        let (_, sd) = mean_std(&c.train_struct_scores);
        assert_eq!(c.lambda_auto, sb / (sd + 1e-8));
    }

    #[test]
    fn empty_and_misaligned_inputs() {
        let s = settings(DistanceKind::DiagMahalanobis);
        assert!(matches!(fit_from_descriptors(&[], &[], &s), Err(Error::Empty(_))));
        let d = [StructDescriptor::new(0.0, 0.0, 0.0)];
        assert!(fit_from_descriptors(&d, &[1.0, 2.0], &s).is_err());
    }

    #[test]
    fn unfitted_calibration_refuses_to_score() {
        let mut c = calib_with([0.0; 3], [1.0; 3], ComponentMask::ALL, DistanceKind::Euclidean);
        c.train_descriptors.clear();
        let m = map(Array2::zeros((2, 2)));
        assert!(matches!(struct_score(&m, &c), Err(Error::Unfitted)));
    }

    #[test]
    fn hybrid_arithmetic() {
        let mut c = calib_with([0.0; 3], [1.0; 3], ComponentMask::of(&[Component::TopK]), DistanceKind::Euclidean);
        c.lambda_auto = 2.0;
        // topk_mean of this map is 1.5 with k = 1
        let m = map(array![[1.5f32, 0.0], [0.0, 0.0]]);
        assert!((hybrid_score(2.0, &m, &c).unwrap() - 5.0).abs() < 1e-12);
        c.lambda_auto = 0.0;
        assert_eq!(hybrid_score(2.0, &m, &c).unwrap(), 2.0);
    }

    #[test]
    fn mask_parsing_and_display() {
        let m: ComponentMask = "topk, sigma".parse().unwrap();
        assert_eq!(m.to_string(), "sigma,topk");
        assert_eq!("all".parse::<ComponentMask>().unwrap(), ComponentMask::ALL);
        assert!("".parse::<ComponentMask>().is_err());
        assert!("sigma,bogus".parse::<ComponentMask>().is_err());
        let json = serde_json::to_string(&ComponentMask::ALL).unwrap();
        assert_eq!(json, "\"sigma,topk,tv\"");
        assert_eq!(ComponentMask::non_empty_subsets().len(), 7);
    }

    #[test]
    fn distance_parsing() {
        for k in DistanceKind::ALL {
            assert_eq!(k.name().parse::<DistanceKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert_eq!("l1_std".parse::<DistanceKind>().unwrap(), DistanceKind::L1Std);
        assert!("minkowski".parse::<DistanceKind>().is_err());
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.995), 9.95);
        assert_eq!(quantile(&[4.0], 0.9), 4.0);
    }
}
