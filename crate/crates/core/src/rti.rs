//! Fade-level-aware radio tomographic imaging.
//!
//! The chain runs: empty-room baselines per directed link and channel, a
//! log-distance path-loss fit, fade levels, per-pair ellipse widths for
//! RSS increases and decreases, the sparse-support weight matrix, and a
//! regularized least-squares projection `(WᵀW + σ_N² C_x⁻¹)⁻¹ Wᵀ` that maps
//! each frame's excess probabilities to an attenuation image.

use crate::channel::{ChannelSet, LinkChannel, MeasurementFrame};
use crate::geometry::{ellipse_area, ellipse_contains, GeometryError, LinkGeometry, Point2D, VoxelGrid};
use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RtiError {
    #[error("no training frames")]
    NoFrames,
    #[error("path-loss fit is singular: {0}")]
    SingularFit(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no link geometry for {tx}->{rx}")]
    MissingGeometry { tx: u32, rx: u32 },
    #[error("no usable link-channel pairs")]
    NoPairs,
    #[error("numerically singular system (diagonal ratio {ratio:e})")]
    SingularSystem { ratio: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty image")]
    EmptyImage,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub mean_dbm: f64,
    pub count: usize,
}

/// Empty-room mean RSS per directed link and channel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaselineTable {
    entries: BTreeMap<LinkChannel, BaselineEntry>,
    absent: BTreeSet<LinkChannel>,
}

impl BaselineTable {
    pub fn from_entries(entries: impl IntoIterator<Item = (LinkChannel, BaselineEntry)>) -> Self {
        Self { entries: entries.into_iter().collect(), absent: BTreeSet::new() }
    }

    pub fn get(&self, link: LinkChannel) -> Option<f64> {
        self.entries.get(&link).map(|e| e.mean_dbm)
    }

    pub fn entries(&self) -> &BTreeMap<LinkChannel, BaselineEntry> {
        &self.entries
    }

    /// Pairs seen in training that never produced a sample.
    pub fn absent(&self) -> &BTreeSet<LinkChannel> {
        &self.absent
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn train_baseline(frames: &[MeasurementFrame]) -> Result<BaselineTable, RtiError> {
    if frames.is_empty() {
        return Err(RtiError::NoFrames);
    }
    let mut acc: BTreeMap<LinkChannel, (f64, usize)> = BTreeMap::new();
    for s in frames.iter().flat_map(|f| &f.samples) {
        let e = acc.entry(s.link).or_insert((0.0, 0));
        if let Some(v) = s.rssi {
            e.0 += v;
            e.1 += 1;
        }
    }
    let mut table = BaselineTable::default();
    for (link, (sum, count)) in acc {
        if count == 0 {
            table.absent.insert(link);
        } else {
            table.entries.insert(link, BaselineEntry { mean_dbm: sum / count as f64, count });
        }
    }
    Ok(table)
}

/// Geometry of every directed link between the given antennas.
pub fn link_geometries(antennas: &BTreeMap<u32, Point2D>) -> Result<BTreeMap<(u32, u32), LinkGeometry>, RtiError> {
    let mut out = BTreeMap::new();
    for (&tx, &a) in antennas {
        for (&rx, &b) in antennas {
            if tx != rx {
                out.insert((tx, rx), LinkGeometry::new(a, b)?);
            }
        }
    }
    Ok(out)
}

/// Log-distance model `P(d, c) = intercept_c − 10·η·log10(d)` fitted by
/// ordinary least squares with a free intercept per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PathLossFit {
    pub eta: f64,
    pub intercepts: BTreeMap<u8, f64>,
    pub residuals: BTreeMap<LinkChannel, f64>,
    distances: BTreeMap<(u32, u32), f64>,
}

impl PathLossFit {
    pub fn predict(&self, distance: f64, channel: u8) -> Option<f64> {
        self.intercepts.get(&channel).map(|b| b - 10.0 * self.eta * distance.log10())
    }

    pub fn predict_link(&self, link: LinkChannel) -> Option<f64> {
        self.distances.get(&(link.tx, link.rx)).and_then(|&d| self.predict(d, link.channel))
    }
}

pub fn fit_path_loss(
    baseline: &BaselineTable,
    distances: &BTreeMap<(u32, u32), f64>,
    channels: &ChannelSet,
) -> Result<PathLossFit, RtiError> {
    // (log-distance regressor, mean RSS) grouped by channel
    let mut groups: BTreeMap<u8, Vec<(LinkChannel, f64, f64)>> = BTreeMap::new();
    for (&link, e) in &baseline.entries {
        if !channels.contains(link.channel) {
            continue;
        }
        let &d = distances
            .get(&(link.tx, link.rx))
            .ok_or(RtiError::MissingGeometry { tx: link.tx, rx: link.rx })?;
        groups.entry(link.channel).or_default().push((link, 10.0 * d.log10(), e.mean_dbm));
    }
    if groups.is_empty() {
        return Err(RtiError::NoPairs);
    }
    let means: BTreeMap<u8, (f64, f64)> = groups
        .iter()
        .map(|(&c, g)| {
            let n = g.len() as f64;
            (c, (g.iter().map(|t| t.1).sum::<f64>() / n, g.iter().map(|t| t.2).sum::<f64>() / n))
        })
        .collect();
    let (mut sxx, mut sxy, mut scale) = (0.0, 0.0, 0.0);
    for (c, g) in &groups {
        let (mx, my) = means[c];
        for &(_, x, y) in g {
            sxx += (x - mx) * (x - mx);
            sxy += (x - mx) * (y - my);
            scale += x * x;
        }
    }
    if !(sxx > 1e-12 * scale.max(1.0)) {
        return Err(RtiError::SingularFit("link distances do not vary within any channel".into()));
    }
    let eta = -sxy / sxx;
    let intercepts: BTreeMap<u8, f64> = means.iter().map(|(&c, &(mx, my))| (c, my + eta * mx)).collect();
    let used: BTreeSet<(u32, u32)> = groups.values().flatten().map(|t| (t.0.tx, t.0.rx)).collect();
    let mut fit = PathLossFit {
        eta,
        intercepts,
        residuals: BTreeMap::new(),
        distances: distances.iter().filter(|(k, _)| used.contains(k)).map(|(k, v)| (*k, *v)).collect(),
    };
    let residuals = groups
        .values()
        .flatten()
        .map(|&(link, _, y)| (link, y - fit.predict_link(link).expect("fitted link")))
        .collect();
    fit.residuals = residuals;
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FadeClass {
    AntiFade,
    DeepFade,
}

impl FadeClass {
    /// Zero counts as anti-fade so the classification is total.
    pub fn of(fade_db: f64) -> Self {
        if fade_db >= 0.0 {
            FadeClass::AntiFade
        } else {
            FadeClass::DeepFade
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FadeLevelTable {
    pub levels: BTreeMap<LinkChannel, f64>,
}

impl FadeLevelTable {
    pub fn get(&self, link: LinkChannel) -> Option<f64> {
        self.levels.get(&link).copied()
    }

    pub fn class(&self, link: LinkChannel) -> Option<FadeClass> {
        self.get(link).map(FadeClass::of)
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.levels.is_empty()).then(|| self.levels.values().sum::<f64>() / self.levels.len() as f64)
    }
}

/// `F = r̄ − P(d, c)` for every pair the fit covers.
pub fn fade_level(baseline: &BaselineTable, fit: &PathLossFit) -> FadeLevelTable {
    let levels = baseline
        .entries
        .iter()
        .filter_map(|(&link, e)| fit.predict_link(link).map(|p| (link, e.mean_dbm - p)))
        .collect();
    FadeLevelTable { levels }
}

/// Piecewise-linear map from fade level to ellipse width, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthConfig {
    pub lambda_min: f64,
    /// Width growth per dB of fade depth.
    pub slope: f64,
    pub lambda_max: f64,
}

impl Default for WidthConfig {
    fn default() -> Self {
        Self { lambda_min: 0.05, slope: 0.03, lambda_max: 1.0 }
    }
}

impl WidthConfig {
    pub fn validate(&self) -> Result<(), RtiError> {
        if !(self.lambda_min > 0.0) || !(self.slope >= 0.0) || !(self.lambda_max >= self.lambda_min) || !self.lambda_max.is_finite() {
            return Err(RtiError::InvalidConfig(format!("ellipse widths {self:?}")));
        }
        Ok(())
    }

    pub fn minus(&self, fade_db: f64) -> f64 {
        if fade_db >= 0.0 {
            self.lambda_min
        } else {
            self.lambda_max.min(self.lambda_min + self.slope * fade_db.abs())
        }
    }

    pub fn plus(&self, fade_db: f64) -> f64 {
        self.lambda_max.min(self.lambda_min + self.slope * fade_db.min(0.0).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Widths {
    pub plus: f64,
    pub minus: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EllipseWidths {
    pub widths: BTreeMap<LinkChannel, Widths>,
}

pub fn lambda_widths(fades: &FadeLevelTable, config: &WidthConfig) -> Result<EllipseWidths, RtiError> {
    config.validate()?;
    let widths = fades
        .levels
        .iter()
        .map(|(&link, &f)| (link, Widths { plus: config.plus(f), minus: config.minus(f) }))
        .collect();
    Ok(EllipseWidths { widths })
}

/// `Δr = r(k) − r̄` for every baseline pair; `None` where the frame has no
/// sample.
pub fn rss_delta(frame: &MeasurementFrame, baseline: &BaselineTable) -> BTreeMap<LinkChannel, Option<f64>> {
    baseline
        .entries
        .iter()
        .map(|(&link, e)| (link, frame.rssi(link).map(|r| r - e.mean_dbm)))
        .collect()
}

/// Dead-band plus linear saturation map from RSS change to probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityConfig {
    pub dead_band_db: f64,
    pub saturation_db: f64,
}

impl Default for ProbabilityConfig {
    fn default() -> Self {
        Self { dead_band_db: 1.0, saturation_db: 10.0 }
    }
}

impl ProbabilityConfig {
    pub fn validate(&self) -> Result<(), RtiError> {
        if !(self.dead_band_db >= 0.0) || !(self.saturation_db > self.dead_band_db) || !self.saturation_db.is_finite() {
            return Err(RtiError::InvalidConfig(format!("excess probability {self:?}")));
        }
        Ok(())
    }

    /// `(p⁺, p⁻)` for one RSS change; at most one is nonzero.
    pub fn probabilities(&self, delta_db: f64) -> (f64, f64) {
        let span = self.saturation_db - self.dead_band_db;
        let ramp = |excess: f64| ((excess - self.dead_band_db) / span).clamp(0.0, 1.0);
        if delta_db > self.dead_band_db {
            (ramp(delta_db), 0.0)
        } else if delta_db < -self.dead_band_db {
            (0.0, ramp(-delta_db))
        } else {
            (0.0, 0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Excess {
    pub plus: f64,
    pub minus: f64,
}

/// Missing deltas map to zero probability (no evidence).
pub fn excess_probabilities(
    deltas: &BTreeMap<LinkChannel, Option<f64>>,
    config: &ProbabilityConfig,
) -> Result<BTreeMap<LinkChannel, Excess>, RtiError> {
    config.validate()?;
    Ok(deltas
        .iter()
        .map(|(&link, d)| {
            let (plus, minus) = d.map_or((0.0, 0.0), |d| config.probabilities(d));
            (link, Excess { plus, minus })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

/// Weight matrix with one row per (pair, sign): `[pair0+, pair0−, pair1+, …]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub matrix: DMatrix<f64>,
    pub rows: Vec<(LinkChannel, Sign)>,
    pub empty_rows: usize,
}

pub fn build_weight_matrix(
    pairs: &[(LinkChannel, LinkGeometry)],
    grid: &VoxelGrid,
    widths: &EllipseWidths,
) -> Result<WeightMatrix, RtiError> {
    if grid.is_empty() {
        return Err(RtiError::EmptyImage);
    }
    let mut matrix = DMatrix::zeros(2 * pairs.len(), grid.len());
    let mut rows = Vec::with_capacity(2 * pairs.len());
    let mut empty_rows = 0;
    for (i, (link, geom)) in pairs.iter().enumerate() {
        let w = widths
            .widths
            .get(link)
            .ok_or(RtiError::InvalidConfig(format!("no ellipse width for {link:?}")))?;
        for (k, (sign, lambda)) in [(Sign::Plus, w.plus), (Sign::Minus, w.minus)].into_iter().enumerate() {
            let row = 2 * i + k;
            let weight = 1.0 / ellipse_area(geom.length(), lambda)?;
            let mut hits = 0;
            for (j, c) in grid.centers().iter().enumerate() {
                if ellipse_contains(*c, geom, lambda) {
                    matrix[(row, j)] = weight;
                    hits += 1;
                }
            }
            if hits == 0 {
                debug!("{link:?} {sign:?}: ellipse contains no voxel centre");
                empty_rows += 1;
            }
            rows.push((*link, sign));
        }
    }
    Ok(WeightMatrix { matrix, rows, empty_rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationParams {
    pub sigma_n2: f64,
    pub sigma_x2: f64,
    /// Correlation distance, meters.
    pub delta_c: f64,
}

impl Default for RegularizationParams {
    fn default() -> Self {
        Self { sigma_n2: 1.0, sigma_x2: 0.5, delta_c: 0.5 }
    }
}

impl RegularizationParams {
    pub fn validate(&self) -> Result<(), RtiError> {
        if [self.sigma_n2, self.sigma_x2, self.delta_c].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(RtiError::InvalidConfig(format!("regularization {self:?}")))
        }
    }
}

/// Exponential-decay prior covariance `σ_x² exp(−d_ij / δ_c)`.
pub fn covariance_matrix(grid: &VoxelGrid, params: &RegularizationParams) -> DMatrix<f64> {
    let c = grid.centers();
    DMatrix::from_fn(c.len(), c.len(), |j, i| params.sigma_x2 * (-c[j].distance(&c[i]) / params.delta_c).exp())
}

fn diagonal_ratio(diag: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// Solves `a·x = b` for symmetric `a`, falling back to LU when `a` is not
/// numerically positive definite.
fn solve_symmetric(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, RtiError> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let lu = a.lu();
    let ratio = diagonal_ratio(lu.u().diagonal().iter().copied());
    if !(ratio > 1e-14) {
        return Err(RtiError::SingularSystem { ratio });
    }
    lu.solve(b).ok_or(RtiError::SingularSystem { ratio })
}

/// Scaled prior precision `σ_N² C_x⁻¹`, reusable across weight matrices on
/// the same grid.
#[derive(Debug, Clone)]
pub struct Prior {
    scaled_precision: DMatrix<f64>,
}

impl Prior {
    pub fn new(covariance: &DMatrix<f64>, sigma_n2: f64) -> Result<Self, RtiError> {
        if !(sigma_n2 > 0.0) {
            return Err(RtiError::InvalidConfig(format!("sigma_n2 = {sigma_n2}")));
        }
        let n = covariance.nrows();
        let inv = solve_symmetric(covariance.clone(), &DMatrix::identity(n, n))?;
        // Symmetrize away round-off so the normal matrix stays symmetric.
        let scaled_precision = (&inv + inv.transpose()) * (0.5 * sigma_n2);
        Ok(Self { scaled_precision })
    }

    pub fn for_grid(grid: &VoxelGrid, params: &RegularizationParams) -> Result<Self, RtiError> {
        params.validate()?;
        Self::new(&covariance_matrix(grid, params), params.sigma_n2)
    }

    pub fn voxels(&self) -> usize {
        self.scaled_precision.nrows()
    }

    pub fn normal_matrix(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>, RtiError> {
        if w.ncols() != self.voxels() {
            return Err(RtiError::DimensionMismatch { expected: self.voxels(), got: w.ncols() });
        }
        Ok(w.tr_mul(w) + &self.scaled_precision)
    }

    pub fn projection(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>, RtiError> {
        solve_symmetric(self.normal_matrix(w)?, &w.transpose())
    }
}

/// `Π = (WᵀW + C_x⁻¹ σ_N²)⁻¹ Wᵀ`, computed by a linear solve.
pub fn build_projection(w: &DMatrix<f64>, covariance: &DMatrix<f64>, sigma_n2: f64) -> Result<DMatrix<f64>, RtiError> {
    Prior::new(covariance, sigma_n2)?.projection(w)
}

pub fn estimate_image(projection: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>, RtiError> {
    if projection.ncols() != y.len() {
        return Err(RtiError::DimensionMismatch { expected: projection.ncols(), got: y.len() });
    }
    Ok(projection * y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Localization {
    pub position: Point2D,
    pub voxel: usize,
    /// Set when the maximum is attained by more than one voxel.
    pub degenerate: bool,
}

/// Centre of the brightest voxel; ties go to the lowest index.
pub fn localize(image: &DVector<f64>, grid: &VoxelGrid) -> Result<Localization, RtiError> {
    if image.is_empty() {
        return Err(RtiError::EmptyImage);
    }
    if image.len() != grid.len() {
        return Err(RtiError::DimensionMismatch { expected: grid.len(), got: image.len() });
    }
    let mut best = 0;
    let mut ties = 1;
    for (j, &v) in image.iter().enumerate().skip(1) {
        if v > image[best] {
            best = j;
            ties = 1;
        } else if v == image[best] {
            ties += 1;
        }
    }
    Ok(Localization { position: grid.center(best), voxel: best, degenerate: ties > 1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RtiConfig {
    pub widths: WidthConfig,
    pub probabilities: ProbabilityConfig,
    pub regularization: RegularizationParams,
}

/// Trained reconstruction model; immutable once built.
#[derive(Debug, Clone)]
pub struct RtiModel {
    pub grid: VoxelGrid,
    pub config: RtiConfig,
    pub baseline: BaselineTable,
    pub fit: PathLossFit,
    pub fades: FadeLevelTable,
    pub widths: EllipseWidths,
    pub weights: WeightMatrix,
    pub projection: DMatrix<f64>,
    pairs: Vec<LinkChannel>,
}

impl RtiModel {
    /// Builds the model from a trained baseline. Baseline pairs whose
    /// endpoints are not in `antennas` or whose channel is not in
    /// `channels` are ignored.
    pub fn build(
        antennas: &BTreeMap<u32, Point2D>,
        baseline: BaselineTable,
        channels: &ChannelSet,
        grid: VoxelGrid,
        config: RtiConfig,
        prior: Option<&Prior>,
    ) -> Result<Self, RtiError> {
        config.widths.validate()?;
        config.probabilities.validate()?;
        config.regularization.validate()?;
        let geoms = link_geometries(antennas)?;
        let baseline = BaselineTable {
            entries: baseline
                .entries
                .into_iter()
                .filter(|(l, _)| channels.contains(l.channel) && geoms.contains_key(&(l.tx, l.rx)))
                .collect(),
            absent: baseline.absent,
        };
        if baseline.is_empty() {
            return Err(RtiError::NoPairs);
        }
        let distances: BTreeMap<(u32, u32), f64> = geoms.iter().map(|(k, g)| (*k, g.length())).collect();
        let fit = fit_path_loss(&baseline, &distances, channels)?;
        let fades = fade_level(&baseline, &fit);
        let widths = lambda_widths(&fades, &config.widths)?;
        let pairs: Vec<LinkChannel> = fades.levels.keys().copied().collect();
        let with_geom: Vec<(LinkChannel, LinkGeometry)> = pairs.iter().map(|l| (*l, geoms[&(l.tx, l.rx)])).collect();
        let weights = build_weight_matrix(&with_geom, &grid, &widths)?;
        let owned;
        let prior = match prior {
            Some(p) => p,
            None => {
                owned = Prior::for_grid(&grid, &config.regularization)?;
                &owned
            }
        };
        let projection = prior.projection(&weights.matrix)?;
        Ok(Self { grid, config, baseline, fit, fades, widths, weights, projection, pairs })
    }

    pub fn pairs(&self) -> &[LinkChannel] {
        &self.pairs
    }

    /// Stacked `[p⁺, p⁻]` per pair, in weight-matrix row order.
    pub fn measurement_vector(&self, frame: &MeasurementFrame) -> DVector<f64> {
        let mut y = DVector::zeros(2 * self.pairs.len());
        for (i, link) in self.pairs.iter().enumerate() {
            let mean = self.baseline.entries[link].mean_dbm;
            if let Some(r) = frame.rssi(*link) {
                let (p, m) = self.config.probabilities.probabilities(r - mean);
                y[2 * i] = p;
                y[2 * i + 1] = m;
            }
        }
        y
    }

    pub fn image(&self, frame: &MeasurementFrame) -> DVector<f64> {
        &self.projection * self.measurement_vector(frame)
    }

    pub fn locate(&self, frame: &MeasurementFrame) -> Result<Localization, RtiError> {
        localize(&self.image(frame), &self.grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{NodePosition, Sample};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    use rand_pcg::Pcg64Mcg;

    fn lc(tx: u32, rx: u32, c: u8) -> LinkChannel {
        LinkChannel::new(tx, rx, c)
    }

    fn frame(cycle: u64, samples: &[(LinkChannel, Option<f64>)]) -> MeasurementFrame {
        let mut samples: Vec<Sample> = samples.iter().map(|&(link, rssi)| Sample { link, rssi }).collect();
        samples.sort_by_key(|s| s.link);
        MeasurementFrame { cycle, samples, positions: vec![NodePosition { node_id: 1, p: 1 }] }
    }

    #[test]
    fn baseline_means_and_absent_pairs() {
        let a = lc(1, 2, 11);
        let b = lc(2, 1, 11);
        let c = lc(1, 3, 11);
        let frames = vec![
            frame(0, &[(a, Some(-60.0)), (b, Some(-60.0)), (c, None)]),
            frame(1, &[(a, Some(-60.0)), (b, Some(-62.0)), (c, None)]),
        ];
        let t = train_baseline(&frames).unwrap();
        assert_eq!(t.get(a), Some(-60.0));
        assert_eq!(t.get(b), Some(-61.0));
        assert_eq!(t.get(c), None);
        assert!(t.absent().contains(&c));
        assert_eq!(t.entries()[&b].count, 2);
        assert!(matches!(train_baseline(&[]), Err(RtiError::NoFrames)));
    }

    fn synthetic(eta: f64, noise: f64, links: usize, seed: u64) -> (BaselineTable, BTreeMap<(u32, u32), f64>, ChannelSet) {
        let channels = ChannelSet::new([11, 16, 21, 26]).unwrap();
        let mut rng = Pcg64Mcg::seed_from_u64(seed);
        let mut dist = BTreeMap::new();
        let mut entries = Vec::new();
        for l in 0..links as u32 {
            let d: f64 = rng.random_range(0.5..8.0);
            dist.insert((l, l + 1000), d);
            for &c in channels.as_slice() {
                let intercept = -40.0 - 0.3 * f64::from(c - 11);
                let z: f64 = rng.sample(StandardNormal);
                let v = intercept - 10.0 * eta * d.log10() + noise * z;
                entries.push((lc(l, l + 1000, c), BaselineEntry { mean_dbm: v, count: 1 }));
            }
        }
        (BaselineTable::from_entries(entries), dist, channels)
    }

    #[test]
    fn noiseless_fit_recovers_exponent() {
        for eta in [1.8, 2.3, 3.0] {
            let (b, d, c) = synthetic(eta, 0.0, 30, 1);
            let fit = fit_path_loss(&b, &d, &c).unwrap();
            assert!((fit.eta - eta).abs() <= 1e-9, "{}", fit.eta);
            assert!((fit.intercepts[&16] - (-41.5)).abs() < 1e-9);
            assert!(fit.residuals.values().all(|r| r.abs() < 1e-9));
        }
    }

    #[test]
    fn two_link_slope() {
        let c = ChannelSet::new([11]).unwrap();
        let b = BaselineTable::from_entries([
            (lc(1, 2, 11), BaselineEntry { mean_dbm: -40.0, count: 1 }),
            (lc(1, 3, 11), BaselineEntry { mean_dbm: -63.0, count: 1 }),
        ]);
        let d = BTreeMap::from([((1, 2), 1.0), ((1, 3), 10.0)]);
        let fit = fit_path_loss(&b, &d, &c).unwrap();
        assert_relative_eq!(fit.eta, 2.3, epsilon = 1e-12);
        assert_relative_eq!(fit.intercepts[&11], -40.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_lengths_are_singular() {
        let c = ChannelSet::new([11]).unwrap();
        let b = BaselineTable::from_entries([
            (lc(1, 2, 11), BaselineEntry { mean_dbm: -40.0, count: 1 }),
            (lc(2, 1, 11), BaselineEntry { mean_dbm: -45.0, count: 1 }),
        ]);
        let d = BTreeMap::from([((1, 2), 3.0), ((2, 1), 3.0)]);
        assert!(matches!(fit_path_loss(&b, &d, &c), Err(RtiError::SingularFit(_))));
    }

    #[test]
    fn noisy_fit_within_tolerance() {
        let mut total = 0.0;
        for seed in 0..20 {
            let (b, d, c) = synthetic(2.3, 2.0, 100, seed);
            total += (fit_path_loss(&b, &d, &c).unwrap().eta - 2.3).abs();
        }
        assert!(total / 20.0 <= 0.2, "{}", total / 20.0);
    }

    #[test]
    fn fade_levels_and_classes() {
        let fit = PathLossFit {
            eta: 2.0,
            intercepts: BTreeMap::from([(11, -62.0)]),
            residuals: BTreeMap::new(),
            distances: BTreeMap::from([((1, 2), 1.0), ((1, 3), 1.0), ((1, 4), 1.0)]),
        };
        let b = BaselineTable::from_entries([
            (lc(1, 2, 11), BaselineEntry { mean_dbm: -62.0, count: 1 }),
            (lc(1, 3, 11), BaselineEntry { mean_dbm: -55.0, count: 1 }),
            (lc(1, 4, 11), BaselineEntry { mean_dbm: -70.0, count: 1 }),
        ]);
        let f = fade_level(&b, &fit);
        assert_eq!(f.get(lc(1, 2, 11)), Some(0.0));
        assert_eq!(f.class(lc(1, 2, 11)), Some(FadeClass::AntiFade));
        assert_eq!(f.get(lc(1, 3, 11)), Some(7.0));
        assert_eq!(f.class(lc(1, 3, 11)), Some(FadeClass::AntiFade));
        assert_eq!(f.get(lc(1, 4, 11)), Some(-8.0));
        assert_eq!(f.class(lc(1, 4, 11)), Some(FadeClass::DeepFade));
    }

    #[test]
    fn fade_identity_bit_exact() {
        let (b, d, c) = synthetic(2.1, 3.0, 40, 9);
        let fit = fit_path_loss(&b, &d, &c).unwrap();
        let f = fade_level(&b, &fit);
        for (link, e) in b.entries() {
            assert_eq!(f.get(*link).unwrap().to_bits(), (e.mean_dbm - fit.predict_link(*link).unwrap()).to_bits());
            assert_eq!(f.get(*link).unwrap().to_bits(), fit.residuals[link].to_bits());
        }
    }

    #[test]
    fn width_examples() {
        let cfg = WidthConfig::default();
        assert_eq!(cfg.minus(5.0), 0.05);
        assert_relative_eq!(cfg.minus(-10.0), 0.35, epsilon = 1e-12);
        assert_eq!(cfg.minus(-1e-12), cfg.minus(0.0) + cfg.slope * 1e-12);
        assert_relative_eq!(cfg.minus(-1e-12), cfg.minus(1e-12), epsilon = 1e-12);
        assert_relative_eq!(cfg.plus(-1e-12), cfg.plus(1e-12), epsilon = 1e-12);
        assert_eq!(cfg.minus(-100.0), 1.0);
        let bad = WidthConfig { lambda_min: 0.0, ..cfg };
        assert!(lambda_widths(&FadeLevelTable::default(), &bad).is_err());
    }

    #[test]
    fn delta_examples() {
        let a = lc(1, 2, 11);
        let b = lc(2, 1, 11);
        let c = lc(1, 3, 11);
        let base = BaselineTable::from_entries([
            (a, BaselineEntry { mean_dbm: -60.0, count: 1 }),
            (b, BaselineEntry { mean_dbm: -60.0, count: 1 }),
            (c, BaselineEntry { mean_dbm: -50.0, count: 1 }),
        ]);
        let d = rss_delta(&frame(3, &[(a, Some(-60.0)), (b, Some(-65.0)), (c, None)]), &base);
        assert_eq!(d[&a], Some(0.0));
        assert_eq!(d[&b], Some(-5.0));
        assert_eq!(d[&c], None);
        let p = excess_probabilities(&d, &ProbabilityConfig::default()).unwrap();
        assert_eq!(p[&c], Excess::default());
    }

    #[test]
    fn probability_examples() {
        let cfg = ProbabilityConfig::default();
        assert_eq!(cfg.probabilities(0.0), (0.0, 0.0));
        let sat = ProbabilityConfig { dead_band_db: 0.0, saturation_db: 10.0 };
        assert_eq!(sat.probabilities(-10.0), (0.0, 1.0));
        assert_eq!(cfg.probabilities(-(1.0 + 10.0) / 2.0), (0.0, 0.5));
        assert_eq!(cfg.probabilities(5.5), (0.5, 0.0));
        assert_eq!(cfg.probabilities(40.0), (1.0, 0.0));
        assert!(ProbabilityConfig { dead_band_db: 3.0, saturation_db: 3.0 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn widths_monotone_in_fade(f1 in -40.0..40.0f64, df in 0.0..40.0f64) {
            let cfg = WidthConfig::default();
            prop_assert!(cfg.minus(f1) >= cfg.minus(f1 + df));
            prop_assert!(cfg.plus(f1) >= cfg.plus(f1 + df));
            prop_assert!(cfg.minus(f1) > 0.0 && cfg.plus(f1) > 0.0);
        }

        #[test]
        fn probabilities_monotone_and_exclusive(d in -30.0..30.0f64, extra in 0.0..10.0f64) {
            let cfg = ProbabilityConfig::default();
            let (p, m) = cfg.probabilities(d);
            prop_assert!(p == 0.0 || m == 0.0);
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&m));
            let (p2, m2) = cfg.probabilities(d + extra.copysign(d));
            prop_assert!(p2 >= p && m2 >= m);
        }
    }

    fn grid(n: usize, size: f64) -> VoxelGrid {
        VoxelGrid::new(Point2D::new(0.0, 0.0), size, n, n).unwrap()
    }

    #[test]
    fn weight_rows_match_containment_scan() {
        let g = grid(20, 0.25);
        let geom = LinkGeometry::new(Point2D::new(0.1, 0.3), Point2D::new(4.8, 3.9)).unwrap();
        let link = lc(1, 2, 11);
        let widths = EllipseWidths { widths: BTreeMap::from([(link, Widths { plus: 0.6, minus: 0.1 })]) };
        let w = build_weight_matrix(&[(link, geom)], &g, &widths).unwrap();
        assert_eq!(w.rows, vec![(link, Sign::Plus), (link, Sign::Minus)]);
        for (row, lambda) in [(0, 0.6), (1, 0.1)] {
            // Independent scan: focal-distance sums computed directly.
            let count = g
                .centers()
                .iter()
                .filter(|c| {
                    let s = ((c.x - 0.1).powi(2) + (c.y - 0.3).powi(2)).sqrt() + ((c.x - 4.8).powi(2) + (c.y - 3.9).powi(2)).sqrt();
                    s < geom.length() + lambda
                })
                .count();
            let area = ellipse_area(geom.length(), lambda).unwrap();
            assert!(count > 0);
            assert_relative_eq!(w.matrix.row(row).sum(), count as f64 / area, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_and_single_voxel_rows() {
        let link = lc(1, 2, 11);
        let far = LinkGeometry::new(Point2D::new(10.0, 10.0), Point2D::new(12.0, 10.0)).unwrap();
        let widths = EllipseWidths { widths: BTreeMap::from([(link, Widths { plus: 0.05, minus: 0.05 })]) };
        let w = build_weight_matrix(&[(link, far)], &grid(4, 0.25), &widths).unwrap();
        assert_eq!(w.empty_rows, 2);
        assert!(w.matrix.iter().all(|v| *v == 0.0));

        let one = VoxelGrid::new(Point2D::new(0.5, -0.5), 1.0, 1, 1).unwrap();
        let geom = LinkGeometry::new(Point2D::new(0.0, 0.0), Point2D::new(2.0, 0.0)).unwrap();
        let w = build_weight_matrix(&[(link, geom)], &one, &widths).unwrap();
        assert_relative_eq!(w.matrix[(0, 0)], 1.0 / ellipse_area(2.0, 0.05).unwrap());
    }

    #[test]
    fn covariance_examples() {
        let p = RegularizationParams { sigma_n2: 1.0, sigma_x2: 0.7, delta_c: 0.5 };
        let g = VoxelGrid::new(Point2D::new(0.0, 0.0), 0.5, 3, 2).unwrap();
        let c = covariance_matrix(&g, &p);
        for j in 0..g.len() {
            assert_eq!(c[(j, j)], 0.7);
            for i in 0..g.len() {
                assert_eq!(c[(j, i)], c[(i, j)]);
            }
        }
        // neighbouring voxels are exactly delta_c apart
        assert_relative_eq!(c[(0, 1)], 0.7 * (-1.0f64).exp(), epsilon = 1e-15);
        assert!(c.clone().cholesky().is_some());
    }

    #[test]
    fn scalar_projection() {
        let w = DMatrix::from_element(1, 1, 1.0);
        let c = DMatrix::from_element(1, 1, 0.5);
        let pi = build_projection(&w, &c, 2.0).unwrap();
        assert_relative_eq!(pi[(0, 0)], 1.0 / (1.0 + 2.0 / 0.5), epsilon = 1e-15);
        let zero = build_projection(&DMatrix::zeros(3, 4), &DMatrix::identity(4, 4), 1.0).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        assert!(build_projection(&w, &c, 0.0).is_err());
    }

    #[test]
    fn image_linear_and_columns() {
        let mut rng = Pcg64Mcg::seed_from_u64(4);
        let pi = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        assert!(estimate_image(&pi, &DVector::zeros(4)).unwrap().iter().all(|v| *v == 0.0));
        let e2 = DVector::from_fn(4, |i, _| if i == 2 { 1.0 } else { 0.0 });
        assert_eq!(estimate_image(&pi, &e2).unwrap(), pi.column(2).into_owned());
        let y1 = DVector::from_fn(4, |_, _| rng.random_range(0.0..1.0));
        let y2 = DVector::from_fn(4, |_, _| rng.random_range(0.0..1.0));
        let sum = estimate_image(&pi, &(&y1 + &y2)).unwrap();
        let parts = estimate_image(&pi, &y1).unwrap() + estimate_image(&pi, &y2).unwrap();
        assert!((sum - parts).amax() <= 1e-12);
        assert!(matches!(estimate_image(&pi, &DVector::zeros(3)), Err(RtiError::DimensionMismatch { .. })));
    }

    #[test]
    fn localize_contract() {
        let g = grid(3, 1.0);
        let mut img = DVector::zeros(9);
        img[5] = 2.0;
        let l = localize(&img, &g).unwrap();
        assert_eq!((l.voxel, l.position, l.degenerate), (5, g.center(5), false));
        img[7] = 2.0;
        let l = localize(&img, &g).unwrap();
        assert_eq!((l.voxel, l.degenerate), (5, true));
        let flat = localize(&DVector::from_element(9, 0.3), &g).unwrap();
        assert_eq!((flat.voxel, flat.degenerate), (0, true));
        assert!(matches!(localize(&DVector::zeros(0), &g), Err(RtiError::EmptyImage)));
    }

    proptest! {
        #[test]
        fn localize_invariant_under_affine(vals in proptest::collection::vec(-50i32..50, 16), scale in 0.1..10.0f64, shift in -30i32..30) {
            let g = grid(4, 0.5);
            let img = DVector::from_iterator(16, vals.iter().map(|&v| f64::from(v)));
            let a = localize(&img, &g).unwrap();
            let b = localize(&img.map(|v| v * scale), &g).unwrap();
            let c = localize(&img.map(|v| v + f64::from(shift)), &g).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(a, c);
        }
    }
}
