//! Experiment orchestration: ground-truth point tests, variant
//! comparisons, subset sweeps and the position-bias test.

use crate::calibration::{network_calibrate, CalibrationError, CalibrationState};
use crate::channel::{noiseless_rss, MeasurementFrame, Network, NodeKind, SimError};
use crate::geometry::{Point2D, VoxelGrid};
use crate::io::{write_image_csv, write_image_pgm};
use crate::rti::{train_baseline, BaselineTable, FadeClass, Prior, RtiError, RtiModel};
use crate::scenario::{Scenario, ScenarioError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use nalgebra::DVector;
use std::fmt;
use std::fmt::Write as _;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

const RANDOM_POSITION_SALT: u64 = 0x5e_4d0_4a4d;
const CALIBRATION_SALT: u64 = 0xca_11b_4a7e;
const SUBSET_SALT: u64 = 0x5b_5e7;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no ground-truth points to evaluate")]
    NoGroundTruth,
    #[error("no node sets to evaluate")]
    NoNodeSets,
    #[error("empty error list")]
    EmptyErrors,
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("invalid multinomial test: {0}")]
    InvalidTest(String),
    #[error("invalid subset request: {0}")]
    InvalidSubset(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Rti(#[from] RtiError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Format(#[from] crate::io::FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Standard,
    ServoRandom,
    ServoDefault,
    ServoCalibrated,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Standard, Variant::ServoRandom, Variant::ServoDefault, Variant::ServoCalibrated];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::ServoRandom => "servo-random",
            Variant::ServoDefault => "servo-default",
            Variant::ServoCalibrated => "servo-calibrated",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Variant::Standard => "Standard sensors",
            Variant::ServoRandom => "Servo random pos.",
            Variant::ServoDefault => "Servo default pos.",
            Variant::ServoCalibrated => "Calibrated pos.",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| HarnessError::UnknownVariant(s.to_string()))
    }
}

/// A group of sensors evaluated together as one deployment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSet {
    pub variant: Variant,
    pub label: String,
    pub ids: BTreeSet<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub truth: Point2D,
    pub estimate: Point2D,
    pub error: f64,
    pub frames: usize,
    /// Frames whose image maximum was shared by several voxels.
    pub degenerate_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    /// `(sweep, R̄)` after each accepted move, starting with the initial value.
    pub history: Vec<(usize, f64)>,
    pub sweeps: usize,
    pub converged: bool,
    pub cycles: u64,
    pub accepted_moves: usize,
}

impl From<&CalibrationState> for CalibrationSummary {
    fn from(s: &CalibrationState) -> Self {
        Self {
            history: s.history.clone(),
            sweeps: s.sweeps,
            converged: s.converged,
            cycles: s.cycles,
            accepted_moves: s.accepted_moves.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub variant: Variant,
    pub label: String,
    pub node_count: usize,
    /// Servo stops used during the evaluation, empty for standard sets.
    pub servo_positions: BTreeMap<u32, u8>,
    pub points: Vec<PointResult>,
    pub rmse: f64,
    /// Hash over every person-present frame fed to the model.
    pub frames_hash: u64,
    pub calibration: Option<CalibrationSummary>,
}

impl ExperimentReport {
    /// Set when calibration stopped at the sweep limit without settling.
    pub fn calibration_flagged(&self) -> bool {
        self.calibration.as_ref().is_some_and(|c| !c.converged)
    }
}

pub fn rmse(errors: &[f64]) -> Result<f64, HarnessError> {
    if errors.is_empty() {
        return Err(HarnessError::EmptyErrors);
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Relative improvement of `new` over `reference`, as a fraction.
pub fn improvement(reference: f64, new: f64) -> f64 {
    if reference == new {
        0.0
    } else {
        (reference - new) / reference
    }
}

pub fn servo_set(scenario: &Scenario, variant: Variant) -> NodeSet {
    NodeSet {
        variant,
        label: variant.name().to_string(),
        ids: scenario.servo_nodes().iter().map(|n| n.node_id).collect(),
    }
}

/// One standard sensor per servo node, left or right by coin flip.
pub fn coin_flip_subset<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> BTreeSet<u32> {
    scenario
        .flank_pairs()
        .into_iter()
        .map(|(l, r)| if rng.random::<bool>() { l } else { r })
        .collect()
}

/// `count` standard sensors drawn uniformly without replacement.
pub fn random_subset<R: Rng + ?Sized>(scenario: &Scenario, count: usize, rng: &mut R) -> Result<BTreeSet<u32>, HarnessError> {
    let mut ids: Vec<u32> = scenario.standard_nodes().iter().map(|n| n.node_id).collect();
    if count < 2 || count > ids.len() {
        return Err(HarnessError::InvalidSubset(format!("{count} of {} standard sensors", ids.len())));
    }
    ids.shuffle(rng);
    Ok(ids.into_iter().take(count).collect())
}

/// Uniformly random stop for every servo node, ascending by id.
pub fn random_positions(scenario: &Scenario) -> BTreeMap<u32, u8> {
    let mut rng = Pcg64Mcg::seed_from_u64(scenario.seed ^ RANDOM_POSITION_SALT);
    scenario.servo_nodes().iter().map(|n| (n.node_id, rng.random_range(1..=8))).collect()
}

pub fn default_positions(scenario: &Scenario) -> BTreeMap<u32, u8> {
    scenario.servo_nodes().iter().map(|n| (n.node_id, 1)).collect()
}

/// Runs network calibration on the servo nodes in the empty room. Noise
/// draws are decorrelated from the evaluation sessions.
pub fn calibrate_servos(scenario: &Scenario) -> Result<CalibrationState, HarnessError> {
    scenario.validate()?;
    let mut env = scenario.environment();
    env.seed ^= CALIBRATION_SALT;
    let mut net = Network::new(scenario.servo_nodes())?;
    Ok(network_calibrate(&mut net, &env, &scenario.calibration_config())?)
}

/// Empty-room training frames and baseline for a network layout.
pub struct Training {
    pub network: Network,
    pub frames: Vec<MeasurementFrame>,
    pub baseline: BaselineTable,
}

fn build_network(scenario: &Scenario, ids: &BTreeSet<u32>, servo_positions: &BTreeMap<u32, u8>) -> Result<Network, HarnessError> {
    let mut nodes: Vec<_> = scenario.all_nodes().into_iter().filter(|n| ids.contains(&n.node_id)).collect();
    for n in &mut nodes {
        if n.kind == NodeKind::Servo {
            if let Some(&p) = servo_positions.get(&n.node_id) {
                n.set_position(p)?;
            }
        }
    }
    Ok(Network::new(nodes)?)
}

pub fn train(scenario: &Scenario, ids: &BTreeSet<u32>, servo_positions: &BTreeMap<u32, u8>) -> Result<Training, HarnessError> {
    let env = scenario.environment();
    let mut network = build_network(scenario, ids, servo_positions)?;
    let frames = network.collect(&env, None, &scenario.channels, scenario.timing.training_cycles)?;
    let baseline = train_baseline(&frames)?;
    Ok(Training { network, frames, baseline })
}

/// Antenna positions of the listed nodes in a network.
pub fn antennas_of(net: &Network, ids: &BTreeSet<u32>) -> BTreeMap<u32, Point2D> {
    net.nodes().iter().filter(|n| ids.contains(&n.node_id)).map(|n| (n.node_id, n.antenna_pos())).collect()
}

fn median_point(points: &[Point2D]) -> Point2D {
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    Point2D::new(median(&xs).unwrap_or(f64::NAN), median(&ys).unwrap_or(f64::NAN))
}

/// Evaluates several node sets on one recorded session: a single network
/// holding every listed node is trained in the empty room, then the person
/// visits each ground-truth point and every frame is fed to every model.
pub fn run_session(
    scenario: &Scenario,
    servo_positions: &BTreeMap<u32, u8>,
    sets: &[NodeSet],
    prior: Option<&Prior>,
) -> Result<Vec<ExperimentReport>, HarnessError> {
    scenario.validate()?;
    if scenario.ground_truth.is_empty() {
        return Err(HarnessError::NoGroundTruth);
    }
    if sets.is_empty() {
        return Err(HarnessError::NoNodeSets);
    }
    let grid = scenario.grid()?;
    let owned;
    let prior = match prior {
        Some(p) => p,
        None => {
            owned = Prior::for_grid(&grid, &scenario.rti.regularization)?;
            &owned
        }
    };
    let union: BTreeSet<u32> = sets.iter().flat_map(|s| s.ids.iter().copied()).collect();
    let Training { mut network, baseline, .. } = train(scenario, &union, servo_positions)?;
    let models = sets
        .iter()
        .map(|s| {
            let antennas = antennas_of(&network, &s.ids);
            RtiModel::build(&antennas, baseline.clone(), &scenario.channels, grid.clone(), scenario.rti_config(), Some(prior))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let env = scenario.environment();
    let mut hasher = DefaultHasher::new();
    let mut points: Vec<Vec<PointResult>> = vec![Vec::new(); sets.len()];
    for truth in &scenario.ground_truth {
        let person = scenario.person_at(*truth);
        let mut estimates: Vec<Vec<Point2D>> = vec![Vec::with_capacity(scenario.timing.dwell_cycles); sets.len()];
        let mut degenerate = vec![0usize; sets.len()];
        for _ in 0..scenario.timing.dwell_cycles {
            let frame = network.run_tdma_cycle(&env, Some(&person), &scenario.channels, None)?;
            frame.content_hash().hash(&mut hasher);
            for (k, model) in models.iter().enumerate() {
                let loc = model.locate(&frame)?;
                estimates[k].push(loc.position);
                degenerate[k] += usize::from(loc.degenerate);
            }
        }
        for k in 0..sets.len() {
            let estimate = median_point(&estimates[k]);
            points[k].push(PointResult {
                truth: *truth,
                estimate,
                error: estimate.distance(truth),
                frames: estimates[k].len(),
                degenerate_frames: degenerate[k],
            });
        }
    }
    let frames_hash = hasher.finish();
    sets.iter()
        .zip(points)
        .map(|(set, pts)| {
            let errors: Vec<f64> = pts.iter().map(|p| p.error).collect();
            let servo_positions = network
                .nodes()
                .iter()
                .filter(|n| n.kind == NodeKind::Servo && set.ids.contains(&n.node_id))
                .map(|n| (n.node_id, n.position()))
                .collect();
            Ok(ExperimentReport {
                variant: set.variant,
                label: set.label.clone(),
                node_count: set.ids.len(),
                servo_positions,
                rmse: rmse(&errors)?,
                points: pts,
                frames_hash,
                calibration: None,
            })
        })
        .collect()
}

/// Evaluates the servo nodes held at the given stops.
pub fn run_servo(scenario: &Scenario, variant: Variant, positions: &BTreeMap<u32, u8>, prior: Option<&Prior>) -> Result<ExperimentReport, HarnessError> {
    let mut r = run_session(scenario, positions, &[servo_set(scenario, variant)], prior)?;
    Ok(r.remove(0))
}

pub fn run_experiment(scenario: &Scenario, variant: Variant) -> Result<ExperimentReport, HarnessError> {
    run_experiment_with(scenario, variant, None)
}

pub fn run_experiment_with(scenario: &Scenario, variant: Variant, prior: Option<&Prior>) -> Result<ExperimentReport, HarnessError> {
    if scenario.ground_truth.is_empty() {
        return Err(HarnessError::NoGroundTruth);
    }
    match variant {
        Variant::Standard => {
            let mut rng = Pcg64Mcg::seed_from_u64(scenario.seed ^ SUBSET_SALT);
            let set = NodeSet { variant, label: "standard".into(), ids: coin_flip_subset(scenario, &mut rng) };
            Ok(run_session(scenario, &BTreeMap::new(), &[set], prior)?.remove(0))
        }
        Variant::ServoRandom => run_servo(scenario, variant, &random_positions(scenario), prior),
        Variant::ServoDefault => run_servo(scenario, variant, &default_positions(scenario), prior),
        Variant::ServoCalibrated => {
            let state = calibrate_servos(scenario)?;
            if !state.converged {
                log::warn!("calibration stopped after {} sweeps without settling", state.sweeps);
            }
            let mut report = run_servo(scenario, variant, &state.positions, prior)?;
            report.calibration = Some(CalibrationSummary::from(&state));
            Ok(report)
        }
    }
}

/// All four variants on one scene. The default-position servo deployment
/// and the `standard_subsets` coin-flip standard deployments share a single
/// recorded session, so their frame hashes agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seed: u64,
    pub reports: Vec<ExperimentReport>,
}

impl Comparison {
    pub fn of(&self, variant: Variant) -> impl Iterator<Item = &ExperimentReport> {
        self.reports.iter().filter(move |r| r.variant == variant)
    }

    /// Mean RMSE of a variant over its reports.
    pub fn mean_rmse(&self, variant: Variant) -> Option<f64> {
        mean(&self.of(variant).map(|r| r.rmse).collect::<Vec<_>>())
    }

    pub fn median_rmse(&self, variant: Variant) -> Option<f64> {
        median(&self.of(variant).map(|r| r.rmse).collect::<Vec<_>>())
    }
}

pub fn compare(scenario: &Scenario, standard_subsets: usize) -> Result<Comparison, HarnessError> {
    scenario.validate()?;
    let grid = scenario.grid()?;
    let prior = Prior::for_grid(&grid, &scenario.rti.regularization)?;
    let mut rng = Pcg64Mcg::seed_from_u64(scenario.seed ^ SUBSET_SALT);
    let mut sets = vec![servo_set(scenario, Variant::ServoDefault)];
    for i in 0..standard_subsets {
        sets.push(NodeSet { variant: Variant::Standard, label: format!("standard-{}", i + 1), ids: coin_flip_subset(scenario, &mut rng) });
    }
    let mut reports = run_session(scenario, &default_positions(scenario), &sets, Some(&prior))?;
    reports.push(run_servo(scenario, Variant::ServoRandom, &random_positions(scenario), Some(&prior))?);
    reports.push(run_experiment_with(scenario, Variant::ServoCalibrated, Some(&prior))?);
    Ok(Comparison { seed: scenario.seed, reports })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSweep {
    pub subsets: Vec<BTreeSet<u32>>,
    pub rmse: Vec<f64>,
    pub median: f64,
    pub mean: f64,
    pub frames_hash: u64,
}

/// Evaluates `subset_count` standard-sensor subsets on one shared session.
/// With `nodes_per_subset = None` each subset takes one flanking sensor per
/// servo node by coin flip; otherwise subsets of that size are drawn
/// uniformly from all standard sensors.
pub fn standard_subset_sweep<R: Rng + ?Sized>(
    scenario: &Scenario,
    subset_count: usize,
    nodes_per_subset: Option<usize>,
    rng: &mut R,
    prior: Option<&Prior>,
) -> Result<SubsetSweep, HarnessError> {
    if subset_count == 0 {
        return Err(HarnessError::InvalidSubset("subset_count must be >= 1".into()));
    }
    let subsets = (0..subset_count)
        .map(|_| match nodes_per_subset {
            None => Ok(coin_flip_subset(scenario, rng)),
            Some(k) => random_subset(scenario, k, rng),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let sets: Vec<NodeSet> = subsets
        .iter()
        .enumerate()
        .map(|(i, ids)| NodeSet { variant: Variant::Standard, label: format!("standard-{}", i + 1), ids: ids.clone() })
        .collect();
    let reports = run_session(scenario, &BTreeMap::new(), &sets, prior)?;
    let rmse: Vec<f64> = reports.iter().map(|r| r.rmse).collect();
    Ok(SubsetSweep {
        median: median(&rmse).expect("non-empty"),
        mean: mean(&rmse).expect("non-empty"),
        frames_hash: reports[0].frames_hash,
        subsets,
        rmse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultinomialTest {
    /// Estimated P(max category count ≥ threshold) under equal odds.
    pub probability: f64,
    pub observed_max: Option<usize>,
    pub observed_meets_threshold: Option<bool>,
    pub samples: usize,
}

/// Monte Carlo estimate of the chance that, when `trials` items fall
/// uniformly into `categories` bins, some bin receives at least
/// `threshold` items.
pub fn multinomial_bias_test(
    counts: Option<&[usize]>,
    trials: usize,
    categories: usize,
    threshold: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<MultinomialTest, HarnessError> {
    if categories == 0 {
        return Err(HarnessError::InvalidTest("categories must be >= 1".into()));
    }
    if mc_samples == 0 {
        return Err(HarnessError::InvalidTest("mc_samples must be >= 1".into()));
    }
    if categories > 1 << 16 || trials > 1 << 24 {
        return Err(HarnessError::InvalidTest("test too large".into()));
    }
    let observed_max = match counts {
        Some(c) => {
            if c.len() != categories {
                return Err(HarnessError::InvalidTest(format!("{} counts for {categories} categories", c.len())));
            }
            if c.iter().sum::<usize>() != trials {
                return Err(HarnessError::InvalidTest(format!("counts sum to {}, expected {trials}", c.iter().sum::<usize>())));
            }
            c.iter().copied().max()
        }
        None => None,
    };
    let probability = if threshold == 0 {
        1.0
    } else if threshold > trials {
        0.0
    } else {
        let mut rng = Pcg64Mcg::seed_from_u64(seed);
        let mut bins = vec![0usize; categories];
        let mut hits = 0usize;
        for _ in 0..mc_samples {
            bins.iter_mut().for_each(|b| *b = 0);
            let mut hit = false;
            for _ in 0..trials {
                let b = &mut bins[rng.random_range(0..categories)];
                *b += 1;
                hit |= *b >= threshold;
            }
            hits += usize::from(hit);
        }
        hits as f64 / mc_samples as f64
    };
    Ok(MultinomialTest {
        probability,
        observed_max,
        observed_meets_threshold: observed_max.map(|m| m >= threshold),
        samples: mc_samples,
    })
}

/// Sign rates of the RSS change caused by a person standing on the link
/// line, split by the link's fade class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SignRates {
    pub anti_events: usize,
    pub anti_drops: usize,
    pub anti_rises: usize,
    pub deep_events: usize,
    pub deep_drops: usize,
    pub deep_rises: usize,
}

impl SignRates {
    pub fn anti_drop_rate(&self) -> f64 {
        self.anti_drops as f64 / self.anti_events as f64
    }

    pub fn deep_drop_rate(&self) -> f64 {
        self.deep_drops as f64 / self.deep_events as f64
    }

    pub fn anti_rise_rate(&self) -> f64 {
        self.anti_rises as f64 / self.anti_events as f64
    }

    pub fn deep_rise_rate(&self) -> f64 {
        self.deep_rises as f64 / self.deep_events as f64
    }

    pub fn merge(&mut self, o: &SignRates) {
        self.anti_events += o.anti_events;
        self.anti_drops += o.anti_drops;
        self.anti_rises += o.anti_rises;
        self.deep_events += o.deep_events;
        self.deep_drops += o.deep_drops;
        self.deep_rises += o.deep_rises;
    }
}

/// Classifies every servo link-channel pair by its trained fade level and
/// places the person at `stations` evenly spaced points along the interior
/// of each link line, recording whether the mean RSS drops or rises.
pub fn fade_sign_rates(scenario: &Scenario, stations: usize) -> Result<SignRates, HarnessError> {
    let ids: BTreeSet<u32> = scenario.servo_nodes().iter().map(|n| n.node_id).collect();
    let training = train(scenario, &ids, &default_positions(scenario))?;
    let grid = scenario.grid()?;
    let antennas = antennas_of(&training.network, &ids);
    let tiny = VoxelGrid::new(grid.origin(), grid.voxel_size(), 1, 1)?;
    let model = RtiModel::build(&antennas, training.baseline.clone(), &scenario.channels, tiny, scenario.rti_config(), None)?;
    let env = scenario.environment();
    let mut out = SignRates::default();
    for link in model.pairs() {
        let (a, b) = (antennas[&link.tx], antennas[&link.rx]);
        let clear = noiseless_rss(&env, a, b, link.channel, None)?;
        let class = model.fades.class(*link).expect("fade for every pair");
        for k in 1..=stations {
            let t = k as f64 / (stations + 1) as f64;
            let p = Point2D::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
            let person = scenario.person_at(p);
            let delta = noiseless_rss(&env, a, b, link.channel, Some(&person))? - clear;
            let (events, drops, rises) = match class {
                FadeClass::AntiFade => (&mut out.anti_events, &mut out.anti_drops, &mut out.anti_rises),
                FadeClass::DeepFade => (&mut out.deep_events, &mut out.deep_drops, &mut out.deep_rises),
            };
            *events += 1;
            *drops += usize::from(delta < 0.0);
            *rises += usize::from(delta > 0.0);
        }
    }
    Ok(out)
}

/// Mean fade level of the servo links at the given stops, measured against
/// the environment's true path-loss law rather than a refitted one.
pub fn mean_true_fade(scenario: &Scenario, positions: &BTreeMap<u32, u8>) -> Result<f64, HarnessError> {
    let ids: BTreeSet<u32> = positions.keys().copied().collect();
    let training = train(scenario, &ids, positions)?;
    let env = scenario.environment();
    let antennas = antennas_of(&training.network, &ids);
    let mut total = 0.0;
    let mut n = 0usize;
    for (link, entry) in training.baseline.entries() {
        let d = antennas[&link.tx].distance(&antennas[&link.rx]);
        total += entry.mean_dbm - env.path_loss_prediction(d);
        n += 1;
    }
    if n == 0 {
        return Err(HarnessError::Rti(RtiError::NoPairs));
    }
    Ok(total / n as f64)
}

/// An image to dump next to a report.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedImage {
    pub name: String,
    pub image: DVector<f64>,
}

/// Table with one row per variant present: number of tests, mean and
/// median RMSE, and improvement of the mean over the standard sensors.
pub fn summary_table(reports: &[ExperimentReport]) -> String {
    let stats = |v: Variant| {
        let r: Vec<f64> = reports.iter().filter(|r| r.variant == v).map(|r| r.rmse).collect();
        (r.len(), mean(&r), median(&r))
    };
    let reference = stats(Variant::Standard).1;
    let mut out = String::new();
    let _ = writeln!(out, "{:<20} {:>5} {:>14} {:>16} {:>12}", "Variant", "Tests", "Mean RMSE [m]", "Median RMSE [m]", "Improvement");
    for v in Variant::ALL {
        let (n, m, med) = stats(v);
        let (Some(m), Some(med)) = (m, med) else { continue };
        let imp = match reference {
            Some(r) if v != Variant::Standard => format!("{:.0}%", 100.0 * improvement(r, m)),
            _ => "-".to_string(),
        };
        let _ = writeln!(out, "{:<20} {:>5} {:>14.3} {:>16.3} {:>12}", v.title(), n, m, med, imp);
    }
    out
}

fn create(dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<BufWriter<File>, HarnessError> {
    let path = dir.join(name);
    let f = File::create(&path)?;
    written.push(path);
    Ok(BufWriter::new(f))
}

/// Writes `summary.csv`, `points.csv`, `table.txt`, `calibration.csv` when
/// any report carries a calibration trajectory, and a CSV plus PGM file
/// per image. Returns the paths written.
pub fn emit_report(reports: &[ExperimentReport], out_dir: &Path, grid: &VoxelGrid, images: &[NamedImage]) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let mut w = csv::Writer::from_writer(create(out_dir, "summary.csv", &mut written)?);
    w.write_record(["variant", "label", "node_count", "rmse_m", "points", "frames_hash", "calibration_sweeps", "calibration_converged"])
        .map_err(crate::io::FormatError::from)?;
    for r in reports {
        let (sweeps, converged) = match &r.calibration {
            Some(c) => (c.sweeps.to_string(), c.converged.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([
            r.variant.name().to_string(),
            r.label.clone(),
            r.node_count.to_string(),
            r.rmse.to_string(),
            r.points.len().to_string(),
            format!("{:016x}", r.frames_hash),
            sweeps,
            converged,
        ])
        .map_err(crate::io::FormatError::from)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(out_dir, "points.csv", &mut written)?);
    w.write_record(["variant", "label", "point", "truth_x", "truth_y", "estimate_x", "estimate_y", "error_m", "frames", "degenerate_frames"])
        .map_err(crate::io::FormatError::from)?;
    for r in reports {
        for (i, p) in r.points.iter().enumerate() {
            w.write_record([
                r.variant.name().to_string(),
                r.label.clone(),
                i.to_string(),
                p.truth.x.to_string(),
                p.truth.y.to_string(),
                p.estimate.x.to_string(),
                p.estimate.y.to_string(),
                p.error.to_string(),
                p.frames.to_string(),
                p.degenerate_frames.to_string(),
            ])
            .map_err(crate::io::FormatError::from)?;
        }
    }
    w.flush()?;

    if reports.iter().any(|r| r.calibration.is_some()) {
        let mut w = csv::Writer::from_writer(create(out_dir, "calibration.csv", &mut written)?);
        w.write_record(["label", "step", "sweep", "mean_rss"]).map_err(crate::io::FormatError::from)?;
        for r in reports {
            if let Some(c) = &r.calibration {
                for (k, (sweep, rss)) in c.history.iter().enumerate() {
                    w.write_record([r.label.clone(), k.to_string(), sweep.to_string(), rss.to_string()])
                        .map_err(crate::io::FormatError::from)?;
                }
            }
        }
        w.flush()?;
    }

    let mut t = create(out_dir, "table.txt", &mut written)?;
    t.write_all(summary_table(reports).as_bytes())?;
    t.flush()?;

    for img in images {
        write_image_csv(create(out_dir, &format!("image_{}.csv", img.name), &mut written)?, grid, &img.image)?;
        write_image_pgm(create(out_dir, &format!("image_{}.pgm", img.name), &mut written)?, grid, &img.image)?;
    }
    Ok(written)
}
