//! Servo-node calibration: pick small-scale antenna positions that raise
//! the mean static RSS of the network.
//!
//! Two procedures are provided. [`incremental_calibrate`] deploys sensors
//! one at a time using an eight-sensor platform at each spot;
//! [`network_calibrate`] rotates already deployed servo nodes one at a time,
//! sweeping until no rotation raises the mean network RSS.

use crate::channel::{
    ChannelSet, Environment, LinkChannel, MeasurementFrame, Network, NodeKind, NodeState, RotationCommand, SimError,
    SERVO_POSITIONS,
};
use crate::geometry::Point2D;
use crate::rti::{train_baseline, BaselineTable, RtiError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("no valid RSS samples")]
    NoSamples,
    #[error("invalid calibration config: {0}")]
    InvalidConfig(String),
    #[error("incremental calibration needs the fixed first sensor plus at least one spot")]
    TooFewSpots,
    #[error("node {node} starts at position {p}; calibration starts from position 1")]
    NotAtDefault { node: u32, p: u8 },
    #[error("no calibration states")]
    NoStates,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Rti(#[from] RtiError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// TDMA cycles averaged per candidate position.
    pub samples_per_eval: usize,
    /// Static measurement window of the incremental procedure, seconds.
    pub static_window_s: f64,
    pub cycle_period_s: f64,
    /// Upper bound on full network sweeps.
    pub max_iterations: usize,
    pub channels: ChannelSet,
}

impl CalibrationConfig {
    pub fn new(channels: ChannelSet) -> Self {
        Self { samples_per_eval: 10, static_window_s: 10.0, cycle_period_s: 0.4, max_iterations: 10, channels }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.samples_per_eval == 0 {
            return Err(CalibrationError::InvalidConfig("samples_per_eval must be >= 1".into()));
        }
        if !(self.static_window_s > 0.0 && self.cycle_period_s > 0.0) {
            return Err(CalibrationError::InvalidConfig("time windows must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(CalibrationError::InvalidConfig("max_iterations must be >= 1".into()));
        }
        Ok(())
    }

    /// TDMA cycles that fit in the static window (at least one).
    pub fn static_frames(&self) -> usize {
        ((self.static_window_s / self.cycle_period_s).ceil() as usize).max(1)
    }
}

/// Mean over directed links and channels of the time-averaged RSS. Pairs
/// without any sample are left out of both sum and count.
pub fn mean_network_rss(frames: &[MeasurementFrame], channels: &ChannelSet) -> Result<f64, CalibrationError> {
    let mut acc: BTreeMap<LinkChannel, (f64, usize)> = BTreeMap::new();
    for s in frames.iter().flat_map(|f| &f.samples) {
        if let (true, Some(v)) = (channels.contains(s.link.channel), s.rssi) {
            let e = acc.entry(s.link).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    if acc.is_empty() {
        return Err(CalibrationError::NoSamples);
    }
    let total: f64 = acc.values().map(|(sum, n)| sum / *n as f64).sum();
    Ok(total / acc.len() as f64)
}

/// Platform score of candidate sensor `candidate` against the deployed set:
/// the sum of both link directions per deployed sensor and channel,
/// normalized by `|D|·|C|`. Pairs missing from the baseline are skipped
/// and the normalization shrinks accordingly.
pub fn candidate_mean_rss(candidate: u32, deployed: &[u32], baseline: &BaselineTable, channels: &ChannelSet) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for &d in deployed {
        for &c in channels.as_slice() {
            for link in [LinkChannel::new(candidate, d, c), LinkChannel::new(d, candidate, c)] {
                if let Some(v) = baseline.get(link) {
                    sum += v;
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    // n counts directed terms; two of them make up one (d, c) term.
    2.0 * sum / n as f64
}

/// Platform node ids occupy a block above any deployed id.
const PLATFORM_ID_BASE: u32 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub node_id: u32,
    pub position: Point2D,
    /// Platform slot the sensor was taken from; `None` for the fixed first
    /// sensor.
    pub p: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalResult {
    pub placements: Vec<Placement>,
    /// Per spot, the platform score of each slot 1..=8.
    pub scores: Vec<[f64; 8]>,
    pub cycles: u64,
}

/// Deploys the fixed first sensor at `spots[0]` and then, for each further
/// spot, measures an eight-sensor platform against all deployed sensors
/// and keeps the slot with the highest score (ties: lowest slot).
pub fn incremental_calibrate(
    spots: &[Point2D],
    env: &Environment,
    config: &CalibrationConfig,
) -> Result<IncrementalResult, CalibrationError> {
    config.validate()?;
    if spots.len() < 2 {
        return Err(CalibrationError::TooFewSpots);
    }
    let mut deployed = vec![Placement { node_id: 1, position: spots[0], p: None }];
    let mut scores = Vec::new();
    let mut cycles = 0;
    for (k, spot) in spots[1..].iter().enumerate() {
        let hub = NodeState::servo(0, *spot);
        let mut nodes: Vec<NodeState> = deployed.iter().map(|d| NodeState::standard(d.node_id, d.position)).collect();
        let mut slots = Vec::with_capacity(SERVO_POSITIONS as usize);
        for p in 1..=SERVO_POSITIONS {
            let at = crate::channel::antenna_position(&hub, p)?;
            let id = PLATFORM_ID_BASE + u32::from(p);
            nodes.push(NodeState::standard(id, at));
            slots.push((id, at));
        }
        let mut net = Network::new(nodes)?;
        let frames = net.collect(env, None, &config.channels, config.static_frames())?;
        cycles += net.cycle();
        let baseline = train_baseline(&frames)?;
        let ids: Vec<u32> = deployed.iter().map(|d| d.node_id).collect();
        let mut table = [f64::NEG_INFINITY; 8];
        for (i, (id, _)) in slots.iter().enumerate() {
            table[i] = candidate_mean_rss(*id, &ids, &baseline, &config.channels);
        }
        let best = (0..8).fold(0, |b, i| if table[i] > table[b] { i } else { b });
        deployed.push(Placement { node_id: k as u32 + 2, position: slots[best].1, p: Some(best as u8 + 1) });
        scores.push(table);
    }
    Ok(IncrementalResult { placements: deployed, scores, cycles })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub iteration: usize,
    pub node_id: u32,
    pub p: u8,
    pub mean_rss: f64,
    /// True on the row of the position that was adopted by an accepted move.
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub node_id: u32,
    pub from: u8,
    pub to: u8,
}

/// Node state before and after one sensor's eight-position evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorOutcome {
    pub iteration: usize,
    pub before: NodeState,
    pub after: NodeState,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationState {
    pub positions: BTreeMap<u32, u8>,
    /// `(iteration, R̄)`: the initial measurement at iteration 0 followed by
    /// one entry per accepted move.
    pub history: Vec<(usize, f64)>,
    pub accepted_moves: Vec<Move>,
    pub evaluations: Vec<Evaluation>,
    pub outcomes: Vec<SensorOutcome>,
    pub sweeps: usize,
    pub converged: bool,
    pub cycles: u64,
}

impl CalibrationState {
    pub fn final_mean_rss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.1)
    }
}

fn measure(net: &mut Network, env: &Environment, config: &CalibrationConfig) -> Result<f64, CalibrationError> {
    let frames = net.collect(env, None, &config.channels, config.samples_per_eval)?;
    mean_network_rss(&frames, &config.channels)
}

/// Rotates servo sensors in ascending id order. Each sensor is measured at
/// all eight stops with `samples_per_eval` cycles per stop; the best stop
/// is adopted only if it strictly beats the incumbent mean, otherwise the
/// sensor returns to where it started. Sweeps repeat until one accepts no
/// move or `max_iterations` sweeps have run.
pub fn network_calibrate(
    net: &mut Network,
    env: &Environment,
    config: &CalibrationConfig,
) -> Result<CalibrationState, CalibrationError> {
    config.validate()?;
    let servos: Vec<u32> = net.nodes().iter().filter(|n| n.kind == NodeKind::Servo).map(|n| n.node_id).collect();
    if let Some(n) = net.nodes().iter().find(|n| n.kind == NodeKind::Servo && n.position() != 1) {
        return Err(CalibrationError::NotAtDefault { node: n.node_id, p: n.position() });
    }
    let start_cycle = net.cycle();
    let mut incumbent = measure(net, env, config)?;
    let mut state = CalibrationState {
        positions: BTreeMap::new(),
        history: vec![(0, incumbent)],
        accepted_moves: Vec::new(),
        evaluations: Vec::new(),
        outcomes: Vec::new(),
        sweeps: 0,
        converged: false,
        cycles: 0,
    };
    let rotate = |net: &mut Network, node_id: u32, p: u8| -> Result<(), CalibrationError> {
        net.run_tdma_cycle(env, None, &config.channels, Some(RotationCommand { node_id, p }))?;
        Ok(())
    };
    for iteration in 1..=config.max_iterations {
        state.sweeps = iteration;
        let mut moved = false;
        for &s in &servos {
            let before = net.node(s).expect("servo id").clone();
            let original = before.position();
            let mut scores = [f64::NEG_INFINITY; 8];
            let first_row = state.evaluations.len();
            for p in 1..=SERVO_POSITIONS {
                rotate(net, s, p)?;
                let r = measure(net, env, config)?;
                scores[usize::from(p - 1)] = r;
                state.evaluations.push(Evaluation { iteration, node_id: s, p, mean_rss: r, accepted: false });
            }
            // Ties keep the sensor where it is, then prefer the lowest stop.
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let best = if scores[usize::from(original - 1)] == max {
                original
            } else {
                (1..=SERVO_POSITIONS).find(|p| scores[usize::from(p - 1)] == max).expect("max attained")
            };
            let accepted = best != original && max > incumbent;
            if accepted {
                rotate(net, s, best)?;
                incumbent = max;
                state.history.push((iteration, incumbent));
                state.accepted_moves.push(Move { node_id: s, from: original, to: best });
                state.evaluations[first_row + usize::from(best - 1)].accepted = true;
                moved = true;
            } else {
                rotate(net, s, original)?;
            }
            state.outcomes.push(SensorOutcome { iteration, before, after: net.node(s).expect("servo id").clone(), accepted });
        }
        if !moved {
            state.converged = true;
            break;
        }
    }
    state.positions = net.positions().into_iter().filter(|p| servos.contains(&p.node_id)).map(|p| (p.node_id, p.p)).collect();
    state.cycles = net.cycle() - start_cycle;
    Ok(state)
}

/// Counts of final positions 1..=8 across calibration runs.
pub fn position_histogram<'a>(states: impl IntoIterator<Item = &'a CalibrationState>) -> Result<[usize; 8], CalibrationError> {
    let mut counts = [0usize; 8];
    let mut any = false;
    for s in states {
        any = true;
        for &p in s.positions.values() {
            counts[usize::from(p - 1)] += 1;
        }
    }
    if !any {
        return Err(CalibrationError::NoStates);
    }
    Ok(counts)
}

/// Servo nodes of a network, ids only.
pub fn servo_ids(net: &Network) -> BTreeSet<u32> {
    net.nodes().iter().filter(|n| n.kind == NodeKind::Servo).map(|n| n.node_id).collect()
}

/// Servo nodes on a ring, all at the default stop; used by tests and the
/// built-in scenes.
pub fn servo_ring(count: u32, center: Point2D, radius: f64) -> Vec<NodeState> {
    (0..count)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * f64::from(i) / f64::from(count);
            NodeState::servo(i + 1, Point2D::new(center.x + radius * a.cos(), center.y + radius * a.sin()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{noiseless_rss, Sample, Scatterer, DEFAULT_SERVO_RADIUS};
    use crate::geometry::Rect;
    use crate::rti::BaselineEntry;
    use approx::assert_relative_eq;

    fn room() -> Rect {
        Rect::new(Point2D::new(-8.0, -8.0), Point2D::new(12.0, 8.0))
    }

    fn quiet(mut env: Environment) -> Environment {
        env.noise_sigma_db = 0.0;
        env
    }

    fn one_channel() -> ChannelSet {
        ChannelSet::new([11]).unwrap()
    }

    fn frame_of(values: &[(u32, u32, f64)]) -> MeasurementFrame {
        MeasurementFrame {
            cycle: 0,
            samples: values.iter().map(|&(t, r, v)| Sample { link: LinkChannel::new(t, r, 11), rssi: Some(v) }).collect(),
            positions: vec![],
        }
    }

    #[test]
    fn mean_rss_examples() {
        let c = one_channel();
        assert_eq!(mean_network_rss(&[frame_of(&[(1, 2, -60.0), (2, 1, -60.0)])], &c).unwrap(), -60.0);
        assert_eq!(mean_network_rss(&[frame_of(&[(1, 2, -50.0), (2, 1, -70.0)])], &c).unwrap(), -60.0);
        let mut lost = frame_of(&[(1, 2, -50.0)]);
        lost.samples[0].rssi = None;
        assert!(matches!(mean_network_rss(&[lost], &c), Err(CalibrationError::NoSamples)));
    }

    #[test]
    fn mean_rss_matches_brute_force_on_full_network() {
        let channels = ChannelSet::new([15, 20, 25, 26]).unwrap();
        let nodes = servo_ring(14, Point2D::new(0.0, 0.0), 3.0);
        let env = Environment::new(room(), 4).with_random_scatterers(25, 0.2, 0.8, 4);
        let mut net = Network::new(nodes).unwrap();
        let frames = net.collect(&env, None, &channels, 3).unwrap();
        assert_eq!(frames[0].samples.len(), 728);
        let mut per_pair: BTreeMap<LinkChannel, Vec<f64>> = BTreeMap::new();
        for s in frames.iter().flat_map(|f| &f.samples) {
            per_pair.entry(s.link).or_default().push(s.rssi.unwrap());
        }
        let brute: f64 = per_pair.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).sum::<f64>() / 728.0;
        assert_relative_eq!(mean_network_rss(&frames, &channels).unwrap(), brute, epsilon = 1e-9);
    }

    fn table(entries: &[(u32, u32, f64)]) -> BaselineTable {
        BaselineTable::from_entries(
            entries.iter().map(|&(t, r, v)| (LinkChannel::new(t, r, 11), BaselineEntry { mean_dbm: v, count: 1 })),
        )
    }

    #[test]
    fn candidate_score_is_literal_two_direction_sum() {
        let c = one_channel();
        let t = table(&[(9, 1, -60.0), (1, 9, -60.0), (9, 2, -60.0), (2, 9, -60.0)]);
        assert_eq!(candidate_mean_rss(9, &[1, 2], &t, &c), -120.0);
        let t = table(&[(9, 1, -55.0), (1, 9, -55.0)]);
        assert_eq!(candidate_mean_rss(9, &[1], &t, &c), -110.0);
    }

    #[test]
    fn candidate_argmax_invariant_to_shift() {
        let c = one_channel();
        let raw = [(11, 1, -61.0), (1, 11, -64.0), (12, 1, -58.0), (1, 12, -66.0), (13, 1, -70.0), (1, 13, -52.5)];
        let shifted: Vec<(u32, u32, f64)> = raw.iter().map(|&(a, b, v)| (a, b, v + 7.25)).collect();
        let pick = |t: &BaselineTable| {
            [11, 12, 13]
                .into_iter()
                .max_by(|a, b| candidate_mean_rss(*a, &[1], t, &c).total_cmp(&candidate_mean_rss(*b, &[1], t, &c)))
                .unwrap()
        };
        assert_eq!(pick(&table(&raw)), pick(&table(&shifted)));
    }

    #[test]
    fn incremental_tie_picks_first_slot() {
        let mut env = quiet(Environment::new(room(), 1));
        env.path_loss_exponent = 0.0;
        let cfg = CalibrationConfig::new(one_channel());
        let r = incremental_calibrate(&[Point2D::new(0.0, 0.0), Point2D::new(5.0, 0.0)], &env, &cfg).unwrap();
        assert_eq!(r.placements.len(), 2);
        assert_eq!(r.placements[1].p, Some(1));
        assert!(r.scores[0].iter().all(|s| *s == r.scores[0][0]));
    }

    #[test]
    fn incremental_grows_by_one_per_spot() {
        let env = Environment::new(room(), 2).with_random_scatterers(20, 0.2, 0.8, 2);
        let cfg = CalibrationConfig::new(ChannelSet::new([11, 26]).unwrap());
        let spots = [Point2D::new(0.0, 0.0), Point2D::new(4.0, 0.0), Point2D::new(4.0, 4.0), Point2D::new(0.0, 4.0)];
        let r = incremental_calibrate(&spots, &env, &cfg).unwrap();
        assert_eq!(r.placements.len(), 4);
        assert_eq!(r.scores.len(), 3);
        for (i, pl) in r.placements.iter().enumerate().skip(1) {
            assert!(pl.position.distance(&spots[i]) - DEFAULT_SERVO_RADIUS < 1e-12);
        }
        assert!(matches!(incremental_calibrate(&spots[..1], &env, &cfg), Err(CalibrationError::TooFewSpots)));
    }

    #[test]
    fn incremental_avoids_nulled_slot() {
        // Without multipath slot 1 (closest to the fixed sensor) wins; a
        // half-wave scatterer nulls its link and the pick must move.
        let first = Point2D::new(10.0, 0.0);
        let spot = Point2D::new(0.0, 0.0);
        let mut env = quiet(Environment::new(room(), 3));
        env.quantization_db = 0.0;
        let cfg = CalibrationConfig::new(one_channel());
        let clean = incremental_calibrate(&[first, spot], &env, &cfg).unwrap();
        assert_eq!(clean.placements[1].p, Some(1));

        let a1 = Point2D::new(0.1, 0.0);
        let lambda = 299_792_458.0 / 2.405e9;
        let d = a1.distance(&first);
        let half = 0.5 * (d + 0.5 * lambda);
        let s = Point2D::new(0.5 * (a1.x + first.x), (half * half - 0.25 * d * d).sqrt());
        env.scatterers.push(Scatterer { position: s, amplitude: 1.0 });
        let r = incremental_calibrate(&[first, spot], &env, &cfg).unwrap();

        // Exhaustive oracle straight from the channel model.
        let hub = NodeState::servo(0, spot);
        let oracle: Vec<f64> = (1..=8)
            .map(|p| {
                let a = crate::channel::antenna_position(&hub, p).unwrap();
                noiseless_rss(&env, a, first, 11, None).unwrap() + noiseless_rss(&env, first, a, 11, None).unwrap()
            })
            .collect();
        let want = (0..8).fold(0, |b, i| if oracle[i] > oracle[b] { i } else { b }) as u8 + 1;
        assert_ne!(want, 1);
        assert_eq!(r.placements[1].p, Some(want));
        for i in 0..8 {
            assert_relative_eq!(r.scores[0][i], oracle[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn los_only_never_moves() {
        let mut env = quiet(Environment::new(room(), 5));
        env.path_loss_exponent = 0.0;
        let mut net = Network::new(servo_ring(5, Point2D::new(0.0, 0.0), 3.0)).unwrap();
        let cfg = CalibrationConfig::new(ChannelSet::new([11, 26]).unwrap());
        let st = network_calibrate(&mut net, &env, &cfg).unwrap();
        assert!(st.converged);
        assert_eq!(st.sweeps, 1);
        assert!(st.accepted_moves.is_empty());
        assert!(st.positions.values().all(|p| *p == 1));
    }

    #[test]
    fn first_sensor_choice_matches_exhaustive_oracle() {
        let env = quiet(Environment::new(room(), 6).with_random_scatterers(30, 0.3, 0.9, 6));
        let channels = ChannelSet::new([11, 18]).unwrap();
        let nodes = servo_ring(4, Point2D::new(0.0, 0.0), 3.0);
        let ids: Vec<u32> = nodes.iter().map(|n| n.node_id).collect();
        // Oracle: mean over all directed links and channels with sensor 1
        // at each stop, computed from the channel model directly.
        let oracle: Vec<f64> = (1..=8)
            .map(|p| {
                let mut ns = nodes.clone();
                ns[0].set_position(p).unwrap();
                let mut total = 0.0;
                let mut n = 0.0;
                for a in &ns {
                    for b in &ns {
                        if a.node_id == b.node_id {
                            continue;
                        }
                        for &c in channels.as_slice() {
                            let v = noiseless_rss(&env, a.antenna_pos(), b.antenna_pos(), c, None).unwrap();
                            total += v.round().max(env.floor_dbm);
                            n += 1.0;
                        }
                    }
                }
                total / n
            })
            .collect();
        let mut net = Network::new(nodes.clone()).unwrap();
        let mut cfg = CalibrationConfig::new(channels);
        cfg.max_iterations = 1;
        let st = network_calibrate(&mut net, &env, &cfg).unwrap();
        let first: Vec<&Evaluation> = st.evaluations.iter().filter(|e| e.node_id == ids[0]).collect();
        for e in &first {
            assert_relative_eq!(e.mean_rss, oracle[usize::from(e.p - 1)], epsilon = 1e-9);
        }
        let max = oracle.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let want = if oracle[0] == max { 1 } else { (0..8).find(|&i| oracle[i] == max).unwrap() as u8 + 1 };
        let got = st.outcomes[0].after.position();
        assert_eq!(got, want);
        if want != 1 {
            assert!(st.history[1].1 > st.history[0].1);
        }
    }

    #[test]
    fn history_monotone_and_reverts_exact() {
        for seed in 0..20 {
            let env = Environment::new(room(), seed).with_random_scatterers(30, 0.2, 0.8, seed);
            let mut net = Network::new(servo_ring(6, Point2D::new(0.0, 0.0), 3.0)).unwrap();
            let mut cfg = CalibrationConfig::new(ChannelSet::new([11, 16]).unwrap());
            cfg.samples_per_eval = 3;
            let st = network_calibrate(&mut net, &env, &cfg).unwrap();
            assert!(st.history.windows(2).all(|w| w[1].1 > w[0].1), "seed {seed}");
            for o in st.outcomes.iter().filter(|o| !o.accepted) {
                assert_eq!(o.before, o.after);
                let (a, b) = (o.before.antenna_pos(), o.after.antenna_pos());
                assert_eq!((a.x.to_bits(), a.y.to_bits()), (b.x.to_bits(), b.y.to_bits()));
            }
            assert_eq!(st.accepted_moves.len(), st.history.len() - 1);
            assert_eq!(st.evaluations.iter().filter(|e| e.accepted).count(), st.accepted_moves.len());
        }
    }

    #[test]
    fn rejects_non_default_start_and_bad_config() {
        let env = Environment::new(room(), 1);
        let mut net = Network::new(servo_ring(3, Point2D::new(0.0, 0.0), 2.0)).unwrap();
        net.set_position(2, 4).unwrap();
        let cfg = CalibrationConfig::new(one_channel());
        assert!(matches!(network_calibrate(&mut net, &env, &cfg), Err(CalibrationError::NotAtDefault { node: 2, p: 4 })));
        let bad = CalibrationConfig { samples_per_eval: 0, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn histogram_counts() {
        let st = |ps: &[u8]| CalibrationState {
            positions: ps.iter().enumerate().map(|(i, p)| (i as u32 + 1, *p)).collect(),
            history: vec![],
            accepted_moves: vec![],
            evaluations: vec![],
            outcomes: vec![],
            sweeps: 1,
            converged: true,
            cycles: 0,
        };
        let h = position_histogram([&st(&[1, 1, 1])]).unwrap();
        assert_eq!(h, [3, 0, 0, 0, 0, 0, 0, 0]);
        let a = st(&[1, 2, 3, 4, 5, 6, 7, 8, 1, 2, 3, 4, 5]);
        let b = st(&[6, 7, 8, 1, 2, 3, 4, 5, 6, 7, 8, 1, 2, 3]);
        let c = st(&[4, 5, 6, 7, 8, 1, 2, 3, 4, 5, 6]);
        let h = position_histogram([&a, &b, &c]).unwrap();
        assert_eq!(h.iter().sum::<usize>(), 38);
        assert!(position_histogram(std::iter::empty()).is_err());
    }
}
