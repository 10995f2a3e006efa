//! Synthetic RF world: a deterministic scatterer phasor-sum channel, a
//! person shadowing model, servo-node antenna placement and the TDMA
//! measurement cycle with its end-of-cycle rotation command slot.

use crate::geometry::{Point2D, Rect};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::hash::{Hash, Hasher};
use thiserror::Error;

/// Number of discrete servo stops, 45 degrees apart.
pub const SERVO_POSITIONS: u8 = 8;
pub const DEFAULT_SERVO_RADIUS: f64 = 0.10;
const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("servo position {0} out of range 1..=8")]
    InvalidPosition(u8),
    #[error("channel {0} outside IEEE 802.15.4 range 11..=26")]
    InvalidChannel(u8),
    #[error("channel set is empty")]
    EmptyChannelSet,
    #[error("transmitter and receiver coincide")]
    DegenerateLink,
    #[error("point ({x}, {y}) lies outside the room")]
    OutsideRoom { x: f64, y: f64 },
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("invalid person model: {0}")]
    InvalidPerson(String),
    #[error("network needs at least two nodes, got {0}")]
    TooFewNodes(usize),
    #[error("duplicate node id {0}")]
    DuplicateNode(u32),
    #[error("unknown node id {0}")]
    UnknownNode(u32),
    #[error("node {0} is a fixed sensor and cannot rotate")]
    NotRotatable(u32),
}

/// IEEE 802.15.4 channel center frequency in Hz.
pub fn channel_frequency(channel: u8) -> Result<f64, SimError> {
    if !(11..=26).contains(&channel) {
        return Err(SimError::InvalidChannel(channel));
    }
    Ok((2405.0 + 5.0 * f64::from(channel - 11)) * 1e6)
}

/// Ordered, duplicate-free set of 2.4 GHz channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct ChannelSet(Vec<u8>);

impl ChannelSet {
    pub fn new(channels: impl IntoIterator<Item = u8>) -> Result<Self, SimError> {
        let set: BTreeSet<u8> = channels.into_iter().collect();
        if set.is_empty() {
            return Err(SimError::EmptyChannelSet);
        }
        if let Some(&bad) = set.iter().find(|c| !(11..=26).contains(*c)) {
            return Err(SimError::InvalidChannel(bad));
        }
        Ok(Self(set.into_iter().collect()))
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, channel: u8) -> bool {
        self.0.binary_search(&channel).is_ok()
    }
}

impl TryFrom<Vec<u8>> for ChannelSet {
    type Error = SimError;
    fn try_from(v: Vec<u8>) -> Result<Self, SimError> {
        Self::new(v)
    }
}

impl From<ChannelSet> for Vec<u8> {
    fn from(c: ChannelSet) -> Self {
        c.0
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u8::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: Point2D,
    /// Reflection amplitude in [0, 1].
    pub amplitude: f64,
}

/// Ground truth of the simulated deployment area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub room: Rect,
    pub scatterers: Vec<Scatterer>,
    pub tx_power_dbm: f64,
    pub path_loss_exponent: f64,
    /// Loss at the 1 m reference distance, dB.
    pub reference_loss_db: f64,
    pub noise_sigma_db: f64,
    /// RSSI reporting step, dB. Zero disables quantization.
    pub quantization_db: f64,
    pub floor_dbm: f64,
    /// Per-sample packet loss probability.
    pub packet_loss: f64,
    pub seed: u64,
}

impl Environment {
    /// Empty room (line-of-sight only) with default radio parameters.
    pub fn new(room: Rect, seed: u64) -> Self {
        Self {
            room,
            scatterers: Vec::new(),
            tx_power_dbm: 4.5,
            path_loss_exponent: 2.0,
            reference_loss_db: 40.2,
            noise_sigma_db: 1.0,
            quantization_db: 1.0,
            floor_dbm: -100.0,
            packet_loss: 0.0,
            seed,
        }
    }

    /// Replaces the scatterer set with `count` scatterers drawn uniformly
    /// over the room, amplitudes uniform in `[min_amp, max_amp]`.
    pub fn with_random_scatterers(mut self, count: usize, min_amp: f64, max_amp: f64, seed: u64) -> Self {
        let mut rng = Pcg64Mcg::seed_from_u64(seed ^ 0x5ca7_7e25);
        self.scatterers = (0..count)
            .map(|_| Scatterer {
                position: Point2D::new(
                    rng.random_range(self.room.min.x..=self.room.max.x),
                    rng.random_range(self.room.min.y..=self.room.max.y),
                ),
                amplitude: if max_amp > min_amp { rng.random_range(min_amp..=max_amp) } else { min_amp },
            })
            .collect();
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidEnvironment(m.to_owned()));
        if !(self.room.width() > 0.0 && self.room.height() > 0.0) {
            return bad("room must have positive area");
        }
        if !(self.noise_sigma_db >= 0.0) {
            return bad("noise_sigma_db must be >= 0");
        }
        if !(self.quantization_db >= 0.0) {
            return bad("quantization_db must be >= 0");
        }
        if !(0.0..=0.1).contains(&self.packet_loss) {
            return bad("packet_loss must lie in [0, 0.1]");
        }
        if !self.path_loss_exponent.is_finite() || !self.tx_power_dbm.is_finite() || !self.reference_loss_db.is_finite() {
            return bad("radio parameters must be finite");
        }
        for s in &self.scatterers {
            if !(0.0..=1.0).contains(&s.amplitude) {
                return bad("scatterer amplitude outside [0, 1]");
            }
            if !self.room.contains(&s.position) {
                return bad("scatterer outside room");
            }
        }
        Ok(())
    }

    /// Log-distance line-of-sight prediction without multipath, dBm.
    pub fn path_loss_prediction(&self, distance: f64) -> f64 {
        self.tx_power_dbm - self.reference_loss_db - 10.0 * self.path_loss_exponent * distance.log10()
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in [
            self.tx_power_dbm,
            self.path_loss_exponent,
            self.reference_loss_db,
            self.room.min.x,
            self.room.min.y,
            self.room.max.x,
            self.room.max.y,
        ] {
            v.to_bits().hash(&mut h);
        }
        for s in &self.scatterers {
            s.position.x.to_bits().hash(&mut h);
            s.position.y.to_bits().hash(&mut h);
            s.amplitude.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Stationary person, modelled as a disc that attenuates every
/// propagation path passing through it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonModel {
    pub position: Point2D,
    pub body_radius: f64,
    /// Attenuation applied to each obstructed path, dB.
    pub path_attenuation_db: f64,
}

impl PersonModel {
    pub fn at(position: Point2D) -> Self {
        Self { position, body_radius: 0.15, path_attenuation_db: 8.0 }
    }

    fn validate(&self, room: &Rect) -> Result<(), SimError> {
        if !(self.body_radius > 0.0) {
            return Err(SimError::InvalidPerson("body_radius must be > 0".into()));
        }
        if !(self.path_attenuation_db >= 0.0) {
            return Err(SimError::InvalidPerson("path_attenuation_db must be >= 0".into()));
        }
        if !room.contains(&self.position) {
            return Err(SimError::OutsideRoom { x: self.position.x, y: self.position.y });
        }
        Ok(())
    }

    fn blocks(&self, a: &Point2D, b: &Point2D) -> bool {
        self.position.distance_to_segment(a, b) < self.body_radius
    }
}

/// Complex baseband gain of the link, including shadowing by `person`.
fn channel_gain(env: &Environment, tx: Point2D, rx: Point2D, wavelength: f64, person: Option<&PersonModel>) -> Complex64 {
    let k = 2.0 * PI / wavelength;
    let half_eta = 0.5 * env.path_loss_exponent;
    let shadow = person.map_or(1.0, |p| 10f64.powf(-p.path_attenuation_db / 20.0));
    let d = tx.distance(&rx);
    let mut amp = d.powf(-half_eta);
    if person.is_some_and(|p| p.blocks(&tx, &rx)) {
        amp *= shadow;
    }
    let mut h = Complex64::from_polar(amp, -k * d);
    for s in &env.scatterers {
        if s.amplitude == 0.0 {
            continue;
        }
        let path = tx.distance(&s.position) + s.position.distance(&rx);
        let mut amp = s.amplitude * path.powf(-half_eta);
        if person.is_some_and(|p| p.blocks(&tx, &s.position) || p.blocks(&s.position, &rx)) {
            amp *= shadow;
        }
        h += Complex64::from_polar(amp, -k * path);
    }
    h
}

/// Noiseless, unquantized received power in dBm. May be `-inf` under
/// perfect cancellation.
pub fn noiseless_rss(env: &Environment, tx: Point2D, rx: Point2D, channel: u8, person: Option<&PersonModel>) -> Result<f64, SimError> {
    let wavelength = SPEED_OF_LIGHT / channel_frequency(channel)?;
    if tx == rx {
        return Err(SimError::DegenerateLink);
    }
    for p in [tx, rx] {
        if !env.room.contains(&p) {
            return Err(SimError::OutsideRoom { x: p.x, y: p.y });
        }
    }
    if let Some(p) = person {
        p.validate(&env.room)?;
    }
    let h = channel_gain(env, tx, rx, wavelength, person);
    Ok(env.tx_power_dbm - env.reference_loss_db + 20.0 * h.norm().log10())
}

/// Adds receiver noise, quantizes to the reporting step and clamps to the
/// sensitivity floor.
fn report_rssi<R: Rng + ?Sized>(env: &Environment, power_dbm: f64, rng: &mut R) -> f64 {
    let mut v = power_dbm;
    if env.noise_sigma_db > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        v += env.noise_sigma_db * z;
    }
    if env.quantization_db > 0.0 && v.is_finite() {
        v = (v / env.quantization_db).round() * env.quantization_db;
    }
    if v.is_nan() || v < env.floor_dbm {
        env.floor_dbm
    } else {
        v
    }
}

/// One RSSI reading for the link `tx`→`rx` on `channel`.
pub fn simulate_rss<R: Rng + ?Sized>(
    env: &Environment,
    tx: Point2D,
    rx: Point2D,
    channel: u8,
    person: Option<&PersonModel>,
    rng: &mut R,
) -> Result<f64, SimError> {
    let p = noiseless_rss(env, tx, rx, channel, person)?;
    Ok(report_rssi(env, p, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Servo,
    Standard,
}

/// An RF sensor. Servo nodes carry their antenna on an arm of
/// `servo_radius` and can be rotated to one of eight stops; standard
/// nodes have a fixed antenna at `base_center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub node_id: u32,
    pub kind: NodeKind,
    pub base_center: Point2D,
    pub servo_radius: f64,
    position: u8,
}

impl NodeState {
    pub fn servo(node_id: u32, base_center: Point2D) -> Self {
        Self { node_id, kind: NodeKind::Servo, base_center, servo_radius: DEFAULT_SERVO_RADIUS, position: 1 }
    }

    pub fn standard(node_id: u32, position: Point2D) -> Self {
        Self { node_id, kind: NodeKind::Standard, base_center: position, servo_radius: 0.0, position: 1 }
    }

    pub fn position(&self) -> u8 {
        self.position
    }

    pub fn set_position(&mut self, p: u8) -> Result<(), SimError> {
        if !(1..=SERVO_POSITIONS).contains(&p) {
            return Err(SimError::InvalidPosition(p));
        }
        if self.kind == NodeKind::Standard && p != 1 {
            return Err(SimError::NotRotatable(self.node_id));
        }
        self.position = p;
        Ok(())
    }

    pub fn antenna_pos(&self) -> Point2D {
        antenna_position(self, self.position).expect("position kept in range")
    }
}

/// Antenna coordinates of `node` at servo stop `p`; stop 1 lies along +x
/// and stops advance counter-clockwise by 45 degrees.
pub fn antenna_position(node: &NodeState, p: u8) -> Result<Point2D, SimError> {
    if !(1..=SERVO_POSITIONS).contains(&p) {
        return Err(SimError::InvalidPosition(p));
    }
    let theta = 2.0 * PI * f64::from(p - 1) / f64::from(SERVO_POSITIONS);
    Ok(Point2D::new(
        node.base_center.x + node.servo_radius * theta.cos(),
        node.base_center.y + node.servo_radius * theta.sin(),
    ))
}

/// Directed link on one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkChannel {
    pub tx: u32,
    pub rx: u32,
    pub channel: u8,
}

impl LinkChannel {
    pub fn new(tx: u32, rx: u32, channel: u8) -> Self {
        Self { tx, rx, channel }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub link: LinkChannel,
    /// `None` when the packet was lost.
    pub rssi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodePosition {
    pub node_id: u32,
    pub p: u8,
}

/// One TDMA cycle worth of RSS samples, ordered by (tx, rx, channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub cycle: u64,
    pub samples: Vec<Sample>,
    /// Servo stops in effect while the frame was measured.
    pub positions: Vec<NodePosition>,
}

impl MeasurementFrame {
    /// Looks up a sample; `samples` is kept sorted by link.
    pub fn rssi(&self, link: LinkChannel) -> Option<f64> {
        self.samples
            .binary_search_by_key(&link, |s| s.link)
            .ok()
            .and_then(|i| self.samples[i].rssi)
    }

    /// Frame restricted to links whose endpoints both belong to `nodes`.
    pub fn restricted_to(&self, nodes: &BTreeSet<u32>) -> MeasurementFrame {
        MeasurementFrame {
            cycle: self.cycle,
            samples: self
                .samples
                .iter()
                .filter(|s| nodes.contains(&s.link.tx) && nodes.contains(&s.link.rx))
                .copied()
                .collect(),
            positions: self.positions.iter().filter(|p| nodes.contains(&p.node_id)).copied().collect(),
        }
    }

    /// Order-sensitive content hash.
    pub fn content_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.cycle.hash(&mut h);
        for s in &self.samples {
            s.link.hash(&mut h);
            s.rssi.map(f64::to_bits).hash(&mut h);
        }
        for p in &self.positions {
            (p.node_id, p.p).hash(&mut h);
        }
        h.finish()
    }
}

/// Rotation request carried in the reserved end-of-cycle slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RotationCommand {
    pub node_id: u32,
    pub p: u8,
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the noise substream for one sample, so every sample's noise is
/// independent of which other nodes take part in the cycle.
fn sample_seed(seed: u64, cycle: u64, link: LinkChannel) -> u64 {
    let mut s = mix64(seed);
    s = mix64(s ^ cycle);
    s = mix64(s ^ (u64::from(link.tx) << 32 | u64::from(link.rx)));
    mix64(s ^ u64::from(link.channel))
}

#[derive(Debug, Clone, PartialEq)]
struct GainCache {
    env: u64,
    antennas: Vec<(u64, u64)>,
    person: Option<(u64, u64, u64, u64)>,
    channels: Vec<u8>,
    power: Vec<f64>,
}

/// A network of sensors running the TDMA measurement protocol.
#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<NodeState>,
    cycle: u64,
    cache: Option<GainCache>,
}

impl Network {
    pub fn new(mut nodes: Vec<NodeState>) -> Result<Self, SimError> {
        if nodes.len() < 2 {
            return Err(SimError::TooFewNodes(nodes.len()));
        }
        nodes.sort_by_key(|n| n.node_id);
        if let Some(w) = nodes.windows(2).find(|w| w[0].node_id == w[1].node_id) {
            return Err(SimError::DuplicateNode(w[0].node_id));
        }
        for n in &nodes {
            if !(1..=SERVO_POSITIONS).contains(&n.position) {
                return Err(SimError::InvalidPosition(n.position));
            }
        }
        Ok(Self { nodes, cycle: 0, cache: None })
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn node(&self, id: u32) -> Option<&NodeState> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Sets a node's stop directly, outside the TDMA command slot.
    pub fn set_position(&mut self, id: u32, p: u8) -> Result<(), SimError> {
        self.nodes
            .iter_mut()
            .find(|n| n.node_id == id)
            .ok_or(SimError::UnknownNode(id))?
            .set_position(p)
    }

    pub fn positions(&self) -> Vec<NodePosition> {
        self.nodes.iter().map(|n| NodePosition { node_id: n.node_id, p: n.position }).collect()
    }

    fn check_command(&self, cmd: &RotationCommand) -> Result<(), SimError> {
        let node = self.node(cmd.node_id).ok_or(SimError::UnknownNode(cmd.node_id))?;
        if !(1..=SERVO_POSITIONS).contains(&cmd.p) {
            return Err(SimError::InvalidPosition(cmd.p));
        }
        if node.kind == NodeKind::Standard {
            return Err(SimError::NotRotatable(cmd.node_id));
        }
        Ok(())
    }

    fn noiseless_powers(&mut self, env: &Environment, person: Option<&PersonModel>, channels: &ChannelSet) -> Result<&[f64], SimError> {
        let antennas: Vec<Point2D> = self.nodes.iter().map(NodeState::antenna_pos).collect();
        let key_antennas: Vec<(u64, u64)> = antennas.iter().map(|a| (a.x.to_bits(), a.y.to_bits())).collect();
        let key_person = person.map(|p| {
            (
                p.position.x.to_bits(),
                p.position.y.to_bits(),
                p.body_radius.to_bits(),
                p.path_attenuation_db.to_bits(),
            )
        });
        let fp = env.fingerprint();
        let hit = self.cache.as_ref().is_some_and(|c| {
            c.env == fp && c.antennas == key_antennas && c.person == key_person && c.channels == channels.as_slice()
        });
        if !hit {
            let n = antennas.len();
            let mut power = Vec::with_capacity(n * (n - 1) * channels.len());
            for (i, tx) in antennas.iter().enumerate() {
                for (j, rx) in antennas.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    for &c in channels.as_slice() {
                        power.push(noiseless_rss(env, *tx, *rx, c, person)?);
                    }
                }
            }
            self.cache = Some(GainCache {
                env: fp,
                antennas: key_antennas,
                person: key_person,
                channels: channels.as_slice().to_vec(),
                power,
            });
        }
        Ok(&self.cache.as_ref().expect("filled above").power)
    }

    /// Runs one TDMA cycle: every node transmits once on every channel and
    /// all other nodes report the RSS. A pending rotation command is
    /// delivered in the final slot and takes effect from the next cycle.
    pub fn run_tdma_cycle(
        &mut self,
        env: &Environment,
        person: Option<&PersonModel>,
        channels: &ChannelSet,
        command: Option<RotationCommand>,
    ) -> Result<MeasurementFrame, SimError> {
        env.validate()?;
        if let Some(cmd) = &command {
            self.check_command(cmd)?;
        }
        let cycle = self.cycle;
        let positions = self.positions();
        let ids: Vec<u32> = self.nodes.iter().map(|n| n.node_id).collect();
        let (seed, loss) = (env.seed, env.packet_loss);
        let power = self.noiseless_powers(env, person, channels)?;
        let mut samples = Vec::with_capacity(power.len());
        let mut k = 0;
        for &tx in &ids {
            for &rx in &ids {
                if tx == rx {
                    continue;
                }
                for &c in channels.as_slice() {
                    let link = LinkChannel::new(tx, rx, c);
                    let mut rng = Pcg64Mcg::seed_from_u64(sample_seed(seed, cycle, link));
                    let lost = loss > 0.0 && rng.random::<f64>() < loss;
                    let value = report_rssi(env, power[k], &mut rng);
                    samples.push(Sample { link, rssi: (!lost).then_some(value) });
                    k += 1;
                }
            }
        }
        if let Some(cmd) = command {
            self.set_position(cmd.node_id, cmd.p)?;
        }
        self.cycle += 1;
        Ok(MeasurementFrame { cycle, samples, positions })
    }

    /// Runs `count` cycles without commands.
    pub fn collect(
        &mut self,
        env: &Environment,
        person: Option<&PersonModel>,
        channels: &ChannelSet,
        count: usize,
    ) -> Result<Vec<MeasurementFrame>, SimError> {
        (0..count).map(|_| self.run_tdma_cycle(env, person, channels, None)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn room() -> Rect {
        Rect::new(Point2D::new(-10.0, -10.0), Point2D::new(10.0, 10.0))
    }

    fn quiet_env() -> Environment {
        let mut env = Environment::new(room(), 7);
        env.noise_sigma_db = 0.0;
        env.quantization_db = 0.0;
        env.floor_dbm = -200.0;
        env
    }

    #[test]
    fn antenna_positions() {
        let n = NodeState::servo(1, Point2D::new(0.0, 0.0));
        let p1 = antenna_position(&n, 1).unwrap();
        assert_relative_eq!(p1.x, 0.1);
        assert_relative_eq!(p1.y, 0.0);
        let p3 = antenna_position(&n, 3).unwrap();
        assert!(p3.x.abs() < 1e-15);
        assert_relative_eq!(p3.y, 0.1);
        let m = NodeState::servo(2, Point2D::new(2.0, 1.0));
        let p5 = antenna_position(&m, 5).unwrap();
        assert_relative_eq!(p5.x, 1.9);
        assert!((p5.y - 1.0).abs() < 1e-15);
        assert_eq!(antenna_position(&n, 0), Err(SimError::InvalidPosition(0)));
        assert_eq!(antenna_position(&n, 9), Err(SimError::InvalidPosition(9)));
    }

    #[test]
    fn channel_map() {
        assert_eq!(channel_frequency(11).unwrap(), 2.405e9);
        assert_eq!(channel_frequency(26).unwrap(), 2.480e9);
        assert_eq!(channel_frequency(16).unwrap() - channel_frequency(15).unwrap(), 5e6);
        assert_eq!(channel_frequency(10), Err(SimError::InvalidChannel(10)));
        assert_eq!(channel_frequency(27), Err(SimError::InvalidChannel(27)));
    }

    #[test]
    fn channel_set_rules() {
        assert_eq!(ChannelSet::new([26, 11, 16, 11]).unwrap().as_slice(), &[11, 16, 26]);
        assert_eq!(ChannelSet::new([]), Err(SimError::EmptyChannelSet));
        assert_eq!(ChannelSet::new([11, 30]), Err(SimError::InvalidChannel(30)));
    }

    #[test]
    fn pure_path_loss_limit() {
        let env = quiet_env();
        let mut rng = Pcg64Mcg::seed_from_u64(0);
        let far = simulate_rss(&env, Point2D::new(0.0, 0.0), Point2D::new(4.0, 0.0), 11, None, &mut rng).unwrap();
        let near = simulate_rss(&env, Point2D::new(0.0, 0.0), Point2D::new(2.0, 0.0), 11, None, &mut rng).unwrap();
        assert_relative_eq!(far, env.path_loss_prediction(4.0), epsilon = 1e-9);
        assert_relative_eq!(near - far, 10.0 * env.path_loss_exponent * 2f64.log10(), epsilon = 1e-9);
    }

    /// Scatterer on the perpendicular bisector whose detour is half a
    /// wavelength longer than the direct path.
    fn half_wave_scatterer(d: f64, channel: u8) -> Point2D {
        let lambda = SPEED_OF_LIGHT / channel_frequency(channel).unwrap();
        let half = 0.5 * (d + 0.5 * lambda);
        Point2D::new(0.5 * d, (half * half - 0.25 * d * d).sqrt())
    }

    #[test]
    fn destructive_phasor_cancellation() {
        let d = 8.0;
        let mut env = quiet_env();
        env.scatterers.push(Scatterer { position: half_wave_scatterer(d, 11), amplitude: 1.0 });
        let tx = Point2D::new(0.0, 0.0);
        let rx = Point2D::new(d, 0.0);
        let faded = noiseless_rss(&env, tx, rx, 11, None).unwrap();
        assert!(faded < env.path_loss_prediction(d) - 30.0, "{faded}");
    }

    #[test]
    fn obstructing_scattered_path_lifts_deep_fade() {
        let d = 8.0;
        let mut env = quiet_env();
        let s = half_wave_scatterer(d, 11);
        env.scatterers.push(Scatterer { position: s, amplitude: 1.0 });
        let tx = Point2D::new(0.0, 0.0);
        let rx = Point2D::new(d, 0.0);
        // Person on the tx→scatterer leg, well away from the direct path.
        let person = PersonModel::at(Point2D::new(0.5 * s.x, 0.5 * s.y));
        assert!(person.position.distance_to_segment(&tx, &rx) > person.body_radius);
        let clear = noiseless_rss(&env, tx, rx, 11, None).unwrap();
        let blocked = noiseless_rss(&env, tx, rx, 11, Some(&person)).unwrap();
        // Oracle: direct phasor minus the attenuated detour phasor.
        let g_los = d.powf(-1.0);
        let g_s = (2.0 * tx.distance(&s)).powf(-1.0) * 10f64.powf(-0.4);
        let oracle = env.tx_power_dbm - env.reference_loss_db + 20.0 * (g_los - g_s).abs().log10();
        assert!(blocked > clear + 10.0);
        assert_relative_eq!(blocked, oracle, epsilon = 1e-6);
    }

    #[test]
    fn person_outside_room_rejected() {
        let env = quiet_env();
        let p = PersonModel::at(Point2D::new(50.0, 0.0));
        let r = noiseless_rss(&env, Point2D::new(0.0, 0.0), Point2D::new(1.0, 0.0), 11, Some(&p));
        assert_eq!(r, Err(SimError::OutsideRoom { x: 50.0, y: 0.0 }));
    }

    #[test]
    fn quantization_and_floor() {
        let mut env = quiet_env();
        env.quantization_db = 1.0;
        env.floor_dbm = -100.0;
        let mut rng = Pcg64Mcg::seed_from_u64(0);
        let v = simulate_rss(&env, Point2D::new(0.0, 0.0), Point2D::new(3.3, 0.0), 12, None, &mut rng).unwrap();
        assert_eq!(v, v.round());
        assert_eq!(report_rssi(&env, f64::NEG_INFINITY, &mut rng), -100.0);
        assert_eq!(report_rssi(&env, -130.2, &mut rng), -100.0);
    }

    fn ring(n: u32, radius: f64) -> Vec<NodeState> {
        (0..n)
            .map(|i| {
                let a = 2.0 * PI * f64::from(i) / f64::from(n);
                NodeState::servo(i + 1, Point2D::new(radius * a.cos(), radius * a.sin()))
            })
            .collect()
    }

    #[test]
    fn frame_sizes() {
        let env = Environment::new(room(), 1);
        let one = ChannelSet::new([11]).unwrap();
        let mut net = Network::new(ring(2, 2.0)).unwrap();
        assert_eq!(net.run_tdma_cycle(&env, None, &one, None).unwrap().samples.len(), 2);
        let four = ChannelSet::new([15, 20, 25, 26]).unwrap();
        let mut net = Network::new(ring(14, 3.0)).unwrap();
        let f = net.run_tdma_cycle(&env, None, &four, None).unwrap();
        assert_eq!(f.samples.len(), 728);
        assert!(f.samples.iter().all(|s| s.rssi.is_some()));
    }

    #[test]
    fn network_validation() {
        assert_eq!(Network::new(ring(1, 1.0)).unwrap_err(), SimError::TooFewNodes(1));
        let mut nodes = ring(3, 1.0);
        nodes[2].node_id = 1;
        assert_eq!(Network::new(nodes).unwrap_err(), SimError::DuplicateNode(1));
    }

    #[test]
    fn command_takes_effect_next_cycle() {
        let env = Environment::new(room(), 3);
        let ch = ChannelSet::new([11]).unwrap();
        let mut net = Network::new(ring(4, 2.0)).unwrap();
        let before = net.node(3).unwrap().antenna_pos();
        let f0 = net.run_tdma_cycle(&env, None, &ch, Some(RotationCommand { node_id: 3, p: 5 })).unwrap();
        assert_eq!(f0.positions.iter().find(|p| p.node_id == 3).unwrap().p, 1);
        let f1 = net.run_tdma_cycle(&env, None, &ch, None).unwrap();
        assert_eq!(f1.positions.iter().find(|p| p.node_id == 3).unwrap().p, 5);
        assert_ne!(net.node(3).unwrap().antenna_pos(), before);
        let err = net.run_tdma_cycle(&env, None, &ch, Some(RotationCommand { node_id: 9, p: 2 }));
        assert_eq!(err.unwrap_err(), SimError::UnknownNode(9));
        // A rejected command does not consume a cycle.
        assert_eq!(net.cycle(), 2);
    }

    #[test]
    fn standard_nodes_do_not_rotate() {
        let env = Environment::new(room(), 3);
        let ch = ChannelSet::new([11]).unwrap();
        let mut net =
            Network::new(vec![NodeState::servo(1, Point2D::new(0.0, 0.0)), NodeState::standard(2, Point2D::new(1.0, 0.0))]).unwrap();
        let err = net.run_tdma_cycle(&env, None, &ch, Some(RotationCommand { node_id: 2, p: 2 }));
        assert_eq!(err.unwrap_err(), SimError::NotRotatable(2));
    }

    #[test]
    fn deterministic_frames() {
        let env = Environment::new(room(), 11).with_random_scatterers(20, 0.2, 0.8, 11);
        let ch = ChannelSet::new([11, 26]).unwrap();
        let run = || {
            let mut net = Network::new(ring(5, 3.0)).unwrap();
            let mut out = Vec::new();
            for k in 0..4 {
                let cmd = (k == 1).then_some(RotationCommand { node_id: 2, p: 4 });
                out.push(net.run_tdma_cycle(&env, None, &ch, cmd).unwrap());
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn noiseless_frames_constant() {
        let mut env = Environment::new(room(), 11).with_random_scatterers(20, 0.2, 0.8, 11);
        env.noise_sigma_db = 0.0;
        let ch = ChannelSet::new([11, 26]).unwrap();
        let mut net = Network::new(ring(5, 3.0)).unwrap();
        let frames = net.collect(&env, None, &ch, 3).unwrap();
        assert_eq!(frames[0].samples, frames[1].samples);
        assert_eq!(frames[1].samples, frames[2].samples);
    }

    #[test]
    fn packet_loss_marks_missing() {
        let mut env = Environment::new(room(), 5);
        env.packet_loss = 0.1;
        let ch = ChannelSet::new([11, 16, 21, 26]).unwrap();
        let mut net = Network::new(ring(10, 3.0)).unwrap();
        let frames = net.collect(&env, None, &ch, 20).unwrap();
        let total: usize = frames.iter().map(|f| f.samples.len()).sum();
        let lost = frames.iter().flat_map(|f| &f.samples).filter(|s| s.rssi.is_none()).count();
        let rate = lost as f64 / total as f64;
        assert!((rate - 0.1).abs() < 0.02, "{rate}");
        env.packet_loss = 0.2;
        assert!(env.validate().is_err());
    }

    #[test]
    fn sample_noise_independent_of_network_membership() {
        let env = Environment::new(room(), 21).with_random_scatterers(10, 0.2, 0.8, 21);
        let ch = ChannelSet::new([11]).unwrap();
        let nodes = ring(4, 3.0);
        let mut full = Network::new(nodes.clone()).unwrap();
        let mut pair = Network::new(nodes[..2].to_vec()).unwrap();
        let f = full.run_tdma_cycle(&env, None, &ch, None).unwrap();
        let p = pair.run_tdma_cycle(&env, None, &ch, None).unwrap();
        let ids: BTreeSet<u32> = [1, 2].into_iter().collect();
        assert_eq!(f.restricted_to(&ids).samples, p.samples);
    }
}
