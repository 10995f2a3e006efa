//! Scenario description: the simulated room, sensor layout, evaluation
//! points and every tunable of the pipeline. Scenarios are read from and
//! written to TOML.

use crate::calibration::CalibrationConfig;
use crate::channel::{
    ChannelSet, Environment, NodeState, PersonModel, Scatterer, SimError, DEFAULT_SERVO_RADIUS,
};
use crate::geometry::{GeometryError, Point2D, Rect, VoxelGrid};
use crate::rti::{ProbabilityConfig, RegularizationParams, RtiConfig, WidthConfig};
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Flanking standard sensors may sit at most this far from the servo hub.
pub const MAX_STANDARD_OFFSET: f64 = 0.20;
/// Standard sensor ids are `STANDARD_ID_BASE + 2·i − 1` (left) and
/// `STANDARD_ID_BASE + 2·i` (right) for servo node `i`.
pub const STANDARD_ID_BASE: u32 = 100;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub tx_power_dbm: f64,
    pub path_loss_exponent: f64,
    pub reference_loss_db: f64,
    pub noise_sigma_db: f64,
    pub quantization_db: f64,
    pub floor_dbm: f64,
    pub packet_loss: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        let e = Environment::new(Rect::new(Point2D::default(), Point2D::new(1.0, 1.0)), 0);
        Self {
            tx_power_dbm: e.tx_power_dbm,
            path_loss_exponent: e.path_loss_exponent,
            reference_loss_db: e.reference_loss_db,
            noise_sigma_db: e.noise_sigma_db,
            quantization_db: e.quantization_db,
            floor_dbm: e.floor_dbm,
            packet_loss: e.packet_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScattererConfig {
    /// Random scatterers drawn over the room.
    pub count: usize,
    pub min_amplitude: f64,
    pub max_amplitude: f64,
    /// Defaults to the scenario seed.
    pub seed: Option<u64>,
    /// Extra scatterers at fixed positions.
    pub fixed: Vec<Scatterer>,
}

impl Default for ScattererConfig {
    fn default() -> Self {
        Self { count: 20, min_amplitude: 0.1, max_amplitude: 0.5, seed: None, fixed: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonConfig {
    pub body_radius: f64,
    pub path_attenuation_db: f64,
}

impl Default for PersonConfig {
    fn default() -> Self {
        let p = PersonModel::at(Point2D::default());
        Self { body_radius: p.body_radius, path_attenuation_db: p.path_attenuation_db }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    /// Empty-room cycles used to train baselines.
    pub training_cycles: usize,
    /// Cycles the person stands at each evaluation point.
    pub dwell_cycles: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { training_cycles: 30, dwell_cycles: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RtiSettings {
    pub voxel_size: f64,
    pub widths: WidthConfig,
    pub probabilities: ProbabilityConfig,
    pub regularization: RegularizationParams,
}

impl Default for RtiSettings {
    fn default() -> Self {
        Self {
            voxel_size: 0.25,
            widths: WidthConfig::default(),
            probabilities: ProbabilityConfig::default(),
            regularization: RegularizationParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub samples_per_eval: usize,
    pub static_window_s: f64,
    pub cycle_period_s: f64,
    pub max_iterations: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self { samples_per_eval: 10, static_window_s: 10.0, cycle_period_s: 0.4, max_iterations: 10 }
    }
}

fn default_servo_radius() -> f64 {
    DEFAULT_SERVO_RADIUS
}

fn default_standard_offset() -> f64 {
    MAX_STANDARD_OFFSET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub room: Rect,
    pub channels: ChannelSet,
    #[serde(default = "default_servo_radius")]
    pub servo_radius: f64,
    /// Distance of each flanking standard sensor from its servo hub.
    #[serde(default = "default_standard_offset")]
    pub standard_offset: f64,
    /// Hub positions of the servo nodes; node ids follow list order from 1.
    pub servo_nodes: Vec<Point2D>,
    #[serde(default)]
    pub ground_truth: Vec<Point2D>,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default)]
    pub scatterers: ScattererConfig,
    #[serde(default)]
    pub person: PersonConfig,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default)]
    pub rti: RtiSettings,
    #[serde(default)]
    pub calibration: CalibrationSettings,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string(self)?)
    }

    /// A 54 m² laboratory-like room with 14 servo nodes along the walls,
    /// 28 flanking standard sensors and 32 evaluation points.
    pub fn lab(seed: u64) -> Self {
        let side = 7.35;
        let room = Rect::new(Point2D::new(0.0, 0.0), Point2D::new(side, side));
        let servo_nodes = perimeter_layout(&room, 14, 0.35);
        let mut rng = Pcg64Mcg::seed_from_u64(seed ^ 0x6a7d);
        let mut ground_truth = Vec::new();
        let (lo, hi) = (1.2, side - 1.2);
        for iy in 0..6 {
            for ix in 0..6 {
                if (ix == 0 || ix == 5) && (iy == 0 || iy == 5) {
                    continue;
                }
                let jitter = |r: &mut Pcg64Mcg| r.random_range(-0.1..0.1);
                ground_truth.push(Point2D::new(
                    lo + (hi - lo) * f64::from(ix) / 5.0 + jitter(&mut rng),
                    lo + (hi - lo) * f64::from(iy) / 5.0 + jitter(&mut rng),
                ));
            }
        }
        Self {
            seed,
            room,
            channels: ChannelSet::new([15, 20, 25, 26]).expect("valid channels"),
            servo_radius: DEFAULT_SERVO_RADIUS,
            standard_offset: MAX_STANDARD_OFFSET,
            servo_nodes,
            ground_truth,
            radio: RadioConfig::default(),
            scatterers: ScattererConfig::default(),
            person: PersonConfig::default(),
            timing: TimingConfig::default(),
            rti: RtiSettings::default(),
            calibration: CalibrationSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        self.environment().validate()?;
        if self.servo_nodes.len() < 2 {
            return bad(format!("need at least two servo nodes, got {}", self.servo_nodes.len()));
        }
        if !(self.servo_radius >= 0.0) {
            return bad("servo_radius must be >= 0".into());
        }
        if !(self.standard_offset > 0.0 && self.standard_offset <= MAX_STANDARD_OFFSET + 1e-12) {
            return bad(format!("standard_offset must lie in (0, {MAX_STANDARD_OFFSET}]"));
        }
        if !(0.0..=1.0).contains(&self.scatterers.min_amplitude)
            || !(0.0..=1.0).contains(&self.scatterers.max_amplitude)
            || self.scatterers.min_amplitude > self.scatterers.max_amplitude
        {
            return bad("scatterer amplitudes must satisfy 0 <= min <= max <= 1".into());
        }
        if self.scatterers.count > 10_000 || self.servo_nodes.len() > 500 || self.ground_truth.len() > 100_000 {
            return bad("scenario too large".into());
        }
        for n in self.all_nodes() {
            for p in 1..=crate::channel::SERVO_POSITIONS {
                let a = crate::channel::antenna_position(&n, p)?;
                if !self.room.contains(&a) {
                    return bad(format!("node {} antenna ({:.3}, {:.3}) outside room", n.node_id, a.x, a.y));
                }
            }
        }
        for (i, g) in self.ground_truth.iter().enumerate() {
            if !self.room.contains(g) {
                return bad(format!("ground-truth point {i} outside room"));
            }
        }
        if !(self.person.body_radius > 0.0) || !(self.person.path_attenuation_db >= 0.0) {
            return bad("person body_radius must be > 0 and path_attenuation_db >= 0".into());
        }
        if self.timing.training_cycles == 0 || self.timing.dwell_cycles == 0 {
            return bad("training_cycles and dwell_cycles must be >= 1".into());
        }
        if self.timing.training_cycles > 100_000 || self.timing.dwell_cycles > 100_000 {
            return bad("cycle counts too large".into());
        }
        if !(self.rti.voxel_size > 0.0) {
            return bad("voxel_size must be > 0".into());
        }
        let cells = (self.room.width() / self.rti.voxel_size) * (self.room.height() / self.rti.voxel_size);
        if !(cells >= 1.0 && cells <= 40_000.0) {
            return bad(format!("voxel grid of {cells:.0} cells is out of range"));
        }
        self.rti.widths.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.rti.probabilities.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.rti.regularization.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.calibration_config().validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn environment(&self) -> Environment {
        let r = &self.radio;
        let mut env = Environment {
            room: self.room,
            scatterers: Vec::new(),
            tx_power_dbm: r.tx_power_dbm,
            path_loss_exponent: r.path_loss_exponent,
            reference_loss_db: r.reference_loss_db,
            noise_sigma_db: r.noise_sigma_db,
            quantization_db: r.quantization_db,
            floor_dbm: r.floor_dbm,
            packet_loss: r.packet_loss,
            seed: self.seed,
        }
        .with_random_scatterers(
            self.scatterers.count,
            self.scatterers.min_amplitude,
            self.scatterers.max_amplitude,
            self.scatterers.seed.unwrap_or(self.seed),
        );
        env.scatterers.extend(self.scatterers.fixed.iter().copied());
        env
    }

    pub fn servo_nodes(&self) -> Vec<NodeState> {
        self.servo_nodes
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut n = NodeState::servo(i as u32 + 1, *p);
                n.servo_radius = self.servo_radius;
                n
            })
            .collect()
    }

    /// Two standard sensors per servo node, one on each side along the
    /// direction perpendicular to the line towards the room centre.
    pub fn standard_nodes(&self) -> Vec<NodeState> {
        let c = Point2D::new(0.5 * (self.room.min.x + self.room.max.x), 0.5 * (self.room.min.y + self.room.max.y));
        let mut out = Vec::with_capacity(2 * self.servo_nodes.len());
        for (i, hub) in self.servo_nodes.iter().enumerate() {
            let (dx, dy) = (c.x - hub.x, c.y - hub.y);
            let norm = dx.hypot(dy);
            let (tx, ty) = if norm > 0.0 { (-dy / norm, dx / norm) } else { (1.0, 0.0) };
            let base = STANDARD_ID_BASE + 2 * i as u32;
            let o = self.standard_offset;
            out.push(NodeState::standard(base + 1, Point2D::new(hub.x + o * tx, hub.y + o * ty)));
            out.push(NodeState::standard(base + 2, Point2D::new(hub.x - o * tx, hub.y - o * ty)));
        }
        out
    }

    pub fn all_nodes(&self) -> Vec<NodeState> {
        let mut v = self.servo_nodes();
        v.extend(self.standard_nodes());
        v
    }

    /// Left and right standard neighbour ids of each servo node.
    pub fn flank_pairs(&self) -> Vec<(u32, u32)> {
        (0..self.servo_nodes.len() as u32)
            .map(|i| (STANDARD_ID_BASE + 2 * i + 1, STANDARD_ID_BASE + 2 * i + 2))
            .collect()
    }

    pub fn grid(&self) -> Result<VoxelGrid, ScenarioError> {
        Ok(VoxelGrid::covering(&self.room, self.rti.voxel_size)?)
    }

    pub fn rti_config(&self) -> RtiConfig {
        RtiConfig { widths: self.rti.widths, probabilities: self.rti.probabilities, regularization: self.rti.regularization }
    }

    pub fn calibration_config(&self) -> CalibrationConfig {
        let c = &self.calibration;
        CalibrationConfig {
            samples_per_eval: c.samples_per_eval,
            static_window_s: c.static_window_s,
            cycle_period_s: c.cycle_period_s,
            max_iterations: c.max_iterations,
            channels: self.channels.clone(),
        }
    }

    pub fn person_at(&self, p: Point2D) -> PersonModel {
        PersonModel { position: p, body_radius: self.person.body_radius, path_attenuation_db: self.person.path_attenuation_db }
    }
}

/// `count` hub positions spread evenly along a rectangle inset `inset`
/// from the walls, starting at the lower-left corner.
pub fn perimeter_layout(room: &Rect, count: usize, inset: f64) -> Vec<Point2D> {
    let (x0, y0) = (room.min.x + inset, room.min.y + inset);
    let (w, h) = (room.width() - 2.0 * inset, room.height() - 2.0 * inset);
    let perimeter = 2.0 * (w + h);
    let step = perimeter / count as f64;
    (0..count)
        .map(|i| {
            let mut s = (i as f64 + 0.5) * step;
            if s < w {
                return Point2D::new(x0 + s, y0);
            }
            s -= w;
            if s < h {
                return Point2D::new(x0 + w, y0 + s);
            }
            s -= h;
            if s < w {
                return Point2D::new(x0 + w - s, y0 + h);
            }
            s -= w;
            Point2D::new(x0, y0 + h - s)
        })
        .collect()
}
