//! File formats: RSS traces, servo positions, images, model dumps,
//! calibration logs and the small list parsers used by the CLI.

use crate::calibration::Evaluation;
use crate::channel::{ChannelSet, LinkChannel, MeasurementFrame, NodePosition, Sample, SimError, SERVO_POSITIONS};
use crate::geometry::VoxelGrid;
use crate::rti::{FadeClass, RtiModel};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use thiserror::Error;

pub const TRACE_HEADER: [&str; 5] = ["cycle", "tx_id", "rx_id", "channel", "rssi_dbm"];
pub const POSITIONS_HEADER: [&str; 3] = ["cycle", "node_id", "p"];

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Record { line: u64, message: String },
    #[error("unexpected header {found:?}, expected {expected:?}")]
    Header { found: Vec<String>, expected: Vec<String> },
    #[error("invalid list {0:?}")]
    List(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
    #[error("image has {got} values, grid has {expected}")]
    ImageSize { expected: usize, got: usize },
}

fn record_err(rec: &csv::StringRecord, message: impl Into<String>) -> FormatError {
    FormatError::Record { line: rec.position().map_or(0, |p| p.line()), message: message.into() }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, FormatError> {
    let raw = rec.get(i).ok_or_else(|| record_err(rec, format!("missing {name}")))?;
    raw.parse().map_err(|_| record_err(rec, format!("bad {name} {raw:?}")))
}

fn reader<R: Read>(r: R, expected: &[&str]) -> Result<csv::Reader<R>, FormatError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != expected {
        return Err(FormatError::Header { found, expected: expected.iter().map(|s| s.to_string()).collect() });
    }
    Ok(rdr)
}

/// Writes `cycle,tx_id,rx_id,channel,rssi_dbm`; lost packets leave the
/// RSS field empty.
pub fn write_trace<W: Write>(w: W, frames: &[MeasurementFrame]) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER)?;
    for f in frames {
        for s in &f.samples {
            let rssi = s.rssi.map(|r| r.to_string()).unwrap_or_default();
            out.write_record([
                f.cycle.to_string(),
                s.link.tx.to_string(),
                s.link.rx.to_string(),
                s.link.channel.to_string(),
                rssi,
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a trace back into frames ordered by cycle, samples sorted by link.
/// Positions are left empty; see [`attach_positions`].
pub fn read_trace<R: Read>(r: R) -> Result<Vec<MeasurementFrame>, FormatError> {
    let mut rdr = reader(r, &TRACE_HEADER)?;
    let mut by_cycle: BTreeMap<u64, BTreeMap<LinkChannel, Option<f64>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != TRACE_HEADER.len() {
            return Err(record_err(&rec, "wrong field count"));
        }
        let cycle: u64 = field(&rec, 0, "cycle")?;
        let tx: u32 = field(&rec, 1, "tx_id")?;
        let rx: u32 = field(&rec, 2, "rx_id")?;
        let channel: u8 = field(&rec, 3, "channel")?;
        crate::channel::channel_frequency(channel)?;
        if tx == rx {
            return Err(record_err(&rec, "tx_id equals rx_id"));
        }
        let rssi = match rec.get(4).unwrap_or("") {
            "" => None,
            s => {
                let v: f64 = s.parse().map_err(|_| record_err(&rec, format!("bad rssi_dbm {s:?}")))?;
                if !v.is_finite() {
                    return Err(record_err(&rec, "non-finite rssi_dbm"));
                }
                Some(v)
            }
        };
        let link = LinkChannel::new(tx, rx, channel);
        if by_cycle.entry(cycle).or_default().insert(link, rssi).is_some() {
            return Err(record_err(&rec, format!("duplicate sample {tx}->{rx} ch {channel} in cycle {cycle}")));
        }
    }
    Ok(by_cycle
        .into_iter()
        .map(|(cycle, samples)| MeasurementFrame {
            cycle,
            samples: samples.into_iter().map(|(link, rssi)| Sample { link, rssi }).collect(),
            positions: Vec::new(),
        })
        .collect())
}

pub fn write_positions<W: Write>(w: W, frames: &[MeasurementFrame]) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(POSITIONS_HEADER)?;
    for f in frames {
        for p in &f.positions {
            out.write_record([f.cycle.to_string(), p.node_id.to_string(), p.p.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_positions<R: Read>(r: R) -> Result<BTreeMap<u64, Vec<NodePosition>>, FormatError> {
    let mut rdr = reader(r, &POSITIONS_HEADER)?;
    let mut by_cycle: BTreeMap<u64, BTreeMap<u32, u8>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != POSITIONS_HEADER.len() {
            return Err(record_err(&rec, "wrong field count"));
        }
        let cycle: u64 = field(&rec, 0, "cycle")?;
        let node_id: u32 = field(&rec, 1, "node_id")?;
        let p: u8 = field(&rec, 2, "p")?;
        if !(1..=SERVO_POSITIONS).contains(&p) {
            return Err(record_err(&rec, format!("position {p} outside 1..=8")));
        }
        if by_cycle.entry(cycle).or_default().insert(node_id, p).is_some() {
            return Err(record_err(&rec, format!("duplicate node {node_id} in cycle {cycle}")));
        }
    }
    Ok(by_cycle
        .into_iter()
        .map(|(c, m)| (c, m.into_iter().map(|(node_id, p)| NodePosition { node_id, p }).collect()))
        .collect())
}

pub fn attach_positions(frames: &mut [MeasurementFrame], positions: &BTreeMap<u64, Vec<NodePosition>>) {
    for f in frames {
        if let Some(p) = positions.get(&f.cycle) {
            f.positions = p.clone();
        }
    }
}

/// Final stops as `node_id,p`.
pub fn write_final_positions<W: Write>(w: W, positions: &BTreeMap<u32, u8>) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["node_id", "p"])?;
    for (id, p) in positions {
        out.write_record([id.to_string(), p.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_final_positions<R: Read>(r: R) -> Result<BTreeMap<u32, u8>, FormatError> {
    let mut rdr = reader(r, &["node_id", "p"])?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id: u32 = field(&rec, 0, "node_id")?;
        let p: u8 = field(&rec, 1, "p")?;
        if !(1..=SERVO_POSITIONS).contains(&p) {
            return Err(record_err(&rec, format!("position {p} outside 1..=8")));
        }
        if out.insert(id, p).is_some() {
            return Err(record_err(&rec, format!("duplicate node {id}")));
        }
    }
    Ok(out)
}

fn check_image(grid: &VoxelGrid, image: &DVector<f64>) -> Result<(), FormatError> {
    if image.len() != grid.len() {
        return Err(FormatError::ImageSize { expected: grid.len(), got: image.len() });
    }
    Ok(())
}

/// One row per voxel: centre coordinates and value.
pub fn write_image_csv<W: Write>(w: W, grid: &VoxelGrid, image: &DVector<f64>) -> Result<(), FormatError> {
    check_image(grid, image)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "y", "value"])?;
    for (c, v) in grid.centers().iter().zip(image.iter()) {
        out.write_record([c.x.to_string(), c.y.to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Binary greyscale PGM, min-max scaled to 0..=255, top row = largest y.
pub fn write_image_pgm<W: Write>(mut w: W, grid: &VoxelGrid, image: &DVector<f64>) -> Result<(), FormatError> {
    check_image(grid, image)?;
    let lo = image.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    write!(w, "P5\n{} {}\n255\n", grid.nx(), grid.ny())?;
    let mut bytes = Vec::with_capacity(grid.len());
    for iy in (0..grid.ny()).rev() {
        for ix in 0..grid.nx() {
            let v = image[iy * grid.nx() + ix];
            let level = if span > 0.0 && span.is_finite() { ((v - lo) / span * 255.0).round() } else { 0.0 };
            bytes.push(level.clamp(0.0, 255.0) as u8);
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterceptDump {
    pub channel: u8,
    pub intercept_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDump {
    pub tx: u32,
    pub rx: u32,
    pub channel: u8,
    pub baseline_dbm: f64,
    pub fade_db: f64,
    pub class: FadeClass,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
}

/// Human-readable summary of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDump {
    pub path_loss_exponent: f64,
    pub intercepts: Vec<InterceptDump>,
    pub pairs: Vec<PairDump>,
}

impl ModelDump {
    pub fn from_model(model: &RtiModel) -> Self {
        let pairs = model
            .pairs()
            .iter()
            .map(|l| {
                let w = model.widths.widths[l];
                let fade = model.fades.levels[l];
                PairDump {
                    tx: l.tx,
                    rx: l.rx,
                    channel: l.channel,
                    baseline_dbm: model.baseline.entries()[l].mean_dbm,
                    fade_db: fade,
                    class: FadeClass::of(fade),
                    lambda_plus: w.plus,
                    lambda_minus: w.minus,
                }
            })
            .collect();
        Self {
            path_loss_exponent: model.fit.eta,
            intercepts: model.fit.intercepts.iter().map(|(&channel, &intercept_dbm)| InterceptDump { channel, intercept_dbm }).collect(),
            pairs,
        }
    }

    pub fn to_toml_string(&self) -> Result<String, FormatError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml_str(s: &str) -> Result<Self, FormatError> {
        Ok(toml::from_str(s)?)
    }
}

pub fn write_calibration_log<W: Write>(w: W, rows: &[Evaluation]) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iteration", "sensor_id", "p", "mean_rss", "accepted"])?;
    for e in rows {
        out.write_record([
            e.iteration.to_string(),
            e.node_id.to_string(),
            e.p.to_string(),
            e.mean_rss.to_string(),
            e.accepted.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a comma-separated channel list such as `11,16,21,26`.
pub fn parse_channel_list(s: &str) -> Result<ChannelSet, FormatError> {
    let channels = s
        .split(',')
        .map(|t| t.trim().parse::<u8>().map_err(|_| FormatError::List(s.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ChannelSet::new(channels)?)
}

/// Parses a comma-separated list of non-negative counts.
pub fn parse_counts(s: &str) -> Result<Vec<usize>, FormatError> {
    if s.trim().is_empty() {
        return Err(FormatError::List(s.to_string()));
    }
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| FormatError::List(s.to_string())))
        .collect()
}

/// Node ids appearing in a set of frames.
pub fn node_ids(frames: &[MeasurementFrame]) -> BTreeSet<u32> {
    frames.iter().flat_map(|f| f.samples.iter().flat_map(|s| [s.link.tx, s.link.rx])).collect()
}
