use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;
use servo_rti::calibration::incremental_calibrate;
use servo_rti::channel::{ChannelSet, MeasurementFrame, Network, NodeKind};
use servo_rti::geometry::Point2D;
use servo_rti::harness::{
    calibrate_servos, coin_flip_subset, compare, default_positions, emit_report, random_positions, run_experiment, Variant,
};
use servo_rti::io;
use servo_rti::rti::{train_baseline, RtiModel};
use servo_rti::scenario::Scenario;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "servo-rti", version, about = "Radio tomographic imaging with rotating servo nodes")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML; the built-in lab scene is used when omitted.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the scenario channel list, e.g. 11,16,21,26.
    #[arg(long, global = true, value_parser = parse_channels)]
    channels: Option<ChannelSet>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the effective scenario as TOML.
    Scenario,
    /// Simulate empty-room training cycles and person-present traces.
    Simulate {
        #[arg(long, default_value = "servo-default", value_parser = parse_variant)]
        variant: Variant,
    },
    /// Train a model from a simulated trace directory and dump it.
    Train {
        /// Directory holding training.csv and positions.csv; defaults to --out.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "servo-default", value_parser = parse_variant)]
        variant: Variant,
    },
    /// Calibrate servo positions in the empty room.
    Calibrate {
        #[arg(long, value_enum, default_value_t = Mode::Network)]
        mode: Mode,
    },
    /// Localize every person-present frame of a trace directory.
    Localize {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "servo-default", value_parser = parse_variant)]
        variant: Variant,
        /// Also dump the image of every frame.
        #[arg(long)]
        images: bool,
    },
    /// Run ground-truth experiments and write a report.
    Evaluate {
        /// One variant, or `all` for the full comparison.
        #[arg(long, default_value = "all")]
        variant: String,
        /// Standard-sensor subsets in the full comparison.
        #[arg(long, default_value_t = 1)]
        subsets: usize,
    },
    /// Histogram of calibrated positions and the equal-odds bias test.
    AnalyzePositions {
        /// Comma-separated counts per position.
        #[arg(long, conflicts_with = "positions")]
        counts: Option<String>,
        /// Final-position CSV files (node_id,p).
        #[arg(long, num_args = 1..)]
        positions: Vec<PathBuf>,
        /// Number of placements; defaults to the sum of the counts.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 8)]
        categories: usize,
        #[arg(long, default_value_t = 9)]
        threshold: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Network,
    Incremental,
}

fn parse_channels(s: &str) -> Result<ChannelSet, String> {
    io::parse_channel_list(s).map_err(|e| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: servo_rti::harness::HarnessError| e.to_string())
}

fn load_scenario(c: &Common) -> Result<Scenario> {
    let mut sc = match &c.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Scenario::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => Scenario::lab(c.seed.unwrap_or(1)),
    };
    if let Some(seed) = c.seed {
        sc.seed = seed;
    }
    if let Some(ch) = &c.channels {
        sc.channels = ch.clone();
    }
    sc.validate()?;
    Ok(sc)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn variant_positions(sc: &Scenario, variant: Variant) -> Result<BTreeMap<u32, u8>> {
    Ok(match variant {
        Variant::ServoRandom => random_positions(sc),
        Variant::ServoCalibrated => calibrate_servos(sc)?.positions,
        Variant::Standard | Variant::ServoDefault => default_positions(sc),
    })
}

/// Nodes a model for `variant` is built on.
fn variant_nodes(sc: &Scenario, variant: Variant) -> BTreeSet<u32> {
    match variant {
        Variant::Standard => coin_flip_subset(sc, &mut Pcg64Mcg::seed_from_u64(sc.seed)),
        _ => sc.servo_nodes().iter().map(|n| n.node_id).collect(),
    }
}

fn simulate(sc: &Scenario, variant: Variant, out: &Path) -> Result<()> {
    let positions = variant_positions(sc, variant)?;
    let env = sc.environment();
    let mut nodes = sc.all_nodes();
    for n in &mut nodes {
        if let Some(&p) = positions.get(&n.node_id) {
            n.set_position(p)?;
        }
    }
    let mut net = Network::new(nodes)?;
    let training = net.collect(&env, None, &sc.channels, sc.timing.training_cycles)?;
    let mut trace = Vec::new();
    let mut truth = Vec::new();
    for (i, g) in sc.ground_truth.iter().enumerate() {
        let person = sc.person_at(*g);
        for _ in 0..sc.timing.dwell_cycles {
            let f = net.run_tdma_cycle(&env, Some(&person), &sc.channels, None)?;
            truth.push((f.cycle, i, *g));
            trace.push(f);
        }
    }
    io::write_trace(create(&out.join("training.csv"))?, &training)?;
    io::write_trace(create(&out.join("trace.csv"))?, &trace)?;
    let all: Vec<MeasurementFrame> = training.iter().chain(trace.iter()).cloned().collect();
    io::write_positions(create(&out.join("positions.csv"))?, &all)?;
    let mut w = csv::Writer::from_writer(create(&out.join("truth.csv"))?);
    w.write_record(["cycle", "point", "x", "y"])?;
    for (cycle, i, g) in truth {
        w.write_record([cycle.to_string(), i.to_string(), g.x.to_string(), g.y.to_string()])?;
    }
    w.flush()?;
    log::info!("wrote {} training and {} trace cycles to {}", training.len(), trace.len(), out.display());
    Ok(())
}

fn read_frames(dir: &Path, name: &str) -> Result<Vec<MeasurementFrame>> {
    let mut frames = io::read_trace(open(&dir.join(name))?).with_context(|| format!("reading {name}"))?;
    let positions = io::read_positions(open(&dir.join("positions.csv"))?).context("reading positions.csv")?;
    io::attach_positions(&mut frames, &positions);
    Ok(frames)
}

fn build_model(sc: &Scenario, dir: &Path, variant: Variant) -> Result<RtiModel> {
    let training = read_frames(dir, "training.csv")?;
    let Some(first) = training.first() else { bail!("training.csv holds no frames") };
    let stops: BTreeMap<u32, u8> = first.positions.iter().map(|p| (p.node_id, p.p)).collect();
    let ids = variant_nodes(sc, variant);
    let mut antennas = BTreeMap::new();
    for mut n in sc.all_nodes().into_iter().filter(|n| ids.contains(&n.node_id)) {
        if n.kind == NodeKind::Servo {
            n.set_position(stops.get(&n.node_id).copied().unwrap_or(1))?;
        }
        antennas.insert(n.node_id, n.antenna_pos());
    }
    let baseline = train_baseline(&training)?;
    Ok(RtiModel::build(&antennas, baseline, &sc.channels, sc.grid()?, sc.rti_config(), None)?)
}

fn localize(sc: &Scenario, dir: &Path, variant: Variant, images: bool, out: &Path) -> Result<()> {
    let model = build_model(sc, dir, variant)?;
    let frames = read_frames(dir, "trace.csv")?;
    let image_dir = out.join("images");
    if images {
        std::fs::create_dir_all(&image_dir)?;
    }
    let mut w = csv::Writer::from_writer(create(&out.join("estimates.csv"))?);
    w.write_record(["cycle", "x", "y", "voxel", "degenerate"])?;
    for f in &frames {
        let image = model.image(f);
        let loc = servo_rti::rti::localize(&image, &model.grid)?;
        w.write_record([
            f.cycle.to_string(),
            loc.position.x.to_string(),
            loc.position.y.to_string(),
            loc.voxel.to_string(),
            loc.degenerate.to_string(),
        ])?;
        if images {
            io::write_image_csv(create(&image_dir.join(format!("frame_{:06}.csv", f.cycle)))?, &model.grid, &image)?;
            io::write_image_pgm(create(&image_dir.join(format!("frame_{:06}.pgm", f.cycle)))?, &model.grid, &image)?;
        }
    }
    w.flush()?;
    log::info!("localized {} frames", frames.len());
    Ok(())
}

fn calibrate(sc: &Scenario, mode: Mode, out: &Path) -> Result<()> {
    match mode {
        Mode::Network => {
            let state = calibrate_servos(sc)?;
            io::write_calibration_log(create(&out.join("calibration_log.csv"))?, &state.evaluations)?;
            io::write_final_positions(create(&out.join("final_positions.csv"))?, &state.positions)?;
            if !state.converged {
                log::warn!("calibration reached {} sweeps without settling", state.sweeps);
            }
            println!(
                "sweeps {} accepted moves {} converged {} mean RSS {:.3} -> {:.3} dBm",
                state.sweeps,
                state.accepted_moves.len(),
                state.converged,
                state.history.first().map_or(f64::NAN, |h| h.1),
                state.final_mean_rss()
            );
        }
        Mode::Incremental => {
            let spots: Vec<Point2D> = sc.servo_nodes.clone();
            let result = incremental_calibrate(&spots, &sc.environment(), &sc.calibration_config())?;
            let mut w = csv::Writer::from_writer(create(&out.join("placements.csv"))?);
            w.write_record(["node_id", "x", "y", "p"])?;
            for p in &result.placements {
                w.write_record([
                    p.node_id.to_string(),
                    p.position.x.to_string(),
                    p.position.y.to_string(),
                    p.p.map(|v| v.to_string()).unwrap_or_default(),
                ])?;
            }
            w.flush()?;
            let mut w = csv::Writer::from_writer(create(&out.join("platform_scores.csv"))?);
            w.write_record(["spot", "p", "mean_rss"])?;
            for (i, row) in result.scores.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    w.write_record([(i + 1).to_string(), (k + 1).to_string(), v.to_string()])?;
                }
            }
            w.flush()?;
            let slots: BTreeMap<u32, u8> = result.placements.iter().filter_map(|p| p.p.map(|s| (p.node_id, s))).collect();
            io::write_final_positions(create(&out.join("final_positions.csv"))?, &slots)?;
            println!("placed {} sensors over {} cycles", result.placements.len(), result.cycles);
        }
    }
    Ok(())
}

fn evaluate(sc: &Scenario, variant: &str, subsets: usize, out: &Path) -> Result<()> {
    let reports = if variant == "all" {
        compare(sc, subsets)?.reports
    } else {
        vec![run_experiment(sc, variant.parse()?)?]
    };
    emit_report(&reports, out, &sc.grid()?, &[])?;
    for r in &reports {
        if r.calibration_flagged() {
            log::warn!("{}: calibration did not settle", r.label);
        }
    }
    print!("{}", servo_rti::harness::summary_table(&reports));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn analyze(
    counts: Option<String>,
    files: &[PathBuf],
    trials: Option<usize>,
    categories: usize,
    threshold: usize,
    samples: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let counts = match counts {
        Some(c) => Some(io::parse_counts(&c)?),
        None if !files.is_empty() => {
            let mut states = Vec::new();
            for f in files {
                states.push(io::read_final_positions(open(f)?).with_context(|| format!("reading {}", f.display()))?);
            }
            let mut hist = [0usize; 8];
            for s in &states {
                for &p in s.values() {
                    hist[usize::from(p - 1)] += 1;
                }
            }
            Some(hist.to_vec())
        }
        None => None,
    };
    let trials = match (trials, &counts) {
        (Some(t), _) => t,
        (None, Some(c)) => c.iter().sum(),
        (None, None) => bail!("give --trials, --counts or --positions"),
    };
    let t = servo_rti::harness::multinomial_bias_test(counts.as_deref(), trials, categories, threshold, samples, seed)?;
    let mut w = csv::Writer::from_writer(create(&out.join("position_analysis.csv"))?);
    w.write_record(["trials", "categories", "threshold", "samples", "seed", "probability", "observed_max", "observed_meets_threshold"])?;
    w.write_record([
        trials.to_string(),
        categories.to_string(),
        threshold.to_string(),
        samples.to_string(),
        seed.to_string(),
        t.probability.to_string(),
        t.observed_max.map(|m| m.to_string()).unwrap_or_default(),
        t.observed_meets_threshold.map(|m| m.to_string()).unwrap_or_default(),
    ])?;
    w.flush()?;
    if let Some(c) = &counts {
        let text: Vec<String> = c.iter().enumerate().map(|(i, n)| format!("p{}={n}", i + 1)).collect();
        println!("histogram {}", text.join(" "));
    }
    println!("P(max count >= {threshold}) = {:.4} over {samples} samples", t.probability);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.common.out.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    match cli.command {
        Command::AnalyzePositions { counts, positions, trials, categories, threshold, samples } => {
            analyze(counts, &positions, trials, categories, threshold, samples, cli.common.seed.unwrap_or(1), &out)
        }
        command => {
            let sc = load_scenario(&cli.common)?;
            match command {
                Command::Scenario => {
                    let mut f = create(&out.join("scenario.toml"))?;
                    f.write_all(sc.to_toml_string()?.as_bytes())?;
                    f.flush()?;
                    Ok(())
                }
                Command::Simulate { variant } => simulate(&sc, variant, &out),
                Command::Train { input, variant } => {
                    let model = build_model(&sc, input.as_deref().unwrap_or(&out), variant)?;
                    let mut f = create(&out.join("model.toml"))?;
                    f.write_all(io::ModelDump::from_model(&model).to_toml_string()?.as_bytes())?;
                    f.flush()?;
                    println!("path-loss exponent {:.4} over {} pairs", model.fit.eta, model.pairs().len());
                    Ok(())
                }
                Command::Calibrate { mode } => calibrate(&sc, mode, &out),
                Command::Localize { input, variant, images } => localize(&sc, input.as_deref().unwrap_or(&out), variant, images, &out),
                Command::Evaluate { variant, subsets } => evaluate(&sc, &variant, subsets, &out),
                Command::AnalyzePositions { .. } => unreachable!(),
            }
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
