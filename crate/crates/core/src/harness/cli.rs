//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 data error, 3 numeric error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::{
    aggregate, compute_metrics, read_mission_records, render, run_missions, write_metrics_csv, write_mission_record,
    Policy, PolicyKind, RenderFormat, RenderSpec, StopRule,
};
use crate::error::{Error, Result};
use crate::geodesy::{self, EcefCoord, EnuCoord, GeoFence, GeodeticCoord};
use crate::gridworld::{parse_grid, Action, EpisodeConfig, GridPos, MotionModel};
use crate::oracle::{self, Teacher};
use crate::perception::{self, ConfusionSpread, ObservationModel};
use crate::policynet::{self, NetworkParams, NetworkShape, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "herdsearch", version, about = "Grid search simulation, policy training and survey tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate teacher-labelled training episodes.
    GenEpisodes(GenArgs),
    /// Train the navigation network on a dataset.
    Train(TrainArgs),
    /// Cross-validate on a dataset and compare policies in simulation.
    Eval(EvalArgs),
    /// Fly simulated missions and write records and metrics.
    Run(RunArgs),
    /// Render a mission record.
    Render(RenderArgs),
    /// Coordinate conversions and geofence checks.
    Geo(GeoArgs),
    /// Simulate multi-frame identity fusion and write belief trajectories.
    FuseDemo(FuseArgs),
}

#[derive(Args, Debug, Clone)]
struct EpisodeArgs {
    /// key=value file applied before the flags below
    #[arg(long)]
    config: Option<PathBuf>,
    /// grid size as WxH
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    targets: Option<usize>,
    /// memory reset fraction
    #[arg(long)]
    delta: Option<f64>,
    /// static or random_walk:P
    #[arg(long)]
    motion: Option<String>,
    /// start cell as row,col
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl EpisodeArgs {
    fn resolve(&self) -> Result<EpisodeConfig> {
        let mut cfg = EpisodeConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            cfg.apply_kv(&text)?;
        }
        if let Some(g) = &self.grid {
            (cfg.width, cfg.height) = parse_grid(g)?;
        }
        if let Some(t) = self.targets {
            cfg.num_targets = t;
        }
        if let Some(d) = self.delta {
            cfg.reset_fraction = d;
        }
        if let Some(m) = &self.motion {
            cfg.motion = m.parse::<MotionModel>()?;
        }
        if let Some(s) = &self.start {
            cfg.start = s.parse::<GridPos>()?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    episode: EpisodeArgs,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// omniscient or discovered
    #[arg(long, default_value = "omniscient")]
    teacher: String,
    /// output file; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// hold back every Nth sample for early stopping; 0 disables
    #[arg(long, default_value_t = 10)]
    val_stride: usize,
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
}

impl TrainFlags {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            momentum: self.momentum,
            batch_size: self.batch,
            max_epochs: self.epochs,
            patience: self.patience,
            validation_stride: self.val_stride,
            seed: self.train_seed,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
    /// epoch log as CSV; stderr when absent
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// dataset for cross-validation
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[command(flatten)]
    flags: TrainFlags,
    /// trained parameters for the policy comparison
    #[arg(long)]
    params: Option<PathBuf>,
    /// simulated missions per policy; 0 skips the comparison
    #[arg(long, default_value_t = 0)]
    episodes: usize,
    #[command(flatten)]
    episode: EpisodeArgs,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    battery: Option<f64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// network, lawnmower or random
    #[arg(long, default_value = "lawnmower")]
    policy: String,
    #[arg(long)]
    params: Option<PathBuf>,
    #[command(flatten)]
    episode: EpisodeArgs,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    #[arg(long)]
    max_iter: Option<usize>,
    /// battery budget in seconds
    #[arg(long)]
    battery: Option<f64>,
    /// mission records; not written when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// metrics CSV; stdout when absent
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    record: PathBuf,
    /// which record in the file
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// ascii, svg or ppm
    #[arg(long, default_value = "ascii")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    arrow_interval: usize,
}

#[derive(Args, Debug)]
struct GeoArgs {
    #[command(subcommand)]
    op: GeoOp,
}

#[derive(Args, Debug, Clone, Copy)]
struct LatLonAlt {
    #[arg(long, allow_hyphen_values = true)]
    lat: f64,
    #[arg(long, allow_hyphen_values = true)]
    lon: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    alt: f64,
}

impl LatLonAlt {
    fn coord(&self) -> Result<GeodeticCoord> {
        GeodeticCoord::new(self.lat, self.lon, self.alt)
    }
}

#[derive(Args, Debug, Clone, Copy)]
struct Reference {
    #[arg(long, allow_hyphen_values = true)]
    ref_lat: f64,
    #[arg(long, allow_hyphen_values = true)]
    ref_lon: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    ref_alt: f64,
}

impl Reference {
    fn coord(&self) -> Result<GeodeticCoord> {
        GeodeticCoord::new(self.ref_lat, self.ref_lon, self.ref_alt)
    }
}

#[derive(Subcommand, Debug)]
enum GeoOp {
    /// geodetic to ECEF
    ToEcef(LatLonAlt),
    /// ECEF to geodetic
    FromEcef {
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
        #[arg(long, allow_hyphen_values = true)]
        y: f64,
        #[arg(long, allow_hyphen_values = true)]
        z: f64,
    },
    /// geodetic to local east-north-up
    ToEnu {
        #[command(flatten)]
        point: LatLonAlt,
        #[command(flatten)]
        reference: Reference,
    },
    /// local east-north-up to geodetic
    FromEnu {
        #[arg(long, allow_hyphen_values = true)]
        east: f64,
        #[arg(long, allow_hyphen_values = true)]
        north: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        up: f64,
        #[command(flatten)]
        reference: Reference,
    },
    /// waypoint one grid cell away
    Waypoint {
        #[command(flatten)]
        point: LatLonAlt,
        #[arg(long)]
        action: String,
        #[arg(long, default_value_t = 2.0)]
        cell: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        bearing: f64,
    },
    /// validate a fence file and optionally test a point against it
    Fence {
        #[arg(long)]
        file: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        lat: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        lon: Option<f64>,
    },
}

#[derive(Args, Debug)]
struct FuseArgs {
    #[arg(long, default_value_t = 10)]
    tracklets: usize,
    #[arg(long, default_value_t = 5)]
    frames: usize,
    #[arg(long, default_value_t = 17)]
    classes: usize,
    /// single-frame top-1 accuracy of the simulated classifier
    #[arg(long, default_value_t = 0.936)]
    accuracy: f64,
    /// confusion decay over neighbouring identities; uniform when absent
    #[arg(long)]
    neighbour_decay: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// belief CSV; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("herdsearch: {e}");
            e.exit_code()
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p != Path::new("-") => Box::new(BufWriter::new(File::create(p)?)),
        _ => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_dataset_file(path: &Path) -> Result<oracle::Dataset> {
    let f = File::open(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    oracle::read_dataset(BufReader::new(f))
}

fn stop_rule(max_iter: Option<usize>, battery: Option<f64>) -> Result<StopRule> {
    let rule = StopRule {
        max_iterations: max_iter,
        battery_seconds: battery,
    };
    if max_iter.is_none() && battery.is_none() {
        return Err(Error::Usage("give --max-iter or --battery".into()));
    }
    Ok(rule)
}

fn network_shape(cfg: &EpisodeConfig) -> NetworkShape {
    NetworkShape::for_grid(cfg.width, cfg.height, cfg.sense_side())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenEpisodes(a) => gen_episodes(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
        Command::Render(a) => render_cmd(a),
        Command::Geo(a) => geo(a.op),
        Command::FuseDemo(a) => fuse_demo(a),
    }
}

fn gen_episodes(a: GenArgs) -> Result<()> {
    let cfg = a.episode.resolve()?;
    let teacher: Teacher = a.teacher.parse().map_err(|e: Error| Error::Usage(e.to_string()))?;
    let data = oracle::generate_dataset(&cfg, a.episodes, teacher)?;
    let mut out = output(a.out.as_deref())?;
    oracle::write_dataset(&mut out, &data)?;
    out.flush()?;
    eprintln!("{} samples from {} episodes", data.samples.len(), data.episodes);
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let data = read_dataset_file(&a.data)?;
    let cfg = a.flags.config();
    let stride = cfg.validation_stride;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, s) in data.samples.iter().enumerate() {
        if stride > 1 && i % stride == stride - 1 {
            val.push(s);
        } else {
            train.push(s);
        }
    }
    let mut params = NetworkParams::new(network_shape(&data.config), cfg.seed)?;
    let mut log: Box<dyn Write> = match &a.log {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stderr()),
    };
    writeln!(log, "epoch,step,loss,val_acc")?;
    let mut write_err = None;
    let report = policynet::fit(&mut params, &train, &val, &cfg, |e| {
        if let Err(err) = writeln!(log, "{e}") {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    log.flush()?;
    policynet::save_params(&params, &a.out)?;
    eprintln!(
        "trained {} epochs; best validation accuracy {}",
        report.epochs_run,
        report.best_val_accuracy.map_or("n/a".to_string(), |v| format!("{v:.4}"))
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut stdout = io::stdout().lock();
    if let Some(path) = &a.data {
        let data = read_dataset_file(path)?;
        let cv = policynet::cross_validate(&network_shape(&data.config), &data.samples, a.folds, &a.flags.config())?;
        writeln!(stdout, "fold,accuracy")?;
        for (i, acc) in cv.fold_accuracy.iter().enumerate() {
            writeln!(stdout, "{i},{acc:.6}")?;
        }
        writeln!(stdout, "mean,{:.6}", cv.mean_accuracy)?;
        writeln!(stdout, "reference,0.7245")?;
    }
    if a.episodes > 0 {
        let cfg = a.episode.resolve()?;
        let stop = stop_rule(a.max_iter, a.battery)?;
        let mut policies = Vec::new();
        if let Some(p) = &a.params {
            let params = policynet::load_params_expecting(p, &network_shape(&cfg))?;
            policies.push(Policy::Network(Box::new(params)));
        }
        policies.push(Policy::Lawnmower);
        policies.push(Policy::Random);
        writeln!(stdout, "policy,missions,targets_per_move_mean,targets_per_move_sd,coverage_median,iterations_median")?;
        for policy in &policies {
            let records = run_missions(policy, &cfg, &stop, 0, a.episodes)?;
            let metrics: Vec<_> = records.iter().map(compute_metrics).collect();
            let agg = aggregate(&metrics)?;
            writeln!(
                stdout,
                "{},{},{:.6},{:.6},{:.6},{}",
                policy.name(),
                agg.missions,
                agg.targets_per_move.mean,
                agg.targets_per_move.sd,
                agg.coverage_fraction.median,
                agg.iterations.median
            )?;
        }
    } else if a.data.is_none() {
        return Err(Error::Usage("eval needs --data or --episodes".into()));
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = a.episode.resolve()?;
    let stop = stop_rule(a.max_iter, a.battery)?;
    let policy = match a.policy.parse::<PolicyKind>()? {
        PolicyKind::Network => {
            let path = a
                .params
                .as_ref()
                .ok_or_else(|| Error::Usage("network policy needs --params".into()))?;
            Policy::Network(Box::new(policynet::load_params_expecting(path, &network_shape(&cfg))?))
        }
        PolicyKind::Lawnmower => Policy::Lawnmower,
        PolicyKind::Random => Policy::Random,
    };
    let records = run_missions(&policy, &cfg, &stop, 0, a.episodes)?;
    if let Some(p) = &a.out {
        let mut out = output(Some(p))?;
        for r in &records {
            write_mission_record(&mut out, r)?;
        }
        out.flush()?;
    }
    let rows: Vec<(String, _)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("{}-{i}", policy.name()), compute_metrics(r)))
        .collect();
    let mut out = output(a.metrics.as_deref())?;
    write_metrics_csv(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let format: RenderFormat = a.format.parse()?;
    let f = File::open(&a.record).map_err(|e| Error::Dataset(format!("{}: {e}", a.record.display())))?;
    let records = read_mission_records(BufReader::new(f))?;
    let record = records
        .get(a.index)
        .ok_or_else(|| Error::Usage(format!("record {} not in file ({} records)", a.index, records.len())))?;
    let spec = RenderSpec {
        arrow_interval: a.arrow_interval,
        ..RenderSpec::default()
    };
    let bytes = render(record, &spec, format)?;
    let mut out = output(a.out.as_deref())?;
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

fn geo(op: GeoOp) -> Result<()> {
    let mut out = io::stdout().lock();
    match op {
        GeoOp::ToEcef(p) => writeln!(out, "{}", geodesy::geodetic_to_ecef(&p.coord()?)?)?,
        GeoOp::FromEcef { x, y, z } => writeln!(out, "{}", geodesy::ecef_to_geodetic(&EcefCoord { x, y, z })?)?,
        GeoOp::ToEnu { point, reference } => {
            writeln!(out, "{}", geodesy::geodetic_to_enu(&point.coord()?, &reference.coord()?)?)?
        }
        GeoOp::FromEnu {
            east,
            north,
            up,
            reference,
        } => writeln!(
            out,
            "{}",
            geodesy::enu_to_geodetic(&EnuCoord { east, north, up }, &reference.coord()?)?
        )?,
        GeoOp::Waypoint {
            point,
            action,
            cell,
            bearing,
        } => {
            let action: Action = action.parse().map_err(|e: Error| Error::Usage(e.to_string()))?;
            writeln!(out, "{}", geodesy::action_to_waypoint(&point.coord()?, action, cell, bearing)?)?
        }
        GeoOp::Fence { file, lat, lon } => {
            let f = File::open(&file).map_err(|e| Error::Dataset(format!("{}: {e}", file.display())))?;
            let fence = GeoFence::parse(BufReader::new(f))?;
            match (lat, lon) {
                (Some(lat), Some(lon)) => {
                    let p = GeodeticCoord::new(lat, lon, 0.0)?;
                    let inside = geodesy::geofence_contains(&fence, &p, &fence.vertices[0])?;
                    writeln!(out, "{}", if inside { "inside" } else { "outside" })?
                }
                (None, None) => writeln!(out, "valid fence with {} vertices", fence.vertices.len())?,
                _ => return Err(Error::Usage("give both --lat and --lon".into())),
            }
        }
    }
    Ok(())
}

fn fuse_demo(a: FuseArgs) -> Result<()> {
    let model = ObservationModel {
        classes: a.classes,
        accuracy: a.accuracy,
        spread: match a.neighbour_decay {
            Some(decay) => ConfusionSpread::Neighbour { decay },
            None => ConfusionSpread::Uniform,
        },
        seed: a.seed,
    };
    let (stats, trajectories) = perception::simulate_fusion(&model, a.tracklets, a.frames, a.tracklets)?;
    let mut out = output(a.out.as_deref())?;
    perception::write_belief_csv(&mut out, &trajectories)?;
    out.flush()?;
    eprintln!(
        "single-frame accuracy {:.4}, fused accuracy {:.4} over {} tracklets",
        stats.single_frame_accuracy, stats.fused_accuracy, stats.tracklets
    );
    Ok(())
}
