//! Command-line front end.
//!
//! Every subcommand reads one TOML run config (all sections optional),
//! applies `--set section.key=value` overrides on top of it and derives its
//! random streams from the master seed, so outputs depend on nothing else.
//! Files are written to a temporary sibling and renamed into place.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::eval::{
    configuration_matrix, export_heatmap, run_experiment, write_curves_csv, write_results_csv, ConditionData,
    ConditionSetup, Configuration, HeatmapGrid, Protocol, RegionCounts,
};
use crate::gmm::{Point2D, SamplingStrategy};
use crate::model::{train, LstmMdl, ModelConfig, TrainConfig};
use crate::particles::{propagate, PropagationConfig, WeightingStrategy, DEFAULT_HORIZON_CAP};
use crate::seed::derive_seed;
use crate::synthdata::{
    endpoint_regions, generate, read_dataset_csv, read_spec_sidecar, select_evaluation_trajectories,
    write_dataset_csv, write_spec_sidecar, Condition, TMazeSpec,
};

#[derive(Debug, Parser)]
#[command(name = "multipath", version, about = "Multi-modal path prediction with particle propagation")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `section.key=value` override; repeatable, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic t-maze dataset.
    GenData,
    /// Train a motion model on a dataset.
    Train,
    /// Predict from one observed trajectory.
    Predict,
    /// Run the configuration matrix over every condition.
    Evaluate {
        /// Evaluate a single configuration, e.g. `multinomial/unweighted`
        /// or `stratified/temperature:0.01`.
        #[arg(long)]
        only: Option<String>,
    },
    /// Render particles as a graymap and CSV grid.
    Heatmap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads, 0 for one per core.
    pub workers: usize,
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub predict: PredictSection,
    pub evaluate: EvaluateSection,
    pub heatmap: HeatmapSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            workers: 0,
            data: DataSection::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            predict: PredictSection::default(),
            evaluate: EvaluateSection::default(),
            heatmap: HeatmapSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub condition: Condition,
    pub trajectories: usize,
    /// Overrides of the condition's default geometry.
    pub spec: toml::Table,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            condition: Condition::Tmaze,
            trajectories: 1000,
            spec: toml::Table::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub epochs: usize,
    pub grad_clip: f64,
    pub batch_size: usize,
    /// Defaults to `<out>/<condition>.csv`.
    pub dataset: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            min_learning_rate: t.min_learning_rate,
            epochs: t.epochs,
            grad_clip: t.grad_clip,
            batch_size: t.batch_size,
            dataset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    /// Defaults to `<out>/<condition>.ckpt`.
    pub checkpoint: Option<PathBuf>,
    /// Dataset holding the observation; defaults to `<out>/<condition>.csv`.
    pub observation: Option<PathBuf>,
    /// Trajectory to observe; defaults to the one starting closest to x = 0.
    pub traj_id: Option<u64>,
    pub observed: usize,
    pub horizon: usize,
    pub particles: usize,
    pub sampling: SamplingStrategy,
    pub weighting: WeightingStrategy,
    /// Keep every tick in the export, not only the last.
    pub history: bool,
    /// Also render the final particles.
    pub heatmap: bool,
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection {
            checkpoint: None,
            observation: None,
            traj_id: None,
            observed: 15,
            horizon: 55,
            particles: 1000,
            sampling: SamplingStrategy::Multinomial,
            weighting: WeightingStrategy::Unweighted,
            history: true,
            heatmap: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub conditions: Vec<Condition>,
    /// Candidates from which the evaluation trajectories are picked.
    pub pool: usize,
    pub observed: usize,
    pub horizon_min: usize,
    pub horizon_max: usize,
    pub particles: usize,
    pub runs: usize,
    pub trajectories: usize,
    pub neighbors: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        let p = Protocol::default();
        EvaluateSection {
            conditions: Condition::ALL.to_vec(),
            pool: 500,
            observed: p.observed,
            horizon_min: p.horizon_min,
            horizon_max: p.horizon_max,
            particles: p.particles,
            runs: p.runs,
            trajectories: p.trajectories,
            neighbors: p.neighbors,
        }
    }
}

impl EvaluateSection {
    pub fn protocol(&self) -> Protocol {
        Protocol {
            observed: self.observed,
            horizon_min: self.horizon_min,
            horizon_max: self.horizon_max,
            particles: self.particles,
            runs: self.runs,
            trajectories: self.trajectories,
            neighbors: self.neighbors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapSection {
    /// `step,x,y,weight` CSV; defaults to `<out>/particles.csv`.
    pub particles: Option<PathBuf>,
    /// Tick to render; defaults to the last one in the file.
    pub step: Option<usize>,
    pub cell_size: f64,
    /// Lower-left corner; with `width` and `height` unset the grid covers
    /// the particles.
    pub origin: Option<[f64; 2]>,
    pub width: Option<usize>,
    pub height: Option<usize>,
}

impl Default for HeatmapSection {
    fn default() -> Self {
        HeatmapSection {
            particles: None,
            step: None,
            cell_size: 0.1,
            origin: None,
            width: None,
            height: None,
        }
    }
}

/// Failure of a subcommand, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Exit code 1.
    #[error("invalid config: {0}")]
    Config(String),
    /// Exit code 2.
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } | Error::InvalidSpec(_) | Error::HorizonTooLong { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl RunConfig {
    /// Config file (if any) plus overrides, then the typed flags.
    pub fn load(args: &CommonArgs) -> CliResult<Self> {
        let mut table = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                text.parse::<toml::Table>().map_err(config_err)?
            }
            None => toml::Table::new(),
        };
        for item in &args.overrides {
            apply_override(&mut table, item)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table).try_into().map_err(config_err)?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &args.out {
            cfg.out = out.clone();
        }
        if let Some(w) = args.workers {
            cfg.workers = w;
        }
        cfg.model.validate()?;
        Ok(cfg)
    }

    /// Geometry for `condition`: its defaults, the `data.spec` overrides and
    /// a seed derived from the master seed.
    pub fn spec_for(&self, condition: Condition) -> CliResult<TMazeSpec> {
        // toml integers are i64, so the derived seed stays out of the round trip
        let base = TMazeSpec {
            seed: 0,
            ..TMazeSpec::for_condition(condition)
        };
        let mut value = toml::Value::try_from(&base).map_err(config_err)?;
        let table = value.as_table_mut().expect("spec serializes to a table");
        for (k, v) in &self.data.spec {
            if !table.contains_key(k) {
                return Err(CliError::Config(format!("unknown field `data.spec.{k}`")));
            }
            table.insert(k.clone(), v.clone());
        }
        let mut spec: TMazeSpec = value.try_into().map_err(|e| config_err(format!("data.spec: {e}")))?;
        if !self.data.spec.contains_key("seed") {
            spec.seed = derive_seed(self.seed, &format!("data/{condition}"));
        }
        spec.validate()?;
        Ok(spec)
    }

    fn dataset_path(&self, condition: Condition) -> PathBuf {
        self.out.join(format!("{condition}.csv"))
    }

    fn checkpoint_path(&self, condition: Condition) -> PathBuf {
        self.out.join(format!("{condition}.ckpt"))
    }

    fn model_seed(&self, condition: Condition) -> u64 {
        derive_seed(self.seed, &format!("model/{condition}"))
    }
}

/// Sets `a.b.c = value` in `table`. Values are parsed as TOML and fall back
/// to plain strings, so `data.condition=heavy_left` works unquoted.
pub fn apply_override(table: &mut toml::Table, item: &str) -> CliResult<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Writes through a temporary file in the target directory, renamed into
/// place only on success.
pub fn write_atomic<F>(path: &Path, write: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> crate::Result<()>,
{
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| CliError::Runtime(e.error.into()))?;
    Ok(())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(runtime(anyhow::anyhow!("{what} {} not found", path.display())))
    }
}

fn sidecar_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("spec.json")
}

/// Parses the command line and runs it, writing the summary to `stdout`.
pub fn run(cli: Cli, stdout: &mut (dyn Write + Send)) -> CliResult<()> {
    let cfg = RunConfig::load(&cli.common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(runtime)?;
    pool.install(|| match &cli.command {
        Command::GenData => cmd_gen_data(&cfg, stdout),
        Command::Train => cmd_train(&cfg, stdout),
        Command::Predict => cmd_predict(&cfg, stdout),
        Command::Evaluate { only } => cmd_evaluate(&cfg, only.as_deref(), stdout),
        Command::Heatmap => cmd_heatmap(&cfg, stdout),
    })
}

/// Writes `<out>/<condition>.csv` and its spec sidecar.
pub fn cmd_gen_data(cfg: &RunConfig, stdout: &mut dyn Write) -> CliResult<()> {
    let condition = cfg.data.condition;
    let spec = cfg.spec_for(condition)?;
    if cfg.data.trajectories == 0 {
        return Err(CliError::Config("invalid parameter `data.trajectories`: must be >= 1".into()));
    }
    let data = generate(&spec, cfg.data.trajectories, 0)?;
    let regions = endpoint_regions(&spec)?;
    let counts = RegionCounts::of(&data.iter().map(|t| t.end()).collect::<Vec<_>>(), &regions);
    let path = cfg.dataset_path(condition);
    write_atomic(&path, |w| write_dataset_csv(w, &data))?;
    write_atomic(&sidecar_path(&path), |w| write_spec_sidecar(w, &spec))?;
    log::info!("wrote {}", path.display());
    let n = data.len() as f64;
    writeln!(
        stdout,
        "condition {condition}: {} trajectories, left {:.4}, right {:.4}",
        data.len(),
        counts.left as f64 / n,
        counts.right as f64 / n
    )?;
    Ok(())
}

/// Writes `<out>/<condition>.ckpt` and `<out>/<condition>.loss.csv`.
pub fn cmd_train(cfg: &RunConfig, stdout: &mut dyn Write) -> CliResult<()> {
    let condition = cfg.data.condition;
    let dataset = cfg.train.dataset.clone().unwrap_or_else(|| cfg.dataset_path(condition));
    require(&dataset, "dataset")?;
    let data = read_dataset_csv(&dataset)?;
    let tc = TrainConfig {
        learning_rate: cfg.train.learning_rate,
        min_learning_rate: cfg.train.min_learning_rate,
        epochs: cfg.train.epochs,
        grad_clip: cfg.train.grad_clip,
        batch_size: cfg.train.batch_size,
        seed: derive_seed(cfg.seed, &format!("train/{condition}")),
    };
    tc.validate()?;
    let model = LstmMdl::init(cfg.model, cfg.model_seed(condition))?;
    let (model, report) = train(model, &data, &tc)?;
    let ckpt = cfg.checkpoint_path(condition);
    write_atomic(&ckpt, |w| {
        w.write_all(&model.to_bytes())?;
        Ok(())
    })?;
    write_atomic(&cfg.out.join(format!("{condition}.loss.csv")), |w| {
        writeln!(w, "epoch,loss")?;
        for (i, l) in report.loss_trace.iter().enumerate() {
            writeln!(w, "{},{l:.6}", i + 1)?;
        }
        Ok(())
    })?;
    match (report.loss_trace.first(), report.loss_trace.last()) {
        (Some(a), Some(b)) => writeln!(stdout, "trained {condition}: loss {a:.4} -> {b:.4}")?,
        _ => writeln!(stdout, "trained {condition}: 0 epochs")?,
    }
    if report.degenerate_steps > 0 {
        log::warn!("{} steps hit the density floor", report.degenerate_steps);
    }
    Ok(())
}

/// Writes `<out>/prediction.jsonl` and `<out>/particles.csv` (plus a heatmap
/// when `predict.heatmap` is set) and prints a summary.
pub fn cmd_predict(cfg: &RunConfig, stdout: &mut dyn Write) -> CliResult<()> {
    let p = &cfg.predict;
    let condition = cfg.data.condition;
    let ckpt = p.checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path(condition));
    let source = p.observation.clone().unwrap_or_else(|| cfg.dataset_path(condition));
    require(&ckpt, "checkpoint")?;
    require(&source, "observation dataset")?;
    let model = LstmMdl::load(&ckpt).map_err(runtime)?;
    let data = read_dataset_csv(&source)?;
    let traj = match p.traj_id {
        Some(id) => data
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| CliError::Config(format!("invalid parameter `predict.traj_id`: no trajectory {id}")))?,
        None => data
            .iter()
            .min_by(|a, b| a.start().x.abs().total_cmp(&b.start().x.abs()))
            .ok_or_else(|| runtime(Error::EmptyInput("observation dataset")))?,
    };
    if p.observed == 0 || p.observed > traj.len() {
        return Err(CliError::Config(format!(
            "invalid parameter `predict.observed`: must be in 1..={}",
            traj.len()
        )));
    }
    let prop = PropagationConfig {
        horizon: p.horizon,
        particles: p.particles,
        sampling: p.sampling,
        weighting: p.weighting,
        horizon_cap: DEFAULT_HORIZON_CAP,
        keep_history: p.history,
    };
    prop.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "predict"));
    let result = propagate(&model, &traj.points[..p.observed], &prop, &mut rng)?;
    write_atomic(&cfg.out.join("prediction.jsonl"), |w| result.write_jsonl(w))?;
    write_atomic(&cfg.out.join("particles.csv"), |w| result.write_particles_csv(w))?;

    let finals = result.final_positions();
    let centroid = crate::eval::centroid(&finals)?;
    writeln!(stdout, "trajectory {}: {} steps, {} particles", traj.id, p.horizon, finals.len())?;
    writeln!(stdout, "final centroid ({:.4}, {:.4})", centroid.x, centroid.y)?;
    let spec_path = sidecar_path(&source);
    if spec_path.exists() {
        let regions = endpoint_regions(&read_spec_sidecar(&spec_path)?)?;
        let c = RegionCounts::of(&finals, &regions);
        let n = c.total() as f64;
        writeln!(
            stdout,
            "left {:.4}, right {:.4}, outliers {:.4}",
            c.left as f64 / n,
            c.right as f64 / n,
            c.outliers as f64 / n
        )?;
    }
    if p.heatmap {
        render_heatmap(cfg, &finals, "prediction")?;
    }
    Ok(())
}

/// Writes `<out>/results.csv` and `<out>/curves.csv`.
pub fn cmd_evaluate(cfg: &RunConfig, only: Option<&str>, stdout: &mut dyn Write) -> CliResult<()> {
    let e = &cfg.evaluate;
    let protocol = e.protocol();
    protocol.validate()?;
    if e.conditions.is_empty() {
        return Err(CliError::Config("invalid parameter `evaluate.conditions`: empty".into()));
    }
    let configurations = select_configurations(only)?;
    let setups = load_setups(cfg)?;
    let out = run_experiment(&setups, &configurations, &protocol, derive_seed(cfg.seed, "evaluate"))?;
    write_atomic(&cfg.out.join("results.csv"), |w| write_results_csv(w, &out.results))?;
    write_atomic(&cfg.out.join("curves.csv"), |w| write_curves_csv(w, &out.curves))?;
    for r in &out.results {
        writeln!(
            stdout,
            "{:<12} {:<20} mce {:.4} ({:.4})  or {:.4} ({:.4})",
            r.sampling.name(),
            r.weighting.to_string(),
            r.mce,
            r.mce_std,
            r.outlier_ratio,
            r.or_std
        )?;
    }
    Ok(())
}

/// The full matrix, or the one configuration named `sampling/weighting`.
/// Datasets and checkpoints of `evaluate.conditions`, with evaluation
/// trajectories drawn from ids past the training set.
pub fn load_setups(cfg: &RunConfig) -> CliResult<Vec<ConditionSetup>> {
    let e = &cfg.evaluate;
    let mut setups = Vec::new();
    for &condition in &e.conditions {
        let dataset = cfg.dataset_path(condition);
        let ckpt = cfg.checkpoint_path(condition);
        require(&dataset, "dataset")?;
        require(&ckpt, "checkpoint")?;
        let spec = read_spec_sidecar(&sidecar_path(&dataset))?;
        let training = read_dataset_csv(&dataset)?;
        let first_id = training.iter().map(|t| t.id + 1).max().unwrap_or(0);
        let pool = generate(&spec, e.pool, first_id)?;
        let data = ConditionData {
            regions: endpoint_regions(&spec)?,
            evaluation: select_evaluation_trajectories(&pool, e.trajectories.min(pool.len()))?,
            spec,
            training,
        };
        let model = LstmMdl::load(&ckpt).map_err(runtime)?;
        setups.push(ConditionSetup { data, model });
    }
    Ok(setups)
}

pub fn select_configurations(only: Option<&str>) -> CliResult<Vec<Configuration>> {
    let matrix = configuration_matrix();
    let Some(label) = only else {
        return Ok(matrix);
    };
    let (s, w) = label
        .split_once('/')
        .ok_or_else(|| CliError::Config(format!("invalid parameter `only`: `{label}` is not sampling/weighting")))?;
    let wanted = Configuration {
        sampling: s.parse()?,
        weighting: w.parse()?,
    };
    Ok(vec![wanted])
}

/// Renders one tick of a particle CSV to `<out>/heatmap.pgm` and `.csv`.
pub fn cmd_heatmap(cfg: &RunConfig, stdout: &mut dyn Write) -> CliResult<()> {
    let h = &cfg.heatmap;
    let path = h.particles.clone().unwrap_or_else(|| cfg.out.join("particles.csv"));
    require(&path, "particle file")?;
    let mut rdr = csv::Reader::from_path(&path).map_err(runtime)?;
    let mut rows: Vec<(usize, Point2D)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(runtime)?;
        let field = |i: usize| -> CliResult<&str> {
            rec.get(i)
                .ok_or_else(|| runtime(Error::Parse(format!("short row in {}", path.display()))))
        };
        let parse = |s: &str| -> CliResult<f64> {
            s.parse()
                .map_err(|_| runtime(Error::Parse(format!("`{s}` is not a number"))))
        };
        let step: usize = field(0)?
            .parse()
            .map_err(|_| runtime(Error::Parse("bad step".into())))?;
        rows.push((step, Point2D::new(parse(field(1)?)?, parse(field(2)?)?)));
    }
    let step = h.step.or_else(|| rows.iter().map(|r| r.0).max()).unwrap_or(0);
    let points: Vec<Point2D> = rows.iter().filter(|r| r.0 == step).map(|r| r.1).collect();
    render_heatmap(cfg, &points, "heatmap")?;
    writeln!(stdout, "rendered {} particles of step {step}", points.len())?;
    Ok(())
}

fn render_heatmap(cfg: &RunConfig, points: &[Point2D], name: &str) -> CliResult<()> {
    let h = &cfg.heatmap;
    let grid = match (h.origin, h.width, h.height) {
        (Some([x, y]), Some(width), Some(height)) => HeatmapGrid {
            origin: Point2D::new(x, y),
            cell_size: h.cell_size,
            width,
            height,
        },
        (None, None, None) => HeatmapGrid::covering(points, h.cell_size)?,
        _ => {
            return Err(CliError::Config(
                "invalid parameter `heatmap.origin`: set origin, width and height together".into(),
            ))
        }
    };
    let map = export_heatmap(points, &grid)?;
    write_atomic(&cfg.out.join(format!("{name}.pgm")), |w| map.write_pgm(w))?;
    write_atomic(&cfg.out.join(format!("{name}.csv")), |w| map.write_csv(w))?;
    Ok(())
}
