//! Metrics and the configuration-matrix experiment.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{Point2D, SamplingStrategy};
use crate::model::LstmMdl;
use crate::particles::{propagate_pooled, PropagationConfig, WeightingStrategy, DEFAULT_HORIZON_CAP};
use crate::seed::derive_seed;
use crate::synthdata::{
    endpoint_regions, generate, select_evaluation_trajectories, Condition, EndpointRegions,
    Side, TMazeSpec, Trajectory,
};

pub fn centroid(points: &[Point2D]) -> Result<Point2D> {
    if points.is_empty() {
        return Err(Error::EmptyInput("centroid of no points"));
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
    Ok(Point2D::new(sx / n, sy / n))
}

/// Distance between the centroids of two point sets.
pub fn centroid_error(pred: &[Point2D], expected: &[Point2D]) -> Result<f64> {
    Ok(centroid(pred)?.distance(centroid(expected)?))
}

/// Endpoints of the training trajectories that start closest to an observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedDistribution {
    pub points: Vec<Point2D>,
}

/// Endpoints of the `k` trajectories whose starts are nearest to `start`.
/// Ties go to the earlier trajectory.
pub fn expected_distribution(dataset: &[Trajectory], start: Point2D, k: usize) -> Result<ExpectedDistribution> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("expected distribution needs a dataset"));
    }
    if k == 0 {
        return Err(Error::invalid("neighbors", "must be >= 1"));
    }
    let mut order: Vec<(f64, usize)> = dataset
        .iter()
        .enumerate()
        .map(|(i, t)| (t.start().distance(start), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(ExpectedDistribution {
        points: order.iter().take(k).map(|&(_, i)| dataset[i].end()).collect(),
    })
}

/// Particles per endpoint region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegionCounts {
    pub left: usize,
    pub right: usize,
    pub outliers: usize,
}

impl RegionCounts {
    pub fn of(particles: &[Point2D], regions: &EndpointRegions) -> Self {
        let mut c = RegionCounts::default();
        for &p in particles {
            match regions.classify(p) {
                Some(Side::Left) => c.left += 1,
                Some(Side::Right) => c.right += 1,
                None => c.outliers += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.left + self.right + self.outliers
    }

    pub fn outlier_ratio(&self) -> f64 {
        self.outliers as f64 / self.total().max(1) as f64
    }

    pub fn left_fraction(&self) -> Result<f64> {
        if self.left + self.right == 0 {
            return Err(Error::AllOutliers);
        }
        Ok(self.left as f64 / (self.left + self.right) as f64)
    }
}

/// Share of particles inside neither endpoint box.
pub fn outlier_ratio(particles: &[Point2D], regions: &EndpointRegions) -> f64 {
    RegionCounts::of(particles, regions).outlier_ratio()
}

/// Share of non-outlier particles inside the left box.
pub fn left_fraction(particles: &[Point2D], regions: &EndpointRegions) -> Result<f64> {
    RegionCounts::of(particles, regions).left_fraction()
}

/// Spearman rank correlation, ties ranked by their average position.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput("rank correlation needs two values"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean).powi(2);
        vb += (y - mean).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// One sampling/weighting pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub sampling: SamplingStrategy,
    pub weighting: WeightingStrategy,
}

impl Configuration {
    pub fn label(&self) -> String {
        format!("{}/{}", self.sampling.name(), self.weighting)
    }
}

/// Both samplers crossed with unweighted, density, two temperatures and four
/// interpolation factors.
pub fn configuration_matrix() -> Vec<Configuration> {
    let weightings = [
        WeightingStrategy::Unweighted,
        WeightingStrategy::DensityValue,
        WeightingStrategy::Temperature(0.01),
        WeightingStrategy::Temperature(1000.0),
        WeightingStrategy::Interpolation(0.25),
        WeightingStrategy::Interpolation(0.5),
        WeightingStrategy::Interpolation(0.75),
        WeightingStrategy::Interpolation(1.0),
    ];
    [SamplingStrategy::Multinomial, SamplingStrategy::Stratified]
        .into_iter()
        .flat_map(|sampling| {
            weightings
                .iter()
                .map(move |&weighting| Configuration { sampling, weighting })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Protocol {
    /// Observed positions per evaluation trajectory.
    pub observed: usize,
    pub horizon_min: usize,
    pub horizon_max: usize,
    pub particles: usize,
    /// Independent runs pooled per prediction.
    pub runs: usize,
    /// Evaluation trajectories per condition.
    pub trajectories: usize,
    /// Training trajectories used for the expected distribution.
    pub neighbors: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            observed: 15,
            horizon_min: 50,
            horizon_max: 60,
            particles: 1000,
            runs: 5,
            trajectories: 50,
            neighbors: 100,
        }
    }
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("observed", self.observed),
            ("horizon_min", self.horizon_min),
            ("particles", self.particles),
            ("runs", self.runs),
            ("trajectories", self.trajectories),
            ("neighbors", self.neighbors),
        ] {
            if v == 0 {
                return Err(Error::invalid(field, "must be >= 1"));
            }
        }
        if self.horizon_max < self.horizon_min {
            return Err(Error::invalid("horizon_max", "must be >= horizon_min"));
        }
        Ok(())
    }

    /// Remaining trajectory length, clamped to the horizon bounds.
    pub fn horizon_for(&self, trajectory_len: usize) -> usize {
        trajectory_len
            .saturating_sub(self.observed)
            .clamp(self.horizon_min, self.horizon_max)
    }
}

/// Everything the experiment needs about one condition.
#[derive(Debug, Clone)]
pub struct ConditionData {
    pub spec: TMazeSpec,
    pub regions: EndpointRegions,
    pub training: Vec<Trajectory>,
    /// Ordered by start x.
    pub evaluation: Vec<Trajectory>,
}

impl ConditionData {
    /// Training trajectories get ids `0..train`; the evaluation trajectories
    /// are picked from a disjoint pool of `pool` further ids.
    pub fn generate(spec: &TMazeSpec, train: usize, pool: usize, evaluation: usize) -> Result<Self> {
        let training = generate(spec, train, 0)?;
        let candidates = generate(spec, pool, train as u64)?;
        Ok(ConditionData {
            spec: spec.clone(),
            regions: endpoint_regions(spec)?,
            training,
            evaluation: select_evaluation_trajectories(&candidates, evaluation)?,
        })
    }
}

/// A trained model together with its condition data.
#[derive(Debug, Clone)]
pub struct ConditionSetup {
    pub data: ConditionData,
    pub model: LstmMdl,
}

/// Outcome of one configuration on one evaluation trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub configuration: Configuration,
    pub condition: Condition,
    pub traj_index: usize,
    pub start_x: f64,
    pub centroid_error: f64,
    pub outlier_ratio: f64,
    /// `None` when every particle is an outlier.
    pub left_fraction: Option<f64>,
    pub uniform_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub sampling: SamplingStrategy,
    pub weighting: WeightingStrategy,
    pub mce: f64,
    pub mce_std: f64,
    pub outlier_ratio: f64,
    pub or_std: f64,
    pub uniform_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionPoint {
    pub condition: Condition,
    pub traj_index: usize,
    pub start_x: f64,
    pub left_fraction: Option<f64>,
    /// Branch probability the generator uses at this start.
    pub ground_truth_fraction: f64,
    /// Left share of the expected distribution.
    pub empirical_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub results: Vec<ConfigResult>,
    pub cells: Vec<CellResult>,
    pub curves: Vec<FractionPoint>,
}

/// Conditions plotted as fraction curves.
pub const CURVE_CONDITIONS: [Condition; 4] = [
    Condition::Tmaze,
    Condition::HeavyLeft,
    Condition::PosbiasGap,
    Condition::PosbiasNogap,
];

/// Evaluates every configuration on every evaluation trajectory of every
/// condition. Outliers are left out of the predicted centroid (all particles
/// are used if none is inside a region). Fraction curves come from the first
/// configuration.
pub fn run_experiment(
    setups: &[ConditionSetup],
    configurations: &[Configuration],
    protocol: &Protocol,
    master_seed: u64,
) -> Result<ExperimentOutput> {
    protocol.validate()?;
    if setups.is_empty() {
        return Err(Error::EmptyInput("no conditions to evaluate"));
    }
    if configurations.is_empty() {
        return Err(Error::EmptyInput("no configurations to evaluate"));
    }
    let mut tasks = Vec::new();
    for (ci, cfg) in configurations.iter().enumerate() {
        for (si, setup) in setups.iter().enumerate() {
            let n = protocol.trajectories.min(setup.data.evaluation.len());
            for ti in 0..n {
                tasks.push((ci, cfg, si, ti));
            }
        }
    }
    let cells: Vec<CellResult> = tasks
        .par_iter()
        .map(|&(_, cfg, si, ti)| evaluate_cell(&setups[si], ti, cfg, protocol, master_seed))
        .collect::<Result<_>>()?;

    let results = configurations
        .iter()
        .map(|cfg| summarize(cfg, cells.iter().filter(|c| c.configuration == *cfg)))
        .collect();

    let mut curves = Vec::new();
    for (&(ci, _, si, ti), cell) in tasks.iter().zip(&cells) {
        let data = &setups[si].data;
        if ci != 0 || !CURVE_CONDITIONS.contains(&data.spec.condition) {
            continue;
        }
        let start = data.evaluation[ti].start();
        let expected = expected_distribution(&data.training, start, protocol.neighbors)?;
        curves.push(FractionPoint {
            condition: cell.condition,
            traj_index: ti,
            start_x: cell.start_x,
            left_fraction: cell.left_fraction,
            ground_truth_fraction: data.spec.left_probability_at(start.x),
            empirical_fraction: RegionCounts::of(&expected.points, &data.regions)
                .left_fraction()
                .unwrap_or(f64::NAN),
        });
    }
    Ok(ExperimentOutput { results, cells, curves })
}

fn evaluate_cell(
    setup: &ConditionSetup,
    traj_index: usize,
    cfg: &Configuration,
    protocol: &Protocol,
    master_seed: u64,
) -> Result<CellResult> {
    let condition = setup.data.spec.condition;
    let traj = &setup.data.evaluation[traj_index];
    if traj.len() <= protocol.observed {
        return Err(Error::invalid(
            "observed",
            format!("trajectory {} has only {} positions", traj.id, traj.len()),
        ));
    }
    let obs = &traj.points[..protocol.observed];
    let prop = PropagationConfig {
        horizon: protocol.horizon_for(traj.len()),
        particles: protocol.particles,
        sampling: cfg.sampling,
        weighting: cfg.weighting,
        horizon_cap: DEFAULT_HORIZON_CAP,
        keep_history: false,
    };
    let seed = derive_seed(
        master_seed,
        &format!("eval/{}/{}/{}", cfg.label(), condition, traj_index),
    );
    let pooled = propagate_pooled(&setup.model, obs, &prop, protocol.runs, seed)?;
    let regions = &setup.data.regions;
    let counts = RegionCounts::of(&pooled.positions, regions);
    let inliers: Vec<Point2D> = pooled
        .positions
        .iter()
        .copied()
        .filter(|&p| regions.classify(p).is_some())
        .collect();
    let used = if inliers.is_empty() { &pooled.positions } else { &inliers };
    let expected = expected_distribution(&setup.data.training, traj.start(), protocol.neighbors)?;
    Ok(CellResult {
        configuration: *cfg,
        condition,
        traj_index,
        start_x: traj.start().x,
        centroid_error: centroid_error(used, &expected.points)?,
        outlier_ratio: counts.outlier_ratio(),
        left_fraction: counts.left_fraction().ok(),
        uniform_fallbacks: pooled.uniform_fallbacks,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summarize<'a>(cfg: &Configuration, cells: impl Iterator<Item = &'a CellResult>) -> ConfigResult {
    let cells: Vec<&CellResult> = cells.collect();
    let ce: Vec<f64> = cells.iter().map(|c| c.centroid_error).collect();
    let or: Vec<f64> = cells.iter().map(|c| c.outlier_ratio).collect();
    let (mce, mce_std) = mean_std(&ce);
    let (outlier_ratio, or_std) = mean_std(&or);
    ConfigResult {
        sampling: cfg.sampling,
        weighting: cfg.weighting,
        mce,
        mce_std,
        outlier_ratio,
        or_std,
        uniform_fallbacks: cells.iter().map(|c| c.uniform_fallbacks).sum(),
    }
}

/// `sampling,weighting,param,mce,mce_std,outlier_ratio,or_std`, four decimals.
pub fn write_results_csv<W: Write>(out: W, results: &[ConfigResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sampling", "weighting", "param", "mce", "mce_std", "outlier_ratio", "or_std"])
        .map_err(csv_err)?;
    for r in results {
        w.write_record(&[
            r.sampling.name().to_string(),
            r.weighting.name().to_string(),
            r.weighting.param().map(|p| p.to_string()).unwrap_or_default(),
            format!("{:.4}", r.mce),
            format!("{:.4}", r.mce_std),
            format!("{:.4}", r.outlier_ratio),
            format!("{:.4}", r.or_std),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `condition,traj_index,start_x,left_fraction,ground_truth_fraction,empirical_fraction`.
/// An empty `left_fraction` means every particle was an outlier.
pub fn write_curves_csv<W: Write>(out: W, curves: &[FractionPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "condition",
        "traj_index",
        "start_x",
        "left_fraction",
        "ground_truth_fraction",
        "empirical_fraction",
    ])
    .map_err(csv_err)?;
    for c in curves {
        w.write_record(&[
            c.condition.name().to_string(),
            c.traj_index.to_string(),
            format!("{:.4}", c.start_x),
            c.left_fraction.map(|f| format!("{f:.4}")).unwrap_or_default(),
            format!("{:.4}", c.ground_truth_fraction),
            format!("{:.4}", c.empirical_fraction),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Rectangular histogram grid; `origin` is the lower-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub origin: Point2D,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl HeatmapGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::DegenerateGrid(format!("cell size {}", self.cell_size)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::DegenerateGrid(format!("{} x {} cells", self.width, self.height)));
        }
        if !self.origin.is_finite() {
            return Err(Error::DegenerateGrid("non-finite origin".into()));
        }
        Ok(())
    }

    /// Smallest grid of `cell_size` cells covering the given boxes.
    pub fn covering(points: &[Point2D], cell_size: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::DegenerateGrid("nothing to cover".into()));
        }
        let min_x = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let min_y = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let max_x = points.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let max_y = points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let grid = HeatmapGrid {
            origin: Point2D::new(min_x, min_y),
            cell_size,
            width: (((max_x - min_x) / cell_size).floor() as usize + 1).max(1),
            height: (((max_y - min_y) / cell_size).floor() as usize + 1).max(1),
        };
        grid.validate()?;
        Ok(grid)
    }

    fn cell(&self, p: Point2D) -> Option<(usize, usize)> {
        let cx = ((p.x - self.origin.x) / self.cell_size).floor();
        let cy = ((p.y - self.origin.y) / self.cell_size).floor();
        if cx >= 0.0 && cy >= 0.0 && (cx as usize) < self.width && (cy as usize) < self.height {
            Some((cx as usize, cy as usize))
        } else {
            None
        }
    }
}

/// Particle histogram normalized to a maximum of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub grid: HeatmapGrid,
    /// Raw counts, row-major with row 0 at the bottom.
    pub counts: Vec<usize>,
    /// `counts / max(counts)`, all zero when no particle hit the grid.
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn value(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.grid.width + col]
    }

    /// Binary graymap, maximum 255, top row first.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        let (w, h) = (self.grid.width, self.grid.height);
        write!(out, "P5\n{w} {h}\n255\n")?;
        let mut bytes = Vec::with_capacity(w * h);
        for row in (0..h).rev() {
            for col in 0..w {
                bytes.push((self.value(col, row) * 255.0).round() as u8);
            }
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    /// One comma-separated line per grid row, top row first, like the graymap.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in (0..self.grid.height).rev() {
            let line: Vec<String> = (0..self.grid.width)
                .map(|col| format!("{:.6}", self.value(col, row)))
                .collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn save(&self, pgm: &Path, csv_path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(pgm)?);
        self.write_pgm(&mut f)?;
        f.flush()?;
        let mut f = BufWriter::new(File::create(csv_path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Histograms `particles` over `grid`; particles outside the grid are ignored.
pub fn export_heatmap(particles: &[Point2D], grid: &HeatmapGrid) -> Result<Heatmap> {
    grid.validate()?;
    let mut counts = vec![0usize; grid.width * grid.height];
    for &p in particles {
        if let Some((cx, cy)) = grid.cell(p) {
            counts[cy * grid.width + cx] += 1;
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    let values = counts
        .iter()
        .map(|&c| if max == 0 { 0.0 } else { c as f64 / max as f64 })
        .collect();
    Ok(Heatmap {
        grid: *grid,
        counts,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synthdata::BoundingBox;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn regions() -> EndpointRegions {
        EndpointRegions {
            left: BoundingBox {
                min: Point2D::new(-6.0, 4.0),
                max: Point2D::new(-4.0, 6.0),
            },
            right: BoundingBox {
                min: Point2D::new(4.0, 4.0),
                max: Point2D::new(6.0, 6.0),
            },
        }
    }

    #[test]
    fn centroid_examples() {
        let p = Point2D::new(1.5, -2.0);
        assert_eq!(centroid(&[p]).unwrap(), p);
        assert_eq!(
            centroid(&[Point2D::ORIGIN, Point2D::new(2.0, 0.0)]).unwrap(),
            Point2D::new(1.0, 0.0)
        );
        assert!(matches!(centroid(&[]), Err(Error::EmptyInput(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point2D> = (0..20)
            .map(|_| Point2D::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
            .collect();
        let v = Point2D::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let moved: Vec<Point2D> = pts.iter().map(|&p| p + v).collect();
        let (a, b) = (centroid(&moved).unwrap(), centroid(&pts).unwrap() + v);
        assert_abs_diff_eq!(a.x, b.x, epsilon = 1e-12);
        assert_abs_diff_eq!(a.y, b.y, epsilon = 1e-12);
    }

    #[test]
    fn centroid_error_examples() {
        let pts = vec![Point2D::new(1.0, 1.0), Point2D::new(2.0, 3.0)];
        assert_eq!(centroid_error(&pts, &pts).unwrap(), 0.0);
        assert_eq!(
            centroid_error(&[Point2D::ORIGIN], &[Point2D::new(3.0, 4.0)]).unwrap(),
            5.0
        );

        // mirrored bimodal sets: balanced vs balanced is 0, an unbalanced
        // prediction is off by the shift of its mode-weighted center
        let l = Point2D::new(-5.0, 5.0);
        let r = Point2D::new(5.0, 5.0);
        let truth = vec![l, r];
        assert_abs_diff_eq!(centroid_error(&[l, r, l, r], &truth).unwrap(), 0.0);
        let skewed = vec![l, l, l, r];
        assert_abs_diff_eq!(centroid_error(&skewed, &truth).unwrap(), 2.5, epsilon = 1e-12);

        let a = vec![Point2D::new(0.3, 2.0)];
        let b = vec![Point2D::new(-1.0, 0.5), Point2D::new(4.0, 1.0)];
        let c = vec![Point2D::new(7.0, -3.0)];
        let ab = centroid_error(&a, &b).unwrap();
        assert_eq!(ab, centroid_error(&b, &a).unwrap());
        assert!(ab <= centroid_error(&a, &c).unwrap() + centroid_error(&c, &b).unwrap() + 1e-12);
    }

    fn straight(id: u64, start: Point2D, end: Point2D) -> Trajectory {
        Trajectory {
            id,
            points: vec![start, end],
        }
    }

    #[test]
    fn expected_distribution_examples() {
        let data: Vec<Trajectory> = (0..10)
            .map(|i| {
                let s = Point2D::new(i as f64, 0.0);
                straight(i, s, s + Point2D::new(0.0, 10.0))
            })
            .collect();
        let all = expected_distribution(&data, Point2D::ORIGIN, 10).unwrap();
        assert_eq!(all.points.len(), 10);
        let one = expected_distribution(&data, data[4].start(), 1).unwrap();
        assert_eq!(one.points, vec![data[4].end()]);
        let three = expected_distribution(&data, Point2D::new(6.2, 0.0), 3).unwrap();
        assert_eq!(three.points[0], data[6].end());
        assert!(expected_distribution(&[], Point2D::ORIGIN, 1).is_err());
    }

    #[test]
    fn expected_distribution_on_tmaze_is_balanced() {
        let spec = TMazeSpec {
            seed: 3,
            ..TMazeSpec::for_condition(Condition::Tmaze)
        };
        let data = generate(&spec, 1000, 0).unwrap();
        let regions = endpoint_regions(&spec).unwrap();
        let d = expected_distribution(&data, Point2D::new(0.0, 0.5), 100).unwrap();
        let c = RegionCounts::of(&d.points, &regions);
        // 100 fair coin flips: 4 sigma band
        assert!((30..=70).contains(&c.left), "{c:?}");
        assert_eq!(c.outliers, 0);
    }

    #[test]
    fn outlier_and_fraction_examples() {
        let r = regions();
        let left = vec![Point2D::new(-5.0, 5.0); 4];
        assert_eq!(outlier_ratio(&left, &r), 0.0);
        assert_eq!(left_fraction(&left, &r).unwrap(), 1.0);
        let origin = vec![Point2D::ORIGIN; 3];
        assert_eq!(outlier_ratio(&origin, &r), 1.0);
        assert!(matches!(left_fraction(&origin, &r), Err(Error::AllOutliers)));
        let mixed = vec![
            Point2D::new(-5.0, 5.0),
            Point2D::new(5.0, 5.0),
            Point2D::new(-4.5, 4.5),
            Point2D::new(4.5, 5.5),
            Point2D::ORIGIN,
        ];
        assert_eq!(left_fraction(&mixed, &r).unwrap(), 0.5);
    }

    #[test]
    fn region_partition_identity() {
        let r = regions();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Point2D> = (0..997)
            .map(|_| Point2D::new(rng.gen_range(-7.0..7.0), rng.gen_range(3.0..7.0)))
            .collect();
        let c = RegionCounts::of(&pts, &r);
        let or = c.outlier_ratio();
        let n = c.total() as f64;
        let (lf, rf) = (c.left as f64 / n / (1.0 - or), c.right as f64 / n / (1.0 - or));
        assert_abs_diff_eq!(or + lf * (1.0 - or) + rf * (1.0 - or), 1.0, epsilon = 1e-12);
        assert_eq!(c.left + c.right + c.outliers, pts.len());
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_abs_diff_eq!(spearman(&x, &[10.0, 20.0, 30.0, 40.0, 50.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        // textbook value with ties: ranks [1, 2.5, 2.5, 4] vs [1, 2, 3, 4]
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(r, 4.5 / (4.5f64 * 5.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn matrix_has_sixteen_configurations() {
        let m = configuration_matrix();
        assert_eq!(m.len(), 16);
        for (i, a) in m.iter().enumerate() {
            for b in &m[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn horizon_is_clamped() {
        let p = Protocol::default();
        assert_eq!(p.horizon_for(70), 55);
        assert_eq!(p.horizon_for(30), 50);
        assert_eq!(p.horizon_for(200), 60);
    }

    fn tiny_setup(seed: u64) -> ConditionSetup {
        let spec = TMazeSpec {
            seed,
            ..TMazeSpec::for_condition(Condition::Tmaze)
        };
        ConditionSetup {
            data: ConditionData::generate(&spec, 40, 20, 3).unwrap(),
            model: LstmMdl::init(
                ModelConfig {
                    num_components: 2,
                    hidden_size: 4,
                    num_layers: 1,
                },
                seed,
            )
            .unwrap(),
        }
    }

    fn tiny_protocol() -> Protocol {
        Protocol {
            particles: 8,
            runs: 2,
            trajectories: 3,
            neighbors: 5,
            ..Protocol::default()
        }
    }

    #[test]
    fn single_cell_mce_is_its_ce() {
        let setups = vec![tiny_setup(1)];
        let protocol = Protocol {
            trajectories: 1,
            ..tiny_protocol()
        };
        let cfg = configuration_matrix()[0];
        let out = run_experiment(&setups, &[cfg], &protocol, 5).unwrap();
        assert_eq!(out.cells.len(), 1);
        assert_eq!(out.results[0].mce, out.cells[0].centroid_error);
        assert_eq!(out.results[0].mce_std, 0.0);
    }

    #[test]
    fn experiment_is_deterministic_and_shaped() {
        let setups = vec![tiny_setup(1), tiny_setup(2)];
        let configs = &configuration_matrix()[..3];
        let a = run_experiment(&setups, configs, &tiny_protocol(), 11).unwrap();
        let b = run_experiment(&setups, configs, &tiny_protocol(), 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.results.len(), 3);
        assert_eq!(a.cells.len(), 3 * 2 * 3);
        assert_eq!(a.curves.len(), 2 * 3);
        for r in &a.results {
            assert!(r.mce >= 0.0 && (0.0..=1.0).contains(&r.outlier_ratio));
        }
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &a.results).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("sampling,weighting,param,mce,mce_std,outlier_ratio,or_std\n"));
        assert!(text.contains("multinomial,density,,"));
    }

    #[test]
    fn heatmap_single_cell() {
        let grid = HeatmapGrid {
            origin: Point2D::ORIGIN,
            cell_size: 1.0,
            width: 4,
            height: 3,
        };
        let h = export_heatmap(&vec![Point2D::new(2.5, 1.5); 7], &grid).unwrap();
        assert_eq!(h.value(2, 1), 1.0);
        assert_eq!(h.values.iter().filter(|&&v| v != 0.0).count(), 1);
        let empty = export_heatmap(&[Point2D::new(50.0, 50.0)], &grid).unwrap();
        assert!(empty.values.iter().all(|&v| v == 0.0));

        let mut buf = Vec::new();
        h.write_pgm(&mut buf).unwrap();
        let header = b"P5\n4 3\n255\n";
        assert_eq!(&buf[..header.len()], header);
        let pixels = &buf[header.len()..];
        assert_eq!(pixels.len(), 12);
        // row 1 from the bottom is the middle image row
        assert_eq!(pixels[4 + 2], 255);
        assert_eq!(pixels.iter().filter(|&&b| b != 0).count(), 1);
    }

    #[test]
    fn heatmap_uniform_counts_are_multinomial() {
        let grid = HeatmapGrid {
            origin: Point2D::new(-2.0, -1.0),
            cell_size: 0.5,
            width: 8,
            height: 6,
        };
        let n = 48_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Point2D> = (0..n)
            .map(|_| Point2D::new(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..2.0)))
            .collect();
        let h = export_heatmap(&pts, &grid).unwrap();
        let cells = (grid.width * grid.height) as f64;
        let mean = n as f64 / cells;
        let sd = (n as f64 * (1.0 / cells) * (1.0 - 1.0 / cells)).sqrt();
        assert_eq!(h.counts.iter().sum::<usize>(), n);
        for &c in &h.counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "{c} vs {mean}");
        }
    }

    #[test]
    fn degenerate_grids() {
        let mut grid = HeatmapGrid {
            origin: Point2D::ORIGIN,
            cell_size: 0.0,
            width: 4,
            height: 3,
        };
        assert!(matches!(export_heatmap(&[], &grid), Err(Error::DegenerateGrid(_))));
        grid.cell_size = 1.0;
        grid.width = 0;
        assert!(matches!(export_heatmap(&[], &grid), Err(Error::DegenerateGrid(_))));
    }
}
