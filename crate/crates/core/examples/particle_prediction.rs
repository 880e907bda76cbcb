// Predict where a partly observed trajectory ends up and render the final
// particle cloud as a heatmap.

use multipath::eval::{centroid, export_heatmap, HeatmapGrid, RegionCounts};
use multipath::gmm::{Point2D, SamplingStrategy};
use multipath::model::{train, LstmMdl, ModelConfig, TrainConfig};
use multipath::particles::{propagate, PropagationConfig, WeightingStrategy};
use multipath::synthdata::{endpoint_regions, generate, Condition, TMazeSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> anyhow::Result<()> {
    let epochs = std::env::var("EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(2);
    let spec = TMazeSpec::for_condition(Condition::Tmaze);
    let data = generate(&spec, 48, 0)?;
    let regions = endpoint_regions(&spec)?;
    let model = LstmMdl::init(ModelConfig { hidden_size: 16, ..ModelConfig::default() }, 9)?;
    let (model, _) = train(model, &data, &TrainConfig { epochs, batch_size: 16, ..TrainConfig::default() })?;

    let target = &generate(&spec, 1, 1000)?[0];
    let observed = &target.points[..15];
    let cfg = PropagationConfig {
        horizon: target.len() - 15,
        particles: 300,
        sampling: SamplingStrategy::Stratified,
        weighting: WeightingStrategy::Interpolation(0.5),
        keep_history: true,
        ..PropagationConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let prediction = propagate(&model, observed, &cfg, &mut rng)?;

    let finals = prediction.final_positions();
    let counts = RegionCounts::of(&finals, &regions);
    let c = centroid(&finals)?;
    println!("true end ({:+.2}, {:+.2}), predicted centroid ({:+.2}, {:+.2})", target.end().x, target.end().y, c.x, c.y);
    println!("left {} right {} outliers {}", counts.left, counts.right, counts.outliers);
    println!("steps with uniform fallback: {:?}", prediction.fallback_steps());

    let grid = HeatmapGrid { origin: Point2D::new(-12.0, -1.0), cell_size: 0.5, width: 48, height: 16 };
    let heat = export_heatmap(&finals, &grid)?;
    let busiest = heat.counts.iter().max().copied().unwrap_or(0);
    println!("heatmap {}x{}, busiest cell holds {busiest} particles", grid.width, grid.height);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
