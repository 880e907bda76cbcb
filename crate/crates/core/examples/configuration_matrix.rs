// Run a reduced version of the sampling x weighting evaluation matrix on one
// condition and print the summary table.

use multipath::eval::{configuration_matrix, run_experiment, write_results_csv, ConditionData, ConditionSetup, Protocol};
use multipath::model::{train, LstmMdl, ModelConfig, TrainConfig};
use multipath::synthdata::{Condition, TMazeSpec};

pub fn run_example() -> anyhow::Result<()> {
    let spec = TMazeSpec::for_condition(Condition::HeavyLeft);
    let data = ConditionData::generate(&spec, 48, 60, 3)?;
    let model = LstmMdl::init(ModelConfig { hidden_size: 8, ..ModelConfig::default() }, 2)?;
    let (model, _) = train(model, &data.training, &TrainConfig { epochs: 1, batch_size: 16, ..TrainConfig::default() })?;

    let protocol = Protocol { particles: 40, runs: 1, trajectories: 3, neighbors: 10, ..Protocol::default() };
    let configs: Vec<_> = configuration_matrix().into_iter().step_by(3).collect();
    let out = run_experiment(&[ConditionSetup { data, model }], &configs, &protocol, 17)?;

    let mut csv = Vec::new();
    write_results_csv(&mut csv, &out.results)?;
    print!("{}", String::from_utf8(csv)?);
    for p in &out.curves {
        println!("traj {} x={:+.2} predicted {:.2} truth {:.2}", p.traj_index, p.start_x, p.left_fraction.unwrap_or(f64::NAN), p.ground_truth_fraction);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
