// Generate the synthetic T-maze conditions and report how often each one
// turns left.

use multipath::synthdata::{
    endpoint_regions, generate, left_branch_fraction, select_evaluation_trajectories, write_dataset_csv, Condition,
    TMazeSpec,
};

pub fn run_example() -> anyhow::Result<()> {
    for condition in Condition::ALL {
        let spec = TMazeSpec { seed: 11, ..TMazeSpec::for_condition(condition) };
        let data = generate(&spec, 400, 0)?;
        let regions = endpoint_regions(&spec)?;
        println!(
            "{:<14} left {:.3} (spec {:.3} at x=0)",
            condition.name(),
            left_branch_fraction(&data, &regions),
            spec.left_probability_at(0.0)
        );
    }

    let spec = TMazeSpec::for_condition(Condition::PosbiasNogap);
    let data = generate(&spec, 300, 0)?;
    let picked = select_evaluation_trajectories(&data, 5)?;
    for t in &picked {
        println!("traj {:>3} starts at x={:+.2}, p(left)={:.2}", t.id, t.start().x, spec.left_probability_at(t.start().x));
    }

    let mut csv = Vec::new();
    write_dataset_csv(&mut csv, &picked[..1])?;
    let text = String::from_utf8(csv)?;
    println!("{}", text.lines().take(3).collect::<Vec<_>>().join("\n"));
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
