// Train a small mixture-density LSTM on T-maze trajectories and round-trip
// it through a checkpoint.

use multipath::model::{nll_loss, train, LstmMdl, ModelConfig, TrainConfig};
use multipath::synthdata::{generate, Condition, TMazeSpec};

pub fn run_example() -> anyhow::Result<()> {
    let epochs = std::env::var("EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(3);
    let spec = TMazeSpec::for_condition(Condition::Tmaze);
    let data = generate(&spec, 64, 0)?;
    let held_out = generate(&spec, 16, 64)?;

    let config = ModelConfig { hidden_size: 16, ..ModelConfig::default() };
    let model = LstmMdl::init(config, 5)?;
    let cfg = TrainConfig { epochs, batch_size: 16, ..TrainConfig::default() };
    let (model, report) = train(model, &data, &cfg)?;
    for (epoch, loss) in report.loss_trace.iter().enumerate() {
        println!("epoch {epoch:>3} loss {loss:.4}");
    }

    let mean = |m: &LstmMdl| -> anyhow::Result<f64> {
        let total: f64 = held_out.iter().map(|t| nll_loss(m, &t.points)).sum::<multipath::Result<f64>>()?;
        Ok(total / held_out.len() as f64)
    };
    println!("held-out nll {:.4}", mean(&model)?);

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("tmaze.ckpt");
    model.save(&path)?;
    let restored = LstmMdl::load(&path)?;
    anyhow::ensure!(restored == model, "checkpoint round trip changed the model");
    println!("checkpoint {} bytes", std::fs::metadata(&path)?.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
