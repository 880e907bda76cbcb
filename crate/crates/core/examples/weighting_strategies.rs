// Compare how each weighting strategy turns the same densities into particle
// weights.

use multipath::gmm::{Gaussian2D, GaussianMixture2D, Point2D};
use multipath::particles::{weight_density, WeightingStrategy};

pub fn run_example() -> anyhow::Result<()> {
    let mix = GaussianMixture2D::single(Gaussian2D::new(Point2D::new(0.0, 0.0), 1.0, 1.0, 0.0)?)?;
    let particles: Vec<Point2D> = (0..5).map(|i| Point2D::new(i as f64 * 0.75, 0.0)).collect();
    let logd: Vec<f64> = particles.iter().map(|&p| mix.log_density(p)).collect();

    let (density, _) = weight_density(&particles, &mix);
    println!("{:<18} {:?}", "density", round(&density));

    for s in ["unweighted", "temperature:0.01", "temperature:1000", "interpolation:0.5", "interpolation:1"] {
        let strategy: WeightingStrategy = s.parse()?;
        let (w, fallback) = strategy.from_log_densities(&logd);
        println!("{:<18} {:?}{}", strategy.to_string(), round(&w), if fallback { " (uniform fallback)" } else { "" });
    }

    // nothing has any density: weights fall back to uniform
    let (w, fallback) = WeightingStrategy::DensityValue.from_log_densities(&[f64::NEG_INFINITY; 4]);
    println!("all -inf -> {:?} fallback={fallback}", w);
    Ok(())
}

fn round(w: &[f64]) -> Vec<f64> {
    w.iter().map(|v| (v * 1e4).round() / 1e4).collect()
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
