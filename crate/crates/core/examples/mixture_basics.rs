// Build a two-component mixture, evaluate it, sample from it and aggregate
// it with a second mixture.

use multipath::gmm::{aggregate, Gaussian2D, GaussianMixture2D, MixtureIndex, Point2D, SamplingStrategy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> anyhow::Result<()> {
    let left = Gaussian2D::new(Point2D::new(-1.0, 0.0), 0.3, 0.2, 0.0)?;
    let right = Gaussian2D::new(Point2D::new(1.0, 0.0), 0.3, 0.2, 0.4)?;
    let mix = GaussianMixture2D::new(vec![left, right], vec![0.25, 0.75])?;

    for p in [Point2D::new(-1.0, 0.0), Point2D::new(0.0, 0.0), Point2D::new(1.0, 0.0)] {
        println!("density at ({:+.1}, {:+.1}) = {:.4}", p.x, p.y, mix.density(p));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples = mix.sample(2000, SamplingStrategy::Stratified, &mut rng);
    let right_share = samples.iter().filter(|p| p.x > 0.0).count() as f64 / samples.len() as f64;
    println!("stratified samples on the right: {right_share:.3}");

    // shifting moves every mean, aggregation rescales weights by the outer weights
    let moved = mix.shift_means(Point2D::new(0.0, 2.0));
    let both = aggregate(&[mix.clone(), moved], &[0.5, 0.5])?;
    println!("aggregate has {} components, mean {:?}", both.len(), both.mean());

    // the grid index agrees with the direct sum away from the far tails
    let index = MixtureIndex::new(&both, 12.0);
    let q = Point2D::new(0.8, 1.9);
    println!("direct {:.6} indexed {:.6}", both.log_density(q), index.log_density(q));
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
