//! The model contains familiar factorizations as special cases:
//!
//! * one stratum with no strata features is non-negative CP decomposition
//!   (and plain NMF when each sample is a vector);
//! * vector samples with one strata feature per stratum give stratified NMF.
//!
//! ```text
//! cargo run --release --example special_cases
//! ```

use strat_ntf::synth::{generate_planted, FactorDistribution, PlantedSpec};
use strat_ntf::{fit, relative_loss, FitConfig, StrataRanks};

fn report(name: &str, samples: Vec<usize>, dims: Vec<usize>, r: usize, rp: usize) -> strat_ntf::Result<()> {
    let s = samples.len();
    let (dataset, _) = generate_planted(&PlantedSpec {
        sample_counts: samples,
        trailing_dims: dims,
        topic_rank: r,
        strata_ranks: vec![rp; s],
        distribution: FactorDistribution::Uniform,
        noise: 0.0,
        seed: 11,
    })?;
    let config = FitConfig::new(r, StrataRanks::Uniform(rp)).with_iterations(500);
    let result = fit(&dataset, &config)?;
    println!(
        "{name:<26} {:>6} params  relative loss {:.2e}",
        result.model.param_count(),
        relative_loss(&result, &dataset)?
    );
    Ok(())
}

fn main() -> strat_ntf::Result<()> {
    report("NMF", vec![30], vec![20], 3, 0)?;
    report("non-negative CP (3-way)", vec![30], vec![8, 6], 3, 0)?;
    report("stratified NMF", vec![15, 15, 15], vec![20], 3, 1)?;
    report("stratified tensor", vec![15, 15, 15], vec![8, 6], 3, 2)?;
    Ok(())
}
