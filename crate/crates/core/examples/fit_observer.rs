//! Hook into a running fit: log phases, stop early from the observer, or let
//! the built-in relative-improvement rule end the run.
//!
//! ```text
//! cargo run --example fit_observer
//! ```

use std::ops::ControlFlow;

use strat_ntf::model::EarlyStop;
use strat_ntf::solver::{FitObserver, IterationRecord, Phase};
use strat_ntf::synth::{generate_planted, FactorDistribution, PlantedSpec};
use strat_ntf::{fit, fit_with, FitConfig, StrataRanks};

/// Prints the phases of the first iteration, then stops once the objective
/// drops below a target.
struct Watch {
    target: f64,
}

impl FitObserver for Watch {
    fn on_phase(&mut self, iteration: usize, phase: Phase) {
        if iteration == 1 {
            println!("  iteration 1: {phase:?}");
        }
    }

    fn on_iteration(&mut self, record: &IterationRecord) -> ControlFlow<()> {
        if record.iteration.is_multiple_of(50) {
            println!("  iteration {:>3}: objective {:.4}", record.iteration, record.objective);
        }
        if record.objective < self.target {
            println!("target reached at iteration {}", record.iteration);
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    }
}

fn main() -> strat_ntf::Result<()> {
    let (dataset, _) = generate_planted(&PlantedSpec {
        sample_counts: vec![10, 12],
        trailing_dims: vec![6, 5, 4],
        topic_rank: 2,
        strata_ranks: vec![1, 1],
        distribution: FactorDistribution::Uniform,
        noise: 0.05,
        seed: 5,
    })?;

    let config = FitConfig::new(2, StrataRanks::Uniform(1)).with_iterations(1000);
    let result = fit_with(&dataset, &config, &mut Watch { target: 1.0 })?;
    println!("termination: {}", result.termination.name());

    let mut config = FitConfig::new(2, StrataRanks::Uniform(1)).with_iterations(5000);
    config.early_stop = Some(EarlyStop { rel_tol: 1e-6, patience: 10 });
    let result = fit(&dataset, &config)?;
    println!(
        "early stop after {} iterations ({}), objective {:.4e}",
        result.trace.len() - 1,
        result.termination.name(),
        result.trace.last_objective().unwrap_or(f64::NAN)
    );
    Ok(())
}
