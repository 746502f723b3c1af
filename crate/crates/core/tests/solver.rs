mod common;

use std::ops::ControlFlow;

use strat_ntf::model::EarlyStop;
use strat_ntf::solver::{fit_from, run_iteration, FitObserver, IterationRecord, Phase, Termination};
use strat_ntf::synth::{generate_planted, FactorDistribution, PlantedSpec};
use strat_ntf::tv::{normalize_topics_mode, update_topics_mode_regularized, Normalization};
use strat_ntf::updates::{update_codings_all, update_strata_mode_all, update_topics_mode};
use strat_ntf::{fit, fit_with, init_model, FitConfig, StrataRanks, StratifiedDataset};

use common::*;

#[derive(Default)]
struct Recorder {
    phases: Vec<(usize, Phase)>,
    records: Vec<IterationRecord>,
    stop_at: Option<usize>,
}

impl FitObserver for Recorder {
    fn on_phase(&mut self, iteration: usize, phase: Phase) {
        self.phases.push((iteration, phase));
    }

    fn on_iteration(&mut self, record: &IterationRecord) -> ControlFlow<()> {
        self.records.push(*record);
        match self.stop_at {
            Some(n) if record.iteration >= n => ControlFlow::Break(()),
            _ => ControlFlow::Continue(()),
        }
    }
}

fn dataset(seed: u64) -> StratifiedDataset {
    let mut rng = rng(seed);
    random_instance_with(&mut rng, &[3, 2], &[4, 3], 2, &[1, 2]).dataset
}

#[test]
fn phases_follow_the_documented_order() {
    let ds = dataset(1);
    let cfg = FitConfig::new(2, StrataRanks::Uniform(1)).with_iterations(2).with_strata_sweeps(2).with_reg_strength(1.0);
    let mut rec = Recorder::default();
    fit_with(&ds, &cfg, &mut rec).unwrap();
    let one: Vec<Phase> = rec.phases.iter().filter(|(it, _)| *it == 1).map(|(_, p)| *p).collect();
    assert_eq!(
        one,
        vec![
            Phase::Strata { sweep: 0, mode: 1 },
            Phase::Strata { sweep: 0, mode: 2 },
            Phase::Strata { sweep: 1, mode: 1 },
            Phase::Strata { sweep: 1, mode: 2 },
            Phase::Codings,
            Phase::Topics { mode: 1, regularized: true },
            Phase::Normalize { mode: 1 },
            Phase::Topics { mode: 2, regularized: true },
            Phase::Normalize { mode: 2 },
        ]
    );
    assert_eq!(rec.records.len(), 3);
    assert_eq!(rec.records.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn unregularized_iteration_skips_normalization() {
    let ds = dataset(2);
    let cfg = FitConfig::new(2, StrataRanks::Uniform(1)).with_iterations(1);
    let mut rec = Recorder::default();
    fit_with(&ds, &cfg, &mut rec).unwrap();
    assert!(rec.phases.iter().all(|(_, p)| !matches!(p, Phase::Normalize { .. })));
    assert!(rec.phases.contains(&(1, Phase::Topics { mode: 2, regularized: false })));
}

#[test]
fn iteration_equals_composed_public_updates() {
    let ds = dataset(3);
    let mut cfg = FitConfig::new(2, StrataRanks::Uniform(1)).with_reg_strength(2.0);
    cfg.regularized_modes = Some(vec![2]);
    let start = init_model(&ds, &cfg).unwrap();

    let mut expected = start.clone();
    for _ in 0..cfg.strata_sweeps {
        for mode in 1..3 {
            update_strata_mode_all(&mut expected, &ds, mode, cfg.clip_floor).unwrap();
        }
    }
    update_codings_all(&mut expected, &ds, cfg.clip_floor).unwrap();
    update_topics_mode_regularized(&mut expected, &ds, 1, 0.0, cfg.clip_floor).unwrap();
    normalize_topics_mode(&mut expected, 1, Normalization::L2, cfg.clip_floor).unwrap();
    update_topics_mode_regularized(&mut expected, &ds, 2, 2.0, cfg.clip_floor).unwrap();
    normalize_topics_mode(&mut expected, 2, Normalization::L2, cfg.clip_floor).unwrap();

    let mut got = start;
    run_iteration(&mut got, &ds, &cfg, 1, &mut ()).unwrap();
    assert_eq!(got, expected);
}

#[test]
fn zero_lambda_regularized_update_is_bit_identical() {
    let mut rng = rng(4);
    for _ in 0..10 {
        let inst = random_instance(&mut rng, &[4, 3, 3], 3, 3, 2);
        for tau in 1..inst.dataset.ndim() {
            let mut a = inst.model.clone();
            let mut b = inst.model.clone();
            update_topics_mode(&mut a, &inst.dataset, tau, EPS).unwrap();
            update_topics_mode_regularized(&mut b, &inst.dataset, tau, 0.0, EPS).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn observer_can_stop_the_fit() {
    let ds = dataset(5);
    let cfg = FitConfig::new(2, StrataRanks::Uniform(1)).with_iterations(50);
    let mut rec = Recorder {
        stop_at: Some(3),
        ..Default::default()
    };
    let result = fit_with(&ds, &cfg, &mut rec).unwrap();
    assert_eq!(result.termination, Termination::UserAbort);
    assert_eq!(result.trace.len(), 4);
}

#[test]
fn early_stop_ends_a_converged_fit() {
    let (ds, truth) = generate_planted(&PlantedSpec {
        sample_counts: vec![4, 4],
        trailing_dims: vec![3, 3],
        topic_rank: 1,
        strata_ranks: vec![1, 1],
        distribution: FactorDistribution::Uniform,
        noise: 0.0,
        seed: 2,
    })
    .unwrap();
    let mut cfg = FitConfig::new(1, StrataRanks::Uniform(1)).with_iterations(100);
    cfg.early_stop = Some(EarlyStop { rel_tol: 1e-9, patience: 3 });
    let result = fit_from(&ds, &cfg, truth, &mut ()).unwrap();
    assert_eq!(result.termination, Termination::Tolerance);
    assert_eq!(result.trace.len(), 4);
}

#[test]
fn fits_are_deterministic_and_seed_dependent() {
    let ds = dataset(6);
    let cfg = FitConfig::new(2, StrataRanks::PerStratum(vec![1, 0])).with_iterations(10).with_seed(5);
    let a = fit(&ds, &cfg).unwrap();
    let b = fit(&ds, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.trace.objectives(), b.trace.objectives());
    let c = fit(&ds, &cfg.clone().with_seed(6)).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn pool_size_does_not_change_results() {
    let ds = dataset(7);
    let cfg = FitConfig::new(2, StrataRanks::Uniform(2)).with_iterations(5).with_reg_strength(0.5);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fit(&ds, &cfg).unwrap().model)
    };
    assert_eq!(run(1), run(4));
}
