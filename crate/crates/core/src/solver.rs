//! The outer fitting loop.
//!
//! One iteration is: `strata_sweeps` passes over the trailing modes updating
//! strata features, one coding update, then one topic update per trailing mode
//! (TV-regularized and followed by normalization when `reg_strength > 0`).
//! Each phase rebuilds the reconstructions from the current state.

use std::ops::ControlFlow;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{init_model, objective, FitConfig, ModelState, StratifiedDataset};
use crate::tv::{normalize_topics_mode, update_topics_mode_regularized};
use crate::updates::{update_codings_all, update_strata_mode_all, update_topics_mode};

/// Relative increase of the objective tolerated before a step is reported
/// as non-monotone.
pub const MONOTONE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Strata { sweep: usize, mode: usize },
    Codings,
    Topics { mode: usize, regularized: bool },
    Normalize { mode: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub seconds: f64,
}

/// Objective per iteration; entry 0 is the initial state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    records: Vec<IterationRecord>,
}

impl LossTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: IterationRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.iteration <= last.iteration {
                return Err(Error::invalid("trace iterations must increase"));
            }
        }
        if !(record.objective.is_finite() && record.objective >= 0.0) {
            return Err(Error::invalid("trace objectives must be finite and non-negative"));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    /// Iterations whose objective rose by more than `rel_tol` over the previous one.
    pub fn increases(&self, rel_tol: f64) -> Vec<usize> {
        self.records
            .windows(2)
            .filter(|w| w[1].objective > w[0].objective * (1.0 + rel_tol))
            .map(|w| w[1].iteration)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    Tolerance,
    UserAbort,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::MaxIterations => "max-iterations",
            Termination::Tolerance => "tolerance",
            Termination::UserAbort => "user-abort",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelState,
    pub trace: LossTrace,
    pub config: FitConfig,
    pub termination: Termination,
    /// Iterations at which the objective increased beyond [`MONOTONE_TOLERANCE`].
    pub monotonicity_violations: Vec<usize>,
}

/// Hooks into a running fit. Both methods are called on the fitting thread.
pub trait FitObserver {
    fn on_phase(&mut self, _iteration: usize, _phase: Phase) {}

    /// Called once per recorded objective, including the initial one. Return
    /// `Break` to stop after this iteration.
    fn on_iteration(&mut self, _record: &IterationRecord) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }
}

impl FitObserver for () {}

/// Adapts a closure into a progress-only observer.
pub struct Progress<F>(pub F);

impl<F: FnMut(&IterationRecord)> FitObserver for Progress<F> {
    fn on_iteration(&mut self, record: &IterationRecord) -> ControlFlow<()> {
        (self.0)(record);
        ControlFlow::Continue(())
    }
}

pub fn fit(dataset: &StratifiedDataset, config: &FitConfig) -> Result<FitResult> {
    fit_with(dataset, config, &mut ())
}

pub fn fit_with(
    dataset: &StratifiedDataset,
    config: &FitConfig,
    observer: &mut dyn FitObserver,
) -> Result<FitResult> {
    let model = init_model(dataset, config)?;
    fit_from(dataset, config, model, observer)
}

/// Runs the loop from a given starting state instead of a random one.
pub fn fit_from(
    dataset: &StratifiedDataset,
    config: &FitConfig,
    mut model: ModelState,
    observer: &mut dyn FitObserver,
) -> Result<FitResult> {
    let ranks = config.resolve(dataset)?;
    model.check_compatible(dataset)?;
    if model.topic_rank() != config.topic_rank || model.strata_ranks() != ranks {
        return Err(Error::shape("initial model ranks differ from the config"));
    }
    let start = Instant::now();
    let mut trace = LossTrace::new();
    let mut violations = Vec::new();

    let initial = checked_objective(&model, dataset, 0)?;
    let record = IterationRecord {
        iteration: 0,
        objective: initial,
        seconds: start.elapsed().as_secs_f64(),
    };
    trace.push(record)?;
    let mut termination = Termination::MaxIterations;
    if observer.on_iteration(&record).is_break() {
        termination = Termination::UserAbort;
    }

    let mut iteration = 0;
    while termination == Termination::MaxIterations && iteration < config.iterations {
        iteration += 1;
        run_iteration(&mut model, dataset, config, iteration, observer)?;
        let obj = checked_objective(&model, dataset, iteration)?;
        let prev = trace.last_objective().unwrap_or(obj);
        if obj > prev * (1.0 + MONOTONE_TOLERANCE) {
            log::warn!("objective increased at iteration {iteration}: {prev:e} -> {obj:e}");
            violations.push(iteration);
        }
        let record = IterationRecord {
            iteration,
            objective: obj,
            seconds: start.elapsed().as_secs_f64(),
        };
        trace.push(record)?;
        if observer.on_iteration(&record).is_break() {
            termination = Termination::UserAbort;
        } else if let Some(es) = config.early_stop {
            if early_stop_check(&trace, es.rel_tol, es.patience) {
                termination = Termination::Tolerance;
            }
        }
    }

    Ok(FitResult {
        model,
        trace,
        config: config.clone(),
        termination,
        monotonicity_violations: violations,
    })
}

fn checked_objective(model: &ModelState, dataset: &StratifiedDataset, iteration: usize) -> Result<f64> {
    let obj = objective(model, dataset)?;
    if !obj.is_finite() || !model.all_finite() {
        return Err(Error::NonFinite {
            iteration,
            state: Box::new(model.clone()),
        });
    }
    Ok(obj)
}

/// One full outer iteration, in place.
pub fn run_iteration(
    model: &mut ModelState,
    dataset: &StratifiedDataset,
    config: &FitConfig,
    iteration: usize,
    observer: &mut dyn FitObserver,
) -> Result<()> {
    let floor = config.clip_floor;
    let n = dataset.ndim();
    for sweep in 0..config.strata_sweeps {
        for mode in 1..n {
            observer.on_phase(iteration, Phase::Strata { sweep, mode });
            update_strata_mode_all(model, dataset, mode, floor)?;
        }
    }
    observer.on_phase(iteration, Phase::Codings);
    update_codings_all(model, dataset, floor)?;
    let regularize = config.reg_strength > 0.0;
    for mode in 1..n {
        observer.on_phase(iteration, Phase::Topics { mode, regularized: regularize });
        if regularize {
            let lambda = if config.is_regularized(mode) {
                config.reg_strength
            } else {
                0.0
            };
            update_topics_mode_regularized(model, dataset, mode, lambda, floor)?;
            observer.on_phase(iteration, Phase::Normalize { mode });
            normalize_topics_mode(model, mode, config.normalization, floor)?;
        } else {
            update_topics_mode(model, dataset, mode, floor)?;
        }
    }
    Ok(())
}

/// Final objective divided by `Σᵢ ‖A(i)‖²_F`.
pub fn relative_loss(result: &FitResult, dataset: &StratifiedDataset) -> Result<f64> {
    let norm = dataset.sq_norm();
    if norm == 0.0 {
        return Err(Error::invalid("relative loss is undefined for an all-zero dataset"));
    }
    let last = result
        .trace
        .last_objective()
        .ok_or_else(|| Error::invalid("empty trace"))?;
    Ok(last / norm)
}

/// True once the relative improvement over the last `patience` iterations
/// falls below `rel_tol`.
pub fn early_stop_check(trace: &LossTrace, rel_tol: f64, patience: usize) -> bool {
    let obj = trace.records();
    if patience == 0 || obj.len() <= patience {
        return false;
    }
    let last = obj[obj.len() - 1].objective;
    let before = obj[obj.len() - 1 - patience].objective;
    let improvement = if before > 0.0 {
        (before - last) / before
    } else {
        0.0
    };
    improvement < rel_tol
}
