//! Multiplicative update rules for strata features, codings and topics.
//!
//! Every rule has the same shape: for each entry, the gradient of the squared
//! residual is split into a data part (contraction against `A`) and a model
//! part (the same contraction against the reconstruction `B`), and the entry
//! is scaled by their ratio. Both parts are floored at `clip_floor` before
//! dividing so that zero data never produces 0/0.
//!
//! All entries of one factor group are updated from a single snapshot of `B`.
//! Per-stratum work runs in parallel; cross-stratum sums are always taken in
//! ascending stratum order so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{reconstruct_all, topic_tensors, reconstruct_with, ModelState, StratifiedDataset};
use crate::tensor::{contract_unchecked, DenseTensor};

#[inline]
pub(crate) fn clipped_ratio(num: f64, den: f64, floor: f64) -> f64 {
    num.max(floor) / den.max(floor)
}

fn check_trailing_mode(model: &ModelState, mode: usize) -> Result<()> {
    let n = model.ndim();
    if mode == 0 || mode >= n {
        return Err(Error::invalid(format!(
            "mode {mode} is not a trailing mode (valid: 1..{})",
            n - 1
        )));
    }
    Ok(())
}

fn check_stratum(model: &ModelState, i: usize) -> Result<()> {
    if i >= model.num_strata() {
        return Err(Error::invalid(format!(
            "stratum {i} out of range ({} strata)",
            model.num_strata()
        )));
    }
    Ok(())
}

/// Weight slots for a rank-one term `factors` (trailing modes only), leaving
/// `mode` free and mode 0 either weighted by `first` or summed.
fn slots<'a>(factors: &'a [Vec<f64>], first: Option<&'a [f64]>, mode: usize) -> Vec<Option<&'a [f64]>> {
    std::iter::once(first)
        .chain(
            factors
                .iter()
                .enumerate()
                .map(|(m, v)| (m + 1 != mode).then_some(v.as_slice())),
        )
        .collect()
}

fn contract(x: &DenseTensor, slots: &[Option<&[f64]>], mode: usize) -> Vec<f64> {
    contract_unchecked(x.data(), x.shape(), slots, mode)
}

/// New strata vectors for `mode` of stratum `i`, one per strata rank.
fn strata_mode_values(
    model: &ModelState,
    a: &DenseTensor,
    b: &DenseTensor,
    i: usize,
    mode: usize,
    floor: f64,
) -> Vec<Vec<f64>> {
    model.strata[i]
        .iter()
        .map(|comp| {
            let s = slots(comp, None, mode);
            let num = contract(a, &s, mode);
            let den = contract(b, &s, mode);
            comp[mode - 1]
                .iter()
                .zip(num.iter().zip(&den))
                .map(|(&v, (&n, &d))| v * clipped_ratio(n, d, floor))
                .collect()
        })
        .collect()
}

/// Updates `v(i)_l` for trailing mode `mode`, all ranks `l`, from one snapshot
/// of `B(i)`. A stratum with no strata features is left untouched.
pub fn update_strata_mode(
    model: &mut ModelState,
    dataset: &StratifiedDataset,
    i: usize,
    mode: usize,
    clip_floor: f64,
) -> Result<()> {
    model.check_compatible(dataset)?;
    check_stratum(model, i)?;
    check_trailing_mode(model, mode)?;
    if model.strata[i].is_empty() {
        return Ok(());
    }
    let b = reconstruct_with(model, i, &topic_tensors(model))?;
    let new = strata_mode_values(model, &dataset.strata()[i], &b, i, mode, clip_floor);
    for (comp, v) in model.strata[i].iter_mut().zip(new) {
        comp[mode - 1] = v;
    }
    Ok(())
}

/// [`update_strata_mode`] for every stratum, each from its own fresh `B(i)`.
pub fn update_strata_mode_all(
    model: &mut ModelState,
    dataset: &StratifiedDataset,
    mode: usize,
    clip_floor: f64,
) -> Result<()> {
    model.check_compatible(dataset)?;
    check_trailing_mode(model, mode)?;
    let topics = topic_tensors(model);
    let snapshot: &ModelState = model;
    let new: Vec<Vec<Vec<f64>>> = (0..snapshot.num_strata())
        .into_par_iter()
        .map(|i| {
            if snapshot.strata[i].is_empty() {
                return Ok(Vec::new());
            }
            let b = reconstruct_with(snapshot, i, &topics)?;
            Ok(strata_mode_values(snapshot, &dataset.strata()[i], &b, i, mode, clip_floor))
        })
        .collect::<Result<_>>()?;
    for (comps, vals) in model.strata.iter_mut().zip(new) {
        for (comp, v) in comps.iter_mut().zip(vals) {
            comp[mode - 1] = v;
        }
    }
    Ok(())
}

fn coding_values(
    model: &ModelState,
    a: &DenseTensor,
    b: &DenseTensor,
    i: usize,
    floor: f64,
) -> Vec<Vec<f64>> {
    model.topics
        .iter()
        .zip(&model.codings[i])
        .map(|(topic, w)| {
            let s = slots(topic, None, 0);
            let num = contract(a, &s, 0);
            let den = contract(b, &s, 0);
            w.iter()
                .zip(num.iter().zip(&den))
                .map(|(&x, (&n, &d))| x * clipped_ratio(n, d, floor))
                .collect()
        })
        .collect()
}

/// Updates every coding vector `w(i)_l` of stratum `i` from one snapshot of `B(i)`.
pub fn update_codings(
    model: &mut ModelState,
    dataset: &StratifiedDataset,
    i: usize,
    clip_floor: f64,
) -> Result<()> {
    model.check_compatible(dataset)?;
    check_stratum(model, i)?;
    let b = reconstruct_with(model, i, &topic_tensors(model))?;
    model.codings[i] = coding_values(model, &dataset.strata()[i], &b, i, clip_floor);
    Ok(())
}

/// [`update_codings`] for every stratum.
pub fn update_codings_all(
    model: &mut ModelState,
    dataset: &StratifiedDataset,
    clip_floor: f64,
) -> Result<()> {
    model.check_compatible(dataset)?;
    let topics = topic_tensors(model);
    let snapshot: &ModelState = model;
    let new: Vec<Vec<Vec<f64>>> = (0..snapshot.num_strata())
        .into_par_iter()
        .map(|i| {
            let b = reconstruct_with(snapshot, i, &topics)?;
            Ok(coding_values(snapshot, &dataset.strata()[i], &b, i, clip_floor))
        })
        .collect::<Result<_>>()?;
    model.codings = new;
    Ok(())
}

/// Data-term numerator and denominator of the topic update for `mode`,
/// summed over all strata and samples. Indexed `[rank][entry]`.
pub(crate) struct TopicTerms {
    pub num: Vec<Vec<f64>>,
    pub den: Vec<Vec<f64>>,
}

pub(crate) fn topic_terms(
    model: &ModelState,
    dataset: &StratifiedDataset,
    mode: usize,
) -> Result<TopicTerms> {
    let recon = reconstruct_all(model)?;
    let partials: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..model.num_strata())
        .into_par_iter()
        .map(|i| {
            let a = &dataset.strata()[i];
            let b = &recon[i];
            model
                .topics
                .iter()
                .zip(&model.codings[i])
                .map(|(topic, w)| {
                    let s = slots(topic, Some(w), mode);
                    (contract(a, &s, mode), contract(b, &s, mode))
                })
                .collect()
        })
        .collect();
    let d = model.trailing_dims()[mode - 1];
    let r = model.topic_rank();
    let mut num = vec![vec![0.0; d]; r];
    let mut den = vec![vec![0.0; d]; r];
    for stratum in &partials {
        for (l, (n, dn)) in stratum.iter().enumerate() {
            num[l].iter_mut().zip(n).for_each(|(acc, v)| *acc += v);
            den[l].iter_mut().zip(dn).for_each(|(acc, v)| *acc += v);
        }
    }
    Ok(TopicTerms { num, den })
}

/// Updates `h_l` for trailing mode `mode`, all ranks, accumulating the ratio's
/// numerator and denominator over every stratum before dividing.
pub fn update_topics_mode(
    model: &mut ModelState,
    dataset: &StratifiedDataset,
    mode: usize,
    clip_floor: f64,
) -> Result<()> {
    model.check_compatible(dataset)?;
    check_trailing_mode(model, mode)?;
    let terms = topic_terms(model, dataset, mode)?;
    for (l, topic) in model.topics.iter_mut().enumerate() {
        for (k, h) in topic[mode - 1].iter_mut().enumerate() {
            *h *= clipped_ratio(terms.num[l][k], terms.den[l][k], clip_floor);
        }
    }
    Ok(())
}
