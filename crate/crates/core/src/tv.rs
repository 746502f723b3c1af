//! Total-variation regularization of topic factors.
//!
//! The penalty on a factor vector is `Σₖ |h[k+1] − h[k]|`. Its subgradient is
//! split into positive and negative parts, which join the denominator and the
//! numerator of the topic update respectively. After a regularized update each
//! topic vector is rescaled to unit norm, with the scale pushed into the
//! codings so reconstructions are unchanged.

use crate::error::{Error, Result};
use crate::model::{ModelState, StratifiedDataset};
use crate::updates::{clipped_ratio, topic_terms};

/// Norm used when normalizing topic vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    L2,
    L1,
}

impl Normalization {
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            Normalization::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Normalization::L1 => v.iter().map(|x| x.abs()).sum(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Normalization::L2 => "l2",
            Normalization::L1 => "l1",
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Normalization::L2),
            "l1" => Ok(Normalization::L1),
            other => Err(Error::invalid(format!(
                "unknown normalization {other:?} (expected l2 or l1)"
            ))),
        }
    }
}

/// Entrywise positive and negative parts of a subgradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TvSplit {
    pub positive_part: Vec<f64>,
    pub negative_part: Vec<f64>,
}

pub fn tv_seminorm(h: &[f64]) -> Result<f64> {
    if h.is_empty() {
        return Err(Error::invalid("TV of an empty vector"));
    }
    Ok(h.windows(2).map(|w| (w[1] - w[0]).abs()).sum())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Subgradient of [`tv_seminorm`] with `sign(0) = 0`.
pub fn tv_subgradient(h: &[f64]) -> Result<Vec<f64>> {
    if h.len() < 2 {
        return Err(Error::invalid("TV subgradient needs at least 2 entries"));
    }
    let d: Vec<f64> = h.windows(2).map(|w| sign(w[1] - w[0])).collect();
    let last = h.len() - 1;
    Ok((0..h.len())
        .map(|k| {
            let right = if k < last { -d[k] } else { 0.0 };
            let left = if k > 0 { d[k - 1] } else { 0.0 };
            right + left
        })
        .collect())
}

pub fn tv_split(g: &[f64]) -> TvSplit {
    TvSplit {
        positive_part: g.iter().map(|&v| v.max(0.0)).collect(),
        negative_part: g.iter().map(|&v| -v.min(0.0)).collect(),
    }
}

/// Topic update for `mode` with `lambda` times the TV split added to the
/// numerator (negative part) and denominator (positive part). A single-entry
/// mode has zero variation and gets the plain update.
pub fn update_topics_mode_regularized(
    model: &mut ModelState,
    dataset: &StratifiedDataset,
    mode: usize,
    lambda: f64,
    clip_floor: f64,
) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid("lambda must be finite and non-negative"));
    }
    model.check_compatible(dataset)?;
    let n = model.ndim();
    if mode == 0 || mode >= n {
        return Err(Error::invalid(format!(
            "mode {mode} is not a trailing mode (valid: 1..{})",
            n - 1
        )));
    }
    let terms = topic_terms(model, dataset, mode)?;
    for (l, topic) in model.topics.iter_mut().enumerate() {
        let h = &mut topic[mode - 1];
        let (num, den) = (&terms.num[l], &terms.den[l]);
        if lambda > 0.0 && h.len() > 1 {
            let split = tv_split(&tv_subgradient(h)?);
            for (k, v) in h.iter_mut().enumerate() {
                let n = num[k] + lambda * split.negative_part[k];
                let d = den[k] + lambda * split.positive_part[k];
                *v *= clipped_ratio(n, d, clip_floor);
            }
        } else {
            for (k, v) in h.iter_mut().enumerate() {
                *v *= clipped_ratio(num[k], den[k], clip_floor);
            }
        }
    }
    Ok(())
}

/// Returns `(h / ‖h‖, ‖h‖)`. A zero vector is first floored entrywise at
/// `clip_floor`.
pub fn normalize_topic(h: &[f64], norm: Normalization, clip_floor: f64) -> (Vec<f64>, f64) {
    let mut v = h.to_vec();
    let mut scale = norm.norm(&v);
    if scale == 0.0 {
        v.iter_mut().for_each(|x| *x = x.max(clip_floor));
        scale = norm.norm(&v);
    }
    v.iter_mut().for_each(|x| *x /= scale);
    (v, scale)
}

/// Normalizes every topic vector of `mode` and multiplies each scale into the
/// matching coding vectors of all strata.
pub fn normalize_topics_mode(
    model: &mut ModelState,
    mode: usize,
    norm: Normalization,
    clip_floor: f64,
) -> Result<()> {
    let n = model.ndim();
    if mode == 0 || mode >= n {
        return Err(Error::invalid(format!("mode {mode} is not a trailing mode")));
    }
    for l in 0..model.topic_rank() {
        let (unit, scale) = normalize_topic(&model.topics[l][mode - 1], norm, clip_floor);
        model.topics[l][mode - 1] = unit;
        for codings in &mut model.codings {
            codings[l].iter_mut().for_each(|w| *w *= scale);
        }
    }
    Ok(())
}

/// `Σ_l Σ_{mode} TV(h_l^mode)` over the listed trailing modes.
pub fn topic_tv_total(model: &ModelState, modes: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for topic in &model.topics {
        for &m in modes {
            let h = topic
                .get(m.wrapping_sub(1))
                .ok_or_else(|| Error::invalid(format!("mode {m} is not a trailing mode")))?;
            total += tv_seminorm(h)?;
        }
    }
    Ok(total)
}
