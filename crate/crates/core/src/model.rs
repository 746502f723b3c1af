//! The stratified model: per-stratum strata features and codings plus global
//! topics, and everything that can be computed from them without updating.
//!
//! Modes are numbered from 0. Mode 0 is the per-stratum sample mode (its length
//! varies between strata); modes 1..n are the shared trailing modes. Factor
//! vectors for trailing mode `m` are stored at position `m - 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{accumulate_outer, sq_frobenius_distance, DenseTensor};
use crate::tv::Normalization;

/// One rank-one term over the trailing modes: a vector per mode 1..n.
pub type Factors = Vec<Vec<f64>>;

/// A collection of non-negative data tensors sharing their trailing modes.
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedDataset {
    strata: Vec<DenseTensor>,
}

impl StratifiedDataset {
    pub fn new(strata: Vec<DenseTensor>) -> Result<Self> {
        let first = strata
            .first()
            .ok_or_else(|| Error::invalid("dataset needs at least one stratum"))?;
        if first.ndim() < 2 {
            return Err(Error::invalid(
                "strata need a sample mode and at least one trailing mode",
            ));
        }
        let trailing = &first.shape()[1..];
        for (i, t) in strata.iter().enumerate() {
            if t.ndim() < 2 || &t.shape()[1..] != trailing {
                return Err(Error::shape(format!(
                    "stratum {i} has shape {:?}, but stratum 0 has {:?}; trailing modes must agree",
                    t.shape(),
                    first.shape()
                )));
            }
            if let Some(pos) = t.data().iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid(format!(
                    "stratum {i} entry {pos} is {} (data must be finite and non-negative)",
                    t.data()[pos]
                )));
            }
        }
        Ok(Self { strata })
    }

    pub fn strata(&self) -> &[DenseTensor] {
        &self.strata
    }

    pub fn stratum(&self, i: usize) -> Option<&DenseTensor> {
        self.strata.get(i)
    }

    pub fn num_strata(&self) -> usize {
        self.strata.len()
    }

    /// Total number of modes, including the sample mode.
    pub fn ndim(&self) -> usize {
        self.strata[0].ndim()
    }

    pub fn trailing_dims(&self) -> &[usize] {
        &self.strata[0].shape()[1..]
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.strata.iter().map(|t| t.shape()[0]).collect()
    }

    pub fn sq_norm(&self) -> f64 {
        self.strata.iter().map(DenseTensor::sq_norm).sum()
    }

    pub fn into_strata(self) -> Vec<DenseTensor> {
        self.strata
    }
}

/// All learnable factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// `strata[i][l]` is the l-th rank-one strata feature of stratum `i`.
    pub strata: Vec<Vec<Factors>>,
    /// `codings[i][l]` weights topic `l` across the samples of stratum `i`.
    pub codings: Vec<Vec<Vec<f64>>>,
    /// `topics[l]` is the l-th global rank-one topic.
    pub topics: Vec<Factors>,
}

impl ModelState {
    /// Builds a state with every entry drawn by `sample`, each factor vector
    /// from its own substream of `seed` so that draw order never matters.
    pub fn from_sampler(
        sample_counts: &[usize],
        trailing_dims: &[usize],
        topic_rank: usize,
        strata_ranks: &[usize],
        seed: u64,
        mut sample: impl FnMut(&mut ChaCha8Rng) -> f64,
    ) -> Result<Self> {
        if topic_rank == 0 {
            return Err(Error::invalid("topic rank must be at least 1"));
        }
        if strata_ranks.len() != sample_counts.len() {
            return Err(Error::invalid(format!(
                "{} strata ranks given for {} strata",
                strata_ranks.len(),
                sample_counts.len()
            )));
        }
        if trailing_dims.is_empty() || trailing_dims.contains(&0) || sample_counts.contains(&0) {
            return Err(Error::invalid("all mode lengths must be positive"));
        }
        let mut draw = |stream: u64, len: usize| -> Vec<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            (0..len).map(|_| sample(&mut rng)).collect()
        };
        let strata = strata_ranks
            .iter()
            .enumerate()
            .map(|(i, &rank)| {
                (0..rank)
                    .map(|l| {
                        trailing_dims
                            .iter()
                            .enumerate()
                            .map(|(m, &d)| draw(stream_id(Role::Strata, i, l, m + 1), d))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let codings = sample_counts
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                (0..topic_rank)
                    .map(|l| draw(stream_id(Role::Coding, i, l, 0), d))
                    .collect()
            })
            .collect();
        let topics = (0..topic_rank)
            .map(|l| {
                trailing_dims
                    .iter()
                    .enumerate()
                    .map(|(m, &d)| draw(stream_id(Role::Topic, 0, l, m + 1), d))
                    .collect()
            })
            .collect();
        Ok(Self {
            strata,
            codings,
            topics,
        })
    }

    pub fn num_strata(&self) -> usize {
        self.codings.len()
    }

    pub fn topic_rank(&self) -> usize {
        self.topics.len()
    }

    pub fn strata_ranks(&self) -> Vec<usize> {
        self.strata.iter().map(Vec::len).collect()
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.codings
            .iter()
            .map(|c| c.first().map_or(0, Vec::len))
            .collect()
    }

    pub fn trailing_dims(&self) -> Vec<usize> {
        self.topics
            .first()
            .map(|t| t.iter().map(Vec::len).collect())
            .unwrap_or_default()
    }

    /// Total number of modes, including the sample mode.
    pub fn ndim(&self) -> usize {
        self.trailing_dims().len() + 1
    }

    pub fn param_count(&self) -> u64 {
        let dims = self.trailing_dims();
        param_count(&self.sample_counts(), &dims, self.topic_rank(), &self.strata_ranks())
            .expect("a constructed model has positive topic rank")
    }

    /// Checks internal consistency and agreement with `dataset`.
    pub fn check_compatible(&self, dataset: &StratifiedDataset) -> Result<()> {
        self.check_consistent()?;
        if self.num_strata() != dataset.num_strata() {
            return Err(Error::shape(format!(
                "model has {} strata, dataset has {}",
                self.num_strata(),
                dataset.num_strata()
            )));
        }
        if self.trailing_dims() != dataset.trailing_dims() {
            return Err(Error::shape(format!(
                "model trailing dims {:?} differ from dataset {:?}",
                self.trailing_dims(),
                dataset.trailing_dims()
            )));
        }
        for (i, (m, d)) in self
            .sample_counts()
            .iter()
            .zip(dataset.sample_counts())
            .enumerate()
        {
            if *m != d {
                return Err(Error::shape(format!(
                    "stratum {i}: model codes {m} samples, dataset has {d}"
                )));
            }
        }
        Ok(())
    }

    /// Every vector has the length its mode requires and no entry is negative.
    pub fn check_consistent(&self) -> Result<()> {
        let dims = self.trailing_dims();
        if self.topics.is_empty() || dims.is_empty() {
            return Err(Error::invalid("model has no topics"));
        }
        if self.strata.len() != self.codings.len() {
            return Err(Error::shape("strata and codings disagree on stratum count"));
        }
        let tuple_ok = |f: &Factors| {
            f.len() == dims.len() && f.iter().zip(&dims).all(|(v, &d)| v.len() == d)
        };
        if !self.topics.iter().all(tuple_ok) {
            return Err(Error::shape("topic factor lengths are inconsistent"));
        }
        for (i, (s, c)) in self.strata.iter().zip(&self.codings).enumerate() {
            if !s.iter().all(tuple_ok) {
                return Err(Error::shape(format!("stratum {i} factor lengths are inconsistent")));
            }
            if c.len() != self.topic_rank() {
                return Err(Error::shape(format!(
                    "stratum {i} has {} codings for {} topics",
                    c.len(),
                    self.topic_rank()
                )));
            }
            let n = c[0].len();
            if n == 0 || c.iter().any(|w| w.len() != n) {
                return Err(Error::shape(format!("stratum {i} codings have unequal lengths")));
            }
        }
        if self.values().any(|v| v < 0.0) {
            return Err(Error::invalid("model has negative entries"));
        }
        Ok(())
    }

    /// Every factor entry, in storage order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        let strata = self.strata.iter().flatten().flatten().flatten();
        let codings = self.codings.iter().flatten().flatten();
        let topics = self.topics.iter().flatten().flatten();
        strata.chain(codings).chain(topics).copied()
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Role {
    Strata = 0,
    Coding = 1,
    Topic = 2,
}

/// Substream id for one factor vector.
pub(crate) fn stream_id(role: Role, stratum: usize, rank: usize, mode: usize) -> u64 {
    ((role as u64) << 60) | ((stratum as u64 & 0xF_FFFF) << 40) | ((rank as u64 & 0xF_FFFF) << 20)
        | (mode as u64 & 0xF_FFFF)
}

/// Strata ranks either shared by all strata or listed per stratum.
#[derive(Debug, Clone, PartialEq)]
pub enum StrataRanks {
    Uniform(usize),
    PerStratum(Vec<usize>),
}

impl StrataRanks {
    pub fn resolve(&self, num_strata: usize) -> Result<Vec<usize>> {
        match self {
            StrataRanks::Uniform(r) => Ok(vec![*r; num_strata]),
            StrataRanks::PerStratum(v) if v.len() == num_strata => Ok(v.clone()),
            StrataRanks::PerStratum(v) => Err(Error::invalid(format!(
                "{} strata ranks given for {num_strata} strata",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub rel_tol: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub topic_rank: usize,
    pub strata_ranks: StrataRanks,
    /// Outer iterations.
    pub iterations: usize,
    /// Strata-feature sweeps per outer iteration.
    pub strata_sweeps: usize,
    /// Total-variation weight on the topic factors. Zero disables regularization.
    pub reg_strength: f64,
    /// Trailing modes whose topic factors carry the TV penalty; `None` means all.
    pub regularized_modes: Option<Vec<usize>>,
    pub normalization: Normalization,
    pub seed: u64,
    /// Numerators and denominators of every update are floored here.
    pub clip_floor: f64,
    pub early_stop: Option<EarlyStop>,
}

impl FitConfig {
    pub fn new(topic_rank: usize, strata_ranks: StrataRanks) -> Self {
        Self {
            topic_rank,
            strata_ranks,
            iterations: 100,
            strata_sweeps: 2,
            reg_strength: 0.0,
            regularized_modes: None,
            normalization: Normalization::L2,
            seed: 0,
            clip_floor: f64::EPSILON,
            early_stop: None,
        }
    }

    pub fn with_iterations(mut self, n: usize) -> Self {
        self.iterations = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_reg_strength(mut self, lambda: f64) -> Self {
        self.reg_strength = lambda;
        self
    }

    pub fn with_strata_sweeps(mut self, m: usize) -> Self {
        self.strata_sweeps = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.topic_rank == 0 {
            return Err(Error::invalid("topic_rank must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.strata_sweeps == 0 {
            return Err(Error::invalid("strata_sweeps must be at least 1"));
        }
        if !(self.reg_strength.is_finite() && self.reg_strength >= 0.0) {
            return Err(Error::invalid("lambda must be finite and non-negative"));
        }
        if !(self.clip_floor.is_finite() && self.clip_floor > 0.0) {
            return Err(Error::invalid("clip_floor must be positive"));
        }
        if self.reg_strength > 0.0 && matches!(&self.regularized_modes, Some(m) if m.is_empty()) {
            return Err(Error::invalid(
                "lambda > 0 but no regularized modes are configured",
            ));
        }
        if let Some(es) = &self.early_stop {
            if !(es.rel_tol >= 0.0) || es.patience == 0 {
                return Err(Error::invalid("early_stop needs rel_tol >= 0 and patience >= 1"));
            }
        }
        Ok(())
    }

    /// Validates against a dataset and resolves the per-stratum strata ranks.
    pub fn resolve(&self, dataset: &StratifiedDataset) -> Result<Vec<usize>> {
        self.validate()?;
        if let Some(modes) = &self.regularized_modes {
            let n = dataset.ndim();
            if let Some(bad) = modes.iter().find(|&&m| m == 0 || m >= n) {
                return Err(Error::invalid(format!(
                    "regularized mode {bad} is not a trailing mode (valid: 1..{})",
                    n - 1
                )));
            }
        }
        self.strata_ranks.resolve(dataset.num_strata())
    }

    /// Whether trailing mode `mode` carries the TV penalty.
    pub fn is_regularized(&self, mode: usize) -> bool {
        self.reg_strength > 0.0
            && self
                .regularized_modes
                .as_ref()
                .is_none_or(|modes| modes.contains(&mode))
    }
}

/// Random initialization: every entry i.i.d. uniform on [0, 1).
pub fn init_model(dataset: &StratifiedDataset, config: &FitConfig) -> Result<ModelState> {
    let ranks = config.resolve(dataset)?;
    ModelState::from_sampler(
        &dataset.sample_counts(),
        dataset.trailing_dims(),
        config.topic_rank,
        &ranks,
        config.seed,
        |rng| rng.random::<f64>(),
    )
}

/// Sum of stratum `i`'s rank-one strata features (zeros when it has none).
pub fn strata_tensor(model: &ModelState, i: usize) -> Result<DenseTensor> {
    let comps = model.strata.get(i).ok_or_else(|| {
        Error::invalid(format!("stratum {i} out of range ({} strata)", model.num_strata()))
    })?;
    let mut out = DenseTensor::zeros(&model.trailing_dims())?;
    for c in comps {
        accumulate_outer(out.data_mut(), c, 1.0);
    }
    Ok(out)
}

/// Dense trailing-mode tensor of each topic, flattened.
pub(crate) fn topic_tensors(model: &ModelState) -> Vec<Vec<f64>> {
    let size: usize = model.trailing_dims().iter().product();
    model
        .topics
        .iter()
        .map(|t| {
            let mut buf = vec![0.0; size];
            accumulate_outer(&mut buf, t, 1.0);
            buf
        })
        .collect()
}

pub(crate) fn reconstruct_with(
    model: &ModelState,
    i: usize,
    topics: &[Vec<f64>],
) -> Result<DenseTensor> {
    let strata = strata_tensor(model, i)?;
    let codings = &model.codings[i];
    let samples = codings[0].len();
    let mut shape = vec![samples];
    shape.extend(strata.shape());
    let mut out = DenseTensor::zeros(&shape)?;
    let inner = strata.len();
    for (j, slab) in out.data_mut().chunks_exact_mut(inner).enumerate() {
        slab.copy_from_slice(strata.data());
        for (w, h) in codings.iter().zip(topics) {
            let wj = w[j];
            for (o, &hv) in slab.iter_mut().zip(h) {
                *o += wj * hv;
            }
        }
    }
    Ok(out)
}

/// The model's approximation of stratum `i`:
/// `1 ⊗ V(i) + Σ_l w(i)_l ⊗ H_l`.
pub fn reconstruct(model: &ModelState, i: usize) -> Result<DenseTensor> {
    if i >= model.num_strata() {
        return Err(Error::invalid(format!(
            "stratum {i} out of range ({} strata)",
            model.num_strata()
        )));
    }
    reconstruct_with(model, i, &topic_tensors(model))
}

pub fn reconstruct_all(model: &ModelState) -> Result<Vec<DenseTensor>> {
    let topics = topic_tensors(model);
    (0..model.num_strata())
        .map(|i| reconstruct_with(model, i, &topics))
        .collect()
}

/// Per-stratum squared Frobenius residuals.
pub fn stratum_losses(model: &ModelState, dataset: &StratifiedDataset) -> Result<Vec<f64>> {
    model.check_compatible(dataset)?;
    let topics = topic_tensors(model);
    dataset
        .strata()
        .iter()
        .enumerate()
        .map(|(i, a)| sq_frobenius_distance(a, &reconstruct_with(model, i, &topics)?))
        .collect()
}

/// `Σᵢ ‖A(i) − B(i)‖²_F`.
pub fn objective(model: &ModelState, dataset: &StratifiedDataset) -> Result<f64> {
    Ok(stratum_losses(model, dataset)?.iter().sum())
}

/// Number of learnable scalars: codings, strata features and topics.
pub fn param_count(
    sample_counts: &[usize],
    trailing_dims: &[usize],
    topic_rank: usize,
    strata_ranks: &[usize],
) -> Result<u64> {
    if topic_rank == 0 {
        return Err(Error::invalid("topic rank must be at least 1"));
    }
    if strata_ranks.len() != sample_counts.len() {
        return Err(Error::invalid("one strata rank per stratum is required"));
    }
    let r = topic_rank as u64;
    let trailing: u64 = trailing_dims.iter().map(|&d| d as u64).sum();
    let codings: u64 = sample_counts.iter().map(|&d| r * d as u64).sum();
    let strata: u64 = strata_ranks.iter().map(|&rp| rp as u64 * trailing).sum();
    Ok(codings + strata + r * trailing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::outer_product;

    fn dataset(shapes: &[&[usize]]) -> StratifiedDataset {
        StratifiedDataset::new(
            shapes
                .iter()
                .map(|s| DenseTensor::filled(s, 1.0).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(StratifiedDataset::new(vec![]).is_err());
        let a = DenseTensor::zeros(&[2, 3, 4]).unwrap();
        let b = DenseTensor::zeros(&[5, 3, 3]).unwrap();
        let err = StratifiedDataset::new(vec![a.clone(), b]).unwrap_err();
        assert!(err.to_string().contains("stratum 1"));
        let neg = DenseTensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        assert!(StratifiedDataset::new(vec![neg]).is_err());
        let vec1 = DenseTensor::zeros(&[4]).unwrap();
        assert!(StratifiedDataset::new(vec![vec1]).is_err());
        assert!(StratifiedDataset::new(vec![a]).is_ok());
    }

    #[test]
    fn init_is_deterministic_and_in_unit_interval() {
        let ds = dataset(&[&[3, 4, 5], &[2, 4, 5]]);
        let cfg = FitConfig::new(3, StrataRanks::PerStratum(vec![2, 0])).with_seed(42);
        let a = init_model(&ds, &cfg).unwrap();
        let b = init_model(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.values().all(|v| (0.0..=1.0).contains(&v)));
        assert!(a.strata[1].is_empty());
        assert_eq!(a.strata[0].len(), 2);
        assert_eq!(a.codings[1][2].len(), 2);
        assert_eq!(a.trailing_dims(), vec![4, 5]);
        let c = init_model(&ds, &cfg.clone().with_seed(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_substreams_do_not_depend_on_rank_layout() {
        // Topic 0's factors are the same whether one or three topics are drawn.
        let ds = dataset(&[&[3, 4, 5]]);
        let small = init_model(&ds, &FitConfig::new(1, StrataRanks::Uniform(0)).with_seed(9)).unwrap();
        let big = init_model(&ds, &FitConfig::new(3, StrataRanks::Uniform(2)).with_seed(9)).unwrap();
        assert_eq!(small.topics[0], big.topics[0]);
        assert_eq!(small.codings[0][0], big.codings[0][0]);
    }

    #[test]
    fn strata_tensor_examples() {
        let mut m = ModelState {
            strata: vec![vec![]],
            codings: vec![vec![vec![1.0]]],
            topics: vec![vec![vec![1.0, 1.0], vec![1.0]]],
        };
        assert_eq!(strata_tensor(&m, 0).unwrap().data(), &[0.0, 0.0]);
        m.strata[0].push(vec![vec![1.0, 2.0], vec![3.0]]);
        let v = strata_tensor(&m, 0).unwrap();
        assert_eq!(v.shape(), &[2, 1]);
        assert_eq!(v.data(), &[3.0, 6.0]);
        assert!(strata_tensor(&m, 1).is_err());
    }

    #[test]
    fn strata_tensor_two_ranks_is_sum_of_outer_products() {
        let ds = dataset(&[&[2, 3, 4]]);
        let m = init_model(&ds, &FitConfig::new(1, StrataRanks::Uniform(2)).with_seed(1)).unwrap();
        let v = strata_tensor(&m, 0).unwrap();
        let a = outer_product(&m.strata[0][0]).unwrap();
        let b = outer_product(&m.strata[0][1]).unwrap();
        for k in 0..v.len() {
            assert!((v.data()[k] - (a.data()[k] + b.data()[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn reconstruct_single_topic_broadcasts() {
        let m = ModelState {
            strata: vec![vec![]],
            codings: vec![vec![vec![1.0]]],
            topics: vec![vec![vec![1.0], vec![1.0]]],
        };
        let b = reconstruct(&m, 0).unwrap();
        assert_eq!(b.shape(), &[1, 1, 1]);
        assert_eq!(b.data(), &[1.0]);
        assert!(reconstruct(&m, 1).is_err());
    }

    #[test]
    fn reconstruct_strata_only_repeats_features() {
        let ds = dataset(&[&[3, 2, 2]]);
        let mut m = init_model(&ds, &FitConfig::new(2, StrataRanks::Uniform(1)).with_seed(4)).unwrap();
        for w in &mut m.codings[0] {
            w.fill(0.0);
        }
        let v = strata_tensor(&m, 0).unwrap();
        let b = reconstruct(&m, 0).unwrap();
        for j in 0..3 {
            assert_eq!(b.first_mode_slice(j).unwrap(), v);
        }
    }

    #[test]
    fn reconstruct_hand_set_matches_formula() {
        let m = ModelState {
            strata: vec![vec![vec![vec![0.5, 1.0], vec![2.0, 0.25]]]],
            codings: vec![vec![vec![1.0, 3.0]]],
            topics: vec![vec![vec![1.0, 2.0], vec![0.5, 4.0]]],
        };
        let b = reconstruct(&m, 0).unwrap();
        for j in 0..2 {
            for p in 0..2 {
                for q in 0..2 {
                    let v = m.strata[0][0][0][p] * m.strata[0][0][1][q];
                    let h = m.topics[0][0][p] * m.topics[0][1][q];
                    let expected = v + m.codings[0][0][j] * h;
                    assert_eq!(b.get(&[j, p, q]).unwrap(), expected);
                }
            }
        }
    }

    #[test]
    fn reconstruct_is_linear_in_codings() {
        let ds = dataset(&[&[3, 4, 2]]);
        let m = init_model(&ds, &FitConfig::new(2, StrataRanks::Uniform(1)).with_seed(8)).unwrap();
        let v = strata_tensor(&m, 0).unwrap();
        let base = reconstruct(&m, 0).unwrap();
        let mut doubled = m.clone();
        for w in &mut doubled.codings[0] {
            w.iter_mut().for_each(|x| *x *= 2.0);
        }
        let b2 = reconstruct(&doubled, 0).unwrap();
        for k in 0..base.len() {
            let vk = v.data()[k % v.len()];
            let topic_term = base.data()[k] - vk;
            assert!((b2.data()[k] - vk - 2.0 * topic_term).abs() < 1e-14);
        }
    }

    #[test]
    fn objective_examples() {
        let ds = dataset(&[&[2, 3, 4], &[1, 3, 4]]);
        let mut m = init_model(&ds, &FitConfig::new(1, StrataRanks::Uniform(1)).with_seed(2)).unwrap();
        m.strata.iter_mut().flatten().flatten().flatten().for_each(|x| *x = 0.0);
        m.codings.iter_mut().flatten().flatten().for_each(|x| *x = 0.0);
        assert_eq!(objective(&m, &ds).unwrap(), 36.0);

        let m = init_model(&ds, &FitConfig::new(2, StrataRanks::Uniform(1)).with_seed(3)).unwrap();
        let exact = StratifiedDataset::new(reconstruct_all(&m).unwrap()).unwrap();
        assert_eq!(objective(&m, &exact).unwrap(), 0.0);
    }

    #[test]
    fn objective_rejects_mismatched_model() {
        let ds = dataset(&[&[2, 3, 4]]);
        let other = dataset(&[&[2, 3, 5]]);
        let m = init_model(&other, &FitConfig::new(1, StrataRanks::Uniform(0))).unwrap();
        assert!(matches!(objective(&m, &ds), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn param_count_table_rows() {
        assert_eq!(param_count(&[10; 40], &[64, 64], 40, &[15; 40]).unwrap(), 97_920);
        assert_eq!(param_count(&[400], &[64, 64], 186, &[0]).unwrap(), 98_208);
        assert_eq!(param_count(&[10; 40], &[4096], 1, &[1; 40]).unwrap(), 168_336);
        assert_eq!(param_count(&[1], &[1, 1], 1, &[0]).unwrap(), 3);
        assert!(param_count(&[1], &[1, 1], 0, &[0]).is_err());
    }

    #[test]
    fn config_validation() {
        let base = FitConfig::new(2, StrataRanks::Uniform(1));
        assert!(base.validate().is_ok());
        assert!(base.clone().with_iterations(0).validate().is_err());
        assert!(base.clone().with_strata_sweeps(0).validate().is_err());
        assert!(base.clone().with_reg_strength(-1.0).validate().is_err());
        let mut c = base.clone().with_reg_strength(10.0);
        c.regularized_modes = Some(vec![]);
        assert!(c.validate().is_err());
        c.regularized_modes = Some(vec![1]);
        assert!(c.validate().is_ok());
        assert!(c.is_regularized(1) && !c.is_regularized(2));
        let ds = dataset(&[&[2, 3, 4]]);
        c.regularized_modes = Some(vec![3]);
        assert!(c.resolve(&ds).is_err());
        assert!(StrataRanks::PerStratum(vec![1, 2]).resolve(1).is_err());
    }
}
