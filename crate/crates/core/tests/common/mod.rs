//! Reference implementations written directly from the update formulas with
//! explicit multi-index loops. They share nothing with the library besides the
//! public model fields, and are slow on purpose.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strat_ntf::{DenseTensor, ModelState, StratifiedDataset};

pub const EPS: f64 = f64::EPSILON;

/// Every multi-index of `shape`, last index fastest.
pub fn multi_indices(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut all = vec![Vec::new()];
    for &d in shape {
        let mut next = Vec::with_capacity(all.len() * d);
        for prefix in &all {
            for k in 0..d {
                let mut idx = prefix.clone();
                idx.push(k);
                next.push(idx);
            }
        }
        all = next;
    }
    all
}

fn clip_ratio(num: f64, den: f64) -> f64 {
    num.max(EPS) / den.max(EPS)
}

/// `B(i)` at a full multi-index `(j, k_1, …)`.
pub fn b_entry(model: &ModelState, i: usize, idx: &[usize]) -> f64 {
    let mut total = 0.0;
    for comp in &model.strata[i] {
        let mut p = 1.0;
        for (m, v) in comp.iter().enumerate() {
            p *= v[idx[m + 1]];
        }
        total += p;
    }
    for (l, topic) in model.topics.iter().enumerate() {
        let mut p = model.codings[i][l][idx[0]];
        for (m, h) in topic.iter().enumerate() {
            p *= h[idx[m + 1]];
        }
        total += p;
    }
    total
}

pub fn b_tensor(model: &ModelState, i: usize, shape: &[usize]) -> Vec<(Vec<usize>, f64)> {
    multi_indices(shape)
        .into_iter()
        .map(|idx| {
            let b = b_entry(model, i, &idx);
            (idx, b)
        })
        .collect()
}

/// Σᵢ Σ (A(i) − B(i))².
pub fn objective(model: &ModelState, ds: &StratifiedDataset) -> f64 {
    let mut total = 0.0;
    for (i, a) in ds.strata().iter().enumerate() {
        for idx in multi_indices(a.shape()) {
            let d = a.get(&idx).unwrap() - b_entry(model, i, &idx);
            total += d * d;
        }
    }
    total
}

/// Strata factor update for trailing mode `tau` (1-based), every rank, from
/// one snapshot of `B(i)`.
pub fn strata_update(model: &ModelState, ds: &StratifiedDataset, i: usize, tau: usize) -> Vec<Vec<f64>> {
    let a = &ds.strata()[i];
    let b = b_tensor(model, i, a.shape());
    model.strata[i]
        .iter()
        .map(|comp| {
            let d = comp[tau - 1].len();
            let (mut num, mut den) = (vec![0.0; d], vec![0.0; d]);
            for (idx, bv) in &b {
                let mut weight = 1.0;
                for m in 1..idx.len() {
                    if m != tau {
                        weight *= comp[m - 1][idx[m]];
                    }
                }
                num[idx[tau]] += a.get(idx).unwrap() * weight;
                den[idx[tau]] += bv * weight;
            }
            (0..d).map(|t| comp[tau - 1][t] * clip_ratio(num[t], den[t])).collect()
        })
        .collect()
}

/// Coding update for every rank of stratum `i` from one snapshot of `B(i)`.
pub fn coding_update(model: &ModelState, ds: &StratifiedDataset, i: usize) -> Vec<Vec<f64>> {
    let a = &ds.strata()[i];
    let b = b_tensor(model, i, a.shape());
    model.topics
        .iter()
        .enumerate()
        .map(|(l, topic)| {
            let d = a.shape()[0];
            let (mut num, mut den) = (vec![0.0; d], vec![0.0; d]);
            for (idx, bv) in &b {
                let mut weight = 1.0;
                for m in 1..idx.len() {
                    weight *= topic[m - 1][idx[m]];
                }
                num[idx[0]] += a.get(idx).unwrap() * weight;
                den[idx[0]] += bv * weight;
            }
            (0..d).map(|j| model.codings[i][l][j] * clip_ratio(num[j], den[j])).collect()
        })
        .collect()
}

/// Data-term numerator and denominator of the topic update, `[rank][entry]`.
pub fn topic_terms(model: &ModelState, ds: &StratifiedDataset, tau: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let r = model.topics.len();
    let d = ds.trailing_dims()[tau - 1];
    let (mut num, mut den) = (vec![vec![0.0; d]; r], vec![vec![0.0; d]; r]);
    for (i, a) in ds.strata().iter().enumerate() {
        let b = b_tensor(model, i, a.shape());
        for (l, topic) in model.topics.iter().enumerate() {
            for (idx, bv) in &b {
                let mut weight = model.codings[i][l][idx[0]];
                for m in 1..idx.len() {
                    if m != tau {
                        weight *= topic[m - 1][idx[m]];
                    }
                }
                num[l][idx[tau]] += a.get(idx).unwrap() * weight;
                den[l][idx[tau]] += bv * weight;
            }
        }
    }
    (num, den)
}

pub fn topic_update(model: &ModelState, ds: &StratifiedDataset, tau: usize) -> Vec<Vec<f64>> {
    topic_update_regularized(model, ds, tau, 0.0)
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

/// Subgradient of Σ_k |h[k+1] − h[k]| with sign(0) = 0.
pub fn tv_subgradient(h: &[f64]) -> Vec<f64> {
    let n = h.len();
    (0..n)
        .map(|k| {
            let left = if k > 0 { sign(h[k] - h[k - 1]) } else { 0.0 };
            let right = if k + 1 < n { sign(h[k + 1] - h[k]) } else { 0.0 };
            left - right
        })
        .collect()
}

pub fn tv(h: &[f64]) -> f64 {
    h.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Topic update with `lambda` times the negative part of the TV subgradient in
/// the numerator and the positive part in the denominator.
pub fn topic_update_regularized(model: &ModelState, ds: &StratifiedDataset, tau: usize, lambda: f64) -> Vec<Vec<f64>> {
    let (num, den) = topic_terms(model, ds, tau);
    model.topics
        .iter()
        .enumerate()
        .map(|(l, topic)| {
            let h = &topic[tau - 1];
            let g = tv_subgradient(h);
            (0..h.len())
                .map(|t| {
                    let n = num[l][t] + lambda * (-g[t]).max(0.0);
                    let d = den[l][t] + lambda * g[t].max(0.0);
                    h[t] * clip_ratio(n, d)
                })
                .collect()
        })
        .collect()
}

/// Relative difference, treating two zeros as equal.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn max_rel_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| rel_diff(*p, *q))
        })
        .fold(0.0, f64::max)
}

/// Largest relative change between two states of identical shape.
pub fn max_model_change(a: &ModelState, b: &ModelState) -> f64 {
    a.values().zip(b.values()).map(|(x, y)| rel_diff(x, y)).fold(0.0, f64::max)
}

/// A random model paired with independent random data of matching shape.
pub struct Instance {
    pub model: ModelState,
    pub dataset: StratifiedDataset,
}

pub fn random_instance(rng: &mut ChaCha8Rng, max_trailing: &[usize], max_strata: usize, max_r: usize, max_rp: usize) -> Instance {
    let s = rng.random_range(1..=max_strata);
    let ndim = rng.random_range(1..=max_trailing.len());
    let trailing: Vec<usize> = max_trailing[..ndim].iter().map(|&d| rng.random_range(1..=d)).collect();
    let samples: Vec<usize> = (0..s).map(|_| rng.random_range(1..=3)).collect();
    let r = rng.random_range(1..=max_r);
    let rp: Vec<usize> = (0..s).map(|_| rng.random_range(0..=max_rp)).collect();
    random_instance_with(rng, &samples, &trailing, r, &rp)
}

/// Factors uniform in [0.1, 1); data entries uniform in [0, 2) so the model
/// is not at a fixed point.
pub fn random_instance_with(rng: &mut ChaCha8Rng, samples: &[usize], trailing: &[usize], r: usize, rp: &[usize]) -> Instance {
    let seed = rng.random();
    let model = ModelState::from_sampler(samples, trailing, r, rp, seed, |g| g.random_range(0.1..1.0)).unwrap();
    let strata = samples
        .iter()
        .map(|&d| {
            let mut shape = vec![d];
            shape.extend_from_slice(trailing);
            DenseTensor::from_fn(&shape, |_| rng.random_range(0.0..2.0)).unwrap()
        })
        .collect();
    Instance {
        model,
        dataset: StratifiedDataset::new(strata).unwrap(),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- Matrix formulas for the two-mode case ----------------------------------

pub type Mat = Vec<Vec<f64>>;

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|p| a[i][p] * b[p][j]).sum()).collect())
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

fn hadamard_ratio(x: &Mat, num: &Mat, den: &Mat) -> Mat {
    x.iter()
        .zip(num.iter().zip(den))
        .map(|(xr, (nr, dr))| {
            xr.iter()
                .zip(nr.iter().zip(dr))
                .map(|(v, (n, d))| v * clip_ratio(*n, *d))
                .collect()
        })
        .collect()
}

/// Stratified NMF state: `A(i) ≈ 1 v(i)ᵀ + W(i) H`.
#[derive(Debug, Clone)]
pub struct StratNmf {
    pub v: Vec<Vec<f64>>,
    pub w: Vec<Mat>,
    pub h: Mat,
}

impl StratNmf {
    /// Reads a two-mode model with one strata feature per stratum.
    pub fn from_model(model: &ModelState) -> Self {
        Self {
            v: model.strata.iter().map(|c| c[0][0].clone()).collect(),
            w: model.codings.iter().map(transpose).collect(),
            h: model.topics.iter().map(|t| t[0].clone()).collect(),
        }
    }

    pub fn b(&self, i: usize) -> Mat {
        let wh = matmul(&self.w[i], &self.h);
        wh.iter()
            .map(|row| row.iter().zip(&self.v[i]).map(|(x, v)| x + v).collect())
            .collect()
    }

    /// One outer iteration: `sweeps` strata updates, codings, topics.
    pub fn iterate(&mut self, a: &[Mat], sweeps: usize) {
        let s = a.len();
        for _ in 0..sweeps {
            let bs: Vec<Mat> = (0..s).map(|i| self.b(i)).collect();
            for i in 0..s {
                let ones = vec![vec![1.0; a[i].len()]];
                let num = matmul(&ones, &a[i]);
                let den = matmul(&ones, &bs[i]);
                self.v[i] = hadamard_ratio(&vec![self.v[i].clone()], &num, &den).remove(0);
            }
        }
        let bs: Vec<Mat> = (0..s).map(|i| self.b(i)).collect();
        let ht = transpose(&self.h);
        for i in 0..s {
            let num = matmul(&a[i], &ht);
            let den = matmul(&bs[i], &ht);
            self.w[i] = hadamard_ratio(&self.w[i], &num, &den);
        }
        let bs: Vec<Mat> = (0..s).map(|i| self.b(i)).collect();
        let (r, d) = (self.h.len(), self.h[0].len());
        let (mut num, mut den) = (vec![vec![0.0; d]; r], vec![vec![0.0; d]; r]);
        for i in 0..s {
            let wt = transpose(&self.w[i]);
            let n = matmul(&wt, &a[i]);
            let dd = matmul(&wt, &bs[i]);
            for l in 0..r {
                for k in 0..d {
                    num[l][k] += n[l][k];
                    den[l][k] += dd[l][k];
                }
            }
        }
        self.h = hadamard_ratio(&self.h, &num, &den);
    }
}

pub fn as_matrix(x: &DenseTensor) -> Mat {
    let (rows, cols) = (x.shape()[0], x.shape()[1]);
    (0..rows).map(|r| x.data()[r * cols..(r + 1) * cols].to_vec()).collect()
}

// ---- Classical NCPD multiplicative updates (Gram form) ---------------------

/// CP factors `u[m][l]` for every mode including the sample mode.
pub type Cp = Vec<Vec<Vec<f64>>>;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Updates mode `m` of a CP model by `U ← U ∘ (X₍ₘ₎ K) / (U Γ)` where `K` is
/// the Khatri–Rao product of the other factors and `Γ` the Hadamard product
/// of their Gram matrices.
pub fn ncpd_update_mode(x: &DenseTensor, u: &mut Cp, m: usize) {
    let r = u[m].len();
    let d = x.shape()[m];
    let mut mttkrp = vec![vec![0.0; d]; r];
    for idx in multi_indices(x.shape()) {
        let a = x.get(&idx).unwrap();
        for (l, row) in mttkrp.iter_mut().enumerate() {
            let mut p = a;
            for (q, f) in u.iter().enumerate() {
                if q != m {
                    p *= f[l][idx[q]];
                }
            }
            row[idx[m]] += p;
        }
    }
    let gamma: Vec<Vec<f64>> = (0..r)
        .map(|l| {
            (0..r)
                .map(|q| {
                    u.iter()
                        .enumerate()
                        .filter(|(p, _)| *p != m)
                        .map(|(_, f)| dot(&f[q], &f[l]))
                        .product()
                })
                .collect()
        })
        .collect();
    let old = u[m].clone();
    for l in 0..r {
        for t in 0..d {
            let den: f64 = (0..r).map(|q| old[q][t] * gamma[q][l]).sum();
            u[m][l][t] = old[l][t] * clip_ratio(mttkrp[l][t], den);
        }
    }
}
