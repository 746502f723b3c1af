//! Dense n-mode tensors and the contraction kernels the update rules reduce to.
//!
//! Storage is row-major: the last index varies fastest. Every contraction here
//! is a sequence of single-axis weighted sums, so a full contraction against
//! one vector per mode costs O(number of entries).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        t.data.fill(value);
        Ok(t)
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        let mut idx = vec![0usize; shape.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            advance(&mut idx, shape);
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.shape)
    }

    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return None;
            }
            off = off * d + i;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        self.offset(index).map(|o| self.data[o])
    }

    /// The (n-1)-mode slab at position `j` of the first mode.
    pub fn first_mode_slice(&self, j: usize) -> Result<DenseTensor> {
        if self.shape.len() < 2 {
            return Err(Error::invalid("first-mode slice needs at least 2 modes"));
        }
        if j >= self.shape[0] {
            return Err(Error::invalid(format!(
                "slice {j} out of range for first mode of size {}",
                self.shape[0]
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        Ok(DenseTensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[j * inner..(j + 1) * inner].to_vec(),
        })
    }

    pub fn is_non_negative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::invalid("tensor needs at least one mode"));
    }
    if let Some(m) = shape.iter().position(|&d| d == 0) {
        return Err(Error::invalid(format!("mode {m} has zero length")));
    }
    Ok(())
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for m in (0..shape.len().saturating_sub(1)).rev() {
        strides[m] = strides[m + 1] * shape[m + 1];
    }
    strides
}

/// Row-major odometer step. Wraps to all zeros after the last index.
pub(crate) fn advance(idx: &mut [usize], shape: &[usize]) {
    for m in (0..idx.len()).rev() {
        idx[m] += 1;
        if idx[m] < shape[m] {
            return;
        }
        idx[m] = 0;
    }
}

/// `⊗ₖ fₖ`: entry `(i₁,…,iₘ)` is `∏ₖ fₖ[iₖ]`.
pub fn outer_product<V: AsRef<[f64]>>(factors: &[V]) -> Result<DenseTensor> {
    let shape = factor_shape(factors)?;
    let mut out = DenseTensor::zeros(&shape)?;
    accumulate_outer(out.data_mut(), factors, 1.0);
    Ok(out)
}

/// Elementwise sum of the outer products of each component.
pub fn rank_one_sum<C, V>(components: &[C]) -> Result<DenseTensor>
where
    C: AsRef<[V]>,
    V: AsRef<[f64]>,
{
    let first = components
        .first()
        .ok_or_else(|| Error::invalid("rank_one_sum needs at least one component"))?;
    let shape = factor_shape(first.as_ref())?;
    let mut out = DenseTensor::zeros(&shape)?;
    for (c, comp) in components.iter().enumerate() {
        let s = factor_shape(comp.as_ref())?;
        if s != shape {
            return Err(Error::invalid(format!(
                "component {c} has shape {s:?}, expected {shape:?}"
            )));
        }
        accumulate_outer(out.data_mut(), comp.as_ref(), 1.0);
    }
    Ok(out)
}

fn factor_shape<V: AsRef<[f64]>>(factors: &[V]) -> Result<Vec<usize>> {
    if factors.is_empty() {
        return Err(Error::invalid("outer product needs at least one factor"));
    }
    factors
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let len = f.as_ref().len();
            if len == 0 {
                Err(Error::invalid(format!("factor {k} is empty")))
            } else {
                Ok(len)
            }
        })
        .collect()
}

/// `out += scale · ⊗ₖ fₖ`, with `out` laid out row-major for the factor lengths.
/// Shapes are the caller's responsibility.
pub(crate) fn accumulate_outer<V: AsRef<[f64]>>(out: &mut [f64], factors: &[V], scale: f64) {
    match factors {
        [] => {}
        [last] => {
            for (o, &f) in out.iter_mut().zip(last.as_ref()) {
                *o += scale * f;
            }
        }
        [head, rest @ ..] => {
            let inner = out.len() / head.as_ref().len();
            for (chunk, &h) in out.chunks_exact_mut(inner).zip(head.as_ref()) {
                accumulate_outer(chunk, rest, scale * h);
            }
        }
    }
}

/// Squared Frobenius distance `Σ (a - b)²`.
pub fn sq_frobenius_distance(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.shape != b.shape {
        return Err(Error::shape(format!(
            "cannot compare shapes {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// Weighted sum of `x` over every mode except `target_mode`.
///
/// `factors[m]` supplies the weight vector for mode `m`. The target mode must
/// have no factor (its index is the output index). When `sum_first_mode` is
/// set, mode 0 must also have no factor and is summed with unit weights.
/// Entry `k` of the result is `Σ x[…, k, …] · ∏_{m≠target} factors[m][iₘ]`.
pub fn contract_leaving_mode(
    x: &DenseTensor,
    factors: &[Option<&[f64]>],
    target_mode: usize,
    sum_first_mode: bool,
) -> Result<Vec<f64>> {
    let n = x.ndim();
    if target_mode >= n {
        return Err(Error::invalid(format!(
            "target mode {target_mode} out of range for a {n}-mode tensor"
        )));
    }
    if sum_first_mode && target_mode == 0 {
        return Err(Error::invalid("cannot sum over the target mode"));
    }
    if factors.len() != n {
        return Err(Error::invalid(format!(
            "expected {n} factor slots, got {}",
            factors.len()
        )));
    }
    for (m, f) in factors.iter().enumerate() {
        let unweighted = m == target_mode || (sum_first_mode && m == 0);
        match (f, unweighted) {
            (Some(_), true) => {
                return Err(Error::invalid(format!("mode {m} must not carry a factor")))
            }
            (None, false) => return Err(Error::invalid(format!("missing factor for mode {m}"))),
            (Some(v), false) if v.len() != x.shape[m] => {
                return Err(Error::invalid(format!(
                    "factor for mode {m} has length {}, mode size is {}",
                    v.len(),
                    x.shape[m]
                )))
            }
            _ => {}
        }
    }
    Ok(contract_unchecked(x.data(), x.shape(), factors, target_mode))
}

/// `Σ_{α} (∏ₖ factors[k][αₖ]) · x[k, α]` for each first-mode index `k`.
/// `factors` holds one vector per mode 1…n-1.
pub fn contract_leaving_first<V: AsRef<[f64]>>(x: &DenseTensor, factors: &[V]) -> Result<Vec<f64>> {
    if factors.len() + 1 != x.ndim() {
        return Err(Error::invalid(format!(
            "expected {} factors for a {}-mode tensor, got {}",
            x.ndim() - 1,
            x.ndim(),
            factors.len()
        )));
    }
    let slots: Vec<Option<&[f64]>> = std::iter::once(None)
        .chain(factors.iter().map(|f| Some(f.as_ref())))
        .collect();
    contract_leaving_mode(x, &slots, 0, false)
}

/// Contraction without validation. `None` slots other than the target are
/// summed with unit weight.
pub(crate) fn contract_unchecked(
    data: &[f64],
    shape: &[usize],
    factors: &[Option<&[f64]>],
    target_mode: usize,
) -> Vec<f64> {
    let mut cur_shape = shape.to_vec();
    let mut cur: Option<Vec<f64>> = None;
    for m in (0..shape.len()).rev() {
        if m == target_mode {
            continue;
        }
        let src = cur.as_deref().unwrap_or(data);
        let next = contract_axis(src, &cur_shape, m, factors[m]);
        cur_shape.remove(m);
        cur = Some(next);
    }
    cur.unwrap_or_else(|| data.to_vec())
}

fn contract_axis(data: &[f64], shape: &[usize], axis: usize, w: Option<&[f64]>) -> Vec<f64> {
    let outer: usize = shape[..axis].iter().product();
    let d = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * inner];
    if inner == 1 {
        for (o, dst) in out.iter_mut().enumerate() {
            let row = &data[o * d..(o + 1) * d];
            *dst = match w {
                Some(w) => row.iter().zip(w).map(|(x, w)| x * w).sum(),
                None => row.iter().sum(),
            };
        }
        return out;
    }
    for (o, dst) in out.chunks_exact_mut(inner).enumerate() {
        for k in 0..d {
            let wk = w.map_or(1.0, |w| w[k]);
            let src = &data[(o * d + k) * inner..(o * d + k + 1) * inner];
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += wk * b;
            }
        }
    }
    out
}
