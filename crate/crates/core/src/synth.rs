//! Synthetic data: planted models, salt-and-pepper corruption, block
//! watermarks, and small stroke-drawn glyph images.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{reconstruct_all, ModelState, StratifiedDataset};
use crate::tensor::{advance, DenseTensor};

const NOISE_STREAM: u64 = 3 << 60;
const GLYPH_STREAM: u64 = 4 << 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorDistribution {
    Uniform,
    /// Each entry is nonzero with probability `density`, then uniform on [0, 1).
    SparseUniform { density: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub sample_counts: Vec<usize>,
    pub trailing_dims: Vec<usize>,
    pub topic_rank: usize,
    pub strata_ranks: Vec<usize>,
    pub distribution: FactorDistribution,
    /// Additive noise is uniform on [0, noise].
    pub noise: f64,
    pub seed: u64,
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sample_counts.is_empty() {
            return Err(Error::invalid("planted spec needs at least one stratum"));
        }
        if self.trailing_dims.is_empty() {
            return Err(Error::invalid("planted spec needs at least one trailing mode"));
        }
        if let FactorDistribution::SparseUniform { density } = self.distribution {
            if !(density > 0.0 && density <= 1.0) {
                return Err(Error::invalid("density must lie in (0, 1]"));
            }
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::invalid("noise amplitude must be non-negative"));
        }
        Ok(())
    }
}

/// A dataset drawn from a random ground-truth model plus optional uniform noise.
pub fn generate_planted(spec: &PlantedSpec) -> Result<(StratifiedDataset, ModelState)> {
    spec.validate()?;
    let truth = match spec.distribution {
        FactorDistribution::Uniform => ModelState::from_sampler(
            &spec.sample_counts,
            &spec.trailing_dims,
            spec.topic_rank,
            &spec.strata_ranks,
            spec.seed,
            |rng| rng.random::<f64>(),
        )?,
        FactorDistribution::SparseUniform { density } => ModelState::from_sampler(
            &spec.sample_counts,
            &spec.trailing_dims,
            spec.topic_rank,
            &spec.strata_ranks,
            spec.seed,
            |rng| {
                if rng.random::<f64>() < density {
                    rng.random::<f64>()
                } else {
                    0.0
                }
            },
        )?,
    };
    let mut strata = reconstruct_all(&truth)?;
    if spec.noise > 0.0 {
        for (i, t) in strata.iter_mut().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(NOISE_STREAM | i as u64);
            for v in t.data_mut() {
                *v += spec.noise * rng.random::<f64>();
            }
        }
    }
    Ok((StratifiedDataset::new(strata)?, truth))
}

/// Sets each entry to 0 with probability `p`, to 1 with probability `p`, and
/// leaves it alone otherwise.
pub fn salt_and_pepper(x: &DenseTensor, p: f64, seed: u64) -> Result<DenseTensor> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::invalid(format!("salt-and-pepper probability {p} outside [0, 0.5]")));
    }
    if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("salt-and-pepper input must lie in [0, 1]"));
    }
    let mut out = x.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.data_mut() {
        let u: f64 = rng.random();
        if u < p {
            *v = 0.0;
        } else if u < 2.0 * p {
            *v = 1.0;
        }
    }
    Ok(out)
}

/// Raises every entry inside the box `region` (one range per mode) to at least `value`.
pub fn apply_block_watermark(x: &DenseTensor, region: &[Range<usize>], value: f64) -> Result<DenseTensor> {
    if region.len() != x.ndim() {
        return Err(Error::invalid(format!(
            "watermark region has {} ranges for a {}-mode tensor",
            region.len(),
            x.ndim()
        )));
    }
    for (m, (r, &d)) in region.iter().zip(x.shape()).enumerate() {
        if r.start > r.end || r.end > d {
            return Err(Error::invalid(format!(
                "watermark range {r:?} out of bounds for mode {m} of size {d}"
            )));
        }
    }
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::invalid("watermark value must lie in [0, 1]"));
    }
    let mut out = x.clone();
    if region.iter().any(|r| r.is_empty()) {
        return Ok(out);
    }
    let shape = x.shape().to_vec();
    let mut idx = vec![0; shape.len()];
    for v in out.data_mut() {
        if idx.iter().zip(region).all(|(i, r)| r.contains(i)) {
            *v = v.max(value);
        }
        advance(&mut idx, &shape);
    }
    Ok(out)
}

/// Line segments in unit coordinates `(row, col)` describing a glyph.
fn glyph_strokes(class: usize) -> Option<&'static [[f64; 4]]> {
    const ZERO: &[[f64; 4]] = &[
        [0.2, 0.3, 0.2, 0.7],
        [0.2, 0.7, 0.8, 0.7],
        [0.8, 0.7, 0.8, 0.3],
        [0.8, 0.3, 0.2, 0.3],
    ];
    const ONE: &[[f64; 4]] = &[[0.2, 0.5, 0.8, 0.5], [0.2, 0.5, 0.3, 0.4]];
    const TWO: &[[f64; 4]] = &[
        [0.2, 0.3, 0.2, 0.7],
        [0.2, 0.7, 0.45, 0.7],
        [0.45, 0.7, 0.8, 0.3],
        [0.8, 0.3, 0.8, 0.7],
    ];
    const THREE: &[[f64; 4]] = &[
        [0.2, 0.3, 0.2, 0.7],
        [0.5, 0.4, 0.5, 0.7],
        [0.8, 0.3, 0.8, 0.7],
        [0.2, 0.7, 0.8, 0.7],
    ];
    const FOUR: &[[f64; 4]] = &[
        [0.2, 0.3, 0.55, 0.3],
        [0.55, 0.3, 0.55, 0.75],
        [0.2, 0.65, 0.8, 0.65],
    ];
    const SEVEN: &[[f64; 4]] = &[[0.2, 0.3, 0.2, 0.7], [0.2, 0.7, 0.8, 0.4]];
    match class {
        0 => Some(ZERO),
        1 => Some(ONE),
        2 => Some(TWO),
        3 => Some(THREE),
        4 => Some(FOUR),
        7 => Some(SEVEN),
        _ => None,
    }
}

pub const GLYPH_CLASSES: &[usize] = &[0, 1, 2, 3, 4, 7];

fn segment_distance(p: (f64, f64), s: &[f64; 4]) -> f64 {
    let (ax, ay, bx, by) = (s[0], s[1], s[2], s[3]);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx - p.0, ay + t * dy - p.1);
    (cx * cx + cy * cy).sqrt()
}

/// A `size × size` image of a glyph, shifted by `(dr, dc)` pixels and drawn
/// with peak intensity `intensity`.
pub fn render_glyph(class: usize, size: usize, shift: (i64, i64), intensity: f64) -> Result<DenseTensor> {
    let strokes = glyph_strokes(class)
        .ok_or_else(|| Error::invalid(format!("no glyph for class {class} (have {GLYPH_CLASSES:?})")))?;
    let half_width = 0.07;
    let s = size as f64;
    DenseTensor::from_fn(&[size, size], |ix| {
        let r = (ix[0] as i64 - shift.0) as f64;
        let c = (ix[1] as i64 - shift.1) as f64;
        let p = ((r + 0.5) / s, (c + 0.5) / s);
        let d = strokes
            .iter()
            .map(|seg| segment_distance(p, seg))
            .fold(f64::INFINITY, f64::min);
        if d <= half_width {
            intensity
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Watermark {
    pub stratum: usize,
    /// One range per image mode (rows, columns).
    pub region: Vec<Range<usize>>,
    pub value: f64,
}

/// Strata of glyph images, optionally watermarked and corrupted.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphSpec {
    pub image_size: usize,
    /// Glyph classes contained in each stratum.
    pub strata_classes: Vec<Vec<usize>>,
    pub samples_per_class: usize,
    pub watermarks: Vec<Watermark>,
    pub salt_pepper: Option<f64>,
    pub seed: u64,
}

impl GlyphSpec {
    /// Two strata sharing one glyph class: classes {1, 2} with a block across
    /// the top rows, classes {2, 3} with a block across the bottom rows, and
    /// 15% salt plus 15% pepper noise.
    pub fn watermark_pair(image_size: usize, samples_per_class: usize, seed: u64) -> Self {
        let band = (image_size / 6).max(1);
        let cols = image_size / 4..image_size - image_size / 4;
        Self {
            image_size,
            strata_classes: vec![vec![1, 2], vec![2, 3]],
            samples_per_class,
            watermarks: vec![
                Watermark {
                    stratum: 0,
                    region: vec![0..band, cols.clone()],
                    value: 1.0,
                },
                Watermark {
                    stratum: 1,
                    region: vec![image_size - band..image_size, cols],
                    value: 1.0,
                },
            ],
            salt_pepper: Some(0.15),
            seed,
        }
    }
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the glyph dataset: each stratum is `samples × size × size`.
pub fn generate_glyphs(spec: &GlyphSpec) -> Result<StratifiedDataset> {
    if spec.image_size < 4 || spec.samples_per_class == 0 || spec.strata_classes.is_empty() {
        return Err(Error::invalid("glyph spec needs image_size >= 4, samples and strata"));
    }
    for w in &spec.watermarks {
        if w.stratum >= spec.strata_classes.len() {
            return Err(Error::invalid(format!("watermark targets missing stratum {}", w.stratum)));
        }
    }
    let size = spec.image_size;
    let mut strata = Vec::with_capacity(spec.strata_classes.len());
    for (i, classes) in spec.strata_classes.iter().enumerate() {
        if classes.is_empty() {
            return Err(Error::invalid(format!("stratum {i} has no glyph classes")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(GLYPH_STREAM | i as u64);
        let mut data = Vec::with_capacity(classes.len() * spec.samples_per_class * size * size);
        for &class in classes {
            for _ in 0..spec.samples_per_class {
                let shift = (rng.random_range(-1..=1), rng.random_range(-1..=1));
                let intensity = rng.random_range(0.7..=1.0);
                let img = render_glyph(class, size, shift, intensity)?;
                data.extend_from_slice(img.data());
            }
        }
        let samples = classes.len() * spec.samples_per_class;
        let mut t = DenseTensor::new(vec![samples, size, size], data)?;
        for w in spec.watermarks.iter().filter(|w| w.stratum == i) {
            let mut region = vec![0..samples];
            region.extend(w.region.iter().cloned());
            t = apply_block_watermark(&t, &region, w.value)?;
        }
        if let Some(p) = spec.salt_pepper {
            t = salt_and_pepper(&t, p, mix(spec.seed, i as u64 + 1))?;
        }
        strata.push(t);
    }
    StratifiedDataset::new(strata)
}
