//! Set-level image metrics (FID, KID, HWD), Otsu binarization and the
//! feature-extractor interface.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::nn::{Graph, ParamSet, Shape};
use crate::rng;

const FID_JITTER: f64 = 1e-6;
const OTSU_BINS: usize = 256;

/// Otsu threshold over 256 bins; ink (1.0) is whichever side of the
/// threshold holds fewer pixels, ties going to the brighter side. A
/// constant image comes back as all background.
pub fn binarize(image: &GrayImage) -> Result<GrayImage> {
    if image.is_empty() {
        return Err(Error::EmptyImage);
    }
    let bin = |v: f32| ((v.clamp(0.0, 1.0) * (OTSU_BINS - 1) as f32) + 0.5) as usize;
    let mut hist = [0u64; OTSU_BINS];
    for &v in image.data() {
        hist[bin(v)] += 1;
    }
    let total = image.data().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (None, 0.0);
    for (t, &c) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best = Some(t);
        }
    }
    let Some(t) = best else {
        return Ok(GrayImage::new(image.width(), image.height()));
    };
    let high = image.data().iter().filter(|&&v| bin(v) > t).count();
    let ink_high = 2 * high <= image.data().len();
    Ok(image.map(|v| if (bin(v) > t) == ink_high { 1.0 } else { 0.0 }))
}

fn check_sets(a: &[Vec<f64>], b: &[Vec<f64>], min: usize) -> Result<usize> {
    for set in [a, b] {
        if set.len() < min {
            return Err(Error::TooFewSamples {
                needed: min,
                got: set.len(),
            });
        }
    }
    let d = a[0].len();
    for v in a.iter().chain(b) {
        if v.len() != d {
            return Err(Error::DimensionMismatch(d, v.len()));
        }
    }
    Ok(d)
}

fn moments(x: &[Vec<f64>], d: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = x.len() as f64;
    let mut mu = vec![0.0; d];
    for v in x {
        for (m, &e) in mu.iter_mut().zip(v) {
            *m += e;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::zeros(d, d);
    for v in x {
        for i in 0..d {
            let di = v[i] - mu[i];
            for j in i..d {
                cov[(i, j)] += di * (v[j] - mu[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let c = cov[(i, j)] / (n - 1.0);
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    (mu, cov)
}

fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let s = e.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    &e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose()
}

/// `Tr((Σa Σb)^½)` through the symmetric form `Σa^½ Σb Σa^½`.
fn trace_sqrt_product(sa: &DMatrix<f64>, sb: &DMatrix<f64>) -> f64 {
    let r = sqrtm_psd(sa);
    let mut m = &r * sb * &r;
    m = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(m).eigenvalues.iter().map(|&l| libm::sqrt(l.max(0.0))).sum()
}

/// Fréchet distance between Gaussian fits (unbiased covariances).
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let d = check_sets(a, b, 2)?;
    let (mu_a, sa) = moments(a, d);
    let (mu_b, sb) = moments(b, d);
    let mean_term: f64 = mu_a.iter().zip(&mu_b).map(|(x, y)| (x - y) * (x - y)).sum();
    let mut tr = trace_sqrt_product(&sa, &sb);
    let (mut sa, mut sb) = (sa, sb);
    if !tr.is_finite() {
        for i in 0..d {
            sa[(i, i)] += FID_JITTER;
            sb[(i, i)] += FID_JITTER;
        }
        tr = trace_sqrt_product(&sa, &sb);
    }
    Ok(mean_term + sa.trace() + sb.trace() - 2.0 * tr)
}

fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let k = dot / x.len() as f64 + 1.0;
    k * k * k
}

/// Unbiased squared MMD with the cubic polynomial kernel `(xᵀy/d + 1)³`.
pub fn kid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_sets(a, b, 2)?;
    let within = |s: &[Vec<f64>]| {
        let mut t = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i != j {
                    t += poly_kernel(&s[i], &s[j]);
                }
            }
        }
        t / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for x in a {
        for y in b {
            cross += poly_kernel(x, y);
        }
    }
    Ok(within(a) + within(b) - 2.0 * cross / (a.len() * b.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KidEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub resamples: usize,
    pub subset_size: usize,
}

/// KID averaged over random subset pairs. With equally sized sets each
/// draw takes disjoint index ranges of one shared permutation, so
/// comparing a set with itself never pairs an image with its own copy.
pub fn kid_resampled(a: &[Vec<f64>], b: &[Vec<f64>], resamples: usize, subset_size: Option<usize>, seed: u64) -> Result<KidEstimate> {
    check_sets(a, b, 4)?;
    if resamples < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: resamples,
        });
    }
    let paired = a.len() == b.len();
    let cap = a.len().min(b.len()) / 2;
    let s = subset_size.unwrap_or(cap).min(cap).max(2);
    let mut values = Vec::with_capacity(resamples);
    for r in 0..resamples {
        let mut g = rng::rng(rng::derive_index(seed, r as u64));
        let (ia, ib): (Vec<usize>, Vec<usize>) = if paired {
            let mut p: Vec<usize> = (0..a.len()).collect();
            p.shuffle(&mut g);
            (p[..s].to_vec(), p[s..2 * s].to_vec())
        } else {
            let mut pa: Vec<usize> = (0..a.len()).collect();
            let mut pb: Vec<usize> = (0..b.len()).collect();
            pa.shuffle(&mut g);
            pb.shuffle(&mut g);
            (pa[..s].to_vec(), pb[..s].to_vec())
        };
        let sa: Vec<Vec<f64>> = ia.iter().map(|&i| a[i].clone()).collect();
        let sb: Vec<Vec<f64>> = ib.iter().map(|&i| b[i].clone()).collect();
        values.push(kid(&sa, &sb)?);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(KidEstimate {
        mean,
        std_err: libm::sqrt(var / n),
        resamples,
        subset_size: s,
    })
}

/// Distance between the means of the L2-normalized style vectors.
pub fn hwd(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let d = check_sets(a, b, 1)?;
    let mean_dir = |set: &[Vec<f64>]| -> Result<Vec<f64>> {
        let mut m = vec![0.0; d];
        for v in set {
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::ZeroVector);
            }
            for (acc, x) in m.iter_mut().zip(v) {
                *acc += x / norm;
            }
        }
        Ok(m.into_iter().map(|x| x / set.len() as f64).collect())
    };
    let (ma, mb) = (mean_dir(a)?, mean_dir(b)?);
    Ok(libm::sqrt(ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum()))
}

/// Maps an image to a fixed-length feature vector.
pub trait FeatureExtractor {
    /// Stable name recorded in reports.
    fn identity(&self) -> String;
    /// `(width, height)` every image is fitted to before extraction.
    fn input_size(&self) -> (usize, usize);
    fn dim(&self) -> usize;
    /// Features of an image already at [`input_size`](Self::input_size).
    fn extract_fitted(&self, image: &GrayImage) -> Result<Vec<f64>>;

    fn extract(&self, image: &GrayImage) -> Result<Vec<f64>> {
        let (w, h) = self.input_size();
        self.extract_fitted(&fit_to_input(image, w, h))
    }
}

/// Height-normalizes with an aspect-preserving resize, then center crops or
/// zero pads the width.
pub fn fit_to_input(image: &GrayImage, width: usize, height: usize) -> GrayImage {
    if image.dims() == (width, height) {
        return image.clone();
    }
    let scaled_w = ((image.width() as f64 * height as f64 / image.height().max(1) as f64) + 0.5) as usize;
    let scaled = image.resize(scaled_w.max(1), height);
    let mut out = GrayImage::new(width, height);
    let off = (width as isize - scaled.width() as isize) / 2;
    out.blend_from(&scaled, off, 0, |_, s| s);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StubKind {
    /// Pooled intensities.
    Content,
    /// Pooled gradient magnitudes, a crude stroke-texture descriptor.
    Style,
}

/// Seeded random projection of a coarse pooled view of the image.
#[derive(Debug, Clone)]
pub struct StubExtractor {
    kind: StubKind,
    seed: u64,
    input: (usize, usize),
    grid: (usize, usize),
    proj: Vec<f64>,
    dim: usize,
}

impl StubExtractor {
    pub const DEFAULT_DIM: usize = 32;

    pub fn new(kind: StubKind, seed: u64) -> Self {
        Self::with_shape(kind, seed, (128, 32), (32, 8), Self::DEFAULT_DIM)
    }

    pub fn with_shape(kind: StubKind, seed: u64, input: (usize, usize), grid: (usize, usize), dim: usize) -> Self {
        let inputs = grid.0 * grid.1 + 1;
        let mut r = rng::rng(rng::derive(seed, if kind == StubKind::Style { "stub.style" } else { "stub.content" }));
        let scale = 1.0 / libm::sqrt(inputs as f64);
        let proj = (0..dim * inputs)
            .map(|_| {
                let z: f64 = r.sample(StandardNormal);
                z * scale
            })
            .collect();
        StubExtractor {
            kind,
            seed,
            input,
            grid,
            proj,
            dim,
        }
    }
}

impl FeatureExtractor for StubExtractor {
    fn identity(&self) -> String {
        let k = match self.kind {
            StubKind::Content => "content",
            StubKind::Style => "style",
        };
        format!("stub-{k}-{:x}-{}x{}-d{}", self.seed, self.input.0, self.input.1, self.dim)
    }

    fn input_size(&self) -> (usize, usize) {
        self.input
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn extract_fitted(&self, image: &GrayImage) -> Result<Vec<f64>> {
        if image.dims() != self.input {
            return Err(Error::shape(format!("{}x{}", self.input.0, self.input.1), format!("{}x{}", image.width(), image.height())));
        }
        let view = match self.kind {
            StubKind::Content => image.clone(),
            StubKind::Style => GrayImage::from_fn(image.width(), image.height(), |x, y| {
                let (xi, yi) = (x as isize, y as isize);
                let gx = image.get_or_zero(xi + 1, yi) - image.get_or_zero(xi - 1, yi);
                let gy = image.get_or_zero(xi, yi + 1) - image.get_or_zero(xi, yi - 1);
                libm::sqrtf(gx * gx + gy * gy)
            }),
        };
        let mut pooled: Vec<f64> = view.resize(self.grid.0, self.grid.1).data().iter().map(|&v| v as f64).collect();
        pooled.push(1.0);
        Ok(self
            .proj
            .chunks(pooled.len())
            .map(|row| row.iter().zip(&pooled).map(|(w, x)| w * x).sum())
            .collect())
    }
}

/// Convolutional feature network with externally supplied weights: each
/// layer is a 3×3 stride-2 convolution followed by a rectifier, and the
/// output is the global average of the last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFeatureNet {
    pub name: String,
    pub input: (usize, usize),
    pub params: ParamSet,
}

impl ConvFeatureNet {
    /// Validates that tensors alternate `(cout, cin, 3, 3)` weights and
    /// `(1, cout, 1, 1)` biases with chained channel counts starting at 1.
    pub fn new(name: String, input: (usize, usize), params: ParamSet) -> Result<Self> {
        if params.tensors.is_empty() || params.tensors.len() % 2 != 0 {
            return Err(Error::InvalidConfig("feature net needs weight/bias pairs".into()));
        }
        let mut cin = 1;
        for pair in params.tensors.chunks(2) {
            let (w, b) = (pair[0].shape, pair[1].shape);
            if w.c != cin || w.h != 3 || w.w != 3 || b != Shape::new(1, w.n, 1, 1) {
                return Err(Error::shape(format!("conv {cin}->? 3x3"), format!("{w} / {b}")));
            }
            cin = w.n;
        }
        Ok(ConvFeatureNet { name, input, params })
    }
}

impl FeatureExtractor for ConvFeatureNet {
    fn identity(&self) -> String {
        self.name.clone()
    }

    fn input_size(&self) -> (usize, usize) {
        self.input
    }

    fn dim(&self) -> usize {
        self.params.tensors[self.params.tensors.len() - 2].shape.n
    }

    fn extract_fitted(&self, image: &GrayImage) -> Result<Vec<f64>> {
        if image.dims() != self.input {
            return Err(Error::shape(format!("{}x{}", self.input.0, self.input.1), format!("{}x{}", image.width(), image.height())));
        }
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let mut h = g.input(Shape::new(1, 1, self.input.1, self.input.0), image.data().to_vec());
        for l in 0..self.params.tensors.len() / 2 {
            h = g.conv2d(h, b.get(2 * l), b.get(2 * l + 1), 2, 1);
            h = g.relu(h);
        }
        let out = g.global_avg_pool(h);
        Ok(g.value(out).iter().map(|&v| v as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KidConfig {
    pub resamples: usize,
    /// Subset size per draw; defaults to half the smaller set.
    pub subset_size: Option<usize>,
    pub seed: u64,
}

impl Default for KidConfig {
    fn default() -> Self {
        KidConfig {
            resamples: 50,
            subset_size: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fid: f64,
    /// Unbiased KID over the full sets.
    pub kid: f64,
    pub kid_resampled: Option<KidEstimate>,
    pub hwd: f64,
    pub candidate_count: usize,
    pub reference_count: usize,
    pub extractor: String,
    pub style_extractor: String,
    pub binarized: bool,
}

/// Features of every image, optionally binarized first.
pub fn extract_all(images: &[GrayImage], extractor: &dyn FeatureExtractor, binarize_first: bool) -> Result<Vec<Vec<f64>>> {
    images
        .iter()
        .map(|im| {
            if binarize_first {
                extractor.extract(&binarize(im)?)
            } else {
                extractor.extract(im)
            }
        })
        .collect()
}

/// All three metrics for a candidate set against a reference set.
pub fn compare_sets(
    candidate: &[GrayImage],
    reference: &[GrayImage],
    extractor: &dyn FeatureExtractor,
    style_extractor: &dyn FeatureExtractor,
    binarize_first: bool,
    kid_config: &KidConfig,
) -> Result<MetricReport> {
    let fa = extract_all(candidate, extractor, binarize_first)?;
    let fb = extract_all(reference, extractor, binarize_first)?;
    let sa = extract_all(candidate, style_extractor, binarize_first)?;
    let sb = extract_all(reference, style_extractor, binarize_first)?;
    let resampled = if fa.len() >= 4 && fb.len() >= 4 && kid_config.resamples >= 2 {
        Some(kid_resampled(&fa, &fb, kid_config.resamples, kid_config.subset_size, kid_config.seed)?)
    } else {
        None
    };
    Ok(MetricReport {
        fid: fid(&fa, &fb)?,
        kid: kid(&fa, &fb)?,
        kid_resampled: resampled,
        hwd: hwd(&sa, &sb)?,
        candidate_count: candidate.len(),
        reference_count: reference.len(),
        extractor: extractor.identity(),
        style_extractor: style_extractor.identity(),
        binarized: binarize_first,
    })
}
