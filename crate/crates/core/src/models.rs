//! Style-conditioned generator, residual discriminator and batch-normalized
//! symbol classifier.
//!
//! Every network is a [`ParamSet`] plus a forward function that records
//! into a [`Graph`]; inference helpers build a throwaway graph.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::nn::{AdamState, BatchStats, Bound, Graph, ParamSet, Shape, Var};
use crate::rng;
use crate::vocab::ClassVocabulary;

const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Square canvas side; must be divisible by 16.
    pub canvas: usize,
    /// Width multiplier for every network.
    pub base_channels: usize,
    pub style_dim: usize,
    /// Standard deviation of the additive noise on the style vector.
    pub noise_std: f32,
    pub leaky_slope: f32,
    pub residual_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            canvas: 64,
            base_channels: 8,
            style_dim: 128,
            noise_std: 0.1,
            leaky_slope: 0.2,
            residual_blocks: 6,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.canvas == 0 || self.canvas % 16 != 0 {
            return Err(Error::InvalidConfig(format!("canvas {} must be a positive multiple of 16", self.canvas)));
        }
        if self.base_channels == 0 || self.style_dim == 0 {
            return Err(Error::InvalidConfig("channel counts must be positive".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidConfig("noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

fn image_batch(images: &[&GrayImage], canvas: usize) -> Result<(Shape, Vec<f32>)> {
    let mut data = Vec::with_capacity(images.len() * canvas * canvas);
    for img in images {
        if img.dims() != (canvas, canvas) {
            return Err(Error::shape(
                format!("{canvas}x{canvas}"),
                format!("{}x{}", img.width(), img.height()),
            ));
        }
        data.extend_from_slice(img.data());
    }
    Ok((Shape::new(images.len(), 1, canvas, canvas), data))
}

fn split_images(values: &[f32], canvas: usize) -> Vec<GrayImage> {
    values
        .chunks(canvas * canvas)
        .map(|c| GrayImage::from_vec(canvas, canvas, c.to_vec()))
        .collect()
}

struct ConvIdx {
    w: usize,
    b: usize,
}

fn add_conv(p: &mut ParamSet, name: &str, cin: usize, cout: usize, k: usize, r: &mut rng::Rng) -> ConvIdx {
    let fan_in = cin * k * k;
    ConvIdx {
        w: p.add_weight(&format!("{name}.w"), Shape::new(cout, cin, k, k), fan_in, r),
        b: p.add_weight(&format!("{name}.b"), Shape::new(1, cout, 1, 1), fan_in, r),
    }
}

fn add_linear(p: &mut ParamSet, name: &str, inp: usize, out: usize, r: &mut rng::Rng) -> ConvIdx {
    ConvIdx {
        w: p.add_weight(&format!("{name}.w"), Shape::new(out, inp, 1, 1), inp, r),
        b: p.add_weight(&format!("{name}.b"), Shape::new(1, out, 1, 1), inp, r),
    }
}

fn conv(g: &mut Graph, b: &Bound, c: &ConvIdx, x: Var, stride: usize, pad: usize) -> Var {
    g.conv2d(x, b.get(c.w), b.get(c.b), stride, pad)
}

/// Style encoder (four stride-2 conv blocks, global average pooling) and
/// decoder (dense projection of `[style + noise, one-hot]`, four
/// upsampling conv blocks, sigmoid output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub config: ModelConfig,
    pub content_dim: usize,
    pub params: ParamSet,
}

const ENC_BLOCKS: usize = 4;
const DEC_BLOCKS: usize = 4;

impl Generator {
    pub fn new(config: &ModelConfig, content_dim: usize, seed: u64) -> Self {
        let mut r = rng::rng(seed);
        let mut p = ParamSet::new();
        let b = config.base_channels;
        let enc_ch = [1, b, 2 * b, 4 * b, config.style_dim];
        for i in 0..ENC_BLOCKS {
            add_conv(&mut p, &format!("enc{i}"), enc_ch[i], enc_ch[i + 1], 3, &mut r);
        }
        let side = config.canvas / 16;
        let c0 = 4 * b;
        add_linear(&mut p, "proj", config.style_dim + content_dim, c0 * side * side, &mut r);
        let dec_ch = [c0, 4 * b, 2 * b, b, b];
        for i in 0..DEC_BLOCKS {
            add_conv(&mut p, &format!("dec{i}"), dec_ch[i], dec_ch[i + 1], 3, &mut r);
        }
        add_conv(&mut p, "out", b, 1, 3, &mut r);
        Generator {
            config: config.clone(),
            content_dim,
            params: p,
        }
    }

    fn idx(i: usize) -> ConvIdx {
        ConvIdx { w: 2 * i, b: 2 * i + 1 }
    }

    /// Style vectors `(n, style_dim)` for an image batch `(n, 1, H, W)`.
    pub fn encode(&self, g: &mut Graph, b: &Bound, images: Var) -> Var {
        let mut h = images;
        for i in 0..ENC_BLOCKS {
            h = conv(g, b, &Self::idx(i), h, 2, 1);
            h = g.leaky_relu(h, self.config.leaky_slope);
        }
        g.global_avg_pool(h)
    }

    /// Images `(n, 1, H, W)` in `[0, 1]` from codes `(n, style_dim)` and
    /// content vectors `(n, content_dim)`.
    pub fn decode(&self, g: &mut Graph, b: &Bound, codes: Var, content: Var) -> Var {
        let n = g.shape(codes).n;
        let z = g.concat(codes, content);
        let proj = Self::idx(ENC_BLOCKS);
        let h = g.linear(z, b.get(proj.w), b.get(proj.b));
        let side = self.config.canvas / 16;
        let mut h = g.reshape(h, Shape::new(n, 4 * self.config.base_channels, side, side));
        h = g.relu(h);
        for i in 0..DEC_BLOCKS {
            h = g.upsample2(h);
            h = conv(g, b, &Self::idx(ENC_BLOCKS + 1 + i), h, 1, 1);
            h = g.relu(h);
        }
        let out = conv(g, b, &Self::idx(ENC_BLOCKS + 1 + DEC_BLOCKS), h, 1, 1);
        g.sigmoid(out)
    }

    pub fn encode_styles(&self, images: &[&GrayImage]) -> Result<Vec<Vec<f32>>> {
        let (shape, data) = image_batch(images, self.config.canvas)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let x = g.input(shape, data);
        let s = self.encode(&mut g, &b, x);
        Ok(g.value(s).chunks(self.config.style_dim).map(|c| c.to_vec()).collect())
    }

    /// Deterministic style vector of one canvas-sized image.
    pub fn encode_style(&self, image: &GrayImage) -> Result<Vec<f32>> {
        Ok(self.encode_styles(&[image])?.remove(0))
    }

    /// Gaussian noise `N(0, noise_std²)` of length `style_dim` for one seed.
    pub fn style_noise(&self, seed: u64) -> Vec<f32> {
        let mut r = rng::rng(seed);
        let sd = self.config.noise_std;
        (0..self.config.style_dim)
            .map(|_| {
                let z: f32 = r.sample(StandardNormal);
                z * sd
            })
            .collect()
    }

    /// Generates one image per `(style image, content index, noise seed)`.
    pub fn generate_batch(&self, styles: &[&GrayImage], classes: &[usize], noise_seeds: &[u64]) -> Result<Vec<GrayImage>> {
        if styles.len() != classes.len() || styles.len() != noise_seeds.len() {
            return Err(Error::BatchMismatch(styles.len(), if styles.len() != classes.len() { classes.len() } else { noise_seeds.len() }));
        }
        let n = styles.len();
        let (shape, data) = image_batch(styles, self.config.canvas)?;
        let mut content = vec![0.0f32; n * self.content_dim];
        for (i, &c) in classes.iter().enumerate() {
            if c >= self.content_dim {
                return Err(Error::shape(format!("class < {}", self.content_dim), c));
            }
            content[i * self.content_dim + c] = 1.0;
        }
        let noise: Vec<f32> = noise_seeds.iter().flat_map(|&s| self.style_noise(s)).collect();
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let x = g.input(shape, data);
        let s = self.encode(&mut g, &b, x);
        let eps = g.input(g.shape(s), noise);
        let code = g.add(s, eps);
        let c = g.input(Shape::new(n, self.content_dim, 1, 1), content);
        let out = self.decode(&mut g, &b, code, c);
        Ok(split_images(g.value(out), self.config.canvas))
    }

    /// Image for `class_name` in the style of `style_image`.
    pub fn generate(&self, vocab: &ClassVocabulary, style_image: &GrayImage, class_name: &str, noise_seed: u64) -> Result<GrayImage> {
        let class = vocab.generation_index(class_name)?;
        Ok(self.generate_batch(&[style_image], &[class], &[noise_seed])?.remove(0))
    }
}

/// Initial convolution, residual blocks with leaky rectifiers and average
/// pooling, and a single-logit head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub config: ModelConfig,
    pub params: ParamSet,
    channels: Vec<usize>,
}

impl Discriminator {
    pub fn new(config: &ModelConfig, seed: u64) -> Self {
        let mut r = rng::rng(seed);
        let mut p = ParamSet::new();
        let b = config.base_channels;
        let mut channels = vec![b];
        for i in 0..config.residual_blocks {
            channels.push((b << i.saturating_sub(1)).min(8 * b));
        }
        add_conv(&mut p, "in", 1, b, 3, &mut r);
        for i in 0..config.residual_blocks {
            let (cin, cout) = (channels[i], channels[i + 1]);
            add_conv(&mut p, &format!("res{i}.a"), cin, cout, 3, &mut r);
            add_conv(&mut p, &format!("res{i}.b"), cout, cout, 3, &mut r);
            if cin != cout {
                add_conv(&mut p, &format!("res{i}.skip"), cin, cout, 1, &mut r);
            }
        }
        add_linear(&mut p, "head", *channels.last().unwrap(), 1, &mut r);
        Discriminator {
            config: config.clone(),
            params: p,
            channels,
        }
    }

    /// Pre-sigmoid realness logits `(n, 1)`.
    pub fn logits(&self, g: &mut Graph, b: &Bound, images: Var) -> Var {
        let slope = self.config.leaky_slope;
        let mut next = 0;
        let take = |n: &mut usize| {
            let c = ConvIdx { w: *n, b: *n + 1 };
            *n += 2;
            c
        };
        let c_in = take(&mut next);
        let mut h = conv(g, b, &c_in, images, 1, 1);
        for i in 0..self.config.residual_blocks {
            let ca = take(&mut next);
            let cb = take(&mut next);
            let skip = (self.channels[i] != self.channels[i + 1]).then(|| take(&mut next));
            let mut r = g.leaky_relu(h, slope);
            r = conv(g, b, &ca, r, 1, 1);
            r = g.leaky_relu(r, slope);
            r = conv(g, b, &cb, r, 1, 1);
            let sc = match skip {
                Some(s) => conv(g, b, &s, h, 1, 0),
                None => h,
            };
            h = g.add(r, sc);
            let s = g.shape(h);
            if s.h >= 2 && s.w >= 2 {
                h = g.avg_pool2(h);
            }
        }
        h = g.leaky_relu(h, slope);
        h = g.global_avg_pool(h);
        let head = take(&mut next);
        g.linear(h, b.get(head.w), b.get(head.b))
    }

    /// Probability that each image is real, strictly inside (0, 1) for finite logits.
    pub fn discriminate(&self, images: &[&GrayImage]) -> Result<Vec<f64>> {
        let (shape, data) = image_batch(images, self.config.canvas)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let x = g.input(shape, data);
        let l = self.logits(&mut g, &b, x);
        Ok(g.value(l).iter().map(|&z| sigmoid64(z as f64)).collect())
    }
}

pub(crate) fn sigmoid64(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Three conv + batch-norm + ReLU + max-pool blocks and a linear layer over
/// generation plus shadow classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub config: ModelConfig,
    pub num_classes: usize,
    pub params: ParamSet,
}

const CLS_BLOCKS: usize = 3;

impl Classifier {
    pub fn new(config: &ModelConfig, num_classes: usize, seed: u64) -> Self {
        let mut r = rng::rng(seed);
        let mut p = ParamSet::new();
        let b = config.base_channels;
        let ch = [1, b, 2 * b, 4 * b];
        for i in 0..CLS_BLOCKS {
            add_conv(&mut p, &format!("conv{i}"), ch[i], ch[i + 1], 3, &mut r);
            p.add_const(&format!("bn{i}.gamma"), Shape::new(1, ch[i + 1], 1, 1), 1.0);
            p.add_const(&format!("bn{i}.beta"), Shape::new(1, ch[i + 1], 1, 1), 0.0);
            p.add_buffer(&format!("bn{i}.mean"), ch[i + 1], 0.0);
            p.add_buffer(&format!("bn{i}.var"), ch[i + 1], 1.0);
        }
        let side = config.canvas / 8;
        add_linear(&mut p, "fc", 4 * b * side * side, num_classes, &mut r);
        Classifier {
            config: config.clone(),
            num_classes,
            params: p,
        }
    }

    /// Logits `(n, num_classes)`. With `train` set, batch statistics are used
    /// and returned so the caller can fold them into the running estimates.
    pub fn logits(&self, g: &mut Graph, b: &Bound, images: Var, train: bool) -> (Var, Vec<BatchStats>) {
        let mut h = images;
        let mut stats = Vec::new();
        for i in 0..CLS_BLOCKS {
            let base = 4 * i;
            h = g.conv2d(h, b.get(base), b.get(base + 1), 1, 1);
            let (gamma, beta) = (b.get(base + 2), b.get(base + 3));
            h = if train {
                let (v, s) = g.batch_norm_train(h, gamma, beta, BN_EPS);
                stats.push(s);
                v
            } else {
                let mean = &self.params.buffers[2 * i].data;
                let var = &self.params.buffers[2 * i + 1].data;
                g.batch_norm_eval(h, gamma, beta, mean, var, BN_EPS)
            };
            h = g.relu(h);
            h = g.max_pool2(h);
        }
        let fc = 4 * CLS_BLOCKS;
        (g.linear(h, b.get(fc), b.get(fc + 1)), stats)
    }

    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        for (i, s) in stats.iter().enumerate() {
            for (r, &m) in self.params.buffers[2 * i].data.iter_mut().zip(&s.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            for (r, &v) in self.params.buffers[2 * i + 1].data.iter_mut().zip(&s.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        }
    }

    /// Class distributions in inference mode (running statistics).
    pub fn classify(&self, images: &[&GrayImage]) -> Result<Vec<Vec<f64>>> {
        let (shape, data) = image_batch(images, self.config.canvas)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let x = g.input(shape, data);
        let (l, _) = self.logits(&mut g, &b, x, false);
        Ok(g.value(l)
            .chunks(self.num_classes)
            .map(|z| {
                let z: Vec<f64> = z.iter().map(|&v| v as f64).collect();
                crate::losses::softmax(&z)
            })
            .collect())
    }
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub vocab_fingerprint: u64,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub classifier: Classifier,
    pub opt_generator: AdamState,
    pub opt_discriminator: AdamState,
    pub opt_classifier: AdamState,
    /// Number of completed training steps.
    pub step: u64,
    /// Root seed; every per-step random stream derives from `(seed, step)`.
    pub seed: u64,
    pub gating: GatingState,
}

/// Checkpoint-gating memory carried across resumes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GatingState {
    pub best_combined: Option<f64>,
    pub euclid_min: Option<f64>,
    pub euclid_max: Option<f64>,
}

impl GatingState {
    /// Folds a raw Euclidean distance into the run range and returns it
    /// min-max normalized to `[0, 1]` (0 while the range is degenerate).
    pub fn normalize_euclid(&mut self, e: f64) -> f64 {
        let lo = self.euclid_min.map_or(e, |m| m.min(e));
        let hi = self.euclid_max.map_or(e, |m| m.max(e));
        self.euclid_min = Some(lo);
        self.euclid_max = Some(hi);
        if hi > lo {
            (e - lo) / (hi - lo)
        } else {
            0.0
        }
    }
}

impl ModelBundle {
    pub fn new(config: &ModelConfig, vocab: &ClassVocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(config, vocab.generation_count(), rng::derive(seed, "init.generator"));
        let discriminator = Discriminator::new(config, rng::derive(seed, "init.discriminator"));
        let classifier = Classifier::new(config, vocab.classifier_count(), rng::derive(seed, "init.classifier"));
        Ok(ModelBundle {
            opt_generator: AdamState::for_params(&generator.params),
            opt_discriminator: AdamState::for_params(&discriminator.params),
            opt_classifier: AdamState::for_params(&classifier.params),
            config: config.clone(),
            vocab_fingerprint: vocab.fingerprint(),
            generator,
            discriminator,
            classifier,
            step: 0,
            seed,
            gating: GatingState::default(),
        })
    }

    pub fn check_vocab(&self, vocab: &ClassVocabulary) -> Result<()> {
        if vocab.fingerprint() != self.vocab_fingerprint {
            return Err(Error::InvalidConfig(format!(
                "vocabulary fingerprint {:016x} does not match model {:016x}",
                vocab.fingerprint(),
                self.vocab_fingerprint
            )));
        }
        Ok(())
    }
}
