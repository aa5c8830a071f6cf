//! Adversarial training loop: standard/focused scheduling, label swapping,
//! shadow-class supervision and similarity-gated checkpoints.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::SymbolSample;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::losses::{self, ClassificationObjective, LossWeights};
use crate::models::{ModelBundle, ModelConfig};
use crate::nn::{Adam, Graph, Shape};
use crate::rng::{self, Rng};
use crate::vocab::ClassVocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Standard,
    Focused,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Standard => "standard",
            Mode::Focused => "focused",
        }
    }
}

/// Standard for the first `standard_cycle` steps of every period, focused
/// for the remaining `focused_cycle`.
pub fn schedule_mode(step: u64, standard_cycle: u64, focused_cycle: u64) -> Result<Mode> {
    let period = standard_cycle
        .checked_add(focused_cycle)
        .ok_or_else(|| Error::InvalidConfig("cycle lengths overflow".into()))?;
    if period == 0 {
        return Err(Error::BothCyclesZero);
    }
    Ok(if step % period < standard_cycle {
        Mode::Standard
    } else {
        Mode::Focused
    })
}

/// Number of positions `swap_labels` exchanges: `⌊fraction·n⌋`, made even.
pub fn swap_count(n: usize, fraction: f64) -> usize {
    let k = libm::floor(fraction * n as f64) as usize;
    k.min(n) & !1
}

/// Exchanges labels pairwise between `swap_count` randomly chosen positions.
pub fn swap_labels<T: Clone>(labels: &[T], fraction: f64, rng: &mut Rng) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(alloc::format!("swap fraction {fraction} outside [0, 1]")));
    }
    let mut out = labels.to_vec();
    let k = swap_count(labels.len(), fraction);
    if k == 0 {
        return Ok(out);
    }
    let chosen = index::sample(rng, labels.len(), k).into_vec();
    for pair in chosen.chunks(2) {
        out.swap(pair[0], pair[1]);
    }
    Ok(out)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_taps(len: usize) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    let t: Vec<f64> = (0..len)
        .map(|i| libm::exp(-(i as f64 - c) * (i as f64 - c) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)))
        .collect();
    let s: f64 = t.iter().sum();
    t.into_iter().map(|x| x / s).collect()
}

/// Valid-mode separable filtering.
fn filter(img: &[f64], w: usize, h: usize, kx: &[f64], ky: &[f64]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - kx.len(), h + 1 - ky.len());
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = kx.iter().enumerate().map(|(i, k)| k * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = ky.iter().enumerate().map(|(i, k)| k * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all positions of an 11×11 Gaussian
/// window (σ = 1.5, dynamic range 1). Images smaller than the window use a
/// window truncated to the image.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape(
            alloc::format!("{}x{}", a.width(), a.height()),
            alloc::format!("{}x{}", b.width(), b.height()),
        ));
    }
    let (w, h) = a.dims();
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    let kx = gaussian_taps(SSIM_WINDOW.min(w));
    let ky = gaussian_taps(SSIM_WINDOW.min(h));
    let av: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let bv: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { av.iter().zip(&bv).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter(&av, w, h, &kx, &ky);
    let mu_b = filter(&bv, w, h, &kx, &ky);
    let aa = filter(&prod(|x, _| x * x), w, h, &kx, &ky);
    let bb = filter(&prod(|_, y| y * y), w, h, &kx, &ky);
    let ab = filter(&prod(|x, y| x * y), w, h, &kx, &ky);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok((total / mu_a.len() as f64).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointWeights {
    pub w_euclid: f64,
    pub w_cos: f64,
    pub w_ssim: f64,
}

impl Default for CheckpointWeights {
    fn default() -> Self {
        CheckpointWeights {
            w_euclid: 1.0,
            w_cos: 1.0,
            w_ssim: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointScore {
    pub euclid: f64,
    pub cosine: f64,
    pub ssim: f64,
    pub combined: f64,
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na = libm::sqrt(a.iter().map(|&x| x as f64 * x as f64).sum());
    let nb = libm::sqrt(b.iter().map(|&x| x as f64 * x as f64).sum());
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Raw similarity terms between paired input and generated images under
/// `encoder` (mean L2, mean cosine, mean SSIM); `combined` is left at 0.
pub fn similarity_terms<F>(inputs: &[GrayImage], generated: &[GrayImage], encoder: F) -> Result<CheckpointScore>
where
    F: Fn(&[&GrayImage]) -> Result<Vec<Vec<f32>>>,
{
    if inputs.len() != generated.len() {
        return Err(Error::BatchMismatch(inputs.len(), generated.len()));
    }
    if inputs.is_empty() {
        return Err(Error::BatchTooSmall { needed: 1, got: 0 });
    }
    let fa = encoder(&inputs.iter().collect::<Vec<_>>())?;
    let fb = encoder(&generated.iter().collect::<Vec<_>>())?;
    let n = inputs.len() as f64;
    let mut euclid = 0.0;
    let mut cos = 0.0;
    let mut sim = 0.0;
    for i in 0..inputs.len() {
        euclid += libm::sqrt(
            fa[i]
                .iter()
                .zip(&fb[i])
                .map(|(&x, &y)| (x as f64 - y as f64) * (x as f64 - y as f64))
                .sum(),
        );
        cos += cosine(&fa[i], &fb[i]);
        sim += ssim(&inputs[i], &generated[i])?;
    }
    Ok(CheckpointScore {
        euclid: euclid / n,
        cosine: cos / n,
        ssim: sim / n,
        combined: 0.0,
    })
}

/// `w_cos·cosine + w_ssim·ssim − w_euclid·normalized_euclid`, where the
/// Euclidean term is min-max normalized over every score seen in `state`.
pub fn checkpoint_score<F>(
    inputs: &[GrayImage],
    generated: &[GrayImage],
    encoder: F,
    weights: &CheckpointWeights,
    state: &mut crate::models::GatingState,
) -> Result<CheckpointScore>
where
    F: Fn(&[&GrayImage]) -> Result<Vec<Vec<f32>>>,
{
    let mut s = similarity_terms(inputs, generated, encoder)?;
    let ne = state.normalize_euclid(s.euclid);
    s.combined = weights.w_cos * s.cosine + weights.w_ssim * s.ssim - weights.w_euclid * ne;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_discriminator: f32,
    pub lr_generator: f32,
    pub lr_classifier: f32,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub objective: ClassificationObjective,
    pub standard_cycle: u64,
    pub focused_cycle: u64,
    pub focus_classes: Vec<String>,
    pub swap_fraction: f64,
    pub total_steps: u64,
    pub seed: u64,
    pub checkpoint_weights: CheckpointWeights,
    /// Steps between checkpoint evaluations; 0 disables gating.
    pub checkpoint_every: u64,
    /// Size of the fixed held-out style batch used for gating.
    pub eval_batch: usize,
    /// Shadow exemplars mixed into each classifier batch.
    pub shadow_per_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_discriminator: 1e-5,
            lr_generator: 1e-4,
            lr_classifier: 1e-5,
            batch_size: 16,
            weights: LossWeights::default(),
            objective: ClassificationObjective::KlDivergence,
            standard_cycle: 150,
            focused_cycle: 50,
            focus_classes: vec!["accidentalsharp".to_string(), "gclef".to_string()],
            swap_fraction: 0.25,
            total_steps: 10_000,
            seed: 0,
            checkpoint_weights: CheckpointWeights::default(),
            checkpoint_every: 100,
            eval_batch: 16,
            shadow_per_batch: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr_discriminator > 0.0 && self.lr_generator > 0.0 && self.lr_classifier > 0.0) {
            return bad("learning rates must be > 0");
        }
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall {
                needed: 2,
                got: self.batch_size,
            });
        }
        if !(0.0..=1.0).contains(&self.swap_fraction) {
            return bad("swap_fraction must lie in [0, 1]");
        }
        if self.standard_cycle == 0 && self.focused_cycle == 0 {
            return Err(Error::BothCyclesZero);
        }
        self.weights.validate()
    }
}

/// One logged training step. Adversarial terms are the logit-domain
/// binary cross-entropies; `loss_g_cls` is measured on generated images
/// against their (swapped) content labels, `loss_c` on the real batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub mode: Mode,
    pub loss_d: f64,
    pub loss_g_adv: f64,
    pub loss_g_cls: f64,
    pub loss_div: f64,
    pub loss_g_total: f64,
    pub loss_c: f64,
    pub checkpoint: Option<CheckpointScore>,
    /// Set when the checkpoint improved on the best so far and was saved.
    pub saved: bool,
}

/// Receives log records and improving checkpoints as training runs.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _bundle: &ModelBundle, _score: &CheckpointScore) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Balanced generation samples plus optional shadow-class exemplars.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub samples: &'a [SymbolSample],
    pub shadow: &'a [SymbolSample],
}

struct Prepared {
    images: Vec<GrayImage>,
    labels: Vec<usize>,
    shadow_images: Vec<GrayImage>,
    shadow_labels: Vec<usize>,
    pool: Vec<usize>,
    focus_pool: Vec<usize>,
    holdout: Vec<usize>,
}

fn prepare(config: &TrainConfig, model: &ModelConfig, data: TrainingData<'_>, vocab: &ClassVocabulary) -> Result<Prepared> {
    if data.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let canvas = (model.canvas, model.canvas);
    let mut images = Vec::with_capacity(data.samples.len());
    let mut labels = Vec::with_capacity(data.samples.len());
    for s in data.samples {
        if s.image.dims() != canvas {
            return Err(Error::shape(alloc::format!("{}x{}", canvas.0, canvas.1), alloc::format!("{}x{}", s.image.width(), s.image.height())));
        }
        labels.push(vocab.generation_index(&s.class_name)?);
        images.push(s.image.clone());
    }
    let mut shadow_images = Vec::new();
    let mut shadow_labels = Vec::new();
    for s in data.shadow {
        let i = vocab
            .index_of(&s.class_name)
            .ok_or_else(|| Error::UnknownClass(s.class_name.clone()))?;
        if s.image.dims() != canvas {
            return Err(Error::shape(alloc::format!("{}x{}", canvas.0, canvas.1), alloc::format!("{}x{}", s.image.width(), s.image.height())));
        }
        shadow_images.push(s.image.clone());
        shadow_labels.push(i);
    }

    let n = images.len();
    let eval = config.eval_batch.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(rng::derive(config.seed, "train.holdout")));
    let holdout: Vec<usize> = order[..eval].to_vec();
    // Only hold the batch out when enough data remains to train on.
    let pool: Vec<usize> = if config.checkpoint_every > 0 && n >= 4 * eval.max(config.batch_size) {
        let held: BTreeSet<usize> = holdout.iter().copied().collect();
        (0..n).filter(|i| !held.contains(i)).collect()
    } else {
        (0..n).collect()
    };
    let focus: BTreeSet<usize> = config
        .focus_classes
        .iter()
        .filter_map(|c| vocab.generation_index(c).ok())
        .collect();
    let focus_pool: Vec<usize> = pool.iter().copied().filter(|&i| focus.contains(&labels[i])).collect();
    if config.focused_cycle > 0 && focus_pool.is_empty() {
        return Err(Error::EmptyFocusSet);
    }
    Ok(Prepared {
        images,
        labels,
        shadow_images,
        shadow_labels,
        pool,
        focus_pool,
        holdout,
    })
}

fn draw(pool: &[usize], k: usize, rng: &mut Rng) -> Vec<usize> {
    if pool.len() >= k {
        index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
    } else {
        (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }
}

fn stack(images: &[&GrayImage], canvas: usize) -> (Shape, Vec<f32>) {
    let mut d = Vec::with_capacity(images.len() * canvas * canvas);
    for im in images {
        d.extend_from_slice(im.data());
    }
    (Shape::new(images.len(), 1, canvas, canvas), d)
}

fn one_hot_rows(labels: &[usize], dim: usize) -> Vec<f32> {
    let mut v = vec![0.0; labels.len() * dim];
    for (i, &l) in labels.iter().enumerate() {
        v[i * dim + l] = 1.0;
    }
    v
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn to_f32(v: &[f64], scale: f64) -> Vec<f32> {
    v.iter().map(|&x| (x * scale) as f32).collect()
}

fn finite(step: u64, component: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { step, component })
    }
}

/// Mean classification loss over rows of `logits` and its gradient.
fn batch_classification(
    logits: &[f32],
    labels: &[usize],
    classes: usize,
    objective: ClassificationObjective,
) -> Result<(f64, Vec<f64>)> {
    let n = labels.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &l) in logits.chunks(classes).zip(labels) {
        let mut target = vec![0.0; classes];
        target[l] = 1.0;
        let lg = losses::classification_loss_from_logits(&to_f64(row), &target, objective)?;
        value += lg.value;
        grad.extend(lg.grad.into_iter().map(|g| g / n));
    }
    Ok((value / n, grad))
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub log: Vec<StepRecord>,
}

/// Trains a fresh bundle for `config.total_steps` steps.
pub fn train(
    config: &TrainConfig,
    model: &ModelConfig,
    data: TrainingData<'_>,
    vocab: &ClassVocabulary,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    let bundle = ModelBundle::new(model, vocab, config.seed)?;
    resume(config, bundle, data, vocab, observer)
}

/// Continues training `bundle` until `config.total_steps` steps are done.
/// All randomness derives from `(seed, step)`, so an interrupted and resumed
/// run logs exactly what an uninterrupted one would.
pub fn resume(
    config: &TrainConfig,
    mut bundle: ModelBundle,
    data: TrainingData<'_>,
    vocab: &ClassVocabulary,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    bundle.check_vocab(vocab)?;
    if bundle.seed != config.seed {
        return Err(Error::InvalidConfig(alloc::format!(
            "seed {} does not match the checkpoint seed {}",
            config.seed,
            bundle.seed
        )));
    }
    let prep = prepare(config, &bundle.config, data, vocab)?;
    let mut log = Vec::new();
    while bundle.step < config.total_steps {
        let record = train_step(config, &mut bundle, &prep, vocab)?;
        let record = maybe_checkpoint(config, &mut bundle, &prep, record, observer)?;
        observer.on_step(&record)?;
        log.push(record);
    }
    Ok(TrainOutcome { bundle, log })
}

fn train_step(config: &TrainConfig, bundle: &mut ModelBundle, prep: &Prepared, vocab: &ClassVocabulary) -> Result<StepRecord> {
    let step = bundle.step;
    let mode = schedule_mode(step, config.standard_cycle, config.focused_cycle)?;
    let mut r = rng::rng(rng::derive_index(rng::derive(config.seed, "train.step"), step));
    let bs = config.batch_size;
    let canvas = bundle.config.canvas;
    let gen_classes = vocab.generation_count();
    let all_classes = vocab.classifier_count();
    let style_dim = bundle.config.style_dim;

    let pool = match mode {
        Mode::Standard => &prep.pool,
        Mode::Focused => &prep.focus_pool,
    };
    let batch = draw(pool, bs, &mut r);
    let styles: Vec<&GrayImage> = batch.iter().map(|&i| &prep.images[i]).collect();
    let labels: Vec<usize> = batch.iter().map(|&i| prep.labels[i]).collect();
    let content = swap_labels(&labels, config.swap_fraction, &mut r)?;
    let sd = bundle.config.noise_std;
    let noise: Vec<f32> = (0..bs * style_dim)
        .map(|_| {
            let z: f32 = r.sample(StandardNormal);
            z * sd
        })
        .collect();
    let shadow: Vec<usize> = if prep.shadow_images.is_empty() {
        Vec::new()
    } else {
        (0..config.shadow_per_batch)
            .map(|_| r.random_range(0..prep.shadow_images.len()))
            .collect()
    };
    let (style_shape, style_data) = stack(&styles, canvas);
    let content_data = one_hot_rows(&content, gen_classes);

    // Discriminator: real styles against detached generations.
    let fake = {
        let gen = &bundle.generator;
        let mut g = Graph::new();
        let gb = gen.params.bind(&mut g, false);
        let x = g.input(style_shape, style_data.clone());
        let s = gen.encode(&mut g, &gb, x);
        let eps = g.input(g.shape(s), noise.clone());
        let code = g.add(s, eps);
        let c = g.input(Shape::new(bs, gen_classes, 1, 1), content_data.clone());
        let out = gen.decode(&mut g, &gb, code, c);
        g.value(out).to_vec()
    };
    let loss_d = {
        let disc = &bundle.discriminator;
        let mut g = Graph::new();
        let db = disc.params.bind(&mut g, true);
        let mut both = style_data.clone();
        both.extend_from_slice(&fake);
        let x = g.input(Shape::new(2 * bs, 1, canvas, canvas), both);
        let l = disc.logits(&mut g, &db, x);
        let logits = to_f64(g.value(l));
        let lg = losses::discriminator_loss_from_logits(&logits[..bs], &logits[bs..])?;
        finite(step, "discriminator", lg.value)?;
        g.backward(l, &to_f32(&lg.grad, 1.0));
        let grads = disc.params.grads(&mut g, &db);
        bundle
            .opt_discriminator
            .update(&Adam::new(config.lr_discriminator), &mut bundle.discriminator.params, &grads);
        lg.value
    };

    // Generator against the updated discriminator and the classifier.
    let w = config.weights;
    let (loss_g_adv, loss_g_cls, loss_div, loss_g_total) = {
        let (gen, disc, cls) = (&bundle.generator, &bundle.discriminator, &bundle.classifier);
        let mut g = Graph::new();
        let gb = gen.params.bind(&mut g, true);
        let db = disc.params.bind(&mut g, false);
        let cb = cls.params.bind(&mut g, false);
        let x = g.input(style_shape, style_data.clone());
        let s = gen.encode(&mut g, &gb, x);
        let eps = g.input(g.shape(s), noise);
        let code = g.add(s, eps);
        let c = g.input(Shape::new(bs, gen_classes, 1, 1), content_data);
        let out = gen.decode(&mut g, &gb, code, c);
        let dl = disc.logits(&mut g, &db, out);
        let (cl, _) = cls.logits(&mut g, &cb, out, false);

        let adv = losses::generator_loss_from_logits(&to_f64(g.value(dl)))?;
        let (cls_value, cls_grad) = batch_classification(g.value(cl), &content, all_classes, config.objective)?;
        let images: Vec<Vec<f64>> = g.value(out).chunks(canvas * canvas).map(to_f64).collect();
        let codes: Vec<Vec<f64>> = g.value(code).chunks(style_dim).map(to_f64).collect();
        let div = losses::diversity_penalty(&images, &codes, &content)?;
        let total = losses::total_loss(&w, adv.value, cls_value, div.value);
        finite(step, "generator_adversarial", adv.value)?;
        finite(step, "generator_classification", cls_value)?;
        finite(step, "diversity", div.value)?;
        finite(step, "generator_total", total)?;

        let gd = to_f32(&adv.grad, w.alpha);
        let gc = to_f32(&cls_grad, w.beta);
        let gv = to_f32(&div.grad, w.gamma_div);
        g.backward_many(&[(dl, &gd), (cl, &gc), (out, &gv)]);
        let grads = gen.params.grads(&mut g, &gb);
        bundle
            .opt_generator
            .update(&Adam::new(config.lr_generator), &mut bundle.generator.params, &grads);
        (adv.value, cls_value, div.value, total)
    };

    // Classifier on real data plus shadow exemplars.
    let loss_c = {
        let mut imgs = styles.clone();
        let mut targets = labels.clone();
        for &i in &shadow {
            imgs.push(&prep.shadow_images[i]);
            targets.push(prep.shadow_labels[i]);
        }
        let (shape, data) = stack(&imgs, canvas);
        let cls = &bundle.classifier;
        let mut g = Graph::new();
        let cb = cls.params.bind(&mut g, true);
        let x = g.input(shape, data);
        let (cl, stats) = cls.logits(&mut g, &cb, x, true);
        let (value, grad) = batch_classification(g.value(cl), &targets, all_classes, config.objective)?;
        finite(step, "classifier", value)?;
        g.backward(cl, &to_f32(&grad, 1.0));
        let grads = cls.params.grads(&mut g, &cb);
        bundle
            .opt_classifier
            .update(&Adam::new(config.lr_classifier), &mut bundle.classifier.params, &grads);
        bundle.classifier.update_running_stats(&stats);
        value
    };

    bundle.step += 1;
    Ok(StepRecord {
        step,
        mode,
        loss_d,
        loss_g_adv,
        loss_g_cls,
        loss_div,
        loss_g_total,
        loss_c,
        checkpoint: None,
        saved: false,
    })
}

fn maybe_checkpoint(
    config: &TrainConfig,
    bundle: &mut ModelBundle,
    prep: &Prepared,
    mut record: StepRecord,
    observer: &mut dyn TrainObserver,
) -> Result<StepRecord> {
    if config.checkpoint_every == 0 || bundle.step % config.checkpoint_every != 0 {
        return Ok(record);
    }
    let inputs: Vec<GrayImage> = prep.holdout.iter().map(|&i| prep.images[i].clone()).collect();
    let classes: Vec<usize> = prep.holdout.iter().map(|&i| prep.labels[i]).collect();
    let seeds: Vec<u64> = (0..inputs.len() as u64)
        .map(|i| rng::derive_index(rng::derive(config.seed, "train.eval"), i))
        .collect();
    let gen = &bundle.generator;
    let generated = gen.generate_batch(&inputs.iter().collect::<Vec<_>>(), &classes, &seeds)?;
    let mut gating = bundle.gating.clone();
    let score = checkpoint_score(&inputs, &generated, |b| gen.encode_styles(b), &config.checkpoint_weights, &mut gating)?;
    finite(record.step, "checkpoint", score.combined)?;
    let improved = gating.best_combined.is_none_or(|b| score.combined > b);
    if improved {
        gating.best_combined = Some(score.combined);
    }
    bundle.gating = gating;
    if improved {
        observer.on_checkpoint(bundle, &score)?;
    }
    record.checkpoint = Some(score);
    record.saved = improved;
    Ok(record)
}
