//! Symbol samples: normalization, stroke rasterization, augmentation,
//! class balancing and batching.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng;
use crate::vocab::ClassVocabulary;

pub const DEFAULT_CANVAS: usize = 64;
pub const MAX_ROTATION_DEGREES: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "degrees")]
pub enum AugmentationTag {
    None,
    Rotation(f64),
    Hflip,
    Vflip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSample {
    pub image: GrayImage,
    pub class_name: String,
    pub source: String,
    pub augmentation: AugmentationTag,
}

impl SymbolSample {
    pub fn new(image: GrayImage, class_name: impl Into<String>, source: impl Into<String>) -> Self {
        SymbolSample {
            image,
            class_name: class_name.into(),
            source: source.into(),
            augmentation: AugmentationTag::None,
        }
    }
}

/// Brings an arbitrary raster onto the ink-positive `canvas × canvas` grid.
///
/// Values outside `[0, 1]` are min-max rescaled; a background-dominated
/// border decides polarity; the content is resized aspect-preserving and
/// centered with zero padding. Images already in canonical form come back
/// unchanged, which makes the function idempotent.
pub fn normalize(raw: &GrayImage, canvas: (usize, usize)) -> Result<GrayImage> {
    if raw.is_empty() {
        return Err(Error::EmptyImage);
    }
    let (lo, hi) = (raw.min(), raw.max());
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::EmptyImage);
    }
    let mut img = if lo < 0.0 || hi > 1.0 {
        if hi == lo {
            return Err(Error::EmptyImage);
        }
        let span = hi - lo;
        raw.map(|v| (v - lo) / span)
    } else {
        raw.clone()
    };
    if border_mean(&img) > 0.5 {
        img = img.invert();
    }
    if img.max() <= 0.0 {
        return Err(Error::EmptyImage);
    }
    let (cw, ch) = canvas;
    if img.dims() == canvas {
        return Ok(img);
    }
    let scale = f64::min(cw as f64 / img.width() as f64, ch as f64 / img.height() as f64);
    let nw = (libm::round(img.width() as f64 * scale) as usize).clamp(1, cw);
    let nh = (libm::round(img.height() as f64 * scale) as usize).clamp(1, ch);
    let resized = img.resize(nw, nh);
    let mut out = GrayImage::new(cw, ch);
    let ox = ((cw - nw) / 2) as isize;
    let oy = ((ch - nh) / 2) as isize;
    out.blend_from(&resized, ox, oy, |_, s| s.clamp(0.0, 1.0));
    Ok(out)
}

fn border_mean(img: &GrayImage) -> f32 {
    let (w, h) = img.dims();
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for x in 0..w {
        sum += img.get(x, 0) as f64 + img.get(x, h - 1) as f64;
        n += 2;
    }
    for y in 1..h.saturating_sub(1) {
        sum += img.get(0, y) as f64 + img.get(w - 1, y) as f64;
        n += 2;
    }
    (sum / n as f64) as f32
}

/// A polyline in source (online) coordinates.
pub type Stroke = Vec<(f32, f32)>;

/// Draws strokes fitted (aspect-preserving, centered) into the canvas.
/// A pixel is ink when its center lies within `stroke_width / 2` of a
/// segment, which gives round caps and joins.
pub fn rasterize_strokes(strokes: &[Stroke], canvas: (usize, usize), stroke_width: f32) -> Result<GrayImage> {
    let points: Vec<(f32, f32)> = strokes.iter().flatten().copied().collect();
    if points.is_empty() {
        return Err(Error::EmptyImage);
    }
    let (cw, ch) = canvas;
    let radius = stroke_width / 2.0;
    let (mut x0, mut y0, mut x1, mut y1) = (f32::MAX, f32::MAX, f32::MIN, f32::MIN);
    for &(x, y) in &points {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let margin = radius + 1.0;
    let avail_w = cw as f32 - 1.0 - 2.0 * margin;
    let avail_h = ch as f32 - 1.0 - 2.0 * margin;
    let (bw, bh) = (x1 - x0, y1 - y0);
    let scale = match (bw > 0.0, bh > 0.0) {
        (false, false) => 1.0,
        (true, false) => avail_w / bw,
        (false, true) => avail_h / bh,
        (true, true) => f32::min(avail_w / bw, avail_h / bh),
    };
    let (mx, my) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let (cx, cy) = ((cw as f32 - 1.0) / 2.0, (ch as f32 - 1.0) / 2.0);
    let map = |(x, y): (f32, f32)| ((x - mx) * scale + cx, (y - my) * scale + cy);

    let mut img = GrayImage::new(cw, ch);
    for stroke in strokes {
        let mapped: Vec<(f32, f32)> = stroke.iter().map(|&p| map(p)).collect();
        if mapped.len() == 1 {
            draw_segment(&mut img, mapped[0], mapped[0], radius);
        }
        for seg in mapped.windows(2) {
            draw_segment(&mut img, seg[0], seg[1], radius);
        }
    }
    Ok(img)
}

fn draw_segment(img: &mut GrayImage, a: (f32, f32), b: (f32, f32), radius: f32) {
    let (w, h) = img.dims();
    let xs = libm::floorf(a.0.min(b.0) - radius).max(0.0) as usize;
    let xe = (libm::ceilf(a.0.max(b.0) + radius) as isize).clamp(0, w as isize - 1) as usize;
    let ys = libm::floorf(a.1.min(b.1) - radius).max(0.0) as usize;
    let ye = (libm::ceilf(a.1.max(b.1) + radius) as isize).clamp(0, h as isize - 1) as usize;
    let r2 = radius * radius;
    for y in ys..=ye {
        for x in xs..=xe {
            if point_segment_dist2((x as f32, y as f32), a, b) <= r2 {
                img.set(x, y, 1.0);
            }
        }
    }
}

fn point_segment_dist2(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    qx * qx + qy * qy
}

pub fn augment_rotate(sample: &SymbolSample, degrees: f64, vocab: &ClassVocabulary) -> Result<SymbolSample> {
    let class = vocab
        .get(&sample.class_name)
        .ok_or_else(|| Error::UnknownClass(sample.class_name.clone()))?;
    if !class.allow_rotation {
        return Err(Error::AugmentationForbidden {
            class: sample.class_name.clone(),
            operation: "rotation",
        });
    }
    if !(degrees.abs() <= MAX_ROTATION_DEGREES) {
        return Err(Error::DegreesOutOfRange(degrees));
    }
    Ok(SymbolSample {
        image: sample.image.rotate(degrees).map(|v| v.clamp(0.0, 1.0)),
        class_name: sample.class_name.clone(),
        source: sample.source.clone(),
        augmentation: AugmentationTag::Rotation(degrees),
    })
}

pub fn augment_flip(sample: &SymbolSample, axis: FlipAxis, vocab: &ClassVocabulary) -> Result<SymbolSample> {
    let class = vocab
        .get(&sample.class_name)
        .ok_or_else(|| Error::UnknownClass(sample.class_name.clone()))?;
    let (allowed, operation, image, tag) = match axis {
        FlipAxis::Horizontal => (
            class.allow_hflip,
            "horizontal flip",
            sample.image.flip_horizontal(),
            AugmentationTag::Hflip,
        ),
        FlipAxis::Vertical => (
            class.allow_vflip,
            "vertical flip",
            sample.image.flip_vertical(),
            AugmentationTag::Vflip,
        ),
    };
    if !allowed {
        return Err(Error::AugmentationForbidden {
            class: sample.class_name.clone(),
            operation,
        });
    }
    Ok(SymbolSample {
        image,
        class_name: sample.class_name.clone(),
        source: sample.source.clone(),
        augmentation: tag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    pub threshold: usize,
    /// A class is dropped when `originals × max_multiplier < threshold`.
    pub max_multiplier: usize,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            threshold: 3000,
            max_multiplier: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub original: usize,
    pub augmented: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    BelowMultiplierLimit,
    NoPermittedAugmentation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedClass {
    pub class_name: String,
    pub original: usize,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub threshold: usize,
    pub max_multiplier: usize,
    pub counts: BTreeMap<String, ClassCount>,
    pub total: usize,
    pub retained_classes: BTreeSet<String>,
    pub dropped: Vec<DroppedClass>,
    /// Shadow-class exemplars pass through balancing untouched.
    pub shadow_counts: BTreeMap<String, usize>,
}

impl DatasetManifest {
    pub fn min_retained_count(&self) -> Option<usize> {
        self.retained_classes
            .iter()
            .filter_map(|c| self.counts.get(c))
            .map(|c| c.total)
            .min()
    }
}

/// Augments every under-threshold class up to `threshold` samples with
/// permitted rotations (uniform in ±10°) and flips of randomly chosen
/// originals, or drops it when the multiplier cap makes that impossible.
pub fn balance(
    samples: Vec<SymbolSample>,
    vocab: &ClassVocabulary,
    config: BalanceConfig,
    seed: u64,
) -> Result<(Vec<SymbolSample>, DatasetManifest)> {
    let mut groups: BTreeMap<usize, Vec<SymbolSample>> = BTreeMap::new();
    for s in samples {
        let idx = vocab
            .index_of(&s.class_name)
            .ok_or_else(|| Error::UnknownClass(s.class_name.clone()))?;
        groups.entry(idx).or_default().push(s);
    }

    let mut out = Vec::new();
    let mut manifest = DatasetManifest {
        threshold: config.threshold,
        max_multiplier: config.max_multiplier,
        counts: BTreeMap::new(),
        total: 0,
        retained_classes: BTreeSet::new(),
        dropped: Vec::new(),
        shadow_counts: BTreeMap::new(),
    };

    for (idx, originals) in groups {
        let class = &vocab.classes()[idx];
        let name = class.canonical_name.clone();
        let n = originals.len();
        if class.is_bad_shadow {
            manifest.shadow_counts.insert(name, n);
            out.extend(originals);
            continue;
        }
        if n >= config.threshold {
            manifest.counts.insert(
                name.clone(),
                ClassCount {
                    original: n,
                    augmented: 0,
                    total: n,
                },
            );
            manifest.retained_classes.insert(name);
            out.extend(originals);
            continue;
        }
        if n.saturating_mul(config.max_multiplier) < config.threshold {
            manifest.dropped.push(DroppedClass {
                class_name: name,
                original: n,
                reason: DropReason::BelowMultiplierLimit,
            });
            continue;
        }
        let mut ops: Vec<u8> = Vec::new();
        if class.allow_rotation {
            ops.push(0);
        }
        if class.allow_hflip {
            ops.push(1);
        }
        if class.allow_vflip {
            ops.push(2);
        }
        if ops.is_empty() {
            manifest.dropped.push(DroppedClass {
                class_name: name,
                original: n,
                reason: DropReason::NoPermittedAugmentation,
            });
            continue;
        }
        let mut r = rng::rng(rng::derive_index(seed, idx as u64));
        let needed = config.threshold - n;
        let mut extra = Vec::with_capacity(needed);
        for _ in 0..needed {
            let base = &originals[r.random_range(0..n)];
            let aug = match ops[r.random_range(0..ops.len())] {
                0 => {
                    let deg = r.random_range(-MAX_ROTATION_DEGREES..=MAX_ROTATION_DEGREES);
                    augment_rotate(base, deg, vocab)?
                }
                1 => augment_flip(base, FlipAxis::Horizontal, vocab)?,
                _ => augment_flip(base, FlipAxis::Vertical, vocab)?,
            };
            extra.push(aug);
        }
        manifest.counts.insert(
            name.clone(),
            ClassCount {
                original: n,
                augmented: needed,
                total: config.threshold,
            },
        );
        manifest.retained_classes.insert(name);
        out.extend(originals);
        out.extend(extra);
    }
    manifest.total = out.len();
    Ok((out, manifest))
}

/// One epoch of shuffled index batches; the last batch may be short.
pub fn make_batches(samples: &[SymbolSample], batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let all: Vec<usize> = (0..samples.len()).collect();
    shuffled_batches(all, batch_size, seed)
}

/// Like [`make_batches`], restricted to samples whose class is in `focus`.
pub fn make_focused_batches(
    samples: &[SymbolSample],
    focus: &[&str],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let chosen: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| focus.contains(&s.class_name.as_str()))
        .map(|(i, _)| i)
        .collect();
    if chosen.is_empty() {
        return Err(Error::EmptyFocusSet);
    }
    shuffled_batches(chosen, batch_size, seed)
}

fn shuffled_batches(mut indices: Vec<usize>, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".to_string()));
    }
    indices.shuffle(&mut rng::rng(seed));
    Ok(indices.chunks(batch_size).map(|c| c.to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::SymbolClass;
    use alloc::vec;

    fn vocab() -> ClassVocabulary {
        let mut rot = SymbolClass::new("eightrest");
        rot.allow_rotation = true;
        rot.allow_hflip = true;
        let fixed = SymbolClass::new("gclef");
        ClassVocabulary::from_classes(vec![rot, fixed]).unwrap()
    }

    fn glyph(size: usize) -> GrayImage {
        GrayImage::from_fn(size, size, |x, y| {
            let (dx, dy) = (x as f32 - size as f32 / 3.0, y as f32 - size as f32 / 2.0);
            if (dx * dx + dy * dy).sqrt() < size as f32 / 5.0 {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn normalize_errors_and_fixed_point() {
        assert_eq!(normalize(&GrayImage::new(10, 10), (64, 64)), Err(Error::EmptyImage));
        let g = glyph(64);
        assert_eq!(normalize(&g, (64, 64)).unwrap(), g);
    }

    #[test]
    fn normalize_rescales_and_inverts_paper_images() {
        // dark ink on white paper in 0..255
        let raw = GrayImage::from_fn(20, 20, |x, y| if (8..12).contains(&x) && y > 3 { 10.0 } else { 250.0 });
        let n = normalize(&raw, (64, 64)).unwrap();
        assert_eq!(n.dims(), (64, 64));
        assert!(n.get(0, 0) < 0.01);
        assert!(n.get(32, 40) > 0.9);
        assert!(n.min() >= 0.0 && n.max() <= 1.0);
    }

    #[test]
    fn normalize_wide_input_is_centered_band() {
        // 64 wide, 32 tall, full of ink: fits at scale 1 in a centered band
        let raw = GrayImage::filled(64, 32, 0.0);
        let mut raw = raw;
        for y in 1..31 {
            for x in 1..63 {
                raw.set(x, y, 1.0);
            }
        }
        let n = normalize(&raw, (64, 64)).unwrap();
        let bb = n.bbox_above(0.5).unwrap();
        assert_eq!((bb.y, bb.h), (17, 30));
        // 32 wide, 16 tall: scaled 2x into a 32-tall band
        let small = raw.resize(32, 16);
        let n = normalize(&small, (64, 64)).unwrap();
        let bb = n.bbox_above(0.5).unwrap();
        assert!(bb.y >= 16 && bb.bottom() <= 48, "{bb:?}");
        assert!(bb.h >= 28);
    }

    #[test]
    fn rotation_contract() {
        let v = vocab();
        let s = SymbolSample::new(glyph(32), "eightrest", "t");
        assert_eq!(augment_rotate(&s, 0.0, &v).unwrap().image, s.image);
        let r = augment_rotate(&s, 10.0, &v).unwrap();
        assert_eq!(r.augmentation, AugmentationTag::Rotation(10.0));
        assert_eq!(r.image.dims(), (32, 32));
        assert_eq!(augment_rotate(&s, 10.5, &v), Err(Error::DegreesOutOfRange(10.5)));
        let g = SymbolSample::new(glyph(32), "gclef", "t");
        assert!(matches!(
            augment_rotate(&g, 10.0, &v),
            Err(Error::AugmentationForbidden { .. })
        ));
    }

    #[test]
    fn flip_contract() {
        let v = vocab();
        let s = SymbolSample::new(glyph(32), "eightrest", "t");
        let f = augment_flip(&s, FlipAxis::Horizontal, &v).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(f.image.get(x, y), s.image.get(31 - x, y));
            }
        }
        assert_eq!(augment_flip(&f, FlipAxis::Horizontal, &v).unwrap().image, s.image);
        assert!(augment_flip(&s, FlipAxis::Vertical, &v).is_err());
        let g = SymbolSample::new(glyph(32), "gclef", "t");
        assert!(augment_flip(&g, FlipAxis::Horizontal, &v).is_err());
    }

    #[test]
    fn balance_drops_tiny_classes() {
        let v = vocab();
        let samples: Vec<_> = (0..10).map(|_| SymbolSample::new(glyph(8), "eightrest", "t")).collect();
        let cfg = BalanceConfig {
            threshold: 3000,
            max_multiplier: 20,
        };
        let (out, m) = balance(samples, &v, cfg, 1).unwrap();
        assert!(out.is_empty());
        assert_eq!(m.dropped[0].reason, DropReason::BelowMultiplierLimit);
        assert!(m.retained_classes.is_empty());
    }

    #[test]
    fn balance_drops_classes_without_permitted_augmentation() {
        let v = vocab();
        let samples: Vec<_> = (0..5).map(|_| SymbolSample::new(glyph(8), "gclef", "t")).collect();
        let cfg = BalanceConfig {
            threshold: 10,
            max_multiplier: 30,
        };
        let (_, m) = balance(samples, &v, cfg, 1).unwrap();
        assert_eq!(m.dropped[0].reason, DropReason::NoPermittedAugmentation);
    }

    #[test]
    fn batches() {
        let samples: Vec<_> = (0..32)
            .map(|i| SymbolSample::new(glyph(8), if i % 4 == 0 { "gclef" } else { "eightrest" }, "t"))
            .collect();
        let b = make_batches(&samples, 16, 3).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b, make_batches(&samples, 16, 3).unwrap());
        assert_ne!(b, make_batches(&samples, 16, 4).unwrap());
        let f = make_focused_batches(&samples, &["gclef"], 16, 3).unwrap();
        assert!(f.iter().flatten().all(|&i| samples[i].class_name == "gclef"));
        assert_eq!(f.iter().flatten().count(), 8);
        assert_eq!(make_focused_batches(&samples, &["none"], 16, 3), Err(Error::EmptyFocusSet));
        assert_eq!(make_batches(&[], 16, 3), Err(Error::EmptyDataset));
    }
}
