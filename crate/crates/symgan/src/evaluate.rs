//! Directory-level evaluation: load two line-image sets, extract features
//! and write `report.json` plus a plain-text FID/KID/HWD table.
//!
//! A weights file for the convolutional extractor is JSON:
//! `{"name": str, "input": [width, height], "params": ParamSet}` where the
//! parameter set alternates `(cout, cin, 3, 3)` weights and `(1, cout, 1, 1)`
//! biases.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use symgan_core::image::GrayImage;
use symgan_core::metrics::{compare_sets, ConvFeatureNet, FeatureExtractor, KidConfig, MetricReport, StubExtractor, StubKind};
use symgan_core::nn::ParamSet;

use crate::bank::ink_positive;
use crate::config::{EvaluateConfig, ExtractorChoice};
use crate::error::{Error, Result};
use crate::imageio::{list_images, load_gray};

pub const WEIGHTS_ENV: &str = "SYMGAN_EXTRACTOR_WEIGHTS";
/// Fixed so stub features are comparable across runs and experiments.
pub const STUB_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsFile {
    pub name: String,
    pub input: (usize, usize),
    pub params: ParamSet,
}

pub fn load_weights(path: &Path) -> Result<ConvFeatureNet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::ExtractorUnavailable(format!("{}: {e}", path.display())))?;
    let w: WeightsFile = serde_json::from_str(&text).map_err(|e| Error::ExtractorUnavailable(format!("{}: {e}", path.display())))?;
    Ok(ConvFeatureNet::new(w.name, w.input, w.params)?)
}

/// Content and style extractors per the config. The environment variable
/// takes precedence over the configured weights path.
pub fn extractors(cfg: &EvaluateConfig, resolve: impl Fn(&Path) -> PathBuf) -> Result<(Box<dyn FeatureExtractor>, Box<dyn FeatureExtractor>)> {
    let stubs = || -> (Box<dyn FeatureExtractor>, Box<dyn FeatureExtractor>) {
        (
            Box::new(StubExtractor::new(StubKind::Content, STUB_SEED)),
            Box::new(StubExtractor::new(StubKind::Style, STUB_SEED)),
        )
    };
    if cfg.extractor == ExtractorChoice::Stub {
        return Ok(stubs());
    }
    let path = std::env::var_os(WEIGHTS_ENV).map(PathBuf::from).or_else(|| cfg.weights.as_deref().map(&resolve));
    let loaded = match path {
        None => Err(Error::ExtractorUnavailable(format!("no weights configured and {WEIGHTS_ENV} unset"))),
        Some(p) => load_weights(&p).and_then(|content| {
            let style = match &cfg.style_weights {
                Some(s) => load_weights(&resolve(s))?,
                None => content.clone(),
            };
            Ok((Box::new(content) as Box<dyn FeatureExtractor>, Box::new(style) as Box<dyn FeatureExtractor>))
        }),
    };
    match loaded {
        Err(Error::ExtractorUnavailable(m)) if cfg.allow_stub_fallback => {
            eprintln!("warning: {m}; falling back to the stub extractor");
            Ok(stubs())
        }
        other => other,
    }
}

/// Every image directly inside `dir`, ink-positive.
pub fn load_set(dir: &Path) -> Result<Vec<GrayImage>> {
    if !dir.is_dir() {
        return Err(Error::MissingPath {
            what: "image directory",
            path: dir.to_path_buf(),
        });
    }
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_path_buf()));
    }
    files.iter().map(|f| load_gray(f).map(|g| ink_positive(&g))).collect()
}

pub fn evaluate_dirs(candidate: &Path, reference: &Path, cfg: &EvaluateConfig, resolve: impl Fn(&Path) -> PathBuf, seed: u64) -> Result<MetricReport> {
    let cand = load_set(candidate)?;
    let refs = load_set(reference)?;
    let (content, style) = extractors(cfg, resolve)?;
    let kid = KidConfig {
        resamples: cfg.kid_resamples,
        subset_size: cfg.kid_subset,
        seed,
    };
    Ok(compare_sets(&cand, &refs, content.as_ref(), style.as_ref(), cfg.binarize, &kid)?)
}

/// Human-readable table with FID, KID and HWD columns.
pub fn report_table(label: &str, r: &MetricReport) -> String {
    let mut s = String::new();
    let kid_se = r.kid_resampled.as_ref().map_or(String::from("-"), |k| format!("{:.4}", k.std_err));
    let _ = writeln!(s, "{:<24} {:>12} {:>12} {:>12} {:>10}", "set", "FID", "KID", "HWD", "KID s.e.");
    let _ = writeln!(s, "{:<24} {:>12.4} {:>12.6} {:>12.4} {:>10}", label, r.fid, r.kid, r.hwd, kid_se);
    let _ = writeln!(s);
    let _ = writeln!(s, "candidates: {}  references: {}  binarized: {}", r.candidate_count, r.reference_count, r.binarized);
    let _ = writeln!(s, "extractor: {}  style extractor: {}", r.extractor, r.style_extractor);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::save_png;
    use symgan_core::nn::{ParamTensor, Shape};

    fn lines(dir: &Path, n: usize, seed: u64) {
        for i in 0..n {
            let img = GrayImage::from_fn(90, 40, |x, y| {
                let band = (y as u64 * 7 + seed * 13 + i as u64) % 11 == 0;
                if band || (x as u64 + i as u64 * 3 + seed) % 17 == 0 { 0.1 } else { 0.95 }
            });
            save_png(&dir.join(format!("{i:03}.png")), &img).unwrap();
        }
    }

    #[test]
    fn self_comparison_and_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        lines(dir.path(), 8, 1);
        let cfg = EvaluateConfig::default();
        let r = evaluate_dirs(dir.path(), dir.path(), &cfg, Path::to_path_buf, 3).unwrap();
        assert!(r.fid.abs() < 1e-4);
        assert_eq!(r.hwd, 0.0);
        assert_eq!(r.candidate_count, 8);
        assert!(report_table("self", &r).contains("FID"));
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(evaluate_dirs(empty.path(), dir.path(), &cfg, Path::to_path_buf, 3), Err(Error::EmptyDirectory(_))));
    }

    #[test]
    fn weights_extractor_loads_and_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        let w = WeightsFile {
            name: "tiny".into(),
            input: (32, 16),
            params: ParamSet {
                tensors: vec![
                    ParamTensor {
                        name: "c0.w".into(),
                        shape: Shape::new(2, 1, 3, 3),
                        data: (0..18).map(|i| (i as f32 - 9.0) / 9.0).collect(),
                    },
                    ParamTensor {
                        name: "c0.b".into(),
                        shape: Shape::new(1, 2, 1, 1),
                        data: vec![0.1, 0.2],
                    },
                ],
                buffers: vec![],
            },
        };
        let wp = dir.path().join("w.json");
        std::fs::write(&wp, serde_json::to_string(&w).unwrap()).unwrap();
        let cfg = EvaluateConfig {
            extractor: ExtractorChoice::Weights,
            weights: Some(wp),
            ..EvaluateConfig::default()
        };
        let (c, _) = extractors(&cfg, Path::to_path_buf).unwrap();
        assert_eq!((c.identity(), c.dim()), ("tiny".to_string(), 2));

        let missing = EvaluateConfig {
            weights: Some(dir.path().join("none.json")),
            ..cfg.clone()
        };
        assert!(matches!(extractors(&missing, Path::to_path_buf), Err(Error::ExtractorUnavailable(_))));
        let fallback = EvaluateConfig {
            allow_stub_fallback: true,
            ..missing
        };
        assert!(extractors(&fallback, Path::to_path_buf).unwrap().0.identity().contains("stub"));
    }
}
