//! Source adapters: per-class image folders, page images with a bounding-box
//! annotation file, and online stroke files.
//!
//! Page annotations are CSV with header `image,label,x,y,w,h`; `image` is
//! relative to the CSV file. A stroke file holds the label on its first line
//! and one stroke per following line as `x,y;x,y;...`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use symgan_core::dataset::{normalize, rasterize_strokes, Stroke, SymbolSample};
use symgan_core::image::{GrayImage, Rect};
use symgan_core::vocab::{ClassVocabulary, SampleContext};

use crate::config::UnknownLabelPolicy;
use crate::error::{Error, Result};
use crate::imageio::{file_name, list_dirs, list_images, load_gray};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adapter {
    Folder,
    Page,
    Strokes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDescriptor {
    pub adapter: Adapter,
    /// Dataset id used for alias lookup.
    pub dataset: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    pub canvas: usize,
    pub stroke_width: f32,
    pub on_unknown: UnknownLabelPolicy,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub samples: Vec<SymbolSample>,
    /// Skipped items per source label with the reason.
    pub skipped: BTreeMap<String, (usize, String)>,
}

impl IngestReport {
    fn skip(&mut self, label: &str, why: &Error) {
        let e = self.skipped.entry(label.to_string()).or_insert((0, why.to_string()));
        e.0 += 1;
    }
}

struct Ctx<'a> {
    vocab: &'a ClassVocabulary,
    opts: IngestOptions,
    dataset: &'a str,
    source: String,
}

impl Ctx<'_> {
    fn admit(&self, report: &mut IngestReport, label: &str, raw: Result<GrayImage>) -> Result<()> {
        let attempt = raw.and_then(|raw| {
            let img = normalize(&raw, (self.opts.canvas, self.opts.canvas))?;
            let class = self.vocab.canonicalize_with(
                self.dataset,
                label,
                SampleContext {
                    stem: None,
                    image: Some(&img),
                },
            )?;
            Ok(SymbolSample::new(img, class, self.source.clone()))
        });
        match attempt {
            Ok(s) => report.samples.push(s),
            Err(e) if self.opts.on_unknown == UnknownLabelPolicy::Skip && skippable(&e) => report.skip(label, &e),
            Err(e) => return Err(e),
        }
        Ok(())
    }
}

fn skippable(e: &Error) -> bool {
    matches!(
        e,
        Error::Core(
            symgan_core::Error::UnknownLabel { .. }
                | symgan_core::Error::UnresolvedGranularity { .. }
                | symgan_core::Error::EmptyImage
        )
    )
}

/// Reads every sample a descriptor names, normalized and canonicalized.
pub fn ingest(desc: &SourceDescriptor, root: &Path, vocab: &ClassVocabulary, opts: IngestOptions) -> Result<IngestReport> {
    let path = if desc.path.is_absolute() { desc.path.clone() } else { root.join(&desc.path) };
    let unreadable = |message: String| Error::UnreadableSource {
        path: path.clone(),
        message,
    };
    if !path.exists() {
        return Err(unreadable("does not exist".into()));
    }
    let ctx = Ctx {
        vocab,
        opts,
        dataset: &desc.dataset,
        source: desc.dataset.clone(),
    };
    let mut report = IngestReport::default();
    match desc.adapter {
        Adapter::Folder => {
            if !path.is_dir() {
                return Err(unreadable("folder adapter needs a directory".into()));
            }
            for dir in list_dirs(&path)? {
                let label = file_name(&dir);
                for f in list_images(&dir)? {
                    ctx.admit(&mut report, &label, load_gray(&f))?;
                }
            }
        }
        Adapter::Page => {
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            let mut pages: BTreeMap<String, GrayImage> = BTreeMap::new();
            let mut rdr = csv::Reader::from_path(&path).map_err(|e| unreadable(e.to_string()))?;
            for rec in rdr.deserialize::<PageRecord>() {
                let rec = rec.map_err(|e| unreadable(e.to_string()))?;
                if !pages.contains_key(&rec.image) {
                    pages.insert(rec.image.clone(), load_gray(&base.join(&rec.image))?);
                }
                let page = &pages[&rec.image];
                let r = Rect {
                    x: rec.x,
                    y: rec.y,
                    w: rec.w,
                    h: rec.h,
                };
                if r.w == 0 || r.h == 0 || r.right() > page.width() || r.bottom() > page.height() {
                    return Err(unreadable(format!("box {r:?} outside {}", rec.image)));
                }
                ctx.admit(&mut report, &rec.label, Ok(page.crop(r)))?;
            }
        }
        Adapter::Strokes => {
            let files: Vec<PathBuf> = if path.is_dir() {
                let mut v: Vec<PathBuf> = std::fs::read_dir(&path)
                    .map_err(Error::io(&path))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|e| e == "txt"))
                    .collect();
                v.sort();
                v
            } else {
                vec![path.clone()]
            };
            for f in files {
                let text = std::fs::read_to_string(&f).map_err(Error::io(&f))?;
                let (label, strokes) = parse_strokes(&text).map_err(|m| Error::UnreadableSource {
                    path: f.clone(),
                    message: m,
                })?;
                let canvas = (opts.canvas, opts.canvas);
                let raster = rasterize_strokes(&strokes, canvas, opts.stroke_width * opts.canvas as f32 / 64.0).map_err(Error::from);
                ctx.admit(&mut report, &label, raster)?;
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Deserialize)]
struct PageRecord {
    image: String,
    label: String,
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

/// Label line followed by `x,y;x,y;...` stroke lines.
pub fn parse_strokes(text: &str) -> std::result::Result<(String, Vec<Stroke>), String> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let label = lines.next().ok_or("empty stroke file")?.to_string();
    let mut strokes = Vec::new();
    for line in lines {
        let mut s = Stroke::new();
        for pt in line.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (x, y) = pt.split_once(',').ok_or_else(|| format!("bad point `{pt}`"))?;
            let x: f32 = x.trim().parse().map_err(|_| format!("bad x in `{pt}`"))?;
            let y: f32 = y.trim().parse().map_err(|_| format!("bad y in `{pt}`"))?;
            s.push((x, y));
        }
        if !s.is_empty() {
            strokes.push(s);
        }
    }
    Ok((label, strokes))
}

/// Shadow exemplars from `<base class>/*.png` folders, labelled `<base>bad`.
pub fn ingest_shadow(dir: &Path, vocab: &ClassVocabulary, canvas: usize) -> Result<Vec<SymbolSample>> {
    let mut out = Vec::new();
    for d in list_dirs(dir)? {
        let base = file_name(&d);
        let name = format!("{base}{}", symgan_core::vocab::SHADOW_SUFFIX);
        match vocab.get(&name) {
            Some(c) if c.is_bad_shadow => {}
            _ => return Err(symgan_core::Error::UnknownClass(name).into()),
        }
        for f in list_images(&d)? {
            let img = normalize(&load_gray(&f)?, (canvas, canvas))?;
            out.push(SymbolSample::new(img, name.clone(), "shadow"));
        }
    }
    Ok(out)
}
