//! The five pipeline stages. Each writes under the output root:
//!
//! ```text
//! data/manifest.json, data/samples/<class>/*.png
//! train/log.tsv, train/checkpoints/*.ckpt, train/best.ckpt, train/latest.ckpt
//! bank/<class>/*.png + anchors.csv
//! lines/<score>.png + <score>.csv
//! eval/report.json, eval/report.txt
//! ```
//!
//! Stage outputs are rewritten from scratch, so reruns with the same inputs
//! and seed produce byte-identical files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use symgan_core::dataset::{balance, normalize, DatasetManifest, SymbolSample};
use symgan_core::engraver::{default_anchor, engrave as engrave_line, BankEntry};
use symgan_core::image::GrayImage;
use symgan_core::metrics::MetricReport;
use symgan_core::models::ModelBundle;
use symgan_core::rng::{derive, derive_index};
use symgan_core::trainer::{self, CheckpointScore, StepRecord, TrainObserver, TrainingData};
use symgan_core::vocab::ClassVocabulary;

use crate::bank::{load_bank, save_class};
use crate::checkpoint;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_dirs, report_table};
use crate::imageio::{file_name, list_dirs, list_images, load_gray, save_png, write_atomic};
use crate::ingest::{ingest, ingest_shadow, IngestOptions};
use crate::musicxml::parse_musicxml;

/// Locations of every stage output under one root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn samples(&self) -> PathBuf {
        self.data().join("samples")
    }
    pub fn manifest(&self) -> PathBuf {
        self.data().join("manifest.json")
    }
    pub fn train(&self) -> PathBuf {
        self.root.join("train")
    }
    pub fn log(&self) -> PathBuf {
        self.train().join("log.tsv")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.train().join("checkpoints")
    }
    pub fn best(&self) -> PathBuf {
        self.train().join("best.ckpt")
    }
    pub fn latest(&self) -> PathBuf {
        self.train().join("latest.ckpt")
    }
    pub fn bank(&self) -> PathBuf {
        self.root.join("bank")
    }
    pub fn lines(&self) -> PathBuf {
        self.root.join("lines")
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
}

fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

pub fn prepare_data(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    cfg.check_paths()?;
    let vocab = cfg.load_vocabulary()?;
    let opts = IngestOptions {
        canvas: cfg.data.canvas,
        stroke_width: cfg.data.stroke_width,
        on_unknown: cfg.data.on_unknown,
    };
    let mut samples = Vec::new();
    for src in &cfg.data.sources {
        let rep = ingest(src, &cfg.base_dir, &vocab, opts)?;
        for (label, (n, why)) in &rep.skipped {
            eprintln!("skipped {n} `{}:{label}` samples: {why}", src.dataset);
        }
        samples.extend(rep.samples);
    }
    if let Some(dir) = &cfg.data.shadow_dir {
        samples.extend(ingest_shadow(&cfg.resolve(dir), &vocab, cfg.data.canvas)?);
    }
    let (balanced, manifest) = balance(samples, &vocab, cfg.data.balance(), cfg.stage_seed("stage.balance"))?;

    let layout = Layout::new(cfg.out_dir());
    reset_dir(&layout.samples())?;
    let mut counters = std::collections::BTreeMap::<&str, usize>::new();
    for s in &balanced {
        let k = counters.entry(&s.class_name).or_default();
        save_png(&layout.samples().join(&s.class_name).join(format!("{:05}.png", *k)), &s.image)?;
        *k += 1;
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&layout.manifest(), json.as_bytes())?;
    for (class, c) in &manifest.counts {
        println!("{class:<24} {:>6} original {:>6} augmented {:>6} total", c.original, c.augmented, c.total);
    }
    for d in &manifest.dropped {
        println!("{:<24} dropped ({} originals, {:?})", d.class_name, d.original, d.reason);
    }
    Ok(manifest)
}

/// Prepared samples split into generation samples and shadow exemplars.
pub fn load_prepared(layout: &Layout, vocab: &ClassVocabulary) -> Result<(Vec<SymbolSample>, Vec<SymbolSample>)> {
    let dir = layout.samples();
    if !dir.is_dir() {
        return Err(Error::MissingPath {
            what: "prepared samples (run prepare-data first)",
            path: dir,
        });
    }
    let (mut gen, mut shadow) = (Vec::new(), Vec::new());
    for class_dir in list_dirs(&dir)? {
        let class = file_name(&class_dir);
        let c = vocab.get(&class).ok_or_else(|| symgan_core::Error::UnknownClass(class.clone()))?;
        let target = if c.is_bad_shadow { &mut shadow } else { &mut gen };
        for f in list_images(&class_dir)? {
            target.push(SymbolSample::new(load_gray(&f)?, class.clone(), "prepared"));
        }
    }
    Ok((gen, shadow))
}

const LOG_HEADER: &str = "step\tmode\tloss_d\tloss_g_adv\tloss_g_cls\tloss_div\tloss_g_total\tloss_c\teuclid\tcosine\tssim\tcombined\tsaved";

fn log_row(r: &StepRecord) -> String {
    let ck = match &r.checkpoint {
        Some(c) => format!("{}\t{}\t{}\t{}", c.euclid, c.cosine, c.ssim, c.combined),
        None => "\t\t\t".to_string(),
    };
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{ck}\t{}",
        r.step,
        r.mode.as_str(),
        r.loss_d,
        r.loss_g_adv,
        r.loss_g_cls,
        r.loss_div,
        r.loss_g_total,
        r.loss_c,
        u8::from(r.saved)
    )
}

/// Appends log rows and persists improving checkpoints.
struct RunObserver {
    log: fs::File,
    log_path: PathBuf,
    layout: Layout,
    echo: String,
    verbose_every: u64,
}

fn core_io(e: Error) -> symgan_core::Error {
    symgan_core::Error::Observer(e.to_string())
}

impl TrainObserver for RunObserver {
    fn on_step(&mut self, r: &StepRecord) -> symgan_core::Result<()> {
        writeln!(self.log, "{}", log_row(r)).map_err(|e| core_io(Error::io(&self.log_path)(e)))?;
        if self.verbose_every > 0 && (r.step + 1) % self.verbose_every == 0 {
            println!(
                "step {:>6} {:<8} d {:.4} g_adv {:.4} g_cls {:.4} div {:.4} c {:.4}",
                r.step + 1,
                r.mode.as_str(),
                r.loss_d,
                r.loss_g_adv,
                r.loss_g_cls,
                r.loss_div,
                r.loss_c
            );
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, bundle: &ModelBundle, score: &CheckpointScore) -> symgan_core::Result<()> {
        let bytes = checkpoint::encode(bundle, &self.echo);
        let named = self.layout.checkpoints().join(format!("step-{:07}.ckpt", bundle.step));
        write_atomic(&named, &bytes).map_err(core_io)?;
        write_atomic(&self.layout.best(), &bytes).map_err(core_io)?;
        println!("checkpoint at step {} (combined {:.4})", bundle.step, score.combined);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps_run: usize,
    pub final_step: u64,
    pub latest: PathBuf,
}

/// Trains from scratch, or from `resume` until `train.total_steps`.
pub fn train(cfg: &PipelineConfig, resume: Option<&Path>, verbose_every: u64) -> Result<TrainSummary> {
    let vocab = cfg.load_vocabulary()?;
    if cfg.model.canvas != cfg.data.canvas {
        return Err(symgan_core::Error::InvalidConfig(format!("model canvas {} differs from data canvas {}", cfg.model.canvas, cfg.data.canvas)).into());
    }
    let layout = Layout::new(cfg.out_dir());
    let (samples, shadow) = load_prepared(&layout, &vocab)?;
    let tcfg = cfg.train_config();
    let echo = cfg.to_toml();
    fs::create_dir_all(layout.train()).map_err(Error::io(&layout.train()))?;

    let bundle = match resume {
        Some(p) => Some(checkpoint::load_for(p, &vocab)?.bundle),
        None => None,
    };
    let log_path = layout.log();
    let kept = match (&bundle, fs::read_to_string(&log_path)) {
        (Some(b), Ok(text)) => text
            .lines()
            .skip(1)
            .filter(|l| l.split('\t').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s < b.step))
            .map(|l| format!("{l}\n"))
            .collect::<String>(),
        _ => String::new(),
    };
    write_atomic(&log_path, format!("{LOG_HEADER}\n{kept}").as_bytes())?;
    if bundle.is_none() {
        reset_dir(&layout.checkpoints())?;
        let _ = fs::remove_file(layout.best());
    }
    let log = fs::OpenOptions::new().append(true).open(&log_path).map_err(Error::io(&log_path))?;
    let mut obs = RunObserver {
        log,
        log_path,
        layout: layout.clone(),
        echo: echo.clone(),
        verbose_every,
    };
    let data = TrainingData {
        samples: &samples,
        shadow: &shadow,
    };
    let outcome = match bundle {
        Some(b) => trainer::resume(&tcfg, b, data, &vocab, &mut obs)?,
        None => trainer::train(&tcfg, &cfg.model, data, &vocab, &mut obs)?,
    };
    checkpoint::save(&layout.latest(), &outcome.bundle, &echo)?;
    Ok(TrainSummary {
        steps_run: outcome.log.len(),
        final_step: outcome.bundle.step,
        latest: layout.latest(),
    })
}

fn default_checkpoint(layout: &Layout) -> PathBuf {
    if layout.best().is_file() {
        layout.best()
    } else {
        layout.latest()
    }
}

/// Writes `generate.count` images per class into the bank directory.
pub fn generate(cfg: &PipelineConfig, ckpt: Option<&Path>) -> Result<PathBuf> {
    let vocab = cfg.load_vocabulary()?;
    let layout = Layout::new(cfg.out_dir());
    let classes: Vec<String> = if cfg.generate.classes.is_empty() {
        vocab.generation_classes().iter().map(|c| c.canonical_name.clone()).collect()
    } else {
        cfg.generate.classes.clone()
    };
    let mut targets = Vec::with_capacity(classes.len());
    for name in &classes {
        match vocab.get(name) {
            None => return Err(symgan_core::Error::UnknownClass(name.clone()).into()),
            Some(c) if c.is_bad_shadow => return Err(symgan_core::Error::BadShadowTarget(name.clone()).into()),
            Some(_) => targets.push((name.clone(), vocab.generation_index(name)?)),
        }
    }
    let path = ckpt.map(Path::to_path_buf).unwrap_or_else(|| default_checkpoint(&layout));
    let bundle = checkpoint::load_for(&path, &vocab)?.bundle;
    let canvas = bundle.config.canvas;

    let styles: Vec<GrayImage> = match &cfg.generate.style_dir {
        Some(d) => {
            let dir = cfg.resolve(d);
            let files = list_images(&dir)?;
            if files.is_empty() {
                return Err(Error::EmptyDirectory(dir));
            }
            files
                .iter()
                .map(|f| Ok(normalize(&load_gray(f)?, (canvas, canvas))?))
                .collect::<Result<_>>()?
        }
        None => load_prepared(&layout, &vocab)?.0.into_iter().map(|s| s.image).collect(),
    };
    if styles.is_empty() {
        return Err(Error::EmptyDirectory(layout.samples()));
    }

    let seed = cfg.stage_seed("stage.generate");
    let (style_seed, noise_seed) = (derive(seed, "style"), derive(seed, "noise"));
    reset_dir(&layout.bank())?;
    let mut k = 0u64;
    for (name, gi) in &targets {
        let n = cfg.generate.count;
        let picks: Vec<&GrayImage> = (0..n)
            .map(|i| &styles[(derive_index(style_seed, k + i as u64) % styles.len() as u64) as usize])
            .collect();
        let noises: Vec<u64> = (0..n).map(|i| derive_index(noise_seed, k + i as u64)).collect();
        let mut entries = Vec::with_capacity(n);
        for chunk in 0..n.div_ceil(16) {
            let r = chunk * 16..((chunk + 1) * 16).min(n);
            let imgs = bundle.generator.generate_batch(&picks[r.clone()], &vec![*gi; r.len()], &noises[r.clone()])?;
            for (j, img) in r.zip(imgs) {
                let (anchor, height) = default_anchor(name, &img);
                entries.push((
                    format!("{j:04}.png"),
                    BankEntry {
                        image: img,
                        anchor,
                        height_staff_spaces: height,
                    },
                ));
            }
        }
        save_class(&layout.bank(), name, &entries)?;
        k += n as u64;
    }
    println!("generated {} images over {} classes into {}", k, targets.len(), layout.bank().display());
    Ok(layout.bank())
}

fn is_score(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("xml" | "musicxml"))
}

/// Engraves every score in `engrave.scores` with the given bank.
pub fn engrave(cfg: &PipelineConfig, bank_dir: Option<&Path>) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(cfg.out_dir());
    let scores_dir = cfg.engrave.scores.as_deref().map(|p| cfg.resolve(p)).ok_or(Error::MissingPath {
        what: "engrave.scores",
        path: PathBuf::from("<unset>"),
    })?;
    if !scores_dir.is_dir() {
        return Err(Error::MissingPath {
            what: "scores directory",
            path: scores_dir,
        });
    }
    let mut scores: Vec<PathBuf> = fs::read_dir(&scores_dir)
        .map_err(Error::io(&scores_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_score(p))
        .collect();
    scores.sort();
    let bank = load_bank(&bank_dir.map(Path::to_path_buf).unwrap_or_else(|| layout.bank()))?;
    let backgrounds: Vec<GrayImage> = match &cfg.engrave.backgrounds {
        Some(d) => list_images(&cfg.resolve(d))?.iter().map(|f| load_gray(f)).collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let seed = cfg.stage_seed("stage.engrave");
    reset_dir(&layout.lines())?;
    let mut written = Vec::new();
    for (i, path) in scores.iter().enumerate() {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let parsed = parse_musicxml(&text)?;
        for w in &parsed.warnings {
            eprintln!("{}: {w}", path.display());
        }
        let line_seed = derive_index(seed, i as u64);
        let bg = (!backgrounds.is_empty()).then(|| &backgrounds[(derive_index(line_seed, 1) % backgrounds.len() as u64) as usize]);
        let line = engrave_line(&parsed.score, &bank, bg, &cfg.engrave.geometry, line_seed)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("{i}"));
        let png = layout.lines().join(format!("{stem}.png"));
        save_png(&png, &line.image)?;
        let mut csv = String::from("class,x,y,w,h\n");
        for a in &line.annotations {
            csv.push_str(&format!("{},{},{},{},{}\n", a.class_name, a.x, a.y, a.w, a.h));
        }
        write_atomic(&layout.lines().join(format!("{stem}.csv")), csv.as_bytes())?;
        written.push(png);
    }
    println!("engraved {} lines into {}", written.len(), layout.lines().display());
    Ok(written)
}

/// Scores `candidate` (default: the engraved lines) against `evaluate.reference`.
pub fn evaluate(cfg: &PipelineConfig, candidate: Option<&Path>) -> Result<MetricReport> {
    let layout = Layout::new(cfg.out_dir());
    let cand = candidate.map(Path::to_path_buf).unwrap_or_else(|| layout.lines());
    let reference = cfg.evaluate.reference.as_deref().map(|p| cfg.resolve(p)).ok_or(Error::MissingPath {
        what: "evaluate.reference",
        path: PathBuf::from("<unset>"),
    })?;
    let report = evaluate_dirs(&cand, &reference, &cfg.evaluate, |p| cfg.resolve(p), cfg.stage_seed("stage.evaluate"))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&layout.eval().join("report.json"), json.as_bytes())?;
    let table = report_table(&file_name(&cand), &report);
    write_atomic(&layout.eval().join("report.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(report)
}
