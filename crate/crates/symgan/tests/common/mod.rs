//! Fixtures shared by the integration tests: procedurally drawn symbols,
//! a small on-disk project and random scores.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::Rng as _;
use symgan::imageio::save_png;
use symgan_core::engraver::{self, BankEntry, Clef, Duration, Event, Geometry, Measure, Note, ScoreSpec, Step, SymbolBank};
use symgan_core::image::GrayImage;
use symgan_core::rng;

pub const FIXTURE_CLASSES: [&str; 6] = ["gclef", "quarternoteup", "quarternotedown", "halfnoteup", "quarterrest", "barline"];

enum Prim {
    Disc { cx: f32, cy: f32, rx: f32, ry: f32, tilt: f32 },
    Ring { cx: f32, cy: f32, rx: f32, ry: f32, tilt: f32 },
    Seg { ax: f32, ay: f32, bx: f32, by: f32 },
}

fn seg_dist(px: f32, py: f32, ax: f32, ay: f32, bx: f32, by: f32) -> f32 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = (dx * dx + dy * dy).max(1e-9);
    let t = (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0);
    let (qx, qy) = (ax + t * dx - px, ay + t * dy - py);
    (qx * qx + qy * qy).sqrt()
}

fn ellipse_r(px: f32, py: f32, cx: f32, cy: f32, rx: f32, ry: f32, tilt: f32) -> f32 {
    let (s, c) = tilt.sin_cos();
    let (dx, dy) = (px - cx, py - cy);
    let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
    ((u / rx).powi(2) + (v / ry).powi(2)).sqrt()
}

fn primitives(class: &str) -> Vec<Prim> {
    use Prim::*;
    let head = |cx, cy, filled: bool| {
        if filled {
            Disc { cx, cy, rx: 0.14, ry: 0.09, tilt: -0.4 }
        } else {
            Ring { cx, cy, rx: 0.14, ry: 0.09, tilt: -0.4 }
        }
    };
    match class {
        "quarternoteup" => vec![head(0.42, 0.8, true), Seg { ax: 0.55, ay: 0.77, bx: 0.55, by: 0.1 }],
        "quarternotedown" => vec![head(0.58, 0.2, true), Seg { ax: 0.45, ay: 0.23, bx: 0.45, by: 0.9 }],
        "halfnoteup" => vec![head(0.42, 0.8, false), Seg { ax: 0.55, ay: 0.77, bx: 0.55, by: 0.1 }],
        "halfnotedown" => vec![head(0.58, 0.2, false), Seg { ax: 0.45, ay: 0.23, bx: 0.45, by: 0.9 }],
        "eighthnoteup" => vec![
            head(0.42, 0.8, true),
            Seg { ax: 0.55, ay: 0.77, bx: 0.55, by: 0.1 },
            Seg { ax: 0.55, ay: 0.1, bx: 0.72, by: 0.4 },
        ],
        "eighthnotedown" => vec![
            head(0.58, 0.2, true),
            Seg { ax: 0.45, ay: 0.23, bx: 0.45, by: 0.9 },
            Seg { ax: 0.45, ay: 0.9, bx: 0.62, by: 0.6 },
        ],
        "wholenote" => vec![Ring { cx: 0.5, cy: 0.5, rx: 0.2, ry: 0.13, tilt: -0.2 }],
        "quarterrest" => vec![
            Seg { ax: 0.45, ay: 0.1, bx: 0.6, by: 0.33 },
            Seg { ax: 0.6, ay: 0.33, bx: 0.42, by: 0.5 },
            Seg { ax: 0.42, ay: 0.5, bx: 0.6, by: 0.7 },
            Seg { ax: 0.6, ay: 0.7, bx: 0.45, by: 0.9 },
        ],
        "eightrest" => vec![
            Disc { cx: 0.42, cy: 0.3, rx: 0.06, ry: 0.06, tilt: 0.0 },
            Seg { ax: 0.42, ay: 0.33, bx: 0.62, by: 0.28 },
            Seg { ax: 0.62, ay: 0.28, bx: 0.45, by: 0.85 },
        ],
        "wholerest" | "halfrest" => vec![Disc { cx: 0.5, cy: 0.5, rx: 0.25, ry: 0.1, tilt: 0.0 }],
        "barline" => vec![Seg { ax: 0.5, ay: 0.04, bx: 0.5, by: 0.96 }],
        "gclef" => vec![
            Seg { ax: 0.56, ay: 0.04, bx: 0.5, by: 0.96 },
            Ring { cx: 0.5, cy: 0.64, rx: 0.2, ry: 0.16, tilt: 0.0 },
            Ring { cx: 0.6, cy: 0.18, rx: 0.1, ry: 0.12, tilt: 0.3 },
        ],
        "fclef" => vec![
            Ring { cx: 0.42, cy: 0.35, rx: 0.18, ry: 0.2, tilt: 0.0 },
            Disc { cx: 0.75, cy: 0.25, rx: 0.05, ry: 0.05, tilt: 0.0 },
            Disc { cx: 0.75, cy: 0.5, rx: 0.05, ry: 0.05, tilt: 0.0 },
        ],
        "accidentalsharp" => vec![
            Seg { ax: 0.42, ay: 0.1, bx: 0.42, by: 0.9 },
            Seg { ax: 0.58, ay: 0.1, bx: 0.58, by: 0.9 },
            Seg { ax: 0.3, ay: 0.42, bx: 0.7, by: 0.34 },
            Seg { ax: 0.3, ay: 0.66, bx: 0.7, by: 0.58 },
        ],
        "accidentalflat" => vec![
            Seg { ax: 0.4, ay: 0.05, bx: 0.4, by: 0.9 },
            Ring { cx: 0.5, cy: 0.75, rx: 0.12, ry: 0.13, tilt: 0.0 },
        ],
        "accidentalnatural" => vec![
            Seg { ax: 0.4, ay: 0.05, bx: 0.4, by: 0.7 },
            Seg { ax: 0.6, ay: 0.3, bx: 0.6, by: 0.95 },
            Seg { ax: 0.4, ay: 0.4, bx: 0.6, by: 0.33 },
            Seg { ax: 0.4, ay: 0.7, bx: 0.6, by: 0.63 },
        ],
        "timesig44" => vec![
            Seg { ax: 0.55, ay: 0.05, bx: 0.35, by: 0.35 },
            Seg { ax: 0.35, ay: 0.35, bx: 0.65, by: 0.35 },
            Seg { ax: 0.55, ay: 0.05, bx: 0.55, by: 0.45 },
            Seg { ax: 0.55, ay: 0.55, bx: 0.35, by: 0.85 },
            Seg { ax: 0.35, ay: 0.85, bx: 0.65, by: 0.85 },
            Seg { ax: 0.55, ay: 0.55, bx: 0.55, by: 0.95 },
        ],
        other => panic!("no fixture glyph for {other}"),
    }
}

/// Ink-positive handwritten-looking glyph with jittered placement and stroke.
pub fn draw_symbol(class: &str, canvas: usize, r: &mut rng::Rng) -> GrayImage {
    let prims = primitives(class);
    let (ox, oy) = (r.random_range(-0.04..0.04f32), r.random_range(-0.04..0.04f32));
    let sc = r.random_range(0.9..1.05f32);
    let half = r.random_range(0.025..0.045f32);
    let c = canvas as f32;
    GrayImage::from_fn(canvas, canvas, |x, y| {
        let px = ((x as f32 + 0.5) / c - 0.5 - ox) / sc + 0.5;
        let py = ((y as f32 + 0.5) / c - 0.5 - oy) / sc + 0.5;
        let aa = 0.5 / c;
        let mut ink: f32 = 0.0;
        for p in &prims {
            let v = match *p {
                Prim::Disc { cx, cy, rx, ry, tilt } => {
                    let e = ellipse_r(px, py, cx, cy, rx, ry, tilt);
                    ((1.0 - e) * rx.min(ry) / aa + 0.5).clamp(0.0, 1.0)
                }
                Prim::Ring { cx, cy, rx, ry, tilt } => {
                    let e = ellipse_r(px, py, cx, cy, rx, ry, tilt);
                    let d = (e - 1.0).abs() * rx.min(ry);
                    ((half - d) / aa + 0.5).clamp(0.0, 1.0)
                }
                Prim::Seg { ax, ay, bx, by } => ((half - seg_dist(px, py, ax, ay, bx, by)) / aa + 0.5).clamp(0.0, 1.0),
            };
            ink = ink.max(v);
        }
        ink
    })
}

/// Bank of drawn glyphs, `per_class` exemplars each, anchored by rule.
pub fn drawn_bank(classes: &[&str], per_class: usize, seed: u64) -> SymbolBank {
    let mut r = rng::rng(seed);
    let mut bank = SymbolBank::new();
    for &c in classes {
        for _ in 0..per_class {
            let image = draw_symbol(c, 48, &mut r);
            let (anchor, height) = engraver::default_anchor(c, &image);
            bank.insert(c, BankEntry { image, anchor, height_staff_spaces: height });
        }
    }
    bank
}

/// Random single-voice treble score using only the fixture classes.
pub fn random_score(r: &mut rng::Rng) -> ScoreSpec {
    let steps = [Step::C, Step::D, Step::E, Step::F, Step::G, Step::A, Step::B];
    let measures = (0..r.random_range(2..4))
        .map(|_| Measure {
            events: (0..r.random_range(2..5))
                .map(|_| {
                    if r.random_bool(0.2) {
                        Event::Rest { duration: Duration::Quarter }
                    } else {
                        // E4..F5; half notes stay below B4 so their stems point up
                        let (dur, di) = if r.random_bool(0.3) {
                            (Duration::Half, r.random_range(30..34))
                        } else {
                            (Duration::Quarter, r.random_range(30..39))
                        };
                        Event::Note(Note::new(steps[(di % 7) as usize], di / 7, dur))
                    }
                })
                .collect(),
        })
        .collect();
    ScoreSpec {
        divisions: 1,
        clef: Clef::TREBLE,
        time: None,
        measures,
    }
}

/// `n` engraved fixture lines (paper-positive).
pub fn fixture_lines(n: usize, seed: u64) -> Vec<GrayImage> {
    let bank = drawn_bank(&FIXTURE_CLASSES, 3, seed);
    let mut r = rng::rng(rng::derive(seed, "scores"));
    let geo = Geometry::default();
    (0..n)
        .map(|i| {
            let score = random_score(&mut r);
            engraver::engrave(&score, &bank, None, &geo, rng::derive_index(seed, i as u64))
                .unwrap()
                .image
        })
        .collect()
}

/// The engraver fixture: G clef, two measures, four notes and one rest.
pub const FIXTURE_SCORE: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<score-partwise version="4.0">
  <part-list><score-part id="P1"><part-name>Melody</part-name></score-part></part-list>
  <part id="P1">
    <measure number="1">
      <attributes>
        <divisions>1</divisions>
        <clef><sign>G</sign><line>2</line></clef>
      </attributes>
      <note><pitch><step>G</step><octave>4</octave></pitch><duration>1</duration><type>quarter</type></note>
      <note><pitch><step>D</step><octave>5</octave></pitch><duration>1</duration><type>quarter</type></note>
      <note><pitch><step>A</step><octave>4</octave></pitch><duration>2</duration><type>half</type></note>
    </measure>
    <measure number="2">
      <note><rest/><duration>1</duration><type>quarter</type></note>
      <note><pitch><step>F</step><octave>4</octave></pitch><duration>1</duration><type>quarter</type></note>
    </measure>
  </part>
</score-partwise>
"#;

fn variant_score(notes: &[(&str, i32, &str)]) -> String {
    let mut body = String::new();
    for (i, chunk) in notes.chunks(3).enumerate() {
        body.push_str(&format!("<measure number=\"{}\">", i + 1));
        if i == 0 {
            body.push_str("<attributes><divisions>1</divisions><clef><sign>G</sign><line>2</line></clef></attributes>");
        }
        for (step, oct, ty) in chunk {
            if *step == "R" {
                body.push_str(&format!("<note><rest/><type>{ty}</type></note>"));
            } else {
                body.push_str(&format!("<note><pitch><step>{step}</step><octave>{oct}</octave></pitch><type>{ty}</type></note>"));
            }
        }
        body.push_str("</measure>");
    }
    format!("<score-partwise><part-list><score-part id=\"P1\"/></part-list><part id=\"P1\">{body}</part></score-partwise>")
}

pub const FIXTURE_VOCAB: &str = "\
expect 6
class gclef rotate
class quarternoteup rotate
class quarternotedown rotate
class halfnoteup rotate
class quarterrest rotate
class barline hflip vflip rotate
shadow gclef
alias fx:G-Clef -> gclef
alias fx:Quarter-Note -> quarternote:stem
alias fx:Half-Note-Up -> halfnoteup
alias fx:Quarter-Rest -> quarterrest
alias fx:Barline -> barline
";

/// Knobs for [`write_project`].
#[derive(Clone, Copy)]
pub struct ProjectOpts {
    pub seed: u64,
    pub per_class: usize,
    pub threshold: usize,
    pub canvas: usize,
    pub base_channels: usize,
    pub style_dim: usize,
    pub steps: u64,
    pub lr_scale: f32,
    pub generate_count: usize,
}

impl ProjectOpts {
    /// The toy-scale configuration used for end-to-end runs.
    pub fn toy() -> Self {
        ProjectOpts {
            seed: 11,
            per_class: 40,
            threshold: 60,
            canvas: 32,
            base_channels: 8,
            style_dim: 32,
            steps: 500,
            lr_scale: 10.0,
            generate_count: 4,
        }
    }

    /// Tiny networks and a handful of steps for plumbing tests.
    pub fn tiny() -> Self {
        ProjectOpts {
            per_class: 12,
            threshold: 16,
            canvas: 16,
            base_channels: 2,
            style_dim: 4,
            steps: 3,
            generate_count: 2,
            ..Self::toy()
        }
    }
}

/// Lays out a complete project (vocabulary, sources, shadow exemplars,
/// scores, reference lines, config) under `dir`; returns the config path.
pub fn write_project(dir: &Path, opts: ProjectOpts) -> PathBuf {
    std::fs::write(dir.join("fixture.vocab"), FIXTURE_VOCAB).unwrap();
    let mut r = rng::rng(opts.seed ^ 0xf1);
    let labels = [
        ("G-Clef", "gclef"),
        ("Quarter-Note", "quarternoteup"),
        ("Quarter-Note", "quarternotedown"),
        ("Half-Note-Up", "halfnoteup"),
        ("Quarter-Rest", "quarterrest"),
        ("Barline", "barline"),
    ];
    for (label, class) in labels {
        for i in 0..opts.per_class {
            // dark ink on light paper, as scanned sources are
            let img = draw_symbol(class, 64, &mut r).invert();
            save_png(&dir.join("sources").join(label).join(format!("{class}-{i:03}.png")), &img).unwrap();
        }
    }
    for i in 0..4 {
        let img = draw_symbol("gclef", 64, &mut r);
        let warped = img.rotate(25.0 + 10.0 * i as f64);
        save_png(&dir.join("shadow/gclef").join(format!("{i}.png")), &warped).unwrap();
    }
    let scores = dir.join("scores");
    std::fs::create_dir_all(&scores).unwrap();
    std::fs::write(scores.join("a_fixture.musicxml"), FIXTURE_SCORE).unwrap();
    let variants: [&[(&str, i32, &str)]; 3] = [
        &[("E", 4, "quarter"), ("C", 5, "quarter"), ("R", 0, "quarter"), ("G", 4, "half"), ("F", 5, "quarter")],
        &[("B", 4, "quarter"), ("A", 4, "quarter"), ("G", 4, "quarter"), ("F", 4, "half"), ("R", 0, "quarter")],
        &[("D", 5, "quarter"), ("E", 5, "quarter"), ("F", 4, "half"), ("R", 0, "quarter"), ("A", 4, "quarter"), ("C", 5, "quarter")],
    ];
    for (i, v) in variants.iter().enumerate() {
        std::fs::write(scores.join(format!("v{i}.musicxml")), variant_score(v)).unwrap();
    }
    for (i, img) in fixture_lines(6, opts.seed ^ 0x2e).iter().enumerate() {
        save_png(&dir.join("reference").join(format!("{i:02}.png")), img).unwrap();
    }
    let s = opts.lr_scale;
    let config = format!(
        r#"seed = {seed}
out = "out"
vocabulary = "fixture.vocab"

[data]
canvas = {canvas}
threshold = {threshold}
max_multiplier = 30
shadow_dir = "shadow"

[[data.sources]]
adapter = "folder"
dataset = "fx"
path = "sources"

[model]
canvas = {canvas}
base_channels = {base}
style_dim = {style}

[train]
lr_discriminator = {lrd:e}
lr_generator = {lrg:e}
lr_classifier = {lrc:e}
total_steps = {steps}
focus_classes = ["gclef", "quarterrest"]
checkpoint_every = 100
shadow_per_batch = 2

[generate]
count = {count}

[engrave]
scores = "scores"

[evaluate]
reference = "reference"
kid_resamples = 20
"#,
        seed = opts.seed,
        canvas = opts.canvas,
        threshold = opts.threshold,
        base = opts.base_channels,
        style = opts.style_dim,
        lrd = 1e-5 * s,
        lrg = 1e-4 * s,
        lrc = 1e-5 * s,
        steps = opts.steps,
        count = opts.generate_count,
    );
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, config).unwrap();
    path
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> std::collections::BTreeMap<PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
