//! Staff-line engraving: a symbolic score model, horizontal/vertical layout
//! and compositing of bank exemplars onto a paper background.
//!
//! Line rasters are paper-positive (1.0 = paper, 0.0 = full ink); bank
//! exemplars are ink-positive like every other symbol image in the crate.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, Rect};
use crate::rng;
use crate::vocab::StemDirection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Step {
    C,
    D,
    E,
    F,
    G,
    A,
    B,
}

impl Step {
    pub fn index(self) -> i32 {
        self as i32
    }

    pub fn parse(s: &str) -> Option<Step> {
        Some(match s {
            "C" => Step::C,
            "D" => Step::D,
            "E" => Step::E,
            "F" => Step::F,
            "G" => Step::G,
            "A" => Step::A,
            "B" => Step::B,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Duration {
    Whole,
    Half,
    Quarter,
    Eighth,
}

impl Duration {
    pub fn quarters(self) -> f32 {
        match self {
            Duration::Whole => 4.0,
            Duration::Half => 2.0,
            Duration::Quarter => 1.0,
            Duration::Eighth => 0.5,
        }
    }

    /// MusicXML `<type>` value.
    pub fn parse(s: &str) -> Option<Duration> {
        Some(match s {
            "whole" => Duration::Whole,
            "half" => Duration::Half,
            "quarter" => Duration::Quarter,
            "eighth" => Duration::Eighth,
            _ => return None,
        })
    }

    /// Duration class of `duration` divisions at `divisions` per quarter.
    pub fn from_divisions(duration: u32, divisions: u32) -> Option<Duration> {
        if divisions == 0 {
            return None;
        }
        match (duration * 2).checked_div(divisions)? {
            8 if duration * 2 % divisions == 0 => Some(Duration::Whole),
            4 if duration * 2 % divisions == 0 => Some(Duration::Half),
            2 if duration * 2 % divisions == 0 => Some(Duration::Quarter),
            1 if duration * 2 % divisions == 0 => Some(Duration::Eighth),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accidental {
    Sharp,
    Flat,
    Natural,
}

impl Accidental {
    pub fn class_name(self) -> &'static str {
        match self {
            Accidental::Sharp => "accidentalsharp",
            Accidental::Flat => "accidentalflat",
            Accidental::Natural => "accidentalnatural",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub step: Step,
    pub octave: i32,
    pub alter: i32,
    pub duration: Duration,
    pub accidental: Option<Accidental>,
    pub stem: Option<StemDirection>,
}

impl Note {
    pub fn new(step: Step, octave: i32, duration: Duration) -> Self {
        Note {
            step,
            octave,
            alter: 0,
            duration,
            accidental: None,
            stem: None,
        }
    }

    /// Diatonic step count from C0.
    pub fn diatonic(&self) -> i32 {
        self.octave * 7 + self.step.index()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Event {
    Note(Note),
    Rest { duration: Duration },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClefSign {
    G,
    F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clef {
    pub sign: ClefSign,
    /// Staff line the clef marks, 1 = bottom.
    pub line: u8,
}

impl Clef {
    pub const TREBLE: Clef = Clef { sign: ClefSign::G, line: 2 };
    pub const BASS: Clef = Clef { sign: ClefSign::F, line: 4 };

    pub fn class_name(self) -> &'static str {
        match self.sign {
            ClefSign::G => "gclef",
            ClefSign::F => "fclef",
        }
    }

    /// Diatonic index of the pitch on the bottom staff line.
    pub fn bottom_line_diatonic(self) -> i32 {
        let reference = match self.sign {
            ClefSign::G => 4 * 7 + Step::G.index(),
            ClefSign::F => 3 * 7 + Step::F.index(),
        };
        reference - 2 * (self.line as i32 - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSignature {
    pub beats: u32,
    pub beat_type: u32,
}

impl TimeSignature {
    pub fn class_name(self) -> String {
        format!("timesig{}{}", self.beats, self.beat_type)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpec {
    pub divisions: u32,
    pub clef: Clef,
    pub time: Option<TimeSignature>,
    pub measures: Vec<Measure>,
}

impl ScoreSpec {
    pub fn note_count(&self) -> usize {
        self.events().filter(|e| matches!(e, Event::Note(_))).count()
    }

    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.measures.iter().flat_map(|m| m.events.iter())
    }
}

/// Staff geometry in pixels. Pitch positions count half staff spaces up
/// from the bottom line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geometry {
    pub staff_space: f32,
    pub height: usize,
    /// y of the top staff line.
    pub top_line: f32,
    pub left_margin: f32,
    pub right_margin: f32,
    /// Advance of a quarter note; other durations scale proportionally.
    pub quarter_advance: f32,
    pub min_spacing: f32,
    pub line_thickness: f32,
    /// Lowest and highest allowed pitch positions.
    pub min_position: i32,
    pub max_position: i32,
    /// Horizontal jitter applied to each placement, in pixels.
    pub jitter: f32,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            staff_space: 10.0,
            height: 128,
            top_line: 44.0,
            left_margin: 20.0,
            right_margin: 20.0,
            quarter_advance: 30.0,
            min_spacing: 25.0,
            line_thickness: 1.5,
            min_position: -6,
            max_position: 14,
            jitter: 1.5,
        }
    }
}

impl Geometry {
    pub fn bottom_line(&self) -> f32 {
        self.top_line + 4.0 * self.staff_space
    }

    pub fn middle_line(&self) -> f32 {
        self.top_line + 2.0 * self.staff_space
    }

    pub fn y_of_position(&self, p: i32) -> f32 {
        self.bottom_line() - p as f32 * self.staff_space / 2.0
    }

    /// y of staff line `line` (1 = bottom).
    pub fn y_of_line(&self, line: u8) -> f32 {
        self.y_of_position(2 * (line as i32 - 1))
    }

    pub fn advance(&self, d: Duration) -> f32 {
        (self.quarter_advance * d.quarters()).max(self.min_spacing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementKind {
    Clef,
    TimeSignature,
    Accidental,
    Note,
    Rest,
    Barline,
}

/// A symbol to draw with its anchor at `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub class_name: String,
    pub kind: PlacementKind,
    pub x: f32,
    pub y: f32,
    /// Staff space in pixels; bank heights are expressed in staff spaces.
    pub scale: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerLine {
    pub x0: f32,
    pub x1: f32,
    pub y: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub placements: Vec<Placement>,
    pub ledger_lines: Vec<LedgerLine>,
    pub width: usize,
}

fn note_class(d: Duration, stem: StemDirection) -> String {
    let base = match d {
        Duration::Whole => return "wholenote".to_string(),
        Duration::Half => "halfnote",
        Duration::Quarter => "quarternote",
        Duration::Eighth => "eighthnote",
    };
    let dir = match stem {
        StemDirection::Up => "up",
        StemDirection::Down => "down",
    };
    format!("{base}{dir}")
}

fn rest_class(d: Duration) -> &'static str {
    match d {
        Duration::Whole => "wholerest",
        Duration::Half => "halfrest",
        Duration::Quarter => "quarterrest",
        Duration::Eighth => "eightrest",
    }
}

/// Positions every symbol of `score` on one staff line.
pub fn layout(score: &ScoreSpec, geo: &Geometry) -> Result<Layout> {
    let ss = geo.staff_space;
    let bottom = score.clef.bottom_line_diatonic();
    let mut placements = Vec::new();
    let mut ledger_lines = Vec::new();
    let mut x = geo.left_margin;
    let mut place = |class_name: String, kind, x: f32, y: f32| {
        placements.push(Placement {
            class_name,
            kind,
            x,
            y,
            scale: ss,
        })
    };

    x += 1.5 * ss;
    place(score.clef.class_name().to_string(), PlacementKind::Clef, x, geo.y_of_line(score.clef.line));
    x += 3.5 * ss;
    if let Some(t) = score.time {
        place(t.class_name(), PlacementKind::TimeSignature, x, geo.middle_line());
        x += 3.0 * ss;
    }
    x += 0.5 * ss;
    for measure in &score.measures {
        for event in &measure.events {
            match event {
                Event::Note(n) => {
                    let p = n.diatonic() - bottom;
                    if p < geo.min_position || p > geo.max_position {
                        return Err(Error::PitchOutOfRange(format!(
                            "{:?}{} lies {p} half-spaces from the bottom line (allowed {}..={})",
                            n.step, n.octave, geo.min_position, geo.max_position
                        )));
                    }
                    let y = geo.y_of_position(p);
                    if let Some(a) = n.accidental {
                        x += 0.8 * ss;
                        place(a.class_name().to_string(), PlacementKind::Accidental, x, y);
                        x += 1.4 * ss;
                    } else {
                        x += 0.8 * ss;
                    }
                    let stem = n.stem.unwrap_or(if p < 4 { StemDirection::Up } else { StemDirection::Down });
                    place(note_class(n.duration, stem), PlacementKind::Note, x, y);
                    let mut ledgers = Vec::new();
                    let mut q = -2;
                    while q >= p {
                        ledgers.push(q);
                        q -= 2;
                    }
                    let mut q = 10;
                    while q <= p {
                        ledgers.push(q);
                        q += 2;
                    }
                    for q in ledgers {
                        ledger_lines.push(LedgerLine {
                            x0: x - 1.0 * ss,
                            x1: x + 1.0 * ss,
                            y: geo.y_of_position(q),
                        });
                    }
                    x += geo.advance(n.duration) - 0.8 * ss;
                }
                Event::Rest { duration } => {
                    x += 0.8 * ss;
                    let y = match duration {
                        Duration::Whole => geo.y_of_line(4) + 0.25 * ss,
                        Duration::Half => geo.y_of_line(3) - 0.25 * ss,
                        _ => geo.middle_line(),
                    };
                    place(rest_class(*duration).to_string(), PlacementKind::Rest, x, y);
                    x += geo.advance(*duration) - 0.8 * ss;
                }
            }
        }
        x += 0.5 * ss;
        place("barline".to_string(), PlacementKind::Barline, x, geo.middle_line());
        x += 1.5 * ss;
    }
    let width = libm::ceilf(x + geo.right_margin) as usize;
    Ok(Layout {
        placements,
        ledger_lines,
        width,
    })
}

/// One bank exemplar: ink-positive image, anchor in its pixel coordinates,
/// and the ink height it should have on the staff, in staff spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub image: GrayImage,
    pub anchor: (f32, f32),
    pub height_staff_spaces: f32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymbolBank {
    pub classes: BTreeMap<String, Vec<BankEntry>>,
}

impl SymbolBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, class_name: &str, entry: BankEntry) {
        self.classes.entry(class_name.to_string()).or_default().push(entry);
    }

    pub fn is_empty(&self) -> bool {
        self.classes.values().all(|v| v.is_empty())
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(|v| v.len()).sum()
    }
}

/// Ink threshold for trimming exemplars and measuring placed ink.
pub const INK_THRESHOLD: f32 = 0.1;

/// Nominal ink height of a class in staff spaces.
pub fn nominal_height(class_name: &str) -> f32 {
    match class_name {
        "gclef" => 7.0,
        "fclef" => 3.2,
        "wholenote" | "noteheadfull" | "noteheadempty" => 1.0,
        "wholerest" | "halfrest" => 0.5,
        "quarterrest" => 3.0,
        "eightrest" => 2.0,
        "barline" => 4.0,
        "accidentalsharp" | "accidentalnatural" => 2.8,
        "accidentalflat" => 2.4,
        n if n.starts_with("timesig") => 4.0,
        n if n.ends_with("noteup") || n.ends_with("notedown") => 3.5,
        _ => 2.0,
    }
}

/// Ink bounding box, or the whole image when nothing passes the threshold.
fn ink_bbox(img: &GrayImage) -> Rect {
    img.bbox_above(INK_THRESHOLD).unwrap_or(Rect {
        x: 0,
        y: 0,
        w: img.width(),
        h: img.height(),
    })
}

fn ink_centroid_x(img: &GrayImage, rows: core::ops::Range<usize>) -> Option<f32> {
    let (mut sx, mut sw) = (0.0, 0.0);
    for y in rows {
        for x in 0..img.width() {
            let v = img.get(x, y);
            if v > INK_THRESHOLD {
                sx += v * (x as f32 + 0.5);
                sw += v;
            }
        }
    }
    (sw > 0.0).then(|| sx / sw)
}

/// Anchor and nominal height for an exemplar without an anchor record:
/// noteheads of stemmed notes sit at the far end from the stem tip, clefs
/// anchor on their reference line, everything else on its ink center.
pub fn default_anchor(class_name: &str, image: &GrayImage) -> ((f32, f32), f32) {
    let r = ink_bbox(image);
    let (top, bottom) = (r.y as f32, (r.y + r.h) as f32);
    let h = r.h as f32;
    let cx = r.x as f32 + r.w as f32 / 2.0;
    let quarter = (r.h / 4).max(1);
    let anchor = if class_name.ends_with("noteup") {
        let rows = r.y + r.h - quarter..r.y + r.h;
        (ink_centroid_x(image, rows).unwrap_or(cx), bottom - h / 8.0)
    } else if class_name.ends_with("notedown") {
        let rows = r.y..r.y + quarter;
        (ink_centroid_x(image, rows).unwrap_or(cx), top + h / 8.0)
    } else if class_name == "gclef" {
        (cx, top + 0.64 * h)
    } else if class_name == "fclef" {
        (cx, top + 0.3 * h)
    } else {
        (cx, top + h / 2.0)
    };
    (anchor, nominal_height(class_name))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_name: String,
    pub kind: PlacementKind,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngravedLine {
    pub image: GrayImage,
    pub annotations: Vec<Annotation>,
}

fn paper(width: usize, height: usize, background: Option<&GrayImage>) -> GrayImage {
    match background {
        Some(bg) if !bg.is_empty() => GrayImage::from_fn(width, height, |x, y| bg.get(x % bg.width(), y % bg.height()).clamp(0.0, 1.0)),
        _ => GrayImage::filled(width, height, 1.0),
    }
}

/// Multiplies `ink` (ink-positive) into the paper-positive `page`.
fn darken(page: &mut GrayImage, ink: &GrayImage, x0: isize, y0: isize) {
    page.blend_from(ink, x0, y0, |p, i| p * (1.0 - i.clamp(0.0, 1.0)));
}

fn draw_hline(page: &mut GrayImage, x0: f32, x1: f32, y: f32, thickness: f32) {
    let (w, h) = page.dims();
    let ya = libm::floorf(y - thickness / 2.0).max(0.0) as usize;
    let yb = (libm::ceilf(y + thickness / 2.0) as usize).min(h);
    let xa = x0.max(0.0) as usize;
    let xb = (libm::ceilf(x1) as usize).min(w);
    for py in ya..yb {
        // coverage of the pixel row by the line band
        let cov = ((py as f32 + 1.0).min(y + thickness / 2.0) - (py as f32).max(y - thickness / 2.0)).clamp(0.0, 1.0);
        for px in xa..xb {
            let v = page.get(px, py);
            page.set(px, py, v * (1.0 - 0.9 * cov));
        }
    }
}

/// Composites `score` from `bank` exemplars. Exemplar choice and jitter
/// come from `seed`, so the output is a pure function of the inputs.
pub fn engrave(score: &ScoreSpec, bank: &SymbolBank, background: Option<&GrayImage>, geo: &Geometry, seed: u64) -> Result<EngravedLine> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let lay = layout(score, geo)?;
    for p in &lay.placements {
        if bank.classes.get(&p.class_name).is_none_or(|v| v.is_empty()) {
            return Err(Error::MissingSymbolClass(p.class_name.clone()));
        }
    }
    let mut page = paper(lay.width, geo.height, background);
    for line in 1..=5u8 {
        draw_hline(&mut page, geo.left_margin, lay.width as f32 - geo.right_margin, geo.y_of_line(line), geo.line_thickness);
    }
    for l in &lay.ledger_lines {
        draw_hline(&mut page, l.x0, l.x1, l.y, geo.line_thickness);
    }
    let mut r = rng::rng(rng::derive(seed, "engrave"));
    let mut annotations = Vec::with_capacity(lay.placements.len());
    for p in &lay.placements {
        let entries = &bank.classes[&p.class_name];
        let entry = &entries[r.random_range(0..entries.len())];
        let jitter = if geo.jitter > 0.0 { r.random_range(-geo.jitter..=geo.jitter) } else { 0.0 };
        if entry.image.is_empty() {
            return Err(Error::EmptyImage);
        }
        let bbox = ink_bbox(&entry.image);
        let trimmed = entry.image.crop(bbox);
        let scale = entry.height_staff_spaces * p.scale / bbox.h as f32;
        let tw = libm::roundf(trimmed.width() as f32 * scale).max(1.0) as usize;
        let th = libm::roundf(trimmed.height() as f32 * scale).max(1.0) as usize;
        let ink = trimmed.resize(tw, th);
        let ax = (entry.anchor.0 - bbox.x as f32) * tw as f32 / trimmed.width() as f32;
        let ay = (entry.anchor.1 - bbox.y as f32) * th as f32 / trimmed.height() as f32;
        let x0 = libm::roundf(p.x + jitter - ax) as isize;
        let y0 = libm::roundf(p.y - ay) as isize;
        darken(&mut page, &ink, x0, y0);
        let placed = ink.bbox_above(INK_THRESHOLD).unwrap_or(Rect { x: 0, y: 0, w: tw, h: th });
        let bx0 = (x0 + placed.x as isize).max(0);
        let by0 = (y0 + placed.y as isize).max(0);
        let bx1 = (x0 + (placed.x + placed.w) as isize).min(lay.width as isize);
        let by1 = (y0 + (placed.y + placed.h) as isize).min(geo.height as isize);
        if bx1 <= bx0 || by1 <= by0 {
            return Err(Error::InvalidConfig(format!("{} placed outside the line raster", p.class_name)));
        }
        annotations.push(Annotation {
            class_name: p.class_name.clone(),
            kind: p.kind,
            x: bx0 as usize,
            y: by0 as usize,
            w: (bx1 - bx0) as usize,
            h: (by1 - by0) as usize,
        });
    }
    Ok(EngravedLine { image: page, annotations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn score(events: Vec<Event>, measures: usize) -> ScoreSpec {
        ScoreSpec {
            divisions: 1,
            clef: Clef::TREBLE,
            time: None,
            measures: (0..measures).map(|_| Measure { events: events.clone() }).collect(),
        }
    }

    fn note(step: Step, octave: i32) -> Event {
        Event::Note(Note::new(step, octave, Duration::Quarter))
    }

    #[test]
    fn pitch_geometry() {
        let geo = Geometry::default();
        let lay = layout(&score(vec![note(Step::B, 4), note(Step::E, 4), note(Step::F, 5)], 1), &geo).unwrap();
        let notes: Vec<_> = lay.placements.iter().filter(|p| p.kind == PlacementKind::Note).collect();
        assert_eq!(notes[0].y, geo.middle_line());
        assert_eq!(notes[0].y, 64.0);
        assert_eq!(notes[1].y, 84.0);
        assert_eq!(notes[2].y, 44.0);
        assert_eq!(notes[0].class_name, "quarternotedown");
        assert_eq!(notes[1].class_name, "quarternoteup");
        assert_eq!(lay.placements[0].y, 74.0);

        let bass = ScoreSpec {
            clef: Clef::BASS,
            ..score(vec![note(Step::G, 2)], 1)
        };
        let lay = layout(&bass, &geo).unwrap();
        assert_eq!(lay.placements[0].class_name, "fclef");
        assert_eq!(lay.placements[0].y, 54.0);
        assert_eq!(lay.placements[1].y, 84.0);
    }

    #[test]
    fn stem_hint_and_range() {
        let geo = Geometry::default();
        let mut n = Note::new(Step::C, 5, Duration::Half);
        n.stem = Some(StemDirection::Up);
        let lay = layout(&score(vec![Event::Note(n)], 1), &geo).unwrap();
        assert_eq!(lay.placements[1].class_name, "halfnoteup");
        assert!(matches!(layout(&score(vec![note(Step::F, 6)], 1), &geo), Err(Error::PitchOutOfRange(_))));
        assert!(layout(&score(vec![note(Step::E, 6)], 1), &geo).is_ok());
        assert!(layout(&score(vec![note(Step::F, 3)], 1), &geo).is_ok());
        assert!(layout(&score(vec![note(Step::E, 3)], 1), &geo).is_err());
        let lay = layout(&score(vec![note(Step::C, 4)], 1), &geo).unwrap();
        assert_eq!(lay.ledger_lines.len(), 1);
        assert_eq!(lay.ledger_lines[0].y, 94.0);
    }

    #[test]
    fn barlines_and_monotone_x() {
        let geo = Geometry::default();
        let mut sharp = Note::new(Step::F, 4, Duration::Eighth);
        sharp.accidental = Some(Accidental::Sharp);
        let ev = vec![Event::Note(sharp), Event::Rest { duration: Duration::Whole }, note(Step::A, 4)];
        let mut s = score(ev, 2);
        s.time = Some(TimeSignature { beats: 3, beat_type: 4 });
        let lay = layout(&s, &geo).unwrap();
        assert_eq!(lay.placements.iter().filter(|p| p.kind == PlacementKind::Barline).count(), 2);
        assert!(lay.placements.windows(2).all(|w| w[0].x < w[1].x));
        assert_eq!(lay.placements[1].class_name, "timesig34");
        assert!(lay.placements.last().unwrap().x < lay.width as f32);
    }

    #[test]
    fn duration_from_divisions() {
        assert_eq!(Duration::from_divisions(4, 1), Some(Duration::Whole));
        assert_eq!(Duration::from_divisions(1, 2), Some(Duration::Eighth));
        assert_eq!(Duration::from_divisions(3, 2), None);
    }
}
