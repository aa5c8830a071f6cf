//! A partwise MusicXML subset: one part, one staff, single voice.
//!
//! Supported: `divisions`, `clef` (G or F), `time`, notes with `pitch`,
//! `type` or `duration`, `stem`, `accidental`, and rests. Everything else
//! is skipped and reported as a warning.

use roxmltree::{Document, Node};
use symgan_core::engraver::{Accidental, Clef, ClefSign, Duration, Event, Measure, Note, ScoreSpec, Step, TimeSignature};
use symgan_core::vocab::StemDirection;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScore {
    pub score: ScoreSpec,
    pub warnings: Vec<String>,
}

fn child<'a, 'i>(n: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    n.children().find(|c| c.has_tag_name(name))
}

fn child_text<'a>(n: Node<'a, '_>, name: &str) -> Option<&'a str> {
    child(n, name).and_then(|c| c.text()).map(str::trim)
}

fn parse_num<T: std::str::FromStr>(n: Node, name: &str) -> Result<Option<T>> {
    match child_text(n, name) {
        None => Ok(None),
        Some(t) => t
            .parse()
            .map(Some)
            .map_err(|_| Error::MalformedDocument(format!("<{name}> has non-numeric value `{t}`"))),
    }
}

struct State {
    divisions: u32,
    clef: Option<Clef>,
    time: Option<TimeSignature>,
    started: bool,
    warnings: Vec<String>,
}

impl State {
    fn warn(&mut self, measure: &str, msg: impl AsRef<str>) {
        self.warnings.push(format!("measure {measure}: {}", msg.as_ref()));
    }
}

pub fn parse_musicxml(text: &str) -> Result<ParsedScore> {
    let doc = Document::parse(text).map_err(|e| Error::MalformedDocument(e.to_string()))?;
    let root = doc.root_element();
    match root.tag_name().name() {
        "score-partwise" => {}
        "score-timewise" => return Err(Error::UnsupportedStructure("timewise layout".into())),
        other => return Err(Error::MalformedDocument(format!("unexpected root <{other}>"))),
    }
    let parts: Vec<Node> = root.children().filter(|c| c.has_tag_name("part")).collect();
    let declared = child(root, "part-list").map_or(0, |pl| pl.children().filter(|c| c.has_tag_name("score-part")).count());
    if parts.len() > 1 || declared > 1 {
        return Err(Error::UnsupportedStructure(format!("{} parts", parts.len().max(declared))));
    }
    let mut st = State {
        divisions: 1,
        clef: None,
        time: None,
        started: false,
        warnings: Vec::new(),
    };
    let mut measures = Vec::new();
    if let Some(part) = parts.first() {
        for m in part.children().filter(|c| c.is_element()) {
            if !m.has_tag_name("measure") {
                st.warnings.push(format!("skipped <{}> in part", m.tag_name().name()));
                continue;
            }
            measures.push(parse_measure(m, &mut st)?);
        }
    }
    let clef = match st.clef {
        Some(c) => c,
        None => {
            if !measures.is_empty() {
                st.warnings.push("no clef given; assuming treble".into());
            }
            Clef::TREBLE
        }
    };
    Ok(ParsedScore {
        score: ScoreSpec {
            divisions: st.divisions,
            clef,
            time: st.time,
            measures,
        },
        warnings: st.warnings,
    })
}

fn parse_measure(m: Node, st: &mut State) -> Result<Measure> {
    let number = m.attribute("number").unwrap_or("?").to_string();
    let mut measure = Measure::default();
    for el in m.children().filter(|c| c.is_element()) {
        match el.tag_name().name() {
            "attributes" => parse_attributes(el, &number, st)?,
            "note" => {
                if let Some(ev) = parse_note(el, &number, st)? {
                    st.started = true;
                    measure.events.push(ev);
                }
            }
            other => st.warn(&number, format!("skipped <{other}>")),
        }
    }
    Ok(measure)
}

fn parse_attributes(a: Node, number: &str, st: &mut State) -> Result<()> {
    for el in a.children().filter(|c| c.is_element()) {
        match el.tag_name().name() {
            "divisions" => {
                let d: u32 = parse_num(a, "divisions")?.unwrap_or(1);
                if d == 0 {
                    return Err(Error::MalformedDocument("divisions must be positive".into()));
                }
                st.divisions = d;
            }
            "staves" => {
                let n: u32 = parse_num(a, "staves")?.unwrap_or(1);
                if n > 1 {
                    return Err(Error::UnsupportedStructure(format!("{n} staves")));
                }
            }
            "clef" => {
                let sign = child_text(el, "sign").unwrap_or("");
                let clef = match sign {
                    "G" => Clef {
                        sign: ClefSign::G,
                        line: parse_num(el, "line")?.unwrap_or(2),
                    },
                    "F" => Clef {
                        sign: ClefSign::F,
                        line: parse_num(el, "line")?.unwrap_or(4),
                    },
                    other => {
                        st.warn(number, format!("unsupported clef sign `{other}` skipped"));
                        continue;
                    }
                };
                if !(1..=5).contains(&clef.line) {
                    return Err(Error::MalformedDocument(format!("clef line {} outside 1..=5", clef.line)));
                }
                if st.started || st.clef.is_some() {
                    st.warn(number, "clef change ignored");
                } else {
                    st.clef = Some(clef);
                }
            }
            "time" => {
                let beats = parse_num(el, "beats")?;
                let beat_type = parse_num(el, "beat-type")?;
                match (beats, beat_type) {
                    (Some(beats), Some(beat_type)) if !st.started && st.time.is_none() => st.time = Some(TimeSignature { beats, beat_type }),
                    (Some(_), Some(_)) => st.warn(number, "time signature change ignored"),
                    _ => st.warn(number, "time signature without beats/beat-type skipped"),
                }
            }
            other => st.warn(number, format!("skipped <{other}> in attributes")),
        }
    }
    Ok(())
}

fn parse_note(n: Node, number: &str, st: &mut State) -> Result<Option<Event>> {
    for flag in ["chord", "grace", "cue"] {
        if child(n, flag).is_some() {
            st.warn(number, format!("{flag} note skipped"));
            return Ok(None);
        }
    }
    if let Some(v) = child_text(n, "voice") {
        if v != "1" {
            st.warn(number, format!("voice {v} skipped"));
            return Ok(None);
        }
    }
    if let Some(s) = child_text(n, "staff") {
        if s != "1" {
            return Err(Error::UnsupportedStructure(format!("note on staff {s}")));
        }
    }
    let duration = match child_text(n, "type") {
        Some(t) => Duration::parse(t),
        None => match parse_num::<u32>(n, "duration")? {
            Some(d) => Duration::from_divisions(d, st.divisions),
            None => None,
        },
    };
    let Some(duration) = duration else {
        st.warn(number, "unsupported duration skipped");
        return Ok(None);
    };
    if child(n, "dot").is_some() {
        st.warn(number, "augmentation dot ignored");
    }
    if child(n, "rest").is_some() {
        return Ok(Some(Event::Rest { duration }));
    }
    let Some(pitch) = child(n, "pitch") else {
        st.warn(number, "unpitched note skipped");
        return Ok(None);
    };
    let step_text = child_text(pitch, "step").ok_or_else(|| Error::MalformedDocument(format!("measure {number}: pitch without step")))?;
    let step = Step::parse(step_text).ok_or_else(|| Error::MalformedDocument(format!("measure {number}: bad step `{step_text}`")))?;
    let octave: i32 = parse_num(pitch, "octave")?.ok_or_else(|| Error::MalformedDocument(format!("measure {number}: pitch without octave")))?;
    let alter: f64 = parse_num(pitch, "alter")?.unwrap_or(0.0);
    let mut note = Note::new(step, octave, duration);
    note.alter = alter.round() as i32;
    note.accidental = match child_text(n, "accidental") {
        Some("sharp") => Some(Accidental::Sharp),
        Some("flat") => Some(Accidental::Flat),
        Some("natural") => Some(Accidental::Natural),
        Some(other) => {
            st.warn(number, format!("accidental `{other}` skipped"));
            None
        }
        None => match note.alter {
            0 => None,
            1 => Some(Accidental::Sharp),
            -1 => Some(Accidental::Flat),
            a => {
                st.warn(number, format!("alter {a} has no accidental class"));
                None
            }
        },
    };
    note.stem = match child_text(n, "stem") {
        Some("up") => Some(StemDirection::Up),
        Some("down") => Some(StemDirection::Down),
        _ => None,
    };
    Ok(Some(Event::Note(note)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_NOTE: &str = r#"<?xml version="1.0"?>
<score-partwise version="4.0">
  <part-list><score-part id="P1"><part-name>M</part-name></score-part></part-list>
  <part id="P1">
    <measure number="1">
      <attributes><divisions>1</divisions><clef><sign>G</sign><line>2</line></clef></attributes>
      <note><pitch><step>C</step><octave>5</octave></pitch><duration>1</duration><type>quarter</type></note>
    </measure>
  </part>
</score-partwise>"#;

    #[test]
    fn single_quarter_note() {
        let p = parse_musicxml(ONE_NOTE).unwrap();
        assert_eq!(p.score.measures.len(), 1);
        assert_eq!(p.score.measures[0].events, vec![Event::Note(Note::new(Step::C, 5, Duration::Quarter))]);
        assert_eq!(p.score.clef, Clef::TREBLE);
        assert!(p.warnings.is_empty(), "{:?}", p.warnings);
    }

    #[test]
    fn empty_part_has_no_measures() {
        let p = parse_musicxml(r#"<score-partwise><part-list><score-part id="P1"/></part-list><part id="P1"/></score-partwise>"#).unwrap();
        assert!(p.score.measures.is_empty());
    }

    #[test]
    fn two_parts_are_unsupported() {
        let doc = r#"<score-partwise><part-list><score-part id="P1"/><score-part id="P2"/></part-list><part id="P1"/><part id="P2"/></score-partwise>"#;
        assert!(matches!(parse_musicxml(doc), Err(Error::UnsupportedStructure(_))));
        let doc = r#"<score-partwise><part id="P1"><measure number="1"><attributes><staves>2</staves></attributes></measure></part></score-partwise>"#;
        assert!(matches!(parse_musicxml(doc), Err(Error::UnsupportedStructure(_))));
    }

    #[test]
    fn malformed_input() {
        assert!(matches!(parse_musicxml("<score-partwise><part>"), Err(Error::MalformedDocument(_))));
        assert!(matches!(parse_musicxml("<opus/>"), Err(Error::MalformedDocument(_))));
    }

    #[test]
    fn alter_accidentals_durations_and_warnings() {
        let doc = r#"<score-partwise><part id="P1"><measure number="1">
          <attributes><divisions>2</divisions><key><fifths>0</fifths></key><clef><sign>F</sign><line>4</line></clef><time><beats>3</beats><beat-type>4</beat-type></time></attributes>
          <note><pitch><step>F</step><alter>1</alter><octave>3</octave></pitch><duration>1</duration><stem>up</stem></note>
          <note><pitch><step>B</step><alter>-1</alter><octave>2</octave></pitch><duration>2</duration><accidental>natural</accidental></note>
          <note><chord/><pitch><step>D</step><octave>3</octave></pitch><duration>2</duration></note>
          <note><rest/><duration>8</duration></note>
          <note><pitch><step>G</step><octave>3</octave></pitch><duration>3</duration></note>
          <direction/>
        </measure></part></score-partwise>"#;
        let p = parse_musicxml(doc).unwrap();
        assert_eq!(p.score.clef, Clef::BASS);
        assert_eq!(p.score.time, Some(TimeSignature { beats: 3, beat_type: 4 }));
        let ev = &p.score.measures[0].events;
        assert_eq!(ev.len(), 3);
        match &ev[0] {
            Event::Note(n) => {
                assert_eq!((n.duration, n.accidental, n.stem), (Duration::Eighth, Some(Accidental::Sharp), Some(StemDirection::Up)));
            }
            e => panic!("{e:?}"),
        }
        match &ev[1] {
            Event::Note(n) => assert_eq!((n.alter, n.accidental), (-1, Some(Accidental::Natural))),
            e => panic!("{e:?}"),
        }
        assert_eq!(ev[2], Event::Rest { duration: Duration::Whole });
        // key, chord, dotted-quarter duration and direction
        assert_eq!(p.warnings.len(), 4, "{:?}", p.warnings);
    }
}
