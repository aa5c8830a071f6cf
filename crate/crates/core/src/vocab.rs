//! Canonical symbol taxonomy and source-label aliasing.
//!
//! A vocabulary is loaded from a line-oriented definition:
//!
//! ```text
//! # comment
//! expect 3                              # optional: number of generation classes
//! class gclef                           # no augmentation allowed
//! class quarterrest rotate              # flags: hflip vflip rotate
//! class halfnoteup rotate
//! class halfnotedown rotate
//! shadow gclef                          # registers `gclefbad`
//! alias homus:Eight-Rest -> eightrest
//! alias homus:Half-Note -> halfnote:stem   # split into halfnoteup / halfnotedown
//! ```
//!
//! Generation classes always occupy indices `0..generation_count()`; shadow
//! ("bad") classes are appended after them and only exist on the classifier side.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const SHADOW_SUFFIX: &str = "bad";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolClass {
    pub canonical_name: String,
    pub allow_hflip: bool,
    pub allow_vflip: bool,
    pub allow_rotation: bool,
    pub is_bad_shadow: bool,
    pub base_class: Option<String>,
}

impl SymbolClass {
    pub fn new(name: &str) -> Self {
        SymbolClass {
            canonical_name: name.to_string(),
            allow_hflip: false,
            allow_vflip: false,
            allow_rotation: false,
            is_bad_shadow: false,
            base_class: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StemDirection {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum AliasTarget {
    Class(String),
    /// Stem-direction split: `<prefix>up` / `<prefix>down`.
    Stem(String),
}

/// Per-sample information available while resolving a granularity split.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleContext<'a> {
    pub stem: Option<StemDirection>,
    pub image: Option<&'a GrayImage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassVocabulary {
    classes: Vec<SymbolClass>,
    index: BTreeMap<String, usize>,
    aliases: BTreeMap<(String, String), AliasTarget>,
    generation_count: usize,
}

impl ClassVocabulary {
    /// Builds a vocabulary of generation classes without aliases.
    pub fn from_classes(classes: Vec<SymbolClass>) -> Result<Self> {
        let mut vocab = ClassVocabulary {
            classes: Vec::new(),
            index: BTreeMap::new(),
            aliases: BTreeMap::new(),
            generation_count: 0,
        };
        for (i, mut c) in classes.into_iter().enumerate() {
            if c.is_bad_shadow {
                return Err(Error::VocabularyFormat {
                    line: i + 1,
                    message: "shadow classes must be registered, not listed".into(),
                });
            }
            c.base_class = None;
            vocab.push_class(c, i + 1)?;
        }
        vocab.generation_count = vocab.classes.len();
        Ok(vocab)
    }

    /// Parses the line-oriented definition format (see module docs).
    pub fn parse(text: &str) -> Result<Self> {
        let mut generation = Vec::new();
        let mut shadows = Vec::new();
        let mut aliases = Vec::new();
        let mut expect = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| Error::VocabularyFormat {
                line: line_no,
                message,
            };
            let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            match keyword {
                "expect" => {
                    expect = Some(rest.parse::<usize>().map_err(|_| bad(format!("bad count `{rest}`")))?);
                }
                "class" => {
                    let mut parts = rest.split_whitespace();
                    let name = parts.next().ok_or_else(|| bad("missing class name".into()))?;
                    check_name(name).map_err(bad)?;
                    let mut c = SymbolClass::new(name);
                    for flag in parts {
                        match flag {
                            "hflip" => c.allow_hflip = true,
                            "vflip" => c.allow_vflip = true,
                            "rotate" => c.allow_rotation = true,
                            other => return Err(bad(format!("unknown flag `{other}`"))),
                        }
                    }
                    generation.push((line_no, c));
                }
                "shadow" => {
                    if rest.is_empty() {
                        return Err(bad("missing base class".into()));
                    }
                    shadows.push((line_no, rest.to_string()));
                }
                "alias" => {
                    let (src, dst) = rest
                        .split_once("->")
                        .ok_or_else(|| bad("alias needs `dataset:label -> canonical`".into()))?;
                    let (dataset, label) = src
                        .trim()
                        .split_once(':')
                        .ok_or_else(|| bad("alias source needs `dataset:label`".into()))?;
                    let dst = dst.trim();
                    let target = match dst.split_once(':') {
                        Some((prefix, "stem")) => AliasTarget::Stem(prefix.to_string()),
                        Some((_, other)) => return Err(bad(format!("unknown resolver `{other}`"))),
                        None => AliasTarget::Class(dst.to_string()),
                    };
                    aliases.push((line_no, dataset.trim().to_string(), label.trim().to_string(), target));
                }
                other => return Err(bad(format!("unknown directive `{other}`"))),
            }
        }

        let mut vocab = ClassVocabulary {
            classes: Vec::new(),
            index: BTreeMap::new(),
            aliases: BTreeMap::new(),
            generation_count: 0,
        };
        for (line, c) in generation {
            vocab.push_class(c, line)?;
        }
        vocab.generation_count = vocab.classes.len();
        if let Some(n) = expect {
            if n != vocab.generation_count {
                return Err(Error::VocabularyFormat {
                    line: 0,
                    message: format!("expected {n} generation classes, found {}", vocab.generation_count),
                });
            }
        }
        for (line, base) in shadows {
            vocab = vocab.register_bad_class(&base).map_err(|e| Error::VocabularyFormat {
                line,
                message: e.to_string(),
            })?;
        }
        for (line, dataset, label, target) in aliases {
            let targets: Vec<String> = match &target {
                AliasTarget::Class(c) => vec![c.clone()],
                AliasTarget::Stem(p) => vec![format!("{p}up"), format!("{p}down")],
            };
            for t in &targets {
                match vocab.get(t) {
                    Some(c) if !c.is_bad_shadow => {}
                    _ => {
                        return Err(Error::VocabularyFormat {
                            line,
                            message: format!("alias target `{t}` is not a generation class"),
                        })
                    }
                }
            }
            if vocab.aliases.insert((dataset.clone(), label.clone()), target).is_some() {
                return Err(Error::VocabularyFormat {
                    line,
                    message: format!("duplicate alias {dataset}:{label}"),
                });
            }
        }
        Ok(vocab)
    }

    fn push_class(&mut self, c: SymbolClass, line: usize) -> Result<()> {
        if self.index.contains_key(&c.canonical_name) {
            return Err(Error::VocabularyFormat {
                line,
                message: format!("duplicate class `{}`", c.canonical_name),
            });
        }
        self.index.insert(c.canonical_name.clone(), self.classes.len());
        self.classes.push(c);
        Ok(())
    }

    pub fn classes(&self) -> &[SymbolClass] {
        &self.classes
    }

    pub fn generation_classes(&self) -> &[SymbolClass] {
        &self.classes[..self.generation_count]
    }

    pub fn shadow_classes(&self) -> &[SymbolClass] {
        &self.classes[self.generation_count..]
    }

    /// Number of valid generation targets (length of the content vector).
    pub fn generation_count(&self) -> usize {
        self.generation_count
    }

    /// Number of classifier outputs (generation plus shadow classes).
    pub fn classifier_count(&self) -> usize {
        self.classes.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&SymbolClass> {
        self.index_of(name).map(|i| &self.classes[i])
    }

    pub fn name(&self, index: usize) -> &str {
        &self.classes[index].canonical_name
    }

    /// Index of a class that may be requested from the generator.
    pub fn generation_index(&self, name: &str) -> Result<usize> {
        match self.index_of(name) {
            Some(i) if i < self.generation_count => Ok(i),
            Some(_) => Err(Error::BadShadowTarget(name.to_string())),
            None => Err(Error::UnknownClass(name.to_string())),
        }
    }

    pub fn one_hot(&self, name: &str) -> Result<Vec<f32>> {
        let i = self.generation_index(name)?;
        let mut v = vec![0.0; self.generation_count];
        v[i] = 1.0;
        Ok(v)
    }

    /// Appends `<base>bad` after every existing class; indices of existing
    /// classes are unchanged.
    pub fn register_bad_class(&self, base: &str) -> Result<Self> {
        let base_class = self
            .get(base)
            .ok_or_else(|| Error::UnknownClass(base.to_string()))?;
        if base_class.is_bad_shadow {
            return Err(Error::BadShadowTarget(base.to_string()));
        }
        let name = format!("{base}{SHADOW_SUFFIX}");
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateShadow(base.to_string()));
        }
        let mut next = self.clone();
        next.index.insert(name.clone(), next.classes.len());
        next.classes.push(SymbolClass {
            canonical_name: name,
            allow_hflip: false,
            allow_vflip: false,
            allow_rotation: false,
            is_bad_shadow: true,
            base_class: Some(base.to_string()),
        });
        Ok(next)
    }

    /// Maps a source-dataset label onto its canonical class. Labels declared
    /// with a stem resolver fail with `UnresolvedGranularity`; use
    /// [`canonicalize_with`](Self::canonicalize_with) for those.
    pub fn canonicalize(&self, dataset: &str, label: &str) -> Result<String> {
        self.canonicalize_with(dataset, label, SampleContext::default())
    }

    pub fn canonicalize_with(&self, dataset: &str, label: &str, ctx: SampleContext<'_>) -> Result<String> {
        let key = (dataset.to_string(), label.to_string());
        match self.aliases.get(&key) {
            Some(AliasTarget::Class(c)) => Ok(c.clone()),
            Some(AliasTarget::Stem(prefix)) => {
                let dir = match (ctx.stem, ctx.image) {
                    (Some(d), _) => d,
                    (None, Some(img)) => stem_direction_from_ink(img).ok_or_else(|| {
                        Error::UnresolvedGranularity {
                            label: label.to_string(),
                        }
                    })?,
                    (None, None) => {
                        return Err(Error::UnresolvedGranularity {
                            label: label.to_string(),
                        })
                    }
                };
                Ok(match dir {
                    StemDirection::Up => format!("{prefix}up"),
                    StemDirection::Down => format!("{prefix}down"),
                })
            }
            None => Err(Error::UnknownLabel {
                dataset: dataset.to_string(),
                label: label.to_string(),
            }),
        }
    }

    pub fn alias_count(&self) -> usize {
        self.aliases.len()
    }

    /// Stable 64-bit FNV-1a digest of class names, order and flags.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for c in &self.classes {
            feed(c.canonical_name.as_bytes());
            feed(&[
                c.allow_hflip as u8,
                c.allow_vflip as u8,
                c.allow_rotation as u8,
                c.is_bad_shadow as u8,
                0xff,
            ]);
        }
        h
    }
}

fn check_name(name: &str) -> core::result::Result<(), String> {
    if name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()) && !name.is_empty() {
        Ok(())
    } else {
        Err(format!("class name `{name}` must be lowercase alphanumeric"))
    }
}

/// Guesses stem direction from an ink-positive note image: the notehead is
/// the row band with the most ink, and the stem lies on the side holding more
/// of the remaining ink.
pub fn stem_direction_from_ink(img: &GrayImage) -> Option<StemDirection> {
    let h = img.height();
    if h < 3 {
        return None;
    }
    let rows: Vec<f32> = (0..h)
        .map(|y| (0..img.width()).map(|x| img.get(x, y)).sum())
        .collect();
    let band = (h / 8).max(1);
    let mut best = (0usize, f32::NEG_INFINITY);
    for y in 0..h {
        let lo = y.saturating_sub(band);
        let hi = (y + band + 1).min(h);
        let s: f32 = rows[lo..hi].iter().sum();
        if s > best.1 {
            best = (y, s);
        }
    }
    let head = best.0;
    let lo = head.saturating_sub(band);
    let hi = (head + band + 1).min(h);
    let above: f32 = rows[..lo].iter().sum();
    let below: f32 = rows[hi..].iter().sum();
    if above == below {
        None
    } else if above > below {
        Some(StemDirection::Up)
    } else {
        Some(StemDirection::Down)
    }
}
