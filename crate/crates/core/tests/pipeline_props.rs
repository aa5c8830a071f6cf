use proptest::prelude::*;

use symgan_core::engraver::{self, BankEntry, Clef, Duration, Event, Geometry, Measure, Note, PlacementKind, ScoreSpec, Step, SymbolBank};
use symgan_core::image::GrayImage;
use symgan_core::metrics;
use symgan_core::rng;
use symgan_core::trainer::{schedule_mode, ssim, swap_count, swap_labels, Mode};

fn image(w: usize, h: usize, data: Vec<f32>) -> GrayImage {
    GrayImage::from_vec(w, h, data)
}

fn blob(w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| if x > 0 && y > 0 && x + 1 < w && y + 1 < h { 1.0 } else { 0.0 })
}

fn full_bank() -> SymbolBank {
    let mut bank = SymbolBank::new();
    let names = [
        "gclef", "fclef", "wholenote", "halfnoteup", "halfnotedown", "quarternoteup", "quarternotedown", "eighthnoteup",
        "eighthnotedown", "wholerest", "halfrest", "quarterrest", "eightrest", "barline", "accidentalsharp",
        "accidentalflat", "accidentalnatural", "timesig44",
    ];
    for (i, n) in names.iter().enumerate() {
        for k in 0..2 {
            let img = blob(8 + (i + k) % 5, 12 + k);
            let (anchor, height) = engraver::default_anchor(n, &img);
            bank.insert(n, BankEntry { image: img, anchor, height_staff_spaces: height });
        }
    }
    bank
}

fn arb_event() -> impl Strategy<Value = Event> {
    let dur = prop_oneof![Just(Duration::Whole), Just(Duration::Half), Just(Duration::Quarter), Just(Duration::Eighth)];
    prop_oneof![
        // diatonic index between F3 and E6, valid on both clefs after the shift below
        (24i32..45, dur.clone(), 0i32..4).prop_map(|(di, d, a)| {
            let steps = [Step::C, Step::D, Step::E, Step::F, Step::G, Step::A, Step::B];
            let mut n = Note::new(steps[(di % 7) as usize], di / 7, d);
            n.accidental = [None, Some(engraver::Accidental::Sharp), Some(engraver::Accidental::Flat), Some(engraver::Accidental::Natural)][a as usize];
            Event::Note(n)
        }),
        dur.prop_map(|duration| Event::Rest { duration }),
    ]
}

fn lower_twelfth(e: Event) -> Event {
    match e {
        Event::Note(mut n) => {
            let steps = [Step::C, Step::D, Step::E, Step::F, Step::G, Step::A, Step::B];
            let di = n.diatonic() - 12;
            n.step = steps[(di % 7) as usize];
            n.octave = di / 7;
            Event::Note(n)
        }
        rest => rest,
    }
}

fn arb_score() -> impl Strategy<Value = ScoreSpec> {
    (prop::collection::vec(prop::collection::vec(arb_event(), 1..5), 1..4), any::<bool>()).prop_map(|(ms, bass)| ScoreSpec {
        divisions: 1,
        clef: if bass { Clef::BASS } else { Clef::TREBLE },
        time: None,
        measures: ms
            .into_iter()
            .map(|events| Measure {
                events: events.into_iter().map(|e| if bass { lower_twelfth(e) } else { e }).collect(),
            })
            .collect(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_counts_match_cycle_ratio(std_c in 0u64..20, foc in 0u64..20, reps in 1u64..5) {
        prop_assume!(std_c + foc > 0);
        let total = (std_c + foc) * reps;
        let focused = (0..total).filter(|&s| schedule_mode(s, std_c, foc).unwrap() == Mode::Focused).count() as u64;
        prop_assert_eq!(focused, foc * reps);
    }

    #[test]
    fn swap_preserves_multiset(labels in prop::collection::vec(0u8..6, 0..40), frac in 0.0f64..1.0, seed in any::<u64>()) {
        let mut r = rng::rng(seed);
        let out = swap_labels(&labels, frac, &mut r).unwrap();
        let (mut a, mut b) = (labels.clone(), out.clone());
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
        let moved = labels.iter().zip(&out).filter(|(x, y)| x != y).count();
        prop_assert!(moved <= swap_count(labels.len(), frac));
    }

    #[test]
    fn swap_with_distinct_labels_moves_exact_count(n in 0usize..40, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let labels: Vec<usize> = (0..n).collect();
        let out = swap_labels(&labels, frac, &mut rng::rng(seed)).unwrap();
        let moved = labels.iter().zip(&out).filter(|(x, y)| x != y).count();
        prop_assert_eq!(moved, swap_count(n, frac));
    }

    #[test]
    fn ssim_bounded_and_symmetric(w in 4usize..20, h in 4usize..20, seed in any::<u64>()) {
        use rand::Rng as _;
        let mut r = rng::rng(seed);
        let a = image(w, h, (0..w * h).map(|_| r.random::<f32>()).collect());
        let b = image(w, h, (0..w * h).map(|_| r.random::<f32>()).collect());
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-9);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn metrics_ignore_order(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 6..12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng::rng(seed));
        let other: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * 0.5 + 1.0).collect()).collect();
        prop_assert!((metrics::fid(&rows, &other).unwrap() - metrics::fid(&shuffled, &other).unwrap()).abs() < 1e-6);
        prop_assert!((metrics::kid(&rows, &other).unwrap() - metrics::kid(&shuffled, &other).unwrap()).abs() < 1e-9);
        prop_assert!((metrics::hwd(&rows, &other).unwrap() - metrics::hwd(&shuffled, &other).unwrap()).abs() < 1e-9);
        prop_assert!(metrics::fid(&rows, &rows).unwrap().abs() < 1e-6);
        prop_assert!(metrics::fid(&rows, &other).unwrap() >= -1e-9);
    }

    #[test]
    fn binarize_is_binary(w in 2usize..24, h in 2usize..24, seed in any::<u64>()) {
        use rand::Rng as _;
        let mut r = rng::rng(seed);
        let img = image(w, h, (0..w * h).map(|_| r.random::<f32>()).collect());
        let b = metrics::binarize(&img).unwrap();
        prop_assert!(b.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert!(b.data().iter().filter(|&&v| v == 1.0).count() * 2 <= w * h);
    }

    #[test]
    fn layout_is_monotone_and_counts_events(score in arb_score()) {
        let geo = Geometry::default();
        let lay = engraver::layout(&score, &geo).unwrap();
        prop_assert!(lay.placements.windows(2).all(|w| w[0].x < w[1].x));
        let count = |k| lay.placements.iter().filter(|p| p.kind == k).count();
        prop_assert_eq!(count(PlacementKind::Note), score.note_count());
        prop_assert_eq!(count(PlacementKind::Barline), score.measures.len());
        prop_assert!(lay.placements.iter().all(|p| p.y >= 0.0 && p.y < geo.height as f32));
    }

    #[test]
    fn engraving_is_deterministic_and_boxes_hold_ink(score in arb_score(), seed in any::<u64>()) {
        let bank = full_bank();
        let geo = Geometry::default();
        let a = engraver::engrave(&score, &bank, None, &geo, seed).unwrap();
        let b = engraver::engrave(&score, &bank, None, &geo, seed).unwrap();
        prop_assert_eq!(&a, &b);
        for ann in &a.annotations {
            prop_assert!(ann.x + ann.w <= a.image.width() && ann.y + ann.h <= a.image.height());
            let mut ink = 0.0f32;
            for y in ann.y..ann.y + ann.h {
                for x in ann.x..ann.x + ann.w {
                    ink += 1.0 - a.image.get(x, y);
                }
            }
            prop_assert!(ink > 0.5, "{} box has no ink", ann.class_name);
        }
    }
}

#[test]
fn engrave_reports_missing_class_and_empty_bank() {
    let score = ScoreSpec {
        divisions: 1,
        clef: Clef::TREBLE,
        time: None,
        measures: vec![Measure { events: vec![Event::Note(Note::new(Step::G, 4, Duration::Quarter))] }],
    };
    let geo = Geometry::default();
    assert!(matches!(engraver::engrave(&score, &SymbolBank::new(), None, &geo, 0), Err(symgan_core::Error::EmptyBank)));
    let mut bank = full_bank();
    bank.classes.remove("quarternoteup");
    match engraver::engrave(&score, &bank, None, &geo, 0) {
        Err(symgan_core::Error::MissingSymbolClass(c)) => assert_eq!(c, "quarternoteup"),
        other => panic!("unexpected {other:?}"),
    }
    let bg = GrayImage::filled(7, 5, 0.8);
    let line = engraver::engrave(&score, &full_bank(), Some(&bg), &geo, 0).unwrap();
    assert!(line.image.data().iter().all(|&v| v <= 0.8 + 1e-6));
}
