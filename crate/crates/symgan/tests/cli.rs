mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::ProjectOpts;
use symgan::config::PipelineConfig;
use symgan::pipeline::{self, Layout};
use symgan::{checkpoint, Error};

fn symgan(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symgan"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn edit(config: &Path, from: &str, to: &str) {
    let text = std::fs::read_to_string(config).unwrap();
    assert!(text.contains(from), "{from} not in config");
    std::fs::write(config, text.replacen(from, to, 1)).unwrap();
}

fn trained() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_project(dir.path(), ProjectOpts::tiny());
    for cmd in ["prepare-data", "train"] {
        let out = symgan(&[cmd], &cfg);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    (dir, cfg)
}

#[test]
fn prepare_is_deterministic_and_balances_to_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = common::write_project(dir.path(), ProjectOpts::tiny());
    let cfg = PipelineConfig::load(&cfg_path).unwrap();
    let first = pipeline::prepare_data(&cfg).unwrap();
    let snap = common::snapshot(&Layout::new(cfg.out_dir()).data());
    let second = pipeline::prepare_data(&cfg).unwrap();
    assert_eq!(first, second);
    assert_eq!(snap, common::snapshot(&Layout::new(cfg.out_dir()).data()));
    assert_eq!(first.retained_classes.len(), 6);
    for c in first.counts.values() {
        assert_eq!((c.original, c.total), (12, 16));
    }
    // shadow exemplars are written next to the generation classes
    assert!(Layout::new(cfg.out_dir()).samples().join("gclefbad").is_dir());
}

#[test]
fn quarter_notes_split_by_stem_direction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::load(&common::write_project(dir.path(), ProjectOpts::tiny())).unwrap();
    let m = pipeline::prepare_data(&cfg).unwrap();
    assert_eq!(m.counts["quarternoteup"].original, 12);
    assert_eq!(m.counts["quarternotedown"].original, 12);
}

#[test]
fn missing_vocabulary_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_project(dir.path(), ProjectOpts::tiny());
    edit(&cfg, "vocabulary = \"fixture.vocab\"", "vocabulary = \"nowhere.vocab\"");
    let out = symgan(&["prepare-data"], &cfg);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.vocab"));
}

#[test]
fn generate_writes_count_per_requested_class() {
    let (dir, cfg) = trained();
    edit(&cfg, "count = 2", "count = 10\nclasses = [\"gclef\", \"barline\", \"quarterrest\"]");
    let out = symgan(&["generate"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bank = dir.path().join("out/bank");
    let mut total = 0;
    for class in ["gclef", "barline", "quarterrest"] {
        let pngs = std::fs::read_dir(bank.join(class))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
            .count();
        assert_eq!(pngs, 10);
        assert!(bank.join(class).join("anchors.csv").is_file());
        total += pngs;
    }
    assert_eq!(total, 30);
    assert_eq!(std::fs::read_dir(&bank).unwrap().count(), 3);
}

#[test]
fn shadow_class_is_not_a_generation_target() {
    let (_dir, cfg) = trained();
    edit(&cfg, "count = 2", "count = 2\nclasses = [\"gclefbad\"]");
    let config = PipelineConfig::load(&cfg).unwrap();
    assert!(matches!(
        pipeline::generate(&config, None),
        Err(Error::Core(symgan_core::Error::BadShadowTarget(c))) if c == "gclefbad"
    ));
    assert!(!symgan(&["generate"], &cfg).status.success());
}

#[test]
fn resume_continues_the_step_counter() {
    let (dir, cfg) = trained();
    let latest = dir.path().join("out/train/latest.ckpt");
    let ck = checkpoint::load(&latest).unwrap();
    assert_eq!(ck.bundle.step, 3);
    let echoed = PipelineConfig::from_toml(&ck.config_echo, dir.path()).unwrap();
    assert_eq!(echoed.train.total_steps, 3);
    assert_eq!(echoed.seed, ProjectOpts::tiny().seed);

    edit(&cfg, "total_steps = 3", "total_steps = 5");
    let out = symgan(&["train", "--resume", latest.to_str().unwrap()], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(checkpoint::load(&latest).unwrap().bundle.step, 5);
    let log = std::fs::read_to_string(dir.path().join("out/train/log.tsv")).unwrap();
    let steps: Vec<u64> = log.lines().skip(1).map(|l| l.split('\t').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, vec![0, 1, 2, 3, 4]);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (a, cfg_a) = trained();
    edit(&cfg_a, "total_steps = 3", "total_steps = 5");
    let latest = a.path().join("out/train/latest.ckpt");
    assert!(symgan(&["train", "--resume", latest.to_str().unwrap()], &cfg_a).status.success());

    let b = tempfile::tempdir().unwrap();
    let cfg_b = common::write_project(b.path(), ProjectOpts { steps: 5, ..ProjectOpts::tiny() });
    assert!(symgan(&["prepare-data"], &cfg_b).status.success());
    assert!(symgan(&["train"], &cfg_b).status.success());
    let read = |d: &Path| checkpoint::load(&d.join("out/train/latest.ckpt")).unwrap().bundle;
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn engrave_reports_the_missing_class() {
    let (dir, cfg) = trained();
    assert!(symgan(&["generate"], &cfg).status.success());
    std::fs::remove_dir_all(dir.path().join("out/bank/quarterrest")).unwrap();
    let config = PipelineConfig::load(&cfg).unwrap();
    match pipeline::engrave(&config, None) {
        Err(Error::Core(symgan_core::Error::MissingSymbolClass(c))) => assert_eq!(c, "quarterrest"),
        other => panic!("expected a missing class, got {other:?}"),
    }
    let out = symgan(&["engrave"], &cfg);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("quarterrest"));
}

#[test]
fn engrave_and_evaluate_write_their_outputs() {
    let (dir, cfg) = trained();
    for cmd in ["generate", "engrave", "evaluate"] {
        let out = symgan(&[cmd], &cfg);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let lines = dir.path().join("out/lines");
    for stem in ["a_fixture", "v0", "v1", "v2"] {
        assert!(lines.join(format!("{stem}.png")).is_file());
        let csv = std::fs::read_to_string(lines.join(format!("{stem}.csv"))).unwrap();
        assert!(csv.starts_with("class,x,y,w,h"));
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/eval/report.json")).unwrap()).unwrap();
    assert!(report["fid"].as_f64().unwrap() >= 0.0);
    let table = std::fs::read_to_string(dir.path().join("out/eval/report.txt")).unwrap();
    assert!(table.contains("FID") && table.contains("KID") && table.contains("HWD"));
}

#[test]
fn evaluate_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_project(dir.path(), ProjectOpts::tiny());
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let config = PipelineConfig::load(&cfg).unwrap();
    assert!(matches!(pipeline::evaluate(&config, Some(&empty)), Err(Error::EmptyDirectory(p)) if p == empty));
    let out = Command::new(env!("CARGO_BIN_EXE_symgan"))
        .args(["evaluate", empty.to_str().unwrap(), "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn seed_flag_changes_the_prepared_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_project(dir.path(), ProjectOpts::tiny());
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    assert!(symgan(&["prepare-data", "--out", o1.to_str().unwrap()], &cfg).status.success());
    assert!(symgan(&["prepare-data", "--out", o2.to_str().unwrap(), "--seed", "99"], &cfg).status.success());
    assert_ne!(common::snapshot(&dir.path().join("o1")), common::snapshot(&dir.path().join("o2")));
}
