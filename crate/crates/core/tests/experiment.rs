use std::collections::HashSet;
use std::path::Path;

use csmono_core::corpusgen::read_jsonl;
use csmono_core::experiment::*;
use csmono_core::Error;

fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        train: 10,
        val: 2,
        test: 2,
        out: out.to_path_buf(),
        max_pieces: 300,
        log_every: 4,
        ..ExperimentConfig::default()
    };
    cfg.synth.dim = 8;
    for t in [&mut cfg.asr, &mut cfg.recovery, &mut cfg.nmt, &mut cfg.vae] {
        t.steps = 10;
        t.batch = 2;
    }
    cfg
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn generate_sizes_determinism_and_disjoint_splits() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = tiny(a.path());
    let cb = tiny(b.path());
    let counts = cmd_generate(&ca).unwrap();
    cmd_generate(&cb).unwrap();
    assert_eq!((counts.train, counts.val, counts.test), (10, 2, 2));
    let mut seen = HashSet::new();
    for split in Split::ALL {
        let pa = ca.paths().corpus(split);
        assert_eq!(read(&pa), read(cb.paths().corpus(split)));
        let text = String::from_utf8(read(&pa)).unwrap();
        assert_eq!(text.lines().count(), [10, 2, 2][split as usize]);
        for s in read_jsonl(&pa).unwrap() {
            assert!(seen.insert(s.mono_ref.unwrap().join(" ")), "sentence shared between splits");
        }
    }
}

#[test]
fn features_archive_matches_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_generate(&cfg).unwrap();
    let m = cmd_features(&cfg).unwrap();
    assert_eq!(m.frame_len_samples, 400);
    let test = read_jsonl(&cfg.paths().corpus(Split::Test)).unwrap();
    let feats = read_feature_archive(&cfg.paths().features(Split::Test), 25, 10).unwrap();
    assert_eq!(feats.len(), test.len());
    for (f, s) in feats.iter().zip(&test) {
        assert_eq!(f.num_frames(), utterance_text(s).chars().count() * cfg.synth.frames_per_char);
        assert_eq!(f.dim(), 8);
    }
}

#[test]
fn train_writes_checkpoint_and_loss_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    assert!(matches!(cmd_train(&cfg, Which::Nmt), Err(Error::Missing { .. })));
    cmd_generate(&cfg).unwrap();
    cmd_features(&cfg).unwrap();
    for w in Which::ALL {
        let s = cmd_train(&cfg, w).unwrap();
        assert_eq!(s.steps, 10);
        assert!(s.final_loss.is_finite());
        assert!(cfg.paths().checkpoint(w).exists());
        let csv = String::from_utf8(read(cfg.paths().loss_csv(w))).unwrap();
        // 10 steps logged every 4: rows at 4, 8, 10.
        let rows: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(rows, ["4", "8", "10"], "{w}");
    }
    let first = read(cfg.paths().checkpoint(Which::Nmt));
    cmd_train(&cfg, Which::Nmt).unwrap();
    assert_eq!(first, read(cfg.paths().checkpoint(Which::Nmt)));
}

#[test]
fn pipeline_routes_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_generate(&cfg).unwrap();
    cmd_train(&cfg, Which::Recovery).unwrap();

    // Text routes never touch the ASR stage.
    let r = cmd_pipeline(&cfg, Route::TextBert).unwrap();
    assert_eq!(r.n_sentences, 2);
    let report = read(cfg.paths().report_csv("text+bert"));
    assert_eq!(String::from_utf8(report.clone()).unwrap().lines().count(), 2);
    let trace = String::from_utf8(read(cfg.paths().trace(Route::TextBert))).unwrap();
    assert_eq!(trace.lines().count(), 2);

    let err = cmd_pipeline(&cfg, Route::TextNmt).unwrap_err().to_string();
    assert!(err.contains("nmt checkpoint"), "{err}");
    let err = cmd_pipeline(&cfg, Route::AsrBert).unwrap_err().to_string();
    assert!(err.contains("asr checkpoint"), "{err}");

    cmd_pipeline(&cfg, Route::TextBert).unwrap();
    assert_eq!(report, read(cfg.paths().report_csv("text+bert")));

    cmd_features(&cfg).unwrap();
    cmd_train(&cfg, Which::Asr).unwrap();
    cmd_train(&cfg, Which::Nmt).unwrap();
    for route in Route::ALL {
        cmd_pipeline(&cfg, route).unwrap();
    }
    let table = cmd_report(&cfg).unwrap();
    let summary = String::from_utf8(read(cfg.paths().summary())).unwrap();
    assert_eq!(summary.lines().count(), 1 + Route::ALL.len());
    assert!(table.contains("asr+nmt vs text+nmt"));
}

#[test]
fn eval_scores_hypothesis_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_generate(&cfg).unwrap();
    let test = read_jsonl(&cfg.paths().corpus(Split::Test)).unwrap();
    let hyp = dir.path().join("hyp.jsonl");
    let lines: Vec<String> = test.iter().map(|s| serde_json::to_string(s.mono_ref.as_ref().unwrap()).unwrap()).collect();
    std::fs::write(&hyp, lines.join("\n")).unwrap();
    let r = cmd_eval(&cfg, &hyp, "oracle").unwrap();
    assert_eq!(r.wer_percent, 0.0);
    assert_eq!(r.bleu, 1.0);
    std::fs::write(&hyp, "only one line\n").unwrap();
    assert!(cmd_eval(&cfg, &hyp, "short").is_err());
}

#[test]
fn overrides_and_validation() {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_override("seed", "9").unwrap();
    cfg.apply_override("asr-steps", "12").unwrap();
    cfg.apply_override("synth-frames-per-char", "8").unwrap();
    cfg.apply_override("attention", "matrix").unwrap();
    cfg.apply_override("out", "elsewhere").unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.asr.steps, 12);
    assert_eq!(cfg.synth.frames_per_char, 8);
    assert_eq!(cfg.out, Path::new("elsewhere"));
    assert!(cfg.apply_override("no-such-field", "1").is_err());
    assert!(cfg.apply_override("seed", "minus one").is_err());
    assert!(ExperimentConfig::is_field("frame-len-ms"));
    assert!(!ExperimentConfig::is_field("config"));

    cfg.apply_override("asr-variant", "hybrid").unwrap();
    cfg.validate().unwrap();
    cfg.apply_override("synth-frames-per-char", "3").unwrap();
    assert!(cfg.validate().is_err());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    cfg.save(&p).unwrap();
    assert_eq!(ExperimentConfig::load(&p).unwrap(), cfg);
    std::fs::write(&p, r#"{"sed": 1}"#).unwrap();
    assert!(ExperimentConfig::load(&p).is_err());
}

#[test]
fn loss_csv_intervals() {
    assert_eq!(loss_csv(&[1.0, 3.0, 5.0], 2), "step,loss\n2,2.000000\n3,5.000000\n");
}
