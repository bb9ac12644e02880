use std::path::Path;
use std::process::{Command, Output};

fn csmono(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csmono"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("CSR_LOG", "error")
        .output()
        .expect("binary runs")
}

const SMALL: &[&str] = &[
    "--train", "8", "--val", "2", "--test", "3", "--synth-dim", "8", "--max-pieces", "300", "--asr-steps", "6",
    "--recovery-steps", "6", "--nmt-steps", "6", "--vae-steps", "6",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

#[test]
fn full_run_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = csmono(out, &with_small(&["generate"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("train 8 val 2 test 3"));

    assert!(csmono(out, &with_small(&["features"])).status.success());
    let o = csmono(out, &with_small(&["train", "all"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 4);

    let o = csmono(out, &with_small(&["pipeline", "--route", "all"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8_lossy(&o.stdout).to_string();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("system,wer,ppl,bleu,n"));

    let o = csmono(out, &with_small(&["report"]));
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("asr+bert vs text+bert"));

    // Same seed, same bytes.
    let again = csmono(out, &with_small(&["pipeline", "--route", "text+nmt"]));
    assert!(again.status.success());
    assert!(csv.contains(String::from_utf8_lossy(&again.stdout).lines().nth(1).unwrap()));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(csmono(out, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(csmono(out, &["pipeline", "--route", "asr+gpt"]).status.code(), Some(1));
    assert_eq!(csmono(out, &["train", "everything"]).status.code(), Some(1));
    assert_eq!(csmono(out, &["generate", "--sample-rate", "44100"]).status.code(), Some(1));
    assert_eq!(csmono(out, &["generate", "--set", "nonsense=1"]).status.code(), Some(1));
    // Nothing generated yet: a data error naming the missing file.
    let o = csmono(out, &["pipeline", "--route", "text+bert"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(csmono(out, &["--help"]).status.success());
}

#[test]
fn config_file_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"seed": 5, "lambda": 0.5, "asr": {"steps": 7, "batch": 2, "lr": 0.01}}"#).unwrap();
    let o = csmono(dir.path(), &["config", "--config", cfg.to_str().unwrap(), "--asr-steps=9", "--seed", "6"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 6);
    assert_eq!(v["lambda"], 0.5);
    assert_eq!(v["asr"]["steps"], 9);
    assert_eq!(v["asr"]["batch"], 2);

    std::fs::write(&cfg, "{not json").unwrap();
    assert_eq!(csmono(dir.path(), &["config", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn wav_features() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("tone.wav");
    let tone: Vec<i16> = (0..1600)
        .map(|i| ((2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin() * 12000.0) as i16)
        .collect();
    write_pcm16(&wav, &tone);
    let csv = dir.path().join("f.csv");
    let o = csmono(dir.path(), &["features", "--wav", wav.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    // 100 ms at 16 kHz, 25 ms frames every 10 ms.
    assert_eq!(text.lines().count(), 8);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 40);
}

/// 16 kHz mono 16-bit PCM, written by hand so the test needs no WAV crate.
fn write_pcm16(path: &Path, samples: &[i16]) {
    let data_len = 2 * samples.len() as u32;
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes()); // PCM
    b.extend_from_slice(&1u16.to_le_bytes()); // mono
    b.extend_from_slice(&16000u32.to_le_bytes());
    b.extend_from_slice(&32000u32.to_le_bytes());
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        b.extend_from_slice(&s.to_le_bytes());
    }
    std::fs::write(path, b).unwrap();
}
