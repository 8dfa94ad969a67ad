use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn codecbench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codecbench"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn identity_recon_from_flags() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_code(
        &codecbench(
            d,
            &[
                "synth-data",
                "--kind",
                "tones",
                "--size",
                "3",
                "--out",
                "tones",
            ],
        ),
        0,
    );
    let out = codecbench(
        d,
        &[
            "eval-recon",
            "--codec",
            "identity:128:8000",
            "--manifest",
            "tones/manifest.jsonl",
            "--out",
            "rep",
            "--format",
            "csv,markdown",
        ],
    );
    assert_code(&out, 0);
    let csv = std::fs::read_to_string(d.join("rep/recon.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("identity,,1,,,,,1,100,0"));
    assert!(d.join("rep/report.md").is_file());
    assert!(!d.join("rep/report.json").exists());
}

#[test]
fn validation_errors_exit_with_2() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let missing = codecbench(
        d,
        &[
            "eval-ppl",
            "--codec",
            "identity",
            "--manifest",
            "absent.jsonl",
        ],
    );
    assert_code(&missing, 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent.jsonl"));
    assert_code(
        &codecbench(
            d,
            &["eval-recon", "--codec", "mystery", "--manifest", "x.jsonl"],
        ),
        2,
    );
    assert_code(&codecbench(d, &["report", "--config", "absent.toml"]), 2);
    assert_code(
        &codecbench(
            d,
            &["eval-probe", "--codec", "identity", "--manifest", "x.jsonl"],
        ),
        2,
    );
    assert_code(
        &codecbench(
            d,
            &["synth-data", "--kind", "tones", "--size", "0", "--out", "t"],
        ),
        2,
    );
    assert_code(
        &codecbench(d, &["report", "--config", "c.toml", "--format", "pdf"]),
        2,
    );
}

#[test]
fn runtime_errors_exit_with_3() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_code(
        &codecbench(
            d,
            &[
                "synth-data",
                "--kind",
                "markov",
                "--size",
                "5",
                "--out",
                "mk",
            ],
        ),
        0,
    );
    // Two stages over a corpus the first stage quantizes exactly leave nothing to train on.
    let out = codecbench(
        d,
        &[
            "train-codec",
            "--manifest",
            "mk/manifest.jsonl",
            "--out",
            "m.acbm",
            "--codebooks",
            "2",
            "--codebook-size",
            "16",
            "--frame-len",
            "64",
            "--sample-rate",
            "16000",
        ],
    );
    assert_code(&out, 3);
}

#[test]
fn train_encode_decode_and_evaluate_external_tokens() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_code(
        &codecbench(
            d,
            &[
                "synth-data",
                "--kind",
                "markov",
                "--size",
                "10",
                "--seed",
                "2",
                "--out",
                "mk",
            ],
        ),
        0,
    );
    assert_code(
        &codecbench(
            d,
            &[
                "train-codec",
                "--manifest",
                "mk/manifest.jsonl",
                "--out",
                "m.acbm",
                "--codebooks",
                "1",
                "--codebook-size",
                "16",
                "--frame-len",
                "64",
                "--sample-rate",
                "16000",
            ],
        ),
        0,
    );
    assert_code(
        &codecbench(
            d,
            &[
                "encode",
                "--codec",
                "rvq:m.acbm",
                "--manifest",
                "mk/manifest.jsonl",
                "--out",
                "ext",
                "--reconstruct",
            ],
        ),
        0,
    );
    assert!(d.join("ext/descriptor.json").is_file());
    assert!(d.join("ext/markov-00000.rec.wav").is_file());
    assert_code(
        &codecbench(
            d,
            &[
                "decode",
                "--codec",
                "rvq:m.acbm",
                "--out",
                "dec",
                "ext/markov-00000.tokens",
            ],
        ),
        0,
    );
    assert!(d.join("dec/markov-00000.wav").is_file());

    std::fs::write(
        d.join("cfg.toml"),
        r#"out_dir = "rep"
[[codec]]
kind = "rvq"
name = "rvq"
model = "m.acbm"
[[codec]]
kind = "external"
name = "ext"
dir = "ext"
[[codec]]
kind = "identity"
frame_len = 64
sample_rate = 16000
[[dataset]]
name = "mk"
manifest = "mk/manifest.jsonl"
[recon]
[ppl]
order = 2
"#,
    )
    .unwrap();
    assert_code(&codecbench(d, &["report", "--config", "cfg.toml"]), 0);
    let ppl = std::fs::read_to_string(d.join("rep/ppl_speech.csv")).unwrap();
    let rows: Vec<&str> = ppl.lines().collect();
    assert_eq!(rows[0], "codec,overall_ppl,cb1_ppl");
    // The external directory holds exactly the internal codec's tokens.
    assert_eq!(
        rows[1].split_once(',').unwrap().1,
        rows[2].split_once(',').unwrap().1
    );

    let corr = codecbench(d, &["correlate", "rep/metrics.csv"]);
    assert_code(&corr, 0);
    assert!(String::from_utf8_lossy(&corr.stdout).starts_with("task,dataset_type,metric,r,n"));
}

#[test]
fn idsens_flags_override_the_config() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_code(
        &codecbench(
            d,
            &[
                "synth-data",
                "--kind",
                "tones",
                "--size",
                "3",
                "--out",
                "tones",
            ],
        ),
        0,
    );
    let out = codecbench(
        d,
        &[
            "eval-idsens",
            "--codec",
            "identity:128:8000",
            "--manifest",
            "tones/manifest.jsonl",
            "--out",
            "rep",
            "--rounds",
            "4",
            "--shift-ms",
            "5",
            "--format",
            "csv",
        ],
    );
    assert_code(&out, 0);
    let rounds = std::fs::read_to_string(d.join("rep/idsens_rounds.csv")).unwrap();
    // Header plus rounds 2..=4 for the single identity codebook.
    assert_eq!(rounds.lines().count(), 4, "{rounds}");
    let shift = std::fs::read_to_string(d.join("rep/idsens_shift.csv")).unwrap();
    assert!(shift.lines().nth(1).unwrap().contains(",5,"), "{shift}");
}
