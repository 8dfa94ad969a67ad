use std::path::{Path, PathBuf};

use codecbench::codec::{load_token_grid, waveform_digest, CodecAdapter};
use codecbench::harness::{
    content_key, make_synthetic_dataset, run, CodecSpec, DatasetSpec, ReconSection, RunConfig,
    Split, SynthKind, TokenCache,
};
use codecbench::rvq::{rvq_encode, save_model, train_rvq, RvqConfig};
use tempfile::TempDir;

fn tones(dir: &Path, size: usize) -> PathBuf {
    make_synthetic_dataset(SynthKind::Tones, size, 1, dir.join("tones"))
        .unwrap()
        .manifest_path
}

fn recon_config(root: &Path, manifest: PathBuf) -> RunConfig {
    RunConfig {
        out_dir: root.join("report"),
        codecs: vec![CodecSpec::Identity {
            name: Some("identity".into()),
            frame_len: 128,
            sample_rate: 8000,
        }],
        datasets: vec![DatasetSpec {
            name: "tones".into(),
            manifest,
            dataset_type: "sound".into(),
            exclude_codecs: Vec::new(),
        }],
        recon: Some(ReconSection::default()),
        ..RunConfig::default()
    }
}

fn report_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn identity_codec_reconstructs_perfectly() {
    let tmp = TempDir::new().unwrap();
    let cfg = recon_config(tmp.path(), tones(tmp.path(), 3));
    let out = run(&cfg).unwrap();
    let (codec, _, m) = &out.bundle.recon[0];
    assert_eq!(codec, "identity");
    assert!((m.stoi - 1.0).abs() < 1e-9, "{m:?}");
    assert_eq!(m.si_snr_db, 100.0);
    assert_eq!(m.mcd, 0.0);
    let csv = std::fs::read_to_string(cfg.out_dir.join("recon.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "identity,,1,,,,,1,100,0");
}

#[test]
fn warm_cache_rerun_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let manifest = tones(tmp.path(), 3);
    let mut cfg = recon_config(tmp.path(), manifest.clone());
    cfg.codecs = vec![small_rvq(tmp.path(), &manifest)];
    cfg.ppl = Some(Default::default());
    let cold = run(&cfg).unwrap();
    // Within one run, PPL reuses the test-split grids recon encoded.
    assert!(cold.cache_hits < cold.encodings);
    let first = report_files(&cfg.out_dir);
    let warm = run(&cfg).unwrap();
    assert_eq!(warm.cache_hits, warm.encodings);
    assert!(warm.encodings > 0);
    assert_eq!(report_files(&cfg.out_dir), first);
}

/// Two 16-entry stages trained on every clip of `manifest`, saved under `dir`.
fn small_rvq(dir: &Path, manifest: &Path) -> CodecSpec {
    let m = codecbench::harness::Manifest::read(manifest).unwrap();
    let waves: Vec<_> = m.entries.iter().map(|e| m.load_audio(e).unwrap()).collect();
    let model = train_rvq(
        &waves,
        &RvqConfig {
            codebook_sizes: vec![16, 16],
            frame_len: 64,
            hop: 32,
            sample_rate: 8000,
            ..RvqConfig::default()
        },
    )
    .unwrap();
    let path = dir.join("m.acbm");
    save_model(&model, &path).unwrap();
    CodecSpec::Rvq {
        name: Some("rvq".into()),
        model: path,
    }
}

#[test]
fn missing_manifest_fails_validation_before_any_work() {
    let tmp = TempDir::new().unwrap();
    let cfg = recon_config(tmp.path(), tmp.path().join("absent.jsonl"));
    let err = run(&cfg).unwrap_err();
    assert!(err.is_validation(), "{err}");
    assert!(!cfg.out_dir.exists());
}

#[test]
fn cached_grids_equal_fresh_encodings() {
    let tmp = TempDir::new().unwrap();
    let ds = make_synthetic_dataset(SynthKind::Tones, 4, 2, tmp.path().join("d")).unwrap();
    let mut cfg = recon_config(tmp.path(), ds.manifest_path.clone());
    let spec = small_rvq(tmp.path(), &ds.manifest_path);
    let CodecSpec::Rvq { model, .. } = &spec else {
        unreachable!()
    };
    let model = codecbench::rvq::load_model(model).unwrap();
    cfg.codecs = vec![spec];
    run(&cfg).unwrap();

    // Every cache file holds the grid a fresh encode produces.
    let dir = cfg.cache_dir().join("rvq");
    let mut checked = 0;
    for f in std::fs::read_dir(&dir).unwrap() {
        let p = f.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        let (utt, _) = name.rsplit_once('-').unwrap();
        let i = ds
            .manifest
            .entries
            .iter()
            .position(|e| e.utt_id == utt)
            .unwrap();
        let cached = load_token_grid(&p).unwrap();
        let w = ds.manifest.load_audio(&ds.manifest.entries[i]).unwrap();
        assert_eq!(cached.tokens(), rvq_encode(&model, &w).unwrap().tokens());
        checked += 1;
    }
    assert_eq!(checked, ds.manifest.split(Split::Test).len());
}

#[test]
fn token_cache_round_trips_and_ignores_corrupt_entries() {
    let tmp = TempDir::new().unwrap();
    let ds = make_synthetic_dataset(SynthKind::Tones, 1, 3, tmp.path().join("d")).unwrap();
    let w = ds.manifest.load_audio(&ds.manifest.entries[0]).unwrap();
    let codec = codecbench::codec::IdentityCodec::new(128, 8000).unwrap();
    let cache = TokenCache::new(tmp.path().join("cache"));
    let key = content_key(&waveform_digest(&w), "identity:128:8000");
    let (g, hit) = cache
        .get_or_insert_with("id", "u", &key, || codec.encode(&w, None))
        .unwrap();
    assert!(!hit);
    let (again, hit) = cache
        .get_or_insert_with("id", "u", &key, || panic!("should be cached"))
        .unwrap();
    assert!(hit);
    assert_eq!(again.tokens(), g.tokens());
    std::fs::write(cache.path("id", "u", &key), b"garbage").unwrap();
    assert!(cache.get("id", "u", &key).is_none());
}

#[test]
fn run_config_is_written_and_reloads() {
    let tmp = TempDir::new().unwrap();
    let cfg = recon_config(tmp.path(), tones(tmp.path(), 3));
    run(&cfg).unwrap();
    let back = RunConfig::read(cfg.out_dir.join("run_config.toml")).unwrap();
    assert_eq!(back.codecs, cfg.codecs);
    assert_eq!(back.first_k, cfg.first_k);
}

#[test]
fn excluded_codec_leaves_an_empty_recon_cell() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = recon_config(tmp.path(), tones(tmp.path(), 3));
    cfg.datasets[0].exclude_codecs = vec!["identity".into()];
    let out = run(&cfg).unwrap();
    assert!(out.bundle.recon.is_empty());
    assert!(out.bundle.notes.iter().any(|n| n.contains("excluded")));

    cfg.datasets[0].exclude_codecs = vec!["nobody".into()];
    assert!(run(&cfg).unwrap_err().is_validation());
}
