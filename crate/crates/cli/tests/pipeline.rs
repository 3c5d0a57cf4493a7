use std::path::{Path, PathBuf};

use zsu_cli::{run, Report, EXIT_DATA, EXIT_USAGE};
use zsu_core::corpus::synthetic::{
    category_items, category_triples, triples_text, write_corpus, ToneCorpusConfig,
};
use zsu_core::corpus::{read_units, write_units, UnitFile};
use zsu_core::CodeSequence;

fn zsu(args: &[&str]) -> i32 {
    let mut full = vec!["zsu"];
    full.extend_from_slice(args);
    run(full)
}

fn report(dir: &Path) -> Report {
    Report::parse(&std::fs::read_to_string(dir.join("report.txt")).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Single-category items for two speakers and the two most distinct vowel
/// categories, plus within-speaker ABX triples. Closer categories overlap in
/// MFCC space for the low-pitched voice and are not cleanly separable.
fn category_corpus(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = ToneCorpusConfig {
        categories: 2,
        ..ToneCorpusConfig::default()
    };
    let items = category_items(&cfg, 3, 0.2);
    let manifest = write_corpus(dir, &items).unwrap();
    let triples = dir.join("triples.txt");
    std::fs::write(&triples, triples_text(&category_triples(&items))).unwrap();
    (manifest, triples)
}

#[test]
fn constant_symbol_corpus_has_zero_bitrate() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = category_corpus(dir.path());
    let m = zsu_core::corpus::validate_manifest(&manifest).unwrap();
    let units = UnitFile {
        reduction: 1,
        codebook_size: 4,
        utterances: m
            .entries
            .iter()
            .map(|e| (e.utterance_id.clone(), CodeSequence::new(vec![2; 20], 1, 4)))
            .collect(),
    };
    let units_path = dir.path().join("units.txt");
    write_units(&units_path, &units).unwrap();
    let out = dir.path().join("bitrate");
    let code = zsu(&[
        "eval-bitrate",
        "--manifest",
        s(&manifest),
        "--units",
        s(&units_path),
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0);
    let r = report(&out);
    assert_eq!(r.get("bitrate.bits_per_second"), Some("0.000000"));
    assert_eq!(r.get("bitrate.symbols"), Some("240"));
}

#[test]
fn kmeans_units_separate_synthetic_categories() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, triples) = category_corpus(dir.path());
    let work = dir.path().join("work");
    let common = [
        "--manifest",
        s(&manifest),
        "--model",
        "kmeans",
        "--codebook",
        "8",
        "--time-reduction",
        "1",
        "--seed",
        "3",
    ];
    let features = work.join("features");
    let mut args = vec!["extract", "--out", s(&work)];
    args.extend_from_slice(&common);
    assert_eq!(zsu(&args), 0);
    assert!(features.join("index.tsv").is_file());

    let units_dir = work.join("units");
    let mut args = vec![
        "train-units",
        "--out",
        s(&units_dir),
        "--features",
        s(&features),
    ];
    args.extend_from_slice(&common);
    assert_eq!(zsu(&args), 0);
    let model = units_dir.join("model.zsu");

    let enc = work.join("enc");
    let mut args = vec![
        "encode",
        "--out",
        s(&enc),
        "--features",
        s(&features),
        "--model-path",
        s(&model),
    ];
    args.extend_from_slice(&common);
    assert_eq!(zsu(&args), 0);
    let units = read_units(&enc.join("units.txt")).unwrap();
    assert_eq!(units.utterances.len(), 12);
    assert_eq!(units.codebook_size, 8);

    let abx = work.join("abx");
    let code = zsu(&[
        "eval-abx",
        "--repr",
        s(&enc.join("repr")),
        "--triples",
        s(&triples),
        "--out",
        s(&abx),
    ]);
    assert_eq!(code, 0);
    let r = report(&abx);
    assert_eq!(r.get("abx.error_percent"), Some("0.000000"));
    assert_eq!(r.get("abx.skipped"), Some("0"));
    assert_eq!(r.get("abx.distance"), Some("cosine"));
}

#[test]
fn gmm_units_score_posteriorgrams_with_kl() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, triples) = category_corpus(dir.path());
    let units_dir = dir.path().join("gmm");
    let args = [
        "--manifest",
        s(&manifest),
        "--model",
        "gmm",
        "--codebook",
        "8",
        "--time-reduction",
        "2",
    ];
    let mut a = vec!["train-units", "--out", s(&units_dir)];
    a.extend_from_slice(&args);
    assert_eq!(zsu(&a), 0);
    let enc = dir.path().join("enc");
    let model = units_dir.join("model.zsu");
    let mut a = vec!["encode", "--out", s(&enc), "--model-path", s(&model)];
    a.extend_from_slice(&args);
    assert_eq!(zsu(&a), 0);
    let abx = dir.path().join("abx");
    let repr = enc.join("repr");
    let mut a = vec![
        "eval-abx",
        "--out",
        s(&abx),
        "--repr",
        s(&repr),
        "--triples",
        s(&triples),
    ];
    a.extend_from_slice(&args);
    assert_eq!(zsu(&a), 0);
    let r = report(&abx);
    assert_eq!(r.get("abx.distance"), Some("kl"));
    assert_eq!(r.get("abx.error_percent"), Some("0.000000"));
}

#[test]
fn vqvae_parity_configuration_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = category_corpus(dir.path());
    let out = dir.path().join("vq");
    let config = dir.path().join("small.toml");
    // narrow layers and few steps; the echoed unit settings are what matter
    std::fs::write(
        &config,
        "[units]\nwidths = [8, 8, 8]\nstem_channels = 2\n\n[train]\nbatch_size = 4\nchunk_frames = 16\ninit_batches = 64\n",
    )
    .unwrap();
    let code = zsu(&[
        "train-units",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
        "--model",
        "vqvae",
        "--codebook",
        "256",
        "--time-reduction",
        "4",
        "--steps",
        "3",
    ]);
    assert_eq!(code, 0);
    let r = report(&out);
    assert_eq!(r.get("config.units.model"), Some("vqvae"));
    assert_eq!(r.get("config.units.codebook"), Some("256"));
    assert_eq!(r.get("config.units.time_reduction"), Some("4"));
    assert_eq!(r.get("config.units.gamma"), Some("0.25"));
    assert_eq!(r.get("config.units.code_dim"), Some("64"));
    assert_eq!(r.get("config.units.speaker_dim"), Some("32"));
    assert_eq!(r.get("units.steps"), Some("3"));
    let echoed = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echoed.contains("codebook = 256"));
}

#[test]
fn categorized_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.tsv");
    assert_eq!(
        zsu(&["extract", "--manifest", s(&missing), "--out", s(dir.path())]),
        EXIT_DATA
    );
    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "[units]\nmodel = \"hmm\"\n").unwrap();
    assert_eq!(zsu(&["gradcheck", "--config", s(&bad_cfg)]), EXIT_USAGE);
    assert_eq!(zsu(&["eval-abx", "--time-reduction"]), EXIT_USAGE);
}

#[test]
fn gradcheck_command_passes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(zsu(&["gradcheck", "--out", s(dir.path())]), 0);
    let r = report(dir.path());
    assert_eq!(r.get("gradcheck.passed"), Some("true"));
    assert!(r.get("gradcheck.vq_objective").unwrap().ends_with("PASS"));
}
