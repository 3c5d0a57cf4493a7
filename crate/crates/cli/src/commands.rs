use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use rayon::prelude::*;
use zsu_core::cluster::{
    gmm_fit, kmeans_fit, time_reduce, GmmModel, KMeansModel, ReduceMode, GMM_KIND, KMEANS_KIND,
};
use zsu_core::corpus::{
    load_audio, load_bundle, read_units, save_bundle, save_wav, validate_manifest, write_atomic,
    write_units, DType, FeatureCache, Manifest, ManifestEntry, ModelBundle, UnitFile,
};
use zsu_core::diagnostics::{gradient_suite, GRADIENT_TOLERANCE};
use zsu_core::dsp::{extract_features, magnitude, stft, AudioBuffer, FeatureSequence};
use zsu_core::inverter::{
    log_spectral_distance, spectrogram_matrix, train_inverter as fit_inverter, Inverter,
    InverterUtterance,
};
use zsu_core::metrics::{abx_score, bitrate, entropy_bits, parse_triples};
use zsu_core::vq::{train_vqvae, VqUtterance, VqVae, VQVAE_KIND};
use zsu_core::{CodeSequence, Matrix};

use crate::{NumericalError, PipelineConfig, Report, UsageError};

const REPR_KIND: &str = "representation";
const SPECTROGRAM_KIND: &str = "spectrogram";
const REFERENCE_TABLE: &str = include_str!("../data/reference_results.tsv");

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| usage(format!("{flag} is required for this command")))
}

fn out_dir(cfg: &PipelineConfig) -> anyhow::Result<&Path> {
    require(&cfg.paths.out, "--out")
}

fn manifest(cfg: &PipelineConfig) -> anyhow::Result<Manifest> {
    let path = require(&cfg.paths.manifest, "--manifest")?;
    Ok(validate_manifest(path)?)
}

/// Stamps the resolved configuration and seed into a bundle.
fn stamp(b: &mut ModelBundle, cfg: &PipelineConfig) {
    b.set_hyper("run.config", cfg.to_toml());
    b.set_hyper("run.seed", cfg.train.seed);
    b.set_hyper("run.version", env!("CARGO_PKG_VERSION"));
}

/// Writes the report and the resolved config next to the artifacts.
fn finish(report: Report, cfg: &PipelineConfig) -> anyhow::Result<Report> {
    if let Some(dir) = &cfg.paths.out {
        write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
        report.write(dir)?;
    }
    Ok(report)
}

struct Loaded {
    entry: ManifestEntry,
    audio: AudioBuffer,
    features: FeatureSequence,
}

/// Audio and features for every entry, in manifest order. Features come
/// from the cache directory when one is configured.
fn load_features(cfg: &PipelineConfig, manifest: &Manifest) -> anyhow::Result<Vec<Loaded>> {
    let fcfg = cfg.feature_config()?;
    let cache = cfg.paths.features.as_ref().map(FeatureCache::new);
    manifest
        .entries
        .par_iter()
        .map(|entry| {
            let audio = load_audio(&entry.audio_path)?;
            let features = match &cache {
                Some(c) => c.get_or_extract(&audio, &fcfg)?,
                None => extract_features(&audio, &fcfg)?,
            };
            Ok(Loaded {
                entry: entry.clone(),
                audio,
                features,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(|e: anyhow::Error| e.context("loading features"))
}

pub fn extract(cfg: &PipelineConfig) -> anyhow::Result<Report> {
    let out = out_dir(cfg)?;
    let mut cfg = cfg.clone();
    let cache_dir = cfg
        .paths
        .features
        .clone()
        .unwrap_or_else(|| out.join("features"));
    cfg.paths.features = Some(cache_dir.clone());
    let m = manifest(&cfg)?;
    let loaded = load_features(&cfg, &m)?;
    let fcfg = cfg.feature_config()?;
    let mut index = String::from("utterance_id\tcache_key\tframes\n");
    for l in &loaded {
        index.push_str(&format!(
            "{}\t{}\t{}\n",
            l.entry.utterance_id,
            FeatureCache::key(&l.audio, &fcfg),
            l.features.len()
        ));
    }
    write_atomic(&cache_dir.join("index.tsv"), index.as_bytes())?;
    let mut r = Report::new("extract", &cfg);
    r.set("features.config", fcfg.describe());
    r.set(
        "features.dim",
        loaded.first().map_or(0, |l| l.features.dim()),
    );
    r.set(
        "features.frame_rate",
        loaded.first().map_or(0.0, |l| l.features.frame_rate),
    );
    r.set(
        "features.frames_total",
        loaded.iter().map(|l| l.features.len()).sum::<usize>(),
    );
    r.set("features.utterances", loaded.len());
    finish(r, &cfg)
}

fn reduced_stack(cfg: &PipelineConfig, loaded: &[Loaded]) -> anyhow::Result<Matrix> {
    let mode = cfg.reduce_mode()?;
    let reduced = loaded
        .iter()
        .map(|l| time_reduce(&l.features, cfg.units.time_reduction, mode).map(|f| f.frames))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Matrix::vstack(reduced.iter()))
}

pub fn train_units(cfg: &PipelineConfig) -> anyhow::Result<Report> {
    let out = out_dir(cfg)?;
    let m = manifest(cfg)?;
    let loaded = load_features(cfg, &m)?;
    let fcfg = cfg.feature_config()?;
    let mut r = Report::new("train-units", cfg);
    let mut bundle = match cfg.units.model.as_str() {
        "kmeans" => {
            let data = reduced_stack(cfg, &loaded)?;
            let fit = kmeans_fit(&data, &cfg.kmeans_config())?;
            r.set("units.frames", data.rows());
            r.set(
                "units.inertia_first",
                fit.inertia.first().copied().unwrap_or(0.0),
            );
            r.set(
                "units.inertia_final",
                fit.inertia.last().copied().unwrap_or(0.0),
            );
            r.set("units.reseeded", fit.reseeded);
            fit.model.to_bundle()
        }
        "gmm" => {
            let data = reduced_stack(cfg, &loaded)?;
            let fit = gmm_fit(&data, &cfg.gmm_config())?;
            r.set("units.frames", data.rows());
            r.set(
                "units.log_likelihood_first",
                fit.log_likelihood.first().copied().unwrap_or(0.0),
            );
            r.set(
                "units.log_likelihood_final",
                fit.log_likelihood.last().copied().unwrap_or(0.0),
            );
            r.set("units.reseeds", fit.reseed_iterations.len());
            fit.model.to_bundle()
        }
        _ => {
            let data: Vec<VqUtterance> = loaded
                .iter()
                .map(|l| VqUtterance {
                    id: l.entry.utterance_id.clone(),
                    speaker: l.entry.speaker_id.clone(),
                    features: l.features.frames.clone(),
                })
                .collect();
            let dim = loaded.first().map_or(0, |l| l.features.dim());
            let training = train_vqvae(
                &data,
                cfg.vq_config(dim),
                cfg.vq_train_config(),
                Some(&out.join("checkpoints")),
            )?;
            let h = &training.history;
            if let (Some(first), Some(last)) = (h.first(), h.last()) {
                r.set("units.loss_first", first.total);
                r.set("units.loss_final", last.total);
                r.set("units.perplexity_final", last.perplexity);
                let tail = h.len().div_ceil(10);
                let mean = |s: &[zsu_core::vq::StepMetrics]| {
                    s.iter().map(|m| m.total).sum::<f64>() / s.len() as f64
                };
                r.set("units.loss_head_mean", mean(&h[..tail]));
                r.set("units.loss_tail_mean", mean(&h[h.len() - tail..]));
            }
            r.set("units.steps", h.len());
            training.model.to_bundle()
        }
    };
    bundle.set_hyper("units.time_reduction", cfg.units.time_reduction);
    bundle.set_hyper("units.reduce", &cfg.units.reduce);
    bundle.set_hyper("features.config", fcfg.describe());
    stamp(&mut bundle, cfg);
    let path = out.join("model.zsu");
    save_bundle(&bundle, &path)?;
    r.set("units.model", &cfg.units.model);
    r.set("artifact.model", path.display());
    finish(r, cfg)
}

/// A trained unit model of any kind.
enum UnitModel {
    KMeans {
        model: KMeansModel,
        reduction: usize,
        mode: ReduceMode,
    },
    Gmm {
        model: GmmModel,
        reduction: usize,
        mode: ReduceMode,
    },
    Vq(Box<VqVae>),
}

impl UnitModel {
    fn load(path: &Path, cfg: &PipelineConfig) -> anyhow::Result<Self> {
        let b = load_bundle(path).with_context(|| format!("loading {}", path.display()))?;
        let expected = cfg.feature_config()?.describe();
        let trained = b.hyper("features.config")?;
        if trained != expected {
            return Err(usage(format!(
                "model was trained on features [{trained}], current config is [{expected}]"
            )));
        }
        let reduction: usize = b.hyper_parse("units.time_reduction")?;
        let mode = ReduceMode::from_name(b.hyper("units.reduce")?)
            .ok_or_else(|| anyhow!("model bundle has an unknown reduce mode"))?;
        Ok(match b.kind.as_str() {
            KMEANS_KIND => UnitModel::KMeans {
                model: KMeansModel::from_bundle(&b)?,
                reduction,
                mode,
            },
            GMM_KIND => UnitModel::Gmm {
                model: GmmModel::from_bundle(&b)?,
                reduction,
                mode,
            },
            VQVAE_KIND => UnitModel::Vq(Box::new(VqVae::from_bundle(&b)?)),
            other => bail!("{} is a {other:?} bundle, not a unit model", path.display()),
        })
    }

    fn reduction(&self) -> usize {
        match self {
            UnitModel::KMeans { reduction, .. } | UnitModel::Gmm { reduction, .. } => *reduction,
            UnitModel::Vq(m) => m.config.time_reduction,
        }
    }

    /// Rows the unit indices refer to, used as inverter input.
    fn codebook(&self) -> Matrix {
        match self {
            UnitModel::KMeans { model, .. } => model.centroids.clone(),
            UnitModel::Gmm { model, .. } => model.means.clone(),
            UnitModel::Vq(m) => m.codebook(),
        }
    }

    /// Units plus the continuous representation scored by ABX: centroid or
    /// code vectors, or GMM posteriorgrams.
    fn encode(&self, features: &FeatureSequence) -> anyhow::Result<(CodeSequence, Matrix)> {
        Ok(match self {
            UnitModel::KMeans {
                model,
                reduction,
                mode,
            } => {
                let reduced = time_reduce(features, *reduction, *mode)?;
                model.encode(&reduced.frames, *reduction)?
            }
            UnitModel::Gmm {
                model,
                reduction,
                mode,
            } => {
                let reduced = time_reduce(features, *reduction, *mode)?;
                let post = model.posteriors(&reduced.frames)?;
                let idx = post
                    .iter_rows()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
                                if p > best.1 {
                                    (i, p)
                                } else {
                                    best
                                }
                            })
                            .0
                    })
                    .collect();
                (CodeSequence::new(idx, *reduction, model.k()), post)
            }
            UnitModel::Vq(m) => m.encode_codes(&features.frames)?,
        })
    }
}

pub fn encode(cfg: &PipelineConfig) -> anyhow::Result<Report> {
    let out = out_dir(cfg)?;
    let model = UnitModel::load(require(&cfg.paths.model, "--model-path")?, cfg)?;
    let m = manifest(cfg)?;
    let loaded = load_features(cfg, &m)?;
    let encoded = loaded
        .par_iter()
        .map(|l| model.encode(&l.features))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let reduction = model.reduction();
    let codebook_size = model.codebook().rows();
    let mut units = UnitFile {
        reduction,
        codebook_size,
        utterances: Vec::with_capacity(loaded.len()),
    };
    let repr_dir = out.join("repr");
    let mut used = BTreeSet::new();
    for (l, (codes, repr)) in loaded.iter().zip(encoded) {
        let mut b = ModelBundle::new(REPR_KIND);
        b.set_hyper("frame_rate", l.features.frame_rate / reduction as f64);
        b.set_hyper("utterance_id", &l.entry.utterance_id);
        b.insert(
            "frames",
            &[repr.rows(), repr.cols()],
            repr.as_slice(),
            DType::F64,
        );
        stamp(&mut b, cfg);
        save_bundle(&b, &repr_dir.join(format!("{}.zsu", l.entry.utterance_id)))?;
        used.extend(codes.indices.iter().copied());
        units.utterances.push((l.entry.utterance_id.clone(), codes));
    }
    let units_path = out.join("units.txt");
    write_units(&units_path, &units)?;
    let mut r = Report::new("encode", cfg);
    r.set("units.codebook_size", codebook_size);
    r.set(
        "units.codes_total",
        units.utterances.iter().map(|u| u.1.len()).sum::<usize>(),
    );
    r.set("units.distinct_codes", used.len());
    r.set("units.reduction", reduction);
    r.set("units.utterances", units.utterances.len());
    r.set("artifact.units", units_path.display());
    r.set("artifact.repr", repr_dir.display());
    finish(r, cfg)
}

fn read_unit_file(cfg: &PipelineConfig) -> anyhow::Result<UnitFile> {
    let path = require(&cfg.paths.units, "--units")?;
    read_units(path).with_context(|| format!("reading units {}", path.display()))
}

fn magnitude_matrix(
    audio: &AudioBuffer,
    inv: &zsu_core::inverter::InverterConfig,
) -> anyhow::Result<Matrix> {
    Ok(spectrogram_matrix(&magnitude(&stft(audio, &inv.stft)?)))
}

pub fn train_inverter(cfg: &PipelineConfig) -> anyhow::Result<Report> {
    let out = out_dir(cfg)?;
    let units = read_unit_file(cfg)?;
    let model = UnitModel::load(require(&cfg.paths.model, "--model-path")?, cfg)?;
    if model.reduction() != units.reduction {
        return Err(usage(format!(
            "unit file has time reduction {}, unit model {}",
            units.reduction,
            model.reduction()
        )));
    }
    let codebook = model.codebook();
    let inv_cfg = cfg.inverter_config(codebook.cols(), units.reduction)?;
    let m = manifest(cfg)?;
    let entries: Vec<&ManifestEntry> = m
        .entries
        .iter()
        .filter(|e| {
            cfg.inverter
                .speaker
                .as_ref()
                .is_none_or(|s| &e.speaker_id == s)
        })
        .filter(|e| units.get(&e.utterance_id).is_some())
        .collect();
    if entries.is_empty() {
        bail!("no utterances of the target voice have units");
    }
    let data = entries
        .par_iter()
        .map(|e| {
            let codes = units.get(&e.utterance_id).expect("filtered above");
            let vectors = codes
                .to_vectors(&codebook)
                .ok_or_else(|| anyhow!("units of {} exceed the model codebook", e.utterance_id))?;
            let audio = load_audio(&e.audio_path)?;
            Ok(InverterUtterance {
                id: e.utterance_id.clone(),
                codes: vectors,
                magnitude: magnitude_matrix(&audio, &inv_cfg)?,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let training = fit_inverter(
        &data,
        inv_cfg,
        cfg.inverter_train_config(),
        Some(&out.join("checkpoints")),
    )?;
    let mut bundle = training.inverter.to_bundle();
    stamp(&mut bundle, cfg);
    let path = out.join("inverter.zsu");
    save_bundle(&bundle, &path)?;
    let mut r = Report::new("train-inverter", cfg);
    let h = &training.history;
    if let (Some(first), Some(last)) = (h.first(), h.last()) {
        r.set("inverter.mse_first", first.mse);
        r.set("inverter.mse_final", last.mse);
        r.set(
            "inverter.generator_adversarial_final",
            last.generator_adversarial,
        );
        r.set("inverter.discriminator_final", last.discriminator);
        let tail = h.len().div_ceil(10);
        let mean = |s: &[zsu_core::inverter::InverterStepMetrics]| {
            s.iter().map(|m| m.mse).sum::<f64>() / s.len() as f64
        };
        r.set("inverter.mse_head_mean", mean(&h[..tail]));
        r.set("inverter.mse_tail_mean", mean(&h[h.len() - tail..]));
    }
    r.set("inverter.parameters", training.inverter.param_count());
    r.set("inverter.steps", h.len());
    r.set("inverter.utterances", data.len());
    r.set("artifact.inverter", path.display());
    finish(r, cfg)
}

pub fn synthesize(cfg: &PipelineConfig) -> anyhow::Result<Report> {
    let out = out_dir(cfg)?;
    let units = read_unit_file(cfg)?;
    let model = UnitModel::load(require(&cfg.paths.model, "--model-path")?, cfg)?;
    let inv_path = require(&cfg.paths.inverter, "--inverter")?;
    let inverter = Inverter::from_bundle(&load_bundle(inv_path)?)
        .with_context(|| format!("loading {}", inv_path.display()))?;
    let codebook = model.codebook();
    let truth: HashMap<String, PathBuf> = match &cfg.paths.manifest {
        Some(_) => manifest(cfg)?
            .entries
            .into_iter()
            .map(|e| (e.utterance_id, e.audio_path))
            .collect(),
        None => HashMap::new(),
    };
    let iters = cfg.inverter.griffin_lim_iters;
    let seed = cfg.train.seed;
    let results = units
        .utterances
        .par_iter()
        .map(|(id, codes)| {
            let s = inverter.synthesize(codes, &codebook, iters, seed)?;
            let wav = out.join("wav").join(format!("{id}.wav"));
            save_wav(&wav, &s.audio)?;
            let mut b = ModelBundle::new(SPECTROGRAM_KIND);
            b.set_hyper("utterance_id", id);
            let spec = &s.spectrogram;
            b.insert(
                "magnitude",
                &[spec.rows(), spec.cols()],
                spec.as_slice(),
                DType::F64,
            );
            stamp(&mut b, cfg);
            save_bundle(&b, &out.join("spectrograms").join(format!("{id}.zsu")))?;
            let distance = match truth.get(id) {
                Some(p) => {
                    let reference = magnitude_matrix(&load_audio(p)?, &inverter.config)?;
                    Some(log_spectral_distance(spec, &reference)?)
                }
                None => None,
            };
            Ok((id.clone(), s.audio.len(), distance))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut r = Report::new("synthesize", cfg);
    for (id, samples, distance) in &results {
        r.set(format!("synth.{id}.samples"), samples);
        if let Some(d) = distance {
            r.set(format!("synth.{id}.log_spectral_distance"), d);
        }
    }
    r.set("synth.utterances", results.len());
    r.set("artifact.wav", out.join("wav").display());
    finish(r, cfg)
}

/// Every `<id>.zsu` representation bundle in `dir`, keyed by id.
fn load_representations(dir: &Path) -> anyhow::Result<HashMap<String, Matrix>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "zsu"))
        .collect();
    paths.sort();
    paths
        .par_iter()
        .map(|p| {
            let b = load_bundle(p)?;
            b.expect_kind(REPR_KIND)?;
            let t = b.require("frames")?;
            let &[rows, cols] = t.shape.as_slice() else {
                bail!("{}: representation must be a matrix", p.display());
            };
            let id = p
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            Ok((id, Matrix::from_vec(rows, cols, t.data.clone())))
        })
        .collect()
}

pub fn eval_abx(cfg: &PipelineConfig) -> anyhow::Result<Report> {
    let repr_dir = match (&cfg.paths.repr, &cfg.paths.out) {
        (Some(d), _) => d.clone(),
        (None, Some(out)) => out.join("repr"),
        (None, None) => return Err(usage("--repr or --out is required for this command")),
    };
    let triples_path = require(&cfg.eval.triples, "--triples")?;
    let text = std::fs::read_to_string(triples_path)
        .with_context(|| format!("reading {}", triples_path.display()))?;
    let triples = parse_triples(&text)?;
    let reprs = load_representations(&repr_dir)?;
    let distance = cfg.frame_distance()?;
    let abx = abx_score(&triples, &reprs, distance)?;
    let mut r = Report::new("eval-abx", cfg);
    r.set("abx.distance", distance.name());
    r.set("abx.error_percent", format!("{:.6}", abx.error_percent()));
    r.set("abx.skipped", abx.skipped);
    r.set("abx.triples", abx.triples);
    for (cat, s) in &abx.per_category {
        r.set(
            format!("abx.category.{cat}.error_percent"),
            format!("{:.6}", 100.0 * s.error_rate),
        );
        r.set(format!("abx.category.{cat}.triples"), s.triples);
    }
    finish(r, cfg)
}

pub fn eval_bitrate(cfg: &PipelineConfig) -> anyhow::Result<Report> {
    let units = read_unit_file(cfg)?;
    let m = manifest(cfg)?;
    let mut duration = 0.0;
    for (id, _) in &units.utterances {
        let e = m
            .get(id)
            .ok_or_else(|| anyhow!("utterance {id:?} is in the unit file but not the manifest"))?;
        duration += match e.duration {
            Some(d) => d,
            None => load_audio(&e.audio_path)?.duration_seconds(),
        };
    }
    let streams: Vec<&[usize]> = units
        .utterances
        .iter()
        .map(|(_, c)| c.indices.as_slice())
        .collect();
    let rate = bitrate(streams.iter().copied(), duration)?;
    let (entropy, symbols) = entropy_bits(streams.iter().copied());
    let mut r = Report::new("eval-bitrate", cfg);
    r.set("bitrate.bits_per_second", format!("{rate:.6}"));
    r.set("bitrate.duration_seconds", format!("{duration:.6}"));
    r.set("bitrate.entropy_bits", format!("{entropy:.6}"));
    r.set("bitrate.symbols", symbols);
    r.set(
        "bitrate.symbols_per_second",
        format!("{:.6}", symbols as f64 / duration),
    );
    finish(r, cfg)
}

pub fn gradcheck(cfg: &PipelineConfig) -> anyhow::Result<Report> {
    let suite = gradient_suite(cfg.train.seed)?;
    let mut r = Report::new("gradcheck", cfg);
    for c in &suite.checks {
        r.set(
            format!("gradcheck.{}", c.name),
            format!(
                "{:.3e} {}",
                c.report.max_rel_error(),
                if c.report.passed() { "PASS" } else { "FAIL" }
            ),
        );
    }
    r.set("gradcheck.checks", suite.checks.len());
    r.set(
        "gradcheck.max_rel_error",
        format!("{:.3e}", suite.max_rel_error()),
    );
    r.set("gradcheck.tolerance", format!("{GRADIENT_TOLERANCE:e}"));
    r.set("gradcheck.passed", suite.passed());
    let r = finish(r, cfg)?;
    if !suite.passed() {
        print!("{}", r.to_text());
        return Err(NumericalError(format!(
            "gradient check failed: {}",
            suite.failures().join(", ")
        ))
        .into());
    }
    Ok(r)
}

/// Version, supported settings and, optionally, the reference table.
pub fn info(paper_table: bool) -> String {
    let mut s = format!(
        "zsu {}\nfeature kinds: mfcc39 mel80 linear customN\nunit models: kmeans gmm vqvae\n\
         gan kinds: lsgan wgan\nframe distances: cosine kl\n",
        env!("CARGO_PKG_VERSION")
    );
    if paper_table {
        s.push_str("\nPublished reference results (NOT reproduced here; full English corpus):\n");
        s.push_str(&format!(
            "{:<10} {:<15} {:>8} {:>4} {:>8} {:>9}  {}\n",
            "system", "representation", "codebook", "r", "ABX %", "bits/s", "note"
        ));
        for line in REFERENCE_TABLE.lines().filter(|l| !l.starts_with('#')) {
            let f: Vec<&str> = line.split('\t').collect();
            if let [sys, rep, k, t, abx, br, note] = f.as_slice() {
                s.push_str(&format!(
                    "{sys:<10} {rep:<15} {k:>8} {t:>4} {abx:>8} {br:>9}  {note}\n"
                ));
            }
        }
    }
    s
}
