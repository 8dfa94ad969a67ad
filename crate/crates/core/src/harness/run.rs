//! End-to-end experiment runner.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::cache::{content_key, TokenCache};
use super::config::{CodecSpec, DatasetSpec, EmbeddingChoice, ProbeSection, RunConfig};
use super::manifest::{Manifest, ManifestEntry, Split};
use crate::analysis::{emit_report, fmt_g, ProbeRow, Provenance, ReportBundle};
use crate::codec::{
    truncate_codebooks, waveform_digest, CodecAdapter, ExternalCodec, IdentityCodec, TokenGrid,
};
use crate::error::{Error, Result};
use crate::idsens::{
    aggregate_shift, aggregate_stability, curves_from_grids, multi_round_grids, pooled_curves,
    time_shift_eval, Pooling,
};
use crate::lm::eval_grid_ppl;
use crate::probe::{
    eval_classifier, pool_embeddings, read_frame_embeddings, train_ctc_probe, train_linear_probe,
    EmbeddingSource, Label, PooledEmbedding, ProbeKind, ProbeMetric,
};
use crate::recon::{evaluate, ReconMetrics, ReconSide};
use crate::rvq::{load_model, RvqCodec, RvqModel};
use crate::signal::{read_wav, Waveform};

enum Inner {
    Identity(IdentityCodec),
    Rvq(RvqCodec),
    External(ExternalCodec),
}

/// A configured codec plus what the runner needs to cache and probe it.
pub struct CodecInstance {
    name: String,
    /// Hashed into cache keys; `None` disables caching.
    fingerprint: Option<String>,
    inner: Inner,
}

impl CodecInstance {
    pub fn load(spec: &CodecSpec) -> Result<Self> {
        let (inner, fingerprint) = match spec {
            CodecSpec::Identity {
                frame_len,
                sample_rate,
                ..
            } => (
                // Not cached: decoding needs the handle a fresh encode registers.
                Inner::Identity(IdentityCodec::new(*frame_len, *sample_rate)?),
                None,
            ),
            CodecSpec::Rvq { model, .. } => {
                let bytes = std::fs::read(model).map_err(|e| Error::io(model, e))?;
                let digest: String = Sha256::digest(&bytes)[..16]
                    .iter()
                    .map(|b| format!("{b:02x}"))
                    .collect();
                let m = load_model(model)?;
                (Inner::Rvq(RvqCodec::new(m)), Some(format!("rvq:{digest}")))
            }
            CodecSpec::External { dir, .. } => (Inner::External(ExternalCodec::open(dir)?), None),
        };
        let mut c = CodecInstance {
            name: String::new(),
            fingerprint,
            inner,
        };
        c.name = spec
            .name_override()
            .map_or_else(|| c.adapter().name().to_string(), str::to_string);
        if let Inner::Rvq(r) = c.inner {
            c.inner = Inner::Rvq(r.with_name(c.name.clone()));
        }
        Ok(c)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn adapter(&self) -> &dyn CodecAdapter {
        match &self.inner {
            Inner::Identity(c) => c,
            Inner::Rvq(c) => c,
            Inner::External(c) => c,
        }
    }

    pub fn rvq_model(&self) -> Option<&RvqModel> {
        match &self.inner {
            Inner::Rvq(c) => Some(c.model()),
            _ => None,
        }
    }

    /// Token grid of one manifest entry, through the cache when the codec allows it.
    fn tokens(
        &self,
        m: &Manifest,
        e: &ManifestEntry,
        cache: &TokenCache,
        hits: &AtomicUsize,
    ) -> Result<TokenGrid> {
        if let Inner::External(x) = &self.inner {
            return x.load(&e.utt_id);
        }
        let w = m.load_audio(e)?;
        let Some(fp) = self.fingerprint.as_deref() else {
            return self.adapter().encode(&w, Some(&e.utt_id));
        };
        let key = content_key(&waveform_digest(&w), fp);
        let (g, hit) = cache.get_or_insert_with(&self.name, &e.utt_id, &key, || {
            self.adapter().encode(&w, Some(&e.utt_id))
        })?;
        if hit {
            hits.fetch_add(1, Ordering::Relaxed);
        }
        Ok(g)
    }

    /// Decoded audio of one entry, or `None` when the codec has no reconstruction for it.
    fn reconstruct(&self, e: &ManifestEntry, g: &TokenGrid) -> Result<Option<Waveform>> {
        match &self.inner {
            Inner::External(x) => {
                if x.has_reconstruction(&e.utt_id) {
                    read_wav(x.reconstruction_path(&e.utt_id)).map(Some)
                } else {
                    Ok(None)
                }
            }
            _ => self.adapter().decode(g).map(Some),
        }
    }

    fn embedding_dump(&self, utt_id: &str) -> Option<PathBuf> {
        match &self.inner {
            Inner::External(x) => {
                Some(x.dir().join(format!("{utt_id}.emb"))).filter(|p| p.is_file())
            }
            _ => None,
        }
    }
}

/// Result of [`run`].
#[derive(Debug)]
pub struct RunOutput {
    pub bundle: ReportBundle,
    pub written: Vec<PathBuf>,
    pub cache_hits: usize,
    pub encodings: usize,
}

struct Dataset<'a> {
    spec: &'a DatasetSpec,
    manifest: Manifest,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    cache: TokenCache,
    hits: AtomicUsize,
    encodings: AtomicUsize,
    datasets: Vec<Dataset<'a>>,
    codecs: Vec<CodecInstance>,
}

impl Ctx<'_> {
    /// Grids of `entries` in order.
    fn grids(
        &self,
        codec: &CodecInstance,
        ds: &Dataset,
        entries: &[&ManifestEntry],
    ) -> Result<Vec<TokenGrid>> {
        entries
            .par_iter()
            .map(|e| {
                self.encodings.fetch_add(1, Ordering::Relaxed);
                codec
                    .tokens(&ds.manifest, e, &self.cache, &self.hits)
                    .map_err(|err| {
                        err.context(format!("codec {} utterance {}", codec.name, e.utt_id))
                    })
            })
            .collect()
    }

    fn first_k(&self, grids: Vec<TokenGrid>) -> Result<Vec<TokenGrid>> {
        grids
            .iter()
            .map(|g| truncate_codebooks(g, self.cfg.first_k.min(g.n_codebooks())))
            .collect()
    }

    fn selected(&self, filter: Option<&Vec<String>>) -> Vec<&Dataset<'_>> {
        self.datasets
            .iter()
            .filter(|d| filter.is_none_or(|f| f.contains(&d.spec.name)))
            .collect()
    }
}

/// Entries scored by evaluation-only experiments: the test split, or everything when there is none.
fn eval_entries(m: &Manifest) -> Vec<&ManifestEntry> {
    let t = m.split(Split::Test);
    if t.is_empty() {
        m.entries.iter().collect()
    } else {
        t
    }
}

/// Validates, runs every configured experiment and writes the report.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let manifests = cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    pool.install(|| run_inner(cfg, manifests))
}

fn run_inner(cfg: &RunConfig, manifests: Vec<Manifest>) -> Result<RunOutput> {
    let codecs = cfg
        .codecs
        .iter()
        .map(CodecInstance::load)
        .collect::<Result<Vec<_>>>()?;
    let mut names = std::collections::HashSet::new();
    for c in &codecs {
        if !names.insert(c.name.clone()) {
            return Err(Error::Validation(format!(
                "two codecs are named {:?}",
                c.name
            )));
        }
    }
    for d in &cfg.datasets {
        if let Some(x) = d.exclude_codecs.iter().find(|x| !names.contains(*x)) {
            return Err(Error::Validation(format!(
                "dataset {} excludes unknown codec {x:?}",
                d.name
            )));
        }
    }
    let ctx = Ctx {
        cfg,
        cache: TokenCache::new(cfg.cache_dir()),
        hits: AtomicUsize::new(0),
        encodings: AtomicUsize::new(0),
        datasets: cfg
            .datasets
            .iter()
            .zip(manifests)
            .map(|(spec, manifest)| Dataset { spec, manifest })
            .collect(),
        codecs,
    };

    let mut b = ReportBundle::default();
    b.notes.push(
        "probes: pooled linear heads and a linear-context CTC model stand in for the original probe networks".into(),
    );
    b.notes
        .push(format!("seed {}; first_k {}", cfg.seed, cfg.first_k));

    if let Some(sec) = &cfg.recon {
        recon(&ctx, sec.datasets.as_ref(), &mut b)?;
    }
    if let Some(sec) = &cfg.idsens {
        b.notes.push(format!(
            "idsens: rounds {}, shift {} ms, {} pooling, up to {} utterances",
            sec.rounds,
            fmt_g(sec.shift_ms),
            sec.pooling,
            sec.max_utterances
        ));
        idsens(&ctx, sec, &mut b)?;
    }
    if let Some(sec) = &cfg.ppl {
        b.notes.push(format!(
            "ppl: order {}, discount {}",
            sec.order,
            fmt_g(sec.discount)
        ));
        ppl(&ctx, sec, &mut b)?;
    }
    for p in &cfg.probes {
        probe(&ctx, p, &mut b)?;
    }

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut written = emit_report(&b, &cfg.report_formats()?, &cfg.out_dir)?;
    let cfg_path = cfg.out_dir.join("run_config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    written.push(cfg_path);
    Ok(RunOutput {
        bundle: b,
        written,
        cache_hits: ctx.hits.load(Ordering::Relaxed),
        encodings: ctx.encodings.load(Ordering::Relaxed),
    })
}

fn recon(ctx: &Ctx, filter: Option<&Vec<String>>, b: &mut ReportBundle) -> Result<()> {
    for codec in &ctx.codecs {
        for ds in ctx.selected(filter) {
            if ds.spec.exclude_codecs.contains(&codec.name) {
                b.notes.push(format!(
                    "recon: {} excluded on {} by configuration",
                    codec.name, ds.spec.name
                ));
                continue;
            }
            let entries = eval_entries(&ds.manifest);
            let grids = ctx.grids(codec, ds, &entries)?;
            let scored: Vec<Option<ReconMetrics>> = entries
                .par_iter()
                .zip(&grids)
                .map(|(e, g)| {
                    let ctx_msg = || format!("recon: codec {} utterance {}", codec.name, e.utt_id);
                    let Some(deg) = codec
                        .reconstruct(e, g)
                        .map_err(|err| err.context(ctx_msg()))?
                    else {
                        return Ok(None);
                    };
                    let reference = ds.manifest.load_audio(e)?;
                    let side = ReconSide {
                        reference_text: e.transcript.as_deref(),
                        ..Default::default()
                    };
                    evaluate(&reference, &deg, &side)
                        .map(Some)
                        .map_err(|err| err.context(ctx_msg()))
                })
                .collect::<Result<_>>()?;
            let got: Vec<ReconMetrics> = scored.iter().flatten().cloned().collect();
            if got.len() < scored.len() {
                b.notes.push(format!(
                    "recon: {} of {} {} utterances have no {} reconstruction",
                    scored.len() - got.len(),
                    scored.len(),
                    ds.spec.name,
                    codec.name
                ));
            }
            if let Some(mean) = ReconMetrics::mean(&got) {
                b.recon
                    .push((codec.name.clone(), ds.spec.dataset_type.clone(), mean));
            }
        }
    }
    Ok(())
}

fn idsens(ctx: &Ctx, sec: &super::config::IdsensSection, b: &mut ReportBundle) -> Result<()> {
    let k = ctx.cfg.first_k;
    for codec in &ctx.codecs {
        if !codec.adapter().encodes_arbitrary_audio() {
            b.notes.push(format!(
                "idsens: {} skipped, it cannot re-encode derived audio",
                codec.name
            ));
            continue;
        }
        let mut items: Vec<(&Dataset, &ManifestEntry)> = Vec::new();
        for ds in ctx.selected(sec.datasets.as_ref()) {
            items.extend(eval_entries(&ds.manifest).into_iter().map(|e| (ds, e)));
        }
        items.truncate(sec.max_utterances);
        if items.is_empty() {
            continue;
        }
        let per_utt: Vec<(Vec<TokenGrid>, Vec<crate::idsens::ShiftStability>)> = items
            .par_iter()
            .map(|(ds, e)| {
                let w = ds.manifest.load_audio(e)?;
                let rounds = multi_round_grids(codec.adapter(), &w, sec.rounds)?;
                let rounds = ctx.first_k(rounds)?;
                let mut shift = time_shift_eval(codec.adapter(), &w, Some(sec.shift_ms))?;
                shift.retain(|s| s.codebook_index < k);
                Ok((rounds, shift))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e: Error| e.context(format!("idsens: codec {}", codec.name)))?;
        let curves = match sec.pooling {
            Pooling::UtteranceMean => {
                let each = per_utt
                    .iter()
                    .map(|(g, _)| curves_from_grids(g))
                    .collect::<Result<Vec<_>>>()?;
                aggregate_stability(&each)?.curves
            }
            Pooling::TokenPooled => {
                pooled_curves(&per_utt.iter().map(|(g, _)| g.clone()).collect::<Vec<_>>())?
            }
        };
        let shifts = aggregate_shift(&per_utt.iter().map(|(_, s)| s.clone()).collect::<Vec<_>>())?;
        b.stability.push((codec.name.clone(), curves));
        b.shifts.push((codec.name.clone(), shifts));
    }
    Ok(())
}

fn ppl(ctx: &Ctx, sec: &super::config::PplSection, b: &mut ReportBundle) -> Result<()> {
    let selected = ctx.selected(sec.datasets.as_ref());
    let mut types: Vec<&str> = Vec::new();
    for d in &selected {
        if !types.contains(&d.spec.dataset_type.as_str()) {
            types.push(&d.spec.dataset_type);
        }
    }
    for codec in &ctx.codecs {
        for dt in &types {
            let (mut train, mut held) = (Vec::new(), Vec::new());
            for ds in selected.iter().filter(|d| d.spec.dataset_type == *dt) {
                train.extend(ctx.first_k(ctx.grids(codec, ds, &ds.manifest.fit_split())?)?);
                held.extend(ctx.first_k(ctx.grids(codec, ds, &ds.manifest.heldout_split())?)?);
            }
            if train.is_empty() || held.is_empty() {
                b.notes.push(format!(
                    "ppl: {} on {dt} skipped, it needs train and held-out utterances",
                    codec.name
                ));
                continue;
            }
            let rec = eval_grid_ppl(
                &train.iter().collect::<Vec<_>>(),
                &held.iter().collect::<Vec<_>>(),
                sec.order,
                sec.discount,
            )
            .map_err(|e| e.context(format!("ppl: codec {} on {dt}", codec.name)))?;
            b.ppl.push((
                codec.name.clone(),
                dt.to_string(),
                rec,
                Provenance::Internal,
            ));
        }
    }
    Ok(())
}

fn pooled(
    codec: &CodecInstance,
    choice: EmbeddingChoice,
    e: &ManifestEntry,
    g: &TokenGrid,
) -> Result<PooledEmbedding> {
    if choice == EmbeddingChoice::Auto {
        if let Some(m) = codec.rvq_model() {
            return pool_embeddings(g, EmbeddingSource::Rvq(m));
        }
        if let Some(p) = codec.embedding_dump(&e.utt_id) {
            let (data, t, dim) = read_frame_embeddings(p)?;
            if t != g.n_frames() {
                return Err(Error::LengthMismatch {
                    expected: g.n_frames(),
                    found: t,
                });
            }
            return pool_embeddings(g, EmbeddingSource::Frames { data: &data, dim });
        }
    }
    pool_embeddings(g, EmbeddingSource::OneHot)
}

fn probe(ctx: &Ctx, p: &ProbeSection, b: &mut ReportBundle) -> Result<()> {
    let ds = ctx
        .datasets
        .iter()
        .find(|d| d.spec.name == p.dataset)
        .expect("validated dataset name");
    let train_e = ds.manifest.fit_split();
    let test_e = ds.manifest.split(Split::Test);
    if train_e.is_empty() || test_e.is_empty() {
        return Err(Error::Validation(format!(
            "probe {}: dataset needs train and test utterances",
            p.name
        )));
    }
    let spec = &p.spec;
    b.notes.push(format!(
        "probe {}: {}, {} epochs, lr {}, batch {}, seed {}, budget {}",
        p.name,
        spec.kind,
        spec.epochs,
        fmt_g(spec.learning_rate),
        spec.batch_size,
        spec.seed,
        spec.compute_budget
            .map_or("unlimited".to_string(), |s| format!("{s} steps"))
    ));
    for codec in &ctx.codecs {
        let what = || format!("probe {}: codec {}", p.name, codec.name);
        let train_g = ctx.first_k(ctx.grids(codec, ds, &train_e)?)?;
        let test_g = ctx.first_k(ctx.grids(codec, ds, &test_e)?)?;
        let mut push = |metric: ProbeMetric, value: f64| {
            b.probe.push(ProbeRow {
                codec: codec.name.clone(),
                task: p.name.clone(),
                dataset: p.dataset.clone(),
                dataset_type: ds.spec.dataset_type.clone(),
                metric: metric.as_str().to_string(),
                value,
            })
        };
        if spec.kind == ProbeKind::CtcAsr {
            let text = |e: &ManifestEntry| {
                e.transcript.clone().ok_or_else(|| {
                    Error::Validation(format!("{}: ctc probe needs a transcript", e.utt_id))
                })
            };
            let train_t = train_e
                .iter()
                .map(|e| text(e))
                .collect::<Result<Vec<_>>>()?;
            let test_t = test_e.iter().map(|e| text(e)).collect::<Result<Vec<_>>>()?;
            let pairs: Vec<(&TokenGrid, &str)> = train_g
                .iter()
                .zip(&train_t)
                .map(|(g, t)| (g, t.as_str()))
                .collect();
            let model = train_ctc_probe(&pairs, spec).map_err(|e| e.context(what()))?;
            let eval: Vec<(&TokenGrid, &str)> = test_g
                .iter()
                .zip(&test_t)
                .map(|(g, t)| (g, t.as_str()))
                .collect();
            let r = model.evaluate(&eval).map_err(|e| e.context(what()))?;
            for m in spec.effective_metrics() {
                push(m, if m == ProbeMetric::Wer { r.wer } else { r.cer });
            }
            continue;
        }
        let label = |e: &ManifestEntry| {
            e.labels.clone().ok_or_else(|| {
                Error::Validation(format!("{}: probe {} needs labels", e.utt_id, p.name))
            })
        };
        let build = |entries: &[&ManifestEntry],
                     grids: &[TokenGrid]|
         -> Result<Vec<(PooledEmbedding, Label)>> {
            entries
                .par_iter()
                .zip(grids)
                .map(|(e, g)| Ok((pooled(codec, p.embedding, e, g)?, label(e)?)))
                .collect()
        };
        let train = build(&train_e, &train_g).map_err(|e| e.context(what()))?;
        let test = build(&test_e, &test_g).map_err(|e| e.context(what()))?;
        let model = train_linear_probe(&train, spec).map_err(|e| e.context(what()))?;
        let rec = eval_classifier(&model, &test, spec.averaging).map_err(|e| e.context(what()))?;
        for m in spec.effective_metrics() {
            match rec.get(m) {
                Some(v) => push(m, v),
                None => b
                    .notes
                    .push(format!("{}: {m} undefined on the test split", what())),
            }
        }
        if !rec.skipped_labels.is_empty() {
            b.notes.push(format!(
                "{}: single-class label columns skipped {:?}",
                what(),
                rec.skipped_labels
            ));
        }
    }
    Ok(())
}
