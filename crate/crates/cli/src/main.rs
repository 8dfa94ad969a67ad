use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use codecbench::analysis::{
    correlate_against_ppl, correlations_csv, fmt_g, MetricTable, ReportFormat,
};
use codecbench::codec::{load_token_grid, save_token_grid, ExternalCodec};
use codecbench::harness::{
    make_synthetic_dataset, run, CodecInstance, CodecSpec, DatasetSpec, IdsensSection, Manifest,
    PplSection, ReconSection, RunConfig, SynthKind,
};
use codecbench::rvq::{save_model, train_rvq, KMeansParams, RvqConfig};
use codecbench::signal::write_wav;
use rayon::prelude::*;

/// Evaluate discrete audio tokenizers: reconstruction, ID sensitivity, perplexity and probes.
#[derive(Parser)]
#[command(name = "codecbench", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the reference RVQ codec on the train split of a manifest.
    TrainCodec(TrainArgs),
    /// Encode every manifest utterance into an external-codec token directory.
    Encode(EncodeArgs),
    /// Decode token files back to audio.
    Decode(DecodeArgs),
    /// Reconstruction metrics (STOI, SI-SNR, MCD, speaker similarity, WER/CER).
    EvalRecon(EvalArgs),
    /// Multi-round and time-shift same-ID ratios.
    EvalIdsens(EvalArgs),
    /// Normalized n-gram token perplexity.
    EvalPpl(EvalArgs),
    /// Downstream probes defined in the config.
    EvalProbe(EvalArgs),
    /// Pearson r of every metric against PPL from a long-format metric table.
    Correlate(CorrelateArgs),
    /// Run every experiment section of a config and write the full report.
    Report(EvalArgs),
    /// Write a seeded synthetic dataset.
    SynthData(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    codebooks: usize,
    #[arg(long, default_value_t = 1024)]
    codebook_size: usize,
    #[arg(long, default_value_t = 1024)]
    frame_len: usize,
    #[arg(long, default_value_t = 24000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct EncodeArgs {
    /// `identity[:frame_len[:rate]]`, `rvq:<model>` or `external:<dir>`.
    #[arg(long)]
    codec: String,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write `<utt_id>.rec.wav` reconstructions.
    #[arg(long)]
    reconstruct: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    codec: String,
    #[arg(long)]
    out: PathBuf,
    /// Token files (`.tokens`).
    #[arg(required = true)]
    tokens: Vec<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ad hoc codec when no config is given.
    #[arg(long)]
    codec: Option<String>,
    /// Ad hoc manifest when no config is given.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Dataset type of the ad hoc manifest.
    #[arg(long, default_value = "speech")]
    dataset_type: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    shift_ms: Option<f64>,
    #[arg(long)]
    first_k: Option<usize>,
    /// Comma-separated report formats: csv, json, markdown, svg.
    #[arg(long, value_delimiter = ',')]
    format: Vec<String>,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Long-format metric table (`metrics.csv` of a report).
    input: PathBuf,
    /// Directory for `correlations.csv`; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// tones, markov-speechlike or ctc-mapped.
    #[arg(long)]
    kind: String,
    /// Clips per class for tones, utterances otherwise.
    #[arg(long)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq)]
enum Experiment {
    Recon,
    Idsens,
    Ppl,
    Probe,
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            let validation = e.chain().any(|c| {
                c.downcast_ref::<codecbench::Error>()
                    .is_some_and(|e| e.is_validation())
            });
            ExitCode::from(if validation { 2 } else { 3 })
        }
    }
}

/// Outer context lines followed by the first library error, whose message already
/// includes its own causes.
fn describe(e: &anyhow::Error) -> String {
    let mut parts = Vec::new();
    for c in e.chain() {
        parts.push(c.to_string());
        if c.downcast_ref::<codecbench::Error>().is_some() {
            break;
        }
    }
    parts.join(": ")
}

fn dispatch(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::TrainCodec(a) => train(a),
        Cmd::Encode(a) => encode(a),
        Cmd::Decode(a) => decode(a),
        Cmd::EvalRecon(a) => eval(a, Experiment::Recon),
        Cmd::EvalIdsens(a) => eval(a, Experiment::Idsens),
        Cmd::EvalPpl(a) => eval(a, Experiment::Ppl),
        Cmd::EvalProbe(a) => eval(a, Experiment::Probe),
        Cmd::Report(a) => eval(a, Experiment::All),
        Cmd::Correlate(a) => correlate(a),
        Cmd::SynthData(a) => synth(a),
    }
}

fn init_workers(workers: usize) -> anyhow::Result<()> {
    anyhow::ensure!(
        workers > 0,
        codecbench::Error::Validation("workers must be at least 1".into())
    );
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()?;
    Ok(())
}

fn load_manifest(path: &Path) -> anyhow::Result<Manifest> {
    let m = Manifest::read(path)?;
    m.validate()?;
    Ok(m)
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let m = load_manifest(&a.manifest)?;
    let corpus = m
        .fit_split()
        .iter()
        .map(|e| m.load_audio(e))
        .collect::<codecbench::Result<Vec<_>>>()?;
    anyhow::ensure!(
        !corpus.is_empty(),
        codecbench::Error::Validation("manifest has no train utterances".into())
    );
    let cfg = RvqConfig {
        codebook_sizes: vec![a.codebook_size; a.codebooks],
        frame_len: a.frame_len,
        hop: a.frame_len / 2,
        sample_rate: a.sample_rate,
        seed: a.seed,
        kmeans: KMeansParams {
            max_iters: a.max_iters,
            ..KMeansParams::default()
        },
    };
    init_workers(a.workers)?;
    let model = train_rvq(&corpus, &cfg)?;
    save_model(&model, &a.out)?;
    for (j, s) in model.stats().iter().enumerate() {
        println!(
            "stage {}: residual energy {} -> {} ({} iterations)",
            j + 1,
            fmt_g(s.input_energy),
            fmt_g(s.residual_energy),
            s.iterations
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn encode(a: EncodeArgs) -> anyhow::Result<()> {
    let spec = CodecSpec::parse(&a.codec)?;
    let codec = CodecInstance::load(&spec)?;
    let m = load_manifest(&a.manifest)?;
    let adapter = codec.adapter();
    let mut desc = adapter.descriptor().clone();
    desc.name = codec.name().to_string();
    ExternalCodec::write_descriptor(&a.out, &desc)?;
    init_workers(a.workers)?;
    m.entries
        .par_iter()
        .try_for_each(|e| -> anyhow::Result<()> {
            let w = m.load_audio(e)?;
            let g = adapter
                .encode(&w, Some(&e.utt_id))
                .map_err(|err| err.context(format!("utterance {}", e.utt_id)))?;
            save_token_grid(&g, a.out.join(format!("{}.tokens", e.utt_id)))?;
            if a.reconstruct {
                let rec = adapter.decode(&g)?;
                write_wav(&rec, a.out.join(format!("{}.rec.wav", e.utt_id)))?;
            }
            Ok(())
        })?;
    println!(
        "encoded {} utterances into {}",
        m.entries.len(),
        a.out.display()
    );
    Ok(())
}

fn decode(a: DecodeArgs) -> anyhow::Result<()> {
    let codec = CodecInstance::load(&CodecSpec::parse(&a.codec)?)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for p in &a.tokens {
        let g = load_token_grid(p)?;
        let w = codec
            .adapter()
            .decode(&g)
            .map_err(|e| e.context(p.display().to_string()))?;
        let stem = p
            .file_stem()
            .map_or("out".into(), |s| s.to_string_lossy().into_owned());
        let dst = a.out.join(format!("{stem}.wav"));
        write_wav(&w, &dst)?;
        println!("{}", dst.display());
    }
    Ok(())
}

fn build_config(a: &EvalArgs, exp: Experiment) -> anyhow::Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::read(p)?,
        None => {
            let (Some(codec), Some(manifest)) = (&a.codec, &a.manifest) else {
                anyhow::bail!(codecbench::Error::Validation(
                    "give --config, or both --codec and --manifest".into()
                ));
            };
            let mut c = RunConfig::default();
            c.codecs.push(CodecSpec::parse(codec)?);
            c.datasets.push(DatasetSpec {
                name: manifest
                    .file_stem()
                    .map_or("data".into(), |s| s.to_string_lossy().into_owned()),
                manifest: manifest.clone(),
                dataset_type: a.dataset_type.clone(),
                exclude_codecs: Vec::new(),
            });
            c
        }
    };
    if a.config.is_some() {
        if let Some(codec) = &a.codec {
            cfg.codecs = vec![CodecSpec::parse(codec)?];
        }
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
        for p in &mut cfg.probes {
            p.spec.seed = s;
        }
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(k) = a.first_k {
        cfg.first_k = k;
    }
    if !a.format.is_empty() {
        for f in &a.format {
            f.parse::<ReportFormat>()?;
        }
        cfg.formats = a.format.clone();
    }
    match exp {
        Experiment::Recon => {
            cfg.recon.get_or_insert_with(ReconSection::default);
            (cfg.idsens, cfg.ppl) = (None, None);
            cfg.probes.clear();
        }
        Experiment::Idsens => {
            cfg.idsens.get_or_insert_with(IdsensSection::default);
            (cfg.recon, cfg.ppl) = (None, None);
            cfg.probes.clear();
        }
        Experiment::Ppl => {
            cfg.ppl.get_or_insert_with(PplSection::default);
            (cfg.recon, cfg.idsens) = (None, None);
            cfg.probes.clear();
        }
        Experiment::Probe => {
            anyhow::ensure!(
                !cfg.probes.is_empty(),
                codecbench::Error::Validation(
                    "eval-probe needs [[probe]] sections in --config".into()
                )
            );
            (cfg.recon, cfg.idsens, cfg.ppl) = (None, None, None);
        }
        Experiment::All => {}
    }
    if let Some(i) = &mut cfg.idsens {
        if let Some(r) = a.rounds {
            i.rounds = r;
        }
        if let Some(s) = a.shift_ms {
            i.shift_ms = s;
        }
    }
    Ok(cfg)
}

fn eval(a: EvalArgs, exp: Experiment) -> anyhow::Result<()> {
    let cfg = build_config(&a, exp)?;
    let out = run(&cfg)?;
    for p in &out.written {
        println!("{}", p.display());
    }
    eprintln!(
        "{} grids requested, {} served from cache",
        out.encodings, out.cache_hits
    );
    Ok(())
}

fn correlate(a: CorrelateArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let table = MetricTable::from_csv(&text)?;
    let csv = correlations_csv(&correlate_against_ppl(&table)?);
    match a.out {
        Some(dir) => {
            std::fs::create_dir_all(&dir)?;
            let p = dir.join("correlations.csv");
            std::fs::write(&p, csv)?;
            println!("{}", p.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let kind: SynthKind = a.kind.parse()?;
    let ds = make_synthetic_dataset(kind, a.size, a.seed, &a.out)?;
    println!("{}", ds.manifest_path.display());
    if let Some(x) = ds.extra {
        println!("{}", x.display());
    }
    Ok(())
}
