//! TOML run configuration.
//!
//! ```toml
//! out_dir = "report"
//! seed = 0
//! workers = 1
//! first_k = 8                      # leading codebooks kept for ID sensitivity, PPL and probes
//! formats = ["csv", "json", "markdown", "svg"]
//!
//! [[codec]]
//! kind = "rvq"                     # identity | rvq | external
//! model = "rvq.acbm"
//!
//! [[dataset]]
//! name = "tones"
//! manifest = "tones/manifest.jsonl"
//! dataset_type = "sound"
//!
//! [recon]                          # each experiment section is optional
//! [idsens]
//! rounds = 10
//! shift_ms = 2.0
//! [ppl]
//! order = 3
//!
//! [[probe]]
//! name = "class"
//! dataset = "tones"
//! kind = "multiclass"
//! n_outputs = 3
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use crate::analysis::ReportFormat;
use crate::codec::{DEFAULT_FIRST_K, DESCRIPTOR_FILE};
use crate::error::{Error, Result};
use crate::idsens::{Pooling, DEFAULT_ROUNDS, DEFAULT_SHIFT_MS};
use crate::lm::{DEFAULT_DISCOUNT, DEFAULT_ORDER};
use crate::probe::ProbeTaskSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CodecSpec {
    Identity {
        #[serde(default)]
        name: Option<String>,
        #[serde(default = "identity_frame")]
        frame_len: usize,
        #[serde(default = "identity_rate")]
        sample_rate: u32,
    },
    Rvq {
        #[serde(default)]
        name: Option<String>,
        model: PathBuf,
    },
    External {
        #[serde(default)]
        name: Option<String>,
        dir: PathBuf,
    },
}

fn identity_frame() -> usize {
    320
}

fn identity_rate() -> u32 {
    16000
}

impl CodecSpec {
    /// `identity[:frame_len[:sample_rate]]`, `rvq:<model file>` or `external:<dir>`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let bad = || Error::Validation(format!("cannot parse codec {s:?}"));
        Ok(match kind {
            "identity" => {
                let mut parts = rest.split(':').filter(|p| !p.is_empty());
                let frame_len = parts
                    .next()
                    .map(str::parse)
                    .transpose()
                    .map_err(|_| bad())?;
                let sample_rate = parts
                    .next()
                    .map(str::parse)
                    .transpose()
                    .map_err(|_| bad())?;
                CodecSpec::Identity {
                    name: None,
                    frame_len: frame_len.unwrap_or_else(identity_frame),
                    sample_rate: sample_rate.unwrap_or_else(identity_rate),
                }
            }
            "rvq" if !rest.is_empty() => CodecSpec::Rvq {
                name: None,
                model: rest.into(),
            },
            "external" if !rest.is_empty() => CodecSpec::External {
                name: None,
                dir: rest.into(),
            },
            _ => return Err(bad()),
        })
    }

    /// Explicit name, if the config gave one.
    pub fn name_override(&self) -> Option<&str> {
        match self {
            CodecSpec::Identity { name, .. }
            | CodecSpec::Rvq { name, .. }
            | CodecSpec::External { name, .. } => name.as_deref(),
        }
    }

    fn resolve(&mut self, base: &Path) {
        match self {
            CodecSpec::Rvq { model, .. } => *model = resolve(base, model),
            CodecSpec::External { dir, .. } => *dir = resolve(base, dir),
            CodecSpec::Identity { .. } => {}
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            CodecSpec::Rvq { model, .. } if !model.is_file() => Err(Error::Validation(format!(
                "RVQ model {} not found",
                model.display()
            ))),
            CodecSpec::External { dir, .. } if !dir.join(DESCRIPTOR_FILE).is_file() => {
                Err(Error::Validation(format!(
                    "external codec directory {} has no {DESCRIPTOR_FILE}",
                    dir.display()
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub manifest: PathBuf,
    /// Grouping used in reports and for domain-matched PPL: speech, music or sound.
    #[serde(default = "default_dataset_type")]
    pub dataset_type: String,
    /// Codecs left out of reconstruction scoring on this dataset, e.g. a speech
    /// codec on music. Their cells stay empty in the report.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclude_codecs: Vec<String>,
}

fn default_dataset_type() -> String {
    "speech".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconSection {
    /// Dataset names to score; all when absent.
    #[serde(default)]
    pub datasets: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdsensSection {
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_shift")]
    pub shift_ms: f64,
    #[serde(default)]
    pub pooling: Pooling,
    /// Utterances per codec, taken in manifest order across datasets.
    #[serde(default = "default_idsens_utts")]
    pub max_utterances: usize,
    #[serde(default)]
    pub datasets: Option<Vec<String>>,
}

fn default_rounds() -> usize {
    DEFAULT_ROUNDS
}

fn default_shift() -> f64 {
    DEFAULT_SHIFT_MS
}

fn default_idsens_utts() -> usize {
    20
}

impl Default for IdsensSection {
    fn default() -> Self {
        IdsensSection {
            rounds: DEFAULT_ROUNDS,
            shift_ms: DEFAULT_SHIFT_MS,
            pooling: Pooling::default(),
            max_utterances: default_idsens_utts(),
            datasets: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PplSection {
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default)]
    pub datasets: Option<Vec<String>>,
}

fn default_order() -> usize {
    DEFAULT_ORDER
}

fn default_discount() -> f64 {
    DEFAULT_DISCOUNT
}

impl Default for PplSection {
    fn default() -> Self {
        PplSection {
            order: DEFAULT_ORDER,
            discount: DEFAULT_DISCOUNT,
            datasets: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingChoice {
    /// Centroid sums for RVQ, `<utt_id>.emb` dumps for external codecs when present, one-hot otherwise.
    #[default]
    Auto,
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSection {
    pub name: String,
    pub dataset: String,
    #[serde(default)]
    pub embedding: EmbeddingChoice,
    #[serde(flatten)]
    pub spec: ProbeTaskSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_first_k")]
    pub first_k: usize,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
    #[serde(default, rename = "codec")]
    pub codecs: Vec<CodecSpec>,
    #[serde(default, rename = "dataset")]
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub recon: Option<ReconSection>,
    #[serde(default)]
    pub idsens: Option<IdsensSection>,
    #[serde(default)]
    pub ppl: Option<PplSection>,
    #[serde(default, rename = "probe")]
    pub probes: Vec<ProbeSection>,
}

fn default_out() -> PathBuf {
    "report".into()
}

fn default_workers() -> usize {
    1
}

fn default_first_k() -> usize {
    DEFAULT_FIRST_K
}

fn default_formats() -> Vec<String> {
    ["csv", "json", "markdown", "svg"]
        .map(String::from)
        .to_vec()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: RunConfig =
            toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        c.resolve_paths(base_dir);
        Ok(c)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::Validation(format!("{} not found", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.out_dir = resolve(base, &self.out_dir);
        if let Some(c) = &mut self.cache_dir {
            *c = resolve(base, c);
        }
        for c in &mut self.codecs {
            c.resolve(base);
        }
        for d in &mut self.datasets {
            d.manifest = resolve(base, &d.manifest);
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("cache"))
    }

    pub fn report_formats(&self) -> Result<Vec<ReportFormat>> {
        self.formats.iter().map(|f| f.parse()).collect()
    }

    pub fn dataset(&self, name: &str) -> Option<&DatasetSpec> {
        self.datasets.iter().find(|d| d.name == name)
    }

    /// Checks everything that can be checked without running an experiment,
    /// and returns the loaded manifests in dataset order.
    pub fn validate(&self) -> Result<Vec<Manifest>> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.first_k == 0 {
            return bad("first_k must be at least 1".into());
        }
        self.report_formats()?;
        if self.codecs.is_empty() {
            return bad("no codec configured".into());
        }
        for c in &self.codecs {
            c.check()?;
        }
        let mut names = HashSet::new();
        for d in &self.datasets {
            if !names.insert(d.name.as_str()) {
                return bad(format!("duplicate dataset name {:?}", d.name));
            }
        }
        let lists = [
            self.recon.as_ref().and_then(|r| r.datasets.as_ref()),
            self.idsens.as_ref().and_then(|r| r.datasets.as_ref()),
            self.ppl.as_ref().and_then(|r| r.datasets.as_ref()),
        ];
        for n in lists.into_iter().flatten().flatten() {
            if !names.contains(n.as_str()) {
                return bad(format!("unknown dataset {n:?}"));
            }
        }
        if let Some(i) = &self.idsens {
            if i.rounds < 2 || !(i.shift_ms >= 0.0) {
                return bad("idsens needs rounds >= 2 and a non-negative shift".into());
            }
        }
        if let Some(p) = &self.ppl {
            if p.order == 0 || !(p.discount > 0.0 && p.discount < 1.0) {
                return bad("ppl needs order >= 1 and 0 < discount < 1".into());
            }
        }
        let mut probe_names = HashSet::new();
        for p in &self.probes {
            if !probe_names.insert(p.name.as_str()) {
                return bad(format!("duplicate probe name {:?}", p.name));
            }
            if !names.contains(p.dataset.as_str()) {
                return bad(format!(
                    "probe {:?} uses unknown dataset {:?}",
                    p.name, p.dataset
                ));
            }
            p.spec
                .validate()
                .map_err(|e| e.context(format!("probe {}", p.name)))?;
        }
        self.datasets
            .iter()
            .map(|d| {
                let m = Manifest::read(&d.manifest)
                    .map_err(|e| e.context(format!("dataset {}", d.name)))?;
                m.validate()
                    .map_err(|e| e.context(format!("dataset {}", d.name)))?;
                Ok(m)
            })
            .collect()
    }
}
