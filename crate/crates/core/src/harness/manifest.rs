//! JSON Lines manifests.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::Label;
use crate::signal::{read_wav, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Speech,
    Music,
    Sound,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Speech => "speech",
            Domain::Music => "music",
            Domain::Sound => "sound",
        })
    }
}

/// Keep `[start, start + duration)` seconds of the audio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crop {
    pub start_secs: f64,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utt_id: String,
    /// Relative paths are resolved against the manifest's directory.
    pub audio: PathBuf,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<Crop>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Self {
        Manifest {
            entries,
            base_dir: base_dir.into(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::Validation(format!("{} not found", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(line)
                .map_err(|e| Error::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
            entries.push(e);
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest::new(entries, base))
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("serializable") + "\n")
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Unique ids, existing audio files, sane crops.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.utt_id.is_empty() || e.utt_id.contains(['/', '\\']) {
                return Err(Error::Validation(format!("invalid utt_id {:?}", e.utt_id)));
            }
            if !seen.insert(e.utt_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate utt_id {:?}",
                    e.utt_id
                )));
            }
            let p = self.audio_path(e);
            if !p.is_file() {
                return Err(Error::Validation(format!(
                    "{}: audio {} not found",
                    e.utt_id,
                    p.display()
                )));
            }
            if let Some(c) = e.crop {
                if !(c.start_secs >= 0.0 && c.duration_secs > 0.0) {
                    return Err(Error::Validation(format!("{}: invalid crop", e.utt_id)));
                }
            }
        }
        Ok(())
    }

    pub fn audio_path(&self, e: &ManifestEntry) -> PathBuf {
        if e.audio.is_absolute() {
            e.audio.clone()
        } else {
            self.base_dir.join(&e.audio)
        }
    }

    /// Audio of one entry with its crop applied.
    pub fn load_audio(&self, e: &ManifestEntry) -> Result<Waveform> {
        let w = read_wav(self.audio_path(e))
            .map_err(|err| err.context(format!("utterance {}", e.utt_id)))?;
        let Some(c) = e.crop else { return Ok(w) };
        let sr = w.sample_rate() as f64;
        let start = ((c.start_secs * sr).round() as usize).min(w.len());
        let end = (start + (c.duration_secs * sr).round() as usize).min(w.len());
        Waveform::new(w.samples()[start..end].to_vec(), w.sample_rate())
            .map_err(|err| err.context(format!("utterance {} after crop", e.utt_id)))
    }

    /// Entries of one split, in manifest order.
    pub fn split(&self, s: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == s).collect()
    }

    /// Data a model may be fitted on. The test split is never returned.
    pub fn fit_split(&self) -> Vec<&ManifestEntry> {
        self.split(Split::Train)
    }

    /// Held-out data for scoring: valid when present, test otherwise.
    pub fn heldout_split(&self) -> Vec<&ManifestEntry> {
        let v = self.split(Split::Valid);
        if v.is_empty() {
            self.split(Split::Test)
        } else {
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::write_wav;

    fn entry(id: &str, split: Split) -> ManifestEntry {
        ManifestEntry {
            utt_id: id.into(),
            audio: format!("{id}.wav").into(),
            split,
            transcript: None,
            labels: None,
            domain: None,
            crop: None,
        }
    }

    #[test]
    fn round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let w = Waveform::new(vec![0.1; 1600], 16000).unwrap();
        write_wav(&w, dir.path().join("a.wav")).unwrap();
        write_wav(&w, dir.path().join("b.wav")).unwrap();
        let mut m = Manifest::new(
            vec![entry("a", Split::Train), entry("b", Split::Test)],
            dir.path(),
        );
        m.entries[1].labels = Some(Label::Class(1));
        m.entries[1].crop = Some(Crop {
            start_secs: 0.05,
            duration_secs: 0.025,
        });
        let path = dir.path().join("m.jsonl");
        m.write(&path).unwrap();
        let back = Manifest::read(&path).unwrap();
        assert_eq!(back, m);
        back.validate().unwrap();
        assert_eq!(back.load_audio(&back.entries[1]).unwrap().len(), 400);
        assert_eq!(back.heldout_split().len(), 1);
        assert!(back.fit_split().iter().all(|e| e.split == Split::Train));

        let dup = Manifest::new(
            vec![entry("a", Split::Train), entry("a", Split::Test)],
            dir.path(),
        );
        assert!(dup.validate().unwrap_err().is_validation());
        let missing = Manifest::new(vec![entry("zzz", Split::Train)], dir.path());
        assert!(missing.validate().is_err());
    }

    #[test]
    fn parses_optional_fields() {
        let line = r#"{"utt_id":"x","audio":"/tmp/x.wav","split":"valid","labels":{"regression":[1.5]},"domain":"music"}"#;
        let e: ManifestEntry = serde_json::from_str(line).unwrap();
        assert_eq!(e.labels, Some(Label::Regression(vec![1.5])));
        assert_eq!(e.domain, Some(Domain::Music));
        assert!(serde_json::from_str::<ManifestEntry>(
            r#"{"utt_id":"x","audio":"a","split":"dev"}"#
        )
        .is_err());
    }
}
