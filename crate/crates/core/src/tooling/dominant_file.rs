//! JSON form of a [`DominantSet`].
//!
//! ```json
//! {
//!   "config": { "d": 128, "base": 10000.0, "n_tip": 16, "window": 256 },
//!   "heads": { "0.0": [ { "chunk": 5, "mean_ca": 0.93 }, ... ], ... },
//!   "provenance": "..."
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agreement::AgreementWindow;
use crate::calibration::{DominantChunk, DominantSet, HeadId};
use crate::error::{FasaError, Result};
use crate::rope::RopeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub d: usize,
    pub base: f64,
    pub n_tip: usize,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominantSetFile {
    pub config: FileConfig,
    pub heads: BTreeMap<String, Vec<DominantChunk>>,
    #[serde(default)]
    pub provenance: String,
}

impl From<&DominantSet> for DominantSetFile {
    fn from(s: &DominantSet) -> Self {
        Self {
            config: FileConfig {
                d: s.cfg.head_dim(),
                base: s.cfg.base(),
                n_tip: s.n_tip,
                window: s.window.get(),
            },
            heads: s.entries.iter().map(|(h, e)| (h.to_string(), e.clone())).collect(),
            provenance: s.provenance.clone(),
        }
    }
}

impl TryFrom<DominantSetFile> for DominantSet {
    type Error = FasaError;

    fn try_from(f: DominantSetFile) -> Result<Self> {
        let cfg =
            RopeConfig::new(f.config.d, f.config.base).map_err(|e| FasaError::validation("/config", e.to_string()))?;
        let window = AgreementWindow::new(f.config.window)
            .map_err(|e| FasaError::validation("/config/window", e.to_string()))?;
        let mut entries = BTreeMap::new();
        for (key, list) in f.heads {
            let head: HeadId = key
                .parse()
                .map_err(|e: FasaError| FasaError::validation(format!("/heads/{key}"), e.to_string()))?;
            if entries.insert(head, list).is_some() {
                return Err(FasaError::validation(format!("/heads/{key}"), "head listed twice"));
            }
        }
        let set = DominantSet {
            cfg,
            n_tip: f.config.n_tip,
            window,
            entries,
            provenance: f.provenance,
        };
        set.validate()?;
        Ok(set)
    }
}

pub fn to_json(set: &DominantSet) -> String {
    let mut s = serde_json::to_string_pretty(&DominantSetFile::from(set)).expect("dominant set serializes");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<DominantSet> {
    let file: DominantSetFile = serde_json::from_str(text).map_err(|e| FasaError::validation("/", e.to_string()))?;
    file.try_into()
}

/// Validates, then writes atomically.
pub fn save_dominant(path: impl AsRef<Path>, set: &DominantSet) -> Result<()> {
    set.validate()?;
    super::atomic_write(path.as_ref(), to_json(set).as_bytes())
}

pub fn load_dominant(path: impl AsRef<Path>) -> Result<DominantSet> {
    let bytes = super::read_file(path.as_ref())?;
    let text = std::str::from_utf8(&bytes).map_err(|e| FasaError::validation("/", e.to_string()))?;
    from_json(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::ChunkIndex;

    fn sample() -> DominantSet {
        let list = |a: usize, b: usize| {
            vec![
                DominantChunk {
                    chunk: ChunkIndex(a),
                    mean_ca: 0.875,
                },
                DominantChunk {
                    chunk: ChunkIndex(b),
                    mean_ca: 0.1 + 0.2,
                },
            ]
        };
        DominantSet {
            cfg: RopeConfig::new(8, 10_000.0).unwrap(),
            n_tip: 2,
            window: AgreementWindow::new(64).unwrap(),
            entries: [(HeadId::new(0, 0), list(3, 1)), (HeadId::new(1, 2), list(0, 2))].into(),
            provenance: "unit test".into(),
        }
    }

    fn path_of(e: FasaError) -> String {
        match e {
            FasaError::Validation { path, .. } => path,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let s = sample();
        let back = from_json(&to_json(&s)).unwrap();
        assert_eq!(back, s);
        assert_eq!(
            back.entries[&HeadId::new(0, 0)][1].mean_ca.to_bits(),
            (0.1f64 + 0.2).to_bits()
        );
    }

    #[test]
    fn layout_uses_head_keys() {
        let v: serde_json::Value = serde_json::from_str(&to_json(&sample())).unwrap();
        assert_eq!(v["config"]["n_tip"], 2);
        assert_eq!(v["heads"]["1.2"][0]["chunk"], 0);
    }

    #[test]
    fn invalid_files_report_paths() {
        let text = to_json(&sample());
        let edit = |from: &str, to: &str| from_json(&text.replacen(from, to, 1)).unwrap_err();
        assert_eq!(path_of(edit("\"chunk\": 3", "\"chunk\": 9")), "/heads/0.0/0/chunk");
        assert_eq!(path_of(edit("\"chunk\": 1", "\"chunk\": 3")), "/heads/0.0/1/chunk");
        assert_eq!(path_of(edit("\"n_tip\": 2", "\"n_tip\": 3")), "/heads/0.0");
        assert_eq!(path_of(edit("\"n_tip\": 2", "\"n_tip\": 0")), "/config/n_tip");
        assert_eq!(path_of(edit("\"window\": 64", "\"window\": 0")), "/config/window");
        assert_eq!(path_of(edit("\"1.2\"", "\"one.two\"")), "/heads/one.two");
        assert_eq!(path_of(edit("\"d\": 8", "\"d\": 7")), "/config");
        assert_eq!(path_of(edit("0.875", "1.5")), "/heads/0.0/0/mean_ca");
        assert_eq!(path_of(from_json("{").unwrap_err()), "/");
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dom.json");
        save_dominant(&path, &sample()).unwrap();
        assert_eq!(load_dominant(&path).unwrap(), sample());
        assert!(matches!(
            load_dominant(dir.path().join("missing.json")),
            Err(FasaError::File { .. })
        ));
    }
}
