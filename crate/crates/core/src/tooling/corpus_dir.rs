//! Calibration corpora on disk.
//!
//! A corpus directory holds one `q_<l>_<h>_<s>.fast` (rank 1, `d`) and one
//! `k_<l>_<h>_<s>.fast` (rank 2, `t x d`) per sample, an optional
//! `v_<l>_<h>_<s>.fast`, and a `manifest.json` listing every sample with its
//! query position. Vectors stored in the `half-split` layout are permuted to
//! paired chunks when read. Values are never permuted.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::{half_split_to_paired, paired_to_half_split, read_tensor, write_tensor, Tensor};
use crate::calibration::{CalibrationCorpus, HeadId};
use crate::error::{FasaError, Result};
use crate::matrix::Matrix;
use crate::rope::RopeConfig;
use crate::scores::HeadSample;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Chunk `i` is coordinates `(2i, 2i + 1)`.
    #[default]
    Paired,
    /// Chunk `i` is coordinates `(i, i + d/2)`.
    HalfSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub layer: usize,
    pub head: usize,
    pub sample: usize,
    pub q_pos: usize,
    #[serde(default)]
    pub values: bool,
}

impl ManifestEntry {
    fn file(&self, kind: char) -> String {
        format!("{kind}_{}_{}_{}.fast", self.layer, self.head, self.sample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub d: usize,
    pub base: f64,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default)]
    pub provenance: String,
    pub samples: Vec<ManifestEntry>,
    /// Accepted and ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<serde_json::Value>,
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let bytes = super::read_file(&dir.join(MANIFEST))?;
    serde_json::from_slice(&bytes).map_err(|e| FasaError::validation("/", format!("{MANIFEST}: {e}")))
}

fn fast_files(dir: &Path) -> Result<BTreeSet<String>> {
    let file_err = |source| FasaError::File {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(file_err)? {
        let name = entry.map_err(file_err)?.file_name().to_string_lossy().into_owned();
        if name.ends_with(".fast") {
            out.insert(name);
        }
    }
    Ok(out)
}

fn load_vec(path: &Path, layout: Layout) -> Result<Vec<f32>> {
    let v = read_tensor(path)?.into_vector()?;
    Ok(match layout {
        Layout::Paired => v,
        Layout::HalfSplit => half_split_to_paired(&v),
    })
}

fn load_rows(path: &Path, layout: Layout) -> Result<Matrix> {
    let m = read_tensor(path)?.into_matrix()?;
    match layout {
        Layout::Paired => Ok(m),
        Layout::HalfSplit => Matrix::from_rows(&m.iter_rows().map(half_split_to_paired).collect::<Vec<_>>()),
    }
}

/// Reads and validates a corpus directory.
pub fn read_corpus(dir: impl AsRef<Path>) -> Result<CalibrationCorpus> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let cfg = RopeConfig::new(manifest.d, manifest.base).map_err(|e| FasaError::validation("/d", e.to_string()))?;
    let mut unlisted = fast_files(dir)?;
    let mut entries: Vec<(usize, &ManifestEntry)> = manifest.samples.iter().enumerate().collect();
    entries.sort_by_key(|(_, e)| (e.layer, e.head, e.sample));
    if let Some(w) = entries
        .windows(2)
        .find(|w| (w[0].1.layer, w[0].1.head, w[0].1.sample) == (w[1].1.layer, w[1].1.head, w[1].1.sample))
    {
        return Err(FasaError::validation(
            format!("/samples/{}", w[1].0),
            "sample listed twice",
        ));
    }
    let mut corpus = CalibrationCorpus::new(cfg, manifest.provenance.clone());
    for (i, e) in entries {
        let named = |kind: char| -> Result<PathBuf> {
            let name = e.file(kind);
            if !unlisted.contains(&name) {
                return Err(FasaError::validation(
                    format!("/samples/{i}"),
                    format!("missing file {name}"),
                ));
            }
            Ok(dir.join(name))
        };
        let q = load_vec(&named('q')?, manifest.layout)?;
        let keys = load_rows(&named('k')?, manifest.layout)?;
        let values = if e.values {
            Some(read_tensor(named('v')?)?.into_matrix()?)
        } else {
            None
        };
        for kind in ['q', 'k', 'v'] {
            unlisted.remove(&e.file(kind));
        }
        let head = HeadId::new(e.layer, e.head);
        corpus
            .push(head, HeadSample::new(q, e.q_pos, keys, values))
            .map_err(|err| FasaError::validation(format!("/samples/{i}"), err.to_string()))?;
    }
    if let Some(name) = unlisted.into_iter().next() {
        return Err(FasaError::validation(
            "/samples",
            format!("{name} is not listed in the manifest"),
        ));
    }
    Ok(corpus)
}

/// Writes every sample of `corpus`, then the manifest. Existing files with the
/// same names are replaced.
pub fn write_corpus(dir: impl AsRef<Path>, corpus: &CalibrationCorpus, layout: Layout) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| FasaError::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let permute = |v: &[f32]| match layout {
        Layout::Paired => v.to_vec(),
        Layout::HalfSplit => paired_to_half_split(v),
    };
    let mut samples = Vec::new();
    for (head, list) in corpus.iter() {
        for (s, sample) in list.iter().enumerate() {
            let e = ManifestEntry {
                layer: head.layer,
                head: head.head,
                sample: s,
                q_pos: sample.q_pos,
                values: sample.values.is_some(),
            };
            write_tensor(dir.join(e.file('q')), &Tensor::vector(permute(&sample.q))?)?;
            let keys = Matrix::from_rows(&sample.keys.iter_rows().map(permute).collect::<Vec<_>>())?;
            write_tensor(dir.join(e.file('k')), &Tensor::from_matrix(&keys)?)?;
            if let Some(v) = &sample.values {
                write_tensor(dir.join(e.file('v')), &Tensor::from_matrix(v)?)?;
            }
            samples.push(e);
        }
    }
    let manifest = Manifest {
        d: corpus.cfg.head_dim(),
        base: corpus.cfg.base(),
        layout,
        provenance: corpus.provenance.clone(),
        samples,
        mask: None,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    super::atomic_write(&dir.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}
