use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::write_atomic;
use super::{DataError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub category: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Per category, shuffles and assigns `ceil(0.85·n)` entries to train.
pub fn split_manifest(entries: &[(String, String)], seed: u64) -> DatasetManifest {
    let mut by_cat: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (path, cat) in entries {
        by_cat.entry(cat).or_default().push(path);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(entries.len());
    for (cat, mut paths) in by_cat {
        paths.shuffle(&mut rng);
        let n_train = (85 * paths.len()).div_ceil(100);
        for (i, p) in paths.into_iter().enumerate() {
            out.push(ManifestEntry {
                path: p.to_string(),
                category: cat.to_string(),
                split: if i < n_train { Split::Train } else { Split::Test },
            });
        }
    }
    DatasetManifest { entries: out, seed }
}

/// `path<TAB>category<TAB>split` lines, preceded by a `# seed <n>` comment.
pub fn save_manifest(path: &Path, m: &DatasetManifest) -> Result<()> {
    let mut s = format!("# seed {}\n", m.seed);
    for e in &m.entries {
        s.push_str(&format!("{}\t{}\t{}\n", e.path, e.category, e.split));
    }
    write_atomic(path, s.as_bytes())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: name.clone(),
        source,
    })?;
    let err = |line: usize, msg: String| DataError::Parse {
        path: name.clone(),
        line,
        msg,
    };
    let mut seed = 0;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("seed") {
                seed = v.trim().parse().map_err(|_| err(i + 1, "bad seed".into()))?;
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(err(i + 1, format!("expected 3 tab-separated fields, found {}", f.len())));
        }
        entries.push(ManifestEntry {
            path: f[0].to_string(),
            category: f[1].to_string(),
            split: f[2].parse().map_err(|e| err(i + 1, e))?,
        });
    }
    Ok(DatasetManifest { entries, seed })
}
