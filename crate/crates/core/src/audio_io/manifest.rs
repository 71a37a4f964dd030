use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{decode_wav, label_for_category, AudioClip, Label, CATEGORIES, SAMPLE_RATE};
use crate::error::{Error, Result};

const MANIFEST_FORMAT: &str = "fallsense-manifest";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// How files of one category are distributed over the three splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitPolicy {
    /// Every file is split independently (stratified per category).
    #[default]
    PerFile,
    /// Whole augmentation families (a source clip and its variants) are
    /// assigned together, so no source is shared between splits.
    BySource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the manifest root.
    pub path: String,
    pub category_id: u8,
    pub label: Label,
    pub split: Split,
    pub augment_tag: Option<String>,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    root: PathBuf,
    seed: u64,
    max_len_samples: usize,
}

/// A labeled, split corpus listing.
///
/// Serialized as JSON lines: one header record (format, version, root, seed,
/// max_len_samples) followed by one record per clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub max_len_samples: usize,
    pub seed: u64,
}

/// `(train, val, test)` sizes for a category holding `n` files.
///
/// Validation takes `floor(n/10)`, test takes `ceil(n/10)`, train keeps the
/// rest.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let val = n / 10;
    let test = n.div_ceil(10);
    (n - val - test, val, test)
}

fn category_rng(seed: u64, category_id: u8) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (category_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Assigns splits to `items` (already sorted) of a single category.
fn assign<T: Clone>(items: &[T], seed: u64, category_id: u8) -> Vec<(T, Split)> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut category_rng(seed, category_id));
    let (_, val, test) = split_counts(items.len());
    order
        .into_iter()
        .enumerate()
        .map(|(rank, idx)| {
            let split = if rank < test {
                Split::Test
            } else if rank < test + val {
                Split::Val
            } else {
                Split::Train
            };
            (items[idx].clone(), split)
        })
        .collect()
}

struct Found {
    rel: String,
    category_id: u8,
    source_id: String,
    augment_tag: Option<String>,
    len: usize,
}

fn scan_corpus(corpus_dir: &Path) -> Result<BTreeMap<u8, Vec<Found>>> {
    let mut by_cat: BTreeMap<u8, Vec<Found>> = BTreeMap::new();
    let mut seen = HashSet::new();
    let mut dirs: Vec<(u8, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(corpus_dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name();
        let Some(cat) = name.to_str().and_then(|n| n.parse::<u8>().ok()) else {
            continue;
        };
        label_for_category(cat)?;
        dirs.push((cat, entry.path()));
    }
    dirs.sort();
    for (cat, dir) in dirs {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::EmptyCategory(cat));
        }
        let list = by_cat.entry(cat).or_default();
        for path in files {
            let canonical = path.canonicalize()?;
            let rel = format!("{cat}/{}", path.file_name().unwrap().to_string_lossy());
            if !seen.insert(canonical) {
                return Err(Error::DuplicatePath(rel));
            }
            let reader = hound::WavReader::open(&path).map_err(|e| Error::MalformedWav {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            let spec = reader.spec();
            let frames = reader.duration() as usize;
            let len = (frames * SAMPLE_RATE as usize).div_ceil(spec.sample_rate as usize);
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            let (source, tag) = match stem.split_once("__") {
                Some((s, t)) => (s.to_string(), Some(t.to_string())),
                None => (stem, None),
            };
            list.push(Found {
                rel,
                category_id: cat,
                source_id: format!("{cat}/{source}"),
                augment_tag: tag,
                len,
            });
        }
    }
    if by_cat.is_empty() {
        return Err(Error::EmptyCategory(CATEGORIES[0]));
    }
    Ok(by_cat)
}

/// Builds a per-file stratified manifest for `<corpus>/<category_id>/*.wav`.
pub fn build_manifest(corpus_dir: &Path, seed: u64) -> Result<DatasetManifest> {
    build_manifest_with(corpus_dir, seed, SplitPolicy::PerFile)
}

pub fn build_manifest_with(
    corpus_dir: &Path,
    seed: u64,
    policy: SplitPolicy,
) -> Result<DatasetManifest> {
    let by_cat = scan_corpus(corpus_dir)?;
    let mut entries = Vec::new();
    let mut max_len = 0;
    for (&cat, files) in &by_cat {
        let label = label_for_category(cat)?;
        max_len = files.iter().map(|f| f.len).fold(max_len, usize::max);
        let assigned: Vec<(usize, Split)> = match policy {
            SplitPolicy::PerFile => assign(&(0..files.len()).collect::<Vec<_>>(), seed, cat),
            SplitPolicy::BySource => {
                let sources: Vec<String> = files
                    .iter()
                    .map(|f| f.source_id.clone())
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let by_source: BTreeMap<String, Split> =
                    assign(&sources, seed, cat).into_iter().collect();
                files
                    .iter()
                    .enumerate()
                    .map(|(i, f)| (i, by_source[&f.source_id]))
                    .collect()
            }
        };
        let mut split_of = vec![Split::Train; files.len()];
        for (i, s) in assigned {
            split_of[i] = s;
        }
        for (f, split) in files.iter().zip(split_of) {
            entries.push(ManifestEntry {
                path: f.rel.clone(),
                category_id: f.category_id,
                label,
                split,
                augment_tag: f.augment_tag.clone(),
                source_id: f.source_id.clone(),
            });
        }
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(DatasetManifest {
        root: corpus_dir.to_path_buf(),
        entries,
        max_len_samples: max_len,
        seed,
    })
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> Result<String> {
        let header = Header {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            root: self.root.clone(),
            seed: self.seed,
            max_len_samples: self.max_len_samples,
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(lines.next().ok_or_else(|| Error::Parse {
            context: "manifest".into(),
            reason: "missing header record".into(),
        })?)?;
        if header.format != MANIFEST_FORMAT {
            return Err(Error::Parse {
                context: "manifest".into(),
                reason: format!("unexpected format `{}`", header.format),
            });
        }
        if header.version != MANIFEST_VERSION {
            return Err(Error::VersionMismatch {
                found: header.version,
                expected: MANIFEST_VERSION,
            });
        }
        let entries = lines
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ManifestEntry>, _>>()?;
        Ok(Self {
            root: header.root,
            entries,
            max_len_samples: header.max_len_samples,
            seed: header.seed,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split, label: Label) -> usize {
        self.split(split).filter(|e| e.label == label).count()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    pub fn path_of(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Decodes the clip behind `entry` (unpadded).
    pub fn load(&self, entry: &ManifestEntry) -> Result<AudioClip> {
        let mut clip = decode_wav(&self.path_of(entry))?;
        clip.source_id = entry.source_id.clone();
        clip.augment_tag = entry.augment_tag.clone();
        Ok(clip)
    }
}
