//! On-disk dataset format.
//!
//! A dataset directory is self-contained: it carries the grammar and graph
//! text it was generated from (with sha256 digests in the manifest so silent
//! edits are caught), an index of episodes, per-episode label/scene text
//! files, binary feature matrices, and train/test splits. Nothing in the
//! directory depends on wall-clock time, so regenerating with the same seed
//! reproduces every byte.
//!
//! ```text
//! dataset/
//!   manifest.txt        key value lines, sorted
//!   grammar.txt         exact grammar source
//!   graph.txt           exact graph source
//!   index.txt           "<id> <frames> <activity> <seed>" per episode
//!   splits/train.txt    episode ids, one per line
//!   splits/test.txt
//!   episodes/<id>.labels   space-separated class ids
//!   episodes/<id>.scenes   one line per frame: sorted object names
//!   episodes/<id>.feat     "AFRM" + u32 rows + u32 cols + f32 LE payload
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::generate::{EpisodeSample, GenSettings};
use super::ActionGrammar;
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, SceneAnnotation};
use crate::tensor::Tensor;

const FRAME_MAGIC: &[u8; 4] = b"AFRM";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub episodes: Vec<EpisodeSample>,
    /// Indices into `episodes`.
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub grammar: ActionGrammar,
    pub graph: KnowledgeGraph,
    pub manifest: BTreeMap<String, String>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&[usize]> {
        match name {
            "train" => Ok(&self.train_ids),
            "test" => Ok(&self.test_ids),
            other => Err(Error::Data(format!(
                "unknown split {other:?}, expected \"train\" or \"test\""
            ))),
        }
    }
}

pub fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes a complete dataset directory. Episodes keep their generation
/// order; the split boundary puts the first `train_fraction` of them into
/// the training set.
pub fn write_dataset(
    dir: &Path,
    episodes: &[EpisodeSample],
    grammar_text: &str,
    graph_text: &str,
    settings: &GenSettings,
    train_fraction: f64,
) -> Result<()> {
    if episodes.is_empty() {
        return Err(Error::Data("refusing to write an empty dataset".into()));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Data(format!(
            "train_fraction must lie in [0, 1], got {train_fraction}"
        )));
    }
    let n_train = split_point(episodes.len(), train_fraction);

    create_dir(dir)?;
    create_dir(&dir.join("splits"))?;
    create_dir(&dir.join("episodes"))?;

    let mut manifest: BTreeMap<String, String> = BTreeMap::new();
    manifest.insert("format-version".into(), FORMAT_VERSION.to_string());
    manifest.insert("seed".into(), settings.seed.to_string());
    manifest.insert("sigma".into(), format!("{}", settings.sigma));
    manifest.insert("feat-dim".into(), settings.feat_dim.to_string());
    manifest.insert("episodes".into(), episodes.len().to_string());
    manifest.insert("train-episodes".into(), n_train.to_string());
    manifest.insert("grammar-sha256".into(), sha256_hex(grammar_text));
    manifest.insert("graph-sha256".into(), sha256_hex(graph_text));
    let manifest_text: String = manifest
        .iter()
        .map(|(k, v)| format!("{k} {v}\n"))
        .collect();

    write_text(&dir.join("manifest.txt"), &manifest_text)?;
    write_text(&dir.join("grammar.txt"), grammar_text)?;
    write_text(&dir.join("graph.txt"), graph_text)?;

    let mut index = String::new();
    for ep in episodes {
        index.push_str(&format!(
            "{} {} {} {}\n",
            ep.id,
            ep.len(),
            ep.activity,
            ep.seed
        ));
    }
    write_text(&dir.join("index.txt"), &index)?;

    let ids = |range: std::ops::Range<usize>| -> String {
        range.map(|i| format!("{}\n", episodes[i].id)).collect()
    };
    write_text(&dir.join("splits/train.txt"), &ids(0..n_train))?;
    write_text(&dir.join("splits/test.txt"), &ids(n_train..episodes.len()))?;

    for ep in episodes {
        let base = dir.join("episodes").join(&ep.id);
        let labels: Vec<String> = ep.labels.iter().map(|l| l.to_string()).collect();
        write_text(&base.with_extension("labels"), &(labels.join(" ") + "\n"))?;

        let mut scenes = String::new();
        for scene in &ep.scenes {
            let names: Vec<&str> = scene.iter().map(String::as_str).collect();
            scenes.push_str(&names.join(" "));
            scenes.push('\n');
        }
        write_text(&base.with_extension("scenes"), &scenes)?;
        write_frames(&base.with_extension("feat"), &ep.frames)?;
    }
    Ok(())
}

fn split_point(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(&dir.join("manifest.txt"))?;
    let version: u32 = manifest
        .get("format-version")
        .ok_or_else(|| Error::Data("manifest is missing format-version".into()))?
        .parse()
        .map_err(|_| Error::Data("manifest format-version is not a number".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "dataset format-version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }

    let grammar_text = read_text(&dir.join("grammar.txt"))?;
    let graph_text = read_text(&dir.join("graph.txt"))?;
    for (file, text, key) in [
        ("grammar.txt", &grammar_text, "grammar-sha256"),
        ("graph.txt", &graph_text, "graph-sha256"),
    ] {
        let expect = manifest
            .get(key)
            .ok_or_else(|| Error::Data(format!("manifest is missing {key}")))?;
        let got = sha256_hex(text);
        if &got != expect {
            return Err(Error::Data(format!(
                "{file} does not match its manifest digest; the dataset was edited after generation"
            )));
        }
    }
    let grammar = ActionGrammar::parse(&grammar_text, "grammar.txt")?;
    let graph = KnowledgeGraph::parse(&graph_text, "graph.txt")?;

    let index_path = dir.join("index.txt");
    let mut episodes = Vec::new();
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
    for (lineno, line) in read_text(&index_path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let fail = |msg: String| Error::parse("index.txt", lineno + 1, msg);
        if fields.len() != 4 {
            return Err(fail(format!(
                "expected \"id frames activity seed\", got {} fields",
                fields.len()
            )));
        }
        let id = fields[0].to_string();
        let n: usize = fields[1]
            .parse()
            .map_err(|_| fail(format!("bad frame count {:?}", fields[1])))?;
        let seed: u64 = fields[3]
            .parse()
            .map_err(|_| fail(format!("bad seed {:?}", fields[3])))?;
        let ep = read_episode(dir, &id, n, fields[2], seed, &grammar)?;
        by_id.insert(id, episodes.len());
        episodes.push(ep);
    }
    if episodes.is_empty() {
        return Err(Error::Data(format!(
            "{} lists no episodes",
            index_path.display()
        )));
    }

    let read_split = |name: &str| -> Result<Vec<usize>> {
        let path = dir.join("splits").join(name);
        let mut out = Vec::new();
        for (lineno, line) in read_text(&path)?.lines().enumerate() {
            let id = line.trim();
            if id.is_empty() {
                continue;
            }
            let &idx = by_id.get(id).ok_or_else(|| {
                Error::parse(
                    format!("splits/{name}"),
                    lineno + 1,
                    format!("unknown episode id {id:?}"),
                )
            })?;
            out.push(idx);
        }
        Ok(out)
    };
    let train_ids = read_split("train.txt")?;
    let test_ids = read_split("test.txt")?;

    Ok(Dataset {
        episodes,
        train_ids,
        test_ids,
        grammar,
        graph,
        manifest,
    })
}

fn read_episode(
    dir: &Path,
    id: &str,
    n: usize,
    activity: &str,
    seed: u64,
    grammar: &ActionGrammar,
) -> Result<EpisodeSample> {
    let base = dir.join("episodes").join(id);

    let labels_path = base.with_extension("labels");
    let labels_text = read_text(&labels_path)?;
    let mut labels = Vec::with_capacity(n);
    for tok in labels_text.split_whitespace() {
        let class: usize = tok.parse().map_err(|_| {
            Error::parse(labels_path.display().to_string(), 1, format!("bad label {tok:?}"))
        })?;
        if class >= grammar.n_actions() {
            return Err(Error::Data(format!(
                "{id}: label {class} exceeds the grammar's {} actions",
                grammar.n_actions()
            )));
        }
        labels.push(class);
    }

    let scenes_path = base.with_extension("scenes");
    let scenes: Vec<SceneAnnotation> = read_text(&scenes_path)?
        .lines()
        .map(|line| line.split_whitespace().map(str::to_string).collect())
        .collect();

    let frames = read_frames(&base.with_extension("feat"))?;
    for (what, got) in [
        ("labels", labels.len()),
        ("scenes", scenes.len()),
        ("feature rows", frames.rows()),
    ] {
        if got != n {
            return Err(Error::Data(format!(
                "{id}: index promises {n} frames but {what} has {got}"
            )));
        }
    }

    Ok(EpisodeSample {
        id: id.to_string(),
        activity: activity.to_string(),
        seed,
        labels,
        scenes,
        frames,
    })
}

fn write_frames(path: &Path, frames: &Tensor<f32>) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + frames.data().len() * 4);
    buf.extend_from_slice(FRAME_MAGIC);
    buf.extend_from_slice(&(frames.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(frames.cols() as u32).to_le_bytes());
    for v in frames.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &buf)
}

fn read_frames(path: &Path) -> Result<Tensor<f32>> {
    let bytes = read_bytes(path)?;
    let corrupt = |msg: &str| Error::Data(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[..4] != FRAME_MAGIC {
        return Err(corrupt("not a feature matrix file"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expect = 12 + rows * cols * 4;
    if bytes.len() != expect {
        return Err(corrupt(&format!(
            "payload is {} bytes, header promises {expect}",
            bytes.len()
        )));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::new(vec![rows, cols], data))
}

fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in read_text(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once(' ').ok_or_else(|| {
            Error::parse("manifest.txt", lineno + 1, "expected \"key value\"")
        })?;
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?)
        .map_err(|_| Error::Data(format!("{} is not valid UTF-8", path.display())))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(buf)
}

/// Every file under `dir`, relative path -> contents. Test helper for
/// byte-level reproducibility checks, but also handy for debugging.
pub fn snapshot_dir(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        let entries = std::fs::read_dir(&current).map_err(|e| Error::io(current.display().to_string(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(current.display().to_string(), e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_path_buf();
                out.insert(rel, read_bytes(&path)?);
            }
        }
    }
    Ok(out)
}
