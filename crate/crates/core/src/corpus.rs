//! Datasets, split management and sentence embeddings.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};
use crate::parallel::try_bounded_map;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    Synthetic,
    PoolAnnotated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Pool,
}

impl Split {
    fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "pool" => Some(Split::Pool),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_cluster: Option<String>,
}

impl LabeledExample {
    pub fn original(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label: label.into(),
            origin: Origin::Original,
            source_cluster: None,
        }
    }
}

/// One line of the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRecord {
    pub id: String,
    pub text: String,
    pub label: String,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub label_set: Vec<String>,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub pool: Vec<String>,
    pub examples: HashMap<String, LabeledExample>,
}

impl Dataset {
    /// Builds a dataset from wire records, enforcing every structural invariant.
    pub fn from_records(
        name: impl Into<String>,
        records: Vec<WireRecord>,
        label_override: Option<Vec<String>>,
    ) -> Result<Dataset> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut ds = Dataset {
            name: name.into(),
            label_set: Vec::new(),
            train: Vec::new(),
            validation: Vec::new(),
            pool: Vec::new(),
            examples: HashMap::with_capacity(records.len()),
        };
        for rec in records {
            let split = Split::parse(&rec.split)
                .ok_or_else(|| Error::Validation(format!("unknown split value {:?} for id {}", rec.split, rec.id)))?;
            if ds.examples.contains_key(&rec.id) {
                return Err(Error::Validation(format!("duplicate id {:?}", rec.id)));
            }
            match split {
                Split::Train => ds.train.push(rec.id.clone()),
                Split::Validation => ds.validation.push(rec.id.clone()),
                Split::Pool => ds.pool.push(rec.id.clone()),
            }
            ds.examples
                .insert(rec.id.clone(), LabeledExample::original(rec.id, rec.text, rec.label));
        }
        ds.label_set = match label_override {
            Some(labels) if !labels.is_empty() => labels,
            _ => ds
                .examples
                .values()
                .map(|e| e.label.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let labels: HashSet<&str> = self.label_set.iter().map(String::as_str).collect();
        if labels.len() != self.label_set.len() {
            return Err(Error::Validation("label set contains duplicates".into()));
        }
        let mut seen: HashSet<&str> = HashSet::new();
        for (split, ids) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("pool", &self.pool),
        ] {
            for id in ids {
                if !seen.insert(id) {
                    return Err(Error::Validation(format!(
                        "id {id:?} appears twice across splits (second in {split})"
                    )));
                }
                let ex = self
                    .examples
                    .get(id)
                    .ok_or_else(|| Error::Validation(format!("{split} references unknown id {id:?}")))?;
                if ex.text.trim().is_empty() {
                    return Err(Error::Validation(format!("example {id:?} has empty text")));
                }
                if !labels.contains(ex.label.as_str()) {
                    return Err(Error::Validation(format!(
                        "example {id:?} has label {:?} outside the label set",
                        ex.label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn example(&self, id: &str) -> Result<&LabeledExample> {
        self.examples
            .get(id)
            .ok_or_else(|| Error::Validation(format!("unknown example id {id:?}")))
    }

    pub fn split_examples(&self, split: Split) -> Vec<&LabeledExample> {
        let ids = match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Pool => &self.pool,
        };
        ids.iter().map(|id| &self.examples[id]).collect()
    }

    /// id → gold label for every example.
    pub fn gold(&self) -> HashMap<String, String> {
        self.examples
            .iter()
            .map(|(id, e)| (id.clone(), e.label.clone()))
            .collect()
    }

    /// Wire records in split order (train, validation, pool).
    pub fn to_records(&self) -> Vec<WireRecord> {
        let mut out = Vec::with_capacity(self.train.len() + self.validation.len() + self.pool.len());
        for (split, ids) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("pool", &self.pool),
        ] {
            for id in ids {
                let e = &self.examples[id];
                out.push(WireRecord {
                    id: e.id.clone(),
                    text: e.text.clone(),
                    label: e.label.clone(),
                    split: split.to_string(),
                });
            }
        }
        out
    }
}

pub fn load_jsonl(path: &Path) -> Result<Dataset> {
    load_jsonl_with_labels(path, None)
}

pub fn load_jsonl_with_labels(path: &Path, labels: Option<Vec<String>>) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Validation(format!("dataset {} does not exist", path.display())),
        _ => Error::io(path, e),
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: WireRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Dataset::from_records(name, records, labels)
}

pub fn write_jsonl(path: &Path, records: &[WireRecord]) -> Result<()> {
    write_lines(path, records)
}

/// Requested split sizes; `None` keeps the split whole.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<usize>,
}

/// Uniform per-split sampling without replacement. Train examples that are
/// not selected join the pool; unselected validation and pool examples are
/// dropped.
pub fn subsample(dataset: &Dataset, sizes: SplitSizes, seed: u64) -> Result<Dataset> {
    fn pick(what: &str, ids: &[String], size: Option<usize>, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
        let Some(k) = size else {
            return Ok((ids.to_vec(), Vec::new()));
        };
        if k > ids.len() {
            return Err(Error::Bounds {
                what: format!("{what} split"),
                requested: k,
                available: ids.len(),
            });
        }
        let mut r = rng::stream(seed, &format!("subsample/{what}"));
        let chosen: HashSet<String> = rng::sample_ordered(ids, k, &mut r).into_iter().collect();
        let (keep, rest) = ids.iter().cloned().partition(|id| chosen.contains(id));
        Ok((keep, rest))
    }

    let (train, train_rest) = pick("train", &dataset.train, sizes.train, seed)?;
    let (validation, _) = pick("validation", &dataset.validation, sizes.validation, seed)?;
    let (mut pool, _) = pick("pool", &dataset.pool, sizes.pool, seed)?;
    pool.extend(train_rest);

    let referenced: HashSet<&String> = train.iter().chain(&validation).chain(&pool).collect();
    let examples = dataset
        .examples
        .iter()
        .filter(|(id, _)| referenced.contains(id))
        .map(|(id, e)| (id.clone(), e.clone()))
        .collect();
    let out = Dataset {
        name: dataset.name.clone(),
        label_set: dataset.label_set.clone(),
        train,
        validation,
        pool,
        examples,
    };
    out.validate()?;
    Ok(out)
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub example_id: String,
    pub components: Vec<f64>,
    pub provider_tag: String,
}

pub trait EmbeddingProvider: Send + Sync {
    fn tag(&self) -> String;
    /// One vector per input text, in input order.
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Embeds examples, checking count, finiteness and a constant dimension.
pub fn embed(examples: &[&LabeledExample], provider: &dyn EmbeddingProvider) -> Result<Vec<Embedding>> {
    if examples.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = examples.iter().map(|e| e.text.clone()).collect();
    let vectors = provider.embed_texts(&texts)?;
    if vectors.len() != examples.len() {
        return Err(Error::Provider {
            message: format!("expected {} vectors, got {}", examples.len(), vectors.len()),
            failed_batch: texts,
        });
    }
    let dim = vectors[0].len();
    let tag = provider.tag();
    examples
        .iter()
        .zip(vectors)
        .map(|(ex, v)| {
            if v.len() != dim {
                return Err(Error::Provider {
                    message: format!("dimension mismatch: {} vs {dim} for {}", v.len(), ex.id),
                    failed_batch: vec![ex.text.clone()],
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Provider {
                    message: format!("non-finite component in embedding of {}", ex.id),
                    failed_batch: vec![ex.text.clone()],
                });
            }
            Ok(Embedding {
                example_id: ex.id.clone(),
                components: v,
                provider_tag: tag.clone(),
            })
        })
        .collect()
}

/// Signed feature hashing over [`tokenize`] tokens with FNV-1a, followed by
/// L2 normalization. Texts without tokens map to the first basis vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("hash embedder dimension must be positive".into()));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in tokenize(text) {
            let h = rng::fnv1a64(tok.as_bytes());
            let idx = (h % self.dim as u64) as usize;
            v[idx] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: Self::DEFAULT_DIM }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn tag(&self) -> String {
        format!("hash-fnv1a64-d{}", self.dim)
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// OpenAI-style embedding endpoint: `{"model", "input": [..]}` in,
/// `{"data": [{"index", "embedding"}]}` out.
pub struct RemoteEmbedder {
    client: JsonClient,
    url: String,
    model: String,
    batch_size: usize,
    parallelism: usize,
}

impl RemoteEmbedder {
    pub const DEFAULT_BATCH: usize = 128;

    pub fn new(
        url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        retry: RetryPolicy,
        batch_size: usize,
        parallelism: usize,
    ) -> Self {
        Self {
            client: JsonClient::new(retry, Duration::from_secs(120)).with_bearer(api_key),
            url: url.into(),
            model: model.into(),
            batch_size: batch_size.max(1),
            parallelism: parallelism.max(1),
        }
    }

    fn fetch(&self, batch: &[String]) -> Result<Vec<Vec<f64>>> {
        let fail = |message: String| Error::Provider {
            message,
            failed_batch: batch.to_vec(),
        };
        let body = json!({ "model": self.model, "input": batch });
        let resp = self.client.post(&self.url, &body).map_err(&fail)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| fail("response lacks a `data` array".into()))?;
        let mut out: Vec<Option<Vec<f64>>> = vec![None; batch.len()];
        for item in data {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .ok_or_else(|| fail("data item lacks `index`".into()))? as usize;
            let emb: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| fail("data item lacks `embedding`".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| fail("non-numeric embedding component".into())))
                .collect::<Result<_>>()?;
            let slot = out
                .get_mut(index)
                .ok_or_else(|| fail(format!("index {index} out of range")))?;
            *slot = Some(emb);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| fail(format!("missing embedding for index {i}"))))
            .collect()
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn tag(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let batches: Vec<&[String]> = texts.chunks(self.batch_size).collect();
        let results = try_bounded_map(&batches, self.parallelism, |b| self.fetch(b))?;
        let out: Vec<Vec<f64>> = results.into_iter().flatten().collect();
        if let Some(first) = out.first() {
            let dim = first.len();
            if let Some(pos) = out.iter().position(|v| v.len() != dim) {
                let batch = pos / self.batch_size;
                return Err(Error::Provider {
                    message: format!("dimension mismatch across batches ({} vs {dim})", out[pos].len()),
                    failed_batch: batches[batch].to_vec(),
                });
            }
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    components: Vec<f64>,
}

/// Wraps a provider with an append-only on-disk cache keyed by
/// (provider tag, text hash).
pub struct CachedProvider<P> {
    inner: P,
    path: PathBuf,
    entries: Mutex<HashMap<String, Vec<f64>>>,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn open(inner: P, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheLine = serde_json::from_str(&line)?;
                entries.insert(entry.key, entry.components);
            }
        }
        Ok(Self {
            inner,
            path,
            entries: Mutex::new(entries),
        })
    }

    fn key(&self, text: &str) -> String {
        format!("{}:{:016x}", self.inner.tag(), rng::fnv1a64(text.as_bytes()))
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn tag(&self) -> String {
        self.inner.tag()
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let keys: Vec<String> = texts.iter().map(|t| self.key(t)).collect();
        let missing: Vec<String> = {
            let entries = self.entries.lock().expect("cache lock");
            let mut seen = HashSet::new();
            texts
                .iter()
                .zip(&keys)
                .filter(|(_, k)| !entries.contains_key(*k) && seen.insert(k.as_str()))
                .map(|(t, _)| t.clone())
                .collect()
        };
        if !missing.is_empty() {
            let fetched = self.inner.embed_texts(&missing)?;
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| Error::io(&self.path, e))?;
            let mut w = BufWriter::new(file);
            let mut entries = self.entries.lock().expect("cache lock");
            for (text, components) in missing.iter().zip(fetched) {
                let key = self.key(text);
                serde_json::to_writer(
                    &mut w,
                    &CacheLine {
                        key: key.clone(),
                        components: components.clone(),
                    },
                )?;
                w.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
                entries.insert(key, components);
            }
            w.flush().map_err(|e| Error::io(&self.path, e))?;
        }
        let entries = self.entries.lock().expect("cache lock");
        Ok(keys.iter().map(|k| entries[k].clone()).collect())
    }
}

/// Embeddings indexed by example id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    map: HashMap<String, Embedding>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_embeddings(embeddings: impl IntoIterator<Item = Embedding>) -> Self {
        let mut t = Self::new();
        t.extend(embeddings);
        t
    }

    pub fn extend(&mut self, embeddings: impl IntoIterator<Item = Embedding>) {
        for e in embeddings {
            self.map.insert(e.example_id.clone(), e);
        }
    }

    pub fn into_embeddings(self) -> impl Iterator<Item = Embedding> {
        self.map.into_values()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.map.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Result<&Embedding> {
        self.map
            .get(id)
            .ok_or_else(|| Error::Validation(format!("missing embedding for example {id:?}")))
    }

    pub fn vector(&self, id: &str) -> Result<&[f64]> {
        self.get(id).map(|e| e.components.as_slice())
    }

    /// Persists embeddings sorted by id.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut rows: Vec<&Embedding> = self.map.values().collect();
        rows.sort_by(|a, b| a.example_id.cmp(&b.example_id));
        write_lines(path, &rows)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        Ok(Self::from_embeddings(read_lines::<Embedding>(path)?))
    }
}

pub(crate) fn write_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: &str, split: &str) -> WireRecord {
        WireRecord {
            id: id.into(),
            text: format!("text of {id}"),
            label: label.into(),
            split: split.into(),
        }
    }

    fn write_tmp(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn empty_file_is_rejected() {
        let f = write_tmp(&[]);
        assert!(matches!(load_jsonl(f.path()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn three_lines_one_per_split() {
        let lines: Vec<String> = [
            rec("a", "x", "train"),
            rec("b", "y", "validation"),
            rec("c", "x", "pool"),
        ]
        .iter()
        .map(|r| serde_json::to_string(r).unwrap())
        .collect();
        let ds = load_jsonl(write_tmp(&lines).path()).unwrap();
        assert_eq!((ds.train.len(), ds.validation.len(), ds.pool.len()), (1, 1, 1));
        assert_eq!(ds.label_set, vec!["x", "y"]);
    }

    #[test]
    fn duplicate_id_is_named() {
        let mut lines: Vec<String> = (0..9)
            .map(|i| serde_json::to_string(&rec(&format!("e{i}"), "x", "train")).unwrap())
            .collect();
        lines.push(serde_json::to_string(&rec("e4", "x", "pool")).unwrap());
        let err = load_jsonl(write_tmp(&lines).path()).unwrap_err();
        assert!(err.to_string().contains("\"e4\""), "{err}");
    }

    #[test]
    fn malformed_line_cites_line_number() {
        let lines = vec![
            serde_json::to_string(&rec("a", "x", "train")).unwrap(),
            "{not json".to_string(),
        ];
        match load_jsonl(write_tmp(&lines).path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_split_is_validation_error() {
        let lines = vec![serde_json::to_string(&rec("a", "x", "test")).unwrap()];
        let err = load_jsonl(write_tmp(&lines).path()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn label_override_must_cover_labels() {
        let recs = vec![rec("a", "x", "train"), rec("b", "y", "train")];
        assert!(Dataset::from_records("d", recs.clone(), Some(vec!["x".into()])).is_err());
        let ds = Dataset::from_records("d", recs, Some(vec!["y".into(), "x".into()])).unwrap();
        assert_eq!(ds.label_set, vec!["y", "x"]);
    }

    fn sizable() -> Dataset {
        let mut recs = Vec::new();
        for i in 0..40 {
            let split = match i % 4 {
                0 | 1 => "train",
                2 => "validation",
                _ => "pool",
            };
            recs.push(rec(&format!("id{i:02}"), if i % 3 == 0 { "a" } else { "b" }, split));
        }
        Dataset::from_records("d", recs, None).unwrap()
    }

    #[test]
    fn subsample_full_sizes_is_identity() {
        let ds = sizable();
        let sizes = SplitSizes {
            train: Some(ds.train.len()),
            validation: Some(ds.validation.len()),
            pool: Some(ds.pool.len()),
        };
        assert_eq!(subsample(&ds, sizes, 11).unwrap(), ds);
    }

    #[test]
    fn subsample_moves_train_rest_to_pool() {
        let ds = sizable();
        let sizes = SplitSizes {
            train: Some(5),
            ..Default::default()
        };
        let out = subsample(&ds, sizes, 7).unwrap();
        assert_eq!(out.train.len(), 5);
        assert_eq!(out.pool.len(), ds.pool.len() + ds.train.len() - 5);
        assert_eq!(out, subsample(&ds, sizes, 7).unwrap());
        assert_ne!(out.train, subsample(&ds, sizes, 8).unwrap().train);
    }

    #[test]
    fn subsample_bounds() {
        let ds = sizable();
        let sizes = SplitSizes {
            validation: Some(ds.validation.len() + 1),
            ..Default::default()
        };
        assert!(matches!(subsample(&ds, sizes, 0), Err(Error::Bounds { .. })));
    }

    #[test]
    fn tokenizer_splits_on_non_alphanumeric() {
        assert_eq!(
            tokenize("Hello, World!! it's 2024"),
            vec!["hello", "world", "it", "s", "2024"]
        );
        assert!(tokenize(" ,.; ").is_empty());
    }

    #[test]
    fn hash_embedder_is_unit_norm_and_deterministic() {
        let h = HashEmbedder::new(256).unwrap();
        let v = h.embed_text("Hello, world");
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(v, h.embed_text("Hello, world"));
        assert_eq!(h.embed_text("hello WORLD"), v);
    }

    #[test]
    fn tokenless_text_maps_to_first_basis_vector() {
        let v = HashEmbedder::default().embed_text("!!!");
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn embed_preserves_order() {
        let a = LabeledExample::original("a", "alpha beta", "x");
        let b = LabeledExample::original("b", "gamma", "x");
        let out = embed(&[&b, &a], &HashEmbedder::default()).unwrap();
        assert_eq!(out[0].example_id, "b");
        assert_eq!(out[1].example_id, "a");
        assert_eq!(out[0].provider_tag, "hash-fnv1a64-d256");
    }

    #[test]
    fn cache_serves_repeat_requests() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let texts = vec!["one".to_string(), "two".to_string(), "one".to_string()];
        let first = CachedProvider::open(HashEmbedder::default(), &path)
            .unwrap()
            .embed_texts(&texts)
            .unwrap();
        let lines = std::fs::read_to_string(&path).unwrap().lines().count();
        assert_eq!(lines, 2);
        let again = CachedProvider::open(HashEmbedder::default(), &path)
            .unwrap()
            .embed_texts(&texts)
            .unwrap();
        assert_eq!(first, again);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
    }
}
