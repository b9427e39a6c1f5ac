//! Embedding vectors, L2 normalization, difference fusion and the
//! embedding store (file import or external extractor process).

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"XDFE";
pub const STORE_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector {
    pub image_id: String,
    pub values: Vec<f32>,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn new(image_id: impl Into<String>, values: Vec<f32>) -> Self {
        Self {
            image_id: image_id.into(),
            values,
            normalized: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `x / ‖x‖₂`, computed in double precision.
pub fn l2_normalize_values(v: &[f32]) -> Result<Vec<f32>> {
    let n = l2_norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(v.iter().map(|&x| (f64::from(x) / n) as f32).collect())
}

pub fn l2_normalize(v: &EmbeddingVector) -> Result<EmbeddingVector> {
    Ok(EmbeddingVector {
        image_id: v.image_id.clone(),
        values: l2_normalize_values(&v.values)?,
        normalized: true,
    })
}

/// Elementwise `|a − b|`.
pub fn abs_difference_values(a: &[f32], b: &[f32]) -> Result<Vec<f32>> {
    if a.len() != b.len() {
        return Err(Error::dim_mismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).collect())
}

pub fn abs_difference(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<Vec<f32>> {
    abs_difference_values(&a.values, &b.values).map_err(|e| match e {
        Error::DimMismatch {
            expected, actual, ..
        } => Error::DimMismatch {
            expected,
            actual,
            context: Some(format!("{} vs {}", a.image_id, b.image_id)),
        },
        e => e,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletParams {
    pub alpha: f64,
}

impl Default for TripletParams {
    fn default() -> Self {
        Self { alpha: 0.2 }
    }
}

/// True iff `d(anchor, positive) + alpha < d(anchor, negative)`.
pub fn triplet_margin_check(anchor: &[f32], positive: &[f32], negative: &[f32], params: TripletParams) -> Result<bool> {
    if anchor.len() != positive.len() {
        return Err(Error::dim_mismatch(anchor.len(), positive.len()));
    }
    if anchor.len() != negative.len() {
        return Err(Error::dim_mismatch(anchor.len(), negative.len()));
    }
    Ok(euclidean(anchor, positive) + params.alpha < euclidean(anchor, negative))
}

/// Vectors keyed by image id; all share one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    pub backend_tag: String,
    dim: usize,
    records: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingStore {
    pub fn new(backend_tag: impl Into<String>, dim: usize) -> Self {
        Self {
            backend_tag: backend_tag.into(),
            dim,
            records: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, values: Vec<f32>) -> Result<()> {
        let image_id = image_id.into();
        if values.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: values.len(),
                context: Some(image_id),
            });
        }
        self.records.insert(image_id, values);
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&[f32]> {
        self.records.get(image_id).map(Vec::as_slice)
    }

    pub fn vector(&self, image_id: &str) -> Result<EmbeddingVector> {
        self.get(image_id)
            .map(|v| EmbeddingVector::new(image_id, v.to_vec()))
            .ok_or_else(|| Error::IncompleteStore(image_id.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.records.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Adds every record of `other`; dimensions must agree.
    pub fn merge(&mut self, other: &EmbeddingStore) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::dim_mismatch(self.dim, other.dim));
        }
        for (k, v) in &other.records {
            self.records.insert(k.clone(), v.clone());
        }
        Ok(())
    }

    pub fn check_complete<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for id in ids {
            if !self.records.contains_key(id) {
                return Err(Error::IncompleteStore(id.to_owned()));
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(STORE_MAGIC)?;
        w.write_u16::<LittleEndian>(STORE_VERSION)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u32::<LittleEndian>(self.records.len() as u32)?;
        for (id, values) in &self.records {
            let bytes = id.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| Error::Format(format!("image id too long: {id}")))?;
            w.write_u16::<LittleEndian>(len)?;
            w.write_all(bytes)?;
            for &v in values {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R, backend_tag: impl Into<String>) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(Error::Format("not an embedding store (bad magic)".into()));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != STORE_VERSION {
            return Err(Error::Format(format!("unsupported store version {version}")));
        }
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut store = EmbeddingStore::new(backend_tag, dim);
        for _ in 0..count {
            let len = r.read_u16::<LittleEndian>()? as usize;
            let mut id = vec![0u8; len];
            r.read_exact(&mut id)?;
            let id = String::from_utf8(id).map_err(|_| Error::Format("image id is not UTF-8".into()))?;
            let mut values = vec![0f32; dim];
            r.read_f32_into::<LittleEndian>(&mut values)?;
            if store.records.insert(id.clone(), values).is_some() {
                return Err(Error::Format(format!("duplicate image id {id} in store")));
            }
        }
        Ok(store)
    }

    fn tag_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".tag");
        PathBuf::from(s)
    }

    /// Writes the binary store; the backend tag goes to a `<path>.tag` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        std::fs::write(Self::tag_path(path), format!("{}\n", self.backend_tag))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let tag = std::fs::read_to_string(Self::tag_path(path))
            .map(|s| s.trim().to_owned())
            .unwrap_or_else(|_| "unknown".to_owned());
        Self::read_from(BufReader::new(File::open(path)?), tag)
    }
}

/// Loads a store file and checks it covers every requested image id.
pub fn import_embeddings<'a>(path: &Path, expected_dim: Option<usize>, ids: impl IntoIterator<Item = &'a str>) -> Result<EmbeddingStore> {
    let store = EmbeddingStore::load(path)?;
    if let Some(d) = expected_dim {
        if store.dim() != d {
            return Err(Error::dim_mismatch(d, store.dim()));
        }
    }
    store.check_complete(ids)?;
    Ok(store)
}

/// One image handed to an external extractor.
#[derive(Clone, Debug)]
pub struct ExtractRequest {
    pub image_id: String,
    pub path: PathBuf,
}

/// Runs `command`, feeding `image_id<TAB>path` lines on stdin and parsing
/// `image_id v1 ... vdim` lines from stdout. Nothing is returned unless every
/// request is answered exactly once with `dim` values and the child exits 0.
pub fn extract_via_external(command: &[String], requests: &[ExtractRequest], dim: usize, backend_tag: &str) -> Result<EmbeddingStore> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| Error::InvalidParameter("empty extractor command".into()))?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::ExtractorFailed(format!("cannot start {program}: {e}")))?;

    let mut stdin = child.stdin.take().expect("stdin is piped");
    let input: String = requests
        .iter()
        .map(|r| format!("{}\t{}\n", r.image_id, r.path.display()))
        .collect();
    let writer = thread::spawn(move || -> std::io::Result<()> {
        stdin.write_all(input.as_bytes())?;
        Ok(())
    });
    let mut stderr = child.stderr.take().expect("stderr is piped");
    let err_reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });

    let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
    let wanted: HashSet<&str> = requests.iter().map(|r| r.image_id.as_str()).collect();
    let mut store = EmbeddingStore::new(backend_tag, dim);
    let mut failure: Option<Error> = None;
    for line in stdout.lines() {
        let line = line?;
        if failure.is_some() || line.trim().is_empty() {
            continue;
        }
        if let Err(e) = parse_extractor_line(&line, dim, &wanted, &mut store) {
            failure = Some(e);
        }
    }
    let status = child.wait()?;
    let stderr_text = err_reader.join().unwrap_or_default();
    // a child that exits early closes its stdin; its exit status is what matters then
    let write_result = writer.join().expect("writer thread does not panic");

    if !status.success() {
        return Err(Error::ExtractorFailed(format!(
            "{program} exited with {status}: {}",
            stderr_text.trim()
        )));
    }
    if let Err(e) = write_result {
        return Err(Error::ExtractorFailed(format!("writing to {program}: {e}")));
    }
    if let Some(e) = failure {
        return Err(e);
    }
    store.check_complete(requests.iter().map(|r| r.image_id.as_str()))?;
    Ok(store)
}

fn parse_extractor_line(line: &str, dim: usize, wanted: &HashSet<&str>, store: &mut EmbeddingStore) -> Result<()> {
    let mut fields = line.split_ascii_whitespace();
    let id = fields
        .next()
        .ok_or_else(|| Error::ProtocolViolation("empty output line".into()))?;
    if !wanted.contains(id) {
        return Err(Error::ProtocolViolation(format!("unrequested image_id {id}")));
    }
    if store.get(id).is_some() {
        return Err(Error::ProtocolViolation(format!("image_id {id} answered twice")));
    }
    let values = fields
        .map(|f| {
            f.parse::<f32>()
                .map_err(|_| Error::ProtocolViolation(format!("{id}: bad value {f:?}")))
        })
        .collect::<Result<Vec<f32>>>()?;
    if values.len() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            actual: values.len(),
            context: Some(id.to_owned()),
        });
    }
    store.insert(id, values)
}
