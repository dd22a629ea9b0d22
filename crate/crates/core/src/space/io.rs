//! Label and embedding file formats.
//!
//! Text embeddings: a `dim=<D> count=<N>` header, then N rows of D
//! whitespace-separated floats. Files ending in `.bin` use [`EMBEDDING_MAGIC`],
//! little-endian u64 dim and count, then N*D little-endian f32 values.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activity, Concept, ConceptKind, Embedding, SearchSpace};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"PRBSEMB1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DuplicatePolicy {
    /// Keep the first occurrence and log a warning.
    #[default]
    KeepFirst,
    Error,
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Reads one activity per non-blank line.
pub fn read_labels(path: &Path) -> Result<Vec<Activity>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let activity = Activity::parse_label(&line)
            .map_err(|e| Error::parse(path, i + 1, format!("bad label {line:?}: {e}")))?;
        out.push(activity);
    }
    Ok(out)
}

pub fn write_labels(path: &Path, activities: &[Activity]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for a in activities {
        writeln!(w, "{}", a.phrase()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_header(path: &Path, line: &str) -> Result<(usize, usize)> {
    let mut dim = None;
    let mut count = None;
    for tok in line.split_whitespace() {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse(path, 1, format!("malformed header token {tok:?}")))?;
        let value: usize = value
            .parse()
            .map_err(|_| Error::parse(path, 1, format!("malformed header value {tok:?}")))?;
        match key {
            "dim" => dim = Some(value),
            "count" => count = Some(value),
            _ => return Err(Error::parse(path, 1, format!("unknown header key {key:?}"))),
        }
    }
    match (dim, count) {
        (Some(d), Some(c)) if d > 0 => Ok((d, c)),
        (Some(0), _) => Err(Error::parse(path, 1, "dim must be positive")),
        _ => Err(Error::parse(path, 1, "header must be \"dim=<D> count=<N>\"")),
    }
}

/// Reads and L2-normalizes every row of an embedding file.
pub fn read_embeddings(path: &Path) -> Result<Vec<Embedding>> {
    if is_binary(path) {
        read_binary(path)
    } else {
        read_text(path)
    }
}

fn read_text(path: &Path) -> Result<Vec<Embedding>> {
    let mut lines = BufReader::new(open(path)?).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "missing header")),
    };
    let (dim, count) = parse_header(path, &header)?;
    let mut rows = Vec::with_capacity(count);
    let mut line_no = 1;
    for line in lines {
        line_no += 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if rows.len() == count {
            return Err(Error::parse(path, line_no, format!("more than {count} rows")));
        }
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, line_no, format!("bad float: {e}")))?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        let emb = Embedding::normalized(values)
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        rows.push(emb);
    }
    if rows.len() != count {
        return Err(Error::parse(
            path,
            line_no + 1,
            format!("header declares {count} rows, found {}", rows.len()),
        ));
    }
    Ok(rows)
}

fn read_binary(path: &Path) -> Result<Vec<Embedding>> {
    let mut r = BufReader::new(open(path)?);
    let mut header = [0u8; 24];
    r.read_exact(&mut header)
        .map_err(|_| Error::parse(path, 1, "truncated binary header"))?;
    if &header[..8] != EMBEDDING_MAGIC {
        return Err(Error::parse(path, 1, "bad magic"));
    }
    let dim = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(Error::parse(path, 1, "dim must be positive"));
    }
    let mut buf = vec![0u8; dim * 4];
    let mut rows = Vec::with_capacity(count);
    for row in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| Error::parse(path, row + 2, "truncated row"))?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        // Row numbering mirrors the text format: header is line 1.
        rows.push(Embedding::normalized(values).map_err(|e| Error::parse(path, row + 2, e.to_string()))?);
    }
    Ok(rows)
}

pub fn write_embeddings(path: &Path, rows: &[Embedding]) -> Result<()> {
    let dim = rows.first().map_or(0, Embedding::dim);
    if let Some(bad) = rows.iter().find(|r| r.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let res: std::io::Result<()> = (|| {
        if is_binary(path) {
            w.write_all(EMBEDDING_MAGIC)?;
            w.write_all(&(dim as u64).to_le_bytes())?;
            w.write_all(&(rows.len() as u64).to_le_bytes())?;
            for r in rows {
                for v in r.values() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        } else {
            writeln!(w, "dim={dim} count={}", rows.len())?;
            for r in rows {
                let mut first = true;
                for v in r.values() {
                    if !first {
                        w.write_all(b" ")?;
                    }
                    first = false;
                    write!(w, "{v}")?;
                }
                w.write_all(b"\n")?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Loads a label file and its parallel embedding file into a structured space.
pub fn load_space(labels_path: &Path, embeddings_path: &Path) -> Result<SearchSpace> {
    load_space_with(labels_path, embeddings_path, DuplicatePolicy::default())
}

pub fn load_space_with(
    labels_path: &Path,
    embeddings_path: &Path,
    duplicates: DuplicatePolicy,
) -> Result<SearchSpace> {
    let labels = read_labels(labels_path)?;
    let rows = read_embeddings(embeddings_path)?;
    if let Some(missing) = labels.get(rows.len()) {
        return Err(Error::MissingEmbedding(missing.phrase().to_string()));
    }
    if rows.len() > labels.len() {
        return Err(Error::InvalidEmbedding(format!(
            "{} embedding rows for {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let mut seen = HashSet::with_capacity(labels.len());
    let mut activities = Vec::with_capacity(labels.len());
    let mut embeddings = Vec::with_capacity(labels.len());
    for (activity, emb) in labels.into_iter().zip(rows) {
        if !seen.insert(activity.phrase().to_string()) {
            match duplicates {
                DuplicatePolicy::KeepFirst => {
                    log::warn!("dropping duplicate phrase {:?}", activity.phrase());
                    continue;
                }
                DuplicatePolicy::Error => {
                    return Err(Error::DuplicatePhrase(activity.phrase().to_string()))
                }
            }
        }
        activities.push(activity);
        embeddings.push(emb);
    }
    SearchSpace::new(activities, embeddings)
}

/// Reads a concept table: one concept per line plus a parallel embedding file.
pub fn read_concept_table(
    labels_path: &Path,
    embeddings_path: &Path,
    kind: ConceptKind,
) -> Result<HashMap<String, Embedding>> {
    let reader = BufReader::new(open(labels_path)?);
    let mut names = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(labels_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let c = Concept::new(&line, kind)
            .map_err(|e| Error::parse(labels_path, i + 1, e.to_string()))?;
        names.push(c.text().to_string());
    }
    let rows = read_embeddings(embeddings_path)?;
    if let Some(missing) = names.get(rows.len()) {
        return Err(Error::MissingEmbedding(missing.clone()));
    }
    Ok(names.into_iter().zip(rows).collect())
}
