//! Line-delimited dataset manifests.
//!
//! The first line is a header object:
//!
//! ```text
//! {"name": "...", "dimension": 4, "concept_library": ["..."], "sidecar": {"data": "emb.f32", "index": "emb.idx"}}
//! ```
//!
//! Every following non-blank line is one record:
//!
//! ```text
//! {"id": "img1", "label": "pr", "embedding": [..], "extracted_tags": [..], "detected_tags": [..], "description": "..."}
//! ```
//!
//! `concept_library`, `sidecar` and `description` are optional. When a
//! sidecar is declared, records may omit `embedding`; their vector is then
//! read from the sidecar data file (little-endian `f32`, row-major, one row
//! per index entry). The index file holds one `id row` pair per line. Sidecar
//! paths are resolved relative to the manifest.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::model::{canonicalize_tag, canonicalize_tags, ImageRecord, PrivacyLabel};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub dimension: usize,
    pub records: Vec<ImageRecord>,
    pub concept_library: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    name: String,
    dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    concept_library: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sidecar: Option<SidecarPaths>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarPaths {
    data: PathBuf,
    index: PathBuf,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: Option<String>,
    label: Option<String>,
    embedding: Option<Vec<f64>>,
    extracted_tags: Option<Vec<String>>,
    #[serde(default)]
    detected_tags: Option<Vec<String>>,
    #[serde(default)]
    description: Option<String>,
}

impl DatasetManifest {
    /// Validates and assembles a manifest from already-built records.
    pub fn new(
        name: impl Into<String>,
        dimension: usize,
        records: Vec<ImageRecord>,
        concept_library: Option<Vec<String>>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::manifest(None, "dimension", "must be positive"));
        }
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if r.embedding.dimension() != dimension {
                return Err(Error::manifest(
                    Some(i),
                    "embedding",
                    format!(
                        "dimension mismatch: expected {dimension}, found {}",
                        r.embedding.dimension()
                    ),
                ));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::manifest(
                    Some(i),
                    "id",
                    format!("duplicate id {:?}", r.id),
                ));
            }
        }
        let concept_library = concept_library
            .map(|lib| canonicalize_tags(&lib))
            .transpose()?;
        Ok(Self {
            name: name.into(),
            dimension,
            records,
            concept_library,
        })
    }

    pub fn record(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Id → position lookup table.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::read(BufReader::new(file), base)
    }

    /// Parses a manifest from `reader`; sidecar paths resolve against `base`.
    pub fn read(reader: impl BufRead, base: &Path) -> Result<Self> {
        let mut lines = reader.lines().enumerate().filter_map(|(n, l)| match l {
            Ok(l) if l.trim().is_empty() => None,
            other => Some((n, other)),
        });

        let (_, header_line) = lines
            .next()
            .ok_or_else(|| Error::manifest(None, "header", "manifest is empty"))?;
        let header_line = header_line.map_err(|e| Error::io(base, e))?;
        let header: Header = serde_json::from_str(&header_line)
            .map_err(|e| Error::manifest(None, "header", e.to_string()))?;
        if header.dimension == 0 {
            return Err(Error::manifest(None, "dimension", "must be positive"));
        }

        let sidecar = header
            .sidecar
            .as_ref()
            .map(|s| Sidecar::open(&base.join(&s.data), &base.join(&s.index), header.dimension))
            .transpose()?;

        let mut records = Vec::new();
        for (idx, (_, line)) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(base, e))?;
            records.push(parse_record(
                idx,
                &line,
                header.dimension,
                sidecar.as_ref(),
            )?);
        }
        Self::new(
            header.name,
            header.dimension,
            records,
            header.concept_library,
        )
    }

    /// Writes the manifest with inline decimal embeddings.
    pub fn write(&self, mut out: impl Write) -> Result<()> {
        let header = Header {
            name: self.name.clone(),
            dimension: self.dimension,
            concept_library: self.concept_library.clone(),
            sidecar: None,
        };
        let io = |e| Error::io("<manifest output>", e);
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n").map_err(io)?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn parse_record(
    idx: usize,
    line: &str,
    dimension: usize,
    sidecar: Option<&Sidecar>,
) -> Result<ImageRecord> {
    let raw: RawRecord = serde_json::from_str(line)
        .map_err(|e| Error::manifest(Some(idx), "record", e.to_string()))?;
    let missing = |field: &str| Error::manifest(Some(idx), field, "missing required field");

    let id = raw.id.ok_or_else(|| missing("id"))?;
    if id.is_empty() {
        return Err(Error::manifest(Some(idx), "id", "empty id"));
    }
    let label: PrivacyLabel = raw
        .label
        .ok_or_else(|| missing("label"))?
        .parse()
        .map_err(|e: Error| Error::manifest(Some(idx), "label", e.to_string()))?;

    let values = match (raw.embedding, sidecar) {
        (Some(v), _) => v,
        (None, Some(sc)) => sc
            .row(&id)
            .ok_or_else(|| Error::manifest(Some(idx), "embedding", "id not in sidecar index"))?,
        (None, None) => return Err(missing("embedding")),
    };
    if values.len() != dimension {
        return Err(Error::manifest(
            Some(idx),
            "embedding",
            format!(
                "dimension mismatch: expected {dimension}, found {}",
                values.len()
            ),
        ));
    }
    let embedding = EmbeddingVector::new(values)
        .map_err(|e| Error::manifest(Some(idx), "embedding", e.to_string()))?;

    let tags = |field: &str, raw: Vec<String>| {
        canonicalize_tags(&raw).map_err(|e| Error::manifest(Some(idx), field, e.to_string()))
    };
    let extracted_tags = tags(
        "extracted_tags",
        raw.extracted_tags
            .ok_or_else(|| missing("extracted_tags"))?,
    )?;
    let detected_tags = tags("detected_tags", raw.detected_tags.unwrap_or_default())?;

    Ok(ImageRecord {
        id,
        label,
        embedding,
        extracted_tags,
        detected_tags,
        description: raw.description,
    })
}

struct Sidecar {
    rows: HashMap<String, usize>,
    data: Vec<f32>,
    dimension: usize,
}

impl Sidecar {
    fn open(data_path: &Path, index_path: &Path, dimension: usize) -> Result<Self> {
        let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
        if bytes.len() % (4 * dimension) != 0 {
            return Err(Error::manifest(
                None,
                "sidecar",
                format!(
                    "data file length {} is not a multiple of {} rows",
                    bytes.len(),
                    dimension
                ),
            ));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let n_rows = data.len() / dimension;

        let index = fs::read_to_string(index_path).map_err(|e| Error::io(index_path, e))?;
        let mut rows = HashMap::new();
        for (n, line) in index
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let bad =
                |msg: &str| Error::manifest(None, "sidecar", format!("index line {n}: {msg}"));
            let (id, row) = line
                .rsplit_once(char::is_whitespace)
                .ok_or_else(|| bad("expected `id row`"))?;
            let row: usize = row
                .trim()
                .parse()
                .map_err(|_| bad("row is not an integer"))?;
            if row >= n_rows {
                return Err(bad("row out of range"));
            }
            rows.insert(id.trim().to_owned(), row);
        }
        Ok(Self {
            rows,
            data,
            dimension,
        })
    }

    fn row(&self, id: &str) -> Option<Vec<f64>> {
        let r = *self.rows.get(id)?;
        Some(
            self.data[r * self.dimension..(r + 1) * self.dimension]
                .iter()
                .map(|&v| f64::from(v))
                .collect(),
        )
    }
}

/// Writes embeddings as a little-endian `f32` sidecar plus its index file.
pub fn write_sidecar(records: &[ImageRecord], data_path: &Path, index_path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    let mut index = String::new();
    for (row, r) in records.iter().enumerate() {
        for &v in r.embedding.as_slice() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        index.push_str(&format!("{} {row}\n", r.id));
    }
    fs::write(data_path, bytes).map_err(|e| Error::io(data_path, e))?;
    fs::write(index_path, index).map_err(|e| Error::io(index_path, e))
}

/// Precomputed text embeddings keyed by canonical text.
///
/// Same line-delimited layout as the manifest: a `{"name", "dimension"}`
/// header followed by `{"text", "embedding"}` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextEmbeddingTable {
    pub dimension: usize,
    entries: HashMap<String, EmbeddingVector>,
}

#[derive(Deserialize, Serialize)]
struct TextRow {
    text: String,
    embedding: EmbeddingVector,
}

impl TextEmbeddingTable {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            entries: HashMap::new(),
        }
    }

    pub fn insert(&mut self, text: &str, embedding: EmbeddingVector) -> Result<()> {
        embedding.check_dimension(self.dimension)?;
        self.entries.insert(canonicalize_tag(text)?, embedding);
        Ok(())
    }

    /// Looks up `text` after canonicalization.
    pub fn get(&self, text: &str) -> Option<&EmbeddingVector> {
        let key = canonicalize_tag(text).ok()?;
        self.entries.get(&key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::manifest(None, "header", "text table is empty"))?,
        )
        .map_err(|e| Error::manifest(None, "header", e.to_string()))?;
        let mut table = Self::new(header.dimension);
        for (i, line) in lines.enumerate() {
            let row: TextRow = serde_json::from_str(line)
                .map_err(|e| Error::manifest(Some(i), "record", e.to_string()))?;
            table
                .insert(&row.text, row.embedding)
                .map_err(|e| Error::manifest(Some(i), "embedding", e.to_string()))?;
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>, name: &str) -> Result<()> {
        let path = path.as_ref();
        let mut out = serde_json::to_string(&Header {
            name: name.to_owned(),
            dimension: self.dimension,
            concept_library: None,
            sidecar: None,
        })?;
        out.push('\n');
        let mut keys: Vec<_> = self.entries.keys().collect();
        keys.sort();
        for k in keys {
            out.push_str(&serde_json::to_string(&TextRow {
                text: k.clone(),
                embedding: self.entries[k].clone(),
            })?);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"{"name":"tiny","dimension":4}
{"id":"img1","label":"pr","embedding":[1,0,0,0],"extracted_tags":["Man"," woman "],"detected_tags":["man"]}
{"id":"img2","label":"pu","embedding":[0,1,0,0],"extracted_tags":["tree"],"detected_tags":[]}
{"id":"img3","label":"pr","embedding":[0,0,1,0.5],"extracted_tags":["car"],"detected_tags":["car"],"description":"a car"}
"#;

    fn read(s: &str) -> Result<DatasetManifest> {
        DatasetManifest::read(s.as_bytes(), Path::new("."))
    }

    #[test]
    fn loads_valid_manifest() {
        let m = read(VALID).unwrap();
        assert_eq!(m.records.len(), 3);
        assert_eq!(m.dimension, 4);
        assert_eq!(m.records[0].extracted_tags, vec!["man", "woman"]);
        assert_eq!(m.records[2].description.as_deref(), Some("a car"));
    }

    #[test]
    fn dimension_mismatch_names_record() {
        let s = r#"{"name":"x","dimension":4}
{"id":"img1","label":"pr","embedding":[1,0,0],"extracted_tags":["a"],"detected_tags":[]}"#;
        match read(s) {
            Err(Error::Manifest { record, field, .. }) => {
                assert_eq!(record, Some(0));
                assert_eq!(field, "embedding");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let s = r#"{"name":"x","dimension":1}
{"id":"img1","label":"pr","embedding":[1],"extracted_tags":["a"]}
{"id":"img1","label":"pu","embedding":[2],"extracted_tags":["b"]}"#;
        match read(s) {
            Err(Error::Manifest {
                record,
                field,
                message,
            }) => {
                assert_eq!(record, Some(1));
                assert_eq!(field, "id");
                assert!(message.contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_fields_reported() {
        let bad_label = r#"{"name":"x","dimension":1}
{"id":"a","label":"secret","embedding":[1],"extracted_tags":["a"]}"#;
        assert!(matches!(read(bad_label), Err(Error::Manifest { field, .. }) if field == "label"));

        let empty_tag = r#"{"name":"x","dimension":1}
{"id":"a","label":"pr","embedding":[1],"extracted_tags":["  "]}"#;
        assert!(
            matches!(read(empty_tag), Err(Error::Manifest { field, .. }) if field == "extracted_tags")
        );

        let not_json = "{\"name\":\"x\",\"dimension\":1}\nnot json";
        assert!(matches!(
            read(not_json),
            Err(Error::Manifest {
                record: Some(0),
                ..
            })
        ));

        assert!(matches!(
            read(""),
            Err(Error::Manifest { record: None, .. })
        ));
    }

    #[test]
    fn round_trip_is_field_equal() {
        let m = read(VALID).unwrap();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        let again = DatasetManifest::read(buf.as_slice(), Path::new(".")).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn sidecar_embeddings() {
        let dir = tempfile::tempdir().unwrap();
        let m = read(VALID).unwrap();
        write_sidecar(
            &m.records,
            &dir.path().join("emb.f32"),
            &dir.path().join("emb.idx"),
        )
        .unwrap();
        let manifest = r#"{"name":"tiny","dimension":4,"sidecar":{"data":"emb.f32","index":"emb.idx"}}
{"id":"img1","label":"pr","extracted_tags":["man","woman"],"detected_tags":["man"]}
{"id":"img3","label":"pr","extracted_tags":["car"]}
"#;
        let path = dir.path().join("m.jsonl");
        fs::write(&path, manifest).unwrap();
        let loaded = DatasetManifest::load(&path).unwrap();
        assert_eq!(loaded.records[0].embedding, m.records[0].embedding);
        assert_eq!(loaded.records[1].embedding, m.records[2].embedding);
    }

    #[test]
    fn text_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = TextEmbeddingTable::new(2);
        t.insert("Car", EmbeddingVector::new(vec![1.0, 2.0]).unwrap())
            .unwrap();
        assert!(t.insert("x", EmbeddingVector::zeros(3)).is_err());
        let p = dir.path().join("t.jsonl");
        t.save(&p, "t").unwrap();
        let back = TextEmbeddingTable::load(&p).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.get(" car ").unwrap().as_slice(), &[1.0, 2.0]);
    }
}
