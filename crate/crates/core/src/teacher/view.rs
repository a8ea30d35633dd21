use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{bail, Error, Result};

pub const TEACHER_SCHEMA_VERSION: u32 = 1;

/// Pooled hidden vectors of one example, `layers[j - 1]` for teacher layer `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherRecord {
    pub id: String,
    pub label: usize,
    pub layers: Vec<Vec<f32>>,
}

/// Frozen per-layer teacher representations of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherView {
    depth: usize,
    hidden: usize,
    num_classes: usize,
    records: Vec<TeacherRecord>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    #[serde(rename = "J")]
    depth: usize,
    #[serde(rename = "H")]
    hidden: usize,
    num_classes: usize,
    pooling: String,
    example_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    id: String,
    label: usize,
    layers: Vec<String>,
}

impl TeacherView {
    pub fn new(depth: usize, hidden: usize, num_classes: usize, records: Vec<TeacherRecord>) -> Result<Self> {
        if depth == 0 || hidden == 0 {
            bail!(Data, "teacher needs positive depth and width, got J={} H={}", depth, hidden);
        }
        if num_classes < 2 {
            bail!(Data, "teacher needs at least two classes");
        }
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id.clone(), i).is_some() {
                bail!(Data, "duplicate teacher record `{}`", r.id);
            }
            if r.label >= num_classes {
                bail!(Data, "record `{}` has label {} outside [0, {})", r.id, r.label, num_classes);
            }
            if r.layers.len() != depth {
                bail!(Data, "record `{}` has {} layers, header says {}", r.id, r.layers.len(), depth);
            }
            if let Some(l) = r.layers.iter().position(|v| v.len() != hidden) {
                bail!(
                    Data,
                    "record `{}` layer {} has {} values, header says H={}",
                    r.id,
                    l + 1,
                    r.layers[l].len(),
                    hidden
                );
            }
            if r.layers.iter().flatten().any(|v| !v.is_finite()) {
                bail!(Data, "record `{}` holds a non-finite value", r.id);
            }
        }
        Ok(Self {
            depth,
            hidden,
            num_classes,
            records,
            index,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TeacherRecord] {
        &self.records
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&TeacherRecord> {
        self.position(id).map(|i| &self.records[i])
    }

    /// SHA-256 over the header and every record in id order, so the hash
    /// ignores record order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.depth, self.hidden, self.num_classes] {
            h.update((v as u64).to_le_bytes());
        }
        let mut order: Vec<&TeacherRecord> = self.records.iter().collect();
        order.sort_by(|a, b| a.id.cmp(&b.id));
        for r in order {
            h.update((r.id.len() as u64).to_le_bytes());
            h.update(r.id.as_bytes());
            h.update((r.label as u64).to_le_bytes());
            for v in r.layers.iter().flatten() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Interchange text with base64 arrays.
    pub fn to_interchange(&self) -> String {
        let header = Header {
            schema_version: TEACHER_SCHEMA_VERSION,
            depth: self.depth,
            hidden: self.hidden,
            num_classes: self.num_classes,
            pooling: "mean".into(),
            example_count: self.records.len(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            let line = RecordLine {
                id: r.id.clone(),
                label: r.label,
                layers: r.layers.iter().map(|v| STANDARD.encode(f32_bytes(v))).collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_interchange(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((_, first)) = lines.next() else {
            bail!(Data, "teacher file is empty");
        };
        let header: Header =
            serde_json::from_str(first).map_err(|e| Error::Data(format!("teacher header: {e}")))?;
        if header.schema_version != TEACHER_SCHEMA_VERSION {
            bail!(
                Data,
                "teacher header has schema_version {}, expected {}",
                header.schema_version,
                TEACHER_SCHEMA_VERSION
            );
        }
        if header.pooling != "mean" {
            bail!(Data, "teacher header declares pooling `{}`, only `mean` is supported", header.pooling);
        }
        let mut records = Vec::with_capacity(header.example_count);
        for (n, line) in lines {
            let rec: RecordLine = serde_json::from_str(line)
                .map_err(|e| Error::Data(format!("teacher line {}: {e}", n + 1)))?;
            if rec.layers.len() != header.depth {
                bail!(Data, "record `{}` has {} layers, header says J={}", rec.id, rec.layers.len(), header.depth);
            }
            let mut layers = Vec::with_capacity(header.depth);
            for (j, s) in rec.layers.iter().enumerate() {
                let bytes = decode_array(s, header.hidden)
                    .map_err(|e| Error::Data(format!("record `{}` layer {}: {e}", rec.id, j + 1)))?;
                if bytes.len() != 4 * header.hidden {
                    bail!(
                        Data,
                        "record `{}` layer {} has {} bytes, header says H={} ({} bytes)",
                        rec.id,
                        j + 1,
                        bytes.len(),
                        header.hidden,
                        4 * header.hidden
                    );
                }
                layers.push(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect());
            }
            records.push(TeacherRecord {
                id: rec.id,
                label: rec.label,
                layers,
            });
        }
        if records.len() != header.example_count {
            bail!(
                Data,
                "teacher file holds {} records, header says {} (truncated?)",
                records.len(),
                header.example_count
            );
        }
        Self::new(header.depth, header.hidden, header.num_classes, records)
    }
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

/// Hex arrays are exactly `8 * H` hex digits; anything else is base64.
fn decode_array(s: &str, hidden: usize) -> std::result::Result<Vec<u8>, String> {
    if s.len() == 8 * hidden && s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|e| e.to_string()))
            .collect();
    }
    STANDARD.decode(s).map_err(|e| format!("bad base64: {e}"))
}

pub fn load_teacher(path: &Path) -> Result<TeacherView> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read teacher file {}: {e}", path.display())))?;
    TeacherView::parse_interchange(&text)
}

pub fn write_teacher(view: &TeacherView, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(view.to_interchange().as_bytes())?;
    Ok(())
}
