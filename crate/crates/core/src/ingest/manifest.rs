//! JSON-Lines manifest: one feedback instance per line.
//!
//! ```text
//! {"id":"i0001","case_id":"c03","onset_s":812.5,
//!  "labels":{"anatomic":true,"procedural":false,"technical":true,"praise":false,"visual_aid":false},
//!  "text_manual":"...","text_asr":null,
//!  "payload":{"audio":[0.1,...],"video":{"path":"payloads/i0001_video.f32"}},
//!  "embeddings":{"text":{"path":"embeddings_text.f32","index":0}}}
//! ```
//!
//! A payload is a flat numeric array, `{"shape":[..],"data":[..]}`,
//! `{"tokens":[..]}`, or `{"path":..}` pointing (relative to the manifest)
//! at a raw fp32 file whose first line is `{"shape":[..]}`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::IngestError;
use crate::binio::{read_f32_file, write_f32_file};
use crate::domain::{Dimension, FeedbackLabelSet, Modality};
use crate::encoders::{read_embedding_file, write_embedding_file};
use crate::record::{Embeddings, InstanceRecord, Payload};

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum PayloadJson {
    Flat(Vec<f64>),
    Tokens { tokens: Vec<usize> },
    Shaped { shape: Vec<usize>, data: Vec<f64> },
    File { path: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum EmbeddingJson {
    Inline(Vec<f64>),
    Ref { path: String, index: usize },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    id: String,
    case_id: String,
    onset_s: f64,
    labels: Map<String, Value>,
    #[serde(default)]
    text_manual: Option<String>,
    #[serde(default)]
    text_asr: Option<String>,
    #[serde(default)]
    payload: Option<BTreeMap<String, PayloadJson>>,
    #[serde(default)]
    embeddings: Option<BTreeMap<String, EmbeddingJson>>,
    #[serde(default)]
    oracle_scores: Option<[f64; 5]>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn shaped_payload(shape: &[usize], data: Vec<f64>, line: usize) -> Result<Payload, IngestError> {
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(IngestError::Parse {
            line,
            message: format!(
                "payload shape {shape:?} does not match {} values",
                data.len()
            ),
        });
    }
    match shape {
        [_] => Ok(Payload::Vector(data)),
        [f, h, w] => Ok(Payload::Frames {
            frames: *f,
            height: *h,
            width: *w,
            data,
        }),
        _ => Err(IngestError::Parse {
            line,
            message: format!("unsupported payload shape {shape:?}"),
        }),
    }
}

fn resolve_payload(p: PayloadJson, base: &Path, line: usize) -> Result<Payload, IngestError> {
    match p {
        PayloadJson::Flat(v) => Ok(Payload::Vector(v)),
        PayloadJson::Tokens { tokens } => Ok(Payload::Tokens(tokens)),
        PayloadJson::Shaped { shape, data } => shaped_payload(&shape, data, line),
        PayloadJson::File { path } => {
            let full = base.join(&path);
            let (header, data) = read_f32_file(&full).map_err(io_err(&full))?;
            let shape: Vec<usize> =
                serde_json::from_value(header["shape"].clone()).map_err(|e| {
                    IngestError::Parse {
                        line,
                        message: format!("{path}: bad shape header: {e}"),
                    }
                })?;
            shaped_payload(&shape, data, line)
        }
    }
}

type EmbeddingCache = HashMap<PathBuf, (usize, Vec<f64>)>;

fn resolve_embedding(
    e: EmbeddingJson,
    base: &Path,
    cache: &mut EmbeddingCache,
    line: usize,
) -> Result<Vec<f64>, IngestError> {
    match e {
        EmbeddingJson::Inline(v) => Ok(v),
        EmbeddingJson::Ref { path, index } => {
            let full = base.join(&path);
            if !cache.contains_key(&full) {
                let (_, dim, data) = read_embedding_file(&full).map_err(io_err(&full))?;
                cache.insert(full.clone(), (dim, data));
            }
            let (dim, data) = &cache[&full];
            let start = index * dim;
            data.get(start..start + dim)
                .map(|s| s.to_vec())
                .ok_or_else(|| IngestError::Parse {
                    line,
                    message: format!("{path}: embedding index {index} out of range"),
                })
        }
    }
}

fn parse_labels(map: &Map<String, Value>, line: usize) -> Result<FeedbackLabelSet, IngestError> {
    let mut out = FeedbackLabelSet::default();
    for d in Dimension::ALL {
        let v = map.get(d.key()).ok_or_else(|| IngestError::MissingLabel {
            line,
            key: d.key().to_string(),
        })?;
        let b = v.as_bool().ok_or_else(|| IngestError::Parse {
            line,
            message: format!("label `{}` is not a boolean", d.key()),
        })?;
        out.set(d, b);
    }
    if let Some(extra) = map.keys().find(|k| k.parse::<Dimension>().is_err()) {
        return Err(IngestError::Parse {
            line,
            message: format!("unknown label key `{extra}`"),
        });
    }
    Ok(out)
}

fn modality_key(k: &str, line: usize) -> Result<Modality, IngestError> {
    k.parse::<Modality>()
        .map_err(|e| IngestError::Parse { line, message: e })
}

/// Load and validate a manifest. Blank lines are ignored; errors carry the
/// 1-based line number.
pub fn load_manifest(path: &Path) -> Result<Vec<InstanceRecord>, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut seen = HashSet::new();
    let mut cache = EmbeddingCache::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let r: RawLine = serde_json::from_str(raw).map_err(|e| IngestError::Parse {
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(r.id.clone()) {
            return Err(IngestError::DuplicateId { line, id: r.id });
        }
        if !(r.onset_s >= 0.0 && r.onset_s.is_finite()) {
            return Err(IngestError::Parse {
                line,
                message: format!("onset_s must be >= 0, got {}", r.onset_s),
            });
        }
        let labels = parse_labels(&r.labels, line)?;
        let (mut audio, mut video) = (None, None);
        for (k, p) in r.payload.unwrap_or_default() {
            let p = resolve_payload(p, &base, line)?;
            match modality_key(&k, line)? {
                Modality::Audio => audio = Some(p),
                Modality::Video => video = Some(p),
                Modality::Text => {
                    return Err(IngestError::Parse {
                        line,
                        message: "text travels in text_manual/text_asr, not payload".into(),
                    })
                }
            }
        }
        let mut embeddings = Embeddings::default();
        for (k, e) in r.embeddings.unwrap_or_default() {
            let m = modality_key(&k, line)?;
            embeddings.set(m, resolve_embedding(e, &base, &mut cache, line)?);
        }
        out.push(InstanceRecord {
            id: r.id,
            case_id: r.case_id,
            onset_s: r.onset_s,
            labels,
            text_manual: r.text_manual,
            text_asr: r.text_asr,
            audio,
            video,
            embeddings,
            oracle_scores: r.oracle_scores,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct ManifestWriteOptions {
    /// Write frame stacks to `payloads/<id>_video.f32` instead of inline.
    pub frames_to_files: bool,
    /// Write embeddings to one `embeddings_<modality>.f32` file per modality.
    pub embeddings_to_files: bool,
}

fn payload_json(p: &Payload) -> Value {
    match p {
        Payload::Vector(v) => json!(v),
        Payload::Tokens(t) => json!({ "tokens": t }),
        Payload::Frames {
            frames,
            height,
            width,
            data,
        } => json!({ "shape": [frames, height, width], "data": data }),
    }
}

pub fn write_manifest(
    path: &Path,
    records: &[InstanceRecord],
    opts: &ManifestWriteOptions,
) -> Result<(), IngestError> {
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    fs::create_dir_all(&base).map_err(io_err(&base))?;

    let mut emb_index: BTreeMap<Modality, (String, Vec<f64>, usize)> = BTreeMap::new();
    if opts.embeddings_to_files {
        for m in Modality::ALL {
            let rows: Vec<&Vec<f64>> = records.iter().filter_map(|r| r.embeddings.get(m)).collect();
            if let Some(first) = rows.first() {
                let dim = first.len();
                if rows.iter().any(|r| r.len() != dim) {
                    return Err(IngestError::InvalidParameter(format!(
                        "{m} embeddings have mixed widths"
                    )));
                }
                let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().cloned()).collect();
                emb_index.insert(m, (format!("embeddings_{m}.f32"), flat, dim));
            }
        }
        for (file, flat, dim) in emb_index.values() {
            let full = base.join(file);
            write_embedding_file(&full, flat.len() / dim, *dim, flat).map_err(io_err(&full))?;
        }
    }
    let mut emb_counter: BTreeMap<Modality, usize> = BTreeMap::new();

    let mut lines = String::new();
    for r in records {
        let labels: Map<String, Value> = Dimension::ALL
            .iter()
            .map(|d| (d.key().to_string(), Value::Bool(r.labels.get(*d))))
            .collect();
        let mut payload = Map::new();
        for (m, p) in [(Modality::Audio, &r.audio), (Modality::Video, &r.video)] {
            let Some(p) = p else { continue };
            let v = match p {
                Payload::Frames {
                    frames,
                    height,
                    width,
                    data,
                } if opts.frames_to_files => {
                    let rel = format!("payloads/{}_{}.f32", r.id, m);
                    let full = base.join(&rel);
                    write_f32_file(&full, &json!({ "shape": [frames, height, width] }), data)
                        .map_err(io_err(&full))?;
                    json!({ "path": rel })
                }
                other => payload_json(other),
            };
            payload.insert(m.key().to_string(), v);
        }
        let mut emb = Map::new();
        for m in Modality::ALL {
            let Some(v) = r.embeddings.get(m) else {
                continue;
            };
            let entry = match emb_index.get(&m) {
                Some((file, _, _)) => {
                    let idx = emb_counter.entry(m).or_insert(0);
                    let e = json!({ "path": file, "index": *idx });
                    *idx += 1;
                    e
                }
                None => json!(v),
            };
            emb.insert(m.key().to_string(), entry);
        }
        let mut obj = Map::new();
        obj.insert("id".into(), json!(r.id));
        obj.insert("case_id".into(), json!(r.case_id));
        obj.insert("onset_s".into(), json!(r.onset_s));
        obj.insert("labels".into(), Value::Object(labels));
        obj.insert("text_manual".into(), json!(r.text_manual));
        obj.insert("text_asr".into(), json!(r.text_asr));
        obj.insert("payload".into(), Value::Object(payload));
        if !emb.is_empty() {
            obj.insert("embeddings".into(), Value::Object(emb));
        }
        if let Some(s) = r.oracle_scores {
            obj.insert("oracle_scores".into(), json!(s));
        }
        lines.push_str(&Value::Object(obj).to_string());
        lines.push('\n');
    }
    fs::write(path, lines).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str) -> InstanceRecord {
        InstanceRecord {
            id: id.into(),
            case_id: "c01".into(),
            onset_s: 12.5,
            labels: FeedbackLabelSet::from_array([true, false, true, false, true]),
            text_manual: Some("w1 w2 w3".into()),
            text_asr: None,
            audio: Some(Payload::Vector(vec![0.1, 1.0 / 3.0, -2.0])),
            video: Some(Payload::Frames {
                frames: 2,
                height: 1,
                width: 2,
                data: vec![0.5, 0.25, -1.0, 2.0],
            }),
            embeddings: Embeddings::default(),
            oracle_scores: Some([0.1, 0.2, 0.3, 0.4, 0.5]),
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, "").unwrap();
        assert!(load_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn missing_label_names_line_and_key() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_manifest(&p, &[record("a")], &Default::default()).unwrap();
        let good = fs::read_to_string(&p).unwrap();
        let bad = good.replace("\"praise\":false,", "");
        fs::write(&p, format!("{good}{}", bad.replace("\"a\"", "\"b\""))).unwrap();
        match load_manifest(&p) {
            Err(IngestError::MissingLabel { line, key }) => {
                assert_eq!(line, 2);
                assert_eq!(key, "praise");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_manifest(&p, &[record("a"), record("a")], &Default::default()).unwrap();
        assert!(matches!(
            load_manifest(&p),
            Err(IngestError::DuplicateId { line: 2, .. })
        ));
        fs::write(&p, "{not json\n").unwrap();
        assert!(matches!(
            load_manifest(&p),
            Err(IngestError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn round_trip_inline_and_file_payloads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut r = record("a");
        r.embeddings.set(Modality::Audio, vec![0.5; 256]);
        let recs = vec![r, record("b")];
        write_manifest(&p, &recs, &Default::default()).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), recs);

        let opts = ManifestWriteOptions {
            frames_to_files: true,
            embeddings_to_files: true,
        };
        let p2 = dir.path().join("sub/m.jsonl");
        write_manifest(&p2, &recs, &opts).unwrap();
        assert!(dir.path().join("sub/payloads/a_video.f32").exists());
        assert!(dir.path().join("sub/embeddings_audio.f32").exists());
        assert_eq!(load_manifest(&p2).unwrap(), recs);
    }
}
