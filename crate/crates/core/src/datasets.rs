//! Manifests, the detection-annotation converter and split-count checks.
//!
//! A manifest is JSONL, one image per line:
//!
//! ```text
//! {"id": "000001", "image_path": "images/000001.jpg", "gold_labels": ["dog", "person"], "split": 0}
//! ```
//!
//! Relative image paths are resolved against the manifest's directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{labelset_from, ImageRecord, SplitId};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("image {id:?}: split {split} outside 0..=3")]
    InvalidSplit { id: String, split: i64 },
    #[error("image {id:?}: empty id")]
    EmptyId { id: String },
    #[error("image {id:?}: file {path} does not exist")]
    MissingImage { id: String, path: PathBuf },
    #[error("{} image(s) missing from the images directory: {}", .0.len(), .0.join(", "))]
    MissingImages(Vec<String>),
    #[error("{0}")]
    Conversion(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingImagePolicy {
    #[default]
    Fail,
    Warn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    entries: Vec<ImageRecord>,
    source: String,
    split_counts: BTreeMap<u8, usize>,
}

impl Manifest {
    pub fn new(entries: Vec<ImageRecord>, source: impl Into<String>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        let mut split_counts = BTreeMap::new();
        for e in &entries {
            if e.id.trim().is_empty() {
                return Err(DatasetError::EmptyId { id: e.id.clone() });
            }
            if !seen.insert(e.id.as_str()) {
                return Err(DatasetError::DuplicateId(e.id.clone()));
            }
            *split_counts.entry(e.split.get()).or_insert(0) += 1;
        }
        Ok(Self { entries, source: source.into(), split_counts })
    }

    pub fn entries(&self) -> &[ImageRecord] {
        &self.entries
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn split_counts(&self) -> &BTreeMap<u8, usize> {
        &self.split_counts
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn by_id(&self) -> HashMap<&str, &ImageRecord> {
        self.entries.iter().map(|e| (e.id.as_str(), e)).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    id: String,
    image_path: String,
    gold_labels: Vec<String>,
    split: i64,
}

pub fn load_manifest(path: &Path, missing: MissingImagePolicy) -> Result<Manifest, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let split = SplitId::new(parsed.split)
            .map_err(|_| DatasetError::InvalidSplit { id: parsed.id.clone(), split: parsed.split })?;
        let image_ref = base.join(&parsed.image_path);
        if !image_ref.is_file() {
            match missing {
                MissingImagePolicy::Fail => return Err(DatasetError::MissingImage { id: parsed.id, path: image_ref }),
                MissingImagePolicy::Warn => warn!("image {:?}: {} does not exist", parsed.id, image_ref.display()),
            }
        }
        entries.push(ImageRecord { id: parsed.id, image_ref, gold_labels: labelset_from(parsed.gold_labels), split });
    }
    Manifest::new(entries, path.display().to_string())
}

/// Writes a manifest as JSONL. Image paths under `out`'s directory are
/// written relative to it so the manifest can be moved with its images.
pub fn write_manifest(manifest: &Manifest, out: &Path) -> Result<(), DatasetError> {
    let base = out.parent().unwrap_or(Path::new(""));
    let mut buf = Vec::new();
    for e in manifest.entries() {
        let rel = e.image_ref.strip_prefix(base).unwrap_or(&e.image_ref);
        let line = ManifestLine {
            id: e.id.clone(),
            image_path: rel.to_string_lossy().replace('\\', "/"),
            gold_labels: e.gold_labels.labels().to_vec(),
            split: i64::from(e.split.get()),
        };
        serde_json::to_writer(&mut buf, &line).expect("manifest line serializes");
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(out).map_err(io_err(out))?;
    f.write_all(&buf).map_err(io_err(out))
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: Value,
    file_name: String,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: Value,
    category_id: Value,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: Value,
    name: String,
}

#[derive(Deserialize)]
struct SplitLine {
    id: Value,
    split: i64,
}

/// Ids may be numbers or strings in the source files; both compare as text.
fn id_text(v: &Value) -> Result<String, DatasetError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(DatasetError::Conversion(format!("id {other} is neither a string nor a number"))),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reads a split spec, one `{"id": ..., "split": ...}` per line, in file order.
pub fn load_split_spec(path: &Path) -> Result<Vec<(String, SplitId)>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: SplitLine = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let id = id_text(&l.id)?;
        let split = SplitId::new(l.split).map_err(|_| DatasetError::InvalidSplit { id: id.clone(), split: l.split })?;
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId(id));
        }
        out.push((id, split));
    }
    Ok(out)
}

/// Builds a manifest from detection-style annotations (`images`,
/// `annotations`, `categories`). Gold labels are the normalized category
/// names present in each image. Only images listed in the split spec are
/// kept, in split-spec order; an id in the spec that the annotations do not
/// know is an error, as is any listed image whose file is missing.
pub fn convert_coco(annotation_json: &Path, images_dir: &Path, split_spec: &Path) -> Result<Manifest, DatasetError> {
    let coco: CocoFile = read_json(annotation_json)?;
    let spec = load_split_spec(split_spec)?;

    let mut categories = HashMap::new();
    for c in &coco.categories {
        categories.insert(id_text(&c.id)?, c.name.clone());
    }
    let mut files = HashMap::new();
    for img in &coco.images {
        let id = id_text(&img.id)?;
        if files.insert(id.clone(), img.file_name.clone()).is_some() {
            return Err(DatasetError::DuplicateId(id));
        }
    }
    let mut names: HashMap<String, Vec<String>> = HashMap::new();
    for a in &coco.annotations {
        let cat = id_text(&a.category_id)?;
        let name = categories
            .get(&cat)
            .ok_or_else(|| DatasetError::Conversion(format!("annotation refers to unknown category {cat}")))?;
        names.entry(id_text(&a.image_id)?).or_default().push(name.clone());
    }

    let mut entries = Vec::with_capacity(spec.len());
    let mut missing = Vec::new();
    for (id, split) in &spec {
        let file = files
            .get(id)
            .ok_or_else(|| DatasetError::Conversion(format!("split spec lists image {id} absent from annotations")))?;
        let image_ref = images_dir.join(file);
        if !image_ref.is_file() {
            missing.push(id.clone());
        }
        entries.push(ImageRecord {
            id: id.clone(),
            image_ref,
            gold_labels: labelset_from(names.get(id).map(Vec::as_slice).unwrap_or_default()),
            split: *split,
        });
    }
    if !missing.is_empty() {
        return Err(DatasetError::MissingImages(missing));
    }
    let unassigned = files.len() - entries.len();
    if unassigned > 0 {
        warn!("{unassigned} annotated image(s) have no split assignment and were left out");
    }
    Manifest::new(entries, annotation_json.display().to_string())
}

/// Expected images per split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    pub name: String,
    pub counts: [usize; 4],
}

impl ExpectedCounts {
    pub fn voc() -> Self {
        Self { name: "voc".into(), counts: [1561, 1775, 1891, 596] }
    }

    pub fn coco() -> Self {
        Self { name: "coco".into(), counts: [29628, 3583, 4461, 2465] }
    }

    pub fn nus() -> Self {
        Self { name: "nus".into(), counts: [2500; 4] }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "voc" | "voc2007" => Some(Self::voc()),
            "coco" | "coco2014" => Some(Self::coco()),
            "nus" | "nus-wide" | "nuswide" => Some(Self::nus()),
            _ => None,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitCheck {
    pub split: u8,
    pub expected: usize,
    pub found: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitReport {
    pub dataset: String,
    pub splits: Vec<SplitCheck>,
    pub pass: bool,
}

impl SplitReport {
    pub fn failing(&self) -> Vec<u8> {
        self.splits.iter().filter(|s| !s.pass).map(|s| s.split).collect()
    }
}

impl fmt::Display for SplitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.splits {
            let verdict = if s.pass { "ok" } else { "MISMATCH" };
            writeln!(f, "{} split {}: expected {}, found {} {verdict}", self.dataset, s.split, s.expected, s.found)?;
        }
        write!(f, "{}: {}", self.dataset, if self.pass { "pass" } else { "fail" })
    }
}

pub fn verify_split_counts(manifest: &Manifest, expected: &ExpectedCounts) -> SplitReport {
    let splits: Vec<SplitCheck> = SplitId::ALL
        .iter()
        .map(|s| {
            let found = manifest.split_counts().get(&s.get()).copied().unwrap_or(0);
            let want = expected.counts[s.get() as usize];
            SplitCheck { split: s.get(), expected: want, found, pass: found == want }
        })
        .collect();
    let pass = splits.iter().all(|s| s.pass);
    SplitReport { dataset: expected.name.clone(), splits, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn touch(dir: &Path, name: &str) {
        fs::write(dir.join(name), b"x").unwrap();
    }

    #[test]
    fn load_valid_manifest() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["a.jpg", "b.jpg", "c.jpg"] {
            touch(dir.path(), n);
        }
        let p = dir.path().join("m.jsonl");
        fs::write(
            &p,
            concat!(
                "{\"id\":\"a\",\"image_path\":\"a.jpg\",\"gold_labels\":[\"Dogs\",\"dog\"],\"split\":0}\n",
                "{\"id\":\"b\",\"image_path\":\"b.jpg\",\"gold_labels\":[\"potted plant\"],\"split\":1}\n",
                "\n",
                "{\"id\":\"c\",\"image_path\":\"c.jpg\",\"gold_labels\":[],\"split\":1}\n",
            ),
        )
        .unwrap();
        let m = load_manifest(&p, MissingImagePolicy::Fail).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.entries()[0].gold_labels.labels(), ["dog"]);
        assert_eq!(m.entries()[1].gold_labels.labels(), ["potted plant"]);
        assert_eq!(m.entries()[0].image_ref, dir.path().join("a.jpg"));
        assert_eq!(m.split_counts()[&1], 2);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.jpg");
        let p = dir.path().join("m.jsonl");
        let line = |id: &str, split: i64, img: &str| {
            format!("{{\"id\":\"{id}\",\"image_path\":\"{img}\",\"gold_labels\":[],\"split\":{split}}}\n")
        };

        fs::write(&p, line("a", 0, "a.jpg") + &line("a", 1, "a.jpg")).unwrap();
        let e = load_manifest(&p, MissingImagePolicy::Fail).unwrap_err();
        assert!(e.to_string().contains("\"a\""), "{e}");

        fs::write(&p, line("a", 7, "a.jpg")).unwrap();
        assert!(matches!(
            load_manifest(&p, MissingImagePolicy::Fail),
            Err(DatasetError::InvalidSplit { split: 7, .. })
        ));

        fs::write(&p, line("z", 0, "nope.jpg")).unwrap();
        assert!(matches!(load_manifest(&p, MissingImagePolicy::Fail), Err(DatasetError::MissingImage { .. })));
        assert_eq!(load_manifest(&p, MissingImagePolicy::Warn).unwrap().len(), 1);

        fs::write(&p, "{not json}\n").unwrap();
        assert!(matches!(load_manifest(&p, MissingImagePolicy::Fail), Err(DatasetError::Parse { line: 1, .. })));
    }

    fn coco_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
        let images = dir.join("images");
        fs::create_dir(&images).unwrap();
        touch(&images, "1.jpg");
        touch(&images, "2.jpg");
        let ann = dir.join("ann.json");
        fs::write(
            &ann,
            r#"{"images":[{"id":1,"file_name":"1.jpg"},{"id":2,"file_name":"2.jpg"},{"id":3,"file_name":"3.jpg"}],
                "annotations":[{"image_id":1,"category_id":18},{"image_id":1,"category_id":18},{"image_id":1,"category_id":37}],
                "categories":[{"id":18,"name":"dog"},{"id":37,"name":"sports ball"}]}"#,
        )
        .unwrap();
        let spec = dir.join("split.jsonl");
        fs::write(&spec, "{\"id\":2,\"split\":3}\n{\"id\":\"1\",\"split\":0}\n").unwrap();
        (ann, images, spec)
    }

    #[test]
    fn coco_conversion() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, images, spec) = coco_fixture(dir.path());
        let m = convert_coco(&ann, &images, &spec).unwrap();
        let ids: Vec<&str> = m.entries().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["2", "1"]);
        assert_eq!(m.get("1").unwrap().gold_labels.labels(), ["dog", "sports ball"]);
        assert!(m.get("2").unwrap().gold_labels.is_empty());
        assert_eq!(m.get("2").unwrap().split.get(), 3);

        fs::write(&spec, "{\"id\":3,\"split\":0}\n").unwrap();
        match convert_coco(&ann, &images, &spec) {
            Err(DatasetError::MissingImages(ids)) => assert_eq!(ids, ["3"]),
            other => panic!("{other:?}"),
        }
        fs::write(&spec, "{\"id\":9,\"split\":0}\n").unwrap();
        assert!(convert_coco(&ann, &images, &spec).is_err());
    }

    #[test]
    fn conversion_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, images, spec) = coco_fixture(dir.path());
        let out_a = dir.path().join("a.jsonl");
        let out_b = dir.path().join("b.jsonl");
        write_manifest(&convert_coco(&ann, &images, &spec).unwrap(), &out_a).unwrap();
        write_manifest(&convert_coco(&ann, &images, &spec).unwrap(), &out_b).unwrap();
        let a = fs::read(&out_a).unwrap();
        assert_eq!(a, fs::read(&out_b).unwrap());
        assert!(String::from_utf8(a).unwrap().contains("\"image_path\":\"images/1.jpg\""));
        // and it loads back
        let m = load_manifest(&out_a, MissingImagePolicy::Fail).unwrap();
        assert_eq!(m.len(), 2);
    }

    fn synthetic(counts: [usize; 4]) -> Manifest {
        let entries = counts
            .iter()
            .enumerate()
            .flat_map(|(s, &n)| {
                (0..n).map(move |i| ImageRecord {
                    id: format!("{s}-{i}"),
                    image_ref: PathBuf::from("x.jpg"),
                    gold_labels: Default::default(),
                    split: SplitId::new(s as i64).unwrap(),
                })
            })
            .collect();
        Manifest::new(entries, "synthetic").unwrap()
    }

    #[test]
    fn split_verification() {
        assert!(verify_split_counts(&synthetic([1561, 1775, 1891, 596]), &ExpectedCounts::voc()).pass);
        assert!(verify_split_counts(&synthetic([2500; 4]), &ExpectedCounts::nus()).pass);
        let r = verify_split_counts(&synthetic([1561, 1774, 1891, 596]), &ExpectedCounts::voc());
        assert!(!r.pass);
        assert_eq!(r.failing(), [1]);
        assert!(r.to_string().contains("split 1: expected 1775, found 1774 MISMATCH"));
        assert_eq!(ExpectedCounts::voc().total(), 5823);
        assert_eq!(ExpectedCounts::coco().total(), 40137);
    }
}
