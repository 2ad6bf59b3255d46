#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use coa_core::backends::{ChatFixture, FixtureFile, ImageData};
use coa_core::ActionKind;
use serde_json::json;

/// Every image shows a dog, a ball and grass; the caption also mentions a
/// cat that is not there.
pub const CAPTION: &str = "A dog chases a ball across the grass near a cat";
pub const VISIBLE: [&str; 3] = ["dog", "ball", "grass"];
const BASIS: [&str; 4] = ["dog", "ball", "grass", "cat"];

pub fn image_bytes(i: usize) -> Vec<u8> {
    format!("synthetic image {i}").into_bytes()
}

pub fn digest(bytes: &[u8]) -> String {
    ImageData::new(bytes.to_vec(), "image/png").digest().to_string()
}

fn basis_vector(labels: &[&str]) -> Vec<f64> {
    BASIS.iter().map(|b| if labels.contains(b) { 1.0 } else { 0.0 }).collect()
}

/// Text embedding for the rendered prompt of each label combination the
/// scripted answers can produce.
fn text_embeddings() -> BTreeMap<String, Vec<f64>> {
    let sets: [&[&str]; 5] =
        [&["dog"], &["dog", "ball"], &["dog", "ball", "grass"], &["dog", "ball", "grass", "cat"], &["ball", "grass"]];
    let mut out: BTreeMap<String, Vec<f64>> =
        sets.iter().map(|s| (format!("This image contains {}", s.join(", ")), basis_vector(s))).collect();
    out.insert("This image contains nothing".into(), vec![0.1, 0.1, 0.1, 0.1]);
    out
}

/// Scripted answers for one image. Final echoes the entity list it is
/// handed, so a hallucinated caption entity survives unless self-correct
/// removes it; without a caption it answers "dog".
pub fn scene_fixtures(d: &str) -> Vec<ChatFixture> {
    let mut out = vec![
        ChatFixture::respond(d, ActionKind::Caption, CAPTION),
        ChatFixture::respond(d, ActionKind::SelfCorrect, "Yes").with_subject("dog"),
        ChatFixture::respond(d, ActionKind::SelfCorrect, "Yes, a red one.").with_subject("ball"),
        ChatFixture::respond(d, ActionKind::SelfCorrect, "yes").with_subject("grass"),
        ChatFixture::respond(d, ActionKind::SelfCorrect, "No, there is no cat.").with_subject("cat"),
        ChatFixture::respond(d, ActionKind::Appearance, "dog: brown\nball: red\ngrass: short"),
        ChatFixture::respond(d, ActionKind::Relationship, "The dog chases the ball on the grass."),
        ChatFixture::respond(d, ActionKind::Final, "dog"),
        ChatFixture::respond(d, ActionKind::MergedSingle, "Labels: dog, ball"),
        ChatFixture::respond(d, ActionKind::BaselineVqa, "dog"),
        ChatFixture::respond(d, ActionKind::BaselineCaption, CAPTION),
    ];
    for subject in ["dog, ball, grass, cat", "dog, ball, grass"] {
        out.push(ChatFixture::respond(d, ActionKind::Final, subject).with_subject(subject));
    }
    out
}

pub fn fixture_file(n: usize, latency_ms: u64) -> FixtureFile {
    let mut file =
        FixtureFile { latency_ms: Some(latency_ms), embed_text: text_embeddings(), ..FixtureFile::default() };
    for i in 0..n {
        let d = digest(&image_bytes(i));
        file.chat.extend(scene_fixtures(&d));
        file.embed_image.insert(d.clone(), basis_vector(&VISIBLE));
        let conf = [("dog", 0.95), ("ball", 0.9), ("grass", 0.8), ("cat", 0.1)];
        file.tag.insert(d, conf.iter().map(|(l, c)| (l.to_string(), *c)).collect());
    }
    file
}

pub fn image_id(i: usize) -> String {
    format!("img{i:03}")
}

/// A directory holding `n` images, a manifest, and a fixture file.
pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub manifest: PathBuf,
    pub fixtures: PathBuf,
}

impl Workspace {
    pub fn new(n: usize, latency_ms: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        let mut lines = String::new();
        for i in 0..n {
            std::fs::write(dir.path().join(format!("images/{}.png", image_id(i))), image_bytes(i)).unwrap();
            let line = json!({
                "id": image_id(i),
                "image_path": format!("images/{}.png", image_id(i)),
                "gold_labels": ["dog"],
                "split": i % 4,
            });
            lines.push_str(&line.to_string());
            lines.push('\n');
        }
        let manifest = dir.path().join("manifest.jsonl");
        std::fs::write(&manifest, lines).unwrap();
        let fixtures = dir.path().join("fixtures.json");
        std::fs::write(&fixtures, serde_json::to_string_pretty(&fixture_file(n, latency_ms)).unwrap()).unwrap();
        Self { dir, manifest, fixtures }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }
}

pub fn read_lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
