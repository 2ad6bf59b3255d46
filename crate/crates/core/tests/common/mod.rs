#![allow(dead_code)]

use std::path::Path;

use coa_core::backends::{ChatFixture, FixtureFile, ImageData};
use coa_core::{ActionKind, ImageRecord, SplitId};

/// A scripted image: caption, one yes/no verdict per caption entity, and
/// the remaining action responses.
pub struct Scene {
    pub id: String,
    pub bytes: Vec<u8>,
    pub caption: String,
    pub verdicts: Vec<(String, String)>,
    pub appearance: String,
    pub relationship: String,
    pub final_: String,
}

impl Scene {
    pub fn digest(&self) -> String {
        ImageData::new(self.bytes.clone(), "image/png").digest().to_string()
    }

    pub fn fixtures(&self) -> Vec<ChatFixture> {
        let d = self.digest();
        let mut out = vec![
            ChatFixture::respond(&d, ActionKind::Caption, &self.caption),
            ChatFixture::respond(&d, ActionKind::Appearance, &self.appearance),
            ChatFixture::respond(&d, ActionKind::Relationship, &self.relationship),
            ChatFixture::respond(&d, ActionKind::Final, &self.final_),
            ChatFixture::respond(&d, ActionKind::MergedSingle, format!("Labels: {}", self.final_)),
            ChatFixture::respond(&d, ActionKind::BaselineVqa, &self.final_),
            ChatFixture::respond(&d, ActionKind::BaselineCaption, &self.caption),
        ];
        for (entity, answer) in &self.verdicts {
            out.push(ChatFixture::respond(&d, ActionKind::SelfCorrect, answer).with_subject(entity));
        }
        out
    }
}

pub fn dog_scene(i: usize) -> Scene {
    Scene {
        id: format!("img{i:02}"),
        bytes: format!("scene bytes {i}").into_bytes(),
        caption: "A dog chases a ball across the grass near a cat".into(),
        verdicts: vec![
            ("dog".into(), "Yes".into()),
            ("ball".into(), "Yes, a red one.".into()),
            ("grass".into(), "yes".into()),
            ("cat".into(), "No, there is no cat.".into()),
        ],
        appearance: "dog: brown, mid-stride\nball: small and red\ngrass: short".into(),
        relationship: "The dog is chasing the ball over the grass.".into(),
        final_: "dog, ball, grass".into(),
    }
}

pub fn fixture_file(scenes: &[Scene], latency_ms: u64) -> FixtureFile {
    FixtureFile {
        latency_ms: Some(latency_ms),
        chat: scenes.iter().flat_map(Scene::fixtures).collect(),
        ..FixtureFile::default()
    }
}

/// Writes each scene's bytes as a PNG-named file and returns its record.
pub fn write_records(dir: &Path, scenes: &[Scene]) -> Vec<ImageRecord> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let path = dir.join(format!("{}.png", s.id));
            std::fs::write(&path, &s.bytes).unwrap();
            ImageRecord {
                id: s.id.clone(),
                image_ref: path,
                gold_labels: coa_core::labelset_from(["dog"]),
                split: SplitId::new((i % 4) as i64).unwrap(),
            }
        })
        .collect()
}
