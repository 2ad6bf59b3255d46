//! The action chain engine.
//!
//! Per image, the configured actions run strictly in order, each one reading
//! what the earlier ones produced:
//!
//! 1. caption: one-sentence caption, filtered into an initial entity list
//! 2. self-correct: one yes/no question per entity; "no" drops it
//! 3. appearance: one batched query describing every remaining entity
//! 4. relationship: free-text relations between the entities
//! 5. final: all collected context in, final label list out
//!
//! Besides subsets of the chain there are three single-call modes: the merged
//! template, the VQA baseline and the caption baseline. Images are processed
//! concurrently by [`ChainRunner::run_batch`]; one image's actions never
//! overlap.

mod config;
pub mod parse;
pub mod templates;

use std::collections::BTreeMap;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, BackendError, ChatMeta, ChatRequest, ImageData};
use crate::domain::{ActionKind, ChainState, ImageRecord, Interaction, LabelSet};
use crate::filter::{CaptionFilter, FilterError};
pub use config::{ChainConfig, ChainMode, Decoding, VALID_SUBSETS};
use parse::{parse_appearance, parse_label_list, parse_merged_response, parse_yes_no, render_appearance, YesNo};
pub use templates::{render, PromptTemplates, TemplateError};

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("invalid chain config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("{action} action failed: {source}")]
    Action { action: ActionKind, source: BackendError },
    #[error("reading image {path}: {source}")]
    Image { path: String, source: std::io::Error },
}

/// Rendering for context that is empty or was not produced by the config.
const NONE: &str = "none";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFailure {
    pub image_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    /// Successful chains, in manifest order.
    pub states: Vec<ChainState>,
    pub failures: Vec<ImageFailure>,
    pub wall_ms: u64,
}

impl BatchOutcome {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

pub struct ChainRunner<B> {
    cfg: ChainConfig,
    filter: CaptionFilter,
    backend: B,
}

impl<B: Backend> ChainRunner<B> {
    pub fn new(cfg: ChainConfig, backend: B) -> Result<Self, ChainError> {
        cfg.validate()?;
        let filter = CaptionFilter::from_config(&cfg.filter)?;
        Ok(Self { cfg, filter, backend })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn filter(&self) -> &CaptionFilter {
        &self.filter
    }

    fn templates(&self) -> &PromptTemplates {
        &self.cfg.templates
    }

    /// One chat interaction, recorded in the transcript when it succeeds.
    fn ask(
        &self,
        state: &mut ChainState,
        image: &ImageData,
        action: ActionKind,
        subject: Option<String>,
        prompt: String,
        max_tokens: u32,
    ) -> Result<String, ChainError> {
        let req = ChatRequest {
            model: self.cfg.chat_model.clone(),
            prompt,
            image: Some(image.clone()),
            max_tokens,
            temperature: self.cfg.decoding.temperature,
            seed: self.cfg.decoding.seed,
            meta: Some(ChatMeta { action, subject }),
        };
        let resp = self.backend.chat(&req).map_err(|source| ChainError::Action { action, source })?;
        state.total_latency_ms += resp.latency_ms;
        state.transcript.push(Interaction {
            action,
            prompt: req.prompt,
            image_attached: true,
            raw_response: resp.text.clone(),
            latency_ms: resp.latency_ms,
            cache_hit: resp.cache_hit,
        });
        Ok(resp.text)
    }

    fn note_warning(state: &mut ChainState, msg: String) {
        warn!("{}: {msg}", state.image_id);
        state.warnings.push(msg);
    }

    /// Caption plus the entity list filtered out of it.
    pub fn run_caption_action(
        &self,
        image: &ImageData,
        state: &mut ChainState,
    ) -> Result<(String, LabelSet), ChainError> {
        let prompt = self.templates().caption.clone();
        let caption = self.ask(state, image, ActionKind::Caption, None, prompt, self.cfg.decoding.max_tokens)?;
        let entities = self.filter.filter_caption(&caption);
        Ok((caption, entities))
    }

    /// One yes/no query per entity; keeps "yes" and ambiguous answers.
    pub fn run_self_correct(
        &self,
        image: &ImageData,
        entities: &LabelSet,
        state: &mut ChainState,
    ) -> Result<LabelSet, ChainError> {
        let mut keep = Vec::with_capacity(entities.len());
        for entity in entities.iter() {
            let prompt = render(&self.templates().self_correct, &[("entity", entity)]);
            let answer = self.ask(
                state,
                image,
                ActionKind::SelfCorrect,
                Some(entity.to_string()),
                prompt,
                self.cfg.decoding.yes_no_max_tokens,
            )?;
            keep.push(match parse_yes_no(&answer) {
                YesNo::Yes => true,
                YesNo::No => false,
                YesNo::Ambiguous => {
                    Self::note_warning(state, format!("ambiguous self-correct answer for {entity:?}: {answer:?}"));
                    true
                }
            });
        }
        Ok(entities.retain_indices(|i| keep[i]))
    }

    /// One batched query; a failed call leaves the notes empty.
    pub fn run_appearance(
        &self,
        image: &ImageData,
        entities: &LabelSet,
        state: &mut ChainState,
    ) -> BTreeMap<String, String> {
        if entities.is_empty() {
            return BTreeMap::new();
        }
        let prompt = render(&self.templates().appearance, &[("entities", &entities.join(", "))]);
        match self.ask(state, image, ActionKind::Appearance, None, prompt, self.cfg.decoding.max_tokens) {
            Ok(text) => parse_appearance(&text, entities),
            Err(e) => {
                Self::note_warning(state, e.to_string());
                BTreeMap::new()
            }
        }
    }

    /// Skipped with no entities; a failed call leaves the notes empty.
    pub fn run_relationship(
        &self,
        image: &ImageData,
        entities: &LabelSet,
        appearance: &BTreeMap<String, String>,
        state: &mut ChainState,
    ) -> String {
        if entities.is_empty() {
            return String::new();
        }
        let appearance = non_empty(render_appearance(appearance, entities));
        let prompt =
            render(&self.templates().relationship, &[("entities", &entities.join(", ")), ("appearance", &appearance)]);
        match self.ask(state, image, ActionKind::Relationship, None, prompt, self.cfg.decoding.max_tokens) {
            Ok(text) => text.trim().to_string(),
            Err(e) => {
                Self::note_warning(state, e.to_string());
                String::new()
            }
        }
    }

    /// The final prompt for whatever context `state` holds.
    pub fn final_prompt(&self, state: &ChainState) -> String {
        let entities = state.working_entities();
        let entity_text = non_empty(entities.join(", "));
        let appearance = non_empty(render_appearance(&state.appearance_notes, entities));
        let relationships = non_empty(state.relationship_notes.clone());
        render(
            &self.templates().final_,
            &[("entities", &entity_text), ("appearance", &appearance), ("relationships", &relationships)],
        )
    }

    pub fn run_final(&self, image: &ImageData, state: &mut ChainState) -> Result<LabelSet, ChainError> {
        let prompt = self.final_prompt(state);
        // with a caption action in the chain, the entity list it handed over
        // identifies this final call for the scripted mock
        let subject = self.cfg.mode.runs(ActionKind::Caption).then(|| state.working_entities().join(", "));
        let text = self.ask(state, image, ActionKind::Final, subject, prompt, self.cfg.decoding.max_tokens)?;
        Ok(parse_label_list(&text))
    }

    pub fn run_chain(&self, image_id: &str, image: &ImageData) -> Result<ChainState, ChainError> {
        let mut state = ChainState::new(image_id, self.cfg.mode.label());
        let max_tokens = self.cfg.decoding.max_tokens;
        match &self.cfg.mode {
            ChainMode::Actions(_) => {
                let mode = &self.cfg.mode;
                if mode.runs(ActionKind::Caption) {
                    let (caption, entities) = self.run_caption_action(image, &mut state)?;
                    state.caption = Some(caption);
                    state.initial_entities = entities;
                }
                if mode.runs(ActionKind::SelfCorrect) {
                    let corrected = self.run_self_correct(image, &state.initial_entities.clone(), &mut state)?;
                    state.corrected_entities = Some(corrected);
                }
                if mode.runs(ActionKind::Appearance) {
                    let entities = state.working_entities().clone();
                    state.appearance_notes = self.run_appearance(image, &entities, &mut state);
                }
                if mode.runs(ActionKind::Relationship) {
                    let entities = state.working_entities().clone();
                    let notes = state.appearance_notes.clone();
                    state.relationship_notes = self.run_relationship(image, &entities, &notes, &mut state);
                }
                state.final_labels = self.run_final(image, &mut state)?;
            }
            ChainMode::Merged => {
                let prompt = self.templates().merged_single.clone();
                let text = self.ask(&mut state, image, ActionKind::MergedSingle, None, prompt, max_tokens)?;
                state.final_labels = parse_merged_response(&text);
            }
            ChainMode::BaselineVqa => {
                let prompt = self.templates().baseline_vqa.clone();
                let text = self.ask(&mut state, image, ActionKind::BaselineVqa, None, prompt, max_tokens)?;
                state.final_labels = parse_label_list(&text);
            }
            ChainMode::BaselineCaption => {
                let prompt = self.templates().baseline_caption.clone();
                let text = self.ask(&mut state, image, ActionKind::BaselineCaption, None, prompt, max_tokens)?;
                let entities = self.filter.filter_caption(&text);
                state.caption = Some(text);
                state.initial_entities = entities.clone();
                state.final_labels = entities;
            }
        }
        Ok(state)
    }

    fn run_record(&self, record: &ImageRecord) -> Result<ChainState, ChainError> {
        let image = ImageData::from_path(&record.image_ref)
            .map_err(|source| ChainError::Image { path: record.image_ref.display().to_string(), source })?;
        self.run_chain(&record.id, &image)
    }

    /// Runs every record with at most `parallelism` images in flight.
    /// Failures are collected per image; output keeps manifest order.
    pub fn run_batch(&self, records: &[ImageRecord]) -> BatchOutcome {
        let start = Instant::now();
        let pool =
            rayon::ThreadPoolBuilder::new().num_threads(self.cfg.parallelism).build().expect("thread pool builds");
        let results: Vec<Result<ChainState, ChainError>> =
            pool.install(|| records.par_iter().map(|r| self.run_record(r)).collect());
        let mut out = BatchOutcome::default();
        for (record, result) in records.iter().zip(results) {
            match result {
                Ok(state) => out.states.push(state),
                Err(e) => {
                    warn!("image {} failed: {e}", record.id);
                    out.failures.push(ImageFailure { image_id: record.id.clone(), error: e.to_string() });
                }
            }
        }
        out.wall_ms = start.elapsed().as_millis() as u64;
        out
    }
}

fn non_empty(s: String) -> String {
    if s.trim().is_empty() {
        NONE.to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatFixture, FixtureFile, MockBackend};
    use crate::domain::labelset_from;

    fn image() -> ImageData {
        ImageData::new(b"fixture image A".to_vec(), "image/png")
    }

    fn runner(mode: ChainMode, chat: Vec<ChatFixture>) -> ChainRunner<MockBackend> {
        let cfg = ChainConfig { mode, ..ChainConfig::default() };
        ChainRunner::new(cfg, MockBackend::new(FixtureFile { chat, ..Default::default() }).unwrap()).unwrap()
    }

    fn d() -> String {
        image().digest().to_string()
    }

    #[test]
    fn caption_action_examples() {
        let r = runner(ChainMode::full(), vec![ChatFixture::respond(&d(), ActionKind::Caption, "a dog chases a ball")]);
        let mut st = ChainState::new("a", "x");
        let (cap, ents) = r.run_caption_action(&image(), &mut st).unwrap();
        assert_eq!(cap, "a dog chases a ball");
        assert_eq!(ents.labels(), ["dog", "ball"]);

        let r = runner(ChainMode::full(), vec![ChatFixture::respond(&d(), ActionKind::Caption, "image")]);
        assert!(r.run_caption_action(&image(), &mut st).unwrap().1.is_empty());
        let r = runner(ChainMode::full(), vec![ChatFixture::respond(&d(), ActionKind::Caption, "")]);
        assert!(r.run_caption_action(&image(), &mut st).unwrap().1.is_empty());
    }

    #[test]
    fn self_correct_examples() {
        let r = runner(
            ChainMode::full(),
            vec![
                ChatFixture::respond(&d(), ActionKind::SelfCorrect, "Yes").with_subject("dog"),
                ChatFixture::respond(&d(), ActionKind::SelfCorrect, "No").with_subject("ball"),
                ChatFixture::respond(&d(), ActionKind::SelfCorrect, "Maybe").with_subject("cat"),
            ],
        );
        let mut st = ChainState::new("a", "x");
        let out = r.run_self_correct(&image(), &labelset_from(["dog", "ball"]), &mut st).unwrap();
        assert_eq!(out.labels(), ["dog"]);
        assert_eq!(st.transcript.len(), 2);
        assert!(st.transcript.iter().all(|i| i.image_attached && i.action == ActionKind::SelfCorrect));

        let before = r.backend().chat_calls();
        assert!(r.run_self_correct(&image(), &LabelSet::new(), &mut st).unwrap().is_empty());
        assert_eq!(r.backend().chat_calls(), before);

        let out = r.run_self_correct(&image(), &labelset_from(["cat"]), &mut st).unwrap();
        assert_eq!(out.labels(), ["cat"]);
        assert_eq!(st.warnings.len(), 1);
    }

    #[test]
    fn appearance_and_relationship_examples() {
        let r = runner(
            ChainMode::full(),
            vec![
                ChatFixture::respond(&d(), ActionKind::Appearance, "dog: brown, running"),
                ChatFixture::respond(&d(), ActionKind::Relationship, "the dog is chasing the ball"),
            ],
        );
        let mut st = ChainState::new("a", "x");
        let notes = r.run_appearance(&image(), &labelset_from(["dog"]), &mut st);
        assert_eq!(notes["dog"], "brown, running");
        assert!(r.run_appearance(&image(), &LabelSet::new(), &mut st).is_empty());
        let rel = r.run_relationship(&image(), &labelset_from(["dog", "ball"]), &notes, &mut st);
        assert_eq!(rel, "the dog is chasing the ball");
        // single entity still gets a call
        r.run_relationship(&image(), &labelset_from(["dog"]), &notes, &mut st);
        assert_eq!(st.transcript.len(), 3);
        assert_eq!(r.run_relationship(&image(), &LabelSet::new(), &notes, &mut st), "");
        assert_eq!(st.transcript.len(), 3);
    }

    #[test]
    fn appearance_failure_is_not_fatal() {
        let r = runner(ChainMode::full(), vec![ChatFixture::fail(&d(), ActionKind::Appearance, "boom")]);
        let mut st = ChainState::new("a", "x");
        assert!(r.run_appearance(&image(), &labelset_from(["dog"]), &mut st).is_empty());
        assert_eq!(st.warnings.len(), 1);
        assert!(st.transcript.is_empty());
    }

    #[test]
    fn final_examples() {
        for (resp, want) in [
            ("dog, ball, grass", vec!["dog", "ball", "grass"]),
            ("1. Dogs\n2. a ball", vec!["dog", "ball"]),
            ("", vec![]),
        ] {
            let r = runner(ChainMode::Actions(vec![5]), vec![ChatFixture::respond(&d(), ActionKind::Final, resp)]);
            let st = r.run_chain("a", &image()).unwrap();
            assert_eq!(st.final_labels.labels(), want.as_slice());
            assert_eq!(st.transcript.len(), 1);
            assert_eq!(st.transcript[0].action, ActionKind::Final);
        }
    }

    #[test]
    fn final_prompt_context() {
        let r = runner(ChainMode::full(), vec![]);
        let mut st = ChainState::new("a", "x");
        st.initial_entities = labelset_from(["dog", "ball"]);
        st.corrected_entities = Some(labelset_from(["dog"]));
        st.appearance_notes.insert("dog".into(), "brown".into());
        st.relationship_notes = "dog sits".into();
        let p = r.final_prompt(&st);
        assert!(p.contains("Entities found so far: dog\n"));
        assert!(p.contains("dog: brown"));
        assert!(p.contains("dog sits"));
        let empty = r.final_prompt(&ChainState::new("a", "x"));
        assert!(empty.contains("Entities found so far: none"));
    }

    #[test]
    fn single_call_modes() {
        let r = runner(
            ChainMode::Merged,
            vec![ChatFixture::respond(&d(), ActionKind::MergedSingle, "x\nLabels: dog, cats")],
        );
        let st = r.run_chain("a", &image()).unwrap();
        assert_eq!(st.final_labels.labels(), ["dog", "cat"]);
        assert_eq!(st.transcript.iter().map(|i| i.action).collect::<Vec<_>>(), [ActionKind::MergedSingle]);

        let r =
            runner(ChainMode::BaselineVqa, vec![ChatFixture::respond(&d(), ActionKind::BaselineVqa, "dog, frisbee")]);
        let st = r.run_chain("a", &image()).unwrap();
        assert_eq!(st.final_labels.labels(), ["dog", "frisbee"]);
        assert_eq!(st.transcript[0].prompt, PromptTemplates::default().baseline_vqa);

        let r = runner(
            ChainMode::BaselineCaption,
            vec![ChatFixture::respond(&d(), ActionKind::BaselineCaption, "a photo of two dogs on a beach")],
        );
        let st = r.run_chain("a", &image()).unwrap();
        assert_eq!(st.final_labels.labels(), ["dog", "beach"]);
        assert_eq!(st.caption.as_deref(), Some("a photo of two dogs on a beach"));
    }

    #[test]
    fn caption_failure_fails_image() {
        let r = runner(ChainMode::full(), vec![ChatFixture::fail(&d(), ActionKind::Caption, "down")]);
        let e = r.run_chain("a", &image()).unwrap_err();
        assert!(matches!(e, ChainError::Action { action: ActionKind::Caption, .. }));
    }
}
