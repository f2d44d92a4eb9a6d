//! Episode screening: structural rules, then setting compatibility, then six
//! yes/no consistency questions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{AgentBackend, BackendError};
use crate::model::{render_transcript, validate_episode, Episode, ItemId, ModalityItem, Violation};
use crate::prompts::{capitalize, consistency_questions, ordinal_word, PromptId, Vars};

use super::scenario::check_pair_alignment;

/// Structural rules only; no backend involved.
pub fn structural_filter(episode: &Episode) -> Vec<Violation> {
    validate_episode(episode)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub structural: Vec<String>,
    /// Per-session setting compatibility, every session checked; empty if
    /// structure already failed.
    pub aligned: Vec<bool>,
    /// Answers to the consistency questions, in order; empty if skipped.
    pub consistency: Vec<bool>,
    pub passed: bool,
}

impl FilterReport {
    /// First reason for rejection, if any.
    pub fn reason(&self) -> Option<String> {
        if let Some(v) = self.structural.first() {
            return Some(v.clone());
        }
        if let Some(s) = self.aligned.iter().position(|ok| !ok) {
            return Some(format!("PAIR_MISALIGNED@session{s}"));
        }
        self.consistency.iter().position(|ok| !ok).map(|q| format!("CONSISTENCY_Q{}", q + 1))
    }
}

/// The whole episode as judge material.
pub fn episode_material(episode: &Episode, items: &BTreeMap<ItemId, ModalityItem>) -> Result<String, BackendError> {
    let names = episode.speakers.iter().map(|s| (s.id.clone(), s.name.clone())).collect();
    let mut sessions = String::new();
    for s in &episode.sessions {
        sessions.push_str(&format!("* {} session:\n{}\n", capitalize(&ordinal_word(s.index)), render_transcript(s, &names, items)));
    }
    let mut vars = Vars::new();
    vars.insert("SESSIONS".into(), sessions);
    Ok(PromptId::EpisodeValidation.render(&vars)?)
}

/// Runs every stage, stopping at the first failing one.
pub fn screen_episode(
    episode: &Episode,
    items: &BTreeMap<ItemId, ModalityItem>,
    judge: &dyn AgentBackend,
) -> Result<FilterReport, BackendError> {
    let mut report = FilterReport {
        structural: structural_filter(episode).iter().map(ToString::to_string).collect(),
        aligned: Vec::new(),
        consistency: Vec::new(),
        passed: false,
    };
    if !report.structural.is_empty() {
        return Ok(report);
    }
    for s in &episode.sessions {
        let pair = [items.get(&s.modality_slots[0]), items.get(&s.modality_slots[1])];
        let ok = match pair {
            [Some(a), Some(b)] => check_pair_alignment(a, b, judge)?,
            _ => false,
        };
        report.aligned.push(ok);
    }
    if report.aligned.contains(&false) {
        return Ok(report);
    }
    let material = episode_material(episode, items)?;
    for question in consistency_questions() {
        let yes = judge.judge_yes_no(question, &material)?;
        report.consistency.push(yes);
        if !yes {
            return Ok(report);
        }
    }
    report.passed = true;
    Ok(report)
}
