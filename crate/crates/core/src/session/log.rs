use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SessionState, Status};
use crate::error::{Error, Result};
use crate::generator::{image_embedding, read_png, render_png, ToyImage};
use crate::prompt::{apply_edit, prompt_embedding, tokenize, EditOp, EditSpec, Prompt, Vocab};
use crate::reward::{empirical_mi, DEFAULT_RIDGE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratings {
    pub alignment: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub feedback: String,
    /// `None` for round 0, the initial generation.
    pub edit: Option<EditSpec>,
    pub clip_score: f64,
    pub image_path: String,
}

/// One persisted session. Image paths are relative to the log's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub id: String,
    pub initial_prompt: String,
    pub rounds: Vec<RoundLog>,
    pub status: Status,
    pub ratings: Option<Ratings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_image_path: Option<String>,
}

impl SessionLog {
    /// Rounds used (index of the final round).
    pub fn terminal_round(&self) -> usize {
        self.rounds.last().map_or(0, |r| r.round)
    }

    pub fn final_score(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.clip_score)
    }

    /// Prompts after each round, rebuilt by replaying the logged edits.
    pub fn replay_prompts(&self, vocab: &Vocab) -> Result<Vec<Prompt>> {
        let mut p = tokenize(&self.initial_prompt, vocab)?;
        let mut out = Vec::with_capacity(self.rounds.len());
        for r in &self.rounds {
            if let Some(spec) = &r.edit {
                p = apply_edit(&p, &spec.resolve(vocab))?;
            }
            out.push(p.clone());
        }
        Ok(out)
    }
}

fn quoted(tokens: &[crate::prompt::Token]) -> String {
    let words: Vec<&str> = tokens.iter().map(|t| t.surface.as_str()).collect();
    format!("\"{}\"", words.join(" "))
}

/// Plain-language description of an edit, as a user might phrase it.
pub(crate) fn feedback_text(edit: &EditOp, before: &Prompt) -> String {
    match edit {
        EditOp::WordSwap { index, tokens } => {
            let old = &before.tokens()[*index..*index + tokens.len()];
            format!("replace {} with {}", quoted(old), quoted(tokens))
        }
        EditOp::AddPhrase { position, tokens } => {
            if *position == before.len() {
                format!("add {}", quoted(tokens))
            } else {
                format!("add {} before \"{}\"", quoted(tokens), before.tokens()[*position].surface)
            }
        }
        EditOp::Reweight { index, scale } => format!(
            "set the weight of \"{}\" to {scale:.2}",
            before.tokens()[*index].surface
        ),
    }
}

/// A log together with the images it points at.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub log: SessionLog,
    pub images: Vec<ToyImage>,
    pub target_image: Option<ToyImage>,
}

impl SessionRecord {
    pub fn from_state(state: &SessionState, target: Option<(&Prompt, &ToyImage)>) -> Self {
        let id = &state.id;
        let mut rounds = Vec::with_capacity(state.history.len());
        let mut images = Vec::with_capacity(state.history.len());
        let mut prompt = state.initial.clone();
        for rec in &state.history {
            let feedback = match &rec.edit {
                None => "initial prompt".to_owned(),
                Some(e) => {
                    let text = feedback_text(e, &prompt);
                    prompt = apply_edit(&prompt, e).expect("history edits were applied once already");
                    text
                }
            };
            rounds.push(RoundLog {
                round: rec.round,
                feedback,
                edit: rec.edit.as_ref().map(EditOp::to_spec),
                clip_score: rec.clip_score,
                image_path: format!("images/{id}_r{:02}.png", rec.round),
            });
            images.push(rec.image.clone());
        }
        Self {
            log: SessionLog {
                id: id.clone(),
                initial_prompt: state.initial.text(),
                rounds,
                status: state.status,
                ratings: None,
                target_prompt: target.map(|(p, _)| p.text()),
                target_image_path: target.map(|_| format!("images/{id}_target.png")),
            },
            images,
            target_image: target.map(|(_, img)| img.clone()),
        }
    }
}

fn log_path(id: &str, dir: &Path) -> Result<PathBuf> {
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        return Err(Error::Config(format!("session id {id:?} is not a plain file name")));
    }
    Ok(dir.join(format!("{id}.json")))
}

/// Writes `<dir>/<id>.json`; refuses to overwrite an existing log.
pub fn save_log(log: &SessionLog, dir: &Path) -> Result<PathBuf> {
    let path = log_path(&log.id, dir)?;
    if path.exists() {
        return Err(Error::Collision {
            id: log.id.clone(),
            dir: dir.to_owned(),
        });
    }
    std::fs::create_dir_all(dir).map_err(|source| Error::WriteError {
        path: dir.to_owned(),
        source,
    })?;
    let mut json = serde_json::to_string_pretty(log).expect("logs always serialize");
    json.push('\n');
    std::fs::write(&path, json).map_err(|source| Error::WriteError {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes the log and its PNGs (under `<dir>/images/`).
pub fn save_session(record: &SessionRecord, dir: &Path) -> Result<PathBuf> {
    let path = log_path(&record.log.id, dir)?;
    if path.exists() {
        return Err(Error::Collision {
            id: record.log.id.clone(),
            dir: dir.to_owned(),
        });
    }
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|source| Error::WriteError {
        path: images_dir.clone(),
        source,
    })?;
    for (round, img) in record.log.rounds.iter().zip(&record.images) {
        render_png(img, &dir.join(&round.image_path))?;
    }
    if let (Some(p), Some(img)) = (&record.log.target_image_path, &record.target_image) {
        render_png(img, &dir.join(p))?;
    }
    save_log(&record.log, dir)
}

pub fn load_log(path: &Path) -> Result<SessionLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse_json(path, &e))
}

/// Loads every `*.json` log directly inside `dir`, sorted by file name.
pub fn load_logs(dir: &Path) -> Result<Vec<SessionLog>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.is_file())
        .collect();
    paths.sort();
    let logs = paths.iter().map(|p| load_log(p)).collect::<Result<Vec<_>>>()?;
    if logs.is_empty() {
        return Err(Error::EmptyInput(format!("no session logs in {}", dir.display())));
    }
    Ok(logs)
}

/// `(prompt embedding, image embedding)` for every round of `log`.
pub fn mi_pairs(log: &SessionLog, dir: &Path, vocab: &Vocab) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let prompts = log.replay_prompts(vocab)?;
    prompts
        .iter()
        .zip(&log.rounds)
        .map(|(p, r)| {
            let img = read_png(&dir.join(&r.image_path))?;
            let pe = prompt_embedding(p)?;
            let ie = image_embedding(&img, pe.len())?;
            Ok((pe, ie))
        })
        .collect()
}

/// Gaussian MI between prompt and image embeddings across all logged rounds.
pub fn mi_report(logs: &[SessionLog], dir: &Path, vocab: &Vocab) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for log in logs {
        for (x, y) in mi_pairs(log, dir, vocab)? {
            xs.push(x);
            ys.push(y);
        }
    }
    empirical_mi(&xs, &ys, DEFAULT_RIDGE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{new_session, step_round, Engine, SessionConfig};

    fn record() -> SessionRecord {
        let e = Engine::default()
            .with_session(SessionConfig {
                refine: false,
                ..SessionConfig::default()
            })
            .unwrap();
        let s = new_session("a tranquil garden", 2, &e).unwrap();
        let add = EditOp::AddPhrase {
            position: 3,
            tokens: e.vocab.tokens(&["with", "blooming", "flowers"]),
        };
        let s = step_round(&s, &add, true, &e).unwrap();
        SessionRecord::from_state(&s, None)
    }

    #[test]
    fn log_shape() {
        let rec = record();
        let v: serde_json::Value = serde_json::to_value(&rec.log).unwrap();
        assert_eq!(v["initial_prompt"], "a tranquil garden");
        assert_eq!(v["status"], "accepted_by_threshold");
        assert!(v["ratings"].is_null());
        assert!(v["rounds"][0]["edit"].is_null());
        assert_eq!(v["rounds"][1]["edit"]["type"], "add_phrase");
        assert_eq!(v["rounds"][1]["feedback"], "add \"with blooming flowers\"");
        assert!(v.get("target_prompt").is_none());
    }

    #[test]
    fn save_load_round_trip_and_collision() {
        let dir = tempfile::tempdir().unwrap();
        let rec = record();
        let path = save_session(&rec, dir.path()).unwrap();
        assert_eq!(load_log(&path).unwrap(), rec.log);
        assert!(dir.path().join(&rec.log.rounds[1].image_path).exists());
        assert!(matches!(save_session(&rec, dir.path()), Err(Error::Collision { .. })));
        assert!(matches!(save_log(&rec.log, dir.path()), Err(Error::Collision { .. })));
    }

    #[test]
    fn missing_field_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"id": "x", "initial_prompt": "a", "rounds": [{"round": 0, "feedback": "", "edit": null, "image_path": "p"}], "status": "active", "ratings": null}"#,
        )
        .unwrap();
        match load_log(&path) {
            Err(Error::Parse { message, line, .. }) => {
                assert!(message.contains("clip_score"), "{message}");
                assert_eq!(line, 1);
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn replay_reconstructs_prompts() {
        let rec = record();
        let prompts = rec.log.replay_prompts(&crate::prompt::Vocab::default()).unwrap();
        assert_eq!(prompts[1].text(), "a tranquil garden with blooming flowers");
    }
}
