//! Dialogue dataset records and their JSON Lines serialization.
//!
//! One line per dialogue. Floats are written in scientific notation with
//! 17 significant digits, which round-trips every f64 exactly, so a
//! generated file is a pure function of its config and seed down to the
//! byte. Per-round instances (question, flattened history, candidates)
//! are assembled from a record on demand.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    /// answerable from object features only
    Visual,
    /// answerable from dense captions only
    Semantic,
    /// answerable through either channel
    Both,
}

impl Modality {
    pub fn name(&self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Semantic => "semantic",
            Modality::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldTensors {
    /// N object feature vectors
    pub obj_feats: Vec<Vec<f64>>,
    /// N x N relation embeddings, indexed [from][to]
    pub rel_embeds: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub question_tokens: Vec<u32>,
    pub candidate_tokens: Vec<Vec<u32>>,
    pub gt_index: usize,
    pub relevance: Vec<f64>,
    #[serde(rename = "modality_tag")]
    pub modality: Modality,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub dialogue_id: u64,
    pub world: WorldTensors,
    pub caption_tokens: Vec<u32>,
    pub dense_caption_tokens: Vec<Vec<u32>>,
    pub rounds: Vec<RoundRecord>,
}

impl DialogueRecord {
    pub fn validate(&self) -> Result<()> {
        let n = self.world.obj_feats.len();
        if n == 0 {
            return Err(Error::Parse("dialogue has no objects".into()));
        }
        if self.world.rel_embeds.len() != n
            || self.world.rel_embeds.iter().any(|row| row.len() != n)
        {
            return Err(Error::Parse("relation grid is not N x N".into()));
        }
        for (i, round) in self.rounds.iter().enumerate() {
            if round.gt_index >= round.candidate_tokens.len() {
                return Err(Error::Parse(format!(
                    "round {i}: gt_index {} outside {} candidates",
                    round.gt_index,
                    round.candidate_tokens.len()
                )));
            }
            if round.relevance.len() != round.candidate_tokens.len() {
                return Err(Error::Parse(format!(
                    "round {i}: relevance length mismatch"
                )));
            }
            if round.relevance.iter().any(|r| *r < 0.0) {
                return Err(Error::Parse(format!("round {i}: negative relevance")));
            }
        }
        Ok(())
    }
}

// serde_json formatter that prints every float with 17 significant digits
struct SciFloats;

impl serde_json::ser::Formatter for SciFloats {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes any value as a single JSON line with exact-round-trip floats.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFloats);
    value.serialize(&mut ser)?;
    String::from_utf8(buf).map_err(|_| Error::Parse("non-utf8 serialization".into()))
}

/// Serializes one record as a single JSON line with exact-round-trip floats.
pub fn record_to_line(record: &DialogueRecord) -> Result<String> {
    to_json_line(record)
}

pub fn save_dialogues(path: &Path, records: &[DialogueRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for record in records {
        writeln!(w, "{}", record_to_line(record)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dialogues(path: &Path) -> Result<Vec<DialogueRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DialogueRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

/// One question with everything the model needs to answer it.
#[derive(Debug, Clone)]
pub struct DialogueInstance {
    pub dialogue_id: u64,
    pub round: usize,
    pub modality: Modality,
    pub obj_feats: Vec<Vec<f64>>,
    pub rel_embeds: Vec<Vec<Vec<f64>>>,
    pub caption: Vec<u32>,
    pub dense_captions: Vec<Vec<u32>>,
    /// caption plus all earlier question/answer pairs, flattened
    pub history: Vec<u32>,
    pub question: Vec<u32>,
    pub candidates: Vec<Vec<u32>>,
    pub gt_index: usize,
    pub relevance: Vec<f64>,
}

impl DialogueInstance {
    pub fn id(&self) -> String {
        format!("{}:{}", self.dialogue_id, self.round)
    }
}

/// Expands a dialogue into per-round instances. The history at round t is
/// the caption followed by the t earlier rounds' questions and ground-truth
/// answers, truncated to `max_len * (t + 1)` tokens.
pub fn instances_from(record: &DialogueRecord, max_len: usize) -> Vec<DialogueInstance> {
    let mut out = Vec::with_capacity(record.rounds.len());
    let mut history: Vec<u32> = text::effective_tokens(&record.caption_tokens).to_vec();
    for (t, round) in record.rounds.iter().enumerate() {
        let mut h = history.clone();
        h.truncate(max_len * (t + 1));
        out.push(DialogueInstance {
            dialogue_id: record.dialogue_id,
            round: t,
            modality: round.modality,
            obj_feats: record.world.obj_feats.clone(),
            rel_embeds: record.world.rel_embeds.clone(),
            caption: record.caption_tokens.clone(),
            dense_captions: record.dense_caption_tokens.clone(),
            history: h,
            question: round.question_tokens.clone(),
            candidates: round.candidate_tokens.clone(),
            gt_index: round.gt_index,
            relevance: round.relevance.clone(),
        });
        history.extend_from_slice(text::effective_tokens(&round.question_tokens));
        history.extend_from_slice(text::effective_tokens(
            &round.candidate_tokens[round.gt_index],
        ));
    }
    out
}

pub fn instances_from_all(records: &[DialogueRecord], max_len: usize) -> Vec<DialogueInstance> {
    records
        .iter()
        .flat_map(|r| instances_from(r, max_len))
        .collect()
}
