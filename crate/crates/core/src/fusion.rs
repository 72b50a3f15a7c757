//! Model assembly: encApp (scene graph) and encCap (captions) branches,
//! adaptive gate fusion, and the discriminative answer decoder.
//!
//! Eight wirings of the same parts are supported, from single-branch
//! baselines up to the full dual-channel model. Every wiring shares the
//! question/history encoders and the decoder, so ablation comparisons
//! differ only in how the image is represented.

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{self, GatePairParams};
use crate::data::DialogueInstance;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::rng;
use crate::semantic::{self, CaptionAttentionParams};
use crate::tape::{Tape, TensorId};
use crate::text::{self, EmbeddingSources, LstmHandle};
use crate::visual::{self, GraphConvParams, ObjectAttentionParams, RelationAttentionParams};

// ── variants ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelVariant {
    /// question-attended raw object features
    ObjRep,
    /// averaged relation-aware object features
    RelRep,
    /// full appearance branch with relations replaced by one learned vector
    VisNoRel,
    /// full appearance branch
    VisMod,
    /// global caption encoding
    GlCap,
    /// question-attended dense captions
    LoCap,
    /// full caption branch
    SemMod,
    /// both branches fused by the adaptive gate
    DualVd,
}

pub const ALL_VARIANTS: [ModelVariant; 8] = [
    ModelVariant::ObjRep,
    ModelVariant::RelRep,
    ModelVariant::VisNoRel,
    ModelVariant::VisMod,
    ModelVariant::GlCap,
    ModelVariant::LoCap,
    ModelVariant::SemMod,
    ModelVariant::DualVd,
];

impl ModelVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ModelVariant::ObjRep => "ObjRep",
            ModelVariant::RelRep => "RelRep",
            ModelVariant::VisNoRel => "VisNoRel",
            ModelVariant::VisMod => "VisMod",
            ModelVariant::GlCap => "GlCap",
            ModelVariant::LoCap => "LoCap",
            ModelVariant::SemMod => "SemMod",
            ModelVariant::DualVd => "DualVD",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ALL_VARIANTS
            .iter()
            .find(|v| v.name().to_ascii_lowercase() == lower)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = ALL_VARIANTS.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant `{s}`; expected one of {names:?}"))
            })
    }

    pub fn has_visual_branch(&self) -> bool {
        matches!(
            self,
            ModelVariant::ObjRep
                | ModelVariant::RelRep
                | ModelVariant::VisNoRel
                | ModelVariant::VisMod
                | ModelVariant::DualVd
        )
    }

    pub fn has_semantic_branch(&self) -> bool {
        matches!(
            self,
            ModelVariant::GlCap | ModelVariant::LoCap | ModelVariant::SemMod | ModelVariant::DualVd
        )
    }

    fn uses_question_gate(&self) -> bool {
        !matches!(self, ModelVariant::ObjRep | ModelVariant::GlCap)
    }

    fn uses_visual_graph(&self) -> bool {
        matches!(
            self,
            ModelVariant::RelRep | ModelVariant::VisNoRel | ModelVariant::VisMod | ModelVariant::DualVd
        )
    }

    fn uses_object_fusion(&self) -> bool {
        matches!(
            self,
            ModelVariant::VisNoRel | ModelVariant::VisMod | ModelVariant::DualVd
        )
    }

    fn uses_object_attention(&self) -> bool {
        matches!(
            self,
            ModelVariant::ObjRep | ModelVariant::VisNoRel | ModelVariant::VisMod | ModelVariant::DualVd
        )
    }

    fn uses_global_caption(&self) -> bool {
        matches!(
            self,
            ModelVariant::GlCap | ModelVariant::SemMod | ModelVariant::DualVd
        )
    }

    fn uses_dense_captions(&self) -> bool {
        matches!(
            self,
            ModelVariant::LoCap | ModelVariant::SemMod | ModelVariant::DualVd
        )
    }

    fn uses_semantic_attention(&self) -> bool {
        matches!(
            self,
            ModelVariant::LoCap | ModelVariant::SemMod | ModelVariant::DualVd
        )
    }

    fn uses_caption_fusion(&self) -> bool {
        matches!(self, ModelVariant::SemMod | ModelVariant::DualVd)
    }

    fn uses_final_fusion(&self) -> bool {
        matches!(self, ModelVariant::DualVd)
    }
}

// ── dimensions ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelDims {
    pub d_obj: usize,
    pub d_rel: usize,
    pub d_word: usize,
    pub d_hid: usize,
    pub d_att: usize,
    pub d_fuse: usize,
    pub n_objects: usize,
    pub n_dense: usize,
    pub n_cand: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    /// concatenate a second embedding table per token
    pub second_source: bool,
    /// dropout rate on encoder outputs and the fused vector; train only
    pub dropout: f64,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.d_obj,
            self.d_rel,
            self.d_word,
            self.d_hid,
            self.d_att,
            self.d_fuse,
            self.n_objects,
            self.n_dense,
            self.max_len,
        ];
        if positive.iter().any(|v| *v == 0) {
            return Err(Error::Config("all model dimensions must be positive".into()));
        }
        if self.n_cand < 2 {
            return Err(Error::Config("need at least two candidates".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocabulary must hold pad and unk".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn token_dim(&self) -> usize {
        if self.second_source {
            2 * self.d_word
        } else {
            self.d_word
        }
    }

    /// Width of the fused image vector handed to the decoder.
    pub fn s_dim(&self, variant: ModelVariant) -> usize {
        if variant.uses_final_fusion() {
            2 * self.d_fuse
        } else if variant.has_visual_branch() {
            self.d_obj
        } else {
            self.d_hid
        }
    }
}

// ── the model ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Model {
    pub dims: ModelDims,
    pub variant: ModelVariant,
}

struct Bound {
    embed: EmbeddingSources,
    lstm_question: LstmHandle,
    lstm_history: LstmHandle,
    lstm_candidate: LstmHandle,
    lstm_caption: Option<LstmHandle>,
    lstm_dense: Option<LstmHandle>,
    question_gate: Option<GatePairParams>,
    relation_attention: Option<RelationAttentionParams>,
    graph_conv: Option<GraphConvParams>,
    no_edge: Option<TensorId>,
    object_fusion: Option<GatePairParams>,
    object_attention: Option<ObjectAttentionParams>,
    semantic_attention: Option<CaptionAttentionParams>,
    caption_fusion: Option<GatePairParams>,
    visual_proj: Option<(TensorId, TensorId)>,
    semantic_proj: Option<(TensorId, TensorId)>,
    fusion_gate: Option<(TensorId, TensorId)>,
    decoder_w: TensorId,
    decoder_b: TensorId,
}

/// Per-question diagnostic record of every attention map and gate.
#[derive(Debug, Clone, Default, Serialize)]
pub struct GateTrace {
    /// history/question gate over [history, question]
    pub question_gate: Option<Vec<f64>>,
    /// joint softmax over all object pairs, as N rows
    pub relation_attention: Option<Vec<Vec<f64>>>,
    /// per-object neighborhood softmax rows
    pub neighbor_attention: Option<Vec<Vec<f64>>>,
    /// per-object appearance/relation gates
    pub object_gates: Option<Vec<Vec<f64>>>,
    /// question-to-object attention
    pub object_attention: Option<Vec<f64>>,
    /// attention over [global, local...] captions
    pub caption_attention: Option<Vec<f64>>,
    /// global/local caption gate
    pub caption_gate: Option<Vec<f64>>,
    /// final appearance/caption gate over the fused vector
    pub fusion_gate: Option<Vec<f64>>,
}

/// Splits a final gate into (appearance share, caption share).
pub fn gate_fractions(gate: &[f64]) -> (f64, f64) {
    let half = gate.len() / 2;
    let first: f64 = gate[..half].iter().sum::<f64>() / half.max(1) as f64;
    let second: f64 = gate[half..].iter().sum::<f64>() / (gate.len() - half).max(1) as f64;
    let visual = first / (first + second);
    (visual, 1.0 - visual)
}

impl GateTrace {
    pub fn visual_fraction(&self) -> Option<f64> {
        self.fusion_gate.as_ref().map(|g| gate_fractions(g).0)
    }

    pub fn semantic_fraction(&self) -> Option<f64> {
        self.fusion_gate.as_ref().map(|g| gate_fractions(g).1)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub loss: TensorId,
    pub loss_value: f64,
    pub probs: Vec<f64>,
    /// rank of each candidate, 1 = best; ties go to the lower index
    pub ranks: Vec<usize>,
    pub trace: GateTrace,
}

impl ForwardOutput {
    pub fn rank_of_gt(&self, gt_index: usize) -> usize {
        self.ranks[gt_index]
    }
}

/// Descending ranks with ties broken by lower candidate index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0; scores.len()];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = pos + 1;
    }
    ranks
}

impl Model {
    pub fn new(dims: ModelDims, variant: ModelVariant) -> Result<Self> {
        dims.validate()?;
        Ok(Model { dims, variant })
    }

    /// Builds the parameter inventory this wiring needs, nothing more.
    pub fn init_params(&self, seed: u64) -> Result<ModelParams> {
        let d = &self.dims;
        let v = self.variant;
        let mut p = ModelParams::new();
        p.insert(
            "embed.primary",
            text::hashed_embedding(d.vocab_size, d.d_word, seed, "primary"),
        )?;
        if d.second_source {
            p.insert(
                "embed.secondary",
                text::hashed_embedding(d.vocab_size, d.d_word, seed, "secondary"),
            )?;
        }
        let tok = d.token_dim();
        text::insert_lstm_params(&mut p, "lstm.question", tok, d.d_hid, seed)?;
        text::insert_lstm_params(&mut p, "lstm.history", tok, d.d_hid, seed)?;
        text::insert_lstm_params(&mut p, "lstm.candidate", tok, d.d_hid, seed)?;
        if v.uses_global_caption() {
            text::insert_lstm_params(&mut p, "lstm.caption", tok, d.d_hid, seed)?;
        }
        if v.uses_dense_captions() {
            text::insert_lstm_params(&mut p, "lstm.dense", tok, d.d_hid, seed)?;
        }
        if v.uses_question_gate() {
            p.insert_weight("question_gate.w_gate", 2 * d.d_hid, 2 * d.d_hid, seed)?;
            p.insert_zeros("question_gate.b_gate", vec![2 * d.d_hid])?;
            p.insert_weight("question_gate.w_fuse", d.d_hid, 2 * d.d_hid, seed)?;
            p.insert_zeros("question_gate.b_fuse", vec![d.d_hid])?;
        }
        if v.uses_visual_graph() {
            p.insert_weight("relation_attention.w_query", d.d_att, d.d_hid, seed)?;
            p.insert_weight("relation_attention.w_edge", d.d_att, d.d_rel, seed)?;
            p.insert_weight("relation_attention.w_score", 1, d.d_att, seed)?;
            p.insert_zeros("relation_attention.b_score", vec![1])?;
            p.insert_weight("graph_conv.w_pair", d.d_hid, d.d_obj + d.d_rel, seed)?;
            p.insert_weight("graph_conv.w_score", 1, d.d_hid, seed)?;
            p.insert_zeros("graph_conv.b_score", vec![1])?;
        }
        if matches!(v, ModelVariant::VisNoRel) {
            p.insert_vector("visual.no_edge", d.d_rel, seed)?;
        }
        if v.uses_object_fusion() {
            p.insert_weight("object_fusion.w_gate", 2 * d.d_obj, 2 * d.d_obj, seed)?;
            p.insert_zeros("object_fusion.b_gate", vec![2 * d.d_obj])?;
            p.insert_weight("object_fusion.w_fuse", d.d_obj, 2 * d.d_obj, seed)?;
            p.insert_zeros("object_fusion.b_fuse", vec![d.d_obj])?;
        }
        if v.uses_object_attention() {
            p.insert_weight("object_attention.w_key", d.d_hid, d.d_obj, seed)?;
            p.insert_weight("object_attention.w_score", 1, d.d_hid, seed)?;
            p.insert_zeros("object_attention.b_score", vec![1])?;
        }
        if v.uses_semantic_attention() {
            p.insert_weight("semantic_attention.w_query", d.d_att, d.d_hid, seed)?;
            p.insert_zeros("semantic_attention.b_query", vec![d.d_att])?;
            p.insert_weight("semantic_attention.w_key", d.d_att, d.d_hid, seed)?;
            p.insert_zeros("semantic_attention.b_key", vec![d.d_att])?;
        }
        if v.uses_caption_fusion() {
            p.insert_weight("caption_fusion.w_gate", 2 * d.d_hid, 2 * d.d_hid, seed)?;
            p.insert_zeros("caption_fusion.b_gate", vec![2 * d.d_hid])?;
            p.insert_weight("caption_fusion.w_fuse", d.d_hid, 2 * d.d_hid, seed)?;
            p.insert_zeros("caption_fusion.b_fuse", vec![d.d_hid])?;
        }
        if v.uses_final_fusion() {
            p.insert_weight("fusion.visual_proj.w", d.d_fuse, d.d_obj, seed)?;
            p.insert_zeros("fusion.visual_proj.b", vec![d.d_fuse])?;
            p.insert_weight("fusion.semantic_proj.w", d.d_fuse, d.d_hid, seed)?;
            p.insert_zeros("fusion.semantic_proj.b", vec![d.d_fuse])?;
            p.insert_weight("fusion.w_gate", 2 * d.d_fuse, 2 * d.d_fuse, seed)?;
            p.insert_zeros("fusion.b_gate", vec![2 * d.d_fuse])?;
        }
        p.insert_weight(
            "decoder.w_joint",
            d.d_hid,
            d.s_dim(v) + 2 * d.d_hid,
            seed,
        )?;
        p.insert_zeros("decoder.b_joint", vec![d.d_hid])?;
        Ok(p)
    }

    fn bind(&self, tape: &mut Tape, params: &ModelParams) -> Result<Bound> {
        let d = &self.dims;
        let v = self.variant;
        let bind_one = |tape: &mut Tape, name: &str| -> Result<TensorId> {
            tape.param(name, params.get(name)?)
        };
        let primary = bind_one(tape, "embed.primary")?;
        let secondary = if d.second_source {
            Some(bind_one(tape, "embed.secondary")?)
        } else {
            None
        };
        let embed = EmbeddingSources {
            primary,
            secondary,
            vocab_size: d.vocab_size,
            dim: d.d_word,
        };
        let lstm = |tape: &mut Tape, name: &str| -> Result<LstmHandle> {
            Ok(LstmHandle {
                w: tape.param(&format!("{name}.w"), params.get(&format!("{name}.w"))?)?,
                b: tape.param(&format!("{name}.b"), params.get(&format!("{name}.b"))?)?,
                hidden_dim: d.d_hid,
            })
        };
        let lstm_question = lstm(tape, "lstm.question")?;
        let lstm_history = lstm(tape, "lstm.history")?;
        let lstm_candidate = lstm(tape, "lstm.candidate")?;
        let lstm_caption = if v.uses_global_caption() {
            Some(lstm(tape, "lstm.caption")?)
        } else {
            None
        };
        let lstm_dense = if v.uses_dense_captions() {
            Some(lstm(tape, "lstm.dense")?)
        } else {
            None
        };
        let gate_pair = |tape: &mut Tape, prefix: &str| -> Result<GatePairParams> {
            Ok(GatePairParams {
                w_gate: tape.param(&format!("{prefix}.w_gate"), params.get(&format!("{prefix}.w_gate"))?)?,
                b_gate: tape.param(&format!("{prefix}.b_gate"), params.get(&format!("{prefix}.b_gate"))?)?,
                w_fuse: tape.param(&format!("{prefix}.w_fuse"), params.get(&format!("{prefix}.w_fuse"))?)?,
                b_fuse: tape.param(&format!("{prefix}.b_fuse"), params.get(&format!("{prefix}.b_fuse"))?)?,
            })
        };
        let question_gate = if v.uses_question_gate() {
            Some(gate_pair(tape, "question_gate")?)
        } else {
            None
        };
        let relation_attention = if v.uses_visual_graph() {
            Some(RelationAttentionParams {
                w_query: bind_one(tape, "relation_attention.w_query")?,
                w_edge: bind_one(tape, "relation_attention.w_edge")?,
                w_score: bind_one(tape, "relation_attention.w_score")?,
                b_score: bind_one(tape, "relation_attention.b_score")?,
            })
        } else {
            None
        };
        let graph_conv = if v.uses_visual_graph() {
            Some(GraphConvParams {
                w_pair: bind_one(tape, "graph_conv.w_pair")?,
                w_score: bind_one(tape, "graph_conv.w_score")?,
                b_score: bind_one(tape, "graph_conv.b_score")?,
            })
        } else {
            None
        };
        let no_edge = if matches!(v, ModelVariant::VisNoRel) {
            Some(bind_one(tape, "visual.no_edge")?)
        } else {
            None
        };
        let object_fusion = if v.uses_object_fusion() {
            Some(gate_pair(tape, "object_fusion")?)
        } else {
            None
        };
        let object_attention = if v.uses_object_attention() {
            Some(ObjectAttentionParams {
                w_key: bind_one(tape, "object_attention.w_key")?,
                w_score: bind_one(tape, "object_attention.w_score")?,
                b_score: bind_one(tape, "object_attention.b_score")?,
            })
        } else {
            None
        };
        let semantic_attention = if v.uses_semantic_attention() {
            Some(CaptionAttentionParams {
                w_query: bind_one(tape, "semantic_attention.w_query")?,
                b_query: bind_one(tape, "semantic_attention.b_query")?,
                w_key: bind_one(tape, "semantic_attention.w_key")?,
                b_key: bind_one(tape, "semantic_attention.b_key")?,
            })
        } else {
            None
        };
        let caption_fusion = if v.uses_caption_fusion() {
            Some(gate_pair(tape, "caption_fusion")?)
        } else {
            None
        };
        let (visual_proj, semantic_proj, fusion_gate) = if v.uses_final_fusion() {
            (
                Some((
                    bind_one(tape, "fusion.visual_proj.w")?,
                    bind_one(tape, "fusion.visual_proj.b")?,
                )),
                Some((
                    bind_one(tape, "fusion.semantic_proj.w")?,
                    bind_one(tape, "fusion.semantic_proj.b")?,
                )),
                Some((bind_one(tape, "fusion.w_gate")?, bind_one(tape, "fusion.b_gate")?)),
            )
        } else {
            (None, None, None)
        };
        Ok(Bound {
            embed,
            lstm_question,
            lstm_history,
            lstm_candidate,
            lstm_caption,
            lstm_dense,
            question_gate,
            relation_attention,
            graph_conv,
            no_edge,
            object_fusion,
            object_attention,
            semantic_attention,
            caption_fusion,
            visual_proj,
            semantic_proj,
            fusion_gate,
            decoder_w: bind_one(tape, "decoder.w_joint")?,
            decoder_b: bind_one(tape, "decoder.b_joint")?,
        })
    }

    fn maybe_dropout(
        &self,
        tape: &mut Tape,
        x: TensorId,
        rng: &mut Option<&mut ChaCha12Rng>,
    ) -> Result<TensorId> {
        let rate = self.dims.dropout;
        match rng {
            Some(r) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let mask: Vec<f64> = (0..tape.len_of(x))
                    .map(|_| {
                        if rng::unit_f64(r.next_u64()) < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                tape.dropout_masked(x, mask)
            }
            _ => Ok(x),
        }
    }

    fn check_instance(&self, inst: &DialogueInstance) -> Result<()> {
        let d = &self.dims;
        if inst.obj_feats.len() != d.n_objects
            || inst.obj_feats.iter().any(|o| o.len() != d.d_obj)
        {
            return Err(Error::Dimension(format!(
                "instance {} object features disagree with model dims",
                inst.id()
            )));
        }
        if inst.rel_embeds.len() != d.n_objects
            || inst
                .rel_embeds
                .iter()
                .any(|row| row.len() != d.n_objects || row.iter().any(|r| r.len() != d.d_rel))
        {
            return Err(Error::Dimension(format!(
                "instance {} relation grid disagrees with model dims",
                inst.id()
            )));
        }
        if inst.candidates.len() != d.n_cand {
            return Err(Error::Dimension(format!(
                "instance {} has {} candidates, model expects {}",
                inst.id(),
                inst.candidates.len(),
                d.n_cand
            )));
        }
        if self.variant.uses_dense_captions() && inst.dense_captions.len() != d.n_dense {
            return Err(Error::Dimension(format!(
                "instance {} has {} dense captions, model expects {}",
                inst.id(),
                inst.dense_captions.len(),
                d.n_dense
            )));
        }
        if inst.gt_index >= d.n_cand {
            return Err(Error::Dimension(format!(
                "instance {} gt_index out of range",
                inst.id()
            )));
        }
        Ok(())
    }

    fn instance_forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        inst: &DialogueInstance,
        mut rng: Option<&mut ChaCha12Rng>,
    ) -> Result<ForwardOutput> {
        self.check_instance(inst)?;
        let v = self.variant;
        let mut trace = GateTrace::default();

        let q_enc = bound
            .lstm_question
            .encode_tokens(tape, &bound.embed, &inst.question)?;
        let question = self.maybe_dropout(tape, q_enc.state, &mut rng)?;
        let h_enc = bound
            .lstm_history
            .encode_tokens(tape, &bound.embed, &inst.history)?;
        let history = self.maybe_dropout(tape, h_enc.state, &mut rng)?;

        let gated_question = match &bound.question_gate {
            Some(p) => {
                let g = blocks::gate_fuse_project(tape, p, history, question)?;
                trace.question_gate = Some(tape.value(g.gate).to_vec());
                Some(g.fused)
            }
            None => None,
        };

        // appearance branch
        let visual_summary = if v.has_visual_branch() {
            let objects: Vec<TensorId> = inst
                .obj_feats
                .iter()
                .map(|o| tape.constant_vec(o.clone()))
                .collect();
            let summary = if matches!(v, ModelVariant::ObjRep) {
                let oa = bound.object_attention.as_ref().unwrap();
                let att = visual::object_attention(tape, oa, question, &objects, &objects)?;
                trace.object_attention = Some(tape.value(att.gamma).to_vec());
                att.summary
            } else {
                let relations: Vec<Vec<TensorId>> = match bound.no_edge {
                    Some(shared) => {
                        vec![vec![shared; self.dims.n_objects]; self.dims.n_objects]
                    }
                    None => inst
                        .rel_embeds
                        .iter()
                        .map(|row| row.iter().map(|r| tape.constant_vec(r.clone())).collect())
                        .collect(),
                };
                let gq = gated_question.ok_or_else(|| {
                    Error::Config("graph wiring needs the question gate".into())
                })?;
                let ra = bound.relation_attention.as_ref().unwrap();
                let att = visual::relation_attention(tape, ra, gq, &relations)?;
                let n = self.dims.n_objects;
                let alpha = tape.value(att.alpha);
                trace.relation_attention =
                    Some((0..n).map(|i| alpha[i * n..(i + 1) * n].to_vec()).collect());
                let gc = bound.graph_conv.as_ref().unwrap();
                let hood = visual::graph_convolution(tape, gc, gq, &objects, &att.scaled)?;
                trace.neighbor_attention = Some(
                    hood.beta_rows
                        .iter()
                        .map(|b| tape.value(*b).to_vec())
                        .collect(),
                );
                if matches!(v, ModelVariant::RelRep) {
                    tape.mean_of(&hood.mixed)?
                } else {
                    let of = bound.object_fusion.as_ref().unwrap();
                    let fused = visual::object_gate_fusion(tape, of, &objects, &hood.mixed)?;
                    trace.object_gates = Some(
                        fused
                            .iter()
                            .map(|g| tape.value(g.gate).to_vec())
                            .collect(),
                    );
                    let values: Vec<TensorId> = fused.iter().map(|g| g.fused).collect();
                    let oa = bound.object_attention.as_ref().unwrap();
                    let att = visual::object_attention(tape, oa, question, &objects, &values)?;
                    trace.object_attention = Some(tape.value(att.gamma).to_vec());
                    att.summary
                }
            };
            Some(summary)
        } else {
            None
        };

        // caption branch
        let semantic_summary = if v.has_semantic_branch() {
            let global = match &bound.lstm_caption {
                Some(cell) => {
                    let enc = cell.encode_tokens(tape, &bound.embed, &inst.caption)?;
                    Some(self.maybe_dropout(tape, enc.state, &mut rng)?)
                }
                None => None,
            };
            let locals: Option<Vec<TensorId>> = match &bound.lstm_dense {
                Some(cell) => {
                    let mut out = Vec::with_capacity(inst.dense_captions.len());
                    for tokens in &inst.dense_captions {
                        let enc = cell.encode_tokens(tape, &bound.embed, tokens)?;
                        out.push(self.maybe_dropout(tape, enc.state, &mut rng)?);
                    }
                    Some(out)
                }
                None => None,
            };
            let summary = match v {
                ModelVariant::GlCap => global.unwrap(),
                ModelVariant::LoCap => {
                    let sa = bound.semantic_attention.as_ref().unwrap();
                    let gq = gated_question.unwrap();
                    let (delta, combined) =
                        semantic::local_caption_attention(tape, sa, gq, locals.as_ref().unwrap())?;
                    trace.caption_attention = Some(tape.value(delta).to_vec());
                    combined
                }
                _ => {
                    let sa = bound.semantic_attention.as_ref().unwrap();
                    let gq = gated_question.unwrap();
                    let att = semantic::caption_attention(
                        tape,
                        sa,
                        gq,
                        global.unwrap(),
                        locals.as_ref().unwrap(),
                    )?;
                    trace.caption_attention = Some(tape.value(att.delta).to_vec());
                    let cf = bound.caption_fusion.as_ref().unwrap();
                    let fused = blocks::gate_fuse_project(
                        tape,
                        cf,
                        att.global_scaled,
                        att.locals_combined,
                    )?;
                    trace.caption_gate = Some(tape.value(fused.gate).to_vec());
                    fused.fused
                }
            };
            Some(summary)
        } else {
            None
        };

        // fused image vector
        let s = match (visual_summary, semantic_summary) {
            (Some(vis), Some(sem)) => {
                let (vw, vb) = bound.visual_proj.unwrap();
                let (sw, sb) = bound.semantic_proj.unwrap();
                let vis_p = tape.affine(vw, vis, vb)?;
                let sem_p = tape.affine(sw, sem, sb)?;
                let (gw, gb) = bound.fusion_gate.unwrap();
                let gated = blocks::gate_concat(tape, gw, gb, vis_p, sem_p)?;
                trace.fusion_gate = Some(tape.value(gated.gate).to_vec());
                gated.fused
            }
            (Some(vis), None) => vis,
            (None, Some(sem)) => sem,
            (None, None) => unreachable!("every variant keeps at least one branch"),
        };
        let s = self.maybe_dropout(tape, s, &mut rng)?;

        // decoder
        let joint_in = tape.concat_many(&[s, history, question])?;
        let joint = tape.affine(bound.decoder_w, joint_in, bound.decoder_b)?;
        let mut logits = Vec::with_capacity(inst.candidates.len());
        for cand in &inst.candidates {
            let enc = bound
                .lstm_candidate
                .encode_tokens(tape, &bound.embed, cand)?;
            let enc_state = self.maybe_dropout(tape, enc.state, &mut rng)?;
            logits.push(tape.dot(joint, enc_state)?);
        }
        let logits_flat = tape.concat_many(&logits)?;
        let probs_t = tape.softmax(logits_flat)?;
        let gt_prob = tape.index(probs_t, inst.gt_index)?;
        let log_p = tape.log(gt_prob)?;
        let loss = tape.neg(log_p);

        let probs = tape.value(probs_t).to_vec();
        let ranks = rank_descending(&probs);
        Ok(ForwardOutput {
            loss,
            loss_value: tape.scalar(loss),
            probs,
            ranks,
            trace,
        })
    }

    /// Forward pass for one instance on a fresh tape.
    pub fn forward_single(
        &self,
        params: &ModelParams,
        inst: &DialogueInstance,
        rng: Option<&mut ChaCha12Rng>,
    ) -> Result<(Tape, ForwardOutput)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, params)?;
        let out = self.instance_forward(&mut tape, &bound, inst, rng)?;
        Ok((tape, out))
    }

    /// Forward passes for a batch on one shared tape, with the mean loss.
    pub fn forward_batch(
        &self,
        params: &ModelParams,
        batch: &[&DialogueInstance],
        mut rng: Option<&mut ChaCha12Rng>,
    ) -> Result<(Tape, TensorId, Vec<ForwardOutput>)> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, params)?;
        let mut outputs = Vec::with_capacity(batch.len());
        for inst in batch {
            let out = self.instance_forward(&mut tape, &bound, inst, rng.as_deref_mut())?;
            outputs.push(out);
        }
        let losses: Vec<TensorId> = outputs.iter().map(|o| o.loss).collect();
        let stacked = tape.concat_many(&losses)?;
        let mean_loss = tape.mean(stacked);
        Ok((tape, mean_loss, outputs))
    }
}
