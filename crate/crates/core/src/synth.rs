//! Synthetic dialogue worlds with controlled modality separation.
//!
//! Each dialogue describes a row of objects with three attribute families:
//! colors live only in the object feature vectors, materials live only in
//! caption text, and adjacency relations appear in both the relation
//! embeddings and the dense captions. Questions are templated per family,
//! so answering a color question requires the appearance channel,
//! answering a material question requires the caption channel, and
//! relation questions can be solved through either. Anchors are kept
//! disjoint per modality: material questions target captioned objects
//! while color questions target objects no caption mentions, so exactly
//! one channel has a match for any single-modality question. A small rule
//! interpreter re-derives answers from restricted views of a record,
//! which is what the tests lean on.

use rand_chacha::ChaCha12Rng;

use crate::data::{DialogueRecord, Modality, RoundRecord, WorldTensors};
use crate::error::{Error, Result};
use crate::rng;
use crate::text::Vocab;

const TEMPLATE_WORDS: [&str; 11] = [
    "what", "color", "is", "the", "material", "which", "thing", "a", "and", "made", "of",
];
pub const RELATIONS: [&str; 2] = ["left_of", "right_of"];
pub const TYPES: [&str; 20] = [
    "ball", "cube", "lamp", "chair", "book", "vase", "clock", "plant", "mug", "drum", "kite",
    "bell", "fan", "stool", "box", "jar", "boot", "cap", "tray", "harp",
];
pub const COLORS: [&str; 20] = [
    "red", "blue", "green", "yellow", "purple", "orange", "black", "white", "pink", "brown",
    "gray", "teal", "cyan", "magenta", "lime", "navy", "gold", "silver", "maroon", "olive",
];
pub const MATERIALS: [&str; 20] = [
    "wood", "metal", "glass", "cloth", "stone", "paper", "clay", "rubber", "leather", "plastic",
    "wool", "steel", "brass", "copper", "marble", "velvet", "bamboo", "ivory", "bronze", "cork",
];

/// Pairwise relation classes on the object row.
const REL_KINDS: [&str; 5] = ["self", "left_of", "right_of", "near", "far"];

const ATTR_SCALE: f64 = 0.8;
const NOISE_SCALE: f64 = 0.05;
/// relevance granted to the one plausible-but-wrong candidate
pub const RELATED_RELEVANCE: f64 = 0.3;

/// Word `i` of an attribute family: the curated words, then numbered
/// fillers for configurations that outgrow them.
fn family_word(base: &[&str], prefix: &str, i: usize) -> String {
    match base.get(i) {
        Some(w) => (*w).to_string(),
        None => format!("{prefix}{i}"),
    }
}

fn family_words(base: &[&str], prefix: &str, pool: usize) -> Vec<String> {
    (0..pool).map(|i| family_word(base, prefix, i)).collect()
}

fn type_word(i: usize) -> String {
    family_word(&TYPES, "thing", i)
}

/// Vocabulary over every template word plus `pool` words per attribute
/// family (at least the twelve curated ones).
pub fn build_vocab(pool: usize) -> Vocab {
    let pool = pool.max(TYPES.len());
    let mut words: Vec<String> = TEMPLATE_WORDS
        .iter()
        .chain(RELATIONS.iter())
        .map(|s| s.to_string())
        .collect();
    words.extend(family_words(&TYPES, "thing", pool));
    words.extend(family_words(&COLORS, "color", pool));
    words.extend(family_words(&MATERIALS, "material", pool));
    Vocab::new(words).expect("word lists are disjoint")
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub rounds: usize,
    pub n_objects: usize,
    pub n_dense: usize,
    pub n_cand: usize,
    pub d_obj: usize,
    pub d_rel: usize,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.rounds == 0 {
            return Err(Error::Config("need at least one dialogue and round".into()));
        }
        if self.n_objects < 3 || self.n_objects > 64 {
            return Err(Error::Config("n_objects must lie in [3, 64]".into()));
        }
        if self.n_dense < 2 {
            return Err(Error::Config(
                "need at least one material and one relation caption".into(),
            ));
        }
        if self.material_captions().max(2) + 1 > self.n_objects {
            return Err(Error::Config(
                "captions would cover every object, leaving no color anchors".into(),
            ));
        }
        if self.n_cand < 2 || self.n_cand > 256 {
            return Err(Error::Config("n_cand must lie in [2, 256]".into()));
        }
        if self.d_obj == 0 || self.d_rel == 0 {
            return Err(Error::Config("feature widths must be positive".into()));
        }
        Ok(())
    }

    fn material_captions(&self) -> usize {
        self.n_dense - 1
    }

    /// Types are drawn distinct per world, so the pool must cover the
    /// object count; candidate lists must seat n_cand distinct words.
    pub fn word_pool(&self) -> usize {
        self.n_cand.max(self.n_objects).max(TYPES.len())
    }

    pub fn vocab(&self) -> Vocab {
        build_vocab(self.word_pool())
    }

    /// Type values existing in this configuration's worlds.
    fn type_pool(&self) -> usize {
        self.n_objects.max(TYPES.len())
    }
}

// ── deterministic sampling helpers ───────────────────────────────────

fn pick(rng: &mut ChaCha12Rng, n: usize) -> usize {
    use rand_chacha::rand_core::RngCore;
    (rng.next_u64() % n as u64) as usize
}

pub(crate) fn shuffle<T>(rng: &mut ChaCha12Rng, xs: &mut [T]) {
    for i in (1..xs.len()).rev() {
        let j = pick(rng, i + 1);
        xs.swap(i, j);
    }
}

fn sample_distinct(rng: &mut ChaCha12Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = i + pick(rng, n - i);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

fn noise(rng: &mut ChaCha12Rng) -> f64 {
    use rand_chacha::rand_core::RngCore;
    (2.0 * rng::unit_f64(rng.next_u64()) - 1.0) * NOISE_SCALE
}

/// Direction vector for one attribute value, a pure function of the
/// dataset seed and the label.
fn attr_basis(seed: u64, label: &str, dim: usize) -> Vec<f64> {
    let base = rng::derive_seed(seed, label);
    (0..dim)
        .map(|i| rng::hashed_uniform(base, i as u64, ATTR_SCALE))
        .collect()
}

fn type_basis(seed: u64, t: usize, dim: usize) -> Vec<f64> {
    attr_basis(seed, &format!("feat/type/{}", type_word(t)), dim)
}

fn color_basis(seed: u64, c: usize, dim: usize) -> Vec<f64> {
    attr_basis(seed, &format!("feat/color/{}", COLORS[c]), dim)
}

fn rel_basis(seed: u64, kind: usize, dim: usize) -> Vec<f64> {
    attr_basis(seed, &format!("rel/{}", REL_KINDS[kind]), dim)
}

// ── the world ────────────────────────────────────────────────────────

/// Ground truth for one dialogue: a row of objects with distinct types.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    /// index into [`TYPES`] per object
    pub types: Vec<usize>,
    /// index into [`COLORS`] per object
    pub colors: Vec<usize>,
    /// index into [`MATERIALS`] per object
    pub materials: Vec<usize>,
    /// slot on the row per object
    pub positions: Vec<usize>,
}

impl SynthWorld {
    fn sample(rng: &mut ChaCha12Rng, n: usize, type_pool: usize) -> Self {
        let types = sample_distinct(rng, type_pool, n);
        let colors = (0..n).map(|_| pick(rng, COLORS.len())).collect();
        let materials = (0..n).map(|_| pick(rng, MATERIALS.len())).collect();
        let mut positions: Vec<usize> = (0..n).collect();
        shuffle(rng, &mut positions);
        SynthWorld {
            types,
            colors,
            materials,
            positions,
        }
    }

    /// object sitting at each row slot
    fn slot_to_object(&self) -> Vec<usize> {
        let mut slots = vec![0; self.positions.len()];
        for (obj, &p) in self.positions.iter().enumerate() {
            slots[p] = obj;
        }
        slots
    }

    /// relation class index of the directed pair (i -> j)
    fn rel_kind(&self, i: usize, j: usize) -> usize {
        if i == j {
            return 0; // self
        }
        let (pi, pj) = (self.positions[i], self.positions[j]);
        if pi + 1 == pj {
            1 // i sits immediately left of j
        } else if pj + 1 == pi {
            2
        } else if pi.abs_diff(pj) == 2 {
            3
        } else {
            4
        }
    }
}

// ── question parsing and restricted-view answering ───────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedQuestion {
    /// "what color is the T"
    Color { anchor: u32 },
    /// "what material is the T"
    Material { anchor: u32 },
    /// "which thing is R the T"
    Relation { rel: u32, anchor: u32 },
}

pub fn parse_question(vocab: &Vocab, tokens: &[u32]) -> Option<ParsedQuestion> {
    let id = |w: &str| vocab.id(w);
    match tokens {
        [a, b, c, d, t]
            if *a == id("what") && *b == id("color") && *c == id("is") && *d == id("the") =>
        {
            Some(ParsedQuestion::Color { anchor: *t })
        }
        [a, b, c, d, t]
            if *a == id("what") && *b == id("material") && *c == id("is") && *d == id("the") =>
        {
            Some(ParsedQuestion::Material { anchor: *t })
        }
        [a, b, c, r, d, t]
            if *a == id("which")
                && *b == id("thing")
                && *c == id("is")
                && *d == id("the")
                && (*r == id(RELATIONS[0]) || *r == id(RELATIONS[1])) =>
        {
            Some(ParsedQuestion::Relation {
                rel: *r,
                anchor: *t,
            })
        }
        _ => None,
    }
}

/// Answers a question from the caption text alone. Material facts come
/// from "a M T" phrases and "the T made of M" captions; relation facts
/// from "the A left_of the B" captions, readable in both directions.
/// Color questions are unanswerable from text and return None.
pub fn caption_answer(vocab: &Vocab, record: &DialogueRecord, q: &ParsedQuestion) -> Option<u32> {
    let id = |w: &str| vocab.id(w);
    match q {
        ParsedQuestion::Color { .. } => None,
        ParsedQuestion::Material { anchor } => {
            let g = &record.caption_tokens;
            for i in 0..g.len() {
                if g[i] == id("a") && i + 2 < g.len() && g[i + 2] == *anchor {
                    return Some(g[i + 1]);
                }
            }
            for cap in &record.dense_caption_tokens {
                if let [t0, ty, m0, o0, mat] = cap.as_slice() {
                    if *t0 == id("the") && *m0 == id("made") && *o0 == id("of") && ty == anchor {
                        return Some(*mat);
                    }
                }
            }
            None
        }
        ParsedQuestion::Relation { rel, anchor } => {
            // normalized facts: (left object, right object) of adjacent pairs
            let mut facts = Vec::new();
            for cap in &record.dense_caption_tokens {
                if let [t0, a, r, t1, b] = cap.as_slice() {
                    if *t0 == id("the") && *t1 == id("the") {
                        if *r == id("left_of") {
                            facts.push((*a, *b));
                        } else if *r == id("right_of") {
                            facts.push((*b, *a));
                        }
                    }
                }
            }
            if *rel == id("left_of") {
                facts.iter().find(|(_, b)| b == anchor).map(|(a, _)| *a)
            } else {
                facts.iter().find(|(a, _)| a == anchor).map(|(_, b)| *b)
            }
        }
    }
}

fn argmax_dot(x: &[f64], bases: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, b) in bases.iter().enumerate() {
        let v: f64 = x.iter().zip(b).map(|(a, c)| a * c).sum();
        if v > best_v {
            best_v = v;
            best = k;
        }
    }
    best
}

fn argmin_dist(x: &[f64], bases: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (k, b) in bases.iter().enumerate() {
        let v: f64 = x.iter().zip(b).map(|(a, c)| (a - c) * (a - c)).sum();
        if v < best_v {
            best_v = v;
            best = k;
        }
    }
    best
}

/// Answers a question from the feature tensors alone, by decoding each
/// object against the attribute direction vectors. Material questions
/// are unanswerable from features and return None.
pub fn feature_answer(
    vocab: &Vocab,
    seed: u64,
    record: &DialogueRecord,
    q: &ParsedQuestion,
) -> Option<u32> {
    let d_obj = record.world.obj_feats.first()?.len();
    let type_pool = record.world.obj_feats.len().max(TYPES.len());
    let type_bases: Vec<Vec<f64>> = (0..type_pool).map(|t| type_basis(seed, t, d_obj)).collect();
    let decoded_types: Vec<usize> = record
        .world
        .obj_feats
        .iter()
        .map(|f| argmax_dot(f, &type_bases))
        .collect();
    let find_obj = |anchor: u32| -> Option<usize> {
        decoded_types
            .iter()
            .position(|t| vocab.id(&type_word(*t)) == anchor)
    };
    match q {
        ParsedQuestion::Material { .. } => None,
        ParsedQuestion::Color { anchor } => {
            let obj = find_obj(*anchor)?;
            let color_bases: Vec<Vec<f64>> =
                (0..COLORS.len()).map(|c| color_basis(seed, c, d_obj)).collect();
            let c = argmax_dot(&record.world.obj_feats[obj], &color_bases);
            Some(vocab.id(COLORS[c]))
        }
        ParsedQuestion::Relation { rel, anchor } => {
            let j = find_obj(*anchor)?;
            let d_rel = record.world.rel_embeds[0][0].len();
            let rel_bases: Vec<Vec<f64>> =
                (0..REL_KINDS.len()).map(|k| rel_basis(seed, k, d_rel)).collect();
            let want = if *rel == vocab.id("left_of") { 1 } else { 2 };
            for i in 0..record.world.rel_embeds.len() {
                if i == j {
                    continue;
                }
                let kind = argmin_dist(&record.world.rel_embeds[i][j], &rel_bases);
                if kind == want {
                    return Some(vocab.id(&type_word(decoded_types[i])));
                }
            }
            None
        }
    }
}

// ── generation ───────────────────────────────────────────────────────

struct QuestionDraft {
    tokens: Vec<u32>,
    answer: u32,
    related: Option<u32>,
    /// same-family values drawn from this dialogue's world, seated as
    /// distractors before any random ones so candidate lists stay
    /// confusable and a per-dialogue answer bias cannot rank them
    priority: Vec<u32>,
    modality: Modality,
}

/// Per-dialogue anchor schedules. Visual questions walk a shuffled cycle
/// over the caption-free objects and semantic questions over the
/// captioned ones, so no anchor repeats until its cycle is exhausted and
/// earlier answers in the history never give the current one away.
struct AnchorPlan {
    visual: Vec<usize>,
    semantic: Vec<usize>,
}

impl AnchorPlan {
    fn sample(rng: &mut ChaCha12Rng, n_objects: usize, captioned: &[usize]) -> Self {
        let mut visual: Vec<usize> = (0..n_objects)
            .filter(|o| !captioned.contains(o))
            .collect();
        shuffle(rng, &mut visual);
        let mut semantic: Vec<usize> = captioned.to_vec();
        shuffle(rng, &mut semantic);
        AnchorPlan { visual, semantic }
    }
}

fn draw_question(
    cfg: &DatasetConfig,
    vocab: &Vocab,
    world: &SynthWorld,
    rel_pairs: &[(usize, usize)],
    plan: &AnchorPlan,
    round: usize,
    rng: &mut ChaCha12Rng,
) -> QuestionDraft {
    let id = |w: &str| vocab.id(w);
    let tw = |obj: usize| id(&type_word(world.types[obj]));
    let slots = world.slot_to_object();
    match round % 3 {
        0 => {
            let obj = plan.visual[(round / 3) % plan.visual.len()];
            let tokens = vec![id("what"), id("color"), id("is"), id("the"), tw(obj)];
            // the neighbor's color is the plausible confusion
            let p = world.positions[obj];
            let neighbor = if p + 1 < cfg.n_objects {
                Some(slots[p + 1])
            } else {
                p.checked_sub(1).map(|q| slots[q])
            };
            let priority = (0..cfg.n_objects)
                .filter(|o| *o != obj)
                .map(|o| id(COLORS[world.colors[o]]))
                .collect();
            QuestionDraft {
                tokens,
                answer: id(COLORS[world.colors[obj]]),
                related: neighbor.map(|o| id(COLORS[world.colors[o]])),
                priority,
                modality: Modality::Visual,
            }
        }
        1 => {
            let obj = plan.semantic[(round / 3) % plan.semantic.len()];
            let tokens = vec![
                id("what"),
                id("material"),
                id("is"),
                id("the"),
                tw(obj),
            ];
            let others: Vec<usize> = plan
                .semantic
                .iter()
                .copied()
                .filter(|o| *o != obj)
                .collect();
            let related = if others.is_empty() {
                None
            } else {
                Some(id(MATERIALS[world.materials[others[pick(rng, others.len())]]]))
            };
            let priority = (0..cfg.covered_materials())
                .filter(|o| *o != obj)
                .map(|o| id(MATERIALS[world.materials[o]]))
                .collect();
            QuestionDraft {
                tokens,
                answer: id(MATERIALS[world.materials[obj]]),
                related,
                priority,
                modality: Modality::Semantic,
            }
        }
        _ => {
            let &(left, right) = &rel_pairs[pick(rng, rel_pairs.len())];
            let ask_left = pick(rng, 2) == 0;
            let (rel, anchor, answer) = if ask_left {
                ("left_of", right, left)
            } else {
                ("right_of", left, right)
            };
            let tokens = vec![
                id("which"),
                id("thing"),
                id("is"),
                id(rel),
                id("the"),
                tw(anchor),
            ];
            // the object on the far side of the anchor
            let p = world.positions[anchor];
            let related = if ask_left {
                if p + 1 < cfg.n_objects {
                    Some(slots[p + 1])
                } else {
                    None
                }
            } else {
                p.checked_sub(1).map(|q| slots[q])
            };
            let priority = (0..cfg.n_objects)
                .filter(|o| *o != answer)
                .map(tw)
                .collect();
            QuestionDraft {
                tokens,
                answer: tw(answer),
                related: related.map(tw),
                priority,
                modality: Modality::Both,
            }
        }
    }
}

fn build_candidates(
    rng: &mut ChaCha12Rng,
    vocab: &Vocab,
    pool: &[String],
    draft: &QuestionDraft,
    n_cand: usize,
) -> (Vec<Vec<u32>>, usize, Vec<f64>) {
    let mut ids: Vec<u32> = vec![draft.answer];
    for w in &draft.priority {
        if ids.len() < n_cand && !ids.contains(w) {
            ids.push(*w);
        }
    }
    let distractor_ids: Vec<u32> = pool
        .iter()
        .map(|w| vocab.id(w))
        .filter(|w| !ids.contains(w))
        .collect();
    let chosen = sample_distinct(rng, distractor_ids.len(), n_cand - ids.len());
    ids.extend(chosen.iter().map(|i| distractor_ids[*i]));
    shuffle(rng, &mut ids);
    let gt_index = ids.iter().position(|w| *w == draft.answer).unwrap();
    let mut relevance = vec![0.0; n_cand];
    relevance[gt_index] = 1.0;
    if let Some(related) = draft.related {
        if related != draft.answer {
            if let Some(pos) = ids.iter().position(|w| *w == related) {
                relevance[pos] = RELATED_RELEVANCE;
            }
        }
    }
    let candidates = ids.iter().map(|w| vec![*w]).collect();
    (candidates, gt_index, relevance)
}

pub fn generate_dialogue(cfg: &DatasetConfig, vocab: &Vocab, dialogue_id: u64) -> DialogueRecord {
    let mut rng = rng::stream(cfg.seed, &format!("dialogue/{dialogue_id}"));
    let world = SynthWorld::sample(&mut rng, cfg.n_objects, cfg.type_pool());
    let id = |w: &str| vocab.id(w);

    let obj_feats: Vec<Vec<f64>> = (0..cfg.n_objects)
        .map(|i| {
            let t = type_basis(cfg.seed, world.types[i], cfg.d_obj);
            let c = color_basis(cfg.seed, world.colors[i], cfg.d_obj);
            t.iter()
                .zip(&c)
                .map(|(a, b)| a + b + noise(&mut rng))
                .collect()
        })
        .collect();
    let rel_embeds: Vec<Vec<Vec<f64>>> = (0..cfg.n_objects)
        .map(|i| {
            (0..cfg.n_objects)
                .map(|j| {
                    let b = rel_basis(cfg.seed, world.rel_kind(i, j), cfg.d_rel);
                    b.iter().map(|v| v + noise(&mut rng)).collect()
                })
                .collect()
        })
        .collect();

    // "a M0 T0 and a M1 T1": materials of the first two objects
    let caption_tokens = vec![
        id("a"),
        id(MATERIALS[world.materials[0]]),
        id(&type_word(world.types[0])),
        id("and"),
        id("a"),
        id(MATERIALS[world.materials[1]]),
        id(&type_word(world.types[1])),
    ];

    let mut dense_caption_tokens = Vec::with_capacity(cfg.n_dense);
    for obj in 2..cfg.covered_materials() {
        dense_caption_tokens.push(vec![
            id("the"),
            id(&type_word(world.types[obj])),
            id("made"),
            id("of"),
            id(MATERIALS[world.materials[obj]]),
        ]);
    }
    let slots = world.slot_to_object();
    let pair_slots = sample_distinct(&mut rng, cfg.n_objects - 1, cfg.relation_captions());
    let mut rel_pairs = Vec::with_capacity(pair_slots.len());
    for p in pair_slots {
        let (left, right) = (slots[p], slots[p + 1]);
        rel_pairs.push((left, right));
        if pick(&mut rng, 2) == 0 {
            dense_caption_tokens.push(vec![
                id("the"),
                id(&type_word(world.types[left])),
                id("left_of"),
                id("the"),
                id(&type_word(world.types[right])),
            ]);
        } else {
            dense_caption_tokens.push(vec![
                id("the"),
                id(&type_word(world.types[right])),
                id("right_of"),
                id("the"),
                id(&type_word(world.types[left])),
            ]);
        }
    }

    let pool = cfg.word_pool();
    let pools = (
        family_words(&COLORS, "color", pool),
        family_words(&MATERIALS, "material", pool),
        family_words(&TYPES, "thing", pool),
    );
    let plan = AnchorPlan::sample(&mut rng, cfg);
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let draft = draw_question(cfg, vocab, &world, &rel_pairs, &plan, round, &mut rng);
        let pool = match draft.modality {
            Modality::Visual => &pools.0,
            Modality::Semantic => &pools.1,
            Modality::Both => &pools.2,
        };
        let (candidate_tokens, gt_index, relevance) =
            build_candidates(&mut rng, vocab, pool, &draft, cfg.n_cand);
        rounds.push(RoundRecord {
            question_tokens: draft.tokens,
            candidate_tokens,
            gt_index,
            relevance,
            modality: draft.modality,
        });
    }

    DialogueRecord {
        dialogue_id,
        world: WorldTensors {
            obj_feats,
            rel_embeds,
        },
        caption_tokens,
        dense_caption_tokens,
        rounds,
    }
}

/// Generates the train and validation splits. Dialogues draw from
/// disjoint per-id streams, so the two splits never share a world.
pub fn generate_split(cfg: &DatasetConfig) -> Result<(Vec<DialogueRecord>, Vec<DialogueRecord>)> {
    use rayon::prelude::*;
    cfg.validate()?;
    let vocab = cfg.vocab();
    let total = cfg.n_train + cfg.n_val;
    let mut all: Vec<DialogueRecord> = (0..total as u64)
        .into_par_iter()
        .map(|d| generate_dialogue(cfg, &vocab, d))
        .collect();
    let val = all.split_off(cfg.n_train);
    Ok((all, val))
}
