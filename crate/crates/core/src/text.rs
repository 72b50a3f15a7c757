//! Token vocabulary, hashed embeddings, and LSTM sequence encoders.
//!
//! Sentences arrive as fixed-length id sequences padded with id 0; an
//! encoder reads up to the last non-pad token and returns the final
//! hidden state, so appending padding can never change an encoding.
//! Embeddings may draw from two tables at once (concatenated per token)
//! to mimic stacking two pretrained word-vector sources; the second
//! table can be toggled off.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng;
use crate::tape::{Tape, TensorId};
use crate::tensor::RawTensor;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_WORD: &str = "<pad>";
pub const UNK_WORD: &str = "<unk>";

// ── vocabulary ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary with `<pad>` at 0 and `<unk>` at 1, then the
    /// given words in order. Duplicates are rejected.
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab {
            words: Vec::new(),
            index: BTreeMap::new(),
        };
        v.push(PAD_WORD)?;
        v.push(UNK_WORD)?;
        for w in words {
            v.push(w.as_ref())?;
        }
        Ok(v)
    }

    fn push(&mut self, word: &str) -> Result<u32> {
        if self.index.contains_key(word) {
            return Err(Error::Vocabulary(format!("duplicate word `{word}`")));
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        Ok(id)
    }

    /// Id of a word, falling back to `<unk>`.
    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: u32) -> Result<&str> {
        self.words
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Vocabulary(format!("id {id} out of range")))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn encode(&self, sentence: &[&str]) -> Vec<u32> {
        sentence.iter().map(|w| self.id(w)).collect()
    }

    /// Serializes as a JSON object mapping word to id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.index)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let index: BTreeMap<String, u32> = serde_json::from_str(&text)?;
        let mut words = vec![String::new(); index.len()];
        for (w, id) in &index {
            let slot = words
                .get_mut(*id as usize)
                .ok_or_else(|| Error::Vocabulary(format!("id {id} not contiguous")))?;
            if !slot.is_empty() {
                return Err(Error::Vocabulary(format!("id {id} assigned twice")));
            }
            *slot = w.clone();
        }
        if words.first().map(String::as_str) != Some(PAD_WORD)
            || words.get(1).map(String::as_str) != Some(UNK_WORD)
        {
            return Err(Error::Vocabulary("vocabulary must reserve ids 0/1".into()));
        }
        Ok(Vocab { words, index })
    }
}

/// Pads or truncates a token sequence to exactly `len`.
pub fn pad_to(tokens: &[u32], len: usize) -> Vec<u32> {
    let mut out: Vec<u32> = tokens.iter().copied().take(len).collect();
    out.resize(len, PAD_ID);
    out
}

/// The prefix up to the last non-pad token.
pub fn effective_tokens(tokens: &[u32]) -> &[u32] {
    match tokens.iter().rposition(|t| *t != PAD_ID) {
        Some(last) => &tokens[..=last],
        None => &[],
    }
}

// ── embeddings ───────────────────────────────────────────────────────

/// Embedding table whose every cell is a pure function of
/// (label, seed, row, column): uniform in ±sqrt(3 / dim), with row 0
/// (the pad row) pinned to zero.
pub fn hashed_embedding(vocab_size: usize, dim: usize, seed: u64, label: &str) -> RawTensor {
    let base = rng::derive_seed(seed, &format!("embed/{label}"));
    let bound = (3.0 / dim as f64).sqrt();
    let mut data = vec![0.0; vocab_size * dim];
    for row in 1..vocab_size {
        for col in 0..dim {
            data[row * dim + col] = rng::hashed_uniform(base, (row * dim + col) as u64, bound);
        }
    }
    RawTensor {
        data,
        shape: vec![vocab_size, dim],
    }
}

/// One or two embedding tables bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingSources {
    pub primary: TensorId,
    pub secondary: Option<TensorId>,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingSources {
    pub fn token_dim(&self) -> usize {
        if self.secondary.is_some() {
            2 * self.dim
        } else {
            self.dim
        }
    }

    /// Embeds each token; pad positions come out as constant zero vectors
    /// with no gradient path, so the pad row can never drift.
    pub fn embed(&self, tape: &mut Tape, tokens: &[u32]) -> Result<Vec<TensorId>> {
        let mut out = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            if tok as usize >= self.vocab_size {
                return Err(Error::Vocabulary(format!(
                    "token id {tok} outside vocabulary of {}",
                    self.vocab_size
                )));
            }
            if tok == PAD_ID {
                out.push(tape.zeros(self.token_dim()));
                continue;
            }
            let first = tape.slice(self.primary, tok as usize * self.dim, self.dim)?;
            let v = match self.secondary {
                Some(table) => {
                    let second = tape.slice(table, tok as usize * self.dim, self.dim)?;
                    tape.concat(first, second)?
                }
                None => first,
            };
            out.push(v);
        }
        Ok(out)
    }
}

// ── LSTM ─────────────────────────────────────────────────────────────

/// Registers `{name}.w` of shape [4H, in + H] and `{name}.b` of [4H].
/// Gate blocks are ordered input, forget, cell, output.
pub fn insert_lstm_params(
    params: &mut crate::params::ModelParams,
    name: &str,
    input_dim: usize,
    hidden_dim: usize,
    seed: u64,
) -> Result<()> {
    params.insert_weight(&format!("{name}.w"), 4 * hidden_dim, input_dim + hidden_dim, seed)?;
    params.insert_zeros(&format!("{name}.b"), vec![4 * hidden_dim])
}

#[derive(Debug, Clone, Copy)]
pub struct LstmHandle {
    pub w: TensorId,
    pub b: TensorId,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub state: TensorId,
    /// true when the sequence had no non-pad tokens and the state is the
    /// constant zero vector
    pub empty: bool,
}

impl LstmHandle {
    /// Runs the cell over the inputs and returns the final hidden state.
    /// An empty input list yields the zero vector, flagged.
    pub fn encode(&self, tape: &mut Tape, inputs: &[TensorId]) -> Result<Encoded> {
        let h4 = 4 * self.hidden_dim;
        if tape.shape(self.w).len() != 2 || tape.shape(self.w)[0] != h4 {
            return Err(Error::Dimension("lstm weight must be [4H, in+H]".into()));
        }
        if inputs.is_empty() {
            return Ok(Encoded {
                state: tape.zeros(self.hidden_dim),
                empty: true,
            });
        }
        let mut h = tape.zeros(self.hidden_dim);
        let mut c = tape.zeros(self.hidden_dim);
        for &x in inputs {
            let xh = tape.concat(x, h)?;
            let z = tape.affine(self.w, xh, self.b)?;
            let zi = tape.slice(z, 0, self.hidden_dim)?;
            let zf = tape.slice(z, self.hidden_dim, self.hidden_dim)?;
            let zg = tape.slice(z, 2 * self.hidden_dim, self.hidden_dim)?;
            let zo = tape.slice(z, 3 * self.hidden_dim, self.hidden_dim)?;
            let i = tape.sigmoid(zi);
            let f = tape.sigmoid(zf);
            let g = tape.tanh(zg);
            let o = tape.sigmoid(zo);
            let fc = tape.mul(f, c)?;
            let ig = tape.mul(i, g)?;
            c = tape.add(fc, ig)?;
            let tc = tape.tanh(c);
            h = tape.mul(o, tc)?;
        }
        Ok(Encoded {
            state: h,
            empty: false,
        })
    }

    /// Embeds the effective (non-pad) prefix of `tokens` and encodes it.
    pub fn encode_tokens(
        &self,
        tape: &mut Tape,
        sources: &EmbeddingSources,
        tokens: &[u32],
    ) -> Result<Encoded> {
        let effective = effective_tokens(tokens);
        let embedded = sources.embed(tape, effective)?;
        self.encode(tape, &embedded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{self, LossEval};
    use crate::params::ModelParams;

    #[test]
    fn vocab_roundtrip_and_unk() {
        let v = Vocab::new(["what", "color", "is"]).unwrap();
        assert_eq!(v.id("what"), 2);
        assert_eq!(v.id("never-seen"), UNK_ID);
        assert_eq!(v.word(0).unwrap(), PAD_WORD);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        v.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(v, loaded);
    }

    #[test]
    fn vocab_rejects_duplicates() {
        assert!(Vocab::new(["red", "red"]).is_err());
    }

    #[test]
    fn effective_prefix_stops_at_last_non_pad() {
        assert_eq!(effective_tokens(&[5, 3, 0, 0]), &[5, 3]);
        assert_eq!(effective_tokens(&[0, 0]), &[] as &[u32]);
        assert_eq!(effective_tokens(&[5, 0, 3, 0]), &[5, 0, 3]);
    }

    #[test]
    fn embedding_is_pure_and_pad_row_zero() {
        let a = hashed_embedding(20, 8, 42, "primary");
        let b = hashed_embedding(20, 8, 42, "primary");
        assert_eq!(a, b);
        assert!(a.data[..8].iter().all(|v| *v == 0.0));
        let bound = (3.0f64 / 8.0).sqrt();
        assert!(a.data.iter().all(|v| v.abs() <= bound));
        let c = hashed_embedding(20, 8, 43, "primary");
        assert_ne!(a, c);
        let d = hashed_embedding(20, 8, 42, "secondary");
        assert_ne!(a, d);
    }

    fn toy_sources(tape: &mut Tape, dual: bool) -> EmbeddingSources {
        let t1 = hashed_embedding(10, 4, 1, "primary");
        let p = tape.constant(t1.data, t1.shape).unwrap();
        let s = if dual {
            let t2 = hashed_embedding(10, 4, 1, "secondary");
            Some(tape.constant(t2.data, t2.shape).unwrap())
        } else {
            None
        };
        EmbeddingSources {
            primary: p,
            secondary: s,
            vocab_size: 10,
            dim: 4,
        }
    }

    #[test]
    fn pad_embeds_to_zero_and_dual_concatenates() {
        let mut tape = Tape::new();
        let src = toy_sources(&mut tape, true);
        let vs = src.embed(&mut tape, &[PAD_ID, 3]).unwrap();
        assert!(tape.value(vs[0]).iter().all(|v| *v == 0.0));
        assert_eq!(tape.len_of(vs[1]), 8);
    }

    #[test]
    fn out_of_range_token_rejected() {
        let mut tape = Tape::new();
        let src = toy_sources(&mut tape, false);
        assert!(src.embed(&mut tape, &[99]).is_err());
    }

    #[test]
    fn lstm_single_step_matches_hand_oracle() {
        // H = 1, input dim = 1: every gate is a scalar sigmoid/tanh
        let w_rows = [[0.5, 0.0], [0.3, 0.1], [1.0, -0.2], [0.7, 0.4]];
        let b = [0.1, -0.2, 0.3, 0.4];
        let x = 0.5;

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(w_rows[0][0] * x + b[0]);
        let g = (w_rows[2][0] * x + b[2]).tanh();
        let o = sig(w_rows[3][0] * x + b[3]);
        // the forget gate multiplies a zero initial cell state
        let c = i * g;
        let want = o * c.tanh();

        let mut tape = Tape::new();
        let w = tape
            .constant(w_rows.iter().flatten().copied().collect(), vec![4, 2])
            .unwrap();
        let bias = tape.constant_vec(b.to_vec());
        let cell = LstmHandle {
            w,
            b: bias,
            hidden_dim: 1,
        };
        let xv = tape.constant_vec(vec![x]);
        let out = cell.encode(&mut tape, &[xv]).unwrap();
        assert!(!out.empty);
        assert!((tape.value(out.state)[0] - want).abs() < 1e-14);
    }

    #[test]
    fn trailing_pads_do_not_change_encoding() {
        let mut params = ModelParams::new();
        insert_lstm_params(&mut params, "lstm.q", 4, 3, 7).unwrap();
        let encode = |tokens: &[u32]| {
            let mut tape = Tape::new();
            let src = toy_sources(&mut tape, false);
            let w = tape.param("lstm.q.w", params.get("lstm.q.w").unwrap()).unwrap();
            let b = tape.param("lstm.q.b", params.get("lstm.q.b").unwrap()).unwrap();
            let cell = LstmHandle {
                w,
                b,
                hidden_dim: 3,
            };
            let out = cell.encode_tokens(&mut tape, &src, tokens).unwrap();
            tape.value(out.state).to_vec()
        };
        assert_eq!(encode(&[4, 7, 2]), encode(&[4, 7, 2, 0, 0, 0]));
    }

    #[test]
    fn all_pad_sequence_encodes_to_flagged_zero() {
        let mut tape = Tape::new();
        let src = toy_sources(&mut tape, false);
        let mut params = ModelParams::new();
        insert_lstm_params(&mut params, "l", 4, 3, 5).unwrap();
        let w = tape.param("l.w", params.get("l.w").unwrap()).unwrap();
        let b = tape.param("l.b", params.get("l.b").unwrap()).unwrap();
        let cell = LstmHandle {
            w,
            b,
            hidden_dim: 3,
        };
        let out = cell.encode_tokens(&mut tape, &src, &[0, 0, 0]).unwrap();
        assert!(out.empty);
        assert!(tape.value(out.state).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lstm_gradients_match_central_difference() {
        let mut params = ModelParams::new();
        insert_lstm_params(&mut params, "enc", 3, 4, 21).unwrap();
        let probe: Vec<f64> = (0..4).map(|i| 0.3 + 0.1 * i as f64).collect();
        let f = |p: &ModelParams, want: bool| -> crate::error::Result<LossEval> {
            let mut tape = Tape::new();
            let w = tape.param("enc.w", p.get("enc.w")?)?;
            let b = tape.param("enc.b", p.get("enc.b")?)?;
            let cell = LstmHandle {
                w,
                b,
                hidden_dim: 4,
            };
            let x1 = tape.constant_vec(vec![0.2, -0.5, 0.9]);
            let x2 = tape.constant_vec(vec![-0.1, 0.4, 0.3]);
            let out = cell.encode(&mut tape, &[x1, x2])?;
            let probe_t = tape.constant_vec(probe.clone());
            let loss = tape.dot(out.state, probe_t)?;
            let value = tape.scalar(loss);
            let grads = if want {
                tape.backward(loss)?;
                Some(tape.param_grads())
            } else {
                None
            };
            Ok(LossEval { loss: value, grads })
        };
        let report = gradcheck::grad_check(&params, f, gradcheck::DEFAULT_STEP).unwrap();
        assert!(
            report.passed(gradcheck::DEFAULT_TOLERANCE),
            "max {}",
            report.max_rel_err
        );
    }

    #[test]
    fn embedding_gradients_flow_to_used_rows_only() {
        let mut params = ModelParams::new();
        params
            .insert("embed.primary", hashed_embedding(6, 3, 9, "primary"))
            .unwrap();
        let mut tape = Tape::new();
        let table = tape
            .param("embed.primary", params.get("embed.primary").unwrap())
            .unwrap();
        let src = EmbeddingSources {
            primary: table,
            secondary: None,
            vocab_size: 6,
            dim: 3,
        };
        let vs = src.embed(&mut tape, &[2, 2, 4]).unwrap();
        let cat = tape.concat_many(&vs).unwrap();
        let loss = tape.sum(cat);
        tape.backward(loss).unwrap();
        let g = tape.grad(table);
        assert!(g[..3].iter().all(|v| *v == 0.0)); // pad row
        assert!(g[3..6].iter().all(|v| *v == 0.0)); // unk row, unused
        assert!(g[6..9].iter().all(|v| *v == 2.0)); // row 2 used twice
        assert!(g[12..15].iter().all(|v| *v == 1.0)); // row 4 used once
    }
}
