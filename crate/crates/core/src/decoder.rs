//! Bidirectional-asynchronous decoder.
//!
//! Step I drafts the middle span right-to-left from the emotion keyword and
//! keeps its hidden states. Step II generates the middle span left-to-right
//! from the topic keyword, attending over the Step I states. Step III runs two
//! independent seq2seq models over the connected keyword/middle sequence to
//! produce the text after the emotion keyword and before the topic keyword.

use rand::Rng;
use serde::Serialize;

use crate::corpus::{EOM, EOS, PAD, UNK};
use crate::error::{invalid, Result};
use crate::numcore::{masked_argmax, Gru, NodeId, ParamStore, Real, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub max_middle_len: usize,
    pub max_side_len: usize,
}

/// How a stage chooses its next input token.
#[derive(Clone, Copy, Debug)]
pub enum Forcing<'a> {
    /// Greedy argmax until the stage's terminator or its length limit.
    Free,
    /// Ground-truth targets; the terminator is appended automatically.
    Teacher(&'a [usize]),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MiddleDraft<F = f32> {
    /// State after consuming the emotion keyword, then one per draft token.
    pub states: Vec<Vec<F>>,
    /// Draft tokens, nearest to the emotion keyword first.
    pub tokens: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionRecord<F = f32> {
    pub weights: Vec<F>,
    pub energies: Vec<F>,
    pub context: Vec<F>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MiddleResult<F = f32> {
    pub tokens: Vec<usize>,
    pub states: Vec<Vec<F>>,
    /// One record per decode step, including a final step that emitted the
    /// end-of-middle marker.
    pub attention: Vec<AttentionRecord<F>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SidesResult {
    /// Tokens following the emotion keyword.
    pub after_emotion: Vec<usize>,
    /// Tokens preceding the topic keyword, in reading order.
    pub before_topic: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecodeTrace<F = f32> {
    pub draft: MiddleDraft<F>,
    pub middle: MiddleResult<F>,
    pub sides: SidesResult,
}

#[derive(Clone, Debug)]
pub struct DraftNodes {
    pub states: Vec<NodeId>,
    pub tokens: Vec<usize>,
    pub losses: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct AttentionNodes {
    pub weights: NodeId,
    pub energies: NodeId,
    pub context: NodeId,
}

#[derive(Clone, Debug)]
pub struct MiddleNodes {
    pub tokens: Vec<usize>,
    pub states: Vec<NodeId>,
    pub attention: Vec<AttentionNodes>,
    pub losses: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct SideNodes {
    /// Tokens in generation order (outward from the keyword).
    pub tokens: Vec<usize>,
    pub losses: Vec<NodeId>,
}

/// Per-token cross-entropy nodes of each stage.
#[derive(Clone, Debug, Default)]
pub struct StageLosses {
    pub step1: Vec<NodeId>,
    pub step2: Vec<NodeId>,
    pub side_a: Vec<NodeId>,
    pub side_b: Vec<NodeId>,
}

impl StageLosses {
    pub fn all(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.step1
            .iter()
            .chain(&self.step2)
            .chain(&self.side_a)
            .chain(&self.side_b)
            .copied()
    }

    pub fn count(&self) -> usize {
        self.step1.len() + self.step2.len() + self.side_a.len() + self.side_b.len()
    }
}

/// Ground-truth segments of one reply in topic-first layout.
#[derive(Clone, Copy, Debug)]
pub struct DecodeTarget<'a> {
    pub topic_keyword: usize,
    pub emotion_keyword: usize,
    pub before_topic: &'a [usize],
    pub middle: &'a [usize],
    pub after_emotion: &'a [usize],
}

/// Encoder inputs of the two side models: `[tp, middle, et]` and
/// `[et, reversed middle, tp]`.
pub fn connected_sequences(w_tp: usize, middle: &[usize], w_et: usize) -> (Vec<usize>, Vec<usize>) {
    let mut a = Vec::with_capacity(middle.len() + 2);
    a.push(w_tp);
    a.extend_from_slice(middle);
    a.push(w_et);
    let mut b = a.clone();
    b.reverse();
    (a, b)
}

#[derive(Clone, Debug)]
struct SideModel {
    enc: Gru,
    dec: Gru,
    out: String,
    out_b: String,
}

impl SideModel {
    fn new(prefix: &str, h: usize) -> Self {
        SideModel {
            enc: Gru::new(&format!("{prefix}.enc.gru"), h, h),
            dec: Gru::new(&format!("{prefix}.dec.gru"), h, h),
            out: format!("{prefix}.out"),
            out_b: format!("{prefix}.out_b"),
        }
    }

    fn names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.enc.param_names().to_vec();
        v.extend(self.dec.param_names());
        v.extend([self.out.as_str(), self.out_b.as_str()]);
        v
    }
}

#[derive(Clone, Debug)]
pub struct AsyncDecoder {
    cfg: DecoderConfig,
    embed: String,
    step1: Gru,
    step1_init: String,
    step1_init_b: String,
    step1_out: String,
    step1_out_b: String,
    step2: Gru,
    step2_init: String,
    step2_init_b: String,
    attn_v: String,
    attn_w: String,
    attn_u: String,
    step2_out: String,
    step2_out_b: String,
    side_a: SideModel,
    side_b: SideModel,
}

fn mask(vocab: usize, exclude: &[usize]) -> Vec<bool> {
    let mut m = vec![true; vocab];
    for &i in exclude {
        if i < vocab {
            m[i] = false;
        }
    }
    m
}

impl AsyncDecoder {
    /// `embed` names the `[vocab, hidden]` input embedding shared with the encoder.
    pub fn new(embed: &str, cfg: DecoderConfig) -> Self {
        let h = cfg.hidden;
        AsyncDecoder {
            cfg,
            embed: embed.to_string(),
            step1: Gru::new("step1.gru", h, h),
            step1_init: "step1.init".into(),
            step1_init_b: "step1.init_b".into(),
            step1_out: "step1.out".into(),
            step1_out_b: "step1.out_b".into(),
            step2: Gru::new("step2.gru", h, h),
            step2_init: "step2.init".into(),
            step2_init_b: "step2.init_b".into(),
            attn_v: "step2.attn.v".into(),
            attn_w: "step2.attn.w".into(),
            attn_u: "step2.attn.u".into(),
            step2_out: "step2.out".into(),
            step2_out_b: "step2.out_b".into(),
            side_a: SideModel::new("side_a", h),
            side_b: SideModel::new("side_b", h),
        }
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn declare<F: Real, R: Rng>(&self, store: &mut ParamStore<F>, rng: &mut R) -> Result<()> {
        let (v, h) = (self.cfg.vocab_size, self.cfg.hidden);
        if store.get(&self.embed).is_none() {
            store.insert_uniform(self.embed.as_str(), &[v, h], rng)?;
        }
        store.insert_uniform(self.step1_init.as_str(), &[h, h], rng)?;
        store.insert_zeros(self.step1_init_b.as_str(), &[h])?;
        self.step1.declare(store, rng)?;
        store.insert_uniform(self.step1_out.as_str(), &[v, h], rng)?;
        store.insert_zeros(self.step1_out_b.as_str(), &[v])?;

        store.insert_uniform(self.step2_init.as_str(), &[h, h], rng)?;
        store.insert_zeros(self.step2_init_b.as_str(), &[h])?;
        self.step2.declare(store, rng)?;
        store.insert_uniform(self.attn_v.as_str(), &[h], rng)?;
        store.insert_uniform(self.attn_w.as_str(), &[h, h], rng)?;
        store.insert_uniform(self.attn_u.as_str(), &[h, h], rng)?;
        store.insert_uniform(self.step2_out.as_str(), &[v, 2 * h], rng)?;
        store.insert_zeros(self.step2_out_b.as_str(), &[v])?;

        for side in [&self.side_a, &self.side_b] {
            side.enc.declare(store, rng)?;
            side.dec.declare(store, rng)?;
            store.insert_uniform(side.out.as_str(), &[v, h], rng)?;
            store.insert_zeros(side.out_b.as_str(), &[v])?;
        }
        Ok(())
    }

    pub fn step1_param_names(&self) -> Vec<&str> {
        let mut v = vec![self.step1_init.as_str(), self.step1_init_b.as_str()];
        v.extend(self.step1.param_names());
        v.extend([self.step1_out.as_str(), self.step1_out_b.as_str()]);
        v
    }

    pub fn attention_param_names(&self) -> Vec<&str> {
        vec![self.attn_v.as_str(), self.attn_w.as_str(), self.attn_u.as_str()]
    }

    /// Step II recurrence and output weights, excluding attention.
    pub fn step2_param_names(&self) -> Vec<&str> {
        let mut v = vec![self.step2_init.as_str(), self.step2_init_b.as_str()];
        v.extend(self.step2.param_names());
        v.extend([self.step2_out.as_str(), self.step2_out_b.as_str()]);
        v
    }

    pub fn side_a_param_names(&self) -> Vec<&str> {
        self.side_a.names()
    }

    pub fn side_b_param_names(&self) -> Vec<&str> {
        self.side_b.names()
    }

    /// Excluded outputs while training the middle stages.
    fn middle_exclusions(&self) -> [usize; 2] {
        [PAD, EOS]
    }

    fn side_exclusions(&self) -> [usize; 2] {
        [PAD, EOM]
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.cfg.vocab_size) {
            Some(bad) => invalid(format!("token id {bad} outside vocabulary")),
            None => Ok(()),
        }
    }

    fn check_targets(&self, targets: &[usize], forbidden: &[usize]) -> Result<()> {
        self.check_ids(targets)?;
        match targets.iter().find(|t| forbidden.contains(t)) {
            Some(t) => invalid(format!("reserved token {t} inside a target span")),
            None => Ok(()),
        }
    }

    fn project<F: Real>(&self, tape: &mut Tape<'_, F>, w: &str, b: &str, x: NodeId) -> NodeId {
        let (w, b) = (tape.param(w), tape.param(b));
        let wx = tape.matvec(w, x);
        tape.add(wx, b)
    }

    fn init_state<F: Real>(&self, tape: &mut Tape<'_, F>, w: &str, b: &str, context: NodeId) -> NodeId {
        let pre = self.project(tape, w, b, context);
        tape.tanh(pre)
    }

    /// Step I. `exclude` lists extra tokens barred from free-run output.
    pub fn step1_on<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        w_et: usize,
        context: NodeId,
        forcing: Forcing<'_>,
        exclude: &[usize],
    ) -> Result<DraftNodes> {
        self.check_ids(&[w_et])?;
        let table = tape.param(&self.embed);
        let s0 = self.init_state(tape, &self.step1_init, &self.step1_init_b, context);
        let x = tape.embed(table, w_et);
        let mut s = self.step1.step(tape, x, s0);
        let mut states = vec![s];
        let mut tokens = Vec::new();
        let mut losses = Vec::new();
        match forcing {
            Forcing::Teacher(targets) => {
                let forbidden = [PAD, EOS, EOM];
                self.check_targets(targets, &forbidden)?;
                let m = mask(self.cfg.vocab_size, &self.middle_exclusions());
                for i in 0..=targets.len() {
                    let logits = self.project(tape, &self.step1_out, &self.step1_out_b, s);
                    let target = targets.get(i).copied().unwrap_or(EOM);
                    losses.push(tape.softmax_cross_entropy(logits, Some(&m), target));
                    if i < targets.len() {
                        let x = tape.embed(table, target);
                        s = self.step1.step(tape, x, s);
                        states.push(s);
                        tokens.push(target);
                    }
                }
            }
            Forcing::Free => {
                let mut ex = self.middle_exclusions().to_vec();
                ex.push(UNK);
                ex.extend_from_slice(exclude);
                let m = mask(self.cfg.vocab_size, &ex);
                while tokens.len() < self.cfg.max_middle_len {
                    let logits = self.project(tape, &self.step1_out, &self.step1_out_b, s);
                    let tok = masked_argmax(tape.value(logits), &m).expect("EOM is never masked");
                    if tok == EOM {
                        break;
                    }
                    tokens.push(tok);
                    let x = tape.embed(table, tok);
                    s = self.step1.step(tape, x, s);
                    states.push(s);
                }
            }
        }
        Ok(DraftNodes {
            states,
            tokens,
            losses,
        })
    }

    /// Attention of the previous topic-side state over the emotion-side
    /// states. `keys` caches `U s_i` for each state.
    fn attend<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        s_prev: NodeId,
        states: &[NodeId],
        keys: &[NodeId],
    ) -> AttentionNodes {
        let (v, w) = (tape.param(&self.attn_v), tape.param(&self.attn_w));
        let query = tape.matvec(w, s_prev);
        let energies: Vec<NodeId> = keys
            .iter()
            .map(|&k| {
                let a = tape.add(query, k);
                let t = tape.tanh(a);
                tape.dot(v, t)
            })
            .collect();
        let energies = tape.stack(&energies);
        let weights = tape.softmax(energies);
        let context = tape.weighted_sum(weights, states);
        AttentionNodes {
            weights,
            energies,
            context,
        }
    }

    fn attention_keys<F: Real>(&self, tape: &mut Tape<'_, F>, states: &[NodeId]) -> Vec<NodeId> {
        let u = tape.param(&self.attn_u);
        states.iter().map(|&s| tape.matvec(u, s)).collect()
    }

    /// Single attention step on plain values.
    pub fn emotion_attention<F: Real>(
        &self,
        params: &ParamStore<F>,
        s_prev: &[F],
        states: &[Vec<F>],
    ) -> Result<AttentionRecord<F>> {
        if states.is_empty() {
            return invalid("attention needs at least one emotion-side state");
        }
        let h = self.cfg.hidden;
        if s_prev.len() != h || states.iter().any(|s| s.len() != h) {
            return invalid(format!("attention states must have dimension {h}"));
        }
        let mut tape = Tape::new(params);
        let q = tape.input_vec(s_prev.to_vec());
        let st: Vec<NodeId> = states.iter().map(|s| tape.input_vec(s.clone())).collect();
        let keys = self.attention_keys(&mut tape, &st);
        let a = self.attend(&mut tape, q, &st, &keys);
        Ok(record(&tape, &a))
    }

    /// Step II over the Step I states `draft`.
    pub fn step2_on<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        w_tp: usize,
        context: NodeId,
        draft: &[NodeId],
        forcing: Forcing<'_>,
        exclude: &[usize],
    ) -> Result<MiddleNodes> {
        if draft.is_empty() {
            return invalid("empty emotion-side draft");
        }
        self.check_ids(&[w_tp])?;
        let table = tape.param(&self.embed);
        let keys = self.attention_keys(tape, draft);
        let mut s = self.init_state(tape, &self.step2_init, &self.step2_init_b, context);
        let mut prev = w_tp;
        let mut out = MiddleNodes {
            tokens: Vec::new(),
            states: Vec::new(),
            attention: Vec::new(),
            losses: Vec::new(),
        };
        let (targets, m) = match forcing {
            Forcing::Teacher(t) => {
                self.check_targets(t, &[PAD, EOS, EOM])?;
                (Some(t), mask(self.cfg.vocab_size, &self.middle_exclusions()))
            }
            Forcing::Free => {
                let mut ex = self.middle_exclusions().to_vec();
                ex.push(UNK);
                ex.extend_from_slice(exclude);
                (None, mask(self.cfg.vocab_size, &ex))
            }
        };
        let w_out = tape.param(&self.step2_out);
        let b_out = tape.param(&self.step2_out_b);
        for j in 0.. {
            if targets.is_none() && out.tokens.len() >= self.cfg.max_middle_len {
                break;
            }
            let att = self.attend(tape, s, draft, &keys);
            let x = tape.embed(table, prev);
            s = self.step2.step(tape, x, s);
            let joined = tape.concat(&[s, att.context]);
            let wx = tape.matvec(w_out, joined);
            let logits = tape.add(wx, b_out);
            out.attention.push(att);
            let tok = match targets {
                Some(t) => {
                    let target = t.get(j).copied().unwrap_or(EOM);
                    out.losses.push(tape.softmax_cross_entropy(logits, Some(&m), target));
                    target
                }
                None => masked_argmax(tape.value(logits), &m).expect("EOM is never masked"),
            };
            if tok == EOM {
                break;
            }
            out.tokens.push(tok);
            out.states.push(s);
            prev = tok;
        }
        Ok(out)
    }

    fn side_on<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        side: &SideModel,
        inputs: &[usize],
        first: usize,
        forcing: Forcing<'_>,
        exclude: &[usize],
    ) -> Result<SideNodes> {
        let table = tape.param(&self.embed);
        let xs: Vec<NodeId> = inputs.iter().map(|&i| tape.embed(table, i)).collect();
        let h0 = side.enc.zero_state(tape);
        let enc = side.enc.run(tape, &xs, h0);
        let mut h = *enc.last().expect("connected sequence has both keywords");
        let (targets, m) = match forcing {
            Forcing::Teacher(t) => {
                self.check_targets(t, &[PAD, EOS, EOM])?;
                (Some(t), mask(self.cfg.vocab_size, &self.side_exclusions()))
            }
            Forcing::Free => {
                let mut ex = self.side_exclusions().to_vec();
                ex.push(UNK);
                ex.extend_from_slice(exclude);
                (None, mask(self.cfg.vocab_size, &ex))
            }
        };
        let mut prev = first;
        let mut out = SideNodes {
            tokens: Vec::new(),
            losses: Vec::new(),
        };
        for j in 0.. {
            if targets.is_none() && out.tokens.len() >= self.cfg.max_side_len {
                break;
            }
            let x = tape.embed(table, prev);
            h = side.dec.step(tape, x, h);
            let logits = self.project(tape, &side.out, &side.out_b, h);
            let tok = match targets {
                Some(t) => {
                    let target = t.get(j).copied().unwrap_or(EOS);
                    out.losses.push(tape.softmax_cross_entropy(logits, Some(&m), target));
                    target
                }
                None => masked_argmax(tape.value(logits), &m).expect("EOS is never masked"),
            };
            if tok == EOS {
                break;
            }
            out.tokens.push(tok);
            prev = tok;
        }
        Ok(out)
    }

    /// Step III. With teacher forcing, `after_emotion` and `before_topic`
    /// are the reading-order targets; the second side is trained outward
    /// from the topic keyword.
    #[allow(clippy::too_many_arguments)]
    pub fn step3_on<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        w_tp: usize,
        middle: &[usize],
        w_et: usize,
        teacher: Option<(&[usize], &[usize])>,
        exclude: &[usize],
    ) -> Result<(SideNodes, SideNodes)> {
        self.check_ids(middle)?;
        self.check_ids(&[w_tp, w_et])?;
        let (seq_a, seq_b) = connected_sequences(w_tp, middle, w_et);
        let outward: Vec<usize>;
        let (fa, fb) = match teacher {
            Some((after, before)) => {
                outward = before.iter().rev().copied().collect();
                (Forcing::Teacher(after), Forcing::Teacher(&outward))
            }
            None => (Forcing::Free, Forcing::Free),
        };
        let a = self.side_on(tape, &self.side_a, &seq_a, w_et, fa, exclude)?;
        let mut b = self.side_on(tape, &self.side_b, &seq_b, w_tp, fb, exclude)?;
        if teacher.is_none() {
            b.tokens.reverse();
        }
        Ok((a, b))
    }

    /// Teacher-forced per-token losses of all three steps.
    pub fn loss_on<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        context: NodeId,
        target: &DecodeTarget<'_>,
    ) -> Result<StageLosses> {
        let reversed: Vec<usize> = target.middle.iter().rev().copied().collect();
        let draft = self.step1_on(tape, target.emotion_keyword, context, Forcing::Teacher(&reversed), &[])?;
        let middle = self.step2_on(
            tape,
            target.topic_keyword,
            context,
            &draft.states,
            Forcing::Teacher(target.middle),
            &[],
        )?;
        let (a, b) = self.step3_on(
            tape,
            target.topic_keyword,
            target.middle,
            target.emotion_keyword,
            Some((target.after_emotion, target.before_topic)),
            &[],
        )?;
        Ok(StageLosses {
            step1: draft.losses,
            step2: middle.losses,
            side_a: a.losses,
            side_b: b.losses,
        })
    }

    /// Greedy decoding of all three steps. Both keywords are barred from
    /// every generated span so that each appears once in the reply.
    pub fn decode_on<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        context: NodeId,
        w_tp: usize,
        w_et: usize,
    ) -> Result<DecodeTrace<F>> {
        let exclude = [w_tp, w_et];
        let draft = self.step1_on(tape, w_et, context, Forcing::Free, &exclude)?;
        let middle = self.step2_on(tape, w_tp, context, &draft.states, Forcing::Free, &exclude)?;
        let (a, b) = self.step3_on(tape, w_tp, &middle.tokens, w_et, None, &exclude)?;
        Ok(DecodeTrace {
            draft: MiddleDraft {
                states: draft.states.iter().map(|&s| tape.value(s).to_vec()).collect(),
                tokens: draft.tokens,
            },
            middle: MiddleResult {
                states: middle.states.iter().map(|&s| tape.value(s).to_vec()).collect(),
                attention: middle.attention.iter().map(|a| record(tape, a)).collect(),
                tokens: middle.tokens,
            },
            sides: SidesResult {
                after_emotion: a.tokens,
                before_topic: b.tokens,
            },
        })
    }
}

fn record<F: Real>(tape: &Tape<'_, F>, a: &AttentionNodes) -> AttentionRecord<F> {
    AttentionRecord {
        weights: tape.value(a.weights).to_vec(),
        energies: tape.value(a.energies).to_vec(),
        context: tape.value(a.context).to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::{check_gradients, FD_STEP};
    use crate::numcore::Adam;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    const V: usize = 16;

    fn setup<F: Real>(h: usize, seed: u64) -> (AsyncDecoder, ParamStore<F>) {
        let d = AsyncDecoder::new(
            "embed",
            DecoderConfig {
                vocab_size: V,
                hidden: h,
                max_middle_len: 10,
                max_side_len: 10,
            },
        );
        let mut p = ParamStore::new();
        d.declare(&mut p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (d, p)
    }

    fn ctx<F: Real>(t: &mut Tape<'_, F>, h: usize) -> NodeId {
        t.input_vec((0..h).map(|i| F::lit(0.3 * (i as f64 + 1.0).sin())).collect())
    }

    #[test]
    fn free_run_with_zero_max_len_keeps_keyword_state_only() {
        let (mut d, p) = setup::<f64>(4, 1);
        d.cfg.max_middle_len = 0;
        let mut t = Tape::new(&p);
        let c = ctx(&mut t, 4);
        let draft = d.step1_on(&mut t, 7, c, Forcing::Free, &[]).unwrap();
        assert_eq!(draft.states.len(), 1);
        assert!(draft.tokens.is_empty());
    }

    #[test]
    fn teacher_forced_draft_has_one_state_per_target_plus_keyword() {
        let (d, p) = setup::<f64>(4, 1);
        let mut t = Tape::new(&p);
        let c = ctx(&mut t, 4);
        let draft = d.step1_on(&mut t, 7, c, Forcing::Teacher(&[8, 9, 10]), &[]).unwrap();
        assert_eq!(draft.states.len(), 4);
        assert_eq!(draft.losses.len(), 4);
    }

    #[test]
    fn zero_weight_draft_halves_from_initial_state() {
        let (d, mut p) = setup::<f64>(3, 2);
        for (_, v) in p.iter_mut() {
            v.data_mut().fill(0.0);
        }
        let b = [0.4, -0.8, 0.2];
        p.get_mut("step1.init_b").unwrap().data_mut().copy_from_slice(&b);
        let mut t = Tape::new(&p);
        let c = ctx(&mut t, 3);
        let draft = d.step1_on(&mut t, 7, c, Forcing::Teacher(&[8, 9]), &[]).unwrap();
        for (k, &s) in draft.states.iter().enumerate() {
            let scale = 0.5f64.powi(k as i32 + 1);
            for (got, bi) in t.value(s).iter().zip(b) {
                assert!((got - scale * f64::tanh(bi)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singleton_attention_is_one() {
        let (d, p) = setup::<f64>(4, 3);
        let rec = d
            .emotion_attention(&p, &[0.1, 0.2, 0.3, 0.4], &[vec![0.5, -0.5, 0.2, 0.0]])
            .unwrap();
        assert_eq!(rec.weights, vec![1.0]);
        assert_eq!(rec.context, vec![0.5, -0.5, 0.2, 0.0]);
    }

    #[test]
    fn identical_states_share_attention() {
        let (d, p) = setup::<f64>(4, 3);
        let s = vec![0.3, -0.1, 0.7, 0.2];
        let rec = d
            .emotion_attention(&p, &[0.1, 0.2, 0.3, 0.4], &[s.clone(), s.clone()])
            .unwrap();
        assert!((rec.weights[0] - 0.5).abs() < 1e-15 && (rec.weights[1] - 0.5).abs() < 1e-15);
        for (a, b) in rec.context.iter().zip(&s) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(d.emotion_attention(&p, &[0.0; 4], &[]).is_err());
    }

    #[test]
    fn attention_matches_scalar_oracle() {
        let (d, p) = setup::<f64>(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let states: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let rec = d.emotion_attention(&p, &q, &states).unwrap();
        let (v, w, u) = (
            p.get("step2.attn.v").unwrap(),
            p.get("step2.attn.w").unwrap(),
            p.get("step2.attn.u").unwrap(),
        );
        let mut e = Vec::new();
        for s in &states {
            let mut acc = 0.0;
            for r in 0..4 {
                let mut pre = 0.0;
                for c in 0..4 {
                    pre += w.data()[r * 4 + c] * q[c] + u.data()[r * 4 + c] * s[c];
                }
                acc += v.data()[r] * pre.tanh();
            }
            e.push(acc);
        }
        let mx = e.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = e.iter().map(|x| (x - mx).exp()).sum();
        let alpha: Vec<f64> = e.iter().map(|x| (x - mx).exp() / z).collect();
        for i in 0..3 {
            assert!((rec.energies[i] - e[i]).abs() < 1e-12);
            assert!((rec.weights[i] - alpha[i]).abs() < 1e-12);
        }
        for c in 0..4 {
            let want: f64 = (0..3).map(|i| alpha[i] * states[i][c]).sum();
            assert!((rec.context[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn eom_first_gives_empty_middle() {
        let (d, mut p) = setup::<f64>(4, 5);
        // bias the output towards EOM
        p.get_mut("step2.out_b").unwrap().data_mut()[EOM] = 100.0;
        p.get_mut("side_a.out_b").unwrap().data_mut()[EOS] = 100.0;
        p.get_mut("side_b.out_b").unwrap().data_mut()[EOS] = 100.0;
        let mut t = Tape::new(&p);
        let c = ctx(&mut t, 4);
        let tr = d.decode_on(&mut t, c, 5, 6).unwrap();
        assert!(tr.middle.tokens.is_empty());
        assert_eq!(tr.middle.attention.len(), 1);
        assert_eq!(tr.sides, SidesResult::default());
    }

    #[test]
    fn connected_sequences_have_middle_plus_two() {
        let (a, b) = connected_sequences(4, &[7, 8, 9], 5);
        assert_eq!(a, vec![4, 7, 8, 9, 5]);
        assert_eq!(b, vec![5, 9, 8, 7, 4]);
        let (a, b) = connected_sequences(4, &[], 5);
        assert_eq!((a.len(), b.len()), (2, 2));
    }

    #[test]
    fn decode_respects_limits_and_excludes_keywords() {
        for seed in 0..20 {
            let (d, p) = setup::<f32>(6, seed);
            let mut t = Tape::new(&p);
            let c = ctx(&mut t, 6);
            let tr = d.decode_on(&mut t, c, 4, 5).unwrap();
            assert!(tr.middle.tokens.len() <= 10);
            assert!(tr.draft.states.len() <= 11 && !tr.draft.states.is_empty());
            assert!(tr.sides.after_emotion.len() <= 10 && tr.sides.before_topic.len() <= 10);
            let all = tr.middle.tokens.iter().chain(&tr.sides.after_emotion).chain(&tr.sides.before_topic);
            for &tok in all {
                assert!(![PAD, UNK, EOS, EOM, 4, 5].contains(&tok));
            }
            for rec in &tr.middle.attention {
                let s: f32 = rec.weights.iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
                assert_eq!(rec.weights.len(), tr.draft.states.len());
            }
        }
    }

    #[test]
    fn decoding_is_deterministic() {
        let (d, p) = setup::<f32>(6, 11);
        let run = || {
            let mut t = Tape::new(&p);
            let c = ctx(&mut t, 6);
            d.decode_on(&mut t, c, 4, 5).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn stage_parameters_are_disjoint() {
        let (d, _) = setup::<f32>(4, 0);
        let groups = [
            d.step1_param_names(),
            d.step2_param_names(),
            d.side_a_param_names(),
            d.side_b_param_names(),
        ];
        let mut seen = HashSet::new();
        for g in &groups {
            for n in g {
                assert!(seen.insert(*n), "{n} shared");
            }
        }
    }

    #[test]
    fn rejects_reserved_targets() {
        let (d, p) = setup::<f64>(4, 1);
        let mut t = Tape::new(&p);
        let c = ctx(&mut t, 4);
        assert!(d.step1_on(&mut t, 7, c, Forcing::Teacher(&[EOM]), &[]).is_err());
        assert!(d.step1_on(&mut t, V, c, Forcing::Free, &[]).is_err());
    }

    #[test]
    fn total_loss_gradients_match_finite_differences() {
        let (d, p) = setup::<f64>(4, 6);
        let target = DecodeTarget {
            topic_keyword: 4,
            emotion_keyword: 5,
            before_topic: &[9, 10],
            middle: &[7, 8],
            after_emotion: &[11],
        };
        let loss = |t: &mut Tape<'_, f64>| {
            let c = ctx(t, 4);
            let l = d.loss_on(t, c, &target)?;
            let all: Vec<NodeId> = l.all().collect();
            Ok(t.sum(&all))
        };
        let mut names = d.step1_param_names();
        names.extend(d.step2_param_names());
        names.extend(d.attention_param_names());
        names.extend(d.side_a_param_names());
        names.extend(d.side_b_param_names());
        names.push("embed");
        for r in check_gradients(&p, &names, FD_STEP, 8, loss).unwrap() {
            assert!(r.max_rel_err < 1e-3, "{r:?}");
        }
    }

    #[test]
    fn middle_loss_decreases_on_one_pair() {
        let (d, mut p) = setup::<f32>(8, 7);
        let target = DecodeTarget {
            topic_keyword: 4,
            emotion_keyword: 5,
            before_topic: &[9],
            middle: &[7, 8],
            after_emotion: &[11],
        };
        let mut adam = Adam::new();
        let mut prev = f32::INFINITY;
        for _ in 0..10 {
            let mut t = Tape::new(&p);
            let c = ctx(&mut t, 8);
            let l = d.loss_on(&mut t, c, &target).unwrap();
            let mid = t.sum(&l.step2);
            let value = t.scalar(mid);
            assert!(value < prev, "{value} after {prev}");
            prev = value;
            let g = t.backward(mid).unwrap();
            adam.step(&mut p, &g, 1e-3).unwrap();
        }
    }

    #[test]
    fn trained_tail_is_reproduced() {
        // every reply ends with the tail [12, 13] after the emotion keyword
        let (d, mut p) = setup::<f32>(8, 8);
        let cases: Vec<(usize, usize, Vec<usize>)> =
            vec![(4, 5, vec![7]), (6, 5, vec![]), (4, 10, vec![8, 9]), (6, 10, vec![9])];
        let mut adam = Adam::new();
        for _ in 0..150 {
            for (tp, et, mid) in &cases {
                let mut t = Tape::new(&p);
                let (a, _) = d.step3_on(&mut t, *tp, mid, *et, Some((&[12, 13], &[])), &[]).unwrap();
                let l = t.sum(&a.losses);
                let g = t.backward(l).unwrap();
                adam.step(&mut p, &g, 1e-2).unwrap();
            }
        }
        for (tp, et, mid) in &cases {
            let mut t = Tape::new(&p);
            let (a, _) = d.step3_on(&mut t, *tp, mid, *et, None, &[]).unwrap();
            assert_eq!(a.tokens, vec![12, 13]);
        }
    }
}
