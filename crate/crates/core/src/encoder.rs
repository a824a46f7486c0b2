//! Unidirectional GRU encoder over embedded tokens.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::numcore::{Gru, NodeId, ParamStore, Real, Tape};

/// Hidden states of an encoded sequence and their elementwise sum.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput<F = f32> {
    pub states: Vec<Vec<F>>,
    pub context: Vec<F>,
}

/// Tape handles for an encoded sequence.
#[derive(Clone, Debug)]
pub struct EncodedNodes {
    pub states: Vec<NodeId>,
    pub context: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoder {
    embed: String,
    gru: Gru,
    vocab_size: usize,
}

impl Encoder {
    /// `embed` names a `[vocab_size, dim]` table; the GRU lives under `gru_prefix`.
    pub fn new(embed: &str, gru_prefix: &str, vocab_size: usize, dim: usize) -> Self {
        Encoder {
            embed: embed.to_string(),
            gru: Gru::new(gru_prefix, dim, dim),
            vocab_size,
        }
    }

    pub fn embedding_name(&self) -> &str {
        &self.embed
    }

    pub fn gru(&self) -> &Gru {
        &self.gru
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.gru.hidden_dim
    }

    /// Declares the embedding table (unless already present) and the GRU.
    pub fn declare<F: Real, R: Rng>(&self, store: &mut ParamStore<F>, rng: &mut R) -> Result<()> {
        if store.get(&self.embed).is_none() {
            store.insert_uniform(self.embed.as_str(), &[self.vocab_size, self.dim()], rng)?;
        }
        self.gru.declare(store, rng)
    }

    pub fn param_names(&self) -> Vec<&str> {
        let mut v = vec![self.embed.as_str()];
        v.extend(self.gru.param_names());
        v
    }

    pub fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return invalid(format!("token id {bad} outside vocabulary of {}", self.vocab_size));
        }
        Ok(())
    }

    /// Left-to-right recurrence from the zero state.
    pub fn encode_on<F: Real>(&self, tape: &mut Tape<'_, F>, ids: &[usize]) -> Result<EncodedNodes> {
        if ids.is_empty() {
            return invalid("cannot encode an empty sequence");
        }
        self.check_ids(ids)?;
        let table = tape.param(&self.embed);
        let inputs: Vec<NodeId> = ids.iter().map(|&i| tape.embed(table, i)).collect();
        let h0 = self.gru.zero_state(tape);
        let states = self.gru.run(tape, &inputs, h0);
        let context = tape.sum(&states);
        Ok(EncodedNodes { states, context })
    }

    pub fn encode<F: Real>(&self, params: &ParamStore<F>, ids: &[usize]) -> Result<EncoderOutput<F>> {
        let mut tape = Tape::new(params);
        let n = self.encode_on(&mut tape, ids)?;
        Ok(EncoderOutput {
            states: n.states.iter().map(|&s| tape.value(s).to_vec()).collect(),
            context: tape.value(n.context).to_vec(),
        })
    }
}
