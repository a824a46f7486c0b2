//! Reply assembly and forward/backward direction selection.

use rand::Rng;
use serde::Serialize;

use crate::corpus::Direction;
use crate::encoder::Encoder;
use crate::error::{invalid, Result};
use crate::numcore::{NodeId, ParamStore, Real, Tape};

/// Joins the five segments topic-first and returns it with its reversal.
pub fn assemble<T: Clone>(before_topic: &[T], w_tp: &T, middle: &[T], w_et: &T, after_emotion: &[T]) -> (Vec<T>, Vec<T>) {
    let mut fwd = Vec::with_capacity(before_topic.len() + middle.len() + after_emotion.len() + 2);
    fwd.extend_from_slice(before_topic);
    fwd.push(w_tp.clone());
    fwd.extend_from_slice(middle);
    fwd.push(w_et.clone());
    fwd.extend_from_slice(after_emotion);
    let mut bwd = fwd.clone();
    bwd.reverse();
    (fwd, bwd)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssembledReply<T = usize> {
    pub forward: Vec<T>,
    pub backward: Vec<T>,
    pub score: f64,
    pub chosen: Direction,
}

impl<T: Clone> AssembledReply<T> {
    pub fn tokens(&self) -> &[T] {
        match self.chosen {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    pub fn map<U, G: Fn(&T) -> U>(&self, f: G) -> AssembledReply<U> {
        AssembledReply {
            forward: self.forward.iter().map(&f).collect(),
            backward: self.backward.iter().map(&f).collect(),
            score: self.score,
            chosen: self.chosen,
        }
    }
}

/// Two GRU branches over the forward and backward arrangements; the score
/// is `sigmoid(w · [Σ h_fwd; Σ h_bwd])`.
#[derive(Clone, Debug)]
pub struct DirectionSelector {
    forward: Encoder,
    backward: Encoder,
    projection: String,
}

impl DirectionSelector {
    pub const PREFIX: &'static str = "selector";

    pub fn new(vocab_size: usize, dim: usize) -> Self {
        DirectionSelector {
            forward: Encoder::new("selector.embed", "selector.fwd.gru", vocab_size, dim),
            backward: Encoder::new("selector.embed", "selector.bwd.gru", vocab_size, dim),
            projection: "selector.w_d".into(),
        }
    }

    pub fn declare<F: Real, R: Rng>(&self, store: &mut ParamStore<F>, rng: &mut R) -> Result<()> {
        self.forward.declare(store, rng)?;
        self.backward.declare(store, rng)?;
        store.insert_uniform(self.projection.as_str(), &[1, 2 * self.forward.dim()], rng)
    }

    pub fn forward_branch(&self) -> &Encoder {
        &self.forward
    }

    pub fn backward_branch(&self) -> &Encoder {
        &self.backward
    }

    pub fn param_names(&self) -> Vec<&str> {
        let mut v = vec!["selector.embed", self.projection.as_str()];
        v.extend(self.forward.gru().param_names());
        v.extend(self.backward.gru().param_names());
        v
    }

    /// Pre-sigmoid score of the forward arrangement.
    pub fn logit_on<F: Real>(&self, tape: &mut Tape<'_, F>, fwd: &[usize], bwd: &[usize]) -> Result<NodeId> {
        if fwd.is_empty() || bwd.is_empty() {
            return invalid("cannot score an empty arrangement");
        }
        let f = self.forward.encode_on(tape, fwd)?;
        let b = self.backward.encode_on(tape, bwd)?;
        let joined = tape.concat(&[f.context, b.context]);
        let w = tape.param(&self.projection);
        Ok(tape.matvec(w, joined))
    }

    pub fn loss_on<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        fwd: &[usize],
        bwd: &[usize],
        label: Direction,
    ) -> Result<NodeId> {
        let logit = self.logit_on(tape, fwd, bwd)?;
        Ok(tape.sigmoid_bce(logit, label == Direction::Forward))
    }

    pub fn score<F: Real>(&self, params: &ParamStore<F>, fwd: &[usize], bwd: &[usize]) -> Result<f64> {
        let mut tape = Tape::new(params);
        let logit = self.logit_on(&mut tape, fwd, bwd)?;
        let z = tape.scalar(logit).to_f64().expect("finite logit");
        Ok(if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        })
    }

    /// Scores `fwd` against `bwd` and picks forward iff the score is at least 0.5.
    pub fn select<F: Real>(&self, params: &ParamStore<F>, fwd: Vec<usize>, bwd: Vec<usize>) -> Result<AssembledReply> {
        let score = self.score(params, &fwd, &bwd)?;
        Ok(AssembledReply {
            forward: fwd,
            backward: bwd,
            score,
            chosen: if score >= 0.5 {
                Direction::Forward
            } else {
                Direction::Backward
            },
        })
    }
}
