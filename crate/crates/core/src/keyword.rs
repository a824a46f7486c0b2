//! Post emotion classifier and the two dictionary-restricted keyword predictors.

use rand::Rng;

use crate::corpus::Emotion;
use crate::encoder::Encoder;
use crate::error::{invalid, Error, Result};
use crate::numcore::{argmax, softmax, NodeId, ParamStore, Real, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct EmotionPrediction<F = f32> {
    pub category: Emotion,
    pub distribution: Vec<F>,
}

/// GRU classifier over the post: softmax of a projection of the summed states.
#[derive(Clone, Debug)]
pub struct EmotionClassifier {
    encoder: Encoder,
    out: String,
    out_b: String,
}

impl EmotionClassifier {
    pub const PREFIX: &'static str = "emoclf";

    pub fn new(vocab_size: usize, dim: usize) -> Self {
        EmotionClassifier {
            encoder: Encoder::new("emoclf.embed", "emoclf.gru", vocab_size, dim),
            out: "emoclf.out".into(),
            out_b: "emoclf.out_b".into(),
        }
    }

    pub fn declare<F: Real, R: Rng>(&self, store: &mut ParamStore<F>, rng: &mut R) -> Result<()> {
        self.encoder.declare(store, rng)?;
        store.insert_uniform(self.out.as_str(), &[Emotion::COUNT, self.encoder.dim()], rng)?;
        store.insert_zeros(self.out_b.as_str(), &[Emotion::COUNT])
    }

    pub fn param_names(&self) -> Vec<&str> {
        let mut v = self.encoder.param_names();
        v.extend([self.out.as_str(), self.out_b.as_str()]);
        v
    }

    pub fn logits_on<F: Real>(&self, tape: &mut Tape<'_, F>, post: &[usize]) -> Result<NodeId> {
        let enc = self.encoder.encode_on(tape, post)?;
        let (w, b) = (tape.param(&self.out), tape.param(&self.out_b));
        let wx = tape.matvec(w, enc.context);
        Ok(tape.add(wx, b))
    }

    pub fn loss_on<F: Real>(&self, tape: &mut Tape<'_, F>, post: &[usize], label: Emotion) -> Result<NodeId> {
        let logits = self.logits_on(tape, post)?;
        Ok(tape.softmax_cross_entropy(logits, None, label.index()))
    }

    pub fn classify<F: Real>(&self, params: &ParamStore<F>, post: &[usize]) -> Result<EmotionPrediction<F>> {
        let mut tape = Tape::new(params);
        let logits = self.logits_on(&mut tape, post)?;
        let dist = softmax(&tape.tensor(logits), None)?.into_data();
        Ok(EmotionPrediction {
            category: Emotion::from_index(argmax(&dist)).expect("seven logits"),
            distribution: dist,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeywordKind {
    Emotion,
    Topic,
}

impl KeywordKind {
    fn tag(self) -> &'static str {
        match self {
            KeywordKind::Emotion => "et",
            KeywordKind::Topic => "tp",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeywordPrediction<F = f32> {
    /// Vocabulary id of the most probable keyword.
    pub token: usize,
    /// Probabilities over the full vocabulary, zero outside the dictionary.
    pub distribution: Vec<F>,
}

/// `softmax(W [context; category_embedding])` over the in-vocabulary words of
/// one dictionary. The projection has one row per dictionary word.
#[derive(Clone, Debug)]
pub struct KeywordPredictor {
    kind: KeywordKind,
    categories: String,
    projection: String,
    support: Vec<usize>,
    num_categories: usize,
    context_dim: usize,
    category_dim: usize,
}

impl KeywordPredictor {
    /// `support` holds the vocabulary ids of the dictionary words.
    pub fn new(
        kind: KeywordKind,
        mut support: Vec<usize>,
        num_categories: usize,
        context_dim: usize,
        category_dim: usize,
    ) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::Config(format!(
                "no {} dictionary word occurs in the vocabulary",
                match kind {
                    KeywordKind::Emotion => "emotion",
                    KeywordKind::Topic => "topic",
                }
            )));
        }
        support.sort_unstable();
        support.dedup();
        Ok(KeywordPredictor {
            kind,
            categories: format!("keyword.cat_{}", kind.tag()),
            projection: format!("keyword.w_{}", kind.tag()),
            support,
            num_categories,
            context_dim,
            category_dim,
        })
    }

    pub fn kind(&self) -> KeywordKind {
        self.kind
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn declare<F: Real, R: Rng>(&self, store: &mut ParamStore<F>, rng: &mut R) -> Result<()> {
        store.insert_uniform(
            self.categories.as_str(),
            &[self.num_categories, self.category_dim],
            rng,
        )?;
        store.insert_uniform(
            self.projection.as_str(),
            &[self.support.len(), self.context_dim + self.category_dim],
            rng,
        )
    }

    pub fn param_names(&self) -> Vec<&str> {
        vec![self.categories.as_str(), self.projection.as_str()]
    }

    /// Logits over the support, in support order.
    pub fn logits_on<F: Real>(&self, tape: &mut Tape<'_, F>, context: NodeId, category: usize) -> Result<NodeId> {
        if category >= self.num_categories {
            return invalid(format!(
                "category {category} outside 0..{}",
                self.num_categories
            ));
        }
        let k = tape.embed_param(&self.categories, category);
        let x = tape.concat(&[context, k]);
        let w = tape.param(&self.projection);
        Ok(tape.matvec(w, x))
    }

    pub fn loss_on<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        context: NodeId,
        category: usize,
        target: usize,
    ) -> Result<NodeId> {
        let pos = self
            .support
            .binary_search(&target)
            .map_err(|_| Error::InvalidArgument(format!("token {target} is not a dictionary keyword")))?;
        let logits = self.logits_on(tape, context, category)?;
        Ok(tape.softmax_cross_entropy(logits, None, pos))
    }

    pub fn predict_on<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        context: NodeId,
        category: usize,
        vocab_size: usize,
    ) -> Result<KeywordPrediction<F>> {
        let logits = self.logits_on(tape, context, category)?;
        let probs = softmax(&Tensor::from_slice(tape.value(logits)), None)?;
        let mut distribution = vec![F::zero(); vocab_size];
        for (&id, &p) in self.support.iter().zip(probs.data()) {
            distribution[id] = p;
        }
        Ok(KeywordPrediction {
            token: self.support[argmax(probs.data())],
            distribution,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::{check_gradients, FD_STEP};
    use crate::numcore::{Adam, Gradients};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const V: usize = 20;

    fn predictor(kind: KeywordKind) -> (KeywordPredictor, ParamStore<f64>) {
        let cats = if kind == KeywordKind::Emotion { 7 } else { 10 };
        let kp = KeywordPredictor::new(kind, vec![9, 4, 6, 15], cats, 5, 3).unwrap();
        let mut p = ParamStore::new();
        kp.declare(&mut p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (kp, p)
    }

    #[test]
    fn distribution_lives_on_support() {
        for kind in [KeywordKind::Emotion, KeywordKind::Topic] {
            let (kp, p) = predictor(kind);
            let mut t = Tape::new(&p);
            let ctx = t.input_vec(vec![0.3, -0.2, 0.9, 0.0, 0.1]);
            let pred = kp.predict_on(&mut t, ctx, 2, V).unwrap();
            let total: f64 = pred.distribution.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            for (i, &q) in pred.distribution.iter().enumerate() {
                assert_eq!(q > 0.0, kp.support().contains(&i));
            }
            assert!(kp.support().contains(&pred.token));
        }
    }

    #[test]
    fn zero_projection_is_uniform_and_picks_first_support_word() {
        let (kp, mut p) = predictor(KeywordKind::Emotion);
        p.get_mut("keyword.w_et").unwrap().data_mut().fill(0.0);
        let mut t = Tape::new(&p);
        let ctx = t.input_vec(vec![1.0; 5]);
        let pred = kp.predict_on(&mut t, ctx, 0, V).unwrap();
        for &id in kp.support() {
            assert!((pred.distribution[id] - 0.25).abs() < 1e-12);
        }
        assert_eq!(pred.token, 4);
    }

    #[test]
    fn logits_are_linear_in_concatenated_input() {
        let (kp, p) = predictor(KeywordKind::Topic);
        let ctx = [0.5, -0.1, 0.2, 0.7, -0.4];
        let mut t = Tape::new(&p);
        let c = t.input_vec(ctx.to_vec());
        let l = kp.logits_on(&mut t, c, 7).unwrap();
        let w = p.get("keyword.w_tp").unwrap();
        let k = p.get("keyword.cat_tp").unwrap().row(7);
        let x: Vec<f64> = ctx.iter().chain(k).copied().collect();
        for r in 0..4 {
            let expect: f64 = w.row(r).iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((t.value(l)[r] - expect).abs() < 1e-12);
        }
        let mut t2 = Tape::new(&p);
        let c2 = t2.input_vec(ctx.to_vec());
        let l2 = kp.logits_on(&mut t2, c2, 3).unwrap();
        assert_ne!(t.value(l), t2.value(l2));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            KeywordPredictor::new(KeywordKind::Topic, vec![], 10, 4, 4),
            Err(Error::Config(_))
        ));
        let (kp, p) = predictor(KeywordKind::Emotion);
        let mut t = Tape::new(&p);
        let ctx = t.input_vec(vec![0.0; 5]);
        assert!(kp.logits_on(&mut t, ctx, 7).is_err());
        assert!(kp.loss_on(&mut t, ctx, 0, 5).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (kp, p) = predictor(KeywordKind::Emotion);
        let names = kp.param_names();
        let res = check_gradients(&p, &names, FD_STEP, 20, |t| {
            let ctx = t.input_vec(vec![0.3, -0.2, 0.9, 0.05, 0.1]);
            kp.loss_on(t, ctx, 3, 6)
        })
        .unwrap();
        for r in res {
            assert!(r.max_rel_err < 1e-3, "{r:?}");
        }
    }

    #[test]
    fn planted_category_keyword_association_is_learned() {
        // category c always goes with support word c, whatever the context
        let (kp, mut p) = predictor(KeywordKind::Emotion);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let contexts: Vec<Vec<f64>> = (0..8).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut adam = Adam::new();
        for step in 0..300 {
            let mut acc = Gradients::zeros_like(&p);
            for (i, ctx) in contexts.iter().enumerate() {
                let c = (i + step) % 4;
                let mut t = Tape::new(&p);
                let x = t.input_vec(ctx.clone());
                let l = kp.loss_on(&mut t, x, c, kp.support()[c]).unwrap();
                acc.accumulate(&t.backward(l).unwrap()).unwrap();
            }
            adam.step(&mut p, &acc, 0.05).unwrap();
        }
        for ctx in &contexts {
            for c in 0..4 {
                let mut t = Tape::new(&p);
                let x = t.input_vec(ctx.clone());
                let pred = kp.predict_on(&mut t, x, c, V).unwrap();
                let want = kp.support()[c];
                assert_eq!(pred.token, want);
                assert!(pred.distribution[want] > 0.9);
            }
        }
    }

    #[test]
    fn uniform_classifier_defaults_to_happy() {
        let clf = EmotionClassifier::new(V, 4);
        let mut p = ParamStore::<f64>::new();
        clf.declare(&mut p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        p.get_mut("emoclf.out").unwrap().data_mut().fill(0.0);
        let pred = clf.classify(&p, &[3, 4]).unwrap();
        assert_eq!(pred.category, Emotion::Happy);
        for &q in &pred.distribution {
            assert!((q - 1.0 / 7.0).abs() < 1e-12);
        }
        assert!(clf.classify(&p, &[]).is_err());
    }

    #[test]
    fn classifier_overfits_cue_words() {
        // 20 posts, the cue token (id 4 + category) fixes the label
        let clf = EmotionClassifier::new(V, 8);
        let mut p = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        clf.declare(&mut p, &mut rng).unwrap();
        let data: Vec<(Vec<usize>, Emotion)> = (0..20)
            .map(|i| {
                let e = Emotion::from_index(i % 7).unwrap();
                let mut post = vec![rng.gen_range(12..V), rng.gen_range(12..V)];
                post.insert(rng.gen_range(0..3), 4 + e.index());
                (post, e)
            })
            .collect();
        let mut adam = Adam::new();
        for _ in 0..60 {
            for (post, e) in &data {
                let mut t = Tape::new(&p);
                let l = clf.loss_on(&mut t, post, *e).unwrap();
                let g = t.backward(l).unwrap();
                adam.step(&mut p, &g, 0.01).unwrap();
            }
        }
        let correct = data
            .iter()
            .filter(|(post, e)| clf.classify(&p, post).unwrap().category == *e)
            .count();
        assert_eq!(correct, 20);
    }
}
