//! Pairwise matching head: decides whether two embeddings come from the same
//! wearer at the same time, plus a majority-vote ensemble for three or more
//! devices.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{Embedding, Encoder, EncoderError};
use crate::nn::{load_into, relu_backward, relu_inplace, sigmoid, to_f32, Linear, NamedTensor, Param, Sgd, StateDict};
use crate::pairs::{AlignedPair, PairLabel};
use crate::signal::{Window, WindowKey};

#[derive(Debug, Error, PartialEq)]
pub enum MatcherError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("not enough pairs: needed {needed}, available {available}")]
    NotEnoughPairs { needed: usize, available: usize },
    #[error("training pairs contain a single class ({0:?})")]
    DegenerateLabels(PairLabel),
    #[error("ensemble needs at least 3 devices, got {0}")]
    TooFewDevices(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// How two L2-normalized embeddings `a`, `b` form the head's input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairInput {
    /// `[a, b]`
    Concat,
    /// `[|a − b|, a ⊙ b]`
    #[default]
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherArchitecture {
    pub embedding_dim: usize,
    /// Hidden widths between the `2 × embedding_dim` input and the logit.
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub input: PairInput,
}

impl MatcherArchitecture {
    /// `2·dim → 64 → 1`.
    pub fn standard(embedding_dim: usize) -> Self {
        MatcherArchitecture {
            embedding_dim,
            hidden: vec![64],
            input: PairInput::default(),
        }
    }

    /// Appends the head input for the ordered pair `(a, b)`.
    fn push_features(&self, a: &[f32], b: &[f32], out: &mut Vec<f32>) {
        match self.input {
            PairInput::Concat => {
                out.extend_from_slice(a);
                out.extend_from_slice(b);
            }
            PairInput::Symmetric => {
                out.extend(a.iter().zip(b).map(|(x, y)| (x - y).abs()));
                out.extend(a.iter().zip(b).map(|(x, y)| x * y));
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        2 * self.embedding_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherHyperparams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of pairs held out for validation metrics and checkpointing.
    pub val_fraction: f64,
}

impl Default for MatcherHyperparams {
    fn default() -> Self {
        MatcherHyperparams {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-2,
            batch_size: 64,
            epochs: 100,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub probability: f64,
    pub label: PairLabel,
    pub threshold: f64,
}

impl MatchDecision {
    pub fn new(probability: f64, threshold: f64) -> Self {
        let label = if probability >= threshold {
            PairLabel::Matched
        } else {
            PairLabel::Unmatched
        };
        MatchDecision { probability, label, threshold }
    }

    pub fn is_matched(&self) -> bool {
        self.label == PairLabel::Matched
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDecision {
    pub i: usize,
    pub j: usize,
    pub decision: MatchDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDecision {
    pub label: PairLabel,
    pub matched_pairs: usize,
    pub pairwise: Vec<PairwiseDecision>,
}

/// Strict-majority vote; ties count as UNMATCHED.
pub fn majority_vote(labels: &[PairLabel]) -> PairLabel {
    let matched = labels.iter().filter(|l| **l == PairLabel::Matched).count();
    if 2 * matched > labels.len() {
        PairLabel::Matched
    } else {
        PairLabel::Unmatched
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatcherModel {
    pub arch: MatcherArchitecture,
    layers: Vec<Linear<f32>>,
}

impl MatcherModel {
    pub fn new<R: Rng + ?Sized>(arch: &MatcherArchitecture, rng: &mut R) -> Result<Self, MatcherError> {
        if arch.embedding_dim == 0 || arch.hidden.contains(&0) {
            return Err(MatcherError::InvalidConfig(format!("bad matcher architecture {arch:?}")));
        }
        let mut layers = Vec::new();
        let mut inputs = arch.input_dim();
        for (i, &w) in arch.hidden.iter().chain(&[1]).enumerate() {
            layers.push(Linear::new(&format!("match{i}"), inputs, w, rng));
            inputs = w;
        }
        Ok(MatcherModel { arch: arch.clone(), layers })
    }

    fn check_dims(&self, a: &[f32], b: &[f32]) -> Result<(), MatcherError> {
        let d = self.arch.embedding_dim;
        if a.len() != d || b.len() != d {
            return Err(MatcherError::ShapeMismatch(format!(
                "embeddings of size {} and {}, matcher expects {d}",
                a.len(),
                b.len()
            )));
        }
        Ok(())
    }

    /// Logits for `rows` stacked inputs.
    fn forward(&self, x: &[f32], rows: usize) -> Vec<f32> {
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h, rows);
            if i + 1 < self.layers.len() {
                relu_inplace(&mut h);
            }
        }
        h
    }

    /// Matched probability, averaged over both input orders.
    pub fn probability(&self, a: &[f32], b: &[f32]) -> Result<f64, MatcherError> {
        self.check_dims(a, b)?;
        let (na, nb) = (l2_normalized(a), l2_normalized(b));
        let mut x = Vec::with_capacity(4 * self.arch.embedding_dim);
        self.arch.push_features(&na, &nb, &mut x);
        self.arch.push_features(&nb, &na, &mut x);
        let logits = self.forward(&x, 2);
        Ok((sigmoid(logits[0] as f64) + sigmoid(logits[1] as f64)) / 2.0)
    }

    pub fn decide(&self, a: &[f32], b: &[f32], threshold: f64) -> Result<MatchDecision, MatcherError> {
        Ok(MatchDecision::new(self.probability(a, b)?, threshold))
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f32>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

impl StateDict for MatcherModel {
    fn state(&self) -> Vec<NamedTensor> {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: to_f32(&p.value),
            })
            .collect()
    }

    fn load_state(&mut self, tensors: &[NamedTensor]) -> Result<(), String> {
        let mut params = self.params_mut();
        if tensors.len() != params.len() {
            return Err(format!("expected {} matcher tensors, found {}", params.len(), tensors.len()));
        }
        for (p, t) in params.iter_mut().zip(tensors) {
            load_into(&mut p.value, &p.name, &p.shape, t)?;
        }
        Ok(())
    }
}

fn l2_normalized(v: &[f32]) -> Vec<f32> {
    let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| (*x as f64 / norm) as f32).collect()
}

/// Decision for a single embedding pair.
pub fn match_embeddings(
    matcher: &MatcherModel,
    e1: &Embedding,
    e2: &Embedding,
    threshold: f64,
) -> Result<MatchDecision, MatcherError> {
    if e1.sensor_set != e2.sensor_set {
        return Err(MatcherError::ShapeMismatch(format!(
            "embeddings from different models ({} vs {})",
            e1.sensor_set, e2.sensor_set
        )));
    }
    matcher.decide(&e1.values, &e2.values, threshold)
}

/// Majority vote over all `k(k−1)/2` pairwise decisions.
pub fn ensemble_match(
    matcher: &MatcherModel,
    embeddings: &[Embedding],
    threshold: f64,
) -> Result<EnsembleDecision, MatcherError> {
    let k = embeddings.len();
    if k < 3 {
        return Err(MatcherError::TooFewDevices(k));
    }
    let mut pairwise = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let decision = match_embeddings(matcher, &embeddings[i], &embeddings[j], threshold)?;
            pairwise.push(PairwiseDecision { i, j, decision });
        }
    }
    let labels: Vec<PairLabel> = pairwise.iter().map(|p| p.decision.label).collect();
    Ok(EnsembleDecision {
        label: majority_vote(&labels),
        matched_pairs: labels.iter().filter(|l| **l == PairLabel::Matched).count(),
        pairwise,
    })
}

/// A labeled embedding pair for matcher training.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddingPair {
    pub a: Vec<f32>,
    pub b: Vec<f32>,
    pub label: PairLabel,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatcherEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatcherLog {
    pub epochs: Vec<MatcherEpochLog>,
    pub best_epoch: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
}

impl MatcherLog {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_loss", "val_accuracy"])?;
        for e in &self.epochs {
            w.write_record([e.epoch.to_string(), e.train_loss.to_string(), opt(e.val_loss), opt(e.val_accuracy)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedMatcher {
    pub model: MatcherModel,
    pub log: MatcherLog,
}

/// Embeds every window referenced by `pairs` with the frozen encoder.
pub fn embed_pairs(
    pairs: &[AlignedPair<'_>],
    encoder: &Encoder<f32>,
) -> Result<Vec<LabeledEmbeddingPair>, MatcherError> {
    let mut unique: Vec<&Window> = Vec::new();
    let mut slot: HashMap<WindowKey, usize> = HashMap::new();
    for p in pairs {
        for w in [p.window_a, p.window_b] {
            slot.entry(w.meta.key()).or_insert_with(|| {
                unique.push(w);
                unique.len() - 1
            });
        }
    }
    let emb = encoder.embed_all(&unique)?;
    Ok(pairs
        .iter()
        .map(|p| LabeledEmbeddingPair {
            a: emb[slot[&p.window_a.meta.key()]].values.clone(),
            b: emb[slot[&p.window_b.meta.key()]].values.clone(),
            label: p.label,
        })
        .collect())
}

/// Trains a matcher on window pairs embedded by a frozen encoder.
pub fn train_matcher<R: Rng + ?Sized>(
    pairs: &[AlignedPair<'_>],
    encoder: &Encoder<f32>,
    arch: &MatcherArchitecture,
    hp: &MatcherHyperparams,
    rng: &mut R,
) -> Result<TrainedMatcher, MatcherError> {
    check_labels(pairs.iter().map(|p| p.label), pairs.len())?;
    let examples = embed_pairs(pairs, encoder)?;
    train_matcher_on_embeddings(&examples, arch, hp, rng)
}

fn check_labels(labels: impl Iterator<Item = PairLabel>, n: usize) -> Result<(), MatcherError> {
    let mut labels = labels.peekable();
    let Some(&first) = labels.peek() else {
        return Err(MatcherError::NotEnoughPairs { needed: 2, available: n });
    };
    if labels.all(|l| l == first) {
        return Err(MatcherError::DegenerateLabels(first));
    }
    Ok(())
}

pub fn train_matcher_on_embeddings<R: Rng + ?Sized>(
    examples: &[LabeledEmbeddingPair],
    arch: &MatcherArchitecture,
    hp: &MatcherHyperparams,
    rng: &mut R,
) -> Result<TrainedMatcher, MatcherError> {
    check_labels(examples.iter().map(|e| e.label), examples.len())?;
    if hp.batch_size == 0 || hp.epochs == 0 || !(hp.lr > 0.0) || !(0.0..0.9).contains(&hp.val_fraction) {
        return Err(MatcherError::InvalidConfig(format!("bad matcher hyperparameters {hp:?}")));
    }
    let mut model = MatcherModel::new(arch, rng)?;
    for e in examples {
        model.check_dims(&e.a, &e.b)?;
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let n_val = (examples.len() as f64 * hp.val_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    if train_idx.is_empty() {
        return Err(MatcherError::NotEnoughPairs { needed: n_val + 1, available: examples.len() });
    }
    // both input orders of every pair
    let rows = |idx: &[usize]| -> (Vec<f32>, Vec<f32>) {
        let mut x = Vec::with_capacity(idx.len() * 2 * arch.input_dim());
        let mut y = Vec::with_capacity(idx.len() * 2);
        for &i in idx {
            let e = &examples[i];
            let (na, nb) = (l2_normalized(&e.a), l2_normalized(&e.b));
            let t = if e.label == PairLabel::Matched { 1.0 } else { 0.0 };
            for (p, q) in [(&na, &nb), (&nb, &na)] {
                arch.push_features(p, q, &mut x);
                y.push(t);
            }
        }
        (x, y)
    };
    let (train_x, train_y) = rows(train_idx);
    let (val_x, val_y) = rows(val_idx);
    let width = arch.input_dim();
    let n_rows = train_y.len();

    let mut opt = Sgd::new(hp.momentum, hp.weight_decay);
    let mut log = MatcherLog {
        train_pairs: train_idx.len(),
        val_pairs: val_idx.len(),
        ..Default::default()
    };
    let mut best = (f64::INFINITY, model.clone());
    let mut row_order: Vec<usize> = (0..n_rows).collect();
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for epoch in 0..hp.epochs {
        row_order.shuffle(rng);
        let mut total = 0.0;
        for chunk in row_order.chunks(hp.batch_size) {
            bx.clear();
            by.clear();
            for &r in chunk {
                bx.extend_from_slice(&train_x[r * width..(r + 1) * width]);
                by.push(train_y[r]);
            }
            total += model_step(&mut model, &mut opt, &bx, &by, hp.lr) * chunk.len() as f64;
        }
        let train_loss = total / n_rows as f64;
        let (val_loss, val_accuracy) = if val_y.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_rows(&model, &val_x, &val_y);
            (Some(l), Some(a))
        };
        log.epochs.push(MatcherEpochLog { epoch, train_loss, val_loss, val_accuracy });
        let score = val_loss.unwrap_or(train_loss);
        if score < best.0 {
            best = (score, model.clone());
            log.best_epoch = epoch;
        }
    }
    if let Some(e) = log.epochs.get(log.best_epoch) {
        log::debug!(
            "matcher best epoch {}: val loss {:?}, val accuracy {:?}",
            e.epoch,
            e.val_loss,
            e.val_accuracy
        );
    }
    Ok(TrainedMatcher { model: best.1, log })
}

fn bce(logit: f64, target: f64) -> f64 {
    // softplus(l) − t·l, written to avoid overflow
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// One SGD step on a minibatch; returns its mean loss.
fn model_step(model: &mut MatcherModel, opt: &mut Sgd<f32>, x: &[f32], y: &[f32], lr: f64) -> f64 {
    let rows = y.len();
    let mut inputs = Vec::with_capacity(model.layers.len());
    let mut h = x.to_vec();
    for (i, l) in model.layers.iter().enumerate() {
        let out = l.forward(&h, rows);
        inputs.push(std::mem::replace(&mut h, out));
        if i + 1 < model.layers.len() {
            relu_inplace(&mut h);
        }
    }
    let mut loss = 0.0;
    let mut d: Vec<f32> = Vec::with_capacity(rows);
    for (l, t) in h.iter().zip(y) {
        loss += bce(*l as f64, *t as f64);
        d.push(((sigmoid(*l as f64) - *t as f64) / rows as f64) as f32);
    }
    for p in model.params_mut() {
        p.zero_grad();
    }
    for i in (0..model.layers.len()).rev() {
        d = model.layers[i].backward(&inputs[i], rows, &d);
        if i > 0 {
            relu_backward(&inputs[i], &mut d);
        }
    }
    opt.step(&mut model.params_mut(), lr);
    loss / rows as f64
}

/// Mean BCE and accuracy at 0.5 over stacked rows.
fn evaluate_rows(model: &MatcherModel, x: &[f32], y: &[f32]) -> (f64, f64) {
    let logits = model.forward(x, y.len());
    let mut loss = 0.0;
    let mut correct = 0;
    for (l, t) in logits.iter().zip(y) {
        loss += bce(*l as f64, *t as f64);
        if (*l >= 0.0) == (*t > 0.5) {
            correct += 1;
        }
    }
    (loss / y.len() as f64, correct as f64 / y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SensorSet;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
        (0..d).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn untrained(dim: usize) -> MatcherModel {
        MatcherModel::new(&MatcherArchitecture::standard(dim), &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn separable(n: usize, dim: usize, seed: u64) -> Vec<LabeledEmbeddingPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let a = random_vec(&mut rng, dim);
                if i % 2 == 0 {
                    let b = a.iter().map(|v| v + 0.05 * rng.random_range(-1.0f32..1.0)).collect();
                    LabeledEmbeddingPair { a, b, label: PairLabel::Matched }
                } else {
                    let b = random_vec(&mut rng, dim);
                    LabeledEmbeddingPair { a, b, label: PairLabel::Unmatched }
                }
            })
            .collect()
    }

    #[test]
    fn separable_fixture_is_learned() {
        let dim = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hp = MatcherHyperparams { epochs: 60, ..Default::default() };
        let trained =
            train_matcher_on_embeddings(&separable(1200, dim, 2), &MatcherArchitecture::standard(dim), &hp, &mut rng)
                .unwrap();
        let best = &trained.log.epochs[trained.log.best_epoch];
        assert!(best.val_accuracy.unwrap() >= 0.99, "{best:?}");
        // fresh held-out pairs
        let test = separable(400, dim, 3);
        let correct = test
            .iter()
            .filter(|e| trained.model.decide(&e.a, &e.b, 0.5).unwrap().label == e.label)
            .count();
        assert!(correct as f64 / test.len() as f64 >= 0.99);
    }

    #[test]
    fn single_class_rejected() {
        let mut all = separable(10, 4, 0);
        all.retain(|e| e.label == PairLabel::Matched);
        let r = train_matcher_on_embeddings(
            &all,
            &MatcherArchitecture::standard(4),
            &MatcherHyperparams::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(r.unwrap_err(), MatcherError::DegenerateLabels(PairLabel::Matched));
    }

    #[test]
    fn threshold_semantics() {
        let m = untrained(8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = (random_vec(&mut rng, 8), random_vec(&mut rng, 8));
        let d = m.decide(&a, &b, 1.0).unwrap();
        assert!(d.probability < 1.0);
        assert_eq!(d.label, PairLabel::Unmatched);
        assert_eq!(m.decide(&a, &b, 0.0).unwrap().label, PairLabel::Matched);
        assert!(matches!(m.decide(&a, &b[..7], 0.5), Err(MatcherError::ShapeMismatch(_))));
    }

    #[test]
    fn majority_rules() {
        use PairLabel::*;
        assert_eq!(majority_vote(&[Matched, Matched, Unmatched]), Matched);
        assert_eq!(majority_vote(&[Matched, Matched, Matched, Unmatched, Unmatched, Unmatched]), Unmatched);
        assert_eq!(majority_vote(&[Unmatched; 3]), Unmatched);
        assert_eq!(majority_vote(&[Matched; 6]), Matched);
    }

    #[test]
    fn ensemble_needs_three() {
        let m = untrained(4);
        let e = Embedding::from_values(vec![1.0; 4], SensorSet::single(crate::signal::SensorKind::Acc));
        assert_eq!(
            ensemble_match(&m, &[e.clone(), e.clone()], 0.5).unwrap_err(),
            MatcherError::TooFewDevices(2)
        );
        let d = ensemble_match(&m, &[e.clone(), e.clone(), e.clone(), e], 0.5).unwrap();
        assert_eq!(d.pairwise.len(), 6);
        // identical inputs give identical pairwise decisions, so the vote is unanimous
        let expect = d.pairwise[0].decision.label;
        assert_eq!(d.label, expect);
    }

    #[test]
    fn state_round_trip() {
        let m = untrained(8);
        let mut other = MatcherModel::new(&m.arch, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        other.load_state(&m.state()).unwrap();
        assert_eq!(other, m);
    }

    proptest! {
        #[test]
        fn symmetric_probability(a in prop::collection::vec(-5.0f32..5.0, 8), b in prop::collection::vec(-5.0f32..5.0, 8)) {
            let m = untrained(8);
            let p = m.probability(&a, &b).unwrap();
            prop_assert_eq!(p.to_bits(), m.probability(&b, &a).unwrap().to_bits());
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn raising_threshold_never_matches_more(
            a in prop::collection::vec(-5.0f32..5.0, 8),
            b in prop::collection::vec(-5.0f32..5.0, 8),
            t1 in 0.0f64..1.0,
            t2 in 0.0f64..1.0,
        ) {
            let m = untrained(8);
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            if !m.decide(&a, &b, lo).unwrap().is_matched() {
                prop_assert!(!m.decide(&a, &b, hi).unwrap().is_matched());
            }
        }

        #[test]
        fn unanimous_ensembles(labels in prop::collection::vec(any::<bool>(), 3..20)) {
            let all_m: Vec<PairLabel> = labels.iter().map(|_| PairLabel::Matched).collect();
            let all_u: Vec<PairLabel> = labels.iter().map(|_| PairLabel::Unmatched).collect();
            prop_assert_eq!(majority_vote(&all_m), PairLabel::Matched);
            prop_assert_eq!(majority_vote(&all_u), PairLabel::Unmatched);
        }
    }
}
