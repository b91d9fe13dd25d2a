//! Linear-chain output layer: sequence scoring, cost-augmented
//! log-partition, margin loss with analytic gradients, and Viterbi
//! decoding.
//!
//! The score of a tag sequence y for features h is
//! initial[y_1] + Σ_t (emission · h_t)[y_t] + Σ_{t≥2} A[y_{t−1}, y_t].
//! The training loss augments the partition with a per-position cost, so
//! sequences far from the gold one must be beaten by a larger margin.

use crate::error::{Error, Result};
use crate::numerics::ops::{logsumexp, softmax_into};
use crate::numerics::ParamRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    Hamming,
}

/// Decomposable cost added to every non-gold tag's emission score.
#[derive(Debug, Clone, Copy)]
pub struct CostSpec {
    pub kind: CostKind,
    pub weight: f64,
}

impl CostSpec {
    pub fn hamming(weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::config(format!(
                "cost weight must be a nonnegative finite number, got {weight}"
            )));
        }
        Ok(CostSpec {
            kind: CostKind::Hamming,
            weight,
        })
    }

    /// Weight zero: plain conditional log-likelihood.
    pub fn none() -> Self {
        CostSpec {
            kind: CostKind::Hamming,
            weight: 0.0,
        }
    }
}

/// Emission projection [labels × features], transition matrix
/// A[y_prev, y_cur], and initial-tag score vector.
#[derive(Clone, Debug)]
pub struct CrfLayer {
    pub emission: ParamRef,
    pub transitions: ParamRef,
    pub initial: ParamRef,
}

impl CrfLayer {
    pub fn new(emission: ParamRef, transitions: ParamRef, initial: ParamRef) -> Result<Self> {
        let labels = emission.borrow().value.rows();
        {
            let t = &transitions.borrow().value;
            if t.shape() != [labels, labels] {
                return Err(Error::shape("transitions", &[labels, labels], t.shape()));
            }
        }
        {
            let i = &initial.borrow().value;
            if i.shape() != [labels] {
                return Err(Error::shape("initial", &[labels], i.shape()));
            }
        }
        Ok(CrfLayer {
            emission,
            transitions,
            initial,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.emission.borrow().value.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.emission.borrow().value.cols()
    }

    fn validate(&self, h: &[Vec<f64>], y: Option<&[usize]>) -> Result<()> {
        if h.is_empty() {
            return Err(Error::domain("cannot score an empty sequence"));
        }
        let fdim = self.feature_dim();
        for (t, ht) in h.iter().enumerate() {
            if ht.len() != fdim {
                return Err(Error::shape(
                    &format!("emission input at position {t}"),
                    &[fdim],
                    &[ht.len()],
                ));
            }
        }
        if let Some(y) = y {
            if y.len() != h.len() {
                return Err(Error::domain(format!(
                    "{} features but {} tags",
                    h.len(),
                    y.len()
                )));
            }
            let labels = self.num_labels();
            if let Some(&bad) = y.iter().find(|&&t| t >= labels) {
                return Err(Error::domain(format!(
                    "tag index {bad} out of range for {labels} labels"
                )));
            }
        }
        Ok(())
    }

    /// Per-position label scores e_t = emission · h_t.
    fn emission_scores(&self, h: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let pair = self.emission.borrow();
        let e = &pair.value;
        let labels = e.rows();
        h.iter()
            .map(|ht| {
                (0..labels)
                    .map(|l| {
                        e.row(l)
                            .iter()
                            .zip(ht.iter())
                            .map(|(&w, &x)| w * x)
                            .sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }

    /// Adds `weight` to every label that disagrees with the gold tag.
    fn augment(scores: &mut [Vec<f64>], y_gold: &[usize], cost: CostSpec) {
        let CostKind::Hamming = cost.kind;
        if cost.weight == 0.0 {
            return;
        }
        for (row, &gold) in scores.iter_mut().zip(y_gold.iter()) {
            for (l, s) in row.iter_mut().enumerate() {
                if l != gold {
                    *s += cost.weight;
                }
            }
        }
    }

    /// Forward-recursion table over the given per-position scores.
    fn alphas(&self, scores: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let labels = self.num_labels();
        let trans_pair = self.transitions.borrow();
        let trans = &trans_pair.value;
        let init_pair = self.initial.borrow();
        let init = &init_pair.value;
        let mut alphas = Vec::with_capacity(scores.len());
        let first: Vec<f64> = (0..labels)
            .map(|l| init.data()[l] + scores[0][l])
            .collect();
        alphas.push(first);
        let mut buf = vec![0.0; labels];
        for row in &scores[1..] {
            let prev = alphas.last().expect("nonempty");
            let next: Vec<f64> = (0..labels)
                .map(|cur| {
                    for (k, b) in buf.iter_mut().enumerate() {
                        *b = prev[k] + trans.at(k, cur);
                    }
                    logsumexp(&buf).expect("at least one label") + row[cur]
                })
                .collect();
            alphas.push(next);
        }
        alphas
    }

    fn score_from_emissions(&self, scores: &[Vec<f64>], y: &[usize]) -> f64 {
        let trans_pair = self.transitions.borrow();
        let trans = &trans_pair.value;
        let init = self.initial.borrow();
        let mut s = init.value.data()[y[0]] + scores[0][y[0]];
        for t in 1..y.len() {
            s = s + trans.at(y[t - 1], y[t]) + scores[t][y[t]];
        }
        s
    }

    /// f(h, y): initial + emissions along y + transitions along y.
    pub fn score_sequence(&self, h: &[Vec<f64>], y: &[usize]) -> Result<f64> {
        self.validate(h, Some(y))?;
        Ok(self.score_from_emissions(&self.emission_scores(h), y))
    }

    /// log Σ_{y′} exp(f(h, y′) + weight · Hamming(y_gold, y′)), computed
    /// by the forward recursion with cost folded into the emissions.
    pub fn log_partition_augmented(
        &self,
        h: &[Vec<f64>],
        y_gold: &[usize],
        cost: CostSpec,
    ) -> Result<f64> {
        self.validate(h, Some(y_gold))?;
        let mut scores = self.emission_scores(h);
        Self::augment(&mut scores, y_gold, cost);
        let alphas = self.alphas(&scores);
        logsumexp(alphas.last().expect("nonempty sequence"))
    }

    /// Cost-augmented log-partition minus the gold score; ≥ 0 whenever
    /// the cost weight is.
    pub fn margin_loss(&self, h: &[Vec<f64>], y_gold: &[usize], cost: CostSpec) -> Result<f64> {
        self.validate(h, Some(y_gold))?;
        let mut scores = self.emission_scores(h);
        let gold = self.score_from_emissions(&scores, y_gold);
        Self::augment(&mut scores, y_gold, cost);
        let alphas = self.alphas(&scores);
        let log_z = logsumexp(alphas.last().expect("nonempty sequence"))?;
        Ok(log_z - gold)
    }

    /// Computes the margin loss, accumulates `scale` times its gradient
    /// into the layer parameters, and returns the gradient w.r.t. h.
    pub fn margin_loss_backward(
        &self,
        h: &[Vec<f64>],
        y_gold: &[usize],
        cost: CostSpec,
        scale: f64,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        self.validate(h, Some(y_gold))?;
        let labels = self.num_labels();
        let t_len = h.len();
        let mut scores = self.emission_scores(h);
        let gold_score = self.score_from_emissions(&scores, y_gold);
        Self::augment(&mut scores, y_gold, cost);
        let alphas = self.alphas(&scores);
        let log_z = logsumexp(alphas.last().expect("nonempty sequence"))?;
        let loss = log_z - gold_score;

        // d loss / d emission scores, including the gold subtraction
        let mut d_scores = vec![vec![0.0; labels]; t_len];
        let mut d_alpha = vec![0.0; labels];
        softmax_into(alphas.last().expect("nonempty"), &mut d_alpha);
        for v in d_alpha.iter_mut() {
            *v *= scale;
        }
        {
            let mut trans_pair = self.transitions.borrow_mut();
            let trans_pair = &mut *trans_pair;
            let mut buf = vec![0.0; labels];
            let mut weights = vec![0.0; labels];
            for t in (1..t_len).rev() {
                let mut d_prev = vec![0.0; labels];
                for cur in 0..labels {
                    let d = d_alpha[cur];
                    if d == 0.0 {
                        continue;
                    }
                    d_scores[t][cur] += d;
                    for (k, b) in buf.iter_mut().enumerate() {
                        *b = alphas[t - 1][k] + trans_pair.value.at(k, cur);
                    }
                    softmax_into(&buf, &mut weights);
                    for k in 0..labels {
                        let w = d * weights[k];
                        *trans_pair.grad.at_mut(k, cur) += w;
                        d_prev[k] += w;
                    }
                }
                d_alpha = d_prev;
            }
            for t in 1..t_len {
                *trans_pair.grad.at_mut(y_gold[t - 1], y_gold[t]) -= scale;
            }
        }
        {
            let mut init = self.initial.borrow_mut();
            for l in 0..labels {
                d_scores[0][l] += d_alpha[l];
                init.grad.data_mut()[l] += d_alpha[l];
            }
            init.grad.data_mut()[y_gold[0]] -= scale;
        }
        for (t, &gold) in y_gold.iter().enumerate() {
            d_scores[t][gold] -= scale;
        }

        // project score gradients through the emission matrix
        let fdim = self.feature_dim();
        let mut d_h = vec![vec![0.0; fdim]; t_len];
        {
            let mut em = self.emission.borrow_mut();
            let em = &mut *em;
            for t in 0..t_len {
                for l in 0..labels {
                    let d = d_scores[t][l];
                    if d == 0.0 {
                        continue;
                    }
                    let grow = em.grad.row_mut(l);
                    for (g, &x) in grow.iter_mut().zip(h[t].iter()) {
                        *g += d * x;
                    }
                    let vrow = em.value.row(l);
                    for (dh, &w) in d_h[t].iter_mut().zip(vrow.iter()) {
                        *dh += d * w;
                    }
                }
            }
        }
        Ok((loss, d_h))
    }

    /// Highest-scoring tag sequence by max-product dynamic programming.
    /// Ties break toward the lower label index at every decision.
    pub fn viterbi(&self, h: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
        self.validate(h, None)?;
        let labels = self.num_labels();
        let t_len = h.len();
        let scores = self.emission_scores(h);
        let trans_pair = self.transitions.borrow();
        let trans = &trans_pair.value;
        let init = self.initial.borrow();

        let mut delta: Vec<f64> = (0..labels)
            .map(|l| init.value.data()[l] + scores[0][l])
            .collect();
        let mut backptr: Vec<Vec<usize>> = Vec::with_capacity(t_len);
        for row in &scores[1..] {
            let mut next = vec![0.0; labels];
            let mut bp = vec![0usize; labels];
            for cur in 0..labels {
                let mut best_k = 0;
                let mut best = delta[0] + trans.at(0, cur);
                for k in 1..labels {
                    let s = delta[k] + trans.at(k, cur);
                    if s > best {
                        best = s;
                        best_k = k;
                    }
                }
                next[cur] = best + row[cur];
                bp[cur] = best_k;
            }
            delta = next;
            backptr.push(bp);
        }
        let mut best_end = 0;
        for l in 1..labels {
            if delta[l] > delta[best_end] {
                best_end = l;
            }
        }
        let mut tags = vec![0usize; t_len];
        tags[t_len - 1] = best_end;
        for t in (0..t_len - 1).rev() {
            tags[t] = backptr[t][tags[t + 1]];
        }
        Ok((tags, delta[best_end]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, param, Rng, Tensor};

    fn layer(emission: Tensor, transitions: Tensor, initial: Tensor) -> CrfLayer {
        CrfLayer::new(param(emission), param(transitions), param(initial)).unwrap()
    }

    fn zero_layer(labels: usize, fdim: usize) -> CrfLayer {
        layer(
            Tensor::zeros(&[labels, fdim]),
            Tensor::zeros(&[labels, labels]),
            Tensor::zeros(&[labels]),
        )
    }

    fn random_layer(labels: usize, fdim: usize, rng: &mut Rng) -> CrfLayer {
        let rand = |shape: &[usize], rng: &mut Rng| {
            let n: usize = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
        };
        layer(
            rand(&[labels, fdim], rng),
            rand(&[labels, labels], rng),
            rand(&[labels], rng),
        )
    }

    fn random_features(t_len: usize, fdim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..t_len)
            .map(|_| (0..fdim).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect()
    }

    // Identity emission over 2 features so h supplies the label scores
    // (1, 2) directly.
    fn two_label_unit() -> (CrfLayer, Vec<Vec<f64>>) {
        let l = layer(
            Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(&[2, 2]),
            Tensor::zeros(&[2]),
        );
        (l, vec![vec![1.0, 2.0]])
    }

    // Independent scorer used by the enumeration oracles below.
    fn plain_score(
        emission: &Tensor,
        transitions: &Tensor,
        initial: &Tensor,
        h: &[Vec<f64>],
        y: &[usize],
    ) -> f64 {
        let mut total = initial.data()[y[0]];
        for (t, &tag) in y.iter().enumerate() {
            let mut dot = 0.0;
            for (j, &x) in h[t].iter().enumerate() {
                dot += emission.at(tag, j) * x;
            }
            total += dot;
            if t > 0 {
                total += transitions.at(y[t - 1], tag);
            }
        }
        total
    }

    fn all_sequences(t_len: usize, labels: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let total = labels.pow(t_len as u32);
        for mut idx in 0..total {
            let mut seq = vec![0usize; t_len];
            for slot in (0..t_len).rev() {
                seq[slot] = idx % labels;
                idx /= labels;
            }
            out.push(seq);
        }
        out
    }

    fn hamming(a: &[usize], b: &[usize]) -> usize {
        a.iter().zip(b.iter()).filter(|(x, y)| x != y).count()
    }

    #[test]
    fn score_sequence_all_zero_params() {
        let l = zero_layer(3, 2);
        let h = vec![vec![0.5, -0.5]];
        for tag in 0..3 {
            assert_eq!(l.score_sequence(&h, &[tag]).unwrap(), 0.0);
        }
    }

    #[test]
    fn score_sequence_hand_case() {
        let (l, h) = two_label_unit();
        assert_eq!(l.score_sequence(&h, &[1]).unwrap(), 2.0);
        assert_eq!(l.score_sequence(&h, &[0]).unwrap(), 1.0);
    }

    #[test]
    fn score_sequence_structural_transition_case() {
        let l = layer(
            Tensor::zeros(&[2, 2]),
            Tensor::from_vec(&[2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            Tensor::from_vec(&[2], vec![5.0, 7.0]).unwrap(),
        );
        let h = vec![vec![0.0, 0.0]; 2];
        let s = l.score_sequence(&h, &[1, 0]).unwrap();
        assert!((s - (7.0 + 0.3)).abs() < 1e-12);
    }

    #[test]
    fn score_sequence_rejects_bad_inputs() {
        let l = zero_layer(2, 2);
        let h = vec![vec![0.0, 0.0]];
        assert!(l.score_sequence(&h, &[5]).is_err());
        assert!(l.score_sequence(&h, &[0, 0]).is_err());
        assert!(l.score_sequence(&[], &[]).is_err());
        assert!(l.score_sequence(&[vec![0.0]], &[0]).is_err());
    }

    #[test]
    fn log_partition_frozen_values() {
        let (l, h) = two_label_unit();
        let z0 = l
            .log_partition_augmented(&h, &[1], CostSpec::none())
            .unwrap();
        assert!((z0 - 2.3132617).abs() < 1e-6, "got {z0}");
        let z1 = l
            .log_partition_augmented(&h, &[1], CostSpec::hamming(1.0).unwrap())
            .unwrap();
        assert!((z1 - 2.6931472).abs() < 1e-6, "got {z1}");
    }

    #[test]
    fn log_partition_uniform_case_is_t_ln_l() {
        let l = zero_layer(3, 2);
        let h = vec![vec![0.4, -0.2]; 4];
        let z = l
            .log_partition_augmented(&h, &[0, 0, 0, 0], CostSpec::none())
            .unwrap();
        assert!((z - 4.0 * 3.0_f64.ln()).abs() < 1e-9, "got {z}");
    }

    #[test]
    fn margin_loss_frozen_values() {
        let (l, h) = two_label_unit();
        let l0 = l.margin_loss(&h, &[1], CostSpec::none()).unwrap();
        assert!((l0 - 0.3132617).abs() < 1e-6, "got {l0}");
        let l1 = l
            .margin_loss(&h, &[1], CostSpec::hamming(1.0).unwrap())
            .unwrap();
        assert!((l1 - 0.6931472).abs() < 1e-6, "got {l1}");
    }

    #[test]
    fn margin_loss_single_label_is_zero() {
        let mut rng = Rng::new(17);
        for _ in 0..20 {
            let l = random_layer(1, 3, &mut rng);
            let t_len = 1 + rng.below(4);
            let h = random_features(t_len, 3, &mut rng);
            let y = vec![0usize; t_len];
            for w in [0.0, 0.5, 1.0] {
                let loss = l.margin_loss(&h, &y, CostSpec::hamming(w).unwrap()).unwrap();
                assert!(loss.abs() < 1e-12, "got {loss}");
            }
        }
    }

    #[test]
    fn margin_loss_is_nonnegative() {
        let mut rng = Rng::new(18);
        for _ in 0..100 {
            let labels = 1 + rng.below(4);
            let t_len = 1 + rng.below(4);
            let l = random_layer(labels, 3, &mut rng);
            let h = random_features(t_len, 3, &mut rng);
            let y: Vec<usize> = (0..t_len).map(|_| rng.below(labels)).collect();
            let loss = l
                .margin_loss(&h, &y, CostSpec::hamming(0.5).unwrap())
                .unwrap();
            assert!(loss >= -1e-9, "got {loss}");
        }
    }

    #[test]
    fn log_partition_matches_enumeration() {
        let mut rng = Rng::new(19);
        for _ in 0..120 {
            let labels = 1 + rng.below(4);
            let t_len = 1 + rng.below(4);
            let l = random_layer(labels, 3, &mut rng);
            let h = random_features(t_len, 3, &mut rng);
            let y: Vec<usize> = (0..t_len).map(|_| rng.below(labels)).collect();
            let em = l.emission.borrow().value.clone();
            let tr = l.transitions.borrow().value.clone();
            let init = l.initial.borrow().value.clone();
            for w in [0.0, 0.5, 1.0] {
                let got = l
                    .log_partition_augmented(&h, &y, CostSpec::hamming(w).unwrap())
                    .unwrap();
                let scores: Vec<f64> = all_sequences(t_len, labels)
                    .iter()
                    .map(|seq| {
                        plain_score(&em, &tr, &init, &h, seq) + w * hamming(seq, &y) as f64
                    })
                    .collect();
                let want = logsumexp(&scores).unwrap();
                assert!((got - want).abs() < 1e-8, "got {got}, want {want}");
            }
        }
    }

    #[test]
    fn weight_zero_reduces_to_plain_log_likelihood() {
        // independently coded plain forward algorithm
        fn plain_nll(l: &CrfLayer, h: &[Vec<f64>], y: &[usize]) -> f64 {
            let em = l.emission.borrow().value.clone();
            let tr = l.transitions.borrow().value.clone();
            let init = l.initial.borrow().value.clone();
            let labels = em.rows();
            let emit = |t: usize, tag: usize| -> f64 {
                h[t].iter()
                    .enumerate()
                    .map(|(j, &x)| em.at(tag, j) * x)
                    .sum()
            };
            let mut alpha: Vec<f64> = (0..labels)
                .map(|tag| init.data()[tag] + emit(0, tag))
                .collect();
            for t in 1..h.len() {
                alpha = (0..labels)
                    .map(|cur| {
                        let terms: Vec<f64> = (0..labels)
                            .map(|k| alpha[k] + tr.at(k, cur))
                            .collect();
                        logsumexp(&terms).unwrap() + emit(t, cur)
                    })
                    .collect();
            }
            let log_z = logsumexp(&alpha).unwrap();
            log_z - plain_score(&em, &tr, &init, h, y)
        }

        let mut rng = Rng::new(21);
        for _ in 0..30 {
            let labels = 2 + rng.below(3);
            let t_len = 1 + rng.below(4);
            let l = random_layer(labels, 3, &mut rng);
            let h = random_features(t_len, 3, &mut rng);
            let y: Vec<usize> = (0..t_len).map(|_| rng.below(labels)).collect();
            let got = l.margin_loss(&h, &y, CostSpec::none()).unwrap();
            let want = plain_nll(&l, &h, &y);
            assert!((got - want).abs() < 1e-10, "got {got}, want {want}");
        }
    }

    #[test]
    fn viterbi_single_position_picks_argmax() {
        let (l, h) = two_label_unit();
        let (tags, score) = l.viterbi(&h).unwrap();
        assert_eq!(tags, vec![1]);
        assert_eq!(score, 2.0);
    }

    #[test]
    fn viterbi_matches_enumeration_on_random_instances() {
        let mut rng = Rng::new(23);
        for _ in 0..120 {
            let labels = 1 + rng.below(4);
            let t_len = 1 + rng.below(4);
            let l = random_layer(labels, 3, &mut rng);
            let h = random_features(t_len, 3, &mut rng);
            let em = l.emission.borrow().value.clone();
            let tr = l.transitions.borrow().value.clone();
            let init = l.initial.borrow().value.clone();
            let (tags, score) = l.viterbi(&h).unwrap();
            let mut best_seq = None;
            let mut best = f64::NEG_INFINITY;
            for seq in all_sequences(t_len, labels) {
                let s = plain_score(&em, &tr, &init, &h, &seq);
                if s > best {
                    best = s;
                    best_seq = Some(seq);
                }
            }
            assert_eq!(tags, best_seq.unwrap());
            assert!((score - best).abs() < 1e-9);
        }
    }

    #[test]
    fn viterbi_all_equal_scores_returns_lowest_indices() {
        let l = zero_layer(3, 2);
        let h = vec![vec![0.0, 0.0]; 4];
        let (tags, score) = l.viterbi(&h).unwrap();
        assert_eq!(tags, vec![0, 0, 0, 0]);
        assert_eq!(score, 0.0);
    }

    // The backtracking tie rule minimizes labels from the end of the
    // sequence backwards; integer scores make ties exact.
    #[test]
    fn viterbi_tie_break_is_per_decision() {
        let l = layer(
            Tensor::zeros(&[2, 1]),
            Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
            Tensor::zeros(&[2]),
        );
        let h = vec![vec![0.0]; 2];
        // optimal set is {(0,1), (1,0)}; the rule picks end label 0 first
        let (tags, score) = l.viterbi(&h).unwrap();
        assert_eq!(tags, vec![1, 0]);
        assert_eq!(score, 1.0);
    }

    #[test]
    fn margin_gradients_pass_finite_differences() {
        let mut rng = Rng::new(29);
        let labels = 3;
        let fdim = 4;
        let t_len = 3;
        let l = random_layer(labels, fdim, &mut rng);
        let h = random_features(t_len, fdim, &mut rng);
        let y = vec![2usize, 0, 1];
        let cost = CostSpec::hamming(0.5).unwrap();

        for p in [&l.emission, &l.transitions, &l.initial] {
            p.borrow_mut().zero_grad();
        }
        let (_, d_h) = l.margin_loss_backward(&h, &y, cost, 1.0).unwrap();

        for p in [&l.emission, &l.transitions, &l.initial] {
            let value = p.borrow().value.clone();
            let analytic = p.borrow().grad.clone();
            let mut check_rng = Rng::new(1);
            let report = grad_check(
                |cand| {
                    p.borrow_mut().value = cand.clone();
                    l.margin_loss(&h, &y, cost)
                },
                &value,
                &analytic,
                16,
                &mut check_rng,
            )
            .unwrap();
            p.borrow_mut().value = value;
            assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
        }

        // gradient w.r.t. the features
        let flat_h = Tensor::from_vec(
            &[t_len, fdim],
            h.iter().flatten().copied().collect(),
        )
        .unwrap();
        let flat_dh = Tensor::from_vec(
            &[t_len, fdim],
            d_h.iter().flatten().copied().collect(),
        )
        .unwrap();
        let mut check_rng = Rng::new(2);
        let report = grad_check(
            |cand| {
                let hs: Vec<Vec<f64>> = (0..t_len).map(|t| cand.row(t).to_vec()).collect();
                l.margin_loss(&hs, &y, cost)
            },
            &flat_h,
            &flat_dh,
            16,
            &mut check_rng,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn backward_scale_multiplies_gradients() {
        let mut rng = Rng::new(31);
        let l = random_layer(2, 3, &mut rng);
        let h = random_features(2, 3, &mut rng);
        let y = vec![0usize, 1];
        let cost = CostSpec::hamming(1.0).unwrap();
        l.emission.borrow_mut().zero_grad();
        l.transitions.borrow_mut().zero_grad();
        l.initial.borrow_mut().zero_grad();
        let (_, dh1) = l.margin_loss_backward(&h, &y, cost, 1.0).unwrap();
        let g1 = l.emission.borrow().grad.clone();
        l.emission.borrow_mut().zero_grad();
        l.transitions.borrow_mut().zero_grad();
        l.initial.borrow_mut().zero_grad();
        let (_, dh_half) = l.margin_loss_backward(&h, &y, cost, 0.5).unwrap();
        let g_half = l.emission.borrow().grad.clone();
        for (a, b) in g1.data().iter().zip(g_half.data().iter()) {
            assert!((a * 0.5 - b).abs() < 1e-12);
        }
        for (r1, r2) in dh1.iter().zip(dh_half.iter()) {
            for (a, b) in r1.iter().zip(r2.iter()) {
                assert!((a * 0.5 - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cost_spec_rejects_negative_weight() {
        assert!(CostSpec::hamming(-0.1).is_err());
        assert!(CostSpec::hamming(f64::NAN).is_err());
        assert!(CostSpec::hamming(0.0).is_ok());
    }
}
