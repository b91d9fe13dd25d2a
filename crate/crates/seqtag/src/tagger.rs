//! One task's complete model view: encoder plus CRF plus label set.
//!
//! The CRF consumes, per token, the encoder output with the sentence's
//! extra feature block (if the task has one) appended. Extra features are
//! inputs, not parameters, so their gradient is discarded.

use crate::crf::{CostSpec, CrfLayer};
use crate::data::{LabelSet, Sentence};
use crate::encoder::Encoder;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Tagger {
    pub encoder: Encoder,
    pub crf: CrfLayer,
    pub labels: LabelSet,
    pub extra_dim: usize,
}

impl Tagger {
    pub fn new(encoder: Encoder, crf: CrfLayer, labels: LabelSet, extra_dim: usize) -> Result<Self> {
        let expected = encoder.output_dim() + extra_dim;
        if crf.feature_dim() != expected {
            return Err(Error::shape(
                "CRF emission input",
                &[expected],
                &[crf.feature_dim()],
            ));
        }
        if crf.num_labels() != labels.len() {
            return Err(Error::shape(
                "CRF label count",
                &[labels.len()],
                &[crf.num_labels()],
            ));
        }
        Ok(Tagger {
            encoder,
            crf,
            labels,
            extra_dim,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.output_dim() + self.extra_dim
    }

    fn check_extra(&self, sent: &Sentence) -> Result<()> {
        match (&sent.extra, self.extra_dim) {
            (None, 0) => Ok(()),
            (Some(_), 0) => Err(Error::config(
                "sentence carries extra features but the model was built without them",
            )),
            (None, d) => Err(Error::config(format!(
                "model expects {d} extra features per token but the sentence has none"
            ))),
            (Some(rows), d) => {
                for (t, row) in rows.iter().enumerate() {
                    if row.len() != d {
                        return Err(Error::shape(
                            &format!("extra features at position {t}"),
                            &[d],
                            &[row.len()],
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    /// Per-token CRF input and the encoder cache needed to backpropagate.
    fn features(&self, sent: &Sentence) -> Result<(Vec<Vec<f64>>, crate::encoder::EncodeCache)> {
        self.check_extra(sent)?;
        let (mut hs, cache) = self.encoder.encode(sent)?;
        if let Some(extra) = &sent.extra {
            for (h, row) in hs.iter_mut().zip(extra.iter()) {
                h.extend_from_slice(row);
            }
        }
        Ok((hs, cache))
    }

    /// Margin loss of one sentence against its gold tags.
    pub fn loss(&self, sent: &Sentence, cost: CostSpec) -> Result<f64> {
        let (feats, _) = self.features(sent)?;
        self.crf.margin_loss(&feats, &sent.tag_ids, cost)
    }

    /// Margin loss plus a full backward pass; gradients scaled by `scale`
    /// accumulate into every parameter. Returns the unscaled loss.
    pub fn loss_backward(&self, sent: &Sentence, cost: CostSpec, scale: f64) -> Result<f64> {
        let (feats, cache) = self.features(sent)?;
        let (loss, d_feats) =
            self.crf
                .margin_loss_backward(&feats, &sent.tag_ids, cost, scale)?;
        let enc_dim = self.encoder.output_dim();
        let d_h: Vec<Vec<f64>> = d_feats.iter().map(|d| d[..enc_dim].to_vec()).collect();
        self.encoder.backward(&cache, &d_h)?;
        Ok(loss)
    }

    /// Highest-scoring tag sequence, as label names.
    pub fn decode(&self, sent: &Sentence) -> Result<Vec<String>> {
        let (feats, _) = self.features(sent)?;
        let (ids, _) = self.crf.viterbi(&feats)?;
        Ok(ids
            .into_iter()
            .map(|id| self.labels.label(id).to_string())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::CostSpec;
    use crate::encoder::{BiGruStack, BiLayer, EmbeddingTable, GruCell};
    use crate::numerics::{grad_check, param, ParamRef, Rng, Tensor};

    fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-0.6, 0.6)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    fn rand_param(shape: &[usize], rng: &mut Rng) -> ParamRef {
        param(rand_tensor(shape, rng))
    }

    fn rand_cell(hidden: usize, input: usize, rng: &mut Rng) -> GruCell {
        GruCell::new(
            rand_param(&[hidden, input], rng),
            rand_param(&[hidden, hidden], rng),
            rand_param(&[hidden, input], rng),
            rand_param(&[hidden, hidden], rng),
            rand_param(&[hidden, input], rng),
            rand_param(&[hidden, hidden], rng),
        )
        .unwrap()
    }

    fn rand_stack(hidden: usize, input: usize, rng: &mut Rng) -> BiGruStack {
        let l1 = BiLayer::new(rand_cell(hidden, input, rng), rand_cell(hidden, input, rng)).unwrap();
        let l2 = BiLayer::new(
            rand_cell(hidden, 2 * hidden, rng),
            rand_cell(hidden, 2 * hidden, rng),
        )
        .unwrap();
        BiGruStack::new(vec![l1, l2]).unwrap()
    }

    // char emb 3, char hidden 2, word emb 4, word hidden 3: encoder output 6.
    fn toy_tagger(extra_dim: usize, labels: usize, rng: &mut Rng) -> Tagger {
        let char_table = EmbeddingTable::new(rand_param(&[5, 3], rng), 1);
        let char_stack = rand_stack(2, 3, rng);
        let word_table = EmbeddingTable::new(rand_param(&[6, 4], rng), 1);
        let word_stack = rand_stack(3, 8, rng);
        let encoder = Encoder::new(char_table, char_stack, word_table, word_stack).unwrap();
        let feat = encoder.output_dim() + extra_dim;
        let crf = CrfLayer::new(
            rand_param(&[labels, feat], rng),
            rand_param(&[labels, labels], rng),
            rand_param(&[labels], rng),
        )
        .unwrap();
        let names = (0..labels).map(|i| format!("L{i}")).collect();
        Tagger::new(encoder, crf, LabelSet::new(names).unwrap(), extra_dim).unwrap()
    }

    fn toy_sentence(len: usize, labels: usize, extra_dim: usize, rng: &mut Rng) -> Sentence {
        let tag_ids: Vec<usize> = (0..len).map(|_| rng.below(labels)).collect();
        Sentence {
            tokens: (0..len).map(|i| format!("w{i}")).collect(),
            tags: tag_ids.iter().map(|&t| format!("L{t}")).collect(),
            word_ids: (0..len).map(|_| rng.below(6)).collect(),
            char_ids: (0..len)
                .map(|_| (0..1 + rng.below(3)).map(|_| rng.below(5)).collect())
                .collect(),
            tag_ids,
            extra: if extra_dim == 0 {
                None
            } else {
                Some(
                    (0..len)
                        .map(|_| (0..extra_dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
                        .collect(),
                )
            },
        }
    }

    #[test]
    fn decode_returns_one_label_per_token() {
        let mut rng = Rng::new(3);
        let tagger = toy_tagger(0, 3, &mut rng);
        let sent = toy_sentence(4, 3, 0, &mut rng);
        let pred = tagger.decode(&sent).unwrap();
        assert_eq!(pred.len(), 4);
        for p in &pred {
            assert!(tagger.labels.id_of(p).is_some());
        }
    }

    #[test]
    fn extra_feature_mismatch_is_config_error() {
        let mut rng = Rng::new(4);
        let tagger = toy_tagger(2, 3, &mut rng);
        let sent = toy_sentence(3, 3, 0, &mut rng);
        let err = tagger.loss(&sent, CostSpec::none()).unwrap_err();
        assert!(err.to_string().contains("extra features"));

        let tagger0 = toy_tagger(0, 3, &mut rng);
        let sent2 = toy_sentence(3, 3, 2, &mut rng);
        let err2 = tagger0.loss(&sent2, CostSpec::none()).unwrap_err();
        assert!(err2.to_string().contains("extra features"));
    }

    #[test]
    fn extra_features_change_the_loss() {
        let mut rng = Rng::new(5);
        let tagger = toy_tagger(2, 3, &mut rng);
        let mut sent = toy_sentence(3, 3, 2, &mut rng);
        let a = tagger.loss(&sent, CostSpec::none()).unwrap();
        if let Some(extra) = sent.extra.as_mut() {
            extra[1][0] += 1.5;
        }
        let b = tagger.loss(&sent, CostSpec::none()).unwrap();
        assert!((a - b).abs() > 1e-9);
    }

    #[test]
    fn loss_backward_returns_the_loss_value() {
        let mut rng = Rng::new(6);
        let tagger = toy_tagger(0, 3, &mut rng);
        let sent = toy_sentence(3, 3, 0, &mut rng);
        let plain = tagger.loss(&sent, CostSpec::hamming(1.0).unwrap()).unwrap();
        let through = tagger
            .loss_backward(&sent, CostSpec::hamming(1.0).unwrap(), 1.0)
            .unwrap();
        assert!((plain - through).abs() < 1e-12);
    }

    // End-to-end gradient through the extra-feature concatenation path.
    #[test]
    fn tagger_gradient_matches_finite_differences() {
        let mut rng = Rng::new(7);
        let tagger = toy_tagger(2, 3, &mut rng);
        let sents = vec![
            toy_sentence(3, 3, 2, &mut rng),
            toy_sentence(2, 3, 2, &mut rng),
        ];
        let cost = CostSpec::hamming(1.0).unwrap();

        let params: Vec<(&str, ParamRef)> = vec![
            ("char_table", tagger.encoder.char_table.weights.clone()),
            ("word_table", tagger.encoder.word_table.weights.clone()),
            ("emission", tagger.crf.emission.clone()),
            ("transitions", tagger.crf.transitions.clone()),
            ("initial", tagger.crf.initial.clone()),
            (
                "char.l0.fwd.w_hx",
                tagger.encoder.char_stack.layers()[0].fwd.w_hx.clone(),
            ),
            (
                "word.l1.bwd.w_rh",
                tagger.encoder.word_stack.layers()[1].bwd.w_rh.clone(),
            ),
        ];
        for (_, p) in &params {
            p.borrow_mut().zero_grad();
        }
        for s in &sents {
            tagger.loss_backward(s, cost, 1.0).unwrap();
        }
        for (name, p) in &params {
            let analytic = p.borrow().grad.clone();
            let loss_fn = |cand: &Tensor| -> crate::Result<f64> {
                let saved = p.borrow().value.clone();
                p.borrow_mut().value = cand.clone();
                let mut total = 0.0;
                for s in &sents {
                    total += tagger.loss(s, cost)?;
                }
                p.borrow_mut().value = saved;
                Ok(total)
            };
            let base = p.borrow().value.clone();
            let mut check_rng = Rng::new(99);
            let report = grad_check(loss_fn, &base, &analytic, 30, &mut check_rng).unwrap();
            assert!(
                report.max_rel_err < 1e-4,
                "{name}: rel err {}",
                report.max_rel_err
            );
        }
    }
}
