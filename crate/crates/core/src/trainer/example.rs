use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::DocKey;
use crate::model::{Model, SegmentRole};
use crate::numerics::{AdamW, Gradients, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleRole {
    /// Fused query over its augmentation documents.
    EndRetriever,
    /// Plain query embedding.
    Augmenter,
}

/// One positive with its hard negatives, already tokenized.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub query_id: String,
    pub query: Vec<u32>,
    /// Used only by the end-retriever role.
    pub augmentation: Vec<Vec<u32>>,
    pub positive: (DocKey, Vec<u32>),
    pub negatives: Vec<(DocKey, Vec<u32>)>,
    pub role: ExampleRole,
    /// Fewer negatives than configured survived exclusion.
    pub shortfall: bool,
}

impl TrainingExample {
    pub fn new(
        query_id: impl Into<String>,
        query: Vec<u32>,
        augmentation: Vec<Vec<u32>>,
        positive: (DocKey, Vec<u32>),
        negatives: Vec<(DocKey, Vec<u32>)>,
        role: ExampleRole,
        shortfall: bool,
    ) -> Result<Self> {
        if negatives.iter().any(|(k, _)| *k == positive.0) {
            return Err(Error::contract(format!("positive {} also listed as a negative", positive.0)));
        }
        if negatives.is_empty() {
            return Err(Error::EmptyInput("negatives"));
        }
        Ok(TrainingExample {
            query_id: query_id.into(),
            query,
            augmentation,
            positive,
            negatives,
            role,
            shortfall,
        })
    }
}

/// Builds the example's ranking loss on `tape`: the positive is scored
/// first, followed by the negatives.
pub fn example_loss_on<'a>(model: &'a Model, tape: &mut Tape<'a>, vars: &[Var], ex: &TrainingExample) -> Result<Var> {
    let q = match ex.role {
        ExampleRole::EndRetriever => model.embed_fused_on(tape, vars, &ex.query, &ex.augmentation)?.embedding,
        ExampleRole::Augmenter => model.embed_text_on(tape, vars, &ex.query, SegmentRole::Query)?,
    };
    let mut docs = Vec::with_capacity(ex.negatives.len() + 1);
    for (_, ids) in std::iter::once(&ex.positive).chain(&ex.negatives) {
        docs.push(model.embed_text_on(tape, vars, ids, SegmentRole::Document)?);
    }
    let docs = tape.concat_rows(&docs)?;
    let scores = tape.matmul_t(q, false, docs, true)?;
    tape.nll_ranking(scores)
}

pub fn example_loss(model: &Model, ex: &TrainingExample) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let loss = example_loss_on(model, &mut tape, &vars, ex)?;
    Ok(tape.scalar(loss))
}

/// Loss value and its gradient, both multiplied by `scale`.
pub fn example_gradients(model: &Model, ex: &TrainingExample, scale: f64) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let loss = example_loss_on(model, &mut tape, &vars, ex)?;
    let scaled = tape.scale(loss, scale);
    let value = tape.scalar(scaled);
    Ok((value, tape.backward(scaled)?))
}

/// Mean loss and summed gradients of a batch. Examples run on the worker
/// pool; gradients are merged in batch order.
pub fn batch_gradients(model: &Model, batch: &[&TrainingExample]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|ex| example_gradients(model, ex, scale))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut total = Gradients::default();
    for (l, g) in parts {
        loss += l;
        total.merge(g);
    }
    Ok((loss, total))
}

/// One optimizer update on the batch's mean loss; returns that loss.
pub fn train_step(model: &mut Model, opt: &mut AdamW, batch: &[&TrainingExample]) -> Result<f64> {
    let (loss, grads) = batch_gradients(model, batch)?;
    let params = model.params_mut();
    params.zero_grad();
    params.accumulate(&grads)?;
    opt.step(params)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::{ModelConfig, CLS_ID};
    use crate::numerics::ParamId;

    fn config() -> ModelConfig {
        ModelConfig {
            vocab_size: 30,
            model_dim: 8,
            num_layers: 2,
            num_heads: 2,
            feedforward_dim: 12,
            max_query_len: 6,
            max_doc_len: 8,
            k_default: 3,
            layer_norm_eps: 1e-6,
            freeze_token_embeddings: false,
        }
    }

    fn key(i: usize) -> DocKey {
        DocKey::new("c", i.to_string())
    }

    fn example(role: ExampleRole) -> TrainingExample {
        let aug = match role {
            ExampleRole::EndRetriever => vec![vec![CLS_ID, 10, 11, 12], vec![CLS_ID, 13, 14], vec![CLS_ID, 15, 16, 17]],
            ExampleRole::Augmenter => Vec::new(),
        };
        TrainingExample::new(
            "q",
            vec![CLS_ID, 5, 6, 7],
            aug,
            (key(0), vec![CLS_ID, 5, 6, 20]),
            (1..4).map(|i| (key(i), vec![CLS_ID, 20 + i as u32, 8])).collect(),
            role,
            false,
        )
        .unwrap()
    }

    #[test]
    fn rejects_positive_among_negatives() {
        let err = TrainingExample::new(
            "q",
            vec![CLS_ID],
            Vec::new(),
            (key(0), vec![CLS_ID]),
            vec![(key(0), vec![CLS_ID])],
            ExampleRole::Augmenter,
            false,
        );
        assert!(err.is_err());
    }

    #[test]
    fn fused_loss_without_documents_is_plain_loss() {
        let m = Model::new(config(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut end = example(ExampleRole::Augmenter);
        let plain = example_loss(&m, &end).unwrap();
        end.role = ExampleRole::EndRetriever;
        assert_eq!(example_loss(&m, &end).unwrap(), plain);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for role in [ExampleRole::EndRetriever, ExampleRole::Augmenter] {
            let mut m = Model::new(config(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            let ex = example(role);
            let (_, grads) = example_gradients(&m, &ex, 1.0).unwrap();
            let h = 1e-5;
            for pid in (0..m.params().len()).step_by(3) {
                let id = ParamId(pid);
                let j = m.params().get(id).numel() / 2;
                let orig = m.params().get(id).data()[j];
                m.params_mut().get_mut(id).data_mut()[j] = orig + h;
                let up = example_loss(&m, &ex).unwrap();
                m.params_mut().get_mut(id).data_mut()[j] = orig - h;
                let down = example_loss(&m, &ex).unwrap();
                m.params_mut().get_mut(id).data_mut()[j] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.get(id).map_or(0.0, |g| g[j]);
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-4, "{role:?} {}: {fd} vs {an}", m.params().names()[pid]);
            }
        }
    }

    #[test]
    fn steps_reduce_loss_on_a_fixed_batch() {
        let mut m = Model::new(config(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let batch = [example(ExampleRole::EndRetriever), example(ExampleRole::Augmenter)];
        let refs: Vec<&TrainingExample> = batch.iter().collect();
        let mut opt = AdamW::new(1e-2, 0.0);
        let mut losses = Vec::new();
        for _ in 0..6 {
            losses.push(train_step(&mut m, &mut opt, &refs).unwrap());
        }
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }
}
