use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn small_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 40,
        model_dim: 8,
        num_layers: 2,
        num_heads: 2,
        feedforward_dim: 12,
        max_query_len: 6,
        max_doc_len: 9,
        k_default: 3,
        layer_norm_eps: 1e-6,
        freeze_token_embeddings: false,
    }
}

fn model(seed: u64) -> Model {
    Model::new(small_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn same_seed_same_weights() {
    assert_eq!(model(7).checksum(), model(7).checksum());
    assert_ne!(model(7).checksum(), model(8).checksum());
}

#[test]
fn fused_without_documents_is_plain_embedding() {
    let m = model(1);
    let q = [CLS_ID, 5, 9, 11];
    let (fused, record) = m.embed_query_fused(&q, &[]).unwrap();
    let plain = m.embed_text(&q, SegmentRole::Query).unwrap();
    assert_eq!(fused, plain);
    assert_eq!(record.total_positions(), 4);
    assert_eq!(record.spans().len(), 1);
}

#[test]
fn truncates_to_role_limits() {
    let m = model(2);
    let long: Vec<u32> = std::iter::once(CLS_ID).chain((4..20).map(|i| i as u32)).collect();
    let enc = m.encode(&long, SegmentRole::Query).unwrap();
    assert_eq!(enc.len(), 6);
    assert_eq!(enc.output.shape(), &[6, 8]);
    let enc = m.encode(&long, SegmentRole::Document).unwrap();
    assert_eq!(enc.len(), 9);
    assert_eq!(
        m.embed_text(&long, SegmentRole::Query).unwrap(),
        m.embed_text(&long[..6], SegmentRole::Query).unwrap()
    );
}

#[test]
fn rejects_bad_inputs() {
    let m = model(3);
    assert!(matches!(m.embed_text(&[], SegmentRole::Query), Err(Error::EmptyInput(_))));
    assert!(m.embed_text(&[CLS_ID, 40], SegmentRole::Query).is_err());
    let docs = vec![vec![CLS_ID, 5]; 4];
    assert!(m.embed_query_fused(&[CLS_ID, 6], &docs).is_err());
}

#[test]
fn augmentation_segment_swaps_marker() {
    let m = model(4);
    assert_eq!(m.augmentation_segment(&[CLS_ID, 7, 8]).unwrap(), vec![SEP_ID, 7, 8]);
    assert_eq!(m.augmentation_segment(&[7, 8]).unwrap(), vec![SEP_ID, 7, 8]);
    let long: Vec<u32> = (4..30).collect();
    assert_eq!(m.augmentation_segment(&long).unwrap().len(), 9);
}

#[test]
fn record_covers_every_position() {
    let m = model(5);
    let q = [CLS_ID, 5, 6];
    let docs = vec![vec![CLS_ID, 7, 8, 9], (4..30).collect(), vec![CLS_ID, 10]];
    let (_, rec) = m.embed_query_fused(&q, &docs).unwrap();
    assert_eq!(rec.total_positions(), 3 + 4 + 9 + 2);
    assert_eq!(rec.rows().count(), 4);
    assert!(rec.max_row_sum_error() < 1e-12);
    let sources: Vec<_> = rec.spans().iter().map(|s| s.source).collect();
    assert_eq!(
        sources,
        vec![
            SegmentSource::Query,
            SegmentSource::Augmentation(0),
            SegmentSource::Augmentation(1),
            SegmentSource::Augmentation(2)
        ]
    );
}

#[test]
fn default_shape_has_full_fused_width() {
    let cfg = ModelConfig {
        vocab_size: 64,
        model_dim: 8,
        num_layers: 1,
        num_heads: 2,
        feedforward_dim: 8,
        ..ModelConfig::default()
    };
    let m = Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let q: Vec<u32> = (0..40).map(|i| 4 + i % 60).collect();
    let docs: Vec<Vec<u32>> = (0..10).map(|_| (0..200).map(|i| 4 + i % 60).collect()).collect();
    let (_, rec) = m.embed_query_fused(&q, &docs).unwrap();
    assert_eq!(rec.total_positions(), 32 + 10 * 128);
}

#[test]
fn document_order_only_reorders_attention() {
    let m = model(6);
    let q = [CLS_ID, 5, 6];
    let a = vec![CLS_ID, 7, 8, 9];
    let b = vec![CLS_ID, 10, 11];
    let (e1, r1) = m.embed_query_fused(&q, &[a.clone(), b.clone()]).unwrap();
    let (e2, r2) = m.embed_query_fused(&q, &[b, a]).unwrap();
    for (x, y) in e1.iter().zip(&e2) {
        assert!((x - y).abs() < 1e-12);
    }
    let mass = |r: &CrossAttentionRecord, span: usize| -> f64 {
        let s = r.spans()[span];
        r.rows().map(|row| row[s.start..s.end()].iter().sum::<f64>()).sum()
    };
    assert!((mass(&r1, 1) - mass(&r2, 2)).abs() < 1e-12);
    assert!((mass(&r1, 2) - mass(&r2, 1)).abs() < 1e-12);
}

#[test]
fn save_and_load_round_trip() {
    let m = model(9);
    let json = serde_json::to_string(&m.to_file()).unwrap();
    let back = Model::from_file(serde_json::from_str(&json).unwrap()).unwrap();
    assert_eq!(back.checksum(), m.checksum());
    let q = [CLS_ID, 12, 13];
    assert_eq!(
        back.embed_text(&q, SegmentRole::Query).unwrap(),
        m.embed_text(&q, SegmentRole::Query).unwrap()
    );
}

#[test]
fn fused_score_gradient_matches_finite_differences() {
    let mut m = model(10);
    let q = [CLS_ID, 5, 6];
    let docs = vec![vec![CLS_ID, 7, 8, 9], vec![CLS_ID, 10, 11]];
    let target = [CLS_ID, 12, 13, 14];

    let score = |m: &Model| -> f64 {
        let (e, _) = m.embed_query_fused(&q, &docs).unwrap();
        dot(&e, &m.embed_text(&target, SegmentRole::Document).unwrap())
    };

    let grads = {
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let fused = m.embed_fused_on(&mut tape, &vars, &q, &docs).unwrap();
        let d = m.embed_text_on(&mut tape, &vars, &target, SegmentRole::Document).unwrap();
        let prod = tape.mul(fused.embedding, d).unwrap();
        let s = tape.sum(prod);
        tape.backward(s).unwrap()
    };

    let h = 1e-5;
    let mut checked = 0;
    for pid in 0..m.params().len() {
        let id = ParamId(pid);
        let n = m.params().get(id).numel();
        for j in [0, n / 2, n - 1] {
            let orig = m.params().get(id).data()[j];
            m.params_mut().get_mut(id).data_mut()[j] = orig + h;
            let up = score(&m);
            m.params_mut().get_mut(id).data_mut()[j] = orig - h;
            let down = score(&m);
            m.params_mut().get_mut(id).data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads.get(id).map_or(0.0, |g| g[j]);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < 1e-4, "{} [{j}]: fd {fd} vs {an}", m.params().names()[pid]);
            checked += 1;
        }
    }
    assert!(checked >= 50);
}
