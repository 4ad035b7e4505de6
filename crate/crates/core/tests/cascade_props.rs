use std::collections::HashSet;

use hybridrag_core::corpus::{Chunk, KnowledgeBase};
use hybridrag_core::dense::{cosine, embed_corpus, retrieve_dense, EmbedOptions, EmbeddingCache, EmbeddingVector, HashedTrigramEmbedder, VectorStore};
use hybridrag_core::passage::{RankedPassage, Stage};
use hybridrag_core::provider::RetryPolicy;
use hybridrag_core::ragflow::{PipelineConfig, Retriever};
use hybridrag_core::rerank::{apply_temperature, rerank, OverlapScorer, RerankOptions};
use hybridrag_core::sparse::{Bm25Index, Bm25Params};
use hybridrag_core::textnorm::Normalizer;
use proptest::prelude::*;

fn vector(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-10.0f32..10.0, dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn argsort(xs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]).then(a.cmp(&b)));
    idx
}

fn is_ranked(ps: &[RankedPassage]) -> bool {
    ps.windows(2)
        .all(|w| w[0].score > w[1].score || (w[0].score == w[1].score && w[0].chunk_id < w[1].chunk_id))
}

proptest! {
    #[test]
    fn cosine_is_bounded_symmetric_and_scale_free(a in vector(16), b in vector(16), s in 0.01f32..100.0) {
        let (va, vb) = (EmbeddingVector::new(a).unwrap(), EmbeddingVector::new(b).unwrap());
        let c = cosine(&va, &vb).unwrap();
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&c));
        prop_assert!((c - cosine(&vb, &va).unwrap()).abs() < 1e-12);
        prop_assert!((c - cosine(&va.scaled(s), &vb).unwrap()).abs() < 1e-5);
        prop_assert!((cosine(&va, &va).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dense_returns_a_ranked_subset(vs in prop::collection::vec(vector(8), 1..40), q in vector(8), m in 1usize..50) {
        let store: VectorStore = vs.iter().enumerate().map(|(i, v)| (format!("c{i:02}"), EmbeddingVector::new(v.clone()).unwrap())).collect();
        let cands: Vec<RankedPassage> = store.keys().map(|id| RankedPassage { chunk_id: id.clone(), score: 1.0, stage: Stage::Sparse }).collect();
        let got = retrieve_dense(&EmbeddingVector::new(q).unwrap(), &cands, &store, m).unwrap();
        prop_assert_eq!(got.len(), m.min(cands.len()));
        prop_assert!(is_ranked(&got));
        let ids: HashSet<_> = got.iter().map(|p| &p.chunk_id).collect();
        prop_assert_eq!(ids.len(), got.len());
        prop_assert!(ids.iter().all(|id| store.contains_key(*id)));
    }

    #[test]
    fn temperature_keeps_order(xs in prop::collection::vec(-100.0f64..100.0, 1..30), t in prop::sample::select(vec![0.01, 0.1, 1.0, 10.0])) {
        prop_assert_eq!(argsort(&apply_temperature(&xs, t).unwrap()), argsort(&xs));
    }
}

const VOCAB: &[&str] = &["زكاه", "صلاه", "صوم", "حج", "ذهب", "فضه", "ميراث", "زوج", "ابن", "بنت", "ام", "اب", "وقت", "فجر", "عصر", "نصاب", "حول", "طهاره", "وضوء", "غسل"];

fn corpus() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::collection::vec(prop::sample::select(VOCAB), 1..30).prop_map(|w| w.join(" ")), 5..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cascade_shrinks_and_nests(texts in corpus(), queries in prop::collection::vec(prop::collection::vec(prop::sample::select(VOCAB), 1..6), 1..6), k in 1usize..6, extra_m in 0usize..10, extra_n in 0usize..30) {
        let norm = Normalizer::new(Default::default(), Default::default(), Default::default());
        let chunks: Vec<Chunk> = texts.into_iter().enumerate().map(|(i, t)| Chunk::from_original("s", i as u32, t, &norm)).collect();
        let e = HashedTrigramEmbedder::new(64);
        let vectors = embed_corpus(&e, &chunks, &mut EmbeddingCache::for_provider(&e), &EmbedOptions::default()).unwrap();
        let index = Bm25Index::build(&chunks, Bm25Params::default()).unwrap();
        let kb = KnowledgeBase::new(chunks).unwrap();
        let r = Retriever { kb: &kb, sparse: &index, vectors: &vectors, normalizer: &norm, embedder: &e, scorer: &OverlapScorer, retry: RetryPolicy::immediate(1) };
        let cfg = PipelineConfig { k, m: k + extra_m, n: k + extra_m + extra_n, ..PipelineConfig::default() };
        for q in queries {
            let got = r.retrieve(&q.join(" "), &cfg).unwrap();
            if got.sparse.is_empty() {
                prop_assert!(got.dense.is_empty() && got.rerank.is_empty());
                continue;
            }
            prop_assert!(got.sparse.len() <= cfg.n && got.dense.len() <= cfg.m && got.rerank.len() <= cfg.k);
            prop_assert_eq!(got.dense.len(), cfg.m.min(got.sparse.len()));
            prop_assert_eq!(got.rerank.len(), cfg.k.min(got.dense.len()));
            for stage in [&got.sparse, &got.dense, &got.rerank] {
                prop_assert!(is_ranked(stage));
            }
            let sparse: HashSet<_> = got.sparse.iter().map(|p| &p.chunk_id).collect();
            let dense: HashSet<_> = got.dense.iter().map(|p| &p.chunk_id).collect();
            prop_assert!(got.rerank.iter().all(|p| dense.contains(&p.chunk_id)));
            prop_assert!(dense.is_subset(&sparse));
            let again = rerank(&OverlapScorer, &kb, &got.query_light, &got.dense, cfg.k, &RerankOptions::default()).unwrap();
            prop_assert_eq!(&again, &got.rerank);
        }
    }
}
