use std::collections::{BTreeMap, BTreeSet};

use newsim_core::augment::{sample_bm25_pairs, title_query, AugmentSource, Bm25Index, Bm25Params, Exclusions};
use newsim_core::corpus::{filter_pairs, stratified_split, ArticlePair, Document, Split, SubScores};
use newsim_core::encoder::{DocumentEmbedding, EmbeddingProvider, PrecomputedStore};
use newsim_core::entities::{build_profile, EntityMention, EntityProfile};
use newsim_core::eval::{pearson, williams_test};
use newsim_core::fusion::{predict_pair, Activation, FeatureRow, FeatureSource, FusionMLP};
use proptest::prelude::*;

fn doc(id: &str, title: &str, body: &str) -> Document {
    Document {
        id: id.to_owned(),
        lang: "en".to_owned(),
        title: title.to_owned(),
        body: body.to_owned(),
        publish_date: None,
    }
}

fn pair(id: usize, langs: (&str, &str), raw: Option<f64>) -> ArticlePair {
    ArticlePair {
        pair_id: format!("{id}_{}", id + 100_000),
        doc_a: id.to_string(),
        doc_b: (id + 100_000).to_string(),
        langs: (langs.0.to_owned(), langs.1.to_owned()),
        overall_raw: raw,
        sub_scores: SubScores::default(),
        split: Split::Unlabeled,
    }
}

struct PredictFixture {
    provider: EmbeddingProvider,
    docs: BTreeMap<String, Document>,
    profiles: BTreeMap<String, EntityProfile>,
}

fn predict_fixture() -> PredictFixture {
    let mut store = PrecomputedStore::new(3);
    store.insert("a", DocumentEmbedding(vec![1.0, 2.0, 0.5])).unwrap();
    store.insert("a2", DocumentEmbedding(vec![1.0, 2.0, 0.5])).unwrap();
    store.insert("b", DocumentEmbedding(vec![-0.5, 1.0, 3.0])).unwrap();
    let docs: BTreeMap<String, Document> =
        ["a", "a2", "b"].iter().map(|id| (id.to_string(), doc(id, "t", "x"))).collect();
    let full = vec![
        EntityMention::new("Lyon", "GPE"),
        EntityMention::new("Acme", "ORG"),
        EntityMention::new("May 2", "DATE"),
        EntityMention::new("7", "CARDINAL"),
    ];
    let other = vec![EntityMention::new("Oslo", "GPE"), EntityMention::new("Zeta", "ORG")];
    let profiles = BTreeMap::from([
        ("a".to_owned(), build_profile(&full, None)),
        ("a2".to_owned(), build_profile(&full, None)),
        ("b".to_owned(), build_profile(&other, None)),
    ]);
    PredictFixture {
        provider: EmbeddingProvider::Precomputed(store),
        docs,
        profiles,
    }
}

#[test]
fn predict_pair_identical_documents_use_all_ones_row() {
    let f = predict_fixture();
    let source = FeatureSource {
        provider: &f.provider,
        docs: &f.docs,
        profiles: &f.profiles,
    };
    let mlp = FusionMLP::init(32, Activation::Relu, 3);
    let row = source.feature_row("a", "a2").unwrap();
    for x in row.to_array() {
        assert!((x - 1.0).abs() < 1e-12);
    }
    let expected = mlp.forward(&row);
    assert_eq!(predict_pair(&mlp, &source, "a", "a2").unwrap(), expected);
}

#[test]
fn predict_pair_disjoint_entities_and_range() {
    let f = predict_fixture();
    let source = FeatureSource {
        provider: &f.provider,
        docs: &f.docs,
        profiles: &f.profiles,
    };
    let row = source.feature_row("a", "b").unwrap();
    let [_, geo, org, date, qty] = row.to_array();
    assert_eq!([geo, org, date, qty], [0.0; 4]);
    for seed in 0..20 {
        let mlp = FusionMLP::init(32, Activation::Relu, seed);
        let p = predict_pair(&mlp, &source, "a", "b").unwrap();
        assert!(p > 0.0 && p < 1.0);
    }
    assert!(predict_pair(&FusionMLP::init(32, Activation::Relu, 0), &source, "a", "missing").is_err());
}

fn two_pass_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn labeled_pairs() -> impl Strategy<Value = Vec<ArticlePair>> {
    let langs = prop::sample::select(vec![("en", "en"), ("de", "en"), ("en", "de"), ("ar", "ar"), ("ar", "en")]);
    prop::collection::vec((langs, prop::option::weighted(0.9, 1.0f64..=4.0)), 1..80).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (l, raw))| pair(i, l, raw))
            .collect()
    })
}

proptest! {
    #[test]
    fn pearson_matches_two_pass(xy in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..60)) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let brute = two_pass_pearson(&x, &y);
        prop_assume!(brute.is_finite());
        prop_assert!((pearson(&x, &y).unwrap() - brute).abs() < 1e-10);
    }

    #[test]
    fn pearson_affine_invariant(
        xy in prop::collection::vec((-10f64..10.0, -10f64..10.0), 3..60),
        scale in 0.1f64..10.0,
        shift in -50f64..50.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        prop_assume!(two_pass_pearson(&x, &y).is_finite());
        let r = pearson(&x, &y).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
        prop_assert!((pearson(&xs, &y).unwrap() - r).abs() < 1e-12);
        prop_assert!((pearson(&x, &xs).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn williams_antisymmetric(r12 in -0.9f64..0.9, r13 in -0.9f64..0.9, r23 in 0.0f64..0.95, n in 10usize..2000) {
        let (Ok(a), Ok(b)) = (williams_test(r12, r13, r23, n), williams_test(r13, r12, r23, n)) else {
            return Ok(());
        };
        prop_assert_eq!(a.t, -b.t);
        prop_assert!((a.p_value + b.p_value - 1.0).abs() < 1e-10);
        prop_assert!((0.0..=1.0).contains(&a.p_value));
        prop_assert_eq!(a.df, n - 3);
    }

    #[test]
    fn split_is_deterministic_disjoint_and_exhaustive(pairs in labeled_pairs(), seed in 0u64..1000) {
        let held = BTreeSet::from(["ar".to_owned()]);
        let s1 = stratified_split(&pairs, 0.8, &held, seed).unwrap();
        let s2 = stratified_split(&pairs, 0.8, &held, seed).unwrap();
        prop_assert_eq!(&s1, &s2);
        prop_assert!(s1.train.is_disjoint(&s1.dev));
        let labeled: BTreeSet<String> =
            pairs.iter().filter(|p| p.overall_raw.is_some()).map(|p| p.pair_id.clone()).collect();
        let union: BTreeSet<String> = s1.train.union(&s1.dev).cloned().collect();
        prop_assert_eq!(union, labeled);
        for p in pairs.iter().filter(|p| p.langs.0 == "ar" || p.langs.1 == "ar") {
            prop_assert!(!s1.train.contains(&p.pair_id));
        }
    }

    #[test]
    fn filter_is_idempotent_subset(lens in prop::collection::vec((0usize..15, 0usize..15), 1..30), min_tokens in 0usize..12) {
        let mut docs = BTreeMap::new();
        let mut pairs = Vec::new();
        for (i, (la, lb)) in lens.into_iter().enumerate() {
            let a = pair(i, ("en", "en"), Some(2.0));
            docs.insert(a.doc_a.clone(), doc(&a.doc_a, "", &"w ".repeat(la)));
            docs.insert(a.doc_b.clone(), doc(&a.doc_b, "t", &"w ".repeat(lb)));
            pairs.push(a);
        }
        let once = filter_pairs(&pairs, &docs, min_tokens);
        prop_assert_eq!(&filter_pairs(&once, &docs, min_tokens), &once);
        prop_assert!(once.iter().all(|p| pairs.contains(p)));
    }

    #[test]
    fn bm25_rankings_sorted_with_id_tiebreak(
        bodies in prop::collection::vec(prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..8), 2..12),
        k in 1usize..12,
    ) {
        let docs: Vec<Document> = bodies
            .iter()
            .enumerate()
            .map(|(i, words)| doc(&format!("d{i:02}"), &words[0..1].join(" "), &words.join(" ")))
            .collect();
        let index = Bm25Index::build(&docs, Bm25Params::default()).unwrap();
        let queries: Vec<(String, Vec<String>)> = docs.iter().map(|d| (d.id.clone(), title_query(d))).collect();
        let out = sample_bm25_pairs(&index, &queries, k, &Exclusions::new(), AugmentSource::Bm25Intra);
        for (qid, _) in &queries {
            let ranked: Vec<_> = out.iter().filter(|c| &c.doc_a == qid).collect();
            prop_assert_eq!(ranked.len(), k.min(docs.len() - 1));
            for w in ranked.windows(2) {
                let (s0, s1) = (w[0].score.unwrap(), w[1].score.unwrap());
                prop_assert!(s0 > s1 || (s0 == s1 && w[0].doc_b < w[1].doc_b));
            }
        }
    }

    #[test]
    fn fusion_output_continuous_in_inputs(x in prop::array::uniform5(-1f64..1.0), seed in 0u64..50) {
        let mlp = FusionMLP::init(32, Activation::Relu, seed);
        let row = FeatureRow::from_array(x);
        let mut nudged = x;
        nudged[0] += 1e-9;
        prop_assert!((mlp.forward(&row) - mlp.forward(&FeatureRow::from_array(nudged))).abs() < 1e-7);
    }
}
