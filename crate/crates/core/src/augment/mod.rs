//! Synthetic training pairs for the semi-supervised loop: BM25 title-query
//! retrieval, random pairing, translation plans, and pseudo-labeling with a
//! frozen model.

mod bm25;

pub use bm25::{Bm25Index, Bm25Params};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ArticlePair, Document, LangPair, NormalizedLabel};
use crate::error::{Error, Result};
use crate::text;

/// Order-independent pair of document ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UnorderedPair(String, String);

impl UnorderedPair {
    pub fn new(a: &str, b: &str) -> Self {
        if a <= b {
            UnorderedPair(a.to_owned(), b.to_owned())
        } else {
            UnorderedPair(b.to_owned(), a.to_owned())
        }
    }
}

pub type Exclusions = HashSet<UnorderedPair>;

/// Unordered id pairs of the given article pairs.
pub fn exclusions_from<'a>(pairs: impl IntoIterator<Item = &'a ArticlePair>) -> Exclusions {
    pairs.into_iter().map(|p| UnorderedPair::new(&p.doc_a, &p.doc_b)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentSource {
    Bm25Intra,
    Bm25External,
    Translated,
    Random,
}

impl AugmentSource {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentSource::Bm25Intra => "bm25_intra",
            AugmentSource::Bm25External => "bm25_external",
            AugmentSource::Translated => "translated",
            AugmentSource::Random => "random",
        }
    }
}

impl fmt::Display for AugmentSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bm25_intra" => Ok(AugmentSource::Bm25Intra),
            "bm25_external" => Ok(AugmentSource::Bm25External),
            "translated" => Ok(AugmentSource::Translated),
            "random" => Ok(AugmentSource::Random),
            other => Err(format!("unknown augmentation source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub doc_a: String,
    pub doc_b: String,
    pub source: AugmentSource,
    /// Retrieval score for BM25 candidates.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPair {
    pub doc_a: String,
    pub doc_b: String,
    pub pseudo_label: NormalizedLabel,
    pub source: AugmentSource,
}

/// Lowercased title tokens, the retrieval query for a document.
pub fn title_query(doc: &Document) -> Vec<String> {
    text::tokenize_lower(&doc.title)
}

/// For each `(query doc, terms)`, the `k` highest-scoring indexed documents
/// other than the query doc and not forming an excluded pair. Ties break by
/// ascending doc id; documents scoring zero are eligible once positive
/// matches run out.
pub fn sample_bm25_pairs(
    index: &Bm25Index,
    queries: &[(String, Vec<String>)],
    k: usize,
    exclusions: &Exclusions,
    source: AugmentSource,
) -> Vec<CandidatePair> {
    let ids = index.ids();
    let mut by_id: Vec<u32> = (0..ids.len() as u32).collect();
    by_id.sort_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));

    let mut out = Vec::new();
    for (query_id, terms) in queries {
        let scores = index.score_all(terms);
        let mut ranked: Vec<u32> = by_id
            .iter()
            .copied()
            .filter(|&d| {
                let id = &ids[d as usize];
                id != query_id && !exclusions.contains(&UnorderedPair::new(query_id, id))
            })
            .collect();
        // stable sort keeps the id order among equal scores
        ranked.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]));
        out.extend(ranked.into_iter().take(k).map(|d| CandidatePair {
            doc_a: query_id.clone(),
            doc_b: ids[d as usize].clone(),
            source,
            score: Some(scores[d as usize]),
        }));
    }
    out
}

/// Uniform sample of `count` distinct unordered pairs over `doc_ids`, without
/// replacement and skipping excluded pairs.
pub fn sample_random_pairs(
    doc_ids: &[String],
    count: usize,
    exclusions: &Exclusions,
    seed: u64,
) -> Result<Vec<CandidatePair>> {
    let mut ids: Vec<&str> = doc_ids.iter().map(String::as_str).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::domain("random sampling", "need at least two documents"));
    }
    let n = ids.len();
    let total = n * (n - 1) / 2;
    let id_set: HashSet<&str> = ids.iter().copied().collect();
    let excluded = exclusions
        .iter()
        .filter(|p| p.0 != p.1 && id_set.contains(p.0.as_str()) && id_set.contains(p.1.as_str()))
        .count();
    let available = total - excluded;
    if count > available {
        return Err(Error::domain(
            "random sample size",
            format!("{count} requested, {available} pairs available"),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let make = |i: usize, j: usize| CandidatePair {
        doc_a: ids[i].to_owned(),
        doc_b: ids[j].to_owned(),
        source: AugmentSource::Random,
        score: None,
    };
    let allowed = |i: usize, j: usize| !exclusions.contains(&UnorderedPair::new(ids[i], ids[j]));

    if count * 2 >= available {
        let all = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| allowed(i, j));
        let mut chosen = all.choose_multiple(&mut rng, count);
        chosen.shuffle(&mut rng);
        return Ok(chosen.into_iter().map(|(i, j)| make(i, j)).collect());
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let (i, j) = (i.min(j), i.max(j));
        if allowed(i, j) && seen.insert((i, j)) {
            out.push(make(i, j));
        }
    }
    Ok(out)
}

/// Pseudo-labels candidates with a frozen model. Repeated unordered pairs are
/// labeled once; candidates the model cannot resolve are skipped with a
/// warning. Labels are clipped to `[0, 1]`.
pub fn self_label<F>(model: F, candidates: &[CandidatePair]) -> Vec<AugmentedPair>
where
    F: Fn(&str, &str) -> Result<f64> + Sync,
{
    let mut seen = HashSet::new();
    let unique: Vec<&CandidatePair> = candidates
        .iter()
        .filter(|c| seen.insert(UnorderedPair::new(&c.doc_a, &c.doc_b)))
        .collect();
    let labeled: Vec<Option<AugmentedPair>> = unique
        .par_iter()
        .map(|c| match model(&c.doc_a, &c.doc_b) {
            Ok(score) => Some(AugmentedPair {
                doc_a: c.doc_a.clone(),
                doc_b: c.doc_b.clone(),
                pseudo_label: NormalizedLabel::clipped(score),
                source: c.source,
            }),
            Err(e) => {
                log::warn!("skipping candidate {}/{}: {e}", c.doc_a, c.doc_b);
                None
            }
        })
        .collect();
    labeled.into_iter().flatten().collect()
}

/// Writes `doc_a,doc_b,source,score`; the score is empty for non-BM25 rows.
pub fn write_candidates(path: &Path, candidates: &[CandidatePair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in candidates {
        w.serialize(c)?;
    }
    if candidates.is_empty() {
        w.write_record(["doc_a", "doc_b", "source", "score"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_candidates(path: &Path) -> Result<Vec<CandidatePair>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_augmented(path: &Path, pairs: &[AugmentedPair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["doc_a", "doc_b", "pseudo_label", "source"])?;
    for p in pairs {
        w.write_record([
            p.doc_a.as_str(),
            p.doc_b.as_str(),
            &p.pseudo_label.value().to_string(),
            p.source.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_augmented(path: &Path) -> Result<Vec<AugmentedPair>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |d: String| Error::format("augmented pairs", path, format!("row {}: {d}", i + 1));
        if record.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", record.len())));
        }
        let label: f64 = record[2].parse().map_err(|_| bad(format!("bad label `{}`", &record[2])))?;
        out.push(AugmentedPair {
            doc_a: record[0].to_owned(),
            doc_b: record[1].to_owned(),
            pseudo_label: NormalizedLabel::new(label).map_err(|e| bad(e.to_string()))?,
            source: record[3].parse().map_err(bad)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanStatus {
    Planned,
    Fulfilled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationPlanEntry {
    pub source_pair_id: String,
    pub target_lang1: String,
    pub target_lang2: String,
    pub status: PlanStatus,
}

/// An English–English pair labeled in `[0.5, 1]` after normalization.
pub fn eligible_for_translation(pair: &ArticlePair) -> bool {
    pair.lang_pair() == LangPair::new("en", "en")
        && pair.label().is_some_and(|l| (0.5..=1.0).contains(&l.value()))
}

/// Draws `per_source` target language pairs, with replacement and
/// proportional to `target_distribution`, for every eligible source pair.
pub fn make_translation_plan(
    pairs: &[ArticlePair],
    target_distribution: &BTreeMap<(String, String), f64>,
    per_source: usize,
    seed: u64,
) -> Result<Vec<TranslationPlanEntry>> {
    let targets: Vec<&(String, String)> = target_distribution.keys().collect();
    let weights: Vec<f64> = target_distribution.values().copied().collect();
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::domain("target distribution", "weights must be nonnegative with a positive sum"));
    }
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::domain("target distribution", e.to_string()))?;
    let eligible: Vec<&ArticlePair> = pairs.iter().filter(|p| eligible_for_translation(p)).collect();
    if eligible.is_empty() {
        log::warn!("no English pair with normalized label in [0.5, 1]; translation plan is empty");
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = Vec::with_capacity(eligible.len() * per_source);
    for pair in eligible {
        for _ in 0..per_source {
            let (l1, l2) = targets[dist.sample(&mut rng)];
            plan.push(TranslationPlanEntry {
                source_pair_id: pair.pair_id.clone(),
                target_lang1: l1.clone(),
                target_lang2: l2.clone(),
                status: PlanStatus::Planned,
            });
        }
    }
    Ok(plan)
}

pub fn write_plan(path: &Path, plan: &[TranslationPlanEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["source_pair_id", "target_lang1", "target_lang2", "status"])?;
    for e in plan {
        w.serialize((&e.source_pair_id, &e.target_lang1, &e.target_lang2, e.status))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_plan(path: &Path) -> Result<Vec<TranslationPlanEntry>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Id under which a translation of `doc_id` into `lang` is stored.
pub fn translated_doc_id(doc_id: &str, source_lang: &str, lang: &str) -> String {
    if source_lang == lang {
        doc_id.to_owned()
    } else {
        format!("{doc_id}-{lang}")
    }
}

/// Candidates for every fulfilled plan entry whose translated documents are
/// present in `docs`.
pub fn translated_candidates(
    plan: &[TranslationPlanEntry],
    pairs: &[ArticlePair],
    docs: &BTreeMap<String, Document>,
) -> Vec<CandidatePair> {
    let by_id: BTreeMap<&str, &ArticlePair> = pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    plan.iter()
        .filter(|e| e.status == PlanStatus::Fulfilled)
        .filter_map(|e| {
            let pair = by_id.get(e.source_pair_id.as_str())?;
            let a = translated_doc_id(&pair.doc_a, &pair.langs.0, &e.target_lang1);
            let b = translated_doc_id(&pair.doc_b, &pair.langs.1, &e.target_lang2);
            if a == b || !docs.contains_key(&a) || !docs.contains_key(&b) {
                log::warn!("plan entry for {} has no translated documents yet", e.source_pair_id);
                return None;
            }
            Some(CandidatePair {
                doc_a: a,
                doc_b: b,
                source: AugmentSource::Translated,
                score: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub counts: Vec<usize>,
    /// Shannon entropy of the histogram divided by `ln(bins)`.
    pub normalized_entropy: f64,
}

/// Histogram of labels over equal-width bins of `[0, 1]`; 1.0 lands in the
/// last bin.
pub fn distribution_report(labels: &[f64], bins: usize) -> Result<DistributionReport> {
    if bins == 0 {
        return Err(Error::domain("bins", "must be positive"));
    }
    let mut counts = vec![0usize; bins];
    for &v in labels {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        let bin = ((v * bins as f64).floor() as usize).min(bins - 1);
        counts[bin] += 1;
    }
    let total: usize = counts.iter().sum();
    let normalized_entropy = if total == 0 || bins == 1 {
        0.0
    } else {
        let h: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total as f64;
                -p * p.ln()
            })
            .sum();
        h / (bins as f64).ln()
    };
    Ok(DistributionReport {
        counts,
        normalized_entropy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, SubScores};

    fn doc(id: &str, title: &str, body: &str) -> Document {
        Document {
            id: id.into(),
            lang: "en".into(),
            title: title.into(),
            body: body.into(),
            publish_date: None,
        }
    }

    fn pair(a: &str, b: &str, langs: (&str, &str), raw: f64) -> ArticlePair {
        ArticlePair {
            pair_id: format!("{a}_{b}"),
            doc_a: a.into(),
            doc_b: b.into(),
            langs: (langs.0.into(), langs.1.into()),
            overall_raw: Some(raw),
            sub_scores: SubScores::default(),
            split: Split::Train,
        }
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("d{i:02}")).collect()
    }

    #[test]
    fn bm25_sampling_rules() {
        let docs = [
            doc("a", "storm coast", "storm coast flood"),
            doc("b", "", "storm coast"),
            doc("c", "", "flood"),
            doc("d", "", "unrelated"),
        ];
        let index = Bm25Index::build(&docs, Bm25Params::default()).unwrap();
        let queries = vec![("a".to_string(), title_query(&docs[0]))];

        let all = sample_bm25_pairs(&index, &queries, 10, &Exclusions::new(), AugmentSource::Bm25Intra);
        let got: Vec<&str> = all.iter().map(|c| c.doc_b.as_str()).collect();
        assert_eq!(got, vec!["b", "c", "d"]);

        let ex: Exclusions = [UnorderedPair::new("b", "a")].into();
        let top = sample_bm25_pairs(&index, &queries, 1, &ex, AugmentSource::Bm25Intra);
        assert_eq!(top.len(), 1);
        assert_ne!(top[0].doc_b, "b");
        assert_ne!(top[0].doc_b, "a");
    }

    #[test]
    fn random_sampling() {
        let two = ids(2);
        let got = sample_random_pairs(&two, 1, &Exclusions::new(), 0).unwrap();
        assert_eq!((got[0].doc_a.as_str(), got[0].doc_b.as_str()), ("d00", "d01"));
        assert!(sample_random_pairs(&two, 2, &Exclusions::new(), 0).is_err());
        assert!(sample_random_pairs(&ids(1), 0, &Exclusions::new(), 0).is_err());

        let six = ids(6);
        let ex: Exclusions = [UnorderedPair::new("d00", "d01"), UnorderedPair::new("d03", "d02")].into();
        let all = sample_random_pairs(&six, 13, &ex, 4).unwrap();
        let set: HashSet<_> = all.iter().map(|c| UnorderedPair::new(&c.doc_a, &c.doc_b)).collect();
        assert_eq!(set.len(), 13);
        assert!(set.is_disjoint(&ex));
        assert!(sample_random_pairs(&six, 14, &ex, 4).is_err());

        let many = ids(200);
        let a = sample_random_pairs(&many, 50, &ex, 9).unwrap();
        assert_eq!(a, sample_random_pairs(&many, 50, &ex, 9).unwrap());
        assert_ne!(a, sample_random_pairs(&many, 50, &ex, 10).unwrap());
    }

    #[test]
    fn self_labeling() {
        let cands: Vec<CandidatePair> = [("a", "b"), ("b", "a"), ("a", "c"), ("x", "c")]
            .iter()
            .map(|(a, b)| CandidatePair {
                doc_a: a.to_string(),
                doc_b: b.to_string(),
                source: AugmentSource::Random,
                score: None,
            })
            .collect();
        let half = self_label(|_: &str, _: &str| Ok(0.5), &cands);
        assert_eq!(half.len(), 3);
        assert!(half.iter().all(|p| p.pseudo_label.value() == 0.5));

        let wild = self_label(
            |a: &str, _: &str| match a {
                "a" => Ok(7.0),
                "x" => Err(Error::UnknownDocument("x".into())),
                _ => Ok(-2.0),
            },
            &cands,
        );
        assert_eq!(wild.len(), 2);
        assert!(wild.iter().all(|p| (0.0..=1.0).contains(&p.pseudo_label.value())));
    }

    #[test]
    fn translation_plans() {
        let pairs = vec![
            pair("a", "b", ("en", "en"), 1.0),
            pair("c", "d", ("en", "en"), 2.5),
            pair("e", "f", ("en", "en"), 1.5),
            pair("g", "h", ("en", "en"), 2.8), // normalized 0.4
            pair("i", "j", ("de", "en"), 1.0),
        ];
        let single: BTreeMap<_, _> = [(("de".to_string(), "fr".to_string()), 1.0)].into();
        let plan = make_translation_plan(&pairs, &single, 5, 3).unwrap();
        assert_eq!(plan.len(), 15);
        assert!(plan.iter().all(|e| e.target_lang1 == "de" && e.target_lang2 == "fr"));
        assert!(!plan.iter().any(|e| e.source_pair_id == "g_h" || e.source_pair_id == "i_j"));

        let zero: BTreeMap<_, _> = [(("de".to_string(), "fr".to_string()), 0.0)].into();
        assert!(make_translation_plan(&pairs, &zero, 5, 3).is_err());
        assert!(make_translation_plan(&pairs[3..], &single, 5, 3).unwrap().is_empty());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.csv");
        write_plan(&path, &plan[..2]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap().lines().next().unwrap(),
            "source_pair_id,target_lang1,target_lang2,status"
        );
        assert_eq!(read_plan(&path).unwrap(), plan[..2]);
    }

    #[test]
    fn translated_candidate_ids() {
        let pairs = vec![pair("a", "b", ("en", "en"), 1.0)];
        let mut docs = BTreeMap::new();
        for id in ["a", "b", "a-de", "b-fr"] {
            docs.insert(id.to_string(), doc(id, "", "x"));
        }
        let mut plan = vec![
            TranslationPlanEntry {
                source_pair_id: "a_b".into(),
                target_lang1: "de".into(),
                target_lang2: "fr".into(),
                status: PlanStatus::Fulfilled,
            },
            TranslationPlanEntry {
                source_pair_id: "a_b".into(),
                target_lang1: "en".into(),
                target_lang2: "fr".into(),
                status: PlanStatus::Planned,
            },
        ];
        let c = translated_candidates(&plan, &pairs, &docs);
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].doc_a.as_str(), c[0].doc_b.as_str()), ("a-de", "b-fr"));
        plan[1].status = PlanStatus::Fulfilled;
        assert_eq!(translated_candidates(&plan, &pairs, &docs)[1].doc_a, "a");
    }

    #[test]
    fn histogram_and_entropy() {
        let r = distribution_report(&[0.1, 0.1, 0.9], 5).unwrap();
        assert_eq!(r.counts, vec![2, 0, 0, 0, 1]);
        assert_eq!(distribution_report(&[0.3; 10], 5).unwrap().normalized_entropy, 0.0);
        let uniform = distribution_report(&[0.1, 0.3, 0.5, 0.7, 1.0], 5).unwrap();
        assert_eq!(uniform.counts, vec![1; 5]);
        assert!((uniform.normalized_entropy - 1.0).abs() < 1e-12);
        assert_eq!(distribution_report(&[], 5).unwrap().normalized_entropy, 0.0);
    }

    #[test]
    fn augmented_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aug.csv");
        let pairs = vec![AugmentedPair {
            doc_a: "a".into(),
            doc_b: "b".into(),
            pseudo_label: NormalizedLabel::new(0.25).unwrap(),
            source: AugmentSource::Bm25External,
        }];
        write_augmented(&path, &pairs).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "doc_a,doc_b,pseudo_label,source\na,b,0.25,bm25_external\n"
        );
        assert_eq!(read_augmented(&path).unwrap(), pairs);
    }

    #[test]
    fn candidates_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cand.csv");
        let cands = vec![
            CandidatePair {
                doc_a: "a".into(),
                doc_b: "b".into(),
                source: AugmentSource::Bm25Intra,
                score: Some(1.5),
            },
            CandidatePair {
                doc_a: "c".into(),
                doc_b: "a".into(),
                source: AugmentSource::Random,
                score: None,
            },
        ];
        write_candidates(&path, &cands).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "doc_a,doc_b,source,score\na,b,bm25_intra,1.5\nc,a,random,\n"
        );
        assert_eq!(read_candidates(&path).unwrap(), cands);
        write_candidates(&path, &[]).unwrap();
        assert!(read_candidates(&path).unwrap().is_empty());
    }
}
